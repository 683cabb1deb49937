//! Scenario library: scalar linear problems with closed-form solutions and a
//! one-dimensional heat equation discretized by finite differences.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::monotone::{verify_quasi_pair, EvolutionProblem, Impulse, MildSolver, QuasiPairReport};
use crate::operators::{FractionalOrder, Generator};
use crate::quadrature::{PcTrajectory, TimeGrid};
use crate::specfun::{mittag_leffler, rgamma, SeriesControl};

/// x' = -a x + c with constant jumps J_k at t_k, in Hilfer form.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarLinearScenario {
    pub a: f64,
    pub c: f64,
    pub x0: f64,
    pub impulses: Vec<(f64, f64)>,
    pub order: FractionalOrder,
    pub horizon: f64,
}

impl ScalarLinearScenario {
    pub fn new(a: f64, c: f64, x0: f64, order: FractionalOrder, horizon: f64) -> Self {
        Self {
            a,
            c,
            x0,
            impulses: Vec::new(),
            order,
            horizon,
        }
    }

    pub fn with_impulse(mut self, t: f64, jump: f64) -> Self {
        self.impulses.push((t, jump));
        self
    }

    fn validate(&self) -> Result<()> {
        if !(self.horizon > 0.0) {
            return Err(Error::Config(format!(
                "T: must be positive, got {}",
                self.horizon
            )));
        }
        let mut prev = 0.0;
        for &(t, _) in &self.impulses {
            if !(t > prev && t < self.horizon) {
                return Err(Error::Config(format!(
                    "impulses: times must increase strictly inside (0, T); offending t = {t}"
                )));
            }
            prev = t;
        }
        Ok(())
    }

    pub fn problem(&self) -> Result<EvolutionProblem> {
        self.validate()?;
        let c = self.c;
        Ok(EvolutionProblem {
            gen: Generator::scalar(self.a)?,
            order: self.order,
            horizon: self.horizon,
            x0: DVector::from_element(1, self.x0),
            g: (c != 0.0).then(|| Arc::new(move |_: f64, _: &[f64], _: &[f64]| vec![c]) as _),
            impulses: self
                .impulses
                .iter()
                .map(|&(time, j)| Impulse {
                    time,
                    phi: Arc::new(move |_: &[f64], _: &[f64]| vec![j]),
                })
                .collect(),
        })
    }
}

/// τ^{λ-1} E_{μ,λ}(-a τ^μ), the response to a unit weighted datum.
fn relaxation(sc: &ScalarLinearScenario, tau: f64, ctl: &SeriesControl) -> Result<f64> {
    let (mu, lam) = (sc.order.mu(), sc.order.lambda());
    Ok(tau.powf(lam - 1.0) * mittag_leffler(mu, lam, -sc.a * tau.powf(mu), ctl)?)
}

/// Closed-form mild solution of the scalar scenario at t ∈ (0, T], t ≠ t_k.
pub fn scalar_oracle(sc: &ScalarLinearScenario, t: f64) -> Result<f64> {
    if !(t > 0.0 && t <= sc.horizon) {
        return Err(Error::InvalidArgument {
            name: "t",
            value: t,
            reason: "must lie in (0, T]",
        });
    }
    if sc.impulses.iter().any(|&(tk, _)| tk == t) {
        return Err(Error::InvalidArgument {
            name: "t",
            value: t,
            reason: "impulse time; use scalar_limits for the one-sided values",
        });
    }
    let ctl = SeriesControl::default();
    let mu = sc.order.mu();
    let mut x = relaxation(sc, t, &ctl)? * sc.x0;
    for &(tk, j) in sc.impulses.iter().filter(|(tk, _)| *tk < t) {
        x += relaxation(sc, t - tk, &ctl)? * j;
    }
    if sc.c != 0.0 {
        x += sc.c * t.powf(mu) * mittag_leffler(mu, mu + 1.0, -sc.a * t.powf(mu), &ctl)?;
    }
    Ok(x)
}

/// Weighted left and right limits at impulse k (1-based):
/// ((t_k - t_{k-1})^{1-λ} x(t_k), lim_{t→t_k⁺} (t - t_k)^{1-λ} x(t)).
pub fn scalar_limits(sc: &ScalarLinearScenario, k: usize) -> Result<(f64, f64)> {
    if k == 0 || k > sc.impulses.len() {
        return Err(Error::InvalidArgument {
            name: "k",
            value: k as f64,
            reason: "impulse index out of range",
        });
    }
    let tk = sc.impulses[k - 1].0;
    let prev = if k == 1 { 0.0 } else { sc.impulses[k - 2].0 };
    let w = sc.order.weight_exponent();
    let left_raw = {
        // the closed form is continuous from the left at t_k
        let before = ScalarLinearScenario {
            impulses: sc.impulses[..k - 1].to_vec(),
            ..sc.clone()
        };
        scalar_oracle(&before, tk)?
    };
    let left = (tk - prev).powf(w) * left_raw;
    let jump = sc.impulses[k - 1].1 * rgamma(sc.order.lambda());
    let right = if w == 0.0 { left + jump } else { jump };
    Ok((left, right))
}

/// The closed-form solution sampled on a grid as a weighted trajectory.
pub fn scalar_oracle_trajectory(
    sc: &ScalarLinearScenario,
    grid: Arc<TimeGrid>,
) -> Result<PcTrajectory> {
    let dim = 1;
    let mut weighted = Vec::with_capacity(grid.len());
    weighted.push(sc.x0 * rgamma(sc.order.lambda()));
    let idx = grid.impulse_indices().to_vec();
    for n in 1..grid.len() {
        let t = grid.nodes()[n];
        let v = match idx.iter().position(|&i| i == n) {
            Some(k) => scalar_limits(sc, k + 1)?.0,
            None => grid.weight(n) * scalar_oracle(sc, t)?,
        };
        weighted.push(v);
    }
    let jumps = (1..=idx.len())
        .map(|k| {
            let (left, right) = scalar_limits(sc, k)?;
            Ok(crate::quadrature::JumpRecord {
                time: sc.impulses[k - 1].0,
                left: vec![left],
                right: vec![right],
            })
        })
        .collect::<Result<Vec<_>>>()?;
    PcTrajectory::from_weighted(grid, dim, weighted, jumps)
}

/// Initial profile of the heat scenario on the interior nodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum X0Profile {
    /// amplitude · sin(π w / length)
    Sine {
        amplitude: f64,
    },
    Constant {
        value: f64,
    },
    Values {
        values: Vec<f64>,
    },
}

/// φ_k(y, z) = kappa · y⁺/(1 + y⁺) + constant, componentwise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatImpulse {
    pub time: f64,
    #[serde(default)]
    pub kappa: f64,
    #[serde(default)]
    pub constant: f64,
}

/// Heat equation on (0, length) with Dirichlet boundary, reaction term
/// g(t, y, z) = f + alpha·y - beta·z and saturating impulses.
#[derive(Debug, Clone, PartialEq)]
pub struct Heat1DScenario {
    pub n_interior: usize,
    pub length: f64,
    pub order: FractionalOrder,
    pub horizon: f64,
    pub f: f64,
    pub alpha: f64,
    pub beta: f64,
    pub impulses: Vec<HeatImpulse>,
    pub x0: X0Profile,
}

/// (1/h²) tridiag(-1, 2, -1) with h = length/(n + 1).
pub fn laplacian_1d(n: usize, length: f64) -> DMatrix<f64> {
    let h = length / (n + 1) as f64;
    let s = 1.0 / (h * h);
    DMatrix::from_fn(n, n, |i, j| match i.abs_diff(j) {
        0 => 2.0 * s,
        1 => -s,
        _ => 0.0,
    })
}

impl Heat1DScenario {
    pub fn x0_values(&self) -> Result<Vec<f64>> {
        let n = self.n_interior;
        let h = self.length / (n + 1) as f64;
        let v = match &self.x0 {
            X0Profile::Sine { amplitude } => (1..=n)
                .map(|i| amplitude * (std::f64::consts::PI * i as f64 * h / self.length).sin())
                .collect(),
            X0Profile::Constant { value } => vec![*value; n],
            X0Profile::Values { values } => {
                if values.len() != n {
                    return Err(Error::Config(format!(
                        "x0.values: expected {n} entries, found {}",
                        values.len()
                    )));
                }
                values.clone()
            }
        };
        Ok(v)
    }
}

pub fn build_heat1d(sc: &Heat1DScenario) -> Result<EvolutionProblem> {
    if sc.n_interior < 3 {
        return Err(Error::Config(format!(
            "n_interior: need at least 3 interior nodes, got {}",
            sc.n_interior
        )));
    }
    if !(sc.length > 0.0) {
        return Err(Error::Config(format!(
            "length: must be positive, got {}",
            sc.length
        )));
    }
    if !(sc.horizon > 0.0) {
        return Err(Error::Config(format!(
            "T: must be positive, got {}",
            sc.horizon
        )));
    }
    if !(sc.beta >= 0.0) {
        return Err(Error::Config(format!(
            "beta: must be nonnegative so g is nonincreasing in z, got {}",
            sc.beta
        )));
    }
    let x0 = sc.x0_values()?;
    if let Some(v) = x0.iter().find(|v| !(**v >= 0.0)) {
        return Err(Error::Config(format!("x0: must be nonnegative, found {v}")));
    }
    let mut prev = 0.0;
    for imp in &sc.impulses {
        if !(imp.time > prev && imp.time < sc.horizon) {
            return Err(Error::Config(format!(
                "impulses: times must increase strictly inside (0, T); offending t = {}",
                imp.time
            )));
        }
        if !(imp.kappa >= 0.0) {
            return Err(Error::Config(format!(
                "impulses.kappa: must be nonnegative so the jump is nondecreasing, got {}",
                imp.kappa
            )));
        }
        prev = imp.time;
    }
    let (f, alpha, beta) = (sc.f, sc.alpha, sc.beta);
    Ok(EvolutionProblem {
        gen: Generator::new(laplacian_1d(sc.n_interior, sc.length), true)?,
        order: sc.order,
        horizon: sc.horizon,
        x0: DVector::from_vec(x0),
        g: Some(Arc::new(move |_: f64, y: &[f64], z: &[f64]| {
            y.iter()
                .zip(z)
                .map(|(y, z)| f + alpha * y - beta * z)
                .collect()
        })),
        impulses: sc
            .impulses
            .iter()
            .map(|imp| {
                let (kappa, constant) = (imp.kappa, imp.constant);
                Impulse {
                    time: imp.time,
                    phi: Arc::new(move |y: &[f64], _: &[f64]| {
                        y.iter()
                            .map(|v| {
                                let p = v.max(0.0);
                                kappa * p / (1.0 + p) + constant
                            })
                            .collect()
                    }),
                }
            })
            .collect(),
    })
}

#[derive(Debug, Clone)]
pub struct QuasiPair {
    pub y0: PcTrajectory,
    pub z0: PcTrajectory,
    pub report: QuasiPairReport,
}

/// y0 ≡ 0 and z0 with weighted value bound_scale on every subinterval,
/// i.e. z0(t) = bound_scale (t - t_k)^{λ-1}, checked by verify_quasi_pair.
/// A failed check is returned in the report, not as an error.
pub fn default_quasi_pair(solver: &MildSolver, bound_scale: f64) -> Result<QuasiPair> {
    if !(bound_scale > 0.0) {
        return Err(Error::InvalidArgument {
            name: "bound_scale",
            value: bound_scale,
            reason: "must be positive",
        });
    }
    let grid = solver.grid().clone();
    let dim = solver.problem().dim();
    let y0 = PcTrajectory::zeros(grid.clone(), dim);
    let z0 = PcTrajectory::constant_weighted(grid, &vec![bound_scale; dim]);
    let report = verify_quasi_pair(solver, &y0, &z0)?;
    Ok(QuasiPair { y0, z0, report })
}

/// Doubles bound_scale from `start` until the default pair verifies.
pub fn find_quasi_pair(
    solver: &MildSolver,
    start: f64,
    max_doublings: usize,
) -> Result<(QuasiPair, f64)> {
    let mut s = start;
    for _ in 0..=max_doublings {
        let pair = default_quasi_pair(solver, s)?;
        if pair.report.pass {
            return Ok((pair, s));
        }
        s *= 2.0;
    }
    Err(Error::Config(format!(
        "no verified quasi pair with bound scale up to {}",
        s / 2.0
    )))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::monotone::MonotoneConfig;

    #[test]
    fn laplacian_small_case() {
        let a = laplacian_1d(3, 1.0);
        let want =
            DMatrix::from_row_slice(3, 3, &[2.0, -1.0, 0.0, -1.0, 2.0, -1.0, 0.0, -1.0, 2.0])
                * 16.0;
        assert_eq!(a, want);
    }

    #[test]
    fn laplacian_spectrum() {
        let n = 10;
        let h = 1.0 / (n + 1) as f64;
        let g = Generator::new(laplacian_1d(n, 1.0), true).unwrap();
        let ev = g.eigenvalues().unwrap();
        for (j, e) in ev.iter().enumerate() {
            let want = 2.0 / (h * h) * (1.0 - (std::f64::consts::PI * (j + 1) as f64 * h).cos());
            assert!((e - want).abs() < 1e-9 * want);
        }
        assert!(ev[0] > 0.0);
    }

    #[test]
    fn heat_rejects_bad_input() {
        let base = Heat1DScenario {
            n_interior: 2,
            length: 1.0,
            order: FractionalOrder::new(0.5, 0.5).unwrap(),
            horizon: 1.0,
            f: 1.0,
            alpha: 0.0,
            beta: 0.0,
            impulses: vec![],
            x0: X0Profile::Constant { value: 1.0 },
        };
        assert!(build_heat1d(&base).is_err());
        let neg = Heat1DScenario {
            n_interior: 4,
            x0: X0Profile::Constant { value: -1.0 },
            ..base.clone()
        };
        assert!(build_heat1d(&neg).is_err());
        let ok = Heat1DScenario {
            n_interior: 4,
            ..base
        };
        assert!(build_heat1d(&ok).is_ok());
    }

    #[test]
    fn oracle_reductions() {
        let o = FractionalOrder::new(0.4, 0.3).unwrap();
        let sc = ScalarLinearScenario::new(0.0, 0.0, 2.0, o, 1.0);
        let lam = o.lambda();
        let want = 2.0 * 0.5_f64.powf(lam - 1.0) * rgamma(lam);
        assert!((scalar_oracle(&sc, 0.5).unwrap() - want).abs() < 1e-14);
        let sc = sc.with_impulse(0.3, 1.0);
        assert!(scalar_oracle(&sc, 0.3).is_err());
        assert!(scalar_oracle(&sc, 0.0).is_err());
    }

    #[test]
    fn zero_data_pair_verifies() {
        let sc =
            ScalarLinearScenario::new(1.0, 0.0, 0.0, FractionalOrder::new(0.5, 0.5).unwrap(), 1.0);
        let mut cfg = MonotoneConfig::new(0.0, 0.0, 0.0, vec![]);
        cfg.nodes_per_segment = 32;
        let solver = MildSolver::new(&sc.problem().unwrap(), &cfg).unwrap();
        let pair = default_quasi_pair(&solver, 1.0).unwrap();
        assert!(pair.report.pass);
        assert!(pair.report.lower_defect >= 0.0);
    }
}
