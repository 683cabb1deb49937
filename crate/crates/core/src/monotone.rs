//! The operator G, the mixed monotone iteration toward the coupled extremal
//! solutions, ordering checks and numerical hypothesis checks.

use std::fmt;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, OnceLock};

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::operators::{
    estimate_m_star, FractionalFamily, FractionalOrder, Generator, OperatorBounds,
};
use crate::quadrature::{
    volterra_panels, weighted_norm, JumpRecord, PcTrajectory, TimeGrid, DEFAULT_NODES_PER_SEGMENT,
};
use crate::specfun::{gamma, rgamma, DEFAULT_DENSITY_NODES};

/// g(t, y, z) on raw state values.
pub type Nonlinearity = Arc<dyn Fn(f64, &[f64], &[f64]) -> Vec<f64> + Send + Sync>;
/// φ_k(y, z) on raw left values at t_k.
pub type ImpulseFn = Arc<dyn Fn(&[f64], &[f64]) -> Vec<f64> + Send + Sync>;

#[derive(Clone)]
pub struct Impulse {
    pub time: f64,
    pub phi: ImpulseFn,
}

/// Impulsive Hilfer evolution problem with generator -A, weighted initial
/// datum x0 and nonlinearity g. `g = None` means g ≡ 0.
#[derive(Clone)]
pub struct EvolutionProblem {
    pub gen: Generator,
    pub order: FractionalOrder,
    pub horizon: f64,
    pub x0: DVector<f64>,
    pub g: Option<Nonlinearity>,
    pub impulses: Vec<Impulse>,
}

impl fmt::Debug for EvolutionProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("EvolutionProblem")
            .field("dim", &self.gen.dim())
            .field("order", &self.order)
            .field("horizon", &self.horizon)
            .field("x0", &self.x0.as_slice())
            .field("has_g", &self.g.is_some())
            .field(
                "impulse_times",
                &self.impulses.iter().map(|i| i.time).collect::<Vec<_>>(),
            )
            .finish()
    }
}

impl EvolutionProblem {
    pub fn dim(&self) -> usize {
        self.gen.dim()
    }

    pub fn impulse_times(&self) -> Vec<f64> {
        self.impulses.iter().map(|i| i.time).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MonotoneConfig {
    pub c: f64,
    pub l: f64,
    pub l1: f64,
    pub m_k: Vec<f64>,
    pub tol: f64,
    pub max_iter: usize,
    /// Ordering slack; `None` selects 1e-9 (1 + scale) from the initial pair.
    pub order_tol: Option<f64>,
    pub c_star: Option<f64>,
    pub l_star: Option<f64>,
    pub nodes_per_segment: usize,
    pub density_nodes: usize,
}

impl MonotoneConfig {
    pub fn new(c: f64, l: f64, l1: f64, m_k: Vec<f64>) -> Self {
        Self {
            c,
            l,
            l1,
            m_k,
            tol: 1e-8,
            max_iter: 200,
            order_tol: None,
            c_star: None,
            l_star: None,
            nodes_per_segment: DEFAULT_NODES_PER_SEGMENT,
            density_nodes: DEFAULT_DENSITY_NODES,
        }
    }

    /// Checks the configuration against the problem; returns warnings that
    /// do not prevent a run.
    pub fn validate(&self, impulse_count: usize) -> Result<Vec<String>> {
        let bad = |name: &str, why: &str| Err(Error::Config(format!("{name}: {why}")));
        if !(self.c >= 0.0 && self.c.is_finite()) {
            return bad("C", "must be finite and nonnegative");
        }
        if !self.l.is_finite() {
            return bad("L", "must be finite");
        }
        if !(self.l1 >= 0.0) {
            return bad("L1", "must be nonnegative");
        }
        if !(self.tol > 0.0) {
            return bad("tol", "must be positive");
        }
        if self.max_iter == 0 {
            return bad("max_iter", "must be at least 1");
        }
        if self.m_k.len() != impulse_count {
            return Err(Error::Config(format!(
                "M_k: expected {impulse_count} entries (one per impulse), found {}",
                self.m_k.len()
            )));
        }
        if self.m_k.iter().any(|m| !(*m >= 0.0)) {
            return bad("M_k", "entries must be nonnegative");
        }
        if let Some(t) = self.order_tol {
            if !(t >= 0.0) {
                return bad("order_tol", "must be nonnegative");
            }
        }
        let mut warnings = Vec::new();
        if self.l < 0.0 {
            warnings.push(format!(
                "L = {} is negative; the operator G is mixed monotone for L >= 0, so ordering may fail",
                self.l
            ));
        }
        Ok(warnings)
    }
}

/// Discretized G on a fixed grid with cached operator blocks.
pub struct MildSolver {
    problem: EvolutionProblem,
    cfg: MonotoneConfig,
    grid: Arc<TimeGrid>,
    family: FractionalFamily,
    /// κΓ(μ)/Γ(λ): weighted limit of S*(τ) as τ → 0⁺, per unit datum.
    jump_factor: f64,
    /// S*(t_n)x0 in work coordinates for every node n ≥ 1.
    free: Vec<Vec<f64>>,
    /// Per impulse k: S*(t_n - t_k) blocks for nodes n after t_k.
    s_blocks: Vec<Vec<f64>>,
    volterra: OnceLock<Vec<f64>>,
    needs_volterra: bool,
    warnings: Vec<String>,
    evaluations: AtomicUsize,
}

impl fmt::Debug for MildSolver {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MildSolver")
            .field("problem", &self.problem)
            .field("nodes", &self.grid.len())
            .finish()
    }
}

impl MildSolver {
    pub fn new(problem: &EvolutionProblem, cfg: &MonotoneConfig) -> Result<Self> {
        let warnings = cfg.validate(problem.impulses.len())?;
        if problem.x0.len() != problem.dim() {
            return Err(Error::DimensionMismatch {
                expected: problem.dim(),
                found: problem.x0.len(),
            });
        }
        let grid = Arc::new(TimeGrid::new(
            problem.horizon,
            &problem.impulse_times(),
            cfg.nodes_per_segment,
            problem.order.weight_exponent(),
        )?);
        let family = FractionalFamily::with_density_nodes(
            &problem.gen,
            cfg.c,
            problem.order,
            cfg.density_nodes,
        )?;
        let order = problem.order;
        let jump_factor = family.kappa() * gamma(order.mu())? * rgamma(order.lambda());

        let len = family.block_len();
        let nodes = grid.nodes();
        let mut starts = vec![0usize];
        starts.extend_from_slice(grid.impulse_indices());
        let mut s_blocks = Vec::with_capacity(starts.len());
        for &si in &starts {
            let t0 = nodes[si];
            let lags: Vec<f64> = nodes[si..].iter().map(|t| t - t0).collect();
            let count = lags.len() - 1;
            let mut p = vec![0.0; count * len];
            for j in 1..=count {
                family.p_block(lags[j], &mut p[(j - 1) * len..j * len]);
            }
            let mut s = vec![0.0; count * len];
            for j in 1..=count {
                family.s_block_from_samples(
                    &lags[..=j],
                    &p[..j * len],
                    &mut s[(j - 1) * len..j * len],
                );
            }
            s_blocks.push(s);
        }

        let x0w = family.to_work(&problem.x0);
        let mut free = vec![Vec::new(); grid.len()];
        for (n, slot) in free.iter_mut().enumerate().skip(1) {
            let mut out = vec![0.0; problem.dim()];
            family.apply_block(&s_blocks[0][(n - 1) * len..n * len], &x0w, &mut out);
            *slot = out;
        }
        let needs_volterra = problem.g.is_some() || cfg.c + cfg.l != 0.0 || cfg.l != 0.0;
        Ok(Self {
            problem: problem.clone(),
            cfg: cfg.clone(),
            grid,
            family,
            jump_factor,
            free,
            s_blocks,
            volterra: OnceLock::new(),
            needs_volterra,
            warnings,
            evaluations: AtomicUsize::new(0),
        })
    }

    pub fn grid(&self) -> &Arc<TimeGrid> {
        &self.grid
    }

    pub fn problem(&self) -> &EvolutionProblem {
        &self.problem
    }

    pub fn config(&self) -> &MonotoneConfig {
        &self.cfg
    }

    pub fn family(&self) -> &FractionalFamily {
        &self.family
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    /// Number of completed evaluations of G.
    pub fn evaluations(&self) -> usize {
        self.evaluations.load(Ordering::Relaxed)
    }

    /// Weighted right limit produced by a unit datum: κΓ(μ)/Γ(λ) ≈ 1/Γ(λ).
    pub fn jump_factor(&self) -> f64 {
        self.jump_factor
    }

    /// Combined Volterra weight blocks, row n holding one block per node 1..=n.
    fn volterra_blocks(&self) -> &[f64] {
        self.volterra.get_or_init(|| {
            let len = self.family.block_len();
            let n_nodes = self.grid.len();
            let total = n_nodes * (n_nodes - 1) / 2;
            let mut w = vec![0.0; total * len];
            let mut tmp = vec![0.0; len];
            let mu = self.problem.order.mu();
            for n in 1..n_nodes {
                let row = n * (n - 1) / 2 * len;
                for panel in volterra_panels(&self.grid, mu, n) {
                    self.family.p_block(panel.lag, &mut tmp);
                    for &(node, coef) in &panel.terms {
                        let dst = &mut w[row + (node - 1) * len..row + node * len];
                        for (d, b) in dst.iter_mut().zip(&tmp) {
                            *d += coef * b;
                        }
                    }
                }
            }
            w
        })
    }

    fn check_inputs(&self, y: &PcTrajectory, z: &PcTrajectory) -> Result<()> {
        for x in [y, z] {
            if !(Arc::ptr_eq(x.grid(), &self.grid) || **x.grid() == *self.grid) {
                return Err(Error::GridMismatch);
            }
            if x.dim() != self.problem.dim() {
                return Err(Error::DimensionMismatch {
                    expected: self.problem.dim(),
                    found: x.dim(),
                });
            }
        }
        Ok(())
    }

    fn check_output(
        v: &[f64],
        dim: usize,
        source_name: &'static str,
        node: usize,
        t: f64,
    ) -> Result<()> {
        if v.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: v.len(),
            });
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite {
                source_name,
                node,
                t,
            });
        }
        Ok(())
    }

    /// G(y, z) on the grid.
    pub fn apply_g(&self, y: &PcTrajectory, z: &PcTrajectory) -> Result<PcTrajectory> {
        self.check_inputs(y, z)?;
        let dim = self.problem.dim();
        let len = self.family.block_len();
        let nodes = self.grid.nodes();
        let n_nodes = self.grid.len();
        let impulse_idx = self.grid.impulse_indices();

        let mut phis = Vec::with_capacity(impulse_idx.len());
        let mut phis_work = Vec::with_capacity(impulse_idx.len());
        for (k, &si) in impulse_idx.iter().enumerate() {
            let phi = (self.problem.impulses[k].phi)(&y.raw_at(si), &z.raw_at(si));
            Self::check_output(&phi, dim, "impulse", si, nodes[si])?;
            phis_work.push(self.family.to_work(&DVector::from_column_slice(&phi)));
            phis.push(phi);
        }

        let forcing_work: Option<Vec<Vec<f64>>> = if self.needs_volterra {
            let (c, l) = (self.cfg.c, self.cfg.l);
            let mut hw = vec![Vec::new(); n_nodes];
            for (n, slot) in hw.iter_mut().enumerate().skip(1) {
                let yr = y.raw_at(n);
                let zr = z.raw_at(n);
                let mut h: Vec<f64> = match &self.problem.g {
                    Some(g) => {
                        let v = g(nodes[n], &yr, &zr);
                        Self::check_output(&v, dim, "g", n, nodes[n])?;
                        v
                    }
                    None => vec![0.0; dim],
                };
                for i in 0..dim {
                    h[i] += (c + l) * yr[i] - l * zr[i];
                }
                *slot = self.family.to_work(&DVector::from_vec(h));
            }
            Some(hw)
        } else {
            None
        };
        let volterra = forcing_work.as_ref().map(|_| self.volterra_blocks());

        let mut weighted = Vec::with_capacity(n_nodes * dim);
        weighted.extend(self.problem.x0.iter().map(|v| v * self.jump_factor));
        let mut acc = vec![0.0; dim];
        for n in 1..n_nodes {
            acc.copy_from_slice(&self.free[n]);
            for (k, &si) in impulse_idx.iter().enumerate() {
                if si >= n {
                    break;
                }
                let block = &self.s_blocks[k + 1][(n - si - 1) * len..(n - si) * len];
                self.family.apply_block(block, &phis_work[k], &mut acc);
            }
            if let (Some(hw), Some(w)) = (&forcing_work, volterra) {
                let row = n * (n - 1) / 2 * len;
                for (m, hm) in hw.iter().enumerate().take(n + 1).skip(1) {
                    self.family
                        .apply_block(&w[row + (m - 1) * len..row + m * len], hm, &mut acc);
                }
            }
            let raw = self.family.from_work(&acc);
            let wgt = self.grid.weight(n);
            for v in raw.iter() {
                if !v.is_finite() {
                    return Err(Error::NonFinite {
                        source_name: "G",
                        node: n,
                        t: nodes[n],
                    });
                }
                weighted.push(v * wgt);
            }
        }

        let continuous = self.grid.weight_exponent() == 0.0;
        let jumps = impulse_idx
            .iter()
            .zip(&phis)
            .map(|(&si, phi)| {
                let left = weighted[si * dim..(si + 1) * dim].to_vec();
                let right = phi
                    .iter()
                    .zip(&left)
                    .map(|(p, l)| self.jump_factor * p + if continuous { *l } else { 0.0 })
                    .collect();
                JumpRecord {
                    time: nodes[si],
                    left,
                    right,
                }
            })
            .collect();
        self.evaluations.fetch_add(1, Ordering::Relaxed);
        PcTrajectory::from_weighted(self.grid.clone(), dim, weighted, jumps)
    }

    /// ‖G(x, x) - x‖ in the weighted norm.
    pub fn residual_fixed_point(&self, x: &PcTrajectory) -> Result<f64> {
        Ok(weighted_norm(&self.apply_g(x, x)?.sub(x)?))
    }

    /// Order slack for a pair: the configured value or 1e-9 (1 + scale).
    pub fn order_tol_for(&self, y0: &PcTrajectory, z0: &PcTrajectory) -> f64 {
        self.cfg
            .order_tol
            .unwrap_or_else(|| 1e-9 * (1.0 + weighted_norm(y0).max(weighted_norm(z0))))
    }

    /// M* estimated from ‖R(t)‖ on a sample of times in [0, T].
    pub fn estimated_m_star(&self) -> Result<f64> {
        let ts: Vec<f64> = (0..=32)
            .map(|i| self.problem.horizon * i as f64 / 32.0)
            .collect();
        estimate_m_star(&self.problem.gen, self.cfg.c, &ts)
    }

    pub fn eta(&self, m_star: f64) -> f64 {
        let o = self.problem.order;
        eta_value(
            m_star,
            self.cfg.m_k.iter().sum(),
            self.cfg.l1,
            self.cfg.c,
            self.problem.horizon,
            o.mu(),
            o.lambda(),
        )
    }
}

/// G(y, z) for a single evaluation; builds the discretization each call.
pub fn apply_g(
    problem: &EvolutionProblem,
    cfg: &MonotoneConfig,
    y: &PcTrajectory,
    z: &PcTrajectory,
) -> Result<PcTrajectory> {
    MildSolver::new(problem, cfg)?.apply_g(y, z)
}

pub fn residual_fixed_point(
    problem: &EvolutionProblem,
    cfg: &MonotoneConfig,
    x: &PcTrajectory,
) -> Result<f64> {
    MildSolver::new(problem, cfg)?.residual_fixed_point(x)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum OrderLocation {
    Node(usize),
    RightLimit(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OrderCheck {
    pub holds: bool,
    /// Most negative entry of v - u (positive when v dominates strictly).
    pub worst: f64,
    pub location: Option<OrderLocation>,
    pub component: Option<usize>,
}

/// u ≤ v + order_tol componentwise at every node and right limit.
pub fn order_leq(u: &PcTrajectory, v: &PcTrajectory, order_tol: f64) -> Result<OrderCheck> {
    let d = v.sub(u)?;
    let dim = d.dim();
    let mut worst = f64::INFINITY;
    let mut at = None;
    for (i, x) in d.weighted().iter().enumerate() {
        if *x < worst {
            worst = *x;
            at = Some((OrderLocation::Node(i / dim), i % dim));
        }
    }
    for (k, j) in d.jumps().iter().enumerate() {
        for (c, x) in j.right.iter().enumerate() {
            if *x < worst {
                worst = *x;
                at = Some((OrderLocation::RightLimit(k + 1), c));
            }
        }
    }
    Ok(OrderCheck {
        holds: worst >= -order_tol,
        worst,
        location: at.map(|a| a.0),
        component: at.map(|a| a.1),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HistoryEntry {
    pub dy: f64,
    pub dz: f64,
    pub gap: f64,
    /// Largest amount by which the chain y_{p-1} ≤ y_p ≤ z_p ≤ z_{p-1} fails.
    pub violation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IterationReport {
    pub iterations: usize,
    pub history: Vec<HistoryEntry>,
    pub ordering_violations: Vec<f64>,
    /// Iterations whose violation exceeds `order_tol`.
    pub violation_count: usize,
    pub order_tol: f64,
    pub eta: f64,
    pub converged: bool,
    pub unique: bool,
}

impl IterationReport {
    pub fn final_gap(&self) -> f64 {
        self.history.last().map_or(f64::NAN, |h| h.gap)
    }
}

pub const DIVERGENCE_STREAK: usize = 5;

/// y_p = G(y_{p-1}, z_{p-1}), z_p = G(z_{p-1}, y_{p-1}) until both steps
/// fall below tol or max_iter is reached.
pub fn iterate_extremal(
    solver: &MildSolver,
    y0: &PcTrajectory,
    z0: &PcTrajectory,
) -> Result<(PcTrajectory, PcTrajectory, IterationReport)> {
    let cfg = solver.config();
    let order_tol = solver.order_tol_for(y0, z0);
    let init = order_leq(y0, z0, order_tol)?;
    if !init.holds {
        let node = match init.location {
            Some(OrderLocation::Node(n)) => n,
            Some(OrderLocation::RightLimit(k)) => solver.grid().impulse_indices()[k - 1],
            None => 0,
        };
        return Err(Error::InitialOrdering {
            violation: init.worst,
            node,
        });
    }
    let eta = solver.eta(solver.estimated_m_star()?);
    let mut report = IterationReport {
        iterations: 0,
        history: Vec::new(),
        ordering_violations: Vec::new(),
        violation_count: 0,
        order_tol,
        eta,
        converged: false,
        unique: false,
    };
    let mut y = y0.clone();
    let mut z = z0.clone();
    let mut streak = 0;
    let mut prev_gap = weighted_norm(&z.sub(&y)?);
    for _ in 0..cfg.max_iter {
        let y1 = solver.apply_g(&y, &z)?;
        let z1 = solver.apply_g(&z, &y)?;
        let worst = [
            order_leq(&y, &y1, order_tol)?.worst,
            order_leq(&y1, &z1, order_tol)?.worst,
            order_leq(&z1, &z, order_tol)?.worst,
        ]
        .into_iter()
        .fold(f64::INFINITY, f64::min);
        let violation = (-worst).max(0.0);
        let entry = HistoryEntry {
            dy: weighted_norm(&y1.sub(&y)?),
            dz: weighted_norm(&z1.sub(&z)?),
            gap: weighted_norm(&z1.sub(&y1)?),
            violation,
        };
        report.iterations += 1;
        report.ordering_violations.push(violation);
        if violation > order_tol {
            report.violation_count += 1;
        }
        let done = entry.dy <= cfg.tol && entry.dz <= cfg.tol;
        let grew = entry.gap > prev_gap * (1.0 + 1e-9) && entry.gap > cfg.tol;
        streak = if grew { streak + 1 } else { 0 };
        prev_gap = entry.gap;
        report.history.push(entry);
        y = y1;
        z = z1;
        if done {
            report.converged = true;
            break;
        }
        if streak >= DIVERGENCE_STREAK {
            return Err(Error::Diverged {
                streak,
                gap: prev_gap,
                report: Box::new(report),
            });
        }
    }
    report.unique = report.converged && report.final_gap() <= cfg.tol;
    Ok((y, z, report))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QuasiPairReport {
    /// Minimum entry of G(y0, z0) - y0.
    pub lower_defect: f64,
    pub lower_location: Option<OrderLocation>,
    /// Minimum entry of z0 - G(z0, y0).
    pub upper_defect: f64,
    pub upper_location: Option<OrderLocation>,
    pub ordered: bool,
    pub order_tol: f64,
    pub pass: bool,
}

/// Checks y0 ≤ G(y0, z0) and G(z0, y0) ≤ z0 in the mild form.
pub fn verify_quasi_pair(
    solver: &MildSolver,
    y0: &PcTrajectory,
    z0: &PcTrajectory,
) -> Result<QuasiPairReport> {
    let order_tol = solver.order_tol_for(y0, z0);
    let low = order_leq(y0, &solver.apply_g(y0, z0)?, order_tol)?;
    let up = order_leq(&solver.apply_g(z0, y0)?, z0, order_tol)?;
    let ordered = order_leq(y0, z0, order_tol)?.holds;
    Ok(QuasiPairReport {
        lower_defect: low.worst,
        lower_location: low.location,
        upper_defect: up.worst,
        upper_location: up.location,
        ordered,
        order_tol,
        pass: low.holds && up.holds && ordered,
    })
}

/// 4M*(ΣM_i T^{λ-1}/Γ(λ) + (2L_1 + C)T^μ/Γ(μ+1)).
pub fn eta_value(
    m_star: f64,
    m_sum: f64,
    l1: f64,
    c: f64,
    horizon: f64,
    mu: f64,
    lambda: f64,
) -> f64 {
    4.0 * m_star
        * (m_sum * horizon.powf(lambda - 1.0) * rgamma(lambda)
            + (2.0 * l1 + c) * horizon.powf(mu) * rgamma(mu + 1.0))
}

pub const MAX_PARTITION: usize = 1_000_000;

/// Smallest n with η evaluated on pieces of length T/n below 1.
pub fn partition_count(
    m_star: f64,
    m_sum: f64,
    l1: f64,
    c: f64,
    horizon: f64,
    mu: f64,
    lambda: f64,
) -> Option<usize> {
    (1..=MAX_PARTITION)
        .find(|&n| eta_value(m_star, m_sum, l1, c, horizon / n as f64, mu, lambda) < 1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Witness {
    pub t: f64,
    pub y1: Vec<f64>,
    pub y2: Vec<f64>,
    pub z1: Vec<f64>,
    pub z2: Vec<f64>,
    pub violation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SampleCheck {
    pub samples: usize,
    pub failures: usize,
    /// Smallest slack observed (negative means violated).
    pub worst: f64,
    pub witness: Option<Witness>,
}

impl SampleCheck {
    fn new() -> Self {
        Self {
            samples: 0,
            failures: 0,
            worst: f64::INFINITY,
            witness: None,
        }
    }

    fn record(&mut self, slack: &[f64], tol: f64, w: impl FnOnce(f64) -> Witness) {
        self.samples += 1;
        let s = slack.iter().copied().fold(f64::INFINITY, f64::min);
        if s < self.worst {
            self.worst = s;
        }
        if s < -tol {
            self.failures += 1;
            if self.witness.is_none() {
                self.witness = Some(w(s));
            }
        }
    }

    pub fn passed(&self) -> bool {
        self.failures == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MkCondition {
    pub sum_m_k: f64,
    /// Right-hand side with Γ(μ-1) in the denominator (the literal form).
    pub rhs_literal: f64,
    pub holds_literal: bool,
    /// Right-hand side with Γ(μ+1) in the denominator.
    pub rhs_corrected: f64,
    pub holds_corrected: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HypothesisReport {
    pub mu: f64,
    pub nu: f64,
    pub lambda: f64,
    pub m_star: f64,
    pub n_tilde: f64,
    pub a1: SampleCheck,
    pub a2: SampleCheck,
    pub a5: Option<SampleCheck>,
    pub eta: f64,
    pub eta_below_one: bool,
    pub partition: Option<usize>,
    pub mk_condition: MkCondition,
    pub l1_from_a5: Option<f64>,
    pub falsified: bool,
    pub notes: Vec<String>,
}

/// Ordered quadruple y1 ≤ y2, z2 ≤ z1 inside [lo, hi].
fn sample_quadruple(rng: &mut ChaCha8Rng, lo: &[f64], hi: &[f64]) -> [Vec<f64>; 4] {
    let mut q = [Vec::new(), Vec::new(), Vec::new(), Vec::new()];
    for (a, b) in lo.iter().zip(hi) {
        let span = b - a;
        let y1 = a + span * rng.random::<f64>();
        let y2 = y1 + (b - y1) * rng.random::<f64>();
        let z1 = a + span * rng.random::<f64>();
        let z2 = a + (z1 - a) * rng.random::<f64>();
        q[0].push(y1);
        q[1].push(y2);
        q[2].push(z1);
        q[3].push(z2);
    }
    q
}

pub const MIN_SAMPLE_BUDGET: usize = 100;

/// Monte-Carlo falsification of the structural inequalities on ordered
/// quadruples between y0 and z0, plus the η and M_k arithmetic.
pub fn check_hypotheses(
    solver: &MildSolver,
    bounds: OperatorBounds,
    y0: &PcTrajectory,
    z0: &PcTrajectory,
    sample_budget: usize,
    seed: u64,
) -> Result<HypothesisReport> {
    if sample_budget < MIN_SAMPLE_BUDGET {
        return Err(Error::Config(format!(
            "sample_budget: need at least {MIN_SAMPLE_BUDGET} samples, got {sample_budget}"
        )));
    }
    let problem = solver.problem();
    let cfg = solver.config();
    let grid = solver.grid();
    let order = problem.order;
    let (mu, lambda, horizon) = (order.mu(), order.lambda(), problem.horizon);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut a1 = SampleCheck::new();
    let mut a5 = cfg.c_star.zip(cfg.l_star).map(|_| SampleCheck::new());
    let zero = |_: f64, y: &[f64], _: &[f64]| vec![0.0; y.len()];
    for _ in 0..sample_budget {
        let n = rng.random_range(1..grid.len());
        let t = grid.nodes()[n];
        let [y1, y2, z1, z2] = sample_quadruple(&mut rng, &y0.raw_at(n), &z0.raw_at(n));
        let (g1, g2) = match &problem.g {
            Some(g) => (g(t, &y1, &z1), g(t, &y2, &z2)),
            None => (zero(t, &y1, &z1), zero(t, &y2, &z2)),
        };
        let scale = 1.0
            + [&y1, &y2, &z1, &z2, &g1, &g2]
                .iter()
                .flat_map(|v| v.iter())
                .fold(0.0_f64, |m, v| m.max(v.abs()));
        let tol = 1e-12 * scale;
        let witness = |s| Witness {
            t,
            y1: y1.clone(),
            y2: y2.clone(),
            z1: z1.clone(),
            z2: z2.clone(),
            violation: s,
        };
        let slack1: Vec<f64> = (0..y1.len())
            .map(|i| g2[i] - g1[i] + cfg.c * (y2[i] - y1[i]) + cfg.l * (z1[i] - z2[i]))
            .collect();
        a1.record(&slack1, tol, witness);
        if let (Some(check), Some(cs), Some(ls)) = (a5.as_mut(), cfg.c_star, cfg.l_star) {
            let slack5: Vec<f64> = (0..y1.len())
                .map(|i| cs * (y2[i] - y1[i]) + ls * (z1[i] - z2[i]) - (g2[i] - g1[i]))
                .collect();
            check.record(&slack5, tol, witness);
        }
    }

    let mut a2 = SampleCheck::new();
    let per_impulse = sample_budget.div_ceil(problem.impulses.len().max(1));
    for (k, &si) in grid.impulse_indices().iter().enumerate() {
        let t = grid.nodes()[si];
        for _ in 0..per_impulse {
            let [y1, y2, z1, z2] = sample_quadruple(&mut rng, &y0.raw_at(si), &z0.raw_at(si));
            let p1 = (problem.impulses[k].phi)(&y1, &z1);
            let p2 = (problem.impulses[k].phi)(&y2, &z2);
            let scale = 1.0 + p1.iter().chain(&p2).fold(0.0_f64, |m, v| m.max(v.abs()));
            let slack: Vec<f64> = p2.iter().zip(&p1).map(|(b, a)| b - a).collect();
            a2.record(&slack, 1e-12 * scale, |s| Witness {
                t,
                y1: y1.clone(),
                y2: y2.clone(),
                z1: z1.clone(),
                z2: z2.clone(),
                violation: s,
            });
        }
    }

    let m_star = bounds.m_star;
    let m_sum: f64 = cfg.m_k.iter().sum();
    let eta = eta_value(m_star, m_sum, cfg.l1, cfg.c, horizon, mu, lambda);
    let partition = if eta < 1.0 {
        Some(1)
    } else {
        partition_count(m_star, m_sum, cfg.l1, cfg.c, horizon, mu, lambda)
    };
    let numerator = gamma(lambda)? * gamma(mu + 1.0)?
        - 4.0 * m_star * (2.0 * cfg.l1 + cfg.c) * horizon.powf(mu);
    let base = 4.0 * m_star * horizon.powf(lambda - 1.0);
    let rhs_literal = numerator / (base * gamma(mu - 1.0)?);
    let rhs_corrected = numerator / (base * gamma(mu + 1.0)?);
    let mk_condition = MkCondition {
        sum_m_k: m_sum,
        rhs_literal,
        holds_literal: m_sum <= rhs_literal,
        rhs_corrected,
        holds_corrected: m_sum <= rhs_corrected,
    };
    let l1_from_a5 = cfg
        .c_star
        .zip(cfg.l_star)
        .map(|(cs, ls)| bounds.n_tilde * (cs + cfg.c + ls + cfg.l) + cfg.c + cfg.l);

    let mut notes = vec![
        "L is taken nonnegative so that g + (C+L)y - Lz is nondecreasing in y and nonincreasing in z".to_string(),
        "the M_k bound is reported twice: with Gamma(mu-1) in the denominator (negative for 0 < mu < 1) and with Gamma(mu+1)".to_string(),
        "the compactness constant L1 is required to be nonnegative".to_string(),
    ];
    if let Some(l1d) = l1_from_a5 {
        if cfg.l1 < l1d {
            notes.push(format!(
                "configured L1 = {} is below the value {} implied by C*, L*",
                cfg.l1, l1d
            ));
        }
    }
    if eta >= 1.0 {
        notes.push(match partition {
            Some(n) => format!(
                "eta >= 1; splitting [0, T] into {n} pieces brings the per-piece eta below 1"
            ),
            None => "eta >= 1 and no partition up to 1e6 pieces brings it below 1".to_string(),
        });
    }
    let falsified = !a1.passed() || !a2.passed() || a5.as_ref().is_some_and(|c| !c.passed());
    Ok(HypothesisReport {
        mu,
        nu: order.nu(),
        lambda,
        m_star,
        n_tilde: bounds.n_tilde,
        a1,
        a2,
        a5,
        eta,
        eta_below_one: eta < 1.0,
        partition,
        mk_condition,
        l1_from_a5,
        falsified,
        notes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_problem(
        a: f64,
        mu: f64,
        nu: f64,
        g: Option<Nonlinearity>,
        impulses: Vec<Impulse>,
    ) -> EvolutionProblem {
        EvolutionProblem {
            gen: Generator::scalar(a).unwrap(),
            order: FractionalOrder::new(mu, nu).unwrap(),
            horizon: 1.0,
            x0: DVector::from_element(1, 1.0),
            g,
            impulses,
        }
    }

    fn cfg(n: usize, impulses: usize) -> MonotoneConfig {
        let mut c = MonotoneConfig::new(0.0, 0.0, 0.0, vec![0.0; impulses]);
        c.nodes_per_segment = n;
        c
    }

    #[test]
    fn zero_generator_free_response() {
        let p = scalar_problem(0.0, 0.5, 0.5, None, vec![]);
        let solver = MildSolver::new(&p, &cfg(64, 0)).unwrap();
        let zero = PcTrajectory::zeros(solver.grid().clone(), 1);
        let g = solver.apply_g(&zero, &zero).unwrap();
        let lam = 0.75;
        let want = 1.0 / statrs::function::gamma::gamma(lam);
        for w in g.weighted() {
            assert!((w - want).abs() < 1e-10);
        }
    }

    #[test]
    fn order_leq_cases() {
        let grid = Arc::new(TimeGrid::new(1.0, &[0.5], 8, 0.25).unwrap());
        let u = PcTrajectory::constant_weighted(grid.clone(), &[1.0, 2.0]);
        let r = order_leq(&u, &u, 0.0).unwrap();
        assert!(r.holds);
        assert_eq!(r.worst, 0.0);
        let v = PcTrajectory::constant_weighted(grid.clone(), &[1.5, 2.5]);
        assert!(order_leq(&u, &v, 0.0).unwrap().holds);
        let mut w = v.weighted().to_vec();
        w[2 * 5 + 1] = 1.0;
        let v2 = PcTrajectory::from_weighted(grid, 2, w, v.jumps().to_vec()).unwrap();
        let r = order_leq(&u, &v2, 1e-12).unwrap();
        assert!(!r.holds);
        assert_eq!(r.location, Some(OrderLocation::Node(5)));
        assert_eq!(r.component, Some(1));
        assert!((r.worst + 1.0).abs() < 1e-15);
    }

    #[test]
    fn eta_hand_value() {
        let e = eta_value(1.0, 0.0, 0.1, 0.2, 1.0, 0.5, 0.75);
        let want = 1.6 / statrs::function::gamma::gamma(1.5);
        assert!((e - want).abs() < 1e-12);
        assert_eq!(partition_count(1.0, 0.0, 0.1, 0.2, 1.0, 0.5, 0.75), Some(4));
        // the T^{λ-1} term grows on short pieces, so no split helps here
        assert_eq!(partition_count(1.0, 1.0, 0.0, 0.0, 1.0, 0.5, 0.75), None);
    }

    #[test]
    fn initial_ordering_rejected() {
        let p = scalar_problem(1.0, 0.5, 1.0, None, vec![]);
        let solver = MildSolver::new(&p, &cfg(16, 0)).unwrap();
        let y0 = PcTrajectory::constant_weighted(solver.grid().clone(), &[1.0]);
        let z0 = PcTrajectory::zeros(solver.grid().clone(), 1);
        assert!(matches!(
            iterate_extremal(&solver, &y0, &z0),
            Err(Error::InitialOrdering { .. })
        ));
    }

    #[test]
    fn config_validation() {
        let c = MonotoneConfig::new(0.0, 0.0, 0.0, vec![]);
        assert!(c.validate(1).is_err());
        let mut c = MonotoneConfig::new(0.0, -0.5, 0.0, vec![]);
        assert_eq!(c.validate(0).unwrap().len(), 1);
        c.tol = 0.0;
        assert!(c.validate(0).is_err());
    }
}
