//! Scalar special functions: gamma, the two-parameter Mittag-Leffler
//! function, and the Mainardi (M-Wright) density that drives the
//! subordination integrals in [`crate::operators`].

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::quadrature::gauss_legendre;

/// Truncation control for the power series in this module.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeriesControl {
    pub max_terms: usize,
    pub abs_tol: f64,
}

impl Default for SeriesControl {
    fn default() -> Self {
        Self {
            max_terms: 400,
            abs_tol: 1e-15,
        }
    }
}

impl SeriesControl {
    pub fn new(max_terms: usize, abs_tol: f64) -> Result<Self> {
        if max_terms == 0 {
            return Err(Error::InvalidArgument {
                name: "max_terms",
                value: 0.0,
                reason: "must be at least 1",
            });
        }
        if !(abs_tol >= 0.0) {
            return Err(Error::InvalidArgument {
                name: "abs_tol",
                value: abs_tol,
                reason: "must be nonnegative",
            });
        }
        Ok(Self { max_terms, abs_tol })
    }
}

const LANCZOS_G: f64 = 7.0;
const LANCZOS_COEF: [f64; 9] = [
    0.999_999_999_999_809_9,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_1,
    -176.615_029_162_140_6,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_572e-6,
    1.505_632_735_149_311_6e-7,
];

fn lanczos_sum(x: f64) -> f64 {
    // x is the shifted argument (Γ(x + 1))
    let mut acc = LANCZOS_COEF[0];
    for (i, c) in LANCZOS_COEF.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    acc
}

/// sin(πx) with exact zeros at the integers.
pub fn sin_pi(x: f64) -> f64 {
    let r = x - 2.0 * (x / 2.0).round();
    if r == 0.0 || r.abs() == 1.0 {
        return 0.0;
    }
    if r > 0.5 {
        (PI * (1.0 - r)).sin()
    } else if r < -0.5 {
        -(PI * (1.0 + r)).sin()
    } else {
        (PI * r).sin()
    }
}

fn is_nonpositive_integer(x: f64) -> bool {
    x <= 0.0 && x == x.floor()
}

/// Γ(x) for real x away from the poles at 0, -1, -2, ...
pub fn gamma(x: f64) -> Result<f64> {
    if x.is_nan() {
        return Err(Error::InvalidArgument {
            name: "x",
            value: x,
            reason: "NaN argument",
        });
    }
    if is_nonpositive_integer(x) {
        return Err(Error::GammaPole(x));
    }
    Ok(gamma_unchecked(x))
}

fn gamma_unchecked(x: f64) -> f64 {
    if x < 0.5 {
        // reflection
        return PI / (sin_pi(x) * gamma_unchecked(1.0 - x));
    }
    if x == x.floor() && x <= 23.0 {
        let mut f = 1.0;
        let mut k = 2.0;
        while k < x {
            f *= k;
            k += 1.0;
        }
        return f;
    }
    if x > 171.7 {
        return f64::INFINITY;
    }
    let xm = x - 1.0;
    let t = xm + LANCZOS_G + 0.5;
    let half = t.powf((xm + 0.5) / 2.0);
    (2.0 * PI).sqrt() * half * (half * (-t).exp()) * lanczos_sum(xm)
}

/// ln Γ(x) for x > 0.
pub fn ln_gamma(x: f64) -> f64 {
    debug_assert!(x > 0.0);
    if x < 0.5 {
        return (PI / sin_pi(x)).ln() - ln_gamma(1.0 - x);
    }
    if x < 20.0 {
        return gamma_unchecked(x).ln();
    }
    let xm = x - 1.0;
    let t = xm + LANCZOS_G + 0.5;
    0.5 * (2.0 * PI).ln() + (xm + 0.5) * t.ln() - t + lanczos_sum(xm).ln()
}

/// 1/Γ(x), which is entire: zero at the nonpositive integers.
pub fn rgamma(x: f64) -> f64 {
    if is_nonpositive_integer(x) {
        return 0.0;
    }
    if x > 170.0 {
        return (-ln_gamma(x)).exp();
    }
    1.0 / gamma_unchecked(x)
}

struct Estimate {
    value: f64,
    error: f64,
}

fn ml_series(a: f64, b: f64, z: f64, ctl: &SeriesControl) -> Option<Estimate> {
    let mut sum = 0.0;
    let mut max_term: f64 = 0.0;
    let mut prev = f64::INFINITY;
    let mut zpow = 1.0_f64;
    let ln_abs_z = z.abs().ln();
    for n in 0..ctl.max_terms {
        let arg = a * n as f64 + b;
        let term = if arg < 170.0 && zpow.is_finite() {
            zpow * rgamma(arg)
        } else {
            let mag = (n as f64 * ln_abs_z - ln_gamma(arg)).exp();
            if z < 0.0 && n % 2 == 1 {
                -mag
            } else {
                mag
            }
        };
        if !term.is_finite() {
            return None;
        }
        sum += term;
        let mag = term.abs();
        max_term = max_term.max(mag);
        if n >= 1 && mag < ctl.abs_tol && mag <= prev {
            return Some(Estimate {
                value: sum,
                error: max_term * f64::EPSILON * (n as f64 + 1.0) + ctl.abs_tol,
            });
        }
        prev = mag;
        zpow *= z;
    }
    None
}

/// Algebraic tail -Σ_{k≥1} z^{-k}/Γ(b - a k), truncated at its smallest term.
fn ml_algebraic_tail(a: f64, b: f64, z: f64, ctl: &SeriesControl) -> Estimate {
    let mut sum = 0.0;
    let mut smallest = f64::INFINITY;
    let mut inv_pow = 1.0;
    let mut last_nonzero = f64::INFINITY;
    for k in 1..=ctl.max_terms.max(1) {
        inv_pow /= z;
        let term = -inv_pow * rgamma(b - a * k as f64);
        let mag = term.abs();
        if mag == 0.0 {
            continue;
        }
        if mag > last_nonzero && last_nonzero.is_finite() {
            // asymptotic series started to diverge
            break;
        }
        sum += term;
        smallest = smallest.min(mag);
        last_nonzero = mag;
        if mag < ctl.abs_tol * sum.abs().max(1e-300) {
            break;
        }
    }
    if !smallest.is_finite() {
        smallest = 0.0;
    }
    Estimate {
        value: sum,
        error: smallest,
    }
}

fn ml_asymptotic(a: f64, b: f64, z: f64, ctl: &SeriesControl) -> Option<Estimate> {
    let tail = ml_algebraic_tail(a, b, z, ctl);
    if z < 0.0 {
        if a > 2.0 {
            return None;
        }
        let rho = (-z).powf(1.0 / a);
        let psi = PI / a;
        let exponential = if a < 1.0 {
            0.0
        } else {
            // conjugate branches on the negative axis; a = 1 sits on the Stokes line
            let weight = if a == 1.0 { 1.0 / a } else { 2.0 / a };
            weight
                * rho.powf(1.0 - b)
                * (rho * psi.cos()).exp()
                * ((1.0 - b) * psi + rho * psi.sin()).cos()
        };
        Some(Estimate {
            value: exponential + tail.value,
            error: tail.error,
        })
    } else {
        let rho = z.powf(1.0 / a);
        let mut lead = rho.powf(1.0 - b) * rho.exp() / a;
        if a == 2.0 {
            lead += 0.5 * rho.powf(1.0 - b) * (PI * (1.0 - b)).cos() * (-rho).exp();
        }
        if !lead.is_finite() {
            return None;
        }
        Some(Estimate {
            value: lead + tail.value,
            error: tail.error + lead.abs() * f64::EPSILON * rho,
        })
    }
}

/// Two-parameter Mittag-Leffler function E_{a,b}(z) = Σ z^n / Γ(a n + b)
/// for real z.
///
/// The power series is used for moderate |z|. Past |z| = 15, or whenever
/// the series' cancellation estimate is worse, the standard asymptotic
/// expansion is used instead. Whichever candidate carries the smaller
/// error estimate wins.
pub fn mittag_leffler(a: f64, b: f64, z: f64, ctl: &SeriesControl) -> Result<f64> {
    if !(a > 0.0 && a <= 2.0) {
        return Err(Error::InvalidArgument {
            name: "a",
            value: a,
            reason: "must lie in (0, 2]",
        });
    }
    if !(b > 0.0) {
        return Err(Error::InvalidArgument {
            name: "b",
            value: b,
            reason: "must be positive",
        });
    }
    if !z.is_finite() {
        return Err(Error::InvalidArgument {
            name: "z",
            value: z,
            reason: "must be finite",
        });
    }
    if z == 0.0 {
        return Ok(rgamma(b));
    }
    let series = ml_series(a, b, z, ctl);
    let series_ok = series
        .as_ref()
        .map(|s| s.error <= 1e-12 * s.value.abs().max(1.0))
        .unwrap_or(false);
    let asym = if z.abs() > 15.0 || !series_ok {
        ml_asymptotic(a, b, z, ctl)
    } else {
        None
    };
    let best = match (series, asym) {
        (Some(s), Some(x)) => {
            if x.error < s.error {
                x
            } else {
                s
            }
        }
        (Some(s), None) => s,
        (None, Some(x)) => x,
        (None, None) => {
            return Err(Error::SeriesNonConvergence {
                what: "Mittag-Leffler",
                argument: z,
                terms: ctl.max_terms,
            })
        }
    };
    if best.error > 1e-8 * best.value.abs().max(1.0) {
        return Err(Error::PrecisionLoss {
            what: "Mittag-Leffler",
            argument: z,
            estimate: best.error,
        });
    }
    Ok(best.value)
}

fn check_mu(mu: f64) -> Result<()> {
    if !(mu > 0.0 && mu < 1.0) {
        return Err(Error::InvalidArgument {
            name: "mu",
            value: mu,
            reason: "must lie in (0, 1)",
        });
    }
    Ok(())
}

fn mainardi_series_estimate(mu: f64, theta: f64, ctl: &SeriesControl) -> Result<Estimate> {
    // ϖ_μ's series in s = θ^{-1/μ}, rewritten with s^{-nμ} = θ^n:
    // ξ_μ(θ) = 1/(πμ) Σ_{n≥1} (-1)^{n-1} θ^{n-1} Γ(nμ+1)/n! sin(nπμ)
    let ln_theta = theta.ln();
    let mut sum = 0.0;
    let mut max_mag: f64 = 0.0;
    let mut prev = f64::INFINITY;
    for n in 1..=ctl.max_terms {
        let nf = n as f64;
        let ln_mag = ln_gamma(nf * mu + 1.0) - ln_gamma(nf + 1.0)
            + if n == 1 { 0.0 } else { (nf - 1.0) * ln_theta };
        let mag = ln_mag.exp();
        let sign = if n % 2 == 1 { 1.0 } else { -1.0 };
        sum += sign * mag * sin_pi(nf * mu);
        max_mag = max_mag.max(mag);
        // the magnitude bound ignores sin(nπμ), which may vanish for isolated n
        if (n >= 2 || theta == 0.0) && mag < ctl.abs_tol && mag <= prev {
            let scale = 1.0 / (PI * mu);
            return Ok(Estimate {
                value: sum * scale,
                error: (max_mag * f64::EPSILON * nf + ctl.abs_tol) * scale,
            });
        }
        prev = mag;
    }
    Err(Error::SeriesNonConvergence {
        what: "Mainardi density series",
        argument: theta,
        terms: ctl.max_terms,
    })
}

/// Raw alternating series for ξ_μ(θ). Accurate for moderate θ only.
pub fn mainardi_series(mu: f64, theta: f64, ctl: &SeriesControl) -> Result<f64> {
    check_mu(mu)?;
    if !(theta >= 0.0) {
        return Err(Error::InvalidArgument {
            name: "theta",
            value: theta,
            reason: "must be nonnegative",
        });
    }
    mainardi_series_estimate(mu, theta, ctl).map(|e| e.value)
}

/// Integral representation of ξ_μ(θ) obtained from Kanter's formula for the
/// one-sided stable density:
///
/// ξ_μ(θ) = θ^{μ/(1-μ)} / (π(1-μ)) ∫_0^π U(φ) exp(-θ^{1/(1-μ)} U(φ)) dφ
///
/// with U(φ) = (sin μφ / sin φ)^{1/(1-μ)} · sin((1-μ)φ) / sin μφ.
fn mainardi_integral(mu: f64, theta: f64) -> f64 {
    const PANELS: usize = 48;
    let (gl_x, gl_w) = gauss_legendre(16);
    let inv = 1.0 / (1.0 - mu);
    let c = theta.powf(inv);
    let mut acc = 0.0;
    for p in 0..PANELS {
        // the integrand has a boundary layer at φ = π when θ is small
        let lo = PI * (1.0 - (1.0 - p as f64 / PANELS as f64).powi(4));
        let hi = PI * (1.0 - (1.0 - (p + 1) as f64 / PANELS as f64).powi(4));
        let half = 0.5 * (hi - lo);
        let mid = 0.5 * (hi + lo);
        for (x, w) in gl_x.iter().zip(&gl_w) {
            let phi = mid + half * x;
            let ln_u = inv * ((mu * phi).sin().ln() - phi.sin().ln())
                + ((1.0 - mu) * phi).sin().ln()
                - (mu * phi).sin().ln();
            let u = ln_u.exp();
            acc += w * half * (ln_u - c * u).exp();
        }
    }
    theta.powf(mu * inv) * acc / (PI * (1.0 - mu))
}

/// Mainardi density ξ_μ(θ) = (1/μ) θ^{-1-1/μ} ϖ_μ(θ^{-1/μ}).
///
/// Uses the series while its cancellation estimate stays below 1e-13 and
/// switches to the integral representation beyond that.
pub fn mainardi_density(mu: f64, theta: f64, ctl: &SeriesControl) -> Result<f64> {
    check_mu(mu)?;
    if !(theta >= 0.0) || !theta.is_finite() {
        return Err(Error::InvalidArgument {
            name: "theta",
            value: theta,
            reason: "must be finite and nonnegative",
        });
    }
    match mainardi_series_estimate(mu, theta, ctl) {
        Ok(est) if est.error <= 1e-13 => Ok(est.value.max(0.0)),
        _ => Ok(mainardi_integral(mu, theta).max(0.0)),
    }
}

pub const DEFAULT_DENSITY_NODES: usize = 160;
const GL_PANEL_ORDER: usize = 8;

/// Fixed quadrature rule over (0, θ_max] for integrals against ξ_μ.
#[derive(Debug, Clone)]
pub struct DensityRule {
    mu: f64,
    theta_max: f64,
    nodes: Vec<f64>,
    weights: Vec<f64>,
    density: Vec<f64>,
}

impl DensityRule {
    pub fn new(mu: f64, n: usize) -> Result<Self> {
        check_mu(mu)?;
        if n < 8 {
            return Err(Error::InvalidArgument {
                name: "n",
                value: n as f64,
                reason: "density rule needs at least 8 nodes",
            });
        }
        let ctl = SeriesControl::default();
        let theta_max = truncation_point(mu, &ctl)?;

        let panels = n / GL_PANEL_ORDER;
        let extra = n % GL_PANEL_ORDER;
        let geo = panels / 4;
        let uniform = panels - geo;
        let mut breaks = Vec::with_capacity(panels + 1);
        breaks.push(0.0);
        let first = theta_max / uniform as f64;
        for k in (1..=geo).rev() {
            breaks.push(first * 0.25_f64.powi(k as i32));
        }
        for j in 1..=uniform {
            breaks.push(theta_max * j as f64 / uniform as f64);
        }

        let mut nodes = Vec::with_capacity(n);
        let mut weights = Vec::with_capacity(n);
        for (p, pair) in breaks.windows(2).enumerate() {
            let order = GL_PANEL_ORDER + usize::from(p < extra);
            let (gx, gw) = gauss_legendre(order);
            let half = 0.5 * (pair[1] - pair[0]);
            let mid = 0.5 * (pair[1] + pair[0]);
            for (x, w) in gx.iter().zip(&gw) {
                nodes.push(mid + half * x);
                weights.push(half * w);
            }
        }
        let density = nodes
            .iter()
            .map(|&t| mainardi_density(mu, t, &ctl))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            mu,
            theta_max,
            nodes,
            weights,
            density,
        })
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn theta_max(&self) -> f64 {
        self.theta_max
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// ξ_μ at the nodes.
    pub fn density(&self) -> &[f64] {
        &self.density
    }

    /// Σ w_i θ_i^r ξ_μ(θ_i), approximating Γ(1+r)/Γ(1+μr).
    pub fn moment(&self, r: f64) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .zip(&self.density)
            .map(|((t, w), d)| w * t.powf(r) * d)
            .sum()
    }

    /// Coefficients c_i = w_i μ θ_i ξ_μ(θ_i) of the subordination sum
    /// P(t) ≈ Σ c_i R(t^μ θ_i).
    pub fn subordination_weights(&self) -> Vec<f64> {
        self.nodes
            .iter()
            .zip(&self.weights)
            .zip(&self.density)
            .map(|((t, w), d)| w * self.mu * t * d)
            .collect()
    }
}

fn truncation_point(mu: f64, ctl: &SeriesControl) -> Result<f64> {
    let mut theta: f64 = 1.0;
    for _ in 0..2000 {
        if mainardi_density(mu, theta, ctl)? * theta < 1e-14 {
            return Ok(theta);
        }
        theta *= 1.05;
    }
    Err(Error::SeriesNonConvergence {
        what: "density truncation point",
        argument: theta,
        terms: 2000,
    })
}

/// Nodes and weights (θ_i, w_i) of the default-layout rule with `n` nodes.
pub fn density_nodes(mu: f64, n: usize) -> Result<Vec<(f64, f64)>> {
    let rule = DensityRule::new(mu, n)?;
    Ok(rule
        .nodes
        .iter()
        .copied()
        .zip(rule.weights.iter().copied())
        .collect())
}
