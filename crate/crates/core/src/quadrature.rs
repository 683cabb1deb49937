//! Time grids, piecewise trajectories in the weighted space PC_{1-λ}, and
//! product-integration rules for weakly singular kernels.

use std::sync::Arc;

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::operators::FractionalFamily;
use crate::specfun::{gamma, rgamma};

/// Gauss-Legendre nodes and weights on [-1, 1].
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let m = n.div_ceil(2);
    let nf = n as f64;
    for i in 0..m {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let mut p0 = 1.0;
            let mut p1 = 0.0;
            for j in 0..n {
                let p2 = p1;
                p1 = p0;
                p0 = ((2 * j + 1) as f64 * z * p1 - j as f64 * p2) / (j + 1) as f64;
            }
            dp = nf * (z * p0 - p1) / (z * z - 1.0);
            let dz = p0 / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        w[i] = 2.0 / ((1.0 - z * z) * dp * dp);
        w[n - 1 - i] = w[i];
    }
    (x, w)
}

/// ∫_0^x v^{a-1} dv-weighted hypergeometric series, valid for x ≤ 1/2.
fn beta_lower_series(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    let mut coef = 1.0;
    let mut xk = 1.0;
    let mut sum = 1.0 / a;
    for k in 0..500 {
        let kf = k as f64;
        coef *= (kf + 1.0 - b) / (kf + 1.0);
        xk *= x;
        let term = coef * xk / (a + kf + 1.0);
        sum += term;
        if term.abs() <= 1e-17 * sum.abs() {
            break;
        }
    }
    x.powf(a) * sum
}

/// Incomplete beta integral ∫_0^x v^{a-1}(1-v)^{b-1} dv (unregularized).
pub fn beta_partial(a: f64, b: f64, x: f64) -> f64 {
    beta_panel(a, b, 0.0, x)
}

/// ∫_{u0}^{u1} v^{a-1}(1-v)^{b-1} dv for 0 ≤ u0 ≤ u1 ≤ 1, evaluated without
/// forming the complete beta function, so narrow panels near either end
/// keep their relative accuracy.
pub fn beta_panel(a: f64, b: f64, u0: f64, u1: f64) -> f64 {
    debug_assert!(u0 <= u1);
    if u1 <= 0.5 {
        beta_lower_series(a, b, u1) - beta_lower_series(a, b, u0)
    } else if u0 >= 0.5 {
        beta_lower_series(b, a, 1.0 - u0) - beta_lower_series(b, a, 1.0 - u1)
    } else {
        (beta_lower_series(a, b, 0.5) - beta_lower_series(a, b, u0))
            + (beta_lower_series(b, a, 0.5) - beta_lower_series(b, a, 1.0 - u1))
    }
}

/// Left/right hat weights of ∫_a^b (t-s)^{β-1} ℓ(s) ds for a linear ℓ,
/// with t ≥ b.
pub fn kernel_hat_weights(beta: f64, t: f64, a: f64, b: f64) -> (f64, f64) {
    let h = b - a;
    if h <= 0.0 {
        return (0.0, 0.0);
    }
    let da = t - a;
    let db = t - b;
    if db > 8.0 * h {
        // smooth kernel on this panel
        const GL6_X: [f64; 6] = [
            -0.932_469_514_203_152,
            -0.661_209_386_466_264_5,
            -0.238_619_186_083_196_9,
            0.238_619_186_083_196_9,
            0.661_209_386_466_264_5,
            0.932_469_514_203_152,
        ];
        const GL6_W: [f64; 6] = [
            0.171_324_492_379_170_3,
            0.360_761_573_048_138_6,
            0.467_913_934_572_691_1,
            0.467_913_934_572_691_1,
            0.360_761_573_048_138_6,
            0.171_324_492_379_170_3,
        ];
        let mut wl = 0.0;
        let mut wr = 0.0;
        for (x, w) in GL6_X.iter().zip(GL6_W.iter()) {
            let frac = 0.5 * (x + 1.0);
            let s = a + h * frac;
            let k = (t - s).powf(beta - 1.0) * w * 0.5 * h;
            wl += k * (1.0 - frac);
            wr += k * frac;
        }
        return (wl, wr);
    }
    let pa = da.powf(beta);
    let pb = db.powf(beta);
    let m0 = (pa - pb) / beta;
    let m1 = da * m0 - (pa * da - pb * db) / (beta + 1.0);
    (m0 - m1 / h, m1 / h)
}

/// Product-trapezoid weights w_j with
/// ∫_0^{s_n} (s_n - s)^{β-1} f(s) ds ≈ Σ_j w_j f(s_j), for f linear between nodes.
pub fn product_trapezoid_weights(beta: f64, nodes: &[f64], eval: usize) -> Vec<f64> {
    let t = nodes[eval];
    let mut w = vec![0.0; eval + 1];
    for j in 0..eval {
        let (l, r) = kernel_hat_weights(beta, t, nodes[j], nodes[j + 1]);
        w[j] += l;
        w[j + 1] += r;
    }
    w
}

/// Weights c_j such that
/// ∫_0^τ (τ-s)^{α-1} s^{μ-1} p(s) ds ≈ Σ_j c_j p(s_j)
/// for p linear in s^μ between nodes; both endpoint singularities are
/// integrated exactly. P*_μ(s) is a smooth function of s^μ, so this basis
/// keeps full accuracy on the first panels of a graded grid, where p is
/// far from linear in s. `nodes` must start at 0 and end at τ.
pub fn singular_product_weights(alpha: f64, mu: f64, nodes: &[f64]) -> Vec<f64> {
    let n = nodes.len() - 1;
    let tau = nodes[n];
    let scale0 = tau.powf(alpha + mu - 1.0);
    // One-sided incomplete beta values per node, so each panel is a
    // difference of two values taken on the same side of 1/2.
    let side = |a: f64, b: f64| -> (Vec<f64>, f64, f64) {
        let vals = nodes
            .iter()
            .enumerate()
            .map(|(j, s)| {
                let u = if j == n { 1.0 } else { s / tau };
                if u <= 0.5 {
                    beta_lower_series(a, b, u)
                } else {
                    beta_lower_series(b, a, 1.0 - u)
                }
            })
            .collect();
        (
            vals,
            beta_lower_series(a, b, 0.5),
            beta_lower_series(b, a, 0.5),
        )
    };
    let panel = |tab: &(Vec<f64>, f64, f64), j: usize| -> f64 {
        let (vals, lo_half, hi_half) = tab;
        let u0 = nodes[j] / tau;
        let u1 = if j + 1 == n { 1.0 } else { nodes[j + 1] / tau };
        if u1 <= 0.5 {
            vals[j + 1] - vals[j]
        } else if u0 > 0.5 {
            vals[j] - vals[j + 1]
        } else {
            (lo_half - vals[j]) + (hi_half - vals[j + 1])
        }
    };
    let f0 = side(mu, alpha);
    let f1 = side(2.0 * mu, alpha);
    let sigma: Vec<f64> = nodes.iter().map(|s| s.powf(mu)).collect();
    let scale1 = scale0 * sigma[n];
    let mut c = vec![0.0; n + 1];
    for j in 0..n {
        let h = sigma[j + 1] - sigma[j];
        if h <= 0.0 {
            continue;
        }
        let m0 = scale0 * panel(&f0, j);
        let ms = scale1 * panel(&f1, j);
        let m1 = ms - sigma[j] * m0;
        c[j] += m0 - m1 / h;
        c[j + 1] += m1 / h;
    }
    c
}

/// Graded nodes 0 = s_0 < … < s_m = τ with s_j = τ (j/m)^q.
pub fn graded_nodes(tau: f64, m: usize, q: f64) -> Vec<f64> {
    (0..=m)
        .map(|j| {
            if j == m {
                tau
            } else {
                tau * (j as f64 / m as f64).powf(q)
            }
        })
        .collect()
}

/// Grid over [0, T] with every impulse time as a node and nodes graded
/// toward the left end of each impulse subinterval.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    horizon: f64,
    lambda: f64,
    weight_exponent: f64,
    grading: f64,
    per_segment: usize,
    nodes: Vec<f64>,
    segment_of: Vec<usize>,
    segment_starts: Vec<f64>,
    impulse_indices: Vec<usize>,
}

pub const DEFAULT_NODES_PER_SEGMENT: usize = 512;

impl TimeGrid {
    /// `weight_exponent` is 1 - λ, passed separately so λ = 1 stays exact.
    pub fn new(
        horizon: f64,
        impulse_times: &[f64],
        per_segment: usize,
        weight_exponent: f64,
    ) -> Result<Self> {
        if !(horizon > 0.0) || !horizon.is_finite() {
            return Err(Error::InvalidGrid(format!(
                "horizon must be positive, got {horizon}"
            )));
        }
        if per_segment < 2 {
            return Err(Error::InvalidGrid(
                "need at least 2 nodes per segment".into(),
            ));
        }
        if !(0.0..1.0).contains(&weight_exponent) {
            return Err(Error::InvalidGrid(format!(
                "weight exponent 1 - lambda must lie in [0, 1), got {weight_exponent}"
            )));
        }
        let mut prev = 0.0;
        for &t in impulse_times {
            if !(t > prev) || !(t < horizon) {
                return Err(Error::InvalidGrid(format!(
                    "impulse times must increase strictly inside (0, T); offending t = {t}"
                )));
            }
            prev = t;
        }
        let lambda = 1.0 - weight_exponent;
        let grading = f64::max(2.0, 1.0 / lambda);
        let mut segment_starts = vec![0.0];
        segment_starts.extend_from_slice(impulse_times);
        let mut ends = impulse_times.to_vec();
        ends.push(horizon);

        let mut nodes = vec![0.0];
        let mut segment_of = vec![0];
        let mut impulse_indices = Vec::with_capacity(impulse_times.len());
        for (k, (&a, &b)) in segment_starts.iter().zip(&ends).enumerate() {
            for j in 1..=per_segment {
                let t = if j == per_segment {
                    b
                } else {
                    a + (b - a) * (j as f64 / per_segment as f64).powf(grading)
                };
                nodes.push(t);
                segment_of.push(k);
            }
            if k < impulse_times.len() {
                impulse_indices.push(nodes.len() - 1);
            }
        }
        Ok(Self {
            horizon,
            lambda,
            weight_exponent,
            grading,
            per_segment,
            nodes,
            segment_of,
            segment_starts,
            impulse_indices,
        })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn weight_exponent(&self) -> f64 {
        self.weight_exponent
    }

    pub fn grading(&self) -> f64 {
        self.grading
    }

    pub fn per_segment(&self) -> usize {
        self.per_segment
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn impulse_indices(&self) -> &[usize] {
        &self.impulse_indices
    }

    pub fn impulse_count(&self) -> usize {
        self.impulse_indices.len()
    }

    /// Left ends t_0 = 0, t_1, …, t_l of the subintervals.
    pub fn segment_starts(&self) -> &[f64] {
        &self.segment_starts
    }

    /// Subinterval index k with node n ∈ (t_k, t_{k+1}]; node 0 maps to 0.
    pub fn segment_of(&self, n: usize) -> usize {
        self.segment_of[n]
    }

    /// True when the node is t_0 or an impulse time, i.e. the left end of
    /// some subinterval.
    pub fn is_segment_start(&self, n: usize) -> bool {
        n == 0 || self.impulse_indices.binary_search(&n).is_ok()
    }

    /// (t_n - t_k)^{1-λ} for the subinterval that owns node n.
    pub fn weight(&self, n: usize) -> f64 {
        let d = self.nodes[n] - self.segment_starts[self.segment_of[n]];
        if self.weight_exponent == 0.0 {
            1.0
        } else {
            d.powf(self.weight_exponent)
        }
    }
}

/// Left and right weighted limits at an impulse time t_k. The left value is
/// weighted with the preceding subinterval, (t_k - t_{k-1})^{1-λ} x(t_k),
/// and the right value is lim_{t→t_k⁺} (t - t_k)^{1-λ} x(t).
#[derive(Debug, Clone, PartialEq)]
pub struct JumpRecord {
    pub time: f64,
    pub left: Vec<f64>,
    pub right: Vec<f64>,
}

/// Grid function in PC_{1-λ}, stored as weighted values
/// (t_n - t_k)^{1-λ} x(t_n). Node 0 holds the weighted right limit at t = 0.
#[derive(Debug, Clone, PartialEq)]
pub struct PcTrajectory {
    grid: Arc<TimeGrid>,
    dim: usize,
    weighted: Vec<f64>,
    jumps: Vec<JumpRecord>,
}

impl PcTrajectory {
    pub fn from_weighted(
        grid: Arc<TimeGrid>,
        dim: usize,
        weighted: Vec<f64>,
        jumps: Vec<JumpRecord>,
    ) -> Result<Self> {
        if weighted.len() != grid.len() * dim {
            return Err(Error::DimensionMismatch {
                expected: grid.len() * dim,
                found: weighted.len(),
            });
        }
        if jumps.len() != grid.impulse_count() {
            return Err(Error::DimensionMismatch {
                expected: grid.impulse_count(),
                found: jumps.len(),
            });
        }
        if let Some(n) = weighted.iter().position(|v| !v.is_finite()) {
            let node = n / dim.max(1);
            return Err(Error::NonFinite {
                source_name: "trajectory",
                node,
                t: grid.nodes()[node],
            });
        }
        Ok(Self {
            grid,
            dim,
            weighted,
            jumps,
        })
    }

    /// Trajectory whose weighted value is the same vector everywhere, i.e.
    /// x(t) = (t - t_k)^{λ-1} v on each subinterval.
    pub fn constant_weighted(grid: Arc<TimeGrid>, value: &[f64]) -> Self {
        let dim = value.len();
        let weighted = value.repeat(grid.len());
        let jumps = grid
            .impulse_indices()
            .iter()
            .map(|&i| JumpRecord {
                time: grid.nodes()[i],
                left: value.to_vec(),
                right: value.to_vec(),
            })
            .collect();
        Self {
            grid,
            dim,
            weighted,
            jumps,
        }
    }

    pub fn zeros(grid: Arc<TimeGrid>, dim: usize) -> Self {
        Self::constant_weighted(grid, &vec![0.0; dim])
    }

    /// Samples raw values x(t_n) for n ≥ 1 from `raw`, and takes the
    /// weighted right limits at t_0 and each impulse from `right_limit`.
    pub fn from_raw_fn<F, R>(
        grid: Arc<TimeGrid>,
        dim: usize,
        raw: F,
        right_limit: R,
    ) -> Result<Self>
    where
        F: Fn(f64) -> Vec<f64>,
        R: Fn(usize) -> Vec<f64>,
    {
        let mut weighted = Vec::with_capacity(grid.len() * dim);
        weighted.extend(right_limit(0));
        for n in 1..grid.len() {
            let w = grid.weight(n);
            weighted.extend(raw(grid.nodes()[n]).into_iter().map(|v| v * w));
        }
        let jumps = grid
            .impulse_indices()
            .iter()
            .enumerate()
            .map(|(k, &i)| JumpRecord {
                time: grid.nodes()[i],
                left: weighted[i * dim..(i + 1) * dim].to_vec(),
                right: right_limit(k + 1),
            })
            .collect();
        Self::from_weighted(grid, dim, weighted, jumps)
    }

    pub fn grid(&self) -> &Arc<TimeGrid> {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn weighted(&self) -> &[f64] {
        &self.weighted
    }

    pub fn weighted_at(&self, n: usize) -> &[f64] {
        &self.weighted[n * self.dim..(n + 1) * self.dim]
    }

    /// x(t_n) for n ≥ 1. At an impulse node this is the left value x(t_k).
    pub fn raw_at(&self, n: usize) -> Vec<f64> {
        let w = self.grid.weight(n);
        self.weighted_at(n).iter().map(|v| v / w).collect()
    }

    pub fn jumps(&self) -> &[JumpRecord] {
        &self.jumps
    }

    /// Weighted right limit at t_k, k = 0 being the initial point.
    pub fn right_limit(&self, k: usize) -> &[f64] {
        if k == 0 {
            self.weighted_at(0)
        } else {
            &self.jumps[k - 1].right
        }
    }

    /// Weighted jump of I^{1-λ}x scaled by 1/Γ(λ) at impulse k ≥ 1: the
    /// right limit alone when λ < 1, right minus left when λ = 1.
    pub fn weighted_jump(&self, k: usize) -> Vec<f64> {
        let rec = &self.jumps[k - 1];
        if self.grid.weight_exponent() == 0.0 {
            rec.right
                .iter()
                .zip(&rec.left)
                .map(|(r, l)| r - l)
                .collect()
        } else {
            rec.right.clone()
        }
    }

    fn check_same_grid(&self, other: &Self) -> Result<()> {
        if !(Arc::ptr_eq(&self.grid, &other.grid) || self.grid == other.grid) {
            return Err(Error::GridMismatch);
        }
        if self.dim != other.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: other.dim,
            });
        }
        Ok(())
    }

    /// a·self + b·other, including jump records.
    pub fn lin_comb(&self, a: f64, other: &Self, b: f64) -> Result<Self> {
        self.check_same_grid(other)?;
        let mix = |u: &[f64], v: &[f64]| -> Vec<f64> {
            u.iter().zip(v).map(|(x, y)| a * x + b * y).collect()
        };
        Ok(Self {
            grid: self.grid.clone(),
            dim: self.dim,
            weighted: mix(&self.weighted, &other.weighted),
            jumps: self
                .jumps
                .iter()
                .zip(&other.jumps)
                .map(|(p, q)| JumpRecord {
                    time: p.time,
                    left: mix(&p.left, &q.left),
                    right: mix(&p.right, &q.right),
                })
                .collect(),
        })
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.lin_comb(1.0, other, -1.0)
    }

    /// Every stored weighted entry: nodes followed by right limits.
    pub(crate) fn entries(&self) -> impl Iterator<Item = f64> + '_ {
        self.weighted
            .iter()
            .copied()
            .chain(self.jumps.iter().flat_map(|j| j.right.iter().copied()))
    }
}

/// max_k sup_{t ∈ (t_k, t_{k+1}]} (t - t_k)^{1-λ} ‖x(t)‖_∞, with the
/// right-limit records standing in for the left end of each subinterval.
pub fn weighted_norm(x: &PcTrajectory) -> f64 {
    x.entries().fold(0.0, |m, v| m.max(v.abs()))
}

/// (1/Γ(α)) ∫_0^{t} (t-s)^{α-1} f(s) ds at t = nodes[eval], product
/// trapezoid with f interpolated linearly between nodes.
pub fn frac_integral(alpha: f64, nodes: &[f64], samples: &[f64], eval: usize) -> Result<f64> {
    if !(alpha > 0.0) {
        return Err(Error::InvalidArgument {
            name: "alpha",
            value: alpha,
            reason: "fractional order must be positive",
        });
    }
    if nodes.len() != samples.len() || eval >= nodes.len() {
        return Err(Error::DimensionMismatch {
            expected: nodes.len(),
            found: samples.len(),
        });
    }
    let w = product_trapezoid_weights(alpha, nodes, eval);
    let acc: f64 = w.iter().zip(samples).map(|(w, f)| w * f).sum();
    Ok(acc * rgamma(alpha))
}

/// One panel of the discrete Volterra convolution for output node `eval`:
/// P*_μ is frozen at `lag` and multiplies Σ coef·h(node).
#[derive(Debug, Clone, PartialEq)]
pub struct VolterraPanel {
    pub lag: f64,
    pub terms: Vec<(usize, f64)>,
}

/// Mean of τ over [lo, hi] under the weight τ^{μ-1}; freezing P*_μ there
/// removes the first-order error of the frozen-operator rule.
fn kernel_mean_lag(mu: f64, hi: f64, lo: f64) -> f64 {
    let mid = 0.5 * (hi + lo);
    let half = 0.5 * (hi - lo);
    if half <= 1e-3 * mid {
        // nearly uniform weight: mean ≈ midpoint + (μ-1) half² / (3 mid)
        return mid + (mu - 1.0) * half * half / (3.0 * mid);
    }
    mu / (mu + 1.0) * (hi.powf(mu + 1.0) - lo.powf(mu + 1.0)) / (hi.powf(mu) - lo.powf(mu))
}

/// Weights for ∫_B^A τ^{μ-1} P(τ) ℓ(τ) dτ with P linear in τ^μ and ℓ
/// linear in τ: entry [x][y] pairs P at lag x (0 = A, 1 = B) with the
/// value of ℓ at lag y. Evaluated on the interval rescaled to unit width.
fn near_panel_weights(mu: f64, big: f64, small: f64) -> [[f64; 2]; 2] {
    let width = big - small;
    let b = small / width;
    let a = b + 1.0;
    let m = |p: f64| (a.powf(p + 1.0) - b.powf(p + 1.0)) / (p + 1.0);
    let (m_a, m_b, m_c, m_d) = (m(2.0 * mu), m(2.0 * mu - 1.0), m(mu), m(mu - 1.0));
    // ∫ τ^{μ-1} (τ^μ - c1)(τ - c2) dτ
    let moment = |c1: f64, c2: f64| m_a - c2 * m_b - c1 * m_c + c1 * c2 * m_d;
    let (sa, sb) = (a.powf(mu), b.powf(mu));
    let ds = sa - sb;
    let scale = width.powf(mu) / ds;
    [
        [scale * moment(sb, b), -scale * moment(sb, a)],
        [-scale * moment(sa, b), scale * moment(sa, a)],
    ]
}

/// Panels approximating ∫_0^{t_n} (t_n - s)^{μ-1} P*_μ(t_n - s) h(s) ds.
///
/// Ordinary panels use exact kernel moments against linear h. The first
/// panel of each subinterval interpolates the weighted forcing
/// (s - t_k)^{1-λ} h(s) by its value at the right node and integrates
/// (t_n - s)^{μ-1}(s - t_k)^{λ-1} exactly, so h may blow up like
/// (s - t_k)^{λ-1} after t_k.
///
/// P*_μ(τ) is a smooth function of τ^μ but not of τ. Panels within a few
/// widths of τ = 0 therefore interpolate P*_μ linearly in τ^μ between the
/// two end lags; farther panels freeze it at the kernel mean lag.
pub fn volterra_panels(grid: &TimeGrid, mu: f64, eval: usize) -> Vec<VolterraPanel> {
    let nodes = grid.nodes();
    let t = nodes[eval];
    let lambda = grid.lambda();
    let mut panels = Vec::with_capacity(eval + 8);
    for j in 0..eval {
        let (a, b) = (nodes[j], nodes[j + 1]);
        let (lag_a, lag_b) = (t - a, if j + 1 == eval { 0.0 } else { t - b });
        let near = lag_b < 8.0 * (b - a);
        if grid.is_segment_start(j) {
            let right = grid.weight(j + 1);
            let d = lag_a;
            let u1 = if j + 1 == eval { 1.0 } else { (b - a) / d };
            // ∫ (t-s)^{p-1} (s-t_k)^{λ-1} ds over the panel, or without the
            // second factor when λ = 1
            let moment = |p: f64| {
                if grid.weight_exponent() == 0.0 {
                    (lag_a.powf(p) - lag_b.powf(p)) / p
                } else {
                    d.powf(p + lambda - 1.0) * beta_panel(lambda, p, 0.0, u1)
                }
            };
            if near {
                let (sa, sb) = (lag_a.powf(mu), lag_b.powf(mu));
                let (j1, j2) = (moment(mu), moment(2.0 * mu));
                let ds = sa - sb;
                panels.push(VolterraPanel {
                    lag: lag_a,
                    terms: vec![(j + 1, (j2 - sb * j1) / ds * right)],
                });
                panels.push(VolterraPanel {
                    lag: lag_b,
                    terms: vec![(j + 1, (sa * j1 - j2) / ds * right)],
                });
            } else {
                panels.push(VolterraPanel {
                    lag: kernel_mean_lag(mu, lag_a, lag_b),
                    terms: vec![(j + 1, moment(mu) * right)],
                });
            }
        } else if near {
            let w = near_panel_weights(mu, lag_a, lag_b);
            panels.push(VolterraPanel {
                lag: lag_a,
                terms: vec![(j, w[0][0]), (j + 1, w[0][1])],
            });
            panels.push(VolterraPanel {
                lag: lag_b,
                terms: vec![(j, w[1][0]), (j + 1, w[1][1])],
            });
        } else {
            let (wl, wr) = kernel_hat_weights(mu, t, a, b);
            panels.push(VolterraPanel {
                lag: kernel_mean_lag(mu, lag_a, lag_b),
                terms: vec![(j, wl), (j + 1, wr)],
            });
        }
    }
    panels
}

/// ∫_0^{t_n} (t_n - s)^{μ-1} P*_μ(t_n - s) h(s) ds for raw forcing samples
/// h(t_j) given at every node (entry 0 is ignored).
pub fn volterra_convolve(
    family: &FractionalFamily,
    grid: &TimeGrid,
    forcing: &[DVector<f64>],
    eval: usize,
) -> Result<DVector<f64>> {
    let dim = family.dim();
    if forcing.len() != grid.len() {
        return Err(Error::DimensionMismatch {
            expected: grid.len(),
            found: forcing.len(),
        });
    }
    let mut out = DVector::zeros(dim);
    if eval == 0 {
        return Ok(out);
    }
    for panel in volterra_panels(grid, family.order().mu(), eval) {
        let mut h = DVector::zeros(dim);
        for &(node, coef) in &panel.terms {
            h.axpy(coef, &forcing[node], 1.0);
        }
        out += family.p_apply(panel.lag, &h)?;
    }
    Ok(out)
}

/// Right-hand side of the generalized Gronwall inequality,
/// a(t) + Σ_{n≥1} (bΓ(β))^n I^{nβ} a(t),
/// evaluated at nodes[eval] with a given by samples on `nodes`.
pub fn gronwall_bound(
    nodes: &[f64],
    a_samples: &[f64],
    b: f64,
    beta: f64,
    eval: usize,
) -> Result<f64> {
    if !(b >= 0.0) {
        return Err(Error::InvalidArgument {
            name: "b",
            value: b,
            reason: "must be nonnegative",
        });
    }
    if !(beta > 0.0) {
        return Err(Error::InvalidArgument {
            name: "beta",
            value: beta,
            reason: "must be positive",
        });
    }
    if let Some(&bad) = a_samples.iter().find(|v| !(**v >= 0.0)) {
        return Err(Error::InvalidArgument {
            name: "a_samples",
            value: bad,
            reason: "must be nonnegative",
        });
    }
    let base = a_samples[eval];
    if b == 0.0 {
        return Ok(base);
    }
    let factor = b * gamma(beta)?;
    let mut sum = base;
    let mut power = 1.0;
    for n in 1..=2000 {
        power *= factor;
        let term = power * frac_integral(n as f64 * beta, nodes, a_samples, eval)?;
        sum += term;
        if term.abs() <= 1e-14 * sum.abs() || (term == 0.0 && n > 1) {
            return Ok(sum);
        }
    }
    Err(Error::SeriesNonConvergence {
        what: "Gronwall series",
        argument: nodes[eval],
        terms: 2000,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        let (x, w) = gauss_legendre(5);
        let i: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(8)).sum();
        assert!((i - 2.0 / 9.0).abs() < 1e-14);
    }

    #[test]
    fn beta_panel_complete_integral() {
        // B(0.5, 0.5) = π
        let b = beta_panel(0.5, 0.5, 0.0, 1.0);
        assert!((b - std::f64::consts::PI).abs() < 1e-13);
        let b = beta_panel(2.0, 3.0, 0.0, 1.0);
        assert!((b - 1.0 / 12.0).abs() < 1e-15);
    }

    #[test]
    fn frac_integral_zero_and_unit() {
        let nodes = graded_nodes(1.0, 64, 2.0);
        let zeros = vec![0.0; nodes.len()];
        assert_eq!(frac_integral(0.5, &nodes, &zeros, 64).unwrap(), 0.0);
        let ones = vec![1.0; nodes.len()];
        let v = frac_integral(1.0, &nodes, &ones, 64).unwrap();
        assert!((v - 1.0).abs() < 1e-14);
        assert!(frac_integral(0.0, &nodes, &ones, 64).is_err());
    }

    #[test]
    fn grid_places_impulses_on_nodes() {
        let g = TimeGrid::new(1.0, &[0.25, 0.6], 16, 0.25).unwrap();
        assert_eq!(g.len(), 1 + 3 * 16);
        assert_eq!(g.nodes()[g.impulse_indices()[0]], 0.25);
        assert_eq!(g.nodes()[g.impulse_indices()[1]], 0.6);
        assert_eq!(*g.nodes().last().unwrap(), 1.0);
        assert!(g.nodes().windows(2).all(|w| w[0] < w[1]));
        assert_eq!(g.segment_of(g.impulse_indices()[0]), 0);
        assert_eq!(g.segment_of(g.impulse_indices()[0] + 1), 1);
        assert!(TimeGrid::new(1.0, &[0.5, 0.4], 16, 0.0).is_err());
        assert!(TimeGrid::new(1.0, &[1.0], 16, 0.0).is_err());
    }

    #[test]
    fn weighted_norm_basic_cases() {
        let grid = Arc::new(TimeGrid::new(1.0, &[], 32, 0.0).unwrap());
        assert_eq!(weighted_norm(&PcTrajectory::zeros(grid.clone(), 2)), 0.0);
        // λ = 1: plain sup norm
        let x =
            PcTrajectory::from_raw_fn(grid.clone(), 1, |t| vec![-3.0 * t], |_| vec![0.0]).unwrap();
        assert!((weighted_norm(&x) - 3.0).abs() < 1e-15);
        // weight cancels t^{λ-1}
        let lam = 0.6;
        let grid = Arc::new(TimeGrid::new(1.0, &[], 32, 1.0 - lam).unwrap());
        let x =
            PcTrajectory::from_raw_fn(grid, 1, |t| vec![t.powf(lam - 1.0)], |_| vec![1.0]).unwrap();
        assert!((weighted_norm(&x) - 1.0).abs() < 1e-14);
    }

    #[test]
    fn gronwall_trivial_cases() {
        let nodes = graded_nodes(1.0, 32, 1.0);
        let a = vec![0.7; nodes.len()];
        assert_eq!(gronwall_bound(&nodes, &a, 0.0, 0.5, 20).unwrap(), 0.7);
        let z = vec![0.0; nodes.len()];
        assert_eq!(gronwall_bound(&nodes, &z, 0.5, 0.5, 20).unwrap(), 0.0);
        let neg = vec![-1.0; nodes.len()];
        assert!(gronwall_bound(&nodes, &neg, 0.5, 0.5, 20).is_err());
    }
}
