//! Finite-dimensional semigroups e^{-tA}, their shifted versions
//! R(t) = e^{-Ct}Q(t), and the subordinated families P*_μ, K*_μ, S*_{μ,ν}.

use nalgebra::{Complex, DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::quadrature::{graded_nodes, singular_product_weights};
use crate::specfun::{rgamma, DensityRule, DEFAULT_DENSITY_NODES};

/// Matrix A of the abstract problem x' = -Ax, with an optional symmetric
/// fast path through the eigendecomposition.
#[derive(Debug, Clone)]
pub struct Generator {
    a: DMatrix<f64>,
    symmetric: bool,
    eigen: Option<(DVector<f64>, DMatrix<f64>)>,
}

impl Generator {
    pub fn new(a: DMatrix<f64>, symmetric: bool) -> Result<Self> {
        if a.nrows() == 0 || !a.is_square() {
            return Err(Error::DimensionMismatch {
                expected: a.nrows(),
                found: a.ncols(),
            });
        }
        if let Some(v) = a.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument {
                name: "A",
                value: *v,
                reason: "generator entries must be finite",
            });
        }
        let eigen = if symmetric {
            let scale = a.amax().max(1.0);
            let asym = (&a - a.transpose()).amax();
            if asym > 1e-12 * scale {
                return Err(Error::InvalidArgument {
                    name: "A",
                    value: asym,
                    reason: "matrix flagged symmetric is not symmetric",
                });
            }
            let eig = SymmetricEigen::new(a.clone());
            Some((eig.eigenvalues, eig.eigenvectors))
        } else {
            None
        };
        Ok(Self {
            a,
            symmetric,
            eigen,
        })
    }

    pub fn scalar(a: f64) -> Result<Self> {
        Self::new(DMatrix::from_element(1, 1, a), true)
    }

    pub fn zero(dim: usize) -> Result<Self> {
        Self::new(DMatrix::zeros(dim, dim), true)
    }

    pub fn dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn is_symmetric(&self) -> bool {
        self.symmetric
    }

    /// Ascending eigenvalues when the generator is symmetric.
    pub fn eigenvalues(&self) -> Option<Vec<f64>> {
        self.eigen.as_ref().map(|(e, _)| {
            let mut v: Vec<f64> = e.iter().copied().collect();
            v.sort_by(f64::total_cmp);
            v
        })
    }

    fn check_state(&self, x: &DVector<f64>) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: x.len(),
            });
        }
        Ok(())
    }
}

/// Orders μ ∈ (0,1), ν ∈ [0,1] and the derived λ = μ + ν - μν.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FractionalOrder {
    mu: f64,
    nu: f64,
    lambda: f64,
    weight_exponent: f64,
}

impl FractionalOrder {
    pub fn new(mu: f64, nu: f64) -> Result<Self> {
        if !(mu > 0.0 && mu < 1.0) {
            return Err(Error::InvalidArgument {
                name: "mu",
                value: mu,
                reason: "must lie in (0, 1)",
            });
        }
        if !(0.0..=1.0).contains(&nu) {
            return Err(Error::InvalidArgument {
                name: "nu",
                value: nu,
                reason: "must lie in [0, 1]",
            });
        }
        let weight_exponent = (1.0 - mu) * (1.0 - nu);
        Ok(Self {
            mu,
            nu,
            lambda: 1.0 - weight_exponent,
            weight_exponent,
        })
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn nu(&self) -> f64 {
        self.nu
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// 1 - λ = (1-μ)(1-ν), exactly zero when ν = 1.
    pub fn weight_exponent(&self) -> f64 {
        self.weight_exponent
    }

    /// Order ν(1-μ) of the integral taking K_μ to S_{μ,ν}.
    pub fn s_integral_order(&self) -> f64 {
        self.nu * (1.0 - self.mu)
    }
}

/// Constants M* (bound on ‖R(t)‖) and Ñ (normality constant of the cone).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OperatorBounds {
    pub m_star: f64,
    pub n_tilde: f64,
}

impl OperatorBounds {
    pub fn new(m_star: f64, n_tilde: f64) -> Result<Self> {
        if !(m_star >= 1.0) {
            return Err(Error::InvalidArgument {
                name: "m_star",
                value: m_star,
                reason: "must be at least 1",
            });
        }
        if !(n_tilde >= 1.0) {
            return Err(Error::InvalidArgument {
                name: "n_tilde",
                value: n_tilde,
                reason: "must be at least 1",
            });
        }
        Ok(Self { m_star, n_tilde })
    }
}

fn check_time(name: &'static str, t: f64, strict: bool) -> Result<()> {
    let ok = t.is_finite() && if strict { t > 0.0 } else { t >= 0.0 };
    if ok {
        Ok(())
    } else {
        Err(Error::InvalidArgument {
            name,
            value: t,
            reason: if strict {
                "must be positive"
            } else {
                "must be nonnegative"
            },
        })
    }
}

fn finite_or_overflow(v: DVector<f64>, t: f64) -> Result<DVector<f64>> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(v)
    } else {
        Err(Error::ExponentialOverflow { t })
    }
}

/// Q(t)x = e^{-tA}x.
pub fn semigroup_apply(gen: &Generator, t: f64, x: &DVector<f64>) -> Result<DVector<f64>> {
    gen.check_state(x)?;
    check_time("t", t, false)?;
    if t == 0.0 {
        return Ok(x.clone());
    }
    let y = match &gen.eigen {
        Some((vals, vecs)) => {
            let mut w = vecs.tr_mul(x);
            for (wj, lj) in w.iter_mut().zip(vals.iter()) {
                *wj *= (-t * lj).exp();
            }
            vecs * w
        }
        None => (&gen.a * (-t)).exp() * x,
    };
    finite_or_overflow(y, t)
}

/// R(t)x = e^{-Ct}Q(t)x.
pub fn perturbed_semigroup_apply(
    gen: &Generator,
    c: f64,
    t: f64,
    x: &DVector<f64>,
) -> Result<DVector<f64>> {
    check_shift(c)?;
    Ok(semigroup_apply(gen, t, x)? * (-c * t).exp())
}

fn check_shift(c: f64) -> Result<()> {
    if c >= 0.0 && c.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument {
            name: "C",
            value: c,
            reason: "shift must be finite and nonnegative",
        })
    }
}

#[derive(Debug, Clone)]
enum Spectrum {
    /// Eigenvalues of A + CI and orthonormal eigenvectors; blocks are
    /// diagonal in eigen coordinates.
    Real { modes: Vec<f64>, vecs: DMatrix<f64> },
    /// Complex diagonalization V diag(modes) V^{-1} of A + CI; blocks are
    /// full real matrices in the original coordinates.
    Complex {
        modes: Vec<Complex<f64>>,
        v: DMatrix<Complex<f64>>,
        vinv: DMatrix<Complex<f64>>,
    },
    /// A + CI with no usable eigenbasis; each block sums matrix exponentials.
    Dense { shifted: DMatrix<f64> },
}

fn diagonalize(b: &DMatrix<f64>) -> Option<Spectrum> {
    let n = b.nrows();
    let eig = b.complex_eigenvalues();
    let bc = b.map(|v| Complex::new(v, 0.0));
    let mut v = DMatrix::<Complex<f64>>::zeros(n, n);
    for (k, lam) in eig.iter().enumerate() {
        let mut m = bc.clone();
        for i in 0..n {
            m[(i, i)] -= lam;
        }
        let svd = m.svd(false, true);
        let vt = svd.v_t?;
        let imin = svd.singular_values.imin();
        for i in 0..n {
            v[(i, k)] = vt[(imin, i)].conj();
        }
    }
    let sv = v.clone().svd(false, false).singular_values;
    if !(sv.min() > 1e-8 * sv.max()) {
        return None;
    }
    let vinv = v.clone().try_inverse()?;
    let d = DMatrix::from_diagonal(&eig);
    let err = (&v * d * &vinv - &bc).map(|z| z.norm()).max();
    if !(err <= 1e-10 * b.amax().max(1.0)) {
        return None;
    }
    Some(Spectrum::Complex {
        modes: eig.iter().copied().collect(),
        v,
        vinv,
    })
}

/// Subordinated operator families of -(A + CI) for one fractional order.
///
/// P*_μ(τ) = Σ_i c_i R(τ^μ θ_i) with the subordination weights of a
/// [`DensityRule`]. Operators are handled as flat "blocks" acting on work
/// coordinates: diagonal multipliers in the eigenbasis for symmetric
/// generators, full matrices otherwise.
#[derive(Debug, Clone)]
pub struct FractionalFamily {
    dim: usize,
    c: f64,
    order: FractionalOrder,
    theta: Vec<f64>,
    weights: Vec<f64>,
    kappa: f64,
    spectrum: Spectrum,
    s_nodes: usize,
}

pub const DEFAULT_S_NODES: usize = 512;

impl FractionalFamily {
    pub fn new(gen: &Generator, c: f64, order: FractionalOrder) -> Result<Self> {
        Self::with_density_nodes(gen, c, order, DEFAULT_DENSITY_NODES)
    }

    pub fn with_density_nodes(
        gen: &Generator,
        c: f64,
        order: FractionalOrder,
        density_nodes: usize,
    ) -> Result<Self> {
        check_shift(c)?;
        let rule = DensityRule::new(order.mu(), density_nodes)?;
        let weights = rule.subordination_weights();
        let kappa = weights.iter().sum();
        let dim = gen.dim();
        let spectrum = match &gen.eigen {
            Some((vals, vecs)) => Spectrum::Real {
                modes: vals.iter().map(|l| l + c).collect(),
                vecs: vecs.clone(),
            },
            None => {
                let shifted = &gen.a + DMatrix::identity(dim, dim) * c;
                diagonalize(&shifted).unwrap_or(Spectrum::Dense { shifted })
            }
        };
        Ok(Self {
            dim,
            c,
            order,
            theta: rule.nodes().to_vec(),
            weights,
            kappa,
            spectrum,
            s_nodes: DEFAULT_S_NODES,
        })
    }

    /// Number of subgrid nodes used by [`FractionalFamily::s_apply`].
    pub fn with_s_nodes(mut self, m: usize) -> Self {
        self.s_nodes = m.max(2);
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn shift(&self) -> f64 {
        self.c
    }

    pub fn order(&self) -> FractionalOrder {
        self.order
    }

    /// P*_μ(0) = κ I with κ = Σ c_i ≈ 1/Γ(μ).
    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn block_len(&self) -> usize {
        match self.spectrum {
            Spectrum::Real { .. } => self.dim,
            _ => self.dim * self.dim,
        }
    }

    pub fn to_work(&self, x: &DVector<f64>) -> Vec<f64> {
        match &self.spectrum {
            Spectrum::Real { vecs, .. } => vecs.tr_mul(x).iter().copied().collect(),
            _ => x.iter().copied().collect(),
        }
    }

    pub fn from_work(&self, w: &[f64]) -> DVector<f64> {
        match &self.spectrum {
            Spectrum::Real { vecs, .. } => vecs * DVector::from_column_slice(w),
            _ => DVector::from_column_slice(w),
        }
    }

    /// Σ_i c_i e^{-x θ_i}.
    fn multiplier(&self, x: f64) -> f64 {
        let mut acc = 0.0;
        for (th, c) in self.theta.iter().zip(&self.weights) {
            let arg = x * th;
            if arg > 60.0 {
                break;
            }
            acc += c * (-arg).exp();
        }
        acc
    }

    fn complex_multiplier(&self, z: Complex<f64>) -> Complex<f64> {
        let mut acc = Complex::new(0.0, 0.0);
        for (th, c) in self.theta.iter().zip(&self.weights) {
            let arg = z * th;
            if arg.re > 60.0 {
                break;
            }
            acc += (-arg).exp() * *c;
        }
        acc
    }

    /// Writes the block of P*_μ(τ) into `out`.
    pub fn p_block(&self, tau: f64, out: &mut [f64]) {
        let s = if tau == 0.0 {
            0.0
        } else {
            tau.powf(self.order.mu())
        };
        match &self.spectrum {
            Spectrum::Real { modes, .. } => {
                for (o, l) in out.iter_mut().zip(modes) {
                    *o = self.multiplier(l * s);
                }
            }
            Spectrum::Complex { modes, v, vinv } => {
                let n = self.dim;
                let m: Vec<Complex<f64>> = modes
                    .iter()
                    .map(|l| self.complex_multiplier(l * s))
                    .collect();
                for col in 0..n {
                    for row in 0..n {
                        let mut acc = Complex::new(0.0, 0.0);
                        for (k, mk) in m.iter().enumerate() {
                            acc += v[(row, k)] * mk * vinv[(k, col)];
                        }
                        out[col * n + row] = acc.re;
                    }
                }
            }
            Spectrum::Dense { shifted } => {
                out.fill(0.0);
                for (th, c) in self.theta.iter().zip(&self.weights) {
                    let e = (shifted * (-s * th)).exp();
                    for (o, v) in out.iter_mut().zip(e.iter()) {
                        *o += c * v;
                    }
                }
            }
        }
    }

    /// Block of v·I.
    pub fn identity_block(&self, v: f64, out: &mut [f64]) {
        match self.spectrum {
            Spectrum::Real { .. } => out.fill(v),
            _ => {
                out.fill(0.0);
                for i in 0..self.dim {
                    out[i * self.dim + i] = v;
                }
            }
        }
    }

    /// out (+)= block · w, all in work coordinates.
    pub fn apply_block(&self, block: &[f64], w: &[f64], out: &mut [f64]) {
        match self.spectrum {
            Spectrum::Real { .. } => {
                for ((o, b), x) in out.iter_mut().zip(block).zip(w) {
                    *o += b * x;
                }
            }
            _ => {
                let n = self.dim;
                for (col, x) in w.iter().enumerate() {
                    let column = &block[col * n..(col + 1) * n];
                    for (o, b) in out.iter_mut().zip(column) {
                        *o += b * x;
                    }
                }
            }
        }
    }

    /// Block of S*_{μ,ν}(τ), τ = nodes.last(), from P*_μ blocks sampled at
    /// nodes[1..] (`p_blocks` is their concatenation; nodes[0] must be 0).
    /// For ν = 0 this is K*_μ(τ) = τ^{μ-1}P*_μ(τ).
    pub fn s_block_from_samples(&self, nodes: &[f64], p_blocks: &[f64], out: &mut [f64]) {
        let len = self.block_len();
        let n = nodes.len() - 1;
        let tau = nodes[n];
        let mu = self.order.mu();
        if self.order.nu() == 0.0 {
            let last = &p_blocks[(n - 1) * len..n * len];
            let scale = tau.powf(mu - 1.0);
            for (o, p) in out.iter_mut().zip(last) {
                *o = scale * p;
            }
            return;
        }
        let alpha = self.order.s_integral_order();
        let w = singular_product_weights(alpha, mu, nodes);
        let norm = rgamma(alpha);
        self.identity_block(w[0] * self.kappa * norm, out);
        for (j, wj) in w.iter().enumerate().skip(1) {
            let p = &p_blocks[(j - 1) * len..j * len];
            for (o, b) in out.iter_mut().zip(p) {
                *o += wj * norm * b;
            }
        }
    }

    fn apply_with<F: Fn(&mut [f64])>(
        &self,
        x: &DVector<f64>,
        t: f64,
        fill: F,
    ) -> Result<DVector<f64>> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: x.len(),
            });
        }
        let mut block = vec![0.0; self.block_len()];
        fill(&mut block);
        let w = self.to_work(x);
        let mut out = vec![0.0; self.dim];
        self.apply_block(&block, &w, &mut out);
        finite_or_overflow(self.from_work(&out), t)
    }

    /// P*_μ(τ)x for τ ≥ 0.
    pub fn p_apply(&self, tau: f64, x: &DVector<f64>) -> Result<DVector<f64>> {
        check_time("t", tau, false)?;
        self.apply_with(x, tau, |b| self.p_block(tau, b))
    }

    /// K*_μ(τ)x = τ^{μ-1}P*_μ(τ)x for τ > 0.
    pub fn k_apply(&self, tau: f64, x: &DVector<f64>) -> Result<DVector<f64>> {
        check_time("t", tau, true)?;
        Ok(self.p_apply(tau, x)? * tau.powf(self.order.mu() - 1.0))
    }

    /// S*_{μ,ν}(τ)x = I^{ν(1-μ)}K*_μ(τ)x for τ > 0, by product integration
    /// on a subgrid of (0, τ] graded toward 0.
    pub fn s_apply(&self, tau: f64, x: &DVector<f64>) -> Result<DVector<f64>> {
        check_time("t", tau, true)?;
        if self.order.nu() == 0.0 {
            return self.k_apply(tau, x);
        }
        let q = (2.0 / self.order.mu()).clamp(2.0, 10.0);
        let nodes = graded_nodes(tau, self.s_nodes, q);
        let len = self.block_len();
        let mut samples = vec![0.0; len * (nodes.len() - 1)];
        for (j, s) in nodes.iter().enumerate().skip(1) {
            self.p_block(*s, &mut samples[(j - 1) * len..j * len]);
        }
        self.apply_with(x, tau, |b| self.s_block_from_samples(&nodes, &samples, b))
    }

    /// Matrix of an operator assembled column by column from `apply`.
    pub fn assemble<F>(&self, apply: F) -> Result<DMatrix<f64>>
    where
        F: Fn(&DVector<f64>) -> Result<DVector<f64>>,
    {
        let mut m = DMatrix::zeros(self.dim, self.dim);
        for k in 0..self.dim {
            let mut e = DVector::zeros(self.dim);
            e[k] = 1.0;
            m.set_column(k, &apply(&e)?);
        }
        Ok(m)
    }
}

pub fn p_mu_apply(
    gen: &Generator,
    c: f64,
    order: FractionalOrder,
    t: f64,
    x: &DVector<f64>,
) -> Result<DVector<f64>> {
    check_time("t", t, true)?;
    FractionalFamily::new(gen, c, order)?.p_apply(t, x)
}

pub fn k_mu_apply(
    gen: &Generator,
    c: f64,
    order: FractionalOrder,
    t: f64,
    x: &DVector<f64>,
) -> Result<DVector<f64>> {
    FractionalFamily::new(gen, c, order)?.k_apply(t, x)
}

pub fn s_munu_apply(
    gen: &Generator,
    c: f64,
    order: FractionalOrder,
    t: f64,
    x: &DVector<f64>,
) -> Result<DVector<f64>> {
    FractionalFamily::new(gen, c, order)?.s_apply(t, x)
}

/// Induced ∞-norm (max absolute row sum).
pub fn max_row_sum(m: &DMatrix<f64>) -> f64 {
    m.row_iter()
        .map(|r| r.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// max(1, max_t ‖R(t)‖_∞) over the sample times; with C = 0 this estimates
/// the bound M of the unperturbed semigroup.
pub fn estimate_m_star(gen: &Generator, c: f64, t_grid: &[f64]) -> Result<f64> {
    let mut m = 1.0_f64;
    for &t in t_grid {
        let mut r = DMatrix::zeros(gen.dim(), gen.dim());
        for k in 0..gen.dim() {
            let mut e = DVector::zeros(gen.dim());
            e[k] = 1.0;
            r.set_column(k, &perturbed_semigroup_apply(gen, c, t, &e)?);
        }
        m = m.max(max_row_sum(&r));
    }
    Ok(m)
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct BoundCheck {
    pub t: f64,
    pub s_norm: f64,
    pub s_bound: f64,
    pub s_margin: f64,
    pub p_norm: f64,
    pub p_bound: f64,
    pub p_margin: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct OperatorBoundsReport {
    pub checks: Vec<BoundCheck>,
    pub pass: bool,
}

/// Relative slack below which a negative margin is attributed to
/// quadrature error rather than a violated bound.
pub const BOUND_RELATIVE_SLACK: f64 = 1e-8;

/// Checks ‖S*_{μ,ν}(t)‖ ≤ M* t^{λ-1}/Γ(λ) and ‖P*_μ(t)‖ ≤ M*/Γ(μ) at each t.
pub fn verify_operator_bounds(
    family: &FractionalFamily,
    bounds: OperatorBounds,
    t_grid: &[f64],
) -> Result<OperatorBoundsReport> {
    let order = family.order();
    let mut checks = Vec::with_capacity(t_grid.len());
    for &t in t_grid {
        let s_norm = max_row_sum(&family.assemble(|e| family.s_apply(t, e))?);
        let p_norm = max_row_sum(&family.assemble(|e| family.p_apply(t, e))?);
        let s_bound = bounds.m_star * t.powf(order.lambda() - 1.0) * rgamma(order.lambda());
        let p_bound = bounds.m_star * rgamma(order.mu());
        let s_margin = s_bound - s_norm;
        let p_margin = p_bound - p_norm;
        let pass = s_margin >= -BOUND_RELATIVE_SLACK * s_bound
            && p_margin >= -BOUND_RELATIVE_SLACK * p_bound;
        checks.push(BoundCheck {
            t,
            s_norm,
            s_bound,
            s_margin,
            p_norm,
            p_bound,
            p_margin,
            pass,
        });
    }
    let pass = checks.iter().all(|c| c.pass);
    Ok(OperatorBoundsReport { checks, pass })
}
