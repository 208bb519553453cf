//! Discrete weighted Sobolev calculus on a [`WeightedDomain`].
//!
//! Piecewise-linear elements with nodal (lumped) quadrature for all zeroth
//! order terms. Using one weak form everywhere keeps the Riesz identity of
//! the Helmholtz solver exact at the discrete level, makes constants exact
//! solutions of constant-coefficient problems, and gives the operator an
//! M-matrix structure (discrete maximum principle).

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::linalg::{Factorized, SymTridiag};
use crate::quotient::WeightedDomain;
use crate::{Error, Result};

/// A foliation-invariant function as nodal values on the quotient.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    values: Vec<f64>,
}

impl Field {
    pub fn new(domain: &WeightedDomain, values: Vec<f64>) -> Result<Self> {
        if values.len() != domain.len() {
            return Err(Error::DimensionMismatch {
                field: values.len(),
                domain: domain.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("non-finite field value".into()));
        }
        Ok(Field { values })
    }

    pub fn constant(domain: &WeightedDomain, a: f64) -> Self {
        Field { values: vec![a; domain.len()] }
    }

    pub fn from_fn(domain: &WeightedDomain, f: impl Fn(f64) -> f64) -> Self {
        Field {
            values: domain.nodes().iter().map(|&t| f(t)).collect(),
        }
    }

    pub(crate) fn from_values(values: Vec<f64>) -> Self {
        Field { values }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// Pointwise positive part u+ = max{0, u}.
    pub fn positive_part(&self) -> Field {
        Field {
            values: self.values.iter().map(|&v| v.max(0.0)).collect(),
        }
    }

    /// Pointwise negative part u- = min{0, u}, so that u = u+ + u-.
    pub fn negative_part(&self) -> Field {
        Field {
            values: self.values.iter().map(|&v| v.min(0.0)).collect(),
        }
    }

    pub fn scaled(&self, a: f64) -> Field {
        Field {
            values: self.values.iter().map(|&v| a * v).collect(),
        }
    }

    /// self + a * other
    pub fn axpy(&self, a: f64, other: &Field) -> Field {
        debug_assert_eq!(self.len(), other.len());
        Field {
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(&u, &v)| u + a * v)
                .collect(),
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

fn check_dims(domain: &WeightedDomain, fields: &[&Field]) -> Result<()> {
    for f in fields {
        if f.len() != domain.len() {
            return Err(Error::DimensionMismatch {
                field: f.len(),
                domain: domain.len(),
            });
        }
    }
    Ok(())
}

/// Coefficients and parameters of the problem -Δu + b u = c |u|^(p-2) u.
#[derive(Debug, Clone)]
pub struct ProblemSpec {
    pub p: f64,
    pub b: Field,
    pub c: Field,
    /// Shift of the auxiliary Helmholtz operator; strictly above
    /// max(1, mu, |b|_inf).
    pub theta: f64,
    /// Coercivity constant of the b-form against the H1 form.
    pub mu: f64,
}

impl ProblemSpec {
    /// Builds a spec, estimating the coercivity constant and choosing
    /// theta = 1.5 max(1, mu, |b|_inf).
    pub fn new(domain: &WeightedDomain, p: f64, b: Field, c: Field) -> Result<Self> {
        if p <= 2.0 {
            return Err(Error::InvalidExponent(p));
        }
        check_dims(domain, &[&b, &c])?;
        let cmin = c.values().iter().cloned().fold(f64::INFINITY, f64::min);
        if cmin <= 0.0 {
            return Err(Error::NonPositiveC(cmin));
        }
        let mu = estimate_mu_for(domain, &b)?;
        let b_inf = b.max_abs();
        let theta = 1.5 * 1.0f64.max(mu).max(b_inf);
        Ok(ProblemSpec { p, b, c, theta, mu })
    }

    pub fn with_constant_coefficients(
        domain: &WeightedDomain,
        p: f64,
        b0: f64,
        c0: f64,
    ) -> Result<Self> {
        ProblemSpec::new(
            domain,
            p,
            Field::constant(domain, b0),
            Field::constant(domain, c0),
        )
    }

    /// Overrides theta, keeping the strict lower bound.
    pub fn with_theta(mut self, theta: f64) -> Result<Self> {
        let bound = self.theta_bound();
        if theta <= bound {
            return Err(Error::ThetaTooSmall { theta, bound });
        }
        self.theta = theta;
        Ok(self)
    }

    pub fn theta_bound(&self) -> f64 {
        1.0f64.max(self.mu).max(self.b.max_abs())
    }

    /// Whether p reaches the ambient critical exponent 2m/(m-2). Convergence
    /// of the flow is then only empirical and callers should surface a
    /// warning.
    pub fn is_critical_exponent(&self, domain: &WeightedDomain) -> bool {
        let m = domain.ambient_dim();
        if m <= 2 {
            return false;
        }
        self.p >= 2.0 * m as f64 / (m as f64 - 2.0) - 1e-12
    }
}

/// Stiffness pairing `∫ u'v' dμ*` from piecewise-linear elements with the
/// cell weight averaged from its two nodes.
fn stiffness_pairing(domain: &WeightedDomain, u: &Field, v: &Field) -> f64 {
    let uu = u.values();
    let vv = v.values();
    let w = domain.weights();
    let mut acc = 0.0;
    for cidx in 0..domain.cell_count() {
        let (i, j, h) = domain.cell(cidx);
        let wc = 0.5 * (w[i] + w[j]);
        acc += wc * (uu[j] - uu[i]) * (vv[j] - vv[i]) / h;
    }
    acc
}

fn lumped_pairing(domain: &WeightedDomain, coeff: Option<&[f64]>, u: &Field, v: &Field) -> f64 {
    let m = domain.measure();
    let uu = u.values();
    let vv = v.values();
    let mut acc = 0.0;
    for i in 0..uu.len() {
        let c = coeff.map_or(1.0, |c| c[i]);
        acc += m[i] * c * uu[i] * vv[i];
    }
    acc
}

/// H1 inner product `∫ u'v' + uv dμ*`.
pub fn inner_h1(domain: &WeightedDomain, u: &Field, v: &Field) -> Result<f64> {
    check_dims(domain, &[u, v])?;
    Ok(stiffness_pairing(domain, u, v) + lumped_pairing(domain, None, u, v))
}

/// b-form `∫ u'v' + b uv dμ*`; requires a coercive spec.
pub fn inner_b(spec: &ProblemSpec, domain: &WeightedDomain, u: &Field, v: &Field) -> Result<f64> {
    if spec.mu <= 0.0 {
        return Err(Error::NonCoercive(spec.mu));
    }
    check_dims(domain, &[u, v, &spec.b])?;
    Ok(stiffness_pairing(domain, u, v) + lumped_pairing(domain, Some(spec.b.values()), u, v))
}

/// theta-form `∫ u'v' + θ uv dμ*`.
pub fn inner_theta(
    spec: &ProblemSpec,
    domain: &WeightedDomain,
    u: &Field,
    v: &Field,
) -> Result<f64> {
    check_dims(domain, &[u, v])?;
    Ok(stiffness_pairing(domain, u, v) + spec.theta * lumped_pairing(domain, None, u, v))
}

pub fn norm_theta(spec: &ProblemSpec, domain: &WeightedDomain, u: &Field) -> Result<f64> {
    Ok(inner_theta(spec, domain, u, u)?.max(0.0).sqrt())
}

/// Weighted Lebesgue norm `(∫ c|u|^p dμ*)^(1/p)`.
pub fn norm_cp(spec: &ProblemSpec, domain: &WeightedDomain, u: &Field) -> Result<f64> {
    Ok(norm_cp_pow(spec, domain, u)?.powf(1.0 / spec.p))
}

/// `∫ c|u|^p dμ*` without the final root.
pub fn norm_cp_pow(spec: &ProblemSpec, domain: &WeightedDomain, u: &Field) -> Result<f64> {
    check_dims(domain, &[u, &spec.c])?;
    let m = domain.measure();
    let c = spec.c.values();
    let p = spec.p;
    Ok(u.values()
        .iter()
        .enumerate()
        .map(|(i, &v)| m[i] * c[i] * v.abs().powf(p))
        .sum())
}

/// Assembles the stiffness matrix of `∫ u'v' dμ*`.
pub(crate) fn stiffness_matrix(domain: &WeightedDomain) -> SymTridiag {
    let n = domain.len();
    let w = domain.weights();
    let mut diag = vec![0.0; n];
    let mut off = vec![0.0; n - 1];
    let mut corner = 0.0;
    for cidx in 0..domain.cell_count() {
        let (i, j, h) = domain.cell(cidx);
        let k = 0.5 * (w[i] + w[j]) / h;
        diag[i] += k;
        diag[j] += k;
        if j == i + 1 {
            off[i] -= k;
        } else {
            corner -= k;
        }
    }
    if domain.is_periodic() {
        SymTridiag::cyclic(diag, off, corner)
    } else {
        SymTridiag::open(diag, off)
    }
}

/// Lumped mass vector: the domain's discrete measure.
pub(crate) fn lumped_mass(domain: &WeightedDomain) -> Vec<f64> {
    domain.measure().to_vec()
}

/// Factorized operator `-(w u')'/w + θ u` in weak form, reusable across
/// solves with different sources.
#[derive(Debug, Clone)]
pub struct HelmholtzSolver {
    factor: Factorized,
    mass: Vec<f64>,
    pub theta: f64,
}

impl HelmholtzSolver {
    pub fn new(domain: &WeightedDomain, theta: f64) -> Result<Self> {
        if theta <= 0.0 || !theta.is_finite() {
            return Err(Error::SingularSystem(theta));
        }
        let mass = lumped_mass(domain);
        let mut a = stiffness_matrix(domain);
        for (d, m) in a.diag.iter_mut().zip(&mass) {
            *d += theta * m;
        }
        let factor = Factorized::new(&a)?;
        Ok(HelmholtzSolver { factor, mass, theta })
    }

    /// Solves `⟨v, φ⟩_θ = ∫ f φ dμ*` for all nodal basis functions φ.
    pub fn solve_source(&self, f: &Field) -> Field {
        let rhs: Vec<f64> = f
            .values()
            .iter()
            .zip(&self.mass)
            .map(|(f, m)| f * m)
            .collect();
        Field::from_values(self.factor.solve(&rhs))
    }

    /// Solves with an already-assembled right-hand side vector.
    pub(crate) fn solve_rhs(&self, rhs: &[f64]) -> Field {
        Field::from_values(self.factor.solve(rhs))
    }
}

/// Riesz representation solve for `-Δv + θv = f` with natural (or periodic)
/// boundary behaviour.
pub fn helmholtz_solve(spec: &ProblemSpec, domain: &WeightedDomain, f: &Field) -> Result<Field> {
    check_dims(domain, &[f])?;
    Ok(HelmholtzSolver::new(domain, spec.theta)?.solve_source(f))
}

/// Largest μ with `⟨u,u⟩_b ≥ μ ⟨u,u⟩_H1` over the discrete space: the
/// smallest eigenvalue of the pencil (b-form, H1-form), located by Sturm
/// bisection on the shifted tridiagonal matrix.
pub fn estimate_mu(spec: &ProblemSpec, domain: &WeightedDomain) -> Result<f64> {
    estimate_mu_for(domain, &spec.b)
}

pub(crate) fn estimate_mu_for(domain: &WeightedDomain, b: &Field) -> Result<f64> {
    check_dims(domain, &[b])?;
    let mass = lumped_mass(domain);
    let stiff = stiffness_matrix(domain);

    let mut bmat = stiff.clone();
    for ((d, m), bv) in bmat.diag.iter_mut().zip(&mass).zip(b.values()) {
        *d += m * bv;
    }
    let mut hmat = stiff;
    for (d, m) in hmat.diag.iter_mut().zip(&mass) {
        *d += m;
    }

    let bmin = b.values().iter().cloned().fold(f64::INFINITY, f64::min);
    let bmax = b.values().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut lo = bmin.min(1.0) - 1.0;
    let mut hi = bmax.max(1.0) + 1.0;
    let scale = lo.abs().max(hi.abs()).max(1.0);

    let count = |sigma: f64| bmat.shifted_by(&hmat, sigma).negative_count();
    if count(lo) != 0 {
        lo = -scale * 1e3;
        if count(lo) != 0 {
            return Err(Error::EigenNoConvergence);
        }
    }
    if count(hi) == 0 {
        return Err(Error::EigenNoConvergence);
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if count(mid) == 0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-13 * scale {
            break;
        }
    }
    let mu = 0.5 * (lo + hi);
    if !mu.is_finite() {
        return Err(Error::EigenNoConvergence);
    }
    Ok(mu)
}

/// Random smooth field from a fixed low-frequency recipe, resolution
/// independent: the same rng state produces samples of the same continuum
/// function on any grid of the same domain.
pub fn random_smooth_field(
    domain: &WeightedDomain,
    rng: &mut ChaCha8Rng,
    max_mode: usize,
) -> Field {
    let t0 = domain.nodes()[0];
    let len = domain.length();
    let mut coeffs = Vec::new();
    if domain.is_periodic() {
        for k in 0..=max_mode {
            let damp = 1.0 / (1.0 + (k * k) as f64);
            let a: f64 = rng.random::<f64>() * 2.0 - 1.0;
            let b: f64 = rng.random::<f64>() * 2.0 - 1.0;
            coeffs.push((k, a * damp, b * damp));
        }
        Field::from_fn(domain, |t| {
            let x = 2.0 * std::f64::consts::PI * (t - t0) / len;
            coeffs
                .iter()
                .map(|&(k, a, b)| a * (k as f64 * x).cos() + b * (k as f64 * x).sin())
                .sum()
        })
    } else {
        for k in 0..=max_mode {
            let damp = 1.0 / (1.0 + (k * k) as f64);
            let a: f64 = rng.random::<f64>() * 2.0 - 1.0;
            coeffs.push((k, a * damp, 0.0));
        }
        Field::from_fn(domain, |t| {
            let x = std::f64::consts::PI * (t - t0) / len;
            coeffs
                .iter()
                .map(|&(k, a, _)| a * (k as f64 * x).cos())
                .sum()
        })
    }
}
