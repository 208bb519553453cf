//! Energy functional J, its derivative, the θ-gradient decomposition
//! ∇J(u) = u - Lu - Gu through Helmholtz solves, and the Nehari projection.

use crate::discrete::{
    inner_b, inner_theta, norm_cp_pow, HelmholtzSolver, Field, ProblemSpec,
};
use crate::quotient::WeightedDomain;
use crate::{Error, Result};

/// A field projected onto the Nehari manifold together with its energy and
/// the relative constraint residual |‖u‖²_b - |u|^p_{c,p}| / max(...).
#[derive(Debug, Clone)]
pub struct NehariPoint {
    pub field: Field,
    pub energy: f64,
    pub nehari_residual: f64,
}

/// J(u) = ½‖u‖²_b - (1/p)|u|^p_{c,p}.
pub fn energy(spec: &ProblemSpec, domain: &WeightedDomain, u: &Field) -> Result<f64> {
    let quad = inner_b(spec, domain, u, u)?;
    let pow = norm_cp_pow(spec, domain, u)?;
    Ok(0.5 * quad - pow / spec.p)
}

/// Pointwise nonlinearity c |u|^(p-2) u, evaluated as c sign(u) |u|^(p-1).
pub(crate) fn nonlinearity(spec: &ProblemSpec, u: &Field) -> Field {
    let pm1 = spec.p - 1.0;
    Field::from_values(
        u.values()
            .iter()
            .zip(spec.c.values())
            .map(|(&v, &c)| c * v.signum() * v.abs().powf(pm1))
            .collect(),
    )
}

/// J'(u)v = ⟨u,v⟩_b - ∫ c|u|^(p-2) u v dμ*.
pub fn derivative(
    spec: &ProblemSpec,
    domain: &WeightedDomain,
    u: &Field,
    v: &Field,
) -> Result<f64> {
    let lin = inner_b(spec, domain, u, v)?;
    let f = nonlinearity(spec, u);
    let nl: f64 = domain
        .measure()
        .iter()
        .zip(f.values().iter().zip(v.values()))
        .map(|(m, (f, v))| m * f * v)
        .sum();
    Ok(lin - nl)
}

/// Helmholtz solve with source (θ - b) u.
pub fn apply_l(spec: &ProblemSpec, domain: &WeightedDomain, u: &Field) -> Result<Field> {
    EnergyContext::new(spec, domain)?.apply_l(u)
}

/// Helmholtz solve with source c |u|^(p-2) u.
pub fn apply_g(spec: &ProblemSpec, domain: &WeightedDomain, u: &Field) -> Result<Field> {
    EnergyContext::new(spec, domain)?.apply_g(u)
}

/// Gradient of J with respect to the θ-product: u - Lu - Gu.
pub fn gradient_theta(spec: &ProblemSpec, domain: &WeightedDomain, u: &Field) -> Result<Field> {
    EnergyContext::new(spec, domain)?.gradient(u)
}

/// The unique t > 0 with t·u on the Nehari manifold.
pub fn nehari_scale(spec: &ProblemSpec, domain: &WeightedDomain, u: &Field) -> Result<f64> {
    let quad = inner_b(spec, domain, u, u)?;
    let pow = norm_cp_pow(spec, domain, u)?;
    if quad <= 0.0 || pow <= 0.0 {
        return Err(Error::ZeroField);
    }
    Ok((quad / pow).powf(1.0 / (spec.p - 2.0)))
}

/// Projects u onto the Nehari manifold by the closed-form radial scaling.
pub fn project_nehari(
    spec: &ProblemSpec,
    domain: &WeightedDomain,
    u: &Field,
) -> Result<NehariPoint> {
    let t = nehari_scale(spec, domain, u)?;
    let field = u.scaled(t);
    let quad = inner_b(spec, domain, &field, &field)?;
    let pow = norm_cp_pow(spec, domain, &field)?;
    Ok(NehariPoint {
        energy: 0.5 * quad - pow / spec.p,
        nehari_residual: (quad - pow).abs() / quad.abs().max(pow.abs()).max(1e-300),
        field,
    })
}

/// Cached operators for repeated gradient evaluations on one problem:
/// a factorized θ-Helmholtz operator plus the lumped mass.
pub struct EnergyContext<'a> {
    pub spec: &'a ProblemSpec,
    pub domain: &'a WeightedDomain,
    solver: HelmholtzSolver,
    mass: Vec<f64>,
}

impl<'a> EnergyContext<'a> {
    pub fn new(spec: &'a ProblemSpec, domain: &'a WeightedDomain) -> Result<Self> {
        if spec.theta <= spec.theta_bound() {
            return Err(Error::ThetaTooSmall {
                theta: spec.theta,
                bound: spec.theta_bound(),
            });
        }
        let solver = HelmholtzSolver::new(domain, spec.theta)?;
        let mass = crate::discrete::lumped_mass(domain);
        Ok(EnergyContext { spec, domain, solver, mass })
    }

    pub fn energy(&self, u: &Field) -> Result<f64> {
        energy(self.spec, self.domain, u)
    }

    pub fn apply_l(&self, u: &Field) -> Result<Field> {
        if u.len() != self.domain.len() {
            return Err(Error::DimensionMismatch { field: u.len(), domain: self.domain.len() });
        }
        let theta = self.spec.theta;
        let src = Field::from_values(
            u.values()
                .iter()
                .zip(self.spec.b.values())
                .map(|(&v, &b)| (theta - b) * v)
                .collect(),
        );
        Ok(self.solver.solve_source(&src))
    }

    pub fn apply_g(&self, u: &Field) -> Result<Field> {
        if u.len() != self.domain.len() {
            return Err(Error::DimensionMismatch { field: u.len(), domain: self.domain.len() });
        }
        Ok(self.solver.solve_source(&nonlinearity(self.spec, u)))
    }

    /// u - Lu - Gu with a single Helmholtz solve on the combined source.
    pub fn gradient(&self, u: &Field) -> Result<Field> {
        if u.len() != self.domain.len() {
            return Err(Error::DimensionMismatch { field: u.len(), domain: self.domain.len() });
        }
        let theta = self.spec.theta;
        let nl = nonlinearity(self.spec, u);
        let rhs: Vec<f64> = u
            .values()
            .iter()
            .zip(self.spec.b.values())
            .zip(nl.values())
            .zip(&self.mass)
            .map(|(((&v, &b), &f), &m)| m * ((theta - b) * v + f))
            .collect();
        let lg = self.solver.solve_rhs(&rhs);
        Ok(u.axpy(-1.0, &lg))
    }

    pub fn gradient_norm(&self, g: &Field) -> Result<f64> {
        Ok(inner_theta(self.spec, self.domain, g, g)?.max(0.0).sqrt())
    }
}
