//! Two-dimensional ambient models and the numeric criticality transfer test.
//!
//! A converged quotient solution is lifted to a product grid (constant along
//! leaves) and the full two-dimensional weak residual is evaluated against
//! random non-invariant test functions. The ambient discretization is
//! standard bilinear elements with consistent stiffness and Gauss-quadrature
//! nonlinearity, deliberately not the tensor lift of the one-dimensional
//! scheme: the score therefore measures the genuine discretization error
//! budget and shrinks as O(h²) under refinement, while a non-critical field
//! scores orders of magnitude higher.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::discrete::{Field, ProblemSpec};
use crate::energy::EnergyContext;
use crate::quotient::WeightedDomain;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy)]
enum Metric {
    /// S¹ x S¹ with side lengths 2π; the foliation is the second factor.
    FlatTorus,
    /// Round S² in polar coordinates (t, s): ds² = dt² + sin²t ds².
    PolarSphere,
}

/// Product-structured ambient grid whose first coordinate is the quotient
/// arclength.
#[derive(Debug, Clone)]
pub struct AmbientGrid {
    nt: usize,
    ns: usize,
    lt: f64,
    t_periodic: bool,
    metric: Metric,
}

impl AmbientGrid {
    /// Flat torus model matching the `torus-factor` quotient.
    pub fn flat_torus(nt: usize, ns: usize) -> Self {
        AmbientGrid {
            nt,
            ns,
            lt: 2.0 * std::f64::consts::PI,
            t_periodic: true,
            metric: Metric::FlatTorus,
        }
    }

    /// Polar 2-sphere model matching the `suspension-sphere(2)` quotient.
    pub fn polar_sphere(nt: usize, ns: usize) -> Self {
        AmbientGrid {
            nt,
            ns,
            lt: std::f64::consts::PI,
            t_periodic: false,
            metric: Metric::PolarSphere,
        }
    }

    fn rows(&self) -> usize {
        if self.t_periodic {
            self.nt
        } else {
            self.nt + 1
        }
    }

    pub fn node_count(&self) -> usize {
        self.rows() * self.ns
    }

    fn ht(&self) -> f64 {
        self.lt / self.nt as f64
    }

    fn hs(&self) -> f64 {
        2.0 * std::f64::consts::PI / self.ns as f64
    }

    /// Quotient coordinate of grid row r.
    pub fn quotient_coordinate(&self, r: usize) -> f64 {
        r as f64 * self.ht()
    }

    fn metric_coeffs(&self, t: f64) -> (f64, f64, f64) {
        match self.metric {
            Metric::FlatTorus => (1.0, 1.0, 1.0),
            // (t-gradient, s-gradient, mass) weights of the polar metric.
            Metric::PolarSphere => {
                let st = t.sin().max(1e-14);
                (st, 1.0 / st, st)
            }
        }
    }

    /// Lifts a quotient field to the grid, constant along leaves. The field
    /// resolution must be a multiple of the grid's t-resolution so the lift
    /// is an exact restriction.
    pub fn lift(&self, domain: &WeightedDomain, u: &Field) -> Result<Vec<f64>> {
        if domain.is_periodic() != self.t_periodic
            || (domain.length() - self.lt).abs() > 1e-9 * self.lt
        {
            return Err(Error::InvalidParameter(
                "domain does not match the grid's quotient geometry".into(),
            ));
        }
        let cells = if domain.is_periodic() { domain.len() } else { domain.len() - 1 };
        if cells % self.nt != 0 {
            return Err(Error::InvalidParameter(format!(
                "domain resolution {cells} is not a multiple of grid rows {}",
                self.nt
            )));
        }
        let stride = cells / self.nt;
        let rows = self.rows();
        let mut out = vec![0.0; rows * self.ns];
        for r in 0..rows {
            let v = u.values()[(r * stride) % u.len().max(1)];
            for c in 0..self.ns {
                out[r * self.ns + c] = v;
            }
        }
        Ok(out)
    }

    fn t_cell_rows(&self, et: usize) -> (usize, usize) {
        let rows = self.rows();
        (et, (et + 1) % rows)
    }

    /// Weak residual vector r with r·V = J'(U)(V) for the ambient problem
    /// with constant coefficients: bilinear consistent stiffness and mass,
    /// 2x2 Gauss quadrature for the nonlinearity.
    fn residual(&self, p: f64, b0: f64, c0: f64, u: &[f64]) -> Vec<f64> {
        let mut r = vec![0.0; self.node_count()];
        self.accumulate_linear(b0, u, &mut r);
        self.accumulate_nonlinear(p, c0, u, &mut r);
        r
    }

    /// r += (stiffness + b0 * mass) U via per-element exact integration.
    fn accumulate_linear(&self, b0: f64, u: &[f64], r: &mut [f64]) {
        let ht = self.ht();
        let hs = self.hs();
        let kx = [[1.0 / ht, -1.0 / ht], [-1.0 / ht, 1.0 / ht]];
        let mx = [[ht / 3.0, ht / 6.0], [ht / 6.0, ht / 3.0]];
        let ky = [[1.0 / hs, -1.0 / hs], [-1.0 / hs, 1.0 / hs]];
        let my = [[hs / 3.0, hs / 6.0], [hs / 6.0, hs / 3.0]];
        let ns = self.ns;
        for et in 0..self.nt {
            let (r0, r1) = self.t_cell_rows(et);
            let tm = (et as f64 + 0.5) * ht;
            let (gt, gs, gm) = self.metric_coeffs(tm);
            for es in 0..ns {
                let c0i = es;
                let c1i = (es + 1) % ns;
                let gidx = [r0 * ns + c0i, r1 * ns + c0i, r0 * ns + c1i, r1 * ns + c1i];
                let uv = [u[gidx[0]], u[gidx[1]], u[gidx[2]], u[gidx[3]]];
                // Local index a = it + 2*is.
                for a in 0..4 {
                    let (ia, ja) = (a % 2, a / 2);
                    let mut acc = 0.0;
                    for bidx in 0..4 {
                        let (ib, jb) = (bidx % 2, bidx / 2);
                        let val = gt * kx[ia][ib] * my[ja][jb]
                            + gs * mx[ia][ib] * ky[ja][jb]
                            + b0 * gm * mx[ia][ib] * my[ja][jb];
                        acc += val * uv[bidx];
                    }
                    r[gidx[a]] += acc;
                }
            }
        }
    }

    /// r -= ∫ c0 |U|^(p-2) U φ_a by 2x2 Gauss on the bilinear interpolant.
    fn accumulate_nonlinear(&self, p: f64, c0: f64, u: &[f64], r: &mut [f64]) {
        let ht = self.ht();
        let hs = self.hs();
        let ns = self.ns;
        let g = 0.5 / 3.0f64.sqrt();
        let pts = [0.5 - g, 0.5 + g];
        for et in 0..self.nt {
            let (r0, r1) = self.t_cell_rows(et);
            let t0 = et as f64 * ht;
            for es in 0..ns {
                let c0i = es;
                let c1i = (es + 1) % ns;
                let gidx = [r0 * ns + c0i, r1 * ns + c0i, r0 * ns + c1i, r1 * ns + c1i];
                let uv = [u[gidx[0]], u[gidx[1]], u[gidx[2]], u[gidx[3]]];
                for &gx in &pts {
                    let tg = t0 + gx * ht;
                    let (_, _, gm) = self.metric_coeffs(tg);
                    for &gy in &pts {
                        let shape = [
                            (1.0 - gx) * (1.0 - gy),
                            gx * (1.0 - gy),
                            (1.0 - gx) * gy,
                            gx * gy,
                        ];
                        let ug: f64 = (0..4).map(|a| shape[a] * uv[a]).sum();
                        let f = c0 * ug.signum() * ug.abs().powf(p - 1.0);
                        let wq = 0.25 * ht * hs * gm;
                        for a in 0..4 {
                            r[gidx[a]] -= wq * f * shape[a];
                        }
                    }
                }
            }
        }
    }

    /// Full H¹ product on the grid (consistent bilinear mass).
    pub fn h1_product(&self, v: &[f64], w: &[f64]) -> f64 {
        let mut rv = vec![0.0; self.node_count()];
        self.accumulate_linear(1.0, v, &mut rv);
        rv.iter().zip(w).map(|(a, b)| a * b).sum()
    }

    /// L² pairing with the metric volume element.
    pub fn l2_pairing(&self, v: &[f64], w: &[f64]) -> f64 {
        let ht = self.ht();
        let hs = self.hs();
        let mx = [[ht / 3.0, ht / 6.0], [ht / 6.0, ht / 3.0]];
        let my = [[hs / 3.0, hs / 6.0], [hs / 6.0, hs / 3.0]];
        let ns = self.ns;
        let mut acc = 0.0;
        for et in 0..self.nt {
            let (r0, r1) = self.t_cell_rows(et);
            let tm = (et as f64 + 0.5) * ht;
            let (_, _, gm) = self.metric_coeffs(tm);
            for es in 0..ns {
                let c0i = es;
                let c1i = (es + 1) % ns;
                let gidx = [r0 * ns + c0i, r1 * ns + c0i, r0 * ns + c1i, r1 * ns + c1i];
                for a in 0..4 {
                    let (ia, ja) = (a % 2, a / 2);
                    for b in 0..4 {
                        let (ib, jb) = (b % 2, b / 2);
                        acc += gm * mx[ia][ib] * my[ja][jb] * v[gidx[a]] * w[gidx[b]];
                    }
                }
            }
        }
        acc
    }

    /// Random smooth test function from a fixed spectral recipe; with
    /// `invariant` it is constant along leaves, otherwise it carries
    /// leaf-direction modes (plus invariant components, so the pairing with
    /// lifted residuals is nondegenerate).
    pub fn random_test_function(&self, rng: &mut ChaCha8Rng, invariant: bool) -> Vec<f64> {
        let rows = self.rows();
        let ns = self.ns;
        let mut coeffs = Vec::new();
        for kt in 0..=4usize {
            for ks in 0..=4usize {
                if invariant && ks > 0 {
                    continue;
                }
                let damp = 1.0 / ((1 + kt * kt + ks * ks) as f64);
                let quad: [f64; 4] = [
                    (rng.random::<f64>() * 2.0 - 1.0) * damp,
                    (rng.random::<f64>() * 2.0 - 1.0) * damp,
                    (rng.random::<f64>() * 2.0 - 1.0) * damp,
                    (rng.random::<f64>() * 2.0 - 1.0) * damp,
                ];
                coeffs.push((kt, ks, quad));
            }
        }
        let sphere = matches!(self.metric, Metric::PolarSphere);
        let mut v = vec![0.0; rows * ns];
        for r in 0..rows {
            let t = self.quotient_coordinate(r);
            let tt = if self.t_periodic {
                2.0 * std::f64::consts::PI * t / self.lt
            } else {
                std::f64::consts::PI * t / self.lt
            };
            // Leaf-direction modes on the sphere vanish at the poles.
            let envelope = if sphere { t.sin() * t.sin() } else { 1.0 };
            for c in 0..ns {
                let s = c as f64 * self.hs();
                let mut val = 0.0;
                for &(kt, ks, q) in &coeffs {
                    let (ct, st) = ((kt as f64 * tt).cos(), (kt as f64 * tt).sin());
                    let (cs, ss) = ((ks as f64 * s).cos(), (ks as f64 * s).sin());
                    let env = if ks > 0 { envelope } else { 1.0 };
                    val += env * (q[0] * ct * cs + q[1] * st * cs + q[2] * ct * ss + q[3] * st * ss);
                }
                v[r * ns + c] = val;
            }
        }
        let norm = self.h1_product(&v, &v).max(1e-300).sqrt();
        for x in v.iter_mut() {
            *x /= norm;
        }
        v
    }
}

/// Maximum of |J'(û)(v)| over random non-invariant H¹-unit test functions,
/// where û is the quotient solution lifted to the ambient grid.
pub fn symmetric_criticality_check(
    spec: &ProblemSpec,
    domain: &WeightedDomain,
    solution: &Field,
    grid: &AmbientGrid,
    n_tests: usize,
    seed: u64,
) -> Result<f64> {
    let ctx = EnergyContext::new(spec, domain)?;
    let gn = ctx.gradient_norm(&ctx.gradient(solution)?)?;
    if gn > 1e-6 {
        return Err(Error::NotConverged(format!(
            "quotient gradient norm {gn} exceeds 1e-6"
        )));
    }
    lifted_residual_score(spec, domain, solution, grid, n_tests, seed)
}

/// Same score without the convergence gate, for measuring how loudly a
/// non-critical field fails the transfer test.
pub fn lifted_residual_score(
    spec: &ProblemSpec,
    domain: &WeightedDomain,
    field: &Field,
    grid: &AmbientGrid,
    n_tests: usize,
    seed: u64,
) -> Result<f64> {
    let (b0, c0) = constant_coefficients(spec)?;
    let lifted = grid.lift(domain, field)?;
    let r = grid.residual(spec.p, b0, c0, &lifted);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..n_tests {
        let v = grid.random_test_function(&mut rng, false);
        let score: f64 = r.iter().zip(&v).map(|(a, b)| a * b).sum();
        worst = worst.max(score.abs());
    }
    Ok(worst)
}

fn constant_coefficients(spec: &ProblemSpec) -> Result<(f64, f64)> {
    let near = |v: &[f64]| -> Option<f64> {
        let first = v[0];
        v.iter()
            .all(|x| (x - first).abs() <= 1e-12 * first.abs().max(1.0))
            .then_some(first)
    };
    match (near(spec.b.values()), near(spec.c.values())) {
        (Some(b0), Some(c0)) => Ok((b0, c0)),
        _ => Err(Error::InvalidParameter(
            "the ambient transfer test needs constant coefficients".into(),
        )),
    }
}

/// Max over random test functions v of the L² pairing ⟨v - leaf average v, û⟩
/// for a lifted invariant field û: the discrete shadow of the orthogonality
/// between invariant functions and mean-free fluctuations.
pub fn orthogonality_shadow(
    grid: &AmbientGrid,
    domain: &WeightedDomain,
    u: &Field,
    n_tests: usize,
    seed: u64,
) -> Result<f64> {
    let lifted = grid.lift(domain, u)?;
    let rows = grid.rows();
    let ns = grid.ns;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let unorm = grid.l2_pairing(&lifted, &lifted).sqrt().max(1e-300);
    let mut worst = 0.0f64;
    for _ in 0..n_tests {
        let mut v = grid.random_test_function(&mut rng, false);
        for r in 0..rows {
            let mean: f64 = v[r * ns..(r + 1) * ns].iter().sum::<f64>() / ns as f64;
            for c in 0..ns {
                v[r * ns + c] -= mean;
            }
        }
        let vnorm = grid.l2_pairing(&v, &v).sqrt().max(1e-300);
        let pairing = grid.l2_pairing(&v, &lifted) / (vnorm * unorm);
        worst = worst.max(pairing.abs());
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::{find_least_energy, seed_bumps, FlowConfig};
    use crate::quotient::{make_preset, PresetId};

    fn torus_solution(res: usize) -> (WeightedDomain, ProblemSpec, Field) {
        let domain = make_preset(PresetId::TorusFactor, res).unwrap();
        let spec = ProblemSpec::with_constant_coefficients(&domain, 4.0, 2.0, 1.0).unwrap();
        let record = find_least_energy(&spec, &domain, &FlowConfig::default()).unwrap();
        let field = record.field(&domain).unwrap();
        (domain, spec, field)
    }

    #[test]
    fn lifted_solution_residual_shrinks_quadratically() {
        let (domain, spec, field) = torus_solution(512);
        let mut scores = Vec::new();
        for &n in &[32usize, 64, 128] {
            let grid = AmbientGrid::flat_torus(n, n);
            let s = symmetric_criticality_check(&spec, &domain, &field, &grid, 20, 9).unwrap();
            scores.push(s);
        }
        assert!(scores[1] < scores[0] / 3.0, "{scores:?}");
        assert!(scores[2] < scores[1] / 3.0, "{scores:?}");
    }

    #[test]
    fn non_critical_bump_scores_loudly() {
        let (domain, spec, field) = torus_solution(256);
        let grid = AmbientGrid::flat_torus(64, 64);
        let good = symmetric_criticality_check(&spec, &domain, &field, &grid, 20, 5).unwrap();
        let bump = seed_bumps(&domain, 1).unwrap().remove(0);
        let bad = lifted_residual_score(&spec, &domain, &bump, &grid, 20, 5).unwrap();
        assert!(bad >= 100.0 * good, "good {good}, bad {bad}");
    }

    #[test]
    fn invariant_test_functions_score_within_the_same_budget() {
        // Restricted criticality: an invariant test function sees only the
        // quotient residual of the solution under the ambient scheme, which
        // carries the same O(h^2) scheme-mismatch budget as the full check.
        let (domain, spec, field) = torus_solution(512);
        let grid = AmbientGrid::flat_torus(64, 64);
        let full = symmetric_criticality_check(&spec, &domain, &field, &grid, 30, 21).unwrap();
        let (b0, c0) = (2.0, 1.0);
        let lifted = grid.lift(&domain, &field).unwrap();
        let r = grid.residual(spec.p, b0, c0, &lifted);
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let mut invariant_worst = 0.0f64;
        for _ in 0..30 {
            let v = grid.random_test_function(&mut rng, true);
            let score: f64 = r.iter().zip(&v).map(|(a, b)| a * b).sum();
            invariant_worst = invariant_worst.max(score.abs());
        }
        assert!(invariant_worst <= 3.0 * full, "{invariant_worst} vs {full}");
    }

    #[test]
    fn unconverged_input_rejected() {
        let (domain, spec, _) = torus_solution(256);
        let grid = AmbientGrid::flat_torus(64, 64);
        let bump = seed_bumps(&domain, 1).unwrap().remove(0);
        assert!(matches!(
            symmetric_criticality_check(&spec, &domain, &bump, &grid, 5, 1),
            Err(Error::NotConverged(_))
        ));
    }

    #[test]
    fn leaf_mean_free_fluctuations_are_l2_orthogonal_to_lifts() {
        let (domain, _, field) = torus_solution(256);
        let grid = AmbientGrid::flat_torus(64, 64);
        let worst = orthogonality_shadow(&grid, &domain, &field, 50, 3).unwrap();
        assert!(worst < 1e-12, "{worst}");
    }

    #[test]
    fn sphere_grid_pairs_invariant_fields_consistently() {
        // Zonal lift on the polar-sphere grid: the L² orthogonality shadow
        // holds with the sin(t) volume element as well.
        let domain = make_preset(PresetId::SuspensionSphere { m: 2 }, 256).unwrap();
        let u = Field::from_fn(&domain, f64::cos);
        let grid = AmbientGrid::polar_sphere(64, 64);
        let worst = orthogonality_shadow(&grid, &domain, &u, 30, 11).unwrap();
        assert!(worst < 1e-12, "{worst}");
    }

    #[test]
    fn lift_requires_matching_resolution() {
        let (domain, _, field) = torus_solution(100);
        let grid = AmbientGrid::flat_torus(64, 64);
        assert!(grid.lift(&domain, &field).is_err());
    }
}
