//! Clifford systems and the isoparametric quotients they induce on spheres.
//!
//! A Clifford system is a tuple of real symmetric matrices P_0, ..., P_q on
//! R^n with P_i P_j + P_j P_i = 2 δ_ij Id. The associated sphere-to-disk map
//! π(x) = (⟨P_0 x, x⟩, ..., ⟨P_q x, x⟩) composed with f(P) = 1 - 2|P|² is an
//! isoparametric function whose level sets foliate S^{n-1} with codimension
//! one. The quotient is an interval; its pushforward weight is estimated by
//! Monte-Carlo sampling.
//!
//! Systems are built from a fixed table of tensor-product generators with
//! integer entries, so the anticommutation relations are exact and testable
//! without tolerances.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::quotient::{
    pushforward_mc, sample_unit_sphere, sphere_volume, EndpointKind, McConfig, WeightedDomain,
};
use crate::{Error, Result};

/// Integer square matrix, row-major.
type IMat = Vec<i64>;

fn imat_zeros(n: usize) -> IMat {
    vec![0; n * n]
}

fn identity(n: usize) -> IMat {
    let mut m = imat_zeros(n);
    for i in 0..n {
        m[i * n + i] = 1;
    }
    m
}

fn from_rows(rows: &[&[i64]]) -> IMat {
    rows.iter().flat_map(|r| r.iter().copied()).collect()
}

fn kron(a: &IMat, na: usize, b: &IMat, nb: usize) -> IMat {
    let n = na * nb;
    let mut out = imat_zeros(n);
    for i in 0..na {
        for j in 0..na {
            let av = a[i * na + j];
            if av == 0 {
                continue;
            }
            for k in 0..nb {
                for l in 0..nb {
                    out[(i * nb + k) * n + (j * nb + l)] = av * b[k * nb + l];
                }
            }
        }
    }
    out
}

fn block_diag(m: &IMat, n: usize, copies: usize) -> IMat {
    let big = n * copies;
    let mut out = imat_zeros(big);
    for c in 0..copies {
        for i in 0..n {
            for j in 0..n {
                out[(c * n + i) * big + (c * n + j)] = m[i * n + j];
            }
        }
    }
    out
}

fn imat_mul(a: &IMat, b: &IMat, n: usize) -> IMat {
    let mut out = imat_zeros(n);
    for i in 0..n {
        for k in 0..n {
            let av = a[i * n + k];
            if av == 0 {
                continue;
            }
            for j in 0..n {
                out[i * n + j] += av * b[k * n + j];
            }
        }
    }
    out
}

/// Symmetric matrices with exact anticommutation relations, plus cached
/// floating-point copies for sampling.
#[derive(Debug, Clone)]
pub struct CliffordSystem {
    n: usize,
    q: usize,
    mats: Vec<IMat>,
    mats_f: Vec<Vec<f64>>,
}

/// Minimal representation dimension for each supported q: the systems built
/// here act on R^(2 δ(q)) per copy.
fn delta(q: usize) -> Result<usize> {
    match q {
        1 => Ok(1),
        2 => Ok(2),
        3 | 4 => Ok(4),
        5 => Ok(8),
        _ => Err(Error::UnsupportedCliffordQ(q)),
    }
}

/// Builds the Clifford system with parameters (q, copies); the ambient
/// dimension is n = copies * 2 δ(q).
pub fn build_clifford_system(q: usize, copies: usize) -> Result<CliffordSystem> {
    if copies < 1 {
        return Err(Error::InvalidParameter("copies must be >= 1".into()));
    }
    let d = delta(q)?;

    let s1 = from_rows(&[&[0, 1], &[1, 0]]);
    let s3 = from_rows(&[&[1, 0], &[0, -1]]);
    let e = from_rows(&[&[0, 1], &[-1, 0]]);
    let li = from_rows(&[
        &[0, -1, 0, 0],
        &[1, 0, 0, 0],
        &[0, 0, 0, -1],
        &[0, 0, 1, 0],
    ]);
    let lj = from_rows(&[
        &[0, 0, -1, 0],
        &[0, 0, 0, 1],
        &[1, 0, 0, 0],
        &[0, -1, 0, 0],
    ]);
    let lk = from_rows(&[
        &[0, 0, 0, -1],
        &[0, 0, -1, 0],
        &[0, 1, 0, 0],
        &[1, 0, 0, 0],
    ]);

    // Anticommuting complex structures on R^δ.
    let structures: Vec<IMat> = match q {
        1 => vec![],
        2 => vec![e.clone()],
        3 => vec![li.clone(), lj.clone()],
        4 => vec![li.clone(), lj.clone(), lk.clone()],
        5 => vec![
            kron(&e, 2, &identity(4), 4),
            kron(&s1, 2, &li, 4),
            kron(&s1, 2, &lj, 4),
            kron(&s1, 2, &lk, 4),
        ],
        _ => unreachable!(),
    };

    let base = 2 * d;
    let id_d = identity(d);
    let mut mats: Vec<IMat> = Vec::with_capacity(q + 1);
    mats.push(kron(&s3, 2, &id_d, d));
    mats.push(kron(&s1, 2, &id_d, d));
    for s in &structures {
        mats.push(kron(&e, 2, s, d));
    }

    let n = base * copies;
    let mats: Vec<IMat> = mats.iter().map(|m| block_diag(m, base, copies)).collect();
    let mats_f = mats
        .iter()
        .map(|m| m.iter().map(|&v| v as f64).collect())
        .collect();
    Ok(CliffordSystem { n, q, mats, mats_f })
}

impl CliffordSystem {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn q(&self) -> usize {
        self.q
    }

    /// Row-major integer matrices P_0, ..., P_q.
    pub fn matrices(&self) -> &[IMat] {
        &self.mats
    }

    /// Exact entrywise check of P_i = P_i^T and P_i P_j + P_j P_i = 2 δ_ij Id.
    pub fn relations_exact(&self) -> bool {
        let n = self.n;
        for m in &self.mats {
            for i in 0..n {
                for j in 0..n {
                    if m[i * n + j] != m[j * n + i] {
                        return false;
                    }
                }
            }
        }
        for (a, ma) in self.mats.iter().enumerate() {
            for (b, mb) in self.mats.iter().enumerate() {
                let mut anti = imat_mul(ma, mb, n);
                let ba = imat_mul(mb, ma, n);
                for (x, y) in anti.iter_mut().zip(ba) {
                    *x += y;
                }
                let want = if a == b { 2 } else { 0 };
                for i in 0..n {
                    for j in 0..n {
                        let expect = if i == j { want } else { 0 };
                        if anti[i * n + j] != expect {
                            return false;
                        }
                    }
                }
            }
        }
        true
    }

    /// Exact check that (1/n) tr(P_i P_j) = δ_ij.
    pub fn basis_orthonormal_exact(&self) -> bool {
        let n = self.n;
        for (a, ma) in self.mats.iter().enumerate() {
            for (b, mb) in self.mats.iter().enumerate() {
                let prod = imat_mul(ma, mb, n);
                let tr: i64 = (0..n).map(|i| prod[i * n + i]).sum();
                let want = if a == b { n as i64 } else { 0 };
                if tr != want {
                    return false;
                }
            }
        }
        true
    }

    fn check_unit(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.n {
            return Err(Error::DimensionMismatch {
                field: x.len(),
                domain: self.n,
            });
        }
        let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > 1e-12 {
            return Err(Error::NonUnitVector(norm));
        }
        Ok(())
    }

    /// Coordinates (⟨P_0 x, x⟩, ..., ⟨P_q x, x⟩) of the sphere-to-disk map
    /// in the orthonormal basis {P_i}.
    pub fn pi_rho(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_unit(x)?;
        Ok(self.pi_rho_unchecked(x))
    }

    fn pi_rho_unchecked(&self, x: &[f64]) -> Vec<f64> {
        let n = self.n;
        self.mats_f
            .iter()
            .map(|m| {
                let mut acc = 0.0;
                for i in 0..n {
                    let mut row = 0.0;
                    let base = i * n;
                    for j in 0..n {
                        row += m[base + j] * x[j];
                    }
                    acc += row * x[i];
                }
                acc
            })
            .collect()
    }

    /// Isoparametric value 1 - 2 |π(x)|², in [-1, 1].
    pub fn fkm_value(&self, x: &[f64]) -> Result<f64> {
        self.check_unit(x)?;
        Ok(self.fkm_value_unchecked(x))
    }

    fn fkm_value_unchecked(&self, x: &[f64]) -> f64 {
        let pi: f64 = self.pi_rho_unchecked(x).iter().map(|v| v * v).sum();
        1.0 - 2.0 * pi
    }

    /// Minimal leaf dimension of the codimension-one foliation.
    fn quotient_kappa(&self) -> usize {
        let l = self.n / 2;
        let m2 = l as isize - self.q as isize - 1;
        let worst = (self.q as isize).max(m2);
        ((self.n as isize - 2 - worst).max(0)) as usize
    }

    /// Monte-Carlo pushforward of the quotient of S^{n-1} by the level sets
    /// of the isoparametric map, in the arclength coordinate
    /// t = arccos(f)/4 on [0, π/4].
    ///
    /// The degree-4 normalization makes t unit speed: |∇(f∘π)|² = 16(1 - f²)
    /// on the sphere, so the one-dimensional reduction -(w u')'/ w is valid
    /// in this coordinate. Degenerate systems whose isoparametric value is
    /// constant (such as q=1 with a single copy) are rejected.
    pub fn fkm_quotient_domain(
        &self,
        bins: usize,
        samples: usize,
        seed: u64,
    ) -> Result<WeightedDomain> {
        use rand::SeedableRng;
        let mut probe_rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed ^ 0x9e3779b97f4a7c15);
        let mut point = vec![0.0; self.n];
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for _ in 0..4096 {
            sample_unit_sphere(&mut probe_rng, &mut point);
            let v = self.fkm_value_unchecked(&point);
            lo = lo.min(v);
            hi = hi.max(v);
        }
        if hi - lo < 1e-9 {
            return Err(Error::DegenerateFoliation);
        }

        let cfg = McConfig {
            bins,
            samples,
            range: (0.0, PI / 4.0),
            total_mass: sphere_volume(self.n - 1),
            seed,
            ambient_len: self.n,
            ambient_dim: self.n - 1,
            kappa: self.quotient_kappa().max(1),
            endpoints: [EndpointKind::SingularLeaf; 2],
            name: format!("fkm-quotient(q={}, n={})", self.q, self.n),
        };
        pushforward_mc(
            sample_unit_sphere,
            |x: &[f64]| self.fkm_value_unchecked(x).clamp(-1.0, 1.0).acos() / 4.0,
            &cfg,
        )
    }

    pub fn to_json(&self) -> String {
        let doc = SystemDoc {
            n: self.n,
            q: self.q,
            matrices: self
                .mats
                .iter()
                .map(|m| m.chunks(self.n).map(|r| r.to_vec()).collect())
                .collect(),
        };
        serde_json::to_string_pretty(&doc).expect("clifford serialization")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: SystemDoc = serde_json::from_str(text)
            .map_err(|e| Error::InvalidParameter(format!("clifford JSON: {e}")))?;
        let n = doc.n;
        let mut mats = Vec::with_capacity(doc.matrices.len());
        for rows in &doc.matrices {
            if rows.len() != n || rows.iter().any(|r| r.len() != n) {
                return Err(Error::InvalidParameter("ragged matrix in clifford JSON".into()));
            }
            mats.push(rows.iter().flatten().copied().collect::<IMat>());
        }
        if mats.len() != doc.q + 1 {
            return Err(Error::InvalidParameter("matrix count mismatch".into()));
        }
        let mats_f = mats
            .iter()
            .map(|m: &IMat| m.iter().map(|&v| v as f64).collect())
            .collect();
        Ok(CliffordSystem { n, q: doc.q, mats, mats_f })
    }
}

#[derive(Serialize, Deserialize)]
struct SystemDoc {
    n: usize,
    q: usize,
    matrices: Vec<Vec<Vec<i64>>>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quotient::integrate;
    use crate::Field;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn smallest_system_matches_reflection_pair() {
        let s = build_clifford_system(1, 1).unwrap();
        assert_eq!(s.n(), 2);
        assert_eq!(s.matrices()[0], vec![1, 0, 0, -1]);
        assert_eq!(s.matrices()[1], vec![0, 1, 1, 0]);
        assert!(s.relations_exact());
    }

    #[test]
    fn all_supported_systems_satisfy_relations_exactly() {
        for q in 1..=5 {
            for copies in 1..=2 {
                let s = build_clifford_system(q, copies).unwrap();
                assert!(s.relations_exact(), "q={q} copies={copies}");
                assert!(s.basis_orthonormal_exact(), "q={q} copies={copies}");
                assert_eq!(s.n(), copies * 2 * delta(q).unwrap());
            }
        }
        assert!(matches!(
            build_clifford_system(6, 1),
            Err(Error::UnsupportedCliffordQ(6))
        ));
    }

    #[test]
    fn direct_sum_preserves_relations() {
        let s = build_clifford_system(1, 2).unwrap();
        assert_eq!(s.n(), 4);
        assert!(s.relations_exact());
    }

    #[test]
    fn eigenvector_maps_to_basis_point() {
        let s = build_clifford_system(2, 1).unwrap();
        // First eigenvector of P_0 = diag(1, 1, -1, -1).
        let x = [1.0, 0.0, 0.0, 0.0];
        let pi = s.pi_rho(&x).unwrap();
        assert!((pi[0] - 1.0).abs() < 1e-15);
        for v in &pi[1..] {
            assert!(v.abs() < 1e-15);
        }
        assert!((s.fkm_value(&x).unwrap() + 1.0).abs() < 1e-15);
    }

    #[test]
    fn planar_system_is_double_angle_map() {
        let s = build_clifford_system(1, 1).unwrap();
        for phi in [0.1f64, 0.9, 2.3, -1.2] {
            let x = [phi.cos(), phi.sin()];
            let pi = s.pi_rho(&x).unwrap();
            assert!((pi[0] - (2.0 * phi).cos()).abs() < 1e-14);
            assert!((pi[1] - (2.0 * phi).sin()).abs() < 1e-14);
            assert!((s.fkm_value(&x).unwrap() + 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn disk_bound_and_evenness_on_random_samples() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        for (q, copies) in [(1, 2), (2, 2), (3, 1)] {
            let s = build_clifford_system(q, copies).unwrap();
            let mut x = vec![0.0; s.n()];
            for _ in 0..10_000 {
                sample_unit_sphere(&mut rng, &mut x);
                let pi = s.pi_rho(&x).unwrap();
                let norm: f64 = pi.iter().map(|v| v * v).sum::<f64>().sqrt();
                assert!(norm <= 1.0 + 1e-12);
                let f = s.fkm_value(&x).unwrap();
                assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&f));
                let neg: Vec<f64> = x.iter().map(|v| -v).collect();
                let pi2 = s.pi_rho(&neg).unwrap();
                for (a, b) in pi.iter().zip(pi2) {
                    assert!((a - b).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn non_unit_vector_rejected() {
        let s = build_clifford_system(1, 1).unwrap();
        assert!(matches!(
            s.pi_rho(&[1.0, 1.0]),
            Err(Error::NonUnitVector(_))
        ));
    }

    #[test]
    fn degenerate_systems_rejected() {
        let s = build_clifford_system(1, 1).unwrap();
        assert!(matches!(
            s.fkm_quotient_domain(64, 20_000, 7),
            Err(Error::DegenerateFoliation)
        ));
        // The Hopf-type system q=2 on R^4 maps onto the unit sphere of the
        // span, so the isoparametric value is also constant.
        let s = build_clifford_system(2, 1).unwrap();
        assert!(matches!(
            s.fkm_quotient_domain(64, 20_000, 7),
            Err(Error::DegenerateFoliation)
        ));
    }

    #[test]
    fn doubled_planar_quotient_matches_folded_block_rotation_weight() {
        // The (q=1, copies=2) quotient is the block rotation quotient of S^3
        // folded at its midpoint: weight 4π² sin(2t) on [0, π/4].
        let s = build_clifford_system(1, 2).unwrap();
        let domain = s.fkm_quotient_domain(100, 400_000, 3).unwrap();
        assert_eq!(domain.ambient_dim(), 3);
        assert_eq!(domain.kappa(), 1);
        let mass = integrate(&domain, &Field::constant(&domain, 1.0)).unwrap();
        assert!((mass - 2.0 * PI * PI).abs() < 1e-9 * mass);
        let se = domain.stderr().unwrap();
        let mut worst: f64 = 0.0;
        for (i, &t) in domain.nodes().iter().enumerate() {
            let exact = 4.0 * PI * PI * (2.0 * t).sin();
            worst = worst.max((domain.weights()[i] - exact).abs() / se[i].max(1e-300));
        }
        assert!(worst < 3.0, "worst deviation {worst} standard errors");
    }

    #[test]
    fn larger_quotient_has_positive_interior_weight() {
        let s = build_clifford_system(2, 2).unwrap();
        let domain = s.fkm_quotient_domain(60, 200_000, 5).unwrap();
        let mass = integrate(&domain, &Field::constant(&domain, 1.0)).unwrap();
        assert!((mass - sphere_volume(7)).abs() < 1e-9 * mass);
        for (i, &w) in domain.weights().iter().enumerate() {
            if i > 0 && i + 1 < domain.len() {
                assert!(w > 0.0);
            }
        }
    }

    #[test]
    fn system_json_round_trip() {
        let s = build_clifford_system(3, 1).unwrap();
        let text = s.to_json();
        let back = CliffordSystem::from_json(&text).unwrap();
        assert_eq!(back.n(), s.n());
        assert_eq!(back.q(), s.q());
        assert!(back.relations_exact());
        assert_eq!(back.matrices(), s.matrices());
    }
}
