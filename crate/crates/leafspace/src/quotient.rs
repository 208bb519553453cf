//! The leaf space M* = M/F as a weighted one-dimensional domain.
//!
//! Every quotient handled by this crate is an interval or a circle carrying
//! the pushforward of the ambient Riemannian volume, represented by a
//! leaf-volume density sampled at nodes. Analytic presets cover homogeneous
//! examples (suspended rotation actions on spheres, product tori, block
//! rotation actions); Clifford-system quotients are estimated empirically by
//! [`pushforward_mc`].

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::discrete::Field;
use crate::{Error, Result};

/// What the quotient looks like at one of its ends.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EndpointKind {
    /// The leaf over the endpoint has lower dimension; the weight may vanish.
    SingularLeaf,
    /// Regular leaf; natural (no-flux) boundary behaviour.
    Regular,
    /// The domain closes into a circle.
    Periodic,
}

/// Discretized leaf space: ordered nodes, leaf-volume weights and a lumped
/// quadrature rule for the pushforward measure.
#[derive(Debug, Clone)]
pub struct WeightedDomain {
    nodes: Vec<f64>,
    weights: Vec<f64>,
    /// Lumped quadrature weight per node (trapezoid on sampled grids,
    /// bin width on Monte-Carlo histograms). Does not include the leaf weight.
    quad: Vec<f64>,
    /// Discrete measure per node: quad * weight, except at weight-degenerate
    /// singular ends where the dual-cell integral of the leading behaviour
    /// w ~ dist^a is used. With the exact node value (zero) the endpoint
    /// would carry no mass and the natural-boundary closure of the weak form
    /// would only be first-order accurate there.
    measure: Vec<f64>,
    length: f64,
    periodic: bool,
    endpoints: [EndpointKind; 2],
    /// Exponent a of w ~ dist^a at each end (singular-leaf ends only).
    endpoint_exponents: [f64; 2],
    ambient_dim: usize,
    kappa: usize,
    total_mass: f64,
    stderr: Option<Vec<f64>>,
    name: String,
}

impl WeightedDomain {
    /// Builds a domain from explicit samples, checking the type invariants.
    #[allow(clippy::too_many_arguments)]
    pub fn from_samples(
        nodes: Vec<f64>,
        weights: Vec<f64>,
        quad: Vec<f64>,
        length: f64,
        periodic: bool,
        endpoints: [EndpointKind; 2],
        endpoint_exponents: [f64; 2],
        ambient_dim: usize,
        kappa: usize,
        total_mass: f64,
        stderr: Option<Vec<f64>>,
        name: String,
    ) -> Result<Self> {
        let mut domain = WeightedDomain {
            nodes,
            weights,
            quad,
            measure: Vec::new(),
            length,
            periodic,
            endpoints,
            endpoint_exponents,
            ambient_dim,
            kappa,
            total_mass,
            stderr,
            name,
        };
        domain.measure = domain.build_measure();
        domain.validate()?;
        Ok(domain)
    }

    fn build_measure(&self) -> Vec<f64> {
        let n = self.nodes.len();
        let mut measure: Vec<f64> = self
            .quad
            .iter()
            .zip(&self.weights)
            .map(|(q, w)| q * w)
            .collect();
        let wmax = self.weights.iter().cloned().fold(0.0f64, f64::max);
        if !self.periodic && self.stderr.is_none() {
            for (end, neighbor, a) in [
                (0usize, 1usize, self.endpoint_exponents[0]),
                (n - 1, n - 2, self.endpoint_exponents[1]),
            ] {
                if self.endpoints[usize::from(end != 0)] == EndpointKind::SingularLeaf
                    && self.weights[end] <= 1e-13 * wmax
                {
                    let h = (self.nodes[neighbor] - self.nodes[end]).abs();
                    let cell_avg = 0.5 * (self.weights[end] + self.weights[neighbor]);
                    measure[end] = h * cell_avg / (2.0 * (1.0 + a.max(0.0)));
                }
            }
        }
        measure
    }

    fn validate(&self) -> Result<()> {
        let n = self.nodes.len();
        if n < 3 || self.weights.len() != n || self.quad.len() != n {
            return Err(Error::InvalidParameter(format!(
                "domain needs matching nodes/weights/quad with at least 3 nodes, got {n}"
            )));
        }
        if self.periodic && n < 8 {
            return Err(Error::InvalidParameter(format!(
                "periodic domains need at least 8 nodes, got {n}"
            )));
        }
        if self.kappa < 1 || self.kappa >= self.ambient_dim {
            return Err(Error::InvalidParameter(format!(
                "kappa = {} must satisfy 1 <= kappa < ambient_dim = {}",
                self.kappa, self.ambient_dim
            )));
        }
        for i in 1..n {
            if self.nodes[i] <= self.nodes[i - 1] {
                return Err(Error::InvalidParameter(format!(
                    "nodes must be strictly increasing at index {i}"
                )));
            }
        }
        for (i, &w) in self.weights.iter().enumerate() {
            if !w.is_finite() || w < 0.0 {
                return Err(Error::InvalidParameter(format!("weight {w} at node {i}")));
            }
            let interior = i > 0 && i + 1 < n;
            if (interior || self.periodic) && w <= 0.0 {
                return Err(Error::InvalidParameter(format!(
                    "interior weight must be positive, got {w} at node {i}"
                )));
            }
        }
        // Total mass must be reproduced by the quadrature up to its own
        // truncation error; the bound scales with the square of the mesh.
        let mass: f64 = self.measure.iter().sum();
        let h = self.max_spacing() / self.length.max(1e-300);
        let tol = (25.0 * h * h).max(1e-9);
        if (mass - self.total_mass).abs() > tol * self.total_mass.abs() {
            return Err(Error::InvalidParameter(format!(
                "quadrature mass {mass} deviates from declared total mass {}",
                self.total_mass
            )));
        }
        Ok(())
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

    pub fn quad(&self) -> &[f64] {
        &self.quad
    }

    /// Discrete measure per node (see the field documentation).
    pub fn measure(&self) -> &[f64] {
        &self.measure
    }

    /// Endpoint weight exponents (w ~ dist^a) recorded for singular ends.
    pub fn endpoint_exponents(&self) -> [f64; 2] {
        self.endpoint_exponents
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    pub fn is_periodic(&self) -> bool {
        self.periodic
    }

    pub fn endpoints(&self) -> [EndpointKind; 2] {
        self.endpoints
    }

    pub fn ambient_dim(&self) -> usize {
        self.ambient_dim
    }

    pub fn kappa(&self) -> usize {
        self.kappa
    }

    pub fn total_mass(&self) -> f64 {
        self.total_mass
    }

    /// Per-bin standard errors for Monte-Carlo domains, `None` for analytic ones.
    pub fn stderr(&self) -> Option<&[f64]> {
        self.stderr.as_deref()
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// Number of stiffness cells (node pairs coupled by the gradient).
    pub fn cell_count(&self) -> usize {
        if self.periodic {
            self.nodes.len()
        } else {
            self.nodes.len() - 1
        }
    }

    /// Cell (i, j, h): nodes coupled by the cell and their separation.
    pub fn cell(&self, c: usize) -> (usize, usize, f64) {
        let n = self.nodes.len();
        if c + 1 < n {
            (c, c + 1, self.nodes[c + 1] - self.nodes[c])
        } else {
            debug_assert!(self.periodic);
            (n - 1, 0, self.length - (self.nodes[n - 1] - self.nodes[0]))
        }
    }

    fn max_spacing(&self) -> f64 {
        (0..self.cell_count())
            .map(|c| self.cell(c).2)
            .fold(0.0, f64::max)
    }

    /// Node spacing when the grid is uniform (within 1e-9 relative).
    pub fn uniform_spacing(&self) -> Option<f64> {
        let h0 = self.cell(0).2;
        for c in 1..self.cell_count() {
            if (self.cell(c).2 - h0).abs() > 1e-9 * h0 {
                return None;
            }
        }
        Some(h0)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&DomainDoc::from(self)).expect("domain serialization")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: DomainDoc = serde_json::from_str(text)
            .map_err(|e| Error::InvalidParameter(format!("domain JSON: {e}")))?;
        doc.into_domain()
    }
}

/// Serialized form of a [`WeightedDomain`]: `{nodes, weights, stderr, meta}`.
#[derive(Serialize, Deserialize)]
struct DomainDoc {
    nodes: Vec<f64>,
    weights: Vec<f64>,
    stderr: Option<Vec<f64>>,
    meta: DomainMeta,
}

#[derive(Serialize, Deserialize)]
struct DomainMeta {
    name: String,
    ambient_dim: usize,
    kappa: usize,
    length: f64,
    total_mass: f64,
    periodic: bool,
    endpoints: [EndpointKind; 2],
    endpoint_exponents: [f64; 2],
    quad: Vec<f64>,
}

impl From<&WeightedDomain> for DomainDoc {
    fn from(d: &WeightedDomain) -> Self {
        DomainDoc {
            nodes: d.nodes.clone(),
            weights: d.weights.clone(),
            stderr: d.stderr.clone(),
            meta: DomainMeta {
                name: d.name.clone(),
                ambient_dim: d.ambient_dim,
                kappa: d.kappa,
                length: d.length,
                total_mass: d.total_mass,
                periodic: d.periodic,
                endpoints: d.endpoints,
                endpoint_exponents: d.endpoint_exponents,
                quad: d.quad.clone(),
            },
        }
    }
}

impl DomainDoc {
    fn into_domain(self) -> Result<WeightedDomain> {
        WeightedDomain::from_samples(
            self.nodes,
            self.weights,
            self.meta.quad,
            self.meta.length,
            self.meta.periodic,
            self.meta.endpoints,
            self.meta.endpoint_exponents,
            self.meta.ambient_dim,
            self.meta.kappa,
            self.meta.total_mass,
            self.stderr,
            self.meta.name,
        )
    }
}

/// Quadrature of `∫ f dμ*` over the quotient.
pub fn integrate(domain: &WeightedDomain, f: &Field) -> Result<f64> {
    if f.len() != domain.len() {
        return Err(Error::DimensionMismatch {
            field: f.len(),
            domain: domain.len(),
        });
    }
    Ok(domain
        .measure
        .iter()
        .zip(f.values())
        .map(|(m, v)| m * v)
        .sum())
}

/// Analytic description of a foliation quotient: weight profile, geometry
/// metadata and default coefficient functions.
#[derive(Clone)]
pub struct FoliationPreset {
    pub name: String,
    pub ambient_dim: usize,
    pub kappa: usize,
    pub length: f64,
    pub periodic: bool,
    pub endpoints: [EndpointKind; 2],
    /// Exponent a of the leading behaviour w ~ dist^a at each end, used by
    /// the shooting oracle's series start at singular leaves.
    pub endpoint_exponents: [f64; 2],
    pub total_mass: f64,
    weight: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    dlog_weight: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    pub default_b: f64,
    pub default_c: f64,
}

impl fmt::Debug for FoliationPreset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FoliationPreset")
            .field("name", &self.name)
            .field("ambient_dim", &self.ambient_dim)
            .field("kappa", &self.kappa)
            .field("length", &self.length)
            .field("periodic", &self.periodic)
            .finish()
    }
}

impl FoliationPreset {
    /// Leaf-volume density at quotient coordinate `t`.
    pub fn weight_at(&self, t: f64) -> f64 {
        (self.weight)(t)
    }

    /// Logarithmic derivative w'/w on the open interval.
    pub fn dlog_weight_at(&self, t: f64) -> f64 {
        (self.dlog_weight)(t)
    }

    /// Samples the analytic weight on a uniform grid of `resolution` cells.
    pub fn discretize(&self, resolution: usize) -> Result<WeightedDomain> {
        if resolution < 8 {
            return Err(Error::ResolutionTooCoarse { got: resolution, min: 8 });
        }
        let n = if self.periodic { resolution } else { resolution + 1 };
        let h = self.length / resolution as f64;
        let nodes: Vec<f64> = (0..n).map(|i| i as f64 * h).collect();
        let weights: Vec<f64> = nodes.iter().map(|&t| self.weight_at(t)).collect();
        let quad: Vec<f64> = if self.periodic {
            vec![h; n]
        } else {
            (0..n)
                .map(|i| if i == 0 || i + 1 == n { 0.5 * h } else { h })
                .collect()
        };
        WeightedDomain::from_samples(
            nodes,
            weights,
            quad,
            self.length,
            self.periodic,
            self.endpoints,
            self.endpoint_exponents,
            self.ambient_dim,
            self.kappa,
            self.total_mass,
            None,
            self.name.clone(),
        )
    }
}

/// Identifier for a registered quotient construction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PresetId {
    /// Round m-sphere under the suspended rotation action; zonal quotient [0, π].
    SuspensionSphere { m: usize },
    /// S^{k+n-1} under the block rotation action O(k) x O(n); quotient [0, π/2].
    OkonSphere { k: usize, n: usize },
    /// Flat 2-torus foliated by one circle factor; periodic quotient of length 2π.
    TorusFactor,
    /// Isoparametric quotient of a Clifford system, estimated by Monte-Carlo.
    Fkm { q: usize, copies: usize },
    /// Placeholder for user-supplied domains loaded from a file.
    Custom,
}

impl fmt::Display for PresetId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PresetId::SuspensionSphere { m } => write!(f, "suspension-sphere({m})"),
            PresetId::OkonSphere { k, n } => write!(f, "okon-sphere({k},{n})"),
            PresetId::TorusFactor => write!(f, "torus-factor"),
            PresetId::Fkm { q, copies } => write!(f, "fkm({q},{copies})"),
            PresetId::Custom => write!(f, "custom"),
        }
    }
}

impl FromStr for PresetId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let (head, args) = match s.find('(') {
            Some(i) if s.ends_with(')') => {
                let inner = &s[i + 1..s.len() - 1];
                let args: Vec<&str> = inner.split(',').map(str::trim).collect();
                (&s[..i], args)
            }
            _ => (s, Vec::new()),
        };
        let parse = |v: &str| -> Result<usize> {
            v.parse::<usize>()
                .map_err(|_| Error::UnknownPreset(s.to_string()))
        };
        match (head, args.len()) {
            ("suspension-sphere", 1) => Ok(PresetId::SuspensionSphere { m: parse(args[0])? }),
            ("okon-sphere", 2) => Ok(PresetId::OkonSphere {
                k: parse(args[0])?,
                n: parse(args[1])?,
            }),
            ("torus-factor", 0) => Ok(PresetId::TorusFactor),
            ("fkm", 2) => Ok(PresetId::Fkm {
                q: parse(args[0])?,
                copies: parse(args[1])?,
            }),
            ("custom", 0) => Ok(PresetId::Custom),
            _ => Err(Error::UnknownPreset(s.to_string())),
        }
    }
}

/// Lists the registered preset families with their canonical spellings.
pub fn registry() -> Vec<(&'static str, &'static str)> {
    vec![
        (
            "suspension-sphere(m)",
            "round S^m under the suspended SO(m) action; quotient [0, π], weight ∝ sin^(m-1) t",
        ),
        (
            "okon-sphere(k,n)",
            "S^(k+n-1) under O(k) x O(n); quotient [0, π/2], weight ∝ cos^(k-1) t sin^(n-1) t",
        ),
        (
            "torus-factor",
            "flat T^2 foliated by one circle factor; periodic quotient of length 2π, constant weight",
        ),
        (
            "fkm(q,copies)",
            "codimension-one isoparametric quotient of a Clifford system, Monte-Carlo weight on [0, π/4]",
        ),
        (
            "custom",
            "user-supplied weighted domain loaded from a JSON file",
        ),
    ]
}

/// Volume of the unit d-sphere S^d.
pub fn sphere_volume(d: usize) -> f64 {
    // vol(S^d) = 2 π^{(d+1)/2} / Γ((d+1)/2), via Γ at half-integers.
    let two_x = d + 1; // argument of Γ, doubled
    let gamma = gamma_half(two_x);
    2.0 * PI.powf(two_x as f64 / 2.0) / gamma
}

/// Γ(two_x / 2) for a positive integer `two_x`.
fn gamma_half(two_x: usize) -> f64 {
    let mut g = if two_x % 2 == 0 { 1.0 } else { PI.sqrt() };
    let mut k = if two_x % 2 == 0 { 2 } else { 1 };
    while k < two_x {
        g *= k as f64 / 2.0;
        k += 2;
    }
    g
}

/// Returns the analytic preset description for `id`.
pub fn preset(id: PresetId) -> Result<FoliationPreset> {
    match id {
        PresetId::SuspensionSphere { m } => {
            if m < 2 {
                return Err(Error::InvalidParameter(format!(
                    "suspension-sphere needs m >= 2, got {m}"
                )));
            }
            let a = (m - 1) as f64;
            let c = sphere_volume(m - 1);
            Ok(FoliationPreset {
                name: id.to_string(),
                ambient_dim: m,
                // Dimension of the regular leaves; the two polar leaves are
                // points and carry zero weight.
                kappa: m - 1,
                length: PI,
                periodic: false,
                endpoints: [EndpointKind::SingularLeaf; 2],
                endpoint_exponents: [a, a],
                total_mass: sphere_volume(m),
                weight: Arc::new(move |t: f64| c * t.sin().max(0.0).powf(a)),
                dlog_weight: Arc::new(move |t: f64| a * t.cos() / t.sin()),
                default_b: 2.0,
                default_c: 1.0,
            })
        }
        PresetId::OkonSphere { k, n } => {
            if k < 2 || n < 2 {
                return Err(Error::InvalidParameter(format!(
                    "okon-sphere needs k, n >= 2, got ({k},{n})"
                )));
            }
            let ak = (k - 1) as f64;
            let an = (n - 1) as f64;
            let c = sphere_volume(k - 1) * sphere_volume(n - 1);
            Ok(FoliationPreset {
                name: id.to_string(),
                ambient_dim: k + n - 1,
                kappa: k.min(n) - 1,
                length: PI / 2.0,
                periodic: false,
                endpoints: [EndpointKind::SingularLeaf; 2],
                endpoint_exponents: [an, ak],
                total_mass: sphere_volume(k + n - 1),
                weight: Arc::new(move |t: f64| {
                    c * t.cos().max(0.0).powf(ak) * t.sin().max(0.0).powf(an)
                }),
                dlog_weight: Arc::new(move |t: f64| {
                    -ak * t.sin() / t.cos() + an * t.cos() / t.sin()
                }),
                default_b: 2.0,
                default_c: 1.0,
            })
        }
        PresetId::TorusFactor => Ok(FoliationPreset {
            name: id.to_string(),
            ambient_dim: 2,
            kappa: 1,
            length: 2.0 * PI,
            periodic: true,
            endpoints: [EndpointKind::Periodic; 2],
            endpoint_exponents: [0.0, 0.0],
            total_mass: 4.0 * PI * PI,
            weight: Arc::new(|_| 2.0 * PI),
            dlog_weight: Arc::new(|_| 0.0),
            default_b: 2.0,
            default_c: 1.0,
        }),
        PresetId::Fkm { .. } | PresetId::Custom => Err(Error::InvalidParameter(format!(
            "{id} has no analytic weight; build it via the clifford module or load a domain file"
        ))),
    }
}

/// Discretizes a registered preset at the given resolution (cell count).
///
/// Clifford quotients are built by Monte-Carlo pushforward with `resolution`
/// bins and a fixed default sample budget; use
/// [`crate::clifford::CliffordSystem::fkm_quotient_domain`] directly for
/// control over samples and seed.
pub fn make_preset(id: PresetId, resolution: usize) -> Result<WeightedDomain> {
    match id {
        PresetId::Fkm { q, copies } => {
            if resolution < 8 {
                return Err(Error::ResolutionTooCoarse { got: resolution, min: 8 });
            }
            let system = crate::clifford::build_clifford_system(q, copies)?;
            system.fkm_quotient_domain(resolution, 1_000_000, 0x5eed)
        }
        PresetId::Custom => Err(Error::InvalidParameter(
            "custom domains are loaded from a JSON domain file".into(),
        )),
        _ => preset(id)?.discretize(resolution),
    }
}

/// Settings for [`pushforward_mc`].
#[derive(Debug, Clone)]
pub struct McConfig {
    pub bins: usize,
    pub samples: usize,
    /// Range of the quotient map; bin edges are uniform over it.
    pub range: (f64, f64),
    /// Ambient volume; the histogram is scaled to integrate to this exactly.
    pub total_mass: f64,
    pub seed: u64,
    /// Length of the ambient point vectors produced by the sampler.
    pub ambient_len: usize,
    pub ambient_dim: usize,
    pub kappa: usize,
    pub endpoints: [EndpointKind; 2],
    pub name: String,
}

/// Empirical pushforward of an ambient measure through a quotient map.
///
/// Draws `samples` ambient points, bins their quotient values and scales the
/// histogram so the midpoint-rule mass equals `total_mass` exactly. Nodes sit
/// at bin midpoints and per-bin standard errors are recorded. Empty bins
/// strictly between occupied ones signal under-sampling and are an error;
/// empty flank bins are trimmed.
pub fn pushforward_mc<S, Q>(sampler: S, quotient_map: Q, cfg: &McConfig) -> Result<WeightedDomain>
where
    S: Fn(&mut ChaCha8Rng, &mut [f64]) + Sync,
    Q: Fn(&[f64]) -> f64 + Sync,
{
    if cfg.samples < 10_000 {
        return Err(Error::InvalidParameter(format!(
            "Monte-Carlo pushforward needs at least 1e4 samples, got {}",
            cfg.samples
        )));
    }
    if cfg.bins < 4 {
        return Err(Error::InvalidParameter(format!("too few bins: {}", cfg.bins)));
    }
    let (lo, hi) = cfg.range;
    if !(hi > lo) || !lo.is_finite() || !hi.is_finite() {
        return Err(Error::InvalidParameter(format!("bad range [{lo}, {hi}]")));
    }
    let span = hi - lo;
    let h = span / cfg.bins as f64;

    // Fixed batch layout with one ChaCha stream per batch keeps the result
    // independent of the thread schedule.
    let n_batches = 64usize;
    let per = cfg.samples / n_batches;
    let rem = cfg.samples % n_batches;
    let batches: Vec<std::result::Result<Vec<u64>, Error>> = (0..n_batches)
        .into_par_iter()
        .map(|b| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(b as u64 + 1);
            let mut counts = vec![0u64; cfg.bins];
            let mut point = vec![0.0; cfg.ambient_len];
            let m = per + usize::from(b < rem);
            for _ in 0..m {
                sampler(&mut rng, &mut point);
                let v = quotient_map(&point);
                if !v.is_finite() {
                    return Err(Error::QuotientValueOutOfRange { value: v, lo, hi });
                }
                let slack = 1e-9 * span;
                if v < lo - slack || v > hi + slack {
                    return Err(Error::QuotientValueOutOfRange { value: v, lo, hi });
                }
                let k = (((v - lo) / h) as usize).min(cfg.bins - 1);
                counts[k] += 1;
            }
            Ok(counts)
        })
        .collect();

    let mut counts = vec![0u64; cfg.bins];
    for batch in batches {
        let c = batch?;
        for (acc, v) in counts.iter_mut().zip(c) {
            *acc += v;
        }
    }

    let first = counts.iter().position(|&c| c > 0).expect("some samples");
    let last = cfg.bins - 1 - counts.iter().rev().position(|&c| c > 0).unwrap();
    for k in first..=last {
        if counts[k] == 0 {
            return Err(Error::UnderSampled { bin: k });
        }
    }

    let n = (last - first + 1).max(3);
    let lo_k = if last - first + 1 < 3 {
        // Degenerate (near-constant) maps still produce a valid 3-node
        // domain with the occupied bin kept interior.
        first.saturating_sub(1).min(cfg.bins.saturating_sub(3))
    } else {
        first
    };
    let total = cfg.samples as f64;
    let mut nodes = Vec::with_capacity(n);
    let mut weights = Vec::with_capacity(n);
    let mut stderr = Vec::with_capacity(n);
    for k in lo_k..lo_k + n {
        let p = counts[k] as f64 / total;
        nodes.push(lo + (k as f64 + 0.5) * h);
        weights.push(cfg.total_mass * p / h);
        stderr.push(cfg.total_mass * (p * (1.0 - p) / total).sqrt() / h);
    }

    WeightedDomain::from_samples(
        nodes,
        weights,
        vec![h; n],
        span,
        false,
        cfg.endpoints,
        [1.0, 1.0],
        cfg.ambient_dim,
        cfg.kappa,
        cfg.total_mass,
        Some(stderr),
        cfg.name.clone(),
    )

}

/// Draws a uniform point on the unit sphere in R^dim.
pub fn sample_unit_sphere(rng: &mut ChaCha8Rng, point: &mut [f64]) {
    use rand_distr::{Distribution, StandardNormal};
    loop {
        let mut norm2 = 0.0;
        for x in point.iter_mut() {
            let g: f64 = StandardNormal.sample(rng);
            *x = g;
            norm2 += g * g;
        }
        if norm2 > 1e-12 {
            let inv = norm2.sqrt().recip();
            for x in point.iter_mut() {
                *x *= inv;
            }
            return;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::discrete::Field;

    #[test]
    fn sphere_volumes() {
        assert!((sphere_volume(1) - 2.0 * PI).abs() < 1e-12);
        assert!((sphere_volume(2) - 4.0 * PI).abs() < 1e-12);
        assert!((sphere_volume(3) - 2.0 * PI * PI).abs() < 1e-12);
        assert!((sphere_volume(4) - 8.0 * PI * PI / 3.0).abs() < 1e-12);
    }

    #[test]
    fn preset_masses() {
        for (id, vol) in [
            (PresetId::SuspensionSphere { m: 2 }, 4.0 * PI),
            (PresetId::SuspensionSphere { m: 3 }, 2.0 * PI * PI),
            (PresetId::OkonSphere { k: 2, n: 2 }, 2.0 * PI * PI),
            (PresetId::OkonSphere { k: 2, n: 3 }, 8.0 * PI * PI / 3.0),
            (PresetId::TorusFactor, 4.0 * PI * PI),
        ] {
            let domain = make_preset(id, 256).unwrap();
            let one = Field::constant(&domain, 1.0);
            let mass = integrate(&domain, &one).unwrap();
            assert!(
                (mass - vol).abs() < 2e-3 * vol,
                "{id}: mass {mass} vs {vol}"
            );
        }
    }

    #[test]
    fn torus_mass_is_exact() {
        // Uniform periodic quadrature of a constant has no truncation error.
        let domain = make_preset(PresetId::TorusFactor, 64).unwrap();
        let one = Field::constant(&domain, 1.0);
        let mass = integrate(&domain, &one).unwrap();
        assert!((mass - 4.0 * PI * PI).abs() < 1e-10);
    }

    #[test]
    fn odd_integrand_vanishes_on_suspension_sphere() {
        let domain = make_preset(PresetId::SuspensionSphere { m: 2 }, 512).unwrap();
        let f = Field::from_fn(&domain, |t| t.cos());
        let v = integrate(&domain, &f).unwrap();
        assert!(v.abs() < 1e-10, "got {v}");
    }

    #[test]
    fn refinement_consistency_is_second_order() {
        let id = PresetId::SuspensionSphere { m: 2 };
        let mut errs = Vec::new();
        for &res in &[64usize, 128, 256] {
            let domain = make_preset(id, res).unwrap();
            let f = Field::from_fn(&domain, |t| (t.cos() + 0.5).powi(2));
            errs.push(integrate(&domain, &f).unwrap());
        }
        let fine = {
            let domain = make_preset(id, 4096).unwrap();
            let f = Field::from_fn(&domain, |t| (t.cos() + 0.5).powi(2));
            integrate(&domain, &f).unwrap()
        };
        let e: Vec<f64> = errs.iter().map(|v| (v - fine).abs()).collect();
        assert!(e[1] < e[0] / 3.0, "{e:?}");
        assert!(e[2] < e[1] / 3.0, "{e:?}");
    }

    #[test]
    fn unknown_preset_and_coarse_resolution_error() {
        assert!(matches!(
            "nonsense(3)".parse::<PresetId>(),
            Err(Error::UnknownPreset(_))
        ));
        assert!(matches!(
            make_preset(PresetId::TorusFactor, 4),
            Err(Error::ResolutionTooCoarse { .. })
        ));
    }

    #[test]
    fn preset_id_round_trip() {
        for s in ["suspension-sphere(2)", "okon-sphere(2,3)", "torus-factor", "fkm(1,2)"] {
            let id: PresetId = s.parse().unwrap();
            assert_eq!(id.to_string(), s);
        }
    }

    fn mc_config(bins: usize, samples: usize, range: (f64, f64), mass: f64, dim: usize) -> McConfig {
        McConfig {
            bins,
            samples,
            range,
            total_mass: mass,
            seed: 99,
            ambient_len: dim,
            ambient_dim: dim - 1,
            kappa: 1,
            endpoints: [EndpointKind::SingularLeaf; 2],
            name: "mc-test".into(),
        }
    }

    #[test]
    fn pushforward_matches_polar_angle_density() {
        let cfg = mc_config(100, 200_000, (0.0, PI), 4.0 * PI, 3);
        let domain = pushforward_mc(
            sample_unit_sphere,
            |x: &[f64]| x[2].clamp(-1.0, 1.0).acos(),
            &cfg,
        )
        .unwrap();
        let se = domain.stderr().unwrap();
        let mut worst: f64 = 0.0;
        for (i, &t) in domain.nodes().iter().enumerate() {
            let exact = 2.0 * PI * t.sin();
            let dev = (domain.weights()[i] - exact).abs() / se[i].max(1e-300);
            worst = worst.max(dev);
        }
        assert!(worst < 3.0, "worst deviation {worst} standard errors");
    }

    #[test]
    fn pushforward_matches_block_angle_density() {
        let cfg = mc_config(80, 200_000, (0.0, PI / 2.0), 2.0 * PI * PI, 4);
        let domain = pushforward_mc(
            sample_unit_sphere,
            |x: &[f64]| (x[0] * x[0] + x[1] * x[1]).sqrt().clamp(0.0, 1.0).acos(),
            &cfg,
        )
        .unwrap();
        let se = domain.stderr().unwrap();
        let mut worst: f64 = 0.0;
        for (i, &t) in domain.nodes().iter().enumerate() {
            let exact = 4.0 * PI * PI * t.cos() * t.sin();
            let dev = (domain.weights()[i] - exact).abs() / se[i].max(1e-300);
            worst = worst.max(dev);
        }
        assert!(worst < 3.0, "worst deviation {worst} standard errors");
    }

    #[test]
    fn pushforward_conserves_mass_exactly() {
        let cfg = mc_config(64, 50_000, (0.0, PI), 4.0 * PI, 3);
        let domain = pushforward_mc(
            sample_unit_sphere,
            |x: &[f64]| x[2].clamp(-1.0, 1.0).acos(),
            &cfg,
        )
        .unwrap();
        let mass = integrate(&domain, &Field::constant(&domain, 1.0)).unwrap();
        assert!((mass - 4.0 * PI).abs() < 1e-10 * 4.0 * PI);
    }

    #[test]
    fn pushforward_identity_for_observables() {
        // Direct ambient Monte-Carlo of f(polar angle) against quadrature on
        // the pushforward domain.
        let samples = 200_000;
        let cfg = mc_config(100, samples, (0.0, PI), 4.0 * PI, 3);
        let domain = pushforward_mc(
            sample_unit_sphere,
            |x: &[f64]| x[2].clamp(-1.0, 1.0).acos(),
            &cfg,
        )
        .unwrap();
        let f = |t: f64| (2.0 * t).cos() + 0.3 * t;
        let quad = integrate(&domain, &Field::from_fn(&domain, f)).unwrap();

        let mut rng = ChaCha8Rng::seed_from_u64(1234);
        let mut point = [0.0; 3];
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        for _ in 0..samples {
            sample_unit_sphere(&mut rng, &mut point);
            let v = f(point[2].clamp(-1.0, 1.0).acos());
            sum += v;
            sumsq += v * v;
        }
        let n = samples as f64;
        let mean = sum / n;
        let direct = 4.0 * PI * mean;
        let se = 4.0 * PI * ((sumsq / n - mean * mean) / n).sqrt();
        // Two independent estimators; allow for both errors plus the
        // within-bin quadrature bias of the histogram route.
        let tol = 3.0 * (2.0f64).sqrt() * se + 2e-3 * direct.abs().max(1.0);
        assert!(
            (quad - direct).abs() < tol,
            "quad {quad} vs direct {direct} (tol {tol})"
        );
    }

    #[test]
    fn constant_map_gives_single_occupied_bin() {
        let cfg = mc_config(32, 20_000, (0.0, 1.0), 4.0 * PI, 3);
        let domain = pushforward_mc(sample_unit_sphere, |_: &[f64]| 0.5, &cfg).unwrap();
        let mass = integrate(&domain, &Field::constant(&domain, 1.0)).unwrap();
        assert!((mass - 4.0 * PI).abs() < 1e-10 * 4.0 * PI);
        let occupied = domain.weights().iter().filter(|&&w| w > 0.0).count();
        assert_eq!(occupied, 1);
    }

    #[test]
    fn interior_gap_is_under_sampling() {
        let cfg = mc_config(32, 20_000, (0.0, 1.0), 1.0, 3);
        let out = pushforward_mc(
            sample_unit_sphere,
            |x: &[f64]| if x[2] > 0.0 { 0.2 } else { 0.8 },
            &cfg,
        );
        assert!(matches!(out, Err(Error::UnderSampled { .. })));
    }

    #[test]
    fn too_few_samples_rejected() {
        let cfg = mc_config(32, 5_000, (0.0, 1.0), 1.0, 3);
        let out = pushforward_mc(sample_unit_sphere, |_: &[f64]| 0.5, &cfg);
        assert!(matches!(out, Err(Error::InvalidParameter(_))));
    }

    #[test]
    fn domain_json_round_trip() {
        let domain = make_preset(PresetId::OkonSphere { k: 2, n: 2 }, 32).unwrap();
        let text = domain.to_json();
        let back = WeightedDomain::from_json(&text).unwrap();
        assert_eq!(back.len(), domain.len());
        assert_eq!(back.nodes(), domain.nodes());
        assert_eq!(back.weights(), domain.weights());
        assert_eq!(back.kappa(), domain.kappa());
    }
}
