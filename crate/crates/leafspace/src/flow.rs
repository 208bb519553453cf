//! Negative θ-gradient flow, seed construction, and the two search drivers:
//! least-energy positive solutions and multi-seed sign-changing solutions.
//!
//! Descent alone cannot terminate at a nontrivial critical point: the radial
//! direction always carries a negative Hessian mode there, since
//! J''(u)\[u,u\] = (2-p)|u|^p < 0 at critical points. The drivers therefore
//! renormalize iterates onto the Nehari set (the positive and negative parts
//! separately, for sign-changing seeds) and finish with a damped Newton
//! polish of the discrete critical-point equations once the flow has
//! localized a solution.

use serde::{Deserialize, Serialize};

use crate::discrete::{lumped_mass, stiffness_matrix, Field, ProblemSpec};
use crate::energy::{nonlinearity, project_nehari, EnergyContext};
use crate::linalg::Factorized;
use crate::quotient::WeightedDomain;
use crate::verify::strong_residual;
use crate::{Error, Result};

/// Parameters of the descent flow.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FlowConfig {
    /// Initial (and maximal) step size; capped at 1 so that steps stay convex
    /// combinations of the iterate and L u + G u, which preserves the cone.
    pub step0: f64,
    /// Backtracking factor in (0, 1).
    pub backtrack: f64,
    /// Armijo constant.
    pub armijo: f64,
    /// Stopping tolerance on the θ-norm of the gradient.
    pub tol_grad: f64,
    pub max_iters: usize,
    pub max_backtracks: usize,
    /// Monitored cone radius: a trajectory seeded in the nonnegative cone
    /// aborts if |u-|_θ ever exceeds max(initial value, this).
    pub cone_radius: f64,
    /// Relative L² threshold for identifying duplicate solutions.
    pub dedup_rel: f64,
    /// Finish with a damped Newton polish of the critical-point equations.
    pub polish: bool,
    /// Number of positive-seed restarts in the least-energy search.
    pub restarts: usize,
    pub seed: u64,
}

impl Default for FlowConfig {
    fn default() -> Self {
        FlowConfig {
            step0: 1.0,
            backtrack: 0.5,
            armijo: 1e-4,
            tol_grad: 1e-10,
            max_iters: 20_000,
            max_backtracks: 60,
            cone_radius: 1e-8,
            dedup_rel: 1e-3,
            polish: true,
            restarts: 1,
            seed: 0,
        }
    }
}

/// Sign structure of a converged solution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SignClass {
    Positive,
    Negative,
    SignChanging,
}

/// A converged critical point with its diagnostics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolutionRecord {
    pub field: Vec<f64>,
    pub energy: f64,
    pub grad_norm: f64,
    pub nehari_residual: f64,
    pub strong_residual: f64,
    pub nodal_count: usize,
    pub sign_class: SignClass,
    /// Seed provenance, e.g. "bump" or "pattern(+,-,+)".
    pub seed: String,
    pub iters: usize,
}

impl SolutionRecord {
    pub fn field(&self, domain: &WeightedDomain) -> Result<Field> {
        Field::new(domain, self.field.clone())
    }
}

/// Per-step diagnostics of one flow trajectory.
#[derive(Debug, Clone, Default)]
pub struct FlowTrace {
    /// Energy after each accepted step, starting with the seed.
    pub energies: Vec<f64>,
    /// |u-|_θ after each accepted step.
    pub negative_norms: Vec<f64>,
}

/// Result of one explicit gradient step.
#[derive(Debug, Clone)]
pub struct StepResult {
    pub field: Field,
    pub eta: f64,
    pub energy: f64,
    /// Set when the input already satisfies the gradient tolerance; the
    /// field is returned unchanged.
    pub terminal: bool,
}

/// One Armijo-backtracked step of the unconstrained negative θ-gradient flow.
pub fn flow_step(
    spec: &ProblemSpec,
    domain: &WeightedDomain,
    u: &Field,
    config: &FlowConfig,
) -> Result<StepResult> {
    let ctx = EnergyContext::new(spec, domain)?;
    let g = ctx.gradient(u)?;
    let gn = ctx.gradient_norm(&g)?;
    let j0 = ctx.energy(u)?;
    if gn <= config.tol_grad {
        return Ok(StepResult { field: u.clone(), eta: 0.0, energy: j0, terminal: true });
    }
    let mut eta = config.step0.min(1.0);
    for _ in 0..config.max_backtracks {
        let cand = u.axpy(-eta, &g);
        let j = ctx.energy(&cand)?;
        if j <= j0 - config.armijo * eta * gn * gn {
            return Ok(StepResult { field: cand, eta, energy: j, terminal: false });
        }
        eta *= config.backtrack;
    }
    Err(Error::LineSearchFailed(config.max_backtracks))
}

/// k nonnegative bumps with pairwise disjoint supports in the interior.
///
/// The bumps are quartic splines (1-s²)² over disjoint index slots with at
/// least one untouched node between supports, so all pairwise H¹ pairings
/// vanish exactly on the mesh.
pub fn seed_bumps(domain: &WeightedDomain, k: usize) -> Result<Vec<Field>> {
    if k < 1 {
        return Err(Error::InvalidParameter("need k >= 1 bumps".into()));
    }
    let n = domain.len();
    let interior: Vec<usize> = if domain.is_periodic() {
        (0..n).collect()
    } else {
        (1..n - 1).collect()
    };
    if interior.len() < 4 * k {
        return Err(Error::DomainTooCoarse { k, needed: 4 * k, have: interior.len() });
    }
    let slot = interior.len() / k;
    let mut bumps = Vec::with_capacity(k);
    for b in 0..k {
        let start = interior[b * slot];
        // Leave one gap node at the end of each slot.
        let span = slot - 1;
        let mut values = vec![0.0; n];
        for j in 0..span {
            let idx = (start + j) % n;
            // s runs over (-1, 1) strictly inside the support.
            let s = -1.0 + 2.0 * (j as f64 + 1.0) / (span as f64 + 1.0);
            let w = 1.0 - s * s;
            values[idx] = w * w;
        }
        bumps.push(Field::new(domain, values)?);
    }
    Ok(bumps)
}

/// Sign-changing seed Σ sign_i σ(bump_i): each signed part is a sum of
/// Nehari-projected bumps with disjoint supports, hence itself on the
/// Nehari set up to round-off.
pub fn seed_sign_changing(
    spec: &ProblemSpec,
    domain: &WeightedDomain,
    pattern: &[i8],
) -> Result<Field> {
    if pattern.len() < 2 {
        return Err(Error::InvalidParameter(
            "sign pattern needs at least two entries".into(),
        ));
    }
    if pattern.iter().any(|&s| s == 0) {
        return Err(Error::InvalidParameter("pattern entries must be ±1".into()));
    }
    let bumps = seed_bumps(domain, pattern.len())?;
    let mut acc = Field::constant(domain, 0.0);
    for (sign, bump) in pattern.iter().zip(&bumps) {
        let projected = project_nehari(spec, domain, bump)?.field;
        acc = acc.axpy(f64::from(*sign), &projected);
    }
    Ok(acc)
}

/// (|u-|_θ, |u-|_{c,p}): an upper bound for the θ-distance to the
/// nonnegative cone and the Lebesgue-side lower-bound quantity.
pub fn negative_part_norm(
    spec: &ProblemSpec,
    domain: &WeightedDomain,
    u: &Field,
) -> Result<(f64, f64)> {
    let neg = u.negative_part();
    let theta = crate::discrete::norm_theta(spec, domain, &neg)?;
    let lp = crate::discrete::norm_cp(spec, domain, &neg)?;
    Ok((theta, lp))
}

/// Number of sign changes along the quotient (wrapping around circles),
/// ignoring nodes below a relative floor.
pub fn nodal_count(domain: &WeightedDomain, u: &Field) -> usize {
    let floor = 1e-9 * u.max_abs();
    let signs: Vec<i8> = u
        .values()
        .iter()
        .filter(|v| v.abs() > floor)
        .map(|v| if *v > 0.0 { 1i8 } else { -1i8 })
        .collect();
    if signs.is_empty() {
        return 0;
    }
    let mut count = 0;
    for w in signs.windows(2) {
        if w[0] != w[1] {
            count += 1;
        }
    }
    if domain.is_periodic() && signs[signs.len() - 1] != signs[0] {
        count += 1;
    }
    count
}

/// Maximal runs of same-sign nodes (values below a relative floor are
/// transparent), merged across the wrap on circles. Runs whose amplitude
/// stays below a fraction of the global amplitude are interface flicker,
/// not nodal domains, and are dropped.
fn nodal_components(domain: &WeightedDomain, u: &Field) -> Vec<Vec<usize>> {
    let max = u.max_abs();
    let floor = 1e-8 * max;
    let mut comps: Vec<(i8, f64, Vec<usize>)> = Vec::new();
    for (i, &v) in u.values().iter().enumerate() {
        if v.abs() <= floor {
            continue;
        }
        let s = if v > 0.0 { 1i8 } else { -1i8 };
        match comps.last_mut() {
            Some((cs, amp, idx)) if *cs == s => {
                *amp = amp.max(v.abs());
                idx.push(i);
            }
            _ => comps.push((s, v.abs(), vec![i])),
        }
    }
    if domain.is_periodic() && comps.len() > 1 {
        let first_sign = comps[0].0;
        let last_sign = comps[comps.len() - 1].0;
        if first_sign == last_sign {
            let (_, amp, tail) = comps.pop().unwrap();
            comps[0].1 = comps[0].1.max(amp);
            comps[0].2.splice(0..0, tail);
        }
    }
    comps
        .into_iter()
        .filter(|(_, amp, _)| *amp >= 1e-4 * max)
        .map(|(_, _, idx)| idx)
        .collect()
}

pub fn sign_class(u: &Field) -> SignClass {
    let floor = 1e-9 * u.max_abs();
    let has_pos = u.values().iter().any(|&v| v > floor);
    let has_neg = u.values().iter().any(|&v| v < -floor);
    match (has_pos, has_neg) {
        (true, true) => SignClass::SignChanging,
        (false, true) => SignClass::Negative,
        _ => SignClass::Positive,
    }
}

enum Renormalize {
    /// Project the whole iterate onto the Nehari manifold.
    Whole,
    /// Project each nodal component separately, keeping the prescribed
    /// number of nodal domains alive along the flow.
    NodalParts(usize),
}

struct Driver<'a> {
    ctx: EnergyContext<'a>,
    config: &'a FlowConfig,
}

struct FlowOutcome {
    field: Field,
    trace: FlowTrace,
    iters: usize,
    grad_norm: f64,
    /// Set when the line search exhausted its budget before reaching the
    /// target; the iterate is still the best localized point.
    stalled: bool,
}

impl<'a> Driver<'a> {
    fn new(spec: &'a ProblemSpec, domain: &'a WeightedDomain, config: &'a FlowConfig) -> Result<Self> {
        Ok(Driver { ctx: EnergyContext::new(spec, domain)?, config })
    }

    fn renormalize(&self, u: &Field, how: &Renormalize) -> Result<Field> {
        match how {
            Renormalize::Whole => Ok(project_nehari(self.ctx.spec, self.ctx.domain, u)?.field),
            Renormalize::NodalParts(expected) => {
                let comps = nodal_components(self.ctx.domain, u);
                if comps.len() != *expected {
                    return Err(Error::NotConverged(format!(
                        "nodal structure changed: {} domains instead of {expected}",
                        comps.len()
                    )));
                }
                let n = self.ctx.domain.len();
                let mut acc = Field::constant(self.ctx.domain, 0.0);
                for comp in &comps {
                    let mut vals = vec![0.0; n];
                    for &i in comp {
                        vals[i] = u.values()[i];
                    }
                    let part = Field::from_values(vals);
                    let projected = project_nehari(self.ctx.spec, self.ctx.domain, &part)
                        .map_err(|_| {
                            Error::NotConverged("a nodal component collapsed".into())
                        })?;
                    acc = acc.axpy(1.0, &projected.field);
                }
                Ok(acc)
            }
        }
    }

    /// Renormalized Armijo descent until the gradient norm reaches `target`.
    fn descend(
        &self,
        seed: &Field,
        how: Renormalize,
        target: f64,
        monitor_cone: bool,
    ) -> Result<FlowOutcome> {
        let spec = self.ctx.spec;
        let domain = self.ctx.domain;
        let mut u = self.renormalize(seed, &how)?;
        let mut j = self.ctx.energy(&u)?;
        let mut trace = FlowTrace::default();
        let (mut neg0, _) = negative_part_norm(spec, domain, &u)?;
        neg0 = neg0.max(self.config.cone_radius);
        trace.energies.push(j);
        trace.negative_norms.push(negative_part_norm(spec, domain, &u)?.0);

        let mut eta = self.config.step0.min(1.0);
        for iter in 0..self.config.max_iters {
            let g = self.ctx.gradient(&u)?;
            let gn = self.ctx.gradient_norm(&g)?;
            if gn <= target {
                return Ok(FlowOutcome { field: u, trace, iters: iter, grad_norm: gn, stalled: false });
            }
            let mut accepted = false;
            let mut backtracks = 0;
            // Fallback candidate: the renormalization makes the Armijo slope
            // (built from the unconstrained gradient) an overestimate, so a
            // step with a plain strict decrease still moves the flow forward.
            let mut fallback: Option<(Field, f64)> = None;
            while backtracks <= self.config.max_backtracks {
                let raw = u.axpy(-eta, &g);
                match self.renormalize(&raw, &how) {
                    Ok(cand) => {
                        let jc = self.ctx.energy(&cand)?;
                        if jc <= j - self.config.armijo * eta * gn * gn {
                            u = cand;
                            j = jc;
                            accepted = true;
                            break;
                        }
                        if fallback.is_none() && jc < j - 1e-13 * j.abs().max(1.0) {
                            fallback = Some((cand, jc));
                        }
                    }
                    Err(Error::NotConverged(_)) if backtracks + 1 <= self.config.max_backtracks => {
                        // A too-long step wiped out one signed part; shrink.
                    }
                    Err(e) => return Err(e),
                }
                eta *= self.config.backtrack;
                backtracks += 1;
            }
            if !accepted {
                if let Some((cand, jc)) = fallback.take() {
                    u = cand;
                    j = jc;
                    accepted = true;
                }
            }
            if !accepted {
                // Renormalized descent can pin the nodal interfaces between
                // grid nodes, leaving no descent direction along the
                // projected ray; report the iterate as localized-but-stalled
                // and let the caller decide (the Newton polish usually
                // finishes the job).
                return Ok(FlowOutcome { field: u, trace, iters: iter, grad_norm: gn, stalled: true });
            }
            eta = (eta * 2.0).min(self.config.step0.min(1.0));
            let (neg, _) = negative_part_norm(spec, domain, &u)?;
            trace.energies.push(j);
            trace.negative_norms.push(neg);
            if monitor_cone && neg > neg0 {
                return Err(Error::ConeViolation { norm: neg, allowed: neg0 });
            }
        }
        Err(Error::NoConvergence(self.config.max_iters))
    }

    /// Damped Newton (Levenberg) polish of the nodal critical-point
    /// equations, used once the flow has localized a solution.
    fn polish(&self, start: &Field, tol: f64) -> Result<(Field, usize)> {
        let spec = self.ctx.spec;
        let domain = self.ctx.domain;
        let n = domain.len();
        let mass = lumped_mass(domain);
        let stiff = stiffness_matrix(domain);
        let b = spec.b.values();
        let c = spec.c.values();

        let residual = |u: &Field| -> Vec<f64> {
            let mut r = vec![0.0; n];
            stiff.apply(u.values(), &mut r);
            let f = nonlinearity(spec, u);
            for i in 0..n {
                r[i] += mass[i] * (b[i] * u.values()[i] - f.values()[i]);
            }
            r
        };
        let norm_inf = |r: &[f64]| r.iter().fold(0.0f64, |m, v| m.max(v.abs()));

        let mut u = start.clone();
        let mut r = residual(&u);
        let mut rn = norm_inf(&r);
        let mut lambda = 1e-8;
        let mut iters = 0;
        let mut best_gn = f64::INFINITY;
        let mut stale = 0usize;
        let debug = std::env::var("LEAFSPACE_POLISH_DEBUG").is_ok();
        for _ in 0..60 {
            let gn = self.ctx.gradient_norm(&self.ctx.gradient(&u)?)?;
            if debug {
                eprintln!("polish iter {iters}: |F|_inf = {rn:.3e}, grad = {gn:.3e}, lambda = {lambda:.1e}");
            }
            if gn <= tol {
                return Ok((u, iters));
            }
            // Assembly rounding (~eps * w/h) floors both the residual and
            // the gradient norm; no sustained progress means the floor is
            // reached. A single Newton step may transiently raise the
            // gradient while shrinking the residual, hence the window.
            if gn > 0.97 * best_gn {
                stale += 1;
                if stale >= 4 {
                    break;
                }
            } else {
                stale = 0;
            }
            best_gn = best_gn.min(gn);
            // Jacobian: stiffness + diag(mass (b - (p-1) c |u|^(p-2))).
            let mut jac = stiff.clone();
            for i in 0..n {
                let upow = u.values()[i].abs().powf(spec.p - 2.0);
                jac.diag[i] += mass[i] * (b[i] - (spec.p - 1.0) * c[i] * upow);
            }
            let dscale: Vec<f64> = jac.diag.iter().map(|d| d.abs().max(1e-12)).collect();
            let mut stepped = false;
            for _ in 0..40 {
                let mut damped = jac.clone();
                for i in 0..n {
                    damped.diag[i] += lambda * dscale[i];
                }
                if let Ok(fac) = Factorized::new(&damped) {
                    let neg_r: Vec<f64> = r.iter().map(|v| -v).collect();
                    let delta = fac.solve(&neg_r);
                    let cand = Field::from_values(
                        u.values().iter().zip(&delta).map(|(a, d)| a + d).collect(),
                    );
                    let rc = residual(&cand);
                    let rcn = norm_inf(&rc);
                    if rcn < rn && rcn.is_finite() {
                        u = cand;
                        r = rc;
                        rn = rcn;
                        lambda = (lambda / 3.0).max(1e-14);
                        stepped = true;
                        break;
                    }
                }
                lambda *= 4.0;
            }
            iters += 1;
            if !stepped {
                break;
            }
        }
        let gn = self.ctx.gradient_norm(&self.ctx.gradient(&u)?)?;
        if gn <= tol {
            Ok((u, iters))
        } else {
            Err(Error::NoConvergence(iters))
        }
    }

    fn run(
        &self,
        seed: &Field,
        how: Renormalize,
        monitor_cone: bool,
        provenance: &str,
    ) -> Result<(SolutionRecord, FlowTrace)> {
        let spec = self.ctx.spec;
        let domain = self.ctx.domain;
        let flow_target = if self.config.polish {
            self.config.tol_grad.max(1e-4)
        } else {
            self.config.tol_grad
        };
        let out = self.descend(seed, how, flow_target, monitor_cone)?;
        if out.stalled && !self.config.polish {
            return Err(Error::LineSearchFailed(self.config.max_backtracks));
        }
        let (field, polish_iters) = if self.config.polish && out.grad_norm > self.config.tol_grad {
            let before = sign_class(&out.field);
            let (polished, it) = self.polish(&out.field, self.config.tol_grad)?;
            if sign_class(&polished) != before {
                return Err(Error::NotConverged(
                    "polish changed the sign class of the solution".into(),
                ));
            }
            (polished, it)
        } else {
            (out.field, 0)
        };

        let g = self.ctx.gradient(&field)?;
        let grad_norm = self.ctx.gradient_norm(&g)?;
        let quad = crate::discrete::inner_b(spec, domain, &field, &field)?;
        let pow = crate::discrete::norm_cp_pow(spec, domain, &field)?;
        let record = SolutionRecord {
            energy: 0.5 * quad - pow / spec.p,
            grad_norm,
            nehari_residual: (quad - pow).abs() / quad.abs().max(pow).max(1e-300),
            strong_residual: strong_residual(spec, domain, &field)?,
            nodal_count: nodal_count(domain, &field),
            sign_class: sign_class(&field),
            seed: provenance.to_string(),
            iters: out.iters + polish_iters,
            field: field.values().to_vec(),
        };
        Ok((record, out.trace))
    }
}

/// Least-energy positive solution: Nehari-projected descent from a positive
/// bump seed (plus optional random positive restarts), keeping the best.
pub fn find_least_energy(
    spec: &ProblemSpec,
    domain: &WeightedDomain,
    config: &FlowConfig,
) -> Result<SolutionRecord> {
    Ok(find_least_energy_traced(spec, domain, config)?.0)
}

pub fn find_least_energy_traced(
    spec: &ProblemSpec,
    domain: &WeightedDomain,
    config: &FlowConfig,
) -> Result<(SolutionRecord, FlowTrace)> {
    use rand::SeedableRng;
    if spec.mu <= 0.0 {
        return Err(Error::NonCoercive(spec.mu));
    }
    let driver = Driver::new(spec, domain, config)?;
    let mut best: Option<(SolutionRecord, FlowTrace)> = None;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(config.seed);
    for restart in 0..config.restarts.max(1) {
        let (seed_field, provenance) = if restart == 0 {
            (seed_bumps(domain, 1)?.remove(0), "bump".to_string())
        } else {
            let f = crate::discrete::random_smooth_field(domain, &mut rng, 6);
            let positive = Field::from_values(
                f.values().iter().map(|v| v.abs() + 0.05).collect(),
            );
            (positive, format!("random({restart})"))
        };
        let (mut record, trace) = driver.run(&seed_field, Renormalize::Whole, true, &provenance)?;
        // A flow from a nonnegative seed can only produce a nonnegative
        // limit; flip the convention-negative case for reporting.
        if record.sign_class == SignClass::Negative {
            record.field.iter_mut().for_each(|v| *v = -*v);
            record.sign_class = SignClass::Positive;
        }
        if best.as_ref().map_or(true, |(b, _)| record.energy < b.energy) {
            best = Some((record, trace));
        }
    }
    Ok(best.expect("at least one restart"))
}

/// Outcome of the multi-seed sign-changing search.
#[derive(Debug, Default)]
pub struct SignChangingOutcome {
    /// Distinct converged records, sorted by energy; the positive
    /// least-energy record comes first when it converged.
    pub records: Vec<SolutionRecord>,
    pub traces: Vec<FlowTrace>,
    /// Seeds that failed to converge, with reasons. Finding fewer solutions
    /// than requested is reported here rather than being an error.
    pub failures: Vec<String>,
}

/// Searches for one positive and up to k-1 sign-changing solutions from
/// alternating-sign seeds, deduplicated by aligned L² distance.
pub fn find_sign_changing(
    spec: &ProblemSpec,
    domain: &WeightedDomain,
    k: usize,
    config: &FlowConfig,
) -> Result<Vec<SolutionRecord>> {
    Ok(find_sign_changing_traced(spec, domain, k, config)?.records)
}

pub fn find_sign_changing_traced(
    spec: &ProblemSpec,
    domain: &WeightedDomain,
    k: usize,
    config: &FlowConfig,
) -> Result<SignChangingOutcome> {
    if k < 2 {
        return Err(Error::InvalidParameter("need k >= 2".into()));
    }
    let driver = Driver::new(spec, domain, config)?;
    let mut out = SignChangingOutcome::default();

    match find_least_energy_traced(spec, domain, config) {
        Ok((record, trace)) => {
            out.records.push(record);
            out.traces.push(trace);
        }
        Err(e) => out.failures.push(format!("positive seed: {e}")),
    }

    for alternations in 1..k {
        let pattern: Vec<i8> = (0..=alternations)
            .map(|i| if i % 2 == 0 { 1 } else { -1 })
            .collect();
        let label = format!(
            "pattern({})",
            pattern
                .iter()
                .map(|&s| if s > 0 { "+" } else { "-" })
                .collect::<Vec<_>>()
                .join(",")
        );
        let seed = match seed_sign_changing(spec, domain, &pattern) {
            Ok(s) => s,
            Err(e) => {
                out.failures.push(format!("{label}: {e}"));
                continue;
            }
        };
        let parts = nodal_components(domain, &seed).len();
        match driver.run(&seed, Renormalize::NodalParts(parts), false, &label) {
            Ok((record, trace)) => {
                out.records.push(record);
                out.traces.push(trace);
            }
            Err(e) => out.failures.push(format!("{label}: {e}")),
        }
    }

    dedup_records(domain, &mut out.records, &mut out.traces, config.dedup_rel);
    let order: Vec<usize> = {
        let mut idx: Vec<usize> = (0..out.records.len()).collect();
        idx.sort_by(|&a, &b| {
            out.records[a]
                .energy
                .partial_cmp(&out.records[b].energy)
                .unwrap_or(std::cmp::Ordering::Equal)
        });
        idx
    };
    out.records = order.iter().map(|&i| out.records[i].clone()).collect();
    out.traces = order.iter().map(|&i| out.traces[i].clone()).collect();
    Ok(out)
}

/// L² distance after sign alignment (and translation alignment on circles),
/// relative to the larger norm.
pub fn aligned_distance(domain: &WeightedDomain, a: &Field, b: &Field) -> f64 {
    let mass = lumped_mass(domain);
    let norm = |f: &Field| -> f64 {
        f.values()
            .iter()
            .zip(&mass)
            .map(|(v, m)| m * v * v)
            .sum::<f64>()
            .sqrt()
    };
    let na = norm(a);
    let nb = norm(b);
    let scale = na.max(nb).max(1e-300);

    let argmax = |f: &Field| -> usize {
        f.values()
            .iter()
            .enumerate()
            .max_by(|(_, x), (_, y)| {
                x.abs().partial_cmp(&y.abs()).unwrap_or(std::cmp::Ordering::Equal)
            })
            .map(|(i, _)| i)
            .unwrap_or(0)
    };
    let n = domain.len();
    let ia = argmax(a);
    let dist_for = |flip: f64| -> f64 {
        let bb = b.scaled(flip);
        let shift = if domain.is_periodic() {
            (argmax(&bb) + n - ia) % n
        } else {
            0
        };
        let mut acc = 0.0;
        for i in 0..n {
            let j = (i + shift) % n;
            let d = a.values()[i] - bb.values()[j];
            acc += mass[i] * d * d;
        }
        acc.sqrt()
    };
    dist_for(1.0).min(dist_for(-1.0)) / scale
}

fn dedup_records(
    domain: &WeightedDomain,
    records: &mut Vec<SolutionRecord>,
    traces: &mut Vec<FlowTrace>,
    rel: f64,
) {
    let mut keep: Vec<usize> = Vec::new();
    for i in 0..records.len() {
        let fi = Field::from_values(records[i].field.clone());
        let mut duplicate = false;
        for &j in &keep {
            let fj = Field::from_values(records[j].field.clone());
            if aligned_distance(domain, &fi, &fj) <= rel {
                duplicate = true;
                break;
            }
        }
        if !duplicate {
            keep.push(i);
        }
    }
    *records = keep.iter().map(|&i| records[i].clone()).collect();
    *traces = keep.iter().map(|&i| traces[i].clone()).collect();
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::discrete::{inner_h1, norm_cp, random_smooth_field};
    use crate::energy::energy;
    use crate::quotient::{integrate, make_preset, PresetId};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn okon(res: usize) -> WeightedDomain {
        make_preset(PresetId::OkonSphere { k: 2, n: 2 }, res).unwrap()
    }

    fn spec_for(domain: &WeightedDomain) -> ProblemSpec {
        ProblemSpec::with_constant_coefficients(domain, 4.0, 2.0, 1.0).unwrap()
    }

    #[test]
    fn step_is_terminal_at_critical_point() {
        let domain = okon(128);
        let spec = spec_for(&domain);
        let star = Field::constant(&domain, (2.0f64).sqrt());
        let config = FlowConfig::default();
        let step = flow_step(&spec, &domain, &star, &config).unwrap();
        assert!(step.terminal);
        assert_eq!(step.field.values(), star.values());
    }

    #[test]
    fn step_decreases_energy_from_scaled_constant() {
        let domain = okon(128);
        let spec = spec_for(&domain);
        let u0 = Field::constant(&domain, 1.2 * (2.0f64).sqrt());
        let config = FlowConfig::default();
        let j0 = energy(&spec, &domain, &u0).unwrap();
        let step = flow_step(&spec, &domain, &u0, &config).unwrap();
        assert!(!step.terminal);
        assert!(step.energy < j0);
    }

    #[test]
    fn step_energy_drop_matches_gradient_norm() {
        let domain = okon(128);
        let spec = spec_for(&domain);
        let ctx = EnergyContext::new(&spec, &domain).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let u = random_smooth_field(&domain, &mut rng, 6).axpy(1.4, &Field::constant(&domain, 1.0));
        let g = ctx.gradient(&u).unwrap();
        let gn = ctx.gradient_norm(&g).unwrap();
        let j0 = ctx.energy(&u).unwrap();
        for &eta in &[1e-3, 1e-4] {
            let j1 = ctx.energy(&u.axpy(-eta, &g)).unwrap();
            let drop = j0 - j1;
            let predicted = eta * gn * gn;
            assert!(
                (drop - predicted).abs() < 0.1 * predicted,
                "eta={eta}: drop {drop} vs {predicted}"
            );
        }
    }

    #[test]
    fn bumps_have_disjoint_supports_and_h1_orthogonality() {
        let domain = okon(128);
        let spec = spec_for(&domain);
        let bumps = seed_bumps(&domain, 3).unwrap();
        for i in 0..3 {
            assert!(norm_cp(&spec, &domain, &bumps[i]).unwrap() > 0.0);
            for j in i + 1..3 {
                let prod: f64 = bumps[i]
                    .values()
                    .iter()
                    .zip(bumps[j].values())
                    .map(|(a, b)| a * b)
                    .sum();
                assert_eq!(prod, 0.0);
                assert_eq!(inner_h1(&domain, &bumps[i], &bumps[j]).unwrap(), 0.0);
            }
        }
    }

    #[test]
    fn too_coarse_domain_rejected_for_bumps() {
        let domain = okon(8);
        assert!(matches!(
            seed_bumps(&domain, 3),
            Err(Error::DomainTooCoarse { .. })
        ));
    }

    #[test]
    fn sign_changing_seed_parts_lie_on_nehari() {
        let domain = okon(256);
        let spec = spec_for(&domain);
        let seed = seed_sign_changing(&spec, &domain, &[1, -1]).unwrap();
        for part in [seed.positive_part(), seed.negative_part()] {
            let quad = crate::discrete::inner_b(&spec, &domain, &part, &part).unwrap();
            let pow = crate::discrete::norm_cp_pow(&spec, &domain, &part).unwrap();
            assert!((quad - pow).abs() < 1e-10 * quad.max(1.0), "{quad} vs {pow}");
        }
        assert_eq!(nodal_count(&domain, &seed), 1);
        // Antisymmetry of the construction.
        let flipped = seed_sign_changing(&spec, &domain, &[-1, 1]).unwrap();
        let diff: f64 = seed
            .values()
            .iter()
            .zip(flipped.values())
            .fold(0.0, |m, (a, b)| m.max((a + b).abs()));
        assert!(diff < 1e-12);
    }

    #[test]
    fn negative_part_norm_examples() {
        let domain = okon(128);
        let spec = spec_for(&domain);
        let pos = Field::from_fn(&domain, |t| 1.0 + t.sin());
        let (nt, np) = negative_part_norm(&spec, &domain, &pos).unwrap();
        assert_eq!(nt, 0.0);
        assert_eq!(np, 0.0);

        let neg = Field::constant(&domain, -1.0);
        let (nt, _) = negative_part_norm(&spec, &domain, &neg).unwrap();
        let vol = integrate(&domain, &Field::constant(&domain, 1.0)).unwrap();
        assert!((nt - (spec.theta * vol).sqrt()).abs() < 1e-9 * nt);
    }

    #[test]
    fn least_energy_on_block_rotation_sphere_is_constant() {
        let domain = okon(256);
        let spec = spec_for(&domain);
        let config = FlowConfig::default();
        let (record, trace) = find_least_energy_traced(&spec, &domain, &config).unwrap();
        let star = (2.0f64).sqrt();
        let dev = record
            .field
            .iter()
            .fold(0.0f64, |m, &v| m.max((v - star).abs()));
        assert!(dev < 1e-8, "deviation from constant: {dev}");
        assert!(record.grad_norm <= config.tol_grad);
        assert!(record.nehari_residual < 1e-10);
        assert_eq!(record.sign_class, SignClass::Positive);
        assert_eq!(record.nodal_count, 0);
        // Energy decreased monotonically and the trajectory stayed in the cone.
        for w in trace.energies.windows(2) {
            assert!(w[1] < w[0] + 1e-12);
        }
        for &nn in &trace.negative_norms {
            assert!(nn <= 1e-8);
        }
        // Energy of the constant: (p-2)/(2p) c u*^p times the quadrature mass.
        let mass = integrate(&domain, &Field::constant(&domain, 1.0)).unwrap();
        let expect = 0.25 * star.powi(4) * mass;
        assert!((record.energy - expect).abs() < 1e-9 * expect);
        assert!((mass - 2.0 * PI * PI).abs() < 1e-4 * mass);
    }

    #[test]
    fn sign_changing_search_finds_distinct_solutions() {
        let domain = okon(512);
        let spec = spec_for(&domain);
        let config = FlowConfig::default();
        let out = find_sign_changing_traced(&spec, &domain, 3, &config).unwrap();
        assert!(out.failures.is_empty(), "{:?}", out.failures);
        let positives = out
            .records
            .iter()
            .filter(|r| r.sign_class == SignClass::Positive)
            .count();
        let changing: Vec<_> = out
            .records
            .iter()
            .filter(|r| r.sign_class == SignClass::SignChanging)
            .collect();
        assert!(positives >= 1);
        assert!(changing.len() >= 2, "records: {}", out.records.len());
        let tau = out.records[0].energy;
        for r in &changing {
            assert!(r.energy > tau);
            assert!(r.grad_norm <= config.tol_grad);
            // Critical points sit on the Nehari manifold.
            assert!(r.nehari_residual < 1e-10);
        }
        let counts: Vec<usize> = changing.iter().map(|r| r.nodal_count).collect();
        assert!(counts.contains(&1), "{counts:?}");
        assert!(counts.contains(&2), "{counts:?}");
    }

    #[test]
    fn flip_symmetry_of_the_flow() {
        let domain = okon(256);
        let spec = spec_for(&domain);
        let config = FlowConfig::default();
        let driver = Driver::new(&spec, &domain, &config).unwrap();
        let seed = seed_sign_changing(&spec, &domain, &[1, -1]).unwrap();
        let parts = super::nodal_components(&domain, &seed).len();
        let (rec_a, _) = driver.run(&seed, Renormalize::NodalParts(parts), false, "a").unwrap();
        let (rec_b, _) = driver
            .run(&seed.scaled(-1.0), Renormalize::NodalParts(parts), false, "b")
            .unwrap();
        let fa = Field::from_values(rec_a.field.clone());
        let fb = Field::from_values(rec_b.field.clone());
        assert!(aligned_distance(&domain, &fa, &fb) < 1e-8);
        let direct: f64 = rec_a
            .field
            .iter()
            .zip(&rec_b.field)
            .fold(0.0, |m, (a, b)| m.max((a + b).abs()));
        assert!(direct < 1e-6 * fa.max_abs(), "{direct}");
    }

    #[test]
    fn negative_part_bounds_respect_the_discrete_embedding_constant() {
        // dist to the nonnegative cone is sandwiched between |u-|_{c,p}/C and
        // |u-|_theta, with C the discrete embedding constant obtained by
        // maximizing the ratio over a probe set.
        let domain = okon(256);
        let spec = spec_for(&domain);
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let mut probes: Vec<Field> = (0..200)
            .map(|_| random_smooth_field(&domain, &mut rng, 10))
            .collect();
        let mut us = Vec::new();
        for _ in 0..30 {
            let u = random_smooth_field(&domain, &mut rng, 8);
            probes.push(u.negative_part());
            us.push(u);
        }
        let mut c_disc = 0.0f64;
        for v in &probes {
            let lp = norm_cp(&spec, &domain, v).unwrap();
            let th = crate::discrete::norm_theta(&spec, &domain, v).unwrap();
            if th > 1e-12 {
                c_disc = c_disc.max(lp / th);
            }
        }
        assert!(c_disc > 0.0);
        for u in &us {
            let (theta_norm, lp_norm) = negative_part_norm(&spec, &domain, u).unwrap();
            assert!(theta_norm >= lp_norm / c_disc - 1e-12, "{theta_norm} vs {lp_norm}");
        }
    }

    #[test]
    fn sign_changing_records_keep_both_parts_away_from_the_cones() {
        // Both signed parts of a converged sign-changing solution carry at
        // least the least-energy mass: |u±|_{c,p}^p >= (2p/(p-2)) tau, and
        // through the embedding constant the theta-distance to either cone
        // is bounded below as well.
        let domain = okon(512);
        let spec = spec_for(&domain);
        let config = FlowConfig::default();
        let out = find_sign_changing_traced(&spec, &domain, 3, &config).unwrap();
        let tau = out.records[0].energy;
        assert!(tau > 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        let mut c_disc = 0.0f64;
        for _ in 0..200 {
            let v = random_smooth_field(&domain, &mut rng, 10);
            let lp = norm_cp(&spec, &domain, &v).unwrap();
            let th = crate::discrete::norm_theta(&spec, &domain, &v).unwrap();
            if th > 1e-12 {
                c_disc = c_disc.max(lp / th);
            }
        }
        let gap = ((2.0 * spec.p / (spec.p - 2.0)) * tau).powf(1.0 / spec.p);
        for r in out
            .records
            .iter()
            .filter(|r| r.sign_class == SignClass::SignChanging)
        {
            let u = r.field(&domain).unwrap();
            for part in [u.positive_part(), u.negative_part()] {
                let lp = norm_cp(&spec, &domain, &part).unwrap();
                assert!(lp >= gap * (1.0 - 1e-6), "{lp} vs {gap}");
                let th = crate::discrete::norm_theta(&spec, &domain, &part).unwrap();
                assert!(th >= gap / c_disc * (1.0 - 1e-6));
            }
        }
    }

    #[test]
    fn least_energy_is_independent_of_the_random_restart() {
        let domain = okon(256);
        let spec = spec_for(&domain);
        let mut energies = Vec::new();
        for seed in 0..5 {
            let config = FlowConfig { restarts: 2, seed, ..FlowConfig::default() };
            let record = find_least_energy(&spec, &domain, &config).unwrap();
            energies.push(record.energy);
        }
        for w in energies.windows(2) {
            assert!((w[0] - w[1]).abs() <= 1e-8 * w[0].abs(), "{energies:?}");
        }
    }

    #[test]
    fn user_supplied_domains_solve_like_presets() {
        // Custom quotient: interval with a hand-made positive weight, total
        // mass supplied by the caller.
        let n = 257;
        let h = 1.0 / (n as f64 - 1.0);
        let nodes: Vec<f64> = (0..n).map(|i| i as f64 * h).collect();
        let weights: Vec<f64> = nodes.iter().map(|&t| 1.0 + t * t).collect();
        let quad: Vec<f64> = (0..n)
            .map(|i| if i == 0 || i + 1 == n { 0.5 * h } else { h })
            .collect();
        let mass: f64 = quad.iter().zip(&weights).map(|(q, w)| q * w).sum();
        let domain = WeightedDomain::from_samples(
            nodes,
            weights,
            quad,
            1.0,
            false,
            [crate::quotient::EndpointKind::Regular; 2],
            [0.0, 0.0],
            3,
            1,
            mass,
            None,
            "custom".into(),
        )
        .unwrap();
        let spec = ProblemSpec::with_constant_coefficients(&domain, 4.0, 2.0, 1.0).unwrap();
        let record = find_least_energy(&spec, &domain, &FlowConfig::default()).unwrap();
        assert!(record.grad_norm <= 1e-10);
        assert_eq!(record.sign_class, SignClass::Positive);
        assert!(record.strong_residual < 1e-6, "{}", record.strong_residual);
    }

    #[test]
    fn record_round_trips_through_json() {
        let domain = okon(64);
        let record = SolutionRecord {
            field: vec![0.5; domain.len()],
            energy: 1.0,
            grad_norm: 1e-12,
            nehari_residual: 1e-13,
            strong_residual: 1e-9,
            nodal_count: 0,
            sign_class: SignClass::Positive,
            seed: "bump".into(),
            iters: 10,
        };
        let text = serde_json::to_string(&record).unwrap();
        let back: SolutionRecord = serde_json::from_str(&text).unwrap();
        assert_eq!(back.field.len(), domain.len());
        assert_eq!(back.sign_class, SignClass::Positive);
        assert!(text.contains("\"sign-changing\"") == false);
    }
}
