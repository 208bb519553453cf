//! Shooting-method oracle for the quotient ODE
//!
//! ```text
//!     u'' + (w'/w) u' = b u - c |u|^(p-2) u
//! ```
//!
//! with natural conditions at singular ends (u'(0) = 0, regularity at the
//! far end) or periodicity on circle quotients. Completely independent of
//! the variational solver: adaptive Runge-Kutta integration, a series start
//! at weight-degenerate endpoints, node counting by sign-change events, and
//! bisection on the initial amplitude.

use crate::discrete::Field;
use crate::quotient::{FoliationPreset, WeightedDomain};
use crate::{Error, Result};

/// Coefficients of the quotient ODE as functions of arclength.
pub struct ShootingProblem<'a> {
    pub p: f64,
    pub b: &'a (dyn Fn(f64) -> f64 + Sync),
    pub c: &'a (dyn Fn(f64) -> f64 + Sync),
}

impl<'a> ShootingProblem<'a> {
    fn force(&self, t: f64, u: f64) -> f64 {
        (self.b)(t) * u - (self.c)(t) * u.signum() * u.abs().powf(self.p - 1.0)
    }
}

/// Dense integrator output with cubic Hermite evaluation.
#[derive(Debug, Clone)]
pub struct OdeTrajectory {
    ts: Vec<f64>,
    ys: Vec<[f64; 2]>,
    fs: Vec<[f64; 2]>,
    /// Series data (delta, s, alpha) covering [0, delta] at a singular start.
    series: Option<(f64, f64, f64)>,
}

impl OdeTrajectory {
    fn constant(value: f64, t_end: f64) -> Self {
        OdeTrajectory {
            ts: vec![0.0, t_end],
            ys: vec![[value, 0.0]; 2],
            fs: vec![[0.0, 0.0]; 2],
            series: None,
        }
    }

    fn hermite(&self, k: usize, t: f64) -> [f64; 2] {
        let h = self.ts[k + 1] - self.ts[k];
        let x = ((t - self.ts[k]) / h).clamp(0.0, 1.0);
        let x2 = x * x;
        let x3 = x2 * x;
        let h00 = 2.0 * x3 - 3.0 * x2 + 1.0;
        let h10 = x3 - 2.0 * x2 + x;
        let h01 = -2.0 * x3 + 3.0 * x2;
        let h11 = x3 - x2;
        let mut out = [0.0; 2];
        for c in 0..2 {
            out[c] = h00 * self.ys[k][c]
                + h10 * h * self.fs[k][c]
                + h01 * self.ys[k + 1][c]
                + h11 * h * self.fs[k + 1][c];
        }
        out
    }

    fn locate(&self, t: f64) -> usize {
        match self
            .ts
            .binary_search_by(|x| x.partial_cmp(&t).unwrap_or(std::cmp::Ordering::Less))
        {
            Ok(k) => k.min(self.ts.len() - 2),
            Err(k) => k.saturating_sub(1).min(self.ts.len() - 2),
        }
    }

    /// u(t) by quintic Hermite from (u, u', u'') at the step ends, clamped
    /// to the covered range; the series start covers a singular origin.
    pub fn eval(&self, t: f64) -> f64 {
        if let Some((delta, s, alpha)) = self.series {
            if t <= delta {
                return s + alpha * t * t;
            }
        }
        let t = t.clamp(self.ts[0], *self.ts.last().unwrap());
        let k = self.locate(t);
        let h = self.ts[k + 1] - self.ts[k];
        let x = ((t - self.ts[k]) / h).clamp(0.0, 1.0);
        let (x2, x3) = (x * x, x * x * x);
        let (x4, x5) = (x2 * x2, x2 * x3);
        let h0 = 1.0 - 10.0 * x3 + 15.0 * x4 - 6.0 * x5;
        let h1 = x - 6.0 * x3 + 8.0 * x4 - 3.0 * x5;
        let h2 = 0.5 * (x2 - 3.0 * x3 + 3.0 * x4 - x5);
        let h3 = 10.0 * x3 - 15.0 * x4 + 6.0 * x5;
        let h4 = -4.0 * x3 + 7.0 * x4 - 3.0 * x5;
        let h5 = 0.5 * (x3 - 2.0 * x4 + x5);
        let (u0, v0, a0) = (self.ys[k][0], self.ys[k][1], self.fs[k][1]);
        let (u1, v1, a1) = (self.ys[k + 1][0], self.ys[k + 1][1], self.fs[k + 1][1]);
        h0 * u0 + h1 * h * v0 + h2 * h * h * a0 + h3 * u1 + h4 * h * v1 + h5 * h * h * a1
    }

    pub fn eval_deriv(&self, t: f64) -> f64 {
        if let Some((delta, _, alpha)) = self.series {
            if t <= delta {
                return 2.0 * alpha * t;
            }
        }
        let t = t.clamp(self.ts[0], *self.ts.last().unwrap());
        self.hermite(self.locate(t), t)[1]
    }

    /// Integrator knots (t, u, u') without interpolation.
    pub fn knots(&self) -> impl Iterator<Item = (f64, f64, f64)> + '_ {
        self.ts
            .iter()
            .zip(&self.ys)
            .map(|(&t, y)| (t, y[0], y[1]))
    }

    fn end_state(&self) -> (f64, [f64; 2]) {
        (*self.ts.last().unwrap(), *self.ys.last().unwrap())
    }

    /// Number of sign changes of u along the trajectory.
    pub fn sign_changes(&self) -> usize {
        let floor = 1e-11 * self.ys.iter().fold(0.0f64, |m, y| m.max(y[0].abs()));
        let mut count = 0;
        let mut last = 0.0f64;
        for y in &self.ys {
            let u = y[0];
            if u.abs() <= floor {
                continue;
            }
            if last != 0.0 && u.signum() != last {
                count += 1;
            }
            last = u.signum();
        }
        count
    }

    /// First zero of u' strictly after `t_min`, refined by bisection.
    fn first_extremum_after(&self, t_min: f64) -> Option<f64> {
        for k in 0..self.ts.len() - 1 {
            if self.ts[k + 1] <= t_min {
                continue;
            }
            let v0 = self.ys[k][1];
            let v1 = self.ys[k + 1][1];
            if v0 == 0.0 && self.ts[k] > t_min {
                return Some(self.ts[k]);
            }
            if v0 * v1 < 0.0 {
                let mut lo = self.ts[k].max(t_min);
                let mut hi = self.ts[k + 1];
                for _ in 0..80 {
                    let mid = 0.5 * (lo + hi);
                    let vm = self.hermite(k, mid)[1];
                    if vm * v0 <= 0.0 {
                        hi = mid;
                    } else {
                        lo = mid;
                    }
                }
                return Some(0.5 * (lo + hi));
            }
        }
        None
    }
}

/// A shooting solution: initial amplitude, verified node count, and the
/// dense trajectory for sampling.
#[derive(Debug, Clone)]
pub struct ShootingSolution {
    pub s0: f64,
    pub nodes: usize,
    pub trajectory: OdeTrajectory,
}

/// Samples a shooting solution at the domain's nodes by re-integrating with
/// mandatory stops at every node, so the values carry the integrator's own
/// accuracy and no interpolation error.
pub fn sample_shooting(
    preset: &FoliationPreset,
    prob: &ShootingProblem,
    sol: &ShootingSolution,
    domain: &WeightedDomain,
) -> Result<Field> {
    let values = sample_profile_at(preset, prob, sol.s0, domain.nodes())?;
    Field::new(domain, values)
}

/// Profile values at arbitrary in-range times (any order), by one
/// integration pass with mandatory stops.
pub fn sample_profile_at(
    preset: &FoliationPreset,
    prob: &ShootingProblem,
    s0: f64,
    times: &[f64],
) -> Result<Vec<f64>> {
    // Shooting orbits start at an extremum, so periodic profiles are even
    // about t = 0; sampling the mirrored half-orbit keeps the wrap smooth
    // instead of splicing the accumulated integration error there.
    let times_owned: Vec<f64>;
    let times = if preset.periodic {
        times_owned = times
            .iter()
            .map(|&t| {
                let t = t.rem_euclid(preset.length);
                t.min(preset.length - t)
            })
            .collect();
        &times_owned[..]
    } else {
        times
    };
    let mut order: Vec<usize> = (0..times.len()).collect();
    order.sort_by(|&a, &b| times[a].partial_cmp(&times[b]).unwrap_or(std::cmp::Ordering::Equal));
    let sorted: Vec<f64> = order.iter().map(|&i| times[i]).collect();
    if let Some(&first) = sorted.first() {
        if first < -1e-12 || *sorted.last().unwrap() > preset.length * (1.0 + 1e-12) {
            return Err(Error::InvalidParameter(
                "sample times outside the quotient".into(),
            ));
        }
    }
    // Quarter-gap substeps keep the accumulated truncation of the sampling
    // pass below the difference-stencil resolution of the samples. The cap
    // uses the average spacing: mirrored sample sets contain near-coincident
    // pairs whose tiny gaps are handled by the stop landings themselves.
    let mut gaps = 0usize;
    let mut span = 0.0f64;
    for w in sorted.windows(2) {
        let d = w[1] - w[0];
        if d > 1e-12 * preset.length {
            gaps += 1;
            span += d;
        }
    }
    let min_gap = if gaps > 0 { span / gaps as f64 } else { preset.length };
    let mut picked = Vec::with_capacity(sorted.len());
    // Integrate only as far as the last requested time (the mirror map halves
    // the horizon on circles).
    let horizon = sorted
        .last()
        .copied()
        .unwrap_or(0.0)
        .max(1e-6 * preset.length)
        .min(preset.length * (1.0 - if preset.periodic { 0.0 } else { 1e-7 }));
    integrate(
        preset,
        prob,
        s0,
        horizon,
        Some((&sorted, &mut picked)),
        Some((min_gap / 4.0).max(1e-9 * preset.length)),
    )?;
    let mut out = vec![0.0; times.len()];
    for (slot, &orig) in order.iter().enumerate() {
        out[orig] = picked[slot];
    }
    Ok(out)
}

const ATOL: f64 = 1e-13;
const RTOL: f64 = 1e-11;
const MAX_STEPS: usize = 2_000_000;

/// Dormand-Prince 5(4) with a PI-free elementary controller.
fn integrate(
    preset: &FoliationPreset,
    prob: &ShootingProblem,
    s: f64,
    t_stop: f64,
    mut stops: Option<(&[f64], &mut Vec<f64>)>,
    max_h: Option<f64>,
) -> Result<OdeTrajectory> {
    let singular_start = !preset.periodic;
    let (t0, y0, series) = if singular_start {
        let delta = 1e-7 * preset.length;
        let a0 = preset.endpoint_exponents[0];
        let alpha = prob.force(0.0, s) / (2.0 * (1.0 + a0));
        (
            delta,
            [s + alpha * delta * delta, 2.0 * alpha * delta],
            Some((delta, s, alpha)),
        )
    } else {
        (0.0, [s, 0.0], None)
    };
    // Sample times inside the series zone are answered by the series.
    let mut stop_idx = 0;
    if let Some((ts, out)) = stops.as_mut() {
        while stop_idx < ts.len() && ts[stop_idx] <= t0 {
            let tt = ts[stop_idx].max(0.0);
            let v = match series {
                Some((_, s0, alpha)) => s0 + alpha * tt * tt,
                None => y0[0],
            };
            out.push(v);
            stop_idx += 1;
        }
    }

    let rhs = |t: f64, y: [f64; 2]| -> [f64; 2] {
        let a = if preset.periodic { 0.0 } else { preset.dlog_weight_at(t) };
        [y[1], prob.force(t, y[0]) - a * y[1]]
    };

    let mut ts = vec![t0];
    let mut ys = vec![y0];
    let mut fs = vec![rhs(t0, y0)];

    let mut t = t0;
    let mut y = y0;
    let mut f = fs[0];
    let mut h = (t_stop - t0) / 100.0;
    let mut steps = 0;
    // Kahan compensation of the state and time accumulators: without it the
    // rounding walk over thousands of forced sampling steps shows up as a
    // closure defect when periodic profiles are wrapped, and the coherent
    // time-label slip of forced landings masquerades as a phase error.
    let mut comp = [0.0f64; 2];
    let mut tcomp = 0.0f64;
    while t < t_stop {
        if steps > MAX_STEPS {
            return Err(Error::NotConverged("ode integration exceeded step budget".into()));
        }
        steps += 1;
        let mut limit = t_stop - t;
        if let Some((ts, _)) = stops.as_ref() {
            if stop_idx < ts.len() {
                limit = limit.min((ts[stop_idx] - t).max(0.0));
            }
        }
        if limit <= 1e-15 * preset.length {
            // Sitting on a stop: record and advance the stop cursor.
            if let Some((ts, out)) = stops.as_mut() {
                while stop_idx < ts.len() && ts[stop_idx] - t <= 1e-12 * preset.length {
                    out.push(y[0]);
                    stop_idx += 1;
                }
            }
            if t_stop - t <= 1e-12 * preset.length {
                break;
            }
            continue;
        }
        if let Some(cap) = max_h {
            h = h.min(cap);
        }
        h = h.min(limit).max(1e-15 * preset.length);

        let k1 = f;
        let stage = |coeffs: &[(f64, [f64; 2])], dt: f64| -> [f64; 2] {
            let mut yy = y;
            for &(a, k) in coeffs {
                yy[0] += h * a * k[0];
                yy[1] += h * a * k[1];
            }
            rhs(t + dt * h, yy)
        };
        let k2 = stage(&[(1.0 / 5.0, k1)], 1.0 / 5.0);
        let k3 = stage(&[(3.0 / 40.0, k1), (9.0 / 40.0, k2)], 3.0 / 10.0);
        let k4 = stage(
            &[(44.0 / 45.0, k1), (-56.0 / 15.0, k2), (32.0 / 9.0, k3)],
            4.0 / 5.0,
        );
        let k5 = stage(
            &[
                (19372.0 / 6561.0, k1),
                (-25360.0 / 2187.0, k2),
                (64448.0 / 6561.0, k3),
                (-212.0 / 729.0, k4),
            ],
            8.0 / 9.0,
        );
        let k6 = stage(
            &[
                (9017.0 / 3168.0, k1),
                (-355.0 / 33.0, k2),
                (46732.0 / 5247.0, k3),
                (49.0 / 176.0, k4),
                (-5103.0 / 18656.0, k5),
            ],
            1.0,
        );
        let mut incr = [0.0f64; 2];
        for &(bcoef, k) in &[
            (35.0 / 384.0, k1),
            (500.0 / 1113.0, k3),
            (125.0 / 192.0, k4),
            (-2187.0 / 6784.0, k5),
            (11.0 / 84.0, k6),
        ] {
            incr[0] += h * bcoef * k[0];
            incr[1] += h * bcoef * k[1];
        }
        let mut ynew = y;
        let mut comp_new = comp;
        for c in 0..2 {
            let d = incr[c] - comp_new[c];
            let s = ynew[c] + d;
            comp_new[c] = (s - ynew[c]) - d;
            ynew[c] = s;
        }
        let k7 = rhs(t + h, ynew);
        // Difference between the 5th and embedded 4th order solutions.
        let mut err = 0.0f64;
        for c in 0..2 {
            let e = h
                * (71.0 / 57600.0 * k1[c] - 71.0 / 16695.0 * k3[c] + 71.0 / 1920.0 * k4[c]
                    - 17253.0 / 339200.0 * k5[c]
                    + 22.0 / 525.0 * k6[c]
                    - 1.0 / 40.0 * k7[c]);
            let scale = ATOL + RTOL * y[c].abs().max(ynew[c].abs());
            err = err.max((e / scale).abs());
        }
        if err <= 1.0 {
            let d = h - tcomp;
            let tn = t + d;
            tcomp = (tn - t) - d;
            t = tn;
            y = ynew;
            comp = comp_new;
            f = k7;
            ts.push(t);
            ys.push(y);
            fs.push(f);
            if let Some((tss, out)) = stops.as_mut() {
                while stop_idx < tss.len() && tss[stop_idx] - t <= 1e-12 * preset.length {
                    out.push(y[0]);
                    stop_idx += 1;
                }
            }
            if !y[0].is_finite() || y[0].abs() > 1e12 {
                return Err(Error::NotConverged("ode solution blew up".into()));
            }
        }
        let factor = if err > 0.0 {
            (0.9 * err.powf(-0.2)).clamp(0.2, 5.0)
        } else {
            5.0
        };
        h *= factor;
    }
    if let Some((tss, out)) = stops.as_mut() {
        while stop_idx < tss.len() {
            out.push(y[0]);
            stop_idx += 1;
        }
    }
    Ok(OdeTrajectory { ts, ys, fs, series })
}

/// Shooting on an interval quotient with singular ends: miss function
/// w(T-δ) u'(T-δ), which vanishes on the regular branch.
fn interval_miss(
    preset: &FoliationPreset,
    prob: &ShootingProblem,
    s: f64,
) -> Result<(f64, usize, OdeTrajectory)> {
    let t_stop = preset.length * (1.0 - 1e-7);
    let traj = integrate(preset, prob, s, t_stop, None, None)?;
    let (te, ye) = traj.end_state();
    let miss = preset.weight_at(te) * ye[1];
    let nodes = traj.sign_changes();
    Ok((miss, nodes, traj))
}

/// Full orbit period of the autonomous circle ODE started at an extremum,
/// twice the time to the next extremum. The extremum time is first located
/// on the dense output and then polished by Newton steps on exactly
/// integrated end states, so the period carries integrator accuracy rather
/// than interpolation accuracy.
fn circle_period(
    preset: &FoliationPreset,
    prob: &ShootingProblem,
    s: f64,
    horizon: f64,
) -> Result<Option<f64>> {
    let traj = integrate(preset, prob, s, horizon, None, None)?;
    let mut t1 = match traj.first_extremum_after(1e-9 * preset.length) {
        Some(t) => t,
        None => return Ok(None),
    };
    for _ in 0..3 {
        // Refinement passes run at the same substep fidelity as profile
        // sampling; otherwise the measured period belongs to a slightly
        // different numerical orbit than the sampled one.
        let end = integrate(preset, prob, s, t1, None, Some(preset.length / 16384.0))?;
        let (te, ye) = end.end_state();
        let accel = prob.force(te, ye[0]);
        if accel.abs() < 1e-12 {
            break;
        }
        let step = ye[1] / accel;
        t1 = te - step;
        if step.abs() < 1e-15 * preset.length {
            break;
        }
    }
    Ok(Some(2.0 * t1))
}

/// Finds quotient solutions with exactly `target_nodes` sign changes by
/// bisection on the initial amplitude over `s_range`.
pub fn shooting_oracle(
    preset: &FoliationPreset,
    prob: &ShootingProblem,
    target_nodes: usize,
    s_range: (f64, f64),
) -> Result<Vec<ShootingSolution>> {
    if preset.periodic {
        shoot_periodic(preset, prob, target_nodes, s_range)
    } else {
        shoot_interval(preset, prob, target_nodes, s_range)
    }
}

fn shoot_interval(
    preset: &FoliationPreset,
    prob: &ShootingProblem,
    target_nodes: usize,
    (lo, hi): (f64, f64),
) -> Result<Vec<ShootingSolution>> {
    let scan = 96;
    let mut prev: Option<(f64, f64, usize)> = None;
    let mut roots = Vec::new();
    for i in 0..=scan {
        let s = lo + (hi - lo) * i as f64 / scan as f64;
        if s == 0.0 {
            continue;
        }
        let (miss, nodes, _) = interval_miss(preset, prob, s)?;
        if let Some((ps, pmiss, pnodes)) = prev {
            if pnodes == target_nodes && nodes == target_nodes && pmiss * miss < 0.0 {
                let mut a = ps;
                let mut b = s;
                let mut fa = pmiss;
                for _ in 0..90 {
                    let mid = 0.5 * (a + b);
                    let (fm, _, _) = interval_miss(preset, prob, mid)?;
                    if fa * fm <= 0.0 {
                        b = mid;
                    } else {
                        a = mid;
                        fa = fm;
                    }
                    if (b - a).abs() < 1e-14 * s.abs().max(1.0) {
                        break;
                    }
                }
                let root = 0.5 * (a + b);
                let (_, nodes, traj) = interval_miss(preset, prob, root)?;
                if nodes == target_nodes {
                    roots.push(ShootingSolution { s0: root, nodes, trajectory: traj });
                }
            }
        }
        prev = Some((s, miss, nodes));
    }
    if roots.is_empty() {
        return Err(Error::NoBracket { lo, hi });
    }
    Ok(roots)
}

fn shoot_periodic(
    preset: &FoliationPreset,
    prob: &ShootingProblem,
    target_nodes: usize,
    (lo, hi): (f64, f64),
) -> Result<Vec<ShootingSolution>> {
    if target_nodes % 2 != 0 {
        return Err(Error::InvalidParameter(
            "a periodic quotient admits only even sign-change counts".into(),
        ));
    }
    let circumference = preset.length;
    let mut solutions = Vec::new();

    if target_nodes == 0 {
        // The constant branch, when the coefficients admit it in range.
        let b0 = (prob.b)(0.0);
        let c0 = (prob.c)(0.0);
        if b0 > 0.0 && c0 > 0.0 {
            let star = (b0 / c0).powf(1.0 / (prob.p - 2.0));
            if star >= lo && star <= hi {
                solutions.push(ShootingSolution {
                    s0: star,
                    nodes: 0,
                    trajectory: OdeTrajectory::constant(star, circumference),
                });
            }
        }
    }

    // Period matching: j sign changes need j/2 full orbits per circumference,
    // one orbit for the positive single-bump profile.
    let target_period = if target_nodes == 0 {
        circumference
    } else {
        2.0 * circumference / target_nodes as f64
    };
    let horizon = 2.5 * circumference;
    let scan = 120;
    let mut prev: Option<(f64, f64)> = None;
    for i in 0..=scan {
        let s = lo + (hi - lo) * i as f64 / scan as f64;
        if s <= 0.0 {
            continue;
        }
        let period = match circle_period(preset, prob, s, horizon) {
            Ok(Some(p)) => p,
            _ => {
                prev = None;
                continue;
            }
        };
        let g = period - target_period;
        if g.abs() < 1e-13 * circumference {
            prev = None;
            continue;
        }
        if let Some((ps, pg)) = prev {
            if pg * g < 0.0 {
                let mut a = ps;
                let mut b = s;
                let mut ga = pg;
                for _ in 0..90 {
                    let mid = 0.5 * (a + b);
                    match circle_period(preset, prob, mid, horizon)? {
                        Some(p) => {
                            let gm = p - target_period;
                            if ga * gm <= 0.0 {
                                b = mid;
                            } else {
                                a = mid;
                                ga = gm;
                            }
                        }
                        None => break,
                    }
                    if (b - a).abs() < 2e-15 * s.abs().max(1.0) {
                        break;
                    }
                }
                let root = 0.5 * (a + b);
                let traj = integrate(preset, prob, root, circumference, None, None)?;
                let nodes = traj.sign_changes();
                if nodes == target_nodes {
                    solutions.push(ShootingSolution { s0: root, nodes, trajectory: traj });
                }
            }
        }
        prev = Some((s, g));
    }

    if solutions.is_empty() {
        return Err(Error::NoBracket { lo, hi });
    }
    Ok(solutions)
}
