use std::fs;
use std::path::Path;

use anyhow::Context;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use leafspace::clifford::build_clifford_system;
use leafspace::discrete::{
    norm_theta, random_smooth_field, Field, ProblemSpec,
};
use leafspace::energy::{energy, gradient_theta, project_nehari, EnergyContext};
use leafspace::flow::{
    find_least_energy, find_sign_changing_traced, nodal_count, FlowConfig, SolutionRecord,
};
use leafspace::quotient::{preset, sample_unit_sphere, PresetId, WeightedDomain};
use leafspace::verify::{
    critical_exponent, embedding_ratio, sample_profile_at, sample_shooting, shooting_oracle,
    strong_residual, symmetric_criticality_check, AmbientGrid, CheckResult, ShootingProblem,
};

use crate::config::RunConfig;
use crate::solve::SolutionsDoc;

fn push(results: &mut Vec<CheckResult>, r: CheckResult) {
    println!(
        "[{}] {}: {} = {:.3e} (threshold {:.3e})",
        if r.pass { "PASS" } else { "FAIL" },
        r.check,
        r.inputs,
        r.value,
        r.threshold
    );
    results.push(r);
}

pub fn cmd_verify(
    cfg: &RunConfig,
    solutions: Option<&str>,
    selected: &[String],
) -> anyhow::Result<u8> {
    let want = |name: &str| selected.is_empty() || selected.iter().any(|s| s == name);
    let mut results = Vec::new();

    let id: PresetId = cfg.preset.parse()?;
    let pre = preset(id)?;
    let domain = pre.discretize(cfg.resolution.max(512))?;
    let spec = ProblemSpec::with_constant_coefficients(&domain, cfg.p, cfg.b, cfg.c)?;

    if want("projection") {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xa1);
        let mut worst_res = 0.0f64;
        let mut worst_scale = 0.0f64;
        for _ in 0..50 {
            let u = random_smooth_field(&domain, &mut rng, 8);
            if u.max_abs() < 1e-9 {
                continue;
            }
            let np = project_nehari(&spec, &domain, &u)?;
            worst_res = worst_res.max(np.nehari_residual);
            let other = project_nehari(&spec, &domain, &u.scaled(10.0))?;
            let diff = np
                .field
                .values()
                .iter()
                .zip(other.field.values())
                .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()))
                / np.field.max_abs().max(1e-300);
            worst_scale = worst_scale.max(diff);
        }
        push(
            &mut results,
            CheckResult::upper("projection-residual", format!("{id}, 50 fields"), worst_res, 1e-10),
        );
        push(
            &mut results,
            CheckResult::upper("projection-scale", format!("{id}, 50 fields"), worst_scale, 1e-12),
        );
    }

    if want("contraction") {
        let ctx = EnergyContext::new(&spec, &domain)?;
        let bound = (spec.theta - spec.mu) / (spec.theta + spec.mu);
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xa2);
        let mut worst = 0.0f64;
        for _ in 0..50 {
            let u = random_smooth_field(&domain, &mut rng, 8);
            let lu = ctx.apply_l(&u)?;
            let num = norm_theta(&spec, &domain, &lu)?;
            let den = norm_theta(&spec, &domain, &u)?.max(1e-300);
            worst = worst.max(num / (bound * den));
        }
        push(
            &mut results,
            CheckResult::upper(
                "contraction",
                format!("{id}, |Lu| over bound, 50 fields"),
                worst,
                1.0,
            ),
        );
    }

    if want("embedding") {
        let table = embedding_ratio(&pre, cfg.p, 200, &[128, 256, 512], cfg.seed ^ 0xa3)?;
        let drift = (table[2] - table[1]).abs() / table[2].max(1e-300);
        let exponent = critical_exponent(2.0, domain.ambient_dim(), domain.kappa())?;
        let name = match exponent {
            Some(e) if cfg.p > e => "embedding-unbounded-trend",
            _ => "embedding",
        };
        let mut check = CheckResult::upper(
            name,
            format!("{id}, p = {}, refinement drift", cfg.p),
            drift,
            0.05,
        );
        if name == "embedding-unbounded-trend" {
            // Informational: above the invariant exponent boundedness is not
            // claimed, the trend is reported rather than judged.
            check.pass = true;
        }
        push(&mut results, check);
    }

    if want("symmetric-criticality") {
        if domain.is_periodic() {
            let record = find_least_energy(&spec, &domain, &flow_config(cfg, 512))?;
            let u = record.field(&domain)?;
            let mut scores = Vec::new();
            for &n in &[32usize, 64] {
                let grid = AmbientGrid::flat_torus(n, n);
                scores.push(symmetric_criticality_check(&spec, &domain, &u, &grid, 40, cfg.seed ^ 0xa4)?);
            }
            let drop = scores[0] / scores[1].max(1e-300);
            let mut check = CheckResult::upper(
                "symmetric-criticality",
                format!("{id}, residual drop under grid halving"),
                drop,
                3.5,
            );
            check.pass = drop >= 3.5;
            push(&mut results, check);
        } else {
            println!("[SKIP] symmetric-criticality: ambient model covers periodic quotients");
        }
    }

    if want("oracle-agreement") {
        let res = cfg.resolution.max(2048);
        let fine = pre.discretize(res)?;
        let fine_spec = ProblemSpec::with_constant_coefficients(&fine, cfg.p, cfg.b, cfg.c)?;
        let out = find_sign_changing_traced(&fine_spec, &fine, 3, &flow_config(cfg, res))?;
        let b0 = cfg.b;
        let c0 = cfg.c;
        let b = move |_: f64| b0;
        let c = move |_: f64| c0;
        let prob = ShootingProblem { p: cfg.p, b: &b, c: &c };
        let mut worst = 0.0f64;
        for r in &out.records {
            let dist = oracle_distance(&pre, &prob, &fine, r)?;
            worst = worst.max(dist);
        }
        push(
            &mut results,
            CheckResult::upper(
                "oracle-agreement",
                format!("{id}, {} records vs shooting profiles", out.records.len()),
                worst,
                1e-4,
            ),
        );
    }

    if let Some(path) = solutions {
        if want("records") {
            verify_records(path, &mut results)?;
        }
    }

    let out_dir = Path::new(&cfg.out_dir);
    fs::create_dir_all(out_dir)?;
    fs::write(
        out_dir.join("report.json"),
        serde_json::to_string_pretty(&results)?,
    )?;

    let failed: Vec<&str> = results
        .iter()
        .filter(|r| !r.pass)
        .map(|r| r.check.as_str())
        .collect();
    if failed.is_empty() {
        println!("all checks passed");
        Ok(0)
    } else {
        eprintln!("failed checks: {}", failed.join(", "));
        Ok(4)
    }
}

fn flow_config(cfg: &RunConfig, resolution: usize) -> FlowConfig {
    let mut flow = cfg.flow.clone();
    flow.seed = cfg.seed;
    // First-order optimality carries an assembly rounding floor that grows
    // with the stiffness scale w/h; loosen the target on fine meshes.
    if resolution > 1024 {
        flow.tol_grad = flow.tol_grad.max(1e-8);
    }
    flow
}

fn oracle_distance(
    pre: &leafspace::quotient::FoliationPreset,
    prob: &ShootingProblem,
    domain: &WeightedDomain,
    record: &SolutionRecord,
) -> anyhow::Result<f64> {
    let sols = shooting_oracle(pre, prob, record.nodal_count, (0.2, 20.0))?;
    let mut best = f64::INFINITY;
    for sol in &sols {
        let sampled: Vec<f64> = if domain.is_periodic() {
            let peak_idx = record
                .field
                .iter()
                .enumerate()
                .max_by(|(_, a), (_, b)| a.abs().partial_cmp(&b.abs()).unwrap())
                .map(|(i, _)| i)
                .unwrap_or(0);
            let peak = domain.nodes()[peak_idx];
            let times: Vec<f64> = domain
                .nodes()
                .iter()
                .map(|&t| (t - peak).rem_euclid(domain.length()))
                .collect();
            sample_profile_at(pre, prob, sol.s0, &times)?
        } else {
            sample_shooting(pre, prob, sol, domain)?.values().to_vec()
        };
        for sign in [1.0, -1.0] {
            let d = record
                .field
                .iter()
                .zip(&sampled)
                .fold(0.0f64, |m, (a, b)| m.max((a - sign * b).abs()));
            best = best.min(d);
        }
    }
    Ok(best)
}

fn verify_records(path: &str, results: &mut Vec<CheckResult>) -> anyhow::Result<()> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {path}"))?;
    let doc: SolutionsDoc = serde_json::from_str(&text).with_context(|| format!("parsing {path}"))?;
    let domain = WeightedDomain::from_json(&serde_json::to_string(&doc.domain)?)?;
    let cfg = &doc.config;
    let spec = ProblemSpec::with_constant_coefficients(&domain, cfg.p, cfg.b, cfg.c)?;
    for (i, r) in doc.records.iter().enumerate() {
        let u = Field::new(&domain, r.field.clone())?;
        let quad = leafspace::discrete::inner_b(&spec, &domain, &u, &u)?;
        let pow = leafspace::discrete::norm_cp_pow(&spec, &domain, &u)?;
        let nehari = (quad - pow).abs() / quad.abs().max(pow).max(1e-300);
        push(
            results,
            CheckResult::upper(
                "record-nehari-residual",
                format!("record {i}"),
                nehari,
                (r.nehari_residual * 10.0).max(1e-8),
            ),
        );
        let g = gradient_theta(&spec, &domain, &u)?;
        let gn = norm_theta(&spec, &domain, &g)?;
        push(
            results,
            CheckResult::upper(
                "record-gradient",
                format!("record {i}"),
                gn,
                (r.grad_norm * 10.0).max(1e-8),
            ),
        );
        push(
            results,
            CheckResult::upper(
                "record-strong-residual",
                format!("record {i}"),
                strong_residual(&spec, &domain, &u)?,
                (r.strong_residual * 10.0).max(1e-8),
            ),
        );
        let mut nodal = CheckResult::upper(
            "record-nodal-count",
            format!("record {i}"),
            nodal_count(&domain, &u) as f64,
            r.nodal_count as f64,
        );
        nodal.pass = nodal_count(&domain, &u) == r.nodal_count;
        push(results, nodal);
        let _ = energy(&spec, &domain, &u)?;
    }
    Ok(())
}

pub fn cmd_clifford(
    out: &str,
    q: usize,
    copies: usize,
    bins: usize,
    samples: usize,
    seed: u64,
) -> anyhow::Result<u8> {
    let system = build_clifford_system(q, copies)?;
    let out_dir = Path::new(out);
    fs::create_dir_all(out_dir)?;
    fs::write(out_dir.join("system.json"), system.to_json())?;

    let mut results = Vec::new();
    let mut relations = CheckResult::upper(
        "clifford-relations",
        format!("q={q} copies={copies} n={}", system.n()),
        f64::from(u8::from(!system.relations_exact())),
        0.0,
    );
    relations.pass = system.relations_exact() && system.basis_orthonormal_exact();
    push(&mut results, relations);

    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xc11f);
    let mut x = vec![0.0; system.n()];
    let mut worst = 0.0f64;
    for _ in 0..10_000 {
        sample_unit_sphere(&mut rng, &mut x);
        let pi: f64 = system
            .pi_rho(&x)?
            .iter()
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt();
        worst = worst.max(pi);
    }
    push(
        &mut results,
        CheckResult::upper(
            "clifford-disk-bound",
            "max |pi(x)| over 1e4 unit samples".into(),
            worst,
            1.0 + 1e-12,
        ),
    );

    // The quotient build rejects degenerate systems with a typed error,
    // surfaced here as a config failure.
    let domain = system.fkm_quotient_domain(bins, samples, seed)?;
    fs::write(out_dir.join("quotient_domain.json"), domain.to_json())?;
    fs::write(
        out_dir.join("clifford_report.json"),
        serde_json::to_string_pretty(&results)?,
    )?;
    println!(
        "clifford system q={q} copies={copies}: n = {}, quotient domain with {} bins written",
        system.n(),
        domain.len()
    );
    if results.iter().all(|r| r.pass) {
        Ok(0)
    } else {
        Ok(4)
    }
}
