use std::fs;
use std::path::Path;

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};

use leafspace::discrete::ProblemSpec;
use leafspace::flow::{find_least_energy, find_sign_changing_traced, SolutionRecord};
use leafspace::quotient::{make_preset, PresetId, WeightedDomain};

use crate::config::RunConfig;

/// Everything a run writes into solutions.json: the configuration echo, the
/// quotient it ran on, and the converged records.
#[derive(Serialize, Deserialize)]
pub struct SolutionsDoc {
    pub config: RunConfig,
    pub domain: serde_json::Value,
    pub records: Vec<SolutionRecord>,
    pub failures: Vec<String>,
}

pub fn load_domain(cfg: &RunConfig) -> anyhow::Result<WeightedDomain> {
    match &cfg.domain_file {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {path}"))?;
            Ok(WeightedDomain::from_json(&text)?)
        }
        None => {
            let id: PresetId = cfg
                .preset
                .parse()
                .with_context(|| format!("preset `{}`", cfg.preset))?;
            Ok(make_preset(id, cfg.resolution)?)
        }
    }
}

pub fn build_spec(cfg: &RunConfig, domain: &WeightedDomain) -> anyhow::Result<ProblemSpec> {
    if cfg.p <= 2.0 {
        bail!("invalid exponent {}: the problem requires p > 2", cfg.p);
    }
    let spec = ProblemSpec::with_constant_coefficients(domain, cfg.p, cfg.b, cfg.c)?;
    if spec.mu <= 0.0 {
        bail!(
            "the operator -Δ + b is not coercive for b = {} (mu = {:.3e})",
            cfg.b,
            spec.mu
        );
    }
    Ok(spec)
}

pub fn cmd_solve(cfg: &RunConfig) -> anyhow::Result<u8> {
    let domain = load_domain(cfg)?;
    let spec = build_spec(cfg, &domain)?;
    if spec.is_critical_exponent(&domain) {
        eprintln!(
            "warning: p = {} reaches the ambient critical exponent 2m/(m-2) for m = {}; \
             convergence of the flow is only empirical there",
            cfg.p,
            domain.ambient_dim()
        );
    }
    let mut flow_cfg = cfg.flow.clone();
    flow_cfg.seed = cfg.seed;

    let mut failures = Vec::new();
    let records: Vec<SolutionRecord> = if cfg.positive_only {
        match find_least_energy(&spec, &domain, &flow_cfg) {
            Ok(r) => vec![r],
            Err(e) => {
                failures.push(format!("positive seed: {e}"));
                Vec::new()
            }
        }
    } else {
        let out = find_sign_changing_traced(&spec, &domain, cfg.k, &flow_cfg)?;
        failures = out.failures;
        out.records
    };

    let out_dir = Path::new(&cfg.out_dir);
    fs::create_dir_all(out_dir).with_context(|| format!("creating {}", cfg.out_dir))?;

    let doc = SolutionsDoc {
        config: cfg.clone(),
        domain: serde_json::from_str(&domain.to_json())?,
        records,
        failures,
    };
    fs::write(
        out_dir.join("solutions.json"),
        serde_json::to_string_pretty(&doc)?,
    )?;

    let mut csv = String::from(
        "index,sign_class,nodal_count,energy,grad_norm,nehari_residual,strong_residual,iters,seed\n",
    );
    for (i, r) in doc.records.iter().enumerate() {
        let class = serde_json::to_string(&r.sign_class)?.replace('"', "");
        csv.push_str(&format!(
            "{i},{class},{},{:.12e},{:.3e},{:.3e},{:.3e},{},{}\n",
            r.nodal_count, r.energy, r.grad_norm, r.nehari_residual, r.strong_residual, r.iters, r.seed
        ));
    }
    fs::write(out_dir.join("summary.csv"), csv)?;

    for (i, r) in doc.records.iter().enumerate() {
        let mut data = String::from("t\tu\tw\n");
        for (j, &t) in domain.nodes().iter().enumerate() {
            data.push_str(&format!("{t:e}\t{:e}\t{:e}\n", r.field[j], domain.weights()[j]));
        }
        fs::write(out_dir.join(format!("solution_{i:03}.dat")), data)?;
    }

    let requested = if cfg.positive_only { 1 } else { cfg.k };
    for (i, r) in doc.records.iter().enumerate() {
        println!(
            "record {i}: {:?}, {} nodes, energy {:.8}, gradient {:.2e}, strong residual {:.2e}",
            r.sign_class, r.nodal_count, r.energy, r.grad_norm, r.strong_residual
        );
    }
    if doc.records.len() >= requested && doc.failures.is_empty() {
        Ok(0)
    } else {
        eprintln!(
            "convergence shortfall: {} of {requested} requested records (failures: {:?})",
            doc.records.len(),
            doc.failures
        );
        Ok(3)
    }
}
