//! Fixed parameter grids of the figure families.

use rayon::prelude::*;
use serde_json::{json, Value};
use swapkd::optimize::{optimize_joint, SweepGrid};
use swapkd::search::{logspace, stepped};

use crate::commands::{comparison_settings, crossover_run, decoy_curve, es_curve, sweep_table, RunOutput};
use crate::config::RunConfig;
use crate::table::{optimum_row, Table, OPTIMUM_HEADER};
use crate::CliError;

pub const FIGURES: [&str; 6] = ["fig3", "fig4", "fig5", "fig6", "fig7", "fig8"];

const DISTANCES: [f64; 5] = [0.0, 5.0, 10.0, 25.0, 50.0];

pub fn variants(id: &str) -> Result<&'static [&'static str], CliError> {
    Ok(match id {
        "fig3" => &["a", "b", "c", "d"],
        "fig4" | "fig5" | "fig8" => &["a", "b"],
        "fig6" => &[""],
        "fig7" => &["a", "b", "c"],
        _ => {
            return Err(CliError::invalid(format!(
                "unknown figure {id:?}; known: {}",
                FIGURES.join(", ")
            )))
        }
    })
}

fn grid(lo: f64, hi: f64, step: f64) -> Vec<f64> {
    stepped(lo, hi, step).expect("static grid")
}

/// Only the truncation policy and κ may be changed for figure runs.
fn check_overrides(cfg: &RunConfig) -> Result<(), CliError> {
    let fixed = RunConfig {
        n_max: cfg.n_max,
        convergence_tol: cfg.convergence_tol,
        kappa: cfg.kappa,
        ..Default::default()
    };
    if *cfg != fixed {
        return Err(CliError::invalid(
            "figure grids are fixed; only kappa, n_max and convergence_tol may be set",
        ));
    }
    Ok(())
}

/// Efficiency of the constraint-mode panels.
fn constrained_eta0(id: &str, variant: &str) -> f64 {
    match (id, variant) {
        ("fig3", "a" | "b") => 0.1,
        ("fig3", _) => 0.3,
        (_, "a") => 0.1,
        _ => 0.3,
    }
}

fn merge(into: &mut RunOutput, mut part: RunOutput, key: &str) {
    into.files.append(&mut part.files);
    into.diagnostics.append(&mut part.diagnostics);
    if let Value::Object(m) = &mut into.summary {
        m.insert(key.into(), part.summary);
    }
    if into.failure.is_none() {
        into.failure = part.failure;
    }
}

pub fn emit(id: &str, variant: Option<&str>, cfg: &RunConfig) -> Result<RunOutput, CliError> {
    check_overrides(cfg)?;
    let all = variants(id)?;
    let chosen: Vec<&str> = match variant {
        None => all.to_vec(),
        Some(v) if all.contains(&v) => vec![v],
        Some(v) => return Err(CliError::invalid(format!("{id} has no variant {v:?}"))),
    };
    let mut out = RunOutput {
        summary: json!({}),
        ..Default::default()
    };
    for v in chosen {
        let key = format!("{id}{v}");
        let part = panel(id, v, &key, cfg)?;
        merge(&mut out, part, &key);
    }
    Ok(out)
}

fn panel(id: &str, variant: &str, key: &str, cfg: &RunConfig) -> Result<RunOutput, CliError> {
    let eta0 = constrained_eta0(id, variant);
    let constrained = RunConfig {
        eta0: Some(vec![eta0]),
        ..cfg.clone()
    };
    match id {
        "fig3" | "fig5" => {
            let chis = if id == "fig3" && (variant == "a" || variant == "c") {
                logspace(1e-4, 1e-2, 41)
            } else {
                grid(0.005, 0.25, 0.005)
            };
            let mut out = RunOutput {
                summary: json!({}),
                ..Default::default()
            };
            for a in DISTANCES {
                let g = SweepGrid {
                    alpha_d_db: vec![a],
                    eta0: vec![eta0],
                    chi: chis.clone(),
                };
                let name = format!("{key}_alpha{a}");
                merge(&mut out, sweep_table(&format!("{name}.csv"), &constrained, &g)?, &name);
            }
            Ok(out)
        }
        "fig4" => {
            let mut out = RunOutput {
                summary: json!({}),
                ..Default::default()
            };
            for chi in [1e-4, 1e-3, 1e-2, 0.1, 0.2] {
                let g = SweepGrid {
                    alpha_d_db: grid(0.0, 60.0, 1.0),
                    eta0: vec![eta0],
                    chi: vec![chi],
                };
                let name = format!("{key}_chi{chi}");
                merge(&mut out, sweep_table(&format!("{name}.csv"), &constrained, &g)?, &name);
            }
            Ok(out)
        }
        "fig6" => {
            let trunc = cfg.trunc()?;
            let kappa = cfg.kappa();
            let constraint = swapkd::detectors::DetectorConstraint::default();
            let points: Vec<_> = grid(0.0, 50.0, 2.5)
                .into_par_iter()
                .map(|a| {
                    optimize_joint(a, constraint, kappa, trunc)
                        .map_err(|e| CliError::numerical(e, Some(json!({ "alpha_d_db": a }))))
                })
                .collect::<Result<_, _>>()?;
            let mut table = Table::new(OPTIMUM_HEADER);
            for o in &points {
                table.push(optimum_row(o, true, kappa, trunc.n_max, trunc.convergence_tol));
            }
            Ok(RunOutput {
                files: vec![(format!("{key}_optimal.csv"), table.to_csv())],
                summary: json!({}),
                ..Default::default()
            })
        }
        "fig7" => {
            let p_dc = match variant {
                "a" => 1.8e-5,
                "b" => 1e-6,
                _ => 1e-10,
            };
            let c = RunConfig {
                p_dc: Some(p_dc),
                ..cfg.clone()
            };
            let settings = comparison_settings(&c, 0.2)?;
            crossover_run(key, &settings, 0.0, 120.0, 2.0, 0.1)
        }
        "fig8" => {
            let alphas = grid(0.0, 150.0, 1.0);
            let mut files = Vec::new();
            let mut summary = serde_json::Map::new();
            let mut push = |name: String, (csv, s): (String, Value)| {
                summary.insert(name.clone(), s);
                files.push((format!("{name}.csv"), csv));
            };
            let explicit = |eta0: f64| {
                comparison_settings(
                    &RunConfig {
                        p_dc: Some(1e-12),
                        ..cfg.clone()
                    },
                    eta0,
                )
            };
            if variant == "a" {
                let settings = explicit(0.2)?;
                for mu in [0.8, 0.4] {
                    push(
                        format!("{key}_decoy_mu{mu}"),
                        decoy_curve(&settings, &alphas, Some(mu))?,
                    );
                }
                for chi in [0.174, 0.172, 0.12] {
                    push(format!("{key}_es_chi{chi}"), es_curve(&settings, &alphas, Some(chi))?);
                }
            } else {
                for eta0 in [0.9, 0.1] {
                    let settings = explicit(eta0)?;
                    push(
                        format!("{key}_decoy_eta{eta0}"),
                        decoy_curve(&settings, &alphas, Some(0.7))?,
                    );
                    push(format!("{key}_es_eta{eta0}"), es_curve(&settings, &alphas, Some(0.12))?);
                }
            }
            Ok(RunOutput {
                files,
                summary: Value::Object(summary),
                ..Default::default()
            })
        }
        _ => unreachable!("figure ids are checked by variants()"),
    }
}
