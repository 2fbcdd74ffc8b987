use rayon::prelude::*;
use serde_json::{json, Value};
use swapkd::detectors::DetectorConstraint;
use swapkd::optimize::{
    find_crossover, max_positive_range, optimize_chi, optimize_joint, sweep, ComparisonSettings, DarkCountMode,
    KeyRateReport, OptimumPoint, RatePair, Scenario, SweepGrid,
};
use swapkd::rates::DecoyInputs;

use crate::config::{CommandKind, RunConfig};
use crate::table::{
    decoy_row, es_curve_row, evaluation_row, optimum_row, DecoyContext, EsPoint, Table, DECOY_HEADER, ES_CURVE_HEADER,
    EVALUATION_HEADER, OPTIMUM_HEADER,
};
use crate::CliError;

#[derive(Default)]
pub struct RunOutput {
    /// file name and CSV contents, in emission order
    pub files: Vec<(String, String)>,
    pub summary: Value,
    pub diagnostics: Vec<Value>,
    /// numerical failure to report after the files are written
    pub failure: Option<CliError>,
}

pub fn run(kind: CommandKind, cfg: &RunConfig) -> Result<RunOutput, CliError> {
    match kind {
        CommandKind::Evaluate => evaluate_one(cfg),
        CommandKind::Sweep => run_sweep(cfg),
        CommandKind::Optimize => run_optimize(cfg),
        CommandKind::CompareDecoy => compare_decoy(cfg),
        CommandKind::Crossover => crossover(cfg),
        CommandKind::Figure => Err(CliError::invalid("figure runs need a figure id")),
    }
}

fn scenario(cfg: &RunConfig, alpha_d_db: f64, chi: f64, eta0: f64) -> Result<Scenario, CliError> {
    let s = Scenario {
        alpha_d_db,
        chi,
        eta0,
        dark_counts: cfg.dark_counts()?,
        kappa: cfg.kappa(),
        trunc: cfg.trunc()?,
    };
    s.validate()?;
    Ok(s)
}

fn point_json(s: &Scenario) -> Value {
    json!({ "alpha_d_db": s.alpha_d_db, "chi": s.chi, "eta0": s.eta0 })
}

fn row_diagnostic(index: usize, s: &Scenario, r: &Result<KeyRateReport, swapkd::Error>) -> Value {
    match r {
        Ok(r) => json!({
            "row": index,
            "point": point_json(s),
            "converged": r.converged,
            "n_max_used": r.n_max_used,
            "truncation_delta": r.truncation_delta,
        }),
        Err(e) => json!({ "row": index, "point": point_json(s), "error": e.kind(), "message": e.to_string() }),
    }
}

fn evaluate_one(cfg: &RunConfig) -> Result<RunOutput, CliError> {
    let s = scenario(
        cfg,
        cfg.single("alpha_d_db", &cfg.alpha_d_db)?,
        cfg.single("chi", &cfg.chi)?,
        cfg.single("eta0", &cfg.eta0)?,
    )?;
    let report = swapkd::optimize::evaluate(&s);
    let mut table = Table::new(EVALUATION_HEADER);
    table.push(evaluation_row(&s, &report));
    let failure = report
        .as_ref()
        .err()
        .map(|e| CliError::numerical(e.clone(), Some(point_json(&s))));
    Ok(RunOutput {
        files: vec![("evaluate.csv".into(), table.to_csv())],
        summary: json!({ "rows": 1 }),
        diagnostics: vec![row_diagnostic(0, &s, &report)],
        failure,
    })
}

fn run_sweep(cfg: &RunConfig) -> Result<RunOutput, CliError> {
    let grid = SweepGrid {
        alpha_d_db: cfg.axis("alpha_d_db", &cfg.alpha_d_db)?,
        eta0: cfg.axis("eta0", &cfg.eta0)?,
        chi: cfg.axis("chi", &cfg.chi)?,
    };
    sweep_table("sweep.csv", cfg, &grid)
}

/// Validates every grid point, then evaluates them all.
pub fn sweep_table(name: &str, cfg: &RunConfig, grid: &SweepGrid) -> Result<RunOutput, CliError> {
    for &a in &grid.alpha_d_db {
        for &e in &grid.eta0 {
            for &c in &grid.chi {
                scenario(cfg, a, c, e)?;
            }
        }
    }
    let base = scenario(cfg, grid.alpha_d_db[0], grid.chi[0], grid.eta0[0])?;
    let rows = sweep(&base, grid)?;
    let mut table = Table::new(EVALUATION_HEADER);
    let mut diagnostics = Vec::with_capacity(rows.len());
    let mut failure = None;
    for (i, row) in rows.iter().enumerate() {
        table.push(evaluation_row(&row.scenario, &row.report));
        diagnostics.push(row_diagnostic(i, &row.scenario, &row.report));
        if let (Err(e), None) = (&row.report, &failure) {
            failure = Some(CliError::numerical(e.clone(), Some(point_json(&row.scenario))));
        }
    }
    Ok(RunOutput {
        files: vec![(name.into(), table.to_csv())],
        summary: json!({ "rows": rows.len(), "failed_rows": rows.iter().filter(|r| r.report.is_err()).count() }),
        diagnostics,
        failure,
    })
}

fn run_optimize(cfg: &RunConfig) -> Result<RunOutput, CliError> {
    let alphas = cfg.axis("alpha_d_db", &cfg.alpha_d_db)?;
    let trunc = cfg.trunc()?;
    let kappa = cfg.kappa();
    let joint = cfg.is_constrained() && cfg.eta0.is_none();
    let dark = cfg.dark_counts()?;
    let mut points: Vec<(f64, Option<f64>)> = Vec::new();
    if joint {
        for &a in &alphas {
            scenario(cfg, a, 0.1, 0.3)?;
            points.push((a, None));
        }
    } else {
        for &a in &alphas {
            for &e in &cfg.axis("eta0", &cfg.eta0)? {
                scenario(cfg, a, 0.1, e)?;
                points.push((a, Some(e)));
            }
        }
    }
    let constraint = match dark {
        DarkCountMode::Constraint { a, b } => DetectorConstraint::new(a, b)?,
        DarkCountMode::Explicit { .. } => DetectorConstraint::default(),
    };
    let results: Vec<Result<OptimumPoint, swapkd::Error>> = points
        .par_iter()
        .map(|&(a, eta0)| match eta0 {
            None => optimize_joint(a, constraint, kappa, trunc),
            Some(e) => optimize_chi(a, e, dark, kappa, trunc),
        })
        .collect();
    let mut table = Table::new(OPTIMUM_HEADER);
    let mut diagnostics = Vec::new();
    for (i, (r, &(a, e))) in results.into_iter().zip(&points).enumerate() {
        let o = r.map_err(|err| CliError::numerical(err, Some(json!({ "alpha_d_db": a, "eta0": e }))))?;
        table.push(optimum_row(&o, joint, kappa, trunc.n_max, trunc.convergence_tol));
        diagnostics.push(json!({
            "row": i,
            "converged": o.converged_at_opt,
            "unimodality_fallback": o.unimodality_fallback,
            "has_positive_rate": o.has_positive_rate,
        }));
    }
    Ok(RunOutput {
        files: vec![("optimize.csv".into(), table.to_csv())],
        summary: json!({ "rows": points.len(), "search": if joint { "joint" } else { "chi" } }),
        diagnostics,
        failure: None,
    })
}

pub fn comparison_settings(cfg: &RunConfig, eta0: f64) -> Result<ComparisonSettings, CliError> {
    let settings = ComparisonSettings {
        eta0,
        p_dc: cfg.p_dc_at(eta0)?,
        kappa: cfg.kappa(),
        nu: cfg.nu(),
        background_detectors: cfg.background_detectors(),
        trunc: cfg.trunc()?,
    };
    DecoyInputs::from_channel(
        1.0,
        settings.nu,
        eta0,
        0.0,
        settings.p_dc,
        settings.background_detectors,
        settings.kappa,
    )?;
    scenario(cfg, 0.0, 0.1, eta0)?;
    Ok(settings)
}

fn es_point(settings: &ComparisonSettings, alpha_d_db: f64, chi: Option<f64>) -> Result<EsPoint, swapkd::Error> {
    let base = EsPoint {
        alpha_d_db,
        eta0: settings.eta0,
        p_dc: settings.p_dc,
        kappa: settings.kappa,
        n_max: settings.trunc.n_max,
        tol: settings.trunc.convergence_tol,
        optimal_chi: chi.is_none(),
        chi: 0.0,
        qber: 0.0,
        r_sec_raw: 0.0,
        r_sec: 0.0,
        converged: true,
        fallback: false,
    };
    Ok(match chi {
        None => {
            let o = settings.es_rate(alpha_d_db)?;
            EsPoint {
                chi: o.chi_opt,
                qber: o.qber_at_opt,
                r_sec_raw: o.r_sec_raw_at_opt,
                r_sec: o.r_sec_at_opt,
                converged: o.converged_at_opt,
                fallback: o.unimodality_fallback,
                ..base
            }
        }
        Some(chi) => {
            let r = settings.es_rate_at(alpha_d_db, chi)?;
            EsPoint {
                chi,
                qber: r.qber,
                r_sec_raw: r.r_sec_raw,
                r_sec: r.r_sec,
                converged: r.converged,
                ..base
            }
        }
    })
}

fn decoy_context(settings: &ComparisonSettings, alpha_d_db: f64, optimal_mu: bool) -> DecoyContext {
    DecoyContext {
        alpha_d_db,
        eta0: settings.eta0,
        p_dc: settings.p_dc,
        background_detectors: settings.background_detectors,
        kappa: settings.kappa,
        optimal_mu,
    }
}

/// Largest grid loss with a positive rate.
fn last_positive(points: &[(f64, f64)]) -> Option<f64> {
    points.iter().filter(|(_, r)| *r > 0.0).map(|(a, _)| *a).last()
}

/// Swapping key rate along `alphas`, at optimal or fixed χ.
pub fn es_curve(settings: &ComparisonSettings, alphas: &[f64], chi: Option<f64>) -> Result<(String, Value), CliError> {
    let points = alphas
        .par_iter()
        .map(|&a| {
            es_point(settings, a, chi).map_err(|e| CliError::numerical(e, Some(json!({ "alpha_d_db": a, "chi": chi }))))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let mut table = Table::new(ES_CURVE_HEADER);
    for p in &points {
        table.push(es_curve_row(p));
    }
    let rates: Vec<(f64, f64)> = points.iter().map(|p| (p.alpha_d_db, p.r_sec)).collect();
    Ok((
        table.to_csv(),
        json!({ "last_positive_alpha_d_db": last_positive(&rates) }),
    ))
}

/// Decoy key rate along `alphas`, at optimal or fixed μ.
pub fn decoy_curve(
    settings: &ComparisonSettings,
    alphas: &[f64],
    mu: Option<f64>,
) -> Result<(String, Value), CliError> {
    let mut table = Table::new(DECOY_HEADER);
    let mut rates = Vec::new();
    for &a in alphas {
        let d = match mu {
            None => settings.decoy_rate(a),
            Some(mu) => settings.decoy_rate_at(a, mu),
        }
        .map_err(|e| CliError::numerical(e, Some(json!({ "alpha_d_db": a, "mu": mu }))))?;
        table.push(decoy_row(&decoy_context(settings, a, mu.is_none()), &d));
        rates.push((a, d.rate));
    }
    Ok((
        table.to_csv(),
        json!({ "last_positive_alpha_d_db": last_positive(&rates) }),
    ))
}

fn label(prefix: &str, x: f64) -> String {
    format!("{prefix}{x}")
}

fn compare_decoy(cfg: &RunConfig) -> Result<RunOutput, CliError> {
    let alphas = cfg.axis("alpha_d_db", &cfg.alpha_d_db)?;
    for &a in &alphas {
        if !(a >= 0.0) {
            return Err(CliError::invalid(format!("alpha_d = {a} dB must be ≥ 0")));
        }
    }
    let settings = comparison_settings(cfg, cfg.single("eta0", &cfg.eta0)?)?;
    let mut out = RunOutput::default();
    let mut summary = serde_json::Map::new();
    let chis: Vec<Option<f64>> = match &cfg.chi {
        Some(v) => v.iter().map(|&c| Some(c)).collect(),
        None => vec![None],
    };
    for chi in chis {
        if let Some(c) = chi {
            scenario(cfg, 0.0, c, settings.eta0)?;
        }
        let name = match chi {
            Some(c) if cfg.chi.as_ref().is_some_and(|v| v.len() > 1) => {
                format!("compare-decoy_es_{}.csv", label("chi", c))
            }
            _ => "compare-decoy_es.csv".into(),
        };
        let (csv, s) = es_curve(&settings, &alphas, chi)?;
        summary.insert(name.clone(), s);
        out.files.push((name, csv));
    }
    let mus: Vec<Option<f64>> = match &cfg.mu {
        Some(v) => v.iter().map(|&m| Some(m)).collect(),
        None => vec![None],
    };
    for mu in mus {
        let name = match mu {
            Some(m) if cfg.mu.as_ref().is_some_and(|v| v.len() > 1) => {
                format!("compare-decoy_decoy_{}.csv", label("mu", m))
            }
            _ => "compare-decoy_decoy.csv".into(),
        };
        let (csv, s) = decoy_curve(&settings, &alphas, mu)?;
        summary.insert(name.clone(), s);
        out.files.push((name, csv));
    }
    out.summary = Value::Object(summary);
    Ok(out)
}

fn pair_tables(settings: &ComparisonSettings, samples: &[RatePair]) -> (String, String) {
    let mut es = Table::new(ES_CURVE_HEADER);
    let mut decoy = Table::new(DECOY_HEADER);
    for p in samples {
        es.push(es_curve_row(&EsPoint {
            alpha_d_db: p.alpha_d_db,
            eta0: settings.eta0,
            p_dc: settings.p_dc,
            kappa: settings.kappa,
            n_max: settings.trunc.n_max,
            tol: settings.trunc.convergence_tol,
            optimal_chi: true,
            chi: p.es.chi_opt,
            qber: p.es.qber_at_opt,
            r_sec_raw: p.es.r_sec_raw_at_opt,
            r_sec: p.es.r_sec_at_opt,
            converged: p.es.converged_at_opt,
            fallback: p.es.unimodality_fallback,
        }));
        decoy.push(decoy_row(&decoy_context(settings, p.alpha_d_db, true), &p.decoy));
    }
    (es.to_csv(), decoy.to_csv())
}

/// Crossover and both positive-rate ranges over `[lo, hi]`.
pub fn crossover_run(
    prefix: &str,
    settings: &ComparisonSettings,
    lo: f64,
    hi: f64,
    step: f64,
    tol: f64,
) -> Result<RunOutput, CliError> {
    let result = find_crossover(settings, lo, hi, step, tol)?;
    let es_range = max_positive_range(&|a| Ok(settings.es_rate(a)?.r_sec_at_opt), lo, hi, step, tol)?;
    let decoy_range = max_positive_range(&|a| Ok(settings.decoy_rate(a)?.rate), lo, hi, step, tol)?;
    let (es, decoy) = pair_tables(settings, &result.samples);
    Ok(RunOutput {
        files: vec![(format!("{prefix}_es.csv"), es), (format!("{prefix}_decoy.csv"), decoy)],
        summary: json!({
            "eta0": settings.eta0,
            "p_dc": settings.p_dc,
            "crossover_db": result.crossover_db,
            "es_max_range_db": es_range.max_range_db,
            "es_range_capped": es_range.capped,
            "decoy_max_range_db": decoy_range.max_range_db,
            "decoy_range_capped": decoy_range.capped,
        }),
        diagnostics: Vec::new(),
        failure: None,
    })
}

const DEFAULT_CROSSOVER_RANGE: [f64; 2] = [0.0, 100.0];

fn crossover(cfg: &RunConfig) -> Result<RunOutput, CliError> {
    let alphas = match cfg.alpha_d_db {
        None => DEFAULT_CROSSOVER_RANGE.to_vec(),
        Some(_) => cfg.axis("alpha_d_db", &cfg.alpha_d_db)?,
    };
    let lo = alphas.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = alphas.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(lo >= 0.0) || !(hi > lo) {
        return Err(CliError::invalid("crossover needs a loss range lo:hi with 0 ≤ lo < hi"));
    }
    let step = cfg.alpha_d_step();
    let tol = cfg.bisection_tol();
    if !(step > 0.0 && tol > 0.0) {
        return Err(CliError::invalid("alpha_d_step and bisection_tol must be positive"));
    }
    let settings = comparison_settings(cfg, cfg.single("eta0", &cfg.eta0)?)?;
    crossover_run("crossover", &settings, lo, hi, step, tol)
}
