//! CSV tables: `,` delimiter, 12 significant digits in scientific notation,
//! empty cells for missing values.

use std::fmt::Write;

use swapkd::optimize::{DarkCountMode, KeyRateReport, OptimumPoint, Scenario};
use swapkd::rates::DecoyReport;

pub enum Cell {
    Num(f64),
    Missing,
    Bool(bool),
    Int(u64),
    Text(String),
}

impl Cell {
    fn render(&self) -> String {
        match self {
            Cell::Num(x) => format!("{x:.11e}"),
            Cell::Missing => String::new(),
            Cell::Bool(b) => b.to_string(),
            Cell::Int(n) => n.to_string(),
            Cell::Text(s) => {
                if s.contains([',', '"', '\n']) {
                    format!("\"{}\"", s.replace('"', "\"\""))
                } else {
                    s.clone()
                }
            }
        }
    }
}

fn opt(x: Option<f64>) -> Cell {
    x.map_or(Cell::Missing, Cell::Num)
}

/// log10 of a positive rate; empty otherwise.
fn log_rate(r: f64) -> Cell {
    if r > 0.0 {
        Cell::Num(r.log10())
    } else {
        Cell::Missing
    }
}

pub struct Table {
    header: &'static [&'static str],
    rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(header: &'static [&'static str]) -> Self {
        Table {
            header,
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        assert_eq!(row.len(), self.header.len(), "row width must match the header");
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> String {
        let mut out = self.header.join(",");
        out.push('\n');
        for row in &self.rows {
            let cells: Vec<String> = row.iter().map(Cell::render).collect();
            writeln!(out, "{}", cells.join(",")).expect("writing to a String");
        }
        out
    }
}

pub const EVALUATION_HEADER: &[&str] = &[
    "alpha_d_db",
    "chi",
    "eta0",
    "dark_count_mode",
    "constraint_a",
    "constraint_b",
    "p_dc",
    "kappa",
    "n_max",
    "convergence_tol",
    "visibility",
    "qber_direct",
    "qber_z",
    "qber_x",
    "qber_from_visibility",
    "r_sift",
    "r_sec_raw",
    "r_sec",
    "log10_r_sec",
    "herald_probability",
    "coincidence_probability",
    "double_click_probability",
    "n_max_used",
    "converged",
    "error",
];

fn dark_cells(mode: &DarkCountMode) -> [Cell; 3] {
    match *mode {
        DarkCountMode::Constraint { a, b } => [Cell::Text("constraint".into()), Cell::Num(a), Cell::Num(b)],
        DarkCountMode::Explicit { .. } => [Cell::Text("explicit".into()), Cell::Missing, Cell::Missing],
    }
}

pub fn evaluation_row(s: &Scenario, report: &Result<KeyRateReport, swapkd::Error>) -> Vec<Cell> {
    let [mode, a, b] = dark_cells(&s.dark_counts);
    let mut row = vec![
        Cell::Num(s.alpha_d_db),
        Cell::Num(s.chi),
        Cell::Num(s.eta0),
        mode,
        a,
        b,
        opt(s.p_dc().ok()),
        Cell::Num(s.kappa),
        Cell::Int(s.trunc.n_max as u64),
        Cell::Num(s.trunc.convergence_tol),
    ];
    match report {
        Ok(r) => row.extend([
            opt(r.visibility),
            Cell::Num(r.qber),
            Cell::Num(r.qber_z),
            Cell::Num(r.qber_x),
            opt(r.qber_from_visibility),
            Cell::Num(r.r_sift),
            Cell::Num(r.r_sec_raw),
            Cell::Num(r.r_sec),
            log_rate(r.r_sec),
            Cell::Num(r.herald_probability),
            Cell::Num(r.coincidence_probability),
            Cell::Num(r.double_click_probability),
            Cell::Int(r.n_max_used as u64),
            Cell::Bool(r.converged),
            Cell::Missing,
        ]),
        Err(e) => {
            row.extend((0..14).map(|_| Cell::Missing));
            row.push(Cell::Text(e.kind().to_string()));
        }
    }
    row
}

pub const OPTIMUM_HEADER: &[&str] = &[
    "alpha_d_db",
    "eta0_search",
    "chi_opt",
    "eta0_opt",
    "p_dc_at_opt",
    "kappa",
    "n_max",
    "convergence_tol",
    "qber_at_opt",
    "r_sec_raw_at_opt",
    "r_sec_at_opt",
    "log10_r_sec",
    "has_positive_rate",
    "converged",
    "unimodality_fallback",
];

pub fn optimum_row(o: &OptimumPoint, joint: bool, kappa: f64, n_max: usize, tol: f64) -> Vec<Cell> {
    vec![
        Cell::Num(o.alpha_d_db),
        Cell::Text(if joint { "joint" } else { "fixed" }.into()),
        Cell::Num(o.chi_opt),
        Cell::Num(o.eta0_opt),
        Cell::Num(o.p_dc_at_opt),
        Cell::Num(kappa),
        Cell::Int(n_max as u64),
        Cell::Num(tol),
        Cell::Num(o.qber_at_opt),
        Cell::Num(o.r_sec_raw_at_opt),
        Cell::Num(o.r_sec_at_opt),
        log_rate(o.r_sec_at_opt),
        Cell::Bool(o.has_positive_rate),
        Cell::Bool(o.converged_at_opt),
        Cell::Bool(o.unimodality_fallback),
    ]
}

pub const ES_CURVE_HEADER: &[&str] = &[
    "alpha_d_db",
    "eta0",
    "p_dc",
    "kappa",
    "n_max",
    "convergence_tol",
    "chi_mode",
    "chi",
    "qber",
    "r_sec_raw",
    "r_sec",
    "log10_r_sec",
    "converged",
    "unimodality_fallback",
];

pub struct EsPoint {
    pub alpha_d_db: f64,
    pub eta0: f64,
    pub p_dc: f64,
    pub kappa: f64,
    pub n_max: usize,
    pub tol: f64,
    pub optimal_chi: bool,
    pub chi: f64,
    pub qber: f64,
    pub r_sec_raw: f64,
    pub r_sec: f64,
    pub converged: bool,
    pub fallback: bool,
}

pub fn es_curve_row(p: &EsPoint) -> Vec<Cell> {
    vec![
        Cell::Num(p.alpha_d_db),
        Cell::Num(p.eta0),
        Cell::Num(p.p_dc),
        Cell::Num(p.kappa),
        Cell::Int(p.n_max as u64),
        Cell::Num(p.tol),
        Cell::Text(if p.optimal_chi { "optimal" } else { "fixed" }.into()),
        Cell::Num(p.chi),
        Cell::Num(p.qber),
        Cell::Num(p.r_sec_raw),
        Cell::Num(p.r_sec),
        log_rate(p.r_sec),
        Cell::Bool(p.converged),
        Cell::Bool(p.fallback),
    ]
}

pub const DECOY_HEADER: &[&str] = &[
    "alpha_d_db",
    "eta0",
    "p_dc",
    "background_detectors",
    "kappa",
    "mu_mode",
    "mu",
    "nu",
    "q_mu",
    "e_mu",
    "q_nu",
    "y1_lower",
    "q1_lower",
    "e1_upper",
    "r_sec_raw",
    "r_sec",
    "log10_r_sec",
    "y1_nonpositive",
    "e1_clamped",
];

pub struct DecoyContext {
    pub alpha_d_db: f64,
    pub eta0: f64,
    pub p_dc: f64,
    pub background_detectors: u32,
    pub kappa: f64,
    pub optimal_mu: bool,
}

pub fn decoy_row(c: &DecoyContext, d: &DecoyReport) -> Vec<Cell> {
    vec![
        Cell::Num(c.alpha_d_db),
        Cell::Num(c.eta0),
        Cell::Num(c.p_dc),
        Cell::Int(c.background_detectors as u64),
        Cell::Num(c.kappa),
        Cell::Text(if c.optimal_mu { "optimal" } else { "fixed" }.into()),
        Cell::Num(d.mu),
        Cell::Num(d.nu),
        Cell::Num(d.q_mu),
        Cell::Num(d.e_mu),
        Cell::Num(d.q_nu),
        Cell::Num(d.y1_lower),
        Cell::Num(d.q1_lower),
        Cell::Num(d.e1_upper),
        Cell::Num(d.rate_raw),
        Cell::Num(d.rate),
        log_rate(d.rate),
        Cell::Bool(d.y1_nonpositive),
        Cell::Bool(d.e1_clamped),
    ]
}
