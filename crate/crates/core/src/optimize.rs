//! Scenario evaluation, sweeps, brightness/efficiency optimisation and the
//! decoy-versus-swapping crossover.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::detectors::DetectorConstraint;
use crate::error::{Error, Result};
use crate::fock::TruncationPolicy;
use crate::metrics::{direct_qber, visibility, VISIBILITY_ALICE_ANGLE};
use crate::rates::{decoy_secret_rate, optimize_decoy_mu, secret_rate, sifted_rate, DecoyInputs, DecoyReport};
use crate::search::{argmax, linspace, logspace, stepped, try_golden_section_max};
use crate::sources::MAX_CHI;
use crate::swap::{swap_conditional_state, SwapParams};

/// Highest photon-number cutoff tried before giving up on convergence.
pub const MAX_N_MAX: usize = 6;

pub const CHI_RANGE: (f64, f64) = (1e-3, 0.3);
const CHI_GRID_POINTS: usize = 25;
const CHI_TOLERANCE: f64 = 1e-4;

pub const ETA0_RANGE: (f64, f64) = (0.05, 0.6);
const ETA0_GRID_POINTS: usize = 12;
const ETA0_TOLERANCE: f64 = 1e-3;

const FALLBACK_POINTS: usize = 41;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DarkCountMode {
    /// `p_dc = A exp(B η₀)`
    Constraint {
        a: f64,
        b: f64,
    },
    Explicit {
        p_dc: f64,
    },
}

impl DarkCountMode {
    pub fn constraint(c: DetectorConstraint) -> Self {
        DarkCountMode::Constraint { a: c.a, b: c.b }
    }

    pub fn p_dc(&self, eta0: f64) -> Result<f64> {
        match *self {
            DarkCountMode::Constraint { a, b } => DetectorConstraint::new(a, b)?.p_dc(eta0),
            DarkCountMode::Explicit { p_dc } => {
                if !(0.0..1.0).contains(&p_dc) {
                    return Err(Error::invalid(format!("dark-count probability {p_dc} outside [0, 1)")));
                }
                Ok(p_dc)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub alpha_d_db: f64,
    pub chi: f64,
    pub eta0: f64,
    pub dark_counts: DarkCountMode,
    pub kappa: f64,
    pub trunc: TruncationPolicy,
}

impl Scenario {
    pub fn p_dc(&self) -> Result<f64> {
        self.dark_counts.p_dc(self.eta0)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha_d_db >= 0.0 && self.alpha_d_db.is_finite()) {
            return Err(Error::invalid(format!("alpha_d = {} dB must be ≥ 0", self.alpha_d_db)));
        }
        if !(0.0..=MAX_CHI).contains(&self.chi) {
            return Err(Error::invalid(format!("chi = {} outside [0, {MAX_CHI}]", self.chi)));
        }
        if !(0.0..=1.0).contains(&self.eta0) {
            return Err(Error::invalid(format!("eta0 = {} outside [0, 1]", self.eta0)));
        }
        if !(self.kappa >= 1.0 && self.kappa.is_finite()) {
            return Err(Error::invalid(format!("kappa = {} must be ≥ 1", self.kappa)));
        }
        self.trunc.validate()?;
        self.p_dc()?;
        Ok(())
    }

    fn swap_params(&self) -> Result<SwapParams> {
        Ok(SwapParams {
            chi: self.chi,
            eta0: self.eta0,
            alpha_d_db: self.alpha_d_db,
            p_dc: self.p_dc()?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KeyRateReport {
    /// pooled Z/X error fraction; the QBER used for key rates
    pub qber: f64,
    pub qber_z: f64,
    pub qber_x: f64,
    pub visibility: Option<f64>,
    /// `(1 − V)/2`
    pub qber_from_visibility: Option<f64>,
    pub r_sift: f64,
    pub r_sec_raw: f64,
    pub r_sec: f64,
    pub herald_probability: f64,
    /// herald × sifted exclusive coincidence probability per attempt
    pub coincidence_probability: f64,
    /// coincidences with a double click on at least one side, both bases
    pub double_click_probability: f64,
    pub p_dc: f64,
    pub n_max_used: usize,
    pub converged: bool,
    /// largest change of QBER or V in the final truncation step
    pub truncation_delta: f64,
}

struct Observables {
    qber: f64,
    qber_z: f64,
    qber_x: f64,
    visibility: Option<f64>,
    herald: f64,
    coincidence: f64,
    double: f64,
}

fn observe(params: &SwapParams, trunc: TruncationPolicy, with_visibility: bool) -> Result<Observables> {
    let swap = swap_conditional_state(params, trunc)?;
    let det = params.detector()?;
    let q = direct_qber(&swap.cond, &det)?;
    let v = if with_visibility {
        Some(visibility(&swap.cond, &det, VISIBILITY_ALICE_ANGLE)?.visibility)
    } else {
        None
    };
    Ok(Observables {
        qber: q.qber,
        qber_z: q.qber_z,
        qber_x: q.qber_x,
        visibility: v,
        herald: swap.herald_probability,
        coincidence: q.sifted_coincidence_probability(),
        double: q.z.p_double + q.x.p_double,
    })
}

struct Escalated {
    obs: Observables,
    n_max: usize,
    delta: f64,
    /// set when the cap was reached without agreement
    failure: Option<Error>,
}

/// Observes at `start.n_max`, `start.n_max + 1`, … until two consecutive
/// cutoffs agree to within the tolerance; keeps the higher one.
fn escalate(
    start: TruncationPolicy,
    mut observe: impl FnMut(TruncationPolicy) -> Result<Observables>,
) -> Result<Escalated> {
    let tol = start.convergence_tol;
    let cap = MAX_N_MAX.max(start.n_max + 1);
    let mut trunc = start;
    let mut prev = observe(trunc)?;
    loop {
        let next = trunc.escalated();
        let cur = observe(next)?;
        let dq = (cur.qber - prev.qber).abs();
        let dv = match (cur.visibility, prev.visibility) {
            (Some(a), Some(b)) => (a - b).abs(),
            _ => 0.0,
        };
        if dq < tol && dv < tol {
            return Ok(Escalated {
                obs: cur,
                n_max: next.n_max,
                delta: dq.max(dv),
                failure: None,
            });
        }
        if next.n_max >= cap {
            let (observable, previous, current) = if dq >= tol {
                ("qber", prev.qber, cur.qber)
            } else {
                (
                    "visibility",
                    prev.visibility.unwrap_or(0.0),
                    cur.visibility.unwrap_or(0.0),
                )
            };
            let failure = Error::NotConverged {
                n_max: next.n_max,
                observable,
                previous,
                current,
            };
            return Ok(Escalated {
                obs: cur,
                n_max: next.n_max,
                delta: dq.max(dv),
                failure: Some(failure),
            });
        }
        prev = cur;
        trunc = next;
    }
}

fn evaluate_with(s: &Scenario, with_visibility: bool, strict: bool) -> Result<KeyRateReport> {
    s.validate()?;
    let params = s.swap_params()?;
    let Escalated {
        obs,
        n_max: n_max_used,
        delta,
        failure,
    } = escalate(s.trunc, |t| observe(&params, t, with_visibility))?;
    let converged = match failure {
        Some(e) if strict => return Err(e),
        f => f.is_none(),
    };
    let r_sift = sifted_rate(s.chi, s.eta0, s.alpha_d_db)?;
    let rate = secret_rate(r_sift, obs.qber.clamp(0.0, 0.5), s.kappa)?;
    Ok(KeyRateReport {
        qber: obs.qber,
        qber_z: obs.qber_z,
        qber_x: obs.qber_x,
        visibility: obs.visibility,
        qber_from_visibility: obs.visibility.map(|v| (1.0 - v) / 2.0),
        r_sift,
        r_sec_raw: rate.raw,
        r_sec: rate.clamped,
        herald_probability: obs.herald,
        coincidence_probability: obs.coincidence,
        double_click_probability: obs.double,
        p_dc: params.p_dc,
        n_max_used,
        converged,
        truncation_delta: delta,
    })
}

/// Full pipeline: sources → swap → analyzers → key rates, with the
/// photon-number cutoff raised until QBER and V move by less than the
/// convergence tolerance.
pub fn evaluate(s: &Scenario) -> Result<KeyRateReport> {
    evaluate_with(s, true, true)
}

/// As [`evaluate`] without the visibility scan; used inside optimisers.
pub fn evaluate_qber_only(s: &Scenario) -> Result<KeyRateReport> {
    evaluate_with(s, false, true)
}

/// Optimiser objective: like [`evaluate_qber_only`], but a cutoff that is
/// still moving at the cap yields the highest-cutoff values with
/// `converged = false` instead of an error.
fn evaluate_for_search(s: &Scenario) -> Result<KeyRateReport> {
    evaluate_with(s, false, false)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimumPoint {
    pub alpha_d_db: f64,
    pub chi_opt: f64,
    pub eta0_opt: f64,
    pub p_dc_at_opt: f64,
    pub r_sec_at_opt: f64,
    pub r_sec_raw_at_opt: f64,
    pub qber_at_opt: f64,
    pub converged_at_opt: bool,
    /// false when no sampled point had a positive secret rate
    pub has_positive_rate: bool,
    /// the golden-section result disagreed with the coarse grid and a fine
    /// scan was used instead
    pub unimodality_fallback: bool,
}

struct Maximum {
    x: f64,
    value: f64,
    fallback: bool,
}

/// Coarse grid, then golden-section inside the cells next to the best grid
/// point. If the refined value is worse than the best grid value, the
/// bracket is scanned finely instead and the result is flagged.
fn grid_then_golden(grid: &[f64], tol: f64, f: &(dyn Fn(f64) -> Result<f64> + Sync)) -> Result<Maximum> {
    let values = grid.par_iter().map(|&x| f(x)).collect::<Result<Vec<f64>>>()?;
    let best = argmax(&values).ok_or_else(|| Error::invalid("empty search grid"))?;
    let lo = grid[best.saturating_sub(1)];
    let hi = grid[(best + 1).min(grid.len() - 1)];
    let (x, value) = try_golden_section_max(f, lo, hi, tol)?;
    if value >= values[best] {
        return Ok(Maximum {
            x,
            value,
            fallback: false,
        });
    }
    let fine = linspace(lo, hi, FALLBACK_POINTS);
    let fine_values = fine.par_iter().map(|&x| f(x)).collect::<Result<Vec<f64>>>()?;
    let k = argmax(&fine_values).expect("non-empty");
    Ok(Maximum {
        x: fine[k],
        value: fine_values[k],
        fallback: true,
    })
}

fn chi_scenario(
    alpha_d_db: f64,
    eta0: f64,
    dark: DarkCountMode,
    kappa: f64,
    trunc: TruncationPolicy,
    chi: f64,
) -> Scenario {
    Scenario {
        alpha_d_db,
        chi,
        eta0,
        dark_counts: dark,
        kappa,
        trunc,
    }
}

/// Maximises the secret rate over χ ∈ [10⁻³, 0.3]: 25 log-spaced points,
/// then golden-section to Δχ = 10⁻⁴ on the unclamped rate.
pub fn optimize_chi(
    alpha_d_db: f64,
    eta0: f64,
    dark: DarkCountMode,
    kappa: f64,
    trunc: TruncationPolicy,
) -> Result<OptimumPoint> {
    let p_dc = dark.p_dc(eta0)?;
    let objective = |chi: f64| -> Result<f64> {
        Ok(evaluate_for_search(&chi_scenario(alpha_d_db, eta0, dark, kappa, trunc, chi))?.r_sec_raw)
    };
    let grid = logspace(CHI_RANGE.0, CHI_RANGE.1, CHI_GRID_POINTS);
    let m = grid_then_golden(&grid, CHI_TOLERANCE, &objective)?;
    let report = evaluate_for_search(&chi_scenario(alpha_d_db, eta0, dark, kappa, trunc, m.x))?;
    Ok(OptimumPoint {
        alpha_d_db,
        chi_opt: m.x,
        eta0_opt: eta0,
        p_dc_at_opt: p_dc,
        r_sec_at_opt: report.r_sec,
        r_sec_raw_at_opt: m.value,
        qber_at_opt: report.qber,
        converged_at_opt: report.converged,
        has_positive_rate: m.value > 0.0,
        unimodality_fallback: m.fallback,
    })
}

/// Joint maximisation over (χ, η₀) with dark counts tied to η₀ by the
/// constraint: 12-point η₀ grid on [0.05, 0.6], golden-section to
/// Δη₀ = 10⁻³, [`optimize_chi`] inside.
pub fn optimize_joint(
    alpha_d_db: f64,
    constraint: DetectorConstraint,
    kappa: f64,
    trunc: TruncationPolicy,
) -> Result<OptimumPoint> {
    let dark = DarkCountMode::constraint(constraint);
    let inner = |eta0: f64| optimize_chi(alpha_d_db, eta0, dark, kappa, trunc);
    let objective = |eta0: f64| -> Result<f64> { Ok(inner(eta0)?.r_sec_raw_at_opt) };
    let grid = linspace(ETA0_RANGE.0, ETA0_RANGE.1, ETA0_GRID_POINTS);
    let m = grid_then_golden(&grid, ETA0_TOLERANCE, &objective)?;
    let mut best = inner(m.x)?;
    best.unimodality_fallback |= m.fallback;
    Ok(best)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepGrid {
    pub alpha_d_db: Vec<f64>,
    pub eta0: Vec<f64>,
    pub chi: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub scenario: Scenario,
    pub report: std::result::Result<KeyRateReport, Error>,
}

/// Every grid point of `alpha_d × eta0 × chi` (χ fastest), other settings
/// from `base`. Per-point failures are kept in the row.
pub fn sweep(base: &Scenario, grid: &SweepGrid) -> Result<Vec<SweepRow>> {
    if grid.alpha_d_db.is_empty() || grid.eta0.is_empty() || grid.chi.is_empty() {
        return Err(Error::invalid("sweep axes must be non-empty"));
    }
    let mut points = Vec::new();
    for &alpha_d_db in &grid.alpha_d_db {
        for &eta0 in &grid.eta0 {
            for &chi in &grid.chi {
                points.push(Scenario {
                    alpha_d_db,
                    eta0,
                    chi,
                    ..*base
                });
            }
        }
    }
    Ok(points
        .into_par_iter()
        .map(|scenario| SweepRow {
            report: evaluate(&scenario),
            scenario,
        })
        .collect())
}

/// Settings shared by the decoy/swapping comparison.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComparisonSettings {
    pub eta0: f64,
    pub p_dc: f64,
    pub kappa: f64,
    pub nu: f64,
    /// dark-counting detectors contributing to the decoy background yield
    pub background_detectors: u32,
    pub trunc: TruncationPolicy,
}

impl ComparisonSettings {
    fn decoy_base(&self, alpha_d_db: f64) -> Result<DecoyInputs> {
        DecoyInputs::from_channel(
            1.0,
            self.nu,
            self.eta0,
            alpha_d_db,
            self.p_dc,
            self.background_detectors,
            self.kappa,
        )
    }

    /// Decoy rate at its best μ.
    pub fn decoy_rate(&self, alpha_d_db: f64) -> Result<DecoyReport> {
        optimize_decoy_mu(&self.decoy_base(alpha_d_db)?)
    }

    /// Decoy rate at a fixed μ.
    pub fn decoy_rate_at(&self, alpha_d_db: f64, mu: f64) -> Result<DecoyReport> {
        decoy_secret_rate(&self.decoy_base(alpha_d_db)?.with_mu(mu))
    }

    /// Swapping rate at its best χ.
    pub fn es_rate(&self, alpha_d_db: f64) -> Result<OptimumPoint> {
        optimize_chi(
            alpha_d_db,
            self.eta0,
            DarkCountMode::Explicit { p_dc: self.p_dc },
            self.kappa,
            self.trunc,
        )
    }

    /// Swapping rate at a fixed χ.
    pub fn es_rate_at(&self, alpha_d_db: f64, chi: f64) -> Result<KeyRateReport> {
        evaluate_for_search(&Scenario {
            alpha_d_db,
            chi,
            eta0: self.eta0,
            dark_counts: DarkCountMode::Explicit { p_dc: self.p_dc },
            kappa: self.kappa,
            trunc: self.trunc,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatePair {
    pub alpha_d_db: f64,
    pub es: OptimumPoint,
    pub decoy: DecoyReport,
}

impl RatePair {
    /// `ln R_decoy − ln R_ES`, with a zero rate counted as −∞.
    pub fn log_ratio(&self) -> f64 {
        let ln = |r: f64| if r > 0.0 { r.ln() } else { f64::NEG_INFINITY };
        let (d, e) = (ln(self.decoy.rate), ln(self.es.r_sec_at_opt));
        if d == f64::NEG_INFINITY && e == f64::NEG_INFINITY {
            f64::NAN
        } else {
            d - e
        }
    }
}

pub fn rate_pair(settings: &ComparisonSettings, alpha_d_db: f64) -> Result<RatePair> {
    Ok(RatePair {
        alpha_d_db,
        es: settings.es_rate(alpha_d_db)?,
        decoy: settings.decoy_rate(alpha_d_db)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossoverResult {
    /// loss at which the decoy rate falls below the swapping rate
    pub crossover_db: Option<f64>,
    pub samples: Vec<RatePair>,
}

/// Scans `[lo, hi]` in steps of `step` with both protocols at their
/// per-distance optimum and bisects the first sign change of
/// `ln R_decoy − ln R_ES` (from decoy ahead to decoy behind) down to `tol`.
/// No crossover is reported unless both rates are positive on the decoy
/// side of the final bracket.
pub fn find_crossover(settings: &ComparisonSettings, lo: f64, hi: f64, step: f64, tol: f64) -> Result<CrossoverResult> {
    let grid = stepped(lo, hi, step)?;
    let samples = grid
        .par_iter()
        .map(|&a| rate_pair(settings, a))
        .collect::<Result<Vec<_>>>()?;
    let mut crossover_db = None;
    for w in samples.windows(2) {
        let (left, right) = (w[0].log_ratio(), w[1].log_ratio());
        if left > 0.0 && right <= 0.0 {
            let (mut a, mut b) = (w[0].alpha_d_db, w[1].alpha_d_db);
            let mut at_a = w[0];
            while b - a > tol {
                let mid = 0.5 * (a + b);
                let p = rate_pair(settings, mid)?;
                if p.log_ratio() > 0.0 {
                    a = mid;
                    at_a = p;
                } else {
                    b = mid;
                }
            }
            if at_a.decoy.rate > 0.0 && at_a.es.r_sec_at_opt > 0.0 {
                crossover_db = Some(0.5 * (a + b));
            }
            break;
        }
    }
    Ok(CrossoverResult { crossover_db, samples })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RangeResult {
    /// largest loss with a positive rate, to within the bisection tolerance
    pub max_range_db: Option<f64>,
    /// the rate was still positive at the end of the scanned interval
    pub capped: bool,
}

/// Largest αd in `[lo, hi]` with `rate(αd) > 0`: grid scan from `lo`, then
/// bisection of the first positive→non-positive step to `tol`.
pub fn max_positive_range(
    rate: &(dyn Fn(f64) -> Result<f64> + Sync),
    lo: f64,
    hi: f64,
    step: f64,
    tol: f64,
) -> Result<RangeResult> {
    let grid = stepped(lo, hi, step)?;
    let values = grid.par_iter().map(|&a| rate(a)).collect::<Result<Vec<f64>>>()?;
    let Some(first) = values.iter().position(|&r| r > 0.0) else {
        return Ok(RangeResult {
            max_range_db: None,
            capped: false,
        });
    };
    let Some(off) = values[first..].iter().position(|&r| r <= 0.0) else {
        return Ok(RangeResult {
            max_range_db: Some(*grid.last().expect("non-empty")),
            capped: true,
        });
    };
    let (mut a, mut b) = (grid[first + off - 1], grid[first + off]);
    while b - a > tol {
        let mid = 0.5 * (a + b);
        if rate(mid)? > 0.0 {
            a = mid;
        } else {
            b = mid;
        }
    }
    Ok(RangeResult {
        max_range_db: Some(a),
        capped: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scenario(alpha_d_db: f64, chi: f64, eta0: f64, dark: DarkCountMode) -> Scenario {
        Scenario {
            alpha_d_db,
            chi,
            eta0,
            dark_counts: dark,
            kappa: 1.22,
            trunc: TruncationPolicy::default(),
        }
    }

    const NO_DARK: DarkCountMode = DarkCountMode::Explicit { p_dc: 0.0 };

    #[test]
    fn ideal_limit() {
        let r = evaluate(&scenario(0.0, 0.01, 1.0, NO_DARK)).unwrap();
        assert!(r.qber < 1e-3, "qber {}", r.qber);
        assert!(r.visibility.unwrap() > 0.998);
        assert!(r.converged);
        assert!(r.n_max_used >= 5);
    }

    #[test]
    fn dark_count_dominated_limit() {
        let dark = DarkCountMode::constraint(DetectorConstraint::default());
        let r = evaluate(&scenario(50.0, 1e-4, 0.1, dark)).unwrap();
        assert!(r.qber > 0.45, "qber {}", r.qber);
        assert_eq!(r.r_sec, 0.0);
    }

    #[test]
    fn evaluation_is_deterministic() {
        let dark = DarkCountMode::constraint(DetectorConstraint::default());
        let s = scenario(10.0, 0.1, 0.3, dark);
        assert_eq!(evaluate(&s).unwrap(), evaluate(&s).unwrap());
    }

    #[test]
    fn invalid_scenarios_rejected() {
        assert!(evaluate(&scenario(-1.0, 0.1, 0.3, NO_DARK)).is_err());
        assert!(evaluate(&scenario(0.0, 0.4, 0.3, NO_DARK)).is_err());
        assert!(evaluate(&scenario(0.0, 0.1, 1.3, NO_DARK)).is_err());
        let bad = DarkCountMode::Constraint { a: 0.5, b: 17.0 };
        assert!(matches!(
            evaluate(&scenario(0.0, 0.1, 0.5, bad)),
            Err(Error::ConstraintViolation { .. })
        ));
    }

    fn synthetic(qber: f64) -> Observables {
        Observables {
            qber,
            qber_z: qber,
            qber_x: qber,
            visibility: None,
            herald: 1.0,
            coincidence: 1.0,
            double: 0.0,
        }
    }

    #[test]
    fn escalation_stops_when_consecutive_cutoffs_agree() {
        let start = TruncationPolicy::new(2, 1e-3).unwrap();
        let e = escalate(start, |t| Ok(synthetic(0.1 + 0.1f64.powi(t.n_max as i32)))).unwrap();
        assert_eq!(e.n_max, 4);
        assert!(e.failure.is_none());
        assert!(e.delta < 1e-3 && (e.obs.qber - 0.1001).abs() < 1e-12);
    }

    #[test]
    fn unconverged_truncation_reports_both_values() {
        let start = TruncationPolicy::new(3, 1e-4).unwrap();
        let e = escalate(start, |t| Ok(synthetic(0.01 * t.n_max as f64))).unwrap();
        assert_eq!(e.n_max, MAX_N_MAX);
        match e.failure {
            Some(Error::NotConverged {
                n_max,
                previous,
                current,
                ..
            }) => {
                assert_eq!(n_max, MAX_N_MAX);
                assert!((previous - 0.05).abs() < 1e-12 && (current - 0.06).abs() < 1e-12);
            }
            other => panic!("expected non-convergence, got {other:?}"),
        }
    }

    #[test]
    fn sweep_rows_are_ordered_and_keep_failures() {
        let base = scenario(0.0, 0.1, 0.3, NO_DARK);
        let grid = SweepGrid {
            alpha_d_db: vec![0.0, 10.0],
            eta0: vec![0.3],
            chi: vec![0.0, 0.1],
        };
        let rows = sweep(&base, &grid).unwrap();
        assert_eq!(rows.len(), 4);
        assert_eq!(rows[1].scenario.chi, 0.1);
        assert_eq!(rows[2].scenario.alpha_d_db, 10.0);
        assert!(rows[0].report.is_err());
        assert!(rows[1].report.is_ok());
        let empty = SweepGrid { chi: vec![], ..grid };
        assert!(sweep(&base, &empty).is_err());
    }

    #[test]
    fn thread_count_does_not_change_results() {
        let base = scenario(0.0, 0.1, 0.3, DarkCountMode::Explicit { p_dc: 1e-5 });
        let grid = SweepGrid {
            alpha_d_db: vec![5.0, 20.0],
            eta0: vec![0.3],
            chi: vec![0.05, 0.2],
        };
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| sweep(&base, &grid).unwrap())
        };
        assert_eq!(run(1), run(3));
    }

    #[test]
    fn chi_optimum_is_a_local_maximum() {
        let dark = DarkCountMode::constraint(DetectorConstraint::default());
        let opt = optimize_chi(10.0, 0.3, dark, 1.22, TruncationPolicy::default()).unwrap();
        assert!(opt.has_positive_rate);
        assert!(opt.chi_opt > CHI_RANGE.0 && opt.chi_opt < CHI_RANGE.1);
        for d in [-0.005, 0.005] {
            let r = evaluate_qber_only(&scenario(10.0, opt.chi_opt + d, 0.3, dark)).unwrap();
            assert!(r.r_sec < opt.r_sec_at_opt);
        }
    }

    #[test]
    fn range_search_bisects_a_step() {
        let f = |a: f64| -> Result<f64> { Ok(if a < 17.33 { 1.0 } else { 0.0 }) };
        let r = max_positive_range(&f, 0.0, 40.0, 5.0, 0.1).unwrap();
        assert!((r.max_range_db.unwrap() - 17.33).abs() <= 0.1 && !r.capped);
        let g = |_: f64| -> Result<f64> { Ok(1.0) };
        assert!(max_positive_range(&g, 0.0, 40.0, 5.0, 0.1).unwrap().capped);
        let z = |_: f64| -> Result<f64> { Ok(0.0) };
        assert_eq!(max_positive_range(&z, 0.0, 40.0, 5.0, 0.1).unwrap().max_range_db, None);
    }
}
