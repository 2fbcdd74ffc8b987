//! Analyzer coincidences, visibility and QBER of the heralded a/d state.
//!
//! Each side rotates its polarization by an analyzer angle and reads two
//! threshold detectors (H and V outputs). Measurements are evaluated in the
//! Heisenberg picture: the rotation and detector weights are folded into a
//! POVM element on the unrotated input modes, so no mixed-state evolution
//! is needed.
//!
//! States are in the ψ⁻ frame, so the correct outcome pair is
//! anticorrelated and "same" coincidences are errors.

use std::f64::consts::{FRAC_PI_4, FRAC_PI_8, PI};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::detectors::ThresholdDetector;
use crate::error::{Error, Result};
use crate::fock::{mixed_diagonal_povm_element, ConditionalState, C64};
use crate::search::golden_section_max;
use crate::swap::OUTPUT_MODES;

/// Alice's analyzer angle used for visibility scans.
pub const VISIBILITY_ALICE_ANGLE: f64 = FRAC_PI_8;

const SCAN_POINTS: usize = 181;
const SCAN_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Basis {
    Z,
    X,
}

impl Basis {
    pub fn angle(self) -> f64 {
        match self {
            Basis::Z => 0.0,
            Basis::X => FRAC_PI_4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnalyzerSetting {
    pub theta_alice: f64,
    pub theta_bob: f64,
    pub basis: Option<Basis>,
}

impl AnalyzerSetting {
    pub fn basis(basis: Basis) -> Self {
        AnalyzerSetting {
            theta_alice: basis.angle(),
            theta_bob: basis.angle(),
            basis: Some(basis),
        }
    }

    pub fn angles(theta_alice: f64, theta_bob: f64) -> Self {
        AnalyzerSetting {
            theta_alice,
            theta_bob,
            basis: None,
        }
    }
}

/// Click outcome of one analyzer's detector pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SideOutcome {
    None,
    HOnly,
    VOnly,
    Both,
}

impl SideOutcome {
    fn clicks(self) -> (bool, bool) {
        match self {
            SideOutcome::None => (false, false),
            SideOutcome::HOnly => (true, false),
            SideOutcome::VOnly => (false, true),
            SideOutcome::Both => (true, true),
        }
    }
}

/// POVM element of one analyzer outcome on the side's (H, V) input modes.
pub fn analyzer_element(n_max: usize, theta: f64, det: &ThresholdDetector, outcome: SideOutcome) -> DMatrix<C64> {
    let (h, v) = outcome.clicks();
    mixed_diagonal_povm_element(n_max, theta, 0.0, |n1, n2| det.weight(h, n1) * det.weight(v, n2))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoincidenceTable {
    /// exclusive (H,H) + (V,V)
    pub p_same: f64,
    /// exclusive (H,V) + (V,H)
    pub p_diff: f64,
    /// both sides click and at least one side has both detectors firing
    pub p_double: f64,
    pub herald_probability: f64,
}

impl CoincidenceTable {
    pub fn total(&self) -> f64 {
        self.p_same + self.p_diff
    }
}

fn check_modes(cond: &ConditionalState) -> Result<()> {
    if cond.labels() != OUTPUT_MODES {
        return Err(Error::invalid(format!(
            "analyzers act on (aH, aV, dH, dV), got {:?}",
            cond.labels()
        )));
    }
    Ok(())
}

const CLICKING: [SideOutcome; 3] = [SideOutcome::HOnly, SideOutcome::VOnly, SideOutcome::Both];

/// Joint probabilities of the clicking outcomes, `[alice][bob]` in the order
/// H-only, V-only, both.
pub fn joint_click_table(
    cond: &ConditionalState,
    setting: &AnalyzerSetting,
    det: &ThresholdDetector,
) -> Result<[[f64; 3]; 3]> {
    check_modes(cond)?;
    let n_max = cond.n_max();
    let bob: Vec<DMatrix<C64>> = CLICKING
        .iter()
        .map(|&o| analyzer_element(n_max, setting.theta_bob, det, o))
        .collect();
    let alice: Vec<DMatrix<C64>> = CLICKING
        .iter()
        .map(|&o| analyzer_element(n_max, setting.theta_alice, det, o))
        .collect();
    let mut table = [[0.0; 3]; 3];
    for (i, rest) in cond.condition_on_operators(&["aH", "aV"], &alice)?.iter().enumerate() {
        for (j, eb) in bob.iter().enumerate() {
            table[i][j] = rest.expectation(eb)?.re;
        }
    }
    Ok(table)
}

pub fn fourfold_coincidence(
    cond: &ConditionalState,
    setting: &AnalyzerSetting,
    det: &ThresholdDetector,
) -> Result<CoincidenceTable> {
    let t = joint_click_table(cond, setting, det)?;
    Ok(CoincidenceTable {
        p_same: t[0][0] + t[1][1],
        p_diff: t[0][1] + t[1][0],
        p_double: t[2].iter().sum::<f64>() + t[0][2] + t[1][2],
        herald_probability: cond.herald_probability(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VisibilityScan {
    pub visibility: f64,
    pub theta_alice: f64,
    pub max_rate: f64,
    pub min_rate: f64,
    pub theta_bob_at_max: f64,
    pub theta_bob_at_min: f64,
}

/// Four-fold rate for Alice's H detector alone firing and Bob's H detector
/// alone firing, as a function of Bob's analyzer angle.
pub fn coincidence_rate_curve(
    cond: &ConditionalState,
    det: &ThresholdDetector,
    theta_alice: f64,
) -> Result<impl Fn(f64) -> f64> {
    check_modes(cond)?;
    let n_max = cond.n_max();
    let alice = analyzer_element(n_max, theta_alice, det, SideOutcome::HOnly);
    let rest = cond.condition_on_operator(&["aH", "aV"], &alice)?;
    let det = *det;
    Ok(move |theta_bob: f64| {
        let eb = analyzer_element(n_max, theta_bob, &det, SideOutcome::HOnly);
        (rest.rho() * eb).trace().re
    })
}

/// `(Max − Min)/(Max + Min)` of the four-fold rate over Bob's angle: a
/// 181-point grid on [0, π) refined by golden-section search.
pub fn visibility(cond: &ConditionalState, det: &ThresholdDetector, theta_alice: f64) -> Result<VisibilityScan> {
    if cond.herald_probability() <= 0.0 {
        return Err(Error::UndefinedState("herald probability is zero".into()));
    }
    let rate = coincidence_rate_curve(cond, det, theta_alice)?;
    let step = PI / SCAN_POINTS as f64;
    let grid: Vec<f64> = (0..SCAN_POINTS).map(|k| rate(k as f64 * step)).collect();
    let argmax = (0..SCAN_POINTS).fold(0, |best, k| if grid[k] > grid[best] { k } else { best });
    let argmin = (0..SCAN_POINTS).fold(0, |best, k| if grid[k] < grid[best] { k } else { best });
    let centre = |k: usize| k as f64 * step;
    let (theta_max, max_rate) = golden_section_max(&rate, centre(argmax) - step, centre(argmax) + step, SCAN_TOLERANCE);
    let neg = |t: f64| -rate(t);
    let (theta_min, neg_min) = golden_section_max(neg, centre(argmin) - step, centre(argmin) + step, SCAN_TOLERANCE);
    let max_rate = max_rate.max(grid[argmax]);
    let min_rate = (-neg_min).min(grid[argmin]).max(0.0);
    if max_rate + min_rate <= 0.0 {
        return Err(Error::UndefinedVisibility);
    }
    Ok(VisibilityScan {
        visibility: (max_rate - min_rate) / (max_rate + min_rate),
        theta_alice,
        max_rate,
        min_rate,
        theta_bob_at_max: theta_max.rem_euclid(PI),
        theta_bob_at_min: theta_min.rem_euclid(PI),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DirectQber {
    /// pooled over both bases
    pub qber: f64,
    pub qber_z: f64,
    pub qber_x: f64,
    pub z: CoincidenceTable,
    pub x: CoincidenceTable,
}

impl DirectQber {
    /// Sifted coincidence probability per heralding attempt: half of the
    /// attempts use matching bases.
    pub fn sifted_coincidence_probability(&self) -> f64 {
        0.5 * (self.z.total() + self.x.total())
    }
}

/// Error fraction of exclusive coincidences in the Z and X bases.
pub fn direct_qber(cond: &ConditionalState, det: &ThresholdDetector) -> Result<DirectQber> {
    if cond.herald_probability() <= 0.0 {
        return Err(Error::UndefinedState("herald probability is zero".into()));
    }
    let z = fourfold_coincidence(cond, &AnalyzerSetting::basis(Basis::Z), det)?;
    let x = fourfold_coincidence(cond, &AnalyzerSetting::basis(Basis::X), det)?;
    if z.total() <= 0.0 || x.total() <= 0.0 {
        return Err(Error::UndefinedState("no coincidences in one of the bases".into()));
    }
    Ok(DirectQber {
        qber: (z.p_same + x.p_same) / (z.total() + x.total()),
        qber_z: z.p_same / z.total(),
        qber_x: x.p_same / x.total(),
        z,
        x,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QberReport {
    pub direct: DirectQber,
    pub visibility: VisibilityScan,
    /// `(1 − V)/2`
    pub qber_from_visibility: f64,
}

impl QberReport {
    pub fn qber(&self) -> f64 {
        self.direct.qber
    }

    pub fn consistency_gap(&self) -> f64 {
        (self.direct.qber - self.qber_from_visibility).abs()
    }
}

pub fn qber(cond: &ConditionalState, det: &ThresholdDetector) -> Result<QberReport> {
    let direct = direct_qber(cond, det)?;
    let visibility = visibility(cond, det, VISIBILITY_ALICE_ANGLE)?;
    Ok(QberReport {
        direct,
        visibility,
        qber_from_visibility: (1.0 - visibility.visibility) / 2.0,
    })
}

/// `V = (4F − 1)/3`
pub fn fidelity_visibility(fidelity: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&fidelity) {
        return Err(Error::invalid(format!("fidelity {fidelity} outside [0, 1]")));
    }
    Ok((4.0 * fidelity - 1.0) / 3.0)
}

/// `S = 2√2 · V`
pub fn chsh(visibility: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&visibility) {
        return Err(Error::invalid(format!("visibility {visibility} outside [0, 1]")));
    }
    Ok(2.0 * 2f64.sqrt() * visibility)
}
