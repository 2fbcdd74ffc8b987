//! Linear-optics Bell-state measurement on modes b and c and the heralded
//! state it leaves on a and d.
//!
//! The BSM mixes `(bH, cH)` and `(bV, cV)` on balanced beamsplitters and
//! reads four threshold detectors in the order `b'H, b'V, c'H, c'V`.
//! Cross-polarized clicks in different outputs herald ψ⁻, cross-polarized
//! clicks in the same output herald ψ⁺. ψ⁺ heralds are brought into the ψ⁻
//! frame by a π phase on `dV` before states are aggregated.

use std::f64::consts::{FRAC_1_SQRT_2, FRAC_PI_4, PI};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::detectors::ThresholdDetector;
use crate::error::{Error, Result};
use crate::fock::{ConditionalState, MeasurementSplit, ModeRegister, TruncationPolicy, C64};
use crate::sources::{effective_efficiency, tmsv_state, PdcSource};

pub const BSM_MODES: [&str; 4] = ["bH", "bV", "cH", "cV"];
pub const OUTPUT_MODES: [&str; 4] = ["aH", "aV", "dH", "dV"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BellTarget {
    PsiMinus,
    PsiPlus,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeraldPattern {
    /// click flags for b'H, b'V, c'H, c'V
    pub clicks: [bool; 4],
    pub target: BellTarget,
}

pub fn accepted_patterns() -> [HeraldPattern; 4] {
    use BellTarget::*;
    [
        HeraldPattern {
            clicks: [true, false, false, true],
            target: PsiMinus,
        },
        HeraldPattern {
            clicks: [false, true, true, false],
            target: PsiMinus,
        },
        HeraldPattern {
            clicks: [true, true, false, false],
            target: PsiPlus,
        },
        HeraldPattern {
            clicks: [false, false, true, true],
            target: PsiPlus,
        },
    ]
}

/// All 16 click patterns of the BSM detectors, b'H as the lowest bit.
pub fn all_click_patterns() -> Vec<[bool; 4]> {
    (0..16u32)
        .map(|k| [k & 1 != 0, k & 2 != 0, k & 4 != 0, k & 8 != 0])
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SwapResult {
    /// unnormalised state on (aH, aV, dH, dV)
    pub cond: ConditionalState,
    pub patterns: Vec<HeraldPattern>,
    pub pattern_probabilities: Vec<f64>,
    pub herald_probability: f64,
    /// weight lost to photon-number truncation before the measurement
    pub leakage: f64,
}

impl SwapResult {
    /// Part of the heralded state with exactly one photon at a and one at d.
    /// Double-pair emission from a single source heralds at the same order
    /// as one pair per source but leaves both photons on one side; those
    /// components never produce an a/d coincidence.
    pub fn coincidence_subspace(&self) -> ConditionalState {
        self.cond.restricted(|o| o[0] + o[1] == 1 && o[2] + o[3] == 1)
    }
}

/// Single-photon Bell state on (aH, aV, dH, dV).
pub fn bell_state(target: BellTarget, trunc: TruncationPolicy) -> Result<ModeRegister> {
    let sign = match target {
        BellTarget::PsiMinus => -1.0,
        BellTarget::PsiPlus => 1.0,
    };
    ModeRegister::from_fn(&OUTPUT_MODES, trunc, |o| match o {
        [1, 0, 0, 1] => C64::new(FRAC_1_SQRT_2, 0.0),
        [0, 1, 1, 0] => C64::new(sign * FRAC_1_SQRT_2, 0.0),
        _ => C64::new(0.0, 0.0),
    })
}

/// Moves a heralded state into the ψ⁻ frame.
pub fn to_psi_minus_frame(cond: &ConditionalState, target: BellTarget) -> Result<ConditionalState> {
    match target {
        BellTarget::PsiMinus => Ok(cond.clone()),
        BellTarget::PsiPlus => cond.apply_phase("dV", PI),
    }
}

fn mix_bsm(state8: &ModeRegister) -> Result<ModeRegister> {
    for m in BSM_MODES.iter().chain(OUTPUT_MODES.iter()) {
        state8.mode_index(m)?;
    }
    if state8.labels().len() != 8 {
        return Err(Error::invalid("BSM input must hold exactly the eight canonical modes"));
    }
    state8
        .apply_two_mode_mixer("bH", "cH", FRAC_PI_4, 0.0)?
        .apply_two_mode_mixer("bV", "cV", FRAC_PI_4, 0.0)
}

fn bsm_weight(det: ThresholdDetector, clicks: [bool; 4]) -> impl Fn(&[usize]) -> f64 {
    move |n| (0..4).map(|k| det.weight(clicks[k], n[k])).product()
}

/// Applies the BSM to an eight-mode register and conditions on one pattern.
/// The returned state is in the pattern's own Bell frame.
pub fn perform_bsm(state8: &ModeRegister, det_bsm: &ThresholdDetector, pattern: &HeraldPattern) -> Result<SwapResult> {
    let mixed = mix_bsm(state8)?;
    let split = MeasurementSplit::new(&mixed, &BSM_MODES)?;
    let cond = split
        .condition(bsm_weight(*det_bsm, pattern.clicks))?
        .permuted(&OUTPUT_MODES)?;
    let p = cond.herald_probability();
    Ok(SwapResult {
        cond,
        patterns: vec![*pattern],
        pattern_probabilities: vec![p],
        herald_probability: p,
        leakage: mixed.leakage(),
    })
}

/// Probability of every BSM click pattern, in [`all_click_patterns`] order.
pub fn bsm_pattern_probabilities(state8: &ModeRegister, det_bsm: &ThresholdDetector) -> Result<Vec<f64>> {
    let split = MeasurementSplit::new(&mix_bsm(state8)?, &BSM_MODES)?;
    let occupation = split.occupation_probabilities();
    let dim = state8.n_max() + 1;
    Ok(all_click_patterns()
        .into_iter()
        .map(|clicks| {
            let w = bsm_weight(*det_bsm, clicks);
            occupation
                .iter()
                .enumerate()
                .map(|(i, p)| p * w(&crate::fock::occupation_of(i, 4, dim)))
                .sum()
        })
        .collect())
}

/// Swap settings: every photon crosses a quarter of the total loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SwapParams {
    pub chi: f64,
    pub eta0: f64,
    pub alpha_d_db: f64,
    pub p_dc: f64,
}

impl SwapParams {
    /// Detector seen by any photon after its quarter of the channel; used
    /// both at the BSM and at Alice/Bob.
    pub fn detector(&self) -> Result<ThresholdDetector> {
        ThresholdDetector::new(effective_efficiency(self.eta0, self.alpha_d_db / 4.0)?, self.p_dc)
    }
}

/// Heralded states of one polarization sector, indexed `[click b'][click c']`,
/// on the modes `(a_P, d_P)`.
struct Sector {
    states: [[ConditionalState; 2]; 2],
    leakage: f64,
}

fn sector(src: &PdcSource, pol: &str, det: ThresholdDetector, trunc: TruncationPolicy) -> Result<Sector> {
    let (a, b, c, d) = (
        format!("a{pol}"),
        format!("b{pol}"),
        format!("c{pol}"),
        format!("d{pol}"),
    );
    let state = tmsv_state(src, &a, &b, trunc)?
        .tensor(&tmsv_state(src, &c, &d, trunc)?)?
        .apply_two_mode_mixer(&b, &c, FRAC_PI_4, 0.0)?;
    let split = MeasurementSplit::new(&state, &[b.as_str(), c.as_str()])?;
    let at = |cb: bool, cc: bool| split.condition(|n| det.weight(cb, n[0]) * det.weight(cc, n[1]));
    Ok(Sector {
        states: [
            [at(false, false)?, at(false, true)?],
            [at(true, false)?, at(true, true)?],
        ],
        leakage: state.leakage(),
    })
}

/// Computes heralded states from the two polarization sectors separately.
/// The source state, the beamsplitters and the detector weights all factor
/// into an H part and a V part, so each pattern's state is a product.
struct SectorPair {
    h: Sector,
    v: Sector,
}

impl SectorPair {
    fn new(params: &SwapParams, trunc: TruncationPolicy) -> Result<Self> {
        let src = PdcSource::new(params.chi)?;
        let det = params.detector()?;
        Ok(SectorPair {
            h: sector(&src, "H", det, trunc)?,
            v: sector(&src, "V", det, trunc)?,
        })
    }

    fn leakage(&self) -> f64 {
        1.0 - (1.0 - self.h.leakage) * (1.0 - self.v.leakage)
    }

    fn probability(&self, clicks: [bool; 4]) -> f64 {
        let h = &self.h.states[clicks[0] as usize][clicks[2] as usize];
        let v = &self.v.states[clicks[1] as usize][clicks[3] as usize];
        h.herald_probability() * v.herald_probability()
    }

    fn state(&self, clicks: [bool; 4]) -> Result<ConditionalState> {
        let h = &self.h.states[clicks[0] as usize][clicks[2] as usize];
        let v = &self.v.states[clicks[1] as usize][clicks[3] as usize];
        h.tensor(v)?.permuted(&OUTPUT_MODES)
    }
}

/// State heralded by one pattern, in that pattern's own Bell frame.
pub fn pattern_conditional_state(
    params: &SwapParams,
    pattern: &HeraldPattern,
    trunc: TruncationPolicy,
) -> Result<SwapResult> {
    let pair = SectorPair::new(params, trunc)?;
    let cond = pair.state(pattern.clicks)?;
    let p = cond.herald_probability();
    Ok(SwapResult {
        cond,
        patterns: vec![*pattern],
        pattern_probabilities: vec![p],
        herald_probability: p,
        leakage: pair.leakage(),
    })
}

/// Probability of every BSM click pattern, in [`all_click_patterns`] order,
/// and the truncation leakage.
pub fn swap_pattern_probabilities(params: &SwapParams, trunc: TruncationPolicy) -> Result<(Vec<f64>, f64)> {
    let pair = SectorPair::new(params, trunc)?;
    Ok((
        all_click_patterns().into_iter().map(|c| pair.probability(c)).collect(),
        pair.leakage(),
    ))
}

/// Aggregate heralded state over the four accepted patterns, all in the ψ⁻
/// frame, summed in fixed pattern order.
pub fn swap_conditional_state(params: &SwapParams, trunc: TruncationPolicy) -> Result<SwapResult> {
    let pair = SectorPair::new(params, trunc)?;
    let patterns = accepted_patterns();
    let dim = trunc.dim();
    let sub = dim * dim;
    // (a_H d_H) and (a_V d_V) sub-indices → index in OUTPUT_MODES order
    let out_index: Vec<usize> = (0..sub * sub)
        .map(|k| {
            let (ih, iv) = (k / sub, k % sub);
            ((ih / dim * dim + iv / dim) * dim + ih % dim) * dim + iv % dim
        })
        .collect();
    let mut rho = DMatrix::from_element(sub * sub, sub * sub, C64::new(0.0, 0.0));
    let mut probabilities = Vec::with_capacity(4);
    for p in &patterns {
        let h = pair.h.states[p.clicks[0] as usize][p.clicks[2] as usize].rho();
        let mut v = pair.v.states[p.clicks[1] as usize][p.clicks[3] as usize].rho().clone();
        probabilities.push(h.trace().re * v.trace().re);
        if p.target == BellTarget::PsiPlus {
            // π phase on d_V
            for jv in 0..sub {
                for iv in 0..sub {
                    if (iv % dim + jv % dim) % 2 == 1 {
                        v[(iv, jv)] = -v[(iv, jv)];
                    }
                }
            }
        }
        for jh in 0..sub {
            for ih in 0..sub {
                let hv = h[(ih, jh)];
                if hv == C64::new(0.0, 0.0) {
                    continue;
                }
                for jv in 0..sub {
                    let col = out_index[jh * sub + jv];
                    for iv in 0..sub {
                        let vv = v[(iv, jv)];
                        if vv != C64::new(0.0, 0.0) {
                            rho[(out_index[ih * sub + iv], col)] += hv * vv;
                        }
                    }
                }
            }
        }
    }
    let cond = ConditionalState::from_density(&OUTPUT_MODES, trunc.n_max, rho)?;
    let herald_probability = cond.herald_probability();
    Ok(SwapResult {
        cond,
        patterns: patterns.to_vec(),
        pattern_probabilities: probabilities,
        herald_probability,
        leakage: pair.leakage(),
    })
}
