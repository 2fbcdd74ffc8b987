//! Parametric down-conversion sources and channel loss.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fock::{ModeRegister, TruncationPolicy, C64};

/// Largest supported interaction parameter. Above this the n_max = 4
/// truncation is no longer honest.
pub const MAX_CHI: f64 = 0.35;

/// Canonical mode order of the two-source experiment.
pub const CANONICAL_MODES: [&str; 8] = ["aH", "aV", "bH", "bV", "cH", "cV", "dH", "dV"];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PdcSource {
    chi: f64,
}

impl PdcSource {
    pub fn new(chi: f64) -> Result<Self> {
        if !(0.0..=MAX_CHI).contains(&chi) {
            return Err(Error::invalid(format!("chi = {chi} outside [0, {MAX_CHI}]")));
        }
        Ok(PdcSource { chi })
    }

    pub fn chi(&self) -> f64 {
        self.chi
    }

    /// Amplitude of `n` pairs in one polarization: `(i tanh χ)^n / cosh χ`.
    pub fn pair_amplitude(&self, n: usize) -> C64 {
        C64::new(0.0, self.chi.tanh()).powu(n as u32) / self.chi.cosh()
    }

    /// Probability of exactly one pair in a given polarization and none in the other.
    pub fn single_pair_probability(&self) -> f64 {
        self.chi.tanh().powi(2) / self.chi.cosh().powi(4)
    }

    /// Mean photon number in one mode.
    pub fn mean_photons_per_mode(&self) -> f64 {
        self.chi.sinh().powi(2)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelSegment {
    pub alpha_l_db: f64,
}

impl ChannelSegment {
    pub fn new(alpha_l_db: f64) -> Result<Self> {
        if !(alpha_l_db >= 0.0 && alpha_l_db.is_finite()) {
            return Err(Error::invalid(format!(
                "channel loss {alpha_l_db} dB must be finite and ≥ 0"
            )));
        }
        Ok(ChannelSegment { alpha_l_db })
    }

    pub fn transmission(&self) -> f64 {
        10f64.powf(-self.alpha_l_db / 10.0)
    }
}

/// Detector efficiency with the channel folded in: `η₀ · 10^(−αl/10)`.
pub fn effective_efficiency(eta0: f64, alpha_l_db: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&eta0) {
        return Err(Error::invalid(format!("eta0 = {eta0} outside [0, 1]")));
    }
    Ok(eta0 * ChannelSegment::new(alpha_l_db)?.transmission())
}

fn with_leakage(state: ModeRegister) -> ModeRegister {
    let missing = (1.0 - state.norm_sqr()).max(0.0);
    state.with_leakage(missing)
}

/// Two-mode squeezed vacuum on `(x, y)`, truncated at `n_max`.
pub fn tmsv_state(src: &PdcSource, x: &str, y: &str, trunc: TruncationPolicy) -> Result<ModeRegister> {
    let state = ModeRegister::from_fn(&[x, y], trunc, |o| {
        if o[0] == o[1] {
            src.pair_amplitude(o[0])
        } else {
            C64::new(0.0, 0.0)
        }
    })?;
    Ok(with_leakage(state))
}

/// Polarization-entangled pair state on `(aH, aV)` and `(bH, bV)`: one
/// two-mode squeezed vacuum per polarization.
pub fn pdc_two_mode_state(
    src: &PdcSource,
    spatial_a: (&str, &str),
    spatial_b: (&str, &str),
    trunc: TruncationPolicy,
) -> Result<ModeRegister> {
    let labels = [spatial_a.0, spatial_a.1, spatial_b.0, spatial_b.1];
    let state = ModeRegister::from_fn(&labels, trunc, |o| {
        if o[0] == o[2] && o[1] == o[3] {
            src.pair_amplitude(o[0]) * src.pair_amplitude(o[1])
        } else {
            C64::new(0.0, 0.0)
        }
    })?;
    Ok(with_leakage(state))
}

/// Both sources with equal brightness, in [`CANONICAL_MODES`] order.
pub fn two_source_state(chi: f64, trunc: TruncationPolicy) -> Result<ModeRegister> {
    let src = PdcSource::new(chi)?;
    let ab = pdc_two_mode_state(&src, ("aH", "aV"), ("bH", "bV"), trunc)?;
    let cd = pdc_two_mode_state(&src, ("cH", "cV"), ("dH", "dV"), trunc)?;
    ab.tensor(&cd)
}
