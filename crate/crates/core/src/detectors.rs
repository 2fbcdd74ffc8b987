//! Threshold detectors with finite efficiency and dark counts.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdDetector {
    eta: f64,
    p_dc: f64,
}

impl ThresholdDetector {
    pub fn new(eta: f64, p_dc: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&eta) {
            return Err(Error::invalid(format!("efficiency {eta} outside [0, 1]")));
        }
        if !(0.0..1.0).contains(&p_dc) {
            return Err(Error::invalid(format!("dark-count probability {p_dc} outside [0, 1)")));
        }
        Ok(ThresholdDetector { eta, p_dc })
    }

    pub fn ideal() -> Self {
        ThresholdDetector { eta: 1.0, p_dc: 0.0 }
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn p_dc(&self) -> f64 {
        self.p_dc
    }

    /// `(1 − p_dc)(1 − η)^n`
    pub fn no_click_weight(&self, n: usize) -> f64 {
        (1.0 - self.p_dc) * (1.0 - self.eta).powi(n as i32)
    }

    pub fn click_weight(&self, n: usize) -> f64 {
        self.p_dc + (1.0 - self.p_dc) * (1.0 - (1.0 - self.eta).powi(n as i32))
    }

    pub fn weight(&self, click: bool, n: usize) -> f64 {
        if click {
            self.click_weight(n)
        } else {
            self.no_click_weight(n)
        }
    }
}

/// Empirical coupling `p_dc = A · exp(B · η₀)` between efficiency and dark
/// counts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorConstraint {
    pub a: f64,
    pub b: f64,
}

impl Default for DetectorConstraint {
    fn default() -> Self {
        DetectorConstraint { a: 6.1e-7, b: 17.0 }
    }
}

impl DetectorConstraint {
    pub fn new(a: f64, b: f64) -> Result<Self> {
        let c = DetectorConstraint { a, b };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.a > 0.0 && self.a.is_finite() && self.b > 0.0 && self.b.is_finite()) {
            return Err(Error::invalid(format!(
                "constraint parameters must be positive (A = {}, B = {})",
                self.a, self.b
            )));
        }
        Ok(())
    }

    pub fn p_dc(&self, eta0: f64) -> Result<f64> {
        constraint_pdc(eta0, self)
    }
}

pub fn constraint_pdc(eta0: f64, c: &DetectorConstraint) -> Result<f64> {
    c.validate()?;
    if !(0.0..=1.0).contains(&eta0) {
        return Err(Error::invalid(format!("eta0 = {eta0} outside [0, 1]")));
    }
    let p_dc = c.a * (c.b * eta0).exp();
    if p_dc >= 1.0 {
        return Err(Error::ConstraintViolation { eta0, p_dc });
    }
    Ok(p_dc)
}

/// Joint click-pattern weight of independent detectors.
pub fn pattern_weight(dets: &[ThresholdDetector], clicks: &[bool], n: &[usize]) -> Result<f64> {
    if dets.len() != clicks.len() || dets.len() != n.len() {
        return Err(Error::invalid(format!(
            "length mismatch: {} detectors, {} click flags, {} occupations",
            dets.len(),
            clicks.len(),
            n.len()
        )));
    }
    Ok(dets
        .iter()
        .zip(clicks)
        .zip(n)
        .map(|((d, &c), &k)| d.weight(c, k))
        .product())
}
