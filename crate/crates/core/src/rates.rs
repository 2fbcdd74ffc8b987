//! Key-rate formulas: the entanglement-swapping BBM92 link and the
//! vacuum + weak decoy BB84 baseline.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::search::{argmax, stepped, try_golden_section_max};

pub const DEFAULT_KAPPA: f64 = 1.22;
pub const DEFAULT_NU: f64 = 0.1;
pub const BACKGROUND_ERROR_RATE: f64 = 0.5;

const MU_GRID: (f64, f64, f64) = (0.05, 1.0, 0.005);
const MU_TOLERANCE: f64 = 1e-6;

/// Binary Shannon entropy, with `h2(0) = h2(1) = 0`.
pub fn h2(x: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&x) {
        return Err(Error::invalid(format!("h2 argument {x} outside [0, 1]")));
    }
    let term = |p: f64| if p > 0.0 { -p * p.log2() } else { 0.0 };
    Ok(term(x) + term(1.0 - x))
}

fn check_kappa(kappa: f64) -> Result<()> {
    if !(kappa >= 1.0 && kappa.is_finite()) {
        return Err(Error::invalid(format!("kappa = {kappa} must be finite and ≥ 1")));
    }
    Ok(())
}

/// Leading-order sifted rate per pump pulse: `χ⁴ η₀⁴ 10^(−αd/10) / 4`.
pub fn sifted_rate(chi: f64, eta0: f64, alpha_d_db: f64) -> Result<f64> {
    if !(chi >= 0.0 && chi.is_finite()) {
        return Err(Error::invalid(format!("chi = {chi} must be ≥ 0")));
    }
    if !(0.0..=1.0).contains(&eta0) {
        return Err(Error::invalid(format!("eta0 = {eta0} outside [0, 1]")));
    }
    if !(alpha_d_db >= 0.0 && alpha_d_db.is_finite()) {
        return Err(Error::invalid(format!("alpha_d = {alpha_d_db} dB must be ≥ 0")));
    }
    Ok(0.25 * chi.powi(4) * eta0.powi(4) * 10f64.powf(-alpha_d_db / 10.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SecretRate {
    /// may be negative
    pub raw: f64,
    /// `max(0, raw)`
    pub clamped: f64,
}

/// `R_sift · [1 − κ h2(Q) − h2(Q)]`
pub fn secret_rate(r_sift: f64, qber: f64, kappa: f64) -> Result<SecretRate> {
    check_kappa(kappa)?;
    if !(0.0..=0.5).contains(&qber) {
        return Err(Error::invalid(format!("qber = {qber} outside [0, 0.5]")));
    }
    if !(r_sift >= 0.0) {
        return Err(Error::invalid(format!("sifted rate {r_sift} must be ≥ 0")));
    }
    let raw = r_sift * (1.0 - (1.0 + kappa) * h2(qber)?);
    Ok(SecretRate {
        raw,
        clamped: raw.max(0.0),
    })
}

/// Largest QBER with a positive secret fraction, by bisection to 1e-10.
pub fn qber_threshold(kappa: f64) -> Result<f64> {
    check_kappa(kappa)?;
    let fraction = |q: f64| 1.0 - (1.0 + kappa) * h2(q).expect("q in [0, 1/2]");
    let (mut lo, mut hi) = (0.0, 0.5);
    while hi - lo > 1e-10 {
        let mid = 0.5 * (lo + hi);
        if fraction(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EsRateInputs {
    pub chi: f64,
    pub eta0: f64,
    pub alpha_d_db: f64,
    pub kappa: f64,
    pub qber: f64,
}

impl EsRateInputs {
    /// Sifted rate and secret rate.
    pub fn evaluate(&self) -> Result<(f64, SecretRate)> {
        let r_sift = sifted_rate(self.chi, self.eta0, self.alpha_d_db)?;
        Ok((r_sift, secret_rate(r_sift, self.qber, self.kappa)?))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecoyInputs {
    pub mu: f64,
    pub nu: f64,
    /// overall channel × detector efficiency
    pub eta_bob: f64,
    /// background yield
    pub y0: f64,
    pub e0: f64,
    pub kappa: f64,
}

impl DecoyInputs {
    pub fn new(mu: f64, nu: f64, eta_bob: f64, y0: f64, kappa: f64) -> Result<Self> {
        let d = DecoyInputs {
            mu,
            nu,
            eta_bob,
            y0,
            e0: BACKGROUND_ERROR_RATE,
            kappa,
        };
        d.validate()?;
        Ok(d)
    }

    /// Inputs for a link of total loss `alpha_d_db`, Bob's detectors of
    /// efficiency `eta0` and `detectors` dark-counting detectors.
    pub fn from_channel(
        mu: f64,
        nu: f64,
        eta0: f64,
        alpha_d_db: f64,
        p_dc: f64,
        detectors: u32,
        kappa: f64,
    ) -> Result<Self> {
        let eta_bob = crate::sources::effective_efficiency(eta0, alpha_d_db)?;
        if !(0.0..1.0).contains(&p_dc) {
            return Err(Error::invalid(format!("dark-count probability {p_dc} outside [0, 1)")));
        }
        Self::new(mu, nu, eta_bob, detectors as f64 * p_dc, kappa)
    }

    pub fn validate(&self) -> Result<()> {
        check_kappa(self.kappa)?;
        if !(self.nu > 0.0 && self.nu < self.mu && self.mu.is_finite()) {
            return Err(Error::invalid(format!(
                "need 0 < nu < mu (mu = {}, nu = {})",
                self.mu, self.nu
            )));
        }
        if !(0.0..=1.0).contains(&self.eta_bob) {
            return Err(Error::invalid(format!("eta_bob = {} outside [0, 1]", self.eta_bob)));
        }
        if !(0.0..=1.0).contains(&self.y0) {
            return Err(Error::invalid(format!("y0 = {} outside [0, 1]", self.y0)));
        }
        if !(0.0..=0.5).contains(&self.e0) {
            return Err(Error::invalid(format!("e0 = {} outside [0, 1/2]", self.e0)));
        }
        Ok(())
    }

    pub fn with_mu(&self, mu: f64) -> Self {
        DecoyInputs { mu, ..*self }
    }
}

/// Every intermediate of the decoy bound chain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecoyReport {
    pub mu: f64,
    pub nu: f64,
    pub q_mu: f64,
    pub e_mu: f64,
    pub q_nu: f64,
    pub y1_lower: f64,
    pub q1_lower: f64,
    pub e1_upper: f64,
    pub rate_raw: f64,
    pub rate: f64,
    /// the single-photon yield bound came out non-positive
    pub y1_nonpositive: bool,
    /// the single-photon error bound exceeded 1/2 and was clamped
    pub e1_clamped: bool,
}

/// Vacuum + weak decoy lower bound on the BB84 key rate per pulse.
pub fn decoy_secret_rate(d: &DecoyInputs) -> Result<DecoyReport> {
    d.validate()?;
    let (mu, nu, y0, e0) = (d.mu, d.nu, d.y0, d.e0);
    let gain = |x: f64| y0 + 1.0 - (-d.eta_bob * x).exp();
    let q_mu = gain(mu);
    let q_nu = gain(nu);
    let e_mu = if q_mu > 0.0 { e0 * y0 / q_mu } else { 0.0 };
    let en_qn = e0 * y0;

    let y1_lower = mu / (mu * nu - nu * nu)
        * (q_nu * nu.exp() - q_mu * mu.exp() * nu * nu / (mu * mu) - (mu * mu - nu * nu) / (mu * mu) * y0);
    let y1_nonpositive = !(y1_lower > 0.0);
    let (q1_lower, mut e1_upper) = if y1_nonpositive {
        (0.0, 0.5)
    } else {
        (
            y1_lower * mu * (-mu).exp(),
            (en_qn * nu.exp() - e0 * y0) / (y1_lower * nu),
        )
    };
    let e1_clamped = e1_upper > 0.5;
    if e1_clamped {
        e1_upper = 0.5;
    }
    let rate_raw = 0.5 * (-q_mu * d.kappa * h2(e_mu)? + q1_lower * (1.0 - h2(e1_upper)?));
    Ok(DecoyReport {
        mu,
        nu,
        q_mu,
        e_mu,
        q_nu,
        y1_lower,
        q1_lower,
        e1_upper,
        rate_raw,
        rate: rate_raw.max(0.0),
        y1_nonpositive,
        e1_clamped,
    })
}

/// Best signal intensity: grid over [0.05, 1] in steps of 0.005 (only
/// `μ > ν`), refined by golden-section search on the unclamped rate.
pub fn optimize_decoy_mu(base: &DecoyInputs) -> Result<DecoyReport> {
    let grid: Vec<f64> = stepped(MU_GRID.0, MU_GRID.1, MU_GRID.2)?
        .into_iter()
        .filter(|&mu| mu > base.nu + 1e-12)
        .collect();
    if grid.is_empty() {
        return Err(Error::invalid(format!("no signal intensity above nu = {}", base.nu)));
    }
    let reports = grid
        .iter()
        .map(|&mu| decoy_secret_rate(&base.with_mu(mu)))
        .collect::<Result<Vec<_>>>()?;
    let raw: Vec<f64> = reports.iter().map(|r| r.rate_raw).collect();
    let best = argmax(&raw).expect("non-empty grid");
    let lo = grid[best.saturating_sub(1)];
    let hi = grid[(best + 1).min(grid.len() - 1)];
    let (mu, value) = try_golden_section_max(
        |mu| Ok(decoy_secret_rate(&base.with_mu(mu))?.rate_raw),
        lo,
        hi,
        MU_TOLERANCE,
    )?;
    if value >= raw[best] {
        decoy_secret_rate(&base.with_mu(mu))
    } else {
        Ok(reports[best])
    }
}
