use std::path::Path;

use serde::{Deserialize, Serialize};
use swapkd::detectors::DetectorConstraint;
use swapkd::fock::TruncationPolicy;
use swapkd::optimize::DarkCountMode;
use swapkd::rates::{DEFAULT_KAPPA, DEFAULT_NU};
use swapkd::search::{linspace, logspace, stepped};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CommandKind {
    Evaluate,
    Sweep,
    Optimize,
    CompareDecoy,
    Crossover,
    Figure,
}

impl CommandKind {
    pub fn name(self) -> &'static str {
        match self {
            CommandKind::Evaluate => "evaluate",
            CommandKind::Sweep => "sweep",
            CommandKind::Optimize => "optimize",
            CommandKind::CompareDecoy => "compare-decoy",
            CommandKind::Crossover => "crossover",
            CommandKind::Figure => "figure",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstraintParams {
    pub a: f64,
    pub b: f64,
}

/// Run parameters as read from a config file and overridden by flags.
/// Axes are explicit value lists.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha_d_db: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub chi: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eta0: Option<Vec<f64>>,
    /// explicit dark-count probability; excludes `constraint`
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p_dc: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub constraint: Option<ConstraintParams>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kappa: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_max: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub convergence_tol: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mu: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub nu: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub background_detectors: Option<u32>,
    /// coarse loss step for range and crossover scans, dB
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha_d_step: Option<f64>,
    /// bisection tolerance for range and crossover, dB
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bisection_tol: Option<f64>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::invalid(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::invalid(format!("config {}: {e}", path.display())))
    }

    /// Fields set in `over` replace those in `self`.
    pub fn overridden_by(self, over: RunConfig) -> RunConfig {
        RunConfig {
            alpha_d_db: over.alpha_d_db.or(self.alpha_d_db),
            chi: over.chi.or(self.chi),
            eta0: over.eta0.or(self.eta0),
            p_dc: over.p_dc.or(self.p_dc),
            constraint: over.constraint.or(self.constraint),
            kappa: over.kappa.or(self.kappa),
            n_max: over.n_max.or(self.n_max),
            convergence_tol: over.convergence_tol.or(self.convergence_tol),
            mu: over.mu.or(self.mu),
            nu: over.nu.or(self.nu),
            background_detectors: over.background_detectors.or(self.background_detectors),
            alpha_d_step: over.alpha_d_step.or(self.alpha_d_step),
            bisection_tol: over.bisection_tol.or(self.bisection_tol),
        }
    }

    pub fn dark_counts(&self) -> Result<DarkCountMode, CliError> {
        match (self.p_dc, self.constraint) {
            (Some(_), Some(_)) => Err(CliError::invalid("give either p_dc or constraint, not both")),
            (Some(p_dc), None) => {
                DarkCountMode::Explicit { p_dc }.p_dc(0.0).map_err(CliError::from)?;
                Ok(DarkCountMode::Explicit { p_dc })
            }
            (None, Some(c)) => {
                DetectorConstraint::new(c.a, c.b)?;
                Ok(DarkCountMode::Constraint { a: c.a, b: c.b })
            }
            (None, None) => Ok(DarkCountMode::constraint(DetectorConstraint::default())),
        }
    }

    pub fn is_constrained(&self) -> bool {
        self.p_dc.is_none()
    }

    pub fn kappa(&self) -> f64 {
        self.kappa.unwrap_or(DEFAULT_KAPPA)
    }

    pub fn nu(&self) -> f64 {
        self.nu.unwrap_or(DEFAULT_NU)
    }

    pub fn background_detectors(&self) -> u32 {
        self.background_detectors.unwrap_or(2)
    }

    pub fn alpha_d_step(&self) -> f64 {
        self.alpha_d_step.unwrap_or(2.5)
    }

    pub fn bisection_tol(&self) -> f64 {
        self.bisection_tol.unwrap_or(0.1)
    }

    pub fn trunc(&self) -> Result<TruncationPolicy, CliError> {
        let d = TruncationPolicy::default();
        Ok(TruncationPolicy::new(
            self.n_max.unwrap_or(d.n_max),
            self.convergence_tol.unwrap_or(d.convergence_tol),
        )?)
    }

    pub fn axis(&self, name: &str, values: &Option<Vec<f64>>) -> Result<Vec<f64>, CliError> {
        match values {
            Some(v) if !v.is_empty() => {
                if let Some(x) = v.iter().find(|x| !x.is_finite()) {
                    return Err(CliError::invalid(format!("{name}: non-finite value {x}")));
                }
                Ok(v.clone())
            }
            Some(_) => Err(CliError::invalid(format!("{name}: empty axis"))),
            None => Err(CliError::invalid(format!("{name} is required for this command"))),
        }
    }

    pub fn single(&self, name: &str, values: &Option<Vec<f64>>) -> Result<f64, CliError> {
        let v = self.axis(name, values)?;
        if v.len() != 1 {
            return Err(CliError::invalid(format!(
                "{name}: expected one value, got {}",
                v.len()
            )));
        }
        Ok(v[0])
    }

    /// Dark-count probability at one efficiency, whichever mode is set.
    pub fn p_dc_at(&self, eta0: f64) -> Result<f64, CliError> {
        Ok(self.dark_counts()?.p_dc(eta0)?)
    }
}

/// Axis syntax: `v`, `v1,v2,…`, `lo:hi:step` (inclusive) or
/// `log:lo:hi:n` / `lin:lo:hi:n`.
pub fn parse_axis(text: &str) -> Result<Vec<f64>, String> {
    let num = |s: &str| s.trim().parse::<f64>().map_err(|_| format!("not a number: {s:?}"));
    let count = |s: &str| s.trim().parse::<usize>().map_err(|_| format!("not a count: {s:?}"));
    let parts: Vec<&str> = text.split(':').collect();
    let values = match parts.as_slice() {
        ["log", lo, hi, n] => {
            let (lo, hi) = (num(lo)?, num(hi)?);
            if !(lo > 0.0 && hi > 0.0) {
                return Err("log axis bounds must be positive".into());
            }
            logspace(lo, hi, count(n)?)
        }
        ["lin", lo, hi, n] => linspace(num(lo)?, num(hi)?, count(n)?),
        [lo, hi, step] => stepped(num(lo)?, num(hi)?, num(step)?).map_err(|e| e.to_string())?,
        [list] => list.split(',').map(num).collect::<Result<_, _>>()?,
        _ => return Err(format!("cannot parse axis {text:?}")),
    };
    if values.is_empty() {
        return Err(format!("axis {text:?} is empty"));
    }
    Ok(values)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn axis_syntax() {
        assert_eq!(parse_axis("10").unwrap(), vec![10.0]);
        assert_eq!(parse_axis("0,5,10").unwrap(), vec![0.0, 5.0, 10.0]);
        assert_eq!(parse_axis("0:50:2.5").unwrap().len(), 21);
        assert_eq!(parse_axis("log:1e-4:1e-2:3").unwrap().len(), 3);
        assert_eq!(parse_axis("lin:0:1:5").unwrap()[1], 0.25);
        assert!(parse_axis("1:0:1").is_err());
        assert!(parse_axis("a,b").is_err());
        assert!(parse_axis("log:0:1:3").is_err());
        assert!(parse_axis("lin:0:1:0").is_err());
    }

    #[test]
    fn flags_override_file() {
        let file = RunConfig {
            chi: Some(vec![0.1]),
            kappa: Some(1.0),
            ..Default::default()
        };
        let flags = RunConfig {
            chi: Some(vec![0.2]),
            ..Default::default()
        };
        let merged = file.overridden_by(flags);
        assert_eq!(merged.chi, Some(vec![0.2]));
        assert_eq!(merged.kappa, Some(1.0));
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(serde_json::from_str::<RunConfig>(r#"{"chi": [0.1], "colour": 3}"#).is_err());
        assert!(serde_json::from_str::<RunConfig>(r#"{"constraint": {"a": 1e-6, "b": 17, "c": 0}}"#).is_err());
    }

    #[test]
    fn dark_count_modes() {
        let both = RunConfig {
            p_dc: Some(1e-6),
            constraint: Some(ConstraintParams { a: 6.1e-7, b: 17.0 }),
            ..Default::default()
        };
        assert!(both.dark_counts().is_err());
        assert!(matches!(
            RunConfig::default().dark_counts().unwrap(),
            DarkCountMode::Constraint { .. }
        ));
        let bad = RunConfig {
            p_dc: Some(1.5),
            ..Default::default()
        };
        assert!(bad.dark_counts().is_err());
    }
}
