//! Truncated multimode Fock-space engine.
//!
//! A [`ModeRegister`] holds a pure joint state as a dense amplitude tensor
//! over a fixed, ordered list of bosonic modes, each truncated at `n_max`
//! photons. Occupations are enumerated row-major in label order: the first
//! label is the most significant digit.
//!
//! Passive two-mode unitaries use the convention
//!
//! ```text
//! a1† -> cos θ a1† + e^{iφ} sin θ a2†
//! a2† -> -e^{-iφ} sin θ a1† + cos θ a2†
//! ```
//!
//! so the balanced beamsplitter is `θ = π/4, φ = 0` and acts as
//! `b† -> (b† + c†)/√2`, `c† -> (c† - b†)/√2`. All observables computed in
//! this crate come from photon-number-diagonal POVMs and do not depend on
//! that choice.
//!
//! Measuring part of a register produces a [`ConditionalState`]: an
//! unnormalised density operator on the surviving modes whose trace is the
//! probability of the recorded outcome.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type C64 = Complex64;

const ZERO: C64 = C64::new(0.0, 0.0);
const ONE: C64 = C64::new(1.0, 0.0);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruncationPolicy {
    pub n_max: usize,
    pub convergence_tol: f64,
}

impl Default for TruncationPolicy {
    fn default() -> Self {
        TruncationPolicy {
            n_max: 4,
            convergence_tol: 1e-4,
        }
    }
}

impl TruncationPolicy {
    pub fn new(n_max: usize, convergence_tol: f64) -> Result<Self> {
        let policy = TruncationPolicy { n_max, convergence_tol };
        policy.validate()?;
        Ok(policy)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_max < 1 {
            return Err(Error::invalid("n_max must be at least 1"));
        }
        if !(self.convergence_tol > 0.0 && self.convergence_tol.is_finite()) {
            return Err(Error::invalid("convergence_tol must be positive and finite"));
        }
        Ok(())
    }

    /// Local dimension of one mode.
    pub fn dim(&self) -> usize {
        self.n_max + 1
    }

    pub fn escalated(&self) -> Self {
        TruncationPolicy {
            n_max: self.n_max + 1,
            ..*self
        }
    }
}

fn check_labels(labels: &[String]) -> Result<()> {
    if labels.is_empty() {
        return Err(Error::invalid("mode list is empty"));
    }
    for (i, l) in labels.iter().enumerate() {
        if labels[..i].contains(l) {
            return Err(Error::invalid(format!("duplicate mode label `{l}`")));
        }
    }
    Ok(())
}

fn position(labels: &[String], label: &str) -> Result<usize> {
    labels
        .iter()
        .position(|l| l == label)
        .ok_or_else(|| Error::invalid(format!("unknown mode `{label}`")))
}

/// Decodes a row-major index into per-mode occupations.
pub fn occupation_of(mut index: usize, modes: usize, dim: usize) -> Vec<usize> {
    let mut occ = vec![0; modes];
    for slot in occ.iter_mut().rev() {
        *slot = index % dim;
        index /= dim;
    }
    occ
}

pub fn index_of(occupation: &[usize], dim: usize) -> usize {
    occupation.iter().fold(0, |acc, &n| acc * dim + n)
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|k| k as f64).product()
}

fn binomial(n: usize, k: usize) -> f64 {
    factorial(n) / (factorial(k) * factorial(n - k))
}

/// Matrix of a two-mode mixer restricted to `total` photons:
/// element `[j, k]` is `<j, total-j| U |k, total-k>`.
///
/// The block is exact; no output occupation is truncated.
pub fn mixer_block(total: usize, theta: f64, phase: f64) -> DMatrix<C64> {
    let (s, c) = theta.sin_cos();
    let e_plus = C64::from_polar(s, phase);
    let e_minus = -C64::from_polar(s, -phase);
    let mut block = DMatrix::from_element(total + 1, total + 1, ZERO);
    for k in 0..=total {
        let rest = total - k;
        // expand (c x + e+ y)^k (e- x + c y)^rest
        for p in 0..=k {
            let left = e_plus.powu((k - p) as u32) * (binomial(k, p) * c.powi(p as i32));
            for q in 0..=rest {
                let right = e_minus.powu(q as u32) * (binomial(rest, q) * c.powi((rest - q) as i32));
                let j = p + q;
                let bose = (factorial(j) * factorial(total - j) / (factorial(k) * factorial(rest))).sqrt();
                block[(j, k)] += left * right * bose;
            }
        }
    }
    block
}

/// POVM element `U† W U` on the input modes of a two-mode mixer followed by
/// detectors with joint weight `weight(n1, n2)` on the outputs.
///
/// Output occupations are never truncated, so the element is exact on the
/// `(n_max+1)²` input basis (index `n1 * (n_max+1) + n2`).
pub fn mixed_diagonal_povm_element(
    n_max: usize,
    theta: f64,
    phase: f64,
    weight: impl Fn(usize, usize) -> f64,
) -> DMatrix<C64> {
    let dim = n_max + 1;
    let mut element = DMatrix::from_element(dim * dim, dim * dim, ZERO);
    for total in 0..=2 * n_max {
        let block = mixer_block(total, theta, phase);
        let w: Vec<f64> = (0..=total).map(|j| weight(j, total - j)).collect();
        let lo = total.saturating_sub(n_max);
        let hi = total.min(n_max);
        for k in lo..=hi {
            for kp in lo..=hi {
                let mut acc = ZERO;
                for (j, wj) in w.iter().enumerate() {
                    if *wj != 0.0 {
                        acc += block[(j, k)].conj() * block[(j, kp)] * *wj;
                    }
                }
                element[(k * dim + (total - k), kp * dim + (total - kp))] = acc;
            }
        }
    }
    element
}

/// Pure state of a set of truncated bosonic modes.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeRegister {
    labels: Vec<String>,
    trunc: TruncationPolicy,
    amplitudes: Vec<C64>,
    leakage: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AmplitudeEntry {
    pub occupation: Vec<usize>,
    pub re: f64,
    pub im: f64,
}

/// JSON debug dump of a register; lists entries with |amplitude| > 1e-14.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegisterDump {
    pub labels: Vec<String>,
    pub n_max: usize,
    pub entries: Vec<AmplitudeEntry>,
}

impl ModeRegister {
    pub fn vacuum<S: AsRef<str>>(labels: &[S], trunc: TruncationPolicy) -> Result<Self> {
        Self::from_fn(
            labels,
            trunc,
            |occ| if occ.iter().all(|&n| n == 0) { ONE } else { ZERO },
        )
    }

    /// Builds a register from an amplitude function of the occupation vector.
    pub fn from_fn<S: AsRef<str>>(
        labels: &[S],
        trunc: TruncationPolicy,
        amplitude: impl Fn(&[usize]) -> C64,
    ) -> Result<Self> {
        trunc.validate()?;
        let labels: Vec<String> = labels.iter().map(|s| s.as_ref().to_string()).collect();
        check_labels(&labels)?;
        let dim = trunc.dim();
        let size = dim
            .checked_pow(labels.len() as u32)
            .ok_or_else(|| Error::invalid("register too large"))?;
        let amplitudes = (0..size)
            .map(|i| amplitude(&occupation_of(i, labels.len(), dim)))
            .collect();
        Ok(ModeRegister {
            labels,
            trunc,
            amplitudes,
            leakage: 0.0,
        })
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn n_max(&self) -> usize {
        self.trunc.n_max
    }

    pub fn truncation(&self) -> TruncationPolicy {
        self.trunc
    }

    pub fn amplitudes(&self) -> &[C64] {
        &self.amplitudes
    }

    /// Total weight dropped by truncation so far.
    pub fn leakage(&self) -> f64 {
        self.leakage
    }

    /// Records weight known to be missing from the truncated amplitudes.
    pub fn with_leakage(mut self, leakage: f64) -> Self {
        self.leakage = leakage;
        self
    }

    pub fn mode_index(&self, label: &str) -> Result<usize> {
        position(&self.labels, label)
    }

    pub fn amplitude(&self, occupation: &[usize]) -> C64 {
        assert_eq!(occupation.len(), self.labels.len(), "occupation length mismatch");
        if occupation.iter().any(|&n| n > self.trunc.n_max) {
            return ZERO;
        }
        self.amplitudes[index_of(occupation, self.trunc.dim())]
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amplitudes.iter().map(|a| a.norm_sqr()).sum()
    }

    /// Mean photon number of one mode.
    pub fn mean_occupation(&self, label: &str) -> Result<f64> {
        let pos = self.mode_index(label)?;
        let dim = self.trunc.dim();
        let stride = dim.pow((self.labels.len() - 1 - pos) as u32);
        Ok(self
            .amplitudes
            .iter()
            .enumerate()
            .map(|(i, a)| ((i / stride) % dim) as f64 * a.norm_sqr())
            .sum())
    }

    /// Tensor product; `self`'s modes come first.
    pub fn tensor(&self, other: &ModeRegister) -> Result<Self> {
        if self.trunc.n_max != other.trunc.n_max {
            return Err(Error::invalid("tensor product of registers with different n_max"));
        }
        let mut labels = self.labels.clone();
        labels.extend(other.labels.iter().cloned());
        check_labels(&labels)?;
        let mut amplitudes = Vec::with_capacity(self.amplitudes.len() * other.amplitudes.len());
        for a in &self.amplitudes {
            amplitudes.extend(other.amplitudes.iter().map(|b| a * b));
        }
        Ok(ModeRegister {
            labels,
            trunc: self.trunc,
            amplitudes,
            leakage: self.leakage + other.leakage,
        })
    }

    /// Same state with the modes listed in `order`.
    pub fn permuted<S: AsRef<str>>(&self, order: &[S]) -> Result<Self> {
        if order.len() != self.labels.len() {
            return Err(Error::invalid("permutation must list every mode exactly once"));
        }
        let positions = order
            .iter()
            .map(|l| self.mode_index(l.as_ref()))
            .collect::<Result<Vec<_>>>()?;
        let labels: Vec<String> = order.iter().map(|s| s.as_ref().to_string()).collect();
        check_labels(&labels)?;
        let dim = self.trunc.dim();
        let k = labels.len();
        let mut amplitudes = vec![ZERO; self.amplitudes.len()];
        let mut old = vec![0; k];
        for (i, slot) in amplitudes.iter_mut().enumerate() {
            let occ = occupation_of(i, k, dim);
            for (new_pos, &old_pos) in positions.iter().enumerate() {
                old[old_pos] = occ[new_pos];
            }
            *slot = self.amplitudes[index_of(&old, dim)];
        }
        Ok(ModeRegister {
            labels,
            trunc: self.trunc,
            amplitudes,
            leakage: self.leakage,
        })
    }

    /// Passive two-mode unitary on `m1`, `m2` (see module docs for the
    /// convention). Occupations above `n_max` are dropped; if the dropped
    /// weight exceeds the truncation tolerance the call fails.
    pub fn apply_two_mode_mixer(&self, m1: &str, m2: &str, theta: f64, phase: f64) -> Result<Self> {
        let p1 = self.mode_index(m1)?;
        let p2 = self.mode_index(m2)?;
        if p1 == p2 {
            return Err(Error::invalid("mixer needs two distinct modes"));
        }
        let dim = self.trunc.dim();
        let n_max = self.trunc.n_max;
        let k = self.labels.len();
        let s1 = dim.pow((k - 1 - p1) as u32);
        let s2 = dim.pow((k - 1 - p2) as u32);
        let blocks: Vec<DMatrix<C64>> = (0..=2 * n_max).map(|n| mixer_block(n, theta, phase)).collect();

        let mut out = vec![ZERO; self.amplitudes.len()];
        let mut dropped = 0.0;
        let mut input = vec![ZERO; 2 * n_max + 1];
        for base in 0..self.amplitudes.len() {
            if (base / s1) % dim != 0 || (base / s2) % dim != 0 {
                continue;
            }
            for (total, block) in blocks.iter().enumerate() {
                let lo = total.saturating_sub(n_max);
                let hi = total.min(n_max);
                let mut any = false;
                for n1 in lo..=hi {
                    input[n1] = self.amplitudes[base + n1 * s1 + (total - n1) * s2];
                    any |= input[n1] != ZERO;
                }
                if !any {
                    continue;
                }
                for j in 0..=total {
                    let mut acc = ZERO;
                    for n1 in lo..=hi {
                        acc += block[(j, n1)] * input[n1];
                    }
                    if j <= n_max && total - j <= n_max {
                        out[base + j * s1 + (total - j) * s2] = acc;
                    } else {
                        dropped += acc.norm_sqr();
                    }
                }
            }
        }
        if dropped > self.trunc.convergence_tol {
            return Err(Error::Truncation {
                dropped,
                tolerance: self.trunc.convergence_tol,
            });
        }
        Ok(ModeRegister {
            labels: self.labels.clone(),
            trunc: self.trunc,
            amplitudes: out,
            leakage: self.leakage + dropped,
        })
    }

    /// Rotation of the (H, V) polarization pair of one spatial mode.
    pub fn apply_polarization_rotation(&self, h: &str, v: &str, theta: f64) -> Result<Self> {
        self.apply_two_mode_mixer(h, v, theta, 0.0)
    }

    /// Phase shift `e^{i φ n}` on one mode.
    pub fn apply_phase(&self, mode: &str, phi: f64) -> Result<Self> {
        let pos = self.mode_index(mode)?;
        let dim = self.trunc.dim();
        let stride = dim.pow((self.labels.len() - 1 - pos) as u32);
        let mut next = self.clone();
        for (i, a) in next.amplitudes.iter_mut().enumerate() {
            let n = (i / stride) % dim;
            *a *= C64::from_polar(1.0, phi * n as f64);
        }
        Ok(next)
    }

    pub fn debug_dump(&self) -> RegisterDump {
        let k = self.labels.len();
        let dim = self.trunc.dim();
        let entries = self
            .amplitudes
            .iter()
            .enumerate()
            .filter(|(_, a)| a.norm() > 1e-14)
            .map(|(i, a)| AmplitudeEntry {
                occupation: occupation_of(i, k, dim),
                re: a.re,
                im: a.im,
            })
            .collect();
        RegisterDump {
            labels: self.labels.clone(),
            n_max: self.trunc.n_max,
            entries,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.debug_dump()).expect("register dump serializes")
    }
}

/// Index bookkeeping for splitting a mode list into a selected subset and
/// the rest. Sub-indices are row-major in the order the subset was given
/// (selected) and in the original order (rest).
struct ModeSplit {
    selected: Vec<usize>,
    rest: Vec<usize>,
    /// per full index: (selected sub-index, rest sub-index)
    map: Vec<(usize, usize)>,
}

impl ModeSplit {
    fn new<S: AsRef<str>>(labels: &[String], selected: &[S], dim: usize) -> Result<Self> {
        let selected = selected
            .iter()
            .map(|l| position(labels, l.as_ref()))
            .collect::<Result<Vec<_>>>()?;
        for (i, p) in selected.iter().enumerate() {
            if selected[..i].contains(p) {
                return Err(Error::invalid("mode listed twice"));
            }
        }
        let rest: Vec<usize> = (0..labels.len()).filter(|p| !selected.contains(p)).collect();
        let k = labels.len();
        let size = dim.pow(k as u32);
        // sub-index weight of each full-register mode
        let mut weight = vec![(0, 0); k];
        for (n, &p) in selected.iter().enumerate() {
            weight[p].0 = dim.pow((selected.len() - 1 - n) as u32);
        }
        for (n, &p) in rest.iter().enumerate() {
            weight[p].1 = dim.pow((rest.len() - 1 - n) as u32);
        }
        let mut map = Vec::with_capacity(size);
        let mut occ = vec![0; k];
        let (mut s, mut r) = (0, 0);
        for _ in 0..size {
            map.push((s, r));
            for p in (0..k).rev() {
                if occ[p] + 1 < dim {
                    occ[p] += 1;
                    s += weight[p].0;
                    r += weight[p].1;
                    break;
                }
                s -= occ[p] * weight[p].0;
                r -= occ[p] * weight[p].1;
                occ[p] = 0;
            }
        }
        Ok(ModeSplit { selected, rest, map })
    }

    fn rest_labels(&self, labels: &[String]) -> Vec<String> {
        self.rest.iter().map(|&p| labels[p].clone()).collect()
    }
}

/// Register decomposed by the occupation of a measured subset:
/// `|ψ> = Σ_n |n>_measured ⊗ |ψ_n>_rest`. Built once, it can be conditioned
/// on any number of diagonal POVM elements.
#[derive(Debug, Clone)]
pub struct MeasurementSplit {
    measured: Vec<String>,
    surviving: Vec<String>,
    n_max: usize,
    /// sparse ψ_n per measured occupation index
    branches: Vec<Vec<(usize, C64)>>,
}

impl MeasurementSplit {
    pub fn new<S: AsRef<str>>(state: &ModeRegister, measured: &[S]) -> Result<Self> {
        if measured.is_empty() {
            return Err(Error::invalid("no measured modes"));
        }
        let dim = state.trunc.dim();
        let split = ModeSplit::new(&state.labels, measured, dim)?;
        if split.rest.is_empty() {
            return Err(Error::invalid("measuring every mode leaves no surviving state"));
        }
        let mut branches = vec![Vec::new(); dim.pow(split.selected.len() as u32)];
        for (i, a) in state.amplitudes.iter().enumerate() {
            if *a != ZERO {
                let (s, r) = split.map[i];
                branches[s].push((r, *a));
            }
        }
        Ok(MeasurementSplit {
            measured: measured.iter().map(|s| s.as_ref().to_string()).collect(),
            surviving: split.rest_labels(&state.labels),
            n_max: state.trunc.n_max,
            branches,
        })
    }

    pub fn surviving_labels(&self) -> &[String] {
        &self.surviving
    }

    /// Probability of each measured occupation, in row-major order.
    pub fn occupation_probabilities(&self) -> Vec<f64> {
        self.branches
            .iter()
            .map(|b| b.iter().map(|(_, a)| a.norm_sqr()).sum())
            .collect()
    }

    /// `ρ = Σ_n w(n) |ψ_n><ψ_n|` on the surviving modes.
    pub fn condition(&self, weight: impl Fn(&[usize]) -> f64) -> Result<ConditionalState> {
        let dim = self.n_max + 1;
        let rest_dim = dim.pow(self.surviving.len() as u32);
        let mut rho = DMatrix::from_element(rest_dim, rest_dim, ZERO);
        for (s, branch) in self.branches.iter().enumerate() {
            let occ = occupation_of(s, self.measured.len(), dim);
            let w = weight(&occ);
            if !(0.0..=1.0).contains(&w) {
                return Err(Error::invalid(format!("POVM weight {w} at {occ:?} is outside [0, 1]")));
            }
            if w == 0.0 {
                continue;
            }
            for &(r, a) in branch {
                let wa = a * w;
                for &(rp, b) in branch {
                    rho[(r, rp)] += wa * b.conj();
                }
            }
        }
        ConditionalState::from_density(&self.surviving, self.n_max, rho)
    }
}

/// Conditions a pure register on a photon-number-diagonal POVM element of
/// the `measured` modes.
pub fn condition_on_diagonal_povm<S: AsRef<str>>(
    state: &ModeRegister,
    measured: &[S],
    weight: impl Fn(&[usize]) -> f64,
) -> Result<ConditionalState> {
    MeasurementSplit::new(state, measured)?.condition(weight)
}

/// Unnormalised density operator left after a recorded outcome, with the
/// probability of that outcome as its trace.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalState {
    labels: Vec<String>,
    n_max: usize,
    rho: DMatrix<C64>,
    herald_probability: f64,
}

impl ConditionalState {
    pub fn from_density<S: AsRef<str>>(labels: &[S], n_max: usize, rho: DMatrix<C64>) -> Result<Self> {
        let labels: Vec<String> = labels.iter().map(|s| s.as_ref().to_string()).collect();
        if !labels.is_empty() {
            check_labels(&labels)?;
        }
        let dim = (n_max + 1).pow(labels.len() as u32);
        if rho.nrows() != dim || rho.ncols() != dim {
            return Err(Error::invalid(format!(
                "density matrix is {}x{}, expected {dim}x{dim}",
                rho.nrows(),
                rho.ncols()
            )));
        }
        let herald_probability = rho.trace().re;
        Ok(ConditionalState {
            labels,
            n_max,
            rho,
            herald_probability,
        })
    }

    /// `|ψ><ψ|` of a register.
    pub fn from_pure(state: &ModeRegister) -> Self {
        let v = nalgebra::DVector::from_column_slice(&state.amplitudes);
        let rho = &v * v.adjoint();
        let herald_probability = rho.trace().re;
        ConditionalState {
            labels: state.labels.clone(),
            n_max: state.trunc.n_max,
            rho,
            herald_probability,
        }
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn n_max(&self) -> usize {
        self.n_max
    }

    pub fn rho(&self) -> &DMatrix<C64> {
        &self.rho
    }

    pub fn herald_probability(&self) -> f64 {
        self.herald_probability
    }

    pub fn normalized_rho(&self) -> Result<DMatrix<C64>> {
        if self.herald_probability <= 0.0 {
            return Err(Error::UndefinedState("herald probability is zero".into()));
        }
        Ok(&self.rho / C64::new(self.herald_probability, 0.0))
    }

    /// `<target| ρ/tr ρ |target>`.
    pub fn fidelity_with_pure(&self, target: &ModeRegister) -> Result<f64> {
        if target.labels != self.labels || target.trunc.n_max != self.n_max {
            return Err(Error::invalid(
                "target register does not match the conditional state's modes",
            ));
        }
        let rho = self.normalized_rho()?;
        let v = nalgebra::DVector::from_column_slice(&target.amplitudes);
        let norm = v.norm_squared();
        if (norm - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!("target is not normalized (norm² = {norm})")));
        }
        Ok((v.adjoint() * rho * &v)[(0, 0)].re)
    }

    pub fn max_hermiticity_defect(&self) -> f64 {
        let d = &self.rho - self.rho.adjoint();
        d.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    pub fn min_eigenvalue(&self) -> f64 {
        let h = (&self.rho + self.rho.adjoint()) * C64::new(0.5, 0.0);
        // The eigensolver can return -inf on rows that are exactly zero, so
        // solve on the support only; each dropped row is a zero eigenvalue.
        let n = h.nrows();
        let support: Vec<usize> = (0..n).filter(|&i| h.row(i).iter().any(|z| *z != ZERO)).collect();
        let sub = DMatrix::from_fn(support.len(), support.len(), |i, j| h[(support[i], support[j])]);
        let floor = if support.len() < n { 0.0 } else { f64::INFINITY };
        sub.symmetric_eigenvalues().iter().copied().fold(floor, f64::min)
    }

    /// `Tr[ρ op]` for an operator on all modes.
    pub fn expectation(&self, op: &DMatrix<C64>) -> Result<C64> {
        if op.shape() != self.rho.shape() {
            return Err(Error::invalid("operator shape does not match the state"));
        }
        Ok((&self.rho * op).trace())
    }

    /// `Tr_S[(E_S ⊗ 1) ρ]`: the unnormalised state of the remaining modes
    /// given the outcome with POVM element `element` on `modes` (basis
    /// row-major in the order `modes` is given).
    pub fn condition_on_operator<S: AsRef<str>>(&self, modes: &[S], element: &DMatrix<C64>) -> Result<Self> {
        Ok(self
            .condition_on_operators(modes, std::slice::from_ref(element))?
            .remove(0))
    }

    /// [`condition_on_operator`](Self::condition_on_operator) for several
    /// elements of the same modes, sharing one pass over `ρ`.
    pub fn condition_on_operators<S: AsRef<str>>(&self, modes: &[S], elements: &[DMatrix<C64>]) -> Result<Vec<Self>> {
        let dim = self.n_max + 1;
        let split = ModeSplit::new(&self.labels, modes, dim)?;
        let sub = dim.pow(split.selected.len() as u32);
        if elements.iter().any(|e| e.shape() != (sub, sub)) {
            return Err(Error::invalid(format!("element must be {sub}x{sub}")));
        }
        let n = self.rho.nrows();
        let mut entries = Vec::new();
        for j in 0..n {
            for (i, &v) in self.rho.column(j).iter().enumerate() {
                if v != ZERO {
                    entries.push((i, j, v));
                }
            }
        }
        let rest = dim.pow(split.rest.len() as u32);
        let labels = split.rest_labels(&self.labels);
        Ok(elements
            .iter()
            .map(|element| {
                let mut out = DMatrix::from_element(rest, rest, ZERO);
                for &(i, j, v) in &entries {
                    let (sp, r) = split.map[i];
                    let (s, rp) = split.map[j];
                    let e = element[(s, sp)];
                    if e != ZERO {
                        out[(r, rp)] += e * v;
                    }
                }
                let herald_probability = out.trace().re;
                ConditionalState {
                    labels: labels.clone(),
                    n_max: self.n_max,
                    rho: out,
                    herald_probability,
                }
            })
            .collect())
    }

    /// Conjugation by the phase shift `e^{i φ n}` on one mode.
    pub fn apply_phase(&self, mode: &str, phi: f64) -> Result<Self> {
        let pos = position(&self.labels, mode)?;
        let dim = self.n_max + 1;
        let stride = dim.pow((self.labels.len() - 1 - pos) as u32);
        let mut next = self.clone();
        let n = self.rho.nrows();
        let phase: Vec<C64> = (0..n)
            .map(|i| C64::from_polar(1.0, phi * ((i / stride) % dim) as f64))
            .collect();
        for j in 0..n {
            let back = phase[j].conj();
            for i in 0..n {
                next.rho[(i, j)] *= phase[i] * back;
            }
        }
        Ok(next)
    }

    /// Product state; `self`'s modes come first.
    pub fn tensor(&self, other: &ConditionalState) -> Result<Self> {
        if self.n_max != other.n_max {
            return Err(Error::invalid("tensor product of states with different n_max"));
        }
        let mut labels = self.labels.clone();
        labels.extend(other.labels.iter().cloned());
        check_labels(&labels)?;
        let rho = self.rho.kronecker(&other.rho);
        Ok(ConditionalState {
            labels,
            n_max: self.n_max,
            rho,
            herald_probability: self.herald_probability * other.herald_probability,
        })
    }

    pub fn permuted<S: AsRef<str>>(&self, order: &[S]) -> Result<Self> {
        if order.len() != self.labels.len() {
            return Err(Error::invalid("permutation must list every mode exactly once"));
        }
        let dim = self.n_max + 1;
        let split = ModeSplit::new(&self.labels, order, dim)?;
        // with every mode selected, the selected sub-index is the new index
        let n = self.rho.nrows();
        let mut rho = DMatrix::from_element(n, n, ZERO);
        for j in 0..n {
            for i in 0..n {
                rho[(split.map[i].0, split.map[j].0)] = self.rho[(i, j)];
            }
        }
        Ok(ConditionalState {
            labels: order.iter().map(|s| s.as_ref().to_string()).collect(),
            n_max: self.n_max,
            rho,
            herald_probability: self.herald_probability,
        })
    }

    /// `P ρ P` for the projector onto occupations accepted by `keep`.
    pub fn restricted(&self, keep: impl Fn(&[usize]) -> bool) -> Self {
        let dim = self.n_max + 1;
        let k = self.labels.len();
        let kept: Vec<bool> = (0..self.rho.nrows()).map(|i| keep(&occupation_of(i, k, dim))).collect();
        let mut rho = self.rho.clone();
        for j in 0..rho.ncols() {
            for i in 0..rho.nrows() {
                if !(kept[i] && kept[j]) {
                    rho[(i, j)] = ZERO;
                }
            }
        }
        let herald_probability = rho.trace().re;
        ConditionalState {
            labels: self.labels.clone(),
            n_max: self.n_max,
            rho,
            herald_probability,
        }
    }

    /// Adds another unnormalised state on the same modes.
    pub fn accumulate(&mut self, other: &ConditionalState) -> Result<()> {
        if other.labels != self.labels || other.n_max != self.n_max {
            return Err(Error::invalid("cannot add states on different modes"));
        }
        self.rho += &other.rho;
        self.herald_probability = self.rho.trace().re;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use std::f64::consts::{FRAC_1_SQRT_2, FRAC_PI_2, FRAC_PI_4};

    fn trunc(n_max: usize) -> TruncationPolicy {
        TruncationPolicy::new(n_max, 1e-10).unwrap()
    }

    fn fock(labels: &[&str], n_max: usize, occ: &[usize]) -> ModeRegister {
        let target = occ.to_vec();
        ModeRegister::from_fn(
            labels,
            trunc(n_max),
            |o| if o == target.as_slice() { ONE } else { ZERO },
        )
        .unwrap()
    }

    #[test]
    fn vacuum_has_unit_amplitude_at_zero() {
        let v = ModeRegister::vacuum(&["aH"], trunc(2)).unwrap();
        assert_eq!(v.amplitudes(), &[ONE, ZERO, ZERO]);
        let v2 = ModeRegister::vacuum(&["aH", "aV"], trunc(1)).unwrap();
        assert_eq!(v2.amplitude(&[0, 0]), ONE);
        assert_abs_diff_eq!(v2.norm_sqr(), 1.0);
    }

    #[test]
    fn duplicate_or_empty_labels_rejected() {
        assert!(matches!(
            ModeRegister::vacuum(&["aH", "aH"], trunc(2)),
            Err(Error::InvalidArgument(_))
        ));
        let none: [&str; 0] = [];
        assert!(ModeRegister::vacuum(&none, trunc(2)).is_err());
        assert!(TruncationPolicy::new(0, 1e-4).is_err());
    }

    #[test]
    fn single_photon_splits_evenly() {
        let s = fock(&["b", "c"], 2, &[1, 0])
            .apply_two_mode_mixer("b", "c", FRAC_PI_4, 0.0)
            .unwrap();
        assert_abs_diff_eq!(s.amplitude(&[1, 0]).norm(), FRAC_1_SQRT_2, epsilon = 1e-14);
        assert_abs_diff_eq!(s.amplitude(&[0, 1]).norm(), FRAC_1_SQRT_2, epsilon = 1e-14);
    }

    #[test]
    fn hong_ou_mandel_dip() {
        let s = fock(&["b", "c"], 2, &[1, 1])
            .apply_two_mode_mixer("b", "c", FRAC_PI_4, 0.0)
            .unwrap();
        assert_abs_diff_eq!(s.amplitude(&[1, 1]).norm(), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(s.amplitude(&[2, 0]).norm_sqr(), 0.5, epsilon = 1e-14);
        assert_abs_diff_eq!(s.amplitude(&[0, 2]).norm_sqr(), 0.5, epsilon = 1e-14);
    }

    #[test]
    fn zero_angle_is_identity() {
        let s = fock(&["b", "c", "x"], 2, &[2, 1, 1]);
        assert_eq!(
            s.apply_two_mode_mixer("b", "c", 0.0, 0.7).unwrap().amplitudes(),
            s.amplitudes()
        );
    }

    #[test]
    fn mixer_overflow_is_an_error() {
        // |1,1> with n_max = 1 bunches entirely out of the truncated space
        let s = fock(&["b", "c"], 1, &[1, 1]);
        assert!(matches!(
            s.apply_two_mode_mixer("b", "c", FRAC_PI_4, 0.0),
            Err(Error::Truncation { .. })
        ));
        assert!(s.apply_two_mode_mixer("b", "zz", 0.1, 0.0).is_err());
        assert!(s.apply_two_mode_mixer("b", "b", 0.1, 0.0).is_err());
    }

    #[test]
    fn polarization_rotation_swaps_at_half_turn() {
        let s = fock(&["aH", "aV"], 1, &[1, 0]);
        let r = s.apply_polarization_rotation("aH", "aV", FRAC_PI_2).unwrap();
        assert_abs_diff_eq!(r.amplitude(&[0, 1]).norm(), 1.0, epsilon = 1e-14);
        let q = s.apply_polarization_rotation("aH", "aV", FRAC_PI_4).unwrap();
        assert_abs_diff_eq!(q.amplitude(&[1, 0]).norm_sqr(), 0.5, epsilon = 1e-14);
        assert_abs_diff_eq!(q.amplitude(&[0, 1]).norm_sqr(), 0.5, epsilon = 1e-14);
        assert_eq!(s.apply_polarization_rotation("aH", "aV", 0.0).unwrap(), s);
    }

    #[test]
    fn two_balanced_mixers_make_a_swap() {
        let s = ModeRegister::from_fn(&["b", "c", "x"], trunc(3), |o| {
            C64::new((o[0] + 2 * o[1]) as f64 * 0.1, o[2] as f64 * 0.05)
        })
        .unwrap();
        // keep the total photon number ≤ 3 in (b, c) so nothing is truncated
        let s = ModeRegister::from_fn(&["b", "c", "x"], trunc(3), |o| {
            if o[0] + o[1] <= 3 {
                s.amplitude(o)
            } else {
                ZERO
            }
        })
        .unwrap();
        let twice = s
            .apply_two_mode_mixer("b", "c", FRAC_PI_4, 0.3)
            .unwrap()
            .apply_two_mode_mixer("b", "c", FRAC_PI_4, 0.3)
            .unwrap();
        let once = s.apply_two_mode_mixer("b", "c", FRAC_PI_2, 0.3).unwrap();
        for (a, b) in twice.amplitudes().iter().zip(once.amplitudes()) {
            assert_abs_diff_eq!((a - b).norm(), 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn trace_out_and_trivial_weights() {
        let s = ModeRegister::from_fn(&["a", "b"], trunc(1), |o| match (o[0], o[1]) {
            (0, 0) => C64::new(0.6, 0.0),
            (1, 1) => C64::new(0.0, 0.8),
            _ => ZERO,
        })
        .unwrap();
        let full = condition_on_diagonal_povm(&s, &["b"], |_| 1.0).unwrap();
        assert_abs_diff_eq!(full.herald_probability(), 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(full.rho()[(0, 0)].re, 0.36, epsilon = 1e-14);
        assert_abs_diff_eq!(full.rho()[(0, 1)].norm(), 0.0, epsilon = 1e-14);
        let none = condition_on_diagonal_povm(&s, &["b"], |_| 0.0).unwrap();
        assert_eq!(none.herald_probability(), 0.0);
        assert!(matches!(
            none.fidelity_with_pure(&fock(&["a"], 1, &[0])),
            Err(Error::UndefinedState(_))
        ));
        assert!(condition_on_diagonal_povm(&s, &["b"], |_| 1.5).is_err());
        assert!(condition_on_diagonal_povm(&s, &["b"], |_| -0.1).is_err());
    }

    #[test]
    fn heralding_a_product_photon_leaves_the_rest_pure() {
        let psi = ModeRegister::from_fn(&["a"], trunc(2), |o| match o[0] {
            0 => C64::new(0.6, 0.0),
            2 => C64::new(0.0, 0.8),
            _ => ZERO,
        })
        .unwrap();
        let joint = fock(&["b"], 2, &[1]).tensor(&psi).unwrap();
        let cond = condition_on_diagonal_povm(&joint, &["b"], |n| if n[0] == 1 { 1.0 } else { 0.0 }).unwrap();
        assert_abs_diff_eq!(cond.herald_probability(), 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(cond.fidelity_with_pure(&psi).unwrap(), 1.0, epsilon = 1e-14);
    }

    fn singlet() -> ModeRegister {
        ModeRegister::from_fn(&["aH", "aV", "dH", "dV"], trunc(1), |o| match o {
            [1, 0, 0, 1] => C64::new(FRAC_1_SQRT_2, 0.0),
            [0, 1, 1, 0] => C64::new(-FRAC_1_SQRT_2, 0.0),
            _ => ZERO,
        })
        .unwrap()
    }

    #[test]
    fn fidelity_examples() {
        let psi = singlet();
        let rho = ConditionalState::from_pure(&psi);
        assert_abs_diff_eq!(rho.fidelity_with_pure(&psi).unwrap(), 1.0, epsilon = 1e-14);

        // maximally mixed over the four one-photon-per-side states
        let mut mixed = DMatrix::from_element(16, 16, ZERO);
        for occ in [[1, 0, 1, 0], [1, 0, 0, 1], [0, 1, 1, 0], [0, 1, 0, 1]] {
            let i = index_of(&occ, 2);
            mixed[(i, i)] = C64::new(0.25, 0.0);
        }
        let mixed = ConditionalState::from_density(psi.labels(), 1, mixed).unwrap();
        assert_abs_diff_eq!(mixed.fidelity_with_pure(&psi).unwrap(), 0.25, epsilon = 1e-14);

        let triplet = ModeRegister::from_fn(&["aH", "aV", "dH", "dV"], trunc(1), |o| match o {
            [1, 0, 0, 1] | [0, 1, 1, 0] => C64::new(FRAC_1_SQRT_2, 0.0),
            _ => ZERO,
        })
        .unwrap();
        assert_abs_diff_eq!(rho.fidelity_with_pure(&triplet).unwrap(), 0.0, epsilon = 1e-14);
    }

    #[test]
    fn operator_conditioning_matches_diagonal_route() {
        let psi = singlet();
        let weight = |n: &[usize]| if n[0] == 1 { 0.9 } else { 0.05 };
        let direct = condition_on_diagonal_povm(&psi, &["aH"], weight).unwrap();
        let mut element = DMatrix::from_element(2, 2, ZERO);
        element[(0, 0)] = C64::new(0.05, 0.0);
        element[(1, 1)] = C64::new(0.9, 0.0);
        let via = ConditionalState::from_pure(&psi)
            .condition_on_operator(&["aH"], &element)
            .unwrap();
        assert_eq!(via.labels(), direct.labels());
        for (a, b) in via.rho().iter().zip(direct.rho().iter()) {
            assert_abs_diff_eq!((a - b).norm(), 0.0, epsilon = 1e-14);
        }
    }

    #[test]
    fn rotated_element_matches_schrodinger_picture() {
        // |2,1> through a 0.3 rad rotation, then H' click-only weight
        let n_max = 3;
        let s = fock(&["h", "v"], n_max, &[2, 1]);
        let w = |n1: usize, n2: usize| 0.3f64.powi(n1 as i32) * (1.0 - 0.2f64.powi(n2 as i32 + 1));
        let element = mixed_diagonal_povm_element(n_max, 0.3, 0.4, w);
        let heis = ConditionalState::from_pure(&s).expectation(&element).unwrap().re;
        let rotated = s.apply_two_mode_mixer("h", "v", 0.3, 0.4).unwrap();
        let schr: f64 = rotated
            .amplitudes()
            .iter()
            .enumerate()
            .map(|(i, a)| {
                let o = occupation_of(i, 2, n_max + 1);
                a.norm_sqr() * w(o[0], o[1])
            })
            .sum();
        assert_abs_diff_eq!(heis, schr, epsilon = 1e-13);
    }

    #[test]
    fn permutation_round_trip_and_json_dump() {
        let s = ModeRegister::from_fn(&["a", "b", "c"], trunc(1), |o| {
            C64::new(o[0] as f64 + 0.5 * o[1] as f64, o[2] as f64)
        })
        .unwrap();
        let p = s.permuted(&["c", "a", "b"]).unwrap();
        assert_eq!(p.amplitude(&[1, 1, 0]), s.amplitude(&[1, 0, 1]));
        assert_eq!(p.permuted(&["a", "b", "c"]).unwrap(), s);

        let dump: RegisterDump = serde_json::from_str(&s.to_json()).unwrap();
        assert_eq!(dump.labels, vec!["a", "b", "c"]);
        assert_eq!(dump.n_max, 1);
        assert_eq!(dump.entries.len(), 7);
        assert_eq!(dump.entries[0].occupation, vec![0, 0, 1]);
    }

    fn arb_register() -> impl Strategy<Value = ModeRegister> {
        // three modes, n_max = 4, random amplitudes confined to ≤ 4 photons in (m0, m1)
        proptest::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 125).prop_map(|v| {
            let raw = ModeRegister::from_fn(&["m0", "m1", "m2"], trunc(4), |o| {
                if o[0] + o[1] <= 4 {
                    let (re, im) = v[index_of(o, 5)];
                    C64::new(re, im)
                } else {
                    ZERO
                }
            })
            .unwrap();
            let norm = raw.norm_sqr().sqrt();
            ModeRegister::from_fn(&["m0", "m1", "m2"], trunc(4), |o| raw.amplitude(o) / norm).unwrap()
        })
    }

    proptest! {
        #[test]
        fn mixers_preserve_norm(s in arb_register(), theta in -3.2f64..3.2, phase in -3.2f64..3.2) {
            let out = s.apply_two_mode_mixer("m0", "m1", theta, phase).unwrap();
            prop_assert!((out.norm_sqr() - 1.0).abs() < 1e-12);
            prop_assert!(out.leakage() < 1e-20);
        }

        #[test]
        fn complete_povm_partitions_sum_to_one(s in arb_register(), cut in 0.0f64..1.0) {
            let split = MeasurementSplit::new(&s, &["m0", "m2"]).unwrap();
            let w = |n: &[usize]| ((n[0] * 7 + n[1] * 3) % 5) as f64 / 5.0 * cut;
            let a = split.condition(w).unwrap();
            let b = split.condition(|n| 1.0 - w(n)).unwrap();
            prop_assert!((a.herald_probability() + b.herald_probability() - 1.0).abs() < 1e-10);
            prop_assert!(a.min_eigenvalue() > -1e-12);
            prop_assert!(a.max_hermiticity_defect() < 1e-14);
        }
    }
}
