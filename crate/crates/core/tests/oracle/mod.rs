//! Independent perturbative model of the swap experiment.
//!
//! States are kept as polynomials in creation operators acting on vacuum,
//! every linear-optical element is a substitution of creation operators, and
//! detectors are modelled by explicit binomial loss branching plus an
//! independent dark count. Nothing here touches the Fock-tensor engine.

#![allow(dead_code)]

use num_complex::Complex64 as C64;
use std::collections::BTreeMap;

pub const A_H: usize = 0;
pub const A_V: usize = 1;
pub const B_H: usize = 2;
pub const B_V: usize = 3;
pub const C_H: usize = 4;
pub const C_V: usize = 5;
pub const D_H: usize = 6;
pub const D_V: usize = 7;

type Monomial = [u8; 8];

#[derive(Clone, Debug, Default)]
pub struct Poly {
    pub terms: BTreeMap<Monomial, C64>,
}

fn factorial(n: u32) -> f64 {
    (1..=n).map(f64::from).product()
}

fn binomial(n: u32, k: u32) -> f64 {
    factorial(n) / (factorial(k) * factorial(n - k))
}

impl Poly {
    pub fn one() -> Self {
        let mut terms = BTreeMap::new();
        terms.insert([0u8; 8], C64::new(1.0, 0.0));
        Poly { terms }
    }

    fn add_term(&mut self, m: Monomial, c: C64) {
        *self.terms.entry(m).or_insert(C64::new(0.0, 0.0)) += c;
    }

    pub fn mul(&self, other: &Poly) -> Poly {
        let mut out = Poly::default();
        for (m1, c1) in &self.terms {
            for (m2, c2) in &other.terms {
                let mut m = *m1;
                for i in 0..8 {
                    m[i] += m2[i];
                }
                out.add_term(m, c1 * c2);
            }
        }
        out
    }

    /// Replace the creation operator of `mode` by the linear form `image`.
    pub fn substitute(&self, mode: usize, image: &[(usize, C64)]) -> Poly {
        let mut linear = Poly::default();
        for &(target, coeff) in image {
            let mut m = [0u8; 8];
            m[target] = 1;
            linear.add_term(m, coeff);
        }
        let mut out = Poly::default();
        for (mono, c) in &self.terms {
            let mut rest = *mono;
            let power = rest[mode];
            rest[mode] = 0;
            let mut acc = Poly::default();
            acc.add_term(rest, *c);
            for _ in 0..power {
                acc = acc.mul(&linear);
            }
            for (m, v) in acc.terms {
                out.add_term(m, v);
            }
        }
        out
    }

    /// Mixes two modes: x -> cos x + sin y, y -> -sin x + cos y.
    pub fn rotate(&self, x: usize, y: usize, theta: f64) -> Poly {
        let (s, c) = theta.sin_cos();
        let r = |v: f64| C64::new(v, 0.0);
        // both images are built before expanding so the substitution is simultaneous
        let mut out = Poly::default();
        for (mono, coeff) in &self.terms {
            let mut rest = *mono;
            let (p, q) = (rest[x], rest[y]);
            rest[x] = 0;
            rest[y] = 0;
            let mut acc = Poly::default();
            acc.add_term(rest, *coeff);
            let mut lx = Poly::default();
            let mut ly = Poly::default();
            let mut ex = [0u8; 8];
            ex[x] = 1;
            let mut ey = [0u8; 8];
            ey[y] = 1;
            lx.add_term(ex, r(c));
            lx.add_term(ey, r(s));
            ly.add_term(ex, r(-s));
            ly.add_term(ey, r(c));
            for _ in 0..p {
                acc = acc.mul(&lx);
            }
            for _ in 0..q {
                acc = acc.mul(&ly);
            }
            for (m, v) in acc.terms {
                out.add_term(m, v);
            }
        }
        out
    }

    pub fn negate_mode(&self, mode: usize) -> Poly {
        self.substitute(mode, &[(mode, C64::new(-1.0, 0.0))])
    }

    /// Fock-basis probabilities `|<n|psi>|^2` keyed by occupation.
    pub fn fock_probabilities(&self) -> Vec<(Monomial, f64)> {
        self.terms
            .iter()
            .map(|(m, c)| {
                let norm: f64 = m.iter().map(|&k| factorial(k as u32)).product();
                (*m, c.norm_sqr() * norm)
            })
            .filter(|(_, p)| *p > 0.0)
            .collect()
    }
}

/// One PDC source emitting into (x_H, x_V, y_H, y_V), keeping at most
/// `max_pairs` pairs in total.
pub fn source_poly(chi: f64, modes: [usize; 4], max_pairs: u32) -> Poly {
    let t = chi.tanh();
    let norm = 1.0 / (chi.cosh() * chi.cosh());
    let mut p = Poly::default();
    for nh in 0..=max_pairs {
        for nv in 0..=(max_pairs - nh) {
            let n = nh + nv;
            let phase = C64::new(0.0, 1.0).powu(n);
            let c = phase * t.powi(n as i32) * norm / (factorial(nh) * factorial(nv));
            let mut m = [0u8; 8];
            m[modes[0]] = nh as u8;
            m[modes[2]] = nh as u8;
            m[modes[1]] = nv as u8;
            m[modes[3]] = nv as u8;
            p.add_term(m, c);
        }
    }
    p
}

/// Probability that a detector with efficiency `eta` and dark-count
/// probability `pdc` reports `click` when `n` photons arrive. Each photon is
/// detected independently; a dark count fires independently of the photons.
pub fn branch_weight(n: u32, click: bool, eta: f64, pdc: f64) -> f64 {
    let mut p_click = 0.0;
    for k in 0..=n {
        let pk = binomial(n, k) * eta.powi(k as i32) * (1.0 - eta).powi((n - k) as i32);
        p_click += if k >= 1 { pk } else { pk * pdc };
    }
    if click {
        p_click
    } else {
        1.0 - p_click
    }
}

#[derive(Clone, Copy, Debug)]
pub struct OracleParams {
    pub chi: f64,
    pub eta_bsm: f64,
    pub eta_ab: f64,
    pub pdc: f64,
    pub max_pairs: u32,
}

/// BSM patterns over (b'H, b'V, c'H, c'V) with a flag for the psi+ heralds.
pub const PATTERNS: [([bool; 4], bool); 4] = [
    ([true, false, false, true], false),
    ([false, true, true, false], false),
    ([true, true, false, false], true),
    ([false, false, true, true], true),
];

/// State after both sources and the balanced beamsplitter on b and c.
pub fn swapped_poly(p: &OracleParams) -> Poly {
    let ab = source_poly(p.chi, [A_H, A_V, B_H, B_V], p.max_pairs);
    let cd = source_poly(p.chi, [C_H, C_V, D_H, D_V], p.max_pairs);
    ab.mul(&cd)
        .rotate(B_H, C_H, std::f64::consts::FRAC_PI_4)
        .rotate(B_V, C_V, std::f64::consts::FRAC_PI_4)
}

pub struct OracleCounts {
    pub errors: f64,
    pub total: f64,
    pub herald: f64,
}

/// Exclusive one-click-per-side coincidences in the Z and X bases, summed
/// over the four accepted heralds with psi+ heralds mapped into the psi-
/// frame by a sign flip on d_V.
pub fn coincidence_counts(p: &OracleParams) -> OracleCounts {
    let swapped = swapped_poly(p);
    let mut counts = OracleCounts {
        errors: 0.0,
        total: 0.0,
        herald: 0.0,
    };
    for (bsm, plus) in PATTERNS {
        let framed = if plus {
            swapped.negate_mode(D_V)
        } else {
            swapped.clone()
        };
        for (occ, prob) in framed.fock_probabilities() {
            let mut w = prob;
            for (k, &mode) in [B_H, B_V, C_H, C_V].iter().enumerate() {
                w *= branch_weight(occ[mode] as u32, bsm[k], p.eta_bsm, p.pdc);
            }
            counts.herald += w;
        }
        for theta in [0.0, std::f64::consts::FRAC_PI_4] {
            let measured = framed.rotate(A_H, A_V, theta).rotate(D_H, D_V, theta);
            for (occ, prob) in measured.fock_probabilities() {
                let mut w = prob;
                for (k, &mode) in [B_H, B_V, C_H, C_V].iter().enumerate() {
                    w *= branch_weight(occ[mode] as u32, bsm[k], p.eta_bsm, p.pdc);
                }
                if w == 0.0 {
                    continue;
                }
                for (alice_h, bob_h) in [(true, true), (true, false), (false, true), (false, false)] {
                    let wa = branch_weight(occ[A_H] as u32, alice_h, p.eta_ab, p.pdc)
                        * branch_weight(occ[A_V] as u32, !alice_h, p.eta_ab, p.pdc);
                    let wb = branch_weight(occ[D_H] as u32, bob_h, p.eta_ab, p.pdc)
                        * branch_weight(occ[D_V] as u32, !bob_h, p.eta_ab, p.pdc);
                    let c = w * wa * wb;
                    counts.total += c;
                    if alice_h == bob_h {
                        counts.errors += c;
                    }
                }
            }
        }
    }
    counts
}

pub fn oracle_qber(p: &OracleParams) -> f64 {
    let c = coincidence_counts(p);
    c.errors / c.total
}

/// Summed accepted-herald probability for exactly one pair per source,
/// enumerating the 16 click outcomes of the four BSM detectors.
pub fn single_pair_bsm_success(eta: f64) -> f64 {
    // one pair per source, normalised: (aH bH + aV bV)(cH dH + cV dV) / 2
    let mut state = Poly::default();
    for (x, y) in [(A_H, B_H), (A_V, B_V)] {
        for (u, v) in [(C_H, D_H), (C_V, D_V)] {
            let mut m = [0u8; 8];
            m[x] += 1;
            m[y] += 1;
            m[u] += 1;
            m[v] += 1;
            state.add_term(m, C64::new(0.5, 0.0));
        }
    }
    let out = state
        .rotate(B_H, C_H, std::f64::consts::FRAC_PI_4)
        .rotate(B_V, C_V, std::f64::consts::FRAC_PI_4);
    let probs = out.fock_probabilities();
    let mut accepted = 0.0;
    for outcome in 0..16u32 {
        let clicks = [outcome & 1 != 0, outcome & 2 != 0, outcome & 4 != 0, outcome & 8 != 0];
        if !PATTERNS.iter().any(|(p, _)| *p == clicks) {
            continue;
        }
        for (occ, prob) in &probs {
            let mut w = *prob;
            for (k, &mode) in [B_H, B_V, C_H, C_V].iter().enumerate() {
                w *= branch_weight(occ[mode] as u32, clicks[k], eta, 0.0);
            }
            accepted += w;
        }
    }
    accepted
}
