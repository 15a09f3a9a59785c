//! Exact rational reference values for the binomial formulas.
//!
//! With `rho = a/d`, a cell written `K` times holds `i` ones with probability
//! `C(K,i)·a^i·(d−a)^(K−i) / d^K`, so every quantity is a ratio of integers.

#![allow(dead_code)]

use num_bigint::BigUint;

pub fn choose(n: u64, k: u64) -> BigUint {
    let k = k.min(n - k);
    let mut c = BigUint::from(1u32);
    for i in 0..k {
        c = c * BigUint::from(n - i) / BigUint::from(i + 1);
    }
    c
}

/// A non-negative rational `num / den`.
#[derive(Clone, Debug)]
pub struct Ratio {
    pub num: BigUint,
    pub den: BigUint,
}

impl Ratio {
    pub fn is_one(&self) -> bool {
        self.num == self.den
    }

    /// Natural logarithm, from the leading 64 bits of numerator and
    /// denominator; the absolute error is far below 1e-10.
    pub fn ln(&self) -> f64 {
        ln_big(&self.num) - ln_big(&self.den)
    }

    pub fn to_f64(&self) -> f64 {
        self.ln().exp()
    }
}

fn ln_big(x: &BigUint) -> f64 {
    if x.bits() == 0 {
        return f64::NEG_INFINITY;
    }
    let shift = x.bits().saturating_sub(64);
    let top = (x >> shift as usize).to_u64_digits();
    (top[0] as f64).ln() + shift as f64 * std::f64::consts::LN_2
}

/// Probability that the ones-count is `≤ b` or `≥ K − b`.
pub fn duty_deviation(k: u64, a: u64, d: u64, b: u64) -> Ratio {
    let den = BigUint::from(d).pow(k as u32);
    let mut num = BigUint::from(0u32);
    for i in 0..=k {
        if i <= b || i >= k - b {
            num += choose(k, i) * BigUint::from(a).pow(i as u32) * BigUint::from(d - a).pow((k - i) as u32);
        }
    }
    Ratio { num, den }
}

/// Tail over cells for every `n` at once: entry `n` is the probability that at least
/// `n` of `cells` independent cells deviate, given the per-cell probability.
pub fn at_least_all(p: &Ratio, cells: u64) -> Vec<Ratio> {
    let q = &p.den - &p.num;
    let den = p.den.pow(cells as u32);
    let n = cells as usize;
    // q_pows[i] = q^i, built once; p^j and C(cells, j) advance with j.
    let mut q_pows = Vec::with_capacity(n + 1);
    q_pows.push(BigUint::from(1u32));
    for i in 0..n {
        let next = &q_pows[i] * &q;
        q_pows.push(next);
    }
    let mut terms = Vec::with_capacity(n + 1);
    let mut p_pow = BigUint::from(1u32);
    let mut binom = BigUint::from(1u32);
    for j in 0..=n {
        terms.push(&binom * &p_pow * &q_pows[n - j]);
        p_pow *= &p.num;
        binom = binom * BigUint::from(cells - j as u64) / BigUint::from(j as u64 + 1);
    }
    let mut out = Vec::with_capacity(n + 1);
    let mut acc = BigUint::from(0u32);
    for t in terms.iter().rev() {
        acc += t;
        out.push(Ratio { num: acc.clone(), den: den.clone() });
    }
    out.reverse();
    out
}

/// `|ln x − ln y|`, which bounds the relative error for nearby values.
pub fn ln_gap(ours_ln: f64, exact: &Ratio) -> f64 {
    let e = exact.ln();
    if ours_ln == e {
        0.0
    } else {
        (ours_ln - e).abs()
    }
}
