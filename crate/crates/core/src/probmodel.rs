//! Closed-form binomial model of duty-cycle deviation.
//!
//! A cell that receives `K` independent bits, each '1' with probability `rho`,
//! ends with duty-cycle `i/K` where `i ~ Binomial(K, rho)`. [`p_duty_deviation`]
//! is the probability that the duty-cycle lands at or beyond `b/K` from
//! either rail, and [`p_at_least_n`] is the probability that at least `n` of
//! `cells` independent cells do so.
//!
//! Everything is evaluated in log space: binomial coefficients come from
//! log-gamma, and sums of terms are accumulated smallest-first with Neumaier
//! compensation after factoring out the largest term.

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

/// Terms this far below the running maximum (in natural log units, about
/// 1e-40 relative) cannot change a double-precision sum.
const NEGLIGIBLE_LN: f64 = -92.0;

pub fn ln_choose(n: u64, k: u64) -> f64 {
    debug_assert!(k <= n);
    if k == 0 || k == n {
        return 0.0;
    }
    ln_gamma(n as f64 + 1.0) - ln_gamma(k as f64 + 1.0) - ln_gamma((n - k) as f64 + 1.0)
}

/// `k·ln(p)` with the convention `0·ln(0) = 0`.
fn scaled_ln(k: u64, ln_p: f64) -> f64 {
    if k == 0 {
        0.0
    } else {
        k as f64 * ln_p
    }
}

fn ln_binomial_term(n: u64, i: u64, ln_p: f64, ln_q: f64) -> f64 {
    ln_choose(n, i) + scaled_ln(i, ln_p) + scaled_ln(n - i, ln_q)
}

/// Neumaier-compensated sum.
pub(crate) fn compensated_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// `ln(Σ exp(terms))`, summing smallest terms first.
fn ln_sum_exp(mut terms: Vec<f64>) -> f64 {
    terms.retain(|t| *t > f64::NEG_INFINITY);
    if terms.is_empty() {
        return f64::NEG_INFINITY;
    }
    let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    terms.sort_by(|a, b| a.total_cmp(b));
    max + compensated_sum(terms.iter().map(|t| (t - max).exp())).ln()
}

fn check_rho(rho: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&rho) {
        return Err(Error::invalid(format!("rho must lie in [0,1], got {rho}")));
    }
    Ok(())
}

fn check_deviation_args(k: u64, rho: f64, b: u64) -> Result<()> {
    if k == 0 {
        return Err(Error::invalid("K must be at least 1"));
    }
    check_rho(rho)?;
    if b > k / 2 {
        return Err(Error::invalid(format!("b = {b} exceeds floor(K/2) = {}", k / 2)));
    }
    Ok(())
}

fn ln_rho_pair(rho: f64) -> (f64, f64) {
    (rho.ln(), (-rho).ln_1p())
}

/// Natural logs of the deviation probability and of its complement, each
/// summed directly from its own terms so that neither loses precision when
/// the other is close to 1.
pub fn ln_duty_deviation(k: u64, rho: f64, b: u64) -> Result<(f64, f64)> {
    check_deviation_args(k, rho, b)?;
    if 2 * b == k {
        return Ok((0.0, f64::NEG_INFINITY));
    }
    let (ln_r, ln_1r) = ln_rho_pair(rho);
    let term = |i: u64| ln_binomial_term(k, i, ln_r, ln_1r);
    let inside: Vec<f64> = (b + 1..k - b).map(term).collect();
    if inside.is_empty() {
        // Odd K with b = floor(K/2): the two tails cover every outcome.
        return Ok((0.0, f64::NEG_INFINITY));
    }
    let tails: Vec<f64> = (0..=b).chain(k - b..=k).map(term).collect();
    Ok((ln_sum_exp(tails), ln_sum_exp(inside)))
}

/// Probability that a cell's duty-cycle is `≤ b/K` or `≥ 1 − b/K`; exactly 1
/// when `b/K = 0.5`.
pub fn p_duty_deviation(k: u64, rho: f64, b: u64) -> Result<f64> {
    let (ln_p, _) = ln_duty_deviation(k, rho, b)?;
    Ok(ln_p.exp().clamp(0.0, 1.0))
}

/// Natural log of [`p_at_least_n`].
pub fn ln_p_at_least_n(k: u64, rho: f64, b: u64, cells: u64, n: u64) -> Result<f64> {
    let (ln_p, ln_q) = ln_duty_deviation(k, rho, b)?;
    ln_tail_at_least(cells, n, ln_p, ln_q)
}

/// Probability that at least `n` of `cells` cells deviate as in
/// [`p_duty_deviation`].
pub fn p_at_least_n(k: u64, rho: f64, b: u64, cells: u64, n: u64) -> Result<f64> {
    Ok(ln_p_at_least_n(k, rho, b, cells, n)?.exp().clamp(0.0, 1.0))
}

/// `ln P[X ≥ n]` for `X ~ Binomial(cells, p)` given `ln p` and `ln(1 − p)`.
pub fn ln_tail_at_least(cells: u64, n: u64, ln_p: f64, ln_q: f64) -> Result<f64> {
    if cells == 0 {
        return Err(Error::invalid("cell count must be at least 1"));
    }
    if n > cells {
        return Err(Error::invalid(format!("n = {n} exceeds cell count {cells}")));
    }
    if n == 0 {
        return Ok(0.0);
    }
    if ln_q == f64::NEG_INFINITY {
        return Ok(0.0);
    }
    if ln_p == f64::NEG_INFINITY {
        return Ok(f64::NEG_INFINITY);
    }
    let term = |i: u64| ln_binomial_term(cells, i, ln_p, ln_q);

    // Walk outward from the mode (or from n when the mode lies below it);
    // the pmf is unimodal, so stopping once terms fall below the running
    // maximum by NEGLIGIBLE_LN drops nothing representable.
    let p = ln_p.exp();
    let mode = (((cells + 1) as f64 * p).floor() as u64).min(cells);
    let start = mode.max(n);
    let mut terms = vec![term(start)];
    let mut max = terms[0];
    let mut i = start;
    while i < cells {
        i += 1;
        let t = term(i);
        max = max.max(t);
        terms.push(t);
        if t < max + NEGLIGIBLE_LN {
            break;
        }
    }
    let mut i = start;
    while i > n {
        i -= 1;
        let t = term(i);
        max = max.max(t);
        terms.push(t);
        if t < max + NEGLIGIBLE_LN {
            break;
        }
    }
    Ok(ln_sum_exp(terms).min(0.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub b: u64,
    pub b_over_k: f64,
    pub p: f64,
}

/// One point per `b` in `0..=floor(K/2)`.
pub fn deviation_curve(k: u64, rho: f64) -> Result<Vec<CurvePoint>> {
    check_deviation_args(k, rho, 0)?;
    (0..=k / 2)
        .map(|b| {
            Ok(CurvePoint {
                b,
                b_over_k: b as f64 / k as f64,
                p: p_duty_deviation(k, rho, b)?,
            })
        })
        .collect()
}

/// Upper tail of `Binomial(n, p)` evaluated directly, used by the
/// simulation-vs-model comparisons.
pub fn binomial_sf(n: u64, p: f64, at_least: u64) -> Result<f64> {
    check_rho(p)?;
    let (ln_p, ln_q) = ln_rho_pair(p);
    Ok(ln_tail_at_least(n, at_least, ln_p, ln_q)?.exp())
}
