//! The block-counting death process and the partition-valued dual: exact
//! transition probabilities for a finite start and for entrance from
//! infinity, path simulation, and the generator algebra linking the
//! diffusion generator to the death-process generator.
//!
//! The transition probabilities are alternating series that cancel
//! catastrophically for small times, so evaluation runs on a precision
//! ladder: plain `f64` first, then arbitrary-precision floats with the
//! working precision chosen from the measured cancellation.

use crate::error::{Error, Result};
use crate::partitions::{down_step_distribution, hypergeom, Partition};
use crate::sampling::{mean_augmented_monomial, singleton_free_expansion, Params};
use crate::scalar::Scalar;
use astro_float::{BigFloat, Consts, RoundingMode, Sign};
use num_rational::BigRational;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;

/// Death rate of the block-counting chain: `λ_k = k(k+θ−1)/2`.
pub fn death_rate(k: usize, theta: f64) -> f64 {
    0.5 * k as f64 * (k as f64 + theta - 1.0)
}

/// A series evaluation together with the working precision that produced it.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeriesValue {
    pub value: f64,
    pub precision_bits: u32,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum StartCount {
    Finite(usize),
    Infinite,
}

const RM: RoundingMode = RoundingMode::ToEven;
const MAX_PRECISION_BITS: u32 = 8192;
const MAX_SERIES_TERMS: usize = 3_000_000;
const CLAMP_FLOOR: f64 = -1e-9;

fn validate_theta_t(theta: f64, t: f64) -> Result<()> {
    if !(theta > -1.0) || !theta.is_finite() {
        return Err(Error::Domain(format!("theta must exceed -1, got {theta}")));
    }
    if !(t > 0.0) || !t.is_finite() {
        return Err(Error::Domain(format!("t must be positive, got {t}")));
    }
    Ok(())
}

/// Ratio of consecutive term magnitudes |T_{k+1}| / |T_k| without the
/// exponential step, which is handled separately. Exact in closed form, so
/// tail bounds can be certified cheaply in `f64` regardless of the working
/// precision of the terms themselves.
fn poly_ratio(start: StartCount, l: usize, theta: f64, k: usize) -> f64 {
    let kf = k as f64;
    let lf = l as f64;
    let mut r = (2.0 * kf + 1.0 + theta) / (2.0 * kf + theta - 1.0);
    r *= (lf + theta + kf - 1.0) / (kf + 1.0 - lf);
    if let StartCount::Finite(n) = start {
        let nf = n as f64;
        r *= (nf - kf) / (theta + nf + kf);
    }
    r
}

fn term_ratio(start: StartCount, l: usize, theta: f64, t: f64, k: usize) -> f64 {
    poly_ratio(start, l, theta, k) * (-(2.0 * k as f64 + theta) * t / 2.0).exp()
}

/// Certifies that the tail beyond term `k` is geometrically dominated and
/// returns an upper bound on it (given |T_k|). Returns `None` when the
/// ratios are not yet decisively below 1, meaning summation must continue.
fn certify_tail(start: StartCount, l: usize, theta: f64, t: f64, k: usize, term_abs: f64) -> Option<f64> {
    let mut partial = 1.0f64;
    let mut bound = 0.0f64;
    let mut j = k;
    loop {
        let r = term_ratio(start, l, theta, t, j);
        if !(r <= 0.98) {
            return None;
        }
        partial *= r;
        bound += partial;
        if partial < 2f64.powi(-60) {
            bound += partial * 49.0; // remaining geometric mass at ratio ≤ 0.98
            return Some(bound * term_abs);
        }
        j += 1;
        if j > k + 100_000 {
            return None;
        }
    }
}

struct RawOutcome {
    value: f64,
    /// log2(max |term|) − log2(|sum|); bits destroyed by cancellation.
    bits_lost: Option<i64>,
    finite_ok: bool,
}

/// One pass of the series in plain f64. The exponential factor is evaluated
/// fresh per term; everything else updates by the closed-form term ratio.
fn series_f64(start: StartCount, l: usize, theta: f64, t: f64) -> Result<RawOutcome> {
    let k_end = match start {
        StartCount::Finite(n) => n,
        StartCount::Infinite => usize::MAX,
    };
    // First term, k = l.
    let mut coeff = 2.0 * l as f64 + theta - 1.0;
    for j in 0..l.saturating_sub(1) {
        // (l+θ)_(k−1) at k = l, divided into l! piecewise: build
        // (l+θ)_(l−1) / l! term by term to keep magnitudes balanced.
        coeff *= (l as f64 + theta + j as f64) / (j + 2) as f64;
    }
    if let StartCount::Finite(n) = start {
        for j in 0..l {
            coeff *= (n - j) as f64 / (theta + n as f64 + j as f64);
        }
    }
    let mut term = coeff * (-death_rate(l, theta) * t).exp();
    let mut sum = 0.0f64;
    let mut max_abs = 0.0f64;
    let mut k = l;
    loop {
        sum += term;
        max_abs = max_abs.max(term.abs());
        if !sum.is_finite() || !term.is_finite() {
            return Ok(RawOutcome {
                value: f64::NAN,
                bits_lost: None,
                finite_ok: false,
            });
        }
        if k >= k_end {
            break;
        }
        if start == StartCount::Infinite {
            let small = term.abs() <= 1e-18 * max_abs.max(f64::MIN_POSITIVE);
            if k > l && small {
                if let Some(tail) = certify_tail(start, l, theta, t, k, term.abs()) {
                    if tail <= 1e-18 * max_abs.max(f64::MIN_POSITIVE) {
                        break;
                    }
                }
            }
            if k - l > MAX_SERIES_TERMS {
                return Err(Error::PrecisionExhausted {
                    max_bits: 53,
                    cancellation: max_abs / sum.abs().max(f64::MIN_POSITIVE),
                });
            }
        }
        term = -term * term_ratio(start, l, theta, t, k);
        k += 1;
    }
    let bits_lost = if sum == 0.0 {
        None
    } else {
        Some((max_abs.log2() - sum.abs().log2()).ceil() as i64)
    };
    Ok(RawOutcome {
        value: sum,
        bits_lost,
        finite_ok: true,
    })
}

fn bf(x: f64, p: usize) -> BigFloat {
    BigFloat::from_f64(x, p)
}

fn bf_usize(x: usize, p: usize) -> BigFloat {
    BigFloat::from_u64(x as u64, p)
}

/// Truncating conversion; magnitudes outside the f64 range saturate.
fn bigfloat_to_f64(x: &BigFloat) -> f64 {
    if x.is_zero() {
        return 0.0;
    }
    if x.is_nan() {
        return f64::NAN;
    }
    if x.is_inf_pos() {
        return f64::INFINITY;
    }
    if x.is_inf_neg() {
        return f64::NEG_INFINITY;
    }
    let Some((words, _, sign, e, _)) = x.as_raw_parts() else {
        return f64::NAN;
    };
    let total = words.len();
    let mut acc = 0.0f64;
    for (i, &w) in words.iter().enumerate().skip(total.saturating_sub(2)) {
        let down = (total - i) as i32 * astro_float::WORD_BIT_SIZE as i32;
        acc += w as f64 * 2f64.powi(e - down);
    }
    if sign == Sign::Neg {
        -acc
    } else {
        acc
    }
}

/// One pass at `p` bits. The exponential enters through two `exp` calls
/// (initial factor and the constant per-step factor `e^{−t}`); the rest is
/// the same ratio recurrence as the f64 pass.
fn series_big(start: StartCount, l: usize, theta: f64, t: f64, p: usize) -> Result<RawOutcome> {
    let mut cc = Consts::new().map_err(|e| Error::Domain(format!("bigfloat consts: {e:?}")))?;
    let k_end = match start {
        StartCount::Finite(n) => n,
        StartCount::Infinite => usize::MAX,
    };
    let theta_b = bf(theta, p);
    let t_b = bf(t, p);
    let one = bf(1.0, p);
    let two = bf(2.0, p);
    let half = bf(0.5, p);

    // e^{−t}: per-step decay of the exponential factor.
    let exp_step_const = t_b.neg().exp(p, RM, &mut cc);

    let mut coeff = two
        .mul(&bf_usize(l, p), p, RM)
        .add(&theta_b, p, RM)
        .sub(&one, p, RM);
    for j in 0..l.saturating_sub(1) {
        let num = bf_usize(l, p).add(&theta_b, p, RM).add(&bf_usize(j, p), p, RM);
        coeff = coeff.mul(&num, p, RM).div(&bf_usize(j + 2, p), p, RM);
    }
    if let StartCount::Finite(n) = start {
        for j in 0..l {
            let num = bf_usize(n - j, p);
            let den = theta_b.add(&bf_usize(n + j, p), p, RM);
            coeff = coeff.mul(&num, p, RM).div(&den, p, RM);
        }
    }
    // Initial exponential factor e^{−λ_l t} and the running step
    // e^{−(2k+θ)t/2} at k = l.
    let lam = bf(death_rate(l, theta), p);
    let mut term = coeff.mul(&lam.neg().mul(&t_b, p, RM).exp(p, RM, &mut cc), p, RM);
    let mut exp_step = two
        .mul(&bf_usize(l, p), p, RM)
        .add(&theta_b, p, RM)
        .mul(&t_b, p, RM)
        .mul(&half, p, RM)
        .neg()
        .exp(p, RM, &mut cc);

    let mut sum = BigFloat::new(p);
    let mut max_exp: Option<i64> = None;
    let mut k = l;
    loop {
        sum = sum.add(&term, p, RM);
        if let Some(e) = term.exponent() {
            let e = e as i64;
            max_exp = Some(max_exp.map_or(e, |m: i64| m.max(e)));
        }
        if term.is_nan() || sum.is_nan() || term.is_inf() || sum.is_inf() {
            return Err(Error::Domain("arbitrary-precision series overflow".into()));
        }
        if k >= k_end {
            break;
        }
        if start == StartCount::Infinite {
            let term_small = match (term.exponent(), max_exp) {
                (Some(te), Some(me)) => (te as i64) < me - p as i64 - 10,
                (None, _) => true, // exact zero term
                _ => false,
            };
            if k > l && term_small {
                let term_abs_f64 = bigfloat_to_f64(&term).abs();
                if certify_tail(start, l, theta, t, k, term_abs_f64.max(f64::MIN_POSITIVE))
                    .is_some()
                {
                    break;
                }
            }
            if k - l > MAX_SERIES_TERMS {
                return Err(Error::PrecisionExhausted {
                    max_bits: p as u32,
                    cancellation: f64::INFINITY,
                });
            }
        }
        // term_{k+1} = −term_k · exp_step_k · poly_ratio_k
        let kf = bf_usize(k, p);
        let mut ratio = two
            .mul(&kf, p, RM)
            .add(&one, p, RM)
            .add(&theta_b, p, RM)
            .div(&two.mul(&kf, p, RM).add(&theta_b, p, RM).sub(&one, p, RM), p, RM);
        let num = bf_usize(l + k - 1, p).add(&theta_b, p, RM);
        ratio = ratio.mul(&num, p, RM).div(&bf_usize(k + 1 - l, p), p, RM);
        if let StartCount::Finite(n) = start {
            ratio = ratio
                .mul(&bf_usize(n - k, p), p, RM)
                .div(&theta_b.add(&bf_usize(n + k, p), p, RM), p, RM);
        }
        term = term.mul(&exp_step, p, RM).mul(&ratio, p, RM).neg();
        exp_step = exp_step.mul(&exp_step_const, p, RM);
        k += 1;
    }

    let value = bigfloat_to_f64(&sum);
    let bits_lost = match (max_exp, sum.exponent()) {
        (Some(me), Some(se)) => Some(me - se as i64),
        (Some(_), None) => None, // sum is exactly zero: complete cancellation
        (None, _) => Some(0),    // all terms zero
    };
    Ok(RawOutcome {
        value,
        bits_lost,
        finite_ok: true,
    })
}

/// Precision ladder driver: accept a pass when the working precision exceeds
/// the measured cancellation by a 45-bit accuracy margin, otherwise rerun
/// with precision sized from that measurement.
fn death_series(start: StartCount, l: usize, theta: f64, t: f64) -> Result<SeriesValue> {
    validate_theta_t(theta, t)?;
    if l < 1 {
        return Err(Error::Domain("l must be at least 1".into()));
    }
    if let StartCount::Finite(n) = start {
        if l > n {
            return Err(Error::Domain(format!("l = {l} exceeds n = {n}")));
        }
    }

    const MARGIN: i64 = 45;
    let first = series_f64(start, l, theta, t)?;
    let mut bits_needed: i64 = match (&first.finite_ok, first.bits_lost) {
        (true, Some(lost)) if lost + MARGIN <= 53 => {
            return Ok(SeriesValue {
                value: first.value,
                precision_bits: 53,
            });
        }
        (true, Some(lost)) => lost + MARGIN + 19,
        _ => 192,
    };
    // All terms underflowed to zero in f64: the value is below 1e-300 and
    // clamps to 0 downstream.
    if first.finite_ok && first.bits_lost == Some(0) && first.value == 0.0 {
        return Ok(SeriesValue {
            value: 0.0,
            precision_bits: 53,
        });
    }

    loop {
        let p = (bits_needed.max(128) as u64).next_multiple_of(64).min(MAX_PRECISION_BITS as u64)
            as usize;
        let pass = series_big(start, l, theta, t, p)?;
        match pass.bits_lost {
            Some(lost) if lost + MARGIN <= p as i64 => {
                return Ok(SeriesValue {
                    value: pass.value,
                    precision_bits: p as u32,
                });
            }
            Some(lost) => {
                if p as u64 >= MAX_PRECISION_BITS as u64 {
                    return Err(Error::PrecisionExhausted {
                        max_bits: p as u32,
                        cancellation: 2f64.powi(lost.min(1_000) as i32),
                    });
                }
                bits_needed = lost + MARGIN + 19;
            }
            None => {
                if p as u64 >= MAX_PRECISION_BITS as u64 {
                    return Err(Error::PrecisionExhausted {
                        max_bits: p as u32,
                        cancellation: f64::INFINITY,
                    });
                }
                bits_needed = 2 * p as i64;
            }
        }
    }
}

fn clamp_probability(v: f64) -> Result<f64> {
    if v < CLAMP_FLOOR {
        return Err(Error::NegativeProbability { value: v });
    }
    if v > 1.0 + 1e-9 {
        return Err(Error::Domain(format!("probability {v} exceeds 1 beyond roundoff")));
    }
    Ok(v.clamp(0.0, 1.0))
}

/// `d^θ_{nl}(t)`: probability that the block count moves from `n` to `l`
/// in time `t` (indices follow the definition: first index is the start).
///
/// For `l ≥ 2` the value is a probability for every `θ > −1` and is clamped
/// to `[0,1]` (a raw value below −1e−9 is an error). For `l = 1` with
/// `θ < 0` the series is the labelled-model value, which need not lie in
/// `[0,1]`; it is returned unclamped and enters probabilities only through
/// the complement `d̃_{n1}`.
pub fn death_prob_finite(n: usize, l: usize, theta: f64, t: f64) -> Result<f64> {
    Ok(death_prob_finite_detailed(n, l, theta, t)?.value)
}

pub fn death_prob_finite_detailed(n: usize, l: usize, theta: f64, t: f64) -> Result<SeriesValue> {
    let raw = death_series(StartCount::Finite(n), l, theta, t)?;
    let value = if l >= 2 || theta >= 0.0 {
        clamp_probability(raw.value)?
    } else {
        raw.value
    };
    Ok(SeriesValue {
        value,
        precision_bits: raw.precision_bits,
    })
}

/// `d^θ_l(t)`: same series with entrance from infinity (the `n`-dependent
/// factor replaced by 1), truncated with a certified geometric tail bound.
pub fn death_prob_infinite(l: usize, theta: f64, t: f64) -> Result<f64> {
    Ok(death_prob_infinite_detailed(l, theta, t)?.value)
}

pub fn death_prob_infinite_detailed(l: usize, theta: f64, t: f64) -> Result<SeriesValue> {
    let raw = death_series(StartCount::Infinite, l, theta, t)?;
    // l = 1 is the labelled-model d_1, possibly negative for θ < 0; the
    // absorbing mass of the unlabelled dual comes from absorb_prob instead.
    if l >= 2 || theta >= 0.0 {
        return Ok(SeriesValue {
            value: clamp_probability(raw.value)?,
            precision_bits: raw.precision_bits,
        });
    }
    Ok(raw)
}

/// Smallest block count past which `d_n(t)` is vanishing for sure: three
/// times the small-`t` mean `2/t`, so the unimodal bulk cannot be missed.
fn infinite_tail_horizon(t: f64) -> usize {
    20 + (6.0 / t).ceil() as usize
}

/// Absorbing mass from infinity: `d̃₁(t) = 1 − Σ_{n≥2} d_n(t)`.
pub fn absorb_prob(theta: f64, t: f64) -> Result<f64> {
    validate_theta_t(theta, t)?;
    let horizon = infinite_tail_horizon(t);
    let mut total = 0.0f64;
    let mut small_run = 0;
    let mut n = 2usize;
    loop {
        let d = death_prob_infinite(n, theta, t)?;
        total += d;
        if n >= horizon && d < 1e-15 {
            small_run += 1;
            if small_run >= 3 {
                break;
            }
        } else {
            small_run = 0;
        }
        n += 1;
        if n > 2_000_000 {
            return Err(Error::PrecisionExhausted {
                max_bits: 53,
                cancellation: f64::INFINITY,
            });
        }
    }
    let complement = 1.0 - total;
    if complement < CLAMP_FLOOR {
        return Err(Error::NegativeProbability { value: complement });
    }
    Ok(complement.clamp(0.0, 1.0))
}

/// Absorbing mass from a finite start: `d̃^θ_{n1}(t) = 1 − Σ_{l=2}^n d_{nl}(t)`.
pub fn finite_absorb_prob(n: usize, theta: f64, t: f64) -> Result<f64> {
    validate_theta_t(theta, t)?;
    if n == 0 {
        return Err(Error::Domain("n must be at least 1".into()));
    }
    let mut total = 0.0;
    for l in 2..=n {
        total += death_prob_finite(n, l, theta, t)?;
    }
    let complement = 1.0 - total;
    if complement < CLAMP_FLOOR {
        return Err(Error::NegativeProbability { value: complement });
    }
    Ok(complement.clamp(0.0, 1.0))
}

/// Which state the block count starts from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum StartState {
    Finite(usize),
    Infinite,
}

/// Tabulated block-count transition probabilities at a fixed `(θ, t)`.
///
/// For a finite start of size `n`, `prob(l)` for `l = 1..=n` is `d_{nl}` and
/// `prob(0)` the complement `d_{n0}`. For entrance from infinity, `prob(1)`
/// is the absorbing mass `d̃₁` and `prob(w)` for `w ≥ 2` is `d_w`, truncated
/// where the remaining tail drops below 1e−12.
#[derive(Clone, Debug, Serialize)]
pub struct DeathProbTable {
    start: StartState,
    theta: f64,
    t: f64,
    probs: Vec<f64>,
    precision_bits: u32,
    #[serde(skip)]
    cumulative: Vec<f64>,
}

impl DeathProbTable {
    pub fn finite(n: usize, theta: f64, t: f64) -> Result<Self> {
        validate_theta_t(theta, t)?;
        if n == 0 {
            return Err(Error::Domain("n must be at least 1".into()));
        }
        let mut probs = vec![0.0; n + 1];
        let mut precision_bits = 53;
        let mut mass = 0.0;
        for l in 1..=n {
            let sv = death_prob_finite_detailed(n, l, theta, t)?;
            probs[l] = sv.value;
            mass += sv.value;
            precision_bits = precision_bits.max(sv.precision_bits);
        }
        // d_{n0} is the complement by definition. For θ ≥ 0 it is a
        // probability; for θ < 0 the l = 0 and l = 1 entries are labelled
        // continuations and only their sum d̃_{n1} is required non-negative.
        let complement = 1.0 - mass;
        if theta >= 0.0 {
            if complement < CLAMP_FLOOR {
                return Err(Error::NegativeProbability { value: complement });
            }
            probs[0] = complement.clamp(0.0, 1.0);
        } else {
            probs[0] = complement;
            let absorbed = probs[0] + probs[1];
            if absorbed < CLAMP_FLOOR {
                return Err(Error::NegativeProbability { value: absorbed });
            }
        }
        Ok(DeathProbTable {
            start: StartState::Finite(n),
            theta,
            t,
            probs,
            precision_bits,
            cumulative: Vec::new(),
        })
    }

    /// Builds the entrance-from-infinity table used for block-count sampling.
    pub fn from_infinity(theta: f64, t: f64) -> Result<Self> {
        validate_theta_t(theta, t)?;
        let horizon = infinite_tail_horizon(t);
        let mut ds = vec![0.0f64, 0.0f64]; // slots 0 (unused) and 1 (absorb)
        let mut precision_bits = 53u32;
        let mut total = 0.0f64;
        let mut small_run = 0;
        let mut w = 2usize;
        loop {
            let sv = death_prob_infinite_detailed(w, theta, t)?;
            ds.push(sv.value);
            total += sv.value;
            precision_bits = precision_bits.max(sv.precision_bits);
            let tail_left = 1.0 - total;
            if (w >= horizon && sv.value < 1e-15) || tail_left < 1e-12 {
                small_run += 1;
                if small_run >= 3 {
                    break;
                }
            } else {
                small_run = 0;
            }
            w += 1;
            if w > 500_000 {
                return Err(Error::PrecisionExhausted {
                    max_bits: precision_bits,
                    cancellation: f64::INFINITY,
                });
            }
        }
        let absorb = 1.0 - total;
        if absorb < CLAMP_FLOOR {
            return Err(Error::NegativeProbability { value: absorb });
        }
        ds[1] = absorb.clamp(0.0, 1.0);
        let mut cumulative = Vec::with_capacity(ds.len());
        let mut acc = 0.0;
        for &d in &ds {
            acc += d;
            cumulative.push(acc);
        }
        Ok(DeathProbTable {
            start: StartState::Infinite,
            theta,
            t,
            probs: ds,
            precision_bits,
            cumulative,
        })
    }

    pub fn start(&self) -> StartState {
        self.start
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    /// Largest tabulated block count.
    pub fn max_count(&self) -> usize {
        self.probs.len() - 1
    }

    /// `prob(l)`; zero beyond the tabulated range.
    pub fn prob(&self, l: usize) -> f64 {
        self.probs.get(l).copied().unwrap_or(0.0)
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn precision_bits(&self) -> u32 {
        self.precision_bits
    }

    /// Inverse-CDF draw of the block count (infinite-start tables only):
    /// returns `w ≥ 2` with probability `d_w` and 1 with probability `d̃₁`.
    pub fn sample_block_count<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        assert_eq!(
            self.start,
            StartState::Infinite,
            "sampling needs an entrance-from-infinity table"
        );
        let total = *self.cumulative.last().expect("nonempty");
        let u: f64 = rng.random::<f64>() * total;
        match self
            .cumulative
            .binary_search_by(|c| c.partial_cmp(&u).expect("finite"))
        {
            Ok(i) | Err(i) => i.max(1).min(self.probs.len() - 1),
        }
    }

    pub fn mean_block_count(&self) -> f64 {
        self.probs
            .iter()
            .enumerate()
            .map(|(w, &d)| w as f64 * d)
            .sum()
    }
}

/// Convenience one-shot draw; builds the table every call, so repeated
/// sampling should construct [`DeathProbTable::from_infinity`] once instead.
pub fn sample_block_count_from_infinity<R: Rng + ?Sized>(
    theta: f64,
    t: f64,
    rng: &mut R,
) -> Result<usize> {
    Ok(DeathProbTable::from_infinity(theta, t)?.sample_block_count(rng))
}

/// Transition function of the partition-valued dual:
/// `q^θ_{ηω}(t) = H(ω|η) · d^θ_{|η||ω|}(t)` for `ω ⊂ η` with `|ω| ≥ 2`, and
/// the absorbed mass `d̃^θ_{|η|1}(t)` for `ω = (1)`; 0 when `ω ⊄ η`.
pub fn dual_transition(eta: &Partition, omega: &Partition, theta: f64, t: f64) -> Result<f64> {
    if omega.is_empty() {
        return Err(Error::EmptyPartition);
    }
    if !eta.contains(omega) {
        return Ok(0.0);
    }
    let h = hypergeom(omega, eta)?.to_f64_lossy();
    let d = if omega.size() >= 2 {
        death_prob_finite(eta.size(), omega.size(), theta, t)?
    } else {
        finite_absorb_prob(eta.size(), theta, t)?
    };
    Ok(h * d)
}

/// A realized trajectory of the dual death process.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DeathPath {
    /// Times of the jumps, strictly increasing.
    pub jump_times: Vec<f64>,
    /// Visited states; `states[0]` is the initial state and
    /// `states[i]` holds from `jump_times[i-1]` on.
    pub states: Vec<Partition>,
}

impl DeathPath {
    pub fn final_state(&self) -> &Partition {
        self.states.last().expect("at least the initial state")
    }
}

/// Uniform ball deletion: one step of the embedded down chain.
fn sample_down_step<R: Rng + ?Sized>(eta: &Partition, rng: &mut R) -> Partition {
    let n = eta.size();
    let mut u = rng.random::<f64>() * n as f64;
    for (v, mult) in eta.distinct_parts() {
        let w = (v * mult) as f64;
        if u < w {
            return eta.remove_ball(v).expect("part exists");
        }
        u -= w;
    }
    let (v, _) = *eta.distinct_parts().last().expect("nonempty");
    eta.remove_ball(v).expect("part exists")
}

/// Simulates the dual death process from `η0` up to `t_end`: exponential
/// holding with rate `λ_n = n(n+θ−1)/2` at size `n`, jumps by uniform ball
/// deletion, absorption at size 1.
pub fn simulate_death_path<R: Rng + ?Sized>(
    eta0: &Partition,
    theta: f64,
    t_end: f64,
    rng: &mut R,
) -> Result<DeathPath> {
    if !(theta > -1.0) {
        return Err(Error::Domain(format!("theta must exceed -1, got {theta}")));
    }
    if eta0.is_empty() {
        return Err(Error::EmptyPartition);
    }
    let mut states = vec![eta0.clone()];
    let mut jump_times = Vec::new();
    let mut time = 0.0;
    let mut current = eta0.clone();
    while current.size() >= 2 {
        let rate = death_rate(current.size(), theta);
        let hold = -rng.random::<f64>().ln() / rate;
        time += hold;
        if time > t_end {
            break;
        }
        current = sample_down_step(&current, rng);
        jump_times.push(time);
        states.push(current.clone());
    }
    Ok(DeathPath { jump_times, states })
}

/// Block-count marginal of the path simulation; cheaper when the partition
/// structure is not needed.
pub fn simulate_block_count<R: Rng + ?Sized>(
    n0: usize,
    theta: f64,
    t_end: f64,
    rng: &mut R,
) -> Result<usize> {
    if !(theta > -1.0) {
        return Err(Error::Domain(format!("theta must exceed -1, got {theta}")));
    }
    let mut n = n0;
    let mut time = 0.0;
    while n >= 2 {
        time += -rng.random::<f64>().ln() / death_rate(n, theta);
        if time > t_end {
            break;
        }
        n -= 1;
    }
    Ok(n)
}

/// A finite linear combination over the partition-indexed function basis.
#[derive(Clone, Debug, PartialEq)]
pub struct CoefficientMap<T: Scalar> {
    terms: BTreeMap<Partition, T>,
}

impl<T: Scalar> CoefficientMap<T> {
    pub fn new() -> Self {
        CoefficientMap {
            terms: BTreeMap::new(),
        }
    }

    pub fn add_term(&mut self, key: Partition, coeff: T) {
        let entry = self.terms.entry(key.clone()).or_insert_with(T::zero);
        *entry = entry.clone() + coeff;
        if self.terms.get(&key).map(|c| c.is_zero()).unwrap_or(false) {
            self.terms.remove(&key);
        }
    }

    pub fn get(&self, key: &Partition) -> Option<&T> {
        self.terms.get(key)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Partition, &T)> {
        self.terms.iter()
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn is_zero(&self) -> bool {
        self.terms.values().all(|c| c.is_zero())
    }

    /// Sum of all coefficients (the action on the constant function 1 when
    /// every basis element evaluates to 1 there).
    pub fn coefficient_sum(&self) -> T {
        let mut acc = T::zero();
        for c in self.terms.values() {
            acc = acc + c.clone();
        }
        acc
    }

    pub fn sub(&self, other: &Self) -> Self {
        let mut out = self.clone();
        for (k, c) in other.terms.iter() {
            out.add_term(k.clone(), -c.clone());
        }
        out
    }
}

impl<T: Scalar> Default for CoefficientMap<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> fmt::Display for CoefficientMap<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{")?;
        for (i, (k, c)) in self.terms.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{k}: {c:?}")?;
        }
        write!(f, "}}")
    }
}

fn half<T: Scalar>() -> T {
    T::one() / T::from_integer(2)
}

/// Coefficients of `L_{α,θ} P̃_η` in the `P̃` basis (closed form):
/// `−n(n+θ−1)/2` on `η`, `η_i(η_i−1−α)/2` on each non-singleton deletion,
/// `(θ+(d−1)α)/2` per singleton deletion. The empty partition is folded onto
/// `(1)` — both stand for the constant function 1.
pub fn generator_coefficients<T: Scalar>(eta: &Partition, p: &Params<T>) -> Result<CoefficientMap<T>> {
    if eta.is_empty() {
        return Err(Error::EmptyPartition);
    }
    let n = eta.size();
    let d = eta.len();
    let mut out = CoefficientMap::new();
    let nf = T::from_integer(n as i64);
    out.add_term(
        eta.clone(),
        -(half::<T>() * nf.clone() * (nf + p.theta().clone() - T::one())),
    );
    for (v, mult) in eta.distinct_parts() {
        let target = eta.remove_ball(v)?;
        let key = if target.is_empty() {
            Partition::new(vec![1])?
        } else {
            target
        };
        let coeff = if v > 1 {
            let vf = T::from_integer(v as i64);
            half::<T>()
                * T::from_integer(mult as i64)
                * vf.clone()
                * (vf - T::one() - p.alpha().clone())
        } else {
            half::<T>()
                * T::from_integer(mult as i64)
                * (p.theta().clone() + T::from_integer((d - 1) as i64) * p.alpha().clone())
        };
        out.add_term(key, coeff);
    }
    Ok(out)
}

/// Expands a `P̃`-basis combination over the singleton-free basis (the empty
/// partition standing for the constant 1).
pub fn expand_to_singleton_free<T: Scalar>(map: &CoefficientMap<T>) -> CoefficientMap<T> {
    let mut out = CoefficientMap::new();
    for (key, coeff) in map.iter() {
        for (lambda, c) in singleton_free_expansion(key).iter() {
            let w = T::from_big_rational(&BigRational::from_integer(c.clone()));
            out.add_term(lambda.clone(), coeff.clone() * w);
        }
    }
    out
}

/// Coefficients of `L_{α,θ} P̃_η` computed by the independent route: expand
/// `P̃_η` over the singleton-free basis first, apply the differential form of
/// the generator there (no singleton term arises), then re-expand. Output is
/// in the singleton-free basis and must agree exactly with
/// [`generator_coefficients`] after [`expand_to_singleton_free`].
pub fn generator_coefficients_via_elimination<T: Scalar>(
    eta: &Partition,
    p: &Params<T>,
) -> Result<CoefficientMap<T>> {
    if eta.is_empty() {
        return Err(Error::EmptyPartition);
    }
    let mut out = CoefficientMap::new();
    for (lambda, c) in singleton_free_expansion(eta).iter() {
        let weight = T::from_big_rational(&BigRational::from_integer(c.clone()));
        if lambda.is_empty() {
            continue; // L annihilates constants
        }
        let m = lambda.size();
        let mf = T::from_integer(m as i64);
        out.add_term(
            lambda.clone(),
            weight.clone() * -(half::<T>() * mf.clone() * (mf + p.theta().clone() - T::one())),
        );
        for (v, mult) in lambda.distinct_parts() {
            // all parts of λ are ≥ 2 here
            let vf = T::from_integer(v as i64);
            let coeff = weight.clone()
                * half::<T>()
                * T::from_integer(mult as i64)
                * vf.clone()
                * (vf - T::one() - p.alpha().clone());
            let target = lambda.remove_ball(v)?;
            // The deletion may create a singleton; re-expand.
            for (mu, c2) in singleton_free_expansion(&target).iter() {
                let w2 = T::from_big_rational(&BigRational::from_integer(c2.clone()));
                out.add_term(mu.clone(), coeff.clone() * w2);
            }
        }
    }
    Ok(out)
}

/// Coefficients of `A_θ g_η` in the `g` basis: `λ_n p↓(η,ω)` on each covered
/// `ω` and `−λ_n` on `η`, with `λ_n = n(n+θ−1)/2`.
pub fn dual_generator_coefficients<T: Scalar>(
    eta: &Partition,
    p: &Params<T>,
) -> Result<CoefficientMap<T>> {
    if eta.size() < 2 {
        return Err(Error::Domain(
            "dual generator acts on partitions of size ≥ 2".into(),
        ));
    }
    let n = eta.size();
    let nf = T::from_integer(n as i64);
    let lambda_n = half::<T>() * nf.clone() * (nf + p.theta().clone() - T::one());
    let mut out = CoefficientMap::new();
    out.add_term(eta.clone(), -lambda_n.clone());
    for (omega, mass) in down_step_distribution(eta)? {
        out.add_term(omega, lambda_n.clone() * T::from_big_rational(&mass));
    }
    Ok(out)
}

/// Coefficients of `L_{α,θ} g_η` in the `g` basis, obtained from the closed
/// form by the rescaling `g_λ = P̃_λ / E[P̃_λ]`. Exact equality with
/// [`dual_generator_coefficients`] is the generator-level duality identity.
pub fn generator_on_duality_function<T: Scalar>(
    eta: &Partition,
    p: &Params<T>,
) -> Result<CoefficientMap<T>> {
    let raw = generator_coefficients(eta, p)?;
    let e_eta = mean_augmented_monomial(eta, p);
    let mut out = CoefficientMap::new();
    for (lambda, coeff) in raw.iter() {
        let scale = mean_augmented_monomial(lambda, p) / e_eta.clone();
        out.add_term(lambda.clone(), coeff.clone() * scale);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use num_bigint::BigInt;
    use num_traits::Zero;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn pt(parts: &[usize]) -> Partition {
        Partition::new(parts.to_vec()).unwrap()
    }

    fn rat(n: i64, d: i64) -> BigRational {
        BigRational::new(BigInt::from(n), BigInt::from(d))
    }

    fn params_rat(alpha: (i64, i64), theta: (i64, i64)) -> Params<BigRational> {
        Params::new(rat(alpha.0, alpha.1), rat(theta.0, theta.1)).unwrap()
    }

    #[test]
    fn n2_holding_time_is_exact() {
        for theta in [-0.5, 0.0, 0.5, 1.0, 5.0] {
            for t in [0.01, 0.1, 1.0, 3.0] {
                let d = death_prob_finite(2, 2, theta, t).unwrap();
                assert_abs_diff_eq!(d, (-(1.0 + theta) * t).exp(), epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn identity_at_small_t() {
        let d = death_prob_finite(5, 5, 0.5, 1e-6).unwrap();
        assert!(d > 0.999, "d_55(1e-6) = {d}");
    }

    /// Hypoexponential (partial fraction) closed form for the pure-death
    /// occupancy; an independent evaluation route.
    fn death_prob_partial_fractions(n: usize, l: usize, theta: f64, t: f64) -> f64 {
        let lam = |k: usize| death_rate(k, theta);
        let mut prod_rates = 1.0;
        for j in (l + 1)..=n {
            prod_rates *= lam(j);
        }
        let mut acc = 0.0;
        for k in l..=n {
            let mut denom = 1.0;
            for j in l..=n {
                if j != k {
                    denom *= lam(j) - lam(k);
                }
            }
            acc += (-lam(k) * t).exp() / denom;
        }
        prod_rates * acc
    }

    #[test]
    fn series_matches_partial_fraction_oracle() {
        for theta in [-0.5, 0.0, 1.7] {
            for t in [0.3, 1.0] {
                for n in 1..=12usize {
                    for l in 1..=n {
                        let series = death_prob_finite(n, l, theta, t).unwrap();
                        let pf = death_prob_partial_fractions(n, l, theta, t);
                        assert!(
                            (series - pf).abs() < 1e-9,
                            "n={n} l={l} θ={theta} t={t}: {series} vs {pf}"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn small_t_cell_needs_and_gets_high_precision() {
        let sv = death_prob_finite_detailed(50, 3, 0.5, 0.01).unwrap();
        assert!(sv.precision_bits > 53, "expected escalation, got {sv:?}");
        assert!((0.0..=1.0).contains(&sv.value));
        // The whole escalated row still has unit mass.
        let table = DeathProbTable::finite(50, 0.5, 0.01).unwrap();
        assert!(table.precision_bits() > 53);
        let sum: f64 = table.probs().iter().sum();
        assert_abs_diff_eq!(sum, 1.0, epsilon = 1e-10);
    }

    #[test]
    fn finite_rows_sum_to_one() {
        for n in [2usize, 5, 10, 25] {
            for theta in [-0.5, 0.0, 1.0, 5.0] {
                for t in [0.01, 0.1, 1.0, 10.0] {
                    let table = DeathProbTable::finite(n, theta, t).unwrap();
                    let sum: f64 = table.probs().iter().sum();
                    assert_abs_diff_eq!(sum, 1.0, epsilon = 1e-10);
                    if theta >= 0.0 {
                        for &v in table.probs() {
                            assert!((0.0..=1.0).contains(&v));
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn infinite_is_the_finite_n_limit() {
        // Finite-start values converge at rate O(1/n); check the rate and
        // that the Richardson extrapolation lands on the infinite value.
        let inf = death_prob_infinite(2, 0.0, 1.0).unwrap();
        let f1 = death_prob_finite(2_000, 2, 0.0, 1.0).unwrap();
        let f2 = death_prob_finite(20_000, 2, 0.0, 1.0).unwrap();
        let (d1, d2) = (f1 - inf, f2 - inf);
        assert!(d1.abs() < 1e-3 && d2.abs() < 1e-4, "diffs {d1} {d2}");
        let rate = d1 / d2;
        assert!((rate - 10.0).abs() < 0.5, "not O(1/n): ratio {rate}");
        let richardson = (10.0 * f2 - f1) / 9.0;
        assert!((richardson - inf).abs() < 1e-6, "{richardson} vs {inf}");
    }

    #[test]
    fn infinite_start_totality() {
        for (theta, t) in [(0.5, 0.1), (0.5, 1.0), (0.5, 10.0)] {
            let table = DeathProbTable::from_infinity(theta, t).unwrap();
            let sum: f64 = table.probs().iter().sum();
            assert_abs_diff_eq!(sum, 1.0, epsilon = 1e-10);
        }
    }

    #[test]
    fn large_t_absorbs() {
        for l in 2..=6 {
            let d = death_prob_infinite(l, 1.0, 50.0).unwrap();
            assert!(d < 1e-12, "d_{l}(50) = {d}");
        }
        assert!(absorb_prob(1.0, 50.0).unwrap() > 1.0 - 1e-10);
    }

    #[test]
    fn absorb_prob_examples() {
        let a = absorb_prob(-0.5, 0.5).unwrap();
        assert!(a > 0.0 && a < 1.0, "d̃₁ = {a}");
        let near_zero = absorb_prob(1.0, 0.01).unwrap();
        assert!(near_zero < 1e-6, "d̃₁(0.01) = {near_zero}");
    }

    #[test]
    fn dual_transition_examples() {
        for theta in [0.3, 1.0] {
            for t in [0.2, 1.0] {
                let q = dual_transition(&pt(&[2]), &pt(&[2]), theta, t).unwrap();
                assert_abs_diff_eq!(q, (-(1.0 + theta) * t).exp(), epsilon = 1e-12);
            }
        }
        let q = dual_transition(&pt(&[2, 1]), &pt(&[2]), 1.0, 0.5).unwrap();
        let expect = death_prob_finite(3, 2, 1.0, 0.5).unwrap() / 3.0;
        assert_abs_diff_eq!(q, expect, epsilon = 1e-14);
        assert_eq!(
            dual_transition(&pt(&[2]), &pt(&[1, 1]), 1.0, 0.5).unwrap(),
            0.0
        );
    }

    #[test]
    fn dual_transition_totality() {
        let eta = pt(&[3, 2, 1]);
        for (theta, t) in [(1.0, 0.5), (-0.25, 1.0)] {
            let mut total = dual_transition(&eta, &pt(&[1]), theta, t).unwrap();
            for w in 2..=eta.size() {
                for omega in crate::partitions::enumerate_partitions(w).unwrap() {
                    total += dual_transition(&eta, &omega, theta, t).unwrap();
                }
            }
            assert_abs_diff_eq!(total, 1.0, epsilon = 1e-10);
        }
    }

    #[test]
    fn path_simulation_basics() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let path = simulate_death_path(&pt(&[1]), 1.0, 100.0, &mut rng).unwrap();
        assert!(path.jump_times.is_empty());
        assert_eq!(path.final_state(), &pt(&[1]));

        // Mean holding time at size 2 is 1/(1+θ).
        let theta = 0.7;
        let reps = 100_000;
        let mut acc = 0.0;
        for _ in 0..reps {
            let path = simulate_death_path(&pt(&[2]), theta, 1e9, &mut rng).unwrap();
            acc += path.jump_times[0];
        }
        let mean = acc / reps as f64;
        let expect = 1.0 / (1.0 + theta);
        let se = expect / (reps as f64).sqrt(); // exponential: sd = mean
        assert!((mean - expect).abs() < 3.0 * se, "{mean} vs {expect}");
    }

    #[test]
    fn path_sizes_strictly_decrease() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let path = simulate_death_path(&pt(&[4, 3, 2, 1]), 0.5, 0.8, &mut rng).unwrap();
        for w in path.states.windows(2) {
            assert_eq!(w[0].size(), w[1].size() + 1);
            assert!(w[0].contains(&w[1]));
        }
        assert_eq!(path.states.len(), path.jump_times.len() + 1);
    }

    #[test]
    fn block_count_sampler_sanity() {
        let table = DeathProbTable::from_infinity(1.0, 100.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            assert_eq!(table.sample_block_count(&mut rng), 1);
        }
    }

    #[test]
    fn generator_coefficients_examples() {
        let p = params_rat((1, 3), (1, 2));
        // η = (2): {(2): −(1+θ), (1): (1−α)}
        let g = generator_coefficients(&pt(&[2]), &p).unwrap();
        assert_eq!(g.get(&pt(&[2])).unwrap(), &-(rat(1, 1) + rat(1, 2)));
        assert_eq!(g.get(&pt(&[1])).unwrap(), &(rat(1, 1) - rat(1, 3)));
        // η = (1): L annihilates constants.
        let g1 = generator_coefficients(&pt(&[1]), &p).unwrap();
        assert!(g1.is_zero(), "{g1}");
        // η = (2,1): {(2,1): −(3/2)(2+θ), (1,1): 1−α, (2): (θ+α)/2}
        let g21 = generator_coefficients(&pt(&[2, 1]), &p).unwrap();
        assert_eq!(
            g21.get(&pt(&[2, 1])).unwrap(),
            &(-rat(3, 2) * (rat(2, 1) + rat(1, 2)))
        );
        assert_eq!(g21.get(&pt(&[1, 1])).unwrap(), &(rat(1, 1) - rat(1, 3)));
        assert_eq!(
            g21.get(&pt(&[2])).unwrap(),
            &((rat(1, 2) + rat(1, 3)) / rat(2, 1))
        );
    }

    #[test]
    fn generator_routes_agree_exactly() {
        for p in [params_rat((0, 1), (1, 1)), params_rat((1, 2), (-1, 4))] {
            for n in 1..=5 {
                for eta in crate::partitions::enumerate_partitions(n).unwrap() {
                    let a = expand_to_singleton_free(&generator_coefficients(&eta, &p).unwrap());
                    let b = generator_coefficients_via_elimination(&eta, &p).unwrap();
                    assert!(a.sub(&b).is_zero(), "η = {eta}");
                }
            }
        }
    }

    #[test]
    fn dual_generator_examples() {
        let p = params_rat((1, 3), (1, 2));
        let g = dual_generator_coefficients(&pt(&[2]), &p).unwrap();
        assert_eq!(g.get(&pt(&[2])).unwrap(), &-(rat(1, 1) + rat(1, 2)));
        assert_eq!(g.get(&pt(&[1])).unwrap(), &(rat(1, 1) + rat(1, 2)));

        // η = (2,1) at θ = 1: λ₃ = 3·(3+θ−1)/2 = 9/2, split 2/3 : 1/3.
        let p1 = params_rat((1, 4), (1, 1));
        let g = dual_generator_coefficients(&pt(&[2, 1]), &p1).unwrap();
        assert_eq!(g.get(&pt(&[2, 1])).unwrap(), &rat(-9, 2));
        assert_eq!(g.get(&pt(&[1, 1])).unwrap(), &rat(3, 1));
        assert_eq!(g.get(&pt(&[2])).unwrap(), &rat(3, 2));

        for n in 2..=5 {
            for eta in crate::partitions::enumerate_partitions(n).unwrap() {
                let g = dual_generator_coefficients(&eta, &p1).unwrap();
                assert!(g.coefficient_sum().is_zero(), "η = {eta}");
            }
        }
    }

    #[test]
    fn generator_duality_identity_small() {
        for p in [params_rat((0, 1), (1, 1)), params_rat((1, 2), (-1, 4))] {
            for n in 2..=5 {
                for eta in crate::partitions::enumerate_partitions(n).unwrap() {
                    let lhs = generator_on_duality_function(&eta, &p).unwrap();
                    let rhs = dual_generator_coefficients(&eta, &p).unwrap();
                    assert!(lhs.sub(&rhs).is_zero(), "η = {eta}");
                }
            }
        }
    }

    #[test]
    fn invalid_domains_rejected() {
        assert!(death_prob_finite(5, 2, -364.0, 1.0).is_err());
        assert!(death_prob_finite(5, 2, -1.0, 1.0).is_err());
        assert!(death_prob_finite(5, 2, 0.5, 0.0).is_err());
        assert!(death_prob_finite(5, 6, 0.5, 1.0).is_err());
        assert!(death_prob_finite(5, 0, 0.5, 1.0).is_err());
        assert!(simulate_death_path(&Partition::empty(), 0.5, 1.0, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
    }

    #[test]
    fn monotone_decay_of_staying_probability() {
        let mut last = 1.0;
        for i in 1..=8 {
            let t = 0.25 * i as f64;
            let d = death_prob_finite(6, 6, 0.5, t).unwrap();
            assert!(d < last, "d_66 not decreasing at t = {t}");
            last = d;
        }
    }
}
