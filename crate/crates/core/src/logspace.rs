//! Natural-log probability arithmetic.
//!
//! Every helper here is NaN-free for inputs containing `-inf`: an all `-inf`
//! reduction yields `-inf`, never `-inf - -inf`.

use rand::Rng;

pub const NEG_INF: f64 = f64::NEG_INFINITY;

/// `log(exp(a) + exp(b))`.
#[inline]
pub fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == NEG_INF {
        return b;
    }
    if b == NEG_INF {
        return a;
    }
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// `log(sum(exp(x)))` over a slice.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(NEG_INF, f64::max);
    if max == NEG_INF {
        return NEG_INF;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    let s: f64 = xs.iter().map(|&x| (x - max).exp()).sum();
    max + s.ln()
}

/// Subtracts the log-normalizer in place. Returns the normalizer.
pub fn normalize_in_place(xs: &mut [f64]) -> f64 {
    let z = log_sum_exp(xs);
    if z.is_finite() {
        for x in xs.iter_mut() {
            *x -= z;
        }
    }
    z
}

/// Draws an index with probability proportional to `exp(logits[i])`.
///
/// Entries equal to `-inf` are never chosen. Returns `None` when every entry
/// is `-inf`.
pub fn sample_log_categorical<R: Rng + ?Sized>(logits: &[f64], rng: &mut R) -> Option<usize> {
    let max = logits.iter().copied().fold(NEG_INF, f64::max);
    if max == NEG_INF {
        return None;
    }
    let total: f64 = logits.iter().map(|&l| (l - max).exp()).sum();
    let mut u = rng.random::<f64>() * total;
    let mut last = None;
    for (i, &l) in logits.iter().enumerate() {
        if l == NEG_INF {
            continue;
        }
        let p = (l - max).exp();
        if u < p {
            return Some(i);
        }
        u -= p;
        last = Some(i);
    }
    // rounding left u marginally above the final bucket
    last
}
