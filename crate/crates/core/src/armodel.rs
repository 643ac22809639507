//! Autoregressive sequence models `p(y) = Π_i p(y_i | y_<i)`.
//!
//! Three desk-scale implementations sit behind [`AutoregressiveModel`]: an
//! explicit table over every prefix, a position-independent product model,
//! and an add-δ smoothed n-gram.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::Rng;

use crate::constraints::{Sequence, Token};
use crate::error::{Error, Result};
use crate::logspace::{log_sum_exp, normalize_in_place, sample_log_categorical, NEG_INF};

/// Tolerance for accepting a probability row as normalized.
const ROW_TOLERANCE: f64 = 1e-6;

pub trait AutoregressiveModel: Send + Sync {
    fn seq_len(&self) -> usize;

    fn vocab_size(&self) -> usize;

    /// Log-probabilities of the next token given `prefix` (`prefix.len() < n`).
    fn next_dist(&self, prefix: &[Token]) -> Vec<f64>;

    /// Chain-rule log-probability of a full sequence.
    fn logprob(&self, y: &[Token]) -> f64 {
        let mut total = 0.0;
        for i in 0..y.len() {
            total += self.next_dist(&y[..i])[y[i] as usize];
            if total == NEG_INF {
                break;
            }
        }
        total
    }

    /// Batched [`AutoregressiveModel::logprob`].
    fn logprob_batch(&self, ys: &[Sequence]) -> Vec<f64> {
        ys.iter().map(|y| self.logprob(y)).collect()
    }

    fn describe(&self) -> String;
}

/// Ancestral sampling, one position at a time.
pub fn ar_sample<M, R>(model: &M, rng: &mut R) -> Sequence
where
    M: AutoregressiveModel + ?Sized,
    R: Rng + ?Sized,
{
    let mut y = Vec::with_capacity(model.seq_len());
    for _ in 0..model.seq_len() {
        let dist = model.next_dist(&y);
        let t = sample_log_categorical(&dist, rng).expect("next-token rows are normalized");
        y.push(t as Token);
    }
    y
}

pub fn ar_logprob<M: AutoregressiveModel + ?Sized>(model: &M, y: &[Token]) -> f64 {
    model.logprob(y)
}

fn log_row(row: &[f64], k: usize, what: &str) -> Result<Vec<f64>> {
    if row.len() != k {
        return Err(Error::Shape {
            expected: format!("{k} probabilities"),
            got: format!("{} in {what}", row.len()),
        });
    }
    if row.iter().any(|&p| !(p >= 0.0 && p.is_finite())) {
        return Err(Error::Parameter(format!("{what}: probabilities must be finite and >= 0")));
    }
    let s: f64 = row.iter().sum();
    if (s - 1.0).abs() > ROW_TOLERANCE {
        return Err(Error::Parameter(format!("{what}: row sums to {s}")));
    }
    let mut logs: Vec<f64> = row.iter().map(|p| p.ln()).collect();
    normalize_in_place(&mut logs);
    Ok(logs)
}

/// Random normalized log-row with logits uniform in `[-spread, spread]`.
fn random_row<R: Rng + ?Sized>(k: usize, spread: f64, rng: &mut R) -> Vec<f64> {
    let mut row: Vec<f64> = (0..k).map(|_| rng.random_range(-spread..=spread)).collect();
    normalize_in_place(&mut row);
    row
}

/// Explicit next-token table for every prefix (feasible for small `k^n`).
///
/// Rows are stored shortlex: all prefixes of length 0, then length 1 in
/// lexicographic order, and so on.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularAR {
    n: usize,
    k: usize,
    offsets: Vec<usize>,
    rows: Vec<f64>,
}

impl TabularAR {
    fn num_rows(n: usize, k: usize) -> (Vec<usize>, usize) {
        let mut offsets = Vec::with_capacity(n);
        let mut total = 0usize;
        let mut width = 1usize;
        for _ in 0..n {
            offsets.push(total);
            total += width;
            width *= k;
        }
        (offsets, total)
    }

    fn check_shape(n: usize, k: usize) -> Result<()> {
        if n == 0 || k < 2 {
            return Err(Error::Parameter(format!("bad model shape n={n}, k={k}")));
        }
        let rows = (k as u64)
            .checked_pow(n as u32 - 1)
            .filter(|&r| r <= 4_000_000)
            .ok_or_else(|| Error::TooLarge(format!("tabular model with k={k}, n={n}")))?;
        let _ = rows;
        Ok(())
    }

    /// Rows of probabilities, one per prefix in shortlex order.
    pub fn new(n: usize, k: usize, prob_rows: &[Vec<f64>]) -> Result<Self> {
        Self::check_shape(n, k)?;
        let (offsets, total) = Self::num_rows(n, k);
        if prob_rows.len() != total {
            return Err(Error::Shape {
                expected: format!("{total} rows"),
                got: format!("{}", prob_rows.len()),
            });
        }
        let mut rows = Vec::with_capacity(total * k);
        for (r, row) in prob_rows.iter().enumerate() {
            rows.extend(log_row(row, k, &format!("row {r}"))?);
        }
        Ok(TabularAR { n, k, offsets, rows })
    }

    /// Builds the table by querying `f(prefix)` for log-probabilities.
    pub fn from_fn(n: usize, k: usize, mut f: impl FnMut(&[Token]) -> Vec<f64>) -> Result<Self> {
        Self::check_shape(n, k)?;
        let (offsets, total) = Self::num_rows(n, k);
        let mut rows = Vec::with_capacity(total * k);
        for len in 0..n {
            for idx in 0..(k as u64).pow(len as u32) {
                let prefix = decode(idx, len, k);
                let mut row = f(&prefix);
                if row.len() != k {
                    return Err(Error::Shape {
                        expected: format!("{k} log-probabilities"),
                        got: format!("{}", row.len()),
                    });
                }
                normalize_in_place(&mut row);
                rows.extend(row);
            }
        }
        Ok(TabularAR { n, k, offsets, rows })
    }

    pub fn uniform(n: usize, k: usize) -> Result<Self> {
        Self::from_fn(n, k, |_| vec![0.0; k])
    }

    /// Every row drawn independently with logits uniform in `[-spread, spread]`.
    pub fn random<R: Rng + ?Sized>(n: usize, k: usize, spread: f64, rng: &mut R) -> Result<Self> {
        Self::from_fn(n, k, |_| random_row(k, spread, rng))
    }

    /// Position `i` uses `rows[i]` regardless of the prefix.
    pub fn factorized(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let k = rows.first().map_or(0, Vec::len);
        let logs = rows
            .iter()
            .enumerate()
            .map(|(i, r)| log_row(r, k, &format!("position {i}")))
            .collect::<Result<Vec<_>>>()?;
        Self::from_fn(n, k, |p| logs[p.len()].clone())
    }

    fn row_index(&self, prefix: &[Token]) -> usize {
        let mut idx = 0usize;
        for &t in prefix {
            idx = idx * self.k + t as usize;
        }
        self.offsets[prefix.len()] + idx
    }

    fn row(&self, prefix: &[Token]) -> &[f64] {
        let r = self.row_index(prefix);
        &self.rows[r * self.k..(r + 1) * self.k]
    }

    /// `tabular n k`, then one comma-separated probability row per prefix.
    pub fn to_text(&self) -> String {
        let mut out = format!("tabular {} {}\n", self.n, self.k);
        for row in self.rows.chunks(self.k) {
            let cells: Vec<String> = row.iter().map(|l| format!("{}", l.exp())).collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines.next().ok_or_else(|| Error::parse(1, "empty model file"))?;
        let h: Vec<&str> = header.split_whitespace().collect();
        if h.len() != 3 || h[0] != "tabular" {
            return Err(Error::parse(1, "expected header `tabular n k`"));
        }
        let n: usize = h[1].parse().map_err(|_| Error::parse(1, "bad n"))?;
        let k: usize = h[2].parse().map_err(|_| Error::parse(1, "bad k"))?;
        let rows = lines
            .map(|(idx, l)| {
                l.split(',')
                    .map(|c| {
                        c.trim()
                            .parse::<f64>()
                            .map_err(|_| Error::parse(idx + 1, format!("bad probability `{}`", c.trim())))
                    })
                    .collect::<Result<Vec<f64>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(n, k, &rows)
    }
}

fn decode(mut idx: u64, len: usize, k: usize) -> Vec<Token> {
    let mut y = vec![0; len];
    for slot in y.iter_mut().rev() {
        *slot = (idx % k as u64) as Token;
        idx /= k as u64;
    }
    y
}

impl AutoregressiveModel for TabularAR {
    fn seq_len(&self) -> usize {
        self.n
    }

    fn vocab_size(&self) -> usize {
        self.k
    }

    fn next_dist(&self, prefix: &[Token]) -> Vec<f64> {
        self.row(prefix).to_vec()
    }

    fn logprob(&self, y: &[Token]) -> f64 {
        let mut total = 0.0;
        let mut idx = 0usize;
        for (i, &t) in y.iter().enumerate() {
            let r = self.offsets[i] + idx;
            total += self.rows[r * self.k + t as usize];
            idx = idx * self.k + t as usize;
        }
        total
    }

    fn describe(&self) -> String {
        format!("tabular(n={}, k={})", self.n, self.k)
    }
}

/// Position-independent model: `p(y) = Π_i rows[i][y_i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct IndependentAR {
    n: usize,
    k: usize,
    rows: Vec<f64>,
}

impl IndependentAR {
    pub fn new(prob_rows: &[Vec<f64>]) -> Result<Self> {
        let n = prob_rows.len();
        let k = prob_rows.first().map_or(0, Vec::len);
        if n == 0 || k < 2 {
            return Err(Error::Parameter(format!("bad model shape n={n}, k={k}")));
        }
        let mut rows = Vec::with_capacity(n * k);
        for (i, r) in prob_rows.iter().enumerate() {
            rows.extend(log_row(r, k, &format!("position {i}"))?);
        }
        Ok(IndependentAR { n, k, rows })
    }

    pub fn random<R: Rng + ?Sized>(n: usize, k: usize, spread: f64, rng: &mut R) -> Result<Self> {
        if n == 0 || k < 2 {
            return Err(Error::Parameter(format!("bad model shape n={n}, k={k}")));
        }
        let rows = (0..n).flat_map(|_| random_row(k, spread, rng)).collect();
        Ok(IndependentAR { n, k, rows })
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.rows[i * self.k..(i + 1) * self.k]
    }
}

impl AutoregressiveModel for IndependentAR {
    fn seq_len(&self) -> usize {
        self.n
    }

    fn vocab_size(&self) -> usize {
        self.k
    }

    fn next_dist(&self, prefix: &[Token]) -> Vec<f64> {
        self.row(prefix.len()).to_vec()
    }

    fn logprob(&self, y: &[Token]) -> f64 {
        y.iter().enumerate().map(|(i, &t)| self.rows[i * self.k + t as usize]).sum()
    }

    fn describe(&self) -> String {
        format!("independent(n={}, k={})", self.n, self.k)
    }
}

/// Add-δ smoothed n-gram of order `m`: the next token depends on the previous
/// `m - 1` tokens, with a begin-of-sequence marker filling missing history.
///
/// A context with no observations and `δ = 0` falls back to the uniform row.
#[derive(Debug, Clone, PartialEq)]
pub struct NGramAR {
    order: usize,
    delta: f64,
    n: usize,
    k: usize,
    counts: BTreeMap<Vec<Token>, Vec<f64>>,
}

impl NGramAR {
    /// Begin-of-sequence marker inside contexts.
    fn bos(&self) -> Token {
        self.k as Token
    }

    fn context(&self, prefix: &[Token]) -> Vec<Token> {
        let h = self.order - 1;
        let mut ctx = vec![self.bos(); h.saturating_sub(prefix.len())];
        ctx.extend_from_slice(&prefix[prefix.len().saturating_sub(h)..]);
        ctx
    }

    pub fn fit(corpus: &[Sequence], k: usize, order: usize, delta: f64) -> Result<Self> {
        let first = corpus
            .first()
            .ok_or_else(|| Error::Parameter("n-gram corpus is empty".into()))?;
        let n = first.len();
        if n == 0 || k < 2 || order == 0 {
            return Err(Error::Parameter(format!("bad n-gram shape n={n}, k={k}, order={order}")));
        }
        if !(delta >= 0.0 && delta.is_finite()) {
            return Err(Error::Parameter(format!("smoothing δ={delta} must be >= 0")));
        }
        let mut model = NGramAR { order, delta, n, k, counts: BTreeMap::new() };
        for (s, seq) in corpus.iter().enumerate() {
            if seq.len() != n {
                return Err(Error::Shape {
                    expected: format!("corpus sequences of length {n}"),
                    got: format!("length {} at sequence {s}", seq.len()),
                });
            }
            if let Some(t) = seq.iter().find(|&&t| t as usize >= k) {
                return Err(Error::Index(format!("token {t} in sequence {s} outside vocabulary {k}")));
            }
            for i in 0..n {
                let ctx = model.context(&seq[..i]);
                model.counts.entry(ctx).or_insert_with(|| vec![0.0; k])[seq[i] as usize] += 1.0;
            }
        }
        Ok(model)
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    /// `ngram order delta n k`, then `ctx.. | counts..` per observed context
    /// (`^` is the begin-of-sequence marker).
    pub fn to_text(&self) -> String {
        let mut out = format!("ngram {} {} {} {}\n", self.order, self.delta, self.n, self.k);
        for (ctx, counts) in &self.counts {
            let c: Vec<String> = ctx
                .iter()
                .map(|&t| if t == self.bos() { "^".to_string() } else { t.to_string() })
                .collect();
            let v: Vec<String> = counts.iter().map(|x| format!("{x}")).collect();
            writeln!(out, "{} | {}", c.join(" "), v.join(" ")).unwrap();
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines.next().ok_or_else(|| Error::parse(1, "empty model file"))?;
        let h: Vec<&str> = header.split_whitespace().collect();
        if h.len() != 5 || h[0] != "ngram" {
            return Err(Error::parse(1, "expected header `ngram order delta n k`"));
        }
        let bad = |what: &str| Error::parse(1, format!("bad {what}"));
        let order: usize = h[1].parse().map_err(|_| bad("order"))?;
        let delta: f64 = h[2].parse().map_err(|_| bad("delta"))?;
        let n: usize = h[3].parse().map_err(|_| bad("n"))?;
        let k: usize = h[4].parse().map_err(|_| bad("k"))?;
        if order == 0 || n == 0 || k < 2 || delta.is_nan() || delta < 0.0 {
            return Err(Error::parse(1, "invalid n-gram parameters"));
        }
        let mut counts = BTreeMap::new();
        for (idx, line) in lines {
            let ln = idx + 1;
            let (ctx, vals) = line
                .split_once('|')
                .ok_or_else(|| Error::parse(ln, "expected `context | counts`"))?;
            let ctx = ctx
                .split_whitespace()
                .map(|w| {
                    if w == "^" {
                        Ok(k as Token)
                    } else {
                        w.parse::<Token>()
                            .ok()
                            .filter(|&t| (t as usize) < k)
                            .ok_or_else(|| Error::parse(ln, format!("bad context token `{w}`")))
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            if ctx.len() != order - 1 {
                return Err(Error::parse(ln, format!("context must have {} tokens", order - 1)));
            }
            let vals = vals
                .split_whitespace()
                .map(|w| {
                    w.parse::<f64>()
                        .ok()
                        .filter(|x| *x >= 0.0)
                        .ok_or_else(|| Error::parse(ln, format!("bad count `{w}`")))
                })
                .collect::<Result<Vec<_>>>()?;
            if vals.len() != k {
                return Err(Error::parse(ln, format!("expected {k} counts")));
            }
            counts.insert(ctx, vals);
        }
        Ok(NGramAR { order, delta, n, k, counts })
    }
}

impl AutoregressiveModel for NGramAR {
    fn seq_len(&self) -> usize {
        self.n
    }

    fn vocab_size(&self) -> usize {
        self.k
    }

    fn next_dist(&self, prefix: &[Token]) -> Vec<f64> {
        let uniform = || vec![-(self.k as f64).ln(); self.k];
        // unseen context: add-δ gives uniform for δ > 0, and δ = 0 falls back to it
        let Some(counts) = self.counts.get(&self.context(prefix)) else {
            return uniform();
        };
        let total: f64 = counts.iter().sum::<f64>() + self.delta * self.k as f64;
        if total <= 0.0 {
            return uniform();
        }
        let mut row: Vec<f64> = counts.iter().map(|c| ((c + self.delta) / total).ln()).collect();
        // guard the last ulp so rows exp-sum to one
        let z = log_sum_exp(&row);
        row.iter_mut().for_each(|x| *x -= z);
        row
    }

    fn describe(&self) -> String {
        format!("ngram(order={}, δ={}, n={}, k={})", self.order, self.delta, self.n, self.k)
    }
}

/// Reads a tabular or n-gram model file, dispatching on its header.
pub fn load_model(text: &str) -> Result<Box<dyn AutoregressiveModel>> {
    let head = text.split_whitespace().next().unwrap_or("");
    match head {
        "tabular" => Ok(Box::new(TabularAR::from_text(text)?)),
        "ngram" => Ok(Box::new(NGramAR::from_text(text)?)),
        other => Err(Error::parse(1, format!("unknown model kind `{other}`"))),
    }
}
