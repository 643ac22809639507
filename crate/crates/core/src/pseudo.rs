//! Contextual pseudolikelihood around a reference sequence.
//!
//! Row `i` of the table holds `p(y_i = j | ỹ_{-i})`, obtained by scoring
//! every Hamming-distance-1 perturbation of the context `ỹ` under the model
//! and normalizing within each position. The table is a fully-factorized
//! distribution and can therefore be conditioned on a circuit exactly.

use crate::armodel::AutoregressiveModel;
use crate::circuit::LeafWeights;
use crate::constraints::{Sequence, Token};
use crate::error::{Error, Result};
use crate::logspace::{normalize_in_place, NEG_INF};

#[derive(Debug, Clone, PartialEq)]
pub struct PseudoTable {
    pub context: Sequence,
    pub table: LeafWeights,
    pub temperature: f64,
    pub top_k: Option<usize>,
}

impl PseudoTable {
    /// Probability CSV, one row per position.
    pub fn to_csv(&self) -> String {
        self.table.to_csv()
    }
}

/// All `n·k` sequences at Hamming distance ≤ 1 from `context`, position-major.
pub fn perturbations(context: &[Token], k: usize) -> Vec<Sequence> {
    let mut out = Vec::with_capacity(context.len() * k);
    for i in 0..context.len() {
        for j in 0..k as Token {
            let mut y = context.to_vec();
            y[i] = j;
            out.push(y);
        }
    }
    out
}

/// Builds the tempered, optionally truncated table around `context`.
///
/// One batched model call scores all `n·k` perturbations. Logits are divided
/// by `temperature` after the per-position normalization. With `top_k`, each
/// row keeps its `top_k` largest entries plus the context's own token.
pub fn build_pseudo<M: AutoregressiveModel + ?Sized>(
    model: &M,
    context: &[Token],
    temperature: f64,
    top_k: Option<usize>,
) -> Result<PseudoTable> {
    let n = model.seq_len();
    let k = model.vocab_size();
    if context.len() != n {
        return Err(Error::Shape {
            expected: format!("context of length {n}"),
            got: format!("length {}", context.len()),
        });
    }
    if let Some(t) = context.iter().find(|&&t| t as usize >= k) {
        return Err(Error::Index(format!("context token {t} outside vocabulary {k}")));
    }
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(Error::Parameter(format!("temperature {temperature} must be positive")));
    }
    if let Some(tk) = top_k {
        if tk == 0 || tk > k {
            return Err(Error::Parameter(format!("top-k {tk} outside [1, {k}]")));
        }
    }
    let scores = model.logprob_batch(&perturbations(context, k));
    let mut table = LeafWeights::new(n, k, scores)?;
    for (i, &ctx) in context.iter().enumerate() {
        let row = table.row_mut(i);
        normalize_in_place(row);
        if temperature != 1.0 {
            for x in row.iter_mut() {
                if *x != NEG_INF {
                    *x /= temperature;
                }
            }
            normalize_in_place(row);
        }
        if let Some(tk) = top_k {
            if tk < k {
                truncate_row(row, tk, ctx as usize);
                normalize_in_place(row);
            }
        }
    }
    Ok(PseudoTable {
        context: context.to_vec(),
        table,
        temperature,
        top_k,
    })
}

fn truncate_row(row: &mut [f64], keep: usize, always: usize) {
    let mut order: Vec<usize> = (0..row.len()).collect();
    // stable: ties resolve to the lower token index
    order.sort_by(|&a, &b| row[b].total_cmp(&row[a]));
    for &j in &order[keep..] {
        if j != always {
            row[j] = NEG_INF;
        }
    }
}

/// `Σ_i log p̃(y_i)`; at `y = table.context` this is the pseudolikelihood of
/// the context itself.
pub fn psl_logprob(table: &PseudoTable, y: &[Token]) -> f64 {
    table.table.score(y)
}
