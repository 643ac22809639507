//! Instance generators for the experiment tasks. Every instance is a pure
//! function of `(task parameters, seed, index)`.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::armodel::{AutoregressiveModel, NGramAR, TabularAR};
use crate::circuit::Circuit;
use crate::compiler::{compile, CompileOptions};
use crate::constraints::{
    all_different, forbid_substrings, random_expr, valid_path, ConstraintExpr, Sequence, Token,
    VarGrid, MOVE_DOWN, MOVE_PAD, MOVE_RIGHT,
};
use crate::error::{Error, Result};
use crate::exec::{derive_seed, stream_rng};
use crate::oracle::adversarial_instance;
use crate::tokenize::ToyVocab;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum TaskKind {
    Paths,
    Latin,
    Sudoku4,
    Wordban,
    Synthetic,
    Adversarial,
}

impl TaskKind {
    pub const ALL: [TaskKind; 6] = [
        TaskKind::Paths,
        TaskKind::Latin,
        TaskKind::Sudoku4,
        TaskKind::Wordban,
        TaskKind::Synthetic,
        TaskKind::Adversarial,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TaskKind::Paths => "paths",
            TaskKind::Latin => "latin",
            TaskKind::Sudoku4 => "sudoku4",
            TaskKind::Wordban => "wordban",
            TaskKind::Synthetic => "synthetic",
            TaskKind::Adversarial => "adversarial",
        }
    }

    fn tag(self) -> u64 {
        self as u64 + 1
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TaskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        TaskKind::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| Error::Parameter(format!("unknown task {s:?}")))
    }
}

/// Task-specific `key=value` settings with typed, defaulted lookups.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TaskParams(pub BTreeMap<String, String>);

impl TaskParams {
    fn parsed<T: FromStr>(&self, key: &str, default: T) -> Result<T> {
        match self.0.get(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|_| Error::Parameter(format!("cannot parse {key}={v}"))),
        }
    }

    pub fn usize(&self, key: &str, default: usize) -> Result<usize> {
        self.parsed(key, default)
    }

    pub fn f64(&self, key: &str, default: f64) -> Result<f64> {
        self.parsed(key, default)
    }

    pub fn str<'a>(&'a self, key: &str, default: &'a str) -> &'a str {
        self.0.get(key).map_or(default, String::as_str)
    }

    pub fn list(&self, key: &str, default: &str) -> Vec<String> {
        self.str(key, default)
            .split(',')
            .map(|s| s.trim().to_string())
            .filter(|s| !s.is_empty())
            .collect()
    }
}

/// What counts as an exact answer, for tasks that define one.
#[derive(Debug, Clone, PartialEq)]
pub enum Truth {
    Sequence(Sequence),
    /// Any move string whose vertex cost equals the optimum.
    ShortestPath { width: usize, costs: Vec<u32>, best: u32 },
}

impl Truth {
    pub fn is_exact(&self, y: &[Token]) -> bool {
        match self {
            Truth::Sequence(s) => s.as_slice() == y,
            Truth::ShortestPath { width, costs, best } => path_cost(*width, costs, y) == Some(*best),
        }
    }
}

pub struct Instance {
    pub task: TaskKind,
    pub index: usize,
    pub grid: VarGrid,
    pub expr: ConstraintExpr,
    pub circuit: Circuit,
    pub model: Box<dyn AutoregressiveModel>,
    pub vocab: Option<ToyVocab>,
    pub truth: Option<Truth>,
}

impl fmt::Debug for Instance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Instance")
            .field("task", &self.task)
            .field("index", &self.index)
            .field("grid", &self.grid)
            .field("model", &self.model.describe())
            .field("truth", &self.truth)
            .finish()
    }
}

/// Random stream for instance `index` of `task` under `seed`.
pub fn instance_rng(task: TaskKind, seed: u64, index: usize) -> ChaCha8Rng {
    stream_rng(derive_seed(seed, &[task.tag(), index as u64]), 0)
}

pub fn generate(task: TaskKind, params: &TaskParams, seed: u64, index: usize) -> Result<Instance> {
    let mut rng = instance_rng(task, seed, index);
    let (grid, expr, model, vocab, truth) = match task {
        TaskKind::Paths => paths(params, &mut rng)?,
        TaskKind::Latin => latin(params, &mut rng)?,
        TaskKind::Sudoku4 => sudoku4(params, &mut rng)?,
        TaskKind::Wordban => wordban(params, &mut rng)?,
        TaskKind::Synthetic => synthetic(params, index, &mut rng)?,
        TaskKind::Adversarial => {
            let (m, e, g) = adversarial_instance();
            (g, e, Box::new(m) as Box<dyn AutoregressiveModel>, None, None)
        }
    };
    let circuit = compile(&expr, &grid, &CompileOptions::default())?;
    Ok(Instance { task, index, grid, expr, circuit, model, vocab, truth })
}

type Parts = (VarGrid, ConstraintExpr, Box<dyn AutoregressiveModel>, Option<ToyVocab>, Option<Truth>);

/// Sum of vertex costs along a monotone move string, or `None` if it leaves
/// the grid, misses the corner, or moves after padding.
pub fn path_cost(width: usize, costs: &[u32], moves: &[Token]) -> Option<u32> {
    let height = costs.len() / width;
    let (mut r, mut c) = (0, 0);
    let mut total = costs[0];
    let mut padded = false;
    for &m in moves {
        match m {
            MOVE_PAD => {
                padded = true;
                continue;
            }
            _ if padded => return None,
            MOVE_RIGHT => c += 1,
            MOVE_DOWN => r += 1,
            _ => return None,
        }
        if r >= height || c >= width {
            return None;
        }
        total += costs[r * width + c];
    }
    (r == height - 1 && c == width - 1).then_some(total)
}

/// Every monotone move string of a `width x height` vertex grid.
pub fn monotone_paths(width: usize, height: usize) -> Vec<Sequence> {
    fn rec(right: usize, down: usize, cur: &mut Sequence, out: &mut Vec<Sequence>) {
        if right == 0 && down == 0 {
            out.push(cur.clone());
            return;
        }
        for (left, tok) in [(right, MOVE_RIGHT), (down, MOVE_DOWN)] {
            if left > 0 {
                cur.push(tok);
                if tok == MOVE_RIGHT {
                    rec(right - 1, down, cur, out);
                } else {
                    rec(right, down - 1, cur, out);
                }
                cur.pop();
            }
        }
    }
    let mut out = Vec::new();
    rec(width - 1, height - 1, &mut Vec::new(), &mut out);
    out
}

fn paths(p: &TaskParams, rng: &mut ChaCha8Rng) -> Result<Parts> {
    let width = p.usize("width", 4)?;
    let height = p.usize("height", 4)?;
    let corpus_size = p.usize("corpus", 200)?;
    let temp = p.f64("corpus_temp", 0.5)?;
    let corruption = p.f64("corruption", 0.3)?;
    let order = p.usize("order", 4)?;
    let delta = p.f64("delta", 0.1)?;
    if !(0.0..=1.0).contains(&corruption) || temp <= 0.0 {
        return Err(Error::Parameter("paths needs corruption in [0,1] and corpus_temp > 0".into()));
    }
    let (grid, expr) = valid_path(width, height)?;
    let costs: Vec<u32> = (0..width * height).map(|_| rng.random_range(1..=9)).collect();
    let all = monotone_paths(width, height);
    let path_costs: Vec<u32> = all.iter().map(|m| path_cost(width, &costs, m).unwrap()).collect();
    let best = *path_costs.iter().min().unwrap();
    let weights: Vec<f64> = path_costs.iter().map(|&c| (-((c - best) as f64) / temp).exp()).collect();
    let pick = WeightedIndex::new(&weights).map_err(|e| Error::Parameter(e.to_string()))?;
    let corpus: Vec<Sequence> = (0..corpus_size)
        .map(|_| {
            let mut s = all[pick.sample(rng)].clone();
            for t in s.iter_mut() {
                if rng.random_bool(corruption) {
                    *t = rng.random_range(0..3);
                }
            }
            s
        })
        .collect();
    let model = NGramAR::fit(&corpus, 3, order, delta)?;
    let truth = Truth::ShortestPath { width, costs, best };
    Ok((grid, expr, Box::new(model), None, Some(truth)))
}

/// A random `s x s` Latin square, row-major: a cyclic square with shuffled
/// rows, columns and symbols.
pub fn random_latin_square<R: Rng + ?Sized>(s: usize, rng: &mut R) -> Sequence {
    let mut rows: Vec<usize> = (0..s).collect();
    let mut cols: Vec<usize> = (0..s).collect();
    let mut syms: Vec<Token> = (0..s as Token).collect();
    rows.shuffle(rng);
    cols.shuffle(rng);
    syms.shuffle(rng);
    let mut out = Vec::with_capacity(s * s);
    for &r in &rows {
        for &c in &cols {
            out.push(syms[(r + c) % s]);
        }
    }
    out
}

/// Row and column groups of an `s x s` square.
pub fn latin_groups(s: usize) -> Vec<Vec<usize>> {
    let mut g: Vec<Vec<usize>> = (0..s).map(|r| (0..s).map(|c| r * s + c).collect()).collect();
    g.extend((0..s).map(|c| (0..s).map(|r| r * s + c).collect()));
    g
}

/// Rows, columns and 2x2 boxes of a 4x4 grid.
pub fn sudoku4_groups() -> Vec<Vec<usize>> {
    let mut g = latin_groups(4);
    for br in [0, 2] {
        for bc in [0, 2] {
            g.push(vec![br * 4 + bc, br * 4 + bc + 1, (br + 1) * 4 + bc, (br + 1) * 4 + bc + 1]);
        }
    }
    g
}

/// All 288 completed 4x4 sudoku grids.
pub fn all_sudoku4() -> Vec<Sequence> {
    let groups = sudoku4_groups();
    let mut out = Vec::new();
    let mut cells: Sequence = Vec::with_capacity(16);
    fn rec(groups: &[Vec<usize>], cells: &mut Sequence, out: &mut Vec<Sequence>) {
        let i = cells.len();
        if i == 16 {
            out.push(cells.clone());
            return;
        }
        for t in 0..4 {
            let clash = groups
                .iter()
                .filter(|g| g.contains(&i))
                .any(|g| g.iter().any(|&j| j < i && cells[j] == t));
            if !clash {
                cells.push(t);
                rec(groups, cells, out);
                cells.pop();
            }
        }
    }
    rec(&groups, &mut cells, &mut out);
    out
}

fn latin_corpus<R: Rng + ?Sized>(s: usize, size: usize, rng: &mut R) -> Vec<Sequence> {
    (0..size).map(|_| random_latin_square(s, rng)).collect()
}

fn latin(p: &TaskParams, rng: &mut ChaCha8Rng) -> Result<Parts> {
    let s = p.usize("size", 4)?;
    let corpus = latin_corpus(s, p.usize("corpus", 500)?, rng);
    let model = NGramAR::fit(&corpus, s, p.usize("order", 3)?, p.f64("delta", 0.1)?)?;
    let grid = VarGrid::new(s * s, s, None)?;
    let expr = all_different(&grid, &latin_groups(s))?;
    Ok((grid, expr, Box::new(model), None, None))
}

fn sudoku4(p: &TaskParams, rng: &mut ChaCha8Rng) -> Result<Parts> {
    let lo = p.usize("missing_min", 4)?;
    let hi = p.usize("missing_max", 6)?;
    if lo == 0 || lo > hi || hi > 16 {
        return Err(Error::Parameter(format!("missing cells range {lo}..={hi} invalid")));
    }
    let grids = all_sudoku4();
    let (solution, givens) = loop {
        let sol = grids[rng.random_range(0..grids.len())].clone();
        let mut cells: Vec<usize> = (0..16).collect();
        cells.shuffle(rng);
        let holes = rng.random_range(lo..=hi);
        let givens: Vec<usize> = cells[holes..].to_vec();
        let matches = grids
            .iter()
            .filter(|g| givens.iter().all(|&i| g[i] == sol[i]))
            .count();
        if matches == 1 {
            break (sol, givens);
        }
    };
    let corpus = latin_corpus(4, p.usize("corpus", 500)?, rng);
    let model = NGramAR::fit(&corpus, 4, p.usize("order", 3)?, p.f64("delta", 0.1)?)?;
    let grid = VarGrid::new(16, 4, None)?;
    let mut parts = vec![all_different(&grid, &sudoku4_groups())?];
    parts.extend(givens.iter().map(|&i| ConstraintExpr::lit(i, solution[i])));
    Ok((grid, ConstraintExpr::and(parts), Box::new(model), None, Some(Truth::Sequence(solution))))
}

fn wordban(p: &TaskParams, rng: &mut ChaCha8Rng) -> Result<Parts> {
    let alphabet = p.str("alphabet", "abc").to_string();
    let words = p.list("words", "ab,ca");
    let n = p.usize("length", 5)?;
    let words_ref: Vec<&str> = words.iter().map(String::as_str).collect();
    let vocab = ToyVocab::for_words(&alphabet, &words_ref, true, Some('?'))?;
    let chars: Vec<char> = alphabet.chars().chain([' ', '?']).collect();
    let corpus: Vec<Sequence> = (0..p.usize("corpus", 400)?)
        .map(|_| {
            let len = rng.random_range(1..=n + 2);
            let text: String = (0..len).map(|_| chars[rng.random_range(0..chars.len())]).collect();
            let mut t = vocab.tokenize(&text).expect("catch-all covers every character");
            t.truncate(n);
            t.resize(n, vocab.pad());
            t
        })
        .collect();
    let k = vocab.len();
    let model = NGramAR::fit(&corpus, k, p.usize("order", 3)?, p.f64("delta", 0.1)?)?;
    let grid = VarGrid::new(n, k, Some(vocab.pad()))?;
    let mut banned = Vec::new();
    for w in &words {
        for piece in [w.clone(), format!(" {w}")] {
            if let Some(t) = vocab.id(&piece) {
                banned.push(vec![t]);
            }
        }
    }
    let expr = forbid_substrings(&grid, &banned)?;
    Ok((grid, expr, Box::new(model), Some(vocab), None))
}

/// Counts models of `expr` on `grid` by enumeration.
pub fn count_models(expr: &ConstraintExpr, grid: &VarGrid) -> usize {
    let total = grid.num_sequences().expect("tiny grid") as usize;
    let ev = expr.evaluator();
    let mut y = vec![0 as Token; grid.n];
    let mut count = 0;
    for mut idx in 0..total {
        for slot in y.iter_mut().rev() {
            *slot = (idx % grid.k) as Token;
            idx /= grid.k;
        }
        count += ev.eval(&y) as usize;
    }
    count
}

fn synthetic(p: &TaskParams, index: usize, rng: &mut ChaCha8Rng) -> Result<Parts> {
    let n = p.usize("n", 3)?;
    let ks: Vec<usize> = p
        .list("k", "3,4")
        .iter()
        .map(|s| s.parse().map_err(|_| Error::Parameter(format!("bad k {s:?}"))))
        .collect::<Result<_>>()?;
    if ks.is_empty() {
        return Err(Error::Parameter("synthetic needs at least one k".into()));
    }
    let k = ks[index % ks.len()];
    let lo = p.usize("min_models", 5)?;
    let hi = p.usize("max_models", 20)?;
    let grid = VarGrid::new(n, k, None)?;
    if grid.num_sequences().is_none_or(|s| s > 1 << 20) || lo > hi {
        return Err(Error::Parameter(format!("synthetic instance {n}x{k} with {lo}..={hi} models not supported")));
    }
    let depth = p.usize("depth", 4)?;
    let mut tries = 0;
    let expr = loop {
        let e = random_expr(&grid, depth, rng);
        if (lo..=hi).contains(&count_models(&e, &grid)) {
            break e;
        }
        tries += 1;
        if tries > 100_000 {
            return Err(Error::Parameter(format!("no random constraint with {lo}..={hi} models found")));
        }
    };
    let model = TabularAR::random(n, k, p.f64("spread", 1.0)?, rng)?;
    Ok((grid, expr, Box::new(model), None, None))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn there_are_288_sudoku4_grids() {
        let g = all_sudoku4();
        assert_eq!(g.len(), 288);
        let grid = VarGrid::new(16, 4, None).unwrap();
        let expr = all_different(&grid, &sudoku4_groups()).unwrap();
        assert!(g.iter().all(|s| expr.eval(s)));
    }

    #[test]
    fn latin_squares_are_latin() {
        let mut rng = instance_rng(TaskKind::Latin, 1, 0);
        let grid = VarGrid::new(16, 4, None).unwrap();
        let expr = all_different(&grid, &latin_groups(4)).unwrap();
        for _ in 0..50 {
            assert!(expr.eval(&random_latin_square(4, &mut rng)));
        }
    }

    #[test]
    fn path_costs_and_enumeration() {
        let costs = vec![1, 2, 3, 4];
        assert_eq!(path_cost(2, &costs, &[MOVE_RIGHT, MOVE_DOWN]), Some(1 + 2 + 4));
        assert_eq!(path_cost(2, &costs, &[MOVE_DOWN, MOVE_RIGHT]), Some(1 + 3 + 4));
        assert_eq!(path_cost(2, &costs, &[MOVE_RIGHT, MOVE_RIGHT]), None);
        assert_eq!(path_cost(2, &costs, &[MOVE_RIGHT, MOVE_PAD]), None);
        assert_eq!(monotone_paths(4, 4).len(), 20);
        let (grid, expr) = valid_path(4, 4).unwrap();
        assert_eq!(count_models(&expr, &grid), 20);
    }

    #[test]
    fn every_task_generates_deterministically() {
        for task in TaskKind::ALL {
            let params = TaskParams::default();
            let a = generate(task, &params, 9, 2).unwrap();
            let b = generate(task, &params, 9, 2).unwrap();
            assert_eq!(a.circuit.to_text(), b.circuit.to_text(), "{task}");
            assert_eq!(a.truth, b.truth);
            assert_eq!(a.model.describe(), b.model.describe());
            assert!(!a.circuit.is_false(), "{task}");
            if let Some(Truth::Sequence(s)) = &a.truth {
                assert!(a.circuit.satisfies(s));
            }
        }
    }

    #[test]
    fn sudoku_puzzles_have_one_model() {
        for i in 0..5 {
            let inst = generate(TaskKind::Sudoku4, &TaskParams::default(), 3, i).unwrap();
            assert_eq!(count_models_circuit(&inst.circuit), 1);
        }
    }

    fn count_models_circuit(c: &Circuit) -> u64 {
        let w = crate::circuit::LeafWeights::ones(c.num_positions(), c.vocab_size());
        c.wmc(&w).unwrap().exp().round() as u64
    }

    #[test]
    fn synthetic_model_counts_in_range() {
        for i in 0..6 {
            let inst = generate(TaskKind::Synthetic, &TaskParams::default(), 4, i).unwrap();
            let m = count_models(&inst.expr, &inst.grid);
            assert!((5..=20).contains(&m));
            assert_eq!(inst.grid.k, if i % 2 == 0 { 3 } else { 4 });
            assert_eq!(count_models_circuit(&inst.circuit), m as u64);
        }
    }

    #[test]
    fn wordban_bans_merged_tokens() {
        let inst = generate(TaskKind::Wordban, &TaskParams::default(), 5, 0).unwrap();
        let v = inst.vocab.as_ref().unwrap();
        let ab = v.id("ab").unwrap();
        let pad = v.pad();
        assert!(!inst.circuit.satisfies(&[ab, pad, pad, pad, pad]));
        let a = v.id("a").unwrap();
        let b = v.id("b").unwrap();
        // spelled out it satisfies the circuit but not after canonization
        assert!(inst.circuit.satisfies(&[a, b, pad, pad, pad]));
    }

    #[test]
    fn params_parse_and_reject() {
        let mut p = TaskParams::default();
        p.0.insert("width".into(), "x".into());
        assert!(p.usize("width", 4).is_err());
        assert_eq!(p.usize("height", 4).unwrap(), 4);
        assert!("nope".parse::<TaskKind>().is_err());
        assert_eq!("sudoku4".parse::<TaskKind>().unwrap(), TaskKind::Sudoku4);
    }
}
