//! Constraint circuits and the queries they support: weighted model counting,
//! Boolean satisfaction, top-down sampling, conditional likelihoods,
//! marginals, and prefix feasibility masks.
//!
//! Queries assume a smooth, decomposable circuit (what the compiler emits);
//! sampling and conditional likelihoods additionally rely on determinism.
//! Positions outside the root's scope are unconstrained and handled as if the
//! root were smoothed over them.
//!
//! All arithmetic happens in natural-log space.

use std::fmt::Write as _;

use rand::Rng;

use crate::constraints::{Sequence, Token};
use crate::error::{Error, Result};
use crate::logspace::{log_add_exp, log_sum_exp, sample_log_categorical, NEG_INF};

pub type NodeId = usize;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Node {
    Or(Vec<NodeId>),
    And(Vec<NodeId>),
    Literal { pos: usize, tok: Token },
    True,
    False,
}

/// Set of positions, one bit each.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct PosSet(Vec<u64>);

impl PosSet {
    pub fn empty(n: usize) -> Self {
        PosSet(vec![0; n.div_ceil(64)])
    }

    pub fn insert(&mut self, i: usize) {
        self.0[i / 64] |= 1 << (i % 64);
    }

    pub fn contains(&self, i: usize) -> bool {
        self.0[i / 64] >> (i % 64) & 1 == 1
    }

    pub fn union_with(&mut self, other: &PosSet) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a |= b;
        }
    }

    pub fn is_disjoint(&self, other: &PosSet) -> bool {
        self.0.iter().zip(&other.0).all(|(a, b)| a & b == 0)
    }

    pub fn len(&self) -> usize {
        self.0.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.0.iter().all(|&w| w == 0)
    }
}

/// An AND/OR/literal DAG over `n` positions with `k` tokens each. Children
/// always precede their parents.
#[derive(Debug, Clone, PartialEq)]
pub struct Circuit {
    n: usize,
    k: usize,
    nodes: Vec<Node>,
    root: NodeId,
    root_scope: PosSet,
}

impl Circuit {
    /// Checks topological order, literal ranges and the root id.
    pub fn new(n: usize, k: usize, nodes: Vec<Node>, root: NodeId) -> Result<Self> {
        if n == 0 || k < 2 {
            return Err(Error::Parameter(format!("bad circuit shape {n}x{k}")));
        }
        for (id, node) in nodes.iter().enumerate() {
            match node {
                Node::Or(cs) | Node::And(cs) => {
                    if let Some(&c) = cs.iter().find(|&&c| c >= id) {
                        return Err(Error::Structure(format!(
                            "node {id} references {c}, which does not precede it (cycle or forward edge)"
                        )));
                    }
                }
                Node::Literal { pos, tok } => {
                    if *pos >= n || *tok as usize >= k {
                        return Err(Error::Index(format!(
                            "literal ({pos}, {tok}) outside {n}x{k}"
                        )));
                    }
                }
                Node::True | Node::False => {}
            }
        }
        if root >= nodes.len() {
            return Err(Error::Structure(format!("root {root} is not a node")));
        }
        let mut c = Circuit {
            n,
            k,
            nodes,
            root,
            root_scope: PosSet::empty(n),
        };
        c.root_scope = c.scopes().swap_remove(root);
        Ok(c)
    }

    /// The constant-false circuit.
    pub fn unsat(n: usize, k: usize) -> Self {
        Circuit::new(n, k, vec![Node::False], 0).expect("valid shape")
    }

    pub fn num_positions(&self) -> usize {
        self.n
    }

    pub fn vocab_size(&self) -> usize {
        self.k
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn root(&self) -> NodeId {
        self.root
    }

    pub fn is_false(&self) -> bool {
        matches!(self.nodes[self.root], Node::False)
    }

    pub fn num_edges(&self) -> usize {
        self.nodes
            .iter()
            .map(|n| match n {
                Node::Or(cs) | Node::And(cs) => cs.len(),
                _ => 0,
            })
            .sum()
    }

    /// Longest root-to-leaf path, in edges.
    pub fn depth(&self) -> usize {
        let mut d = vec![0usize; self.nodes.len()];
        for (id, node) in self.nodes.iter().enumerate() {
            if let Node::Or(cs) | Node::And(cs) = node {
                d[id] = 1 + cs.iter().map(|&c| d[c]).max().unwrap_or(0);
            }
        }
        d[self.root]
    }

    /// Scope of every node.
    pub fn scopes(&self) -> Vec<PosSet> {
        let mut out: Vec<PosSet> = Vec::with_capacity(self.nodes.len());
        for node in &self.nodes {
            let mut s = PosSet::empty(self.n);
            match node {
                Node::Literal { pos, .. } => s.insert(*pos),
                Node::Or(cs) | Node::And(cs) => {
                    for &c in cs {
                        s.union_with(&out[c]);
                    }
                }
                Node::True | Node::False => {}
            }
            out.push(s);
        }
        out
    }

    fn check_weights(&self, w: &LeafWeights) -> Result<()> {
        if w.n != self.n || w.k != self.k {
            return Err(Error::Shape {
                expected: format!("{}x{}", self.n, self.k),
                got: format!("{}x{}", w.n, w.k),
            });
        }
        Ok(())
    }

    fn check_sequence(&self, y: &[Token]) -> Result<()> {
        if y.len() != self.n {
            return Err(Error::Shape {
                expected: format!("sequence of length {}", self.n),
                got: format!("length {}", y.len()),
            });
        }
        if let Some(t) = y.iter().find(|&&t| t as usize >= self.k) {
            return Err(Error::Index(format!("token {t} outside vocabulary of {}", self.k)));
        }
        Ok(())
    }

    /// Bottom-up log-space pass: log-sum-exp at OR, sum at AND.
    pub fn evaluate(&self, w: &LeafWeights) -> Result<Evaluation> {
        self.check_weights(w)?;
        let mut values = Vec::with_capacity(self.nodes.len());
        let mut scratch = Vec::new();
        for node in &self.nodes {
            let v = match node {
                Node::True => 0.0,
                Node::False => NEG_INF,
                Node::Literal { pos, tok } => w.get(*pos, *tok as usize),
                Node::And(cs) => {
                    let mut s = 0.0;
                    for &c in cs {
                        s += values[c];
                        if s == NEG_INF {
                            break;
                        }
                    }
                    s
                }
                Node::Or(cs) => {
                    scratch.clear();
                    scratch.extend(cs.iter().map(|&c| values[c]));
                    log_sum_exp(&scratch)
                }
            };
            values.push(v);
        }
        let free: f64 = (0..self.n)
            .filter(|&i| !self.root_scope.contains(i))
            .map(|i| log_sum_exp(w.row(i)))
            .sum();
        let log_mass = if values[self.root] == NEG_INF {
            NEG_INF
        } else {
            values[self.root] + free
        };
        Ok(Evaluation { values, log_mass })
    }

    /// `log Σ_{y ⊨ c} Π_i w(i, y_i)`.
    pub fn wmc(&self, w: &LeafWeights) -> Result<f64> {
        Ok(self.evaluate(w)?.log_mass)
    }

    /// Boolean evaluation under the indicator weights of `y`.
    pub fn satisfies(&self, y: &[Token]) -> bool {
        if self.check_sequence(y).is_err() {
            return false;
        }
        let mut val = Vec::with_capacity(self.nodes.len());
        for node in &self.nodes {
            let v = match node {
                Node::True => true,
                Node::False => false,
                Node::Literal { pos, tok } => y[*pos] == *tok,
                Node::And(cs) => cs.iter().all(|&c| val[c]),
                Node::Or(cs) => cs.iter().any(|&c| val[c]),
            };
            val.push(v);
        }
        val[self.root]
    }

    /// Draws `y` with probability `Π_i w(i,y_i) [y ⊨ c] / WMC`.
    pub fn sample<R: Rng + ?Sized>(&self, w: &LeafWeights, rng: &mut R) -> Result<Sequence> {
        let eval = self.evaluate(w)?;
        self.sample_from(&eval, w, rng)
    }

    /// Top-down pass reusing the values of an earlier [`Circuit::evaluate`]
    /// on the same weights: one child per OR, every child of an AND.
    pub fn sample_from<R: Rng + ?Sized>(
        &self,
        eval: &Evaluation,
        w: &LeafWeights,
        rng: &mut R,
    ) -> Result<Sequence> {
        self.check_weights(w)?;
        if eval.log_mass == NEG_INF {
            return Err(Error::Unsatisfiable);
        }
        let mut y: Vec<Option<Token>> = vec![None; self.n];
        let mut stack = vec![self.root];
        let mut logits = Vec::new();
        while let Some(id) = stack.pop() {
            match &self.nodes[id] {
                Node::Literal { pos, tok } => y[*pos] = Some(*tok),
                Node::And(cs) => stack.extend(cs.iter().copied()),
                Node::Or(cs) => {
                    logits.clear();
                    logits.extend(cs.iter().map(|&c| eval.values[c]));
                    let pick = sample_log_categorical(&logits, rng).ok_or(Error::Unsatisfiable)?;
                    stack.push(cs[pick]);
                }
                Node::True => {}
                Node::False => return Err(Error::Unsatisfiable),
            }
        }
        y.iter()
            .enumerate()
            .map(|(i, t)| match t {
                Some(t) => Ok(*t),
                None => sample_log_categorical(w.row(i), rng)
                    .map(|j| j as Token)
                    .ok_or(Error::Unsatisfiable),
            })
            .collect()
    }

    /// `Σ_i log w(i, y_i) − WMC`, or `-inf` when `y` violates the circuit.
    pub fn conditional_logprob(&self, w: &LeafWeights, y: &[Token]) -> Result<f64> {
        let eval = self.evaluate(w)?;
        self.conditional_logprob_with(&eval, w, y)
    }

    pub fn conditional_logprob_with(
        &self,
        eval: &Evaluation,
        w: &LeafWeights,
        y: &[Token],
    ) -> Result<f64> {
        self.check_weights(w)?;
        self.check_sequence(y)?;
        if !self.satisfies(y) || eval.log_mass == NEG_INF {
            return Ok(NEG_INF);
        }
        let joint = w.score(y);
        if joint == NEG_INF {
            return Ok(NEG_INF);
        }
        Ok(joint - eval.log_mass)
    }

    /// Log-marginals `log Pr(y_i = j | c)` under the factorized weights,
    /// via one upward and one downward (derivative) pass.
    pub fn marginals(&self, w: &LeafWeights) -> Result<LeafWeights> {
        let eval = self.evaluate(w)?;
        if eval.log_mass == NEG_INF {
            return Err(Error::Unsatisfiable);
        }
        let v = &eval.values;
        // grad[id] = log ∂root/∂node
        let mut grad = vec![NEG_INF; self.nodes.len()];
        grad[self.root] = 0.0;
        let mut out = LeafWeights::filled(self.n, self.k, NEG_INF);
        for id in (0..self.nodes.len()).rev() {
            let g = grad[id];
            if g == NEG_INF {
                continue;
            }
            match &self.nodes[id] {
                Node::Or(cs) => {
                    for &c in cs {
                        grad[c] = log_add_exp(grad[c], g);
                    }
                }
                Node::And(cs) => {
                    for (a, &c) in cs.iter().enumerate() {
                        let others: f64 = cs
                            .iter()
                            .enumerate()
                            .filter(|&(b, _)| b != a)
                            .map(|(_, &o)| v[o])
                            .sum();
                        grad[c] = log_add_exp(grad[c], g + others);
                    }
                }
                Node::Literal { pos, tok } => {
                    let cell = out.get_mut(*pos, *tok as usize);
                    *cell = log_add_exp(*cell, g + v[id]);
                }
                Node::True | Node::False => {}
            }
        }
        let root_value = v[self.root];
        for i in 0..self.n {
            if self.root_scope.contains(i) {
                for j in 0..self.k {
                    let cell = out.get_mut(i, j);
                    if *cell != NEG_INF {
                        *cell -= root_value;
                    }
                }
            } else {
                let z = log_sum_exp(w.row(i));
                for j in 0..self.k {
                    let x = w.get(i, j);
                    *out.get_mut(i, j) = if x == NEG_INF { NEG_INF } else { x - z };
                }
            }
        }
        Ok(out)
    }

    /// Tokens `j` at position `i = prefix.len()` for which some completion of
    /// `prefix · j` satisfies the circuit.
    pub fn feasible_tokens(&self, prefix: &[Token]) -> Vec<bool> {
        let i = prefix.len();
        let mut mask = vec![false; self.k];
        if i >= self.n {
            return mask;
        }
        let lit_on = |pos: usize, tok: Token| pos >= prefix.len() || prefix[pos] == tok;
        let mut val = Vec::with_capacity(self.nodes.len());
        for node in &self.nodes {
            let b = match node {
                Node::True => true,
                Node::False => false,
                Node::Literal { pos, tok } => lit_on(*pos, *tok),
                Node::And(cs) => cs.iter().all(|&c| val[c]),
                Node::Or(cs) => cs.iter().any(|&c| val[c]),
            };
            val.push(b);
        }
        if !val[self.root] {
            return mask;
        }
        if !self.root_scope.contains(i) {
            mask.iter_mut().for_each(|m| *m = true);
            return mask;
        }
        let mut reach = vec![false; self.nodes.len()];
        reach[self.root] = true;
        for id in (0..self.nodes.len()).rev() {
            if !reach[id] {
                continue;
            }
            match &self.nodes[id] {
                // a reached AND has every child true
                Node::Or(cs) | Node::And(cs) => {
                    for &c in cs {
                        if val[c] {
                            reach[c] = true;
                        }
                    }
                }
                Node::Literal { pos, tok } if *pos == i => mask[*tok as usize] = true,
                _ => {}
            }
        }
        mask
    }

    /// Line format: `circuit n k`, one node per line (`L i j`, `T`, `F`,
    /// `A c..`, `O c..`) numbered from 0, then `root id`.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        writeln!(out, "circuit {} {}", self.n, self.k).unwrap();
        let join = |cs: &[NodeId]| cs.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(" ");
        for node in &self.nodes {
            match node {
                Node::Literal { pos, tok } => writeln!(out, "L {pos} {tok}").unwrap(),
                Node::True => out.push_str("T\n"),
                Node::False => out.push_str("F\n"),
                Node::And(cs) => writeln!(out, "A {}", join(cs)).unwrap(),
                Node::Or(cs) => writeln!(out, "O {}", join(cs)).unwrap(),
            }
        }
        writeln!(out, "root {}", self.root).unwrap();
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or_else(|| Error::parse(1, "empty circuit file"))?;
        let hw: Vec<&str> = header.split_whitespace().collect();
        if hw.len() != 3 || hw[0] != "circuit" {
            return Err(Error::parse(1, "expected header `circuit n k`"));
        }
        let num = |line: usize, w: &str| {
            w.parse::<usize>()
                .map_err(|_| Error::parse(line, format!("expected integer, found `{w}`")))
        };
        let n = num(1, hw[1])?;
        let k = num(1, hw[2])?;
        let mut nodes = Vec::new();
        let mut root = None;
        for (idx, line) in lines {
            let line_no = idx + 1;
            if root.is_some() {
                if line.trim().is_empty() {
                    continue;
                }
                return Err(Error::parse(line_no, "content after `root` line"));
            }
            let words: Vec<&str> = line.split_whitespace().collect();
            let Some((&op, rest)) = words.split_first() else {
                return Err(Error::parse(line_no, "blank node line"));
            };
            let args = rest.iter().map(|w| num(line_no, w)).collect::<Result<Vec<_>>>()?;
            let arity = |want: usize| {
                if args.len() == want {
                    Ok(())
                } else {
                    Err(Error::parse(line_no, format!("`{op}` takes {want} arguments")))
                }
            };
            let node = match op {
                "L" => {
                    arity(2)?;
                    Node::Literal { pos: args[0], tok: args[1] as Token }
                }
                "T" => {
                    arity(0)?;
                    Node::True
                }
                "F" => {
                    arity(0)?;
                    Node::False
                }
                "A" | "O" if args.is_empty() => {
                    return Err(Error::parse(line_no, format!("`{op}` needs children")))
                }
                "A" => Node::And(args),
                "O" => Node::Or(args),
                "root" => {
                    arity(1)?;
                    root = Some(args[0]);
                    continue;
                }
                other => return Err(Error::parse(line_no, format!("unknown node kind `{other}`"))),
            };
            nodes.push(node);
        }
        let root = root.ok_or_else(|| Error::parse(text.lines().count(), "missing `root` line"))?;
        Circuit::new(n, k, nodes, root)
    }
}

/// Per-node log-values from one upward pass, plus the total log-mass
/// including unconstrained positions.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub values: Vec<f64>,
    pub log_mass: f64,
}

/// An `n x k` grid of log-weights. Rows need not be normalized.
#[derive(Debug, Clone, PartialEq)]
pub struct LeafWeights {
    n: usize,
    k: usize,
    data: Vec<f64>,
}

/// The same grid viewed as a fully-factorized distribution.
pub type FactorizedTable = LeafWeights;

impl LeafWeights {
    pub fn new(n: usize, k: usize, log_weights: Vec<f64>) -> Result<Self> {
        if log_weights.len() != n * k {
            return Err(Error::Shape {
                expected: format!("{} entries", n * k),
                got: format!("{}", log_weights.len()),
            });
        }
        if log_weights.iter().any(|x| x.is_nan() || *x == f64::INFINITY) {
            return Err(Error::Parameter("log-weights must be finite or -inf".into()));
        }
        Ok(LeafWeights { n, k, data: log_weights })
    }

    pub fn filled(n: usize, k: usize, value: f64) -> Self {
        LeafWeights { n, k, data: vec![value; n * k] }
    }

    /// All weights one.
    pub fn ones(n: usize, k: usize) -> Self {
        Self::filled(n, k, 0.0)
    }

    /// Uniform normalized rows.
    pub fn uniform(n: usize, k: usize) -> Self {
        Self::filled(n, k, -(k as f64).ln())
    }

    /// From rows of (unnormalized) probabilities.
    pub fn from_probs(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let k = rows.first().map_or(0, Vec::len);
        if n == 0 || rows.iter().any(|r| r.len() != k) {
            return Err(Error::Shape {
                expected: "non-empty rectangular rows".into(),
                got: format!("{n} rows"),
            });
        }
        if rows.iter().flatten().any(|&p| !(p >= 0.0 && p.is_finite())) {
            return Err(Error::Parameter("probabilities must be finite and non-negative".into()));
        }
        Self::new(n, k, rows.iter().flatten().map(|p| p.ln()).collect())
    }

    /// Indicator weights of a full sequence.
    pub fn indicator(k: usize, y: &[Token]) -> Self {
        let mut w = Self::filled(y.len(), k, NEG_INF);
        for (i, &t) in y.iter().enumerate() {
            *w.get_mut(i, t as usize) = 0.0;
        }
        w
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> usize {
        self.k
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.k + j]
    }

    #[inline]
    pub fn get_mut(&mut self, i: usize, j: usize) -> &mut f64 {
        &mut self.data[i * self.k + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.k..(i + 1) * self.k]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.k..(i + 1) * self.k]
    }

    /// `Σ_i w(i, y_i)`.
    pub fn score(&self, y: &[Token]) -> f64 {
        y.iter().enumerate().map(|(i, &t)| self.get(i, t as usize)).sum()
    }

    /// `n` lines of `k` comma-separated probabilities.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for i in 0..self.n {
            let row: Vec<String> = self.row(i).iter().map(|x| format!("{}", x.exp())).collect();
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let rows = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(idx, l)| {
                l.split(',')
                    .map(|c| {
                        c.trim().parse::<f64>().map_err(|_| {
                            Error::parse(idx + 1, format!("expected probability, found `{}`", c.trim()))
                        })
                    })
                    .collect::<Result<Vec<f64>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_probs(&rows)
    }
}
