//! Boolean constraints over position/token indicator variables.
//!
//! A sequence of `n` tokens drawn from a vocabulary of `k` corresponds to the
//! indicator grid `Y[i][j]`, true iff position `i` carries token `j`. The
//! exactly-one-per-position rule is part of the data model: expressions are
//! only ever evaluated against token sequences, so it never appears as
//! clauses.
//!
//! Expressions are reference-counted DAGs. Builders such as [`exactly_k`]
//! share sub-expressions, which keeps cardinality encodings polynomial.

use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;
use std::sync::Arc;

use rand::Rng;

use crate::error::{Error, Result};

pub type Token = u32;
pub type Sequence = Vec<Token>;

/// Shape of the indicator grid: `n` positions, `k` tokens each.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct VarGrid {
    pub n: usize,
    pub k: usize,
    pub pad: Option<Token>,
}

impl VarGrid {
    pub fn new(n: usize, k: usize, pad: Option<Token>) -> Result<Self> {
        if n < 1 {
            return Err(Error::Parameter("grid needs at least one position".into()));
        }
        if k < 2 {
            return Err(Error::Parameter(format!("vocabulary size {k} < 2")));
        }
        if let Some(p) = pad {
            if p as usize >= k {
                return Err(Error::Index(format!("pad token {p} outside vocabulary of {k}")));
            }
        }
        Ok(VarGrid { n, k, pad })
    }

    pub fn check(&self, i: usize, j: usize) -> Result<()> {
        if i >= self.n || j >= self.k {
            return Err(Error::Index(format!(
                "Y[{i}][{j}] outside grid {}x{}",
                self.n, self.k
            )));
        }
        Ok(())
    }

    /// Number of full assignments, `k^n`, or `None` on overflow.
    pub fn num_sequences(&self) -> Option<u64> {
        (self.k as u64).checked_pow(self.n as u32)
    }
}

#[derive(Debug, PartialEq, Eq, Hash)]
pub enum ExprNode {
    True,
    False,
    Var { pos: usize, tok: Token },
    Not(ConstraintExpr),
    And(Vec<ConstraintExpr>),
    Or(Vec<ConstraintExpr>),
    Implies(ConstraintExpr, ConstraintExpr),
}

/// A Boolean formula over the indicators of a [`VarGrid`].
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ConstraintExpr(Arc<ExprNode>);

impl ConstraintExpr {
    fn wrap(node: ExprNode) -> Self {
        ConstraintExpr(Arc::new(node))
    }

    pub fn node(&self) -> &ExprNode {
        &self.0
    }

    fn key(&self) -> *const ExprNode {
        Arc::as_ptr(&self.0)
    }

    pub fn top() -> Self {
        Self::wrap(ExprNode::True)
    }

    pub fn bottom() -> Self {
        Self::wrap(ExprNode::False)
    }

    /// Unchecked literal; see [`var`] for the range-checked constructor.
    pub fn lit(pos: usize, tok: Token) -> Self {
        Self::wrap(ExprNode::Var { pos, tok })
    }

    #[allow(clippy::should_implement_trait)]
    pub fn not(self) -> Self {
        Self::wrap(ExprNode::Not(self))
    }

    pub fn and(children: Vec<ConstraintExpr>) -> Self {
        match children.len() {
            0 => Self::top(),
            1 => children.into_iter().next().unwrap(),
            _ => Self::wrap(ExprNode::And(children)),
        }
    }

    pub fn or(children: Vec<ConstraintExpr>) -> Self {
        match children.len() {
            0 => Self::bottom(),
            1 => children.into_iter().next().unwrap(),
            _ => Self::wrap(ExprNode::Or(children)),
        }
    }

    pub fn implies(self, then: ConstraintExpr) -> Self {
        Self::wrap(ExprNode::Implies(self, then))
    }

    /// Children in evaluation order.
    fn children(&self) -> Vec<&ConstraintExpr> {
        match self.node() {
            ExprNode::True | ExprNode::False | ExprNode::Var { .. } => vec![],
            ExprNode::Not(c) => vec![c],
            ExprNode::And(cs) | ExprNode::Or(cs) => cs.iter().collect(),
            ExprNode::Implies(a, b) => vec![a, b],
        }
    }

    /// Distinct nodes in post-order (children before parents).
    pub fn post_order(&self) -> Vec<&ConstraintExpr> {
        let mut seen = HashMap::new();
        let mut out = Vec::new();
        // explicit stack; formulas from exactly_k can be deep
        let mut stack: Vec<(&ConstraintExpr, bool)> = vec![(self, false)];
        while let Some((e, expanded)) = stack.pop() {
            if seen.contains_key(&e.key()) {
                continue;
            }
            if expanded {
                seen.insert(e.key(), out.len());
                out.push(e);
            } else {
                stack.push((e, true));
                for c in e.children().into_iter().rev() {
                    if !seen.contains_key(&c.key()) {
                        stack.push((c, false));
                    }
                }
            }
        }
        out
    }

    /// Evaluates the formula on a full assignment. Repeated evaluation of the
    /// same formula should go through [`ConstraintExpr::evaluator`].
    pub fn eval(&self, y: &[Token]) -> bool {
        self.evaluator().eval(y)
    }

    /// Flattens the DAG once so that each later evaluation is a single pass
    /// over a vector with no hashing.
    pub fn evaluator(&self) -> Evaluator {
        let order = self.post_order();
        let index: HashMap<*const ExprNode, u32> =
            order.iter().enumerate().map(|(i, e)| (e.key(), i as u32)).collect();
        let mut ops = Vec::with_capacity(order.len());
        let mut kids = Vec::new();
        let span = |cs: &[ConstraintExpr], kids: &mut Vec<u32>| {
            let start = kids.len() as u32;
            kids.extend(cs.iter().map(|c| index[&c.key()]));
            (start, kids.len() as u32)
        };
        for e in &order {
            ops.push(match e.node() {
                ExprNode::True => Op::Const(true),
                ExprNode::False => Op::Const(false),
                ExprNode::Var { pos, tok } => Op::Var(*pos, *tok),
                ExprNode::Not(c) => Op::Not(index[&c.key()]),
                ExprNode::And(cs) => {
                    let (a, b) = span(cs, &mut kids);
                    Op::And(a, b)
                }
                ExprNode::Or(cs) => {
                    let (a, b) = span(cs, &mut kids);
                    Op::Or(a, b)
                }
                ExprNode::Implies(a, b) => Op::Implies(index[&a.key()], index[&b.key()]),
            });
        }
        Evaluator { ops, kids }
    }

    /// Every `(position, token)` literal mentioned.
    pub fn literals(&self) -> BTreeSet<(usize, Token)> {
        self.post_order()
            .into_iter()
            .filter_map(|e| match e.node() {
                ExprNode::Var { pos, tok } => Some((*pos, *tok)),
                _ => None,
            })
            .collect()
    }

    /// Fails if any literal falls outside `grid`.
    pub fn check_grid(&self, grid: &VarGrid) -> Result<()> {
        for (i, j) in self.literals() {
            grid.check(i, j as usize)?;
        }
        Ok(())
    }

    /// Number of distinct DAG nodes.
    pub fn size(&self) -> usize {
        self.post_order().len()
    }
}

/// Range-checked indicator literal `Y[i][j]`.
pub fn var(grid: &VarGrid, i: usize, j: usize) -> Result<ConstraintExpr> {
    grid.check(i, j)?;
    Ok(ConstraintExpr::lit(i, j as Token))
}

/// Forbids each token word from appearing contiguously at any start position
/// `0..=n-len(word)`. An empty list yields `True`.
pub fn forbid_substrings(grid: &VarGrid, banned: &[Vec<Token>]) -> Result<ConstraintExpr> {
    let mut clauses = Vec::new();
    for word in banned {
        if word.is_empty() {
            return Err(Error::Parameter("banned word is empty".into()));
        }
        if word.len() > grid.n {
            return Err(Error::Parameter(format!(
                "banned word of length {} exceeds sequence length {}",
                word.len(),
                grid.n
            )));
        }
        for start in 0..=grid.n - word.len() {
            let window = word
                .iter()
                .enumerate()
                .map(|(o, &t)| var(grid, start + o, t as usize))
                .collect::<Result<Vec<_>>>()?;
            clauses.push(ConstraintExpr::and(window).not());
        }
    }
    Ok(ConstraintExpr::and(clauses))
}

#[derive(Debug, Clone, Copy)]
enum Op {
    Const(bool),
    Var(usize, Token),
    Not(u32),
    And(u32, u32),
    Or(u32, u32),
    Implies(u32, u32),
}

/// A formula laid out in post-order for fast repeated evaluation.
#[derive(Debug, Clone)]
pub struct Evaluator {
    ops: Vec<Op>,
    kids: Vec<u32>,
}

impl Evaluator {
    pub fn eval(&self, y: &[Token]) -> bool {
        let mut val = vec![false; self.ops.len()];
        for (i, op) in self.ops.iter().enumerate() {
            val[i] = match *op {
                Op::Const(b) => b,
                Op::Var(pos, tok) => y.get(pos) == Some(&tok),
                Op::Not(c) => !val[c as usize],
                Op::And(a, b) => self.kids[a as usize..b as usize].iter().all(|&c| val[c as usize]),
                Op::Or(a, b) => self.kids[a as usize..b as usize].iter().any(|&c| val[c as usize]),
                Op::Implies(a, b) => !val[a as usize] || val[b as usize],
            };
        }
        val.last().copied().unwrap_or(true)
    }
}

/// No token repeats inside any group of positions.
///
/// A group larger than `k` cannot be satisfied under exactly-one semantics;
/// such input short-circuits to `False`.
pub fn all_different(grid: &VarGrid, groups: &[Vec<usize>]) -> Result<ConstraintExpr> {
    let mut clauses = Vec::new();
    for group in groups {
        for &p in group {
            grid.check(p, 0)?;
        }
        if group.len() > grid.k {
            return Ok(ConstraintExpr::bottom());
        }
        for t in 0..grid.k as Token {
            for (a, &p) in group.iter().enumerate() {
                for &q in &group[a + 1..] {
                    clauses.push(
                        ConstraintExpr::and(vec![
                            ConstraintExpr::lit(p, t),
                            ConstraintExpr::lit(q, t),
                        ])
                        .not(),
                    );
                }
            }
        }
    }
    Ok(ConstraintExpr::and(clauses))
}

/// Exactly `count` of the listed indicators hold.
///
/// Built as the shared decision DAG `E(i, c) = (v_i ∧ E(i+1, c-1)) ∨ (¬v_i ∧ E(i+1, c))`
/// with `O(|vars| · count)` distinct nodes.
pub fn exactly_k(grid: &VarGrid, vars: &[(usize, usize)], count: usize) -> Result<ConstraintExpr> {
    for &(i, j) in vars {
        grid.check(i, j)?;
    }
    if count > vars.len() {
        return Err(Error::Parameter(format!(
            "count {count} exceeds {} variables",
            vars.len()
        )));
    }
    let lits: Vec<ConstraintExpr> = vars
        .iter()
        .map(|&(i, j)| ConstraintExpr::lit(i, j as Token))
        .collect();
    let m = lits.len();
    // table[c] holds E(i, c) for the current suffix start i
    let mut table: Vec<ConstraintExpr> = (0..=count)
        .map(|c| {
            if c == 0 {
                ConstraintExpr::top()
            } else {
                ConstraintExpr::bottom()
            }
        })
        .collect();
    for i in (0..m).rev() {
        let remaining = m - i;
        let mut next = Vec::with_capacity(count + 1);
        for c in 0..=count {
            let e = if c > remaining {
                ConstraintExpr::bottom()
            } else if c == 0 {
                ConstraintExpr::and(lits[i..].iter().map(|l| l.clone().not()).collect())
            } else if c == remaining {
                ConstraintExpr::and(lits[i..].to_vec())
            } else {
                ConstraintExpr::or(vec![
                    ConstraintExpr::and(vec![lits[i].clone(), table[c - 1].clone()]),
                    ConstraintExpr::and(vec![lits[i].clone().not(), table[c].clone()]),
                ])
            };
            next.push(e);
        }
        table = next;
    }
    Ok(table.swap_remove(count))
}

/// Move tokens used by the path builders.
pub const MOVE_RIGHT: Token = 0;
pub const MOVE_DOWN: Token = 1;
pub const MOVE_PAD: Token = 2;

/// Monotone right/down paths from the upper-left to the lower-right vertex of
/// a `width x height` vertex grid, one move per position and no padding.
pub fn valid_path(width: usize, height: usize) -> Result<(VarGrid, ConstraintExpr)> {
    if width == 0 || height == 0 {
        return Err(Error::Parameter("path grid dimensions must be positive".into()));
    }
    let steps = (width - 1) + (height - 1);
    valid_path_padded(width, height, steps)
}

/// Like [`valid_path`] over `len ≥ (width-1)+(height-1)` positions: the move
/// string reaches the corner exactly at its last move and is pad afterwards.
pub fn valid_path_padded(
    width: usize,
    height: usize,
    len: usize,
) -> Result<(VarGrid, ConstraintExpr)> {
    if width == 0 || height == 0 {
        return Err(Error::Parameter("path grid dimensions must be positive".into()));
    }
    let steps = (width - 1) + (height - 1);
    if steps == 0 {
        return Err(Error::Parameter("1x1 grid has no moves".into()));
    }
    if len < steps {
        return Err(Error::Parameter(format!(
            "length {len} shorter than the {steps} required moves"
        )));
    }
    let grid = VarGrid::new(len, 3, Some(MOVE_PAD))?;
    let rights: Vec<_> = (0..len).map(|i| (i, MOVE_RIGHT as usize)).collect();
    let downs: Vec<_> = (0..len).map(|i| (i, MOVE_DOWN as usize)).collect();
    let mut parts = vec![
        exactly_k(&grid, &rights, width - 1)?,
        exactly_k(&grid, &downs, height - 1)?,
    ];
    for i in 0..len.saturating_sub(1) {
        parts.push(
            ConstraintExpr::lit(i, MOVE_PAD).implies(ConstraintExpr::lit(i + 1, MOVE_PAD)),
        );
    }
    Ok((grid, ConstraintExpr::and(parts)))
}

/// Random formula of bounded depth over the grid's literals.
pub fn random_expr<R: Rng + ?Sized>(grid: &VarGrid, depth: usize, rng: &mut R) -> ConstraintExpr {
    if depth == 0 || rng.random_bool(0.25) {
        let i = rng.random_range(0..grid.n);
        let j = rng.random_range(0..grid.k) as Token;
        let l = ConstraintExpr::lit(i, j);
        return if rng.random_bool(0.3) { l.not() } else { l };
    }
    match rng.random_range(0..4) {
        0 => random_expr(grid, depth - 1, rng).not(),
        1 => {
            let a = random_expr(grid, depth - 1, rng);
            a.implies(random_expr(grid, depth - 1, rng))
        }
        op => {
            let arity = rng.random_range(2..=3);
            let cs = (0..arity).map(|_| random_expr(grid, depth - 1, rng)).collect();
            if op == 2 {
                ConstraintExpr::and(cs)
            } else {
                ConstraintExpr::or(cs)
            }
        }
    }
}

/// Serializes to the line format: optional `GRID n k [pad]` header, then one
/// node per line (`VAR i j`, `NOT r`, `AND r..`, `OR r..`, `IMPLIES r r`,
/// `TRUE`, `FALSE`). References are 0-based ordinals of earlier node lines;
/// the last node is the root.
pub fn write_constraint(grid: Option<&VarGrid>, expr: &ConstraintExpr) -> String {
    let mut out = String::new();
    if let Some(g) = grid {
        match g.pad {
            Some(p) => writeln!(out, "GRID {} {} {}", g.n, g.k, p).unwrap(),
            None => writeln!(out, "GRID {} {}", g.n, g.k).unwrap(),
        }
    }
    let order = expr.post_order();
    let index: HashMap<*const ExprNode, usize> =
        order.iter().enumerate().map(|(i, e)| (e.key(), i)).collect();
    let refs = |cs: &[ConstraintExpr]| {
        cs.iter()
            .map(|c| index[&c.key()].to_string())
            .collect::<Vec<_>>()
            .join(" ")
    };
    for e in &order {
        match e.node() {
            ExprNode::True => out.push_str("TRUE\n"),
            ExprNode::False => out.push_str("FALSE\n"),
            ExprNode::Var { pos, tok } => writeln!(out, "VAR {pos} {tok}").unwrap(),
            ExprNode::Not(c) => writeln!(out, "NOT {}", index[&c.key()]).unwrap(),
            ExprNode::And(cs) => writeln!(out, "AND {}", refs(cs)).unwrap(),
            ExprNode::Or(cs) => writeln!(out, "OR {}", refs(cs)).unwrap(),
            ExprNode::Implies(a, b) => {
                writeln!(out, "IMPLIES {} {}", index[&a.key()], index[&b.key()]).unwrap()
            }
        }
    }
    out
}

/// Parses [`write_constraint`] output. Blank lines and `#` comments are
/// skipped and do not consume a node ordinal. Errors carry 1-based file line
/// numbers.
pub fn parse_constraint(text: &str) -> Result<(Option<VarGrid>, ConstraintExpr)> {
    let mut grid = None;
    let mut nodes: Vec<ConstraintExpr> = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line_no = lineno + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut words = line.split_whitespace();
        let op = words.next().unwrap();
        let args: Vec<usize> = words
            .map(|w| {
                w.parse::<usize>()
                    .map_err(|_| Error::parse(line_no, format!("expected integer, found `{w}`")))
            })
            .collect::<Result<_>>()?;
        let arg_ref = |r: usize| -> Result<ConstraintExpr> {
            nodes.get(r).cloned().ok_or_else(|| {
                Error::parse(line_no, format!("reference {r} does not name an earlier node"))
            })
        };
        let want = |n: usize| -> Result<()> {
            if args.len() != n {
                Err(Error::parse(line_no, format!("{op} takes {n} arguments, got {}", args.len())))
            } else {
                Ok(())
            }
        };
        let node = match op {
            "GRID" => {
                if !nodes.is_empty() || grid.is_some() {
                    return Err(Error::parse(line_no, "GRID header must come first"));
                }
                if args.len() != 2 && args.len() != 3 {
                    return Err(Error::parse(line_no, "GRID takes n k [pad]"));
                }
                let g = VarGrid::new(args[0], args[1], args.get(2).map(|&p| p as Token))
                    .map_err(|e| Error::parse(line_no, e.to_string()))?;
                grid = Some(g);
                continue;
            }
            "TRUE" => {
                want(0)?;
                ConstraintExpr::top()
            }
            "FALSE" => {
                want(0)?;
                ConstraintExpr::bottom()
            }
            "VAR" => {
                want(2)?;
                if let Some(g) = &grid {
                    g.check(args[0], args[1])
                        .map_err(|e| Error::parse(line_no, e.to_string()))?;
                }
                ConstraintExpr::lit(args[0], args[1] as Token)
            }
            "NOT" => {
                want(1)?;
                arg_ref(args[0])?.not()
            }
            "IMPLIES" => {
                want(2)?;
                arg_ref(args[0])?.implies(arg_ref(args[1])?)
            }
            "AND" | "OR" => {
                if args.is_empty() {
                    return Err(Error::parse(line_no, format!("{op} needs at least one reference")));
                }
                let cs = args.iter().map(|&r| arg_ref(r)).collect::<Result<Vec<_>>>()?;
                if op == "AND" {
                    ConstraintExpr::wrap(ExprNode::And(cs))
                } else {
                    ConstraintExpr::wrap(ExprNode::Or(cs))
                }
            }
            other => return Err(Error::parse(line_no, format!("unknown node kind `{other}`"))),
        };
        nodes.push(node);
    }
    let root = nodes
        .pop()
        .ok_or_else(|| Error::parse(text.lines().count().max(1), "constraint has no nodes"))?;
    Ok((grid, root))
}
