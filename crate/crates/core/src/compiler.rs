//! Top-down compilation of a [`ConstraintExpr`] into a constraint circuit.
//!
//! Positions are visited in a fixed order. At each level the residual formula
//! is conditioned on every token of the current position, giving a k-way
//! decision node `OR_j (Y[i][j] ∧ residual_j)`. Residuals are kept in a
//! hash-consed negation normal form, so structurally equal residuals (after
//! flattening, sorting and constant folding) are compiled once per level.
//! Branches whose residual compiles to `False` are dropped.
//!
//! The output is smooth (every decision spans all remaining positions),
//! decomposable (a literal and a residual over later positions) and
//! deterministic (branches disagree on the decided position).

use std::collections::HashMap;

use crate::circuit::{Circuit, Node, NodeId, PosSet};
use crate::constraints::{ConstraintExpr, ExprNode, Token, VarGrid};
use crate::error::{Error, Result};

pub const DEFAULT_NODE_LIMIT: usize = 5_000_000;

#[derive(Debug, Clone)]
pub struct CompileOptions {
    /// Order in which positions are decided; `None` means `0..n`.
    pub variable_order: Option<Vec<usize>>,
    pub cache_enabled: bool,
    pub node_limit: usize,
}

impl Default for CompileOptions {
    fn default() -> Self {
        CompileOptions {
            variable_order: None,
            cache_enabled: true,
            node_limit: DEFAULT_NODE_LIMIT,
        }
    }
}

type FId = u32;
const F_FALSE: FId = 0;
const F_TRUE: FId = 1;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
enum Form {
    False,
    True,
    Lit { pos: u32, tok: Token, neg: bool },
    And(Box<[FId]>),
    Or(Box<[FId]>),
}

/// Hash-consed NNF formulas; equal ids mean equal canonical forms.
struct FormArena {
    forms: Vec<Form>,
    table: HashMap<Form, FId>,
}

impl FormArena {
    fn new() -> Self {
        let mut a = FormArena {
            forms: Vec::new(),
            table: HashMap::new(),
        };
        a.intern(Form::False);
        a.intern(Form::True);
        a
    }

    fn intern(&mut self, f: Form) -> FId {
        if let Some(&id) = self.table.get(&f) {
            return id;
        }
        let id = self.forms.len() as FId;
        self.forms.push(f.clone());
        self.table.insert(f, id);
        id
    }

    fn lit(&mut self, pos: usize, tok: Token, neg: bool) -> FId {
        self.intern(Form::Lit { pos: pos as u32, tok, neg })
    }

    fn nary(&mut self, children: Vec<FId>, is_and: bool) -> FId {
        let (absorb, unit) = if is_and { (F_FALSE, F_TRUE) } else { (F_TRUE, F_FALSE) };
        let mut flat = Vec::with_capacity(children.len());
        for c in children {
            if c == absorb {
                return absorb;
            }
            if c == unit {
                continue;
            }
            match &self.forms[c as usize] {
                Form::And(cs) if is_and => flat.extend_from_slice(cs),
                Form::Or(cs) if !is_and => flat.extend_from_slice(cs),
                _ => flat.push(c),
            }
        }
        flat.sort_unstable();
        flat.dedup();
        // complementary literals; for AND also two different tokens at one position
        let lits: Vec<(u32, Token, bool)> = flat
            .iter()
            .filter_map(|&c| match self.forms[c as usize] {
                Form::Lit { pos, tok, neg } => Some((pos, tok, neg)),
                _ => None,
            })
            .collect();
        for (a, &(p, t, n)) in lits.iter().enumerate() {
            for &(q, u, m) in &lits[a + 1..] {
                if p == q && t == u && n != m {
                    return absorb;
                }
                if is_and && p == q && t != u && !n && !m {
                    return F_FALSE;
                }
            }
        }
        match flat.len() {
            0 => unit,
            1 => flat[0],
            _ if is_and => self.intern(Form::And(flat.into_boxed_slice())),
            _ => self.intern(Form::Or(flat.into_boxed_slice())),
        }
    }

    /// Converts a constraint DAG to NNF, memoized on (node, polarity).
    fn import(&mut self, expr: &ConstraintExpr) -> FId {
        let mut memo: HashMap<(*const ExprNode, bool), FId> = HashMap::new();
        let order = expr.post_order();
        for e in order {
            for neg in [false, true] {
                let id = self.import_node(e, neg, &memo);
                memo.insert((e.node() as *const ExprNode, neg), id);
            }
        }
        memo[&(expr.node() as *const ExprNode, false)]
    }

    fn import_node(
        &mut self,
        e: &ConstraintExpr,
        neg: bool,
        memo: &HashMap<(*const ExprNode, bool), FId>,
    ) -> FId {
        let get = |c: &ConstraintExpr, n: bool| memo[&(c.node() as *const ExprNode, n)];
        match e.node() {
            ExprNode::True => if neg { F_FALSE } else { F_TRUE },
            ExprNode::False => if neg { F_TRUE } else { F_FALSE },
            ExprNode::Var { pos, tok } => self.lit(*pos, *tok, neg),
            ExprNode::Not(c) => get(c, !neg),
            ExprNode::And(cs) => {
                let kids = cs.iter().map(|c| get(c, neg)).collect();
                self.nary(kids, !neg)
            }
            ExprNode::Or(cs) => {
                let kids = cs.iter().map(|c| get(c, neg)).collect();
                self.nary(kids, neg)
            }
            ExprNode::Implies(a, b) => {
                // a → b  ≡  ¬a ∨ b ;  ¬(a → b) ≡ a ∧ ¬b
                if neg {
                    let kids = vec![get(a, false), get(b, true)];
                    self.nary(kids, true)
                } else {
                    let kids = vec![get(a, true), get(b, false)];
                    self.nary(kids, false)
                }
            }
        }
    }

    /// Substitutes position `pos := tok`.
    fn condition(&mut self, f: FId, pos: usize, tok: Token, memo: &mut HashMap<FId, FId>) -> FId {
        if f <= F_TRUE {
            return f;
        }
        if let Some(&r) = memo.get(&f) {
            return r;
        }
        let r = match self.forms[f as usize].clone() {
            Form::Lit { pos: p, tok: t, neg } => {
                if p as usize == pos {
                    if (t == tok) != neg { F_TRUE } else { F_FALSE }
                } else {
                    f
                }
            }
            Form::And(cs) | Form::Or(cs) => {
                let is_and = matches!(self.forms[f as usize], Form::And(_));
                let kids = cs.iter().map(|&c| self.condition(c, pos, tok, memo)).collect::<Vec<_>>();
                if kids.iter().zip(cs.iter()).all(|(a, b)| a == b) {
                    f
                } else {
                    self.nary(kids, is_and)
                }
            }
            Form::True | Form::False => f,
        };
        memo.insert(f, r);
        r
    }
}

struct Builder {
    nodes: Vec<Node>,
    unique: HashMap<Node, NodeId>,
    share: bool,
    false_id: Option<NodeId>,
    true_id: Option<NodeId>,
    limit: usize,
}

impl Builder {
    fn add(&mut self, node: Node) -> Result<NodeId> {
        let shareable = self.share || matches!(node, Node::Literal { .. } | Node::True | Node::False);
        if shareable {
            if let Some(&id) = self.unique.get(&node) {
                return Ok(id);
            }
        }
        if self.nodes.len() >= self.limit {
            return Err(Error::CompilationBlowup {
                limit: self.limit,
                nodes: self.nodes.len(),
                cache_entries: 0,
                depth: 0,
            });
        }
        let id = self.nodes.len();
        self.nodes.push(node.clone());
        if shareable {
            self.unique.insert(node, id);
        }
        Ok(id)
    }

    fn leaf_false(&mut self) -> Result<NodeId> {
        if self.false_id.is_none() {
            self.false_id = Some(self.add(Node::False)?);
        }
        Ok(self.false_id.unwrap())
    }

    fn leaf_true(&mut self) -> Result<NodeId> {
        if self.true_id.is_none() {
            self.true_id = Some(self.add(Node::True)?);
        }
        Ok(self.true_id.unwrap())
    }
}

struct Compiler<'a> {
    arena: FormArena,
    builder: Builder,
    order: &'a [usize],
    k: usize,
    cache: Option<HashMap<(usize, FId), NodeId>>,
    deepest: usize,
}

impl Compiler<'_> {
    fn run(&mut self, depth: usize, f: FId) -> Result<NodeId> {
        self.deepest = self.deepest.max(depth);
        if f == F_FALSE {
            return self.builder.leaf_false();
        }
        if depth == self.order.len() {
            // every position decided; only constants remain
            return if f == F_TRUE {
                self.builder.leaf_true()
            } else {
                self.builder.leaf_false()
            };
        }
        if let Some(&id) = self.cache.as_ref().and_then(|c| c.get(&(depth, f))) {
            return Ok(id);
        }
        let pos = self.order[depth];
        let mut branches = Vec::new();
        for tok in 0..self.k as Token {
            let mut memo = HashMap::new();
            let g = self.arena.condition(f, pos, tok, &mut memo);
            if g == F_FALSE {
                continue;
            }
            let child = self.run(depth + 1, g)?;
            if Some(child) == self.builder.false_id {
                continue;
            }
            let lit = self.builder.add(Node::Literal { pos, tok })?;
            let branch = if Some(child) == self.builder.true_id {
                lit
            } else {
                self.builder.add(Node::And(vec![lit, child]))?
            };
            branches.push(branch);
        }
        let id = match branches.len() {
            0 => self.builder.leaf_false()?,
            1 => branches[0],
            _ => self.builder.add(Node::Or(branches))?,
        };
        if let Some(cache) = self.cache.as_mut() {
            cache.insert((depth, f), id);
        }
        Ok(id)
    }
}

/// Compiles `expr` over `grid` into a smooth, decomposable, deterministic
/// circuit with the same models. An unsatisfiable expression yields the
/// single `False` leaf.
pub fn compile(expr: &ConstraintExpr, grid: &VarGrid, opts: &CompileOptions) -> Result<Circuit> {
    expr.check_grid(grid)?;
    let default_order: Vec<usize>;
    let order = match &opts.variable_order {
        Some(o) => {
            let mut seen = vec![false; grid.n];
            if o.len() != grid.n || o.iter().any(|&p| p >= grid.n || std::mem::replace(&mut seen[p], true)) {
                return Err(Error::Parameter(format!(
                    "variable order must be a permutation of 0..{}",
                    grid.n
                )));
            }
            o.as_slice()
        }
        None => {
            default_order = (0..grid.n).collect();
            &default_order
        }
    };
    let mut arena = FormArena::new();
    let root_form = arena.import(expr);
    let mut c = Compiler {
        arena,
        builder: Builder {
            nodes: Vec::new(),
            unique: HashMap::new(),
            share: opts.cache_enabled,
            false_id: None,
            true_id: None,
            limit: opts.node_limit,
        },
        order,
        k: grid.k,
        cache: opts.cache_enabled.then(HashMap::new),
        deepest: 0,
    };
    let root = match c.run(0, root_form) {
        Ok(r) => r,
        Err(Error::CompilationBlowup { limit, nodes, .. }) => {
            return Err(Error::CompilationBlowup {
                limit,
                nodes,
                cache_entries: c.cache.as_ref().map_or(0, HashMap::len),
                depth: c.deepest,
            })
        }
        Err(e) => return Err(e),
    };
    if Some(root) == c.builder.false_id {
        return Ok(Circuit::unsat(grid.n, grid.k));
    }
    // drop leaves unreachable from the root (e.g. a False created then pruned)
    prune(grid.n, grid.k, c.builder.nodes, root)
}

fn prune(n: usize, k: usize, nodes: Vec<Node>, root: NodeId) -> Result<Circuit> {
    let mut live = vec![false; nodes.len()];
    live[root] = true;
    for id in (0..nodes.len()).rev() {
        if live[id] {
            if let Node::Or(cs) | Node::And(cs) = &nodes[id] {
                for &c in cs {
                    live[c] = true;
                }
            }
        }
    }
    let mut remap = vec![usize::MAX; nodes.len()];
    let mut out = Vec::with_capacity(nodes.len());
    for (id, node) in nodes.into_iter().enumerate() {
        if !live[id] {
            continue;
        }
        remap[id] = out.len();
        out.push(match node {
            Node::Or(cs) => Node::Or(cs.iter().map(|&c| remap[c]).collect()),
            Node::And(cs) => Node::And(cs.iter().map(|&c| remap[c]).collect()),
            other => other,
        });
    }
    Circuit::new(n, k, out, remap[root])
}

/// Structural properties of a circuit.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PropertyReport {
    pub decomposable: bool,
    pub smooth: bool,
    pub deterministic: bool,
    /// True when determinism was established by exhaustive enumeration
    /// rather than the syntactic decision test.
    pub determinism_exhaustive: bool,
    pub nodes: usize,
    pub edges: usize,
    pub depth: usize,
}

/// Full assignments enumerated for the exact determinism check.
const EXHAUSTIVE_LIMIT: u64 = 1 << 16;

/// Checks decomposability, smoothness and determinism.
///
/// Determinism is decided exactly: by enumerating every full assignment when
/// `k^n` is small, otherwise by the sufficient decision test (each pair of OR
/// children carries different positive literals on a shared position). A
/// circuit failing the decision test on a large grid is reported as not
/// deterministic.
pub fn validate(circuit: &Circuit) -> PropertyReport {
    let scopes = circuit.scopes();
    let nodes = circuit.nodes();
    let mut decomposable = true;
    let mut smooth = true;
    for node in nodes {
        match node {
            Node::And(cs) => {
                let mut acc = PosSet::empty(circuit.num_positions());
                for &c in cs {
                    if !acc.is_disjoint(&scopes[c]) {
                        decomposable = false;
                    }
                    acc.union_with(&scopes[c]);
                }
            }
            Node::Or(cs) if cs.iter().any(|&c| scopes[c] != scopes[cs[0]]) => smooth = false,
            _ => {}
        }
    }
    let n = circuit.num_positions();
    let k = circuit.vocab_size();
    let total = (k as u64).checked_pow(n as u32).filter(|&t| t <= EXHAUSTIVE_LIMIT);
    let (deterministic, exhaustive) = match total {
        Some(t) => (deterministic_by_enumeration(circuit, t), true),
        None => (deterministic_by_decisions(circuit), false),
    };
    PropertyReport {
        decomposable,
        smooth,
        deterministic,
        determinism_exhaustive: exhaustive,
        nodes: nodes.len(),
        edges: circuit.num_edges(),
        depth: circuit.depth(),
    }
}

fn deterministic_by_enumeration(circuit: &Circuit, total: u64) -> bool {
    let n = circuit.num_positions();
    let k = circuit.vocab_size() as u64;
    let nodes = circuit.nodes();
    let mut y = vec![0 as Token; n];
    let mut val = vec![false; nodes.len()];
    for mut idx in 0..total {
        for slot in y.iter_mut().rev() {
            *slot = (idx % k) as Token;
            idx /= k;
        }
        for (id, node) in nodes.iter().enumerate() {
            val[id] = match node {
                Node::True => true,
                Node::False => false,
                Node::Literal { pos, tok } => y[*pos] == *tok,
                Node::And(cs) => cs.iter().all(|&c| val[c]),
                Node::Or(cs) => {
                    let on = cs.iter().filter(|&&c| val[c]).count();
                    if on > 1 {
                        return false;
                    }
                    on == 1
                }
            };
        }
    }
    true
}

/// The positive literals an OR child commits to through AND chains.
fn committed_literals(nodes: &[Node], id: NodeId, out: &mut Vec<(usize, Token)>) {
    match &nodes[id] {
        Node::Literal { pos, tok } => out.push((*pos, *tok)),
        Node::And(cs) => {
            for &c in cs {
                committed_literals(nodes, c, out);
            }
        }
        _ => {}
    }
}

fn deterministic_by_decisions(circuit: &Circuit) -> bool {
    let nodes = circuit.nodes();
    for node in nodes {
        if let Node::Or(cs) = node {
            let commits: Vec<Vec<(usize, Token)>> = cs
                .iter()
                .map(|&c| {
                    let mut v = Vec::new();
                    committed_literals(nodes, c, &mut v);
                    v
                })
                .collect();
            for a in 0..cs.len() {
                for b in a + 1..cs.len() {
                    let exclusive = commits[a]
                        .iter()
                        .any(|&(p, t)| commits[b].iter().any(|&(q, u)| p == q && t != u));
                    if !exclusive {
                        return false;
                    }
                }
            }
        }
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::circuit::LeafWeights;
    use crate::constraints::{exactly_k, forbid_substrings, random_expr, valid_path};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn all_sequences(n: usize, k: usize) -> Vec<Vec<Token>> {
        let total = (k as u64).pow(n as u32);
        (0..total)
            .map(|mut idx| {
                let mut y = vec![0; n];
                for slot in y.iter_mut().rev() {
                    *slot = (idx % k as u64) as Token;
                    idx /= k as u64;
                }
                y
            })
            .collect()
    }

    fn bool_count(c: &Circuit) -> f64 {
        c.wmc(&LeafWeights::ones(c.num_positions(), c.vocab_size())).unwrap().exp()
    }

    #[test]
    fn tautology_counts_everything() {
        let g = VarGrid::new(2, 2, None).unwrap();
        let c = compile(&ConstraintExpr::top(), &g, &CompileOptions::default()).unwrap();
        assert!((bool_count(&c) - 4.0).abs() < 1e-9);
        let w = LeafWeights::from_probs(&[vec![0.3, 0.7], vec![0.9, 0.1]]).unwrap();
        assert!(c.wmc(&w).unwrap().abs() < 1e-12);
    }

    #[test]
    fn unsat_compiles_to_false_leaf() {
        let g = VarGrid::new(2, 2, None).unwrap();
        let e = ConstraintExpr::and(vec![ConstraintExpr::lit(0, 0), ConstraintExpr::lit(0, 1)]);
        let c = compile(&e, &g, &CompileOptions::default()).unwrap();
        assert!(c.is_false());
    }

    #[test]
    fn no_hate_has_three_decisions() {
        let g = VarGrid::new(3, 3, None).unwrap();
        let e = ConstraintExpr::lit(1, 0).not();
        let c = compile(&e, &g, &CompileOptions::default()).unwrap();
        let ors: Vec<usize> = c
            .nodes()
            .iter()
            .filter_map(|n| match n {
                Node::Or(cs) => Some(cs.len()),
                _ => None,
            })
            .collect();
        // objects (3 ways), {loves, adores}, subjects (3 ways)
        assert_eq!(ors, vec![3, 2, 3]);
        let w = LeafWeights::from_probs(&[
            vec![0.6, 0.2, 0.2],
            vec![0.4, 0.5, 0.1],
            vec![0.3, 0.3, 0.2],
        ])
        .unwrap();
        assert!((c.wmc(&w).unwrap().exp() - 0.48).abs() < 1e-12);
    }

    #[test]
    fn exactly_two_of_four() {
        let g = VarGrid::new(4, 2, None).unwrap();
        let vars: Vec<_> = (0..4).map(|i| (i, 1)).collect();
        let e = exactly_k(&g, &vars, 2).unwrap();
        let c = compile(&e, &g, &CompileOptions::default()).unwrap();
        assert!((bool_count(&c) - 6.0).abs() < 1e-9);
        let brute = all_sequences(4, 2).iter().filter(|y| e.eval(y)).count();
        assert_eq!(brute, 6);
    }

    #[test]
    fn compiled_circuits_validate() {
        let (g, e) = valid_path(3, 3).unwrap();
        let c = compile(&e, &g, &CompileOptions::default()).unwrap();
        let r = validate(&c);
        assert!(r.decomposable && r.smooth && r.deterministic, "{r:?}");
        assert!(r.determinism_exhaustive);
        assert_eq!(r.nodes, c.nodes().len());
    }

    #[test]
    fn overlapping_or_is_not_deterministic() {
        let nodes = vec![Node::Literal { pos: 0, tok: 0 }, Node::Or(vec![0, 0])];
        let c = Circuit::new(1, 2, nodes, 1).unwrap();
        assert!(!validate(&c).deterministic);
    }

    #[test]
    fn shared_scope_and_is_not_decomposable() {
        let nodes = vec![
            Node::Literal { pos: 0, tok: 0 },
            Node::Literal { pos: 0, tok: 1 },
            Node::And(vec![0, 1]),
        ];
        let c = Circuit::new(1, 2, nodes, 2).unwrap();
        assert!(!validate(&c).decomposable);
    }

    #[test]
    fn unsmooth_or_is_flagged() {
        let nodes = vec![
            Node::Literal { pos: 0, tok: 0 },
            Node::Literal { pos: 1, tok: 1 },
            Node::Or(vec![0, 1]),
        ];
        let c = Circuit::new(2, 2, nodes, 2).unwrap();
        assert!(!validate(&c).smooth);
    }

    #[test]
    fn node_limit_aborts() {
        let (g, e) = valid_path(4, 4).unwrap();
        let opts = CompileOptions { node_limit: 10, ..Default::default() };
        match compile(&e, &g, &opts) {
            Err(Error::CompilationBlowup { limit: 10, nodes, .. }) => assert_eq!(nodes, 10),
            other => panic!("expected blowup, got {other:?}"),
        }
    }

    #[test]
    fn bad_order_rejected() {
        let g = VarGrid::new(3, 2, None).unwrap();
        for order in [vec![0, 1], vec![0, 0, 1], vec![0, 1, 3]] {
            let opts = CompileOptions { variable_order: Some(order), ..Default::default() };
            assert!(compile(&ConstraintExpr::top(), &g, &opts).is_err());
        }
    }

    #[test]
    fn permuted_order_keeps_models() {
        let g = VarGrid::new(4, 3, None).unwrap();
        let e = forbid_substrings(&g, &[vec![0, 1], vec![2, 2]]).unwrap();
        let base = compile(&e, &g, &CompileOptions::default()).unwrap();
        let perm = compile(
            &e,
            &g,
            &CompileOptions { variable_order: Some(vec![3, 1, 0, 2]), ..Default::default() },
        )
        .unwrap();
        assert!(validate(&perm).smooth && validate(&perm).decomposable);
        for y in all_sequences(4, 3) {
            assert_eq!(base.satisfies(&y), e.eval(&y));
            assert_eq!(perm.satisfies(&y), e.eval(&y));
        }
    }

    #[test]
    fn random_formulas_match_ast() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for trial in 0..200 {
            let n = rng.random_range(1..=3);
            let k = rng.random_range(2..=4);
            let g = VarGrid::new(n, k, None).unwrap();
            let e = random_expr(&g, 4, &mut rng);
            let c = compile(&e, &g, &CompileOptions::default()).unwrap();
            for y in all_sequences(n, k) {
                assert_eq!(c.satisfies(&y), e.eval(&y), "trial {trial}, y={y:?}");
            }
            if !c.is_false() {
                let r = validate(&c);
                assert!(r.smooth && r.decomposable && r.deterministic, "trial {trial}: {r:?}");
            }
        }
    }

    #[test]
    fn compile_is_deterministic() {
        let (g, e) = valid_path(4, 3).unwrap();
        let a = compile(&e, &g, &CompileOptions::default()).unwrap().to_text();
        let b = compile(&e, &g, &CompileOptions::default()).unwrap().to_text();
        assert_eq!(a, b);
    }
}
