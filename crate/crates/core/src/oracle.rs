//! Brute-force ground truth for tiny instances, plus the frozen-fixture file
//! that stores derived constants alongside the configuration that produced them.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use sha2::{Digest, Sha256};

use crate::armodel::{AutoregressiveModel, TabularAR};
use crate::circuit::LeafWeights;
use crate::constraints::{ConstraintExpr, Sequence, Token, VarGrid};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::logspace::{log_sum_exp, NEG_INF};

/// Largest `k^n` the oracle will enumerate.
pub const ORACLE_CEILING: usize = 1_000_000;

/// A distribution over all `k^n` sequences, indexed lexicographically
/// (position 0 most significant).
#[derive(Debug, Clone, PartialEq)]
pub struct ExactDistribution {
    n: usize,
    k: usize,
    probs: Vec<f64>,
}

fn universe(n: usize, k: usize) -> Result<usize> {
    (k as u64)
        .checked_pow(n as u32)
        .filter(|&s| s <= ORACLE_CEILING as u64)
        .map(|s| s as usize)
        .ok_or_else(|| Error::TooLarge(format!("{k}^{n} sequences exceed the ceiling of {ORACLE_CEILING}")))
}

impl ExactDistribution {
    pub fn new(n: usize, k: usize, probs: Vec<f64>) -> Result<Self> {
        let size = universe(n, k)?;
        if probs.len() != size {
            return Err(Error::Shape {
                expected: format!("{size} probabilities"),
                got: format!("{}", probs.len()),
            });
        }
        Ok(ExactDistribution { n, k, probs })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn index(&self, y: &[Token]) -> usize {
        y.iter().fold(0, |acc, &t| acc * self.k + t as usize)
    }

    pub fn sequence(&self, mut idx: usize) -> Sequence {
        let mut y = vec![0; self.n];
        for slot in y.iter_mut().rev() {
            *slot = (idx % self.k) as Token;
            idx /= self.k;
        }
        y
    }

    pub fn prob(&self, y: &[Token]) -> f64 {
        self.probs[self.index(y)]
    }

    /// Sequences with positive mass, in index order.
    pub fn support(&self) -> Vec<Sequence> {
        (0..self.probs.len())
            .filter(|&i| self.probs[i] > 0.0)
            .map(|i| self.sequence(i))
            .collect()
    }

    /// Mass of each token at `pos`.
    pub fn marginal(&self, pos: usize) -> Vec<f64> {
        let mut m = vec![0.0; self.k];
        for (i, &p) in self.probs.iter().enumerate() {
            m[self.sequence(i)[pos] as usize] += p;
        }
        m
    }

    pub fn total(&self) -> f64 {
        self.probs.iter().sum()
    }

    /// Empirical frequencies of `samples`.
    pub fn empirical(n: usize, k: usize, samples: &[Sequence]) -> Result<Self> {
        let mut d = ExactDistribution::new(n, k, vec![0.0; universe(n, k)?])?;
        if samples.is_empty() {
            return Ok(d);
        }
        for s in samples {
            let i = d.index(s);
            d.probs[i] += 1.0;
        }
        let total = samples.len() as f64;
        d.probs.iter_mut().for_each(|p| *p /= total);
        Ok(d)
    }

    /// `sequence,probability` rows with space-separated tokens.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("sequence,probability\n");
        for (i, &p) in self.probs.iter().enumerate() {
            if p > 0.0 {
                let _ = writeln!(s, "{},{p}", join_tokens(&self.sequence(i)));
            }
        }
        s
    }
}

fn join_tokens(y: &[Token]) -> String {
    y.iter().map(|t| t.to_string()).collect::<Vec<_>>().join(" ")
}

/// `½ Σ |d1 − d2|`. Both must live on the same `(n, k)` universe.
pub fn tv_distance(d1: &ExactDistribution, d2: &ExactDistribution) -> f64 {
    assert_eq!((d1.n, d1.k), (d2.n, d2.k), "distributions over different universes");
    0.5 * d1.probs.iter().zip(&d2.probs).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

/// Log-probability of every sequence, in index order.
fn joint_logprobs<M: AutoregressiveModel + ?Sized>(model: &M, exec: Execution) -> Result<(usize, Vec<f64>)> {
    let (n, k) = (model.seq_len(), model.vocab_size());
    let size = universe(n, k)?;
    let shape = ExactDistribution { n, k, probs: Vec::new() };
    Ok((size, exec.map(size, |i| model.logprob(&shape.sequence(i)))))
}

fn satisfying<P>(n: usize, k: usize, size: usize, predicate: &P, exec: Execution) -> Vec<bool>
where
    P: Fn(&[Token]) -> bool + Sync,
{
    let shape = ExactDistribution { n, k, probs: Vec::new() };
    exec.map(size, |i| predicate(&shape.sequence(i)))
}

/// `p(y | α)` by enumeration. `predicate` decides `y ⊨ α`; pass either
/// `|y| expr.eval(y)` or `|y| circuit.satisfies(y)`.
pub fn exact_conditional<M, P>(model: &M, predicate: P) -> Result<ExactDistribution>
where
    M: AutoregressiveModel + ?Sized,
    P: Fn(&[Token]) -> bool + Sync,
{
    let exec = Execution::default();
    let (n, k) = (model.seq_len(), model.vocab_size());
    let (size, lp) = joint_logprobs(model, exec)?;
    let sat = satisfying(n, k, size, &predicate, exec);
    let masked: Vec<f64> = lp.iter().zip(&sat).map(|(&l, &s)| if s { l } else { NEG_INF }).collect();
    let z = log_sum_exp(&masked);
    if z == NEG_INF {
        return Err(Error::Unsatisfiable);
    }
    ExactDistribution::new(n, k, masked.iter().map(|&l| (l - z).exp()).collect())
}

/// The model's unconstrained distribution.
pub fn exact_joint<M: AutoregressiveModel + ?Sized>(model: &M) -> Result<ExactDistribution> {
    exact_conditional(model, |_| true)
}

/// The token-wise masked and renormalized distribution, with feasibility of
/// each prefix decided by enumeration of its completions.
pub fn exact_myopic<M, P>(model: &M, predicate: P) -> Result<ExactDistribution>
where
    M: AutoregressiveModel + ?Sized,
    P: Fn(&[Token]) -> bool + Sync,
{
    let (n, k) = (model.seq_len(), model.vocab_size());
    let size = universe(n, k)?;
    // feasible[i][p]: the length-i prefix with index p has a satisfying completion
    let mut feasible = vec![satisfying(n, k, size, &predicate, Execution::default())];
    for _ in 0..n {
        let below = feasible.last().unwrap();
        let up: Vec<bool> = below.chunks(k).map(|c| c.iter().any(|&b| b)).collect();
        feasible.push(up);
    }
    feasible.reverse();
    if !feasible[0][0] {
        return Err(Error::Unsatisfiable);
    }
    let mut probs = vec![0.0; size];
    let mut stack: Vec<(Sequence, usize, f64)> = vec![(Vec::new(), 0, 0.0)];
    while let Some((prefix, pidx, lp)) = stack.pop() {
        if prefix.len() == n {
            probs[pidx] = lp.exp();
            continue;
        }
        let level = &feasible[prefix.len() + 1];
        let mut logits = model.next_dist(&prefix);
        for (j, l) in logits.iter_mut().enumerate() {
            if !level[pidx * k + j] {
                *l = NEG_INF;
            }
        }
        let z = log_sum_exp(&logits);
        if z == NEG_INF {
            // the model gives no mass to any feasible continuation
            return Err(Error::Unsatisfiable);
        }
        for (j, &l) in logits.iter().enumerate() {
            if l != NEG_INF {
                let mut next = prefix.clone();
                next.push(j as Token);
                stack.push((next, pidx * k + j, lp + l - z));
            }
        }
    }
    ExactDistribution::new(n, k, probs)
}

/// `log Σ_{y ⊨ α} Π_i w(i, y_i)` by enumeration.
pub fn brute_wmc<P>(weights: &LeafWeights, predicate: P) -> Result<f64>
where
    P: Fn(&[Token]) -> bool + Sync,
{
    let (n, k) = (weights.n(), weights.k());
    let size = universe(n, k)?;
    let shape = ExactDistribution { n, k, probs: Vec::new() };
    let terms = Execution::default().map(size, |i| {
        let y = shape.sequence(i);
        if predicate(&y) {
            weights.score(&y)
        } else {
            NEG_INF
        }
    });
    Ok(log_sum_exp(&terms))
}

/// Two positions over `{a=0, b=1}` where masking keeps the locally likely
/// first token: `p(a)=0.9`, `p(a|a)=0.1`, `p(·|b)` uniform, constraint
/// `y_0 = a → y_1 = a`.
pub fn adversarial_instance() -> (TabularAR, ConstraintExpr, VarGrid) {
    let model = TabularAR::new(2, 2, &[vec![0.9, 0.1], vec![0.1, 0.9], vec![0.5, 0.5]])
        .expect("fixed rows are normalized");
    let expr = ConstraintExpr::lit(0, 0).implies(ConstraintExpr::lit(1, 0));
    let grid = VarGrid::new(2, 2, None).expect("fixed grid is valid");
    (model, expr, grid)
}

/// First 16 hex digits of the SHA-256 of a configuration's canonical text.
pub fn config_hash(canonical: &str) -> String {
    Sha256::digest(canonical.as_bytes())
        .iter()
        .take(8)
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Frozen derived constants: per fixture, the hash of the configuration that
/// produced it and an ordered list of `(key, value)` pairs.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Fixtures {
    entries: BTreeMap<String, FixtureEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FixtureEntry {
    pub config_hash: String,
    pub values: Vec<(String, f64)>,
}

impl Fixtures {
    pub fn insert(&mut self, name: &str, config: &str, values: Vec<(String, f64)>) {
        self.entries.insert(
            name.to_string(),
            FixtureEntry { config_hash: config_hash(config), values },
        );
    }

    /// Stores a distribution's support as `sequence → probability` pairs.
    pub fn insert_distribution(&mut self, name: &str, config: &str, d: &ExactDistribution) {
        let values = d
            .support()
            .into_iter()
            .map(|y| (join_tokens(&y), d.prob(&y)))
            .collect();
        self.insert(name, config, values);
    }

    pub fn get(&self, name: &str) -> Option<&FixtureEntry> {
        self.entries.get(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn value(&self, name: &str, key: &str) -> Option<f64> {
        self.get(name)?.values.iter().find(|(k, _)| k == key).map(|&(_, v)| v)
    }

    /// Rebuilds a distribution stored with [`Fixtures::insert_distribution`].
    pub fn distribution(&self, name: &str, n: usize, k: usize) -> Result<ExactDistribution> {
        let entry = self
            .get(name)
            .ok_or_else(|| Error::Parameter(format!("no fixture named {name}")))?;
        let mut d = ExactDistribution::new(n, k, vec![0.0; universe(n, k)?])?;
        for (key, p) in &entry.values {
            let y: Sequence = key
                .split(' ')
                .map(|t| t.parse().map_err(|_| Error::Parameter(format!("bad sequence {key:?} in {name}"))))
                .collect::<Result<_>>()?;
            if y.len() != n || y.iter().any(|&t| t as usize >= k) {
                return Err(Error::Parameter(format!("sequence {key:?} in {name} outside {n}x{k}")));
            }
            let i = d.index(&y);
            d.probs[i] = *p;
        }
        Ok(d)
    }

    /// `fixture,config_hash,key,value`; floats use the shortest round-trip form.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("fixture,config_hash,key,value\n");
        for (name, e) in &self.entries {
            for (k, v) in &e.values {
                let _ = writeln!(s, "{name},{},{k},{v}", e.config_hash);
            }
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, "fixture,config_hash,key,value")) => {}
            _ => return Err(Error::parse(1, "expected header fixture,config_hash,key,value")),
        }
        let mut f = Fixtures::default();
        for (ln, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split(',').collect();
            if cols.len() != 4 {
                return Err(Error::parse(ln + 1, format!("expected 4 columns, got {}", cols.len())));
            }
            let v: f64 = cols[3]
                .parse()
                .map_err(|_| Error::parse(ln + 1, format!("bad value {:?}", cols[3])))?;
            let entry = f.entries.entry(cols[0].to_string()).or_insert_with(|| FixtureEntry {
                config_hash: cols[1].to_string(),
                values: Vec::new(),
            });
            if entry.config_hash != cols[1] {
                return Err(Error::parse(ln + 1, format!("fixture {} has two config hashes", cols[0])));
            }
            entry.values.push((cols[2].to_string(), v));
        }
        Ok(f)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::armodel::IndependentAR;
    use crate::compiler::{compile, CompileOptions};
    use crate::constraints::{random_expr, valid_path};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn tv_examples() {
        let a = ExactDistribution::new(1, 2, vec![0.5, 0.5]).unwrap();
        let b = ExactDistribution::new(1, 2, vec![0.9, 0.1]).unwrap();
        assert!((tv_distance(&a, &b) - 0.4).abs() < 1e-12);
        assert_eq!(tv_distance(&a, &a), 0.0);
        let p = ExactDistribution::new(1, 2, vec![1.0, 0.0]).unwrap();
        let q = ExactDistribution::new(1, 2, vec![0.0, 1.0]).unwrap();
        assert_eq!(tv_distance(&p, &q), 1.0);
    }

    #[test]
    fn adversarial_numbers_by_enumeration() {
        let (model, expr, _) = adversarial_instance();
        let exact = exact_conditional(&model, |y| expr.eval(y)).unwrap();
        let myopic = exact_myopic(&model, |y| expr.eval(y)).unwrap();
        // joint: aa .09, ab .81, ba .05, bb .05; ab is excluded
        assert!((exact.prob(&[0, 0]) - 0.09 / 0.19).abs() < 1e-12);
        assert!((exact.marginal(0)[0] - 0.4736842105263158).abs() < 1e-12);
        assert_eq!(exact.prob(&[0, 1]), 0.0);
        assert!((myopic.prob(&[0, 0]) - 0.9).abs() < 1e-12);
        assert!((myopic.prob(&[1, 0]) - 0.05).abs() < 1e-12);
        assert!((tv_distance(&exact, &myopic) - (0.9 - 0.09 / 0.19)).abs() < 1e-12);
        assert!(tv_distance(&exact, &myopic) >= 0.05);
    }

    #[test]
    fn true_constraint_gives_joint_and_myopic_agrees() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = TabularAR::random(3, 3, 1.0, &mut rng).unwrap();
        let j = exact_joint(&m).unwrap();
        assert!((j.total() - 1.0).abs() < 1e-12);
        assert!((j.prob(&[2, 0, 1]) - m.logprob(&[2, 0, 1]).exp()).abs() < 1e-12);
        let my = exact_myopic(&m, |_| true).unwrap();
        assert!(tv_distance(&j, &my) < 1e-12);
    }

    #[test]
    fn uniform_model_is_uniform_over_models() {
        let m = TabularAR::uniform(3, 3).unwrap();
        let expr = ConstraintExpr::lit(0, 1).implies(ConstraintExpr::lit(2, 2));
        let d = exact_conditional(&m, |y| expr.eval(y)).unwrap();
        let support = d.support();
        // 27 sequences minus the 6 with y_0 = 1 and y_2 ≠ 2
        assert_eq!(support.len(), 21);
        for y in support {
            assert!((d.prob(&y) - 1.0 / 21.0).abs() < 1e-12);
        }
    }

    #[test]
    fn two_by_two_path_instance() {
        // moves R=0 D=1 on a 2x2 grid: paths RD and DR
        let (grid, expr) = valid_path(2, 2).unwrap();
        let m = TabularAR::new(2, 3, &[
            vec![0.7, 0.2, 0.1],
            vec![0.1, 0.6, 0.3],
            vec![0.5, 0.4, 0.1],
            vec![0.2, 0.3, 0.5],
        ])
        .unwrap();
        assert_eq!(grid.n, 2);
        let d = exact_conditional(&m, |y| expr.eval(y)).unwrap();
        let rd = 0.7 * 0.6;
        let dr = 0.2 * 0.5;
        assert_eq!(d.support(), vec![vec![0, 1], vec![1, 0]]);
        assert!((d.prob(&[0, 1]) - rd / (rd + dr)).abs() < 1e-12);
    }

    #[test]
    fn single_model_constraint_is_point_mass() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let m = TabularAR::random(3, 2, 1.0, &mut rng).unwrap();
        let expr = ConstraintExpr::and(vec![
            ConstraintExpr::lit(0, 1),
            ConstraintExpr::lit(1, 0),
            ConstraintExpr::lit(2, 1),
        ]);
        let a = exact_conditional(&m, |y| expr.eval(y)).unwrap();
        let b = exact_myopic(&m, |y| expr.eval(y)).unwrap();
        assert_eq!(a.prob(&[1, 0, 1]), 1.0);
        assert!(tv_distance(&a, &b) < 1e-12);
    }

    #[test]
    fn expr_and_circuit_conditionals_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let grid = VarGrid::new(4, 3, None).unwrap();
        for _ in 0..30 {
            let expr = random_expr(&grid, 4, &mut rng);
            let c = compile(&expr, &grid, &CompileOptions::default()).unwrap();
            let m = TabularAR::random(4, 3, 1.0, &mut rng).unwrap();
            match (exact_conditional(&m, |y| expr.eval(y)), exact_conditional(&m, |y| c.satisfies(y))) {
                (Ok(a), Ok(b)) => {
                    assert!(tv_distance(&a, &b) < 1e-12);
                    let my = exact_myopic(&m, |y| c.satisfies(y)).unwrap();
                    assert_eq!(my.support(), a.support());
                }
                (Err(Error::Unsatisfiable), Err(Error::Unsatisfiable)) => {}
                other => panic!("disagreement: {other:?}"),
            }
        }
    }

    #[test]
    fn brute_wmc_matches_circuit() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let grid = VarGrid::new(3, 3, None).unwrap();
        let m = IndependentAR::random(3, 3, 1.0, &mut rng).unwrap();
        let w = LeafWeights::new(3, 3, (0..3).flat_map(|i| m.row(i).to_vec()).collect()).unwrap();
        for _ in 0..20 {
            let expr = random_expr(&grid, 3, &mut rng);
            let c = compile(&expr, &grid, &CompileOptions::default()).unwrap();
            let a = brute_wmc(&w, |y| expr.eval(y)).unwrap();
            let b = c.wmc(&w).unwrap();
            assert!(a == b || (a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn size_ceiling() {
        let m = TabularAR::uniform(1, 2).unwrap();
        assert!(exact_joint(&m).is_ok());
        assert!(matches!(universe(21, 2), Err(Error::TooLarge(_))));
        assert!(universe(6, 10).is_ok());
        assert!(universe(7, 10).is_err());
    }

    #[test]
    fn unsatisfiable_under_support() {
        let m = IndependentAR::new(&[vec![1.0, 0.0], vec![0.5, 0.5]]).unwrap();
        let expr = ConstraintExpr::lit(0, 1);
        assert!(matches!(exact_conditional(&m, |y| expr.eval(y)), Err(Error::Unsatisfiable)));
        assert!(matches!(exact_myopic(&m, |y| expr.eval(y)), Err(Error::Unsatisfiable)));
    }

    #[test]
    fn empirical_counts() {
        let d = ExactDistribution::empirical(2, 2, &[vec![0, 1], vec![0, 1], vec![1, 1], vec![0, 0]]).unwrap();
        assert_eq!(d.probs(), &[0.25, 0.5, 0.0, 0.25]);
    }

    #[test]
    fn fixtures_round_trip() {
        let (model, expr, _) = adversarial_instance();
        let exact = exact_conditional(&model, |y| expr.eval(y)).unwrap();
        let mut f = Fixtures::default();
        f.insert_distribution("adv", "instance=adversarial", &exact);
        f.insert("gap", "instance=adversarial", vec![("tv".into(), 0.1 + 0.2)]);
        let text = f.to_csv();
        let g = Fixtures::from_csv(&text).unwrap();
        assert_eq!(f, g);
        assert_eq!(g.value("gap", "tv"), Some(0.1 + 0.2));
        assert_eq!(g.distribution("adv", 2, 2).unwrap(), exact);
        assert_eq!(g.get("adv").unwrap().config_hash, config_hash("instance=adversarial"));
        assert!(Fixtures::from_csv("nope\n").is_err());
        assert!(Fixtures::from_csv("fixture,config_hash,key,value\na,b,c\n").is_err());
    }

    #[test]
    fn hash_is_stable() {
        assert_eq!(config_hash(""), "e3b0c44298fc1c14");
        assert_ne!(config_hash("seed=1"), config_hash("seed=2"));
    }
}
