//! Locally constrained resampling and the two baselines it is compared with.
//!
//! A particle starts from an unconstrained draw `ỹ`, projects it onto the
//! constraint through the circuit conditioned on the pseudolikelihood table
//! around `ỹ`, and carries the importance weight
//!
//! ```text
//! log w = [log p(y) + log 1[canon(y) ⊨ c] + log p̃_y(ỹ)] − [log p(ỹ) + log p̃_ỹ(y | c)]
//! ```
//!
//! The particle set is self-normalized and resampled with replacement.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;

use crate::armodel::{ar_logprob, ar_sample, AutoregressiveModel};
use crate::circuit::{Circuit, Evaluation};
use crate::constraints::{Sequence, Token};
use crate::error::{Error, Result};
use crate::exec::{derive_seed, stream_rng, Execution};
use crate::logspace::{sample_log_categorical, NEG_INF};
use crate::pseudo::{build_pseudo, psl_logprob, PseudoTable};
use crate::tokenize::{Canonized, ToyVocab};

/// Label mixed into the seed of the resampling stream so it never collides
/// with a particle stream.
const RESAMPLE_STREAM: u64 = 0x5245_5341_4d50_4c45;

#[derive(Debug, Clone, PartialEq)]
pub struct Particle {
    pub ytilde: Sequence,
    /// Projection onto the constraint. Equal to `ytilde` for a dead particle
    /// whose projection could not be drawn.
    pub y: Sequence,
    pub log_q: f64,
    pub log_p: f64,
    pub log_w: f64,
}

impl Particle {
    pub fn is_dead(&self) -> bool {
        self.log_w == NEG_INF
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LcrConfig {
    pub num_particles: usize,
    pub temperature: f64,
    pub top_k: Option<usize>,
    pub seed: u64,
    pub resample_count: usize,
}

impl Default for LcrConfig {
    fn default() -> Self {
        LcrConfig {
            num_particles: 16,
            temperature: 1.0,
            top_k: None,
            seed: 0,
            resample_count: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Diagnostics {
    pub num_particles: usize,
    pub dead: usize,
    /// `(Σw)² / Σw²` over the self-normalized weights.
    pub ess: f64,
    /// Population variance of the finite log-weights.
    pub log_w_variance: f64,
    pub log_w: Vec<f64>,
    /// Self-normalized resampling probabilities, zero for dead particles.
    pub probabilities: Vec<f64>,
}

impl Diagnostics {
    fn from_log_weights(log_w: Vec<f64>) -> Self {
        let live: Vec<f64> = log_w.iter().copied().filter(|x| x.is_finite()).collect();
        let dead = log_w.len() - live.len();
        let max = live.iter().copied().fold(NEG_INF, f64::max);
        let raw: Vec<f64> = log_w
            .iter()
            .map(|&x| if x.is_finite() { (x - max).exp() } else { 0.0 })
            .collect();
        let total: f64 = raw.iter().sum();
        let probabilities: Vec<f64> = if total > 0.0 {
            raw.iter().map(|w| w / total).collect()
        } else {
            vec![0.0; raw.len()]
        };
        let sq: f64 = probabilities.iter().map(|p| p * p).sum();
        let ess = if sq > 0.0 { 1.0 / sq } else { 0.0 };
        let log_w_variance = if live.len() > 1 {
            let mean = live.iter().sum::<f64>() / live.len() as f64;
            live.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / live.len() as f64
        } else {
            0.0
        };
        Diagnostics {
            num_particles: log_w.len(),
            dead,
            ess,
            log_w_variance,
            log_w,
            probabilities,
        }
    }

    pub fn summary_csv(&self) -> String {
        format!(
            "num_particles,dead,ess,log_w_variance\n{},{},{},{}\n",
            self.num_particles, self.dead, self.ess, self.log_w_variance
        )
    }

    pub fn particles_csv(&self) -> String {
        let mut s = String::from("particle,log_w,probability\n");
        for (i, (w, p)) in self.log_w.iter().zip(&self.probabilities).enumerate() {
            s.push_str(&format!("{i},{w},{p}\n"));
        }
        s
    }
}

#[derive(Debug, Clone)]
pub struct LcrOutput {
    pub samples: Vec<Sequence>,
    pub particles: Vec<Particle>,
    pub diagnostics: Diagnostics,
}

fn check_shapes<M: AutoregressiveModel + ?Sized>(
    model: &M,
    circuit: &Circuit,
    vocab: Option<&ToyVocab>,
) -> Result<()> {
    let (n, k) = (circuit.num_positions(), circuit.vocab_size());
    if model.seq_len() != n || model.vocab_size() != k {
        return Err(Error::Shape {
            expected: format!("model over {n} positions and {k} tokens"),
            got: format!("{} positions and {} tokens", model.seq_len(), model.vocab_size()),
        });
    }
    if let Some(v) = vocab {
        if v.len() != k {
            return Err(Error::Shape {
                expected: format!("vocabulary of {k} tokens"),
                got: format!("{} tokens", v.len()),
            });
        }
    }
    Ok(())
}

/// `log 1[canon(y) ⊨ c]`, with no vocabulary meaning canonization is the identity.
fn canonical_indicator(circuit: &Circuit, vocab: Option<&ToyVocab>, y: &[Token]) -> f64 {
    let ok = match vocab.map(|v| v.canonize(y, y.len())) {
        None => circuit.satisfies(y),
        Some(Canonized::Tokens(c)) => circuit.satisfies(&c),
        Some(Canonized::Overflow) => false,
    };
    if ok {
        0.0
    } else {
        NEG_INF
    }
}

#[allow(clippy::too_many_arguments)]
fn weigh<M: AutoregressiveModel + ?Sized>(
    model: &M,
    circuit: &Circuit,
    vocab: Option<&ToyVocab>,
    ytilde: Sequence,
    y: Sequence,
    table_ytilde: &PseudoTable,
    eval: &Evaluation,
    temperature: f64,
    top_k: Option<usize>,
) -> Result<Particle> {
    let log_p_ytilde = ar_logprob(model, &ytilde);
    let log_q = log_p_ytilde + circuit.conditional_logprob_with(eval, &table_ytilde.table, &y)?;
    let table_y;
    let reverse = if y == ytilde {
        table_ytilde
    } else {
        table_y = build_pseudo(model, &y, temperature, top_k)?;
        &table_y
    };
    let log_p = ar_logprob(model, &y) + canonical_indicator(circuit, vocab, &y) + psl_logprob(reverse, &ytilde);
    let log_w = if log_p == NEG_INF || log_q == NEG_INF {
        NEG_INF
    } else {
        log_p - log_q
    };
    Ok(Particle { ytilde, y, log_q, log_p, log_w })
}

/// Weighs a given pair `(ỹ, y)` as a particle. `y` must satisfy the circuit
/// for the proposal term to be finite.
pub fn score_particle<M: AutoregressiveModel + ?Sized>(
    model: &M,
    circuit: &Circuit,
    vocab: Option<&ToyVocab>,
    ytilde: &[Token],
    y: &[Token],
    temperature: f64,
    top_k: Option<usize>,
) -> Result<Particle> {
    check_shapes(model, circuit, vocab)?;
    let table = build_pseudo(model, ytilde, temperature, top_k)?;
    let eval = circuit.evaluate(&table.table)?;
    weigh(model, circuit, vocab, ytilde.to_vec(), y.to_vec(), &table, &eval, temperature, top_k)
}

/// Draws one weighted particle.
pub fn make_particle<M, R>(
    model: &M,
    circuit: &Circuit,
    vocab: Option<&ToyVocab>,
    rng: &mut R,
    temperature: f64,
    top_k: Option<usize>,
) -> Result<Particle>
where
    M: AutoregressiveModel + ?Sized,
    R: Rng + ?Sized,
{
    let ytilde = ar_sample(model, rng);
    let table = build_pseudo(model, &ytilde, temperature, top_k)?;
    let eval = circuit.evaluate(&table.table)?;
    if eval.log_mass == NEG_INF {
        return Ok(Particle {
            y: ytilde.clone(),
            ytilde,
            log_q: NEG_INF,
            log_p: NEG_INF,
            log_w: NEG_INF,
        });
    }
    let y = circuit.sample_from(&eval, &table.table, rng)?;
    weigh(model, circuit, vocab, ytilde, y, &table, &eval, temperature, top_k)
}

pub fn lcr_sample<M: AutoregressiveModel + ?Sized>(
    model: &M,
    circuit: &Circuit,
    vocab: Option<&ToyVocab>,
    config: &LcrConfig,
) -> Result<LcrOutput> {
    lcr_sample_with(model, circuit, vocab, config, Execution::default())
}

/// Builds `N` particles (particle `i` on random stream `i` of the seed),
/// self-normalizes and draws `m` samples with replacement. Output is
/// identical for both execution strategies.
pub fn lcr_sample_with<M: AutoregressiveModel + ?Sized>(
    model: &M,
    circuit: &Circuit,
    vocab: Option<&ToyVocab>,
    config: &LcrConfig,
    exec: Execution,
) -> Result<LcrOutput> {
    if config.num_particles == 0 || config.resample_count == 0 {
        return Err(Error::Parameter(format!(
            "need at least one particle and one resample, got N={} m={}",
            config.num_particles, config.resample_count
        )));
    }
    check_shapes(model, circuit, vocab)?;
    if circuit.is_false() {
        return Err(Error::Unsatisfiable);
    }
    let particles: Vec<Particle> = exec
        .map(config.num_particles, |i| {
            let mut rng = stream_rng(config.seed, i as u64);
            make_particle(model, circuit, vocab, &mut rng, config.temperature, config.top_k)
        })
        .into_iter()
        .collect::<Result<_>>()?;
    let diagnostics = Diagnostics::from_log_weights(particles.iter().map(|p| p.log_w).collect());
    if diagnostics.dead == diagnostics.num_particles {
        return Err(Error::AllDead {
            particles: config.num_particles,
            constraint: format!(
                "circuit over {} positions with {} nodes",
                circuit.num_positions(),
                circuit.nodes().len()
            ),
            model: model.describe(),
        });
    }
    let index = WeightedIndex::new(&diagnostics.probabilities)
        .map_err(|e| Error::Parameter(format!("resampling weights: {e}")))?;
    let mut rng = stream_rng(derive_seed(config.seed, &[RESAMPLE_STREAM]), 0);
    let samples = (0..config.resample_count)
        .map(|_| particles[index.sample(&mut rng)].y.clone())
        .collect();
    Ok(LcrOutput { samples, particles, diagnostics })
}

/// Left-to-right decoding with infeasible next tokens masked out.
pub fn myopic_sample<M, R>(model: &M, circuit: &Circuit, rng: &mut R) -> Result<Sequence>
where
    M: AutoregressiveModel + ?Sized,
    R: Rng + ?Sized,
{
    check_shapes(model, circuit, None)?;
    let mut y = Vec::with_capacity(circuit.num_positions());
    for _ in 0..circuit.num_positions() {
        let mask = circuit.feasible_tokens(&y);
        let mut logits = model.next_dist(&y);
        for (l, ok) in logits.iter_mut().zip(&mask) {
            if !ok {
                *l = NEG_INF;
            }
        }
        // zero model mass on every feasible token is the only way to get stuck
        let t = sample_log_categorical(&logits, rng).ok_or(Error::Unsatisfiable)?;
        y.push(t as Token);
    }
    Ok(y)
}

/// Up to `budget` unconstrained draws; the first satisfying one is returned
/// together with the number of draws spent.
pub fn rejection_sample<M, R>(
    model: &M,
    circuit: &Circuit,
    budget: usize,
    rng: &mut R,
) -> Result<(Option<Sequence>, usize)>
where
    M: AutoregressiveModel + ?Sized,
    R: Rng + ?Sized,
{
    if budget == 0 {
        return Err(Error::Parameter("rejection budget must be at least 1".into()));
    }
    check_shapes(model, circuit, None)?;
    for attempt in 1..=budget {
        let y = ar_sample(model, rng);
        if circuit.satisfies(&y) {
            return Ok((Some(y), attempt));
        }
    }
    Ok((None, budget))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::armodel::{IndependentAR, TabularAR};
    use crate::compiler::{compile, CompileOptions};
    use crate::constraints::{ConstraintExpr, VarGrid};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn build(expr: &ConstraintExpr, n: usize, k: usize) -> Circuit {
        compile(expr, &VarGrid::new(n, k, None).unwrap(), &CompileOptions::default()).unwrap()
    }

    fn not_all_same(n: usize, k: usize) -> ConstraintExpr {
        let same = |t: Token| ConstraintExpr::and((0..n).map(|i| ConstraintExpr::lit(i, t)).collect());
        ConstraintExpr::and((0..k as Token).map(|t| same(t).not()).collect())
    }

    #[test]
    fn factorized_model_gives_constant_weights() {
        let rows = vec![vec![0.5, 0.3, 0.2], vec![0.1, 0.6, 0.3], vec![0.25, 0.25, 0.5]];
        let model = IndependentAR::new(&rows).unwrap();
        // at least one position differs from position 0
        let expr = ConstraintExpr::or(vec![
            ConstraintExpr::not(ConstraintExpr::and(vec![ConstraintExpr::lit(0, 0), ConstraintExpr::lit(1, 0)])),
            ConstraintExpr::lit(2, 1),
        ]);
        let c = build(&expr, 3, 3);
        let wmc = c
            .wmc(&crate::circuit::LeafWeights::from_probs(&rows).unwrap())
            .unwrap();
        let cfg = LcrConfig { num_particles: 200, seed: 7, ..Default::default() };
        let out = lcr_sample(&model, &c, None, &cfg).unwrap();
        assert_eq!(out.diagnostics.dead, 0);
        for p in &out.particles {
            assert!((p.log_w - wmc).abs() < 1e-10, "{} vs {wmc}", p.log_w);
        }
        assert!((out.diagnostics.ess - 200.0).abs() < 1e-6);
    }

    #[test]
    fn fixed_point_weight_is_wmc() {
        // deterministic model on [1, 0]; the constraint's only model is [1, 0]
        let model = TabularAR::new(2, 2, &[vec![0.0, 1.0], vec![0.5, 0.5], vec![1.0, 0.0]]).unwrap();
        let expr = ConstraintExpr::and(vec![ConstraintExpr::lit(0, 1), ConstraintExpr::lit(1, 0)]);
        let c = build(&expr, 2, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = make_particle(&model, &c, None, &mut rng, 1.0, None).unwrap();
        assert_eq!(p.y, p.ytilde);
        let table = build_pseudo(&model, &p.y, 1.0, None).unwrap();
        let wmc = c.wmc(&table.table).unwrap();
        assert!((p.log_w - wmc).abs() < 1e-12);
    }

    #[test]
    fn non_canonical_projection_is_killed() {
        // tokens a=0 b=1 ab=2 pad=3; ban `ab` at position 0
        let vocab = ToyVocab::new(&["a", "b", "ab"]).unwrap();
        let model = TabularAR::uniform(2, 4).unwrap();
        let c = build(&ConstraintExpr::not(ConstraintExpr::lit(0, 2)), 2, 4);
        let p = score_particle(&model, &c, Some(&vocab), &[0, 1], &[0, 1], 1.0, None).unwrap();
        assert!(p.log_q.is_finite());
        assert_eq!(p.log_p, NEG_INF);
        assert!(p.is_dead());
        let ok = score_particle(&model, &c, Some(&vocab), &[0, 1], &[1, 0], 1.0, None).unwrap();
        assert!(ok.log_w.is_finite());
        // without a vocabulary the same pair lives
        assert!(score_particle(&model, &c, None, &[0, 1], &[0, 1], 1.0, None).unwrap().log_w.is_finite());
    }

    #[test]
    fn single_particle_returns_its_projection() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let model = TabularAR::random(3, 3, 1.0, &mut rng).unwrap();
        let c = build(&not_all_same(3, 3), 3, 3);
        let cfg = LcrConfig { num_particles: 1, resample_count: 5, seed: 11, ..Default::default() };
        let out = lcr_sample(&model, &c, None, &cfg).unwrap();
        assert!(out.samples.iter().all(|s| *s == out.particles[0].y));
        assert!((out.diagnostics.ess - 1.0).abs() < 1e-12);
    }

    #[test]
    fn strategies_agree_bit_for_bit() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let model = TabularAR::random(4, 3, 1.5, &mut rng).unwrap();
        let c = build(&not_all_same(4, 3), 4, 3);
        let cfg = LcrConfig { num_particles: 64, resample_count: 32, seed: 99, temperature: 0.7, top_k: Some(2) };
        let a = lcr_sample_with(&model, &c, None, &cfg, Execution::Sequential).unwrap();
        let b = lcr_sample_with(&model, &c, None, &cfg, Execution::Parallel).unwrap();
        assert_eq!(a.samples, b.samples);
        assert_eq!(a.particles, b.particles);
        assert!(a.samples.iter().all(|s| c.satisfies(s)));
    }

    #[test]
    fn all_dead_is_an_error() {
        // the model never emits token 1 at position 0 but the constraint demands it
        let model = IndependentAR::new(&[vec![1.0, 0.0], vec![0.5, 0.5]]).unwrap();
        let c = build(&ConstraintExpr::lit(0, 1), 2, 2);
        let err = lcr_sample(&model, &c, None, &LcrConfig::default()).unwrap_err();
        assert!(matches!(err, Error::AllDead { particles: 16, .. }), "{err}");
    }

    #[test]
    fn config_and_shape_errors() {
        let model = TabularAR::uniform(2, 2).unwrap();
        let c = build(&ConstraintExpr::top(), 2, 2);
        let bad = LcrConfig { num_particles: 0, ..Default::default() };
        assert!(lcr_sample(&model, &c, None, &bad).is_err());
        let c3 = build(&ConstraintExpr::top(), 3, 2);
        assert!(lcr_sample(&model, &c3, None, &LcrConfig::default()).is_err());
        let v = ToyVocab::new(&["a", "b", "c"]).unwrap();
        assert!(lcr_sample(&model, &c, Some(&v), &LcrConfig::default()).is_err());
        let unsat = Circuit::unsat(2, 2);
        assert!(matches!(lcr_sample(&model, &unsat, None, &LcrConfig::default()), Err(Error::Unsatisfiable)));
    }

    #[test]
    fn myopic_outputs_always_satisfy() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let model = TabularAR::random(4, 3, 2.0, &mut rng).unwrap();
        let c = build(&not_all_same(4, 3), 4, 3);
        for _ in 0..10_000 {
            assert!(c.satisfies(&myopic_sample(&model, &c, &mut rng).unwrap()));
        }
    }

    #[test]
    fn rejection_acceptance_rate() {
        // p(y_0 = 0) = 0.5 exactly, so half the draws are accepted
        let model = IndependentAR::new(&[vec![0.5, 0.5], vec![0.3, 0.7]]).unwrap();
        let c = build(&ConstraintExpr::lit(0, 0), 2, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (mut accepted, mut attempts) = (0usize, 0usize);
        while attempts < 100_000 {
            let (y, a) = rejection_sample(&model, &c, 1, &mut rng).unwrap();
            attempts += a;
            accepted += y.is_some() as usize;
        }
        let rate = accepted as f64 / attempts as f64;
        assert!((rate - 0.5).abs() < 0.01, "{rate}");

        let top = build(&ConstraintExpr::top(), 2, 2);
        assert_eq!(rejection_sample(&model, &top, 10, &mut rng).unwrap().1, 1);
        let never = IndependentAR::new(&[vec![1.0, 0.0], vec![0.5, 0.5]]).unwrap();
        assert_eq!(rejection_sample(&never, &build(&ConstraintExpr::lit(0, 1), 2, 2), 50, &mut rng).unwrap(), (None, 50));
        assert!(rejection_sample(&model, &c, 0, &mut rng).is_err());
    }

    #[test]
    fn diagnostics_math() {
        let d = Diagnostics::from_log_weights(vec![0.0, 0.0, NEG_INF, 2f64.ln()]);
        assert_eq!(d.dead, 1);
        assert!((d.probabilities[3] - 0.5).abs() < 1e-12);
        // (1+1+2)^2 / (1+1+4)
        assert!((d.ess - 16.0 / 6.0).abs() < 1e-12);
        assert!(d.summary_csv().starts_with("num_particles,dead,ess,log_w_variance\n4,1,"));
        assert_eq!(d.particles_csv().lines().count(), 5);
    }
}
