//! Cross-module invariants checked against brute-force enumeration on small
//! random instances.

use proptest::prelude::*;
use rand::Rng;

use lcr_core::armodel::{IndependentAR, TabularAR};
use lcr_core::circuit::{Circuit, LeafWeights};
use lcr_core::compiler::{compile, validate, CompileOptions};
use lcr_core::constraints::{parse_constraint, random_expr, write_constraint, ConstraintExpr, Sequence, Token, VarGrid};
use lcr_core::error::Error;
use lcr_core::exec::{stream_rng, Execution};
use lcr_core::oracle::{brute_wmc, exact_conditional};
use lcr_core::sampler::{lcr_sample_with, LcrConfig};

fn all_sequences(n: usize, k: usize) -> Vec<Sequence> {
    let mut out = vec![Vec::new()];
    for _ in 0..n {
        out = out
            .into_iter()
            .flat_map(|p: Sequence| (0..k as Token).map(move |t| [p.clone(), vec![t]].concat()))
            .collect();
    }
    out
}

fn instance(seed: u64, n: usize, k: usize, depth: usize) -> (VarGrid, ConstraintExpr, Circuit) {
    let mut rng = stream_rng(seed, 0);
    let grid = VarGrid::new(n, k, None).unwrap();
    let expr = random_expr(&grid, depth, &mut rng);
    let circuit = compile(&expr, &grid, &CompileOptions::default()).unwrap();
    (grid, expr, circuit)
}

fn random_weights(seed: u64, n: usize, k: usize) -> LeafWeights {
    let mut rng = stream_rng(seed, 1);
    LeafWeights::new(n, k, (0..n * k).map(|_| rng.random_range(-3.0..2.0)).collect()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn circuit_accepts_exactly_the_formula_models(seed: u64, n in 1usize..=4, k in 2usize..=3, depth in 1usize..=5) {
        let (grid, expr, circuit) = instance(seed, n, k, depth);
        let report = validate(&circuit);
        prop_assert!(report.decomposable && report.smooth && report.deterministic);
        for y in all_sequences(grid.n, grid.k) {
            prop_assert_eq!(circuit.satisfies(&y), expr.eval(&y), "y = {:?}", y);
        }
    }

    #[test]
    fn wmc_matches_enumeration(seed: u64, n in 1usize..=4, k in 2usize..=3, depth in 1usize..=5) {
        let (_, expr, circuit) = instance(seed, n, k, depth);
        let w = random_weights(seed, n, k);
        let a = circuit.wmc(&w).unwrap();
        let b = brute_wmc(&w, |y| expr.eval(y)).unwrap();
        if b == f64::NEG_INFINITY {
            prop_assert_eq!(a, b);
        } else {
            prop_assert!(((a - b).exp() - 1.0).abs() < 1e-9, "circuit {} brute {}", a, b);
        }
    }

    #[test]
    fn marginals_match_enumeration(seed: u64, n in 1usize..=4, k in 2usize..=3, depth in 1usize..=5) {
        let (_, expr, circuit) = instance(seed, n, k, depth);
        prop_assume!(!circuit.is_false());
        let mut rng = stream_rng(seed, 2);
        let model = IndependentAR::random(n, k, 1.0, &mut rng).unwrap();
        let rows: Vec<Vec<f64>> = (0..n).map(|i| model.row(i).iter().map(|l| l.exp()).collect()).collect();
        let w = LeafWeights::from_probs(&rows).unwrap();
        let m = circuit.marginals(&w).unwrap();
        let exact = exact_conditional(&model, |y| expr.eval(y)).unwrap();
        for i in 0..n {
            let want = exact.marginal(i);
            for (j, p) in want.iter().enumerate() {
                prop_assert!((m.get(i, j).exp() - p).abs() < 1e-9, "({}, {})", i, j);
            }
        }
    }

    #[test]
    fn variable_order_does_not_change_the_model_set(seed: u64, n in 2usize..=4, depth in 1usize..=5) {
        let (grid, expr, circuit) = instance(seed, n, 3, depth);
        let order: Vec<usize> = (0..n).rev().collect();
        let opts = CompileOptions { variable_order: Some(order), ..CompileOptions::default() };
        let reversed = compile(&expr, &grid, &opts).unwrap();
        for y in all_sequences(n, 3) {
            prop_assert_eq!(circuit.satisfies(&y), reversed.satisfies(&y));
        }
    }

    #[test]
    fn text_formats_round_trip(seed: u64, n in 1usize..=4, k in 2usize..=3, depth in 1usize..=5) {
        let (grid, expr, circuit) = instance(seed, n, k, depth);
        let (g2, e2) = parse_constraint(&write_constraint(Some(&grid), &expr)).unwrap();
        prop_assert_eq!(g2, Some(grid));
        let c2 = Circuit::from_text(&circuit.to_text()).unwrap();
        for y in all_sequences(n, k) {
            prop_assert_eq!(e2.eval(&y), expr.eval(&y));
            prop_assert_eq!(c2.satisfies(&y), circuit.satisfies(&y));
        }
    }

    #[test]
    fn circuit_samples_satisfy(seed: u64, n in 1usize..=5, k in 2usize..=4, depth in 1usize..=5) {
        let (_, _, circuit) = instance(seed, n, k, depth);
        prop_assume!(!circuit.is_false());
        let w = random_weights(seed, n, k);
        let mut rng = stream_rng(seed, 3);
        for _ in 0..50 {
            let y = circuit.sample(&w, &mut rng).unwrap();
            prop_assert!(circuit.satisfies(&y));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    /// Whatever the proposal settings, a returned sample satisfies the
    /// constraint. The only admissible failures are an unsatisfiable circuit
    /// and a batch with no live particle.
    #[test]
    fn lcr_outputs_always_satisfy(
        seed: u64,
        n in 1usize..=4,
        k in 2usize..=4,
        depth in 1usize..=5,
        particles in 1usize..=16,
        temperature in 0.2f64..3.0,
        top_k in proptest::option::of(1usize..=4),
    ) {
        let (_, expr, circuit) = instance(seed, n, k, depth);
        let mut rng = stream_rng(seed, 4);
        let model = TabularAR::random(n, k, 2.0, &mut rng).unwrap();
        let cfg = LcrConfig {
            num_particles: particles,
            temperature,
            top_k: top_k.map(|t| t.min(k)),
            seed,
            resample_count: 8,
        };
        match lcr_sample_with(&model, &circuit, None, &cfg, Execution::default()) {
            Ok(out) => {
                for y in &out.samples {
                    prop_assert!(circuit.satisfies(y) && expr.eval(y));
                }
                for (p, &prob) in out.particles.iter().zip(&out.diagnostics.probabilities) {
                    prop_assert!(circuit.satisfies(&p.y) || p.is_dead());
                    if p.is_dead() {
                        prop_assert_eq!(prob, 0.0);
                    }
                }
                let total: f64 = out.diagnostics.probabilities.iter().sum();
                prop_assert!((total - 1.0).abs() < 1e-9);
                prop_assert!(out.diagnostics.ess >= 1.0 - 1e-9);
                prop_assert!(out.diagnostics.ess <= particles as f64 + 1e-9);
            }
            Err(Error::Unsatisfiable) => prop_assert!(circuit.is_false()),
            Err(Error::AllDead { particles: p, .. }) => prop_assert_eq!(p, particles),
            Err(e) => prop_assert!(false, "unexpected error {}", e),
        }
    }

    #[test]
    fn execution_strategy_does_not_change_output(seed: u64, n in 1usize..=4, k in 2usize..=3, depth in 1usize..=4) {
        let (_, _, circuit) = instance(seed, n, k, depth);
        prop_assume!(!circuit.is_false());
        let mut rng = stream_rng(seed, 5);
        let model = TabularAR::random(n, k, 1.0, &mut rng).unwrap();
        let cfg = LcrConfig { num_particles: 32, resample_count: 16, seed, ..LcrConfig::default() };
        let seq = lcr_sample_with(&model, &circuit, None, &cfg, Execution::Sequential);
        let par = lcr_sample_with(&model, &circuit, None, &cfg, Execution::Parallel);
        match (seq, par) {
            (Ok(a), Ok(b)) => {
                prop_assert_eq!(a.samples, b.samples);
                prop_assert_eq!(a.particles, b.particles);
                prop_assert_eq!(a.diagnostics, b.diagnostics);
            }
            (Err(a), Err(b)) => prop_assert_eq!(a.to_string(), b.to_string()),
            _ => prop_assert!(false, "strategies disagree on success"),
        }
    }
}
