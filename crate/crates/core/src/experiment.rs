//! Experiment harness behind the command-line tool: configuration files,
//! batched runs of each sampling method, the oracle battery and the frozen
//! fixture set.
//!
//! Configuration is `key = value` per line with `#` comments. `include = path`
//! splices another file in place (relative to the including file), and later
//! keys override earlier ones. Task-specific settings are written as
//! `<task>.<key>`, e.g. `paths.width = 4`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rand::Rng;

use crate::armodel::IndependentAR;
use crate::circuit::{Circuit, LeafWeights};
use crate::compiler::{compile, validate, CompileOptions, PropertyReport};
use crate::constraints::{parse_constraint, valid_path, ConstraintExpr, Sequence, Token, VarGrid};
use crate::error::{Error, Result};
use crate::exec::{derive_seed, stream_rng, Execution};
use crate::oracle::{
    adversarial_instance, brute_wmc, config_hash, exact_conditional, exact_myopic, tv_distance,
    ExactDistribution, Fixtures,
};
use crate::sampler::{lcr_sample_with, myopic_sample, rejection_sample, LcrConfig};
use crate::tasks::{all_sudoku4, count_models, generate, latin_groups, monotone_paths, Instance, TaskKind, TaskParams};
use crate::tokenize::{Canonized, ToyVocab};

/// Environment variable that overrides the configured seed.
pub const SEED_ENV: &str = "LCR_SEED";

const KNOWN_KEYS: [&str; 11] = [
    "task",
    "methods",
    "instances",
    "particles",
    "resamples",
    "temperature",
    "top_k",
    "seed",
    "budget",
    "draws",
    "tolerance",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Method {
    Lcr,
    Myopic,
    Rejection,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Lcr => "lcr",
            Method::Myopic => "myopic",
            Method::Rejection => "rejection",
        }
    }

    fn tag(self) -> u64 {
        match self {
            Method::Lcr => 1,
            Method::Myopic => 2,
            Method::Rejection => 3,
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lcr" => Ok(Method::Lcr),
            "myopic" => Ok(Method::Myopic),
            "rejection" => Ok(Method::Rejection),
            _ => Err(Error::Parameter(format!("unknown method {s:?}"))),
        }
    }
}

/// Resolved `key → value` pairs, before typing.
pub type ConfigMap = BTreeMap<String, String>;

/// Parses configuration text; `dir` anchors relative includes.
pub fn parse_config_map(text: &str, dir: Option<&Path>) -> Result<ConfigMap> {
    let mut map = ConfigMap::new();
    let mut stack = Vec::new();
    merge_text(text, dir, &mut map, &mut stack)?;
    Ok(map)
}

/// Reads a configuration file and everything it includes.
pub fn read_config_map(path: &Path) -> Result<ConfigMap> {
    let mut map = ConfigMap::new();
    merge_file(path, &mut map, &mut Vec::new())?;
    Ok(map)
}

fn merge_file(path: &Path, map: &mut ConfigMap, stack: &mut Vec<PathBuf>) -> Result<()> {
    let canon = path.canonicalize().map_err(|e| Error::io(path, e))?;
    if stack.contains(&canon) {
        return Err(Error::Parameter(format!("include cycle through {}", path.display())));
    }
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    stack.push(canon);
    merge_text(&text, path.parent(), map, stack)?;
    stack.pop();
    Ok(())
}

fn merge_text(text: &str, dir: Option<&Path>, map: &mut ConfigMap, stack: &mut Vec<PathBuf>) -> Result<()> {
    for (ln, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::parse(ln + 1, format!("expected key = value, got {line:?}")))?;
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() {
            return Err(Error::parse(ln + 1, "empty key"));
        }
        if k == "include" {
            let target = dir.map_or_else(|| PathBuf::from(v), |d| d.join(v));
            merge_file(&target, map, stack)?;
        } else if !KNOWN_KEYS.contains(&k) && !k.contains('.') {
            return Err(Error::parse(ln + 1, format!("unknown key {k:?}")));
        } else {
            map.insert(k.to_string(), v.to_string());
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub task: TaskKind,
    pub methods: Vec<Method>,
    pub instances: usize,
    pub particles: usize,
    pub resamples: usize,
    pub temperature: f64,
    pub top_k: Option<usize>,
    pub seed: u64,
    /// Unconstrained draws per rejection attempt.
    pub budget: usize,
    /// Total resampled draws per instance in the oracle battery.
    pub draws: usize,
    /// TV threshold in the oracle battery.
    pub tolerance: f64,
    pub params: TaskParams,
    map: ConfigMap,
}

fn typed<T: std::str::FromStr>(map: &ConfigMap, key: &str, default: T) -> Result<T> {
    match map.get(key) {
        None => Ok(default),
        Some(v) => v
            .parse()
            .map_err(|_| Error::Parameter(format!("cannot parse {key} = {v}"))),
    }
}

impl ExperimentConfig {
    pub fn from_map(map: ConfigMap) -> Result<Self> {
        let task: TaskKind = map
            .get("task")
            .ok_or_else(|| Error::Parameter("configuration has no task".into()))?
            .parse()?;
        let methods = map
            .get("methods")
            .map_or("lcr,myopic,rejection", String::as_str)
            .split(',')
            .map(|s| s.trim().parse())
            .collect::<Result<Vec<Method>>>()?;
        let top_k = match map.get("top_k").map(String::as_str) {
            None | Some("none") => None,
            Some(v) => Some(v.parse().map_err(|_| Error::Parameter(format!("cannot parse top_k = {v}")))?),
        };
        let prefix = format!("{}.", task.name());
        let params = TaskParams(
            map.iter()
                .filter_map(|(k, v)| k.strip_prefix(&prefix).map(|p| (p.to_string(), v.clone())))
                .collect(),
        );
        let cfg = ExperimentConfig {
            task,
            methods,
            instances: typed(&map, "instances", 20)?,
            particles: typed(&map, "particles", 32)?,
            resamples: typed(&map, "resamples", 16)?,
            temperature: typed(&map, "temperature", 1.0)?,
            top_k,
            seed: typed(&map, "seed", 0)?,
            budget: typed(&map, "budget", 32)?,
            draws: typed(&map, "draws", 200_000)?,
            tolerance: typed(&map, "tolerance", 0.02)?,
            params,
            map,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Self> {
        Self::from_map(parse_config_map(text, None)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_map(read_config_map(path)?)
    }

    fn validate(&self) -> Result<()> {
        if self.methods.is_empty() {
            return Err(Error::Parameter("no methods selected".into()));
        }
        for (name, v) in [
            ("instances", self.instances),
            ("particles", self.particles),
            ("resamples", self.resamples),
            ("budget", self.budget),
            ("draws", self.draws),
        ] {
            if v == 0 {
                return Err(Error::Parameter(format!("{name} must be at least 1")));
            }
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::Parameter(format!("temperature {} must be positive", self.temperature)));
        }
        if self.top_k == Some(0) {
            return Err(Error::Parameter("top_k must be at least 1".into()));
        }
        if self.tolerance.is_nan() || self.tolerance <= 0.0 {
            return Err(Error::Parameter("tolerance must be positive".into()));
        }
        Ok(())
    }

    /// Returns a copy with `key` set, re-validated.
    pub fn with(&self, key: &str, value: &str) -> Result<Self> {
        let mut map = self.map.clone();
        map.insert(key.to_string(), value.to_string());
        Self::from_map(map)
    }

    /// Applies the seed override from the environment, if set.
    pub fn with_env_seed(self) -> Result<Self> {
        match std::env::var(SEED_ENV) {
            Ok(s) => self.with("seed", &s),
            Err(_) => Ok(self),
        }
    }

    /// Sorted `key=value` lines of every setting except the seed.
    pub fn canonical(&self) -> String {
        self.map
            .iter()
            .filter(|(k, _)| k.as_str() != "seed")
            .fold(String::new(), |mut s, (k, v)| {
                let _ = writeln!(s, "{k}={v}");
                s
            })
    }

    pub fn hash(&self) -> String {
        config_hash(&self.canonical())
    }

    pub fn lcr_config(&self, seed: u64) -> LcrConfig {
        LcrConfig {
            num_particles: self.particles,
            temperature: self.temperature,
            top_k: self.top_k,
            seed,
            resample_count: self.resamples,
        }
    }
}

/// Generates every instance of the configured task, in index order.
pub fn instances(cfg: &ExperimentConfig, exec: Execution) -> Result<Vec<Instance>> {
    exec.map(cfg.instances, |i| generate(cfg.task, &cfg.params, cfg.seed, i))
        .into_iter()
        .collect()
}

fn canonical_ok(circuit: &Circuit, vocab: Option<&ToyVocab>, y: &[crate::constraints::Token]) -> bool {
    match vocab.map(|v| v.canonize(y, y.len())) {
        None => circuit.satisfies(y),
        Some(Canonized::Tokens(c)) => circuit.satisfies(&c),
        Some(Canonized::Overflow) => false,
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
struct Tally {
    outputs: usize,
    failures: usize,
    exact: usize,
    consistent: usize,
    canonical: usize,
    ess_sum: f64,
    ess_runs: usize,
    dead: usize,
    all_dead_runs: usize,
}

impl Tally {
    fn absorb(&mut self, other: &Tally) {
        self.outputs += other.outputs;
        self.failures += other.failures;
        self.exact += other.exact;
        self.consistent += other.consistent;
        self.canonical += other.canonical;
        self.ess_sum += other.ess_sum;
        self.ess_runs += other.ess_runs;
        self.dead += other.dead;
        self.all_dead_runs += other.all_dead_runs;
    }

    fn record(&mut self, inst: &Instance, y: &[crate::constraints::Token]) {
        self.outputs += 1;
        self.consistent += inst.circuit.satisfies(y) as usize;
        self.canonical += canonical_ok(&inst.circuit, inst.vocab.as_ref(), y) as usize;
        if let Some(t) = &inst.truth {
            self.exact += t.is_exact(y) as usize;
        }
    }
}

fn run_method(cfg: &ExperimentConfig, inst: &Instance, method: Method, exec: Execution) -> Result<Tally> {
    let seed = derive_seed(cfg.seed, &[inst.index as u64, method.tag()]);
    let mut t = Tally::default();
    match method {
        Method::Lcr => {
            let out = lcr_sample_with(
                inst.model.as_ref(),
                &inst.circuit,
                inst.vocab.as_ref(),
                &cfg.lcr_config(seed),
                exec,
            );
            match out {
                Ok(out) => {
                    for y in &out.samples {
                        t.record(inst, y);
                    }
                    t.ess_sum += out.diagnostics.ess;
                    t.ess_runs += 1;
                    t.dead += out.diagnostics.dead;
                }
                Err(Error::AllDead { particles, .. }) => {
                    t.failures += cfg.resamples;
                    t.dead += particles;
                    t.all_dead_runs += 1;
                }
                Err(e) => return Err(e),
            }
        }
        Method::Myopic => {
            let mut rng = stream_rng(seed, 0);
            for _ in 0..cfg.resamples {
                match myopic_sample(inst.model.as_ref(), &inst.circuit, &mut rng) {
                    Ok(y) => t.record(inst, &y),
                    Err(Error::Unsatisfiable) => t.failures += 1,
                    Err(e) => return Err(e),
                }
            }
        }
        Method::Rejection => {
            let mut rng = stream_rng(seed, 0);
            for _ in 0..cfg.resamples {
                match rejection_sample(inst.model.as_ref(), &inst.circuit, cfg.budget, &mut rng)? {
                    (Some(y), _) => t.record(inst, &y),
                    (None, _) => t.failures += 1,
                }
            }
        }
    }
    Ok(t)
}

/// One aggregated CSV row.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRow {
    pub task: TaskKind,
    pub method: Method,
    pub budget: usize,
    pub outputs: usize,
    pub failures: usize,
    /// `None` when the task defines no ground truth.
    pub exact_pct: Option<f64>,
    pub consistent_pct: f64,
    pub canonical_pct: f64,
    /// `None` for methods without particles.
    pub mean_ess: Option<f64>,
    pub dead_particles: Option<usize>,
    pub all_dead_runs: usize,
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub config_hash: String,
    pub seed: u64,
    pub rows: Vec<RunRow>,
    pub wall: Vec<(Method, Duration)>,
}

pub const RUN_CSV_HEADER: &str = "config_hash,seed,task,method,budget,outputs,failures,exact_pct,consistent_pct,canonical_pct,mean_ess,dead_particles";

fn pct(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        100.0 * num as f64 / den as f64
    }
}

impl RunReport {
    /// True when some LCR run ended with every particle dead.
    pub fn had_failures(&self) -> bool {
        self.rows.iter().any(|r| r.all_dead_runs > 0)
    }

    pub fn row(&self, method: Method) -> Option<&RunRow> {
        self.rows.iter().find(|r| r.method == method)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(RUN_CSV_HEADER);
        s.push('\n');
        let opt = |v: Option<String>| v.unwrap_or_default();
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{:.2},{:.2},{},{}",
                self.config_hash,
                self.seed,
                r.task,
                r.method.name(),
                r.budget,
                r.outputs,
                r.failures,
                opt(r.exact_pct.map(|x| format!("{x:.2}"))),
                r.consistent_pct,
                r.canonical_pct,
                opt(r.mean_ess.map(|x| format!("{x:.3}"))),
                opt(r.dead_particles.map(|x| x.to_string())),
            );
        }
        s
    }

    /// Wall-clock seconds per method; kept apart from the main CSV so that
    /// file stays byte-reproducible.
    pub fn timing_csv(&self) -> String {
        let mut s = String::from("config_hash,seed,method,wall_seconds\n");
        for (m, d) in &self.wall {
            let _ = writeln!(s, "{},{},{},{:.3}", self.config_hash, self.seed, m.name(), d.as_secs_f64());
        }
        s
    }
}

/// Runs every configured method on every instance.
pub fn run_experiment(cfg: &ExperimentConfig, exec: Execution) -> Result<RunReport> {
    let insts = instances(cfg, exec)?;
    let mut rows = Vec::new();
    let mut wall = Vec::new();
    for &method in &cfg.methods {
        let start = Instant::now();
        let per: Vec<Tally> = exec
            .map(insts.len(), |i| run_method(cfg, &insts[i], method, exec))
            .into_iter()
            .collect::<Result<_>>()?;
        wall.push((method, start.elapsed()));
        let mut t = Tally::default();
        per.iter().for_each(|p| t.absorb(p));
        let attempts = t.outputs + t.failures;
        let has_truth = insts.iter().any(|i| i.truth.is_some());
        rows.push(RunRow {
            task: cfg.task,
            method,
            budget: match method {
                Method::Lcr => cfg.particles,
                Method::Myopic => 1,
                Method::Rejection => cfg.budget,
            },
            outputs: t.outputs,
            failures: t.failures,
            exact_pct: has_truth.then(|| pct(t.exact, attempts)),
            consistent_pct: pct(t.consistent, attempts),
            canonical_pct: pct(t.canonical, attempts),
            mean_ess: (method == Method::Lcr).then(|| {
                if t.ess_runs == 0 {
                    0.0
                } else {
                    t.ess_sum / t.ess_runs as f64
                }
            }),
            dead_particles: (method == Method::Lcr).then_some(t.dead),
            all_dead_runs: t.all_dead_runs,
        });
    }
    Ok(RunReport { config_hash: cfg.hash(), seed: cfg.seed, rows, wall })
}

/// One measured invariant of the oracle battery.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub instance: usize,
    pub measured: f64,
    /// `"<="` or `">="`.
    pub relation: &'static str,
    pub threshold: f64,
}

impl Check {
    fn at_most(name: &str, instance: usize, measured: f64, threshold: f64) -> Self {
        Check { name: name.into(), instance, measured, relation: "<=", threshold }
    }

    fn at_least(name: &str, instance: usize, measured: f64, threshold: f64) -> Self {
        Check { name: name.into(), instance, measured, relation: ">=", threshold }
    }

    pub fn passed(&self) -> bool {
        match self.relation {
            "<=" => self.measured <= self.threshold,
            _ => self.measured >= self.threshold,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct OracleReport {
    pub checks: Vec<Check>,
}

impl OracleReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(Check::passed)
    }

    pub fn failed(&self) -> Vec<&Check> {
        self.checks.iter().filter(|c| !c.passed()).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("check,instance,measured,relation,threshold,pass\n");
        for c in &self.checks {
            let _ = writeln!(
                s,
                "{},{},{:.6e},{},{},{}",
                c.name,
                c.instance,
                c.measured,
                c.relation,
                c.threshold,
                c.passed()
            );
        }
        s
    }
}

/// Empirical distribution of `draws` LCR outputs: repeated independent runs
/// of `cfg.particles` particles with `cfg.resamples` draws each.
pub fn lcr_empirical(cfg: &ExperimentConfig, inst: &Instance, seed: u64, exec: Execution) -> Result<ExactDistribution> {
    let runs = cfg.draws.div_ceil(cfg.resamples);
    let batches: Vec<Vec<Sequence>> = exec
        .map(runs, |r| {
            let lc = cfg.lcr_config(derive_seed(seed, &[r as u64]));
            lcr_sample_with(inst.model.as_ref(), &inst.circuit, inst.vocab.as_ref(), &lc, Execution::Sequential)
                .map(|o| o.samples)
        })
        .into_iter()
        .collect::<Result<_>>()?;
    let samples: Vec<Sequence> = batches.into_iter().flatten().take(cfg.draws).collect();
    ExactDistribution::empirical(inst.grid.n, inst.grid.k, &samples)
}

/// Compiler soundness, WMC agreement, LCR convergence and the myopic gap on
/// every instance of the configured task.
pub fn oracle_check(cfg: &ExperimentConfig, exec: Execution) -> Result<OracleReport> {
    let insts = instances(cfg, exec)?;
    let mut report = OracleReport::default();
    for inst in &insts {
        let i = inst.index;
        let model = inst.model.as_ref();
        let ev = inst.expr.evaluator();
        let exact = exact_conditional(model, |y| inst.circuit.satisfies(y))?;
        let from_expr = exact_conditional(model, |y| ev.eval(y))?;
        report.checks.push(Check::at_most("compiled_vs_ast_tv", i, tv_distance(&exact, &from_expr), 1e-12));

        let mut rng = stream_rng(derive_seed(cfg.seed, &[i as u64, 0x574d43]), 0);
        let (n, k) = (inst.grid.n, inst.grid.k);
        let w = LeafWeights::new(n, k, (0..n * k).map(|_| rng.random_range(-3.0..1.0)).collect())?;
        let a = inst.circuit.wmc(&w)?;
        let b = brute_wmc(&w, |y| ev.eval(y))?;
        let rel = if a == b { 0.0 } else { ((a - b) / b.abs().max(1e-300)).abs() };
        report.checks.push(Check::at_most("wmc_rel_error", i, rel, 1e-9));

        let myopic = exact_myopic(model, |y| inst.circuit.satisfies(y))?;
        let gap = tv_distance(&exact, &myopic);
        if cfg.task == TaskKind::Adversarial {
            report.checks.push(Check::at_least("myopic_tv_gap", i, gap, 0.05));
        } else {
            report.checks.push(Check::at_least("myopic_tv_gap", i, gap, 0.0));
        }

        let emp = lcr_empirical(cfg, inst, derive_seed(cfg.seed, &[i as u64, 0x4c4352]), exec)?;
        report.checks.push(Check::at_most("lcr_tv", i, tv_distance(&emp, &exact), cfg.tolerance));
    }
    Ok(report)
}

/// Seed and size of the frozen synthetic suite.
pub const SYNTHETIC_SUITE_SEED: u64 = 2024;
pub const SYNTHETIC_SUITE_SIZE: usize = 20;

/// Position-independent model and constraint used for the factorized checks.
pub fn factorized_instance() -> (IndependentAR, ConstraintExpr, VarGrid) {
    let rows = vec![
        vec![0.5, 0.3, 0.2],
        vec![0.1, 0.6, 0.3],
        vec![0.25, 0.25, 0.5],
        vec![0.4, 0.4, 0.2],
    ];
    let model = IndependentAR::new(&rows).expect("fixed rows are normalized");
    let l = ConstraintExpr::lit;
    let expr = ConstraintExpr::and(vec![
        ConstraintExpr::or(vec![l(0, 0), l(1, 0), l(2, 0)]),
        l(3, 2).implies(l(0, 1)),
        ConstraintExpr::and(vec![l(1, 1), l(2, 1)]).not(),
    ]);
    (model, expr, VarGrid::new(4, 3, None).expect("fixed grid is valid"))
}

/// Recomputes every derived constant the test suite relies on.
pub fn derived_fixtures() -> Result<Fixtures> {
    let mut f = Fixtures::default();

    let (model, expr, _) = adversarial_instance();
    let ev = expr.evaluator();
    let exact = exact_conditional(&model, |y| ev.eval(y))?;
    let myopic = exact_myopic(&model, |y| ev.eval(y))?;
    let cfg = "instance=adversarial";
    f.insert_distribution("adversarial.exact", cfg, &exact);
    f.insert_distribution("adversarial.myopic", cfg, &myopic);
    f.insert(
        "adversarial.summary",
        cfg,
        vec![
            ("tv_gap".into(), tv_distance(&exact, &myopic)),
            ("exact_first_a".into(), exact.marginal(0)[0]),
            ("myopic_first_a".into(), myopic.marginal(0)[0]),
        ],
    );

    let params = TaskParams::default();
    for i in 0..SYNTHETIC_SUITE_SIZE {
        let inst = generate(TaskKind::Synthetic, &params, SYNTHETIC_SUITE_SEED, i)?;
        let ev = inst.expr.evaluator();
        let d = exact_conditional(inst.model.as_ref(), |y| ev.eval(y))?;
        let cfg = format!("task=synthetic\nseed={SYNTHETIC_SUITE_SEED}\nindex={i}\nk={}\n", inst.grid.k);
        f.insert_distribution(&format!("synthetic.{i:02}"), &cfg, &d);
    }

    let (model, expr, grid) = factorized_instance();
    let ev = expr.evaluator();
    let rows: Vec<f64> = (0..grid.n).flat_map(|i| model.row(i).to_vec()).collect();
    let w = LeafWeights::new(grid.n, grid.k, rows)?;
    let cfg = "instance=factorized";
    f.insert("factorized.wmc", cfg, vec![("log_wmc".into(), brute_wmc(&w, |y| ev.eval(y))?)]);
    f.insert_distribution("factorized.exact", cfg, &exact_conditional(&model, |y| ev.eval(y))?);

    let (pgrid, pexpr) = valid_path(4, 4)?;
    let lgrid = VarGrid::new(16, 4, None)?;
    let lexpr = crate::constraints::all_different(&lgrid, &latin_groups(4))?;
    f.insert(
        "model_counts",
        "counts=latin4,sudoku4,paths4x4",
        vec![
            ("latin4".into(), count_latin_by_rows(&lexpr, 4) as f64),
            ("sudoku4".into(), all_sudoku4().len() as f64),
            ("paths4x4".into(), count_models(&pexpr, &pgrid) as f64),
            ("paths4x4_enumerated".into(), monotone_paths(4, 4).len() as f64),
        ],
    );

    let vocab = ToyVocab::new(&["a", "b", "ab"])?;
    let canon = vocab.canonize(&[0, 1], 2);
    let toks = canon.tokens().unwrap_or(&[]);
    f.insert(
        "canonize.a_b",
        "vocab=a,b,ab\ninput=0 1\nn=2",
        toks.iter().enumerate().map(|(i, &t)| (format!("pos{i}"), t as f64)).collect(),
    );
    Ok(f)
}

/// Counts assignments of a `s x s` grid satisfying `expr`, enumerating only
/// grids whose rows are permutations. Every Latin square has that shape, so
/// the count is exact while skipping the `s^(s*s)` full enumeration.
fn count_latin_by_rows(expr: &ConstraintExpr, s: usize) -> usize {
    fn perms(prefix: &mut Sequence, s: usize, out: &mut Vec<Sequence>) {
        if prefix.len() == s {
            out.push(prefix.clone());
            return;
        }
        for t in 0..s as Token {
            if !prefix.contains(&t) {
                prefix.push(t);
                perms(prefix, s, out);
                prefix.pop();
            }
        }
    }
    let mut rows = Vec::new();
    perms(&mut Vec::new(), s, &mut rows);
    let ev = expr.evaluator();
    let mut pick = vec![0usize; s];
    let mut count = 0;
    loop {
        let grid: Sequence = pick.iter().flat_map(|&r| rows[r].iter().copied()).collect();
        count += ev.eval(&grid) as usize;
        let mut i = s;
        loop {
            if i == 0 {
                return count;
            }
            i -= 1;
            pick[i] += 1;
            if pick[i] < rows.len() {
                break;
            }
            pick[i] = 0;
        }
    }
}

/// Structural summary of a compiled constraint.
#[derive(Debug, Clone, PartialEq)]
pub struct CompileSummary {
    pub circuit: Circuit,
    pub properties: PropertyReport,
    /// `log` of the number of models.
    pub log_model_count: f64,
}

/// Parses a constraint file (which must carry a `GRID` header) and compiles it.
pub fn compile_text(text: &str, order: Option<Vec<usize>>) -> Result<CompileSummary> {
    let (grid, expr) = parse_constraint(text)?;
    let grid = grid.ok_or_else(|| Error::parse(1, "constraint file needs a GRID header"))?;
    let opts = CompileOptions { variable_order: order, ..CompileOptions::default() };
    let circuit = compile(&expr, &grid, &opts)?;
    let properties = validate(&circuit);
    let log_model_count = circuit.wmc(&LeafWeights::ones(grid.n, grid.k))?;
    Ok(CompileSummary { circuit, properties, log_model_count })
}
