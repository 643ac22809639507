use std::fs;
use std::path::PathBuf;
use std::process::{Command, Output};

fn repo(rel: &str) -> PathBuf {
    [env!("CARGO_MANIFEST_DIR"), "..", "..", rel].iter().collect()
}

fn lcr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lcr"))
        .args(args)
        .env_remove("LCR_SEED")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

#[test]
fn run_is_byte_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = repo("configs/paths.cfg");
    let mut outputs = Vec::new();
    for (i, extra) in [None, None, Some("--sequential")].into_iter().enumerate() {
        let out = dir.path().join(format!("run{i}.csv"));
        let mut args = vec!["run", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()];
        args.extend(extra);
        let o = lcr(&args);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        assert!(dir.path().join(format!("run{i}.csv.timing.csv")).exists());
        outputs.push(fs::read(&out).unwrap());
    }
    assert_eq!(outputs[0], outputs[1]);
    assert_eq!(outputs[0], outputs[2]);
    let text = String::from_utf8(outputs[0].clone()).unwrap();
    assert!(text.starts_with("config_hash,seed,task,method,budget,"));
    assert_eq!(text.lines().count(), 4, "header plus one row per method");
}

#[test]
fn seed_precedence_is_config_then_env_then_flag() {
    let cfg = repo("configs/adversarial.cfg");
    let seed_of = |o: &Output| stdout(o).lines().nth(1).unwrap().split(',').nth(1).unwrap().to_string();

    let plain = lcr(&["run", cfg.to_str().unwrap()]);
    assert_eq!(seed_of(&plain), "1");

    let env = Command::new(env!("CARGO_BIN_EXE_lcr"))
        .args(["run", cfg.to_str().unwrap()])
        .env("LCR_SEED", "9")
        .output()
        .unwrap();
    assert_eq!(seed_of(&env), "9");

    let flag = Command::new(env!("CARGO_BIN_EXE_lcr"))
        .args(["run", cfg.to_str().unwrap(), "--seed", "5"])
        .env("LCR_SEED", "9")
        .output()
        .unwrap();
    assert_eq!(seed_of(&flag), "5");
}

#[test]
fn bad_parameters_exit_with_code_two() {
    let cfg = repo("configs/adversarial.cfg");
    let o = lcr(&["run", cfg.to_str().unwrap(), "--temp", "0"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("temperature"));

    let o = lcr(&["run", "/nonexistent/config.cfg"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn compile_reports_structure_and_model_count() {
    let dir = tempfile::tempdir().unwrap();
    let circuit = dir.path().join("latin4.circuit");
    let o = lcr(&["compile", repo("constraints/latin4.txt").to_str().unwrap(), "--out", circuit.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    for line in ["decomposable true", "smooth true", "deterministic true", "models 576"] {
        assert!(text.lines().any(|l| l == line), "missing {line:?} in\n{text}");
    }
    assert!(fs::metadata(&circuit).unwrap().len() > 0);

    let o = lcr(&["compile", repo("constraints/nohate.txt").to_str().unwrap(), "--order", "2,1,0"]);
    assert!(stdout(&o).lines().any(|l| l == "models 18"));
}

#[test]
fn oracle_check_passes_on_the_adversarial_instance() {
    let o = lcr(&["oracle-check", repo("configs/adversarial.cfg").to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    assert!(text.lines().any(|l| l.starts_with("myopic_tv_gap,0,") && l.ends_with(",true")));
}

#[test]
fn fixtures_command_matches_frozen_file() {
    let o = lcr(&["fixtures"]);
    assert!(o.status.success());
    let frozen = fs::read_to_string(repo("crates/core/tests/fixtures/derived.csv")).unwrap();
    assert_eq!(stdout(&o), frozen);
}
