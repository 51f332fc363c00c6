use std::path::Path;

use learngene::cli::dispatch;
use learngene::evolution::{read_records, RECORDS_FILE};

fn run(args: &[&str]) -> (i32, String, String) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let argv = std::iter::once("learngene").chain(args.iter().copied());
    let code = dispatch(argv, &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

const TINY: &str = "\
synthetic_per_class = 12
synthetic_size = 16
generations = 2
train_epochs = 1
critic_epochs = 1
finetune_epochs = 1
probe_iterations = 0,2
episodic_episodes = 2
episodic_epochs = 1
episodic_k_shot = 3
episodic_queries = 2
seeds = 0,1
";

fn tiny_config(dir: &Path) -> String {
    let p = dir.join("run.ini");
    std::fs::write(&p, TINY).unwrap();
    p.to_string_lossy().into_owned()
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(run(&["--bogus"]).0, 1);
    assert_eq!(run(&[]).0, 1);
    assert_eq!(run(&["validate"]).0, 1);
    let (code, _, err) = run(&["inherit", "--gene", "x.lgck", "--target", "mini-vgg-6"]);
    assert_eq!(code, 1);
    assert!(err.contains("--out"), "{err}");
}

#[test]
fn help_and_version_exit_zero() {
    let (code, out, _) = run(&["--help"]);
    assert_eq!(code, 0);
    for cmd in ["evolve", "inherit", "eval", "probe", "episodic", "report", "grad-check", "validate"] {
        assert!(out.contains(cmd), "help lacks {cmd}");
    }
    assert_eq!(run(&["--version"]).0, 0);
}

#[test]
fn runtime_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.lgck");
    let (code, _, err) = run(&["validate", "--gene", missing.to_str().unwrap()]);
    assert_eq!(code, 2);
    assert!(err.starts_with("error:"), "{err}");

    let bad = dir.path().join("bad.lgds");
    std::fs::write(&bad, b"LGDS\x09\x00").unwrap();
    assert_eq!(run(&["validate", "--dataset", bad.to_str().unwrap()]).0, 2);

    let cfg = dir.path().join("bad.ini");
    std::fs::write(&cfg, "population = many\n").unwrap();
    assert_eq!(run(&["validate", "--config", cfg.to_str().unwrap()]).0, 2);

    assert_eq!(run(&["report", dir.path().to_str().unwrap()]).0, 2);
    assert_eq!(run(&["evolve", "--ablation", "no_such_flag"]).0, 2);
}

#[test]
fn grad_check_command() {
    let (code, out, err) = run(&["grad-check", "--spec", "mini-vgg-6", "--seeds", "1", "--coords", "3"]);
    assert_eq!(code, 0, "{err}");
    assert!(out.contains("mini-vgg-6 seed 0"), "{out}");
}

#[test]
fn evolve_report_inherit_and_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let run_dir = dir.path().join("run");
    let rd = run_dir.to_str().unwrap();

    let (code, out, err) = run(&["evolve", "--config", &cfg, "--out", rd]);
    assert_eq!(code, 0, "{err}");
    assert!(out.contains("best gene"), "{out}");
    for f in [RECORDS_FILE, "state.lgck", "best.lgck", "config.ini", "config.json"] {
        assert!(run_dir.join(f).exists(), "{f} missing");
    }
    assert_eq!(read_records(&run_dir.join(RECORDS_FILE)).unwrap().len(), 2);

    let (code, out, _) = run(&["report", rd]);
    assert_eq!(code, 0);
    assert!(out.contains("best gene"));
    let csv = std::fs::read_to_string(run_dir.join("report.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);

    let best = run_dir.join("best.lgck");
    let b = best.to_str().unwrap();
    let (code, out, _) = run(&["validate", "--gene", b]);
    assert_eq!(code, 0);
    assert!(out.contains("ok"));

    let net = dir.path().join("net.lgck");
    let (code, out, err) = run(&["inherit", "--gene", b, "--target", "mini-vgg-8", "--out", net.to_str().unwrap()]);
    assert_eq!(code, 0, "{err}");
    assert!(out.contains("PIM at [2, 4]"), "{out}");
    assert!(net.exists());

    // an evolution checkpoint stands in for its best gene
    let state = run_dir.join("state.lgck");
    assert_eq!(run(&["validate", "--gene", state.to_str().unwrap()]).0, 0);

    let (code, out, err) = run(&["eval", "--config", &cfg, "--gene", b]);
    assert_eq!(code, 0, "{err}");
    assert!(out.contains("of 2 seeds"), "{out}");

    let (code, out, err) = run(&["probe", "--config", &cfg, "--gene", b]);
    assert_eq!(code, 0, "{err}");
    assert_eq!(out.lines().count(), 3, "{out}");

    let table = dir.path().join("episodic.txt");
    let (code, out, err) = run(&["episodic", "--config", &cfg, "--gene", b, "--out", table.to_str().unwrap()]);
    assert_eq!(code, 0, "{err}");
    assert_eq!(std::fs::read_to_string(&table).unwrap(), out);
}

#[test]
fn resumed_run_matches_uninterrupted_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));

    assert_eq!(run(&["evolve", "--config", &cfg, "--out", a.to_str().unwrap(), "--generations", "3"]).0, 0);
    assert_eq!(run(&["evolve", "--config", &cfg, "--out", b.to_str().unwrap(), "--generations", "1"]).0, 0);
    let (code, _, err) = run(&["evolve", "--config", &cfg, "--out", b.to_str().unwrap(), "--generations", "3", "--resume"]);
    assert_eq!(code, 0, "{err}");
    assert_eq!(
        std::fs::read(a.join(RECORDS_FILE)).unwrap(),
        std::fs::read(b.join(RECORDS_FILE)).unwrap()
    );
    let c = dir.path().join("c");
    assert_eq!(run(&["evolve", "--config", &cfg, "--out", c.to_str().unwrap(), "--resume"]).0, 1);
}

#[test]
fn seed_flag_changes_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let common = ["evolve", "--config", &cfg, "--generations", "1"];
    assert_eq!(run(&[&common[..], &["--out", a.to_str().unwrap(), "--seed", "5"]].concat()).0, 0);
    assert_eq!(run(&[&common[..], &["--out", b.to_str().unwrap(), "--seed", "6"]].concat()).0, 0);
    assert_ne!(
        std::fs::read(a.join(RECORDS_FILE)).unwrap(),
        std::fs::read(b.join(RECORDS_FILE)).unwrap()
    );
}
