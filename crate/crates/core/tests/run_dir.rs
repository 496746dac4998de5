//! Run directories: determinism, overwrite refusal, resumption.

use std::fs;
use std::io::Write;
use std::path::Path;

use exposim::sim::{
    read_clicks, read_rounds_csv, read_rounds_jsonl, read_targets, resume_dir, run_to_dir, Pipeline, RunDir,
    SimConfig, SimError, CLICKS_FILE, ERROR_FILE, LEDGER_FILE, MODEL_FILE, ROUNDS_CSV, ROUNDS_JSONL, TARGETS_FILE,
};

fn write_dataset(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("ratings.dat");
    let mut f = fs::File::create(&path).unwrap();
    for u in 0..25u32 {
        for k in 0..9u32 {
            let item = if k % 3 == 0 { k % 4 } else { (u * 5 + k * k) % 40 };
            writeln!(f, "{}::{}::{}::{}", u + 1, item + 100, 1 + (u + k) % 5, 1000 + k).unwrap();
        }
    }
    path
}

fn config(dir: &Path, out: &str, pipeline: Pipeline, rounds: u32) -> SimConfig {
    SimConfig {
        dataset: write_dataset(dir),
        rounds,
        k: 3,
        l: 8,
        pipeline,
        mf_factors: 4,
        mf_epochs: 3,
        seed: 11,
        output_dir: dir.join(out),
        ..SimConfig::default()
    }
}

#[test]
fn identical_configs_give_identical_files() {
    let tmp = tempfile::tempdir().unwrap();
    let a = config(tmp.path(), "a", Pipeline::MfDmDynamic, 3);
    let b = SimConfig { output_dir: tmp.path().join("b"), ..a.clone() };
    run_to_dir::<f64>(&a, false, |_| {}).unwrap();
    run_to_dir::<f64>(&b, false, |_| {}).unwrap();
    for f in [ROUNDS_CSV, ROUNDS_JSONL, CLICKS_FILE, TARGETS_FILE, LEDGER_FILE] {
        assert_eq!(
            fs::read(a.output_dir.join(f)).unwrap(),
            fs::read(b.output_dir.join(f)).unwrap(),
            "{f}"
        );
    }
    let csv = read_rounds_csv(&a.output_dir.join(ROUNDS_CSV)).unwrap();
    let jsonl = read_rounds_jsonl(&a.output_dir.join(ROUNDS_JSONL)).unwrap();
    for (c, j) in csv.iter().zip(&jsonl) {
        // csv rows carry ten decimals
        assert_eq!((c.round, c.clicks, c.discrepancy), (j.round, j.clicks, j.discrepancy));
        assert!((c.cum_ee - j.cum_ee).abs() < 1e-9 && (c.ndcg - j.ndcg).abs() < 1e-9);
    }
    assert_eq!(csv.len(), 3);
    let clicks = read_clicks(&a.output_dir.join(CLICKS_FILE)).unwrap();
    for r in &csv {
        assert_eq!(clicks.iter().filter(|c| c.round == r.round).count(), r.clicks);
    }
    assert!(clicks.iter().all(|c| c.raw_item.parse::<u32>().unwrap() >= 100));
    let targets = read_targets(&a.output_dir.join(TARGETS_FILE)).unwrap();
    assert_eq!(targets.len(), 3);
    for t in &targets {
        assert_eq!(t.discrepancy.total as f64, csv[t.round as usize - 1].discrepancy);
        let deg: i64 = t.targets.iter().map(|x| x.2).sum();
        assert_eq!(deg, 25 * 3);
    }
    assert!(!a.output_dir.join(ERROR_FILE).exists());
    assert!(!a.output_dir.join(MODEL_FILE).exists());
}

#[test]
fn refuses_to_overwrite_without_force() {
    let tmp = tempfile::tempdir().unwrap();
    let c = config(tmp.path(), "run", Pipeline::Mf, 1);
    run_to_dir::<f64>(&c, false, |_| {}).unwrap();
    let before = fs::read(c.output_dir.join(ROUNDS_CSV)).unwrap();
    assert!(matches!(run_to_dir::<f64>(&c, false, |_| {}), Err(SimError::RunDirExists(_))));
    assert_eq!(before, fs::read(c.output_dir.join(ROUNDS_CSV)).unwrap());
    run_to_dir::<f64>(&c, true, |_| {}).unwrap();
    assert_eq!(before, fs::read(c.output_dir.join(ROUNDS_CSV)).unwrap());
}

fn set_rounds(dir: &Path, rounds: u32) {
    let mut cfg = RunDir::read_config(dir).unwrap();
    cfg.rounds = rounds;
    fs::write(dir.join("config.json"), serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
}

#[test]
fn resumed_run_matches_uninterrupted_run() {
    for warm in [false, true] {
        let tmp = tempfile::tempdir().unwrap();
        let full = SimConfig { mf_warm_start: warm, ..config(tmp.path(), "full", Pipeline::MfDmDynamic, 4) };
        run_to_dir::<f64>(&full, false, |_| {}).unwrap();

        let part = SimConfig { output_dir: tmp.path().join("part"), rounds: 2, ..full.clone() };
        run_to_dir::<f64>(&part, false, |_| {}).unwrap();
        set_rounds(&part.output_dir, 4);
        // rows written after the last checkpoint must be discarded on resume
        let mut csv = fs::OpenOptions::new().append(true).open(part.output_dir.join(ROUNDS_CSV)).unwrap();
        writeln!(csv, "3,0.5,0.5,0.5,0.5,0.5,1.0,7").unwrap();
        let mut clicks = fs::OpenOptions::new().append(true).open(part.output_dir.join(CLICKS_FILE)).unwrap();
        writeln!(clicks, r#"{{"round":3,"user":0,"item":0,"rank":1,"raw_user":"1","raw_item":"100"}}"#).unwrap();

        let resumed = resume_dir::<f64>(&part.output_dir, |_| {}).unwrap();
        assert_eq!(resumed.iter().map(|r| r.round).collect::<Vec<_>>(), vec![3, 4]);
        for f in [ROUNDS_CSV, CLICKS_FILE, TARGETS_FILE, LEDGER_FILE] {
            assert_eq!(
                fs::read(full.output_dir.join(f)).unwrap(),
                fs::read(part.output_dir.join(f)).unwrap(),
                "{f} (warm start {warm})"
            );
        }
        assert!(matches!(resume_dir::<f64>(&part.output_dir, |_| {}), Ok(v) if v.is_empty()));
    }
}

#[test]
fn failed_round_leaves_error_file() {
    let tmp = tempfile::tempdir().unwrap();
    let c = SimConfig { mf_learning_rate: 1e12, mf_init_std: 10.0, ..config(tmp.path(), "bad", Pipeline::Mf, 2) };
    let err = run_to_dir::<f32>(&c, false, |_| {}).unwrap_err();
    assert_eq!(err.round(), Some(1));
    let text = fs::read_to_string(c.output_dir.join(ERROR_FILE)).unwrap();
    assert!(text.starts_with("round 1"), "{text}");
}
