use std::path::Path;
use std::process::{Command, Output};

use forkmerge_core::forkmerge::Sequential;
use forkmerge_lab::config::ExperimentConfig;
use forkmerge_lab::records::{merge_history_path, read_merge_history, read_records, CONFIG_ECHO_FILE, RECORDS_FILE};
use forkmerge_lab::report::aggregate;
use forkmerge_lab::{run_experiment, ResultRecord};
use proptest::prelude::*;

const SMALL: &str = r#"
method = "stl"
seeds = [1, 2, 3]
n_tasks = 2
input_dim = 2
n_classes = 2
train_samples = 120
val_samples = 60
test_samples = 60
relatedness = [0.5]
hidden = [8]
steps = 60
interval = 20
lambda_grid = [0.0, 0.5, 1.0]
"#;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_forkmerge"))
}

fn write_config(dir: &Path, name: &str, text: &str) -> std::path::PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path
}

fn with_method(method: &str) -> String {
    SMALL.replace(r#"method = "stl""#, &format!("method = \"{method}\""))
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn assert_same(a: &[ResultRecord], b: &[ResultRecord]) {
    assert_eq!(a.len(), b.len());
    for (x, y) in a.iter().zip(b) {
        assert!(x.same_result(y), "{x:?} vs {y:?}");
    }
}

#[test]
fn missing_config_is_a_usage_error_naming_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.toml");
    let out = bin().args(["run", "--config"]).arg(&missing).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("nope.toml"), "{}", stderr(&out));
}

#[test]
fn unknown_key_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.toml", &format!("{SMALL}\nlearning_rate = 0.1\n"));
    let out = bin().args(["run", "--config"]).arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("learning_rate"), "{}", stderr(&out));
}

#[test]
fn report_on_an_empty_directory_fails() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin().arg("report").arg(dir.path()).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn help_exits_zero() {
    let out = bin().arg("--help").output().unwrap();
    assert_eq!(out.status.code(), Some(0));
}

#[test]
fn three_seeds_give_three_records() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.toml", SMALL);
    let run_dir = dir.path().join("out");
    let out = bin()
        .args(["run", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&run_dir)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", stderr(&out));
    let records = read_records(&run_dir.join(RECORDS_FILE)).unwrap();
    assert_eq!(records.len(), 3);
    let seeds: Vec<u64> = records.iter().map(|r| r.seed).collect();
    assert_eq!(seeds, [1, 2, 3]);
    assert!(records.iter().all(|r| r.method == "stl" && r.value.is_finite()));

    let rep = bin().arg("report").arg(&run_dir).output().unwrap();
    assert!(rep.status.success(), "{}", stderr(&rep));
    assert!(run_dir.join("summary.csv").is_file());
    assert!(run_dir.join("summary.json").is_file());
}

#[test]
fn generated_csvs_can_be_trained_on() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.toml", SMALL);
    let data = dir.path().join("data");
    let out = bin()
        .args(["gen-data", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&data)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(data.join("task0_train.csv").is_file());
    assert!(data.join("task1_test.csv").is_file());

    let from_csv = format!("{}\ndata_dir = {:?}\n", with_method("ew"), data.to_str().unwrap());
    let cfg = write_config(dir.path(), "csv.toml", &from_csv);
    let run_dir = dir.path().join("out");
    let out = bin()
        .args(["run", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&run_dir)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", stderr(&out));
    let records = read_records(&run_dir.join(RECORDS_FILE)).unwrap();
    assert_eq!(records.iter().filter(|r| r.method == "ew").count(), 3);
    assert!(records.iter().all(|r| r.value.is_finite()));
}

#[test]
fn env_var_sets_the_output_directory() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.toml", SMALL);
    let target = dir.path().join("from_env");
    let out = bin()
        .args(["run", "--config"])
        .arg(&cfg)
        .env("FORKMERGE_OUT_DIR", &target)
        .current_dir(dir.path())
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(target.join(RECORDS_FILE).is_file());
    assert!(!dir.path().join("runs").exists());
}

#[test]
fn rerun_and_config_echo_reproduce_records() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig::parse(&with_method("forkmerge")).unwrap();
    let first = run_experiment(&cfg, &Sequential, &dir.path().join("a")).unwrap();
    let second = run_experiment(&cfg, &Sequential, &dir.path().join("b")).unwrap();
    assert_same(&first.records, &second.records);
    assert_eq!(first.trajectories, second.trajectories);

    let echo = ExperimentConfig::load(&dir.path().join("a").join(CONFIG_ECHO_FILE)).unwrap();
    assert_eq!(echo, cfg);
    let third = run_experiment(&echo, &Sequential, &dir.path().join("c")).unwrap();
    assert_same(&first.records, &third.records);

    let on_disk = read_records(&dir.path().join("a").join(RECORDS_FILE)).unwrap();
    assert_same(&first.records, &on_disk);
}

#[test]
fn forkmerge_run_logs_one_entry_per_merge_round() {
    let dir = tempfile::tempdir().unwrap();
    let text = with_method("forkmerge")
        .replace("seeds = [1, 2, 3]", "seeds = [4]")
        .replace("steps = 60", "steps = 2000")
        .replace("interval = 20", "interval = 500")
        .replace("train_samples = 120", "train_samples = 60");
    let cfg = ExperimentConfig::parse(&text).unwrap();
    let out = run_experiment(&cfg, &Sequential, dir.path()).unwrap();
    assert_eq!(out.trajectories.len(), 1);
    assert_eq!(out.trajectories[0].rounds.len(), 4);
    assert!(out.trajectories[0].final_lambda.is_some());

    let rows = read_merge_history(&merge_history_path(dir.path(), "forkmerge", 4)).unwrap();
    for round in 0..4 {
        let in_round: Vec<_> = rows.iter().filter(|r| r.round == round).collect();
        assert!(!in_round.is_empty());
        assert_eq!(in_round.iter().filter(|r| r.chosen == 1).count(), 1, "round {round}");
    }
    let fm = out.records.iter().find(|r| r.method == "forkmerge").unwrap();
    assert!(fm.tg.is_some());
    assert_eq!(
        fm.psearch_evals,
        out.trajectories[0].rounds.iter().map(|r| r.evaluations).sum::<usize>()
    );
}

fn synthetic(method: &str, seed: u64, value: f64) -> ResultRecord {
    ResultRecord {
        method: method.into(),
        seed,
        task_id: 0,
        split: "test".into(),
        metric: "accuracy".into(),
        value,
        tg: Some(value - 0.5),
        psearch_evals: 0,
        wall_s: 0.0,
    }
}

proptest! {
    #[test]
    fn aggregation_ignores_record_order(
        values in prop::collection::vec((0.0f64..1.0, 0.0f64..1.0), 1..8),
        keys in prop::collection::vec(any::<u64>(), 16),
    ) {
        let mut records = Vec::new();
        for (seed, (s, e)) in values.iter().enumerate() {
            records.push(synthetic("stl", seed as u64, *s));
            records.push(synthetic("ew", seed as u64, *e));
        }
        let base = aggregate(&records, true).unwrap();
        let mut shuffled: Vec<(u64, ResultRecord)> =
            records.into_iter().enumerate().map(|(i, r)| (keys[i % keys.len()].rotate_left(i as u32), r)).collect();
        shuffled.sort_by_key(|(k, _)| *k);
        let shuffled: Vec<ResultRecord> = shuffled.into_iter().map(|(_, r)| r).collect();
        prop_assert_eq!(aggregate(&shuffled, true).unwrap(), base);
    }
}
