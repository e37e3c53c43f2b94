//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any
//! criterion fails.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use forkmerge_core::forkmerge::{make_omega_branches, search, train_branch, TrainContext};
use forkmerge_core::nn::{Activation, HeadSpec, LossKind, ModelSpec};
use forkmerge_core::optim::{OptConfig, ScheduleKind, TaskWeighting};
use forkmerge_core::tasks::{generate_family, DataSplit, Targets, TaskFamily, TaskFamilyConfig};
use forkmerge_core::{linear_combination, ParamVector, RngStream, TaskId};
use forkmerge_lab::config::{ExperimentConfig, Method, SearchName};
use forkmerge_lab::records::{merge_history_path, read_merge_history, read_records, ResultRecord, RECORDS_FILE};
use forkmerge_lab::report::aggregate;
use forkmerge_lab::sweeps::{CsdCsvRow, TgGcsCsvRow};

type Outcome = Result<String, String>;

struct Suite {
    failed: usize,
}

impl Suite {
    fn check(&mut self, id: u32, name: &str, budget: Duration, f: impl FnOnce() -> Outcome) {
        let started = Instant::now();
        let outcome = f();
        let took = started.elapsed();
        let (mut pass, mut detail) = match outcome {
            Ok(d) => (true, d),
            Err(d) => (false, d),
        };
        if took > budget {
            pass = false;
            detail = format!("{detail}; over the {}s budget", budget.as_secs());
        }
        if !pass {
            self.failed += 1;
        }
        let verdict = if pass { "PASS" } else { "FAIL" };
        println!(
            "criterion {id:>2} {verdict}  {name}: {detail} [{:.1}s]",
            took.as_secs_f64()
        );
    }
}

fn ensure(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn max_relative_error(a: &ParamVector, b: &ParamVector) -> f64 {
    a.as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(1e-300))
        .fold(0.0, f64::max)
}

fn small_family(n_aux: usize, seed: u64) -> TaskFamily {
    generate_family(&TaskFamilyConfig {
        n_tasks: n_aux + 1,
        input_dim: 3,
        n_classes: 3,
        train_samples: 64,
        val_samples: 16,
        test_samples: 16,
        relatedness: vec![0.5; n_aux],
        seed,
        ..Default::default()
    })
    .unwrap()
}

fn plain_sgd(lr: f64) -> OptConfig {
    OptConfig {
        lr,
        momentum: 0.0,
        schedule: ScheduleKind::Constant,
        batch_size: 8,
        ..Default::default()
    }
}

fn one_step(ctx: &TrainContext<'_>, start: &ParamVector, w: &TaskWeighting) -> ParamVector {
    let mut opt = ctx.opt.state(start.len(), 1).unwrap();
    train_branch(start, w, 1, ctx, &mut opt).unwrap()
}

fn merge_identity() -> Outcome {
    let mut rng = RngStream::new(101, 0);
    let mut worst: f64 = 0.0;
    for trial in 0..50 {
        let fam = small_family(1, trial);
        let hidden: Vec<usize> = (0..rng.below(3)).map(|_| 1 + rng.below(6)).collect();
        let act = if rng.bernoulli(0.5) {
            Activation::Relu
        } else {
            Activation::Tanh
        };
        let spec = ModelSpec::classifier(3, hidden, act, 2, 3).unwrap();
        let lambda = rng.uniform();
        let opt = plain_sgd(rng.uniform_in(0.01, 0.5));
        let ctx = TrainContext {
            family: &fam,
            spec: &spec,
            opt: &opt,
            seed: trial,
        };
        let start = ctx.init_params();
        let theta0 = one_step(&ctx, &start, &TaskWeighting::target_only());
        let theta1 = one_step(&ctx, &start, &TaskWeighting::uniform_aux(1, 1.0).unwrap());
        let merged = search::interpolate(&theta0, &theta1, lambda).unwrap();
        let direct = one_step(&ctx, &start, &TaskWeighting::uniform_aux(1, lambda).unwrap());
        worst = worst.max(max_relative_error(&merged, &direct));
    }
    ensure(
        worst <= 1e-9,
        format!("50 triples, worst relative error {worst:.2e} (limit 1e-9)"),
    )
}

fn multi_branch_identity() -> Outcome {
    let mut rng = RngStream::new(202, 0);
    let mut worst: f64 = 0.0;
    for n_aux in 2..=4usize {
        for trial in 0..20u64 {
            let seed = 1000 * n_aux as u64 + trial;
            let fam = small_family(n_aux, seed);
            let spec = ModelSpec::classifier(3, vec![5], Activation::Tanh, n_aux + 1, 3).unwrap();
            let opt = plain_sgd(0.1);
            let ctx = TrainContext {
                family: &fam,
                spec: &spec,
                opt: &opt,
                seed,
            };
            let start = ctx.init_params();
            // Uniform point of the simplex {λ ≥ 0, Σλ ≤ 1} via sorted uniforms.
            let mut cuts: Vec<f64> = (0..n_aux).map(|_| rng.uniform()).collect();
            cuts.sort_by(f64::total_cmp);
            let lambdas: Vec<f64> = (0..n_aux)
                .map(|k| cuts[k] - if k == 0 { 0.0 } else { cuts[k - 1] })
                .collect();
            let mut coeffs = vec![1.0 - lambdas.iter().sum::<f64>()];
            coeffs.extend(&lambdas);
            let branches: Vec<ParamVector> = make_omega_branches(n_aux)
                .unwrap()
                .iter()
                .map(|b| one_step(&ctx, &start, &b.weighting))
                .collect();
            let merged = linear_combination(&coeffs, &branches.iter().collect::<Vec<_>>()).unwrap();
            let pairs: Vec<(TaskId, f64)> = lambdas
                .iter()
                .enumerate()
                .map(|(k, &l)| (TaskId(k as u32 + 1), l))
                .collect();
            let direct = one_step(&ctx, &start, &TaskWeighting::from_pairs(&pairs).unwrap());
            worst = worst.max(max_relative_error(&merged, &direct));
        }
    }
    ensure(
        worst <= 1e-9,
        format!("K in 2..=4, 60 weightings, worst relative error {worst:.2e} (limit 1e-9)"),
    )
}

fn random_batch(spec: &ModelSpec, task: TaskId, rows: usize, rng: &mut RngStream) -> DataSplit {
    let dim = spec.input_dim();
    let inputs: Vec<f64> = (0..rows * dim).map(|_| rng.normal()).collect();
    let head = spec.head(task).unwrap();
    let targets = match head.loss {
        LossKind::SoftmaxCrossEntropy => Targets::Labels {
            labels: (0..rows).map(|_| rng.below(head.output_dim)).collect(),
            n_classes: head.output_dim,
        },
        LossKind::MeanSquaredError => Targets::Values {
            values: (0..rows * head.output_dim).map(|_| rng.normal()).collect(),
            dim: head.output_dim,
        },
    };
    DataSplit::new(task, dim, inputs, targets).unwrap()
}

fn gradient_exactness() -> Outcome {
    let mut rng = RngStream::new(303, 0);
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    let mut coords = 0;
    for _ in 0..20 {
        let input_dim = 1 + rng.below(4);
        let hidden: Vec<usize> = (0..rng.below(4)).map(|_| 1 + rng.below(5)).collect();
        let heads = vec![
            HeadSpec {
                task_id: TaskId(0),
                output_dim: 2 + rng.below(3),
                loss: LossKind::SoftmaxCrossEntropy,
            },
            HeadSpec {
                task_id: TaskId(1),
                output_dim: 1 + rng.below(3),
                loss: LossKind::MeanSquaredError,
            },
        ];
        let spec = ModelSpec::new(input_dim, hidden, Activation::Tanh, heads).unwrap();
        let params: Vec<f64> = (0..spec.param_count()).map(|_| 0.7 * rng.normal()).collect();
        for task in [TaskId(0), TaskId(1)] {
            let batch = random_batch(&spec, task, 6, &mut rng);
            let p = ParamVector::from_vec(params.clone()).unwrap();
            let (_, g) = spec.loss_and_gradient(&p, &batch).unwrap();
            for i in 0..params.len() {
                let mut plus = params.clone();
                let mut minus = params.clone();
                plus[i] += h;
                minus[i] -= h;
                let lp = spec
                    .loss_and_gradient(&ParamVector::from_vec(plus).unwrap(), &batch)
                    .unwrap()
                    .0;
                let lm = spec
                    .loss_and_gradient(&ParamVector::from_vec(minus).unwrap(), &batch)
                    .unwrap()
                    .0;
                let numeric = (lp - lm) / (2.0 * h);
                let analytic = g[i];
                // Gradients below 1e-6 are compared on an absolute 1e-10 scale.
                let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6);
                worst = worst.max(rel);
                coords += 1;
            }
        }
    }
    ensure(
        worst <= 1e-4,
        format!("20 nets, {coords} coordinates, worst relative error {worst:.2e} (limit 1e-4)"),
    )
}

fn record(method: &str, task_id: u32, value: f64) -> ResultRecord {
    ResultRecord {
        method: method.into(),
        seed: 0,
        task_id,
        split: "test".into(),
        metric: "accuracy".into(),
        value,
        tg: None,
        psearch_evals: 0,
        wall_s: 0.0,
    }
}

fn delta_m_recomputation() -> Outcome {
    let stl = [77.6, 41.4, 71.8, 73.0, 84.6, 70.2];
    let ew = [78.0, 38.1, 67.2, 50.8, 77.1, 67.0];
    let mut records = Vec::new();
    for (k, (s, e)) in stl.iter().zip(&ew).enumerate() {
        records.push(record("stl", k as u32, *s));
        records.push(record("ew", k as u32, *e));
    }
    let summary = aggregate(&records, true).map_err(|e| e.to_string())?;
    let get = |m: &str| summary.iter().find(|s| s.method == m).and_then(|s| s.delta_m).unwrap();
    let (ew_dm, stl_dm) = (get("ew"), get("stl"));
    ensure(
        (ew_dm + 9.62).abs() <= 0.01 && stl_dm == 0.0,
        format!("EW delta_m {ew_dm:.4}% (want -9.62 +- 0.01), STL delta_m {stl_dm}"),
    )
}

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_forkmerge")
}

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs")
}

fn base_config(name: &str) -> ExperimentConfig {
    ExperimentConfig::load(&configs_dir().join(name)).unwrap()
}

fn write_config(dir: &Path, name: &str, cfg: &ExperimentConfig) -> PathBuf {
    let path = dir.join(format!("{name}.toml"));
    std::fs::write(&path, cfg.to_toml()).unwrap();
    path
}

fn cli(args: &[&str]) -> Result<(), String> {
    let out = Command::new(bin()).args(args).output().map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("{args:?} failed: {}", String::from_utf8_lossy(&out.stderr)))
    }
}

/// Runs `cfg` with `method` through the CLI and returns the output dir.
fn run_method(work: &Path, cfg: &ExperimentConfig, method: Method, threads: usize) -> Result<PathBuf, String> {
    let mut cfg = cfg.clone();
    cfg.method = method;
    let tag = format!(
        "{}_{}_t{threads}",
        cfg.output_dir.file_name().unwrap().to_string_lossy(),
        method.name()
    );
    let config = write_config(work, &tag, &cfg);
    let out = work.join(&tag);
    cli(&[
        "--threads",
        &threads.to_string(),
        "run",
        "--config",
        config.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ])?;
    Ok(out)
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

fn method_tgs(dir: &Path, method: &str) -> Vec<f64> {
    read_records(&dir.join(RECORDS_FILE))
        .unwrap()
        .into_iter()
        .filter(|r| r.method == method)
        .map(|r| r.tg.unwrap_or(f64::NAN))
        .collect()
}

struct RegimeRuns {
    ew: PathBuf,
    forkmerge: PathBuf,
    seeds: Vec<u64>,
}

fn regime(work: &Path, config: &str) -> Result<RegimeRuns, String> {
    let cfg = base_config(config);
    Ok(RegimeRuns {
        ew: run_method(work, &cfg, Method::Ew, 8)?,
        forkmerge: run_method(work, &cfg, Method::Forkmerge, 8)?,
        seeds: cfg.seeds.clone(),
    })
}

fn negative_transfer_mitigation(work: &Path, runs: &mut Vec<RegimeRuns>) -> Outcome {
    let r = regime(work, "strong_negative.toml")?;
    let ew = median(method_tgs(&r.ew, "ew"));
    let fm = median(method_tgs(&r.forkmerge, "forkmerge"));
    runs.push(r);
    ensure(
        ew <= -2.0 && fm >= -0.5,
        format!("median TG over 5 seeds: EW {ew:+.2} (want <= -2.0), ForkMerge {fm:+.2} (want >= -0.5)"),
    )
}

fn positive_transfer_preservation(work: &Path, runs: &mut Vec<RegimeRuns>) -> Outcome {
    let r = regime(work, "positive_transfer.toml")?;
    let ew = median(method_tgs(&r.ew, "ew"));
    let fm = median(method_tgs(&r.forkmerge, "forkmerge"));
    runs.push(r);
    ensure(
        fm >= 1.0 && fm >= ew - 0.5,
        format!("median TG over 5 seeds: ForkMerge {fm:+.2} (want >= +1.0 and >= EW - 0.5), EW {ew:+.2}"),
    )
}

fn per_merge_non_regression(runs: &[RegimeRuns]) -> Outcome {
    if runs.is_empty() {
        return Err("no fork/merge runs from criteria 5 and 6".into());
    }
    let mut merges = 0;
    for r in runs {
        for &seed in &r.seeds {
            let rows =
                read_merge_history(&merge_history_path(&r.forkmerge, "forkmerge", seed)).map_err(|e| e.to_string())?;
            let rounds = rows.iter().map(|row| row.round).max().unwrap_or(0) + 1;
            for round in 0..rounds {
                let in_round: Vec<_> = rows.iter().filter(|row| row.round == round).collect();
                let chosen: Vec<_> = in_round.iter().filter(|row| row.chosen == 1).collect();
                let target = in_round
                    .iter()
                    .find(|row| row.branch_id == "0")
                    .ok_or("no target-only row")?;
                if chosen.len() != 1 {
                    return Err(format!("seed {seed} round {round}: {} chosen rows", chosen.len()));
                }
                if chosen[0].val_perf < target.val_perf {
                    return Err(format!(
                        "seed {seed} round {round}: chosen {} < target-only {}",
                        chosen[0].val_perf, target.val_perf
                    ));
                }
                merges += 1;
            }
        }
    }
    Ok(format!("{merges} merges, chosen >= target-only at every one"))
}

fn search_cost(work: &Path) -> Outcome {
    let mut details = Vec::new();
    for b in [3usize, 5] {
        let mut cfg = base_config("multi_aux.toml");
        cfg.n_tasks = b;
        cfg.relatedness = (1..b).map(|k| k as f64 / (b - 1) as f64).collect();
        cfg.prune_keep = None;
        cfg.search = SearchName::Greedy;
        cfg.steps = 200;
        cfg.interval = 200;
        cfg.output_dir = PathBuf::from(format!("greedy_b{b}"));
        let dir = run_method(work, &cfg, Method::ForkmergeMulti, 8)?;
        let g = cfg.lambda_grid.len();
        let bound = (b - 1) * g + b;
        let evals: Vec<usize> = read_records(&dir.join(RECORDS_FILE))
            .map_err(|e| e.to_string())?
            .into_iter()
            .filter(|r| r.method == "forkmerge_multi")
            .map(|r| r.psearch_evals)
            .collect();
        let worst = evals.iter().copied().max().unwrap_or(usize::MAX);
        if evals.is_empty() || worst > bound {
            return Err(format!("B={b}: psearch_evals {evals:?} exceed {bound}"));
        }
        details.push(format!("B={b}: max {worst} <= {bound}"));
    }
    Ok(format!("one merge, G=6; {}", details.join(", ")))
}

fn determinism(work: &Path) -> Outcome {
    let mut compared = 0;
    for config in ["strong_negative.toml", "positive_transfer.toml"] {
        let cfg = base_config(config);
        for method in [Method::Ew, Method::Forkmerge] {
            let one = run_method(work, &cfg, method, 1)?;
            let eight = run_method(work, &cfg, method, 8)?;
            let a = read_records(&one.join(RECORDS_FILE)).map_err(|e| e.to_string())?;
            let b = read_records(&eight.join(RECORDS_FILE)).map_err(|e| e.to_string())?;
            if a.len() != b.len() || a.iter().zip(&b).any(|(x, y)| !x.same_result(y)) {
                return Err(format!(
                    "{config} {}: records differ between 1 and 8 threads",
                    method.name()
                ));
            }
            compared += a.len();
        }
    }
    Ok(format!("{compared} records identical with --threads 1 and --threads 8"))
}

fn read_csv<T: serde::de::DeserializeOwned>(path: &Path) -> Vec<T> {
    csv::Reader::from_path(path)
        .unwrap()
        .deserialize()
        .collect::<Result<_, _>>()
        .unwrap()
}

fn analysis_sweeps(work: &Path) -> Outcome {
    let mut weak = base_config("strong_negative.toml");
    weak.relatedness = vec![0.5];
    let weak_path = write_config(work, "weak_negative", &weak);
    let tg_out = work.join("tg_gcs.csv");
    cli(&[
        "sweep",
        "tg-gcs",
        "--config",
        weak_path.to_str().unwrap(),
        "--out",
        tg_out.to_str().unwrap(),
    ])?;
    let tg_rows: Vec<TgGcsCsvRow> = read_csv(&tg_out);
    let zero = tg_rows.iter().filter(|r| r.lambda == 0.0).count();
    if zero == 0
        || tg_rows
            .iter()
            .any(|r| r.lambda == 0.0 && r.tg.to_bits() != 0.0f64.to_bits())
    {
        return Err(format!("{zero} lambda=0 rows, not all with TG exactly 0"));
    }

    let strong = configs_dir().join("strong_negative.toml");
    let csd_out = work.join("csd_lambda.csv");
    cli(&[
        "sweep",
        "csd-lambda",
        "--config",
        strong.to_str().unwrap(),
        "--out",
        csd_out.to_str().unwrap(),
    ])?;
    let rows: Vec<CsdCsvRow> = read_csv(&csd_out);
    let max_lambda = rows.iter().map(|r| r.lambda).fold(f64::NEG_INFINITY, f64::max);
    let at = |l: f64| median(rows.iter().filter(|r| r.lambda == l).map(|r| r.csd).collect());
    let (c0, cmax) = (at(0.0), at(max_lambda));
    ensure(
        c0 < cmax,
        format!(
            "{} tg-gcs rows, the {zero} at lambda=0 all TG 0; median CSD {c0:.4} at lambda=0 vs {cmax:.4} at lambda={max_lambda}",
            tg_rows.len()
        ),
    )
}

fn main() {
    let work = tempfile::tempdir().unwrap();
    let work = work.path();
    let mut suite = Suite { failed: 0 };
    let secs = Duration::from_secs;
    let mut runs = Vec::new();

    suite.check(1, "merge equals the weighted one-step update", secs(5), merge_identity);
    suite.check(
        2,
        "multi-branch merge equals the multi-task update",
        secs(10),
        multi_branch_identity,
    );
    suite.check(
        3,
        "analytic gradients match central differences",
        secs(30),
        gradient_exactness,
    );
    suite.check(4, "delta_m recomputation", secs(5), delta_m_recomputation);
    suite.check(5, "negative transfer mitigation", secs(180), || {
        negative_transfer_mitigation(work, &mut runs)
    });
    suite.check(6, "positive transfer preservation", secs(180), || {
        positive_transfer_preservation(work, &mut runs)
    });
    suite.check(7, "per-merge non-regression", secs(30), || {
        per_merge_non_regression(&runs)
    });
    suite.check(8, "greedy search cost", secs(60), || search_cost(work));
    suite.check(9, "thread-count determinism", secs(360), || determinism(work));
    suite.check(10, "analysis sweeps", secs(300), || analysis_sweeps(work));

    if suite.failed > 0 {
        println!("{} of 10 criteria failed", suite.failed);
        std::process::exit(1);
    }
    println!("all 10 criteria passed");
}
