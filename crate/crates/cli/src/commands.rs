use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use symrd::eval::{l1_symmetry_gap, optimality_gap, validate_cost, MetricRecord};
use symrd::instances::{generate_with, Dataset, GenOptions};
use symrd::rng::{derive_seed, stream_rng, Stream};
use symrd::training::{parse_pairs, train_with, TrainConfig, TrainOutcome};
use symrd::verify::{run_all, TransformUnderTest};
use symrd::{PolicyParams, Task};

use crate::exit;
use crate::output::{
    manifest_path_for, mean_std, read_history, sha256_file, write_history, write_summary,
    CliError, CliResult, DatasetHash, DirLock, HistoryRow, RunManifest, SummaryRow,
};

fn display(p: &Path) -> String {
    p.display().to_string()
}

fn dataset_hash(path: &Path) -> CliResult<DatasetHash> {
    Ok(DatasetHash {
        path: display(path),
        sha256: sha256_file(path)?,
    })
}

#[allow(clippy::too_many_arguments)]
pub fn gen_data(
    task: Task,
    n: usize,
    count: usize,
    seed: u64,
    out: &Path,
    ffsp_stages: Option<usize>,
    ffsp_machines: Option<usize>,
    cvrp_capacity: Option<u32>,
) -> CliResult {
    let defaults = GenOptions::default();
    let opts = GenOptions {
        ffsp_stages: ffsp_stages.unwrap_or(defaults.ffsp_stages),
        ffsp_machines: ffsp_machines.unwrap_or(defaults.ffsp_machines),
        cvrp_capacity,
    };
    let data = generate_with(task, n, count, seed, opts)?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    data.save(out).map_err(|e| CliError::io(out, e))?;
    let hash = dataset_hash(out)?;
    let mut manifest = RunManifest::new("gen-data");
    manifest.config = Some(format!(
        "task = {task}\nn = {n}\ncount = {count}\nseed = {seed}\nffsp_stages = {}\nffsp_machines = {}\ncvrp_capacity = {}\n",
        opts.ffsp_stages,
        opts.ffsp_machines,
        cvrp_capacity.map(|c| c.to_string()).unwrap_or_default()
    ));
    manifest.seed("data", seed);
    manifest.datasets.push(hash.clone());
    manifest.outputs.push(display(out));
    manifest.write(&manifest_path_for(out))?;
    println!("{}  {}", hash.sha256, display(out));
    Ok(())
}

/// `--key value` / `--key=value` pairs; dashes in keys become underscores.
fn parse_overrides(args: &[String]) -> CliResult<Vec<(String, String)>> {
    let mut out = Vec::new();
    let mut it = args.iter();
    while let Some(a) = it.next() {
        let key = a
            .strip_prefix("--")
            .ok_or_else(|| CliError::new(exit::USAGE, format!("expected --key, found `{a}`")))?;
        let (key, value) = match key.split_once('=') {
            Some((k, v)) => (k.to_string(), v.to_string()),
            None => {
                let v = it
                    .next()
                    .ok_or_else(|| CliError::new(exit::USAGE, format!("--{key} needs a value")))?;
                (key.to_string(), v.clone())
            }
        };
        out.push((key.replace('-', "_"), value));
    }
    Ok(out)
}

fn load_config(path: Option<&Path>, overrides: &[String]) -> CliResult<TrainConfig> {
    let mut pairs = match path {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| CliError::io(p, e))?;
            parse_pairs(&text)?
        }
        None => Vec::new(),
    };
    pairs.extend(parse_overrides(overrides)?);
    let mut cfg = TrainConfig::from_pairs(&pairs)?;
    // relative dataset paths are taken from the config file's directory
    if let (Some(cfg_path), Some(val)) = (path, cfg.val_path.as_ref()) {
        let val = Path::new(val);
        if val.is_relative() {
            if let Some(dir) = cfg_path.parent() {
                cfg.val_path = Some(display(&dir.join(val)));
            }
        }
    }
    Ok(cfg)
}

/// Loads the configured validation set, or generates it and saves a copy in `out_dir`.
fn validation_set(cfg: &TrainConfig, out_dir: &Path) -> CliResult<(Dataset, PathBuf)> {
    match &cfg.val_path {
        Some(p) => {
            let path = PathBuf::from(p);
            let data = Dataset::load(&path).map_err(|e| CliError::io(&path, e))?;
            if data.task != cfg.task {
                return Err(CliError::config(format!(
                    "validation set {} is {}, config trains {}",
                    path.display(),
                    data.task,
                    cfg.task
                )));
            }
            Ok((data, path))
        }
        None => {
            let data = generate_with(
                cfg.task,
                cfg.n,
                cfg.val_count,
                cfg.val_seed,
                cfg.gen_options(),
            )?;
            let path = out_dir.join("val.jsonl");
            data.save(&path).map_err(|e| CliError::io(&path, e))?;
            Ok((data, path))
        }
    }
}

fn run_training(cfg: &TrainConfig, out_dir: &Path, checkpoints: bool) -> CliResult<TrainOutcome> {
    fs::create_dir_all(out_dir).map_err(|e| CliError::io(out_dir, e))?;
    let mut manifest = RunManifest::new("train");
    let (val, val_path) = validation_set(cfg, out_dir)?;
    let config_path = out_dir.join("config.txt");
    fs::write(&config_path, cfg.to_text()).map_err(|e| CliError::io(&config_path, e))?;
    let ckpt_dir = out_dir.join("checkpoints");
    if checkpoints {
        fs::create_dir_all(&ckpt_dir).map_err(|e| CliError::io(&ckpt_dir, e))?;
    }
    let mut written = Vec::new();
    let outcome = train_with(cfg, &val, |rec, params| {
        if checkpoints {
            let p = ckpt_dir.join(format!("k{:09}.json", rec.k));
            params.save(&p)?;
            written.push(display(&p));
        }
        Ok(())
    })?;
    let rows: Vec<HistoryRow> = outcome
        .history
        .records
        .iter()
        .map(|r| HistoryRow::new(cfg, r))
        .collect();
    let history_path = out_dir.join("history.csv");
    write_history(&history_path, &rows)?;
    let final_path = out_dir.join("final.json");
    outcome
        .params
        .save(&final_path)
        .map_err(|e| CliError::io(&final_path, e))?;

    manifest.config = Some(cfg.to_text());
    manifest.seed("run", cfg.seed);
    for s in [Stream::Data, Stream::Rollout, Stream::Transform, Stream::Init, Stream::Eval] {
        manifest.seed(s.name(), derive_seed(cfg.seed, s, &[]));
    }
    manifest.seed("validation", cfg.val_seed);
    manifest.datasets.push(dataset_hash(&val_path)?);
    manifest.outputs.push(display(&config_path));
    manifest.outputs.push(display(&history_path));
    manifest.outputs.push(display(&final_path));
    manifest.outputs.extend(written);
    manifest.write(&out_dir.join("manifest.json"))?;
    Ok(outcome)
}

pub fn train(
    config: Option<&Path>,
    out_dir: &Path,
    checkpoints: bool,
    overrides: &[String],
) -> CliResult {
    let cfg = load_config(config, overrides)?;
    let _lock = DirLock::acquire(out_dir)?;
    let outcome = run_training(&cfg, out_dir, checkpoints)?;
    println!(
        "{} {} N={} seed={}: K={} rl_steps={} ssd_steps={} final val_cost={:.6}",
        cfg.method,
        cfg.task,
        cfg.n,
        cfg.seed,
        outcome.reward_calls,
        outcome.rl_steps,
        outcome.ssd_steps,
        outcome.history.final_cost().unwrap_or(f64::NAN)
    );
    Ok(())
}

pub fn eval(
    checkpoint: &Path,
    data: &Path,
    l1_samples: usize,
    seed: u64,
    k: u64,
    optimality: bool,
    out: Option<&Path>,
) -> CliResult {
    let params = PolicyParams::load(checkpoint).map_err(|e| CliError::io(checkpoint, e))?;
    let dataset = Dataset::load(data).map_err(|e| CliError::io(data, e))?;
    if dataset.task != params.task() {
        return Err(CliError::config(format!(
            "checkpoint is for {}, dataset is {}",
            params.task(),
            dataset.task
        )));
    }
    let record = |name: &str, value: f64| MetricRecord {
        name: name.to_string(),
        k,
        value,
        instances: dataset.len(),
        seed,
    };
    let mut metrics = vec![record("val_cost", validate_cost(&params, &dataset)?)];
    if l1_samples > 0 {
        let mut rng = stream_rng(seed, Stream::Eval, &[]);
        let gap = l1_symmetry_gap(&params, &dataset.instances, l1_samples, &mut rng)?;
        metrics.push(record("l1_gap", gap));
    }
    if optimality {
        metrics.push(record("optimality_gap", optimality_gap(&params, &dataset.instances)?));
    }
    for m in &metrics {
        println!("{},{}", m.name, m.value);
    }
    if let Some(path) = out {
        let mut w = csv::Writer::from_path(path).map_err(|e| CliError::io(path, e))?;
        for m in &metrics {
            w.serialize(m).map_err(|e| CliError::io(path, e))?;
        }
        w.flush().map_err(|e| CliError::io(path, e))?;
        let mut manifest = RunManifest::new("eval");
        manifest.seed("eval", seed);
        manifest.datasets.push(dataset_hash(data)?);
        manifest.datasets.push(dataset_hash(checkpoint)?);
        manifest.outputs.push(display(path));
        manifest.write(&manifest_path_for(path))?;
    }
    Ok(())
}

pub fn verify(task: Task, n: usize, trials: usize, seed: u64, corrupt: bool) -> CliResult {
    if trials == 0 {
        return Err(CliError::new(exit::USAGE, "--trials must be positive"));
    }
    let transform = if corrupt {
        TransformUnderTest::Corrupted
    } else {
        TransformUnderTest::Uniform
    };
    let reports = run_all(task, n, trials, seed, transform)?;
    let mut failed = 0;
    for r in &reports {
        println!("{r}");
        if !r.passed() {
            failed += 1;
        }
    }
    if failed > 0 {
        return Err(CliError::new(
            exit::VERIFY,
            format!("{failed} of {} suites failed", reports.len()),
        ));
    }
    println!("all {} suites passed", reports.len());
    Ok(())
}

pub fn compare(config_dir: &Path, seeds: &[u64], out: &Path) -> CliResult {
    let mut configs: Vec<PathBuf> = fs::read_dir(config_dir)
        .map_err(|e| CliError::io(config_dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "cfg"))
        .collect();
    configs.sort();
    if configs.len() < 2 {
        return Err(CliError::config(format!(
            "{} holds {} .cfg files; compare needs at least 2",
            config_dir.display(),
            configs.len()
        )));
    }
    if seeds.is_empty() {
        return Err(CliError::new(exit::USAGE, "--seeds must list at least one seed"));
    }
    let _lock = DirLock::acquire(out)?;
    let mut manifest = RunManifest::new("compare");
    // config stem -> (config, one history per seed)
    let mut runs: BTreeMap<String, (TrainConfig, Vec<Vec<HistoryRow>>)> = BTreeMap::new();
    for path in &configs {
        let stem = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        for &seed in seeds {
            let cfg = load_config(Some(path), &["--seed".into(), seed.to_string()])?;
            let dir = out.join(&stem).join(format!("seed{seed}"));
            run_training(&cfg, &dir, false)?;
            let rows = read_history(&dir.join("history.csv"))?;
            manifest.seed(&format!("{stem}/seed"), seed);
            let entry = runs.entry(stem.clone()).or_insert_with(|| (cfg.clone(), Vec::new()));
            entry.1.push(rows);
        }
        manifest.outputs.push(display(&out.join(&stem)));
    }
    let grid: Vec<u64> = runs
        .values()
        .next()
        .map(|(_, h)| h[0].iter().map(|r| r.k).collect())
        .unwrap_or_default();
    for (stem, (_, histories)) in &runs {
        for h in histories {
            let ks: Vec<u64> = h.iter().map(|r| r.k).collect();
            if ks != grid {
                return Err(CliError::config(format!(
                    "K grid of `{stem}` differs from the first config; budgets must match"
                )));
            }
        }
    }
    let mut summary = Vec::new();
    for (stem, (cfg, histories)) in &runs {
        for (i, &k) in grid.iter().enumerate() {
            let costs: Vec<f64> = histories.iter().map(|h| h[i].val_cost).collect();
            let (mean, std) = mean_std(&costs);
            summary.push(SummaryRow {
                config: stem.clone(),
                method: cfg.method.to_string(),
                task: cfg.task.to_string(),
                n: cfg.n,
                k,
                seeds: costs.len(),
                mean_val_cost: mean,
                std_val_cost: std,
            });
        }
    }
    let summary_path = out.join("summary.csv");
    write_summary(&summary_path, &summary)?;
    manifest.config = Some(
        configs
            .iter()
            .map(|p| fs::read_to_string(p).map(|t| format!("# {}\n{t}", p.display())))
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| CliError::io(config_dir, e))?
            .join("\n"),
    );
    manifest.outputs.push(display(&summary_path));
    manifest.write(&out.join("manifest.json"))?;
    for stem in runs.keys() {
        if let Some(last) = summary.iter().rev().find(|r| &r.config == stem) {
            println!(
                "{stem}: K={} mean val_cost {:.6} ± {}",
                last.k,
                last.mean_val_cost,
                last.std_val_cost
                    .map(|s| format!("{s:.6}"))
                    .unwrap_or_else(|| "n/a".into())
            );
        }
    }
    Ok(())
}
