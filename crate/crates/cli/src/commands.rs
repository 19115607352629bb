use std::path::{Path, PathBuf};

use anyhow::{Context as _, Result};
use clap::Parser;
use serde::Serialize;
use stunt::checkpoint::Checkpoint;
use stunt::eval::{self, Aggregate, FewShotResult, Provenance, RegressionResult, ResultRecord};
use stunt::protonet::Identity;
use stunt::tabular::{self, DatasetSplits, ScalingMode, Schema};
use stunt::trainer::{self, GridSpec, LogRecord, TrainConfig, TrainObserver};
use stunt::{stats, synth};

use crate::manifest::RunManifest;
use crate::{
    user, Cli, Command, ConfigArgs, EvaluateArgs, PrepareArgs, RegressArgs, ReplayArgs, ReportArgs, SearchArgs,
    SynthArgs, TrainArgs,
};

pub const OUTPUT_ROOT_ENV: &str = "STUNT_OUTPUT_ROOT";

/// How a command is being run: directly, or replayed from a manifest.
pub struct Context {
    argv: Vec<String>,
    config_override: Option<TrainConfig>,
    grid_override: Option<GridSpec>,
    out_override: Option<PathBuf>,
    replayed_from: Option<PathBuf>,
}

impl Context {
    pub fn new(argv: Vec<String>) -> Self {
        Self {
            argv,
            config_override: None,
            grid_override: None,
            out_override: None,
            replayed_from: None,
        }
    }

    fn out_dir(&self, out: &Path) -> Result<PathBuf> {
        let dir = match &self.out_override {
            Some(o) => o.clone(),
            None => match std::env::var_os(OUTPUT_ROOT_ENV) {
                Some(root) if out.is_relative() => PathBuf::from(root).join(out),
                _ => out.to_path_buf(),
            },
        };
        std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(dir)
    }

    fn manifest(&self, command: &str, out: &Path) -> RunManifest {
        let mut m = RunManifest::new(command, self.argv.clone(), out.to_path_buf());
        m.replayed_from = self.replayed_from.clone();
        m
    }

    fn config(&self, args: &ConfigArgs) -> Result<TrainConfig> {
        match &self.config_override {
            Some(c) => Ok(c.clone()),
            None => resolve_config(args),
        }
    }
}

pub fn run(command: Command, ctx: Context) -> Result<()> {
    match command {
        Command::Synth(a) => synth_cmd(a, &ctx),
        Command::Prepare(a) => prepare(a, &ctx),
        Command::Train(a) => train(a, &ctx),
        Command::Search(a) => search(a, &ctx),
        Command::Evaluate(a) => evaluate(a, &ctx),
        Command::Regress(a) => regress(a, &ctx),
        Command::Report(a) => report(a, &ctx),
        Command::Replay(a) => replay(a),
    }
}

fn resolve_config(args: &ConfigArgs) -> Result<TrainConfig> {
    let mut config = match (&args.config, &args.dataset) {
        (Some(path), _) => TrainConfig::from_file(path)?,
        (None, Some(name)) => TrainConfig::for_dataset(name).unwrap_or_else(|| {
            eprintln!("warning: no preset for dataset '{name}', using defaults");
            TrainConfig::default()
        }),
        (None, None) => TrainConfig::default(),
    };
    if let Some(p) = &args.profile {
        config = config.with_profile(p.parse()?);
    }
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(steps) = args.steps {
        config.total_steps = steps;
    }
    config.validate()?;
    Ok(config)
}

fn write_text(m: &mut RunManifest, path: PathBuf, text: &str) -> Result<()> {
    std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
    m.output(path);
    Ok(())
}

fn write_json<T: Serialize>(m: &mut RunManifest, path: PathBuf, value: &T) -> Result<()> {
    write_text(m, path, &(serde_json::to_string_pretty(value)? + "\n"))
}

fn jsonl<T: Serialize>(items: &[T]) -> Result<String> {
    let mut text = String::new();
    for item in items {
        text.push_str(&serde_json::to_string(item)?);
        text.push('\n');
    }
    Ok(text)
}

fn synth_cmd(a: SynthArgs, ctx: &Context) -> Result<()> {
    let out = ctx.out_dir(&a.out)?;
    let mut m = ctx.manifest("synth", &out);
    m.seed("synth", a.seed);
    let ds = synth::generate(&a.name, a.seed)
        .ok_or_else(|| user(format!("unknown dataset '{}' (one of {})", a.name, synth::NAMES.join(", "))))?;
    let (csv, schema) = ds.write(&out)?;
    println!("wrote {} and {}", csv.display(), schema.display());
    m.output(csv);
    m.output(schema);
    if ds.test.is_some() {
        m.output(out.join(format!("{}_test.csv", ds.name)));
    }
    m.write()?;
    Ok(())
}

fn prepare(a: PrepareArgs, ctx: &Context) -> Result<()> {
    let out = ctx.out_dir(&a.out)?;
    let mut m = ctx.manifest("prepare", &out);
    m.seed("split", a.seed);
    m.input(&a.csv);
    m.input(&a.schema);
    let schema = Schema::from_file(&a.schema)?;
    if let Some(test) = &schema.predefined_test {
        m.input(test);
    }
    let mode: ScalingMode = match &a.scaling {
        Some(s) => s.parse()?,
        None => schema.scaling.unwrap_or_default(),
    };
    let splits = tabular::load_splits(&a.csv, &schema, a.seed)?;
    let (scaled, stats) = splits.scale(mode)?;
    scaled.save(&out)?;
    for f in tabular::SPLIT_FILES {
        m.output(out.join(f));
    }
    write_json(&mut m, out.join("scaler.json"), &stats)?;
    println!(
        "{} unlabeled, {} pseudo-val, {} test rows; d = {}",
        scaled.train_unlabeled.rows(),
        scaled.pseudo_val.rows(),
        scaled.test.rows(),
        scaled.dims()
    );
    m.write()?;
    Ok(())
}

fn load_splits(dir: &Path) -> Result<DatasetSplits> {
    DatasetSplits::load(dir).with_context(|| format!("loading splits from {}", dir.display()))
}

/// Pseudo-validation class count: the true class count, or `way` for
/// regression data.
fn val_classes(splits: &DatasetSplits, config: &TrainConfig) -> usize {
    splits.n_classes().unwrap_or(config.way)
}

struct Progress {
    dir: PathBuf,
    written: Vec<PathBuf>,
}

impl TrainObserver for Progress {
    fn on_record(&mut self, r: &LogRecord) -> stunt::Result<()> {
        if let Some(acc) = r.pseudo_val_acc {
            eprintln!("step {:>6}  loss {:.4}  pseudo-val {:.4}", r.step, r.loss, acc);
        }
        Ok(())
    }

    fn on_improvement(&mut self, best: &Checkpoint) -> stunt::Result<()> {
        let path = self.dir.join(format!("step_{:06}.ckpt", best.step));
        best.save(&path)?;
        self.written.push(path);
        Ok(())
    }
}

fn save_run(m: &mut RunManifest, dir: &Path, config: &TrainConfig, outcome: &trainer::TrainOutcome) -> Result<()> {
    for (name, ck) in [("best.ckpt", &outcome.best), ("final.ckpt", &outcome.last)] {
        let path = dir.join(name);
        ck.save(&path)?;
        m.output(path);
    }
    write_text(m, dir.join("log.jsonl"), &jsonl(&outcome.log)?)?;
    write_text(m, dir.join("config.toml"), &config.to_toml_string())
}

fn train(a: TrainArgs, ctx: &Context) -> Result<()> {
    let config = ctx.config(&a.config)?;
    let splits = load_splits(&a.splits)?;
    let out = ctx.out_dir(&a.out)?;
    let mut m = ctx.manifest("train", &out);
    m.input(&a.splits);
    m.seed("train", config.seed);
    m.config = Some(config.clone());

    let ck_dir = out.join("checkpoints");
    std::fs::create_dir_all(&ck_dir)?;
    let mut progress = Progress {
        dir: ck_dir,
        written: Vec::new(),
    };
    let outcome = trainer::meta_train_observed(
        splits.train_unlabeled.values.view(),
        splits.pseudo_val.values.view(),
        val_classes(&splits, &config),
        &config,
        &mut progress,
    )?;
    m.outputs.append(&mut progress.written);
    save_run(&mut m, &out, &config, &outcome)?;
    println!(
        "best pseudo-val accuracy {:.4} at step {}; final step {} at {:.4}",
        outcome.best.pseudo_val_accuracy, outcome.best.step, outcome.last.step, outcome.last.pseudo_val_accuracy
    );
    m.write()?;
    Ok(())
}

#[derive(Serialize)]
struct PointRecord {
    rank: usize,
    index: usize,
    shot: usize,
    query: usize,
    way: usize,
    seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    best_pseudo_val_acc: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    best_step: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    test_acc: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

fn mean(v: &[f64]) -> f64 {
    stats::mean_std(v).0
}

fn search(a: SearchArgs, ctx: &Context) -> Result<()> {
    let base = ctx.config(&a.config)?;
    let grid = match (&ctx.grid_override, &a.grid, &a.config.dataset) {
        (Some(g), _, _) => g.clone(),
        (None, Some(path), _) => GridSpec::from_file(path)?,
        (None, None, Some(name)) => GridSpec::for_dataset(name)
            .ok_or_else(|| user(format!("no published grid for '{name}'; pass --grid")))?,
        (None, None, None) => return Err(user("pass --grid or a --dataset with a published grid")),
    };
    let splits = load_splits(&a.splits)?;
    let out = ctx.out_dir(&a.out)?;
    let mut m = ctx.manifest("search", &out);
    m.input(&a.splits);
    m.seed("base", base.seed);
    m.config = Some(base.clone());
    m.grid = Some(grid.clone());

    let results = trainer::grid_search(
        splits.train_unlabeled.values.view(),
        splits.pseudo_val.values.view(),
        val_classes(&splits, &base),
        &grid,
        &base,
    )?;
    let seeds: Vec<u64> = (0..a.seeds).collect();
    let mut records = Vec::new();
    for (rank, r) in results.iter().enumerate() {
        let mut rec = PointRecord {
            rank: rank + 1,
            index: r.index,
            shot: r.point.shot,
            query: r.point.query,
            way: r.point.way,
            seed: r.config.seed,
            best_pseudo_val_acc: None,
            best_step: None,
            test_acc: None,
            error: None,
        };
        match &r.outcome {
            Ok(o) => {
                let dir = out.join("points").join(format!("{:02}", r.index));
                std::fs::create_dir_all(&dir)?;
                save_run(&mut m, &dir, &r.config, o)?;
                rec.best_pseudo_val_acc = Some(o.best.pseudo_val_accuracy);
                rec.best_step = Some(o.best.step);
                if a.with_test {
                    let acc = eval::classification_accuracies(&splits, &o.best.params, a.shots, &seeds)?;
                    rec.test_acc = Some(mean(&acc));
                }
            }
            Err(e) => {
                eprintln!("warning: grid point {} failed: {e}", r.index);
                rec.error = Some(e.clone());
            }
        }
        records.push(rec);
    }
    write_text(&mut m, out.join("ranking.jsonl"), &jsonl(&records)?)?;

    let fmt = |v: Option<f64>| v.map_or("–".to_string(), |x| format!("{:.2}", 100.0 * x));
    let mut md = String::from("| rank | point | shot | query | way | pseudo-val acc | best step | test acc |\n");
    md.push_str("|---|---|---|---|---|---|---|---|\n");
    for r in &records {
        md.push_str(&format!(
            "| {} | {} | {} | {} | {} | {} | {} | {} |\n",
            r.rank,
            r.index,
            r.shot,
            r.query,
            r.way,
            fmt(r.best_pseudo_val_acc),
            r.best_step.map_or("–".into(), |s| s.to_string()),
            if r.error.is_some() { "failed".into() } else { fmt(r.test_acc) },
        ));
    }
    if a.with_test {
        let (pv, te): (Vec<f64>, Vec<f64>) = records
            .iter()
            .filter_map(|r| Some((r.best_pseudo_val_acc?, r.test_acc?)))
            .unzip();
        let rho = stats::spearman(&pv, &te);
        md.push_str(&format!(
            "\nSpearman rank correlation (pseudo-val vs test, {} points): {rho:.4}\n",
            pv.len()
        ));
        write_json(&mut m, out.join("correlation.json"), &serde_json::json!({ "points": pv.len(), "spearman": rho }))?;
    }
    write_text(&mut m, out.join("ranking.md"), &md)?;
    print!("{md}");
    m.write()?;
    Ok(())
}

fn dataset_name(explicit: &Option<String>, splits_dir: &Path) -> String {
    explicit.clone().unwrap_or_else(|| {
        splits_dir
            .canonicalize()
            .ok()
            .and_then(|p| p.file_name().map(|n| n.to_string_lossy().into_owned()))
            .unwrap_or_else(|| "dataset".into())
    })
}

/// Loads a checkpoint and warns when it does not match the expected config.
fn load_checkpoint(path: &Path, config: &Option<PathBuf>, splits: &DatasetSplits) -> Result<Checkpoint> {
    let ck = Checkpoint::load(path)?;
    if ck.params.dims().0 != splits.dims() {
        return Err(user(format!(
            "checkpoint expects {} input columns, splits have {}",
            ck.params.dims().0,
            splits.dims()
        )));
    }
    let config_path = config
        .clone()
        .or_else(|| path.parent().map(|d| d.join("config.toml")).filter(|p| p.is_file()));
    if let Some(cp) = config_path {
        let expected = TrainConfig::from_file(&cp)?.hash();
        if expected != ck.config_hash {
            eprintln!(
                "warning: checkpoint config hash {:016x} does not match {} ({expected:016x})",
                ck.config_hash,
                cp.display()
            );
        }
    }
    Ok(ck)
}

fn evaluate(a: EvaluateArgs, ctx: &Context) -> Result<()> {
    let splits = load_splits(&a.splits)?;
    let ck = load_checkpoint(&a.checkpoint, &a.config, &splits)?;
    let out = ctx.out_dir(&a.out)?;
    let mut m = ctx.manifest("evaluate", &out);
    m.input(&a.splits);
    m.input(&a.checkpoint);
    m.seed("first", 0);
    m.seed("count", a.seeds);
    let dataset = dataset_name(&a.dataset, &a.splits);
    let seeds: Vec<u64> = (0..a.seeds).collect();
    let stunt_prov = Provenance {
        dataset: dataset.clone(),
        config_hash: Some(format!("{:016x}", ck.config_hash)),
        checkpoint: Some(ck.id()),
    };
    let raw_prov = Provenance {
        dataset,
        ..Provenance::default()
    };

    let mut aggregates = Vec::new();
    for &shots in &a.shots {
        let acc = eval::classification_accuracies(&splits, &ck.params, shots, &seeds)?;
        let raw = eval::classification_accuracies(&splits, &Identity, shots, &seeds)?;
        let s = FewShotResult::new("stunt", shots, seeds.clone(), acc, stunt_prov.clone());
        let r = FewShotResult::new("raw", shots, seeds.clone(), raw, raw_prov.clone());
        let mut records = s.records();
        records.extend(r.records());
        write_text(&mut m, out.join(format!("eval_{shots}shot.jsonl")), &jsonl(&records)?)?;
        aggregates.push(s.aggregate());
        aggregates.push(r.aggregate());
    }
    let table = eval::markdown_table(&aggregates);
    write_text(&mut m, out.join("results.md"), &table)?;
    print!("{table}");
    m.write()?;
    Ok(())
}

fn regress(a: RegressArgs, ctx: &Context) -> Result<()> {
    let splits = load_splits(&a.splits)?;
    let ck = load_checkpoint(&a.checkpoint, &a.config, &splits)?;
    let out = ctx.out_dir(&a.out)?;
    let mut m = ctx.manifest("regress", &out);
    m.input(&a.splits);
    m.input(&a.checkpoint);
    m.seed("first", 0);
    m.seed("count", a.seeds);
    let k = a.k.unwrap_or(a.shots);
    let dataset = dataset_name(&a.dataset, &a.splits);
    let seeds: Vec<u64> = (0..a.seeds).collect();
    let mse = eval::regression_mses(&splits, &ck.params, a.shots, a.bins, k, &seeds)?;
    let raw = eval::regression_mses(&splits, &Identity, a.shots, a.bins, k, &seeds)?;
    let s = RegressionResult::new(
        "stunt",
        a.shots,
        k,
        seeds.clone(),
        mse,
        Provenance {
            dataset: dataset.clone(),
            config_hash: Some(format!("{:016x}", ck.config_hash)),
            checkpoint: Some(ck.id()),
        },
    );
    let r = RegressionResult::new(
        "raw",
        a.shots,
        k,
        seeds,
        raw,
        Provenance {
            dataset,
            ..Provenance::default()
        },
    );
    let mut records = s.records();
    records.extend(r.records());
    write_text(&mut m, out.join(format!("regress_{}shot_k{k}.jsonl", a.shots)), &jsonl(&records)?)?;
    let table = eval::markdown_table(&[s.aggregate(), r.aggregate()]);
    write_text(&mut m, out.join("results.md"), &table)?;
    print!("{table}");
    m.write()?;
    Ok(())
}

fn aggregates_in(records: Vec<ResultRecord>) -> Vec<Aggregate> {
    records
        .into_iter()
        .filter_map(|r| match r {
            ResultRecord::Aggregate(a) => Some(a),
            ResultRecord::Seed { .. } => None,
        })
        .collect()
}

fn report(a: ReportArgs, ctx: &Context) -> Result<()> {
    let out = ctx.out_dir(&a.out)?;
    let mut m = ctx.manifest("report", &out);
    let mut aggregates = Vec::new();
    for input in &a.inputs {
        m.input(input);
        if input.is_dir() {
            let mut files: Vec<PathBuf> = std::fs::read_dir(input)
                .with_context(|| format!("reading {}", input.display()))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
                .collect();
            files.sort();
            // other JSONL files (training logs, rankings) are not result files
            for f in files {
                if let Ok(records) = eval::read_results(&f) {
                    aggregates.extend(aggregates_in(records));
                }
            }
        } else {
            let records = eval::read_results(input).map_err(|e| user(e.to_string()))?;
            aggregates.extend(aggregates_in(records));
        }
    }
    if aggregates.is_empty() {
        return Err(user("no aggregate result records found in the inputs"));
    }
    let table = eval::markdown_table(&aggregates);
    write_text(&mut m, out.join("report.md"), &table)?;
    print!("{table}");
    m.write()?;
    Ok(())
}

fn absolute(path: &Path) -> Result<PathBuf> {
    Ok(if path.is_absolute() {
        path.to_path_buf()
    } else {
        std::env::current_dir()?.join(path)
    })
}

fn replay(a: ReplayArgs) -> Result<()> {
    let manifest_path = absolute(&a.manifest)?;
    let out_override = a.out.as_deref().map(absolute).transpose()?;
    let m = RunManifest::read(&manifest_path)?;
    let cli = Cli::try_parse_from(std::iter::once("stunt".to_string()).chain(m.argv.iter().cloned()))
        .map_err(|e| user(format!("manifest arguments do not parse: {e}")))?;
    if matches!(cli.command, Command::Replay(_)) {
        return Err(user("manifest records a replay; replay the original manifest instead"));
    }
    std::env::set_current_dir(&m.cwd).with_context(|| format!("entering {}", m.cwd.display()))?;
    let ctx = Context {
        argv: m.argv.clone(),
        config_override: m.config.clone(),
        grid_override: m.grid.clone(),
        out_override: Some(out_override.unwrap_or_else(|| m.out.clone())),
        replayed_from: Some(manifest_path),
    };
    run(cli.command, ctx)
}
