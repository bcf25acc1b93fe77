use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::Result;
use clap::{Args, Subcommand};
use decompl_core::checkpoint;
use decompl_core::data::{
    apply_diff, format_stats_json, format_stats_table, label_stats, load_dataset, load_diff, save_dataset, Dataset,
    Strictness,
};
use decompl_core::harness::{
    build_model, evaluate_parallel, format_ablation_table, format_profile, profile_instrumented, run_ablations,
    TrainConfig,
};
use decompl_core::model::{ModelParams, Variant};
use decompl_core::synth::{generate, oracle_accuracy, Prototypes};
use decompl_core::Error;

use crate::config::{self, CliConfig};
use crate::manifest::Manifest;
use crate::{GlobalArgs, Violations};

const DEFAULT_OUT_DIR: &str = "decompl-out";

#[derive(Debug, Args)]
pub struct GenArgs {
    /// Dataset file to write [default: <out-dir>/synthetic.jsonl].
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    clips_per_class: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Training dataset; a share is held out for checkpoint selection.
    #[arg(long)]
    data: PathBuf,
    /// Checkpoint to write [default: <out-dir>/model.ckpt].
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Print the report as JSON.
    #[arg(long)]
    json: bool,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    test: PathBuf,
    /// Comma-separated variants, e.g. `full,only-coordinate,heads(4)`.
    #[arg(long, value_delimiter = ',')]
    variants: Option<Vec<Variant>>,
    /// Comma-separated training seeds.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
}

#[derive(Debug, Args)]
pub struct ProfileArgs {
    /// Actors per frame.
    #[arg(long, default_value_t = 12)]
    actors: usize,
}

#[derive(Debug, Subcommand)]
pub enum AnnotateCommand {
    /// Apply an annotation diff, all entries or none.
    ApplyDiff {
        data: PathBuf,
        diff: PathBuf,
        /// Where to write the corrected dataset [default: overwrite DATA].
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Group-label distribution, side by side when two datasets are given.
    Stats {
        before: PathBuf,
        after: Option<PathBuf>,
        #[arg(long)]
        json: bool,
    },
    /// Check every record and report violations with line numbers.
    Validate { data: PathBuf },
}

fn io_error(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        ensure_dir(dir)?;
    }
    fs::write(path, contents).map_err(|e| io_error(path, e))?;
    Ok(())
}

fn ensure_dir(dir: &Path) -> Result<()> {
    if !dir.exists() {
        fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
        log::info!("created output directory {}", dir.display());
    }
    Ok(())
}

/// The resolved config and output directory of one invocation.
struct Run {
    config: CliConfig,
    out_dir: PathBuf,
    seed: Option<u64>,
}

impl Run {
    fn new(global: &GlobalArgs) -> Result<Self> {
        let mut config = config::load(&global.config, &global.overrides)?;
        if let Some(seed) = global.seed {
            config.synth.seed = seed;
            config.train.seed = seed;
        }
        let out_dir = global
            .out_dir
            .clone()
            .or_else(|| config.out_dir.clone())
            .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR));
        Ok(Self {
            config,
            out_dir,
            seed: global.seed,
        })
    }

    fn output(&self, explicit: Option<&PathBuf>, name: &str) -> Result<PathBuf> {
        let path = explicit.cloned().unwrap_or_else(|| self.out_dir.join(name));
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            ensure_dir(dir)?;
        }
        Ok(path)
    }

    fn manifest<'a>(&'a self, command: &'a str, seed: u64) -> Manifest<'a> {
        Manifest::new(command, &self.config, Some(self.seed.unwrap_or(seed)))
    }
}

fn load(path: &Path) -> Result<Dataset> {
    Ok(load_dataset(path, None, Strictness::Strict)?.dataset)
}

fn check_features(model_dim: usize, data: &Dataset, path: &Path) -> Result<()> {
    if model_dim != data.feature_dim {
        return Err(Error::Config(format!(
            "{} has {}-wide features but model.feature_dim is {model_dim}; set --set model.feature_dim={}",
            path.display(),
            data.feature_dim,
            data.feature_dim
        ))
        .into());
    }
    Ok(())
}

pub fn gen(global: &GlobalArgs, args: &GenArgs) -> Result<()> {
    let mut run = Run::new(global)?;
    if let Some(n) = args.clips_per_class {
        run.config.synth.clips_per_class = n;
    }
    let task = run.config.task.task();
    let synth = run.config.synth;
    let data = generate(&synth, &task)?;
    let out = run.output(args.out.as_ref(), "synthetic.jsonl")?;
    save_dataset(&data, &out)?;
    let oracle = oracle_accuracy(&data, &Prototypes::new(&synth, &task))?;
    println!("wrote {} clips to {} (oracle accuracy {oracle:.4})", data.len(), out.display());
    run.manifest("gen", synth.seed).output(&out).write_beside(&out)?;
    Ok(())
}

pub fn train(global: &GlobalArgs, args: &TrainArgs) -> Result<()> {
    let run = Run::new(global)?;
    let data = load(&args.data)?;
    let cfg: &TrainConfig = &run.config.train;
    check_features(run.config.model.feature_dim, &data, &args.data)?;
    let params = build_model(&run.config.model, &data.task, cfg)?;
    let outcome = decompl_core::harness::train(&data, params, cfg)?;

    let ckpt = run.output(args.checkpoint.as_ref(), "model.ckpt")?;
    checkpoint::save(&outcome.model, &ckpt)?;
    let log_path = ckpt.with_file_name(format!(
        "{}.log.jsonl",
        ckpt.file_stem().and_then(|s| s.to_str()).unwrap_or("train")
    ));
    let mut lines = String::new();
    for entry in &outcome.log {
        lines.push_str(&serde_json::to_string(entry)?);
        lines.push('\n');
    }
    write_file(&log_path, &lines)?;
    match outcome.best_val_accuracy {
        Some(acc) => println!(
            "best epoch {} (validation accuracy {acc:.4}); checkpoint {}",
            outcome.best_epoch,
            ckpt.display()
        ),
        None => println!("trained {} epochs; checkpoint {}", cfg.epochs, ckpt.display()),
    }
    run.manifest("train", cfg.seed)
        .input(&args.data)
        .output(&ckpt)
        .output(&log_path)
        .write_beside(&ckpt)?;
    Ok(())
}

pub fn eval(global: &GlobalArgs, args: &EvalArgs) -> Result<()> {
    let run = Run::new(global)?;
    let params: ModelParams = checkpoint::load(&args.checkpoint)?;
    let data = load(&args.data)?;
    check_features(params.config.feature_dim, &data, &args.data)?;
    let report = evaluate_parallel(&data, &params)?;
    let json = serde_json::to_string_pretty(&report)?;
    if args.json {
        println!("{json}");
    } else {
        println!("{report}");
    }
    let out = run.output(None, "eval.json")?;
    write_file(&out, &(json + "\n"))?;
    run.manifest("eval", run.config.train.seed)
        .input(&args.checkpoint)
        .input(&args.data)
        .output(&out)
        .write_beside(&out)?;
    Ok(())
}

pub fn ablate(global: &GlobalArgs, args: &AblateArgs) -> Result<()> {
    let mut run = Run::new(global)?;
    if let Some(v) = &args.variants {
        run.config.ablation.variants = v.clone();
    }
    if let Some(s) = &args.seeds {
        run.config.ablation.seeds = s.clone();
    }
    let train_set = load(&args.train)?;
    let test_set = load(&args.test)?;
    check_features(run.config.model.feature_dim, &train_set, &args.train)?;
    check_features(run.config.model.feature_dim, &test_set, &args.test)?;
    let ab = &run.config.ablation;
    let table = run_ablations(&train_set, &test_set, &run.config.model, &run.config.train, &ab.variants, &ab.seeds)?;
    let text = format_ablation_table(&table);
    print!("{text}");
    let out = run.output(None, "ablation.txt")?;
    write_file(&out, &text)?;
    let json_path = out.with_extension("json");
    write_file(&json_path, &(serde_json::to_string_pretty(&table)? + "\n"))?;
    run.manifest("ablate", run.config.train.seed)
        .input(&args.train)
        .input(&args.test)
        .output(&out)
        .output(&json_path)
        .write_beside(&out)?;
    Ok(())
}

pub fn profile(global: &GlobalArgs, args: &ProfileArgs) -> Result<()> {
    let run = Run::new(global)?;
    let params = ModelParams::new(run.config.model, run.config.task.task(), run.config.train.seed)?;
    let analytic = decompl_core::harness::profile(&params, args.actors);
    let counted = profile_instrumented(&params, args.actors, run.config.train.seed)?;
    if analytic != counted {
        return Err(Error::Contract("analytic FLOP counts disagree with the instrumented run".into()).into());
    }
    let text = format_profile(&analytic);
    print!("{text}");
    let out = run.output(None, "profile.json")?;
    write_file(&out, &(serde_json::to_string_pretty(&analytic)? + "\n"))?;
    run.manifest("profile", run.config.train.seed).output(&out).write_beside(&out)?;
    Ok(())
}

pub fn annotate(global: &GlobalArgs, command: &AnnotateCommand) -> Result<()> {
    match command {
        AnnotateCommand::ApplyDiff { data, diff, out } => {
            let run = Run::new(global)?;
            let dataset = load(data)?;
            let entries = load_diff(diff)?;
            let (clips, report) = apply_diff(&dataset.clips, &entries, &dataset.task)?;
            let target = out.clone().unwrap_or_else(|| data.clone());
            if let Some(dir) = target.parent().filter(|d| !d.as_os_str().is_empty()) {
                ensure_dir(dir)?;
            }
            save_dataset(&dataset.with_clips(clips), &target)?;
            println!("{report}");
            println!("wrote {}", target.display());
            run.manifest("annotate apply-diff", run.config.train.seed)
                .input(data)
                .input(diff)
                .output(&target)
                .write_beside(&target)?;
        }
        AnnotateCommand::Stats { before, after, json } => {
            let first = load(before)?;
            let counts = label_stats(&first.clips, &first.task);
            let second = match after {
                Some(path) => {
                    let d = load(path)?;
                    if d.task.group_labels != first.task.group_labels {
                        return Err(Error::Label(format!(
                            "{} and {} use different group vocabularies",
                            before.display(),
                            path.display()
                        ))
                        .into());
                    }
                    Some(label_stats(&d.clips, &d.task))
                }
                None => None,
            };
            if *json {
                println!("{}", serde_json::to_string_pretty(&format_stats_json(&counts, second.as_ref()))?);
            } else {
                print!("{}", format_stats_table(&counts, second.as_ref()));
            }
        }
        AnnotateCommand::Validate { data } => {
            let loaded = load_dataset(data, None, Strictness::Lenient)?;
            let mut count = loaded.issues.len();
            let mut stdout = std::io::stdout().lock();
            for issue in &loaded.issues {
                writeln!(stdout, "line {}: {}", issue.line, issue.message)?;
            }
            if let Err(e) = loaded.dataset.validate() {
                writeln!(stdout, "{e}")?;
                count += 1;
            }
            writeln!(stdout, "{} clips checked, {count} violations", loaded.dataset.len())?;
            if count > 0 {
                return Err(Violations(count).into());
            }
        }
    }
    Ok(())
}
