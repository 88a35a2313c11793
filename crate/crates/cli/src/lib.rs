//! `ddmem` command line: synthetic data, training, evaluation, ablations,
//! oracle runs, attribute labelling, dataset statistics and the annotation
//! pipeline.
//!
//! Every subcommand writes `config.json` (the effective configuration) and
//! `command.json` (the subcommand and its arguments) into `--out`. Exit
//! codes: 0 on success, 1 on runtime failure, 2 on usage or config errors.

pub mod config;

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use ddmem::dataset::{load_entry, manifest_path, write_masks, write_sequence, DatasetManifest, ManifestEntry, SequenceRecord, Split};
use ddmem::evaluation::{
    ablation_suite, attribute_breakdown, classify_attributes, evaluate_dataset, oracle_suite, write_attribute_csv, write_summary_csv, EvalOptions,
    EvalReport, SummaryRow,
};
use ddmem::model::{load_checkpoint, save_checkpoint, BankCombo, Model, OracleMode};
use ddmem::pipeline::{
    audit_quality, first_boxes, run_pipeline, Annotator, FileAnnotator, GroundtruthAnnotator, GroundtruthBoxes, GroundtruthInstances,
    GroundtruthPropagator, MaskPropagator, ModelPropagator, NoCorrections, Plugins, SubprocessPropagator,
};
use ddmem::synthgen::{generate, suite, SUITE_NAMES};
use ddmem::training::{finetune, train, LogRow, TrainData, TrainLog};
use ddmem::Error;

use config::{resolve, RunConfig};

#[derive(Parser, Debug)]
#[command(name = "ddmem", version, about = "Long-term video object segmentation with fixed-size memory banks")]
pub struct Cli {
    /// JSON run configuration; defaults apply to missing keys.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override a config key, e.g. `--set model.channels=16`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Run seed; derives the model, training and fine-tuning seeds.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Parallel sequence workers; 1 is fully deterministic.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug, Serialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum Command {
    /// Render synthetic suites into a dataset directory.
    Generate(GenerateArgs),
    /// Train a model from scratch on a dataset's train split.
    Train(TrainArgs),
    /// Continue training a checkpoint on a dataset's train split.
    Finetune(FinetuneArgs),
    /// Evaluate a checkpoint on one split.
    Eval(EvalArgs),
    /// Evaluate every memory-bank combination.
    Ablate(DataArgs),
    /// Evaluate every oracle mode.
    Oracle(DataArgs),
    /// Compute quantitative attribute labels from groundtruth.
    Attributes(SplitArgs),
    /// Dataset statistics for one split.
    Stats(SplitArgs),
    /// Run the semi-automatic annotation pipeline and audit it.
    Pipeline(PipelineArgs),
}

#[derive(Args, Debug, Serialize)]
pub struct GenerateArgs {
    /// Comma-separated suite names.
    #[arg(long, default_value = "short-easy,long-lra,ctc,fm-sv")]
    pub suites: String,
}

#[derive(Args, Debug, Serialize)]
pub struct SplitArgs {
    /// Dataset root.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "valid")]
    pub split: String,
    /// Keep only sequences whose id starts with this prefix.
    #[arg(long)]
    pub filter: Option<String>,
}

#[derive(Args, Debug, Serialize)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Keep only training sequences whose id starts with one of these
    /// comma-separated prefixes.
    #[arg(long)]
    pub filter: Option<String>,
}

#[derive(Args, Debug, Serialize)]
pub struct FinetuneArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub filter: Option<String>,
}

#[derive(Args, Debug, Serialize)]
pub struct DataArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub split: SplitArgs,
    #[arg(long)]
    pub checkpoint: PathBuf,
}

#[derive(Args, Debug, Serialize)]
pub struct EvalArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub data: DataArgs,
    /// none, box, mask or box+mask; defaults to the config value.
    #[arg(long)]
    pub oracle: Option<String>,
    /// Enabled banks, e.g. `r+g+l` or `l`; defaults to the config value.
    #[arg(long)]
    pub banks: Option<String>,
    /// Write predicted masks under `masks/<sequence>/`.
    #[arg(long)]
    pub save_masks: bool,
}

#[derive(Args, Debug, Serialize)]
pub struct PipelineArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub split: SplitArgs,
    /// Propagate with this model; without it groundtruth stubs are used.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// External propagator program, run as `<program> <in> <out>`.
    #[arg(long, conflicts_with = "checkpoint")]
    pub propagator_cmd: Option<PathBuf>,
    /// Who corrects flagged frames: none, groundtruth, or files.
    #[arg(long, default_value = "none")]
    pub annotator: String,
    /// Directory holding `<round>/corrected/*.png` for the files annotator.
    #[arg(long)]
    pub corrections: Option<PathBuf>,
}

enum Failure {
    Usage(String),
    Runtime(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Runtime(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Runtime(e.into())
    }
}

fn category(e: &Error) -> &'static str {
    match e {
        Error::NotFound(_) => "not found",
        Error::Format { .. } => "format",
        Error::Validation(_) => "validation",
        Error::Unsupported(_) => "unsupported",
        Error::Protocol(_) => "protocol",
        Error::NonFinite { .. } => "numerical",
        Error::Plugin { .. } => "plugin",
        Error::Io(_) | Error::Json(_) | Error::Csv(_) => "io",
    }
}

/// Parses `args` (including the program name) and runs the subcommand.
/// Returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).format_timestamp(None).try_init();
    match execute(&cli) {
        Ok(()) => 0,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            2
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error ({}): {e}", category(&e));
            1
        }
    }
}

fn effective_config(cli: &Cli) -> Result<RunConfig, Failure> {
    let text = match &cli.config {
        Some(p) => Some(fs::read_to_string(p).map_err(|e| Failure::Usage(format!("cannot read {}: {e}", p.display())))?),
        None => None,
    };
    let mut cfg = resolve(text.as_deref(), &cli.overrides).map_err(Failure::Usage)?;
    if let Some(seed) = cli.seed {
        cfg.reseed(seed);
    }
    let workers = cli.workers.unwrap_or(cfg.workers);
    cfg.set_workers(workers);
    cfg.model.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    for phase in &cfg.train {
        phase.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    }
    Ok(cfg)
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(value).map_err(Error::from)?;
    fs::write(path, text + "\n")?;
    Ok(())
}

fn execute(cli: &Cli) -> Result<(), Failure> {
    let cfg = effective_config(cli)?;
    let out = &cli.out;
    fs::create_dir_all(out)?;
    write_json(&out.join("config.json"), &cfg)?;
    write_json(&out.join("command.json"), &cli.command)?;
    match &cli.command {
        Command::Generate(a) => cmd_generate(a, out),
        Command::Train(a) => cmd_train(a, &cfg, out),
        Command::Finetune(a) => cmd_finetune(a, &cfg, out),
        Command::Eval(a) => cmd_eval(a, &cfg, out),
        Command::Ablate(a) => cmd_ablate(a, &cfg, out),
        Command::Oracle(a) => cmd_oracle(a, &cfg, out),
        Command::Attributes(a) => cmd_attributes(a, out),
        Command::Stats(a) => cmd_stats(a, out),
        Command::Pipeline(a) => cmd_pipeline(a, &cfg, out),
    }
}

fn parse_split(s: &str) -> Result<Split, Failure> {
    s.parse().map_err(|e: Error| Failure::Usage(e.to_string()))
}

fn matches_filter(id: &str, filter: Option<&str>) -> bool {
    filter.is_none_or(|f| f.split(',').any(|p| id.starts_with(p)))
}

fn load_split(data: &Path, split: Split, filter: Option<&str>) -> Result<Vec<SequenceRecord>, Failure> {
    let manifest = DatasetManifest::load(&manifest_path(data, split))?;
    let seqs = manifest
        .sequences
        .iter()
        .filter(|e| matches_filter(&e.id, filter))
        .map(|e| load_entry(data, e))
        .collect::<ddmem::Result<Vec<_>>>()?;
    if seqs.is_empty() {
        return Err(Failure::Runtime(Error::Validation(format!("no {} sequences match", split.as_str()))));
    }
    log::info!("loaded {} {} sequences", seqs.len(), split.as_str());
    Ok(seqs)
}

fn cmd_generate(a: &GenerateArgs, out: &Path) -> Result<(), Failure> {
    let mut entries: BTreeMap<&str, Vec<ManifestEntry>> = BTreeMap::new();
    for name in a.suites.split(',').map(str::trim) {
        let s = suite(name).ok_or_else(|| Failure::Usage(format!("unknown suite {name:?}; known: {}", SUITE_NAMES.join(", "))))?;
        for (split, specs) in [("train", &s.train), ("valid", &s.val)] {
            for spec in specs {
                let mut seq = generate(spec)?;
                write_sequence(out, &mut seq)?;
                let objects = seq.object_ids.iter().copied().max().unwrap_or(0);
                entries.entry(split).or_default().push(ManifestEntry { id: seq.id.clone(), objects, attributes: seq.attributes.clone() });
            }
            log::info!("{name}: wrote {} {split} sequences", specs.len());
        }
    }
    for (split, seqs) in entries {
        let split = parse_split(split)?;
        DatasetManifest::new(split, seqs)?.save(&manifest_path(out, split))?;
    }
    Ok(())
}

fn progress(row: &LogRow) {
    if row.step % 50 == 0 {
        log::info!("step {} {} loss {:.4} lr {:.2e}", row.step, row.phase, row.loss, row.lr);
    }
}

fn cmd_train(a: &TrainArgs, cfg: &RunConfig, out: &Path) -> Result<(), Failure> {
    let videos = load_split(&a.data, Split::Train, a.filter.as_deref())?;
    let mut model = Model::new(cfg.model.clone())?;
    let log = train(&mut model, &TrainData { videos }, &cfg.train, progress)?;
    finish_training(&model, &log, out, "train_log.csv")
}

fn cmd_finetune(a: &FinetuneArgs, cfg: &RunConfig, out: &Path) -> Result<(), Failure> {
    let videos = load_split(&a.data, Split::Train, a.filter.as_deref())?;
    let mut model = load_checkpoint(&a.checkpoint)?;
    let log = finetune(&mut model, &TrainData { videos }, &cfg.finetune, progress)?;
    finish_training(&model, &log, out, "finetune_log.csv")
}

fn finish_training(model: &Model, log: &TrainLog, out: &Path, log_name: &str) -> Result<(), Failure> {
    log.write_csv(&out.join(log_name))?;
    save_checkpoint(model, &out.join("model.ckpt"))?;
    if let Some(last) = log.rows.last() {
        log::info!("finished at step {} with loss {:.4}", last.step, last.loss);
    }
    Ok(())
}

fn write_report(report: &EvalReport, seqs: &[SequenceRecord], dir: &Path) -> Result<(), Failure> {
    report.write(dir)?;
    write_attribute_csv(&attribute_breakdown(report, seqs), &dir.join("attributes.csv"))?;
    log::info!("{}: J&F {:.4} J {:.4} F {:.4} over {} tracks", dir.display(), report.jf, report.mean_j, report.mean_f, report.tracks);
    Ok(())
}

fn cmd_eval(a: &EvalArgs, cfg: &RunConfig, out: &Path) -> Result<(), Failure> {
    let mut opts: EvalOptions = cfg.eval;
    if let Some(o) = &a.oracle {
        opts.oracle = o.parse::<OracleMode>().map_err(|e| Failure::Usage(e.to_string()))?;
    }
    if let Some(b) = &a.banks {
        opts.combo = b.parse::<BankCombo>().map_err(|e| Failure::Usage(e.to_string()))?;
    }
    opts.keep_masks = a.save_masks;
    let s = &a.data.split;
    let seqs = load_split(&s.data, parse_split(&s.split)?, s.filter.as_deref())?;
    let model = load_checkpoint(&a.data.checkpoint)?;
    let report = evaluate_dataset(&model, &seqs, &opts)?;
    write_report(&report, &seqs, out)?;
    if a.save_masks {
        for e in &report.sequences {
            write_masks(&out.join("masks").join(&e.id), e.masks.iter().enumerate().map(|(i, m)| (i as u32 + 1, m)))?;
        }
    }
    Ok(())
}

fn write_suite(reports: &[EvalReport], labels: &[String], seqs: &[SequenceRecord], out: &Path, table: &str) -> Result<(), Failure> {
    let rows: Vec<SummaryRow> = reports.iter().zip(labels).map(|(r, l)| SummaryRow::of(l.clone(), r)).collect();
    write_summary_csv(&rows, &out.join(format!("{table}.csv")))?;
    let mut timing = csv_timing(reports, labels);
    timing.insert(0, "setting,fps".to_string());
    fs::write(out.join(format!("{table}_timing.csv")), timing.join("\n") + "\n")?;
    for (r, l) in reports.iter().zip(labels) {
        write_report(r, seqs, &out.join(l.replace('+', "_")))?;
    }
    Ok(())
}

fn csv_timing(reports: &[EvalReport], labels: &[String]) -> Vec<String> {
    reports.iter().zip(labels).map(|(r, l)| format!("{l},{:.3}", r.frames_per_second())).collect()
}

fn cmd_ablate(a: &DataArgs, cfg: &RunConfig, out: &Path) -> Result<(), Failure> {
    let seqs = load_split(&a.split.data, parse_split(&a.split.split)?, a.split.filter.as_deref())?;
    let model = load_checkpoint(&a.checkpoint)?;
    let reports = ablation_suite(&model, &seqs, &cfg.eval)?;
    let labels: Vec<String> = BankCombo::all().iter().map(|c| c.label()).collect();
    write_suite(&reports, &labels, &seqs, out, "ablation")
}

fn cmd_oracle(a: &DataArgs, cfg: &RunConfig, out: &Path) -> Result<(), Failure> {
    let seqs = load_split(&a.split.data, parse_split(&a.split.split)?, a.split.filter.as_deref())?;
    let model = load_checkpoint(&a.checkpoint)?;
    let reports = oracle_suite(&model, &seqs, &cfg.eval)?;
    let labels: Vec<String> = OracleMode::ALL.iter().map(|m| m.to_string()).collect();
    write_suite(&reports, &labels, &seqs, out, "oracle")
}

#[derive(Serialize)]
struct AttributeEntry {
    sequence: String,
    computed: Vec<String>,
    declared: Vec<String>,
}

fn cmd_attributes(a: &SplitArgs, out: &Path) -> Result<(), Failure> {
    let seqs = load_split(&a.data, parse_split(&a.split)?, a.filter.as_deref())?;
    let mut rows = Vec::new();
    for s in &seqs {
        rows.push(AttributeEntry {
            sequence: s.id.clone(),
            computed: classify_attributes(s)?.iter().map(|l| l.to_string()).collect(),
            declared: s.attributes.iter().map(|l| l.to_string()).collect(),
        });
    }
    write_json(&out.join("attributes.json"), &rows)
}

fn cmd_stats(a: &SplitArgs, out: &Path) -> Result<(), Failure> {
    let mut manifest = DatasetManifest::load(&manifest_path(&a.data, parse_split(&a.split)?))?;
    manifest.sequences.retain(|e| matches_filter(&e.id, a.filter.as_deref()));
    let stats = ddmem::dataset::dataset_stats(&manifest, &a.data);
    write_json(&out.join("stats.json"), &stats)
}

#[derive(Serialize)]
struct AuditSummary {
    mean_iou: f64,
    object_frames: usize,
    sequences: Vec<(String, f64)>,
    flagged_sparse: usize,
    flagged_dense: usize,
}

fn cmd_pipeline(a: &PipelineArgs, cfg: &RunConfig, out: &Path) -> Result<(), Failure> {
    let seqs = load_split(&a.split.data, parse_split(&a.split.split)?, a.split.filter.as_deref())?;
    let model = a.checkpoint.as_ref().map(|p| load_checkpoint(p)).transpose()?;
    let mut per_seq = Vec::new();
    let (mut total, mut count, mut sparse_flags, mut dense_flags) = (0.0, 0usize, 0, 0);
    for seq in &seqs {
        let gt = seq.groundtruth.as_deref().ok_or_else(|| Error::Protocol(format!("sequence {} has no groundtruth", seq.id)))?;
        let work = out.join("work").join(&seq.id);
        let gt_prop = GroundtruthPropagator(gt);
        let model_prop = model.as_ref().map(|m| ModelPropagator { model: m, combo: cfg.eval.combo });
        let sub_prop = a.propagator_cmd.as_ref().map(|p| SubprocessPropagator { program: p.clone(), args: Vec::new(), work_dir: work.clone() });
        let propagator: &dyn MaskPropagator = match (&model_prop, &sub_prop) {
            (Some(m), _) => m,
            (_, Some(s)) => s,
            _ => &gt_prop,
        };
        let gt_ann = GroundtruthAnnotator(gt);
        let file_ann = FileAnnotator(a.corrections.clone().unwrap_or_else(|| out.join("corrections")).join(&seq.id));
        let annotator: &dyn Annotator = match a.annotator.as_str() {
            "none" => &NoCorrections,
            "groundtruth" => &gt_ann,
            "files" => &file_ann,
            other => return Err(Failure::Usage(format!("unknown annotator {other:?}"))),
        };
        let plugins = Plugins { segmenter: &GroundtruthInstances(gt), tracker: &GroundtruthBoxes(gt), propagator, annotator };
        let result = run_pipeline(seq, &first_boxes(gt, &seq.object_ids), &plugins, &cfg.flags, Some(&out.join("queues").join(&seq.id)))?;
        write_masks(&out.join("masks").join(&seq.id), result.masks.iter().enumerate().map(|(i, m)| (i as u32, m)))?;
        let audit = audit_quality(&result.masks, gt)?;
        total += audit.mean_iou * audit.object_frames as f64;
        count += audit.object_frames;
        sparse_flags += result.sparse_queue.flagged.len();
        dense_flags += result.dense_queue.flagged.len();
        log::info!("{}: audit IoU {:.4}", seq.id, audit.mean_iou);
        per_seq.push((seq.id.clone(), audit.mean_iou));
    }
    let summary = AuditSummary {
        mean_iou: if count == 0 { 1.0 } else { total / count as f64 },
        object_frames: count,
        sequences: per_seq,
        flagged_sparse: sparse_flags,
        flagged_dense: dense_flags,
    };
    log::info!("pipeline audit mean IoU {:.4}", summary.mean_iou);
    write_json(&out.join("audit.json"), &summary)
}
