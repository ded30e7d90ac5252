//! Subcommands behind the `evmv` binary.
//!
//! Every command takes its parsed arguments and returns a summary value; the
//! binary only prints. Output file names under `--out`:
//!
//! | command   | files |
//! |-----------|-------|
//! | `synth`   | `manifest.json`, `labels.csv`, `<view>.vw` |
//! | `train`   | `model.evmv`, `model.evmv.json`, `history.csv` |
//! | `eval`    | `metrics.json`, `metrics.csv`, `risk_coverage.csv`, `selective.csv`, `predictions.jsonl` |
//! | `inspect` | `inspect-<sample>.json` |
//! | `perturb` | `<stem>.p<p>.txt`, `<stem>.p<p>.stats.json` |

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, FromArgMatches, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use evmv_core::data::{
    default_view_names, load_dataset, stratified_split_indices, synth_generate, LabeledDataset,
    SynthConfig,
};
use evmv_core::metrics::{default_thresholds, EvalReport};
use evmv_core::net::{self, EpochRecord, ModelBundle, SplitRecord, TrainConfig};
use evmv_core::perturb::{perturb_corpus, CorpusReport, NoiseConfig};
use evmv_core::{expected_probs, DirichletParams, Opinion};

pub const DEFAULT_SEED: u64 = 42;
pub const MODEL_FILE: &str = "model.evmv";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error(transparent)]
    Core(#[from] evmv_core::Error),
}

impl CliError {
    /// 2 usage, 3 data, 4 numeric.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Core(evmv_core::Error::Config(_)) => 2,
            CliError::Core(e) if e.is_numeric() => 4,
            CliError::Data(_) | CliError::Core(_) => 3,
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

fn io_err(path: &Path, source: std::io::Error) -> CliError {
    evmv_core::Error::Io {
        path: path.to_path_buf(),
        source,
    }
    .into()
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    fs::write(path, text).map_err(|e| io_err(path, e))
}

fn create_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))
}

#[derive(Debug, Parser)]
#[command(name = "evmv", version, about = "Evidential multi-view classification")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic Gaussian multi-view dataset.
    Synth(SynthArgs),
    /// Train one evidence head per view on a dataset manifest.
    Train(TrainArgs),
    /// Score a checkpoint on a dataset split.
    Eval(EvalArgs),
    /// Print per-view and fused opinions for one sample.
    Inspect(InspectArgs),
    /// Inject keyboard typos into a text corpus, one document per line.
    Perturb(PerturbArgs),
}

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 2)]
    pub classes: usize,
    #[arg(long, default_value_t = 1000)]
    pub samples_per_class: usize,
    #[arg(long, value_delimiter = ',', default_value = "4,4,4")]
    pub dims: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "1.0,0.6,0.0")]
    pub informativeness: Vec<f64>,
    #[arg(long, default_value_t = 0.1)]
    pub label_noise: f64,
    /// View names; defaults to semantic, symptom, emotion, cognitive, view4, ...
    #[arg(long, value_delimiter = ',')]
    pub view_names: Option<Vec<String>>,
    #[arg(long, env = "EVMV_SEED", default_value_t = DEFAULT_SEED)]
    pub seed: u64,
}

/// Parses `argv` against `T`'s flags so library callers get the CLI defaults.
fn with_defaults<T: Args + FromArgMatches>(argv: Vec<OsString>) -> T {
    let cmd = T::augment_args(clap::Command::new("evmv"));
    T::from_arg_matches(&cmd.get_matches_from(argv)).expect("defaults parse")
}

impl SynthArgs {
    pub fn new(out: impl Into<PathBuf>) -> Self {
        with_defaults(vec!["evmv".into(), "--out".into(), out.into().into_os_string()])
    }
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1e-4)]
    pub lr: f64,
    #[arg(long, default_value_t = 12)]
    pub batch: usize,
    #[arg(long, default_value_t = 15)]
    pub max_epochs: usize,
    /// Epochs over which the KL weight ramps from 0 to 1.
    #[arg(long, default_value_t = 10)]
    pub anneal_epochs: usize,
    /// Stop after this many epochs without a lower validation loss.
    #[arg(long, default_value_t = 3)]
    pub patience: usize,
    #[arg(long, default_value_t = 64)]
    pub hidden: usize,
    /// Train on a subset of the dataset's views.
    #[arg(long, value_delimiter = ',')]
    pub views: Option<Vec<String>>,
    /// Train, validation and test fractions.
    #[arg(long, value_delimiter = ',', default_value = "0.64,0.16,0.20")]
    pub split: Vec<f64>,
    #[arg(long, env = "EVMV_SEED", default_value_t = DEFAULT_SEED)]
    pub seed: u64,
}

impl TrainArgs {
    pub fn new(manifest: impl Into<PathBuf>, out: impl Into<PathBuf>) -> Self {
        with_defaults(vec![
            "evmv".into(),
            "--manifest".into(),
            manifest.into().into_os_string(),
            "--out".into(),
            out.into().into_os_string(),
        ])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Subset {
    Train,
    Val,
    Test,
    All,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Which part of the training split to score; `all` ignores the split.
    #[arg(long, value_enum, default_value_t = Subset::Test)]
    pub subset: Subset,
    /// Uncertainty thresholds for the selective sweep (default 0.05..=1.00).
    #[arg(long, value_delimiter = ',')]
    pub thresholds: Option<Vec<f64>>,
}

impl EvalArgs {
    pub fn new(manifest: impl Into<PathBuf>, model: impl Into<PathBuf>, out: impl Into<PathBuf>) -> Self {
        Self {
            manifest: manifest.into(),
            model: model.into(),
            out: out.into(),
            subset: Subset::Test,
            thresholds: None,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct InspectArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub sample: String,
    /// Also write the record to `<out>/inspect-<sample>.json`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct PerturbArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Per-character mutation probability.
    #[arg(long)]
    pub p: f64,
    #[arg(long, env = "EVMV_SEED", default_value_t = DEFAULT_SEED)]
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SynthSummary {
    pub manifest: PathBuf,
    pub dataset_name: String,
    pub num_samples: usize,
    pub class_counts: Vec<usize>,
    pub views: Vec<(String, usize)>,
}

pub fn cmd_synth(args: &SynthArgs) -> CliResult<SynthSummary> {
    let view_names = args
        .view_names
        .clone()
        .unwrap_or_else(|| default_view_names(args.dims.len()));
    let cfg = SynthConfig {
        num_classes: args.classes,
        samples_per_class: args.samples_per_class,
        dims: args.dims.clone(),
        informativeness: args.informativeness.clone(),
        label_noise: args.label_noise,
        seed: args.seed,
        view_names,
    };
    let ds = synth_generate(&cfg)?;
    let manifest = ds.save(&args.out)?;
    Ok(SynthSummary {
        manifest,
        dataset_name: ds.name.clone(),
        num_samples: ds.len(),
        class_counts: ds.class_counts(),
        views: ds.views().iter().map(|v| (v.name.clone(), v.dims())).collect(),
    })
}

fn parse_split(split: &[f64]) -> CliResult<(f64, f64, f64)> {
    match *split {
        [a, b, c] => Ok((a, b, c)),
        _ => Err(CliError::Usage(format!(
            "--split needs three comma-separated fractions, got {}",
            split.len()
        ))),
    }
}

fn load_views<S: AsRef<str>>(manifest: &Path, views: Option<&[S]>) -> CliResult<LabeledDataset> {
    let ds = load_dataset(manifest)?;
    Ok(match views {
        Some(v) => ds.select_views(v)?,
        None => ds,
    })
}

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub model: PathBuf,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub view_names: Vec<String>,
}

pub fn cmd_train(args: &TrainArgs) -> CliResult<TrainSummary> {
    let fractions = parse_split(&args.split)?;
    let cfg = TrainConfig {
        learning_rate: args.lr,
        batch_size: args.batch,
        max_epochs: args.max_epochs,
        anneal_epochs: args.anneal_epochs,
        patience: args.patience,
        seed: args.seed,
        hidden_dim: args.hidden,
        ..TrainConfig::default()
    };
    cfg.validate()?;
    let ds = load_views(&args.manifest, args.views.as_deref())?;
    let split = stratified_split_indices(ds.labels(), ds.num_classes, fractions, args.seed)?;
    let (train_set, val_set) = (ds.subset(&split.train), ds.subset(&split.val));
    let init = ModelBundle::for_dataset(&train_set, &cfg)?;
    let outcome = net::train(&init, &train_set, &val_set, &cfg)?;

    create_dir(&args.out)?;
    let model = args.out.join(MODEL_FILE);
    let record = SplitRecord {
        seed: args.seed,
        fractions,
    };
    outcome.bundle.save(&model, Some(record))?;
    let mut csv = String::from("epoch,lambda,train_loss,val_loss\n");
    for h in &outcome.history {
        csv += &format!("{},{},{},{}\n", h.epoch, h.lambda, h.train_loss, h.val_loss);
    }
    write_text(&args.out.join("history.csv"), &csv)?;
    Ok(TrainSummary {
        model,
        history: outcome.history,
        best_epoch: outcome.best_epoch,
        view_names: outcome.bundle.view_names,
    })
}

/// Loads a checkpoint and the dataset restricted to the checkpoint's views.
fn load_model_and_data(
    model: &Path,
    manifest: &Path,
) -> CliResult<(ModelBundle, net::CheckpointManifest, LabeledDataset)> {
    let (bundle, meta) = ModelBundle::load(model)?;
    let ds = load_views(manifest, Some(bundle.view_names.as_slice()))?;
    bundle.check_dataset(&ds)?;
    Ok((bundle, meta, ds))
}

pub fn cmd_eval(args: &EvalArgs) -> CliResult<EvalReport> {
    let (bundle, meta, ds) = load_model_and_data(&args.model, &args.manifest)?;
    let ds = match args.subset {
        Subset::All => ds,
        part => {
            let split = meta.split.ok_or_else(|| {
                CliError::Usage("checkpoint records no split; use --subset all".into())
            })?;
            let idx = stratified_split_indices(ds.labels(), ds.num_classes, split.fractions, split.seed)?;
            ds.subset(match part {
                Subset::Train => &idx.train,
                Subset::Val => &idx.val,
                _ => &idx.test,
            })
        }
    };
    let thresholds = args.thresholds.clone().unwrap_or_else(default_thresholds);
    let records = net::predict_batch(&bundle, &ds)?;
    let report = EvalReport::from_predictions(&records, ds.labels(), ds.num_classes, &thresholds)?;
    report.write(&args.out)?;
    let mut lines = String::new();
    for r in &records {
        lines += &serde_json::to_string(r).expect("record serializes");
        lines.push('\n');
    }
    write_text(&args.out.join("predictions.jsonl"), &lines)?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OpinionView {
    pub name: String,
    pub beliefs: Vec<f64>,
    pub uncertainty: f64,
    pub probs: Vec<f64>,
}

impl OpinionView {
    fn new(name: &str, o: &Opinion) -> CliResult<Self> {
        let d: DirichletParams = evmv_core::dirichlet_from_opinion(o)?;
        Ok(Self {
            name: name.to_string(),
            beliefs: o.beliefs().to_vec(),
            uncertainty: o.uncertainty(),
            probs: expected_probs(&d),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InspectRecord {
    pub sample_id: String,
    pub label: usize,
    pub predicted_class: usize,
    pub views: Vec<OpinionView>,
    pub fused: OpinionView,
    /// Conflict of the last pairwise combination.
    pub conflict: f64,
    pub step_conflicts: Vec<f64>,
}

pub fn cmd_inspect(args: &InspectArgs) -> CliResult<InspectRecord> {
    let (bundle, _, ds) = load_model_and_data(&args.model, &args.manifest)?;
    let i = ds
        .position_of(&args.sample)
        .ok_or_else(|| CliError::Data(format!("unknown sample id {:?}", args.sample)))?;
    let out = net::forward_fused(&bundle, &args.sample, &ds.features(i))?;
    let r = out.record;
    let record = InspectRecord {
        sample_id: r.sample_id,
        label: ds.labels()[i],
        predicted_class: r.predicted_class,
        views: bundle
            .view_names
            .iter()
            .zip(&r.per_view_opinions)
            .map(|(n, o)| OpinionView::new(n, o))
            .collect::<CliResult<_>>()?,
        fused: OpinionView::new("fused", &r.fused_opinion)?,
        conflict: r.final_conflict,
        step_conflicts: r.step_conflicts,
    };
    if let Some(dir) = &args.out {
        create_dir(dir)?;
        let text = serde_json::to_string_pretty(&record).expect("record serializes") + "\n";
        write_text(&dir.join(format!("inspect-{}.json", args.sample)), &text)?;
    }
    Ok(record)
}

#[derive(Debug, Clone, Serialize)]
pub struct PerturbSummary {
    pub output: PathBuf,
    pub p: f64,
    pub seed: u64,
    pub report: CorpusReport,
}

pub fn perturb_output_path(out: &Path, input: &Path, p: f64) -> PathBuf {
    let stem = input.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "corpus".into());
    out.join(format!("{stem}.p{p}.txt"))
}

pub fn cmd_perturb(args: &PerturbArgs) -> CliResult<PerturbSummary> {
    let cfg = NoiseConfig::new(args.p, args.seed)?;
    create_dir(&args.out)?;
    let output = perturb_output_path(&args.out, &args.input, args.p);
    let report = perturb_corpus(&args.input, &output, &cfg)?;
    let summary = PerturbSummary {
        output: output.clone(),
        p: args.p,
        seed: args.seed,
        report,
    };
    let stats = output.with_extension("stats.json");
    let mut compact = serde_json::to_value(&summary).expect("summary serializes");
    compact["report"]
        .as_object_mut()
        .expect("report is an object")
        .remove("line_rates");
    write_text(&stats, &(serde_json::to_string_pretty(&compact).unwrap() + "\n"))?;
    Ok(summary)
}

/// Runs one parsed command and returns the text to print.
pub fn run(cli: Cli) -> CliResult<String> {
    Ok(match cli.command {
        Command::Synth(a) => {
            let s = cmd_synth(&a)?;
            let mut out = format!("dataset {} ({} samples)\n", s.dataset_name, s.num_samples);
            out += "class,count\n";
            for (c, n) in s.class_counts.iter().enumerate() {
                out += &format!("{c},{n}\n");
            }
            for (name, dims) in &s.views {
                out += &format!("view {name}: {dims} dims\n");
            }
            out += &format!("manifest {}", s.manifest.display());
            out
        }
        Command::Train(a) => {
            let s = cmd_train(&a)?;
            let mut out = String::from("epoch  lambda  train_loss  val_loss\n");
            for h in &s.history {
                out += &format!(
                    "{:>5}  {:>6.3}  {:>10.5}  {:>8.5}\n",
                    h.epoch, h.lambda, h.train_loss, h.val_loss
                );
            }
            out += &format!(
                "kept epoch {}; views {}\nmodel {}",
                s.best_epoch,
                s.view_names.join(","),
                s.model.display()
            );
            out
        }
        Command::Eval(a) => {
            let r = cmd_eval(&a)?;
            let opt = |v: Option<f64>| v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "undefined".into());
            format!(
                "samples {}\naccuracy {:.4}\nf1 ({}) {:.4}\nauroc {}\nauprc {}\nuncertainty_auroc {}\nreport {}",
                r.num_samples,
                r.accuracy,
                r.averaging,
                r.f1,
                opt(r.auroc),
                opt(r.auprc),
                opt(r.uncertainty_auroc),
                a.out.join("metrics.json").display()
            )
        }
        Command::Inspect(a) => {
            serde_json::to_string_pretty(&cmd_inspect(&a)?).expect("record serializes")
        }
        Command::Perturb(a) => {
            let s = cmd_perturb(&a)?;
            let t = s.report.total;
            format!(
                "lines {}\neligible {}\nmutations {} (rate {:.4})\n  delete {} insert {} substitute {} swap {}\noutput {}",
                s.report.lines,
                t.eligible,
                t.mutations,
                t.mutation_rate().unwrap_or(0.0),
                t.deletions,
                t.insertions,
                t.substitutions,
                t.swaps,
                s.output.display()
            )
        }
    })
}
