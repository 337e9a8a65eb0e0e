//! The `xrn` command line: split, train, eval, predict, synth, inspect.
//!
//! Every subcommand prints its fully resolved configuration as one
//! `config {json}` line before doing any work. Exit codes: 0 success,
//! 1 usage/configuration error, 2 data or format error, 3 I/O error,
//! 4 numerical failure.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::arch::{parameter_inventory, stage_shapes, Arch, ModelConfig, ModelGraph};
use crate::checkpoint::{load_checkpoint, save_checkpoint};
use crate::data::{
    decode_and_resize, decode_gray, generate_synthetic, load_manifest, load_manifest_with, load_samples,
    resize_bilinear, stratified_split, ClassVocabulary, Split, SplitSpec,
};
use crate::error::{Error, Result};
use crate::explain::{gradcam, occlusion_map, render_heatmap, write_heatmap_csv, HeatMap};
use crate::metrics::{confusion_from_predictions, one_vs_rest_roc, round4, MetricsReport};
use crate::tensor::Tensor;
use crate::train::{train, TrainConfig};

#[derive(Parser, Debug)]
#[command(name = "xrn", version, about = "U-Net / W-Net chest X-ray classifier")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Assign a stratified train/test split to a manifest.
    Split(SplitArgs),
    /// Train a model on the train rows of a manifest.
    Train(TrainArgs),
    /// Evaluate a checkpoint and write a metrics report.
    Eval(EvalArgs),
    /// Classify one image, optionally rendering a heat map.
    Predict(PredictArgs),
    /// Generate a synthetic dataset with planted class features.
    Synth(SynthArgs),
    /// Print the stage ladder and parameter count of a model.
    Inspect(InspectArgs),
}

#[derive(Args, Debug, Serialize)]
struct SplitArgs {
    /// Input manifest CSV (path,label[,split]).
    #[arg(long)]
    manifest: PathBuf,
    /// Fraction of each class assigned to train, in (0, 1).
    #[arg(long, default_value_t = 0.8)]
    train_fraction: f64,
    /// Exact per-class counts overriding the fraction, e.g. covid=156:40,normal=320:80.
    #[arg(long)]
    counts: Option<String>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output manifest with a split column.
    #[arg(long)]
    out: PathBuf,
    /// Replace split assignments already present in the input.
    #[arg(long)]
    overwrite: bool,
}

#[derive(Args, Debug, Serialize)]
struct TrainArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, value_enum, default_value_t = ArchArg::Wnet)]
    arch: ArchArg,
    /// 2 (covid, normal) or 3 (covid, normal, pneumonia).
    #[arg(long, default_value_t = 2)]
    classes: usize,
    #[arg(long, default_value_t = 400)]
    input_size: usize,
    #[arg(long, default_value_t = 32)]
    base_channels: usize,
    /// Number of pooling stages.
    #[arg(long, default_value_t = 4)]
    depth: usize,
    #[arg(long, default_value_t = 10)]
    epochs: usize,
    #[arg(long, default_value_t = 4)]
    batch_size: usize,
    #[arg(long, default_value_t = 0.001)]
    lr: f64,
    /// Seeds initialization and shuffling.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output checkpoint.
    #[arg(long)]
    out: PathBuf,
    /// JSONL training log, one record per batch.
    #[arg(long)]
    log: Option<PathBuf>,
    /// Log 0 instead of wall-clock milliseconds, making logs reproducible.
    #[arg(long)]
    no_timing: bool,
}

#[derive(Args, Debug, Serialize)]
struct EvalArgs {
    /// Checkpoint to evaluate.
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    /// Metrics report JSON.
    #[arg(long)]
    report: Option<PathBuf>,
    /// ROC points CSV (class,fpr,tpr).
    #[arg(long)]
    roc: Option<PathBuf>,
    /// Rows to evaluate; auto means test rows if the manifest has splits, else all rows.
    #[arg(long, value_enum, default_value_t = SplitArg::Auto)]
    split: SplitArg,
}

#[derive(Args, Debug, Serialize)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    image: PathBuf,
    /// Heat map PNG at the original image resolution.
    #[arg(long)]
    heatmap: Option<PathBuf>,
    /// Raw heat map values as CSV at model resolution.
    #[arg(long)]
    heatmap_csv: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = MethodArg::Gradcam)]
    method: MethodArg,
    /// Occlusion patch side in model pixels.
    #[arg(long, default_value_t = 16)]
    patch: usize,
    /// Occlusion stride in model pixels.
    #[arg(long, default_value_t = 8)]
    stride: usize,
    /// Explain this class instead of the predicted one.
    #[arg(long)]
    class: Option<String>,
}

#[derive(Args, Debug, Serialize)]
struct SynthArgs {
    /// Output directory (created if missing).
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 3)]
    classes: usize,
    #[arg(long, default_value_t = 20)]
    per_class: usize,
    #[arg(long, default_value_t = 64)]
    size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug, Serialize)]
struct InspectArgs {
    /// Inspect a checkpoint; otherwise the model described by the flags below.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = ArchArg::Wnet)]
    arch: ArchArg,
    #[arg(long, default_value_t = 2)]
    classes: usize,
    #[arg(long, default_value_t = 400)]
    input_size: usize,
    #[arg(long, default_value_t = 32)]
    base_channels: usize,
    #[arg(long, default_value_t = 4)]
    depth: usize,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum ArchArg {
    Unet,
    Wnet,
}

impl From<ArchArg> for Arch {
    fn from(a: ArchArg) -> Arch {
        match a {
            ArchArg::Unet => Arch::Unet,
            ArchArg::Wnet => Arch::Wnet,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum SplitArg {
    Auto,
    Train,
    Test,
    All,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum MethodArg {
    Gradcam,
    Occlusion,
}

/// Parses `args` (including the program name), runs the subcommand and
/// returns the process exit code.
pub fn run<I, S>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let text = e.render().to_string();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{text}");
                    0
                }
                _ => {
                    let _ = write!(err, "{text}");
                    1
                }
            };
        }
    };
    let result = match &cli.command {
        Command::Split(a) => cmd_split(a, out),
        Command::Train(a) => cmd_train(a, out),
        Command::Eval(a) => cmd_eval(a, out),
        Command::Predict(a) => cmd_predict(a, out),
        Command::Synth(a) => cmd_synth(a, out),
        Command::Inspect(a) => cmd_inspect(a, out),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}

fn say(out: &mut dyn Write, text: impl AsRef<str>) -> Result<()> {
    writeln!(out, "{}", text.as_ref()).map_err(|e| Error::io("<stdout>", e))
}

fn echo<C: Serialize>(out: &mut dyn Write, command: &str, config: &C) -> Result<()> {
    let json = serde_json::json!({ "command": command, "config": config });
    say(out, format!("config {json}"))
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn parse_counts(text: &str) -> Result<Vec<(String, usize, usize)>> {
    text.split(',')
        .map(|item| {
            let bad = || Error::Usage(format!("bad --counts item {item:?}, expected class=train:test"));
            let (name, counts) = item.split_once('=').ok_or_else(bad)?;
            let (tr, te) = counts.split_once(':').ok_or_else(bad)?;
            Ok((
                name.trim().to_string(),
                tr.trim().parse().map_err(|_| bad())?,
                te.trim().parse().map_err(|_| bad())?,
            ))
        })
        .collect()
}

fn histogram_line(h: &[(String, usize)]) -> String {
    h.iter().map(|(c, n)| format!("{c}={n}")).collect::<Vec<_>>().join(" ")
}

fn cmd_split(a: &SplitArgs, out: &mut dyn Write) -> Result<()> {
    echo(out, "split", a)?;
    let manifest = load_manifest(&a.manifest)?;
    let spec = SplitSpec {
        train_fraction: a.train_fraction,
        per_class_override: a.counts.as_deref().map(parse_counts).transpose()?,
        seed: a.seed,
        overwrite: a.overwrite,
    };
    let out_dir = a.out.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let split = stratified_split(&manifest, &spec)?.rebased(out_dir);
    split.save(&a.out)?;
    say(out, format!("train: {}", histogram_line(&split.split_histogram(Split::Train))))?;
    say(out, format!("test: {}", histogram_line(&split.split_histogram(Split::Test))))?;
    say(out, format!("wrote {}", a.out.display()))
}

fn cmd_train(a: &TrainArgs, out: &mut dyn Write) -> Result<()> {
    let arch = Arch::from(a.arch);
    let model_cfg = ModelConfig {
        arch,
        input_size: a.input_size,
        input_channels: 1,
        base_channels: a.base_channels,
        depth: a.depth,
        num_classes: a.classes,
        u_passes: arch.default_passes(),
        seed: a.seed,
    };
    let train_cfg = TrainConfig {
        epochs: a.epochs,
        batch_size: a.batch_size,
        learning_rate: a.lr,
        seed: a.seed,
        record_time: !a.no_timing,
        ..TrainConfig::default()
    };
    let echoed = serde_json::json!({
        "manifest": a.manifest, "out": a.out, "log": a.log, "model": model_cfg, "train": train_cfg,
    });
    echo(out, "train", &echoed)?;
    model_cfg.validate()?;
    train_cfg.validate()?;

    let vocab = ClassVocabulary::for_count(a.classes)?;
    let manifest = load_manifest_with(&a.manifest, Some(&vocab))?;
    let split = manifest.has_splits().then_some(Split::Train);
    let samples = load_samples(&manifest, split, a.input_size)?;
    say(out, format!("training on {} images ({})", samples.len(), split.map_or("all rows", |_| "train rows")))?;

    let mut model = ModelGraph::<f32>::new(&model_cfg)?;
    say(out, format!("parameters: {}", model.num_parameters()))?;
    let mut lines = String::new();
    let log = train(&mut model, &samples, &train_cfg, |r| {
        lines.push_str(&r.to_json_line());
        lines.push('\n');
    })?;
    for epoch in 1..=a.epochs {
        let recs: Vec<_> = log.iter().filter(|r| r.epoch == epoch).collect();
        let mean = recs.iter().map(|r| r.loss).sum::<f64>() / recs.len() as f64;
        let acc = recs.last().map_or(0.0, |r| r.running_accuracy);
        say(out, format!("epoch {epoch}: loss {} acc {}", round4(mean), round4(acc)))?;
    }
    if let Some(path) = &a.log {
        write_file(path, &lines)?;
    }
    save_checkpoint(&model, &a.out)?;
    say(out, format!("wrote {}", a.out.display()))
}

fn cmd_eval(a: &EvalArgs, out: &mut dyn Write) -> Result<()> {
    echo(out, "eval", a)?;
    let model = load_checkpoint(&a.model)?;
    let mc = model.config().clone();
    let present = load_manifest(&a.manifest)?;
    if present.vocabulary.len() != mc.num_classes {
        return Err(Error::Data(format!(
            "model has {} classes but the manifest has {} ({:?})",
            mc.num_classes,
            present.vocabulary.len(),
            present.vocabulary.names()
        )));
    }
    let vocab = ClassVocabulary::for_count(mc.num_classes)?;
    let manifest = present.with_vocabulary(&vocab)?;
    let split = match a.split {
        SplitArg::Auto => manifest.has_splits().then_some(Split::Test),
        SplitArg::Train => Some(Split::Train),
        SplitArg::Test => Some(Split::Test),
        SplitArg::All => None,
    };
    let samples = load_samples(&manifest, split, mc.input_size)?;
    if samples.is_empty() {
        return Err(Error::Data("no rows selected for evaluation".into()));
    }
    say(out, format!("evaluating {} images ({})", samples.len(), split.map_or("all", Split::as_str)))?;

    let probs: Vec<Vec<f64>> = samples
        .iter()
        .map(|s| Ok(model.forward_classify(&s.image)?.data().iter().map(|&p| p as f64).collect()))
        .collect::<Result<_>>()?;
    let actual: Vec<usize> = samples.iter().map(|s| s.label_index).collect();
    let predicted: Vec<usize> = probs
        .iter()
        .map(|p| Tensor::new(&[p.len()], p.clone()).expect("1-d").argmax())
        .collect();
    let names = vocab.names().to_vec();
    let cm = confusion_from_predictions(&actual, &predicted, &names)?;
    let (roc, roc_warnings) = one_vs_rest_roc(&probs, &actual, &names)?;
    let mut report = MetricsReport::new(mc.arch.to_string(), &cm, roc)?;
    report.warnings.extend(roc_warnings);

    say(out, cm.render())?;
    say(out, report.render_table())?;
    for w in &report.warnings {
        say(out, format!("warning: {w}"))?;
    }
    if let Some(p) = &a.report {
        write_file(p, report.to_json())?;
    }
    if let Some(p) = &a.roc {
        write_file(p, report.roc_csv())?;
    }
    Ok(())
}

fn cmd_predict(a: &PredictArgs, out: &mut dyn Write) -> Result<()> {
    echo(out, "predict", a)?;
    let model = load_checkpoint(&a.model)?;
    let mc = model.config().clone();
    if mc.input_channels != 1 {
        return Err(Error::Data(format!("model expects {} input channels; images decode to 1", mc.input_channels)));
    }
    let vocab = ClassVocabulary::for_count(mc.num_classes)?;
    let image = decode_and_resize(&a.image, mc.input_size)?;
    let probs = model.forward_classify(&image)?;
    for (name, p) in vocab.names().iter().zip(probs.data()) {
        say(out, format!("{name} {}", round4(*p as f64)))?;
    }
    let top = probs.argmax();
    say(out, format!("prediction: {}", vocab.names()[top]))?;

    if a.heatmap.is_none() && a.heatmap_csv.is_none() {
        return Ok(());
    }
    let class = match &a.class {
        Some(name) => vocab
            .index_of(name)
            .ok_or_else(|| Error::Usage(format!("unknown class {name:?}; known {:?}", vocab.names())))?,
        None => top,
    };
    let map = match a.method {
        MethodArg::Gradcam => gradcam(&model, &image, class)?,
        MethodArg::Occlusion => occlusion_map(&model, &image, class, a.patch, a.stride, None)?,
    };
    if let Some(p) = &a.heatmap_csv {
        write_heatmap_csv(&map, p)?;
    }
    if let Some(p) = &a.heatmap {
        let (gray, w, h) = decode_gray(&a.image)?;
        let s = mc.input_size;
        let values = resize_bilinear(map.values.data(), s, s, w, h)
            .into_iter()
            .map(|v| v.clamp(0.0, 1.0))
            .collect();
        let full = HeatMap { values: Tensor::new(&[h, w], values)?, ..map };
        render_heatmap(&full, &Tensor::new(&[h, w], gray)?, p)?;
        say(out, format!("wrote {} ({w}x{h})", p.display()))?;
    }
    Ok(())
}

fn cmd_synth(a: &SynthArgs, out: &mut dyn Write) -> Result<()> {
    echo(out, "synth", a)?;
    fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    let ds = generate_synthetic(&a.out, a.per_class, a.size, a.classes, a.seed)?;
    say(out, format!("images: {}", histogram_line(&ds.manifest.histogram())))?;
    say(out, format!("wrote {} and {}", ds.manifest_path.display(), ds.features_path.display()))
}

fn cmd_inspect(a: &InspectArgs, out: &mut dyn Write) -> Result<()> {
    let cfg = match &a.model {
        Some(p) => load_checkpoint(p)?.config().clone(),
        None => {
            let arch = Arch::from(a.arch);
            ModelConfig {
                arch,
                input_size: a.input_size,
                input_channels: 1,
                base_channels: a.base_channels,
                depth: a.depth,
                num_classes: a.classes,
                u_passes: arch.default_passes(),
                seed: 0,
            }
        }
    };
    echo(out, "inspect", &cfg)?;
    cfg.validate()?;
    let shapes = stage_shapes(&cfg);
    for (i, (c, h, w)) in shapes.iter().enumerate() {
        let label = if i + 1 == shapes.len() { "bottleneck".to_string() } else { format!("level {i}") };
        say(out, format!("{label}: ({c}, {h}, {w})"))?;
    }
    if cfg.depth > 0 {
        let concat = cfg.bottleneck_channels() + cfg.level_channels(cfg.depth - 1);
        say(out, format!("first decoder concat: {concat} channels"))?;
    }
    let inv = parameter_inventory(&cfg);
    let count: usize = inv.iter().map(|(_, s)| s.iter().product::<usize>()).sum();
    say(out, format!("u passes: {}", cfg.u_passes))?;
    say(out, format!("parameters: {count}"))?;
    say(out, format!("tensors: {}", inv.len()))
}
