//! Command-line interface: dataset generation, training, evaluation, paired
//! comparison, saliency export, and architecture inspection.
//!
//! Every knob can come from a flag or from a plain-text `key=value` config
//! file (`#` comments allowed); flags take precedence over the file. The seed
//! additionally honors the `RUNSEED` environment variable, with precedence
//! flag > env > file > built-in default 42. Each command that writes files
//! echoes its fully-resolved configuration into the output directory as
//! `config.txt` (paths to inputs included, the output path itself excluded so
//! reruns into different directories stay byte-identical).
//!
//! Exit codes: 0 success, 1 usage error, 2 data/file error, 3 numeric error.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use crate::data::pgm::write_pgm;
use crate::data::phantom::generate_dataset;
use crate::data::{Dataset, Difficulty, Split};
use crate::error::{AruError, Result};
use crate::eval::evaluate;
use crate::nn::{ArchKind, Network, NetworkConfig};
use crate::saliency::{
    attention_coefficient_maps, concentration_count, concentration_index, default_layer, grad_cam,
    overlay,
};
use crate::stats::{compare_models, render_comparison_table};
use crate::train::{train, write_history, TrainConfig};

#[derive(Parser)]
#[command(
    name = "aru",
    version,
    about = "Attention-ResUNet segmentation workbench",
    after_help = "Seeds resolve as: --seed flag, then RUNSEED env var, then config file, then 42."
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic ellipse-phantom dataset (80/20 train/val split)
    GenerateData(GenerateArgs),
    /// Train a model and write checkpoint.bin + history.csv
    Train(TrainArgs),
    /// Evaluate a checkpoint: metrics.csv, summary.json, roc.csv, pr.csv
    Eval(EvalArgs),
    /// Paired statistics between two eval reports (per-sample Dice)
    Compare(CompareArgs),
    /// Grad-CAM maps, overlays, and concentration indices for a checkpoint
    Saliency(SaliencyArgs),
    /// Print parameter and FLOP counts for an architecture
    Inspect(InspectArgs),
}

#[derive(Args)]
struct GenerateArgs {
    /// Number of samples to generate (config key: n)
    #[arg(long)]
    n: Option<usize>,
    /// Square image side in pixels [default: 256] (config key: size)
    #[arg(long)]
    size: Option<usize>,
    /// Phantom difficulty: easy | hard [default: easy] (config key: difficulty)
    #[arg(long)]
    difficulty: Option<String>,
    /// RNG seed [default: 42] (config key: seed)
    #[arg(long)]
    seed: Option<u64>,
    /// Output dataset directory
    #[arg(long)]
    out: PathBuf,
    /// key=value config file supplying defaults for the flags above
    #[arg(long)]
    config: Option<PathBuf>,
    /// Write into an existing non-empty output directory
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct TrainArgs {
    /// unet | resunet | attunet | attresunet [default: attresunet]
    #[arg(long)]
    arch: Option<String>,
    /// Dataset directory (from generate-data)
    #[arg(long)]
    data: PathBuf,
    /// Training epochs [default: 25]
    #[arg(long)]
    epochs: Option<usize>,
    /// Adam learning rate [default: 1e-4]
    #[arg(long)]
    lr: Option<f64>,
    /// Batch size [default: 8]
    #[arg(long)]
    batch: Option<usize>,
    /// RNG seed for init, shuffling, augmentation [default: 42]
    #[arg(long)]
    seed: Option<u64>,
    /// Validate every N epochs [default: 5]
    #[arg(long)]
    val_every: Option<usize>,
    /// Validation rounds without improvement before stopping [default: 3]
    #[arg(long)]
    patience: Option<usize>,
    /// Disable training-time augmentation (config key: augment=false)
    #[arg(long)]
    no_augment: bool,
    /// Encoder channel ladder [default: 64,128,256,512]
    #[arg(long)]
    channels: Option<String>,
    /// Bottleneck channels [default: 1024]
    #[arg(long)]
    bottleneck: Option<usize>,
    /// Output directory for checkpoint.bin, history.csv, config.txt
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct EvalArgs {
    /// Checkpoint file written by train
    #[arg(long)]
    checkpoint: PathBuf,
    /// Dataset directory
    #[arg(long)]
    data: PathBuf,
    /// Split to evaluate: train | val | test [default: val]
    #[arg(long)]
    split: Option<String>,
    /// Binarization threshold [default: 0.5]
    #[arg(long)]
    threshold: Option<f64>,
    /// Forward batch size [default: 8]
    #[arg(long)]
    batch: Option<usize>,
    /// Output directory for the report files
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct CompareArgs {
    /// metrics.csv from the first model's eval run
    #[arg(long)]
    report_a: PathBuf,
    /// metrics.csv from the second model's eval run
    #[arg(long)]
    report_b: PathBuf,
    /// Label for the first model [default: model_a]
    #[arg(long)]
    name_a: Option<String>,
    /// Label for the second model [default: model_b]
    #[arg(long)]
    name_b: Option<String>,
    /// Output directory for comparison.json and table.txt
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct SaliencyArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Split to visualize [default: val]
    #[arg(long)]
    split: Option<String>,
    /// Decoder stage for Grad-CAM: d1..dL [default: finest stage]
    #[arg(long)]
    layer: Option<String>,
    /// Overlay/count threshold on the normalized map [default: 0.5]
    #[arg(long)]
    threshold: Option<f64>,
    /// Process at most this many samples [default: all]
    #[arg(long)]
    max_samples: Option<usize>,
    /// Also report the count-based concentration index
    #[arg(long)]
    count_index: bool,
    /// Also export attention-gate coefficient maps (gated archs only)
    #[arg(long)]
    alphas: bool,
    /// Output directory (maps/, overlays/, metrics.csv)
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct InspectArgs {
    /// unet | resunet | attunet | attresunet [default: attresunet]
    #[arg(long)]
    arch: Option<String>,
    /// Square input side in pixels [default: 256]
    #[arg(long)]
    input_size: Option<usize>,
    /// Encoder channel ladder [default: 64,128,256,512]
    #[arg(long)]
    channels: Option<String>,
    /// Bottleneck channels [default: 1024]
    #[arg(long)]
    bottleneck: Option<usize>,
}

/// Entry point for the binary: parses `std::env` state and maps errors to
/// exit codes (0 ok, 1 usage, 2 data, 3 numeric).
pub fn run() -> i32 {
    let args: Vec<String> = std::env::args().collect();
    let env_seed = std::env::var("RUNSEED").ok();
    match run_from(args, env_seed.as_deref()) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Testable dispatch: `args` as for `std::env::args` (program name first),
/// `env_seed` standing in for the RUNSEED variable.
pub fn run_from(args: Vec<String>, env_seed: Option<&str>) -> Result<()> {
    let cli = match Cli::try_parse_from(&args) {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            print!("{e}");
            return Ok(());
        }
        Err(e) => return Err(AruError::InvalidArgument(e.to_string())),
    };
    match cli.cmd {
        Cmd::GenerateData(a) => cmd_generate_data(a, env_seed),
        Cmd::Train(a) => cmd_train(a, env_seed),
        Cmd::Eval(a) => cmd_eval(a),
        Cmd::Compare(a) => cmd_compare(a),
        Cmd::Saliency(a) => cmd_saliency(a),
        Cmd::Inspect(a) => cmd_inspect(a),
    }
}

/// Key=value file with `#` comments. Keys are consumed as commands resolve
/// their settings; anything left over is rejected as unknown.
struct FileCfg {
    entries: BTreeMap<String, String>,
}

impl FileCfg {
    fn load(path: Option<&Path>) -> Result<FileCfg> {
        let mut entries = BTreeMap::new();
        if let Some(path) = path {
            let text = fs::read_to_string(path)
                .map_err(|e| AruError::Data(format!("config file {}: {e}", path.display())))?;
            for (lineno, raw) in text.lines().enumerate() {
                let line = raw.trim();
                if line.is_empty() || line.starts_with('#') {
                    continue;
                }
                let (k, v) = line.split_once('=').ok_or_else(|| {
                    AruError::InvalidArgument(format!(
                        "config file {} line {}: expected key=value, got {raw:?}",
                        path.display(),
                        lineno + 1
                    ))
                })?;
                entries.insert(k.trim().to_string(), v.trim().to_string());
            }
        }
        Ok(FileCfg { entries })
    }

    fn take<T: FromStr>(&mut self, key: &str) -> Result<Option<T>> {
        match self.entries.remove(key) {
            None => Ok(None),
            Some(raw) => raw.parse::<T>().map(Some).map_err(|_| {
                AruError::InvalidArgument(format!("config key {key}: invalid value {raw:?}"))
            }),
        }
    }

    fn take_bool(&mut self, key: &str) -> Result<Option<bool>> {
        match self.entries.remove(key) {
            None => Ok(None),
            Some(raw) => match raw.as_str() {
                "true" | "1" | "yes" => Ok(Some(true)),
                "false" | "0" | "no" => Ok(Some(false)),
                _ => Err(AruError::InvalidArgument(format!(
                    "config key {key}: expected true/false, got {raw:?}"
                ))),
            },
        }
    }

    /// All recognized keys must have been consumed by now.
    fn finish(self, command: &str) -> Result<()> {
        if self.entries.is_empty() {
            return Ok(());
        }
        let keys: Vec<&str> = self.entries.keys().map(String::as_str).collect();
        Err(AruError::InvalidArgument(format!(
            "unknown config keys for {command}: {}",
            keys.join(", ")
        )))
    }
}

fn resolve_seed(flag: Option<u64>, env: Option<&str>, file: Option<u64>) -> Result<u64> {
    if let Some(s) = flag {
        return Ok(s);
    }
    if let Some(raw) = env {
        return raw.parse().map_err(|_| {
            AruError::InvalidArgument(format!("RUNSEED must be an unsigned integer, got {raw:?}"))
        });
    }
    Ok(file.unwrap_or(42))
}

fn parse_channels(raw: &str) -> Result<Vec<usize>> {
    let parsed: std::result::Result<Vec<usize>, _> =
        raw.split(',').map(|p| p.trim().parse::<usize>()).collect();
    match parsed {
        Ok(v) if !v.is_empty() && v.iter().all(|&c| c > 0) => Ok(v),
        _ => Err(AruError::InvalidArgument(format!(
            "channels must be a comma-separated list of positive integers, got {raw:?}"
        ))),
    }
}

/// Create the output directory, refusing to touch a non-empty one without
/// --force.
fn prepare_out(dir: &Path, force: bool) -> Result<()> {
    if dir.exists() {
        let occupied = fs::read_dir(dir)
            .map_err(|e| AruError::Data(format!("output directory {}: {e}", dir.display())))?
            .next()
            .is_some();
        if occupied && !force {
            return Err(AruError::InvalidArgument(format!(
                "output directory {} exists and is not empty (pass --force to reuse)",
                dir.display()
            )));
        }
    }
    fs::create_dir_all(dir)?;
    Ok(())
}

/// Echo the fully-resolved settings into `<out>/config.txt`.
fn write_echo(out: &Path, command: &str, entries: &[(&str, String)]) -> Result<()> {
    let mut text = format!("# resolved configuration: aru {command}\n");
    let mut sorted: Vec<&(&str, String)> = entries.iter().collect();
    sorted.sort_by_key(|(k, _)| *k);
    for (k, v) in sorted {
        let _ = writeln!(text, "{k}={v}");
    }
    fs::write(out.join("config.txt"), text)?;
    Ok(())
}

fn cmd_generate_data(args: GenerateArgs, env_seed: Option<&str>) -> Result<()> {
    let mut file = FileCfg::load(args.config.as_deref())?;
    let n = args
        .n
        .or(file.take("n")?)
        .ok_or_else(|| AruError::InvalidArgument("--n is required (flag or config key)".into()))?;
    let size = args.size.or(file.take("size")?).unwrap_or(256);
    let difficulty = args
        .difficulty
        .or(file.take("difficulty")?)
        .unwrap_or_else(|| "easy".into());
    let difficulty = Difficulty::parse(&difficulty)?;
    let seed = resolve_seed(args.seed, env_seed, file.take("seed")?)?;
    file.finish("generate-data")?;

    let dataset = generate_dataset(n, (size, size), difficulty, seed)?;
    prepare_out(&args.out, args.force)?;
    write_echo(
        &args.out,
        "generate-data",
        &[
            ("n", n.to_string()),
            ("size", size.to_string()),
            ("difficulty", difficulty.name().into()),
            ("seed", seed.to_string()),
        ],
    )?;
    dataset.save_dir(&args.out)?;

    let n_train = dataset.split(Split::Train).len();
    let n_val = dataset.split(Split::Val).len();
    let mean_fg = dataset
        .samples
        .iter()
        .map(|s| s.foreground_fraction())
        .sum::<f64>()
        / dataset.samples.len() as f64;
    println!(
        "wrote {} samples ({n_train} train / {n_val} val), {size}x{size} {}, mean foreground {:.1}% -> {}",
        dataset.samples.len(),
        difficulty.name(),
        100.0 * mean_fg,
        args.out.display()
    );
    Ok(())
}

fn cmd_train(args: TrainArgs, env_seed: Option<&str>) -> Result<()> {
    let mut file = FileCfg::load(args.config.as_deref())?;
    let arch = args
        .arch
        .or(file.take("arch")?)
        .unwrap_or_else(|| "attresunet".into());
    let kind = ArchKind::parse(&arch)?;
    let epochs = args.epochs.or(file.take("epochs")?).unwrap_or(25);
    let lr = args.lr.or(file.take("lr")?).unwrap_or(1e-4);
    let batch = args.batch.or(file.take("batch")?).unwrap_or(8);
    let val_every = args.val_every.or(file.take("val_every")?).unwrap_or(5);
    let patience = args.patience.or(file.take("patience")?).unwrap_or(3);
    let augment = if args.no_augment {
        false
    } else {
        file.take_bool("augment")?.unwrap_or(true)
    };
    let channels = match args.channels.or(file.take("channels")?) {
        Some(raw) => parse_channels(&raw)?,
        None => vec![64, 128, 256, 512],
    };
    let bottleneck = args
        .bottleneck
        .or(file.take("bottleneck")?)
        .unwrap_or_else(|| channels.last().unwrap() * 2);
    let seed = resolve_seed(args.seed, env_seed, file.take("seed")?)?;
    file.finish("train")?;

    let dataset = Dataset::load_dir(&args.data)?;
    let config = NetworkConfig {
        encoder_channels: channels.clone(),
        bottleneck_channels: bottleneck,
        input_size: dataset.size,
        ..NetworkConfig::for_arch(kind)
    };
    config.validate()?;

    prepare_out(&args.out, args.force)?;
    write_echo(
        &args.out,
        "train",
        &[
            ("arch", kind.name().into()),
            ("data", args.data.display().to_string()),
            ("epochs", epochs.to_string()),
            ("lr", format!("{lr}")),
            ("batch", batch.to_string()),
            ("val_every", val_every.to_string()),
            ("patience", patience.to_string()),
            ("augment", augment.to_string()),
            (
                "channels",
                channels
                    .iter()
                    .map(usize::to_string)
                    .collect::<Vec<_>>()
                    .join(","),
            ),
            ("bottleneck", bottleneck.to_string()),
            ("seed", seed.to_string()),
        ],
    )?;

    let mut net = Network::<f32>::build(config, seed)?;
    let tc = TrainConfig {
        epochs,
        lr,
        batch_size: batch,
        val_every,
        patience,
        seed,
        augment,
    };
    let ckpt = args.out.join("checkpoint.bin");
    let outcome = train(&mut net, &dataset, &tc, Some(&ckpt), |r| {
        match r.val_dice {
            Some(d) => println!(
                "epoch {:>3}/{epochs}  train_loss {:.4}  val_dice {:.4}",
                r.epoch, r.train_loss, d
            ),
            None => println!(
                "epoch {:>3}/{epochs}  train_loss {:.4}",
                r.epoch, r.train_loss
            ),
        };
    })?;
    write_history(&args.out.join("history.csv"), &outcome.history)?;
    println!(
        "best val dice {:.4} at epoch {}{}; checkpoint -> {}",
        outcome.best_val_dice,
        outcome.best_epoch,
        if outcome.stopped_early {
            " (stopped early)"
        } else {
            ""
        },
        ckpt.display()
    );
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let mut file = FileCfg::load(args.config.as_deref())?;
    let split = args
        .split
        .or(file.take("split")?)
        .unwrap_or_else(|| "val".into());
    let split = Split::parse(&split).map_err(|e| AruError::InvalidArgument(e.to_string()))?;
    let threshold = args.threshold.or(file.take("threshold")?).unwrap_or(0.5);
    let batch = args.batch.or(file.take("batch")?).unwrap_or(8);
    file.finish("eval")?;
    if !(0.0..=1.0).contains(&threshold) {
        return Err(AruError::InvalidArgument(format!(
            "threshold must lie in [0,1], got {threshold}"
        )));
    }

    let (mut net, _) = Network::<f32>::load_checkpoint(&args.checkpoint)?;
    let dataset = Dataset::load_dir(&args.data)?;
    let report = evaluate(&mut net, &dataset, split, threshold, batch)?;

    prepare_out(&args.out, args.force)?;
    write_echo(
        &args.out,
        "eval",
        &[
            ("checkpoint", args.checkpoint.display().to_string()),
            ("data", args.data.display().to_string()),
            ("split", split.name().into()),
            ("threshold", format!("{threshold}")),
            ("batch", batch.to_string()),
        ],
    )?;
    report.write(&args.out)?;

    let dice = &report.aggregates["dice"];
    print!(
        "{} samples on {}: dice {:.4} +/- {:.4} (median {:.4})",
        dice.n,
        split.name(),
        dice.mean,
        dice.sd,
        dice.median
    );
    if let Some(hd) = report.aggregates.get("hd_px") {
        print!(", hd {:.2} px", hd.mean);
    }
    if let Some(auc) = report.auc_roc {
        print!(", auc_roc {auc:.4}");
    }
    println!(" -> {}", args.out.display());
    Ok(())
}

/// Pull (id, dice) pairs out of an eval metrics.csv.
fn read_scores(path: &Path) -> Result<Vec<(String, f64)>> {
    let text = fs::read_to_string(path)
        .map_err(|e| AruError::Data(format!("report {}: {e}", path.display())))?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| AruError::Data(format!("report {} is empty", path.display())))?;
    if !header.starts_with("id,dice") {
        return Err(AruError::Data(format!(
            "report {} does not look like an eval metrics.csv (header {header:?})",
            path.display()
        )));
    }
    let mut scores = Vec::new();
    for line in lines.filter(|l| !l.trim().is_empty()) {
        let mut fields = line.split(',');
        let id = fields
            .next()
            .ok_or_else(|| AruError::Data(format!("malformed row {line:?}")))?;
        let dice: f64 = fields
            .next()
            .and_then(|f| f.parse().ok())
            .ok_or_else(|| AruError::Data(format!("malformed dice in row {line:?}")))?;
        scores.push((id.to_string(), dice));
    }
    Ok(scores)
}

fn cmd_compare(args: CompareArgs) -> Result<()> {
    let mut file = FileCfg::load(args.config.as_deref())?;
    let name_a = args
        .name_a
        .or(file.take("name_a")?)
        .unwrap_or_else(|| "model_a".into());
    let name_b = args
        .name_b
        .or(file.take("name_b")?)
        .unwrap_or_else(|| "model_b".into());
    file.finish("compare")?;

    let scores_a = read_scores(&args.report_a)?;
    let scores_b = read_scores(&args.report_b)?;
    let result = compare_models(&name_a, &scores_a, &name_b, &scores_b)?;

    prepare_out(&args.out, args.force)?;
    write_echo(
        &args.out,
        "compare",
        &[
            ("report_a", args.report_a.display().to_string()),
            ("report_b", args.report_b.display().to_string()),
            ("name_a", name_a.clone()),
            ("name_b", name_b.clone()),
        ],
    )?;
    let json = serde_json::to_string_pretty(&result)
        .map_err(|e| AruError::Format(format!("comparison serialization: {e}")))?;
    fs::write(args.out.join("comparison.json"), json)?;
    let table = render_comparison_table(std::slice::from_ref(&result));
    fs::write(args.out.join("table.txt"), &table)?;
    print!("{table}");
    Ok(())
}

fn cmd_saliency(args: SaliencyArgs) -> Result<()> {
    let mut file = FileCfg::load(args.config.as_deref())?;
    let split = args
        .split
        .or(file.take("split")?)
        .unwrap_or_else(|| "val".into());
    let split = Split::parse(&split).map_err(|e| AruError::InvalidArgument(e.to_string()))?;
    let threshold = args.threshold.or(file.take("threshold")?).unwrap_or(0.5);
    let max_samples = args.max_samples.or(file.take("max_samples")?);
    let count_index = args.count_index || file.take_bool("count_index")?.unwrap_or(false);
    let alphas = args.alphas || file.take_bool("alphas")?.unwrap_or(false);
    let layer_flag = args.layer.or(file.take("layer")?);
    file.finish("saliency")?;

    let (mut net, _) = Network::<f32>::load_checkpoint(&args.checkpoint)?;
    let dataset = Dataset::load_dir(&args.data)?;
    if dataset.size != net.config.input_size {
        return Err(AruError::Data(format!(
            "dataset is {}x{} but the checkpoint expects {}x{}",
            dataset.size.0, dataset.size.1, net.config.input_size.0, net.config.input_size.1
        )));
    }
    let layer = layer_flag.unwrap_or_else(|| default_layer(net.config.levels()));
    if alphas && net.num_gates() == 0 {
        return Err(AruError::Unsupported(format!(
            "--alphas requires attention gates; {} has none",
            net.config.arch_kind().name()
        )));
    }
    let samples = dataset.split(split);
    if samples.is_empty() {
        return Err(AruError::Data(format!("no samples in split {split}")));
    }
    let limit = max_samples.unwrap_or(samples.len());

    prepare_out(&args.out, args.force)?;
    write_echo(
        &args.out,
        "saliency",
        &[
            ("checkpoint", args.checkpoint.display().to_string()),
            ("data", args.data.display().to_string()),
            ("split", split.name().into()),
            ("layer", layer.clone()),
            ("threshold", format!("{threshold}")),
            ("count_index", count_index.to_string()),
            ("alphas", alphas.to_string()),
            (
                "max_samples",
                max_samples.map_or("all".into(), |m| m.to_string()),
            ),
        ],
    )?;
    fs::create_dir_all(args.out.join("maps"))?;
    fs::create_dir_all(args.out.join("overlays"))?;
    if alphas {
        fs::create_dir_all(args.out.join("alphas"))?;
    }

    let (h, w) = dataset.size;
    let quantize = |values: &[f64]| -> Vec<u8> {
        values
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect()
    };
    let mut csv = String::from(if count_index {
        "id,layer,concentration_index,concentration_count,all_zero\n"
    } else {
        "id,layer,concentration_index,all_zero\n"
    });
    let mut indices = Vec::new();
    for s in samples.iter().take(limit) {
        let map = grad_cam(&mut net, &s.image, &layer)?;
        write_pgm(
            &args.out.join("maps").join(format!("{}.pgm", s.id)),
            w,
            h,
            &quantize(&map.values),
        )?;
        write_pgm(
            &args.out.join("overlays").join(format!("{}.pgm", s.id)),
            w,
            h,
            &overlay(&s.image, &map, threshold)?,
        )?;
        let ci = concentration_index(&map, &s.mask)?;
        if let Some(v) = ci {
            indices.push(v);
        }
        let ci_s = ci.map_or(String::new(), |v| format!("{v:.6}"));
        if count_index {
            let cc = concentration_count(&map, &s.mask, threshold)?;
            let cc_s = cc.map_or(String::new(), |v| format!("{v:.6}"));
            let _ = writeln!(csv, "{},{},{},{},{}", s.id, map.layer, ci_s, cc_s, map.all_zero);
        } else {
            let _ = writeln!(csv, "{},{},{},{}", s.id, map.layer, ci_s, map.all_zero);
        }
        if alphas {
            for alpha in attention_coefficient_maps(&mut net, &s.image)? {
                write_pgm(
                    &args
                        .out
                        .join("alphas")
                        .join(format!("{}_{}.pgm", s.id, alpha.layer)),
                    w,
                    h,
                    &quantize(&alpha.values),
                )?;
            }
        }
    }
    fs::write(args.out.join("metrics.csv"), csv)?;

    let n_done = samples.len().min(limit);
    if indices.is_empty() {
        println!("{n_done} samples, all saliency maps were zero -> {}", args.out.display());
    } else {
        println!(
            "{n_done} samples at layer {layer}, mean concentration index {:.4} -> {}",
            indices.iter().sum::<f64>() / indices.len() as f64,
            args.out.display()
        );
    }
    Ok(())
}

fn cmd_inspect(args: InspectArgs) -> Result<()> {
    let arch = args.arch.unwrap_or_else(|| "attresunet".into());
    let kind = ArchKind::parse(&arch)?;
    let side = args.input_size.unwrap_or(256);
    let default_ladder = args.channels.is_none() && args.bottleneck.is_none();
    let channels = match args.channels {
        Some(raw) => parse_channels(&raw)?,
        None => vec![64, 128, 256, 512],
    };
    let bottleneck = args
        .bottleneck
        .unwrap_or_else(|| channels.last().unwrap() * 2);

    let config = NetworkConfig {
        encoder_channels: channels,
        bottleneck_channels: bottleneck,
        input_size: (side, side),
        ..NetworkConfig::for_arch(kind)
    };
    config.validate()?;
    let net = Network::<f32>::build(config, 0)?;
    let params = net.count_parameters();
    let flops = net.count_flops((side, side));

    println!("{} at {side}x{side}", kind.name());
    println!("parameters: {} total", params.total);
    for (module, count) in &params.by_module {
        println!("  {module:<12} {count:>12}");
    }
    println!(
        "flops per image: {flops} ({:.2} GFLOPs, multiply-adds counted as 2)",
        flops as f64 / 1e9
    );
    // Published reference figures for the flagship variant at 256x256:
    // ~14.7M parameters and ~45 GFLOPs per image.
    if kind == ArchKind::Attresunet && side == 256 && default_ladder {
        let dp = 100.0 * (params.total as f64 - 14.7e6) / 14.7e6;
        let df = 100.0 * (flops as f64 - 45e9) / 45e9;
        println!(
            "published reference figures: ~14.7M parameters ({dp:+.1}% computed vs reference), ~45 GFLOPs ({df:+.1}%)"
        );
    } else {
        println!(
            "published reference figures of ~14.7M parameters / ~45 GFLOPs apply to attresunet at 256x256 with the default ladder"
        );
    }
    Ok(())
}
