//! `nucleiseg`: batch frontend for stacking, target generation,
//! post-processing, evaluation, augmentation and loss self-checks.
//!
//! Exit status is 0 on success, 1 on a runtime failure and 2 on a usage
//! error. Results go to files or standard output; diagnostics go to standard
//! error.

mod config;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use nucleiseg::augment::Sample;
use nucleiseg::batch::{augment_batch, eval_batch, postproc_batch, stack_batch, targets_batch, Workers};
use nucleiseg::gradcheck::{check_loss, LossKind, FD_TOLERANCE};
use nucleiseg::hover::PredictionMaps;
use nucleiseg::npy::{
    images_from_array, images_to_array, label_array_to_maps, load_dataset, maps_to_label_array, read_npy_file,
    write_npy_file, NpyArray, NpyData,
};
use nucleiseg::raster::NUM_CLASS_SLOTS;
use nucleiseg::{HoVerMaps, Plane};

use config::CliConfig;

#[derive(Debug, Parser)]
#[command(name = "nucleiseg", version, about = "Nuclei segmentation pipeline tools")]
struct Cli {
    /// TOML file with [stack], [augment], [postproc] and [metrics] sections.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Base seed for augmentation and loss self-checks.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Worker threads (defaults to the available parallelism).
    #[arg(long, global = true, value_name = "N", value_parser = clap::value_parser!(u64).range(1..))]
    workers: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// (N,H,W,3) RGB tiles to the stacked (N,H,W,C) network input.
    Stack {
        #[arg(long)]
        images: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// (N,H,W,2) labels to hv.npy (N,H,W,2 <f4) and np.npy (N,H,W |u1) in a directory.
    Targets {
        #[arg(long)]
        labels: PathBuf,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
    /// Prediction maps to an (N,H,W,2) instance/class label array.
    Postproc {
        /// (N,H,W) or (N,H,W,1) nuclear-pixel probabilities.
        #[arg(long = "np")]
        np_prob: PathBuf,
        /// (N,H,W,2) horizontal and vertical maps.
        #[arg(long)]
        hv: PathBuf,
        /// Optional (N,H,W,7) class probabilities.
        #[arg(long)]
        tp: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Scores predicted labels against ground truth.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        /// Also write the report to this file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Writes augmented images.npy and labels.npy to a directory.
    Augment {
        #[arg(long)]
        images: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        /// Stream index of the first sample.
        #[arg(long, default_value_t = 0)]
        first_index: u64,
    },
    /// Compares analytic loss gradients with finite differences.
    LossCheck {
        /// Random cases per loss.
        #[arg(long, default_value_t = 100)]
        seeds: u64,
    },
}

fn read(path: &Path) -> Result<NpyArray> {
    read_npy_file(path).with_context(|| format!("reading {}", path.display()))
}

fn write(path: &Path, array: &NpyArray) -> Result<()> {
    write_npy_file(path, array).with_context(|| format!("writing {}", path.display()))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn stack(cfg: &CliConfig, workers: &Workers, images: &Path, out: &Path) -> Result<()> {
    let input = read(images)?;
    let tiles = images_from_array(&input).with_context(|| format!("in {}", images.display()))?;
    eprintln!("stack: {} tiles", tiles.len());
    let stacked = stack_batch(workers, &tiles, &cfg.stack).with_context(|| format!("in {}", images.display()))?;
    let array = if stacked.is_empty() {
        let s = input.shape();
        NpyArray::new(vec![0, s[1], s[2], cfg.stack.channel_order.len()], NpyData::U8(Vec::new()))?
    } else {
        images_to_array(&stacked)?
    };
    write(out, &array)
}

fn targets(workers: &Workers, labels: &Path, out: &Path) -> Result<()> {
    let array = read(labels)?;
    let maps = label_array_to_maps(&array).with_context(|| format!("in {}", labels.display()))?;
    eprintln!("targets: {} samples", maps.len());
    let instances: Vec<_> = maps.into_iter().map(|(inst, _)| inst).collect();
    let computed = targets_batch::<f32>(workers, &instances)?;
    let (n, h, w) = (array.shape()[0], array.shape()[1], array.shape()[2]);
    let mut hv = Vec::with_capacity(n * h * w * 2);
    let mut np = Vec::with_capacity(n * h * w);
    for (maps, mask) in &computed {
        for (&a, &b) in maps.h().iter().zip(maps.v()) {
            hv.push(a);
            hv.push(b);
        }
        np.extend_from_slice(mask.data());
    }
    create_dir(out)?;
    write(&out.join("hv.npy"), &NpyArray::new(vec![n, h, w, 2], NpyData::F32(hv))?)?;
    write(&out.join("np.npy"), &NpyArray::new(vec![n, h, w], NpyData::U8(np))?)
}

fn prediction_maps(np_path: &Path, hv_path: &Path, tp_path: Option<&Path>) -> Result<Vec<PredictionMaps<f64>>> {
    let np = read(np_path)?;
    let (n, h, w) = match *np.shape() {
        [n, h, w] | [n, h, w, 1] => (n, h, w),
        ref s => bail!("{}: expected (N,H,W) probabilities, got {s:?}", np_path.display()),
    };
    let hv = read(hv_path)?;
    if hv.shape() != [n, h, w, 2] {
        bail!("{}: expected shape {:?}, got {:?}", hv_path.display(), [n, h, w, 2], hv.shape());
    }
    let tp = match tp_path {
        Some(p) => {
            let tp = read(p)?;
            if tp.shape() != [n, h, w, NUM_CLASS_SLOTS] {
                bail!("{}: expected shape {:?}, got {:?}", p.display(), [n, h, w, NUM_CLASS_SLOTS], tp.shape());
            }
            Some(tp.data().to_f64())
        }
        None => None,
    };
    let (np, hv) = (np.data().to_f64(), hv.data().to_f64());
    let px = h * w;
    (0..n)
        .map(|i| {
            let hv_i = &hv[i * 2 * px..(i + 1) * 2 * px];
            let maps = PredictionMaps {
                np_prob: Plane::new(h, w, np[i * px..(i + 1) * px].to_vec())?,
                hv: HoVerMaps::new(
                    h,
                    w,
                    hv_i.iter().step_by(2).copied().collect(),
                    hv_i.iter().skip(1).step_by(2).copied().collect(),
                )?,
                tp_prob: tp.as_ref().map(|t| t[i * px * NUM_CLASS_SLOTS..(i + 1) * px * NUM_CLASS_SLOTS].to_vec()),
            };
            maps.validate()?;
            Ok(maps)
        })
        .collect::<nucleiseg::Result<Vec<_>>>()
        .context("invalid prediction maps")
}

fn postproc(cfg: &CliConfig, workers: &Workers, np: &Path, hv: &Path, tp: Option<&Path>, out: &Path) -> Result<()> {
    let maps = prediction_maps(np, hv, tp)?;
    eprintln!("postproc: {} tiles", maps.len());
    let labels = postproc_batch(workers, &maps, &cfg.postproc)?;
    let mut array = maps_to_label_array(&labels)?;
    if labels.is_empty() {
        let s = read(np)?.shape().to_vec();
        array = NpyArray::new(vec![0, s[1], s[2], 2], NpyData::I32(Vec::new()))?;
    }
    write(out, &array)
}

fn eval(cfg: &CliConfig, workers: &Workers, pred: &Path, gt: &Path, out: Option<&Path>) -> Result<()> {
    let pred_maps = label_array_to_maps(&read(pred)?).with_context(|| format!("in {}", pred.display()))?;
    let gt_maps = label_array_to_maps(&read(gt)?).with_context(|| format!("in {}", gt.display()))?;
    eprintln!("eval: {} samples", gt_maps.len());
    let report = eval_batch(workers, &gt_maps, &pred_maps, cfg.iou_threshold)?;
    let text = report.to_key_values();
    print!("{text}");
    if let Some(path) = out {
        fs::write(path, &text).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

fn augment(
    cfg: &CliConfig,
    workers: &Workers,
    seed: u64,
    images: &Path,
    labels: &Path,
    out: &Path,
    first: u64,
) -> Result<()> {
    let data = load_dataset(images, labels)
        .with_context(|| format!("loading {} and {}", images.display(), labels.display()))?;
    let samples = (0..data.n_samples())
        .map(|i| {
            let (image, instances, classes) = data.get(i)?;
            Sample::new(image, instances, classes)
        })
        .collect::<nucleiseg::Result<Vec<_>>>()?;
    eprintln!("augment: {} samples, seed {seed}", samples.len());
    let augmented = augment_batch(workers, &samples, &cfg.augment, seed, first)?;
    let images_out: Vec<_> = augmented.iter().map(|s| s.image.clone()).collect();
    let labels_out: Vec<_> = augmented.into_iter().map(|s| (s.instances, s.classes)).collect();
    let (h, w) = (data.height(), data.width());
    let (img_arr, lab_arr) = if images_out.is_empty() {
        (
            NpyArray::new(vec![0, h, w, 3], NpyData::U8(Vec::new()))?,
            NpyArray::new(vec![0, h, w, 2], NpyData::I32(Vec::new()))?,
        )
    } else {
        (images_to_array(&images_out)?, maps_to_label_array(&labels_out)?)
    };
    create_dir(out)?;
    write(&out.join("images.npy"), &img_arr)?;
    write(&out.join("labels.npy"), &lab_arr)
}

fn loss_check(seed: u64, seeds: u64) -> Result<()> {
    let mut failed = Vec::new();
    for kind in LossKind::ALL {
        let worst =
            (seed..seed + seeds).map(|s| check_loss(kind, s)).max_by(|a, b| a.rel_error.total_cmp(&b.rel_error));
        let Some(worst) = worst else { continue };
        let verdict = if worst.passed() { "ok" } else { "FAIL" };
        println!("{kind}\t{:.3e}\t{verdict}", worst.rel_error);
        if !worst.passed() {
            failed.push(format!("{kind} (seed {})", worst.seed));
        }
    }
    if !failed.is_empty() {
        bail!("gradient error above {FD_TOLERANCE:e} for {}", failed.join(", "));
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let cfg = CliConfig::load(cli.config.as_deref())?;
    let threads = match cli.workers {
        Some(n) => usize::try_from(n).context("--workers")?,
        None => std::thread::available_parallelism().map_or(1, |n| n.get()),
    };
    let workers = Workers::new(threads)?;
    match cli.command {
        Command::Stack { images, out } => stack(&cfg, &workers, &images, &out),
        Command::Targets { labels, out } => targets(&workers, &labels, &out),
        Command::Postproc { np_prob, hv, tp, out } => postproc(&cfg, &workers, &np_prob, &hv, tp.as_deref(), &out),
        Command::Eval { pred, gt, out } => eval(&cfg, &workers, &pred, &gt, out.as_deref()),
        Command::Augment { images, labels, out, first_index } => {
            augment(&cfg, &workers, cli.seed, &images, &labels, &out, first_index)
        }
        Command::LossCheck { seeds } => loss_check(cli.seed, seeds),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
