use std::fs;
use std::io::Cursor;
use std::path::{Path, PathBuf};

use image::imageops::{self, FilterType};
use image::{GrayImage, ImageBuffer, ImageFormat, Luma};
use sfaunet::check::{run_checks, CheckOptions};
use sfaunet::metrics::{MetricsReport, ProbMap, PRED_THRESHOLD};
use sfaunet::model::{self, Model, ModelConfig};
use sfaunet::train::{
    evaluate, ground_truth, load_dataset, read_gray, split_dataset, synth_generate, to_gray, train_loop,
    write_dataset, OptimizerHyper, Sample, SyntheticSpec, TrainConfig,
};
use sfaunet::{Error, Mode, Tensor};

use crate::settings::{ConfigFile, Size};
use crate::{CheckArgs, Common, DataArgs, EvalArgs, Failure, InferArgs, SynthArgs, TrainArgs};

const DEFAULT_OUT: &str = "sfaunet-out";

/// Exit code for a library error. Where a size mismatch lands depends on the
/// command: it is bad data for training but a config mismatch for eval.
fn core(size_mismatch: u8) -> impl Fn(Error) -> Failure {
    move |e| {
        let code = match &e {
            Error::Config(_) | Error::Checkpoint(_) | Error::ShapeMismatch { .. } => 2,
            Error::Data { .. } | Error::Io(_) => 3,
            Error::SizeMismatch { .. } => size_mismatch,
            Error::NonFinite(_) | Error::TrainingAborted(_) => 4,
            _ => 1,
        };
        Failure::new(code, e.to_string())
    }
}

fn io_failure(path: &Path) -> impl Fn(std::io::Error) -> Failure + '_ {
    move |e| Failure::data(format!("{}: {e}", path.display()))
}

struct Base {
    file: ConfigFile,
    model: ModelConfig,
    seed: u64,
    out: PathBuf,
}

fn resolve(common: &Common) -> Result<Base, Failure> {
    let file = ConfigFile::load(common.config.as_deref())?;
    let seed = file.pick(common.seed, "seed")?.unwrap_or(0);
    let defaults = ModelConfig::default();
    let Size(h, w) = file
        .pick(common.size, "size")?
        .unwrap_or(Size(defaults.input_size.0, defaults.input_size.1));
    let model = ModelConfig {
        input_size: (h, w),
        width_scale: file.pick(common.width_scale, "width-scale")?.unwrap_or(1.0),
        seed,
        ..defaults
    };
    model.validate().map_err(core(2))?;
    let out = file.pick(common.out.clone(), "out")?.unwrap_or_else(|| DEFAULT_OUT.into());
    Ok(Base { file, model, seed, out })
}

enum Source {
    Dir(PathBuf),
    Synthetic(usize),
}

impl Source {
    fn resolve(file: &ConfigFile, data: &DataArgs) -> Result<Self, Failure> {
        let count = file.pick(data.count, "count")?.unwrap_or(32);
        if data.synthetic {
            return Ok(Source::Synthetic(count));
        }
        if let Some(d) = &data.dataset {
            return Ok(Source::Dir(d.clone()));
        }
        match (file.pick::<PathBuf>(None, "dataset")?, file.switch(false, "synthetic")?) {
            (Some(_), true) => Err(Failure::config("config sets both dataset and synthetic")),
            (Some(d), false) => Ok(Source::Dir(d)),
            (None, true) => Ok(Source::Synthetic(count)),
            (None, false) => Err(Failure::config("no data: pass --dataset DIR or --synthetic")),
        }
    }

    /// Fails before any work if a dataset directory is missing.
    fn check_exists(&self) -> Result<(), Failure> {
        match self {
            Source::Dir(d) if !d.is_dir() => Err(Failure::data(format!("dataset directory {} not found", d.display()))),
            _ => Ok(()),
        }
    }

    fn load(&self, model: &ModelConfig, seed: u64, size_mismatch: u8) -> Result<Vec<Sample>, Failure> {
        match self {
            Source::Dir(d) => load_dataset(d, model.input_size).map_err(core(size_mismatch)),
            Source::Synthetic(count) => synth_generate(&SyntheticSpec {
                count: *count,
                size: model.input_size,
                seed,
                ..Default::default()
            })
            .map_err(core(2)),
        }
    }

    fn describe(&self) -> String {
        match self {
            Source::Dir(d) => format!("dataset = {}", d.display()),
            Source::Synthetic(n) => format!("synthetic = true\ncount = {n}"),
        }
    }
}

/// Write via a sibling temp file and rename, so `path` is either absent or
/// complete.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), Failure> {
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("out");
    let tmp = path.with_file_name(format!(".{name}.tmp"));
    fs::write(&tmp, bytes)
        .and_then(|_| fs::rename(&tmp, path))
        .map_err(|e| {
            let _ = fs::remove_file(&tmp);
            io_failure(path)(e)
        })
}

fn png_bytes(img: &GrayImage) -> Result<Vec<u8>, Failure> {
    let mut buf = Cursor::new(Vec::new());
    img.write_to(&mut buf, ImageFormat::Png)
        .map_err(|e| Failure::new(1, format!("png encoding: {e}")))?;
    Ok(buf.into_inner())
}

fn load_checkpoint(path: &Path, cfg: &ModelConfig) -> Result<Model, Failure> {
    model::load(path, cfg).map_err(|e| {
        let f = core(2)(e);
        Failure::new(f.code, format!("{}: {}", path.display(), f.msg))
    })
}

fn existing_checkpoint(path: Option<PathBuf>) -> Result<Option<PathBuf>, Failure> {
    match path {
        Some(p) if !p.is_file() => Err(Failure::config(format!("checkpoint {} not found", p.display()))),
        p => Ok(p),
    }
}

pub fn train(a: &TrainArgs) -> Result<(), Failure> {
    let Base { file, model: mcfg, seed, out } = resolve(&a.common)?;
    let defaults = TrainConfig::default();
    let hyper = OptimizerHyper {
        lr: file.pick(a.lr, "lr")?.unwrap_or(defaults.hyper.lr),
        weight_decay: file.pick(a.wd, "wd")?.unwrap_or(defaults.hyper.weight_decay),
        ..defaults.hyper
    };
    hyper.validate().map_err(core(2))?;
    let cfg = TrainConfig {
        epochs: file.pick(a.epochs, "epochs")?.unwrap_or(defaults.epochs),
        batch_size: file.pick(a.batch, "batch")?.unwrap_or(defaults.batch_size),
        max_steps: file.pick(a.steps, "steps")?,
        hyper,
        seed,
        ..defaults
    };
    if cfg.epochs == 0 || cfg.batch_size == 0 || cfg.max_steps == Some(0) {
        return Err(Failure::config("epochs, batch and steps must be positive"));
    }
    let init = existing_checkpoint(file.pick(a.checkpoint.clone(), "checkpoint")?)?;
    let eval_on_train = file.switch(a.eval_on_train, "eval-on-train")?;
    let source = Source::resolve(&file, &a.data)?;
    source.check_exists()?;

    let samples = source.load(&mcfg, seed, 3)?;
    let (train_set, eval_set) = if eval_on_train {
        (samples.clone(), samples)
    } else {
        if samples.len() < 5 {
            return Err(Failure::data(format!(
                "{} samples is too few to hold out an evaluation split (need 5, or pass --eval-on-train)",
                samples.len()
            )));
        }
        split_dataset(samples, seed).map_err(core(3))?
    };
    let mut net = match &init {
        Some(p) => load_checkpoint(p, &mcfg)?,
        None => Model::build(&mcfg).map_err(core(2))?,
    };
    println!(
        "training on {} samples, evaluating on {}; {} parameters",
        train_set.len(),
        eval_set.len(),
        sfaunet::layers::Module::param_count(&net)
    );

    let mut best: Option<(f64, Model)> = None;
    let history = train_loop(&mut net, &train_set, &eval_set, &cfg, |rec, m| {
        match &rec.report {
            Some(r) => {
                println!("epoch {:>4}  loss {:.6}  iou {:.4}  pd {:.4}", rec.epoch, rec.loss, r.iou, r.pd);
                if best.as_ref().is_none_or(|(b, _)| r.iou > *b) {
                    best = Some((r.iou, m.clone()));
                }
            }
            None => println!("epoch {:>4}  loss {:.6}", rec.epoch, rec.loss),
        }
        Ok(())
    })
    .map_err(core(3))?;

    fs::create_dir_all(&out).map_err(io_failure(&out))?;
    model::save(&net, &out.join("final.ckpt")).map_err(core(3))?;
    let best_model = best.map(|(_, m)| m).unwrap_or_else(|| net.clone());
    model::save(&best_model, &out.join("best.ckpt")).map_err(core(3))?;
    write_atomic(&out.join("history.csv"), history.to_csv().as_bytes())?;
    let run_cfg = format!(
        "# settings of this run; reuse with --config\nsize = {}\nwidth-scale = {}\nseed = {seed}\n{}\n\
         epochs = {}\nbatch = {}\n{}lr = {}\nwd = {}\neval-on-train = {eval_on_train}\n",
        Size(mcfg.input_size.0, mcfg.input_size.1),
        mcfg.width_scale,
        source.describe(),
        cfg.epochs,
        cfg.batch_size,
        cfg.max_steps.map(|s| format!("steps = {s}\n")).unwrap_or_default(),
        cfg.hyper.lr,
        cfg.hyper.weight_decay,
    );
    write_atomic(&out.join("run.cfg"), run_cfg.as_bytes())?;
    if let (Some(first), Some(last)) = (history.step_losses.first(), history.step_losses.last()) {
        println!("{} steps, loss {first:.6} -> {last:.6}; outputs in {}", history.step_losses.len(), out.display());
    }
    Ok(())
}

pub fn eval(a: &EvalArgs) -> Result<(), Failure> {
    let Base { file, model: mcfg, seed, out } = resolve(&a.common)?;
    let batch = file.pick(a.batch, "batch")?.unwrap_or(8).max(1);
    let source = Source::resolve(&file, &a.data)?;
    let ckpt = if a.identity_fixture {
        None
    } else {
        let p = existing_checkpoint(file.pick(a.checkpoint.clone(), "checkpoint")?)?;
        Some(p.ok_or_else(|| Failure::config("eval needs --checkpoint (or --identity-fixture)"))?)
    };
    source.check_exists()?;
    let samples = source.load(&mcfg, seed, 2)?;
    if samples.is_empty() {
        return Err(Failure::data("no samples to evaluate"));
    }

    let report = match ckpt {
        None => {
            let gts = ground_truth(&samples);
            let probs = gts
                .iter()
                .map(|m| ProbMap::new(m.height, m.width, m.pixels.iter().map(|&p| f64::from(u8::from(p))).collect()))
                .collect::<Result<Vec<_>, _>>()
                .map_err(core(2))?;
            MetricsReport::compute(&probs, &gts)
        }
        Some(p) => {
            let net = load_checkpoint(&p, &mcfg)?;
            evaluate(&net, &samples, batch)
        }
    }
    .map_err(core(2))?;

    let table = format!("{}\n{}\n", MetricsReport::CSV_HEADER, report.csv_row());
    print!("{table}");
    fs::create_dir_all(&out).map_err(io_failure(&out))?;
    write_atomic(&out.join("report.csv"), table.as_bytes())
}

pub fn infer(a: &InferArgs) -> Result<(), Failure> {
    let Base { file, model: mcfg, out, .. } = resolve(&a.common)?;
    let ckpt = existing_checkpoint(file.pick(a.checkpoint.clone(), "checkpoint")?)?
        .ok_or_else(|| Failure::config("infer needs --checkpoint"))?;
    let net = load_checkpoint(&ckpt, &mcfg)?;
    let img = read_gray(&a.image).map_err(|e| Failure::data(e.to_string()))?;

    let (w0, h0) = img.dimensions();
    let (h, w) = mcfg.input_size;
    let same = (h0 as usize, w0 as usize) == (h, w);
    let input = if same { img } else { imageops::resize(&img, w as u32, h as u32, FilterType::Triangle) };
    let x = Tensor::new(&[1, 1, h, w], input.pixels().map(|p| f64::from(p.0[0]) / 255.0).collect())
        .map_err(core(2))?;
    let probs = net.forward(&x, Mode::Eval).map_err(core(2))?.data().to_vec();
    // back to the input's own resolution
    let probs: Vec<f64> = if same {
        probs
    } else {
        let small: ImageBuffer<Luma<f32>, Vec<f32>> =
            ImageBuffer::from_raw(w as u32, h as u32, probs.iter().map(|&p| p as f32).collect())
                .expect("buffer matches dimensions");
        imageops::resize(&small, w0, h0, FilterType::Triangle)
            .pixels()
            .map(|p| f64::from(p.0[0]).clamp(0.0, 1.0))
            .collect()
    };
    let mask: Vec<f64> = probs.iter().map(|&p| if p >= PRED_THRESHOLD { 1.0 } else { 0.0 }).collect();

    let stem = a.image.file_stem().and_then(|s| s.to_str()).unwrap_or("image");
    fs::create_dir_all(&out).map_err(io_failure(&out))?;
    let (hh, ww) = (h0 as usize, w0 as usize);
    let prob_path = out.join(format!("{stem}_prob.png"));
    let mask_path = out.join(format!("{stem}_mask.png"));
    write_atomic(&prob_path, &png_bytes(&to_gray(&probs, hh, ww))?)?;
    write_atomic(&mask_path, &png_bytes(&to_gray(&mask, hh, ww))?)?;
    println!("{}\n{}", prob_path.display(), mask_path.display());
    Ok(())
}

pub fn check(a: &CheckArgs) -> Result<(), Failure> {
    let outcomes = run_checks(&CheckOptions { corrupt_scharr: a.corrupt_scharr });
    for o in &outcomes {
        let status = if o.passed { "PASS" } else { "FAIL" };
        println!("{status} {:<24} {:>6.2}s  {}", o.name, o.seconds, o.detail);
    }
    let failed: Vec<&str> = outcomes.iter().filter(|o| !o.passed).map(|o| o.name).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::new(1, format!("failed checks: {}", failed.join(", "))))
    }
}

pub fn synth(a: &SynthArgs) -> Result<(), Failure> {
    let file = ConfigFile::load(a.common.config.as_deref())?;
    let defaults = SyntheticSpec::default();
    let Size(h, w) = file.pick(a.common.size, "size")?.unwrap_or(Size(defaults.size.0, defaults.size.1));
    let spec = SyntheticSpec {
        count: file.pick(a.count, "count")?.unwrap_or(defaults.count),
        size: (h, w),
        seed: file.pick(a.common.seed, "seed")?.unwrap_or(0),
        ..defaults
    };
    let out = file.pick(a.common.out.clone(), "out")?.unwrap_or_else(|| DEFAULT_OUT.into());
    if out.exists() && fs::read_dir(&out).map_err(io_failure(&out))?.next().is_some() {
        return Err(Failure::config(format!("{} already exists and is not empty", out.display())));
    }
    let samples = synth_generate(&spec).map_err(core(2))?;

    let name = out.file_name().and_then(|n| n.to_str()).unwrap_or("synthetic");
    let tmp = out.with_file_name(format!(".{name}.tmp"));
    let _ = fs::remove_dir_all(&tmp);
    let staged = write_dataset(&tmp, &samples).map_err(core(3)).and_then(|_| {
        if out.exists() {
            fs::remove_dir(&out).map_err(io_failure(&out))?;
        }
        fs::rename(&tmp, &out).map_err(io_failure(&out))
    });
    if staged.is_err() {
        let _ = fs::remove_dir_all(&tmp);
    }
    staged?;
    println!("wrote {} samples ({h}x{w}) to {}", samples.len(), out.display());
    Ok(())
}
