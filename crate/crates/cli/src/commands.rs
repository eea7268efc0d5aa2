//! Command implementations. Each one validates its inputs, delegates to the library, and
//! writes provenance beside its outputs.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use dss_core::ablation::{run_family, save_report_csv, variant_config, variants};
use dss_core::checkpoint::{read_manifest, Checkpoint};
use dss_core::data::{
    generate_scene, images_dir, load_dataset, load_gray, load_rgb, masks_dir, png_stems, scene_seed, Sample, Split,
    SynthConfig,
};
use dss_core::kernels::resize::resize_bilinear;
use dss_core::metrics::{pr_curve, summarize, write_reports, Averaging, EvalRecord, DEFAULT_BETA_SQ};
use dss_core::model::check_input_extents;
use dss_core::pipeline::{datasets, fit, weight_split, Datasets};
use dss_core::selfcheck::{run_all, Options};
use dss_core::train::{evaluate, predict, save_log_csv};
use dss_core::{DssNet, Error, ParamStore, Precision, Result, RunConfig, Scalar};
use serde_json::{json, Value};

use crate::cli::{AblateArgs, EvalArgs, InferArgs, SelfcheckArgs, SynthArgs, TrainArgs};
use crate::provenance::{record, save_gray, save_rgb, write_json};

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn refuse_existing(path: &Path, force: bool) -> Result<()> {
    if path.exists() && !force {
        return Err(Error::validation(format!(
            "{} already exists; pass --force to overwrite",
            path.display()
        )));
    }
    Ok(())
}

fn path_str(p: &Path) -> String {
    p.display().to_string()
}

fn stem(path: &Path) -> Result<String> {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .ok_or_else(|| Error::validation(format!("{} has no file name", path.display())))
}

pub fn synth(args: &SynthArgs) -> Result<()> {
    check_input_extents(args.size, args.size)?;
    let manifest_path = args.out.join("manifest.json");
    refuse_existing(&manifest_path, args.force)?;
    let split: Split = args.split.into();
    let synth_cfg = SynthConfig {
        blur_sigma: args.blur_sigma,
        noise_sigma: args.noise_sigma,
    };
    let prov = record(
        "synth",
        json!({
            "n": args.n,
            "size": args.size,
            "difficulty": args.difficulty,
            "dataset_seed": args.seed,
            "split": split,
            "generator": synth_cfg,
        }),
    );
    let (images, masks) = (images_dir(&args.out), masks_dir(&args.out));
    create_dir(&images)?;
    create_dir(&masks)?;
    let mut samples = Vec::with_capacity(args.n);
    for i in 0..args.n {
        let seed = scene_seed(args.seed, split, i)?;
        let scene = generate_scene(seed, args.size, args.size, args.difficulty, &synth_cfg)?;
        let s = &scene.sample;
        save_rgb(&images.join(format!("{}.png", s.id)), &s.image, &prov)?;
        save_gray(&masks.join(format!("{}.png", s.id)), &s.mask, &prov)?;
        samples.push(json!({
            "id": s.id,
            "seed": seed,
            "foreground_fraction": s.foreground_fraction(),
        }));
    }
    let mut manifest = prov;
    manifest["samples"] = Value::Array(samples);
    write_json(&manifest_path, &manifest)?;
    eprintln!("wrote {} pairs to {}", args.n, args.out.display());
    Ok(())
}

pub fn train(args: &TrainArgs) -> Result<()> {
    let mut cfg = args.config.resolve()?;
    if let Some(out) = &args.out {
        cfg.out_dir = out.clone();
    }
    cfg.validate()?;
    let out = cfg.out_dir.clone();
    refuse_existing(&out.join("config.toml"), args.force)?;
    let data = datasets(&cfg)?;
    create_dir(&out)?;
    cfg.save(&out.join("config.toml"))?;
    write_json(&out.join("provenance.json"), &record("train", cfg.to_json()))?;
    eprintln!(
        "training {} steps on {} samples, validating on {}",
        cfg.steps,
        data.train.len(),
        data.val.len()
    );
    match cfg.precision {
        Precision::F32 => train_as::<f32>(&cfg, &data),
        Precision::F64 => train_as::<f64>(&cfg, &data),
    }
}

fn train_as<T: Scalar>(cfg: &RunConfig, data: &Datasets) -> Result<()> {
    let out = &cfg.out_dir;
    let report_every = (cfg.steps / 20).max(1);
    let fitted = fit::<T>(cfg, &data.train, |row, state| {
        let done = row.step + 1;
        if done % report_every == 0 || done == cfg.steps {
            eprintln!(
                "step {done}/{} lr {:.3e} l_total {:.4}",
                cfg.steps, row.lr, row.losses.total
            );
        }
        if cfg.checkpoint_every > 0 && done % cfg.checkpoint_every == 0 {
            Checkpoint::from_state(state, cfg.to_json()).save(&out.join(format!("checkpoint_step{done:06}.ckpt")))?;
        }
        Ok(())
    })?;
    save_log_csv(&out.join("loss.csv"), &fitted.log)?;
    Checkpoint::from_state(&fitted.state, cfg.to_json()).save(&out.join("checkpoint.ckpt"))?;

    let store = fitted.eval_store(cfg.use_ema)?;
    let records = evaluate(&fitted.net, &store, &data.val)?;
    let summary = summarize(&records, DEFAULT_BETA_SQ, Averaging::Micro)?;
    write_reports(out, &pr_curve(&records, Averaging::Micro)?, &summary)?;
    println!("validation maxF {:.4} MAE {:.4}", summary.max_f, summary.mae);
    Ok(())
}

/// A checkpoint with its configuration, audited against a freshly built model.
struct Loaded<T> {
    cfg: RunConfig,
    net: DssNet,
    ckpt: Checkpoint<T>,
}

impl<T: Scalar> Loaded<T> {
    fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let ckpt = Checkpoint::<T>::from_bytes(bytes)?;
        let cfg = RunConfig::from_json(&ckpt.config)?;
        cfg.validate()?;
        let (net, template) = DssNet::new(cfg.model(), cfg.seed)?;
        ckpt.audit(&template)?;
        Ok(Self { cfg, net, ckpt })
    }

    fn store(&self, use_ema: bool) -> Result<ParamStore<T>> {
        self.ckpt.eval_store(use_ema)
    }
}

fn read_checkpoint(path: &Path) -> Result<(Vec<u8>, Precision)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let precision = read_manifest(&bytes)?.precision;
    Ok((bytes, precision))
}

pub fn infer(args: &InferArgs) -> Result<()> {
    let (bytes, precision) = read_checkpoint(&args.checkpoint)?;
    match precision {
        Precision::F32 => infer_as(args, Loaded::<f32>::from_bytes(&bytes)?),
        Precision::F64 => infer_as(args, Loaded::<f64>::from_bytes(&bytes)?),
    }
}

fn infer_as<T: Scalar>(args: &InferArgs, loaded: Loaded<T>) -> Result<()> {
    let mut seen = BTreeSet::new();
    let stems = args
        .images
        .iter()
        .map(|p| {
            let s = stem(p)?;
            if !seen.insert(s.clone()) {
                return Err(Error::validation(format!("two inputs share the file stem `{s}`")));
            }
            Ok(s)
        })
        .collect::<Result<Vec<_>>>()?;
    let use_ema = args.weights.use_ema(loaded.cfg.use_ema);
    let store = loaded.store(use_ema)?;
    let size = loaded.cfg.image_size;
    create_dir(&args.out)?;
    for (path, stem) in args.images.iter().zip(&stems) {
        let image = load_rgb(path)?;
        let (_, _, h, w) = image.dims4()?;
        let resized = check_input_extents(h, w).is_err();
        let input = if resized { resize_bilinear(&image, size, size)? } else { image };
        let p = predict(&loaded.net, &store, &[&input])?.remove(0);
        let saliency = if resized { resize_bilinear(&p.saliency, h, w)? } else { p.saliency };
        let prov = record(
            "infer",
            json!({
                "checkpoint": path_str(&args.checkpoint),
                "image": path_str(path),
                "use_ema": use_ema,
                "run": loaded.cfg.to_json(),
            }),
        );
        save_gray(&args.out.join(format!("{stem}_saliency.png")), &saliency, &prov)?;
        if let Some(b) = &p.boundary {
            save_gray(&args.out.join(format!("{stem}_boundary.png")), b, &prov)?;
        }
        if let Some(wm) = &p.weight_map {
            save_gray(&args.out.join(format!("{stem}_wmap.png")), wm, &prov)?;
        }
        eprintln!("{} -> {}", path.display(), args.out.join(format!("{stem}_saliency.png")).display());
    }
    Ok(())
}

fn write_eval(args: &EvalArgs, records: &[EvalRecord], mut details: Value) -> Result<()> {
    if args.beta_sq.is_nan() || args.beta_sq <= 0.0 {
        return Err(Error::config("--beta-sq must be positive"));
    }
    let averaging: Averaging = args.averaging.into();
    let summary = summarize(records, args.beta_sq, averaging)?;
    write_reports(&args.out, &pr_curve(records, averaging)?, &summary)?;
    details["beta_sq"] = json!(args.beta_sq);
    details["averaging"] = json!(averaging);
    details["images"] = json!(records.len());
    details["summary"] = json!(summary);
    write_json(&args.out.join("provenance.json"), &record("eval", details))?;
    println!("images {} maxF {:.4} MAE {:.4}", records.len(), summary.max_f, summary.mae);
    Ok(())
}

pub fn eval(args: &EvalArgs) -> Result<()> {
    match (&args.checkpoint, &args.pred, &args.gt) {
        (Some(ckpt), _, _) => {
            let (bytes, precision) = read_checkpoint(ckpt)?;
            match precision {
                Precision::F32 => eval_checkpoint(args, ckpt, Loaded::<f32>::from_bytes(&bytes)?),
                Precision::F64 => eval_checkpoint(args, ckpt, Loaded::<f64>::from_bytes(&bytes)?),
            }
        }
        (None, Some(pred), Some(gt)) => eval_saved(args, pred, gt),
        _ => Err(Error::config("eval needs --checkpoint, or --pred with --gt")),
    }
}

fn eval_checkpoint<T: Scalar>(args: &EvalArgs, path: &Path, loaded: Loaded<T>) -> Result<()> {
    let cfg = &loaded.cfg;
    let samples: Vec<Sample> = match &args.data {
        Some(dir) => load_dataset(dir, cfg.image_size)?,
        None => datasets(cfg)?.val,
    };
    let use_ema = args.weights.use_ema(cfg.use_ema);
    let store = loaded.store(use_ema)?;
    let records = evaluate(&loaded.net, &store, &samples)?;
    let split = weight_split(&loaded.net, &store, &samples, &cfg.supervision())?;
    if let Some(s) = split {
        println!(
            "mean w where R* > 0.5: {:.4}, where R* = 0: {:.4} ({} images)",
            s.band, s.interior, s.images
        );
    }
    let details = json!({
        "checkpoint": path_str(path),
        "data": args.data.as_deref().map(path_str),
        "use_ema": use_ema,
        "run": cfg.to_json(),
        "weight_split": split.map(|s| json!({"band": s.band, "interior": s.interior, "images": s.images})),
    });
    write_eval(args, &records, details)
}

/// Saliency file for `stem` in `dir`, as written by `infer` or by another tool.
fn prediction_path(dir: &Path, stem: &str) -> Result<PathBuf> {
    [format!("{stem}_saliency.png"), format!("{stem}.png")]
        .into_iter()
        .map(|name| dir.join(name))
        .find(|p| p.is_file())
        .ok_or_else(|| Error::validation(format!("no prediction for `{stem}` in {}", dir.display())))
}

fn eval_saved(args: &EvalArgs, pred: &Path, gt: &Path) -> Result<()> {
    let masks = if masks_dir(gt).is_dir() { masks_dir(gt) } else { gt.to_path_buf() };
    let stems = png_stems(&masks)?;
    if stems.is_empty() {
        return Err(Error::validation(format!("no PNG masks under {}", masks.display())));
    }
    let records = stems
        .iter()
        .map(|stem| {
            let p = load_gray(&prediction_path(pred, stem)?)?;
            let m = load_gray(&masks.join(format!("{stem}.png")))?;
            EvalRecord::new(&p, &m).map_err(|e| Error::validation(format!("`{stem}`: {e}")))
        })
        .collect::<Result<Vec<_>>>()?;
    let details = json!({ "pred": path_str(pred), "gt": path_str(&masks) });
    write_eval(args, &records, details)
}

/// `report.csv` gets `report.provenance.json`.
pub fn sidecar(report: &Path) -> PathBuf {
    report.with_extension("provenance.json")
}

pub fn ablate(args: &AblateArgs) -> Result<()> {
    let base = args.config.resolve()?;
    base.validate()?;
    refuse_existing(&args.out, args.force)?;
    let family = args.family;
    let planned = variants(family)
        .iter()
        .map(|v| {
            let cfg = variant_config(&base, v)?;
            Ok(json!({
                "variant": v.id,
                "overrides": cfg.diff(&base)?,
                "config": cfg.to_json(),
            }))
        })
        .collect::<Result<Vec<_>>>()?;
    let data = datasets(&base)?;
    let rows = run_family(family, &base, &data.train, &data.val, |row| {
        eprintln!("{} {}: {} ({:.1}s)", family.name(), row.variant, row.status, row.wall_clock_s);
    });
    if let Some(dir) = args.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    save_report_csv(&args.out, &rows)?;
    let prov = record(
        "ablate",
        json!({ "family": family, "base": base.to_json(), "variants": planned }),
    );
    write_json(&sidecar(&args.out), &prov)?;
    let failed = rows.iter().filter(|r| !r.ok()).count();
    if failed > 0 {
        return Err(Error::validation(format!(
            "{failed} of {} variants failed; see {}",
            rows.len(),
            args.out.display()
        )));
    }
    Ok(())
}

/// Prints the check table. Returns whether every check passed.
pub fn selfcheck(args: &SelfcheckArgs) -> bool {
    let mut options = Options {
        seed: args.seed,
        skip_model: args.skip_model,
        ..Options::default()
    };
    if args.corrupt_laplacian {
        options.laplacian_kernel[4] += 0.1;
    }
    let report = run_all(&options);
    print!("{}", report.table());
    report.all_passed()
}
