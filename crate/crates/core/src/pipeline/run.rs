//! Stage functions over files, and the end-to-end driver that chains them.
//!
//! Each stage reads its inputs from disk and writes its outputs to disk, so a
//! run made of separate stage invocations produces the same bytes as
//! [`run_pipeline`].

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use log::info;

use super::config::PipelineConfig;
use super::png::export_png;
use crate::degrade::{make_isotropic, UpsampleMethod};
use crate::error::{Error, Result};
use crate::fuse::{fba_fuse, FuseConfig};
use crate::infer::run_both_orientations;
use crate::metrics::{build_report, psnr, ssim, MethodResults, MetricsReport};
use crate::network::{load_weights, save_weights, train, Architecture, TrainConfig, TrainOutcome};
use crate::sampler::{build_training_set, read_patch_dump, write_patch_dump, SamplerConfig};
use crate::seed;
use crate::volume::{
    load_volume, load_volume_raw, normalize_intensity, save_volume, scale_factor, Orientation, Volume,
};

/// Method names the pipeline reports on its own.
pub const BUILTIN_METHODS: [&str; 3] = ["BSpline", "ZeroPad", "EDSSR"];

/// Sampler seed the pipeline derives from its root seed.
pub fn sampler_seed(root: u64) -> u64 {
    seed::derive(root, "sampler", 0)
}

/// Training seed the pipeline derives from its root seed.
pub fn train_seed(root: u64) -> u64 {
    seed::derive(root, "train", 0)
}

/// Sets the through-plane spacing so that the slice ratio becomes `k`.
fn override_k(v: &mut Volume, k: f64) -> Result<()> {
    let [sx, sy, _] = v.spacing();
    v.set_spacing([sx, sy, sx * k])
}

#[derive(Debug, Clone, PartialEq)]
pub struct UpsampleInfo {
    pub k: f64,
    pub lr_dims: [usize; 3],
    pub iso_dims: [usize; 3],
    pub intensity_scale: f64,
}

/// Loads a physical-unit LR volume, normalizes it and resamples it to an
/// isotropic grid. The output stores normalized values with the divisor as
/// its NIfTI slope.
pub fn upsample_file(
    input: &Path,
    output: &Path,
    method: UpsampleMethod,
    percentile: f64,
    k: Option<f64>,
) -> Result<UpsampleInfo> {
    let mut lr = load_volume(input)?;
    if let Some(k) = k {
        override_k(&mut lr, k)?;
    }
    let k = scale_factor(&lr)?;
    if k <= 1.0 + 1e-6 {
        return Err(Error::invalid(format!(
            "{}: slice ratio k = {k}; nothing to super-resolve",
            input.display()
        )));
    }
    let normalized = normalize_intensity(&lr, percentile)?;
    let iso = make_isotropic(&normalized, method)?.volume;
    save_volume(&iso, output)?;
    Ok(UpsampleInfo {
        k,
        lr_dims: lr.dims(),
        iso_dims: iso.dims(),
        intensity_scale: iso.intensity_scale(),
    })
}

/// Builds training pairs from a normalized isotropic volume; returns the pair count.
pub fn make_training_file(iso: &Path, k: f64, cfg: &SamplerConfig, output: &Path) -> Result<usize> {
    let iso = load_volume_raw(iso)?;
    let pairs = build_training_set(&iso, k, cfg)?;
    write_patch_dump(&pairs, output)?;
    Ok(pairs.len())
}

/// Trains on a patch dump and writes the weights, plus one loss per line to `loss_log`.
pub fn train_file(
    patches: &Path,
    arch: Architecture,
    cfg: &TrainConfig,
    weights_out: &Path,
    loss_log: Option<&Path>,
) -> Result<TrainOutcome> {
    let pairs = read_patch_dump(patches)?;
    let outcome = train(&pairs, cfg, arch)?;
    save_weights(&outcome.model, weights_out)?;
    if let Some(path) = loss_log {
        let mut text = String::new();
        for l in &outcome.losses {
            writeln!(text, "{l}").expect("writing to a String cannot fail");
        }
        fs::write(path, text).map_err(|e| Error::io(path, e))?;
    }
    Ok(outcome)
}

/// Super-resolves coronal and sagittal slices of a normalized isotropic volume.
pub fn apply_file(iso: &Path, weights: &Path, coronal_out: &Path, sagittal_out: &Path) -> Result<()> {
    let iso = load_volume_raw(iso)?;
    let model = load_weights(weights)?;
    let (cor, sag) = run_both_orientations(&iso, &model)?;
    save_volume(&cor.volume, coronal_out)?;
    save_volume(&sag.volume, sagittal_out)
}

/// Fuses estimates and writes the result in physical units when `denormalize` is set.
pub fn fuse_files(inputs: &[PathBuf], cfg: &FuseConfig, output: &Path, denormalize: bool) -> Result<Volume> {
    let estimates = inputs.iter().map(load_volume_raw).collect::<Result<Vec<_>>>()?;
    let mut fused = fba_fuse(&estimates, cfg)?;
    if denormalize {
        fused = fused.denormalize();
    }
    save_volume(&fused, output)?;
    Ok(fused)
}

/// Scores each method's volumes against the references (one per subject)
/// and writes the table and delimited report when paths are given.
pub fn evaluate_files(
    references: &[PathBuf],
    methods: &[(String, Vec<PathBuf>)],
    alpha: f64,
    table_out: Option<&Path>,
    csv_out: Option<&Path>,
) -> Result<MetricsReport> {
    if references.is_empty() {
        return Err(Error::invalid("evaluation needs at least one reference volume"));
    }
    let refs = references.iter().map(load_volume).collect::<Result<Vec<_>>>()?;
    let mut results = Vec::with_capacity(methods.len());
    for (name, paths) in methods {
        if paths.len() != refs.len() {
            return Err(Error::invalid(format!(
                "method {name} has {} volumes for {} references",
                paths.len(),
                refs.len()
            )));
        }
        let mut r = MethodResults {
            name: name.clone(),
            psnr: Vec::new(),
            ssim: Vec::new(),
        };
        for (path, reference) in paths.iter().zip(&refs) {
            let est = load_volume(path)?;
            r.psnr.push(psnr(&est, reference)?);
            r.ssim.push(ssim(&est, reference)?);
        }
        results.push(r);
    }
    let report = build_report(&results, alpha)?;
    if let Some(path) = table_out {
        fs::write(path, report.to_table()).map_err(|e| Error::io(path, e))?;
    }
    if let Some(path) = csv_out {
        report.write_delimited(path)?;
    }
    Ok(report)
}

#[derive(Debug, Clone)]
pub struct PipelineOutcome {
    pub output: PathBuf,
    pub manifest: PathBuf,
    pub upsample: UpsampleInfo,
    pub pairs: usize,
    pub losses: Vec<f64>,
    pub report: Option<MetricsReport>,
}

fn stage<T>(name: &'static str, r: Result<T>) -> Result<T> {
    r.map_err(|e| e.in_stage(name))
}

/// Runs every stage in order inside `cfg.output_dir` and writes `manifest.txt`.
///
/// Configuration problems (including an input with `k <= 1`) come back as
/// plain errors; failures after that are wrapped with the stage name.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<PipelineOutcome> {
    cfg.validate()?;
    let input = cfg.input.clone().expect("validated");
    {
        let mut lr = load_volume(&input)?;
        if let Some(k) = cfg.k {
            override_k(&mut lr, k)?;
        }
        let k = scale_factor(&lr)?;
        if k <= 1.0 + 1e-6 {
            return Err(Error::invalid(format!(
                "input slice ratio k = {k}; nothing to super-resolve"
            )));
        }
    }
    let dir = &cfg.output_dir;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = |name: &str| dir.join(name);

    let sampler_seed = sampler_seed(cfg.seed);
    let train_seed = train_seed(cfg.seed);

    let iso_path = path("iso.nii");
    let up = stage(
        "upsample",
        upsample_file(&input, &iso_path, cfg.upsample, cfg.normalize_percentile, cfg.k),
    )?;
    info!("k = {}, isotropic dims {:?}", up.k, up.iso_dims);

    let patches = path("patches.bin");
    let sampler = SamplerConfig {
        seed: sampler_seed,
        ..cfg.sampler.clone()
    };
    let pairs = stage("make-training", make_training_file(&iso_path, up.k, &sampler, &patches))?;
    info!("{pairs} training pairs");

    let weights = path("weights.bin");
    let train_cfg = TrainConfig {
        seed: train_seed,
        ..cfg.train.clone()
    };
    let outcome = stage(
        "train",
        train_file(&patches, cfg.arch, &train_cfg, &weights, Some(&path("loss.txt"))),
    )?;

    let (cor, sag) = (path("sr_coronal.nii"), path("sr_sagittal.nii"));
    stage("apply", apply_file(&iso_path, &weights, &cor, &sag))?;

    let output = path("edssr.nii");
    stage("fuse", fuse_files(&[cor, sag], &cfg.fuse, &output, true))?;

    let report = match &cfg.reference {
        Some(reference) => {
            let mut methods = Vec::new();
            for method in [UpsampleMethod::BSpline, UpsampleMethod::ZeroPad] {
                let p = if method == cfg.upsample {
                    iso_path.clone()
                } else {
                    let p = path(&format!("iso_{}.nii", method.name()));
                    stage(
                        "baseline",
                        upsample_file(&input, &p, method, cfg.normalize_percentile, cfg.k),
                    )?;
                    p
                };
                let name = match method {
                    UpsampleMethod::BSpline => BUILTIN_METHODS[0],
                    UpsampleMethod::ZeroPad => BUILTIN_METHODS[1],
                };
                methods.push((name.to_string(), vec![p]));
            }
            methods.push((BUILTIN_METHODS[2].to_string(), vec![output.clone()]));
            for (name, p) in &cfg.competitors {
                methods.push((name.clone(), vec![p.clone()]));
            }
            let report = stage(
                "evaluate",
                evaluate_files(
                    &[reference.clone()],
                    &methods,
                    cfg.alpha,
                    Some(&path("report.txt")),
                    Some(&path("report.csv")),
                ),
            )?;
            Some(report)
        }
        None => None,
    };

    if cfg.snapshots {
        stage("snapshots", write_snapshots(cfg, &iso_path, &output))?;
    }

    let manifest = path("manifest.txt");
    let mut entries = cfg.entries();
    entries.extend([
        ("seed.sampler".to_string(), sampler_seed.to_string()),
        ("seed.train".to_string(), train_seed.to_string()),
        ("seed.network_init".to_string(), seed::derive(train_seed, "network", 0).to_string()),
        ("derived.k".to_string(), up.k.to_string()),
        ("derived.lr_dims".to_string(), format_dims(up.lr_dims)),
        ("derived.iso_dims".to_string(), format_dims(up.iso_dims)),
        ("derived.intensity_scale".to_string(), up.intensity_scale.to_string()),
        ("derived.training_pairs".to_string(), pairs.to_string()),
        (
            "derived.final_loss".to_string(),
            outcome.losses.last().map_or("none".into(), f64::to_string),
        ),
    ]);
    stage("manifest", write_manifest(&manifest, entries))?;

    Ok(PipelineOutcome {
        output,
        manifest,
        upsample: up,
        pairs,
        losses: outcome.losses,
        report,
    })
}

fn format_dims(d: [usize; 3]) -> String {
    format!("{}x{}x{}", d[0], d[1], d[2])
}

/// Writes sorted `key=value` lines.
pub fn write_manifest(path: &Path, mut entries: Vec<(String, String)>) -> Result<()> {
    entries.sort();
    let mut text = String::new();
    for (k, v) in entries {
        writeln!(text, "{k}={v}").expect("writing to a String cannot fail");
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Middle coronal slice of the network input, the output and the reference.
fn write_snapshots(cfg: &PipelineConfig, iso: &Path, output: &Path) -> Result<()> {
    let dir = &cfg.output_dir;
    let mut volumes = vec![("input", load_volume(iso)?), ("edssr", load_volume(output)?)];
    if let Some(r) = &cfg.reference {
        volumes.push(("reference", load_volume(r)?));
    }
    for (name, v) in volumes {
        let index = v.dims()[1] / 2;
        export_png(&v, Orientation::Coronal, index, dir.join(format!("coronal_{name}.png")))?;
    }
    Ok(())
}
