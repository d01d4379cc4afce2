//! Flat `key=value` pipeline configuration with section prefixes.

use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::degrade::UpsampleMethod;
use crate::error::{Error, Result};
use crate::fuse::FuseConfig;
use crate::network::{Architecture, TrainConfig};
use crate::sampler::SamplerConfig;
use crate::volume::DEFAULT_NORMALIZE_PERCENTILE;

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub input: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub seed: u64,
    /// Slice-thickness ratio; derived from the input spacing when absent.
    pub k: Option<f64>,
    pub upsample: UpsampleMethod,
    pub normalize_percentile: f64,
    /// Its `seed` field is ignored; the pipeline derives one from `seed`.
    pub sampler: SamplerConfig,
    pub arch: Architecture,
    /// Its `seed` field is ignored; the pipeline derives one from `seed`.
    pub train: TrainConfig,
    pub fuse: FuseConfig,
    pub reference: Option<PathBuf>,
    pub competitors: Vec<(String, PathBuf)>,
    pub alpha: f64,
    pub snapshots: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            input: None,
            output_dir: PathBuf::from("edssr-out"),
            seed: 0,
            k: None,
            upsample: UpsampleMethod::ZeroPad,
            normalize_percentile: DEFAULT_NORMALIZE_PERCENTILE,
            sampler: SamplerConfig::default(),
            arch: Architecture::default(),
            train: TrainConfig::default(),
            fuse: FuseConfig::default(),
            reference: None,
            competitors: Vec::new(),
            alpha: 0.05,
            snapshots: true,
        }
    }
}

/// Every recognised key, in manifest order.
pub const KEYS: &[&str] = &[
    "input",
    "output",
    "seed",
    "k",
    "upsample",
    "normalize.percentile",
    "sampler.patch_size",
    "sampler.patches_per_slice",
    "sampler.angles",
    "sampler.foreground_threshold",
    "network.blocks",
    "network.features",
    "train.steps",
    "train.batch_size",
    "train.lr",
    "train.lr_halving_every",
    "train.adam_beta1",
    "train.adam_beta2",
    "train.adam_eps",
    "train.fine_tune_from",
    "fuse.p",
    "fuse.smoothing_sigma",
    "eval.reference",
    "eval.competitors",
    "eval.alpha",
    "output.snapshots",
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: Display,
{
    value
        .parse()
        .map_err(|e| Error::invalid(format!("bad value `{value}` for `{key}`: {e}")))
}

fn optional_path(value: &str) -> Option<PathBuf> {
    (!value.is_empty() && value != "none").then(|| PathBuf::from(value))
}

fn show_path(p: &Option<PathBuf>) -> String {
    p.as_ref().map_or("none".to_string(), |p| p.display().to_string())
}

impl PipelineConfig {
    /// Parses `key=value` lines; blank lines and `#` comments are skipped.
    pub fn parse_str(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::invalid(format!("line {}: expected key=value, got `{line}`", n + 1)))?;
            cfg.set(key.trim(), value.trim())
                .map_err(|e| Error::invalid(format!("line {}: {e}", n + 1)))?;
        }
        Ok(cfg)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_str(&text)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "input" => self.input = optional_path(value),
            "output" => self.output_dir = PathBuf::from(value),
            "seed" => self.seed = parse(key, value)?,
            "k" => {
                self.k = match value {
                    "" | "auto" => None,
                    v => Some(parse(key, v)?),
                }
            }
            "upsample" => self.upsample = value.parse()?,
            "normalize.percentile" => self.normalize_percentile = parse(key, value)?,
            "sampler.patch_size" => self.sampler.patch_size = parse(key, value)?,
            "sampler.patches_per_slice" => self.sampler.patches_per_slice = parse(key, value)?,
            "sampler.angles" => {
                self.sampler.angles_deg = value
                    .split(',')
                    .map(|a| parse(key, a.trim()))
                    .collect::<Result<_>>()?
            }
            "sampler.foreground_threshold" => self.sampler.foreground_threshold = parse(key, value)?,
            "network.blocks" => self.arch.blocks = parse(key, value)?,
            "network.features" => self.arch.features = parse(key, value)?,
            "train.steps" => self.train.steps = parse(key, value)?,
            "train.batch_size" => self.train.batch_size = parse(key, value)?,
            "train.lr" => self.train.lr = parse(key, value)?,
            "train.lr_halving_every" => self.train.lr_halving_every = parse(key, value)?,
            "train.adam_beta1" => self.train.adam.beta1 = parse(key, value)?,
            "train.adam_beta2" => self.train.adam.beta2 = parse(key, value)?,
            "train.adam_eps" => self.train.adam.eps = parse(key, value)?,
            "train.fine_tune_from" => self.train.fine_tune_from = optional_path(value),
            "fuse.p" => self.fuse.p = parse(key, value)?,
            "fuse.smoothing_sigma" => self.fuse.magnitude_smoothing_sigma = parse(key, value)?,
            "eval.reference" => self.reference = optional_path(value),
            "eval.competitors" => {
                self.competitors = value
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty() && *s != "none")
                    .map(|item| {
                        let (name, path) = item.split_once('=').ok_or_else(|| {
                            Error::invalid(format!("competitor `{item}` must be NAME=PATH"))
                        })?;
                        Ok((name.trim().to_string(), PathBuf::from(path.trim())))
                    })
                    .collect::<Result<_>>()?
            }
            "eval.alpha" => self.alpha = parse(key, value)?,
            "output.snapshots" => self.snapshots = parse(key, value)?,
            other => return Err(Error::invalid(format!("unknown configuration key `{other}`"))),
        }
        Ok(())
    }

    /// All settings that can change the output, as `(key, value)` pairs.
    /// The output directory is left out: it does not affect any result.
    pub fn entries(&self) -> Vec<(String, String)> {
        let join = |v: &[f64]| v.iter().map(f64::to_string).collect::<Vec<_>>().join(",");
        let competitors = if self.competitors.is_empty() {
            "none".to_string()
        } else {
            self.competitors
                .iter()
                .map(|(n, p)| format!("{n}={}", p.display()))
                .collect::<Vec<_>>()
                .join(",")
        };
        let pairs: Vec<(&str, String)> = vec![
            ("input", show_path(&self.input)),
            ("seed", self.seed.to_string()),
            ("k", self.k.map_or("auto".into(), |k| k.to_string())),
            ("upsample", self.upsample.name().into()),
            ("normalize.percentile", self.normalize_percentile.to_string()),
            ("sampler.patch_size", self.sampler.patch_size.to_string()),
            ("sampler.patches_per_slice", self.sampler.patches_per_slice.to_string()),
            ("sampler.angles", join(&self.sampler.angles_deg)),
            ("sampler.foreground_threshold", self.sampler.foreground_threshold.to_string()),
            ("network.blocks", self.arch.blocks.to_string()),
            ("network.features", self.arch.features.to_string()),
            ("train.steps", self.train.steps.to_string()),
            ("train.batch_size", self.train.batch_size.to_string()),
            ("train.lr", self.train.lr.to_string()),
            ("train.lr_halving_every", self.train.lr_halving_every.to_string()),
            ("train.adam_beta1", self.train.adam.beta1.to_string()),
            ("train.adam_beta2", self.train.adam.beta2.to_string()),
            ("train.adam_eps", self.train.adam.eps.to_string()),
            ("train.fine_tune_from", show_path(&self.train.fine_tune_from)),
            ("fuse.p", self.fuse.p.to_string()),
            ("fuse.smoothing_sigma", self.fuse.magnitude_smoothing_sigma.to_string()),
            ("eval.reference", show_path(&self.reference)),
            ("eval.competitors", competitors),
            ("eval.alpha", self.alpha.to_string()),
            ("output.snapshots", self.snapshots.to_string()),
        ];
        pairs.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
    }

    /// Checks values and that every referenced input file exists.
    pub fn validate(&self) -> Result<()> {
        let input = self
            .input
            .as_ref()
            .ok_or_else(|| Error::invalid("no input volume configured (`input`)"))?;
        let mut paths: Vec<(&str, &Path)> = vec![("input", input.as_path())];
        if let Some(p) = &self.reference {
            paths.push(("eval.reference", p));
        }
        if let Some(p) = &self.train.fine_tune_from {
            paths.push(("train.fine_tune_from", p));
        }
        for (_, p) in &self.competitors {
            paths.push(("eval.competitors", p));
        }
        for (key, p) in paths {
            if !p.is_file() {
                return Err(Error::invalid(format!("`{key}` file {} does not exist", p.display())));
            }
        }
        if let Some(k) = self.k {
            if !(k > 1.0 && k.is_finite()) {
                return Err(Error::invalid(format!("k = {k}: nothing to super-resolve unless k > 1")));
            }
        }
        if !(self.normalize_percentile > 0.0 && self.normalize_percentile <= 100.0) {
            return Err(Error::invalid(format!(
                "normalize.percentile {} outside (0, 100]",
                self.normalize_percentile
            )));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::invalid(format!("eval.alpha {} outside (0, 1)", self.alpha)));
        }
        let mut names: Vec<&str> = self.competitors.iter().map(|(n, _)| n.as_str()).collect();
        names.extend(super::BUILTIN_METHODS);
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::invalid("competitor names must be unique and differ from built-in methods"));
        }
        self.sampler.validate()?;
        Architecture::new(self.arch.blocks, self.arch.features)?;
        self.train.validate()?;
        self.fuse.validate()
    }
}
