//! Flat `key = value` run configuration covering the synthetic world,
//! training and evaluation. Lines starting with `#` (and trailing `# ...`)
//! are comments; lists are comma-separated; palette colours are separated by
//! `;`. Unknown keys are rejected.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::data::{Rgb, SyntheticWorldConfig};
use crate::error::{Error, Result};
use crate::evaluation::EvalConfig;
use crate::models::Checkpoint;
use crate::training::{BaseKind, DiversityMode, TrainConfig};

pub const SEED_ENV: &str = "DIVSYNTH_SEED";

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub world: SyntheticWorldConfig,
    pub train_count: usize,
    pub test_count: usize,
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            world: SyntheticWorldConfig::default(),
            train_count: 256,
            test_count: 64,
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

/// Every key in output order.
pub const KEYS: &[&str] = &[
    "seed",
    "world_seed",
    "width",
    "height",
    "class_names",
    "palette",
    "roof_rows",
    "window_rows",
    "window_cols",
    "window_size",
    "door_width",
    "door_height",
    "illumination",
    "shading",
    "min_angle_deg",
    "train_count",
    "test_count",
    "base",
    "epochs",
    "lr",
    "adam_b1",
    "adam_b2",
    "adam_eps",
    "alpha",
    "beta",
    "lambda_c",
    "lambda_k",
    "log_eps",
    "diversity",
    "checkpoint_every",
    "augment",
    "jitter",
    "flip_prob",
    "unet_widths",
    "dropout",
    "disc_widths",
    "crn_base",
    "crn_doublings",
    "crn_channels",
    "crn_outputs",
    "phi_widths",
    "phi_seed",
    "eval_samples",
    "eval_layouts",
    "eval_seed",
    "reality_samples",
    "linkage_steps",
    "diversity_ratio_min",
    "linkage_min",
    "accuracy_gap_max",
];

fn num<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.trim()
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {v:?}")))
}

fn list<T: FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
    v.split(',').map(|x| num(key, x)).collect()
}

fn pair(key: &str, v: &str) -> Result<(usize, usize)> {
    match list::<usize>(key, v)?[..] {
        [a, b] => Ok((a, b)),
        _ => Err(Error::Config(format!("{key}: expected two values"))),
    }
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

fn boolean(key: &str, v: &str) -> Result<bool> {
    match v.trim() {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected true or false, got {v:?}"))),
    }
}

impl RunConfig {
    /// Sets one key from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        let w = &mut self.world;
        let t = &mut self.train;
        let e = &mut self.eval;
        match key {
            "seed" => t.seed = num(key, v)?,
            "world_seed" => w.seed = num(key, v)?,
            "width" => w.width = num(key, v)?,
            "height" => w.height = num(key, v)?,
            "class_names" => w.class_names = v.split(',').map(|s| s.trim().to_string()).collect(),
            "palette" => {
                w.palette = v
                    .split(';')
                    .map(|c| match c
                        .split_whitespace()
                        .map(|x| num(key, x))
                        .collect::<Result<Vec<f32>>>()?[..]
                    {
                        [r, g, b] => Ok::<Rgb, Error>([r, g, b]),
                        _ => Err(Error::Config(format!("palette colour {c:?} needs 3 values"))),
                    })
                    .collect::<Result<_>>()?
            }
            "roof_rows" => w.roof_rows = pair(key, v)?,
            "window_rows" => w.window_rows = pair(key, v)?,
            "window_cols" => w.window_cols = pair(key, v)?,
            "window_size" => w.window_size = pair(key, v)?,
            "door_width" => w.door_width = pair(key, v)?,
            "door_height" => w.door_height = pair(key, v)?,
            "illumination" => match list::<f32>(key, v)?[..] {
                [a, b] => w.illumination = (a, b),
                _ => return Err(Error::Config("illumination: expected two values".into())),
            },
            "shading" => w.shading = num(key, v)?,
            "min_angle_deg" => w.min_angle_deg = num(key, v)?,
            "train_count" => self.train_count = num(key, v)?,
            "test_count" => self.test_count = num(key, v)?,
            "base" => t.base = BaseKind::parse(v)?,
            "epochs" => t.epochs = num(key, v)?,
            "lr" => t.lr = num(key, v)?,
            "adam_b1" => t.adam_b1 = num(key, v)?,
            "adam_b2" => t.adam_b2 = num(key, v)?,
            "adam_eps" => t.adam_eps = num(key, v)?,
            "alpha" => t.loss.alpha = num(key, v)?,
            "beta" => t.loss.beta = num(key, v)?,
            "lambda_c" => t.loss.lambda_c = list(key, v)?,
            "lambda_k" => t.loss.lambda_k = list(key, v)?,
            "log_eps" => t.loss.log_eps = num(key, v)?,
            "diversity" => t.diversity = DiversityMode::parse(v)?,
            "checkpoint_every" => t.checkpoint_every = num(key, v)?,
            "augment" => t.augment = boolean(key, v)?,
            "jitter" => t.jitter = num(key, v)?,
            "flip_prob" => t.flip_prob = num(key, v)?,
            "unet_widths" => t.unet_widths = list(key, v)?,
            "dropout" => t.dropout = num(key, v)?,
            "disc_widths" => t.disc_widths = list(key, v)?,
            "crn_base" => t.crn_base = num(key, v)?,
            "crn_doublings" => t.crn_doublings = num(key, v)?,
            "crn_channels" => t.crn_channels = num(key, v)?,
            "crn_outputs" => t.crn_outputs = num(key, v)?,
            "phi_widths" => t.phi_widths = list(key, v)?,
            "phi_seed" => t.phi_seed = num(key, v)?,
            "eval_samples" => e.samples = num(key, v)?,
            "eval_layouts" => e.layouts = num(key, v)?,
            "eval_seed" => e.seed = num(key, v)?,
            "reality_samples" => e.reality_samples = num(key, v)?,
            "linkage_steps" => e.linkage_steps = list(key, v)?,
            "diversity_ratio_min" => e.diversity_ratio_min = num(key, v)?,
            "linkage_min" => e.linkage_min = num(key, v)?,
            "accuracy_gap_max" => e.accuracy_gap_max = num(key, v)?,
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    /// Textual value of one key, in a form [`set`](Self::set) accepts.
    pub fn get(&self, key: &str) -> Result<String> {
        let w = &self.world;
        let t = &self.train;
        let e = &self.eval;
        let p = |(a, b): (usize, usize)| format!("{a},{b}");
        Ok(match key {
            "seed" => t.seed.to_string(),
            "world_seed" => w.seed.to_string(),
            "width" => w.width.to_string(),
            "height" => w.height.to_string(),
            "class_names" => w.class_names.join(","),
            "palette" => w
                .palette
                .iter()
                .map(|c| format!("{} {} {}", c[0], c[1], c[2]))
                .collect::<Vec<_>>()
                .join("; "),
            "roof_rows" => p(w.roof_rows),
            "window_rows" => p(w.window_rows),
            "window_cols" => p(w.window_cols),
            "window_size" => p(w.window_size),
            "door_width" => p(w.door_width),
            "door_height" => p(w.door_height),
            "illumination" => format!("{},{}", w.illumination.0, w.illumination.1),
            "shading" => w.shading.to_string(),
            "min_angle_deg" => w.min_angle_deg.to_string(),
            "train_count" => self.train_count.to_string(),
            "test_count" => self.test_count.to_string(),
            "base" => t.base.name().into(),
            "epochs" => t.epochs.to_string(),
            "lr" => t.lr.to_string(),
            "adam_b1" => t.adam_b1.to_string(),
            "adam_b2" => t.adam_b2.to_string(),
            "adam_eps" => t.adam_eps.to_string(),
            "alpha" => t.loss.alpha.to_string(),
            "beta" => t.loss.beta.to_string(),
            "lambda_c" => join(&t.loss.lambda_c),
            "lambda_k" => join(&t.loss.lambda_k),
            "log_eps" => t.loss.log_eps.to_string(),
            "diversity" => t.diversity.name().into(),
            "checkpoint_every" => t.checkpoint_every.to_string(),
            "augment" => t.augment.to_string(),
            "jitter" => t.jitter.to_string(),
            "flip_prob" => t.flip_prob.to_string(),
            "unet_widths" => join(&t.unet_widths),
            "dropout" => t.dropout.to_string(),
            "disc_widths" => join(&t.disc_widths),
            "crn_base" => t.crn_base.to_string(),
            "crn_doublings" => t.crn_doublings.to_string(),
            "crn_channels" => t.crn_channels.to_string(),
            "crn_outputs" => t.crn_outputs.to_string(),
            "phi_widths" => join(&t.phi_widths),
            "phi_seed" => t.phi_seed.to_string(),
            "eval_samples" => e.samples.to_string(),
            "eval_layouts" => e.layouts.to_string(),
            "eval_seed" => e.seed.to_string(),
            "reality_samples" => e.reality_samples.to_string(),
            "linkage_steps" => join(&e.linkage_steps),
            "diversity_ratio_min" => e.diversity_ratio_min.to_string(),
            "linkage_min" => e.linkage_min.to_string(),
            "accuracy_gap_max" => e.accuracy_gap_max.to_string(),
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        })
    }

    /// Applies `key = value` lines on top of `self`.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", i + 1)))?;
            self.set(k.trim(), v)
                .map_err(|e| Error::Config(format!("line {}: {e}", i + 1)))?;
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut c = Self::default();
        c.apply_text(text)?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Seed override from the environment, if set.
    pub fn apply_env(&mut self) -> Result<()> {
        if let Ok(v) = std::env::var(SEED_ENV) {
            self.set("seed", &v)
                .map_err(|_| Error::Config(format!("{SEED_ENV}: cannot parse {v:?}")))?;
        }
        Ok(())
    }

    /// Fully resolved config, one key per line.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for k in KEYS {
            let _ = writeln!(s, "{k} = {}", self.get(k).expect("listed key"));
        }
        s
    }

    pub fn validate(&self) -> Result<()> {
        self.world.validate()?;
        if self.train_count == 0 {
            return Err(Error::Config("train_count must be at least 1".into()));
        }
        self.train.validate(self.world.class_count())?;
        self.eval.validate()
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let text = String::from_utf8(ck.bytes("meta.config")?)
            .map_err(|_| Error::Checkpoint("meta.config is not UTF-8".into()))?;
        Self::parse(&text).map_err(|e| Error::Checkpoint(format!("stored config: {e}")))
    }
}
