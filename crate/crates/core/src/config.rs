//! Flat `key = value` run configuration.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use crate::controller::{LossKind, TrainConfig};
use crate::dataio::{fingerprint, GenerationMode};
use crate::error::{Error, Result};
use crate::latent::{GeneratorMode, SvmConfig, WorldConfig};
use crate::model::ParamDims;

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub world: WorldConfig,
    pub param_dims: ParamDims,
    pub basis_seed: u64,
    pub basis_vertices: usize,
    pub hyperplane_samples: usize,
    pub hyperplane_seed: u64,
    pub svm: SvmConfig,
    pub dataset_size: usize,
    pub dataset_seed: u64,
    pub dataset_mode: GenerationMode,
    pub train: TrainConfig,
    pub eval_folds: usize,
    pub eval_seed: u64,
    pub reference_size: usize,
    pub reference_seed: u64,
    pub test_fraction: f64,
    /// `None` uses the default trace-scaled shrinkage.
    pub shrinkage: Option<f64>,
    pub fit_lambda_reg: f64,
    pub fit_max_iters: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let param_dims = ParamDims {
            k_id: 16,
            k_expr: 8,
            k_tex: 16,
        };
        Self {
            world: WorldConfig {
                param_dim: param_dims.flat(),
                ..WorldConfig::default()
            },
            param_dims,
            basis_seed: 1,
            basis_vertices: 642,
            hyperplane_samples: 2000,
            hyperplane_seed: 17,
            svm: SvmConfig::default(),
            dataset_size: 20_000,
            dataset_seed: 11,
            dataset_mode: GenerationMode::Direct,
            train: TrainConfig::default(),
            eval_folds: 5,
            eval_seed: 5,
            reference_size: 10_000,
            reference_seed: 99,
            test_fraction: 0.2,
            shrinkage: None,
            fit_lambda_reg: 1e-8,
            fit_max_iters: 200,
        }
    }
}

fn parse<V: FromStr>(v: &str) -> std::result::Result<V, String>
where
    V::Err: Display,
{
    v.parse::<V>().map_err(|e| format!("cannot parse `{v}`: {e}"))
}

fn parse_attributes(v: &str) -> std::result::Result<Vec<(String, f64)>, String> {
    v.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|item| match item.split_once(':') {
            Some((name, s)) => Ok((name.trim().to_string(), parse(s.trim())?)),
            None => Ok((item.to_string(), 2.0)),
        })
        .collect()
}

fn mode_name(m: GeneratorMode) -> &'static str {
    match m {
        GeneratorMode::Linear => "linear",
        GeneratorMode::Nonlinear => "nonlinear",
    }
}

impl RunConfig {
    /// Every key with its resolved value, in a stable order.
    pub fn entries(&self) -> BTreeMap<&'static str, String> {
        let w = &self.world;
        let t = &self.train;
        let mut m = BTreeMap::new();
        let mut put = |k: &'static str, v: String| {
            m.insert(k, v);
        };
        put("world.seed", w.seed.to_string());
        put("world.latent_dim", w.latent_dim.to_string());
        put("world.generator", mode_name(w.mode).into());
        put("world.hidden", w.hidden.to_string());
        put("world.linear_gain", w.linear_gain.to_string());
        put("world.nonlinear_gain", w.nonlinear_gain.to_string());
        put("world.attribute_coupling", w.attribute_coupling.to_string());
        put("world.attribute_bias", w.attribute_bias.to_string());
        put("world.min_angle_deg", w.min_angle_deg.to_string());
        put(
            "world.attributes",
            w.attributes.iter().map(|(n, s)| format!("{n}:{s}")).collect::<Vec<_>>().join(","),
        );
        put("model.k_id", self.param_dims.k_id.to_string());
        put("model.k_expr", self.param_dims.k_expr.to_string());
        put("model.k_tex", self.param_dims.k_tex.to_string());
        put("model.seed", self.basis_seed.to_string());
        put("model.vertices", self.basis_vertices.to_string());
        put("hyperplane.samples", self.hyperplane_samples.to_string());
        put("hyperplane.seed", self.hyperplane_seed.to_string());
        put("hyperplane.lambda", self.svm.lambda.to_string());
        put("hyperplane.iterations", self.svm.iterations.to_string());
        put("dataset.size", self.dataset_size.to_string());
        put("dataset.seed", self.dataset_seed.to_string());
        put(
            "dataset.mode",
            match self.dataset_mode {
                GenerationMode::Direct => "direct".into(),
                GenerationMode::Fitted => "fitted".into(),
            },
        );
        put("train.epochs", t.epochs.to_string());
        put("train.batch_size", t.batch_size.to_string());
        put("train.learning_rate", t.learning_rate.to_string());
        put("train.final_lr_fraction", t.final_lr_fraction.to_string());
        put("train.beta1", t.beta1.to_string());
        put("train.beta2", t.beta2.to_string());
        put("train.epsilon", t.epsilon.to_string());
        put("train.weight_decay", t.weight_decay.to_string());
        put("train.seed", t.seed.to_string());
        put("train.hidden", t.hidden.to_string());
        put("train.hidden_layers", t.hidden_layers.to_string());
        put("train.swap_probability", t.swap_probability.to_string());
        put(
            "train.loss",
            match t.loss {
                LossKind::Norm => "norm".into(),
                LossKind::Squared => "squared".into(),
            },
        );
        put("eval.folds", self.eval_folds.to_string());
        put("eval.seed", self.eval_seed.to_string());
        put("eval.reference_size", self.reference_size.to_string());
        put("eval.reference_seed", self.reference_seed.to_string());
        put("eval.test_fraction", self.test_fraction.to_string());
        put("eval.shrinkage", self.shrinkage.map_or_else(|| "auto".into(), |e| e.to_string()));
        put("fit.lambda_reg", self.fit_lambda_reg.to_string());
        put("fit.max_iters", self.fit_max_iters.to_string());
        m
    }

    fn set(&mut self, key: &str, v: &str) -> std::result::Result<(), String> {
        let w = &mut self.world;
        let t = &mut self.train;
        match key {
            "world.seed" => w.seed = parse(v)?,
            "world.latent_dim" => w.latent_dim = parse(v)?,
            "world.generator" => w.mode = parse::<GeneratorMode>(v)?,
            "world.hidden" => w.hidden = parse(v)?,
            "world.linear_gain" => w.linear_gain = parse(v)?,
            "world.nonlinear_gain" => w.nonlinear_gain = parse(v)?,
            "world.attribute_coupling" => w.attribute_coupling = parse(v)?,
            "world.attribute_bias" => w.attribute_bias = parse(v)?,
            "world.min_angle_deg" => w.min_angle_deg = parse(v)?,
            "world.attributes" => w.attributes = parse_attributes(v)?,
            "model.k_id" => self.param_dims.k_id = parse(v)?,
            "model.k_expr" => self.param_dims.k_expr = parse(v)?,
            "model.k_tex" => self.param_dims.k_tex = parse(v)?,
            "model.seed" => self.basis_seed = parse(v)?,
            "model.vertices" => self.basis_vertices = parse(v)?,
            "hyperplane.samples" => self.hyperplane_samples = parse(v)?,
            "hyperplane.seed" => self.hyperplane_seed = parse(v)?,
            "hyperplane.lambda" => self.svm.lambda = parse(v)?,
            "hyperplane.iterations" => self.svm.iterations = parse(v)?,
            "dataset.size" => self.dataset_size = parse(v)?,
            "dataset.seed" => self.dataset_seed = parse(v)?,
            "dataset.mode" => self.dataset_mode = parse::<GenerationMode>(v)?,
            "train.epochs" => t.epochs = parse(v)?,
            "train.batch_size" => t.batch_size = parse(v)?,
            "train.learning_rate" => t.learning_rate = parse(v)?,
            "train.final_lr_fraction" => t.final_lr_fraction = parse(v)?,
            "train.beta1" => t.beta1 = parse(v)?,
            "train.beta2" => t.beta2 = parse(v)?,
            "train.epsilon" => t.epsilon = parse(v)?,
            "train.weight_decay" => t.weight_decay = parse(v)?,
            "train.seed" => t.seed = parse(v)?,
            "train.hidden" => t.hidden = parse(v)?,
            "train.hidden_layers" => t.hidden_layers = parse(v)?,
            "train.swap_probability" => t.swap_probability = parse(v)?,
            "train.loss" => {
                t.loss = match v {
                    "norm" => LossKind::Norm,
                    "squared" => LossKind::Squared,
                    _ => return Err(format!("unknown loss `{v}` (norm|squared)")),
                }
            }
            "eval.folds" => self.eval_folds = parse(v)?,
            "eval.seed" => self.eval_seed = parse(v)?,
            "eval.reference_size" => self.reference_size = parse(v)?,
            "eval.reference_seed" => self.reference_seed = parse(v)?,
            "eval.test_fraction" => self.test_fraction = parse(v)?,
            "eval.shrinkage" => self.shrinkage = if v == "auto" { None } else { Some(parse(v)?) },
            "fit.lambda_reg" => self.fit_lambda_reg = parse(v)?,
            "fit.max_iters" => self.fit_max_iters = parse(v)?,
            _ => return Err(format!("unknown key `{key}`")),
        }
        Ok(())
    }

    /// Parses config text over the defaults. Keys that are not set keep
    /// their default, with an info-level notice.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut seen: Vec<String> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Config {
                line: i + 1,
                reason: format!("expected `key = value`, got `{line}`"),
            })?;
            let key = key.trim();
            if seen.iter().any(|k| k == key) {
                return Err(Error::Config {
                    line: i + 1,
                    reason: format!("duplicate key `{key}`"),
                });
            }
            cfg.set(key, value.trim())
                .map_err(|reason| Error::Config { line: i + 1, reason })?;
            seen.push(key.to_string());
        }
        for (k, v) in cfg.entries() {
            if !seen.iter().any(|s| s == k) {
                log::info!("config: `{k}` not set, using default {v}");
            }
        }
        cfg.world.param_dim = cfg.param_dims.flat();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |reason: &str| Error::Config {
            line: 0,
            reason: reason.to_string(),
        };
        if self.param_dims.flat() != self.world.param_dim {
            return Err(bad("world parameter dim differs from model dims"));
        }
        if self.dataset_size == 0 || self.hyperplane_samples < 2 {
            return Err(bad("dataset and hyperplane sample counts must be positive"));
        }
        if self.eval_folds < 2 {
            return Err(bad("eval.folds must be at least 2"));
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(bad("eval.test_fraction must lie in (0, 1)"));
        }
        self.train.validate()
    }

    /// Canonical `key = value` text of the resolved config.
    pub fn to_text(&self) -> String {
        self.entries().into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// Hex SHA-256 of [`RunConfig::to_text`].
    pub fn fingerprint(&self) -> String {
        fingerprint(self.to_text().as_bytes())
    }
}
