//! Run configuration and its flat `key = value` file format.
//!
//! Blank lines and `#` comments are ignored. Unknown keys are an error.
//! Empty values mean "unset" for the optional path keys.

use std::fmt::Write;
use std::path::PathBuf;

use crate::augment::{Resolution, ScaleSet};
use crate::episodes::EvalSettings;
use crate::error::{Error, Result};
use crate::extractor::ExtractorConfig;
use crate::head::HeadConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub command: String,
    /// Image directory or feature file; the synthetic dataset when unset.
    pub dataset: Option<PathBuf>,
    pub toy_classes: usize,
    pub toy_samples: usize,
    pub toy_resolution: usize,
    pub toy_seed: u64,
    pub n_way: usize,
    pub k_shot: usize,
    pub q_queries: usize,
    pub episodes: usize,
    pub seed: u64,
    pub k: usize,
    pub tau: f64,
    pub omega: f64,
    pub use_weight: bool,
    pub use_pow: bool,
    pub use_protoaug: bool,
    pub multiscale_queries: bool,
    pub scales: Vec<Resolution>,
    pub extractor_seed: u64,
    pub extractor_dim: usize,
    pub extractor_hidden: usize,
    pub extractor_strides: Vec<usize>,
    pub learning_rate: f64,
    pub steps: usize,
    pub output: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let head = HeadConfig::default();
        let ex = ExtractorConfig::default();
        Self {
            command: "eval".into(),
            dataset: None,
            toy_classes: 20,
            toy_samples: 50,
            toy_resolution: 84,
            toy_seed: 1,
            n_way: 5,
            k_shot: 1,
            q_queries: 15,
            episodes: 500,
            seed: 0,
            k: head.k,
            tau: head.tau,
            omega: head.omega,
            use_weight: head.use_weight,
            use_pow: head.use_pow,
            use_protoaug: head.use_protoaug,
            multiscale_queries: head.multiscale_queries,
            scales: ScaleSet::default().resolutions().to_vec(),
            extractor_seed: ex.seed,
            extractor_dim: ex.out_dim,
            extractor_hidden: ex.hidden_dim,
            extractor_strides: ex.strides,
            learning_rate: 0.5,
            steps: 50,
            output: None,
        }
    }
}

fn path_text(p: &Option<PathBuf>) -> String {
    p.as_ref().map(|p| p.display().to_string()).unwrap_or_default()
}

fn list<T: ToString>(items: &[T]) -> String {
    items.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    pub fn head(&self) -> HeadConfig {
        HeadConfig {
            k: self.k,
            tau: self.tau,
            omega: self.omega,
            use_weight: self.use_weight,
            use_pow: self.use_pow,
            use_protoaug: self.use_protoaug,
            multiscale_queries: self.multiscale_queries,
        }
    }

    pub fn extractor(&self) -> ExtractorConfig {
        ExtractorConfig {
            seed: self.extractor_seed,
            num_layers: self.extractor_strides.len(),
            hidden_dim: self.extractor_hidden,
            out_dim: self.extractor_dim,
            strides: self.extractor_strides.clone(),
        }
    }

    pub fn eval_settings(&self) -> Result<EvalSettings> {
        let settings = EvalSettings {
            n_way: self.n_way,
            k_shot: self.k_shot,
            q_queries: self.q_queries,
            num_episodes: self.episodes,
            seed: self.seed,
            head: self.head(),
            scales: ScaleSet::new(self.scales.clone())?,
            extractor: self.extractor(),
        };
        settings.head.validate()?;
        settings.extractor.validate()?;
        Ok(settings)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let rows: [(&str, String); 26] = [
            ("command", self.command.clone()),
            ("dataset", path_text(&self.dataset)),
            ("toy_classes", self.toy_classes.to_string()),
            ("toy_samples", self.toy_samples.to_string()),
            ("toy_resolution", self.toy_resolution.to_string()),
            ("toy_seed", self.toy_seed.to_string()),
            ("n_way", self.n_way.to_string()),
            ("k_shot", self.k_shot.to_string()),
            ("q_queries", self.q_queries.to_string()),
            ("episodes", self.episodes.to_string()),
            ("seed", self.seed.to_string()),
            ("k", self.k.to_string()),
            ("tau", format!("{:?}", self.tau)),
            ("omega", format!("{:?}", self.omega)),
            ("use_weight", self.use_weight.to_string()),
            ("use_pow", self.use_pow.to_string()),
            ("use_protoaug", self.use_protoaug.to_string()),
            ("multiscale_queries", self.multiscale_queries.to_string()),
            ("scales", list(&self.scales)),
            ("extractor_seed", self.extractor_seed.to_string()),
            ("extractor_dim", self.extractor_dim.to_string()),
            ("extractor_hidden", self.extractor_hidden.to_string()),
            ("extractor_strides", list(&self.extractor_strides)),
            ("learning_rate", format!("{:?}", self.learning_rate)),
            ("steps", self.steps.to_string()),
            ("output", path_text(&self.output)),
        ];
        for (k, v) in rows {
            writeln!(out, "{k} = {v}").unwrap();
        }
        out
    }

    /// Parses a config file on top of `self`.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected `key = value`", n + 1))
            })?;
            self.set(key.trim(), value.trim())
                .map_err(|e| Error::Config(format!("line {}: {e}", n + 1)))?;
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse()
                .map_err(|_| Error::Config(format!("{key}: cannot parse {v:?}")))
        }
        fn flag(key: &str, v: &str) -> Result<bool> {
            match v {
                "true" | "1" | "yes" | "on" => Ok(true),
                "false" | "0" | "no" | "off" => Ok(false),
                _ => Err(Error::Config(format!("{key}: expected true/false, got {v:?}"))),
            }
        }
        fn path(v: &str) -> Option<PathBuf> {
            (!v.is_empty()).then(|| PathBuf::from(v))
        }
        fn nums<T: std::str::FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
            v.split(',').map(|s| num(key, s.trim())).collect()
        }
        match key {
            "command" => self.command = value.to_owned(),
            "dataset" => self.dataset = path(value),
            "toy_classes" => self.toy_classes = num(key, value)?,
            "toy_samples" => self.toy_samples = num(key, value)?,
            "toy_resolution" => self.toy_resolution = num(key, value)?,
            "toy_seed" => self.toy_seed = num(key, value)?,
            "n_way" => self.n_way = num(key, value)?,
            "k_shot" => self.k_shot = num(key, value)?,
            "q_queries" => self.q_queries = num(key, value)?,
            "episodes" => self.episodes = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "k" => self.k = num(key, value)?,
            "tau" => self.tau = num(key, value)?,
            "omega" => self.omega = num(key, value)?,
            "use_weight" => self.use_weight = flag(key, value)?,
            "use_pow" => self.use_pow = flag(key, value)?,
            "use_protoaug" => self.use_protoaug = flag(key, value)?,
            "multiscale_queries" => self.multiscale_queries = flag(key, value)?,
            "scales" => self.scales = nums(key, value)?,
            "extractor_seed" => self.extractor_seed = num(key, value)?,
            "extractor_dim" => self.extractor_dim = num(key, value)?,
            "extractor_hidden" => self.extractor_hidden = num(key, value)?,
            "extractor_strides" => self.extractor_strides = nums(key, value)?,
            "learning_rate" => self.learning_rate = num(key, value)?,
            "steps" => self.steps = num(key, value)?,
            "output" => self.output = path(value),
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }
}
