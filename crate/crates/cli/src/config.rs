//! Flat `section.key = value` run configuration.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use kgzsl::data::SynthSpec;
use kgzsl::model::{ModelConfig, Variant};
use kgzsl::train_eval::TrainConfig;

use crate::CliError;

#[derive(Clone, Debug, PartialEq)]
pub struct Paths {
    pub taxonomy: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    pub train_manifest: Option<PathBuf>,
    pub test_manifest: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    /// `model.d_x`; taken from the manifest when unset.
    pub d_x: Option<usize>,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub checkpoint_every_epoch: bool,
    pub threshold: f64,
    pub paths: Paths,
    pub synth: SynthSpec,
    /// Keys set by a config file or flag, as opposed to defaults.
    explicit: BTreeSet<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            d_x: None,
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            checkpoint_every_epoch: false,
            threshold: 0.5,
            paths: Paths {
                taxonomy: None,
                embeddings: None,
                train_manifest: None,
                test_manifest: None,
                checkpoint: None,
                out_dir: None,
            },
            synth: SynthSpec::default(),
            explicit: BTreeSet::new(),
        }
    }
}

pub const KEYS: &[&str] = &[
    "model.d_x",
    "model.d_s",
    "model.d_h",
    "model.hidden",
    "model.layers",
    "model.variant",
    "train.lr",
    "train.lambda",
    "train.epochs",
    "train.batch_size",
    "train.patience",
    "train.plateau_eps",
    "train.decay",
    "train.min_lr",
    "train.seed",
    "train.early_stop_bce",
    "train.checkpoint_every_epoch",
    "graph.threshold",
    "paths.taxonomy",
    "paths.embeddings",
    "paths.train_manifest",
    "paths.test_manifest",
    "paths.checkpoint",
    "paths.out_dir",
    "synth.n_seen",
    "synth.n_unseen",
    "synth.n_aux",
    "synth.n_train",
    "synth.n_test",
    "synth.d_x",
    "synth.d_s",
    "synth.aux_noise",
    "synth.feature_noise",
    "synth.label_prob",
    "synth.n_domains",
];

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, CliError> {
    value
        .parse()
        .map_err(|_| CliError::Usage(format!("bad value `{value}` for `{key}`")))
}

impl RunConfig {
    /// Parses a config file; relative `paths.*` values resolve against the
    /// file's directory.
    pub fn from_file(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        let mut cfg = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CliError::Usage(format!("{}:{}: expected key = value", path.display(), i + 1)))?;
            let (k, v) = (k.trim(), v.trim());
            let v = if k.starts_with("paths.") && !v.is_empty() {
                base.join(v).display().to_string()
            } else {
                v.to_string()
            };
            cfg.set(k, &v)
                .map_err(|e| CliError::Usage(format!("{}:{}: {e}", path.display(), i + 1)))?;
        }
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        let path = || (!value.is_empty()).then(|| PathBuf::from(value));
        match key {
            "model.d_x" => self.d_x = Some(parse(key, value)?),
            "model.d_s" => self.model.d_s = parse(key, value)?,
            "model.d_h" => self.model.d_h = parse(key, value)?,
            "model.hidden" => self.model.hidden = parse(key, value)?,
            "model.layers" => self.model.layers = parse(key, value)?,
            "model.variant" => {
                self.model.variant = value.parse::<Variant>().map_err(|e| CliError::Usage(e.to_string()))?
            }
            "train.lr" => self.train.lr = parse(key, value)?,
            "train.lambda" => self.train.lambda = parse(key, value)?,
            "train.epochs" => self.train.epochs = parse(key, value)?,
            "train.batch_size" => self.train.batch_size = parse(key, value)?,
            "train.patience" => self.train.patience = parse(key, value)?,
            "train.plateau_eps" => self.train.plateau_eps = parse(key, value)?,
            "train.decay" => self.train.decay = parse(key, value)?,
            "train.min_lr" => self.train.min_lr = parse(key, value)?,
            "train.seed" => self.train.seed = parse(key, value)?,
            "train.early_stop_bce" => {
                self.train.early_stop_bce = if value.is_empty() { None } else { Some(parse(key, value)?) }
            }
            "train.checkpoint_every_epoch" => self.checkpoint_every_epoch = parse(key, value)?,
            "graph.threshold" => self.threshold = parse(key, value)?,
            "paths.taxonomy" => self.paths.taxonomy = path(),
            "paths.embeddings" => self.paths.embeddings = path(),
            "paths.train_manifest" => self.paths.train_manifest = path(),
            "paths.test_manifest" => self.paths.test_manifest = path(),
            "paths.checkpoint" => self.paths.checkpoint = path(),
            "paths.out_dir" => self.paths.out_dir = path(),
            "synth.n_seen" => self.synth.n_seen = parse(key, value)?,
            "synth.n_unseen" => self.synth.n_unseen = parse(key, value)?,
            "synth.n_aux" => self.synth.n_aux = parse(key, value)?,
            "synth.n_train" => self.synth.n_train = parse(key, value)?,
            "synth.n_test" => self.synth.n_test = parse(key, value)?,
            "synth.d_x" => self.synth.d_x = parse(key, value)?,
            "synth.d_s" => self.synth.d_s = parse(key, value)?,
            "synth.aux_noise" => self.synth.aux_noise = parse(key, value)?,
            "synth.feature_noise" => self.synth.feature_noise = parse(key, value)?,
            "synth.label_prob" => self.synth.label_prob = parse(key, value)?,
            "synth.n_domains" => self.synth.n_domains = parse(key, value)?,
            other => return Err(CliError::Usage(format!("unknown config key `{other}`"))),
        }
        self.explicit.insert(key.to_string());
        Ok(())
    }

    pub fn is_explicit(&self, key: &str) -> bool {
        self.explicit.contains(key)
    }

    /// Every key with its effective value, for run records.
    pub fn echo(&self) -> BTreeMap<String, String> {
        let p = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        let o = |v: Option<String>| v.unwrap_or_default();
        let m = &self.model;
        let t = &self.train;
        let s = &self.synth;
        let values: Vec<String> = vec![
            o(self.d_x.map(|v| v.to_string())),
            m.d_s.to_string(),
            m.d_h.to_string(),
            m.hidden.to_string(),
            m.layers.to_string(),
            m.variant.to_string(),
            t.lr.to_string(),
            t.lambda.to_string(),
            t.epochs.to_string(),
            t.batch_size.to_string(),
            t.patience.to_string(),
            t.plateau_eps.to_string(),
            t.decay.to_string(),
            t.min_lr.to_string(),
            t.seed.to_string(),
            o(t.early_stop_bce.map(|v| v.to_string())),
            self.checkpoint_every_epoch.to_string(),
            self.threshold.to_string(),
            p(&self.paths.taxonomy),
            p(&self.paths.embeddings),
            p(&self.paths.train_manifest),
            p(&self.paths.test_manifest),
            p(&self.paths.checkpoint),
            p(&self.paths.out_dir),
            s.n_seen.to_string(),
            s.n_unseen.to_string(),
            s.n_aux.to_string(),
            s.n_train.to_string(),
            s.n_test.to_string(),
            s.d_x.to_string(),
            s.d_s.to_string(),
            s.aux_noise.to_string(),
            s.feature_noise.to_string(),
            s.label_prob.to_string(),
            s.n_domains.to_string(),
        ];
        KEYS.iter().map(|k| k.to_string()).zip(values).collect()
    }

    /// Model config with `d_x` resolved (explicit key, else `manifest_d_x`).
    pub fn model_config(&self, manifest_d_x: usize) -> ModelConfig {
        ModelConfig {
            d_x: self.d_x.unwrap_or(manifest_d_x),
            ..self.model.clone()
        }
    }
}
