//! Dataset manifests, CSV tensors and sample validation.
//!
//! A manifest is a `key=value` text file. Required keys: `split`, `d_x`,
//! `seen`, `unseen`, `aux` (comma-separated class names), `features`,
//! `labels`, and `aux_probs` (paths relative to the manifest). Optional:
//! `seed`, `taxonomy`, `embeddings`. Data files are headerless CSV, one row
//! per sample; label columns cover seen then unseen classes.

pub mod synth;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::graph::GraphMode;

pub use synth::{synth_generate, SynthBenchmark, SynthSpec};

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub id: String,
    pub x_feat: Vec<f64>,
    /// 0/1 over seen then unseen classes.
    pub labels: Vec<f64>,
    pub p_a: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetManifest {
    pub split: GraphMode,
    pub d_x: usize,
    pub seen: Vec<String>,
    pub unseen: Vec<String>,
    pub aux: Vec<String>,
    pub features: PathBuf,
    pub labels: PathBuf,
    pub aux_probs: Option<PathBuf>,
    pub seed: Option<u64>,
    pub taxonomy: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
}

const KEYS: [&str; 11] = [
    "split",
    "d_x",
    "seed",
    "seen",
    "unseen",
    "aux",
    "features",
    "labels",
    "aux_probs",
    "taxonomy",
    "embeddings",
];

fn split_list(v: &str) -> Vec<String> {
    v.split(',').map(str::trim).filter(|s| !s.is_empty()).map(str::to_string).collect()
}

impl DatasetManifest {
    /// Parses manifest text. Relative paths are resolved against `base`.
    pub fn parse(text: &str, origin: &Path, base: &Path) -> Result<Self> {
        let perr = |line: usize, msg: String| Error::Parse {
            path: origin.to_path_buf(),
            line,
            msg,
        };
        let mut kv: BTreeMap<&str, (usize, &str)> = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| perr(i + 1, format!("expected key=value, got `{line}`")))?;
            let k = k.trim();
            if !KEYS.contains(&k) {
                return Err(perr(i + 1, format!("unknown manifest key `{k}`")));
            }
            if kv.insert(k, (i + 1, v.trim())).is_some() {
                return Err(perr(i + 1, format!("duplicate manifest key `{k}`")));
            }
        }
        let get = |k: &str| kv.get(k).copied();
        let need = |k: &str| get(k).ok_or_else(|| perr(0, format!("missing manifest key `{k}`")));
        let path = |k: &str| get(k).map(|(_, v)| base.join(v));

        let (l, split) = need("split")?;
        let split = split.parse().map_err(|_| perr(l, format!("split must be train or test, got `{split}`")))?;
        let (l, d_x) = need("d_x")?;
        let d_x = d_x
            .parse::<usize>()
            .ok()
            .filter(|&d| d > 0)
            .ok_or_else(|| perr(l, format!("d_x must be a positive integer, got `{d_x}`")))?;
        let seed = match get("seed") {
            Some((l, s)) => Some(s.parse().map_err(|_| perr(l, format!("bad seed `{s}`")))?),
            None => None,
        };
        let seen = split_list(need("seen")?.1);
        if seen.is_empty() {
            return Err(perr(need("seen")?.0, "no seen classes".into()));
        }
        Ok(Self {
            split,
            d_x,
            seen,
            unseen: split_list(need("unseen")?.1),
            aux: split_list(need("aux")?.1),
            features: base.join(need("features")?.1),
            labels: base.join(need("labels")?.1),
            aux_probs: path("aux_probs"),
            seed,
            taxonomy: path("taxonomy"),
            embeddings: path("embeddings"),
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, path, base)
    }

    /// Manifest text with paths written relative to `base` where possible.
    pub fn to_text(&self, base: &Path) -> String {
        let rel = |p: &Path| p.strip_prefix(base).unwrap_or(p).display().to_string();
        let mut out = String::new();
        let _ = writeln!(out, "split={}", self.split);
        let _ = writeln!(out, "d_x={}", self.d_x);
        if let Some(s) = self.seed {
            let _ = writeln!(out, "seed={s}");
        }
        let _ = writeln!(out, "seen={}", self.seen.join(","));
        let _ = writeln!(out, "unseen={}", self.unseen.join(","));
        let _ = writeln!(out, "aux={}", self.aux.join(","));
        let _ = writeln!(out, "features={}", rel(&self.features));
        let _ = writeln!(out, "labels={}", rel(&self.labels));
        for (k, p) in [
            ("aux_probs", &self.aux_probs),
            ("taxonomy", &self.taxonomy),
            ("embeddings", &self.embeddings),
        ] {
            if let Some(p) = p {
                let _ = writeln!(out, "{k}={}", rel(p));
            }
        }
        out
    }

    pub fn n_labels(&self) -> usize {
        self.seen.len() + self.unseen.len()
    }
}

/// Reads a headerless numeric CSV.
pub fn read_csv(path: &Path) -> Result<Vec<Vec<f64>>> {
    let text = std::fs::read_to_string(path)?;
    parse_csv(&text, path)
}

pub fn parse_csv(text: &str, origin: &Path) -> Result<Vec<Vec<f64>>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            l.split(',')
                .map(|f| {
                    f.trim().parse::<f64>().map_err(|_| Error::Parse {
                        path: origin.to_path_buf(),
                        line: i + 1,
                        msg: format!("non-numeric field `{f}`"),
                    })
                })
                .collect()
        })
        .collect()
}

pub fn format_csv(rows: &[Vec<f64>]) -> String {
    let mut out = String::new();
    for row in rows {
        for (j, v) in row.iter().enumerate() {
            if j > 0 {
                out.push(',');
            }
            let _ = write!(out, "{v}");
        }
        out.push('\n');
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub samples: Vec<Sample>,
}

impl Dataset {
    /// Loads and validates. `require_aux` makes a missing `aux_probs` file
    /// an error (variants with auxiliary nodes need it).
    pub fn load(manifest_path: impl AsRef<Path>, require_aux: bool) -> Result<Self> {
        let manifest = DatasetManifest::load(manifest_path)?;
        let features = read_csv(&manifest.features)?;
        let labels = read_csv(&manifest.labels)?;
        let aux = match &manifest.aux_probs {
            Some(p) => Some(read_csv(p)?),
            None if require_aux => {
                return Err(Error::Config("manifest has no aux_probs file, which this variant needs".into()));
            }
            None => None,
        };
        Self::from_rows(manifest, features, labels, aux)
    }

    pub fn from_rows(
        manifest: DatasetManifest,
        features: Vec<Vec<f64>>,
        labels: Vec<Vec<f64>>,
        aux: Option<Vec<Vec<f64>>>,
    ) -> Result<Self> {
        let split = manifest.split.to_string();
        let counts = |what: &str, n: usize| {
            if n != features.len() {
                Err(Error::Validation {
                    sample: format!("{split}_{}", n.min(features.len())),
                    msg: format!("{what} has {n} rows, features has {}", features.len()),
                })
            } else {
                Ok(())
            }
        };
        counts("labels", labels.len())?;
        if let Some(a) = &aux {
            counts("aux_probs", a.len())?;
        }
        let mut aux_rows = aux.map(|a| a.into_iter());
        let samples = features
            .into_iter()
            .zip(labels)
            .enumerate()
            .map(|(i, (x, y))| {
                let sample = Sample {
                    id: format!("{split}_{i}"),
                    x_feat: x,
                    labels: y,
                    p_a: aux_rows.as_mut().and_then(Iterator::next),
                };
                validate_sample(&sample, &manifest)?;
                Ok(sample)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { manifest, samples })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Writes `manifest` text plus the three CSVs named in it.
    pub fn write(&self, manifest_path: &Path) -> Result<()> {
        let base = manifest_path.parent().unwrap_or(Path::new("."));
        let m = &self.manifest;
        let rows = |f: fn(&Sample) -> Option<&Vec<f64>>| -> Vec<Vec<f64>> {
            self.samples.iter().filter_map(|s| f(s).cloned()).collect()
        };
        std::fs::write(&m.features, format_csv(&rows(|s| Some(&s.x_feat))))?;
        std::fs::write(&m.labels, format_csv(&rows(|s| Some(&s.labels))))?;
        if let Some(p) = &m.aux_probs {
            std::fs::write(p, format_csv(&rows(|s| s.p_a.as_ref())))?;
        }
        std::fs::write(manifest_path, m.to_text(base))?;
        Ok(())
    }
}

/// Checks the per-sample rules: widths, 0/1 labels with at least one
/// positive, no unseen positives in a train split, `p^a` within `[0, 1]`.
pub fn validate_sample(sample: &Sample, manifest: &DatasetManifest) -> Result<()> {
    let fail = |msg: String| {
        Err(Error::Validation {
            sample: sample.id.clone(),
            msg,
        })
    };
    if sample.x_feat.len() != manifest.d_x {
        return fail(format!("{} features, manifest declares d_x = {}", sample.x_feat.len(), manifest.d_x));
    }
    if let Some(v) = sample.x_feat.iter().find(|v| !v.is_finite()) {
        return fail(format!("non-finite feature {v}"));
    }
    if sample.labels.len() != manifest.n_labels() {
        return fail(format!("{} label columns, expected {}", sample.labels.len(), manifest.n_labels()));
    }
    if let Some(v) = sample.labels.iter().find(|v| **v != 0.0 && **v != 1.0) {
        return fail(format!("label {v} is not 0 or 1"));
    }
    if !sample.labels.contains(&1.0) {
        return fail("no positive label".into());
    }
    let n_s = manifest.seen.len();
    if manifest.split == GraphMode::Train {
        if let Some(j) = sample.labels[n_s..].iter().position(|v| *v == 1.0) {
            return fail(format!(
                "train split has a positive unseen label `{}`",
                manifest.unseen[j]
            ));
        }
    }
    if let Some(p) = &sample.p_a {
        if p.len() != manifest.aux.len() {
            return fail(format!("{} aux probabilities, manifest lists {} aux classes", p.len(), manifest.aux.len()));
        }
        if let Some(v) = p.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return fail(format!("aux probability {v} outside [0, 1]"));
        }
    }
    Ok(())
}
