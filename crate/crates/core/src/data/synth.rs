//! Seeded synthetic benchmark with a semantic gap.
//!
//! Every target class gets its own taxonomy cluster holding the class and
//! its auxiliary classes, so each unseen class is WUP-adjacent to auxiliary
//! classes only. Features are sums of seen-class prototypes plus noise and
//! never carry unseen information; the auxiliary probabilities report the
//! presence of each auxiliary class's cluster owner, which is the only
//! route to the unseen labels.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Dataset, DatasetManifest, Sample};
use crate::diffcore::Rng;
use crate::embeddings::EmbeddingTable;
use crate::error::{Error, Result};
use crate::graph::{build_adjacency, ClassSpace, GraphMode, Partition};
use crate::taxonomy::Taxonomy;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub n_seen: usize,
    pub n_unseen: usize,
    pub n_aux: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub d_x: usize,
    pub d_s: usize,
    /// `σ_n`, standard deviation of the noise on auxiliary probabilities.
    pub aux_noise: f64,
    pub feature_noise: f64,
    /// Independent presence probability of each target class.
    pub label_prob: f64,
    pub n_domains: usize,
    /// WUP threshold the adjacency condition is checked at.
    pub threshold: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n_seen: 16,
            n_unseen: 8,
            n_aux: 32,
            n_train: 256,
            n_test: 128,
            d_x: 64,
            d_s: 300,
            aux_noise: 0.1,
            feature_noise: 0.5,
            label_prob: 0.15,
            n_domains: 4,
            threshold: 0.5,
        }
    }
}

impl SynthSpec {
    fn validate(&self) -> Result<()> {
        let g = |m: String| Err(Error::Generation(m));
        for (k, v) in [
            ("n_seen", self.n_seen),
            ("n_unseen", self.n_unseen),
            ("n_train", self.n_train),
            ("n_test", self.n_test),
            ("d_x", self.d_x),
            ("d_s", self.d_s),
            ("n_domains", self.n_domains),
        ] {
            if v == 0 {
                return g(format!("synth.{k} must be positive"));
            }
        }
        if self.n_aux < self.n_unseen {
            return g(format!(
                "{} auxiliary classes cannot cover {} unseen classes (each needs an auxiliary neighbour)",
                self.n_aux, self.n_unseen
            ));
        }
        if !(self.label_prob > 0.0 && self.label_prob < 1.0) {
            return g(format!("synth.label_prob must be in (0, 1), got {}", self.label_prob));
        }
        if !(self.aux_noise >= 0.0 && self.feature_noise >= 0.0) {
            return g("noise levels must be non-negative".into());
        }
        // cluster siblings sit at 0.75, domain siblings at exactly 0.5
        if !(self.threshold >= 0.5 && self.threshold < 0.75) {
            return g(format!(
                "the generated taxonomy separates clusters only for thresholds in [0.5, 0.75), got {}",
                self.threshold
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthBenchmark {
    pub spec: SynthSpec,
    pub seed: u64,
    pub taxonomy: Taxonomy,
    pub embeddings: EmbeddingTable,
    pub train: Dataset,
    pub test: Dataset,
    /// For aux class `k`, the target index (seen then unseen) whose cluster
    /// it belongs to.
    pub aux_owner: Vec<usize>,
}

fn names(prefix: &str, n: usize) -> Vec<String> {
    let width = n.saturating_sub(1).to_string().len().max(2);
    (0..n).map(|i| format!("{prefix}{i:0width$}")).collect()
}

/// Generates train and test splits. Output is a pure function of
/// `(spec, seed)`.
pub fn synth_generate(spec: &SynthSpec, seed: u64) -> Result<SynthBenchmark> {
    spec.validate()?;
    let mut rng = Rng::new(seed);
    let mut emb_rng = rng.fork();
    let mut proto_rng = rng.fork();
    let mut train_rng = rng.fork();
    let mut test_rng = rng.fork();

    let seen = names("s", spec.n_seen);
    let unseen = names("u", spec.n_unseen);
    let aux = names("a", spec.n_aux);
    let n_s = spec.n_seen;
    let n_t = n_s + spec.n_unseen;
    let targets: Vec<&String> = seen.iter().chain(&unseen).collect();

    // Unseen classes are served first so each gets an auxiliary neighbour.
    let order: Vec<usize> = (n_s..n_t).chain(0..n_s).collect();
    let aux_owner: Vec<usize> = (0..spec.n_aux).map(|k| order[k % n_t]).collect();
    let mut domain_of = vec![0; n_t];
    for (k, &t) in order.iter().enumerate() {
        domain_of[t] = k % spec.n_domains;
    }

    let root = "entity".to_string();
    let mut pairs: Vec<(String, String)> = Vec::new();
    for d in 0..spec.n_domains {
        pairs.push((format!("domain{d}"), root.clone()));
    }
    for (t, name) in targets.iter().enumerate() {
        let group = format!("group_{name}");
        pairs.push((group.clone(), format!("domain{}", domain_of[t])));
        pairs.push(((*name).clone(), group));
    }
    for (k, a) in aux.iter().enumerate() {
        pairs.push((a.clone(), format!("group_{}", targets[aux_owner[k]])));
    }
    let taxonomy = Taxonomy::from_pairs(&pairs)?;

    let space = ClassSpace::build(&seen, &unseen, &aux, GraphMode::Test)?;
    let graph = build_adjacency(&space, &taxonomy, spec.threshold)?;
    for u in n_s..n_t {
        let neighbours: Vec<Partition> = (0..graph.len())
            .filter(|&v| v != u && graph.adjacency.get2(u, v) != 0.0)
            .map(|v| space.partition(v))
            .collect();
        if neighbours.contains(&Partition::Seen) || !neighbours.contains(&Partition::Auxiliary) {
            return Err(Error::Generation(format!(
                "unseen class `{}` violates the semantic-gap condition",
                targets[u]
            )));
        }
    }

    let d_s = spec.d_s;
    let scale = 1.0 / (d_s as f64).sqrt();
    let domain_vecs: Vec<Vec<f64>> = (0..spec.n_domains).map(|_| emb_rng.standard_normal(&[d_s]).into_data()).collect();
    let cluster_vecs: Vec<Vec<f64>> = (0..n_t).map(|_| emb_rng.standard_normal(&[d_s]).into_data()).collect();
    let mut embeddings = EmbeddingTable::new(d_s);
    let mut add_class = |name: &str, t: usize, rng: &mut Rng| -> Result<()> {
        let own = rng.standard_normal(&[d_s]).into_data();
        let v = (0..d_s)
            .map(|i| scale * (0.5 * domain_vecs[domain_of[t]][i] + 0.7 * cluster_vecs[t][i] + 0.5 * own[i]))
            .collect();
        embeddings.insert(name, v)
    };
    for (t, name) in targets.iter().enumerate() {
        add_class(name, t, &mut emb_rng)?;
    }
    for (k, a) in aux.iter().enumerate() {
        add_class(a, aux_owner[k], &mut emb_rng)?;
    }

    let protos: Vec<Vec<f64>> = (0..n_s).map(|_| proto_rng.standard_normal(&[spec.d_x]).into_data()).collect();

    let make = |split: GraphMode, n: usize, rng: &mut Rng| -> Result<Dataset> {
        let samples = (0..n)
            .map(|i| {
                let present = loop {
                    let p: Vec<bool> = (0..n_t).map(|_| rng.bernoulli(spec.label_prob)).collect();
                    let ok = match split {
                        GraphMode::Train => p[..n_s].contains(&true),
                        GraphMode::Test => p.contains(&true),
                    };
                    if ok {
                        break p;
                    }
                };
                let mut x: Vec<f64> = (0..spec.d_x).map(|_| spec.feature_noise * rng.normal()).collect();
                for (t, proto) in protos.iter().enumerate() {
                    if present[t] {
                        x.iter_mut().zip(proto).for_each(|(a, b)| *a += b);
                    }
                }
                let p_a = aux_owner
                    .iter()
                    .map(|&t| {
                        let signal = if present[t] { 1.0 - spec.aux_noise } else { 0.0 };
                        (signal + spec.aux_noise * rng.normal()).clamp(0.0, 1.0)
                    })
                    .collect();
                let labels = present
                    .iter()
                    .enumerate()
                    .map(|(t, &on)| if on && (split == GraphMode::Test || t < n_s) { 1.0 } else { 0.0 })
                    .collect();
                Sample {
                    id: format!("{split}_{i}"),
                    x_feat: x,
                    labels,
                    p_a: Some(p_a),
                }
            })
            .collect::<Vec<_>>();
        let manifest = DatasetManifest {
            split,
            d_x: spec.d_x,
            seen: seen.clone(),
            unseen: unseen.clone(),
            aux: aux.clone(),
            features: format!("{split}_features.csv").into(),
            labels: format!("{split}_labels.csv").into(),
            aux_probs: Some(format!("{split}_aux_probs.csv").into()),
            seed: Some(seed),
            taxonomy: Some("taxonomy.tsv".into()),
            embeddings: Some("embeddings.txt".into()),
        };
        for s in &samples {
            super::validate_sample(s, &manifest)?;
        }
        Ok(Dataset { manifest, samples })
    };
    let train = make(GraphMode::Train, spec.n_train, &mut train_rng)?;
    let test = make(GraphMode::Test, spec.n_test, &mut test_rng)?;

    Ok(SynthBenchmark {
        spec: spec.clone(),
        seed,
        taxonomy,
        embeddings,
        train,
        test,
        aux_owner,
    })
}

impl SynthBenchmark {
    /// Writes everything under `dir`; returns the train and test manifest
    /// paths.
    pub fn write(&self, dir: &Path) -> Result<(PathBuf, PathBuf)> {
        std::fs::create_dir_all(dir)?;
        self.taxonomy.save(dir.join("taxonomy.tsv"))?;
        self.embeddings.save(dir.join("embeddings.txt"))?;
        let mut out = Vec::new();
        for ds in [&self.train, &self.test] {
            let mut ds = ds.clone();
            let m = &mut ds.manifest;
            for p in [&mut m.features, &mut m.labels] {
                *p = dir.join(&*p);
            }
            for p in [&mut m.aux_probs, &mut m.taxonomy, &mut m.embeddings].into_iter().flatten() {
                *p = dir.join(&*p);
            }
            let path = dir.join(format!("{}.manifest", m.split));
            ds.write(&path)?;
            out.push(path);
        }
        Ok((out[0].clone(), out[1].clone()))
    }
}
