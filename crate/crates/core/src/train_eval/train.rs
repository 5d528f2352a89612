//! Minibatch training on the joint loss with plateau learning-rate decay.

use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::data::{Dataset, DatasetManifest};
use crate::embeddings::EmbeddingTable;
use crate::taxonomy::Taxonomy;
use crate::diffcore::{Adam, ParamStore, Rng, Tape, Tensor};
use crate::error::{Error, Result};
use crate::graph::{build_adjacency, canonical_name, ClassSpace, GraphMode, KnowledgeGraph};
use crate::model::{joint_loss, GraphInputs, ImageInput, Mode, Model, ModelConfig};

use super::metrics::MetricsReport;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub lambda: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub patience: usize,
    pub plateau_eps: f64,
    pub decay: f64,
    pub min_lr: f64,
    pub seed: u64,
    /// Stop once an epoch's mean BCE falls below this.
    pub early_stop_bce: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 5e-4,
            lambda: 1.0,
            epochs: 100,
            batch_size: 32,
            patience: 5,
            plateau_eps: 1e-4,
            decay: 0.1,
            min_lr: 1e-6,
            seed: 42,
            early_stop_bce: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.lr > 0.0) {
            return bad("train.lr must be positive");
        }
        if !(self.lambda >= 0.0) {
            return bad("train.lambda must be non-negative");
        }
        if self.epochs == 0 || self.batch_size == 0 || self.patience == 0 {
            return bad("train.epochs, train.batch_size and train.patience must be positive");
        }
        if !(self.decay > 0.0 && self.decay < 1.0) {
            return bad("train.decay must be in (0, 1)");
        }
        if !(self.plateau_eps >= 0.0 && self.min_lr > 0.0) {
            return bad("train.plateau_eps must be non-negative and train.min_lr positive");
        }
        Ok(())
    }
}

/// Tracks the best loss; reports a decay after `patience` consecutive
/// epochs that fail to beat it by more than `eps`, then restarts the count.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PlateauScheduler {
    best: Option<f64>,
    bad_epochs: usize,
}

impl PlateauScheduler {
    pub fn observe(&mut self, loss: f64, patience: usize, eps: f64) -> bool {
        match self.best {
            Some(b) if loss >= b - eps => {
                self.bad_epochs += 1;
                if self.bad_epochs >= patience {
                    self.bad_epochs = 0;
                    return true;
                }
            }
            _ => {
                self.best = Some(loss);
                self.bad_epochs = 0;
            }
        }
        false
    }
}

/// Learning rate after the last epoch of `history`, given the rate in use
/// before it: decayed (floored at `min_lr`) iff that epoch completes a
/// plateau.
pub fn lr_on_plateau(history: &[f64], config: &TrainConfig, lr: f64) -> f64 {
    let mut s = PlateauScheduler::default();
    let mut fire = false;
    for &l in history {
        fire = s.observe(l, config.patience, config.plateau_eps);
    }
    if fire {
        (lr * config.decay).max(config.min_lr).min(lr)
    } else {
        lr
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean joint loss over the epoch's images.
    pub loss: f64,
    pub bce: f64,
    /// Mean auxiliary term (PosVAE loss or aux MSE), 0 when absent.
    pub aux: f64,
    /// Learning rate used during the epoch.
    pub lr: f64,
}

pub fn log_csv(log: &[EpochLog]) -> String {
    let mut out = String::from("epoch,loss,lr\n");
    for e in log {
        out.push_str(&format!("{},{},{}\n", e.epoch, e.loss, e.lr));
    }
    out
}

/// Dataset columns rearranged to match a graph's class space: labels over
/// the space's target classes, auxiliary probabilities over its auxiliary
/// classes (which may be fewer than the manifest lists, after overlap
/// removal).
#[derive(Clone, Debug, PartialEq)]
pub struct PreparedSplit {
    pub features: Vec<Vec<f64>>,
    pub aux_probs: Option<Vec<Vec<f64>>>,
    /// `B × n_target`.
    pub labels: Tensor,
}

impl PreparedSplit {
    pub fn new(data: &Dataset, space: &ClassSpace) -> Result<Self> {
        let m = &data.manifest;
        if m.seen != space.seen || m.unseen != space.unseen {
            return Err(Error::Config("dataset class lists differ from the graph's".into()));
        }
        let n_t = space.n_target();
        let mut labels = Vec::with_capacity(data.len() * n_t);
        for s in &data.samples {
            labels.extend_from_slice(&s.labels[..n_t]);
        }
        let aux_probs = if data.samples.iter().all(|s| s.p_a.is_some()) && !data.is_empty() {
            let cols = space
                .auxiliary
                .iter()
                .map(|a| {
                    m.aux
                        .iter()
                        .position(|b| canonical_name(a) == canonical_name(b))
                        .ok_or_else(|| Error::Lookup(format!("aux class `{a}` not in the dataset manifest")))
                })
                .collect::<Result<Vec<_>>>()?;
            Some(
                data.samples
                    .iter()
                    .map(|s| {
                        let p = s.p_a.as_ref().expect("checked");
                        cols.iter().map(|&c| p[c]).collect()
                    })
                    .collect(),
            )
        } else {
            None
        };
        Ok(Self {
            features: data.samples.iter().map(|s| s.x_feat.clone()).collect(),
            aux_probs,
            labels: Tensor::matrix(data.len(), n_t, labels)?,
        })
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn images(&self, idx: &[usize]) -> Vec<ImageInput<'_>> {
        idx.iter()
            .map(|&i| ImageInput {
                features: &self.features[i],
                aux_probs: self.aux_probs.as_ref().map(|p| p[i].as_slice()),
            })
            .collect()
    }

    pub fn label_rows(&self, idx: &[usize]) -> Result<Tensor> {
        let n = self.labels.cols();
        let data = idx.iter().flat_map(|&i| self.labels.row_slice(i).to_vec()).collect();
        Tensor::matrix(idx.len(), n, data)
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: Model,
    pub params: ParamStore,
    pub optimizer: Adam,
    pub log: Vec<EpochLog>,
}

impl TrainOutcome {
    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            config: self.model.config().clone(),
            epoch: self.log.len(),
            params: self.params.clone(),
            optimizer: Some(self.optimizer.clone()),
        }
    }
}

/// One forward/backward/update pass over a batch; returns
/// `(loss, bce, aux)` values.
fn train_step(
    model: &Model,
    store: &mut ParamStore,
    adam: &mut Adam,
    graph: &GraphInputs,
    data: &PreparedSplit,
    idx: &[usize],
    lambda: f64,
    rng: &mut Rng,
) -> Result<(f64, f64, f64)> {
    let mut tape = Tape::new();
    let images = data.images(idx);
    let out = model.forward_batch(&mut tape, store, graph, &images, rng, Mode::Train)?;
    let labels = data.label_rows(idx)?;
    let loss = joint_loss(&mut tape, out.scores, &labels, out.aux_loss, lambda)?;
    let bce = crate::diffcore::tape::bce_value(tape.value(out.scores).data(), labels.data());
    let aux = out.aux_loss.map_or(0.0, |a| tape.scalar(a));
    let l = tape.scalar(loss);
    if !l.is_finite() {
        return Ok((l, bce, aux));
    }
    store.zero_grad();
    tape.backward(loss, store)?;
    adam.step(store)?;
    Ok((l, bce, aux))
}

/// Trains from a fresh seeded initialization. `on_epoch` sees every epoch's
/// log line and the current parameters (e.g. for per-epoch checkpoints).
pub fn train<F>(
    model_config: &ModelConfig,
    config: &TrainConfig,
    graph: &GraphInputs,
    data: &PreparedSplit,
    mut on_epoch: F,
) -> Result<TrainOutcome>
where
    F: FnMut(&EpochLog, &Model, &ParamStore) -> Result<()>,
{
    config.validate()?;
    if graph.mode != GraphMode::Train {
        return Err(Error::Config("training needs a train-mode graph (no unseen nodes)".into()));
    }
    if data.is_empty() {
        return Err(Error::Contract("empty training set".into()));
    }
    let mut root = Rng::new(config.seed);
    let mut init_rng = root.fork();
    let mut shuffle_rng = root.fork();
    let mut noise_rng = root.fork();
    let (model, mut store) = Model::new(model_config.clone(), &mut init_rng)?;
    let mut adam = Adam::new(&store, config.lr);
    let mut scheduler = PlateauScheduler::default();
    let mut log = Vec::with_capacity(config.epochs);
    let mut order: Vec<usize> = (0..data.len()).collect();

    for epoch in 1..=config.epochs {
        shuffle_rng.shuffle(&mut order);
        let (mut loss, mut bce, mut aux) = (0.0, 0.0, 0.0);
        for (bi, idx) in order.chunks(config.batch_size).enumerate() {
            let (l, b, a) = train_step(&model, &mut store, &mut adam, graph, data, idx, config.lambda, &mut noise_rng)?;
            if !l.is_finite() {
                return Err(Error::Numeric(format!("non-finite loss {l} at epoch {epoch}, batch {}", bi + 1)));
            }
            let w = idx.len() as f64;
            loss += l * w;
            bce += b * w;
            aux += a * w;
        }
        let n = data.len() as f64;
        let entry = EpochLog {
            epoch,
            loss: loss / n,
            bce: bce / n,
            aux: aux / n,
            lr: adam.lr,
        };
        log::debug!("epoch {epoch}: loss {:.6} bce {:.6} lr {:e}", entry.loss, entry.bce, entry.lr);
        on_epoch(&entry, &model, &store)?;
        let stop = config.early_stop_bce.is_some_and(|t| entry.bce < t);
        if scheduler.observe(entry.loss, config.patience, config.plateau_eps) {
            adam.lr = (adam.lr * config.decay).max(config.min_lr).min(adam.lr);
        }
        log.push(entry);
        if stop {
            break;
        }
    }
    Ok(TrainOutcome {
        model,
        params: store,
        optimizer: adam,
        log,
    })
}

/// Builds the knowledge graph and its forward-pass inputs for a dataset's
/// class lists.
pub fn prepare_graph(
    taxonomy: &Taxonomy,
    embeddings: &EmbeddingTable,
    manifest: &DatasetManifest,
    threshold: f64,
    mode: GraphMode,
) -> Result<(KnowledgeGraph, GraphInputs)> {
    let space = ClassSpace::build(&manifest.seen, &manifest.unseen, &manifest.aux, mode)?;
    let graph = build_adjacency(&space, taxonomy, threshold)?;
    let inputs = GraphInputs::from_graph(&graph, embeddings)?;
    Ok((graph, inputs))
}

/// Eval-mode scores for every image, computed in chunks of `batch`.
pub fn score_all(model: &Model, store: &ParamStore, graph: &GraphInputs, data: &PreparedSplit, batch: usize) -> Result<Tensor> {
    let n_t = graph.n_target;
    let mut out = Vec::with_capacity(data.len() * n_t);
    let idx: Vec<usize> = (0..data.len()).collect();
    for chunk in idx.chunks(batch.max(1)) {
        out.extend(model.score(store, graph, &data.images(chunk))?.into_data());
    }
    Tensor::matrix(data.len(), n_t, out)
}

/// Scores `data` on `graph` and reports seen/unseen mAP and miAP.
pub fn evaluate(model: &Model, store: &ParamStore, graph: &GraphInputs, space: &ClassSpace, data: &PreparedSplit) -> Result<MetricsReport> {
    if data.is_empty() {
        return Err(Error::Evaluation("empty evaluation set".into()));
    }
    let scores = score_all(model, store, graph, data, 32)?;
    let classes: Vec<String> = space.classes()[..space.n_target()].iter().map(|s| s.to_string()).collect();
    MetricsReport::from_scores(&scores, &data.labels, &classes, space.seen.len())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plateau_examples() {
        let cfg = TrainConfig::default();
        let falling: Vec<f64> = (0..20).map(|i| 1.0 - 0.01 * i as f64).collect();
        for k in 1..=falling.len() {
            assert_eq!(lr_on_plateau(&falling[..k], &cfg, 5e-4), 5e-4);
        }
        let flat = [0.7; 6];
        assert_eq!(lr_on_plateau(&flat[..5], &cfg, 5e-4), 5e-4);
        assert!((lr_on_plateau(&flat, &cfg, 5e-4) - 5e-5).abs() < 1e-18);
        assert_eq!(lr_on_plateau(&flat, &cfg, 1e-6), 1e-6);
        // tiny improvements within eps count as flat
        let creeping: Vec<f64> = (0..6).map(|i| 0.7 - 1e-5 * i as f64).collect();
        assert!(lr_on_plateau(&creeping, &cfg, 5e-4) < 5e-4);
    }

    #[test]
    fn scheduler_resets_after_decay() {
        let mut s = PlateauScheduler::default();
        let fired: Vec<bool> = (0..12).map(|_| s.observe(1.0, 5, 1e-4)).collect();
        assert_eq!(fired.iter().filter(|f| **f).count(), 2);
        assert!(fired[5] && fired[10]);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        for bad in [
            TrainConfig { lr: 0.0, ..Default::default() },
            TrainConfig { decay: 1.0, ..Default::default() },
            TrainConfig { batch_size: 0, ..Default::default() },
        ] {
            assert!(bad.validate().is_err());
        }
    }

    #[test]
    fn log_csv_layout() {
        let log = vec![EpochLog {
            epoch: 1,
            loss: 0.5,
            bce: 0.4,
            aux: 0.1,
            lr: 5e-4,
        }];
        assert_eq!(log_csv(&log), "epoch,loss,lr\n1,0.5,0.0005\n");
    }
}
