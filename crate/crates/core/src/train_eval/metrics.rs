//! Average precision and the mAP / miAP protocol.

use serde::{Deserialize, Serialize};

use crate::diffcore::Tensor;
use crate::error::{Error, Result};

/// AP of a ranking by descending score, ties by ascending index:
/// mean over positives of precision at the positive's rank. `None` when
/// there are no positives.
pub fn average_precision(scores: &[f64], positives: &[bool]) -> Option<f64> {
    assert_eq!(scores.len(), positives.len(), "one flag per score");
    let n_pos = positives.iter().filter(|p| **p).count();
    if n_pos == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (rank, &i) in order.iter().enumerate() {
        if positives[i] {
            hits += 1;
            sum += hits as f64 / (rank + 1) as f64;
        }
    }
    Some(sum / n_pos as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Subset {
    Seen,
    Unseen,
    All,
}

impl Subset {
    /// Column range of the subset among `n_seen + n_unseen` target columns.
    pub fn columns(self, n_seen: usize, n_target: usize) -> std::ops::Range<usize> {
        match self {
            Subset::Seen => 0..n_seen,
            Subset::Unseen => n_seen..n_target,
            Subset::All => 0..n_target,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassAp {
    pub class: String,
    pub subset: Subset,
    pub positives: usize,
    /// `None` for classes without test positives.
    pub ap: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubsetMetrics {
    pub map: f64,
    pub miap: f64,
    pub classes_scored: usize,
    pub images_scored: usize,
}

/// mAP over the subset's classes (zero-positive classes skipped) and miAP
/// over images ranking only the subset's classes (images without a
/// positive in the subset skipped).
pub fn subset_metrics(scores: &Tensor, labels: &Tensor, cols: std::ops::Range<usize>) -> Result<SubsetMetrics> {
    let (b, n) = scores.dims2()?;
    if labels.dims2()? != (b, n) || cols.end > n {
        return Err(Error::Dimension(format!(
            "scores {:?}, labels {:?}, columns {cols:?}",
            scores.shape(),
            labels.shape()
        )));
    }
    let mut class_aps = Vec::new();
    for c in cols.clone() {
        let s: Vec<f64> = (0..b).map(|i| scores.get2(i, c)).collect();
        let p: Vec<bool> = (0..b).map(|i| labels.get2(i, c) == 1.0).collect();
        class_aps.extend(average_precision(&s, &p));
    }
    let mut image_aps = Vec::new();
    for i in 0..b {
        let s = &scores.row_slice(i)[cols.clone()];
        let p: Vec<bool> = labels.row_slice(i)[cols.clone()].iter().map(|v| *v == 1.0).collect();
        image_aps.extend(average_precision(s, &p));
    }
    if class_aps.is_empty() || image_aps.is_empty() {
        return Err(Error::Evaluation(format!(
            "no positives in columns {cols:?}; nothing to score"
        )));
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    Ok(SubsetMetrics {
        map: mean(&class_aps),
        miap: mean(&image_aps),
        classes_scored: class_aps.len(),
        images_scored: image_aps.len(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub seen_map: Option<f64>,
    pub seen_miap: Option<f64>,
    pub unseen_map: Option<f64>,
    pub unseen_miap: Option<f64>,
    pub images: usize,
    pub per_class: Vec<ClassAp>,
    /// Classes left out of mAP for lack of positives.
    pub skipped_classes: Vec<String>,
}

impl MetricsReport {
    /// Builds the report from `B × (n_seen + n_unseen)` scores. A subset
    /// without positives gets `None`; having neither is an error.
    pub fn from_scores(scores: &Tensor, labels: &Tensor, classes: &[String], n_seen: usize) -> Result<Self> {
        let n = classes.len();
        let seen = subset_metrics(scores, labels, Subset::Seen.columns(n_seen, n));
        let unseen = if n > n_seen {
            subset_metrics(scores, labels, Subset::Unseen.columns(n_seen, n))
        } else {
            Err(Error::Evaluation("no unseen classes".into()))
        };
        if let (Err(e), Err(_)) = (&seen, &unseen) {
            return Err(Error::Evaluation(format!("both subsets are empty: {e}")));
        }
        let b = scores.rows();
        let mut per_class = Vec::with_capacity(n);
        let mut skipped = Vec::new();
        for (c, name) in classes.iter().enumerate() {
            let s: Vec<f64> = (0..b).map(|i| scores.get2(i, c)).collect();
            let p: Vec<bool> = (0..b).map(|i| labels.get2(i, c) == 1.0).collect();
            let ap = average_precision(&s, &p);
            if ap.is_none() {
                skipped.push(name.clone());
            }
            per_class.push(ClassAp {
                class: name.clone(),
                subset: if c < n_seen { Subset::Seen } else { Subset::Unseen },
                positives: p.iter().filter(|v| **v).count(),
                ap,
            });
        }
        let seen = seen.ok();
        let unseen = unseen.ok();
        Ok(Self {
            seen_map: seen.as_ref().map(|m| m.map),
            seen_miap: seen.as_ref().map(|m| m.miap),
            unseen_map: unseen.as_ref().map(|m| m.map),
            unseen_miap: unseen.as_ref().map(|m| m.miap),
            images: b,
            per_class,
            skipped_classes: skipped,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}
