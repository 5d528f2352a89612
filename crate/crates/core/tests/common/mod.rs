//! Oracles and invariant checks shared by the property tests and the
//! acceptance suite.
#![allow(dead_code)]

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use kgzsl::data::{validate_sample, DatasetManifest, Sample};
use kgzsl::diffcore::{Rng, Tape, Tensor};
use kgzsl::graph::{build_adjacency, normalize_adjacency, ClassSpace, GraphMode};
use kgzsl::model::{GraphInputs, Model, ModelConfig, Variant};
use kgzsl::taxonomy::Taxonomy;
use kgzsl::Error;
use nalgebra::DMatrix;
use proptest::prelude::*;
use proptest::test_runner::TestCaseError;

pub type Check = Result<(), TestCaseError>;

// ---- taxonomy -------------------------------------------------------------

/// Parent of node `i` (for `i >= 1`) is some node `< i`; node 0 is the root.
pub fn tree(min_nodes: usize, max_nodes: usize) -> impl Strategy<Value = Vec<usize>> {
    (min_nodes.max(2)..=max_nodes).prop_flat_map(|n| {
        prop::collection::vec(any::<prop::sample::Index>(), n - 1)
            .prop_map(|idx| idx.iter().enumerate().map(|(i, ix)| ix.index(i + 1)).collect())
    })
}

pub fn node(i: usize) -> String {
    format!("n{i}")
}

pub fn taxonomy(parents: &[usize]) -> Taxonomy {
    let pairs: Vec<(String, String)> = parents.iter().enumerate().map(|(i, &p)| (node(i + 1), node(p))).collect();
    Taxonomy::from_pairs(&pairs).unwrap()
}

/// Node followed by its ancestors up to the root.
pub fn ancestor_path(parents: &[usize], mut i: usize) -> Vec<usize> {
    let mut path = vec![i];
    while i != 0 {
        i = parents[i - 1];
        path.push(i);
    }
    path
}

pub fn oracle_wup(parents: &[usize], a: usize, b: usize) -> f64 {
    let pa = ancestor_path(parents, a);
    let pb = ancestor_path(parents, b);
    let common: HashSet<usize> = pa.iter().copied().filter(|x| pb.contains(x)).collect();
    let lcs_depth = common.iter().map(|&c| ancestor_path(parents, c).len()).max().unwrap();
    2.0 * lcs_depth as f64 / (pa.len() + pb.len()) as f64
}

/// Every pair of nodes against the enumeration oracle, bit for bit.
pub fn check_wup_all_pairs(parents: &[usize]) -> Check {
    let tax = taxonomy(parents);
    let n = parents.len() + 1;
    for a in 0..n {
        prop_assert_eq!(tax.depth(&node(a)).unwrap(), ancestor_path(parents, a).len());
        for b in a..n {
            let got = tax.wup_similarity(&node(a), &node(b)).unwrap();
            prop_assert_eq!(got, oracle_wup(parents, a, b), "pair {} {}", a, b);
            prop_assert_eq!(got, tax.wup_similarity(&node(b), &node(a)).unwrap());
            prop_assert!(got > 0.0 && got <= 1.0);
        }
        prop_assert_eq!(tax.wup_similarity(&node(a), &node(a)).unwrap(), 1.0);
    }
    Ok(())
}

// ---- average precision ----------------------------------------------------

/// Walks the precision curve of a ranking (descending score, ties by index)
/// and averages precision over the recall steps.
pub fn precision_curve_ap(scores: &[f64], positives: &[bool]) -> Option<f64> {
    let n_pos = positives.iter().filter(|p| **p).count();
    if n_pos == 0 {
        return None;
    }
    let mut ranked: Vec<(f64, usize)> = scores.iter().copied().zip(0..).collect();
    ranked.sort_by(|x, y| y.0.partial_cmp(&x.0).unwrap().then(x.1.cmp(&y.1)));
    let mut tp = 0;
    let mut recall_prev = 0;
    let mut sum = 0.0;
    for (k, &(_, i)) in ranked.iter().enumerate() {
        if positives[i] {
            tp += 1;
        }
        if tp > recall_prev {
            sum += tp as f64 / (k + 1) as f64;
            recall_prev = tp;
        }
    }
    Some(sum / n_pos as f64)
}

/// AP of a ranked label sequence as an exact fraction.
pub fn rational_ap(ranked: &[bool]) -> Option<(u128, u128)> {
    let n_pos = ranked.iter().filter(|p| **p).count() as u128;
    if n_pos == 0 {
        return None;
    }
    let lcm = (1..=ranked.len() as u128).fold(1, |l, k| l / gcd(l, k) * k);
    let mut num = 0u128;
    let mut tp = 0u128;
    for (k, &p) in ranked.iter().enumerate() {
        if p {
            tp += 1;
            num += tp * (lcm / (k as u128 + 1));
        }
    }
    Some((num, lcm * n_pos))
}

fn gcd(a: u128, b: u128) -> u128 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// All `2^n` labellings of a strict ranking of `n` items, for every
/// `n <= max_n`. Returns the number of rankings checked.
pub fn check_ap_exhaustive(max_n: usize, ap: impl Fn(&[f64], &[bool]) -> Option<f64>) -> Result<usize, String> {
    let mut checked = 0;
    for n in 1..=max_n {
        let scores: Vec<f64> = (0..n).map(|i| (n - i) as f64).collect();
        for mask in 0u32..(1 << n) {
            let pos: Vec<bool> = (0..n).map(|i| mask >> i & 1 == 1).collect();
            let got = ap(&scores, &pos);
            if got != precision_curve_ap(&scores, &pos) {
                return Err(format!("n={n} mask={mask:b}: {got:?}"));
            }
            match (got, rational_ap(&pos)) {
                (None, None) => {}
                (Some(v), Some((p, q))) if (v - p as f64 / q as f64).abs() <= 1e-15 => {}
                other => return Err(format!("n={n} mask={mask:b}: {other:?}")),
            }
            checked += 1;
        }
    }
    Ok(checked)
}

// ---- graphs ---------------------------------------------------------------

/// Random taxonomy plus a class split of its non-root nodes.
#[derive(Debug, Clone)]
pub struct GraphCase {
    pub parents: Vec<usize>,
    pub n_seen: usize,
    pub n_unseen: usize,
}

pub fn graph_case() -> impl Strategy<Value = GraphCase> {
    (6usize..40).prop_flat_map(|n| {
        (
            prop::collection::vec(any::<prop::sample::Index>(), n - 1),
            1..=(n - 1) / 2,
            0..=(n - 1) / 3,
        )
            .prop_map(|(idx, n_seen, n_unseen)| GraphCase {
                parents: idx.iter().enumerate().map(|(i, ix)| ix.index(i + 1)).collect(),
                n_seen,
                n_unseen,
            })
    })
}

pub fn class_space(c: &GraphCase, mode: GraphMode) -> (Taxonomy, ClassSpace) {
    let tax = taxonomy(&c.parents);
    let nodes: Vec<String> = (1..=c.parents.len()).map(node).collect();
    let (seen, rest) = nodes.split_at(c.n_seen);
    let (unseen, aux) = rest.split_at(c.n_unseen);
    (tax, ClassSpace::build(seen, unseen, aux, mode).unwrap())
}

pub fn spectral_radius(m: &Tensor) -> f64 {
    let n = m.rows();
    let d = DMatrix::from_row_slice(n, n, m.data());
    d.symmetric_eigen().eigenvalues.iter().fold(0.0f64, |a, v| a.max(v.abs()))
}

pub fn check_adjacency(c: &GraphCase, t: f64) -> Check {
    for mode in [GraphMode::Train, GraphMode::Test] {
        let (tax, space) = class_space(c, mode);
        let g = build_adjacency(&space, &tax, t).unwrap();
        let a = &g.adjacency;
        let n = space.len();
        let mut edges = 0;
        for i in 0..n {
            prop_assert_eq!(a.get2(i, i), 1.0);
            for j in 0..n {
                let v = a.get2(i, j);
                prop_assert!(v == 0.0 || v == 1.0);
                prop_assert_eq!(v, a.get2(j, i));
                if j > i && v == 1.0 {
                    edges += 1;
                }
            }
        }
        prop_assert_eq!(edges, g.edge_count);
        prop_assert_eq!(g.edges().len(), g.edge_count);
    }
    Ok(())
}

pub fn check_edge_count_monotone(c: &GraphCase) -> Check {
    let (tax, space) = class_space(c, GraphMode::Test);
    let counts: Vec<usize> = (1..=10)
        .map(|k| build_adjacency(&space, &tax, k as f64 / 10.0).unwrap().edge_count)
        .collect();
    prop_assert!(counts.windows(2).all(|w| w[0] >= w[1]), "{:?}", counts);
    prop_assert_eq!(*counts.last().unwrap(), 0);
    Ok(())
}

pub fn check_spectral_bound(c: &GraphCase, t: f64) -> Check {
    let (tax, space) = class_space(c, GraphMode::Test);
    let g = build_adjacency(&space, &tax, t).unwrap();
    let ones = Tensor::filled(g.adjacency.shape(), 1.0);
    let m = normalize_adjacency(&g.adjacency, &ones).unwrap();
    let n = m.rows();
    for i in 0..n {
        for j in 0..n {
            prop_assert!((m.get2(i, j) - m.get2(j, i)).abs() < 1e-15);
        }
    }
    let r = spectral_radius(&m);
    prop_assert!(r <= 1.0 + 1e-10, "radius {}", r);
    // with self-loops on every node the top eigenvalue is exactly 1
    prop_assert!((r - 1.0).abs() < 1e-10, "radius {}", r);
    Ok(())
}

pub fn check_relation_weights(c: &GraphCase, t: f64, seed: u64) -> Check {
    let (tax, space) = class_space(c, GraphMode::Test);
    let g = build_adjacency(&space, &tax, t).unwrap();
    let mut rng = Rng::new(seed);
    let d_s = 5;
    let emb = rng.standard_normal(&[space.len(), d_s]);
    let inputs = GraphInputs::new(g.adjacency.clone(), emb, space.n_target(), space.n_aux(), space.mode).unwrap();
    let cfg = ModelConfig {
        d_x: 3,
        d_s,
        d_h: 4,
        hidden: 6,
        layers: 2,
        variant: Variant::RgcnPosvae,
    };
    let (model, store) = Model::new(cfg, &mut rng).unwrap();
    let mut tape = Tape::new();
    let w = model.relation_weights(&mut tape, &store, &inputs).unwrap();
    let w = tape.value(w).clone();
    let n = space.len();
    for i in 0..n {
        prop_assert_eq!(w.get2(i, i), 1.0);
        for j in 0..n {
            let v = w.get2(i, j);
            prop_assert_eq!(v, w.get2(j, i));
            if i != j {
                if g.adjacency.get2(i, j) == 0.0 {
                    prop_assert_eq!(v, 0.0);
                } else {
                    prop_assert!(v > 0.0 && v < 1.0, "w[{}][{}] = {}", i, j, v);
                }
            }
        }
    }
    let a_hat = model.normalized_adjacency(&mut tape, &store, &inputs).unwrap();
    let reference = normalize_adjacency(&g.adjacency, &w).unwrap();
    prop_assert!(tape.value(a_hat).max_abs_diff(&reference).unwrap() < 1e-14);
    Ok(())
}

// ---- samples and manifests ------------------------------------------------

pub fn manifest(split: GraphMode, d_x: usize, n_seen: usize, n_unseen: usize, n_aux: usize) -> DatasetManifest {
    DatasetManifest {
        split,
        d_x,
        seen: (0..n_seen).map(|i| format!("s{i}")).collect(),
        unseen: (0..n_unseen).map(|i| format!("u{i}")).collect(),
        aux: (0..n_aux).map(|i| format!("a{i}")).collect(),
        features: PathBuf::from("/data/f.csv"),
        labels: PathBuf::from("/data/l.csv"),
        aux_probs: Some(PathBuf::from("/data/p.csv")),
        seed: Some(3),
        taxonomy: Some(PathBuf::from("/data/tax.tsv")),
        embeddings: None,
    }
}

#[derive(Debug, Clone)]
pub struct SampleCase {
    pub split: GraphMode,
    pub d_x: usize,
    pub n_seen: usize,
    pub n_unseen: usize,
    pub x: Vec<f64>,
    pub labels: Vec<f64>,
    pub p_a: Vec<f64>,
}

/// A sample that satisfies every rule.
pub fn valid_sample() -> impl Strategy<Value = SampleCase> {
    (1usize..6, 1usize..5, 0usize..4, 0usize..5, any::<bool>()).prop_flat_map(|(d_x, n_seen, n_unseen, n_aux, train)| {
        let split = if train { GraphMode::Train } else { GraphMode::Test };
        let labelled = if train { n_seen } else { n_seen + n_unseen };
        (
            prop::collection::vec(-10.0f64..10.0, d_x),
            prop::collection::vec(any::<bool>(), labelled),
            0..labelled,
            prop::collection::vec(0.0f64..=1.0, n_aux),
        )
            .prop_map(move |(x, flags, forced, p_a)| {
                let mut labels: Vec<f64> = flags.iter().map(|&b| b as u8 as f64).collect();
                labels[forced] = 1.0;
                labels.resize(n_seen + n_unseen, 0.0);
                SampleCase {
                    split,
                    d_x,
                    n_seen,
                    n_unseen,
                    x,
                    labels,
                    p_a,
                }
            })
    })
}

pub fn sample_parts(c: &SampleCase) -> (Sample, DatasetManifest) {
    let m = manifest(c.split, c.d_x, c.n_seen, c.n_unseen, c.p_a.len());
    let s = Sample {
        id: "s_0".into(),
        x_feat: c.x.clone(),
        labels: c.labels.clone(),
        p_a: Some(c.p_a.clone()),
    };
    (s, m)
}

pub const SAMPLE_RULES: usize = 7;

/// The valid sample passes; breaking rule `which` makes it fail.
pub fn check_sample_rule(c: &SampleCase, which: usize, pick: prop::sample::Index) -> Check {
    let (mut s, m) = sample_parts(c);
    prop_assert!(validate_sample(&s, &m).is_ok());
    let without_aux = Sample { p_a: None, ..s.clone() };
    prop_assert!(validate_sample(&without_aux, &m).is_ok());
    let applicable = match which {
        0 => {
            s.x_feat.push(0.0);
            true
        }
        1 => {
            let i = pick.index(s.x_feat.len());
            s.x_feat[i] = f64::NAN;
            true
        }
        2 => {
            s.labels.pop();
            true
        }
        3 => {
            let i = pick.index(s.labels.len());
            s.labels[i] = 0.5;
            true
        }
        4 => {
            s.labels.iter_mut().for_each(|v| *v = 0.0);
            true
        }
        5 => {
            let ok = c.split == GraphMode::Train && c.n_unseen > 0;
            if ok {
                s.labels[c.n_seen + pick.index(c.n_unseen)] = 1.0;
            }
            ok
        }
        _ => {
            let p = s.p_a.as_mut().unwrap();
            if p.is_empty() {
                p.push(0.5);
            } else {
                let i = pick.index(p.len());
                p[i] = 1.5;
            }
            true
        }
    };
    if applicable {
        prop_assert!(
            matches!(validate_sample(&s, &m), Err(Error::Validation { .. })),
            "rule {} not enforced",
            which
        );
    }
    Ok(())
}

/// Text round trip plus rejection of unknown and duplicate keys.
pub fn check_manifest_text(c: &SampleCase, key: &str) -> Check {
    let (_, m) = sample_parts(c);
    let base = Path::new("/data");
    let text = m.to_text(base);
    let back = DatasetManifest::parse(&text, Path::new("m"), base).unwrap();
    prop_assert_eq!(&back, &m);
    let known = ["split", "seed", "seen", "unseen", "aux", "features", "labels", "taxonomy"];
    if !known.contains(&key) {
        let extra = format!("{text}{key}=1\n");
        prop_assert!(DatasetManifest::parse(&extra, Path::new("m"), base).is_err());
    }
    let dup = format!("{text}split=test\n");
    prop_assert!(DatasetManifest::parse(&dup, Path::new("m"), base).is_err());
    Ok(())
}
