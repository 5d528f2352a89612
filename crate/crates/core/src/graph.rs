//! Class-space partitioning and knowledge-graph assembly.

use std::collections::HashSet;
use std::fmt::{self, Write as _};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::diffcore::tape::sym_normalize_values;
use crate::diffcore::Tensor;
use crate::error::{dim_err, Error, Result};
use crate::taxonomy::Taxonomy;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GraphMode {
    /// Indexes `seen ++ auxiliary`.
    Train,
    /// Indexes `seen ++ unseen ++ auxiliary`.
    Test,
}

impl fmt::Display for GraphMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GraphMode::Train => "train",
            GraphMode::Test => "test",
        })
    }
}

impl FromStr for GraphMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(GraphMode::Train),
            "test" => Ok(GraphMode::Test),
            other => Err(Error::Config(format!("unknown split `{other}` (train|test)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Partition {
    Seen,
    Unseen,
    Auxiliary,
}

impl Partition {
    pub fn name(self) -> &'static str {
        match self {
            Partition::Seen => "seen",
            Partition::Unseen => "unseen",
            Partition::Auxiliary => "aux",
        }
    }
}

/// Lowercase, with runs of whitespace, `_` and `-` collapsed to one space.
pub fn canonical_name(name: &str) -> String {
    crate::embeddings::tokenize(name).join(" ")
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClassSpace {
    pub seen: Vec<String>,
    pub unseen: Vec<String>,
    pub auxiliary: Vec<String>,
    pub mode: GraphMode,
}

impl ClassSpace {
    /// Drops auxiliary classes whose canonical name equals a seen or unseen
    /// class. Input order is kept.
    pub fn build<S: AsRef<str>>(seen: &[S], unseen: &[S], auxiliary_raw: &[S], mode: GraphMode) -> Result<Self> {
        let seen: Vec<String> = seen.iter().map(|s| s.as_ref().to_string()).collect();
        let unseen: Vec<String> = unseen.iter().map(|s| s.as_ref().to_string()).collect();
        let seen_keys: HashSet<String> = seen.iter().map(|s| canonical_name(s)).collect();
        if seen_keys.len() != seen.len() {
            return Err(Error::Contract("duplicate seen class".into()));
        }
        let mut target_keys = seen_keys.clone();
        for u in &unseen {
            if seen_keys.contains(&canonical_name(u)) {
                return Err(Error::Contract(format!("class `{u}` is both seen and unseen")));
            }
            if !target_keys.insert(canonical_name(u)) {
                return Err(Error::Contract(format!("duplicate unseen class `{u}`")));
            }
        }
        let mut aux_keys = HashSet::new();
        let auxiliary = auxiliary_raw
            .iter()
            .map(|s| s.as_ref())
            .filter(|a| {
                let key = canonical_name(a);
                !target_keys.contains(&key) && aux_keys.insert(key)
            })
            .map(str::to_string)
            .collect();
        Ok(Self {
            seen,
            unseen,
            auxiliary,
            mode,
        })
    }

    pub fn with_mode(&self, mode: GraphMode) -> Self {
        Self {
            mode,
            ..self.clone()
        }
    }

    /// Classes predicted by the head: seen (train) or seen ++ unseen (test).
    pub fn n_target(&self) -> usize {
        match self.mode {
            GraphMode::Train => self.seen.len(),
            GraphMode::Test => self.seen.len() + self.unseen.len(),
        }
    }

    pub fn n_aux(&self) -> usize {
        self.auxiliary.len()
    }

    pub fn len(&self) -> usize {
        self.n_target() + self.n_aux()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// All indexed classes in index order.
    pub fn classes(&self) -> Vec<&str> {
        let mut out: Vec<&str> = self.seen.iter().map(String::as_str).collect();
        if self.mode == GraphMode::Test {
            out.extend(self.unseen.iter().map(String::as_str));
        }
        out.extend(self.auxiliary.iter().map(String::as_str));
        out
    }

    pub fn partition(&self, index: usize) -> Partition {
        if index < self.seen.len() {
            Partition::Seen
        } else if index < self.n_target() {
            Partition::Unseen
        } else {
            Partition::Auxiliary
        }
    }

    pub fn index_of(&self, class: &str) -> Option<usize> {
        self.classes().iter().position(|c| *c == class)
    }

    /// The same space without auxiliary classes.
    pub fn targets_only(&self) -> Self {
        Self {
            auxiliary: Vec::new(),
            ..self.clone()
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct KnowledgeGraph {
    pub space: ClassSpace,
    /// Binary, symmetric, unit diagonal.
    pub adjacency: Tensor,
    pub threshold: f64,
    pub edge_count: usize,
}

/// `A[u][v] = 1` iff `u == v` or `wup(u, v) > threshold`.
pub fn build_adjacency(space: &ClassSpace, taxonomy: &Taxonomy, threshold: f64) -> Result<KnowledgeGraph> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(Error::Contract(format!("threshold must be in (0, 1], got {threshold}")));
    }
    let classes = space.classes();
    for c in &classes {
        if !taxonomy.contains(c) {
            return Err(Error::Lookup(format!("class `{c}` has no taxonomy node")));
        }
    }
    let n = classes.len();
    let mut a = Tensor::identity(n);
    let mut edges = 0;
    for i in 0..n {
        for j in i + 1..n {
            if taxonomy.wup_similarity(classes[i], classes[j])? > threshold {
                a.set2(i, j, 1.0);
                a.set2(j, i, 1.0);
                edges += 1;
            }
        }
    }
    Ok(KnowledgeGraph {
        space: space.clone(),
        adjacency: a,
        threshold,
        edge_count: edges,
    })
}

/// `D^{-1/2} (W ⊙ A) D^{-1/2}`, `D` the row sums of `W ⊙ A`; zero-sum rows
/// stay zero.
pub fn normalize_adjacency(a: &Tensor, w_hat: &Tensor) -> Result<Tensor> {
    let (r, c) = a.dims2()?;
    if r != c || a.shape() != w_hat.shape() {
        return dim_err(format!("normalize_adjacency: {:?} vs {:?}", a.shape(), w_hat.shape()));
    }
    let m: Vec<f64> = a.data().iter().zip(w_hat.data()).map(|(x, y)| x * y).collect();
    let m = Tensor::matrix(r, c, m)?;
    Ok(sym_normalize_values(&m).0)
}

impl KnowledgeGraph {
    /// Leading block over target classes only (no auxiliary nodes).
    pub fn restrict_to_targets(&self) -> Result<Self> {
        let n = self.space.n_target();
        let adjacency = self.adjacency.block(0, n, 0, n)?;
        let edge_count = (0..n)
            .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
            .filter(|&(i, j)| adjacency.get2(i, j) != 0.0)
            .count();
        Ok(Self {
            space: self.space.targets_only(),
            adjacency,
            threshold: self.threshold,
            edge_count,
        })
    }

    pub fn len(&self) -> usize {
        self.space.len()
    }

    pub fn is_empty(&self) -> bool {
        self.space.is_empty()
    }

    /// Upper-triangle off-diagonal edges `(i, j)`, `i < j`.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let n = self.len();
        (0..n)
            .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
            .filter(|&(i, j)| self.adjacency.get2(i, j) != 0.0)
            .collect()
    }

    /// Edge-list artifact: a `N threshold` header, then one `i j` line per
    /// upper-triangle edge.
    pub fn to_edge_list(&self) -> String {
        let mut out = format!("{} {}\n", self.len(), self.threshold);
        for (i, j) in self.edges() {
            let _ = writeln!(out, "{i} {j}");
        }
        out
    }

    /// `index<TAB>class<TAB>partition` lines.
    pub fn class_index(&self) -> String {
        let mut out = String::new();
        for (i, c) in self.space.classes().iter().enumerate() {
            let _ = writeln!(out, "{i}\t{c}\t{}", self.space.partition(i).name());
        }
        out
    }

    /// Edge counts keyed by unordered partition pair.
    pub fn edge_counts_by_partition(&self) -> Vec<((Partition, Partition), usize)> {
        let mut counts: std::collections::BTreeMap<(Partition, Partition), usize> = Default::default();
        for (i, j) in self.edges() {
            let (a, b) = (self.space.partition(i), self.space.partition(j));
            *counts.entry(if a <= b { (a, b) } else { (b, a) }).or_default() += 1;
        }
        counts.into_iter().collect()
    }
}

/// Parses an edge-list artifact back into `(n, threshold, edges)`.
pub fn parse_edge_list(text: &str) -> Result<(usize, f64, Vec<(usize, usize)>)> {
    let bad = |line: usize, msg: &str| Error::Parse {
        path: "<edge list>".into(),
        line,
        msg: msg.to_string(),
    };
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| bad(1, "missing header"))?;
    let mut h = header.split_whitespace();
    let n = h.next().and_then(|s| s.parse().ok()).ok_or_else(|| bad(1, "bad node count"))?;
    let t = h.next().and_then(|s| s.parse().ok()).ok_or_else(|| bad(1, "bad threshold"))?;
    let mut edges = Vec::new();
    for (k, line) in lines.enumerate() {
        let mut f = line.split_whitespace();
        let i: usize = f.next().and_then(|s| s.parse().ok()).ok_or_else(|| bad(k + 2, "bad edge"))?;
        let j: usize = f.next().and_then(|s| s.parse().ok()).ok_or_else(|| bad(k + 2, "bad edge"))?;
        if i >= j || j >= n {
            return Err(bad(k + 2, "edge must satisfy i < j < N"));
        }
        edges.push((i, j));
    }
    Ok((n, t, edges))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn animals() -> Taxonomy {
        Taxonomy::from_pairs(&[("animal", "root"), ("dog", "animal"), ("cat", "animal")]).unwrap()
    }

    #[test]
    fn overlap_with_targets_is_removed_from_aux() {
        let s = ClassSpace::build(&["dog"], &["cat"], &["Dog", "wolf", "CAT", "fox"], GraphMode::Test).unwrap();
        assert_eq!(s.auxiliary, vec!["wolf", "fox"]);
        let s = ClassSpace::build(&["stop sign"], &[], &["stop_sign", "sign"], GraphMode::Train).unwrap();
        assert_eq!(s.auxiliary, vec!["sign"]);
    }

    #[test]
    fn disjoint_aux_unchanged() {
        let s = ClassSpace::build(&["a"], &["b"], &["c", "d"], GraphMode::Train).unwrap();
        assert_eq!(s.auxiliary, vec!["c", "d"]);
        assert_eq!(s.classes(), vec!["a", "c", "d"]);
        assert_eq!(s.with_mode(GraphMode::Test).classes(), vec!["a", "b", "c", "d"]);
    }

    #[test]
    fn seen_unseen_overlap_is_contract_error() {
        assert!(matches!(
            ClassSpace::build(&["a", "b"], &["b"], &[], GraphMode::Train),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn node_count_arithmetic() {
        let seen: Vec<String> = (0..64).map(|i| format!("s{i}")).collect();
        let unseen: Vec<String> = (0..16).map(|i| format!("u{i}")).collect();
        let aux: Vec<String> = (0..984).map(|i| format!("a{i}")).collect();
        let s = ClassSpace::build(&seen, &unseen, &aux, GraphMode::Train).unwrap();
        assert_eq!(s.len(), 1048);
        assert_eq!(s.with_mode(GraphMode::Test).len(), 1064);
        assert_eq!(s.partition(63), Partition::Seen);
        assert_eq!(s.partition(64), Partition::Auxiliary);
    }

    #[test]
    fn adjacency_thresholds() {
        let tax = animals();
        let s = ClassSpace::build(&["dog"], &["cat"], &[], GraphMode::Test).unwrap();
        let g = build_adjacency(&s, &tax, 0.5).unwrap();
        assert_eq!(g.adjacency.get2(0, 1), 1.0);
        assert_eq!(g.edge_count, 1);
        let g = build_adjacency(&s, &tax, 0.7).unwrap();
        assert_eq!(g.adjacency.get2(0, 1), 0.0);
        assert_eq!(g.edge_count, 0);
        let g = build_adjacency(&s, &tax, 1.0).unwrap();
        assert_eq!(g.adjacency, Tensor::identity(2));
        assert!(build_adjacency(&s, &tax, 0.0).is_err());
        assert!(build_adjacency(&s, &tax, 1.5).is_err());
    }

    #[test]
    fn missing_taxonomy_node_is_named() {
        let s = ClassSpace::build(&["dog"], &["zebra"], &[], GraphMode::Test).unwrap();
        let err = build_adjacency(&s, &animals(), 0.5).unwrap_err().to_string();
        assert!(err.contains("zebra"), "{err}");
    }

    #[test]
    fn normalization_examples() {
        let ones = Tensor::filled(&[2, 2], 1.0);
        let n = normalize_adjacency(&ones, &ones).unwrap();
        assert!(n.max_abs_diff(&Tensor::filled(&[2, 2], 0.5)).unwrap() < 1e-12);
        let i3 = Tensor::identity(3);
        assert_eq!(normalize_adjacency(&i3, &Tensor::filled(&[3, 3], 1.0)).unwrap(), i3);
        let one = Tensor::filled(&[1, 1], 1.0);
        assert_eq!(normalize_adjacency(&one, &one).unwrap().data(), &[1.0]);
        assert!(normalize_adjacency(&ones, &i3).is_err());
    }

    #[test]
    fn zero_rows_stay_zero() {
        let a = Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 0.0]).unwrap();
        let n = normalize_adjacency(&a, &Tensor::filled(&[2, 2], 1.0)).unwrap();
        assert_eq!(n.data(), &[1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn edge_list_round_trip_and_restriction() {
        let tax = Taxonomy::from_pairs(&[
            ("animal", "root"),
            ("dog", "animal"),
            ("cat", "animal"),
            ("wolf", "animal"),
            ("tool", "root"),
            ("saw", "tool"),
        ])
        .unwrap();
        let s = ClassSpace::build(&["dog", "saw"], &["cat"], &["wolf"], GraphMode::Test).unwrap();
        let g = build_adjacency(&s, &tax, 0.5).unwrap();
        let (n, t, edges) = parse_edge_list(&g.to_edge_list()).unwrap();
        assert_eq!((n, t), (4, 0.5));
        assert_eq!(edges, vec![(0, 2), (0, 3), (2, 3)]);
        let r = g.restrict_to_targets().unwrap();
        assert_eq!(r.len(), 3);
        assert_eq!(r.edge_count, 1);
        assert!(g.class_index().contains("3\twolf\taux"));
    }
}
