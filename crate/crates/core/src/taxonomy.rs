//! Single-parent taxonomy with depth, lowest common subsumer and
//! Wu-Palmer similarity.
//!
//! File format: UTF-8, one `child<TAB>parent` pair per line; blank lines
//! and lines starting with `#` are ignored. The root appears only as a
//! parent. Root depth is 1.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct Taxonomy {
    names: Vec<String>,
    index: HashMap<String, usize>,
    parent: Vec<Option<usize>>,
    depth: Vec<usize>,
    root: usize,
}

impl PartialEq for Taxonomy {
    /// Same node set with the same parent relation, independent of order.
    fn eq(&self, other: &Self) -> bool {
        self.names.len() == other.names.len()
            && self.names[self.root] == other.names[other.root]
            && self.names.iter().enumerate().all(|(i, n)| {
                other.index.get(n).is_some_and(|&j| {
                    self.parent[i].map(|p| &self.names[p]) == other.parent[j].map(|p| &other.names[p])
                })
            })
    }
}

impl Taxonomy {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text, path)
    }

    /// Parses the tab-separated format; `origin` is used in error messages.
    pub fn parse(text: &str, origin: impl AsRef<Path>) -> Result<Self> {
        let origin = origin.as_ref().to_path_buf();
        let mut edges = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let mut parts = line.split('\t');
            let child = parts.next().unwrap_or("").trim();
            let parent = parts.next().map(str::trim).unwrap_or("");
            if parts.next().is_some() {
                return Err(parse_err(&origin, i + 1, "expected exactly `child<TAB>parent`"));
            }
            if child.is_empty() || parent.is_empty() {
                return Err(parse_err(&origin, i + 1, "missing child or dangling parent field"));
            }
            edges.push((i + 1, child.to_string(), parent.to_string()));
        }
        Self::from_edges(edges, &origin)
    }

    /// Builds from `(line, child, parent)` triples.
    fn from_edges(edges: Vec<(usize, String, String)>, origin: &Path) -> Result<Self> {
        let mut names: Vec<String> = Vec::new();
        let mut index: HashMap<String, usize> = HashMap::new();
        let mut intern = |s: &str, names: &mut Vec<String>| -> usize {
            *index.entry(s.to_string()).or_insert_with(|| {
                names.push(s.to_string());
                names.len() - 1
            })
        };
        let mut parent_of: Vec<Option<(usize, usize)>> = Vec::new();
        for (line, child, parent) in &edges {
            let c = intern(child, &mut names);
            let p = intern(parent, &mut names);
            parent_of.resize(names.len(), None);
            if c == p {
                return Err(parse_err(origin, *line, format!("cycle: `{child}` is its own parent")));
            }
            if parent_of[c].is_some() {
                return Err(parse_err(origin, *line, format!("duplicate child `{child}`")));
            }
            parent_of[c] = Some((p, *line));
        }
        if names.is_empty() {
            return Err(parse_err(origin, 0, "empty taxonomy"));
        }

        // cycles: any upward walk longer than the node count revisits a node
        let n = names.len();
        for start in 0..n {
            let mut cur = start;
            let mut steps = 0;
            while let Some((p, line)) = parent_of[cur] {
                cur = p;
                steps += 1;
                if cur == start || steps > n {
                    return Err(parse_err(
                        origin,
                        line,
                        format!("cycle through `{}`", names[cur]),
                    ));
                }
            }
        }

        let roots: Vec<usize> = (0..n).filter(|&i| parent_of[i].is_none()).collect();
        if roots.len() != 1 {
            // report the first edge that introduced the second root
            let second = roots[1];
            let line = edges
                .iter()
                .find(|(_, _, p)| index_lookup(&names, p) == Some(second))
                .map_or(0, |e| e.0);
            return Err(parse_err(
                origin,
                line,
                format!("multiple roots: `{}` and `{}`", names[roots[0]], names[second]),
            ));
        }
        let parent: Vec<Option<usize>> = parent_of.iter().map(|p| p.map(|(p, _)| p)).collect();
        let depth = compute_depths(&parent);
        let index = names.iter().enumerate().map(|(i, s)| (s.clone(), i)).collect();
        Ok(Self {
            names,
            index,
            parent,
            depth,
            root: roots[0],
        })
    }

    /// Builds from in-memory `(child, parent)` pairs.
    pub fn from_pairs<S: AsRef<str>>(pairs: &[(S, S)]) -> Result<Self> {
        let edges = pairs
            .iter()
            .enumerate()
            .map(|(i, (c, p))| (i + 1, c.as_ref().to_string(), p.as_ref().to_string()))
            .collect();
        Self::from_edges(edges, Path::new("<memory>"))
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for (i, name) in self.names.iter().enumerate() {
            if let Some(p) = self.parent[i] {
                let _ = writeln!(out, "{name}\t{}", self.names[p]);
            }
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_tsv())?;
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn root(&self) -> &str {
        &self.names[self.root]
    }

    pub fn contains(&self, node: &str) -> bool {
        self.index.contains_key(node)
    }

    pub fn nodes(&self) -> impl Iterator<Item = &str> {
        self.names.iter().map(String::as_str)
    }

    pub fn parent(&self, node: &str) -> Result<Option<&str>> {
        let i = self.id(node)?;
        Ok(self.parent[i].map(|p| self.names[p].as_str()))
    }

    fn id(&self, node: &str) -> Result<usize> {
        self.index
            .get(node)
            .copied()
            .ok_or_else(|| Error::Lookup(node.to_string()))
    }

    /// Number of nodes on the root-to-node path.
    pub fn depth(&self, node: &str) -> Result<usize> {
        Ok(self.depth[self.id(node)?])
    }

    /// Deepest common ancestor; a node is its own ancestor.
    pub fn lcs(&self, a: &str, b: &str) -> Result<&str> {
        let (a, b) = (self.id(a)?, self.id(b)?);
        Ok(&self.names[self.lcs_id(a, b)])
    }

    fn lcs_id(&self, mut a: usize, mut b: usize) -> usize {
        while self.depth[a] > self.depth[b] {
            a = self.parent[a].expect("non-root above depth 1");
        }
        while self.depth[b] > self.depth[a] {
            b = self.parent[b].expect("non-root above depth 1");
        }
        while a != b {
            a = self.parent[a].expect("common root");
            b = self.parent[b].expect("common root");
        }
        a
    }

    /// `2 · depth(lcs) / (depth(a) + depth(b))`.
    pub fn wup_similarity(&self, a: &str, b: &str) -> Result<f64> {
        let (ia, ib) = (self.id(a)?, self.id(b)?);
        let l = self.lcs_id(ia, ib);
        Ok(2.0 * self.depth[l] as f64 / (self.depth[ia] + self.depth[ib]) as f64)
    }
}

fn index_lookup(names: &[String], s: &str) -> Option<usize> {
    names.iter().position(|n| n == s)
}

fn compute_depths(parent: &[Option<usize>]) -> Vec<usize> {
    let mut depth = vec![0usize; parent.len()];
    for start in 0..parent.len() {
        let mut path = Vec::new();
        let mut cur = start;
        while depth[cur] == 0 {
            path.push(cur);
            match parent[cur] {
                Some(p) => cur = p,
                None => break,
            }
        }
        let mut d = if depth[cur] == 0 { 0 } else { depth[cur] };
        for &node in path.iter().rev() {
            d += 1;
            depth[node] = d;
        }
    }
    depth
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}
