//! Word-embedding table in GloVe text layout (`token v1 ... vd` per line).

use std::collections::HashMap;
use std::fmt::Write as _;
use std::io::BufRead;
use std::path::Path;

use crate::diffcore::Tensor;
use crate::error::{Error, Result};
use crate::graph::ClassSpace;

pub const DEFAULT_EMBEDDING_DIM: usize = 300;

#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    entries: HashMap<String, Vec<f64>>,
    /// Insertion order of first occurrence, for stable output.
    order: Vec<String>,
    warnings: Vec<String>,
}

impl EmbeddingTable {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            entries: HashMap::new(),
            order: Vec::new(),
            warnings: Vec::new(),
        }
    }

    /// Loads a text table. With `expected_dim = None` the width of the first
    /// vector line fixes the dimension.
    pub fn load(path: impl AsRef<Path>, expected_dim: Option<usize>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path)?;
        Self::read(std::io::BufReader::new(file), expected_dim, path)
    }

    pub fn read<R: BufRead>(reader: R, expected_dim: Option<usize>, origin: &Path) -> Result<Self> {
        let mut table: Option<EmbeddingTable> = expected_dim.map(EmbeddingTable::new);
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            let lineno = i + 1;
            let mut fields = line.split_whitespace();
            let Some(token) = fields.next() else { continue };
            let values = fields
                .map(|f| {
                    f.parse::<f64>().map_err(|_| Error::Parse {
                        path: origin.to_path_buf(),
                        line: lineno,
                        msg: format!("non-numeric field `{f}`"),
                    })
                })
                .collect::<Result<Vec<f64>>>()?;
            // word2vec-style "<count> <dim>" header
            if lineno == 1 && values.len() == 1 && token.parse::<usize>().is_ok() {
                continue;
            }
            let t = table.get_or_insert_with(|| EmbeddingTable::new(values.len()));
            if values.len() != t.dim || values.is_empty() {
                return Err(Error::Parse {
                    path: origin.to_path_buf(),
                    line: lineno,
                    msg: format!("expected {} values, found {}", t.dim, values.len()),
                });
            }
            t.insert(token, values)?;
        }
        table.ok_or_else(|| Error::Parse {
            path: origin.to_path_buf(),
            line: 0,
            msg: "no embedding lines".into(),
        })
    }

    /// Inserts (lowercased). A repeated token replaces the earlier vector
    /// and records a warning.
    pub fn insert(&mut self, token: &str, values: Vec<f64>) -> Result<()> {
        if values.len() != self.dim {
            return Err(Error::Dimension(format!(
                "embedding for `{token}` has {} values, table dim is {}",
                values.len(),
                self.dim
            )));
        }
        let token = token.to_lowercase();
        if self.entries.insert(token.clone(), values).is_some() {
            let msg = format!("duplicate embedding token `{token}`; keeping the last occurrence");
            log::warn!("{msg}");
            self.warnings.push(msg);
        } else {
            self.order.push(token);
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    pub fn get(&self, token: &str) -> Option<&[f64]> {
        self.entries.get(&token.to_lowercase()).map(Vec::as_slice)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for token in &self.order {
            out.push_str(token);
            for v in &self.entries[token] {
                let _ = write!(out, " {v}");
            }
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    /// Mean of the token vectors of a (possibly multi-word) class name.
    pub fn class_embedding(&self, class_name: &str) -> Result<Tensor> {
        let tokens = tokenize(class_name);
        if tokens.is_empty() {
            return Err(Error::Contract("empty class name".into()));
        }
        let mut acc = vec![0.0; self.dim];
        for tok in &tokens {
            let v = self.entries.get(tok).ok_or_else(|| Error::MissingEmbedding {
                class: class_name.to_string(),
                token: tok.clone(),
            })?;
            for (a, x) in acc.iter_mut().zip(v) {
                *a += x;
            }
        }
        let n = tokens.len() as f64;
        acc.iter_mut().for_each(|a| *a /= n);
        Ok(Tensor::vector(acc))
    }

    /// Row `i` is the embedding of class `i` in the space's index order.
    pub fn embedding_matrix(&self, space: &ClassSpace) -> Result<Tensor> {
        let classes = space.classes();
        let mut data = Vec::with_capacity(classes.len() * self.dim);
        for c in &classes {
            data.extend(self.class_embedding(c)?.into_data());
        }
        Tensor::matrix(classes.len(), self.dim, data)
    }
}

/// Lowercases and splits on whitespace, `_` and `-`.
pub fn tokenize(name: &str) -> Vec<String> {
    name.to_lowercase()
        .split(|c: char| c.is_whitespace() || c == '_' || c == '-')
        .filter(|s| !s.is_empty())
        .map(str::to_string)
        .collect()
}
