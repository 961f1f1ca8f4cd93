//! Entity feature tables: pretrained word vectors or seeded random baselines.
//!
//! Rows are indexed by [`EntityId`]; the extra last row belongs to
//! [`EntityId::EMPTY`] and is always zero.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::recipes::{EntityId, RecipeBook};
use crate::rng;

pub const DEFAULT_DIM: usize = 300;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EmbedError {
    #[error("line {line}: expected {expected} components, found {found}")]
    Dimension {
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("line {line}: `{token}` is not a number")]
    BadNumber { line: usize, token: String },
    #[error("word-vector source contains no vectors")]
    Empty,
    #[error("dimension must be positive")]
    ZeroDim,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum EmbeddingSource {
    Pretrained,
    Random { seed: u64 },
    /// Derived from recipe co-occurrence statistics rather than text.
    Cooccurrence,
}

/// Parsed `word v1 ... vd` text vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct WordVectors {
    dim: usize,
    vectors: BTreeMap<String, Vec<f64>>,
}

impl WordVectors {
    /// Parses the whitespace-separated text format. Blank lines are skipped
    /// and the first occurrence of a word wins. A leading `count dim` header
    /// line (word2vec text style) is tolerated.
    pub fn parse(text: &str) -> Result<Self, EmbedError> {
        let mut dim = 0;
        let mut vectors = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let mut parts = raw.split_whitespace();
            let Some(word) = parts.next() else { continue };
            let values: Vec<&str> = parts.collect();
            if line == 1 && values.len() == 1 && word.parse::<usize>().is_ok() && values[0].parse::<usize>().is_ok() {
                continue;
            }
            if dim == 0 {
                dim = values.len();
                if dim == 0 {
                    return Err(EmbedError::Dimension { line, expected: 1, found: 0 });
                }
            } else if values.len() != dim {
                return Err(EmbedError::Dimension {
                    line,
                    expected: dim,
                    found: values.len(),
                });
            }
            let mut v = Vec::with_capacity(dim);
            for t in values {
                v.push(t.parse::<f64>().map_err(|_| EmbedError::BadNumber {
                    line,
                    token: t.to_string(),
                })?);
            }
            vectors.entry(word.to_lowercase()).or_insert(v);
        }
        if vectors.is_empty() {
            return Err(EmbedError::Empty);
        }
        Ok(WordVectors { dim, vectors })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, word: &str) -> Option<&[f64]> {
        self.vectors.get(word).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingTable {
    dim: usize,
    rows: Vec<f64>,
    source: EmbeddingSource,
}

impl EmbeddingTable {
    pub fn from_rows(dim: usize, mut rows: Vec<Vec<f64>>, source: EmbeddingSource) -> Result<Self, EmbedError> {
        if dim == 0 {
            return Err(EmbedError::ZeroDim);
        }
        rows.push(alloc::vec![0.0; dim]);
        let mut flat = Vec::with_capacity(rows.len() * dim);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != dim {
                return Err(EmbedError::Dimension {
                    line: i + 1,
                    expected: dim,
                    found: r.len(),
                });
            }
            flat.extend_from_slice(r);
        }
        Ok(EmbeddingTable {
            dim,
            rows: flat,
            source,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn source(&self) -> &EmbeddingSource {
        &self.source
    }

    /// Number of real entities (excludes the EMPTY row).
    pub fn num_entities(&self) -> usize {
        self.rows.len() / self.dim - 1
    }

    /// Row of the table backing `id`; EMPTY maps to the final zero row.
    pub fn row_index(&self, id: EntityId) -> usize {
        if id.is_empty() {
            self.num_entities()
        } else {
            id.index()
        }
    }

    pub fn vector(&self, id: EntityId) -> &[f64] {
        let r = self.row_index(id);
        &self.rows[r * self.dim..(r + 1) * self.dim]
    }

    /// All rows including the EMPTY row, row-major.
    pub fn as_flat(&self) -> &[f64] {
        &self.rows
    }
}

fn unit_normal<R: Rng>(rng: &mut R, dim: usize) -> Vec<f64> {
    let mut v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
    let norm = libm::sqrt(v.iter().map(|x| x * x).sum::<f64>());
    if norm > 0.0 {
        for x in &mut v {
            *x /= norm;
        }
    }
    v
}

/// Deterministic stand-in vector for a word missing from the source.
pub fn oov_vector(token: &str, dim: usize) -> Vec<f64> {
    unit_normal(&mut rng::seeded(rng::fnv1a(token.as_bytes())), dim)
}

/// Entity vector = mean of its token vectors; missing tokens get
/// [`oov_vector`].
pub fn load_pretrained(book: &RecipeBook, words: &WordVectors) -> EmbeddingTable {
    let dim = words.dim();
    let rows = book
        .entities()
        .iter()
        .map(|e| {
            let mut acc = alloc::vec![0.0; dim];
            for t in &e.tokens {
                let owned;
                let v = match words.get(t) {
                    Some(v) => v,
                    None => {
                        owned = oov_vector(t, dim);
                        &owned
                    }
                };
                for (a, x) in acc.iter_mut().zip(v) {
                    *a += x;
                }
            }
            let n = e.tokens.len() as f64;
            acc.iter_mut().for_each(|a| *a /= n);
            acc
        })
        .collect();
    EmbeddingTable::from_rows(dim, rows, EmbeddingSource::Pretrained).expect("dim > 0 after parse")
}

/// I.i.d. standard-normal rows scaled to unit norm.
pub fn random_table(book: &RecipeBook, dim: usize, seed: u64) -> Result<EmbeddingTable, EmbedError> {
    if dim == 0 {
        return Err(EmbedError::ZeroDim);
    }
    let mut rng = rng::seeded(seed);
    let rows = (0..book.num_entities()).map(|_| unit_normal(&mut rng, dim)).collect();
    EmbeddingTable::from_rows(dim, rows, EmbeddingSource::Random { seed })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bundled;

    fn book() -> RecipeBook {
        RecipeBook::from_names(
            ["mud", "sand castle", "sand", "castle", "zzyzx"],
            [("sand castle", ["sand", "castle"])],
        )
        .unwrap()
    }

    const VECS: &str = "mud 1 2 3\nsand 0.5 0 -1\ncastle 1.5 4 1\n\nmud 9 9 9\n";

    #[test]
    fn single_token_verbatim_and_mean() {
        let book = book();
        let words = WordVectors::parse(VECS).unwrap();
        let table = load_pretrained(&book, &words);
        assert_eq!(table.vector(book.id("mud").unwrap()), &[1.0, 2.0, 3.0]);
        // (sand + castle) / 2 computed by hand
        assert_eq!(table.vector(book.id("sand castle").unwrap()), &[1.0, 2.0, 0.0]);
        assert_eq!(table.vector(EntityId::EMPTY), &[0.0, 0.0, 0.0]);
        let oov = table.vector(book.id("zzyzx").unwrap());
        assert_eq!(oov, oov_vector("zzyzx", 3).as_slice());
        let n: f64 = oov.iter().map(|x| x * x).sum();
        assert!((n - 1.0).abs() < 1e-12);
        assert_eq!(table, load_pretrained(&book, &WordVectors::parse(VECS).unwrap()));
    }

    #[test]
    fn parse_errors() {
        assert_eq!(WordVectors::parse(""), Err(EmbedError::Empty));
        assert_eq!(WordVectors::parse("\n  \n"), Err(EmbedError::Empty));
        assert_eq!(
            WordVectors::parse("a 1 2\nb 1 2 3\n"),
            Err(EmbedError::Dimension { line: 2, expected: 2, found: 3 })
        );
        assert!(matches!(
            WordVectors::parse("a 1 x\n"),
            Err(EmbedError::BadNumber { line: 1, .. })
        ));
        let w = WordVectors::parse("2 3\na 1 2 3\nB 4 5 6\n").unwrap();
        assert_eq!(w.dim(), 3);
        assert_eq!(w.get("b"), Some(&[4.0, 5.0, 6.0][..]));
    }

    #[test]
    fn random_tables() {
        let book = bundled::example_book();
        let a = random_table(&book, 16, 3).unwrap();
        let b = random_table(&book, 16, 3).unwrap();
        let c = random_table(&book, 16, 4).unwrap();
        assert_eq!(a, b);
        let diff = a
            .as_flat()
            .iter()
            .zip(c.as_flat())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max);
        assert!(diff > 0.0);
        for e in book.entities() {
            let n: f64 = a.vector(e.id).iter().map(|x| x * x).sum();
            assert!((libm::sqrt(n) - 1.0).abs() < 1e-6);
        }
        assert!(a.vector(EntityId::EMPTY).iter().all(|&x| x == 0.0));
        assert_eq!(random_table(&book, 0, 1), Err(EmbedError::ZeroDim));
    }
}
