//! Dense token→vector tables, cosine similarity and the word2vec text format.

use std::fmt;
use std::fs;
use std::io::{self, BufRead, Write};
use std::path::Path;

use indexmap::IndexMap;

use crate::error::{Error, Result};

/// Lookup of a token that has no vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MissingEmbedding(pub String);

impl fmt::Display for MissingEmbedding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "missing embedding for `{}`", self.0)
    }
}

impl std::error::Error for MissingEmbedding {}

/// Anything that can hand out a vector for an identifier.
pub trait VectorLookup {
    fn dim(&self) -> usize;
    fn vector(&self, id: &str) -> Option<&[f32]>;
}

/// Cosine similarity accumulated in `f64`, clamped to `[-1, 1]`.
/// Returns 0 when either vector has zero norm.
pub fn cosine_slices(a: &[f32], b: &[f32]) -> f64 {
    let mut dot = 0.0f64;
    let mut na = 0.0f64;
    let mut nb = 0.0f64;
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (x as f64, y as f64);
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (dot / (na * nb).sqrt()).clamp(-1.0, 1.0)
}

/// Token vocabulary plus one `f32` row per token.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSpace {
    dim: usize,
    index: IndexMap<String, ()>,
    data: Vec<f32>,
}

impl EmbeddingSpace {
    /// Builds a space from `tokens` and row-major `data`.
    pub fn new(dim: usize, tokens: Vec<String>, data: Vec<f32>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Invalid("embedding dimension must be positive".into()));
        }
        if data.len() != tokens.len() * dim {
            return Err(Error::Invalid(format!(
                "{} values for {} tokens of dimension {dim}",
                data.len(),
                tokens.len()
            )));
        }
        if let Some(bad) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Invalid(format!(
                "non-finite component in row of `{}`",
                tokens[bad / dim]
            )));
        }
        let mut index = IndexMap::with_capacity(tokens.len());
        for t in tokens {
            if t.is_empty() {
                return Err(Error::Invalid("empty token".into()));
            }
            if index.insert(t.clone(), ()).is_some() {
                return Err(Error::Invalid(format!("duplicate token `{t}`")));
            }
        }
        Ok(EmbeddingSpace { dim, index, data })
    }

    pub fn from_rows(dim: usize, rows: Vec<(String, Vec<f32>)>) -> Result<Self> {
        let mut tokens = Vec::with_capacity(rows.len());
        let mut data = Vec::with_capacity(rows.len() * dim);
        for (t, v) in rows {
            if v.len() != dim {
                return Err(Error::Invalid(format!(
                    "row `{t}` has {} components, expected {dim}",
                    v.len()
                )));
            }
            tokens.push(t);
            data.extend(v);
        }
        Self::new(dim, tokens, data)
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    pub fn tokens(&self) -> impl Iterator<Item = &str> {
        self.index.keys().map(String::as_str)
    }

    pub fn token(&self, row: usize) -> &str {
        self.index
            .get_index(row)
            .map(|(k, _)| k.as_str())
            .expect("row in range")
    }

    pub fn row_of(&self, token: &str) -> Option<usize> {
        self.index.get_index_of(token)
    }

    pub fn row(&self, row: usize) -> &[f32] {
        &self.data[row * self.dim..(row + 1) * self.dim]
    }

    pub fn get(&self, token: &str) -> std::result::Result<&[f32], MissingEmbedding> {
        self.row_of(token)
            .map(|r| self.row(r))
            .ok_or_else(|| MissingEmbedding(token.to_owned()))
    }

    pub fn cosine(&self, a: &str, b: &str) -> std::result::Result<f64, MissingEmbedding> {
        Ok(cosine_slices(self.get(a)?, self.get(b)?))
    }

    /// The `n` most similar other tokens, by cosine descending and then
    /// row index ascending.
    pub fn nearest(&self, token: &str, n: usize) -> std::result::Result<Vec<(&str, f64)>, MissingEmbedding> {
        let row = self.row_of(token).ok_or_else(|| MissingEmbedding(token.to_owned()))?;
        let query = self.row(row);
        let mut scored: Vec<(usize, f64)> = (0..self.len())
            .filter(|&r| r != row)
            .map(|r| (r, cosine_slices(query, self.row(r))))
            .collect();
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        scored.truncate(n);
        Ok(scored.into_iter().map(|(r, c)| (self.token(r), c)).collect())
    }

    /// word2vec text format: a `count dim` header, then `token v1 … vdim`.
    pub fn write_word2vec<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "{} {}", self.len(), self.dim)?;
        for (r, token) in self.tokens().enumerate() {
            out.write_all(token.as_bytes())?;
            for v in self.row(r) {
                write!(out, " {v}")?;
            }
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn save_word2vec(&self, path: &Path) -> Result<()> {
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = io::BufWriter::new(file);
        self.write_word2vec(&mut w).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_word2vec<R: BufRead>(input: R, source: &str) -> Result<Self> {
        let mut lines = input.lines();
        let header = match lines.next() {
            Some(l) => l?,
            None => return Err(Error::parse(source, 1, "missing header")),
        };
        let mut parts = header.split_whitespace();
        let (count, dim) = match (
            parts.next().and_then(|s| s.parse::<usize>().ok()),
            parts.next().and_then(|s| s.parse::<usize>().ok()),
            parts.next(),
        ) {
            (Some(c), Some(d), None) if d > 0 => (c, d),
            _ => return Err(Error::parse(source, 1, "header must be `<count> <dim>`")),
        };
        let mut tokens = Vec::with_capacity(count);
        let mut data = Vec::with_capacity(count * dim);
        for (i, line) in lines.enumerate() {
            let line = line?;
            let line_no = i + 2;
            if line.trim().is_empty() {
                continue;
            }
            let mut fields = line.split(' ').filter(|f| !f.is_empty());
            let token = fields.next().unwrap_or_default().to_owned();
            let before = data.len();
            for f in fields {
                let v: f32 = f
                    .parse()
                    .map_err(|_| Error::parse(source, line_no, format!("bad component `{f}`")))?;
                data.push(v);
            }
            if data.len() - before != dim {
                return Err(Error::parse(
                    source,
                    line_no,
                    format!("expected {dim} components, found {}", data.len() - before),
                ));
            }
            tokens.push(token);
        }
        if tokens.len() != count {
            return Err(Error::parse(
                source,
                1,
                format!("header announces {count} rows, found {}", tokens.len()),
            ));
        }
        Self::new(dim, tokens, data)
    }

    pub fn load_word2vec(path: &Path) -> Result<Self> {
        let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_word2vec(io::BufReader::new(file), &path.display().to_string())
    }
}

impl VectorLookup for EmbeddingSpace {
    fn dim(&self) -> usize {
        self.dim
    }

    fn vector(&self, id: &str) -> Option<&[f32]> {
        self.row_of(id).map(|r| self.row(r))
    }
}

/// Looks identifiers up under a fixed prefix, e.g. `ENTITY/` rows of a joint
/// word/entity space.
pub struct PrefixedLookup<'a, L: ?Sized> {
    inner: &'a L,
    prefix: String,
}

impl<'a, L: VectorLookup + ?Sized> PrefixedLookup<'a, L> {
    pub fn new(inner: &'a L, prefix: impl Into<String>) -> Self {
        PrefixedLookup {
            inner,
            prefix: prefix.into(),
        }
    }
}

impl<L: VectorLookup + ?Sized> VectorLookup for PrefixedLookup<'_, L> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn vector(&self, id: &str) -> Option<&[f32]> {
        if self.prefix.is_empty() {
            return self.inner.vector(id);
        }
        self.inner.vector(&format!("{}{id}", self.prefix))
    }
}
