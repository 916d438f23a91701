//! Lexical node retrieval: an inverted index over each node's primary
//! feature, scored by TF-IDF cosine similarity.
//!
//! Term weights are `tf * idf` with the smoothed
//! `idf = ln((1 + n_docs) / (1 + df)) + 1`. Query tokens that never occur in
//! the corpus carry no weight. Results are ordered by descending score, ties
//! by ascending node id, and zero scores are dropped.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{node_set_checksum, Graph, NodeId};
use crate::text::tokenize;

const MAGIC: &[u8; 7] = b"TAGQIX1";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum IndexError {
    #[error("query has no tokens")]
    EmptyQuery,
    #[error("k must be at least 1")]
    ZeroK,
    #[error("index i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("not an index file (bad magic bytes)")]
    BadMagic,
    #[error("unsupported index format version {0}")]
    UnsupportedVersion(u32),
    #[error("index file is truncated or corrupt: {0}")]
    Corrupt(String),
    #[error(
        "index was built for a different graph (checksum {found:#x}, graph has {expected:#x})"
    )]
    ChecksumMismatch { expected: u64, found: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalHit {
    pub id: NodeId,
    pub node_type: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
struct Doc {
    id: NodeId,
    node_type: String,
    norm: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalIndex {
    docs: Vec<Doc>,
    /// token -> (doc index, term frequency), doc index ascending
    postings: BTreeMap<String, Vec<(u32, u32)>>,
    checksum: u64,
}

impl RetrievalIndex {
    pub fn build(graph: &Graph) -> RetrievalIndex {
        let mut docs = Vec::with_capacity(graph.node_count());
        let mut postings: BTreeMap<String, Vec<(u32, u32)>> = BTreeMap::new();
        for (doc_idx, node) in graph.nodes().enumerate() {
            let mut tf: BTreeMap<String, u32> = BTreeMap::new();
            for tok in tokenize(graph.primary_text(node.id.as_str()).unwrap_or("")) {
                *tf.entry(tok).or_default() += 1;
            }
            for (tok, count) in tf {
                postings
                    .entry(tok)
                    .or_default()
                    .push((doc_idx as u32, count));
            }
            docs.push(Doc {
                id: node.id.clone(),
                node_type: node.node_type.clone(),
                norm: 0.0,
            });
        }
        let mut index = RetrievalIndex {
            docs,
            postings,
            checksum: graph.checksum(),
        };
        index.compute_norms();
        index
    }

    fn compute_norms(&mut self) {
        let mut sq = vec![0.0f64; self.docs.len()];
        for list in self.postings.values() {
            let idf = idf(self.docs.len(), list.len());
            for &(doc, tf) in list {
                let w = tf as f64 * idf;
                sq[doc as usize] += w * w;
            }
        }
        for (doc, s) in self.docs.iter_mut().zip(sq) {
            doc.norm = s.sqrt();
        }
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn checksum(&self) -> u64 {
        self.checksum
    }

    /// Node ids posted under `token` (already case-folded).
    pub fn lookup(&self, token: &str) -> Vec<&NodeId> {
        self.postings
            .get(token)
            .map(|l| l.iter().map(|&(d, _)| &self.docs[d as usize].id).collect())
            .unwrap_or_default()
    }

    pub fn verify(&self, graph: &Graph) -> Result<(), IndexError> {
        let expected = graph.checksum();
        if expected != self.checksum
            || node_set_checksum(self.docs.iter().map(|d| d.id.as_str())) != self.checksum
        {
            return Err(IndexError::ChecksumMismatch {
                expected,
                found: self.checksum,
            });
        }
        Ok(())
    }

    pub fn retrieve(&self, query: &str, k: usize) -> Result<Vec<RetrievalHit>, IndexError> {
        if k == 0 {
            return Err(IndexError::ZeroK);
        }
        let tokens = tokenize(query);
        if tokens.is_empty() {
            return Err(IndexError::EmptyQuery);
        }
        let mut qtf: BTreeMap<&str, u32> = BTreeMap::new();
        for t in &tokens {
            if self.postings.contains_key(t.as_str()) {
                *qtf.entry(t.as_str()).or_default() += 1;
            }
        }
        let n = self.docs.len();
        let mut qnorm_sq = 0.0;
        let mut dots = vec![0.0f64; n];
        for (tok, count) in &qtf {
            let list = &self.postings[*tok];
            let idf = idf(n, list.len());
            let qw = *count as f64 * idf;
            qnorm_sq += qw * qw;
            for &(doc, tf) in list {
                dots[doc as usize] += qw * tf as f64 * idf;
            }
        }
        if qnorm_sq == 0.0 {
            return Ok(Vec::new());
        }
        let qnorm = qnorm_sq.sqrt();
        let mut hits: Vec<RetrievalHit> = dots
            .into_iter()
            .enumerate()
            .filter(|&(d, dot)| dot > 0.0 && self.docs[d].norm > 0.0)
            .map(|(d, dot)| RetrievalHit {
                id: self.docs[d].id.clone(),
                node_type: self.docs[d].node_type.clone(),
                score: dot / (qnorm * self.docs[d].norm),
            })
            .collect();
        hits.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.id.cmp(&b.id)));
        hits.truncate(k);
        Ok(hits)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&self.checksum.to_le_bytes());
        out.extend_from_slice(&(self.docs.len() as u32).to_le_bytes());
        for doc in &self.docs {
            put_str(&mut out, doc.id.as_str());
            put_str(&mut out, &doc.node_type);
        }
        out.extend_from_slice(&(self.postings.len() as u32).to_le_bytes());
        for (tok, list) in &self.postings {
            put_str(&mut out, tok);
            out.extend_from_slice(&(list.len() as u32).to_le_bytes());
            for &(doc, tf) in list {
                out.extend_from_slice(&doc.to_le_bytes());
                out.extend_from_slice(&tf.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<RetrievalIndex, IndexError> {
        if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
            return Err(IndexError::BadMagic);
        }
        let mut r = Reader {
            buf: bytes,
            pos: MAGIC.len(),
        };
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(IndexError::UnsupportedVersion(version));
        }
        let checksum = r.u64()?;
        let n_docs = r.u32()? as usize;
        let mut docs = Vec::with_capacity(n_docs.min(1 << 20));
        for _ in 0..n_docs {
            let id = NodeId::new(r.string()?);
            let node_type = r.string()?;
            docs.push(Doc {
                id,
                node_type,
                norm: 0.0,
            });
        }
        let n_terms = r.u32()? as usize;
        let mut postings = BTreeMap::new();
        for _ in 0..n_terms {
            let tok = r.string()?;
            let len = r.u32()? as usize;
            let mut list = Vec::with_capacity(len.min(1 << 20));
            for _ in 0..len {
                let doc = r.u32()?;
                if doc as usize >= n_docs {
                    return Err(IndexError::Corrupt(format!("posting refers to doc {doc}")));
                }
                list.push((doc, r.u32()?));
            }
            postings.insert(tok, list);
        }
        if r.pos != bytes.len() {
            return Err(IndexError::Corrupt("trailing bytes".into()));
        }
        let mut index = RetrievalIndex {
            docs,
            postings,
            checksum,
        };
        index.compute_norms();
        Ok(index)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), IndexError> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    /// Loads a persisted index and checks that it covers exactly `graph`'s nodes.
    pub fn load(path: impl AsRef<Path>, graph: &Graph) -> Result<RetrievalIndex, IndexError> {
        let index = Self::from_bytes(&std::fs::read(path)?)?;
        index.verify(graph)?;
        Ok(index)
    }
}

pub fn idf(n_docs: usize, df: usize) -> f64 {
    ((1.0 + n_docs as f64) / (1.0 + df as f64)).ln() + 1.0
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8], IndexError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| IndexError::Corrupt(format!("unexpected end at byte {}", self.pos)))?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32, IndexError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, IndexError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String, IndexError> {
        let len = self.u32()? as usize;
        String::from_utf8(self.take(len)?.to_vec())
            .map_err(|_| IndexError::Corrupt("invalid utf-8".into()))
    }
}
