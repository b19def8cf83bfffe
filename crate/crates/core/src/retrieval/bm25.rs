//! BM25 over tool documents.
//!
//! `score(q, d) = Σ_{t ∈ q} idf(t) · tf(t,d)·(k1+1) / (tf(t,d) + k1·(1 − b + b·|d|/avgdl))`
//! with `idf(t) = ln(1 + (N − df(t) + 0.5) / (df(t) + 0.5))`. Repeated query
//! tokens count once per occurrence.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{rank, tokenize, FieldMask, RetrievalError};
use crate::io::write_atomic;
use crate::schema::{ToolPool, ToolSpec};
use crate::Error;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolDocument {
    pub tool_name: String,
    pub text: String,
    pub token_counts: BTreeMap<String, usize>,
    pub length: usize,
}

impl ToolDocument {
    pub fn new(tool_name: impl Into<String>, text: impl Into<String>) -> Self {
        let text = text.into();
        let mut token_counts = BTreeMap::new();
        let tokens = tokenize(&text);
        for t in &tokens {
            *token_counts.entry(t.clone()).or_insert(0) += 1;
        }
        ToolDocument {
            tool_name: tool_name.into(),
            text,
            length: tokens.len(),
            token_counts,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "IndexFile", into = "IndexFile")]
pub struct ToolIndex {
    documents: Vec<ToolDocument>,
    df: BTreeMap<String, usize>,
    /// The N used by idf; lags behind `documents.len()` after frozen inserts.
    doc_count: usize,
    avg_len: f64,
    pub k1: f64,
    pub b: f64,
    pub mask: FieldMask,
    postings: HashMap<String, Vec<(usize, usize)>>,
}

/// On-disk layout of `index.json`.
#[derive(Serialize, Deserialize)]
struct IndexFile {
    k1: f64,
    b: f64,
    mask: FieldMask,
    doc_count: usize,
    avg_len: f64,
    df: BTreeMap<String, usize>,
    documents: Vec<ToolDocument>,
}

impl From<IndexFile> for ToolIndex {
    fn from(f: IndexFile) -> Self {
        let mut index = ToolIndex {
            documents: f.documents,
            df: f.df,
            doc_count: f.doc_count,
            avg_len: f.avg_len,
            k1: f.k1,
            b: f.b,
            mask: f.mask,
            postings: HashMap::new(),
        };
        for i in 0..index.documents.len() {
            index.post(i);
        }
        index
    }
}

impl From<ToolIndex> for IndexFile {
    fn from(i: ToolIndex) -> Self {
        IndexFile {
            k1: i.k1,
            b: i.b,
            mask: i.mask,
            doc_count: i.doc_count,
            avg_len: i.avg_len,
            df: i.df,
            documents: i.documents,
        }
    }
}

impl ToolIndex {
    pub fn build(pool: &ToolPool, mask: FieldMask, k1: f64, b: f64) -> Result<ToolIndex, RetrievalError> {
        if pool.is_empty() {
            return Err(RetrievalError::EmptyPool);
        }
        let docs = pool.iter().map(|t| ToolDocument::new(&t.name, mask.document_text(t))).collect();
        let mut index = Self::from_documents(docs, k1, b);
        index.mask = mask;
        Ok(index)
    }

    pub fn from_documents(documents: Vec<ToolDocument>, k1: f64, b: f64) -> ToolIndex {
        let mut index = ToolIndex {
            documents: Vec::new(),
            df: BTreeMap::new(),
            doc_count: 0,
            avg_len: 0.0,
            k1,
            b,
            mask: FieldMask::default(),
            postings: HashMap::new(),
        };
        for d in documents {
            index.push(d, true);
        }
        index
    }

    /// Adds a tool and updates N, df and the average length.
    pub fn insert(&mut self, tool: &ToolSpec) {
        self.push(ToolDocument::new(&tool.name, self.mask.document_text(tool)), true);
    }

    /// Adds a tool but leaves N, df and the average length as they were, so
    /// the scores of existing documents do not move.
    pub fn insert_frozen(&mut self, tool: &ToolSpec) {
        self.push(ToolDocument::new(&tool.name, self.mask.document_text(tool)), false);
    }

    fn push(&mut self, doc: ToolDocument, update_stats: bool) {
        if update_stats {
            for t in doc.token_counts.keys() {
                *self.df.entry(t.clone()).or_insert(0) += 1;
            }
            let total = self.avg_len * self.doc_count as f64 + doc.length as f64;
            self.doc_count += 1;
            self.avg_len = total / self.doc_count as f64;
        }
        self.documents.push(doc);
        self.post(self.documents.len() - 1);
    }

    fn post(&mut self, i: usize) {
        for (t, &tf) in &self.documents[i].token_counts {
            self.postings.entry(t.clone()).or_default().push((i, tf));
        }
    }

    pub fn documents(&self) -> &[ToolDocument] {
        &self.documents
    }

    pub fn df(&self, token: &str) -> usize {
        self.df.get(token).copied().unwrap_or(0)
    }

    pub fn avg_len(&self) -> f64 {
        self.avg_len
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    pub fn idf(&self, token: &str) -> f64 {
        let n = self.doc_count as f64;
        let df = self.df(token) as f64;
        (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
    }

    /// Score of every document, in document order.
    pub fn scores(&self, query: &str) -> Vec<f64> {
        let mut scores = vec![0.0; self.documents.len()];
        let avg = if self.avg_len > 0.0 { self.avg_len } else { 1.0 };
        for t in tokenize(query) {
            let Some(postings) = self.postings.get(&t) else { continue };
            let idf = self.idf(&t);
            for &(d, tf) in postings {
                let tf = tf as f64;
                let len = self.documents[d].length as f64;
                scores[d] += idf * tf * (self.k1 + 1.0) / (tf + self.k1 * (1.0 - self.b + self.b * len / avg));
            }
        }
        scores
    }

    /// Top `k` documents by score; ties go to the smaller tool name.
    pub fn search(&self, query: &str, k: usize) -> Vec<(String, f64)> {
        let scored = self
            .documents
            .iter()
            .zip(self.scores(query))
            .map(|(d, s)| (d.tool_name.clone(), s))
            .collect();
        rank(scored, k)
    }

    pub fn save(&self, path: &Path) -> Result<(), Error> {
        let json = serde_json::to_vec(self).expect("serializable index");
        write_atomic(path, &json)
    }

    pub fn load(path: &Path) -> Result<ToolIndex, Error> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::parse(path, e))
    }
}
