//! Dense retrieval through an OpenAI-compatible embedding endpoint.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, RwLock};
use std::time::Duration;

use once_cell::sync::OnceCell;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{rank, FieldMask, RetrievalError};
use crate::schema::ToolPool;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbeddingConfig {
    pub endpoint_url: String,
    pub model_name: String,
    pub api_key_env: String,
    pub request_timeout_secs: f64,
    pub max_retries: u32,
    pub retry_base_ms: u64,
    /// Texts per request when warming the cache.
    pub batch_size: usize,
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        EmbeddingConfig {
            endpoint_url: "http://127.0.0.1:8000/v1/embeddings".into(),
            model_name: "text-embedding-ada-002".into(),
            api_key_env: "LLM_API_KEY".into(),
            request_timeout_secs: 60.0,
            max_retries: 3,
            retry_base_ms: 1000,
            batch_size: 64,
        }
    }
}

pub trait EmbeddingClient: Send + Sync {
    /// One vector per input text, in input order.
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, RetrievalError>;
}

pub struct HttpEmbeddingClient {
    config: EmbeddingConfig,
    client: reqwest::blocking::Client,
}

impl HttpEmbeddingClient {
    pub fn new(config: EmbeddingConfig) -> Result<Self, RetrievalError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs_f64(config.request_timeout_secs.max(0.001)))
            .build()
            .map_err(|e| RetrievalError::EmbedBackendDown(e.to_string()))?;
        Ok(HttpEmbeddingClient { config, client })
    }

    fn attempt(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, (bool, RetrievalError)> {
        let body = json!({"input": texts, "model": self.config.model_name});
        let mut request = self.client.post(&self.config.endpoint_url).json(&body);
        if let Ok(key) = std::env::var(&self.config.api_key_env) {
            request = request.bearer_auth(key);
        }
        let down = |m: String| RetrievalError::EmbedBackendDown(m);
        let response = request.send().map_err(|e| (true, down(format!("transport: {e}"))))?;
        let status = response.status();
        let text = response.text().map_err(|e| (true, down(format!("reading body: {e}"))))?;
        if !status.is_success() {
            let retry = status.as_u16() == 429 || status.is_server_error();
            return Err((retry, down(format!("HTTP {}", status.as_u16()))));
        }
        let value: Value = serde_json::from_str(&text).map_err(|e| (false, down(format!("bad JSON: {e}"))))?;
        let data = value
            .get("data")
            .and_then(Value::as_array)
            .ok_or_else(|| (false, down("response has no data array".into())))?;
        let vectors: Vec<Vec<f64>> = data
            .iter()
            .map(|d| {
                d.get("embedding")
                    .and_then(Value::as_array)
                    .and_then(|xs| xs.iter().map(Value::as_f64).collect::<Option<Vec<f64>>>())
            })
            .collect::<Option<_>>()
            .ok_or_else(|| (false, down("entry without a numeric embedding".into())))?;
        if vectors.len() != texts.len() {
            return Err((
                false,
                RetrievalError::DimensionMismatch(format!("{} texts, {} embeddings", texts.len(), vectors.len())),
            ));
        }
        Ok(vectors)
    }
}

impl EmbeddingClient for HttpEmbeddingClient {
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, RetrievalError> {
        let mut attempt = 0;
        loop {
            attempt += 1;
            match self.attempt(texts) {
                Ok(v) => return Ok(v),
                Err((true, e)) if attempt <= self.config.max_retries => {
                    log::warn!("embedding request failed ({e}), retrying");
                    let delay = self.config.retry_base_ms as f64 * 2f64.powi(attempt as i32 - 1);
                    std::thread::sleep(Duration::from_secs_f64(delay / 1000.0));
                }
                Err((_, e)) => return Err(e),
            }
        }
    }
}

type EmbedFn = dyn Fn(&str) -> Option<Vec<f64>> + Send + Sync;

/// Deterministic embeddings for tests: a fixed table or a function.
pub struct ScriptedEmbeddingClient {
    lookup: Box<EmbedFn>,
}

impl ScriptedEmbeddingClient {
    pub fn from_map(map: HashMap<String, Vec<f64>>) -> Self {
        Self::from_fn(move |t| map.get(t).cloned())
    }

    pub fn from_fn(f: impl Fn(&str) -> Option<Vec<f64>> + Send + Sync + 'static) -> Self {
        ScriptedEmbeddingClient { lookup: Box::new(f) }
    }
}

impl EmbeddingClient for ScriptedEmbeddingClient {
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, RetrievalError> {
        texts
            .iter()
            .map(|t| (self.lookup)(t).ok_or_else(|| RetrievalError::EmbedBackendDown(format!("no scripted embedding for {t:?}"))))
            .collect()
    }
}

fn unit(mut v: Vec<f64>) -> Result<Vec<f64>, RetrievalError> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if !(norm > 0.0) || !norm.is_finite() {
        return Err(RetrievalError::DimensionMismatch("zero or non-finite embedding".into()));
    }
    v.iter_mut().for_each(|x| *x /= norm);
    Ok(v)
}

/// Unit vectors keyed by text. Each text is embedded at most once, even
/// when several threads ask for it at the same time.
#[derive(Default)]
pub struct EmbeddingCache {
    cells: RwLock<HashMap<String, Arc<OnceCell<Vec<f64>>>>>,
    warming: Mutex<()>,
}

impl EmbeddingCache {
    fn cell(&self, text: &str) -> Arc<OnceCell<Vec<f64>>> {
        if let Some(c) = self.cells.read().expect("cache poisoned").get(text) {
            return c.clone();
        }
        self.cells
            .write()
            .expect("cache poisoned")
            .entry(text.to_string())
            .or_default()
            .clone()
    }

    pub fn get_or_embed(&self, client: &dyn EmbeddingClient, text: &str) -> Result<Vec<f64>, RetrievalError> {
        self.cell(text)
            .get_or_try_init(|| {
                let mut v = client.embed(&[text.to_string()])?;
                unit(v.pop().ok_or_else(|| RetrievalError::DimensionMismatch("empty response".into()))?)
            })
            .cloned()
    }

    /// Embeds every text not yet cached, `batch` texts per request.
    pub fn warm(&self, client: &dyn EmbeddingClient, texts: &[String], batch: usize) -> Result<(), RetrievalError> {
        let _one_at_a_time = self.warming.lock().expect("cache poisoned");
        let missing: Vec<String> = texts.iter().filter(|t| self.cell(t).get().is_none()).cloned().collect();
        for chunk in missing.chunks(batch.max(1)) {
            for (t, v) in chunk.iter().zip(client.embed(chunk)?) {
                let _ = self.cell(t).set(unit(v)?);
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.cells.read().expect("cache poisoned").values().filter(|c| c.get().is_some()).count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Cosine-similarity retriever over tool documents.
pub struct DenseRetriever {
    client: Box<dyn EmbeddingClient>,
    cache: EmbeddingCache,
    docs: Vec<(String, String)>,
    batch_size: usize,
}

impl DenseRetriever {
    pub fn new(client: Box<dyn EmbeddingClient>, pool: &ToolPool, mask: FieldMask) -> Result<Self, RetrievalError> {
        if pool.is_empty() {
            return Err(RetrievalError::EmptyPool);
        }
        Ok(DenseRetriever {
            client,
            cache: EmbeddingCache::default(),
            docs: pool.iter().map(|t| (t.name.clone(), mask.document_text(t))).collect(),
            batch_size: 64,
        })
    }

    pub fn with_batch_size(mut self, n: usize) -> Self {
        self.batch_size = n.max(1);
        self
    }

    pub fn cache(&self) -> &EmbeddingCache {
        &self.cache
    }

    pub fn search(&self, query: &str, k: usize) -> Result<Vec<(String, f64)>, RetrievalError> {
        let texts: Vec<String> = self.docs.iter().map(|(_, t)| t.clone()).collect();
        self.cache.warm(self.client.as_ref(), &texts, self.batch_size)?;
        let q = self.cache.get_or_embed(self.client.as_ref(), query)?;
        let mut scored = Vec::with_capacity(self.docs.len());
        for (name, text) in &self.docs {
            let d = self.cache.get_or_embed(self.client.as_ref(), text)?;
            if d.len() != q.len() {
                return Err(RetrievalError::DimensionMismatch(format!(
                    "query has {} dimensions, {name} has {}",
                    q.len(),
                    d.len()
                )));
            }
            scored.push((name.clone(), q.iter().zip(&d).map(|(a, b)| a * b).sum()));
        }
        Ok(rank(scored, k))
    }
}

/// Top-`k` tools for `query` by cosine similarity.
pub fn embed_search(retriever: &DenseRetriever, query: &str, k: usize) -> Result<Vec<(String, f64)>, RetrievalError> {
    retriever.search(query, k)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::testing::MockServer;
    use crate::calling::tests::restaurant_pool;
    use std::sync::atomic::{AtomicUsize, Ordering};

    fn basis(i: usize, n: usize) -> Vec<f64> {
        (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect()
    }

    fn name_keyed(pool: &ToolPool) -> HashMap<String, Vec<f64>> {
        pool.iter()
            .enumerate()
            .map(|(i, t)| (FieldMask::NAME_ONLY.document_text(t), basis(i, 3)))
            .collect()
    }

    #[test]
    fn orthonormal_identity() {
        let pool = restaurant_pool();
        let mut map = name_keyed(&pool);
        map.insert("the third one".into(), basis(2, 3));
        let r = DenseRetriever::new(Box::new(ScriptedEmbeddingClient::from_map(map)), &pool, FieldMask::NAME_ONLY).unwrap();
        let hits = embed_search(&r, "the third one", 3).unwrap();
        assert_eq!(hits[0], ("callTaxi".to_string(), 1.0));
        assert_eq!(hits[1].1, 0.0);
        // ties fall back to names
        assert_eq!(hits[1].0, "checkTrafficConditions");
    }

    #[test]
    fn zero_vector_rejected() {
        let pool = restaurant_pool();
        let client = ScriptedEmbeddingClient::from_fn(|t| Some(if t == "q" { vec![0.0, 0.0, 0.0] } else { vec![1.0, 2.0, 3.0] }));
        let r = DenseRetriever::new(Box::new(client), &pool, FieldMask::NAME_ONLY).unwrap();
        assert_eq!(r.search("q", 2).unwrap_err().code(), "DIMENSION_MISMATCH");
    }

    #[test]
    fn mixed_dimensions_rejected() {
        let pool = restaurant_pool();
        let client = ScriptedEmbeddingClient::from_fn(|t| Some(if t == "q" { vec![1.0, 0.0] } else { vec![1.0, 2.0, 3.0] }));
        let r = DenseRetriever::new(Box::new(client), &pool, FieldMask::NAME_ONLY).unwrap();
        assert_eq!(r.search("q", 2).unwrap_err().code(), "DIMENSION_MISMATCH");
    }

    #[test]
    fn cache_embeds_each_text_once() {
        struct Counting(Arc<AtomicUsize>);
        impl EmbeddingClient for Counting {
            fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, RetrievalError> {
                self.0.fetch_add(texts.len(), Ordering::SeqCst);
                Ok(texts.iter().map(|t| vec![t.len() as f64, 1.0]).collect())
            }
        }
        let calls = Arc::new(AtomicUsize::new(0));
        let pool = restaurant_pool();
        let r = DenseRetriever::new(Box::new(Counting(calls.clone())), &pool, FieldMask::default()).unwrap();
        std::thread::scope(|s| {
            for _ in 0..8 {
                s.spawn(|| r.search("same query", 2).unwrap());
            }
        });
        // three tool documents plus the query, each embedded once
        assert_eq!(r.cache().len(), 4);
        assert_eq!(calls.load(Ordering::SeqCst), 4);
        r.search("same query", 2).unwrap();
        assert_eq!(calls.load(Ordering::SeqCst), 4);
    }

    #[test]
    fn single_flight_lookup() {
        struct Slow(Arc<AtomicUsize>);
        impl EmbeddingClient for Slow {
            fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, RetrievalError> {
                self.0.fetch_add(1, Ordering::SeqCst);
                std::thread::sleep(Duration::from_millis(20));
                Ok(texts.iter().map(|_| vec![1.0]).collect())
            }
        }
        let calls = Arc::new(AtomicUsize::new(0));
        let client = Slow(calls.clone());
        let cache = EmbeddingCache::default();
        std::thread::scope(|s| {
            for _ in 0..8 {
                s.spawn(|| cache.get_or_embed(&client, "doc").unwrap());
            }
        });
        assert_eq!(calls.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn http_client_shape_and_errors() {
        let server = MockServer::start(vec![(200, r#"{"data":[{"embedding":[3.0,4.0]},{"embedding":[0.0,1.0]}]}"#.into())]);
        let client = HttpEmbeddingClient::new(EmbeddingConfig { endpoint_url: server.url.clone(), ..Default::default() }).unwrap();
        let v = client.embed(&["a".into(), "b".into()]).unwrap();
        assert_eq!(v, [vec![3.0, 4.0], vec![0.0, 1.0]]);
        let body: Value = serde_json::from_str(&server.requests()[0].body).unwrap();
        assert_eq!(body, json!({"input": ["a", "b"], "model": "text-embedding-ada-002"}));

        let down = MockServer::start(vec![(503, "busy".into())]);
        let client = HttpEmbeddingClient::new(EmbeddingConfig { endpoint_url: down.url.clone(), max_retries: 1, retry_base_ms: 1, ..Default::default() }).unwrap();
        assert_eq!(client.embed(&["a".into()]).unwrap_err().code(), "EMBED_BACKEND_DOWN");
        assert_eq!(down.requests().len(), 2);

        let client = HttpEmbeddingClient::new(EmbeddingConfig { endpoint_url: "http://127.0.0.1:9/none".into(), max_retries: 0, ..Default::default() }).unwrap();
        assert_eq!(client.embed(&["a".into()]).unwrap_err().code(), "EMBED_BACKEND_DOWN");
    }
}
