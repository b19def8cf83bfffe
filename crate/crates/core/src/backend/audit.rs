use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::Path;
use std::sync::Mutex;

use serde_json::json;

use super::{prompt_hash, BackendError, ChatBackend, CompletionRecord};
use crate::Error;

/// Appends one line per completion to an audit file: prompt hash, latency,
/// attempts and outcome. Prompts, responses and credentials are not written.
pub struct AuditedBackend<B> {
    inner: B,
    log: Mutex<File>,
}

impl<B: ChatBackend> AuditedBackend<B> {
    pub fn open(inner: B, path: &Path) -> Result<Self, Error> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        Ok(AuditedBackend {
            inner,
            log: Mutex::new(file),
        })
    }
}

impl<B: ChatBackend> ChatBackend for AuditedBackend<B> {
    fn backend_id(&self) -> String {
        self.inner.backend_id()
    }

    fn complete(&self, prompt: &str) -> Result<CompletionRecord, BackendError> {
        let result = self.inner.complete(prompt);
        let line = match &result {
            Ok(rec) => json!({
                "prompt_hash": prompt_hash(prompt),
                "backend_id": rec.backend_id,
                "attempts": rec.attempt_count,
                "latency_ms": rec.latency.as_secs_f64() * 1000.0,
                "ok": true,
            }),
            Err(e) => json!({
                "prompt_hash": prompt_hash(prompt),
                "backend_id": self.inner.backend_id(),
                "ok": false,
                "error": e.code(),
            }),
        };
        let mut file = self.log.lock().expect("audit log poisoned");
        if let Err(e) = writeln!(file, "{line}") {
            log::warn!("audit log write failed: {e}");
        }
        result
    }
}
