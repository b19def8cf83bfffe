use std::collections::{HashMap, VecDeque};
use std::path::Path;
use std::sync::Mutex;
use std::time::Duration;

use serde::Deserialize;
use sha2::{Digest, Sha256};

use super::{BackendError, ChatBackend, CompletionRecord};
use crate::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KeyMode {
    /// Prompt text must match a key exactly.
    Exact,
    /// Keys and prompts are compared by the hash of their normalized text.
    Hash,
    /// Responses are returned in order, whatever the prompt.
    Sequence,
}

/// On-disk script: `{"mode": "sequence", "responses": [..]}` or
/// `{"mode": "exact" | "hash", "responses": {prompt: response}}`.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Script {
    pub mode: KeyMode,
    #[serde(default)]
    pub id: Option<String>,
    pub responses: ScriptResponses,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum ScriptResponses {
    Ordered(Vec<String>),
    Keyed(indexmap::IndexMap<String, String>),
}

impl Script {
    pub fn load(path: &Path) -> Result<Script, Error> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::parse(path, e))
    }
}

/// Trims and collapses whitespace runs to one space.
pub fn normalize_prompt(prompt: &str) -> String {
    prompt.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// `sha256:<hex>` of the normalized prompt.
pub fn prompt_hash(prompt: &str) -> String {
    format!("sha256:{}", hex::encode(Sha256::digest(normalize_prompt(prompt).as_bytes())))
}

#[derive(Debug)]
pub struct ScriptedBackend {
    id: String,
    mode: KeyMode,
    keyed: HashMap<String, String>,
    queue: Mutex<VecDeque<String>>,
}

/// Builds a scripted backend. In hash mode keys may be raw prompts or
/// precomputed `sha256:` hashes; prompts that normalize to the same text
/// collapse to one entry and the last one listed wins.
pub fn script_backend(
    responses: impl IntoIterator<Item = (String, String)>,
    key_mode: KeyMode,
) -> Result<ScriptedBackend, BackendError> {
    let pairs: Vec<(String, String)> = responses.into_iter().collect();
    if pairs.is_empty() {
        return Err(BackendError::EmptyScript);
    }
    let mut keyed = HashMap::new();
    let mut queue = VecDeque::new();
    match key_mode {
        KeyMode::Sequence => queue.extend(pairs.into_iter().map(|(_, r)| r)),
        KeyMode::Exact => keyed.extend(pairs),
        KeyMode::Hash => {
            for (k, r) in pairs {
                let key = if k.starts_with("sha256:") { k } else { prompt_hash(&k) };
                keyed.insert(key, r);
            }
        }
    }
    Ok(ScriptedBackend {
        id: "scripted".into(),
        mode: key_mode,
        keyed,
        queue: Mutex::new(queue),
    })
}

impl ScriptedBackend {
    pub fn sequence<I, S>(responses: I) -> Result<Self, BackendError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        script_backend(
            responses.into_iter().enumerate().map(|(i, r)| (i.to_string(), r.into())),
            KeyMode::Sequence,
        )
    }

    pub fn from_script(script: Script) -> Result<Self, BackendError> {
        let mode = script.mode;
        let mut backend = match script.responses {
            ScriptResponses::Ordered(list) => {
                if mode != KeyMode::Sequence {
                    return Err(BackendError::BadResponse(
                        "keyed script modes need an object of responses".into(),
                    ));
                }
                Self::sequence(list)?
            }
            ScriptResponses::Keyed(map) => script_backend(map, mode)?,
        };
        if let Some(id) = script.id {
            backend.id = id;
        }
        Ok(backend)
    }

    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.id = id.into();
        self
    }

    pub fn remaining(&self) -> usize {
        self.queue.lock().expect("script queue poisoned").len()
    }
}

impl ChatBackend for ScriptedBackend {
    fn backend_id(&self) -> String {
        self.id.clone()
    }

    fn complete(&self, prompt: &str) -> Result<CompletionRecord, BackendError> {
        if prompt.trim().is_empty() {
            return Err(BackendError::EmptyPrompt);
        }
        let response = match self.mode {
            KeyMode::Sequence => self
                .queue
                .lock()
                .expect("script queue poisoned")
                .pop_front()
                .ok_or(BackendError::ScriptExhausted)?,
            KeyMode::Exact => self
                .keyed
                .get(prompt)
                .cloned()
                .ok_or_else(|| BackendError::ScriptMiss(prompt_hash(prompt)))?,
            KeyMode::Hash => {
                let key = prompt_hash(prompt);
                self.keyed.get(&key).cloned().ok_or(BackendError::ScriptMiss(key))?
            }
        };
        Ok(CompletionRecord {
            prompt: prompt.to_string(),
            response,
            latency: Duration::ZERO,
            attempt_count: 1,
            backend_id: self.id.clone(),
        })
    }
}
