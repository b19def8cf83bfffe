//! Fills in example values for required parameters whose descriptions lack
//! an `(e.g., ...)` clause. Parameters are batched by lowercased name and
//! each batch gets one model call; phone and e-mail parameters are filled by
//! seeded rule generators instead.

use indexmap::IndexMap;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

use crate::backend::ChatBackend;
use crate::generation::extract::{parse_list_literal, to_spaced_json};
use crate::generation::manifest::{BatchCounters, StageManifest};
use crate::generation::prompts::PromptSet;
use crate::generation::GenerationError;
use crate::schema::ToolPool;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BackfillOptions {
    pub max_passes: usize,
    pub rng_seed: u64,
    /// Values generated per rule-filled parameter.
    pub rule_values: usize,
}

impl Default for BackfillOptions {
    fn default() -> Self {
        BackfillOptions {
            max_passes: 2,
            rng_seed: 0,
            rule_values: 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SensitiveKind {
    Phone,
    Email,
}

/// Classifies a parameter name by keyword. `phone` and `email` match
/// anywhere; `tel`, `mobile` and `mail` only as whole words, so that
/// `hotel_name` is not a phone number.
pub fn sensitive_kind(param: &str) -> Option<SensitiveKind> {
    let lower = param.to_lowercase();
    let words = name_words(param);
    let has = |w: &str| words.iter().any(|x| x == w);
    if lower.contains("email") || has("mail") {
        Some(SensitiveKind::Email)
    } else if lower.contains("phone") || has("tel") || has("mobile") {
        Some(SensitiveKind::Phone)
    } else {
        None
    }
}

/// Splits snake, kebab and camel case into lowercase words.
fn name_words(name: &str) -> Vec<String> {
    let mut words = Vec::new();
    let mut cur = String::new();
    let mut prev_lower = false;
    for c in name.chars() {
        if !c.is_alphanumeric() {
            if !cur.is_empty() {
                words.push(std::mem::take(&mut cur));
            }
            prev_lower = false;
            continue;
        }
        if c.is_uppercase() && prev_lower && !cur.is_empty() {
            words.push(std::mem::take(&mut cur));
        }
        prev_lower = c.is_lowercase() || c.is_ascii_digit();
        cur.extend(c.to_lowercase());
    }
    if !cur.is_empty() {
        words.push(cur);
    }
    words
}

/// `[a-z]{5,8}[0-9]{0,3}@example.(com|org|net)`
pub fn rule_email(rng: &mut impl Rng) -> String {
    let letters: String = (0..rng.random_range(5..=8))
        .map(|_| (b'a' + rng.random_range(0..26u8)) as char)
        .collect();
    let digits: String = (0..rng.random_range(0..=3))
        .map(|_| (b'0' + rng.random_range(0..10u8)) as char)
        .collect();
    let tld = ["com", "org", "net"][rng.random_range(0..3)];
    format!("{letters}{digits}@example.{tld}")
}

/// `+1-ddd-ddd-dddd`
pub fn rule_phone(rng: &mut impl Rng) -> String {
    let mut d = |n: usize| -> String { (0..n).map(|_| (b'0' + rng.random_range(0..10u8)) as char).collect() };
    let (a, b, c) = (d(3), d(3), d(4));
    format!("+1-{a}-{b}-{c}")
}

/// Keeps values that survive a round trip through the example clause.
fn clean_values(raw: Vec<String>) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for v in raw {
        let v = v.trim().to_string();
        let unusable = v.is_empty() || v.contains([',', '(', ')']) || v.contains("...");
        if !unusable && !out.contains(&v) {
            out.push(v);
        }
    }
    out
}

/// Runs up to `max_passes` passes. The pool is updated in place, so on
/// `BACKFILL_INCOMPLETE` whatever was filled is kept.
pub fn backfill_examples(
    backend: &dyn ChatBackend,
    prompts: &PromptSet,
    pool: &mut ToolPool,
    opts: &BackfillOptions,
    manifest: &mut StageManifest,
) -> Result<(), GenerationError> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.rng_seed);
    for pass in 1..=opts.max_passes {
        let missing = missing_examples(pool);
        if missing.is_empty() {
            return Ok(());
        }
        let mut batches: IndexMap<String, Vec<(usize, String)>> = IndexMap::new();
        for (t, p) in missing {
            batches.entry(p.to_lowercase()).or_default().push((t, p));
        }
        for (category, members) in batches {
            let label = format!("backfill{pass}:{category}");
            let mut batch = BatchCounters::new(&label);
            batch.attempted = members.len();
            if let Some(kind) = sensitive_kind(&members[0].1) {
                batch.parsed = members.len();
                for (t, p) in &members {
                    let values = (0..opts.rule_values.max(1))
                        .map(|_| match kind {
                            SensitiveKind::Phone => rule_phone(&mut rng),
                            SensitiveKind::Email => rule_email(&mut rng),
                        })
                        .collect();
                    set_examples(pool, *t, p, values);
                    batch.accepted += 1;
                }
            } else {
                let mut descriptions: Vec<Value> = Vec::new();
                for (t, p) in &members {
                    let d = Value::String(pool.tools()[*t].parameters[p].description.clone());
                    if !descriptions.contains(&d) {
                        descriptions.push(d);
                    }
                }
                let prompt = prompts.backfill.fill(&[&members[0].1, &to_spaced_json(&Value::Array(descriptions))])?;
                let mut values = Vec::new();
                for _ in 0..2 {
                    batch.calls += 1;
                    let reply = backend.complete(&prompt)?;
                    values = clean_values(parse_list_literal(&reply.response));
                    if !values.is_empty() {
                        break;
                    }
                }
                if values.is_empty() {
                    manifest.reject(&label, &category, vec!["PARSE_FAILURE".into()], "no usable values in reply");
                } else {
                    batch.parsed = members.len();
                    for (t, p) in &members {
                        set_examples(pool, *t, p, values.clone());
                        batch.accepted += 1;
                    }
                }
            }
            manifest.push_batch(batch);
        }
    }
    let still: Vec<String> = missing_examples(pool)
        .into_iter()
        .map(|(t, p)| format!("{}.{p}", pool.tools()[t].name))
        .collect();
    if still.is_empty() {
        Ok(())
    } else {
        Err(GenerationError::BackfillIncomplete(still))
    }
}

/// (tool index, parameter name) of required parameters with no examples.
pub fn missing_examples(pool: &ToolPool) -> Vec<(usize, String)> {
    let mut out = Vec::new();
    for (t, tool) in pool.iter().enumerate() {
        for p in tool.required_params() {
            if p.example_values.is_empty() {
                out.push((t, p.name.clone()));
            }
        }
    }
    out
}

fn set_examples(pool: &mut ToolPool, tool: usize, param: &str, values: Vec<String>) {
    if let Some(p) = pool.tools_mut()[tool].parameters.get_mut(param) {
        p.set_examples(values);
    }
}
