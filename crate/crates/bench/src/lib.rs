//! Deterministic synthetic workloads for the criterion benches.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Map, Value};
use toolforge_core::calling::parse_call_sequence;
use toolforge_core::evaluation::Prediction;
use toolforge_core::generation::Provenance;
use toolforge_core::{Instance, ToolPool, ToolSpec};

const WORDS: [&str; 24] = [
    "weather", "flight", "hotel", "stock", "price", "traffic", "taxi", "restaurant", "recipe", "movie", "ticket",
    "patient", "doctor", "invoice", "translate", "image", "music", "news", "calendar", "email", "route", "order",
    "review", "forecast",
];

fn sentence(rng: &mut ChaCha8Rng, len: usize) -> String {
    (0..len).map(|_| *WORDS.choose(rng).unwrap()).collect::<Vec<_>>().join(" ")
}

/// `n` distinct tools with random descriptions and 2 to 4 parameters.
pub fn pool(n: usize, seed: u64) -> ToolPool {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pool = ToolPool::new();
    for i in 0..n {
        let n_params = rng.random_range(2..=4);
        let params: Map<String, Value> = (0..n_params)
            .map(|p| (format!("p{p}"), json!({"type": "str", "description": sentence(&mut rng, 4)})))
            .collect();
        let raw = json!({
            "api_name": format!("tool{i}"),
            "api_description": sentence(&mut rng, 12),
            "field": "Bench/Synthetic",
            "parameters": params,
            "required": ["p0"],
            "responses": {"result": {"type": "str", "description": "output"}},
        });
        pool.insert_tool(ToolSpec::from_value(&raw, &Default::default()).expect("valid synthetic tool"));
    }
    pool
}

/// Random queries of `len` words.
pub fn queries(n: usize, len: usize, seed: u64) -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| sentence(&mut rng, len)).collect()
}

fn calling(rng: &mut ChaCha8Rng, tools: usize) -> Value {
    let n = rng.random_range(1..=3);
    let calls: Vec<Value> = (0..n)
        .map(|k| {
            let mut params = Map::new();
            params.insert("p0".into(), json!(sentence(rng, 2)));
            if rng.random_bool(0.5) {
                params.insert("p1".into(), json!(rng.random_range(0..100).to_string()));
            }
            if k > 0 && rng.random_bool(0.2) {
                params.insert("p2".into(), json!(format!("API_call_{}", k - 1)));
            }
            json!({"api": format!("tool{}", rng.random_range(0..tools)), "parameters": params})
        })
        .collect();
    Value::Array(calls)
}

/// Gold instances plus predictions: a third exact, a third perturbed, a
/// third unparseable.
pub fn corpus(n: usize, seed: u64) -> (Vec<Instance>, Vec<Prediction>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut gold = Vec::with_capacity(n);
    let mut preds = Vec::with_capacity(n);
    for i in 0..n {
        let raw = calling(&mut rng, 200);
        let seq = parse_call_sequence(&raw).expect("well-formed calling");
        let id = format!("b{i}");
        let output = match i % 3 {
            0 => raw.to_string(),
            1 => calling(&mut rng, 200).to_string(),
            _ => "I cannot help with that.".to_string(),
        };
        gold.push(Instance::new(id.clone(), sentence(&mut rng, 10), seq, Provenance::default()));
        preds.push(Prediction { id, raw_output: output });
    }
    (gold, preds)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn workloads_are_deterministic() {
        assert_eq!(pool(50, 9).len(), 50);
        assert_eq!(queries(5, 4, 1), queries(5, 4, 1));
        let (g1, p1) = corpus(30, 4);
        let (g2, p2) = corpus(30, 4);
        assert_eq!(g1, g2);
        assert_eq!(p1, p2);
    }
}
