//! Corpus statistics for a tool pool and, optionally, its instances.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::generation::{Category, Instance};
use crate::schema::ToolPool;
use crate::Error;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceStats {
    pub total: usize,
    pub single: usize,
    pub multiple: usize,
    pub nested: usize,
    pub avg_calls: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsReport {
    pub tool_count: usize,
    pub avg_required: f64,
    pub avg_parameters: f64,
    /// Number of tools by required-parameter count.
    pub required_histogram: BTreeMap<usize, usize>,
    pub zero_required_fraction: f64,
    pub field_count: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub instances: Option<InstanceStats>,
}

pub fn pool_stats(pool: &ToolPool, instances: Option<&[Instance]>) -> Result<StatsReport, Error> {
    if pool.is_empty() {
        return Err(Error::EmptyPool);
    }
    let n = pool.len() as f64;
    let mut hist = BTreeMap::new();
    let mut fields = std::collections::BTreeSet::new();
    for t in pool {
        *hist.entry(t.required.len()).or_insert(0) += 1;
        fields.insert(t.field_path.split('/').next().unwrap_or_default().to_string());
    }
    let instances = instances.map(|list| {
        let single = list.iter().filter(|i| i.category == Category::Single).count();
        InstanceStats {
            total: list.len(),
            single,
            multiple: list.len() - single,
            nested: list.iter().filter(|i| i.nested).count(),
            avg_calls: if list.is_empty() {
                0.0
            } else {
                list.iter().map(|i| i.calling.len()).sum::<usize>() as f64 / list.len() as f64
            },
        }
    });
    Ok(StatsReport {
        tool_count: pool.len(),
        avg_required: pool.iter().map(|t| t.required.len()).sum::<usize>() as f64 / n,
        avg_parameters: pool.iter().map(|t| t.parameters.len()).sum::<usize>() as f64 / n,
        zero_required_fraction: hist.get(&0).copied().unwrap_or(0) as f64 / n,
        required_histogram: hist,
        field_count: fields.len(),
        instances,
    })
}

impl StatsReport {
    /// Plain-text summary.
    pub fn render(&self) -> String {
        let mut out = format!(
            "tools: {}\nfields: {}\navg parameters: {:.3}\navg required parameters: {:.3}\nzero-required tools: {:.2}%\nrequired-parameter histogram:\n",
            self.tool_count,
            self.field_count,
            self.avg_parameters,
            self.avg_required,
            self.zero_required_fraction * 100.0
        );
        for (k, v) in &self.required_histogram {
            out.push_str(&format!("  {k}: {v}\n"));
        }
        if let Some(i) = &self.instances {
            out.push_str(&format!(
                "instances: {}\n  single-tool: {}\n  multiple-tool: {}\n  nested: {}\n  avg calls per instance: {:.3}\n",
                i.total, i.single, i.multiple, i.nested, i.avg_calls
            ));
        }
        out
    }
}
