use std::collections::BTreeMap;

use serde::Serialize;

use super::EvalError;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Metrics {
    pub mrr: f64,
    pub hits1: f64,
    pub hits3: f64,
    pub hits10: f64,
    pub count: usize,
}

pub fn compute_metrics(ranks: &[usize]) -> Result<Metrics, EvalError> {
    if ranks.is_empty() {
        return Err(EvalError::Empty);
    }
    let n = ranks.len() as f64;
    let hits = |k: usize| ranks.iter().filter(|&&r| r <= k).count() as f64 / n;
    Ok(Metrics {
        mrr: ranks.iter().map(|&r| 1.0 / r as f64).sum::<f64>() / n,
        hits1: hits(1),
        hits3: hits(3),
        hits10: hits(10),
        count: ranks.len(),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct RankingReport {
    pub ranks: Vec<usize>,
    pub metrics: Metrics,
    pub per_category: BTreeMap<String, Metrics>,
}

impl RankingReport {
    pub fn new(ranks: Vec<usize>, groups: BTreeMap<String, Vec<usize>>) -> Result<Self, EvalError> {
        let metrics = compute_metrics(&ranks)?;
        let per_category = groups
            .into_iter()
            .map(|(k, v)| compute_metrics(&v).map(|m| (k, m)))
            .collect::<Result<_, _>>()?;
        Ok(Self {
            ranks,
            metrics,
            per_category,
        })
    }

    pub fn to_json(&self, task: &str, dataset: &str, setting: &str, candidate_cap: usize) -> MetricsReport {
        MetricsReport {
            task: task.to_string(),
            dataset: dataset.to_string(),
            setting: setting.to_string(),
            filtered: true,
            mrr: self.metrics.mrr,
            hits1: self.metrics.hits1,
            hits3: self.metrics.hits3,
            hits10: self.metrics.hits10,
            per_category: self.per_category.clone(),
            num_queries: self.ranks.len(),
            candidate_cap,
        }
    }
}

/// Serialised metrics file.
#[derive(Clone, Debug, Serialize)]
pub struct MetricsReport {
    pub task: String,
    pub dataset: String,
    pub setting: String,
    pub filtered: bool,
    pub mrr: f64,
    pub hits1: f64,
    pub hits3: f64,
    pub hits10: f64,
    pub per_category: BTreeMap<String, Metrics>,
    pub num_queries: usize,
    pub candidate_cap: usize,
}
