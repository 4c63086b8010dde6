use crate::diff::ParameterStore;
use crate::kg::{sample_context, KnowledgeGraph, Triple};

use super::{Model, ModelError, PairSpec, Predictor, Task};

/// Mean co-activation of context relations and predicted relations.
///
/// Entry `[a][b]` is the fraction of queries whose sampled context contains
/// relation `a` and whose prediction is `b`. The prediction is the argmax
/// relation for the relation task and the query relation for the entity
/// task, whose head scores pairs rather than relations.
pub fn relation_correlation(
    model: &Model,
    store: &ParameterStore<f32>,
    graph: &KnowledgeGraph,
    queries: &[Triple],
    seed: u64,
) -> Result<Vec<Vec<f64>>, ModelError> {
    let r = model.num_relations();
    let mut out = vec![vec![0.0; r]; r];
    if queries.is_empty() {
        return Ok(out);
    }
    let predictor = Predictor::new(model, store, graph, seed);
    let specs = predictor.relation_specs(queries);
    let predicted: Vec<usize> = match model.config().task {
        Task::Relation => {
            let logits = predictor.logits(&specs)?;
            (0..logits.rows()).map(|i| argmax(logits.row_slice(i))).collect()
        }
        Task::Entity => queries.iter().map(|q| q.rel).collect(),
    };
    let sampling = model.config().sampling();
    for (spec, &b) in specs.iter().zip(&predicted) {
        let ctx = sample_context(graph, spec.head, spec.tail, sampling, &spec.excluded, spec.seed)?;
        let mut present = vec![false; r];
        for e in &ctx.edges {
            present[e.rel] = true;
        }
        for (a, _) in present.iter().enumerate().filter(|(_, p)| **p) {
            out[a][b] += 1.0;
        }
    }
    let n = queries.len() as f64;
    out.iter_mut().flatten().for_each(|x| *x /= n);
    Ok(out)
}

fn argmax(row: &[f32]) -> usize {
    let mut best = 0;
    for (i, &x) in row.iter().enumerate() {
        if x > row[best] {
            best = i;
        }
    }
    best
}

/// Per-query vectors for external projection of the flow's effect.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowvisRow {
    pub query: Triple,
    pub static_score: Vec<f32>,
    pub modulated: Vec<f32>,
    pub m_h: Vec<f32>,
    pub m_t: Vec<f32>,
}

/// Static and modulated hidden scores plus messages for each query pair.
pub fn flowvis_rows(
    model: &Model,
    store: &ParameterStore<f32>,
    graph: &KnowledgeGraph,
    queries: &[Triple],
    seed: u64,
) -> Result<Vec<FlowvisRow>, ModelError> {
    if queries.is_empty() {
        return Ok(Vec::new());
    }
    let predictor = Predictor::new(model, store, graph, seed);
    let specs: Vec<PairSpec> = predictor.relation_specs(queries);
    let out = predictor.run(&specs)?;
    Ok(queries
        .iter()
        .enumerate()
        .map(|(i, &query)| FlowvisRow {
            query,
            static_score: out.static_score.row_slice(i).to_vec(),
            modulated: out.modulated.row_slice(i).to_vec(),
            m_h: out.m_h.row_slice(i).to_vec(),
            m_t: out.m_t.row_slice(i).to_vec(),
        })
        .collect())
}
