use crate::diff::ParameterStore;
use crate::eval::{
    categorize_relations, evaluate_entities, evaluate_relations, EvalOptions, FilterIndex, RankingReport,
    DEFAULT_CATEGORY_THRESHOLD,
};
use crate::exec::Execution;
use crate::kg::{Dataset, KnowledgeGraph, Mode, Triple};

use super::{Model, ModelError, Predictor, Task};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Valid,
    Test,
}

crate::context::string_enum!(Split, Split::Valid => "valid", Split::Test => "test");

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalSettings {
    pub split: Split,
    pub candidate_cap: usize,
    pub seed: u64,
    pub category_threshold: f64,
    pub exec: Execution,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self {
            split: Split::Test,
            candidate_cap: 10_000,
            seed: 0,
            category_threshold: DEFAULT_CATEGORY_THRESHOLD,
            exec: Execution::Parallel,
        }
    }
}

/// Graph, queries and filter for one evaluation run.
pub struct EvalScope {
    pub graph: KnowledgeGraph,
    pub queries: Vec<Triple>,
    pub filter: FilterIndex,
    pub num_entities: usize,
}

impl EvalScope {
    /// Transductive runs rank `split` against the training graph. Inductive
    /// test runs rank the unseen-entity queries against that graph's facts.
    pub fn new(dataset: &Dataset, split: Split) -> Result<Self, ModelError> {
        let num_rel = dataset.num_relations();
        match (&dataset.inductive, dataset.mode, split) {
            (Some(ind), Mode::Inductive, Split::Test) => Ok(Self {
                graph: KnowledgeGraph::build(&ind.facts, ind.entities.len(), num_rel)?,
                queries: ind.queries.clone(),
                filter: FilterIndex::new([&ind.facts[..], &ind.queries[..]]),
                num_entities: ind.entities.len(),
            }),
            _ => {
                let queries = match split {
                    Split::Valid => dataset.valid.clone(),
                    Split::Test => dataset.test.clone(),
                };
                Ok(Self {
                    graph: KnowledgeGraph::build(&dataset.train, dataset.num_entities(), num_rel)?,
                    queries,
                    filter: FilterIndex::new([&dataset.train[..], &dataset.valid[..], &dataset.test[..]]),
                    num_entities: dataset.num_entities(),
                })
            }
        }
    }
}

/// Filtered ranking of one split with a per-category breakdown.
pub fn evaluate_split(
    model: &Model,
    store: &ParameterStore<f32>,
    dataset: &Dataset,
    settings: &EvalSettings,
) -> Result<RankingReport, ModelError> {
    let scope = EvalScope::new(dataset, settings.split)?;
    let categories = categorize_relations(&dataset.train, dataset.num_relations(), settings.category_threshold);
    let predictor = Predictor::new(model, store, &scope.graph, settings.seed);
    let opts = EvalOptions {
        exec: settings.exec,
        categories: Some(&categories),
        ..EvalOptions::default()
    };
    let report = match model.config().task {
        Task::Relation => evaluate_relations(&predictor, &scope.queries, &scope.filter, opts)?,
        Task::Entity => evaluate_entities(
            &predictor,
            &scope.queries,
            &scope.filter,
            scope.num_entities,
            settings.candidate_cap,
            settings.seed,
            opts,
        )?,
    };
    Ok(report)
}
