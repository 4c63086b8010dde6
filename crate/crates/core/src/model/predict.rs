use crate::diff::{ParameterStore, Scalar, Tape, Tensor};
use crate::eval::{EntityScorer, EvalError, QuerySide, RelationScorer};
use crate::exec::Execution;
use crate::kg::{KnowledgeGraph, Triple};
use crate::rng::mix;

use super::{prepare_batch, Model, ModelError, PairSpec};

const EVAL_KEY: u64 = 0x4556_414c;

/// Largest number of pairs pushed through one forward pass.
const MAX_PAIRS_PER_PASS: usize = 256;

/// Read-only scoring with a fixed parameter snapshot.
///
/// Contexts are drawn from `graph` with seeds derived from `seed` and the
/// query, so scores do not depend on batching or thread count.
#[derive(Clone, Copy)]
pub struct Predictor<'a, T: Scalar> {
    pub model: &'a Model,
    pub store: &'a ParameterStore<T>,
    pub graph: &'a KnowledgeGraph,
    pub seed: u64,
    /// Used for sampling inside one scoring call.
    pub exec: Execution,
}

/// Tensors produced when scoring a list of pairs.
#[derive(Clone, Debug)]
pub struct PairOutputs<T> {
    pub m_h: Tensor<T>,
    pub m_t: Tensor<T>,
    pub static_score: Tensor<T>,
    pub modulated: Tensor<T>,
    pub logits: Tensor<T>,
}

impl<'a, T: Scalar> Predictor<'a, T> {
    pub fn new(
        model: &'a Model,
        store: &'a ParameterStore<T>,
        graph: &'a KnowledgeGraph,
        seed: u64,
    ) -> Self {
        Self {
            model,
            store,
            graph,
            seed,
            exec: Execution::Sequential,
        }
    }

    fn query_seed(&self, h: usize, t: usize) -> u64 {
        mix(self.seed, &[EVAL_KEY, h as u64, t as u64])
    }

    /// Pair specs for relation queries; each hides its own triple.
    pub fn relation_specs(&self, queries: &[Triple]) -> Vec<PairSpec> {
        queries
            .iter()
            .map(|q| PairSpec {
                head: q.head,
                tail: q.tail,
                rel: q.rel,
                excluded: self.graph.edges_matching(*q),
                seed: self.query_seed(q.head, q.tail),
            })
            .collect()
    }

    /// Pair specs for one entity query over `candidates`. Every candidate
    /// shares the query's context seed and hides the query triple.
    pub fn entity_specs(&self, q: Triple, side: QuerySide, candidates: &[usize]) -> Vec<PairSpec> {
        let excluded = self.graph.edges_matching(q);
        let side_key = matches!(side, QuerySide::Head) as u64;
        let seed = mix(self.seed, &[EVAL_KEY, q.head as u64, q.rel as u64, q.tail as u64, side_key]);
        candidates
            .iter()
            .map(|&c| {
                let (head, tail) = match side {
                    QuerySide::Tail => (q.head, c),
                    QuerySide::Head => (c, q.tail),
                };
                PairSpec {
                    head,
                    tail,
                    rel: q.rel,
                    excluded: excluded.clone(),
                    seed,
                }
            })
            .collect()
    }

    /// Scores `specs` in passes of bounded size.
    pub fn run(&self, specs: &[PairSpec]) -> Result<PairOutputs<T>, ModelError> {
        let mut parts: Vec<PairOutputs<T>> = Vec::new();
        for chunk in specs.chunks(MAX_PAIRS_PER_PASS) {
            let batch = prepare_batch(self.graph, chunk, self.model.config().sampling(), self.exec)?;
            let mut tape = Tape::new();
            let out = self
                .model
                .forward(&mut tape, self.store, &batch, None, self.seed, self.exec)?;
            parts.push(PairOutputs {
                m_h: tape.value(out.m_h).clone(),
                m_t: tape.value(out.m_t).clone(),
                static_score: tape.value(out.static_score).clone(),
                modulated: tape.value(out.modulated).clone(),
                logits: tape.value(out.logits).clone(),
            });
        }
        Ok(concat_outputs(parts))
    }

    pub fn logits(&self, specs: &[PairSpec]) -> Result<Tensor<T>, ModelError> {
        Ok(self.run(specs)?.logits)
    }
}

fn concat_rows<T: Scalar>(parts: Vec<&Tensor<T>>) -> Tensor<T> {
    let cols = parts.first().map_or(0, |t| t.cols());
    let rows: usize = parts.iter().map(|t| t.rows()).sum();
    let data = parts.iter().flat_map(|t| t.data().iter().copied()).collect();
    Tensor::new(vec![rows, cols], data).expect("row concatenation")
}

fn concat_outputs<T: Scalar>(parts: Vec<PairOutputs<T>>) -> PairOutputs<T> {
    if parts.len() == 1 {
        return parts.into_iter().next().expect("one part");
    }
    PairOutputs {
        m_h: concat_rows(parts.iter().map(|p| &p.m_h).collect()),
        m_t: concat_rows(parts.iter().map(|p| &p.m_t).collect()),
        static_score: concat_rows(parts.iter().map(|p| &p.static_score).collect()),
        modulated: concat_rows(parts.iter().map(|p| &p.modulated).collect()),
        logits: concat_rows(parts.iter().map(|p| &p.logits).collect()),
    }
}

fn scorer_err(e: ModelError) -> EvalError {
    EvalError::Scorer(e.to_string())
}

impl<T: Scalar> RelationScorer for Predictor<'_, T> {
    fn score_relations(&self, queries: &[Triple]) -> Result<Vec<Vec<f64>>, EvalError> {
        let logits = self.logits(&self.relation_specs(queries)).map_err(scorer_err)?;
        Ok((0..logits.rows())
            .map(|r| logits.row_slice(r).iter().map(|x| x.as_f64()).collect())
            .collect())
    }
}

impl<T: Scalar> EntityScorer for Predictor<'_, T> {
    fn score_entities(
        &self,
        query: Triple,
        side: QuerySide,
        candidates: &[usize],
    ) -> Result<Vec<f64>, EvalError> {
        let specs = self.entity_specs(query, side, candidates);
        let logits = self.logits(&specs).map_err(scorer_err)?;
        Ok(logits.data().iter().map(|x| x.as_f64()).collect())
    }
}
