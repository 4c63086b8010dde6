use std::collections::HashSet;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::Serialize;

use crate::diff::{adam_step, AdamConfig, ParameterStore, Tape};
use crate::eval::{evaluate_entities, evaluate_relations, EvalOptions, FilterIndex, QuerySide};
use crate::exec::Execution;
use crate::kg::{Dataset, KnowledgeGraph, Triple};
use crate::rng::{keyed_rng, mix};

use super::{prepare_batch, Model, ModelConfig, ModelError, PairSpec, Predictor, Targets, Task};

const SHUFFLE_KEY: u64 = 1;
const SAMPLE_KEY: u64 = 2;
const SELECT_KEY: u64 = 3;
const FLOW_KEY: u64 = 4;
const NEG_KEY: u64 = 5;
const VALID_KEY: u64 = 6;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainConfig {
    pub model: ModelConfig,
    /// Weight of the flow-matching term.
    pub lambda: f64,
    pub epochs: usize,
    /// Triples per optimisation step.
    pub batch_size: usize,
    pub lr: f64,
    /// Weight of the squared-norm penalty over all parameters.
    pub l2: f64,
    /// Corrupted candidates per entity query during training.
    pub negatives: usize,
    pub seed: u64,
    /// Validate on at most this many (seeded) validation triples per epoch.
    pub valid_queries: Option<usize>,
    pub candidate_cap: usize,
    pub exec: Execution,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            lambda: 1.2,
            epochs: 20,
            batch_size: 128,
            lr: 5e-3,
            l2: 1e-7,
            negatives: 64,
            seed: 0,
            valid_queries: None,
            candidate_cap: 10_000,
            exec: Execution::Parallel,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        self.model.validate()?;
        let bad = |m: &str| Err(ModelError::Config(m.to_string()));
        if !(self.lambda >= 0.0) {
            return bad("lambda must be non-negative");
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return bad("epochs and batch_size must be positive");
        }
        if !(self.lr > 0.0) || !(self.l2 >= 0.0) {
            return bad("lr must be positive and l2 non-negative");
        }
        if self.model.task == Task::Entity && self.negatives == 0 {
            return bad("entity training needs at least one negative");
        }
        if self.candidate_cap == 0 {
            return bad("candidate_cap must be positive");
        }
        Ok(())
    }
}

/// One line of the epoch log.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub valid_mrr: f64,
    pub seconds: f64,
}

pub struct TrainOutcome {
    pub model: Model,
    /// Parameters of the epoch with the best validation MRR.
    pub store: ParameterStore<f32>,
    pub log: Vec<EpochLog>,
    pub best_epoch: usize,
    pub best_valid_mrr: f64,
    /// Graph built from the training split; contexts are drawn from it.
    pub graph: KnowledgeGraph,
}

/// Trains on `dataset.train`, selecting parameters by filtered validation MRR.
pub fn train(
    dataset: &Dataset,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainOutcome, ModelError> {
    config.validate()?;
    if dataset.train.is_empty() || dataset.valid.is_empty() {
        return Err(ModelError::Config("train and valid splits must be non-empty".into()));
    }
    let graph = KnowledgeGraph::build(&dataset.train, dataset.num_entities(), dataset.num_relations())?;
    let mut store = ParameterStore::<f32>::new();
    let model = Model::new(config.model, dataset.num_relations(), &mut store, config.seed)?;
    let filter = FilterIndex::new([&dataset.train[..], &dataset.valid[..], &dataset.test[..]]);
    let train_known = FilterIndex::new([&dataset.train[..]]);
    let valid = validation_subset(&dataset.valid, config.valid_queries, config.seed);
    let adam = AdamConfig {
        lr: config.lr,
        ..AdamConfig::default()
    };

    let mut log = Vec::with_capacity(config.epochs);
    let mut best: Option<(usize, f64, ParameterStore<f32>)> = None;
    let mut order: Vec<usize> = (0..dataset.train.len()).collect();
    for epoch in 0..config.epochs {
        let started = Instant::now();
        order.sort_unstable();
        order.shuffle(&mut keyed_rng(config.seed, &[SHUFFLE_KEY, epoch as u64]));
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            let (specs, targets) = match config.model.task {
                Task::Relation => relation_batch(&graph, &dataset.train, chunk, config.seed, epoch),
                Task::Entity => entity_batch(
                    &graph,
                    &dataset.train,
                    &train_known,
                    chunk,
                    config,
                    epoch,
                ),
            };
            if specs.is_empty() {
                continue;
            }
            let batch = prepare_batch(&graph, &specs, config.model.sampling(), config.exec)?;
            let mut tape = Tape::new();
            let mut flow_rng = keyed_rng(config.seed, &[FLOW_KEY, epoch as u64, b as u64]);
            let parts = model.loss(
                &mut tape,
                &store,
                &batch,
                &targets,
                config.lambda,
                config.l2,
                &mut flow_rng,
                mix(config.seed, &[SELECT_KEY, epoch as u64, b as u64]),
                config.exec,
            )?;
            let loss = f64::from(tape.value(parts.total).data()[0]);
            if !loss.is_finite() {
                return Err(ModelError::NonFinite {
                    epoch,
                    batch: b,
                    loss,
                });
            }
            tape.backward_into(parts.total, &mut store)?;
            adam_step(&mut store, &adam);
            loss_sum += loss;
            batches += 1;
        }
        let valid_mrr = {
            let predictor = Predictor::new(&model, &store, &graph, config.seed);
            validation_mrr(&predictor, &valid, &filter, dataset.num_entities(), config)?
        };
        let entry = EpochLog {
            epoch,
            train_loss: loss_sum / batches.max(1) as f64,
            valid_mrr,
            seconds: started.elapsed().as_secs_f64(),
        };
        on_epoch(&entry);
        log.push(entry);
        if best.as_ref().is_none_or(|(_, m, _)| valid_mrr > *m) {
            best = Some((epoch, valid_mrr, store.clone()));
        }
    }
    let (best_epoch, best_valid_mrr, best_store) = best.expect("at least one epoch");
    Ok(TrainOutcome {
        model,
        store: best_store,
        log,
        best_epoch,
        best_valid_mrr,
        graph,
    })
}

fn validation_subset(valid: &[Triple], cap: Option<usize>, seed: u64) -> Vec<Triple> {
    match cap {
        Some(n) if n < valid.len() => {
            let mut v = valid.to_vec();
            v.shuffle(&mut keyed_rng(seed, &[VALID_KEY]));
            v.truncate(n.max(1));
            v
        }
        _ => valid.to_vec(),
    }
}

fn validation_mrr(
    predictor: &Predictor<'_, f32>,
    valid: &[Triple],
    filter: &FilterIndex,
    num_entities: usize,
    config: &TrainConfig,
) -> Result<f64, ModelError> {
    let opts = EvalOptions {
        exec: config.exec,
        ..EvalOptions::default()
    };
    let report = match config.model.task {
        Task::Relation => evaluate_relations(predictor, valid, filter, opts)?,
        Task::Entity => evaluate_entities(
            predictor,
            valid,
            filter,
            num_entities,
            config.candidate_cap,
            config.seed,
            opts,
        )?,
    };
    Ok(report.metrics.mrr)
}

fn relation_batch(
    graph: &KnowledgeGraph,
    train: &[Triple],
    chunk: &[usize],
    seed: u64,
    epoch: usize,
) -> (Vec<PairSpec>, Targets) {
    let specs = chunk
        .iter()
        .map(|&i| {
            let t = train[i];
            PairSpec {
                head: t.head,
                tail: t.tail,
                rel: t.rel,
                excluded: graph.edges_matching(t),
                seed: mix(seed, &[SAMPLE_KEY, epoch as u64, i as u64]),
            }
        })
        .collect();
    let rels = chunk.iter().map(|&i| train[i].rel).collect();
    (specs, Targets::Relations(rels))
}

/// Draws `count` entities uniformly with replacement from those not in
/// `answers`; `None` when every entity is an answer.
fn corrupt<R: Rng + ?Sized>(
    rng: &mut R,
    num_entities: usize,
    answers: Option<&HashSet<usize>>,
    count: usize,
) -> Option<Vec<usize>> {
    let taken = answers.map_or(0, HashSet::len);
    if taken >= num_entities {
        return None;
    }
    let is_answer = |e: usize| answers.is_some_and(|a| a.contains(&e));
    if taken * 2 > num_entities {
        let pool: Vec<usize> = (0..num_entities).filter(|&e| !is_answer(e)).collect();
        return Some((0..count).map(|_| pool[rng.random_range(0..pool.len())]).collect());
    }
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let e = rng.random_range(0..num_entities);
        if !is_answer(e) {
            out.push(e);
        }
    }
    Some(out)
}

/// Tail and head queries for every triple in `chunk`, each with the truth
/// in slot 0 followed by corrupted candidates that are not known training
/// answers.
fn entity_batch(
    graph: &KnowledgeGraph,
    train: &[Triple],
    known: &FilterIndex,
    chunk: &[usize],
    config: &TrainConfig,
    epoch: usize,
) -> (Vec<PairSpec>, Targets) {
    let per_query = 1 + config.negatives;
    let mut specs = Vec::with_capacity(chunk.len() * 2 * per_query);
    let mut truth = Vec::with_capacity(chunk.len() * 2);
    for &i in chunk {
        let t = train[i];
        let excluded = graph.edges_matching(t);
        for (side_key, side) in [(0u64, QuerySide::Tail), (1, QuerySide::Head)] {
            let mut rng = keyed_rng(config.seed, &[NEG_KEY, epoch as u64, i as u64, side_key]);
            let Some(negs) = corrupt(&mut rng, graph.num_entities(), known.answers(t, side), config.negatives)
            else {
                continue;
            };
            let seed = mix(config.seed, &[SAMPLE_KEY, epoch as u64, i as u64, side_key]);
            let hidden = match side {
                QuerySide::Tail => t.tail,
                QuerySide::Head => t.head,
            };
            for c in std::iter::once(hidden).chain(negs) {
                let (head, tail) = match side {
                    QuerySide::Tail => (t.head, c),
                    QuerySide::Head => (c, t.tail),
                };
                specs.push(PairSpec {
                    head,
                    tail,
                    rel: t.rel,
                    excluded: excluded.clone(),
                    seed,
                });
            }
            truth.push(0);
        }
    }
    (specs, Targets::Candidates { per_query, truth })
}
