//! Static pair scoring, flow modulation, task heads, the joint loss and
//! training.

mod evaluate;
mod export;
mod predict;
mod train;

pub use evaluate::{evaluate_split, EvalScope, EvalSettings, Split};
pub use export::{flowvis_rows, relation_correlation, FlowvisRow};
pub use predict::{PairOutputs, Predictor};
pub use train::{train, EpochLog, TrainConfig, TrainOutcome};

use rand::Rng;
use thiserror::Error;

use crate::context::{
    string_enum, ContextBatch, ContextConfig, ContextEncoder, ContextError, SelectionMode,
};
use crate::diff::init::{xavier_uniform, zeros_row};
use crate::diff::{DiffError, ParamId, ParameterStore, Scalar, Tape, Tensor, Var};
use crate::eval::EvalError;
use crate::exec::{self, Execution};
use crate::flow::{cfm_term, flow_condition, modulation_vector, FlowConfig, FlowDraws, FlowError, VectorFieldNet};
use crate::kg::{sample_context, EdgeId, KgError, KnowledgeGraph, SamplingConfig};
use crate::rng::{keyed_rng, mix};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Context(#[from] ContextError),
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error(transparent)]
    Kg(#[from] KgError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("non-finite loss {loss} at epoch {epoch}, batch {batch}")]
    NonFinite { epoch: usize, batch: usize, loss: f64 },
    #[error("invalid configuration: {0}")]
    Config(String),
}

impl ModelError {
    pub fn is_numeric(&self) -> bool {
        matches!(self, ModelError::NonFinite { .. })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Task {
    /// Rank relations for a pair `(h, t)`.
    #[default]
    Relation,
    /// Rank entities for `(h, r, ?)` and `(?, r, t)`.
    Entity,
}

string_enum!(Task, Task::Relation => "relation", Task::Entity => "entity");

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Ablation {
    #[default]
    None,
    /// Random `k` neighbours instead of the highest scoring ones.
    NoTopk,
    /// Dot-product selection instead of the energy score.
    NoEnergyScore,
    /// No flow term and no modulation.
    NoFlow,
}

string_enum!(Ablation,
    Ablation::None => "none",
    Ablation::NoTopk => "no-topk",
    Ablation::NoEnergyScore => "no-energy-score",
    Ablation::NoFlow => "no-flow");

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ModelConfig {
    pub task: Task,
    pub context: ContextConfig,
    pub flow: FlowConfig,
    /// When false the field is neither trained nor applied (`v = 1`).
    pub use_flow: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            task: Task::Relation,
            context: ContextConfig::default(),
            flow: FlowConfig::default(),
            use_flow: true,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        self.context.validate()?;
        self.flow.validate()?;
        Ok(())
    }

    pub fn sampling(&self) -> SamplingConfig {
        SamplingConfig {
            hops: self.context.hops,
            neighbor_samples: self.context.neighbor_samples,
        }
    }

    /// Applies an ablation; `NoFlow` also needs the loss weight zeroed by
    /// the caller.
    pub fn apply_ablation(&mut self, ablation: Ablation) {
        match ablation {
            Ablation::None => {}
            Ablation::NoTopk => self.context.selection = SelectionMode::RandomK,
            Ablation::NoEnergyScore => self.context.selection = SelectionMode::DotTopk,
            Ablation::NoFlow => self.use_flow = false,
        }
    }
}

/// One pair to score, with the edges hidden from its context.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PairSpec {
    pub head: usize,
    pub tail: usize,
    /// Conditioning relation (entity task); ignored by the relation task.
    pub rel: usize,
    pub excluded: Vec<EdgeId>,
    /// Neighbourhood sampling seed.
    pub seed: u64,
}

/// Sampled contexts for a list of pairs, merged for one forward pass.
#[derive(Clone, Debug)]
pub struct PreparedBatch {
    pub pairs: Vec<(usize, usize)>,
    pub rels: Vec<usize>,
    pub context: ContextBatch,
    /// Per-pair stream keys for Monte-Carlo inference.
    pub keys: Vec<u64>,
}

impl PreparedBatch {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

pub fn prepare_batch(
    graph: &KnowledgeGraph,
    specs: &[PairSpec],
    sampling: SamplingConfig,
    exec: Execution,
) -> Result<PreparedBatch, ModelError> {
    let subgraphs = exec::map(exec, specs, |s| {
        sample_context(graph, s.head, s.tail, sampling, &s.excluded, s.seed)
    })
    .into_iter()
    .collect::<Result<Vec<_>, _>>()?;
    Ok(PreparedBatch {
        pairs: specs.iter().map(|s| (s.head, s.tail)).collect(),
        rels: specs.iter().map(|s| s.rel).collect(),
        context: ContextBatch::new(&subgraphs),
        keys: specs
            .iter()
            .map(|s| mix(s.seed, &[s.head as u64, s.tail as u64, s.rel as u64]))
            .collect(),
    })
}

/// Training targets for a prepared batch.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Targets {
    /// True relation of every pair.
    Relations(Vec<usize>),
    /// Pairs grouped into consecutive blocks of `per_query` candidates;
    /// `truth[q]` is the slot of the true candidate in block `q`.
    Candidates { per_query: usize, truth: Vec<usize> },
}

/// Intermediate values of one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct ForwardOutput {
    pub m_h: Var,
    pub m_t: Var,
    /// Flow condition `(h*, t*)` derived from the messages.
    pub z_h: Var,
    pub z_t: Var,
    pub static_score: Var,
    /// Field value used for modulation, absent without flow.
    pub field: Option<Var>,
    pub modulated: Var,
    pub logits: Var,
}

/// Terms of the joint objective.
#[derive(Clone, Copy, Debug)]
pub struct LossParts {
    pub total: Var,
    pub pred: Var,
    pub cfm: Option<Var>,
    pub forward: ForwardOutput,
}

/// Parameter handles of the full model.
#[derive(Clone, Debug)]
pub struct Model {
    config: ModelConfig,
    num_relations: usize,
    context: ContextEncoder,
    flow: Option<VectorFieldNet>,
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
}

const INIT_KEY: u64 = 0x494e_4954;

impl Model {
    /// Registers every parameter in `store`: `rel_emb`, `context.*`,
    /// `flow.*` (when the flow is used) and `score.*`.
    pub fn new<T: Scalar>(
        config: ModelConfig,
        num_relations: usize,
        store: &mut ParameterStore<T>,
        seed: u64,
    ) -> Result<Self, ModelError> {
        config.validate()?;
        if num_relations == 0 {
            return Err(ModelError::Config("dataset has no relations".into()));
        }
        let mut rng = keyed_rng(seed, &[INIT_KEY]);
        let d = config.context.dim;
        let context = ContextEncoder::new(config.context, num_relations, store, &mut rng)?;
        let flow = if config.use_flow {
            Some(VectorFieldNet::new(d, store, &mut rng)?)
        } else {
            None
        };
        let (in_dim, out_dim) = match config.task {
            Task::Relation => (2 * d, num_relations),
            Task::Entity => (3 * d, 1),
        };
        let w1 = store.insert("score.w1", xavier_uniform(in_dim, d, &mut rng))?;
        let b1 = store.insert("score.b1", zeros_row(d))?;
        let w2 = store.insert("score.w2", xavier_uniform(d, out_dim, &mut rng))?;
        let b2 = store.insert("score.b2", zeros_row(out_dim))?;
        Ok(Self {
            config,
            num_relations,
            context,
            flow,
            w1,
            b1,
            w2,
            b2,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn num_relations(&self) -> usize {
        self.num_relations
    }

    pub fn context(&self) -> &ContextEncoder {
        &self.context
    }

    pub fn flow(&self) -> Option<&VectorFieldNet> {
        self.flow.as_ref()
    }

    pub fn score_params(&self) -> [ParamId; 4] {
        [self.w1, self.b1, self.w2, self.b2]
    }

    /// Forward pass. `draws` holds the training-time path draws, one row
    /// per pair; `None` selects the configured inference mode.
    pub fn forward<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        store: &ParameterStore<T>,
        batch: &PreparedBatch,
        draws: Option<&FlowDraws>,
        selection_seed: u64,
        exec: Execution,
    ) -> Result<ForwardOutput, ModelError> {
        let states = self
            .context
            .propagate(tape, store, &batch.context, selection_seed, exec)?;
        let (m_h, m_t) = self.context.entity_messages(tape, states, &batch.context)?;
        let z_h = flow_condition(tape, m_h)?;
        let z_t = flow_condition(tape, m_t)?;
        let mut inputs = vec![m_h, m_t];
        if self.config.task == Task::Entity {
            inputs.push(self.context.relation_rows(tape, store, &batch.rels)?);
        }
        let [w1, b1, w2, b2] = self.score_params().map(|id| tape.param(store, id));
        let s = static_score(tape, &inputs, w1, b1)?;
        let (field, modulated) = match &self.flow {
            Some(net) => {
                let v = modulation_vector(
                    tape,
                    store,
                    net,
                    z_h,
                    z_t,
                    &self.config.flow,
                    draws,
                    &batch.keys,
                )?;
                (Some(v), modulate(tape, s, v)?)
            }
            None => (None, s),
        };
        let logits = tape.affine(modulated, w2, b2)?;
        Ok(ForwardOutput {
            m_h,
            m_t,
            z_h,
            z_t,
            static_score: s,
            field,
            modulated,
            logits,
        })
    }

    /// Joint objective `pred + lambda * cfm + l2 * ||params||^2` on one batch.
    ///
    /// For candidate targets the flow term uses only the true pairs.
    #[allow(clippy::too_many_arguments)]
    pub fn loss<T: Scalar, R: Rng + ?Sized>(
        &self,
        tape: &mut Tape<T>,
        store: &ParameterStore<T>,
        batch: &PreparedBatch,
        targets: &Targets,
        lambda: f64,
        l2: f64,
        rng: &mut R,
        selection_seed: u64,
        exec: Execution,
    ) -> Result<LossParts, ModelError> {
        let d = self.config.context.dim;
        let draws = self
            .flow
            .as_ref()
            .map(|_| FlowDraws::sample(batch.len(), d, rng));
        let out = self.forward(tape, store, batch, draws.as_ref(), selection_seed, exec)?;
        let (pred, positives) = match targets {
            Targets::Relations(rels) => (tape.cross_entropy_with_logits(out.logits, rels)?, None),
            Targets::Candidates { per_query, truth } => {
                let ce = candidate_cross_entropy(tape, out.logits, *per_query, truth)?;
                let rows: Vec<usize> = truth
                    .iter()
                    .enumerate()
                    .map(|(q, &slot)| q * per_query + slot)
                    .collect();
                (ce, Some(rows))
            }
        };
        let cfm = match (&self.flow, &draws) {
            (Some(net), Some(draws)) if lambda > 0.0 => Some(match &positives {
                None => cfm_term(tape, store, net, out.z_h, out.z_t, draws, &self.config.flow)?,
                Some(rows) => {
                    let h = tape.gather_rows(out.z_h, rows)?;
                    let t = tape.gather_rows(out.z_t, rows)?;
                    cfm_term(tape, store, net, h, t, &draws.subset(rows), &self.config.flow)?
                }
            }),
            _ => None,
        };
        let penalty = if l2 > 0.0 {
            let vars: Vec<Var> = store.ids().map(|id| tape.param(store, id)).collect();
            Some(tape.l2_penalty(&vars))
        } else {
            None
        };
        let total = total_loss(tape, pred, cfm, lambda, penalty, l2)?;
        Ok(LossParts {
            total,
            pred,
            cfm,
            forward: out,
        })
    }
}

/// `sigmoid(concat(inputs) W1 + b1)`.
pub fn static_score<T: Scalar>(
    tape: &mut Tape<T>,
    inputs: &[Var],
    w1: Var,
    b1: Var,
) -> Result<Var, ModelError> {
    let x = if inputs.len() == 1 {
        inputs[0]
    } else {
        tape.concat_cols(inputs)?
    };
    let z = tape.affine(x, w1, b1)?;
    Ok(tape.sigmoid(z))
}

/// Elementwise product of the static score and the field.
pub fn modulate<T: Scalar>(tape: &mut Tape<T>, s: Var, v: Var) -> Result<Var, ModelError> {
    Ok(tape.mul(s, v)?)
}

/// Cross-entropy over consecutive blocks of `per_query` candidate logits.
pub fn candidate_cross_entropy<T: Scalar>(
    tape: &mut Tape<T>,
    logits: Var,
    per_query: usize,
    truth: &[usize],
) -> Result<Var, ModelError> {
    let n = tape.value(logits).len();
    if per_query == 0 || n != per_query * truth.len() {
        return Err(ModelError::Config(format!(
            "{n} candidate logits do not split into {} blocks of {per_query}",
            truth.len()
        )));
    }
    let grid = tape.reshape(logits, &[truth.len(), per_query])?;
    Ok(tape.cross_entropy_with_logits(grid, truth)?)
}

/// `pred + lambda * cfm + l2_weight * penalty`, skipping absent terms.
pub fn total_loss<T: Scalar>(
    tape: &mut Tape<T>,
    pred: Var,
    cfm: Option<Var>,
    lambda: f64,
    penalty: Option<Var>,
    l2_weight: f64,
) -> Result<Var, ModelError> {
    let mut total = pred;
    if let Some(c) = cfm {
        let c = tape.scale(c, lambda);
        total = tape.add(total, c)?;
    }
    if let Some(p) = penalty {
        let p = tape.scale(p, l2_weight);
        total = tape.add(total, p)?;
    }
    Ok(total)
}

/// Softmax probabilities of a logit matrix, row by row.
pub fn probabilities<T: Scalar>(logits: &Tensor<T>) -> Tensor<T> {
    let mut out = logits.clone();
    for r in 0..out.rows() {
        crate::diff::softmax_in_place(out.row_slice_mut(r));
    }
    out
}
