//! Edge-centric message passing over a sampled context subgraph.
//!
//! Edge states start from relation embeddings. Each layer scores every
//! neighbour of an edge, keeps the top `k`, averages them and merges the
//! average into the edge's own state through a head-wise gated update.
//! Head and tail messages are means of the final states of the edges
//! touching each query endpoint.

mod batch;
mod select;

pub use batch::ContextBatch;
pub use select::{energy_score, energy_score_tape, log_energy, mean_aggregate, select_topk};

use std::sync::Arc;

use rand::seq::index;
use rand::Rng;
use thiserror::Error;

use crate::diff::init::{normal_embedding, xavier_uniform, zeros_row};
use crate::diff::{DiffError, ParamId, ParameterStore, Scalar, Tape, Tensor, Var};
use crate::exec::{self, Execution};
use crate::rng::keyed_rng;

#[derive(Debug, Error)]
pub enum ContextError {
    #[error("invalid context configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Diff(#[from] DiffError),
}

/// How the `k` neighbours of an edge are chosen.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum SelectionMode {
    /// Highest energy score under the learned map `g`.
    #[default]
    EnergyTopk,
    /// `k` neighbours drawn uniformly from a keyed stream.
    RandomK,
    /// Highest raw dot product between states.
    DotTopk,
}

/// How an edge combines its own state with the neighbourhood mean.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Aggregator {
    /// Head-wise gated update.
    #[default]
    Attention,
    /// `relu(((self + nbhd) / 2) W_o + b_o)`.
    Mean,
    /// `relu([self, nbhd] W_c + b_c)`.
    ConcatMlp,
}

macro_rules! string_enum {
    ($ty:ty, $($variant:path => $s:literal),+) => {
        impl $ty {
            pub fn as_str(self) -> &'static str {
                match self { $($variant => $s),+ }
            }
        }
        impl std::fmt::Display for $ty {
            fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
                f.write_str(self.as_str())
            }
        }
        impl std::str::FromStr for $ty {
            type Err = String;
            fn from_str(s: &str) -> Result<Self, String> {
                match s {
                    $($s => Ok($variant),)+
                    _ => Err(format!("unknown value {s:?}")),
                }
            }
        }
    };
}

string_enum!(SelectionMode,
    SelectionMode::EnergyTopk => "energy_topk",
    SelectionMode::RandomK => "random_k",
    SelectionMode::DotTopk => "dot_topk");
string_enum!(Aggregator,
    Aggregator::Attention => "attention",
    Aggregator::Mean => "mean",
    Aggregator::ConcatMlp => "concat_mlp");
pub(crate) use string_enum;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ContextConfig {
    pub hops: usize,
    pub top_k: usize,
    pub neighbor_samples: usize,
    pub heads: usize,
    pub dim: usize,
    pub temperature: f64,
    pub selection: SelectionMode,
    pub aggregator: Aggregator,
}

impl Default for ContextConfig {
    fn default() -> Self {
        Self {
            hops: 2,
            top_k: 3,
            neighbor_samples: 8,
            heads: 4,
            dim: 64,
            temperature: 0.95,
            selection: SelectionMode::EnergyTopk,
            aggregator: Aggregator::Attention,
        }
    }
}

impl ContextConfig {
    pub fn validate(&self) -> Result<(), ContextError> {
        let bad = |m: &str| Err(ContextError::Config(m.to_string()));
        if self.hops == 0 {
            return bad("hops must be at least 1");
        }
        if self.top_k == 0 {
            return bad("top_k must be at least 1");
        }
        if self.neighbor_samples == 0 {
            return bad("neighbor_samples must be at least 1");
        }
        if self.dim == 0 || self.heads == 0 || self.dim % self.heads != 0 {
            return bad("dim must be a positive multiple of heads");
        }
        if !(self.temperature > 0.0) {
            return bad("temperature must be positive");
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
enum LayerParams {
    Attention {
        w_s: ParamId,
        b_s: ParamId,
        w_n: ParamId,
        b_n: ParamId,
        w_o: ParamId,
        b_o: ParamId,
    },
    Mean {
        w_o: ParamId,
        b_o: ParamId,
    },
    ConcatMlp {
        w_c: ParamId,
        b_c: ParamId,
    },
}

/// Parameter handles and configuration of the context encoder.
#[derive(Clone, Debug)]
pub struct ContextEncoder {
    config: ContextConfig,
    rel_emb: ParamId,
    g: ParamId,
    layers: Vec<LayerParams>,
}

impl ContextEncoder {
    /// Registers `rel_emb`, `context.g.weight` and one aggregator per layer
    /// (`context.layer<i>.*`) in `store`.
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        config: ContextConfig,
        num_relations: usize,
        store: &mut ParameterStore<T>,
        rng: &mut R,
    ) -> Result<Self, ContextError> {
        config.validate()?;
        let d = config.dim;
        let rel_emb = store.insert("rel_emb", normal_embedding(num_relations, d, rng))?;
        let g = store.insert("context.g.weight", xavier_uniform(d, d, rng))?;
        let mut layers = Vec::with_capacity(config.hops);
        for i in 0..config.hops {
            let p = format!("context.layer{i}");
            let mut w = |name: &str, fan_in: usize| {
                store.insert(format!("{p}.{name}"), xavier_uniform(fan_in, d, rng))
            };
            let layer = match config.aggregator {
                Aggregator::Attention => {
                    let (w_s, w_n, w_o) = (w("w_s", d)?, w("w_n", d)?, w("w_o", d)?);
                    LayerParams::Attention {
                        w_s,
                        w_n,
                        w_o,
                        b_s: store.insert(format!("{p}.b_s"), zeros_row(d))?,
                        b_n: store.insert(format!("{p}.b_n"), zeros_row(d))?,
                        b_o: store.insert(format!("{p}.b_o"), zeros_row(d))?,
                    }
                }
                Aggregator::Mean => LayerParams::Mean {
                    w_o: w("w_o", d)?,
                    b_o: store.insert(format!("{p}.b_o"), zeros_row(d))?,
                },
                Aggregator::ConcatMlp => LayerParams::ConcatMlp {
                    w_c: w("w_c", 2 * d)?,
                    b_c: store.insert(format!("{p}.b_c"), zeros_row(d))?,
                },
            };
            layers.push(layer);
        }
        Ok(Self {
            config,
            rel_emb,
            g,
            layers,
        })
    }

    pub fn config(&self) -> &ContextConfig {
        &self.config
    }

    pub fn rel_emb(&self) -> ParamId {
        self.rel_emb
    }

    pub fn g_map(&self) -> ParamId {
        self.g
    }

    /// Rows of the relation embedding table for `rels`.
    pub fn relation_rows<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        store: &ParameterStore<T>,
        rels: &[usize],
    ) -> Result<Var, ContextError> {
        let table = tape.param(store, self.rel_emb);
        Ok(tape.gather_rows(table, rels)?)
    }

    /// Final edge states (`edges x d`) of every subgraph in `batch`.
    ///
    /// `seed` keys the random-k selection stream; other modes ignore it.
    pub fn propagate<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        store: &ParameterStore<T>,
        batch: &ContextBatch,
        seed: u64,
        exec: Execution,
    ) -> Result<Var, ContextError> {
        let mut states = self.relation_rows(tape, store, &batch.rels)?;
        for (layer, params) in self.layers.iter().enumerate() {
            let selected = self.select(tape.value(states), store, batch, layer, seed, exec)?;
            let nbhd = tape.gather_mean(states, Arc::new(selected))?;
            states = self.aggregate(tape, store, params, states, nbhd)?;
        }
        Ok(states)
    }

    /// Head and tail messages (`subgraphs x d` each) from final states.
    pub fn entity_messages<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        states: Var,
        batch: &ContextBatch,
    ) -> Result<(Var, Var), ContextError> {
        let m_h = tape.gather_mean(states, batch.head_incident.clone())?;
        let m_t = tape.gather_mean(states, batch.tail_incident.clone())?;
        Ok((m_h, m_t))
    }

    fn select<T: Scalar>(
        &self,
        states: &Tensor<T>,
        store: &ParameterStore<T>,
        batch: &ContextBatch,
        layer: usize,
        seed: u64,
        exec: Execution,
    ) -> Result<Vec<Vec<usize>>, ContextError> {
        let k = self.config.top_k;
        let projected = match self.config.selection {
            SelectionMode::EnergyTopk => Some(states.matmul(store.value(self.g))?),
            _ => None,
        };
        let tau = self.config.temperature;
        let positions: Vec<usize> = (0..batch.num_edges()).collect();
        Ok(exec::map(exec, &positions, |&c| {
            let nbrs = &batch.neighbors[c];
            if nbrs.len() <= k {
                return nbrs.clone();
            }
            let picks = match self.config.selection {
                SelectionMode::EnergyTopk => {
                    let g = projected.as_ref().expect("projected states");
                    let gc = g.row_slice(c);
                    let scores: Vec<f64> =
                        nbrs.iter().map(|&n| log_energy(gc, g.row_slice(n), tau)).collect();
                    select_topk(&scores, k)
                }
                SelectionMode::DotTopk => {
                    let sc = states.row_slice(c);
                    let scores: Vec<f64> = nbrs
                        .iter()
                        .map(|&n| {
                            sc.iter()
                                .zip(states.row_slice(n))
                                .map(|(&a, &b)| (a * b).as_f64())
                                .sum()
                        })
                        .collect();
                    select_topk(&scores, k)
                }
                SelectionMode::RandomK => {
                    let (h, t) = batch.owner[c];
                    let mut rng = keyed_rng(
                        seed,
                        &[layer as u64, h as u64, t as u64, batch.local[c] as u64],
                    );
                    let mut p = index::sample(&mut rng, nbrs.len(), k).into_vec();
                    p.sort_unstable();
                    p
                }
            };
            picks.into_iter().map(|p| nbrs[p]).collect()
        }))
    }

    fn aggregate<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        store: &ParameterStore<T>,
        params: &LayerParams,
        states: Var,
        nbhd: Var,
    ) -> Result<Var, ContextError> {
        let mut p = |id: ParamId| tape.param(store, id);
        match *params {
            LayerParams::Attention {
                w_s,
                b_s,
                w_n,
                b_n,
                w_o,
                b_o,
            } => {
                let (w_s, b_s, w_n, b_n, w_o, b_o) = (p(w_s), p(b_s), p(w_n), p(b_n), p(w_o), p(b_o));
                attention_aggregate(tape, states, nbhd, [w_s, b_s, w_n, b_n, w_o, b_o], self.config.heads)
            }
            LayerParams::Mean { w_o, b_o } => {
                let (w_o, b_o) = (p(w_o), p(b_o));
                let sum = tape.add(states, nbhd)?;
                let avg = tape.scale(sum, 0.5);
                let z = tape.affine(avg, w_o, b_o)?;
                Ok(tape.relu(z))
            }
            LayerParams::ConcatMlp { w_c, b_c } => {
                let (w_c, b_c) = (p(w_c), p(b_c));
                let cat = tape.concat_cols(&[states, nbhd])?;
                let z = tape.affine(cat, w_c, b_c)?;
                Ok(tape.relu(z))
            }
        }
    }
}

/// Gated update of `n x d` self states by `n x d` neighbourhood means.
///
/// `a = self W_s + b_s`, `c = nbhd W_n + b_n`; per head `h` the gate is
/// `sigmoid(<a_h, c_h> / sqrt(d_h))` and the output is
/// `relu((a + gate * c) W_o + b_o)`. `params` is `[w_s, b_s, w_n, b_n, w_o, b_o]`.
pub fn attention_aggregate<T: Scalar>(
    tape: &mut Tape<T>,
    states: Var,
    nbhd: Var,
    params: [Var; 6],
    heads: usize,
) -> Result<Var, ContextError> {
    let [w_s, b_s, w_n, b_n, w_o, b_o] = params;
    let d = tape.value(states).cols();
    if heads == 0 || d % heads != 0 {
        return Err(ContextError::Config(format!("dim {d} not divisible by {heads} heads")));
    }
    let a = tape.affine(states, w_s, b_s)?;
    let c = tape.affine(nbhd, w_n, b_n)?;
    let logits = tape.head_dot(a, c, heads, 1.0 / ((d / heads) as f64).sqrt())?;
    let gates = tape.sigmoid(logits);
    let gated = tape.head_scale(gates, c)?;
    let z = tape.add(a, gated)?;
    let out = tape.affine(z, w_o, b_o)?;
    Ok(tape.relu(out))
}

#[cfg(test)]
mod tests;
