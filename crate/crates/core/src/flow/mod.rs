//! Conditional flow matching between head and tail messages.
//!
//! A pair `z = (h*, t*)` defines the Gaussian path
//! `x_t = (1 - t) h* + t t* + sigma eps` whose conditional field is the
//! constant `t* - h*`. A small MLP `v(t, x)` regresses that field; its output
//! also modulates the static pair score.

mod ot;

pub use ot::{assignment_cost, hungarian, ot_pair, pair_cost, OT_MAX_BATCH};

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::diff::init::{xavier_uniform, zeros_row};
use crate::diff::{DiffError, ParamId, ParameterStore, Scalar, Tape, Tensor, Var};
use crate::rng::keyed_rng;

#[derive(Debug, Error)]
pub enum FlowError {
    #[error("{0}")]
    Shape(String),
    #[error("optimal-transport pairing is exact only up to {max} rows (got {n}); use paired coupling")]
    OtBudget { n: usize, max: usize },
    #[error("invalid flow configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Diff(#[from] DiffError),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Coupling {
    /// Each head message is paired with the tail message of its own query.
    #[default]
    Paired,
    /// Tails are re-paired within the batch by an exact OT assignment.
    MinibatchOt,
}

crate::context::string_enum!(Coupling,
    Coupling::Paired => "paired",
    Coupling::MinibatchOt => "ot");

/// Which `(t, x)` the field is evaluated at outside training.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum InferenceMode {
    /// `v(0.5, (h* + t*) / 2)`.
    #[default]
    Midpoint,
    /// Mean of `v` over this many draws from the training path distribution.
    McAverage(usize),
}

impl fmt::Display for InferenceMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InferenceMode::Midpoint => f.write_str("midpoint"),
            InferenceMode::McAverage(s) => write!(f, "mc:{s}"),
        }
    }
}

impl FromStr for InferenceMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if s == "midpoint" {
            return Ok(InferenceMode::Midpoint);
        }
        match s.strip_prefix("mc:").map(str::parse::<usize>) {
            Some(Ok(n)) if n >= 1 => Ok(InferenceMode::McAverage(n)),
            _ => Err(format!("expected midpoint or mc:<samples>, got {s:?}")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FlowConfig {
    pub sigma: f64,
    pub coupling: Coupling,
    pub inference: InferenceMode,
    /// Treat the path endpoints as constants in the CFM term, so that term
    /// trains only the field.
    pub stop_gradient: bool,
}

impl Default for FlowConfig {
    fn default() -> Self {
        Self {
            sigma: 0.1,
            coupling: Coupling::Paired,
            inference: InferenceMode::Midpoint,
            stop_gradient: true,
        }
    }
}

impl FlowConfig {
    pub fn validate(&self) -> Result<(), FlowError> {
        if !(self.sigma >= 0.0) || !self.sigma.is_finite() {
            return Err(FlowError::Config("sigma must be finite and non-negative".into()));
        }
        if self.inference == InferenceMode::McAverage(0) {
            return Err(FlowError::Config("mc samples must be at least 1".into()));
        }
        Ok(())
    }
}

/// One draw from the conditional path of a single pair.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowSample {
    pub t: f64,
    pub x_t: Vec<f64>,
    pub u_target: Vec<f64>,
}

/// Draws `t ~ U[0, 1]`, `eps ~ N(0, I)` and returns the path point and target field.
pub fn sample_path<R: Rng + ?Sized>(h: &[f64], t_star: &[f64], sigma: f64, rng: &mut R) -> FlowSample {
    let t: f64 = rng.random();
    path_point(h, t_star, sigma, t, rng)
}

/// Path point at a given time; noise is still drawn from `rng`.
pub fn path_point<R: Rng + ?Sized>(h: &[f64], t_star: &[f64], sigma: f64, t: f64, rng: &mut R) -> FlowSample {
    let x_t = h
        .iter()
        .zip(t_star)
        .map(|(&a, &b)| {
            let e: f64 = StandardNormal.sample(rng);
            (1.0 - t) * a + t * b + sigma * e
        })
        .collect();
    let u_target = h.iter().zip(t_star).map(|(&a, &b)| b - a).collect();
    FlowSample { t, x_t, u_target }
}

/// Per-row times and noise for a batch of paths.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowDraws {
    pub t: Vec<f64>,
    /// `rows x dim`, row-major.
    pub eps: Vec<f64>,
    pub dim: usize,
}

impl FlowDraws {
    pub fn sample<R: Rng + ?Sized>(rows: usize, dim: usize, rng: &mut R) -> Self {
        let t = (0..rows).map(|_| rng.random::<f64>()).collect();
        let eps = (0..rows * dim).map(|_| StandardNormal.sample(rng)).collect();
        Self { t, eps, dim }
    }

    /// The deterministic midpoint: `t = 0.5`, no noise.
    pub fn midpoint(rows: usize, dim: usize) -> Self {
        Self {
            t: vec![0.5; rows],
            eps: vec![0.0; rows * dim],
            dim,
        }
    }

    pub fn rows(&self) -> usize {
        self.t.len()
    }

    pub fn subset(&self, rows: &[usize]) -> Self {
        let d = self.dim;
        Self {
            t: rows.iter().map(|&r| self.t[r]).collect(),
            eps: rows
                .iter()
                .flat_map(|&r| self.eps[r * d..(r + 1) * d].iter().copied())
                .collect(),
            dim: d,
        }
    }
}

/// `x_t = (1 - t) h + t tail + sigma eps` on the tape, row by row.
pub fn interpolate<T: Scalar>(
    tape: &mut Tape<T>,
    h: Var,
    tail: Var,
    draws: &FlowDraws,
    sigma: f64,
) -> Result<Var, FlowError> {
    let (n, d) = (tape.value(h).rows(), tape.value(h).cols());
    if draws.rows() != n || draws.dim != d {
        return Err(FlowError::Shape(format!(
            "draws {}x{} for states {n}x{d}",
            draws.rows(),
            draws.dim
        )));
    }
    let expand = |f: &dyn Fn(f64) -> f64| {
        let data = draws
            .t
            .iter()
            .flat_map(|&t| std::iter::repeat_n(T::from_f64_lossy(f(t)), d))
            .collect();
        Tensor::new(vec![n, d], data)
    };
    let w_h = tape.input(expand(&|t| 1.0 - t)?);
    let w_t = tape.input(expand(&|t| t)?);
    let a = tape.mul(h, w_h)?;
    let b = tape.mul(tail, w_t)?;
    let mut x = tape.add(a, b)?;
    if sigma != 0.0 {
        let noise = Tensor::new(
            vec![n, d],
            draws.eps.iter().map(|&e| T::from_f64_lossy(sigma * e)).collect(),
        )?;
        let noise = tape.input(noise);
        x = tape.add(x, noise)?;
    }
    Ok(x)
}

/// `v(t, x) = relu([x, t] W1 + b1) W2 + b2` with a hidden width equal to `dim`.
#[derive(Clone, Debug)]
pub struct VectorFieldNet {
    dim: usize,
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
}

impl VectorFieldNet {
    /// Registers `flow.w1`, `flow.b1`, `flow.w2`, `flow.b2`.
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        dim: usize,
        store: &mut ParameterStore<T>,
        rng: &mut R,
    ) -> Result<Self, FlowError> {
        Ok(Self {
            dim,
            w1: store.insert("flow.w1", xavier_uniform(dim + 1, dim, rng))?,
            b1: store.insert("flow.b1", zeros_row(dim))?,
            w2: store.insert("flow.w2", xavier_uniform(dim, dim, rng))?,
            b2: store.insert("flow.b2", zeros_row(dim))?,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn params(&self) -> [ParamId; 4] {
        [self.w1, self.b1, self.w2, self.b2]
    }

    /// Field at `x` (`n x d`) and per-row times `t`.
    pub fn forward<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        store: &ParameterStore<T>,
        x: Var,
        t: &[f64],
    ) -> Result<Var, FlowError> {
        let n = tape.value(x).rows();
        if t.len() != n {
            return Err(FlowError::Shape(format!("{} times for {n} states", t.len())));
        }
        let tcol = tape.input(Tensor::new(
            vec![n, 1],
            t.iter().map(|&v| T::from_f64_lossy(v)).collect(),
        )?);
        let input = tape.concat_cols(&[x, tcol])?;
        let [w1, b1, w2, b2] = self.params().map(|id| tape.param(store, id));
        let hidden = tape.affine(input, w1, b1)?;
        let hidden = tape.relu(hidden);
        Ok(tape.affine(hidden, w2, b2)?)
    }
}

/// Maps entity messages onto the unit sphere before they condition the flow.
///
/// Keeps the regression target `t* - h*` bounded while the messages
/// themselves are free to grow under the prediction loss.
pub fn flow_condition<T: Scalar>(tape: &mut Tape<T>, messages: Var) -> Result<Var, FlowError> {
    Ok(tape.row_normalize(messages, 1.0)?)
}

/// Mean over rows of `||v - u||^2`.
pub fn cfm_loss<T: Scalar>(tape: &mut Tape<T>, v: Var, u: Var) -> Result<Var, FlowError> {
    Ok(tape.squared_error(v, u)?)
}

/// CFM regression term for the pairs `(h[i], tail[i])`.
///
/// With `config.stop_gradient` the endpoints enter as constants. With
/// `Coupling::MinibatchOt` the tails are first re-paired by [`ot_pair`].
pub fn cfm_term<T: Scalar>(
    tape: &mut Tape<T>,
    store: &ParameterStore<T>,
    net: &VectorFieldNet,
    h: Var,
    tail: Var,
    draws: &FlowDraws,
    config: &FlowConfig,
) -> Result<Var, FlowError> {
    let (h, mut tail) = if config.stop_gradient {
        (tape.detach(h), tape.detach(tail))
    } else {
        (h, tail)
    };
    if config.coupling == Coupling::MinibatchOt {
        let pi = ot_pair(tape.value(h), tape.value(tail))?;
        tail = tape.gather_rows(tail, &pi)?;
    }
    let x = interpolate(tape, h, tail, draws, config.sigma)?;
    let u = tape.sub(tail, h)?;
    let v = net.forward(tape, store, x, &draws.t)?;
    cfm_loss(tape, v, u)
}

/// Field used to modulate the static score of each pair.
///
/// Training passes the draws shared with [`cfm_term`]; gradients reach the
/// messages as well as the field. Outside training `draws` is `None` and
/// `config.inference` decides: the midpoint, or the mean over `S` draws whose
/// stream for row `i` is keyed by `keys[i]`.
pub fn modulation_vector<T: Scalar>(
    tape: &mut Tape<T>,
    store: &ParameterStore<T>,
    net: &VectorFieldNet,
    h: Var,
    tail: Var,
    config: &FlowConfig,
    draws: Option<&FlowDraws>,
    keys: &[u64],
) -> Result<Var, FlowError> {
    let (n, d) = (tape.value(h).rows(), tape.value(h).cols());
    if let Some(draws) = draws {
        let x = interpolate(tape, h, tail, draws, config.sigma)?;
        return net.forward(tape, store, x, &draws.t);
    }
    match config.inference {
        InferenceMode::Midpoint => {
            let sum = tape.add(h, tail)?;
            let x = tape.scale(sum, 0.5);
            net.forward(tape, store, x, &vec![0.5; n])
        }
        InferenceMode::McAverage(samples) => {
            if keys.len() != n {
                return Err(FlowError::Shape(format!("{} keys for {n} rows", keys.len())));
            }
            let mut rngs: Vec<_> = keys.iter().map(|&k| keyed_rng(k, &[])).collect();
            let mut total: Option<Var> = None;
            for _ in 0..samples {
                let mut draws = FlowDraws {
                    t: Vec::with_capacity(n),
                    eps: Vec::with_capacity(n * d),
                    dim: d,
                };
                for rng in rngs.iter_mut() {
                    let one = FlowDraws::sample(1, d, rng);
                    draws.t.extend(one.t);
                    draws.eps.extend(one.eps);
                }
                let x = interpolate(tape, h, tail, &draws, config.sigma)?;
                let v = net.forward(tape, store, x, &draws.t)?;
                total = Some(match total {
                    None => v,
                    Some(acc) => tape.add(acc, v)?,
                });
            }
            let total = total.expect("at least one sample");
            Ok(tape.scale(total, 1.0 / samples as f64))
        }
    }
}
