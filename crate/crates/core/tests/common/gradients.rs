//! Central finite differences against the tape's reverse pass, in f64.
//! Every check panics with the offending op or parameter on failure.

use std::sync::Arc;

use fms_core::context::{attention_aggregate, energy_score_tape, ContextConfig};
use fms_core::diff::{ParameterStore, Tape, Tensor, Var};
use fms_core::fixtures;
use fms_core::flow::{cfm_term, Coupling, FlowConfig, FlowDraws, VectorFieldNet};
use fms_core::kg::KnowledgeGraph;
use fms_core::model::{prepare_batch, Model, ModelConfig, PairSpec, Targets, Task};
use fms_core::rng::keyed_rng;
use fms_core::Execution;
use rand::Rng;

const EPS: f64 = 1e-5;
const TOL: f64 = 1e-5;

fn rel_err(a: &[f64], n: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(n).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nn: f64 = n.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / na.max(nn).max(1e-10)
}

fn random(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut rng = keyed_rng(seed, &[]);
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Values bounded away from zero so a relu kink is never crossed.
fn away_from_zero(shape: &[usize], seed: u64) -> Tensor<f64> {
    random(shape, seed).map(|x| if x >= 0.0 { x + 0.1 } else { x - 0.1 })
}

type Build = dyn Fn(&mut Tape<f64>, &[Var]) -> Var;

/// Scalar `sum(f(inputs) * w)` with fixed random weights `w`.
fn project(inputs: &[Tensor<f64>], f: &Build) -> (f64, Vec<Vec<f64>>) {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.input(t.clone())).collect();
    let out = f(&mut tape, &vars);
    let shape = tape.value(out).shape().to_vec();
    let w = tape.input(random(&shape, 99));
    let prod = tape.mul(out, w).unwrap();
    let loss = tape.sum(prod);
    let value = tape.value(loss).data()[0];
    let grads = tape.backward(loss).unwrap();
    let g = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| grads.get_or_zeros(v, t).into_data())
        .collect();
    (value, g)
}

fn check(name: &str, inputs: Vec<Tensor<f64>>, f: &Build) {
    let (_, analytic) = project(&inputs, f);
    for (i, input) in inputs.iter().enumerate() {
        let mut numeric = vec![0.0; input.len()];
        for j in 0..input.len() {
            let mut plus = inputs.clone();
            plus[i].data_mut()[j] += EPS;
            let mut minus = inputs.clone();
            minus[i].data_mut()[j] -= EPS;
            numeric[j] = (project(&plus, f).0 - project(&minus, f).0) / (2.0 * EPS);
        }
        let err = rel_err(&analytic[i], &numeric);
        assert!(err <= TOL, "{name}: input {i} relative error {err:e}");
    }
}

pub fn elementwise_and_linear_ops() {
    let a = random(&[3, 4], 1);
    let b = random(&[3, 4], 2);
    let w = random(&[4, 5], 3);
    let row = random(&[1, 4], 4);
    check("matmul", vec![a.clone(), w.clone()], &|t, v| t.matmul(v[0], v[1]).unwrap());
    check("add", vec![a.clone(), b.clone()], &|t, v| t.add(v[0], v[1]).unwrap());
    check("sub", vec![a.clone(), b.clone()], &|t, v| t.sub(v[0], v[1]).unwrap());
    check("mul", vec![a.clone(), b.clone()], &|t, v| t.mul(v[0], v[1]).unwrap());
    check("add_row", vec![a.clone(), row.clone()], &|t, v| t.add_row(v[0], v[1]).unwrap());
    check("affine", vec![a.clone(), w.clone(), random(&[1, 5], 5)], &|t, v| {
        t.affine(v[0], v[1], v[2]).unwrap()
    });
    check("scale", vec![a.clone()], &|t, v| t.scale(v[0], -1.7));
    check("concat_cols", vec![a.clone(), random(&[3, 2], 6)], &|t, v| {
        t.concat_cols(&[v[0], v[1]]).unwrap()
    });
    check("reshape", vec![a.clone()], &|t, v| t.reshape(v[0], &[2, 6]).unwrap());
    check("mul_self", vec![a.clone()], &|t, v| t.mul(v[0], v[0]).unwrap());
}

pub fn nonlinear_ops() {
    let a = away_from_zero(&[3, 4], 7);
    check("relu", vec![a.clone()], &|t, v| t.relu(v[0]));
    check("sigmoid", vec![a.clone()], &|t, v| t.sigmoid(v[0]));
    check("exp", vec![a.clone()], &|t, v| t.exp(v[0]));
    check("softmax_rows", vec![a.clone()], &|t, v| t.softmax_rows(v[0]).unwrap());
    check("row_normalize", vec![a.clone()], &|t, v| t.row_normalize(v[0], 2.5).unwrap());
}

pub fn reductions_and_losses() {
    let a = random(&[4, 3], 8);
    let b = random(&[4, 3], 9);
    check("mean_rows", vec![a.clone()], &|t, v| t.mean_rows(v[0]).unwrap());
    check("row_sum", vec![a.clone()], &|t, v| t.row_sum(v[0]).unwrap());
    check("sum", vec![a.clone()], &|t, v| t.sum(v[0]));
    check("squared_error", vec![a.clone(), b.clone()], &|t, v| {
        t.squared_error(v[0], v[1]).unwrap()
    });
    check("cross_entropy", vec![a.clone()], &|t, v| {
        t.cross_entropy_with_logits(v[0], &[0, 2, 1, 2]).unwrap()
    });
    check("l2_penalty", vec![a.clone(), random(&[2, 2], 10)], &|t, v| t.l2_penalty(&[v[0], v[1]]));
}

pub fn gather_and_head_ops() {
    let a = random(&[5, 4], 11);
    let groups = Arc::new(vec![vec![0, 2], vec![], vec![4, 4, 1], vec![3]]);
    check("gather_mean", vec![a.clone()], &move |t, v| {
        t.gather_mean(v[0], groups.clone()).unwrap()
    });
    check("gather_rows", vec![a.clone()], &|t, v| t.gather_rows(v[0], &[4, 0, 0, 2]).unwrap());
    let b = random(&[5, 4], 12);
    check("head_dot", vec![a.clone(), b.clone()], &|t, v| t.head_dot(v[0], v[1], 2, 0.7).unwrap());
    check("head_scale", vec![random(&[5, 2], 13), a.clone()], &|t, v| {
        t.head_scale(v[0], v[1]).unwrap()
    });
}

pub fn composite_blocks() {
    check(
        "energy_score",
        vec![random(&[4, 3], 14), random(&[4, 3], 15), random(&[3, 3], 16)],
        &|t, v| energy_score_tape(t, v[0], v[1], v[2], 0.95).unwrap(),
    );
    let d = 4;
    let inputs = vec![
        random(&[3, d], 17),
        random(&[3, d], 18),
        random(&[d, d], 19),
        random(&[1, d], 20),
        random(&[d, d], 21),
        random(&[1, d], 22),
        random(&[d, d], 23),
        random(&[1, d], 24).map(|x| x + 2.0),
    ];
    check("attention_aggregate", inputs, &|t, v| {
        attention_aggregate(t, v[0], v[1], [v[2], v[3], v[4], v[5], v[6], v[7]], 2).unwrap()
    });
}

type Objective<'a> = dyn Fn(&ParameterStore<f64>) -> (Tape<f64>, Var) + 'a;

fn objective_value(f: &Objective, store: &ParameterStore<f64>) -> f64 {
    let (tape, v) = f(store);
    tape.value(v).data()[0]
}

/// Perturbs every scalar of `store` and compares with the analytic gradient.
fn check_store(name: &str, store: &mut ParameterStore<f64>, f: &Objective) -> ParameterStore<f64> {
    check_store_against(name, store, f, &|_| f)
}

/// Analytic gradients of `f` against finite differences of `numeric(param name)`.
fn check_store_against<'a>(
    name: &str,
    store: &mut ParameterStore<f64>,
    f: &Objective,
    numeric_for: &dyn Fn(&str) -> &'a Objective<'a>,
) -> ParameterStore<f64> {
    let mut grads = store.clone();
    grads.zero_grad();
    let (tape, v) = f(store);
    tape.backward_into(v, &mut grads).unwrap();
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let g = numeric_for(store.name(id));
        let analytic = grads.grad(id).data().to_vec();
        let mut numeric = vec![0.0; analytic.len()];
        for j in 0..analytic.len() {
            let orig = store.value(id).data()[j];
            store.value_mut(id).data_mut()[j] = orig + EPS;
            let up = objective_value(g, store);
            store.value_mut(id).data_mut()[j] = orig - EPS;
            let down = objective_value(g, store);
            store.value_mut(id).data_mut()[j] = orig;
            numeric[j] = (up - down) / (2.0 * EPS);
        }
        let err = rel_err(&analytic, &numeric);
        assert!(err <= TOL, "{name}: {} relative error {err:e}", store.name(id));
    }
    grads
}

pub fn cfm_loss_parameters() {
    for coupling in [Coupling::Paired, Coupling::MinibatchOt] {
        let mut store = ParameterStore::<f64>::new();
        let net = VectorFieldNet::new(3, &mut store, &mut keyed_rng(1, &[])).unwrap();
        let h = random(&[5, 3], 30);
        let tail = random(&[5, 3], 31);
        let config = FlowConfig {
            coupling,
            ..FlowConfig::default()
        };
        let draws = FlowDraws::sample(5, 3, &mut keyed_rng(2, &[]));
        let loss = |s: &ParameterStore<f64>| {
            let mut tape = Tape::new();
            let (hv, tv) = (tape.input(h.clone()), tape.input(tail.clone()));
            let l = cfm_term(&mut tape, s, &net, hv, tv, &draws, &config).unwrap();
            (tape, l)
        };
        check_store(&format!("cfm {coupling}"), &mut store, &loss);
    }
}

fn small_config(task: Task) -> ModelConfig {
    ModelConfig {
        task,
        context: ContextConfig {
            hops: 2,
            top_k: 2,
            neighbor_samples: 3,
            heads: 2,
            dim: 4,
            ..ContextConfig::default()
        },
        ..ModelConfig::default()
    }
}

fn end_to_end(task: Task, coupling: Coupling, stop_gradient: bool) {
    let ds = fixtures::family();
    let graph = KnowledgeGraph::build(&ds.train, ds.num_entities(), ds.num_relations()).unwrap();
    let mut config = small_config(task);
    config.flow.coupling = coupling;
    config.flow.stop_gradient = stop_gradient;
    let mut store = ParameterStore::<f64>::new();
    let model = Model::new(config, ds.num_relations(), &mut store, 4).unwrap();
    let queries = &ds.train[..3];
    let (specs, targets): (Vec<PairSpec>, Targets) = match task {
        Task::Relation => (
            queries
                .iter()
                .map(|t| PairSpec {
                    head: t.head,
                    tail: t.tail,
                    rel: t.rel,
                    excluded: graph.edges_matching(*t),
                    seed: 1,
                })
                .collect(),
            Targets::Relations(queries.iter().map(|t| t.rel).collect()),
        ),
        Task::Entity => {
            let mut specs = Vec::new();
            for t in queries {
                for c in [t.tail, (t.tail + 3) % 9] {
                    specs.push(PairSpec {
                        head: t.head,
                        tail: c,
                        rel: t.rel,
                        excluded: graph.edges_matching(*t),
                        seed: 1,
                    });
                }
            }
            (specs, Targets::Candidates { per_query: 2, truth: vec![0; 3] })
        }
    };
    let batch = prepare_batch(&graph, &specs, model.config().sampling(), Execution::Sequential).unwrap();
    const LAMBDA: f64 = 1.2;
    let run = |s: &ParameterStore<f64>, with_cfm: bool| {
        let mut tape = Tape::new();
        let mut rng = keyed_rng(5, &[]);
        let parts = model
            .loss(&mut tape, s, &batch, &targets, LAMBDA, 1e-3, &mut rng, 6, Execution::Sequential)
            .unwrap();
        let out = match (with_cfm, parts.cfm) {
            (false, Some(c)) => {
                let scaled = tape.scale(c, LAMBDA);
                tape.sub(parts.total, scaled).unwrap()
            }
            _ => parts.total,
        };
        (tape, out)
    };
    let total = |s: &ParameterStore<f64>| run(s, true);
    let without_cfm = |s: &ParameterStore<f64>| run(s, false);
    let name = format!("{task} {coupling} stop_gradient={stop_gradient}");
    if stop_gradient {
        // Detached endpoints: only the field parameters see the CFM term.
        check_store_against(&name, &mut store, &total, &|p| {
            if p.starts_with("flow.") {
                &total as &Objective
            } else {
                &without_cfm as &Objective
            }
        });
    } else {
        check_store(&name, &mut store, &total);
    }
}

pub fn end_to_end_relation_loss() {
    for stop_gradient in [true, false] {
        end_to_end(Task::Relation, Coupling::Paired, stop_gradient);
        end_to_end(Task::Relation, Coupling::MinibatchOt, stop_gradient);
    }
}

pub fn end_to_end_entity_loss() {
    for stop_gradient in [true, false] {
        end_to_end(Task::Entity, Coupling::Paired, stop_gradient);
    }
}

pub fn entity_message_norm_reaches_relation_embeddings() {
    let ds = fixtures::family();
    let graph = KnowledgeGraph::build(&ds.train, ds.num_entities(), ds.num_relations()).unwrap();
    let mut store = ParameterStore::<f64>::new();
    let model = Model::new(small_config(Task::Relation), ds.num_relations(), &mut store, 8).unwrap();
    let spec = PairSpec {
        head: ds.train[0].head,
        tail: ds.train[0].tail,
        rel: 0,
        excluded: vec![],
        seed: 2,
    };
    let batch = prepare_batch(&graph, &[spec], model.config().sampling(), Execution::Sequential).unwrap();
    let emb = model.context().rel_emb();
    let loss = |s: &ParameterStore<f64>| {
        let mut tape = Tape::new();
        let states = model.context().propagate(&mut tape, s, &batch.context, 3, Execution::Sequential).unwrap();
        let (m_h, m_t) = model.context().entity_messages(&mut tape, states, &batch.context).unwrap();
        let sq_h = tape.mul(m_h, m_h).unwrap();
        let sq_t = tape.mul(m_t, m_t).unwrap();
        let both = tape.add(sq_h, sq_t).unwrap();
        let l = tape.sum(both);
        (tape, l)
    };
    // every relation present in the context carries gradient
    let grads = check_store("entity message", &mut store, &loss);
    let g = grads.grad(emb);
    for &r in &batch.context.rels {
        assert!(g.row_slice(r).iter().any(|&x| x != 0.0), "relation {r} has no gradient");
    }
}
