use super::*;
use crate::kg::{ContextSubgraph, SampledEdge};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn cfg(hops: usize, top_k: usize, dim: usize, heads: usize) -> ContextConfig {
    ContextConfig {
        hops,
        top_k,
        neighbor_samples: 8,
        heads,
        dim,
        temperature: 0.95,
        ..ContextConfig::default()
    }
}

fn encoder(c: ContextConfig, rels: usize, seed: u64) -> (ContextEncoder, ParameterStore<f64>) {
    let mut store = ParameterStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let enc = ContextEncoder::new(c, rels, &mut store, &mut rng).unwrap();
    // non-zero biases so they take part in every check
    for id in store.ids().collect::<Vec<_>>() {
        if store.name(id).contains(".b_") {
            let n = store.value(id).len();
            let vals: Vec<f64> = (0..n).map(|i| 0.05 * ((i % 5) as f64 - 2.0)).collect();
            *store.value_mut(id) = Tensor::from_f64(&[1, n], &vals).unwrap();
        }
    }
    (enc, store)
}

fn edge(edge: usize, rel: usize, head: usize, tail: usize) -> SampledEdge {
    SampledEdge {
        edge,
        rel,
        head,
        tail,
    }
}

fn layer_vars(tape: &mut Tape<f64>, store: &ParameterStore<f64>, layer: usize) -> [Var; 6] {
    let names = ["w_s", "b_s", "w_n", "b_n", "w_o", "b_o"];
    names.map(|n| tape.param(store, store.id(&format!("context.layer{layer}.{n}")).unwrap()))
}

// y = x W + b for a row vector, in plain loops.
fn affine(x: &[f64], w: &Tensor<f64>, b: &Tensor<f64>) -> Vec<f64> {
    let n = w.cols();
    (0..n)
        .map(|j| b.data()[j] + x.iter().enumerate().map(|(i, &xi)| xi * w.at(i, j)).sum::<f64>())
        .collect()
}

fn hand_attention(store: &ParameterStore<f64>, layer: usize, s: &[f64], n: &[f64], heads: usize) -> Vec<f64> {
    let get = |k: &str| store.get(&format!("context.layer{layer}.{k}")).unwrap();
    let a = affine(s, get("w_s"), get("b_s"));
    let c = affine(n, get("w_n"), get("b_n"));
    let dh = a.len() / heads;
    let mut z = a.clone();
    for h in 0..heads {
        let dot: f64 = (h * dh..(h + 1) * dh).map(|j| a[j] * c[j]).sum();
        let gate = 1.0 / (1.0 + (-dot / (dh as f64).sqrt()).exp());
        for j in h * dh..(h + 1) * dh {
            z[j] += gate * c[j];
        }
    }
    affine(&z, get("w_o"), get("b_o")).into_iter().map(|x| x.max(0.0)).collect()
}

#[test]
fn zero_neighbourhood_drops_gated_term() {
    let (_, mut store) = encoder(cfg(1, 2, 4, 2), 3, 1);
    for n in ["b_s", "b_n", "b_o"] {
        let id = store.id(&format!("context.layer0.{n}")).unwrap();
        *store.value_mut(id) = Tensor::zeros(&[1, 4]);
    }
    let s = [0.3, -0.7, 1.1, 0.2];
    let mut tape = Tape::new();
    let sv = tape.input(Tensor::row(s.to_vec()));
    let nv = tape.input(Tensor::zeros(&[1, 4]));
    let p = layer_vars(&mut tape, &store, 0);
    let out = attention_aggregate(&mut tape, sv, nv, p, 2).unwrap();
    let get = |k: &str| store.get(&format!("context.layer0.{k}")).unwrap();
    let a = affine(&s, get("w_s"), get("b_s"));
    let expect: Vec<f64> = affine(&a, get("w_o"), get("b_o")).into_iter().map(|x| x.max(0.0)).collect();
    for (x, y) in tape.value(out).data().iter().zip(&expect) {
        assert!((x - y).abs() < 1e-12);
    }
}

#[test]
fn identity_weights_follow_formula() {
    let d = 4;
    let heads = 2;
    let (_, mut store) = encoder(cfg(1, 2, d, heads), 3, 2);
    let mut eye = Tensor::zeros(&[d, d]);
    for i in 0..d {
        eye.data_mut()[i * d + i] = 1.0;
    }
    for n in ["w_s", "w_n", "w_o"] {
        let id = store.id(&format!("context.layer0.{n}")).unwrap();
        *store.value_mut(id) = eye.clone();
    }
    for n in ["b_s", "b_n", "b_o"] {
        let id = store.id(&format!("context.layer0.{n}")).unwrap();
        *store.value_mut(id) = Tensor::zeros(&[1, d]);
    }
    let v = [0.5, -0.25, 1.0, 0.75];
    let mut tape = Tape::new();
    let sv = tape.input(Tensor::row(v.to_vec()));
    let nv = tape.input(Tensor::row(v.to_vec()));
    let p = layer_vars(&mut tape, &store, 0);
    let out = attention_aggregate(&mut tape, sv, nv, p, heads).unwrap();
    let dh = d / heads;
    for (j, &got) in tape.value(out).data().iter().enumerate() {
        let h = j / dh;
        let sq: f64 = (h * dh..(h + 1) * dh).map(|i| v[i] * v[i]).sum();
        let gate = 1.0 / (1.0 + (-sq / (dh as f64).sqrt()).exp());
        let expect = (v[j] + gate * v[j]).max(0.0);
        assert!((got - expect).abs() < 1e-12);
    }
}

#[test]
fn single_edge_is_repeated_zero_neighbourhood_update() {
    let c = cfg(3, 2, 4, 2);
    let (enc, store) = encoder(c, 2, 3);
    let sg = ContextSubgraph::from_edges((0, 1), vec![edge(0, 1, 0, 1)], vec![]);
    let batch = ContextBatch::new(&[sg]);
    let mut tape = Tape::new();
    let out = enc.propagate(&mut tape, &store, &batch, 0, Execution::Sequential).unwrap();
    let mut s = store.get("rel_emb").unwrap().row_slice(1).to_vec();
    for layer in 0..3 {
        s = hand_attention(&store, layer, &s, &[0.0; 4], 2);
    }
    for (x, y) in tape.value(out).data().iter().zip(&s) {
        assert!((x - y).abs() < 1e-12);
    }
}

#[test]
fn two_edges_exchange_states() {
    let c = cfg(1, 1, 4, 2);
    let (enc, store) = encoder(c, 3, 4);
    let sg = ContextSubgraph::from_edges((0, 2), vec![edge(0, 0, 0, 1), edge(1, 2, 1, 2)], vec![]);
    assert_eq!(sg.edge_neighbors, vec![vec![1], vec![0]]);
    let batch = ContextBatch::new(&[sg]);
    let mut tape = Tape::new();
    let out = enc.propagate(&mut tape, &store, &batch, 0, Execution::Sequential).unwrap();
    let emb = store.get("rel_emb").unwrap();
    let (s0, s1) = (emb.row_slice(0).to_vec(), emb.row_slice(2).to_vec());
    let e0 = hand_attention(&store, 0, &s0, &s1, 2);
    let e1 = hand_attention(&store, 0, &s1, &s0, 2);
    let got = tape.value(out);
    for j in 0..4 {
        assert!((got.at(0, j) - e0[j]).abs() < 1e-12);
        assert!((got.at(1, j) - e1[j]).abs() < 1e-12);
    }
}

fn triangle_edges() -> Vec<SampledEdge> {
    vec![
        edge(0, 0, 0, 1),
        edge(1, 1, 1, 2),
        edge(2, 2, 2, 0),
        edge(3, 3, 0, 3),
        edge(4, 1, 3, 1),
    ]
}

#[test]
fn permutation_equivariance() {
    let c = cfg(2, 2, 8, 4);
    let (enc, store) = encoder(c, 4, 5);
    let base = triangle_edges();
    let run = |edges: Vec<SampledEdge>| {
        let sg = ContextSubgraph::from_edges((0, 1), edges.clone(), vec![]);
        let batch = ContextBatch::new(&[sg]);
        let mut tape = Tape::new();
        let out = enc.propagate(&mut tape, &store, &batch, 0, Execution::Sequential).unwrap();
        let t = tape.value(out);
        let mut rows: Vec<(usize, Vec<f64>)> =
            edges.iter().enumerate().map(|(i, e)| (e.edge, t.row_slice(i).to_vec())).collect();
        rows.sort_by_key(|r| r.0);
        rows
    };
    let a = run(base.clone());
    let mut perm = base;
    perm.reverse();
    perm.swap(0, 2);
    let b = run(perm);
    for ((ea, ra), (eb, rb)) in a.iter().zip(&b) {
        assert_eq!(ea, eb);
        for (x, y) in ra.iter().zip(rb) {
            assert!((x - y).abs() < 1e-12);
        }
    }
}

#[test]
fn entity_messages_are_incident_means() {
    let c = cfg(1, 2, 4, 2);
    let (enc, store) = encoder(c, 4, 6);
    // head 0 touches edges 0, 2, 3; tail 5 touches nothing
    let sg = ContextSubgraph::from_edges((0, 5), triangle_edges(), vec![]);
    let one = ContextSubgraph::from_edges((3, 0), vec![edge(9, 1, 3, 4)], vec![]);
    let batch = ContextBatch::new(&[sg, one]);
    let mut tape = Tape::new();
    let states = enc.propagate(&mut tape, &store, &batch, 0, Execution::Sequential).unwrap();
    let (mh, mt) = enc.entity_messages(&mut tape, states, &batch).unwrap();
    let s = tape.value(states).clone();
    let (mh, mt) = (tape.value(mh), tape.value(mt));
    for j in 0..4 {
        let expect = (s.at(0, j) + s.at(2, j) + s.at(3, j)) / 3.0;
        assert!((mh.at(0, j) - expect).abs() < 1e-12);
        assert_eq!(mt.at(0, j), 0.0);
        assert_eq!(mh.at(1, j), s.at(5, j));
        assert_eq!(mt.at(1, j), 0.0);
    }
}

#[test]
fn propagation_is_deterministic_across_modes() {
    for selection in [SelectionMode::EnergyTopk, SelectionMode::RandomK, SelectionMode::DotTopk] {
        let c = ContextConfig {
            selection,
            ..cfg(2, 1, 8, 2)
        };
        let (enc, store) = encoder(c, 4, 7);
        let sg = ContextSubgraph::from_edges((0, 1), triangle_edges(), vec![]);
        let batch = ContextBatch::new(&[sg]);
        let run = |exec| {
            let mut tape = Tape::new();
            let out = enc.propagate(&mut tape, &store, &batch, 11, exec).unwrap();
            tape.value(out).clone()
        };
        assert_eq!(run(Execution::Sequential), run(Execution::Parallel));
        assert_eq!(run(Execution::Sequential), run(Execution::Sequential));
    }
}

#[test]
fn config_validation() {
    assert!(cfg(2, 3, 64, 4).validate().is_ok());
    assert!(cfg(0, 3, 64, 4).validate().is_err());
    assert!(cfg(2, 0, 64, 4).validate().is_err());
    assert!(cfg(2, 3, 62, 4).validate().is_err());
    let c = ContextConfig {
        temperature: 0.0,
        ..cfg(2, 3, 64, 4)
    };
    assert!(c.validate().is_err());
}

#[test]
fn enum_strings_round_trip() {
    for s in [SelectionMode::EnergyTopk, SelectionMode::RandomK, SelectionMode::DotTopk] {
        assert_eq!(s.as_str().parse::<SelectionMode>().unwrap(), s);
    }
    for a in [Aggregator::Attention, Aggregator::Mean, Aggregator::ConcatMlp] {
        assert_eq!(a.to_string().parse::<Aggregator>().unwrap(), a);
    }
}
