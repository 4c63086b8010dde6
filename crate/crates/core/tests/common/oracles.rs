//! Independent oracles. Each check returns a one-line summary on success
//! and a description of the first disagreement on failure.

use std::collections::HashSet;

use fms_core::context::{select_topk, ContextConfig};
use fms_core::diff::{checkpoint, ParameterStore, Tensor};
use fms_core::eval::{
    compute_metrics, evaluate_entities, evaluate_relations, EvalOptions, FilterIndex, QuerySide,
};
use fms_core::fixtures;
use fms_core::flow::{hungarian, ot_pair, path_point};
use fms_core::kg::{KnowledgeGraph, Triple};
use fms_core::model::{probabilities, train, Model, ModelConfig, Predictor, Task, TrainConfig};
use fms_core::rng::keyed_rng;
use fms_core::Execution;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

pub type Check = Result<String, String>;

/// Rank by full sort: position of the truth after removing filtered
/// candidates and placing ties ahead of the truth.
fn sort_rank(scores: &[f64], truth: usize, filtered: &HashSet<usize>) -> usize {
    let mut kept: Vec<usize> = (0..scores.len()).filter(|j| *j == truth || !filtered.contains(j)).collect();
    kept.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .unwrap()
            .then_with(|| (a == truth).cmp(&(b == truth)))
    });
    kept.iter().position(|&j| j == truth).unwrap() + 1
}

fn toy_model(task: Task, num_relations: usize) -> (Model, ParameterStore<f64>) {
    let config = ModelConfig {
        task,
        context: ContextConfig {
            dim: 6,
            heads: 2,
            neighbor_samples: 4,
            ..ContextConfig::default()
        },
        ..ModelConfig::default()
    };
    let mut store = ParameterStore::new();
    let model = Model::new(config, num_relations, &mut store, 11).unwrap();
    (model, store)
}

/// Filtered ranks from the evaluation pipeline against one-query-at-a-time
/// scoring and a full sort with the filter rebuilt from the raw triples.
/// The toy graph has 30 triples; scores are rounded to a coarse grid so
/// ties occur.
pub fn ranking_oracle(task: Task, num_queries: usize, seed: u64) -> Check {
    let ds = fixtures::random(30, 8, 3, seed);
    let all: Vec<Triple> = ds.train.iter().chain(&ds.valid).chain(&ds.test).copied().collect();
    let graph = KnowledgeGraph::build(&ds.train, ds.num_entities(), ds.num_relations()).unwrap();
    let filter = FilterIndex::new([&ds.train[..], &ds.valid[..], &ds.test[..]]);
    let (model, store) = toy_model(task, ds.num_relations());
    let predictor = Predictor::new(&model, &store, &graph, seed);
    let coarse = Coarse(predictor);

    let mut rng = keyed_rng(seed, &[0x51]);
    let queries: Vec<Triple> = (0..num_queries)
        .map(|_| {
            if rng.random_bool(0.7) {
                all[rng.random_range(0..all.len())]
            } else {
                Triple::new(
                    rng.random_range(0..ds.num_entities()),
                    rng.random_range(0..ds.num_relations()),
                    rng.random_range(0..ds.num_entities()),
                )
            }
        })
        .collect();
    let opts = EvalOptions {
        exec: Execution::Sequential,
        ..EvalOptions::default()
    };
    let mut ties = 0usize;
    match task {
        Task::Relation => {
            let report = evaluate_relations(&coarse, &queries, &filter, opts).map_err(|e| e.to_string())?;
            for (q, &rank) in queries.iter().zip(&report.ranks) {
                let scores = coarse.relation_scores(*q);
                let known: HashSet<usize> = all
                    .iter()
                    .filter(|t| t.head == q.head && t.tail == q.tail && t.rel != q.rel)
                    .map(|t| t.rel)
                    .collect();
                ties += scores.iter().enumerate().filter(|&(j, &s)| j != q.rel && s == scores[q.rel]).count();
                let expected = sort_rank(&scores, q.rel, &known);
                if rank != expected {
                    return Err(format!("relation query {q:?}: pipeline rank {rank}, oracle {expected}"));
                }
            }
        }
        Task::Entity => {
            let n = ds.num_entities();
            let report = evaluate_entities(&coarse, &queries, &filter, n, 10_000, seed, opts)
                .map_err(|e| e.to_string())?;
            let asks = queries.iter().flat_map(|&q| [(q, QuerySide::Tail), (q, QuerySide::Head)]);
            for ((q, side), &rank) in asks.zip(&report.ranks) {
                let scores: Vec<f64> = (0..n).map(|e| coarse.single_entity_score(q, side, e)).collect();
                let (truth, known): (usize, HashSet<usize>) = match side {
                    QuerySide::Tail => (
                        q.tail,
                        all.iter().filter(|t| t.head == q.head && t.rel == q.rel && t.tail != q.tail).map(|t| t.tail).collect(),
                    ),
                    QuerySide::Head => (
                        q.head,
                        all.iter().filter(|t| t.tail == q.tail && t.rel == q.rel && t.head != q.head).map(|t| t.head).collect(),
                    ),
                };
                ties += scores.iter().enumerate().filter(|&(j, &s)| j != truth && s == scores[truth]).count();
                let expected = sort_rank(&scores, truth, &known);
                if rank != expected {
                    return Err(format!("{side:?} query {q:?}: pipeline rank {rank}, oracle {expected}"));
                }
            }
        }
    }
    if ties == 0 {
        return Err("no tied scores were exercised".into());
    }
    Ok(format!("{num_queries} {task} queries agree ({ties} ties)"))
}

/// Model scores rounded to one decimal so that ties are common.
struct Coarse<'a>(Predictor<'a, f64>);

fn round(x: f64) -> f64 {
    (x * 10.0).round() / 10.0
}

impl Coarse<'_> {
    fn relation_scores(&self, q: Triple) -> Vec<f64> {
        let logits = self.0.logits(&self.0.relation_specs(&[q])).unwrap();
        logits.row_slice(0).iter().map(|&x| round(x)).collect()
    }

    fn single_entity_score(&self, q: Triple, side: QuerySide, e: usize) -> f64 {
        let logits = self.0.logits(&self.0.entity_specs(q, side, &[e])).unwrap();
        round(logits.data()[0])
    }
}

impl fms_core::eval::RelationScorer for Coarse<'_> {
    fn score_relations(&self, queries: &[Triple]) -> Result<Vec<Vec<f64>>, fms_core::eval::EvalError> {
        let mut out = self.0.score_relations(queries)?;
        out.iter_mut().flatten().for_each(|x| *x = round(*x));
        Ok(out)
    }
}

impl fms_core::eval::EntityScorer for Coarse<'_> {
    fn score_entities(
        &self,
        query: Triple,
        side: QuerySide,
        candidates: &[usize],
    ) -> Result<Vec<f64>, fms_core::eval::EvalError> {
        let mut out = self.0.score_entities(query, side, candidates)?;
        out.iter_mut().for_each(|x| *x = round(*x));
        Ok(out)
    }
}

/// `select_topk` against a full descending sort with index tie-breaks.
pub fn topk_oracle(sets: usize, seed: u64) -> Check {
    let mut rng = keyed_rng(seed, &[0x70]);
    let mut tied_sets = 0;
    for i in 0..sets {
        let n = rng.random_range(1..40);
        let k = rng.random_range(1..12);
        let levels = rng.random_range(1..8);
        let scores: Vec<f64> = (0..n)
            .map(|_| {
                if rng.random_bool(0.5) {
                    rng.random_range(0..levels) as f64
                } else {
                    rng.random_range(-5.0..5.0)
                }
            })
            .collect();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap().then(a.cmp(&b)));
        let mut expected: Vec<usize> = order.into_iter().take(k).collect();
        expected.sort_unstable();
        let got = select_topk(&scores, k);
        if got != expected {
            return Err(format!("set {i}: scores {scores:?} k={k}: got {got:?}, expected {expected:?}"));
        }
        let distinct: HashSet<u64> = scores.iter().map(|s| s.to_bits()).collect();
        if distinct.len() < n {
            tied_sets += 1;
        }
    }
    Ok(format!("{sets} score sets agree ({tied_sets} with ties)"))
}

/// Empirical mean of `x_t` at fixed `t` against `(1 - t) h + t t*`,
/// within `4 sigma / sqrt(n)` per coordinate.
pub fn path_mean_linearity(n: usize, seed: u64) -> Check {
    let sigma = 0.5;
    let mut rng = keyed_rng(seed, &[0x4c]);
    let h: Vec<f64> = (0..4).map(|_| rng.random_range(-2.0..2.0)).collect();
    let ts: Vec<f64> = (0..4).map(|_| rng.random_range(-2.0..2.0)).collect();
    let bound = 4.0 * sigma / (n as f64).sqrt();
    let mut worst = 0.0f64;
    for &t in &[0.0, 0.25, 0.5, 0.9, 1.0] {
        let mut mean = vec![0.0; h.len()];
        for _ in 0..n {
            let s = path_point(&h, &ts, sigma, t, &mut rng);
            for (m, x) in mean.iter_mut().zip(&s.x_t) {
                *m += x / n as f64;
            }
        }
        for i in 0..h.len() {
            let dev = (mean[i] - ((1.0 - t) * h[i] + t * ts[i])).abs();
            worst = worst.max(dev);
            if dev > bound {
                return Err(format!("t={t}, dim {i}: deviation {dev:.3e} > {bound:.3e}"));
            }
        }
    }
    Ok(format!("max deviation {worst:.2e} <= {bound:.2e} at N={n}"))
}

/// `Var(x_0) = Var(h*) + sigma^2` within 5% when heads are random.
pub fn boundary_variance(n: usize, seed: u64) -> Check {
    let sigma = 0.3;
    let spread = 0.8;
    let mut rng = keyed_rng(seed, &[0x56]);
    let (mut heads, mut xs) = (Vec::with_capacity(n), Vec::with_capacity(n));
    for _ in 0..n {
        let z: f64 = StandardNormal.sample(&mut rng);
        let h = spread * z + 0.4;
        let t: f64 = StandardNormal.sample(&mut rng);
        let s = path_point(&[h], &[t], sigma, 0.0, &mut rng);
        heads.push(h);
        xs.push(s.x_t[0]);
    }
    let var = |v: &[f64]| {
        let m = v.iter().sum::<f64>() / v.len() as f64;
        v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64
    };
    let expected = var(&heads) + sigma * sigma;
    let got = var(&xs);
    let rel = (got - expected).abs() / expected;
    if rel > 0.05 {
        return Err(format!("Var(x0) {got:.4} vs {expected:.4} (rel {rel:.3})"));
    }
    Ok(format!("Var(x0) {got:.4} vs Var(h*)+sigma^2 {expected:.4} (rel {rel:.4}) at N={n}"))
}

fn exhaustive_min(cost: &[f64], n: usize) -> f64 {
    fn go(cost: &[f64], n: usize, row: usize, used: &mut [bool], acc: f64, best: &mut f64) {
        if row == n {
            *best = best.min(acc);
            return;
        }
        for c in 0..n {
            if !used[c] {
                used[c] = true;
                go(cost, n, row + 1, used, acc + cost[row * n + c], best);
                used[c] = false;
            }
        }
    }
    let mut best = f64::INFINITY;
    go(cost, n, 0, &mut vec![false; n], 0.0, &mut best);
    best
}

/// Hungarian assignment and `ot_pair` against enumeration of all
/// permutations for every `n <= 7`.
pub fn ot_exhaustive(trials_per_n: usize, seed: u64) -> Check {
    let mut rng = keyed_rng(seed, &[0x4f]);
    for n in 1..=7 {
        for trial in 0..trials_per_n {
            let d = 3;
            let h: Vec<f64> = (0..n * d).map(|_| rng.random_range(-1.0..1.0)).collect();
            let mut t: Vec<f64> = (0..n * d).map(|_| rng.random_range(-1.0..1.0)).collect();
            if trial % 4 == 0 {
                // duplicated tails create tied optima
                let row: Vec<f64> = t[..d].to_vec();
                t[(n - 1) * d..].copy_from_slice(&row);
            }
            let cost: Vec<f64> = (0..n * n)
                .map(|k| {
                    let (i, j) = (k / n, k % n);
                    (0..d).map(|c| (h[i * d + c] - t[j * d + c]).powi(2)).sum()
                })
                .collect();
            let best = exhaustive_min(&cost, n);
            let assign = hungarian(&cost, n);
            let mut seen = assign.clone();
            seen.sort_unstable();
            if seen != (0..n).collect::<Vec<_>>() {
                return Err(format!("n={n}: {assign:?} is not a permutation"));
            }
            let got: f64 = assign.iter().enumerate().map(|(i, &j)| cost[i * n + j]).sum();
            let ht = Tensor::new(vec![n, d], h).unwrap();
            let tt = Tensor::new(vec![n, d], t).unwrap();
            let pi = ot_pair(&ht, &tt).map_err(|e| e.to_string())?;
            let via_pair: f64 = pi.iter().enumerate().map(|(i, &j)| cost[i * n + j]).sum();
            for c in [got, via_pair] {
                if (c - best).abs() > 1e-9 * best.max(1.0) {
                    return Err(format!("n={n}: assignment cost {c} vs exhaustive {best}"));
                }
            }
        }
    }
    Ok(format!("{} instances for n=1..7 match exhaustive search", 7 * trials_per_n))
}

fn toy_train_config(exec: Execution) -> TrainConfig {
    let mut cfg = TrainConfig {
        epochs: 3,
        batch_size: 4,
        seed: 7,
        exec,
        ..TrainConfig::default()
    };
    cfg.model.context = ContextConfig {
        dim: 8,
        heads: 2,
        neighbor_samples: 3,
        ..ContextConfig::default()
    };
    cfg
}

/// Two seeded runs give byte-identical checkpoints in each execution mode
/// and across modes; save, load and re-encode is byte-identical.
pub fn determinism(dir: &std::path::Path) -> Check {
    let ds = fixtures::family();
    let mut bytes = Vec::new();
    for exec in [Execution::Sequential, Execution::Sequential, Execution::Parallel] {
        for task in [Task::Relation, Task::Entity] {
            let mut cfg = toy_train_config(exec);
            cfg.model.task = task;
            cfg.negatives = 4;
            let out = train(&ds, &cfg, |_| {}).map_err(|e| e.to_string())?;
            bytes.push(checkpoint::encode(out.store.iter()).map_err(|e| e.to_string())?);
        }
    }
    for (i, b) in bytes.iter().enumerate().skip(2) {
        if *b != bytes[i % 2] {
            return Err(format!("run {i} checkpoint differs from the first run of the same task"));
        }
    }
    let path = dir.join("model.fms");
    let mut store = ParameterStore::<f32>::new();
    let cfg = toy_train_config(Execution::Sequential);
    Model::new(cfg.model, ds.num_relations(), &mut store, 0).map_err(|e| e.to_string())?;
    std::fs::write(&path, &bytes[0]).map_err(|e| e.to_string())?;
    checkpoint::load_into(&mut store, &path).map_err(|e| e.to_string())?;
    let again = dir.join("again.fms");
    checkpoint::save(&store, &again).map_err(|e| e.to_string())?;
    let reread = std::fs::read(&again).map_err(|e| e.to_string())?;
    if reread != bytes[0] {
        return Err("checkpoint round trip changed the bytes".into());
    }
    Ok(format!("{} runs bit-identical; round trip of {} bytes identical", bytes.len(), reread.len()))
}

/// Softmax rows of random logit matrices (f32 and f64, wide magnitude
/// range) sum to one within 1e-6.
pub fn softmax_rows(trials: usize, seed: u64) -> Check {
    let mut rng = keyed_rng(seed, &[0x53]);
    let mut worst = 0.0f64;
    for _ in 0..trials {
        let (r, c) = (rng.random_range(1..6), rng.random_range(1..60));
        let scale = 10f64.powi(rng.random_range(-3..3));
        let data: Vec<f64> = (0..r * c).map(|_| scale * rng.random_range(-50.0..50.0)).collect();
        let t64 = Tensor::new(vec![r, c], data.clone()).unwrap();
        let t32: Tensor<f32> = t64.cast();
        let p64 = probabilities(&t64);
        let p32 = probabilities(&t32);
        for i in 0..r {
            let s64: f64 = p64.row_slice(i).iter().sum();
            let s32: f64 = p32.row_slice(i).iter().map(|&x| f64::from(x)).sum();
            for s in [s64, s32] {
                worst = worst.max((s - 1.0).abs());
            }
        }
    }
    if worst > 1e-6 {
        return Err(format!("row sum off by {worst:.2e}"));
    }
    Ok(format!("{trials} matrices, max |row sum - 1| = {worst:.2e}"))
}

/// Metric invariants on fuzzed rank lists, plus monotonicity: improving
/// one rank never lowers MRR or any Hits@N.
pub fn metric_invariants(lists: usize, seed: u64) -> Check {
    let mut rng = keyed_rng(seed, &[0x4d]);
    for i in 0..lists {
        let n = rng.random_range(1..200);
        let max = rng.random_range(1..300);
        let ranks: Vec<usize> = (0..n).map(|_| rng.random_range(1..=max)).collect();
        let m = compute_metrics(&ranks).map_err(|e| e.to_string())?;
        let mrr: f64 = ranks.iter().map(|&r| 1.0 / r as f64).sum::<f64>() / n as f64;
        let hits = |k: usize| ranks.iter().filter(|&&r| r <= k).count() as f64 / n as f64;
        let ok = (m.mrr - mrr).abs() <= 1e-9
            && (m.hits1 - hits(1)).abs() <= 1e-9
            && (m.hits3 - hits(3)).abs() <= 1e-9
            && (m.hits10 - hits(10)).abs() <= 1e-9
            && m.hits1 <= m.hits3
            && m.hits3 <= m.hits10
            && m.hits10 <= 1.0
            && m.hits1 <= m.mrr
            && m.mrr <= 1.0
            && m.mrr > 0.0;
        if !ok {
            return Err(format!("list {i}: invariants violated by {m:?}"));
        }
        let j = rng.random_range(0..n);
        let mut better = ranks.clone();
        better[j] = rng.random_range(1..=ranks[j]);
        let b = compute_metrics(&better).map_err(|e| e.to_string())?;
        if b.mrr < m.mrr || b.hits1 < m.hits1 || b.hits3 < m.hits3 || b.hits10 < m.hits10 {
            return Err(format!("list {i}: improving rank {} to {} lowered a metric", ranks[j], better[j]));
        }
    }
    Ok(format!("{lists} fuzzed rank lists"))
}
