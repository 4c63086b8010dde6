//! Filtered ranking evaluation for relation and entity prediction.

mod category;
mod metrics;

pub use category::{categorize_relations, Category, DEFAULT_CATEGORY_THRESHOLD};
pub use metrics::{compute_metrics, Metrics, MetricsReport, RankingReport};

use std::collections::{BTreeMap, HashMap, HashSet};

use rand::seq::index;
use thiserror::Error;

use crate::exec::{self, Execution};
use crate::kg::Triple;
use crate::rng::keyed_rng;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no queries to evaluate")]
    Empty,
    #[error("scorer returned {found} scores, expected {expected}")]
    ScoreCount { expected: usize, found: usize },
    #[error("scoring failed: {0}")]
    Scorer(String),
}

/// Which endpoint of an entity query is hidden.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum QuerySide {
    /// `(?, r, t)`
    Head,
    /// `(h, r, ?)`
    Tail,
}

/// Known true facts used to filter competing candidates.
#[derive(Clone, Debug, Default)]
pub struct FilterIndex {
    pair_rels: HashMap<(usize, usize), HashSet<usize>>,
    hr_tails: HashMap<(usize, usize), HashSet<usize>>,
    rt_heads: HashMap<(usize, usize), HashSet<usize>>,
}

impl FilterIndex {
    pub fn new<'a>(splits: impl IntoIterator<Item = &'a [Triple]>) -> Self {
        let mut f = Self::default();
        for split in splits {
            for t in split {
                f.insert(*t);
            }
        }
        f
    }

    pub fn insert(&mut self, t: Triple) {
        self.pair_rels.entry((t.head, t.tail)).or_default().insert(t.rel);
        self.hr_tails.entry((t.head, t.rel)).or_default().insert(t.tail);
        self.rt_heads.entry((t.rel, t.tail)).or_default().insert(t.head);
    }

    pub fn contains(&self, t: Triple) -> bool {
        self.pair_rels
            .get(&(t.head, t.tail))
            .is_some_and(|s| s.contains(&t.rel))
    }

    /// Relations known to hold from `h` to `t`.
    pub fn relations(&self, h: usize, t: usize) -> Option<&HashSet<usize>> {
        self.pair_rels.get(&(h, t))
    }

    pub fn tails(&self, h: usize, r: usize) -> Option<&HashSet<usize>> {
        self.hr_tails.get(&(h, r))
    }

    pub fn heads(&self, r: usize, t: usize) -> Option<&HashSet<usize>> {
        self.rt_heads.get(&(r, t))
    }

    /// True answers of the entity query hiding `side` of `q`.
    pub fn answers(&self, q: Triple, side: QuerySide) -> Option<&HashSet<usize>> {
        match side {
            QuerySide::Tail => self.tails(q.head, q.rel),
            QuerySide::Head => self.heads(q.rel, q.tail),
        }
    }
}

/// `1 + #{j != truth : !filtered(j) && scores[j] >= scores[truth]}`.
///
/// Ties count against the ground truth. A non-finite truth score ranks last.
pub fn filtered_rank(scores: &[f64], truth: usize, filtered: impl Fn(usize) -> bool) -> usize {
    let s = scores[truth];
    1 + scores
        .iter()
        .enumerate()
        .filter(|&(j, &x)| j != truth && !filtered(j) && (x >= s || s.is_nan()))
        .count()
}

/// Filtered rank of `q.rel` among all relations for the pair `(q.head, q.tail)`.
pub fn rank_relation_query(scores: &[f64], q: Triple, filter: &FilterIndex) -> usize {
    let others = filter.relations(q.head, q.tail);
    filtered_rank(scores, q.rel, |j| others.is_some_and(|s| s.contains(&j)))
}

/// Filtered rank of the hidden entity given scores aligned with `candidates`.
pub fn rank_entity_query(
    scores: &[f64],
    candidates: &[usize],
    q: Triple,
    side: QuerySide,
    filter: &FilterIndex,
) -> Option<usize> {
    let truth_entity = hidden(q, side);
    let truth = candidates.iter().position(|&c| c == truth_entity)?;
    let answers = filter.answers(q, side);
    Some(filtered_rank(scores, truth, |j| {
        answers.is_some_and(|a| a.contains(&candidates[j]))
    }))
}

fn hidden(q: Triple, side: QuerySide) -> usize {
    match side {
        QuerySide::Head => q.head,
        QuerySide::Tail => q.tail,
    }
}

/// Scores every relation for each `(head, tail)` of `queries`.
pub trait RelationScorer: Sync {
    fn score_relations(&self, queries: &[Triple]) -> Result<Vec<Vec<f64>>, EvalError>;
}

/// Scores candidate entities for the hidden side of a query.
pub trait EntityScorer: Sync {
    fn score_entities(
        &self,
        query: Triple,
        side: QuerySide,
        candidates: &[usize],
    ) -> Result<Vec<f64>, EvalError>;
}

#[derive(Clone, Copy, Debug)]
pub struct EvalOptions<'a> {
    pub exec: Execution,
    /// Queries per scorer call (relation task).
    pub chunk: usize,
    /// Relation categories for the per-category breakdown.
    pub categories: Option<&'a [Category]>,
}

impl Default for EvalOptions<'_> {
    fn default() -> Self {
        Self {
            exec: Execution::Parallel,
            chunk: 64,
            categories: None,
        }
    }
}

/// Relation prediction over `queries`. With categories, the report also
/// carries one sub-report per category and a `multi_relation` sub-report
/// for pairs linked by two or more known relations.
pub fn evaluate_relations<S: RelationScorer + ?Sized>(
    scorer: &S,
    queries: &[Triple],
    filter: &FilterIndex,
    opts: EvalOptions<'_>,
) -> Result<RankingReport, EvalError> {
    if queries.is_empty() {
        return Err(EvalError::Empty);
    }
    let chunks = exec::map_chunks(opts.exec, queries, opts.chunk, |chunk| {
        let scores = scorer.score_relations(chunk)?;
        if scores.len() != chunk.len() {
            return Err(EvalError::ScoreCount {
                expected: chunk.len(),
                found: scores.len(),
            });
        }
        Ok(chunk
            .iter()
            .zip(&scores)
            .map(|(q, s)| rank_relation_query(s, *q, filter))
            .collect::<Vec<_>>())
    });
    let mut ranks = Vec::with_capacity(queries.len());
    for c in chunks {
        ranks.extend(c?);
    }
    let mut groups: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    if let Some(cats) = opts.categories {
        for (q, &r) in queries.iter().zip(&ranks) {
            groups.entry(cats[q.rel].as_str().to_string()).or_default().push(r);
            if filter.relations(q.head, q.tail).is_some_and(|s| s.len() >= 2) {
                groups.entry("multi_relation".into()).or_default().push(r);
            }
        }
    }
    RankingReport::new(ranks, groups)
}

/// Candidate list for one entity query: every entity when there are at
/// most `cap`, otherwise the truth plus `cap - 1` entities drawn uniformly
/// from those that are not known answers.
pub fn entity_candidates(
    q: Triple,
    side: QuerySide,
    filter: &FilterIndex,
    num_entities: usize,
    cap: usize,
    seed: u64,
) -> Vec<usize> {
    if num_entities <= cap {
        return (0..num_entities).collect();
    }
    let truth = hidden(q, side);
    let answers = filter.answers(q, side);
    let pool: Vec<usize> = (0..num_entities)
        .filter(|&e| e != truth && !answers.is_some_and(|a| a.contains(&e)))
        .collect();
    let side_key = matches!(side, QuerySide::Head) as u64;
    let mut rng = keyed_rng(
        seed,
        &[q.head as u64, q.rel as u64, q.tail as u64, side_key],
    );
    let k = cap.saturating_sub(1).min(pool.len());
    let mut out = vec![truth];
    let mut picks = index::sample(&mut rng, pool.len(), k).into_vec();
    picks.sort_unstable();
    out.extend(picks.into_iter().map(|i| pool[i]));
    out
}

/// Entity prediction: every query of `queries` is asked once per side.
pub fn evaluate_entities<S: EntityScorer + ?Sized>(
    scorer: &S,
    queries: &[Triple],
    filter: &FilterIndex,
    num_entities: usize,
    candidate_cap: usize,
    seed: u64,
    opts: EvalOptions<'_>,
) -> Result<RankingReport, EvalError> {
    if queries.is_empty() {
        return Err(EvalError::Empty);
    }
    let asks: Vec<(Triple, QuerySide)> = queries
        .iter()
        .flat_map(|&q| [(q, QuerySide::Tail), (q, QuerySide::Head)])
        .collect();
    let ranks = exec::map(opts.exec, &asks, |&(q, side)| {
        let cands = entity_candidates(q, side, filter, num_entities, candidate_cap, seed);
        let scores = scorer.score_entities(q, side, &cands)?;
        if scores.len() != cands.len() {
            return Err(EvalError::ScoreCount {
                expected: cands.len(),
                found: scores.len(),
            });
        }
        rank_entity_query(&scores, &cands, q, side, filter)
            .ok_or_else(|| EvalError::Scorer("ground truth missing from candidates".into()))
    });
    let ranks = ranks.into_iter().collect::<Result<Vec<_>, _>>()?;
    let mut groups: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    if let Some(cats) = opts.categories {
        for ((q, side), &r) in asks.iter().zip(&ranks) {
            let side = match side {
                QuerySide::Head => "head",
                QuerySide::Tail => "tail",
            };
            let cat = cats[q.rel].as_str();
            groups.entry(cat.to_string()).or_default().push(r);
            groups.entry(format!("{cat}/{side}")).or_default().push(r);
        }
    }
    RankingReport::new(ranks, groups)
}
