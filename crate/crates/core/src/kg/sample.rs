use std::collections::{BTreeSet, HashMap};

use rand::seq::index;

use super::graph::{EdgeId, KnowledgeGraph};
use super::KgError;
use crate::rng::keyed_rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SamplingConfig {
    pub hops: usize,
    pub neighbor_samples: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct SampledEdge {
    pub edge: EdgeId,
    pub rel: usize,
    pub head: usize,
    pub tail: usize,
}

impl SampledEdge {
    pub fn touches(&self, entity: usize) -> bool {
        self.head == entity || self.tail == entity
    }
}

/// Sampled multi-hop edge neighbourhood of a query pair.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ContextSubgraph {
    pub query: (usize, usize),
    pub edges: Vec<SampledEdge>,
    /// Positions (into `edges`) of other sampled edges sharing an endpoint.
    pub edge_neighbors: Vec<Vec<usize>>,
    pub incident_of_head: Vec<usize>,
    pub incident_of_tail: Vec<usize>,
    /// Sorted edge ids that were never eligible.
    pub excluded: Vec<EdgeId>,
}

impl ContextSubgraph {
    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    /// Subgraph over an explicit edge list, with neighbour and incidence
    /// lists derived from shared endpoints.
    pub fn from_edges(query: (usize, usize), edges: Vec<SampledEdge>, excluded: Vec<EdgeId>) -> Self {
        let mut at_node: HashMap<usize, Vec<usize>> = HashMap::new();
        for (i, e) in edges.iter().enumerate() {
            at_node.entry(e.head).or_default().push(i);
            if e.tail != e.head {
                at_node.entry(e.tail).or_default().push(i);
            }
        }
        let edge_neighbors = edges
            .iter()
            .enumerate()
            .map(|(i, e)| {
                let mut n: Vec<usize> = at_node[&e.head].clone();
                if e.tail != e.head {
                    n.extend_from_slice(&at_node[&e.tail]);
                }
                n.sort_unstable();
                n.dedup();
                n.retain(|&j| j != i);
                n
            })
            .collect();
        let incident = |x: usize| at_node.get(&x).cloned().unwrap_or_default();
        Self {
            query,
            incident_of_head: incident(query.0),
            incident_of_tail: incident(query.1),
            edges,
            edge_neighbors,
            excluded,
        }
    }
}

/// Breadth-first neighbourhood sampling around `{head, tail}`.
///
/// Each frontier node draws `min(neighbor_samples, available)` of its
/// non-excluded incident edges uniformly without replacement from a stream
/// keyed by `(seed, node, hop)`. Endpoints reached for the first time form
/// the next frontier.
pub fn sample_context(
    graph: &KnowledgeGraph,
    head: usize,
    tail: usize,
    config: SamplingConfig,
    excluded: &[EdgeId],
    seed: u64,
) -> Result<ContextSubgraph, KgError> {
    if config.hops == 0 {
        return Err(KgError::Config("hops must be at least 1".into()));
    }
    if config.neighbor_samples == 0 {
        return Err(KgError::Config("neighbor_samples must be at least 1".into()));
    }
    for e in [head, tail] {
        if e >= graph.num_entities() {
            return Err(KgError::UnknownEntity {
                entity: e,
                entities: graph.num_entities(),
            });
        }
    }
    let mut excluded = excluded.to_vec();
    excluded.sort_unstable();
    excluded.dedup();

    let mut visited: BTreeSet<usize> = [head, tail].into_iter().collect();
    let mut frontier: Vec<usize> = visited.iter().copied().collect();
    let mut chosen: Vec<EdgeId> = Vec::new();
    let mut in_set: std::collections::HashSet<EdgeId> = Default::default();
    let mut available: Vec<EdgeId> = Vec::new();

    for hop in 0..config.hops {
        let mut next = BTreeSet::new();
        for &node in &frontier {
            available.clear();
            for inc in graph.incidence(node) {
                if excluded.binary_search(&inc.edge).is_err() && available.last() != Some(&inc.edge) {
                    available.push(inc.edge);
                }
            }
            let k = config.neighbor_samples.min(available.len());
            let mut picks: Vec<usize> = if k == available.len() {
                (0..k).collect()
            } else {
                let mut rng = keyed_rng(seed, &[node as u64, hop as u64]);
                index::sample(&mut rng, available.len(), k).into_vec()
            };
            picks.sort_unstable();
            for p in picks {
                let e = available[p];
                let t = graph.edge(e);
                let other = if t.head == node { t.tail } else { t.head };
                if !visited.contains(&other) {
                    next.insert(other);
                }
                if in_set.insert(e) {
                    chosen.push(e);
                }
            }
        }
        visited.extend(next.iter().copied());
        frontier = next.into_iter().collect();
        if frontier.is_empty() {
            break;
        }
    }

    let edges = chosen
        .into_iter()
        .map(|e| {
            let t = graph.edge(e);
            SampledEdge {
                edge: e,
                rel: t.rel,
                head: t.head,
                tail: t.tail,
            }
        })
        .collect();
    Ok(ContextSubgraph::from_edges((head, tail), edges, excluded))
}
