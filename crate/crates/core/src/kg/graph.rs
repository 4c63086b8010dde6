use std::collections::HashMap;

use super::{KgError, Triple};

pub type EdgeId = usize;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Direction {
    Outgoing,
    Incoming,
}

/// One entry of an entity's incidence list.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Incidence {
    pub edge: EdgeId,
    pub rel: usize,
    pub other: usize,
    pub direction: Direction,
}

/// Immutable indexed triple store. Edge ids are positions in the input list.
#[derive(Clone, Debug)]
pub struct KnowledgeGraph {
    num_entities: usize,
    num_relations: usize,
    edges: Vec<Triple>,
    incidence: Vec<Vec<Incidence>>,
    // unordered endpoint pair -> edge ids
    by_pair: HashMap<(usize, usize), Vec<EdgeId>>,
}

fn pair_key(a: usize, b: usize) -> (usize, usize) {
    if a <= b {
        (a, b)
    } else {
        (b, a)
    }
}

impl KnowledgeGraph {
    pub fn build(
        triples: &[Triple],
        num_entities: usize,
        num_relations: usize,
    ) -> Result<Self, KgError> {
        let mut incidence = vec![Vec::new(); num_entities];
        let mut by_pair: HashMap<(usize, usize), Vec<EdgeId>> = HashMap::new();
        for (id, t) in triples.iter().enumerate() {
            if t.head >= num_entities || t.tail >= num_entities || t.rel >= num_relations {
                return Err(KgError::OutOfRange {
                    index: id,
                    triple: *t,
                    entities: num_entities,
                    relations: num_relations,
                });
            }
            incidence[t.head].push(Incidence {
                edge: id,
                rel: t.rel,
                other: t.tail,
                direction: Direction::Outgoing,
            });
            incidence[t.tail].push(Incidence {
                edge: id,
                rel: t.rel,
                other: t.head,
                direction: Direction::Incoming,
            });
            by_pair.entry(pair_key(t.head, t.tail)).or_default().push(id);
        }
        Ok(Self {
            num_entities,
            num_relations,
            edges: triples.to_vec(),
            incidence,
            by_pair,
        })
    }

    pub fn num_entities(&self) -> usize {
        self.num_entities
    }

    pub fn num_relations(&self) -> usize {
        self.num_relations
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[Triple] {
        &self.edges
    }

    pub fn edge(&self, id: EdgeId) -> Triple {
        self.edges[id]
    }

    /// Incidence list of `entity`, sorted by edge id.
    pub fn incidence(&self, entity: usize) -> &[Incidence] {
        &self.incidence[entity]
    }

    /// Edge ids joining `a` and `b` in either direction.
    pub fn edges_between(&self, a: usize, b: usize) -> &[EdgeId] {
        self.by_pair
            .get(&pair_key(a, b))
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    /// Edges with the same unordered endpoint pair and relation as `t`.
    pub fn edges_matching(&self, t: Triple) -> Vec<EdgeId> {
        self.edges_between(t.head, t.tail)
            .iter()
            .copied()
            .filter(|&e| self.edges[e].rel == t.rel)
            .collect()
    }

    /// Relations present between `a` and `b`, either direction, sorted.
    pub fn relations_between(&self, a: usize, b: usize) -> Vec<usize> {
        let mut rels: Vec<usize> = self
            .edges_between(a, b)
            .iter()
            .map(|&e| self.edges[e].rel)
            .collect();
        rels.sort_unstable();
        rels.dedup();
        rels
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn middle_node_has_two_entries() {
        let g = KnowledgeGraph::build(&[Triple::new(0, 0, 1), Triple::new(1, 1, 2)], 3, 2).unwrap();
        let inc = g.incidence(1);
        assert_eq!(inc.len(), 2);
        assert_eq!(inc[0].direction, Direction::Incoming);
        assert_eq!(inc[1].direction, Direction::Outgoing);
    }

    #[test]
    fn empty_graph() {
        let g = KnowledgeGraph::build(&[], 4, 1).unwrap();
        assert!((0..4).all(|e| g.incidence(e).is_empty()));
    }

    #[test]
    fn self_loop_listed_twice() {
        let g = KnowledgeGraph::build(&[Triple::new(0, 0, 0)], 1, 1).unwrap();
        let inc = g.incidence(0);
        assert_eq!(inc.len(), 2);
        assert!(inc.iter().all(|i| i.edge == 0));
    }

    #[test]
    fn out_of_range_rejected() {
        let err = KnowledgeGraph::build(&[Triple::new(0, 0, 5)], 3, 1).unwrap_err();
        assert!(matches!(err, KgError::OutOfRange { index: 0, .. }));
        let err = KnowledgeGraph::build(&[Triple::new(0, 2, 1)], 3, 1).unwrap_err();
        assert!(matches!(err, KgError::OutOfRange { .. }));
    }

    #[test]
    fn duplicates_found_in_both_directions() {
        let triples = [
            Triple::new(0, 0, 1),
            Triple::new(1, 0, 0),
            Triple::new(0, 1, 1),
        ];
        let g = KnowledgeGraph::build(&triples, 2, 2).unwrap();
        assert_eq!(g.edges_matching(Triple::new(0, 0, 1)), vec![0, 1]);
        assert_eq!(g.relations_between(1, 0), vec![0, 1]);
    }
}
