use std::sync::Arc;

use crate::kg::ContextSubgraph;

/// Several subgraphs merged into one edge list so a whole batch propagates
/// through each layer with a single set of matrix products.
#[derive(Clone, Debug, Default)]
pub struct ContextBatch {
    /// Relation of every merged edge.
    pub rels: Vec<usize>,
    /// Neighbour positions in merged indexing.
    pub neighbors: Vec<Vec<usize>>,
    /// Query pair owning each merged edge.
    pub owner: Vec<(usize, usize)>,
    /// Position of each edge inside its own subgraph.
    pub local: Vec<usize>,
    /// Per subgraph, merged positions of the edges touching its head / tail.
    pub head_incident: Arc<Vec<Vec<usize>>>,
    pub tail_incident: Arc<Vec<Vec<usize>>>,
}

impl ContextBatch {
    pub fn new(subgraphs: &[ContextSubgraph]) -> Self {
        let total: usize = subgraphs.iter().map(ContextSubgraph::len).sum();
        let mut b = Self {
            rels: Vec::with_capacity(total),
            neighbors: Vec::with_capacity(total),
            owner: Vec::with_capacity(total),
            local: Vec::with_capacity(total),
            ..Self::default()
        };
        let mut heads = Vec::with_capacity(subgraphs.len());
        let mut tails = Vec::with_capacity(subgraphs.len());
        for sg in subgraphs {
            let off = b.rels.len();
            for (i, e) in sg.edges.iter().enumerate() {
                b.rels.push(e.rel);
                b.owner.push(sg.query);
                b.local.push(i);
                b.neighbors
                    .push(sg.edge_neighbors[i].iter().map(|&j| j + off).collect());
            }
            heads.push(sg.incident_of_head.iter().map(|&j| j + off).collect());
            tails.push(sg.incident_of_tail.iter().map(|&j| j + off).collect());
        }
        b.head_incident = Arc::new(heads);
        b.tail_incident = Arc::new(tails);
        b
    }

    pub fn num_edges(&self) -> usize {
        self.rels.len()
    }

    pub fn num_subgraphs(&self) -> usize {
        self.head_incident.len()
    }
}
