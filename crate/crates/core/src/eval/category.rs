use std::collections::{HashMap, HashSet};

use crate::kg::Triple;

pub const DEFAULT_CATEGORY_THRESHOLD: f64 = 1.5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Category {
    OneToOne,
    OneToMany,
    ManyToOne,
    ManyToMany,
}

impl Category {
    pub fn as_str(self) -> &'static str {
        match self {
            Category::OneToOne => "1-1",
            Category::OneToMany => "1-N",
            Category::ManyToOne => "N-1",
            Category::ManyToMany => "N-N",
        }
    }

    pub const ALL: [Category; 4] = [
        Category::OneToOne,
        Category::OneToMany,
        Category::ManyToOne,
        Category::ManyToMany,
    ];
}

/// Classifies every relation by its average tails per head (`tph`) and
/// heads per tail (`hpt`) in `triples`. Relations absent from `triples`
/// count as 1-1.
pub fn categorize_relations(triples: &[Triple], num_relations: usize, threshold: f64) -> Vec<Category> {
    let mut by_head: Vec<HashMap<usize, HashSet<usize>>> = vec![HashMap::new(); num_relations];
    let mut by_tail: Vec<HashMap<usize, HashSet<usize>>> = vec![HashMap::new(); num_relations];
    for t in triples {
        by_head[t.rel].entry(t.head).or_default().insert(t.tail);
        by_tail[t.rel].entry(t.tail).or_default().insert(t.head);
    }
    let avg = |m: &HashMap<usize, HashSet<usize>>| {
        if m.is_empty() {
            0.0
        } else {
            m.values().map(HashSet::len).sum::<usize>() as f64 / m.len() as f64
        }
    };
    (0..num_relations)
        .map(|r| {
            let tph = avg(&by_head[r]);
            let hpt = avg(&by_tail[r]);
            match (tph >= threshold, hpt >= threshold) {
                (false, false) => Category::OneToOne,
                (true, false) => Category::OneToMany,
                (false, true) => Category::ManyToOne,
                (true, true) => Category::ManyToMany,
            }
        })
        .collect()
}
