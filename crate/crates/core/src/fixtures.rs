//! Small synthetic graphs for examples, tests and benchmarks.

use std::fs;
use std::io;
use std::path::Path;

use rand::Rng;

use crate::kg::{Dataset, RawTriple, Triple};
use crate::rng::keyed_rng;

fn raw(h: usize, r: usize, t: usize) -> RawTriple {
    RawTriple {
        head: format!("e{h}"),
        rel: format!("r{r}"),
        tail: format!("e{t}"),
        line: 0,
    }
}

/// A family tree over nine people with `parent_of` (r0), `child_of` (r1)
/// and `sibling_of` (r2). Every held-out triple has its inverse or
/// symmetric counterpart in training, so the relation is recoverable from
/// context. 16 training, 4 validation and 4 test triples.
pub fn family() -> Dataset {
    let parents = [(0, 1), (0, 2), (1, 3), (1, 4), (2, 5), (2, 6), (3, 7), (4, 8)];
    let siblings = [(1, 2), (3, 4), (5, 6), (7, 8)];
    let mut all = Vec::new();
    for &(p, c) in &parents {
        all.push((p, 0, c));
        all.push((c, 1, p));
    }
    for &(a, b) in &siblings {
        all.push((a, 2, b));
        all.push((b, 2, a));
    }
    let valid = [(0, 0, 1), (5, 1, 2), (4, 2, 3), (8, 1, 4)];
    let test = [(2, 0, 6), (7, 1, 3), (6, 2, 5), (1, 0, 4)];
    let train: Vec<RawTriple> = all
        .iter()
        .filter(|t| !valid.contains(t) && !test.contains(t))
        .map(|&(h, r, t)| raw(h, r, t))
        .collect();
    let to_raw = |s: &[(usize, usize, usize)]| s.iter().map(|&(h, r, t)| raw(h, r, t)).collect::<Vec<_>>();
    Dataset::from_raw("family", &train, &to_raw(&valid), &to_raw(&test))
}

/// Random graph with `num_triples` distinct triples over `entities`
/// entities and `relations` relations, split 80/10/10 in order.
pub fn random(num_triples: usize, entities: usize, relations: usize, seed: u64) -> Dataset {
    let mut rng = keyed_rng(seed, &[0x52_4e_44]);
    let mut seen = std::collections::HashSet::new();
    let mut triples = Vec::with_capacity(num_triples);
    let max = entities * entities * relations;
    while triples.len() < num_triples.min(max) {
        let t = (
            rng.random_range(0..entities),
            rng.random_range(0..relations),
            rng.random_range(0..entities),
        );
        if seen.insert(t) {
            triples.push(raw(t.0, t.1, t.2));
        }
    }
    let n = triples.len();
    let (n_valid, n_test) = ((n / 10).max(1), (n / 10).max(1));
    let n_train = n - n_valid - n_test;
    Dataset::from_raw(
        "random",
        &triples[..n_train],
        &triples[n_train..n_train + n_valid],
        &triples[n_train + n_valid..],
    )
}

/// Writes `train.txt`, `valid.txt` and `test.txt` in the tab-separated
/// layout read by [`crate::kg::load_dataset`].
pub fn write_splits(ds: &Dataset, dir: &Path) -> io::Result<()> {
    fs::create_dir_all(dir)?;
    let name = |v: &crate::kg::Vocab, i: usize| v.name(i).unwrap_or_default().to_string();
    for (file, split) in [("train.txt", &ds.train), ("valid.txt", &ds.valid), ("test.txt", &ds.test)] {
        let text: String = split
            .iter()
            .map(|t: &Triple| {
                format!(
                    "{}\t{}\t{}\n",
                    name(&ds.entities, t.head),
                    name(&ds.relations, t.rel),
                    name(&ds.entities, t.tail)
                )
            })
            .collect();
        fs::write(dir.join(file), text)?;
    }
    Ok(())
}
