use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use super::vocab::Vocab;
use super::{KgError, Triple};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Transductive,
    Inductive,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Transductive => "transductive",
            Mode::Inductive => "inductive",
        }
    }
}

/// A triple still in string form, with its 1-based source line.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RawTriple {
    pub head: String,
    pub rel: String,
    pub tail: String,
    pub line: usize,
}

/// The unseen-entity graph of an inductive split: observed facts used as
/// context plus the query triples to rank.
#[derive(Clone, Debug)]
pub struct InductiveGraph {
    pub entities: Vocab,
    pub facts: Vec<Triple>,
    pub queries: Vec<Triple>,
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub name: String,
    pub mode: Mode,
    pub entities: Vocab,
    pub relations: Vocab,
    pub train: Vec<Triple>,
    pub valid: Vec<Triple>,
    pub test: Vec<Triple>,
    pub inductive: Option<InductiveGraph>,
}

impl Dataset {
    pub fn num_entities(&self) -> usize {
        self.entities.len()
    }

    pub fn num_relations(&self) -> usize {
        self.relations.len()
    }

    /// Builds a transductive dataset from in-memory string triples.
    pub fn from_raw(
        name: &str,
        train: &[RawTriple],
        valid: &[RawTriple],
        test: &[RawTriple],
    ) -> Self {
        let mut entities = Vocab::new();
        let mut relations = Vocab::new();
        let train = intern_split(train, &mut entities, &mut relations);
        let valid = intern_split(valid, &mut entities, &mut relations);
        let test = intern_split(test, &mut entities, &mut relations);
        Self {
            name: name.to_string(),
            mode: Mode::Transductive,
            entities,
            relations,
            train,
            valid,
            test,
            inductive: None,
        }
    }
}

/// Parses `head<TAB>relation<TAB>tail` lines. Blank lines are skipped.
pub fn parse_triples(text: &str, path: &Path) -> Result<Vec<RawTriple>, KgError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.strip_suffix('\r').unwrap_or(line);
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(KgError::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                found: fields.len(),
            });
        }
        out.push(RawTriple {
            head: fields[0].to_string(),
            rel: fields[1].to_string(),
            tail: fields[2].to_string(),
            line: i + 1,
        });
    }
    Ok(out)
}

fn read_split(path: &Path) -> Result<Vec<RawTriple>, KgError> {
    let text = fs::read_to_string(path).map_err(|source| KgError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let triples = parse_triples(&text, path)?;
    if triples.is_empty() {
        return Err(KgError::EmptySplit(path.to_path_buf()));
    }
    Ok(triples)
}

fn intern_split(raw: &[RawTriple], entities: &mut Vocab, relations: &mut Vocab) -> Vec<Triple> {
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(raw.len());
    for r in raw {
        let head = entities.intern(&r.head);
        let rel = relations.intern(&r.rel);
        let tail = entities.intern(&r.tail);
        let t = Triple { head, rel, tail };
        if seen.insert(t) {
            out.push(t);
        }
    }
    out
}

fn dataset_name(dir: &Path) -> String {
    dir.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| dir.display().to_string())
}

/// Loads `train.txt`, `valid.txt` and `test.txt` from `dir`.
///
/// Transductive vocabularies cover the union of the three splits. In
/// inductive mode `dir` is the training graph (`<ds>/v<k>`) and the sibling
/// `<dir>_ind` holds the unseen-entity graph (`train.txt` facts and
/// `test.txt` queries) with its own entity vocabulary; its relations must
/// already exist in the training graph.
pub fn load_dataset(dir: &Path, mode: Mode) -> Result<Dataset, KgError> {
    let train = read_split(&dir.join("train.txt"))?;
    let valid = read_split(&dir.join("valid.txt"))?;
    let test = read_split(&dir.join("test.txt"))?;
    let mut ds = Dataset::from_raw(&dataset_name(dir), &train, &valid, &test);
    ds.mode = mode;
    if mode == Mode::Inductive {
        let mut ind_dir: PathBuf = dir.to_path_buf().into_os_string().into();
        ind_dir.as_mut_os_string().push("_ind");
        ds.inductive = Some(load_inductive_graph(&ind_dir, &ds.relations)?);
    }
    Ok(ds)
}

fn load_inductive_graph(dir: &Path, relations: &Vocab) -> Result<InductiveGraph, KgError> {
    let facts_path = dir.join("train.txt");
    let queries_path = dir.join("test.txt");
    let facts = read_split(&facts_path)?;
    let queries = read_split(&queries_path)?;
    let mut entities = Vocab::new();
    let mut convert = |raw: &[RawTriple], path: &Path| -> Result<Vec<Triple>, KgError> {
        let mut seen = HashSet::new();
        let mut out = Vec::with_capacity(raw.len());
        for r in raw {
            let rel = relations.get(&r.rel).ok_or_else(|| KgError::UnknownRelation {
                path: path.to_path_buf(),
                line: r.line,
                relation: r.rel.clone(),
            })?;
            let t = Triple {
                head: entities.intern(&r.head),
                rel,
                tail: entities.intern(&r.tail),
            };
            if seen.insert(t) {
                out.push(t);
            }
        }
        Ok(out)
    };
    let facts = convert(&facts, &facts_path)?;
    let queries = convert(&queries, &queries_path)?;
    Ok(InductiveGraph {
        entities,
        facts,
        queries,
    })
}
