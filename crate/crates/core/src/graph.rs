//! Triple files, entity/relation dictionaries and train/valid/test splits.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;

use log::warn;

use crate::error::{KgError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct EntityId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RelationId(pub u32);

impl EntityId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl RelationId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl From<usize> for EntityId {
    fn from(i: usize) -> Self {
        EntityId(i as u32)
    }
}

impl From<usize> for RelationId {
    fn from(i: usize) -> Self {
        RelationId(i as u32)
    }
}

/// A directed, labelled edge `(head, relation, tail)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Triple {
    pub head: EntityId,
    pub relation: RelationId,
    pub tail: EntityId,
}

impl Triple {
    pub fn new(head: usize, relation: usize, tail: usize) -> Self {
        Triple {
            head: EntityId::from(head),
            relation: RelationId::from(relation),
            tail: EntityId::from(tail),
        }
    }

    pub fn is_self_loop(&self) -> bool {
        self.head == self.tail
    }
}

impl fmt::Display for Triple {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {})", self.head.0, self.relation.0, self.tail.0)
    }
}

/// Bijection between names and dense ids `0..len`, in first-insertion order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Vocab {
    names: Vec<String>,
    ids: HashMap<String, u32>,
}

impl Vocab {
    pub fn get_or_insert(&mut self, name: &str) -> u32 {
        if let Some(&id) = self.ids.get(name) {
            return id;
        }
        let id = self.names.len() as u32;
        self.names.push(name.to_owned());
        self.ids.insert(name.to_owned(), id);
        id
    }

    pub fn id(&self, name: &str) -> Option<u32> {
        self.ids.get(name).copied()
    }

    pub fn name(&self, id: u32) -> Option<&str> {
        self.names.get(id as usize).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    /// `id<TAB>name` per line.
    pub fn write_tsv(&self, mut out: impl Write) -> std::io::Result<()> {
        for (id, name) in self.names.iter().enumerate() {
            writeln!(out, "{id}\t{name}")?;
        }
        Ok(())
    }

    fn synthetic(prefix: &str, n: usize) -> Self {
        let mut v = Vocab::default();
        for i in 0..n {
            v.get_or_insert(&format!("{prefix}{i}"));
        }
        v
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Valid, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }
}

/// Lines dropped while ingesting, per split.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LoadReport {
    pub self_loops: [usize; 3],
    pub train_duplicates: usize,
}

impl LoadReport {
    pub fn self_loops_in(&self, split: Split) -> usize {
        self.self_loops[split as usize]
    }
}

/// Immutable knowledge graph with dense ids and three splits.
///
/// The training split never holds duplicates and no split holds a self-loop.
#[derive(Debug, Clone)]
pub struct KnowledgeGraph {
    entities: Vocab,
    relations: Vocab,
    train: Vec<Triple>,
    valid: Vec<Triple>,
    test: Vec<Triple>,
    train_index: HashSet<Triple>,
    report: LoadReport,
}

impl KnowledgeGraph {
    /// Builds a graph from name triples. Ids are assigned in first-appearance
    /// order over train, then valid, then test.
    pub fn from_named<S: AsRef<str>>(
        train: &[[S; 3]],
        valid: &[[S; 3]],
        test: &[[S; 3]],
    ) -> Self {
        let mut entities = Vocab::default();
        let mut relations = Vocab::default();
        let mut report = LoadReport::default();
        let mut splits: [Vec<Triple>; 3] = Default::default();
        for (s, rows) in [train, valid, test].into_iter().enumerate() {
            for [h, r, t] in rows {
                let h = entities.get_or_insert(h.as_ref().trim());
                let r = relations.get_or_insert(r.as_ref().trim());
                let t = entities.get_or_insert(t.as_ref().trim());
                let triple = Triple {
                    head: EntityId(h),
                    relation: RelationId(r),
                    tail: EntityId(t),
                };
                if triple.is_self_loop() {
                    report.self_loops[s] += 1;
                    continue;
                }
                splits[s].push(triple);
            }
        }
        let [train, valid, test] = splits;
        Self::assemble(entities, relations, train, valid, test, report)
    }

    /// Builds a graph directly from ids, naming entities `e{i}` and relations
    /// `r{j}`. Self-loops are dropped and train duplicates removed; an empty
    /// training split is allowed here.
    pub fn from_ids(
        n_entities: usize,
        n_relations: usize,
        train: Vec<Triple>,
        valid: Vec<Triple>,
        test: Vec<Triple>,
    ) -> Result<Self> {
        for t in train.iter().chain(&valid).chain(&test) {
            if t.head.index() >= n_entities || t.tail.index() >= n_entities {
                return Err(KgError::InvalidParam(format!(
                    "triple {t} references an entity outside 0..{n_entities}"
                )));
            }
            if t.relation.index() >= n_relations {
                return Err(KgError::InvalidParam(format!(
                    "triple {t} references a relation outside 0..{n_relations}"
                )));
            }
        }
        let mut report = LoadReport::default();
        let mut splits = [train, valid, test];
        for (s, split) in splits.iter_mut().enumerate() {
            let before = split.len();
            split.retain(|t| !t.is_self_loop());
            report.self_loops[s] = before - split.len();
        }
        let [train, valid, test] = splits;
        Ok(Self::assemble(
            Vocab::synthetic("e", n_entities),
            Vocab::synthetic("r", n_relations),
            train,
            valid,
            test,
            report,
        ))
    }

    fn assemble(
        entities: Vocab,
        relations: Vocab,
        train: Vec<Triple>,
        valid: Vec<Triple>,
        test: Vec<Triple>,
        mut report: LoadReport,
    ) -> Self {
        let mut train_index = HashSet::with_capacity(train.len());
        let mut deduped = Vec::with_capacity(train.len());
        for t in train {
            if train_index.insert(t) {
                deduped.push(t);
            } else {
                report.train_duplicates += 1;
            }
        }
        KnowledgeGraph {
            entities,
            relations,
            train: deduped,
            valid,
            test,
            train_index,
            report,
        }
    }

    pub fn num_entities(&self) -> usize {
        self.entities.len()
    }

    pub fn num_relations(&self) -> usize {
        self.relations.len()
    }

    pub fn entities(&self) -> &Vocab {
        &self.entities
    }

    pub fn relations(&self) -> &Vocab {
        &self.relations
    }

    pub fn train(&self) -> &[Triple] {
        &self.train
    }

    pub fn valid(&self) -> &[Triple] {
        &self.valid
    }

    pub fn test(&self) -> &[Triple] {
        &self.test
    }

    pub fn split(&self, split: Split) -> &[Triple] {
        match split {
            Split::Train => &self.train,
            Split::Valid => &self.valid,
            Split::Test => &self.test,
        }
    }

    pub fn in_train(&self, t: &Triple) -> bool {
        self.train_index.contains(t)
    }

    pub fn load_report(&self) -> &LoadReport {
        &self.report
    }

    /// Writes one split as `head<TAB>relation<TAB>tail` lines using names.
    pub fn write_triples(&self, triples: &[Triple], mut out: impl Write) -> std::io::Result<()> {
        for t in triples {
            writeln!(
                out,
                "{}\t{}\t{}",
                self.entities.names[t.head.index()],
                self.relations.names[t.relation.index()],
                self.entities.names[t.tail.index()]
            )?;
        }
        Ok(())
    }

    /// Resolves name triples against this graph's dictionaries. Lines with
    /// unknown names are reported as format errors.
    pub fn resolve(&self, path: &Path) -> Result<Vec<Triple>> {
        let rows = read_triple_file(path)?;
        rows.into_iter()
            .map(|(line, [h, r, t])| {
                let lookup = |v: &Vocab, name: &str| {
                    v.id(name).ok_or_else(|| KgError::Format {
                        what: "triple file",
                        detail: format!("{}:{line}: unknown name {name:?}", path.display()),
                    })
                };
                Ok(Triple {
                    head: EntityId(lookup(&self.entities, &h)?),
                    relation: RelationId(lookup(&self.relations, &r)?),
                    tail: EntityId(lookup(&self.entities, &t)?),
                })
            })
            .collect()
    }
}

/// Parses a triple file into `(line number, [head, relation, tail])` rows,
/// skipping blank lines.
pub fn read_triple_file(path: &Path) -> Result<Vec<(usize, [String; 3])>> {
    let text = fs::read_to_string(path).map_err(|e| KgError::io(path, e))?;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(KgError::Parse {
                path: path.to_owned(),
                line: i + 1,
                found: fields.len(),
            });
        }
        rows.push((
            i + 1,
            [
                fields[0].trim().to_owned(),
                fields[1].trim().to_owned(),
                fields[2].trim().to_owned(),
            ],
        ));
    }
    Ok(rows)
}

/// Loads the three split files. Self-loops and duplicate training lines are
/// dropped with a warning; an empty training split is an error.
pub fn load_dataset(train_path: &Path, valid_path: &Path, test_path: &Path) -> Result<KnowledgeGraph> {
    let strip = |rows: Vec<(usize, [String; 3])>| rows.into_iter().map(|(_, r)| r).collect::<Vec<_>>();
    let train = strip(read_triple_file(train_path)?);
    let valid = strip(read_triple_file(valid_path)?);
    let test = strip(read_triple_file(test_path)?);
    let g = KnowledgeGraph::from_named(&train, &valid, &test);
    let report = g.load_report();
    for split in Split::ALL {
        let n = report.self_loops_in(split);
        if n > 0 {
            warn!("dropped {n} self-loop line(s) from the {} split", split.name());
        }
    }
    if report.train_duplicates > 0 {
        warn!(
            "dropped {} duplicate line(s) from the train split",
            report.train_duplicates
        );
    }
    if g.train.is_empty() {
        return Err(KgError::EmptyTrain);
    }
    Ok(g)
}

/// Loads `train.txt`, `valid.txt` and `test.txt` from a directory.
pub fn load_dataset_dir(dir: &Path) -> Result<KnowledgeGraph> {
    load_dataset(
        &dir.join("train.txt"),
        &dir.join("valid.txt"),
        &dir.join("test.txt"),
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct GraphStats {
    pub entities: usize,
    pub relations: usize,
    pub train: usize,
    pub valid: usize,
    pub test: usize,
    pub total: usize,
    /// `|train| / (|E|·(|E|−1)·|R|)`.
    pub density: f64,
    /// Entities that appear in valid or test but never in train.
    pub unseen_in_train: usize,
    pub self_loops_dropped: usize,
    pub train_duplicates_dropped: usize,
}

pub fn graph_stats(g: &KnowledgeGraph) -> GraphStats {
    let n = g.num_entities();
    let possible = n as f64 * n.saturating_sub(1) as f64 * g.num_relations() as f64;
    let mut seen = vec![false; n];
    for t in g.train() {
        seen[t.head.index()] = true;
        seen[t.tail.index()] = true;
    }
    let mut unseen = vec![false; n];
    for t in g.valid().iter().chain(g.test()) {
        for e in [t.head, t.tail] {
            if !seen[e.index()] {
                unseen[e.index()] = true;
            }
        }
    }
    GraphStats {
        entities: n,
        relations: g.num_relations(),
        train: g.train().len(),
        valid: g.valid().len(),
        test: g.test().len(),
        total: g.train().len() + g.valid().len() + g.test().len(),
        density: if possible > 0.0 {
            g.train().len() as f64 / possible
        } else {
            0.0
        },
        unseen_in_train: unseen.iter().filter(|&&u| u).count(),
        self_loops_dropped: g.load_report().self_loops.iter().sum(),
        train_duplicates_dropped: g.load_report().train_duplicates,
    }
}
