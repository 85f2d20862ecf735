//! Immutable, indexed knowledge graphs and incremental dataset splits.
//!
//! Triples are stored twice in compressed adjacency form: a forward index
//! keyed by head and an inverse index keyed by tail. Each per-entity block is
//! sorted by `(relation, neighbor)`, so a `(head, rel)` lookup is a binary
//! search followed by a contiguous slice of ascending tails.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, IdKind, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EntityId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RelationId(pub u32);

impl EntityId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl RelationId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for EntityId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "e{}", self.0)
    }
}

impl fmt::Display for RelationId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "r{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Triple {
    pub head: EntityId,
    pub rel: RelationId,
    pub tail: EntityId,
}

impl Triple {
    pub fn new(head: u32, rel: u32, tail: u32) -> Self {
        Triple {
            head: EntityId(head),
            rel: RelationId(rel),
            tail: EntityId(tail),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Forward,
    Inverse,
}

/// Counts gathered while building a graph.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct LoadStats {
    pub rows_read: usize,
    pub duplicates_dropped: usize,
}

/// Compressed adjacency: `offsets[v]..offsets[v + 1]` indexes `edges`.
#[derive(Debug, Clone, PartialEq, Eq)]
struct Adjacency {
    offsets: Vec<usize>,
    edges: Vec<(RelationId, EntityId)>,
}

impl Adjacency {
    fn build(entity_count: usize, mut pairs: Vec<(EntityId, RelationId, EntityId)>) -> Self {
        pairs.sort_unstable();
        let mut offsets = vec![0usize; entity_count + 1];
        for &(src, _, _) in &pairs {
            offsets[src.index() + 1] += 1;
        }
        for i in 0..entity_count {
            offsets[i + 1] += offsets[i];
        }
        let edges = pairs.into_iter().map(|(_, r, dst)| (r, dst)).collect();
        Adjacency { offsets, edges }
    }

    fn block(&self, v: EntityId) -> &[(RelationId, EntityId)] {
        &self.edges[self.offsets[v.index()]..self.offsets[v.index() + 1]]
    }

    fn with_relation(&self, v: EntityId, rel: RelationId) -> &[(RelationId, EntityId)] {
        let block = self.block(v);
        let start = block.partition_point(|&(r, _)| r < rel);
        let end = block.partition_point(|&(r, _)| r <= rel);
        &block[start..end]
    }
}

/// An immutable knowledge graph over dense integer entity and relation ids.
#[derive(Debug, Clone)]
pub struct KnowledgeGraph {
    entity_names: Vec<String>,
    relation_names: Vec<String>,
    entity_lookup: HashMap<String, EntityId>,
    relation_lookup: HashMap<String, RelationId>,
    triples: Vec<Triple>,
    fwd: Adjacency,
    inv: Adjacency,
    stats: LoadStats,
}

impl PartialEq for KnowledgeGraph {
    fn eq(&self, other: &Self) -> bool {
        self.entity_names == other.entity_names
            && self.relation_names == other.relation_names
            && self.triples == other.triples
    }
}

impl KnowledgeGraph {
    /// Builds a graph from vocabularies and (possibly duplicated) triples.
    pub fn new(
        entity_names: Vec<String>,
        relation_names: Vec<String>,
        triples: impl IntoIterator<Item = Triple>,
    ) -> Result<Self> {
        let mut rows = Vec::new();
        for t in triples {
            check_range(IdKind::Entity, t.head.0, entity_names.len())?;
            check_range(IdKind::Relation, t.rel.0, relation_names.len())?;
            check_range(IdKind::Entity, t.tail.0, entity_names.len())?;
            rows.push(t);
        }
        Ok(Self::from_checked(entity_names, relation_names, rows))
    }

    /// Builds a graph with synthetic names `e0..`, `r0..`.
    pub fn from_triples(
        entity_count: usize,
        relation_count: usize,
        triples: impl IntoIterator<Item = Triple>,
    ) -> Result<Self> {
        let entities = (0..entity_count).map(|i| format!("e{i}")).collect();
        let relations = (0..relation_count).map(|i| format!("r{i}")).collect();
        Self::new(entities, relations, triples)
    }

    fn from_checked(
        entity_names: Vec<String>,
        relation_names: Vec<String>,
        mut triples: Vec<Triple>,
    ) -> Self {
        let rows_read = triples.len();
        triples.sort_unstable();
        triples.dedup();
        let stats = LoadStats {
            rows_read,
            duplicates_dropped: rows_read - triples.len(),
        };
        let n = entity_names.len();
        let fwd = Adjacency::build(n, triples.iter().map(|t| (t.head, t.rel, t.tail)).collect());
        let inv = Adjacency::build(n, triples.iter().map(|t| (t.tail, t.rel, t.head)).collect());
        let entity_lookup = entity_names
            .iter()
            .enumerate()
            .map(|(i, s)| (s.clone(), EntityId(i as u32)))
            .collect();
        let relation_lookup = relation_names
            .iter()
            .enumerate()
            .map(|(i, s)| (s.clone(), RelationId(i as u32)))
            .collect();
        KnowledgeGraph {
            entity_names,
            relation_names,
            entity_lookup,
            relation_lookup,
            triples,
            fwd,
            inv,
            stats,
        }
    }

    /// Returns a new graph holding the union of both triple sets. Vocabularies must match.
    pub fn extended_with(&self, extra: &[Triple]) -> Result<Self> {
        let mut all = self.triples.clone();
        all.extend_from_slice(extra);
        Self::new(self.entity_names.clone(), self.relation_names.clone(), all)
    }

    pub fn entity_count(&self) -> usize {
        self.entity_names.len()
    }

    pub fn relation_count(&self) -> usize {
        self.relation_names.len()
    }

    pub fn triple_count(&self) -> usize {
        self.triples.len()
    }

    pub fn triples(&self) -> &[Triple] {
        &self.triples
    }

    pub fn stats(&self) -> LoadStats {
        self.stats
    }

    pub fn contains(&self, t: &Triple) -> bool {
        self.triples.binary_search(t).is_ok()
    }

    pub fn entities(&self) -> impl Iterator<Item = EntityId> {
        (0..self.entity_count() as u32).map(EntityId)
    }

    pub fn relations(&self) -> impl Iterator<Item = RelationId> {
        (0..self.relation_count() as u32).map(RelationId)
    }

    pub fn entity_name(&self, e: EntityId) -> Option<&str> {
        self.entity_names.get(e.index()).map(String::as_str)
    }

    pub fn relation_name(&self, r: RelationId) -> Option<&str> {
        self.relation_names.get(r.index()).map(String::as_str)
    }

    /// Exact, case-sensitive name lookup.
    pub fn entity_by_name(&self, name: &str) -> Option<EntityId> {
        self.entity_lookup.get(name).copied()
    }

    pub fn relation_by_name(&self, name: &str) -> Option<RelationId> {
        self.relation_lookup.get(name).copied()
    }

    pub fn check_entity(&self, e: EntityId) -> Result<()> {
        check_range(IdKind::Entity, e.0, self.entity_count())
    }

    pub fn check_relation(&self, r: RelationId) -> Result<()> {
        check_range(IdKind::Relation, r.0, self.relation_count())
    }

    /// Tails `t` with `(head, rel, t)` in the graph, ascending.
    pub fn tails(&self, head: EntityId, rel: RelationId) -> impl ExactSizeIterator<Item = EntityId> + '_ {
        self.fwd.with_relation(head, rel).iter().map(|&(_, t)| t)
    }

    /// Heads `h` with `(h, rel, tail)` in the graph, ascending.
    pub fn heads(&self, tail: EntityId, rel: RelationId) -> impl ExactSizeIterator<Item = EntityId> + '_ {
        self.inv.with_relation(tail, rel).iter().map(|&(_, h)| h)
    }

    /// Outgoing `(rel, tail)` pairs of `v`, ordered by relation then tail.
    pub fn out_edges(&self, v: EntityId) -> &[(RelationId, EntityId)] {
        self.fwd.block(v)
    }

    /// Incoming `(rel, head)` pairs of `v`, ordered by relation then head.
    pub fn in_edges(&self, v: EntityId) -> &[(RelationId, EntityId)] {
        self.inv.block(v)
    }

    pub fn neighbors(&self, v: EntityId, direction: Direction) -> Result<Vec<(RelationId, EntityId)>> {
        self.check_entity(v)?;
        Ok(match direction {
            Direction::Forward => self.out_edges(v).to_vec(),
            Direction::Inverse => self.in_edges(v).to_vec(),
        })
    }

    /// Entities whose name contains `needle` (case-insensitive), in id order.
    pub fn search_entities(&self, needle: &str, limit: usize) -> Vec<EntityId> {
        let needle = needle.to_lowercase();
        self.entity_names
            .iter()
            .enumerate()
            .filter(|(_, name)| name.to_lowercase().contains(&needle))
            .take(limit)
            .map(|(i, _)| EntityId(i as u32))
            .collect()
    }

    /// Verifies that both indices contain exactly the triple set.
    pub fn check_index_duality(&self) -> bool {
        if self.fwd.edges.len() != self.triples.len() || self.inv.edges.len() != self.triples.len() {
            return false;
        }
        self.triples.iter().all(|t| {
            self.fwd.with_relation(t.head, t.rel).binary_search(&(t.rel, t.tail)).is_ok()
                && self.inv.with_relation(t.tail, t.rel).binary_search(&(t.rel, t.head)).is_ok()
        })
    }
}

fn check_range(kind: IdKind, id: u32, size: usize) -> Result<()> {
    if (id as usize) < size {
        Ok(())
    } else {
        Err(Error::OutOfRange { kind, id, size })
    }
}

/// Train, valid and test graphs where each includes all edges of the previous one.
#[derive(Debug, Clone)]
pub struct DatasetSplit {
    pub train: KnowledgeGraph,
    pub valid: KnowledgeGraph,
    pub test: KnowledgeGraph,
}

impl DatasetSplit {
    pub fn from_parts(
        entity_names: Vec<String>,
        relation_names: Vec<String>,
        train: Vec<Triple>,
        valid: Vec<Triple>,
        test: Vec<Triple>,
    ) -> Result<Self> {
        let train = KnowledgeGraph::new(entity_names, relation_names, train)?;
        let valid = train.extended_with(&valid)?;
        let test = valid.extended_with(&test)?;
        Ok(DatasetSplit { train, valid, test })
    }

    pub fn graph(&self, which: SplitName) -> &KnowledgeGraph {
        match which {
            SplitName::Train => &self.train,
            SplitName::Valid => &self.valid,
            SplitName::Test => &self.test,
        }
    }

    pub fn is_monotone(&self) -> bool {
        is_subset(self.train.triples(), self.valid.triples())
            && is_subset(self.valid.triples(), self.test.triples())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitName {
    Train,
    Valid,
    Test,
}

fn is_subset(small: &[Triple], big: &[Triple]) -> bool {
    small.iter().all(|t| big.binary_search(t).is_ok())
}

pub const ENTITY_MAP_FILE: &str = "entity2id.txt";
pub const RELATION_MAP_FILE: &str = "relation2id.txt";
pub const SPLIT_FILES: [&str; 3] = ["train.txt", "valid.txt", "test.txt"];

/// Loads a single graph from a triple file and two id maps.
pub fn load_graph(
    triples_path: impl AsRef<Path>,
    entity_map_path: impl AsRef<Path>,
    relation_map_path: impl AsRef<Path>,
) -> Result<KnowledgeGraph> {
    let entities = read_id_map(entity_map_path.as_ref())?;
    let relations = read_id_map(relation_map_path.as_ref())?;
    let triples = read_triples(triples_path.as_ref(), entities.len(), relations.len())?;
    Ok(KnowledgeGraph::from_checked(entities, relations, triples))
}

/// Loads `train.txt`, `valid.txt` and `test.txt` from `dir` as cumulative graphs.
pub fn load_split(dir: impl AsRef<Path>) -> Result<DatasetSplit> {
    let dir = dir.as_ref();
    let entities = read_id_map(&dir.join(ENTITY_MAP_FILE))?;
    let relations = read_id_map(&dir.join(RELATION_MAP_FILE))?;
    let [train, valid, test] = SPLIT_FILES
        .map(|name| read_triples(&dir.join(name), entities.len(), relations.len()));
    let train = KnowledgeGraph::from_checked(entities, relations, train?);
    let valid = train.extended_with(&valid?)?;
    let test = valid.extended_with(&test?)?;
    Ok(DatasetSplit { train, valid, test })
}

/// Writes a split in the layout `load_split` reads.
pub fn write_split(dir: impl AsRef<Path>, split: &DatasetSplit) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|source| io_error(dir, source))?;
    let g = &split.test;
    write_id_map(&dir.join(ENTITY_MAP_FILE), &g.entity_names)?;
    write_id_map(&dir.join(RELATION_MAP_FILE), &g.relation_names)?;
    let valid_only: Vec<Triple> = split
        .valid
        .triples()
        .iter()
        .filter(|t| !split.train.contains(t))
        .copied()
        .collect();
    let test_only: Vec<Triple> = split
        .test
        .triples()
        .iter()
        .filter(|t| !split.valid.contains(t))
        .copied()
        .collect();
    write_triples(&dir.join(SPLIT_FILES[0]), split.train.triples())?;
    write_triples(&dir.join(SPLIT_FILES[1]), &valid_only)?;
    write_triples(&dir.join(SPLIT_FILES[2]), &test_only)
}

fn io_error(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|source| io_error(path, source))
}

fn parse_error(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

/// Reads `name<TAB>id` lines. A leading line holding a single integer (the
/// OpenKE count header) is skipped. Ids must cover `0..n` exactly once.
fn read_id_map(path: &Path) -> Result<Vec<String>> {
    let text = read_text(path)?;
    let mut entries: Vec<(usize, String, usize)> = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        if idx == 0 && !line.contains('\t') && line.trim().parse::<u64>().is_ok() {
            continue;
        }
        let (name, id) = line
            .rsplit_once('\t')
            .ok_or_else(|| parse_error(path, line_no, "expected `name<TAB>id`"))?;
        let id: usize = id
            .trim()
            .parse()
            .map_err(|_| parse_error(path, line_no, format!("non-integer id `{id}`")))?;
        entries.push((id, name.to_string(), line_no));
    }
    let n = entries.len();
    let mut names: Vec<Option<String>> = vec![None; n];
    for (id, name, line_no) in entries {
        if id >= n {
            return Err(parse_error(path, line_no, format!("id {id} outside dense range 0..{n}")));
        }
        if names[id].is_some() {
            return Err(parse_error(path, line_no, format!("duplicate id {id}")));
        }
        names[id] = Some(name);
    }
    Ok(names.into_iter().map(|n| n.unwrap_or_default()).collect())
}

fn read_triples(path: &Path, entity_count: usize, relation_count: usize) -> Result<Vec<Triple>> {
    let text = read_text(path)?;
    let mut out = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 3 {
            return Err(parse_error(
                path,
                line_no,
                format!("expected 3 tab-separated columns, found {}", cols.len()),
            ));
        }
        let mut ids = [0u64; 3];
        for (slot, col) in ids.iter_mut().zip(&cols) {
            *slot = col
                .trim()
                .parse()
                .map_err(|_| parse_error(path, line_no, format!("non-integer id `{col}`")))?;
        }
        let [h, r, t] = ids;
        for (id, kind, size) in [
            (h, IdKind::Entity, entity_count),
            (r, IdKind::Relation, relation_count),
            (t, IdKind::Entity, entity_count),
        ] {
            if id >= size as u64 {
                return Err(Error::DanglingReference {
                    path: PathBuf::from(path),
                    line: line_no,
                    kind,
                    id,
                });
            }
        }
        out.push(Triple::new(h as u32, r as u32, t as u32));
    }
    Ok(out)
}

fn write_id_map(path: &Path, names: &[String]) -> Result<()> {
    let mut text = String::new();
    for (i, name) in names.iter().enumerate() {
        text.push_str(&format!("{name}\t{i}\n"));
    }
    fs::write(path, text).map_err(|source| io_error(path, source))
}

fn write_triples(path: &Path, triples: &[Triple]) -> Result<()> {
    let mut text = String::new();
    for t in triples {
        text.push_str(&format!("{}\t{}\t{}\n", t.head.0, t.rel.0, t.tail.0));
    }
    fs::write(path, text).map_err(|source| io_error(path, source))
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    /// Entities a..e are ids 0..4; relations r1, r2 are ids 1, 2 (id 0 unused).
    pub(crate) fn toy_g1() -> KnowledgeGraph {
        let entities = ["a", "b", "c", "d", "e"].map(String::from).to_vec();
        let relations = ["r0", "r1", "r2"].map(String::from).to_vec();
        KnowledgeGraph::new(
            entities,
            relations,
            [
                Triple::new(0, 1, 1),
                Triple::new(0, 1, 2),
                Triple::new(3, 1, 2),
                Triple::new(1, 2, 3),
                Triple::new(2, 2, 4),
            ],
        )
        .unwrap()
    }

    fn write(dir: &Path, name: &str, text: &str) {
        fs::write(dir.join(name), text).unwrap();
    }

    fn maps(dir: &Path) {
        write(dir, ENTITY_MAP_FILE, "a\t0\nb\t1\nc\t2\n");
        write(dir, RELATION_MAP_FILE, "likes\t0\nknows\t1\n");
    }

    #[test]
    fn neighbors_on_toy_graph() {
        let g = toy_g1();
        let (r1, r2) = (RelationId(1), RelationId(2));
        let (a, b, c, d) = (EntityId(0), EntityId(1), EntityId(2), EntityId(3));
        assert_eq!(g.neighbors(c, Direction::Inverse).unwrap(), vec![(r1, a), (r1, d)]);
        assert_eq!(g.neighbors(a, Direction::Forward).unwrap(), vec![(r1, b), (r1, c)]);
        assert_eq!(g.neighbors(b, Direction::Forward).unwrap(), vec![(r2, d)]);
        assert!(matches!(
            g.neighbors(EntityId(9), Direction::Forward),
            Err(Error::OutOfRange { kind: IdKind::Entity, id: 9, .. })
        ));
    }

    #[test]
    fn isolated_entity_has_no_neighbors() {
        let g = KnowledgeGraph::from_triples(3, 1, [Triple::new(0, 0, 1)]).unwrap();
        assert!(g.neighbors(EntityId(2), Direction::Forward).unwrap().is_empty());
        assert!(g.neighbors(EntityId(2), Direction::Inverse).unwrap().is_empty());
    }

    #[test]
    fn empty_triple_file_gives_empty_graph() {
        let dir = tempfile::tempdir().unwrap();
        maps(dir.path());
        write(dir.path(), "t.txt", "");
        let g = load_graph(
            dir.path().join("t.txt"),
            dir.path().join(ENTITY_MAP_FILE),
            dir.path().join(RELATION_MAP_FILE),
        )
        .unwrap();
        assert_eq!((g.entity_count(), g.relation_count(), g.triple_count()), (3, 2, 0));
        assert_eq!(g.tails(EntityId(0), RelationId(0)).len(), 0);
    }

    #[test]
    fn duplicate_rows_collapse_and_crlf_is_tolerated() {
        let dir = tempfile::tempdir().unwrap();
        maps(dir.path());
        write(dir.path(), "t.txt", "0\t1\t2\r\n0\t1\t2\r\n");
        let g = load_graph(
            dir.path().join("t.txt"),
            dir.path().join(ENTITY_MAP_FILE),
            dir.path().join(RELATION_MAP_FILE),
        )
        .unwrap();
        assert_eq!(g.triple_count(), 1);
        assert_eq!(g.stats().duplicates_dropped, 1);
    }

    #[test]
    fn malformed_rows_report_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        maps(dir.path());
        let load = |text: &str| {
            write(dir.path(), "t.txt", text);
            load_graph(
                dir.path().join("t.txt"),
                dir.path().join(ENTITY_MAP_FILE),
                dir.path().join(RELATION_MAP_FILE),
            )
        };
        assert!(matches!(load("0\t1\t2\n0\t1\n"), Err(Error::Parse { line: 2, .. })));
        assert!(matches!(load("0\tx\t2\n"), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(
            load("0\t1\t2\n\n0\t1\t7\n"),
            Err(Error::DanglingReference { line: 3, kind: IdKind::Entity, id: 7, .. })
        ));
        assert!(matches!(
            load("0\t5\t1\n"),
            Err(Error::DanglingReference { kind: IdKind::Relation, .. })
        ));
    }

    #[test]
    fn openke_count_header_is_skipped() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "m.txt", "2\nx\t1\ny\t0\n");
        let names = read_id_map(&dir.path().join("m.txt")).unwrap();
        assert_eq!(names, vec!["y".to_string(), "x".to_string()]);
    }

    #[test]
    fn split_is_cumulative() {
        let dir = tempfile::tempdir().unwrap();
        maps(dir.path());
        write(dir.path(), "train.txt", "0\t0\t1\n");
        write(dir.path(), "valid.txt", "1\t0\t2\n");
        write(dir.path(), "test.txt", "2\t1\t0\n");
        let s = load_split(dir.path()).unwrap();
        assert_eq!(
            (s.train.triple_count(), s.valid.triple_count(), s.test.triple_count()),
            (1, 2, 3)
        );
        assert!(s.is_monotone());

        write(dir.path(), "valid.txt", "");
        let s = load_split(dir.path()).unwrap();
        assert_eq!(s.valid.triples(), s.train.triples());

        write(dir.path(), "valid.txt", "0\t0\t1\n");
        let s = load_split(dir.path()).unwrap();
        assert_eq!(s.valid.triple_count(), s.train.triple_count());
    }

    #[test]
    fn name_lookup_is_exact() {
        let g = toy_g1();
        assert_eq!(g.entity_by_name("c"), Some(EntityId(2)));
        assert_eq!(g.entity_by_name("C"), None);
        assert_eq!(g.relation_by_name("r2"), Some(RelationId(2)));
    }
}
