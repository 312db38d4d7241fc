//! In-memory data model and file ingestion: user-item interactions, the
//! signed social graph, and train/test split bookkeeping.
//!
//! External ids are arbitrary integers; internally everything is re-indexed
//! to dense 0-based ids so embedding tables can be plain arrays. Internal
//! ids are assigned by ascending external id, which makes the assignment
//! canonical: writing a dataset back to disk and re-ingesting it yields an
//! identical `Dataset`.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::rng;

/// Kind of user feedback held in a dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeedbackKind {
    /// Ratings on the 1..=5 scale.
    Explicit,
    /// Non-negative interaction counts (views, clicks).
    Implicit,
}

impl FeedbackKind {
    pub fn as_str(self) -> &'static str {
        match self {
            FeedbackKind::Explicit => "explicit",
            FeedbackKind::Implicit => "implicit",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "explicit" => Ok(FeedbackKind::Explicit),
            "implicit" => Ok(FeedbackKind::Implicit),
            other => Err(Error::Validation(format!(
                "unknown feedback kind {other:?} (expected \"explicit\" or \"implicit\")"
            ))),
        }
    }
}

impl fmt::Display for FeedbackKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One (user, item, value) record with internal ids.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interaction {
    pub user: u32,
    pub item: u32,
    pub value: f64,
}

/// Bidirectional external/internal id map. Internal ids are the ranks of
/// the sorted external ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdMap {
    to_external: Vec<u64>,
    to_internal: HashMap<u64, u32>,
}

impl IdMap {
    fn from_external_ids(mut ids: Vec<u64>) -> Self {
        ids.sort_unstable();
        ids.dedup();
        let to_internal = ids
            .iter()
            .enumerate()
            .map(|(i, &e)| (e, i as u32))
            .collect();
        IdMap {
            to_external: ids,
            to_internal,
        }
    }

    pub fn len(&self) -> usize {
        self.to_external.len()
    }

    pub fn is_empty(&self) -> bool {
        self.to_external.is_empty()
    }

    pub fn external(&self, internal: u32) -> u64 {
        self.to_external[internal as usize]
    }

    pub fn internal(&self, external: u64) -> Option<u32> {
        self.to_internal.get(&external).copied()
    }
}

/// Sparse user-item interaction matrix plus id bookkeeping.
///
/// Invariants: ids are dense and in range, keys are unique, explicit values
/// lie in `[1, 5]` and implicit values are non-negative integers.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    kind: FeedbackKind,
    interactions: Vec<Interaction>, // sorted by (user, item)
    users: IdMap,
    items: IdMap,
}

impl Dataset {
    /// Build a dataset from raw external-id records, validating and
    /// re-indexing. Shared by file ingestion and the synthetic generator.
    pub fn from_records(records: Vec<(u64, u64, f64)>, kind: FeedbackKind) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::Validation("no interactions".into()));
        }
        for &(_, _, v) in &records {
            validate_value(v, kind, None)?;
        }
        let users = IdMap::from_external_ids(records.iter().map(|r| r.0).collect());
        let items = IdMap::from_external_ids(records.iter().map(|r| r.1).collect());
        let mut interactions: Vec<Interaction> = records
            .iter()
            .map(|&(u, i, v)| Interaction {
                user: users.internal(u).unwrap(),
                item: items.internal(i).unwrap(),
                value: v,
            })
            .collect();
        interactions.sort_unstable_by_key(|r| (r.user, r.item));
        for w in interactions.windows(2) {
            if w[0].user == w[1].user && w[0].item == w[1].item {
                return Err(Error::Validation(format!(
                    "duplicate interaction for user {} item {}",
                    users.external(w[0].user),
                    items.external(w[0].item)
                )));
            }
        }
        Ok(Dataset {
            kind,
            interactions,
            users,
            items,
        })
    }

    pub fn kind(&self) -> FeedbackKind {
        self.kind
    }

    pub fn n_users(&self) -> usize {
        self.users.len()
    }

    pub fn n_items(&self) -> usize {
        self.items.len()
    }

    pub fn interactions(&self) -> &[Interaction] {
        &self.interactions
    }

    pub fn user_ids(&self) -> &IdMap {
        &self.users
    }

    pub fn item_ids(&self) -> &IdMap {
        &self.items
    }

    /// Value for an interaction key, if present.
    pub fn value(&self, user: u32, item: u32) -> Option<f64> {
        self.interactions
            .binary_search_by_key(&(user, item), |r| (r.user, r.item))
            .ok()
            .map(|ix| self.interactions[ix].value)
    }

    /// Copy of this dataset keeping only the given keys. Id maps and counts
    /// are unchanged so downstream tables stay aligned with the full data.
    pub fn restrict(&self, keys: &HashSet<(u32, u32)>) -> Dataset {
        Dataset {
            kind: self.kind,
            interactions: self
                .interactions
                .iter()
                .filter(|r| keys.contains(&(r.user, r.item)))
                .copied()
                .collect(),
            users: self.users.clone(),
            items: self.items.clone(),
        }
    }

    /// Write the interactions as `user<TAB>item<TAB>value` lines with
    /// external ids. Re-ingesting the output reproduces this dataset.
    pub fn write_ratings(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        for r in &self.interactions {
            writeln!(
                w,
                "{}\t{}\t{}",
                self.users.external(r.user),
                self.items.external(r.item),
                r.value
            )
            .map_err(|e| Error::io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

fn validate_value(v: f64, kind: FeedbackKind, at: Option<(&Path, usize)>) -> Result<()> {
    let fail = |msg: String| match at {
        Some((path, line)) => Err(Error::parse(path, line, msg)),
        None => Err(Error::Validation(msg)),
    };
    if !v.is_finite() {
        return fail(format!("non-finite value {v}"));
    }
    match kind {
        FeedbackKind::Explicit => {
            if !(1.0..=5.0).contains(&v) {
                return fail(format!("rating {v} outside the 1..=5 scale"));
            }
        }
        FeedbackKind::Implicit => {
            if v < 0.0 || v.fract() != 0.0 {
                return fail(format!("implicit count {v} must be a non-negative integer"));
            }
        }
    }
    Ok(())
}

/// Parse a `user<TAB>item<TAB>value` ratings file.
pub fn ingest_interactions(path: &Path, kind: FeedbackKind) -> Result<Dataset> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    let mut records = Vec::new();
    for (ix, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let lineno = ix + 1;
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split('\t');
        let user = parse_field(fields.next(), path, lineno, "user id")?;
        let item = parse_field(fields.next(), path, lineno, "item id")?;
        let value: f64 = match fields.next() {
            Some(s) => s
                .trim()
                .parse()
                .map_err(|_| Error::parse(path, lineno, format!("bad value {s:?}")))?,
            None => return Err(Error::parse(path, lineno, "missing value field")),
        };
        if fields.next().is_some() {
            return Err(Error::parse(path, lineno, "too many fields"));
        }
        validate_value(value, kind, Some((path, lineno)))?;
        records.push((user, item, value));
    }
    if records.is_empty() {
        return Err(Error::Validation("no interactions".into()));
    }
    Dataset::from_records(records, kind)
}

fn parse_field(field: Option<&str>, path: &Path, line: usize, what: &str) -> Result<u64> {
    match field {
        Some(s) => s
            .trim()
            .parse()
            .map_err(|_| Error::parse(path, line, format!("bad {what} {s:?}"))),
        None => Err(Error::parse(path, line, format!("missing {what}"))),
    }
}

/// Per-user friend and foe neighborhoods of the signed social graph.
/// Edges are directed: `v ∈ friends(u)` means u trusts v.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SignedSocialGraph {
    friends: Vec<Vec<u32>>, // sorted per user
    foes: Vec<Vec<u32>>,    // sorted per user
}

impl SignedSocialGraph {
    pub fn empty(n_users: usize) -> Self {
        SignedSocialGraph {
            friends: vec![Vec::new(); n_users],
            foes: vec![Vec::new(); n_users],
        }
    }

    /// Build from internal-id edge lists. Deduplicates; rejects self-edges,
    /// out-of-range ids and trust/distrust conflicts.
    pub fn from_edges(
        trust: &[(u32, u32)],
        distrust: &[(u32, u32)],
        n_users: usize,
    ) -> Result<Self> {
        let mut g = SignedSocialGraph::empty(n_users);
        let add = |store: &mut Vec<Vec<u32>>, &(u, v): &(u32, u32)| -> Result<()> {
            if u == v {
                return Err(Error::Validation(format!("self-edge on user {u}")));
            }
            if u as usize >= n_users || v as usize >= n_users {
                return Err(Error::Validation(format!(
                    "edge ({u}, {v}) references a user outside 0..{n_users}"
                )));
            }
            store[u as usize].push(v);
            Ok(())
        };
        for e in trust {
            add(&mut g.friends, e)?;
        }
        for e in distrust {
            add(&mut g.foes, e)?;
        }
        for u in 0..n_users {
            crate::sets::normalize(&mut g.friends[u]);
            crate::sets::normalize(&mut g.foes[u]);
            if let Some(&v) = g.friends[u]
                .iter()
                .find(|v| crate::sets::contains(&g.foes[u], **v))
            {
                return Err(Error::SignConflict(u as u64, v as u64));
            }
        }
        Ok(g)
    }

    pub fn n_users(&self) -> usize {
        self.friends.len()
    }

    pub fn friends(&self, u: u32) -> &[u32] {
        &self.friends[u as usize]
    }

    pub fn foes(&self, u: u32) -> &[u32] {
        &self.foes[u as usize]
    }

    pub fn edge_counts(&self) -> (usize, usize) {
        (
            self.friends.iter().map(Vec::len).sum(),
            self.foes.iter().map(Vec::len).sum(),
        )
    }

    pub fn is_edgeless(&self) -> bool {
        let (t, d) = self.edge_counts();
        t == 0 && d == 0
    }

    /// Write both relations as `user<TAB>user` files with external ids.
    pub fn write_edges(&self, trust_path: &Path, distrust_path: &Path, users: &IdMap) -> Result<()> {
        let dump = |path: &Path, store: &Vec<Vec<u32>>| -> Result<()> {
            let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
            let mut w = BufWriter::new(file);
            for (u, vs) in store.iter().enumerate() {
                for &v in vs {
                    writeln!(w, "{}\t{}", users.external(u as u32), users.external(v))
                        .map_err(|e| Error::io(path, e))?;
                }
            }
            w.flush().map_err(|e| Error::io(path, e))
        };
        dump(trust_path, &self.friends)?;
        dump(distrust_path, &self.foes)
    }
}

/// Result of graph ingestion: the graph plus counters for edges that were
/// dropped rather than rejected.
#[derive(Debug)]
pub struct GraphIngest {
    pub graph: SignedSocialGraph,
    /// Edges naming a user absent from the dataset.
    pub dropped_unknown: usize,
    /// Self-loops.
    pub dropped_self: usize,
}

/// Parse trust and distrust edge files (`user<TAB>user` per line), mapping
/// external ids through `users`. Edges naming unknown users and self-edges
/// are dropped and counted; a pair present in both files is an error.
pub fn ingest_signed_graph(
    trust_path: &Path,
    distrust_path: &Path,
    users: &IdMap,
) -> Result<GraphIngest> {
    let mut dropped_unknown = 0usize;
    let mut dropped_self = 0usize;
    let mut read_edges = |path: &Path| -> Result<Vec<(u32, u32)>> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let reader = BufReader::new(file);
        let mut edges = Vec::new();
        for (ix, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            let lineno = ix + 1;
            if line.is_empty() {
                continue;
            }
            let mut fields = line.split('\t');
            let a = parse_field(fields.next(), path, lineno, "user id")?;
            let b = parse_field(fields.next(), path, lineno, "user id")?;
            if fields.next().is_some() {
                return Err(Error::parse(path, lineno, "too many fields"));
            }
            if a == b {
                dropped_self += 1;
                continue;
            }
            match (users.internal(a), users.internal(b)) {
                (Some(u), Some(v)) => edges.push((u, v)),
                _ => dropped_unknown += 1,
            }
        }
        edges.sort_unstable();
        edges.dedup();
        Ok(edges)
    };
    let trust = read_edges(trust_path)?;
    let distrust = read_edges(distrust_path)?;
    for e in &trust {
        if distrust.binary_search(e).is_ok() {
            return Err(Error::SignConflict(
                users.external(e.0),
                users.external(e.1),
            ));
        }
    }
    let graph = SignedSocialGraph::from_edges(&trust, &distrust, users.len())?;
    Ok(GraphIngest {
        graph,
        dropped_unknown,
        dropped_self,
    })
}

/// A reproducible train/test partition of the interaction keys.
#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    train: Vec<(u32, u32)>, // sorted
    test: Vec<(u32, u32)>,  // sorted
    ratio: f64,
    seed: u64,
}

impl Split {
    pub fn train(&self) -> &[(u32, u32)] {
        &self.train
    }

    pub fn test(&self) -> &[(u32, u32)] {
        &self.test
    }

    pub fn ratio(&self) -> f64 {
        self.ratio
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn train_key_set(&self) -> HashSet<(u32, u32)> {
        self.train.iter().copied().collect()
    }

    /// Train-split interaction counts per item.
    pub fn item_train_counts(&self, n_items: usize) -> Vec<usize> {
        let mut counts = vec![0usize; n_items];
        for &(_, i) in &self.train {
            counts[i as usize] += 1;
        }
        counts
    }

    /// Persist as a line-oriented text file with the seed and ratio embedded.
    pub fn save(&self, path: &Path, ds: &Dataset) -> Result<()> {
        let write = || -> std::io::Result<()> {
            let file = std::fs::File::create(path)?;
            let mut w = BufWriter::new(file);
            writeln!(w, "split\tv1")?;
            writeln!(w, "ratio\t{}", self.ratio)?;
            writeln!(w, "seed\t{}", self.seed)?;
            for (tag, keys) in [("train", &self.train), ("test", &self.test)] {
                for &(u, i) in keys {
                    writeln!(
                        w,
                        "{tag}\t{}\t{}",
                        ds.user_ids().external(u),
                        ds.item_ids().external(i)
                    )?;
                }
            }
            w.flush()
        };
        write().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path, ds: &Dataset) -> Result<Split> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let reader = BufReader::new(file);
        let mut lines = reader.lines().enumerate();
        let mut expect = |want: &str| -> Result<String> {
            match lines.next() {
                Some((ix, Ok(line))) => {
                    let mut f = line.split('\t');
                    if f.next() != Some(want) {
                        return Err(Error::parse(path, ix + 1, format!("expected {want:?} line")));
                    }
                    Ok(f.next().unwrap_or("").to_string())
                }
                Some((_, Err(e))) => Err(Error::io(path, e)),
                None => Err(Error::parse(path, 0, "truncated header")),
            }
        };
        expect("split")?;
        let ratio: f64 = expect("ratio")?
            .parse()
            .map_err(|_| Error::parse(path, 2, "bad ratio"))?;
        let seed: u64 = expect("seed")?
            .parse()
            .map_err(|_| Error::parse(path, 3, "bad seed"))?;
        let mut train = Vec::new();
        let mut test = Vec::new();
        for (ix, line) in lines {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.is_empty() {
                continue;
            }
            let lineno = ix + 1;
            let mut f = line.split('\t');
            let tag = f.next().unwrap_or("");
            let u = parse_field(f.next(), path, lineno, "user id")?;
            let i = parse_field(f.next(), path, lineno, "item id")?;
            let key = match (ds.user_ids().internal(u), ds.item_ids().internal(i)) {
                (Some(u), Some(i)) => (u, i),
                _ => {
                    return Err(Error::parse(
                        path,
                        lineno,
                        format!("split references unknown interaction ({u}, {i})"),
                    ))
                }
            };
            match tag {
                "train" => train.push(key),
                "test" => test.push(key),
                other => return Err(Error::parse(path, lineno, format!("bad tag {other:?}"))),
            }
        }
        train.sort_unstable();
        test.sort_unstable();
        Ok(Split {
            train,
            test,
            ratio,
            seed,
        })
    }
}

/// Uniform random split of the interaction keys, reproducible by seed.
pub fn split_ratings(ds: &Dataset, ratio: f64, seed: u64) -> Result<Split> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::Validation(format!(
            "split ratio {ratio} outside (0, 1)"
        )));
    }
    let mut keys: Vec<(u32, u32)> = ds.interactions().iter().map(|r| (r.user, r.item)).collect();
    let mut rng = rng::stream_rng(seed, "split", 0);
    keys.shuffle(&mut rng);
    let n_train = ((keys.len() as f64) * ratio).round() as usize;
    let n_train = n_train.min(keys.len());
    let mut train: Vec<_> = keys[..n_train].to_vec();
    let mut test: Vec<_> = keys[n_train..].to_vec();
    train.sort_unstable();
    test.sort_unstable();
    Ok(Split {
        train,
        test,
        ratio,
        seed,
    })
}

/// Per-user observed (train) item sets; the unobserved set is the implicit
/// complement over the item universe.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ObservedSets {
    per_user: Vec<Vec<u32>>, // sorted
    n_items: usize,
}

impl ObservedSets {
    pub fn n_users(&self) -> usize {
        self.per_user.len()
    }

    pub fn n_items(&self) -> usize {
        self.n_items
    }

    /// I+_u as a sorted slice.
    pub fn observed(&self, u: u32) -> &[u32] {
        &self.per_user[u as usize]
    }

    pub fn is_observed(&self, u: u32, i: u32) -> bool {
        crate::sets::contains(self.observed(u), i)
    }

    /// I-_u, materialized.
    pub fn unobserved(&self, u: u32) -> Vec<u32> {
        let obs = self.observed(u);
        let mut out = Vec::with_capacity(self.n_items - obs.len());
        let mut j = 0;
        for i in 0..self.n_items as u32 {
            if j < obs.len() && obs[j] == i {
                j += 1;
            } else {
                out.push(i);
            }
        }
        out
    }
}

/// Observed sets from the train half of a split.
pub fn observed_sets(split: &Split, ds: &Dataset) -> ObservedSets {
    let mut per_user = vec![Vec::new(); ds.n_users()];
    for &(u, i) in split.train() {
        per_user[u as usize].push(i);
    }
    for xs in &mut per_user {
        crate::sets::normalize(xs);
    }
    ObservedSets {
        per_user,
        n_items: ds.n_items(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tmpfile(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        std::io::Write::write_all(&mut f, content.as_bytes()).unwrap();
        f
    }

    fn toy_dataset() -> Dataset {
        Dataset::from_records(
            vec![(7, 2, 4.0), (7, 5, 5.0), (9, 2, 3.0)],
            FeedbackKind::Explicit,
        )
        .unwrap()
    }

    #[test]
    fn ingest_reindexes_contiguously() {
        let f = tmpfile("7\t2\t4\n7\t5\t5\n9\t2\t3\n");
        let ds = ingest_interactions(f.path(), FeedbackKind::Explicit).unwrap();
        assert_eq!(ds.n_users(), 2);
        assert_eq!(ds.n_items(), 2);
        assert_eq!(ds.interactions().len(), 3);
        assert_eq!(ds.user_ids().internal(7), Some(0));
        assert_eq!(ds.user_ids().internal(9), Some(1));
        assert_eq!(ds.item_ids().internal(2), Some(0));
        assert_eq!(ds.item_ids().internal(5), Some(1));
        assert_eq!(ds.value(0, 1), Some(5.0));
    }

    #[test]
    fn ingest_empty_file_errors() {
        let f = tmpfile("");
        let err = ingest_interactions(f.path(), FeedbackKind::Explicit).unwrap_err();
        assert!(err.to_string().contains("no interactions"), "{err}");
    }

    #[test]
    fn ingest_malformed_line_names_line_number() {
        let f = tmpfile("a\tb\tc\n");
        let err = ingest_interactions(f.path(), FeedbackKind::Explicit).unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 1),
            other => panic!("expected parse error, got {other}"),
        }
    }

    #[test]
    fn ingest_rejects_out_of_scale_rating() {
        let f = tmpfile("1\t1\t6\n");
        let err = ingest_interactions(f.path(), FeedbackKind::Explicit).unwrap_err();
        assert!(err.to_string().contains("scale"), "{err}");
    }

    #[test]
    fn ingest_rejects_fractional_implicit_count() {
        let f = tmpfile("1\t1\t1.5\n");
        let err = ingest_interactions(f.path(), FeedbackKind::Implicit).unwrap_err();
        assert!(err.to_string().contains("non-negative integer"), "{err}");
    }

    #[test]
    fn ingest_rejects_duplicate_key() {
        let f = tmpfile("1\t1\t3\n1\t1\t4\n");
        let err = ingest_interactions(f.path(), FeedbackKind::Explicit).unwrap_err();
        assert!(err.to_string().contains("duplicate"), "{err}");
    }

    #[test]
    fn ratings_round_trip() {
        let ds = toy_dataset();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ratings.tsv");
        ds.write_ratings(&path).unwrap();
        let back = ingest_interactions(&path, FeedbackKind::Explicit).unwrap();
        assert_eq!(ds, back);
    }

    #[test]
    fn graph_ingest_basic_and_dedup() {
        let ds = toy_dataset(); // users 7 -> 0, 9 -> 1
        let trust = tmpfile("7\t9\n7\t9\n");
        let distrust = tmpfile("9\t7\n");
        let got = ingest_signed_graph(trust.path(), distrust.path(), ds.user_ids()).unwrap();
        assert_eq!(got.graph.friends(0), &[1]);
        assert_eq!(got.graph.foes(1), &[0]);
        assert_eq!(got.graph.friends(1), &[] as &[u32]);
        assert_eq!(got.dropped_unknown, 0);
    }

    #[test]
    fn graph_ingest_drops_unknown_users() {
        let ds = toy_dataset();
        let trust = tmpfile("7\t9\n7\t12345\n");
        let distrust = tmpfile("");
        let got = ingest_signed_graph(trust.path(), distrust.path(), ds.user_ids()).unwrap();
        assert_eq!(got.dropped_unknown, 1);
        assert_eq!(got.graph.friends(0), &[1]);
    }

    #[test]
    fn graph_ingest_conflict_is_an_error() {
        let ds = toy_dataset();
        let trust = tmpfile("7\t9\n");
        let distrust = tmpfile("7\t9\n");
        let err = ingest_signed_graph(trust.path(), distrust.path(), ds.user_ids()).unwrap_err();
        match err {
            Error::SignConflict(7, 9) => {}
            other => panic!("expected conflict on (7, 9), got {other}"),
        }
    }

    fn grid_dataset(n_users: u64, n_items: u64) -> Dataset {
        let mut records = Vec::new();
        for u in 0..n_users {
            for i in 0..n_items {
                records.push((u, i, 1.0 + ((u + i) % 5) as f64));
            }
        }
        Dataset::from_records(records, FeedbackKind::Explicit).unwrap()
    }

    #[test]
    fn split_counts_and_determinism() {
        let ds = grid_dataset(2, 5); // 10 interactions
        let s1 = split_ratings(&ds, 0.7, 11).unwrap();
        assert_eq!(s1.train().len(), 7);
        assert_eq!(s1.test().len(), 3);
        let s2 = split_ratings(&ds, 0.7, 11).unwrap();
        assert_eq!(s1, s2);
        let s3 = split_ratings(&ds, 0.7, 12).unwrap();
        assert_ne!(s1, s3);
    }

    #[test]
    fn split_is_a_partition() {
        let ds = grid_dataset(4, 10);
        let s = split_ratings(&ds, 0.5, 3).unwrap();
        let train: HashSet<_> = s.train().iter().copied().collect();
        let test: HashSet<_> = s.test().iter().copied().collect();
        assert!(train.is_disjoint(&test));
        assert_eq!(train.len() + test.len(), ds.interactions().len());
    }

    #[test]
    fn split_half_of_thousand_lands_in_band() {
        let ds = grid_dataset(20, 50); // 1000 interactions
        let s = split_ratings(&ds, 0.5, 42).unwrap();
        assert!((495..=505).contains(&s.train().len()), "{}", s.train().len());
    }

    #[test]
    fn split_rejects_bad_ratio() {
        let ds = grid_dataset(2, 5);
        assert!(split_ratings(&ds, 0.0, 1).is_err());
        assert!(split_ratings(&ds, 1.0, 1).is_err());
        assert!(split_ratings(&ds, -0.2, 1).is_err());
    }

    #[test]
    fn split_save_load_round_trip() {
        let ds = grid_dataset(3, 7);
        let s = split_ratings(&ds, 0.7, 5).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("split.tsv");
        s.save(&path, &ds).unwrap();
        let back = Split::load(&path, &ds).unwrap();
        assert_eq!(s, back);
    }

    #[test]
    fn observed_sets_partition_items() {
        let ds = Dataset::from_records(
            vec![(0, 1, 3.0), (0, 2, 4.0), (0, 0, 2.0), (0, 3, 5.0)],
            FeedbackKind::Explicit,
        )
        .unwrap();
        // force a split where user 0 trains on items 1 and 2
        let keys: HashSet<(u32, u32)> = [(0, 1), (0, 2)].into_iter().collect();
        let restricted = ds.restrict(&keys);
        assert_eq!(restricted.interactions().len(), 2);

        let split = split_ratings(&ds, 0.5, 0).unwrap();
        let obs = observed_sets(&split, &ds);
        for u in 0..ds.n_users() as u32 {
            let mut all: Vec<u32> = obs.observed(u).to_vec();
            all.extend(obs.unobserved(u));
            all.sort_unstable();
            assert_eq!(all, (0..ds.n_items() as u32).collect::<Vec<_>>());
        }
    }

    #[test]
    fn observed_sets_empty_and_full_edges() {
        let ds = grid_dataset(2, 3);
        let all_keys: Vec<(u32, u32)> = ds.interactions().iter().map(|r| (r.user, r.item)).collect();
        // everything observed for user 0, nothing for user 1
        let split = Split {
            train: all_keys.iter().copied().filter(|k| k.0 == 0).collect(),
            test: all_keys.iter().copied().filter(|k| k.0 == 1).collect(),
            ratio: 0.5,
            seed: 0,
        };
        let obs = observed_sets(&split, &ds);
        assert_eq!(obs.observed(0), &[0, 1, 2]);
        assert!(obs.unobserved(0).is_empty());
        assert!(obs.observed(1).is_empty());
        assert_eq!(obs.unobserved(1), vec![0, 1, 2]);
    }
}
