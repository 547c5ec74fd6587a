//! Integer-encoded triple stores in the OpenKE directory layout.
//!
//! A dataset directory holds `entity2id.txt`, `relation2id.txt`,
//! `train2id.txt`, `test2id.txt` and optionally `valid2id.txt`. Every file
//! starts with a count line. Triple files list `head tail relation` per line
//! (tail before relation).

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Triple {
    pub head: usize,
    pub relation: usize,
    pub tail: usize,
}

impl Triple {
    pub const fn new(head: usize, relation: usize, tail: usize) -> Self {
        Self {
            head,
            relation,
            tail,
        }
    }
}

impl fmt::Display for Triple {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {})", self.head, self.relation, self.tail)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("missing dataset file {0}")]
    MissingFile(PathBuf),
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{file}:{line}: {reason}")]
    Malformed {
        file: PathBuf,
        line: usize,
        reason: String,
    },
    #[error("{file}:{line}: {what} index {index} out of range (count {count})")]
    OutOfRange {
        file: PathBuf,
        line: usize,
        what: &'static str,
        index: usize,
        count: usize,
    },
    #[error("{file}: header declares {expected} records but {found} were found")]
    CountMismatch {
        file: PathBuf,
        expected: usize,
        found: usize,
    },
    #[error("{file}:{line}: duplicate triple {triple}")]
    Duplicate {
        file: PathBuf,
        line: usize,
        triple: Triple,
    },
    #[error("{split} triple {triple} out of range for {entities} entities / {relations} relations")]
    InvalidTriple {
        split: &'static str,
        triple: Triple,
        entities: usize,
        relations: usize,
    },
    #[error("duplicate {split} triple {triple}")]
    DuplicateTriple { split: &'static str, triple: Triple },
    #[error("cannot draw {requested} distinct triples from {available} possible")]
    Infeasible { requested: u128, available: u128 },
    #[error("a perfect matching needs an even entity count, got {0}")]
    OddEntityCount(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub entity_count: usize,
    pub relation_count: usize,
    pub train: Vec<Triple>,
    pub valid: Vec<Triple>,
    pub test: Vec<Triple>,
    pub entity_names: Option<Vec<String>>,
    pub relation_names: Option<Vec<String>>,
}

impl Dataset {
    /// Validates bounds and per-split uniqueness.
    pub fn new(
        entity_count: usize,
        relation_count: usize,
        train: Vec<Triple>,
        valid: Vec<Triple>,
        test: Vec<Triple>,
    ) -> Result<Self, DataError> {
        let ds = Self {
            entity_count,
            relation_count,
            train,
            valid,
            test,
            entity_names: None,
            relation_names: None,
        };
        for (split, triples) in ds.splits() {
            let mut seen = HashSet::with_capacity(triples.len());
            for &t in triples {
                if !ds.in_bounds(t) {
                    return Err(DataError::InvalidTriple {
                        split,
                        triple: t,
                        entities: entity_count,
                        relations: relation_count,
                    });
                }
                if !seen.insert(t) {
                    return Err(DataError::DuplicateTriple { split, triple: t });
                }
            }
        }
        Ok(ds)
    }

    pub fn in_bounds(&self, t: Triple) -> bool {
        t.head < self.entity_count && t.tail < self.entity_count && t.relation < self.relation_count
    }

    pub fn splits(&self) -> [(&'static str, &[Triple]); 3] {
        [("train", &self.train), ("valid", &self.valid), ("test", &self.test)]
    }

    /// Every known triple across train, valid and test; the filter set for
    /// filtered ranking.
    pub fn all_known(&self) -> impl Iterator<Item = Triple> + '_ {
        self.train.iter().chain(&self.valid).chain(&self.test).copied()
    }

    /// A dataset of `positive_count` distinct uniformly drawn training
    /// triples, deterministic in `seed`. Valid and test are empty.
    pub fn make_synthetic(
        seed: u64,
        entity_count: usize,
        relation_count: usize,
        positive_count: usize,
    ) -> Result<Self, DataError> {
        let mut triples = sample_triples(seed, entity_count, relation_count, positive_count)?;
        triples.sort_unstable();
        Self::new(entity_count, relation_count, triples, Vec::new(), Vec::new())
    }

    /// Planted structure: each relation is a random perfect matching of the
    /// entities, stored in both directions, so every `(h, r)` has exactly one
    /// tail and every `(r, t)` exactly one head. `|E|·|R|` training triples.
    pub fn make_planted(seed: u64, entity_count: usize, relation_count: usize) -> Result<Self, DataError> {
        if entity_count % 2 != 0 {
            return Err(DataError::OddEntityCount(entity_count));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut train = Vec::with_capacity(entity_count * relation_count);
        let mut order: Vec<usize> = (0..entity_count).collect();
        for r in 0..relation_count {
            order.shuffle(&mut rng);
            for pair in order.chunks_exact(2) {
                train.push(Triple::new(pair[0], r, pair[1]));
                train.push(Triple::new(pair[1], r, pair[0]));
            }
        }
        train.sort_unstable();
        Self::new(entity_count, relation_count, train, Vec::new(), Vec::new())
    }

    /// Like [`Dataset::make_synthetic`] but also draws disjoint valid/test
    /// splits of the given sizes from the same pool.
    pub fn make_synthetic_split(
        seed: u64,
        entity_count: usize,
        relation_count: usize,
        train: usize,
        valid: usize,
        test: usize,
    ) -> Result<Self, DataError> {
        let all = sample_triples(seed, entity_count, relation_count, train + valid + test)?;
        let mut train_set = all[..train].to_vec();
        let mut valid_set = all[train..train + valid].to_vec();
        let mut test_set = all[train + valid..].to_vec();
        train_set.sort_unstable();
        valid_set.sort_unstable();
        test_set.sort_unstable();
        Self::new(entity_count, relation_count, train_set, valid_set, test_set)
    }

    /// Writes the dataset in the OpenKE layout. Entity and relation names
    /// default to their indices when no dictionary is attached.
    pub fn write_openke(&self, dir: &Path) -> Result<(), DataError> {
        fs::create_dir_all(dir).map_err(|source| DataError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
        let dict = |names: &Option<Vec<String>>, count: usize| -> String {
            let mut s = format!("{count}\n");
            for i in 0..count {
                match names {
                    Some(n) => s.push_str(&format!("{}\t{i}\n", n[i])),
                    None => s.push_str(&format!("{i}\t{i}\n")),
                }
            }
            s
        };
        write_file(&dir.join(ENTITY_FILE), &dict(&self.entity_names, self.entity_count))?;
        write_file(&dir.join(RELATION_FILE), &dict(&self.relation_names, self.relation_count))?;
        for (file, triples) in [(TRAIN_FILE, &self.train), (VALID_FILE, &self.valid), (TEST_FILE, &self.test)] {
            let mut s = format!("{}\n", triples.len());
            for t in triples {
                s.push_str(&format!("{} {} {}\n", t.head, t.tail, t.relation));
            }
            write_file(&dir.join(file), &s)?;
        }
        Ok(())
    }
}

fn write_file(path: &Path, contents: &str) -> Result<(), DataError> {
    let io = |source| DataError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut f = fs::File::create(path).map_err(io)?;
    f.write_all(contents.as_bytes()).map_err(io)
}

fn sample_triples(
    seed: u64,
    entity_count: usize,
    relation_count: usize,
    count: usize,
) -> Result<Vec<Triple>, DataError> {
    let available = (entity_count as u128) * (entity_count as u128) * (relation_count as u128);
    if count as u128 > available {
        return Err(DataError::Infeasible {
            requested: count as u128,
            available,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let per_relation = entity_count * entity_count;
    let picks = rand::seq::index::sample(&mut rng, available as usize, count);
    Ok(picks
        .into_iter()
        .map(|code| {
            let relation = code / per_relation;
            let rest = code % per_relation;
            Triple::new(rest / entity_count, relation, rest % entity_count)
        })
        .collect())
}

pub const ENTITY_FILE: &str = "entity2id.txt";
pub const RELATION_FILE: &str = "relation2id.txt";
pub const TRAIN_FILE: &str = "train2id.txt";
pub const VALID_FILE: &str = "valid2id.txt";
pub const TEST_FILE: &str = "test2id.txt";

fn read_lines(path: &Path) -> Result<String, DataError> {
    if !path.exists() {
        return Err(DataError::MissingFile(path.to_path_buf()));
    }
    fs::read_to_string(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Splits a file into its header count and the remaining non-empty lines
/// (with 1-based line numbers).
fn header_and_body(path: &Path, text: &str) -> Result<(usize, Vec<(usize, String)>), DataError> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let (line_no, header) = lines
        .by_ref()
        .find(|(_, l)| !l.trim().is_empty())
        .ok_or_else(|| DataError::Malformed {
            file: path.to_path_buf(),
            line: 1,
            reason: "empty file, expected a count line".into(),
        })?;
    let count = header.trim().parse::<usize>().map_err(|_| DataError::Malformed {
        file: path.to_path_buf(),
        line: line_no,
        reason: format!("expected a count, found `{}`", header.trim()),
    })?;
    let body = lines
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| (n, l.to_string()))
        .collect::<Vec<_>>();
    if body.len() != count {
        return Err(DataError::CountMismatch {
            file: path.to_path_buf(),
            expected: count,
            found: body.len(),
        });
    }
    Ok((count, body))
}

fn load_dictionary(path: &Path, what: &'static str) -> Result<Vec<String>, DataError> {
    let text = read_lines(path)?;
    let (count, body) = header_and_body(path, &text)?;
    let mut names: Vec<Option<String>> = vec![None; count];
    for (line, content) in body {
        let malformed = |reason: String| DataError::Malformed {
            file: path.to_path_buf(),
            line,
            reason,
        };
        let (name, id) = content
            .trim_end()
            .rsplit_once(|c: char| c.is_whitespace())
            .ok_or_else(|| malformed("expected `name<TAB>id`".into()))?;
        let id: usize = id
            .parse()
            .map_err(|_| malformed(format!("invalid id `{id}`")))?;
        if id >= count {
            return Err(DataError::OutOfRange {
                file: path.to_path_buf(),
                line,
                what,
                index: id,
                count,
            });
        }
        if names[id].is_some() {
            return Err(malformed(format!("{what} id {id} assigned twice")));
        }
        names[id] = Some(name.trim().to_string());
    }
    // count matches and ids are unique and in range, so every slot is filled
    Ok(names.into_iter().map(|n| n.unwrap_or_default()).collect())
}

fn load_triples(
    path: &Path,
    entity_count: usize,
    relation_count: usize,
) -> Result<Vec<Triple>, DataError> {
    let text = read_lines(path)?;
    let (count, body) = header_and_body(path, &text)?;
    let mut triples = Vec::with_capacity(count);
    let mut seen = HashSet::with_capacity(count);
    for (line, content) in body {
        let malformed = |reason: String| DataError::Malformed {
            file: path.to_path_buf(),
            line,
            reason,
        };
        let fields: Vec<&str> = content.split_whitespace().collect();
        if fields.len() != 3 {
            return Err(malformed(format!(
                "expected `head tail relation`, found {} fields",
                fields.len()
            )));
        }
        let mut nums = [0usize; 3];
        for (slot, f) in nums.iter_mut().zip(&fields) {
            *slot = f
                .parse()
                .map_err(|_| malformed(format!("invalid integer `{f}`")))?;
        }
        let [head, tail, relation] = nums;
        for (what, index, bound) in [
            ("head entity", head, entity_count),
            ("tail entity", tail, entity_count),
            ("relation", relation, relation_count),
        ] {
            if index >= bound {
                return Err(DataError::OutOfRange {
                    file: path.to_path_buf(),
                    line,
                    what,
                    index,
                    count: bound,
                });
            }
        }
        let t = Triple::new(head, relation, tail);
        if !seen.insert(t) {
            return Err(DataError::Duplicate {
                file: path.to_path_buf(),
                line,
                triple: t,
            });
        }
        triples.push(t);
    }
    Ok(triples)
}

pub fn load_dataset(dir: &Path) -> Result<Dataset, DataError> {
    if !dir.is_dir() {
        return Err(DataError::MissingFile(dir.to_path_buf()));
    }
    let entity_names = load_dictionary(&dir.join(ENTITY_FILE), "entity")?;
    let relation_names = load_dictionary(&dir.join(RELATION_FILE), "relation")?;
    let (e, r) = (entity_names.len(), relation_names.len());
    let train = load_triples(&dir.join(TRAIN_FILE), e, r)?;
    let test = load_triples(&dir.join(TEST_FILE), e, r)?;
    let valid_path = dir.join(VALID_FILE);
    let valid = if valid_path.exists() {
        load_triples(&valid_path, e, r)?
    } else {
        Vec::new()
    };
    Ok(Dataset {
        entity_count: e,
        relation_count: r,
        train,
        valid,
        test,
        entity_names: Some(entity_names),
        relation_names: Some(relation_names),
    })
}

/// `(h, r) → tails` and `(t, r) → heads`, each list sorted and unique.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AdjacencyIndex {
    by_head_relation: HashMap<(usize, usize), Vec<usize>>,
    by_tail_relation: HashMap<(usize, usize), Vec<usize>>,
    len: usize,
}

impl AdjacencyIndex {
    /// Builds the index; repeated triples collapse to one entry.
    pub fn build<I: IntoIterator<Item = Triple>>(triples: I) -> Self {
        let mut by_head_relation: HashMap<(usize, usize), Vec<usize>> = HashMap::new();
        let mut by_tail_relation: HashMap<(usize, usize), Vec<usize>> = HashMap::new();
        for t in triples {
            by_head_relation.entry((t.head, t.relation)).or_default().push(t.tail);
            by_tail_relation.entry((t.tail, t.relation)).or_default().push(t.head);
        }
        let mut len = 0;
        for v in by_head_relation.values_mut() {
            v.sort_unstable();
            v.dedup();
            len += v.len();
        }
        for v in by_tail_relation.values_mut() {
            v.sort_unstable();
            v.dedup();
        }
        Self {
            by_head_relation,
            by_tail_relation,
            len,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn tails(&self, head: usize, relation: usize) -> &[usize] {
        self.by_head_relation
            .get(&(head, relation))
            .map_or(&[], Vec::as_slice)
    }

    pub fn heads(&self, tail: usize, relation: usize) -> &[usize] {
        self.by_tail_relation
            .get(&(tail, relation))
            .map_or(&[], Vec::as_slice)
    }

    pub fn contains(&self, t: Triple) -> bool {
        self.tails(t.head, t.relation).binary_search(&t.tail).is_ok()
    }

    pub fn head_relation_keys(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.by_head_relation.keys().copied()
    }

    /// All indexed triples in sorted order.
    pub fn triples(&self) -> Vec<Triple> {
        let mut out: Vec<Triple> = self
            .by_head_relation
            .iter()
            .flat_map(|(&(h, r), tails)| tails.iter().map(move |&t| Triple::new(h, r, t)))
            .collect();
        out.sort_unstable();
        out
    }

    /// Same triples read back through the tail-side map.
    pub fn triples_from_tail_side(&self) -> Vec<Triple> {
        let mut out: Vec<Triple> = self
            .by_tail_relation
            .iter()
            .flat_map(|(&(t, r), heads)| heads.iter().map(move |&h| Triple::new(h, r, t)))
            .collect();
        out.sort_unstable();
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    fn write(dir: &Path, name: &str, body: &str) {
        fs::write(dir.join(name), body).unwrap();
    }

    fn tiny_dir() -> tempfile::TempDir {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), ENTITY_FILE, "3\na\t0\nb\t1\nc\t2\n");
        write(dir.path(), RELATION_FILE, "2\nlikes\t0\nknows\t1\n");
        write(dir.path(), TRAIN_FILE, "3\n0 1 0\n1 2 1\n2 0 0\n");
        write(dir.path(), TEST_FILE, "1\n0 2 1\n");
        dir
    }

    #[test]
    fn loads_openke_layout_with_tail_before_relation() {
        let dir = tiny_dir();
        let ds = load_dataset(dir.path()).unwrap();
        assert_eq!(ds.entity_count, 3);
        assert_eq!(ds.relation_count, 2);
        assert_eq!(
            ds.train,
            vec![Triple::new(0, 0, 1), Triple::new(1, 1, 2), Triple::new(2, 0, 0)]
        );
        assert_eq!(ds.test, vec![Triple::new(0, 1, 2)]);
        assert!(ds.valid.is_empty());
        assert_eq!(ds.relation_names.as_ref().unwrap()[1], "knows");
    }

    #[test]
    fn count_mismatch_is_reported() {
        let dir = tiny_dir();
        write(dir.path(), TRAIN_FILE, "2\n0 1 0\n1 2 1\n2 0 0\n");
        let err = load_dataset(dir.path()).unwrap_err();
        assert!(
            matches!(err, DataError::CountMismatch { expected: 2, found: 3, .. }),
            "{err}"
        );
        assert!(err.to_string().contains("train2id.txt"));
    }

    #[test]
    fn out_of_range_names_file_and_line() {
        let dir = tiny_dir();
        write(dir.path(), TRAIN_FILE, "2\n0 1 0\n1 2 5\n");
        let err = load_dataset(dir.path()).unwrap_err();
        match &err {
            DataError::OutOfRange { line, what, index, .. } => {
                assert_eq!(*line, 3);
                assert_eq!(*what, "relation");
                assert_eq!(*index, 5);
            }
            other => panic!("unexpected {other}"),
        }
        assert!(err.to_string().contains("train2id.txt:3"));
    }

    #[test]
    fn malformed_and_missing_files() {
        let dir = tiny_dir();
        write(dir.path(), TEST_FILE, "1\n0 x 1\n");
        assert!(matches!(load_dataset(dir.path()), Err(DataError::Malformed { line: 2, .. })));

        let dir = tiny_dir();
        fs::remove_file(dir.path().join(TEST_FILE)).unwrap();
        let err = load_dataset(dir.path()).unwrap_err();
        assert!(matches!(err, DataError::MissingFile(ref p) if p.ends_with(TEST_FILE)));
    }

    #[test]
    fn duplicate_lines_are_rejected() {
        let dir = tiny_dir();
        write(dir.path(), TRAIN_FILE, "2\n0 1 0\n0 1 0\n");
        assert!(matches!(load_dataset(dir.path()), Err(DataError::Duplicate { line: 3, .. })));
    }

    #[test]
    fn optional_valid_split_is_read() {
        let dir = tiny_dir();
        write(dir.path(), VALID_FILE, "1\n1 0 1\n");
        let ds = load_dataset(dir.path()).unwrap();
        assert_eq!(ds.valid, vec![Triple::new(1, 1, 0)]);
    }

    #[test]
    fn write_then_load_round_trips() {
        let ds = Dataset::make_synthetic_split(5, 12, 3, 40, 5, 6).unwrap();
        let dir = tempfile::tempdir().unwrap();
        ds.write_openke(dir.path()).unwrap();
        let back = load_dataset(dir.path()).unwrap();
        assert_eq!(back.train, ds.train);
        assert_eq!(back.valid, ds.valid);
        assert_eq!(back.test, ds.test);
    }

    #[test]
    fn index_examples() {
        let empty = AdjacencyIndex::build(Vec::new());
        assert!(empty.is_empty());
        assert!(empty.triples().is_empty());

        let idx = AdjacencyIndex::build([Triple::new(0, 0, 1)]);
        assert_eq!(idx.tails(0, 0), &[1]);
        assert_eq!(idx.heads(1, 0), &[0]);
        assert!(idx.tails(1, 0).is_empty());
        assert!(idx.contains(Triple::new(0, 0, 1)));
        assert!(!idx.contains(Triple::new(1, 0, 0)));
    }

    #[test]
    fn index_round_trips_random_triples() {
        let ds = Dataset::make_synthetic(17, 20, 3, 100).unwrap();
        let idx = AdjacencyIndex::build(ds.train.iter().copied());
        let input: BTreeSet<Triple> = ds.train.iter().copied().collect();
        let forward: BTreeSet<Triple> = idx.triples().into_iter().collect();
        let backward: BTreeSet<Triple> = idx.triples_from_tail_side().into_iter().collect();
        assert_eq!(forward, input);
        assert_eq!(backward, input);
        let total: usize = idx.head_relation_keys().map(|(h, r)| idx.tails(h, r).len()).sum();
        assert_eq!(total, ds.train.len());
    }

    #[test]
    fn synthetic_is_deterministic_and_saturates() {
        let a = Dataset::make_synthetic(1, 4, 2, 5).unwrap();
        let b = Dataset::make_synthetic(1, 4, 2, 5).unwrap();
        assert_eq!(a.train, b.train);
        assert_eq!(a.train.len(), 5);

        let full = Dataset::make_synthetic(9, 4, 2, 32).unwrap();
        let mut all = Vec::new();
        for h in 0..4 {
            for r in 0..2 {
                for t in 0..4 {
                    all.push(Triple::new(h, r, t));
                }
            }
        }
        all.sort_unstable();
        assert_eq!(full.train, all);

        assert!(matches!(
            Dataset::make_synthetic(1, 4, 2, 33),
            Err(DataError::Infeasible { .. })
        ));
    }

    #[test]
    fn different_seeds_differ() {
        let a = Dataset::make_synthetic(1, 30, 3, 50).unwrap();
        let b = Dataset::make_synthetic(2, 30, 3, 50).unwrap();
        assert_ne!(a.train, b.train);
    }

    #[test]
    fn constructor_validates() {
        assert!(matches!(
            Dataset::new(2, 1, vec![Triple::new(0, 1, 0)], vec![], vec![]),
            Err(DataError::InvalidTriple { .. })
        ));
        assert!(matches!(
            Dataset::new(2, 1, vec![Triple::new(0, 0, 1); 2], vec![], vec![]),
            Err(DataError::DuplicateTriple { .. })
        ));
    }

    #[test]
    fn planted_matchings() {
        let ds = Dataset::make_planted(5, 50, 4).unwrap();
        assert_eq!(ds.train.len(), 200);
        let index = AdjacencyIndex::build(ds.train.iter().copied());
        for h in 0..50 {
            for r in 0..4 {
                let tails = index.tails(h, r);
                assert_eq!(tails.len(), 1);
                assert_ne!(tails[0], h);
                assert_eq!(index.tails(tails[0], r), &[h]);
            }
        }
        assert_eq!(ds, Dataset::make_planted(5, 50, 4).unwrap());
        assert!(matches!(Dataset::make_planted(5, 7, 1), Err(DataError::OddEntityCount(7))));
    }
}
