//! Interaction loading, per-user splitting and bipartite graph construction.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sparse::CsrMatrix;

/// Whitespace-delimited interaction file layouts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum InputFormat {
    /// `user item` per line.
    EdgeList,
    /// `user item item ...` per line.
    AdjacencyList,
}

/// Deduplicated interactions with contiguous internal ids.
///
/// Internal ids are assigned in ascending order of the original ids, so the
/// mapping does not depend on line order in the source file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Interactions {
    pub user_ids: Vec<u64>,
    pub item_ids: Vec<u64>,
    /// Sorted `(user, item)` pairs over internal ids.
    pub edges: Vec<(usize, usize)>,
}

impl Interactions {
    pub fn num_users(&self) -> usize {
        self.user_ids.len()
    }

    pub fn num_items(&self) -> usize {
        self.item_ids.len()
    }

    /// Re-indexes arbitrary original-id pairs.
    pub fn from_original_pairs(pairs: impl IntoIterator<Item = (u64, u64)>) -> Self {
        let unique: BTreeSet<(u64, u64)> = pairs.into_iter().collect();
        let users: BTreeSet<u64> = unique.iter().map(|p| p.0).collect();
        let items: BTreeSet<u64> = unique.iter().map(|p| p.1).collect();
        let user_index: BTreeMap<u64, usize> = users.iter().enumerate().map(|(i, &u)| (u, i)).collect();
        let item_index: BTreeMap<u64, usize> = items.iter().enumerate().map(|(i, &v)| (v, i)).collect();
        let mut edges: Vec<(usize, usize)> = unique
            .iter()
            .map(|(u, i)| (user_index[u], item_index[i]))
            .collect();
        edges.sort_unstable();
        Self {
            user_ids: users.into_iter().collect(),
            item_ids: items.into_iter().collect(),
            edges,
        }
    }

    /// Writes `original_id<TAB>internal_index` lines for users and items.
    pub fn write_id_maps(&self, users_path: &Path, items_path: &Path) -> Result<()> {
        fs::write(users_path, render_id_map(&self.user_ids))?;
        fs::write(items_path, render_id_map(&self.item_ids))?;
        Ok(())
    }

    pub fn read_id_map(path: &Path) -> Result<Vec<u64>> {
        let text = fs::read_to_string(path)?;
        let mut ids = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let parse_err = |message: &str| Error::Parse {
                path: path.to_path_buf(),
                line: n + 1,
                message: message.to_string(),
            };
            let (orig, idx) = line.split_once('\t').ok_or_else(|| parse_err("expected two tab-separated fields"))?;
            let orig: u64 = orig.parse().map_err(|_| parse_err("bad original id"))?;
            let idx: usize = idx.parse().map_err(|_| parse_err("bad internal index"))?;
            if idx != ids.len() {
                return Err(parse_err("internal indices must be contiguous and ascending"));
            }
            ids.push(orig);
        }
        Ok(ids)
    }
}

fn render_id_map(ids: &[u64]) -> String {
    let mut out = String::with_capacity(ids.len() * 12);
    for (i, id) in ids.iter().enumerate() {
        let _ = writeln!(out, "{id}\t{i}");
    }
    out
}

/// Reads an interaction file, deduplicating pairs and re-indexing ids.
pub fn load_interactions(path: &Path, format: InputFormat) -> Result<Interactions> {
    let file = fs::File::open(path)?;
    let mut pairs = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        let mut tokens = line.split_whitespace().peekable();
        if tokens.peek().is_none() {
            continue;
        }
        let mut ids = Vec::new();
        for tok in tokens {
            let id: u64 = tok.parse().map_err(|_| Error::Parse {
                path: path.to_path_buf(),
                line: n + 1,
                message: format!("expected a non-negative integer, found {tok:?}"),
            })?;
            ids.push(id);
        }
        match format {
            InputFormat::EdgeList => {
                if ids.len() != 2 {
                    return Err(Error::Parse {
                        path: path.to_path_buf(),
                        line: n + 1,
                        message: format!("expected 2 fields, found {}", ids.len()),
                    });
                }
                pairs.push((ids[0], ids[1]));
            }
            InputFormat::AdjacencyList => {
                let user = ids[0];
                pairs.extend(ids[1..].iter().map(|&item| (user, item)));
            }
        }
    }
    if pairs.is_empty() {
        return Err(Error::EmptyDataset(path.to_path_buf()));
    }
    Ok(Interactions::from_original_pairs(pairs))
}

pub fn density(num_users: usize, num_items: usize, num_edges: usize) -> f64 {
    num_edges as f64 / (num_users as f64 * num_items as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "train" => Ok(Split::Train),
            "validation" | "valid" => Ok(Split::Validation),
            "test" => Ok(Split::Test),
            _ => Err(format!("unknown split {s:?}")),
        }
    }
}

/// Normalized train/validation/test proportions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRatio {
    pub train: f64,
    pub validation: f64,
    pub test: f64,
}

impl Default for SplitRatio {
    fn default() -> Self {
        Self {
            train: 0.7,
            validation: 0.1,
            test: 0.2,
        }
    }
}

impl SplitRatio {
    pub fn new(train: f64, validation: f64, test: f64) -> Result<Self> {
        let all = [train, validation, test];
        if all.iter().any(|x| !(x.is_finite() && *x > 0.0)) {
            return Err(Error::InvalidConfig(format!(
                "split ratio components must be positive, got {train}:{validation}:{test}"
            )));
        }
        let total: f64 = all.iter().sum();
        Ok(Self {
            train: train / total,
            validation: validation / total,
            test: test / total,
        })
    }

    /// `(train, validation, test)` counts for a user with `n` interactions.
    ///
    /// Users with fewer than three interactions keep everything in training.
    pub fn partition(&self, n: usize) -> (usize, usize, usize) {
        if n < 3 {
            return (n, 0, 0);
        }
        let valid = ((self.validation * n as f64).floor() as usize).max(1);
        let mut test = ((self.test * n as f64).floor() as usize).max(1);
        if valid + test >= n {
            test = n - valid - 1;
        }
        (n - valid - test, valid, test)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    pub num_users: usize,
    pub num_items: usize,
    pub seed: u64,
    pub ratio: SplitRatio,
    pub train: Vec<(usize, usize)>,
    pub validation: Vec<(usize, usize)>,
    pub test: Vec<(usize, usize)>,
    /// Users whose interactions were all kept in training (fewer than 3).
    pub train_only_users: Vec<usize>,
}

/// Per-user shuffled partition. Each user's item list is shuffled with one
/// shared RNG stream, consumed in ascending user order.
pub fn split_dataset(interactions: &Interactions, ratio: SplitRatio, seed: u64) -> DatasetSplit {
    let num_users = interactions.num_users();
    let mut per_user: Vec<Vec<usize>> = vec![Vec::new(); num_users];
    for &(u, i) in &interactions.edges {
        per_user[u].push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut train, mut validation, mut test) = (Vec::new(), Vec::new(), Vec::new());
    let mut train_only_users = Vec::new();
    for (u, items) in per_user.iter_mut().enumerate() {
        items.sort_unstable();
        let (n_train, n_valid, _) = ratio.partition(items.len());
        if n_train == items.len() {
            if !items.is_empty() {
                train_only_users.push(u);
            }
            train.extend(items.iter().map(|&i| (u, i)));
            continue;
        }
        items.shuffle(&mut rng);
        train.extend(items[..n_train].iter().map(|&i| (u, i)));
        validation.extend(items[n_train..n_train + n_valid].iter().map(|&i| (u, i)));
        test.extend(items[n_train + n_valid..].iter().map(|&i| (u, i)));
    }
    train.sort_unstable();
    validation.sort_unstable();
    test.sort_unstable();
    DatasetSplit {
        num_users,
        num_items: interactions.num_items(),
        seed,
        ratio,
        train,
        validation,
        test,
        train_only_users,
    }
}

const MANIFEST_MAGIC: &str = "# lth-rec split manifest v1";

impl DatasetSplit {
    pub fn num_edges(&self) -> usize {
        self.train.len() + self.validation.len() + self.test.len()
    }

    /// Line-oriented manifest: `#` header records followed by `user\titem\tsplit`
    /// rows in `(user, item)` order.
    pub fn to_manifest(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{MANIFEST_MAGIC}");
        let _ = writeln!(out, "# seed={}", self.seed);
        let _ = writeln!(
            out,
            "# ratio={}:{}:{}",
            self.ratio.train, self.ratio.validation, self.ratio.test
        );
        let _ = writeln!(
            out,
            "# rounding=validation:max(1,floor(r*n)),test:max(1,floor(r*n)),train:remainder;n<3:train-only"
        );
        let _ = writeln!(out, "# num_users={}", self.num_users);
        let _ = writeln!(out, "# num_items={}", self.num_items);
        let _ = writeln!(
            out,
            "# counts=train:{},validation:{},test:{}",
            self.train.len(),
            self.validation.len(),
            self.test.len()
        );
        let _ = writeln!(out, "# train_only_users={}", self.train_only_users.len());
        let mut rows: Vec<(usize, usize, Split)> = self
            .train
            .iter()
            .map(|&(u, i)| (u, i, Split::Train))
            .chain(self.validation.iter().map(|&(u, i)| (u, i, Split::Validation)))
            .chain(self.test.iter().map(|&(u, i)| (u, i, Split::Test)))
            .collect();
        rows.sort_unstable();
        for (u, i, s) in rows {
            let _ = writeln!(out, "{u}\t{i}\t{}", s.as_str());
        }
        out
    }

    pub fn write_manifest(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_manifest())?;
        Ok(())
    }

    pub fn read_manifest(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let err = |line: usize, message: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            message,
        };
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, MANIFEST_MAGIC)) => {}
            _ => return Err(err(1, "not a split manifest".into())),
        }
        let mut header: BTreeMap<String, String> = BTreeMap::new();
        let (mut train, mut validation, mut test) = (Vec::new(), Vec::new(), Vec::new());
        for (n, line) in lines {
            if let Some(rest) = line.strip_prefix("# ") {
                if let Some((k, v)) = rest.split_once('=') {
                    header.insert(k.to_string(), v.to_string());
                }
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 3 {
                return Err(err(n + 1, "expected user, item, split".into()));
            }
            let u: usize = fields[0].parse().map_err(|_| err(n + 1, "bad user".into()))?;
            let i: usize = fields[1].parse().map_err(|_| err(n + 1, "bad item".into()))?;
            let s: Split = fields[2].parse().map_err(|m| err(n + 1, m))?;
            match s {
                Split::Train => train.push((u, i)),
                Split::Validation => validation.push((u, i)),
                Split::Test => test.push((u, i)),
            }
        }
        let get = |k: &str| {
            header
                .get(k)
                .cloned()
                .ok_or_else(|| err(1, format!("missing header field {k}")))
        };
        let seed: u64 = get("seed")?.parse().map_err(|_| err(2, "bad seed".into()))?;
        let ratio_parts: Vec<f64> = get("ratio")?
            .split(':')
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| err(3, "bad ratio".into()))?;
        if ratio_parts.len() != 3 {
            return Err(err(3, "ratio needs three parts".into()));
        }
        let ratio = SplitRatio {
            train: ratio_parts[0],
            validation: ratio_parts[1],
            test: ratio_parts[2],
        };
        let num_users: usize = get("num_users")?.parse().map_err(|_| err(1, "bad num_users".into()))?;
        let num_items: usize = get("num_items")?.parse().map_err(|_| err(1, "bad num_items".into()))?;

        let mut held_users = vec![false; num_users];
        let mut seen_users = vec![false; num_users];
        for &(u, i) in train.iter().chain(&validation).chain(&test) {
            if u >= num_users || i >= num_items {
                return Err(err(0, format!("edge ({u}, {i}) out of range")));
            }
            seen_users[u] = true;
        }
        for &(u, _) in validation.iter().chain(&test) {
            held_users[u] = true;
        }
        let train_only_users = (0..num_users).filter(|&u| seen_users[u] && !held_users[u]).collect();
        Ok(Self {
            num_users,
            num_items,
            seed,
            ratio,
            train,
            validation,
            test,
            train_only_users,
        })
    }
}

/// Bipartite user-item graph over the training edges, with held-out items kept
/// per user for evaluation. Immutable once built.
#[derive(Debug, Clone)]
pub struct InteractionGraph {
    num_users: usize,
    num_items: usize,
    train_edges: Vec<(usize, usize)>,
    total_edges: usize,
    train_adjacency: Vec<Vec<usize>>,
    validation_items: Vec<Vec<usize>>,
    test_items: Vec<Vec<usize>>,
    interaction_matrix: CsrMatrix,
    adjacency: CsrMatrix,
    degrees: Vec<usize>,
}

pub fn build_graph(split: &DatasetSplit) -> Result<InteractionGraph> {
    let (m, n) = (split.num_users, split.num_items);
    let per_user = |edges: &[(usize, usize)]| -> Result<Vec<Vec<usize>>> {
        let mut lists = vec![Vec::new(); m];
        for &(u, i) in edges {
            if u >= m {
                return Err(Error::IndexOutOfRange { what: "user", index: u, len: m });
            }
            if i >= n {
                return Err(Error::IndexOutOfRange { what: "item", index: i, len: n });
            }
            lists[u].push(i);
        }
        for l in &mut lists {
            l.sort_unstable();
            l.dedup();
        }
        Ok(lists)
    };
    let train_adjacency = per_user(&split.train)?;
    let validation_items = per_user(&split.validation)?;
    let test_items = per_user(&split.test)?;

    let mut train_edges = split.train.clone();
    train_edges.sort_unstable();
    train_edges.dedup();

    let interaction_matrix =
        CsrMatrix::from_triplets(m, n, train_edges.iter().map(|&(u, i)| (u, i, 1.0)).collect())?;
    let adjacency = CsrMatrix::from_triplets(
        m + n,
        m + n,
        train_edges
            .iter()
            .flat_map(|&(u, i)| [(u, m + i, 1.0), (m + i, u, 1.0)])
            .collect(),
    )?;
    let degrees = (0..m + n).map(|r| adjacency.row_nnz(r)).collect();
    Ok(InteractionGraph {
        num_users: m,
        num_items: n,
        total_edges: split.num_edges(),
        train_edges,
        train_adjacency,
        validation_items,
        test_items,
        interaction_matrix,
        adjacency,
        degrees,
    })
}

impl InteractionGraph {
    pub fn num_users(&self) -> usize {
        self.num_users
    }

    pub fn num_items(&self) -> usize {
        self.num_items
    }

    pub fn num_nodes(&self) -> usize {
        self.num_users + self.num_items
    }

    pub fn train_edges(&self) -> &[(usize, usize)] {
        &self.train_edges
    }

    /// Sorted training items of a user.
    pub fn train_items(&self, user: usize) -> &[usize] {
        &self.train_adjacency[user]
    }

    pub fn has_train_edge(&self, user: usize, item: usize) -> bool {
        self.train_adjacency[user].binary_search(&item).is_ok()
    }

    pub fn heldout_items(&self, user: usize, split: Split) -> &[usize] {
        match split {
            Split::Train => &self.train_adjacency[user],
            Split::Validation => &self.validation_items[user],
            Split::Test => &self.test_items[user],
        }
    }

    pub fn interaction_matrix(&self) -> &CsrMatrix {
        &self.interaction_matrix
    }

    pub fn adjacency(&self) -> &CsrMatrix {
        &self.adjacency
    }

    pub fn degrees(&self) -> &[usize] {
        &self.degrees
    }

    /// Interactions over all splits divided by `M·N`.
    pub fn density(&self) -> f64 {
        density(self.num_users, self.num_items, self.total_edges)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_tmp(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn single_edge_file() {
        let f = write_tmp("0 0\n");
        let d = load_interactions(f.path(), InputFormat::EdgeList).unwrap();
        assert_eq!((d.num_users(), d.num_items(), d.edges.len()), (1, 1, 1));
    }

    #[test]
    fn duplicate_edges_collapse() {
        let f = write_tmp("0 1\n0 1\n");
        let d = load_interactions(f.path(), InputFormat::EdgeList).unwrap();
        assert_eq!(d.edges, vec![(0, 0)]);
        assert_eq!(d.item_ids, vec![1]);
    }

    #[test]
    fn adjacency_list_and_reindexing() {
        let f = write_tmp("10 5 7 5\n3 7\n\n");
        let d = load_interactions(f.path(), InputFormat::AdjacencyList).unwrap();
        assert_eq!(d.user_ids, vec![3, 10]);
        assert_eq!(d.item_ids, vec![5, 7]);
        assert_eq!(d.edges, vec![(0, 1), (1, 0), (1, 1)]);
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let f = write_tmp("0 1\n0 x\n");
        match load_interactions(f.path(), InputFormat::EdgeList) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
        let f = write_tmp("0 1 2\n");
        assert!(matches!(
            load_interactions(f.path(), InputFormat::EdgeList),
            Err(Error::Parse { line: 1, .. })
        ));
        let f = write_tmp("0 -1\n");
        assert!(load_interactions(f.path(), InputFormat::EdgeList).is_err());
    }

    #[test]
    fn empty_file_is_an_error() {
        let f = write_tmp("\n\n");
        assert!(matches!(
            load_interactions(f.path(), InputFormat::EdgeList),
            Err(Error::EmptyDataset(_))
        ));
    }

    #[test]
    fn ten_edges_split_seven_one_two() {
        assert_eq!(SplitRatio::default().partition(10), (7, 1, 2));
        assert_eq!(SplitRatio::default().partition(3), (1, 1, 1));
        assert_eq!(SplitRatio::default().partition(2), (2, 0, 0));
    }

    #[test]
    fn ratio_is_normalized_and_validated() {
        let r = SplitRatio::new(7.0, 1.0, 2.0).unwrap();
        assert!((r.train - 0.7).abs() < 1e-15);
        assert!(SplitRatio::new(0.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn kwai_density() {
        let d = density(7010, 80631, 292_042);
        assert!((d - 0.00052).abs() < 5e-6, "{d}");
    }

    #[test]
    fn degrees_for_user_with_two_items() {
        let inter = Interactions::from_original_pairs([(0, 0), (0, 1)]);
        let split = split_dataset(&inter, SplitRatio::default(), 1);
        let g = build_graph(&split).unwrap();
        assert_eq!(g.degrees(), &[2, 1, 1]);
    }

    #[test]
    fn single_edge_adjacency() {
        let inter = Interactions::from_original_pairs([(0, 0)]);
        let g = build_graph(&split_dataset(&inter, SplitRatio::default(), 1)).unwrap();
        assert_eq!(g.adjacency().get(0, 1), 1.0);
        assert_eq!(g.adjacency().get(1, 0), 1.0);
        assert_eq!(g.adjacency().nnz(), 2);
        assert_eq!(g.degrees(), &[1, 1]);
    }

    #[test]
    fn id_map_round_trip() {
        let inter = Interactions::from_original_pairs([(42, 7), (3, 9)]);
        let dir = tempfile::tempdir().unwrap();
        let (u, i) = (dir.path().join("u.tsv"), dir.path().join("i.tsv"));
        inter.write_id_maps(&u, &i).unwrap();
        assert_eq!(std::fs::read_to_string(&u).unwrap(), "3\t0\n42\t1\n");
        assert_eq!(Interactions::read_id_map(&u).unwrap(), inter.user_ids);
        assert_eq!(Interactions::read_id_map(&i).unwrap(), inter.item_ids);
    }
}
