//! Implicit-feedback interaction logs: parsing, k-core filtering and
//! per-user random holdout splits.
//!
//! Input files hold one interaction per line, `<user> <item> [weight]`,
//! separated by spaces or tabs. Lines starting with `#` and blank lines are
//! skipped. Weights are parsed for validation and then dropped: feedback is
//! treated as binary.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// One raw interaction, still keyed by the tokens found in the input file.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RawInteraction {
    pub user: String,
    pub item: String,
}

impl RawInteraction {
    pub fn new(user: impl Into<String>, item: impl Into<String>) -> Self {
        Self {
            user: user.into(),
            item: item.into(),
        }
    }
}

/// Reads an interaction file, preserving line order and duplicates.
pub fn load_interactions(path: impl AsRef<Path>) -> Result<Vec<RawInteraction>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let pairs = parse_interactions(&text, path)?;
    if pairs.is_empty() {
        return Err(Error::EmptyInput(path.to_path_buf()));
    }
    Ok(pairs)
}

/// Parses interaction text. `origin` is only used in error messages.
pub fn parse_interactions(text: &str, origin: &Path) -> Result<Vec<RawInteraction>> {
    let mut pairs = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let mut fields = trimmed.split_whitespace();
        let (Some(user), Some(item)) = (fields.next(), fields.next()) else {
            return Err(Error::parse(
                origin,
                lineno,
                format!("expected `<user> <item> [weight]`, got {trimmed:?}"),
            ));
        };
        if let Some(weight) = fields.next() {
            if weight.parse::<f64>().map(f64::is_finite) != Ok(true) {
                return Err(Error::parse(
                    origin,
                    lineno,
                    format!("weight {weight:?} is not a finite number"),
                ));
            }
        }
        if fields.next().is_some() {
            return Err(Error::parse(origin, lineno, "too many fields"));
        }
        pairs.push(RawInteraction::new(user, item));
    }
    Ok(pairs)
}

/// Removes exact duplicates, keeping the first occurrence of each pair.
pub fn dedup(pairs: &[RawInteraction]) -> Vec<RawInteraction> {
    let mut seen = HashSet::with_capacity(pairs.len());
    pairs
        .iter()
        .filter(|p| seen.insert((p.user.as_str(), p.item.as_str())))
        .cloned()
        .collect()
}

/// Iterative k-core filter: drops users and items with fewer than `k`
/// interactions until nothing changes. Duplicates are collapsed first.
pub fn kcore_filter(pairs: &[RawInteraction], k: usize) -> Vec<RawInteraction> {
    assert!(k >= 1, "k-core requires k >= 1");
    let unique = dedup(pairs);
    let mut alive = vec![true; unique.len()];
    loop {
        let mut user_deg: HashMap<&str, usize> = HashMap::new();
        let mut item_deg: HashMap<&str, usize> = HashMap::new();
        for (p, _) in unique.iter().zip(&alive).filter(|(_, a)| **a) {
            *user_deg.entry(&p.user).or_default() += 1;
            *item_deg.entry(&p.item).or_default() += 1;
        }
        let mut changed = false;
        for (p, a) in unique.iter().zip(alive.iter_mut()) {
            if *a && (user_deg[p.user.as_str()] < k || item_deg[p.item.as_str()] < k) {
                *a = false;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    unique
        .into_iter()
        .zip(alive)
        .filter_map(|(p, a)| a.then_some(p))
        .collect()
}

/// Train/validation/test proportions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitRatios {
    pub train: f64,
    pub valid: f64,
    pub test: f64,
}

impl SplitRatios {
    pub fn new(train: f64, valid: f64, test: f64) -> Result<Self> {
        let r = Self { train, valid, test };
        let all_positive = [train, valid, test].iter().all(|v| v.is_finite() && *v > 0.0);
        if !all_positive || (train + valid + test - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!(
                "split ratios must be positive and sum to 1, got ({train}, {valid}, {test})"
            )));
        }
        Ok(r)
    }

    /// Per-user counts `(train, valid, test)` for `n` items; valid and test
    /// are floored, train takes the rest.
    pub fn counts(&self, n: usize) -> (usize, usize, usize) {
        let valid = (n as f64 * self.valid + 1e-9).floor() as usize;
        let test = (n as f64 * self.test + 1e-9).floor() as usize;
        (n - valid - test, valid, test)
    }
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self {
            train: 0.8,
            valid: 0.1,
            test: 0.1,
        }
    }
}

/// Users removed by [`split`] for having fewer than three interactions.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SplitReport {
    pub dropped_users: Vec<(String, usize)>,
}

/// A densified, split implicit-feedback dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct InteractionDataset {
    pub num_users: usize,
    pub num_items: usize,
    /// Per-user train items, ascending.
    pub train_items: Vec<Vec<usize>>,
    pub valid_items: Vec<Vec<usize>>,
    pub test_items: Vec<Vec<usize>>,
    pub seed: u64,
    pub ratios: SplitRatios,
    pub user_tokens: Vec<String>,
    pub item_tokens: Vec<String>,
}

pub const MIN_USER_INTERACTIONS: usize = 3;

/// Densifies ids in order of first appearance and splits every user's items
/// at random with `seed`.
pub fn split(
    pairs: &[RawInteraction],
    ratios: SplitRatios,
    seed: u64,
) -> Result<(InteractionDataset, SplitReport)> {
    let unique = dedup(pairs);

    let mut per_user: Vec<(&str, Vec<&str>)> = Vec::new();
    let mut user_slot: HashMap<&str, usize> = HashMap::new();
    for p in &unique {
        let slot = *user_slot.entry(&p.user).or_insert_with(|| {
            per_user.push((&p.user, Vec::new()));
            per_user.len() - 1
        });
        per_user[slot].1.push(&p.item);
    }

    let mut report = SplitReport::default();
    per_user.retain(|(user, items)| {
        let keep = items.len() >= MIN_USER_INTERACTIONS;
        if !keep {
            report.dropped_users.push((user.to_string(), items.len()));
        }
        keep
    });
    if !report.dropped_users.is_empty() {
        log::info!(
            "dropped {} users with fewer than {} interactions",
            report.dropped_users.len(),
            MIN_USER_INTERACTIONS
        );
    }
    if per_user.is_empty() {
        return Err(Error::InvalidArgument(
            "no user has enough interactions to split".into(),
        ));
    }

    let mut item_tokens: Vec<String> = Vec::new();
    let mut item_id: HashMap<&str, usize> = HashMap::new();
    for (_, items) in &per_user {
        for it in items {
            item_id.entry(it).or_insert_with(|| {
                item_tokens.push(it.to_string());
                item_tokens.len() - 1
            });
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train_items = Vec::with_capacity(per_user.len());
    let mut valid_items = Vec::with_capacity(per_user.len());
    let mut test_items = Vec::with_capacity(per_user.len());
    for (_, items) in &per_user {
        let mut ids: Vec<usize> = items.iter().map(|it| item_id[it]).collect();
        ids.shuffle(&mut rng);
        let (_, n_valid, n_test) = ratios.counts(ids.len());
        let mut test: Vec<usize> = ids.drain(..n_test).collect();
        let mut valid: Vec<usize> = ids.drain(..n_valid).collect();
        ids.sort_unstable();
        valid.sort_unstable();
        test.sort_unstable();
        train_items.push(ids);
        valid_items.push(valid);
        test_items.push(test);
    }

    let dataset = InteractionDataset {
        num_users: per_user.len(),
        num_items: item_tokens.len(),
        train_items,
        valid_items,
        test_items,
        seed,
        ratios,
        user_tokens: per_user.iter().map(|(u, _)| u.to_string()).collect(),
        item_tokens,
    };
    Ok((dataset, report))
}

impl InteractionDataset {
    /// Builds a dataset directly from id lists. Tokens are the decimal ids.
    pub fn from_splits(
        num_items: usize,
        train_items: Vec<Vec<usize>>,
        valid_items: Vec<Vec<usize>>,
        test_items: Vec<Vec<usize>>,
    ) -> Result<Self> {
        let num_users = train_items.len();
        let mut ds = Self {
            num_users,
            num_items,
            train_items,
            valid_items,
            test_items,
            seed: 0,
            ratios: SplitRatios::default(),
            user_tokens: (0..num_users).map(|u| u.to_string()).collect(),
            item_tokens: (0..num_items).map(|i| i.to_string()).collect(),
        };
        for list in ds
            .train_items
            .iter_mut()
            .chain(ds.valid_items.iter_mut())
            .chain(ds.test_items.iter_mut())
        {
            list.sort_unstable();
        }
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if self.valid_items.len() != self.num_users || self.test_items.len() != self.num_users {
            return bad("split lists disagree on the number of users".into());
        }
        for u in 0..self.num_users {
            if self.train_items[u].is_empty() {
                return bad(format!("user {u} has no train items"));
            }
            let mut seen = HashSet::new();
            for &i in self.train_items[u]
                .iter()
                .chain(&self.valid_items[u])
                .chain(&self.test_items[u])
            {
                if i >= self.num_items {
                    return bad(format!("user {u}: item {i} out of range"));
                }
                if !seen.insert(i) {
                    return bad(format!("user {u}: item {i} appears twice across splits"));
                }
            }
        }
        Ok(())
    }

    pub fn is_train(&self, u: usize, i: usize) -> bool {
        self.train_items[u].binary_search(&i).is_ok()
    }

    /// Boolean mask over items, true for `u`'s train items.
    pub fn train_mask(&self, u: usize) -> Vec<bool> {
        let mut mask = vec![false; self.num_items];
        for &i in &self.train_items[u] {
            mask[i] = true;
        }
        mask
    }

    pub fn num_interactions(&self) -> usize {
        self.train_items
            .iter()
            .chain(&self.valid_items)
            .chain(&self.test_items)
            .map(Vec::len)
            .sum()
    }

    /// Number of train interactions per item.
    pub fn item_train_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_items];
        for items in &self.train_items {
            for &i in items {
                counts[i] += 1;
            }
        }
        counts
    }

    /// Key/value summary written as the dataset manifest.
    pub fn manifest(&self) -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        m.insert("num_users".into(), self.num_users.to_string());
        m.insert("num_items".into(), self.num_items.to_string());
        m.insert("num_interactions".into(), self.num_interactions().to_string());
        let count = |lists: &Vec<Vec<usize>>| lists.iter().map(Vec::len).sum::<usize>();
        m.insert("num_train".into(), count(&self.train_items).to_string());
        m.insert("num_valid".into(), count(&self.valid_items).to_string());
        m.insert("num_test".into(), count(&self.test_items).to_string());
        m.insert("seed".into(), self.seed.to_string());
        m.insert(
            "ratios".into(),
            format!("{},{},{}", self.ratios.train, self.ratios.valid, self.ratios.test),
        );
        let density = self.num_interactions() as f64 / (self.num_users * self.num_items) as f64;
        m.insert("density".into(), format!("{density:.6}"));
        m
    }

    /// Writes `manifest.txt`, `users.txt`, `items.txt` and the three split
    /// files (`<user-id> <item-id>` per line) into `dir`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_file(&dir.join("manifest.txt"), &render_key_values(&self.manifest()))?;
        write_file(&dir.join("users.txt"), &join_lines(&self.user_tokens))?;
        write_file(&dir.join("items.txt"), &join_lines(&self.item_tokens))?;
        for (name, lists) in [
            ("train.txt", &self.train_items),
            ("valid.txt", &self.valid_items),
            ("test.txt", &self.test_items),
        ] {
            let mut out = String::new();
            for (u, items) in lists.iter().enumerate() {
                for i in items {
                    let _ = writeln!(out, "{u} {i}");
                }
            }
            write_file(&dir.join(name), &out)?;
        }
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let manifest = read_key_values(&dir.join("manifest.txt"))?;
        let user_tokens = read_lines(&dir.join("users.txt"))?;
        let item_tokens = read_lines(&dir.join("items.txt"))?;
        let num_users = user_tokens.len();
        let num_items = item_tokens.len();
        let mut lists = Vec::new();
        for name in ["train.txt", "valid.txt", "test.txt"] {
            let path = dir.join(name);
            let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
            let mut per_user = vec![Vec::new(); num_users];
            for (idx, line) in text.lines().enumerate() {
                let mut f = line.split_whitespace();
                let parsed = (|| {
                    let u: usize = f.next()?.parse().ok()?;
                    let i: usize = f.next()?.parse().ok()?;
                    (u < num_users && i < num_items).then_some((u, i))
                })();
                let Some((u, i)) = parsed else {
                    return Err(Error::parse(&path, idx + 1, "expected `<user-id> <item-id>`"));
                };
                per_user[u].push(i);
            }
            lists.push(per_user);
        }
        let test_items = lists.pop().unwrap();
        let valid_items = lists.pop().unwrap();
        let train_items = lists.pop().unwrap();

        let get = |key: &str| {
            manifest
                .get(key)
                .ok_or_else(|| Error::InvalidArgument(format!("manifest lacks `{key}`")))
        };
        let seed = get("seed")?
            .parse()
            .map_err(|_| Error::InvalidArgument("manifest seed is not an integer".into()))?;
        let r: Vec<f64> = get("ratios")?
            .split(',')
            .map(|s| s.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::InvalidArgument("manifest ratios are malformed".into()))?;
        if r.len() != 3 {
            return Err(Error::InvalidArgument("manifest ratios need three values".into()));
        }
        let mut ds = Self::from_splits(num_items, train_items, valid_items, test_items)?;
        ds.seed = seed;
        ds.ratios = SplitRatios::new(r[0], r[1], r[2])?;
        ds.user_tokens = user_tokens;
        ds.item_tokens = item_tokens;
        Ok(ds)
    }
}

pub(crate) fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn join_lines(tokens: &[String]) -> String {
    let mut out = String::new();
    for t in tokens {
        out.push_str(t);
        out.push('\n');
    }
    out
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text.lines().map(str::to_string).collect())
}

/// Renders `key=value` lines in key order.
pub fn render_key_values(map: &BTreeMap<String, String>) -> String {
    let mut out = String::new();
    for (k, v) in map {
        let _ = writeln!(out, "{k}={v}");
    }
    out
}

/// Parses a `key=value` file; `#` comments and blank lines are ignored.
pub fn read_key_values(path: &Path) -> Result<BTreeMap<String, String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut map = BTreeMap::new();
    for (idx, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(Error::parse(path, idx + 1, "expected `key=value`"));
        };
        map.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(map)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn pairs(raw: &[(&str, &str)]) -> Vec<RawInteraction> {
        raw.iter().map(|(u, i)| RawInteraction::new(*u, *i)).collect()
    }

    #[test]
    fn parses_pairs_and_keeps_duplicates() {
        let text = "# header\nu1 i1\nu1\ti2 1.0\n\nu2 i1\nu1 i1\n";
        let got = parse_interactions(text, Path::new("x")).unwrap();
        assert_eq!(got.len(), 4);
        let users: HashSet<_> = got.iter().map(|p| &p.user).collect();
        let items: HashSet<_> = got.iter().map(|p| &p.item).collect();
        assert_eq!((users.len(), items.len()), (2, 2));
        assert_eq!(got[0], got[3]);
    }

    #[test]
    fn malformed_line_reports_its_number() {
        let err = parse_interactions("u1 i1\nu1\n", Path::new("f.tsv")).unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
        assert!(parse_interactions("u1 i1 abc\n", Path::new("f")).is_err());
    }

    #[test]
    fn empty_file_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.tsv");
        fs::write(&path, "# nothing\n").unwrap();
        assert!(matches!(load_interactions(&path), Err(Error::EmptyInput(_))));
    }

    #[test]
    fn kcore_one_only_dedups() {
        let p = pairs(&[("a", "x"), ("a", "x"), ("b", "y")]);
        assert_eq!(kcore_filter(&p, 1), pairs(&[("a", "x"), ("b", "y")]));
    }

    #[test]
    fn kcore_star_graph_vanishes() {
        let p: Vec<_> = (0..10).map(|i| RawInteraction::new("u", format!("i{i}"))).collect();
        assert!(kcore_filter(&p, 2).is_empty());
    }

    fn naive_kcore(pairs: &[RawInteraction], k: usize) -> HashSet<RawInteraction> {
        let mut cur: HashSet<RawInteraction> = pairs.iter().cloned().collect();
        loop {
            let mut next = HashSet::new();
            for p in &cur {
                let du = cur.iter().filter(|q| q.user == p.user).count();
                let di = cur.iter().filter(|q| q.item == p.item).count();
                if du >= k && di >= k {
                    next.insert(p.clone());
                }
            }
            if next.len() == cur.len() {
                return cur;
            }
            cur = next;
        }
    }

    #[test]
    fn kcore_matches_naive_fixed_point() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let p: Vec<_> = (0..150)
                .map(|_| {
                    RawInteraction::new(
                        format!("u{}", rng.gen_range(0..15)),
                        format!("i{}", rng.gen_range(0..20)),
                    )
                })
                .collect();
            let fast: HashSet<_> = kcore_filter(&p, 3).into_iter().collect();
            assert_eq!(fast, naive_kcore(&p, 3));
        }
    }

    #[test]
    fn split_counts_floor_valid_and_test() {
        let p: Vec<_> = (0..10).map(|i| RawInteraction::new("u", format!("i{i}"))).collect();
        let (ds, _) = split(&p, SplitRatios::default(), 3).unwrap();
        assert_eq!(
            (ds.train_items[0].len(), ds.valid_items[0].len(), ds.test_items[0].len()),
            (8, 1, 1)
        );
    }

    #[test]
    fn split_drops_sparse_users_with_report() {
        let mut p = pairs(&[("a", "x"), ("a", "y")]);
        p.extend((0..5).map(|i| RawInteraction::new("b", format!("i{i}"))));
        let (ds, report) = split(&p, SplitRatios::default(), 0).unwrap();
        assert_eq!(ds.num_users, 1);
        assert_eq!(report.dropped_users, vec![("a".to_string(), 2)]);
    }

    #[test]
    fn ratios_must_be_positive_and_normalized() {
        assert!(SplitRatios::new(0.8, 0.1, 0.1).is_ok());
        assert!(SplitRatios::new(0.9, 0.1, 0.0).is_err());
        assert!(SplitRatios::new(0.5, 0.1, 0.1).is_err());
    }

    #[test]
    fn save_load_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p: Vec<_> = (0..400)
            .map(|_| {
                RawInteraction::new(
                    format!("user{}", rng.gen_range(0..20)),
                    format!("item{}", rng.gen_range(0..50)),
                )
            })
            .collect();
        let (ds, _) = split(&p, SplitRatios::default(), 9).unwrap();
        let dir = tempfile::tempdir().unwrap();
        ds.save(dir.path()).unwrap();
        assert_eq!(InteractionDataset::load(dir.path()).unwrap(), ds);
    }
}
