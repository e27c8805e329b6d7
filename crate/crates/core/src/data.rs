//! Interaction-log ingestion, dense re-indexing, seeded splitting and the
//! transductive filter.
//!
//! Input format is UTF-8 TSV, one record per line: `user<TAB>item[<TAB>label]`.
//! Lines starting with `#` are ignored. Raw tokens are mapped to dense IDs in
//! first-appearance order so that re-running ingestion is reproducible.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Task flavor of a dataset. CTR datasets carry a binary label per record.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetMode {
    Retrieval,
    Ctr,
}

impl fmt::Display for DatasetMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DatasetMode::Retrieval => write!(f, "retrieval"),
            DatasetMode::Ctr => write!(f, "ctr"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitTag {
    Train,
    Val,
    Test,
}

impl SplitTag {
    pub fn as_str(self) -> &'static str {
        match self {
            SplitTag::Train => "train",
            SplitTag::Val => "val",
            SplitTag::Test => "test",
        }
    }
}

/// One interaction. `label` is present iff the dataset is in CTR mode.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Record {
    pub user: u32,
    pub item: u32,
    pub label: Option<u8>,
}

#[derive(Clone, Copy, Debug, Default, Serialize, Deserialize)]
pub struct SplitMeta {
    pub ratios: (f64, f64, f64),
    pub seed: u64,
}

/// Counts of val/test records removed by the transductive filter.
#[derive(Clone, Copy, Debug, Default, Serialize, Deserialize)]
pub struct TransductiveReport {
    pub dropped_val: usize,
    pub dropped_test: usize,
    pub dropped_users: usize,
    pub dropped_items: usize,
}

/// Interaction dataset with dense IDs.
///
/// Records stay in file order; the split is a tag per record. Frequency
/// tables count train records only and are populated by [`split`].
#[derive(Clone, Debug)]
pub struct InteractionDataset {
    pub mode: DatasetMode,
    pub user_tokens: Vec<String>,
    pub item_tokens: Vec<String>,
    pub records: Vec<Record>,
    pub split: Option<Vec<SplitTag>>,
    pub split_meta: Option<SplitMeta>,
    pub user_freq: Vec<u32>,
    pub item_freq: Vec<u32>,
}

impl InteractionDataset {
    pub fn n_users(&self) -> usize {
        self.user_tokens.len()
    }

    pub fn n_items(&self) -> usize {
        self.item_tokens.len()
    }

    pub fn n_records(&self) -> usize {
        self.records.len()
    }

    pub fn is_split(&self) -> bool {
        self.split.is_some()
    }

    /// Records carrying the given split tag, in file order.
    pub fn split_records(&self, tag: SplitTag) -> impl Iterator<Item = &Record> {
        let tags = self
            .split
            .as_deref()
            .expect("dataset is not split")
            .iter();
        self.records
            .iter()
            .zip(tags)
            .filter(move |(_, t)| **t == tag)
            .map(|(r, _)| r)
    }

    pub fn split_len(&self, tag: SplitTag) -> usize {
        match &self.split {
            Some(tags) => tags.iter().filter(|t| **t == tag).count(),
            None => 0,
        }
    }

    /// Builds an unsplit dataset from already-dense records. Used by
    /// generators and tests; token vectors give the entity counts.
    pub fn from_dense(
        mode: DatasetMode,
        user_tokens: Vec<String>,
        item_tokens: Vec<String>,
        records: Vec<Record>,
    ) -> Result<Self> {
        for (n, r) in records.iter().enumerate() {
            if r.user as usize >= user_tokens.len() {
                return Err(Error::IdOutOfRange {
                    kind: "user",
                    id: r.user as usize,
                    size: user_tokens.len(),
                });
            }
            if r.item as usize >= item_tokens.len() {
                return Err(Error::IdOutOfRange {
                    kind: "item",
                    id: r.item as usize,
                    size: item_tokens.len(),
                });
            }
            let has_label = r.label.is_some();
            if has_label != (mode == DatasetMode::Ctr) {
                return Err(Error::Schema(format!(
                    "record {n}: label presence does not match {mode} mode"
                )));
            }
        }
        Ok(InteractionDataset {
            mode,
            user_tokens,
            item_tokens,
            records,
            split: None,
            split_meta: None,
            user_freq: Vec::new(),
            item_freq: Vec::new(),
        })
    }

    /// Per-user sorted item lists for one split. Duplicates are collapsed.
    pub fn user_items(&self, tag: SplitTag) -> Vec<Vec<u32>> {
        let mut out = vec![Vec::new(); self.n_users()];
        for r in self.split_records(tag) {
            out[r.user as usize].push(r.item);
        }
        for list in &mut out {
            list.sort_unstable();
            list.dedup();
        }
        out
    }
}

/// Options applied while reading a raw interaction file.
#[derive(Clone, Copy, Debug, Default)]
pub struct LoadOptions {
    /// Treat the third column as a rating: > 3 becomes label 1, < 3 becomes
    /// label 0 and exactly 3 drops the record. Only meaningful in CTR mode.
    pub normalize_ratings: bool,
}

/// Reads a TSV interaction file and maps raw tokens to dense IDs in
/// first-appearance order.
pub fn load_interactions(
    path: &Path,
    mode: DatasetMode,
    opts: LoadOptions,
) -> Result<InteractionDataset> {
    let text = fs::read_to_string(path)?;
    parse_interactions(&text, mode, opts)
}

/// Same as [`load_interactions`] but over an in-memory string.
pub fn parse_interactions(
    text: &str,
    mode: DatasetMode,
    opts: LoadOptions,
) -> Result<InteractionDataset> {
    let mut user_ids: HashMap<String, u32> = HashMap::new();
    let mut item_ids: HashMap<String, u32> = HashMap::new();
    let mut user_tokens = Vec::new();
    let mut item_tokens = Vec::new();
    let mut records = Vec::new();

    for (lineno, line) in text.lines().enumerate() {
        let line_number = lineno + 1;
        let trimmed = line.trim_end_matches(['\r', '\n']);
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let mut fields = trimmed.split('\t');
        let user_tok = fields.next().filter(|s| !s.is_empty()).ok_or_else(|| Error::Parse {
            line: line_number,
            msg: "missing user column".into(),
        })?;
        let item_tok = fields.next().filter(|s| !s.is_empty()).ok_or_else(|| Error::Parse {
            line: line_number,
            msg: "missing item column".into(),
        })?;
        let label_tok = fields.next();
        if fields.next().is_some() {
            return Err(Error::Parse {
                line: line_number,
                msg: "too many columns".into(),
            });
        }

        let label = match (mode, label_tok) {
            (DatasetMode::Retrieval, None) => None,
            (DatasetMode::Retrieval, Some(_)) => {
                return Err(Error::Parse {
                    line: line_number,
                    msg: "unexpected label column in retrieval mode".into(),
                })
            }
            (DatasetMode::Ctr, None) => {
                return Err(Error::Schema(format!(
                    "line {line_number}: label column missing in ctr mode"
                )))
            }
            (DatasetMode::Ctr, Some(tok)) => {
                if opts.normalize_ratings {
                    let rating: f64 = tok.parse().map_err(|_| Error::Parse {
                        line: line_number,
                        msg: format!("bad rating {tok:?}"),
                    })?;
                    if rating > 3.0 {
                        Some(1)
                    } else if rating < 3.0 {
                        Some(0)
                    } else {
                        continue; // rating exactly 3: dropped
                    }
                } else {
                    match tok {
                        "0" => Some(0),
                        "1" => Some(1),
                        _ => {
                            return Err(Error::Parse {
                                line: line_number,
                                msg: format!("bad binary label {tok:?}"),
                            })
                        }
                    }
                }
            }
        };

        let next_user = user_tokens.len() as u32;
        let user = *user_ids.entry(user_tok.to_string()).or_insert_with(|| {
            user_tokens.push(user_tok.to_string());
            next_user
        });
        let next_item = item_tokens.len() as u32;
        let item = *item_ids.entry(item_tok.to_string()).or_insert_with(|| {
            item_tokens.push(item_tok.to_string());
            next_item
        });
        records.push(Record { user, item, label });
    }

    Ok(InteractionDataset {
        mode,
        user_tokens,
        item_tokens,
        records,
        split: None,
        split_meta: None,
        user_freq: Vec::new(),
        item_freq: Vec::new(),
    })
}

/// Randomly partitions records into train/val/test by the given ratios.
///
/// The permutation comes from a seeded PRNG, so identical seeds produce
/// identical splits. Records keep their file order; only the tags change.
pub fn split(
    ds: &InteractionDataset,
    ratios: (f64, f64, f64),
    seed: u64,
) -> Result<InteractionDataset> {
    let (a, b, c) = ratios;
    if a < 0.0 || b < 0.0 || c < 0.0 {
        return Err(Error::InvalidArgument("split ratios must be >= 0".into()));
    }
    if (a + b + c - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!(
            "split ratios must sum to 1, got {}",
            a + b + c
        )));
    }

    let n = ds.records.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);

    let n_train = ((n as f64) * a).round() as usize;
    let n_train_val = ((n as f64) * (a + b)).round() as usize;
    let mut tags = vec![SplitTag::Train; n];
    for (pos, &rec) in order.iter().enumerate() {
        tags[rec] = if pos < n_train {
            SplitTag::Train
        } else if pos < n_train_val {
            SplitTag::Val
        } else {
            SplitTag::Test
        };
    }

    let mut out = ds.clone();
    out.split = Some(tags);
    out.split_meta = Some(SplitMeta { ratios, seed });
    recompute_frequencies(&mut out);
    Ok(out)
}

/// Drops val/test records whose user or item never appears in train, then
/// re-densifies IDs so that every remaining entity occurs in some record.
pub fn enforce_transductive(
    ds: InteractionDataset,
) -> Result<(InteractionDataset, TransductiveReport)> {
    let tags = ds
        .split
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument("dataset is not split".into()))?;
    if !tags.contains(&SplitTag::Train) {
        return Err(Error::EmptyTrain);
    }

    let mut user_in_train = vec![false; ds.n_users()];
    let mut item_in_train = vec![false; ds.n_items()];
    for (r, t) in ds.records.iter().zip(tags.iter()) {
        if *t == SplitTag::Train {
            user_in_train[r.user as usize] = true;
            item_in_train[r.item as usize] = true;
        }
    }

    let mut report = TransductiveReport::default();
    let mut kept: Vec<(Record, SplitTag)> = Vec::with_capacity(ds.records.len());
    for (r, t) in ds.records.iter().zip(tags.iter()) {
        let ok = *t == SplitTag::Train
            || (user_in_train[r.user as usize] && item_in_train[r.item as usize]);
        if ok {
            kept.push((*r, *t));
        } else {
            match *t {
                SplitTag::Val => report.dropped_val += 1,
                SplitTag::Test => report.dropped_test += 1,
                SplitTag::Train => unreachable!(),
            }
        }
    }

    // Re-densify by first appearance over the surviving records.
    let mut user_map = vec![u32::MAX; ds.n_users()];
    let mut item_map = vec![u32::MAX; ds.n_items()];
    let mut user_tokens = Vec::new();
    let mut item_tokens = Vec::new();
    let mut records = Vec::with_capacity(kept.len());
    let mut new_tags = Vec::with_capacity(kept.len());
    for (r, t) in kept {
        let u = &mut user_map[r.user as usize];
        if *u == u32::MAX {
            *u = user_tokens.len() as u32;
            user_tokens.push(ds.user_tokens[r.user as usize].clone());
        }
        let i = &mut item_map[r.item as usize];
        if *i == u32::MAX {
            *i = item_tokens.len() as u32;
            item_tokens.push(ds.item_tokens[r.item as usize].clone());
        }
        records.push(Record {
            user: *u,
            item: *i,
            label: r.label,
        });
        new_tags.push(t);
    }
    report.dropped_users = ds.n_users() - user_tokens.len();
    report.dropped_items = ds.n_items() - item_tokens.len();

    let mut out = InteractionDataset {
        mode: ds.mode,
        user_tokens,
        item_tokens,
        records,
        split: Some(new_tags),
        split_meta: ds.split_meta,
        user_freq: Vec::new(),
        item_freq: Vec::new(),
    };
    recompute_frequencies(&mut out);
    Ok((out, report))
}

fn recompute_frequencies(ds: &mut InteractionDataset) {
    ds.user_freq = vec![0; ds.n_users()];
    ds.item_freq = vec![0; ds.n_items()];
    if ds.split.is_none() {
        return;
    }
    let tags = ds.split.as_ref().unwrap().clone();
    for (r, t) in ds.records.iter().zip(tags.iter()) {
        if *t == SplitTag::Train {
            ds.user_freq[r.user as usize] += 1;
            ds.item_freq[r.item as usize] += 1;
        }
    }
}

/// Dataset manifest written next to the split files.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub config_hash: String,
    pub mode: DatasetMode,
    pub n_users: usize,
    pub n_items: usize,
    pub n_records: usize,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub ratios: (f64, f64, f64),
    pub seed: u64,
    pub dropped_val: usize,
    pub dropped_test: usize,
}

/// Writes manifest, split TSVs and ID-mapping TSVs into `dir`.
pub fn write_artifacts(
    ds: &InteractionDataset,
    report: &TransductiveReport,
    dir: &Path,
    config_hash: &str,
) -> Result<DatasetManifest> {
    let meta = ds
        .split_meta
        .ok_or_else(|| Error::InvalidArgument("dataset is not split".into()))?;
    fs::create_dir_all(dir)?;

    let manifest = DatasetManifest {
        config_hash: config_hash.to_string(),
        mode: ds.mode,
        n_users: ds.n_users(),
        n_items: ds.n_items(),
        n_records: ds.n_records(),
        n_train: ds.split_len(SplitTag::Train),
        n_val: ds.split_len(SplitTag::Val),
        n_test: ds.split_len(SplitTag::Test),
        ratios: meta.ratios,
        seed: meta.seed,
        dropped_val: report.dropped_val,
        dropped_test: report.dropped_test,
    };
    let json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| Error::Numeric(format!("manifest serialization: {e}")))?;
    fs::write(dir.join("manifest.json"), json + "\n")?;

    for tag in [SplitTag::Train, SplitTag::Val, SplitTag::Test] {
        let mut w = BufWriter::new(fs::File::create(dir.join(format!("{}.tsv", tag.as_str())))?);
        writeln!(w, "# split={} config_hash={}", tag.as_str(), config_hash)?;
        for r in ds.split_records(tag) {
            match r.label {
                Some(l) => writeln!(w, "{}\t{}\t{}", r.user, r.item, l)?,
                None => writeln!(w, "{}\t{}", r.user, r.item)?,
            }
        }
        w.flush()?;
    }

    write_id_map(&ds.user_tokens, &dir.join("user_map.tsv"))?;
    write_id_map(&ds.item_tokens, &dir.join("item_map.tsv"))?;
    Ok(manifest)
}

fn write_id_map(tokens: &[String], path: &Path) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for (id, tok) in tokens.iter().enumerate() {
        writeln!(w, "{tok}\t{id}")?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a dataset previously written by [`write_artifacts`].
pub fn read_artifacts(dir: &Path) -> Result<(InteractionDataset, DatasetManifest)> {
    let manifest: DatasetManifest =
        serde_json::from_str(&fs::read_to_string(dir.join("manifest.json"))?)
            .map_err(|e| Error::Schema(format!("manifest.json: {e}")))?;
    let user_tokens = read_id_map(&dir.join("user_map.tsv"))?;
    let item_tokens = read_id_map(&dir.join("item_map.tsv"))?;

    let mut records = Vec::new();
    let mut tags = Vec::new();
    for tag in [SplitTag::Train, SplitTag::Val, SplitTag::Test] {
        let path = dir.join(format!("{}.tsv", tag.as_str()));
        let text = fs::read_to_string(&path)?;
        for (lineno, line) in text.lines().enumerate() {
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut f = line.split('\t');
            let parse_u32 = |s: Option<&str>| -> Result<u32> {
                s.and_then(|s| s.parse().ok()).ok_or_else(|| Error::Parse {
                    line: lineno + 1,
                    msg: format!("bad split line in {}", path.display()),
                })
            };
            let user = parse_u32(f.next())?;
            let item = parse_u32(f.next())?;
            let label = match f.next() {
                Some(tok) => Some(tok.parse::<u8>().map_err(|_| Error::Parse {
                    line: lineno + 1,
                    msg: format!("bad label in {}", path.display()),
                })?),
                None => None,
            };
            records.push(Record { user, item, label });
            tags.push(tag);
        }
    }

    let mut ds = InteractionDataset {
        mode: manifest.mode,
        user_tokens,
        item_tokens,
        records,
        split: Some(tags),
        split_meta: Some(SplitMeta {
            ratios: manifest.ratios,
            seed: manifest.seed,
        }),
        user_freq: Vec::new(),
        item_freq: Vec::new(),
    };
    recompute_frequencies(&mut ds);
    for r in &ds.records {
        if r.user as usize >= ds.n_users() || r.item as usize >= ds.n_items() {
            return Err(Error::Schema("split file references unknown id".into()));
        }
    }
    Ok((ds, manifest))
}

fn read_id_map(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path)?;
    let mut tokens = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (tok, id) = line.split_once('\t').ok_or_else(|| Error::Parse {
            line: lineno + 1,
            msg: "bad id-map line".into(),
        })?;
        let id: usize = id.parse().map_err(|_| Error::Parse {
            line: lineno + 1,
            msg: "bad id-map id".into(),
        })?;
        if id != tokens.len() {
            return Err(Error::Schema("id map is not dense".into()));
        }
        tokens.push(tok.to_string());
    }
    Ok(tokens)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy(text: &str) -> InteractionDataset {
        parse_interactions(text, DatasetMode::Retrieval, LoadOptions::default()).unwrap()
    }

    #[test]
    fn first_appearance_order() {
        let ds = toy("a\tx\nb\ty\na\ty\n");
        assert_eq!(ds.n_users(), 2);
        assert_eq!(ds.n_items(), 2);
        assert_eq!(ds.user_tokens, vec!["a", "b"]);
        assert_eq!(ds.item_tokens, vec!["x", "y"]);
        assert_eq!(ds.records[0], Record { user: 0, item: 0, label: None });
        assert_eq!(ds.records[2], Record { user: 0, item: 1, label: None });
    }

    #[test]
    fn empty_file() {
        let ds = toy("");
        assert_eq!(ds.n_users(), 0);
        assert_eq!(ds.n_items(), 0);
        assert_eq!(ds.n_records(), 0);
    }

    #[test]
    fn comments_and_blank_lines_skipped() {
        let ds = toy("# header\na\tx\n\nb\ty\n");
        assert_eq!(ds.n_records(), 2);
    }

    #[test]
    fn malformed_line_reports_number() {
        let err = parse_interactions("a\tx\nbad_line\n", DatasetMode::Retrieval, LoadOptions::default())
            .unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn ctr_requires_label() {
        let err =
            parse_interactions("a\tx\n", DatasetMode::Ctr, LoadOptions::default()).unwrap_err();
        assert!(matches!(err, Error::Schema(_)));
    }

    #[test]
    fn rating_normalization() {
        let text = "a\tx\t5\na\ty\t1\na\tz\t3\n";
        let ds = parse_interactions(
            text,
            DatasetMode::Ctr,
            LoadOptions { normalize_ratings: true },
        )
        .unwrap();
        assert_eq!(ds.n_records(), 2); // rating 3 dropped
        assert_eq!(ds.records[0].label, Some(1));
        assert_eq!(ds.records[1].label, Some(0));
        assert_eq!(ds.n_items(), 2); // z never materialized
    }

    #[test]
    fn split_counts_and_determinism() {
        let text: String = (0..10).map(|k| format!("u{k}\ti{k}\n")).collect();
        let ds = toy(&text);
        let s1 = split(&ds, (0.8, 0.1, 0.1), 7).unwrap();
        let s2 = split(&ds, (0.8, 0.1, 0.1), 7).unwrap();
        assert_eq!(s1.split, s2.split);
        assert_eq!(s1.split_len(SplitTag::Train), 8);
        assert_eq!(s1.split_len(SplitTag::Val), 1);
        assert_eq!(s1.split_len(SplitTag::Test), 1);
    }

    #[test]
    fn split_degenerate_all_train() {
        let text: String = (0..5).map(|k| format!("u{k}\ti{k}\n")).collect();
        let ds = toy(&text);
        let s = split(&ds, (1.0, 0.0, 0.0), 3).unwrap();
        assert_eq!(s.split_len(SplitTag::Train), 5);
    }

    #[test]
    fn split_exact_division() {
        let text: String = (0..1000).map(|k| format!("u{}\ti{}\n", k % 37, k % 53)).collect();
        let ds = toy(&text);
        let s = split(&ds, (0.8, 0.1, 0.1), 11).unwrap();
        assert_eq!(s.split_len(SplitTag::Train), 800);
        assert_eq!(s.split_len(SplitTag::Val), 100);
        assert_eq!(s.split_len(SplitTag::Test), 100);
    }

    #[test]
    fn split_is_partition() {
        let text: String = (0..123).map(|k| format!("u{}\ti{}\n", k % 17, k % 29)).collect();
        let ds = toy(&text);
        let s = split(&ds, (0.6, 0.2, 0.2), 5).unwrap();
        let tags = s.split.as_ref().unwrap();
        assert_eq!(tags.len(), 123);
        let total = s.split_len(SplitTag::Train) + s.split_len(SplitTag::Val)
            + s.split_len(SplitTag::Test);
        assert_eq!(total, 123);
    }

    #[test]
    fn frequencies_sum_to_train_records() {
        let text: String = (0..200).map(|k| format!("u{}\ti{}\n", k % 13, k % 7)).collect();
        let ds = toy(&text);
        let s = split(&ds, (0.8, 0.1, 0.1), 2).unwrap();
        let train = s.split_len(SplitTag::Train);
        assert_eq!(s.user_freq.iter().map(|&f| f as usize).sum::<usize>(), train);
        assert_eq!(s.item_freq.iter().map(|&f| f as usize).sum::<usize>(), train);
    }

    #[test]
    fn transductive_drops_unseen() {
        // Construct a split by hand: (u0,i0) train, (u1,i1) val where u1/i1
        // are unseen in train.
        let ds = toy("a\tx\nb\ty\n");
        let mut s = ds.clone();
        s.split = Some(vec![SplitTag::Train, SplitTag::Val]);
        s.split_meta = Some(SplitMeta { ratios: (0.5, 0.5, 0.0), seed: 0 });
        let (t, report) = enforce_transductive(s).unwrap();
        assert_eq!(report.dropped_val, 1);
        assert_eq!(t.n_records(), 1);
        assert_eq!(t.n_users(), 1);
        assert_eq!(t.n_items(), 1);
    }

    #[test]
    fn transductive_noop_when_covered() {
        let ds = toy("a\tx\nb\ty\na\ty\nb\tx\n");
        let mut s = ds.clone();
        s.split = Some(vec![
            SplitTag::Train,
            SplitTag::Train,
            SplitTag::Val,
            SplitTag::Test,
        ]);
        s.split_meta = Some(SplitMeta { ratios: (0.5, 0.25, 0.25), seed: 0 });
        let (t, report) = enforce_transductive(s.clone()).unwrap();
        assert_eq!(report.dropped_val + report.dropped_test, 0);
        assert_eq!(t.n_records(), 4);
        assert_eq!(t.records, s.records);
    }

    #[test]
    fn transductive_synthetic_counts() {
        // 10 test records, 3 reference items unseen in train: 7 remain.
        let mut text = String::new();
        for k in 0..20 {
            text.push_str(&format!("u{}\ti{}\n", k % 5, k % 4)); // train pool
        }
        for k in 0..10 {
            // items i90+ are unseen for k in {0,1,2}
            let item = if k < 3 { format!("i9{k}") } else { format!("i{}", k % 4) };
            text.push_str(&format!("u{}\t{}\n", k % 5, item));
        }
        let ds = toy(&text);
        let mut tags = vec![SplitTag::Train; 20];
        tags.extend(vec![SplitTag::Test; 10]);
        let mut s = ds.clone();
        s.split = Some(tags);
        s.split_meta = Some(SplitMeta { ratios: (0.8, 0.0, 0.2), seed: 0 });
        let (t, report) = enforce_transductive(s).unwrap();
        assert_eq!(report.dropped_test, 3);
        assert_eq!(t.split_len(SplitTag::Test), 7);
    }

    #[test]
    fn transductive_invariant_exhaustive() {
        let text: String = (0..300)
            .map(|k| format!("u{}\ti{}\n", k % 40, (k * 7) % 55))
            .collect();
        let ds = toy(&text);
        let s = split(&ds, (0.7, 0.15, 0.15), 9).unwrap();
        let (t, _) = enforce_transductive(s).unwrap();
        let tags = t.split.as_ref().unwrap();
        let mut train_users = vec![false; t.n_users()];
        let mut train_items = vec![false; t.n_items()];
        for (r, tag) in t.records.iter().zip(tags.iter()) {
            if *tag == SplitTag::Train {
                train_users[r.user as usize] = true;
                train_items[r.item as usize] = true;
            }
        }
        for (r, tag) in t.records.iter().zip(tags.iter()) {
            if *tag != SplitTag::Train {
                assert!(train_users[r.user as usize]);
                assert!(train_items[r.item as usize]);
            }
        }
    }

    #[test]
    fn empty_train_is_error() {
        let ds = toy("a\tx\n");
        let mut s = ds.clone();
        s.split = Some(vec![SplitTag::Test]);
        s.split_meta = Some(SplitMeta { ratios: (0.0, 0.0, 1.0), seed: 0 });
        assert!(matches!(enforce_transductive(s), Err(Error::EmptyTrain)));
    }

    #[test]
    fn artifact_roundtrip_is_byte_identical() {
        let text: String = (0..120)
            .map(|k| format!("u{}\ti{}\n", k % 12, (k * 3) % 18))
            .collect();
        let run = || {
            let ds = toy(&text);
            let s = split(&ds, (0.8, 0.1, 0.1), 4).unwrap();
            enforce_transductive(s).unwrap()
        };
        let (d1, r1) = run();
        let (d2, r2) = run();
        let dir1 = tempfile::tempdir().unwrap();
        let dir2 = tempfile::tempdir().unwrap();
        write_artifacts(&d1, &r1, dir1.path(), "h").unwrap();
        write_artifacts(&d2, &r2, dir2.path(), "h").unwrap();
        for name in ["manifest.json", "train.tsv", "val.tsv", "test.tsv", "user_map.tsv"] {
            let a = fs::read(dir1.path().join(name)).unwrap();
            let b = fs::read(dir2.path().join(name)).unwrap();
            assert_eq!(a, b, "{name} differs between identical runs");
        }
        let (back, manifest) = read_artifacts(dir1.path()).unwrap();
        assert_eq!(back.n_records(), d1.n_records());
        assert_eq!(manifest.n_users, d1.n_users());
        assert_eq!(back.user_freq, d1.user_freq);
    }
}
