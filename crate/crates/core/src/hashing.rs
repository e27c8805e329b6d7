//! Bucket-assignment schemes for embedding-table reduction.
//!
//! Single-code schemes map each entity to one table row; double-code schemes
//! produce two rows whose embeddings are summed by the model. All schemes
//! are pure functions of their inputs and seed.

use std::fmt;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::clustering::Partition;
use crate::data::InteractionDataset;
use crate::error::{Error, Result};
use crate::graph::{BipartiteGraph, Side};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    Full,
    Random,
    Frequency,
    Double,
    DoubleFrequency,
    LshStructure,
    GraphHash,
    DoubleGraphHash,
}

impl Scheme {
    pub fn as_str(self) -> &'static str {
        match self {
            Scheme::Full => "full",
            Scheme::Random => "random",
            Scheme::Frequency => "frequency",
            Scheme::Double => "double",
            Scheme::DoubleFrequency => "double_frequency",
            Scheme::LshStructure => "lsh_structure",
            Scheme::GraphHash => "graph_hash",
            Scheme::DoubleGraphHash => "double_graph_hash",
        }
    }

    pub fn parse(s: &str) -> Result<Scheme> {
        Ok(match s {
            "full" => Scheme::Full,
            "random" => Scheme::Random,
            "frequency" => Scheme::Frequency,
            "double" => Scheme::Double,
            "double_frequency" => Scheme::DoubleFrequency,
            "lsh_structure" => Scheme::LshStructure,
            "graph_hash" => Scheme::GraphHash,
            "double_graph_hash" => Scheme::DoubleGraphHash,
            other => {
                return Err(Error::InvalidArgument(format!("unknown scheme {other:?}")))
            }
        })
    }

    /// Number of codes per entity: 1 or 2.
    pub fn arity(self) -> usize {
        match self {
            Scheme::Double | Scheme::DoubleFrequency | Scheme::DoubleGraphHash => 2,
            _ => 1,
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Codes for one side (users or items), flattened as `n * arity` values.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SideCodes {
    pub table_rows: usize,
    arity: usize,
    codes: Vec<u32>,
}

impl SideCodes {
    pub fn new(table_rows: usize, arity: usize, codes: Vec<u32>) -> Result<Self> {
        if arity != 1 && arity != 2 {
            return Err(Error::InvalidArgument("code arity must be 1 or 2".into()));
        }
        if !codes.len().is_multiple_of(arity) {
            return Err(Error::InvalidArgument("code vector length mismatch".into()));
        }
        if let Some(&c) = codes.iter().find(|&&c| c as usize >= table_rows) {
            return Err(Error::IdOutOfRange {
                kind: "bucket code",
                id: c as usize,
                size: table_rows,
            });
        }
        Ok(SideCodes { table_rows, arity, codes })
    }

    pub fn n_entities(&self) -> usize {
        self.codes.len() / self.arity
    }

    pub fn arity(&self) -> usize {
        self.arity
    }

    /// Codes of one entity: a slice of length 1 or 2.
    pub fn codes_of(&self, id: usize) -> &[u32] {
        &self.codes[id * self.arity..(id + 1) * self.arity]
    }
}

/// Bucket assignment for both sides.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HashAssignment {
    pub scheme: Scheme,
    pub seed: Option<u64>,
    pub users: SideCodes,
    pub items: SideCodes,
}

impl HashAssignment {
    pub fn side(&self, side: Side) -> &SideCodes {
        match side {
            Side::User => &self.users,
            Side::Item => &self.items,
        }
    }

    /// Total embedding-table parameter count at the given dimension.
    pub fn n_params(&self, dim: usize) -> usize {
        (self.users.table_rows + self.items.table_rows) * dim
    }
}

/// Identity mapping: one dedicated row per entity.
pub fn hash_full(ds: &InteractionDataset) -> HashAssignment {
    let identity = |n: usize| SideCodes::new(n, 1, (0..n as u32).collect()).unwrap();
    HashAssignment {
        scheme: Scheme::Full,
        seed: None,
        users: identity(ds.n_users()),
        items: identity(ds.n_items()),
    }
}

/// `code = dense_id % buckets`.
pub fn hash_modulo(
    ds: &InteractionDataset,
    buckets_users: usize,
    buckets_items: usize,
) -> Result<HashAssignment> {
    if buckets_users == 0 || buckets_items == 0 {
        return Err(Error::InvalidArgument("buckets must be >= 1".into()));
    }
    let side = |n: usize, b: usize| {
        SideCodes::new(b, 1, (0..n as u32).map(|x| x % b as u32).collect()).unwrap()
    };
    Ok(HashAssignment {
        scheme: Scheme::Random,
        seed: None,
        users: side(ds.n_users(), buckets_users),
        items: side(ds.n_items(), buckets_items),
    })
}

/// Entity order used for dedicated-bucket allocation: by descending train
/// frequency, ties broken by the lower dense id.
fn frequency_order(freq: &[u32]) -> Vec<u32> {
    let mut order: Vec<u32> = (0..freq.len() as u32).collect();
    order.sort_by_key(|&x| (std::cmp::Reverse(freq[x as usize]), x));
    order
}

fn frequency_side(freq: &[u32], buckets: usize) -> SideCodes {
    let n = freq.len();
    let dedicated = (buckets / 2).min(n);
    let rest_buckets = buckets - buckets / 2;
    let order = frequency_order(freq);
    let mut codes = vec![0u32; n];
    let mut is_dedicated = vec![false; n];
    for (slot, &x) in order[..dedicated].iter().enumerate() {
        codes[x as usize] = slot as u32;
        is_dedicated[x as usize] = true;
    }
    for x in 0..n {
        if !is_dedicated[x] {
            codes[x] = (buckets / 2 + x % rest_buckets) as u32;
        }
    }
    SideCodes::new(buckets, 1, codes).unwrap()
}

/// Half the buckets are dedicated to the most frequent entities (in
/// frequency order); the rest map by modulo into the remaining half.
pub fn hash_frequency(
    ds: &InteractionDataset,
    buckets_users: usize,
    buckets_items: usize,
) -> Result<HashAssignment> {
    if buckets_users < 2 || buckets_items < 2 {
        return Err(Error::InvalidArgument("frequency hashing needs buckets >= 2".into()));
    }
    if !ds.is_split() {
        return Err(Error::InvalidArgument("frequency hashing needs train frequencies".into()));
    }
    Ok(HashAssignment {
        scheme: Scheme::Frequency,
        seed: None,
        users: frequency_side(&ds.user_freq, buckets_users),
        items: frequency_side(&ds.item_freq, buckets_items),
    })
}

/// Hash of a dense id into `buckets`, keyed by one odd 64-bit multiplier.
/// The multiply-shift core gets an avalanche finisher; without it,
/// sequential ids correlate the two codes of double hashing.
fn multiply_shift(mult: u64, x: u32, buckets: usize) -> u32 {
    let mut z = mult.wrapping_mul(((x as u64) << 1) | 1);
    z ^= z >> 33;
    z = z.wrapping_mul(0xff51_afd7_ed55_8ccd);
    z ^= z >> 33;
    (z % buckets as u64) as u32
}

fn odd_multiplier(rng: &mut ChaCha8Rng) -> u64 {
    rng.random::<u64>() | 1
}

fn double_side(n: usize, buckets: usize, m1: u64, m2: u64) -> SideCodes {
    let mut codes = Vec::with_capacity(2 * n);
    for x in 0..n as u32 {
        codes.push(multiply_shift(m1, x, buckets));
        codes.push(multiply_shift(m2, x, buckets));
    }
    SideCodes::new(buckets, 2, codes).unwrap()
}

/// Two independent multiply-shift hashes into one table per side.
pub fn hash_double(
    ds: &InteractionDataset,
    buckets_users: usize,
    buckets_items: usize,
    seed: u64,
) -> Result<HashAssignment> {
    if buckets_users == 0 || buckets_items == 0 {
        return Err(Error::InvalidArgument("buckets must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (u1, u2) = (odd_multiplier(&mut rng), odd_multiplier(&mut rng));
    let (i1, i2) = (odd_multiplier(&mut rng), odd_multiplier(&mut rng));
    Ok(HashAssignment {
        scheme: Scheme::Double,
        seed: Some(seed),
        users: double_side(ds.n_users(), buckets_users, u1, u2),
        items: double_side(ds.n_items(), buckets_items, i1, i2),
    })
}

fn double_frequency_side(freq: &[u32], buckets: usize, m1: u64, m2: u64) -> SideCodes {
    let n = freq.len();
    let dedicated = (buckets / 2).min(n);
    let rest_buckets = buckets - buckets / 2;
    let order = frequency_order(freq);
    let mut codes = vec![0u32; 2 * n];
    let mut is_dedicated = vec![false; n];
    for (slot, &x) in order[..dedicated].iter().enumerate() {
        // dedicated entities repeat their row so the row-sum path is uniform
        codes[2 * x as usize] = slot as u32;
        codes[2 * x as usize + 1] = slot as u32;
        is_dedicated[x as usize] = true;
    }
    let base = (buckets / 2) as u32;
    for x in 0..n {
        if !is_dedicated[x] {
            codes[2 * x] = base + multiply_shift(m1, x as u32, rest_buckets);
            codes[2 * x + 1] = base + multiply_shift(m2, x as u32, rest_buckets);
        }
    }
    SideCodes::new(buckets, 2, codes).unwrap()
}

/// Frequency-dedicated rows for the head entities, double hashing for the
/// tail.
pub fn hash_double_frequency(
    ds: &InteractionDataset,
    buckets_users: usize,
    buckets_items: usize,
    seed: u64,
) -> Result<HashAssignment> {
    if buckets_users < 2 || buckets_items < 2 {
        return Err(Error::InvalidArgument("double frequency needs buckets >= 2".into()));
    }
    if !ds.is_split() {
        return Err(Error::InvalidArgument(
            "double frequency hashing needs train frequencies".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (u1, u2) = (odd_multiplier(&mut rng), odd_multiplier(&mut rng));
    let (i1, i2) = (odd_multiplier(&mut rng), odd_multiplier(&mut rng));
    Ok(HashAssignment {
        scheme: Scheme::DoubleFrequency,
        seed: Some(seed),
        users: double_frequency_side(&ds.user_freq, buckets_users, u1, u2),
        items: double_frequency_side(&ds.item_freq, buckets_items, i1, i2),
    })
}

fn lsh_side(g: &BipartiteGraph, side: Side, bits: u32, rng: &mut ChaCha8Rng) -> SideCodes {
    let (n, dim) = match side {
        Side::User => (g.n_users(), g.n_items()),
        Side::Item => (g.n_items(), g.n_users()),
    };
    // one Gaussian hyperplane per bit over the one-hop signature space
    let planes: Vec<Vec<f64>> = (0..bits)
        .map(|_| (0..dim).map(|_| rng.sample(rand_distr::StandardNormal)).collect())
        .collect();
    let mut codes = Vec::with_capacity(n);
    for id in 0..n {
        let ones = match side {
            Side::User => g.user_neighbors(id),
            Side::Item => g.item_neighbors(id),
        };
        let mut code = 0u32;
        for (b, plane) in planes.iter().enumerate() {
            let dot: f64 = ones.iter().map(|&j| plane[j as usize]).sum();
            if dot >= 0.0 {
                code |= 1 << b;
            }
        }
        codes.push(code);
    }
    SideCodes::new(1 << bits, 1, codes).unwrap()
}

/// Sign patterns of `bits` random hyperplanes over one-hop neighbor
/// signatures; table rows are `2^bits` per side.
pub fn hash_lsh_structure(g: &BipartiteGraph, bits: u32, seed: u64) -> Result<HashAssignment> {
    if bits == 0 || bits > 24 {
        return Err(Error::InvalidArgument("lsh bits must be in 1..=24".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let users = lsh_side(g, Side::User, bits, &mut rng);
    let items = lsh_side(g, Side::Item, bits, &mut rng);
    Ok(HashAssignment {
        scheme: Scheme::LshStructure,
        seed: Some(seed),
        users,
        items,
    })
}

/// Returns per-entity compact codes plus the number of distinct labels on
/// this side. Labels must already be in first-appearance order, so sorting
/// the distinct labels reproduces their appearance order.
fn cluster_side(labels: &[u32], n_clusters: usize) -> SideCodes {
    let mut present = vec![false; n_clusters];
    for &l in labels {
        present[l as usize] = true;
    }
    let mut rank = vec![u32::MAX; n_clusters];
    let mut rows = 0u32;
    for (c, &p) in present.iter().enumerate() {
        if p {
            rank[c] = rows;
            rows += 1;
        }
    }
    let codes = labels.iter().map(|&l| rank[l as usize]).collect();
    SideCodes::new(rows as usize, 1, codes).unwrap()
}

/// Cluster labels as bucket codes. Users and items get separate tables even
/// when they share a cluster; each side's rows are its distinct labels,
/// re-densified.
pub fn graph_hash(p: &Partition) -> Result<HashAssignment> {
    if !p.is_relabeled() {
        return Err(Error::InvalidArgument(
            "partition must be relabeled before hashing".into(),
        ));
    }
    Ok(HashAssignment {
        scheme: Scheme::GraphHash,
        seed: None,
        users: cluster_side(&p.user_labels, p.n_clusters),
        items: cluster_side(&p.item_labels, p.n_clusters),
    })
}

/// Pairs a modulo-style hash with the cluster code. The first code lands in
/// the same table as the cluster code, so the table size is unchanged; the
/// embedding is the sum of both rows.
pub fn double_graph_hash(p: &Partition, seed: u64) -> Result<HashAssignment> {
    let gh = graph_hash(p)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let salt_u = rng.random::<u64>();
    let salt_i = rng.random::<u64>();
    let pair = |side: &SideCodes, salt: u64| {
        let rows = side.table_rows;
        let mut codes = Vec::with_capacity(2 * side.n_entities());
        for x in 0..side.n_entities() {
            codes.push((((x as u64) + salt) % rows as u64) as u32);
            codes.push(side.codes_of(x)[0]);
        }
        SideCodes::new(rows, 2, codes).unwrap()
    };
    Ok(HashAssignment {
        scheme: Scheme::DoubleGraphHash,
        seed: Some(seed),
        users: pair(&gh.users, salt_u),
        items: pair(&gh.items, salt_i),
    })
}

/// Per-side collision summary.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SideCollisions {
    pub table_rows: usize,
    pub n_entities: usize,
    pub max_bucket_size: usize,
    pub mean_bucket_size: f64,
    /// Fraction of entity pairs whose full code tuples coincide.
    pub colliding_pair_fraction: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CollisionReport {
    pub scheme: Scheme,
    pub users: SideCollisions,
    pub items: SideCollisions,
}

fn side_collisions(side: &SideCodes) -> SideCollisions {
    let n = side.n_entities();
    let mut groups: Vec<&[u32]> = (0..n).map(|x| side.codes_of(x)).collect();
    groups.sort_unstable();
    let mut max_size = 0usize;
    let mut n_groups = 0usize;
    let mut colliding_pairs = 0u64;
    let mut k = 0;
    while k < n {
        let mut size = 1;
        while k + size < n && groups[k + size] == groups[k] {
            size += 1;
        }
        max_size = max_size.max(size);
        n_groups += 1;
        colliding_pairs += (size as u64) * (size as u64 - 1) / 2;
        k += size;
    }
    let total_pairs = (n as u64) * (n as u64 - 1) / 2;
    SideCollisions {
        table_rows: side.table_rows,
        n_entities: n,
        max_bucket_size: max_size,
        mean_bucket_size: if n_groups == 0 { 0.0 } else { n as f64 / n_groups as f64 },
        colliding_pair_fraction: if total_pairs == 0 {
            0.0
        } else {
            colliding_pairs as f64 / total_pairs as f64
        },
    }
}

/// Bucket-size and pair-collision statistics for an assignment.
pub fn collision_stats(a: &HashAssignment) -> CollisionReport {
    CollisionReport {
        scheme: a.scheme,
        users: side_collisions(&a.users),
        items: side_collisions(&a.items),
    }
}

// ---------------------------------------------------------------------------
// Assignment file format
// ---------------------------------------------------------------------------

/// Writes `side<TAB>dense_id<TAB>code1[<TAB>code2]` lines with a header
/// recording scheme, seed and table sizes.
pub fn write_assignment(a: &HashAssignment, config_hash: &str, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    writeln!(
        w,
        "# scheme={} seed={} user_rows={} item_rows={} config_hash={}",
        a.scheme,
        a.seed.map_or("-".to_string(), |s| s.to_string()),
        a.users.table_rows,
        a.items.table_rows,
        config_hash
    )?;
    for (tag, side) in [("U", &a.users), ("I", &a.items)] {
        for x in 0..side.n_entities() {
            let codes = side.codes_of(x);
            match codes {
                [c] => writeln!(w, "{tag}\t{x}\t{c}")?,
                [c1, c2] => writeln!(w, "{tag}\t{x}\t{c1}\t{c2}")?,
                _ => unreachable!(),
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads an assignment file written by [`write_assignment`]. Returns the
/// assignment and the config hash from the header.
pub fn read_assignment(path: &Path) -> Result<(HashAssignment, String)> {
    let text = fs::read_to_string(path)?;
    let mut scheme = None;
    let mut seed = None;
    let mut user_rows = 0usize;
    let mut item_rows = 0usize;
    let mut config_hash = String::new();
    let mut users: Vec<Vec<u32>> = Vec::new();
    let mut items: Vec<Vec<u32>> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        if let Some(header) = line.strip_prefix('#') {
            for field in header.split_whitespace() {
                if let Some(v) = field.strip_prefix("scheme=") {
                    scheme = Some(Scheme::parse(v)?);
                } else if let Some(v) = field.strip_prefix("seed=") {
                    seed = v.parse::<u64>().ok();
                } else if let Some(v) = field.strip_prefix("user_rows=") {
                    user_rows = v.parse().unwrap_or(0);
                } else if let Some(v) = field.strip_prefix("item_rows=") {
                    item_rows = v.parse().unwrap_or(0);
                } else if let Some(v) = field.strip_prefix("config_hash=") {
                    config_hash = v.to_string();
                }
            }
            continue;
        }
        let mut f = line.split('\t');
        let side = f.next();
        let id: usize = f
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Parse { line: lineno + 1, msg: "bad id".into() })?;
        let codes: Vec<u32> = f
            .map(|s| s.parse::<u32>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::Parse { line: lineno + 1, msg: "bad code".into() })?;
        if codes.is_empty() || codes.len() > 2 {
            return Err(Error::Parse { line: lineno + 1, msg: "bad code count".into() });
        }
        let bucket = match side {
            Some("U") => &mut users,
            Some("I") => &mut items,
            _ => return Err(Error::Parse { line: lineno + 1, msg: "bad side tag".into() }),
        };
        if id != bucket.len() {
            return Err(Error::Schema("assignment ids are not dense".into()));
        }
        bucket.push(codes);
    }
    let scheme = scheme.ok_or_else(|| Error::Schema("assignment header missing scheme".into()))?;
    let arity = scheme.arity();
    let flatten = |rows: Vec<Vec<u32>>| -> Result<Vec<u32>> {
        let mut out = Vec::with_capacity(rows.len() * arity);
        for r in rows {
            if r.len() != arity {
                return Err(Error::Schema("code arity mismatch".into()));
            }
            out.extend(r);
        }
        Ok(out)
    };
    Ok((
        HashAssignment {
            scheme,
            seed,
            users: SideCodes::new(user_rows, arity, flatten(users)?)?,
            items: SideCodes::new(item_rows, arity, flatten(items)?)?,
        },
        config_hash,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clustering::louvain;
    use crate::data::{parse_interactions, split, DatasetMode, LoadOptions};
    use crate::synthetic;

    fn retrieval_ds(n_users: usize, n_items: usize) -> InteractionDataset {
        let text: String = (0..n_users * 3)
            .map(|k| format!("u{}\ti{}\n", k % n_users, (k * 7) % n_items))
            .collect();
        let ds = parse_interactions(&text, DatasetMode::Retrieval, LoadOptions::default()).unwrap();
        split(&ds, (1.0, 0.0, 0.0), 0).unwrap()
    }

    #[test]
    fn full_is_identity() {
        let ds = retrieval_ds(3, 4);
        let a = hash_full(&ds);
        assert_eq!(a.users.codes_of(0), &[0]);
        assert_eq!(a.users.codes_of(2), &[2]);
        assert_eq!(a.users.table_rows, 3);
        assert_eq!(a.items.table_rows, 4);
        let stats = collision_stats(&a);
        assert_eq!(stats.users.colliding_pair_fraction, 0.0);
    }

    #[test]
    fn modulo_arithmetic() {
        let ds = retrieval_ds(10, 10);
        let a = hash_modulo(&ds, 3, 4).unwrap();
        assert_eq!(a.users.codes_of(7), &[1]);
        // bucket sizes for ids 0..9 into 4 buckets: [3,3,2,2]
        let mut sizes = vec![0usize; 4];
        for i in 0..10 {
            sizes[a.items.codes_of(i)[0] as usize] += 1;
        }
        assert_eq!(sizes, vec![3, 3, 2, 2]);
        // buckets == n is injective
        let b = hash_modulo(&ds, 10, 10).unwrap();
        let stats = collision_stats(&b);
        assert_eq!(stats.users.colliding_pair_fraction, 0.0);
    }

    #[test]
    fn frequency_hand_trace() {
        // freq = [5,1,9,1], buckets 4: entity 2 -> 0, entity 0 -> 1,
        // entities 1,3 -> 2 + (id mod 2) = 3.
        let mut ds = retrieval_ds(4, 4);
        ds.user_freq = vec![5, 1, 9, 1];
        let side = frequency_side(&ds.user_freq, 4);
        assert_eq!(side.codes_of(2), &[0]);
        assert_eq!(side.codes_of(0), &[1]);
        assert_eq!(side.codes_of(1), &[3]);
        assert_eq!(side.codes_of(3), &[3]);
    }

    #[test]
    fn frequency_tie_break_and_capacity() {
        let freq = vec![2u32; 6];
        let side = frequency_side(&freq, 4);
        // equal frequencies: lowest ids get the dedicated slots
        assert_eq!(side.codes_of(0), &[0]);
        assert_eq!(side.codes_of(1), &[1]);
        // plenty of buckets: everyone dedicated, no collisions
        let wide = frequency_side(&freq, 12);
        let mut seen = std::collections::BTreeSet::new();
        for x in 0..6 {
            assert!(seen.insert(wide.codes_of(x)[0]));
        }
    }

    #[test]
    fn frequency_dedicates_half() {
        let freq: Vec<u32> = (0..50).map(|k| (k * 13 % 31) as u32).collect();
        let buckets = 16;
        let side = frequency_side(&freq, buckets);
        let mut counts = vec![0usize; buckets];
        for x in 0..50 {
            counts[side.codes_of(x)[0] as usize] += 1;
        }
        for c in counts.iter().take(buckets / 2) {
            assert_eq!(*c, 1, "dedicated buckets must be singletons");
        }
    }

    #[test]
    fn double_determinism_and_degenerate() {
        let ds = retrieval_ds(50, 50);
        let a = hash_double(&ds, 8, 8, 42).unwrap();
        let b = hash_double(&ds, 8, 8, 42).unwrap();
        assert_eq!(a, b);
        let one = hash_double(&ds, 1, 1, 42).unwrap();
        for x in 0..50 {
            assert_eq!(one.users.codes_of(x), &[0, 0]);
        }
    }

    #[test]
    fn double_pair_collisions_near_binomial() {
        // 1000 ids into 100 buckets: both-code collision probability is
        // about 1/100^2 per pair; allow 3 sigma around the binomial mean.
        let text: String = (0..1000).map(|k| format!("u{k}\ti{k}\n")).collect();
        let ds = parse_interactions(&text, DatasetMode::Retrieval, LoadOptions::default())
            .unwrap();
        let ds = split(&ds, (1.0, 0.0, 0.0), 0).unwrap();
        let a = hash_double(&ds, 100, 100, 17).unwrap();
        let stats = collision_stats(&a);
        let pairs = 1000.0f64 * 999.0 / 2.0;
        let p = 1.0 / (100.0 * 100.0);
        let sigma = (pairs * p * (1.0 - p)).sqrt();
        let expected = pairs * p;
        let got = stats.users.colliding_pair_fraction * pairs;
        assert!(
            (got - expected).abs() <= 3.0 * sigma,
            "colliding pairs {got} vs binomial {expected} +- {sigma}"
        );
    }

    #[test]
    fn double_frequency_dedicated_roundtrip() {
        let mut ds = retrieval_ds(6, 6);
        ds.user_freq = vec![9, 1, 7, 1, 5, 1];
        ds.item_freq = vec![1, 1, 1, 1, 1, 1];
        let a = hash_double_frequency(&ds, 6, 6, 3).unwrap();
        // top three by frequency: 0 -> slot 0, 2 -> slot 1, 4 -> slot 2
        assert_eq!(a.users.codes_of(0), &[0, 0]);
        assert_eq!(a.users.codes_of(2), &[1, 1]);
        assert_eq!(a.users.codes_of(4), &[2, 2]);
        // tail codes stay in the upper half of the table
        for x in [1usize, 3, 5] {
            for &c in a.users.codes_of(x) {
                assert!(c >= 3);
            }
        }
    }

    #[test]
    fn double_frequency_capacity() {
        // enough buckets to dedicate a row to everyone: no collisions at all
        let mut ds = retrieval_ds(5, 5);
        ds.user_freq = vec![3, 1, 4, 1, 5];
        ds.item_freq = vec![1; 5];
        let a = hash_double_frequency(&ds, 10, 10, 1).unwrap();
        let stats = collision_stats(&a);
        assert_eq!(stats.users.colliding_pair_fraction, 0.0);
        for x in 0..5 {
            let codes = a.users.codes_of(x);
            assert_eq!(codes[0], codes[1], "dedicated entities repeat their row");
        }
    }

    #[test]
    fn lsh_identical_signatures_share_buckets() {
        // users 0 and 1 interact with exactly the same items
        let g = BipartiteGraph::from_edges(
            3,
            4,
            vec![(0, 1), (0, 3), (1, 1), (1, 3), (2, 0)],
        )
        .unwrap();
        for seed in [1u64, 2, 3] {
            let a = hash_lsh_structure(&g, 3, seed).unwrap();
            assert_eq!(a.users.codes_of(0), a.users.codes_of(1));
        }
        let one_bit = hash_lsh_structure(&g, 1, 5).unwrap();
        assert_eq!(one_bit.users.table_rows, 2);
        let again = hash_lsh_structure(&g, 3, 1).unwrap();
        assert_eq!(again, hash_lsh_structure(&g, 3, 1).unwrap());
    }

    #[test]
    fn graph_hash_separate_tables() {
        let g = synthetic::diagonal_fixture(2);
        let p = louvain(&g, 1.0).unwrap();
        assert_eq!(p.n_clusters, 2);
        let a = graph_hash(&p).unwrap();
        assert_eq!(a.users.table_rows, 2);
        assert_eq!(a.items.table_rows, 2);
        // u0 and i0 share a cluster but index distinct tables
        assert_eq!(a.users.codes_of(0), &[0]);
        assert_eq!(a.items.codes_of(0), &[0]);
    }

    #[test]
    fn graph_hash_singletons_match_full() {
        let p = Partition::new(vec![0, 1, 2], vec![3, 4], 1.0).unwrap();
        let a = graph_hash(&p).unwrap();
        assert_eq!(a.users.table_rows, 3);
        assert_eq!(a.items.table_rows, 2);
        for x in 0..3 {
            assert_eq!(a.users.codes_of(x), &[x as u32]);
        }
        for x in 0..2 {
            assert_eq!(a.items.codes_of(x), &[x as u32]);
        }
    }

    #[test]
    fn graph_hash_requires_relabeled() {
        let p = Partition {
            user_labels: vec![1, 0],
            item_labels: vec![1, 0],
            n_clusters: 2,
            resolution: 1.0,
        };
        assert!(graph_hash(&p).is_err());
    }

    #[test]
    fn double_graph_hash_capacity_and_subset() {
        // singleton clustering: both codes injective
        let p = Partition::new(vec![0, 1, 2, 3], vec![4, 5, 6], 1.0).unwrap();
        let a = double_graph_hash(&p, 9).unwrap();
        let stats = collision_stats(&a);
        assert_eq!(stats.users.colliding_pair_fraction, 0.0);
        assert_eq!(a, double_graph_hash(&p, 9).unwrap());

        // both-code collisions are a subset of cluster-code collisions
        let g = synthetic::planted_graph(200, 150, 8, 10, 0.9, 4);
        let p = louvain(&g, 1.0).unwrap();
        let gh = graph_hash(&p).unwrap();
        let dgh = double_graph_hash(&p, 11).unwrap();
        let f_gh = collision_stats(&gh).users.colliding_pair_fraction;
        let f_dgh = collision_stats(&dgh).users.colliding_pair_fraction;
        assert!(f_dgh <= f_gh + 1e-15);
    }

    #[test]
    fn collision_stats_extremes() {
        let ds = retrieval_ds(5, 5);
        let all_one = hash_modulo(&ds, 1, 1).unwrap();
        let stats = collision_stats(&all_one);
        assert_eq!(stats.users.colliding_pair_fraction, 1.0);
        assert_eq!(stats.users.max_bucket_size, 5);

        // fixture with known buckets: codes [0,0,1] -> exactly 1 of 3 pairs
        let side = SideCodes::new(2, 1, vec![0, 0, 1]).unwrap();
        let sc = side_collisions(&side);
        assert!((sc.colliding_pair_fraction - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn compressing_schemes_never_exceed_entity_counts() {
        // with bucket counts at most the entity counts (and 2^bits <= n for
        // the lsh table), every scheme's table stays within the entity
        // counts; cluster tables always do
        let ds = retrieval_ds(40, 30);
        let g = synthetic::planted_graph(40, 30, 4, 6, 0.85, 2);
        let p = louvain(&g, 1.0).unwrap();
        let gh = graph_hash(&p).unwrap();
        let distinct = |labels: &[u32]| {
            let mut v = labels.to_vec();
            v.sort_unstable();
            v.dedup();
            v.len()
        };
        assert_eq!(gh.users.table_rows, distinct(&p.user_labels));
        assert_eq!(gh.items.table_rows, distinct(&p.item_labels));
        for a in [
            hash_modulo(&ds, 10, 10).unwrap(),
            hash_frequency(&ds, 10, 10).unwrap(),
            hash_double(&ds, 10, 10, 1).unwrap(),
            hash_double_frequency(&ds, 10, 10, 1).unwrap(),
            hash_lsh_structure(&g, 4, 1).unwrap(),
            gh.clone(),
            double_graph_hash(&p, 1).unwrap(),
        ] {
            assert!(a.users.table_rows <= 40, "{:?}", a.scheme);
            assert!(a.items.table_rows <= 30, "{:?}", a.scheme);
        }
    }

    #[test]
    fn assignment_file_roundtrip() {
        let ds = retrieval_ds(7, 5);
        for a in [
            hash_full(&ds),
            hash_modulo(&ds, 3, 2).unwrap(),
            hash_double(&ds, 4, 4, 5).unwrap(),
        ] {
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("assignment.tsv");
            write_assignment(&a, "cafe", &path).unwrap();
            let (back, hash) = read_assignment(&path).unwrap();
            assert_eq!(back, a);
            assert_eq!(hash, "cafe");
        }
    }
}
