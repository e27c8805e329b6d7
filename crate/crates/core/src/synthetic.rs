//! Seeded synthetic fixtures and dataset generators.
//!
//! The test suite and the benchmark commands run entirely on generated data:
//! small hand-checkable graphs, random bipartite graphs for oracle sweeps,
//! and planted-cluster interaction logs whose community structure mimics the
//! skewed degree distributions of public recommendation datasets.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::clustering::{relabel, Partition};
use crate::data::{DatasetMode, InteractionDataset, Record};
use crate::error::Result;
use crate::graph::BipartiteGraph;

/// Two disconnected complete 2x2 blocks: users {0,1} x items {0,1} and
/// users {2,3} x items {2,3}.
pub fn two_block_fixture() -> BipartiteGraph {
    let edges = vec![
        (0, 0),
        (0, 1),
        (1, 0),
        (1, 1),
        (2, 2),
        (2, 3),
        (3, 2),
        (3, 3),
    ];
    BipartiteGraph::from_edges(4, 4, edges).unwrap()
}

/// n users and n items joined by the matching (u, u).
pub fn diagonal_fixture(n: usize) -> BipartiteGraph {
    let edges = (0..n as u32).map(|k| (k, k)).collect();
    BipartiteGraph::from_edges(n, n, edges).unwrap()
}

/// Uniform random bipartite graph from `n_samples` draws with duplicates
/// collapsed. At least one edge survives whenever `n_samples >= 1`.
pub fn random_bipartite(
    n_users: usize,
    n_items: usize,
    n_samples: usize,
    seed: u64,
) -> Result<BipartiteGraph> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let edges: Vec<(u32, u32)> = (0..n_samples)
        .map(|_| {
            (
                rng.random_range(0..n_users as u32),
                rng.random_range(0..n_items as u32),
            )
        })
        .collect();
    BipartiteGraph::from_edges(n_users, n_items, edges)
}

/// Random dense-labelled partition with at most `max_clusters` clusters.
pub fn random_partition(
    n_users: usize,
    n_items: usize,
    max_clusters: usize,
    seed: u64,
) -> Partition {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c = max_clusters.max(1) as u32;
    let user_labels = (0..n_users).map(|_| rng.random_range(0..c)).collect();
    let item_labels = (0..n_items).map(|_| rng.random_range(0..c)).collect();
    relabel(&Partition {
        user_labels,
        item_labels,
        n_clusters: c as usize,
        resolution: 1.0,
    })
}

/// Draws an index from cumulative weights.
fn sample_cum(cum: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let total = *cum.last().unwrap();
    let x: f64 = rng.random_range(0.0..total);
    cum.partition_point(|&c| c <= x).min(cum.len() - 1)
}

/// Power-law-ish weights 1/(rank+1)^s, cumulative.
fn zipf_cum(n: usize, s: f64) -> Vec<f64> {
    let mut cum = Vec::with_capacity(n);
    let mut acc = 0.0;
    for r in 0..n {
        acc += 1.0 / ((r + 1) as f64).powf(s);
        cum.push(acc);
    }
    cum
}

/// Interaction edges with planted co-clusters. User `u` belongs to cluster
/// `u % n_clusters`, item `i` to `i % n_clusters`; a `p_in` fraction of each
/// user's interactions lands in the home cluster, the rest anywhere. Item
/// popularity is skewed within each cluster and user activity is lognormal.
fn planted_edges(
    n_users: usize,
    n_items: usize,
    n_clusters: usize,
    avg_degree: usize,
    p_in: f64,
    seed: u64,
) -> Vec<(u32, u32)> {
    assert!(n_clusters >= 1 && n_clusters <= n_items);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // items of each cluster, round-robin assignment
    let mut cluster_items: Vec<Vec<u32>> = vec![Vec::new(); n_clusters];
    for i in 0..n_items {
        cluster_items[i % n_clusters].push(i as u32);
    }
    let cluster_cum: Vec<Vec<f64>> = cluster_items
        .iter()
        .map(|items| zipf_cum(items.len(), 0.7))
        .collect();

    let mut edges = Vec::with_capacity(n_users * avg_degree);
    let mut seen: Vec<u32> = Vec::new();
    for u in 0..n_users {
        let home = u % n_clusters;
        // lognormal activity with mean ~= avg_degree
        let z: f64 = rng.sample(rand_distr::StandardNormal);
        let deg = ((avg_degree as f64) * (0.8 * z - 0.32).exp()).round() as usize;
        let deg = deg.clamp(3, 4 * avg_degree).min(n_items);
        seen.clear();
        let mut tries = 0;
        while seen.len() < deg && tries < 20 * deg {
            tries += 1;
            let c = if rng.random_range(0.0..1.0) < p_in {
                home
            } else {
                rng.random_range(0..n_clusters)
            };
            let item = cluster_items[c][sample_cum(&cluster_cum[c], &mut rng)];
            if !seen.contains(&item) {
                seen.push(item);
                edges.push((u as u32, item));
            }
        }
    }
    edges
}

/// Planted-cluster bipartite graph (see [`planted_edges`]).
pub fn planted_graph(
    n_users: usize,
    n_items: usize,
    n_clusters: usize,
    avg_degree: usize,
    p_in: f64,
    seed: u64,
) -> BipartiteGraph {
    let edges = planted_edges(n_users, n_items, n_clusters, avg_degree, p_in, seed);
    BipartiteGraph::from_edges(n_users, n_items, edges).unwrap()
}

/// Sizing knobs for the planted retrieval/CTR generators.
#[derive(Clone, Copy, Debug)]
pub struct PlantedConfig {
    pub n_users: usize,
    pub n_items: usize,
    pub n_clusters: usize,
    pub avg_degree: usize,
    pub p_in: f64,
}

impl Default for PlantedConfig {
    fn default() -> Self {
        PlantedConfig {
            n_users: 1500,
            n_items: 800,
            n_clusters: 30,
            avg_degree: 30,
            p_in: 0.85,
        }
    }
}

/// Unsplit retrieval dataset over planted clusters.
pub fn planted_retrieval(cfg: &PlantedConfig, seed: u64) -> InteractionDataset {
    let edges = planted_edges(
        cfg.n_users,
        cfg.n_items,
        cfg.n_clusters,
        cfg.avg_degree,
        cfg.p_in,
        seed,
    );
    let records = edges
        .into_iter()
        .map(|(user, item)| Record { user, item, label: None })
        .collect();
    InteractionDataset::from_dense(
        DatasetMode::Retrieval,
        (0..cfg.n_users).map(|u| format!("u{u}")).collect(),
        (0..cfg.n_items).map(|i| format!("i{i}")).collect(),
        records,
    )
    .unwrap()
}

/// Unsplit CTR dataset: exposures follow the planted clusters, labels come
/// from a latent affinity with a cluster term plus per-user and per-item
/// biases. The cluster term is what cluster-based bucket assignments can
/// recover; the per-entity biases reward schemes that keep entities apart.
pub fn planted_ctr(cfg: &PlantedConfig, seed: u64) -> InteractionDataset {
    let edges = planted_edges(
        cfg.n_users,
        cfg.n_items,
        cfg.n_clusters,
        cfg.avg_degree,
        cfg.p_in,
        seed,
    );
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_c7c7);
    // per-entity biases dominate the cluster term: entities inside a cluster
    // are similar but not interchangeable, so full-collision schemes pay a
    // real price on click prediction
    let user_bias: Vec<f64> = (0..cfg.n_users)
        .map(|_| 2.0 * rng.sample::<f64, _>(rand_distr::StandardNormal))
        .collect();
    let item_bias: Vec<f64> = (0..cfg.n_items)
        .map(|_| 1.2 * rng.sample::<f64, _>(rand_distr::StandardNormal))
        .collect();

    let affinity: Vec<f64> = edges
        .iter()
        .map(|&(u, i)| {
            let same = (u as usize % cfg.n_clusters) == (i as usize % cfg.n_clusters);
            let cluster_term = if same { 1.0 } else { -1.0 };
            let noise: f64 = rng.sample(rand_distr::StandardNormal);
            cluster_term + user_bias[u as usize] + item_bias[i as usize] + 0.5 * noise
        })
        .collect();
    let mut sorted = affinity.clone();
    sorted.sort_by(f64::total_cmp);
    let median = sorted[sorted.len() / 2];

    let records = edges
        .iter()
        .zip(&affinity)
        .map(|(&(user, item), &aff)| {
            let p = 1.0 / (1.0 + (-(aff - median)).exp());
            let label = u8::from(rng.random_range(0.0..1.0) < p);
            Record { user, item, label: Some(label) }
        })
        .collect();
    InteractionDataset::from_dense(
        DatasetMode::Ctr,
        (0..cfg.n_users).map(|u| format!("u{u}")).collect(),
        (0..cfg.n_items).map(|i| format!("i{i}")).collect(),
        records,
    )
    .unwrap()
}

/// Large clustered graph with heavy-tailed degrees for throughput and
/// determinism checks. `target_edges` counts draws before deduplication, so
/// the resulting edge count lands a few percent below the target.
pub fn heavy_tailed_graph(
    n_users: usize,
    n_items: usize,
    target_edges: usize,
    n_clusters: usize,
    p_in: f64,
    seed: u64,
) -> BipartiteGraph {
    let avg = (target_edges / n_users).max(1);
    planted_graph(n_users, n_items, n_clusters, avg, p_in, seed)
}
