//! Retrieval and CTR metrics, subgroup breakdowns and embedding smoothness.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Record;
use crate::error::{Error, Result};
use crate::graph::{BipartiteGraph, Side};
use crate::hashing::HashAssignment;
use crate::models::{ctr_score, dot, lookup_into, EmbeddingTable, Model};

/// Fraction of the user's held-out items appearing in the top-k list. The
/// denominator is the full held-out set size.
pub fn recall_at_k(topk: &[u32], test_items: &[u32], k: usize) -> f64 {
    if test_items.is_empty() {
        return 0.0;
    }
    let hits = topk
        .iter()
        .take(k)
        .filter(|&&i| test_items.binary_search(&i).is_ok())
        .count();
    hits as f64 / test_items.len() as f64
}

/// DCG over hit ranks (1/log2(rank+1)) normalized by the ideal DCG over
/// min(k, |test|) ranks.
pub fn ndcg_at_k(topk: &[u32], test_items: &[u32], k: usize) -> f64 {
    if test_items.is_empty() {
        return 0.0;
    }
    let mut dcg = 0.0;
    for (pos, &i) in topk.iter().take(k).enumerate() {
        if test_items.binary_search(&i).is_ok() {
            dcg += 1.0 / ((pos + 2) as f64).log2();
        }
    }
    let ideal = k.min(test_items.len());
    let idcg: f64 = (0..ideal).map(|pos| 1.0 / ((pos + 2) as f64).log2()).sum();
    dcg / idcg
}

/// AUC by rank sum with tie-averaged ranks. Exactly equals the fraction of
/// (positive, negative) pairs ranked correctly, ties counting one half.
pub fn auc(scores_pos: &[f64], scores_neg: &[f64]) -> Result<f64> {
    let np = scores_pos.len();
    let nn = scores_neg.len();
    if np == 0 || nn == 0 {
        return Err(Error::InvalidArgument(
            "auc needs at least one positive and one negative".into(),
        ));
    }
    let mut all: Vec<(f64, bool)> = scores_pos
        .iter()
        .map(|&s| (s, true))
        .chain(scores_neg.iter().map(|&s| (s, false)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut rank_sum_pos = 0.0f64;
    let mut a = 0;
    while a < all.len() {
        let mut b = a + 1;
        while b < all.len() && all[b].0 == all[a].0 {
            b += 1;
        }
        // 1-based ranks a+1..=b share the average (a + b + 1) / 2
        let avg_rank = (a + b + 1) as f64 / 2.0;
        let pos_in_group = all[a..b].iter().filter(|(_, p)| *p).count();
        rank_sum_pos += avg_rank * pos_in_group as f64;
        a = b;
    }
    let np_f = np as f64;
    Ok((rank_sum_pos - np_f * (np_f + 1.0) / 2.0) / (np_f * nn as f64))
}

/// Mean binary cross entropy with probabilities clamped to [1e-7, 1-1e-7].
pub fn mean_logloss(probs: &[f64], labels: &[u8]) -> f64 {
    let n = probs.len();
    let sum: f64 = probs
        .iter()
        .zip(labels)
        .map(|(&p, &y)| crate::training::logloss(p, y))
        .sum();
    sum / n as f64
}

/// Top-k item ids by score, skipping `exclude` (sorted), ties broken by the
/// smaller item id. Deterministic for any thread count.
pub fn top_k_excluding(scores: &[f64], exclude: &[u32], k: usize) -> Vec<u32> {
    // kept sorted best-first; worst entry at the back
    let mut best: Vec<(f64, u32)> = Vec::with_capacity(k + 1);
    let beats = |a: &(f64, u32), b: &(f64, u32)| a.0 > b.0 || (a.0 == b.0 && a.1 < b.1);
    for (i, &s) in scores.iter().enumerate() {
        let cand = (s, i as u32);
        if exclude.binary_search(&(i as u32)).is_ok() {
            continue;
        }
        if best.len() == k {
            if !beats(&cand, best.last().unwrap()) {
                continue;
            }
            best.pop();
        }
        let pos = best.partition_point(|e| beats(e, &cand));
        best.insert(pos, cand);
    }
    best.into_iter().map(|(_, i)| i).collect()
}

/// Per-user retrieval outcome; `None` for users without held-out items.
#[derive(Clone, Debug)]
pub struct UserOutcome {
    pub recall: f64,
    pub ndcg: f64,
    pub topk: Vec<u32>,
}

#[derive(Clone, Debug)]
pub struct RetrievalEval {
    pub k: usize,
    pub per_user: Vec<Option<UserOutcome>>,
    pub recall: f64,
    pub ndcg: f64,
    pub n_eval_users: usize,
}

/// Scores every user against every item, masks the exclusion set and
/// computes per-user Recall@k / NDCG@k plus their means.
///
/// `parallel` only distributes the per-user work; results are reduced in
/// user order, so the output is identical at any thread count.
pub fn evaluate_retrieval(
    zu: &EmbeddingTable,
    zi: &EmbeddingTable,
    exclude: &[Vec<u32>],
    target: &[Vec<u32>],
    k: usize,
    parallel: bool,
) -> RetrievalEval {
    let n_users = zu.rows;
    let eval_user = |u: usize| -> Option<UserOutcome> {
        if target[u].is_empty() {
            return None;
        }
        let ue = zu.row(u);
        let scores: Vec<f64> = (0..zi.rows).map(|i| dot(ue, zi.row(i))).collect();
        let topk = top_k_excluding(&scores, &exclude[u], k);
        Some(UserOutcome {
            recall: recall_at_k(&topk, &target[u], k),
            ndcg: ndcg_at_k(&topk, &target[u], k),
            topk,
        })
    };
    let per_user: Vec<Option<UserOutcome>> = if parallel {
        (0..n_users).into_par_iter().map(eval_user).collect()
    } else {
        (0..n_users).map(eval_user).collect()
    };

    let mut recall = 0.0;
    let mut ndcg = 0.0;
    let mut n_eval = 0usize;
    for o in per_user.iter().flatten() {
        recall += o.recall;
        ndcg += o.ndcg;
        n_eval += 1;
    }
    if n_eval > 0 {
        recall /= n_eval as f64;
        ndcg /= n_eval as f64;
    }
    RetrievalEval { k, per_user, recall, ndcg, n_eval_users: n_eval }
}

/// CTR probabilities for a batch of records under a trained model.
pub fn ctr_scores(model: &Model, assignment: &HashAssignment, records: &[Record]) -> Vec<f64> {
    let dim = model.config.dim;
    let mut ue = vec![0.0; dim];
    let mut ie = vec![0.0; dim];
    records
        .iter()
        .map(|r| {
            let ucodes = assignment.users.codes_of(r.user as usize);
            let icodes = assignment.items.codes_of(r.item as usize);
            lookup_into(&model.user_table, ucodes, &mut ue).unwrap();
            lookup_into(&model.item_table, icodes, &mut ie).unwrap();
            let bu: f64 = ucodes.iter().map(|&c| model.user_bias[c as usize]).sum();
            let bi: f64 = icodes.iter().map(|&c| model.item_bias[c as usize]).sum();
            ctr_score(&ue, &ie, bu, bi, model.global_bias)
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Subgroups by train-frequency percentile
// ---------------------------------------------------------------------------

/// Assigns each user to a percentile bin. Users are ranked by (train
/// frequency, id) ascending; the percentile of rank r out of n is
/// `100 * (r + 0.5) / n`, which lands every user in exactly one bin for
/// edges like [0, 20, 40, 60, 80, 100].
pub fn percentile_bins(freq: &[u32], edges: &[f64]) -> Result<Vec<usize>> {
    if edges.len() < 2
        || edges[0] != 0.0
        || *edges.last().unwrap() != 100.0
        || edges.windows(2).any(|w| w[1] <= w[0])
    {
        return Err(Error::InvalidArgument(
            "bin edges must rise from 0 to 100".into(),
        ));
    }
    let n = freq.len();
    let mut order: Vec<u32> = (0..n as u32).collect();
    order.sort_by_key(|&x| (freq[x as usize], x));
    let mut bins = vec![0usize; n];
    for (rank, &x) in order.iter().enumerate() {
        let p = 100.0 * (rank as f64 + 0.5) / n as f64;
        let bin = edges[1..].partition_point(|&e| e < p);
        bins[x as usize] = bin.min(edges.len() - 2);
    }
    Ok(bins)
}

/// One bin of a subgroup report. Empty bins are reported as absent.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SubgroupBin {
    pub label: String,
    pub population: usize,
    pub recall: Option<f64>,
    pub ndcg: Option<f64>,
    pub logloss: Option<f64>,
    pub auc: Option<f64>,
}

pub fn bin_labels(edges: &[f64]) -> Vec<String> {
    edges
        .windows(2)
        .map(|w| format!("{:.0}-{:.0}", w[0], w[1]))
        .collect()
}

/// Retrieval subgroup report: per-user metrics averaged within each bin.
pub fn subgroup_retrieval(
    eval: &RetrievalEval,
    bins: &[usize],
    edges: &[f64],
) -> Vec<SubgroupBin> {
    let labels = bin_labels(edges);
    let n_bins = labels.len();
    let mut sums = vec![(0.0f64, 0.0f64, 0usize); n_bins];
    for (u, o) in eval.per_user.iter().enumerate() {
        if let Some(o) = o {
            let b = bins[u];
            sums[b].0 += o.recall;
            sums[b].1 += o.ndcg;
            sums[b].2 += 1;
        }
    }
    labels
        .into_iter()
        .zip(sums)
        .map(|(label, (r, n, pop))| SubgroupBin {
            label,
            population: pop,
            recall: (pop > 0).then(|| r / pop as f64),
            ndcg: (pop > 0).then(|| n / pop as f64),
            logloss: None,
            auc: None,
        })
        .collect()
}

/// CTR subgroup report: LogLoss/AUC over the clicks generated by each bin's
/// users.
pub fn subgroup_ctr(
    records: &[Record],
    probs: &[f64],
    bins: &[usize],
    edges: &[f64],
) -> Vec<SubgroupBin> {
    let labels = bin_labels(edges);
    let n_bins = labels.len();
    let mut grouped: Vec<(Vec<f64>, Vec<u8>)> = vec![(Vec::new(), Vec::new()); n_bins];
    for (r, &p) in records.iter().zip(probs) {
        let b = bins[r.user as usize];
        grouped[b].0.push(p);
        grouped[b].1.push(r.label.unwrap_or(0));
    }
    labels
        .into_iter()
        .zip(grouped)
        .map(|(label, (ps, ys))| {
            let pop = ps.len();
            let logloss = (pop > 0).then(|| mean_logloss(&ps, &ys));
            let pos: Vec<f64> = ps
                .iter()
                .zip(&ys)
                .filter(|(_, &y)| y == 1)
                .map(|(&p, _)| p)
                .collect();
            let neg: Vec<f64> = ps
                .iter()
                .zip(&ys)
                .filter(|(_, &y)| y == 0)
                .map(|(&p, _)| p)
                .collect();
            SubgroupBin {
                label,
                population: pop,
                recall: None,
                ndcg: None,
                logloss,
                auc: auc(&pos, &neg).ok(),
            }
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Smoothness
// ---------------------------------------------------------------------------

/// Node neighborhoods used for the smoothness measure: either the clusters
/// of a partition (every member shares the same set) or explicit per-node
/// neighborhoods such as 2-hop sets.
pub enum ClusterMap<'a> {
    Labels(&'a [u32]),
    Neighborhoods(&'a [Vec<u32>]),
}

fn sqdist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let d = x - y;
            d * d
        })
        .sum()
}

/// Mean within-neighborhood squared distance, each node's sum normalized by
/// its neighborhood size (the node itself contributes a zero term).
pub fn smoothness(x: &EmbeddingTable, map: &ClusterMap) -> f64 {
    let n = x.rows;
    if n == 0 {
        return 0.0;
    }
    let mut total = 0.0;
    match map {
        ClusterMap::Labels(labels) => {
            assert_eq!(labels.len(), n);
            let n_clusters = labels.iter().copied().max().unwrap_or(0) as usize + 1;
            let mut members: Vec<Vec<u32>> = vec![Vec::new(); n_clusters];
            for (u, &l) in labels.iter().enumerate() {
                members[l as usize].push(u as u32);
            }
            for u in 0..n {
                let cluster = &members[labels[u] as usize];
                let sum: f64 = cluster
                    .iter()
                    .map(|&v| sqdist(x.row(u), x.row(v as usize)))
                    .sum();
                total += sum / cluster.len() as f64;
            }
        }
        ClusterMap::Neighborhoods(sets) => {
            assert_eq!(sets.len(), n);
            for u in 0..n {
                let set = &sets[u];
                if set.is_empty() {
                    continue;
                }
                let sum: f64 = set
                    .iter()
                    .map(|&v| sqdist(x.row(u), x.row(v as usize)))
                    .sum();
                total += sum / set.len() as f64;
            }
        }
    }
    total / n as f64
}

/// For each node, the same-side nodes sharing at least one neighbor, plus
/// the node itself. These neighborhoods overlap; they are per-node sets, not
/// a partition.
pub fn two_hop_clusters(g: &BipartiteGraph, side: Side) -> Vec<Vec<u32>> {
    let n = match side {
        Side::User => g.n_users(),
        Side::Item => g.n_items(),
    };
    let mut seen = vec![false; n];
    let mut out = Vec::with_capacity(n);
    for x in 0..n {
        let mut set = vec![x as u32];
        seen[x] = true;
        match side {
            Side::User => {
                for &i in g.user_neighbors(x) {
                    for &v in g.item_neighbors(i as usize) {
                        if !seen[v as usize] {
                            seen[v as usize] = true;
                            set.push(v);
                        }
                    }
                }
            }
            Side::Item => {
                for &u in g.item_neighbors(x) {
                    for &v in g.user_neighbors(u as usize) {
                        if !seen[v as usize] {
                            seen[v as usize] = true;
                            set.push(v);
                        }
                    }
                }
            }
        }
        for &v in &set {
            seen[v as usize] = false;
        }
        set.sort_unstable();
        out.push(set);
    }
    out
}

/// Mean train degree of all retrieved items across users.
pub fn retrieved_item_degree(topk: &[Vec<u32>], g: &BipartiteGraph) -> Result<f64> {
    let mut sum = 0u64;
    let mut count = 0u64;
    for list in topk {
        for &i in list {
            sum += g.item_degree(i as usize) as u64;
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::InvalidArgument("no retrieved items".into()));
    }
    Ok(sum as f64 / count as f64)
}

// ---------------------------------------------------------------------------
// Report container
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SmoothnessReport {
    pub cluster_user: f64,
    pub cluster_item: f64,
    pub two_hop_user: f64,
    pub two_hop_item: f64,
}

/// Metrics emitted by the evaluation stage. Recall/NDCG are percentages.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MetricsReport {
    pub config_hash: String,
    pub scheme: String,
    pub backbone: String,
    pub n_params: usize,
    pub k: usize,
    pub recall_at_k: Option<f64>,
    pub ndcg_at_k: Option<f64>,
    pub logloss: Option<f64>,
    pub auc: Option<f64>,
    pub retrieved_item_degree: Option<f64>,
    pub smoothness: Option<SmoothnessReport>,
    pub subgroups: Vec<SubgroupBin>,
}
