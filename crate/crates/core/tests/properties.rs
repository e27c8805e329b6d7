//! Property tests for the structural invariants: splits partition the
//! records, graphs keep the degree/edge identity, relabeling preserves
//! cluster membership, hashing schemes are pure and in-range, and the
//! metrics stay in their documented ranges.

use proptest::prelude::*;

use clusterhash::clustering::{modularity, modularity_forms, relabel, Partition};
use clusterhash::data::{parse_interactions, split, DatasetMode, SplitTag};
use clusterhash::evaluation::{auc, ndcg_at_k, recall_at_k, smoothness, ClusterMap};
use clusterhash::graph::BipartiteGraph;
use clusterhash::hashing::{collision_stats, hash_double, hash_frequency, hash_modulo};
use clusterhash::models::EmbeddingTable;
use clusterhash::synthetic;

fn dataset_text(n_users: usize, n_items: usize, n_records: usize) -> String {
    (0..n_records)
        .map(|k| format!("u{}\ti{}\n", k % n_users, (k * 13 + 5) % n_items))
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn split_partitions_records(
        n in 1usize..400,
        a in 0.1f64..0.9,
        b_frac in 0.0f64..1.0,
        seed in any::<u64>(),
    ) {
        let b = (1.0 - a) * b_frac;
        let c = 1.0 - a - b;
        let text = dataset_text(17, 23, n);
        let ds = parse_interactions(&text, DatasetMode::Retrieval, Default::default()).unwrap();
        let s = split(&ds, (a, b, c), seed).unwrap();
        let total = s.split_len(SplitTag::Train) + s.split_len(SplitTag::Val)
            + s.split_len(SplitTag::Test);
        prop_assert_eq!(total, n);
        // same seed, same tags
        let s2 = split(&ds, (a, b, c), seed).unwrap();
        prop_assert_eq!(s.split, s2.split);
        // records untouched
        prop_assert_eq!(s.records, ds.records);
    }

    #[test]
    fn graph_degree_identity_and_transpose(
        edges in prop::collection::vec((0u32..40, 0u32..30), 1..300),
    ) {
        let g = BipartiteGraph::from_edges(40, 30, edges).unwrap();
        let ku: usize = (0..40).map(|u| g.user_degree(u)).sum();
        let di: usize = (0..30).map(|i| g.item_degree(i)).sum();
        prop_assert_eq!(ku, g.n_edges());
        prop_assert_eq!(di, g.n_edges());
        // adjacency transpose roundtrip
        let mut rebuilt: Vec<Vec<u32>> = vec![Vec::new(); 40];
        for i in 0..30 {
            for &u in g.item_neighbors(i) {
                rebuilt[u as usize].push(i as u32);
            }
        }
        for u in 0..40 {
            rebuilt[u].sort_unstable();
            prop_assert_eq!(rebuilt[u].as_slice(), g.user_neighbors(u));
            // neighbor lists strictly increasing
            prop_assert!(g.user_neighbors(u).windows(2).all(|w| w[0] < w[1]));
        }
    }

    #[test]
    fn relabel_preserves_equivalence(
        user_labels in prop::collection::vec(0u32..6, 1..20),
        item_labels in prop::collection::vec(0u32..6, 1..20),
    ) {
        let p = relabel(&Partition {
            n_clusters: 6,
            user_labels: user_labels.clone(),
            item_labels: item_labels.clone(),
            resolution: 1.0,
        });
        // same-label pairs stay same-label, different stay different
        for a in 0..user_labels.len() {
            for b in 0..user_labels.len() {
                prop_assert_eq!(
                    user_labels[a] == user_labels[b],
                    p.user_labels[a] == p.user_labels[b]
                );
            }
            for b in 0..item_labels.len() {
                prop_assert_eq!(
                    user_labels[a] == item_labels[b],
                    p.user_labels[a] == p.item_labels[b]
                );
            }
        }
        // idempotent
        let again = relabel(&p);
        prop_assert_eq!(again.user_labels, p.user_labels);
        prop_assert_eq!(again.item_labels, p.item_labels);
    }

    #[test]
    fn modularity_bounded_and_forms_agree(
        seed in any::<u64>(),
        n_users in 2usize..12,
        n_items in 2usize..12,
        clusters in 1usize..6,
    ) {
        let g = synthetic::random_bipartite(n_users, n_items, 3 * n_users, seed).unwrap();
        let p = synthetic::random_partition(n_users, n_items, clusters, seed ^ 1);
        let q = modularity(&g, &p, 1.0).unwrap();
        prop_assert!(q <= 1.0 + 1e-12);
        let (a, b, c) = modularity_forms(&g, &p, 1.0).unwrap();
        prop_assert!((a - b).abs() < 1e-12);
        prop_assert!((a - c).abs() < 1e-12);
    }

    #[test]
    fn hashing_pure_and_in_range(
        n_records in 30usize..200,
        buckets_u in 2usize..20,
        buckets_i in 2usize..20,
        seed in any::<u64>(),
    ) {
        let text = dataset_text(25, 31, n_records);
        let ds = parse_interactions(&text, DatasetMode::Retrieval, Default::default()).unwrap();
        let ds = split(&ds, (1.0, 0.0, 0.0), 0).unwrap();
        for a in [
            hash_modulo(&ds, buckets_u, buckets_i).unwrap(),
            hash_frequency(&ds, buckets_u, buckets_i).unwrap(),
            hash_double(&ds, buckets_u, buckets_i, seed).unwrap(),
        ] {
            // purity: rebuilding gives identical codes
            let again = match a.scheme {
                clusterhash::hashing::Scheme::Random =>
                    hash_modulo(&ds, buckets_u, buckets_i).unwrap(),
                clusterhash::hashing::Scheme::Frequency =>
                    hash_frequency(&ds, buckets_u, buckets_i).unwrap(),
                _ => hash_double(&ds, buckets_u, buckets_i, seed).unwrap(),
            };
            prop_assert_eq!(&a, &again);
            // compression: tables never exceed the entity counts seen here
            prop_assert!(a.users.table_rows <= buckets_u.max(ds.n_users()));
            for x in 0..ds.n_users() {
                for &c in a.users.codes_of(x) {
                    prop_assert!((c as usize) < a.users.table_rows);
                }
            }
            let stats = collision_stats(&a);
            prop_assert!(stats.users.colliding_pair_fraction >= 0.0);
            prop_assert!(stats.users.colliding_pair_fraction <= 1.0);
        }
    }

    #[test]
    fn retrieval_metrics_bounded(
        // ranked lists carry distinct item ids by construction
        topk_set in prop::collection::btree_set(0u32..50, 1..20),
        rot in 0usize..19,
        test in prop::collection::btree_set(0u32..50, 1..10),
    ) {
        let mut topk: Vec<u32> = topk_set.into_iter().collect();
        let shift = rot % topk.len();
        topk.rotate_left(shift);
        let test: Vec<u32> = test.into_iter().collect();
        let k = topk.len();
        let r = recall_at_k(&topk, &test, k);
        let n = ndcg_at_k(&topk, &test, k);
        prop_assert!((0.0..=1.0).contains(&r));
        prop_assert!((0.0..=1.0).contains(&n));
    }

    #[test]
    fn auc_matches_pairwise_oracle(
        pos in prop::collection::vec(0u32..6, 1..60),
        neg in prop::collection::vec(0u32..6, 1..60),
    ) {
        // coarse scores force ties
        let pos: Vec<f64> = pos.into_iter().map(|v| v as f64 / 3.0).collect();
        let neg: Vec<f64> = neg.into_iter().map(|v| v as f64 / 3.0).collect();
        let fast = auc(&pos, &neg).unwrap();
        let mut slow = 0.0;
        for &p in &pos {
            for &n in &neg {
                if p > n {
                    slow += 1.0;
                } else if p == n {
                    slow += 0.5;
                }
            }
        }
        slow /= (pos.len() * neg.len()) as f64;
        prop_assert_eq!(fast, slow);
    }

    #[test]
    fn smoothness_scales_quadratically(
        seed in any::<u64>(),
        alpha in 0.25f64..4.0,
        n in 4usize..30,
    ) {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let x = EmbeddingTable::gaussian(n, 3, 1.0, &mut rng);
        let labels: Vec<u32> = (0..n).map(|k| (k % 3) as u32).collect();
        let base = smoothness(&x, &ClusterMap::Labels(&labels));
        let mut scaled = x.clone();
        for v in scaled.as_mut_slice() {
            *v *= alpha;
        }
        let s = smoothness(&scaled, &ClusterMap::Labels(&labels));
        prop_assert!((s - alpha * alpha * base).abs() <= 1e-9 * (1.0 + s.abs() + base.abs()));
    }
}

#[test]
fn louvain_monotone_and_oracle_bounded_on_random_graphs() {
    // ten repeated runs stay identical; Q never beats the exhaustive search
    for seed in 0..10u64 {
        let g = synthetic::random_bipartite(4, 4, 10, seed).unwrap();
        let (p, trace) = clusterhash::clustering::louvain_with_trace(&g, 1.0).unwrap();
        for w in trace.windows(2) {
            assert!(w[1] >= w[0] - 1e-12);
        }
        let q = modularity(&g, &p, 1.0).unwrap();
        let (_, q_star) = clusterhash::clustering::brute_force_partition(&g, 1.0).unwrap();
        assert!(q <= q_star + 1e-12);
        for _ in 0..9 {
            let p2 = clusterhash::clustering::louvain(&g, 1.0).unwrap();
            assert_eq!(p2.user_labels, p.user_labels);
            assert_eq!(p2.item_labels, p.item_labels);
        }
    }
}
