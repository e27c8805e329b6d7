//! Pipeline stages. Each command reads its inputs from the output
//! directory of the previous stage, checks the embedded config hash and
//! writes its own artifacts.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clusterhash::clustering::{self, louvain, modularity, relabel, Partition};
use clusterhash::data::{
    self, enforce_transductive, load_interactions, DatasetMode, InteractionDataset, LoadOptions,
    Record, SplitTag,
};
use clusterhash::error::Error as CoreError;
use clusterhash::evaluation::{
    auc, ctr_scores, evaluate_retrieval, mean_logloss, percentile_bins, retrieved_item_degree,
    smoothness, subgroup_ctr, subgroup_retrieval, two_hop_clusters, ClusterMap, MetricsReport,
    SmoothnessReport,
};
use clusterhash::graph::{BipartiteGraph, Side};
use clusterhash::hashing::{
    self, collision_stats, double_graph_hash, graph_hash, hash_double, hash_double_frequency,
    hash_frequency, hash_full, hash_lsh_structure, hash_modulo, HashAssignment, Scheme,
};
use clusterhash::models::{self, CheckpointMeta, Model};
use clusterhash::training::{entity_embeddings, train, TrainConfig};

use crate::config::RunConfig;
use crate::CliError;

fn core(e: CoreError) -> CliError {
    match e {
        CoreError::InvalidArgument(msg) => CliError::Config(msg),
        CoreError::Numeric(msg) => CliError::Numeric(msg),
        other => CliError::Data(other.to_string()),
    }
}

fn paths(cfg: &RunConfig) -> Artifacts {
    let dir = cfg.output.dir.clone();
    Artifacts {
        partition: dir.join("partition.tsv"),
        assignment: dir.join("assignment.tsv"),
        collisions: dir.join("collision.json"),
        checkpoint: dir.join("checkpoint.bin"),
        checkpoint_meta: dir.join("checkpoint.json"),
        history: dir.join("history.csv"),
        metrics_json: dir.join("metrics.json"),
        metrics_csv: dir.join("metrics.csv"),
        edges: dir.join("edges.tsv"),
        dir,
    }
}

struct Artifacts {
    dir: PathBuf,
    partition: PathBuf,
    assignment: PathBuf,
    collisions: PathBuf,
    checkpoint: PathBuf,
    checkpoint_meta: PathBuf,
    history: PathBuf,
    metrics_json: PathBuf,
    metrics_csv: PathBuf,
    edges: PathBuf,
}

fn load_dataset(cfg: &RunConfig) -> Result<InteractionDataset, CliError> {
    let (ds, manifest) = data::read_artifacts(&cfg.output.dir).map_err(core)?;
    if manifest.config_hash != cfg.hash() {
        return Err(CliError::Data(format!(
            "dataset artifacts were produced under config {} but the current config hashes to {}",
            manifest.config_hash,
            cfg.hash()
        )));
    }
    Ok(ds)
}

pub fn cmd_ingest(cfg: &RunConfig) -> Result<(), CliError> {
    if !cfg.data.path.exists() {
        return Err(CliError::Data(format!(
            "input file {} does not exist",
            cfg.data.path.display()
        )));
    }
    let ds = load_interactions(
        &cfg.data.path,
        cfg.data.mode,
        LoadOptions { normalize_ratings: cfg.data.normalize_ratings },
    )
    .map_err(core)?;
    let (a, b, c) = (cfg.data.ratios[0], cfg.data.ratios[1], cfg.data.ratios[2]);
    let split = data::split(&ds, (a, b, c), cfg.data.seed).map_err(core)?;
    let (ds, report) = enforce_transductive(split).map_err(core)?;
    let manifest = data::write_artifacts(&ds, &report, &cfg.output.dir, &cfg.hash()).map_err(core)?;
    println!(
        "ingest: {} users, {} items, {} records ({}/{}/{} split, {} dropped)",
        manifest.n_users,
        manifest.n_items,
        manifest.n_records,
        manifest.n_train,
        manifest.n_val,
        manifest.n_test,
        report.dropped_val + report.dropped_test
    );
    Ok(())
}

pub fn cmd_cluster(cfg: &RunConfig) -> Result<(), CliError> {
    let ds = load_dataset(cfg)?;
    let g = BipartiteGraph::from_dataset(&ds).map_err(core)?;
    let art = paths(cfg);
    if cfg.output.dump_graph {
        g.write_edge_list(&art.edges).map_err(core)?;
    }
    let started = Instant::now();
    let p = louvain(&g, cfg.scheme.resolution).map_err(core)?;
    let p = relabel(&p);
    let elapsed = started.elapsed().as_secs_f64();
    let q = modularity(&g, &p, cfg.scheme.resolution).map_err(core)?;
    clustering::write_partition(&p, q, &cfg.hash(), &art.partition).map_err(core)?;
    println!(
        "cluster: {} clusters, Q = {q:.6}, resolution {}, {elapsed:.3}s",
        p.n_clusters, cfg.scheme.resolution
    );
    Ok(())
}

fn read_partition_checked(cfg: &RunConfig, path: &Path) -> Result<Partition, CliError> {
    let (p, hash) = clustering::read_partition(path).map_err(core)?;
    if hash != cfg.hash() {
        return Err(CliError::Data(format!(
            "partition {} belongs to config {hash}, expected {}",
            path.display(),
            cfg.hash()
        )));
    }
    Ok(p)
}

fn build_assignment(
    cfg: &RunConfig,
    ds: &InteractionDataset,
    art: &Artifacts,
) -> Result<HashAssignment, CliError> {
    let scheme = cfg.scheme_kind()?;
    let buckets = |side: Option<usize>| {
        side.ok_or_else(|| CliError::Config(format!("scheme {scheme} needs bucket counts")))
    };
    let assignment = match scheme {
        Scheme::Full => hash_full(ds),
        Scheme::Random => hash_modulo(
            ds,
            buckets(cfg.scheme.buckets_users)?,
            buckets(cfg.scheme.buckets_items)?,
        )
        .map_err(core)?,
        Scheme::Frequency => hash_frequency(
            ds,
            buckets(cfg.scheme.buckets_users)?,
            buckets(cfg.scheme.buckets_items)?,
        )
        .map_err(core)?,
        Scheme::Double => hash_double(
            ds,
            buckets(cfg.scheme.buckets_users)?,
            buckets(cfg.scheme.buckets_items)?,
            cfg.scheme.seed,
        )
        .map_err(core)?,
        Scheme::DoubleFrequency => hash_double_frequency(
            ds,
            buckets(cfg.scheme.buckets_users)?,
            buckets(cfg.scheme.buckets_items)?,
            cfg.scheme.seed,
        )
        .map_err(core)?,
        Scheme::LshStructure => {
            let g = BipartiteGraph::from_dataset(ds).map_err(core)?;
            let bits = match cfg.scheme.bits {
                Some(b) => b,
                None => {
                    let rows = buckets(cfg.scheme.buckets_users)?;
                    (rows.max(2) as f64).log2().ceil() as u32
                }
            };
            hash_lsh_structure(&g, bits, cfg.scheme.seed).map_err(core)?
        }
        Scheme::GraphHash => {
            let p = read_partition_checked(cfg, &art.partition)?;
            graph_hash(&p).map_err(core)?
        }
        Scheme::DoubleGraphHash => {
            let p = read_partition_checked(cfg, &art.partition)?;
            double_graph_hash(&p, cfg.scheme.seed).map_err(core)?
        }
    };
    Ok(assignment)
}

pub fn cmd_hash(cfg: &RunConfig) -> Result<(), CliError> {
    let ds = load_dataset(cfg)?;
    let art = paths(cfg);
    let assignment = build_assignment(cfg, &ds, &art)?;
    hashing::write_assignment(&assignment, &cfg.hash(), &art.assignment).map_err(core)?;
    let stats = collision_stats(&assignment);
    let json = serde_json::to_string_pretty(&stats)
        .map_err(|e| CliError::Data(format!("collision stats: {e}")))?;
    fs::write(&art.collisions, json + "\n").map_err(|e| CliError::Data(e.to_string()))?;
    println!(
        "hash: scheme {} -> {} user rows, {} item rows ({} params at dim {})",
        assignment.scheme,
        assignment.users.table_rows,
        assignment.items.table_rows,
        assignment.n_params(cfg.model.dim),
        cfg.model.dim,
    );
    Ok(())
}

fn read_assignment_checked(cfg: &RunConfig, art: &Artifacts) -> Result<HashAssignment, CliError> {
    let (assignment, hash) = hashing::read_assignment(&art.assignment).map_err(core)?;
    if hash != cfg.hash() {
        return Err(CliError::Data(format!(
            "assignment belongs to config {hash}, expected {}",
            cfg.hash()
        )));
    }
    Ok(assignment)
}

pub fn cmd_train(cfg: &RunConfig) -> Result<(), CliError> {
    let ds = load_dataset(cfg)?;
    let art = paths(cfg);
    let assignment = read_assignment_checked(cfg, &art)?;
    let g = BipartiteGraph::from_dataset(&ds).map_err(core)?;
    let model_cfg = cfg.model_config();
    let train_cfg = cfg.train_config();
    let out = train(&ds, &g, &assignment, &model_cfg, &train_cfg).map_err(core)?;

    models::write_checkpoint(&out.model, &art.checkpoint).map_err(core)?;
    let meta = CheckpointMeta {
        config_hash: cfg.hash(),
        config: model_cfg,
        seed: train_cfg.seed,
        best_epoch: out.best_epoch,
        val_metric: out.best_metric,
        user_rows: out.model.user_table.rows,
        item_rows: out.model.item_table.rows,
    };
    let json = serde_json::to_string_pretty(&meta)
        .map_err(|e| CliError::Data(format!("checkpoint meta: {e}")))?;
    fs::write(&art.checkpoint_meta, json + "\n").map_err(|e| CliError::Data(e.to_string()))?;

    let mut w = fs::File::create(&art.history).map_err(|e| CliError::Data(e.to_string()))?;
    writeln!(w, "epoch,train_loss,val_metric,elapsed_s").map_err(|e| CliError::Data(e.to_string()))?;
    for h in &out.history {
        writeln!(w, "{},{},{},{:.3}", h.epoch, h.train_loss, h.val_metric, h.elapsed_s)
            .map_err(|e| CliError::Data(e.to_string()))?;
    }
    println!(
        "train: best epoch {} of {}, val metric {:.6}",
        out.best_epoch,
        out.history.len(),
        out.best_metric
    );
    Ok(())
}

fn load_checkpoint(art: &Artifacts) -> Result<(Model, CheckpointMeta), CliError> {
    let meta: CheckpointMeta =
        serde_json::from_str(&fs::read_to_string(&art.checkpoint_meta).map_err(|e| {
            CliError::Data(format!("missing checkpoint sidecar: {e}"))
        })?)
        .map_err(|e| CliError::Data(format!("checkpoint sidecar: {e}")))?;
    let model = models::read_checkpoint(&art.checkpoint, &meta).map_err(core)?;
    Ok((model, meta))
}

pub fn cmd_eval(cfg: &RunConfig, threads: usize) -> Result<(), CliError> {
    let ds = load_dataset(cfg)?;
    let art = paths(cfg);
    let assignment = read_assignment_checked(cfg, &art)?;
    let (model, meta) = load_checkpoint(&art)?;
    if meta.config_hash != cfg.hash() {
        return Err(CliError::Data(format!(
            "checkpoint belongs to config {}, expected {}; refusing mismatched pair",
            meta.config_hash,
            cfg.hash()
        )));
    }
    let g = BipartiteGraph::from_dataset(&ds).map_err(core)?;
    let edges = &cfg.eval.bins;
    let bins = percentile_bins(&ds.user_freq, edges).map_err(core)?;

    let mut report = MetricsReport {
        config_hash: cfg.hash(),
        scheme: assignment.scheme.to_string(),
        backbone: format!("{:?}", model.config.backbone).to_lowercase(),
        n_params: model.n_params(),
        k: cfg.eval.k,
        recall_at_k: None,
        ndcg_at_k: None,
        logloss: None,
        auc: None,
        retrieved_item_degree: None,
        smoothness: None,
        subgroups: Vec::new(),
    };

    if ds.mode == DatasetMode::Retrieval {
        let (zu, zi) = entity_embeddings(&model, &assignment, &g).map_err(core)?;
        let train_items = ds.user_items(SplitTag::Train);
        let test_items = ds.user_items(SplitTag::Test);
        let eval =
            evaluate_retrieval(&zu, &zi, &train_items, &test_items, cfg.eval.k, threads > 1);
        report.recall_at_k = Some(100.0 * eval.recall);
        report.ndcg_at_k = Some(100.0 * eval.ndcg);
        let topk: Vec<Vec<u32>> = eval
            .per_user
            .iter()
            .flatten()
            .map(|o| o.topk.clone())
            .collect();
        report.retrieved_item_degree = retrieved_item_degree(&topk, &g).ok();
        report.subgroups = subgroup_retrieval(&eval, &bins, edges);

        if cfg.eval.smoothness && art.partition.exists() {
            let p = read_partition_checked(cfg, &art.partition)?;
            let two_hop_u = two_hop_clusters(&g, Side::User);
            let two_hop_i = two_hop_clusters(&g, Side::Item);
            report.smoothness = Some(SmoothnessReport {
                cluster_user: smoothness(&zu, &ClusterMap::Labels(&p.user_labels)),
                cluster_item: smoothness(&zi, &ClusterMap::Labels(&p.item_labels)),
                two_hop_user: smoothness(&zu, &ClusterMap::Neighborhoods(&two_hop_u)),
                two_hop_item: smoothness(&zi, &ClusterMap::Neighborhoods(&two_hop_i)),
            });
        }
    } else {
        let test_records: Vec<Record> = ds.split_records(SplitTag::Test).copied().collect();
        if test_records.is_empty() {
            return Err(CliError::Data("ctr evaluation needs test records".into()));
        }
        let probs = ctr_scores(&model, &assignment, &test_records);
        let labels: Vec<u8> = test_records.iter().map(|r| r.label.unwrap_or(0)).collect();
        report.logloss = Some(mean_logloss(&probs, &labels));
        let pos: Vec<f64> =
            probs.iter().zip(&labels).filter(|(_, &y)| y == 1).map(|(&p, _)| p).collect();
        let neg: Vec<f64> =
            probs.iter().zip(&labels).filter(|(_, &y)| y == 0).map(|(&p, _)| p).collect();
        report.auc = auc(&pos, &neg).ok();
        report.subgroups = subgroup_ctr(&test_records, &probs, &bins, edges);
    }

    write_metrics(&report, &art)?;
    match (report.recall_at_k, report.logloss) {
        (Some(r), _) => println!(
            "eval: recall@{} = {r:.4}%, ndcg@{} = {:.4}%, {} params",
            cfg.eval.k,
            cfg.eval.k,
            report.ndcg_at_k.unwrap_or(0.0),
            report.n_params
        ),
        (_, Some(l)) => println!(
            "eval: logloss = {l:.6}, auc = {:.6}, {} params",
            report.auc.unwrap_or(f64::NAN),
            report.n_params
        ),
        _ => {}
    }
    Ok(())
}

fn write_metrics(report: &MetricsReport, art: &Artifacts) -> Result<(), CliError> {
    let json = serde_json::to_string_pretty(report)
        .map_err(|e| CliError::Data(format!("metrics: {e}")))?;
    fs::write(&art.metrics_json, json + "\n").map_err(|e| CliError::Data(e.to_string()))?;

    let mut w = fs::File::create(&art.metrics_csv).map_err(|e| CliError::Data(e.to_string()))?;
    writeln!(w, "scheme,backbone,metric,bin,value").map_err(|e| CliError::Data(e.to_string()))?;
    let mut row = |metric: &str, bin: &str, value: f64| -> Result<(), CliError> {
        writeln!(w, "{},{},{},{},{}", report.scheme, report.backbone, metric, bin, value)
            .map_err(|e| CliError::Data(e.to_string()))
    };
    row("n_params", "all", report.n_params as f64)?;
    if let Some(v) = report.recall_at_k {
        row(&format!("recall@{}", report.k), "all", v)?;
    }
    if let Some(v) = report.ndcg_at_k {
        row(&format!("ndcg@{}", report.k), "all", v)?;
    }
    if let Some(v) = report.logloss {
        row("logloss", "all", v)?;
    }
    if let Some(v) = report.auc {
        row("auc", "all", v)?;
    }
    if let Some(v) = report.retrieved_item_degree {
        row("retrieved_item_degree", "all", v)?;
    }
    if let Some(s) = &report.smoothness {
        row("smoothness_cluster_user", "all", s.cluster_user)?;
        row("smoothness_cluster_item", "all", s.cluster_item)?;
        row("smoothness_two_hop_user", "all", s.two_hop_user)?;
        row("smoothness_two_hop_item", "all", s.two_hop_item)?;
    }
    for b in &report.subgroups {
        if let Some(v) = b.recall {
            row(&format!("recall@{}", report.k), &b.label, 100.0 * v)?;
        }
        if let Some(v) = b.ndcg {
            row(&format!("ndcg@{}", report.k), &b.label, 100.0 * v)?;
        }
        if let Some(v) = b.logloss {
            row("logloss", &b.label, v)?;
        }
        if let Some(v) = b.auc {
            row("auc", &b.label, v)?;
        }
    }
    Ok(())
}

pub fn cmd_run(cfg: &RunConfig, threads: usize) -> Result<(), CliError> {
    cmd_ingest(cfg)?;
    let scheme = cfg.scheme_kind()?;
    if matches!(scheme, Scheme::GraphHash | Scheme::DoubleGraphHash) {
        cmd_cluster(cfg)?;
    }
    cmd_hash(cfg)?;
    cmd_train(cfg)?;
    cmd_eval(cfg, threads)
}

// ---------------------------------------------------------------------------
// Benchmark sweeps
// ---------------------------------------------------------------------------

/// One evaluated training run inside a sweep.
struct SweepPoint {
    scheme: String,
    n_params: usize,
    recall: f64,
    ndcg: f64,
}

fn run_retrieval_point(
    ds: &InteractionDataset,
    g: &BipartiteGraph,
    assignment: &HashAssignment,
    cfg: &RunConfig,
    model_over: Option<clusterhash::models::ModelConfig>,
    train_over: Option<TrainConfig>,
) -> Result<SweepPoint, CliError> {
    let model_cfg = model_over.unwrap_or_else(|| cfg.model_config());
    let train_cfg = train_over.unwrap_or_else(|| cfg.train_config());
    let out = train(ds, g, assignment, &model_cfg, &train_cfg).map_err(core)?;
    let (zu, zi) = entity_embeddings(&out.model, assignment, g).map_err(core)?;
    let train_items = ds.user_items(SplitTag::Train);
    let test_items = ds.user_items(SplitTag::Test);
    let eval = evaluate_retrieval(&zu, &zi, &train_items, &test_items, cfg.eval.k, false);
    Ok(SweepPoint {
        scheme: assignment.scheme.to_string(),
        n_params: assignment.n_params(model_cfg.dim),
        recall: 100.0 * eval.recall,
        ndcg: 100.0 * eval.ndcg,
    })
}

/// Resolution sweep: cluster-based hashing against the frequency-aware
/// double-hash baseline at matched table sizes, one row per (resolution,
/// scheme).
pub fn cmd_bench_resolution(cfg: &RunConfig) -> Result<(), CliError> {
    let ds = load_dataset(cfg)?;
    let g = BipartiteGraph::from_dataset(&ds).map_err(core)?;
    let art = paths(cfg);
    let path = art.dir.join("bench_resolution.csv");
    let mut w = fs::File::create(&path).map_err(|e| CliError::Data(e.to_string()))?;
    writeln!(w, "resolution,scheme,n_params,recall,ndcg").map_err(|e| CliError::Data(e.to_string()))?;
    for &res in &cfg.bench.resolutions {
        let p = relabel(&louvain(&g, res).map_err(core)?);
        let gh = graph_hash(&p).map_err(core)?;
        let baseline = hash_double_frequency(
            &ds,
            gh.users.table_rows.max(2),
            gh.items.table_rows.max(2),
            cfg.scheme.seed,
        )
        .map_err(core)?;
        for assignment in [&gh, &baseline] {
            let point = run_retrieval_point(&ds, &g, assignment, cfg, None, None)?;
            writeln!(
                w,
                "{},{},{},{:.4},{:.4}",
                res, point.scheme, point.n_params, point.recall, point.ndcg
            )
            .map_err(|e| CliError::Data(e.to_string()))?;
            println!(
                "bench resolution {res}: {} recall {:.4}% ({} params)",
                point.scheme, point.recall, point.n_params
            );
        }
    }
    Ok(())
}

/// Uniformity-weight sweep for the alignment/uniformity loss: full tables,
/// cluster hashing and the double-frequency baseline at each gamma.
pub fn cmd_bench_gamma(cfg: &RunConfig) -> Result<(), CliError> {
    let ds = load_dataset(cfg)?;
    let g = BipartiteGraph::from_dataset(&ds).map_err(core)?;
    let art = paths(cfg);
    let p = relabel(&louvain(&g, cfg.scheme.resolution).map_err(core)?);
    let gh = graph_hash(&p).map_err(core)?;
    let dfreq = hash_double_frequency(
        &ds,
        gh.users.table_rows.max(2),
        gh.items.table_rows.max(2),
        cfg.scheme.seed,
    )
    .map_err(core)?;
    let full = hash_full(&ds);

    let path = art.dir.join("bench_gamma.csv");
    let mut w = fs::File::create(&path).map_err(|e| CliError::Data(e.to_string()))?;
    writeln!(w, "gamma,scheme,n_params,recall,ndcg").map_err(|e| CliError::Data(e.to_string()))?;
    for &gamma in &cfg.bench.gammas {
        for assignment in [&full, &dfreq, &gh] {
            // the uniformity-weight ablation is defined on the plain
            // dot-product backbone regardless of the configured one
            let mut model_cfg = cfg.model_config();
            model_cfg.backbone = clusterhash::models::Backbone::Mf;
            model_cfg.n_layers = 0;
            model_cfg.loss = clusterhash::models::LossKind::Directau;
            model_cfg.gamma = gamma;
            let mut train_cfg = cfg.train_config();
            train_cfg.gamma = gamma;
            let point =
                run_retrieval_point(&ds, &g, assignment, cfg, Some(model_cfg), Some(train_cfg))?;
            writeln!(
                w,
                "{},{},{},{:.4},{:.4}",
                gamma, point.scheme, point.n_params, point.recall, point.ndcg
            )
            .map_err(|e| CliError::Data(e.to_string()))?;
            println!(
                "bench gamma {gamma}: {} recall {:.4}%",
                point.scheme, point.recall
            );
        }
    }
    Ok(())
}
