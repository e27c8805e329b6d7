//! Modularity-based clustering of the bipartite interaction graph.
//!
//! The objective is the bipartite modularity
//! `Q = (1/m) * sum_C sum_{u,i in C} (A_ui - r * k_u * d_i / m)`,
//! where the null term compares within-cluster user-item pairs against the
//! degree product expectation and `r` is the resolution multiplier. The
//! greedy optimizer below is a Louvain-style local-move + aggregation loop
//! that is fully deterministic: nodes are visited in ascending index order
//! (users first, then items), ties keep the current community or fall to the
//! lowest community id, and no randomness is involved anywhere.
//!
//! Aggregated supernodes carry separate user-side and item-side degree
//! masses, so the exact bipartite objective keeps being optimized at every
//! level and each accepted move strictly increases the flat Q.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::graph::BipartiteGraph;

/// Minimum Q improvement for a local move to be accepted.
pub const EPS_GAIN: f64 = 1e-9;

/// Upper node-count bound for the exhaustive partition search.
pub const BRUTE_FORCE_LIMIT: usize = 10;

/// Cluster assignment over users and items. Labels share one id space, so a
/// cluster may contain nodes from both sides.
#[derive(Clone, Debug, PartialEq)]
pub struct Partition {
    pub user_labels: Vec<u32>,
    pub item_labels: Vec<u32>,
    pub n_clusters: usize,
    pub resolution: f64,
}

impl Partition {
    /// Validates that labels are dense in `[0, n_clusters)` with every
    /// cluster id used at least once.
    pub fn new(user_labels: Vec<u32>, item_labels: Vec<u32>, resolution: f64) -> Result<Self> {
        let max = user_labels
            .iter()
            .chain(item_labels.iter())
            .copied()
            .max()
            .map(|m| m as usize + 1)
            .unwrap_or(0);
        let mut used = vec![false; max];
        for &l in user_labels.iter().chain(item_labels.iter()) {
            used[l as usize] = true;
        }
        if used.iter().any(|u| !u) {
            return Err(Error::InvalidArgument(
                "cluster labels are not dense".into(),
            ));
        }
        Ok(Partition {
            user_labels,
            item_labels,
            n_clusters: max,
            resolution,
        })
    }

    pub fn n_nodes(&self) -> usize {
        self.user_labels.len() + self.item_labels.len()
    }

    /// True when labels already follow first-appearance order (users scanned
    /// ascending, then items).
    pub fn is_relabeled(&self) -> bool {
        let r = relabel(self);
        r.user_labels == self.user_labels && r.item_labels == self.item_labels
    }
}

fn validate(g: &BipartiteGraph, p: &Partition) -> Result<()> {
    if p.user_labels.len() != g.n_users() || p.item_labels.len() != g.n_items() {
        return Err(Error::InvalidArgument(
            "partition does not cover the graph".into(),
        ));
    }
    Ok(())
}

/// Bipartite modularity of a partition.
///
/// Within-edge counts and degree masses are accumulated as integers, so the
/// result is exact up to the final two float divisions.
pub fn modularity(g: &BipartiteGraph, p: &Partition, resolution: f64) -> Result<f64> {
    validate(g, p)?;
    if g.n_edges() == 0 {
        return Err(Error::EmptyGraph);
    }
    let m = g.n_edges() as f64;
    let mut within: u64 = 0;
    for u in 0..g.n_users() {
        let cu = p.user_labels[u];
        for &i in g.user_neighbors(u) {
            if p.item_labels[i as usize] == cu {
                within += 1;
            }
        }
    }
    let mut k_mass = vec![0u64; p.n_clusters];
    let mut d_mass = vec![0u64; p.n_clusters];
    for u in 0..g.n_users() {
        k_mass[p.user_labels[u] as usize] += g.user_degree(u) as u64;
    }
    for i in 0..g.n_items() {
        d_mass[p.item_labels[i] as usize] += g.item_degree(i) as u64;
    }
    let null: f64 = k_mass
        .iter()
        .zip(&d_mass)
        .map(|(&k, &d)| (k as f64) * (d as f64))
        .sum();
    Ok(within as f64 / m - resolution * null / (m * m))
}

/// Evaluates Q through three algebraically equal routes and returns the
/// triple. The first is the direct definition; the other two walk the edges
/// as one-step transition probabilities from the item and the user side.
pub fn modularity_forms(
    g: &BipartiteGraph,
    p: &Partition,
    resolution: f64,
) -> Result<(f64, f64, f64)> {
    validate(g, p)?;
    if g.n_edges() == 0 {
        return Err(Error::EmptyGraph);
    }
    let q_a = modularity(g, p, resolution)?;
    let m = g.n_edges() as f64;

    let mut k_mass = vec![0.0f64; p.n_clusters];
    let mut d_mass = vec![0.0f64; p.n_clusters];
    for u in 0..g.n_users() {
        k_mass[p.user_labels[u] as usize] += g.user_degree(u) as f64;
    }
    for i in 0..g.n_items() {
        d_mass[p.item_labels[i] as usize] += g.item_degree(i) as f64;
    }

    // Edge walked from the item side: (A_ui / d_i) * (d_i / m).
    let mut q_b = 0.0;
    for i in 0..g.n_items() {
        let d = g.item_degree(i) as f64;
        let ci = p.item_labels[i];
        for &u in g.item_neighbors(i) {
            if p.user_labels[u as usize] == ci {
                q_b += (1.0 / d) * (d / m);
            }
        }
    }
    for c in 0..p.n_clusters {
        q_b -= resolution * (k_mass[c] / m) * (d_mass[c] / m);
    }

    // Edge walked from the user side: (A_iu / k_u) * (k_u / m); the null
    // term accumulates per user against its cluster's item mass.
    let mut q_c = 0.0;
    for u in 0..g.n_users() {
        let k = g.user_degree(u) as f64;
        let cu = p.user_labels[u];
        for &i in g.user_neighbors(u) {
            if p.item_labels[i as usize] == cu {
                q_c += (1.0 / k) * (k / m);
            }
        }
        q_c -= resolution * (k / m) * (d_mass[cu as usize] / m);
    }

    Ok((q_a, q_b, q_c))
}

/// Remaps cluster labels to 0,1,2,... by first appearance, scanning users in
/// ascending id order and then items. Membership is unchanged.
pub fn relabel(p: &Partition) -> Partition {
    let mut map = vec![u32::MAX; p.n_clusters];
    let mut next = 0u32;
    let mut remap = |labels: &[u32], map: &mut Vec<u32>| -> Vec<u32> {
        labels
            .iter()
            .map(|&l| {
                let slot = &mut map[l as usize];
                if *slot == u32::MAX {
                    *slot = next;
                    next += 1;
                }
                *slot
            })
            .collect()
    };
    let user_labels = remap(&p.user_labels, &mut map);
    let item_labels = remap(&p.item_labels, &mut map);
    Partition {
        user_labels,
        item_labels,
        n_clusters: next as usize,
        resolution: p.resolution,
    }
}

// ---------------------------------------------------------------------------
// Louvain
// ---------------------------------------------------------------------------

/// Weighted graph at one aggregation level. Every node carries separate
/// user-side and item-side degree masses; edge weights count underlying
/// bipartite edges and each internal edge sits in `self_loops` exactly once.
struct LevelGraph {
    n: usize,
    offsets: Vec<usize>,
    nbrs: Vec<u32>,
    weights: Vec<f64>,
    self_loops: Vec<f64>,
    mass_u: Vec<f64>,
    mass_i: Vec<f64>,
}

fn level0(g: &BipartiteGraph) -> LevelGraph {
    let n_u = g.n_users();
    let n = n_u + g.n_items();
    let m = g.n_edges();
    let mut offsets = Vec::with_capacity(n + 1);
    let mut nbrs = Vec::with_capacity(2 * m);
    offsets.push(0);
    for u in 0..n_u {
        for &i in g.user_neighbors(u) {
            nbrs.push(n_u as u32 + i);
        }
        offsets.push(nbrs.len());
    }
    for i in 0..g.n_items() {
        nbrs.extend_from_slice(g.item_neighbors(i));
        offsets.push(nbrs.len());
    }
    let mut mass_u = vec![0.0; n];
    let mut mass_i = vec![0.0; n];
    for u in 0..n_u {
        mass_u[u] = g.user_degree(u) as f64;
    }
    for i in 0..g.n_items() {
        mass_i[n_u + i] = g.item_degree(i) as f64;
    }
    LevelGraph {
        n,
        offsets,
        weights: vec![1.0; 2 * m],
        nbrs,
        self_loops: vec![0.0; n],
        mass_u,
        mass_i,
    }
}

/// Q of the level graph with every node in its own community. Equals the
/// flat bipartite Q of the partition the level represents.
fn q_singletons(lg: &LevelGraph, m: f64, resolution: f64) -> f64 {
    let internal: f64 = lg.self_loops.iter().sum();
    let null: f64 = lg
        .mass_u
        .iter()
        .zip(&lg.mass_i)
        .map(|(&k, &d)| k * d)
        .sum();
    internal / m - resolution * null / (m * m)
}

/// One local-move phase. Returns community labels, final Q, the number of
/// accepted moves and Q after every sweep.
fn local_move(
    lg: &LevelGraph,
    m: f64,
    resolution: f64,
    q0: f64,
) -> (Vec<u32>, f64, usize, Vec<f64>) {
    let n = lg.n;
    let mut comm: Vec<u32> = (0..n as u32).collect();
    let mut comm_ku = lg.mass_u.clone();
    let mut comm_di = lg.mass_i.clone();
    let mut nw = vec![0.0f64; n];
    let mut touched: Vec<u32> = Vec::new();
    let inv_m = 1.0 / m;
    let res_m2 = resolution / (m * m);
    let mut q = q0;
    let mut total_moves = 0;
    let mut trace = Vec::new();

    loop {
        let mut moved = 0;
        for x in 0..n {
            let (start, end) = (lg.offsets[x], lg.offsets[x + 1]);
            if start == end {
                continue; // isolated nodes stay permanent singletons
            }
            let cx = comm[x] as usize;
            for e in start..end {
                let y = lg.nbrs[e] as usize;
                if y == x {
                    continue;
                }
                let cy = comm[y] as usize;
                if nw[cy] == 0.0 {
                    touched.push(cy as u32);
                }
                nw[cy] += lg.weights[e];
            }
            let a = lg.mass_u[x];
            let b = lg.mass_i[x];
            let e_own = nw[cx];
            let ka = comm_ku[cx];
            let da = comm_di[cx];
            let mut best_c = cx;
            let mut best_delta = 0.0;
            for &tc in &touched {
                let tc = tc as usize;
                if tc == cx {
                    continue;
                }
                let delta = inv_m * (nw[tc] - e_own)
                    - res_m2
                        * (a * (comm_di[tc] - da) + b * (comm_ku[tc] - ka) + 2.0 * a * b);
                if delta > best_delta {
                    best_delta = delta;
                    best_c = tc;
                } else if delta == best_delta && best_c != cx && tc < best_c {
                    best_c = tc;
                }
            }
            for &tc in &touched {
                nw[tc as usize] = 0.0;
            }
            touched.clear();
            if best_c != cx && best_delta > EPS_GAIN {
                comm[x] = best_c as u32;
                comm_ku[cx] -= a;
                comm_di[cx] -= b;
                comm_ku[best_c] += a;
                comm_di[best_c] += b;
                q += best_delta;
                moved += 1;
            }
        }
        total_moves += moved;
        trace.push(q);
        if moved == 0 {
            break;
        }
    }
    (comm, q, total_moves, trace)
}

/// Coarsens communities into supernodes, renumbering by first appearance in
/// node order. Returns the new level and the community -> supernode map.
fn aggregate(lg: &LevelGraph, comm: &[u32]) -> (LevelGraph, Vec<u32>) {
    let n = lg.n;
    let mut new_id = vec![u32::MAX; n];
    let mut n_new = 0u32;
    for &c in comm {
        if new_id[c as usize] == u32::MAX {
            new_id[c as usize] = n_new;
            n_new += 1;
        }
    }
    let n_new = n_new as usize;

    let mut mass_u = vec![0.0; n_new];
    let mut mass_i = vec![0.0; n_new];
    let mut self_loops = vec![0.0; n_new];
    let mut internal_twice = vec![0.0; n_new];
    let mut rows: Vec<Vec<(u32, f64)>> = vec![Vec::new(); n_new];
    for x in 0..n {
        let sx = new_id[comm[x] as usize] as usize;
        mass_u[sx] += lg.mass_u[x];
        mass_i[sx] += lg.mass_i[x];
        self_loops[sx] += lg.self_loops[x];
        for e in lg.offsets[x]..lg.offsets[x + 1] {
            let sy = new_id[comm[lg.nbrs[e] as usize] as usize] as usize;
            if sx == sy {
                internal_twice[sx] += lg.weights[e];
            } else {
                rows[sx].push((sy as u32, lg.weights[e]));
            }
        }
    }
    for (s, t) in self_loops.iter_mut().zip(&internal_twice) {
        *s += t / 2.0; // each internal edge was seen from both endpoints
    }

    let mut offsets = Vec::with_capacity(n_new + 1);
    let mut nbrs = Vec::new();
    let mut weights = Vec::new();
    offsets.push(0);
    for row in &mut rows {
        row.sort_unstable_by_key(|&(y, _)| y);
        let mut k = 0;
        while k < row.len() {
            let y = row[k].0;
            let mut w = 0.0;
            while k < row.len() && row[k].0 == y {
                w += row[k].1;
                k += 1;
            }
            nbrs.push(y);
            weights.push(w);
        }
        offsets.push(nbrs.len());
    }

    (
        LevelGraph {
            n: n_new,
            offsets,
            nbrs,
            weights,
            self_loops,
            mass_u,
            mass_i,
        },
        new_id,
    )
}

/// Greedy modularity maximization. Deterministic: repeated runs on the same
/// graph return identical partitions.
pub fn louvain(g: &BipartiteGraph, resolution: f64) -> Result<Partition> {
    louvain_with_trace(g, resolution).map(|(p, _)| p)
}

/// Like [`louvain`] but also returns Q after every local-move sweep across
/// all levels. The trace is non-decreasing.
pub fn louvain_with_trace(g: &BipartiteGraph, resolution: f64) -> Result<(Partition, Vec<f64>)> {
    if resolution <= 0.0 {
        return Err(Error::InvalidArgument("resolution must be positive".into()));
    }
    if g.n_edges() == 0 {
        return Err(Error::EmptyGraph);
    }
    let m = g.n_edges() as f64;
    let mut lg = level0(g);
    let mut flat: Vec<u32> = (0..lg.n as u32).collect();
    let mut trace = Vec::new();

    loop {
        let q0 = q_singletons(&lg, m, resolution);
        let (comm, _q, moves, sweeps) = local_move(&lg, m, resolution, q0);
        trace.extend(sweeps);
        if moves == 0 {
            break;
        }
        let (next, new_id) = aggregate(&lg, &comm);
        for f in flat.iter_mut() {
            *f = new_id[comm[*f as usize] as usize];
        }
        lg = next;
    }

    let n_u = g.n_users();
    let partition = Partition {
        user_labels: flat[..n_u].to_vec(),
        item_labels: flat[n_u..].to_vec(),
        n_clusters: lg.n,
        resolution,
    };
    Ok((partition, trace))
}

// ---------------------------------------------------------------------------
// Exhaustive oracle
// ---------------------------------------------------------------------------

/// Enumerates every set partition of the nodes (restricted-growth strings)
/// and returns the Q-maximizing one. Only feasible for tiny graphs; the node
/// count is capped at [`BRUTE_FORCE_LIMIT`].
pub fn brute_force_partition(g: &BipartiteGraph, resolution: f64) -> Result<(Partition, f64)> {
    let n_u = g.n_users();
    let n = n_u + g.n_items();
    if n > BRUTE_FORCE_LIMIT {
        return Err(Error::SizeBound { nodes: n, limit: BRUTE_FORCE_LIMIT });
    }
    if g.n_edges() == 0 {
        return Err(Error::EmptyGraph);
    }
    if n == 0 {
        return Err(Error::InvalidArgument("empty node set".into()));
    }

    let m = g.n_edges() as f64;
    let mut labels = vec![0u32; n];
    let mut best_labels = labels.clone();
    let mut best_q = f64::NEG_INFINITY;
    let mut k_mass = [0u64; BRUTE_FORCE_LIMIT];
    let mut d_mass = [0u64; BRUTE_FORCE_LIMIT];

    // Iterative restricted-growth enumeration: labels[0] = 0 and each later
    // label is at most 1 + max of the prefix.
    loop {
        let q = eval_labels(g, &labels, resolution, m, &mut k_mass, &mut d_mass);
        if q > best_q {
            best_q = q;
            best_labels.copy_from_slice(&labels);
        }

        // advance to the next restricted-growth string
        let mut pos = n;
        loop {
            if pos <= 1 {
                pos = 0;
                break;
            }
            pos -= 1;
            let max_prefix = labels[..pos].iter().copied().max().unwrap();
            if labels[pos] <= max_prefix {
                labels[pos] += 1;
                for l in labels[pos + 1..].iter_mut() {
                    *l = 0;
                }
                break;
            }
        }
        if pos == 0 {
            break;
        }
    }

    let user_labels = best_labels[..n_u].to_vec();
    let item_labels = best_labels[n_u..].to_vec();
    let p = relabel(&Partition {
        n_clusters: best_labels.iter().copied().max().unwrap() as usize + 1,
        user_labels,
        item_labels,
        resolution,
    });
    Ok((p, best_q))
}

fn eval_labels(
    g: &BipartiteGraph,
    labels: &[u32],
    resolution: f64,
    m: f64,
    k_mass: &mut [u64; BRUTE_FORCE_LIMIT],
    d_mass: &mut [u64; BRUTE_FORCE_LIMIT],
) -> f64 {
    let n_u = g.n_users();
    k_mass.fill(0);
    d_mass.fill(0);
    let mut within = 0u64;
    for u in 0..n_u {
        k_mass[labels[u] as usize] += g.user_degree(u) as u64;
        for &i in g.user_neighbors(u) {
            if labels[n_u + i as usize] == labels[u] {
                within += 1;
            }
        }
    }
    for i in 0..g.n_items() {
        d_mass[labels[n_u + i] as usize] += g.item_degree(i) as u64;
    }
    let null: f64 = k_mass
        .iter()
        .zip(d_mass.iter())
        .map(|(&k, &d)| (k as f64) * (d as f64))
        .sum();
    within as f64 / m - resolution * null / (m * m)
}

// ---------------------------------------------------------------------------
// Partition file format
// ---------------------------------------------------------------------------

/// Writes `side<TAB>dense_id<TAB>cluster_id` lines, users first, with a
/// header comment carrying resolution, Q and the config hash.
pub fn write_partition(
    p: &Partition,
    q: f64,
    config_hash: &str,
    path: &Path,
) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    writeln!(
        w,
        "# resolution={} q={} n_clusters={} config_hash={}",
        p.resolution, q, p.n_clusters, config_hash
    )?;
    for (u, &l) in p.user_labels.iter().enumerate() {
        writeln!(w, "U\t{u}\t{l}")?;
    }
    for (i, &l) in p.item_labels.iter().enumerate() {
        writeln!(w, "I\t{i}\t{l}")?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a partition file written by [`write_partition`]. Returns the
/// partition and the config hash from the header.
pub fn read_partition(path: &Path) -> Result<(Partition, String)> {
    let text = fs::read_to_string(path)?;
    let mut resolution = 1.0f64;
    let mut config_hash = String::new();
    let mut users: Vec<(usize, u32)> = Vec::new();
    let mut items: Vec<(usize, u32)> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        if let Some(header) = line.strip_prefix('#') {
            for field in header.split_whitespace() {
                if let Some(v) = field.strip_prefix("resolution=") {
                    resolution = v.parse().map_err(|_| Error::Parse {
                        line: lineno + 1,
                        msg: "bad resolution".into(),
                    })?;
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
        let label: u32 = f
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Parse { line: lineno + 1, msg: "bad label".into() })?;
        match side {
            Some("U") => users.push((id, label)),
            Some("I") => items.push((id, label)),
            _ => {
                return Err(Error::Parse { line: lineno + 1, msg: "bad side tag".into() });
            }
        }
    }
    users.sort_unstable();
    items.sort_unstable();
    if users.iter().enumerate().any(|(k, &(id, _))| k != id)
        || items.iter().enumerate().any(|(k, &(id, _))| k != id)
    {
        return Err(Error::Schema("partition ids are not dense".into()));
    }
    let p = Partition::new(
        users.into_iter().map(|(_, l)| l).collect(),
        items.into_iter().map(|(_, l)| l).collect(),
        resolution,
    )?;
    Ok((p, config_hash))
}
