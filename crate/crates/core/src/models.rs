//! Bucketed embedding tables and the scoring backbones.
//!
//! Three desk-scale backbones share the tables: a dot-product matrix
//! factorization scorer, degree-normalized message passing stacked on top of
//! it, and a logistic head for click prediction. Math is f64 end to end;
//! checkpoints store f32 as the interchange format.

use std::fs;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::BipartiteGraph;
use crate::hashing::SideCodes;

/// Probability clamp used by the CTR head and the log loss.
pub const PROB_EPS: f64 = 1e-7;

/// Dense row-major matrix; doubles as bucket table and per-entity matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable {
    pub rows: usize,
    pub dim: usize,
    data: Vec<f64>,
}

impl EmbeddingTable {
    pub fn zeros(rows: usize, dim: usize) -> Self {
        EmbeddingTable { rows, dim, data: vec![0.0; rows * dim] }
    }

    /// Zero-mean Gaussian init with the given std, seeded.
    pub fn gaussian(rows: usize, dim: usize, std: f64, rng: &mut ChaCha8Rng) -> Self {
        let data = (0..rows * dim)
            .map(|_| std * rng.sample::<f64, _>(rand_distr::StandardNormal))
            .collect();
        EmbeddingTable { rows, dim, data }
    }

    pub fn from_vec(rows: usize, dim: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * dim);
        EmbeddingTable { rows, dim, data }
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.dim..(r + 1) * self.dim]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.dim..(r + 1) * self.dim]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn fill(&mut self, v: f64) {
        self.data.fill(v);
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backbone {
    Mf,
    Lightgcn,
    CtrLogistic,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Bpr,
    Directau,
    Logloss,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct ModelConfig {
    pub backbone: Backbone,
    pub dim: usize,
    pub n_layers: usize,
    pub loss: LossKind,
    pub gamma: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            backbone: Backbone::Mf,
            dim: 64,
            n_layers: 0,
            loss: LossKind::Bpr,
            gamma: 1.0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::InvalidArgument("dim must be positive".into()));
        }
        if self.loss == LossKind::Directau && self.gamma <= 0.0 {
            return Err(Error::InvalidArgument("gamma must be positive".into()));
        }
        match (self.backbone, self.loss) {
            (Backbone::CtrLogistic, LossKind::Logloss) => Ok(()),
            (Backbone::CtrLogistic, _) | (_, LossKind::Logloss) => Err(Error::InvalidArgument(
                "logloss pairs with the ctr_logistic backbone only".into(),
            )),
            (Backbone::Lightgcn, LossKind::Directau) => Err(Error::InvalidArgument(
                "directau is supported on the mf backbone".into(),
            )),
            _ => Ok(()),
        }
    }
}

/// Sum of the rows addressed by `codes` (one row for single-code schemes,
/// row sum for double-code schemes).
pub fn lookup(table: &EmbeddingTable, codes: &[u32]) -> Result<Vec<f64>> {
    let mut out = vec![0.0; table.dim];
    lookup_into(table, codes, &mut out)?;
    Ok(out)
}

pub fn lookup_into(table: &EmbeddingTable, codes: &[u32], out: &mut [f64]) -> Result<()> {
    out.fill(0.0);
    for &c in codes {
        if c as usize >= table.rows {
            return Err(Error::IdOutOfRange {
                kind: "bucket code",
                id: c as usize,
                size: table.rows,
            });
        }
        for (o, w) in out.iter_mut().zip(table.row(c as usize)) {
            *o += w;
        }
    }
    Ok(())
}

/// Per-entity embedding matrix assembled from bucket rows.
pub fn gather(table: &EmbeddingTable, codes: &SideCodes) -> EmbeddingTable {
    let n = codes.n_entities();
    let mut out = EmbeddingTable::zeros(n, table.dim);
    for x in 0..n {
        let row = out.row_mut(x);
        for &c in codes.codes_of(x) {
            for (o, w) in row.iter_mut().zip(table.row(c as usize)) {
                *o += w;
            }
        }
    }
    out
}

/// Adds per-entity gradients back onto the bucket rows they came from.
pub fn scatter_add(grads: &EmbeddingTable, codes: &SideCodes, table_grad: &mut EmbeddingTable) {
    for x in 0..codes.n_entities() {
        let g = grads.row(x);
        for &c in codes.codes_of(x) {
            let row = table_grad.row_mut(c as usize);
            for (r, v) in row.iter_mut().zip(g) {
                *r += v;
            }
        }
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Dot-product relevance score.
#[inline]
pub fn mf_score(user_emb: &[f64], item_emb: &[f64]) -> f64 {
    dot(user_emb, item_emb)
}

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Click probability `sigmoid(u.i + b_u + b_i + b0)`, clamped away from 0
/// and 1.
pub fn ctr_score(user_emb: &[f64], item_emb: &[f64], b_u: f64, b_i: f64, b0: f64) -> f64 {
    sigmoid(dot(user_emb, item_emb) + b_u + b_i + b0).clamp(PROB_EPS, 1.0 - PROB_EPS)
}

fn inv_sqrt_degrees(g: &BipartiteGraph) -> (Vec<f64>, Vec<f64>) {
    let isk = (0..g.n_users())
        .map(|u| {
            let d = g.user_degree(u);
            if d == 0 { 0.0 } else { 1.0 / (d as f64).sqrt() }
        })
        .collect();
    let isd = (0..g.n_items())
        .map(|i| {
            let d = g.item_degree(i);
            if d == 0 { 0.0 } else { 1.0 / (d as f64).sqrt() }
        })
        .collect();
    (isk, isd)
}

fn step_users_from_items(
    g: &BipartiteGraph,
    xi: &EmbeddingTable,
    isk: &[f64],
    isd: &[f64],
) -> EmbeddingTable {
    let dim = xi.dim;
    let mut out = EmbeddingTable::zeros(g.n_users(), dim);
    for u in 0..g.n_users() {
        let row = out.row_mut(u);
        for &i in g.user_neighbors(u) {
            let w = isk[u] * isd[i as usize];
            for (r, v) in row.iter_mut().zip(xi.row(i as usize)) {
                *r += w * v;
            }
        }
    }
    out
}

fn step_items_from_users(
    g: &BipartiteGraph,
    xu: &EmbeddingTable,
    isk: &[f64],
    isd: &[f64],
) -> EmbeddingTable {
    let dim = xu.dim;
    let mut out = EmbeddingTable::zeros(g.n_items(), dim);
    for i in 0..g.n_items() {
        let row = out.row_mut(i);
        for &u in g.item_neighbors(i) {
            let w = isd[i] * isk[u as usize];
            for (r, v) in row.iter_mut().zip(xu.row(u as usize)) {
                *r += w * v;
            }
        }
    }
    out
}

fn add_scaled(acc: &mut EmbeddingTable, x: &EmbeddingTable, s: f64) {
    for (a, v) in acc.as_mut_slice().iter_mut().zip(x.as_slice()) {
        *a += s * v;
    }
}

/// Degree-normalized message passing over the bipartite graph, iterated
/// `n_layers` times; the result is the mean of layers 0..=n_layers. With
/// zero layers this is the identity. Degree-0 nodes keep only their layer-0
/// term (their normalizer is treated as 0).
pub fn lightgcn_propagate(
    g: &BipartiteGraph,
    xu: &EmbeddingTable,
    xi: &EmbeddingTable,
    n_layers: usize,
) -> Result<(EmbeddingTable, EmbeddingTable)> {
    if xu.rows != g.n_users() || xi.rows != g.n_items() || xu.dim != xi.dim {
        return Err(Error::InvalidArgument(
            "embedding shapes do not match the graph".into(),
        ));
    }
    let (isk, isd) = inv_sqrt_degrees(g);
    let scale = 1.0 / (n_layers as f64 + 1.0);
    let mut acc_u = EmbeddingTable::zeros(xu.rows, xu.dim);
    let mut acc_i = EmbeddingTable::zeros(xi.rows, xi.dim);
    add_scaled(&mut acc_u, xu, scale);
    add_scaled(&mut acc_i, xi, scale);
    let mut cur_u = xu.clone();
    let mut cur_i = xi.clone();
    for _ in 0..n_layers {
        let next_u = step_users_from_items(g, &cur_i, &isk, &isd);
        let next_i = step_items_from_users(g, &cur_u, &isk, &isd);
        add_scaled(&mut acc_u, &next_u, scale);
        add_scaled(&mut acc_i, &next_i, scale);
        cur_u = next_u;
        cur_i = next_i;
    }
    Ok((acc_u, acc_i))
}

/// Adjoint of [`lightgcn_propagate`]: maps gradients at the propagated
/// output back to the layer-0 inputs. The propagation matrix blocks are
/// mutually transposed, so the backward pass reuses the forward kernels.
pub fn lightgcn_backward(
    g: &BipartiteGraph,
    grad_u: &EmbeddingTable,
    grad_i: &EmbeddingTable,
    n_layers: usize,
) -> Result<(EmbeddingTable, EmbeddingTable)> {
    if grad_u.rows != g.n_users() || grad_i.rows != g.n_items() {
        return Err(Error::InvalidArgument(
            "gradient shapes do not match the graph".into(),
        ));
    }
    let (isk, isd) = inv_sqrt_degrees(g);
    let scale = 1.0 / (n_layers as f64 + 1.0);
    // d/d(layer k) starts at scale * grad for every k, then flows downward
    let mut du = grad_u.clone();
    let mut di = grad_i.clone();
    for v in du.as_mut_slice() {
        *v *= scale;
    }
    for v in di.as_mut_slice() {
        *v *= scale;
    }
    let mut out_u = du.clone();
    let mut out_i = di.clone();
    for _ in 0..n_layers {
        let prev_u = step_users_from_items(g, &di, &isk, &isd);
        let prev_i = step_items_from_users(g, &du, &isk, &isd);
        du = prev_u;
        di = prev_i;
        add_scaled(&mut out_u, &du, 1.0);
        add_scaled(&mut out_i, &di, 1.0);
    }
    Ok((out_u, out_i))
}

/// Trained model state: bucket tables plus optional CTR biases.
#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub user_table: EmbeddingTable,
    pub item_table: EmbeddingTable,
    pub user_bias: Vec<f64>,
    pub item_bias: Vec<f64>,
    pub global_bias: f64,
}

impl Model {
    pub fn init(config: ModelConfig, user_rows: usize, item_rows: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let user_table = EmbeddingTable::gaussian(user_rows, config.dim, 0.01, &mut rng);
        let item_table = EmbeddingTable::gaussian(item_rows, config.dim, 0.01, &mut rng);
        let has_bias = config.backbone == Backbone::CtrLogistic;
        Model {
            config,
            user_table,
            item_table,
            user_bias: vec![0.0; if has_bias { user_rows } else { 0 }],
            item_bias: vec![0.0; if has_bias { item_rows } else { 0 }],
            global_bias: 0.0,
        }
    }

    pub fn n_params(&self) -> usize {
        self.user_table.rows * self.user_table.dim
            + self.item_table.rows * self.item_table.dim
            + self.user_bias.len()
            + self.item_bias.len()
            + usize::from(!self.user_bias.is_empty())
    }
}

// ---------------------------------------------------------------------------
// Checkpoint format
// ---------------------------------------------------------------------------

const CKPT_MAGIC: &[u8; 4] = b"CHK1";

/// Sidecar JSON stored next to the binary checkpoint.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub config_hash: String,
    pub config: ModelConfig,
    pub seed: u64,
    pub best_epoch: usize,
    pub val_metric: f64,
    pub user_rows: usize,
    pub item_rows: usize,
}

fn backbone_code(b: Backbone) -> u8 {
    match b {
        Backbone::Mf => 0,
        Backbone::Lightgcn => 1,
        Backbone::CtrLogistic => 2,
    }
}

fn backbone_from_code(c: u8) -> Result<Backbone> {
    Ok(match c {
        0 => Backbone::Mf,
        1 => Backbone::Lightgcn,
        2 => Backbone::CtrLogistic,
        _ => return Err(Error::Schema(format!("bad backbone code {c}"))),
    })
}

fn write_f32s(w: &mut impl Write, values: impl Iterator<Item = f64>) -> Result<()> {
    for v in values {
        w.write_all(&(v as f32).to_le_bytes())?;
    }
    Ok(())
}

/// Binary checkpoint: header then row-major little-endian f32 weights, user
/// table first, then items, then biases when present.
pub fn write_checkpoint(model: &Model, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    w.write_all(CKPT_MAGIC)?;
    w.write_all(&[backbone_code(model.config.backbone), u8::from(!model.user_bias.is_empty())])?;
    w.write_all(&(model.config.dim as u32).to_le_bytes())?;
    w.write_all(&(model.user_table.rows as u32).to_le_bytes())?;
    w.write_all(&(model.item_table.rows as u32).to_le_bytes())?;
    write_f32s(&mut w, model.user_table.as_slice().iter().copied())?;
    write_f32s(&mut w, model.item_table.as_slice().iter().copied())?;
    if !model.user_bias.is_empty() {
        write_f32s(&mut w, model.user_bias.iter().copied())?;
        write_f32s(&mut w, model.item_bias.iter().copied())?;
        write_f32s(&mut w, std::iter::once(model.global_bias))?;
    }
    w.flush()?;
    Ok(())
}

fn read_f32s(r: &mut impl Read, n: usize) -> Result<Vec<f64>> {
    let mut buf = vec![0u8; 4 * n];
    r.read_exact(&mut buf)?;
    Ok(buf
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect())
}

/// Reads a checkpoint written by [`write_checkpoint`]. The sidecar supplies
/// everything the header does not carry.
pub fn read_checkpoint(path: &Path, meta: &CheckpointMeta) -> Result<Model> {
    let mut r = fs::File::open(path)?;
    let mut header = [0u8; 18];
    r.read_exact(&mut header)?;
    if &header[..4] != CKPT_MAGIC {
        return Err(Error::Schema("bad checkpoint magic".into()));
    }
    let backbone = backbone_from_code(header[4])?;
    let has_bias = header[5] == 1;
    let dim = u32::from_le_bytes([header[6], header[7], header[8], header[9]]) as usize;
    let user_rows = u32::from_le_bytes([header[10], header[11], header[12], header[13]]) as usize;
    let item_rows = u32::from_le_bytes([header[14], header[15], header[16], header[17]]) as usize;
    if backbone != meta.config.backbone || dim != meta.config.dim {
        return Err(Error::Schema("checkpoint header disagrees with sidecar".into()));
    }
    let user_table = EmbeddingTable::from_vec(user_rows, dim, read_f32s(&mut r, user_rows * dim)?);
    let item_table = EmbeddingTable::from_vec(item_rows, dim, read_f32s(&mut r, item_rows * dim)?);
    let (user_bias, item_bias, global_bias) = if has_bias {
        let ub = read_f32s(&mut r, user_rows)?;
        let ib = read_f32s(&mut r, item_rows)?;
        let gb = read_f32s(&mut r, 1)?[0];
        (ub, ib, gb)
    } else {
        (Vec::new(), Vec::new(), 0.0)
    };
    Ok(Model {
        config: meta.config,
        user_table,
        item_table,
        user_bias,
        item_bias,
        global_bias,
    })
}
