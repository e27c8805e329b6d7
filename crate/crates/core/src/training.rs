//! Losses, optimizer and the training loop with early stopping.
//!
//! The per-batch loss/gradient computations are exposed as pure functions
//! ([`bpr_batch`], [`directau_batch`], [`ctr_batch`]) so they can be checked
//! against finite differences; the epoch drivers only add sampling,
//! shuffling and optimizer steps on top.

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::time::Instant;

use crate::data::{InteractionDataset, Record, SplitTag};
use crate::error::{Error, Result};
use crate::evaluation::{evaluate_retrieval, mean_logloss};
use crate::graph::BipartiteGraph;
use crate::hashing::HashAssignment;
use crate::models::{
    dot, gather, lightgcn_backward, lightgcn_propagate, lookup_into, scatter_add, sigmoid,
    Backbone, EmbeddingTable, LossKind, Model, ModelConfig, PROB_EPS,
};

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    /// 0 means full batch.
    pub batch_size: usize,
    pub patience: usize,
    pub max_epochs: usize,
    pub seed: u64,
    /// DirectAU uniformity weight.
    pub gamma: f64,
    /// Cutoff for the validation Recall@k during retrieval training.
    pub val_k: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-3,
            weight_decay: 1e-6,
            batch_size: 0,
            patience: 50,
            max_epochs: 500,
            seed: 0,
            gamma: 1.0,
            val_k: 20,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lr <= 0.0 || self.weight_decay < 0.0 {
            return Err(Error::InvalidArgument("lr/weight_decay out of range".into()));
        }
        if self.patience == 0 || self.max_epochs == 0 || self.val_k == 0 {
            return Err(Error::InvalidArgument(
                "patience, max_epochs and val_k must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else if x < -30.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

/// Pairwise ranking loss `-ln sigmoid(s_pos - s_neg)`.
pub fn bpr_loss(s_pos: f64, s_neg: f64) -> f64 {
    softplus(-(s_pos - s_neg))
}

/// Returns the loss and its derivative with respect to `s_pos - s_neg`.
pub fn bpr_loss_grad(s_pos: f64, s_neg: f64) -> (f64, f64) {
    let d = s_pos - s_neg;
    (softplus(-d), sigmoid(d) - 1.0)
}

/// Binary cross entropy with the probability clamped to [1e-7, 1 - 1e-7].
pub fn logloss(p: f64, y: u8) -> f64 {
    let p = p.clamp(PROB_EPS, 1.0 - PROB_EPS);
    if y == 1 {
        -p.ln()
    } else {
        -(1.0 - p).ln()
    }
}

fn normalize_rows(x: &EmbeddingTable) -> Result<(EmbeddingTable, Vec<f64>)> {
    let mut out = x.clone();
    let mut norms = Vec::with_capacity(x.rows);
    for r in 0..x.rows {
        let row = out.row_mut(r);
        let n = dot(row, row).sqrt();
        if n < 1e-12 {
            return Err(Error::Numeric("zero embedding in directau batch".into()));
        }
        for v in row.iter_mut() {
            *v /= n;
        }
        norms.push(n);
    }
    Ok((out, norms))
}

/// Pulls a normalized-space gradient back through the row normalization.
fn denormalize_grad(
    g_hat: &EmbeddingTable,
    x_hat: &EmbeddingTable,
    norms: &[f64],
) -> EmbeddingTable {
    let mut out = EmbeddingTable::zeros(g_hat.rows, g_hat.dim);
    for r in 0..g_hat.rows {
        let gh = g_hat.row(r);
        let xh = x_hat.row(r);
        let proj = dot(gh, xh);
        let row = out.row_mut(r);
        for k in 0..g_hat.dim {
            row[k] = (gh[k] - proj * xh[k]) / norms[r];
        }
    }
    out
}

/// Mean squared distance of normalized positive pairs, with its gradient in
/// the normalized space.
fn alignment_term(
    u_hat: &EmbeddingTable,
    i_hat: &EmbeddingTable,
) -> (f64, EmbeddingTable, EmbeddingTable) {
    let b = u_hat.rows;
    let mut loss = 0.0;
    let mut gu = EmbeddingTable::zeros(b, u_hat.dim);
    let mut gi = EmbeddingTable::zeros(b, u_hat.dim);
    for r in 0..b {
        let (ur, ir) = (u_hat.row(r), i_hat.row(r));
        for k in 0..u_hat.dim {
            let d = ur[k] - ir[k];
            loss += d * d;
            gu.row_mut(r)[k] = 2.0 * d / b as f64;
            gi.row_mut(r)[k] = -2.0 * d / b as f64;
        }
    }
    (loss / b as f64, gu, gi)
}

/// Log mean pairwise Gaussian potential `exp(-2 ||x - y||^2)` over distinct
/// unordered pairs of one side, with its gradient in the normalized space.
fn uniformity_term(x_hat: &EmbeddingTable) -> Result<(f64, EmbeddingTable)> {
    let b = x_hat.rows;
    if b < 2 {
        return Err(Error::InvalidArgument(
            "uniformity needs at least two points".into(),
        ));
    }
    let mut potentials = vec![0.0f64; b * b];
    let mut total = 0.0;
    for r in 0..b {
        for s in (r + 1)..b {
            let mut d2 = 0.0;
            for k in 0..x_hat.dim {
                let d = x_hat.row(r)[k] - x_hat.row(s)[k];
                d2 += d * d;
            }
            let w = (-2.0 * d2).exp();
            potentials[r * b + s] = w;
            potentials[s * b + r] = w;
            total += w;
        }
    }
    let pairs = (b * (b - 1) / 2) as f64;
    let loss = (total / pairs).ln();
    let mut grad = EmbeddingTable::zeros(b, x_hat.dim);
    for r in 0..b {
        let row = grad.row_mut(r);
        for s in 0..b {
            if s == r {
                continue;
            }
            let w = potentials[r * b + s];
            for k in 0..x_hat.dim {
                row[k] += -4.0 * w / total * (x_hat.row(r)[k] - x_hat.row(s)[k]);
            }
        }
    }
    Ok((loss, grad))
}

/// Alignment + gamma * uniformity over a batch of positive pairs.
/// Embeddings are L2-normalized internally; uniformity is computed per side
/// and averaged.
pub fn directau_loss(
    u_batch: &EmbeddingTable,
    i_batch: &EmbeddingTable,
    gamma: f64,
) -> Result<f64> {
    directau_loss_grad(u_batch, i_batch, gamma).map(|(l, _, _)| l)
}

/// DirectAU loss plus gradients with respect to the raw (pre-normalization)
/// batch embeddings.
pub fn directau_loss_grad(
    u_batch: &EmbeddingTable,
    i_batch: &EmbeddingTable,
    gamma: f64,
) -> Result<(f64, EmbeddingTable, EmbeddingTable)> {
    if u_batch.rows != i_batch.rows || u_batch.dim != i_batch.dim {
        return Err(Error::InvalidArgument("directau batch shape mismatch".into()));
    }
    let (u_hat, u_norms) = normalize_rows(u_batch)?;
    let (i_hat, i_norms) = normalize_rows(i_batch)?;
    let (align, mut gu_hat, mut gi_hat) = alignment_term(&u_hat, &i_hat);
    let (unif_u, gu_unif) = uniformity_term(&u_hat)?;
    let (unif_i, gi_unif) = uniformity_term(&i_hat)?;
    let loss = align + gamma * (unif_u + unif_i) / 2.0;
    for (g, gu) in gu_hat.as_mut_slice().iter_mut().zip(gu_unif.as_slice()) {
        *g += gamma / 2.0 * gu;
    }
    for (g, gi) in gi_hat.as_mut_slice().iter_mut().zip(gi_unif.as_slice()) {
        *g += gamma / 2.0 * gi;
    }
    let gu = denormalize_grad(&gu_hat, &u_hat, &u_norms);
    let gi = denormalize_grad(&gi_hat, &i_hat, &i_norms);
    Ok((loss, gu, gi))
}

/// Alignment component alone (normalized embeddings), for targeted checks.
pub fn directau_alignment(u_batch: &EmbeddingTable, i_batch: &EmbeddingTable) -> Result<f64> {
    let (u_hat, _) = normalize_rows(u_batch)?;
    let (i_hat, _) = normalize_rows(i_batch)?;
    Ok(alignment_term(&u_hat, &i_hat).0)
}

/// Uniformity component of one side alone (normalized embeddings).
pub fn directau_uniformity(x_batch: &EmbeddingTable) -> Result<f64> {
    let (x_hat, _) = normalize_rows(x_batch)?;
    uniformity_term(&x_hat).map(|(l, _)| l)
}

// ---------------------------------------------------------------------------
// Negative sampling
// ---------------------------------------------------------------------------

/// Uniform over the items the user has not interacted with in train, by
/// rejection sampling. `user_items` must hold sorted per-user item lists.
pub fn sample_negative(
    user_items: &[Vec<u32>],
    n_items: usize,
    user: usize,
    rng: &mut ChaCha8Rng,
) -> Result<u32> {
    let owned = &user_items[user];
    if owned.len() >= n_items {
        return Err(Error::InvalidArgument(format!(
            "user {user} interacts with every item; no negative exists"
        )));
    }
    loop {
        let j = rng.random_range(0..n_items as u32);
        if owned.binary_search(&j).is_err() {
            return Ok(j);
        }
    }
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// First/second moment estimates plus the shared step counter.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        AdamState { m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }
}

/// One Adam step with decoupled weight decay: moments see the raw gradient
/// and the decay shrinks parameters directly, so a zero gradient leaves
/// parameters untouched except for the shrinkage.
pub fn adam_step(
    params: &mut [f64],
    grads: &[f64],
    state: &mut AdamState,
    lr: f64,
    weight_decay: f64,
) {
    state.t += 1;
    let t = state.t;
    let bc1 = 1.0 - ADAM_BETA1.powi(t as i32);
    let bc2 = 1.0 - ADAM_BETA2.powi(t as i32);
    for k in 0..params.len() {
        let g = grads[k];
        state.m[k] = ADAM_BETA1 * state.m[k] + (1.0 - ADAM_BETA1) * g;
        state.v[k] = ADAM_BETA2 * state.v[k] + (1.0 - ADAM_BETA2) * g * g;
        let m_hat = state.m[k] / bc1;
        let v_hat = state.v[k] / bc2;
        params[k] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS) + lr * weight_decay * params[k];
    }
}

// ---------------------------------------------------------------------------
// Batch losses with gradients (the production gradient path)
// ---------------------------------------------------------------------------

/// Mean BPR loss over explicit (user, pos_item, neg_item) triplets with
/// gradients for both bucket tables. `graph` switches on message passing
/// with the given depth; gradients then flow back through the propagation
/// and the gather/scatter between entities and bucket rows.
pub fn bpr_batch(
    user_table: &EmbeddingTable,
    item_table: &EmbeddingTable,
    assignment: &HashAssignment,
    graph: Option<(&BipartiteGraph, usize)>,
    triplets: &[(u32, u32, u32)],
) -> Result<(f64, EmbeddingTable, EmbeddingTable)> {
    let dim = user_table.dim;
    let mut grad_u = EmbeddingTable::zeros(user_table.rows, dim);
    let mut grad_i = EmbeddingTable::zeros(item_table.rows, dim);
    let inv_b = 1.0 / triplets.len() as f64;
    let mut total = 0.0;

    match graph {
        Some((g, n_layers)) => {
            let eu = gather(user_table, &assignment.users);
            let ei = gather(item_table, &assignment.items);
            let (zu, zi) = lightgcn_propagate(g, &eu, &ei, n_layers)?;
            let mut dz_u = EmbeddingTable::zeros(zu.rows, dim);
            let mut dz_i = EmbeddingTable::zeros(zi.rows, dim);
            for &(u, p, n) in triplets {
                let (u, p, n) = (u as usize, p as usize, n as usize);
                let (loss, coeff) = bpr_loss_grad(dot(zu.row(u), zi.row(p)), dot(zu.row(u), zi.row(n)));
                total += loss;
                let c = coeff * inv_b;
                for k in 0..dim {
                    dz_u.row_mut(u)[k] += c * (zi.row(p)[k] - zi.row(n)[k]);
                    dz_i.row_mut(p)[k] += c * zu.row(u)[k];
                    dz_i.row_mut(n)[k] -= c * zu.row(u)[k];
                }
            }
            let (de_u, de_i) = lightgcn_backward(g, &dz_u, &dz_i, n_layers)?;
            scatter_add(&de_u, &assignment.users, &mut grad_u);
            scatter_add(&de_i, &assignment.items, &mut grad_i);
        }
        None => {
            let mut ue = vec![0.0; dim];
            let mut pe = vec![0.0; dim];
            let mut ne = vec![0.0; dim];
            for &(u, p, n) in triplets {
                let ucodes = assignment.users.codes_of(u as usize);
                let pcodes = assignment.items.codes_of(p as usize);
                let ncodes = assignment.items.codes_of(n as usize);
                lookup_into(user_table, ucodes, &mut ue)?;
                lookup_into(item_table, pcodes, &mut pe)?;
                lookup_into(item_table, ncodes, &mut ne)?;
                let (loss, coeff) = bpr_loss_grad(dot(&ue, &pe), dot(&ue, &ne));
                total += loss;
                let c = coeff * inv_b;
                for &code in ucodes {
                    let row = grad_u.row_mut(code as usize);
                    for k in 0..dim {
                        row[k] += c * (pe[k] - ne[k]);
                    }
                }
                for &code in pcodes {
                    let row = grad_i.row_mut(code as usize);
                    for k in 0..dim {
                        row[k] += c * ue[k];
                    }
                }
                for &code in ncodes {
                    let row = grad_i.row_mut(code as usize);
                    for k in 0..dim {
                        row[k] -= c * ue[k];
                    }
                }
            }
        }
    }
    Ok((total * inv_b, grad_u, grad_i))
}

/// DirectAU loss over explicit positive (user, item) pairs with bucket-table
/// gradients.
pub fn directau_batch(
    user_table: &EmbeddingTable,
    item_table: &EmbeddingTable,
    assignment: &HashAssignment,
    pairs: &[(u32, u32)],
    gamma: f64,
) -> Result<(f64, EmbeddingTable, EmbeddingTable)> {
    let dim = user_table.dim;
    let mut u_batch = EmbeddingTable::zeros(pairs.len(), dim);
    let mut i_batch = EmbeddingTable::zeros(pairs.len(), dim);
    for (row, &(u, i)) in pairs.iter().enumerate() {
        lookup_into(user_table, assignment.users.codes_of(u as usize), u_batch.row_mut(row))?;
        lookup_into(item_table, assignment.items.codes_of(i as usize), i_batch.row_mut(row))?;
    }
    let (loss, gu, gi) = directau_loss_grad(&u_batch, &i_batch, gamma)?;
    let mut grad_u = EmbeddingTable::zeros(user_table.rows, dim);
    let mut grad_i = EmbeddingTable::zeros(item_table.rows, dim);
    for (row, &(u, i)) in pairs.iter().enumerate() {
        for &code in assignment.users.codes_of(u as usize) {
            let dst = grad_u.row_mut(code as usize);
            for k in 0..dim {
                dst[k] += gu.row(row)[k];
            }
        }
        for &code in assignment.items.codes_of(i as usize) {
            let dst = grad_i.row_mut(code as usize);
            for k in 0..dim {
                dst[k] += gi.row(row)[k];
            }
        }
    }
    Ok((loss, grad_u, grad_i))
}

/// Gradients of the mean log loss over labeled records.
pub struct CtrGrads {
    pub loss: f64,
    pub grad_user: EmbeddingTable,
    pub grad_item: EmbeddingTable,
    pub grad_user_bias: Vec<f64>,
    pub grad_item_bias: Vec<f64>,
    pub grad_global_bias: f64,
}

pub fn ctr_batch(model: &Model, assignment: &HashAssignment, records: &[Record]) -> Result<CtrGrads> {
    let dim = model.config.dim;
    let mut out = CtrGrads {
        loss: 0.0,
        grad_user: EmbeddingTable::zeros(model.user_table.rows, dim),
        grad_item: EmbeddingTable::zeros(model.item_table.rows, dim),
        grad_user_bias: vec![0.0; model.user_bias.len()],
        grad_item_bias: vec![0.0; model.item_bias.len()],
        grad_global_bias: 0.0,
    };
    let inv_b = 1.0 / records.len() as f64;
    let mut ue = vec![0.0; dim];
    let mut ie = vec![0.0; dim];
    for r in records {
        let y = r.label.ok_or_else(|| Error::Schema("ctr record without label".into()))?;
        let ucodes = assignment.users.codes_of(r.user as usize);
        let icodes = assignment.items.codes_of(r.item as usize);
        lookup_into(&model.user_table, ucodes, &mut ue)?;
        lookup_into(&model.item_table, icodes, &mut ie)?;
        let bu: f64 = ucodes.iter().map(|&c| model.user_bias[c as usize]).sum();
        let bi: f64 = icodes.iter().map(|&c| model.item_bias[c as usize]).sum();
        let z = dot(&ue, &ie) + bu + bi + model.global_bias;
        let p = sigmoid(z);
        out.loss += logloss(p, y);
        let dz = (p - y as f64) * inv_b;
        for &code in ucodes {
            let row = out.grad_user.row_mut(code as usize);
            for k in 0..dim {
                row[k] += dz * ie[k];
            }
            out.grad_user_bias[code as usize] += dz;
        }
        for &code in icodes {
            let row = out.grad_item.row_mut(code as usize);
            for k in 0..dim {
                row[k] += dz * ue[k];
            }
            out.grad_item_bias[code as usize] += dz;
        }
        out.grad_global_bias += dz;
    }
    out.loss *= inv_b;
    Ok(out)
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_metric: f64,
    pub elapsed_s: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutput {
    pub model: Model,
    pub history: Vec<EpochStats>,
    pub best_epoch: usize,
    pub best_metric: f64,
}

/// Per-entity embeddings under the model's backbone: gathered bucket rows,
/// propagated over the graph for the message-passing backbone.
pub fn entity_embeddings(
    model: &Model,
    assignment: &HashAssignment,
    g: &BipartiteGraph,
) -> Result<(EmbeddingTable, EmbeddingTable)> {
    let eu = gather(&model.user_table, &assignment.users);
    let ei = gather(&model.item_table, &assignment.items);
    if model.config.backbone == Backbone::Lightgcn {
        lightgcn_propagate(g, &eu, &ei, model.config.n_layers)
    } else {
        Ok((eu, ei))
    }
}

struct Optimizer {
    lr: f64,
    weight_decay: f64,
    user: AdamState,
    item: AdamState,
    user_bias: AdamState,
    item_bias: AdamState,
    global_bias: AdamState,
}

impl Optimizer {
    fn new(model: &Model, lr: f64, weight_decay: f64) -> Self {
        Optimizer {
            lr,
            weight_decay,
            user: AdamState::new(model.user_table.rows * model.user_table.dim),
            item: AdamState::new(model.item_table.rows * model.item_table.dim),
            user_bias: AdamState::new(model.user_bias.len()),
            item_bias: AdamState::new(model.item_bias.len()),
            global_bias: AdamState::new(1),
        }
    }

    fn step_tables(&mut self, model: &mut Model, gu: &EmbeddingTable, gi: &EmbeddingTable) {
        adam_step(model.user_table.as_mut_slice(), gu.as_slice(), &mut self.user, self.lr, self.weight_decay);
        adam_step(model.item_table.as_mut_slice(), gi.as_slice(), &mut self.item, self.lr, self.weight_decay);
    }

    fn step_biases(&mut self, model: &mut Model, gu: &[f64], gi: &[f64], g0: f64) {
        adam_step(&mut model.user_bias, gu, &mut self.user_bias, self.lr, self.weight_decay);
        adam_step(&mut model.item_bias, gi, &mut self.item_bias, self.lr, self.weight_decay);
        let mut b0 = [model.global_bias];
        adam_step(&mut b0, &[g0], &mut self.global_bias, self.lr, self.weight_decay);
        model.global_bias = b0[0];
    }
}

fn batch_ranges(n: usize, batch_size: usize) -> Vec<(usize, usize)> {
    if batch_size == 0 || batch_size >= n {
        return vec![(0, n)];
    }
    (0..n.div_ceil(batch_size))
        .map(|b| (b * batch_size, ((b + 1) * batch_size).min(n)))
        .collect()
}

/// Trains a model for the dataset/assignment pair and returns the best
/// checkpoint by validation metric (Recall@k for retrieval, LogLoss for
/// CTR) together with the per-epoch history.
pub fn train(
    ds: &InteractionDataset,
    g: &BipartiteGraph,
    assignment: &HashAssignment,
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
) -> Result<TrainOutput> {
    model_cfg.validate()?;
    cfg.validate()?;
    if !ds.is_split() {
        return Err(Error::InvalidArgument("dataset is not split".into()));
    }
    let train_records: Vec<Record> = ds.split_records(SplitTag::Train).copied().collect();
    if train_records.is_empty() {
        return Err(Error::EmptyTrain);
    }
    let is_ctr = model_cfg.backbone == Backbone::CtrLogistic;
    if is_ctr != (ds.mode == crate::data::DatasetMode::Ctr) {
        return Err(Error::InvalidArgument(
            "backbone does not match the dataset mode".into(),
        ));
    }

    let mut model = Model::init(
        *model_cfg,
        assignment.users.table_rows,
        assignment.items.table_rows,
        cfg.seed,
    );
    let mut opt = Optimizer::new(&model, cfg.lr, cfg.weight_decay);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x7a11_5eed);

    let train_items = ds.user_items(SplitTag::Train);
    let val_records: Vec<Record> = ds.split_records(SplitTag::Val).copied().collect();
    let val_items = ds.user_items(SplitTag::Val);

    let maximize = !is_ctr;
    let mut best_metric = if maximize { f64::NEG_INFINITY } else { f64::INFINITY };
    let mut best_epoch = 0usize;
    let mut best_snapshot = model.clone();
    let mut since_improve = 0usize;
    let mut history = Vec::new();
    let mut indices: Vec<usize> = (0..train_records.len()).collect();
    let started = Instant::now();

    for epoch in 1..=cfg.max_epochs {
        indices.shuffle(&mut rng);
        let train_loss = match (model_cfg.backbone, model_cfg.loss) {
            (Backbone::CtrLogistic, LossKind::Logloss) => {
                epoch_ctr(&mut model, &mut opt, assignment, &train_records, &indices, cfg)?
            }
            (_, LossKind::Bpr) => epoch_bpr(
                &mut model, &mut opt, g, assignment, &train_records, &indices, &train_items,
                cfg, &mut rng,
            )?,
            (_, LossKind::Directau) => {
                epoch_directau(&mut model, &mut opt, assignment, &train_records, &indices, cfg)?
            }
            _ => unreachable!("validated configs only"),
        };
        if !train_loss.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite train loss {train_loss} at epoch {epoch}"
            )));
        }

        // Without validation data fall back to the train loss so the best
        // checkpoint tracks optimization progress instead of epoch 1.
        let val_metric = if is_ctr {
            if val_records.is_empty() {
                train_loss
            } else {
                let probs = crate::evaluation::ctr_scores(&model, assignment, &val_records);
                let labels: Vec<u8> = val_records.iter().map(|r| r.label.unwrap_or(0)).collect();
                mean_logloss(&probs, &labels)
            }
        } else {
            let (zu, zi) = entity_embeddings(&model, assignment, g)?;
            let eval = evaluate_retrieval(&zu, &zi, &train_items, &val_items, cfg.val_k, false);
            if eval.n_eval_users == 0 { -train_loss } else { eval.recall }
        };

        history.push(EpochStats {
            epoch,
            train_loss,
            val_metric,
            elapsed_s: started.elapsed().as_secs_f64(),
        });

        let improved = if maximize { val_metric > best_metric } else { val_metric < best_metric };
        if improved {
            best_metric = val_metric;
            best_epoch = epoch;
            best_snapshot = model.clone();
            since_improve = 0;
        } else {
            since_improve += 1;
            if since_improve >= cfg.patience {
                break;
            }
        }
    }

    Ok(TrainOutput { model: best_snapshot, history, best_epoch, best_metric })
}

#[allow(clippy::too_many_arguments)]
fn epoch_bpr(
    model: &mut Model,
    opt: &mut Optimizer,
    g: &BipartiteGraph,
    assignment: &HashAssignment,
    records: &[Record],
    indices: &[usize],
    train_items: &[Vec<u32>],
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    let lightgcn = model.config.backbone == Backbone::Lightgcn;
    let graph = lightgcn.then_some((g, model.config.n_layers));
    let mut total = 0.0;
    let mut total_n = 0usize;
    let mut triplets = Vec::new();
    for &(start, end) in batch_ranges(indices.len(), cfg.batch_size).iter() {
        triplets.clear();
        for &rec in &indices[start..end] {
            let r = &records[rec];
            let neg = sample_negative(train_items, g.n_items(), r.user as usize, rng)?;
            triplets.push((r.user, r.item, neg));
        }
        let (loss, gu, gi) =
            bpr_batch(&model.user_table, &model.item_table, assignment, graph, &triplets)?;
        total += loss * triplets.len() as f64;
        total_n += triplets.len();
        opt.step_tables(model, &gu, &gi);
    }
    Ok(total / total_n as f64)
}

fn epoch_directau(
    model: &mut Model,
    opt: &mut Optimizer,
    assignment: &HashAssignment,
    records: &[Record],
    indices: &[usize],
    cfg: &TrainConfig,
) -> Result<f64> {
    // uniformity is pairwise, so keep batches bounded even in full-batch mode
    let batch_size = if cfg.batch_size == 0 { 1024.min(indices.len()) } else { cfg.batch_size };
    let mut total_loss = 0.0;
    let mut n_batches = 0usize;
    let mut pairs = Vec::new();
    for &(start, end) in batch_ranges(indices.len(), batch_size).iter() {
        if end - start < 2 {
            continue; // uniformity undefined on a single pair
        }
        pairs.clear();
        pairs.extend(indices[start..end].iter().map(|&rec| {
            let r = &records[rec];
            (r.user, r.item)
        }));
        let (loss, gu, gi) =
            directau_batch(&model.user_table, &model.item_table, assignment, &pairs, cfg.gamma)?;
        total_loss += loss;
        n_batches += 1;
        opt.step_tables(model, &gu, &gi);
    }
    if n_batches == 0 {
        return Err(Error::InvalidArgument("directau needs batches of >= 2 pairs".into()));
    }
    Ok(total_loss / n_batches as f64)
}

fn epoch_ctr(
    model: &mut Model,
    opt: &mut Optimizer,
    assignment: &HashAssignment,
    records: &[Record],
    indices: &[usize],
    cfg: &TrainConfig,
) -> Result<f64> {
    let batch_size = if cfg.batch_size == 0 { indices.len() } else { cfg.batch_size };
    let mut total = 0.0;
    let mut batch = Vec::new();
    for &(start, end) in batch_ranges(indices.len(), batch_size).iter() {
        batch.clear();
        batch.extend(indices[start..end].iter().map(|&rec| records[rec]));
        let grads = ctr_batch(model, assignment, &batch)?;
        total += grads.loss * batch.len() as f64;
        opt.step_tables(model, &grads.grad_user, &grads.grad_item);
        opt.step_biases(
            model,
            &grads.grad_user_bias,
            &grads.grad_item_bias,
            grads.grad_global_bias,
        );
    }
    Ok(total / indices.len() as f64)
}
