//! Model building blocks: local CNN encoder, masked LSTM cell, bidirectional
//! wrapper, attention scorer/pooler, and the fused output layer.
//!
//! Layer structs hold parameter handles into a `ParamStore`; all forward
//! passes record onto a `Graph` so gradients come out of the shared tape.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, NodeId, ParamId, ParamStore};
use crate::error::{Error, Result};
use crate::tensor::{self, Tensor};

/// Glorot-uniform sample in [-r, r], r = sqrt(6 / (fan_in + fan_out)).
pub fn init_uniform(
    store: &mut ParamStore,
    rng: &mut ChaCha8Rng,
    name: impl Into<String>,
    shape: Vec<usize>,
    fan_in: usize,
    fan_out: usize,
) -> ParamId {
    let r = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.gen_range(-r..=r)).collect();
    store.add(name, Tensor::new(shape, data).expect("shape/data agree by construction"))
}

// ---------------------------------------------------------------------------
// Local CNN
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct ConvStage {
    pub kernel: ParamId,
    pub bias: ParamId,
}

/// K same-padded conv+tanh stages over an S×S×2 patch, then a learned affine
/// projection of the flattened map down to the hidden feature dimension.
#[derive(Debug, Clone)]
pub struct LocalCnn {
    pub stages: Vec<ConvStage>,
    pub proj_w: ParamId,
    pub proj_b: ParamId,
    pub patch_size: usize,
    pub filters: usize,
    pub feature_dim: usize,
}

impl LocalCnn {
    pub fn init(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        prefix: &str,
        patch_size: usize,
        conv_layers: usize,
        filters: usize,
        feature_dim: usize,
    ) -> Result<Self> {
        if patch_size % 2 == 0 {
            return Err(Error::Config(format!(
                "patch size must be odd so the target region stays centered, got {patch_size}"
            )));
        }
        if conv_layers == 0 {
            return Err(Error::Config("at least one conv layer is required".into()));
        }
        let mut stages = Vec::with_capacity(conv_layers);
        for k in 0..conv_layers {
            let cin = if k == 0 { 2 } else { filters };
            let fan_in = 3 * 3 * cin;
            let fan_out = 3 * 3 * filters;
            let kernel = init_uniform(
                store,
                rng,
                format!("{prefix}.conv{k}.kernel"),
                vec![3, 3, cin, filters],
                fan_in,
                fan_out,
            );
            let bias = store.add(format!("{prefix}.conv{k}.bias"), Tensor::zeros(vec![filters]));
            stages.push(ConvStage { kernel, bias });
        }
        let flat = patch_size * patch_size * filters;
        let proj_w = init_uniform(
            store,
            rng,
            format!("{prefix}.proj.weight"),
            vec![feature_dim, flat],
            flat,
            feature_dim,
        );
        let proj_b = store.add(format!("{prefix}.proj.bias"), Tensor::zeros(vec![feature_dim]));
        Ok(LocalCnn {
            stages,
            proj_w,
            proj_b,
            patch_size,
            filters,
            feature_dim,
        })
    }

    /// patch [S×S×2] -> feature [d].
    pub fn forward(&self, store: &ParamStore, g: &mut Graph, patch: &Tensor) -> Result<NodeId> {
        let s = self.patch_size;
        if patch.shape() != [s, s, 2] {
            return Err(Error::Dim(format!(
                "patch shape {:?} does not match configured [{s}, {s}, 2]",
                patch.shape()
            )));
        }
        let mut x = g.leaf(patch.clone());
        for stage in &self.stages {
            let kernel = g.param(store, stage.kernel);
            let bias = g.param(store, stage.bias);
            let conv = g.conv2d_same(x, kernel, bias)?;
            x = g.tanh(conv);
        }
        let flat = g.flatten(x);
        let w = g.param(store, self.proj_w);
        let b = g.param(store, self.proj_b);
        let lin = g.matvec(w, flat)?;
        let aff = g.add(lin, b)?;
        Ok(g.tanh(aff))
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids: Vec<ParamId> = self
            .stages
            .iter()
            .flat_map(|s| [s.kernel, s.bias])
            .collect();
        ids.push(self.proj_w);
        ids.push(self.proj_b);
        ids
    }
}

// ---------------------------------------------------------------------------
// LSTM
// ---------------------------------------------------------------------------

/// Standard LSTM cell with forget gate. Gate order: input, forget, output,
/// candidate.
#[derive(Debug, Clone)]
pub struct LstmCell {
    pub input_dim: usize,
    pub hidden: usize,
    w_x: [ParamId; 4],
    w_h: [ParamId; 4],
    b: [ParamId; 4],
}

const GATE_NAMES: [&str; 4] = ["input", "forget", "output", "candidate"];

impl LstmCell {
    pub fn init(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        prefix: &str,
        input_dim: usize,
        hidden: usize,
    ) -> Self {
        let mut w_x = Vec::with_capacity(4);
        let mut w_h = Vec::with_capacity(4);
        let mut b = Vec::with_capacity(4);
        for gate in GATE_NAMES {
            w_x.push(init_uniform(
                store,
                rng,
                format!("{prefix}.{gate}.wx"),
                vec![hidden, input_dim],
                input_dim,
                hidden,
            ));
            w_h.push(init_uniform(
                store,
                rng,
                format!("{prefix}.{gate}.wh"),
                vec![hidden, hidden],
                hidden,
                hidden,
            ));
            // forget-gate bias starts at 1.0 so early training does not wash
            // out the cell state
            let bias0 = if gate == "forget" { 1.0 } else { 0.0 };
            b.push(store.add(
                format!("{prefix}.{gate}.bias"),
                Tensor::full(vec![hidden], bias0),
            ));
        }
        LstmCell {
            input_dim,
            hidden,
            w_x: w_x.try_into().unwrap(),
            w_h: w_h.try_into().unwrap(),
            b: b.try_into().unwrap(),
        }
    }

    fn gate_pre(
        &self,
        store: &ParamStore,
        g: &mut Graph,
        gate: usize,
        x: NodeId,
        h: NodeId,
    ) -> Result<NodeId> {
        let wx = g.param(store, self.w_x[gate]);
        let wh = g.param(store, self.w_h[gate]);
        let b = g.param(store, self.b[gate]);
        let xa = g.matvec(wx, x)?;
        let ha = g.matvec(wh, h)?;
        let s = g.add(xa, ha)?;
        g.add(s, b)
    }

    /// One recurrence step. When `valid` is false the step is skipped and the
    /// previous state is carried forward unchanged (masking rule).
    pub fn step(
        &self,
        store: &ParamStore,
        g: &mut Graph,
        x: NodeId,
        h_prev: NodeId,
        c_prev: NodeId,
        valid: bool,
    ) -> Result<(NodeId, NodeId)> {
        if !valid {
            return Ok((h_prev, c_prev));
        }
        let i_pre = self.gate_pre(store, g, 0, x, h_prev)?;
        let f_pre = self.gate_pre(store, g, 1, x, h_prev)?;
        let o_pre = self.gate_pre(store, g, 2, x, h_prev)?;
        let g_pre = self.gate_pre(store, g, 3, x, h_prev)?;
        let i = g.sigmoid(i_pre);
        let f = g.sigmoid(f_pre);
        let o = g.sigmoid(o_pre);
        let cand = g.tanh(g_pre);
        let fc = g.mul(f, c_prev)?;
        let ig = g.mul(i, cand)?;
        let c = g.add(fc, ig)?;
        let ct = g.tanh(c);
        let h = g.mul(o, ct)?;
        Ok((h, c))
    }

    pub fn zero_state(&self, g: &mut Graph) -> (NodeId, NodeId) {
        let h = g.leaf(Tensor::zeros(vec![self.hidden]));
        let c = g.leaf(Tensor::zeros(vec![self.hidden]));
        (h, c)
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = Vec::with_capacity(12);
        for k in 0..4 {
            ids.push(self.w_x[k]);
            ids.push(self.w_h[k]);
            ids.push(self.b[k]);
        }
        ids
    }

    /// Bias handle by gate index (input, forget, output, candidate).
    pub fn bias_id(&self, gate: usize) -> ParamId {
        self.b[gate]
    }
}

// ---------------------------------------------------------------------------
// Bidirectional LSTM
// ---------------------------------------------------------------------------

/// Forward and backward LSTM with independent parameters; per-step output is
/// the concatenation of the two hidden states (dimension 2d).
#[derive(Debug, Clone)]
pub struct BdLstm {
    pub forward_cell: LstmCell,
    pub backward_cell: LstmCell,
}

pub struct BdLstmOut {
    /// One [2d] node per input step.
    pub steps: Vec<NodeId>,
    /// concat(forward hidden at the last step, backward hidden at step 0).
    pub final_state: NodeId,
}

impl BdLstm {
    pub fn init(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        prefix: &str,
        input_dim: usize,
        hidden: usize,
    ) -> Self {
        BdLstm {
            forward_cell: LstmCell::init(store, rng, &format!("{prefix}.fwd"), input_dim, hidden),
            backward_cell: LstmCell::init(store, rng, &format!("{prefix}.bwd"), input_dim, hidden),
        }
    }

    pub fn output_dim(&self) -> usize {
        2 * self.forward_cell.hidden
    }

    pub fn forward(
        &self,
        store: &ParamStore,
        g: &mut Graph,
        xs: &[NodeId],
        valids: &[bool],
    ) -> Result<BdLstmOut> {
        if xs.is_empty() {
            return Err(Error::Argument("bdlstm_forward on empty sequence".into()));
        }
        if xs.len() != valids.len() {
            return Err(Error::Argument(format!(
                "bdlstm_forward: {} inputs but {} validity flags",
                xs.len(),
                valids.len()
            )));
        }
        let n = xs.len();
        let (mut h, mut c) = self.forward_cell.zero_state(g);
        let mut fwd = Vec::with_capacity(n);
        for t in 0..n {
            let (nh, nc) = self.forward_cell.step(store, g, xs[t], h, c, valids[t])?;
            h = nh;
            c = nc;
            fwd.push(h);
        }
        let (mut h, mut c) = self.backward_cell.zero_state(g);
        let mut bwd = vec![fwd[0]; n]; // placeholder, overwritten below
        for t in (0..n).rev() {
            let (nh, nc) = self.backward_cell.step(store, g, xs[t], h, c, valids[t])?;
            h = nh;
            c = nc;
            bwd[t] = h;
        }
        let mut steps = Vec::with_capacity(n);
        for t in 0..n {
            steps.push(g.concat(&[fwd[t], bwd[t]])?);
        }
        let final_state = g.concat(&[fwd[n - 1], bwd[0]])?;
        Ok(BdLstmOut { steps, final_state })
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = self.forward_cell.param_ids();
        ids.extend(self.backward_cell.param_ids());
        ids
    }
}

// ---------------------------------------------------------------------------
// Attention
// ---------------------------------------------------------------------------

/// score(candidate, context) = Vᵀ·tanh(W_gamma·candidate + W_beta·context + b_beta)
#[derive(Debug, Clone)]
pub struct AttentionScorer {
    pub w_gamma: ParamId,
    pub w_beta: ParamId,
    pub b_beta: ParamId,
    pub v: ParamId,
}

impl AttentionScorer {
    pub fn init(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        prefix: &str,
        candidate_dim: usize,
        context_dim: usize,
        attn_dim: usize,
    ) -> Self {
        AttentionScorer {
            w_gamma: init_uniform(
                store,
                rng,
                format!("{prefix}.w_gamma"),
                vec![attn_dim, candidate_dim],
                candidate_dim,
                attn_dim,
            ),
            w_beta: init_uniform(
                store,
                rng,
                format!("{prefix}.w_beta"),
                vec![attn_dim, context_dim],
                context_dim,
                attn_dim,
            ),
            b_beta: store.add(format!("{prefix}.b_beta"), Tensor::zeros(vec![attn_dim])),
            v: init_uniform(store, rng, format!("{prefix}.v"), vec![attn_dim], attn_dim, 1),
        }
    }

    pub fn score(
        &self,
        store: &ParamStore,
        g: &mut Graph,
        candidate: NodeId,
        context: NodeId,
    ) -> Result<NodeId> {
        let wg = g.param(store, self.w_gamma);
        let wb = g.param(store, self.w_beta);
        let bb = g.param(store, self.b_beta);
        let v = g.param(store, self.v);
        let a = g.matvec(wg, candidate)?;
        let b = g.matvec(wb, context)?;
        let s = g.add(a, b)?;
        let pre = g.add(s, bb)?;
        let u = g.tanh(pre);
        g.dot(v, u)
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        vec![self.w_gamma, self.w_beta, self.b_beta, self.v]
    }
}

/// Softmax weights over window scores (graph form).
pub fn attention_weights_graph(g: &mut Graph, scores: &[NodeId]) -> Result<NodeId> {
    if scores.is_empty() {
        return Err(Error::Argument("attention over empty score list".into()));
    }
    let stacked = g.concat(scores)?;
    g.softmax(stacked)
}

/// Plain (non-graph) softmax over scores; the same stabilized kernel the
/// graph op uses.
pub fn attention_weights(scores: &[f64]) -> Result<Vec<f64>> {
    tensor::softmax(scores)
}

/// Σ_τ w_τ · x_τ over window outputs (graph form).
pub fn attention_pool_graph(
    g: &mut Graph,
    outputs: &[NodeId],
    weights: NodeId,
) -> Result<NodeId> {
    if outputs.is_empty() {
        return Err(Error::Argument("attention_pool over empty window".into()));
    }
    if g.value(weights).len() != outputs.len() {
        return Err(Error::Argument(format!(
            "attention_pool: {} outputs but {} weights",
            outputs.len(),
            g.value(weights).len()
        )));
    }
    let mut acc: Option<NodeId> = None;
    for (tau, &x) in outputs.iter().enumerate() {
        let w = g.index(weights, tau)?;
        let wx = g.mul(w, x)?;
        acc = Some(match acc {
            None => wx,
            Some(a) => g.add(a, wx)?,
        });
    }
    Ok(acc.expect("non-empty window"))
}

/// Plain weighted pool used by tests and invariant checks.
pub fn attention_pool(outputs: &[Tensor], weights: &[f64]) -> Result<Tensor> {
    if outputs.len() != weights.len() {
        return Err(Error::Argument(format!(
            "attention_pool: {} outputs but {} weights",
            outputs.len(),
            weights.len()
        )));
    }
    if outputs.is_empty() {
        return Err(Error::Argument("attention_pool over empty window".into()));
    }
    let wsum: f64 = weights.iter().sum();
    if (wsum - 1.0).abs() > 1e-9 {
        return Err(Error::Argument(format!(
            "attention weights must sum to 1, got {wsum}"
        )));
    }
    let mut acc = Tensor::zeros(outputs[0].shape().to_vec());
    for (x, &w) in outputs.iter().zip(weights) {
        let scaled = x.map(|v| v * w);
        acc = tensor::add(&acc, &scaled)?;
    }
    Ok(acc)
}

// ---------------------------------------------------------------------------
// Fusion output layer
// ---------------------------------------------------------------------------

/// tanh(W_full·[x_c ; external] + b_full) -> (start, end) predictions.
#[derive(Debug, Clone)]
pub struct FusionLayer {
    pub w_full: ParamId,
    pub b_full: ParamId,
    pub in_dim: usize,
}

impl FusionLayer {
    pub fn init(store: &mut ParamStore, rng: &mut ChaCha8Rng, prefix: &str, in_dim: usize) -> Self {
        FusionLayer {
            w_full: init_uniform(
                store,
                rng,
                format!("{prefix}.w_full"),
                vec![2, in_dim],
                in_dim,
                2,
            ),
            b_full: store.add(format!("{prefix}.b_full"), Tensor::zeros(vec![2])),
            in_dim,
        }
    }

    pub fn forward(
        &self,
        store: &ParamStore,
        g: &mut Graph,
        x_c: NodeId,
        external: NodeId,
    ) -> Result<NodeId> {
        let joined = g.concat(&[x_c, external])?;
        if g.value(joined).len() != self.in_dim {
            return Err(Error::Dim(format!(
                "fusion input length {} does not match configured {}",
                g.value(joined).len(),
                self.in_dim
            )));
        }
        let w = g.param(store, self.w_full);
        let b = g.param(store, self.b_full);
        let lin = g.matvec(w, joined)?;
        let aff = g.add(lin, b)?;
        Ok(g.tanh(aff))
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        vec![self.w_full, self.b_full]
    }
}
