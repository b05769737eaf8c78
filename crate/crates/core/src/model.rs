//! The full forecaster: shared local CNN, short-term BDLSTM context, three
//! periodic attention branches with two-stage BDLSTMs, and the fused output.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, NodeId, ParamStore};
use crate::container::{self, ArrayData, Container};
use crate::data::{ExternalTable, MaskGrid, VolumeGrid, CHANNELS, EXTERNAL_DIM};
use crate::error::{Error, Result};
use crate::layers::{
    attention_pool_graph, attention_weights_graph, AttentionScorer, BdLstm, FusionLayer, LocalCnn,
};
use crate::tensor::Tensor;

pub const INTERVALS_PER_WEEK_FACTOR: usize = 7;

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    /// Patch side length S (odd; target region centered).
    pub patch_size: usize,
    /// Number of conv stages K.
    pub conv_layers: usize,
    pub filters: usize,
    /// Hidden size d (CNN feature dim and LSTM hidden dim).
    pub hidden: usize,
    /// Short-term window length.
    pub tau_short: usize,
    /// Half-window q; periodic windows span 2q+1 intervals around an anchor.
    pub half_window: usize,
    /// Hourly-branch shifts in intervals (22 = 11 h at 30-minute intervals).
    pub hour_anchors: Vec<usize>,
    /// Daily anchors: same time-of-day on each of the previous N days.
    pub daily_anchors: usize,
    /// Weekly anchors: same time-of-day in each of the previous N weeks.
    pub weekly_anchors: usize,
    pub interval_minutes: u32,
    pub intervals_per_day: usize,
    pub external_dim: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            patch_size: 5,
            conv_layers: 3,
            filters: 64,
            hidden: 128,
            tau_short: 3,
            half_window: 3,
            hour_anchors: vec![22],
            daily_anchors: 3,
            weekly_anchors: 1,
            interval_minutes: 30,
            intervals_per_day: 48,
            external_dim: EXTERNAL_DIM,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BranchKind {
    Hourly,
    Daily,
    Weekly,
}

impl BranchKind {
    pub fn label(self) -> &'static str {
        match self {
            BranchKind::Hourly => "hourly",
            BranchKind::Daily => "daily",
            BranchKind::Weekly => "weekly",
        }
    }
}

impl ModelConfig {
    /// Small configuration for gradient checking and fast tests.
    pub fn tiny() -> Self {
        ModelConfig {
            patch_size: 3,
            conv_layers: 1,
            filters: 4,
            hidden: 4,
            tau_short: 2,
            half_window: 1,
            hour_anchors: vec![22],
            daily_anchors: 1,
            weekly_anchors: 1,
            interval_minutes: 30,
            intervals_per_day: 48,
            external_dim: EXTERNAL_DIM,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.patch_size % 2 == 0 {
            return Err(Error::Config(format!(
                "patch_size must be odd, got {}",
                self.patch_size
            )));
        }
        if self.conv_layers == 0 || self.filters == 0 || self.hidden == 0 {
            return Err(Error::Config("conv_layers, filters and hidden must be positive".into()));
        }
        if self.tau_short == 0 {
            return Err(Error::Config("tau_short must be at least 1".into()));
        }
        if self.intervals_per_day == 0 || self.interval_minutes == 0 {
            return Err(Error::Config("interval configuration must be positive".into()));
        }
        Ok(())
    }

    pub fn intervals_per_week(&self) -> usize {
        INTERVALS_PER_WEEK_FACTOR * self.intervals_per_day
    }

    /// Branch kinds present under this configuration, in model order.
    pub fn branch_kinds(&self) -> Vec<BranchKind> {
        let mut kinds = Vec::new();
        if !self.hour_anchors.is_empty() {
            kinds.push(BranchKind::Hourly);
        }
        if self.daily_anchors > 0 {
            kinds.push(BranchKind::Daily);
        }
        if self.weekly_anchors > 0 {
            kinds.push(BranchKind::Weekly);
        }
        kinds
    }

    /// Anchor center indices for a branch at prediction time `t`, oldest
    /// first. Returns None when any window index would be negative.
    pub fn anchor_centers(&self, kind: BranchKind, t: usize) -> Option<Vec<usize>> {
        let q = self.half_window;
        let centers: Vec<isize> = match kind {
            BranchKind::Hourly => {
                let mut shifts = self.hour_anchors.clone();
                shifts.sort_unstable_by(|a, b| b.cmp(a)); // oldest (largest shift) first
                shifts.iter().map(|&s| t as isize - s as isize).collect()
            }
            BranchKind::Daily => (1..=self.daily_anchors)
                .rev()
                .map(|j| t as isize - (j * self.intervals_per_day) as isize)
                .collect(),
            BranchKind::Weekly => (1..=self.weekly_anchors)
                .rev()
                .map(|j| t as isize - (j * self.intervals_per_week()) as isize)
                .collect(),
        };
        let mut out = Vec::with_capacity(centers.len());
        for c in centers {
            if c < q as isize {
                return None;
            }
            out.push(c as usize);
        }
        Some(out)
    }

    /// Dimension of the concatenated representation x^c.
    pub fn context_dim(&self) -> usize {
        2 * self.hidden * (1 + self.branch_kinds().len())
    }
}

// ---------------------------------------------------------------------------
// Samples
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct Patch {
    pub values: Tensor, // [S, S, 2]
    pub valid: bool,
}

/// One training example: short-term window, per-branch anchor windows,
/// external vector, and the two normalized targets at t+1.
#[derive(Debug, Clone)]
pub struct Sample {
    pub short: Vec<Patch>,
    /// branch -> anchor -> window of 2q+1 patches.
    pub branches: Vec<Vec<Vec<Patch>>>,
    pub external: Tensor,
    pub target: [f64; 2],
    pub region: (usize, usize),
    pub t: usize,
}

/// Cut the S×S patch centered on (row, col) at time `t`. Spatial borders are
/// zero padded; non-finite neighbor values are zeroed (their influence is
/// governed by the center cell's mask flag). A patch whose center cell is
/// masked out is zero-filled and flagged invalid.
pub fn extract_patch(
    grid: &VolumeGrid,
    mask: &MaskGrid,
    t: usize,
    row: usize,
    col: usize,
    patch_size: usize,
) -> Patch {
    let s = patch_size;
    let half = (s as isize - 1) / 2;
    let valid = mask.get(t, row, col);
    if !valid {
        return Patch { values: Tensor::zeros(vec![s, s, CHANNELS]), valid: false };
    }
    let mut data = vec![0.0; s * s * CHANNELS];
    for dy in 0..s {
        let r = row as isize + dy as isize - half;
        if r < 0 || r >= grid.rows() as isize {
            continue;
        }
        for dx in 0..s {
            let c = col as isize + dx as isize - half;
            if c < 0 || c >= grid.cols() as isize {
                continue;
            }
            for ch in 0..CHANNELS {
                let v = grid.get(t, r as usize, c as usize, ch);
                data[(dy * s + dx) * CHANNELS + ch] = if v.is_finite() { v } else { 0.0 };
            }
        }
    }
    Patch {
        values: Tensor::new(vec![s, s, CHANNELS], data).expect("patch shape fixed"),
        valid: true,
    }
}

/// Assemble a sample for region (row, col) at prediction time `t`, or None
/// when any window or the target falls outside the grid's time range.
pub fn build_sample(
    grid_normalized: &VolumeGrid,
    mask: &MaskGrid,
    external: &ExternalTable,
    region: (usize, usize),
    t: usize,
    cfg: &ModelConfig,
) -> Option<Sample> {
    let (row, col) = region;
    let intervals = grid_normalized.intervals();
    let q = cfg.half_window;
    if t + 1 >= intervals || t >= external.intervals() {
        return None;
    }
    if t + 1 < cfg.tau_short {
        return None;
    }

    let patch = |tt: usize| extract_patch(grid_normalized, mask, tt, row, col, cfg.patch_size);

    let short: Vec<Patch> = (t + 1 - cfg.tau_short..=t).map(patch).collect();

    let mut branches = Vec::new();
    for kind in cfg.branch_kinds() {
        let centers = cfg.anchor_centers(kind, t)?;
        let mut anchors = Vec::with_capacity(centers.len());
        for center in centers {
            if center + q >= intervals {
                return None;
            }
            let window: Vec<Patch> = (center - q..=center + q).map(patch).collect();
            anchors.push(window);
        }
        branches.push(anchors);
    }

    let target = [
        grid_normalized.get(t + 1, row, col, 0),
        grid_normalized.get(t + 1, row, col, 1),
    ];
    if !target.iter().all(|v| v.is_finite()) || !mask.get(t + 1, row, col) {
        return None;
    }

    Some(Sample {
        short,
        branches,
        external: external.row(t),
        target,
        region,
        t,
    })
}

/// All (region, t) pairs with a usable sample in [t_lo, t_hi).
pub fn usable_samples(
    grid_normalized: &VolumeGrid,
    mask: &MaskGrid,
    external: &ExternalTable,
    cfg: &ModelConfig,
    t_lo: usize,
    t_hi: usize,
) -> Vec<Sample> {
    let mut out = Vec::new();
    for t in t_lo..t_hi {
        for row in 0..grid_normalized.rows() {
            for col in 0..grid_normalized.cols() {
                if let Some(s) = build_sample(grid_normalized, mask, external, (row, col), t, cfg) {
                    out.push(s);
                }
            }
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Parameters
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct Branch {
    pub kind: BranchKind,
    pub stage1: BdLstm,
    pub scorer: AttentionScorer,
    pub stage2: BdLstm,
}

#[derive(Debug, Clone)]
pub struct ModelParams {
    pub cfg: ModelConfig,
    pub store: ParamStore,
    pub cnn: LocalCnn,
    pub short: BdLstm,
    pub branches: Vec<Branch>,
    pub fusion: FusionLayer,
}

impl ModelParams {
    pub fn init(cfg: ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let d = cfg.hidden;
        let cnn = LocalCnn::init(
            &mut store,
            &mut rng,
            "cnn",
            cfg.patch_size,
            cfg.conv_layers,
            cfg.filters,
            d,
        )?;
        let short = BdLstm::init(&mut store, &mut rng, "short", d, d);
        let mut branches = Vec::new();
        for kind in cfg.branch_kinds() {
            let label = kind.label();
            let stage1 = BdLstm::init(&mut store, &mut rng, &format!("{label}.stage1"), d, d);
            let scorer = AttentionScorer::init(
                &mut store,
                &mut rng,
                &format!("{label}.attn"),
                2 * d,
                2 * d,
                d,
            );
            let stage2 = BdLstm::init(&mut store, &mut rng, &format!("{label}.stage2"), 2 * d, d);
            branches.push(Branch { kind, stage1, scorer, stage2 });
        }
        let fusion = FusionLayer::init(
            &mut store,
            &mut rng,
            "fusion",
            cfg.context_dim() + cfg.external_dim,
        );
        Ok(ModelParams { cfg, store, cnn, short, branches, fusion })
    }

    /// Total number of scalar learnable parameters.
    pub fn param_count(&self) -> usize {
        self.store.scalar_count()
    }

    /// Parameter ids belonging to the CNN (frozen early in training).
    pub fn cnn_param_ids(&self) -> Vec<crate::autodiff::ParamId> {
        self.cnn.param_ids()
    }

    /// Forward pass on a recording graph; returns the [2] prediction node.
    pub fn forward_graph(&self, g: &mut Graph, sample: &Sample) -> Result<NodeId> {
        let stage = |e: Error, name: &str| -> Error {
            match e {
                Error::Dim(msg) => Error::Dim(format!("{name}: {msg}")),
                other => other,
            }
        };

        // (1)+(2) short-term branch -> context x_{i,t}
        let mut short_feats = Vec::with_capacity(sample.short.len());
        let mut short_valids = Vec::with_capacity(sample.short.len());
        for p in &sample.short {
            short_feats.push(
                self.cnn
                    .forward(&self.store, g, &p.values)
                    .map_err(|e| stage(e, "local_cnn"))?,
            );
            short_valids.push(p.valid);
        }
        let short_out = self
            .short
            .forward(&self.store, g, &short_feats, &short_valids)
            .map_err(|e| stage(e, "short_bdlstm"))?;
        let context = short_out.final_state;

        // (3)+(4) periodic branches
        if sample.branches.len() != self.branches.len() {
            return Err(Error::Dim(format!(
                "sample has {} branches but model expects {}",
                sample.branches.len(),
                self.branches.len()
            )));
        }
        let mut branch_finals = Vec::with_capacity(self.branches.len());
        for (branch, windows) in self.branches.iter().zip(&sample.branches) {
            let label = branch.kind.label();
            let mut anchor_vecs = Vec::with_capacity(windows.len());
            for window in windows {
                let mut feats = Vec::with_capacity(window.len());
                let mut valids = Vec::with_capacity(window.len());
                for p in window {
                    feats.push(
                        self.cnn
                            .forward(&self.store, g, &p.values)
                            .map_err(|e| stage(e, "local_cnn"))?,
                    );
                    valids.push(p.valid);
                }
                let out = branch
                    .stage1
                    .forward(&self.store, g, &feats, &valids)
                    .map_err(|e| stage(e, &format!("{label}.stage1")))?;
                let mut scores = Vec::with_capacity(out.steps.len());
                for &step in &out.steps {
                    scores.push(
                        branch
                            .scorer
                            .score(&self.store, g, step, context)
                            .map_err(|e| stage(e, &format!("{label}.attention")))?,
                    );
                }
                let weights = attention_weights_graph(g, &scores)?;
                let pooled = attention_pool_graph(g, &out.steps, weights)?;
                anchor_vecs.push(pooled);
            }
            let valids = vec![true; anchor_vecs.len()];
            let out = branch
                .stage2
                .forward(&self.store, g, &anchor_vecs, &valids)
                .map_err(|e| stage(e, &format!("{label}.stage2")))?;
            branch_finals.push(out.final_state);
        }

        // (5)+(6) fuse
        let mut parts = vec![context];
        parts.extend(branch_finals);
        let x_c = g.concat(&parts)?;
        let ext = g.leaf(sample.external.clone());
        self.fusion
            .forward(&self.store, g, x_c, ext)
            .map_err(|e| stage(e, "fusion"))
    }

    /// Pure forward evaluation -> (f_start, f_end), both in (-1, 1).
    pub fn forward(&self, sample: &Sample) -> Result<(f64, f64)> {
        let mut g = Graph::new();
        let out = self.forward_graph(&mut g, sample)?;
        let v = g.value(out);
        Ok((v.data()[0], v.data()[1]))
    }

    /// Squared-error loss node for one sample.
    pub fn loss_graph(&self, g: &mut Graph, sample: &Sample) -> Result<NodeId> {
        let pred = self.forward_graph(g, sample)?;
        let tgt = g.leaf(Tensor::vector(sample.target.to_vec()));
        let diff = g.sub(pred, tgt)?;
        let sq = g.mul(diff, diff)?;
        Ok(g.sum(sq))
    }
}

/// Recursive multi-step rollout: step 1 is the direct forecast; later steps
/// write the previous prediction into a scratch grid and re-run. The result
/// is truncated when a window leaves the grid's range.
pub fn predict_horizon(
    params: &ModelParams,
    grid_normalized: &VolumeGrid,
    mask: &MaskGrid,
    external: &ExternalTable,
    region: (usize, usize),
    t: usize,
    steps: usize,
) -> Result<Vec<(f64, f64)>> {
    if steps == 0 {
        return Err(Error::Argument("predict_horizon needs steps >= 1".into()));
    }
    let mut out = Vec::with_capacity(steps);
    let mut scratch: Option<(VolumeGrid, MaskGrid)> = None;
    for s in 0..steps {
        let tt = t + s;
        let (grid_ref, mask_ref) = match &scratch {
            Some((gq, mq)) => (gq, mq),
            None => (grid_normalized, mask),
        };
        let sample = match build_sample(grid_ref, mask_ref, external, region, tt, &params.cfg) {
            Some(sm) => sm,
            None => break,
        };
        let (ps, pe) = params.forward(&sample)?;
        out.push((ps, pe));
        if s + 1 < steps {
            let (gq, mq) = scratch.get_or_insert_with(|| (grid_normalized.clone(), mask.clone()));
            gq.set(tt + 1, region.0, region.1, 0, ps);
            gq.set(tt + 1, region.0, region.1, 1, pe);
            mq.set(tt + 1, region.0, region.1, true);
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

const CKPT_KIND: &str = "gridcast-checkpoint";

fn cfg_to_meta(cfg: &ModelConfig) -> Vec<(String, String)> {
    let anchors = cfg
        .hour_anchors
        .iter()
        .map(|a| a.to_string())
        .collect::<Vec<_>>()
        .join(",");
    vec![
        ("kind".into(), CKPT_KIND.into()),
        ("patch_size".into(), cfg.patch_size.to_string()),
        ("conv_layers".into(), cfg.conv_layers.to_string()),
        ("filters".into(), cfg.filters.to_string()),
        ("hidden".into(), cfg.hidden.to_string()),
        ("tau_short".into(), cfg.tau_short.to_string()),
        ("half_window".into(), cfg.half_window.to_string()),
        ("hour_anchors".into(), anchors),
        ("daily_anchors".into(), cfg.daily_anchors.to_string()),
        ("weekly_anchors".into(), cfg.weekly_anchors.to_string()),
        ("interval_minutes".into(), cfg.interval_minutes.to_string()),
        ("intervals_per_day".into(), cfg.intervals_per_day.to_string()),
        ("external_dim".into(), cfg.external_dim.to_string()),
    ]
}

fn meta_usize(c: &Container, key: &str) -> Result<usize> {
    c.meta_get(key)?
        .parse()
        .map_err(|_| Error::Format(format!("bad checkpoint field '{key}'")))
}

fn cfg_from_meta(c: &Container) -> Result<ModelConfig> {
    let anchors_raw = c.meta_get("hour_anchors")?;
    let hour_anchors = if anchors_raw.is_empty() {
        Vec::new()
    } else {
        anchors_raw
            .split(',')
            .map(|s| {
                s.parse()
                    .map_err(|_| Error::Format(format!("bad hour anchor '{s}'")))
            })
            .collect::<Result<Vec<usize>>>()?
    };
    Ok(ModelConfig {
        patch_size: meta_usize(c, "patch_size")?,
        conv_layers: meta_usize(c, "conv_layers")?,
        filters: meta_usize(c, "filters")?,
        hidden: meta_usize(c, "hidden")?,
        tau_short: meta_usize(c, "tau_short")?,
        half_window: meta_usize(c, "half_window")?,
        hour_anchors,
        daily_anchors: meta_usize(c, "daily_anchors")?,
        weekly_anchors: meta_usize(c, "weekly_anchors")?,
        interval_minutes: meta_usize(c, "interval_minutes")? as u32,
        intervals_per_day: meta_usize(c, "intervals_per_day")?,
        external_dim: meta_usize(c, "external_dim")?,
    })
}

pub fn save_checkpoint(path: &Path, params: &ModelParams) -> Result<()> {
    let arrays = params
        .store
        .iter()
        .map(|(_, p)| (p.name.clone(), ArrayData::F64(p.value.clone())))
        .collect();
    let c = Container { meta: cfg_to_meta(&params.cfg), arrays };
    container::write(path, &c)
}

pub fn load_checkpoint(path: &Path) -> Result<ModelParams> {
    let c = container::read(path)?;
    if c.meta_get("kind")? != CKPT_KIND {
        return Err(Error::Format(format!(
            "{} is not a model checkpoint",
            path.display()
        )));
    }
    let cfg = cfg_from_meta(&c)?;
    // Rebuild the layer wiring, then overwrite every tensor by name.
    let mut params = ModelParams::init(cfg, 0)?;
    for id in params.store.ids().collect::<Vec<_>>() {
        let name = params.store.get(id).name.clone();
        let saved = c.tensor_get(&name).map_err(|_| {
            Error::Format(format!("checkpoint is missing parameter '{name}'"))
        })?;
        if saved.shape() != params.store.get(id).value.shape() {
            return Err(Error::Format(format!(
                "checkpoint parameter '{name}' has shape {:?}, expected {:?}",
                saved.shape(),
                params.store.get(id).value.shape()
            )));
        }
        params.store.get_mut(id).value = saved.clone();
    }
    if c.arrays.len() != params.store.len() {
        return Err(Error::Format(format!(
            "checkpoint holds {} tensors but the configuration implies {}",
            c.arrays.len(),
            params.store.len()
        )));
    }
    Ok(params)
}
