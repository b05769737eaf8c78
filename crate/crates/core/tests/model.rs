use gridcast_core::model::{
    build_sample, extract_patch, load_checkpoint, predict_horizon, save_checkpoint,
    usable_samples, BranchKind, ModelConfig, ModelParams,
};
use gridcast_core::synth::{generate_dataset, SynthConfig};
use gridcast_core::Tensor;

#[test]
fn default_config_window_arithmetic() {
    let cfg = ModelConfig::default();
    // 11-hour shift at 30-minute intervals, half-window 3: t = 500 anchors
    // the hourly window on 478, spanning 475..=481
    let centers = cfg.anchor_centers(BranchKind::Hourly, 500).unwrap();
    assert_eq!(centers, vec![478]);
    // daily anchors j = 1..3 at t - 48j, oldest first
    let daily = cfg.anchor_centers(BranchKind::Daily, 500).unwrap();
    assert_eq!(daily, vec![356, 404, 452]);
    // weekly anchor at t - 336
    let weekly = cfg.anchor_centers(BranchKind::Weekly, 500).unwrap();
    assert_eq!(weekly, vec![164]);
    // the weekly window needs t >= 339
    assert!(cfg.anchor_centers(BranchKind::Weekly, 338).is_none());
    assert!(cfg.anchor_centers(BranchKind::Weekly, 339).is_some());
}

#[test]
fn context_dimension_counts_active_branches() {
    let mut cfg = ModelConfig::tiny();
    assert_eq!(cfg.context_dim(), 2 * cfg.hidden * 4);
    cfg.hour_anchors.clear();
    assert_eq!(cfg.context_dim(), 2 * cfg.hidden * 3);
    cfg.daily_anchors = 0;
    cfg.weekly_anchors = 0;
    assert_eq!(cfg.context_dim(), 2 * cfg.hidden);
}

#[test]
fn even_patch_size_rejected() {
    let cfg = ModelConfig { patch_size: 4, ..ModelConfig::tiny() };
    assert!(cfg.validate().is_err());
    assert!(ModelParams::init(cfg, 0).is_err());
}

fn tiny_dataset() -> gridcast_core::Dataset {
    let synth = SynthConfig {
        days: 9,
        missing_rate: 0.0,
        outlier_rate: 0.0,
        ..SynthConfig::default()
    };
    let (ds, _) = generate_dataset(&synth, 9 * 48, 1.0).unwrap();
    ds
}

#[test]
fn patch_zero_pads_borders() {
    let ds = tiny_dataset();
    // corner cell (0, 0): the patch rows/cols hanging off the grid are zero
    let p = extract_patch(&ds.normalized, &ds.mask, 100, 0, 0, 3);
    assert!(p.valid);
    assert_eq!(p.values.shape(), &[3, 3, 2]);
    for dx in 0..3 {
        for ch in 0..2 {
            assert_eq!(p.values.data()[(0 * 3 + dx) * 2 + ch], 0.0); // row above the grid
        }
    }
    assert_eq!(
        p.values.data()[(1 * 3 + 1) * 2],
        ds.normalized.get(100, 0, 0, 0)
    );
}

#[test]
fn masked_center_patch_is_invalid_and_zero() {
    let mut ds = tiny_dataset();
    ds.mask.set(100, 1, 1, false);
    let p = extract_patch(&ds.normalized, &ds.mask, 100, 1, 1, 3);
    assert!(!p.valid);
    assert!(p.values.data().iter().all(|&v| v == 0.0));
}

#[test]
fn sample_counts_respect_lookback() {
    let ds = tiny_dataset();
    let cfg = ModelConfig::tiny();
    // weekly lookback at tiny q = 1 needs t >= 337
    let none = usable_samples(&ds.normalized, &ds.mask, &ds.external, &cfg, 300, 337);
    assert!(none.is_empty());
    let some = usable_samples(&ds.normalized, &ds.mask, &ds.external, &cfg, 337, 340);
    assert_eq!(some.len(), 3 * 16); // 3 usable times, 4x4 regions
}

#[test]
fn all_zero_parameters_predict_zero() {
    let ds = tiny_dataset();
    let cfg = ModelConfig::tiny();
    let mut params = ModelParams::init(cfg.clone(), 1).unwrap();
    for id in params.store.ids().collect::<Vec<_>>() {
        let shape = params.store.get(id).value.shape().to_vec();
        params.store.get_mut(id).value = Tensor::zeros(shape);
    }
    let sample = build_sample(&ds.normalized, &ds.mask, &ds.external, (2, 2), 400, &cfg).unwrap();
    let (s, e) = params.forward(&sample).unwrap();
    assert_eq!((s, e), (0.0, 0.0));
}

#[test]
fn predictions_lie_in_the_open_unit_interval() {
    let ds = tiny_dataset();
    let cfg = ModelConfig::tiny();
    let params = ModelParams::init(cfg.clone(), 2).unwrap();
    for t in [340, 380, 420] {
        let sample =
            build_sample(&ds.normalized, &ds.mask, &ds.external, (1, 3), t, &cfg).unwrap();
        let (s, e) = params.forward(&sample).unwrap();
        assert!(s > -1.0 && s < 1.0 && e > -1.0 && e < 1.0);
    }
}

/// Closed-form parameter count from the configuration.
fn expected_param_count(cfg: &ModelConfig) -> usize {
    let d = cfg.hidden;
    let f = cfg.filters;
    let s = cfg.patch_size;
    let conv: usize = (0..cfg.conv_layers)
        .map(|k| {
            let cin = if k == 0 { 2 } else { f };
            3 * 3 * cin * f + f
        })
        .sum();
    let cnn = conv + d * (s * s * f) + d;
    let lstm = |input: usize| 4 * (d * input + d * d + d);
    let bd = |input: usize| 2 * lstm(input);
    let scorer = d * (2 * d) + d * (2 * d) + d + d;
    let branch = bd(d) + scorer + bd(2 * d);
    let n_branches = cfg.branch_kinds().len();
    let fusion_in = cfg.context_dim() + cfg.external_dim;
    cnn + bd(d) + n_branches * branch + (2 * fusion_in + 2)
}

#[test]
fn parameter_census_matches_closed_form() {
    for cfg in [ModelConfig::tiny(), ModelConfig::default()] {
        let params = ModelParams::init(cfg.clone(), 0).unwrap();
        assert_eq!(params.param_count(), expected_param_count(&cfg));
    }
}

#[test]
fn forward_is_deterministic_and_seed_sensitive() {
    let ds = tiny_dataset();
    let cfg = ModelConfig::tiny();
    let sample = build_sample(&ds.normalized, &ds.mask, &ds.external, (0, 0), 350, &cfg).unwrap();
    let a = ModelParams::init(cfg.clone(), 5).unwrap();
    let b = ModelParams::init(cfg.clone(), 5).unwrap();
    let c = ModelParams::init(cfg, 6).unwrap();
    let pa = a.forward(&sample).unwrap();
    let pb = b.forward(&sample).unwrap();
    let pc = c.forward(&sample).unwrap();
    assert_eq!(pa.0.to_bits(), pb.0.to_bits());
    assert_eq!(pa.1.to_bits(), pb.1.to_bits());
    assert_ne!(pa, pc);
}

#[test]
fn checkpoint_roundtrip_preserves_predictions_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.gc");
    let ds = tiny_dataset();
    let cfg = ModelConfig::tiny();
    let params = ModelParams::init(cfg.clone(), 9).unwrap();
    save_checkpoint(&path, &params).unwrap();
    let restored = load_checkpoint(&path).unwrap();
    assert_eq!(restored.cfg, cfg);
    assert_eq!(restored.param_count(), params.param_count());
    let sample = build_sample(&ds.normalized, &ds.mask, &ds.external, (3, 1), 390, &cfg).unwrap();
    let (s0, e0) = params.forward(&sample).unwrap();
    let (s1, e1) = restored.forward(&sample).unwrap();
    assert_eq!(s0.to_bits(), s1.to_bits());
    assert_eq!(e0.to_bits(), e1.to_bits());
    // re-saving is byte-identical
    let path2 = dir.path().join("model2.gc");
    save_checkpoint(&path2, &restored).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
}

#[test]
fn checkpoint_rejects_other_containers() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("data.gc");
    tiny_dataset().save(&path).unwrap();
    assert!(load_checkpoint(&path).is_err());
}

#[test]
fn horizon_rollout_produces_requested_steps() {
    let ds = tiny_dataset();
    let cfg = ModelConfig::tiny();
    let params = ModelParams::init(cfg, 3).unwrap();
    let preds =
        predict_horizon(&params, &ds.normalized, &ds.mask, &ds.external, (2, 2), 400, 4).unwrap();
    assert_eq!(preds.len(), 4);
    // near the end of the grid the rollout truncates instead of failing
    let t_last = ds.intervals() - 3;
    let preds =
        predict_horizon(&params, &ds.normalized, &ds.mask, &ds.external, (2, 2), t_last, 4)
            .unwrap();
    assert!(preds.len() < 4);
}

#[test]
fn horizon_first_step_matches_direct_forecast() {
    let ds = tiny_dataset();
    let cfg = ModelConfig::tiny();
    let params = ModelParams::init(cfg.clone(), 3).unwrap();
    let sample = build_sample(&ds.normalized, &ds.mask, &ds.external, (1, 1), 370, &cfg).unwrap();
    let direct = params.forward(&sample).unwrap();
    let rolled =
        predict_horizon(&params, &ds.normalized, &ds.mask, &ds.external, (1, 1), 370, 2).unwrap();
    assert_eq!(rolled[0].0.to_bits(), direct.0.to_bits());
    assert_eq!(rolled[0].1.to_bits(), direct.1.to_bits());
}
