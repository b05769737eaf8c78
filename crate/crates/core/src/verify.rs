//! Finite-difference verification of every layer's gradients and of the full
//! model, used by the `gradcheck` subcommand and the test suite.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::ParamStore;
use crate::error::{Error, Result};
use crate::gradcheck::grad_check;
use crate::layers::{
    attention_pool_graph, attention_weights_graph, AttentionScorer, BdLstm, FusionLayer, LocalCnn,
    LstmCell,
};
use crate::model::{build_sample, ModelConfig, ModelParams};
use crate::synth::{generate_dataset, SynthConfig};
use crate::tensor::Tensor;

fn rand_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-0.9..0.9)).collect()
}

fn rand_tensor(rng: &mut ChaCha8Rng, shape: Vec<usize>) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, rand_vec(rng, n)).expect("shape/data agree")
}

/// One named check: the maximum relative error between analytic and central
/// finite-difference gradients over all parameters involved.
///
/// `eps_layer` perturbs the individual layer checks; `eps_full` the composed
/// model, whose many tiny gradients make the difference quotient
/// roundoff-limited at very small steps (a larger step keeps the check
/// meaningful there).
pub fn run_all(eps_layer: f64, eps_full: f64) -> Result<Vec<(String, f64)>> {
    let mut out = Vec::new();
    out.push(("conv2d".into(), check_conv(eps_layer)?));
    out.push(("local_cnn".into(), check_local_cnn(eps_layer)?));
    out.push(("lstm_cell".into(), check_lstm_cell(eps_layer)?));
    out.push(("bdlstm".into(), check_bdlstm(eps_layer)?));
    out.push(("attention".into(), check_attention(eps_layer)?));
    out.push(("fusion".into(), check_fusion(eps_layer)?));
    out.push(("full_model".into(), check_full_model(eps_full)?));
    Ok(out)
}

fn check_conv(eps: f64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut store = ParamStore::new();
    let kernel = store.add("k", rand_tensor(&mut rng, vec![3, 3, 2, 2]));
    let bias = store.add("b", rand_tensor(&mut rng, vec![2]));
    let input = rand_tensor(&mut rng, vec![3, 3, 2]);
    grad_check(
        &mut store,
        |s, g| {
            let x = g.leaf(input.clone());
            let k = g.param(s, kernel);
            let b = g.param(s, bias);
            let c = g.conv2d_same(x, k, b)?;
            let t = g.tanh(c);
            Ok(g.sum(t))
        },
        eps,
    )
}

fn check_local_cnn(eps: f64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut store = ParamStore::new();
    let cnn = LocalCnn::init(&mut store, &mut rng, "cnn", 7, 2, 3, 4)?;
    let patch = rand_tensor(&mut rng, vec![7, 7, 2]);
    grad_check(
        &mut store,
        |s, g| {
            let f = cnn.forward(s, g, &patch)?;
            Ok(g.sum(f))
        },
        eps,
    )
}

fn check_lstm_cell(eps: f64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut store = ParamStore::new();
    let cell = LstmCell::init(&mut store, &mut rng, "cell", 3, 4);
    let x0 = Tensor::vector(rand_vec(&mut rng, 3));
    let x1 = Tensor::vector(rand_vec(&mut rng, 3));
    grad_check(
        &mut store,
        |s, g| {
            let (h0, c0) = cell.zero_state(g);
            let a = g.leaf(x0.clone());
            let b = g.leaf(x1.clone());
            let (h, c) = cell.step(s, g, a, h0, c0, true)?;
            let (h, c) = cell.step(s, g, b, h, c, true)?;
            let hs = g.sum(h);
            let cs = g.sum(c);
            g.add(hs, cs)
        },
        eps,
    )
}

fn check_bdlstm(eps: f64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let mut store = ParamStore::new();
    let bd = BdLstm::init(&mut store, &mut rng, "bd", 3, 3);
    let xs: Vec<Tensor> = (0..3).map(|_| Tensor::vector(rand_vec(&mut rng, 3))).collect();
    // the middle step is masked out so the skip path is on the tape too
    let valids = vec![true, false, true];
    grad_check(
        &mut store,
        |s, g| {
            let nodes: Vec<_> = xs.iter().map(|x| g.leaf(x.clone())).collect();
            let out = bd.forward(s, g, &nodes, &valids)?;
            let mut total = g.sum(out.final_state);
            for &step in &out.steps {
                let ss = g.sum(step);
                total = g.add(total, ss)?;
            }
            Ok(total)
        },
        eps,
    )
}

fn check_attention(eps: f64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let mut store = ParamStore::new();
    let scorer = AttentionScorer::init(&mut store, &mut rng, "attn", 4, 4, 3);
    let cands: Vec<Tensor> = (0..3).map(|_| Tensor::vector(rand_vec(&mut rng, 4))).collect();
    let context = Tensor::vector(rand_vec(&mut rng, 4));
    grad_check(
        &mut store,
        |s, g| {
            let ctx = g.leaf(context.clone());
            let nodes: Vec<_> = cands.iter().map(|c| g.leaf(c.clone())).collect();
            let scores = nodes
                .iter()
                .map(|&n| scorer.score(s, g, n, ctx))
                .collect::<Result<Vec<_>>>()?;
            let w = attention_weights_graph(g, &scores)?;
            let pooled = attention_pool_graph(g, &nodes, w)?;
            let t = g.tanh(pooled);
            Ok(g.sum(t))
        },
        eps,
    )
}

fn check_fusion(eps: f64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    let mut store = ParamStore::new();
    let fusion = FusionLayer::init(&mut store, &mut rng, "fusion", 7);
    let xc = Tensor::vector(rand_vec(&mut rng, 4));
    let ext = Tensor::vector(rand_vec(&mut rng, 3));
    grad_check(
        &mut store,
        |s, g| {
            let a = g.leaf(xc.clone());
            let b = g.leaf(ext.clone());
            let out = fusion.forward(s, g, a, b)?;
            Ok(g.sum(out))
        },
        eps,
    )
}

fn check_full_model(eps: f64) -> Result<f64> {
    let cfg = ModelConfig::tiny();
    let synth = SynthConfig {
        days: 9,
        missing_rate: 0.0,
        outlier_rate: 0.0,
        ..SynthConfig::default()
    };
    let (ds, _) = generate_dataset(&synth, 7 * synth.intervals_per_day, 1.0)?;
    let sample = build_sample(&ds.normalized, &ds.mask, &ds.external, (1, 1), 400, &cfg)
        .ok_or_else(|| Error::State("verification sample construction failed".into()))?;
    let mut params = ModelParams::init(cfg, 17)?;
    let mut store = std::mem::take(&mut params.store);
    let res = grad_check(
        &mut store,
        |s, g| {
            // loss_graph reads parameters through the store it was built with,
            // so thread the perturbed store back in
            let mut p = params.clone();
            p.store = s.clone();
            p.loss_graph(g, &sample)
        },
        eps,
    );
    params.store = store;
    res
}
