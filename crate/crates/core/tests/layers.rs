use gridcast_core::autodiff::{Graph, ParamStore};
use gridcast_core::layers::{
    attention_pool, attention_pool_graph, attention_weights, attention_weights_graph,
    AttentionScorer, BdLstm, FusionLayer, LstmCell,
};
use gridcast_core::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn rng() -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(42)
}

fn zero_all(store: &mut ParamStore) {
    for id in store.ids().collect::<Vec<_>>() {
        let shape = store.get(id).value.shape().to_vec();
        store.get_mut(id).value = Tensor::zeros(shape);
    }
}

#[test]
fn lstm_zero_weights_zero_input_stays_at_zero() {
    let mut store = ParamStore::new();
    let cell = LstmCell::init(&mut store, &mut rng(), "c", 2, 3);
    zero_all(&mut store);
    let mut g = Graph::new();
    let (h0, c0) = cell.zero_state(&mut g);
    let x = g.leaf(Tensor::zeros(vec![2]));
    let (h, c) = cell.step(&store, &mut g, x, h0, c0, true).unwrap();
    // gates sit at sigmoid(0) = 0.5 but the candidate is tanh(0) = 0
    assert_eq!(g.value(h).data(), &[0.0, 0.0, 0.0]);
    assert_eq!(g.value(c).data(), &[0.0, 0.0, 0.0]);
}

#[test]
fn lstm_invalid_step_returns_previous_state_bit_for_bit() {
    let mut store = ParamStore::new();
    let cell = LstmCell::init(&mut store, &mut rng(), "c", 2, 3);
    let mut g = Graph::new();
    let (h0, c0) = cell.zero_state(&mut g);
    let x = g.leaf(Tensor::vector(vec![0.5, -0.4]));
    let (h1, c1) = cell.step(&store, &mut g, x, h0, c0, true).unwrap();
    let x2 = g.leaf(Tensor::vector(vec![9.0, 9.0]));
    let (h2, c2) = cell.step(&store, &mut g, x2, h1, c1, false).unwrap();
    // skipping returns the same nodes, so outputs are trivially identical
    assert_eq!(h2, h1);
    assert_eq!(c2, c1);
    for (a, b) in g.value(h2).data().iter().zip(g.value(h1).data()) {
        assert_eq!(a.to_bits(), b.to_bits());
    }
}

#[test]
fn lstm_saturated_forget_gate_carries_cell_state() {
    // bias_forget -> +inf makes f -> 1; with input gate forced low the cell
    // state passes through almost unchanged
    let mut store = ParamStore::new();
    let cell = LstmCell::init(&mut store, &mut rng(), "c", 1, 1);
    zero_all(&mut store);
    // gate order: input, forget, output, candidate
    store.get_mut(cell.bias_id(1)).value = Tensor::vector(vec![50.0]);
    store.get_mut(cell.bias_id(0)).value = Tensor::vector(vec![-50.0]);
    let mut g = Graph::new();
    let c_prev = g.leaf(Tensor::vector(vec![0.7]));
    let h_prev = g.leaf(Tensor::vector(vec![0.0]));
    let x = g.leaf(Tensor::vector(vec![0.3]));
    let (_, c) = cell.step(&store, &mut g, x, h_prev, c_prev, true).unwrap();
    assert!((g.value(c).data()[0] - 0.7).abs() < 1e-9);
}

#[test]
fn bdlstm_single_step_concatenates_both_directions() {
    let mut store = ParamStore::new();
    let bd = BdLstm::init(&mut store, &mut rng(), "bd", 2, 3);
    let mut g = Graph::new();
    let x = g.leaf(Tensor::vector(vec![0.2, -0.1]));
    let out = bd.forward(&store, &mut g, &[x], &[true]).unwrap();
    assert_eq!(out.steps.len(), 1);
    assert_eq!(g.value(out.steps[0]).len(), 6);
    // with one step, the per-step output equals the final state
    assert_eq!(
        g.value(out.steps[0]).data(),
        g.value(out.final_state).data()
    );
}

#[test]
fn bdlstm_all_invalid_sequence_yields_zero_outputs() {
    let mut store = ParamStore::new();
    let bd = BdLstm::init(&mut store, &mut rng(), "bd", 2, 2);
    let mut g = Graph::new();
    let xs: Vec<_> = (0..3).map(|_| g.leaf(Tensor::vector(vec![1.0, 1.0]))).collect();
    let out = bd.forward(&store, &mut g, &xs, &[false, false, false]).unwrap();
    for &s in &out.steps {
        assert!(g.value(s).data().iter().all(|&v| v == 0.0));
    }
    assert!(g.value(out.final_state).data().iter().all(|&v| v == 0.0));
}

#[test]
fn bdlstm_empty_sequence_is_an_error() {
    let mut store = ParamStore::new();
    let bd = BdLstm::init(&mut store, &mut rng(), "bd", 2, 2);
    let mut g = Graph::new();
    assert!(bd.forward(&store, &mut g, &[], &[]).is_err());
}

#[test]
fn attention_zero_scorer_gives_uniform_weights() {
    let mut store = ParamStore::new();
    let scorer = AttentionScorer::init(&mut store, &mut rng(), "a", 2, 2, 3);
    zero_all(&mut store); // V = 0 -> every score 0 -> uniform softmax
    let mut g = Graph::new();
    let ctx = g.leaf(Tensor::vector(vec![0.4, 0.1]));
    let cands: Vec<_> = [[1.0, 0.0], [0.0, 1.0], [5.0, -3.0]]
        .iter()
        .map(|v| g.leaf(Tensor::vector(v.to_vec())))
        .collect();
    let scores: Vec<_> = cands
        .iter()
        .map(|&c| scorer.score(&store, &mut g, c, ctx).unwrap())
        .collect();
    let w = attention_weights_graph(&mut g, &scores).unwrap();
    for &v in g.value(w).data() {
        assert!((v - 1.0 / 3.0).abs() < 1e-12);
    }
    let pooled = attention_pool_graph(&mut g, &cands, w).unwrap();
    assert!((g.value(pooled).data()[0] - 2.0).abs() < 1e-12);
    assert!((g.value(pooled).data()[1] - (-2.0 / 3.0)).abs() < 1e-12);
}

#[test]
fn attention_weights_plain_examples() {
    let w = attention_weights(&[0.0, 0.0]).unwrap();
    assert_eq!(w, vec![0.5, 0.5]);
    // shift invariance
    let a = attention_weights(&[1.0, 2.0, 3.0]).unwrap();
    let b = attention_weights(&[101.0, 102.0, 103.0]).unwrap();
    for (x, y) in a.iter().zip(&b) {
        assert!((x - y).abs() < 1e-12);
    }
    assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-12);
}

#[test]
fn attention_pool_rejects_unnormalized_weights() {
    let outs = vec![Tensor::vector(vec![1.0]), Tensor::vector(vec![2.0])];
    assert!(attention_pool(&outs, &[0.9, 0.9]).is_err());
    let pooled = attention_pool(&outs, &[0.25, 0.75]).unwrap();
    assert!((pooled.data()[0] - 1.75).abs() < 1e-12);
}

#[test]
fn fusion_zero_parameters_output_zero() {
    let mut store = ParamStore::new();
    let fusion = FusionLayer::init(&mut store, &mut rng(), "f", 5);
    zero_all(&mut store);
    let mut g = Graph::new();
    let xc = g.leaf(Tensor::vector(vec![0.9, -0.5, 0.1]));
    let ext = g.leaf(Tensor::vector(vec![1.0, 0.0]));
    let out = fusion.forward(&store, &mut g, xc, ext).unwrap();
    assert_eq!(g.value(out).data(), &[0.0, 0.0]);
}

#[test]
fn fusion_output_is_bounded_by_tanh() {
    let mut store = ParamStore::new();
    let fusion = FusionLayer::init(&mut store, &mut rng(), "f", 4);
    let mut g = Graph::new();
    let xc = g.leaf(Tensor::vector(vec![30.0, -30.0]));
    let ext = g.leaf(Tensor::vector(vec![10.0, -10.0]));
    let out = fusion.forward(&store, &mut g, xc, ext).unwrap();
    for &v in g.value(out).data() {
        assert!((-1.0..=1.0).contains(&v));
    }
}

#[test]
fn fusion_dimension_mismatch_is_reported() {
    let mut store = ParamStore::new();
    let fusion = FusionLayer::init(&mut store, &mut rng(), "f", 4);
    let mut g = Graph::new();
    let xc = g.leaf(Tensor::vector(vec![1.0, 2.0, 3.0]));
    let ext = g.leaf(Tensor::vector(vec![1.0, 0.0]));
    assert!(fusion.forward(&store, &mut g, xc, ext).is_err());
}
