use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use gridcast_core::layers::BdLstm;
use gridcast_core::model::{usable_samples, ModelConfig, ModelParams, Sample};
use gridcast_core::synth::{generate_dataset, SynthConfig};
use gridcast_core::tensor::conv2d_same;
use gridcast_core::{Graph, ParamStore, Tensor};

fn rand_tensor(rng: &mut ChaCha8Rng, shape: Vec<usize>) -> Tensor {
    let n: usize = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

fn bench_conv(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let input = rand_tensor(&mut rng, vec![2, 5, 5]);
    let kernel = rand_tensor(&mut rng, vec![64, 2, 3, 3]);
    let bias = rand_tensor(&mut rng, vec![64]);
    c.bench_function("conv2d_same 5x5x2 -> 64 filters", |b| {
        b.iter(|| conv2d_same(&input, &kernel, &bias).unwrap())
    });
}

fn bench_bdlstm(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut store = ParamStore::new();
    let lstm = BdLstm::init(&mut store, &mut rng, "b", 128, 128);
    let xs: Vec<Tensor> = (0..7).map(|_| rand_tensor(&mut rng, vec![128])).collect();
    let valids = vec![true; xs.len()];
    c.bench_function("bdlstm forward, 7 steps, d=128", |b| {
        b.iter(|| {
            let mut g = Graph::new();
            let ids: Vec<_> = xs.iter().map(|x| g.leaf(x.clone())).collect();
            lstm.forward(&store, &mut g, &ids, &valids).unwrap()
        })
    });
}

fn tiny_fixture() -> (ModelParams, Vec<Sample>) {
    let synth = SynthConfig { days: 10, seed: 3, ..SynthConfig::default() };
    let intervals = synth.days * synth.intervals_per_day;
    let (ds, _) = generate_dataset(&synth, intervals, 0.5).unwrap();
    let cfg = ModelConfig::tiny();
    let samples = usable_samples(&ds.normalized, &ds.mask, &ds.external, &cfg, 400, 410);
    assert!(!samples.is_empty());
    let params = ModelParams::init(cfg, 3).unwrap();
    (params, samples)
}

fn bench_model_forward(c: &mut Criterion) {
    let (params, samples) = tiny_fixture();
    c.bench_function("tiny model forward", |b| {
        b.iter(|| params.forward(&samples[0]).unwrap())
    });
}

fn bench_model_backward(c: &mut Criterion) {
    let (params, samples) = tiny_fixture();
    c.bench_function("tiny model forward+backward", |b| {
        b.iter_batched(
            || params.clone(),
            |mut p| {
                let mut g = Graph::new();
                let l = p.loss_graph(&mut g, &samples[0]).unwrap();
                g.backward(l, 1.0, &mut p.store).unwrap();
            },
            BatchSize::SmallInput,
        )
    });
}

criterion_group!(benches, bench_conv, bench_bdlstm, bench_model_forward, bench_model_backward);
criterion_main!(benches);
