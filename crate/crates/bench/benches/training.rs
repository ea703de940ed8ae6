use criterion::{black_box, criterion_group, criterion_main, BatchSize, Criterion};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use por_core::data::Columns;
use por_core::envs::{build_toy_dataset, collect, CollectorSpec, TaskId, ToyLayout};
use por_core::policies::{execute_loss, guide_loss_weighted, ExecutePolicy, GuidePolicy};
use por_core::tabular::dataset_value_iteration;
use por_core::{Mlp, MlpSpec, ValueEnsemble, ValueObjective};

fn mlp(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let net = Mlp::new(MlpSpec::scalar(2, &[64, 64]), &mut rng).unwrap();
    let x = Array2::from_shape_fn((256, 2), |_| rng.gen_range(-9.0..9.0));
    c.bench_function("mlp_64x2_forward_b256", |b| b.iter(|| net.forward_batch(black_box(x.view())).unwrap()));
    c.bench_function("mlp_64x2_trace_b256", |b| b.iter(|| net.forward_trace(black_box(x.view())).unwrap()));
}

fn updates(c: &mut Criterion) {
    let data = collect(&CollectorSpec::new(TaskId::A, 20_000, 0)).unwrap();
    let cols = Columns::new(&data);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let batch = cols.sample(&mut rng, 256).unwrap();
    let value = ValueEnsemble::new(2, &[64, 64], false, ValueObjective::Expectile, 0.9, 0.99, 0.05, 1e-4, &mut rng).unwrap();
    let guide = GuidePolicy::new(2, &[64, 64], false, true, &mut rng).unwrap();
    let exec = ExecutePolicy::new(2, 2, &[64, 64], false, &mut rng).unwrap();
    c.bench_function("value_update_b256", |b| {
        b.iter_batched(|| value.clone(), |mut v| v.update(&batch).unwrap(), BatchSize::SmallInput)
    });
    c.bench_function("guide_loss_weighted_b256", |b| {
        b.iter(|| guide_loss_weighted(black_box(&batch), &guide, &value, 10.0).unwrap())
    });
    c.bench_function("execute_loss_b256", |b| b.iter(|| execute_loss(black_box(&batch), &exec, None).unwrap()));
    c.bench_function("batch_sample_b256", |b| b.iter(|| cols.sample(&mut rng, 256).unwrap()));
}

fn environments(c: &mut Criterion) {
    c.bench_function("collect_fourroom_10k", |b| b.iter(|| collect(&CollectorSpec::new(TaskId::A, 10_000, 3)).unwrap()));
    let layout = ToyLayout::canonical();
    let data = build_toy_dataset(&layout).unwrap();
    c.bench_function("toy_value_iteration", |b| {
        b.iter(|| dataset_value_iteration(black_box(&data), &layout.world, 1.0).unwrap())
    });
}

criterion_group!(benches, mlp, updates, environments);
criterion_main!(benches);
