use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use fewshot::data::Image;
use fewshot::nn::{EmbeddingNetwork, NetworkConfig, Regularization};
use fewshot::triplet::{triplet_loss, TripletConfig};
use fewshot::{Exec, Rng};

fn batch(n: usize, side: usize, rng: &mut Rng) -> Vec<Image> {
    (0..n)
        .map(|_| Image::new(side, side, (0..side * side).map(|_| rng.uniform()).collect()))
        .collect()
}

fn modes() -> Vec<(&'static str, Exec)> {
    let mut m = vec![("sequential", Exec::Sequential)];
    #[cfg(feature = "parallel")]
    m.push(("parallel", Exec::Parallel));
    m
}

fn forward_backward(c: &mut Criterion) {
    let mut rng = Rng::new(7);
    let cfg = NetworkConfig::default();
    let images = batch(64, cfg.input_size.0, &mut rng);
    let labels: Vec<usize> = (0..64).map(|i| i % 7).collect();
    let triplet = TripletConfig::default();
    let mut group = c.benchmark_group("batch64");
    group.sample_size(10);
    for (name, exec) in modes() {
        let net = EmbeddingNetwork::new(cfg.clone(), &mut Rng::new(1)).unwrap().with_exec(exec);
        group.bench_function(BenchmarkId::new("forward", name), |b| b.iter(|| net.embed(&images).unwrap()));
        group.bench_function(BenchmarkId::new("train_step", name), |b| {
            b.iter(|| {
                let (e, cache) = net.forward(&images).unwrap();
                let out = triplet_loss(&e, &labels, &triplet).unwrap();
                net.backward(&cache, &out.grad, Regularization::default()).unwrap()
            })
        });
    }
    group.finish();
}

criterion_group!(benches, forward_backward);
criterion_main!(benches);
