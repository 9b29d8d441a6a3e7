use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use entangle::metrics::{entanglement_report, MetricOptions};
use entangle::synthworld::{evaluate_policy, generate_demos, Expert, Jitter, Variant, WorldConfig};
use entangle::trajstore::DemoDataset;

fn dataset() -> DemoDataset {
    generate_demos(&WorldConfig::new(Variant::PickPlace, 0.5, 0), 50, Jitter::default()).unwrap()
}

/// Runs `f` on the global pool and on a one-thread pool. Without the
/// `parallel` feature only the sequential path exists.
fn both<F: Fn() + Sync>(c: &mut Criterion, group: &str, f: F) {
    let mut g = c.benchmark_group(group);
    #[cfg(feature = "parallel")]
    {
        let single = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        g.bench_function(BenchmarkId::new("rayon", rayon::current_num_threads()), |b| b.iter(&f));
        g.bench_function(BenchmarkId::new("rayon", 1), |b| b.iter(|| single.install(&f)));
    }
    #[cfg(not(feature = "parallel"))]
    g.bench_function(BenchmarkId::new("sequential", 1), |b| b.iter(&f));
    g.finish();
}

fn metrics(c: &mut Criterion) {
    let ds = dataset();
    both(c, "entanglement_report", || {
        entanglement_report(&ds, &MetricOptions::default()).unwrap();
    });
}

fn demos(c: &mut Criterion) {
    let world = WorldConfig::new(Variant::PickPlace, 1.0, 1);
    both(c, "generate_demos", || {
        generate_demos(&world, 50, Jitter::default()).unwrap();
    });
}

fn rollouts(c: &mut Criterion) {
    let world = WorldConfig::new(Variant::Push, 1.0, 2);
    both(c, "evaluate_policy", || {
        evaluate_policy(&world, 100, 0, || Expert::new(Variant::Push, Jitter::default())).unwrap();
    });
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(20);
    targets = metrics, demos, rollouts
}
criterion_main!(benches);
