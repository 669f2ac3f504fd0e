//! Sequential versus rayon-parallel execution of the two hot loops: batch
//! gradients (one rollout + backward pass per task) and greedy domain
//! evaluation. Both modes produce bit-identical results; only the
//! scheduling differs.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use vlncl_core::engine::batch_gradients;
use vlncl_core::exec::Mode;
use vlncl_core::harness::ExperimentConfig;
use vlncl_core::losses::Forcing;
use vlncl_core::metrics::evaluate_domain;
use vlncl_core::planner::init_params;
use vlncl_core::world::{make_world, Split};

const MODES: [(&str, Mode); 2] = [
    ("sequential", Mode::Sequential),
    ("parallel", Mode::Parallel),
];

fn setup() -> (vlncl_core::world::World, ExperimentConfig) {
    let cfg = ExperimentConfig {
        train_domains: 2,
        val_seen_domains: 2,
        val_unseen_domains: 2,
        tasks_per_domain: 16,
        ..ExperimentConfig::default()
    };
    let world = make_world(cfg.seed, &cfg.world()).expect("world");
    (world, cfg)
}

fn bench_batch_gradients(c: &mut Criterion) {
    let (world, cfg) = setup();
    let planner = cfg.planner();
    let params = init_params(&planner, 1, cfg.cl_alpha_init).expect("params");
    let tasks = &world.stream(Split::ValUnseen).expect("stream").domains[0].tasks[..8];
    let mut group = c.benchmark_group("batch_gradients");
    for forcing in [Forcing::Teacher, Forcing::Student] {
        for (name, mode) in MODES {
            group.bench_with_input(
                BenchmarkId::new(name, format!("{forcing:?}")),
                &mode,
                |b, &m| {
                    b.iter(|| {
                        batch_gradients(
                            &world,
                            tasks,
                            &params,
                            &planner,
                            &cfg.weights(),
                            forcing,
                            3,
                            m,
                        )
                        .expect("gradients")
                    })
                },
            );
        }
    }
    group.finish();
}

fn bench_evaluate_domain(c: &mut Criterion) {
    let (world, cfg) = setup();
    let planner = cfg.planner();
    let params = init_params(&planner, 1, cfg.cl_alpha_init).expect("params");
    let domain = &world.stream(Split::ValUnseen).expect("stream").domains[0];
    let mut group = c.benchmark_group("evaluate_domain");
    for (name, mode) in MODES {
        group.bench_with_input(BenchmarkId::from_parameter(name), &mode, |b, &m| {
            b.iter(|| evaluate_domain(&world, &params, &planner, domain, m).expect("metrics"))
        });
    }
    group.finish();
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10);
    targets = bench_batch_gradients, bench_evaluate_domain
}
criterion_main!(benches);
