use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use ttosc_core::harness::random_plan;
use ttosc_core::model::derive_allocation;
use ttosc_core::rl::{knapsack_select, random_feasible_action, DeploymentAgent, Observation, Transition};
use ttosc_core::{solve_slot, ArrivalProcess, ConfigFile};

fn slot_scheduling(c: &mut Criterion) {
    let cfg = ConfigFile::default().resolve().unwrap();
    let process = ArrivalProcess::new(&cfg, 7).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let cases: Vec<_> = (0..32)
        .map(|slot| {
            let alloc = derive_allocation(&random_plan(&cfg, 0, &mut rng), &cfg).unwrap();
            (alloc, process.arrivals(slot))
        })
        .collect();
    let mut i = 0;
    c.bench_function("slot_solve_m5_j20", |b| {
        b.iter(|| {
            let (alloc, arrivals) = &cases[i % cases.len()];
            i += 1;
            solve_slot(alloc, arrivals, &cfg, &cfg.solver).unwrap()
        })
    });
}

fn knapsack(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let values: Vec<f64> = (0..20).map(|_| rng.random_range(-1.0..1.0)).collect();
    let sizes: Vec<u32> = (0..20).map(|_| rng.random_range(1..=4)).collect();
    c.bench_function("knapsack_j20_c8", |b| b.iter(|| knapsack_select(&values, &sizes, 8).unwrap()));
}

fn deployment_step(c: &mut Criterion) {
    let cfg = ConfigFile::default().resolve().unwrap();
    let sizes: Vec<u32> = cfg.services.iter().map(|s| s.data_size).collect();
    let capacity = cfg.servers[0].storage;
    let (k, j) = (cfg.slots_per_frame, cfg.num_services());
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut obs = || Observation::new(k, j, (0..k * j).map(|_| rng.random_range(0.0..0.5)).collect()).unwrap();
    let mut agent = DeploymentAgent::new(0, sizes.clone(), capacity, &cfg.training, 1);
    let mut action_rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..cfg.training.buffer_capacity {
        agent.remember(Transition {
            state: obs(),
            action: random_feasible_action(&sizes, capacity, &mut action_rng),
            reward: 0.1,
            next_state: obs(),
        });
    }
    let probe = obs();
    c.bench_function("select_and_train_h128", |b| {
        b.iter_batched(
            || agent.clone(),
            |mut a| {
                a.select_action(Some(&probe), 0.0).unwrap();
                a.train(&cfg.training).unwrap()
            },
            BatchSize::LargeInput,
        )
    });
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(20);
    targets = slot_scheduling, knapsack, deployment_step
}
criterion_main!(benches);
