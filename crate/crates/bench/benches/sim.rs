use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::hint::black_box;

use quadgym::control::mixer;
use quadgym::dynamics::{hover_speed, step};
use quadgym::world::{raycast, scene_forest, CameraModel, ForestConfig};
use quadgym::{ControlMode, ExternalWrench, QuadParams, QuadState, Quat, TaskKind, Vec3};
use quadgym_bench::batch;

fn dynamics_step(c: &mut Criterion) {
    let params = QuadParams::default();
    let w = hover_speed(&params);
    let s = QuadState { rotor_speed: [w; 4], ..QuadState::at(Vec3::new(0.0, 0.0, 1.0)) };
    let ext = ExternalWrench::default();
    c.bench_function("dynamics_rk4_step", |b| {
        b.iter(|| step(black_box(&s), &[w * 1.01, w, w, w * 0.99], &params, &ext, 0.01).unwrap())
    });
}

fn mixer_bench(c: &mut Criterion) {
    let params = QuadParams::default();
    let torque = Vec3::new(1e-3, -2e-3, 5e-4);
    c.bench_function("mixer", |b| b.iter(|| mixer(black_box(4.0), black_box(&torque), &params)));
}

fn vec_env_step(c: &mut Criterion) {
    let mut group = c.benchmark_group("vec_env_step");
    for n in [1usize, 16, 64] {
        let mut env = batch(TaskKind::Hovering, ControlMode::CTBR, n);
        let actions = [-0.5, 0.0, 0.0, 0.0].repeat(n);
        group.throughput(Throughput::Elements(n as u64));
        group.bench_with_input(BenchmarkId::new("hover_ctbr", n), &n, |b, _| {
            b.iter(|| env.step(black_box(&actions)).unwrap())
        });
    }
    group.finish();
}

fn raycast_bench(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let scene = scene_forest(&mut rng, &ForestConfig::default(), &[Vec3::new(-6.0, 0.0, 1.5)]);
    let cam = CameraModel::default();
    let pose = cam.pose_for(&Vec3::new(-6.0, 0.0, 1.5), &Quat::IDENTITY);
    let mut group = c.benchmark_group("raycast");
    group.throughput(Throughput::Elements((cam.width * cam.height) as u64));
    group.bench_function("forest_212x120", |b| b.iter(|| raycast(black_box(&scene), &pose, &cam)));
    group.finish();
}

criterion_group!(benches, dynamics_step, mixer_bench, vec_env_step, raycast_bench);
criterion_main!(benches);
