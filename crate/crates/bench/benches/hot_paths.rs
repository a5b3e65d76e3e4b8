use std::hint::black_box;
use std::sync::Arc;

use criterion::{criterion_group, criterion_main, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use trajlab::env::{Env, EnvConfig};
use trajlab::plans::{chunk_periodic, PlanConfig};
use trajlab::policy::{fit_prompt, Policy, PolicyConfig, QueryInput};
use trajlab::reward::{MatchTracker, RewardParams};
use trajlab::trainer::{compute_gae, Done};
use trajlab::{Dissimilarity, EnvKind, LowState};

fn reward_tracking(c: &mut Criterion) {
    let kind = EnvKind::BoxPusher;
    let cfg = PlanConfig::for_env(kind);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let env = Env::reset(&EnvConfig::default_for(kind), &mut rng).unwrap();
    let plan = env.plan(cfg.epsilon_spacing, &mut rng).unwrap();
    let chunk = Arc::new(chunk_periodic(&plan, cfg.epsilon_spacing).remove(0));
    let lows: Vec<LowState> = chunk
        .states()
        .iter()
        .flat_map(|h| (0..4).map(move |i| LowState([h.0.clone(), vec![0.01 * i as f64; 2]].concat())))
        .collect();
    let params = RewardParams::for_env(kind);
    c.bench_function("reward/track_episode", |b| {
        b.iter(|| {
            let mut t = MatchTracker::new(chunk.clone(), Dissimilarity::for_env(kind), cfg.epsilon_spacing).unwrap();
            for low in &lows {
                black_box(t.step(low, &params).unwrap());
            }
        })
    });
}

fn policy_inference(c: &mut Criterion) {
    let kind = EnvKind::BoxPusher;
    let pcfg = PolicyConfig::for_env(kind);
    let policy = Policy::new(&pcfg, 0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let env = Env::reset(&EnvConfig::default_for(kind), &mut rng).unwrap();
    let plan = env.plan(PlanConfig::for_env(kind).epsilon_spacing, &mut rng).unwrap();
    let prompt = fit_prompt(&plan, PlanConfig::for_env(kind).p, pcfg.l_max).unwrap();
    let prepared = policy.prepare(policy.prompt_input(&prompt).unwrap());
    let queries: Vec<QueryInput> = (0..32)
        .map(|_| QueryInput {
            prompt: 0,
            lows: (0..pcfg.k * pcfg.low_dim).map(|_| rng.random_range(-1.0..1.0)).collect(),
            goal: Vec::new(),
        })
        .collect();
    let mut group = c.benchmark_group("policy");
    group.sample_size(20);
    group.bench_function("infer_32_queries", |b| {
        b.iter(|| black_box(policy.infer(&[&prepared], queries.clone(), true)))
    });
    group.finish();
}

fn advantages(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let n = 8000;
    let r: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let v: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let nv: Vec<f64> = (0..n).map(|i| if i + 1 < n { v[i + 1] } else { 0.0 }).collect();
    let d: Vec<Done> = (0..n).map(|i| if (i + 1) % 200 == 0 { Done::Truncated } else { Done::No }).collect();
    c.bench_function("gae/8000_steps", |b| b.iter(|| black_box(compute_gae(&r, &v, &nv, &d, 0.99, 0.95))));
}

criterion_group!(benches, reward_tracking, policy_inference, advantages);
criterion_main!(benches);
