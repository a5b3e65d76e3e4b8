use super::*;
use rand_chacha::ChaCha8Rng;
use crate::couch::{CouchConfig, MazeVariant};
use crate::state::EnvKind;
use crate::plans::ReplanTrigger;
use rand::SeedableRng;

fn oracle_rate<C: Controller, F: Fn() -> C + Sync>(f: F, cfg: &EnvConfig, n: usize) -> EvalReport {
    let opts = EvalOptions {
        stop_on_success: false,
        ..EvalOptions::default()
    };
    evaluate(f, cfg, n, 1234, &opts).unwrap()
}

#[test]
fn boxpusher_oracle_solves_train_layouts() {
    let cfg = EnvConfig::default_for(EnvKind::BoxPusher);
    let r = oracle_rate(BoxPusherOracle::default, &cfg, 100);
    let complete = r.episodes.iter().filter(|e| e.success && e.j_final == e.n_final).count();
    eprintln!("boxpusher oracle: {} / 100 (complete {complete})", r.successes());
    assert!(complete >= 95);
}

#[test]
fn couch_oracle_solves_short_mazes() {
    let cfg = EnvConfig::Couch(CouchConfig::default());
    let r = oracle_rate(CouchOracle::default, &cfg, 100);
    let steps: Vec<usize> = r.episodes.iter().map(|e| e.steps).collect();
    eprintln!("couch short oracle: {} / 100, steps {:?}", r.successes(), steps);
    assert!(r.successes() >= 90);
}

#[test]
fn couch_oracle_solves_long_mazes() {
    let cfg = EnvConfig::Couch(CouchConfig {
        variant: MazeVariant::Long,
        n_corners: 5,
        max_episode_len: 400,
        ..CouchConfig::default()
    });
    let r = oracle_rate(CouchOracle::default, &cfg, 100);
    eprintln!("couch long oracle: {} / 100", r.successes());
    assert!(r.successes() >= 85);
}

fn tiny_policy(kind: EnvKind, backbone: crate::policy::BackboneKind) -> crate::policy::Policy {
    let mut cfg = crate::policy::PolicyConfig::for_env(kind);
    cfg.backbone = backbone;
    cfg.embed_dim = 8;
    cfg.layer_dims = vec![8, 8];
    cfg.head_dims = vec![8];
    cfg.n_heads = 2;
    crate::policy::Policy::new(&cfg, 4).unwrap()
}

fn recorded_episode(cfg: &EnvConfig, seed: u64) -> EpisodeRecord {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut env = Env::reset(cfg, &mut rng).unwrap();
    let mut opts = RunOptions::new(cfg);
    opts.record = true;
    opts.max_steps = 30;
    opts.triggers = vec![ReplanTrigger::timeout(12)];
    opts.max_replans = 1;
    let mut c = BoxPusherOracle::default();
    run_with_replanning(&mut c, &mut env, &mut opts, &mut rng).unwrap().record.unwrap()
}

#[test]
fn min_max_scaling_edge_cases() {
    assert_eq!(min_max_scale(&[0.25, 0.25, 0.25]), vec![1.0; 3]);
    assert_eq!(min_max_scale(&[0.0, 1.0, 0.0]), vec![0.0, 1.0, 0.0]);
    let att = vec![vec![vec![0.5, 0.5, 0.0], vec![0.0, 1.0, 0.0]]];
    assert_eq!(mean_prompt_attention(&att, 2), vec![0.25, 0.75]);
    let cells = bin_to_cells(&[1.0, 0.5, 0.0], &[vec![0.2, 0.3], vec![0.7, 0.9], vec![3.5, 0.5]]);
    assert_eq!(cells, vec![([0, 0], 1.0), ([3, 0], 0.0)]);
}

#[test]
fn attention_map_rows_are_scaled() {
    let cfg = EnvConfig::default_for(EnvKind::BoxPusher);
    let record = recorded_episode(&cfg, 9);
    assert_eq!(record.plans.len(), 2);
    let policy = tiny_policy(EnvKind::BoxPusher, crate::policy::BackboneKind::CausalAttention);
    let map = attention_heatmap(&policy, &record, 2, 0.2).unwrap();
    assert_eq!(map.steps.len(), record.actions.len());
    for row in &map.steps {
        assert!(row.iter().all(|v| (0.0..=1.0).contains(v)));
        assert!(row.iter().any(|v| *v == 1.0));
    }
    let grid = map.to_grid_string();
    assert_eq!(grid.lines().count(), record.actions.len());
    let img = map.to_ppm(None);
    assert!(img.starts_with(b"P6\n"));
    let ff = tiny_policy(EnvKind::BoxPusher, crate::policy::BackboneKind::FeedforwardGc);
    assert!(matches!(attention_heatmap(&ff, &record, 2, 0.2), Err(crate::Error::Unsupported(_))));
}

#[test]
fn couch_attention_bins_to_cells() {
    let cfg = EnvConfig::Couch(CouchConfig::default());
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut env = Env::reset(&cfg, &mut rng).unwrap();
    let maze = env.maze().unwrap().clone();
    let mut opts = RunOptions::new(&cfg);
    opts.record = true;
    opts.max_steps = 10;
    let record = run_with_replanning(&mut CouchOracle::default(), &mut env, &mut opts, &mut rng)
        .unwrap()
        .record
        .unwrap();
    let policy = tiny_policy(EnvKind::Couch, crate::policy::BackboneKind::CausalAttention);
    let map = attention_heatmap(&policy, &record, 10, 1.0).unwrap();
    let cells = map.cells.as_ref().unwrap();
    assert_eq!(cells.len(), 10);
    for step in cells {
        assert!(step.iter().any(|(_, v)| *v == 1.0));
        assert!(step.iter().all(|(c, _)| !maze.is_wall(*c)));
    }
    let img = map.to_ppm(Some(&maze));
    let header = format!("P6\n{} {}\n255\n", maze.width * 8, maze.height * 8);
    assert_eq!(img.len(), header.len() + maze.width * maze.height * 64 * 3);
}

#[test]
fn replay_matches_live_controller_inputs() {
    let cfg = EnvConfig::default_for(EnvKind::BoxPusher);
    let record = recorded_episode(&cfg, 5);
    let policy = tiny_policy(EnvKind::BoxPusher, crate::policy::BackboneKind::CausalAttention);
    let steps = replay_inputs(&record, &policy, 2, 0.2).unwrap();
    // The history at step t ends with observation t.
    for (t, s) in steps.iter().enumerate() {
        assert_eq!(s.history.last().unwrap().0, record.observations[t]);
    }
    let second = record.plans[1].start_step;
    assert_eq!(steps[second].chunk.first().0, record.plans[1].states[0]);
}

#[test]
fn policy_evaluation_is_deterministic() {
    let cfg = EnvConfig::default_for(EnvKind::BoxPusher).with_max_episode_len(20);
    let policy = tiny_policy(EnvKind::BoxPusher, crate::policy::BackboneKind::CausalAttention);
    let a = evaluate_policy(&policy, &cfg, 2, 8, 77, &EvalOptions::default()).unwrap();
    let b = evaluate_policy(&policy, &cfg, 2, 8, 77, &EvalOptions::default()).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.n_episodes, 8);
    let couch = EnvConfig::Couch(CouchConfig::default());
    assert!(evaluate_policy(&policy, &couch, 2, 1, 0, &EvalOptions::default()).unwrap_err().is_configuration());
}

#[test]
fn teleport_replanning_differential() {
    let cfg = EnvConfig::default_for(EnvKind::BoxPusher);
    let d = replan_differential(&cfg, 100, 31, 10, 0.5, 40).unwrap();
    eprintln!("replan differential: {d:?}");
    assert!(d.gap_points() >= 30.0);
}

#[test]
fn sweep_has_one_row_per_p() {
    let mut cfg = crate::trainer::RunConfig::for_env(EnvKind::BoxPusher);
    cfg.policy = tiny_policy(EnvKind::BoxPusher, crate::policy::BackboneKind::CausalAttention).cfg;
    cfg.threads = 1;
    cfg.ppo.rollout_batch = 40;
    cfg.ppo.n_parallel_envs = 2;
    cfg.ppo.minibatch = 20;
    cfg.ppo.grad_updates_per_epoch = 1;
    cfg.ppo.max_episode_len = 10;
    cfg.ppo.epochs = 1;
    let rows = granularity_sweep(&cfg, &[1, 4], 2, 0).unwrap();
    assert_eq!(rows.iter().map(|r| r.p).collect::<Vec<_>>(), vec![1, 4]);
    assert!(granularity_sweep(&cfg, &[], 2, 0).is_err());
}
