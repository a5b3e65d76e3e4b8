use rand::SeedableRng;

use super::*;

fn tiny(backbone: BackboneKind) -> PolicyConfig {
    PolicyConfig {
        backbone,
        k: 2,
        l_max: 8,
        embed_dim: 8,
        layer_dims: vec![8, 8],
        head_dims: vec![8],
        dropout: 0.0,
        timestep_embeddings: true,
        init_log_std: -0.5,
        action_dim: 2,
        sgc_lookahead: 2,
        n_heads: 2,
        ffn_mult: 2,
        max_timestep: 16,
        low_dim: 4,
        high_dim: 4,
    }
}

fn randv(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn prompt(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> PromptInput {
    PromptInput {
        states: randv(rng, n * dim),
        indices: (1..=n).map(|i| 2 * i - 1).collect(),
    }
}

fn query(rng: &mut ChaCha8Rng, cfg: &PolicyConfig, p: usize) -> QueryInput {
    let goal = if cfg.backbone.is_sequence() { Vec::new() } else { randv(rng, cfg.high_dim) };
    QueryInput {
        prompt: p,
        lows: randv(rng, cfg.k * cfg.low_dim),
        goal,
    }
}

fn history(v: &[f64], k: usize) -> Vec<LowState> {
    v.chunks(v.len() / k).map(|c| LowState(c.to_vec())).collect()
}

/// Norm-wise relative error between the analytic and central-difference
/// gradients of the summed actor log-probability.
fn actor_gradcheck(policy: &mut Policy, batch: &Batch<'_>, actions: &[f64]) -> f64 {
    let weights = vec![1.0; batch.queries.len()];
    let pass = policy.actor_pass(batch, None);
    let mut g = policy.actor_params.zeros_like();
    policy.actor_backward(batch, &pass, actions, &weights, &mut g);
    let h = 1e-6;
    let mut num = 0.0;
    let mut den_a = 0.0;
    let mut den_f = 0.0;
    for i in 0..policy.actor_params.len() {
        let orig = policy.actor_params.data[i];
        policy.actor_params.data[i] = orig + h;
        let lp: f64 = policy.log_probs(&policy.actor_pass(batch, None), actions).iter().sum();
        policy.actor_params.data[i] = orig - h;
        let lm: f64 = policy.log_probs(&policy.actor_pass(batch, None), actions).iter().sum();
        policy.actor_params.data[i] = orig;
        let fd = (lp - lm) / (2.0 * h);
        num += (fd - g[i]) * (fd - g[i]);
        den_a += g[i] * g[i];
        den_f += fd * fd;
    }
    num.sqrt() / den_a.sqrt().max(den_f.sqrt()).max(1e-12)
}

#[test]
fn gradient_check_every_backbone() {
    for (i, kind) in [
        BackboneKind::CausalAttention,
        BackboneKind::Recurrent,
        BackboneKind::FeedforwardGc,
        BackboneKind::FeedforwardSgc,
    ]
    .into_iter()
    .enumerate()
    {
        let cfg = tiny(kind);
        let mut rng = ChaCha8Rng::seed_from_u64(40 + i as u64);
        let mut policy = Policy::new(&cfg, 7 + i as u64).unwrap();
        // Larger output gain so the check is not dominated by log_std.
        for v in policy.actor_params.data.iter_mut() {
            *v *= 1.5;
        }
        let p0 = prompt(&mut rng, 3, 4);
        let p1 = prompt(&mut rng, 5, 4);
        let batch = Batch {
            prompts: vec![PromptSlot::Input(&p0), PromptSlot::Input(&p1)],
            queries: vec![query(&mut rng, &cfg, 0), query(&mut rng, &cfg, 1), query(&mut rng, &cfg, 0)],
        };
        let actions = randv(&mut rng, 6);
        let err = actor_gradcheck(&mut policy, &batch, &actions);
        assert!(err < 1e-6, "{kind:?}: relative error {err}");
    }
}

#[test]
fn critic_gradient_matches_difference() {
    let cfg = tiny(BackboneKind::CausalAttention);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut policy = Policy::new(&cfg, 3).unwrap();
    let p0 = prompt(&mut rng, 4, 4);
    let batch = Batch {
        prompts: vec![PromptSlot::Input(&p0)],
        queries: vec![query(&mut rng, &cfg, 0), query(&mut rng, &cfg, 0)],
    };
    let pass = policy.critic_pass(&batch, None);
    let mut g = policy.critic_params.zeros_like();
    policy.critic_backward(&batch, &pass, vec![1.0, -0.5], &mut g);
    for i in (0..policy.critic_params.len()).step_by(7) {
        let orig = policy.critic_params.data[i];
        let f = |pol: &Policy| {
            let v = pol.critic_pass(&batch, None).out;
            v[0] - 0.5 * v[1]
        };
        policy.critic_params.data[i] = orig + 1e-6;
        let a = f(&policy);
        policy.critic_params.data[i] = orig - 1e-6;
        let b = f(&policy);
        policy.critic_params.data[i] = orig;
        assert!(((a - b) / 2e-6 - g[i]).abs() < 1e-6 * (1.0 + g[i].abs()));
    }
}

#[test]
fn gradient_check_with_dropout_mask_fixed() {
    let mut cfg = tiny(BackboneKind::CausalAttention);
    cfg.dropout = 0.2;
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut policy = Policy::new(&cfg, 1).unwrap();
    let p0 = prompt(&mut rng, 3, 4);
    let batch = Batch {
        prompts: vec![PromptSlot::Input(&p0)],
        queries: vec![query(&mut rng, &cfg, 0)],
    };
    let actions = randv(&mut rng, 2);
    let loss = |pol: &Policy| {
        let mut r = ChaCha8Rng::seed_from_u64(77);
        pol.log_probs(&pol.actor_pass(&batch, Some(&mut r)), &actions)[0]
    };
    let mut r = ChaCha8Rng::seed_from_u64(77);
    let pass = policy.actor_pass(&batch, Some(&mut r));
    let mut g = policy.actor_params.zeros_like();
    policy.actor_backward(&batch, &pass, &actions, &[1.0], &mut g);
    for i in (0..policy.actor_params.len()).step_by(5) {
        let orig = policy.actor_params.data[i];
        policy.actor_params.data[i] = orig + 1e-6;
        let a = loss(&policy);
        policy.actor_params.data[i] = orig - 1e-6;
        let b = loss(&policy);
        policy.actor_params.data[i] = orig;
        assert!(((a - b) / 2e-6 - g[i]).abs() < 1e-6 * (1.0 + g[i].abs()), "param {i}");
    }
}

#[test]
fn attention_rows_are_distributions() {
    let cfg = tiny(BackboneKind::CausalAttention);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let policy = Policy::new(&cfg, 2).unwrap();
    let p0 = prompt(&mut rng, 6, 4);
    let q = query(&mut rng, &cfg, 0);
    let out = policy.forward(&p0, &history(&q.lows, 2), Vec::new()).unwrap();
    let att = out.attention.unwrap();
    assert_eq!(att.len(), 2);
    for layer in &att {
        assert_eq!(layer.len(), 2);
        for head in layer {
            assert_eq!(head.len(), 6 + 2);
            assert!(head.iter().all(|&w| w >= 0.0));
            assert!((head.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}

#[test]
fn causal_mask_hides_later_tokens() {
    let cfg = tiny(BackboneKind::CausalAttention);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let policy = Policy::new(&cfg, 4).unwrap();
    let Backbone::Attention(net) = &policy.actor.backbone else { unreachable!() };
    let p0 = prompt(&mut rng, 4, 4);
    let q = query(&mut rng, &cfg, 0);
    let run = |p: &PromptInput, q: &QueryInput| {
        let batch = Batch {
            prompts: vec![PromptSlot::Input(p)],
            queries: vec![q.clone()],
        };
        let (_, tape, _) = net.forward(&policy.actor_params.data, &batch, 2, None, false);
        tape.final_rows().0.to_vec()
    };
    let base = run(&p0, &q);
    let d = 8;
    // Perturb prompt token 2: rows 0..2 unchanged, rows >= 2 change.
    let mut p1 = p0.clone();
    for v in &mut p1.states[8..12] {
        *v += 0.5;
    }
    let pert = run(&p1, &q);
    for r in 0..6 {
        let same = base[r * d..(r + 1) * d] == pert[r * d..(r + 1) * d];
        assert_eq!(same, r < 2, "row {r}");
    }
    // Perturb the last low token: only the last row changes.
    let mut q2 = q.clone();
    q2.lows[5] += 0.5;
    let pert = run(&p0, &q2);
    for r in 0..6 {
        let same = base[r * d..(r + 1) * d] == pert[r * d..(r + 1) * d];
        assert_eq!(same, r < 5, "row {r}");
    }
}

#[test]
fn prompt_and_last_low_token_reach_the_action() {
    for kind in [BackboneKind::CausalAttention, BackboneKind::Recurrent] {
        let cfg = tiny(kind);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let policy = Policy::new(&cfg, 8).unwrap();
        let p0 = prompt(&mut rng, 4, 4);
        let q = query(&mut rng, &cfg, 0);
        let base = policy.forward(&p0, &history(&q.lows, 2), Vec::new()).unwrap().dist.mean;
        let mut p1 = p0.clone();
        p1.states[0] += 1.0;
        let m1 = policy.forward(&p1, &history(&q.lows, 2), Vec::new()).unwrap().dist.mean;
        assert_ne!(base, m1, "{kind:?} prompt");
        let mut lows = q.lows.clone();
        lows[7] += 1.0;
        let m2 = policy.forward(&p0, &history(&lows, 2), Vec::new()).unwrap().dist.mean;
        assert_ne!(base, m2, "{kind:?} low");
    }
}

#[test]
fn cached_inference_matches_full_forward() {
    for kind in [
        BackboneKind::CausalAttention,
        BackboneKind::Recurrent,
        BackboneKind::FeedforwardSgc,
    ] {
        let cfg = tiny(kind);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let policy = Policy::new(&cfg, 11).unwrap();
        let p0 = prompt(&mut rng, 5, 4);
        let p1 = prompt(&mut rng, 2, 4);
        let qs = [query(&mut rng, &cfg, 1), query(&mut rng, &cfg, 0)];
        let h0 = policy.prepare(p0.clone());
        let h1 = policy.prepare(p1.clone());
        let (means, values) = policy.infer(&[&h0, &h1], qs.to_vec(), true);
        for (i, q) in qs.iter().enumerate() {
            let p = if q.prompt == 0 { &p0 } else { &p1 };
            let full = policy.forward(p, &history(&q.lows, 2), q.goal.clone()).unwrap();
            for a in 0..2 {
                assert!((full.dist.mean[a] - means[i * 2 + a]).abs() < 1e-12, "{kind:?}");
            }
            assert!((full.value - values[i]).abs() < 1e-12);
        }
    }
}

#[test]
fn backbones_share_the_contract() {
    for kind in [BackboneKind::CausalAttention, BackboneKind::Recurrent] {
        let cfg = tiny(kind);
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let policy = Policy::new(&cfg, 12).unwrap();
        let p0 = prompt(&mut rng, 3, 4);
        let q = query(&mut rng, &cfg, 0);
        let out = policy.forward(&p0, &history(&q.lows, 2), Vec::new()).unwrap();
        assert_eq!(out.dist.mean.len(), 2);
        assert_eq!(out.dist.log_std, vec![-0.5, -0.5]);
        assert!(out.value.is_finite());
        assert_eq!(out.attention.is_some(), kind == BackboneKind::CausalAttention);
        assert!(policy.forward(&p0, &history(&q.lows[..4], 1), Vec::new()).is_err());
    }
}

#[test]
fn timestep_embeddings_separate_identical_states() {
    let mut cfg = tiny(BackboneKind::CausalAttention);
    let policy = Policy::new(&cfg, 1).unwrap();
    let s = HighState(vec![0.1, 0.2, 0.3, 0.4]);
    let p = Prompt {
        states: vec![s.clone(), s.clone()],
        indices: vec![1, 3],
    };
    let t = policy.encode_prompt(&p).unwrap();
    assert_eq!(t.len(), 16);
    assert_ne!(t[..8], t[8..]);
    cfg.timestep_embeddings = false;
    let policy = Policy::new(&cfg, 1).unwrap();
    let t = policy.encode_prompt(&p).unwrap();
    assert_eq!(t[..8], t[8..]);
    let long = Prompt {
        states: vec![s; 9],
        indices: (1..=9).collect(),
    };
    assert!(policy.encode_prompt(&long).is_err());
}

#[test]
fn act_modes() {
    let cfg = tiny(BackboneKind::CausalAttention);
    let mut policy = Policy::new(&cfg, 1).unwrap();
    let p = Prompt {
        states: vec![HighState(vec![0.0; 4]), HighState(vec![1.0; 4])],
        indices: vec![1, 2],
    };
    let hist = vec![LowState(vec![0.1; 4]), LowState(vec![0.2; 4])];
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let a = policy.act(&hist, &p, Vec::new(), ActMode::Mean, &mut rng).unwrap();
    let b = policy.act(&hist, &p, Vec::new(), ActMode::Mean, &mut rng).unwrap();
    assert_eq!(a, b);
    let s1 = policy.act(&hist, &p, Vec::new(), ActMode::Sample, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
    let s2 = policy.act(&hist, &p, Vec::new(), ActMode::Sample, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
    assert_eq!(s1, s2);
    assert_ne!(s1, a);
    let off = policy.log_std_offset();
    policy.actor_params.data[off..off + 2].fill(-1e4);
    let s3 = policy.act(&hist, &p, Vec::new(), ActMode::Sample, &mut rng).unwrap();
    assert_eq!(s3, a);
}

#[test]
fn gc_baseline_contract() {
    let cfg = tiny(BackboneKind::FeedforwardGc);
    let mut policy = Policy::new(&cfg, 1).unwrap();
    let p = PromptInput {
        states: Vec::new(),
        indices: Vec::new(),
    };
    let hist = vec![LowState(vec![0.1, 0.2, 0.3, 0.4]), LowState(vec![0.2, 0.1, 0.3, 0.0])];
    let a = policy.forward(&p, &hist, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
    let b = policy.forward(&p, &hist, vec![4.0, 3.0, 2.0, 1.0]).unwrap();
    assert_eq!(a.dist.mean.len(), 2);
    assert_ne!(a.dist.mean, b.dist.mean);
    assert!(policy.forward(&p, &hist, vec![1.0]).is_err());
    policy.actor_params.data.fill(0.0);
    let z = policy.forward(&p, &hist, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
    assert_eq!(z.dist.mean, vec![0.0, 0.0]);
}

#[test]
fn subgoal_selection() {
    let pts: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64, 0.0]).collect();
    let refs: Vec<&[f64]> = pts.iter().map(|v| v.as_slice()).collect();
    let traj = std::sync::Arc::new(AbstractTrajectory::from_points(&refs).unwrap());
    let d = crate::state::Dissimilarity::for_env(EnvKind::Couch);
    let t = MatchTracker::new(traj.clone(), d, 0.5).unwrap();
    assert_eq!(select_subgoal(&t, &traj, 5), traj.get1(5).clone());
    let t18 = t.clone().with_j(18).unwrap();
    assert_eq!(select_subgoal(&t18, &traj, 5), traj.get1(20).clone());
    let t20 = t.with_j(20).unwrap();
    assert_eq!(select_subgoal(&t20, &traj, 5), traj.get1(20).clone());
}

#[test]
fn checkpoint_roundtrip_and_mismatch() {
    let cfg = tiny(BackboneKind::Recurrent);
    let policy = Policy::new(&cfg, 21).unwrap();
    let text = policy.to_checkpoint_string();
    let back = Policy::from_checkpoint_str(&text, Some(&cfg)).unwrap();
    assert_eq!(back, policy);
    let mut other = cfg.clone();
    other.k = 3;
    assert!(Policy::from_checkpoint_str(&text, Some(&other)).is_err());
    let bumped = text.replacen("\"version\":1", "\"version\":2", 1);
    assert!(Policy::from_checkpoint_str(&bumped, None).is_err());
}

#[test]
fn config_validation() {
    let mut cfg = PolicyConfig::for_env(EnvKind::BoxPusher);
    assert!(cfg.validate().is_ok());
    cfg.dropout = 1.0;
    assert!(cfg.validate().is_err());
    cfg.dropout = 0.1;
    cfg.k = 0;
    assert!(cfg.validate().is_err());
    cfg.k = 2;
    cfg.layer_dims = vec![128, 64];
    assert!(cfg.validate().is_err());
    cfg.backbone = BackboneKind::Recurrent;
    assert!(cfg.validate().is_ok());
    let text = toml::to_string(&cfg).unwrap();
    assert!(text.contains("backbone = \"recurrent\""));
}

#[test]
fn history_pads_with_first_state() {
    let mut h = ObsHistory::new(3, LowState(vec![1.0]));
    assert_eq!(h.to_vec(), vec![LowState(vec![1.0]); 3]);
    h.push(LowState(vec![2.0]));
    assert_eq!(h.to_vec(), vec![LowState(vec![1.0]), LowState(vec![1.0]), LowState(vec![2.0])]);
}
