#![allow(clippy::needless_range_loop)]

mod common;

use common::brute_force_gae;
use loadadapt::load::LOAD_DIM;
use loadadapt::policy::{ArchConfig, PolicyBundle, Role, ACTION_DIM, DYN_DIM, OBS_DIM, STATE_DIM};
use loadadapt::ppo::{
    buffer_kl, compute_gae, minibatch_grads, normalize_advantages, ppo_update, LatentSource, PpoConfig, PpoGraph, PpoOptimizer,
    PpoTargets, RolloutBuffer,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn gae_matches_double_sum_on_random_buffers() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..100 {
        let steps = 50;
        let r: Vec<f64> = (0..steps).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let v: Vec<f64> = (0..steps).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let d: Vec<bool> = (0..steps).map(|_| rng.gen_bool(0.05)).collect();
        let boot = rng.gen_range(-5.0..5.0);
        let gamma = rng.gen_range(0.9..1.0);
        let lambda = rng.gen_range(0.0..1.0);
        let (adv, ret) = compute_gae(&r, &v, &d, &[boot], steps, gamma, lambda).unwrap();
        let want = brute_force_gae(&r, &v, &d, boot, gamma, lambda);
        for t in 0..steps {
            assert!((adv[t] - want[t]).abs() < 1e-10, "t={t}: {} vs {}", adv[t], want[t]);
            assert!((ret[t] - (want[t] + v[t])).abs() < 1e-10);
        }
    }
}

proptest! {
    #[test]
    fn normalized_advantages_are_standard(raw in prop::collection::vec(-100.0f64..100.0, 8..200)) {
        let mut a = raw.clone();
        prop_assume!(raw.iter().any(|x| (x - raw[0]).abs() > 1e-3));
        normalize_advantages(&mut a);
        let n = a.len() as f64;
        let mean = a.iter().sum::<f64>() / n;
        let std = (a.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
        prop_assert!(mean.abs() < 1e-8);
        prop_assert!((std - 1.0).abs() < 1e-6);
    }
}

fn small_arch() -> ArchConfig {
    ArchConfig {
        latent_dim: 6,
        history: 2,
        privileged_hidden: vec![12],
        proprio_hidden: vec![12],
        estimator_hidden: vec![12],
        actor_hidden: vec![12, 8],
        critic_hidden: vec![12],
        init_std: 0.7,
    }
}

/// Random buffer whose stored log-probabilities and means come from `bundle`.
fn random_buffer(bundle: &PolicyBundle, envs: usize, steps: usize, rng: &mut ChaCha8Rng) -> RolloutBuffer {
    let arch = &bundle.arch;
    let pdim = STATE_DIM + DYN_DIM + if bundle.flags.privileged_load { LOAD_DIM } else { 0 };
    let la = if bundle.flags.actor_takes_load() { LOAD_DIM } else { 0 };
    let mut buf = RolloutBuffer::new(envs, steps, arch.history_dim(), pdim, la);
    for v in buf
        .history
        .iter_mut()
        .chain(buf.privileged.iter_mut())
        .chain(buf.obs.iter_mut())
        .chain(buf.actor_load.iter_mut())
    {
        *v = rng.gen_range(-1.0..1.0);
    }
    buf.log_std = bundle.head.log_std.clone();
    for i in 0..buf.len() {
        let z = bundle.privileged.forward(&buf.privileged[i * pdim..(i + 1) * pdim]).unwrap();
        let mut x = Vec::new();
        bundle
            .actor_input(
                &buf.obs[i * OBS_DIM..(i + 1) * OBS_DIM],
                &z,
                (la > 0).then(|| &buf.actor_load[i * la..(i + 1) * la]),
                &mut x,
            )
            .unwrap();
        let mean = bundle.actor.forward(&x).unwrap();
        let action = bundle.head.sample(&mean, rng);
        buf.log_probs[i] = bundle.head.log_prob(&mean, &action);
        buf.actions[i * ACTION_DIM..(i + 1) * ACTION_DIM].copy_from_slice(&action);
        buf.means[i * ACTION_DIM..(i + 1) * ACTION_DIM].copy_from_slice(&mean);
        buf.rewards[i] = rng.gen_range(-1.0..1.0);
        buf.values[i] = rng.gen_range(-1.0..1.0);
        buf.dones[i] = rng.gen_bool(0.1);
    }
    for b in buf.bootstrap.iter_mut() {
        *b = rng.gen_range(-1.0..1.0);
    }
    buf
}

fn bundle(role: Role, seed: u64) -> PolicyBundle {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut b = PolicyBundle::for_role(role, &small_arch(), &mut rng).unwrap();
    // Enlarge the actor output layer so policy gradients are not tiny.
    for p in b.actor.params.iter_mut() {
        *p *= 3.0;
    }
    b
}

#[test]
fn unclipped_gradient_equals_policy_gradient_estimator() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let b = bundle(Role::Oracle, 1);
    let buf = random_buffer(&b, 4, 6, &mut rng);
    let adv: Vec<f64> = (0..buf.len()).map(|_| rng.gen_range(-2.0..2.0)).collect();
    let targets = PpoTargets {
        advantages: adv.clone(),
        returns: vec![0.0; buf.len()],
    };
    let cfg = PpoConfig {
        clip: 1e12,
        value_coef: 0.0,
        entropy_coef: 0.0,
        ..PpoConfig::default()
    };
    let idx: Vec<usize> = (0..buf.len()).collect();
    let (_, g) = minibatch_grads(&b, &buf, &targets, &idx, &cfg, &PpoGraph::TEACHER).unwrap();

    // Oracle: −(1/N) Σ A_i ∇ log π(a_i), one sample at a time.
    let n = buf.len() as f64;
    let mut actor = vec![0.0; b.actor.params.len()];
    let mut log_std = [0.0; ACTION_DIM];
    for i in 0..buf.len() {
        let z = b.privileged.forward(&buf.privileged[i * buf.privileged_dim..(i + 1) * buf.privileged_dim]).unwrap();
        let mut x = Vec::new();
        b.actor_input(&buf.obs[i * OBS_DIM..(i + 1) * OBS_DIM], &z, Some(&buf.actor_load[i * 4..i * 4 + 4]), &mut x)
            .unwrap();
        let tape = b.actor.forward_batch(&x, 1).unwrap();
        let action = &buf.actions[i * ACTION_DIM..(i + 1) * ACTION_DIM];
        let mut d_mean = vec![0.0; ACTION_DIM];
        let mut d_ls = vec![0.0; ACTION_DIM];
        b.head.log_prob_grad(&tape.output, action, 1.0, &mut d_mean, &mut d_ls);
        let mut gi = vec![0.0; actor.len()];
        b.actor.backward(&tape, &d_mean, &mut gi, false);
        for k in 0..actor.len() {
            actor[k] -= adv[i] * gi[k] / n;
        }
        for k in 0..ACTION_DIM {
            log_std[k] -= adv[i] * d_ls[k] / n;
        }
    }
    let scale = actor.iter().map(|v| v.abs()).fold(0.0, f64::max);
    for k in 0..actor.len() {
        assert!((g.actor[k] - actor[k]).abs() <= 1e-8 * scale, "{k}: {} vs {}", g.actor[k], actor[k]);
    }
    for k in 0..ACTION_DIM {
        assert!((g.log_std[k] - log_std[k]).abs() <= 1e-8 * log_std[k].abs().max(1.0));
    }
}

#[test]
fn clipped_ratio_has_no_policy_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let b = bundle(Role::Nlw, 2);
    let mut buf = random_buffer(&b, 1, 1, &mut rng);
    // Pretend the behaviour policy was less likely: r = 1.3.
    buf.log_probs[0] -= 1.3f64.ln();
    let targets = PpoTargets {
        advantages: vec![1.0],
        returns: vec![0.0],
    };
    let cfg = PpoConfig {
        value_coef: 0.0,
        entropy_coef: 0.0,
        ..PpoConfig::default()
    };
    let (stats, g) = minibatch_grads(&b, &buf, &targets, &[0], &cfg, &PpoGraph::TEACHER).unwrap();
    assert!((stats.surrogate + 1.2).abs() < 1e-12);
    assert_eq!(stats.clip_fraction, 1.0);
    assert!(g.actor.iter().chain(&g.log_std).chain(&g.encoder).all(|v| *v == 0.0));
}

#[test]
fn zero_advantages_move_the_policy_only_through_entropy() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let b = bundle(Role::Lw, 3);
    let buf = random_buffer(&b, 2, 4, &mut rng);
    let targets = PpoTargets {
        advantages: vec![0.0; buf.len()],
        returns: vec![0.0; buf.len()],
    };
    let cfg = PpoConfig {
        value_coef: 0.0,
        ..PpoConfig::default()
    };
    let idx: Vec<usize> = (0..buf.len()).collect();
    let (stats, g) = minibatch_grads(&b, &buf, &targets, &idx, &cfg, &PpoGraph::TEACHER).unwrap();
    assert_eq!(stats.surrogate, 0.0);
    assert!(g.actor.iter().chain(&g.encoder).all(|v| *v == 0.0));
    assert!(g.log_std.iter().all(|v| *v == -0.01));
}

#[test]
fn reported_kl_matches_recomputation() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut b = bundle(Role::Ours, 4);
    let buf = random_buffer(&b, 4, 24, &mut rng);
    let cfg = PpoConfig::default();
    let mut opt = PpoOptimizer::new(&b, LatentSource::Privileged, cfg.learning_rate);
    let before = b.clone();
    let stats = ppo_update(&mut b, &mut opt, &buf, &cfg, &PpoGraph::TEACHER, &mut rng).unwrap();
    assert_ne!(before.actor.params, b.actor.params);
    assert_eq!(before.proprio, b.proprio);
    let kl = buffer_kl(&b, &buf, &PpoGraph::TEACHER).unwrap();
    assert!((kl - stats.mean_kl).abs() < 1e-6);
    assert!(stats.mean_kl > 0.0);
}

#[test]
fn proprioceptive_update_leaves_the_privileged_encoder_alone() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut b = bundle(Role::Ours, 5);
    let buf = random_buffer(&b, 2, 24, &mut rng);
    let cfg = PpoConfig::default();
    let mut opt = PpoOptimizer::new(&b, LatentSource::Proprioceptive, cfg.learning_rate);
    let before = b.clone();
    ppo_update(&mut b, &mut opt, &buf, &cfg, &PpoGraph::reinforce(LatentSource::Proprioceptive), &mut rng).unwrap();
    assert_eq!(before.privileged, b.privileged);
    assert_eq!(before.estimator, b.estimator);
    assert_ne!(before.proprio, b.proprio);
}
