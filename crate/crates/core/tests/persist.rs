#![allow(clippy::needless_range_loop)]

use loadadapt::persist::*;
use loadadapt::policy::{ArchConfig, Role};
use loadadapt::train::{Trainer, TrainConfig};
use loadadapt::Error;

fn tiny(role: Role) -> TrainConfig {
    let mut cfg = TrainConfig::desk();
    cfg.role = role;
    cfg.envs = 2;
    cfg.teacher_iterations = 3;
    cfg.reinforce_iterations = 2;
    cfg.checkpoint_every = 2;
    cfg.arch = ArchConfig {
        latent_dim: 4,
        history: 3,
        privileged_hidden: vec![8],
        proprio_hidden: vec![8],
        estimator_hidden: vec![8],
        actor_hidden: vec![8],
        critic_hidden: vec![8],
        init_std: 1.0,
    };
    cfg
}

fn checkpoint_after(cfg: TrainConfig, iterations: usize) -> Checkpoint {
    let mut t = Trainer::new(cfg).unwrap();
    for _ in 0..iterations {
        t.run_iteration().unwrap();
    }
    Checkpoint {
        header: CheckpointHeader {
            role: t.config.role,
            phase: t.phase(),
            iteration: t.iteration,
            seed: t.config.seed,
            config_sha256: config_hash(&t.config).unwrap(),
            arch: t.config.arch.clone(),
        },
        state: t.state(),
    }
}

#[test]
fn checkpoint_round_trip_is_bitwise() {
    for (role, its) in [(Role::Ours, 2), (Role::Nlw, 4), (Role::Oracle, 0)] {
        let ck = checkpoint_after(tiny(role), its);
        let bytes = encode_checkpoint(&ck).unwrap();
        let back = decode_checkpoint(&bytes).unwrap();
        assert_eq!(back, ck);
        assert_eq!(encode_checkpoint(&back).unwrap(), bytes);
        assert_eq!(describe_checkpoint(&bytes).unwrap(), describe_checkpoint(&encode_checkpoint(&back).unwrap()).unwrap());
    }
}

#[test]
fn damaged_checkpoints_fail_the_integrity_check() {
    let bytes = encode_checkpoint(&checkpoint_after(tiny(Role::Lw), 1)).unwrap();
    for cut in [0, 7, 20, bytes.len() / 2, bytes.len() - 1] {
        assert!(matches!(decode_checkpoint(&bytes[..cut]), Err(Error::Integrity(_))), "cut at {cut}");
    }
    for at in [30, bytes.len() / 2, bytes.len() - 5] {
        let mut bad = bytes.clone();
        bad[at] ^= 0x10;
        assert!(matches!(decode_checkpoint(&bad), Err(Error::Integrity(_))), "flip at {at}");
        assert!(describe_checkpoint(&bad).is_err());
    }
}

fn read(path: &std::path::Path) -> Vec<u8> {
    std::fs::read(path).unwrap()
}

#[test]
fn identical_runs_write_identical_files() {
    let text = "preset = \"desk\"\n";
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    let manifests: Vec<RunManifest> = dirs
        .iter()
        .map(|d| train_run(tiny(Role::Ours), text, Overrides::default(), d.path(), false, &mut |_| {}).unwrap())
        .collect();
    let hashes = |m: &RunManifest| m.checkpoints.iter().map(|c| (c.iteration, c.sha256.clone())).collect::<Vec<_>>();
    assert_eq!(hashes(&manifests[0]), hashes(&manifests[1]));
    assert_eq!(hashes(&manifests[0]).iter().map(|c| c.0).collect::<Vec<_>>(), vec![2, 4, 5]);
    for f in [TRAIN_LOG_FILE, REWARD_LOG_FILE] {
        assert_eq!(read(&dirs[0].path().join(f)), read(&dirs[1].path().join(f)));
    }
    let m = RunManifest::load(dirs[0].path()).unwrap();
    assert_eq!(m.config, text);
    assert_eq!(m.iteration, 5);
    m.verify(dirs[0].path()).unwrap();
    let log = String::from_utf8(read(&dirs[0].path().join(TRAIN_LOG_FILE))).unwrap();
    assert_eq!(log.lines().count(), 1 + 5);
}

#[test]
fn resume_continues_from_the_newest_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let text = "preset = \"desk\"\n";
    let mut short = tiny(Role::Nlw);
    short.teacher_iterations = 2;
    short.reinforce_iterations = 1;
    train_run(short, text, Overrides::default(), dir.path(), false, &mut |_| {}).unwrap();
    // Same directory, different configuration: refused.
    let err = train_run(tiny(Role::Nlw), text, Overrides::default(), dir.path(), true, &mut |_| {}).unwrap_err();
    assert!(matches!(err, Error::Config { ref field, .. } if field == "resume"), "{err}");
    // Without --resume an existing run is never overwritten.
    assert!(train_run(tiny(Role::Nlw), text, Overrides::default(), dir.path(), false, &mut |_| {}).is_err());

    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(Role::Nlw);
    let mut seen = Vec::new();
    let m = train_run(cfg.clone(), text, Overrides::default(), dir.path(), false, &mut |r| seen.push(r.iteration)).unwrap();
    assert_eq!(seen, vec![0, 1, 2, 3, 4]);
    // Forget the last checkpoint and resume from iteration 4.
    let mut m2 = m.clone();
    m2.checkpoints.pop();
    m2.save(dir.path()).unwrap();
    let mut resumed = Vec::new();
    let m3 = train_run(cfg, text, Overrides::default(), dir.path(), true, &mut |r| resumed.push(r.iteration)).unwrap();
    assert_eq!(resumed, vec![4]);
    assert_eq!(m3.checkpoints.last().unwrap().iteration, 5);
    m3.verify(dir.path()).unwrap();
    let log = String::from_utf8(read(&dir.path().join(TRAIN_LOG_FILE))).unwrap();
    let its: Vec<&str> = log.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(its, ["0", "1", "2", "3", "4"]);
}

#[test]
fn overrides_are_recorded_and_replayed() {
    let dir = tempfile::tempdir().unwrap();
    let text = "preset = \"desk\"\n";
    let o = Overrides {
        role: Some(Role::Lw),
        seed: Some(7),
        envs: Some(2),
        iterations: Some(5),
    };
    let mut cfg = parse_config(text).unwrap();
    o.apply(&mut cfg).unwrap();
    assert_eq!((cfg.teacher_iterations, cfg.reinforce_iterations), (5, 1));
    let m = RunManifest::new(&cfg, text, o).unwrap();
    m.save(dir.path()).unwrap();
    let back = RunManifest::load(dir.path()).unwrap();
    assert_eq!(back, m);
    assert_eq!(back.config().unwrap(), cfg);
    assert_eq!(back.config, text);
}
