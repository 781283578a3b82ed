//! Training-loop contracts: sub-step parameter isolation, determinism,
//! snapshot fidelity, resume equivalence, and abort behavior.

use std::time::Instant;

use pseudosr::imaging::{generate_texture, Image};
use pseudosr::losses::GanForm;
use pseudosr::networks::{BundleConfig, NetworkBundle};
use pseudosr::training::{
    checkpoint_load, checkpoint_save, next_batch, run_training, substep_discriminators,
    substep_generators, substep_sr, train_step, lr_schedule, TrainConfig, TrainError,
    TrainState, LogRecord,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn pools(seed: u64) -> (Vec<Image>, Vec<Image>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lr = (0..3).map(|_| generate_texture(&mut rng, 24, 24)).collect();
    let hr = (0..3).map(|_| generate_texture(&mut rng, 32, 32)).collect();
    (lr, hr)
}

fn test_cfg(total_iters: u64) -> TrainConfig {
    let mut cfg = TrainConfig::desk();
    cfg.total_iters = total_iters;
    cfg.batch = 2;
    cfg.lr_patch = 8;
    cfg.lr_milestones = vec![];
    cfg.checkpoint_every = 0;
    cfg.geo_ramp = None;
    cfg
}

fn bundle(seed: u64) -> NetworkBundle<f64> {
    NetworkBundle::build(&BundleConfig::desk(2), seed).expect("desk bundle builds")
}

fn hashes(nets: &NetworkBundle<f64>) -> [u64; 6] {
    nets.stores().map(|s| s.content_hash())
}

const STORE_NAMES: [&str; 6] = ["g_correct", "g_degrade", "sr", "d_lr_x", "d_lr_yd", "d_hr"];

fn assert_changed_exactly(before: [u64; 6], after: [u64; 6], expect: [bool; 6], when: &str) {
    for i in 0..6 {
        let changed = before[i] != after[i];
        assert_eq!(
            changed, expect[i],
            "{when}: store {} should{} have changed",
            STORE_NAMES[i],
            if expect[i] { "" } else { " not" }
        );
    }
}

#[test]
fn sub_steps_touch_only_their_own_parameters() {
    let (lr_pool, hr_pool) = pools(7);
    let cfg = test_cfg(4);
    let mut state = TrainState::new(cfg.seed);
    let mut nets = bundle(cfg.seed);
    let batch = next_batch::<f64>(&lr_pool, &hr_pool, &cfg, &mut state).unwrap();
    let adam = cfg.optim_gan.adam();

    let h0 = hashes(&nets);
    substep_discriminators(&mut nets, &batch, GanForm::Nonsaturating, true, &adam, 1e-4, 0)
        .unwrap();
    let h1 = hashes(&nets);
    assert_changed_exactly(h0, h1, [false, false, false, true, true, true], "after D step");

    let w = cfg.weights;
    substep_generators(&mut nets, &batch, GanForm::Nonsaturating, &w, &adam, 1e-4, 0).unwrap();
    let h2 = hashes(&nets);
    assert_changed_exactly(h1, h2, [true, true, false, false, false, false], "after G step");

    let adam_sr = cfg.optim_sr.adam();
    substep_sr(
        &mut nets,
        &batch,
        pseudosr::training::Variant::Full,
        cfg.reconstruction,
        &adam_sr,
        1e-4,
        0,
    )
    .unwrap();
    let h3 = hashes(&nets);
    assert_changed_exactly(h2, h3, [false, false, true, false, false, false], "after SR step");
}

#[test]
fn hr_discriminator_is_inert_when_its_weight_is_zero() {
    let (lr_pool, hr_pool) = pools(11);
    let mut cfg = test_cfg(3);
    cfg.variant = pseudosr::training::Variant::NoDHr;
    let mut state = TrainState::new(cfg.seed);
    let mut nets = bundle(cfg.seed);
    let d_hr_before = nets.d_hr.store.content_hash();

    for _ in 0..cfg.total_iters {
        let batch = next_batch::<f64>(&lr_pool, &hr_pool, &cfg, &mut state).unwrap();
        let rec = train_step(&mut nets, &batch, &cfg, &mut state).unwrap();
        assert_eq!(rec.adv_hr, 0.0, "HR generator term must be reported as zero");
        assert_eq!(rec.d_hr, 0.0, "HR discriminator loss must be reported as zero");
    }
    assert_eq!(
        nets.d_hr.store.content_hash(),
        d_hr_before,
        "HR discriminator parameters moved in a variant that never trains them"
    );
    assert_ne!(nets.sr.store.content_hash(), bundle(cfg.seed).sr.store.content_hash());
}

#[test]
fn same_seed_gives_identical_logs() {
    let (lr_pool, hr_pool) = pools(3);
    let cfg = test_cfg(3);

    let run = |seed: u64| -> Vec<String> {
        let mut cfg = cfg.clone();
        cfg.seed = seed;
        let mut state = TrainState::new(seed);
        let mut nets = bundle(seed);
        (0..cfg.total_iters)
            .map(|_| {
                let batch = next_batch::<f64>(&lr_pool, &hr_pool, &cfg, &mut state).unwrap();
                let rec = train_step(&mut nets, &batch, &cfg, &mut state).unwrap();
                serde_json::to_string(&rec).unwrap()
            })
            .collect()
    };

    let a = run(5);
    let b = run(5);
    assert_eq!(a, b, "identical seeds must reproduce the loss stream bit for bit");

    let c = run(6);
    assert_ne!(a, c, "a different seed should trace a different loss stream");
}

#[test]
fn checkpoint_round_trip_is_lossless_and_byte_identical() {
    let (lr_pool, hr_pool) = pools(13);
    let cfg = test_cfg(2);
    let arch = BundleConfig::desk(2);
    let mut state = TrainState::new(cfg.seed);
    let mut nets = bundle(cfg.seed);
    for _ in 0..2 {
        let batch = next_batch::<f64>(&lr_pool, &hr_pool, &cfg, &mut state).unwrap();
        train_step(&mut nets, &batch, &cfg, &mut state).unwrap();
    }

    let dir = tempfile::tempdir().unwrap();
    let first = dir.path().join("a.agc");
    checkpoint_save(&first, &nets, &state).unwrap();

    let (loaded, mut loaded_state) = checkpoint_load::<f64>(&first, &arch).unwrap();
    assert_eq!(loaded_state.iter, state.iter);
    for (ours, theirs) in nets.stores().iter().zip(loaded.stores()) {
        assert_eq!(ours.name, theirs.name);
        for (p, q) in ours.params().iter().zip(theirs.params()) {
            assert_eq!(p.name, q.name);
            assert_eq!(p.step, q.step, "{}: optimizer step", p.name);
            assert_eq!(p.value, q.value, "{}: value", p.name);
            assert_eq!(p.m, q.m, "{}: first moment", p.name);
            assert_eq!(p.v, q.v, "{}: second moment", p.name);
        }
    }
    use rand::RngCore;
    assert_eq!(state.data_rng.clone().next_u64(), loaded_state.data_rng.next_u64());
    assert_eq!(state.noise_rng.clone().next_u64(), loaded_state.noise_rng.next_u64());

    let second = dir.path().join("b.agc");
    let reloaded_state = checkpoint_load::<f64>(&first, &arch).unwrap().1;
    checkpoint_save(&second, &loaded, &reloaded_state).unwrap();
    let bytes_a = std::fs::read(&first).unwrap();
    let bytes_b = std::fs::read(&second).unwrap();
    assert_eq!(bytes_a, bytes_b, "save -> load -> save must be byte-identical");
}

#[test]
fn corrupt_and_mismatched_snapshots_are_rejected() {
    let cfg = test_cfg(1);
    let arch = BundleConfig::desk(2);
    let state = TrainState::new(cfg.seed);
    let nets = bundle(cfg.seed);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("snap.agc");
    checkpoint_save(&path, &nets, &state).unwrap();

    // Truncation anywhere in the body is detected.
    let bytes = std::fs::read(&path).unwrap();
    let cut = dir.path().join("cut.agc");
    std::fs::write(&cut, &bytes[..bytes.len() * 4 / 5]).unwrap();
    match checkpoint_load::<f64>(&cut, &arch).map(|_| ()) {
        Err(TrainError::Container(_)) => {}
        other => panic!("truncated snapshot must fail as a container error, got {other:?}"),
    }

    // A snapshot from a future schema is refused outright.
    use autograd::container::{write_container, Entry};
    let alien = dir.path().join("alien.agc");
    write_container(&alien, &[Entry::scalar_u64("meta/schema", 99)]).unwrap();
    match checkpoint_load::<f64>(&alien, &arch).map(|_| ()) {
        Err(TrainError::Checkpoint(msg)) => assert!(msg.contains("schema"), "{msg}"),
        other => panic!("schema mismatch must be a checkpoint error, got {other:?}"),
    }

    // Wrong target scale.
    match checkpoint_load::<f64>(&path, &BundleConfig::desk(4)).map(|_| ()) {
        Err(TrainError::Checkpoint(msg)) => assert!(msg.contains("scale"), "{msg}"),
        other => panic!("scale mismatch must be a checkpoint error, got {other:?}"),
    }

    // Wrong architecture: same scale, different widths.
    let mut fat = BundleConfig::desk(2);
    fat.correction.base_channels = 32;
    match checkpoint_load::<f64>(&path, &fat).map(|_| ()) {
        Err(TrainError::Checkpoint(msg)) => assert!(msg.contains("shape"), "{msg}"),
        other => panic!("architecture mismatch must be a checkpoint error, got {other:?}"),
    }
}

fn read_log(path: &std::path::Path) -> Vec<LogRecord> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

fn records_close(a: &LogRecord, b: &LogRecord, tol: f64) {
    let pairs = [
        (a.lr_gan, b.lr_gan),
        (a.lr_sr, b.lr_sr),
        (a.d_x, b.d_x),
        (a.d_yd, b.d_yd),
        (a.d_hr, b.d_hr),
        (a.adv_x, b.adv_x),
        (a.adv_yd, b.adv_yd),
        (a.adv_hr, b.adv_hr),
        (a.cyc, b.cyc),
        (a.idt, b.idt),
        (a.geo, b.geo),
        (a.rec, b.rec),
        (a.total_trans, b.total_trans),
    ];
    assert_eq!(a.iter, b.iter);
    for (x, y) in pairs {
        assert!((x - y).abs() <= tol, "iteration {}: {x} vs {y}", a.iter);
    }
}

#[test]
fn resume_reproduces_the_run_exactly() {
    let (lr_pool, hr_pool) = pools(17);
    let mut cfg = test_cfg(5);
    cfg.lr_milestones = vec![3]; // the schedule must hold across the resume point
    cfg.checkpoint_every = 3;

    let dir_a = tempfile::tempdir().unwrap();
    let mut nets_a = bundle(cfg.seed);
    let mut state_a = TrainState::new(cfg.seed);
    run_training(&mut nets_a, &cfg, &lr_pool, &hr_pool, dir_a.path(), &mut state_a).unwrap();
    let log_a = read_log(&dir_a.path().join("train_log.jsonl"));
    assert_eq!(log_a.len(), 5);
    assert_eq!(log_a[2].lr_gan, 1e-4);
    assert_eq!(log_a[3].lr_gan, 5e-5, "milestone 3 halves the translation rate");
    assert_eq!(log_a[4].lr_sr, 1e-4, "the SR rate never decays");

    // Same run, interrupted at 3 and resumed from the snapshot.
    let dir_b = tempfile::tempdir().unwrap();
    let mut short = cfg.clone();
    short.total_iters = 3;
    let mut nets_b = bundle(cfg.seed);
    let mut state_b = TrainState::new(cfg.seed);
    run_training(&mut nets_b, &short, &lr_pool, &hr_pool, dir_b.path(), &mut state_b).unwrap();

    let arch = BundleConfig::desk(2);
    let (mut resumed, mut resumed_state) =
        checkpoint_load::<f64>(&dir_b.path().join("ckpt_0000003.agc"), &arch).unwrap();
    assert_eq!(resumed_state.iter, 3);
    let dir_c = tempfile::tempdir().unwrap();
    run_training(&mut resumed, &cfg, &lr_pool, &hr_pool, dir_c.path(), &mut resumed_state)
        .unwrap();
    let log_c = read_log(&dir_c.path().join("train_log.jsonl"));
    assert_eq!(log_c.len(), 2, "the resumed run covers exactly the remaining iterations");
    records_close(&log_a[3], &log_c[0], 1e-6);
    records_close(&log_a[4], &log_c[1], 1e-6);
}

#[test]
fn snapshot_cadence_matches_the_schedule() {
    let (lr_pool, hr_pool) = pools(19);
    let mut cfg = test_cfg(10);
    cfg.checkpoint_every = 5;
    cfg.lr_milestones = vec![4];

    let dir = tempfile::tempdir().unwrap();
    let mut nets = bundle(cfg.seed);
    let mut state = TrainState::new(cfg.seed);
    let t0 = Instant::now();
    let artifacts =
        run_training(&mut nets, &cfg, &lr_pool, &hr_pool, dir.path(), &mut state).unwrap();
    let per_iter = t0.elapsed().as_secs_f64() / 10.0;
    println!("desk-size train_step: {:.0} ms/iteration", per_iter * 1e3);

    let names: Vec<_> = artifacts
        .checkpoints
        .iter()
        .map(|p| p.file_name().unwrap().to_string_lossy().into_owned())
        .collect();
    assert_eq!(names, ["ckpt_0000005.agc", "ckpt_0000010.agc"]);
    assert!(artifacts.final_checkpoint.ends_with("final.agc"));
    assert!(artifacts.final_checkpoint.exists());

    let log = read_log(&artifacts.log_path);
    assert_eq!(log.len(), 10);
    for (i, rec) in log.iter().enumerate() {
        assert_eq!(rec.iter, i as u64);
        assert_eq!(rec.lr_gan, lr_schedule(1e-4, rec.iter, &cfg.lr_milestones));
        assert_eq!(rec.lr_sr, 1e-4);
        assert!(rec.total_trans.is_finite() && rec.rec.is_finite());
    }

    let arch = BundleConfig::desk(2);
    for p in artifacts.checkpoints.iter().chain([&artifacts.final_checkpoint]) {
        checkpoint_load::<f64>(p, &arch).unwrap_or_else(|e| panic!("{p:?} unreadable: {e}"));
    }
}

#[test]
fn non_finite_losses_abort_with_a_snapshot() {
    let (lr_pool, hr_pool) = pools(23);
    let cfg = test_cfg(3);
    let mut nets = bundle(cfg.seed);
    let mut state = TrainState::new(cfg.seed);
    nets.g_correct.store.param_mut(0).value.fill(f64::NAN);

    let dir = tempfile::tempdir().unwrap();
    match run_training(&mut nets, &cfg, &lr_pool, &hr_pool, dir.path(), &mut state) {
        Err(TrainError::NonFinite { iter: 0, snapshot: Some(snap), .. }) => {
            assert!(snap.exists(), "diagnostic snapshot must be written before aborting");
        }
        other => panic!("expected a non-finite abort at iteration 0, got {other:?}"),
    }
}
