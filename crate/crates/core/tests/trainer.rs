use std::path::Path;

use drivefix_core::corpus::{Corpus, CorpusConfig};
use drivefix_core::degrade::CorruptionSpec;
use drivefix_core::objectives::AlignmentWeights;
use drivefix_core::stdt::ModelConfig;
use drivefix_core::synthworld::SceneConfig;
use drivefix_core::trainer::*;
use drivefix_core::Error;

fn corpus() -> Corpus {
    let cfg = CorpusConfig {
        scenes: 2,
        height: 16,
        width: 16,
        scene: SceneConfig {
            timesteps: 6,
            ..SceneConfig::default()
        },
        ..CorpusConfig::default()
    };
    Corpus::generate(&cfg, &CorruptionSpec::default()).unwrap()
}

fn model() -> ModelConfig {
    ModelConfig {
        channels: 16,
        blocks: 2,
        heads: 2,
        patch: 4,
        geo_channels: 8,
        ..ModelConfig::default()
    }
}

fn train_cfg(steps: u64) -> TrainConfig {
    TrainConfig {
        stage1_steps: steps,
        stage2_steps: 5,
        lr: 1e-3,
        warmup_steps: 3,
        batch_size: 2,
        seed: 3,
        checkpoint_every: 6,
        ..TrainConfig::default()
    }
}

fn read_log(path: &Path) -> Vec<serde_json::Value> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

#[test]
fn resumed_run_is_bit_identical() {
    let c = corpus();
    let dir = tempfile::tempdir().unwrap();
    let cfg = train_cfg(12);
    let (full, logs) = train_stage1(&c, &model(), &cfg, Some(dir.path()), None).unwrap();
    assert_eq!(logs.len(), 12);

    let (resumed, saved_cfg, manifest) = load_state(&dir.path().join("checkpoints/step_000006")).unwrap();
    assert_eq!(saved_cfg, cfg);
    assert_eq!(manifest.step, 6);
    let (state, tail) = train_stage1(&c, &model(), &cfg, None, Some(resumed)).unwrap();
    assert_eq!(tail, logs[6..].to_vec());
    assert_eq!(state, full);
}

#[test]
fn saved_state_round_trips_with_optimizer_moments() {
    let c = corpus();
    let dir = tempfile::tempdir().unwrap();
    let (state, _) = train_stage1(&c, &model(), &train_cfg(4), None, None).unwrap();
    save_state(dir.path(), &state, &train_cfg(4), Stage::Base).unwrap();
    let (back, _, _) = load_state(dir.path()).unwrap();
    assert_eq!(back, state);
    assert!(back.opt.v.iter().any(|v| v.iter().any(|x| *x > 0.0)));
}

#[test]
fn zero_weight_finetune_equals_stage1_continuation() {
    let c = corpus();
    let (start, _) = train_stage1(&c, &model(), &train_cfg(6), None, None).unwrap();

    let mut a = start.clone();
    let mut trainer = Trainer::new(&c, &model(), &train_cfg(6), None).unwrap();
    let (fine, _) = trainer.stage2(&mut a, AlignmentWeights::OFF, &[], &mut |_, _| Ok(())).unwrap();

    let (b, cont) = train_stage1(&c, &model(), &train_cfg(11), None, Some(start)).unwrap();
    assert_eq!(fine.len(), 5);
    for (x, y) in fine.iter().zip(&cont) {
        assert_eq!((x.step, x.l_diff, x.total, x.lr), (y.step, y.l_diff, y.total, y.lr));
    }
    assert_eq!(a, b);
}

#[test]
fn sweep_marks_produce_loadable_checkpoints_and_log_alignment_terms() {
    let c = corpus();
    let dir = tempfile::tempdir().unwrap();
    let cfg = train_cfg(6);
    let (state, _) = train_stage1(&c, &model(), &cfg, Some(dir.path()), None).unwrap();
    let (end, logs, saved) = train_stage2_align(&dir.path().join("stage1"), &c, &cfg, Some(dir.path()), &[2, 4, 7]).unwrap();
    assert_eq!(state.step, 6);
    assert_eq!(end.step, 13);
    assert_eq!(logs.len(), 7);
    assert_eq!(saved.iter().map(|s| s.0).collect::<Vec<_>>(), [2, 4, 7]);
    for (mark, path) in &saved {
        let (st, _, m) = load_state(path.as_ref().unwrap()).unwrap();
        assert_eq!(m.step, 6 + mark);
        assert_eq!(st.step, 6 + mark);
    }

    let lines = read_log(&dir.path().join("train_log.jsonl"));
    let headers: Vec<_> = lines.iter().filter(|l| l.get("header").is_some()).collect();
    assert_eq!(headers.len(), 2);
    assert_eq!(headers[0]["alpha"], 0.0);
    assert_eq!(headers[1]["alpha"], 0.5);
    assert_eq!(headers[1]["beta"], 0.05);
    let steps: Vec<_> = lines.iter().filter(|l| l.get("header").is_none()).collect();
    assert_eq!(steps.len(), 13);
    for l in steps {
        for key in ["step", "l_diff", "l_angular", "l_scale", "total", "lr"] {
            assert!(l[key].as_f64().is_some_and(f64::is_finite), "{key} in {l}");
        }
    }
}

#[test]
fn non_finite_loss_names_last_good_checkpoint() {
    let c = corpus();
    let dir = tempfile::tempdir().unwrap();
    let cfg = train_cfg(6);
    let mut trainer = Trainer::new(&c, &model(), &cfg, Some(dir.path())).unwrap();
    let mut state = trainer.init_state().unwrap();
    trainer.stage1(&mut state).unwrap();
    let ckpt = dir.path().join("stage1");
    state.model.readout.b[0] = f32::NAN;
    let err = trainer.step(&mut state, Stage::Base, AlignmentWeights::OFF).unwrap_err();
    match err {
        Error::NonFinite { stage } => {
            assert!(stage.contains("readout"), "{stage}");
            assert!(stage.contains(&ckpt.display().to_string()), "{stage}");
        }
        other => panic!("unexpected error {other}"),
    }
}

#[test]
fn invalid_configs_are_rejected() {
    let c = corpus();
    let bad_lr = TrainConfig { lr: 0.0, ..train_cfg(10) };
    assert!(Trainer::new(&c, &model(), &bad_lr, None).is_err());
    let bad_warmup = TrainConfig { warmup_steps: 10, ..train_cfg(10) };
    assert!(Trainer::new(&c, &model(), &bad_warmup, None).is_err());
}
