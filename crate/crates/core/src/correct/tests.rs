use super::*;
use crate::checkpoint::{denoiser_checkpoint, encoder_checkpoint};
use crate::diffusion::{DenoiserConfig, DenoiserParams, NoiseSchedule};
use crate::encoder::{encode, EncoderConfig, EncoderParams};
use crate::numkit::check_param_grads;
use crate::synthworld::{gen_corpus, make_prompt, render_scene, Color, CorpusConfig, Image, ObjectSpec, SceneSpec, Shape};
use crate::{Rng, Tensor};

fn frozen() -> (EncoderParams, DenoiserParams, NoiseSchedule) {
    (
        EncoderParams::init(&EncoderConfig::default(), 21).unwrap(),
        DenoiserParams::init_random_head(&DenoiserConfig::default(), 21).unwrap(),
        NoiseSchedule::linear(50, 1e-4, 0.02).unwrap(),
    )
}

fn clean_corpus(n: usize) -> Vec<crate::synthworld::Sample> {
    gen_corpus(&CorpusConfig {
        n_samples: n,
        p_corrupt: 0.0,
        seed: 4,
        ..Default::default()
    })
    .unwrap()
    .samples
}

fn quick(steps: usize, lr: f64) -> TrainConfig {
    TrainConfig {
        steps,
        lr,
        ..TrainConfig::desk()
    }
}

fn scene() -> SceneSpec {
    SceneSpec::pair(ObjectSpec::new(Color::Red, Shape::Square), ObjectSpec::new(Color::Blue, Shape::Circle)).unwrap()
}

#[test]
fn config_presets() {
    let desk = TrainConfig::desk();
    assert_eq!((desk.steps, desk.batch, desk.lr), (3000, 4, 1e-3));
    assert_eq!(desk.milestones(), vec![1200, 1920]);
    let full = TrainConfig::full();
    assert_eq!((full.steps, full.batch, full.lr), (25000, 4, 1e-5));
    assert_eq!(full.milestones(), vec![10000, 16000]);
    let bad = TrainConfig { batch: 0, ..desk };
    assert!(bad.validate().is_err());
}

#[test]
fn zero_steps_return_the_identity() {
    let (enc, den, sched) = frozen();
    for kind in [ProjectionKind::Clp, ProjectionKind::Wiclp] {
        let s = if kind == ProjectionKind::Clp { 0 } else { 2 };
        let (p, rows) = train_projection(kind, s, &clean_corpus(8), &enc, &den, &sched, &quick(0, 1e-3)).unwrap();
        assert!(rows.is_empty());
        assert_eq!(p, ProjectionParams::zeros(kind, s, 32).unwrap());
    }
}

#[test]
fn training_input_errors() {
    let (enc, den, sched) = frozen();
    assert!(train_projection(ProjectionKind::Wiclp, 2, &[], &enc, &den, &sched, &quick(1, 1e-3)).is_err());
    assert!(train_projection(ProjectionKind::Clp, 1, &clean_corpus(4), &enc, &den, &sched, &quick(1, 1e-3)).is_err());
}

#[test]
fn projection_gradient_matches_finite_differences() {
    let (enc, den, sched) = frozen();
    let den64: DenoiserParams<f64> = den.cast();
    let mut proj: ProjectionParams<f64> = ProjectionParams::zeros(ProjectionKind::Wiclp, 1, 32).unwrap();
    let mut rng = Rng::new(8);
    proj.w = rng.normal_tensor(proj.w.dims(), 0.05);
    proj.b = rng.normal_tensor(proj.b.dims(), 0.05);
    let batch: Vec<(Tensor<f64>, EmbedExample<f64>)> = clean_corpus(3)
        .iter()
        .zip(embedding_examples(&[render_scene(&scene())], 3, 5, &sched).unwrap())
        .map(|(s, ex)| {
            let (c, _) = encode(&enc, &s.caption.tokens, None).unwrap();
            let ex = EmbedExample {
                x_t: ex.x_t.cast(),
                eps: ex.eps.cast(),
                t: ex.t,
            };
            (c.cast(), ex)
        })
        .collect();
    let (_, grads) = projection_objective(&proj, &den64, &batch).unwrap();
    let worst = check_param_grads(&proj, &grads, |p| projection_objective(p, &den64, &batch).unwrap().0, 16, 3, 1e-5).unwrap();
    assert!(worst <= 1e-3, "{worst}");
}

#[test]
fn frozen_models_are_untouched_and_probe_loss_falls() {
    let (enc, den, sched) = frozen();
    let corpus = clean_corpus(64);
    let enc_bytes = encoder_checkpoint(&enc).to_bytes();
    let den_bytes = denoiser_checkpoint(&den).to_bytes();
    let (p, rows) = train_projection(ProjectionKind::Wiclp, 2, &corpus, &enc, &den, &sched, &quick(120, 1e-2)).unwrap();
    assert_eq!(rows.len(), 120);
    assert_eq!(encoder_checkpoint(&enc).to_bytes(), enc_bytes);
    assert_eq!(denoiser_checkpoint(&den).to_bytes(), den_bytes);

    let images: Vec<Image> = corpus.iter().take(16).map(|s| s.image.clone()).collect();
    let probe: Vec<(Tensor, EmbedExample)> = corpus
        .iter()
        .take(16)
        .zip(embedding_examples(&images, 16, 77, &sched).unwrap())
        .map(|(s, ex)| (encode(&enc, &s.caption.tokens, None).unwrap().0, ex))
        .collect();
    let before = projection_objective(&ProjectionParams::zeros(ProjectionKind::Wiclp, 2, 32).unwrap(), &den, &probe)
        .unwrap()
        .0;
    let after = projection_objective(&p, &den, &probe).unwrap().0;
    assert!(after < before, "{after} !< {before}");
}

#[test]
fn loss_csv_has_one_row_per_step() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("loss.csv");
    let rows: Vec<LossRow> = (0..3).map(|step| LossRow { step, loss: 1.0, lr: 1e-3 }).collect();
    write_loss_csv(&path, &rows).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(text.lines().collect::<Vec<_>>(), vec!["step,loss,lr", "0,1,0.001", "1,1,0.001", "2,1,0.001"]);
}

#[test]
fn embedding_boundaries() {
    let (enc, den, sched) = frozen();
    let prompt = make_prompt(&scene()).unwrap();
    let images = vec![render_scene(&scene())];
    let (c0, _) = encode(&enc, &prompt.tokens, None).unwrap();
    let zero = EmbedOptConfig {
        steps: 0,
        ..EmbedOptConfig::default()
    };
    let n = prompt.tokens.len();
    let (c, rows) = optimize_embedding(&enc, &prompt, &images, &den, &sched, &zero, &TokenMask::all(n)).unwrap();
    assert_eq!(c, c0);
    assert!(rows.is_empty());
    let some = EmbedOptConfig {
        steps: 5,
        ..EmbedOptConfig::default()
    };
    let (c, _) = optimize_embedding(&enc, &prompt, &images, &den, &sched, &some, &TokenMask::none(n)).unwrap();
    assert_eq!(c, c0);
    let (c, _) = optimize_embedding(&enc, &prompt, &images, &den, &sched, &some, &TokenMask::preset(&prompt, MaskPreset::Adjectives)).unwrap();
    for i in 0..n {
        let moved = c.row(i) != c0.row(i);
        assert_eq!(moved, [2, 6].contains(&i), "token {i}");
    }
    assert!(optimize_embedding(&enc, &prompt, &[], &den, &sched, &some, &TokenMask::all(n)).is_err());
    assert!(optimize_embedding(&enc, &prompt, &images, &den, &sched, &some, &TokenMask::all(n - 1)).is_err());
}

#[test]
fn mask_presets() {
    let prompt = make_prompt(&scene()).unwrap();
    let adj = TokenMask::preset(&prompt, MaskPreset::Adjectives);
    let nouns = TokenMask::preset(&prompt, MaskPreset::Nouns);
    let both = TokenMask::preset(&prompt, MaskPreset::AdjectivesNouns);
    let all = TokenMask::preset(&prompt, MaskPreset::All);
    assert!(both.is_superset_of(&adj) && both.is_superset_of(&nouns));
    assert!(all.is_superset_of(&both));
    assert!(!adj.is_superset_of(&nouns));
    for p in [MaskPreset::Adjectives, MaskPreset::Nouns, MaskPreset::AdjectivesNouns, MaskPreset::All] {
        assert_eq!(MaskPreset::parse(p.name()).unwrap(), p);
    }
    assert!(MaskPreset::parse("verbs").is_err());
}

#[test]
fn embedding_gradient_matches_finite_differences() {
    let (enc, den, sched) = frozen();
    let den64: DenoiserParams<f64> = den.cast();
    let prompt = make_prompt(&scene()).unwrap();
    let (c, _) = encode(&enc, &prompt.tokens, None).unwrap();
    let c: Tensor<f64> = c.cast();
    let examples: Vec<EmbedExample<f64>> = embedding_examples(&[render_scene(&scene())], 3, 9, &sched)
        .unwrap()
        .into_iter()
        .map(|ex| EmbedExample {
            x_t: ex.x_t.cast(),
            eps: ex.eps.cast(),
            t: ex.t,
        })
        .collect();
    let (_, dc) = embedding_objective(&c, &den64, &examples).unwrap();
    let mut rng = Rng::new(2);
    let h = 1e-5;
    for _ in 0..16 {
        let k = rng.below(c.len());
        let mut up = c.clone();
        up.data_mut()[k] += h;
        let mut down = c.clone();
        down.data_mut()[k] -= h;
        let fd = (embedding_objective(&up, &den64, &examples).unwrap().0 - embedding_objective(&down, &den64, &examples).unwrap().0) / (2.0 * h);
        let err = (fd - dc.data()[k]).abs() / fd.abs().max(dc.data()[k].abs()).max(1e-6);
        assert!(err <= 1e-3, "coordinate {k}: {fd} vs {}", dc.data()[k]);
    }
}

#[test]
fn larger_masks_reach_lower_loss_on_average() {
    let (enc, den, sched) = frozen();
    let prompt = make_prompt(&scene()).unwrap();
    let images = vec![render_scene(&scene())];
    let probe = embedding_examples(&images, 8, 1234, &sched).unwrap();
    let masks = [
        TokenMask::preset(&prompt, MaskPreset::Adjectives),
        TokenMask::preset(&prompt, MaskPreset::AdjectivesNouns),
        TokenMask::preset(&prompt, MaskPreset::All),
    ];
    let mut finals = [0.0f64; 3];
    for seed in 0..5 {
        let cfg = EmbedOptConfig {
            steps: 25,
            seed,
            ..EmbedOptConfig::default()
        };
        for (m, mask) in masks.iter().enumerate() {
            let (c, _) = optimize_embedding(&enc, &prompt, &images, &den, &sched, &cfg, mask).unwrap();
            finals[m] += embedding_objective(&c, &den, &probe).unwrap().0 / 5.0;
        }
    }
    assert!(finals[2] <= finals[1] && finals[1] <= finals[0], "{finals:?}");
}
