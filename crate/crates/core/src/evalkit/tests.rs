use super::*;
use crate::correct::ProjectionParams;
use crate::diffusion::{DenoiserConfig, DenoiserParams, NoiseSchedule};
use crate::encoder::{EncoderConfig, EncoderParams};
use crate::pipeline::{Pipeline, Variant};
use crate::synthworld::{gen_corpus, tuning_scenes, CorpusConfig, Image};
use crate::Rng;

fn tiny_pipeline() -> Pipeline {
    Pipeline::new(
        EncoderParams::init(&EncoderConfig::default(), 5).unwrap(),
        DenoiserParams::init_random_head(&DenoiserConfig::default(), 5).unwrap(),
        NoiseSchedule::linear(10, 1e-4, 0.02).unwrap(),
    )
    .unwrap()
}

fn perturbed_wiclp() -> ProjectionParams {
    let mut p = ProjectionParams::wiclp(2, 32);
    p.w = Rng::new(4).normal_tensor(p.w.dims(), 0.2);
    p
}

fn reference() -> crate::numkit::GaussianStats {
    let corpus = gen_corpus(&CorpusConfig {
        n_samples: 64,
        p_corrupt: 0.0,
        seed: 2,
        ..Default::default()
    })
    .unwrap();
    let imgs: Vec<Image> = corpus.samples.into_iter().map(|s| s.image).collect();
    feature_stats(&imgs).unwrap()
}

#[test]
fn tradeoff_endpoints_match_baseline_and_always_on() {
    let pipe = tiny_pipeline();
    let proj = perturbed_wiclp();
    let scenes = tuning_scenes();
    let refs = reference();
    let pts = tradeoff_curve(&pipe, &proj, &[0.0, 0.5, 1.0], &scenes, 4, 3, &refs).unwrap();
    assert_eq!(pts.iter().map(|p| p.tau_fraction).collect::<Vec<_>>(), vec![0.0, 0.5, 1.0]);
    assert!(pts.iter().all(|p| p.n == 20));

    let base = pipe.generate_set(&Variant::Baseline, &scenes, 4, 3).unwrap();
    let never = pipe.generate_set(&Variant::SwitchOff(proj.clone(), 1.0), &scenes, 4, 3).unwrap();
    assert_eq!(base, never);
    let on = pipe.generate_set(&Variant::Projection(proj.clone()), &scenes, 4, 3).unwrap();
    let always = pipe.generate_set(&Variant::SwitchOff(proj.clone(), 0.0), &scenes, 4, 3).unwrap();
    assert_eq!(on, always);
    assert_ne!(on, base);

    let base_eval = pipe.evaluate(&Variant::Baseline, &scenes, 4, 3).unwrap();
    assert_eq!(pts[2].mean_score, base_eval.mean());
    assert_eq!(pts[2].fid_proxy, fid_proxy_against(&base_eval.images, &refs).unwrap());
}

#[test]
fn tradeoff_rejects_bad_fractions() {
    let pipe = tiny_pipeline();
    let proj = perturbed_wiclp();
    let refs = reference();
    assert!(tradeoff_curve(&pipe, &proj, &[], &tuning_scenes(), 4, 3, &refs).is_err());
    assert!(tradeoff_curve(&pipe, &proj, &[1.2], &tuning_scenes(), 4, 3, &refs).is_err());
    // 5 scenes x 2 seeds is below the FID-proxy minimum.
    assert!(tradeoff_curve(&pipe, &proj, &[0.5], &tuning_scenes(), 2, 3, &refs).is_err());
}

#[test]
fn tradeoff_csv_and_plot() {
    let dir = tempfile::tempdir().unwrap();
    let pts = vec![
        TradeoffPoint { tau_fraction: 0.0, mean_score: 0.6, fid_proxy: 2.0, n: 8 },
        TradeoffPoint { tau_fraction: 1.0, mean_score: 0.4, fid_proxy: 1.0, n: 8 },
    ];
    write_tradeoff_csv(&dir.path().join("t.csv"), &pts).unwrap();
    plot_tradeoff(&dir.path().join("t.png"), &pts).unwrap();
    let text = std::fs::read_to_string(dir.path().join("t.csv")).unwrap();
    assert_eq!(text.lines().next().unwrap(), "tau_fraction,mean_score,fid_proxy,n");
    assert_eq!(text.lines().count(), 3);
}

#[test]
fn table_has_a_row_per_model_and_category() {
    let pipe = tiny_pipeline();
    let models = vec![
        ("baseline".to_string(), Variant::Baseline),
        ("+WiCLP".to_string(), Variant::Projection(ProjectionParams::wiclp(2, 32))),
    ];
    let rows = comparison_table(&pipe, &models, &tuning_scenes(), 2, 1).unwrap();
    assert_eq!(rows.len(), 6);
    assert_eq!(rows[0].category, Category::All);
    assert_eq!(rows[4].category, Category::Color);
    // A zero-initialised projection leaves every score unchanged.
    for k in 0..3 {
        assert_eq!(rows[k].mean_score, rows[k + 3].mean_score);
    }
    for r in &rows {
        assert_eq!(r.n, 10);
        assert!((0.0..=1.0).contains(&r.mean_score));
    }
    let all = rows[0].mean_score;
    assert!(rows[1].mean_score >= all && rows[2].mean_score >= all);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("table.csv");
    write_table_csv(&path, &rows).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(text.lines().next().unwrap(), "model_tag,category,mean_score,n");
    assert!(text.lines().nth(5).unwrap().starts_with("+WiCLP,color,"));
}
