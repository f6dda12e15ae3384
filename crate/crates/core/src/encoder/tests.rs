use proptest::prelude::*;

use super::*;
use crate::diffusion::{
    denoiser_backward, denoiser_forward_with_tape, noise_with_alpha_bar, DenoiserConfig, DenoiserParams,
    DiffusionTrainConfig, NoiseSchedule,
};
use crate::numkit::{check_param_grads, MultiStepLr, Rng, Tensor};
use crate::synthworld::{gen_corpus, CorpusConfig, VOCAB_SIZE};

fn params(causal: bool, seed: u64) -> EncoderParams {
    EncoderParams::init(
        &EncoderConfig {
            causal,
            ..EncoderConfig::default()
        },
        seed,
    )
    .unwrap()
}

fn random_tokens(rng: &mut Rng, n: usize) -> Vec<u16> {
    (0..n).map(|_| rng.below(VOCAB_SIZE) as u16).collect()
}

#[test]
fn zero_bias_is_bit_identical() {
    let p = params(true, 3);
    let tokens = [1, 3, 5, 13, 4, 3, 6, 14, 2];
    let (plain, _) = encode(&p, &tokens, None).unwrap();
    let bias = BiasMatrix::new(Tensor::zeros(&[9, 9]), vec![2, 3]).unwrap();
    let (biased, _) = encode(&p, &tokens, Some(&bias)).unwrap();
    assert_eq!(plain.data(), biased.data());
}

#[test]
fn large_negative_bias_masks_one_entry() {
    let p = params(false, 4);
    let tokens = [1, 3, 5, 13, 4, 3, 6, 14, 2];
    let mut m = Tensor::zeros(&[9, 9]);
    m.set(7, 2, -1e9);
    let bias = BiasMatrix::new(m, vec![3]).unwrap();
    let (_, trace) = encode(&p, &tokens, Some(&bias)).unwrap();
    for head in &trace.layers[3].attn {
        assert!(head.at(7, 2) < 1e-6);
    }
    assert!(trace.layers[3].biased && !trace.layers[2].biased);
}

#[test]
fn single_token_attends_to_itself() {
    for causal in [true, false] {
        let (_, trace) = encode(&params(causal, 5), &[1], None).unwrap();
        for layer in &trace.layers {
            for head in &layer.attn {
                assert_eq!(head.at(0, 0), 1.0);
            }
        }
    }
}

#[test]
fn input_errors() {
    let p = params(true, 1);
    assert!(encode(&p, &[1; 13], None).is_err());
    assert!(encode(&p, &[], None).is_err());
    assert!(encode(&p, &[1, 99], None).is_err());
    let bias = BiasMatrix::new(Tensor::zeros(&[4, 4]), vec![3]).unwrap();
    assert!(encode(&p, &[1, 3, 5], Some(&bias)).is_err());
    let deep = BiasMatrix::new(Tensor::zeros(&[3, 3]), vec![4]).unwrap();
    assert!(encode(&p, &[1, 3, 5], Some(&deep)).is_err());
    assert!(BiasMatrix::new(Tensor::<f32>::zeros(&[3, 4]), vec![0]).is_err());
    assert!(EncoderConfig {
        d: 30,
        ..EncoderConfig::default()
    }
    .validate()
    .is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn attention_rows_are_distributions(seed in 0u64..1000, n in 1usize..=12, causal: bool) {
        let p = params(causal, seed);
        let tokens = random_tokens(&mut Rng::stream(seed, 1), n);
        let (_, trace) = encode(&p, &tokens, None).unwrap();
        for layer in &trace.layers {
            for head in &layer.attn {
                for i in 0..n {
                    let s: f32 = head.row(i).iter().sum();
                    prop_assert!((s - 1.0).abs() <= 1e-5);
                    if causal {
                        prop_assert!(head.row(i)[i + 1..].iter().all(|&w| w == 0.0));
                    }
                }
            }
        }
    }

    #[test]
    fn causal_outputs_ignore_later_tokens(seed in 0u64..1000, n in 2usize..=12, cut in 0usize..11) {
        let cut = cut % (n - 1);
        let p = params(true, seed);
        let mut rng = Rng::stream(seed, 2);
        let a = random_tokens(&mut rng, n);
        let mut b = a.clone();
        for t in &mut b[cut + 1..] {
            *t = ((*t as usize + 1 + rng.below(VOCAB_SIZE - 1)) % VOCAB_SIZE) as u16;
        }
        let (ca, _) = encode(&p, &a, None).unwrap();
        let (cb, _) = encode(&p, &b, None).unwrap();
        for i in 0..=cut {
            prop_assert_eq!(ca.row(i), cb.row(i));
        }
    }
}

fn joint_loss(enc: &EncoderParams<f64>, den: &DenoiserParams<f64>, tokens: &[u16], xt: &Tensor<f64>, eps: &Tensor<f64>, t: usize) -> f64 {
    let (c, _) = encode(enc, tokens, None).unwrap();
    let (eps_hat, _) = denoiser_forward_with_tape(den, xt, &c, t).unwrap();
    eps_hat.data().iter().zip(eps.data()).map(|(a, b)| (a - b) * (a - b)).sum()
}

#[test]
fn joint_gradient_matches_finite_differences() {
    let enc: EncoderParams<f64> = params(true, 11).cast();
    let den: DenoiserParams<f64> = DenoiserParams::init_random_head(&DenoiserConfig::default(), 12).unwrap();
    let tokens = [1, 3, 5, 13, 4, 3, 6, 14, 2];
    let mut rng = Rng::new(13);
    let x0: Tensor<f64> = rng.normal_tensor(&[768], 0.5);
    let eps: Tensor<f64> = rng.normal_tensor(&[768], 1.0);
    let t = 57;
    let xt = noise_with_alpha_bar(&x0, &eps, NoiseSchedule::default().alpha_bar(t)).unwrap();

    let (c, etape) = encode_with_tape(&enc, &tokens, None).unwrap();
    let (eps_hat, dtape) = denoiser_forward_with_tape(&den, &xt, &c, t).unwrap();
    let d_eps = Tensor::from_vec(
        &[768],
        eps_hat.data().iter().zip(eps.data()).map(|(a, b)| 2.0 * (a - b)).collect(),
    );
    let mut dgrads = den.zeros_like();
    let dc = denoiser_backward(&den, &dtape, &c, &d_eps, &mut dgrads);
    let mut egrads = enc.zeros_like();
    encode_backward(&enc, &etape, &dc, &mut egrads);

    let worst = check_param_grads(&enc, &egrads, |e| joint_loss(e, &den, &tokens, &xt, &eps, t), 10, 14, 1e-5).unwrap();
    assert!(worst <= 1e-3, "worst relative error {worst}");
}

fn tiny_config(steps: usize) -> DiffusionTrainConfig {
    DiffusionTrainConfig {
        steps,
        batch: 4,
        lr: MultiStepLr::constant(2e-3),
        clip_norm: Some(1.0),
        seed: 21,
    }
}

#[test]
fn zero_steps_and_determinism() {
    let corpus = gen_corpus(&CorpusConfig {
        n_samples: 64,
        seed: 2,
        ..CorpusConfig::default()
    })
    .unwrap();
    let enc = params(true, 1);
    let den = DenoiserParams::init(&DenoiserConfig::default(), 1).unwrap();
    let sched = NoiseSchedule::default();
    let (e0, d0, log) = train_encoder_jointly(&corpus.samples, &enc, &den, &sched, &tiny_config(0)).unwrap();
    assert_eq!(e0, enc);
    assert_eq!(d0, den);
    assert!(log.losses.is_empty());
    let a = train_encoder_jointly(&corpus.samples, &enc, &den, &sched, &tiny_config(5)).unwrap();
    let b = train_encoder_jointly(&corpus.samples, &enc, &den, &sched, &tiny_config(5)).unwrap();
    assert_eq!(a.0, b.0);
    assert_eq!(a.1, b.1);
    assert_ne!(a.0, enc);
}
