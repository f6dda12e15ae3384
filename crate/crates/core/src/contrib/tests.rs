use super::*;
use crate::encoder::{EncoderConfig, LayerTrace};
use crate::numkit::{softmax, Rng};
use crate::synthworld::{make_prompt, Color, ObjectSpec, SceneSpec, Shape};

fn synthetic_layer(rng: &mut Rng, n: usize, heads: usize, dh: usize, causal: bool) -> LayerTrace<f64> {
    let d = heads * dh;
    let v: Tensor<f64> = rng.normal_tensor(&[n, d], 1.0);
    let wo: Tensor<f64> = rng.normal_tensor(&[d, d], 0.5);
    let attn: Vec<Tensor<f64>> = (0..heads)
        .map(|_| {
            let mut a = Tensor::zeros(&[n, n]);
            for i in 0..n {
                let m = if causal { i + 1 } else { n };
                let logits: Vec<f64> = (0..m).map(|_| 2.0 * rng.normal()).collect();
                a.row_mut(i)[..m].copy_from_slice(&softmax(&logits).unwrap());
            }
            a
        })
        .collect();
    let mut z = Tensor::zeros(&[n, d]);
    for (h, a) in attn.iter().enumerate() {
        for i in 0..n {
            for j in 0..n {
                for k in 0..dh {
                    let add = a.at(i, j) * v.at(j, h * dh + k);
                    z.row_mut(i)[h * dh + k] += add;
                }
            }
        }
    }
    let out = z.matmul(&wo);
    LayerTrace {
        xbar: Tensor::zeros(&[n, d]),
        q: Tensor::zeros(&[n, d]),
        k: Tensor::zeros(&[n, d]),
        v,
        attn,
        wo,
        out,
        biased: false,
    }
}

fn trace_of(layers: Vec<LayerTrace<f64>>, causal: bool) -> AttentionTrace<f64> {
    AttentionTrace { causal, layers }
}

/// Head-by-head brute force: (attn^h_ij * v^h_j) then times W_o^h.
fn naive(lt: &LayerTrace<f64>) -> Vec<Vec<f64>> {
    let (n, heads) = (lt.v.rows(), lt.attn.len());
    let dh = lt.v.cols() / heads;
    let d = lt.wo.cols();
    let mut out = vec![vec![0.0; n]; n];
    for (i, row) in out.iter_mut().enumerate() {
        for (j, cell) in row.iter_mut().enumerate() {
            let mut acc = vec![0.0; d];
            for h in 0..heads {
                let scaled: Vec<f64> = (0..dh).map(|k| lt.attn[h].at(i, j) * lt.v.at(j, h * dh + k)).collect();
                for (o, a) in acc.iter_mut().enumerate() {
                    for (k, s) in scaled.iter().enumerate() {
                        *a += s * lt.wo.at(h * dh + k, o);
                    }
                }
            }
            *cell = acc.iter().map(|x| x * x).sum::<f64>().sqrt();
        }
    }
    out
}

#[test]
fn random_traces_reconstruct_and_match_oracle() {
    let mut rng = Rng::new(1);
    for case in 0..100 {
        let n = 1 + rng.below(9);
        let causal = case % 2 == 0;
        let layers = (0..4).map(|_| synthetic_layer(&mut rng, n, 4, 8, causal)).collect();
        let trace = trace_of(layers, causal);
        for l in 0..4 {
            let m = attention_contribution(&trace, l).unwrap();
            let lt = &trace.layers[l];
            for i in 0..n {
                let mut sum = vec![0.0; 32];
                for j in 0..n {
                    for (s, &x) in sum.iter_mut().zip(m.vector(i, j)) {
                        *s += x;
                    }
                    if causal && j > i {
                        assert_eq!(m.at(i, j), 0.0);
                    }
                }
                for (s, &o) in sum.iter().zip(lt.out.row(i)) {
                    assert!((s - o).abs() <= 1e-5, "reconstruction {s} vs {o}");
                }
                let norm = lt.out.row(i).iter().map(|x| x * x).sum::<f64>().sqrt();
                assert!(norm <= m.cont.row(i).iter().sum::<f64>() + 1e-5);
            }
            let oracle = naive(lt);
            for i in 0..n {
                for j in 0..n {
                    assert!((m.at(i, j) - oracle[i][j]).abs() <= 1e-9 * (1.0 + oracle[i][j]));
                }
            }
        }
    }
}

#[test]
fn identity_attention_and_zero_values() {
    let mut rng = Rng::new(2);
    let mut lt = synthetic_layer(&mut rng, 4, 1, 6, false);
    for i in 0..4 {
        for j in 0..4 {
            lt.attn[0].set(i, j, (i == j) as u8 as f64);
        }
    }
    let trace = trace_of(vec![lt.clone()], false);
    let m = attention_contribution(&trace, 0).unwrap();
    let vw = lt.v.matmul(&lt.wo);
    for i in 0..4 {
        for j in 0..4 {
            let expected = if i == j {
                vw.row(i).iter().map(|x| x * x).sum::<f64>().sqrt()
            } else {
                0.0
            };
            assert!((m.at(i, j) - expected).abs() < 1e-12);
        }
    }
    let mut zero = lt;
    zero.v.fill(0.0);
    let (attn, cont) = attention_map_vs_contribution(&trace_of(vec![zero.clone()], false), 0).unwrap();
    assert!(cont.data().iter().all(|&c| c == 0.0));
    assert_eq!(attn, zero.attn[0]);
    assert!(attention_contribution(&trace, 1).is_err());
}

#[test]
fn value_scaling_scales_one_column() {
    let mut rng = Rng::new(3);
    let lt = synthetic_layer(&mut rng, 6, 4, 4, true);
    let base = attention_contribution(&trace_of(vec![lt.clone()], true), 0).unwrap();
    for lambda in [0.5, 10.0] {
        let mut scaled = lt.clone();
        for v in scaled.v.row_mut(2) {
            *v *= lambda;
        }
        let (attn, cont) = attention_map_vs_contribution(&trace_of(vec![scaled], true), 0).unwrap();
        let (attn0, _) = attention_map_vs_contribution(&trace_of(vec![lt.clone()], true), 0).unwrap();
        assert_eq!(attn, attn0);
        for i in 0..6 {
            for j in 0..6 {
                let expected = if j == 2 { lambda * base.at(i, j) } else { base.at(i, j) };
                assert!((cont.at(i, j) - expected).abs() <= 1e-12 * (1.0 + expected));
            }
        }
    }
}

#[test]
fn equal_value_norms_share_row_argmax() {
    let mut rng = Rng::new(4);
    let mut lt = synthetic_layer(&mut rng, 5, 1, 6, false);
    lt.wo = Tensor::zeros(&[6, 6]);
    for k in 0..6 {
        lt.wo.set(k, k, 1.0);
    }
    for j in 0..5 {
        let norm = lt.v.row(j).iter().map(|x| x * x).sum::<f64>().sqrt();
        for x in lt.v.row_mut(j) {
            *x /= norm;
        }
    }
    let (attn, cont) = attention_map_vs_contribution(&trace_of(vec![lt], false), 0).unwrap();
    let argmax = |r: &[f64]| (0..r.len()).fold(0, |b, i| if r[i] > r[b] { i } else { b });
    for i in 0..5 {
        assert_eq!(argmax(attn.row(i)), argmax(cont.row(i)));
    }
}

fn pair_prompt() -> PromptTemplate {
    make_prompt(
        &SceneSpec::pair(
            ObjectSpec::new(Color::Red, Shape::Square),
            ObjectSpec::new(Color::Blue, Shape::Circle),
        )
        .unwrap(),
    )
    .unwrap()
}

fn filled(o2a1: f64, o2a2: f64, o1a1: f64, o1a2: f64, causal: bool, layer: usize) -> ContributionMatrix<f64> {
    let mut cont = Tensor::full(&[9, 9], 0.1);
    cont.set(7, 2, o2a1);
    cont.set(7, 6, o2a2);
    cont.set(3, 2, o1a1);
    cont.set(3, 6, o1a2);
    ContributionMatrix {
        layer,
        causal,
        cont,
        vectors: Tensor::zeros(&[81, 1]),
    }
}

#[test]
fn counting_rules() {
    let p = pair_prompt();
    assert_eq!(p.slots.pair().unwrap().o2, 7);
    let all = |a, b, c, d, causal| (0..4).map(|l| filled(a, b, c, d, causal, l)).collect::<Vec<_>>();
    assert_eq!(count_unintended(&p, &all(0.5, 0.9, 0.5, 0.5, true)).unwrap(), 0);
    assert_eq!(count_unintended(&p, &all(0.9, 0.5, 0.5, 0.5, true)).unwrap(), 4);
    assert_eq!(count_unintended(&p, &all(0.7, 0.7, 0.7, 0.7, false)).unwrap(), 0);
    // the o1 check applies only to bidirectional traces
    assert_eq!(count_unintended(&p, &all(0.1, 0.5, 0.2, 0.9, true)).unwrap(), 0);
    assert_eq!(count_unintended(&p, &all(0.1, 0.5, 0.2, 0.9, false)).unwrap(), 4);
    let single = make_prompt(&SceneSpec::single(ObjectSpec::new(Color::Red, Shape::Square))).unwrap();
    assert!(count_unintended(&single, &all(0.9, 0.5, 0.5, 0.5, true)).is_err());
}

#[test]
fn compare_encoders_outputs() {
    let enc = EncoderParams::init(&EncoderConfig::default(), 7).unwrap();
    let prompts: Vec<PromptTemplate> = crate::synthworld::heldout_scenes()
        .iter()
        .take(6)
        .map(|s| make_prompt(s).unwrap())
        .collect();
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = compare_encoders((&enc, "x"), (&enc, "x"), "toy", &prompts, Some(dir.path())).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.counts.len(), 6);
    assert_eq!(a.histogram().iter().sum::<usize>(), 6);
    let csv = std::fs::read_to_string(dir.path().join("unintended.csv")).unwrap();
    assert!(csv.starts_with("prompt_id,encoder_tag,layer,cont_o2a1,cont_o2a2,cont_o1a1,cont_o1a2,unintended\n"));
    assert_eq!(csv.lines().count(), 1 + 2 * 6 * 4);
    assert!(dir.path().join("unintended_hist.png").exists());
    assert!(dir.path().join("heatmaps/x/p005_3.png").exists());

    let empty = tempfile::tempdir().unwrap();
    let (a, _) = compare_encoders((&enc, "x"), (&enc, "y"), "toy", &[], Some(empty.path())).unwrap();
    assert!(a.counts.is_empty());
    assert_eq!(std::fs::read_dir(empty.path()).unwrap().count(), 0);

    let other = EncoderParams::init(
        &EncoderConfig {
            vocab: 20,
            ..EncoderConfig::default()
        },
        7,
    )
    .unwrap();
    assert!(compare_encoders((&enc, "x"), (&other, "y"), "toy", &prompts, None).is_err());
}

#[test]
fn real_encoder_traces_reconstruct_in_single_precision() {
    let enc: EncoderParams<f32> = EncoderParams::init(&EncoderConfig::default(), 8).unwrap();
    let (_, trace) = encode(&enc, &pair_prompt().tokens, None).unwrap();
    for l in 0..4 {
        let m = attention_contribution(&trace, l).unwrap();
        for i in 0..9 {
            for (k, &o) in trace.layers[l].out.row(i).iter().enumerate() {
                let s: f32 = (0..9).map(|j| m.vector(i, j)[k]).sum();
                assert!((s - o).abs() <= 1e-5);
            }
        }
    }
}
