use crate::error::{Error, Result};
use crate::numkit::Real;

/// Numerically stable softmax. Rejects non-finite logits.
pub fn softmax<R: Real>(logits: &[R]) -> Result<Vec<R>> {
    if logits.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("softmax logits".into()));
    }
    if logits.is_empty() {
        return Err(Error::Empty("softmax logits"));
    }
    let mut out = logits.to_vec();
    softmax_in_place(&mut out);
    Ok(out)
}

/// Unchecked in-place softmax used inside attention kernels.
pub fn softmax_in_place<R: Real>(xs: &mut [R]) {
    let max = xs.iter().copied().fold(R::neg_infinity(), R::max);
    let mut total = R::zero();
    for x in xs.iter_mut() {
        *x = (*x - max).exp();
        total += *x;
    }
    let inv = R::one() / total;
    for x in xs.iter_mut() {
        *x *= inv;
    }
}

pub fn dot<R: Real>(a: &[R], b: &[R]) -> R {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

pub fn l2_norm<R: Real>(a: &[R]) -> R {
    dot(a, a).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn uniform_logits() {
        let p = softmax(&[0.0f32; 4]).unwrap();
        assert!(p.iter().all(|&x| (x - 0.25).abs() < 1e-7));
    }

    #[test]
    fn analytic_pair() {
        let p = softmax(&[0.0f64, 2f64.ln()]).unwrap();
        assert!((p[0] - 1.0 / 3.0).abs() < 1e-12);
        assert!((p[1] - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn masked_entry_vanishes() {
        let p = softmax(&[0.0f32, -1e9]).unwrap();
        assert!((p[0] - 1.0).abs() < 1e-7);
        assert!(p[1] < 1e-7);
    }

    #[test]
    fn nan_rejected() {
        assert!(softmax(&[0.0f32, f32::NAN]).is_err());
    }

    proptest! {
        #[test]
        fn sums_to_one_and_shift_invariant(
            logits in prop::collection::vec(-30.0f64..30.0, 1..=128),
            shift in -50.0f64..50.0,
        ) {
            let p = softmax(&logits).unwrap();
            let total: f64 = p.iter().sum();
            prop_assert!((total - 1.0).abs() < 1e-6);
            prop_assert!(p.iter().all(|&x| x > 0.0));
            let shifted: Vec<f64> = logits.iter().map(|x| x + shift).collect();
            let q = softmax(&shifted).unwrap();
            for (a, b) in p.iter().zip(&q) {
                prop_assert!((a - b).abs() < 1e-9);
            }
        }
    }
}
