use crate::error::{Error, Result};
use crate::numkit::{ParamSet, Rng};

/// Central-difference gradient of `f` at `point`, one coordinate at a time.
pub fn finite_diff_grad<F>(f: F, point: &[f64], h: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> f64,
{
    let coords: Vec<usize> = (0..point.len()).collect();
    finite_diff_coords(f, point, &coords, h)
}

/// Central differences restricted to `coords`; returns one entry per coordinate.
pub fn finite_diff_coords<F>(mut f: F, point: &[f64], coords: &[usize], h: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> f64,
{
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::OutOfRange {
            what: "finite-difference step",
            value: h.to_string(),
        });
    }
    let mut x = point.to_vec();
    coords
        .iter()
        .map(|&i| {
            let orig = x[i];
            x[i] = orig + h;
            let up = f(&x);
            x[i] = orig - h;
            let down = f(&x);
            x[i] = orig;
            if !(up.is_finite() && down.is_finite()) {
                return Err(Error::NonFinite(format!("objective near coordinate {i}")));
            }
            Ok((up - down) / (2.0 * h))
        })
        .collect()
}

/// `|a - b| / max(|a|, |b|, floor)`, the comparison used by gradient checks.
pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Compares analytic gradients `grads` of `loss` at `params` against central
/// differences on `count` distinct coordinates drawn with `Rng::new(seed)`. Returns
/// the worst relative error (floor `1e-6`).
pub fn check_param_grads<P, F>(params: &P, grads: &P, mut loss: F, count: usize, seed: u64, h: f64) -> Result<f64>
where
    P: ParamSet<f64> + Clone,
    F: FnMut(&P) -> f64,
{
    let sizes: Vec<usize> = params.tensors().iter().map(|t| t.len()).collect();
    let total: usize = sizes.iter().sum();
    if total == 0 {
        return Err(Error::Empty("parameter set"));
    }
    let mut rng = Rng::new(seed);
    let count = count.min(total);
    let mut flats: Vec<usize> = Vec::with_capacity(count);
    while flats.len() < count {
        let f = rng.below(total);
        if !flats.contains(&f) {
            flats.push(f);
        }
    }
    let picks: Vec<(usize, usize)> = flats
        .into_iter()
        .map(|mut flat| {
            let mut ti = 0;
            while flat >= sizes[ti] {
                flat -= sizes[ti];
                ti += 1;
            }
            (ti, flat)
        })
        .collect();
    let point: Vec<f64> = picks.iter().map(|&(t, i)| params.tensors()[t].data()[i]).collect();
    let coords: Vec<usize> = (0..count).collect();
    let mut work = params.clone();
    let numeric = finite_diff_coords(
        |x| {
            {
                let mut ts = work.tensors_mut();
                for (&(t, i), &v) in picks.iter().zip(x) {
                    ts[t].data_mut()[i] = v;
                }
            }
            loss(&work)
        },
        &point,
        &coords,
        h,
    )?;
    let analytic = grads.tensors();
    Ok(picks
        .iter()
        .zip(&numeric)
        .map(|(&(t, i), &n)| relative_error(analytic[t].data()[i], n, 1e-6))
        .fold(0.0, f64::max))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn square_at_three() {
        let g = finite_diff_grad(|x| x[0] * x[0], &[3.0], 1e-4).unwrap();
        assert!(relative_error(g[0], 6.0, 1e-12) < 1e-6);
    }

    #[test]
    fn constant_is_flat() {
        let g = finite_diff_grad(|_| 4.2, &[1.0, -2.0, 3.0], 1e-3).unwrap();
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rejects_bad_step_and_non_finite() {
        assert!(finite_diff_grad(|x| x[0], &[1.0], 0.0).is_err());
        assert!(finite_diff_grad(|x| x[0].ln(), &[-1.0], 1e-3).is_err());
    }

    proptest! {
        #[test]
        fn cubic_polynomials_match_analytic(
            c in prop::collection::vec(-3.0f64..3.0, 10),
            x in prop::collection::vec(-2.0f64..2.0, 2),
        ) {
            // f(x, y) = sum of all monomials of degree <= 3 with coefficients c
            let f = |p: &[f64]| {
                let (x, y) = (p[0], p[1]);
                c[0] + c[1] * x + c[2] * y + c[3] * x * x + c[4] * x * y + c[5] * y * y
                    + c[6] * x * x * x + c[7] * x * x * y + c[8] * x * y * y + c[9] * y * y * y
            };
            let (a, b) = (x[0], x[1]);
            let gx = c[1] + 2.0 * c[3] * a + c[4] * b + 3.0 * c[6] * a * a + 2.0 * c[7] * a * b + c[8] * b * b;
            let gy = c[2] + c[4] * a + 2.0 * c[5] * b + c[7] * a * a + 2.0 * c[8] * a * b + 3.0 * c[9] * b * b;
            let g = finite_diff_grad(f, &x, 1e-4).unwrap();
            prop_assert!(relative_error(g[0], gx, 1.0) < 1e-5);
            prop_assert!(relative_error(g[1], gy, 1.0) < 1e-5);
        }
    }
}
