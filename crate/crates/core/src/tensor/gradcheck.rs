//! Central finite-difference checks of autodiff gradients.

use super::{Element, Graph, Tensor, Var};
use crate::error::{Error, Result};

/// `|a − n| / max(|a|, |n|, 1e-8)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

fn check_eps(eps: f64) -> Result<()> {
    if !(1e-6..=1e-2).contains(&eps) {
        return Err(Error::InvalidArgument(format!("finite-difference step {eps} outside [1e-6, 1e-2]")));
    }
    Ok(())
}

/// Compares the autodiff gradient of the scalar `f(x)` against central
/// differences at every element of `x`; returns the largest relative error.
pub fn finite_diff_check<T, F>(f: F, x: &Tensor<T>, eps: f64) -> Result<f64>
where
    T: Element,
    F: Fn(&mut Graph<'static, T>, Var) -> Result<Var>,
{
    check_eps(eps)?;
    let mut g = Graph::new();
    let xv = g.variable(x.clone());
    let loss = f(&mut g, xv)?;
    let grads = g.backward(loss)?;
    let analytic = grads.wrt(xv).expect("variable receives a gradient").clone();

    let eval = |data: &[T]| -> Result<f64> {
        let mut g = Graph::new();
        let xv = g.constant(Tensor::new(x.shape().clone(), data.to_vec())?);
        let loss = f(&mut g, xv)?;
        Ok(g.value(loss).item().ok_or_else(|| Error::NonScalarLoss(g.shape(loss).clone()))?.to_f64())
    };
    let indices: Vec<usize> = (0..x.len()).collect();
    max_relative_error(analytic.data(), x.data(), &indices, eps, eval)
}

/// Largest relative error between `analytic[i]` and the central difference
/// of `eval` around `point[i]`, over the given indices.
pub fn max_relative_error<T: Element>(
    analytic: &[T],
    point: &[T],
    indices: &[usize],
    eps: f64,
    mut eval: impl FnMut(&[T]) -> Result<f64>,
) -> Result<f64> {
    check_eps(eps)?;
    let mut worst = 0.0f64;
    let mut probe = point.to_vec();
    for &i in indices {
        let orig = probe[i];
        probe[i] = T::from_f64(orig.to_f64() + eps);
        let plus = eval(&probe)?;
        probe[i] = T::from_f64(orig.to_f64() - eps);
        let minus = eval(&probe)?;
        probe[i] = orig;
        let numeric = (plus - minus) / (2.0 * eps);
        let err = relative_error(analytic[i].to_f64(), numeric);
        if err.is_nan() {
            return Ok(f64::NAN);
        }
        worst = worst.max(err);
    }
    Ok(worst)
}

/// Derivative estimate from Richardson extrapolation of central differences
/// (Ridders). Steps shrink geometrically from `h_max` down to `h_min`;
/// `diff(h)` returns the central difference at step `h`, or `None` when the
/// step is unusable. Leading unusable steps are skipped and the tableau ends
/// at the first later one. Returns the estimate and its error bound, or
/// `None` when no step was usable.
pub fn ridders(h_max: f64, h_min: f64, mut diff: impl FnMut(f64) -> Result<Option<f64>>) -> Result<Option<(f64, f64)>> {
    const SHRINK: f64 = 1.4;
    const SAFE: f64 = 2.0;
    let c2 = SHRINK * SHRINK;
    let mut h = h_max;
    let mut prev: Vec<f64> = Vec::new();
    let mut best: Option<(f64, f64)> = None;
    while h >= h_min {
        let Some(d) = diff(h)? else {
            if prev.is_empty() {
                h /= SHRINK;
                continue;
            }
            break;
        };
        if !d.is_finite() {
            return Ok(Some((f64::NAN, f64::NAN)));
        }
        let mut row = vec![d];
        let mut fac = c2;
        for j in 1..=prev.len() {
            let v = (row[j - 1] * fac - prev[j - 1]) / (fac - 1.0);
            fac *= c2;
            let err = (v - row[j - 1]).abs().max((v - prev[j - 1]).abs());
            if best.is_none_or(|(_, e)| err <= e) {
                best = Some((v, err));
            }
            row.push(v);
        }
        if best.is_none() {
            best = Some((d, f64::INFINITY));
        }
        if let (Some(&last), Some(&before)) = (row.last(), prev.last()) {
            if (last - before).abs() >= SAFE * best.map_or(f64::INFINITY, |b| b.1) {
                break;
            }
        }
        prev = row;
        h /= SHRINK;
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_is_exact() {
        let x = Tensor::<f64>::from_vec([1, 2, 2, 1], vec![0.1, -0.4, 0.9, 2.0]).unwrap();
        let err = finite_diff_check(|g, x| Ok(g.sum(x)), &x, 1e-4).unwrap();
        assert!(err < 1e-9, "{err}");
    }

    #[test]
    fn rejects_out_of_range_step() {
        let x = Tensor::<f64>::scalar(1.0);
        assert!(finite_diff_check(|g, x| Ok(g.sum(x)), &x, 0.1).is_err());
    }

    #[test]
    fn ridders_is_accurate_and_skips_unusable_steps() {
        let x = 0.7f64;
        let central = |h: f64| Ok(Some(((x + h).sin() - (x - h).sin()) / (2.0 * h)));
        let (d, err) = ridders(1e-1, 1e-6, central).unwrap().unwrap();
        assert!((d - x.cos()).abs() < 1e-12, "{d}");
        assert!(err < 1e-10);

        let gated = |h: f64| Ok((h < 1e-2).then(|| ((x + h).exp() - (x - h).exp()) / (2.0 * h)));
        let (d, _) = ridders(1e-1, 1e-6, gated).unwrap().unwrap();
        assert!((d - x.exp()).abs() < 1e-10, "{d}");

        assert!(ridders(1e-1, 1e-6, |_| Ok(None)).unwrap().is_none());
    }
}
