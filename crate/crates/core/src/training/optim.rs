//! First-order optimizers over named parameter tensors.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::tensor::{Element, Tensor};

/// Per-parameter accumulators.
#[derive(Clone, Debug, PartialEq)]
pub enum OptimState<T: Element = f32> {
    Sgd {
        velocity: BTreeMap<String, Vec<T>>,
    },
    Adam {
        m: BTreeMap<String, Vec<T>>,
        v: BTreeMap<String, Vec<T>>,
        step: u64,
    },
}

impl<T: Element> OptimState<T> {
    pub fn sgd() -> Self {
        OptimState::Sgd {
            velocity: BTreeMap::new(),
        }
    }

    pub fn adam() -> Self {
        OptimState::Adam {
            m: BTreeMap::new(),
            v: BTreeMap::new(),
            step: 0,
        }
    }
}

fn grad_for<'a, T: Element>(
    grads: &'a BTreeMap<String, Tensor<T>>,
    name: &str,
    param: &Tensor<T>,
) -> Result<&'a Tensor<T>> {
    let g = grads.get(name).ok_or_else(|| Error::MissingGradient(name.to_owned()))?;
    if g.shape() != param.shape() {
        return Err(Error::InvalidShape {
            op: "optimizer",
            msg: format!("gradient of `{name}` is {} but the parameter is {}", g.shape(), param.shape()),
        });
    }
    Ok(g)
}

fn check_all<T: Element>(params: &ModelParams<T>, names: &[String], grads: &BTreeMap<String, Tensor<T>>) -> Result<()> {
    for name in names {
        let p = params.get(name).ok_or_else(|| Error::UnknownParameter(name.clone()))?;
        grad_for(grads, name, p)?;
    }
    Ok(())
}

/// `v ← momentum·v + g; p ← p − lr·v` for each name in `names`.
///
/// Every name is validated before any parameter changes.
pub fn sgd_step<T: Element>(
    params: &mut ModelParams<T>,
    names: &[String],
    grads: &BTreeMap<String, Tensor<T>>,
    state: &mut OptimState<T>,
    lr: f64,
    momentum: f64,
) -> Result<()> {
    let OptimState::Sgd { velocity } = state else {
        return Err(Error::InvalidArgument("sgd_step needs SGD state".into()));
    };
    check_all(params, names, grads)?;
    let (lr, mu) = (T::from_f64(lr), T::from_f64(momentum));
    for name in names {
        let g = &grads[name];
        let p = params.get_mut(name).expect("checked");
        let vel = velocity.entry(name.clone()).or_insert_with(|| vec![T::ZERO; g.len()]);
        for ((pi, vi), &gi) in p.data_mut().iter_mut().zip(vel.iter_mut()).zip(g.data()) {
            *vi = mu * *vi + gi;
            *pi -= lr * *vi;
        }
    }
    Ok(())
}

/// Bias-corrected Adam step for each name in `names`.
#[allow(clippy::too_many_arguments)]
pub fn adam_step<T: Element>(
    params: &mut ModelParams<T>,
    names: &[String],
    grads: &BTreeMap<String, Tensor<T>>,
    state: &mut OptimState<T>,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
) -> Result<()> {
    let OptimState::Adam { m, v, step } = state else {
        return Err(Error::InvalidArgument("adam_step needs Adam state".into()));
    };
    check_all(params, names, grads)?;
    *step += 1;
    let t = *step as i32;
    let c1 = T::from_f64(1.0 - beta1.powi(t));
    let c2 = T::from_f64(1.0 - beta2.powi(t));
    let (b1, b2) = (T::from_f64(beta1), T::from_f64(beta2));
    let (lr, eps) = (T::from_f64(lr), T::from_f64(eps));
    for name in names {
        let g = &grads[name];
        let p = params.get_mut(name).expect("checked");
        let mi = m.entry(name.clone()).or_insert_with(|| vec![T::ZERO; g.len()]);
        let vi = v.entry(name.clone()).or_insert_with(|| vec![T::ZERO; g.len()]);
        for (((pk, mk), vk), &gk) in p.data_mut().iter_mut().zip(mi.iter_mut()).zip(vi.iter_mut()).zip(g.data()) {
            *mk = b1 * *mk + (T::ONE - b1) * gk;
            *vk = b2 * *vk + (T::ONE - b2) * gk * gk;
            let m_hat = *mk / c1;
            let v_hat = *vk / c2;
            *pk -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

/// `lr0 · drop^⌊epoch / every⌋`; `every == 0` disables decay.
pub fn lr_schedule(epoch: usize, lr0: f64, drop: f64, every: usize) -> f64 {
    if every == 0 {
        return lr0;
    }
    lr0 * drop.powi((epoch / every) as i32)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one(v: f64) -> (ModelParams<f64>, Vec<String>) {
        let mut p = ModelParams::new();
        p.insert("w", Tensor::from_vec(vec![1], vec![v]).unwrap());
        (p, vec!["w".to_owned()])
    }

    fn grads(v: f64) -> BTreeMap<String, Tensor<f64>> {
        BTreeMap::from([("w".to_owned(), Tensor::from_vec(vec![1], vec![v]).unwrap())])
    }

    fn value(p: &ModelParams<f64>) -> f64 {
        p.get("w").unwrap().data()[0]
    }

    #[test]
    fn sgd_examples() {
        let (mut p, names) = one(3.0);
        let mut s = OptimState::sgd();
        sgd_step(&mut p, &names, &grads(1.0), &mut s, 1.0, 0.0).unwrap();
        assert_eq!(value(&p), 2.0);

        let (mut p, names) = one(0.0);
        let mut s = OptimState::sgd();
        for _ in 0..2 {
            sgd_step(&mut p, &names, &grads(1.0), &mut s, 0.1, 0.9).unwrap();
        }
        // 0.1·1 + 0.1·(0.9 + 1)
        assert!((value(&p) + 0.29).abs() < 1e-15);

        let (mut p, names) = one(0.5);
        sgd_step(&mut p, &names, &grads(0.0), &mut OptimState::sgd(), 0.1, 0.9).unwrap();
        assert_eq!(value(&p), 0.5);
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        for g in [1e-3, -0.4, 25.0] {
            let (mut p, names) = one(1.0);
            let mut s = OptimState::adam();
            adam_step(&mut p, &names, &grads(g), &mut s, 3e-4, 0.5, 0.999, 1e-8).unwrap();
            assert!(((1.0 - value(&p)).abs() - 3e-4).abs() < 1e-8, "{g}");
        }
    }

    #[test]
    fn adam_two_step_recursion() {
        let (lr, b1, b2, eps, g) = (1e-2, 0.5, 0.999, 1e-8, 0.3);
        let (mut p, names) = one(0.0);
        let mut s = OptimState::adam();
        for _ in 0..2 {
            adam_step(&mut p, &names, &grads(g), &mut s, lr, b1, b2, eps).unwrap();
        }
        let mut want = 0.0;
        let (mut m, mut v) = (0.0, 0.0);
        for t in 1..=2 {
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mh = m / (1.0 - f64::powi(b1, t));
            let vh = v / (1.0 - f64::powi(b2, t));
            want -= lr * mh / (vh.sqrt() + eps);
        }
        assert!((value(&p) - want).abs() < 1e-12);
    }

    #[test]
    fn zero_gradient_leaves_adam_params() {
        let (mut p, names) = one(0.7);
        adam_step(&mut p, &names, &grads(0.0), &mut OptimState::adam(), 1e-3, 0.5, 0.999, 1e-8).unwrap();
        assert_eq!(value(&p), 0.7);
    }

    #[test]
    fn missing_gradient_is_reported_without_mutation() {
        let (mut p, _) = one(1.0);
        p.insert("v", Tensor::from_vec(vec![1], vec![2.0]).unwrap());
        let names = vec!["w".to_owned(), "v".to_owned()];
        let err = sgd_step(&mut p, &names, &grads(1.0), &mut OptimState::sgd(), 1.0, 0.0).unwrap_err();
        assert!(matches!(err, Error::MissingGradient(ref n) if n == "v"));
        assert_eq!(value(&p), 1.0);
    }

    #[test]
    fn schedule_closed_form() {
        assert_eq!(lr_schedule(0, 1e-2, 0.5, 8), 1e-2);
        assert_eq!(lr_schedule(8, 1e-2, 0.5, 8), 5e-3);
        assert_eq!(lr_schedule(24, 1e-2, 0.5, 8), 1.25e-3);
        for e in 0..=100 {
            let mut want = 1e-2;
            for _ in 0..e / 8 {
                want *= 0.5;
            }
            assert_eq!(lr_schedule(e, 1e-2, 0.5, 8), want);
        }
        assert_eq!(lr_schedule(40, 3e-4, 0.5, 0), 3e-4);
    }
}
