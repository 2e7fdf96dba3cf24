//! Adaptive-moment optimization and finite-difference gradient checks.

use super::params::ParamSet;
use crate::error::{Error, Result};
use crate::real::Real;
use std::collections::BTreeMap;

/// Adam with bias-corrected first and second moments,
/// `β = (0.9, 0.999)`, `ε = 1e-8` by default.
pub struct Adam<T: Real> {
    lr: T,
    beta1: T,
    beta2: T,
    eps: T,
    steps: u64,
    moment1: BTreeMap<String, Vec<T>>,
    moment2: BTreeMap<String, Vec<T>>,
}

impl<T: Real> Adam<T> {
    pub fn new(lr: f64) -> Self {
        Adam::with_config(lr, 0.9, 0.999, 1e-8)
    }

    pub fn with_config(lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Adam {
            lr: T::c(lr),
            beta1: T::c(beta1),
            beta2: T::c(beta2),
            eps: T::c(eps),
            steps: 0,
            moment1: BTreeMap::new(),
            moment2: BTreeMap::new(),
        }
    }

    /// Change the learning rate mid-run (used by two-phase schedules).
    pub fn set_lr(&mut self, lr: f64) {
        self.lr = T::c(lr);
    }

    pub fn lr(&self) -> f64 {
        self.lr.f64()
    }

    /// Apply one update to every parameter, treating a missing gradient as
    /// zero (moments still decay). Gradients are left in place; pair with
    /// [`ParamSet::zero_grads`].
    pub fn step(&mut self, params: &ParamSet<T>) {
        self.steps += 1;
        let t = self.steps as i32;
        let bc1 = T::one() - self.beta1.powi(t);
        let bc2 = T::one() - self.beta2.powi(t);
        for (name, tensor) in params.iter() {
            let ne = tensor.numel();
            let m = self.moment1.entry(name.clone()).or_insert_with(|| vec![T::zero(); ne]);
            let v = self.moment2.entry(name.clone()).or_insert_with(|| vec![T::zero(); ne]);
            assert_eq!(m.len(), ne, "parameter {name} changed size mid-training");
            let grad = tensor.grad_vec();
            let zero_grad;
            let g: &[T] = match &grad {
                Some(g) => g,
                None => {
                    zero_grad = vec![T::zero(); ne];
                    &zero_grad
                }
            };
            let mut data = tensor.data_vec();
            for i in 0..ne {
                m[i] = self.beta1 * m[i] + (T::one() - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (T::one() - self.beta2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                data[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
            tensor.set_data(&data);
        }
    }
}

/// Compare reverse-mode gradients against central differences
/// `(f(θ+eps) − f(θ−eps)) / (2 eps)` for every scalar in `params`, and
/// return the maximum relative error
/// `|a − n| / max(|a|, |n|, 1e-3)` over all checked entries.
///
/// `f` must rebuild the loss graph from the current parameter values on
/// each call and return a scalar tensor.
pub fn grad_check<T: Real>(
    params: &ParamSet<T>,
    mut f: impl FnMut() -> Result<super::tensor::Tensor<T>>,
    eps: f64,
) -> Result<f64> {
    if eps <= 0.0 {
        return Err(Error::invalid(format!("grad_check eps must be positive, got {eps}")));
    }
    let step = T::c(eps);
    params.zero_grads();
    let loss = f()?;
    if loss.numel() != 1 {
        return Err(Error::dim("grad_check loss", 1, loss.numel()));
    }
    if !loss.item().is_finite() {
        return Err(Error::NonFinite("grad_check loss".into()));
    }
    loss.backward();
    let analytic: BTreeMap<String, Vec<T>> = params
        .iter()
        .map(|(name, t)| (name.clone(), t.grad_vec().unwrap_or_else(|| vec![T::zero(); t.numel()])))
        .collect();

    let mut max_rel = 0.0f64;
    for (name, tensor) in params.iter() {
        let base = tensor.data_vec();
        for i in 0..base.len() {
            let mut probe = base.clone();
            probe[i] = base[i] + step;
            tensor.set_data(&probe);
            let plus = f()?.item().f64();
            probe[i] = base[i] - step;
            tensor.set_data(&probe);
            let minus = f()?.item().f64();
            tensor.set_data(&base);
            if !plus.is_finite() || !minus.is_finite() {
                return Err(Error::NonFinite(format!("grad_check probe at {name}[{i}]")));
            }
            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic[name][i].f64();
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-3);
            if rel > max_rel {
                max_rel = rel;
            }
        }
    }
    Ok(max_rel)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::tensor::{exclusive_prefix_sum_matrix, Tensor};
    use crate::rng::Prng;
    use approx::assert_relative_eq;

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut params = ParamSet::new();
        let w = params.register("w", Tensor::param(vec![1.0, -2.0], &[2]));
        let mut opt = Adam::new(0.1);
        opt.step(&params);
        opt.step(&params);
        assert_eq!(w.data_vec(), vec![1.0, -2.0]);
    }

    #[test]
    fn first_step_moves_by_lr_sign() {
        // With bias correction, step 1 gives m_hat = g, v_hat = g^2, so the
        // update is -lr * g / (|g| + eps) ≈ -lr * sign(g).
        let mut params = ParamSet::new();
        let w = params.register("w", Tensor::param(vec![3.0, -1.0], &[2]));
        let loss = w.mul(&Tensor::from_vec(vec![2.0, -4.0], &[2])).sum_all();
        loss.backward();
        let mut opt = Adam::new(0.01);
        opt.step(&params);
        let d = w.data_vec();
        assert_relative_eq!(d[0], 3.0 - 0.01, epsilon = 1e-6);
        assert_relative_eq!(d[1], -1.0 + 0.01, epsilon = 1e-6);
    }

    #[test]
    fn adam_is_deterministic() {
        let run = || {
            let mut params = ParamSet::new();
            let w = params.register("w", Tensor::param(vec![0.5, 0.25, -0.75], &[3]));
            let mut opt = Adam::new(0.05);
            for _ in 0..10 {
                params.zero_grads();
                let loss = w.mul(&w).sum_all();
                loss.backward();
                opt.step(&params);
            }
            w.data_vec()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn adam_descends_a_quadratic() {
        let mut params = ParamSet::new();
        let w = params.register("w", Tensor::param(vec![4.0, -3.0], &[2]));
        let mut opt = Adam::new(0.2);
        let mut last = f64::INFINITY;
        for _ in 0..200 {
            params.zero_grads();
            let loss = w.mul(&w).sum_all();
            loss.backward();
            opt.step(&params);
            last = w.mul(&w).sum_all().item();
        }
        assert!(last < 1e-2, "quadratic not minimized: {last}");
    }

    #[test]
    fn grad_check_quadratic_tight() {
        let mut params = ParamSet::new();
        let x = params.register("x", Tensor::param(vec![0.3, -1.2, 2.1], &[3]));
        let rel = grad_check(&params, || Ok(x.mul(&x).sum_all()), 1e-5).unwrap();
        assert!(rel < 1e-8, "x^T x gradient should be near-exact, rel = {rel}");
    }

    #[test]
    fn grad_check_rejects_zero_eps() {
        let mut params = ParamSet::new();
        let x = params.register("x", Tensor::param(vec![1.0], &[1]));
        let err = grad_check(&params, || Ok(x.sum_all()), 0.0).unwrap_err();
        assert!(matches!(err, Error::InvalidArgument(_)), "{err}");
    }

    /// Every differentiable op, composed into one scalar, checked against
    /// central differences on randomized small shapes.
    #[test]
    fn grad_check_full_op_zoo() {
        for seed in 0..5u64 {
            let mut rng = Prng::seed_from_u64(seed);
            let (m, k, n) = (2 + (seed as usize % 3), 3, 4);
            let mut params = ParamSet::new();
            let a = params.register(
                "a",
                Tensor::param((0..m * k).map(|_| rng.normal_f64() * 0.5).collect(), &[m, k]),
            );
            let b = params.register(
                "b",
                Tensor::param((0..k * n).map(|_| rng.normal_f64() * 0.5).collect(), &[k, n]),
            );
            let gamma = params.register("gamma", Tensor::param(vec![1.0; n], &[n]));
            let beta = params.register("beta", Tensor::param(vec![0.0; n], &[n]));
            let bias = params.register("bias", Tensor::param(vec![0.1; n], &[n]));
            let rel = grad_check(
                &params,
                || {
                    let h = a.matmul(&b).add_bias(&bias);
                    let hn = h.layer_norm(&gamma, &beta, 1e-5);
                    let s = hn.softmax(1);
                    let t = hn.tanh().mul(&s).add(&hn.scale(0.5));
                    // e stays in (0, ~2), keeping the abs/relu kinks below
                    // well away from every probe point.
                    let e = t.exp().add_scalar(1.0).ln().sqrt();
                    let branches = Tensor::cat(
                        &[
                            &e.add_scalar(3.0).abs(),
                            &e.add_scalar(-9.0).abs(),
                            &e.add_scalar(0.5).relu(),
                            &e.add_scalar(-9.0).relu(),
                        ],
                        1,
                    );
                    let r = branches.sin().add(&branches.cos().scale(0.7));
                    let w = 4 * n;
                    let nr = r.narrow(1, 1, w - 1);
                    let cc = Tensor::cat(&[&nr, &r.narrow(1, 0, 1)], 1);
                    let tr = cc.transpose().reshape(&[m * w]).reshape(&[w, m]);
                    let rows = tr.sum_axis(0);
                    Ok(rows.mul(&rows).sum_all().add(&tr.mean_all()).sub(&tr.sum_axis(1).sum_all().scale(0.3)))
                },
                1e-5,
            )
            .unwrap();
            assert!(rel < 1e-5, "op zoo gradient mismatch: rel = {rel} at seed {seed}");
        }
    }

    #[test]
    fn grad_check_prefix_sum_and_clamp() {
        let mut rng = Prng::seed_from_u64(17);
        let mut params = ParamSet::new();
        let x = params.register(
            "x",
            Tensor::param((0..6).map(|_| rng.normal_f64()).collect(), &[6, 1]),
        );
        let l = exclusive_prefix_sum_matrix::<f64>(6);
        let rel = grad_check(
            &params,
            || {
                let psum = l.matmul(&x);
                // Clamp bounds far from the data so the kink never sits at
                // the probe point.
                Ok(psum.clamp(-50.0, 50.0).sin().mul(&psum.cos()).sum_all())
            },
            1e-6,
        )
        .unwrap();
        assert!(rel < 1e-6, "prefix-sum gradient mismatch: rel = {rel}");
    }
}
