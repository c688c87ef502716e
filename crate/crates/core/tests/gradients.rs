//! Every analytic gradient against central finite differences on random
//! small instances.

mod common;

use common::{fd_grad, random_batch, rel_err, small_mlp};
use meco_core::noise::FittedGaussian;
use meco_core::objectives::{ence_loss_and_grad, nce_loss_and_grad, score_matching_loss_and_grad, NceParams};
use meco_core::optim::{meco_estimators, MecoState};
use meco_core::special::log_mean_exp;
use meco_core::{GaussianMeanModel, NoiseDistribution, RngStream, UnnormalizedModel};

const H: f64 = 1e-5;
const TOL: f64 = 1e-4;
const INSTANCES: u64 = 100;

#[test]
fn mlp_parameter_gradient() {
    for i in 0..INSTANCES {
        let (m, th) = small_mlp(i, 2);
        let mut rng = RngStream::new(i, 1);
        let xs = random_batch(&mut rng, 3, 2, 1.5);
        let w: Vec<f64> = (0..3).map(|_| rng.normal()).collect();
        let g = m.weighted_grad_theta(&th, &xs, &w);
        let fd = fd_grad(th.values(), H, |v| common::log_unnorm_sum(&m, &th.with_values(v.to_vec()), &xs, &w));
        assert!(rel_err(&g, &fd, 1e-6) < TOL, "instance {i}: {}", rel_err(&g, &fd, 1e-6));
    }
}

#[test]
fn mlp_input_gradient() {
    for i in 0..INSTANCES {
        let (m, th) = small_mlp(i, 3);
        let mut rng = RngStream::new(i, 2);
        let x = random_batch(&mut rng, 1, 3, 2.0);
        let g = m.grad_x(&th, &x);
        let fd = fd_grad(x.data(), H, |v| m.log_unnorm_point(&th, v));
        assert!(rel_err(g.data(), &fd, 1e-6) < TOL, "instance {i}");
    }
}

#[test]
fn gaussian_model_gradients() {
    for i in 0..INSTANCES {
        let d = 1 + (i % 3) as usize;
        let m = GaussianMeanModel::new(d);
        let mut rng = RngStream::new(i, 3);
        let th = m.params(&rng.normal_batch(1, d).into_data());
        let x = random_batch(&mut rng, 1, d, 3.0);
        let gt = m.grad_theta_point(&th, x.data());
        let fd = fd_grad(th.values(), H, |v| m.log_unnorm_point(&th.with_values(v.to_vec()), x.data()));
        assert!(rel_err(&gt, &fd, 1e-6) < TOL);
        let gx = m.grad_x(&th, &x);
        let fd = fd_grad(x.data(), H, |v| m.log_unnorm_point(&th, v));
        assert!(rel_err(gx.data(), &fd, 1e-6) < TOL);
    }
}

/// With `γ = β = 1` the MECO direction is the exact gradient of the batch
/// objective `−mean log p₀(data) + log mean(p₀/q)(noise)`.
#[test]
fn meco_fresh_direction() {
    let q = FittedGaussian::new(vec![0.2, -0.1], vec![1.5, 0.3, 0.3, 1.0]).unwrap();
    for i in 0..INSTANCES {
        let (m, th) = small_mlp(i, 2);
        let mut rng = RngStream::new(i, 4);
        let data = random_batch(&mut rng, 4, 2, 1.0);
        let noise = q.sample(&mut rng, 5);
        let lq = q.log_density_batch(&noise);
        let mut st = MecoState::fresh(th.len());
        meco_estimators(&mut st, &m, &th, &data, &noise, &lq, 0.1, 0.9, f64::NEG_INFINITY).unwrap();
        let objective = |v: &[f64]| {
            let t = th.with_values(v.to_vec());
            let lp_d = m.log_unnorm(&t, &data);
            let lp_n = m.log_unnorm(&t, &noise);
            let lr: Vec<f64> = lp_n.iter().zip(&lq).map(|(a, b)| a - b).collect();
            -lp_d.iter().sum::<f64>() / 4.0 + log_mean_exp(&lr)
        };
        let fd = fd_grad(th.values(), H, objective);
        assert!(rel_err(&st.v, &fd, 1e-6) < TOL, "instance {i}: {}", rel_err(&st.v, &fd, 1e-6));
        assert!(
            (st.log_u
                - log_mean_exp(&m.log_unnorm(&th, &noise).iter().zip(&lq).map(|(a, b)| a - b).collect::<Vec<_>>()))
            .abs()
                < 1e-12
        );
    }
}

fn nce_family_check(exponential: bool) {
    let q = FittedGaussian::isotropic(vec![0.0, 0.0], 2.0).unwrap();
    for i in 0..INSTANCES {
        let (m, th) = small_mlp(i, 2);
        let mut rng = RngStream::new(i, 5);
        let data = random_batch(&mut rng, 4, 2, 1.0);
        let noise = q.sample(&mut rng, 6);
        let alpha = rng.normal();
        let eval = |t: &meco_core::ParamVector, a: f64| {
            let tau = NceParams { theta: t.clone(), alpha: a };
            if exponential {
                ence_loss_and_grad(&m, &tau, &q, &data, &noise).unwrap()
            } else {
                nce_loss_and_grad(&m, &tau, &q, &data, &noise).unwrap()
            }
        };
        let val = eval(&th, alpha);
        assert_eq!(val.clip_events, 0);
        let mut full = th.values().to_vec();
        full.push(alpha);
        let fd = fd_grad(&full, H, |v| {
            let (t, a) = v.split_at(v.len() - 1);
            eval(&th.with_values(t.to_vec()), a[0]).loss
        });
        let mut g = val.grad_theta.clone();
        g.push(val.grad_alpha);
        assert!(rel_err(&g, &fd, 1e-6) < TOL, "instance {i}: {}", rel_err(&g, &fd, 1e-6));
    }
}

#[test]
fn nce_gradient() {
    nce_family_check(false);
}

#[test]
fn ence_gradient() {
    nce_family_check(true);
}

#[test]
fn score_matching_gradient() {
    for i in 0..INSTANCES {
        let (m, th) = small_mlp(i, 2);
        let mut rng = RngStream::new(i, 6);
        let data = random_batch(&mut rng, 3, 2, 1.0);
        let val = score_matching_loss_and_grad(&m, &th, &data).unwrap();
        let fd = fd_grad(th.values(), H, |v| {
            score_matching_loss_and_grad(&m, &th.with_values(v.to_vec()), &data).unwrap().loss
        });
        assert!(rel_err(&val.grad_theta, &fd, 1e-6) < TOL, "instance {i}: {}", rel_err(&val.grad_theta, &fd, 1e-6));
    }
}

/// Gaussian mean model: `∇ₓ log p₀ = θ − x`, trace `−d`, so the loss is
/// `mean ½‖θ − x‖² − d`.
#[test]
fn score_matching_gaussian_closed_form() {
    for d in 1..=4 {
        let m = GaussianMeanModel::new(d);
        let mut rng = RngStream::new(d as u64, 7);
        let th = m.params(&rng.normal_batch(1, d).into_data());
        let xs = random_batch(&mut rng, 5, d, 2.0);
        let want = xs
            .iter_rows()
            .map(|x| 0.5 * x.iter().zip(th.values()).map(|(a, t)| (t - a) * (t - a)).sum::<f64>() - d as f64)
            .sum::<f64>()
            / 5.0;
        let got = score_matching_loss_and_grad(&m, &th, &xs).unwrap();
        assert!((got.loss - want).abs() < 1e-12);
    }
}
