//! Denoising networks with hand-written forward and backward passes,
//! Adam, plateau LR scheduling, and best-validation checkpointing.

pub mod adam;
pub mod layer;
pub mod net;
pub mod train;

pub use adam::AdamState;
pub use layer::{Activation, Dense, DenseGrad};
pub use net::{
    kl_grads, kl_loss, mask_input, mse_grad, mse_loss, reparameterize, KlForm, MaeNet, NetParams,
    VaeNet, Variant, LATENT_DIM, MASK_COUNT,
};
pub use train::{fit, CheckpointRecord, EpochLog, TrainConfig, TrainOutcome};

#[cfg(test)]
#[allow(clippy::needless_range_loop)] // parameters are perturbed in place
mod grad_tests {
    //! Finite-difference checks of the full backward passes.

    use ndarray::Array2;
    use rand::Rng as _;

    use super::layer::{Activation, Dense};
    use super::net::*;
    use crate::rng::stream_rng;

    /// Relative error with an absolute floor for near-zero entries.
    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-4)
    }

    fn small_mae(rng: &mut impl rand::Rng) -> MaeNet {
        let dims = [(5, 7), (3, 5), (3, 3), (5, 3), (6, 5)];
        let layers = dims
            .iter()
            .enumerate()
            .map(|(i, &(o, inp))| {
                let act = if i == dims.len() - 1 { Activation::Identity } else { Activation::Relu };
                Dense::init(o, inp, act, rng)
            })
            .collect();
        MaeNet { layers }
    }

    fn small_vae(rng: &mut impl rand::Rng) -> VaeNet {
        VaeNet {
            enc1: Dense::init(5, 7, Activation::Relu, rng),
            enc2: Dense::init(4, 5, Activation::Relu, rng),
            mu: Dense::init(3, 4, Activation::Identity, rng),
            logsigma: Dense::init(3, 4, Activation::Identity, rng),
            dec1: Dense::init(5, 3, Activation::Relu, rng),
            dec2: Dense::init(6, 5, Activation::Identity, rng),
        }
    }

    const FD_EPS: f64 = 1e-5;
    /// A ReLU pre-activation this close to zero could cross the kink
    /// under a +-FD_EPS perturbation, making the central difference
    /// meaningless there; such instances are resampled.
    const KINK_BAND: f64 = 1e-3;

    fn mae_min_abs_pre(net: &MaeNet, x: &Array2<f64>) -> f64 {
        let mut h = x.clone();
        let mut min_abs = f64::INFINITY;
        for layer in &net.layers {
            let (out, cache) = layer.forward(&h).unwrap();
            if layer.act == Activation::Relu {
                for &p in cache.pre.iter() {
                    min_abs = min_abs.min(p.abs());
                }
            }
            h = out;
        }
        min_abs
    }

    fn vae_min_abs_pre(net: &VaeNet, x: &Array2<f64>, eps: &Array2<f64>) -> f64 {
        let mut min_abs = f64::INFINITY;
        let mut track = |layer: &Dense, input: &Array2<f64>| -> Array2<f64> {
            let (out, cache) = layer.forward(input).unwrap();
            if layer.act == Activation::Relu {
                for &p in cache.pre.iter() {
                    min_abs = min_abs.min(p.abs());
                }
            }
            out
        };
        let h1 = track(&net.enc1, x);
        let h2 = track(&net.enc2, &h1);
        let (mu, _) = net.mu.forward(&h2).unwrap();
        let (logsig, _) = net.logsigma.forward(&h2).unwrap();
        let z = &mu + &(&logsig.mapv(f64::exp) * eps);
        let hd = track(&net.dec1, &z);
        let _ = track(&net.dec2, &hd);
        min_abs
    }

    #[test]
    fn mae_gradients_match_central_differences() {
        let mut max_err = 0.0f64;
        for instance in 0..20 {
            let (mut net, x, target) = (0..)
                .map(|attempt| {
                    let mut rng = stream_rng(100 + instance + attempt * 1000, "fd-mae", 0);
                    let net = small_mae(&mut rng);
                    let x = Array2::from_shape_fn((3, 7), |_| rng.gen::<f64>());
                    let target = Array2::from_shape_fn((3, 6), |_| rng.gen::<f64>());
                    (net, x, target)
                })
                .find(|(net, x, _)| mae_min_abs_pre(net, x) > KINK_BAND)
                .unwrap();

            let step = net.forward(&x).unwrap();
            let d_out = mse_grad(&step.output, &target);
            let grads = net.backward(&step, &d_out);

            for li in 0..net.layers.len() {
                let (rows, cols) = (net.layers[li].out_dim(), net.layers[li].in_dim());
                for r in 0..rows {
                    for c in 0..cols {
                        let orig = net.layers[li].w[(r, c)];
                        net.layers[li].w[(r, c)] = orig + FD_EPS;
                        let up = mse_loss(&net.forward(&x).unwrap().output, &target);
                        net.layers[li].w[(r, c)] = orig - FD_EPS;
                        let dn = mse_loss(&net.forward(&x).unwrap().output, &target);
                        net.layers[li].w[(r, c)] = orig;
                        let fd = (up - dn) / (2.0 * FD_EPS);
                        max_err = max_err.max(rel_err(grads[li].w[(r, c)], fd));
                    }
                    let orig = net.layers[li].b[r];
                    net.layers[li].b[r] = orig + FD_EPS;
                    let up = mse_loss(&net.forward(&x).unwrap().output, &target);
                    net.layers[li].b[r] = orig - FD_EPS;
                    let dn = mse_loss(&net.forward(&x).unwrap().output, &target);
                    net.layers[li].b[r] = orig;
                    let fd = (up - dn) / (2.0 * FD_EPS);
                    max_err = max_err.max(rel_err(grads[li].b[r], fd));
                }
            }
        }
        assert!(max_err < 1e-4, "max relative error {max_err}");
    }

    #[test]
    fn vae_gradients_match_central_differences() {
        // Fixed eps so the sampled loss is a deterministic function of
        // the parameters; the gradient flows through z = mu + sigma*eps.
        let kl_w = 1.0;
        for form in [KlForm::AsPrinted, KlForm::Textbook] {
            let mut max_err = 0.0f64;
            for instance in 0..20 {
                let (mut net, x, target, eps) = (0..)
                    .map(|attempt| {
                        let mut rng = stream_rng(300 + instance + attempt * 1000, "fd-vae", 0);
                        let net = small_vae(&mut rng);
                        let x = Array2::from_shape_fn((3, 7), |_| rng.gen::<f64>());
                        let target = Array2::from_shape_fn((3, 6), |_| rng.gen::<f64>());
                        let eps = sample_standard_normal(3, 3, &mut rng);
                        (net, x, target, eps)
                    })
                    .find(|(net, x, _, eps)| vae_min_abs_pre(net, x, eps) > KINK_BAND)
                    .unwrap();

                let loss_of = |net: &VaeNet| {
                    let step = net.forward(&x, Some(eps.clone())).unwrap();
                    mse_loss(&step.output, &target)
                        + kl_w * kl_loss(&step.mu, &step.sigma, form).unwrap()
                };

                let step = net.forward(&x, Some(eps.clone())).unwrap();
                let d_out = mse_grad(&step.output, &target);
                let grads = net.backward(&step, &d_out, kl_w, form);

                for li in 0..6 {
                    let (rows, cols) = {
                        let l = &net.layers()[li];
                        (l.out_dim(), l.in_dim())
                    };
                    for r in 0..rows {
                        for c in 0..cols {
                            let orig = net.layers_mut()[li].w[(r, c)];
                            net.layers_mut()[li].w[(r, c)] = orig + FD_EPS;
                            let up = loss_of(&net);
                            net.layers_mut()[li].w[(r, c)] = orig - FD_EPS;
                            let dn = loss_of(&net);
                            net.layers_mut()[li].w[(r, c)] = orig;
                            let fd = (up - dn) / (2.0 * FD_EPS);
                            max_err = max_err.max(rel_err(grads[li].w[(r, c)], fd));
                        }
                        let orig = net.layers_mut()[li].b[r];
                        net.layers_mut()[li].b[r] = orig + FD_EPS;
                        let up = loss_of(&net);
                        net.layers_mut()[li].b[r] = orig - FD_EPS;
                        let dn = loss_of(&net);
                        net.layers_mut()[li].b[r] = orig;
                        let fd = (up - dn) / (2.0 * FD_EPS);
                        max_err = max_err.max(rel_err(grads[li].b[r], fd));
                    }
                }
            }
            assert!(max_err < 1e-4, "{form:?}: max relative error {max_err}");
        }
    }

    #[test]
    fn kl_mu_gradient_is_two_mu_over_n() {
        // As printed: dKL/dmu = 2 mu / N elementwise, checked against
        // central differences of kl_loss itself.
        let mu = Array2::from_shape_fn((4, 3), |(i, j)| 0.3 * i as f64 - 0.2 * j as f64 + 0.1);
        let sigma = Array2::from_elem((4, 3), 0.8);
        let (dmu, dsigma) = kl_grads(&mu, &sigma, KlForm::AsPrinted);
        for (&m, &g) in mu.iter().zip(dmu.iter()) {
            assert!((g - 2.0 * m / 4.0).abs() < 1e-12);
        }
        let mut mu_fd = mu.clone();
        for idx in [(0usize, 0usize), (2, 1), (3, 2)] {
            let orig = mu_fd[idx];
            mu_fd[idx] = orig + FD_EPS;
            let up = kl_loss(&mu_fd, &sigma, KlForm::AsPrinted).unwrap();
            mu_fd[idx] = orig - FD_EPS;
            let dn = kl_loss(&mu_fd, &sigma, KlForm::AsPrinted).unwrap();
            mu_fd[idx] = orig;
            let fd = (up - dn) / (2.0 * FD_EPS);
            assert!(rel_err(dmu[idx], fd) < 1e-6);
        }
        let mut sig_fd = sigma.clone();
        let orig = sig_fd[(1, 1)];
        sig_fd[(1, 1)] = orig + FD_EPS;
        let up = kl_loss(&mu, &sig_fd, KlForm::AsPrinted).unwrap();
        sig_fd[(1, 1)] = orig - FD_EPS;
        let dn = kl_loss(&mu, &sig_fd, KlForm::AsPrinted).unwrap();
        let fd = (up - dn) / (2.0 * FD_EPS);
        assert!(rel_err(dsigma[(1, 1)], fd) < 1e-6);
    }
}
