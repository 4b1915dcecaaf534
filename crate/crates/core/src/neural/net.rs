//! The two denoising architectures and their losses.
//!
//! Masked autoencoder: in -> 32 -> 16 -> 16 -> 32 -> 52, ReLU except the
//! identity output. Variational autoencoder: two encoding layers to 16,
//! split mu / log-sigma heads of width 16, and a 16 -> 32 -> 52 decoder.
//! The input is 52 scaled sensitivities, optionally followed by 52
//! categorical p-value codes (104 total).

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::VfError;
use crate::grid::FIELD_SIZE;

use super::layer::{Activation, Dense, DenseCache, DenseGrad};

pub const HIDDEN_DIM: usize = 32;
pub const LATENT_DIM: usize = 16;
pub const OUTPUT_DIM: usize = FIELD_SIZE;
/// Sensitivity-block locations zeroed per masked training example.
pub const MASK_COUNT: usize = 10;

/// Which network and whether the input carries the p-value block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    Mae,
    MaeP,
    Vae,
    VaeP,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Mae, Variant::MaeP, Variant::Vae, Variant::VaeP];

    pub fn with_pvalues(self) -> bool {
        matches!(self, Variant::MaeP | Variant::VaeP)
    }

    pub fn is_vae(self) -> bool {
        matches!(self, Variant::Vae | Variant::VaeP)
    }

    pub fn input_dim(self) -> usize {
        if self.with_pvalues() {
            2 * FIELD_SIZE
        } else {
            FIELD_SIZE
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            Variant::Mae => "mae",
            Variant::MaeP => "mae+p",
            Variant::Vae => "vae",
            Variant::VaeP => "vae+p",
        }
    }

    pub fn parse(s: &str) -> Option<Variant> {
        match s.to_ascii_lowercase().as_str() {
            "mae" => Some(Variant::Mae),
            "mae+p" | "mae_p" | "maep" => Some(Variant::MaeP),
            "vae" => Some(Variant::Vae),
            "vae+p" | "vae_p" | "vaep" => Some(Variant::VaeP),
            _ => None,
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.tag())
    }
}

// ---------------------------------------------------------------------------
// Masking
// ---------------------------------------------------------------------------

/// Zero out `mask_count` distinct positions of the 52-entry sensitivity
/// block, leaving any p-value block untouched. Returns the sorted mask
/// index set.
pub fn mask_input(features: &mut [f64], mask_count: usize, rng: &mut impl Rng) -> Vec<usize> {
    debug_assert!(features.len() >= FIELD_SIZE);
    debug_assert!(mask_count < FIELD_SIZE);
    let mut picked: Vec<usize> = Vec::with_capacity(mask_count);
    // Partial Fisher-Yates over the sensitivity block.
    let mut pool: Vec<usize> = (0..FIELD_SIZE).collect();
    for k in 0..mask_count {
        let j = rng.gen_range(k..FIELD_SIZE);
        pool.swap(k, j);
        picked.push(pool[k]);
    }
    picked.sort_unstable();
    for &i in &picked {
        features[i] = 0.0;
    }
    picked
}

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

/// Reconstruction loss: mean squared error over all 52 locations,
/// averaged over the batch.
pub fn mse_loss(pred: &Array2<f64>, target: &Array2<f64>) -> f64 {
    let diff = pred - target;
    diff.mapv(|d| d * d).sum() / (pred.nrows() * pred.ncols()) as f64
}

/// Gradient of [`mse_loss`] with respect to the prediction.
pub fn mse_grad(pred: &Array2<f64>, target: &Array2<f64>) -> Array2<f64> {
    (pred - target) * (2.0 / (pred.nrows() * pred.ncols()) as f64)
}

/// Which KL expression to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KlForm {
    /// sum(sigma^2 + mu^2 - log sigma - 1/2) / N, the form this toolkit
    /// treats as canonical.
    AsPrinted,
    /// The textbook Gaussian KL: sum((sigma^2 + mu^2 - log sigma^2 - 1) / 2) / N.
    Textbook,
}

impl KlForm {
    pub fn tag(self) -> &'static str {
        match self {
            KlForm::AsPrinted => "as_printed",
            KlForm::Textbook => "textbook",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "as_printed" => Some(KlForm::AsPrinted),
            "textbook" => Some(KlForm::Textbook),
            _ => None,
        }
    }
}

/// KL loss over a batch of latent parameters; rows are samples. N is
/// the batch size; latent dimensions are summed.
pub fn kl_loss(mu: &Array2<f64>, sigma: &Array2<f64>, form: KlForm) -> Result<f64, VfError> {
    if sigma.iter().any(|&s| s <= 0.0) {
        return Err(VfError::Data("kl_loss requires sigma > 0".into()));
    }
    let n = mu.nrows() as f64;
    let total: f64 = mu
        .iter()
        .zip(sigma.iter())
        .map(|(&m, &s)| match form {
            KlForm::AsPrinted => s * s + m * m - s.ln() - 0.5,
            KlForm::Textbook => 0.5 * (s * s + m * m - (s * s).ln() - 1.0),
        })
        .sum();
    Ok(total / n)
}

/// (dKL/dmu, dKL/dsigma), matching [`kl_loss`].
pub fn kl_grads(mu: &Array2<f64>, sigma: &Array2<f64>, form: KlForm) -> (Array2<f64>, Array2<f64>) {
    let n = mu.nrows() as f64;
    match form {
        KlForm::AsPrinted => (
            mu.mapv(|m| 2.0 * m / n),
            sigma.mapv(|s| (2.0 * s - 1.0 / s) / n),
        ),
        KlForm::Textbook => (
            mu.mapv(|m| m / n),
            sigma.mapv(|s| (s - 1.0 / s) / n),
        ),
    }
}

// ---------------------------------------------------------------------------
// Reparameterization
// ---------------------------------------------------------------------------

/// z = mu + sigma * eps with eps ~ N(0, I).
pub fn reparameterize(mu: &Array1<f64>, sigma: &Array1<f64>, rng: &mut impl Rng) -> Array1<f64> {
    let eps = sample_standard_normal(1, mu.len(), rng);
    mu + &(sigma * &eps.row(0).to_owned())
}

pub fn sample_standard_normal(rows: usize, cols: usize, rng: &mut impl Rng) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.sample(StandardNormal))
}

// ---------------------------------------------------------------------------
// Masked autoencoder
// ---------------------------------------------------------------------------

/// Layer roles in serialization order.
pub const MAE_LAYER_NAMES: [&str; 5] = ["enc1", "enc2", "bottleneck", "dec1", "dec2"];

#[derive(Debug, Clone, PartialEq)]
pub struct MaeNet {
    pub layers: Vec<Dense>,
}

pub struct MaeStep {
    pub output: Array2<f64>,
    caches: Vec<DenseCache>,
}

impl MaeNet {
    pub fn init(input_dim: usize, rng: &mut impl Rng) -> Self {
        let dims = [
            (HIDDEN_DIM, input_dim, Activation::Relu),
            (LATENT_DIM, HIDDEN_DIM, Activation::Relu),
            (LATENT_DIM, LATENT_DIM, Activation::Relu),
            (HIDDEN_DIM, LATENT_DIM, Activation::Relu),
            (OUTPUT_DIM, HIDDEN_DIM, Activation::Identity),
        ];
        MaeNet {
            layers: dims
                .into_iter()
                .map(|(o, i, a)| Dense::init(o, i, a, rng))
                .collect(),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn forward(&self, x: &Array2<f64>) -> Result<MaeStep, VfError> {
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut h = x.clone();
        for layer in &self.layers {
            let (out, cache) = layer.forward(&h)?;
            caches.push(cache);
            h = out;
        }
        Ok(MaeStep { output: h, caches })
    }

    /// Reverse-mode gradients for a loss whose output gradient is `d_out`.
    pub fn backward(&self, step: &MaeStep, d_out: &Array2<f64>) -> Vec<DenseGrad> {
        let mut grads: Vec<DenseGrad> = Vec::with_capacity(self.layers.len());
        let mut d = d_out.clone();
        for (layer, cache) in self.layers.iter().zip(step.caches.iter()).rev() {
            let (g, dx) = layer.backward(cache, &d);
            grads.push(g);
            d = dx;
        }
        grads.reverse();
        grads
    }
}

// ---------------------------------------------------------------------------
// Variational autoencoder
// ---------------------------------------------------------------------------

pub const VAE_LAYER_NAMES: [&str; 6] = ["enc1", "enc2", "mu", "logsigma", "dec1", "dec2"];

/// The sigma head emits log sigma; sigma = exp(log sigma) keeps the SD
/// strictly positive for every input.
#[derive(Debug, Clone, PartialEq)]
pub struct VaeNet {
    pub enc1: Dense,
    pub enc2: Dense,
    pub mu: Dense,
    pub logsigma: Dense,
    pub dec1: Dense,
    pub dec2: Dense,
}

pub struct VaeStep {
    pub output: Array2<f64>,
    pub mu: Array2<f64>,
    pub sigma: Array2<f64>,
    pub z: Array2<f64>,
    /// None when run in inference mode (z = mu).
    eps: Option<Array2<f64>>,
    c_enc1: DenseCache,
    c_enc2: DenseCache,
    c_mu: DenseCache,
    c_logsigma: DenseCache,
    c_dec1: DenseCache,
    c_dec2: DenseCache,
}

/// Gradients in VAE_LAYER_NAMES order.
pub type VaeGrads = Vec<DenseGrad>;

impl VaeNet {
    pub fn init(input_dim: usize, rng: &mut impl Rng) -> Self {
        VaeNet {
            enc1: Dense::init(HIDDEN_DIM, input_dim, Activation::Relu, rng),
            enc2: Dense::init(LATENT_DIM, HIDDEN_DIM, Activation::Relu, rng),
            mu: Dense::init(LATENT_DIM, LATENT_DIM, Activation::Identity, rng),
            logsigma: Dense::init(LATENT_DIM, LATENT_DIM, Activation::Identity, rng),
            dec1: Dense::init(HIDDEN_DIM, LATENT_DIM, Activation::Relu, rng),
            dec2: Dense::init(OUTPUT_DIM, HIDDEN_DIM, Activation::Identity, rng),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.enc1.in_dim()
    }

    /// Forward pass. With `eps` the latent is sampled as mu + sigma*eps;
    /// without it the pass is deterministic with z = mu (inference).
    pub fn forward(&self, x: &Array2<f64>, eps: Option<Array2<f64>>) -> Result<VaeStep, VfError> {
        let (h1, c_enc1) = self.enc1.forward(x)?;
        let (h2, c_enc2) = self.enc2.forward(&h1)?;
        let (mu, c_mu) = self.mu.forward(&h2)?;
        let (logsig, c_logsigma) = self.logsigma.forward(&h2)?;
        let sigma = logsig.mapv(f64::exp);
        let z = match &eps {
            Some(e) => &mu + &(&sigma * e),
            None => mu.clone(),
        };
        let (hd, c_dec1) = self.dec1.forward(&z)?;
        let (output, c_dec2) = self.dec2.forward(&hd)?;
        Ok(VaeStep {
            output,
            mu,
            sigma,
            z,
            eps,
            c_enc1,
            c_enc2,
            c_mu,
            c_logsigma,
            c_dec1,
            c_dec2,
        })
    }

    /// Reverse-mode gradients for reconstruction-plus-KL. `d_out` is the
    /// gradient of the reconstruction term at the output; the KL term
    /// (weighted by `kl_weight`) enters through mu and sigma directly.
    /// Through the sampling path, dz/dmu = 1 and dz/dsigma = eps.
    pub fn backward(
        &self,
        step: &VaeStep,
        d_out: &Array2<f64>,
        kl_weight: f64,
        kl_form: KlForm,
    ) -> VaeGrads {
        let (g_dec2, d_hd) = self.dec2.backward(&step.c_dec2, d_out);
        let (g_dec1, d_z) = self.dec1.backward(&step.c_dec1, &d_hd);

        let (kl_dmu, kl_dsigma) = kl_grads(&step.mu, &step.sigma, kl_form);
        let d_mu = &d_z + &kl_dmu.mapv(|v| v * kl_weight);
        let d_sigma_recon = match &step.eps {
            Some(e) => &d_z * e,
            None => Array2::zeros(d_z.raw_dim()),
        };
        let d_sigma = &d_sigma_recon + &kl_dsigma.mapv(|v| v * kl_weight);
        // sigma = exp(logsigma), so d/d(logsigma) = d/d(sigma) * sigma.
        let d_logsigma = &d_sigma * &step.sigma;

        let (g_mu, d_h2_a) = self.mu.backward(&step.c_mu, &d_mu);
        let (g_logsigma, d_h2_b) = self.logsigma.backward(&step.c_logsigma, &d_logsigma);
        let d_h2 = &d_h2_a + &d_h2_b;
        let (g_enc2, d_h1) = self.enc2.backward(&step.c_enc2, &d_h2);
        let (g_enc1, _) = self.enc1.backward(&step.c_enc1, &d_h1);

        vec![g_enc1, g_enc2, g_mu, g_logsigma, g_dec1, g_dec2]
    }

    pub fn layers(&self) -> Vec<&Dense> {
        vec![&self.enc1, &self.enc2, &self.mu, &self.logsigma, &self.dec1, &self.dec2]
    }

    pub fn layers_mut(&mut self) -> Vec<&mut Dense> {
        vec![
            &mut self.enc1,
            &mut self.enc2,
            &mut self.mu,
            &mut self.logsigma,
            &mut self.dec1,
            &mut self.dec2,
        ]
    }
}

/// Either architecture's parameters.
#[derive(Debug, Clone, PartialEq)]
#[allow(clippy::large_enum_variant)] // variants differ by one Dense header
pub enum NetParams {
    Mae(MaeNet),
    Vae(VaeNet),
}

impl NetParams {
    pub fn init(variant: Variant, rng: &mut impl Rng) -> Self {
        if variant.is_vae() {
            NetParams::Vae(VaeNet::init(variant.input_dim(), rng))
        } else {
            NetParams::Mae(MaeNet::init(variant.input_dim(), rng))
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            NetParams::Mae(n) => n.input_dim(),
            NetParams::Vae(n) => n.input_dim(),
        }
    }

    pub fn layers(&self) -> Vec<&Dense> {
        match self {
            NetParams::Mae(n) => n.layers.iter().collect(),
            NetParams::Vae(n) => n.layers(),
        }
    }

    pub fn layers_mut(&mut self) -> Vec<&mut Dense> {
        match self {
            NetParams::Mae(n) => n.layers.iter_mut().collect(),
            NetParams::Vae(n) => n.layers_mut(),
        }
    }

    pub fn layer_names(&self) -> &'static [&'static str] {
        match self {
            NetParams::Mae(_) => &MAE_LAYER_NAMES,
            NetParams::Vae(_) => &VAE_LAYER_NAMES,
        }
    }

    /// Deterministic inference pass (no masking, z = mu).
    pub fn infer(&self, x: &Array2<f64>) -> Result<Array2<f64>, VfError> {
        match self {
            NetParams::Mae(n) => Ok(n.forward(x)?.output),
            NetParams::Vae(n) => Ok(n.forward(x, None)?.output),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;
    use ndarray::array;

    #[test]
    fn mask_zeroes_exactly_ten_distinct_sensitivity_positions() {
        let mut rng = stream_rng(3, "mask", 0);
        for _ in 0..50 {
            let mut features = vec![0.7; 104];
            let idx = mask_input(&mut features, MASK_COUNT, &mut rng);
            assert_eq!(idx.len(), 10);
            assert!(idx.windows(2).all(|w| w[0] < w[1]));
            assert!(idx.iter().all(|&i| i < 52));
            let zeros = features[..52].iter().filter(|&&v| v == 0.0).count();
            assert_eq!(zeros, 10);
            assert!(features[52..].iter().all(|&v| v == 0.7));
        }
    }

    #[test]
    fn mask_count_zero_is_identity() {
        let mut rng = stream_rng(3, "mask", 1);
        let mut features = vec![0.5; 52];
        let idx = mask_input(&mut features, 0, &mut rng);
        assert!(idx.is_empty());
        assert!(features.iter().all(|&v| v == 0.5));
    }

    #[test]
    fn mask_preserves_unmasked_multiset() {
        let mut rng = stream_rng(3, "mask", 2);
        let original: Vec<f64> = (0..52).map(|i| 0.01 * (i + 1) as f64).collect();
        let mut features = original.clone();
        let idx = mask_input(&mut features, MASK_COUNT, &mut rng);
        let mut kept: Vec<f64> = (0..52).filter(|i| !idx.contains(i)).map(|i| features[i]).collect();
        let mut expect: Vec<f64> =
            (0..52).filter(|i| !idx.contains(i)).map(|i| original[i]).collect();
        kept.sort_by(|a, b| a.partial_cmp(b).unwrap());
        expect.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(kept, expect);
        assert_eq!(kept.len(), 42);
    }

    #[test]
    fn mse_examples() {
        let a = Array2::from_elem((1, 52), 0.3);
        assert_eq!(mse_loss(&a, &a), 0.0);
        let b = a.mapv(|v| v + 0.1);
        assert!((mse_loss(&b, &a) - 0.01).abs() < 1e-12);
        // Brute-force oracle on a random pair.
        let mut rng = stream_rng(8, "mse", 0);
        let p = Array2::from_shape_fn((1, 52), |_| rng.gen::<f64>());
        let t = Array2::from_shape_fn((1, 52), |_| rng.gen::<f64>());
        let oracle: f64 =
            p.iter().zip(t.iter()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / 52.0;
        assert!((mse_loss(&p, &t) - oracle).abs() < 1e-12);
    }

    #[test]
    fn kl_as_printed_unit_values() {
        // mu = 0, sigma = 1, one sample, one dim: 1 + 0 - 0 - 0.5 = 0.5
        let mu = array![[0.0]];
        let sigma = array![[1.0]];
        assert!((kl_loss(&mu, &sigma, KlForm::AsPrinted).unwrap() - 0.5).abs() < 1e-12);
        // mu = 1, sigma = 1: 1 + 1 - 0 - 0.5 = 1.5
        let mu = array![[1.0]];
        assert!((kl_loss(&mu, &sigma, KlForm::AsPrinted).unwrap() - 1.5).abs() < 1e-12);
    }

    #[test]
    fn kl_batch_mean_property() {
        let mu = array![[0.3, -0.7], [0.3, -0.7]];
        let sigma = array![[0.9, 1.2], [0.9, 1.2]];
        let one = kl_loss(
            &mu.slice(ndarray::s![..1, ..]).to_owned(),
            &sigma.slice(ndarray::s![..1, ..]).to_owned(),
            KlForm::AsPrinted,
        )
        .unwrap();
        let two = kl_loss(&mu, &sigma, KlForm::AsPrinted).unwrap();
        assert!((one - two).abs() < 1e-12);
        // Brute-force summation oracle.
        let oracle: f64 = mu
            .iter()
            .zip(sigma.iter())
            .map(|(&m, &s)| s * s + m * m - s.ln() - 0.5)
            .sum::<f64>()
            / 2.0;
        assert!((two - oracle).abs() < 1e-12);
    }

    #[test]
    fn kl_rejects_nonpositive_sigma() {
        let mu = array![[0.0]];
        let sigma = array![[0.0]];
        assert!(kl_loss(&mu, &sigma, KlForm::AsPrinted).is_err());
    }

    #[test]
    fn kl_per_dim_minimum_is_at_inverse_sqrt_two() {
        // Grid search over sigma with mu = 0 under the as-printed form.
        let mut best = (f64::INFINITY, 0.0);
        let mut s: f64 = 0.05;
        while s < 3.0 {
            let v = s * s - s.ln() - 0.5;
            if v < best.0 {
                best = (v, s);
            }
            s += 1e-4;
        }
        let expect = 1.0 / 2.0f64.sqrt();
        assert!((best.1 - expect).abs() < 1e-3, "minimizer {}", best.1);
    }

    #[test]
    fn reparameterize_degenerate_and_deterministic() {
        let mu = Array1::from_elem(16, 0.4);
        let zero = Array1::zeros(16);
        let mut rng = stream_rng(5, "rep", 0);
        let z = reparameterize(&mu, &zero, &mut rng);
        assert_eq!(z, mu);
        let one = Array1::from_elem(16, 1.0);
        let a = reparameterize(&mu, &one, &mut stream_rng(5, "rep", 1));
        let b = reparameterize(&mu, &one, &mut stream_rng(5, "rep", 1));
        assert_eq!(a, b);
    }

    #[test]
    fn reparameterize_moments_match_standard_normal() {
        let mu = Array1::zeros(16);
        let sigma = Array1::from_elem(16, 1.0);
        let mut rng = stream_rng(5, "rep-mc", 0);
        let n = 10_000;
        let mut sums = [0.0; 16];
        let mut sq = [0.0; 16];
        for _ in 0..n {
            let z = reparameterize(&mu, &sigma, &mut rng);
            for (d, &v) in z.iter().enumerate() {
                sums[d] += v;
                sq[d] += v * v;
            }
        }
        for d in 0..16 {
            let mean = sums[d] / n as f64;
            let var = sq[d] / n as f64 - mean * mean;
            assert!(mean.abs() < 0.05, "dim {d} mean {mean}");
            assert!((var - 1.0).abs() < 0.05, "dim {d} var {var}");
        }
    }

    #[test]
    fn vae_inference_uses_mu() {
        let mut rng = stream_rng(11, "vae", 0);
        let net = VaeNet::init(52, &mut rng);
        let x = Array2::from_shape_fn((2, 52), |(i, j)| ((i + j) as f64 * 0.11).cos() * 0.5 + 0.5);
        let a = net.forward(&x, None).unwrap();
        let b = net.forward(&x, None).unwrap();
        assert_eq!(a.output, b.output);
        assert_eq!(a.z, a.mu);
        assert!(a.sigma.iter().all(|&s| s > 0.0));
    }
}
