//! Central finite-difference checks of every analytic gradient.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::gray::GrayImage;

use super::layers::{
    conv2d_backward, conv2d_forward, fc_backward, fc_forward, maxpool2x2_backward, maxpool2x2_forward,
    relu_backward, relu_forward,
};
use super::loss::{contrastive_loss, Label};
use super::model::{Architecture, LayerSpec, Network, SiameseModel};
use super::tensor::Tensor;
use super::train::batch_loss_and_grads;
use super::NnError;

pub const STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;
/// Denominator floor of the relative error, so gradients that are zero
/// analytically are judged by absolute error instead.
pub const ZERO_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub checked: usize,
    pub max_rel_error: f64,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.max_rel_error < TOLERANCE
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(ZERO_FLOOR)
}

/// Compares `analytic` against central differences of `f` around `x`.
fn compare(name: &str, x: &[f64], analytic: &[f64], mut f: impl FnMut(&[f64]) -> f64) -> CheckResult {
    assert_eq!(x.len(), analytic.len());
    let mut probe = x.to_vec();
    let mut worst = 0.0f64;
    for i in 0..x.len() {
        probe[i] = x[i] + STEP;
        let up = f(&probe);
        probe[i] = x[i] - STEP;
        let down = f(&probe);
        probe[i] = x[i];
        worst = worst.max(relative_error(analytic[i], (up - down) / (2.0 * STEP)));
    }
    CheckResult {
        name: name.to_string(),
        checked: x.len(),
        max_rel_error: worst,
    }
}

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn dot(a: &Tensor, b: &Tensor) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

fn with(shape: &[usize], data: &[f64]) -> Tensor {
    Tensor::from_vec(shape, data.to_vec()).unwrap()
}

/// Scalar objective `sum(R * conv(x))` differentiated in x, weights and bias.
fn check_conv(rng: &mut ChaCha8Rng, pad: usize, stride: usize, label: &str) -> Result<Vec<CheckResult>, NnError> {
    let x = random(rng, &[2, 6, 6]);
    let w = random(rng, &[3, 2, 3, 3]);
    let b = random(rng, &[3]);
    let y = conv2d_forward(&x, &w, &b, pad, stride)?;
    let r = random(rng, y.shape());
    let g = conv2d_backward(&x, &w, &b, &r, pad, stride)?;
    let obj = |x: &Tensor, w: &Tensor, b: &Tensor| dot(&r, &conv2d_forward(x, w, b, pad, stride).unwrap());
    Ok(vec![
        compare(&format!("conv {label} input"), x.data(), g.input.data(), |v| {
            obj(&with(x.shape(), v), &w, &b)
        }),
        compare(&format!("conv {label} weights"), w.data(), g.weights.data(), |v| {
            obj(&x, &with(w.shape(), v), &b)
        }),
        compare(&format!("conv {label} bias"), b.data(), g.bias.data(), |v| {
            obj(&x, &w, &with(b.shape(), v))
        }),
    ])
}

fn check_maxpool(rng: &mut ChaCha8Rng) -> Result<CheckResult, NnError> {
    let x = random(rng, &[3, 8, 8]);
    let (y, arg) = maxpool2x2_forward(&x)?;
    let r = random(rng, y.shape());
    let g = maxpool2x2_backward(&r, &arg, x.shape())?;
    Ok(compare("maxpool input", x.data(), g.data(), |v| {
        dot(&r, &maxpool2x2_forward(&with(x.shape(), v)).unwrap().0)
    }))
}

fn check_fc(rng: &mut ChaCha8Rng) -> Result<Vec<CheckResult>, NnError> {
    let x = random(rng, &[3, 7]);
    let w = random(rng, &[5, 7]);
    let b = random(rng, &[5]);
    let r = random(rng, &[3, 5]);
    let g = fc_backward(&x, &w, &b, &r)?;
    let obj = |x: &Tensor, w: &Tensor, b: &Tensor| dot(&r, &fc_forward(x, w, b).unwrap());
    Ok(vec![
        compare("fc input", x.data(), g.input.data(), |v| obj(&with(x.shape(), v), &w, &b)),
        compare("fc weights", w.data(), g.weights.data(), |v| obj(&x, &with(w.shape(), v), &b)),
        compare("fc bias", b.data(), g.bias.data(), |v| obj(&x, &w, &with(b.shape(), v))),
    ])
}

fn check_relu(rng: &mut ChaCha8Rng) -> Result<CheckResult, NnError> {
    // Keep inputs away from the kink at 0, where no derivative exists.
    let data = (0..64)
        .map(|_| {
            let m: f64 = rng.random_range(0.05..1.0);
            if rng.random::<bool>() {
                m
            } else {
                -m
            }
        })
        .collect();
    let x = Tensor::from_vec(&[4, 4, 4], data)?;
    let r = random(rng, x.shape());
    let g = relu_backward(&x, &r)?;
    Ok(compare("relu input", x.data(), g.data(), |v| {
        dot(&r, &relu_forward(&with(x.shape(), v)))
    }))
}

fn check_loss(rng: &mut ChaCha8Rng) -> Result<CheckResult, NnError> {
    let margin = 1.0;
    let mut worst = 0.0f64;
    let mut checked = 0;
    for label in [Label::Similar, Label::Dissimilar] {
        for _ in 0..50 {
            let d: f64 = rng.random_range(0.01..2.0);
            if (d - margin).abs() < 1e-3 {
                continue;
            }
            let (_, analytic) = contrastive_loss(d, label, margin)?;
            let f = |d: f64| contrastive_loss(d, label, margin).unwrap().0;
            let numeric = (f(d + STEP) - f(d - STEP)) / (2.0 * STEP);
            worst = worst.max(relative_error(analytic, numeric));
            checked += 1;
        }
    }
    Ok(CheckResult {
        name: "contrastive loss".into(),
        checked,
        max_rel_error: worst,
    })
}

/// A miniature of the default architecture on 8x8 inputs.
pub fn check_architecture() -> Architecture {
    Architecture {
        input: [1, 8, 8],
        layers: vec![
            LayerSpec::Conv {
                in_channels: 1,
                out_channels: 2,
                kernel: 3,
                pad: 1,
                stride: 1,
            },
            LayerSpec::Relu,
            LayerSpec::Maxpool,
            LayerSpec::Conv {
                in_channels: 2,
                out_channels: 3,
                kernel: 3,
                pad: 1,
                stride: 1,
            },
            LayerSpec::Relu,
            LayerSpec::Maxpool,
            LayerSpec::Dense {
                inputs: 12,
                outputs: 5,
            },
            LayerSpec::Relu,
            LayerSpec::Dense {
                inputs: 5,
                outputs: 4,
            },
        ],
    }
}

/// Mean contrastive loss of a small batch of similar and dissimilar pairs,
/// differentiated with respect to every weight and bias.
fn check_siamese(rng: &mut ChaCha8Rng, seed: u64) -> Result<CheckResult, NnError> {
    let core = Network::init(check_architecture(), seed)?;
    // A wide margin keeps the dissimilar hinge active.
    let model = SiameseModel::new(core, 50.0)?;
    let images: Vec<GrayImage> = (0..4)
        .map(|_| GrayImage::from_fn(8, 8, |_, _| rng.random_range(0.0..1.0)))
        .collect();
    let refs: Vec<&GrayImage> = images.iter().collect();
    let pairs = [
        (0, 1, Label::Similar),
        (2, 3, Label::Similar),
        (0, 2, Label::Dissimilar),
        (1, 3, Label::Dissimilar),
    ];
    let mut grads = model.core().zero_grads();
    batch_loss_and_grads(&model, &refs, &pairs, &mut grads)?;
    let flat_params: Vec<f64> = model.core().params().iter().flat_map(|t| t.data().to_vec()).collect();
    let flat_grads: Vec<f64> = grads.iter().flat_map(|t| t.data().to_vec()).collect();
    let shapes: Vec<Vec<usize>> = model.core().params().iter().map(|t| t.shape().to_vec()).collect();
    let mut scratch_grads = model.core().zero_grads();
    let mut probe = model.clone();
    Ok(compare("siamese loss parameters", &flat_params, &flat_grads, |v| {
        let mut offset = 0;
        for (p, s) in probe.core_mut().params_mut().iter_mut().zip(&shapes) {
            let n: usize = s.iter().product();
            p.data_mut().copy_from_slice(&v[offset..offset + n]);
            offset += n;
        }
        batch_loss_and_grads(&probe, &refs, &pairs, &mut scratch_grads).unwrap()
    }))
}

/// Runs every check on freshly drawn tensors.
pub fn gradcheck_suite(seed: u64) -> Result<Vec<CheckResult>, NnError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut results = check_conv(&mut rng, 1, 1, "same")?;
    results.extend(check_conv(&mut rng, 0, 2, "strided")?);
    results.push(check_maxpool(&mut rng)?);
    results.extend(check_fc(&mut rng)?);
    results.push(check_relu(&mut rng)?);
    results.push(check_loss(&mut rng)?);
    results.push(check_siamese(&mut rng, seed)?);
    Ok(results)
}
