//! The max-pooling CNN core and the Siamese model built around it.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::{
    conv_backward_raw, conv_forward_raw, dense_backward_raw, dense_forward_raw, maxpool2x2_forward,
    relu_backward_raw, ConvGeometry,
};
use super::tensor::Tensor;
use super::NnError;
use crate::gray::GrayImage;

/// Default contrastive margin.
pub const DEFAULT_MARGIN: f64 = 1.0;

/// One stage of the core network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LayerSpec {
    Conv {
        #[serde(rename = "in")]
        in_channels: usize,
        #[serde(rename = "out")]
        out_channels: usize,
        kernel: usize,
        pad: usize,
        stride: usize,
    },
    Relu,
    Maxpool,
    Dense {
        #[serde(rename = "in")]
        inputs: usize,
        #[serde(rename = "out")]
        outputs: usize,
    },
}

impl LayerSpec {
    /// Weight and bias shapes, empty for parameter-free layers.
    pub fn param_shapes(&self) -> Vec<Vec<usize>> {
        match *self {
            LayerSpec::Conv {
                in_channels,
                out_channels,
                kernel,
                ..
            } => vec![vec![out_channels, in_channels, kernel, kernel], vec![out_channels]],
            LayerSpec::Dense { inputs, outputs } => vec![vec![outputs, inputs], vec![outputs]],
            LayerSpec::Relu | LayerSpec::Maxpool => Vec::new(),
        }
    }

    fn fan_in(&self) -> usize {
        match *self {
            LayerSpec::Conv {
                in_channels,
                kernel,
                ..
            } => in_channels * kernel * kernel,
            LayerSpec::Dense { inputs, .. } => inputs,
            _ => 0,
        }
    }
}

/// Input shape plus the ordered layer chain.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub input: [usize; 3],
    pub layers: Vec<LayerSpec>,
}

impl Architecture {
    /// C1-M1-C2-M2-C3-M3 followed by two dense layers:
    /// 64x64 -> 32x64x64 -> 32x32x32 -> 128x32x32 -> 128x16x16
    /// -> 256x16x16 -> 256x8x8 -> 1024 -> 1024.
    pub fn mpcnn() -> Self {
        use LayerSpec::*;
        let conv = |i, o, k, p| Conv {
            in_channels: i,
            out_channels: o,
            kernel: k,
            pad: p,
            stride: 1,
        };
        Architecture {
            input: [1, 64, 64],
            layers: vec![
                conv(1, 32, 5, 2),
                Relu,
                Maxpool,
                conv(32, 128, 5, 2),
                Relu,
                Maxpool,
                conv(128, 256, 3, 1),
                Relu,
                Maxpool,
                Dense {
                    inputs: 256 * 8 * 8,
                    outputs: 1024,
                },
                Relu,
                Dense {
                    inputs: 1024,
                    outputs: 1024,
                },
            ],
        }
    }

    /// The activation shape after every layer, starting with the input.
    pub fn shape_trace(&self) -> Result<Vec<Vec<usize>>, NnError> {
        let mut shapes = vec![self.input.to_vec()];
        let mut cur = self.input.to_vec();
        for (i, layer) in self.layers.iter().enumerate() {
            let name = format!("layer {i}");
            cur = match *layer {
                LayerSpec::Conv {
                    in_channels,
                    out_channels,
                    kernel,
                    pad,
                    stride,
                } => {
                    let [c, h, w] = cur[..] else {
                        return Err(NnError::dimension(&name, "conv after a flat layer"));
                    };
                    if c != in_channels {
                        return Err(NnError::dimension(
                            &name,
                            format!("expects {in_channels} channels, receives {c}"),
                        ));
                    }
                    let g = ConvGeometry::new([c, h, w], out_channels, kernel, pad, stride)?;
                    vec![out_channels, g.out_height, g.out_width]
                }
                LayerSpec::Maxpool => {
                    let [c, h, w] = cur[..] else {
                        return Err(NnError::dimension(&name, "pool after a flat layer"));
                    };
                    if h % 2 != 0 || w % 2 != 0 {
                        return Err(NnError::dimension(&name, format!("odd size {h}x{w}")));
                    }
                    vec![c, h / 2, w / 2]
                }
                LayerSpec::Relu => cur,
                LayerSpec::Dense { inputs, outputs } => {
                    let n: usize = cur.iter().product();
                    if n != inputs {
                        return Err(NnError::dimension(
                            &name,
                            format!("expects {inputs} inputs, receives {n}"),
                        ));
                    }
                    vec![outputs]
                }
            };
            shapes.push(cur.clone());
        }
        Ok(shapes)
    }

    pub fn param_shapes(&self) -> Vec<Vec<usize>> {
        self.layers.iter().flat_map(|l| l.param_shapes()).collect()
    }

    pub fn embedding_len(&self) -> Result<usize, NnError> {
        Ok(self.shape_trace()?.last().unwrap().iter().product())
    }
}

/// Activations recorded by a training forward pass.
pub(crate) struct Trace {
    /// `acts[i]` is the input of layer `i`; the last entry is the output.
    acts: Vec<Vec<f64>>,
    argmax: Vec<Vec<usize>>,
    batch: usize,
}

impl Trace {
    pub fn output(&self) -> &[f64] {
        self.acts.last().unwrap()
    }
}

/// The shared core: an architecture and its parameters, weight then bias
/// for each parameterized layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    arch: Architecture,
    shapes: Vec<Vec<usize>>,
    params: Vec<Tensor>,
}

impl Network {
    /// Fan-in scaled uniform weights in `±sqrt(6 / fan_in)`, zero biases.
    pub fn init(arch: Architecture, seed: u64) -> Result<Self, NnError> {
        let shapes = arch.shape_trace()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::new();
        for layer in &arch.layers {
            let ps = layer.param_shapes();
            if ps.is_empty() {
                continue;
            }
            let bound = (6.0 / layer.fan_in() as f64).sqrt();
            let mut w = Tensor::zeros(&ps[0]);
            w.data_mut()
                .iter_mut()
                .for_each(|v| *v = rng.random_range(-bound..bound));
            params.push(w);
            params.push(Tensor::zeros(&ps[1]));
        }
        Ok(Network {
            arch,
            shapes,
            params,
        })
    }

    pub fn from_params(arch: Architecture, params: Vec<Tensor>) -> Result<Self, NnError> {
        let shapes = arch.shape_trace()?;
        let expected = arch.param_shapes();
        if expected.len() != params.len() {
            return Err(NnError::dimension(
                "network",
                format!("{} parameter tensors, architecture needs {}", params.len(), expected.len()),
            ));
        }
        for (i, (p, s)) in params.iter().zip(&expected).enumerate() {
            if p.shape() != s.as_slice() {
                return Err(NnError::dimension(
                    "network",
                    format!("parameter {i} has shape {:?}, expected {s:?}", p.shape()),
                ));
            }
        }
        Ok(Network {
            arch,
            shapes,
            params,
        })
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    /// Activation shapes after each layer, input first.
    pub fn shape_trace(&self) -> &[Vec<usize>] {
        &self.shapes
    }

    pub fn zero_grads(&self) -> Vec<Tensor> {
        self.params.iter().map(|p| Tensor::zeros(p.shape())).collect()
    }

    fn check_input(&self, input: &Tensor) -> Result<usize, NnError> {
        let per: usize = self.arch.input.iter().product();
        let shape = input.shape();
        let ok = shape.len() == 4 && shape[1..] == self.arch.input[..];
        if !ok || input.len() != shape[0] * per {
            return Err(NnError::dimension(
                "input",
                format!("expected [N, {:?}], got {shape:?}", self.arch.input),
            ));
        }
        Ok(shape[0])
    }

    /// Runs a batch `[N, C, H, W]` and returns `[N, embedding]`.
    pub fn forward(&self, input: &Tensor) -> Result<Tensor, NnError> {
        let n = self.check_input(input)?;
        let mut cur = input.data().to_vec();
        let mut pi = 0;
        for (li, layer) in self.arch.layers.iter().enumerate() {
            cur = self.apply(li, layer, &mut pi, n, &cur, None);
        }
        let len = self.shapes.last().unwrap().iter().product();
        Tensor::from_vec(&[n, len], cur)
    }

    pub(crate) fn forward_trace(&self, input: &Tensor) -> Result<Trace, NnError> {
        let n = self.check_input(input)?;
        let mut acts = vec![input.data().to_vec()];
        let mut argmax = Vec::new();
        let mut pi = 0;
        for (li, layer) in self.arch.layers.iter().enumerate() {
            let mut arg = Vec::new();
            let next = self.apply(li, layer, &mut pi, n, acts.last().unwrap(), Some(&mut arg));
            acts.push(next);
            argmax.push(arg);
        }
        Ok(Trace {
            acts,
            argmax,
            batch: n,
        })
    }

    fn apply(
        &self,
        li: usize,
        layer: &LayerSpec,
        pi: &mut usize,
        n: usize,
        x: &[f64],
        argmax: Option<&mut Vec<usize>>,
    ) -> Vec<f64> {
        let in_shape = &self.shapes[li];
        let out_len: usize = self.shapes[li + 1].iter().product();
        match *layer {
            LayerSpec::Conv {
                out_channels,
                kernel,
                pad,
                stride,
                ..
            } => {
                let geo = conv_geo(in_shape, out_channels, kernel, pad, stride);
                let mut y = vec![0.0; n * out_len];
                conv_forward_raw(&geo, n, x, self.params[*pi].data(), self.params[*pi + 1].data(), &mut y);
                *pi += 2;
                y
            }
            LayerSpec::Dense { inputs, outputs } => {
                let mut y = vec![0.0; n * outputs];
                dense_forward_raw(n, inputs, outputs, x, self.params[*pi].data(), self.params[*pi + 1].data(), &mut y);
                *pi += 2;
                y
            }
            LayerSpec::Relu => x.iter().map(|v| v.max(0.0)).collect(),
            LayerSpec::Maxpool => {
                let mut shape = vec![n];
                shape.extend_from_slice(in_shape);
                let t = Tensor::from_vec(&shape, x.to_vec()).expect("traced shape");
                let (y, arg) = maxpool2x2_forward(&t).expect("traced shape");
                if let Some(a) = argmax {
                    *a = arg;
                }
                y.into_data()
            }
        }
    }

    /// Backpropagates `grad_out` (`[N, embedding]`, flat) through a recorded
    /// pass, accumulating into `grads`. Returns the gradient w.r.t. the input.
    pub(crate) fn backward(&self, trace: &Trace, grad_out: &[f64], grads: &mut [Tensor]) -> Vec<f64> {
        let n = trace.batch;
        let mut g = grad_out.to_vec();
        let mut pi = self.params.len();
        for li in (0..self.arch.layers.len()).rev() {
            let x = &trace.acts[li];
            let in_shape = &self.shapes[li];
            match self.arch.layers[li] {
                LayerSpec::Conv {
                    out_channels,
                    kernel,
                    pad,
                    stride,
                    ..
                } => {
                    pi -= 2;
                    let geo = conv_geo(in_shape, out_channels, kernel, pad, stride);
                    let (gw, rest) = grads[pi..].split_first_mut().unwrap();
                    let mut gx = vec![0.0; x.len()];
                    conv_backward_raw(
                        &geo,
                        n,
                        x,
                        self.params[pi].data(),
                        &g,
                        gw.data_mut(),
                        rest[0].data_mut(),
                        Some(&mut gx),
                    );
                    g = gx;
                }
                LayerSpec::Dense { inputs, outputs } => {
                    pi -= 2;
                    let (gw, rest) = grads[pi..].split_first_mut().unwrap();
                    let mut gx = vec![0.0; x.len()];
                    dense_backward_raw(
                        n,
                        inputs,
                        outputs,
                        x,
                        self.params[pi].data(),
                        &g,
                        gw.data_mut(),
                        rest[0].data_mut(),
                        Some(&mut gx),
                    );
                    g = gx;
                }
                LayerSpec::Relu => relu_backward_raw(x, &mut g),
                LayerSpec::Maxpool => {
                    let mut gx = vec![0.0; x.len()];
                    for (&gv, &i) in g.iter().zip(&trace.argmax[li]) {
                        gx[i] += gv;
                    }
                    g = gx;
                }
            }
        }
        g
    }
}

fn conv_geo(in_shape: &[usize], filters: usize, kernel: usize, pad: usize, stride: usize) -> ConvGeometry {
    ConvGeometry::new([in_shape[0], in_shape[1], in_shape[2]], filters, kernel, pad, stride)
        .expect("validated by shape trace")
}

/// Two cores with shared weights: one [`Network`] applied to both inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct SiameseModel {
    core: Network,
    margin: f64,
}

impl SiameseModel {
    pub fn new(core: Network, margin: f64) -> Result<Self, NnError> {
        if !(margin.is_finite() && margin > 0.0) {
            return Err(NnError::Domain(format!("margin must be positive, got {margin}")));
        }
        Ok(SiameseModel { core, margin })
    }

    /// A freshly initialized model with the default architecture.
    pub fn mpcnn(seed: u64) -> Self {
        let core = Network::init(Architecture::mpcnn(), seed).expect("default architecture is valid");
        SiameseModel::new(core, DEFAULT_MARGIN).unwrap()
    }

    pub fn core(&self) -> &Network {
        &self.core
    }

    pub fn core_mut(&mut self) -> &mut Network {
        &mut self.core
    }

    pub fn margin(&self) -> f64 {
        self.margin
    }

    pub fn input_side(&self) -> (usize, usize) {
        let [_, h, w] = self.core.arch.input;
        (w, h)
    }

    pub(crate) fn image_tensor(&self, images: &[&GrayImage]) -> Result<Tensor, NnError> {
        let [c, h, w] = self.core.arch.input;
        if c != 1 {
            return Err(NnError::dimension("input", format!("grayscale images need 1 channel, model has {c}")));
        }
        let mut data = Vec::with_capacity(images.len() * h * w);
        for img in images {
            if img.width() != w || img.height() != h {
                return Err(NnError::dimension(
                    "input",
                    format!("image is {}x{}, model expects {w}x{h}", img.width(), img.height()),
                ));
            }
            data.extend(img.pixels().iter().map(|&p| p as f64));
        }
        Tensor::from_vec(&[images.len(), c, h, w], data)
    }

    /// Feature vector for one image.
    pub fn embed(&self, img: &GrayImage) -> Result<Tensor, NnError> {
        let out = self.core.forward(&self.image_tensor(&[img])?)?;
        let len = out.len();
        out.reshape(&[len])
    }

    /// L2 distance between the two embeddings.
    pub fn distance(&self, a: &GrayImage, b: &GrayImage) -> Result<f64, NnError> {
        Ok(l2_distance(self.embed(a)?.data(), self.embed(b)?.data()))
    }
}

pub fn l2_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Applies the layer chain to one image, returning every activation shape.
/// Used to check the architecture against real data rather than arithmetic.
pub fn traced_shapes(model: &SiameseModel, img: &GrayImage) -> Result<Vec<Vec<usize>>, NnError> {
    let trace = model.core.forward_trace(&model.image_tensor(&[img])?)?;
    let mut shapes = Vec::new();
    for (act, shape) in trace.acts.iter().zip(model.core.shape_trace()) {
        assert_eq!(act.len(), shape.iter().product::<usize>());
        shapes.push(shape.clone());
    }
    Ok(shapes)
}
