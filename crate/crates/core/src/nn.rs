//! Layer stacks, parameter sets and the two encoder/decoder backbones.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{ConvGeom, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Epsilon used by instance normalization inside the CNN backbone.
pub const INSTANCE_NORM_EPS: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq)]
pub enum LayerSpec {
    Dense {
        inputs: usize,
        outputs: usize,
    },
    Conv {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    ConvTranspose {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    Relu,
    Sigmoid,
    InstanceNorm,
    /// `[B, ...] -> [B, prod(...)]`
    Flatten,
    /// `[B, prod(shape)] -> [B, shape...]`
    Reshape(Vec<usize>),
}

impl LayerSpec {
    fn has_params(&self) -> bool {
        matches!(
            self,
            LayerSpec::Dense { .. } | LayerSpec::Conv { .. } | LayerSpec::ConvTranspose { .. }
        )
    }

    /// `(weight shape, bias len, fan_in, fan_out)` for parameterized layers.
    fn param_shapes(&self) -> Option<(Vec<usize>, usize, usize, usize)> {
        match *self {
            LayerSpec::Dense { inputs, outputs } => {
                Some((vec![inputs, outputs], outputs, inputs, outputs))
            }
            LayerSpec::Conv {
                in_channels,
                out_channels,
                kernel,
                ..
            } => Some((
                vec![out_channels, in_channels, kernel, kernel],
                out_channels,
                in_channels * kernel * kernel,
                out_channels * kernel * kernel,
            )),
            LayerSpec::ConvTranspose {
                in_channels,
                out_channels,
                kernel,
                ..
            } => Some((
                vec![in_channels, out_channels, kernel, kernel],
                out_channels,
                in_channels * kernel * kernel,
                out_channels * kernel * kernel,
            )),
            _ => None,
        }
    }

    /// Per-sample output shape for a per-sample input shape.
    fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let bad = |want: &[usize]| Err(Error::shape("layer", input, want));
        match self {
            LayerSpec::Dense { inputs, outputs } => {
                if *inputs == 0 || *outputs == 0 {
                    return Err(Error::Invalid("dense layer with zero width".into()));
                }
                if input != [*inputs] {
                    return bad(&[*inputs]);
                }
                Ok(vec![*outputs])
            }
            LayerSpec::Conv {
                in_channels,
                out_channels,
                kernel,
                stride,
                padding,
            } => {
                if [*in_channels, *out_channels, *kernel, *stride].contains(&0) {
                    return Err(Error::Invalid("conv layer with zero dimension".into()));
                }
                if input.len() != 3 || input[0] != *in_channels {
                    return bad(&[*in_channels, 0, 0]);
                }
                let (h, w) = (input[1] + 2 * padding, input[2] + 2 * padding);
                if *kernel > h || *kernel > w {
                    return Err(Error::Invalid(format!(
                        "conv kernel {kernel} exceeds padded input {h}x{w}"
                    )));
                }
                Ok(vec![
                    *out_channels,
                    (h - kernel) / stride + 1,
                    (w - kernel) / stride + 1,
                ])
            }
            LayerSpec::ConvTranspose {
                in_channels,
                out_channels,
                kernel,
                stride,
                padding,
            } => {
                if [*in_channels, *out_channels, *kernel, *stride].contains(&0) {
                    return Err(Error::Invalid("transposed conv with zero dimension".into()));
                }
                if input.len() != 3 || input[0] != *in_channels {
                    return bad(&[*in_channels, 0, 0]);
                }
                let h = (input[1] - 1) * stride + kernel;
                let w = (input[2] - 1) * stride + kernel;
                if h <= 2 * padding || w <= 2 * padding {
                    return bad(input);
                }
                Ok(vec![*out_channels, h - 2 * padding, w - 2 * padding])
            }
            LayerSpec::Relu | LayerSpec::Sigmoid => Ok(input.to_vec()),
            LayerSpec::InstanceNorm => {
                if input.len() != 3 {
                    return bad(&[0, 0, 0]);
                }
                Ok(input.to_vec())
            }
            LayerSpec::Flatten => Ok(vec![input.iter().product()]),
            LayerSpec::Reshape(shape) => {
                if shape.iter().product::<usize>() != input.iter().product::<usize>() {
                    return bad(shape);
                }
                Ok(shape.clone())
            }
        }
    }
}

/// Named parameter tensors, ordered by name.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    tensors: BTreeMap<String, Tensor>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) {
        self.tensors.insert(name.into(), value);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.tensors.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn num_values(&self) -> usize {
        self.tensors.values().map(Tensor::numel).sum()
    }

    pub fn extend(&mut self, other: ParamSet) {
        self.tensors.extend(other.tensors);
    }

    /// Records every tensor on `tape` as a trainable leaf.
    pub fn bind(&self, tape: &mut Tape) -> Bound {
        self.bind_as(tape, true)
    }

    /// Records every tensor on `tape` as a constant.
    pub fn bind_frozen(&self, tape: &mut Tape) -> Bound {
        self.bind_as(tape, false)
    }

    fn bind_as(&self, tape: &mut Tape, trainable: bool) -> Bound {
        Bound {
            vars: self
                .tensors
                .iter()
                .map(|(k, v)| (k.clone(), tape.leaf(v.clone(), trainable)))
                .collect(),
        }
    }
}

/// Tape handles of a bound [`ParamSet`].
#[derive(Clone, Debug)]
pub struct Bound {
    vars: BTreeMap<String, Var>,
}

impl Bound {
    pub(crate) fn from_pairs(pairs: impl IntoIterator<Item = (String, Var)>) -> Self {
        Self {
            vars: pairs.into_iter().collect(),
        }
    }

    pub fn var(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::Invalid(format!("missing parameter `{name}`")))
    }

    /// Gradients after `tape.backward`, keyed like the parameter set.
    pub fn grads(&self, tape: &Tape) -> ParamSet {
        let mut out = ParamSet::new();
        for (k, &v) in &self.vars {
            if let Some(g) = tape.grad(v) {
                out.insert(k.clone(), g);
            }
        }
        out
    }
}

/// Mean vector with a shared scalar variance.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianParams {
    pub mean: Vec<f64>,
    pub sigma2: f64,
}

impl GaussianParams {
    pub fn new(mean: Vec<f64>, sigma2: f64) -> Result<Self> {
        if !(sigma2 > 0.0) {
            return Err(Error::domain(
                "gaussian",
                format!("sigma2 must be > 0, got {sigma2}"),
            ));
        }
        Ok(Self { mean, sigma2 })
    }
}

/// A named sequence of layers. Parameters are stored in a [`ParamSet`] under
/// `"{name}.{index:02}.weight"` and `"{name}.{index:02}.bias"`.
#[derive(Clone, Debug, PartialEq)]
pub struct Stack {
    pub name: String,
    pub layers: Vec<LayerSpec>,
}

impl Stack {
    pub fn new(name: impl Into<String>, layers: Vec<LayerSpec>) -> Self {
        Self {
            name: name.into(),
            layers,
        }
    }

    fn weight_name(&self, i: usize) -> String {
        format!("{}.{i:02}.weight", self.name)
    }

    fn bias_name(&self, i: usize) -> String {
        format!("{}.{i:02}.bias", self.name)
    }

    /// Per-sample output shape, validating every layer on the way.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        self.layers
            .iter()
            .try_fold(input.to_vec(), |shape, layer| layer.output_shape(&shape))
    }

    /// Glorot-uniform weights, zero biases.
    pub fn init_params(&self, seed: u64) -> ParamSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        self.init_into(&mut rng, &mut params);
        params
    }

    pub fn init_into(&self, rng: &mut impl Rng, params: &mut ParamSet) {
        for (i, layer) in self.layers.iter().enumerate() {
            let Some((wshape, blen, fan_in, fan_out)) = layer.param_shapes() else {
                continue;
            };
            let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let w = Tensor::from_fn(wshape, |_| rng.gen_range(-a..a));
            params.insert(self.weight_name(i), w);
            params.insert(self.bias_name(i), Tensor::zeros([blen]));
        }
    }

    pub fn num_param_layers(&self) -> usize {
        self.layers.iter().filter(|l| l.has_params()).count()
    }

    /// Applies the layers in order to a batch `x` of shape `[B, ...]`.
    pub fn forward(&self, tape: &mut Tape, params: &Bound, x: Var) -> Result<Var> {
        let mut h = x;
        for (i, layer) in self.layers.iter().enumerate() {
            h = match layer {
                LayerSpec::Dense { .. } => {
                    let w = params.var(&self.weight_name(i))?;
                    let b = params.var(&self.bias_name(i))?;
                    let z = tape.matmul(h, w)?;
                    tape.add(z, b)?
                }
                LayerSpec::Conv {
                    stride, padding, ..
                } => {
                    let w = params.var(&self.weight_name(i))?;
                    let b = params.var(&self.bias_name(i))?;
                    let geom = ConvGeom {
                        stride: *stride,
                        padding: *padding,
                    };
                    tape.conv2d(h, w, Some(b), geom)?
                }
                LayerSpec::ConvTranspose {
                    stride, padding, ..
                } => {
                    let w = params.var(&self.weight_name(i))?;
                    let b = params.var(&self.bias_name(i))?;
                    let geom = ConvGeom {
                        stride: *stride,
                        padding: *padding,
                    };
                    tape.conv_transpose2d(h, w, Some(b), geom)?
                }
                LayerSpec::Relu => tape.relu(h),
                LayerSpec::Sigmoid => tape.sigmoid(h),
                LayerSpec::InstanceNorm => instance_norm(tape, h, INSTANCE_NORM_EPS)?,
                LayerSpec::Flatten => {
                    let s = tape.shape(h);
                    let shape = [s[0], s[1..].iter().product()];
                    tape.reshape(h, &shape)?
                }
                LayerSpec::Reshape(shape) => {
                    let mut full = vec![tape.shape(h)[0]];
                    full.extend_from_slice(shape);
                    tape.reshape(h, &full)?
                }
            };
        }
        Ok(h)
    }
}

/// `(x - mean) / sqrt(var + eps)` per (sample, channel) plane of `[B, C, H, W]`.
pub fn instance_norm(tape: &mut Tape, x: Var, eps: f64) -> Result<Var> {
    tape.instance_norm(x, eps)
}

/// Backbone family for encoder and decoder.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Architecture {
    /// image → 128 → 64 → head, mirrored for the decoder.
    Mlp,
    /// Strided 4×4 convolutions with instance norm, sized for 16×16 inputs.
    Cnn,
}

impl Architecture {
    pub fn name(self) -> &'static str {
        match self {
            Architecture::Mlp => "mlp",
            Architecture::Cnn => "cnn",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "mlp" => Ok(Architecture::Mlp),
            "cnn" => Ok(Architecture::Cnn),
            other => Err(Error::Config(format!("unknown arch `{other}` (mlp|cnn)"))),
        }
    }

    /// Maps a flattened `[B, C*H*W]` image batch to a `[B, head]` output.
    pub fn encoder(self, image: [usize; 3], head: usize) -> Stack {
        let [c, h, w] = image;
        let layers = match self {
            Architecture::Mlp => vec![
                LayerSpec::Dense {
                    inputs: c * h * w,
                    outputs: 128,
                },
                LayerSpec::Relu,
                LayerSpec::Dense {
                    inputs: 128,
                    outputs: 64,
                },
                LayerSpec::Relu,
                LayerSpec::Dense {
                    inputs: 64,
                    outputs: head,
                },
            ],
            Architecture::Cnn => {
                let conv = |i, o| LayerSpec::Conv {
                    in_channels: i,
                    out_channels: o,
                    kernel: 4,
                    stride: 2,
                    padding: 1,
                };
                let flat = 64 * (h / 8) * (w / 8);
                vec![
                    LayerSpec::Reshape(vec![c, h, w]),
                    conv(c, 32),
                    LayerSpec::InstanceNorm,
                    LayerSpec::Relu,
                    conv(32, 32),
                    LayerSpec::InstanceNorm,
                    LayerSpec::Relu,
                    conv(32, 64),
                    LayerSpec::InstanceNorm,
                    LayerSpec::Relu,
                    LayerSpec::Flatten,
                    LayerSpec::Dense {
                        inputs: flat,
                        outputs: 256,
                    },
                    LayerSpec::Relu,
                    LayerSpec::Dense {
                        inputs: 256,
                        outputs: head,
                    },
                ]
            }
        };
        Stack::new("enc", layers)
    }

    /// Maps a `[B, latent]` code to a flattened `[B, C*H*W]` image in [0, 1].
    pub fn decoder(self, latent: usize, image: [usize; 3]) -> Stack {
        let [c, h, w] = image;
        let layers = match self {
            Architecture::Mlp => vec![
                LayerSpec::Dense {
                    inputs: latent,
                    outputs: 64,
                },
                LayerSpec::Relu,
                LayerSpec::Dense {
                    inputs: 64,
                    outputs: 128,
                },
                LayerSpec::Relu,
                LayerSpec::Dense {
                    inputs: 128,
                    outputs: c * h * w,
                },
                LayerSpec::Sigmoid,
            ],
            Architecture::Cnn => {
                let up = |i, o| LayerSpec::ConvTranspose {
                    in_channels: i,
                    out_channels: o,
                    kernel: 4,
                    stride: 2,
                    padding: 1,
                };
                let (h8, w8) = (h / 8, w / 8);
                vec![
                    LayerSpec::Dense {
                        inputs: latent,
                        outputs: 256,
                    },
                    LayerSpec::Relu,
                    LayerSpec::Dense {
                        inputs: 256,
                        outputs: 64 * h8 * w8,
                    },
                    LayerSpec::Relu,
                    LayerSpec::Reshape(vec![64, h8, w8]),
                    up(64, 32),
                    LayerSpec::InstanceNorm,
                    LayerSpec::Relu,
                    up(32, 32),
                    LayerSpec::InstanceNorm,
                    LayerSpec::Relu,
                    up(32, c),
                    LayerSpec::Sigmoid,
                    LayerSpec::Flatten,
                ]
            }
        };
        Stack::new("dec", layers)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::grad_check;

    fn dense_only(i: usize, o: usize) -> Stack {
        Stack::new(
            "s",
            vec![LayerSpec::Dense {
                inputs: i,
                outputs: o,
            }],
        )
    }

    #[test]
    fn glorot_bound_and_zero_bias() {
        let params = dense_only(2, 3).init_params(7);
        let w = params.get("s.00.weight").unwrap();
        assert_eq!(w.numel(), 6);
        let bound = (6.0f64 / 5.0).sqrt();
        assert!(w.data().iter().all(|v| v.abs() < bound));
        assert!(params
            .get("s.00.bias")
            .unwrap()
            .data()
            .iter()
            .all(|&b| b == 0.0));
    }

    #[test]
    fn init_is_deterministic() {
        let s = Architecture::Mlp.encoder([1, 16, 16], 9);
        assert_eq!(s.init_params(42), s.init_params(42));
        assert_ne!(s.init_params(42), s.init_params(43));
    }

    #[test]
    fn identity_dense_is_identity_map() {
        let stack = dense_only(4, 4);
        let mut params = ParamSet::new();
        params.insert(
            "s.00.weight",
            Tensor::from_fn([4, 4], |i| if i % 5 == 0 { 1.0 } else { 0.0 }),
        );
        params.insert("s.00.bias", Tensor::zeros([4]));
        let mut tape = Tape::new();
        let bound = params.bind_frozen(&mut tape);
        let x = Tensor::from_fn([3, 4], |i| i as f64 - 5.0);
        let xv = tape.constant(x.clone());
        let y = stack.forward(&mut tape, &bound, xv).unwrap();
        assert_eq!(tape.value(y), &x);
    }

    #[test]
    fn mlp_encoder_head_width() {
        let enc = Architecture::Mlp.encoder([1, 16, 16], 4 + 5);
        assert_eq!(enc.output_shape(&[256]).unwrap(), vec![9]);
        let params = enc.init_params(1);
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape);
        let x = tape.constant(Tensor::full([2, 256], 0.5));
        let y = enc.forward(&mut tape, &bound, x).unwrap();
        assert_eq!(tape.shape(y), &[2, 9]);
    }

    #[test]
    fn cnn_shapes_on_rgb_16x16() {
        let enc = Architecture::Cnn.encoder([3, 16, 16], 9);
        assert_eq!(enc.output_shape(&[768]).unwrap(), vec![9]);
        let dec = Architecture::Cnn.decoder(9, [3, 16, 16]);
        assert_eq!(dec.output_shape(&[9]).unwrap(), vec![768]);
        let mut params = enc.init_params(3);
        params.extend(dec.init_params(4));
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape);
        let x = tape.constant(Tensor::from_fn([2, 768], |i| (i % 7) as f64 / 7.0));
        let code = enc.forward(&mut tape, &bound, x).unwrap();
        let img = dec.forward(&mut tape, &bound, code).unwrap();
        assert_eq!(tape.shape(img), &[2, 768]);
        assert!(tape
            .value(img)
            .data()
            .iter()
            .all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn oversized_kernel_is_rejected() {
        let s = Stack::new(
            "c",
            vec![LayerSpec::Conv {
                in_channels: 1,
                out_channels: 1,
                kernel: 5,
                stride: 1,
                padding: 0,
            }],
        );
        assert!(s.output_shape(&[1, 4, 4]).is_err());
    }

    #[test]
    fn instance_norm_unit_moments() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::from_fn([2, 3, 4, 4], |i| {
            ((i * 37) % 23) as f64 * 0.3
        }));
        let y = instance_norm(&mut tape, x, 1e-12).unwrap();
        for plane in tape.value(y).data().chunks(16) {
            let mean = plane.iter().sum::<f64>() / 16.0;
            let var = plane.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 16.0;
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn instance_norm_ignores_positive_affine_shift() {
        let x = Tensor::from_fn([1, 2, 3, 3], |i| ((i * 17) % 11) as f64 - 4.0);
        let shifted = Tensor::from_fn([1, 2, 3, 3], |i| 2.5 * x.data()[i] - 7.0);
        let mut tape = Tape::new();
        let a = tape.constant(x);
        let b = tape.constant(shifted);
        let ya = instance_norm(&mut tape, a, 1e-12).unwrap();
        let yb = instance_norm(&mut tape, b, 1e-12).unwrap();
        for (p, q) in tape.value(ya).data().iter().zip(tape.value(yb).data()) {
            assert!((p - q).abs() < 1e-9);
        }
    }

    #[test]
    fn dense_relu_stack_passes_grad_check() {
        let stack = Stack::new(
            "s",
            vec![
                LayerSpec::Dense {
                    inputs: 3,
                    outputs: 4,
                },
                LayerSpec::Relu,
                LayerSpec::Dense {
                    inputs: 4,
                    outputs: 2,
                },
                LayerSpec::Sigmoid,
            ],
        );
        let params = stack.init_params(5);
        let names: Vec<String> = params.iter().map(|(k, _)| k.clone()).collect();
        let values: Vec<Tensor> = params.iter().map(|(_, v)| v.clone()).collect();
        let x = Tensor::from_fn([5, 3], |i| (i as f64 * 0.77).sin());
        let report = grad_check(
            |tape, vars| {
                let bound = Bound::from_pairs(names.iter().cloned().zip(vars.iter().copied()));
                let xv = tape.constant(x.clone());
                let y = stack.forward(tape, &bound, xv)?;
                let sq = tape.square(y);
                Ok(tape.sum(sq))
            },
            &values,
            1e-5,
            1e-4,
        )
        .unwrap();
        assert!(report.passed, "{report:?}");
    }
}
