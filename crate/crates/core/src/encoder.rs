//! Small trainable encoders mapping raw view features into the unit sphere.
//!
//! Two architectures are supported: a single affine layer, or an affine layer
//! followed by `tanh` and a second affine layer. The output is always divided
//! by its Euclidean norm, and [`EncoderParams::backward_into`] differentiates
//! through that normalization exactly.

use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::{check_dim, Embedding, ZERO_NORM};
use crate::scalar::{self, Scalar};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub input_dim: usize,
    pub output_dim: usize,
    pub hidden_dim: Option<usize>,
    pub seed: u64,
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 || self.hidden_dim == Some(0) {
            return Err(Error::ConfigInvalid(format!("encoder dimensions must be at least 1: {self:?}")));
        }
        Ok(())
    }
}

/// Dense affine layer `y = W x + b` with `W` stored row-major as
/// `outputs x inputs`. Also used as the shape of its own gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct Layer<T> {
    inputs: usize,
    outputs: usize,
    pub weights: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> Layer<T> {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self { inputs, outputs, weights: vec![T::zero(); inputs * outputs], bias: vec![T::zero(); outputs] }
    }

    pub fn inputs(&self) -> usize {
        self.inputs
    }

    pub fn outputs(&self) -> usize {
        self.outputs
    }

    fn apply(&self, x: &[T]) -> Vec<T> {
        self.weights
            .chunks(self.inputs)
            .zip(&self.bias)
            .map(|(row, &b)| scalar::dot(row, x) + b)
            .collect()
    }

    /// Accumulates `dW += dy x^T`, `db += dy` and returns `W^T dy` when asked.
    fn backprop(&self, x: &[T], dy: &[T], grad: &mut Layer<T>, want_input: bool) -> Option<Vec<T>> {
        for ((grow, &d), gb) in grad.weights.chunks_mut(self.inputs).zip(dy).zip(grad.bias.iter_mut()) {
            for (gw, &xi) in grow.iter_mut().zip(x) {
                *gw += d * xi;
            }
            *gb += d;
        }
        want_input.then(|| {
            let mut dx = vec![T::zero(); self.inputs];
            for (row, &d) in self.weights.chunks(self.inputs).zip(dy) {
                for (a, &w) in dx.iter_mut().zip(row) {
                    *a += w * d;
                }
            }
            dx
        })
    }

    fn values(&self) -> impl Iterator<Item = &T> {
        self.weights.iter().chain(&self.bias)
    }

    fn values_mut(&mut self) -> impl Iterator<Item = &mut T> {
        self.weights.iter_mut().chain(self.bias.iter_mut())
    }
}

/// Trainable parameters: one layer, or two layers with a `tanh` between them.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderParams<T> {
    layers: Vec<Layer<T>>,
}

/// Gradient of a scalar with respect to every entry of an [`EncoderParams`].
pub type GradientBuffer<T> = EncoderParams<T>;

/// Intermediate values of one forward pass.
#[derive(Clone, Debug)]
pub struct ForwardTrace<T> {
    pub hidden: Option<Vec<T>>,
    pub raw_output: Vec<T>,
    pub norm: T,
    pub output: Embedding<T>,
}

/// Glorot-uniform bound `sqrt(6 / (fan_in + fan_out))`.
pub fn glorot_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

/// Deterministic initialization: Glorot-uniform weights, zero biases.
pub fn init_params<T: Scalar>(config: &EncoderConfig) -> Result<EncoderParams<T>> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut layer = |inputs: usize, outputs: usize| {
        let s = glorot_bound(inputs, outputs);
        let mut l = Layer::zeros(inputs, outputs);
        for w in &mut l.weights {
            *w = T::lit(rng.random_range(-s..s));
        }
        l
    };
    let layers = match config.hidden_dim {
        None => vec![layer(config.input_dim, config.output_dim)],
        Some(h) => vec![layer(config.input_dim, h), layer(h, config.output_dim)],
    };
    Ok(EncoderParams { layers })
}

impl<T: Scalar> EncoderParams<T> {
    /// Builds parameters from explicit layers; two layers imply a hidden `tanh`.
    pub fn from_layers(layers: Vec<Layer<T>>) -> Result<Self> {
        match layers.as_slice() {
            [_] => {}
            [a, b] => check_dim(a.outputs, b.inputs)?,
            _ => return Err(Error::ConfigInvalid(format!("expected 1 or 2 layers, got {}", layers.len()))),
        }
        for l in &layers {
            if l.inputs == 0 || l.outputs == 0 {
                return Err(Error::ConfigInvalid("layer dimensions must be at least 1".into()));
            }
            check_dim(l.inputs * l.outputs, l.weights.len())?;
            check_dim(l.outputs, l.bias.len())?;
        }
        Ok(Self { layers })
    }

    /// Linear encoder with identity weights and zero bias.
    pub fn identity(dim: usize) -> Self {
        let mut l = Layer::zeros(dim, dim);
        for i in 0..dim {
            l.weights[i * dim + i] = T::one();
        }
        Self { layers: vec![l] }
    }

    pub fn zeros_like(other: &Self) -> Self {
        Self { layers: other.layers.iter().map(|l| Layer::zeros(l.inputs, l.outputs)).collect() }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].outputs
    }

    pub fn hidden_dim(&self) -> Option<usize> {
        (self.layers.len() == 2).then(|| self.layers[0].outputs)
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer<T>] {
        &mut self.layers
    }

    pub fn num_values(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    /// All entries: per layer, weights row-major then biases.
    pub fn values(&self) -> impl Iterator<Item = &T> {
        self.layers.iter().flat_map(Layer::values)
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut T> {
        self.layers.iter_mut().flat_map(Layer::values_mut)
    }

    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        check_dim(self.num_values(), other.num_values())?;
        for (a, &b) in self.values_mut().zip(other.values()) {
            *a += b;
        }
        Ok(())
    }

    pub fn scale(&mut self, s: T) {
        for a in self.values_mut() {
            *a *= s;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.values().all(|v| v.is_finite())
    }

    /// Output before normalization.
    pub fn forward_unnormalized(&self, raw: &[T]) -> Result<Vec<T>> {
        Ok(self.pre_norm(raw)?.1)
    }

    fn pre_norm(&self, raw: &[T]) -> Result<(Option<Vec<T>>, Vec<T>)> {
        check_dim(self.input_dim(), raw.len())?;
        Ok(match self.layers.as_slice() {
            [only] => (None, only.apply(raw)),
            [first, second] => {
                let h: Vec<T> = first.apply(raw).into_iter().map(T::tanh).collect();
                let z = second.apply(&h);
                (Some(h), z)
            }
            _ => unreachable!("encoder has one or two layers"),
        })
    }

    /// Forward pass without touching any call counter.
    pub fn forward(&self, raw: &[T]) -> Result<ForwardTrace<T>> {
        let (hidden, raw_output) = self.pre_norm(raw)?;
        let norm = scalar::norm(&raw_output);
        if !(norm.as_f64() >= ZERO_NORM) {
            return Err(Error::ZeroNorm { norm: norm.as_f64() });
        }
        let output = Embedding::new(raw_output.iter().map(|&z| z / norm).collect())?;
        Ok(ForwardTrace { hidden, raw_output, norm, output })
    }

    /// Adds the gradient of `<upstream, encode(raw)>` to `grad`.
    ///
    /// Through the normalization `u = z / |z|` the gradient is
    /// `dz = (g - u <u, g>) / |z|`.
    pub fn backward_into(&self, raw: &[T], trace: &ForwardTrace<T>, upstream: &[T], grad: &mut GradientBuffer<T>) -> Result<()> {
        check_dim(self.output_dim(), upstream.len())?;
        let u = trace.output.as_slice();
        let ug = scalar::dot(u, upstream);
        let dz: Vec<T> = upstream.iter().zip(u).map(|(&g, &ui)| (g - ui * ug) / trace.norm).collect();
        self.backprop_from_output(raw, trace.hidden.as_deref(), &dz, grad)
    }

    /// Gradient of `<upstream, forward_unnormalized(raw)>`.
    pub fn backward_unnormalized(&self, raw: &[T], upstream: &[T]) -> Result<GradientBuffer<T>> {
        check_dim(self.output_dim(), upstream.len())?;
        let (hidden, _) = self.pre_norm(raw)?;
        let mut grad = Self::zeros_like(self);
        self.backprop_from_output(raw, hidden.as_deref(), upstream, &mut grad)?;
        Ok(grad)
    }

    fn backprop_from_output(&self, raw: &[T], hidden: Option<&[T]>, dz: &[T], grad: &mut GradientBuffer<T>) -> Result<()> {
        check_dim(self.num_values(), grad.num_values())?;
        match (self.layers.as_slice(), hidden) {
            ([only], None) => {
                only.backprop(raw, dz, &mut grad.layers[0], false);
            }
            ([first, second], Some(h)) => {
                let (g_first, g_second) = grad.layers.split_at_mut(1);
                let dh = second.backprop(h, dz, &mut g_second[0], true).expect("requested input gradient");
                let da: Vec<T> = dh.iter().zip(h).map(|(&d, &hv)| d * (T::one() - hv * hv)).collect();
                first.backprop(raw, &da, &mut g_first[0], false);
            }
            _ => unreachable!("trace does not match the encoder architecture"),
        }
        Ok(())
    }
}

/// Gradient of `<upstream, encode(params, raw)>` with respect to every parameter.
pub fn encode_backward<T: Scalar>(params: &EncoderParams<T>, raw: &[T], upstream: &[T]) -> Result<GradientBuffer<T>> {
    let trace = params.forward(raw)?;
    let mut grad = EncoderParams::zeros_like(params);
    params.backward_into(raw, &trace, upstream, &mut grad)?;
    Ok(grad)
}

/// Parameters plus a counter of forward calls made through [`Encoder::encode`].
#[derive(Debug)]
pub struct Encoder<T> {
    params: EncoderParams<T>,
    forward_calls: AtomicU64,
}

impl<T: Scalar> Encoder<T> {
    pub fn new(params: EncoderParams<T>) -> Self {
        Self { params, forward_calls: AtomicU64::new(0) }
    }

    pub fn params(&self) -> &EncoderParams<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut EncoderParams<T> {
        &mut self.params
    }

    pub fn into_params(self) -> EncoderParams<T> {
        self.params
    }

    pub fn encode(&self, raw: &[T]) -> Result<Embedding<T>> {
        Ok(self.encode_traced(raw)?.output)
    }

    pub fn encode_traced(&self, raw: &[T]) -> Result<ForwardTrace<T>> {
        self.forward_calls.fetch_add(1, Ordering::Relaxed);
        self.params.forward(raw)
    }

    pub fn forward_calls(&self) -> u64 {
        self.forward_calls.load(Ordering::Relaxed)
    }

    pub fn reset_forward_calls(&self) {
        self.forward_calls.store(0, Ordering::Relaxed);
    }
}

impl<T: Scalar> Clone for Encoder<T> {
    fn clone(&self) -> Self {
        Self { params: self.params.clone(), forward_calls: AtomicU64::new(self.forward_calls()) }
    }
}

/// Affine (optionally tanh-hidden) map followed by unit normalization.
pub fn encode<T: Scalar>(encoder: &Encoder<T>, raw: &[T]) -> Result<Embedding<T>> {
    encoder.encode(raw)
}

/// The image encoder and the text encoder of a model.
#[derive(Debug)]
pub struct EncoderPair<T> {
    pub image: Encoder<T>,
    pub text: Encoder<T>,
}

impl<T: Scalar> Clone for EncoderPair<T> {
    fn clone(&self) -> Self {
        Self { image: self.image.clone(), text: self.text.clone() }
    }
}

impl<T: Scalar> EncoderPair<T> {
    pub fn new(image: EncoderParams<T>, text: EncoderParams<T>) -> Self {
        Self { image: Encoder::new(image), text: Encoder::new(text) }
    }

    pub fn forward_calls(&self) -> u64 {
        self.image.forward_calls() + self.text.forward_calls()
    }

    pub fn reset_forward_calls(&self) {
        self.image.reset_forward_calls();
        self.text.reset_forward_calls();
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        write_model(&mut out, self.image.params(), self.text.params()).expect("writing to a Vec cannot fail");
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let bytes = fs::read(path)?;
        Self::from_bytes(&bytes)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cursor = bytes;
        let (image, text) = read_model(&mut cursor)?;
        if !cursor.is_empty() {
            return Err(Error::Format(format!("{} trailing bytes after model", cursor.len())));
        }
        Ok(Self::new(image, text))
    }
}

pub const MODEL_MAGIC: &[u8; 4] = b"FTAM";
pub const MODEL_VERSION: u32 = 1;

/// Writes the image then text encoder in the `FTAM` layout: magic, version,
/// then per encoder `input_dim`, `output_dim`, `hidden_dim` (0 when absent)
/// as u32 LE followed by each layer's weights then biases as f64 LE.
pub fn write_model<T: Scalar, W: Write>(out: &mut W, image: &EncoderParams<T>, text: &EncoderParams<T>) -> io::Result<()> {
    out.write_all(MODEL_MAGIC)?;
    out.write_all(&MODEL_VERSION.to_le_bytes())?;
    for params in [image, text] {
        for dim in [params.input_dim(), params.output_dim(), params.hidden_dim().unwrap_or(0)] {
            out.write_all(&(dim as u32).to_le_bytes())?;
        }
        for v in params.values() {
            out.write_all(&v.as_f64().to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_model<T: Scalar, R: Read>(input: &mut R) -> Result<(EncoderParams<T>, EncoderParams<T>)> {
    let mut magic = [0u8; 4];
    read_exact(input, &mut magic)?;
    if &magic != MODEL_MAGIC {
        return Err(Error::Format(format!("bad model magic {magic:?}")));
    }
    let version = read_u32(input)?;
    if version != MODEL_VERSION {
        return Err(Error::Format(format!("unsupported model version {version}")));
    }
    let image = read_encoder(input)?;
    let text = read_encoder(input)?;
    Ok((image, text))
}

fn read_encoder<T: Scalar, R: Read>(input: &mut R) -> Result<EncoderParams<T>> {
    let input_dim = read_u32(input)? as usize;
    let output_dim = read_u32(input)? as usize;
    let hidden = read_u32(input)? as usize;
    if input_dim == 0 || output_dim == 0 {
        return Err(Error::Format("encoder dimensions must be nonzero".into()));
    }
    let shapes = if hidden == 0 { vec![(input_dim, output_dim)] } else { vec![(input_dim, hidden), (hidden, output_dim)] };
    let mut layers = Vec::with_capacity(shapes.len());
    for (inputs, outputs) in shapes {
        let mut layer = Layer::zeros(inputs, outputs);
        for v in layer.values_mut() {
            let mut b = [0u8; 8];
            read_exact(input, &mut b)?;
            *v = T::lit(f64::from_le_bytes(b));
        }
        layers.push(layer);
    }
    let params = EncoderParams::from_layers(layers).map_err(|e| Error::Format(e.to_string()))?;
    if !params.is_finite() {
        return Err(Error::Format("non-finite encoder parameter".into()));
    }
    Ok(params)
}

fn read_u32<R: Read>(input: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(input, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub(crate) fn read_exact<R: Read>(input: &mut R, buf: &mut [u8]) -> Result<()> {
    input.read_exact(buf).map_err(|e| match e.kind() {
        io::ErrorKind::UnexpectedEof => Error::Format("truncated file".into()),
        _ => Error::Io(e),
    })
}
