//! Dense feed-forward networks with explicit reverse-mode gradients.

use std::io::{Read, Write};

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;

use super::{check_image, check_latent, Generator, Latent};
use crate::error::{Error, Result};
use crate::numerics::ImageGrid;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Relu,
    Sigmoid,
}

impl Activation {
    pub fn code(self) -> u8 {
        match self {
            Activation::Identity => 0,
            Activation::Relu => 1,
            Activation::Sigmoid => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Activation::Identity),
            1 => Some(Activation::Relu),
            2 => Some(Activation::Sigmoid),
            _ => None,
        }
    }

    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Relu => x.max(0.0),
            Activation::Sigmoid => 1.0 / (1.0 + (-x).exp()),
        }
    }

    /// Derivative expressed through the pre-activation and output.
    fn derivative(self, pre: f64, post: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => post * (1.0 - post),
        }
    }
}

/// One affine layer `act(W x + b)` with `W` of shape `(out, in)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
    pub activation: Activation,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DenseNet {
    layers: Vec<Layer>,
}

/// Where the incoming gradient of a backward pass is attached.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GradAt {
    /// Gradient with respect to the network output.
    Output,
    /// Gradient with respect to the last layer's pre-activation (logits).
    PreActivation,
}

/// Intermediate values kept by [`DenseNet::forward_batch`].
#[derive(Clone, Debug)]
pub struct DenseCache {
    inputs: Vec<Array2<f64>>,
    pre: Vec<Array2<f64>>,
    output: Array2<f64>,
}

impl DenseCache {
    pub fn output(&self) -> &Array2<f64> {
        &self.output
    }

    /// Pre-activation of the last layer.
    pub fn logits(&self) -> &Array2<f64> {
        self.pre.last().expect("network has at least one layer")
    }
}

/// Parameter gradients, one `(dW, db)` per layer.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseGrads {
    pub layers: Vec<(Array2<f64>, Array1<f64>)>,
}

impl DenseGrads {
    pub fn zeros_like(net: &DenseNet) -> Self {
        Self {
            layers: net
                .layers
                .iter()
                .map(|l| {
                    (
                        Array2::zeros(l.weights.raw_dim()),
                        Array1::zeros(l.bias.len()),
                    )
                })
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &DenseGrads) {
        for ((w, b), (ow, ob)) in self.layers.iter_mut().zip(&other.layers) {
            *w += ow;
            *b += ob;
        }
    }

    pub fn scale(&mut self, s: f64) {
        for (w, b) in &mut self.layers {
            w.mapv_inplace(|x| x * s);
            b.mapv_inplace(|x| x * s);
        }
    }

    /// Flattened `(weights, bias)` pairs for each layer in order.
    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in &self.layers {
            out.extend(w.iter());
            out.extend(b.iter());
        }
        out
    }

    pub fn is_all_zero(&self) -> bool {
        self.layers
            .iter()
            .all(|(w, b)| w.iter().all(|&x| x == 0.0) && b.iter().all(|&x| x == 0.0))
    }
}

impl DenseNet {
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidArgument(
                "network needs at least one layer".into(),
            ));
        }
        for (k, l) in layers.iter().enumerate() {
            if l.bias.len() != l.weights.nrows() {
                return Err(Error::shape(
                    format!("bias of length {} in layer {k}", l.weights.nrows()),
                    l.bias.len(),
                ));
            }
            if k > 0 && layers[k - 1].weights.nrows() != l.weights.ncols() {
                return Err(Error::shape(
                    format!("layer {k} input width {}", layers[k - 1].weights.nrows()),
                    l.weights.ncols(),
                ));
            }
            if l.weights
                .iter()
                .chain(l.bias.iter())
                .any(|x| !x.is_finite())
            {
                return Err(Error::InvalidArgument(format!(
                    "non-finite parameter in layer {k}"
                )));
            }
        }
        Ok(Self { layers })
    }

    /// Random initialisation: He-normal for ReLU layers, `N(0, 1/in)` otherwise;
    /// zero biases. `widths` lists every layer boundary, input first.
    pub fn random<R: Rng + ?Sized>(
        widths: &[usize],
        activations: &[Activation],
        rng: &mut R,
    ) -> Result<Self> {
        if widths.len() < 2 || activations.len() != widths.len() - 1 {
            return Err(Error::InvalidArgument(
                "need one activation per consecutive width pair".into(),
            ));
        }
        let layers = widths
            .windows(2)
            .zip(activations)
            .map(|(io, &activation)| {
                let (fan_in, fan_out) = (io[0], io[1]);
                let gain = if activation == Activation::Relu {
                    2.0
                } else {
                    1.0
                };
                let std = (gain / fan_in as f64).sqrt();
                let weights = Array2::from_shape_fn((fan_out, fan_in), |_| {
                    std * rng.sample::<f64, _>(StandardNormal)
                });
                Layer {
                    weights,
                    bias: Array1::zeros(fan_out),
                    activation,
                }
            })
            .collect();
        Self::new(layers)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weights.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().weights.nrows()
    }

    pub fn parameter_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    /// Forward pass over a batch laid out as rows.
    pub fn forward_batch(&self, x: ArrayView2<f64>) -> Result<DenseCache> {
        if x.ncols() != self.input_dim() {
            return Err(Error::shape(
                format!("input width {}", self.input_dim()),
                x.ncols(),
            ));
        }
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut cur = x.to_owned();
        for l in &self.layers {
            let mut p = cur.dot(&l.weights.t());
            p += &l.bias;
            let post = p.mapv(|v| l.activation.apply(v));
            inputs.push(cur);
            pre.push(p);
            cur = post;
        }
        Ok(DenseCache {
            inputs,
            pre,
            output: cur,
        })
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        let view = ArrayView2::from_shape((1, x.len()), x)
            .map_err(|e| Error::InvalidArgument(e.to_string()))?;
        Ok(self.forward_batch(view)?.output.into_raw_vec_and_offset().0)
    }

    /// Reverse pass. Returns the gradient with respect to the batch input and
    /// the parameter gradients summed over the batch.
    pub fn backward(
        &self,
        cache: &DenseCache,
        grad: ArrayView2<f64>,
        at: GradAt,
    ) -> Result<(Array2<f64>, DenseGrads)> {
        if grad.dim() != cache.output.dim() {
            return Err(Error::shape(
                format!("{:?}", cache.output.dim()),
                format!("{:?}", grad.dim()),
            ));
        }
        let n = self.layers.len();
        let mut grads = Vec::with_capacity(n);
        let mut upstream = grad.to_owned();
        for k in (0..n).rev() {
            let l = &self.layers[k];
            let d_pre = if k == n - 1 && at == GradAt::PreActivation {
                upstream
            } else {
                let post = if k == n - 1 {
                    &cache.output
                } else {
                    &cache.inputs[k + 1]
                };
                let mut d = upstream;
                ndarray::Zip::from(&mut d)
                    .and(&cache.pre[k])
                    .and(post)
                    .for_each(|g, &p, &o| *g *= l.activation.derivative(p, o));
                d
            };
            let d_w = d_pre.t().dot(&cache.inputs[k]);
            let d_b = d_pre.sum_axis(Axis(0));
            upstream = d_pre.dot(&l.weights);
            grads.push((d_w, d_b));
        }
        grads.reverse();
        Ok((upstream, DenseGrads { layers: grads }))
    }

    /// Applies `params -= step` layer by layer, where `step` has the layout of
    /// [`DenseGrads::flat`].
    pub fn for_each_param_mut(&mut self, mut f: impl FnMut(usize, &mut [f64])) {
        for (k, l) in self.layers.iter_mut().enumerate() {
            f(
                2 * k,
                l.weights.as_slice_mut().expect("weights are contiguous"),
            );
            f(
                2 * k + 1,
                l.bias.as_slice_mut().expect("bias is contiguous"),
            );
        }
    }

    /// Little-endian `DGN1` encoding.
    pub fn write_dgn1<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        out.write_all(b"DGN1")?;
        out.write_all(&(self.layers.len() as u32).to_le_bytes())?;
        for l in &self.layers {
            out.write_all(&(l.weights.nrows() as u32).to_le_bytes())?;
            out.write_all(&(l.weights.ncols() as u32).to_le_bytes())?;
            out.write_all(&[l.activation.code()])?;
            for w in l.weights.iter() {
                out.write_all(&w.to_le_bytes())?;
            }
            for b in l.bias.iter() {
                out.write_all(&b.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_dgn1<R: Read>(mut input: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        read_exact(&mut input, &mut magic)?;
        if &magic != b"DGN1" {
            return Err(Error::BadMagic { expected: "DGN1" });
        }
        let count = read_u32(&mut input)? as usize;
        if count == 0 || count > 4096 {
            return Err(Error::InvariantViolation(format!(
                "implausible layer count {count}"
            )));
        }
        let mut layers = Vec::with_capacity(count);
        for _ in 0..count {
            let rows = read_u32(&mut input)? as usize;
            let cols = read_u32(&mut input)? as usize;
            let mut code = [0u8; 1];
            read_exact(&mut input, &mut code)?;
            let activation = Activation::from_code(code[0]).ok_or_else(|| {
                Error::InvariantViolation(format!("unknown activation code {}", code[0]))
            })?;
            let weights = read_f64s(&mut input, rows * cols)?;
            let bias = read_f64s(&mut input, rows)?;
            layers.push(Layer {
                weights: Array2::from_shape_vec((rows, cols), weights)
                    .map_err(|e| Error::InvariantViolation(e.to_string()))?,
                bias: Array1::from(bias),
                activation,
            });
        }
        let mut rest = [0u8; 1];
        if input.read(&mut rest)? != 0 {
            return Err(Error::InvariantViolation(
                "trailing bytes after DGN1 payload".into(),
            ));
        }
        DenseNet::new(layers).map_err(|e| Error::InvariantViolation(e.to_string()))
    }
}

fn read_exact<R: Read>(input: &mut R, buf: &mut [u8]) -> Result<()> {
    input.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::Truncated("DGN1"),
        _ => Error::Io(e),
    })
}

fn read_u32<R: Read>(input: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(input, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_f64s<R: Read>(input: &mut R, n: usize) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(n.min(1 << 24));
    let mut b = [0u8; 8];
    for _ in 0..n {
        read_exact(input, &mut b)?;
        out.push(f64::from_le_bytes(b));
    }
    Ok(out)
}

/// A decoder network viewed as an image generator; the final layer must be
/// a sigmoid so outputs lie in `[0, 1]`.
#[derive(Clone, Debug)]
pub struct DecoderGenerator {
    net: DenseNet,
    height: usize,
    width: usize,
}

impl DecoderGenerator {
    pub fn new(net: DenseNet, height: usize, width: usize) -> Result<Self> {
        if net.output_dim() != height * width {
            return Err(Error::shape(
                format!("decoder output {}", height * width),
                net.output_dim(),
            ));
        }
        if net.layers().last().unwrap().activation != Activation::Sigmoid {
            return Err(Error::InvalidArgument(
                "decoder must end in a sigmoid layer".into(),
            ));
        }
        if net.input_dim() < 2 {
            return Err(Error::InvalidArgument(
                "latent dimension must be >= 2".into(),
            ));
        }
        Ok(Self { net, height, width })
    }

    /// Square decoder whose side is inferred from the output width.
    pub fn square(net: DenseNet) -> Result<Self> {
        let n = net.output_dim();
        let side = (n as f64).sqrt().round() as usize;
        if side * side != n {
            return Err(Error::InvalidArgument(format!(
                "decoder output {n} is not a square image"
            )));
        }
        Self::new(net, side, side)
    }

    pub fn net(&self) -> &DenseNet {
        &self.net
    }

    /// Latent gradient together with every parameter gradient.
    pub fn vjp_full(&self, z: &Latent, cotangent: &ImageGrid) -> Result<(Latent, DenseGrads)> {
        check_latent(self.net.input_dim(), z)?;
        check_image((self.height, self.width), cotangent)?;
        let x = ArrayView2::from_shape((1, z.dim()), z.as_slice()).expect("row view");
        let cache = self.net.forward_batch(x)?;
        let g = ArrayView2::from_shape((1, cotangent.len()), cotangent.values()).expect("row view");
        let (dx, grads) = self.net.backward(&cache, g, GradAt::Output)?;
        Ok((Latent::new(dx.into_raw_vec_and_offset().0)?, grads))
    }
}

impl Generator for DecoderGenerator {
    fn latent_dim(&self) -> usize {
        self.net.input_dim()
    }

    fn image_size(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    fn forward(&self, z: &Latent) -> Result<ImageGrid> {
        check_latent(self.net.input_dim(), z)?;
        ImageGrid::new(self.height, self.width, self.net.forward(z)?)
    }

    fn vjp(&self, z: &Latent, cotangent: &ImageGrid) -> Result<Latent> {
        Ok(self.vjp_full(z, cotangent)?.0)
    }
}
