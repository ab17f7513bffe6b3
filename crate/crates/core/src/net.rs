//! Fully connected networks with hand-written reverse-mode differentiation.
//!
//! Parameters live in one flat [`ParamVector`] so optimizers, checkpoints and
//! finite-difference checks can treat them as a single vector. Each layer
//! stores its weight matrix (`out x in`, row-major) followed by its bias.

use std::fmt;
use std::str::FromStr;

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, ArrayViewMut2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Nonlinearity applied after every hidden layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Relu,
    Silu,
}

impl Activation {
    #[inline]
    fn apply<T: Scalar>(self, z: T) -> T {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Relu => z.max(T::zero()),
            Activation::Silu => z / (T::one() + (-z).exp()),
        }
    }

    #[inline]
    fn derivative<T: Scalar>(self, z: T) -> T {
        match self {
            Activation::Tanh => {
                let a = z.tanh();
                T::one() - a * a
            }
            Activation::Relu => {
                if z > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Activation::Silu => {
                let sig = T::one() / (T::one() + (-z).exp());
                sig * (T::one() + z * (T::one() - sig))
            }
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Activation::Tanh => "tanh",
            Activation::Relu => "relu",
            Activation::Silu => "silu",
        })
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "tanh" => Ok(Activation::Tanh),
            "relu" => Ok(Activation::Relu),
            "silu" => Ok(Activation::Silu),
            other => Err(Error::config(format!("unknown activation `{other}`"))),
        }
    }
}

/// How a scalar coordinate (`t` or `alpha`) is fed to the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CoordEmbedding {
    /// The coordinate itself, one input.
    Raw,
    /// `sin(2^j pi c), cos(2^j pi c)` for `j < frequencies`.
    Sinusoidal { frequencies: usize },
}

impl Default for CoordEmbedding {
    fn default() -> Self {
        CoordEmbedding::Sinusoidal { frequencies: 4 }
    }
}

impl CoordEmbedding {
    pub fn dim(self) -> usize {
        match self {
            CoordEmbedding::Raw => 1,
            CoordEmbedding::Sinusoidal { frequencies } => 2 * frequencies,
        }
    }

    /// Writes the embedding of `c` into `out`, which must have length [`Self::dim`].
    pub fn embed<T: Scalar>(self, c: T, out: &mut [T]) {
        debug_assert_eq!(out.len(), self.dim());
        match self {
            CoordEmbedding::Raw => out[0] = c,
            CoordEmbedding::Sinusoidal { frequencies } => {
                let pi = T::of(std::f64::consts::PI);
                let mut scale = pi;
                for j in 0..frequencies {
                    let arg = scale * c;
                    out[2 * j] = arg.sin();
                    out[2 * j + 1] = arg.cos();
                    scale = scale + scale;
                }
            }
        }
    }
}

impl fmt::Display for CoordEmbedding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CoordEmbedding::Raw => f.write_str("raw"),
            CoordEmbedding::Sinusoidal { frequencies } => write!(f, "sinusoidal({frequencies})"),
        }
    }
}

impl FromStr for CoordEmbedding {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "raw" {
            return Ok(CoordEmbedding::Raw);
        }
        if let Some(inner) = s
            .strip_prefix("sinusoidal(")
            .and_then(|r| r.strip_suffix(')'))
        {
            let frequencies = inner
                .trim()
                .parse()
                .map_err(|_| Error::config(format!("bad frequency count in `{s}`")))?;
            if frequencies == 0 {
                return Err(Error::config(
                    "sinusoidal embedding needs at least one frequency",
                ));
            }
            return Ok(CoordEmbedding::Sinusoidal { frequencies });
        }
        Err(Error::config(format!("unknown coordinate embedding `{s}`")))
    }
}

/// Shape of a fully connected network.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetSpec {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub output_dim: usize,
    pub activation: Activation,
    pub coord_embedding: CoordEmbedding,
}

impl NetSpec {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 {
            return Err(Error::config(
                "network input and output dims must be positive",
            ));
        }
        if self.hidden_dims.contains(&0) {
            return Err(Error::config("hidden layer widths must be positive"));
        }
        Ok(())
    }

    /// `(in, out)` of every affine layer, input side first.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden_dims.len() + 1);
        let mut prev = self.input_dim;
        for &h in &self.hidden_dims {
            dims.push((prev, h));
            prev = h;
        }
        dims.push((prev, self.output_dim));
        dims
    }

    pub fn layout(&self) -> Vec<ParamBlock> {
        self.layer_dims()
            .into_iter()
            .enumerate()
            .flat_map(|(layer, (i, o))| {
                [
                    ParamBlock {
                        layer,
                        kind: BlockKind::Weight,
                        rows: o,
                        cols: i,
                    },
                    ParamBlock {
                        layer,
                        kind: BlockKind::Bias,
                        rows: o,
                        cols: 1,
                    },
                ]
            })
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.layer_dims().iter().map(|(i, o)| o * (i + 1)).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockKind {
    Weight,
    Bias,
}

/// One contiguous block of a [`ParamVector`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamBlock {
    pub layer: usize,
    pub kind: BlockKind,
    pub rows: usize,
    pub cols: usize,
}

impl ParamBlock {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Flat parameter (or gradient) storage with its block layout.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector<T> {
    values: Vec<T>,
    layout: Vec<ParamBlock>,
}

impl<T: Scalar> ParamVector<T> {
    pub fn new(values: Vec<T>, layout: Vec<ParamBlock>) -> Result<Self> {
        let expected: usize = layout.iter().map(ParamBlock::len).sum();
        if values.len() != expected {
            return Err(Error::config(format!(
                "parameter vector has {} values, layout expects {expected}",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::config("parameter vector contains non-finite values"));
        }
        Ok(ParamVector { values, layout })
    }

    pub fn zeros(layout: Vec<ParamBlock>) -> Self {
        let n = layout.iter().map(ParamBlock::len).sum();
        ParamVector {
            values: vec![T::zero(); n],
            layout,
        }
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    pub fn layout(&self) -> &[ParamBlock] {
        &self.layout
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn into_values(self) -> Vec<T> {
        self.values
    }

    /// Weight and bias views of one affine layer.
    fn layer(
        &self,
        offset: usize,
        (i, o): (usize, usize),
    ) -> (ArrayView2<'_, T>, ArrayView1<'_, T>) {
        let w = ArrayView2::from_shape((o, i), &self.values[offset..offset + o * i])
            .expect("layout checked at construction");
        let b = ArrayView1::from(&self.values[offset + o * i..offset + o * (i + 1)]);
        (w, b)
    }

    fn layer_mut(
        &mut self,
        offset: usize,
        (i, o): (usize, usize),
    ) -> (ArrayViewMut2<'_, T>, &mut [T]) {
        let (w, rest) = self.values[offset..offset + o * (i + 1)].split_at_mut(o * i);
        (
            ArrayViewMut2::from_shape((o, i), w).expect("layout checked at construction"),
            rest,
        )
    }
}

/// Intermediate values recorded by [`Mlp::forward_batch_tape`].
#[derive(Debug, Clone)]
pub struct Tape<T> {
    /// Input of every affine layer (`batch x in`).
    layer_inputs: Vec<Array2<T>>,
    /// Pre-activations of every hidden layer.
    pre_activations: Vec<Array2<T>>,
}

/// Multi-layer perceptron: affine layers with an activation between them,
/// linear output.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp<T> {
    spec: NetSpec,
    params: ParamVector<T>,
}

impl<T: Scalar> Mlp<T> {
    /// Fan-in scaled uniform initialization, `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`
    /// for weights and biases alike.
    pub fn init(spec: NetSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut values = Vec::with_capacity(spec.param_count());
        for (i, o) in spec.layer_dims() {
            let bound = 1.0 / (i as f64).sqrt();
            for _ in 0..o * (i + 1) {
                values.push(T::of(rng.gen_range(-bound..bound)));
            }
        }
        let params = ParamVector::new(values, spec.layout())?;
        Ok(Mlp { spec, params })
    }

    pub fn zeros(spec: NetSpec) -> Result<Self> {
        spec.validate()?;
        let params = ParamVector::zeros(spec.layout());
        Ok(Mlp { spec, params })
    }

    pub fn from_params(spec: NetSpec, params: ParamVector<T>) -> Result<Self> {
        spec.validate()?;
        if params.layout() != spec.layout().as_slice() {
            return Err(Error::config(
                "parameter layout does not match network spec",
            ));
        }
        Ok(Mlp { spec, params })
    }

    pub fn spec(&self) -> &NetSpec {
        &self.spec
    }

    pub fn params(&self) -> &ParamVector<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamVector<T> {
        &mut self.params
    }

    fn check_input(&self, cols: usize) -> Result<()> {
        if cols != self.spec.input_dim {
            return Err(Error::config(format!(
                "network expects input of length {}, got {cols}",
                self.spec.input_dim
            )));
        }
        Ok(())
    }

    /// Evaluates one input vector.
    pub fn forward(&self, input: ArrayView1<'_, T>) -> Result<Array1<T>> {
        self.check_input(input.len())?;
        let mut h = input.to_owned();
        let dims = self.spec.layer_dims();
        let last = dims.len() - 1;
        let mut offset = 0;
        for (l, &d) in dims.iter().enumerate() {
            let (w, b) = self.params.layer(offset, d);
            let mut z = w.dot(&h);
            z += &b;
            if l < last {
                z.mapv_inplace(|v| self.spec.activation.apply(v));
            }
            h = z;
            offset += d.1 * (d.0 + 1);
        }
        Ok(h)
    }

    /// Evaluates a batch (one sample per row).
    pub fn forward_batch(&self, input: ArrayView2<'_, T>) -> Result<Array2<T>> {
        self.check_input(input.ncols())?;
        let mut h = input.to_owned();
        let dims = self.spec.layer_dims();
        let last = dims.len() - 1;
        let mut offset = 0;
        for (l, &d) in dims.iter().enumerate() {
            let (w, b) = self.params.layer(offset, d);
            let mut z = h.dot(&w.t());
            z += &b;
            if l < last {
                z.mapv_inplace(|v| self.spec.activation.apply(v));
            }
            h = z;
            offset += d.1 * (d.0 + 1);
        }
        Ok(h)
    }

    /// Batched forward pass that keeps what [`Self::backward_batch`] needs.
    pub fn forward_batch_tape(&self, input: ArrayView2<'_, T>) -> Result<(Array2<T>, Tape<T>)> {
        self.check_input(input.ncols())?;
        let dims = self.spec.layer_dims();
        let last = dims.len() - 1;
        let mut tape = Tape {
            layer_inputs: Vec::with_capacity(dims.len()),
            pre_activations: Vec::with_capacity(last),
        };
        let mut h = input.to_owned();
        let mut offset = 0;
        for (l, &d) in dims.iter().enumerate() {
            let (w, b) = self.params.layer(offset, d);
            let mut z = h.dot(&w.t());
            z += &b;
            tape.layer_inputs.push(h);
            if l < last {
                let act = z.mapv(|v| self.spec.activation.apply(v));
                tape.pre_activations.push(z);
                h = act;
            } else {
                h = z;
            }
            offset += d.1 * (d.0 + 1);
        }
        Ok((h, tape))
    }

    /// Reverse sweep: gradients of `sum_b <output_b, cotangent_b>` with respect
    /// to the parameters and to the inputs.
    pub fn backward_batch(
        &self,
        tape: &Tape<T>,
        cotangent: ArrayView2<'_, T>,
    ) -> Result<(ParamVector<T>, Array2<T>)> {
        let dims = self.spec.layer_dims();
        let batch = tape.layer_inputs[0].nrows();
        if cotangent.dim() != (batch, self.spec.output_dim) {
            return Err(Error::config(format!(
                "cotangent shape {:?} does not match output ({batch}, {})",
                cotangent.dim(),
                self.spec.output_dim
            )));
        }
        let mut grad = ParamVector::zeros(self.spec.layout());
        let offsets: Vec<usize> = dims
            .iter()
            .scan(0, |acc, &(i, o)| {
                let start = *acc;
                *acc += o * (i + 1);
                Some(start)
            })
            .collect();

        let mut delta = cotangent.to_owned();
        for l in (0..dims.len()).rev() {
            let d = dims[l];
            if l < dims.len() - 1 {
                let act = self.spec.activation;
                ndarray::Zip::from(&mut delta)
                    .and(&tape.pre_activations[l])
                    .for_each(|g, &z| *g *= act.derivative(z));
            }
            {
                let (mut gw, gb) = grad.layer_mut(offsets[l], d);
                ndarray::linalg::general_mat_mul(
                    T::one(),
                    &delta.t(),
                    &tape.layer_inputs[l],
                    T::zero(),
                    &mut gw,
                );
                let sums = delta.sum_axis(Axis(0));
                gb.copy_from_slice(sums.as_slice().expect("contiguous"));
            }
            let (w, _) = self.params.layer(offsets[l], d);
            delta = delta.dot(&w);
        }
        Ok((grad, delta))
    }

    /// Gradients of `<forward(input), cotangent>` for a single input.
    pub fn backward(
        &self,
        input: ArrayView1<'_, T>,
        cotangent: ArrayView1<'_, T>,
    ) -> Result<(ParamVector<T>, Array1<T>)> {
        if cotangent.len() != self.spec.output_dim {
            return Err(Error::config(format!(
                "cotangent has length {}, network output is {}",
                cotangent.len(),
                self.spec.output_dim
            )));
        }
        let x = input.insert_axis(Axis(0));
        let (_, tape) = self.forward_batch_tape(x)?;
        let (g, dx) = self.backward_batch(&tape, cotangent.insert_axis(Axis(0)))?;
        Ok((g, dx.slice(s![0, ..]).to_owned()))
    }
}
