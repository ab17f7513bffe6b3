//! Learned vector fields: an [`Mlp`] plus the convention for packing frames
//! and coordinates into its input.
//!
//! | kind      | input                               | output            |
//! |-----------|-------------------------------------|-------------------|
//! | `flow`    | `[x, emb(t)]`                       | `f(x, t)`         |
//! | `biflow`  | `[x, emb(t), emb(alpha)]`           | `[f_v ; f_n]`     |
//! | `condiff` | `[z, x_prev, emb(t)]`               | `f(z, x_prev, t)` |

use std::fmt;
use std::str::FromStr;

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::error::{Error, Result};
use crate::net::{Activation, CoordEmbedding, Mlp, NetSpec};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ModelKind {
    /// Plain video flow trained on consecutive frames.
    Flow,
    /// Joint field with a temporal branch and a denoising branch.
    BiFlow,
    /// Conditional flow from noise to the next frame given the previous one.
    ConDiff,
}

impl ModelKind {
    pub const ALL: [ModelKind; 3] = [ModelKind::Flow, ModelKind::BiFlow, ModelKind::ConDiff];

    pub fn input_dim(self, frame_dim: usize, embedding: CoordEmbedding) -> usize {
        let e = embedding.dim();
        match self {
            ModelKind::Flow => frame_dim + e,
            ModelKind::BiFlow => frame_dim + 2 * e,
            ModelKind::ConDiff => 2 * frame_dim + e,
        }
    }

    pub fn output_dim(self, frame_dim: usize) -> usize {
        match self {
            ModelKind::BiFlow => 2 * frame_dim,
            ModelKind::Flow | ModelKind::ConDiff => frame_dim,
        }
    }

    pub fn net_spec(
        self,
        frame_dim: usize,
        hidden_dims: Vec<usize>,
        activation: Activation,
        coord_embedding: CoordEmbedding,
    ) -> NetSpec {
        NetSpec {
            input_dim: self.input_dim(frame_dim, coord_embedding),
            hidden_dims,
            output_dim: self.output_dim(frame_dim),
            activation,
            coord_embedding,
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::Flow => "flow",
            ModelKind::BiFlow => "biflow",
            ModelKind::ConDiff => "condiff",
        })
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "flow" => Ok(ModelKind::Flow),
            "biflow" => Ok(ModelKind::BiFlow),
            "condiff" => Ok(ModelKind::ConDiff),
            other => Err(Error::config(format!("unknown model kind `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FieldModel<T> {
    kind: ModelKind,
    frame_dim: usize,
    net: Mlp<T>,
}

impl<T: Scalar> FieldModel<T> {
    /// Wraps a network after checking its dims against `kind` and `frame_dim`.
    pub fn new(kind: ModelKind, frame_dim: usize, net: Mlp<T>) -> Result<Self> {
        let spec = net.spec();
        let want_in = kind.input_dim(frame_dim, spec.coord_embedding);
        let want_out = kind.output_dim(frame_dim);
        if spec.input_dim != want_in || spec.output_dim != want_out {
            return Err(Error::config(format!(
                "{kind} model on frames of {frame_dim} needs a {want_in} -> {want_out} network, got {} -> {}",
                spec.input_dim, spec.output_dim
            )));
        }
        Ok(FieldModel {
            kind,
            frame_dim,
            net,
        })
    }

    pub fn init(
        kind: ModelKind,
        frame_dim: usize,
        hidden_dims: Vec<usize>,
        activation: Activation,
        coord_embedding: CoordEmbedding,
        seed: u64,
    ) -> Result<Self> {
        let spec = kind.net_spec(frame_dim, hidden_dims, activation, coord_embedding);
        FieldModel::new(kind, frame_dim, Mlp::init(spec, seed)?)
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn frame_dim(&self) -> usize {
        self.frame_dim
    }

    pub fn net(&self) -> &Mlp<T> {
        &self.net
    }

    pub fn net_mut(&mut self) -> &mut Mlp<T> {
        &mut self.net
    }

    pub fn into_net(self) -> Mlp<T> {
        self.net
    }

    fn require(&self, kind: ModelKind) -> Result<()> {
        if self.kind != kind {
            return Err(Error::config(format!(
                "operation needs a {kind} model, got {}",
                self.kind
            )));
        }
        Ok(())
    }

    fn check_frames(&self, cols: usize) -> Result<()> {
        if cols != self.frame_dim {
            return Err(Error::config(format!(
                "model expects frames of {} values, got {cols}",
                self.frame_dim
            )));
        }
        Ok(())
    }

    /// Packs a batch of frames (and conditions) with per-row coordinates.
    ///
    /// `alpha` must be present exactly for bi-flow models and `cond` exactly
    /// for conditional models.
    pub fn pack_inputs(
        &self,
        x: ArrayView2<'_, T>,
        cond: Option<ArrayView2<'_, T>>,
        t: ArrayView1<'_, T>,
        alpha: Option<ArrayView1<'_, T>>,
    ) -> Result<Array2<T>> {
        self.check_frames(x.ncols())?;
        let rows = x.nrows();
        if t.len() != rows || alpha.is_some_and(|a| a.len() != rows) {
            return Err(Error::config("coordinate count must match batch size"));
        }
        match (self.kind, cond.is_some(), alpha.is_some()) {
            (ModelKind::Flow, false, false)
            | (ModelKind::BiFlow, false, true)
            | (ModelKind::ConDiff, true, false) => {}
            _ => {
                return Err(Error::config(format!(
                    "wrong conditioning inputs for a {} model",
                    self.kind
                )))
            }
        }
        let emb = self.net.spec().coord_embedding;
        let e = emb.dim();
        let d = self.frame_dim;
        let mut input = Array2::zeros((rows, self.net.spec().input_dim));
        input.slice_mut(s![.., ..d]).assign(&x);
        let mut col = d;
        if let Some(c) = cond {
            if c.dim() != x.dim() {
                return Err(Error::config("condition batch must match frame batch"));
            }
            input.slice_mut(s![.., d..2 * d]).assign(&c);
            col = 2 * d;
        }
        for (r, mut row) in input.axis_iter_mut(Axis(0)).enumerate() {
            let row = row.as_slice_mut().expect("row-major");
            emb.embed(t[r], &mut row[col..col + e]);
            if let Some(a) = alpha {
                emb.embed(a[r], &mut row[col + e..col + 2 * e]);
            }
        }
        Ok(input)
    }

    fn eval_single(
        &self,
        x: ArrayView1<'_, T>,
        cond: Option<ArrayView1<'_, T>>,
        t: T,
        alpha: Option<T>,
    ) -> Result<Array1<T>> {
        let tt = [t];
        let aa = alpha.map(|a| [a]);
        let input = self.pack_inputs(
            x.insert_axis(Axis(0)),
            cond.map(|c| c.insert_axis(Axis(0))),
            ArrayView1::from(&tt),
            aa.as_ref().map(ArrayView1::from),
        )?;
        let out = self.net.forward(input.row(0))?;
        Ok(out)
    }

    /// Plain flow velocity `f(x, t)`.
    pub fn velocity(&self, x: ArrayView1<'_, T>, t: T) -> Result<Array1<T>> {
        self.require(ModelKind::Flow)?;
        self.eval_single(x, None, t, None)
    }

    /// Bi-flow branches `(f_v(x, t, alpha), f_n(x, t, alpha))`.
    pub fn branches(&self, x: ArrayView1<'_, T>, t: T, alpha: T) -> Result<(Array1<T>, Array1<T>)> {
        self.require(ModelKind::BiFlow)?;
        let out = self.eval_single(x, None, t, Some(alpha))?;
        let d = self.frame_dim;
        Ok((out.slice(s![..d]).to_owned(), out.slice(s![d..]).to_owned()))
    }

    /// Conditional velocity `f(z, x_prev, t)`.
    pub fn conditional_velocity(
        &self,
        z: ArrayView1<'_, T>,
        cond: ArrayView1<'_, T>,
        t: T,
    ) -> Result<Array1<T>> {
        self.require(ModelKind::ConDiff)?;
        if cond.len() != self.frame_dim {
            return Err(Error::config("condition frame has the wrong length"));
        }
        self.eval_single(z, Some(cond), t, None)
    }
}
