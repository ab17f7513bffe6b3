//! Training losses over bilinear interpolants of consecutive frames.
//!
//! Every loss is the batch mean of a squared Euclidean norm,
//! `(1/B) sum_b ||f_b - target_b||^2`, and comes back together with its exact
//! parameter gradient.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Zip};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::model::{FieldModel, ModelKind};
use crate::net::ParamVector;
use crate::scalar::Scalar;
use crate::video::{FramePair, PairSampler};

/// Position in the time/noise plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlendCoords<T> {
    pub t: T,
    pub alpha: T,
}

impl<T: Scalar> BlendCoords<T> {
    pub fn new(t: T, alpha: T, alpha_max: T) -> Result<Self> {
        if !(t >= T::zero() && t <= T::one()) {
            return Err(Error::config(format!("t = {t} outside [0, 1]")));
        }
        if !(alpha >= T::zero() && alpha <= alpha_max) {
            return Err(Error::config(format!(
                "alpha = {alpha} outside [0, {alpha_max}]"
            )));
        }
        Ok(BlendCoords { t, alpha })
    }
}

/// One bi-flow training sample: a consecutive pair, its noise draw and coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSample<T> {
    pub pair: FramePair<T>,
    pub noise: Array1<T>,
    pub coords: BlendCoords<T>,
}

/// `(1 - t) x0 + t x1 + alpha n`, exact at both time endpoints.
pub fn bilinear_interp<T: Scalar>(
    x0: ArrayView1<'_, T>,
    x1: ArrayView1<'_, T>,
    noise: ArrayView1<'_, T>,
    coords: BlendCoords<T>,
) -> Result<Array1<T>> {
    if x0.len() != x1.len() || x0.len() != noise.len() {
        return Err(Error::config("interpolation operands differ in length"));
    }
    let mut out = Array1::zeros(x0.len());
    Zip::from(&mut out)
        .and(&x0)
        .and(&x1)
        .and(&noise)
        .for_each(|o, &a, &b, &n| *o = (T::one() - coords.t) * a + coords.t * b + coords.alpha * n);
    Ok(out)
}

/// Row-wise [`bilinear_interp`] over a batch.
pub fn bilinear_interp_batch<T: Scalar>(
    x0: ArrayView2<'_, T>,
    x1: ArrayView2<'_, T>,
    noise: ArrayView2<'_, T>,
    t: ArrayView1<'_, T>,
    alpha: ArrayView1<'_, T>,
) -> Result<Array2<T>> {
    if x0.dim() != x1.dim()
        || x0.dim() != noise.dim()
        || t.len() != x0.nrows()
        || alpha.len() != x0.nrows()
    {
        return Err(Error::config("interpolation batch shapes disagree"));
    }
    let mut out = Array2::zeros(x0.dim());
    for r in 0..x0.nrows() {
        let (tr, ar) = (t[r], alpha[r]);
        Zip::from(out.row_mut(r))
            .and(x0.row(r))
            .and(x1.row(r))
            .and(noise.row(r))
            .for_each(|o, &a, &b, &n| *o = (T::one() - tr) * a + tr * b + ar * n);
    }
    Ok(out)
}

/// Loss value with its parameter gradient.
#[derive(Debug, Clone)]
pub struct LossOutput<T> {
    pub loss: T,
    /// The individual squared-error terms, before weighting (one for the
    /// single-target losses, video then noise for bi-flow).
    pub terms: Vec<T>,
    pub grad: ParamVector<T>,
}

/// Relative weights of the video and noise terms of the bi-flow loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BiflowWeights {
    pub video: f64,
    pub noise: f64,
}

impl Default for BiflowWeights {
    fn default() -> Self {
        BiflowWeights {
            video: 1.0,
            noise: 1.0,
        }
    }
}

/// Batch-mean squared error of `out` against `target` and its cotangent, scaled by `weight`.
fn mse_term<T: Scalar>(
    out: ArrayView2<'_, T>,
    target: ArrayView2<'_, T>,
    weight: T,
    cotangent: &mut ndarray::ArrayViewMut2<'_, T>,
) -> T {
    let inv_b = T::one() / T::of_usize(out.nrows());
    let two = T::of(2.0);
    let mut sum = T::zero();
    Zip::from(cotangent)
        .and(&out)
        .and(&target)
        .for_each(|c, &o, &y| {
            let r = o - y;
            sum += r * r;
            *c = weight * two * inv_b * r;
        });
    sum * inv_b
}

fn finite_or_error<T: Scalar>(loss: T) -> Result<()> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(Error::Training {
            batch: 0,
            message: format!("non-finite loss {loss}"),
        })
    }
}

fn single_target_loss<T: Scalar>(
    model: &FieldModel<T>,
    input: Array2<T>,
    target: ArrayView2<'_, T>,
) -> Result<LossOutput<T>> {
    let (out, tape) = model.net().forward_batch_tape(input.view())?;
    let mut cot = Array2::zeros(out.dim());
    let loss = mse_term(out.view(), target, T::one(), &mut cot.view_mut());
    finite_or_error(loss)?;
    let (grad, _) = model.net().backward_batch(&tape, cot.view())?;
    Ok(LossOutput {
        loss,
        terms: vec![loss],
        grad,
    })
}

/// Flow matching from source samples `x0` to targets `x1`: regress
/// `f(x0 + t (x1 - x0), t)` onto `x1 - x0`.
pub fn loss_flow_matching<T: Scalar>(
    model: &FieldModel<T>,
    x0: ArrayView2<'_, T>,
    x1: ArrayView2<'_, T>,
    t: ArrayView1<'_, T>,
) -> Result<LossOutput<T>> {
    if model.kind() != ModelKind::Flow {
        return Err(Error::config("flow matching needs a flow model"));
    }
    if x0.dim() != x1.dim() {
        return Err(Error::config("source and target batches differ in shape"));
    }
    let zeros = Array2::zeros(x0.dim());
    let alpha = Array1::zeros(x0.nrows());
    let xt = bilinear_interp_batch(x0, x1, zeros.view(), t, alpha.view())?;
    let target = &x1 - &x0;
    let input = model.pack_inputs(xt.view(), None, t, None)?;
    single_target_loss(model, input, target.view())
}

/// Video flow: flow matching where `(x0, x1)` are consecutive frames drawn
/// from the pair coupling.
pub fn loss_video_flow<T: Scalar>(
    model: &FieldModel<T>,
    x0: ArrayView2<'_, T>,
    x1: ArrayView2<'_, T>,
    t: ArrayView1<'_, T>,
) -> Result<LossOutput<T>> {
    loss_flow_matching(model, x0, x1, t)
}

/// Joint objective: video branch toward `x1 - x0`, noise branch toward `n`,
/// both evaluated at `x0 + t (x1 - x0) + alpha n`.
pub fn loss_biflow<T: Scalar>(
    model: &FieldModel<T>,
    x0: ArrayView2<'_, T>,
    x1: ArrayView2<'_, T>,
    noise: ArrayView2<'_, T>,
    t: ArrayView1<'_, T>,
    alpha: ArrayView1<'_, T>,
    weights: BiflowWeights,
) -> Result<LossOutput<T>> {
    if model.kind() != ModelKind::BiFlow {
        return Err(Error::config("bi-flow loss needs a bi-flow model"));
    }
    let x = bilinear_interp_batch(x0, x1, noise, t, alpha)?;
    let input = model.pack_inputs(x.view(), None, t, Some(alpha))?;
    let (out, tape) = model.net().forward_batch_tape(input.view())?;
    let d = model.frame_dim();
    let displacement = &x1 - &x0;
    let mut cot = Array2::zeros(out.dim());
    let (wv, wn) = (T::of(weights.video), T::of(weights.noise));
    let video = mse_term(
        out.slice(s![.., ..d]),
        displacement.view(),
        wv,
        &mut cot.slice_mut(s![.., ..d]),
    );
    let denoise = mse_term(
        out.slice(s![.., d..]),
        noise,
        wn,
        &mut cot.slice_mut(s![.., d..]),
    );
    let loss = wv * video + wn * denoise;
    finite_or_error(loss)?;
    let (grad, _) = model.net().backward_batch(&tape, cot.view())?;
    Ok(LossOutput {
        loss,
        terms: vec![video, denoise],
        grad,
    })
}

/// [`loss_biflow`] over explicit samples.
pub fn loss_biflow_samples<T: Scalar>(
    model: &FieldModel<T>,
    samples: &[TrainSample<T>],
    weights: BiflowWeights,
) -> Result<LossOutput<T>> {
    if samples.is_empty() {
        return Err(Error::config("empty batch"));
    }
    let d = samples[0].pair.x0.len();
    let b = samples.len();
    let mut x0 = Array2::zeros((b, d));
    let mut x1 = Array2::zeros((b, d));
    let mut n = Array2::zeros((b, d));
    let mut t = Array1::zeros(b);
    let mut a = Array1::zeros(b);
    for (r, s) in samples.iter().enumerate() {
        if s.pair.x0.len() != d || s.pair.x1.len() != d || s.noise.len() != d {
            return Err(Error::config("samples differ in frame length"));
        }
        x0.row_mut(r).assign(&s.pair.x0);
        x1.row_mut(r).assign(&s.pair.x1);
        n.row_mut(r).assign(&s.noise);
        t[r] = s.coords.t;
        a[r] = s.coords.alpha;
    }
    loss_biflow(
        model,
        x0.view(),
        x1.view(),
        n.view(),
        t.view(),
        a.view(),
        weights,
    )
}

/// Conditional baseline: from `z0` toward the next frame `x1`, conditioned on
/// the previous frame `x0`. Regress `f([z_t ; x0], t)` onto `x1 - z0` with
/// `z_t = z0 + t (x1 - z0)`.
pub fn loss_condiff<T: Scalar>(
    model: &FieldModel<T>,
    x0: ArrayView2<'_, T>,
    x1: ArrayView2<'_, T>,
    z0: ArrayView2<'_, T>,
    t: ArrayView1<'_, T>,
) -> Result<LossOutput<T>> {
    if model.kind() != ModelKind::ConDiff {
        return Err(Error::config("conditional loss needs a condiff model"));
    }
    if x0.dim() != x1.dim() || z0.dim() != x1.dim() {
        return Err(Error::config("conditional batch shapes disagree"));
    }
    let zeros = Array2::zeros(x1.dim());
    let alpha = Array1::zeros(x1.nrows());
    let zt = bilinear_interp_batch(z0, x1, zeros.view(), t, alpha.view())?;
    let target = &x1 - &z0;
    let input = model.pack_inputs(zt.view(), Some(x0), t, None)?;
    single_target_loss(model, input, target.view())
}

/// A drawn training batch. For bi-flow `noise` is `n`; for condiff it is the
/// source draw `z0`; plain flow ignores it.
#[derive(Debug, Clone)]
pub struct TrainBatch<T> {
    pub x0: Array2<T>,
    pub x1: Array2<T>,
    pub noise: Array2<T>,
    pub t: Array1<T>,
    pub alpha: Array1<T>,
}

impl<T: Scalar> TrainBatch<T> {
    /// Draws pairs from the coupling, then independent per-sample `t ~ U(0,1)`,
    /// `alpha ~ U(0, alpha_max)` and standard normal noise, in that order.
    pub fn draw<R: Rng>(
        sampler: &PairSampler<'_, T>,
        batch: usize,
        alpha_max: f64,
        rng: &mut R,
    ) -> Self {
        let (x0, x1) = sampler.sample_batch(batch, rng);
        let t = Array1::from_shape_fn(batch, |_| T::of(rng.gen::<f64>()));
        let alpha = Array1::from_shape_fn(batch, |_| T::of(alpha_max * rng.gen::<f64>()));
        let noise =
            Array2::from_shape_fn(x0.dim(), |_| T::of(rng.sample::<f64, _>(StandardNormal)));
        TrainBatch {
            x0,
            x1,
            noise,
            t,
            alpha,
        }
    }

    pub fn loss(&self, model: &FieldModel<T>, weights: BiflowWeights) -> Result<LossOutput<T>> {
        match model.kind() {
            ModelKind::Flow => {
                loss_video_flow(model, self.x0.view(), self.x1.view(), self.t.view())
            }
            ModelKind::BiFlow => loss_biflow(
                model,
                self.x0.view(),
                self.x1.view(),
                self.noise.view(),
                self.t.view(),
                self.alpha.view(),
                weights,
            ),
            ModelKind::ConDiff => loss_condiff(
                model,
                self.x0.view(),
                self.x1.view(),
                self.noise.view(),
                self.t.view(),
            ),
        }
    }

    /// See [`gradient_gap`].
    pub fn gradient_check(
        &self,
        model: &FieldModel<T>,
        weights: BiflowWeights,
        h: f64,
    ) -> Result<f64> {
        gradient_gap(model, h, |m| self.loss(m, weights))
    }
}

/// Largest relative gap between the analytic gradient of `loss` and a central
/// finite difference with step `h`, over every parameter. The relative gap is
/// `|a - b| / max(|a|, |b|, 1e-3)` so near-zero entries are judged absolutely.
pub fn gradient_gap<T, F>(model: &FieldModel<T>, h: f64, loss: F) -> Result<f64>
where
    T: Scalar,
    F: Fn(&FieldModel<T>) -> Result<LossOutput<T>>,
{
    let analytic = loss(model)?.grad;
    let mut probe = model.clone();
    let mut worst = 0.0f64;
    for i in 0..analytic.len() {
        let base = probe.net().params().values()[i];
        probe.net_mut().params_mut().values_mut()[i] = base + T::of(h);
        let up = loss(&probe)?.loss.to_f64_lossy();
        probe.net_mut().params_mut().values_mut()[i] = base - T::of(h);
        let down = loss(&probe)?.loss.to_f64_lossy();
        probe.net_mut().params_mut().values_mut()[i] = base;
        let fd = (up - down) / (2.0 * h);
        let a = analytic.values()[i].to_f64_lossy();
        worst = worst.max((a - fd).abs() / a.abs().max(fd.abs()).max(1e-3));
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::{Activation, CoordEmbedding, Mlp, NetSpec, ParamVector};
    use ndarray::array;

    fn coords(t: f64, alpha: f64) -> BlendCoords<f64> {
        BlendCoords { t, alpha }
    }

    #[test]
    fn interp_endpoints_and_example() {
        let x0 = array![0.3, -1.0];
        let x1 = array![0.9, 2.0];
        let n = array![5.0, 7.0];
        assert_eq!(
            bilinear_interp(x0.view(), x1.view(), n.view(), coords(0.0, 0.0)).unwrap(),
            x0
        );
        assert_eq!(
            bilinear_interp(x0.view(), x1.view(), n.view(), coords(1.0, 0.0)).unwrap(),
            x1
        );
        let v = bilinear_interp(
            array![0.0, 0.0].view(),
            array![2.0, 2.0].view(),
            array![1.0, -1.0].view(),
            coords(0.5, 0.1),
        )
        .unwrap();
        assert!((v[0] - 1.1).abs() < 1e-15 && (v[1] - 0.9).abs() < 1e-15);
    }

    #[test]
    fn interp_shape_mismatch() {
        assert!(bilinear_interp(
            array![0.0].view(),
            array![0.0, 1.0].view(),
            array![0.0].view(),
            coords(0.5, 0.0)
        )
        .is_err());
    }

    #[test]
    fn blend_coords_validated() {
        assert!(BlendCoords::new(0.5, 0.2, 1.0).is_ok());
        assert!(BlendCoords::new(1.5, 0.2, 1.0).is_err());
        assert!(BlendCoords::new(0.5, -0.1, 1.0).is_err());
        assert!(BlendCoords::new(0.5, 1.1, 1.0).is_err());
    }

    /// A model whose output is a fixed bias: zero weights on a single affine layer.
    fn bias_model(kind: ModelKind, frame_dim: usize, bias: &[f64]) -> FieldModel<f64> {
        let spec: NetSpec = kind.net_spec(frame_dim, vec![], Activation::Tanh, CoordEmbedding::Raw);
        let mut values = vec![0.0; spec.param_count()];
        let n = values.len();
        values[n - bias.len()..].copy_from_slice(bias);
        let net = Mlp::from_params(
            spec.clone(),
            ParamVector::new(values, spec.layout()).unwrap(),
        )
        .unwrap();
        FieldModel::new(kind, frame_dim, net).unwrap()
    }

    #[test]
    fn flow_loss_zero_for_exact_model_and_plugin_for_zero_model() {
        // all pairs share the displacement (1, -2), which a bias can represent
        let x0 = array![[0.0, 0.0], [1.0, 1.0]];
        let x1 = array![[1.0, -2.0], [2.0, -1.0]];
        let t = array![0.2, 0.7];
        let exact = bias_model(ModelKind::Flow, 2, &[1.0, -2.0]);
        let out = loss_video_flow(&exact, x0.view(), x1.view(), t.view()).unwrap();
        assert_eq!(out.loss, 0.0);
        assert!(out.grad.values().iter().all(|&g| g == 0.0));
        let zero = bias_model(ModelKind::Flow, 2, &[0.0, 0.0]);
        let out = loss_video_flow(&zero, x0.view(), x1.view(), t.view()).unwrap();
        assert_eq!(out.loss, 5.0);
    }

    #[test]
    fn flow_matching_hand_value() {
        // bias (0.5, 0): sample 1 displacement (1, 1) -> residual (-0.5, -1), 1.25
        //               sample 2 displacement (-2, 0) -> residual (2.5, 0), 6.25
        let m = bias_model(ModelKind::Flow, 2, &[0.5, 0.0]);
        let x0 = array![[0.0, 0.0], [1.0, 3.0]];
        let x1 = array![[1.0, 1.0], [-1.0, 3.0]];
        let out = loss_flow_matching(&m, x0.view(), x1.view(), array![0.1, 0.9].view()).unwrap();
        assert!((out.loss - 3.75).abs() < 1e-15);
    }

    #[test]
    fn static_video_zero_loss() {
        let x = array![[0.3, 0.4], [-0.1, 0.2]];
        let zero = bias_model(ModelKind::Flow, 2, &[0.0, 0.0]);
        let out = loss_video_flow(&zero, x.view(), x.view(), array![0.3, 0.6].view()).unwrap();
        assert_eq!(out.loss, 0.0);
    }

    #[test]
    fn biflow_hand_value() {
        // branches output (0.5, 0.5 | 1, -1); displacement (1, 0), noise (0, -1)
        // video: (-0.5)^2 + 0.5^2 = 0.5; noise: 1^2 + 0^2 = 1
        let m = bias_model(ModelKind::BiFlow, 2, &[0.5, 0.5, 1.0, -1.0]);
        let out = loss_biflow(
            &m,
            array![[0.0, 1.0]].view(),
            array![[1.0, 1.0]].view(),
            array![[0.0, -1.0]].view(),
            array![0.4].view(),
            array![0.2].view(),
            BiflowWeights::default(),
        )
        .unwrap();
        assert!((out.loss - 1.5).abs() < 1e-15);
        assert_eq!(out.terms, vec![0.5, 1.0]);
    }

    #[test]
    fn biflow_exact_model_zero() {
        let m = bias_model(ModelKind::BiFlow, 1, &[2.0, -0.5]);
        let out = loss_biflow(
            &m,
            array![[1.0], [3.0]].view(),
            array![[3.0], [5.0]].view(),
            array![[-0.5], [-0.5]].view(),
            array![0.1, 0.9].view(),
            array![0.0, 0.7].view(),
            BiflowWeights::default(),
        )
        .unwrap();
        assert_eq!(out.loss, 0.0);
    }

    #[test]
    fn condiff_hand_value() {
        // zero model: loss = ||x1 - z0||^2 = (1 - 0.5)^2 + (2 + 1)^2 = 9.25
        let m = bias_model(ModelKind::ConDiff, 2, &[0.0, 0.0]);
        let out = loss_condiff(
            &m,
            array![[9.0, 9.0]].view(),
            array![[1.0, 2.0]].view(),
            array![[0.5, -1.0]].view(),
            array![0.5].view(),
        )
        .unwrap();
        assert!((out.loss - 9.25).abs() < 1e-15);
        let exact = bias_model(ModelKind::ConDiff, 2, &[0.5, 3.0]);
        let out = loss_condiff(
            &exact,
            array![[9.0, 9.0]].view(),
            array![[1.0, 2.0]].view(),
            array![[0.5, -1.0]].view(),
            array![0.5].view(),
        )
        .unwrap();
        assert_eq!(out.loss, 0.0);
    }

    #[test]
    fn losses_reject_wrong_model_kind() {
        let m = bias_model(ModelKind::Flow, 1, &[0.0]);
        let b = array![[0.0]];
        let t = array![0.5];
        assert!(loss_biflow(
            &m,
            b.view(),
            b.view(),
            b.view(),
            t.view(),
            t.view(),
            BiflowWeights::default()
        )
        .is_err());
        assert!(loss_condiff(&m, b.view(), b.view(), b.view(), t.view()).is_err());
    }

    #[test]
    fn non_finite_loss_is_training_error() {
        let m = bias_model(ModelKind::Flow, 1, &[0.0]);
        let err = loss_video_flow(
            &m,
            array![[0.0]].view(),
            array![[f64::INFINITY]].view(),
            array![0.5].view(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::Training { .. }));
    }
}
