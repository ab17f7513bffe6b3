//! Turning a trained field into videos.
//!
//! A bi-flow model defines a first-order PDE in the `(t, alpha)` plane: the
//! video branch is `dx/dt` and the noise branch `dx/dalpha`. Along a curve
//! `k -> (t_k, alpha_k)` this reduces to the ODE
//! `dx/dk = f_v dt/dk + f_n dalpha/dk`, which is what every bi-flow sampler
//! here integrates:
//!
//! * streaming: `(0, 0) -> (1, 0)`, the video branch alone;
//! * joint: `(0, eps) -> (1, 0)` from the previous frame plus `eps * n`;
//! * backward: `(1, eps) -> (0, 0)` from the current frame plus `eps * n`;
//! * denoising: `(t, alpha_0) -> (t, 0)`.

use std::cell::Cell;
use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, ArrayView1, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::model::{FieldModel, ModelKind};
use crate::scalar::Scalar;
use crate::solver::{solve, Direction, SolveSpec};
use crate::video::{stream_seed, VideoTensor};

/// The evaluation surface samplers need from a model. Each model kind
/// implements the method matching it; the others report a configuration error.
pub trait Field<T: Scalar> {
    fn kind(&self) -> ModelKind;

    fn frame_dim(&self) -> usize;

    fn velocity(&self, _x: ArrayView1<'_, T>, _t: T) -> Result<Array1<T>> {
        Err(Error::config(format!(
            "a {} model has no plain velocity",
            self.kind()
        )))
    }

    fn branches(&self, _x: ArrayView1<'_, T>, _t: T, _alpha: T) -> Result<(Array1<T>, Array1<T>)> {
        Err(Error::config(format!(
            "a {} model has no joint branches",
            self.kind()
        )))
    }

    fn conditional_velocity(
        &self,
        _z: ArrayView1<'_, T>,
        _cond: ArrayView1<'_, T>,
        _t: T,
    ) -> Result<Array1<T>> {
        Err(Error::config(format!(
            "a {} model has no conditional velocity",
            self.kind()
        )))
    }
}

impl<T: Scalar> Field<T> for FieldModel<T> {
    fn kind(&self) -> ModelKind {
        FieldModel::kind(self)
    }

    fn frame_dim(&self) -> usize {
        FieldModel::frame_dim(self)
    }

    fn velocity(&self, x: ArrayView1<'_, T>, t: T) -> Result<Array1<T>> {
        FieldModel::velocity(self, x, t)
    }

    fn branches(&self, x: ArrayView1<'_, T>, t: T, alpha: T) -> Result<(Array1<T>, Array1<T>)> {
        FieldModel::branches(self, x, t, alpha)
    }

    fn conditional_velocity(
        &self,
        z: ArrayView1<'_, T>,
        cond: ArrayView1<'_, T>,
        t: T,
    ) -> Result<Array1<T>> {
        FieldModel::conditional_velocity(self, z, cond, t)
    }
}

/// Counts every evaluation that reaches the wrapped field.
pub struct Counted<'a, F: ?Sized> {
    inner: &'a F,
    count: Cell<usize>,
}

impl<'a, F: ?Sized> Counted<'a, F> {
    pub fn new(inner: &'a F) -> Self {
        Counted {
            inner,
            count: Cell::new(0),
        }
    }

    pub fn count(&self) -> usize {
        self.count.get()
    }

    fn bump(&self) {
        self.count.set(self.count.get() + 1);
    }
}

impl<T: Scalar, F: Field<T> + ?Sized> Field<T> for Counted<'_, F> {
    fn kind(&self) -> ModelKind {
        self.inner.kind()
    }

    fn frame_dim(&self) -> usize {
        self.inner.frame_dim()
    }

    fn velocity(&self, x: ArrayView1<'_, T>, t: T) -> Result<Array1<T>> {
        self.bump();
        self.inner.velocity(x, t)
    }

    fn branches(&self, x: ArrayView1<'_, T>, t: T, alpha: T) -> Result<(Array1<T>, Array1<T>)> {
        self.bump();
        self.inner.branches(x, t, alpha)
    }

    fn conditional_velocity(
        &self,
        z: ArrayView1<'_, T>,
        cond: ArrayView1<'_, T>,
        t: T,
    ) -> Result<Array1<T>> {
        self.bump();
        self.inner.conditional_velocity(z, cond, t)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CurveShape {
    /// Straight segment between the endpoints.
    Linear,
    /// Advance in time first, then remove noise: midpoint `(1, eps)`.
    SolveThenDenoise,
    /// Remove noise first, then advance in time: midpoint `(0, 0)`.
    DenoiseThenSolve,
}

impl fmt::Display for CurveShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CurveShape::Linear => "linear",
            CurveShape::SolveThenDenoise => "solve_then_denoise",
            CurveShape::DenoiseThenSolve => "denoise_then_solve",
        })
    }
}

impl FromStr for CurveShape {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "linear" => Ok(CurveShape::Linear),
            "solve_then_denoise" => Ok(CurveShape::SolveThenDenoise),
            "denoise_then_solve" => Ok(CurveShape::DenoiseThenSolve),
            other => Err(Error::config(format!("unknown curve shape `{other}`"))),
        }
    }
}

/// Piecewise-linear path `k -> (t_k, alpha_k)` over `k in [0, 1]`.
///
/// Two-segment shapes switch segments at `k = 0.5`; the derivative at exactly
/// `0.5` is the second segment's.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CharacteristicCurve {
    pub shape: CurveShape,
    pub epsilon: f64,
    pub start: (f64, f64),
    pub end: (f64, f64),
    mid: Option<(f64, f64)>,
}

impl CharacteristicCurve {
    /// Next-frame curve from `(0, eps)` to `(1, 0)`.
    pub fn forward(shape: CurveShape, epsilon: f64) -> Result<Self> {
        if !(epsilon >= 0.0 && epsilon.is_finite()) {
            return Err(Error::config(format!(
                "noise level must be non-negative, got {epsilon}"
            )));
        }
        let mid = match shape {
            CurveShape::Linear => None,
            CurveShape::SolveThenDenoise => Some((1.0, epsilon)),
            CurveShape::DenoiseThenSolve => Some((0.0, 0.0)),
        };
        Ok(CharacteristicCurve {
            shape,
            epsilon,
            start: (0.0, epsilon),
            end: (1.0, 0.0),
            mid,
        })
    }

    /// Linear curve from `(0, 0)` to `(1, eps)`, integrated from `k = 1` down
    /// to `k = 0` to recover the preceding frame.
    pub fn backward(epsilon: f64) -> Result<Self> {
        let mut c = CharacteristicCurve::forward(CurveShape::Linear, epsilon)?;
        c.start = (0.0, 0.0);
        c.end = (1.0, epsilon);
        Ok(c)
    }

    /// Pure denoising at fixed `t`, from `alpha_start` down to zero.
    pub fn denoise(t: f64, alpha_start: f64) -> Result<Self> {
        if !(alpha_start >= 0.0 && alpha_start.is_finite()) {
            return Err(Error::config(format!(
                "alpha_start must be non-negative, got {alpha_start}"
            )));
        }
        Ok(CharacteristicCurve {
            shape: CurveShape::Linear,
            epsilon: alpha_start,
            start: (t, alpha_start),
            end: (t, 0.0),
            mid: None,
        })
    }

    fn segment(&self, k: f64) -> ((f64, f64), (f64, f64), f64, f64) {
        match self.mid {
            None => (self.start, self.end, 0.0, 1.0),
            Some(mid) if k < 0.5 => (self.start, mid, 0.0, 0.5),
            Some(mid) => (mid, self.end, 0.5, 1.0),
        }
    }

    pub fn point(&self, k: f64) -> (f64, f64) {
        let (a, b, k0, k1) = self.segment(k);
        let u = (k - k0) / (k1 - k0);
        (a.0 + u * (b.0 - a.0), a.1 + u * (b.1 - a.1))
    }

    /// `(dt/dk, dalpha/dk)`.
    pub fn derivative(&self, k: f64) -> (f64, f64) {
        let (a, b, k0, k1) = self.segment(k);
        let len = k1 - k0;
        ((b.0 - a.0) / len, (b.1 - a.1) / len)
    }
}

/// `dx/dk = f_v(x, t_k, alpha_k) dt/dk + f_n(x, t_k, alpha_k) dalpha/dk`.
///
/// Terms whose curve derivative is exactly zero are skipped, so a curve
/// without noise movement reproduces the video branch bit for bit.
pub fn joint_field_eval<T: Scalar, F: Field<T> + ?Sized>(
    model: &F,
    x: ArrayView1<'_, T>,
    curve: &CharacteristicCurve,
    k: f64,
) -> Result<Array1<T>> {
    if model.kind() != ModelKind::BiFlow {
        return Err(Error::config(format!(
            "joint sampling needs a bi-flow model, got {}",
            model.kind()
        )));
    }
    let (t, alpha) = curve.point(k);
    let (dt, da) = curve.derivative(k);
    let (v, n) = model.branches(x, T::of(t), T::of(alpha))?;
    let (dt, da) = (T::of(dt), T::of(da));
    let out = match (dt == T::zero(), da == T::zero()) {
        (false, true) if dt == T::one() => v,
        (false, true) => v.mapv(|a| a * dt),
        (true, false) => n.mapv(|b| b * da),
        (true, true) => Array1::zeros(x.len()),
        (false, false) => {
            let mut out = v;
            Zip::from(&mut out)
                .and(&n)
                .for_each(|o, &b| *o = *o * dt + b * da);
            out
        }
    };
    Ok(out)
}

/// Standard normal frame-shaped draw from a ChaCha8 stream.
pub fn noise_frame<T: Scalar>(dim: usize, seed: u64) -> Array1<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array1::from_shape_fn(dim, |_| T::of(rng.sample::<f64, _>(StandardNormal)))
}

fn check_frame<T: Scalar, F: Field<T> + ?Sized>(model: &F, x: ArrayView1<'_, T>) -> Result<()> {
    if x.len() != model.frame_dim() {
        return Err(Error::config(format!(
            "frame has {} values, model expects {}",
            x.len(),
            model.frame_dim()
        )));
    }
    Ok(())
}

/// Next frame by the predictor alone: integrate the video branch with
/// `alpha = 0` (or the plain flow) over `t in [0, 1]`.
pub fn stream_next<T: Scalar, F: Field<T> + ?Sized>(
    model: &F,
    prev: ArrayView1<'_, T>,
    spec: &SolveSpec,
) -> Result<(Array1<T>, usize)> {
    check_frame(model, prev)?;
    let sol = match model.kind() {
        ModelKind::Flow => solve(|x, t| model.velocity(x, t), prev, spec)?,
        ModelKind::BiFlow => solve(|x, t| Ok(model.branches(x, t, T::zero())?.0), prev, spec)?,
        ModelKind::ConDiff => {
            return Err(Error::config("streaming needs a flow or bi-flow model"));
        }
    };
    Ok((sol.x, sol.evals))
}

/// Integrates `curve` from `x_start`, forward (`k: 0 -> 1`) or backward (`k: 1 -> 0`).
pub fn solve_along<T: Scalar, F: Field<T> + ?Sized>(
    model: &F,
    x_start: ArrayView1<'_, T>,
    curve: &CharacteristicCurve,
    spec: &SolveSpec,
) -> Result<(Array1<T>, usize)> {
    check_frame(model, x_start)?;
    let sol = solve(
        |x, k: T| joint_field_eval(model, x, curve, k.to_f64_lossy()),
        x_start,
        spec,
    )?;
    Ok((sol.x, sol.evals))
}

fn add_scaled<T: Scalar>(x: ArrayView1<'_, T>, scale: f64, noise: &Array1<T>) -> Array1<T> {
    if scale == 0.0 {
        return x.to_owned();
    }
    let s = T::of(scale);
    let mut out = x.to_owned();
    Zip::from(&mut out).and(noise).for_each(|o, &n| *o += s * n);
    out
}

/// Next frame by joint sampling: start from `prev + eps n` with a fresh
/// standard normal `n` drawn from `noise_seed`, then integrate along `curve`.
pub fn joint_next<T: Scalar, F: Field<T> + ?Sized>(
    model: &F,
    prev: ArrayView1<'_, T>,
    curve: &CharacteristicCurve,
    noise_seed: u64,
    spec: &SolveSpec,
) -> Result<(Array1<T>, usize)> {
    check_frame(model, prev)?;
    let spec = SolveSpec {
        direction: Direction::Forward,
        ..*spec
    };
    let noise = noise_frame(prev.len(), noise_seed);
    let start = add_scaled(prev, curve.start.1, &noise);
    solve_along(model, start.view(), curve, &spec)
}

/// Preceding frame: start from `current + eps n` at `(1, eps)` and integrate
/// the reversed joint field down to `(0, 0)`.
pub fn backward_prev<T: Scalar, F: Field<T> + ?Sized>(
    model: &F,
    current: ArrayView1<'_, T>,
    epsilon: f64,
    noise_seed: u64,
    spec: &SolveSpec,
) -> Result<(Array1<T>, usize)> {
    check_frame(model, current)?;
    let curve = CharacteristicCurve::backward(epsilon)?;
    let spec = SolveSpec {
        direction: Direction::Backward,
        ..*spec
    };
    let noise = noise_frame(current.len(), noise_seed);
    let start = add_scaled(current, epsilon, &noise);
    solve_along(model, start.view(), &curve, &spec)
}

/// Removes noise of magnitude `alpha_start` by integrating the noise branch
/// from `alpha_start` to zero at fixed `t`.
pub fn denoise<T: Scalar, F: Field<T> + ?Sized>(
    model: &F,
    corrupted: ArrayView1<'_, T>,
    alpha_start: f64,
    t: f64,
    spec: &SolveSpec,
) -> Result<(Array1<T>, usize)> {
    check_frame(model, corrupted)?;
    if model.kind() != ModelKind::BiFlow {
        return Err(Error::config("denoising needs a bi-flow model"));
    }
    if alpha_start == 0.0 {
        return Ok((corrupted.to_owned(), 0));
    }
    let curve = CharacteristicCurve::denoise(t, alpha_start)?;
    let spec = SolveSpec {
        direction: Direction::Forward,
        ..*spec
    };
    solve_along(model, corrupted, &curve, &spec)
}

/// Next frame of the conditional baseline: integrate from fresh noise to the
/// next frame while conditioning on `prev`.
pub fn condiff_next<T: Scalar, F: Field<T> + ?Sized>(
    model: &F,
    prev: ArrayView1<'_, T>,
    noise_seed: u64,
    spec: &SolveSpec,
) -> Result<(Array1<T>, usize)> {
    check_frame(model, prev)?;
    if model.kind() != ModelKind::ConDiff {
        return Err(Error::config("conditional sampling needs a condiff model"));
    }
    let spec = SolveSpec {
        direction: Direction::Forward,
        ..*spec
    };
    let z0 = noise_frame(prev.len(), noise_seed);
    let sol = solve(
        |z, t| model.conditional_velocity(z, prev, t),
        z0.view(),
        &spec,
    )?;
    Ok((sol.x, sol.evals))
}

/// How a rollout produces each frame from the previous one.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SamplingPattern {
    /// Predictor only (flow, or bi-flow video branch at `alpha = 0`).
    Stream,
    /// Bi-flow joint sampling along a forward curve.
    Joint(CharacteristicCurve),
    /// Bi-flow backward in time with noise level `eps`.
    Backward { epsilon: f64 },
    /// Conditional baseline from noise.
    Conditional,
}

impl SamplingPattern {
    pub fn check(&self, kind: ModelKind) -> Result<()> {
        let ok = matches!(
            (self, kind),
            (SamplingPattern::Stream, ModelKind::Flow | ModelKind::BiFlow)
                | (SamplingPattern::Joint(_), ModelKind::BiFlow)
                | (SamplingPattern::Backward { .. }, ModelKind::BiFlow)
                | (SamplingPattern::Conditional, ModelKind::ConDiff)
        );
        if ok {
            Ok(())
        } else {
            Err(Error::config(format!(
                "{self} sampling is not available for a {kind} model"
            )))
        }
    }

    /// Noise level, zero where it does not apply.
    pub fn epsilon(&self) -> f64 {
        match self {
            SamplingPattern::Joint(c) => c.epsilon,
            SamplingPattern::Backward { epsilon } => *epsilon,
            _ => 0.0,
        }
    }

    /// The natural pattern for a model kind at noise level `eps`.
    pub fn default_for(kind: ModelKind, epsilon: f64) -> Result<Self> {
        Ok(match kind {
            ModelKind::Flow => SamplingPattern::Stream,
            ModelKind::BiFlow => {
                SamplingPattern::Joint(CharacteristicCurve::forward(CurveShape::Linear, epsilon)?)
            }
            ModelKind::ConDiff => SamplingPattern::Conditional,
        })
    }
}

impl fmt::Display for SamplingPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SamplingPattern::Stream => f.write_str("stream"),
            SamplingPattern::Joint(c) => write!(f, "joint({}, eps={})", c.shape, c.epsilon),
            SamplingPattern::Backward { epsilon } => write!(f, "backward(eps={epsilon})"),
            SamplingPattern::Conditional => f.write_str("conditional"),
        }
    }
}

/// Where a rollout's first frame came from.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Origin {
    pub dataset: String,
    pub video: usize,
    pub frame: usize,
}

/// Where and why a rollout stopped early.
#[derive(Debug, Clone, PartialEq)]
pub struct DivergenceInfo {
    /// Index of the frame that could not be produced.
    pub frame: usize,
    pub message: String,
}

/// A generated frame sequence with its per-frame cost.
#[derive(Debug, Clone, PartialEq)]
pub struct Rollout<T> {
    pub frames: Vec<Array1<T>>,
    /// Field evaluations spent on each generated frame (`frames.len() - 1` entries).
    pub per_frame_steps: Vec<usize>,
    pub pattern: SamplingPattern,
    pub spec: SolveSpec,
    pub seed: u64,
    pub origin: Origin,
    pub diverged: Option<DivergenceInfo>,
}

impl<T: Scalar> Rollout<T> {
    pub fn total_steps(&self) -> usize {
        self.per_frame_steps.iter().sum()
    }

    pub fn to_video(&self, channels: usize, height: usize, width: usize) -> Result<VideoTensor<T>> {
        VideoTensor::from_frames(&self.frames, channels, height, width)
    }
}

/// Markovian generation of `n_frames` frames (including the initial one).
///
/// Frame `i` uses the noise stream `stream_seed(seed, i)`. A numerical
/// divergence ends the rollout early; the frames produced so far are kept and
/// the failure is recorded in [`Rollout::diverged`].
pub fn rollout<T: Scalar, F: Field<T> + ?Sized>(
    model: &F,
    pattern: SamplingPattern,
    initial: ArrayView1<'_, T>,
    n_frames: usize,
    spec: &SolveSpec,
    seed: u64,
) -> Result<Rollout<T>> {
    pattern.check(model.kind())?;
    check_frame(model, initial)?;
    spec.validate()?;
    if n_frames == 0 {
        return Err(Error::config("a rollout needs at least one frame"));
    }
    let mut out = Rollout {
        frames: vec![initial.to_owned()],
        per_frame_steps: Vec::with_capacity(n_frames - 1),
        pattern,
        spec: *spec,
        seed,
        origin: Origin::default(),
        diverged: None,
    };
    for i in 1..n_frames {
        let prev = out.frames[i - 1].view();
        let noise_seed = stream_seed(seed, i as u64);
        let step = match pattern {
            SamplingPattern::Stream => stream_next(model, prev, spec),
            SamplingPattern::Joint(curve) => joint_next(model, prev, &curve, noise_seed, spec),
            SamplingPattern::Backward { epsilon } => {
                backward_prev(model, prev, epsilon, noise_seed, spec)
            }
            SamplingPattern::Conditional => condiff_next(model, prev, noise_seed, spec),
        };
        match step {
            Ok((frame, steps)) if frame.iter().all(|v| v.is_finite()) => {
                out.frames.push(frame);
                out.per_frame_steps.push(steps);
            }
            Ok(_) => {
                out.diverged = Some(DivergenceInfo {
                    frame: i,
                    message: "frame became non-finite".into(),
                });
                break;
            }
            Err(Error::Divergence { coord, message }) => {
                out.diverged = Some(DivergenceInfo {
                    frame: i,
                    message: format!("solver diverged at s = {coord}: {message}"),
                });
                break;
            }
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

/// Backward-in-time rollout: each frame is the predecessor of the one before it.
pub fn rollout_backward<T: Scalar, F: Field<T> + ?Sized>(
    model: &F,
    initial: ArrayView1<'_, T>,
    n_frames: usize,
    epsilon: f64,
    spec: &SolveSpec,
    seed: u64,
) -> Result<Rollout<T>> {
    rollout(
        model,
        SamplingPattern::Backward { epsilon },
        initial,
        n_frames,
        spec,
        seed,
    )
}
