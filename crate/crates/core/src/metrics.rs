//! Rollout quality and cost: sliding-window Fréchet distance between Gaussian
//! fits of frame features, linear drift trends, and steps per frame.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::sampling::Rollout;
use crate::scalar::Scalar;
use crate::video::{DatasetKind, VideoTensor};

/// Identifies the bounce feature construction; bump when it changes.
pub const FEATURE_VERSION: &str = "bounce-v2";
pub const PROJECTION_SEED: u64 = 0x5EED_F00D;
pub const PROJECTION_DIM: usize = 16;
/// Handcrafted bounce summaries appended after the projection.
pub const SUMMARY_DIM: usize = 8;

/// Frame features for the Fréchet metric.
///
/// Orbit frames are used as they are. Bounce frames map to a fixed Gaussian
/// random projection (`PROJECTION_DIM` outputs, entries `N(0, 1/D)`) followed
/// by summaries that describe the blob rather than the raw pixels:
///
/// | index | summary                                                    |
/// |-------|------------------------------------------------------------|
/// | 0     | pixel mean                                                 |
/// | 1     | pixel variance                                             |
/// | 2     | edge energy (mean squared neighbour difference)            |
/// | 3     | maximum pixel                                              |
/// | 4     | minimum pixel                                              |
/// | 5, 6  | row and column of the intensity centroid, scaled to [0, 1] |
/// | 7     | root mean squared distance from the centroid (in pixels)   |
///
/// Intensity is `max((x + 1) / 2, 0)`, so the background weighs nothing.
/// Pixel-space projections alone rate a faint smeared blob close to a sharp
/// one; the peak and spread summaries separate them.
#[derive(Debug, Clone)]
pub struct FeatureExtractor<T> {
    kind: DatasetKind,
    height: usize,
    width: usize,
    projection: Option<Array2<T>>,
}

impl<T: Scalar> FeatureExtractor<T> {
    pub fn new(kind: DatasetKind, height: usize, width: usize) -> Self {
        let projection = match kind {
            DatasetKind::Orbit => None,
            DatasetKind::Bounce => {
                let d = height * width;
                let mut rng = ChaCha8Rng::seed_from_u64(PROJECTION_SEED);
                let scale = 1.0 / (d as f64).sqrt();
                Some(Array2::from_shape_fn((PROJECTION_DIM, d), |_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    T::of(scale * z)
                }))
            }
        };
        FeatureExtractor {
            kind,
            height,
            width,
            projection,
        }
    }

    pub fn for_video(kind: DatasetKind, video: &VideoTensor<T>) -> Self {
        FeatureExtractor::new(kind, video.height, video.width * video.channels)
    }

    pub fn frame_dim(&self) -> usize {
        self.height * self.width
    }

    pub fn feature_dim(&self) -> usize {
        match self.kind {
            DatasetKind::Orbit => self.frame_dim(),
            DatasetKind::Bounce => PROJECTION_DIM + SUMMARY_DIM,
        }
    }

    pub fn features(&self, frame: ArrayView1<'_, T>) -> Result<Array1<T>> {
        if frame.len() != self.frame_dim() {
            return Err(Error::config(format!(
                "frame has {} values, features expect {}",
                frame.len(),
                self.frame_dim()
            )));
        }
        let Some(proj) = &self.projection else {
            return Ok(frame.to_owned());
        };
        let n = T::of_usize(frame.len());
        let mean = frame.sum() / n;
        let var = frame.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
        let (h, w) = (self.height, self.width);
        let half = T::of(0.5);
        let mut edge = T::zero();
        let mut count = 0usize;
        let (mut mass, mut mr, mut mc) = (T::zero(), T::zero(), T::zero());
        for r in 0..h {
            for c in 0..w {
                let v = frame[r * w + c];
                if c + 1 < w {
                    let d = frame[r * w + c + 1] - v;
                    edge += d * d;
                    count += 1;
                }
                if r + 1 < h {
                    let d = frame[(r + 1) * w + c] - v;
                    edge += d * d;
                    count += 1;
                }
                let u = ((v + T::one()) * half).max(T::zero());
                mass += u;
                mr += u * T::of_usize(r);
                mc += u * T::of_usize(c);
            }
        }
        let edge = if count > 0 {
            edge / T::of_usize(count)
        } else {
            T::zero()
        };
        let (cr, cc) = if mass > T::zero() {
            (mr / mass, mc / mass)
        } else {
            (T::of_usize(h - 1) * half, T::of_usize(w - 1) * half)
        };
        let mut spread = T::zero();
        if mass > T::zero() {
            for r in 0..h {
                for c in 0..w {
                    let u = ((frame[r * w + c] + T::one()) * half).max(T::zero());
                    let (dr, dc) = (T::of_usize(r) - cr, T::of_usize(c) - cc);
                    spread += u * (dr * dr + dc * dc);
                }
            }
            spread = (spread / mass).sqrt();
        }
        let scale = |x: T, len: usize| {
            if len > 1 {
                x / T::of_usize(len - 1)
            } else {
                T::zero()
            }
        };
        let max = frame.fold(T::neg_infinity(), |m, &v| m.max(v));
        let min = frame.fold(T::infinity(), |m, &v| m.min(v));
        let mut out = Array1::zeros(PROJECTION_DIM + SUMMARY_DIM);
        out.slice_mut(ndarray::s![..PROJECTION_DIM])
            .assign(&proj.dot(&frame));
        let summaries = [
            mean,
            var,
            edge,
            max,
            min,
            scale(cr, h),
            scale(cc, w),
            spread,
        ];
        for (i, v) in summaries.into_iter().enumerate() {
            out[PROJECTION_DIM + i] = v;
        }
        Ok(out)
    }

    /// Features of many frames, one row each.
    pub fn features_of<'a, I>(&self, frames: I) -> Result<Array2<T>>
    where
        I: IntoIterator<Item = ArrayView1<'a, T>>,
    {
        let rows: Vec<Array1<T>> = frames
            .into_iter()
            .map(|f| self.features(f))
            .collect::<Result<_>>()?;
        let mut out = Array2::zeros((rows.len(), self.feature_dim()));
        for (i, r) in rows.iter().enumerate() {
            out.row_mut(i).assign(r);
        }
        Ok(out)
    }
}

/// Mean and covariance of a feature sample.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianStats<T> {
    pub mean: Array1<T>,
    pub covariance: Array2<T>,
}

impl<T: Scalar> GaussianStats<T> {
    /// Sample mean and unbiased covariance of the rows of `samples`,
    /// accumulated in row order.
    pub fn fit(samples: ArrayView2<'_, T>) -> Result<Self> {
        let n = samples.nrows();
        if n < 2 {
            return Err(Error::config("need at least two samples to fit a Gaussian"));
        }
        let mean = samples.mean_axis(Axis(0)).expect("non-empty");
        let centered = &samples - &mean;
        let mut covariance = centered.t().dot(&centered) / T::of_usize(n - 1);
        symmetrize(&mut covariance);
        Ok(GaussianStats { mean, covariance })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

fn symmetrize<T: Scalar>(m: &mut Array2<T>) {
    let half = T::of(0.5);
    for i in 0..m.nrows() {
        for j in 0..i {
            let v = (m[[i, j]] + m[[j, i]]) * half;
            m[[i, j]] = v;
            m[[j, i]] = v;
        }
    }
}

/// Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.
/// Returns eigenvalues and the matrix whose columns are the eigenvectors.
pub fn symmetric_eigen<T: Scalar>(a: &Array2<T>) -> (Array1<T>, Array2<T>) {
    let n = a.nrows();
    let mut m = a.clone();
    let mut v = Array2::eye(n);
    let scale: T = m.iter().map(|&x| x * x).sum::<T>().sqrt();
    if scale == T::zero() {
        return (Array1::zeros(n), v);
    }
    let tol = T::epsilon() * scale;
    for _sweep in 0..100 {
        let mut off = T::zero();
        for p in 0..n {
            for q in p + 1..n {
                off += m[[p, q]] * m[[p, q]];
            }
        }
        if off.sqrt() <= tol {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[[p, q]];
                if apq == T::zero() {
                    continue;
                }
                let theta = (m[[q, q]] - m[[p, p]]) / (T::of(2.0) * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + T::one()).sqrt());
                let c = T::one() / (t * t + T::one()).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (mkp, mkq) = (m[[k, p]], m[[k, q]]);
                    m[[k, p]] = c * mkp - s * mkq;
                    m[[k, q]] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let (mpk, mqk) = (m[[p, k]], m[[q, k]]);
                    m[[p, k]] = c * mpk - s * mqk;
                    m[[q, k]] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let (vkp, vkq) = (v[[k, p]], v[[k, q]]);
                    v[[k, p]] = c * vkp - s * vkq;
                    v[[k, q]] = s * vkp + c * vkq;
                }
            }
        }
    }
    (m.diag().to_owned(), v)
}

/// Principal square root of a symmetric positive semidefinite matrix, with
/// negative eigenvalues clamped to zero.
pub fn psd_sqrt<T: Scalar>(a: &Array2<T>) -> Array2<T> {
    let (vals, vecs) = symmetric_eigen(a);
    let roots = vals.mapv(|l| l.max(T::zero()).sqrt());
    let scaled = &vecs * &roots.insert_axis(Axis(0));
    scaled.dot(&vecs.t())
}

/// `||mu_a - mu_b||^2 + tr(S_a + S_b - 2 (S_a S_b)^(1/2))`.
///
/// The trace of `(S_a S_b)^(1/2)` is taken from the eigenvalues of the
/// symmetric matrix `S_a^(1/2) S_b S_a^(1/2)`, which shares them.
pub fn frechet_distance<T: Scalar>(a: &GaussianStats<T>, b: &GaussianStats<T>) -> Result<T> {
    if a.dim() != b.dim() || a.covariance.dim() != b.covariance.dim() {
        return Err(Error::config(format!(
            "Gaussian dimensions differ: {} vs {}",
            a.dim(),
            b.dim()
        )));
    }
    let diff = &a.mean - &b.mean;
    let mean_term = diff.dot(&diff);
    let root_a = psd_sqrt(&a.covariance);
    let mut inner = root_a.dot(&b.covariance).dot(&root_a);
    symmetrize(&mut inner);
    let (vals, _) = symmetric_eigen(&inner);
    let cross: T = vals.iter().map(|&l| l.max(T::zero()).sqrt()).sum();
    let d = mean_term + a.covariance.diag().sum() + b.covariance.diag().sum() - T::of(2.0) * cross;
    Ok(d.max(T::zero()))
}

/// Distances of successive frame windows to a reference distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct FrechetWindowSeries<T> {
    pub window: usize,
    pub stride: usize,
    /// `(window start frame, distance)`.
    pub values: Vec<(usize, T)>,
}

impl<T: Scalar> FrechetWindowSeries<T> {
    pub fn mean(&self) -> T {
        if self.values.is_empty() {
            return T::nan();
        }
        self.values.iter().map(|&(_, v)| v).sum::<T>() / T::of_usize(self.values.len())
    }
}

/// Number of windows of length `window` at stride `stride` within `n` frames.
pub fn window_count(n: usize, window: usize, stride: usize) -> usize {
    if n < window || window == 0 || stride == 0 {
        0
    } else {
        (n - window) / stride + 1
    }
}

/// Sliding-window Fréchet distance over per-rollout feature matrices
/// (one row per frame).
///
/// Windows start at `0, stride, 2 stride, ...` while a window fits inside the
/// longest rollout. Each window pools the rows of every rollout that fall
/// inside it, so rollouts that stopped early contribute only the frames they
/// have; the series ends at the first window with fewer than two frames.
pub fn sliding_fvd_features<T: Scalar>(
    rollouts: &[Array2<T>],
    reference: &GaussianStats<T>,
    window: usize,
    stride: usize,
) -> Result<FrechetWindowSeries<T>> {
    if window == 0 || stride == 0 {
        return Err(Error::config("window and stride must be positive"));
    }
    if rollouts.is_empty() {
        return Err(Error::config("no rollouts to evaluate"));
    }
    let longest = rollouts.iter().map(|r| r.nrows()).max().unwrap_or(0);
    if longest < window {
        return Err(Error::config(format!(
            "rollouts have {longest} frames, fewer than the window of {window}"
        )));
    }
    let pooled_rows = |start: usize| -> usize {
        rollouts
            .iter()
            .map(|r| r.nrows().min(start + window).saturating_sub(start))
            .sum()
    };
    let n_windows = (0..window_count(longest, window, stride))
        .take_while(|&w| pooled_rows(w * stride) >= 2)
        .count();
    let values = (0..n_windows)
        .into_par_iter()
        .map(|w| {
            let start = w * stride;
            let end = start + window;
            let mut pooled = Array2::zeros((pooled_rows(start), reference.dim()));
            let mut at = 0;
            for r in rollouts {
                let hi = r.nrows().min(end);
                if hi > start {
                    let block = r.slice(ndarray::s![start..hi, ..]);
                    pooled
                        .slice_mut(ndarray::s![at..at + block.nrows(), ..])
                        .assign(&block);
                    at += block.nrows();
                }
            }
            let stats = GaussianStats::fit(pooled.view())?;
            Ok((start, frechet_distance(&stats, reference)?))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(FrechetWindowSeries {
        window,
        stride,
        values,
    })
}

/// Gaussian statistics of every frame of every reference video.
pub fn reference_stats<T: Scalar>(
    videos: &[&VideoTensor<T>],
    extractor: &FeatureExtractor<T>,
) -> Result<GaussianStats<T>> {
    let feats = extractor.features_of(videos.iter().flat_map(|v| v.frames()))?;
    GaussianStats::fit(feats.view())
}

/// [`sliding_fvd_features`] on rollouts against the frames of reference videos.
pub fn sliding_fvd<T: Scalar>(
    rollouts: &[Rollout<T>],
    reference: &[&VideoTensor<T>],
    extractor: &FeatureExtractor<T>,
    window: usize,
    stride: usize,
) -> Result<FrechetWindowSeries<T>> {
    let stats = reference_stats(reference, extractor)?;
    let feats = rollouts
        .iter()
        .map(|r| extractor.features_of(r.frames.iter().map(|f| f.view())))
        .collect::<Result<Vec<_>>>()?;
    sliding_fvd_features(&feats, &stats, window, stride)
}

/// Ordinary least squares line through `(window start, distance)`:
/// returns `(slope, intercept)`.
pub fn drift_slope<T: Scalar>(series: &FrechetWindowSeries<T>) -> Result<(f64, f64)> {
    let pts: Vec<(f64, f64)> = series
        .values
        .iter()
        .map(|&(s, v)| (s as f64, v.to_f64_lossy()))
        .collect();
    if pts.len() < 2 {
        return Err(Error::config("a trend needs at least two windows"));
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    let slope = sxy / sxx;
    Ok((slope, my - slope * mx))
}

/// Mean field evaluations per generated frame over all rollouts.
pub fn aggregate_steps<T: Scalar>(rollouts: &[Rollout<T>]) -> f64 {
    let (sum, count) = rollouts
        .iter()
        .flat_map(|r| r.per_frame_steps.iter())
        .fold((0usize, 0usize), |(s, c), &x| (s + x, c + 1));
    if count == 0 {
        0.0
    } else {
        sum as f64 / count as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn stats(mean: Array1<f64>, covariance: Array2<f64>) -> GaussianStats<f64> {
        GaussianStats { mean, covariance }
    }

    #[test]
    fn identical_stats_have_zero_distance() {
        let a = stats(array![0.3, -1.0], array![[2.0, 0.4], [0.4, 1.0]]);
        assert!(frechet_distance(&a, &a).unwrap() < 1e-8);
    }

    #[test]
    fn isotropic_closed_form() {
        let dim = 5;
        let (sa, sb) = (0.7f64, 1.9f64);
        let a = stats(Array1::zeros(dim), Array2::eye(dim) * sa * sa);
        let b = stats(Array1::zeros(dim), Array2::eye(dim) * sb * sb);
        let d = frechet_distance(&a, &b).unwrap();
        assert!((d - dim as f64 * (sa - sb).powi(2)).abs() < 1e-10);
    }

    #[test]
    fn symmetric_in_arguments() {
        let a = stats(
            array![1.0, 0.0, 2.0],
            array![[1.0, 0.2, 0.0], [0.2, 0.5, 0.1], [0.0, 0.1, 2.0]],
        );
        let b = stats(
            array![0.0, 0.5, 2.0],
            array![[0.3, 0.0, 0.0], [0.0, 1.5, -0.4], [0.0, -0.4, 0.9]],
        );
        let ab = frechet_distance(&a, &b).unwrap();
        let ba = frechet_distance(&b, &a).unwrap();
        assert!((ab - ba).abs() < 1e-10, "{ab} vs {ba}");
    }

    #[test]
    fn rank_deficient_is_finite() {
        let a = stats(array![0.0, 0.0], array![[1.0, 1.0], [1.0, 1.0]]);
        let b = stats(array![0.0, 0.0], Array2::zeros((2, 2)));
        let d = frechet_distance(&a, &b).unwrap();
        assert!(d.is_finite());
        assert!((d - 2.0).abs() < 1e-10);
    }

    #[test]
    fn dimension_mismatch() {
        let a = stats(array![0.0], array![[1.0]]);
        let b = stats(array![0.0, 0.0], Array2::eye(2));
        assert!(matches!(frechet_distance(&a, &b), Err(Error::Config(_))));
    }

    #[test]
    fn jacobi_reconstructs_matrix() {
        let a: Array2<f64> = array![[4.0, 1.0, -2.0], [1.0, 2.0, 0.5], [-2.0, 0.5, 3.0]];
        let (vals, vecs) = symmetric_eigen(&a);
        let back = (&vecs * &vals.clone().insert_axis(Axis(0))).dot(&vecs.t());
        for (x, y) in back.iter().zip(a.iter()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn orbit_features_are_identity() {
        let fx = FeatureExtractor::<f64>::new(DatasetKind::Orbit, 1, 4);
        let f = array![0.1, 0.2, -0.3, 0.4];
        assert_eq!(fx.features(f.view()).unwrap(), f);
    }

    #[test]
    fn empty_bounce_frame_summaries() {
        let fx = FeatureExtractor::<f64>::new(DatasetKind::Bounce, 8, 8);
        let f = fx.features(Array1::from_elem(64, -1.0).view()).unwrap();
        assert_eq!(f.len(), PROJECTION_DIM + SUMMARY_DIM);
        let s = f.slice(ndarray::s![PROJECTION_DIM..]).to_vec();
        assert_eq!(s, vec![-1.0, 0.0, 0.0, -1.0, -1.0, 0.5, 0.5, 0.0]);
        assert!(fx.features(Array1::zeros(63).view()).is_err());
    }

    #[test]
    fn bounce_features_deterministic() {
        let frame = crate::video::render_blob::<f64>(8, 8, 3.2, 4.7, 1.0);
        let a = FeatureExtractor::new(DatasetKind::Bounce, 8, 8)
            .features(frame.view())
            .unwrap();
        let b = FeatureExtractor::new(DatasetKind::Bounce, 8, 8)
            .features(frame.view())
            .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn window_counts() {
        assert_eq!(window_count(200, 32, 16), 11);
        assert_eq!(window_count(128, 32, 32), 4);
        assert_eq!(window_count(31, 32, 16), 0);
    }

    #[test]
    fn drift_slope_exact_line_and_constant() {
        let line = FrechetWindowSeries {
            window: 4,
            stride: 2,
            values: (0..6)
                .map(|i| (2 * i, 2.0 * (2 * i) as f64 + 1.0))
                .collect(),
        };
        let (m, c) = drift_slope(&line).unwrap();
        assert!((m - 2.0).abs() < 1e-12 && (c - 1.0).abs() < 1e-12);
        let flat = FrechetWindowSeries {
            window: 4,
            stride: 2,
            values: (0..6).map(|i| (2 * i, 3.5f64)).collect(),
        };
        assert_eq!(drift_slope(&flat).unwrap().0, 0.0);
        let single = FrechetWindowSeries {
            window: 4,
            stride: 2,
            values: vec![(0, 1.0f64)],
        };
        assert!(drift_slope(&single).is_err());
    }

    #[test]
    fn series_ends_where_early_stopped_rollouts_run_out() {
        let long = Array2::from_shape_fn((40, 2), |(i, j)| ((i * 7 + j * 3) % 5) as f64);
        let short = Array2::from_shape_fn((9, 2), |(i, j)| ((i + j) % 3) as f64);
        let s = stats(Array1::zeros(2), Array2::eye(2));
        let both = sliding_fvd_features(&[long.clone(), short.clone()], &s, 8, 8).unwrap();
        assert_eq!(both.values.len(), 5);
        let stopped = sliding_fvd_features(&[short], &s, 8, 8).unwrap();
        assert_eq!(stopped.values.len(), 1);
    }

    #[test]
    fn short_rollouts_rejected() {
        let r = vec![Array2::<f64>::zeros((10, 2))];
        let s = stats(Array1::zeros(2), Array2::eye(2));
        assert!(sliding_fvd_features(&r, &s, 16, 8).is_err());
    }
}
