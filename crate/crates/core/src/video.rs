//! Synthetic video datasets, the `BFV1` frame file format and consecutive
//! frame pair sampling.
//!
//! Two dataset families are provided:
//!
//! * **orbit**: a `dim`-dimensional state whose coordinate planes
//!   `(x[2p], x[2p+1])` start on a circle of radius [`ORBIT_RADIUS`] at a
//!   uniform random angle. Each frame rotates every plane by `angular_speed`,
//!   adds `process_noise * N(0, I)` and clamps to `[-1, 1]`.
//! * **bounce**: a Gaussian blob moving at constant speed inside an `h x w`
//!   grid and reflecting elastically off the walls. Pixels are
//!   `2 exp(-d^2 / (2 sigma^2)) - 1`, so the background is `-1` and the peak `1`.
//!
//! Video `v` of a dataset generated with seed `s` draws from a ChaCha8 stream
//! seeded with [`stream_seed`]`(s, v)`, so videos are independent of each
//! other and of the number of videos requested.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use ndarray::{Array1, Array2, ArrayView1};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const ORBIT_RADIUS: f64 = 0.8;
pub const MAGIC: &[u8; 4] = b"BFV1";
const HEADER_LEN: usize = 20;

/// Deterministic 64-bit mixing (splitmix64 finalizer) of a base seed and a stream index.
pub fn stream_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed
        .wrapping_add(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(stream.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const F32_MAX: f64 = f32::MAX as f64;

/// A single video: `num_frames` frames of `channels x height x width` values,
/// frame-major, then channel-major, then row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoTensor<T> {
    pub num_frames: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<T>,
}

impl<T: Scalar> VideoTensor<T> {
    pub fn new(
        num_frames: usize,
        channels: usize,
        height: usize,
        width: usize,
        data: Vec<T>,
    ) -> Result<Self> {
        let expected = num_frames
            .checked_mul(channels)
            .and_then(|n| n.checked_mul(height))
            .and_then(|n| n.checked_mul(width))
            .ok_or_else(|| Error::config("video dimensions overflow"))?;
        if data.len() != expected {
            return Err(Error::config(format!(
                "video data has {} values, dimensions need {expected}",
                data.len()
            )));
        }
        Ok(VideoTensor {
            num_frames,
            channels,
            height,
            width,
            data,
        })
    }

    /// Stacks equally sized frames into a video.
    pub fn from_frames(
        frames: &[Array1<T>],
        channels: usize,
        height: usize,
        width: usize,
    ) -> Result<Self> {
        let dim = channels * height * width;
        let mut data = Vec::with_capacity(frames.len() * dim);
        for (i, f) in frames.iter().enumerate() {
            if f.len() != dim {
                return Err(Error::config(format!(
                    "frame {i} has {} values, expected {dim}",
                    f.len()
                )));
            }
            data.extend(f.iter().copied());
        }
        VideoTensor::new(frames.len(), channels, height, width, data)
    }

    pub fn frame_dim(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn frame(&self, i: usize) -> ArrayView1<'_, T> {
        let d = self.frame_dim();
        ArrayView1::from(&self.data[i * d..(i + 1) * d])
    }

    pub fn frames(&self) -> impl Iterator<Item = ArrayView1<'_, T>> + '_ {
        (0..self.num_frames).map(move |i| self.frame(i))
    }

    /// Serializes to the `BFV1` layout. Finite values beyond the 32-bit range
    /// saturate to `±f32::MAX` rather than becoming infinite.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::with_capacity(HEADER_LEN + 4 * self.data.len());
        out.extend_from_slice(MAGIC);
        for d in [self.num_frames, self.channels, self.height, self.width] {
            let d = u32::try_from(d).map_err(|_| Error::config("dimension exceeds u32"))?;
            out.extend_from_slice(&d.to_le_bytes());
        }
        for v in &self.data {
            let v = v.to_f64_lossy();
            let v = if v.is_finite() {
                v.clamp(-F32_MAX, F32_MAX)
            } else {
                v
            };
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
        Ok(out)
    }

    /// Parses the `BFV1` layout, widening the 32-bit payload to `T`.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 || &bytes[..4] != MAGIC {
            return Err(Error::format(0, "missing BFV1 magic"));
        }
        if bytes.len() < HEADER_LEN {
            return Err(Error::format(
                bytes.len() as u64,
                format!(
                    "header truncated: expected {HEADER_LEN} bytes, found {}",
                    bytes.len()
                ),
            ));
        }
        let field = |i: usize| {
            let o = 4 + 4 * i;
            u32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes")) as u64
        };
        let dims = [field(0), field(1), field(2), field(3)];
        let count = dims
            .iter()
            .try_fold(1u64, |acc, &d| acc.checked_mul(d))
            .and_then(|n| n.checked_mul(4))
            .filter(|&n| n <= (isize::MAX as u64))
            .ok_or_else(|| Error::format(4, "dimension product overflows"))?;
        let expected = HEADER_LEN as u64 + count;
        let actual = bytes.len() as u64;
        if actual != expected {
            return Err(Error::format(
                actual.min(expected),
                format!("payload size mismatch: expected {expected} bytes, found {actual}"),
            ));
        }
        let data = bytes[HEADER_LEN..]
            .chunks_exact(4)
            .map(|c| T::of(f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64))
            .collect();
        VideoTensor::new(
            dims[0] as usize,
            dims[1] as usize,
            dims[2] as usize,
            dims[3] as usize,
            data,
        )
    }
}

pub fn write_frames<T: Scalar>(path: &Path, video: &VideoTensor<T>) -> Result<()> {
    let bytes = video.to_bytes()?;
    let mut f = fs::File::create(path)?;
    f.write_all(&bytes)?;
    Ok(())
}

pub fn read_frames<T: Scalar>(path: &Path) -> Result<VideoTensor<T>> {
    VideoTensor::from_bytes(&fs::read(path)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DatasetKind {
    Orbit,
    Bounce,
}

impl fmt::Display for DatasetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DatasetKind::Orbit => "orbit",
            DatasetKind::Bounce => "bounce",
        })
    }
}

impl FromStr for DatasetKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "orbit" => Ok(DatasetKind::Orbit),
            "bounce" => Ok(DatasetKind::Bounce),
            other => Err(Error::config(format!("unknown dataset kind `{other}`"))),
        }
    }
}

/// Rotates every coordinate plane of `x` by `angle`.
pub fn rotate_planes<T: Scalar>(x: ArrayView1<'_, T>, angle: f64) -> Array1<T> {
    let (s, c) = angle.sin_cos();
    let (s, c) = (T::of(s), T::of(c));
    let mut out = Array1::zeros(x.len());
    for p in 0..x.len() / 2 {
        let (a, b) = (x[2 * p], x[2 * p + 1]);
        out[2 * p] = c * a - s * b;
        out[2 * p + 1] = s * a + c * b;
    }
    out
}

/// Runs the orbit recurrence from a given initial state.
pub fn orbit_video<T: Scalar, R: Rng>(
    initial: ArrayView1<'_, T>,
    n_frames: usize,
    angular_speed: f64,
    process_noise: f64,
    rng: &mut R,
) -> Result<VideoTensor<T>> {
    let dim = initial.len();
    if dim == 0 || !dim.is_multiple_of(2) {
        return Err(Error::config(format!(
            "orbit dimension must be even, got {dim}"
        )));
    }
    if n_frames < 2 {
        return Err(Error::config("videos need at least two frames"));
    }
    let one = T::one();
    let mut frames = Vec::with_capacity(n_frames);
    let mut x = initial.to_owned();
    frames.push(x.clone());
    for _ in 1..n_frames {
        x = rotate_planes(x.view(), angular_speed);
        if process_noise > 0.0 {
            for v in x.iter_mut() {
                let e: f64 = rng.sample(StandardNormal);
                *v += T::of(process_noise * e);
            }
        }
        x.mapv_inplace(|v| v.max(-one).min(one));
        frames.push(x.clone());
    }
    VideoTensor::from_frames(&frames, 1, 1, dim)
}

pub fn gen_orbit<T: Scalar>(
    n_videos: usize,
    n_frames: usize,
    dim: usize,
    angular_speed: f64,
    process_noise: f64,
    seed: u64,
) -> Result<Vec<VideoTensor<T>>> {
    if dim == 0 || !dim.is_multiple_of(2) {
        return Err(Error::config(format!(
            "orbit dimension must be even, got {dim}"
        )));
    }
    (0..n_videos)
        .map(|v| {
            let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(seed, v as u64));
            let mut x0 = Array1::zeros(dim);
            for p in 0..dim / 2 {
                let theta = rng.gen_range(0.0..std::f64::consts::TAU);
                x0[2 * p] = T::of(ORBIT_RADIUS * theta.cos());
                x0[2 * p + 1] = T::of(ORBIT_RADIUS * theta.sin());
            }
            orbit_video(x0.view(), n_frames, angular_speed, process_noise, &mut rng)
        })
        .collect()
}

/// Renders a Gaussian blob centered at `(row, col)` (continuous pixel coordinates).
pub fn render_blob<T: Scalar>(
    height: usize,
    width: usize,
    row: f64,
    col: f64,
    sigma: f64,
) -> Array1<T> {
    let inv = 1.0 / (2.0 * sigma * sigma);
    let mut out = Array1::zeros(height * width);
    for r in 0..height {
        for c in 0..width {
            let d2 = (r as f64 - row).powi(2) + (c as f64 - col).powi(2);
            out[r * width + c] = T::of(2.0 * (-d2 * inv).exp() - 1.0);
        }
    }
    out
}

/// Advances one coordinate by `v` inside `[0, extent]`, reflecting at the walls.
fn reflect_step(p: &mut f64, v: &mut f64, extent: f64) {
    *p += *v;
    if *p < 0.0 {
        *p = -*p;
        *v = -*v;
    } else if *p > extent {
        *p = 2.0 * extent - *p;
        *v = -*v;
    }
}

/// Blob trajectory: `n_frames` positions starting at `start` with velocity `velocity`
/// in a box `[0, h-1] x [0, w-1]`.
pub fn bounce_positions(
    (height, width): (usize, usize),
    start: (f64, f64),
    velocity: (f64, f64),
    n_frames: usize,
) -> Vec<(f64, f64)> {
    let (er, ec) = ((height - 1) as f64, (width - 1) as f64);
    let (mut pr, mut pc) = start;
    let (mut vr, mut vc) = velocity;
    let mut out = Vec::with_capacity(n_frames);
    out.push((pr, pc));
    for _ in 1..n_frames {
        reflect_step(&mut pr, &mut vr, er);
        reflect_step(&mut pc, &mut vc, ec);
        out.push((pr, pc));
    }
    out
}

pub fn gen_bounce<T: Scalar>(
    n_videos: usize,
    n_frames: usize,
    (height, width): (usize, usize),
    blob_sigma: f64,
    speed: f64,
    seed: u64,
) -> Result<Vec<VideoTensor<T>>> {
    if height < 8 || width < 8 {
        return Err(Error::config(format!(
            "bounce grid must be at least 8x8, got {height}x{width}"
        )));
    }
    if blob_sigma.is_nan() || blob_sigma <= 0.0 {
        return Err(Error::config(format!(
            "blob sigma must be positive, got {blob_sigma}"
        )));
    }
    let limit = height.min(width) as f64 / 2.0;
    if !(0.0..limit).contains(&speed) {
        return Err(Error::config(format!(
            "bounce speed must lie in [0, {limit}), got {speed}"
        )));
    }
    if n_frames < 2 {
        return Err(Error::config("videos need at least two frames"));
    }
    (0..n_videos)
        .map(|v| {
            let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(seed, v as u64));
            let start = (
                rng.gen_range(0.0..=(height - 1) as f64),
                rng.gen_range(0.0..=(width - 1) as f64),
            );
            let heading = rng.gen_range(0.0..std::f64::consts::TAU);
            let velocity = (speed * heading.sin(), speed * heading.cos());
            let frames: Vec<Array1<T>> =
                bounce_positions((height, width), start, velocity, n_frames)
                    .into_iter()
                    .map(|(r, c)| render_blob(height, width, r, c, blob_sigma))
                    .collect();
            VideoTensor::from_frames(&frames, 1, height, width)
        })
        .collect()
}

/// Whole-video train/test partition.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

impl Split {
    /// Random 80/20 split over whole videos. With at least two videos both
    /// sides are non-empty.
    pub fn eighty_twenty(n_videos: usize, seed: u64) -> Self {
        let mut ids: Vec<usize> = (0..n_videos).collect();
        ids.shuffle(&mut ChaCha8Rng::seed_from_u64(stream_seed(seed, u64::MAX)));
        let mut n_test = (n_videos + 2) / 5;
        if n_videos >= 2 {
            n_test = n_test.clamp(1, n_videos - 1);
        }
        let mut test = ids.split_off(n_videos - n_test);
        ids.sort_unstable();
        test.sort_unstable();
        Split { train: ids, test }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitKind {
    Train,
    Test,
}

/// A coupled sample of two consecutive frames of one video.
#[derive(Debug, Clone, PartialEq)]
pub struct FramePair<T> {
    pub x0: Array1<T>,
    pub x1: Array1<T>,
    pub video: usize,
    pub index: usize,
}

/// Draws consecutive frame pairs uniformly over all `(video, i)` positions
/// with `i < num_frames - 1` among the videos of one split.
#[derive(Debug, Clone)]
pub struct PairSampler<'a, T> {
    videos: &'a [VideoTensor<T>],
    ids: Vec<usize>,
    /// Running count of pair positions, one entry per id.
    cumulative: Vec<usize>,
    rng: ChaCha8Rng,
}

impl<'a, T: Scalar> PairSampler<'a, T> {
    pub fn new(
        videos: &'a [VideoTensor<T>],
        split: &Split,
        which: SplitKind,
        seed: u64,
    ) -> Result<Self> {
        let ids = match which {
            SplitKind::Train => split.train.clone(),
            SplitKind::Test => split.test.clone(),
        };
        if ids.is_empty() {
            return Err(Error::config("cannot sample pairs from an empty split"));
        }
        let mut cumulative = Vec::with_capacity(ids.len());
        let mut total = 0;
        let dim = videos
            .get(ids[0])
            .ok_or_else(|| Error::config("split refers to a missing video"))?
            .frame_dim();
        for &id in &ids {
            let v = videos
                .get(id)
                .ok_or_else(|| Error::config(format!("split refers to missing video {id}")))?;
            if v.num_frames < 2 {
                return Err(Error::config(format!(
                    "video {id} has fewer than two frames"
                )));
            }
            if v.frame_dim() != dim {
                return Err(Error::config("videos in a split must share a frame shape"));
            }
            total += v.num_frames - 1;
            cumulative.push(total);
        }
        Ok(PairSampler {
            videos,
            ids,
            cumulative,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn frame_dim(&self) -> usize {
        self.videos[self.ids[0]].frame_dim()
    }

    /// Number of distinct pair positions.
    pub fn positions(&self) -> usize {
        *self.cumulative.last().expect("non-empty split")
    }

    /// Draws a `(video id, frame index)` position.
    pub fn draw_position<R: Rng>(&self, rng: &mut R) -> (usize, usize) {
        let u = rng.gen_range(0..self.positions());
        let slot = self.cumulative.partition_point(|&c| c <= u);
        let before = if slot == 0 {
            0
        } else {
            self.cumulative[slot - 1]
        };
        (self.ids[slot], u - before)
    }

    pub fn sample_pairs(&mut self, batch: usize) -> Vec<FramePair<T>> {
        let mut rng = self.rng.clone();
        let pairs = (0..batch)
            .map(|_| {
                let (video, index) = self.draw_position(&mut rng);
                let v = &self.videos[video];
                FramePair {
                    x0: v.frame(index).to_owned(),
                    x1: v.frame(index + 1).to_owned(),
                    video,
                    index,
                }
            })
            .collect();
        self.rng = rng;
        pairs
    }

    /// Same draw as [`Self::sample_pairs`] from an external generator, stacked
    /// as `(x0, x1)` matrices with one pair per row.
    pub fn sample_batch<R: Rng>(&self, batch: usize, rng: &mut R) -> (Array2<T>, Array2<T>) {
        let d = self.frame_dim();
        let mut x0 = Array2::zeros((batch, d));
        let mut x1 = Array2::zeros((batch, d));
        for b in 0..batch {
            let (video, index) = self.draw_position(rng);
            let v = &self.videos[video];
            x0.row_mut(b).assign(&v.frame(index));
            x1.row_mut(b).assign(&v.frame(index + 1));
        }
        (x0, x1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn static_orbit_is_constant() {
        let vids = gen_orbit::<f64>(3, 5, 4, 0.0, 0.0, 1).unwrap();
        for v in &vids {
            for i in 1..v.num_frames {
                assert_eq!(v.frame(i), v.frame(0));
            }
        }
    }

    #[test]
    fn quarter_turns() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let v = orbit_video(
            array![1.0f64, 0.0].view(),
            4,
            std::f64::consts::FRAC_PI_2,
            0.0,
            &mut rng,
        )
        .unwrap();
        let expected = [[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0], [0.0, -1.0]];
        for (i, e) in expected.iter().enumerate() {
            let f = v.frame(i);
            assert!(
                (f[0] - e[0]).abs() < 1e-12 && (f[1] - e[1]).abs() < 1e-12,
                "frame {i}: {f}"
            );
        }
    }

    #[test]
    fn export_saturates_out_of_range_values() {
        let v = VideoTensor::new(1, 1, 1, 3, vec![1e300f64, -1e300, 0.5]).unwrap();
        let back = VideoTensor::<f64>::from_bytes(&v.to_bytes().unwrap()).unwrap();
        assert_eq!(back.data, vec![f32::MAX as f64, -(f32::MAX as f64), 0.5]);
    }

    #[test]
    fn odd_orbit_dimension_rejected() {
        assert!(matches!(
            gen_orbit::<f64>(1, 3, 3, 0.1, 0.0, 0),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn bounce_argument_checks() {
        assert!(gen_bounce::<f64>(1, 4, (8, 8), 0.0, 1.0, 0).is_err());
        assert!(gen_bounce::<f64>(1, 4, (7, 8), 1.0, 1.0, 0).is_err());
        assert!(gen_bounce::<f64>(1, 4, (8, 8), 1.0, 4.0, 0).is_err());
        assert!(gen_bounce::<f64>(1, 1, (8, 8), 1.0, 1.0, 0).is_err());
    }

    #[test]
    fn static_bounce_is_constant() {
        let vids = gen_bounce::<f64>(2, 6, (8, 10), 1.2, 0.0, 3).unwrap();
        for v in &vids {
            for i in 1..v.num_frames {
                assert_eq!(v.frame(i), v.frame(0));
            }
        }
    }

    #[test]
    fn centered_blob_is_flip_symmetric() {
        let (h, w) = (9, 12);
        let f = render_blob::<f64>(h, w, (h - 1) as f64 / 2.0, (w - 1) as f64 / 2.0, 1.7);
        for r in 0..h {
            for c in 0..w {
                let v = f[r * w + c];
                assert!((v - f[(h - 1 - r) * w + c]).abs() < 1e-15);
                assert!((v - f[r * w + (w - 1 - c)]).abs() < 1e-15);
            }
        }
    }

    /// Closed form: unfold the free motion and fold it back into `[0, extent]`.
    fn folded(p0: f64, v: f64, i: usize, extent: f64) -> f64 {
        let m = (p0 + v * i as f64).rem_euclid(2.0 * extent);
        if m > extent {
            2.0 * extent - m
        } else {
            m
        }
    }

    #[test]
    fn bounce_matches_unfolded_reflection() {
        let (h, w) = (8, 11);
        let start = (1.3, 9.2);
        let vel = (2.9, -1.7);
        let pos = bounce_positions((h, w), start, vel, 300);
        for (i, &(r, c)) in pos.iter().enumerate() {
            assert!(
                (r - folded(start.0, vel.0, i, (h - 1) as f64)).abs() < 1e-9,
                "row at {i}"
            );
            assert!(
                (c - folded(start.1, vel.1, i, (w - 1) as f64)).abs() < 1e-9,
                "col at {i}"
            );
        }
    }

    #[test]
    fn bounce_values_in_range() {
        for v in gen_bounce::<f64>(4, 20, (8, 8), 1.0, 1.5, 9).unwrap() {
            assert!(v.data.iter().all(|x| (-1.0..=1.0).contains(x)));
        }
    }

    #[test]
    fn header_layout() {
        let mut bytes = b"BFV1".to_vec();
        for d in [2u32, 1, 1, 2] {
            bytes.extend_from_slice(&d.to_le_bytes());
        }
        for x in [0f32, 1.0, 2.0, 3.0] {
            bytes.extend_from_slice(&x.to_le_bytes());
        }
        let v = VideoTensor::<f64>::from_bytes(&bytes).unwrap();
        assert_eq!(v.frame(0), array![0.0, 1.0]);
        assert_eq!(v.frame(1), array![2.0, 3.0]);
        assert_eq!(v.to_bytes().unwrap(), bytes);
    }

    #[test]
    fn truncated_payload_names_sizes() {
        let v = VideoTensor::<f64>::new(2, 1, 1, 2, vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        let bytes = v.to_bytes().unwrap();
        let err = VideoTensor::<f64>::from_bytes(&bytes[..bytes.len() - 3]).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("expected 36 bytes, found 33"), "{msg}");
        assert!(matches!(err, Error::Format { offset: 33, .. }));
    }

    #[test]
    fn bad_magic_and_overflow() {
        assert!(matches!(
            VideoTensor::<f64>::from_bytes(b"BFV2\0\0\0\0"),
            Err(Error::Format { offset: 0, .. })
        ));
        let mut bytes = b"BFV1".to_vec();
        for _ in 0..4 {
            bytes.extend_from_slice(&u32::MAX.to_le_bytes());
        }
        assert!(matches!(
            VideoTensor::<f64>::from_bytes(&bytes),
            Err(Error::Format { offset: 4, .. })
        ));
    }

    #[test]
    fn split_is_eighty_twenty_and_disjoint() {
        let s = Split::eighty_twenty(100, 5);
        assert_eq!((s.train.len(), s.test.len()), (80, 20));
        assert!(s.test.iter().all(|t| !s.train.contains(t)));
        let small = Split::eighty_twenty(3, 5);
        assert_eq!((small.train.len(), small.test.len()), (2, 1));
    }

    #[test]
    fn single_two_frame_video_always_same_pair() {
        let v = vec![VideoTensor::new(2, 1, 1, 2, vec![0.0f64, 1.0, 2.0, 3.0]).unwrap()];
        let split = Split {
            train: vec![0],
            test: vec![],
        };
        let mut s = PairSampler::new(&v, &split, SplitKind::Train, 0).unwrap();
        for p in s.sample_pairs(20) {
            assert_eq!((p.x0, p.x1), (array![0.0, 1.0], array![2.0, 3.0]));
        }
        assert!(PairSampler::new(&v, &split, SplitKind::Test, 0).is_err());
    }

    #[test]
    fn pairs_are_consecutive_frames_of_train_videos() {
        let vids = gen_orbit::<f64>(10, 7, 4, 0.3, 0.01, 2).unwrap();
        let split = Split::eighty_twenty(vids.len(), 2);
        let mut s = PairSampler::new(&vids, &split, SplitKind::Train, 4).unwrap();
        for p in s.sample_pairs(2000) {
            assert!(split.train.contains(&p.video));
            assert!(p.index + 1 < vids[p.video].num_frames);
            assert_eq!(p.x0, vids[p.video].frame(p.index));
            assert_eq!(p.x1, vids[p.video].frame(p.index + 1));
        }
    }
}
