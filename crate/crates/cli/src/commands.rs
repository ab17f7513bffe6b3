//! The pipeline stages behind each subcommand.
//!
//! Directory layouts:
//!
//! ```text
//! data/      manifest.txt  config.resolved  videos/video_0000.bfv1 ...
//! train/     model.bfck  loss.csv  config.resolved
//! rollouts/  <method>_eps<e>_<direction>/ group.meta  config.resolved
//!                rollout_000.bfv1  rollout_000.meta ...
//! eval/      metrics.csv  summary.csv
//! plot/      scatter.svg  trend.svg  summary.csv
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use biflow::metrics::{reference_stats, sliding_fvd_features};
use biflow::sampling::{noise_frame, Origin};
use biflow::video::{gen_bounce, gen_orbit, read_frames, stream_seed, write_frames};
use biflow::{
    aggregate_steps, drift_slope, load_checkpoint, rollout, save_checkpoint, CharacteristicCurve,
    Checkpoint, CheckpointMeta, DatasetKind, Direction, Error, FeatureExtractor, FieldModel,
    ModelKind, PairSampler, Result, Rollout, SamplingPattern, Split, SplitKind, Trainer,
    VideoTensor,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::config::{ExperimentConfig, TOOL_VERSION};
use crate::plot;

fn io_err(path: &Path, e: std::io::Error) -> Error {
    Error::Io(std::io::Error::new(
        e.kind(),
        format!("{}: {e}", path.display()),
    ))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| io_err(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| io_err(path, e))
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| io_err(path, e))
}

fn read_kv(path: &Path) -> Result<BTreeMap<String, String>> {
    Ok(crate::config::parse_pairs(&read_text(path)?)
        .map_err(|e| Error::Format {
            offset: 0,
            message: format!("{}: {e}", path.display()),
        })?
        .into_iter()
        .collect())
}

fn kv_get<'a>(map: &'a BTreeMap<String, String>, key: &str, path: &Path) -> Result<&'a str> {
    map.get(key)
        .map(String::as_str)
        .ok_or_else(|| Error::Format {
            offset: 0,
            message: format!("{} lacks `{key}`", path.display()),
        })
}

fn kv_parse<T: std::str::FromStr>(
    map: &BTreeMap<String, String>,
    key: &str,
    path: &Path,
) -> Result<T> {
    kv_get(map, key, path)?.parse().map_err(|_| Error::Format {
        offset: 0,
        message: format!("{}: bad value for `{key}`", path.display()),
    })
}

fn join<T: ToString>(xs: &[T]) -> String {
    xs.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

fn parse_ids(s: &str) -> Result<Vec<usize>> {
    if s.is_empty() {
        return Ok(Vec::new());
    }
    s.split(',')
        .map(|p| {
            p.trim().parse().map_err(|_| Error::Format {
                offset: 0,
                message: format!("bad video id `{p}` in manifest"),
            })
        })
        .collect()
}

/// A generated dataset loaded back from disk.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub kind: DatasetKind,
    pub videos: Vec<VideoTensor<f64>>,
    pub split: Split,
}

impl Dataset {
    pub fn frame_dim(&self) -> usize {
        self.videos[0].frame_dim()
    }

    pub fn test_videos(&self) -> Vec<&VideoTensor<f64>> {
        self.split.test.iter().map(|&i| &self.videos[i]).collect()
    }

    pub fn features(&self) -> FeatureExtractor<f64> {
        FeatureExtractor::for_video(self.kind, &self.videos[0])
    }
}

fn video_path(dir: &Path, i: usize) -> PathBuf {
    dir.join("videos").join(format!("video_{i:04}.bfv1"))
}

pub fn generate_videos(cfg: &ExperimentConfig) -> Result<Vec<VideoTensor<f64>>> {
    let d = &cfg.dataset;
    match d.kind {
        DatasetKind::Orbit => gen_orbit(
            d.n_videos,
            d.n_frames,
            d.orbit_dim,
            d.orbit_angular_speed,
            d.orbit_process_noise,
            d.seed,
        ),
        DatasetKind::Bounce => gen_bounce(
            d.n_videos,
            d.n_frames,
            (d.bounce_height, d.bounce_width),
            d.bounce_sigma,
            d.bounce_speed,
            d.seed,
        ),
    }
}

/// Writes the dataset videos, the split manifest and the resolved config.
pub fn gen_data(cfg: &ExperimentConfig, out: &Path) -> Result<Dataset> {
    let videos = generate_videos(cfg)?;
    let split = Split::eighty_twenty(videos.len(), cfg.dataset.seed);
    create_dir(&out.join("videos"))?;
    videos
        .par_iter()
        .enumerate()
        .try_for_each(|(i, v)| write_frames(&video_path(out, i), v))?;
    let v0 = &videos[0];
    let manifest = format!(
        "# biflow {TOOL_VERSION} dataset manifest\n\
         kind = {}\nn_videos = {}\nn_frames = {}\nchannels = {}\nheight = {}\nwidth = {}\n\
         n_train = {}\nn_test = {}\ntrain = {}\ntest = {}\n",
        cfg.dataset.kind,
        videos.len(),
        v0.num_frames,
        v0.channels,
        v0.height,
        v0.width,
        split.train.len(),
        split.test.len(),
        join(&split.train),
        join(&split.test),
    );
    write_text(&out.join("manifest.txt"), &manifest)?;
    write_text(&out.join("config.resolved"), &cfg.to_text())?;
    Ok(Dataset {
        kind: cfg.dataset.kind,
        videos,
        split,
    })
}

pub fn load_data(dir: &Path) -> Result<Dataset> {
    let mpath = dir.join("manifest.txt");
    let m = read_kv(&mpath)?;
    let kind: DatasetKind = kv_get(&m, "kind", &mpath)?.parse()?;
    let n: usize = kv_parse(&m, "n_videos", &mpath)?;
    let split = Split {
        train: parse_ids(kv_get(&m, "train", &mpath)?)?,
        test: parse_ids(kv_get(&m, "test", &mpath)?)?,
    };
    if n == 0 || split.train.iter().chain(&split.test).any(|&i| i >= n) {
        return Err(Error::Format {
            offset: 0,
            message: format!("{}: split ids out of range", mpath.display()),
        });
    }
    let videos = (0..n)
        .into_par_iter()
        .map(|i| {
            let p = video_path(dir, i);
            read_frames::<f64>(&p).map_err(|e| match e {
                Error::Io(io) => io_err(&p, io),
                Error::Format { offset, message } => Error::Format {
                    offset,
                    message: format!("{}: {message}", p.display()),
                },
                other => other,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        kind,
        videos,
        split,
    })
}

/// Outcome of a training run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub steps: u64,
    /// Mean loss over the last (up to) 100 steps of this run; NaN if none ran.
    pub final_loss: f64,
    pub checkpoint: PathBuf,
}

fn init_model(
    cfg: &ExperimentConfig,
    kind: ModelKind,
    frame_dim: usize,
) -> Result<FieldModel<f64>> {
    FieldModel::init(
        kind,
        frame_dim,
        cfg.model.hidden_dims.clone(),
        cfg.model.activation,
        cfg.model.coord_embedding,
        cfg.model.seed,
    )
}

/// Trains `cfg.model.kind` on the train split.
///
/// The checkpoint `out/model.bfck` is rewritten every
/// `train.checkpoint_every` steps and at the end, so after a failure it holds
/// the last good state. With `resume`, training continues from that file
/// (whose config hash must match) and appends to `loss.csv`.
pub fn train(
    cfg: &ExperimentConfig,
    data_dir: &Path,
    out: &Path,
    resume: bool,
) -> Result<TrainReport> {
    let data = load_data(data_dir)?;
    if data.kind != cfg.dataset.kind {
        return Err(Error::Config(format!(
            "config names a {} dataset but {} holds {}",
            cfg.dataset.kind,
            data_dir.display(),
            data.kind
        )));
    }
    create_dir(out)?;
    let ckpt_path = out.join("model.bfck");
    let hash = cfg.training_hash();
    let mut trainer = if resume && ckpt_path.exists() {
        let ck: Checkpoint<f64> = load_checkpoint(&ckpt_path)?;
        ck.check_config_hash(hash)?;
        if ck.model.kind() != cfg.model.kind {
            return Err(Error::Config(
                "checkpoint model kind differs from config".into(),
            ));
        }
        let opt = ck
            .optimizer
            .ok_or_else(|| Error::Config("checkpoint has no optimizer state to resume".into()))?;
        Trainer::resume(ck.model, opt)?
    } else {
        Trainer::new(init_model(cfg, cfg.model.kind, data.frame_dim())?)
    };
    let sampler = PairSampler::new(&data.videos, &data.split, SplitKind::Train, cfg.train.seed)?;
    write_text(&out.join("config.resolved"), &cfg.to_text())?;

    let meta = |step: u64| {
        let mut extra = BTreeMap::new();
        extra.insert("loss".to_string(), cfg.model.kind.to_string());
        extra.insert("tool_version".to_string(), TOOL_VERSION.to_string());
        CheckpointMeta {
            dataset: cfg.dataset.kind.to_string(),
            seed: cfg.train.seed,
            step,
            config_hash: hash,
            extra,
        }
    };
    let save = |t: &Trainer<f64>| -> Result<()> {
        let ck = Checkpoint {
            model: t.model.clone(),
            optimizer: Some(t.optimizer.clone()),
            meta: meta(t.step()),
        };
        save_checkpoint(&ckpt_path, &ck)
    };
    let curve = trainer.run(&sampler, &cfg.train_config(), save)?;

    let loss_path = out.join("loss.csv");
    let appending = resume && loss_path.exists();
    let mut text = String::new();
    if !appending {
        text.push_str("step,loss,primary,secondary\n");
    }
    for r in &curve {
        let _ = writeln!(text, "{},{},{},{}", r.step, r.loss, r.primary, r.secondary);
    }
    let mut f = fs::OpenOptions::new()
        .create(true)
        .append(appending)
        .write(true)
        .truncate(!appending)
        .open(&loss_path)
        .map_err(|e| io_err(&loss_path, e))?;
    f.write_all(text.as_bytes())
        .map_err(|e| io_err(&loss_path, e))?;

    let tail = &curve[curve.len().saturating_sub(100)..];
    let final_loss = if tail.is_empty() {
        f64::NAN
    } else {
        tail.iter().map(|r| r.loss).sum::<f64>() / tail.len() as f64
    };
    Ok(TrainReport {
        steps: trainer.step(),
        final_loss,
        checkpoint: ckpt_path,
    })
}

/// Initial frames for rollouts: uniformly random frames of test videos.
pub fn initial_frames(data: &Dataset, n: usize, seed: u64) -> Vec<(Origin, ndarray::Array1<f64>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(seed, 0x1417));
    let test = &data.split.test;
    (0..n)
        .map(|_| {
            let video = test[rng.gen_range(0..test.len())];
            let v = &data.videos[video];
            let frame = rng.gen_range(0..v.num_frames);
            let origin = Origin {
                dataset: data.kind.to_string(),
                video,
                frame,
            };
            (origin, v.frame(frame).to_owned())
        })
        .collect()
}

pub fn group_name(kind: ModelKind, epsilon: f64, direction: Direction) -> String {
    format!("{kind}_eps{epsilon:.2}_{direction}")
}

/// Sampling patterns a model is rolled out with: one per noise level for
/// bi-flow, a single one otherwise.
pub fn patterns(
    cfg: &ExperimentConfig,
    kind: ModelKind,
    direction: Direction,
) -> Result<Vec<SamplingPattern>> {
    let pats = match (kind, direction) {
        (ModelKind::BiFlow, Direction::Forward) => cfg
            .sampling
            .epsilon_list
            .iter()
            .map(|&e| {
                CharacteristicCurve::forward(cfg.sampling.curve, e).map(SamplingPattern::Joint)
            })
            .collect::<Result<Vec<_>>>()?,
        (ModelKind::BiFlow, Direction::Backward) => cfg
            .sampling
            .epsilon_list
            .iter()
            .map(|&epsilon| SamplingPattern::Backward { epsilon })
            .collect(),
        (ModelKind::ConDiff, Direction::Backward) => {
            return Err(Error::Config(
                "condiff has no reverted flow, so it cannot be rolled out backward".into(),
            ))
        }
        (ModelKind::Flow, Direction::Backward) => {
            return Err(Error::Config(
                "backward rollouts need a biflow model".into(),
            ))
        }
        (ModelKind::Flow, Direction::Forward) => vec![SamplingPattern::Stream],
        (ModelKind::ConDiff, Direction::Forward) => vec![SamplingPattern::Conditional],
    };
    Ok(pats)
}

fn rollout_meta(r: &Rollout<f64>, solver: &str, direction: Direction) -> String {
    let diverged = match &r.diverged {
        None => "none".to_string(),
        Some(d) => format!("frame {}: {}", d.frame, d.message.replace('\n', " ")),
    };
    format!(
        "seed = {}\npattern = {}\nepsilon = {}\nsolver = {}\ndirection = {}\n\
         origin_dataset = {}\norigin_video = {}\norigin_frame = {}\nn_frames = {}\n\
         diverged = {}\nsteps = {}\n",
        r.seed,
        r.pattern,
        r.pattern.epsilon(),
        solver,
        direction,
        r.origin.dataset,
        r.origin.video,
        r.origin.frame,
        r.frames.len(),
        diverged,
        join(&r.per_frame_steps),
    )
}

/// Rolls a checkpoint out from random test frames, one group directory per
/// sampling pattern. Returns the group directories.
pub fn rollout_cmd(
    cfg: &ExperimentConfig,
    checkpoint: &Path,
    data_dir: &Path,
    out: &Path,
) -> Result<Vec<PathBuf>> {
    let ck: Checkpoint<f64> = load_checkpoint(checkpoint)?;
    let data = load_data(data_dir)?;
    if ck.model.frame_dim() != data.frame_dim() {
        return Err(Error::Config(format!(
            "checkpoint frames have {} values, dataset frames {}",
            ck.model.frame_dim(),
            data.frame_dim()
        )));
    }
    let direction = cfg.sampling.direction;
    let kind = ck.model.kind();
    let pats = patterns(cfg, kind, direction)?;
    let spec = cfg.solve_spec();
    spec.validate()?;
    let inits = initial_frames(&data, cfg.eval.n_rollouts, cfg.sampling.seed);
    let v0 = &data.videos[0];
    let solver = cfg.sampling.method.as_str().to_string();
    let mut groups = Vec::new();
    for pat in pats {
        let dir = out.join(group_name(kind, pat.epsilon(), direction));
        create_dir(&dir)?;
        let rolls = inits
            .par_iter()
            .enumerate()
            .map(|(i, (origin, x))| {
                let mut r = rollout(
                    &ck.model,
                    pat,
                    x.view(),
                    cfg.eval.n_frames,
                    &spec,
                    stream_seed(cfg.sampling.seed, 1 + i as u64),
                )?;
                r.origin = origin.clone();
                Ok(r)
            })
            .collect::<Result<Vec<_>>>()?;
        rolls
            .par_iter()
            .enumerate()
            .try_for_each(|(i, r)| -> Result<()> {
                let video = r.to_video(v0.channels, v0.height, v0.width)?;
                write_frames(&dir.join(format!("rollout_{i:03}.bfv1")), &video)?;
                write_text(
                    &dir.join(format!("rollout_{i:03}.meta")),
                    &rollout_meta(r, &solver, direction),
                )
            })?;
        let group = format!(
            "# biflow {TOOL_VERSION} rollout group\nmethod = {kind}\nepsilon = {}\ncurve = {}\n\
             direction = {direction}\nsolver = {solver}\npattern = {pat}\ndataset = {}\n\
             n_rollouts = {}\nn_frames = {}\ncheckpoint_step = {}\n",
            pat.epsilon(),
            cfg.sampling.curve,
            data.kind,
            rolls.len(),
            cfg.eval.n_frames,
            ck.meta.step,
        );
        write_text(&dir.join("group.meta"), &group)?;
        write_text(&dir.join("config.resolved"), &cfg.to_text())?;
        groups.push(dir);
    }
    Ok(groups)
}

/// One row of `summary.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub dataset: String,
    pub method: String,
    pub epsilon: f64,
    pub direction: String,
    pub solver: String,
    pub n_rollouts: usize,
    pub diverged: usize,
    pub mean_steps: f64,
    pub mean_distance: f64,
    pub drift_slope: f64,
    pub drift_intercept: f64,
    pub last_window_start: usize,
    /// Lowest mean distance among groups sharing dataset, method, direction
    /// and solver.
    pub best: bool,
}

pub const SUMMARY_HEADER: &str = "dataset,method,epsilon,direction,solver,n_rollouts,diverged,\
mean_steps,mean_distance,drift_slope,drift_intercept,last_window_start,best";

impl SummaryRow {
    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.dataset,
            self.method,
            self.epsilon,
            self.direction,
            self.solver,
            self.n_rollouts,
            self.diverged,
            self.mean_steps,
            self.mean_distance,
            self.drift_slope,
            self.drift_intercept,
            self.last_window_start,
            u8::from(self.best)
        )
    }

    pub fn parse_csv(text: &str) -> Result<Vec<SummaryRow>> {
        let mut lines = text.lines();
        if lines.next() != Some(SUMMARY_HEADER) {
            return Err(Error::Format {
                offset: 0,
                message: "not a summary CSV (header differs)".into(),
            });
        }
        let mut offset = SUMMARY_HEADER.len() as u64 + 1;
        let mut rows = Vec::new();
        for line in lines {
            let bad = |what: &str| Error::Format {
                offset,
                message: format!("summary row `{line}`: {what}"),
            };
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 13 {
                return Err(bad("expected 13 fields"));
            }
            let num = |i: usize| f[i].parse::<f64>().map_err(|_| bad("bad number"));
            let int = |i: usize| f[i].parse::<usize>().map_err(|_| bad("bad count"));
            rows.push(SummaryRow {
                dataset: f[0].into(),
                method: f[1].into(),
                epsilon: num(2)?,
                direction: f[3].into(),
                solver: f[4].into(),
                n_rollouts: int(5)?,
                diverged: int(6)?,
                mean_steps: num(7)?,
                mean_distance: num(8)?,
                drift_slope: num(9)?,
                drift_intercept: num(10)?,
                last_window_start: int(11)?,
                best: f[12] == "1",
            });
            offset += line.len() as u64 + 1;
        }
        Ok(rows)
    }
}

/// Result of evaluating rollout groups.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub rows: Vec<SummaryRow>,
    /// `(group index, window start, distance)`.
    pub series: Vec<(usize, usize, f64)>,
}

type Group = (BTreeMap<String, String>, Vec<Rollout<f64>>);

fn load_group(dir: &Path) -> Result<Group> {
    let gpath = dir.join("group.meta");
    let g = read_kv(&gpath)?;
    let n: usize = kv_parse(&g, "n_rollouts", &gpath)?;
    let rolls = (0..n)
        .into_par_iter()
        .map(|i| {
            let vpath = dir.join(format!("rollout_{i:03}.bfv1"));
            let mpath = dir.join(format!("rollout_{i:03}.meta"));
            let video = read_frames::<f64>(&vpath).map_err(|e| match e {
                Error::Io(io) => io_err(&vpath, io),
                other => other,
            })?;
            let m = read_kv(&mpath)?;
            let steps = match kv_get(&m, "steps", &mpath)? {
                "" => Vec::new(),
                s => s
                    .split(',')
                    .map(|x| x.parse::<usize>())
                    .collect::<std::result::Result<Vec<_>, _>>()
                    .map_err(|_| Error::Format {
                        offset: 0,
                        message: format!("{}: bad steps list", mpath.display()),
                    })?,
            };
            let diverged = kv_get(&m, "diverged", &mpath)? != "none";
            Ok(Rollout {
                frames: video.frames().map(|f| f.to_owned()).collect(),
                per_frame_steps: steps,
                pattern: SamplingPattern::Stream,
                spec: biflow::SolveSpec::forward(biflow::Method::euler(1.0)),
                seed: kv_parse(&m, "seed", &mpath)?,
                origin: Origin::default(),
                diverged: diverged.then(|| biflow::sampling::DivergenceInfo {
                    frame: video.num_frames,
                    message: kv_get(&m, "diverged", &mpath)
                        .unwrap_or_default()
                        .to_string(),
                }),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((g, rolls))
}

/// Sliding-window distance, drift slope and mean steps for every group.
pub fn evaluate(
    rollout_dirs: &[PathBuf],
    data_dir: &Path,
    window: usize,
    stride: usize,
) -> Result<Evaluation> {
    if rollout_dirs.is_empty() {
        return Err(Error::Config("no rollout directories to evaluate".into()));
    }
    let data = load_data(data_dir)?;
    let fx = data.features();
    let reference = reference_stats(&data.test_videos(), &fx)?;
    let mut rows = Vec::new();
    let mut series = Vec::new();
    for (gi, dir) in rollout_dirs.iter().enumerate() {
        let (g, rolls) = load_group(dir)?;
        let gpath = dir.join("group.meta");
        for (i, r) in rolls.iter().enumerate() {
            if r.frames.len() < window && r.diverged.is_none() {
                return Err(Error::Config(format!(
                    "rollout {} has {} frames, fewer than the window of {window}",
                    dir.join(format!("rollout_{i:03}.bfv1")).display(),
                    r.frames.len()
                )));
            }
        }
        let feats = rolls
            .par_iter()
            .map(|r| fx.features_of(r.frames.iter().map(|f| f.view())))
            .collect::<Result<Vec<_>>>()?;
        let s = sliding_fvd_features(&feats, &reference, window, stride).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", dir.display())),
            other => other,
        })?;
        let (slope, intercept) = if s.values.len() >= 2 {
            drift_slope(&s)?
        } else {
            (0.0, s.values.first().map_or(f64::NAN, |v| v.1))
        };
        for &(start, v) in &s.values {
            series.push((gi, start, v));
        }
        rows.push(SummaryRow {
            dataset: kv_get(&g, "dataset", &gpath)?.to_string(),
            method: kv_get(&g, "method", &gpath)?.to_string(),
            epsilon: kv_parse(&g, "epsilon", &gpath)?,
            direction: kv_get(&g, "direction", &gpath)?.to_string(),
            solver: kv_get(&g, "solver", &gpath)?.to_string(),
            n_rollouts: rolls.len(),
            diverged: rolls.iter().filter(|r| r.diverged.is_some()).count(),
            mean_steps: aggregate_steps(&rolls),
            mean_distance: s.mean(),
            drift_slope: slope,
            drift_intercept: intercept,
            last_window_start: s.values.last().map_or(0, |v| v.0),
            best: false,
        });
    }
    mark_best(&mut rows);
    Ok(Evaluation { rows, series })
}

fn mark_best(rows: &mut [SummaryRow]) {
    let key = |r: &SummaryRow| {
        (
            r.dataset.clone(),
            r.method.clone(),
            r.direction.clone(),
            r.solver.clone(),
        )
    };
    let mut best: BTreeMap<_, usize> = BTreeMap::new();
    for (i, r) in rows.iter().enumerate() {
        let e = best.entry(key(r)).or_insert(i);
        if r.mean_distance < rows[*e].mean_distance {
            *e = i;
        }
    }
    for i in best.into_values() {
        rows[i].best = true;
    }
}

pub fn summary_csv(rows: &[SummaryRow]) -> String {
    let mut out = format!("{SUMMARY_HEADER}\n");
    for r in rows {
        out.push_str(&r.to_csv());
        out.push('\n');
    }
    out
}

pub fn metrics_csv(ev: &Evaluation) -> String {
    let mut out = String::from("dataset,method,epsilon,direction,solver,window_start,distance\n");
    for &(g, start, v) in &ev.series {
        let r = &ev.rows[g];
        let _ = writeln!(
            out,
            "{},{},{},{},{},{start},{v}",
            r.dataset, r.method, r.epsilon, r.direction, r.solver
        );
    }
    out
}

/// Evaluates and writes `metrics.csv` and `summary.csv` into `out`.
pub fn evaluate_cmd(
    rollout_dirs: &[PathBuf],
    data_dir: &Path,
    out: &Path,
    window: usize,
    stride: usize,
) -> Result<Evaluation> {
    let ev = evaluate(rollout_dirs, data_dir, window, stride)?;
    create_dir(out)?;
    write_text(&out.join("metrics.csv"), &metrics_csv(&ev))?;
    write_text(&out.join("summary.csv"), &summary_csv(&ev.rows))?;
    Ok(ev)
}

/// Reads summaries and writes the scatter and trend charts plus the merged
/// summary CSV.
pub fn plot_cmd(summaries: &[PathBuf], out: &Path) -> Result<Vec<SummaryRow>> {
    if summaries.is_empty() {
        return Err(Error::Config("no summary files to plot".into()));
    }
    let mut rows = Vec::new();
    for p in summaries {
        let text = read_text(p)?;
        rows.extend(SummaryRow::parse_csv(&text).map_err(|e| match e {
            Error::Format { offset, message } => Error::Format {
                offset,
                message: format!("{}: {message}", p.display()),
            },
            other => other,
        })?);
    }
    if rows.is_empty() {
        return Err(Error::Config("summary files contain no rows".into()));
    }
    create_dir(out)?;
    write_text(&out.join("scatter.svg"), &plot::scatter_svg(&rows))?;
    write_text(&out.join("trend.svg"), &plot::trend_svg(&rows))?;
    write_text(&out.join("summary.csv"), &summary_csv(&rows))?;
    Ok(rows)
}

/// The whole grid: data, one model per method, rollouts over every noise
/// level, evaluation and plots, under `out/`.
pub fn sweep(cfg: &ExperimentConfig, out: &Path) -> Result<Evaluation> {
    let data_dir = out.join("data");
    gen_data(cfg, &data_dir)?;
    let mut groups = Vec::new();
    for &kind in &cfg.sweep.methods {
        let mut c = cfg.clone();
        c.model.kind = kind;
        let tdir = out.join("train").join(kind.to_string());
        let report = train(&c, &data_dir, &tdir, false)?;
        groups.extend(rollout_cmd(
            &c,
            &report.checkpoint,
            &data_dir,
            &out.join("rollouts"),
        )?);
    }
    let ev = evaluate_cmd(
        &groups,
        &data_dir,
        &out.join("eval"),
        cfg.eval.window,
        cfg.eval.stride,
    )?;
    plot_cmd(&[out.join("eval").join("summary.csv")], &out.join("plot"))?;
    write_text(&out.join("config.resolved"), &cfg.to_text())?;
    Ok(ev)
}

/// Corrupts clean frames with `alpha` noise and solves the denoiser back to
/// `alpha = 0`. Returns mean distances to the clean frames before and after.
pub fn denoise_check(
    model: &FieldModel<f64>,
    frames: &[ndarray::Array1<f64>],
    alpha: f64,
    spec: &biflow::SolveSpec,
    seed: u64,
) -> Result<(f64, f64)> {
    let pairs = frames
        .par_iter()
        .enumerate()
        .map(|(i, x)| {
            let n = noise_frame::<f64>(x.len(), stream_seed(seed, i as u64));
            let corrupted = x + &(&n * alpha);
            let (clean, _) = biflow::sampling::denoise(model, corrupted.view(), alpha, 0.0, spec)?;
            let dist = |a: &ndarray::Array1<f64>| (a - x).mapv(|v| v * v).sum().sqrt();
            Ok((dist(&corrupted), dist(&clean)))
        })
        .collect::<Result<Vec<_>>>()?;
    let n = pairs.len().max(1) as f64;
    Ok((
        pairs.iter().map(|p| p.0).sum::<f64>() / n,
        pairs.iter().map(|p| p.1).sum::<f64>() / n,
    ))
}
