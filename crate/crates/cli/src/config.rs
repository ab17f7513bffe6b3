//! Experiment configuration: a flat `section.key = value` text format.
//!
//! Blank lines and `#` comments are ignored. Every key has a default, so an
//! empty file is a valid config. Unknown keys are rejected so typos surface
//! early. [`ExperimentConfig::to_text`] writes the fully resolved form that
//! every artifact directory carries.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use biflow::checkpoint::fnv1a;
use biflow::solver::HeunConfig;
use biflow::video::stream_seed;
use biflow::{
    Activation, AdamConfig, BiflowWeights, CoordEmbedding, CurveShape, DatasetKind, Direction,
    Error, Method, ModelKind, Result, SolveSpec, TrainConfig,
};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetConfig {
    pub kind: DatasetKind,
    pub n_videos: usize,
    pub n_frames: usize,
    pub seed: u64,
    pub orbit_dim: usize,
    pub orbit_angular_speed: f64,
    pub orbit_process_noise: f64,
    pub bounce_height: usize,
    pub bounce_width: usize,
    pub bounce_sigma: f64,
    pub bounce_speed: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub hidden_dims: Vec<usize>,
    pub activation: Activation,
    pub coord_embedding: CoordEmbedding,
    pub alpha_max: f64,
    pub weight_video: f64,
    pub weight_noise: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingConfig {
    pub iterations: u64,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
    pub checkpoint_every: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolverKind {
    HeunAdaptive,
    EulerFixed,
    HeunFixed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplingConfig {
    pub method: SolverKind,
    pub atol: f64,
    pub rtol: f64,
    pub initial_step: f64,
    pub min_step: f64,
    pub max_step: f64,
    pub step_size: f64,
    pub curve: CurveShape,
    pub epsilon_list: Vec<f64>,
    pub direction: Direction,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    pub n_rollouts: usize,
    pub n_frames: usize,
    pub window: usize,
    pub stride: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub methods: Vec<ModelKind>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub dataset: DatasetConfig,
    pub model: ModelConfig,
    pub train: TrainingConfig,
    pub sampling: SamplingConfig,
    pub eval: EvalConfig,
    pub sweep: SweepConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            dataset: DatasetConfig {
                kind: DatasetKind::Bounce,
                n_videos: 256,
                n_frames: 40,
                seed: 1,
                orbit_dim: 8,
                orbit_angular_speed: 0.2,
                orbit_process_noise: 0.01,
                bounce_height: 8,
                bounce_width: 8,
                bounce_sigma: 1.0,
                bounce_speed: 1.0,
            },
            model: ModelConfig {
                kind: ModelKind::BiFlow,
                hidden_dims: vec![256, 256, 256],
                activation: Activation::Silu,
                coord_embedding: CoordEmbedding::default(),
                alpha_max: 1.0,
                weight_video: 1.0,
                weight_noise: 1.0,
                seed: 7,
            },
            train: TrainingConfig {
                iterations: 10_000,
                batch_size: 64,
                learning_rate: 1e-3,
                beta1: 0.9,
                beta2: 0.999,
                eps: 1e-8,
                seed: 5,
                checkpoint_every: 1000,
            },
            sampling: SamplingConfig {
                method: SolverKind::HeunAdaptive,
                atol: 1e-2,
                rtol: 1e-2,
                initial_step: 0.1,
                min_step: 1e-4,
                max_step: 1.0,
                step_size: 0.05,
                curve: CurveShape::Linear,
                epsilon_list: vec![0.0, 0.1, 0.2, 0.3],
                direction: Direction::Forward,
                seed: 3,
            },
            eval: EvalConfig {
                n_rollouts: 64,
                n_frames: 200,
                window: 32,
                stride: 16,
            },
            sweep: SweepConfig {
                methods: ModelKind::ALL.to_vec(),
            },
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.trim()
        .parse()
        .map_err(|_| Error::Config(format!("`{key}`: cannot parse `{v}`")))
}

fn parse_list<T: std::str::FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
    if v.trim().is_empty() {
        return Ok(Vec::new());
    }
    v.split(',').map(|p| parse(key, p)).collect()
}

fn join<T: ToString>(xs: &[T]) -> String {
    xs.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

impl SolverKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SolverKind::HeunAdaptive => "heun_adaptive",
            SolverKind::EulerFixed => "euler_fixed",
            SolverKind::HeunFixed => "heun_fixed",
        }
    }
}

impl std::str::FromStr for SolverKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "heun_adaptive" => Ok(SolverKind::HeunAdaptive),
            "euler_fixed" => Ok(SolverKind::EulerFixed),
            "heun_fixed" => Ok(SolverKind::HeunFixed),
            other => Err(Error::Config(format!("unknown solver `{other}`"))),
        }
    }
}

/// Splits config text into ordered key/value pairs.
pub fn parse_pairs(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", n + 1)))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

impl ExperimentConfig {
    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        for (k, v) in parse_pairs(text)? {
            cfg.set(&k, &v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::Io(std::io::Error::new(
                e.kind(),
                format!("cannot read config {}: {e}", path.display()),
            ))
        })?;
        ExperimentConfig::from_text(&text)
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let k = key;
        match key {
            "dataset.kind" => self.dataset.kind = v.parse()?,
            "dataset.n_videos" => self.dataset.n_videos = parse(k, v)?,
            "dataset.n_frames" => self.dataset.n_frames = parse(k, v)?,
            "dataset.seed" => self.dataset.seed = parse(k, v)?,
            "dataset.orbit.dim" => self.dataset.orbit_dim = parse(k, v)?,
            "dataset.orbit.angular_speed" => self.dataset.orbit_angular_speed = parse(k, v)?,
            "dataset.orbit.process_noise" => self.dataset.orbit_process_noise = parse(k, v)?,
            "dataset.bounce.height" => self.dataset.bounce_height = parse(k, v)?,
            "dataset.bounce.width" => self.dataset.bounce_width = parse(k, v)?,
            "dataset.bounce.sigma" => self.dataset.bounce_sigma = parse(k, v)?,
            "dataset.bounce.speed" => self.dataset.bounce_speed = parse(k, v)?,
            "model.kind" => self.model.kind = v.parse()?,
            "model.hidden_dims" => self.model.hidden_dims = parse_list(k, v)?,
            "model.activation" => self.model.activation = v.parse()?,
            "model.coord_embedding" => self.model.coord_embedding = v.parse()?,
            "model.alpha_max" => self.model.alpha_max = parse(k, v)?,
            "model.weight_video" => self.model.weight_video = parse(k, v)?,
            "model.weight_noise" => self.model.weight_noise = parse(k, v)?,
            "model.seed" => self.model.seed = parse(k, v)?,
            "train.iterations" => self.train.iterations = parse(k, v)?,
            "train.batch_size" => self.train.batch_size = parse(k, v)?,
            "train.learning_rate" => self.train.learning_rate = parse(k, v)?,
            "train.beta1" => self.train.beta1 = parse(k, v)?,
            "train.beta2" => self.train.beta2 = parse(k, v)?,
            "train.eps" => self.train.eps = parse(k, v)?,
            "train.seed" => self.train.seed = parse(k, v)?,
            "train.checkpoint_every" => self.train.checkpoint_every = parse(k, v)?,
            "sampling.method" => self.sampling.method = v.parse()?,
            "sampling.atol" => self.sampling.atol = parse(k, v)?,
            "sampling.rtol" => self.sampling.rtol = parse(k, v)?,
            "sampling.initial_step" => self.sampling.initial_step = parse(k, v)?,
            "sampling.min_step" => self.sampling.min_step = parse(k, v)?,
            "sampling.max_step" => self.sampling.max_step = parse(k, v)?,
            "sampling.step_size" => self.sampling.step_size = parse(k, v)?,
            "sampling.curve" => self.sampling.curve = v.parse()?,
            "sampling.epsilon_list" => self.sampling.epsilon_list = parse_list(k, v)?,
            "sampling.direction" => self.sampling.direction = v.parse()?,
            "sampling.seed" => self.sampling.seed = parse(k, v)?,
            "eval.n_rollouts" => self.eval.n_rollouts = parse(k, v)?,
            "eval.n_frames" => self.eval.n_frames = parse(k, v)?,
            "eval.window" => self.eval.window = parse(k, v)?,
            "eval.stride" => self.eval.stride = parse(k, v)?,
            "sweep.methods" => {
                self.sweep.methods = v
                    .split(',')
                    .map(|m| m.trim().parse())
                    .collect::<Result<_>>()?
            }
            other => return Err(Error::Config(format!("unknown config key `{other}`"))),
        }
        Ok(())
    }

    /// Replaces every seed with one derived from `seed`, so a single flag
    /// reseeds the whole pipeline.
    pub fn reseed(&mut self, seed: u64) {
        self.dataset.seed = stream_seed(seed, 0);
        self.model.seed = stream_seed(seed, 1);
        self.train.seed = stream_seed(seed, 2);
        self.sampling.seed = stream_seed(seed, 3);
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.dataset.n_videos < 2 || self.dataset.n_frames < 2 {
            return bad("dataset needs at least 2 videos of at least 2 frames");
        }
        if self.model.hidden_dims.is_empty() {
            return bad("model.hidden_dims must list at least one width");
        }
        if !(self.model.alpha_max >= 0.0 && self.model.alpha_max.is_finite()) {
            return bad("model.alpha_max must be finite and non-negative");
        }
        if self.train.batch_size == 0 {
            return bad("train.batch_size must be positive");
        }
        if self.sampling.epsilon_list.is_empty()
            || self
                .sampling
                .epsilon_list
                .iter()
                .any(|e| !(*e >= 0.0 && e.is_finite()))
        {
            return bad("sampling.epsilon_list must hold finite non-negative values");
        }
        if self.eval.n_rollouts == 0 || self.eval.n_frames == 0 {
            return bad("eval.n_rollouts and eval.n_frames must be positive");
        }
        if self.eval.window < 2 || self.eval.stride == 0 {
            return bad("eval.window must be at least 2 and eval.stride positive");
        }
        if self.sweep.methods.is_empty() {
            return bad("sweep.methods must not be empty");
        }
        self.solve_spec().validate()
    }

    pub fn entries(&self) -> BTreeMap<&'static str, String> {
        let d = &self.dataset;
        let m = &self.model;
        let t = &self.train;
        let s = &self.sampling;
        let e = &self.eval;
        BTreeMap::from([
            ("dataset.kind", d.kind.to_string()),
            ("dataset.n_videos", d.n_videos.to_string()),
            ("dataset.n_frames", d.n_frames.to_string()),
            ("dataset.seed", d.seed.to_string()),
            ("dataset.orbit.dim", d.orbit_dim.to_string()),
            (
                "dataset.orbit.angular_speed",
                d.orbit_angular_speed.to_string(),
            ),
            (
                "dataset.orbit.process_noise",
                d.orbit_process_noise.to_string(),
            ),
            ("dataset.bounce.height", d.bounce_height.to_string()),
            ("dataset.bounce.width", d.bounce_width.to_string()),
            ("dataset.bounce.sigma", d.bounce_sigma.to_string()),
            ("dataset.bounce.speed", d.bounce_speed.to_string()),
            ("model.kind", m.kind.to_string()),
            ("model.hidden_dims", join(&m.hidden_dims)),
            ("model.activation", m.activation.to_string()),
            ("model.coord_embedding", m.coord_embedding.to_string()),
            ("model.alpha_max", m.alpha_max.to_string()),
            ("model.weight_video", m.weight_video.to_string()),
            ("model.weight_noise", m.weight_noise.to_string()),
            ("model.seed", m.seed.to_string()),
            ("train.iterations", t.iterations.to_string()),
            ("train.batch_size", t.batch_size.to_string()),
            ("train.learning_rate", t.learning_rate.to_string()),
            ("train.beta1", t.beta1.to_string()),
            ("train.beta2", t.beta2.to_string()),
            ("train.eps", t.eps.to_string()),
            ("train.seed", t.seed.to_string()),
            ("train.checkpoint_every", t.checkpoint_every.to_string()),
            ("sampling.method", s.method.as_str().to_string()),
            ("sampling.atol", s.atol.to_string()),
            ("sampling.rtol", s.rtol.to_string()),
            ("sampling.initial_step", s.initial_step.to_string()),
            ("sampling.min_step", s.min_step.to_string()),
            ("sampling.max_step", s.max_step.to_string()),
            ("sampling.step_size", s.step_size.to_string()),
            ("sampling.curve", s.curve.to_string()),
            ("sampling.epsilon_list", join(&s.epsilon_list)),
            ("sampling.direction", s.direction.to_string()),
            ("sampling.seed", s.seed.to_string()),
            ("eval.n_rollouts", e.n_rollouts.to_string()),
            ("eval.n_frames", e.n_frames.to_string()),
            ("eval.window", e.window.to_string()),
            ("eval.stride", e.stride.to_string()),
            ("sweep.methods", join(&self.sweep.methods)),
        ])
    }

    /// Resolved config text, sorted by key, headed by the tool version.
    pub fn to_text(&self) -> String {
        let mut out = format!("# biflow {TOOL_VERSION} resolved config\n");
        for (k, v) in self.entries() {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    /// Hash of everything that shapes a trained model. Iteration count and
    /// checkpoint period are left out so a run can be resumed and extended.
    pub fn training_hash(&self) -> u64 {
        let mut text = String::new();
        for (k, v) in self.entries() {
            let relevant =
                k.starts_with("dataset.") || k.starts_with("model.") || k.starts_with("train.");
            if relevant && k != "train.iterations" && k != "train.checkpoint_every" {
                let _ = writeln!(text, "{k}={v}");
            }
        }
        fnv1a(text.as_bytes())
    }

    pub fn solve_spec(&self) -> SolveSpec {
        let s = &self.sampling;
        let method = match s.method {
            SolverKind::HeunAdaptive => Method::HeunAdaptive(HeunConfig {
                atol: s.atol,
                rtol: s.rtol,
                initial_step: s.initial_step,
                min_step: s.min_step,
                max_step: s.max_step,
                ..HeunConfig::default()
            }),
            SolverKind::EulerFixed => Method::EulerFixed {
                step_size: s.step_size,
            },
            SolverKind::HeunFixed => Method::HeunFixed {
                step_size: s.step_size,
            },
        };
        SolveSpec::forward(method)
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            iterations: t.iterations,
            batch_size: t.batch_size,
            alpha_max: self.model.alpha_max,
            weights: BiflowWeights {
                video: self.model.weight_video,
                noise: self.model.weight_noise,
            },
            adam: AdamConfig {
                learning_rate: t.learning_rate,
                beta1: t.beta1,
                beta2: t.beta2,
                eps: t.eps,
            },
            seed: t.seed,
            checkpoint_every: t.checkpoint_every,
        }
    }
}
