//! Minibatch training loop shared by all model kinds.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::FieldModel;
use crate::objectives::{BiflowWeights, TrainBatch};
use crate::optim::{adam_step, AdamConfig, AdamState};
use crate::scalar::Scalar;
use crate::video::{stream_seed, PairSampler};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub iterations: u64,
    pub batch_size: usize,
    pub alpha_max: f64,
    pub weights: BiflowWeights,
    pub adam: AdamConfig,
    pub seed: u64,
    /// Checkpoint callback period in optimizer steps; 0 disables it.
    pub checkpoint_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            iterations: 2000,
            batch_size: 64,
            alpha_max: 1.0,
            weights: BiflowWeights::default(),
            adam: AdamConfig::default(),
            seed: 0,
            checkpoint_every: 0,
        }
    }
}

/// Loss at one optimizer step, measured before the update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRecord {
    pub step: u64,
    pub loss: f64,
    /// Video term for bi-flow, the only term otherwise.
    pub primary: f64,
    /// Noise term for bi-flow, NaN otherwise.
    pub secondary: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trainer<T> {
    pub model: FieldModel<T>,
    pub optimizer: AdamState<T>,
}

impl<T: Scalar> Trainer<T> {
    pub fn new(model: FieldModel<T>) -> Self {
        let n = model.net().params().len();
        Trainer {
            model,
            optimizer: AdamState::new(n),
        }
    }

    pub fn resume(model: FieldModel<T>, optimizer: AdamState<T>) -> Result<Self> {
        if optimizer.m.len() != model.net().params().len() {
            return Err(Error::config("optimizer state does not match the model"));
        }
        Ok(Trainer { model, optimizer })
    }

    pub fn step(&self) -> u64 {
        self.optimizer.step
    }

    /// Runs optimizer steps until `cfg.iterations` total steps have been
    /// taken, counting steps done before a resume.
    ///
    /// Step `k` draws its batch from an RNG seeded by `(cfg.seed, k)` alone,
    /// so a resumed run follows the uninterrupted one. `on_checkpoint` runs
    /// after every `checkpoint_every` steps and at the end. A non-finite loss
    /// or gradient stops training with the model left at the last good step.
    pub fn run<F>(
        &mut self,
        sampler: &PairSampler<'_, T>,
        cfg: &TrainConfig,
        mut on_checkpoint: F,
    ) -> Result<Vec<LossRecord>>
    where
        F: FnMut(&Trainer<T>) -> Result<()>,
    {
        if cfg.batch_size == 0 {
            return Err(Error::config("batch size must be positive"));
        }
        let mut curve = Vec::new();
        while self.optimizer.step < cfg.iterations {
            let k = self.optimizer.step;
            let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(cfg.seed, k));
            let batch = TrainBatch::draw(sampler, cfg.batch_size, cfg.alpha_max, &mut rng);
            let out = batch.loss(&self.model, cfg.weights).map_err(|e| match e {
                Error::Training { message, .. } => Error::Training { batch: k, message },
                other => other,
            })?;
            adam_step(
                self.model.net_mut().params_mut(),
                &out.grad,
                &mut self.optimizer,
                &cfg.adam,
                k,
            )?;
            curve.push(LossRecord {
                step: k,
                loss: out.loss.to_f64_lossy(),
                primary: out.terms.first().map_or(f64::NAN, |v| v.to_f64_lossy()),
                secondary: out.terms.get(1).map_or(f64::NAN, |v| v.to_f64_lossy()),
            });
            let done = self.optimizer.step;
            if cfg.checkpoint_every > 0
                && done.is_multiple_of(cfg.checkpoint_every)
                && done < cfg.iterations
            {
                on_checkpoint(self)?;
            }
        }
        on_checkpoint(self)?;
        Ok(curve)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelKind;
    use crate::net::{Activation, CoordEmbedding};
    use crate::video::{gen_orbit, Split, SplitKind};

    fn setup() -> (Vec<crate::video::VideoTensor<f64>>, Split) {
        let videos = gen_orbit::<f64>(10, 12, 4, 0.1, 0.0, 5).unwrap();
        let split = Split::eighty_twenty(videos.len(), 5);
        (videos, split)
    }

    fn model(kind: ModelKind) -> FieldModel<f64> {
        FieldModel::init(
            kind,
            4,
            vec![16],
            Activation::Silu,
            CoordEmbedding::default(),
            2,
        )
        .unwrap()
    }

    fn cfg(iters: u64) -> TrainConfig {
        TrainConfig {
            iterations: iters,
            batch_size: 8,
            adam: AdamConfig {
                learning_rate: 3e-3,
                ..AdamConfig::default()
            },
            seed: 9,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn zero_iterations_keep_initialization() {
        let (videos, split) = setup();
        let sampler = PairSampler::new(&videos, &split, SplitKind::Train, 0).unwrap();
        let init = model(ModelKind::BiFlow);
        let mut tr = Trainer::new(init.clone());
        let curve = tr.run(&sampler, &cfg(0), |_| Ok(())).unwrap();
        assert!(curve.is_empty());
        assert_eq!(tr.model, init);
    }

    #[test]
    fn resume_matches_uninterrupted_run() {
        let (videos, split) = setup();
        let sampler = PairSampler::new(&videos, &split, SplitKind::Train, 0).unwrap();
        let mut full = Trainer::new(model(ModelKind::BiFlow));
        let curve_full = full.run(&sampler, &cfg(20), |_| Ok(())).unwrap();

        let mut first = Trainer::new(model(ModelKind::BiFlow));
        let mut curve = first.run(&sampler, &cfg(8), |_| Ok(())).unwrap();
        let mut second = Trainer::resume(first.model.clone(), first.optimizer.clone()).unwrap();
        curve.extend(second.run(&sampler, &cfg(20), |_| Ok(())).unwrap());
        assert_eq!(curve, curve_full);
        assert_eq!(second.model, full.model);
    }

    #[test]
    fn loss_decreases_on_orbit() {
        let (videos, split) = setup();
        let sampler = PairSampler::new(&videos, &split, SplitKind::Train, 0).unwrap();
        for kind in ModelKind::ALL {
            let mut tr = Trainer::new(model(kind));
            let curve = tr.run(&sampler, &cfg(300), |_| Ok(())).unwrap();
            let head: f64 = curve[..20].iter().map(|r| r.loss).sum::<f64>() / 20.0;
            let tail: f64 = curve[280..].iter().map(|r| r.loss).sum::<f64>() / 20.0;
            assert!(tail < 0.7 * head, "{kind}: {head} -> {tail}");
        }
    }

    #[test]
    fn checkpoint_callback_period() {
        let (videos, split) = setup();
        let sampler = PairSampler::new(&videos, &split, SplitKind::Train, 0).unwrap();
        let mut tr = Trainer::new(model(ModelKind::Flow));
        let mut seen = Vec::new();
        let c = TrainConfig {
            checkpoint_every: 4,
            ..cfg(10)
        };
        tr.run(&sampler, &c, |t| {
            seen.push(t.step());
            Ok(())
        })
        .unwrap();
        assert_eq!(seen, vec![4, 8, 10]);
    }
}
