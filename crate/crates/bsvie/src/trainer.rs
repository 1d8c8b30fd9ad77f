//! Mini-batch training over the rollout loss.
//!
//! One epoch reshuffles the fixed set of training increment paths with a
//! seeded permutation, partitions it into disjoint mini-batches, and takes
//! one Adam step per batch. The learning rate after epoch e is
//! lr0 * decay^e. Validation runs on a held-out increment stream.

use crate::adam::{AdamConfig, AdamState};
use crate::error::{Error, Result};
use crate::exec::ExecMode;
use crate::grid::TimeGrid;
use crate::net::{NetConfig, NetworkParams};
use crate::problem::ProblemSpec;
use crate::rng::streams;
use crate::rollout::{rollout, FieldSource, RolloutOptions};
use crate::sde::PathBatch;

/// Loss blowup factor (relative to the first batch loss) that aborts a run.
pub const DIVERGENCE_FACTOR: f64 = 1e6;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub m_train: usize,
    pub m_batch: usize,
    pub k_epoch: usize,
    pub lr0: f64,
    /// Multiplicative learning-rate factor per epoch.
    pub decay: f64,
    pub adam: AdamConfig,
    pub seed: u64,
    pub m_val: usize,
    pub net: NetConfig,
    pub mode: ExecMode,
}

impl TrainConfig {
    /// Reference scale used in the reported experiments.
    pub fn paper(seed: u64) -> Self {
        TrainConfig {
            m_train: 1 << 18,
            m_batch: 1 << 11,
            k_epoch: 10,
            lr0: 0.005,
            decay: (-0.2f64).exp(),
            adam: AdamConfig::default(),
            seed,
            m_val: 1 << 12,
            net: NetConfig::default(),
            mode: ExecMode::default(),
        }
    }

    /// Reduced scale that finishes on a workstation CPU.
    pub fn desk(seed: u64) -> Self {
        TrainConfig {
            m_train: 1 << 14,
            m_batch: 1 << 9,
            ..Self::paper(seed)
        }
    }

    pub fn k_batch(&self) -> usize {
        self.m_train / self.m_batch
    }

    pub fn validate(&self) -> Result<()> {
        if self.m_batch == 0 || self.m_train == 0 {
            return Err(Error::config("m_train", "path counts must be positive"));
        }
        if !self.m_train.is_multiple_of(self.m_batch) {
            return Err(Error::config(
                "m_batch",
                format!("m_train ({}) must be a multiple of m_batch ({})", self.m_train, self.m_batch),
            ));
        }
        #[allow(clippy::neg_cmp_op_on_partial_ord)] // NaN must fail validation
        if !(self.lr0 > 0.0) {
            return Err(Error::config("lr0", "learning rate must be positive"));
        }
        if !(0.0..1.0).contains(&self.adam.beta1) || !(0.0..1.0).contains(&self.adam.beta2) {
            return Err(Error::config("adam", "betas must lie in [0, 1)"));
        }
        #[allow(clippy::neg_cmp_op_on_partial_ord)]
        if !(self.adam.epsilon > 0.0) {
            return Err(Error::config("adam", "epsilon must be positive"));
        }
        #[allow(clippy::neg_cmp_op_on_partial_ord)]
        if !(self.decay > 0.0) {
            return Err(Error::config("decay", "decay factor must be positive"));
        }
        Ok(())
    }

    /// Learning rate in effect during epoch e (0-based).
    pub fn lr_at_epoch(&self, epoch: usize) -> f64 {
        self.lr0 * self.decay.powi(epoch as i32)
    }
}

#[derive(Debug, Clone)]
pub struct StepRecord {
    pub step: usize,
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
}

#[derive(Debug, Clone, Default)]
pub struct TrainReport {
    pub steps: Vec<StepRecord>,
    /// Validation loss after each epoch.
    pub epoch_val_loss: Vec<f64>,
    /// Wall-clock seconds per epoch (informational; not reproducible).
    pub epoch_wall_s: Vec<f64>,
    pub initial_val_loss: f64,
    pub final_val_loss: f64,
}

#[derive(Debug)]
pub struct TrainOutput {
    pub params: NetworkParams,
    pub report: TrainReport,
}

/// Rollout loss on fresh held-out paths, no gradient accumulation.
pub fn validate(
    params: &NetworkParams,
    problem: &ProblemSpec,
    grid: TimeGrid,
    m_val: usize,
    seed: u64,
    mode: ExecMode,
) -> Result<f64> {
    if m_val == 0 {
        return Err(Error::config("m_val", "validation batch must be non-empty"));
    }
    let batch = PathBatch::generate(problem, grid, m_val, seed, streams::VALIDATION, mode)?;
    Ok(rollout(
        problem,
        grid,
        &batch,
        FieldSource::Networks(params),
        RolloutOptions::loss_only(mode),
    )?
    .loss)
}

/// Full training run: returns the final parameters and the loss trace.
pub fn train(config: &TrainConfig, problem: &ProblemSpec, grid: TimeGrid) -> Result<TrainOutput> {
    config.validate()?;
    let mut params = NetworkParams::init(
        config.seed,
        problem.state_dim,
        problem.noise_dim,
        config.net,
    );
    let mut report = TrainReport {
        initial_val_loss: validate(&params, problem, grid, config.m_val, config.seed, config.mode)?,
        ..TrainReport::default()
    };
    if config.k_epoch == 0 {
        report.final_val_loss = report.initial_val_loss;
        return Ok(TrainOutput { params, report });
    }

    let batch = PathBatch::generate(
        problem,
        grid,
        config.m_train,
        config.seed,
        streams::TRAIN,
        config.mode,
    )?;
    let mut adam = AdamState::new(&params);
    let k_batch = config.k_batch();
    let mut divergence_limit = f64::INFINITY;
    let mut step = 0usize;

    for epoch in 0..config.k_epoch {
        let epoch_start = std::time::Instant::now();
        let lr = config.lr_at_epoch(epoch);
        let perm = crate::rng::permutation(config.seed, epoch as u64, config.m_train);
        for b in 0..k_batch {
            let indices = &perm[b * config.m_batch..(b + 1) * config.m_batch];
            let sub = batch.gather(indices);
            let result = rollout(
                problem,
                grid,
                &sub,
                FieldSource::Networks(&params),
                RolloutOptions::training(config.mode),
            )?;
            if divergence_limit.is_infinite() {
                divergence_limit = DIVERGENCE_FACTOR * result.loss.max(f64::MIN_POSITIVE);
            }
            if result.loss > divergence_limit {
                return Err(Error::Diverged {
                    step,
                    loss: result.loss,
                    limit: divergence_limit,
                });
            }
            let grads = result.gradients.expect("training rollout produces gradients");
            adam.step(&mut params, &grads, lr, config.adam)?;
            report.steps.push(StepRecord {
                step,
                epoch,
                lr,
                train_loss: result.loss,
            });
            step += 1;
        }
        let val = validate(&params, problem, grid, config.m_val, config.seed, config.mode)?;
        report.epoch_val_loss.push(val);
        report.epoch_wall_s.push(epoch_start.elapsed().as_secs_f64());
    }
    report.final_val_loss = *report.epoch_val_loss.last().unwrap();
    Ok(TrainOutput { params, report })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{example_1a, ProblemOverrides};

    fn micro_config(seed: u64) -> TrainConfig {
        TrainConfig {
            m_train: 256,
            m_batch: 128,
            k_epoch: 2,
            lr0: 0.005,
            decay: (-0.2f64).exp(),
            adam: AdamConfig::default(),
            seed,
            m_val: 128,
            net: NetConfig {
                width_y: 16,
                width_z: 16,
                time_scale: 1.0,
            },
            mode: ExecMode::Sequential,
        }
    }

    #[test]
    fn zero_epochs_returns_initial_parameters() {
        let p = example_1a(&ProblemOverrides::default());
        let grid = TimeGrid::new(1.0, 4);
        let mut config = micro_config(7);
        config.k_epoch = 0;
        let out = train(&config, &p, grid).unwrap();
        let init = NetworkParams::init(7, 5, 5, config.net);
        assert_eq!(out.params, init);
        assert!(out.report.steps.is_empty());
    }

    #[test]
    fn trace_length_is_epochs_times_batches() {
        let p = example_1a(&ProblemOverrides::default());
        let grid = TimeGrid::new(1.0, 4);
        let config = micro_config(3);
        let out = train(&config, &p, grid).unwrap();
        assert_eq!(out.report.steps.len(), config.k_epoch * config.k_batch());
        assert_eq!(out.report.epoch_val_loss.len(), config.k_epoch);
    }

    #[test]
    fn learning_rate_schedule_is_exact() {
        let config = micro_config(0);
        for e in 0..10 {
            let expected = 0.005 * (-0.2f64).exp().powi(e as i32);
            assert_eq!(config.lr_at_epoch(e).to_bits(), expected.to_bits());
        }
    }

    #[test]
    fn training_is_seed_reproducible() {
        let p = example_1a(&ProblemOverrides::default());
        let grid = TimeGrid::new(1.0, 4);
        let config = micro_config(11);
        let a = train(&config, &p, grid).unwrap();
        let b = train(&config, &p, grid).unwrap();
        assert_eq!(a.params, b.params);
        for (ra, rb) in a.report.steps.iter().zip(&b.report.steps) {
            assert_eq!(ra.train_loss.to_bits(), rb.train_loss.to_bits());
        }
    }

    #[test]
    fn micro_training_reduces_validation_loss() {
        let p = example_1a(&ProblemOverrides::default());
        let grid = TimeGrid::new(1.0, 4);
        let config = TrainConfig {
            k_epoch: 4,
            ..micro_config(5)
        };
        let out = train(&config, &p, grid).unwrap();
        assert!(
            out.report.final_val_loss < out.report.initial_val_loss,
            "{} -> {}",
            out.report.initial_val_loss,
            out.report.final_val_loss
        );
    }

    #[test]
    fn shuffling_uses_every_path_once_per_epoch() {
        // The permutation partitions paths into disjoint batches.
        let perm = crate::rng::permutation(9, 0, 1024);
        let mut seen = vec![0u8; 1024];
        for chunk in perm.chunks(128) {
            for &i in chunk {
                seen[i] += 1;
            }
        }
        assert!(seen.iter().all(|&c| c == 1));
    }

    #[test]
    fn invalid_configs_name_the_field() {
        let p = example_1a(&ProblemOverrides::default());
        let grid = TimeGrid::new(1.0, 2);
        let mut config = micro_config(0);
        config.m_batch = 100; // 256 % 100 != 0
        let err = train(&config, &p, grid).unwrap_err();
        assert!(err.to_string().contains("m_batch"), "{err}");

        let mut config = micro_config(0);
        config.lr0 = -1.0;
        assert!(train(&config, &p, grid).unwrap_err().to_string().contains("lr0"));
    }

    #[test]
    fn empty_validation_batch_is_an_error() {
        let p = example_1a(&ProblemOverrides::default());
        let grid = TimeGrid::new(1.0, 2);
        let params = NetworkParams::init(0, 5, 5, NetConfig::default());
        let err = validate(&params, &p, grid, 0, 1, ExecMode::Sequential).unwrap_err();
        assert!(err.to_string().contains("m_val"));
    }
}
