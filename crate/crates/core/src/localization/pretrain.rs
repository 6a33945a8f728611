//! Supervised pretraining of the pose estimator by minibatch gradient
//! descent on the mean pose loss.

use rand::seq::SliceRandom;

use crate::autodiff::Tape;
use crate::error::{Error, Result};
use crate::rng::{derive_rng, label};

use super::dataset::LocSample;
use super::{loc_forward, localization_loss, LocArch, LocNetParams, PoseEncodingConfig};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PretrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 64,
            // On the desk-scale ovals this reaches < 0.2 m mean position
            // error within the default epoch budget; see the pretraining
            // regression test for the committed reference numbers.
            lr: 2e-2,
            seed: 0,
        }
    }
}

/// Train in place; returns the per-epoch mean training loss. Sample order is
/// reshuffled every epoch from a stream derived from (seed, epoch), so runs
/// are reproducible. A non-finite loss aborts with [`Error::Diverged`].
pub fn pretrain(
    params: &mut LocNetParams,
    arch: &LocArch,
    enc_cfg: &PoseEncodingConfig,
    dataset: &[LocSample],
    cfg: &PretrainConfig,
) -> Result<Vec<f64>> {
    if dataset.is_empty() {
        return Err(Error::Config("pretraining dataset is empty".into()));
    }
    if cfg.batch_size == 0 {
        return Err(Error::Config("batch_size must be >= 1".into()));
    }
    let mut curve = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut derive_rng(cfg.seed, &[label::PRETRAIN, epoch as u64]));
        let mut loss_sum = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let mut tape = Tape::new();
            let staged = params.stage(&mut tape);
            let mut losses = Vec::with_capacity(batch.len());
            for &i in batch {
                let s = &dataset[i];
                let est = loc_forward(&mut tape, &staged, arch, &s.scan, &s.prev, enc_cfg)?;
                losses.push(localization_loss(&mut tape, &est, &s.gt)?);
            }
            let stacked = tape.concat(&losses)?;
            let batch_loss = tape.mean(stacked);
            let value = tape.scalar_value(batch_loss);
            if !value.is_finite() {
                return Err(Error::Diverged(format!(
                    "pretraining loss became {value} at epoch {epoch}"
                )));
            }
            loss_sum += value * batch.len() as f64;
            if cfg.lr != 0.0 {
                tape.backward(batch_loss)?;
                params.apply_sgd(&tape, &staged, cfg.lr);
            }
        }
        curve.push(loss_sum / dataset.len() as f64);
    }
    Ok(curve)
}

/// Mean Euclidean position error of the estimator over a sample set.
pub fn mean_position_error(
    params: &LocNetParams,
    arch: &LocArch,
    enc_cfg: &PoseEncodingConfig,
    dataset: &[LocSample],
) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::Config("evaluation dataset is empty".into()));
    }
    let mut sum = 0.0;
    for s in dataset {
        let mut tape = Tape::new();
        let staged = params.stage(&mut tape);
        let est = loc_forward(&mut tape, &staged, arch, &s.scan, &s.prev, enc_cfg)?;
        let pose = est.read(&tape);
        sum += ((pose.x - s.gt.x).powi(2) + (pose.y - s.gt.y).powi(2)).sqrt();
    }
    Ok(sum / dataset.len() as f64)
}

/// Mean pose loss (the pretraining objective) over a sample set.
pub fn mean_loss(
    params: &LocNetParams,
    arch: &LocArch,
    enc_cfg: &PoseEncodingConfig,
    dataset: &[LocSample],
) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::Config("evaluation dataset is empty".into()));
    }
    let mut sum = 0.0;
    for s in dataset {
        let mut tape = Tape::new();
        let staged = params.stage(&mut tape);
        let est = loc_forward(&mut tape, &staged, arch, &s.scan, &s.prev, enc_cfg)?;
        sum += super::localization_loss_value(&est.read(&tape), &s.gt);
    }
    Ok(sum / dataset.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::localization::dataset::{generate_dataset, DatasetConfig};
    use crate::rng::derive_rng;
    use crate::world::{ring_map, SensorConfig};

    fn tiny_setup() -> (LocArch, PoseEncodingConfig, Vec<LocSample>) {
        let grid = ring_map(32, 0.1, 1.4, 0.6);
        let sensor = SensorConfig::default();
        let cfg = DatasetConfig {
            augment: 2,
            max_base_poses: Some(24),
            ..DatasetConfig::default()
        };
        let data = generate_dataset(&grid, &sensor, &cfg, 21).unwrap();
        let enc = PoseEncodingConfig::for_grid(&grid, 0.1, 0.1, 4);
        let arch = LocArch::new(sensor.n_beams, enc.encoding_len()).unwrap();
        (arch, enc, data)
    }

    #[test]
    fn zero_lr_is_a_no_op_with_flat_curve() {
        let (arch, enc, data) = tiny_setup();
        let mut params = LocNetParams::init(&arch, &mut derive_rng(1, &[50]));
        let before = params.clone();
        let curve = pretrain(
            &mut params,
            &arch,
            &enc,
            &data,
            &PretrainConfig {
                epochs: 2,
                batch_size: 16,
                lr: 0.0,
                seed: 0,
            },
        )
        .unwrap();
        assert_eq!(params, before);
        assert_eq!(curve.len(), 2);
        assert_eq!(curve[0], curve[1]);
    }

    #[test]
    fn a_few_epochs_reduce_the_training_loss() {
        let (arch, enc, data) = tiny_setup();
        let mut params = LocNetParams::init(&arch, &mut derive_rng(2, &[51]));
        let initial = mean_loss(&params, &arch, &enc, &data).unwrap();
        let curve = pretrain(
            &mut params,
            &arch,
            &enc,
            &data,
            &PretrainConfig {
                epochs: 4,
                batch_size: 16,
                lr: 2e-3,
                seed: 3,
            },
        )
        .unwrap();
        let final_loss = mean_loss(&params, &arch, &enc, &data).unwrap();
        assert!(
            final_loss < initial,
            "loss did not improve: {initial} -> {final_loss} (curve {curve:?})"
        );
        assert!(*curve.last().unwrap() < curve[0]);
    }

    #[test]
    fn training_is_seed_deterministic() {
        let (arch, enc, data) = tiny_setup();
        let cfg = PretrainConfig {
            epochs: 2,
            batch_size: 16,
            lr: 1e-3,
            seed: 9,
        };
        let mut a = LocNetParams::init(&arch, &mut derive_rng(3, &[52]));
        let mut b = a.clone();
        let curve_a = pretrain(&mut a, &arch, &enc, &data, &cfg).unwrap();
        let curve_b = pretrain(&mut b, &arch, &enc, &data, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(curve_a, curve_b);

        // A different shuffle seed takes a different path.
        let mut c = LocNetParams::init(&arch, &mut derive_rng(3, &[52]));
        let curve_c = pretrain(
            &mut c,
            &arch,
            &enc,
            &data,
            &PretrainConfig { seed: 10, ..cfg },
        )
        .unwrap();
        assert_ne!(curve_a, curve_c);
    }

    #[test]
    fn absurd_lr_reports_divergence() {
        let (arch, enc, data) = tiny_setup();
        let mut params = LocNetParams::init(&arch, &mut derive_rng(4, &[53]));
        let err = pretrain(
            &mut params,
            &arch,
            &enc,
            &data,
            &PretrainConfig {
                epochs: 30,
                batch_size: 16,
                lr: 1e6,
                seed: 0,
            },
        )
        .unwrap_err();
        assert!(matches!(err, Error::Diverged(_)), "{err}");
    }

    #[test]
    fn empty_dataset_is_rejected() {
        let (arch, enc, _) = tiny_setup();
        let mut params = LocNetParams::zeros(&arch);
        assert!(pretrain(&mut params, &arch, &enc, &[], &PretrainConfig::default()).is_err());
    }
}
