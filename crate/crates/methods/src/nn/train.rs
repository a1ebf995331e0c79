//! Mini-batch Adam training with early stopping.

use gustpp_core::{Error, Result};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::heads::Head;
use super::network::{Adam, Architecture, Cache, Network};

/// One standardized input row.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub x: Vec<f64>,
    pub station: usize,
    pub y: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainSettings {
    pub learning_rate: f64,
    pub epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
}

impl Default for TrainSettings {
    fn default() -> Self {
        Self { learning_rate: 5e-4, epochs: 150, patience: 10, batch_size: 64 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

/// Tracks the best validation loss; signals a stop after `patience`
/// epochs without improvement.
#[derive(Clone, Debug)]
pub struct EarlyStopping {
    pub patience: usize,
    pub best: f64,
    pub best_epoch: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self { patience, best: f64::INFINITY, best_epoch: 0 }
    }

    /// Returns `(improved, stop)`.
    pub fn update(&mut self, epoch: usize, val_loss: f64) -> (bool, bool) {
        if val_loss < self.best {
            self.best = val_loss;
            self.best_epoch = epoch;
            (true, false)
        } else {
            (false, epoch >= self.best_epoch + self.patience)
        }
    }
}

/// Loss of one sample and its parameter gradient (added into `grad`).
pub fn sample_loss_grad(net: &Network, head: &Head, s: &Sample, cache: &mut Cache, grad: &mut [f64]) -> f64 {
    net.forward(&s.x, s.station, cache);
    let mut g_out = vec![0.0; cache.output.len()];
    let loss = head.loss_grad(&cache.output, s.y, &mut g_out);
    if loss.is_finite() && g_out.iter().all(|g| g.is_finite()) {
        net.backward(s.station, cache, &g_out, grad);
    }
    loss
}

pub fn mean_loss(net: &Network, head: &Head, samples: &[Sample]) -> f64 {
    let mut cache = Cache::default();
    let total: f64 = samples
        .iter()
        .map(|s| {
            net.forward(&s.x, s.station, &mut cache);
            head.loss(&cache.output, s.y)
        })
        .sum();
    total / samples.len() as f64
}

#[derive(Clone, Debug)]
pub struct Trained {
    pub network: Network,
    pub log: Vec<EpochLog>,
    pub best_epoch: usize,
    /// Batches dropped for non-finite gradients.
    pub skipped_batches: usize,
}

/// Trains one network; a diverging run is restarted once with half the
/// learning rate.
pub fn train_network<R: Rng>(
    arch: &Architecture,
    head: &Head,
    train: &[Sample],
    validation: &[Sample],
    settings: &TrainSettings,
    rng: &mut R,
) -> Result<Trained> {
    if train.is_empty() || validation.is_empty() {
        return Err(Error::Config("network training needs non-empty training and validation sets".into()));
    }
    let init = Network::init(arch.clone(), rng);
    let mut lr = settings.learning_rate;
    for attempt in 0..2 {
        match run(init.clone(), head, train, validation, settings, lr, rng) {
            Some(t) => return Ok(t),
            None if attempt == 0 => {
                lr *= 0.5;
                log::warn!("network training diverged; restarting with learning rate {lr}");
            }
            None => {}
        }
    }
    Err(Error::Optimization { reason: "network training diverged twice".into(), best: Vec::new(), best_loss: f64::NAN })
}

fn run<R: Rng>(
    mut net: Network,
    head: &Head,
    train: &[Sample],
    validation: &[Sample],
    settings: &TrainSettings,
    lr: f64,
    rng: &mut R,
) -> Option<Trained> {
    let n_params = net.params.len();
    let mut adam = Adam::new(n_params, lr);
    let mut stopper = EarlyStopping::new(settings.patience);
    let mut best = net.params.clone();
    let mut log = Vec::new();
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut grad = vec![0.0; n_params];
    let mut cache = Cache::default();
    let mut skipped = 0;
    for epoch in 1..=settings.epochs {
        order.shuffle(rng);
        let mut epoch_loss = 0.0;
        let mut used = 0usize;
        for batch in order.chunks(settings.batch_size.max(1)) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            let mut loss = 0.0;
            for &i in batch {
                loss += sample_loss_grad(&net, head, &train[i], &mut cache, &mut grad);
            }
            let scale = 1.0 / batch.len() as f64;
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                skipped += 1;
                continue;
            }
            grad.iter_mut().for_each(|g| *g *= scale);
            adam.step(&mut net.params, &grad);
            epoch_loss += loss;
            used += batch.len();
        }
        if used == 0 {
            return None;
        }
        let train_loss = epoch_loss / used as f64;
        let val_loss = mean_loss(&net, head, validation);
        if !train_loss.is_finite() || !val_loss.is_finite() || net.params.iter().any(|p| !p.is_finite()) {
            return None;
        }
        log.push(EpochLog { epoch, train_loss, val_loss });
        let (improved, stop) = stopper.update(epoch, val_loss);
        if improved {
            best.copy_from_slice(&net.params);
        }
        if stop {
            break;
        }
    }
    net.params = best;
    Some(Trained { network: net, log, best_epoch: stopper.best_epoch, skipped_batches: skipped })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plateau_stops_patience_epochs_after_the_best() {
        let mut s = EarlyStopping::new(10);
        let losses = [5.0, 4.0, 3.0, 3.5, 3.2, 3.1, 3.0, 3.3, 3.4, 3.0, 3.1, 3.2, 3.3, 3.0, 3.0];
        let mut stopped = None;
        for (e, &l) in losses.iter().enumerate() {
            if s.update(e + 1, l).1 {
                stopped = Some(e + 1);
                break;
            }
        }
        assert_eq!(s.best_epoch, 3);
        assert_eq!(stopped, Some(13));
    }
}
