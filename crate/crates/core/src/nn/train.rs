use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::config::NetworkConfig;
use super::network::{LayerParams, Network};
use super::optim::{rmsprop_step, RmsProp};
use super::tensor::{frames_to_tensor, Scalar};
use crate::dataset::Target;
use crate::error::{Error, Result};
use crate::seed;
use crate::signal::{IqFrame, ModFamily};

const EVAL_CHUNK: usize = 256;
const SHUFFLE_STREAM: u64 = 0x5348_5546;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub decay: f64,
    pub epsilon: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Stop after this many epochs without a validation improvement.
    pub patience: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let hp = RmsProp::default();
        TrainConfig {
            lr: hp.lr,
            decay: hp.decay,
            epsilon: hp.epsilon,
            batch_size: 128,
            max_epochs: 30,
            patience: 5,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn optimizer(&self) -> RmsProp {
        RmsProp {
            lr: self.lr,
            decay: self.decay,
            epsilon: self.epsilon,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub target: Option<Target>,
    pub family: Option<ModFamily>,
    pub epochs_trained: usize,
    pub best_epoch: Option<usize>,
    pub best_val_loss: Option<f64>,
    pub history: Vec<EpochStats>,
    /// CRC32 of the training dataset file, when trained from one.
    pub dataset_crc32: Option<u32>,
    pub train_config: Option<TrainConfig>,
}

/// A network plus its optimizer state and training record.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkModel<S: Scalar = f32> {
    pub net: Network<S>,
    /// RMSProp moving average of squared gradients, laid out like the params.
    pub opt_state: Vec<LayerParams<S>>,
    pub meta: TrainingMeta,
}

impl<S: Scalar> NetworkModel<S> {
    pub fn new(config: NetworkConfig, init_seed: u64) -> Result<Self> {
        Ok(Self::from_network(Network::new(config, init_seed)?))
    }

    pub fn from_network(net: Network<S>) -> Self {
        let opt_state = net.params().iter().map(|p| p.zeros_like()).collect();
        NetworkModel {
            net,
            opt_state,
            meta: TrainingMeta::default(),
        }
    }

    pub fn config(&self) -> &NetworkConfig {
        self.net.config()
    }
}

fn labels_of(frames: &[IqFrame], target: Target) -> Vec<f64> {
    frames.iter().map(|f| target.value(&f.truth)).collect()
}

/// Mean squared error of `net` over `frames`.
pub(crate) fn dataset_mse<S: Scalar>(net: &Network<S>, frames: &[IqFrame], target: Target) -> Result<f64> {
    if frames.is_empty() {
        return Ok(f64::NAN);
    }
    let mut total = 0.0;
    for chunk in frames.chunks(EVAL_CHUNK) {
        let refs: Vec<&IqFrame> = chunk.iter().collect();
        let x = frames_to_tensor::<S>(&refs)?;
        let t: Vec<S> = labels_of(chunk, target).into_iter().map(S::from_f64).collect();
        total += net.mse(&x, &t)? * chunk.len() as f64;
    }
    Ok(total / frames.len() as f64)
}

/// Mini-batch RMSProp on `train`, validating after every epoch. The weights
/// with the lowest validation loss are kept. Training resumes from
/// `model.meta.epochs_trained`, so a reloaded checkpoint continues where it
/// stopped.
pub fn train<S: Scalar>(
    model: &mut NetworkModel<S>,
    train: &[IqFrame],
    val: &[IqFrame],
    target: Target,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<Vec<EpochStats>> {
    if let Some(t) = model.meta.target {
        if t != target {
            return Err(Error::config(format!(
                "model estimates {t:?} but the dataset is labelled {target:?}"
            )));
        }
    }
    if train.is_empty() {
        return Err(Error::InsufficientData("empty training split".into()));
    }
    if cfg.batch_size == 0 {
        return Err(Error::config("batch_size must be positive"));
    }
    model.meta.target = Some(target);
    model.meta.train_config = Some(*cfg);
    let hp = cfg.optimizer();
    let labels = labels_of(train, target);

    let mut best_loss = model.meta.best_val_loss.unwrap_or(f64::INFINITY);
    let mut best_net = model.net.clone();
    let mut since_best = 0;
    let mut stats = Vec::new();
    let mut order: Vec<usize> = (0..train.len()).collect();

    for epoch in model.meta.epochs_trained..cfg.max_epochs {
        order.sort_unstable();
        order.shuffle(&mut seed::rng(seed::substream(
            seed::substream(cfg.seed, SHUFFLE_STREAM),
            epoch as u64,
        )));
        let mut epoch_loss = 0.0;
        for (bi, idx) in order.chunks(cfg.batch_size).enumerate() {
            let refs: Vec<&IqFrame> = idx.iter().map(|&i| &train[i]).collect();
            let targets: Vec<S> = idx.iter().map(|&i| S::from_f64(labels[i])).collect();
            let pass = model.net.forward_pass(frames_to_tensor(&refs)?)?;
            let (loss, grads) = model.net.backward(&pass, &targets)?;
            if !loss.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    batch: bi,
                    loss,
                });
            }
            epoch_loss += loss * idx.len() as f64;
            rmsprop_step(model, &grads, &hp)?;
        }
        let train_loss = epoch_loss / train.len() as f64;
        let val_loss = if val.is_empty() {
            train_loss
        } else {
            dataset_mse(&model.net, val, target)?
        };
        if !val_loss.is_finite() {
            return Err(Error::Diverged {
                epoch,
                batch: usize::MAX,
                loss: val_loss,
            });
        }
        let s = EpochStats {
            epoch,
            train_loss,
            val_loss,
        };
        on_epoch(&s);
        stats.push(s);
        model.meta.history.push(s);
        model.meta.epochs_trained = epoch + 1;

        if val_loss < best_loss {
            best_loss = val_loss;
            best_net = model.net.clone();
            model.meta.best_epoch = Some(epoch);
            model.meta.best_val_loss = Some(val_loss);
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                break;
            }
        }
    }
    if best_loss.is_finite() {
        model.net = best_net;
    }
    Ok(stats)
}
