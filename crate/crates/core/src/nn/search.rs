//! Random search over estimator topologies.
//!
//! Candidates share the two-convolution, four-dense layout and differ in
//! filter counts, kernel widths and dense widths. Each is trained briefly and
//! ranked by validation loss.

use rand::seq::IndexedRandom;
use serde::{Deserialize, Serialize};

use super::config::NetworkConfig;
use super::train::{train, NetworkModel, TrainConfig};
use crate::dataset::Target;
use crate::error::Result;
use crate::seed;
use crate::signal::IqFrame;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchSpace {
    pub conv1_filters: Vec<usize>,
    pub conv2_filters: Vec<usize>,
    pub conv1_width: Vec<usize>,
    pub conv2_width: Vec<usize>,
    pub dense: Vec<[usize; 3]>,
    pub pool: Vec<Option<usize>>,
    /// Output scale shared by every candidate.
    pub output_scale: f64,
}

impl Default for SearchSpace {
    fn default() -> Self {
        SearchSpace {
            conv1_filters: vec![8, 16, 32, 64],
            conv2_filters: vec![4, 8, 16],
            conv1_width: vec![4, 8, 16],
            conv2_width: vec![2, 4, 8],
            dense: vec![[64, 32, 16], [128, 64, 32], [256, 128, 64]],
            pool: vec![None, Some(2), Some(4)],
            output_scale: 1.0,
        }
    }
}

impl SearchSpace {
    pub fn sample(&self, frame_len: usize, rng: &mut impl rand::Rng) -> NetworkConfig {
        let pick = |v: &[usize], rng: &mut dyn rand::RngCore| *v.choose(rng).unwrap();
        NetworkConfig::conv_dense(
            frame_len,
            [pick(&self.conv1_filters, rng), pick(&self.conv2_filters, rng)],
            [pick(&self.conv1_width, rng), pick(&self.conv2_width, rng)],
            *self.pool.choose(rng).unwrap(),
            *self.dense.choose(rng).unwrap(),
        )
        .with_output_scale(self.output_scale)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub config: NetworkConfig,
    pub val_loss: f64,
}

/// Trains `trials` random candidates and returns the best model together
/// with every candidate's score.
pub fn random_search(
    space: &SearchSpace,
    trials: usize,
    train_frames: &[IqFrame],
    val_frames: &[IqFrame],
    target: Target,
    cfg: &TrainConfig,
    search_seed: u64,
) -> Result<(NetworkModel<f32>, Vec<Candidate>)> {
    let frame_len = train_frames.first().map(|f| f.len()).unwrap_or(0);
    let mut rng = seed::rng(search_seed);
    let mut best: Option<(f64, NetworkModel<f32>)> = None;
    let mut scores = Vec::with_capacity(trials);
    for trial in 0..trials.max(1) {
        let config = space.sample(frame_len, &mut rng);
        let mut model = NetworkModel::new(config.clone(), seed::derive(search_seed, trial as u64))?;
        train(&mut model, train_frames, val_frames, target, cfg, |_| {})?;
        let val_loss = model.meta.best_val_loss.unwrap_or(f64::INFINITY);
        scores.push(Candidate { config, val_loss });
        if best.as_ref().is_none_or(|(b, _)| val_loss < *b) {
            best = Some((val_loss, model));
        }
    }
    Ok((best.expect("at least one trial").1, scores))
}
