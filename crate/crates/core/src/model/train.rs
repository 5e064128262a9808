use log::{info, warn};
use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::lstm::forward_frames;
use super::{backward, init_params, sgd_step, NetworkConfig, NetworkParams};
use crate::ctc::{ctc_grad, LabelSequence};
use crate::decode::{edit_counts, greedy_decode, EditCounts};
use crate::error::{Error, Result};

/// One utterance ready for the network: processed features and targets.
#[derive(Clone, Debug)]
pub struct TrainExample {
    pub id: String,
    pub features: Array2<f64>,
    pub labels: LabelSequence,
}

/// Supplies training utterances; `epoch` lets a source vary the data per
/// epoch (e.g. drawing a fresh noise condition).
pub trait ExampleSource: Sync {
    fn len(&self) -> usize;

    fn example(&self, epoch: usize, index: usize) -> Result<TrainExample>;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl ExampleSource for [TrainExample] {
    fn len(&self) -> usize {
        <[TrainExample]>::len(self)
    }

    fn example(&self, _epoch: usize, index: usize) -> Result<TrainExample> {
        Ok(self[index].clone())
    }
}

impl ExampleSource for Vec<TrainExample> {
    fn len(&self) -> usize {
        self.as_slice().len()
    }

    fn example(&self, epoch: usize, index: usize) -> Result<TrainExample> {
        self.as_slice().example(epoch, index)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub clip_norm: f64,
    /// Utterances per update; gradients are averaged over the batch.
    pub batch_size: usize,
    /// Halve the learning rate whenever heldout accuracy drops.
    pub halve_on_degrade: bool,
    /// Stop once heldout accuracy exceeds this value (percent).
    pub target_accuracy: Option<f64>,
    pub shuffle_seed: u64,
    /// Worker threads for per-utterance gradients. Reduction order is
    /// fixed, so results do not depend on this.
    pub jobs: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            learning_rate: 1e-2,
            clip_norm: 5.0,
            batch_size: 1,
            halve_on_degrade: true,
            target_accuracy: None,
            shuffle_seed: 0,
            jobs: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean CTC loss per trained utterance.
    pub train_loss: f64,
    pub heldout_accuracy: f64,
    pub learning_rate: f64,
    pub skipped: usize,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: NetworkParams,
    pub trace: Vec<EpochStats>,
    /// Utterances dropped as CTC-infeasible (counted once).
    pub skipped_ids: Vec<String>,
}

fn utterance_gradient(p: &NetworkParams, ex: &TrainExample) -> Result<Option<(f64, NetworkParams)>> {
    let (y, cache) = forward_frames(p, ex.features.view())?;
    let (loss, d_logits) = match ctc_grad(&y, &ex.labels) {
        Ok(v) => v,
        Err(Error::InfeasibleLabelSequence { .. }) => return Ok(None),
        Err(e) => return Err(e),
    };
    let grads = backward(p, &cache, &d_logits)?;
    Ok(Some((loss, grads)))
}

/// Pooled greedy-decoding edit counts over a heldout set.
pub fn evaluate_accuracy(p: &NetworkParams, heldout: &[TrainExample]) -> Result<EditCounts> {
    let mut total = EditCounts::default();
    for ex in heldout {
        let (y, _) = forward_frames(p, ex.features.view())?;
        total = total + edit_counts(ex.labels.ids(), &greedy_decode(&y));
    }
    Ok(total)
}

pub(crate) fn run_pool<T: Send>(jobs: usize, f: impl FnOnce() -> T + Send) -> T {
    if jobs <= 1 {
        return f();
    }
    match rayon::ThreadPoolBuilder::new().num_threads(jobs).build() {
        Ok(pool) => pool.install(f),
        Err(_) => f(),
    }
}

/// SGD with global-norm clipping over seeded shuffles of `train`.
pub fn train(
    net: &NetworkConfig,
    cfg: &TrainConfig,
    train: &dyn ExampleSource,
    heldout: &[TrainExample],
) -> Result<TrainOutcome> {
    if train.is_empty() {
        return Err(Error::invalid("training corpus is empty"));
    }
    if cfg.batch_size == 0 {
        return Err(Error::invalid("batch size must be >= 1"));
    }
    let mut params = init_params(net)?;
    let mut trace = Vec::with_capacity(cfg.epochs);
    let mut lr = cfg.learning_rate;
    let mut skipped_ids: Vec<String> = Vec::new();
    let mut previous_accuracy = f64::NEG_INFINITY;
    let jobs = cfg.jobs.max(1);

    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..train.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.shuffle_seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        order.shuffle(&mut rng);

        let mut loss_sum = 0.0;
        let mut trained = 0usize;
        let mut skipped = 0usize;
        for batch in order.chunks(cfg.batch_size) {
            // reduce in utterance-index order so the sum is independent of `jobs`
            let mut batch = batch.to_vec();
            batch.sort_unstable();
            let examples: Vec<TrainExample> = batch
                .iter()
                .map(|&i| train.example(epoch, i))
                .collect::<Result<_>>()?;
            let results: Vec<Result<Option<(f64, NetworkParams)>>> = if jobs > 1 && examples.len() > 1 {
                run_pool(jobs, || {
                    examples
                        .par_iter()
                        .map(|ex| utterance_gradient(&params, ex))
                        .collect()
                })
            } else {
                examples.iter().map(|ex| utterance_gradient(&params, ex)).collect()
            };
            let mut total: Option<NetworkParams> = None;
            let mut count = 0usize;
            for (ex, r) in examples.iter().zip(results) {
                match r? {
                    Some((loss, g)) => {
                        loss_sum += loss;
                        count += 1;
                        match total.as_mut() {
                            Some(t) => t.add_scaled(1.0, &g),
                            None => total = Some(g),
                        }
                    }
                    None => {
                        skipped += 1;
                        if epoch == 0 {
                            warn!("skipping {}: label sequence does not fit its frames", ex.id);
                            skipped_ids.push(ex.id.clone());
                        }
                    }
                }
            }
            if let Some(mut g) = total {
                if count > 1 {
                    for mut t in g.tensors_mut() {
                        t.mapv_inplace(|v| v / count as f64);
                    }
                }
                sgd_step(&mut params, &g, lr, cfg.clip_norm)?;
                trained += count;
            }
        }
        if trained == 0 {
            return Err(Error::invalid("no utterance in the training corpus is CTC-feasible"));
        }
        let accuracy = if heldout.is_empty() {
            f64::NAN
        } else {
            evaluate_accuracy(&params, heldout)?.accuracy()
        };
        let stats = EpochStats {
            epoch: epoch + 1,
            train_loss: loss_sum / trained as f64,
            heldout_accuracy: accuracy,
            learning_rate: lr,
            skipped,
        };
        info!(
            "epoch {}: loss {:.4}, heldout accuracy {:.2}%, lr {:.2e}",
            stats.epoch, stats.train_loss, stats.heldout_accuracy, lr
        );
        trace.push(stats);
        if cfg.target_accuracy.is_some_and(|target| accuracy > target) {
            break;
        }
        if cfg.halve_on_degrade && accuracy < previous_accuracy {
            lr *= 0.5;
        }
        if accuracy.is_finite() {
            previous_accuracy = accuracy;
        }
    }
    Ok(TrainOutcome {
        params,
        trace,
        skipped_ids,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn toy_corpus(n: usize, seed: u64) -> Vec<TrainExample> {
        // unit k shows up as a bump on input dimension k - 1
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| {
                let labels: Vec<u32> = (0..rng.gen_range(1..=3)).map(|_| rng.gen_range(1..=2)).collect();
                let mut rows = Vec::new();
                for &l in &labels {
                    for _ in 0..3 {
                        let mut r = vec![0.0; 2];
                        r[l as usize - 1] = 1.0;
                        rows.extend(r);
                    }
                    rows.extend([0.0, 0.0]);
                }
                let t = rows.len() / 2;
                TrainExample {
                    id: format!("u{i}"),
                    features: Array2::from_shape_vec((t, 2), rows).unwrap(),
                    labels: LabelSequence::new(labels, 2).unwrap(),
                }
            })
            .collect()
    }

    fn small_net() -> NetworkConfig {
        NetworkConfig {
            num_layers: 1,
            hidden_size: 6,
            input_dim: 2,
            output_dim: 3,
            seed: 4,
        }
    }

    #[test]
    fn zero_epochs_returns_initialization() {
        let data = toy_corpus(4, 1);
        let cfg = TrainConfig {
            epochs: 0,
            ..Default::default()
        };
        let out = train(&small_net(), &cfg, &data, &[]).unwrap();
        assert_eq!(out.params, init_params(&small_net()).unwrap());
        assert!(out.trace.is_empty());
    }

    #[test]
    fn training_is_reproducible_and_independent_of_jobs() {
        let data = toy_corpus(12, 2);
        let cfg = TrainConfig {
            epochs: 2,
            batch_size: 4,
            ..Default::default()
        };
        let a = train(&small_net(), &cfg, &data, &data[..3]).unwrap();
        let b = train(&small_net(), &cfg, &data, &data[..3]).unwrap();
        assert_eq!(a.params, b.params);
        assert_eq!(a.trace, b.trace);
        let c = train(&small_net(), &TrainConfig { jobs: 3, ..cfg }, &data, &data[..3]).unwrap();
        assert_eq!(a.params, c.params);
    }

    #[test]
    fn infeasible_utterances_are_skipped() {
        let mut data = toy_corpus(5, 3);
        data.push(TrainExample {
            id: "bad".into(),
            features: Array2::zeros((1, 2)),
            labels: LabelSequence::new(vec![1, 2], 2).unwrap(),
        });
        let cfg = TrainConfig {
            epochs: 1,
            ..Default::default()
        };
        let out = train(&small_net(), &cfg, &data, &[]).unwrap();
        assert_eq!(out.skipped_ids, vec!["bad".to_string()]);
        assert_eq!(out.trace[0].skipped, 1);

        let only_bad = vec![data.pop().unwrap()];
        assert!(train(&small_net(), &cfg, &only_bad, &[]).is_err());
    }

    #[test]
    fn loss_goes_down_on_a_toy_task() {
        let data = toy_corpus(40, 5);
        let cfg = TrainConfig {
            epochs: 15,
            learning_rate: 0.05,
            ..Default::default()
        };
        let out = train(&small_net(), &cfg, &data, &data[..10]).unwrap();
        let first = out.trace.first().unwrap().train_loss;
        let last = out.trace.last().unwrap().train_loss;
        assert!(last < 0.5 * first, "{first} -> {last}");
    }
}
