//! Stacked bidirectional LSTM acoustic model with a softmax over `K + 1`
//! outputs (blank at index 0).

mod checkpoint;
pub(crate) mod lstm;
mod train;

use std::collections::HashMap;

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use lstm::{backward, forward, init_params, sgd_step, ForwardCache, LayerParams, LstmParams, NetworkParams};
pub(crate) use train::run_pool;
pub use train::{evaluate_accuracy, train, EpochStats, ExampleSource, TrainConfig, TrainExample, TrainOutcome};

pub const BLANK_NAME: &str = "<blank>";

/// Ordered output units; the blank is implicit at index 0 and unit `i`
/// (0-based in `units`) has output index `i + 1`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct LabelAlphabet {
    units: Vec<String>,
    index: HashMap<String, u32>,
}

impl LabelAlphabet {
    pub fn new(units: Vec<String>) -> Result<Self> {
        if units.is_empty() {
            return Err(Error::invalid("alphabet needs at least one unit"));
        }
        let mut index = HashMap::with_capacity(units.len());
        for (i, u) in units.iter().enumerate() {
            if u == BLANK_NAME || u.is_empty() || u.contains(char::is_whitespace) {
                return Err(Error::invalid(format!("invalid unit name {u:?}")));
            }
            if index.insert(u.clone(), i as u32 + 1).is_some() {
                return Err(Error::invalid(format!("duplicate unit {u:?}")));
            }
        }
        Ok(Self { units, index })
    }

    pub fn from_names<S: AsRef<str>>(names: &[S]) -> Result<Self> {
        Self::new(names.iter().map(|s| s.as_ref().to_string()).collect())
    }

    /// K, excluding the blank.
    pub fn num_units(&self) -> usize {
        self.units.len()
    }

    /// K + 1.
    pub fn output_dim(&self) -> usize {
        self.units.len() + 1
    }

    pub fn units(&self) -> &[String] {
        &self.units
    }

    pub fn id(&self, name: &str) -> Option<u32> {
        self.index.get(name).copied()
    }

    pub fn name(&self, id: u32) -> Option<&str> {
        if id == 0 {
            Some(BLANK_NAME)
        } else {
            self.units.get(id as usize - 1).map(String::as_str)
        }
    }

    pub fn encode<S: AsRef<str>>(&self, names: &[S]) -> Result<Vec<u32>> {
        names
            .iter()
            .map(|n| {
                self.id(n.as_ref())
                    .ok_or_else(|| Error::invalid(format!("unknown unit {:?}", n.as_ref())))
            })
            .collect()
    }

    pub fn decode_names(&self, ids: &[u32]) -> Vec<String> {
        ids.iter()
            .map(|&i| self.name(i).unwrap_or("<unk>").to_string())
            .collect()
    }
}

impl TryFrom<Vec<String>> for LabelAlphabet {
    type Error = Error;
    fn try_from(v: Vec<String>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<LabelAlphabet> for Vec<String> {
    fn from(a: LabelAlphabet) -> Self {
        a.units
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub num_layers: usize,
    pub hidden_size: usize,
    pub input_dim: usize,
    pub output_dim: usize,
    pub seed: u64,
}

impl NetworkConfig {
    pub fn new(input_dim: usize, output_dim: usize) -> Self {
        Self {
            num_layers: 4,
            hidden_size: 64,
            input_dim,
            output_dim,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_layers == 0 || self.hidden_size == 0 || self.input_dim == 0 {
            return Err(Error::invalid("layers, hidden size and input dim must be >= 1"));
        }
        if self.output_dim < 2 {
            return Err(Error::invalid("output layer needs the blank plus at least one unit"));
        }
        Ok(())
    }
}

/// `T x (K+1)` per-frame output distributions. Log probabilities are kept
/// alongside so downstream scoring never takes `log` of an underflowed value.
#[derive(Clone, Debug, PartialEq)]
pub struct Posteriorgram {
    probs: Array2<f64>,
    log_probs: Array2<f64>,
}

impl Posteriorgram {
    /// Row-wise log-softmax with max subtraction.
    pub fn from_logits(logits: &Array2<f64>) -> Result<Self> {
        if logits.nrows() == 0 || logits.ncols() < 2 {
            return Err(Error::invalid("posteriorgram needs >= 1 frame and >= 2 classes"));
        }
        if logits.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite logits"));
        }
        let mut log_probs = logits.clone();
        for mut row in log_probs.axis_iter_mut(Axis(0)) {
            let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            row.mapv_inplace(|v| v - lse);
        }
        let probs = log_probs.mapv(f64::exp);
        Ok(Self { probs, log_probs })
    }

    /// Accepts explicit probabilities (zeros allowed, e.g. one-hot paths).
    pub fn from_probs(probs: Array2<f64>) -> Result<Self> {
        if probs.nrows() == 0 || probs.ncols() < 2 {
            return Err(Error::invalid("posteriorgram needs >= 1 frame and >= 2 classes"));
        }
        for (t, row) in probs.axis_iter(Axis(0)).enumerate() {
            if row.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
                return Err(Error::invalid(format!("frame {t}: probabilities outside [0, 1]")));
            }
            if (row.sum() - 1.0).abs() > 1e-9 {
                return Err(Error::invalid(format!("frame {t}: row sums to {}", row.sum())));
            }
        }
        let log_probs = probs.mapv(f64::ln);
        Ok(Self { probs, log_probs })
    }

    pub fn probs(&self) -> &Array2<f64> {
        &self.probs
    }

    pub fn log_probs(&self) -> &Array2<f64> {
        &self.log_probs
    }

    pub fn num_frames(&self) -> usize {
        self.probs.nrows()
    }

    /// K + 1.
    pub fn num_classes(&self) -> usize {
        self.probs.ncols()
    }

    #[inline]
    pub fn log_prob(&self, t: usize, k: usize) -> f64 {
        self.log_probs[[t, k]]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn alphabet_reserves_blank() {
        let a = LabelAlphabet::from_names(&["p", "b", "m"]).unwrap();
        assert_eq!(a.output_dim(), 4);
        assert_eq!(a.id("p"), Some(1));
        assert_eq!(a.name(0), Some(BLANK_NAME));
        assert_eq!(a.encode(&["m", "p"]).unwrap(), vec![3, 1]);
        assert!(LabelAlphabet::from_names(&["a", "a"]).is_err());
        assert!(LabelAlphabet::from_names(&[BLANK_NAME]).is_err());
        assert!(LabelAlphabet::from_names::<&str>(&[]).is_err());
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let y = Posteriorgram::from_logits(&array![[1000.0, 0.0, -1000.0], [0.0, 0.0, 0.0]]).unwrap();
        for row in y.probs().rows() {
            assert!((row.sum() - 1.0).abs() < 1e-12);
        }
        assert!((y.probs()[[1, 2]] - 1.0 / 3.0).abs() < 1e-15);
        assert!(y.log_prob(0, 2).is_finite());
    }

    #[test]
    fn explicit_probabilities_are_checked() {
        assert!(Posteriorgram::from_probs(array![[0.5, 0.6]]).is_err());
        assert!(Posteriorgram::from_probs(array![[0.0, 1.0]]).is_ok());
    }
}
