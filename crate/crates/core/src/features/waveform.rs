use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Waveform {
    samples: Vec<f64>,
    sample_rate_hz: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate_hz: u32) -> Result<Self> {
        if sample_rate_hz == 0 {
            return Err(Error::invalid("sample rate must be positive"));
        }
        if samples.is_empty() {
            return Err(Error::invalid("waveform has no samples"));
        }
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(Error::invalid("waveform contains non-finite samples"));
        }
        Ok(Self {
            samples,
            sample_rate_hz,
        })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn sample_rate_hz(&self) -> u32 {
        self.sample_rate_hz
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate_hz as f64
    }

    /// Mean squared amplitude.
    pub fn power(&self) -> f64 {
        self.samples.iter().map(|s| s * s).sum::<f64>() / self.samples.len() as f64
    }
}

/// Adds white Gaussian noise whose variance puts the result at `snr_db`
/// relative to the signal's own mean power.
pub fn add_noise_at_snr(w: &Waveform, snr_db: f64, seed: u64) -> Result<Waveform> {
    if !snr_db.is_finite() {
        return Err(Error::invalid(format!("SNR must be finite, got {snr_db}")));
    }
    let signal_power = w.power();
    if signal_power <= 0.0 {
        return Err(Error::ZeroPowerSignal);
    }
    let noise_var = signal_power / 10f64.powf(snr_db / 10.0);
    let normal = Normal::new(0.0, noise_var.sqrt()).expect("noise std is finite and positive");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples = w
        .samples
        .iter()
        .map(|s| s + normal.sample(&mut rng))
        .collect();
    Waveform::new(samples, w.sample_rate_hz)
}

/// `levels` SNR values spaced uniformly from `high_db` down to `low_db`
/// inclusive.
pub fn snr_grid(high_db: f64, low_db: f64, levels: usize) -> Vec<f64> {
    match levels {
        0 => Vec::new(),
        1 => vec![high_db],
        n => {
            let step = (high_db - low_db) / (n - 1) as f64;
            (0..n)
                .map(|i| if i == n - 1 { low_db } else { high_db - step * i as f64 })
                .collect()
        }
    }
}
