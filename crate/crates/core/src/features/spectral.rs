use std::f64::consts::PI;

use ndarray::{concatenate, Array2, Axis};
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use super::{FeatureSequence, Modality, Waveform, DEFAULT_FRAME_SHIFT_MS};
use crate::error::{Error, Result};

/// Floor applied to filterbank energies before the log.
pub const ENERGY_FLOOR: f64 = 1e-10;

const PITCH_MIN_HZ: f64 = 60.0;
const PITCH_MAX_HZ: f64 = 400.0;
const VOICING_THRESHOLD: f64 = 0.45;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SpectralConfig {
    pub hop_ms: f64,
    pub window_ms: f64,
    pub num_mel_bins: usize,
    pub num_ceps: usize,
    pub low_freq_hz: f64,
    /// Defaults to Nyquist.
    pub high_freq_hz: Option<f64>,
}

impl Default for SpectralConfig {
    fn default() -> Self {
        Self {
            hop_ms: DEFAULT_FRAME_SHIFT_MS,
            window_ms: DEFAULT_FRAME_SHIFT_MS,
            num_mel_bins: 40,
            num_ceps: 12,
            low_freq_hz: 0.0,
            high_freq_hz: None,
        }
    }
}

/// HTK mel scale.
pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

struct Framing {
    hop: usize,
    window: usize,
    num_frames: usize,
}

impl Framing {
    fn new(w: &Waveform, cfg: &SpectralConfig) -> Result<Self> {
        let sr = w.sample_rate_hz() as f64;
        let hop = (sr * cfg.hop_ms / 1000.0).round() as usize;
        let window = (sr * cfg.window_ms / 1000.0).round() as usize;
        if hop == 0 || window == 0 {
            return Err(Error::invalid("hop and window must cover at least one sample"));
        }
        if w.len() < window {
            return Err(Error::EmptySignal {
                len: w.len(),
                window,
            });
        }
        Ok(Self {
            hop,
            window,
            num_frames: (w.len() - window) / hop + 1,
        })
    }

    fn frame<'a>(&self, w: &'a Waveform, t: usize) -> &'a [f64] {
        let start = t * self.hop;
        &w.samples()[start..start + self.window]
    }
}

/// Triangular filters in the mel domain, `num_bins x (nfft/2 + 1)`.
fn mel_filterbank(cfg: &SpectralConfig, sample_rate: f64, nfft: usize) -> Result<Array2<f64>> {
    let nyquist = sample_rate / 2.0;
    let high = cfg.high_freq_hz.unwrap_or(nyquist).min(nyquist);
    if cfg.num_mel_bins == 0 || !(cfg.low_freq_hz >= 0.0 && cfg.low_freq_hz < high) {
        return Err(Error::invalid("mel filterbank needs bins > 0 and 0 <= low < high"));
    }
    let low_mel = hz_to_mel(cfg.low_freq_hz);
    let high_mel = hz_to_mel(high);
    let delta = (high_mel - low_mel) / (cfg.num_mel_bins + 1) as f64;
    let num_fft_bins = nfft / 2 + 1;
    let mut bank = Array2::zeros((cfg.num_mel_bins, num_fft_bins));
    for m in 0..cfg.num_mel_bins {
        let left = low_mel + delta * m as f64;
        let center = left + delta;
        let right = center + delta;
        for k in 0..num_fft_bins {
            let mel = hz_to_mel(k as f64 * sample_rate / nfft as f64);
            let weight = if mel > left && mel <= center {
                (mel - left) / delta
            } else if mel > center && mel < right {
                (right - mel) / delta
            } else {
                0.0
            };
            bank[[m, k]] = weight;
        }
    }
    Ok(bank)
}

fn log_mel_energies(w: &Waveform, cfg: &SpectralConfig) -> Result<Array2<f64>> {
    let framing = Framing::new(w, cfg)?;
    let nfft = framing.window.next_power_of_two();
    let sr = w.sample_rate_hz() as f64;
    let bank = mel_filterbank(cfg, sr, nfft)?;
    let hann: Vec<f64> = (0..framing.window)
        .map(|n| 0.5 - 0.5 * (2.0 * PI * n as f64 / framing.window as f64).cos())
        .collect();
    let fft = FftPlanner::new().plan_fft_forward(nfft);
    let mut buf = vec![Complex::new(0.0, 0.0); nfft];
    let mut power = vec![0.0; nfft / 2 + 1];
    let mut out = Array2::zeros((framing.num_frames, cfg.num_mel_bins));
    for t in 0..framing.num_frames {
        let frame = framing.frame(w, t);
        for (i, slot) in buf.iter_mut().enumerate() {
            *slot = if i < frame.len() {
                Complex::new(frame[i] * hann[i], 0.0)
            } else {
                Complex::new(0.0, 0.0)
            };
        }
        fft.process(&mut buf);
        for (p, c) in power.iter_mut().zip(&buf) {
            *p = c.norm_sqr();
        }
        for m in 0..cfg.num_mel_bins {
            let energy: f64 = bank.row(m).iter().zip(&power).map(|(a, b)| a * b).sum();
            out[[t, m]] = energy.max(ENERGY_FLOOR).ln();
        }
    }
    Ok(out)
}

/// Log mel-filterbank energies (40 bins by default).
pub fn compute_fbank(w: &Waveform, cfg: &SpectralConfig) -> Result<FeatureSequence> {
    let frames = log_mel_energies(w, cfg)?;
    FeatureSequence::new(frames, cfg.hop_ms, Modality::Audio)
}

/// Orthonormal DCT-II of the log-mel energies, keeping C1..C{num_ceps}.
pub fn compute_mfcc(w: &Waveform, cfg: &SpectralConfig) -> Result<FeatureSequence> {
    let logmel = log_mel_energies(w, cfg)?;
    let n = cfg.num_mel_bins;
    if cfg.num_ceps == 0 || cfg.num_ceps >= n {
        return Err(Error::invalid(format!(
            "num_ceps must be in 1..{n}, got {}",
            cfg.num_ceps
        )));
    }
    let scale = (2.0 / n as f64).sqrt();
    let mut dct = Array2::zeros((n, cfg.num_ceps));
    for j in 0..n {
        for k in 1..=cfg.num_ceps {
            dct[[j, k - 1]] = scale * (PI * k as f64 * (j as f64 + 0.5) / n as f64).cos();
        }
    }
    FeatureSequence::new(logmel.dot(&dct), cfg.hop_ms, Modality::Audio)
}

/// Picks the first strong local maximum of the normalized autocorrelation so
/// subharmonic lags (2x, 3x the period) do not win.
fn frame_pitch(frame: &[f64], sample_rate: f64) -> (f64, f64) {
    let n = frame.len();
    let min_lag = (sample_rate / PITCH_MAX_HZ).floor().max(1.0) as usize;
    let max_lag = ((sample_rate / PITCH_MIN_HZ).ceil() as usize).min(n.saturating_sub(2));
    if min_lag + 2 > max_lag {
        return (0.0, 0.0);
    }
    let corr: Vec<f64> = (min_lag - 1..=max_lag + 1)
        .map(|lag| {
            if lag >= n {
                return 0.0;
            }
            let (a, b) = (&frame[..n - lag], &frame[lag..]);
            let num: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
            let ea: f64 = a.iter().map(|x| x * x).sum();
            let eb: f64 = b.iter().map(|x| x * x).sum();
            let den = (ea * eb).sqrt();
            if den > 0.0 {
                num / den
            } else {
                0.0
            }
        })
        .collect();
    // corr[i] holds lag min_lag - 1 + i
    let inner = 1..corr.len() - 1;
    let best = inner
        .clone()
        .map(|i| corr[i])
        .fold(f64::NEG_INFINITY, f64::max);
    if best <= 0.0 {
        return (0.0, 0.0);
    }
    let pick = inner
        .clone()
        .find(|&i| corr[i] >= 0.9 * best && corr[i] >= corr[i - 1] && corr[i] >= corr[i + 1])
        .unwrap_or_else(|| inner.clone().find(|&i| corr[i] == best).unwrap());
    let (l, c, r) = (corr[pick - 1], corr[pick], corr[pick + 1]);
    let curvature = l - 2.0 * c + r;
    let shift = if curvature < 0.0 {
        (0.5 * (l - r) / curvature).clamp(-0.5, 0.5)
    } else {
        0.0
    };
    let lag = (min_lag - 1 + pick) as f64 + shift;
    (sample_rate / lag, c.clamp(0.0, 1.0))
}

/// Three-dimensional pitch proxy per frame: log-F0, voicing strength, delta log-F0.
pub fn compute_pitch_proxy(w: &Waveform, cfg: &SpectralConfig) -> Result<FeatureSequence> {
    let framing = Framing::new(w, cfg)?;
    let sr = w.sample_rate_hz() as f64;
    let mut out = Array2::zeros((framing.num_frames, 3));
    let mut last_log_f0 = 100f64.ln();
    for t in 0..framing.num_frames {
        let (f0, strength) = frame_pitch(framing.frame(w, t), sr);
        if strength >= VOICING_THRESHOLD && f0 > 0.0 {
            last_log_f0 = f0.ln();
        }
        out[[t, 0]] = last_log_f0;
        out[[t, 1]] = strength;
    }
    for t in 1..framing.num_frames {
        out[[t, 2]] = out[[t, 0]] - out[[t - 1, 0]];
    }
    FeatureSequence::new(out, cfg.hop_ms, Modality::Audio)
}

/// FBank followed by the pitch proxy: 40 + 3 = 43 dimensions by default.
pub fn compute_fbank_pitch(w: &Waveform, cfg: &SpectralConfig) -> Result<FeatureSequence> {
    let fbank = compute_fbank(w, cfg)?;
    let pitch = compute_pitch_proxy(w, cfg)?;
    let frames = concatenate(Axis(1), &[fbank.frames().view(), pitch.frames().view()])
        .expect("both streams come from the same framing");
    FeatureSequence::new(frames, cfg.hop_ms, Modality::Audio)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    const SR: u32 = 16_000;

    fn sine(freq: f64, seconds: f64) -> Waveform {
        let n = (seconds * SR as f64) as usize;
        let s = (0..n)
            .map(|i| (2.0 * PI * freq * i as f64 / SR as f64).sin())
            .collect();
        Waveform::new(s, SR).unwrap()
    }

    fn white_noise(seconds: f64, seed: u64) -> Waveform {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = (seconds * SR as f64) as usize;
        let s = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
        Waveform::new(s, SR).unwrap()
    }

    #[test]
    fn mel_of_700_hz() {
        assert!((hz_to_mel(700.0) - 2595.0 * 2f64.log10()).abs() < 1e-12);
        assert!((hz_to_mel(700.0) - 781.17).abs() < 0.01);
        assert!((mel_to_hz(hz_to_mel(1234.5)) - 1234.5).abs() < 1e-9);
    }

    #[test]
    fn frame_count_formula() {
        let cfg = SpectralConfig::default();
        let w = sine(440.0, 1.0);
        let fb = compute_fbank(&w, &cfg).unwrap();
        // hop = window = 533 samples at 16 kHz
        assert_eq!(fb.num_frames(), (16_000 - 533) / 533 + 1);
        assert_eq!(fb.dim(), 40);
    }

    #[test]
    fn silence_hits_the_floor() {
        let w = Waveform::new(vec![0.0; 16_000], SR).unwrap();
        let fb = compute_fbank(&w, &SpectralConfig::default()).unwrap();
        assert!(fb.frames().iter().all(|&v| v == ENERGY_FLOOR.ln()));
    }

    #[test]
    fn short_signal_is_empty() {
        let w = Waveform::new(vec![0.1; 100], SR).unwrap();
        assert!(matches!(
            compute_fbank(&w, &SpectralConfig::default()),
            Err(Error::EmptySignal { .. })
        ));
    }

    #[test]
    fn sine_peaks_in_nearest_mel_bin() {
        let cfg = SpectralConfig::default();
        // independent center computation
        let top = 2595.0 * (1.0 + 8000.0 / 700.0f64).log10();
        let step = top / 41.0;
        let centers: Vec<f64> = (1..=40)
            .map(|m| 700.0 * (10f64.powf(step * m as f64 / 2595.0) - 1.0))
            .collect();
        let nearest = (0..40)
            .min_by(|&a, &b| {
                (centers[a] - 1000.0)
                    .abs()
                    .partial_cmp(&(centers[b] - 1000.0).abs())
                    .unwrap()
            })
            .unwrap();

        // direct DFT of one frame puts the spectral peak at 1 kHz
        let w = sine(1000.0, 1.0);
        let frame = &w.samples()[533..1066];
        let nfft = 1024;
        let peak_bin = (0..=nfft / 2)
            .max_by(|&a, &b| {
                let p = |k: usize| {
                    let (mut re, mut im) = (0.0, 0.0);
                    for (n, x) in frame.iter().enumerate() {
                        let hann = 0.5 - 0.5 * (2.0 * PI * n as f64 / 533.0).cos();
                        let ang = -2.0 * PI * (k * n) as f64 / nfft as f64;
                        re += x * hann * ang.cos();
                        im += x * hann * ang.sin();
                    }
                    re * re + im * im
                };
                p(a).partial_cmp(&p(b)).unwrap()
            })
            .unwrap();
        assert!((peak_bin as f64 * 16_000.0 / nfft as f64 - 1000.0).abs() < 16.0);

        let fb = compute_fbank(&w, &cfg).unwrap();
        for t in 1..fb.num_frames() - 1 {
            let row = fb.frames().row(t);
            let argmax = (0..40)
                .max_by(|&a, &b| row[a].partial_cmp(&row[b]).unwrap())
                .unwrap();
            assert_eq!(argmax, nearest, "frame {t}");
        }
    }

    #[test]
    fn mfcc_shape_and_silence() {
        let cfg = SpectralConfig::default();
        let w = Waveform::new(vec![0.0; 16_000], SR).unwrap();
        let m = compute_mfcc(&w, &cfg).unwrap();
        assert_eq!(m.dim(), 12);
        assert_eq!(m.num_frames(), compute_fbank(&w, &cfg).unwrap().num_frames());
        assert!(m.frames().iter().all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn mfcc_is_deterministic() {
        let w = white_noise(1.0, 5);
        let cfg = SpectralConfig::default();
        let a = compute_mfcc(&w, &cfg).unwrap();
        let b = compute_mfcc(&w, &cfg).unwrap();
        assert!(a
            .frames()
            .iter()
            .zip(b.frames())
            .all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn pitch_of_200_hz_tone() {
        let p = compute_pitch_proxy(&sine(200.0, 1.0), &SpectralConfig::default()).unwrap();
        assert_eq!(p.dim(), 3);
        let target = 200f64.ln();
        for t in 1..p.num_frames() - 1 {
            let lf0 = p.frames()[[t, 0]];
            assert!((lf0 - target).abs() <= 0.05 * target, "frame {t}: {lf0}");
            assert!(p.frames()[[t, 1]] > 0.9);
        }
    }

    #[test]
    fn noise_is_weakly_periodic() {
        let p = compute_pitch_proxy(&white_noise(1.0, 11), &SpectralConfig::default()).unwrap();
        let mean_peak = p.frames().column(1).mean().unwrap();
        assert!(mean_peak < 0.5, "{mean_peak}");
        // unvoiced throughout: the default log(100) is carried
        assert!(p.frames().column(0).iter().all(|&v| v == 100f64.ln()));
    }

    #[test]
    fn fbank_plus_pitch_is_43_wide() {
        let f = compute_fbank_pitch(&sine(150.0, 0.5), &SpectralConfig::default()).unwrap();
        assert_eq!(f.dim(), 43);
    }
}
