use std::collections::HashSet;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use super::{Corpus, CorpusConfig, Segment, Utterance, VisemeMap};
use crate::ctc::LabelSequence;
use crate::error::{Error, Result};
use crate::features::{FeatureSequence, Modality};

/// Per-class emission means; rows are indexed by unit id - 1.
#[derive(Clone, Debug, PartialEq)]
pub struct EmissionModel {
    pub audio_means: Array2<f64>,
    pub video_means: Array2<f64>,
}

pub(crate) fn stream_seed(seed: u64, stream: u64) -> u64 {
    // splitmix64 finalizer keeps neighbouring indices decorrelated
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

pub fn class_means(cfg: &CorpusConfig) -> EmissionModel {
    let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(cfg.seed, 0));
    let k = cfg.phonemes().num_units();
    let v = cfg.viseme_map().visemes().num_units();
    let audio_means = Array2::from_shape_fn((k, cfg.audio_dim), |_| cfg.audio_offset + cfg.audio_class_spread * gaussian(&mut rng));
    let video_means = Array2::from_shape_fn((v, cfg.video_dim), |_| cfg.video_class_spread * gaussian(&mut rng));
    EmissionModel {
        audio_means,
        video_means,
    }
}

fn generate_lexicon(cfg: &CorpusConfig) -> Vec<(String, Vec<u32>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(cfg.seed, 1));
    let k = cfg.phonemes().num_units() as u32;
    let width = cfg.vocabulary_size.to_string().len();
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(cfg.vocabulary_size);
    let mut attempts = 0;
    while out.len() < cfg.vocabulary_size {
        let len = rng.gen_range(cfg.min_word_phonemes..=cfg.max_word_phonemes);
        let pron = distinct_neighbours(&mut rng, len, k);
        attempts += 1;
        // small alphabets may not have enough distinct words; allow homophones then
        if seen.insert(pron.clone()) || attempts > 100 * cfg.vocabulary_size {
            out.push((format!("w{:0width$}", out.len() + 1), pron));
        }
    }
    out
}

/// Uniform unit ids in `1..=k` with no two neighbours equal; an
/// acoustically unbroken repeat could never be emitted by a CTC model.
fn distinct_neighbours(rng: &mut ChaCha8Rng, len: usize, k: u32) -> Vec<u32> {
    let mut out: Vec<u32> = Vec::with_capacity(len);
    for _ in 0..len {
        let next = match out.last() {
            Some(&prev) if k > 1 => {
                let u = rng.gen_range(1..k);
                if u >= prev {
                    u + 1
                } else {
                    u
                }
            }
            _ => rng.gen_range(1..=k),
        };
        out.push(next);
    }
    out
}

fn geometric(rng: &mut ChaCha8Rng, p: f64) -> usize {
    let mut n = 0;
    while rng.gen::<f64>() < p {
        n += 1;
    }
    n
}

fn to_f32_precision(mut a: Array2<f64>) -> Array2<f64> {
    a.mapv_inplace(|v| v as f32 as f64);
    a
}

fn generate_utterance(
    cfg: &CorpusConfig,
    index: usize,
    lexicon: &[(String, Vec<u32>)],
    means: &EmissionModel,
    map: &VisemeMap,
) -> Result<Utterance> {
    let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(cfg.seed, 2 + index as u64));
    let n_words = rng.gen_range(cfg.min_words..=cfg.max_words);
    let mut chosen: Vec<usize> = Vec::with_capacity(n_words);
    for _ in 0..n_words {
        // redraw words whose first phoneme repeats the previous word's last one
        let mut w = rng.gen_range(0..lexicon.len());
        for _ in 0..100 {
            match chosen.last() {
                Some(&prev) if lexicon[prev].1.last() == lexicon[w].1.first() => w = rng.gen_range(0..lexicon.len()),
                _ => break,
            }
        }
        chosen.push(w);
    }
    let phonemes: Vec<u32> = chosen.iter().flat_map(|&w| lexicon[w].1.iter().copied()).collect();
    let lead = cfg.video_lead_frames;

    let mut audio_segments = Vec::with_capacity(phonemes.len());
    let mut start = 1;
    for (i, &p) in phonemes.iter().enumerate() {
        let mut d = cfg.min_duration + geometric(&mut rng, cfg.continuation_p);
        if i == 0 {
            // the first video segment must stay non-empty after the lead
            d = d.max(lead + 1);
        }
        audio_segments.push(Segment {
            unit: p,
            start,
            end: start + d - 1,
        });
        start += d;
    }
    let t = start - 1;
    let last = audio_segments.len() - 1;
    let video_segments: Vec<Segment> = audio_segments
        .iter()
        .enumerate()
        .map(|(i, s)| Segment {
            unit: s.unit,
            start: if i == 0 { 1 } else { s.start - lead },
            end: if i == last { t } else { s.end - lead },
        })
        .collect();

    let mut audio = Array2::zeros((t, cfg.audio_dim));
    for s in &audio_segments {
        let mean = means.audio_means.row(s.unit as usize - 1);
        for f in s.start - 1..s.end {
            for (j, m) in mean.iter().enumerate() {
                audio[[f, j]] = m + cfg.audio_noise_std * gaussian(&mut rng);
            }
        }
    }
    let mut video = Array2::zeros((t, cfg.video_dim));
    for s in &video_segments {
        let mean = means.video_means.row(map.viseme_of(s.unit) as usize - 1);
        for f in s.start - 1..s.end {
            for (j, m) in mean.iter().enumerate() {
                video[[f, j]] = m + cfg.video_noise_std * gaussian(&mut rng);
            }
        }
    }
    let width = cfg.num_utterances.to_string().len().max(4);
    Ok(Utterance {
        id: format!("utt{:0width$}", index + 1),
        audio: FeatureSequence::from_frames(to_f32_precision(audio), Modality::Audio)?,
        video: FeatureSequence::from_frames(to_f32_precision(video), Modality::Video)?,
        phonemes: LabelSequence::new(phonemes, cfg.phonemes().num_units() as u32)?,
        words: chosen.iter().map(|&w| lexicon[w].0.clone()).collect(),
        audio_segments,
        video_segments,
    })
}

/// Deterministic in `cfg.seed`; each utterance draws from its own derived
/// stream, so generation order does not matter.
pub fn generate_corpus(cfg: &CorpusConfig) -> Result<Corpus> {
    cfg.validate()?;
    let alphabet = cfg.phonemes();
    let map = cfg.viseme_map();
    let means = class_means(cfg);
    let lexicon = generate_lexicon(cfg);
    let utterances = (0..cfg.num_utterances)
        .into_par_iter()
        .map(|i| generate_utterance(cfg, i, &lexicon, &means, &map))
        .collect::<Result<Vec<_>>>()?;
    Ok(Corpus {
        config: cfg.clone(),
        lexicon: lexicon
            .into_iter()
            .map(|(w, p)| (w, alphabet.decode_names(&p)))
            .collect(),
        utterances,
    })
}

/// Adds white Gaussian noise with variance `mean(x²) / 10^(snr_db / 10)`.
/// An infinite `snr_db` returns the input unchanged.
pub fn corrupt_features(x: &FeatureSequence, snr_db: f64, seed: u64) -> Result<FeatureSequence> {
    if snr_db == f64::INFINITY {
        return Ok(x.clone());
    }
    if snr_db.is_nan() {
        return Err(Error::invalid("SNR is NaN"));
    }
    let frames = x.frames();
    let power = frames.iter().map(|v| v * v).sum::<f64>() / frames.len() as f64;
    if power == 0.0 {
        return Err(Error::ZeroPowerSignal);
    }
    let std = (power / 10f64.powf(snr_db / 10.0)).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noisy = frames.mapv(|v| v + std * gaussian(&mut rng));
    FeatureSequence::new(noisy, x.frame_shift_ms(), x.modality())
}

/// Realized SNR of `noisy` relative to `clean`, dB.
pub fn feature_snr_db(clean: &FeatureSequence, noisy: &FeatureSequence) -> f64 {
    let signal: f64 = clean.frames().iter().map(|v| v * v).sum();
    let noise: f64 = (noisy.frames() - clean.frames()).iter().map(|v| v * v).sum();
    10.0 * (signal / noise).log10()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::avcorpus::Profile;

    fn small(seed: u64) -> CorpusConfig {
        CorpusConfig {
            num_utterances: 20,
            num_heldout: 5,
            seed,
            ..Default::default()
        }
    }

    fn check_partition(segs: &[Segment], t: usize) {
        assert_eq!(segs[0].start, 1);
        assert_eq!(segs.last().unwrap().end, t);
        for w in segs.windows(2) {
            assert_eq!(w[1].start, w[0].end + 1);
        }
        assert!(segs.iter().all(|s| s.start <= s.end));
    }

    #[test]
    fn same_seed_same_corpus() {
        assert_eq!(generate_corpus(&small(3)).unwrap(), generate_corpus(&small(3)).unwrap());
        assert_ne!(generate_corpus(&small(3)).unwrap(), generate_corpus(&small(4)).unwrap());
    }

    #[test]
    fn phoneme_sequences_have_no_adjacent_repeats() {
        let c = generate_corpus(&small(8)).unwrap();
        for u in &c.utterances {
            assert_eq!(u.phonemes.adjacent_repeats(), 0, "{}", u.id);
        }
    }

    #[test]
    fn zero_lead_gives_identical_boundaries() {
        let cfg = CorpusConfig {
            video_lead_frames: 0,
            ..small(5)
        };
        for u in generate_corpus(&cfg).unwrap().utterances {
            assert_eq!(u.audio_segments, u.video_segments);
        }
    }

    #[test]
    fn video_boundaries_lead_audio() {
        for lead in [1usize, 3] {
            let cfg = CorpusConfig {
                video_lead_frames: lead,
                ..small(6)
            };
            for u in generate_corpus(&cfg).unwrap().utterances {
                let t = u.num_frames();
                check_partition(&u.audio_segments, t);
                check_partition(&u.video_segments, t);
                assert_eq!(u.video.num_frames(), t);
                for (a, v) in u.audio_segments.iter().zip(&u.video_segments).skip(1) {
                    assert_eq!(v.start + lead, a.start);
                    assert_eq!(v.unit, a.unit);
                }
                assert_eq!(u.phonemes.ids(), u.audio_segments.iter().map(|s| s.unit).collect::<Vec<_>>());
            }
        }
    }

    #[test]
    fn durations_and_class_frequencies_follow_the_laws() {
        let cfg = CorpusConfig {
            num_utterances: 500,
            video_lead_frames: 0,
            ..Default::default()
        };
        let c = generate_corpus(&cfg).unwrap();
        let mut total = 0usize;
        let mut n = 0usize;
        let mut counts = [0usize; 12];
        for u in &c.utterances {
            for s in &u.audio_segments {
                total += s.end - s.start + 1;
                n += 1;
                counts[s.unit as usize - 1] += 1;
            }
        }
        let want = cfg.min_duration as f64 + cfg.continuation_p / (1.0 - cfg.continuation_p);
        let got = total as f64 / n as f64;
        assert!((got - want).abs() / want < 0.05, "{got} vs {want}");
        // class frequencies follow the lexicon's phoneme usage
        let lex: Vec<Vec<u32>> = c.lexicon().unwrap().pronunciations().iter().map(|(_, p)| p.clone()).collect();
        let mut expected = [0.0; 12];
        for p in &lex {
            for &u in p {
                expected[u as usize - 1] += 1.0 / lex.len() as f64;
            }
        }
        let per_word: f64 = expected.iter().sum();
        for k in 0..12 {
            let e = expected[k] / per_word;
            let g = counts[k] as f64 / n as f64;
            assert!((g - e).abs() < 0.05, "class {k}: {g} vs {e}");
        }
    }

    #[test]
    fn clean_audio_is_separable_by_class_means() {
        let cfg = small(7);
        let c = generate_corpus(&cfg).unwrap();
        let means = class_means(&cfg);
        let k = means.audio_means.nrows();
        let mut d_min = f64::INFINITY;
        for i in 0..k {
            for j in i + 1..k {
                let d = (&means.audio_means.row(i) - &means.audio_means.row(j)).mapv(|v| v * v).sum();
                d_min = d_min.min(d);
            }
        }
        assert!(cfg.audio_noise_std.powi(2) <= 0.1 * d_min);
        let (mut right, mut total) = (0, 0);
        for u in &c.utterances {
            for s in &u.audio_segments {
                for f in s.start - 1..s.end {
                    let x = u.audio.frames().row(f);
                    let best = (0..k)
                        .min_by(|&a, &b| {
                            let da = (&x - &means.audio_means.row(a)).mapv(|v| v * v).sum();
                            let db = (&x - &means.audio_means.row(b)).mapv(|v| v * v).sum();
                            da.total_cmp(&db)
                        })
                        .unwrap();
                    right += usize::from(best + 1 == s.unit as usize);
                    total += 1;
                }
            }
        }
        assert!(right as f64 / total as f64 > 0.95);
    }

    #[test]
    fn viseme_accuracy_dominates_phoneme_accuracy() {
        // a deliberately weak frame classifier evaluated through the map
        let cfg = CorpusConfig {
            audio_noise_std: 1.2,
            ..small(8)
        };
        let c = generate_corpus(&cfg).unwrap();
        let means = class_means(&cfg);
        let map = cfg.viseme_map();
        let (mut ph, mut vi, mut total) = (0, 0, 0);
        for u in &c.utterances {
            for s in &u.audio_segments {
                for f in s.start - 1..s.end {
                    let x = u.audio.frames().row(f);
                    let best = (0..12)
                        .min_by(|&a, &b| {
                            let da = (&x - &means.audio_means.row(a)).mapv(|v| v * v).sum();
                            let db = (&x - &means.audio_means.row(b)).mapv(|v| v * v).sum();
                            da.total_cmp(&db)
                        })
                        .unwrap() as u32
                        + 1;
                    ph += usize::from(best == s.unit);
                    vi += usize::from(map.viseme_of(best) == map.viseme_of(s.unit));
                    total += 1;
                }
            }
        }
        assert!(ph < total);
        assert!(vi >= ph);
    }

    #[test]
    fn full_profile_generates() {
        let cfg = CorpusConfig {
            profile: Profile::Full,
            ..small(9)
        };
        let c = generate_corpus(&cfg).unwrap();
        assert!(c.utterances.iter().all(|u| u.phonemes.num_units() == 45));
    }

    #[test]
    fn feature_noise_hits_the_target_snr() {
        let cfg = CorpusConfig {
            num_utterances: 120,
            ..Default::default()
        };
        let c = generate_corpus(&cfg).unwrap();
        let frames: Vec<f64> = c.utterances.iter().flat_map(|u| u.audio.frames().iter().copied().collect::<Vec<_>>()).collect();
        let t = frames.len() / cfg.audio_dim;
        assert!(t >= 3000);
        let x = FeatureSequence::from_frames(Array2::from_shape_vec((t, cfg.audio_dim), frames).unwrap(), Modality::Audio).unwrap();
        for &snr in &cfg.snr_db {
            let y = corrupt_features(&x, snr, 1).unwrap();
            assert!((feature_snr_db(&x, &y) - snr).abs() < 0.2);
        }
        assert_eq!(corrupt_features(&x, f64::INFINITY, 1).unwrap(), x);
        let zero = FeatureSequence::from_frames(Array2::zeros((3, 2)), Modality::Audio).unwrap();
        assert!(matches!(corrupt_features(&zero, 20.0, 1), Err(Error::ZeroPowerSignal)));
    }
}
