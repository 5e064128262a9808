//! Synthetic audiovisual corpora with known phoneme alignments and a
//! configurable video-before-audio lead.

mod generate;
mod io;

use serde::{Deserialize, Serialize};

use crate::ctc::LabelSequence;
use crate::error::{Error, Result};
use crate::features::{snr_grid, FeatureSequence};
use crate::model::LabelAlphabet;

pub use generate::{class_means, corrupt_features, feature_snr_db, generate_corpus, EmissionModel};
pub use io::{read_corpus, write_corpus};
pub(crate) use generate::stream_seed;

/// Built-in phoneme → viseme grouping (bilabial, labiodental, dental,
/// alveolar, post-alveolar, velar/glottal, approximant and five vowel
/// classes by openness and rounding).
pub const VISEME_GROUPS: [(&str, &[&str]); 12] = [
    ("V_bilabial", &["p", "b", "m", "em"]),
    ("V_labiodental", &["f", "v"]),
    ("V_dental", &["th", "dh"]),
    ("V_alveolar", &["t", "d", "s", "z", "n", "en", "l", "el"]),
    ("V_postalveolar", &["sh", "zh", "ch", "jh"]),
    ("V_velar", &["y", "k", "g", "ng", "hh"]),
    ("V_approximant", &["r", "w"]),
    ("V_front_close", &["iy", "ih", "ix"]),
    ("V_front_open", &["eh", "ae", "ey", "ay"]),
    ("V_central", &["aa", "ah", "ax", "er", "axr"]),
    ("V_back_rounded", &["ao", "oy", "ow", "aw"]),
    ("V_close_rounded", &["uh", "uw"]),
];

/// Desk-scale alphabet: four viseme classes of three phonemes each.
pub const DESK_PHONEMES: [&str; 12] = ["p", "b", "m", "t", "d", "s", "aa", "ah", "ax", "ao", "ow", "oy"];

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    /// 12 phonemes, 4 visemes.
    #[default]
    Desk,
    /// 45 phonemes, 12 visemes.
    Full,
}

impl Profile {
    pub fn phonemes(self) -> LabelAlphabet {
        let names: Vec<&str> = match self {
            Profile::Desk => DESK_PHONEMES.to_vec(),
            Profile::Full => VISEME_GROUPS.iter().flat_map(|(_, ps)| ps.iter().copied()).collect(),
        };
        LabelAlphabet::from_names(&names).expect("built-in alphabet is valid")
    }
}

/// Total map from phoneme ids onto a viseme alphabet.
#[derive(Clone, Debug, PartialEq)]
pub struct VisemeMap {
    phonemes: LabelAlphabet,
    visemes: LabelAlphabet,
    /// `table[p - 1]` is the viseme id of phoneme id `p`.
    table: Vec<u32>,
}

impl VisemeMap {
    /// `groups` lists viseme names with their phoneme names. Every phoneme
    /// must appear exactly once; visemes with no phoneme of the alphabet
    /// are left out so the map is surjective.
    pub fn from_groups<S: AsRef<str>, P: AsRef<str>>(phonemes: &LabelAlphabet, groups: &[(S, Vec<P>)]) -> Result<Self> {
        let mut owner: Vec<Option<usize>> = vec![None; phonemes.num_units()];
        for (g, (_, members)) in groups.iter().enumerate() {
            for m in members {
                if let Some(id) = phonemes.id(m.as_ref()) {
                    let slot = &mut owner[id as usize - 1];
                    if slot.is_some() {
                        return Err(Error::invalid(format!("phoneme {:?} is in two viseme groups", m.as_ref())));
                    }
                    *slot = Some(g);
                }
            }
        }
        if let Some(missing) = owner.iter().position(Option::is_none) {
            return Err(Error::IncompleteMap(phonemes.units()[missing].clone()));
        }
        let mut used: Vec<usize> = owner.iter().map(|o| o.expect("checked")).collect();
        used.sort_unstable();
        used.dedup();
        let names: Vec<&str> = used.iter().map(|&g| groups[g].0.as_ref()).collect();
        let visemes = LabelAlphabet::from_names(&names)?;
        let table = owner
            .iter()
            .map(|o| used.binary_search(&o.expect("checked")).expect("used") as u32 + 1)
            .collect();
        Ok(Self {
            phonemes: phonemes.clone(),
            visemes,
            table,
        })
    }

    pub fn phonemes(&self) -> &LabelAlphabet {
        &self.phonemes
    }

    pub fn visemes(&self) -> &LabelAlphabet {
        &self.visemes
    }

    pub fn viseme_of(&self, phoneme: u32) -> u32 {
        self.table[phoneme as usize - 1]
    }

    /// Maps each phoneme to its viseme and merges adjacent repeats, which
    /// a viseme-level CTC model cannot emit without a separating blank.
    pub fn map_sequence(&self, z: &LabelSequence) -> Result<LabelSequence> {
        let mut out: Vec<u32> = Vec::with_capacity(z.len());
        for &p in z.ids() {
            let v = self.viseme_of(p);
            if out.last() != Some(&v) {
                out.push(v);
            }
        }
        LabelSequence::new(out, self.visemes.num_units() as u32)
    }
}

/// Built-in grouping for any alphabet whose phoneme names appear in
/// [`VISEME_GROUPS`]; unknown names give [`Error::IncompleteMap`].
pub fn default_viseme_map(phonemes: &LabelAlphabet) -> Result<VisemeMap> {
    let groups: Vec<(&str, Vec<&str>)> = VISEME_GROUPS.iter().map(|(v, ps)| (*v, ps.to_vec())).collect();
    VisemeMap::from_groups(phonemes, &groups)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusConfig {
    pub profile: Profile,
    pub num_utterances: usize,
    /// The last `num_heldout` utterances form the heldout set.
    pub num_heldout: usize,
    pub vocabulary_size: usize,
    pub min_word_phonemes: usize,
    pub max_word_phonemes: usize,
    pub min_words: usize,
    pub max_words: usize,
    /// Phoneme duration = `min_duration` + Geometric(`continuation_p`) extra frames.
    pub min_duration: usize,
    pub continuation_p: f64,
    pub audio_dim: usize,
    /// Every audio class mean is this constant vector plus a small
    /// class-specific deviation, so additive noise quickly masks classes.
    pub audio_offset: f64,
    pub audio_class_spread: f64,
    pub audio_noise_std: f64,
    pub video_dim: usize,
    pub video_class_spread: f64,
    pub video_noise_std: f64,
    pub video_lead_frames: usize,
    /// Test conditions for feature-space noise, dB.
    pub snr_db: Vec<f64>,
    pub seed: u64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            profile: Profile::Desk,
            num_utterances: 600,
            num_heldout: 100,
            vocabulary_size: 40,
            min_word_phonemes: 2,
            max_word_phonemes: 4,
            min_words: 2,
            max_words: 3,
            min_duration: 3,
            continuation_p: 0.4,
            audio_dim: 13,
            audio_offset: 10.0,
            audio_class_spread: 0.6,
            audio_noise_std: 0.3,
            video_dim: 8,
            video_class_spread: 1.5,
            video_noise_std: 0.5,
            video_lead_frames: 3,
            snr_db: snr_grid(40.0, 20.0, 10),
            seed: 1,
        }
    }
}

impl CorpusConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::invalid(msg.to_string()));
        if self.num_utterances == 0 || self.num_heldout > self.num_utterances {
            return bad("need num_utterances >= 1 and num_heldout <= num_utterances");
        }
        if self.audio_dim == 0 || self.video_dim == 0 {
            return bad("emission dims must be >= 1");
        }
        if self.min_duration == 0 {
            return bad("min_duration must be >= 1");
        }
        if !(0.0..1.0).contains(&self.continuation_p) {
            return bad("continuation_p must lie in [0, 1)");
        }
        if self.min_word_phonemes == 0 || self.min_word_phonemes > self.max_word_phonemes {
            return bad("need 1 <= min_word_phonemes <= max_word_phonemes");
        }
        if self.min_words == 0 || self.min_words > self.max_words {
            return bad("need 1 <= min_words <= max_words");
        }
        if self.vocabulary_size == 0 {
            return bad("vocabulary_size must be >= 1");
        }
        let min_len = self.min_words * self.min_word_phonemes * self.min_duration;
        if self.video_lead_frames >= min_len {
            return bad("video_lead_frames must be shorter than the shortest utterance");
        }
        for v in [
            self.audio_offset,
            self.audio_class_spread,
            self.audio_noise_std,
            self.video_class_spread,
            self.video_noise_std,
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return bad("emission parameters must be finite and non-negative");
            }
        }
        Ok(())
    }

    pub fn phonemes(&self) -> LabelAlphabet {
        self.profile.phonemes()
    }

    pub fn viseme_map(&self) -> VisemeMap {
        default_viseme_map(&self.phonemes()).expect("built-in profiles are fully mapped")
    }
}

/// One phoneme occurrence occupying frames `start..=end` (1-based).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub unit: u32,
    pub start: usize,
    pub end: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Utterance {
    pub id: String,
    pub audio: FeatureSequence,
    pub video: FeatureSequence,
    pub phonemes: LabelSequence,
    pub words: Vec<String>,
    pub audio_segments: Vec<Segment>,
    pub video_segments: Vec<Segment>,
}

impl Utterance {
    pub fn num_frames(&self) -> usize {
        self.audio.num_frames()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    pub config: CorpusConfig,
    /// Pronunciations as phoneme names, in vocabulary order.
    pub lexicon: Vec<(String, Vec<String>)>,
    pub utterances: Vec<Utterance>,
}

impl Corpus {
    pub fn train(&self) -> &[Utterance] {
        let n = self.utterances.len().saturating_sub(self.config.num_heldout);
        &self.utterances[..n]
    }

    pub fn heldout(&self) -> &[Utterance] {
        let n = self.utterances.len().saturating_sub(self.config.num_heldout);
        &self.utterances[n..]
    }

    pub fn phonemes(&self) -> LabelAlphabet {
        self.config.phonemes()
    }

    pub fn viseme_map(&self) -> VisemeMap {
        self.config.viseme_map()
    }

    pub fn lexicon(&self) -> Result<crate::decode::Lexicon> {
        let alphabet = self.phonemes();
        let entries = self
            .lexicon
            .iter()
            .map(|(w, p)| Ok((w.clone(), alphabet.encode(p)?)))
            .collect::<Result<Vec<_>>>()?;
        crate::decode::Lexicon::new(entries, alphabet.num_units() as u32)
    }
}
