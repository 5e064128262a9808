//! Experiment plumbing shared by the command-line tool and the acceptance
//! suite: per-system feature pipelines, multi-condition training, the
//! train/test condition matrix and the three-system alignment analysis.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::alignment::{
    extract_peaks, fraction_between, match_corpus, offset_report, MatchResult, MatchedPair, OffsetReport, PeakRecord,
    DEFAULT_PEAK_THRESHOLD,
};
use crate::avcorpus::{corrupt_features, stream_seed, Corpus, CorpusConfig, Utterance, VisemeMap};
use crate::ctc::LabelSequence;
use crate::decode::{
    edit_counts, greedy_decode, load_arpa, prefix_beam_search, BeamConfig, EditCounts, Lexicon, NGramModel,
    TlgDecoder,
};
use crate::error::{Error, Result};
use crate::features::{cmvn, fuse, shift_modality, snr_grid, stack_context, FeatureSequence};
use crate::model::lstm::forward_frames;
use crate::model::{
    run_pool, train, EpochStats, ExampleSource, LabelAlphabet, NetworkConfig, NetworkParams, Posteriorgram,
    TrainConfig, TrainExample,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stream {
    Audio,
    Video,
    /// Frame-level concatenation of audio and video.
    Fused,
}

impl fmt::Display for Stream {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stream::Audio => "audio",
            Stream::Video => "video",
            Stream::Fused => "fused",
        })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Units {
    #[default]
    Phonemes,
    Visemes,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrainCondition {
    /// Clean audio only.
    #[default]
    Clean,
    /// Each utterance draws a fresh condition from clean plus the training
    /// SNR list every epoch.
    Multi,
}

impl fmt::Display for TrainCondition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TrainCondition::Clean => "clean",
            TrainCondition::Multi => "multi",
        })
    }
}

/// Noise applied to the audio stream; video is never corrupted.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Condition {
    Clean,
    Snr(f64),
}

impl Condition {
    pub fn snr_db(self) -> f64 {
        match self {
            Condition::Clean => f64::INFINITY,
            Condition::Snr(s) => s,
        }
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Condition::Clean => f.write_str("clean"),
            Condition::Snr(s) => write!(f, "{s:.2}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureConfig {
    /// Per-utterance mean and variance normalization of each stream.
    pub cmvn: bool,
    /// Frames of context stacked on either side.
    pub context: usize,
    /// Delay applied to the video stream before fusion; negative values
    /// advance it.
    pub video_offset_frames: i64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            cmvn: true,
            context: 1,
            video_offset_frames: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub num_layers: usize,
    pub hidden_size: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            num_layers: 4,
            hidden_size: 64,
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecodeMode {
    /// Unit sequences only; no word output.
    Greedy,
    #[default]
    Beam,
    Wfst,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecodeConfig {
    pub mode: DecodeMode,
    pub beam_width: usize,
    pub lm_weight: f64,
    pub acoustic_scale: f64,
    /// Pruning beam of the WFST decoder in cost units.
    pub wfst_beam: f64,
    /// ARPA model; a uniform unigram over the lexicon when absent.
    pub lm: Option<PathBuf>,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self {
            mode: DecodeMode::Beam,
            beam_width: 8,
            lm_weight: 1.0,
            acoustic_scale: 1.0,
            wfst_beam: 12.0,
            lm: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSpec {
    pub name: String,
    pub stream: Stream,
    #[serde(default)]
    pub units: Units,
    #[serde(default)]
    pub condition: TrainCondition,
}

impl SystemSpec {
    pub fn new(stream: Stream, units: Units, condition: TrainCondition) -> Self {
        let suffix = if units == Units::Visemes { "-vis" } else { "" };
        Self {
            name: format!("{stream}-{condition}{suffix}"),
            stream,
            units,
            condition,
        }
    }
}

fn default_systems() -> Vec<SystemSpec> {
    use TrainCondition::*;
    vec![
        SystemSpec::new(Stream::Audio, Units::Phonemes, Clean),
        SystemSpec::new(Stream::Audio, Units::Phonemes, Multi),
        SystemSpec::new(Stream::Video, Units::Phonemes, Clean),
        SystemSpec::new(Stream::Fused, Units::Phonemes, Clean),
        SystemSpec::new(Stream::Fused, Units::Phonemes, Multi),
    ]
}

fn default_snrs() -> Vec<f64> {
    snr_grid(40.0, 20.0, 10)
}

fn yes() -> bool {
    true
}

/// Everything needed to reproduce a run. `seed` is mandatory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Existing corpus directory; when absent a corpus is generated from
    /// `corpus`.
    #[serde(default)]
    pub corpus_dir: Option<PathBuf>,
    #[serde(default)]
    pub corpus: CorpusConfig,
    #[serde(default)]
    pub features: FeatureConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub training: TrainConfig,
    #[serde(default)]
    pub decode: DecodeConfig,
    /// Noise conditions for multi-condition training, dB.
    #[serde(default = "default_snrs")]
    pub train_snr_db: Vec<f64>,
    /// Noise conditions for testing, dB.
    #[serde(default = "default_snrs")]
    pub test_snr_db: Vec<f64>,
    /// Also test on clean audio.
    #[serde(default = "yes")]
    pub test_clean: bool,
    #[serde(default = "default_systems")]
    pub systems: Vec<SystemSpec>,
    pub seed: u64,
}

impl ExperimentConfig {
    pub fn new(seed: u64) -> Self {
        Self {
            corpus_dir: None,
            corpus: CorpusConfig::default(),
            features: FeatureConfig::default(),
            model: ModelConfig::default(),
            training: TrainConfig::default(),
            decode: DecodeConfig::default(),
            train_snr_db: default_snrs(),
            test_snr_db: default_snrs(),
            test_clean: true,
            systems: default_systems(),
            seed,
        }
    }

    pub fn from_json(text: &str, name: &Path) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::parse(name, e.line(), e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text, path)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config is always serializable")
    }

    pub fn validate(&self) -> Result<()> {
        if self.systems.is_empty() {
            return Err(Error::invalid("at least one system must be configured"));
        }
        let mut names = HashSet::new();
        for s in &self.systems {
            if !names.insert(&s.name) {
                return Err(Error::invalid(format!("duplicate system name {:?}", s.name)));
            }
        }
        if self.train_snr_db.iter().chain(&self.test_snr_db).any(|s| !s.is_finite()) {
            return Err(Error::invalid("SNR conditions must be finite"));
        }
        if self.systems.iter().any(|s| s.condition == TrainCondition::Multi) && self.train_snr_db.is_empty() {
            return Err(Error::invalid("multi-condition training needs train_snr_db"));
        }
        if self.test_conditions().is_empty() {
            return Err(Error::invalid("no test condition configured"));
        }
        if self.model.num_layers == 0 || self.model.hidden_size == 0 {
            return Err(Error::invalid("model needs >= 1 layer and hidden size >= 1"));
        }
        if self.corpus_dir.is_none() {
            self.corpus.validate()?;
        }
        Ok(())
    }

    /// Clean first (when enabled), then the SNR list in configured order.
    pub fn test_conditions(&self) -> Vec<Condition> {
        let mut out = Vec::new();
        if self.test_clean {
            out.push(Condition::Clean);
        }
        out.extend(self.test_snr_db.iter().map(|&s| Condition::Snr(s)));
        out
    }

    fn train_pool(&self, condition: TrainCondition) -> Vec<Condition> {
        match condition {
            TrainCondition::Clean => vec![Condition::Clean],
            TrainCondition::Multi => std::iter::once(Condition::Clean)
                .chain(self.train_snr_db.iter().map(|&s| Condition::Snr(s)))
                .collect(),
        }
    }

    /// Reads `corpus_dir` or generates the configured corpus.
    pub fn load_corpus(&self) -> Result<Corpus> {
        match &self.corpus_dir {
            Some(dir) => crate::avcorpus::read_corpus(dir),
            None => crate::avcorpus::generate_corpus(&self.corpus),
        }
    }
}

/// Processed network input for one utterance.
pub fn system_input(
    utt: &Utterance,
    stream: Stream,
    features: &FeatureConfig,
    condition: Condition,
    noise_seed: u64,
) -> Result<Array2<f64>> {
    let norm = |x: FeatureSequence| if features.cmvn { cmvn(&x) } else { Ok(x) };
    let audio = || -> Result<FeatureSequence> { norm(corrupt_features(&utt.audio, condition.snr_db(), noise_seed)?) };
    let video = || -> Result<FeatureSequence> {
        let v = norm(utt.video.clone())?;
        if features.video_offset_frames == 0 {
            Ok(v)
        } else {
            shift_modality(&v, features.video_offset_frames)
        }
    };
    let x = match stream {
        Stream::Audio => audio()?,
        Stream::Video => video()?,
        Stream::Fused => fuse(&[audio()?, video()?])?,
    };
    Ok(stack_context(&x, features.context)?.into_frames())
}

pub fn system_targets(utt: &Utterance, units: Units, map: &VisemeMap) -> Result<LabelSequence> {
    match units {
        Units::Phonemes => Ok(utt.phonemes.clone()),
        Units::Visemes => map.map_sequence(&utt.phonemes),
    }
}

pub fn unit_alphabet(corpus: &Corpus, units: Units) -> LabelAlphabet {
    match units {
        Units::Phonemes => corpus.phonemes(),
        Units::Visemes => corpus.viseme_map().visemes().clone(),
    }
}

const TRAIN_NOISE: u64 = 0x7261_696e;
const TEST_NOISE: u64 = 0x7465_7374;

fn test_noise_seed(seed: u64, utt_index: usize, condition: Condition) -> u64 {
    stream_seed(stream_seed(stream_seed(seed, TEST_NOISE), utt_index as u64), condition.snr_db().to_bits())
}

/// Training utterances for one system. Clean systems are featurized once;
/// multi-condition systems draw a condition per utterance and epoch.
pub struct SystemExamples<'a> {
    utts: &'a [Utterance],
    spec: SystemSpec,
    features: FeatureConfig,
    map: VisemeMap,
    pool: Vec<Condition>,
    seed: u64,
    fixed: Option<Vec<TrainExample>>,
}

impl<'a> SystemExamples<'a> {
    pub fn new(corpus: &Corpus, utts: &'a [Utterance], spec: &SystemSpec, cfg: &ExperimentConfig) -> Result<Self> {
        let mut out = Self {
            utts,
            spec: spec.clone(),
            features: cfg.features.clone(),
            map: corpus.viseme_map(),
            pool: cfg.train_pool(spec.condition),
            seed: stream_seed(cfg.seed, TRAIN_NOISE),
            fixed: None,
        };
        if out.pool.len() == 1 {
            let fixed = (0..utts.len()).map(|i| out.build(0, i)).collect::<Result<Vec<_>>>()?;
            out.fixed = Some(fixed);
        }
        Ok(out)
    }

    fn build(&self, epoch: usize, index: usize) -> Result<TrainExample> {
        let utt = &self.utts[index];
        let draw = stream_seed(stream_seed(self.seed, epoch as u64), index as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(draw);
        let condition = self.pool[rng.gen_range(0..self.pool.len())];
        Ok(TrainExample {
            id: utt.id.clone(),
            features: system_input(utt, self.spec.stream, &self.features, condition, rng.gen())?,
            labels: system_targets(utt, self.spec.units, &self.map)?,
        })
    }
}

impl ExampleSource for SystemExamples<'_> {
    fn len(&self) -> usize {
        self.utts.len()
    }

    fn example(&self, epoch: usize, index: usize) -> Result<TrainExample> {
        match &self.fixed {
            Some(v) => Ok(v[index].clone()),
            None => self.build(epoch, index),
        }
    }
}

#[derive(Clone, Debug)]
pub struct TrainedSystem {
    pub spec: SystemSpec,
    pub params: NetworkParams,
    pub trace: Vec<EpochStats>,
    pub skipped_ids: Vec<String>,
}

pub fn network_config(corpus: &Corpus, spec: &SystemSpec, cfg: &ExperimentConfig) -> Result<NetworkConfig> {
    let first = corpus
        .utterances
        .first()
        .ok_or_else(|| Error::invalid("corpus has no utterances"))?;
    let x = system_input(first, spec.stream, &cfg.features, Condition::Clean, 0)?;
    Ok(NetworkConfig {
        num_layers: cfg.model.num_layers,
        hidden_size: cfg.model.hidden_size,
        input_dim: x.ncols(),
        output_dim: unit_alphabet(corpus, spec.units).output_dim(),
        seed: cfg.model.seed,
    })
}

/// Clean heldout examples used for the learning-rate schedule.
pub fn heldout_examples(corpus: &Corpus, spec: &SystemSpec, features: &FeatureConfig) -> Result<Vec<TrainExample>> {
    let map = corpus.viseme_map();
    corpus
        .heldout()
        .iter()
        .map(|u| {
            Ok(TrainExample {
                id: u.id.clone(),
                features: system_input(u, spec.stream, features, Condition::Clean, 0)?,
                labels: system_targets(u, spec.units, &map)?,
            })
        })
        .collect()
}

pub fn train_system(corpus: &Corpus, spec: &SystemSpec, cfg: &ExperimentConfig) -> Result<TrainedSystem> {
    let net = network_config(corpus, spec, cfg)?;
    let source = SystemExamples::new(corpus, corpus.train(), spec, cfg)?;
    let heldout = heldout_examples(corpus, spec, &cfg.features)?;
    log::info!("training {} ({} utterances, input dim {})", spec.name, source.len(), net.input_dim);
    let out = train(&net, &cfg.training, &source, &heldout)?;
    Ok(TrainedSystem {
        spec: spec.clone(),
        params: out.params,
        trace: out.trace,
        skipped_ids: out.skipped_ids,
    })
}

pub fn posteriors(params: &NetworkParams, x: &Array2<f64>) -> Result<Posteriorgram> {
    Ok(forward_frames(params, x.view())?.0)
}

/// Turns posteriorgrams into word sequences.
pub enum WordDecoder {
    None,
    Beam {
        lexicon: Lexicon,
        lm: NGramModel,
        config: BeamConfig,
    },
    Wfst {
        lexicon: Lexicon,
        decoder: Box<TlgDecoder>,
        acoustic_scale: f64,
        beam: f64,
    },
}

impl WordDecoder {
    /// Word decoding applies to phoneme systems only; viseme systems and
    /// greedy mode get [`WordDecoder::None`].
    pub fn new(corpus: &Corpus, units: Units, cfg: &DecodeConfig) -> Result<Self> {
        if units == Units::Visemes || cfg.mode == DecodeMode::Greedy {
            return Ok(WordDecoder::None);
        }
        let lexicon = corpus.lexicon()?;
        let lm = match &cfg.lm {
            Some(p) => load_arpa(p)?,
            None => NGramModel::uniform(lexicon.words())?,
        };
        Ok(match cfg.mode {
            DecodeMode::Greedy => unreachable!(),
            DecodeMode::Beam => WordDecoder::Beam {
                lexicon,
                lm,
                config: BeamConfig {
                    beam_width: cfg.beam_width,
                    nbest: 1,
                    lm_weight: cfg.lm_weight,
                },
            },
            DecodeMode::Wfst => {
                let decoder = TlgDecoder::new(&corpus.phonemes(), &lexicon, Some(&lm), cfg.lm_weight)?;
                WordDecoder::Wfst {
                    lexicon,
                    decoder: Box::new(decoder),
                    acoustic_scale: cfg.acoustic_scale,
                    beam: cfg.wfst_beam,
                }
            }
        })
    }

    pub fn is_none(&self) -> bool {
        matches!(self, WordDecoder::None)
    }

    /// `None` when no word output is available or no path survives.
    pub fn decode(&self, y: &Posteriorgram) -> Result<Option<Vec<String>>> {
        let (lexicon, words) = match self {
            WordDecoder::None => return Ok(None),
            WordDecoder::Beam { lexicon, lm, config } => {
                let hyps = prefix_beam_search(y, config, Some(lexicon), Some(lm))?;
                match hyps.into_iter().next() {
                    Some(h) => (lexicon, h.words),
                    None => return Ok(None),
                }
            }
            WordDecoder::Wfst {
                lexicon,
                decoder,
                acoustic_scale,
                beam,
            } => match decoder.decode(y, *acoustic_scale, *beam) {
                Ok(h) => (lexicon, h.words),
                Err(Error::NoPathFound) => return Ok(None),
                Err(e) => return Err(e),
            },
        };
        Ok(Some(
            words
                .iter()
                .map(|&w| lexicon.word(w).unwrap_or("<unk>").to_string())
                .collect(),
        ))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConditionResult {
    pub condition: Condition,
    pub units: EditCounts,
    /// Absent when the system has no word decoder.
    pub words: Option<EditCounts>,
}

/// Pooled greedy unit accuracy and word errors over `utts` at one
/// condition. Utterance-level work runs on `jobs` threads; sums are taken
/// in utterance order.
pub fn evaluate_system(
    utts: &[Utterance],
    map: &VisemeMap,
    system: &TrainedSystem,
    features: &FeatureConfig,
    condition: Condition,
    decoder: &WordDecoder,
    seed: u64,
    jobs: usize,
) -> Result<ConditionResult> {
    let one = |(i, u): (usize, &Utterance)| -> Result<(EditCounts, Option<EditCounts>)> {
        let x = system_input(u, system.spec.stream, features, condition, test_noise_seed(seed, i, condition))?;
        let y = posteriors(&system.params, &x)?;
        let z = system_targets(u, system.spec.units, map)?;
        let units = edit_counts(z.ids(), &greedy_decode(&y));
        let words = if decoder.is_none() {
            None
        } else {
            let hyp = decoder.decode(&y)?.unwrap_or_default();
            Some(edit_counts(&u.words, &hyp))
        };
        Ok((units, words))
    };
    let per_utt: Vec<Result<(EditCounts, Option<EditCounts>)>> = if jobs > 1 {
        run_pool(jobs, || utts.par_iter().enumerate().map(one).collect())
    } else {
        utts.iter().enumerate().map(one).collect()
    };
    let mut units = EditCounts::default();
    let mut words = (!decoder.is_none()).then(EditCounts::default);
    for r in per_utt {
        let (u, w) = r?;
        units = units + u;
        if let (Some(total), Some(w)) = (words.as_mut(), w) {
            *total = *total + w;
        }
    }
    Ok(ConditionResult {
        condition,
        units,
        words,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatrixRow {
    pub system: String,
    pub train_cond: String,
    pub test_snr: String,
    /// Percent; empty for systems without word output.
    pub wer: Option<f64>,
    pub acc: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct RunReport {
    pub tool: String,
    pub config: ExperimentConfig,
    pub rows: Vec<MatrixRow>,
    pub traces: BTreeMap<String, Vec<EpochStats>>,
    pub skipped: BTreeMap<String, Vec<String>>,
    pub seconds: f64,
}

pub fn tool_version() -> String {
    format!("ctcfuse {}", env!("CARGO_PKG_VERSION"))
}

/// Evaluates one trained system on every test condition of `cfg`.
pub fn matrix_rows(corpus: &Corpus, system: &TrainedSystem, cfg: &ExperimentConfig) -> Result<Vec<MatrixRow>> {
    let decoder = WordDecoder::new(corpus, system.spec.units, &cfg.decode)?;
    let map = corpus.viseme_map();
    cfg.test_conditions()
        .into_iter()
        .map(|c| {
            let r = evaluate_system(
                corpus.heldout(),
                &map,
                system,
                &cfg.features,
                c,
                &decoder,
                cfg.seed,
                cfg.training.jobs,
            )?;
            Ok(MatrixRow {
                system: system.spec.name.clone(),
                train_cond: system.spec.condition.to_string(),
                test_snr: c.to_string(),
                wer: r.words.map(|w| 100.0 * w.error_rate()),
                acc: r.units.accuracy(),
            })
        })
        .collect()
}

/// Trains and evaluates every configured system. `on_system` sees each
/// system and its rows as soon as they exist, so callers can flush
/// partial results.
pub fn run_matrix(
    corpus: &Corpus,
    cfg: &ExperimentConfig,
    mut on_system: impl FnMut(&TrainedSystem, &[MatrixRow]) -> Result<()>,
) -> Result<(Vec<TrainedSystem>, Vec<MatrixRow>)> {
    cfg.validate()?;
    let mut systems = Vec::new();
    let mut rows = Vec::new();
    for spec in &cfg.systems {
        let trained = train_system(corpus, spec, cfg)?;
        let r = matrix_rows(corpus, &trained, cfg)?;
        on_system(&trained, &r)?;
        rows.extend(r);
        systems.push(trained);
    }
    Ok((systems, rows))
}

const CURVE_COLOURS: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf",
];

/// Accuracy against test condition, one polyline per system, conditions
/// on a categorical axis in first-appearance order.
pub fn render_matrix_svg(rows: &[MatrixRow]) -> String {
    let mut conditions: Vec<&str> = Vec::new();
    let mut systems: Vec<&str> = Vec::new();
    for r in rows {
        if !conditions.contains(&r.test_snr.as_str()) {
            conditions.push(&r.test_snr);
        }
        if !systems.contains(&r.system.as_str()) {
            systems.push(&r.system);
        }
    }
    let lo = rows.iter().map(|r| r.acc).fold(100.0f64, f64::min).clamp(-100.0, 100.0).min(0.0);
    let (left, top, plot_w, plot_h) = (60.0, 30.0, 520.0, 300.0);
    let x = |i: usize| left + plot_w * (i as f64 + 0.5) / conditions.len().max(1) as f64;
    let y = |acc: f64| top + plot_h * (100.0 - acc.clamp(lo, 100.0)) / (100.0 - lo);
    let legend_h = 16.0 * systems.len() as f64;
    let (width, height) = (left + plot_w + 40.0, top + plot_h + 60.0 + legend_h);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{width:.0}" height="{height:.0}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<rect x="{left}" y="{top}" width="{plot_w}" height="{plot_h}" fill="none" stroke="black"/>"#
    );
    for i in 0..=4 {
        let acc = lo + (100.0 - lo) * i as f64 / 4.0;
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{acc:.0}</text>"#,
            left - 6.0,
            y(acc) + 4.0
        );
    }
    for (i, c) in conditions.iter().enumerate() {
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{c}</text>"#,
            x(i),
            top + plot_h + 14.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">test SNR (dB)</text>"#,
        left + plot_w / 2.0,
        top + plot_h + 30.0
    );
    for (k, sys) in systems.iter().enumerate() {
        let colour = CURVE_COLOURS[k % CURVE_COLOURS.len()];
        let points: Vec<String> = conditions
            .iter()
            .enumerate()
            .filter_map(|(i, c)| {
                rows.iter()
                    .find(|r| r.system == *sys && r.test_snr == *c)
                    .map(|r| format!("{:.2},{:.2}", x(i), y(r.acc)))
            })
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline class="curve" data-system="{sys}" points="{}" fill="none" stroke="{colour}" stroke-width="1.5"/>"#,
            points.join(" ")
        );
        let ly = top + plot_h + 48.0 + 16.0 * k as f64;
        let _ = writeln!(
            s,
            r#"<line x1="{left}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{colour}" stroke-width="2"/><text x="{:.2}" y="{:.2}">{sys}</text>"#,
            left + 20.0,
            left + 26.0,
            ly + 4.0
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Clean-condition peaks of one system over `utts`.
pub fn system_peaks(
    utts: &[Utterance],
    params: &NetworkParams,
    stream: Stream,
    features: &FeatureConfig,
    threshold: f64,
) -> Result<Vec<PeakRecord>> {
    let mut out = Vec::new();
    for u in utts {
        let x = system_input(u, stream, features, Condition::Clean, 0)?;
        out.extend(extract_peaks(&u.id, &posteriors(params, &x)?, threshold)?);
    }
    Ok(out)
}

#[derive(Clone, Debug)]
pub struct AlignmentAnalysis {
    pub alphabet: LabelAlphabet,
    /// `(system, record)` for the audio, video and audiovisual systems.
    pub records: Vec<(String, PeakRecord)>,
    /// Offsets `video − audio`.
    pub video_vs_audio: OffsetReport,
    /// Offsets `audiovisual − audio`.
    pub av_vs_audio: OffsetReport,
    /// Share of units whose audiovisual position lies between the audio
    /// and video positions.
    pub between_fraction: Option<f64>,
    pub unmatched: usize,
}

pub struct AlignmentInputs<'a> {
    pub audio: &'a NetworkParams,
    pub video: &'a NetworkParams,
    pub av: &'a NetworkParams,
    /// Units of the audio and audiovisual systems.
    pub units: Units,
    /// Units of the video system; visemes against phonemes match through
    /// the viseme map.
    pub video_units: Units,
}

/// Peak positions of the three systems on `utts` compared against the
/// audio system. Occurrences are capped by the reference transcription.
pub fn analyze_alignment(
    corpus: &Corpus,
    utts: &[Utterance],
    inputs: &AlignmentInputs<'_>,
    features: &FeatureConfig,
    frame_ms: f64,
    correction_frames: f64,
) -> Result<AlignmentAnalysis> {
    let map = corpus.viseme_map();
    let refs: HashMap<String, LabelSequence> = utts
        .iter()
        .map(|u| Ok((u.id.clone(), system_targets(u, inputs.units, &map)?)))
        .collect::<Result<_>>()?;
    let threshold = DEFAULT_PEAK_THRESHOLD;
    let audio = system_peaks(utts, inputs.audio, Stream::Audio, features, threshold)?;
    let video = system_peaks(utts, inputs.video, Stream::Video, features, threshold)?;
    let av = system_peaks(utts, inputs.av, Stream::Fused, features, threshold)?;
    let mv = match (inputs.units, inputs.video_units) {
        (a, v) if a == v => match_corpus(&video, &audio, None, Some(&refs)),
        (Units::Phonemes, Units::Visemes) => {
            let m = match_corpus(&audio, &video, Some(&map), Some(&refs));
            MatchResult {
                pairs: m.pairs.iter().map(MatchedPair::swap).collect(),
                unmatched: m.unmatched,
            }
        }
        _ => return Err(Error::invalid("a viseme audio system cannot be compared with a phoneme video system")),
    };
    let ma = match_corpus(&av, &audio, None, Some(&refs));
    let video_vs_audio = offset_report(&mv.pairs, frame_ms, correction_frames)?;
    let av_vs_audio = offset_report(&ma.pairs, frame_ms, correction_frames)?;
    let between_fraction = fraction_between(&av_vs_audio, &video_vs_audio);
    let records = [("audio", audio), ("video", video), ("audiovisual", av)]
        .into_iter()
        .flat_map(|(name, rs)| rs.into_iter().map(move |r| (name.to_string(), r)))
        .collect();
    Ok(AlignmentAnalysis {
        alphabet: unit_alphabet(corpus, inputs.units),
        records,
        video_vs_audio,
        av_vs_audio,
        between_fraction,
        unmatched: mv.unmatched + ma.unmatched,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::avcorpus::generate_corpus;
    use crate::model::init_params;

    fn tiny_corpus() -> Corpus {
        generate_corpus(&CorpusConfig {
            num_utterances: 12,
            num_heldout: 4,
            seed: 3,
            ..Default::default()
        })
        .unwrap()
    }

    fn tiny_config() -> ExperimentConfig {
        let mut cfg = ExperimentConfig::new(5);
        cfg.model = ModelConfig {
            num_layers: 1,
            hidden_size: 4,
            seed: 1,
        };
        cfg.training.epochs = 1;
        cfg.test_snr_db = vec![30.0, 20.0];
        cfg
    }

    #[test]
    fn config_requires_seed_and_rejects_unknown_fields() {
        let p = Path::new("cfg.json");
        assert!(matches!(ExperimentConfig::from_json("{}", p), Err(Error::Parse { .. })));
        let cfg = ExperimentConfig::from_json(r#"{"seed": 9}"#, p).unwrap();
        assert_eq!(cfg, ExperimentConfig::new(9));
        assert!(ExperimentConfig::from_json(r#"{"seed": 9, "bogus": 1}"#, p).is_err());
        let echo = ExperimentConfig::from_json(&cfg.to_json(), p).unwrap();
        assert_eq!(echo, cfg);
        let dup = r#"{"seed": 1, "systems": [{"name": "a", "stream": "audio"}, {"name": "a", "stream": "video"}]}"#;
        assert!(matches!(ExperimentConfig::from_json(dup, p), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn input_dims_follow_streams_and_context() {
        let c = tiny_corpus();
        let u = &c.utterances[0];
        let f = FeatureConfig::default();
        let dims: Vec<usize> = [Stream::Audio, Stream::Video, Stream::Fused]
            .iter()
            .map(|&s| system_input(u, s, &f, Condition::Clean, 0).unwrap().ncols())
            .collect();
        assert_eq!(dims, vec![3 * 13, 3 * 8, 3 * 21]);
        let no_ctx = FeatureConfig {
            context: 0,
            ..f
        };
        let x = system_input(u, Stream::Fused, &no_ctx, Condition::Snr(20.0), 7).unwrap();
        assert_eq!(x.dim(), (u.num_frames(), 21));
    }

    #[test]
    fn video_offset_only_moves_video_columns() {
        let c = tiny_corpus();
        let u = &c.utterances[1];
        let base = FeatureConfig {
            context: 0,
            ..Default::default()
        };
        let shifted = FeatureConfig {
            video_offset_frames: 2,
            ..base.clone()
        };
        let a = system_input(u, Stream::Fused, &base, Condition::Clean, 0).unwrap();
        let b = system_input(u, Stream::Fused, &shifted, Condition::Clean, 0).unwrap();
        assert_eq!(a.slice(ndarray::s![.., ..13]), b.slice(ndarray::s![.., ..13]));
        let t = u.num_frames();
        assert_eq!(a.slice(ndarray::s![..t - 2, 13..]), b.slice(ndarray::s![2.., 13..]));
    }

    #[test]
    fn multi_condition_source_varies_by_epoch_and_is_reproducible() {
        let c = tiny_corpus();
        let cfg = tiny_config();
        let spec = SystemSpec::new(Stream::Audio, Units::Phonemes, TrainCondition::Multi);
        let src = SystemExamples::new(&c, c.train(), &spec, &cfg).unwrap();
        let again = SystemExamples::new(&c, c.train(), &spec, &cfg).unwrap();
        let e0: Vec<_> = (0..src.len()).map(|i| src.example(0, i).unwrap().features).collect();
        let e1: Vec<_> = (0..src.len()).map(|i| src.example(1, i).unwrap().features).collect();
        assert_ne!(e0, e1);
        assert_eq!(e0[3], again.example(0, 3).unwrap().features);

        let clean = SystemSpec::new(Stream::Audio, Units::Phonemes, TrainCondition::Clean);
        let src = SystemExamples::new(&c, c.train(), &clean, &cfg).unwrap();
        assert_eq!(src.example(0, 2).unwrap().features, src.example(5, 2).unwrap().features);
    }

    #[test]
    fn viseme_targets_use_the_viseme_alphabet() {
        let c = tiny_corpus();
        let map = c.viseme_map();
        let z = system_targets(&c.utterances[0], Units::Visemes, &map).unwrap();
        assert_eq!(z.num_units(), 4);
        let spec = SystemSpec::new(Stream::Video, Units::Visemes, TrainCondition::Clean);
        assert_eq!(network_config(&c, &spec, &tiny_config()).unwrap().output_dim, 5);
    }

    #[test]
    fn matrix_has_one_row_per_system_and_condition() {
        let c = tiny_corpus();
        let mut cfg = tiny_config();
        cfg.systems = vec![
            SystemSpec::new(Stream::Audio, Units::Phonemes, TrainCondition::Clean),
            SystemSpec::new(Stream::Video, Units::Visemes, TrainCondition::Clean),
        ];
        let mut seen = 0;
        let (systems, rows) = run_matrix(&c, &cfg, |_, r| {
            seen += r.len();
            Ok(())
        })
        .unwrap();
        assert_eq!(systems.len(), 2);
        assert_eq!(rows.len(), 2 * 3);
        assert_eq!(seen, rows.len());
        assert!(rows[..3].iter().all(|r| r.wer.is_some()));
        assert!(rows[3..].iter().all(|r| r.wer.is_none()));
        assert_eq!(rows[0].test_snr, "clean");
        assert_eq!(rows[2].test_snr, "20.00");
        let svg = render_matrix_svg(&rows);
        assert_eq!(svg.matches(r#"class="curve""#).count(), 2);
    }

    #[test]
    fn evaluation_is_independent_of_jobs() {
        let c = tiny_corpus();
        let cfg = tiny_config();
        let spec = SystemSpec::new(Stream::Fused, Units::Phonemes, TrainCondition::Clean);
        let system = TrainedSystem {
            params: init_params(&network_config(&c, &spec, &cfg).unwrap()).unwrap(),
            spec,
            trace: vec![],
            skipped_ids: vec![],
        };
        let dec = WordDecoder::new(&c, Units::Phonemes, &cfg.decode).unwrap();
        let map = c.viseme_map();
        let run = |jobs| {
            evaluate_system(&c.utterances, &map, &system, &cfg.features, Condition::Snr(20.0), &dec, 1, jobs).unwrap()
        };
        assert_eq!(run(1), run(3));
    }

    #[test]
    fn identical_systems_have_zero_offsets() {
        let c = tiny_corpus();
        let mut cfg = tiny_config();
        cfg.features.context = 0;
        // one network fed three identical streams: audio features for every system
        let spec = SystemSpec::new(Stream::Audio, Units::Phonemes, TrainCondition::Clean);
        let mut cfg_train = cfg.clone();
        cfg_train.training.epochs = 3;
        cfg_train.model.hidden_size = 8;
        let trained = train_system(&c, &spec, &cfg_train).unwrap();
        let audio = system_peaks(c.heldout(), &trained.params, Stream::Audio, &cfg.features, 0.3).unwrap();
        let m = match_corpus(&audio, &audio, None, None);
        assert!(m.pairs.iter().all(|p| p.offset() == 0));
        assert_eq!(m.unmatched, 0);
    }
}
