use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{info, warn};
use serde::{Deserialize, Serialize};

use ctcfuse::alignment::{write_peaks_csv, write_report_csv, SystemPositions};
use ctcfuse::avcorpus::{corrupt_features, read_corpus, write_corpus, Corpus, CorpusConfig};
use ctcfuse::decode::{edit_counts, greedy_decode, EditCounts};
use ctcfuse::experiment::{
    analyze_alignment, posteriors, render_matrix_svg, run_matrix, system_input, tool_version, train_system,
    unit_alphabet, AlignmentInputs, Condition, DecodeMode, ExperimentConfig, FeatureConfig, RunReport, Stream, SystemSpec, TrainCondition, TrainedSystem, Units, WordDecoder,
};
use ctcfuse::features::io::{load_fmat, load_wav, save_fmat, save_wav};
use ctcfuse::features::{
    add_noise_at_snr, cmvn, compute_fbank, compute_fbank_pitch, compute_mfcc, stack_context, SpectralConfig, Waveform,
};
use ctcfuse::model::{load_checkpoint, save_checkpoint, NetworkParams};
use ctcfuse::Error;

#[derive(Parser, Debug)]
#[command(name = "ctcfuse", version, about = "CTC audiovisual recognizer: corpora, training, decoding and alignment analysis")]
struct Cli {
    /// JSON configuration (corpus config for gen-corpus, experiment config otherwise).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the seed in the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for utterance-level parallelism.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    /// Frame duration used to report offsets in milliseconds.
    #[arg(long, global = true, default_value_t = 33.333)]
    frame_ms: f64,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic audiovisual corpus.
    GenCorpus {
        #[arg(long)]
        out: PathBuf,
    },
    /// Add noise at a given SNR to a waveform or to a corpus's audio features.
    Augment(AugmentArgs),
    /// Compute spectral features from a WAV file.
    Extract(ExtractArgs),
    /// Train one system and write its checkpoint and accuracy trace.
    Train(TrainArgs),
    /// Decode utterances with a trained system.
    Decode(DecodeArgs),
    /// Score hypotheses against references.
    Eval(EvalArgs),
    /// Train and evaluate the configured systems on every test condition.
    Matrix {
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare CTC peak positions of audio, video and audiovisual systems.
    AnalyzeAlign(AlignArgs),
}

#[derive(Args, Debug)]
struct AugmentArgs {
    #[arg(long)]
    snr: f64,
    #[arg(long)]
    out: PathBuf,
    /// Input waveform.
    #[arg(long, conflicts_with = "corpus", required_unless_present = "corpus")]
    wav: Option<PathBuf>,
    /// Input corpus directory.
    #[arg(long)]
    corpus: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum FeatureKind {
    Fbank,
    FbankPitch,
    Mfcc,
}

#[derive(Args, Debug)]
struct ExtractArgs {
    #[arg(long)]
    wav: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value_t = FeatureKind::Fbank)]
    kind: FeatureKind,
    #[arg(long)]
    cmvn: bool,
    /// Frames of context stacked on either side.
    #[arg(long, default_value_t = 0)]
    context: usize,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum StreamArg {
    Audio,
    Video,
    Fused,
}

impl From<StreamArg> for Stream {
    fn from(s: StreamArg) -> Self {
        match s {
            StreamArg::Audio => Stream::Audio,
            StreamArg::Video => Stream::Video,
            StreamArg::Fused => Stream::Fused,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum UnitsArg {
    Phonemes,
    Visemes,
}

impl From<UnitsArg> for Units {
    fn from(u: UnitsArg) -> Self {
        match u {
            UnitsArg::Phonemes => Units::Phonemes,
            UnitsArg::Visemes => Units::Visemes,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ConditionArg {
    Clean,
    Multi,
}

impl From<ConditionArg> for TrainCondition {
    fn from(c: ConditionArg) -> Self {
        match c {
            ConditionArg::Clean => TrainCondition::Clean,
            ConditionArg::Multi => TrainCondition::Multi,
        }
    }
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Corpus directory; overrides the configuration.
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = StreamArg::Audio)]
    stream: StreamArg,
    #[arg(long, value_enum, default_value_t = UnitsArg::Phonemes)]
    units: UnitsArg,
    #[arg(long, value_enum, default_value_t = ConditionArg::Clean)]
    condition: ConditionArg,
    /// Overrides the configured epoch count.
    #[arg(long)]
    epochs: Option<usize>,
    /// Output directory for model.ckpt, system.json and trace.csv.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ModeArg {
    Greedy,
    Beam,
    Wfst,
}

#[derive(Args, Debug)]
struct DecodeArgs {
    /// Directory written by `train`.
    #[arg(long)]
    model: PathBuf,
    /// Corpus whose heldout utterances are decoded.
    #[arg(long, conflicts_with = "features", required_unless_present = "features")]
    corpus: Option<PathBuf>,
    /// A single FMAT feature file already matching the model input.
    #[arg(long)]
    features: Option<PathBuf>,
    /// Decode every utterance rather than the heldout split.
    #[arg(long)]
    all: bool,
    #[arg(long, value_enum, default_value_t = ModeArg::Greedy)]
    mode: ModeArg,
    /// ARPA language model for word modes.
    #[arg(long)]
    lm: Option<PathBuf>,
    #[arg(long)]
    beam_width: Option<usize>,
    /// Test SNR applied to the audio stream.
    #[arg(long)]
    snr: Option<f64>,
    /// Hypothesis file, `utt token…` per line.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Metric {
    Wer,
    Acc,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    hyp: PathBuf,
    #[arg(long = "ref")]
    reference: PathBuf,
    #[arg(long, value_enum, default_value_t = Metric::Wer)]
    metric: Metric,
    /// Per-utterance CSV.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct AlignArgs {
    #[arg(long)]
    audio: PathBuf,
    #[arg(long)]
    video: PathBuf,
    #[arg(long)]
    av: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    /// Analyse every utterance rather than the heldout split.
    #[arg(long)]
    all: bool,
    /// Constant technical delay subtracted from every offset, frames.
    #[arg(long, default_value_t = 0.0)]
    correction: f64,
    #[arg(long)]
    out: PathBuf,
}

/// Marks configuration problems (exit code 2).
#[derive(Debug)]
struct ConfigError(String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

fn config_error(msg: impl Into<String>) -> anyhow::Error {
    anyhow::Error::new(ConfigError(msg.into()))
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<ConfigError>().is_some() {
        return 2;
    }
    match err.chain().find_map(|e| e.downcast_ref::<Error>()) {
        Some(
            Error::NonFiniteGradient
            | Error::InfeasibleLabelSequence { .. }
            | Error::NoPathFound
            | Error::InstanceTooLarge { .. }
            | Error::ZeroPowerSignal
            | Error::SingularAlignment,
        ) => 4,
        Some(Error::InvalidInput(_)) => 2,
        _ => 3,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("CTCFUSE_LOG", "info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    if !(cli.frame_ms.is_finite() && cli.frame_ms > 0.0) {
        return Err(config_error("--frame-ms must be positive"));
    }
    match &cli.command {
        Command::GenCorpus { out } => gen_corpus(&cli, out),
        Command::Augment(a) => augment(&cli, a),
        Command::Extract(a) => extract(a),
        Command::Train(a) => train_cmd(&cli, a),
        Command::Decode(a) => decode_cmd(&cli, a),
        Command::Eval(a) => eval_cmd(a),
        Command::Matrix { out } => matrix_cmd(&cli, out),
        Command::AnalyzeAlign(a) => align_cmd(&cli, a),
    }
}

fn read_config_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| config_error(format!("cannot read config {}: {e}", path.display())))
}

fn corpus_config(cli: &Cli) -> Result<CorpusConfig> {
    let mut cfg = match &cli.config {
        Some(p) => serde_json::from_str::<CorpusConfig>(&read_config_text(p)?)
            .map_err(|e| config_error(format!("{}: {e}", p.display())))?,
        None => CorpusConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    cfg.validate().map_err(|e| config_error(e.to_string()))?;
    Ok(cfg)
}

fn experiment_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::from_json(&read_config_text(p)?, p).map_err(|e| config_error(e.to_string()))?,
        None => ExperimentConfig::new(cli.seed.unwrap_or(1)),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
        cfg.corpus.seed = s;
    }
    cfg.training.jobs = cli.jobs.max(1);
    cfg.validate().map_err(|e| config_error(e.to_string()))?;
    Ok(cfg)
}

fn gen_corpus(cli: &Cli, out: &Path) -> Result<()> {
    let cfg = corpus_config(cli)?;
    let corpus = ctcfuse::avcorpus::generate_corpus(&cfg)?;
    write_corpus(out, &corpus).with_context(|| format!("writing corpus to {}", out.display()))?;
    info!("wrote {} utterances to {}", corpus.utterances.len(), out.display());
    Ok(())
}

fn augment(cli: &Cli, a: &AugmentArgs) -> Result<()> {
    let seed = cli.seed.unwrap_or(1);
    if let Some(wav) = &a.wav {
        let w = load_wav(wav)?;
        let noisy = add_noise_at_snr(&w, a.snr, seed)?;
        save_wav(&a.out, &noisy)?;
        info!("wrote {}", a.out.display());
        return Ok(());
    }
    let dir = a.corpus.as_ref().expect("clap enforces --wav or --corpus");
    let mut corpus = read_corpus(dir)?;
    for (i, u) in corpus.utterances.iter_mut().enumerate() {
        u.audio = corrupt_features(&u.audio, a.snr, seed.wrapping_add(i as u64))?;
    }
    write_corpus(&a.out, &corpus)?;
    fs::write(
        a.out.join("augment.json"),
        serde_json::to_string_pretty(&serde_json::json!({ "source": dir, "snr_db": a.snr, "seed": seed }))? + "\n",
    )?;
    info!("wrote {} utterances at {} dB to {}", corpus.utterances.len(), a.snr, a.out.display());
    Ok(())
}

fn extract(a: &ExtractArgs) -> Result<()> {
    let w: Waveform = load_wav(&a.wav)?;
    let sc = SpectralConfig::default();
    let mut x = match a.kind {
        FeatureKind::Fbank => compute_fbank(&w, &sc)?,
        FeatureKind::FbankPitch => compute_fbank_pitch(&w, &sc)?,
        FeatureKind::Mfcc => compute_mfcc(&w, &sc)?,
    };
    if a.cmvn {
        x = cmvn(&x)?;
    }
    let x = stack_context(&x, a.context)?;
    save_fmat(&a.out, x.frames())?;
    info!("wrote {} x {} features to {}", x.num_frames(), x.dim(), a.out.display());
    Ok(())
}

/// Written next to every checkpoint so decoding reproduces the pipeline.
#[derive(Serialize, Deserialize)]
struct SystemFile {
    tool: String,
    spec: SystemSpec,
    features: FeatureConfig,
    experiment: ExperimentConfig,
}

fn write_trace(path: &Path, system: &TrainedSystem) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["epoch", "heldout_unit_accuracy", "train_loss", "learning_rate", "skipped"])?;
    for e in &system.trace {
        w.write_record([
            e.epoch.to_string(),
            e.heldout_accuracy.to_string(),
            e.train_loss.to_string(),
            e.learning_rate.to_string(),
            e.skipped.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn save_system(dir: &Path, system: &TrainedSystem, cfg: &ExperimentConfig) -> Result<()> {
    fs::create_dir_all(dir)?;
    save_checkpoint(&dir.join("model.ckpt"), &system.params)?;
    let file = SystemFile {
        tool: tool_version(),
        spec: system.spec.clone(),
        features: cfg.features.clone(),
        experiment: cfg.clone(),
    };
    fs::write(dir.join("system.json"), serde_json::to_string_pretty(&file)? + "\n")?;
    write_trace(&dir.join("trace.csv"), system)
}

fn load_system(dir: &Path) -> Result<(NetworkParams, SystemFile)> {
    let params = load_checkpoint(&dir.join("model.ckpt"))?;
    let path = dir.join("system.json");
    let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    let file: SystemFile = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    Ok((params, file))
}

fn train_cmd(cli: &Cli, a: &TrainArgs) -> Result<()> {
    let mut cfg = experiment_config(cli)?;
    if let Some(dir) = &a.corpus {
        cfg.corpus_dir = Some(dir.clone());
    }
    if let Some(e) = a.epochs {
        cfg.training.epochs = e;
    }
    let corpus = cfg.load_corpus()?;
    let spec = SystemSpec::new(a.stream.into(), a.units.into(), a.condition.into());
    let t = Instant::now();
    let system = train_system(&corpus, &spec, &cfg)?;
    for id in &system.skipped_ids {
        warn!("skipped infeasible utterance {id}");
    }
    save_system(&a.out, &system, &cfg)?;
    let last = system.trace.last().map_or(f64::NAN, |e| e.heldout_accuracy);
    info!(
        "trained {} in {:.1}s; final heldout accuracy {:.2}%; wrote {}",
        spec.name,
        t.elapsed().as_secs_f64(),
        last,
        a.out.display()
    );
    Ok(())
}

fn write_token_lines(path: &Path, lines: &[(String, Vec<String>)]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for (id, toks) in lines {
        write!(w, "{id}")?;
        for t in toks {
            write!(w, " {t}")?;
        }
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

fn decode_cmd(cli: &Cli, a: &DecodeArgs) -> Result<()> {
    let (params, sys) = load_system(&a.model)?;
    let mut dcfg = sys.experiment.decode.clone();
    dcfg.mode = match a.mode {
        ModeArg::Greedy => DecodeMode::Greedy,
        ModeArg::Beam => DecodeMode::Beam,
        ModeArg::Wfst => DecodeMode::Wfst,
    };
    if a.lm.is_some() {
        dcfg.lm = a.lm.clone();
    }
    if let Some(b) = a.beam_width {
        dcfg.beam_width = b;
    }

    let mut lines: Vec<(String, Vec<String>)> = Vec::new();
    let mut no_path: Vec<String> = Vec::new();
    if let Some(f) = &a.features {
        let x = load_fmat(f)?;
        let y = posteriors(&params, &x)?;
        let id = f.file_stem().and_then(|s| s.to_str()).unwrap_or("utt").to_string();
        lines.push((id, greedy_decode(&y).iter().map(|u| u.to_string()).collect()));
        write_token_lines(&a.out, &lines)?;
        return Ok(());
    }
    let corpus = read_corpus(a.corpus.as_ref().expect("clap enforces --corpus or --features"))?;
    let alphabet = unit_alphabet(&corpus, sys.spec.units);
    let decoder = WordDecoder::new(&corpus, sys.spec.units, &dcfg)?;
    if dcfg.mode != DecodeMode::Greedy && decoder.is_none() {
        return Err(config_error("word decoding needs a phoneme system"));
    }
    let condition = a.snr.map_or(Condition::Clean, Condition::Snr);
    let utts = if a.all { &corpus.utterances[..] } else { corpus.heldout() };
    let seed = cli.seed.unwrap_or(sys.experiment.seed);
    for (i, u) in utts.iter().enumerate() {
        let x = system_input(u, sys.spec.stream, &sys.features, condition, seed.wrapping_add(i as u64))?;
        let y = posteriors(&params, &x)?;
        let toks = if decoder.is_none() {
            alphabet.decode_names(&greedy_decode(&y))
        } else {
            match decoder.decode(&y)? {
                Some(w) => w,
                None => {
                    warn!("{}: no complete path; writing an empty hypothesis", u.id);
                    no_path.push(u.id.clone());
                    Vec::new()
                }
            }
        };
        lines.push((u.id.clone(), toks));
    }
    write_token_lines(&a.out, &lines)?;
    if !no_path.is_empty() {
        let flag = a.out.with_extension("nopath");
        fs::write(&flag, no_path.join("\n") + "\n")?;
        warn!("{} utterances had no path; listed in {}", no_path.len(), flag.display());
    }
    info!("decoded {} utterances to {}", lines.len(), a.out.display());
    Ok(())
}

fn read_token_file(path: &Path) -> Result<BTreeMap<String, Vec<String>>> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut out = BTreeMap::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line?;
        let mut fields = line.split_whitespace();
        let Some(id) = fields.next() else { continue };
        if out.insert(id.to_string(), fields.map(str::to_string).collect()).is_some() {
            bail!(Error::Parse {
                file: path.to_path_buf(),
                line: i + 1,
                msg: format!("duplicate utterance id {id}"),
            });
        }
    }
    Ok(out)
}

#[derive(Serialize)]
struct EvalRow<'a> {
    utt: &'a str,
    substitutions: usize,
    deletions: usize,
    insertions: usize,
    reference_len: usize,
    error_rate: f64,
    accuracy: f64,
}

fn eval_cmd(a: &EvalArgs) -> Result<()> {
    let hyp = read_token_file(&a.hyp)?;
    let reference = read_token_file(&a.reference)?;
    let missing: BTreeSet<&String> = reference.keys().filter(|k| !hyp.contains_key(*k)).collect();
    let extra: BTreeSet<&String> = hyp.keys().filter(|k| !reference.contains_key(*k)).collect();
    if !missing.is_empty() || !extra.is_empty() {
        let list = |s: &BTreeSet<&String>| s.iter().map(|x| x.as_str()).collect::<Vec<_>>().join(", ");
        return Err(anyhow::Error::new(Error::Parse {
            file: a.hyp.clone(),
            line: 0,
            msg: format!(
                "utterance ids differ; missing from hypotheses: [{}]; not in references: [{}]",
                list(&missing),
                list(&extra)
            ),
        }));
    }
    let mut total = EditCounts::default();
    let mut rows = Vec::new();
    for (id, r) in &reference {
        let c = edit_counts(r, &hyp[id]);
        total = total + c;
        rows.push((id.as_str(), c));
    }
    if let Some(out) = &a.out {
        let mut w = csv::Writer::from_path(out)?;
        for (utt, c) in &rows {
            w.serialize(EvalRow {
                utt,
                substitutions: c.substitutions,
                deletions: c.deletions,
                insertions: c.insertions,
                reference_len: c.reference_len,
                error_rate: c.error_rate(),
                accuracy: c.accuracy(),
            })?;
        }
        w.flush()?;
    }
    let name = match a.metric {
        Metric::Wer => "WER",
        Metric::Acc => "accuracy",
    };
    let value = match a.metric {
        Metric::Wer => 100.0 * total.error_rate(),
        Metric::Acc => total.accuracy(),
    };
    println!(
        "utterances={} N={} S={} D={} I={} {name}={value:.2}%",
        rows.len(),
        total.reference_len,
        total.substitutions,
        total.deletions,
        total.insertions
    );
    Ok(())
}

fn matrix_cmd(cli: &Cli, out: &Path) -> Result<()> {
    let cfg = experiment_config(cli)?;
    fs::create_dir_all(out)?;
    fs::write(out.join("config.json"), cfg.to_json() + "\n")?;
    let corpus = cfg.load_corpus()?;
    let t = Instant::now();
    let csv_path = out.join("matrix.csv");
    let mut w = csv::Writer::from_path(&csv_path)?;
    let mut traces = BTreeMap::new();
    let mut skipped = BTreeMap::new();
    let (_, rows) = run_matrix(&corpus, &cfg, |system, rows| {
        for r in rows {
            w.serialize(r).map_err(|e| Error::Io(e.into()))?;
        }
        w.flush()?;
        save_system(&out.join("systems").join(&system.spec.name), system, &cfg)
            .map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
        traces.insert(system.spec.name.clone(), system.trace.clone());
        skipped.insert(system.spec.name.clone(), system.skipped_ids.clone());
        info!("{} done after {:.1}s", system.spec.name, t.elapsed().as_secs_f64());
        Ok(())
    })?;
    fs::write(out.join("matrix.svg"), render_matrix_svg(&rows))?;
    let report = RunReport {
        tool: tool_version(),
        config: cfg,
        rows,
        traces,
        skipped,
        seconds: t.elapsed().as_secs_f64(),
    };
    fs::write(out.join("report.json"), serde_json::to_string_pretty(&report)? + "\n")?;
    info!("wrote {}", out.display());
    Ok(())
}

fn align_cmd(cli: &Cli, a: &AlignArgs) -> Result<()> {
    let corpus: Corpus = read_corpus(&a.corpus)?;
    let (audio, sa) = load_system(&a.audio)?;
    let (video, sv) = load_system(&a.video)?;
    let (av, sf) = load_system(&a.av)?;
    let units = sa.spec.units;
    if sf.spec.units != units {
        return Err(config_error("the audio and audiovisual systems must share one unit inventory"));
    }
    let expect = [(&sa, Stream::Audio), (&sv, Stream::Video), (&sf, Stream::Fused)];
    for (s, stream) in expect {
        if s.spec.stream != stream {
            return Err(config_error(format!("system {} is not a {stream} system", s.spec.name)));
        }
    }
    let utts = if a.all { &corpus.utterances[..] } else { corpus.heldout() };
    let inputs = AlignmentInputs {
        audio: &audio,
        video: &video,
        av: &av,
        units,
        video_units: sv.spec.units,
    };
    // each system sees its own training pipeline; the audio one fixes context and normalization
    let analysis = analyze_alignment(&corpus, utts, &inputs, &sa.features, cli.frame_ms, a.correction)?;
    fs::create_dir_all(&a.out)?;
    write_peaks_csv(File::create(a.out.join("peaks.csv"))?, &analysis.records, &analysis.alphabet)?;
    write_report_csv(
        File::create(a.out.join("offsets_video_audio.csv"))?,
        &analysis.video_vs_audio,
        &analysis.alphabet,
    )?;
    write_report_csv(
        File::create(a.out.join("offsets_av_audio.csv"))?,
        &analysis.av_vs_audio,
        &analysis.alphabet,
    )?;
    let systems = vec![
        SystemPositions::reference("audio", analysis.video_vs_audio.units.iter().map(|u| u.unit)),
        SystemPositions::from_report("video", &analysis.video_vs_audio),
        SystemPositions::from_report("audiovisual", &analysis.av_vs_audio),
    ];
    ctcfuse::alignment::emit_alignment_svg(&a.out.join("alignment.svg"), &systems, &analysis.alphabet, cli.frame_ms)?;
    let summary = serde_json::json!({
        "tool": tool_version(),
        "averaging": "per matched occurrence",
        "frame_ms": cli.frame_ms,
        "correction_frames": a.correction,
        "video_minus_audio_frames": analysis.video_vs_audio.global_mean_frames,
        "video_minus_audio_ms": analysis.video_vs_audio.global_mean_ms(),
        "av_minus_audio_frames": analysis.av_vs_audio.global_mean_frames,
        "av_between_fraction": analysis.between_fraction,
        "unmatched": analysis.unmatched,
    });
    fs::write(a.out.join("summary.json"), serde_json::to_string_pretty(&summary)? + "\n")?;
    println!(
        "video - audio: {:.3} frames ({:.1} ms); av - audio: {:.3} frames",
        analysis.video_vs_audio.global_mean_frames,
        analysis.video_vs_audio.global_mean_ms(),
        analysis.av_vs_audio.global_mean_frames
    );
    Ok(())
}
