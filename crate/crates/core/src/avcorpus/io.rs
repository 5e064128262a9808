//! Corpus directory layout:
//!
//! ```text
//! audio/<utt>.fmat  video/<utt>.fmat
//! labels.txt            utt p1 p2 …
//! words.txt             utt w1 w2 …
//! segments_audio.txt    utt phoneme start end   (1-based, inclusive)
//! segments_video.txt
//! lexicon.txt           word p1 p2 …
//! lm.arpa               uniform unigram over the vocabulary
//! meta.json             generator config echo
//! ```
//!
//! Utterances are listed in `labels.txt` order.

use std::collections::HashMap;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Corpus, CorpusConfig, Segment, Utterance};
use crate::ctc::LabelSequence;
use crate::decode::{save_arpa, NGramModel};
use crate::error::{Error, Result};
use crate::features::io::{load_fmat, save_fmat};
use crate::features::{FeatureSequence, Modality};
use crate::model::LabelAlphabet;

#[derive(Serialize, Deserialize)]
struct Meta {
    generator: String,
    seed: u64,
    config: CorpusConfig,
}

fn write_lines(path: &Path, lines: impl IntoIterator<Item = String>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for l in lines {
        writeln!(w, "{l}")?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_corpus(dir: &Path, corpus: &Corpus) -> Result<()> {
    let alphabet = corpus.phonemes();
    fs::create_dir_all(dir.join("audio"))?;
    fs::create_dir_all(dir.join("video"))?;
    for u in &corpus.utterances {
        save_fmat(&dir.join("audio").join(format!("{}.fmat", u.id)), u.audio.frames())?;
        save_fmat(&dir.join("video").join(format!("{}.fmat", u.id)), u.video.frames())?;
    }
    let join = |id: &str, items: Vec<String>| {
        let mut s = id.to_string();
        for i in items {
            s.push(' ');
            s.push_str(&i);
        }
        s
    };
    write_lines(
        &dir.join("labels.txt"),
        corpus
            .utterances
            .iter()
            .map(|u| join(&u.id, alphabet.decode_names(u.phonemes.ids()))),
    )?;
    write_lines(
        &dir.join("words.txt"),
        corpus.utterances.iter().map(|u| join(&u.id, u.words.clone())),
    )?;
    for (file, video) in [("segments_audio.txt", false), ("segments_video.txt", true)] {
        let lines = corpus.utterances.iter().flat_map(|u| {
            let segs = if video { &u.video_segments } else { &u.audio_segments };
            segs.iter()
                .map(|s| format!("{} {} {} {}", u.id, alphabet.name(s.unit).unwrap_or("?"), s.start, s.end))
                .collect::<Vec<_>>()
        });
        write_lines(&dir.join(file), lines)?;
    }
    write_lines(
        &dir.join("lexicon.txt"),
        corpus.lexicon.iter().map(|(w, p)| join(w, p.clone())),
    )?;
    let words: Vec<&str> = corpus.lexicon.iter().map(|(w, _)| w.as_str()).collect();
    save_arpa(&dir.join("lm.arpa"), &NGramModel::uniform(&words)?)?;
    let meta = Meta {
        generator: format!("ctcfuse {}", env!("CARGO_PKG_VERSION")),
        seed: corpus.config.seed,
        config: corpus.config.clone(),
    };
    let json = serde_json::to_string_pretty(&meta).map_err(|e| Error::invalid(e.to_string()))?;
    fs::write(dir.join("meta.json"), json + "\n")?;
    Ok(())
}

/// `(line number, id, rest)` for every non-empty line.
fn read_table(path: &Path) -> Result<Vec<(usize, String, Vec<String>)>> {
    let f = File::open(path).map_err(|e| Error::parse(path, 0, format!("cannot open: {e}")))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line?;
        let mut fields = line.split_whitespace().map(str::to_string);
        if let Some(id) = fields.next() {
            out.push((i + 1, id, fields.collect()));
        }
    }
    Ok(out)
}

fn read_segments(path: &Path, alphabet: &LabelAlphabet) -> Result<HashMap<String, Vec<Segment>>> {
    let mut out: HashMap<String, Vec<Segment>> = HashMap::new();
    for (line, id, rest) in read_table(path)? {
        let bad = |msg: String| Error::parse(path, line, msg);
        if rest.len() != 3 {
            return Err(bad(format!("expected `utt phoneme start end`, got {} fields", rest.len() + 1)));
        }
        let unit = alphabet
            .id(&rest[0])
            .ok_or_else(|| bad(format!("unknown phoneme {:?}", rest[0])))?;
        let start: usize = rest[1].parse().map_err(|_| bad(format!("bad start frame {:?}", rest[1])))?;
        let end: usize = rest[2].parse().map_err(|_| bad(format!("bad end frame {:?}", rest[2])))?;
        if start == 0 || end < start {
            return Err(bad(format!("invalid span {start}..{end}")));
        }
        out.entry(id).or_default().push(Segment { unit, start, end });
    }
    Ok(out)
}

fn load_stream(path: &Path, modality: Modality) -> Result<FeatureSequence> {
    if !path.exists() {
        return Err(Error::parse(path, 0, "feature file is missing"));
    }
    FeatureSequence::from_frames(load_fmat(path)?, modality).map_err(|e| Error::parse(path, 0, e.to_string()))
}

pub fn read_corpus(dir: &Path) -> Result<Corpus> {
    let meta_path = dir.join("meta.json");
    let text = fs::read_to_string(&meta_path).map_err(|e| Error::parse(&meta_path, 0, format!("cannot read: {e}")))?;
    let meta: Meta = serde_json::from_str(&text).map_err(|e| Error::parse(&meta_path, e.line(), e.to_string()))?;
    let config = meta.config;
    let alphabet = config.phonemes();

    let lexicon_path = dir.join("lexicon.txt");
    let mut lexicon = Vec::new();
    for (line, word, pron) in read_table(&lexicon_path)? {
        if let Some(u) = pron.iter().find(|p| alphabet.id(p).is_none()) {
            return Err(Error::parse(&lexicon_path, line, format!("unknown phoneme {u:?}")));
        }
        lexicon.push((word, pron));
    }

    let words_path = dir.join("words.txt");
    let mut words: HashMap<String, Vec<String>> = HashMap::new();
    for (_, id, ws) in read_table(&words_path)? {
        words.insert(id, ws);
    }
    let seg_audio = read_segments(&dir.join("segments_audio.txt"), &alphabet)?;
    let seg_video = read_segments(&dir.join("segments_video.txt"), &alphabet)?;

    let labels_path = dir.join("labels.txt");
    let mut utterances = Vec::new();
    for (line, id, names) in read_table(&labels_path)? {
        let ids = alphabet
            .encode(&names)
            .map_err(|e| Error::parse(&labels_path, line, e.to_string()))?;
        let phonemes = LabelSequence::new(ids, alphabet.num_units() as u32)?;
        let missing = |file: &str| Error::parse(dir.join(file), 0, format!("no entry for utterance {id}"));
        let audio = load_stream(&dir.join("audio").join(format!("{id}.fmat")), Modality::Audio)?;
        let video = load_stream(&dir.join("video").join(format!("{id}.fmat")), Modality::Video)?;
        utterances.push(Utterance {
            words: words.remove(&id).ok_or_else(|| missing("words.txt"))?,
            audio_segments: seg_audio.get(&id).cloned().ok_or_else(|| missing("segments_audio.txt"))?,
            video_segments: seg_video.get(&id).cloned().ok_or_else(|| missing("segments_video.txt"))?,
            id,
            audio,
            video,
            phonemes,
        });
    }
    // every feature file must have a label line
    for entry in fs::read_dir(dir.join("audio"))? {
        let path = entry?.path();
        if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
            if !utterances.iter().any(|u| u.id == stem) {
                return Err(Error::parse(&labels_path, 0, format!("missing label line for utterance {stem}")));
            }
        }
    }
    Ok(Corpus {
        config,
        lexicon,
        utterances,
    })
}
