//! Back-off n-gram models in ARPA format (log10 weights).

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const SENTENCE_START: &str = "<s>";
pub const SENTENCE_END: &str = "</s>";
pub const UNKNOWN_WORD: &str = "<unk>";

#[derive(Clone, Copy, Debug, PartialEq)]
struct Entry {
    log10_prob: f64,
    log10_backoff: f64,
}

/// Back-off n-gram model. Words are interned; ids index `vocab()`.
#[derive(Clone, Debug, PartialEq)]
pub struct NGramModel {
    order: usize,
    vocab: Vec<String>,
    ids: HashMap<String, u32>,
    entries: HashMap<Vec<u32>, Entry>,
}

impl NGramModel {
    /// Builds a model from `(words, log10 prob, log10 backoff)` triples.
    ///
    /// Checks: probabilities ≤ 0, every n-gram's context is itself an
    /// entry, and the sentence markers are in the vocabulary.
    pub fn from_entries<S: AsRef<str>>(entries: impl IntoIterator<Item = (Vec<S>, f64, f64)>) -> Result<Self> {
        let mut model = Self {
            order: 0,
            vocab: Vec::new(),
            ids: HashMap::new(),
            entries: HashMap::new(),
        };
        for (words, p, bo) in entries {
            if words.is_empty() {
                return Err(Error::invalid("empty n-gram"));
            }
            if !(p <= 0.0) || !bo.is_finite() {
                return Err(Error::invalid(format!(
                    "n-gram {:?}: log10 probability must be <= 0 and backoff finite",
                    words.iter().map(|w| w.as_ref()).collect::<Vec<_>>()
                )));
            }
            let key: Vec<u32> = words.iter().map(|w| model.intern(w.as_ref())).collect();
            model.order = model.order.max(key.len());
            model.entries.insert(
                key,
                Entry {
                    log10_prob: p,
                    log10_backoff: bo,
                },
            );
        }
        if model.entries.is_empty() {
            return Err(Error::invalid("language model has no n-grams"));
        }
        for key in model.entries.keys() {
            if key.len() > 1 && !model.entries.contains_key(&key[..key.len() - 1]) {
                return Err(Error::invalid(format!(
                    "context of n-gram {:?} has no entry",
                    model.words_of(key)
                )));
            }
        }
        for marker in [SENTENCE_START, SENTENCE_END] {
            if !model.ids.contains_key(marker) {
                return Err(Error::invalid(format!("vocabulary lacks {marker}")));
            }
        }
        Ok(model)
    }

    /// Uniform unigram model over `words` plus the sentence markers.
    pub fn uniform<S: AsRef<str>>(words: &[S]) -> Result<Self> {
        let n = words.len() + 1;
        let p = -(n as f64).log10();
        let mut entries: Vec<(Vec<String>, f64, f64)> = words.iter().map(|w| (vec![w.as_ref().to_string()], p, 0.0)).collect();
        entries.push((vec![SENTENCE_END.to_string()], p, 0.0));
        entries.push((vec![SENTENCE_START.to_string()], -99.0, 0.0));
        Self::from_entries(entries)
    }

    fn intern(&mut self, w: &str) -> u32 {
        if let Some(&id) = self.ids.get(w) {
            return id;
        }
        let id = self.vocab.len() as u32;
        self.vocab.push(w.to_string());
        self.ids.insert(w.to_string(), id);
        id
    }

    fn words_of(&self, key: &[u32]) -> Vec<&str> {
        key.iter().map(|&i| self.vocab[i as usize].as_str()).collect()
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn vocab(&self) -> &[String] {
        &self.vocab
    }

    pub fn id(&self, word: &str) -> Option<u32> {
        self.ids.get(word).copied()
    }

    pub fn word(&self, id: u32) -> &str {
        &self.vocab[id as usize]
    }

    /// Number of n-grams of each order, index 0 = unigrams.
    pub fn counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.order];
        for k in self.entries.keys() {
            c[k.len() - 1] += 1;
        }
        c
    }

    /// `(log10 prob, log10 backoff)` of an explicit n-gram.
    pub fn entry(&self, key: &[u32]) -> Option<(f64, f64)> {
        self.entries.get(key).map(|e| (e.log10_prob, e.log10_backoff))
    }

    pub fn contains(&self, key: &[u32]) -> bool {
        self.entries.contains_key(key)
    }

    pub fn ngrams(&self) -> impl Iterator<Item = (&[u32], f64, f64)> {
        self.entries.iter().map(|(k, e)| (k.as_slice(), e.log10_prob, e.log10_backoff))
    }

    /// log10 P(word | history) with standard back-off. Only the last
    /// `order - 1` history words matter. Out-of-vocabulary words fall back
    /// to `<unk>` when present, otherwise the result is `-inf`.
    pub fn log10_prob_ids(&self, history: &[u32], word: u32) -> f64 {
        let start = history.len().saturating_sub(self.order.saturating_sub(1));
        let mut h = &history[start..];
        let mut penalty = 0.0;
        let mut key: Vec<u32> = Vec::with_capacity(self.order);
        loop {
            key.clear();
            key.extend_from_slice(h);
            key.push(word);
            if let Some(e) = self.entries.get(&key) {
                return penalty + e.log10_prob;
            }
            if h.is_empty() {
                return f64::NEG_INFINITY;
            }
            if let Some(e) = self.entries.get(h) {
                penalty += e.log10_backoff;
            }
            h = &h[1..];
        }
    }

    pub fn log10_prob(&self, history: &[&str], word: &str) -> f64 {
        let Some(w) = self.lookup(word) else {
            return f64::NEG_INFINITY;
        };
        // an unknown history word breaks every context that contains it
        let mut ids = Vec::with_capacity(history.len());
        for h in history {
            match self.lookup(h) {
                Some(id) => ids.push(id),
                None => ids.clear(),
            }
        }
        self.log10_prob_ids(&ids, w)
    }

    fn lookup(&self, word: &str) -> Option<u32> {
        self.id(word).or_else(|| self.id(UNKNOWN_WORD))
    }

    /// log10 probability of `<s> words </s>`.
    pub fn sentence_log10_prob<S: AsRef<str>>(&self, words: &[S]) -> f64 {
        let mut history: Vec<&str> = vec![SENTENCE_START];
        let mut total = 0.0;
        for w in words {
            total += self.log10_prob(&history, w.as_ref());
            history.push(w.as_ref());
        }
        total + self.log10_prob(&history, SENTENCE_END)
    }

    /// Renders the model as ARPA text; n-grams sorted by order then words.
    pub fn to_arpa(&self) -> String {
        let mut by_order: BTreeMap<usize, Vec<(Vec<&str>, Entry)>> = BTreeMap::new();
        for (k, e) in &self.entries {
            by_order.entry(k.len()).or_default().push((self.words_of(k), *e));
        }
        let mut out = String::from("\n\\data\\\n");
        for (n, list) in &by_order {
            let _ = writeln!(out, "ngram {n}={}", list.len());
        }
        for (n, list) in by_order.iter_mut() {
            list.sort_by(|a, b| a.0.cmp(&b.0));
            let _ = write!(out, "\n\\{n}-grams:\n");
            for (words, e) in list.iter() {
                let _ = write!(out, "{}\t{}", e.log10_prob, words.join(" "));
                if *n < self.order {
                    let _ = write!(out, "\t{}", e.log10_backoff);
                }
                out.push('\n');
            }
        }
        out.push_str("\n\\end\\\n");
        out
    }
}

/// Parses ARPA text. `name` labels errors.
pub fn read_arpa<R: BufRead>(r: R, name: &Path) -> Result<NGramModel> {
    #[derive(PartialEq)]
    enum Section {
        Preamble,
        Data,
        Grams(usize),
        End,
    }
    let mut section = Section::Preamble;
    let mut declared: BTreeMap<usize, usize> = BTreeMap::new();
    let mut seen: BTreeMap<usize, usize> = BTreeMap::new();
    let mut entries: Vec<(Vec<String>, f64, f64)> = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        let bad = |msg: String| Error::parse(name, lineno, msg);
        let text = line.trim();
        if text.is_empty() {
            continue;
        }
        if text == "\\data\\" {
            section = Section::Data;
            continue;
        }
        if text == "\\end\\" {
            section = Section::End;
            continue;
        }
        if let Some(n) = text.strip_prefix('\\').and_then(|s| s.strip_suffix("-grams:")) {
            let n: usize = n.parse().map_err(|_| bad(format!("bad section header {text:?}")))?;
            if !declared.contains_key(&n) {
                return Err(bad(format!("section for undeclared order {n}")));
            }
            section = Section::Grams(n);
            continue;
        }
        match section {
            Section::Preamble | Section::End => {}
            Section::Data => {
                let spec = text
                    .strip_prefix("ngram ")
                    .ok_or_else(|| bad(format!("expected `ngram N=count`, got {text:?}")))?;
                let (n, c) = spec
                    .split_once('=')
                    .ok_or_else(|| bad(format!("expected `ngram N=count`, got {text:?}")))?;
                let n: usize = n.trim().parse().map_err(|_| bad(format!("bad order in {text:?}")))?;
                let c: usize = c.trim().parse().map_err(|_| bad(format!("bad count in {text:?}")))?;
                if n == 0 {
                    return Err(bad("order must be >= 1".into()));
                }
                declared.insert(n, c);
            }
            Section::Grams(n) => {
                let fields: Vec<&str> = text.split_whitespace().collect();
                if fields.len() != n + 1 && fields.len() != n + 2 {
                    return Err(bad(format!("expected {n} words plus weights, got {} fields", fields.len())));
                }
                let p: f64 = fields[0]
                    .parse()
                    .map_err(|_| bad(format!("bad log10 probability {:?}", fields[0])))?;
                let bo: f64 = if fields.len() == n + 2 {
                    fields[n + 1]
                        .parse()
                        .map_err(|_| bad(format!("bad backoff weight {:?}", fields[n + 1])))?
                } else {
                    0.0
                };
                let words = fields[1..=n].iter().map(|s| s.to_string()).collect();
                entries.push((words, p, bo));
                *seen.entry(n).or_default() += 1;
            }
        }
    }
    if section != Section::End {
        return Err(Error::parse(name, 0, "missing \\end\\ marker"));
    }
    for (n, c) in &declared {
        let got = seen.get(n).copied().unwrap_or(0);
        if got != *c {
            return Err(Error::parse(name, 0, format!("header declares {c} {n}-grams, found {got}")));
        }
    }
    NGramModel::from_entries(entries).map_err(|e| Error::parse(name, 0, e.to_string()))
}

pub fn load_arpa(path: &Path) -> Result<NGramModel> {
    read_arpa(BufReader::new(File::open(path)?), path)
}

pub fn save_arpa(path: &Path, lm: &NGramModel) -> Result<()> {
    let mut f = File::create(path)?;
    f.write_all(lm.to_arpa().as_bytes())?;
    Ok(())
}
