//! Pronunciation lexicon: `WORD unit1 unit2 …`, one pronunciation per line.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::LabelAlphabet;

/// Words get ids `1..=num_words()` in order of first appearance; 0 is
/// reserved for epsilon in transducers.
#[derive(Clone, Debug, PartialEq)]
pub struct Lexicon {
    words: Vec<String>,
    ids: HashMap<String, u32>,
    /// `(word id, unit ids)`, in input order.
    pronunciations: Vec<(u32, Vec<u32>)>,
    num_units: u32,
}

impl Lexicon {
    pub fn new<S: AsRef<str>>(entries: impl IntoIterator<Item = (S, Vec<u32>)>, num_units: u32) -> Result<Self> {
        let mut lex = Self {
            words: Vec::new(),
            ids: HashMap::new(),
            pronunciations: Vec::new(),
            num_units,
        };
        for (word, units) in entries {
            let word = word.as_ref();
            if word.is_empty() || word.contains(char::is_whitespace) {
                return Err(Error::invalid(format!("bad lexicon word {word:?}")));
            }
            if units.is_empty() {
                return Err(Error::invalid(format!("word {word:?} has an empty pronunciation")));
            }
            if let Some(&u) = units.iter().find(|&&u| u == 0 || u > num_units) {
                return Err(Error::invalid(format!("word {word:?} uses unit id {u} outside 1..={num_units}")));
            }
            let id = match lex.ids.get(word) {
                Some(&id) => id,
                None => {
                    lex.words.push(word.to_string());
                    let id = lex.words.len() as u32;
                    lex.ids.insert(word.to_string(), id);
                    id
                }
            };
            if !lex.pronunciations.iter().any(|(w, p)| *w == id && *p == units) {
                lex.pronunciations.push((id, units));
            }
        }
        if lex.pronunciations.is_empty() {
            return Err(Error::invalid("lexicon has no entries"));
        }
        Ok(lex)
    }

    pub fn num_words(&self) -> usize {
        self.words.len()
    }

    pub fn num_units(&self) -> u32 {
        self.num_units
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn word_id(&self, word: &str) -> Option<u32> {
        self.ids.get(word).copied()
    }

    pub fn word(&self, id: u32) -> Option<&str> {
        id.checked_sub(1)
            .and_then(|i| self.words.get(i as usize))
            .map(String::as_str)
    }

    pub fn pronunciations(&self) -> &[(u32, Vec<u32>)] {
        &self.pronunciations
    }

    /// Unit sequences of the given word.
    pub fn pronunciations_of(&self, word: u32) -> impl Iterator<Item = &[u32]> {
        self.pronunciations
            .iter()
            .filter(move |(w, _)| *w == word)
            .map(|(_, p)| p.as_slice())
    }

    pub fn to_text(&self, alphabet: &LabelAlphabet) -> String {
        let mut out = String::new();
        for (w, p) in &self.pronunciations {
            out.push_str(&self.words[*w as usize - 1]);
            for name in alphabet.decode_names(p) {
                out.push(' ');
                out.push_str(&name);
            }
            out.push('\n');
        }
        out
    }
}

pub fn read_lexicon<R: BufRead>(r: R, name: &Path, alphabet: &LabelAlphabet) -> Result<Lexicon> {
    let mut entries = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        let mut fields = line.split_whitespace();
        let Some(word) = fields.next() else { continue };
        if word.starts_with('#') {
            continue;
        }
        let mut units = Vec::new();
        for f in fields {
            units.push(
                alphabet
                    .id(f)
                    .ok_or_else(|| Error::parse(name, i + 1, format!("unknown unit {f:?}")))?,
            );
        }
        if units.is_empty() {
            return Err(Error::parse(name, i + 1, format!("word {word:?} has no units")));
        }
        entries.push((word.to_string(), units));
    }
    Lexicon::new(entries, alphabet.num_units() as u32).map_err(|e| Error::parse(name, 0, e.to_string()))
}

pub fn load_lexicon(path: &Path, alphabet: &LabelAlphabet) -> Result<Lexicon> {
    read_lexicon(BufReader::new(File::open(path)?), path, alphabet)
}

pub fn save_lexicon(path: &Path, lex: &Lexicon, alphabet: &LabelAlphabet) -> Result<()> {
    File::create(path)?.write_all(lex.to_text(alphabet).as_bytes())?;
    Ok(())
}

/// Prefix tree over pronunciations; node 0 is the root.
#[derive(Clone, Debug)]
pub struct LexiconTrie {
    children: Vec<BTreeMap<u32, usize>>,
    /// Words whose pronunciation ends at each node.
    complete: Vec<Vec<u32>>,
}

impl LexiconTrie {
    pub const ROOT: usize = 0;

    pub fn new(lex: &Lexicon) -> Self {
        let mut t = Self {
            children: vec![BTreeMap::new()],
            complete: vec![Vec::new()],
        };
        for (w, p) in lex.pronunciations() {
            let mut node = Self::ROOT;
            for &u in p {
                node = match t.children[node].get(&u) {
                    Some(&n) => n,
                    None => {
                        t.children.push(BTreeMap::new());
                        t.complete.push(Vec::new());
                        let n = t.children.len() - 1;
                        t.children[node].insert(u, n);
                        n
                    }
                };
            }
            if !t.complete[node].contains(w) {
                t.complete[node].push(*w);
            }
        }
        for c in &mut t.complete {
            c.sort_unstable();
        }
        t
    }

    pub fn child(&self, node: usize, unit: u32) -> Option<usize> {
        self.children[node].get(&unit).copied()
    }

    pub fn has_children(&self, node: usize) -> bool {
        !self.children[node].is_empty()
    }

    pub fn words_at(&self, node: usize) -> &[u32] {
        &self.complete[node]
    }

    pub fn num_nodes(&self) -> usize {
        self.children.len()
    }
}
