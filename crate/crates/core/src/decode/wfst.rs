//! Weighted transducers over the tropical semiring (weights are costs,
//! `-ln p`; paths add, alternatives take the minimum).
//!
//! Label 0 is epsilon on both tapes. Back-off arcs in grammars carry the
//! failure label [`PHI`]: during composition a failure arc is followed
//! only when the current state has no arc for the requested symbol, which
//! reproduces back-off n-gram scoring exactly.

use std::collections::{BTreeMap, VecDeque};
use std::fmt::Debug;
use std::hash::Hash;

use log::warn;

use super::arpa::{NGramModel, SENTENCE_END, SENTENCE_START, UNKNOWN_WORD};
use super::lexicon::Lexicon;
use super::Hypothesis;
use crate::error::{Error, Result};
use crate::model::{LabelAlphabet, Posteriorgram};

pub const EPS: u32 = 0;
pub const PHI: u32 = u32::MAX;

const LN_10: f64 = std::f64::consts::LN_10;
/// Per-state relaxation cap in label-correcting searches; exceeding it
/// means a negative-weight cycle.
const MAX_RELAXATIONS: usize = 100_000;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Arc<S> {
    pub ilabel: u32,
    pub olabel: u32,
    pub weight: f64,
    pub next: S,
}

pub trait Wfst: Sync {
    type State: Copy + Eq + Ord + Hash + Debug + Send + Sync;

    fn start(&self) -> Self::State;

    fn final_weight(&self, s: Self::State) -> Option<f64>;

    /// Appends every arc leaving `s` to `out`.
    fn arcs(&self, s: Self::State, out: &mut Vec<Arc<Self::State>>);

    /// Appends the arcs leaving `s` with input label `ilabel`.
    fn arcs_matching(&self, s: Self::State, ilabel: u32, out: &mut Vec<Arc<Self::State>>) {
        let mut all = Vec::new();
        self.arcs(s, &mut all);
        out.extend(all.into_iter().filter(|a| a.ilabel == ilabel));
    }

    /// Input labels are `0..num_input_symbols()`, 0 being epsilon.
    fn num_input_symbols(&self) -> usize;

    fn num_output_symbols(&self) -> usize;
}

impl<T: Wfst> Wfst for &T {
    type State = T::State;

    fn start(&self) -> Self::State {
        (**self).start()
    }

    fn final_weight(&self, s: Self::State) -> Option<f64> {
        (**self).final_weight(s)
    }

    fn arcs(&self, s: Self::State, out: &mut Vec<Arc<Self::State>>) {
        (**self).arcs(s, out)
    }

    fn arcs_matching(&self, s: Self::State, ilabel: u32, out: &mut Vec<Arc<Self::State>>) {
        (**self).arcs_matching(s, ilabel, out)
    }

    fn num_input_symbols(&self) -> usize {
        (**self).num_input_symbols()
    }

    fn num_output_symbols(&self) -> usize {
        (**self).num_output_symbols()
    }
}

/// Explicit transducer. Arcs of each state are kept sorted by input label.
#[derive(Clone, Debug, PartialEq)]
pub struct DecodeGraph {
    start: u32,
    arcs: Vec<Vec<Arc<u32>>>,
    finals: Vec<Option<f64>>,
    isyms: usize,
    osyms: usize,
}

impl DecodeGraph {
    /// Graph with a single non-final start state.
    pub fn new(num_input_symbols: usize, num_output_symbols: usize) -> Self {
        Self {
            start: 0,
            arcs: vec![Vec::new()],
            finals: vec![None],
            isyms: num_input_symbols.max(1),
            osyms: num_output_symbols.max(1),
        }
    }

    pub fn add_state(&mut self) -> u32 {
        self.arcs.push(Vec::new());
        self.finals.push(None);
        (self.arcs.len() - 1) as u32
    }

    pub fn set_start(&mut self, s: u32) -> Result<()> {
        self.check_state(s)?;
        self.start = s;
        Ok(())
    }

    pub fn set_final(&mut self, s: u32, weight: f64) -> Result<()> {
        self.check_state(s)?;
        if !weight.is_finite() {
            return Err(Error::invalid(format!("final weight of state {s} is not finite")));
        }
        self.finals[s as usize] = Some(weight);
        Ok(())
    }

    pub fn add_arc(&mut self, from: u32, ilabel: u32, olabel: u32, weight: f64, to: u32) -> Result<()> {
        self.check_state(from)?;
        self.check_state(to)?;
        if !weight.is_finite() {
            return Err(Error::invalid(format!("arc weight {weight} is not finite")));
        }
        let phi_ok = ilabel == PHI && olabel == PHI;
        if !phi_ok && (ilabel as usize >= self.isyms || olabel as usize >= self.osyms) {
            return Err(Error::invalid(format!(
                "arc labels {ilabel}:{olabel} outside {}:{}",
                self.isyms, self.osyms
            )));
        }
        let list = &mut self.arcs[from as usize];
        let at = list.partition_point(|a| a.ilabel <= ilabel);
        list.insert(
            at,
            Arc {
                ilabel,
                olabel,
                weight,
                next: to,
            },
        );
        Ok(())
    }

    fn check_state(&self, s: u32) -> Result<()> {
        if (s as usize) < self.arcs.len() {
            Ok(())
        } else {
            Err(Error::invalid(format!("state {s} does not exist")))
        }
    }

    pub fn num_states(&self) -> usize {
        self.arcs.len()
    }

    pub fn num_arcs(&self) -> usize {
        self.arcs.iter().map(Vec::len).sum()
    }

    pub fn state_arcs(&self, s: u32) -> &[Arc<u32>] {
        &self.arcs[s as usize]
    }

    /// Checks that at least one state is final.
    pub fn validate(&self) -> Result<()> {
        if self.finals.iter().all(Option::is_none) {
            return Err(Error::invalid("graph has no final state"));
        }
        Ok(())
    }

    /// Multiplies every arc and final weight by `factor`.
    pub fn scale_weights(&mut self, factor: f64) {
        for a in self.arcs.iter_mut().flatten() {
            a.weight *= factor;
        }
        for w in self.finals.iter_mut().flatten() {
            *w *= factor;
        }
    }

    /// Straight-line acceptor of `labels` (each label on both tapes).
    pub fn linear_acceptor(labels: &[u32], num_symbols: usize) -> Result<Self> {
        let mut g = Self::new(num_symbols, num_symbols);
        let mut s = g.start;
        for &l in labels {
            let n = g.add_state();
            g.add_arc(s, l, l, 0.0, n)?;
            s = n;
        }
        g.set_final(s, 0.0)?;
        Ok(g)
    }

    /// One-state acceptor copying every non-epsilon symbol at zero cost.
    pub fn identity(num_symbols: usize) -> Self {
        let mut g = Self::new(num_symbols, num_symbols);
        for l in 1..num_symbols as u32 {
            g.add_arc(0, l, l, 0.0, 0).expect("labels in range");
        }
        g.set_final(0, 0.0).expect("finite");
        g
    }
}

impl Wfst for DecodeGraph {
    type State = u32;

    fn start(&self) -> u32 {
        self.start
    }

    fn final_weight(&self, s: u32) -> Option<f64> {
        self.finals[s as usize]
    }

    fn arcs(&self, s: u32, out: &mut Vec<Arc<u32>>) {
        out.extend_from_slice(&self.arcs[s as usize]);
    }

    fn arcs_matching(&self, s: u32, ilabel: u32, out: &mut Vec<Arc<u32>>) {
        let list = &self.arcs[s as usize];
        let lo = list.partition_point(|a| a.ilabel < ilabel);
        let hi = list.partition_point(|a| a.ilabel <= ilabel);
        out.extend_from_slice(&list[lo..hi]);
    }

    fn num_input_symbols(&self) -> usize {
        self.isyms
    }

    fn num_output_symbols(&self) -> usize {
        self.osyms
    }
}

/// On-demand composition `a ∘ b`; states are pairs and nothing is cached,
/// so the value is immutable and shareable across threads. Failure arcs
/// are honoured on `b` only.
#[derive(Clone, Debug)]
pub struct ComposeFst<A, B> {
    a: A,
    b: B,
}

impl<A: Wfst, B: Wfst> ComposeFst<A, B> {
    pub fn new(a: A, b: B) -> Result<Self> {
        if a.num_output_symbols() != b.num_input_symbols() {
            return Err(Error::AlphabetMismatch {
                left: a.num_output_symbols(),
                right: b.num_input_symbols(),
            });
        }
        Ok(Self { a, b })
    }

    /// Arcs of `b` reachable from `s` that read `label`, following failure
    /// arcs while no direct match exists. Returns the accumulated failure
    /// cost with the matches.
    fn match_b(&self, mut s: B::State, label: u32, out: &mut Vec<(f64, Arc<B::State>)>) {
        let mut cost = 0.0;
        let mut found = Vec::new();
        for _ in 0..MAX_RELAXATIONS {
            found.clear();
            self.b.arcs_matching(s, label, &mut found);
            if !found.is_empty() {
                out.extend(found.drain(..).map(|a| (cost, a)));
                return;
            }
            self.b.arcs_matching(s, PHI, &mut found);
            match found.first() {
                Some(phi) => {
                    cost += phi.weight;
                    s = phi.next;
                }
                None => return,
            }
        }
    }
}

impl<A: Wfst, B: Wfst> Wfst for ComposeFst<A, B> {
    type State = (A::State, B::State);

    fn start(&self) -> Self::State {
        (self.a.start(), self.b.start())
    }

    fn final_weight(&self, (sa, sb): Self::State) -> Option<f64> {
        Some(self.a.final_weight(sa)? + self.b.final_weight(sb)?)
    }

    fn arcs(&self, (sa, sb): Self::State, out: &mut Vec<Arc<Self::State>>) {
        let mut a_arcs = Vec::new();
        self.a.arcs(sa, &mut a_arcs);
        let mut matches = Vec::new();
        for x in a_arcs {
            if x.olabel == EPS {
                out.push(Arc {
                    ilabel: x.ilabel,
                    olabel: EPS,
                    weight: x.weight,
                    next: (x.next, sb),
                });
                continue;
            }
            matches.clear();
            self.match_b(sb, x.olabel, &mut matches);
            for (extra, y) in matches.drain(..) {
                out.push(Arc {
                    ilabel: x.ilabel,
                    olabel: y.olabel,
                    weight: x.weight + extra + y.weight,
                    next: (x.next, y.next),
                });
            }
        }
        let mut b_eps = Vec::new();
        self.b.arcs_matching(sb, EPS, &mut b_eps);
        for y in b_eps {
            out.push(Arc {
                ilabel: EPS,
                olabel: y.olabel,
                weight: y.weight,
                next: (sa, y.next),
            });
        }
    }

    fn num_input_symbols(&self) -> usize {
        self.a.num_input_symbols()
    }

    fn num_output_symbols(&self) -> usize {
        self.b.num_output_symbols()
    }
}

/// Expands the reachable part of any transducer into a [`DecodeGraph`].
pub fn materialize<F: Wfst>(f: &F) -> Result<DecodeGraph> {
    let mut g = DecodeGraph::new(f.num_input_symbols(), f.num_output_symbols());
    let mut ids: BTreeMap<F::State, u32> = BTreeMap::new();
    let mut queue = VecDeque::new();
    ids.insert(f.start(), 0);
    queue.push_back(f.start());
    let mut arcs = Vec::new();
    while let Some(s) = queue.pop_front() {
        let from = ids[&s];
        if let Some(w) = f.final_weight(s) {
            g.set_final(from, w)?;
        }
        arcs.clear();
        f.arcs(s, &mut arcs);
        for a in arcs.drain(..) {
            let to = match ids.get(&a.next) {
                Some(&id) => id,
                None => {
                    let id = g.add_state();
                    ids.insert(a.next, id);
                    queue.push_back(a.next);
                    id
                }
            };
            g.add_arc(from, a.ilabel, a.olabel, a.weight, to)?;
        }
    }
    Ok(g)
}

/// Eager composition of two explicit graphs.
pub fn compose(a: &DecodeGraph, b: &DecodeGraph) -> Result<DecodeGraph> {
    materialize(&ComposeFst::new(a, b)?)
}

/// Lowest-cost complete path.
#[derive(Clone, Debug, PartialEq)]
pub struct ShortestPath {
    pub weight: f64,
    pub ilabels: Vec<u32>,
    pub olabels: Vec<u32>,
}

/// Label-correcting shortest path; epsilons are dropped from the label
/// strings. Failure arcs are ordinary arcs here.
pub fn shortest_path<F: Wfst>(f: &F) -> Result<ShortestPath> {
    // per state: cost, relaxation count, back-pointer (state, ilabel, olabel)
    type Back<S> = Option<(S, u32, u32)>;
    let mut best: BTreeMap<F::State, (f64, usize, Back<F::State>)> = BTreeMap::new();
    let mut queue = VecDeque::new();
    best.insert(f.start(), (0.0, 0, None));
    queue.push_back(f.start());
    let mut arcs = Vec::new();
    while let Some(s) = queue.pop_front() {
        let cost = best[&s].0;
        arcs.clear();
        f.arcs(s, &mut arcs);
        for a in &arcs {
            let c = cost + a.weight;
            let entry = best.entry(a.next).or_insert((f64::INFINITY, 0, None));
            if c < entry.0 {
                entry.1 += 1;
                if entry.1 > MAX_RELAXATIONS {
                    return Err(Error::invalid("negative-weight cycle in graph"));
                }
                *entry = (c, entry.1, Some((s, a.ilabel, a.olabel)));
                queue.push_back(a.next);
            }
        }
    }
    let mut end = None;
    for (s, (c, _, _)) in &best {
        if let Some(fw) = f.final_weight(*s) {
            let total = c + fw;
            if end.is_none_or(|(_, b)| total < b) {
                end = Some((*s, total));
            }
        }
    }
    let (mut s, weight) = end.ok_or(Error::NoPathFound)?;
    let (mut ilabels, mut olabels) = (Vec::new(), Vec::new());
    while let Some((prev, i, o)) = best[&s].2 {
        if i != EPS && i != PHI {
            ilabels.push(i);
        }
        if o != EPS && o != PHI {
            olabels.push(o);
        }
        s = prev;
    }
    ilabels.reverse();
    olabels.reverse();
    Ok(ShortestPath {
        weight,
        ilabels,
        olabels,
    })
}

/// CTC token transducer. Input label `l + 1` reads frame label `l`
/// (blank is frame label 0); output labels are unit ids. State 0 means
/// "after blank or at start", state `k` means "unit `k` just emitted".
pub fn build_token_fst(alphabet: &LabelAlphabet) -> DecodeGraph {
    let k = alphabet.num_units() as u32;
    let mut g = DecodeGraph::new(k as usize + 2, k as usize + 1);
    for _ in 0..k {
        g.add_state();
    }
    for s in 0..=k {
        g.add_arc(s, 1, EPS, 0.0, 0).expect("valid");
        for u in 1..=k {
            let out = if s == u { EPS } else { u };
            g.add_arc(s, u + 1, out, 0.0, u).expect("valid");
        }
        g.set_final(s, 0.0).expect("finite");
    }
    g
}

/// Lexicon transducer: one unit chain per pronunciation, emitting the
/// word on its first unit and returning to the start (final) state.
pub fn build_lexicon_fst(lex: &Lexicon) -> DecodeGraph {
    let mut g = DecodeGraph::new(lex.num_units() as usize + 1, lex.num_words() + 1);
    g.set_final(0, 0.0).expect("finite");
    for (w, pron) in lex.pronunciations() {
        let mut s = 0;
        for (i, &u) in pron.iter().enumerate() {
            let out = if i == 0 { *w } else { EPS };
            let to = if i + 1 == pron.len() { 0 } else { g.add_state() };
            g.add_arc(s, u, out, 0.0, to).expect("valid");
            s = to;
        }
    }
    g
}

/// Grammar acceptor over lexicon word ids with failure back-off arcs.
/// States are LM histories; the final weight of a history is its exact
/// end-of-sentence cost. Lexicon words unknown to the LM map to `<unk>`
/// when the model has it; LM words missing from the lexicon are dropped.
pub fn build_grammar_fst(lm: &NGramModel, lex: &Lexicon) -> Result<DecodeGraph> {
    let start_id = lm.id(SENTENCE_START).expect("validated");
    let end_id = lm.id(SENTENCE_END).expect("validated");
    let unk = lm.id(UNKNOWN_WORD);
    // lm id -> lexicon word ids that it scores
    let mut readers: BTreeMap<u32, Vec<u32>> = BTreeMap::new();
    for (i, w) in lex.words().iter().enumerate() {
        match lm.id(w).or(unk) {
            Some(id) => readers.entry(id).or_default().push(i as u32 + 1),
            None => warn!("lexicon word {w:?} is not in the language model and has no <unk> fallback"),
        }
    }
    for w in lm.vocab() {
        if ![SENTENCE_START, SENTENCE_END, UNKNOWN_WORD].contains(&w.as_str()) && lex.word_id(w).is_none() {
            warn!("language model word {w:?} is missing from the lexicon; dropped from the grammar");
        }
    }

    let max_history = lm.order().saturating_sub(1);
    let mut histories: Vec<Vec<u32>> = vec![Vec::new()];
    for (k, _, _) in lm.ngrams() {
        let usable = k.len() <= max_history
            && !k.contains(&end_id)
            && k.iter().skip(1).all(|&w| w != start_id)
            && k.iter().all(|&w| w == start_id || readers.contains_key(&w));
        if usable {
            histories.push(k.to_vec());
        }
    }
    histories.sort();
    let mut g = DecodeGraph::new(lex.num_words() + 1, lex.num_words() + 1);
    let mut state_of: BTreeMap<Vec<u32>, u32> = BTreeMap::new();
    for (i, h) in histories.iter().enumerate() {
        let s = if i == 0 { 0 } else { g.add_state() };
        state_of.insert(h.clone(), s);
    }
    let resolve = |mut h: &[u32]| -> u32 {
        if h.len() > max_history {
            h = &h[h.len() - max_history..];
        }
        loop {
            if let Some(&s) = state_of.get(h) {
                return s;
            }
            h = &h[1..];
        }
    };
    g.set_start(resolve(&[start_id]))?;
    for h in &histories {
        let from = state_of[h];
        let mut key = h.clone();
        for (&lm_word, words) in &readers {
            key.truncate(h.len());
            key.push(lm_word);
            if let Some((p, _)) = lm.entry(&key) {
                let to = resolve(&key);
                for &w in words {
                    g.add_arc(from, w, w, -LN_10 * p, to)?;
                }
            }
        }
        if !h.is_empty() {
            let bo = lm.entry(h).map_or(0.0, |e| e.1);
            g.add_arc(from, PHI, PHI, -LN_10 * bo, resolve(&h[1..]))?;
        }
        let end = lm.log10_prob_ids(h, end_id);
        if end.is_finite() {
            g.set_final(from, -LN_10 * end)?;
        }
    }
    g.validate()?;
    Ok(g)
}

/// Token, lexicon and (optional) grammar transducers, composed on demand
/// during decoding.
#[derive(Clone, Debug)]
pub struct TlgDecoder {
    pub token: DecodeGraph,
    pub lexicon: DecodeGraph,
    pub grammar: Option<DecodeGraph>,
}

impl TlgDecoder {
    /// `lm_weight` scales every grammar cost.
    pub fn new(alphabet: &LabelAlphabet, lex: &Lexicon, lm: Option<&NGramModel>, lm_weight: f64) -> Result<Self> {
        if lex.num_units() as usize != alphabet.num_units() {
            return Err(Error::AlphabetMismatch {
                left: alphabet.num_units(),
                right: lex.num_units() as usize,
            });
        }
        let grammar = match lm {
            Some(lm) => {
                let mut g = build_grammar_fst(lm, lex)?;
                g.scale_weights(lm_weight);
                Some(g)
            }
            None => None,
        };
        Ok(Self {
            token: build_token_fst(alphabet),
            lexicon: build_lexicon_fst(lex),
            grammar,
        })
    }

    pub fn decode(&self, y: &Posteriorgram, acoustic_scale: f64, beam: f64) -> Result<Hypothesis> {
        let tl = ComposeFst::new(&self.token, &self.lexicon)?;
        match &self.grammar {
            Some(g) => viterbi_decode_pruned(&ComposeFst::new(tl, g)?, y, acoustic_scale, beam),
            None => viterbi_decode_pruned(&tl, y, acoustic_scale, beam),
        }
    }
}

/// Exact Viterbi search; see [`viterbi_decode_pruned`].
pub fn viterbi_decode<F: Wfst>(g: &F, y: &Posteriorgram, acoustic_scale: f64) -> Result<Hypothesis> {
    viterbi_decode_pruned(g, y, acoustic_scale, f64::INFINITY)
}

struct Token {
    cost: f64,
    trace: usize,
}

const NO_TRACE: usize = usize::MAX;

/// Frame-synchronous shortest path through `g` where reading input label
/// `l + 1` at frame `t` costs `-acoustic_scale * ln y[t][l]`. Tokens more
/// than `beam` above the frame's best are dropped. The hypothesis score is
/// the negated total cost; `words` holds the non-epsilon output labels.
pub fn viterbi_decode_pruned<F: Wfst>(g: &F, y: &Posteriorgram, acoustic_scale: f64, beam: f64) -> Result<Hypothesis> {
    if !(acoustic_scale > 0.0) {
        return Err(Error::invalid("acoustic scale must be positive"));
    }
    if !(beam > 0.0) {
        return Err(Error::invalid("beam must be positive"));
    }
    if g.num_input_symbols() != y.num_classes() + 1 {
        return Err(Error::AlphabetMismatch {
            left: y.num_classes() + 1,
            right: g.num_input_symbols(),
        });
    }
    // (parent trace, output label)
    let mut traces: Vec<(usize, u32)> = Vec::new();
    let mut tokens: BTreeMap<F::State, Token> = BTreeMap::new();
    tokens.insert(
        g.start(),
        Token {
            cost: 0.0,
            trace: NO_TRACE,
        },
    );
    epsilon_closure(g, &mut tokens, &mut traces)?;
    let mut arcs = Vec::new();
    for t in 0..y.num_frames() {
        let mut next: BTreeMap<F::State, Token> = BTreeMap::new();
        for (&s, tok) in &tokens {
            arcs.clear();
            g.arcs(s, &mut arcs);
            for a in &arcs {
                if a.ilabel == EPS || a.ilabel == PHI {
                    continue;
                }
                let lp = y.log_prob(t, a.ilabel as usize - 1);
                if lp == f64::NEG_INFINITY {
                    continue;
                }
                let cost = tok.cost + a.weight - acoustic_scale * lp;
                relax(&mut next, &mut traces, a.next, cost, tok.trace, a.olabel);
            }
        }
        prune(&mut next, beam);
        epsilon_closure(g, &mut next, &mut traces)?;
        prune(&mut next, beam);
        if next.is_empty() {
            return Err(Error::NoPathFound);
        }
        tokens = next;
    }
    let mut end: Option<(f64, usize)> = None;
    for (&s, tok) in &tokens {
        if let Some(fw) = g.final_weight(s) {
            let total = tok.cost + fw;
            if end.is_none_or(|(b, _)| total < b) {
                end = Some((total, tok.trace));
            }
        }
    }
    let (cost, mut tr) = end.ok_or(Error::NoPathFound)?;
    let mut words = Vec::new();
    while tr != NO_TRACE {
        let (parent, label) = traces[tr];
        words.push(label);
        tr = parent;
    }
    words.reverse();
    Ok(Hypothesis {
        units: Vec::new(),
        words,
        score: -cost,
    })
}

fn relax<S: Ord>(map: &mut BTreeMap<S, Token>, traces: &mut Vec<(usize, u32)>, s: S, cost: f64, parent: usize, olabel: u32) -> bool {
    if map.get(&s).is_some_and(|t| t.cost <= cost) {
        return false;
    }
    let trace = if olabel == EPS || olabel == PHI {
        parent
    } else {
        traces.push((parent, olabel));
        traces.len() - 1
    };
    map.insert(s, Token { cost, trace });
    true
}

fn prune<S: Ord>(map: &mut BTreeMap<S, Token>, beam: f64) {
    if beam.is_infinite() {
        return;
    }
    let best = map.values().map(|t| t.cost).fold(f64::INFINITY, f64::min);
    map.retain(|_, t| t.cost <= best + beam);
}

fn epsilon_closure<F: Wfst>(g: &F, tokens: &mut BTreeMap<F::State, Token>, traces: &mut Vec<(usize, u32)>) -> Result<()> {
    let mut queue: VecDeque<F::State> = tokens.keys().copied().collect();
    let mut arcs = Vec::new();
    let mut relaxations = 0usize;
    while let Some(s) = queue.pop_front() {
        let (cost, trace) = {
            let t = &tokens[&s];
            (t.cost, t.trace)
        };
        arcs.clear();
        g.arcs_matching(s, EPS, &mut arcs);
        for a in &arcs {
            if relax(tokens, traces, a.next, cost + a.weight, trace, a.olabel) {
                relaxations += 1;
                if relaxations > MAX_RELAXATIONS * 10 {
                    return Err(Error::invalid("negative-weight epsilon cycle in graph"));
                }
                queue.push_back(a.next);
            }
        }
    }
    Ok(())
}
