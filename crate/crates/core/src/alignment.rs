//! CTC peak extraction and cross-modality lag analysis.
//!
//! A CTC network emits each unit as a short spike surrounded by blanks. The
//! spike frame is a proxy for where the model places the unit, so comparing
//! spike frames between models trained on different modalities measures
//! their relative timing.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::avcorpus::VisemeMap;
use crate::ctc::LabelSequence;
use crate::error::{Error, Result};
use crate::model::{LabelAlphabet, Posteriorgram};

pub const DEFAULT_PEAK_THRESHOLD: f64 = 0.5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PeakRecord {
    pub utt: String,
    pub unit: u32,
    /// 1-based.
    pub peak_frame: usize,
    pub peak_prob: f64,
    /// 0-based index among this unit's peaks in the utterance.
    pub occurrence: usize,
}

/// One record per maximal run of frames where a non-blank unit's posterior
/// exceeds `threshold`, placed at the run's argmax (earliest on ties).
/// Records are sorted by `(peak_frame, unit)`.
pub fn extract_peaks(utt: &str, y: &Posteriorgram, threshold: f64) -> Result<Vec<PeakRecord>> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::invalid(format!("peak threshold {threshold} outside (0, 1)")));
    }
    let probs = y.probs();
    let mut peaks: Vec<(usize, u32, f64)> = Vec::new();
    for k in 1..y.num_classes() {
        let mut run: Option<(usize, f64)> = None;
        for t in 0..=y.num_frames() {
            let p = if t < y.num_frames() { probs[[t, k]] } else { f64::NEG_INFINITY };
            if p > threshold {
                match run {
                    Some((_, best)) if p <= best => {}
                    _ => run = Some((t, p)),
                }
            } else if let Some((frame, best)) = run.take() {
                peaks.push((frame + 1, k as u32, best));
            }
        }
    }
    peaks.sort_by_key(|&(frame, unit, _)| (frame, unit));
    let mut seen: HashMap<u32, usize> = HashMap::new();
    Ok(peaks
        .into_iter()
        .map(|(peak_frame, unit, peak_prob)| {
            let n = seen.entry(unit).or_insert(0);
            *n += 1;
            PeakRecord {
                utt: utt.to_string(),
                unit,
                peak_frame,
                peak_prob,
                occurrence: *n - 1,
            }
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatchedPair {
    pub utt: String,
    /// Unit in the first system's alphabet.
    pub unit: u32,
    /// 0-based occurrence of the matching key within the utterance.
    pub occurrence: usize,
    pub frame_a: usize,
    pub frame_b: usize,
}

impl MatchedPair {
    /// `frame_a − frame_b`.
    pub fn offset(&self) -> i64 {
        self.frame_a as i64 - self.frame_b as i64
    }

    pub fn swap(&self) -> Self {
        Self {
            frame_a: self.frame_b,
            frame_b: self.frame_a,
            ..self.clone()
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct MatchResult {
    pub pairs: Vec<MatchedPair>,
    /// Peaks on either side left without a partner.
    pub unmatched: usize,
}

/// Pairs the i-th occurrence of each key in `a` with the i-th occurrence of
/// the same key in `b`, within one utterance. With a viseme map, `a` is in
/// phoneme units, `b` in viseme units, and an `a` peak's key is its viseme
/// image; consecutive `a` peaks with the same image count once (the first),
/// as viseme targets collapse such runs. With a reference, at most as many
/// occurrences of a key are paired as the reference contains.
pub fn match_occurrences(
    a: &[PeakRecord],
    b: &[PeakRecord],
    map: Option<&VisemeMap>,
    reference: Option<&LabelSequence>,
) -> MatchResult {
    let key_a = |u: u32| map.map_or(u, |m| m.viseme_of(u));
    let mut ordered: Vec<&PeakRecord> = a.iter().collect();
    ordered.sort_by_key(|r| (r.peak_frame, r.unit));
    let mut merged = 0;
    let mut by_key_a: BTreeMap<u32, Vec<&PeakRecord>> = BTreeMap::new();
    let mut prev = None;
    for r in ordered {
        let k = key_a(r.unit);
        if map.is_some() && prev == Some(k) {
            merged += 1;
            continue;
        }
        prev = Some(k);
        by_key_a.entry(k).or_default().push(r);
    }
    let mut by_key_b: BTreeMap<u32, Vec<&PeakRecord>> = BTreeMap::new();
    for r in b {
        by_key_b.entry(r.unit).or_default().push(r);
    }
    let mut cap: Option<HashMap<u32, usize>> = None;
    if let Some(z) = reference {
        let mut c = HashMap::new();
        let mut prev = None;
        for &u in z.ids() {
            let k = key_a(u);
            if map.is_some() && prev == Some(k) {
                continue;
            }
            prev = Some(k);
            *c.entry(k).or_insert(0) += 1;
        }
        cap = Some(c);
    }

    let mut out = MatchResult {
        pairs: Vec::new(),
        unmatched: merged,
    };
    for (key, mut ra) in by_key_a {
        ra.sort_by_key(|r| r.peak_frame);
        let mut rb = by_key_b.remove(&key).unwrap_or_default();
        rb.sort_by_key(|r| r.peak_frame);
        let mut n = ra.len().min(rb.len());
        if let Some(c) = &cap {
            n = n.min(c.get(&key).copied().unwrap_or(0));
        }
        for (i, (x, y)) in ra.iter().zip(&rb).take(n).enumerate() {
            out.pairs.push(MatchedPair {
                utt: x.utt.clone(),
                unit: x.unit,
                occurrence: i,
                frame_a: x.peak_frame,
                frame_b: y.peak_frame,
            });
        }
        out.unmatched += ra.len() + rb.len() - 2 * n;
    }
    out.unmatched += by_key_b.values().map(Vec::len).sum::<usize>();
    out.pairs
        .sort_by_key(|p| (p.frame_a, p.unit, p.frame_b));
    out
}

/// [`match_occurrences`] applied per utterance; records are grouped by id.
pub fn match_corpus(
    a: &[PeakRecord],
    b: &[PeakRecord],
    map: Option<&VisemeMap>,
    references: Option<&HashMap<String, LabelSequence>>,
) -> MatchResult {
    let mut groups: BTreeMap<&str, (Vec<PeakRecord>, Vec<PeakRecord>)> = BTreeMap::new();
    for r in a {
        groups.entry(&r.utt).or_default().0.push(r.clone());
    }
    for r in b {
        groups.entry(&r.utt).or_default().1.push(r.clone());
    }
    let mut out = MatchResult::default();
    for (utt, (ra, rb)) in groups {
        let m = match_occurrences(&ra, &rb, map, references.and_then(|refs| refs.get(utt)));
        out.pairs.extend(m.pairs);
        out.unmatched += m.unmatched;
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UnitOffset {
    pub unit: u32,
    pub mean_frames: f64,
    /// Population standard deviation.
    pub std_frames: f64,
    pub count: usize,
}

/// Offsets are averaged per matched occurrence, not per utterance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OffsetReport {
    pub units: Vec<UnitOffset>,
    pub global_mean_frames: f64,
    pub global_std_frames: f64,
    pub count: usize,
    pub frame_ms: f64,
    /// Constant subtracted from every offset before aggregation.
    pub correction_frames: f64,
}

impl OffsetReport {
    pub fn global_mean_ms(&self) -> f64 {
        self.global_mean_frames * self.frame_ms
    }

    pub fn unit(&self, unit: u32) -> Option<&UnitOffset> {
        self.units.iter().find(|u| u.unit == unit)
    }
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

pub fn offset_report(pairs: &[MatchedPair], frame_ms: f64, correction_frames: f64) -> Result<OffsetReport> {
    if pairs.is_empty() {
        return Err(Error::NoMatchedPairs);
    }
    if !(frame_ms.is_finite() && frame_ms > 0.0) || !correction_frames.is_finite() {
        return Err(Error::invalid("frame_ms must be positive and the correction finite"));
    }
    let mut per_unit: BTreeMap<u32, Vec<f64>> = BTreeMap::new();
    let mut all = Vec::with_capacity(pairs.len());
    for p in pairs {
        let d = p.offset() as f64 - correction_frames;
        per_unit.entry(p.unit).or_default().push(d);
        all.push(d);
    }
    let units = per_unit
        .into_iter()
        .map(|(unit, v)| {
            let (mean_frames, std_frames) = mean_std(&v);
            UnitOffset {
                unit,
                mean_frames,
                std_frames,
                count: v.len(),
            }
        })
        .collect();
    let (global_mean_frames, global_std_frames) = mean_std(&all);
    Ok(OffsetReport {
        units,
        global_mean_frames,
        global_std_frames,
        count: all.len(),
        frame_ms,
        correction_frames,
    })
}

/// Fraction of units reported by both `between` and `outer` whose mean
/// offset in `between` lies in the closed interval spanned by 0 and the
/// mean offset in `outer`. Both reports must share a reference system.
pub fn fraction_between(between: &OffsetReport, outer: &OffsetReport) -> Option<f64> {
    let mut total = 0usize;
    let mut inside = 0usize;
    for u in &between.units {
        if let Some(o) = outer.unit(u.unit) {
            total += 1;
            let (lo, hi) = if o.mean_frames < 0.0 { (o.mean_frames, 0.0) } else { (0.0, o.mean_frames) };
            if (lo..=hi).contains(&u.mean_frames) {
                inside += 1;
            }
        }
    }
    (total > 0).then(|| inside as f64 / total as f64)
}

#[derive(Debug, Serialize, Deserialize)]
struct PeakRow {
    utt: String,
    unit: String,
    modality: String,
    occurrence: usize,
    peak_frame: usize,
    peak_prob: f64,
}

/// Writes `utt,unit,modality,occurrence,peak_frame,peak_prob`.
pub fn write_peaks_csv<W: Write>(w: W, records: &[(String, PeakRecord)], alphabet: &LabelAlphabet) -> Result<()> {
    let mut out = csv::WriterBuilder::new().has_headers(false).from_writer(w);
    out.write_record(["utt", "unit", "modality", "occurrence", "peak_frame", "peak_prob"])
        .map_err(csv_err)?;
    for (modality, r) in records {
        let unit = alphabet
            .name(r.unit)
            .ok_or_else(|| Error::invalid(format!("unit id {} outside the alphabet", r.unit)))?;
        out.serialize(PeakRow {
            utt: r.utt.clone(),
            unit: unit.to_string(),
            modality: modality.clone(),
            occurrence: r.occurrence,
            peak_frame: r.peak_frame,
            peak_prob: r.peak_prob,
        })
        .map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_peaks_csv<R: Read>(r: R, name: &Path, alphabet: &LabelAlphabet) -> Result<Vec<(String, PeakRecord)>> {
    let mut rdr = csv::Reader::from_reader(r);
    let mut out = Vec::new();
    for (i, row) in rdr.deserialize::<PeakRow>().enumerate() {
        let line = i + 2;
        let row = row.map_err(|e| Error::parse(name, line, e.to_string()))?;
        let unit = alphabet
            .id(&row.unit)
            .ok_or_else(|| Error::parse(name, line, format!("unknown unit {:?}", row.unit)))?;
        out.push((
            row.modality,
            PeakRecord {
                utt: row.utt,
                unit,
                peak_frame: row.peak_frame,
                peak_prob: row.peak_prob,
                occurrence: row.occurrence,
            },
        ));
    }
    Ok(out)
}

/// Writes `unit,mean_offset_frames,std,count`, one row per unit, then a
/// final `ALL` row for the pooled offsets.
pub fn write_report_csv<W: Write>(w: W, report: &OffsetReport, alphabet: &LabelAlphabet) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["unit", "mean_offset_frames", "std", "count"])
        .map_err(csv_err)?;
    for u in &report.units {
        let name = alphabet.name(u.unit).unwrap_or("?");
        out.write_record([
            name.to_string(),
            u.mean_frames.to_string(),
            u.std_frames.to_string(),
            u.count.to_string(),
        ])
        .map_err(csv_err)?;
    }
    out.write_record([
        "ALL".to_string(),
        report.global_mean_frames.to_string(),
        report.global_std_frames.to_string(),
        report.count.to_string(),
    ])
    .map_err(csv_err)?;
    out.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(e) => Error::Io(e),
        other => Error::invalid(format!("{other:?}")),
    }
}

/// Mean position of each unit for one system, in frames relative to a
/// shared reference system.
#[derive(Clone, Debug, PartialEq)]
pub struct SystemPositions {
    pub name: String,
    pub offsets: BTreeMap<u32, f64>,
}

impl SystemPositions {
    pub fn reference(name: &str, units: impl IntoIterator<Item = u32>) -> Self {
        Self {
            name: name.to_string(),
            offsets: units.into_iter().map(|u| (u, 0.0)).collect(),
        }
    }

    pub fn from_report(name: &str, report: &OffsetReport) -> Self {
        Self {
            name: name.to_string(),
            offsets: report.units.iter().map(|u| (u.unit, u.mean_frames)).collect(),
        }
    }
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

/// One row per unit, one mark per system on a shared millisecond axis.
pub fn render_alignment_svg(systems: &[SystemPositions], alphabet: &LabelAlphabet, frame_ms: f64) -> String {
    let mut units: Vec<u32> = systems.iter().flat_map(|s| s.offsets.keys().copied()).collect();
    units.sort_unstable();
    units.dedup();
    let values: Vec<f64> = systems
        .iter()
        .flat_map(|s| s.offsets.values().map(|v| v * frame_ms))
        .collect();
    let span = values.iter().fold(frame_ms, |m, v| m.max(v.abs())) * 1.1;

    let (left, right, top, row_h) = (70.0, 30.0, 40.0, 22.0);
    let plot_w = 480.0;
    let width = left + plot_w + right;
    let height = top + row_h * units.len().max(1) as f64 + 60.0;
    let x = |ms: f64| left + (ms + span) / (2.0 * span) * plot_w;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{width:.0}" height="{height:.0}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let axis_y = top + row_h * units.len().max(1) as f64;
    let _ = writeln!(
        s,
        r##"<line x1="{:.2}" y1="{top:.2}" x2="{:.2}" y2="{axis_y:.2}" stroke="#999" stroke-dasharray="3,3"/>"##,
        x(0.0),
        x(0.0)
    );
    let _ = writeln!(
        s,
        r#"<line x1="{left:.2}" y1="{axis_y:.2}" x2="{:.2}" y2="{axis_y:.2}" stroke="black"/>"#,
        left + plot_w
    );
    for i in -2..=2 {
        let ms = span * i as f64 / 2.0;
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{ms:.0}</text>"#,
            x(ms),
            axis_y + 14.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">mean peak position relative to {} (ms)</text>"#,
        left + plot_w / 2.0,
        axis_y + 32.0,
        systems.first().map_or("reference", |s| s.name.as_str())
    );
    for (row, &u) in units.iter().enumerate() {
        let y = top + row_h * (row as f64 + 0.5);
        let name = alphabet.name(u).unwrap_or("?");
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{name}</text>"#,
            left - 8.0,
            y + 4.0
        );
        for (i, sys) in systems.iter().enumerate() {
            if let Some(v) = sys.offsets.get(&u) {
                let _ = writeln!(
                    s,
                    r#"<circle class="mark" data-system="{}" data-unit="{name}" cx="{:.2}" cy="{y:.2}" r="4" fill="{}" fill-opacity="0.8"/>"#,
                    sys.name,
                    x(v * frame_ms),
                    PALETTE[i % PALETTE.len()]
                );
            }
        }
    }
    for (i, sys) in systems.iter().enumerate() {
        let lx = left + 110.0 * i as f64;
        let _ = writeln!(
            s,
            r#"<circle cx="{:.2}" cy="16" r="4" fill="{}"/><text x="{:.2}" y="20">{}</text>"#,
            lx,
            PALETTE[i % PALETTE.len()],
            lx + 8.0,
            sys.name
        );
    }
    s.push_str("</svg>\n");
    s
}

pub fn emit_alignment_svg(path: &Path, systems: &[SystemPositions], alphabet: &LabelAlphabet, frame_ms: f64) -> Result<()> {
    fs::write(path, render_alignment_svg(systems, alphabet, frame_ms))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::avcorpus::VisemeMap;
    use ndarray::Array2;
    use proptest::prelude::*;

    fn one_hot(path: &[u32], k1: usize) -> Posteriorgram {
        let mut m = Array2::zeros((path.len(), k1));
        for (t, &u) in path.iter().enumerate() {
            m[[t, u as usize]] = 1.0;
        }
        Posteriorgram::from_probs(m).unwrap()
    }

    fn rec(unit: u32, frame: usize) -> PeakRecord {
        PeakRecord {
            utt: "u".into(),
            unit,
            peak_frame: frame,
            peak_prob: 0.9,
            occurrence: 0,
        }
    }

    #[test]
    fn peak_at_run_argmax_earliest_on_ties() {
        let mut m = Array2::zeros((14, 3));
        for t in 0..14 {
            m[[t, 0]] = 1.0;
        }
        for (t, p) in [(9, 0.8), (10, 0.6), (11, 0.4)] {
            m[[t, 1]] = p;
            m[[t, 0]] = 1.0 - p;
        }
        for t in [3, 4] {
            m[[t, 2]] = 0.7;
            m[[t, 0]] = 0.3;
        }
        let y = Posteriorgram::from_probs(m).unwrap();
        let peaks = extract_peaks("x", &y, 0.5).unwrap();
        assert_eq!(peaks.len(), 2);
        assert_eq!((peaks[0].unit, peaks[0].peak_frame), (2, 4));
        assert_eq!((peaks[1].unit, peaks[1].peak_frame), (1, 10));
        assert_eq!(peaks[1].peak_prob, 0.8);
    }

    #[test]
    fn all_blank_gives_no_peaks() {
        let y = one_hot(&[0; 7], 4);
        assert!(extract_peaks("x", &y, 0.5).unwrap().is_empty());
        assert!(extract_peaks("x", &y, 1.0).is_err());
    }

    #[test]
    fn occurrences_count_per_unit() {
        let y = one_hot(&[1, 0, 2, 0, 1, 1, 0, 1], 3);
        let p = extract_peaks("x", &y, 0.5).unwrap();
        let got: Vec<(u32, usize, usize)> = p.iter().map(|r| (r.unit, r.peak_frame, r.occurrence)).collect();
        assert_eq!(got, vec![(1, 1, 0), (2, 3, 0), (1, 5, 1), (1, 8, 2)]);
    }

    #[test]
    fn gold_path_peaks_land_in_gold_segments() {
        // segments (unit, start, end), 1-based inclusive; each spikes at its middle
        let segs = [(1u32, 1usize, 4usize), (3, 5, 7), (2, 8, 12), (3, 13, 15), (1, 16, 20)];
        let mut path = vec![0u32; 20];
        for &(u, s, e) in &segs {
            path[(s + e) / 2 - 1] = u;
        }
        let peaks = extract_peaks("g", &one_hot(&path, 4), 0.5).unwrap();
        assert_eq!(peaks.len(), segs.len());
        for (p, &(u, s, e)) in peaks.iter().zip(&segs) {
            assert_eq!(p.unit, u);
            assert!((s..=e).contains(&p.peak_frame));
        }
    }

    #[test]
    fn injected_lag_is_recovered_exactly() {
        let lag = 3usize;
        let audio: Vec<u32> = [0, 0, 0, 0, 1, 0, 0, 2, 0, 0, 1, 0, 0, 3, 0, 0, 0, 0].to_vec();
        // video spikes `lag` frames earlier
        let mut video = audio[lag..].to_vec();
        video.extend(vec![0; lag]);
        let a = extract_peaks("u", &one_hot(&audio, 4), 0.5).unwrap();
        let v = extract_peaks("u", &one_hot(&video, 4), 0.5).unwrap();
        let m = match_occurrences(&v, &a, None, None);
        assert_eq!(m.unmatched, 0);
        let r = offset_report(&m.pairs, 100.0 / 3.0, 0.0).unwrap();
        assert_eq!(r.global_mean_frames, -(lag as f64));
        assert_eq!(r.global_std_frames, 0.0);
        assert!(r.units.iter().all(|u| u.mean_frames == -(lag as f64)));
    }

    #[test]
    fn identical_and_shifted_lists() {
        let a = vec![rec(1, 2), rec(2, 5), rec(1, 9)];
        let m = match_occurrences(&a, &a, None, None);
        assert_eq!(m.pairs.len(), 3);
        assert!(m.pairs.iter().all(|p| p.offset() == 0));
        let b: Vec<PeakRecord> = a.iter().map(|r| rec(r.unit, r.peak_frame + 3)).collect();
        assert!(match_occurrences(&a, &b, None, None).pairs.iter().all(|p| p.offset() == -3));
    }

    #[test]
    fn unmatched_occurrences_are_counted() {
        let a = vec![rec(1, 2), rec(2, 5), rec(1, 9)];
        let b = vec![rec(1, 3), rec(3, 6)];
        let m = match_occurrences(&a, &b, None, None);
        assert_eq!(m.pairs.len(), 1);
        assert_eq!((m.pairs[0].frame_a, m.pairs[0].frame_b), (2, 3));
        assert_eq!(m.unmatched, 3);
        let z = LabelSequence::new(vec![2], 3).unwrap();
        let capped = match_occurrences(&a, &a, None, Some(&z));
        assert_eq!(capped.pairs.len(), 1);
        assert_eq!(capped.unmatched, 4);
    }

    #[test]
    fn viseme_matching_follows_image_order() {
        // phonemes 1..=5; {1,2} -> viseme 1, {3} -> 2, {4,5} -> 3
        let ph = LabelAlphabet::from_names(&["p", "b", "t", "a", "o"]).unwrap();
        let map = VisemeMap::from_groups(
            &ph,
            &[("V1", vec!["p", "b"]), ("V2", vec!["t"]), ("V3", vec!["a", "o"])],
        )
        .unwrap();
        // phoneme peaks: p@2 a@4 b@7 t@9 o@12
        let a = vec![rec(1, 2), rec(4, 4), rec(2, 7), rec(3, 9), rec(5, 12)];
        // viseme peaks: V1@1 V3@3 V1@6 V3@11
        let b = vec![rec(1, 1), rec(3, 3), rec(1, 6), rec(3, 11)];
        let m = match_occurrences(&a, &b, Some(&map), None);
        let got: Vec<(u32, usize, i64)> = m.pairs.iter().map(|p| (p.unit, p.occurrence, p.offset())).collect();
        // hand enumeration: V1 images are p, b; V3 images are a, o; t has no partner
        assert_eq!(got, vec![(1, 0, 1), (4, 0, 1), (2, 1, 1), (5, 1, 1)]);
        assert_eq!(m.unmatched, 1);
    }

    #[test]
    fn consecutive_phonemes_sharing_a_viseme_count_once() {
        let ph = LabelAlphabet::from_names(&["p", "b", "a"]).unwrap();
        let map = VisemeMap::from_groups(&ph, &[("V1", vec!["p", "b"]), ("V2", vec!["a"])]).unwrap();
        // phonemes p@3 b@5 a@8 p@10; visemes V1@1 V2@6 V1@8
        let a = vec![rec(1, 3), rec(2, 5), rec(3, 8), rec(1, 10)];
        let b = vec![rec(1, 1), rec(2, 6), rec(1, 8)];
        let z = LabelSequence::new(vec![1, 2, 3, 1], 3).unwrap();
        let m = match_occurrences(&a, &b, Some(&map), Some(&z));
        let got: Vec<(u32, i64)> = m.pairs.iter().map(|p| (p.unit, p.offset())).collect();
        assert_eq!(got, vec![(1, 2), (3, 2), (1, 2)]);
        assert_eq!(m.unmatched, 1);
    }

    #[test]
    fn report_arithmetic_and_correction() {
        let pairs = vec![MatchedPair {
            utt: "u".into(),
            unit: 1,
            occurrence: 0,
            frame_a: 4,
            frame_b: 7,
        }];
        let r = offset_report(&pairs, 100.0 / 3.0, 0.0).unwrap();
        assert!((r.global_mean_ms() + 100.0).abs() < 1e-12);
        assert!(matches!(offset_report(&[], 33.3, 0.0), Err(Error::NoMatchedPairs)));

        let pairs: Vec<MatchedPair> = [-1i64, -3, -2, -4, -2]
            .iter()
            .enumerate()
            .map(|(i, &d)| MatchedPair {
                utt: "u".into(),
                unit: 1 + (i % 2) as u32,
                occurrence: i,
                frame_a: (10 + d) as usize,
                frame_b: 10,
            })
            .collect();
        let raw = offset_report(&pairs, 10.0, 0.0).unwrap();
        assert!((raw.global_mean_frames + 2.4).abs() < 1e-12);
        let centred = offset_report(&pairs, 10.0, raw.global_mean_frames).unwrap();
        assert!(centred.global_mean_frames.abs() <= raw.global_std_frames / (pairs.len() as f64).sqrt());
        assert_eq!(raw.unit(1).unwrap().count, 3);
        assert!((raw.unit(2).unwrap().std_frames - 0.5).abs() < 1e-12);
    }

    #[test]
    fn between_fraction() {
        let mk = |v: &[(u32, f64)]| OffsetReport {
            units: v
                .iter()
                .map(|&(unit, m)| UnitOffset {
                    unit,
                    mean_frames: m,
                    std_frames: 0.0,
                    count: 1,
                })
                .collect(),
            global_mean_frames: 0.0,
            global_std_frames: 0.0,
            count: v.len(),
            frame_ms: 1.0,
            correction_frames: 0.0,
        };
        let video = mk(&[(1, -3.0), (2, -2.0), (3, -1.0)]);
        let av = mk(&[(1, -1.5), (2, 0.5), (3, -1.0)]);
        assert_eq!(fraction_between(&av, &video), Some(2.0 / 3.0));
    }

    #[test]
    fn peak_csv_round_trip() {
        let ab = LabelAlphabet::from_names(&["p", "t", "a"]).unwrap();
        let records = vec![
            ("audio".to_string(), PeakRecord { utt: "utt1".into(), unit: 1, peak_frame: 4, peak_prob: 0.731_058_578_630_004_9, occurrence: 0 }),
            ("video".to_string(), PeakRecord { utt: "utt1".into(), unit: 3, peak_frame: 2, peak_prob: 1.0, occurrence: 1 }),
        ];
        let mut buf = Vec::new();
        write_peaks_csv(&mut buf, &records, &ab).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("utt,unit,modality,occurrence,peak_frame,peak_prob\n"));
        assert_eq!(read_peaks_csv(buf.as_slice(), Path::new("p.csv"), &ab).unwrap(), records);

        let mut empty = Vec::new();
        write_peaks_csv(&mut empty, &[], &ab).unwrap();
        assert_eq!(String::from_utf8(empty).unwrap(), "utt,unit,modality,occurrence,peak_frame,peak_prob\n");
    }

    #[test]
    fn report_csv_has_header_and_pooled_row() {
        let ab = LabelAlphabet::from_names(&["p", "t"]).unwrap();
        let pairs = vec![
            MatchedPair { utt: "u".into(), unit: 2, occurrence: 0, frame_a: 3, frame_b: 6 },
            MatchedPair { utt: "u".into(), unit: 1, occurrence: 0, frame_a: 5, frame_b: 7 },
        ];
        let r = offset_report(&pairs, 10.0, 0.0).unwrap();
        let mut buf = Vec::new();
        write_report_csv(&mut buf, &r, &ab).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "unit,mean_offset_frames,std,count\np,-2,0,1\nt,-3,0,1\nALL,-2.5,0.5,2\n"
        );
    }

    #[test]
    fn svg_has_one_mark_per_unit_per_system() {
        let ab = LabelAlphabet::from_names(&["p", "t", "a", "o"]).unwrap();
        let video = SystemPositions {
            name: "video".into(),
            offsets: [(1, -3.0), (2, -2.5), (3, -3.5), (4, -2.0)].into_iter().collect(),
        };
        let av = SystemPositions {
            name: "audiovisual".into(),
            offsets: [(1, -1.0), (2, -1.5), (3, -0.5), (4, -1.0)].into_iter().collect(),
        };
        let systems = vec![SystemPositions::reference("audio", 1..=4), video, av];
        let svg = render_alignment_svg(&systems, &ab, 100.0 / 3.0);
        assert_eq!(svg.matches(r#"class="mark""#).count(), 12);
        for s in ["audio", "video", "audiovisual"] {
            assert_eq!(svg.matches(&format!(r#"data-system="{s}""#)).count(), 4);
        }
        assert!(svg.starts_with("<svg") && svg.ends_with("</svg>\n"));
    }

    fn records() -> impl Strategy<Value = Vec<PeakRecord>> {
        proptest::collection::vec((1u32..=4, 1usize..60), 0..12)
            .prop_map(|v| v.into_iter().map(|(u, f)| rec(u, f)).collect())
    }

    proptest! {
        #[test]
        fn swapping_negates_offsets(a in records(), b in records()) {
            let ab = match_occurrences(&a, &b, None, None);
            let ba = match_occurrences(&b, &a, None, None);
            prop_assert_eq!(ab.unmatched, ba.unmatched);
            let mut x: Vec<(u32, usize, i64)> = ab.pairs.iter().map(|p| (p.unit, p.occurrence, -p.offset())).collect();
            let mut y: Vec<(u32, usize, i64)> = ba.pairs.iter().map(|p| (p.unit, p.occurrence, p.offset())).collect();
            x.sort_unstable();
            y.sort_unstable();
            prop_assert_eq!(x, y);
            for p in &ab.pairs {
                prop_assert_eq!(p.swap().offset(), -p.offset());
            }
        }

        #[test]
        fn lowering_threshold_keeps_peak_frames(
            spikes in proptest::collection::vec((1u32..=3, 0.6f64..0.99), 1..6),
            low in 0.05f64..0.55,
        ) {
            // isolated spikes separated by blank frames
            let t = spikes.len() * 2 + 1;
            let mut m = Array2::zeros((t, 4));
            for row in 0..t {
                m[[row, 0]] = 1.0;
            }
            for (i, &(u, p)) in spikes.iter().enumerate() {
                let f = 2 * i + 1;
                m[[f, u as usize]] = p;
                m[[f, 0]] = 1.0 - p;
            }
            let y = Posteriorgram::from_probs(m).unwrap();
            let hi = extract_peaks("x", &y, 0.59).unwrap();
            let lo = extract_peaks("x", &y, low.min(0.5)).unwrap();
            let fh: Vec<usize> = hi.iter().map(|r| r.peak_frame).collect();
            let fl: Vec<usize> = lo.iter().filter(|r| r.peak_prob > 0.59).map(|r| r.peak_frame).collect();
            prop_assert_eq!(fh, fl);
        }
    }
}
