//! Connectionist temporal classification: blank-augmented forward-backward
//! in the log domain, the loss gradient with respect to pre-softmax logits,
//! and exhaustive-enumeration oracles for small instances.
//!
//! Index 0 is the blank everywhere. Units are `1..=K`.

use std::collections::HashMap;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::model::Posteriorgram;

pub const BLANK: u32 = 0;

/// Limit on the number of paths enumerated by the brute-force oracles.
pub const ENUMERATION_LIMIT: f64 = 1e7;

/// `log(exp(a) + exp(b))`, exact at `-inf`.
#[inline]
pub fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

pub fn log_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    values.into_iter().fold(f64::NEG_INFINITY, log_add)
}

/// Non-empty target sequence of unit ids in `1..=K`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct LabelSequence {
    ids: Vec<u32>,
    num_units: u32,
}

impl LabelSequence {
    pub fn new(ids: Vec<u32>, num_units: u32) -> Result<Self> {
        if ids.is_empty() {
            return Err(Error::invalid("label sequence must contain at least one unit"));
        }
        if let Some(bad) = ids.iter().find(|&&id| id == BLANK || id > num_units) {
            return Err(Error::invalid(format!(
                "unit id {bad} outside 1..={num_units}"
            )));
        }
        Ok(Self { ids, num_units })
    }

    pub fn ids(&self) -> &[u32] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn num_units(&self) -> u32 {
        self.num_units
    }

    pub fn adjacent_repeats(&self) -> usize {
        self.ids.windows(2).filter(|w| w[0] == w[1]).count()
    }

    /// Fewest frames any path collapsing to this sequence can have.
    pub fn min_frames(&self) -> usize {
        self.len() + self.adjacent_repeats()
    }

    /// `b, z1, b, z2, ..., zU, b`.
    pub fn augmented(&self) -> AugmentedLabels {
        let mut ids = Vec::with_capacity(2 * self.len() + 1);
        ids.push(BLANK);
        for &z in &self.ids {
            ids.push(z);
            ids.push(BLANK);
        }
        AugmentedLabels { ids }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AugmentedLabels {
    ids: Vec<u32>,
}

impl AugmentedLabels {
    pub fn ids(&self) -> &[u32] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Whether position `s` may be entered directly from `s - 2`.
    fn can_skip(&self, s: usize) -> bool {
        s >= 2 && self.ids[s] != BLANK && self.ids[s] != self.ids[s - 2]
    }
}

/// Log-domain α and β lattices, `(2U+1) x T`.
///
/// Convention: `log_alpha[s][t]` includes the emission at frame `t`,
/// `log_beta[s][t]` covers frames `t+1..T` only. With this split
/// `Σ_s α_t(s)·β_t(s) = P(z|X)` holds at every `t` with no correction term.
#[derive(Clone, Debug)]
pub struct ForwardBackwardTable {
    pub log_alpha: Array2<f64>,
    pub log_beta: Array2<f64>,
    pub log_likelihood: f64,
    labels: AugmentedLabels,
}

impl ForwardBackwardTable {
    pub fn labels(&self) -> &AugmentedLabels {
        &self.labels
    }

    pub fn num_frames(&self) -> usize {
        self.log_alpha.ncols()
    }

    /// Correction subtracted from `log_alpha + log_beta` before summing a
    /// time slice. Zero under this table's convention.
    pub fn slice_correction(&self, _s: usize, _t: usize) -> f64 {
        0.0
    }

    /// `log Σ_s α_t(s) β_t(s)`; equals `log_likelihood` for every `t`.
    pub fn time_slice_log_likelihood(&self, t: usize) -> f64 {
        log_sum((0..self.labels.len()).map(|s| {
            self.log_alpha[[s, t]] + self.log_beta[[s, t]] - self.slice_correction(s, t)
        }))
    }
}

/// `Π_t y_t[p_t]`, accumulated in the log domain.
pub fn path_probability(y: &Posteriorgram, path: &[u32]) -> Result<f64> {
    if path.len() != y.num_frames() {
        return Err(Error::LengthMismatch {
            expected: y.num_frames(),
            got: path.len(),
        });
    }
    let k1 = y.num_classes();
    let mut log_p = 0.0;
    for (t, &label) in path.iter().enumerate() {
        if label as usize >= k1 {
            return Err(Error::invalid(format!("label {label} outside 0..{k1}")));
        }
        log_p += y.log_prob(t, label as usize);
    }
    Ok(log_p.exp())
}

/// Merges adjacent repeats, then drops blanks.
pub fn collapse(path: &[u32]) -> Vec<u32> {
    let mut out = Vec::new();
    let mut prev = None;
    for &p in path {
        if Some(p) != prev && p != BLANK {
            out.push(p);
        }
        prev = Some(p);
    }
    out
}

fn check_feasible(z: &LabelSequence, frames: usize) -> Result<()> {
    if frames < z.min_frames() {
        return Err(Error::InfeasibleLabelSequence {
            labels: z.len(),
            repeats: z.adjacent_repeats(),
            frames,
        });
    }
    Ok(())
}

fn check_alphabet(y: &Posteriorgram, z: &LabelSequence) -> Result<()> {
    if z.ids().iter().any(|&id| id as usize >= y.num_classes()) {
        return Err(Error::DimensionMismatch {
            expected: y.num_classes(),
            got: z.num_units() as usize + 1,
        });
    }
    Ok(())
}

/// Runs forward-backward; returns `-log P(z|X)` and the lattices.
pub fn ctc_loss(y: &Posteriorgram, z: &LabelSequence) -> Result<(f64, ForwardBackwardTable)> {
    check_alphabet(y, z)?;
    let t_len = y.num_frames();
    check_feasible(z, t_len)?;
    let labels = z.augmented();
    let s_len = labels.len();
    let emit = |s: usize, t: usize| y.log_prob(t, labels.ids[s] as usize);

    let mut alpha = Array2::from_elem((s_len, t_len), f64::NEG_INFINITY);
    alpha[[0, 0]] = emit(0, 0);
    alpha[[1, 0]] = emit(1, 0);
    for t in 1..t_len {
        for s in 0..s_len {
            let mut acc = alpha[[s, t - 1]];
            if s >= 1 {
                acc = log_add(acc, alpha[[s - 1, t - 1]]);
            }
            if labels.can_skip(s) {
                acc = log_add(acc, alpha[[s - 2, t - 1]]);
            }
            if acc > f64::NEG_INFINITY {
                alpha[[s, t]] = acc + emit(s, t);
            }
        }
    }

    let mut beta = Array2::from_elem((s_len, t_len), f64::NEG_INFINITY);
    beta[[s_len - 1, t_len - 1]] = 0.0;
    beta[[s_len - 2, t_len - 1]] = 0.0;
    for t in (0..t_len - 1).rev() {
        for s in 0..s_len {
            let mut acc = beta[[s, t + 1]] + emit(s, t + 1);
            if s + 1 < s_len {
                acc = log_add(acc, beta[[s + 1, t + 1]] + emit(s + 1, t + 1));
            }
            if s + 2 < s_len && labels.can_skip(s + 2) {
                acc = log_add(acc, beta[[s + 2, t + 1]] + emit(s + 2, t + 1));
            }
            beta[[s, t]] = acc;
        }
    }

    let log_likelihood = log_add(alpha[[s_len - 1, t_len - 1]], alpha[[s_len - 2, t_len - 1]]);
    if !log_likelihood.is_finite() {
        // every path has a zero-probability frame
        return Err(Error::invalid("target has zero probability under the posteriorgram"));
    }
    let table = ForwardBackwardTable {
        log_alpha: alpha,
        log_beta: beta,
        log_likelihood,
        labels,
    };
    Ok((-log_likelihood, table))
}

/// Occupation probabilities `γ_t(s)`, shaped `(2U+1) x T`; each column sums to 1.
pub fn unit_posteriors(y: &Posteriorgram, z: &LabelSequence, table: &ForwardBackwardTable) -> Result<Array2<f64>> {
    if table.labels != z.augmented() || table.num_frames() != y.num_frames() {
        return Err(Error::CacheMismatch);
    }
    let mut gamma = &table.log_alpha + &table.log_beta;
    gamma.mapv_inplace(|v| (v - table.log_likelihood).exp());
    Ok(gamma)
}

/// Gradient of `-log P(z|X)` with respect to the pre-softmax logits that
/// produced `y`: `y_t(k) - Σ_{s: l_s = k} γ_t(s)`.
pub fn ctc_grad(y: &Posteriorgram, z: &LabelSequence) -> Result<(f64, Array2<f64>)> {
    let (loss, table) = ctc_loss(y, z)?;
    let gamma = unit_posteriors(y, z, &table)?;
    let mut grad = y.probs().clone();
    for (s, &label) in table.labels.ids.iter().enumerate() {
        for t in 0..y.num_frames() {
            grad[[t, label as usize]] -= gamma[[s, t]];
        }
    }
    Ok((loss, grad))
}

/// Exact marginal over every frame path: `P(z|X) = Σ_{p: collapse(p)=z} P(p|X)`.
pub fn brute_force_likelihood(y: &Posteriorgram, z: &LabelSequence) -> Result<f64> {
    check_alphabet(y, z)?;
    let dist = brute_force_distribution(y)?;
    Ok(dist.get(z.ids()).copied().unwrap_or(0.0))
}

/// Probability of every collapsed output (including the empty one),
/// by enumerating all `(K+1)^T` paths.
pub fn brute_force_distribution(y: &Posteriorgram) -> Result<HashMap<Vec<u32>, f64>> {
    let k1 = y.num_classes();
    let t_len = y.num_frames();
    let paths = (k1 as f64).powi(t_len as i32);
    if paths > ENUMERATION_LIMIT {
        return Err(Error::InstanceTooLarge {
            paths,
            limit: ENUMERATION_LIMIT,
        });
    }
    let mut out: HashMap<Vec<u32>, f64> = HashMap::new();
    let mut path = vec![0u32; t_len];
    loop {
        let p: f64 = path
            .iter()
            .enumerate()
            .map(|(t, &l)| y.probs()[[t, l as usize]])
            .product();
        *out.entry(collapse(&path)).or_insert(0.0) += p;
        // odometer increment
        let mut i = t_len;
        loop {
            if i == 0 {
                return Ok(out);
            }
            i -= 1;
            path[i] += 1;
            if (path[i] as usize) < k1 {
                break;
            }
            path[i] = 0;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use num_rational::Ratio;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn post(p: Array2<f64>) -> Posteriorgram {
        Posteriorgram::from_probs(p).unwrap()
    }

    fn random_logits(t: usize, k1: usize, rng: &mut impl Rng) -> Array2<f64> {
        Array2::from_shape_fn((t, k1), |_| rng.gen_range(-3.0..3.0))
    }

    fn lab(ids: &[u32], k: u32) -> LabelSequence {
        LabelSequence::new(ids.to_vec(), k).unwrap()
    }

    #[test]
    fn single_factor_path() {
        let y = post(array![[0.4, 0.6]]);
        assert!((path_probability(&y, &[1]).unwrap() - 0.6).abs() < 1e-15);
        assert!(matches!(path_probability(&y, &[1, 0]), Err(Error::LengthMismatch { .. })));
    }

    #[test]
    fn uniform_paths_are_equiprobable() {
        let y = post(Array2::from_elem((3, 2), 0.5));
        for code in 0..8u32 {
            let path: Vec<u32> = (0..3).map(|b| (code >> b) & 1).collect();
            assert!((path_probability(&y, &path).unwrap() - 0.125).abs() < 1e-15);
        }
    }

    #[test]
    fn path_probability_matches_rational_product() {
        // dyadic entries are exact in binary floating point
        let rows = [[1u64, 4, 3], [4, 2, 2], [1, 1, 6]];
        let y = post(Array2::from_shape_fn((3, 3), |(t, k)| rows[t][k] as f64 / 8.0));
        for path in [[0u32, 1, 2], [2, 2, 2], [1, 0, 1]] {
            let exact = path
                .iter()
                .enumerate()
                .fold(Ratio::from_integer(1u64), |acc, (t, &l)| acc * Ratio::new(rows[t][l as usize], 8));
            let want = *exact.numer() as f64 / *exact.denom() as f64;
            let got = path_probability(&y, &path).unwrap();
            assert!((got - want).abs() <= 1e-15 * want, "{path:?}");
        }
    }

    #[test]
    fn collapse_examples() {
        assert_eq!(collapse(&[0, 1, 1, 0]), vec![1]);
        assert_eq!(collapse(&[1, 0, 1]), vec![1, 1]);
        assert_eq!(collapse(&[0, 0, 0]), Vec::<u32>::new());
    }

    #[test]
    fn one_frame_loss() {
        let y = post(array![[0.4, 0.6]]);
        let (loss, _) = ctc_loss(&y, &lab(&[1], 1)).unwrap();
        assert!((loss + 0.6f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn two_frame_uniform_loss() {
        let y = post(Array2::from_elem((2, 2), 0.5));
        let (loss, _) = ctc_loss(&y, &lab(&[1], 1)).unwrap();
        assert!(((-loss).exp() - 0.75).abs() < 1e-12);
        assert!((brute_force_likelihood(&y, &lab(&[1], 1)).unwrap() - 0.75).abs() < 1e-12);
    }

    #[test]
    fn repeated_label_needs_a_separator() {
        let y = post(Array2::from_elem((2, 2), 0.5));
        assert!(matches!(
            ctc_loss(&y, &lab(&[1, 1], 1)),
            Err(Error::InfeasibleLabelSequence { .. })
        ));
        let y3 = post(Array2::from_elem((3, 2), 0.5));
        assert!(ctc_loss(&y3, &lab(&[1, 1], 1)).is_ok());
    }

    #[test]
    fn one_frame_gradient_closed_form() {
        let logits = array![[0.3, -0.2]];
        let y = Posteriorgram::from_logits(&logits).unwrap();
        let (_, g) = ctc_grad(&y, &lab(&[1], 1)).unwrap();
        assert!((g[[0, 0]] - y.probs()[[0, 0]]).abs() < 1e-15);
        assert!((g[[0, 1]] - (y.probs()[[0, 1]] - 1.0)).abs() < 1e-15);
    }

    #[test]
    fn occupation_examples() {
        let y = post(array![[0.4, 0.6]]);
        let z = lab(&[1], 1);
        let (_, table) = ctc_loss(&y, &z).unwrap();
        let gamma = unit_posteriors(&y, &z, &table).unwrap();
        assert!((gamma[[1, 0]] - 1.0).abs() < 1e-12);
        assert!(gamma[[0, 0]].abs() < 1e-12 && gamma[[2, 0]].abs() < 1e-12);

        // expected number of frames emitting `a`: paths aa, ab, ba equally likely -> 4/3
        let y = post(Array2::from_elem((2, 2), 0.5));
        let (_, table) = ctc_loss(&y, &z).unwrap();
        let gamma = unit_posteriors(&y, &z, &table).unwrap();
        let expected_a: f64 = gamma.row(1).sum();
        assert!((expected_a - 4.0 / 3.0).abs() < 1e-12);

        let other = lab(&[1, 1], 1);
        let y3 = post(Array2::from_elem((3, 2), 0.5));
        assert!(matches!(unit_posteriors(&y3, &other, &table), Err(Error::CacheMismatch)));
    }

    #[test]
    fn appending_a_pure_blank_frame_keeps_likelihood() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let y = Posteriorgram::from_logits(&random_logits(5, 4, &mut rng)).unwrap();
        let z = lab(&[2, 3], 3);
        let (loss, _) = ctc_loss(&y, &z).unwrap();
        let mut probs = y.probs().clone();
        probs.push_row(array![1.0, 0.0, 0.0, 0.0].view()).unwrap();
        let (loss2, _) = ctc_loss(&post(probs), &z).unwrap();
        assert!((loss - loss2).abs() < 1e-12);
    }

    #[test]
    fn total_probability_over_all_outputs_is_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for t in 1..=4 {
            let y = Posteriorgram::from_logits(&random_logits(t, 3, &mut rng)).unwrap();
            let dist = brute_force_distribution(&y).unwrap();
            let total: f64 = dist.values().sum();
            assert!((total - 1.0).abs() < 1e-12);
            // the non-empty part agrees with forward-backward
            for (labels, p) in &dist {
                if labels.is_empty() {
                    continue;
                }
                let (loss, _) = ctc_loss(&y, &lab(labels, 2)).unwrap();
                assert!(((-loss).exp() - p).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn enumeration_guard() {
        let y = post(Array2::from_elem((12, 4), 0.25));
        assert!(matches!(
            brute_force_likelihood(&y, &lab(&[1], 3)),
            Err(Error::InstanceTooLarge { .. })
        ));
    }

    fn instance() -> impl Strategy<Value = (Array2<f64>, Vec<u32>)> {
        (1usize..=3, 1usize..=6).prop_flat_map(|(k, t)| {
            let logits = proptest::collection::vec(-4.0f64..4.0, t * (k + 1))
                .prop_map(move |v| Array2::from_shape_vec((t, k + 1), v).unwrap());
            let labels = proptest::collection::vec(1u32..=k as u32, 1..=3);
            (logits, labels)
        })
    }

    proptest! {
        #[test]
        fn shift_invariance_of_logits((logits, labels) in instance(), c in -5.0f64..5.0, row in 0usize..6) {
            let k = logits.ncols() as u32 - 1;
            let z = lab(&labels, k);
            let y = Posteriorgram::from_logits(&logits).unwrap();
            prop_assume!(ctc_loss(&y, &z).is_ok());
            let mut shifted = logits.clone();
            let r = row % logits.nrows();
            shifted.row_mut(r).mapv_inplace(|v| v + c);
            let a = ctc_loss(&y, &z).unwrap().0;
            let b = ctc_loss(&Posteriorgram::from_logits(&shifted).unwrap(), &z).unwrap().0;
            prop_assert!((a - b).abs() <= 1e-10 * a.abs().max(1.0));
        }

        #[test]
        fn gradient_rows_sum_to_zero((logits, labels) in instance()) {
            let k = logits.ncols() as u32 - 1;
            let z = lab(&labels, k);
            let y = Posteriorgram::from_logits(&logits).unwrap();
            prop_assume!(ctc_loss(&y, &z).is_ok());
            let (_, g) = ctc_grad(&y, &z).unwrap();
            for row in g.rows() {
                prop_assert!(row.sum().abs() < 1e-10);
            }
        }

        #[test]
        fn occupation_columns_sum_to_one((logits, labels) in instance()) {
            let k = logits.ncols() as u32 - 1;
            let z = lab(&labels, k);
            let y = Posteriorgram::from_logits(&logits).unwrap();
            prop_assume!(ctc_loss(&y, &z).is_ok());
            let (_, table) = ctc_loss(&y, &z).unwrap();
            let gamma = unit_posteriors(&y, &z, &table).unwrap();
            for col in gamma.columns() {
                prop_assert!((col.sum() - 1.0).abs() < 1e-9);
            }
        }
    }
}
