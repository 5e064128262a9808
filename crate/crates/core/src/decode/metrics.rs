use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Levenshtein alignment counts between a reference and a hypothesis.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EditCounts {
    pub substitutions: usize,
    pub deletions: usize,
    pub insertions: usize,
    /// Reference length N.
    pub reference_len: usize,
}

impl EditCounts {
    pub fn errors(&self) -> usize {
        self.substitutions + self.deletions + self.insertions
    }

    /// `(S + D + I) / N`; zero for an empty reference with no insertions.
    pub fn error_rate(&self) -> f64 {
        if self.reference_len == 0 {
            return if self.insertions == 0 { 0.0 } else { f64::INFINITY };
        }
        self.errors() as f64 / self.reference_len as f64
    }

    /// `100 (N - S - D - I) / N`, negative when insertions dominate.
    pub fn accuracy(&self) -> f64 {
        if self.reference_len == 0 {
            return if self.insertions == 0 { 100.0 } else { f64::NEG_INFINITY };
        }
        100.0 * (self.reference_len as f64 - self.errors() as f64) / self.reference_len as f64
    }
}

impl std::ops::Add for EditCounts {
    type Output = EditCounts;
    fn add(self, o: EditCounts) -> EditCounts {
        EditCounts {
            substitutions: self.substitutions + o.substitutions,
            deletions: self.deletions + o.deletions,
            insertions: self.insertions + o.insertions,
            reference_len: self.reference_len + o.reference_len,
        }
    }
}

impl std::iter::Sum for EditCounts {
    fn sum<I: Iterator<Item = EditCounts>>(iter: I) -> Self {
        iter.fold(EditCounts::default(), |a, b| a + b)
    }
}

/// Unit-cost alignment. Among minimum-cost alignments the backtrace prefers
/// match/substitution, then deletion, then insertion.
pub fn edit_counts<T: PartialEq>(reference: &[T], hypothesis: &[T]) -> EditCounts {
    let (n, m) = (reference.len(), hypothesis.len());
    let mut cost = vec![vec![0usize; m + 1]; n + 1];
    for (i, row) in cost.iter_mut().enumerate() {
        row[0] = i;
    }
    for j in 0..=m {
        cost[0][j] = j;
    }
    for i in 1..=n {
        for j in 1..=m {
            let diag = cost[i - 1][j - 1] + usize::from(reference[i - 1] != hypothesis[j - 1]);
            cost[i][j] = diag.min(cost[i - 1][j] + 1).min(cost[i][j - 1] + 1);
        }
    }
    let mut counts = EditCounts {
        reference_len: n,
        ..Default::default()
    };
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        if i > 0 && j > 0 {
            let same = reference[i - 1] == hypothesis[j - 1];
            if cost[i][j] == cost[i - 1][j - 1] + usize::from(!same) {
                if !same {
                    counts.substitutions += 1;
                }
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if i > 0 && cost[i][j] == cost[i - 1][j] + 1 {
            counts.deletions += 1;
            i -= 1;
        } else {
            counts.insertions += 1;
            j -= 1;
        }
    }
    counts
}

/// As [`edit_counts`], rejecting an empty reference.
pub fn edit_distance_metrics<T: PartialEq>(reference: &[T], hypothesis: &[T]) -> Result<EditCounts> {
    if reference.is_empty() {
        return Err(Error::EmptyReference);
    }
    Ok(edit_counts(reference, hypothesis))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Plain distance recursion without backtrace, memoized.
    fn oracle_distance(a: &[u8], b: &[u8]) -> usize {
        fn go(a: &[u8], b: &[u8], memo: &mut std::collections::HashMap<(usize, usize), usize>) -> usize {
            if a.is_empty() {
                return b.len();
            }
            if b.is_empty() {
                return a.len();
            }
            if let Some(&v) = memo.get(&(a.len(), b.len())) {
                return v;
            }
            let sub = go(&a[1..], &b[1..], memo) + usize::from(a[0] != b[0]);
            let del = go(&a[1..], b, memo) + 1;
            let ins = go(a, &b[1..], memo) + 1;
            let v = sub.min(del).min(ins);
            memo.insert((a.len(), b.len()), v);
            v
        }
        go(a, b, &mut Default::default())
    }

    #[test]
    fn word_examples() {
        let r = ["the", "speech"];
        let same = edit_distance_metrics(&r, &r).unwrap();
        assert_eq!(same.error_rate(), 0.0);
        assert_eq!(same.accuracy(), 100.0);
        let c = edit_distance_metrics(&r, &["the", "peach"]).unwrap();
        assert_eq!(c.substitutions, 1);
        assert_eq!(c.error_rate(), 0.5);
        assert!(matches!(
            edit_distance_metrics::<&str>(&[], &["x"]),
            Err(Error::EmptyReference)
        ));
    }

    #[test]
    fn accuracy_can_go_negative() {
        let c = edit_distance_metrics(&[1], &[2, 3, 4]).unwrap();
        assert_eq!(c.errors(), 3);
        assert_eq!(c.accuracy(), -200.0);
    }

    #[test]
    fn pooled_rate_is_not_mean_of_rates() {
        let a = edit_counts(&[1, 2], &[1, 3]);
        let b = edit_counts(&[1, 2, 3, 4, 5, 6], &[1, 2, 3, 4, 5, 6]);
        let pooled = a + b;
        assert_eq!(pooled.error_rate(), 1.0 / 8.0);
        assert_ne!(pooled.error_rate(), (a.error_rate() + b.error_rate()) / 2.0);
    }

    proptest! {
        #[test]
        fn counts_match_oracle(a in proptest::collection::vec(0u8..4, 0..9), b in proptest::collection::vec(0u8..4, 0..9)) {
            let c = edit_counts(&a, &b);
            prop_assert_eq!(c.errors(), oracle_distance(&a, &b));
            prop_assert_eq!(c.reference_len, a.len());
            // every hypothesis token is matched, substituted or inserted
            prop_assert_eq!(a.len() - c.deletions + c.insertions, b.len());
        }

        #[test]
        fn triangle_inequality(a in proptest::collection::vec(0u8..3, 0..7), b in proptest::collection::vec(0u8..3, 0..7), c in proptest::collection::vec(0u8..3, 0..7)) {
            let d = |x: &[u8], y: &[u8]| edit_counts(x, y).errors();
            prop_assert!(d(&a, &c) <= d(&a, &b) + d(&b, &c));
            prop_assert_eq!(d(&a, &b), d(&b, &a));
        }

        #[test]
        fn substitution_only_is_symmetric(pairs in proptest::collection::vec((0u8..3, 0u8..3), 1..8)) {
            let (a, b): (Vec<u8>, Vec<u8>) = pairs.into_iter().unzip();
            let ab = edit_counts(&a, &b);
            let ba = edit_counts(&b, &a);
            prop_assert_eq!(ab.errors(), ba.errors());
            if ab.deletions == 0 && ab.insertions == 0 {
                prop_assert_eq!(ab.substitutions, ba.substitutions);
            }
        }
    }
}
