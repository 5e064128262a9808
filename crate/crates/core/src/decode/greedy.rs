use crate::ctc::collapse;
use crate::model::Posteriorgram;

/// Most likely frame label per frame, ties to the lowest index.
pub fn best_path(y: &Posteriorgram) -> (Vec<u32>, f64) {
    let mut path = Vec::with_capacity(y.num_frames());
    let mut score = 0.0;
    for row in y.log_probs().rows() {
        let (arg, best) = row
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |(ai, av), (i, &v)| if v > av { (i, v) } else { (ai, av) });
        path.push(arg as u32);
        score += best;
    }
    (path, score)
}

/// Best-path decoding: per-frame argmax, then CTC collapse.
pub fn greedy_decode(y: &Posteriorgram) -> Vec<u32> {
    collapse(&best_path(y).0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn one_hot(path: &[usize], k1: usize) -> Posteriorgram {
        let mut p = Array2::from_elem((path.len(), k1), 0.1 / (k1 - 1) as f64);
        for (t, &l) in path.iter().enumerate() {
            p[[t, l]] = 0.9;
        }
        Posteriorgram::from_probs(p).unwrap()
    }

    #[test]
    fn collapses_argmax_sequence() {
        assert_eq!(greedy_decode(&one_hot(&[0, 1, 1, 0, 3], 4)), vec![1, 3]);
        assert!(greedy_decode(&one_hot(&[0, 0, 0], 4)).is_empty());
    }

    #[test]
    fn ties_go_to_lowest_index() {
        let y = Posteriorgram::from_probs(Array2::from_elem((2, 3), 1.0 / 3.0)).unwrap();
        assert_eq!(best_path(&y).0, vec![0, 0]);
    }

    #[test]
    fn matches_exhaustive_best_path() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..200 {
            let k1 = rng.gen_range(2..=4usize);
            let t = rng.gen_range(1..=6usize);
            if k1.pow(t as u32) > 4096 {
                continue;
            }
            // quantized logits create exact ties
            let logits = Array2::from_shape_fn((t, k1), |_| rng.gen_range(0..4) as f64);
            let y = Posteriorgram::from_logits(&logits).unwrap();
            let mut best: Option<(Vec<u32>, f64)> = None;
            let total = k1.pow(t as u32);
            for code in 0..total {
                let mut c = code;
                let mut path = vec![0u32; t];
                for slot in path.iter_mut().rev() {
                    *slot = (c % k1) as u32;
                    c /= k1;
                }
                let s: f64 = path.iter().enumerate().map(|(i, &l)| logits[[i, l as usize]]).sum();
                // enumeration is lexicographic, so strict > keeps the lowest-index tie
                if best.as_ref().is_none_or(|(_, b)| s > *b) {
                    best = Some((path, s));
                }
            }
            assert_eq!(best_path(&y).0, best.unwrap().0);
        }
    }
}
