use nalgebra::{Matrix3, Vector3};
use ndarray::Array2;

use super::{FeatureSequence, Modality};
use crate::error::{Error, Result};

/// Inner plus outer lip contour.
pub const NUM_LIP_POINTS: usize = 18;

/// Tracked lip contour plus stable reference points (eye corners, nose)
/// per frame.
#[derive(Clone, Debug, PartialEq)]
pub struct LandmarkTrack {
    points: Vec<[[f64; 2]; NUM_LIP_POINTS]>,
    anchors: Vec<Vec<[f64; 2]>>,
}

impl LandmarkTrack {
    pub fn new(points: Vec<[[f64; 2]; NUM_LIP_POINTS]>, anchors: Vec<Vec<[f64; 2]>>) -> Result<Self> {
        if points.len() != anchors.len() {
            return Err(Error::LengthMismatch {
                expected: points.len(),
                got: anchors.len(),
            });
        }
        let n_anchor = anchors.first().map_or(0, Vec::len);
        if n_anchor < 3 {
            return Err(Error::invalid("affine normalization needs at least 3 anchor points"));
        }
        if anchors.iter().any(|a| a.len() != n_anchor) {
            return Err(Error::invalid("anchor count varies between frames"));
        }
        let finite = points.iter().flatten().flatten().all(|v| v.is_finite())
            && anchors.iter().flatten().flatten().all(|v| v.is_finite());
        if !finite {
            return Err(Error::invalid("landmark coordinates must be finite"));
        }
        Ok(Self { points, anchors })
    }

    pub fn num_frames(&self) -> usize {
        self.points.len()
    }

    pub fn points(&self) -> &[[[f64; 2]; NUM_LIP_POINTS]] {
        &self.points
    }

    pub fn anchors(&self) -> &[Vec<[f64; 2]>] {
        &self.anchors
    }

    /// Mean anchor configuration over the track; the "average face" every
    /// frame is mapped onto.
    fn mean_anchors(&self) -> Vec<[f64; 2]> {
        let n = self.anchors[0].len();
        let t = self.anchors.len() as f64;
        (0..n)
            .map(|i| {
                let (sx, sy) = self
                    .anchors
                    .iter()
                    .fold((0.0, 0.0), |(x, y), a| (x + a[i][0], y + a[i][1]));
                [sx / t, sy / t]
            })
            .collect()
    }
}

/// Least-squares affine map sending `from` onto `to`, as a 3x2 matrix
/// applied to `[x, y, 1]`.
fn fit_affine(from: &[[f64; 2]], to: &[[f64; 2]]) -> Result<[[f64; 2]; 3]> {
    let mut ata = Matrix3::zeros();
    let mut atx = Vector3::zeros();
    let mut aty = Vector3::zeros();
    for (p, q) in from.iter().zip(to) {
        let row = Vector3::new(p[0], p[1], 1.0);
        ata += row * row.transpose();
        atx += row * q[0];
        aty += row * q[1];
    }
    // scale-aware singularity test; collinear anchors give det ~ 0
    let scale = ata.diagonal().iter().map(|v| v.abs()).fold(0.0, f64::max).max(1.0);
    if ata.determinant().abs() <= 1e-10 * scale.powi(3) {
        return Err(Error::SingularAlignment);
    }
    let inv = ata.try_inverse().ok_or(Error::SingularAlignment)?;
    let cx = inv * atx;
    let cy = inv * aty;
    Ok([[cx[0], cy[0]], [cx[1], cy[1]], [cx[2], cy[2]]])
}

fn derivative(series: &[[[f64; 2]; NUM_LIP_POINTS]]) -> Vec<[[f64; 2]; NUM_LIP_POINTS]> {
    let t = series.len();
    (0..t)
        .map(|i| {
            let (lo, hi, span) = if i == 0 {
                (0, 1, 1.0)
            } else if i == t - 1 {
                (t - 2, t - 1, 1.0)
            } else {
                (i - 1, i + 1, 2.0)
            };
            let mut d = [[0.0; 2]; NUM_LIP_POINTS];
            for p in 0..NUM_LIP_POINTS {
                for c in 0..2 {
                    d[p][c] = (series[hi][p][c] - series[lo][p][c]) / span;
                }
            }
            d
        })
        .collect()
}

/// 72-dimensional visual frame vector: 36 normalized lip coordinates,
/// 18 point speeds and 18 point accelerations.
pub fn landmark_features(lm: &LandmarkTrack) -> Result<FeatureSequence> {
    let t = lm.num_frames();
    if t < 3 {
        return Err(Error::DegenerateUtterance { needed: 3, got: t });
    }
    let reference = lm.mean_anchors();
    let mut normalized = Vec::with_capacity(t);
    for (lips, anchors) in lm.points.iter().zip(&lm.anchors) {
        let m = fit_affine(anchors, &reference)?;
        let mut out = [[0.0; 2]; NUM_LIP_POINTS];
        for (o, p) in out.iter_mut().zip(lips) {
            for c in 0..2 {
                o[c] = p[0] * m[0][c] + p[1] * m[1][c] + m[2][c];
            }
        }
        let n = NUM_LIP_POINTS as f64;
        let cx = out.iter().map(|p| p[0]).sum::<f64>() / n;
        let cy = out.iter().map(|p| p[1]).sum::<f64>() / n;
        for p in out.iter_mut() {
            p[0] -= cx;
            p[1] -= cy;
        }
        normalized.push(out);
    }
    let speed = derivative(&normalized);
    let accel = derivative(&speed);

    let mut frames = Array2::zeros((t, 4 * NUM_LIP_POINTS));
    for i in 0..t {
        let mut row = frames.row_mut(i);
        for p in 0..NUM_LIP_POINTS {
            row[2 * p] = normalized[i][p][0];
            row[2 * p + 1] = normalized[i][p][1];
            row[2 * NUM_LIP_POINTS + p] = speed[i][p][0].hypot(speed[i][p][1]);
            row[3 * NUM_LIP_POINTS + p] = accel[i][p][0].hypot(accel[i][p][1]);
        }
    }
    let labels = (0..NUM_LIP_POINTS)
        .flat_map(|p| [format!("lip{p}_x"), format!("lip{p}_y")])
        .chain((0..NUM_LIP_POINTS).map(|p| format!("lip{p}_speed")))
        .chain((0..NUM_LIP_POINTS).map(|p| format!("lip{p}_accel")))
        .collect();
    FeatureSequence::from_frames(frames, Modality::Video)?.with_dim_labels(labels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_track(t: usize, seed: u64) -> LandmarkTrack {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let base_anchors = [[-30.0, -40.0], [30.0, -40.0], [0.0, -10.0], [0.0, 35.0]];
        let mut points = Vec::new();
        let mut anchors = Vec::new();
        for _ in 0..t {
            let mut lips = [[0.0; 2]; NUM_LIP_POINTS];
            for (i, p) in lips.iter_mut().enumerate() {
                let ang = i as f64 / NUM_LIP_POINTS as f64 * std::f64::consts::TAU;
                let r = if i < 10 { 20.0 } else { 12.0 };
                *p = [r * ang.cos() + rng.gen_range(-1.0..1.0), 20.0 + r * 0.5 * ang.sin() + rng.gen_range(-1.0..1.0)];
            }
            points.push(lips);
            anchors.push(
                base_anchors
                    .iter()
                    .map(|a| [a[0] + rng.gen_range(-0.5..0.5), a[1] + rng.gen_range(-0.5..0.5)])
                    .collect(),
            );
        }
        LandmarkTrack::new(points, anchors).unwrap()
    }

    #[test]
    fn seventy_two_dimensions() {
        let f = landmark_features(&random_track(6, 1)).unwrap();
        assert_eq!(f.dim(), 72);
        assert_eq!(2 * NUM_LIP_POINTS + NUM_LIP_POINTS + NUM_LIP_POINTS, 72);
        assert_eq!(f.dim_labels().unwrap().len(), 72);
    }

    #[test]
    fn static_mouth_has_no_motion() {
        let one = random_track(1, 2);
        let track = LandmarkTrack::new(vec![one.points[0]; 5], vec![one.anchors[0].clone(); 5]).unwrap();
        let f = landmark_features(&track).unwrap();
        assert!(f.frames().slice(ndarray::s![.., 36..]).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rigid_translation_cancels() {
        let track = random_track(8, 3);
        let shift = |p: [f64; 2]| [p[0] + 10.0, p[1] + 4.0];
        let moved = LandmarkTrack::new(
            track.points.iter().map(|f| f.map(shift)).collect(),
            track
                .anchors
                .iter()
                .map(|a| a.iter().copied().map(shift).collect())
                .collect(),
        )
        .unwrap();
        let a = landmark_features(&track).unwrap();
        let b = landmark_features(&moved).unwrap();
        let diff = (a.frames() - b.frames()).mapv(|v| v * v).sum().sqrt();
        assert!(diff < 1e-8, "{diff}");
    }

    #[test]
    fn collinear_anchors_are_singular() {
        let track = random_track(4, 4);
        let line = vec![vec![[0.0, 0.0], [1.0, 1.0], [2.0, 2.0], [3.0, 3.0]]; 4];
        let bad = LandmarkTrack::new(track.points.clone(), line).unwrap();
        assert!(matches!(landmark_features(&bad), Err(Error::SingularAlignment)));
    }

    #[test]
    fn too_short_track() {
        let track = random_track(2, 5);
        assert!(matches!(
            landmark_features(&track),
            Err(Error::DegenerateUtterance { .. })
        ));
    }
}
