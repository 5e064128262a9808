use ndarray::{concatenate, Array2, Axis};

use super::{FeatureSequence, Modality};
use crate::error::{Error, Result};

const ZERO_VARIANCE: f64 = 1e-12;

/// Per-utterance mean and variance normalization. Constant dimensions are
/// centered only, which leaves them all-zero.
pub fn cmvn(x: &FeatureSequence) -> Result<FeatureSequence> {
    let t = x.num_frames();
    if t < 2 {
        return Err(Error::DegenerateUtterance { needed: 2, got: t });
    }
    let mut frames = x.frames().clone();
    for mut col in frames.columns_mut() {
        let mean = col.sum() / t as f64;
        col.mapv_inplace(|v| v - mean);
        let var = col.iter().map(|v| v * v).sum::<f64>() / t as f64;
        if var > ZERO_VARIANCE {
            let inv = var.sqrt().recip();
            col.mapv_inplace(|v| v * inv);
        } else {
            col.fill(0.0);
        }
    }
    x.replace_frames(frames)
}

/// Concatenates each frame with its `k` neighbours on either side,
/// replicating the edge frames.
pub fn stack_context(x: &FeatureSequence, k: usize) -> Result<FeatureSequence> {
    if k == 0 {
        return Ok(x.clone());
    }
    let (t, d) = x.frames().dim();
    let src = x.frames();
    let mut out = Array2::zeros((t, (2 * k + 1) * d));
    for row in 0..t {
        for (slot, offset) in (-(k as i64)..=k as i64).enumerate() {
            let from = (row as i64 + offset).clamp(0, t as i64 - 1) as usize;
            out.row_mut(row)
                .slice_mut(ndarray::s![slot * d..(slot + 1) * d])
                .assign(&src.row(from));
        }
    }
    x.replace_frames(out)
}

/// Frame-wise concatenation (early fusion). No resampling is attempted.
pub fn fuse(xs: &[FeatureSequence]) -> Result<FeatureSequence> {
    let first = xs
        .first()
        .ok_or_else(|| Error::invalid("fusion needs at least one stream"))?;
    if xs.len() == 1 {
        return Ok(first.clone());
    }
    for x in &xs[1..] {
        if x.num_frames() != first.num_frames() {
            return Err(Error::LengthMismatch {
                expected: first.num_frames(),
                got: x.num_frames(),
            });
        }
        if (x.frame_shift_ms() - first.frame_shift_ms()).abs() > 1e-9 {
            return Err(Error::invalid(format!(
                "frame shifts differ: {} vs {} ms",
                first.frame_shift_ms(),
                x.frame_shift_ms()
            )));
        }
    }
    let views: Vec<_> = xs.iter().map(|x| x.frames().view()).collect();
    let frames = concatenate(Axis(1), &views).expect("row counts checked above");
    let mut out = FeatureSequence::new(frames, first.frame_shift_ms(), Modality::Fused)?;
    if xs.iter().all(|x| x.dim_labels().is_some()) {
        let labels = xs
            .iter()
            .flat_map(|x| x.dim_labels().unwrap().iter().cloned())
            .collect();
        out = out.with_dim_labels(labels)?;
    }
    Ok(out)
}

/// Moves a stream in time with edge replication. Positive offsets delay it.
pub fn shift_modality(x: &FeatureSequence, offset_frames: i64) -> Result<FeatureSequence> {
    let t = x.num_frames();
    if offset_frames.unsigned_abs() as usize >= t {
        return Err(Error::OffsetTooLarge {
            offset: offset_frames,
            len: t,
        });
    }
    if offset_frames == 0 {
        return Ok(x.clone());
    }
    let src = x.frames();
    let mut out = Array2::zeros(src.dim());
    for row in 0..t {
        let from = (row as i64 - offset_frames).clamp(0, t as i64 - 1) as usize;
        out.row_mut(row).assign(&src.row(from));
    }
    x.replace_frames(out)
}
