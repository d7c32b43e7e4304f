use tensor::Tensor;

use super::Dataset;
use crate::error::{Error, Result};
use crate::vtt::EhrRecord;

/// Clamp to `[lo, hi]` and map linearly onto `[0, 1]`.
pub fn window_normalize(volume: &Tensor, lo: f64, hi: f64) -> Result<Tensor> {
    if lo >= hi {
        return Err(Error::Config(format!("window lower bound {lo} is not below {hi}")));
    }
    if !volume.is_finite() {
        return Err(Error::Data("volume has non-finite values".into()));
    }
    Ok(volume.map(|v| (v.clamp(lo, hi) - lo) / (hi - lo)))
}

/// Mean voxel coordinate of a 0/1 `[D,H,W]` mask.
pub fn mask_centroid(mask: &Tensor) -> Result<[f64; 3]> {
    let [d, h, w] = dims3(mask)?;
    let mut sum = [0.0; 3];
    let mut n = 0.0;
    for z in 0..d {
        for y in 0..h {
            for x in 0..w {
                if mask.data()[(z * h + y) * w + x] > 0.5 {
                    sum[0] += z as f64;
                    sum[1] += y as f64;
                    sum[2] += x as f64;
                    n += 1.0;
                }
            }
        }
    }
    if n == 0.0 {
        return Err(Error::Data("mask is empty".into()));
    }
    Ok(sum.map(|s| s / n))
}

fn dims3(t: &Tensor) -> Result<[usize; 3]> {
    match *t.shape() {
        [d, h, w] => Ok([d, h, w]),
        ref other => Err(Error::Data(format!("expected a [D,H,W] volume, got {other:?}"))),
    }
}

/// Cube of the given side centred on the mask centroid, shifted as needed to
/// stay inside the volume. Volume and mask are cropped identically.
pub fn crop_stone_cube(volume: &Tensor, mask: &Tensor, side: usize) -> Result<(Tensor, Tensor)> {
    let dims = dims3(volume)?;
    if dims3(mask)? != dims {
        return Err(Error::Data(format!("mask {:?} vs volume {dims:?}", mask.shape())));
    }
    if side == 0 || dims.iter().any(|&d| side > d) {
        return Err(Error::Data(format!("crop side {side} exceeds volume {dims:?}")));
    }
    let c = mask_centroid(mask)?;
    let start: [usize; 3] = std::array::from_fn(|a| {
        let ideal = (c[a] - (side as f64 - 1.0) / 2.0).round();
        ideal.clamp(0.0, (dims[a] - side) as f64) as usize
    });
    let [_, h, w] = dims;
    let crop = |t: &Tensor| {
        let mut out = Vec::with_capacity(side * side * side);
        for z in 0..side {
            for y in 0..side {
                let base = ((start[0] + z) * h + start[1] + y) * w + start[2];
                out.extend_from_slice(&t.data()[base..base + side]);
            }
        }
        Tensor::new(&[side, side, side], out)
    };
    Ok((crop(volume)?, crop(mask)?))
}

/// A case ready for the network: cropped, window-normalised volume and cropped mask.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub id: String,
    pub volume: Tensor,
    pub mask: Tensor,
    pub ehr: EhrRecord,
    pub label: bool,
}

pub fn prepare(data: &Dataset, side: usize, lo: f64, hi: f64) -> Result<Vec<Prepared>> {
    data.samples
        .iter()
        .map(|s| {
            let (v, m) = crop_stone_cube(&s.volume, &s.mask, side)
                .map_err(|e| Error::Data(format!("sample {}: {e}", s.id)))?;
            Ok(Prepared {
                id: s.id.clone(),
                volume: window_normalize(&v, lo, hi)?,
                mask: m,
                ehr: s.ehr.clone(),
                label: s.label,
            })
        })
        .collect()
}
