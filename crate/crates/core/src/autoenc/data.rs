//! Example matrices: seeded synthetic images and an IDX image reader.

use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Uniform};

use crate::error::{Error, Result};

/// `n` examples of dimension `d`, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    n: usize,
    d: usize,
    data: Vec<f64>,
}

impl Batch {
    pub fn from_flat(n: usize, d: usize, data: Vec<f64>) -> Result<Self> {
        if n == 0 {
            return Err(Error::Empty("batch"));
        }
        if d == 0 || data.len() != n * d {
            return Err(Error::DimensionMismatch {
                expected: n * d,
                got: data.len(),
            });
        }
        Ok(Batch { n, d, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let d = rows.first().ok_or(Error::Empty("batch"))?.len();
        let mut data = Vec::with_capacity(rows.len() * d);
        for r in rows {
            if r.len() != d {
                return Err(Error::DimensionMismatch { expected: d, got: r.len() });
            }
            data.extend_from_slice(r);
        }
        Batch::from_flat(rows.len(), d, data)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.d..(i + 1) * self.d]
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.data
    }

    /// Rows `idx` in the given order.
    pub fn select(&self, idx: &[usize]) -> Result<Batch> {
        let mut data = Vec::with_capacity(idx.len() * self.d);
        for &i in idx {
            if i >= self.n {
                return Err(Error::invalid("index", format!("{i} out of range for {} rows", self.n)));
            }
            data.extend_from_slice(self.row(i));
        }
        Batch::from_flat(idx.len(), self.d, data)
    }

    /// First `k` rows.
    pub fn head(&self, k: usize) -> Result<Batch> {
        let k = k.min(self.n);
        Batch::from_flat(k, self.d, self.data[..k * self.d].to_vec())
    }
}

/// A train/test pair.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub train: Batch,
    pub test: Batch,
}

/// `n` images of `side x side` pixels, each a clamped sum of one to three
/// axis-aligned Gaussian bumps with random centers, widths and heights.
pub fn synthetic_images<R: Rng + ?Sized>(rng: &mut R, side: usize, n: usize) -> Result<Batch> {
    if side == 0 {
        return Err(Error::invalid("side", "must be positive"));
    }
    let s = side as f64;
    let center = Uniform::new(0.0, s).expect("valid range");
    let width = Uniform::new(0.08 * s, 0.35 * s).expect("valid range");
    let height = Uniform::new(0.5, 1.0).expect("valid range");
    let mut data = Vec::with_capacity(n * side * side);
    for _ in 0..n {
        let bumps = rng.random_range(1..=3);
        let params: Vec<[f64; 5]> = (0..bumps)
            .map(|_| {
                [
                    center.sample(rng),
                    center.sample(rng),
                    width.sample(rng),
                    width.sample(rng),
                    height.sample(rng),
                ]
            })
            .collect();
        for r in 0..side {
            for c in 0..side {
                let (y, x) = (r as f64 + 0.5, c as f64 + 0.5);
                let v: f64 = params
                    .iter()
                    .map(|&[cy, cx, wy, wx, a]| {
                        a * (-0.5 * (((y - cy) / wy).powi(2) + ((x - cx) / wx).powi(2))).exp()
                    })
                    .sum();
                data.push(v.clamp(0.0, 1.0));
            }
        }
    }
    Batch::from_flat(n, side * side, data)
}

/// Synthetic train and test sets drawn from one stream, train first.
pub fn synthetic_dataset<R: Rng + ?Sized>(rng: &mut R, side: usize, n_train: usize, n_test: usize) -> Result<Dataset> {
    Ok(Dataset {
        train: synthetic_images(rng, side, n_train)?,
        test: synthetic_images(rng, side, n_test)?,
    })
}

const IDX_IMAGE_MAGIC: u32 = 0x0000_0803;

fn be_u32(bytes: &[u8], at: usize) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Idx(format!("truncated header at byte {at}")))
}

/// Parses an IDX3 unsigned-byte image file, scales pixels to `[0, 1]` and
/// removes `crop` pixels from each side of every image.
pub fn parse_idx_images(bytes: &[u8], crop: usize) -> Result<Batch> {
    let magic = be_u32(bytes, 0)?;
    if magic != IDX_IMAGE_MAGIC {
        return Err(Error::Idx(format!("magic {magic:#010x}, expected {IDX_IMAGE_MAGIC:#010x}")));
    }
    let n = be_u32(bytes, 4)? as usize;
    let rows = be_u32(bytes, 8)? as usize;
    let cols = be_u32(bytes, 12)? as usize;
    let need = n
        .checked_mul(rows)
        .and_then(|x| x.checked_mul(cols))
        .ok_or_else(|| Error::Idx("dimensions overflow".into()))?;
    let pixels = &bytes[16..];
    if pixels.len() != need {
        return Err(Error::Idx(format!("expected {need} pixel bytes, found {}", pixels.len())));
    }
    if 2 * crop >= rows || 2 * crop >= cols {
        return Err(Error::Idx(format!("crop {crop} leaves no pixels of a {rows}x{cols} image")));
    }
    let (r2, c2) = (rows - 2 * crop, cols - 2 * crop);
    let mut data = Vec::with_capacity(n * r2 * c2);
    for img in pixels.chunks_exact(rows * cols) {
        for r in crop..rows - crop {
            data.extend(img[r * cols + crop..r * cols + cols - crop].iter().map(|&p| p as f64 / 255.0));
        }
    }
    Batch::from_flat(n, r2 * c2, data)
}

pub fn read_idx_images(path: impl AsRef<Path>, crop: usize) -> Result<Batch> {
    let bytes = std::fs::read(path.as_ref())?;
    parse_idx_images(&bytes, crop)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    fn idx_bytes(n: u32, rows: u32, cols: u32, pixels: &[u8]) -> Vec<u8> {
        let mut b = IDX_IMAGE_MAGIC.to_be_bytes().to_vec();
        for x in [n, rows, cols] {
            b.extend_from_slice(&x.to_be_bytes());
        }
        b.extend_from_slice(pixels);
        b
    }

    #[test]
    fn idx_round_trip_and_crop() {
        let px: Vec<u8> = (0..32).map(|i| (i * 8) as u8).collect();
        let b = parse_idx_images(&idx_bytes(2, 4, 4, &px), 0).unwrap();
        assert_eq!((b.n(), b.d()), (2, 16));
        assert_eq!(b.row(1)[0], 128.0 / 255.0);

        let c = parse_idx_images(&idx_bytes(2, 4, 4, &px), 1).unwrap();
        assert_eq!(c.d(), 4);
        // inner 2x2 of the first image: pixels 5, 6, 9, 10
        let want: Vec<f64> = [5, 6, 9, 10].iter().map(|&i| (i * 8) as f64 / 255.0).collect();
        assert_eq!(c.row(0), &want[..]);
    }

    #[test]
    fn idx_rejects_bad_input() {
        assert!(parse_idx_images(&[0, 0, 8, 1, 0, 0, 0, 0], 0).is_err());
        assert!(parse_idx_images(&idx_bytes(1, 2, 2, &[1, 2, 3]), 0).is_err());
        assert!(parse_idx_images(&idx_bytes(1, 2, 2, &[1, 2, 3, 4]), 1).is_err());
        assert!(parse_idx_images(&[0, 0], 0).is_err());
    }

    #[test]
    fn synthetic_images_are_in_unit_range_and_seeded() {
        let a = synthetic_images(&mut seeded(1, &[4]), 6, 50).unwrap();
        let b = synthetic_images(&mut seeded(1, &[4]), 6, 50).unwrap();
        assert_eq!(a, b);
        assert!(a.as_flat().iter().all(|&p| (0.0..=1.0).contains(&p)));
        assert!(a.as_flat().iter().any(|&p| p > 0.3));
    }

    #[test]
    fn select_and_head() {
        let b = Batch::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]]).unwrap();
        assert_eq!(b.select(&[2, 0]).unwrap().as_flat(), &[5.0, 6.0, 1.0, 2.0]);
        assert_eq!(b.head(1).unwrap().as_flat(), &[1.0, 2.0]);
        assert!(b.select(&[3]).is_err());
        assert!(Batch::from_rows(&[]).is_err());
    }
}
