//! Dataset handling: IDX-format image I/O and a synthetic corpus of
//! oriented shapes for training orientation-aware models.

use std::io::{self, Read, Write};
use std::path::Path;

use byteorder::{BigEndian, ReadBytesExt, WriteBytesExt};
use rand::Rng;
use thiserror::Error;

use crate::diffmath::Tensor;
use crate::groups::rotate_exact_quarter;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("io error: {0}")]
    Io(#[from] io::Error),
    #[error("bad IDX magic {0:#010x}")]
    BadMagic(u32),
    #[error("unsupported IDX dtype {0:#04x} (only unsigned byte is supported)")]
    UnsupportedDtype(u8),
    #[error("IDX payload truncated: expected {expected} bytes, got {got}")]
    Truncated { expected: usize, got: usize },
}

/// Read an IDX file of unsigned bytes into a tensor scaled to `[0, 1]`.
pub fn read_idx(reader: &mut impl Read) -> Result<Tensor, DataError> {
    let magic = reader.read_u32::<BigEndian>()?;
    let dtype = ((magic >> 8) & 0xff) as u8;
    let ndims = (magic & 0xff) as usize;
    if magic >> 16 != 0 {
        return Err(DataError::BadMagic(magic));
    }
    if dtype != 0x08 {
        return Err(DataError::UnsupportedDtype(dtype));
    }
    let mut shape = Vec::with_capacity(ndims);
    for _ in 0..ndims {
        shape.push(reader.read_u32::<BigEndian>()? as usize);
    }
    let expected: usize = shape.iter().product();
    let mut bytes = Vec::with_capacity(expected);
    reader.read_to_end(&mut bytes)?;
    if bytes.len() < expected {
        return Err(DataError::Truncated { expected, got: bytes.len() });
    }
    bytes.truncate(expected);
    Ok(Tensor::new(shape, bytes.into_iter().map(|b| b as f64 / 255.0).collect()))
}

/// Write a tensor with values in `[0, 1]` as an IDX file of unsigned
/// bytes (values are clamped and rounded).
pub fn write_idx(writer: &mut impl Write, t: &Tensor) -> Result<(), DataError> {
    writer.write_u32::<BigEndian>(0x0800 | t.shape().len() as u32)?;
    for &d in t.shape() {
        writer.write_u32::<BigEndian>(d as u32)?;
    }
    let bytes: Vec<u8> =
        t.data().iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
    writer.write_all(&bytes)?;
    Ok(())
}

pub fn read_idx_file(path: &Path) -> Result<Tensor, DataError> {
    read_idx(&mut std::fs::File::open(path)?)
}

pub fn write_idx_file(path: &Path, t: &Tensor) -> Result<(), DataError> {
    write_idx(&mut std::fs::File::create(path)?, t)
}

/// Relative distance between an image and its quarter rotation; a
/// measure of how well orientation can be identified at all.
pub fn asymmetry(img: &Tensor) -> f64 {
    let rot = rotate_exact_quarter(img, 1).expect("square image");
    let n = img.norm();
    if n == 0.0 {
        0.0
    } else {
        img.sub(&rot).norm() / n
    }
}

/// Generate `count` synthetic `side x side` images of oriented shapes
/// (an L-shaped body plus an off-axis dot), each rejection-sampled so
/// that its quarter-rotation asymmetry exceeds `0.1`.
pub fn synth_oriented(count: usize, side: usize, rng: &mut impl Rng) -> Tensor {
    assert!(side >= 8, "shapes need at least an 8x8 canvas");
    let mut out = Tensor::zeros(vec![count, side, side]);
    let mut made = 0;
    while made < count {
        let img = one_shape(side, rng);
        if asymmetry(&img) > 0.1 {
            out.data_mut()[made * side * side..(made + 1) * side * side]
                .copy_from_slice(img.data());
            made += 1;
        }
    }
    out
}

fn one_shape(side: usize, rng: &mut impl Rng) -> Tensor {
    let mut img = Tensor::zeros(vec![side, side]);
    let s = side as i64;
    let cy = rng.gen_range(s / 4..3 * s / 4);
    let cx = rng.gen_range(s / 4..3 * s / 4);
    let arm_v = rng.gen_range(s / 4..s / 2);
    let arm_h = rng.gen_range(s / 4..s / 2);
    let thick = rng.gen_range(1..=s / 8);
    let body = rng.gen_range(0.55..1.0);
    let mut put = |y: i64, x: i64, v: f64| {
        if y >= 0 && y < s && x >= 0 && x < s {
            let idx = (y * s + x) as usize;
            img.data_mut()[idx] = img.data()[idx].max(v);
        }
    };
    // vertical arm going up, horizontal arm going right: an "L"
    for d in 0..arm_v {
        for t in 0..thick {
            put(cy - d, cx + t, body);
        }
    }
    for d in 0..arm_h {
        for t in 0..thick {
            put(cy + t, cx + d, body);
        }
    }
    // off-axis dot breaking any residual symmetry
    let dy = rng.gen_range(1..=s / 8);
    let dx = rng.gen_range(1..=s / 8);
    put(cy + dy + thick, cx + dx + thick, rng.gen_range(0.7..1.0));
    img
}

/// Deterministic 80/10/10 index split (shuffled by the given seed).
pub fn split(n: usize, seed: u64) -> (Vec<usize>, Vec<usize>, Vec<usize>) {
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    idx.shuffle(&mut rng);
    let n_train = n * 8 / 10;
    let n_val = n / 10;
    let test = idx.split_off(n_train + n_val);
    let val = idx.split_off(n_train);
    (idx, val, test)
}

/// Borrow sample `i` of an `[n, h, w]` stack as a flat signal vector.
pub fn sample(stack: &Tensor, i: usize) -> Tensor {
    let (h, w) = (stack.shape()[1], stack.shape()[2]);
    Tensor::from_vec(stack.data()[i * h * w..(i + 1) * h * w].to_vec())
}
