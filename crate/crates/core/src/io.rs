//! "DUT1" binary tensor files: magic `DUT1`, u8 rank, four u32 little-endian
//! extents (unused = 1), u8 dtype tag (0 = f32, 1 = f64), then the payload
//! row-major little-endian. Used for checkpoints and predict I/O.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

pub const MAGIC: [u8; 4] = *b"DUT1";

pub fn write_tensor<T: Scalar, W: Write>(out: &mut W, t: &Tensor<T>) -> Result<()> {
    out.write_all(&MAGIC)?;
    out.write_all(&[t.shape.rank() as u8])?;
    for d in 0..4 {
        out.write_all(&(t.shape.0[d] as u32).to_le_bytes())?;
    }
    out.write_all(&[T::DTYPE_TAG])?;
    match T::DTYPE_TAG {
        0 => {
            for v in &t.data {
                out.write_all(&(v.to_f64() as f32).to_le_bytes())?;
            }
        }
        _ => {
            for v in &t.data {
                out.write_all(&v.to_f64().to_le_bytes())?;
            }
        }
    }
    Ok(())
}

/// Read one tensor record, casting the stored dtype into `T`.
pub fn read_tensor<T: Scalar, R: Read>(input: &mut R) -> Result<Tensor<T>> {
    let mut magic = [0u8; 4];
    input.read_exact(&mut magic)?;
    if magic != MAGIC {
        return Err(Error::invalid(format!(
            "bad magic {magic:?}, expected DUT1"
        )));
    }
    let mut rank = [0u8; 1];
    input.read_exact(&mut rank)?;
    if rank[0] == 0 || rank[0] > 4 {
        return Err(Error::invalid(format!("bad rank {}", rank[0])));
    }
    let mut dims = [1usize; 4];
    for d in dims.iter_mut() {
        let mut b = [0u8; 4];
        input.read_exact(&mut b)?;
        *d = u32::from_le_bytes(b) as usize;
    }
    let mut dtype = [0u8; 1];
    input.read_exact(&mut dtype)?;
    let shape = Shape(dims);
    let numel = shape.numel();
    let mut data = Vec::with_capacity(numel);
    match dtype[0] {
        0 => {
            for _ in 0..numel {
                let mut b = [0u8; 4];
                input.read_exact(&mut b)?;
                data.push(T::from_f64(f32::from_le_bytes(b) as f64));
            }
        }
        1 => {
            for _ in 0..numel {
                let mut b = [0u8; 8];
                input.read_exact(&mut b)?;
                data.push(T::from_f64(f64::from_le_bytes(b)));
            }
        }
        t => return Err(Error::invalid(format!("unknown dtype tag {t}"))),
    }
    Tensor::new(shape, data)
}

pub fn save_tensor<T: Scalar>(path: &Path, t: &Tensor<T>) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_tensor(&mut f, t)
}

pub fn load_tensor<T: Scalar>(path: &Path) -> Result<Tensor<T>> {
    let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
    read_tensor(&mut f)
}
