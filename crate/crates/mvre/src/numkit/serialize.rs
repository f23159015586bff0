use std::io::{Read, Write};

use super::tensor::Tensor;
use crate::{Error, Result};

const MAGIC: &[u8; 4] = b"MVRE";
const VERSION: u32 = 1;

/// Write parameter tensors in the flat binary layout:
/// magic "MVRE", version u32, then per tensor rank u32, dims u32 x rank,
/// f64 data little-endian.
pub fn write_params<W: Write>(out: &mut W, params: &[&Tensor]) -> Result<()> {
    out.write_all(MAGIC)?;
    out.write_all(&VERSION.to_le_bytes())?;
    out.write_all(&(params.len() as u32).to_le_bytes())?;
    for t in params {
        out.write_all(&(t.shape().len() as u32).to_le_bytes())?;
        for &d in t.shape() {
            out.write_all(&(d as u32).to_le_bytes())?;
        }
        for &v in t.data() {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_params<R: Read>(input: &mut R) -> Result<Vec<Tensor>> {
    let mut magic = [0u8; 4];
    input.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Artifact("bad parameter file magic".into()));
    }
    let version = read_u32(input)?;
    if version != VERSION {
        return Err(Error::Artifact(format!("unsupported version {version}")));
    }
    let count = read_u32(input)? as usize;
    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        let rank = read_u32(input)? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(read_u32(input)? as usize);
        }
        let n: usize = shape.iter().product();
        let mut data = vec![0.0; n];
        let mut buf = [0u8; 8];
        for v in &mut data {
            input.read_exact(&mut buf)?;
            *v = f64::from_le_bytes(buf);
        }
        tensors.push(Tensor::new(shape, data)?);
    }
    Ok(tensors)
}

fn read_u32<R: Read>(input: &mut R) -> Result<u32> {
    let mut buf = [0u8; 4];
    input.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}
