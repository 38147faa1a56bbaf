//! Raw attention dump.
//!
//! Layout (integers and floats little-endian):
//!
//! ```text
//! magic   4 bytes  "ATTN"
//! u32 x3  layers, heads, n
//! f32 ..  maps in layer-major, then head, then row-major n x n order
//! ```
//!
//! Round-trips are bit-exact.

use std::io::{Read, Write};

use kvfunnel_core::{Error, ForwardTrace, Matrix, Result};

const MAGIC: &[u8; 4] = b"ATTN";

pub fn write_attention<W: Write>(mut out: W, trace: &ForwardTrace) -> Result<()> {
    out.write_all(MAGIC)?;
    for value in [
        trace.num_layers() as u32,
        trace.num_heads() as u32,
        trace.seq_len() as u32,
    ] {
        out.write_all(&value.to_le_bytes())?;
    }
    for l in 0..trace.num_layers() {
        for h in 0..trace.num_heads() {
            for &x in trace.attention(l, h).data() {
                out.write_all(&x.to_le_bytes())?;
            }
        }
    }
    Ok(())
}

/// Read a dump back as `[layer][head]` matrices.
pub fn read_attention<R: Read>(mut input: R) -> Result<Vec<Vec<Matrix>>> {
    let mut magic = [0u8; 4];
    input.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format(format!("bad magic {magic:02x?}, expected \"ATTN\"")));
    }
    let mut read_u32 = || -> Result<u32> {
        let mut buf = [0u8; 4];
        input.read_exact(&mut buf)?;
        Ok(u32::from_le_bytes(buf))
    };
    let layers = read_u32()? as usize;
    let heads = read_u32()? as usize;
    let n = read_u32()? as usize;

    let mut out = Vec::with_capacity(layers);
    let mut buf = [0u8; 4];
    for _ in 0..layers {
        let mut layer = Vec::with_capacity(heads);
        for _ in 0..heads {
            let mut data = vec![0.0f32; n * n];
            for x in &mut data {
                input.read_exact(&mut buf)?;
                *x = f32::from_le_bytes(buf);
            }
            layer.push(Matrix::from_vec(n, n, data)?);
        }
        out.push(layer);
    }
    Ok(out)
}
