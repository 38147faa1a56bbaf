//! Weight file serialization.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic   4 bytes  "TKVW"
//! u32     version (1)
//! u32 x6  num_layers, num_heads, head_dim, model_dim, vocab_size, max_context
//! u64     seed
//! f32 ..  embedding (vocab x d), per layer Wq Wk Wv Wo (d x d each),
//!         unembedding (d x vocab), row-major little-endian
//! ```
//!
//! Round-trips are bit-exact.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::math::Matrix;
use crate::model::{LayerWeights, ModelConfig, ModelWeights};

const MAGIC: &[u8; 4] = b"TKVW";
const VERSION: u32 = 1;

pub fn write_weights<W: Write>(mut out: W, weights: &ModelWeights) -> Result<()> {
    let config = weights.config();
    out.write_all(MAGIC)?;
    for value in [
        VERSION,
        config.num_layers as u32,
        config.num_heads as u32,
        config.head_dim as u32,
        config.model_dim as u32,
        config.vocab_size as u32,
        config.max_context as u32,
    ] {
        out.write_all(&value.to_le_bytes())?;
    }
    out.write_all(&config.seed.to_le_bytes())?;

    let mut write_matrix = |m: &Matrix| -> Result<()> {
        for &x in m.data() {
            out.write_all(&x.to_le_bytes())?;
        }
        Ok(())
    };
    write_matrix(weights.embedding())?;
    for layer in weights.layers() {
        write_matrix(&layer.wq)?;
        write_matrix(&layer.wk)?;
        write_matrix(&layer.wv)?;
        write_matrix(&layer.wo)?;
    }
    write_matrix(weights.unembedding())?;
    Ok(())
}

pub fn read_weights<R: Read>(mut input: R) -> Result<ModelWeights> {
    let mut magic = [0u8; 4];
    input.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format(format!("bad magic {magic:02x?}, expected \"TKVW\"")));
    }
    let read_u32 = |input: &mut R| -> Result<u32> {
        let mut buf = [0u8; 4];
        input.read_exact(&mut buf)?;
        Ok(u32::from_le_bytes(buf))
    };
    let version = read_u32(&mut input)?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let num_layers = read_u32(&mut input)? as usize;
    let num_heads = read_u32(&mut input)? as usize;
    let head_dim = read_u32(&mut input)? as usize;
    let model_dim = read_u32(&mut input)? as usize;
    let vocab_size = read_u32(&mut input)? as usize;
    let max_context = read_u32(&mut input)? as usize;
    let mut seed_buf = [0u8; 8];
    input.read_exact(&mut seed_buf)?;
    let seed = u64::from_le_bytes(seed_buf);

    let config = ModelConfig::new(num_layers, num_heads, head_dim, vocab_size, seed)?
        .with_max_context(max_context);
    if config.model_dim != model_dim {
        return Err(Error::Format(format!(
            "stored model_dim {model_dim} does not match heads x head_dim = {}",
            config.model_dim
        )));
    }

    let read_matrix = |input: &mut R, rows: usize, cols: usize| -> Result<Matrix> {
        let mut data = vec![0.0f32; rows * cols];
        let mut buf = [0u8; 4];
        for x in &mut data {
            input.read_exact(&mut buf)?;
            *x = f32::from_le_bytes(buf);
        }
        Matrix::from_vec(rows, cols, data)
    };

    let d = config.model_dim;
    let embedding = read_matrix(&mut input, vocab_size, d)?;
    let mut layers = Vec::with_capacity(num_layers);
    for _ in 0..num_layers {
        layers.push(LayerWeights {
            wq: read_matrix(&mut input, d, d)?,
            wk: read_matrix(&mut input, d, d)?,
            wv: read_matrix(&mut input, d, d)?,
            wo: read_matrix(&mut input, d, d)?,
        });
    }
    let unembedding = read_matrix(&mut input, d, vocab_size)?;

    Ok(ModelWeights::from_parts(config, embedding, layers, unembedding))
}

pub fn save_weights<P: AsRef<Path>>(path: P, weights: &ModelWeights) -> Result<()> {
    write_weights(BufWriter::new(File::create(path)?), weights)
}

pub fn load_weights<P: AsRef<Path>>(path: P) -> Result<ModelWeights> {
    read_weights(BufReader::new(File::open(path)?))
}
