//! Binary checkpoint format for trained parameters.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic   4 bytes  "BSVC"
//! version u32      format version (1)
//! id_len  u32      problem id length, then that many UTF-8 bytes
//! state_dim u32, noise_dim u32, width_y u32, width_z u32
//! time_scale f64
//! seed    u64      training seed
//! count   u32      number of tensors
//! per tensor, in canonical parameter order:
//!   name_len u32, name bytes,
//!   ndim u32, dims u32 each,
//!   values f64 each (row-major)
//! ```

use crate::error::{Error, Result};
use crate::net::{MlpParams, NetConfig, NetworkParams};
use crate::tensor::Tensor;
use std::io::{Read, Write};
use std::path::Path;

const MAGIC: &[u8; 4] = b"BSVC";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointMeta {
    pub problem_id: String,
    pub seed: u64,
}

pub fn save(path: &Path, params: &NetworkParams, meta: &CheckpointMeta) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    let id = meta.problem_id.as_bytes();
    w.write_all(&(id.len() as u32).to_le_bytes())?;
    w.write_all(id)?;
    for v in [
        params.state_dim as u32,
        params.noise_dim as u32,
        params.config.width_y as u32,
        params.config.width_z as u32,
    ] {
        w.write_all(&v.to_le_bytes())?;
    }
    w.write_all(&params.config.time_scale.to_le_bytes())?;
    w.write_all(&meta.seed.to_le_bytes())?;
    let named = params.named();
    w.write_all(&(named.len() as u32).to_le_bytes())?;
    for (name, tensor) in named {
        let nb = name.as_bytes();
        w.write_all(&(nb.len() as u32).to_le_bytes())?;
        w.write_all(nb)?;
        w.write_all(&(tensor.shape().len() as u32).to_le_bytes())?;
        for &d in tensor.shape() {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        for &v in tensor.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load(path: &Path) -> Result<(NetworkParams, CheckpointMeta)> {
    let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
    let bad = |msg: &str| Error::Checkpoint(msg.to_string());

    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|_| bad("truncated header"))?;
    if &magic != MAGIC {
        return Err(bad("bad magic"));
    }
    if read_u32(&mut r)? != VERSION {
        return Err(bad("unsupported version"));
    }
    let id_len = read_u32(&mut r)? as usize;
    if id_len > 4096 {
        return Err(bad("implausible id length"));
    }
    let mut id = vec![0u8; id_len];
    r.read_exact(&mut id).map_err(|_| bad("truncated id"))?;
    let problem_id = String::from_utf8(id).map_err(|_| bad("id not UTF-8"))?;
    let state_dim = read_u32(&mut r)? as usize;
    let noise_dim = read_u32(&mut r)? as usize;
    let width_y = read_u32(&mut r)? as usize;
    let width_z = read_u32(&mut r)? as usize;
    let time_scale = read_f64(&mut r)?;
    let mut seed_bytes = [0u8; 8];
    r.read_exact(&mut seed_bytes).map_err(|_| bad("truncated seed"))?;
    let seed = u64::from_le_bytes(seed_bytes);

    let config = NetConfig {
        width_y,
        width_z,
        time_scale,
    };
    let expected = NetworkParams::zeros(state_dim, noise_dim, config);
    let expected_named: Vec<(String, Vec<usize>)> = expected
        .named()
        .iter()
        .map(|(n, t)| (n.clone(), t.shape().to_vec()))
        .collect();

    let count = read_u32(&mut r)? as usize;
    if count != expected_named.len() {
        return Err(bad("tensor count mismatch"));
    }
    let mut tensors = Vec::with_capacity(count);
    for (exp_name, exp_shape) in &expected_named {
        let name_len = read_u32(&mut r)? as usize;
        if name_len > 4096 {
            return Err(bad("implausible name length"));
        }
        let mut nb = vec![0u8; name_len];
        r.read_exact(&mut nb).map_err(|_| bad("truncated name"))?;
        let name = String::from_utf8(nb).map_err(|_| bad("name not UTF-8"))?;
        if &name != exp_name {
            return Err(bad(&format!("unexpected tensor `{name}`, wanted `{exp_name}`")));
        }
        let ndim = read_u32(&mut r)? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(read_u32(&mut r)? as usize);
        }
        if &shape != exp_shape {
            return Err(bad(&format!("shape mismatch for `{name}`")));
        }
        let len: usize = shape.iter().product();
        let mut data = vec![0.0f64; len];
        for v in data.iter_mut() {
            *v = read_f64(&mut r)?;
        }
        tensors.push(Tensor::new(shape, data));
    }
    let mut extra = [0u8; 1];
    if r.read(&mut extra)? != 0 {
        return Err(bad("trailing bytes"));
    }

    // Reassemble: 4 weights then 4 biases per net, y first.
    let mut it = tensors.into_iter();
    let mut take_mlp = || -> MlpParams {
        let weights: Vec<Tensor> = (0..4).map(|_| it.next().unwrap()).collect();
        let biases: Vec<Tensor> = (0..4).map(|_| it.next().unwrap()).collect();
        MlpParams { weights, biases }
    };
    let y_net = take_mlp();
    let z_net = take_mlp();
    let params = NetworkParams {
        y_net,
        z_net,
        state_dim,
        noise_dim,
        config,
    };
    Ok((params, CheckpointMeta { problem_id, seed }))
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)
        .map_err(|_| Error::Checkpoint("truncated u32".into()))?;
    Ok(u32::from_le_bytes(b))
}

fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)
        .map_err(|_| Error::Checkpoint("truncated f64".into()))?;
    Ok(f64::from_le_bytes(b))
}
