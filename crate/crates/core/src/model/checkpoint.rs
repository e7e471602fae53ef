//! Binary checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "MICN" | version: u32 | header_len: u32 | header: UTF-8 key=value lines
//! n_tensors: u32 | per tensor: name_len: u32, name, ndims: u32, dims: u64 * ndims, data: f32 * prod(dims)
//! ```
//!
//! Tensors are named `<part>.<layer>.<field>`, batch-norm running statistics
//! included. Values are stored as `f32`.

use std::collections::BTreeMap;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use super::net::{ModelParams, Part};
use super::{HyperParams, Method};
use crate::error::{Error, Result};
use crate::math::{Layer, SeedTree};

pub const MAGIC: &[u8; 4] = b"MICN";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub method: Method,
    pub hp: HyperParams,
    pub step: usize,
    pub params: ModelParams,
}

fn tensors(params: &ModelParams) -> Vec<(String, Vec<usize>, Vec<f64>)> {
    let mut out = Vec::new();
    for part in Part::ALL {
        for (i, layer) in params.net(part).layers().iter().enumerate() {
            let name = |field: &str| format!("{}.{i}.{field}", part.name());
            match layer {
                Layer::Affine { weight, bias } => {
                    out.push((name("weight"), vec![weight.rows(), weight.cols()], weight.data().to_vec()));
                    out.push((name("bias"), vec![bias.len()], bias.clone()));
                }
                Layer::BatchNorm {
                    gamma,
                    beta,
                    running_mean,
                    running_var,
                } => {
                    for (f, v) in [
                        ("gamma", gamma),
                        ("beta", beta),
                        ("running_mean", running_mean),
                        ("running_var", running_var),
                    ] {
                        out.push((name(f), vec![v.len()], v.clone()));
                    }
                }
                Layer::Relu { .. } | Layer::LeakyRelu { .. } => {}
            }
        }
    }
    out
}

fn slot<'a>(params: &'a mut ModelParams, name: &str) -> Option<(Vec<usize>, &'a mut [f64])> {
    let mut it = name.splitn(3, '.');
    let part = Part::from_name(it.next()?)?;
    let i: usize = it.next()?.parse().ok()?;
    let field = it.next()?;
    let layer = params.net_mut(part).layers_mut().get_mut(i)?;
    match (layer, field) {
        (Layer::Affine { weight, .. }, "weight") => {
            let shape = vec![weight.rows(), weight.cols()];
            Some((shape, weight.data_mut()))
        }
        (Layer::Affine { bias, .. }, "bias") => Some((vec![bias.len()], bias.as_mut_slice())),
        (Layer::BatchNorm { gamma, .. }, "gamma") => Some((vec![gamma.len()], gamma.as_mut_slice())),
        (Layer::BatchNorm { beta, .. }, "beta") => Some((vec![beta.len()], beta.as_mut_slice())),
        (Layer::BatchNorm { running_mean, .. }, "running_mean") => {
            Some((vec![running_mean.len()], running_mean.as_mut_slice()))
        }
        (Layer::BatchNorm { running_var, .. }, "running_var") => {
            Some((vec![running_var.len()], running_var.as_mut_slice()))
        }
        _ => None,
    }
}

pub fn write_checkpoint(w: &mut impl Write, ckpt: &Checkpoint) -> Result<()> {
    let p = &ckpt.params;
    let mut header = format!(
        "method={}\nstep={}\nfeature_dim={}\nfp_bits={}\n",
        ckpt.method,
        ckpt.step,
        p.feature_dim(),
        p.fp_bits()
    );
    for (k, v) in ckpt.hp.to_kv() {
        header.push_str(&format!("{k}={v}\n"));
    }
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(header.len() as u32).to_le_bytes())?;
    w.write_all(header.as_bytes())?;
    let ts = tensors(p);
    w.write_all(&(ts.len() as u32).to_le_bytes())?;
    for (name, dims, data) in ts {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(dims.len() as u32).to_le_bytes())?;
        for d in dims {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(data.len() * 4);
        for v in data {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    Ok(())
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

fn read_exact(r: &mut impl Read, n: usize, what: &str) -> Result<Vec<u8>> {
    let mut buf = vec![0u8; n];
    r.read_exact(&mut buf)
        .map_err(|_| bad(format!("truncated while reading {what}")))?;
    Ok(buf)
}

fn read_u32(r: &mut impl Read, what: &str) -> Result<u32> {
    let b = read_exact(r, 4, what)?;
    Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")))
}

fn read_u64(r: &mut impl Read, what: &str) -> Result<u64> {
    let b = read_exact(r, 8, what)?;
    Ok(u64::from_le_bytes(b.try_into().expect("8 bytes")))
}

pub fn read_checkpoint(r: &mut impl Read) -> Result<Checkpoint> {
    if read_exact(r, 4, "magic")? != MAGIC {
        return Err(bad("not a checkpoint (bad magic)"));
    }
    let version = read_u32(r, "version")?;
    if version != VERSION {
        return Err(bad(format!("unsupported version {version} (expected {VERSION})")));
    }
    let len = read_u32(r, "header length")? as usize;
    let header = String::from_utf8(read_exact(r, len, "header")?)
        .map_err(|_| bad("header is not UTF-8"))?;
    let mut kv = BTreeMap::new();
    for line in header.lines() {
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| bad(format!("header line without '=': {line}")))?;
        kv.insert(k.to_string(), v.to_string());
    }
    let field = |k: &str| kv.get(k).ok_or_else(|| bad(format!("header lacks `{k}`")));
    let method: Method = field("method")?.parse()?;
    let num = |k: &str| -> Result<usize> {
        field(k)?
            .parse()
            .map_err(|_| bad(format!("header `{k}` is not an integer")))
    };
    let step = num("step")?;
    let feature_dim = num("feature_dim")?;
    let fp_bits = num("fp_bits")?;
    let hp = HyperParams::from_kv(&kv)?;
    let mut params = ModelParams::new(feature_dim, fp_bits, &hp, &SeedTree::new(0))?;
    let expected: Vec<String> = tensors(&params).into_iter().map(|t| t.0).collect();

    let n = read_u32(r, "tensor count")? as usize;
    if n != expected.len() {
        return Err(bad(format!("{n} tensors, architecture needs {}", expected.len())));
    }
    let mut seen = std::collections::BTreeSet::new();
    for _ in 0..n {
        let name_len = read_u32(r, "tensor name length")? as usize;
        let name = String::from_utf8(read_exact(r, name_len, "tensor name")?)
            .map_err(|_| bad("tensor name is not UTF-8"))?;
        let ndims = read_u32(r, "tensor rank")? as usize;
        let dims = (0..ndims)
            .map(|_| read_u64(r, "tensor shape").map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let (shape, dst) = slot(&mut params, &name).ok_or_else(|| bad(format!("unexpected tensor {name}")))?;
        if shape != dims {
            return Err(bad(format!("tensor {name}: shape {dims:?}, expected {shape:?}")));
        }
        let raw = read_exact(r, dst.len() * 4, &name)?;
        for (d, c) in dst.iter_mut().zip(raw.chunks_exact(4)) {
            *d = f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64;
        }
        if !seen.insert(name.clone()) {
            return Err(bad(format!("duplicate tensor {name}")));
        }
    }
    if !params.is_finite() {
        return Err(bad("non-finite parameter values"));
    }
    Ok(Checkpoint {
        method,
        hp,
        step,
        params,
    })
}

/// Write to a sibling temporary file, then rename over `path`.
pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = std::io::BufWriter::new(fs::File::create(&tmp)?);
        write_checkpoint(&mut f, ckpt)?;
        f.flush()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let mut f = std::io::BufReader::new(fs::File::open(path)?);
    read_checkpoint(&mut f)
}
