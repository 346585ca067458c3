use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{FedError, Result};
use crate::model::params::{ParamSet, Partition};
use crate::numerics::Tensor;

const MAGIC: &[u8; 8] = b"FTCKPT01";

#[derive(Serialize, Deserialize)]
struct Entry {
    name: String,
    shape: Vec<usize>,
    tag: Partition,
}

/// Writes `MAGIC | u64 header length | JSON header | little-endian f64 payload`.
pub fn write_checkpoint<W: Write>(theta: &ParamSet, mut out: W) -> std::io::Result<()> {
    let header: Vec<Entry> = theta
        .iter()
        .map(|(name, tag, t)| Entry {
            name: name.to_owned(),
            shape: t.shape().to_vec(),
            tag,
        })
        .collect();
    let json = serde_json::to_vec(&header).expect("header serialises");
    out.write_all(MAGIC)?;
    out.write_all(&(json.len() as u64).to_le_bytes())?;
    out.write_all(&json)?;
    for (_, _, t) in theta.iter() {
        for v in t.data() {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_checkpoint<R: Read>(mut input: R) -> Result<ParamSet> {
    let mut bytes = Vec::new();
    input
        .read_to_end(&mut bytes)
        .map_err(|e| FedError::io("<checkpoint>", e))?;
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(FedError::manifest("magic", "not a checkpoint file"));
    }
    let len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let header_end = 16usize
        .checked_add(len)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| FedError::manifest("header", "truncated header"))?;
    let header: Vec<Entry> = serde_json::from_slice(&bytes[16..header_end])
        .map_err(|e| FedError::manifest("header", e.to_string()))?;
    let mut payload = bytes[header_end..].chunks_exact(8);
    let mut theta = ParamSet::new();
    for entry in header {
        let n: usize = entry.shape.iter().product();
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            let chunk = payload
                .next()
                .ok_or_else(|| FedError::manifest(entry.name.clone(), "payload too short"))?;
            data.push(f64::from_le_bytes(chunk.try_into().unwrap()));
        }
        let t = Tensor::new(entry.shape, data)
            .map_err(|e| FedError::manifest(entry.name.clone(), e.to_string()))?;
        theta.insert(entry.name, entry.tag, t);
    }
    if payload.next().is_some() || !payload.remainder().is_empty() {
        return Err(FedError::manifest("payload", "trailing bytes after last tensor"));
    }
    Ok(theta)
}

pub fn save_checkpoint(theta: &ParamSet, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| FedError::io(path, e))?;
    write_checkpoint(theta, std::io::BufWriter::new(file)).map_err(|e| FedError::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<ParamSet> {
    let file = std::fs::File::open(path).map_err(|e| FedError::io(path, e))?;
    read_checkpoint(std::io::BufReader::new(file))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_bit_exact() {
        let mut p = ParamSet::new();
        p.insert("a", Partition::Body, Tensor::new(vec![2], vec![0.1, -3.5e-300]).unwrap());
        p.insert("b.running_var", Partition::NormStats, Tensor::new(vec![1, 1], vec![7.0]).unwrap());
        let mut buf = Vec::new();
        write_checkpoint(&p, &mut buf).unwrap();
        assert_eq!(read_checkpoint(&buf[..]).unwrap(), p);
        buf.push(0);
        assert!(read_checkpoint(&buf[..]).is_err());
    }
}
