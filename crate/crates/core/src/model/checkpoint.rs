//! Weight checkpoint file: magic `SLBW`, format version, then one record
//! per parameter: name length (u32), UTF-8 name, rank (u32), dims (u32
//! each), and 32-bit little-endian values. Parameters appear in insertion
//! order, so a rewrite of the same set is byte-identical.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use crate::format::{self, FormatError, Reader};
use crate::nn::ParamSet;

const MAGIC: [u8; 4] = *b"SLBW";
const VERSION: u32 = 1;

pub fn write_checkpoint(params: &ParamSet, path: &Path) -> Result<(), FormatError> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&MAGIC)?;
    format::write_u32(&mut w, VERSION)?;
    for p in params.iter() {
        format::write_u32(&mut w, p.name.len() as u32)?;
        w.write_all(p.name.as_bytes())?;
        format::write_u32(&mut w, p.shape.len() as u32)?;
        for &d in &p.shape {
            format::write_u32(&mut w, d as u32)?;
        }
        let vals: Vec<f32> = p.data.iter().map(|&v| v as f32).collect();
        format::write_f32_slice(&mut w, &vals)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<ParamSet, FormatError> {
    let mut r = Reader::new(BufReader::new(File::open(path)?));
    r.magic(MAGIC)?;
    r.version(VERSION)?;
    let mut params = ParamSet::new();
    loop {
        let Some(first) = r.peek_byte()? else { break };
        let mut rest = [0u8; 3];
        r.read_exact(&mut rest)?;
        let name_len = u32::from_le_bytes([first, rest[0], rest[1], rest[2]]) as usize;
        let at = r.offset;
        let name_bytes = r.bytes(name_len)?;
        let name = String::from_utf8(name_bytes).map_err(|_| FormatError::InvalidField {
            offset: at,
            what: "parameter name is not UTF-8".into(),
        })?;
        let rank = r.u32()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32()? as usize);
        }
        let numel: usize = shape.iter().product();
        let vals = r.f32_vec(numel)?;
        params.insert(&name, shape, vals.iter().map(|&v| v as f64).collect());
    }
    Ok(params)
}
