//! Minimal binary tensor container for model checkpoints.
//!
//! Layout (little-endian):
//!   magic "PLRCKPT1"
//!   u32 entry count, then per entry:
//!     u16 name length, name bytes (utf-8),
//!     u8 rank, u64 per dimension, f32 data in row-major order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::ArrayD;

use crate::arch::Classifier;
use crate::error::{Error, Result};
use crate::generator::Generator;

const MAGIC: &[u8; 8] = b"PLRCKPT1";

pub fn save_named(path: &Path, entries: &[(String, ArrayD<f32>)]) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&(entries.len() as u32).to_le_bytes())?;
    for (name, tensor) in entries {
        let name_bytes = name.as_bytes();
        w.write_all(&(name_bytes.len() as u16).to_le_bytes())?;
        w.write_all(name_bytes)?;
        w.write_all(&[tensor.ndim() as u8])?;
        for d in tensor.shape() {
            w.write_all(&(*d as u64).to_le_bytes())?;
        }
        let std_layout = tensor.as_standard_layout();
        for v in std_layout.iter() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_named(path: &Path) -> Result<Vec<(String, ArrayD<f32>)>> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::input(format!("{} is not a checkpoint file", path.display())));
    }
    let mut buf4 = [0u8; 4];
    r.read_exact(&mut buf4)?;
    let count = u32::from_le_bytes(buf4) as usize;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let mut buf2 = [0u8; 2];
        r.read_exact(&mut buf2)?;
        let name_len = u16::from_le_bytes(buf2) as usize;
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|_| Error::input("bad checkpoint name".to_string()))?;
        let mut rank = [0u8; 1];
        r.read_exact(&mut rank)?;
        let mut dims = Vec::with_capacity(rank[0] as usize);
        let mut buf8 = [0u8; 8];
        for _ in 0..rank[0] {
            r.read_exact(&mut buf8)?;
            dims.push(u64::from_le_bytes(buf8) as usize);
        }
        let len: usize = dims.iter().product();
        let mut data = vec![0f32; len];
        for v in data.iter_mut() {
            r.read_exact(&mut buf4)?;
            *v = f32::from_le_bytes(buf4);
        }
        let tensor = ArrayD::from_shape_vec(dims, data)
            .map_err(|e| Error::input(format!("bad checkpoint tensor shape: {e}")))?;
        out.push((name, tensor));
    }
    Ok(out)
}

pub fn save_classifier(path: &Path, classifier: &Classifier) -> Result<()> {
    let mut entries = Vec::new();
    classifier.visit_params(|name, p| entries.push((name, p.value.clone())));
    save_named(path, &entries)
}

pub fn load_classifier(path: &Path, classifier: &mut Classifier) -> Result<()> {
    let entries = load_named(path)?;
    assign(entries, |f| classifier.visit_params_mut(f))
}

pub fn save_generator(path: &Path, generator: &Generator) -> Result<()> {
    let mut entries = Vec::new();
    generator.visit_params(|name, p| entries.push((name, p.value.clone())));
    save_named(path, &entries)
}

pub fn load_generator(path: &Path, generator: &mut Generator) -> Result<()> {
    let entries = load_named(path)?;
    assign(entries, |f| generator.visit_params_mut(f))
}

fn assign(
    entries: Vec<(String, ArrayD<f32>)>,
    visit: impl FnOnce(&mut dyn FnMut(String, &mut crate::nn::Param)),
) -> Result<()> {
    let map: std::collections::BTreeMap<String, ArrayD<f32>> = entries.into_iter().collect();
    let mut missing = Vec::new();
    let mut shape_errors = Vec::new();
    visit(&mut |name: String, p: &mut crate::nn::Param| match map.get(&name) {
        Some(t) if t.shape() == p.value.shape() => p.value.assign(t),
        Some(_) => shape_errors.push(name),
        None => missing.push(name),
    });
    if !missing.is_empty() || !shape_errors.is_empty() {
        return Err(Error::input(format!(
            "checkpoint mismatch; missing: {missing:?}, wrong shapes: {shape_errors:?}"
        )));
    }
    Ok(())
}
