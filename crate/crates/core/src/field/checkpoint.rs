//! Binary parameter checkpoints: magic, version, element width, JSON config,
//! then the raw little-endian parameter payload and optional Adam moments.

use std::io::{Read, Write};

use super::adam::{AdamConfig, AdamState};
use super::net::{FieldConfig, FieldNet};
use crate::error::{Error, Result};
use crate::scalar::Real;

const MAGIC: &[u8; 8] = b"FIELDNET";
const VERSION: u32 = 1;

fn bad(m: impl Into<String>) -> Error {
    Error::Parse { path: "<field checkpoint>".into(), message: m.into() }
}

fn width<T: Real>() -> u32 {
    std::mem::size_of::<T>() as u32
}

pub fn write_field<T: Real, W: Write>(net: &FieldNet<T>, adam: Option<&AdamState>, mut w: W) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&width::<T>().to_le_bytes())?;
    let cfg = serde_json::to_vec(net.config())?;
    w.write_all(&(cfg.len() as u64).to_le_bytes())?;
    w.write_all(&cfg)?;
    w.write_all(&(net.num_params() as u64).to_le_bytes())?;
    for &p in net.params() {
        if width::<T>() == 4 {
            w.write_all(&(p.as_f64() as f32).to_le_bytes())?;
        } else {
            w.write_all(&p.as_f64().to_le_bytes())?;
        }
    }
    match adam {
        None => w.write_all(&[0u8])?,
        Some(a) => {
            w.write_all(&[1u8])?;
            w.write_all(&serde_json::to_string(&a.config)?.len().to_le_bytes())?;
            w.write_all(serde_json::to_string(&a.config)?.as_bytes())?;
            w.write_all(&a.step.to_le_bytes())?;
            for x in a.m.iter().chain(&a.v) {
                w.write_all(&x.to_le_bytes())?;
            }
        }
    }
    Ok(())
}

pub fn read_field<T: Real, R: Read>(mut r: R) -> Result<(FieldNet<T>, Option<AdamState>)> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(bad("bad magic"));
    }
    let mut b4 = [0u8; 4];
    let mut b8 = [0u8; 8];
    r.read_exact(&mut b4)?;
    if u32::from_le_bytes(b4) != VERSION {
        return Err(bad("unsupported version"));
    }
    r.read_exact(&mut b4)?;
    let w = u32::from_le_bytes(b4);
    if w != width::<T>() {
        return Err(bad(format!("checkpoint stores {w}-byte parameters, expected {}", width::<T>())));
    }
    r.read_exact(&mut b8)?;
    let mut cfg = vec![0u8; u64::from_le_bytes(b8) as usize];
    r.read_exact(&mut cfg)?;
    let cfg: FieldConfig = serde_json::from_slice(&cfg)?;
    r.read_exact(&mut b8)?;
    let n = u64::from_le_bytes(b8) as usize;
    let mut params = Vec::with_capacity(n);
    for _ in 0..n {
        if w == 4 {
            r.read_exact(&mut b4)?;
            params.push(T::lit(f32::from_le_bytes(b4) as f64));
        } else {
            r.read_exact(&mut b8)?;
            params.push(T::lit(f64::from_le_bytes(b8)));
        }
    }
    // parameters are overwritten below, so the init RNG does not matter
    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
    let mut net = FieldNet::new(cfg, &mut rng)?;
    net.set_params(params)?;
    let mut flag = [0u8; 1];
    r.read_exact(&mut flag)?;
    let adam = if flag[0] == 1 {
        r.read_exact(&mut b8)?;
        let mut c = vec![0u8; u64::from_le_bytes(b8) as usize];
        r.read_exact(&mut c)?;
        let config: AdamConfig = serde_json::from_slice(&c)?;
        r.read_exact(&mut b8)?;
        let step = u64::from_le_bytes(b8);
        let mut vals = vec![0.0; 2 * n];
        for x in &mut vals {
            r.read_exact(&mut b8)?;
            *x = f64::from_le_bytes(b8);
        }
        let v = vals.split_off(n);
        Some(AdamState { config, step, m: vals, v })
    } else {
        None
    };
    Ok((net, adam))
}
