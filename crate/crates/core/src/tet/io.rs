//! Little-endian binary container for tet grids.

use std::io::{Read, Write};
use std::path::Path;

use super::TetGrid;
use crate::error::{Error, Result};
use crate::geom::Vec3;
use crate::scalar::Real;

const MAGIC: &[u8; 8] = b"TETGRID\0";
const VERSION: u32 = 1;

pub fn write_grid<T: Real, W: Write>(grid: &TetGrid<T>, mut w: W) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(grid.vertices.len() as u64).to_le_bytes())?;
    w.write_all(&(grid.tets.len() as u64).to_le_bytes())?;
    w.write_all(&grid.level.to_le_bytes())?;
    for v in &grid.vertices {
        for c in v.to_f64() {
            w.write_all(&c.to_le_bytes())?;
        }
    }
    for t in &grid.tets {
        for i in t {
            w.write_all(&i.to_le_bytes())?;
        }
    }
    let mask: Vec<u8> = grid.surface_mask.iter().map(|&m| m as u8).collect();
    w.write_all(&mask)?;
    Ok(())
}

pub fn read_grid<T: Real, R: Read>(mut r: R) -> Result<TetGrid<T>> {
    let bad = |m: &str| Error::Parse { path: "<tet grid>".into(), message: m.into() };
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(bad("bad magic"));
    }
    let mut b4 = [0u8; 4];
    let mut b8 = [0u8; 8];
    r.read_exact(&mut b4)?;
    let version = u32::from_le_bytes(b4);
    if version != VERSION {
        return Err(bad(&format!("unsupported version {version}")));
    }
    r.read_exact(&mut b8)?;
    let nv = u64::from_le_bytes(b8) as usize;
    r.read_exact(&mut b8)?;
    let nt = u64::from_le_bytes(b8) as usize;
    r.read_exact(&mut b4)?;
    let level = u32::from_le_bytes(b4);
    let mut vertices = Vec::with_capacity(nv);
    for _ in 0..nv {
        let mut c = [0.0f64; 3];
        for x in &mut c {
            r.read_exact(&mut b8)?;
            *x = f64::from_le_bytes(b8);
        }
        vertices.push(Vec3::from_f64(c));
    }
    let mut tets = Vec::with_capacity(nt);
    for _ in 0..nt {
        let mut t = [0u32; 4];
        for i in &mut t {
            r.read_exact(&mut b4)?;
            *i = u32::from_le_bytes(b4);
            if *i as usize >= nv {
                return Err(bad("tet index out of range"));
            }
        }
        tets.push(t);
    }
    let mut mask = vec![0u8; nt];
    r.read_exact(&mut mask)?;
    let mut g = TetGrid::new(vertices, tets, level);
    g.surface_mask = mask.into_iter().map(|m| m != 0).collect();
    Ok(g)
}

pub fn save_grid<T: Real>(grid: &TetGrid<T>, path: impl AsRef<Path>) -> Result<()> {
    let f = std::fs::File::create(path)?;
    write_grid(grid, std::io::BufWriter::new(f))
}

pub fn load_grid<T: Real>(path: impl AsRef<Path>) -> Result<TetGrid<T>> {
    let f = std::fs::File::open(path)?;
    read_grid(std::io::BufReader::new(f))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::icosphere;
    use crate::tet::build_shell_grid;

    #[test]
    fn roundtrip() {
        let mut g = build_shell_grid(&icosphere::<f64>(1, 0.3), 10).unwrap();
        g.surface_mask[3] = true;
        let mut buf = Vec::new();
        write_grid(&g, &mut buf).unwrap();
        let h: TetGrid<f64> = read_grid(&buf[..]).unwrap();
        assert_eq!(g, h);
    }

    #[test]
    fn rejects_garbage() {
        assert!(read_grid::<f64, _>(&b"NOTAGRID00000000"[..]).is_err());
    }
}
