//! OBJ (v/f records) and PLY (ASCII, binary little-endian) readers and writers.
//!
//! Face indices are 0-based in memory and 1-based in OBJ files. Coordinates are
//! written with Rust's shortest round-trip float formatting (OBJ, ASCII PLY) or as
//! raw `f64` (binary PLY), so a save/load cycle reproduces them bit for bit.

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use super::TriMesh;
use crate::error::{Error, Result};
use crate::geom::Vec3;
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlyFormat {
    Ascii,
    BinaryLittleEndian,
}

fn parse_err(path: &Path, message: impl Into<String>) -> Error {
    Error::Parse { path: path.to_path_buf(), message: message.into() }
}

fn extension(path: &Path) -> String {
    path.extension().and_then(|e| e.to_str()).unwrap_or("").to_ascii_lowercase()
}

pub fn load_mesh<T: Real>(path: impl AsRef<Path>) -> Result<TriMesh<T>> {
    let path = path.as_ref();
    match extension(path).as_str() {
        "obj" => read_obj(path),
        "ply" => read_ply(path),
        other => Err(parse_err(path, format!("unsupported mesh extension '{other}'"))),
    }
}

/// Writes OBJ or binary PLY depending on the extension.
pub fn save_mesh<T: Real>(mesh: &TriMesh<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    match extension(path).as_str() {
        "obj" => write_obj(mesh, path),
        "ply" => write_ply(mesh, path, PlyFormat::BinaryLittleEndian),
        other => Err(parse_err(path, format!("unsupported mesh extension '{other}'"))),
    }
}

pub fn read_obj<T: Real>(path: &Path) -> Result<TriMesh<T>> {
    let reader = BufReader::new(fs::File::open(path)?);
    let mut vertices = Vec::new();
    let mut polys: Vec<Vec<i64>> = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let mut tok = line.split_whitespace();
        match tok.next() {
            Some("v") => {
                let mut c = [0f64; 3];
                for slot in &mut c {
                    let s = tok.next().ok_or_else(|| parse_err(path, format!("line {}: short vertex", lineno + 1)))?;
                    *slot = s
                        .parse()
                        .map_err(|_| parse_err(path, format!("line {}: bad coordinate '{s}'", lineno + 1)))?;
                }
                vertices.push(Vec3::<f64>::from_f64(c));
            }
            Some("f") => {
                let mut poly = Vec::new();
                for t in tok {
                    let first = t.split('/').next().unwrap_or("");
                    let idx: i64 = first
                        .parse()
                        .map_err(|_| parse_err(path, format!("line {}: bad face index '{t}'", lineno + 1)))?;
                    // negative indices are relative to the vertices read so far
                    let abs = if idx < 0 { vertices.len() as i64 + idx } else { idx - 1 };
                    poly.push(abs);
                }
                if poly.len() < 3 {
                    return Err(parse_err(path, format!("line {}: face with fewer than 3 vertices", lineno + 1)));
                }
                polys.push(poly);
            }
            _ => {}
        }
    }
    let n = vertices.len() as i64;
    let mut faces = Vec::new();
    for poly in polys {
        if let Some(&bad) = poly.iter().find(|&&i| i < 0 || i >= n) {
            return Err(Error::Topology(format!("face references vertex {} of {n}", bad + 1)));
        }
        for k in 1..poly.len() - 1 {
            faces.push([poly[0] as u32, poly[k] as u32, poly[k + 1] as u32]);
        }
    }
    TriMesh::new(vertices.into_iter().map(|v| v.cast()).collect(), faces)
}

pub fn write_obj<T: Real>(mesh: &TriMesh<T>, path: &Path) -> Result<()> {
    let mut out = std::io::BufWriter::new(fs::File::create(path)?);
    for v in &mesh.vertices {
        let [x, y, z] = v.to_f64();
        writeln!(out, "v {x:?} {y:?} {z:?}")?;
    }
    for f in &mesh.faces {
        writeln!(out, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1)?;
    }
    out.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Scalar {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl Scalar {
    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "char" | "int8" => Self::I8,
            "uchar" | "uint8" => Self::U8,
            "short" | "int16" => Self::I16,
            "ushort" | "uint16" => Self::U16,
            "int" | "int32" => Self::I32,
            "uint" | "uint32" => Self::U32,
            "float" | "float32" => Self::F32,
            "double" | "float64" => Self::F64,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            Self::I8 | Self::U8 => 1,
            Self::I16 | Self::U16 => 2,
            Self::I32 | Self::U32 | Self::F32 => 4,
            Self::F64 => 8,
        }
    }

    fn read_le(self, b: &[u8]) -> f64 {
        match self {
            Self::I8 => b[0] as i8 as f64,
            Self::U8 => b[0] as f64,
            Self::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            Self::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            Self::I32 => i32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Self::U32 => u32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Self::F32 => f32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Self::F64 => f64::from_le_bytes(b[..8].try_into().unwrap()),
        }
    }
}

#[derive(Debug, Clone)]
enum Property {
    Scalar { name: String, ty: Scalar },
    List { name: String, count: Scalar, item: Scalar },
}

#[derive(Debug, Clone)]
struct Element {
    name: String,
    count: usize,
    props: Vec<Property>,
}

pub fn read_ply<T: Real>(path: &Path) -> Result<TriMesh<T>> {
    let mut reader = BufReader::new(fs::File::open(path)?);
    let mut line = String::new();
    reader.read_line(&mut line)?;
    if line.trim() != "ply" {
        return Err(parse_err(path, "missing 'ply' magic"));
    }
    let mut format = None;
    let mut elements: Vec<Element> = Vec::new();
    loop {
        line.clear();
        if reader.read_line(&mut line)? == 0 {
            return Err(parse_err(path, "unterminated header"));
        }
        let t: Vec<&str> = line.split_whitespace().collect();
        match t.as_slice() {
            ["format", "ascii", _] => format = Some(PlyFormat::Ascii),
            ["format", "binary_little_endian", _] => format = Some(PlyFormat::BinaryLittleEndian),
            ["format", other, _] => return Err(parse_err(path, format!("unsupported PLY format '{other}'"))),
            ["element", name, count] => elements.push(Element {
                name: name.to_string(),
                count: count.parse().map_err(|_| parse_err(path, "bad element count"))?,
                props: Vec::new(),
            }),
            ["property", "list", count, item, name] => {
                let el = elements.last_mut().ok_or_else(|| parse_err(path, "property before element"))?;
                let count = Scalar::parse(count).ok_or_else(|| parse_err(path, "bad list count type"))?;
                let item = Scalar::parse(item).ok_or_else(|| parse_err(path, "bad list item type"))?;
                el.props.push(Property::List { name: name.to_string(), count, item });
            }
            ["property", ty, name] => {
                let el = elements.last_mut().ok_or_else(|| parse_err(path, "property before element"))?;
                let ty = Scalar::parse(ty).ok_or_else(|| parse_err(path, format!("bad property type '{ty}'")))?;
                el.props.push(Property::Scalar { name: name.to_string(), ty });
            }
            ["end_header"] => break,
            _ => {}
        }
    }
    let format = format.ok_or_else(|| parse_err(path, "missing format line"))?;

    let mut vertices: Vec<Vec3<f64>> = Vec::new();
    let mut faces: Vec<[u32; 3]> = Vec::new();
    let mut raw_faces: Vec<Vec<i64>> = Vec::new();

    let mut ascii_tokens: Option<std::vec::IntoIter<String>> = None;
    if format == PlyFormat::Ascii {
        let mut rest = String::new();
        reader.read_to_string(&mut rest)?;
        let toks: Vec<String> = rest.split_whitespace().map(str::to_string).collect();
        ascii_tokens = Some(toks.into_iter());
    }
    let mut next_value = |ty: Scalar, reader: &mut BufReader<fs::File>| -> Result<f64> {
        match ascii_tokens.as_mut() {
            Some(it) => {
                let tok = it.next().ok_or_else(|| parse_err(path, "unexpected end of data"))?;
                tok.parse::<f64>().map_err(|_| parse_err(path, format!("bad value '{tok}'")))
            }
            None => {
                let mut buf = [0u8; 8];
                reader
                    .read_exact(&mut buf[..ty.size()])
                    .map_err(|_| parse_err(path, "unexpected end of binary data"))?;
                Ok(ty.read_le(&buf))
            }
        }
    };

    for el in &elements {
        for _ in 0..el.count {
            let mut xyz = [0f64; 3];
            let mut list: Vec<i64> = Vec::new();
            for p in &el.props {
                match p {
                    Property::Scalar { name, ty } => {
                        let v = next_value(*ty, &mut reader)?;
                        match name.as_str() {
                            "x" => xyz[0] = v,
                            "y" => xyz[1] = v,
                            "z" => xyz[2] = v,
                            _ => {}
                        }
                    }
                    Property::List { name, count, item } => {
                        let n = next_value(*count, &mut reader)? as usize;
                        let mut vals = Vec::with_capacity(n);
                        for _ in 0..n {
                            vals.push(next_value(*item, &mut reader)? as i64);
                        }
                        if name == "vertex_indices" || name == "vertex_index" {
                            list = vals;
                        }
                    }
                }
            }
            match el.name.as_str() {
                "vertex" => vertices.push(Vec3::from_f64(xyz)),
                "face" => raw_faces.push(list),
                _ => {}
            }
        }
    }
    let n = vertices.len() as i64;
    for poly in raw_faces {
        if poly.len() < 3 {
            return Err(parse_err(path, "face with fewer than 3 vertices"));
        }
        if let Some(&bad) = poly.iter().find(|&&i| i < 0 || i >= n) {
            return Err(Error::Topology(format!("face references vertex {bad} of {n}")));
        }
        for k in 1..poly.len() - 1 {
            faces.push([poly[0] as u32, poly[k] as u32, poly[k + 1] as u32]);
        }
    }
    TriMesh::new(vertices.into_iter().map(|v| v.cast()).collect(), faces)
}

pub fn write_ply<T: Real>(mesh: &TriMesh<T>, path: &Path, format: PlyFormat) -> Result<()> {
    let mut out = std::io::BufWriter::new(fs::File::create(path)?);
    let fmt = match format {
        PlyFormat::Ascii => "ascii",
        PlyFormat::BinaryLittleEndian => "binary_little_endian",
    };
    write!(
        out,
        "ply\nformat {fmt} 1.0\nelement vertex {}\nproperty double x\nproperty double y\nproperty double z\n\
         element face {}\nproperty list uchar int vertex_indices\nend_header\n",
        mesh.vertices.len(),
        mesh.faces.len()
    )?;
    match format {
        PlyFormat::Ascii => {
            for v in &mesh.vertices {
                let [x, y, z] = v.to_f64();
                writeln!(out, "{x:?} {y:?} {z:?}")?;
            }
            for f in &mesh.faces {
                writeln!(out, "3 {} {} {}", f[0], f[1], f[2])?;
            }
        }
        PlyFormat::BinaryLittleEndian => {
            for v in &mesh.vertices {
                for c in v.to_f64() {
                    out.write_all(&c.to_le_bytes())?;
                }
            }
            for f in &mesh.faces {
                out.write_all(&[3u8])?;
                for &i in f {
                    out.write_all(&(i as i32).to_le_bytes())?;
                }
            }
        }
    }
    out.flush()?;
    Ok(())
}
