//! Mesh files.
//!
//! OBJ is written as plain `v`/`f` records. PLY is binary little-endian with
//! `double` coordinates and, when present, a `double scale` vertex property,
//! so a save and load reproduces the mesh bit for bit. The loader also reads
//! the other fixed-size PLY property types.

use std::fmt::Write as _;
use std::path::Path;

use super::Mesh;
use crate::camera::Vec3;
use crate::error::{Error, Result};
use crate::scene::image::write_file;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MeshFormat {
    Obj,
    Ply,
}

impl MeshFormat {
    /// Format implied by a `.obj` or `.ply` extension.
    pub fn from_path(path: &Path) -> Result<Self> {
        match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
            Some("obj") => Ok(MeshFormat::Obj),
            Some("ply") => Ok(MeshFormat::Ply),
            _ => Err(Error::Config(format!("{}: expected a .obj or .ply path", path.display()))),
        }
    }
}

pub fn to_obj(mesh: &Mesh) -> String {
    let mut s = String::with_capacity(32 * (mesh.vertices.len() + mesh.triangles.len()));
    for v in &mesh.vertices {
        let _ = writeln!(s, "v {} {} {}", v.x, v.y, v.z);
    }
    for t in &mesh.triangles {
        let _ = writeln!(s, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1);
    }
    s
}

/// Reads `v` and `f` records; polygons are fanned into triangles and
/// `v/vt/vn` face references keep only the position index.
pub fn from_obj(text: &str) -> Result<Mesh> {
    let bad = |line: usize, what: &str| Error::format("OBJ", format!("line {}: {what}", line + 1));
    let mut mesh = Mesh::default();
    for (n, line) in text.lines().enumerate() {
        let mut it = line.split_whitespace();
        match it.next() {
            Some("v") => {
                let c: Vec<f64> = it
                    .take(3)
                    .map(|t| t.parse().map_err(|_| bad(n, "bad coordinate")))
                    .collect::<Result<_>>()?;
                if c.len() != 3 {
                    return Err(bad(n, "vertex needs three coordinates"));
                }
                mesh.vertices.push(Vec3::new(c[0], c[1], c[2]));
            }
            Some("f") => {
                let idx: Vec<u32> = it
                    .map(|t| {
                        let i: i64 = t.split('/').next().unwrap_or("").parse().map_err(|_| bad(n, "bad index"))?;
                        let resolved = if i < 0 { mesh.vertices.len() as i64 + i } else { i - 1 };
                        u32::try_from(resolved).map_err(|_| bad(n, "index out of range"))
                    })
                    .collect::<Result<_>>()?;
                if idx.len() < 3 {
                    return Err(bad(n, "face needs three vertices"));
                }
                for k in 1..idx.len() - 1 {
                    mesh.triangles.push([idx[0], idx[k], idx[k + 1]]);
                }
            }
            _ => {}
        }
    }
    mesh.validate()?;
    Ok(mesh)
}

pub fn to_ply(mesh: &Mesh) -> Vec<u8> {
    let mut header = format!(
        "ply\nformat binary_little_endian 1.0\nelement vertex {}\nproperty double x\nproperty double y\nproperty double z\n",
        mesh.vertices.len()
    );
    if mesh.scales.is_some() {
        header.push_str("property double scale\n");
    }
    let _ = write!(
        header,
        "element face {}\nproperty list uchar uint vertex_indices\nend_header\n",
        mesh.triangles.len()
    );
    let mut out = header.into_bytes();
    for (i, v) in mesh.vertices.iter().enumerate() {
        for c in v.iter() {
            out.extend_from_slice(&c.to_le_bytes());
        }
        if let Some(s) = &mesh.scales {
            out.extend_from_slice(&s[i].to_le_bytes());
        }
    }
    for t in &mesh.triangles {
        out.push(3);
        for i in t {
            out.extend_from_slice(&i.to_le_bytes());
        }
    }
    out
}

#[derive(Clone, Copy, Debug)]
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
    fn parse(name: &str) -> Option<Self> {
        Some(match name {
            "char" | "int8" => Scalar::I8,
            "uchar" | "uint8" => Scalar::U8,
            "short" | "int16" => Scalar::I16,
            "ushort" | "uint16" => Scalar::U16,
            "int" | "int32" => Scalar::I32,
            "uint" | "uint32" => Scalar::U32,
            "float" | "float32" => Scalar::F32,
            "double" | "float64" => Scalar::F64,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            Scalar::I8 | Scalar::U8 => 1,
            Scalar::I16 | Scalar::U16 => 2,
            Scalar::I32 | Scalar::U32 | Scalar::F32 => 4,
            Scalar::F64 => 8,
        }
    }

    fn read(self, b: &[u8]) -> f64 {
        match self {
            Scalar::I8 => b[0] as i8 as f64,
            Scalar::U8 => b[0] as f64,
            Scalar::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::I32 => i32::from_le_bytes(b[..4].try_into().expect("4 bytes")) as f64,
            Scalar::U32 => u32::from_le_bytes(b[..4].try_into().expect("4 bytes")) as f64,
            Scalar::F32 => f32::from_le_bytes(b[..4].try_into().expect("4 bytes")) as f64,
            Scalar::F64 => f64::from_le_bytes(b[..8].try_into().expect("8 bytes")),
        }
    }
}

/// Reads a binary little-endian PLY with a vertex element (x, y, z and an
/// optional `scale`) followed by a face element with one index list.
pub fn from_ply(bytes: &[u8]) -> Result<Mesh> {
    let bad = |detail: String| Error::format("PLY", detail);
    let end = b"end_header\n";
    let header_len = bytes
        .windows(end.len())
        .position(|w| w == end)
        .ok_or_else(|| bad("missing end_header".into()))?
        + end.len();
    let header = std::str::from_utf8(&bytes[..header_len]).map_err(|_| bad("header is not UTF-8".into()))?;
    let mut lines = header.lines();
    if lines.next() != Some("ply") {
        return Err(bad("missing ply magic".into()));
    }

    let mut vertex_count = None;
    let mut face_count = None;
    let mut vertex_props: Vec<(String, Scalar)> = Vec::new();
    let mut face_list: Option<(Scalar, Scalar)> = None;
    let mut current = "";
    for line in lines {
        let tok: Vec<&str> = line.split_whitespace().collect();
        match tok.as_slice() {
            ["format", "binary_little_endian", _] => {}
            ["format", other, _] => return Err(bad(format!("unsupported format {other}"))),
            ["comment", ..] | ["obj_info", ..] | ["end_header"] => {}
            ["element", name, n] => {
                let n: usize = n.parse().map_err(|_| bad(format!("bad count in {line:?}")))?;
                current = if *name == "vertex" {
                    vertex_count = Some(n);
                    "vertex"
                } else if *name == "face" {
                    face_count = Some(n);
                    "face"
                } else {
                    return Err(bad(format!("unsupported element {name}")));
                };
            }
            ["property", "list", count, index, _] if current == "face" => {
                let c = Scalar::parse(count).ok_or_else(|| bad(format!("bad type {count}")))?;
                let i = Scalar::parse(index).ok_or_else(|| bad(format!("bad type {index}")))?;
                face_list = Some((c, i));
            }
            ["property", ty, name] if current == "vertex" => {
                let t = Scalar::parse(ty).ok_or_else(|| bad(format!("bad type {ty}")))?;
                vertex_props.push((name.to_string(), t));
            }
            _ => return Err(bad(format!("unsupported header line {line:?}"))),
        }
    }
    let nv = vertex_count.ok_or_else(|| bad("no vertex element".into()))?;
    let nf = face_count.unwrap_or(0);
    let prop = |name: &str| vertex_props.iter().position(|(n, _)| n == name);
    let (px, py, pz) = match (prop("x"), prop("y"), prop("z")) {
        (Some(x), Some(y), Some(z)) => (x, y, z),
        _ => return Err(bad("vertex lacks x, y or z".into())),
    };
    let ps = prop("scale");

    let mut at = header_len;
    let mut take = |n: usize| -> Result<&[u8]> {
        let s = bytes.get(at..at + n).ok_or_else(|| bad("truncated body".into()))?;
        at += n;
        Ok(s)
    };
    let mut mesh = Mesh {
        vertices: Vec::with_capacity(nv),
        triangles: Vec::with_capacity(nf),
        scales: ps.map(|_| Vec::with_capacity(nv)),
    };
    let mut values = vec![0.0; vertex_props.len()];
    for _ in 0..nv {
        for (v, (_, t)) in values.iter_mut().zip(&vertex_props) {
            *v = t.read(take(t.size())?);
        }
        mesh.vertices.push(Vec3::new(values[px], values[py], values[pz]));
        if let (Some(s), Some(k)) = (mesh.scales.as_mut(), ps) {
            s.push(values[k]);
        }
    }
    if nf > 0 {
        let (ct, it) = face_list.ok_or_else(|| bad("face element lacks an index list".into()))?;
        for _ in 0..nf {
            let n = ct.read(take(ct.size())?) as usize;
            let idx: Vec<u32> = (0..n).map(|_| take(it.size()).map(|b| it.read(b) as u32)).collect::<Result<_>>()?;
            if n < 3 {
                return Err(bad(format!("face with {n} vertices")));
            }
            for k in 1..n - 1 {
                mesh.triangles.push([idx[0], idx[k], idx[k + 1]]);
            }
        }
    }
    if at != bytes.len() {
        return Err(bad(format!("{} trailing bytes", bytes.len() - at)));
    }
    mesh.validate()?;
    Ok(mesh)
}

pub fn save_mesh(mesh: &Mesh, path: &Path, format: MeshFormat) -> Result<()> {
    mesh.validate()?;
    match format {
        MeshFormat::Obj => write_file(path, to_obj(mesh).as_bytes()),
        MeshFormat::Ply => write_file(path, &to_ply(mesh)),
    }
}

/// Loads a mesh, picking the format from the extension.
pub fn load_mesh(path: &Path) -> Result<Mesh> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let with_path = |e: Error| match e {
        Error::Format { what, detail } => Error::Format {
            what,
            detail: format!("{}: {detail}", path.display()),
        },
        other => other,
    };
    match MeshFormat::from_path(path)? {
        MeshFormat::Obj => {
            let text = String::from_utf8(bytes).map_err(|_| Error::format("OBJ", format!("{}: not UTF-8", path.display())))?;
            from_obj(&text).map_err(with_path)
        }
        MeshFormat::Ply => from_ply(&bytes).map_err(with_path),
    }
}

/// Colour for `t ∈ [0, 1]`: purple for fine scales through teal to yellow.
pub fn ramp(t: f64) -> [u8; 3] {
    const STOPS: [[f64; 3]; 3] = [[68.0, 1.0, 84.0], [33.0, 145.0, 140.0], [253.0, 231.0, 37.0]];
    let t = t.clamp(0.0, 1.0) * 2.0;
    let k = (t.floor() as usize).min(1);
    let f = t - k as f64;
    std::array::from_fn(|c| (STOPS[k][c] + f * (STOPS[k + 1][c] - STOPS[k][c])).round() as u8)
}

/// Writes the mesh as a PLY coloured by per-vertex scale, logarithmic over
/// `[scale_min, scale_max]`.
pub fn write_scale_ply(mesh: &Mesh, path: &Path, scale_min: f64, scale_max: f64) -> Result<()> {
    mesh.validate()?;
    let scales = mesh
        .scales
        .as_ref()
        .ok_or_else(|| Error::Config("mesh carries no per-vertex scale".into()))?;
    let span = (scale_max / scale_min).ln();
    let mut out = format!(
        "ply\nformat binary_little_endian 1.0\nelement vertex {}\nproperty float x\nproperty float y\nproperty float z\n\
         property uchar red\nproperty uchar green\nproperty uchar blue\nelement face {}\n\
         property list uchar uint vertex_indices\nend_header\n",
        mesh.vertices.len(),
        mesh.triangles.len()
    )
    .into_bytes();
    for (v, &s) in mesh.vertices.iter().zip(scales) {
        for c in v.iter() {
            out.extend_from_slice(&(*c as f32).to_le_bytes());
        }
        let t = if span > 0.0 { (s / scale_min).ln() / span } else { 0.0 };
        out.extend_from_slice(&ramp(t));
    }
    for t in &mesh.triangles {
        out.push(3);
        for i in t {
            out.extend_from_slice(&i.to_le_bytes());
        }
    }
    write_file(path, &out)
}
