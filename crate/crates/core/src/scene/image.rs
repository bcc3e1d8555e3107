//! Image containers and their on-disk formats.
//!
//! Normal maps use a raw float container:
//!
//! ```text
//! magic     4 bytes  "NMAP"
//! version   u32      1
//! width     u32
//! height    u32
//! channels  u32      3
//! data      f32 × width × height × channels, row-major, little-endian
//! ```
//!
//! Masks are binary PGM (`P5`, maxval 255); any nonzero byte is foreground.

use std::io::Write;
use std::path::Path;

use crate::camera::Vec3;
use crate::error::{Error, Result};

const NMAP_MAGIC: &[u8; 4] = b"NMAP";
const NMAP_VERSION: u32 = 1;

/// Per-pixel world-space normals, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct NormalMap {
    pub width: u32,
    pub height: u32,
    pub data: Vec<[f32; 3]>,
}

impl NormalMap {
    pub fn new(width: u32, height: u32) -> Self {
        NormalMap {
            width,
            height,
            data: vec![[0.0; 3]; width as usize * height as usize],
        }
    }

    pub fn get(&self, row: u32, col: u32) -> Vec3 {
        let v = self.data[(row * self.width + col) as usize];
        Vec3::new(v[0] as f64, v[1] as f64, v[2] as f64)
    }

    pub fn set(&mut self, row: u32, col: u32, n: &Vec3) {
        self.data[(row * self.width + col) as usize] = [n.x as f32, n.y as f32, n.z as f32];
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(20 + self.data.len() * 12);
        out.extend_from_slice(NMAP_MAGIC);
        for v in [NMAP_VERSION, self.width, self.height, 3] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for px in &self.data {
            for c in px {
                out.extend_from_slice(&c.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |d: &str| Error::format("normal map", d);
        if bytes.len() < 20 || &bytes[..4] != NMAP_MAGIC {
            return Err(bad("missing NMAP header"));
        }
        let word = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap());
        let (version, width, height, channels) = (word(0), word(1), word(2), word(3));
        if version != NMAP_VERSION {
            return Err(bad(&format!("unsupported version {version}")));
        }
        if channels != 3 {
            return Err(bad(&format!("expected 3 channels, found {channels}")));
        }
        let count = width as usize * height as usize;
        let body = &bytes[20..];
        if body.len() != count * 12 {
            return Err(bad(&format!(
                "{width}x{height} needs {} data bytes, found {}",
                count * 12,
                body.len()
            )));
        }
        let data = body
            .chunks_exact(12)
            .map(|c| {
                let f = |i: usize| f32::from_le_bytes(c[4 * i..4 * i + 4].try_into().unwrap());
                [f(0), f(1), f(2)]
            })
            .collect();
        Ok(NormalMap {
            width,
            height,
            data,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_file(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        NormalMap::from_bytes(&bytes).map_err(|e| with_path(e, path))
    }
}

/// Binary foreground mask, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Mask {
    pub width: u32,
    pub height: u32,
    pub data: Vec<bool>,
}

impl Mask {
    pub fn new(width: u32, height: u32) -> Self {
        Mask {
            width,
            height,
            data: vec![false; width as usize * height as usize],
        }
    }

    pub fn get(&self, row: u32, col: u32) -> bool {
        self.data[(row * self.width + col) as usize]
    }

    pub fn set(&mut self, row: u32, col: u32, v: bool) {
        self.data[(row * self.width + col) as usize] = v;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|v| **v).count()
    }

    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend(self.data.iter().map(|&v| if v { 255u8 } else { 0 }));
        out
    }

    pub fn from_pgm(bytes: &[u8]) -> Result<Self> {
        let bad = |d: String| Error::format("PGM mask", d);
        // Header: magic, width, height, maxval separated by whitespace, with
        // optional comments, then a single whitespace byte.
        let mut fields = Vec::new();
        let mut i = 0;
        while fields.len() < 4 {
            while i < bytes.len() && bytes[i].is_ascii_whitespace() {
                i += 1;
            }
            if i < bytes.len() && bytes[i] == b'#' {
                while i < bytes.len() && bytes[i] != b'\n' {
                    i += 1;
                }
                continue;
            }
            let start = i;
            while i < bytes.len() && !bytes[i].is_ascii_whitespace() {
                i += 1;
            }
            if start == i {
                return Err(bad("truncated header".into()));
            }
            fields.push(String::from_utf8_lossy(&bytes[start..i]).into_owned());
        }
        if fields[0] != "P5" {
            return Err(bad(format!("expected P5, found {}", fields[0])));
        }
        let num = |s: &str| s.parse::<u32>().map_err(|e| bad(format!("{s:?}: {e}")));
        let (width, height, maxval) = (num(&fields[1])?, num(&fields[2])?, num(&fields[3])?);
        if maxval == 0 || maxval > 255 {
            return Err(bad(format!("unsupported maxval {maxval}")));
        }
        let body = bytes.get(i + 1..).unwrap_or_default();
        let count = width as usize * height as usize;
        if body.len() != count {
            return Err(bad(format!("expected {count} pixels, found {}", body.len())));
        }
        Ok(Mask {
            width,
            height,
            data: body.iter().map(|&b| b != 0).collect(),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_file(path, &self.to_pgm())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Mask::from_pgm(&bytes).map_err(|e| with_path(e, path))
    }
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(bytes).map_err(|e| Error::io(path, e))
}

fn with_path(e: Error, path: &Path) -> Error {
    match e {
        Error::Format { what, detail } => Error::Format {
            what,
            detail: format!("{}: {detail}", path.display()),
        },
        other => other,
    }
}
