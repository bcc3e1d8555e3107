//! Multi-view normal datasets and their directory layout.
//!
//! ```text
//! dataset/
//!   manifest.txt     format version, shape id, normalization, one line per view
//!   cameras.txt      camera records (see `camera::write_cameras`)
//!   <view>.nmap      world-space normal map
//!   <view>.pgm       foreground mask
//! ```
//!
//! Manifest lines, `#` starts a comment:
//!
//! ```text
//! format 1
//! shape <id>                                  (optional)
//! normalization <cx> <cy> <cz> <scale>        world = center + scale · normalized
//! view <name> <regular|closeup> <train|heldout> <normal file> <mask file>
//! ```

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::camera::{cast_cone, load_cameras, write_cameras, Camera, Vec3};
use crate::error::{Error, Result};
use crate::scene::image::{write_file, Mask, NormalMap};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ViewTag {
    Regular,
    CloseUp,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    HeldOut,
}

impl fmt::Display for ViewTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ViewTag::Regular => "regular",
            ViewTag::CloseUp => "closeup",
        })
    }
}

impl FromStr for ViewTag {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "regular" => Ok(ViewTag::Regular),
            "closeup" | "close-up" => Ok(ViewTag::CloseUp),
            _ => Err(Error::format("manifest", format!("unknown view tag {s:?}"))),
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::HeldOut => "heldout",
        })
    }
}

impl FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "heldout" | "held-out" => Ok(Split::HeldOut),
            _ => Err(Error::format("manifest", format!("unknown split {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct View {
    pub name: String,
    pub camera: Camera,
    pub normals: NormalMap,
    pub mask: Mask,
    pub tag: ViewTag,
    pub split: Split,
}

/// Maps normalized scene coordinates back to the capture frame.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Normalization {
    pub center: Vec3,
    pub scale: f64,
}

impl Default for Normalization {
    fn default() -> Self {
        Normalization {
            center: Vec3::zeros(),
            scale: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneDataset {
    pub shape: Option<String>,
    pub normalization: Normalization,
    pub views: Vec<View>,
}

impl SceneDataset {
    pub fn validate(&self) -> Result<()> {
        if self.views.is_empty() {
            return Err(Error::Empty("dataset has no views".into()));
        }
        for v in &self.views {
            let (w, h) = (v.camera.width, v.camera.height);
            if (v.normals.width, v.normals.height) != (w, h) || (v.mask.width, v.mask.height) != (w, h) {
                return Err(Error::format(
                    "dataset",
                    format!(
                        "view {}: camera {w}x{h}, normals {}x{}, mask {}x{}",
                        v.name, v.normals.width, v.normals.height, v.mask.width, v.mask.height
                    ),
                ));
            }
            for (i, (n, &m)) in v.normals.data.iter().zip(&v.mask.data).enumerate() {
                if !m {
                    continue;
                }
                let len = n.iter().map(|c| (*c as f64).powi(2)).sum::<f64>().sqrt();
                if (len - 1.0).abs() > 1e-4 {
                    return Err(Error::format(
                        "dataset",
                        format!("view {}: normal at pixel {i} has length {len}", v.name),
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn views_in(&self, split: Split) -> impl Iterator<Item = &View> {
        self.views.iter().filter(move |v| v.split == split)
    }

    /// Smallest and largest sphere radius over every training cone within the
    /// scene cube.
    pub fn scale_range(&self) -> Result<(f64, f64)> {
        let mut lo = f64::INFINITY;
        let mut hi = 0.0f64;
        for v in self.views_in(Split::Train) {
            let cam = &v.camera;
            for row in 0..cam.height {
                for col in 0..cam.width {
                    let cone = cast_cone(cam, row, col)?;
                    if let Some((near, far)) = cone.scene_range() {
                        lo = lo.min(cone.radius_at(near)?);
                        hi = hi.max(cone.radius_at(far)?);
                    }
                }
            }
        }
        if !(lo.is_finite() && hi > 0.0) {
            return Err(Error::Empty("no training ray intersects the scene cube".into()));
        }
        Ok((lo, hi))
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut manifest = String::from("# scalenorm dataset\nformat 1\n");
        if let Some(shape) = &self.shape {
            manifest.push_str(&format!("shape {shape}\n"));
        }
        let n = &self.normalization;
        manifest.push_str(&format!(
            "normalization {} {} {} {}\n",
            n.center.x, n.center.y, n.center.z, n.scale
        ));
        for v in &self.views {
            let (nf, mf) = (format!("{}.nmap", v.name), format!("{}.pgm", v.name));
            v.normals.save(&dir.join(&nf))?;
            v.mask.save(&dir.join(&mf))?;
            manifest.push_str(&format!("view {} {} {} {nf} {mf}\n", v.name, v.tag, v.split));
        }
        write_file(&dir.join("manifest.txt"), manifest.as_bytes())?;
        let cams = write_cameras(self.views.iter().map(|v| (v.name.as_str(), &v.camera)));
        write_file(&dir.join("cameras.txt"), cams.as_bytes())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join("manifest.txt");
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let cameras = load_cameras(&dir.join("cameras.txt"))?;
        let mut dataset = SceneDataset {
            shape: None,
            normalization: Normalization::default(),
            views: Vec::new(),
        };
        let mut format_seen = false;
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = |d: String| Error::format("manifest", format!("line {}: {d}", lineno + 1));
            let fields: Vec<&str> = line.split_whitespace().collect();
            match fields[0] {
                "format" => {
                    if fields.get(1) != Some(&"1") {
                        return Err(bad(format!("unsupported format {:?}", fields.get(1))));
                    }
                    format_seen = true;
                }
                "shape" if fields.len() == 2 => dataset.shape = Some(fields[1].to_string()),
                "normalization" if fields.len() == 5 => {
                    let v: Vec<f64> = fields[1..]
                        .iter()
                        .map(|f| f.parse().map_err(|e| bad(format!("{f:?}: {e}"))))
                        .collect::<Result<_>>()?;
                    dataset.normalization = Normalization {
                        center: Vec3::new(v[0], v[1], v[2]),
                        scale: v[3],
                    };
                }
                "view" if fields.len() == 6 => {
                    let name = fields[1];
                    let camera = cameras
                        .iter()
                        .find(|(n, _)| n == name)
                        .map(|(_, c)| c.clone())
                        .ok_or_else(|| bad(format!("view {name} has no camera record")))?;
                    let normals = NormalMap::load(&dir.join(fields[4])).map_err(|e| view_error(name, e))?;
                    let mask = Mask::load(&dir.join(fields[5])).map_err(|e| view_error(name, e))?;
                    dataset.views.push(View {
                        name: name.to_string(),
                        camera,
                        normals,
                        mask,
                        tag: fields[2].parse().map_err(|e: Error| bad(e.to_string()))?,
                        split: fields[3].parse().map_err(|e: Error| bad(e.to_string()))?,
                    });
                }
                _ => return Err(bad(format!("unrecognized line {line:?}"))),
            }
        }
        if !format_seen {
            return Err(Error::format("manifest", "missing format line"));
        }
        dataset.validate()?;
        Ok(dataset)
    }
}

fn view_error(name: &str, e: Error) -> Error {
    Error::format("dataset", format!("view {name}: {e}"))
}
