//! Held-out evaluation: rendered-normal angular error and mesh Chamfer
//! distance.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use crate::camera::Vec3;
use crate::error::{Error, Result};
use crate::field::FieldParams;
use crate::mesh::{chamfer_points, sample_surface, Mesh};
use crate::render::render_view;
use crate::scene::dataset::{SceneDataset, Split, View, ViewTag};
use crate::scene::image::write_file;
use crate::scene::metrics::mean_angular_error;
use crate::scene::synthetic::Shape;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Debug)]
pub struct EvalOptions {
    pub samples_per_ray: usize,
    pub stride: u32,
    /// Render with this scale instead of each sample's own radius.
    pub constant_scale: Option<f64>,
    pub chamfer_samples: usize,
    pub seed: u64,
    /// Marching-cubes resolution of the ground-truth surface.
    pub truth_resolution: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            samples_per_ray: 64,
            stride: 1,
            constant_scale: None,
            chamfer_samples: 100_000,
            seed: 0,
            truth_resolution: 256,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ViewScore {
    pub name: String,
    pub tag: ViewTag,
    pub pixels: usize,
    pub mae_deg: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub views: Vec<ViewScore>,
    pub chamfer: Option<f64>,
    /// Chamfer restricted to the close-up region of the shape.
    pub chamfer_detail: Option<f64>,
    pub notes: Vec<String>,
    pub runtime_s: f64,
    /// Settings the report was produced with, one `key = value` per line.
    pub config: String,
}

impl EvalReport {
    /// Pixel-weighted MAE over the held-out views with `tag`, or all views.
    pub fn mae(&self, tag: Option<ViewTag>) -> Option<f64> {
        let (sum, n) = self
            .views
            .iter()
            .filter(|v| tag.is_none_or(|t| v.tag == t))
            .fold((0.0, 0usize), |(s, n), v| (s + v.mae_deg * v.pixels as f64, n + v.pixels));
        (n > 0).then(|| sum / n as f64)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("kind,name,tag,pixels,value\n");
        for v in &self.views {
            let _ = writeln!(s, "mae_deg,{},{},{},{}", v.name, v.tag, v.pixels, v.mae_deg);
        }
        for (name, tag) in [("all", None), ("regular", Some(ViewTag::Regular)), ("closeup", Some(ViewTag::CloseUp))] {
            if let Some(m) = self.mae(tag) {
                let _ = writeln!(s, "mae_deg_mean,{name},,,{m}");
            }
        }
        if let Some(c) = self.chamfer {
            let _ = writeln!(s, "chamfer,surface,,,{c}");
        }
        if let Some(c) = self.chamfer_detail {
            let _ = writeln!(s, "chamfer,detail,,,{c}");
        }
        let _ = writeln!(s, "runtime_s,,,,{}", self.runtime_s);
        s
    }

    pub fn to_text(&self) -> String {
        let mut s = String::from("Evaluation report\n\n");
        for v in &self.views {
            let _ = writeln!(s, "  {:<10} {:<8} {:>8} px  MAE {:8.3} deg", v.name, v.tag, v.pixels, v.mae_deg);
        }
        let fmt = |m: Option<f64>| m.map_or("n/a".to_string(), |m| format!("{m:.3} deg"));
        let _ = writeln!(s, "\nMAE (all held-out):  {}", fmt(self.mae(None)));
        let _ = writeln!(s, "MAE (regular):       {}", fmt(self.mae(Some(ViewTag::Regular))));
        let _ = writeln!(s, "MAE (close-up):      {}", fmt(self.mae(Some(ViewTag::CloseUp))));
        match self.chamfer {
            Some(c) => {
                let _ = writeln!(s, "Chamfer distance:    {c:.6}");
            }
            None => s.push_str("Chamfer distance:    omitted\n"),
        }
        if let Some(c) = self.chamfer_detail {
            let _ = writeln!(s, "Chamfer (detail):    {c:.6}");
        }
        let _ = writeln!(s, "Runtime:             {:.2} s", self.runtime_s);
        for n in &self.notes {
            let _ = writeln!(s, "Note: {n}");
        }
        s.push_str("\nSettings:\n");
        for line in self.config.lines() {
            let _ = writeln!(s, "  {line}");
        }
        s
    }

    /// Writes `report.csv` and `report.txt` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_file(&dir.join("report.csv"), self.to_csv().as_bytes())?;
        write_file(&dir.join("report.txt"), self.to_text().as_bytes())
    }
}

/// Angular error of the field's rendered normals on one view.
pub fn view_mae(params: &FieldParams, view: &View, opts: &EvalOptions) -> Result<(f64, usize)> {
    let rendered = render_view(params, &view.camera, opts.samples_per_ray, opts.stride, opts.constant_scale)?;
    let truth: Vec<Vec3> = rendered.pixels.iter().map(|&(r, c)| view.normals.get(r, c)).collect();
    let mask: Vec<bool> = rendered.pixels.iter().map(|&(r, c)| view.mask.get(r, c)).collect();
    let pixels = mask.iter().filter(|&&m| m).count();
    Ok((mean_angular_error(&rendered.normals, &truth, &mask)?, pixels))
}

/// Chamfer distance between a mesh and ground-truth surface points, on the
/// whole surface and inside the shape's close-up region.
pub fn surface_chamfer(mesh: &Mesh, truth: &[Vec3], shape: &Shape, samples: usize, seed: u64) -> Result<(f64, Option<f64>)> {
    let pts = sample_surface(mesh, samples, &mut ChaCha8Rng::seed_from_u64(seed))?;
    let all = chamfer_points(&pts, truth)?;
    let a: Vec<Vec3> = pts.iter().copied().filter(|p| shape.in_detail_region(p)).collect();
    let b: Vec<Vec3> = truth.iter().copied().filter(|p| shape.in_detail_region(p)).collect();
    let detail = if a.is_empty() || b.is_empty() { None } else { Some(chamfer_points(&a, &b)?) };
    Ok((all, detail))
}

/// Scores `params` on the held-out views of `dataset`, and `mesh` against the
/// analytic surface of the dataset's shape when both are available.
pub fn evaluate(params: &FieldParams, mesh: Option<&Mesh>, dataset: &SceneDataset, opts: &EvalOptions) -> Result<EvalReport> {
    let start = Instant::now();
    let mut views = Vec::new();
    for view in dataset.views_in(Split::HeldOut) {
        if view.mask.count() == 0 {
            continue;
        }
        let (mae, pixels) = view_mae(params, view, opts)?;
        log::info!("{}: MAE {mae:.3} deg over {pixels} pixels", view.name);
        views.push(ViewScore {
            name: view.name.clone(),
            tag: view.tag,
            pixels,
            mae_deg: mae,
        });
    }
    let mut notes = Vec::new();
    if views.is_empty() {
        notes.push("dataset has no held-out views with foreground; MAE omitted".into());
    }

    let shape = dataset.shape.as_deref().map(str::parse::<Shape>).transpose().ok().flatten();
    let (mut chamfer, mut chamfer_detail) = (None, None);
    match (mesh, shape) {
        (None, _) => notes.push("no mesh given; Chamfer omitted".into()),
        (Some(_), None) => notes.push("dataset has no analytic ground truth; Chamfer omitted".into()),
        (Some(m), Some(_)) if m.is_empty() => notes.push("extracted mesh is empty; Chamfer omitted".into()),
        (Some(m), Some(s)) => {
            let truth = s.surface_samples(opts.chamfer_samples, opts.seed ^ 0x5eed, opts.truth_resolution)?;
            let (c, d) = surface_chamfer(m, &truth, &s, opts.chamfer_samples, opts.seed)?;
            chamfer = Some(c);
            chamfer_detail = d;
        }
    }
    let config = format!(
        "shape = {}\nsamples_per_ray = {}\nstride = {}\nconstant_scale = {}\nchamfer_samples = {}\nseed = {}\ntruth_resolution = {}",
        dataset.shape.as_deref().unwrap_or("none"),
        opts.samples_per_ray,
        opts.stride,
        opts.constant_scale.map_or("none".to_string(), |s| s.to_string()),
        opts.chamfer_samples,
        opts.seed,
        opts.truth_resolution
    );
    Ok(EvalReport {
        views,
        chamfer,
        chamfer_detail,
        notes,
        runtime_s: start.elapsed().as_secs_f64(),
        config,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{marching_cubes, FnSource, Grid, ScaleAssignment};
    use crate::scene::synthetic::{generate_synthetic_scene, SceneSpec};

    #[test]
    fn ground_truth_mesh_against_itself_is_near_zero() {
        let shape = Shape::Sphere;
        let a = ScaleAssignment::constant(Grid::new(128).unwrap(), 64, 1e-3).unwrap();
        let mesh = marching_cubes(&FnSource(|p: &Vec3, _: f64| shape.sdf(p)), &a).unwrap();
        let truth = shape.surface_samples(100_000, 1, 128).unwrap();
        let (c, d) = surface_chamfer(&mesh, &truth, &shape, 100_000, 2).unwrap();
        // Point-sampling noise alone at this density is about 3e-3.
        assert!(c < 5e-3, "{c}");
        assert!(d.unwrap() < 5e-3);
    }

    #[test]
    fn analytic_normals_against_themselves_score_zero() {
        let truth = vec![Vec3::new(0.0, 0.6, 0.8); 5];
        assert_eq!(mean_angular_error(&truth, &truth, &[true; 5]).unwrap(), 0.0);
    }

    #[test]
    fn report_lists_views_and_omits_missing_chamfer() {
        let spec = SceneSpec {
            regular: 2,
            heldout_regular: 2,
            resolution: 12,
            supersampling: 1,
            ..SceneSpec::default()
        };
        let ds = generate_synthetic_scene(&spec).unwrap();
        let config = crate::field::tests::mini_config();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let params = FieldParams::geometric_init(&config, 0.5, &mut rng).unwrap();
        let opts = EvalOptions {
            samples_per_ray: 16,
            ..EvalOptions::default()
        };
        let report = evaluate(&params, None, &ds, &opts).unwrap();
        assert_eq!(report.views.len(), 2);
        assert!(report.chamfer.is_none());
        assert!(report.notes.iter().any(|n| n.contains("Chamfer omitted")));
        let m = report.mae(None).unwrap();
        assert!((0.0..=180.0).contains(&m));
        // A sphere-initialized field already points roughly the right way.
        assert!(m < 30.0, "{m}");
        let csv = report.to_csv();
        assert!(csv.starts_with("kind,name,tag,pixels,value\n"));
        assert_eq!(csv.lines().filter(|l| l.starts_with("mae_deg,")).count(), 2);
        let dir = tempfile::tempdir().unwrap();
        report.save(dir.path()).unwrap();
        let text = std::fs::read_to_string(dir.path().join("report.txt")).unwrap();
        assert!(text.contains("Chamfer distance:    omitted"));
    }
}
