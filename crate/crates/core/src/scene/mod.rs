//! Deterministic synthetic multi-object scenes with instance masks, plus
//! their on-disk formats and dataset manifests.

mod formats;
mod manifest;

pub use formats::{read_image, read_segmentation, write_image, write_segmentation};
pub use manifest::{build_manifest, default_slots, Manifest, ManifestEntry};

use rand::seq::SliceRandom;
use rand::Rng;

use crate::format::FormatError;
use crate::image::ImageBuf;
use crate::metrics::Segmentation;
use crate::rng::stream;

pub type Result<T> = std::result::Result<T, SceneError>;

#[derive(Debug, thiserror::Error)]
pub enum SceneError {
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("invalid scene spec: {0}")]
    InvalidSpec(String),
    #[error("unpaired file: {stem} has no {missing}")]
    UnpairedFile { stem: String, missing: &'static str },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShapeKind {
    Disk,
    Square,
    Triangle,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BackgroundMode {
    Flat,
    Noise,
}

#[derive(Debug, Clone)]
pub struct SceneSpec {
    /// Square canvas side in pixels.
    pub image_size: usize,
    pub min_objects: usize,
    pub max_objects: usize,
    pub shapes: Vec<ShapeKind>,
    pub palette: Vec<[f32; 3]>,
    pub background: BackgroundMode,
    /// Object radius range as a fraction of the canvas side.
    pub min_radius_frac: f64,
    pub max_radius_frac: f64,
    /// Every object keeps at least this fraction of its area visible.
    pub min_visible_fraction: f64,
}

impl SceneSpec {
    pub fn desk() -> Self {
        SceneSpec {
            image_size: 32,
            min_objects: 2,
            max_objects: 4,
            shapes: vec![ShapeKind::Disk, ShapeKind::Square, ShapeKind::Triangle],
            palette: vec![
                [0.95, 0.25, 0.20],
                [0.20, 0.85, 0.30],
                [0.25, 0.40, 0.95],
                [0.95, 0.85, 0.20],
                [0.85, 0.30, 0.90],
                [0.20, 0.85, 0.90],
            ],
            background: BackgroundMode::Flat,
            min_radius_frac: 0.14,
            max_radius_frac: 0.26,
            min_visible_fraction: 0.4,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(SceneError::InvalidSpec(m));
        if self.min_objects == 0 || self.min_objects > self.max_objects {
            return fail(format!(
                "object range {}..={} invalid",
                self.min_objects, self.max_objects
            ));
        }
        if self.shapes.is_empty() || self.palette.is_empty() {
            return fail("shapes and palette must be non-empty".into());
        }
        if !(self.min_radius_frac > 0.0 && self.min_radius_frac <= self.max_radius_frac) {
            return fail("invalid radius range".into());
        }
        if self.max_radius_frac >= 0.5 {
            return fail("objects must fit inside the canvas".into());
        }
        if self.image_size < 8 {
            return fail("canvas too small".into());
        }
        if !(0.0..=1.0).contains(&self.min_visible_fraction) {
            return fail("min_visible_fraction must lie in [0, 1]".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct PlacedObject {
    pub kind: ShapeKind,
    pub cx: f64,
    pub cy: f64,
    pub radius: f64,
    pub color: [f32; 3],
}

impl PlacedObject {
    /// Membership test at a pixel center.
    pub fn covers(&self, px: usize, py: usize) -> bool {
        let x = px as f64 + 0.5;
        let y = py as f64 + 0.5;
        let (dx, dy) = (x - self.cx, y - self.cy);
        match self.kind {
            ShapeKind::Disk => dx * dx + dy * dy <= self.radius * self.radius,
            ShapeKind::Square => dx.abs() <= self.radius && dy.abs() <= self.radius,
            ShapeKind::Triangle => {
                // Upward equilateral triangle with circumradius r: vertices
                // (cx, cy - r) and (cx +- r*sqrt(3)/2, cy + r/2); tested by
                // half-plane signs.
                let s3 = 3.0f64.sqrt();
                let r = self.radius;
                let v0 = (self.cx, self.cy - r);
                let v1 = (self.cx + r * s3 / 2.0, self.cy + r / 2.0);
                let v2 = (self.cx - r * s3 / 2.0, self.cy + r / 2.0);
                let side = |a: (f64, f64), b: (f64, f64)| {
                    (b.0 - a.0) * (y - a.1) - (b.1 - a.1) * (x - a.0)
                };
                let d0 = side(v0, v1);
                let d1 = side(v1, v2);
                let d2 = side(v2, v0);
                (d0 >= 0.0 && d1 >= 0.0 && d2 >= 0.0) || (d0 <= 0.0 && d1 <= 0.0 && d2 <= 0.0)
            }
        }
    }

    fn pixel_count(&self, size: usize) -> usize {
        let mut count = 0;
        for y in 0..size {
            for x in 0..size {
                if self.covers(x, y) {
                    count += 1;
                }
            }
        }
        count
    }
}

#[derive(Debug, Clone)]
pub struct Scene {
    pub image: ImageBuf,
    pub seg: Segmentation,
    pub objects: Vec<PlacedObject>,
    /// How many whole-scene regenerations were needed before every object
    /// stayed sufficiently visible.
    pub subseed_bumps: u32,
}

const PLACEMENT_ATTEMPTS: usize = 100;

/// Generate one scene. Objects are drawn back to front with occlusion; the
/// label map assigns 0 to the background and `1..=n` to objects in draw
/// order. Deterministic in `(spec, seed)`; when an object cannot be placed
/// after 100 attempts the scene restarts from an incremented sub-seed.
pub fn generate_scene(spec: &SceneSpec, seed: u64) -> Result<Scene> {
    spec.validate()?;
    let size = spec.image_size;
    let mut bumps = 0u32;
    'regen: loop {
        let mut rng = stream(seed.wrapping_add(bumps as u64), "scene");
        let n = rng.random_range(spec.min_objects..=spec.max_objects);

        let mut colors: Vec<[f32; 3]> = spec.palette.clone();
        colors.shuffle(&mut rng);
        while colors.len() < n {
            colors.extend_from_slice(&spec.palette);
        }

        let mut objects: Vec<PlacedObject> = Vec::with_capacity(n);
        let mut areas: Vec<usize> = Vec::with_capacity(n);
        for i in 0..n {
            let mut placed = false;
            for _ in 0..PLACEMENT_ATTEMPTS {
                let radius = rng.random_range(
                    spec.min_radius_frac * size as f64..=spec.max_radius_frac * size as f64,
                );
                let cx = rng.random_range(radius..size as f64 - radius);
                let cy = rng.random_range(radius..size as f64 - radius);
                let kind = spec.shapes[rng.random_range(0..spec.shapes.len())];
                let candidate = PlacedObject { kind, cx, cy, radius, color: colors[i] };
                let area = candidate.pixel_count(size);
                if area < 8 {
                    continue;
                }
                // Earlier objects must stay sufficiently visible under the
                // new occluder, which is drawn on top.
                let mut trial = objects.clone();
                trial.push(candidate);
                if visibility_ok(&trial, &areas, area, size, spec.min_visible_fraction) {
                    objects.push(candidate);
                    areas.push(area);
                    placed = true;
                    break;
                }
            }
            if !placed {
                let _ = i;
                bumps += 1;
                continue 'regen;
            }
        }

        return Ok(render(spec, seed, objects, bumps));
    }
}

fn visibility_ok(
    objects: &[PlacedObject],
    areas: &[usize],
    new_area: usize,
    size: usize,
    min_fraction: f64,
) -> bool {
    let mut visible = vec![0usize; objects.len()];
    for y in 0..size {
        for x in 0..size {
            // Topmost covering object owns the pixel.
            for (i, obj) in objects.iter().enumerate().rev() {
                if obj.covers(x, y) {
                    visible[i] += 1;
                    break;
                }
            }
        }
    }
    for i in 0..objects.len() {
        let full = if i < areas.len() { areas[i] } else { new_area };
        if (visible[i] as f64) < min_fraction * full as f64 {
            return false;
        }
    }
    true
}

fn render(spec: &SceneSpec, seed: u64, objects: Vec<PlacedObject>, bumps: u32) -> Scene {
    let size = spec.image_size;
    let base = [0.18f32, 0.18, 0.20];
    let mut image = ImageBuf::filled(size, size, base);
    if spec.background == BackgroundMode::Noise {
        let mut noise_rng = stream(seed.wrapping_add(bumps as u64), "background");
        for v in image.pixels.iter_mut() {
            *v = (*v + noise_rng.random_range(-0.06f32..0.06f32)).clamp(0.0, 1.0);
        }
    }
    let mut labels = vec![0u32; size * size];
    for (i, obj) in objects.iter().enumerate() {
        for y in 0..size {
            for x in 0..size {
                if obj.covers(x, y) {
                    labels[y * size + x] = (i + 1) as u32;
                    image.set(x, y, obj.color);
                }
            }
        }
    }
    let seg = Segmentation::new(size, size, labels).expect("canvas-sized label map");
    Scene { image, seg, objects, subseed_bumps: bumps }
}

/// Parse the flat `key = value` scene-spec format on top of the desk
/// defaults.
pub fn parse_scene_spec(text: &str) -> Result<SceneSpec> {
    let mut spec = SceneSpec::desk();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(SceneError::InvalidSpec(format!(
                "line {}: expected `key = value`",
                lineno + 1
            )));
        };
        let (key, value) = (key.trim(), value.trim());
        let bad = |what: &str| {
            SceneError::InvalidSpec(format!("line {}: {what}: {value:?}", lineno + 1))
        };
        match key {
            "image_size" => spec.image_size = value.parse().map_err(|_| bad("invalid size"))?,
            "min_objects" => spec.min_objects = value.parse().map_err(|_| bad("invalid count"))?,
            "max_objects" => spec.max_objects = value.parse().map_err(|_| bad("invalid count"))?,
            "shapes" => {
                spec.shapes = value
                    .split(',')
                    .map(|s| match s.trim() {
                        "disk" => Ok(ShapeKind::Disk),
                        "square" => Ok(ShapeKind::Square),
                        "triangle" => Ok(ShapeKind::Triangle),
                        other => Err(SceneError::InvalidSpec(format!(
                            "line {}: unknown shape {other:?}",
                            lineno + 1
                        ))),
                    })
                    .collect::<Result<_>>()?;
            }
            "palette" => {
                spec.palette = value
                    .split(',')
                    .map(|s| parse_hex_color(s.trim()).ok_or_else(|| bad("invalid color")))
                    .collect::<Result<_>>()?;
            }
            "background" => {
                spec.background = match value {
                    "flat" => BackgroundMode::Flat,
                    "noise" => BackgroundMode::Noise,
                    _ => return Err(bad("unknown background")),
                }
            }
            "min_radius_frac" => {
                spec.min_radius_frac = value.parse().map_err(|_| bad("invalid fraction"))?
            }
            "max_radius_frac" => {
                spec.max_radius_frac = value.parse().map_err(|_| bad("invalid fraction"))?
            }
            "min_visible_fraction" => {
                spec.min_visible_fraction = value.parse().map_err(|_| bad("invalid fraction"))?
            }
            other => {
                return Err(SceneError::InvalidSpec(format!(
                    "line {}: unknown key {other:?}",
                    lineno + 1
                )))
            }
        }
    }
    spec.validate()?;
    Ok(spec)
}

fn parse_hex_color(s: &str) -> Option<[f32; 3]> {
    if s.len() != 6 {
        return None;
    }
    let mut rgb = [0f32; 3];
    for i in 0..3 {
        let v = u8::from_str_radix(&s[i * 2..i * 2 + 2], 16).ok()?;
        rgb[i] = v as f32 / 255.0;
    }
    Some(rgb)
}

#[cfg(test)]
mod tests;
