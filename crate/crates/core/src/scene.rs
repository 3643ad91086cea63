//! Procedural generation of labeled synthetic scenes.
//!
//! Scenes are rendered directly from sampled primitives (anti-aliased fills
//! over a configurable background with additive gray noise), so labels are
//! geometrically exact by construction. Generation is a pure function of
//! `(spec, seed)`; batches derive one independent stream per scene index and
//! are embarrassingly parallel.

use std::io::Write;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::overlap::{enclosing_aabb, rotated_iou};
use crate::primitives::{Category, RotatedPrimitive};

/// Placement attempts per object before the spec is declared too dense.
pub const PLACEMENT_ATTEMPTS: usize = 1000;

/// Depth of the background table plane in millimeters.
pub const TABLE_DEPTH_MM: u16 = 600;

/// Range of per-object heights above the table, millimeters.
const OBJECT_HEIGHT_MM: (f64, f64) = (20.0, 80.0);

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("invalid scene spec: {0}")]
    InvalidSpec(String),
    #[error("could not place object {object_index} within {PLACEMENT_ATTEMPTS} attempts; spec too dense")]
    PlacementFailed { object_index: usize },
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}: byte {offset}: {msg}")]
    Malformed {
        path: String,
        offset: usize,
        msg: String,
    },
    #[error("{path}:{line}: {msg}")]
    ParseLine {
        path: String,
        line: usize,
        msg: String,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Background {
    Flat,
    Gradient,
    Noise,
}

/// Parameters of a synthetic scene family.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub width: usize,
    pub height: usize,
    /// Inclusive range of objects per scene.
    pub object_count: (usize, usize),
    pub categories: Vec<Category>,
    /// Inclusive range for both object axes, pixels.
    pub size_range: (f64, f64),
    /// Placement rejects a candidate whose rotated IoU with any placed object
    /// exceeds this.
    pub max_pairwise_iou: f64,
    pub background: Background,
    /// Standard deviation of the additive gray noise, in gray levels.
    pub noise_sigma: f64,
    pub with_depth: bool,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            width: 416,
            height: 416,
            object_count: (3, 7),
            categories: Category::ALL.to_vec(),
            size_range: (24.0, 96.0),
            max_pairwise_iou: 0.3,
            background: Background::Flat,
            noise_sigma: 4.0,
            with_depth: false,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<(), SceneError> {
        let bad = |msg: String| Err(SceneError::InvalidSpec(msg));
        if self.width < 32 || self.height < 32 {
            return bad(format!(
                "width/height must be >= 32, got {}x{}",
                self.width, self.height
            ));
        }
        if self.object_count.0 > self.object_count.1 {
            return bad(format!(
                "object_count range ({}, {}) is inverted",
                self.object_count.0, self.object_count.1
            ));
        }
        if self.size_range.0.is_nan()
            || self.size_range.0 <= 2.0
            || self.size_range.0 > self.size_range.1
        {
            return bad(format!(
                "size_range ({}, {}): min must be > 2 and <= max",
                self.size_range.0, self.size_range.1
            ));
        }
        if !(0.0..1.0).contains(&self.max_pairwise_iou) {
            return bad(format!(
                "max_pairwise_iou {} outside [0, 1)",
                self.max_pairwise_iou
            ));
        }
        if self.categories.is_empty() {
            return bad("categories must be non-empty".into());
        }
        if !self.noise_sigma.is_finite() || self.noise_sigma < 0.0 {
            return bad(format!("noise_sigma {} must be >= 0", self.noise_sigma));
        }
        Ok(())
    }
}

/// 8-bit RGB raster, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Rgb8 {
    pub width: usize,
    pub height: usize,
    data: Vec<u8>,
}

impl Rgb8 {
    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Self {
        let mut data = Vec::with_capacity(width * height * 3);
        for _ in 0..width * height {
            data.extend_from_slice(&rgb);
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn bytes(&self) -> &[u8] {
        &self.data
    }
}

/// 16-bit depth raster in millimeters; zero marks an invalid pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct Depth16 {
    pub width: usize,
    pub height: usize,
    data: Vec<u16>,
}

impl Depth16 {
    pub fn filled(width: usize, height: usize, mm: u16) -> Self {
        Self {
            width,
            height,
            data: vec![mm; width * height],
        }
    }

    pub fn get(&self, x: usize, y: usize) -> u16 {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, mm: u16) {
        self.data[y * self.width + x] = mm;
    }
}

/// A rendered scene with its exact labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledScene {
    pub image: Rgb8,
    pub labels: Vec<RotatedPrimitive>,
    pub depth: Option<Depth16>,
    pub seed: u64,
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [u8; 3] {
    let c = v * s;
    let hp = (h.rem_euclid(360.0)) / 60.0;
    let x = c * (1.0 - (hp % 2.0 - 1.0).abs());
    let (r, g, b) = match hp as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [
        ((r + m) * 255.0).round() as u8,
        ((g + m) * 255.0).round() as u8,
        ((b + m) * 255.0).round() as u8,
    ]
}

struct PlacedObject {
    primitive: RotatedPrimitive,
    color: [u8; 3],
    height_mm: f64,
}

/// Generates one scene deterministically from `(spec, seed)`.
pub fn generate_scene(spec: &SceneSpec, seed: u64) -> Result<LabeledScene, SceneError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let count = if spec.object_count.1 == spec.object_count.0 {
        spec.object_count.0
    } else {
        rng.random_range(spec.object_count.0..=spec.object_count.1)
    };

    // Sample and place objects by rejection against the pairwise IoU cap.
    let mut placed: Vec<PlacedObject> = Vec::with_capacity(count);
    for object_index in 0..count {
        let category = spec.categories[rng.random_range(0..spec.categories.len())];
        let w = rng.random_range(spec.size_range.0..=spec.size_range.1);
        let h = if category.requires_equal_axes() {
            w
        } else {
            rng.random_range(spec.size_range.0..=spec.size_range.1)
        };
        let theta = if category == Category::Circle {
            0.0
        } else {
            rng.random_range(-std::f64::consts::FRAC_PI_2..std::f64::consts::FRAC_PI_2)
        };
        let color = hsv_to_rgb(rng.random_range(0.0..360.0), 0.75, 0.85);
        let height_mm = rng.random_range(OBJECT_HEIGHT_MM.0..OBJECT_HEIGHT_MM.1);

        let probe = RotatedPrimitive::new(category, 0.0, 0.0, w, h, theta)
            .expect("sampled dimensions are positive");
        let bb = enclosing_aabb(&probe);
        let (ext_x, ext_y) = (bb.max[0], bb.max[1]);
        let mut ok = None;
        for _ in 0..PLACEMENT_ATTEMPTS {
            if 2.0 * ext_x >= spec.width as f64 || 2.0 * ext_y >= spec.height as f64 {
                break;
            }
            let cx = rng.random_range(ext_x..spec.width as f64 - ext_x);
            let cy = rng.random_range(ext_y..spec.height as f64 - ext_y);
            let candidate = RotatedPrimitive::new(category, cx, cy, w, h, theta).unwrap();
            if placed
                .iter()
                .all(|p| rotated_iou(&p.primitive, &candidate) <= spec.max_pairwise_iou)
            {
                ok = Some(candidate);
                break;
            }
        }
        let primitive = ok.ok_or(SceneError::PlacementFailed { object_index })?;
        placed.push(PlacedObject {
            primitive,
            color,
            height_mm,
        });
    }

    // Background.
    let base = 70.0f64;
    let mut image = Rgb8::filled(spec.width, spec.height, [base as u8; 3]);
    match spec.background {
        Background::Flat => {}
        Background::Gradient => {
            for y in 0..spec.height {
                let g = 40.0 + 90.0 * y as f64 / (spec.height - 1).max(1) as f64;
                let g = g.round() as u8;
                for x in 0..spec.width {
                    image.set_pixel(x, y, [g, g, g]);
                }
            }
        }
        Background::Noise => {
            if spec.noise_sigma > 0.0 {
                let normal = Normal::new(base, spec.noise_sigma)
                    .expect("validated noise sigma");
                for y in 0..spec.height {
                    for x in 0..spec.width {
                        let g = normal.sample(&mut rng).clamp(0.0, 255.0).round() as u8;
                        image.set_pixel(x, y, [g, g, g]);
                    }
                }
            }
        }
    }

    // Anti-aliased fills: 4x4 coverage samples per pixel over each shape's
    // bounding box.
    for obj in &placed {
        let bb = enclosing_aabb(&obj.primitive);
        let x0 = bb.min[0].floor().max(0.0) as usize;
        let y0 = bb.min[1].floor().max(0.0) as usize;
        let x1 = (bb.max[0].ceil() as usize).min(spec.width);
        let y1 = (bb.max[1].ceil() as usize).min(spec.height);
        for py in y0..y1 {
            for px in x0..x1 {
                let mut hits = 0u32;
                for sy in 0..4 {
                    for sx in 0..4 {
                        let x = px as f64 + (sx as f64 + 0.5) / 4.0;
                        let y = py as f64 + (sy as f64 + 0.5) / 4.0;
                        if obj.primitive.contains(x, y) {
                            hits += 1;
                        }
                    }
                }
                if hits == 0 {
                    continue;
                }
                let cov = hits as f64 / 16.0;
                let old = image.pixel(px, py);
                let mut new = [0u8; 3];
                for ch in 0..3 {
                    new[ch] = (old[ch] as f64 * (1.0 - cov) + obj.color[ch] as f64 * cov)
                        .round() as u8;
                }
                image.set_pixel(px, py, new);
            }
        }
    }

    // Additive gray noise over the composited image.
    if spec.noise_sigma > 0.0 {
        let normal = Normal::new(0.0, spec.noise_sigma).expect("validated noise sigma");
        for y in 0..spec.height {
            for x in 0..spec.width {
                let delta = normal.sample(&mut rng);
                let old = image.pixel(x, y);
                let mut new = [0u8; 3];
                for ch in 0..3 {
                    new[ch] = (old[ch] as f64 + delta).clamp(0.0, 255.0).round() as u8;
                }
                image.set_pixel(x, y, new);
            }
        }
    }

    // Depth: a constant table plane with each object's exact region raised.
    let depth = spec.with_depth.then(|| {
        let mut d = Depth16::filled(spec.width, spec.height, TABLE_DEPTH_MM);
        for obj in &placed {
            let mm = (TABLE_DEPTH_MM as f64 - obj.height_mm).round() as u16;
            let bb = enclosing_aabb(&obj.primitive);
            let x0 = bb.min[0].floor().max(0.0) as usize;
            let y0 = bb.min[1].floor().max(0.0) as usize;
            let x1 = (bb.max[0].ceil() as usize).min(spec.width);
            let y1 = (bb.max[1].ceil() as usize).min(spec.height);
            for py in y0..y1 {
                for px in x0..x1 {
                    if obj.primitive.contains(px as f64 + 0.5, py as f64 + 0.5) {
                        d.set(px, py, mm);
                    }
                }
            }
        }
        d
    });

    Ok(LabeledScene {
        image,
        labels: placed.into_iter().map(|p| p.primitive).collect(),
        depth,
        seed,
    })
}

/// Generates `count` scenes with per-scene streams derived from
/// `(master_seed, index)`; parallel across scenes when the `parallel` feature
/// is on, with identical results either way.
pub fn generate_batch(
    spec: &SceneSpec,
    master_seed: u64,
    count: usize,
) -> Result<Vec<LabeledScene>, SceneError> {
    let seed_for = |i: usize| crate::montecarlo::mix_seed(master_seed, i as u64);
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        (0..count)
            .into_par_iter()
            .map(|i| generate_scene(spec, seed_for(i)))
            .collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..count).map(|i| generate_scene(spec, seed_for(i))).collect()
    }
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> SceneError + '_ {
    move |source| SceneError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Byte-oriented header tokenizer that tracks offsets for diagnostics.
struct Tokens<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: String,
}

impl<'a> Tokens<'a> {
    fn new(bytes: &'a [u8], path: &Path) -> Self {
        Self {
            bytes,
            pos: 0,
            path: path.display().to_string(),
        }
    }

    fn malformed(&self, offset: usize, msg: String) -> SceneError {
        SceneError::Malformed {
            path: self.path.clone(),
            offset,
            msg,
        }
    }

    /// Next whitespace-delimited ASCII token.
    fn token(&mut self) -> Result<&'a str, SceneError> {
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        let start = self.pos;
        while self.pos < self.bytes.len() && !self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(self.malformed(start, "unexpected end of header".into()));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .map_err(|_| self.malformed(start, "non-ASCII header token".into()))
    }

    fn number<T: std::str::FromStr>(&mut self, what: &str) -> Result<T, SceneError> {
        let at = self.pos;
        let tok = self.token()?;
        tok.parse()
            .map_err(|_| self.malformed(at, format!("invalid {what}: {tok:?}")))
    }

    /// Consumes exactly one whitespace byte separating header and payload.
    fn payload(&mut self) -> Result<&'a [u8], SceneError> {
        if self.pos >= self.bytes.len() || !self.bytes[self.pos].is_ascii_whitespace() {
            return Err(self.malformed(self.pos, "expected whitespace before pixel data".into()));
        }
        self.pos += 1;
        Ok(&self.bytes[self.pos..])
    }

    fn offset(&self) -> usize {
        self.pos
    }
}

/// Paths produced by [`write_scene`].
#[derive(Debug, Clone, PartialEq)]
pub struct ScenePaths {
    pub image: std::path::PathBuf,
    pub labels: std::path::PathBuf,
    pub depth: Option<std::path::PathBuf>,
}

/// Writes a scene into `dir` as `{stem}.ppm`, `{stem}.txt` and, when depth is
/// present, `{stem}_depth.pgm`.
pub fn write_scene(
    scene: &LabeledScene,
    dir: impl AsRef<Path>,
    stem: &str,
) -> Result<ScenePaths, SceneError> {
    let dir = dir.as_ref();
    let image = dir.join(format!("{stem}.ppm"));
    write_ppm(&scene.image, &image)?;
    let labels = dir.join(format!("{stem}.txt"));
    write_labels(&scene.labels, &labels)?;
    let depth = match &scene.depth {
        Some(d) => {
            let path = dir.join(format!("{stem}_depth.pgm"));
            write_pgm16(d, &path)?;
            Some(path)
        }
        None => None,
    };
    Ok(ScenePaths {
        image,
        labels,
        depth,
    })
}

/// Writes a binary PPM (P6, 8-bit RGB).
pub fn write_ppm(image: &Rgb8, path: impl AsRef<Path>) -> Result<(), SceneError> {
    let path = path.as_ref();
    let mut out = std::io::BufWriter::new(std::fs::File::create(path).map_err(io_err(path))?);
    write!(out, "P6\n{} {}\n255\n", image.width, image.height).map_err(io_err(path))?;
    out.write_all(image.bytes()).map_err(io_err(path))?;
    out.flush().map_err(io_err(path))
}

pub fn read_ppm(path: impl AsRef<Path>) -> Result<Rgb8, SceneError> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(io_err(path))?;
    let mut t = Tokens::new(&bytes, path);
    let magic = t.token()?;
    if magic != "P6" {
        return Err(t.malformed(0, format!("expected P6 magic, got {magic:?}")));
    }
    let width: usize = t.number("width")?;
    let height: usize = t.number("height")?;
    let maxval: usize = t.number("maxval")?;
    if maxval != 255 {
        return Err(t.malformed(t.offset(), format!("unsupported maxval {maxval}, expected 255")));
    }
    let at = t.offset();
    let payload = t.payload()?;
    let expected = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(3))
        .ok_or_else(|| t.malformed(0, format!("image dimensions {width}x{height} overflow")))?;
    if payload.len() != expected {
        return Err(t.malformed(
            at + 1,
            format!(
                "expected {expected} bytes of pixel data, found {}",
                payload.len()
            ),
        ));
    }
    Ok(Rgb8 {
        width,
        height,
        data: payload.to_vec(),
    })
}

/// Writes a binary PGM (P5, 16-bit big-endian) with values in millimeters.
pub fn write_pgm16(depth: &Depth16, path: impl AsRef<Path>) -> Result<(), SceneError> {
    let path = path.as_ref();
    let mut out = std::io::BufWriter::new(std::fs::File::create(path).map_err(io_err(path))?);
    write!(out, "P5\n{} {}\n65535\n", depth.width, depth.height).map_err(io_err(path))?;
    for y in 0..depth.height {
        for x in 0..depth.width {
            out.write_all(&depth.get(x, y).to_be_bytes())
                .map_err(io_err(path))?;
        }
    }
    out.flush().map_err(io_err(path))
}

pub fn read_pgm16(path: impl AsRef<Path>) -> Result<Depth16, SceneError> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(io_err(path))?;
    let mut t = Tokens::new(&bytes, path);
    let magic = t.token()?;
    if magic != "P5" {
        return Err(t.malformed(0, format!("expected P5 magic, got {magic:?}")));
    }
    let width: usize = t.number("width")?;
    let height: usize = t.number("height")?;
    let maxval: usize = t.number("maxval")?;
    if maxval != 65535 {
        return Err(t.malformed(
            t.offset(),
            format!("unsupported maxval {maxval}, expected 65535"),
        ));
    }
    let at = t.offset();
    let payload = t.payload()?;
    let expected = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(2))
        .ok_or_else(|| t.malformed(0, format!("depth dimensions {width}x{height} overflow")))?;
    if payload.len() != expected {
        return Err(t.malformed(
            at + 1,
            format!(
                "expected {expected} bytes of depth data, found {}",
                payload.len()
            ),
        ));
    }
    let data = payload
        .chunks_exact(2)
        .map(|ch| u16::from_be_bytes([ch[0], ch[1]]))
        .collect();
    Ok(Depth16 {
        width,
        height,
        data,
    })
}

/// Writes labels as `category_id cx cy w h theta`, one primitive per line.
pub fn write_labels(
    labels: &[RotatedPrimitive],
    path: impl AsRef<Path>,
) -> Result<(), SceneError> {
    let path = path.as_ref();
    let mut out = std::io::BufWriter::new(std::fs::File::create(path).map_err(io_err(path))?);
    writeln!(out, "# category_id cx cy w h theta").map_err(io_err(path))?;
    for l in labels {
        writeln!(
            out,
            "{} {} {} {} {} {}",
            l.category.id(),
            l.cx,
            l.cy,
            l.w,
            l.h,
            l.theta
        )
        .map_err(io_err(path))?;
    }
    out.flush().map_err(io_err(path))
}

/// Inverse of [`write_labels`]; `#` comment lines and blank lines are ignored.
pub fn read_labels(path: impl AsRef<Path>) -> Result<Vec<RotatedPrimitive>, SceneError> {
    let path = path.as_ref();
    let display = path.display().to_string();
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let parse = |msg: String| SceneError::ParseLine {
            path: display.clone(),
            line: lineno + 1,
            msg,
        };
        let fields: Vec<&str> = trimmed.split_whitespace().collect();
        if fields.len() != 6 {
            return Err(parse(format!(
                "expected 6 fields `category_id cx cy w h theta`, got {}",
                fields.len()
            )));
        }
        let id: u32 = fields[0]
            .parse()
            .map_err(|e| parse(format!("category_id: {e}")))?;
        let mut nums = [0.0f64; 5];
        for (k, f) in fields[1..].iter().enumerate() {
            nums[k] = f
                .parse()
                .map_err(|e| parse(format!("field {}: {e}", k + 2)))?;
        }
        let category = Category::from_id(id).map_err(|e| parse(e.to_string()))?;
        out.push(
            RotatedPrimitive::new(category, nums[0], nums[1], nums[2], nums[3], nums[4])
                .map_err(|e| parse(e.to_string()))?,
        );
    }
    Ok(out)
}

/// Writes a manifest: one path per line.
pub fn write_manifest<P: AsRef<Path>>(
    entries: &[P],
    path: impl AsRef<Path>,
) -> Result<(), SceneError> {
    let path = path.as_ref();
    let mut out = std::io::BufWriter::new(std::fs::File::create(path).map_err(io_err(path))?);
    for e in entries {
        writeln!(out, "{}", e.as_ref().display()).map_err(io_err(path))?;
    }
    out.flush().map_err(io_err(path))
}

/// Reads a manifest, resolving relative entries against the manifest's parent
/// directory.
pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<std::path::PathBuf>, SceneError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    let base = path.parent().unwrap_or(Path::new(""));
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|l| {
            let p = std::path::PathBuf::from(l);
            if p.is_absolute() {
                p
            } else {
                base.join(p)
            }
        })
        .collect())
}
