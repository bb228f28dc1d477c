//! Deterministic synthetic sonar chips and scenes.
//!
//! Targets are drawn as a bright highlight followed downrange (+x) by a dark
//! acoustic shadow, on a speckled seabed with faint clutter blobs:
//!
//! | class    | highlight                    | shadow                      |
//! |----------|------------------------------|-----------------------------|
//! | block    | 10 x 14 rectangle            | rectangle, 14 long          |
//! | cylinder | 6 x 22 rectangle (aspect > 3)| rectangle, 12 long          |
//! | sphere   | disc, radius 6               | ellipse 18 x 12 behind disc |
//! | cone     | triangle, apex toward sonar  | trapezoid flaring 14 -> 20  |
//!
//! Sizes are in pixels at scale 1. Levels before speckle: background 0.3,
//! highlight 0.9, shadow 0.05. Speckle is the mean-one Rayleigh factor of
//! [`crate::noise`].

use crate::dataset::{LabeledChip, LabeledChipSet};
use crate::error::{Error, Result};
use crate::noise::{apply_speckle, PixelRange};
use crate::raster::Raster;
use crate::rng::{derive_seed, SplitMix64};

pub const BACKGROUND_LEVEL: f64 = 0.3;
pub const HIGHLIGHT_LEVEL: f64 = 0.9;
pub const SHADOW_LEVEL: f64 = 0.05;
pub const DEFAULT_CHIP_SIZE: usize = 64;
pub const DEFAULT_JITTER_PX: f64 = 6.0;
pub const DEFAULT_SPECKLE_SIGMA: f64 = 0.3;
/// Mean clutter blobs per 64x64 area.
pub const DEFAULT_CLUTTER_DENSITY: f64 = 1.5;

/// Mask values in [`Chip::mask`] and [`Scene::mask`].
pub const MASK_BACKGROUND: u8 = 0;
pub const MASK_HIGHLIGHT: u8 = 1;
pub const MASK_SHADOW: u8 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TargetClass {
    Block,
    Cone,
    Sphere,
    Cylinder,
}

impl TargetClass {
    pub const ALL: [TargetClass; 4] = [TargetClass::Block, TargetClass::Cone, TargetClass::Sphere, TargetClass::Cylinder];

    pub fn name(self) -> &'static str {
        match self {
            TargetClass::Block => "block",
            TargetClass::Cone => "cone",
            TargetClass::Sphere => "sphere",
            TargetClass::Cylinder => "cylinder",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        TargetClass::ALL
            .into_iter()
            .find(|c| c.name() == name)
            .ok_or_else(|| Error::UnknownClass(name.to_string()))
    }

    pub fn index(self) -> usize {
        self as usize
    }

    /// Unscaled template extent `(u_min, u_max, v_min, v_max)`; `u` is
    /// downrange, the highlight is centred at the origin.
    fn extent(self) -> (f64, f64, f64, f64) {
        match self {
            TargetClass::Block => (-5.0, 19.0, -7.0, 7.0),
            TargetClass::Cylinder => (-3.0, 15.0, -11.0, 11.0),
            TargetClass::Sphere => (-6.0, 21.0, -6.0, 6.0),
            TargetClass::Cone => (-6.0, 20.0, -10.0, 10.0),
        }
    }

    fn classify_point(self, u: f64, v: f64) -> u8 {
        let (highlight, shadow) = match self {
            TargetClass::Block => (u.abs() <= 5.0 && v.abs() <= 7.0, u > 5.0 && u <= 19.0 && v.abs() <= 7.0),
            TargetClass::Cylinder => (u.abs() <= 3.0 && v.abs() <= 11.0, u > 3.0 && u <= 15.0 && v.abs() <= 11.0),
            TargetClass::Sphere => {
                let disc = u * u + v * v <= 36.0;
                let eu = (u - 12.0) / 9.0;
                let ev = v / 6.0;
                (disc, !disc && u > 0.0 && eu * eu + ev * ev <= 1.0)
            }
            TargetClass::Cone => (
                (-6.0..=6.0).contains(&u) && v.abs() <= 7.0 * (u + 6.0) / 12.0,
                u > 6.0 && u <= 20.0 && v.abs() <= 7.0 + 3.0 * (u - 6.0) / 14.0,
            ),
        };
        if highlight {
            MASK_HIGHLIGHT
        } else if shadow {
            MASK_SHADOW
        } else {
            MASK_BACKGROUND
        }
    }
}

pub fn class_names() -> Vec<String> {
    TargetClass::ALL.iter().map(|c| c.name().to_string()).collect()
}

/// Axis-aligned pixel box, `[x, x + width) x [y, y + height)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BoundingBox {
    pub x: usize,
    pub y: usize,
    pub width: usize,
    pub height: usize,
}

impl BoundingBox {
    pub fn area(&self) -> usize {
        self.width * self.height
    }

    pub fn intersection_area(&self, other: &BoundingBox) -> usize {
        let x0 = self.x.max(other.x);
        let y0 = self.y.max(other.y);
        let x1 = (self.x + self.width).min(other.x + other.width);
        let y1 = (self.y + self.height).min(other.y + other.height);
        if x1 > x0 && y1 > y0 {
            (x1 - x0) * (y1 - y0)
        } else {
            0
        }
    }

    pub fn intersects(&self, other: &BoundingBox) -> bool {
        self.intersection_area(other) > 0
    }

    pub fn union(&self, other: &BoundingBox) -> BoundingBox {
        let x0 = self.x.min(other.x);
        let y0 = self.y.min(other.y);
        let x1 = (self.x + self.width).max(other.x + other.width);
        let y1 = (self.y + self.height).max(other.y + other.height);
        BoundingBox {
            x: x0,
            y: y0,
            width: x1 - x0,
            height: y1 - y0,
        }
    }
}

/// A target posed in image coordinates. `center` is the centre of the
/// highlight-plus-shadow template.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub class: TargetClass,
    pub center_x: f64,
    pub center_y: f64,
    pub orientation_deg: f64,
    pub scale: f64,
}

impl Pose {
    fn frame(&self) -> (f64, f64, f64) {
        let (sin, cos) = self.orientation_deg.to_radians().sin_cos();
        let (u0, u1, _, _) = self.class.extent();
        (sin, cos, 0.5 * (u0 + u1))
    }

    /// Real-valued extent `(x_min, x_max, y_min, y_max)` of the rotated template.
    fn real_extent(&self) -> (f64, f64, f64, f64) {
        let (sin, cos, cu) = self.frame();
        let (u0, u1, v0, v1) = self.class.extent();
        let mut ext = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
        for (u, v) in [(u0, v0), (u0, v1), (u1, v0), (u1, v1)] {
            let (du, dv) = ((u - cu) * self.scale, v * self.scale);
            let x = self.center_x + du * cos - dv * sin;
            let y = self.center_y + du * sin + dv * cos;
            ext = (ext.0.min(x), ext.1.max(x), ext.2.min(y), ext.3.max(y));
        }
        ext
    }

    /// Pixel box covering the template, or `None` if it leaves `width x height`.
    pub fn bounding_box(&self, width: usize, height: usize) -> Option<BoundingBox> {
        let (x0, x1, y0, y1) = self.real_extent();
        let (x0, y0) = (x0.floor(), y0.floor());
        let (x1, y1) = (x1.ceil(), y1.ceil());
        if x0 < 0.0 || y0 < 0.0 || x1 > width as f64 || y1 > height as f64 {
            return None;
        }
        Some(BoundingBox {
            x: x0 as usize,
            y: y0 as usize,
            width: (x1 - x0) as usize,
            height: (y1 - y0) as usize,
        })
    }

    /// Mask value of the pixel whose centre is `(x + 0.5, y + 0.5)`.
    fn classify_pixel(&self, x: usize, y: usize) -> u8 {
        let (sin, cos, cu) = self.frame();
        let dx = x as f64 + 0.5 - self.center_x;
        let dy = y as f64 + 0.5 - self.center_y;
        let u = (dx * cos + dy * sin) / self.scale + cu;
        let v = (-dx * sin + dy * cos) / self.scale;
        self.class.classify_point(u, v)
    }

    fn render(&self, width: usize, height: usize, bbox: &BoundingBox, data: &mut [f64], mask: &mut [u8]) {
        for y in bbox.y..(bbox.y + bbox.height).min(height) {
            for x in bbox.x..(bbox.x + bbox.width).min(width) {
                match self.classify_pixel(x, y) {
                    MASK_HIGHLIGHT => {
                        data[y * width + x] = HIGHLIGHT_LEVEL;
                        mask[y * width + x] = MASK_HIGHLIGHT;
                    }
                    MASK_SHADOW => {
                        data[y * width + x] = SHADOW_LEVEL;
                        mask[y * width + x] = MASK_SHADOW;
                    }
                    _ => {}
                }
            }
        }
    }
}

/// Adds faint Gaussian blobs; the count per 64x64 area has mean `density`.
fn add_clutter(data: &mut [f64], width: usize, height: usize, density: f64, rng: &mut SplitMix64) {
    let expected = density * (width * height) as f64 / 4096.0;
    let count = (expected + rng.next_f64()).floor() as usize;
    for _ in 0..count {
        let cx = rng.uniform(0.0, width as f64);
        let cy = rng.uniform(0.0, height as f64);
        let radius = rng.uniform(2.0, 6.0);
        let amp = rng.uniform(0.05, 0.2);
        let reach = (3.0 * radius).ceil() as isize;
        let two_r2 = 2.0 * radius * radius;
        for y in (cy as isize - reach).max(0)..(cy as isize + reach + 1).min(height as isize) {
            for x in (cx as isize - reach).max(0)..(cx as isize + reach + 1).min(width as isize) {
                let dx = x as f64 + 0.5 - cx;
                let dy = y as f64 + 0.5 - cy;
                data[y as usize * width + x as usize] += amp * (-(dx * dx + dy * dy) / two_r2).exp();
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChipSpec {
    pub class: TargetClass,
    pub chip_size: usize,
    pub orientation_deg: f64,
    pub scale: f64,
    /// Maximum centre offset in each axis; the actual offset is drawn from `seed`.
    pub jitter_px: f64,
    pub speckle_sigma: f64,
    pub clutter_density: f64,
    pub seed: u64,
}

impl ChipSpec {
    /// Noise-free, centred, unrotated template.
    pub fn template(class: TargetClass) -> Self {
        ChipSpec {
            class,
            chip_size: DEFAULT_CHIP_SIZE,
            orientation_deg: 0.0,
            scale: 1.0,
            jitter_px: 0.0,
            speckle_sigma: 0.0,
            clutter_density: 0.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Chip {
    pub image: Raster,
    pub class: TargetClass,
    pub mask: Vec<u8>,
    pub pose: Pose,
}

pub fn generate_chip(spec: &ChipSpec) -> Result<Chip> {
    let n = spec.chip_size;
    if n == 0 {
        return Err(Error::Geometry("chip size must be positive".into()));
    }
    if !(spec.scale > 0.0) || spec.jitter_px < 0.0 || spec.speckle_sigma < 0.0 || spec.clutter_density < 0.0 {
        return Err(Error::Geometry("scale must be positive; jitter, speckle and clutter nonnegative".into()));
    }
    let mut rng = SplitMix64::new(spec.seed);
    let dx = rng.uniform(-spec.jitter_px, spec.jitter_px);
    let dy = rng.uniform(-spec.jitter_px, spec.jitter_px);
    let pose = Pose {
        class: spec.class,
        center_x: n as f64 / 2.0 + dx,
        center_y: n as f64 / 2.0 + dy,
        orientation_deg: spec.orientation_deg,
        scale: spec.scale,
    };
    // the worst-case jitter must keep the target inside
    let corners = [(-1.0, -1.0), (-1.0, 1.0), (1.0, -1.0), (1.0, 1.0)];
    for (sx, sy) in corners {
        let probe = Pose {
            center_x: n as f64 / 2.0 + sx * spec.jitter_px,
            center_y: n as f64 / 2.0 + sy * spec.jitter_px,
            ..pose
        };
        if probe.bounding_box(n, n).is_none() {
            return Err(Error::Geometry(format!(
                "{} at scale {} with jitter {} exceeds a {n}x{n} chip",
                spec.class.name(),
                spec.scale,
                spec.jitter_px
            )));
        }
    }
    let bbox = pose.bounding_box(n, n).expect("checked above");
    let mut data = vec![BACKGROUND_LEVEL; n * n];
    add_clutter(&mut data, n, n, spec.clutter_density, &mut rng);
    let mut mask = vec![MASK_BACKGROUND; n * n];
    pose.render(n, n, &bbox, &mut data, &mut mask);
    let clean = Raster::from_parts(n, n, data);
    let image = if spec.speckle_sigma > 0.0 {
        apply_speckle(&clean, spec.speckle_sigma, derive_seed(spec.seed, 1), PixelRange::Real)
    } else {
        clean
    };
    Ok(Chip {
        image: image.quantize_f32(),
        class: spec.class,
        mask,
        pose,
    })
}

/// Speckled seabed with clutter and no target.
pub fn generate_background(size: usize, speckle_sigma: f64, clutter_density: f64, seed: u64) -> Raster {
    let mut rng = SplitMix64::new(seed);
    let mut data = vec![BACKGROUND_LEVEL; size * size];
    add_clutter(&mut data, size, size, clutter_density, &mut rng);
    let clean = Raster::from_parts(size, size, data);
    apply_speckle(&clean, speckle_sigma, derive_seed(seed, 1), PixelRange::Real).quantize_f32()
}

/// `count` target-free chips; chip `i` draws its speckle sigma from
/// `speckle_range` with seed `derive_seed(seed, i)`.
pub fn generate_backgrounds(
    count: usize,
    size: usize,
    speckle_range: (f64, f64),
    clutter_density: f64,
    seed: u64,
) -> Vec<Raster> {
    (0..count)
        .map(|i| {
            let mut rng = SplitMix64::new(derive_seed(seed, i as u64));
            let sigma = rng.uniform(speckle_range.0, speckle_range.1);
            generate_background(size, sigma, clutter_density, rng.next_u64())
        })
        .collect()
}

/// Randomization ranges for [`generate_dataset_with`].
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetParams {
    pub chip_size: usize,
    /// Orientation drawn uniformly from `±orientation_jitter_deg`.
    pub orientation_jitter_deg: f64,
    pub scale_range: (f64, f64),
    pub jitter_px: f64,
    /// Speckle sigma drawn uniformly per chip from this range.
    pub speckle_range: (f64, f64),
    pub clutter_density: f64,
}

impl Default for DatasetParams {
    fn default() -> Self {
        DatasetParams {
            chip_size: DEFAULT_CHIP_SIZE,
            orientation_jitter_deg: 15.0,
            scale_range: (0.85, 1.15),
            jitter_px: DEFAULT_JITTER_PX,
            speckle_range: (DEFAULT_SPECKLE_SIGMA, DEFAULT_SPECKLE_SIGMA),
            clutter_density: DEFAULT_CLUTTER_DENSITY,
        }
    }
}

impl DatasetParams {
    /// No jitter, rotation, scaling, clutter or speckle: every chip of a
    /// class is the same template.
    pub fn noise_free() -> Self {
        DatasetParams {
            chip_size: DEFAULT_CHIP_SIZE,
            orientation_jitter_deg: 0.0,
            scale_range: (1.0, 1.0),
            jitter_px: 0.0,
            speckle_range: (0.0, 0.0),
            clutter_density: 0.0,
        }
    }
}

pub fn generate_dataset(per_class: usize, seed: u64) -> Result<LabeledChipSet> {
    generate_dataset_with(per_class, seed, &DatasetParams::default())
}

/// `per_class` chips of every class, class-major. Chip `i` is a pure
/// function of `(seed, i, params)`.
pub fn generate_dataset_with(per_class: usize, seed: u64, params: &DatasetParams) -> Result<LabeledChipSet> {
    if per_class == 0 {
        return Err(Error::arg("per_class must be at least 1"));
    }
    let mut chips = Vec::with_capacity(4 * per_class);
    for class in TargetClass::ALL {
        for i in 0..per_class {
            let chip_seed = derive_seed(seed, (class.index() * per_class + i) as u64);
            let mut rng = SplitMix64::new(chip_seed);
            let spec = ChipSpec {
                class,
                chip_size: params.chip_size,
                orientation_deg: rng.uniform(-params.orientation_jitter_deg, params.orientation_jitter_deg),
                scale: rng.uniform(params.scale_range.0, params.scale_range.1),
                jitter_px: params.jitter_px,
                speckle_sigma: rng.uniform(params.speckle_range.0, params.speckle_range.1),
                clutter_density: params.clutter_density,
                seed: rng.next_u64(),
            };
            chips.push(LabeledChip {
                image: generate_chip(&spec)?.image,
                label: class.index(),
            });
        }
    }
    LabeledChipSet::new(class_names(), chips)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub width: usize,
    pub height: usize,
    pub targets: Vec<Pose>,
    pub clutter_density: f64,
    pub speckle_sigma: f64,
    pub seed: u64,
}

impl SceneSpec {
    /// The two-target (block + sphere) reference scene.
    pub fn standard(seed: u64) -> Self {
        SceneSpec {
            width: 320,
            height: 192,
            targets: vec![
                Pose {
                    class: TargetClass::Block,
                    center_x: 100.0,
                    center_y: 92.0,
                    orientation_deg: 8.0,
                    scale: 1.0,
                },
                Pose {
                    class: TargetClass::Sphere,
                    center_x: 220.0,
                    center_y: 100.0,
                    orientation_deg: -5.0,
                    scale: 1.05,
                },
            ],
            clutter_density: DEFAULT_CLUTTER_DENSITY,
            speckle_sigma: DEFAULT_SPECKLE_SIGMA,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub class: TargetClass,
    pub bbox: BoundingBox,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub image: Raster,
    pub truth: Vec<GroundTruth>,
    pub mask: Vec<u8>,
}

pub fn generate_scene(spec: &SceneSpec) -> Result<Scene> {
    let (w, h) = (spec.width, spec.height);
    if w == 0 || h == 0 {
        return Err(Error::Geometry("scene must be non-empty".into()));
    }
    let mut truth: Vec<GroundTruth> = Vec::with_capacity(spec.targets.len());
    for (i, pose) in spec.targets.iter().enumerate() {
        if !(pose.scale > 0.0) {
            return Err(Error::Geometry(format!("target {i}: scale must be positive")));
        }
        let bbox = pose.bounding_box(w, h).ok_or_else(|| {
            Error::Geometry(format!("target {i} ({}) extends outside the {w}x{h} scene", pose.class.name()))
        })?;
        if let Some(j) = truth.iter().position(|t| t.bbox.intersects(&bbox)) {
            return Err(Error::Geometry(format!("targets {j} and {i} overlap")));
        }
        truth.push(GroundTruth { class: pose.class, bbox });
    }
    let mut rng = SplitMix64::new(spec.seed);
    let mut data = vec![BACKGROUND_LEVEL; w * h];
    add_clutter(&mut data, w, h, spec.clutter_density, &mut rng);
    let mut mask = vec![MASK_BACKGROUND; w * h];
    for (pose, t) in spec.targets.iter().zip(&truth) {
        pose.render(w, h, &t.bbox, &mut data, &mut mask);
    }
    let clean = Raster::from_parts(w, h, data);
    let image = if spec.speckle_sigma > 0.0 {
        apply_speckle(&clean, spec.speckle_sigma, derive_seed(spec.seed, 1), PixelRange::Real)
    } else {
        clean
    };
    Ok(Scene {
        image: image.quantize_f32(),
        truth,
        mask,
    })
}
