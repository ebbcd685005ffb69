//! Deterministic ray-cast indoor scenes with exact surface ids and object masks.
//!
//! Camera at the origin looking down `+z`, `y` pointing down, pixel `(r, c)` on the ray
//! `((c − ox)/fx, (r − oy)/fy, 1)`, so back-projecting the rendered depth recovers the
//! hit points. Depth is stored to the millimeter, matching a 16-bit PNG round trip.

use std::f64::consts::PI;
use std::path::Path;

use image::{Rgb, RgbImage};
use nalgebra::{Matrix3, Vector3};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::rgbd_io::{
    encode_png, mask_to_image, write_atomic, write_depth_png, CameraIntrinsics, GroundTruth, IoError,
    RgbdImage, DEFAULT_DEPTH_SCALE,
};

/// Floor height below the camera, meters (`y` grows downward).
pub const FLOOR_Y: f64 = 1.5;
pub const WIDTH: usize = 160;
/// Axial depth noise at 1 m, Kinect-like (σ grows with depth squared).
pub const SENSOR_NOISE: f64 = 0.001;
pub const HEIGHT: usize = 120;

pub fn default_intrinsics() -> CameraIntrinsics {
    CameraIntrinsics::new(150.0, 150.0, 80.0, 20.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Appearance {
    Solid([u8; 3]),
    /// Bands alternating along a world axis.
    Stripes { a: [u8; 3], b: [u8; 3], period: f64, axis: usize },
    Checker { a: [u8; 3], b: [u8; 3], size: f64 },
}

impl Appearance {
    fn color(&self, p: &Vector3<f64>) -> [f64; 3] {
        let pick = |c: &[u8; 3]| c.map(|v| v as f64);
        match self {
            Appearance::Solid(c) => pick(c),
            Appearance::Stripes { a, b, period, axis } => {
                if (p[*axis] / period).floor().rem_euclid(2.0) == 0.0 {
                    pick(a)
                } else {
                    pick(b)
                }
            }
            Appearance::Checker { a, b, size } => {
                let k = (p.x / size).floor() + (p.y / size).floor() + (p.z / size).floor();
                if k.rem_euclid(2.0) == 0.0 {
                    pick(a)
                } else {
                    pick(b)
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Shape {
    /// Infinite plane.
    Plane { point: Vector3<f64>, normal: Vector3<f64> },
    /// Box rotated by `yaw` about the vertical axis; six faces.
    Box { center: Vector3<f64>, half: Vector3<f64>, yaw: f64 },
    /// Vertical cylinder standing on `base` (bottom center); side and top cap.
    Cylinder { base: Vector3<f64>, radius: f64, height: f64 },
}

impl Shape {
    fn surface_count(&self) -> u32 {
        match self {
            Shape::Plane { .. } => 1,
            Shape::Box { .. } => 6,
            Shape::Cylinder { .. } => 2,
        }
    }

    /// Nearest hit along `dir` from the origin: `(t, local surface, outward normal)`.
    fn intersect(&self, dir: &Vector3<f64>) -> Option<(f64, u32, Vector3<f64>)> {
        match self {
            Shape::Plane { point, normal } => {
                let denom = dir.dot(normal);
                if denom.abs() < 1e-12 {
                    return None;
                }
                let t = point.dot(normal) / denom;
                let n = if denom > 0.0 { -normal } else { *normal };
                (t > 1e-9).then_some((t, 0, n))
            }
            Shape::Box { center, half, yaw } => {
                let rot = yaw_matrix(*yaw);
                let o = rot.transpose() * (-center);
                let d = rot.transpose() * dir;
                let (mut t0, mut t1) = (f64::NEG_INFINITY, f64::INFINITY);
                let mut enter = (0usize, 0.0f64);
                for k in 0..3 {
                    if d[k].abs() < 1e-15 {
                        if o[k].abs() > half[k] {
                            return None;
                        }
                        continue;
                    }
                    let (mut a, mut b) = ((-half[k] - o[k]) / d[k], (half[k] - o[k]) / d[k]);
                    let mut sign = -1.0;
                    if a > b {
                        std::mem::swap(&mut a, &mut b);
                        sign = 1.0;
                    }
                    if a > t0 {
                        t0 = a;
                        enter = (k, sign);
                    }
                    t1 = t1.min(b);
                }
                if t0 > t1 || t0 <= 1e-9 {
                    return None;
                }
                let mut n = Vector3::zeros();
                n[enter.0] = enter.1;
                let face = 2 * enter.0 as u32 + (enter.1 > 0.0) as u32;
                Some((t0, face, rot * n))
            }
            Shape::Cylinder { base, radius, height } => {
                let top = base.y - height;
                let mut best: Option<(f64, u32, Vector3<f64>)> = None;
                // side: (t dx − cx)² + (t dz − cz)² = r²
                let (a, b, c) = (
                    dir.x * dir.x + dir.z * dir.z,
                    -2.0 * (dir.x * base.x + dir.z * base.z),
                    base.x * base.x + base.z * base.z - radius * radius,
                );
                let disc = b * b - 4.0 * a * c;
                if disc >= 0.0 {
                    let t = (-b - disc.sqrt()) / (2.0 * a);
                    let y = t * dir.y;
                    if t > 1e-9 && y >= top && y <= base.y {
                        let p = dir * t;
                        let n = Vector3::new(p.x - base.x, 0.0, p.z - base.z).normalize();
                        best = Some((t, 0, n));
                    }
                }
                if dir.y.abs() > 1e-12 {
                    let t = top / dir.y;
                    let p = dir * t;
                    let r2 = (p.x - base.x).powi(2) + (p.z - base.z).powi(2);
                    if t > 1e-9 && r2 <= radius * radius && best.map_or(true, |h| t < h.0) {
                        best = Some((t, 1, Vector3::new(0.0, -1.0, 0.0)));
                    }
                }
                best
            }
        }
    }
}

fn yaw_matrix(yaw: f64) -> Matrix3<f64> {
    let (s, c) = yaw.sin_cos();
    Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    pub name: String,
    pub shape: Shape,
    pub appearance: Appearance,
}

/// Photometric darkening of everything within `radius` of `center` (no geometry).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShadowPatch {
    pub center: Vector3<f64>,
    pub radius: f64,
    pub factor: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub width: usize,
    pub height: usize,
    pub intrinsics: CameraIntrinsics,
    pub objects: Vec<SceneObject>,
    pub shadows: Vec<ShadowPatch>,
    /// Direction toward the light.
    pub light: Vector3<f64>,
    /// Shading floor: `ambient + (1 − ambient)·max(0, n·l)`; 1 disables directional light.
    pub ambient: f64,
    /// Objects forming the ground-truth saliency mask.
    pub salient: Vec<String>,
    pub label: Option<String>,
    /// Depth noise standard deviation at 1 m; grows with the square of depth.
    pub depth_noise: f64,
    pub noise_seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderedScene {
    pub image: RgbdImage,
    pub ground_truth: GroundTruth,
    /// Distinct id per object face, in object order.
    pub surface_ids: Array2<u32>,
    /// Index into `object_names`.
    pub object_ids: Array2<u32>,
    pub object_names: Vec<String>,
}

impl RenderedScene {
    pub fn object_mask(&self, name: &str) -> Array2<bool> {
        match self.object_names.iter().position(|n| n == name) {
            Some(i) => self.object_ids.mapv(|o| o == i as u32),
            None => Array2::from_elem(self.object_ids.dim(), false),
        }
    }
}

pub fn render(spec: &SceneSpec, id: &str) -> RenderedScene {
    let (h, w) = (spec.height, spec.width);
    let intr = spec.intrinsics;
    let light = spec.light.normalize();
    let offsets: Vec<u32> = spec
        .objects
        .iter()
        .scan(0u32, |acc, o| {
            let start = *acc;
            *acc += o.shape.surface_count();
            Some(start)
        })
        .collect();
    let mut rgb = RgbImage::new(w as u32, h as u32);
    let mut depth = Array2::zeros((h, w));
    let mut surface_ids = Array2::from_elem((h, w), u32::MAX);
    let mut object_ids = Array2::from_elem((h, w), u32::MAX);
    let mut noise_rng = ChaCha8Rng::seed_from_u64(spec.noise_seed);
    for r in 0..h {
        for c in 0..w {
            let dir = Vector3::new((c as f64 - intr.ox) / intr.fx, (r as f64 - intr.oy) / intr.fy, 1.0);
            let hit = spec
                .objects
                .iter()
                .enumerate()
                .filter_map(|(i, o)| o.shape.intersect(&dir).map(|hit| (i, hit)))
                .min_by(|a, b| a.1 .0.total_cmp(&b.1 .0));
            let Some((oi, (t, face, normal))) = hit else { continue };
            let p = dir * t;
            let shade = spec.ambient + (1.0 - spec.ambient) * normal.dot(&light).max(0.0);
            let dark: f64 = spec
                .shadows
                .iter()
                .filter(|s| (p - s.center).norm() <= s.radius)
                .map(|s| s.factor)
                .product();
            let color = spec.objects[oi].appearance.color(&p).map(|v| (v * shade * dark).round().clamp(0.0, 255.0) as u8);
            rgb.put_pixel(c as u32, r as u32, Rgb(color));
            let noisy = t + spec.depth_noise * t * t * noise_rng.sample::<f64, _>(StandardNormal);
            depth[[r, c]] = (noisy.max(1e-3) * 1000.0).round() / 1000.0;
            surface_ids[[r, c]] = offsets[oi] + face;
            object_ids[[r, c]] = oi as u32;
        }
    }
    let object_names: Vec<String> = spec.objects.iter().map(|o| o.name.clone()).collect();
    let salient: Vec<u32> = spec
        .salient
        .iter()
        .filter_map(|s| object_names.iter().position(|n| n == s).map(|i| i as u32))
        .collect();
    let mask = object_ids.mapv(|o| salient.contains(&o));
    RenderedScene {
        image: RgbdImage::new(id, rgb, depth, intr).expect("renderer produces consistent images"),
        ground_truth: GroundTruth {
            mask,
            scene_label: spec.label.clone(),
        },
        surface_ids,
        object_ids,
        object_names,
    }
}

fn floor(appearance: Appearance) -> SceneObject {
    SceneObject {
        name: "floor".into(),
        shape: Shape::Plane {
            point: Vector3::new(0.0, FLOOR_Y, 0.0),
            normal: Vector3::new(0.0, -1.0, 0.0),
        },
        appearance,
    }
}

fn back_wall(z: f64, appearance: Appearance) -> SceneObject {
    SceneObject {
        name: "wall".into(),
        shape: Shape::Plane {
            point: Vector3::new(0.0, 0.0, z),
            normal: Vector3::new(0.0, 0.0, -1.0),
        },
        appearance,
    }
}

/// Box resting on the floor; `size` is width × height × depth.
fn floor_box(name: &str, x: f64, z: f64, size: [f64; 3], yaw: f64, appearance: Appearance) -> SceneObject {
    SceneObject {
        name: name.into(),
        shape: Shape::Box {
            center: Vector3::new(x, FLOOR_Y - size[1] / 2.0, z),
            half: Vector3::new(size[0] / 2.0, size[1] / 2.0, size[2] / 2.0),
            yaw,
        },
        appearance,
    }
}

fn default_light() -> Vector3<f64> {
    Vector3::new(0.4, -1.0, -0.6)
}

/// Floor, back wall, a yawed cabinet, and a small cup; the cabinet is the salient object.
pub fn room_spec() -> SceneSpec {
    SceneSpec {
        width: WIDTH,
        height: HEIGHT,
        intrinsics: default_intrinsics(),
        objects: vec![
            floor(Appearance::Solid([170, 170, 165])),
            back_wall(4.5, Appearance::Solid([215, 200, 160])),
            floor_box("cabinet", 0.3, 3.2, [1.0, 0.8, 0.6], 30f64.to_radians(), Appearance::Solid([150, 50, 30])),
            SceneObject {
                name: "cup".into(),
                shape: Shape::Cylinder {
                    base: Vector3::new(-0.8, FLOOR_Y, 2.6),
                    radius: 0.06,
                    height: 0.15,
                },
                appearance: Appearance::Solid([30, 60, 200]),
            },
        ],
        shadows: vec![],
        light: default_light(),
        ambient: 0.55,
        salient: vec!["cabinet".into()],
        label: None,
        depth_noise: SENSOR_NOISE,
        noise_seed: 0,
    }
}

pub fn room_scene() -> RenderedScene {
    render(&room_spec(), "room")
}

fn jitter_color<R: Rng>(rng: &mut R, base: [u8; 3], amount: i32) -> [u8; 3] {
    base.map(|v| (v as i32 + rng.gen_range(-amount..=amount)).clamp(0, 255) as u8)
}

/// Scenes where two boxes share the floor's and wall's albedo under ambient light while
/// cast-shadow patches darken floor and wall: every color edge is a shadow, every geometric
/// edge is invisible in color.
pub fn shadow_spec(seed: u64) -> SceneSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let albedo = [
        rng.gen_range(140..190u8),
        rng.gen_range(140..190u8),
        rng.gen_range(140..190u8),
    ];
    let look = Appearance::Solid(albedo);
    let mut objects = vec![floor(look.clone()), back_wall(4.5, look.clone())];
    for (i, side) in [-1.0, 1.0].into_iter().enumerate() {
        let x = side * rng.gen_range(0.45..0.9);
        let z = rng.gen_range(2.9..3.6);
        let size = [rng.gen_range(0.5..0.8), rng.gen_range(0.5..0.9), rng.gen_range(0.4..0.7)];
        let yaw = rng.gen_range(-0.6..0.6);
        objects.push(floor_box(&format!("box_{i}"), x, z, size, yaw, look.clone()));
    }
    let mut shadows = Vec::new();
    for _ in 0..rng.gen_range(3..6) {
        shadows.push(ShadowPatch {
            center: Vector3::new(rng.gen_range(-1.5..1.5), FLOOR_Y, rng.gen_range(2.4..4.2)),
            radius: rng.gen_range(0.25..0.6),
            factor: rng.gen_range(0.45..0.7),
        });
    }
    // one patch on the wall as well
    shadows.push(ShadowPatch {
        center: Vector3::new(rng.gen_range(-1.5..1.5), rng.gen_range(0.0..1.0), 4.5),
        radius: rng.gen_range(0.3..0.6),
        factor: rng.gen_range(0.5..0.7),
    });
    SceneSpec {
        width: WIDTH,
        height: HEIGHT,
        intrinsics: default_intrinsics(),
        objects,
        shadows,
        light: default_light(),
        ambient: 1.0,
        salient: vec!["box_0".into(), "box_1".into()],
        label: None,
        depth_noise: SENSOR_NOISE,
        noise_seed: seed,
    }
}

pub fn shadow_suite(seed: u64, count: usize) -> Vec<RenderedScene> {
    (0..count)
        .map(|i| render(&shadow_spec(seed.wrapping_mul(1000).wrapping_add(i as u64)), &format!("shadow_{i:02}")))
        .collect()
}

pub const SCENE_CLASSES: [&str; 3] = ["bedroom", "office", "kitchen"];

fn random_appearance<R: Rng>(rng: &mut R) -> Appearance {
    let a = [rng.gen(), rng.gen(), rng.gen()];
    let b = [rng.gen(), rng.gen(), rng.gen()];
    match rng.gen_range(0..3) {
        0 => Appearance::Solid(a),
        1 => Appearance::Stripes {
            a,
            b,
            period: rng.gen_range(0.02..0.08),
            axis: rng.gen_range(0..3),
        },
        _ => Appearance::Checker {
            a,
            b,
            size: rng.gen_range(0.02..0.06),
        },
    }
}

/// A room of class `class` (index into [`SCENE_CLASSES`]) with the class-defining furniture
/// in the back and small random clutter close to the camera.
pub fn class_scene_spec(class: usize, seed: u64) -> SceneSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ ((class as u64 + 1) << 32));
    let gray = |rng: &mut ChaCha8Rng, lo: u8, hi: u8| {
        let v = rng.gen_range(lo..hi);
        [v, v.saturating_sub(rng.gen_range(0..20)), v.saturating_sub(rng.gen_range(0..30))]
    };
    let floor_look = Appearance::Solid(gray(&mut rng, 90, 200));
    let wall_look = Appearance::Solid(gray(&mut rng, 150, 240));
    let x = rng.gen_range(-0.5..0.5);
    let z = rng.gen_range(3.3..3.7);
    let yaw = rng.gen_range(-0.5..0.5);
    let mut objects = vec![floor(floor_look), back_wall(4.5, wall_look)];
    let mut salient = Vec::new();
    match class {
        0 => {
            let look = Appearance::Stripes {
                a: jitter_color(&mut rng, [230, 230, 240], 15),
                b: jitter_color(&mut rng, [40, 50, 120], 15),
                period: 0.12,
                axis: 1,
            };
            objects.push(floor_box(
                "bed",
                x,
                z,
                [rng.gen_range(1.6..2.0), 0.55, 1.0],
                yaw,
                look,
            ));
            salient.push("bed".to_string());
        }
        1 => {
            let look = Appearance::Checker {
                a: jitter_color(&mut rng, [20, 20, 20], 10),
                b: jitter_color(&mut rng, [235, 235, 235], 10),
                size: 0.1,
            };
            objects.push(floor_box("desk", x, z, [rng.gen_range(1.1..1.4), 0.75, 0.7], yaw, look));
            salient.push("desk".to_string());
        }
        _ => {
            let look = Appearance::Stripes {
                a: jitter_color(&mut rng, [240, 240, 240], 10),
                b: jitter_color(&mut rng, [120, 120, 130], 10),
                period: 0.12,
                axis: 0,
            };
            objects.push(floor_box("counter", x, z, [rng.gen_range(1.4..1.8), 0.9, 0.6], yaw, look));
            salient.push("counter".to_string());
        }
    }
    for i in 0..rng.gen_range(2..5) {
        let cx = rng.gen_range(-0.9..0.9);
        let cz = rng.gen_range(2.3..2.8);
        let look = random_appearance(&mut rng);
        let name = format!("clutter_{i}");
        if rng.gen_bool(0.5) {
            let s = [rng.gen_range(0.1..0.22), rng.gen_range(0.08..0.2), rng.gen_range(0.1..0.2)];
            objects.push(floor_box(&name, cx, cz, s, rng.gen_range(0.0..PI), look));
        } else {
            objects.push(SceneObject {
                name,
                shape: Shape::Cylinder {
                    base: Vector3::new(cx, FLOOR_Y, cz),
                    radius: rng.gen_range(0.04..0.09),
                    height: rng.gen_range(0.1..0.25),
                },
                appearance: look,
            });
        }
    }
    SceneSpec {
        width: WIDTH,
        height: HEIGHT,
        intrinsics: default_intrinsics(),
        objects,
        shadows: vec![],
        light: default_light(),
        ambient: 0.55,
        salient,
        label: Some(SCENE_CLASSES[class].to_string()),
        depth_noise: SENSOR_NOISE,
        noise_seed: seed,
    }
}

/// `per_class` scenes of each class, interleaved by class; ids carry `prefix`.
pub fn class_suite(seed: u64, per_class: usize, prefix: &str) -> Vec<RenderedScene> {
    let mut out = Vec::new();
    for i in 0..per_class {
        for class in 0..SCENE_CLASSES.len() {
            let spec = class_scene_spec(class, seed.wrapping_mul(7919).wrapping_add(i as u64));
            out.push(render(&spec, &format!("{prefix}_{}_{i:02}", SCENE_CLASSES[class])));
        }
    }
    out
}

/// Writes `rgb/<id>.png`, `depth/<id>.png` (millimeters), `gt/<id>.png`, and appends
/// `rgb, depth, gt[, label]` to the manifest text.
pub fn write_scene(dir: &Path, scene: &RenderedScene, manifest: &mut String) -> Result<(), IoError> {
    let io = |e: std::io::Error| IoError::UnreadableFile {
        path: dir.to_path_buf(),
        reason: e.to_string(),
    };
    for sub in ["rgb", "depth", "gt"] {
        std::fs::create_dir_all(dir.join(sub)).map_err(io)?;
    }
    let id = &scene.image.id;
    let rgb_rel = format!("rgb/{id}.png");
    let depth_rel = format!("depth/{id}.png");
    let gt_rel = format!("gt/{id}.png");
    write_atomic(
        &dir.join(&rgb_rel),
        &encode_png(&image::DynamicImage::ImageRgb8(scene.image.rgb.clone())),
    )
    .map_err(io)?;
    write_depth_png(&dir.join(&depth_rel), &scene.image.depth, DEFAULT_DEPTH_SCALE)?;
    write_atomic(
        &dir.join(&gt_rel),
        &encode_png(&image::DynamicImage::ImageLuma8(mask_to_image(&scene.ground_truth.mask))),
    )
    .map_err(io)?;
    manifest.push_str(&format!("{rgb_rel}, {depth_rel}, {gt_rel}"));
    if let Some(label) = &scene.ground_truth.scene_label {
        manifest.push_str(", ");
        manifest.push_str(label);
    }
    manifest.push('\n');
    Ok(())
}

pub fn write_suite(dir: &Path, name: &str, scenes: &[RenderedScene]) -> Result<(), IoError> {
    let mut manifest = String::new();
    for s in scenes {
        write_scene(dir, s, &mut manifest)?;
    }
    write_atomic(&dir.join(format!("{name}.txt")), manifest.as_bytes()).map_err(|e| IoError::UnreadableFile {
        path: dir.to_path_buf(),
        reason: e.to_string(),
    })
}
