//! Loading and validation of registered RGB-D frames and the plain-text dataset manifest.
//!
//! Depth is always held in meters as `f64`. A value of `0.0` marks a missing measurement;
//! it is kept as-is and downstream stages skip such pixels.

use std::fs;
use std::io::{BufRead, BufReader, Read};
use std::path::{Path, PathBuf};

use image::{DynamicImage, RgbImage};
use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Magic bytes of the float depth raster: `"VSDP"`, then `u32` height and `u32` width (LE).
pub const VSDP_MAGIC: &[u8; 4] = b"VSDP";

/// Default millimeter-to-meter scale for 16-bit depth PNGs.
pub const DEFAULT_DEPTH_SCALE: f64 = 1.0 / 1000.0;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("dimension mismatch: rgb is {rgb_w}x{rgb_h}, depth is {depth_w}x{depth_h}")]
    DimensionMismatch {
        rgb_w: usize,
        rgb_h: usize,
        depth_w: usize,
        depth_h: usize,
    },
    #[error("unreadable file {path}: {reason}")]
    UnreadableFile { path: PathBuf, reason: String },
    #[error("negative or non-finite depth {value} at row {row}, col {col}")]
    NegativeDepth { row: usize, col: usize, value: f64 },
    #[error("unsupported depth format in {0}: expected 16-bit single-channel PNG or VSDP raster")]
    UnsupportedDepthFormat(PathBuf),
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(String),
    #[error("malformed manifest at line {line}: {reason}")]
    MalformedManifest { line: usize, reason: String },
    #[error("manifest line {line}: {source}")]
    Line {
        line: usize,
        #[source]
        source: Box<IoError>,
    },
}

/// Pinhole intrinsics in pixels. `ox` is the principal-point column, `oy` the row.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub ox: f64,
    pub oy: f64,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, ox: f64, oy: f64) -> Self {
        Self { fx, fy, ox, oy }
    }

    pub fn validate(&self, width: usize, height: usize) -> Result<(), IoError> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(IoError::InvalidIntrinsics(format!(
                "focal lengths must be positive (fx={}, fy={})",
                self.fx, self.fy
            )));
        }
        if !(self.ox >= 0.0 && self.ox < width as f64 && self.oy >= 0.0 && self.oy < height as f64)
        {
            return Err(IoError::InvalidIntrinsics(format!(
                "principal point ({}, {}) outside {}x{} image",
                self.ox, self.oy, width, height
            )));
        }
        Ok(())
    }
}

/// A registered RGB image and metric depth map.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbdImage {
    pub id: String,
    pub rgb: RgbImage,
    /// Meters, `[[row, col]]`; zero means missing.
    pub depth: Array2<f64>,
    pub intrinsics: CameraIntrinsics,
}

impl RgbdImage {
    pub fn new(
        id: impl Into<String>,
        rgb: RgbImage,
        depth: Array2<f64>,
        intrinsics: CameraIntrinsics,
    ) -> Result<Self, IoError> {
        let (h, w) = depth.dim();
        if rgb.width() as usize != w || rgb.height() as usize != h {
            return Err(IoError::DimensionMismatch {
                rgb_w: rgb.width() as usize,
                rgb_h: rgb.height() as usize,
                depth_w: w,
                depth_h: h,
            });
        }
        if let Some(((row, col), &value)) =
            depth.indexed_iter().find(|(_, v)| !(v.is_finite() && **v >= 0.0))
        {
            return Err(IoError::NegativeDepth { row, col, value });
        }
        intrinsics.validate(w, h)?;
        Ok(Self {
            id: id.into(),
            rgb,
            depth,
            intrinsics,
        })
    }

    pub fn width(&self) -> usize {
        self.depth.ncols()
    }

    pub fn height(&self) -> usize {
        self.depth.nrows()
    }
}

/// Binary saliency annotation (true = salient) with an optional scene label.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub mask: Array2<bool>,
    pub scene_label: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoadOptions {
    /// Multiplier from 16-bit integer depth units to meters.
    pub depth_scale: f64,
}

impl Default for LoadOptions {
    fn default() -> Self {
        Self {
            depth_scale: DEFAULT_DEPTH_SCALE,
        }
    }
}

fn unreadable(path: &Path, reason: impl ToString) -> IoError {
    IoError::UnreadableFile {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    }
}

pub fn read_rgb(path: &Path) -> Result<RgbImage, IoError> {
    let img = image::open(path).map_err(|e| unreadable(path, e))?;
    Ok(img.to_rgb8())
}

/// Reads a depth file, converting to meters. Accepts a 16-bit gray PNG (scaled by
/// `depth_scale`) or a VSDP float raster (already in meters).
pub fn read_depth(path: &Path, depth_scale: f64) -> Result<Array2<f64>, IoError> {
    let bytes = fs::read(path).map_err(|e| unreadable(path, e))?;
    if bytes.len() >= 4 && &bytes[..4] == VSDP_MAGIC {
        return decode_vsdp(&bytes).map_err(|reason| unreadable(path, reason));
    }
    let img = image::load_from_memory(&bytes).map_err(|e| unreadable(path, e))?;
    match img {
        DynamicImage::ImageLuma16(buf) => {
            let (w, h) = (buf.width() as usize, buf.height() as usize);
            let data = buf.into_raw().into_iter().map(|v| v as f64 * depth_scale).collect();
            Ok(Array2::from_shape_vec((h, w), data).expect("shape matches buffer"))
        }
        _ => Err(IoError::UnsupportedDepthFormat(path.to_path_buf())),
    }
}

fn decode_vsdp(bytes: &[u8]) -> Result<Array2<f64>, String> {
    if bytes.len() < 12 {
        return Err("truncated VSDP header".into());
    }
    let h = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let w = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let body = &bytes[12..];
    if body.len() != h * w * 4 {
        return Err(format!(
            "VSDP body has {} bytes, expected {} for {}x{}",
            body.len(),
            h * w * 4,
            w,
            h
        ));
    }
    let data = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    Ok(Array2::from_shape_vec((h, w), data).expect("length checked"))
}

/// Encodes a float raster in the VSDP layout.
pub fn encode_vsdp(plane: &Array2<f64>) -> Vec<u8> {
    let (h, w) = plane.dim();
    let mut out = Vec::with_capacity(12 + h * w * 4);
    out.extend_from_slice(VSDP_MAGIC);
    out.extend_from_slice(&(h as u32).to_le_bytes());
    out.extend_from_slice(&(w as u32).to_le_bytes());
    for v in plane.iter() {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    out
}

pub fn write_vsdp(path: &Path, plane: &Array2<f64>) -> std::io::Result<()> {
    write_atomic(path, &encode_vsdp(plane))
}

/// Writes depth as a 16-bit PNG using the inverse of `depth_scale` (values rounded and clamped).
pub fn write_depth_png(path: &Path, depth: &Array2<f64>, depth_scale: f64) -> Result<(), IoError> {
    let (h, w) = depth.dim();
    let raw: Vec<u16> = depth
        .iter()
        .map(|d| (d / depth_scale).round().clamp(0.0, u16::MAX as f64) as u16)
        .collect();
    let buf = image::ImageBuffer::<image::Luma<u16>, _>::from_raw(w as u32, h as u32, raw)
        .expect("buffer size matches");
    let mut bytes = Vec::new();
    buf.write_to(&mut std::io::Cursor::new(&mut bytes), image::ImageFormat::Png)
        .map_err(|e| unreadable(path, e))?;
    write_atomic(path, &bytes).map_err(|e| unreadable(path, e))
}

/// Reads an 8-bit mask image; pixels above 127 are salient.
pub fn read_mask(path: &Path) -> Result<Array2<bool>, IoError> {
    let img = image::open(path).map_err(|e| unreadable(path, e))?.to_luma8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data = img.into_raw().into_iter().map(|v| v > 127).collect();
    Ok(Array2::from_shape_vec((h, w), data).expect("shape matches buffer"))
}

/// Reads an 8-bit saliency map scaled to [0, 1].
pub fn read_saliency_map(path: &Path) -> Result<Array2<f64>, IoError> {
    let img = image::open(path).map_err(|e| unreadable(path, e))?.to_luma8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data = img.into_raw().into_iter().map(|v| v as f64 / 255.0).collect();
    Ok(Array2::from_shape_vec((h, w), data).expect("shape matches buffer"))
}

pub fn mask_to_image(mask: &Array2<bool>) -> image::GrayImage {
    let (h, w) = mask.dim();
    image::GrayImage::from_fn(w as u32, h as u32, |x, y| {
        image::Luma([if mask[[y as usize, x as usize]] { 255 } else { 0 }])
    })
}

pub fn encode_png(img: &DynamicImage) -> Vec<u8> {
    let mut bytes = Vec::new();
    img.write_to(&mut std::io::Cursor::new(&mut bytes), image::ImageFormat::Png)
        .expect("PNG encoding into memory cannot fail");
    bytes
}

/// Write to a sibling temp file, then rename over the destination.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let file_name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let tmp = path.with_file_name(format!(".{file_name}.tmp"));
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)
}

pub fn load_rgbd(
    rgb_path: &Path,
    depth_path: &Path,
    intrinsics: CameraIntrinsics,
    options: &LoadOptions,
) -> Result<RgbdImage, IoError> {
    let rgb = read_rgb(rgb_path)?;
    let depth = read_depth(depth_path, options.depth_scale)?;
    let id = rgb_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| rgb_path.display().to_string());
    RgbdImage::new(id, rgb, depth, intrinsics)
}

/// One parsed manifest record; paths are resolved against the manifest's directory.
#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub line: usize,
    pub rgb: PathBuf,
    pub depth: PathBuf,
    pub gt: Option<PathBuf>,
    pub scene_label: Option<String>,
}

pub fn parse_manifest<R: Read>(reader: R, base: &Path) -> Result<Vec<ManifestEntry>, IoError> {
    let mut entries = Vec::new();
    for (idx, line) in BufReader::new(reader).lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| IoError::MalformedManifest {
            line: line_no,
            reason: e.to_string(),
        })?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = trimmed.split(',').map(str::trim).collect();
        if fields.len() < 2 || fields.len() > 4 || fields[0].is_empty() || fields[1].is_empty() {
            return Err(IoError::MalformedManifest {
                line: line_no,
                reason: format!(
                    "expected `rgb, depth[, gt][, scene_label]`, got {} field(s)",
                    fields.len()
                ),
            });
        }
        let resolve = |p: &str| {
            let p = Path::new(p);
            if p.is_absolute() {
                p.to_path_buf()
            } else {
                base.join(p)
            }
        };
        let non_empty = |i: usize| fields.get(i).filter(|f| !f.is_empty()).copied();
        entries.push(ManifestEntry {
            line: line_no,
            rgb: resolve(fields[0]),
            depth: resolve(fields[1]),
            gt: non_empty(2).map(resolve),
            scene_label: non_empty(3).map(str::to_string),
        });
    }
    Ok(entries)
}

pub fn read_manifest(manifest_path: &Path) -> Result<Vec<ManifestEntry>, IoError> {
    let file = fs::File::open(manifest_path).map_err(|e| unreadable(manifest_path, e))?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    parse_manifest(file, base)
}

pub fn load_entry(
    entry: &ManifestEntry,
    intrinsics: CameraIntrinsics,
    options: &LoadOptions,
) -> Result<(RgbdImage, Option<GroundTruth>), IoError> {
    let tag = |e: IoError| IoError::Line {
        line: entry.line,
        source: Box::new(e),
    };
    let image = load_rgbd(&entry.rgb, &entry.depth, intrinsics, options).map_err(tag)?;
    let gt = match &entry.gt {
        Some(path) => {
            let mask = read_mask(path).map_err(tag)?;
            if mask.dim() != image.depth.dim() {
                return Err(tag(IoError::DimensionMismatch {
                    rgb_w: image.width(),
                    rgb_h: image.height(),
                    depth_w: mask.ncols(),
                    depth_h: mask.nrows(),
                }));
            }
            Some(GroundTruth {
                mask,
                scene_label: entry.scene_label.clone(),
            })
        }
        None => entry.scene_label.clone().map(|label| GroundTruth {
            mask: Array2::from_elem(image.depth.dim(), false),
            scene_label: Some(label),
        }),
    };
    Ok((image, gt))
}

/// Loads every manifest record (in parallel), preserving manifest order. The first
/// failing record, by line order, is reported.
pub fn load_dataset(
    manifest_path: &Path,
    intrinsics: CameraIntrinsics,
    options: &LoadOptions,
) -> Result<Vec<(RgbdImage, Option<GroundTruth>)>, IoError> {
    let entries = read_manifest(manifest_path)?;
    entries
        .par_iter()
        .map(|e| load_entry(e, intrinsics, options))
        .collect::<Vec<_>>()
        .into_iter()
        .collect()
}
