//! Run configuration: one TOML file carrying every tunable of the pipeline.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{GlcmParams, NormalParams};
use crate::region_merge::{MergeOptions, MergeThresholds};
use crate::rgbd_io::{CameraIntrinsics, DEFAULT_DEPTH_SCALE};
use crate::superpixel::SlicParams;
use crate::vol_saliency::{ExternalClassifier, GeometricClassifier, MaskOptions, SegmentClassifier};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {reason}")]
    Unreadable { path: PathBuf, reason: String },
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ClassifierSpec {
    Geometric(GeometricClassifier),
    /// `command[0]` is the program, the rest are leading arguments; the crop path is
    /// appended.
    External { command: Vec<String> },
}

impl Default for ClassifierSpec {
    fn default() -> Self {
        ClassifierSpec::Geometric(GeometricClassifier::default())
    }
}

impl ClassifierSpec {
    /// `work_dir` receives temporary crops for external commands.
    pub fn build(&self, work_dir: &Path) -> Result<Box<dyn SegmentClassifier>, ConfigError> {
        match self {
            ClassifierSpec::Geometric(g) => Ok(Box::new(g.clone())),
            ClassifierSpec::External { command } => {
                let (program, args) = command
                    .split_first()
                    .ok_or_else(|| ConfigError::Invalid("external classifier needs a command".into()))?;
                Ok(Box::new(ExternalClassifier {
                    program: program.clone(),
                    args: args.to_vec(),
                    work_dir: work_dir.to_path_buf(),
                }))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SaliencyConfig {
    pub tau: f64,
    pub rho: BTreeSet<String>,
    pub strict_and: bool,
}

impl Default for SaliencyConfig {
    fn default() -> Self {
        let m = MaskOptions::default();
        Self {
            tau: m.tau,
            rho: m.rho,
            strict_and: m.strict_and,
        }
    }
}

impl SaliencyConfig {
    pub fn mask_options(&self) -> MaskOptions {
        MaskOptions {
            tau: self.tau,
            rho: self.rho.clone(),
            strict_and: self.strict_and,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MergeConfig {
    pub c_th: f64,
    pub k_th: f64,
    pub d_th: f64,
    pub delta: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub beta3: f64,
    pub components: usize,
    pub merge_nonplanar: bool,
    pub group_convex_objects: bool,
    pub convexity_threshold: f64,
    pub depth_continuity: f64,
    /// Radians.
    pub coplanar_angle: f64,
    pub coplanar_offset: f64,
}

impl Default for MergeConfig {
    fn default() -> Self {
        let o = MergeOptions::default();
        let t = o.thresholds;
        Self {
            c_th: t.c_th,
            k_th: t.k_th,
            d_th: t.d_th,
            delta: t.delta,
            beta1: t.beta1,
            beta2: t.beta2,
            beta3: t.beta3,
            components: o.components,
            merge_nonplanar: o.merge_nonplanar,
            group_convex_objects: o.group_convex_objects,
            convexity_threshold: o.convexity_threshold,
            depth_continuity: o.depth_continuity,
            coplanar_angle: o.coplanar_angle,
            coplanar_offset: o.coplanar_offset,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Dataset manifest; relative paths resolve against the config file's directory.
    pub manifest: Option<PathBuf>,
    pub output: PathBuf,
    pub seed: u64,
    /// Which depth maps the manifest points at (`raw` or `inpainted`); recorded only.
    pub depth_source: String,
    pub depth_scale: f64,
    pub intrinsics: CameraIntrinsics,
    pub normals: NormalParams,
    pub glcm: GlcmParams,
    pub slic: SlicParams,
    pub merge: MergeConfig,
    pub saliency: SaliencyConfig,
    pub classifier: ClassifierSpec,
    /// Also write per-superpixel boundary overlays.
    pub debug_overlays: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            manifest: None,
            output: PathBuf::from("out"),
            seed: 0,
            depth_source: "raw".into(),
            depth_scale: DEFAULT_DEPTH_SCALE,
            // NYUv2 Kinect color camera
            intrinsics: CameraIntrinsics::new(518.857_901, 519.469_611, 325.582_449, 253.736_166),
            normals: NormalParams::default(),
            glcm: GlcmParams::default(),
            slic: SlicParams::default(),
            merge: MergeConfig::default(),
            saliency: SaliencyConfig::default(),
            classifier: ClassifierSpec::default(),
            debug_overlays: false,
        }
    }
}

/// A commented configuration equal to [`RunConfig::default`].
pub const DEFAULT_CONFIG_TOML: &str = r#"# volsal run configuration

# manifest = "data/manifest.txt"
output = "out"
seed = 0
# raw | inpainted (recorded in run.json only)
depth_source = "raw"
# 16-bit depth units to meters
depth_scale = 0.001
# also write superpixel boundary overlays
debug_overlays = false

[intrinsics]
fx = 518.857901
fy = 519.469611
ox = 325.582449
oy = 253.736166

[normals]
k = 16
window = 7

[glcm]
levels = 16
offsets = [[0, 1], [1, 0], [1, 1], [1, -1]]

[slic]
num_superpixels = 200
# m, divides the LAB distance
compactness = 10.0
# a, meters
max_spatial = 0.5
# b, d: radians
max_azimuth = 1.5707963267948966
max_elevation = 1.5707963267948966
max_iters = 10
enable_spatial_terms = true

[merge]
# original method: c_th = 0.05, k_th = 5, D_th = 1.5, delta = 0.35
c_th = 0.05
k_th = 5.0
d_th = 1.5
delta = 0.35
# original method: beta1 = 0.4 (color), beta2 = 0.6 (density), beta3 = 0.5 (surface normal)
beta1 = 0.4
beta2 = 0.6
beta3 = 0.5
# mixture components per region
components = 1
merge_nonplanar = false
group_convex_objects = true
convexity_threshold = 0.1
depth_continuity = 0.1
# flat-surface grouping: 10 degrees, 2 cm
coplanar_angle = 0.17453292519943295
coplanar_offset = 0.02

[saliency]
# original method: tau = 0.2, rho = {wall, floor}
tau = 0.2
rho = ["floor", "wall"]
# drop a segment only when below tau AND unwanted (default: either)
strict_and = false

[classifier]
kind = "geometric"
min_planarity = 0.8
wall_max_up = 0.3
wall_min_span = 0.5
floor_min_up = 0.85
floor_max_height = 0.15
# kind = "external"
# command = ["python3", "classify.py"]
"#;

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))
    }

    /// Loads and validates; relative paths are resolved against the file's directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Unreadable {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        if let Some(m) = &cfg.manifest {
            if m.is_relative() {
                cfg.manifest = Some(base.join(m));
            }
        }
        if cfg.output.is_relative() {
            cfg.output = base.join(&cfg.output);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if !(0.0..=1.0).contains(&self.saliency.tau) {
            return bad(format!("tau = {} outside [0, 1]", self.saliency.tau));
        }
        if !(self.depth_scale > 0.0 && self.depth_scale.is_finite()) {
            return bad(format!("depth_scale = {}", self.depth_scale));
        }
        if let Some(m) = &self.manifest {
            if !m.is_file() {
                return bad(format!("manifest {} does not exist", m.display()));
            }
        }
        self.slic.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        let m = &self.merge;
        if m.components == 0 {
            return bad("merge.components must be at least 1".into());
        }
        if !(m.beta1 + m.beta2 + m.beta3 > 0.0) || [m.beta1, m.beta2, m.beta3].iter().any(|b| *b < 0.0) {
            return bad("merge betas must be non-negative with a positive sum".into());
        }
        if self.normals.k < 3 || self.normals.window % 2 == 0 {
            return bad(format!("normals: k = {}, window = {}", self.normals.k, self.normals.window));
        }
        if let ClassifierSpec::External { command } = &self.classifier {
            if command.is_empty() {
                return bad("external classifier needs a command".into());
            }
        }
        Ok(())
    }

    pub fn merge_options(&self, seed: u64) -> MergeOptions {
        let m = &self.merge;
        MergeOptions {
            thresholds: MergeThresholds {
                c_th: m.c_th,
                k_th: m.k_th,
                d_th: m.d_th,
                delta: m.delta,
                beta1: m.beta1,
                beta2: m.beta2,
                beta3: m.beta3,
            },
            components: m.components,
            seed,
            merge_nonplanar: m.merge_nonplanar,
            group_convex_objects: m.group_convex_objects,
            convexity_threshold: m.convexity_threshold,
            depth_continuity: m.depth_continuity,
            coplanar_angle: m.coplanar_angle,
            coplanar_offset: m.coplanar_offset,
            glcm: self.glcm.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn commented_default_matches_default() {
        assert_eq!(RunConfig::from_toml(DEFAULT_CONFIG_TOML).unwrap(), RunConfig::default());
    }

    #[test]
    fn toml_round_trip() {
        let mut cfg = RunConfig::default();
        cfg.classifier = ClassifierSpec::External {
            command: vec!["echo".into(), "x".into()],
        };
        cfg.saliency.tau = 0.3;
        assert_eq!(RunConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
    }

    #[test]
    fn rejects_bad_values() {
        let mut cfg = RunConfig::default();
        cfg.saliency.tau = 1.5;
        assert!(cfg.validate().is_err());
        assert!(RunConfig::from_toml("bogus_key = 1").is_err());
        let partial = RunConfig::from_toml("[saliency]\ntau = 0.4\n").unwrap();
        assert_eq!(partial.saliency.tau, 0.4);
        assert_eq!(partial.slic, SlicParams::default());
    }
}
