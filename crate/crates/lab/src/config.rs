//! Run configuration: a versioned JSON document with defaults for every field.

use std::path::{Path, PathBuf};

use natural_core::coefficient::{CoefficientConfig, Shape};
use natural_core::law::{DriverKind, LawConfig};
use natural_core::measure::TestMartingale;
use natural_core::pair::{PairConfig, YComponentConfig};
use natural_core::path::ModelSpec;
use natural_core::zmodel::ZGeneratorConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::LabError;

pub const SCHEMA: &str = "natural-lab/v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub schema: String,
    pub grid: GridConfig,
    pub law: LawConfig,
    pub z: ZGeneratorConfig,
    pub pair: PairSection,
    pub test_martingales: Vec<TestMartingale>,
    pub mc: McConfig,
    pub tree: TreeConfig,
    pub tolerances: Tolerances,
    pub regularity: RegularityConfig,
    pub polarization: PolarizationConfig,
    pub outputs: OutputConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub horizon: f64,
    pub steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComponentConfig {
    pub driver: DriverKind,
    pub scale: f64,
    pub shapes: Vec<Shape>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PairSection {
    pub components: Vec<ComponentConfig>,
    pub phi_width: f64,
    pub ladder_depth: u32,
    pub xgrid_resolution: usize,
    pub min_margin: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct McConfig {
    pub paths: usize,
    pub seed: u64,
    pub batch: usize,
    /// Paths whose realized jumps are rechecked against the dense-grid margins directly.
    pub margin_recheck_paths: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ZSourceKind {
    Forward,
    Backward,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TreeConfig {
    pub depth: usize,
    /// Expected branching factor; checked against the step law when present.
    pub branching: Option<usize>,
    pub z_source: ZSourceKind,
    /// Drift added at each level when `Z` is built backward.
    pub delta_profile: Vec<f64>,
    pub leaf_seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    pub exact: f64,
    pub enlargement: f64,
    pub identity: f64,
    pub sigma_multiplier: f64,
    pub atom_tol: f64,
    pub stability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RegularityConfig {
    /// Refinement point; must be a grid time where `A` has no atom.
    pub v_time: f64,
    pub levels: u32,
    pub paths: usize,
    pub identity_paths: usize,
    pub fd_steps: Vec<f64>,
    pub fd_start: f64,
    pub fine_steps: usize,
    pub strides: Vec<usize>,
    pub ugrid_paths: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PolarizationConfig {
    pub horizons: Vec<f64>,
    pub dt: f64,
    pub u_spacing: f64,
    pub u_max: f64,
    pub paths: usize,
    pub band: f64,
    pub ramp: f64,
    pub bins: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub directory: PathBuf,
    pub formats: Vec<Format>,
    pub max_export_paths: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            schema: SCHEMA.into(),
            grid: GridConfig {
                horizon: 1.0,
                steps: 10,
            },
            law: LawConfig::default(),
            z: ZGeneratorConfig::default(),
            pair: PairSection::default(),
            test_martingales: vec![
                TestMartingale::Linear {
                    name: "diffusion".into(),
                    coeffs: [1.0, 0.0, 0.0],
                },
                TestMartingale::Linear {
                    name: "jump".into(),
                    coeffs: [0.0, 1.0, 0.0],
                },
                TestMartingale::ZMartingale {
                    name: "z_martingale".into(),
                },
            ],
            mc: McConfig::default(),
            tree: TreeConfig::default(),
            tolerances: Tolerances::default(),
            regularity: RegularityConfig::default(),
            polarization: PolarizationConfig::default(),
            outputs: OutputConfig::default(),
        }
    }
}

impl Default for PairSection {
    fn default() -> Self {
        PairSection {
            components: vec![
                ComponentConfig {
                    driver: DriverKind::Jump,
                    scale: 0.8,
                    shapes: vec![Shape::Bump {
                        center: 0.45,
                        half_width: 0.35,
                        height: 1.2,
                    }],
                },
                ComponentConfig {
                    driver: DriverKind::Diffusion,
                    scale: 1.0,
                    shapes: vec![Shape::Bump {
                        center: 0.55,
                        half_width: 0.4,
                        height: -0.9,
                    }],
                },
            ],
            phi_width: 1.0,
            ladder_depth: 10,
            xgrid_resolution: 2048,
            min_margin: 1e-9,
        }
    }
}

impl Default for McConfig {
    fn default() -> Self {
        McConfig {
            paths: 100_000,
            seed: 20_241_017,
            batch: 1024,
            margin_recheck_paths: 1000,
        }
    }
}

impl Default for TreeConfig {
    fn default() -> Self {
        TreeConfig {
            depth: 6,
            branching: Some(3),
            z_source: ZSourceKind::Forward,
            delta_profile: vec![0.01, 0.0, 0.02, 0.0, 0.015, 0.005],
            leaf_seed: 7,
        }
    }
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            exact: 1e-12,
            enlargement: 1e-10,
            identity: 1e-10,
            sigma_multiplier: 3.0,
            atom_tol: 1e-12,
            stability: 1e-6,
        }
    }
}

impl Default for RegularityConfig {
    fn default() -> Self {
        RegularityConfig {
            v_time: 0.3,
            levels: 5,
            paths: 4,
            identity_paths: 1000,
            fd_steps: vec![1e-3, 1e-4, 1e-5],
            fd_start: 0.3,
            fine_steps: 40,
            strides: vec![4, 2, 1],
            ugrid_paths: 200,
        }
    }
}

impl Default for PolarizationConfig {
    fn default() -> Self {
        PolarizationConfig {
            horizons: vec![5.0, 10.0, 20.0, 40.0],
            dt: 0.05,
            u_spacing: 0.5,
            u_max: 5.0,
            paths: 10_000,
            band: 0.05,
            ramp: 0.25,
            bins: 20,
        }
    }
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            directory: PathBuf::from("natural-lab-out"),
            formats: vec![Format::Json, Format::Csv],
            max_export_paths: 100,
        }
    }
}

fn field_error(field: &str, message: impl Into<String>) -> LabError {
    LabError::Config {
        field: field.into(),
        message: message.into(),
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, LabError> {
        let text = std::fs::read_to_string(path).map_err(|e| field_error("--config", format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self, LabError> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| field_error("<document>", e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// SHA-256 of the canonical JSON serialization. The `outputs` block does
    /// not influence results and is left out.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.outputs = OutputConfig::default();
        let text = serde_json::to_string(&c).expect("configuration serializes");
        hex::encode(Sha256::digest(text.as_bytes()))
    }

    pub fn model_spec(&self) -> ModelSpec {
        ModelSpec {
            horizon: self.grid.horizon,
            steps: self.grid.steps,
            law: self.law,
            z: self.z,
            coefficient: CoefficientConfig {
                components: self.pair.components.iter().map(|c| c.shapes.clone()).collect(),
                phi_width: self.pair.phi_width,
                xgrid_resolution: self.pair.xgrid_resolution,
            },
            pair: PairConfig {
                components: self
                    .pair
                    .components
                    .iter()
                    .map(|c| YComponentConfig {
                        driver: c.driver,
                        scale: c.scale,
                    })
                    .collect(),
                ladder_depth: self.pair.ladder_depth,
                min_margin: self.pair.min_margin,
            },
        }
    }

    /// Checks every field that the model constructors do not already cover.
    pub fn validate(&self) -> Result<(), LabError> {
        if self.schema != SCHEMA {
            return Err(field_error("schema", format!("expected \"{SCHEMA}\", found \"{}\"", self.schema)));
        }
        let z = &self.z;
        if !(z.epsilon > 0.0 && z.epsilon < 0.5) {
            return Err(field_error("z.epsilon", "must lie in (0, 1/2)"));
        }
        if !(z.z0 > z.epsilon && z.z0 < 1.0 - z.epsilon) {
            return Err(field_error("z.z0", "must lie in (epsilon, 1 - epsilon)"));
        }
        if self.pair.components.is_empty() {
            return Err(field_error("pair.components", "at least one component is required"));
        }
        if self.test_martingales.is_empty() {
            return Err(field_error("test_martingales", "at least one test martingale is required"));
        }
        let mut names: Vec<&str> = self.test_martingales.iter().map(|t| t.name()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return Err(field_error("test_martingales", "names must be unique"));
        }
        if self.mc.paths == 0 {
            return Err(field_error("mc.paths", "must be positive"));
        }
        if self.mc.batch == 0 {
            return Err(field_error("mc.batch", "must be positive"));
        }
        if self.tree.depth == 0 || self.tree.depth > 8 {
            return Err(field_error("tree.depth", "must lie between 1 and 8"));
        }
        if self.tree.depth > self.grid.steps {
            return Err(field_error("tree.depth", "cannot exceed grid.steps"));
        }
        if self.tree.z_source == ZSourceKind::Backward && self.tree.delta_profile.len() != self.tree.depth {
            return Err(field_error("tree.delta_profile", "needs one entry per tree level"));
        }
        if self.tree.delta_profile.iter().any(|d| !(*d >= 0.0)) {
            return Err(field_error("tree.delta_profile", "entries must be nonnegative"));
        }
        let t = &self.tolerances;
        for (name, v) in [
            ("tolerances.exact", t.exact),
            ("tolerances.enlargement", t.enlargement),
            ("tolerances.identity", t.identity),
            ("tolerances.sigma_multiplier", t.sigma_multiplier),
            ("tolerances.stability", t.stability),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(field_error(name, "must be positive"));
            }
        }
        if !(t.atom_tol >= 0.0) {
            return Err(field_error("tolerances.atom_tol", "must be nonnegative"));
        }
        let r = &self.regularity;
        if r.levels < 2 {
            return Err(field_error("regularity.levels", "need at least two refinement levels"));
        }
        if r.fd_steps.len() < 2 || r.fd_steps.iter().any(|h| !(*h > 0.0)) {
            return Err(field_error("regularity.fd_steps", "need at least two positive steps"));
        }
        if r.strides.len() < 2 || r.strides.iter().any(|s| *s == 0 || !r.fine_steps.is_multiple_of(*s)) {
            return Err(field_error("regularity.strides", "need at least two strides dividing fine_steps"));
        }
        if r.strides.windows(2).any(|w| w[1] >= w[0]) {
            return Err(field_error("regularity.strides", "must be strictly decreasing"));
        }
        let p = &self.polarization;
        if p.horizons.is_empty() || p.horizons.iter().any(|h| !(*h > 0.0)) {
            return Err(field_error("polarization.horizons", "need positive horizons"));
        }
        if p.horizons.windows(2).any(|w| w[1] <= w[0]) {
            return Err(field_error("polarization.horizons", "must be strictly increasing"));
        }
        if !(p.dt > 0.0) || !(p.u_spacing >= p.dt) {
            return Err(field_error("polarization.dt", "need 0 < dt <= u_spacing"));
        }
        let stride = p.u_spacing / p.dt;
        if (stride - stride.round()).abs() > 1e-9 {
            return Err(field_error("polarization.u_spacing", "must be a multiple of dt"));
        }
        if p.horizons.iter().any(|h| *h < p.u_max) || !(p.u_max >= 0.0) {
            return Err(field_error("polarization.u_max", "must lie in [0, smallest horizon]"));
        }
        if !(p.band > 0.0 && p.band < 0.5) {
            return Err(field_error("polarization.band", "must lie in (0, 1/2)"));
        }
        if self.outputs.formats.is_empty() {
            return Err(field_error("outputs.formats", "need at least one format"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips() {
        let cfg = RunConfig::default();
        cfg.validate().unwrap();
        let text = serde_json::to_string_pretty(&cfg).unwrap();
        let back = RunConfig::from_json(&text).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash(), cfg.hash());
        assert_eq!(cfg.hash().len(), 64);
        let mut moved = cfg.clone();
        moved.outputs.directory = "elsewhere".into();
        assert_eq!(moved.hash(), cfg.hash());
        let mut reseeded = cfg.clone();
        reseeded.mc.seed += 1;
        assert_ne!(reseeded.hash(), cfg.hash());
    }

    #[test]
    fn partial_documents_take_defaults() {
        let cfg = RunConfig::from_json(r#"{"schema": "natural-lab/v1", "mc": {"paths": 50}}"#).unwrap();
        assert_eq!(cfg.mc.paths, 50);
        assert_eq!(cfg.mc.batch, 1024);
        assert_eq!(cfg.tree.depth, 6);
    }

    #[test]
    fn field_level_errors() {
        let err = RunConfig::from_json(r#"{"z": {"z0": 0.7, "lambda": 0.3, "jump_time": 0.5, "jump_size": 0.2, "sigma_n": 0.6, "jump_scale": 0.3, "epsilon": 0.5}}"#)
            .unwrap_err();
        assert!(matches!(err, LabError::Config { ref field, .. } if field == "z.epsilon"), "{err}");
        let err = RunConfig::from_json(r#"{"schema": "other"}"#).unwrap_err();
        assert!(matches!(err, LabError::Config { ref field, .. } if field == "schema"));
        let err = RunConfig::from_json(r#"{"mc": {"pathz": 3}}"#).unwrap_err();
        assert!(err.to_string().contains("pathz"));
    }
}
