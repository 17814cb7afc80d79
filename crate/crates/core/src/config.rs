//! Run configuration read from TOML.
//!
//! ```toml
//! schema_version = 1
//! kind = "train"            # train | decay | eval | render
//! out_dir = "runs/full"
//! scene_file = "scene.toml" # optional; relative to this file. Or an inline [scene] table.
//!
//! [rig]
//! views = 9
//! radius = 4.5
//! arc_degrees = 60.0
//! focal = 80.0
//! size = 96
//!
//! [shared_star]
//! target = 1
//! color_delta = [0.3, -0.2, 0.15]
//!
//! [trainer]
//! verifier_mode = "full"
//! iterations = 150
//! ```
//!
//! Every table is optional and unknown keys are rejected.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::edit::SharedEdit;
use crate::error::Error;
use crate::geometry::Intrinsics;
use crate::grpo::{Environment, TrainerConfig, VerifierSettings};
use crate::policy::DecodeScales;
use crate::rig::{build_rig, CameraRig};
use crate::scene::Scene;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Train,
    Decay,
    Eval,
    Render,
}

impl ExperimentKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ExperimentKind::Train => "train",
            ExperimentKind::Decay => "decay",
            ExperimentKind::Eval => "eval",
            ExperimentKind::Render => "render",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RigConfig {
    pub views: usize,
    pub radius: f64,
    pub arc_degrees: f64,
    pub target: [f64; 3],
    pub focal: f64,
    /// Square image side in pixels.
    pub size: usize,
}

impl Default for RigConfig {
    fn default() -> Self {
        RigConfig {
            views: 9,
            radius: 4.5,
            arc_degrees: 60.0,
            target: [0.0; 3],
            focal: 80.0,
            size: 96,
        }
    }
}

impl RigConfig {
    pub fn build(&self) -> Result<CameraRig, Error> {
        if self.size < 8 {
            return Err(Error::Config(format!("rig.size must be at least 8, got {}", self.size)));
        }
        let k = Intrinsics::centered(self.focal, self.size);
        Ok(build_rig(self.views, self.radius, self.arc_degrees, Vector3::from(self.target), k)?)
    }
}

/// Consistency-decay sweep settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DecayConfig {
    /// Number of random scenes, seeded `seed, seed+1, …`.
    pub scenes: usize,
    /// Largest |component| of the object translation jitter of a replacement.
    pub translation_jitter: f64,
    pub color_jitter: f64,
    pub camera_translation_jitter: f64,
    /// Radians.
    pub camera_rotation_jitter: f64,
}

impl Default for DecayConfig {
    fn default() -> Self {
        DecayConfig {
            scenes: 20,
            translation_jitter: 0.3,
            color_jitter: 0.2,
            camera_translation_jitter: 0.2,
            camera_rotation_jitter: 0.02,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RenderSource {
    /// The consistent reference edit `shared_star`.
    Reference,
    /// The unedited scene.
    Identity,
    /// Mean action of the checkpoint in the output directory.
    Checkpoint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RenderConfig {
    pub source: RenderSource,
}

impl Default for RenderConfig {
    fn default() -> Self {
        RenderConfig {
            source: RenderSource::Reference,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    #[serde(default = "default_kind")]
    pub kind: ExperimentKind,
    #[serde(default = "default_out")]
    pub out_dir: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scene_file: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scene: Option<Scene>,
    #[serde(default)]
    pub rig: RigConfig,
    #[serde(default = "default_star")]
    pub shared_star: SharedEdit,
    #[serde(default)]
    pub decode: DecodeScales,
    #[serde(default)]
    pub verifiers: VerifierSettings,
    #[serde(default)]
    pub trainer: TrainerConfig,
    #[serde(default)]
    pub decay: DecayConfig,
    #[serde(default)]
    pub render: RenderConfig,
}

fn default_kind() -> ExperimentKind {
    ExperimentKind::Train
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

/// Reference edit of the default scene: recolor, lift and grow the center sphere.
pub fn default_star() -> SharedEdit {
    SharedEdit {
        target: 1,
        color_delta: [0.3, -0.2, 0.15],
        translation_delta: [0.0, 0.3, 0.0],
        radius_scale: 1.25,
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            schema_version: SCHEMA_VERSION,
            kind: default_kind(),
            out_dir: default_out(),
            scene_file: None,
            scene: None,
            rig: RigConfig::default(),
            shared_star: default_star(),
            decode: DecodeScales::default(),
            verifiers: VerifierSettings::default(),
            trainer: TrainerConfig::default(),
            decay: DecayConfig::default(),
            render: RenderConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, Error> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        if cfg.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                cfg.schema_version
            )));
        }
        Ok(cfg)
    }

    /// Reads a config file and inlines the scene file it references, so
    /// the result no longer depends on the file's location. Relative paths
    /// are taken relative to the config file.
    pub fn load(path: &Path) -> Result<Self, Error> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        if cfg.out_dir.is_relative() {
            cfg.out_dir = base.join(&cfg.out_dir);
        }
        if let Some(rel) = cfg.scene_file.take() {
            if cfg.scene.is_some() {
                return Err(Error::Config("give either scene_file or an inline [scene], not both".into()));
            }
            let p = base.join(rel);
            let text = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
            let scene: Scene = toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
            cfg.scene = Some(scene);
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), Error> {
        if let Some(s) = &self.scene {
            s.validate().map_err(Error::Config)?;
        }
        self.trainer.validate()?;
        if self.decay.scenes == 0 {
            return Err(Error::Config("decay.scenes must be positive".into()));
        }
        self.rig.build()?;
        Ok(())
    }

    pub fn scene(&self) -> Scene {
        self.scene.clone().unwrap_or_else(Scene::default_scene)
    }

    pub fn environment(&self) -> Result<Environment, Error> {
        let rig = self.rig.build()?;
        Ok(Environment::new(self.scene(), rig, self.shared_star, self.decode, self.verifiers)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always serializable")
    }

    /// The config with the output directory replaced by `.`: what a run
    /// directory stores about itself, and what its hash covers.
    pub fn canonical(&self) -> RunConfig {
        RunConfig {
            out_dir: PathBuf::from("."),
            ..self.clone()
        }
    }

    /// SHA-256 of the canonical serialization, hex encoded.
    pub fn hash(&self) -> String {
        Sha256::digest(self.canonical().to_toml().as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}
