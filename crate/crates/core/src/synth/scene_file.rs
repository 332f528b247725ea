//! JSON scene descriptions.

use nalgebra::{Isometry3, Quaternion, Translation3, UnitQuaternion};
use serde::{Deserialize, Serialize};

use super::{
    LidarModel, NoiseModel, Obstacle, Scene, SynthError, TagTarget, BACKGROUND_INTENSITY,
};
use crate::codebook::TagFamily;

/// Sensor layout: a named preset or a uniform beam fan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LidarSpec {
    Preset {
        preset: String,
    },
    Uniform {
        num_beams: usize,
        elevation_min_deg: f64,
        elevation_max_deg: f64,
        azimuth_step_deg: f64,
        #[serde(default)]
        azimuth_window_deg: Option<[f64; 2]>,
        max_range: f64,
    },
}

impl LidarSpec {
    pub fn model(&self) -> Result<LidarModel, SynthError> {
        let model = match self {
            Self::Preset { preset } => match preset.as_str() {
                "puck32" => LidarModel::puck32(),
                "dense" => LidarModel::dense(),
                other => {
                    return Err(SynthError::InvalidModel(format!(
                        "unknown preset {other:?} (expected puck32 or dense)"
                    )))
                }
            },
            Self::Uniform {
                num_beams,
                elevation_min_deg,
                elevation_max_deg,
                azimuth_step_deg,
                azimuth_window_deg,
                max_range,
            } => {
                let m = LidarModel::uniform(
                    *num_beams,
                    *elevation_min_deg,
                    *elevation_max_deg,
                    *azimuth_step_deg,
                    *max_range,
                );
                match azimuth_window_deg {
                    Some([lo, hi]) => m.with_azimuth_window(*lo, *hi),
                    None => m,
                }
            }
        };
        model.validate()?;
        Ok(model)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObstacleSpec {
    pub min: [f64; 3],
    pub max: [f64; 3],
    #[serde(default = "default_obstacle_intensity")]
    pub intensity: f64,
}

fn default_obstacle_intensity() -> f64 {
    0.5
}

/// One tag in front of a background, optionally with box clutter and noise.
///
/// `family` is resolved by the caller (builtin name or file path).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneDescription {
    pub lidar: LidarSpec,
    pub family: String,
    pub tag_id: u32,
    /// Marker side, meters.
    pub tag_size: f64,
    /// Marker center in the sensor frame.
    pub translation: [f64; 3],
    /// Tag-to-sensor rotation `[w, x, y, z]`.
    pub quaternion: [f64; 4],
    #[serde(default)]
    pub backing_extent: Option<f64>,
    pub background_range: f64,
    #[serde(default)]
    pub background_intensity: Option<f64>,
    #[serde(default)]
    pub obstacles: Vec<ObstacleSpec>,
    #[serde(default)]
    pub noise: NoiseModel,
    /// Overrides `noise.seed` when present.
    #[serde(default)]
    pub seed: Option<u64>,
}

impl SceneDescription {
    pub fn noise(&self) -> NoiseModel {
        NoiseModel {
            seed: self.seed.unwrap_or(self.noise.seed),
            ..self.noise
        }
    }

    pub fn build(&self, family: &TagFamily) -> Result<Scene, SynthError> {
        let [w, x, y, z] = self.quaternion;
        let q = Quaternion::new(w, x, y, z);
        if !(q.norm() > 1e-9) || self.quaternion.iter().any(|c| !c.is_finite()) {
            return Err(SynthError::InvalidTarget("quaternion must be nonzero".into()));
        }
        let pose = Isometry3::from_parts(
            Translation3::new(self.translation[0], self.translation[1], self.translation[2]),
            UnitQuaternion::from_quaternion(q),
        );
        let mut target = TagTarget::new(family, self.tag_id, self.tag_size, pose)?;
        if let Some(b) = self.backing_extent {
            if !(b >= 0.0) {
                return Err(SynthError::InvalidTarget("backing extent must be >= 0".into()));
            }
            target.backing_extent = b;
        }
        self.noise().validate()?;
        Ok(Scene {
            model: self.lidar.model()?,
            targets: vec![target],
            obstacles: self
                .obstacles
                .iter()
                .map(|o| Obstacle {
                    min: o.min,
                    max: o.max,
                    intensity: o.intensity,
                })
                .collect(),
            background_range: self.background_range,
            background_intensity: self.background_intensity.unwrap_or(BACKGROUND_INTENSITY),
        })
    }
}
