//! TOML run configuration. Every section and key is optional; omitted values
//! take the defaults below and unknown keys are rejected.

use std::path::Path;

use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};

use crate::controller::Controller;
use crate::error::{Error, Result};
use crate::integrate::IntegratorOptions;
use crate::observability::ObservabilityConfig;
use crate::optimizer::OptimizerOptions;
use crate::quadrotor::{ParamVector, PhysicalConstants};
use crate::sensitivity::{MatrixNorm, RowSelection};
use crate::trajectory::InteriorMode;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub kf: f64,
    pub km: f64,
    pub mass: f64,
    /// Diagonal of the inertia matrix, kg·m².
    pub inertia: [f64; 3],
    pub arm_length: f64,
    pub gravity: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            kf: 3.375e-4,
            km: 0.016,
            mass: 0.68,
            inertia: [7e-3, 7e-3, 12e-3],
            arm_length: 0.17,
            gravity: 9.81,
        }
    }
}

impl ModelConfig {
    pub fn params(&self) -> Result<ParamVector> {
        ParamVector::new(self.kf, self.km)
    }

    pub fn constants(&self) -> Result<PhysicalConstants> {
        PhysicalConstants::new(
            self.mass,
            Matrix3::from_diagonal(&self.inertia.into()),
            self.arm_length,
            self.gravity,
        )
    }
}

/// Start and target poses `[x, y, z, yaw]`, duration, and the search box.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MissionConfig {
    pub start: [f64; 4],
    pub target: [f64; 4],
    pub duration: f64,
    pub pieces: usize,
    pub n_jc: usize,
    pub interior_mode: InteriorMode,
    /// Workspace box for interior way-point positions `[x, y, z, yaw]`.
    pub workspace_lower: [f64; 4],
    pub workspace_upper: [f64; 4],
    /// Bounds on free interior derivatives, one per order above zero.
    pub derivative_bounds: Vec<f64>,
}

impl Default for MissionConfig {
    fn default() -> Self {
        Self {
            start: [0.0; 4],
            target: [3.5, 3.5, 0.25, 0.0],
            duration: 20.0,
            pieces: 3,
            n_jc: 3,
            interior_mode: InteriorMode::ZeroHigher,
            workspace_lower: [-10.0, -10.0, -5.0, -std::f64::consts::PI],
            workspace_upper: [10.0, 10.0, 10.0, std::f64::consts::PI],
            derivative_bounds: vec![3.0, 3.0, 3.0],
        }
    }
}

impl MissionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.duration > 0.0) {
            return Err(Error::Config("mission.duration must be positive".into()));
        }
        if self.pieces == 0 || self.n_jc == 0 {
            return Err(Error::Config(
                "mission.pieces and mission.n_jc must be at least 1".into(),
            ));
        }
        if self.interior_mode == InteriorMode::Free && self.derivative_bounds.len() + 1 < self.n_jc {
            return Err(Error::Config(
                "mission.derivative_bounds needs one entry per derivative order".into(),
            ));
        }
        for i in 0..4 {
            if !(self.workspace_lower[i] < self.workspace_upper[i]) {
                return Err(Error::Config("mission workspace bounds are inverted".into()));
            }
            for p in [self.start[i], self.target[i]] {
                if p < self.workspace_lower[i] || p > self.workspace_upper[i] {
                    return Err(Error::Config("mission start/target outside the workspace".into()));
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SensitivityConfig {
    pub norm: MatrixNorm,
    pub rows: RowSelection,
}

/// How the `ρ Σ_j |F_j − F_O,j|` augmentation term is measured.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Augmentation {
    /// In the objectives' own units.
    Raw,
    /// Divided by each objective's range `|F_N − F_O|`.
    #[default]
    RangeNormalized,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScalarizationConfig {
    pub rho: f64,
    pub sis_weights: [f64; 3],
    pub cop_weights: [f64; 3],
    pub augmentation: Augmentation,
}

impl Default for ScalarizationConfig {
    fn default() -> Self {
        Self {
            rho: 1e-4,
            sis_weights: [0.5, 0.5, 0.0],
            cop_weights: [1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0],
            augmentation: Augmentation::RangeNormalized,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreconditionConfig {
    /// Evaluation budget of the rotor-feasibility phase.
    pub feasibility_evals: usize,
    /// Safety margin kept inside the rotor bounds, as a fraction of `u_max`.
    pub rotor_margin: f64,
    /// Newton iterations for the terminal offset.
    pub offset_iterations: usize,
    pub terminal_tol: f64,
    /// Interior way-point scatter as a fraction of the start–target distance.
    pub spread: f64,
    /// Independent random restarts before giving up.
    pub attempts: usize,
}

impl Default for PreconditionConfig {
    fn default() -> Self {
        Self {
            feasibility_evals: 120,
            rotor_margin: 0.02,
            offset_iterations: 12,
            terminal_tol: 1e-2,
            spread: 0.15,
            attempts: 5,
        }
    }
}

/// Perturbation law for the Monte Carlo parameters.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Perturbation {
    /// Uniform in `±amplitude` relative to nominal.
    #[default]
    Uniform,
    /// Normal with standard deviation `amplitude / 2`, clipped to `±amplitude`.
    NormalClipped,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CampaignConfig {
    pub amplitudes: Vec<f64>,
    pub flights: usize,
    pub targets: usize,
    pub perturbation: Perturbation,
    /// Target sampling box `[x, y, z]`.
    pub target_lower: [f64; 3],
    pub target_upper: [f64; 3],
    /// Worker threads; zero uses the rayon default.
    pub workers: usize,
    /// Relative slack in the median ordering verdicts.
    pub ordering_slack: f64,
}

impl Default for CampaignConfig {
    fn default() -> Self {
        Self {
            amplitudes: vec![0.01, 0.05],
            flights: 30,
            targets: 20,
            perturbation: Perturbation::Uniform,
            target_lower: [2.0, 2.0, -0.5],
            target_upper: [5.0, 5.0, 1.0],
            workers: 0,
            ordering_slack: 0.01,
        }
    }
}

impl CampaignConfig {
    pub fn validate(&self) -> Result<()> {
        if self.amplitudes.iter().any(|a| !(*a >= 0.0 && *a < 1.0)) {
            return Err(Error::Config("campaign amplitudes must lie in [0, 1)".into()));
        }
        if self.flights == 0 || self.targets == 0 {
            return Err(Error::Config(
                "campaign.flights and campaign.targets must be at least 1".into(),
            ));
        }
        if (0..3).any(|i| self.target_lower[i] > self.target_upper[i]) {
            return Err(Error::Config("campaign target box is inverted".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExportConfig {
    pub rate: f64,
    /// Per-channel noise standard deviations in measurement order; empty means noiseless.
    pub noise: Vec<f64>,
}

impl Default for ExportConfig {
    fn default() -> Self {
        Self {
            rate: 100.0,
            noise: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub seed: u64,
    pub model: ModelConfig,
    pub controller: Controller,
    pub mission: MissionConfig,
    pub integrator: IntegratorOptions,
    pub sensitivity: SensitivityConfig,
    pub observability: ObservabilityConfig,
    pub optimizer: OptimizerOptions,
    pub scalarization: ScalarizationConfig,
    pub precondition: PreconditionConfig,
    pub campaign: CampaignConfig,
    pub export: ExportConfig,
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Config = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// Full configuration with every default filled in.
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.model.params()?;
        self.model.constants()?;
        self.controller.validate()?;
        self.mission.validate()?;
        self.integrator.validate()?;
        self.sensitivity.rows.mask()?;
        self.observability.validate()?;
        self.optimizer.validate()?;
        self.campaign.validate()?;
        let s = &self.scalarization;
        for w in [s.sis_weights, s.cop_weights] {
            if w.iter().any(|v| *v < 0.0) || (w.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                return Err(Error::Config(
                    "scalarization weights must be non-negative and sum to one".into(),
                ));
            }
        }
        if !(s.rho >= 0.0) {
            return Err(Error::Config("scalarization.rho must be non-negative".into()));
        }
        if !(self.export.rate > 0.0) {
            return Err(Error::Config("export.rate must be positive".into()));
        }
        Ok(())
    }

    /// Reduced setting for quick runs: 10 s flights, 3 pieces, 150
    /// evaluations per stage, 4 ms integration steps, 20 Gramian segments,
    /// and 3 targets of 10 flights.
    pub fn desk() -> Self {
        let mut cfg = Config::default();
        cfg.mission.duration = 10.0;
        cfg.mission.pieces = 3;
        cfg.optimizer.max_evals = 150;
        cfg.integrator.step = 4e-3;
        cfg.observability.segments = 20;
        cfg.campaign.targets = 3;
        cfg.campaign.flights = 10;
        cfg.campaign.amplitudes = vec![0.01];
        cfg
    }
}
