use serde::{Deserialize, Serialize};

use crate::controller::{AdaptationScheme, ControllerParams, LearningRate, SignMode};
use crate::error::{Error, Result};
use crate::mat::Mat;
use crate::network::{stride, NetworkSpec};

use super::plant::{velocity_mismatch, SineCosine};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlantConfig {
    pub initial_state: Vec<f64>,
    /// Time at which the disturbance `g` switches on; `None` keeps it off.
    pub disturbance_onset: Option<f64>,
}

/// Plain-data controller settings, validated into [`ControllerParams`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControllerConfig {
    /// `k_s`.
    pub switching_gain: f64,
    /// `A_c`, row by row.
    pub designer_matrix: Vec<Vec<f64>>,
    /// Diagonal `Γ`.
    pub learning_rate: LearningRate,
    /// `ρ`.
    pub damping: f64,
    /// `θ̄`.
    pub theta_bar: f64,
    pub sign_mode: SignMode,
    pub scheme: AdaptationScheme,
    /// `Δ̄` used for the gain certificate only.
    pub delta_bar: f64,
    /// `Φ'_M` used for the gain certificate only, measured in pilot runs.
    pub phi_prime_bound: f64,
}

impl ControllerConfig {
    pub fn designer(&self) -> Result<Mat<f64>> {
        let rows: Vec<&[f64]> = self.designer_matrix.iter().map(Vec::as_slice).collect();
        Mat::from_rows(&rows).map_err(|e| Error::Config(format!("designer_matrix: {e}")))
    }

    pub fn params(&self) -> Result<ControllerParams<f64>> {
        Ok(ControllerParams::new(
            self.switching_gain,
            self.designer()?,
            self.learning_rate,
            self.damping,
            self.theta_bar,
        )?
        .with_sign_mode(self.sign_mode)?
        .with_scheme(self.scheme))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub dt: f64,
    pub t_end: f64,
    pub seed: u64,
    /// Every weight starts uniform in `[lo, hi)`.
    pub init_weight_range: [f64; 2],
    #[serde(default)]
    pub ordering: StepOrdering,
}

/// Whether the control applied over a step uses the weights before or
/// after that step's adaptation update. Both only use information available
/// at the start of the step.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepOrdering {
    /// Update the weights from `e(t)`, then evaluate `Φ̂` with the new
    /// weights. Costs one extra forward pass per step.
    #[default]
    AdaptThenAct,
    /// Evaluate `Φ̂` with the current weights, then update them.
    ActThenAdapt,
}

/// Everything needed to reproduce one closed-loop run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub plant: PlantConfig,
    pub controller: ControllerConfig,
    pub network: NetworkSpec,
    /// `T_s`, spacing of the stacked rows of the input matrix.
    pub stacking_time: f64,
    pub sim: SimConfig,
}

/// A validation failure pointing at the offending field.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldError {
    pub section: &'static str,
    pub key: &'static str,
    pub message: String,
}

impl Scenario {
    /// Checks every cross-field constraint, returning the first failure with
    /// the field it concerns.
    pub fn check(&self) -> std::result::Result<(), FieldError> {
        let err = |section, key, message: String| FieldError {
            section,
            key,
            message,
        };
        let n = self.plant.initial_state.len();
        if n != 2 {
            return Err(err("plant", "initial_state", format!("the plant has 2 states, got {n}")));
        }
        if self.plant.initial_state.iter().any(|v| !v.is_finite()) {
            return Err(err("plant", "initial_state", "non-finite initial state".into()));
        }
        if let Some(tg) = self.plant.disturbance_onset {
            if !(tg >= 0.0) {
                return Err(err("plant", "disturbance_onset", format!("must be non-negative, got {tg}")));
            }
        }
        if !(self.sim.dt > 0.0 && self.sim.dt.is_finite()) {
            return Err(err("sim", "dt", format!("must be positive, got {}", self.sim.dt)));
        }
        if !(self.sim.t_end > 0.0 && self.sim.t_end.is_finite()) {
            return Err(err("sim", "t_end", format!("must be positive, got {}", self.sim.t_end)));
        }
        let [lo, hi] = self.sim.init_weight_range;
        if !(lo < hi) {
            return Err(err("sim", "init_weight_range", format!("empty interval [{lo}, {hi})")));
        }
        if let Err(e) = stride(self.sim.dt, self.stacking_time) {
            return Err(err("network", "stacking_time", e.to_string()));
        }
        if let Err(e) = self.network.dims() {
            let key = match &e {
                Error::Network { stage: "conv", .. } => "conv_layers",
                Error::Network { stage: "fc", .. } => "fc_widths",
                _ => "input_rows",
            };
            return Err(err("network", key, e.to_string()));
        }
        if self.network.input_cols != 3 * n {
            return Err(err(
                "network",
                "input_cols",
                format!("samples [e; x; u] have length {}, got {}", 3 * n, self.network.input_cols),
            ));
        }
        if self.network.output_len() != n {
            return Err(err(
                "network",
                "fc_widths",
                format!("last width must equal the state dimension {n}, got {}", self.network.output_len()),
            ));
        }
        let designer = self.controller.designer().map_err(|e| err("controller", "designer_matrix", e.to_string()))?;
        if designer.shape() != (n, n) {
            return Err(err(
                "controller",
                "designer_matrix",
                format!("must be {n}x{n}, got {:?}", designer.shape()),
            ));
        }
        if let Err(e) = self.controller.params() {
            let key = match &e {
                Error::Config(m) if m.contains("Hurwitz") || m.contains("singular") => "designer_matrix",
                Error::Config(m) if m.contains("switching") => "switching_gain",
                Error::Config(m) if m.contains("learning") => "learning_rate",
                Error::Config(m) if m.contains("damping") => "damping",
                Error::Config(m) if m.contains("projection") => "theta_bar",
                Error::Config(m) if m.contains("sign") => "sign_mode",
                _ => "designer_matrix",
            };
            return Err(err("controller", key, e.to_string()));
        }
        if !(self.controller.delta_bar >= 0.0) {
            return Err(err("controller", "delta_bar", "must be non-negative".into()));
        }
        if !(self.controller.phi_prime_bound >= 0.0) {
            return Err(err("controller", "phi_prime_bound", "must be non-negative".into()));
        }
        if velocity_mismatch(&SineCosine, self.sim.t_end) > 1e-6 {
            return Err(err("sim", "t_end", "trajectory derivative check failed".into()));
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.check()
            .map_err(|e| Error::Config(format!("[{}] {}: {}", e.section, e.key, e.message)))
    }

    pub fn step_count(&self) -> usize {
        (self.sim.t_end / self.sim.dt).round() as usize
    }
}
