//! The six controllers of the benchmark comparison and their sudden-change
//! variants.

use std::fmt;
use std::str::FromStr;

use crate::controller::{AdaptationScheme, LearningRate, SignMode};
use crate::error::Error;
use crate::network::{Activation, ConvLayerSpec, NetworkSpec};

use super::scenario::{ControllerConfig, PlantConfig, Scenario, SimConfig, StepOrdering};
use super::scaled_identity;

/// Learning rate shared by every preset.
pub const LEARNING_RATE: f64 = 3e7;
/// Projection radius shared by every preset.
pub const THETA_BAR: f64 = 3000.0;
/// Disturbance onset of the sudden-change study.
pub const SUDDEN_CHANGE_ONSET: f64 = 3.0;
/// Pilot-run estimate of `max ‖Φ̂'‖` used by the gain certificate.
pub const PHI_PRIME_BOUND: f64 = 2e6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Preset {
    Cnn1,
    Cnn2,
    Cnn3,
    Cnn4,
    Cnn5,
    Dnn,
}

impl Preset {
    pub const ALL: [Preset; 6] = [
        Preset::Cnn1,
        Preset::Cnn2,
        Preset::Cnn3,
        Preset::Cnn4,
        Preset::Cnn5,
        Preset::Dnn,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Preset::Cnn1 => "cnn1",
            Preset::Cnn2 => "cnn2",
            Preset::Cnn3 => "cnn3",
            Preset::Cnn4 => "cnn4",
            Preset::Cnn5 => "cnn5",
            Preset::Dnn => "dnn",
        }
    }

    /// Published `(ε₁, ε₂)` for this controller.
    pub fn reference_rmse(self) -> (f64, f64) {
        match self {
            Preset::Cnn1 => (0.0397, 0.3752),
            Preset::Cnn2 => (0.0384, 0.3680),
            Preset::Cnn3 => (0.2160, 2.4030),
            Preset::Cnn4 => (0.0716, 0.7524),
            Preset::Cnn5 => (0.1291, 1.5446),
            Preset::Dnn => (0.0490, 0.4757),
        }
    }

    pub fn scenario(self) -> Scenario {
        let mut s = base(self.name());
        match self {
            Preset::Cnn1 => {}
            Preset::Cnn2 => s.stacking_time = 0.01,
            Preset::Cnn3 => {
                s.controller.designer_matrix = scaled_identity(2, -1.0);
                s.controller.damping = 0.0;
            }
            Preset::Cnn4 => s.controller.damping = 5e5,
            Preset::Cnn5 => s.controller.designer_matrix = scaled_identity(2, -50.0),
            Preset::Dnn => s.network = dnn_network(),
        }
        s
    }

    /// Same controller with the disturbance switched on at
    /// [`SUDDEN_CHANGE_ONSET`].
    pub fn sudden_change(self) -> Scenario {
        let mut s = self.scenario();
        s.name = format!("sudden_change_{}", self.name());
        s.plant.disturbance_onset = Some(SUDDEN_CHANGE_ONSET);
        s
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        Preset::ALL
            .into_iter()
            .find(|p| p.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::UnknownPreset(s.to_string()))
    }
}

/// Ten stacked samples of `[e; x; u]`, conv `(5×6)×2` then `(3×2)×2`, fully
/// connected widths 8, 8, 2.
pub fn cnn1_network() -> NetworkSpec {
    NetworkSpec {
        input_rows: 10,
        input_cols: 6,
        conv_layers: vec![ConvLayerSpec::new(5, 6, 2), ConvLayerSpec::new(3, 2, 2)],
        fc_widths: vec![8, 8, 2],
        alpha1: 100.0,
        alpha2: 0.01,
        activation: Activation::Tanh,
    }
}

/// Fully connected widths 8, 8, 8, 4, 2 on the latest sample only.
pub fn dnn_network() -> NetworkSpec {
    NetworkSpec {
        input_rows: 1,
        conv_layers: vec![],
        fc_widths: vec![8, 8, 8, 4, 2],
        ..cnn1_network()
    }
}

/// 3×2 input, one 2×2 filter, one fully connected layer with two outputs.
pub fn minimal_network() -> NetworkSpec {
    NetworkSpec {
        input_rows: 3,
        input_cols: 2,
        conv_layers: vec![ConvLayerSpec::new(2, 2, 1)],
        fc_widths: vec![2],
        alpha1: 1.0,
        alpha2: 1.0,
        activation: Activation::Tanh,
    }
}

fn base(name: &str) -> Scenario {
    Scenario {
        name: name.to_string(),
        plant: PlantConfig {
            initial_state: vec![1.0, 2.0],
            disturbance_onset: None,
        },
        controller: ControllerConfig {
            switching_gain: 1.0,
            designer_matrix: scaled_identity(2, -10.0),
            learning_rate: LearningRate::uniform(LEARNING_RATE),
            damping: 1e5,
            theta_bar: THETA_BAR,
            sign_mode: SignMode::Exact,
            scheme: AdaptationScheme::Exponential,
            delta_bar: 0.0,
            phi_prime_bound: PHI_PRIME_BOUND,
        },
        network: cnn1_network(),
        stacking_time: 0.1,
        sim: SimConfig {
            dt: 2.5e-4,
            t_end: 10.0,
            seed: 0,
            init_weight_range: [-0.1, 0.1],
            ordering: StepOrdering::AdaptThenAct,
        },
    }
}
