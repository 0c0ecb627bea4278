//! Closed-loop simulation of the two-state benchmark plant under the
//! adaptive CNN controller.
//!
//! Each step of length `dt` holds `u` and `Φ̂'` fixed: the controller reads
//! `e = x - x_d`, builds the input matrix from the sample history, computes
//! `u`, advances the weights by one adaptation step and then the plant by
//! one RK4 step.

mod integrate;
mod plant;
pub mod presets;
mod report;
mod scenario;

pub use integrate::rk4_step;
pub use plant::{plant_f, plant_g, sech, velocity_mismatch, Plant, SineCosine, Trajectory};
pub use report::{summary_text, write_trajectory_csv};
pub use scenario::{ControllerConfig, FieldError, PlantConfig, Scenario, SimConfig, StepOrdering};

use crate::controller::{gain_certificate, spectral_norm, Controller, GainCertificate};
use crate::error::{Error, Result};
use crate::jacobian::assemble_full_jacobian;
use crate::mat::Mat;
use crate::network::{stacked_sample, HistoryBuffer, Network};
use crate::rng::Rng;
use crate::scalar::norm;

/// States beyond this magnitude count as divergence.
pub const DIVERGENCE_BOUND: f64 = 1e6;

/// Source of the feedforward term `Φ̂` in the control law.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Feedforward {
    /// The adaptive network.
    #[default]
    Network,
    /// The true lumped term `Λ = f + g - ẋ_d - A_c e`; weights are frozen.
    Oracle,
}

/// One recorded step, taken at the start of the step.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub t: f64,
    pub x: Vec<f64>,
    pub xd: Vec<f64>,
    pub e: Vec<f64>,
    pub u: Vec<f64>,
    pub theta_norm: f64,
    pub phi_hat: Vec<f64>,
}

/// Stepwise closed-loop simulator.
pub struct Simulator {
    scenario: Scenario,
    plant: Plant,
    trajectory: SineCosine,
    net: Network,
    controller: Controller<f64>,
    history: HistoryBuffer<f64>,
    feedforward: Feedforward,
    ordering: StepOrdering,
    theta: Vec<f64>,
    x: Vec<f64>,
    u_prev: Vec<f64>,
    step: usize,
    jacobian_norm_max: f64,
}

impl Simulator {
    /// Validates the scenario and draws the initial weights from its seed.
    pub fn new(scenario: Scenario, feedforward: Feedforward) -> Result<Self> {
        scenario.validate()?;
        let net = Network::new(scenario.network.clone())?;
        let params = scenario.controller.params()?;
        let controller = Controller::new(params, net.layout());
        let history = HistoryBuffer::for_spec(&scenario.network, scenario.sim.dt, scenario.stacking_time)?;
        let [lo, hi] = scenario.sim.init_weight_range;
        let theta = Rng::seeded(scenario.sim.seed).uniform_vec(net.weight_count(), lo, hi);
        let n = scenario.plant.initial_state.len();
        let ordering = scenario.sim.ordering;
        Ok(Self {
            plant: Plant {
                disturbance_onset: scenario.plant.disturbance_onset,
            },
            trajectory: SineCosine,
            x: scenario.plant.initial_state.clone(),
            u_prev: vec![0.0; n],
            scenario,
            net,
            controller,
            history,
            feedforward,
            ordering,
            theta,
            step: 0,
            jacobian_norm_max: 0.0,
        })
    }

    pub fn time(&self) -> f64 {
        self.step as f64 * self.scenario.sim.dt
    }

    pub fn state(&self) -> &[f64] {
        &self.x
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn network(&self) -> &Network {
        &self.net
    }

    /// Largest spectral norm of `Φ̂'` seen so far.
    pub fn jacobian_norm_max(&self) -> f64 {
        self.jacobian_norm_max
    }

    /// Advances one step of length `dt` and returns the sample taken at its
    /// start.
    pub fn step(&mut self) -> Result<Sample> {
        let dt = self.scenario.sim.dt;
        let t = self.time();
        let xd = self.trajectory.position(t);
        let e: Vec<f64> = self.x.iter().zip(&xd).map(|(a, b)| a - b).collect();
        let spec = &self.scenario.network;
        self.history
            .push(t, stacked_sample(&e, &self.x, &self.u_prev, spec.alpha2))?;

        let phi_hat = match self.feedforward {
            Feedforward::Network => {
                let input = self.history.input_matrix(t, spec, self.scenario.stacking_time)?;
                let trace = self.net.forward(&self.theta, &input)?;
                let jac = assemble_full_jacobian(&self.net, &trace, &self.theta)?;
                self.jacobian_norm_max = self.jacobian_norm_max.max(spectral_norm(jac.matrix()));
                self.theta = self.controller.adaptation_step(&self.theta, &jac, &e, dt)?;
                match self.ordering {
                    StepOrdering::AdaptThenAct => self.net.output(&self.theta, &input)?,
                    StepOrdering::ActThenAdapt => trace.output().to_vec(),
                }
            }
            Feedforward::Oracle => {
                let drift = self.plant.drift(&self.x, t);
                let vd = self.trajectory.velocity(t);
                let ae = self.controller.params().designer().mul_vec(&e)?;
                (0..e.len()).map(|i| drift[i] - vd[i] - ae[i]).collect()
            }
        };
        let theta_norm = norm(&self.theta);
        let u = self.controller.control_input(&phi_hat, &e)?;
        let sample = Sample {
            t,
            x: self.x.clone(),
            xd,
            e,
            u: u.clone(),
            theta_norm,
            phi_hat,
        };

        let plant = self.plant;
        let next = rk4_step(
            |s, y| {
                let mut d = plant.drift(y, s);
                d.iter_mut().zip(&u).for_each(|(di, ui)| *di += ui);
                d
            },
            t,
            &self.x,
            dt,
        );
        self.step += 1;
        if let Some(bad) = next.iter().find(|v| !(v.abs() < DIVERGENCE_BOUND)) {
            return Err(Error::Divergence {
                time: self.time(),
                detail: format!(
                    "state {next:?} (component {bad}) after u = {u:?}, e = {:?}, |theta| = {:.6}",
                    sample.e, sample.theta_norm
                ),
            });
        }
        self.x = next;
        self.u_prev = u;
        Ok(sample)
    }
}

/// Output of [`run_scenario`].
#[derive(Clone, Debug)]
pub struct RunResult {
    pub scenario: Scenario,
    pub samples: Vec<Sample>,
    /// `(ε₁, ε₂)` over the full horizon.
    pub rmse: (f64, f64),
    /// RMSE over `[t_g, t_end]` when the disturbance is switched on.
    pub post_change_rmse: Option<(f64, f64)>,
    pub max_theta_norm: f64,
    pub weight_count: usize,
    /// Largest spectral norm of `Φ̂'` observed during the run.
    pub jacobian_norm_max: f64,
    pub certificate: GainCertificate,
}

impl RunResult {
    /// RMSE of `e` over samples with `start ≤ t ≤ end`.
    pub fn rmse_window(&self, start: f64, end: f64) -> Result<(f64, f64)> {
        rmse(&self.samples, start, end)
    }
}

/// Per-component root mean square of `e` over all samples in
/// `[start, end]`.
pub fn rmse(samples: &[Sample], start: f64, end: f64) -> Result<(f64, f64)> {
    // tolerate grid points that land a rounding error outside the window
    let tol = 1e-9 * end.abs().max(1.0);
    let mut sum = [0.0; 2];
    let mut count = 0usize;
    for s in samples.iter().filter(|s| s.t >= start - tol && s.t <= end + tol) {
        sum[0] += s.e[0] * s.e[0];
        sum[1] += s.e[1] * s.e[1];
        count += 1;
    }
    if count == 0 {
        return Err(Error::EmptyWindow { start, end });
    }
    let c = count as f64;
    Ok(((sum[0] / c).sqrt(), (sum[1] / c).sqrt()))
}

/// Runs the scenario over `[0, t_end)` with the adaptive network.
pub fn run_scenario(scenario: &Scenario) -> Result<RunResult> {
    run_with(scenario, Feedforward::Network)
}

pub fn run_with(scenario: &Scenario, feedforward: Feedforward) -> Result<RunResult> {
    let mut sim = Simulator::new(scenario.clone(), feedforward)?;
    let steps = scenario.step_count();
    let mut samples = Vec::with_capacity(steps);
    let mut max_theta_norm = norm(sim.theta());
    for _ in 0..steps {
        let s = sim.step()?;
        max_theta_norm = max_theta_norm.max(s.theta_norm);
        samples.push(s);
    }
    max_theta_norm = max_theta_norm.max(norm(sim.theta()));
    let t_end = samples.last().map_or(0.0, |s| s.t);
    let rmse_all = rmse(&samples, 0.0, t_end)?;
    let post_change_rmse = match scenario.plant.disturbance_onset {
        Some(tg) if tg <= t_end => Some(rmse(&samples, tg, t_end)?),
        _ => None,
    };
    let params = scenario.controller.params()?;
    let certificate = gain_certificate(
        &params,
        scenario.controller.phi_prime_bound,
        scenario.controller.delta_bar,
    );
    Ok(RunResult {
        scenario: scenario.clone(),
        samples,
        rmse: rmse_all,
        post_change_rmse,
        max_theta_norm,
        weight_count: sim.network().weight_count(),
        jacobian_norm_max: sim.jacobian_norm_max(),
        certificate,
    })
}

/// `A_c = a I` of size `n`, row by row.
pub fn scaled_identity(n: usize, a: f64) -> Vec<Vec<f64>> {
    Mat::from_fn(n, n, |i, j| if i == j { a } else { 0.0 })
        .as_slice()
        .chunks(n)
        .map(<[f64]>::to_vec)
        .collect()
}
