//! Central finite-difference check of the analytic Jacobian.
//!
//! The numeric side only ever calls the forward pass, so it stays
//! independent of the backward code it validates.

use std::io::Write;

use crate::error::Result;
use crate::jacobian::assemble_full_jacobian;
use crate::mat::Mat;
use crate::network::{Network, NetworkSpec};
use crate::rng::Rng;

/// Pass threshold on [`relative_error`].
pub const TOLERANCE: f64 = 1e-6;
pub const DEFAULT_STEP: f64 = 1e-6;

/// `|analytic - numeric| / (1 + |numeric|)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (1.0 + numeric.abs())
}

/// `∂Φ/∂θ` by central differences with step `h`, `out × Ξ`.
pub fn finite_difference_jacobian(
    net: &Network,
    theta: &[f64],
    x: &Mat<f64>,
    h: f64,
) -> Result<Mat<f64>> {
    let out = net.output_len();
    let mut jac = Mat::zeros(out, theta.len());
    let mut probe = theta.to_vec();
    for k in 0..theta.len() {
        probe[k] = theta[k] + h;
        let plus = net.output(&probe, x)?;
        probe[k] = theta[k] - h;
        let minus = net.output(&probe, x)?;
        probe[k] = theta[k];
        for i in 0..out {
            jac[(i, k)] = (plus[i] - minus[i]) / (2.0 * h);
        }
    }
    Ok(jac)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Entry {
    /// Flat index `i · Ξ + k` of output `i`, weight `k`.
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

#[derive(Clone, Debug)]
pub struct Report {
    pub entries: Vec<Entry>,
}

impl Report {
    pub fn max_rel_err(&self) -> f64 {
        self.entries.iter().map(|e| e.rel_err).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.max_rel_err() < TOLERANCE
    }

    /// Entries sorted by decreasing error.
    pub fn worst(&self, count: usize) -> Vec<Entry> {
        let mut sorted = self.entries.clone();
        sorted.sort_by(|a, b| b.rel_err.total_cmp(&a.rel_err));
        sorted.truncate(count);
        sorted
    }

    pub fn write_csv(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "index,analytic,numeric,rel_err")?;
        for e in &self.entries {
            writeln!(w, "{},{:e},{:e},{:e}", e.index, e.analytic, e.numeric, e.rel_err)?;
        }
        Ok(())
    }
}

/// Compares the analytic Jacobian at `(θ, X)` against finite differences.
pub fn check(net: &Network, theta: &[f64], x: &Mat<f64>, h: f64) -> Result<Report> {
    let trace = net.forward(theta, x)?;
    let analytic = assemble_full_jacobian(net, &trace, theta)?;
    let numeric = finite_difference_jacobian(net, theta, x, h)?;
    let entries = analytic
        .matrix()
        .as_slice()
        .iter()
        .zip(numeric.as_slice())
        .enumerate()
        .map(|(index, (&a, &n))| Entry {
            index,
            analytic: a,
            numeric: n,
            rel_err: relative_error(a, n),
        })
        .collect();
    Ok(Report { entries })
}

/// Architecture under test together with the ranges random draws use.
#[derive(Clone, Debug)]
pub struct Architecture {
    pub name: String,
    pub spec: NetworkSpec,
    /// Weights are drawn from `U(-theta_range, theta_range)`.
    pub theta_range: f64,
    /// Input entries are drawn from `α₂ · U(-signal_range, signal_range)`.
    pub signal_range: f64,
}

impl Architecture {
    pub fn cnn1() -> Self {
        Self {
            name: "cnn1".into(),
            spec: crate::sim::presets::cnn1_network(),
            theta_range: 0.1,
            signal_range: 3.0,
        }
    }

    /// One 2x2 single-filter conv layer on a 3x2 input and one fc layer with
    /// two outputs.
    pub fn minimal() -> Self {
        Self {
            name: "minimal".into(),
            spec: crate::sim::presets::minimal_network(),
            theta_range: 1.0,
            signal_range: 1.0,
        }
    }

    pub fn custom(name: impl Into<String>, spec: NetworkSpec) -> Self {
        Self {
            name: name.into(),
            spec,
            theta_range: 0.1,
            signal_range: 3.0,
        }
    }

    pub fn draw(&self, net: &Network, rng: &mut Rng) -> (Vec<f64>, Mat<f64>) {
        let theta = rng.uniform_vec(net.weight_count(), -self.theta_range, self.theta_range);
        let a2 = self.spec.alpha2;
        let x = Mat::from_fn(self.spec.input_rows, self.spec.input_cols, |_, _| {
            a2 * rng.uniform(-self.signal_range, self.signal_range)
        });
        (theta, x)
    }
}

/// Runs `trials` random draws and returns one report per draw.
pub fn run_trials(arch: &Architecture, trials: usize, h: f64, seed: u64) -> Result<Vec<Report>> {
    let net = Network::new(arch.spec.clone())?;
    let mut rng = Rng::seeded(seed);
    (0..trials)
        .map(|_| {
            let (theta, x) = arch.draw(&net, &mut rng);
            check(&net, &theta, &x, h)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_error_definition() {
        assert_eq!(relative_error(1.0, 1.0), 0.0);
        assert_eq!(relative_error(3.0, 1.0), 1.0);
        assert_eq!(relative_error(1e-3, 0.0), 1e-3);
    }

    #[test]
    fn minimal_architecture_passes() {
        let reports = run_trials(&Architecture::minimal(), 5, DEFAULT_STEP, 1).unwrap();
        for r in &reports {
            assert!(r.passed(), "max rel err {}", r.max_rel_err());
        }
    }

    #[test]
    fn minimal_output_is_bilinear_in_weights() {
        // a single linear conv layer feeding a single linear fc layer, so
        // central differences are exact even for a coarse step
        let reports = run_trials(&Architecture::minimal(), 3, 1e-1, 1).unwrap();
        assert!(reports.iter().all(Report::passed));
    }

    #[test]
    fn coarse_step_is_detected() {
        let reports = run_trials(&Architecture::cnn1(), 1, 1e-1, 1).unwrap();
        assert!(reports.iter().any(|r| !r.passed()));
    }

    #[test]
    fn csv_has_fixed_header() {
        let reports = run_trials(&Architecture::minimal(), 1, DEFAULT_STEP, 3).unwrap();
        let mut buf = Vec::new();
        reports[0].write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("index,analytic,numeric,rel_err"));
        // 2 outputs × ((2·2+1)·1 + (2+1)·2) weights
        assert_eq!(lines.count(), 22);
    }
}
