//! Two-state benchmark plant `ẋ = f(x) + g(x, t) + u` and its desired
//! trajectory.

/// `f(x) = [x₁x₂tanh(x₂) + sech(x₁); sech²(x₁+x₂) - sech²(x₂)]`.
pub fn plant_f(x: &[f64]) -> Vec<f64> {
    let (x1, x2) = (x[0], x[1]);
    vec![
        x1 * x2 * x2.tanh() + sech(x1),
        sech(x1 + x2).powi(2) - sech(x2).powi(2),
    ]
}

/// Disturbance switched on at `onset`:
/// `g(x, t) = [2x₁²x₂ + 2sin t + 20; 2x₂²tanh(x₁) + 2cos(t/2) + 20]`.
pub fn plant_g(x: &[f64], t: f64, onset: Option<f64>) -> Vec<f64> {
    match onset {
        Some(tg) if t >= tg => {
            let (x1, x2) = (x[0], x[1]);
            vec![
                2.0 * x1 * x1 * x2 + 2.0 * t.sin() + 20.0,
                2.0 * x2 * x2 * x1.tanh() + 2.0 * (0.5 * t).cos() + 20.0,
            ]
        }
        _ => vec![0.0; x.len()],
    }
}

pub fn sech(v: f64) -> f64 {
    1.0 / v.cosh()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Plant {
    pub disturbance_onset: Option<f64>,
}

impl Plant {
    pub fn state_dim(&self) -> usize {
        2
    }

    /// Uncontrolled drift `f(x) + g(x, t)`.
    pub fn drift(&self, x: &[f64], t: f64) -> Vec<f64> {
        let mut d = plant_f(x);
        for (di, gi) in d.iter_mut().zip(plant_g(x, t, self.disturbance_onset)) {
            *di += gi;
        }
        d
    }
}

/// Desired trajectory with its analytic derivative.
pub trait Trajectory {
    fn position(&self, t: f64) -> Vec<f64>;
    fn velocity(&self, t: f64) -> Vec<f64>;
}

/// `x_d(t) = [sin 2t, -cos t]`.
#[derive(Clone, Copy, Debug, Default)]
pub struct SineCosine;

impl Trajectory for SineCosine {
    fn position(&self, t: f64) -> Vec<f64> {
        vec![(2.0 * t).sin(), -t.cos()]
    }

    fn velocity(&self, t: f64) -> Vec<f64> {
        vec![2.0 * (2.0 * t).cos(), t.sin()]
    }
}

/// Largest gap between the analytic velocity and a central difference of
/// the position, sampled on `[0, t_end]`.
pub fn velocity_mismatch(traj: &dyn Trajectory, t_end: f64) -> f64 {
    let h = 1e-5;
    (0..=200)
        .map(|k| t_end * k as f64 / 200.0)
        .flat_map(|t| {
            let (p, m) = (traj.position(t + h), traj.position(t - h));
            traj.velocity(t)
                .into_iter()
                .zip(p.into_iter().zip(m))
                .map(move |(v, (a, b))| (v - (a - b) / (2.0 * h)).abs())
        })
        .fold(0.0, f64::max)
}
