//! Control law `u = -Φ̂ - k_s sgn(e)` and the projected weight adaptation
//! law
//!
//! ```text
//! θ̂' = proj[ -Γ (A_c⁻¹ Φ̂')ᵀ e - ρ ‖e‖ θ̂ ]
//! ```
//!
//! The gradient term comes from treating the error dynamics as static
//! (`ė = 0`), which gives `∂e/∂θ̂ = A_c⁻¹ Φ̂'`. The `ρ ‖e‖ θ̂` term is the
//! e-modification damping.

use std::fmt;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{shape, Error, Result};
use crate::jacobian::JacobianMatrix;
use crate::mat::Mat;
use crate::network::WeightLayout;
use crate::scalar::{dot, norm, Scalar};

/// Width of the projection blending band, relative to `θ̄²`.
pub const PROJECTION_MARGIN: f64 = 1e-3;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "mode")]
pub enum SignMode {
    /// `sgn(e)` with `sgn(0) = 0`.
    #[default]
    Exact,
    /// `tanh(e / epsilon)`.
    Smoothed { epsilon: f64 },
}

impl SignMode {
    pub fn apply<T: Scalar>(&self, v: T) -> T {
        match *self {
            SignMode::Exact => {
                if v > T::zero() {
                    T::one()
                } else if v < T::zero() {
                    -T::one()
                } else {
                    T::zero()
                }
            }
            SignMode::Smoothed { epsilon } => (v / T::lit(epsilon)).tanh(),
        }
    }
}

/// How one adaptation step integrates the weight ODE over `dt`, with
/// `e` and `Φ̂'` held fixed.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdaptationScheme {
    /// Integrates the linear damping term exactly: `θ̂ e^{-λdt}` plus the
    /// gradient term weighted by `(1 - e^{-λdt})/λ`, with `λ = ρ‖e‖`.
    /// Stable for any `λ dt`.
    #[default]
    Exponential,
    /// `θ̂ + dt · proj[τ]`. Unstable once `ρ ‖e‖ dt > 2`.
    ForwardEuler,
}

/// Diagonal learning-rate matrix `Γ`, one scalar for the fully connected
/// weights and one for the conv weights.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LearningRate {
    pub fc: f64,
    pub conv: f64,
}

impl LearningRate {
    pub fn uniform(rate: f64) -> Self {
        Self { fc: rate, conv: rate }
    }

    /// Diagonal of `Γ` in weight-vector order.
    pub fn diagonal(&self, layout: &WeightLayout) -> Vec<f64> {
        let fc_len = layout.fc_len();
        (0..layout.len())
            .map(|k| if k < fc_len { self.fc } else { self.conv })
            .collect()
    }

    /// Spectral norm of `Γ⁻¹`.
    pub fn inverse_norm(&self) -> f64 {
        1.0 / self.fc.min(self.conv)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ControllerParams<T> {
    switching_gain: T,
    designer: Mat<T>,
    designer_inv: Mat<T>,
    learning_rate: LearningRate,
    damping: T,
    theta_bar: T,
    sign_mode: SignMode,
    scheme: AdaptationScheme,
}

impl<T: Scalar> ControllerParams<T> {
    /// Validates the gains: `k_s > 0`, `A_c` Hurwitz, `Γ` positive, `ρ ≥ 0`,
    /// `θ̄ > 0`.
    pub fn new(
        switching_gain: T,
        designer: Mat<T>,
        learning_rate: LearningRate,
        damping: T,
        theta_bar: T,
    ) -> Result<Self> {
        if !(switching_gain > T::zero()) {
            return Err(Error::Config(format!("switching gain must be positive, got {switching_gain}")));
        }
        if !(learning_rate.fc > 0.0 && learning_rate.conv > 0.0)
            || !learning_rate.fc.is_finite()
            || !learning_rate.conv.is_finite()
        {
            return Err(Error::Config(format!("learning rates must be positive, got {learning_rate:?}")));
        }
        if !(damping >= T::zero()) || !damping.is_finite() {
            return Err(Error::Config(format!("damping must be non-negative, got {damping}")));
        }
        if !(theta_bar > T::zero()) {
            return Err(Error::Config(format!("projection radius must be positive, got {theta_bar}")));
        }
        check_hurwitz(&designer)?;
        let designer_inv = designer.inverse()?;
        Ok(Self {
            switching_gain,
            designer,
            designer_inv,
            learning_rate,
            damping,
            theta_bar,
            sign_mode: SignMode::Exact,
            scheme: AdaptationScheme::Exponential,
        })
    }

    pub fn with_sign_mode(mut self, mode: SignMode) -> Result<Self> {
        if let SignMode::Smoothed { epsilon } = mode {
            if !(epsilon > 0.0) {
                return Err(Error::Config(format!("sign smoothing must be positive, got {epsilon}")));
            }
        }
        self.sign_mode = mode;
        Ok(self)
    }

    pub fn with_scheme(mut self, scheme: AdaptationScheme) -> Self {
        self.scheme = scheme;
        self
    }

    pub fn switching_gain(&self) -> T {
        self.switching_gain
    }

    /// `A_c`.
    pub fn designer(&self) -> &Mat<T> {
        &self.designer
    }

    pub fn designer_inv(&self) -> &Mat<T> {
        &self.designer_inv
    }

    pub fn learning_rate(&self) -> LearningRate {
        self.learning_rate
    }

    pub fn damping(&self) -> T {
        self.damping
    }

    pub fn theta_bar(&self) -> T {
        self.theta_bar
    }

    pub fn sign_mode(&self) -> SignMode {
        self.sign_mode
    }

    pub fn scheme(&self) -> AdaptationScheme {
        self.scheme
    }

    pub fn state_dim(&self) -> usize {
        self.designer.rows()
    }
}

fn check_hurwitz<T: Scalar>(a: &Mat<T>) -> Result<()> {
    if a.rows() != a.cols() {
        return Err(shape("designer matrix", format!("non-square {:?}", a.shape())));
    }
    let m = DMatrix::from_row_slice(
        a.rows(),
        a.cols(),
        &a.as_slice().iter().map(|v| v.as_f64()).collect::<Vec<_>>(),
    );
    let eig = m.complex_eigenvalues();
    if let Some(bad) = eig.iter().find(|z| !(z.re < 0.0)) {
        return Err(Error::Config(format!(
            "designer matrix is not Hurwitz (eigenvalue {:.4} + {:.4}i)",
            bad.re, bad.im
        )));
    }
    Ok(())
}

/// Spectral norm via SVD.
pub fn spectral_norm<T: Scalar>(a: &Mat<T>) -> f64 {
    let m = DMatrix::from_row_slice(
        a.rows(),
        a.cols(),
        &a.as_slice().iter().map(|v| v.as_f64()).collect::<Vec<_>>(),
    );
    m.singular_values().max()
}

/// `u = -Φ̂ - k_s sgn(e)`.
pub fn control_input<T: Scalar>(phi_hat: &[T], e: &[T], params: &ControllerParams<T>) -> Result<Vec<T>> {
    if phi_hat.len() != e.len() {
        return Err(shape(
            "control_input",
            format!("Φ̂ has {} entries, e has {}", phi_hat.len(), e.len()),
        ));
    }
    let ks = params.switching_gain;
    Ok(phi_hat
        .iter()
        .zip(e)
        .map(|(&p, &ei)| -p - ks * params.sign_mode.apply(ei))
        .collect())
}

/// Norm-ball projection with unit weighting; see [`projection_weighted`].
pub fn projection<T: Scalar>(theta: &[T], tau: &[T], theta_bar: T) -> Vec<T> {
    let ones = vec![T::one(); theta.len()];
    projection_weighted(theta, tau, theta_bar, &ones)
}

/// Smooth projection keeping `‖θ̂‖ ≤ θ̄`.
///
/// With `c = (‖θ̂‖² - (1 - δ)θ̄²) / (δ θ̄²)` clipped to `[0, 1]`, the rate is
/// passed through when `c ≤ 0` or `θ̂ᵀτ ≤ 0`; otherwise
/// `τ - c (θ̂ᵀτ / θ̂ᵀΓθ̂) Γθ̂`. At `‖θ̂‖ = θ̄` the outward component is removed
/// entirely, so `d‖θ̂‖²/dt ≤ 0` there. `gamma` is the diagonal of `Γ`.
pub fn projection_weighted<T: Scalar>(theta: &[T], tau: &[T], theta_bar: T, gamma: &[T]) -> Vec<T> {
    let n2 = dot(theta, theta);
    let b2 = theta_bar * theta_bar;
    let delta = T::lit(PROJECTION_MARGIN);
    let c = (n2 - (T::one() - delta) * b2) / (delta * b2);
    let outward = dot(theta, tau);
    if c <= T::zero() || outward <= T::zero() {
        return tau.to_vec();
    }
    let c = c.min(T::one());
    let weighted: T = theta
        .iter()
        .zip(gamma)
        .map(|(&t, &g)| g * t * t)
        .sum();
    let factor = c * outward / weighted;
    tau.iter()
        .zip(theta)
        .zip(gamma)
        .map(|((&r, &t), &g)| r - factor * g * t)
        .collect()
}

/// Controller instance bound to one weight layout.
#[derive(Clone, Debug)]
pub struct Controller<T> {
    params: ControllerParams<T>,
    gamma: Vec<T>,
}

impl<T: Scalar> Controller<T> {
    pub fn new(params: ControllerParams<T>, layout: &WeightLayout) -> Self {
        let gamma = params
            .learning_rate
            .diagonal(layout)
            .into_iter()
            .map(T::lit)
            .collect();
        Self { params, gamma }
    }

    pub fn params(&self) -> &ControllerParams<T> {
        &self.params
    }

    pub fn control_input(&self, phi_hat: &[T], e: &[T]) -> Result<Vec<T>> {
        control_input(phi_hat, e, &self.params)
    }

    /// Gradient part `-Γ (A_c⁻¹ Φ̂')ᵀ e`.
    fn gradient_term(&self, jac: &JacobianMatrix<T>, e: &[T]) -> Result<Vec<T>> {
        if jac.cols() != self.gamma.len() {
            return Err(Error::Layout {
                expected: self.gamma.len(),
                actual: jac.cols(),
            });
        }
        let sensitivity = self.params.designer_inv.matmul(jac.matrix())?;
        let g = sensitivity.tr_mul_vec(e)?;
        Ok(g.iter().zip(&self.gamma).map(|(&gi, &gm)| -gm * gi).collect())
    }

    /// Unprojected rate `τ = -Γ (A_c⁻¹ Φ̂')ᵀ e - ρ ‖e‖ θ̂`.
    pub fn raw_rate(&self, theta: &[T], jac: &JacobianMatrix<T>, e: &[T]) -> Result<Vec<T>> {
        let grad = self.gradient_term(jac, e)?;
        let decay = self.params.damping * norm(e);
        Ok(grad.iter().zip(theta).map(|(&g, &t)| g - decay * t).collect())
    }

    /// `proj[τ]` at `θ̂`.
    pub fn projected_rate(&self, theta: &[T], tau: &[T]) -> Vec<T> {
        projection_weighted(theta, tau, self.params.theta_bar, &self.gamma)
    }

    /// Advances `θ̂` by `dt` with `Φ̂'` and `e` held constant; the result
    /// never leaves the ball `‖θ̂‖ ≤ θ̄`.
    pub fn adaptation_step(&self, theta: &[T], jac: &JacobianMatrix<T>, e: &[T], dt: T) -> Result<Vec<T>> {
        if !(dt > T::zero()) {
            return Err(Error::Config(format!("adaptation step must be positive, got {dt}")));
        }
        if theta.len() != self.gamma.len() {
            return Err(Error::Layout {
                expected: self.gamma.len(),
                actual: theta.len(),
            });
        }
        let tau = match self.params.scheme {
            AdaptationScheme::ForwardEuler => self.raw_rate(theta, jac, e)?,
            AdaptationScheme::Exponential => {
                let grad = self.gradient_term(jac, e)?;
                let lambda = self.params.damping * norm(e);
                let (keep, gain) = if lambda > T::zero() {
                    let decay = (-lambda * dt).exp();
                    (decay, (T::one() - decay) / lambda)
                } else {
                    (T::one(), dt)
                };
                // average rate that lands on the exact solution after dt
                theta
                    .iter()
                    .zip(&grad)
                    .map(|(&t, &g)| (t * keep + g * gain - t) / dt)
                    .collect()
            }
        };
        let rate = self.projected_rate(theta, &tau);
        let mut next: Vec<T> = theta.iter().zip(&rate).map(|(&t, &r)| t + dt * r).collect();
        let n = norm(&next);
        if n > self.params.theta_bar {
            let s = self.params.theta_bar / n;
            next.iter_mut().for_each(|v| *v *= s);
        }
        Ok(next)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CertificateStatus {
    Satisfied,
    Violated,
    /// `ρ = 0`, so `β₂` is undefined.
    NotComputable,
}

/// Computable constants of the asymptotic-convergence gain condition
/// `β₁β₂² + Δ̄ ≤ k_s`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GainCertificate {
    pub beta1: f64,
    pub beta2: Option<f64>,
    pub k_s_min: Option<f64>,
    pub switching_gain: f64,
    pub phi_prime_bound: f64,
    pub delta_bar: f64,
    pub status: CertificateStatus,
}

/// `β₁ = ρ‖Γ⁻¹‖`, `β₂ = (Φ'_M(‖A_c⁻¹‖ + 1) + β₁θ̄) / (2β₁)`,
/// `k_s,min = β₁β₂² + Δ̄`, with spectral norms.
pub fn gain_certificate<T: Scalar>(
    params: &ControllerParams<T>,
    phi_prime_bound: f64,
    delta_bar: f64,
) -> GainCertificate {
    let rho = params.damping.as_f64();
    let beta1 = rho * params.learning_rate.inverse_norm();
    let ks = params.switching_gain.as_f64();
    if !(beta1 > 0.0) {
        return GainCertificate {
            beta1,
            beta2: None,
            k_s_min: None,
            switching_gain: ks,
            phi_prime_bound,
            delta_bar,
            status: CertificateStatus::NotComputable,
        };
    }
    let a_inv = spectral_norm(&params.designer_inv);
    let theta_bar = params.theta_bar.as_f64();
    let beta2 = (phi_prime_bound * (a_inv + 1.0) + beta1 * theta_bar) / (2.0 * beta1);
    let k_s_min = beta1 * beta2 * beta2 + delta_bar;
    GainCertificate {
        beta1,
        beta2: Some(beta2),
        k_s_min: Some(k_s_min),
        switching_gain: ks,
        phi_prime_bound,
        delta_bar,
        status: if k_s_min <= ks {
            CertificateStatus::Satisfied
        } else {
            CertificateStatus::Violated
        },
    }
}

impl fmt::Display for GainCertificate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.beta2, self.k_s_min) {
            (Some(b2), Some(kmin)) => write!(
                f,
                "beta1 = {:.6e}, beta2 = {:.6e}, k_s_min = {:.6e} (k_s = {}, Phi'_M = {:.4}, Delta_bar = {}), satisfied: {}",
                self.beta1,
                b2,
                kmin,
                self.switching_gain,
                self.phi_prime_bound,
                self.delta_bar,
                if self.status == CertificateStatus::Satisfied { "yes" } else { "no" }
            ),
            _ => write!(f, "satisfied: not-computable (rho=0)"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{Activation, NetworkSpec};

    fn params(rho: f64) -> ControllerParams<f64> {
        ControllerParams::new(
            1.0,
            Mat::diag(&[-10.0, -10.0]),
            LearningRate::uniform(2.0),
            rho,
            10.0,
        )
        .unwrap()
    }

    fn layout(len_hint: usize) -> WeightLayout {
        // a dense-only net with `len_hint` inputs and 2 outputs
        WeightLayout::new(&NetworkSpec {
            input_rows: 1,
            input_cols: len_hint,
            conv_layers: vec![],
            fc_widths: vec![2],
            alpha1: 1.0,
            alpha2: 1.0,
            activation: Activation::Tanh,
        })
        .unwrap()
    }

    #[test]
    fn control_law_examples() {
        let p = params(1.0);
        assert_eq!(control_input(&[0.0, 0.0], &[0.0, 0.0], &p).unwrap(), vec![0.0, 0.0]);
        assert_eq!(
            control_input(&[1.0, -2.0], &[0.5, -0.5], &p).unwrap(),
            vec![-2.0, 3.0]
        );
        assert!(control_input(&[1.0], &[0.5, -0.5], &p).is_err());
    }

    #[test]
    fn smoothed_sign_approaches_exact() {
        for e in [0.3f64, -0.02, 1e-2] {
            let exact = SignMode::Exact.apply(e);
            let smooth = SignMode::Smoothed { epsilon: 1e-5 }.apply(e);
            assert!((exact - smooth).abs() < 1e-12);
        }
        assert_eq!(SignMode::Exact.apply(0.0), 0.0);
        assert_eq!(SignMode::Exact.apply(-0.0), 0.0);
    }

    #[test]
    fn rejects_non_hurwitz_designer() {
        let bad = ControllerParams::new(1.0, Mat::diag(&[-1.0, 0.5]), LearningRate::uniform(1.0), 0.0, 10.0);
        assert!(matches!(bad, Err(Error::Config(_))));
        let rotation = Mat::from_rows(&[&[0.0, 1.0], &[-1.0, 0.0]]).unwrap();
        assert!(ControllerParams::new(1.0, rotation, LearningRate::uniform(1.0), 0.0, 10.0).is_err());
        let stable = Mat::from_rows(&[&[-1.0, 5.0], &[-5.0, -1.0]]).unwrap();
        assert!(ControllerParams::new(1.0, stable, LearningRate::uniform(1.0), 0.0, 10.0).is_ok());
    }

    #[test]
    fn zero_error_freezes_weights() {
        let layout = layout(3);
        let c = Controller::new(params(1e5), &layout);
        let theta = vec![0.05, -0.02, 0.01, 0.3, -0.1, 0.2, 0.0, 0.4];
        let jac = JacobianMatrix::from_matrix(Mat::from_fn(2, 8, |i, j| (i + j) as f64));
        let next = c.adaptation_step(&theta, &jac, &[0.0, 0.0], 1e-3).unwrap();
        assert_eq!(next, theta);
    }

    #[test]
    fn damping_only_decay() {
        let layout = layout(3);
        let theta = vec![0.05, -0.02, 0.01, 0.3, -0.1, 0.2, 0.0, 0.4];
        let jac = JacobianMatrix::zeros(2, 8);
        let e = [0.3, -0.4];
        let (dt, rho) = (1e-3, 2.0);
        let euler = Controller::new(params(rho).with_scheme(AdaptationScheme::ForwardEuler), &layout);
        let next = euler.adaptation_step(&theta, &jac, &e, dt).unwrap();
        for (n, t) in next.iter().zip(&theta) {
            assert!((n - t * (1.0 - dt * rho * 0.5)).abs() < 1e-15);
        }
        let exp = Controller::new(params(rho), &layout);
        let next = exp.adaptation_step(&theta, &jac, &e, dt).unwrap();
        for (n, t) in next.iter().zip(&theta) {
            assert!((n - t * (-dt * rho * 0.5f64).exp()).abs() < 1e-15);
        }
    }

    #[test]
    fn exponential_scheme_stays_bounded_when_stiff() {
        let layout = layout(3);
        let theta = vec![0.05, -0.02, 0.01, 0.3, -0.1, 0.2, 0.0, 0.4];
        let jac = JacobianMatrix::from_matrix(Mat::from_fn(2, 8, |i, j| 0.1 * (i + j) as f64));
        let e = [1.0, 3.0];
        let c = Controller::new(params(1e5), &layout);
        let mut th = theta.clone();
        for _ in 0..100 {
            th = c.adaptation_step(&th, &jac, &e, 1e-3).unwrap();
        }
        // converges to the quasi-static balance a/λ
        let grad = c.gradient_term(&jac, &e).unwrap();
        let lambda = 1e5 * norm(&e);
        for (t, g) in th.iter().zip(&grad) {
            assert!((t - g / lambda).abs() < 1e-12);
        }
    }

    #[test]
    fn projection_examples() {
        let tau = [0.3, -0.7, 0.2];
        assert_eq!(projection(&[0.1, 0.2, 0.3], &tau, 10.0), tau.to_vec());

        let boundary = [6.0, 8.0, 0.0];
        let outward = [3.0, 4.0, 1.0];
        let p = projection(&boundary, &outward, 10.0);
        assert!(dot(&boundary, &p) <= 1e-9);

        let tangent = [-8.0, 6.0, 2.0];
        assert_eq!(projection(&boundary, &tangent, 10.0), tangent.to_vec());

        let inward = [-3.0, -4.0, 0.0];
        assert_eq!(projection(&boundary, &inward, 10.0), inward.to_vec());
    }

    #[test]
    fn projection_blends_continuously() {
        let dir = [0.6, 0.8];
        let tau = [1.0, 0.0];
        let radial = |r: f64| {
            let th = [dir[0] * r, dir[1] * r];
            dot(&dir, &projection(&th, &tau, 10.0))
        };
        let inner = 10.0 * (1.0 - PROJECTION_MARGIN).sqrt();
        assert!((radial(inner - 1e-9) - 0.6).abs() < 1e-6);
        assert!(radial(inner + 0.5 * (10.0 - inner)) < 0.6);
        assert!(radial(10.0).abs() < 1e-12);
    }

    #[test]
    fn certificate_scalar_reduction() {
        let p = ControllerParams::new(
            2.0,
            Mat::diag(&[-10.0, -10.0]),
            LearningRate::uniform(4.0),
            8.0,
            10.0,
        )
        .unwrap();
        let c = gain_certificate(&p, 3.0, 0.5);
        assert!((c.beta1 - 2.0).abs() < 1e-15);
        let beta2 = (3.0 * (0.1 + 1.0) + 2.0 * 10.0) / 4.0;
        assert!((c.beta2.unwrap() - beta2).abs() < 1e-12);
        assert!((c.k_s_min.unwrap() - (2.0 * beta2 * beta2 + 0.5)).abs() < 1e-9);
        assert_eq!(c.status, CertificateStatus::Violated);

        let c2 = gain_certificate(&p, 3.0, 1.0);
        assert!((c2.k_s_min.unwrap() - c.k_s_min.unwrap() - 0.5).abs() < 1e-9);
    }

    #[test]
    fn certificate_without_damping_is_not_computable() {
        let c = gain_certificate(&params(0.0), 1.0, 0.0);
        assert_eq!(c.status, CertificateStatus::NotComputable);
        assert!(c.to_string().contains("not-computable"));
    }

    #[test]
    fn scaling_gamma_scales_gradient_and_beta1() {
        let layout = layout(3);
        let jac = JacobianMatrix::from_matrix(Mat::from_fn(2, 8, |i, j| 0.1 * (i * 3 + j) as f64 - 0.4));
        let theta = vec![0.0; 8];
        let e = [0.2, -0.5];
        let base = Controller::new(params(0.0), &layout);
        let scaled_params = ControllerParams::new(
            1.0,
            Mat::diag(&[-10.0, -10.0]),
            LearningRate::uniform(6.0),
            0.0,
            10.0,
        )
        .unwrap();
        let scaled = Controller::new(scaled_params, &layout);
        let a = base.raw_rate(&theta, &jac, &e).unwrap();
        let b = scaled.raw_rate(&theta, &jac, &e).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((3.0 * x - y).abs() < 1e-14);
        }
        let c1 = gain_certificate(&params(1.0), 1.0, 0.0).beta1;
        let c3 = gain_certificate(
            &ControllerParams::new(1.0, Mat::diag(&[-10.0, -10.0]), LearningRate::uniform(6.0), 1.0, 10.0).unwrap(),
            1.0,
            0.0,
        )
        .beta1;
        assert!((c1 / 3.0 - c3).abs() < 1e-15);
    }
}
