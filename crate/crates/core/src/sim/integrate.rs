/// One classical fourth-order Runge-Kutta step of `ẏ = f(t, y)`.
pub fn rk4_step(f: impl Fn(f64, &[f64]) -> Vec<f64>, t: f64, y: &[f64], dt: f64) -> Vec<f64> {
    let axpy = |a: f64, k: &[f64]| -> Vec<f64> { y.iter().zip(k).map(|(&yi, &ki)| yi + a * ki).collect() };
    let k1 = f(t, y);
    let k2 = f(t + 0.5 * dt, &axpy(0.5 * dt, &k1));
    let k3 = f(t + 0.5 * dt, &axpy(0.5 * dt, &k2));
    let k4 = f(t + dt, &axpy(dt, &k3));
    y.iter()
        .enumerate()
        .map(|(i, &yi)| yi + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect()
}
