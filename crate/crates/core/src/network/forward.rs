use crate::error::{shape, Error, Result};
use crate::mat::Mat;
use crate::scalar::Scalar;

use super::{Dims, NetworkSpec, WeightLayout, Weights};

/// Full-width, stride-1 valid cross-correlation.
///
/// Entry `(i, j)` of the `(n - p + 1) × q` output is the sum of
/// `W⁽ʲ⁾ ⊙ row_(i:i+p-1)(X)` plus `B_j`.
pub fn cnn_operator<T: Scalar>(x: &Mat<T>, filters: &[Mat<T>], biases: &[T]) -> Result<Mat<T>> {
    let first = filters
        .first()
        .ok_or_else(|| shape("cnn_operator", "empty filter set"))?;
    let (p, m) = first.shape();
    if filters.iter().any(|w| w.shape() != (p, m)) {
        return Err(shape("cnn_operator", "filters differ in shape"));
    }
    if m != x.cols() {
        return Err(shape(
            "cnn_operator",
            format!("filter width {m} does not span input width {}", x.cols()),
        ));
    }
    if p > x.rows() {
        return Err(shape(
            "cnn_operator",
            format!("filter height {p} exceeds input height {}", x.rows()),
        ));
    }
    if biases.len() != filters.len() {
        return Err(shape(
            "cnn_operator",
            format!("{} biases for {} filters", biases.len(), filters.len()),
        ));
    }
    let out_rows = x.rows() - p + 1;
    Ok(Mat::from_fn(out_rows, filters.len(), |i, j| {
        // window rows i..i+p of X are contiguous in row-major storage
        let window = &x.as_slice()[i * m..(i + p) * m];
        let acc: T = filters[j]
            .as_slice()
            .iter()
            .zip(window)
            .map(|(&w, &v)| w * v)
            .sum();
        acc + biases[j]
    }))
}

/// Every intermediate quantity of one forward pass, kept for the
/// backward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct ForwardTrace<T> {
    pub input: Mat<T>,
    /// `φ^C_j`, the activated input of conv layer `j`. Entry 0 is
    /// `α₁ tanh(X)` (or `α₁ tanh(X / α₂)` without conv layers).
    pub conv_inputs: Vec<Mat<T>>,
    /// `Φ^C_j`, the raw output of conv layer `j`.
    pub conv_outputs: Vec<Mat<T>>,
    /// `C = [vec(Φ^C_kcᵀ); 1]`.
    pub concat: Vec<T>,
    /// `φ^F_j`, the augmented input of fully connected layer `j`
    /// (entry 0 is `concat`).
    pub fc_inputs: Vec<Vec<T>>,
    /// `Φ^F_j`.
    pub fc_outputs: Vec<Vec<T>>,
    theta: Vec<T>,
}

impl<T: Scalar> ForwardTrace<T> {
    /// Network output `Φ = Φ^F_kf`.
    pub fn output(&self) -> &[T] {
        self.fc_outputs.last().expect("at least one fc layer")
    }

    /// Whether this trace was produced with exactly `theta`.
    pub fn matches(&self, theta: &[T]) -> bool {
        self.theta.as_slice() == theta
    }

    pub(crate) fn ensure_matches(&self, theta: &[T]) -> Result<()> {
        if self.matches(theta) {
            Ok(())
        } else {
            Err(Error::StaleTrace)
        }
    }
}

/// A validated architecture with its weight layout.
#[derive(Clone, Debug)]
pub struct Network {
    spec: NetworkSpec,
    dims: Dims,
    layout: WeightLayout,
}

impl Network {
    pub fn new(spec: NetworkSpec) -> Result<Self> {
        let dims = spec.dims()?;
        let layout = WeightLayout::from_dims(&spec, &dims);
        Ok(Self { spec, dims, layout })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn dims(&self) -> &Dims {
        &self.dims
    }

    pub fn layout(&self) -> &WeightLayout {
        &self.layout
    }

    pub fn weight_count(&self) -> usize {
        self.layout.len()
    }

    pub fn output_len(&self) -> usize {
        self.dims.output_len()
    }

    pub fn unpack<T: Scalar>(&self, theta: &[T]) -> Result<Weights<T>> {
        self.layout.unpack(theta)
    }

    fn first_activation<T: Scalar>(&self, x: &Mat<T>) -> Mat<T> {
        let alpha1 = T::lit(self.spec.alpha1);
        if self.spec.is_dense_only() {
            let inv_alpha2 = T::lit(1.0 / self.spec.alpha2);
            x.map(|v| alpha1 * (v * inv_alpha2).tanh())
        } else {
            x.map(|v| alpha1 * v.tanh())
        }
    }

    pub fn forward<T: Scalar>(&self, theta: &[T], x: &Mat<T>) -> Result<ForwardTrace<T>> {
        let weights = self.layout.unpack(theta)?;
        self.forward_with(theta, &weights, x)
    }

    /// Forward pass reusing already unpacked weights.
    pub fn forward_with<T: Scalar>(
        &self,
        theta: &[T],
        weights: &Weights<T>,
        x: &Mat<T>,
    ) -> Result<ForwardTrace<T>> {
        if x.shape() != (self.spec.input_rows, self.spec.input_cols) {
            return Err(Error::Network {
                stage: "input",
                layer: 0,
                detail: format!(
                    "input matrix is {:?}, architecture expects {}x{}",
                    x.shape(),
                    self.spec.input_rows,
                    self.spec.input_cols
                ),
            });
        }
        let kc = self.spec.conv_layers.len();
        let mut conv_inputs = Vec::with_capacity(kc.max(1));
        let mut conv_outputs = Vec::with_capacity(kc);
        conv_inputs.push(self.first_activation(x));
        for j in 0..kc {
            let out = cnn_operator(&conv_inputs[j], &weights.filters[j], &weights.biases[j])
                .map_err(|e| Error::Network {
                    stage: "conv",
                    layer: j,
                    detail: e.to_string(),
                })?;
            if j + 1 < kc {
                conv_inputs.push(out.map(T::tanh));
            }
            conv_outputs.push(out);
        }

        let flattened = conv_outputs.last().unwrap_or(&conv_inputs[0]);
        let mut concat = flattened.transpose().vec_rowmajor();
        concat.push(T::one());

        let kf = weights.fc.len();
        let mut fc_inputs = Vec::with_capacity(kf);
        let mut fc_outputs: Vec<Vec<T>> = Vec::with_capacity(kf);
        fc_inputs.push(concat.clone());
        for (j, v) in weights.fc.iter().enumerate() {
            let out = v.tr_mul_vec(&fc_inputs[j]).map_err(|e| Error::Network {
                stage: "fc",
                layer: j,
                detail: e.to_string(),
            })?;
            if j + 1 < kf {
                let mut next: Vec<T> = out.iter().map(|v| v.tanh()).collect();
                next.push(T::one());
                fc_inputs.push(next);
            }
            fc_outputs.push(out);
        }

        Ok(ForwardTrace {
            input: x.clone(),
            conv_inputs,
            conv_outputs,
            concat,
            fc_inputs,
            fc_outputs,
            theta: theta.to_vec(),
        })
    }

    /// Just the output `Φ(X; θ)`.
    pub fn output<T: Scalar>(&self, theta: &[T], x: &Mat<T>) -> Result<Vec<T>> {
        Ok(self.forward(theta, x)?.output().to_vec())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::tests::cnn1;
    use crate::network::ConvLayerSpec;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn m(rows: &[&[f64]]) -> Mat<f64> {
        Mat::from_rows(rows).unwrap()
    }

    #[test]
    fn operator_sums_each_window() {
        let x = Mat::from_fn(3, 2, |_, _| 1.0);
        let w = Mat::from_fn(2, 2, |_, _| 1.0);
        assert_eq!(cnn_operator(&x, &[w], &[0.0]).unwrap(), m(&[&[4.0], &[4.0]]));

        let x = m(&[&[1., 0.], &[0., 1.], &[1., 0.]]);
        let w = m(&[&[1., 0.], &[0., 1.]]);
        assert_eq!(cnn_operator(&x, &[w], &[0.0]).unwrap(), m(&[&[2.0], &[0.0]]));
    }

    #[test]
    fn operator_with_zero_filters_returns_biases() {
        let x = Mat::from_fn(5, 3, |i, j| (i * 3 + j) as f64 - 4.0);
        let zeros = vec![Mat::zeros(2, 3); 3];
        let out = cnn_operator(&x, &zeros, &[1.5, -2.0, 0.25]).unwrap();
        assert_eq!(out.shape(), (4, 3));
        for i in 0..4 {
            assert_eq!(out.row(i), &[1.5, -2.0, 0.25]);
        }
    }

    #[test]
    fn operator_shape_errors() {
        let x = Mat::<f64>::zeros(3, 2);
        assert!(cnn_operator(&x, &[Mat::zeros(2, 3)], &[0.0]).is_err());
        assert!(cnn_operator(&x, &[Mat::zeros(4, 2)], &[0.0]).is_err());
        assert!(cnn_operator(&x, &[Mat::zeros(2, 2)], &[0.0, 1.0]).is_err());
    }

    #[test]
    fn zero_weights_give_zero_output() {
        let net = Network::new(cnn1()).unwrap();
        let x = Mat::from_fn(10, 6, |i, j| 0.01 * (i as f64 - j as f64));
        let out = net.output(&vec![0.0; 238], &x).unwrap();
        assert_eq!(out, vec![0.0, 0.0]);
    }

    #[test]
    fn dense_only_bias_propagates_through_constant_one() {
        let spec = NetworkSpec {
            input_rows: 1,
            conv_layers: vec![],
            fc_widths: vec![4, 2],
            ..cnn1()
        };
        let net = Network::new(spec).unwrap();
        let mut weights = net.unpack(&vec![0.0; net.weight_count()]).unwrap();
        let last = weights.fc.last_mut().unwrap();
        let bias_row = last.rows() - 1;
        last[(bias_row, 0)] = 3.0;
        last[(bias_row, 1)] = -1.25;
        let theta = net.layout().pack(&weights).unwrap();
        let x = Mat::row_vector(&[0.01, 0.02, -0.03, 0.0, 0.5, 0.1]);
        assert_eq!(net.output(&theta, &x).unwrap(), vec![3.0, -1.25]);
    }

    #[test]
    fn dense_only_input_is_scaled_tanh_of_unscaled_sample() {
        let spec = NetworkSpec {
            input_rows: 1,
            conv_layers: vec![],
            fc_widths: vec![2],
            ..cnn1()
        };
        let net = Network::new(spec).unwrap();
        let x = Mat::row_vector(&[0.01, -0.02, 0.0, 0.005, 0.003, 0.5]);
        let trace = net.forward(&vec![0.0; net.weight_count()], &x).unwrap();
        let expected: Vec<f64> = x
            .as_slice()
            .iter()
            .map(|v: &f64| 100.0 * (v / 0.01).tanh())
            .chain([1.0])
            .collect();
        assert_eq!(trace.concat, expected);
    }

    #[test]
    fn cnn1_trace_shapes_and_output_bound() {
        let net = Network::new(cnn1()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let theta: Vec<f64> = (0..238).map(|_| rng.gen_range(-0.1..0.1)).collect();
        let x = Mat::from_fn(10, 6, |_, _| rng.gen_range(-0.05..0.05));
        let trace = net.forward(&theta, &x).unwrap();
        assert_eq!(trace.conv_outputs[0].shape(), (6, 2));
        assert_eq!(trace.conv_inputs[1].shape(), (6, 2));
        assert_eq!(trace.conv_outputs[1].shape(), (4, 2));
        assert_eq!(trace.concat.len(), 9);
        assert_eq!(trace.fc_inputs.len(), 3);
        assert!(trace.fc_inputs[1..].iter().all(|v| v.len() == 9));
        let out = trace.output();
        assert_eq!(out.len(), 2);
        // hidden activations lie in [-1, 1] with an appended 1, so each
        // output is bounded by the column 1-norm of the last matrix
        let w = net.unpack(&theta).unwrap();
        let v_last = w.fc.last().unwrap();
        for (i, o) in out.iter().enumerate() {
            let bound: f64 = v_last.column(i).iter().map(|v| v.abs()).sum();
            assert!(o.is_finite() && o.abs() <= bound, "{o} vs {bound}");
        }
        // first conv layer is bounded by α₁·p·m·max|W| + max|B|
        let max_w = w.filters[0].iter().map(Mat::max_abs).fold(0.0, f64::max);
        let max_b = w.biases[0].iter().fold(0.0f64, |a, b| a.max(b.abs()));
        assert!(trace.conv_outputs[0].max_abs() <= 100.0 * 30.0 * max_w + max_b);
        // deterministic
        assert_eq!(net.forward(&theta, &x).unwrap(), trace);
    }

    #[test]
    fn concat_flattens_the_transpose() {
        // one conv layer producing a 2x2 output; concat must be column-major
        let spec = NetworkSpec {
            input_rows: 3,
            input_cols: 1,
            conv_layers: vec![ConvLayerSpec::new(2, 1, 2)],
            fc_widths: vec![1],
            alpha1: 1.0,
            alpha2: 1.0,
            activation: Default::default(),
        };
        let net = Network::new(spec).unwrap();
        let mut w = net.unpack(&vec![0.0; net.weight_count()]).unwrap();
        w.biases[0] = vec![1.0, 2.0];
        w.filters[0][0] = Mat::column_vector(&[1.0, 0.0]);
        let theta = net.layout().pack(&w).unwrap();
        let x = Mat::column_vector(&[0.1, 0.2, 0.3]);
        let t = net.forward(&theta, &x).unwrap();
        let out = &t.conv_outputs[0];
        assert_eq!(
            t.concat,
            vec![out[(0, 0)], out[(1, 0)], out[(0, 1)], out[(1, 1)], 1.0]
        );
    }

    #[test]
    fn rejects_mismatched_input() {
        let net = Network::new(cnn1()).unwrap();
        let err = net.forward(&vec![0.0; 238], &Mat::zeros(9, 6));
        assert!(matches!(err, Err(Error::Network { stage: "input", .. })));
        assert!(matches!(
            net.forward(&vec![0.0; 237], &Mat::zeros(10, 6)),
            Err(Error::Layout { .. })
        ));
    }
}
