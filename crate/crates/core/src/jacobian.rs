//! Closed-form Jacobian `Φ' = ∂Φ/∂θ` of the network output with respect to
//! every weight.
//!
//! The fully connected part is a reverse-ordered product of
//! `V_lᵀ φ'_l` factors times a Kronecker block `I ⊗ φᵀ`. The conv part is
//! backpropagated one output component `Φ_i` at a time: the gradient with
//! respect to the concatenate layer is un-flattened into the shape of the
//! last conv output, then pushed down through each layer by superposing
//! shifted copies of its filters.

use crate::error::{Error, Result};
use crate::mat::{reshape, Mat};
use crate::network::{ForwardTrace, Network, Weights};
use crate::scalar::Scalar;

/// `Φ' ∈ ℝ^{out × Ξ}` with columns in weight-vector order.
#[derive(Clone, Debug, PartialEq)]
pub struct JacobianMatrix<T> {
    matrix: Mat<T>,
}

impl<T: Scalar> JacobianMatrix<T> {
    pub fn matrix(&self) -> &Mat<T> {
        &self.matrix
    }

    pub fn into_matrix(self) -> Mat<T> {
        self.matrix
    }

    pub fn rows(&self) -> usize {
        self.matrix.rows()
    }

    pub fn cols(&self) -> usize {
        self.matrix.cols()
    }

    /// Frobenius norm, an upper bound on the spectral norm.
    pub fn norm(&self) -> T {
        self.matrix.frobenius_norm()
    }

    /// Zero Jacobian, for tests of the adaptation law.
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            matrix: Mat::zeros(rows, cols),
        }
    }

    pub fn from_matrix(matrix: Mat<T>) -> Self {
        Self { matrix }
    }
}

/// Jacobian of the activation `x ↦ [tanh(x); 1]` given its output: an
/// `(l + 1) × l` matrix with `1 - tanh²` on the diagonal and a zero last row.
fn augmented_tanh_jacobian<T: Scalar>(activated: &[T]) -> Mat<T> {
    let l = activated.len() - 1;
    let mut d = Mat::zeros(l + 1, l);
    for (k, &a) in activated[..l].iter().enumerate() {
        d[(k, k)] = T::one() - a * a;
    }
    d
}

/// `chain[j] = ⟲∏_{l=j+1}^{kf} V_lᵀ φ'_l`, i.e. `∂Φ/∂Φ^F_j`.
fn chain_products<T: Scalar>(weights: &Weights<T>, trace: &ForwardTrace<T>) -> Result<Vec<Mat<T>>> {
    let kf = weights.fc.len() - 1;
    let out = weights.fc[kf].cols();
    let mut chain = vec![Mat::identity(out); kf + 1];
    for l in (1..=kf).rev() {
        let factor = weights.fc[l]
            .transpose()
            .matmul(&augmented_tanh_jacobian(&trace.fc_inputs[l]))?;
        chain[l - 1] = chain[l].matmul(&factor)?;
    }
    Ok(chain)
}

fn unpack_checked<T: Scalar>(
    net: &Network,
    trace: &ForwardTrace<T>,
    theta: &[T],
) -> Result<Weights<T>> {
    trace.ensure_matches(theta)?;
    net.unpack(theta)
}

/// `∂Φ/∂vec(V_j)` for every fully connected layer, each `out × (l_j+1) l_{j+1}`.
pub fn fc_jacobians<T: Scalar>(
    net: &Network,
    trace: &ForwardTrace<T>,
    theta: &[T],
) -> Result<Vec<Mat<T>>> {
    let weights = unpack_checked(net, trace, theta)?;
    fc_blocks(&weights, trace)
}

fn fc_blocks<T: Scalar>(weights: &Weights<T>, trace: &ForwardTrace<T>) -> Result<Vec<Mat<T>>> {
    let chain = chain_products(weights, trace)?;
    chain
        .iter()
        .zip(&trace.fc_inputs)
        .zip(&weights.fc)
        .map(|((c, input), v)| {
            let block = Mat::identity(v.cols()).kronecker(&Mat::row_vector(input));
            c.matmul(&block)
        })
        .collect()
}

/// Backward-pass state for the conv layers, one entry per output component.
#[derive(Clone, Debug)]
pub struct BackpropState<T> {
    /// `∂Φ/∂C`, `out × (l₀ + 1)`; the last column belongs to the constant 1.
    pub dphi_dconcat: Mat<T>,
    /// `conv_out[i][j] = ∂Φ_i/∂Φ^C_j`, filled from the last layer down.
    pub conv_out: Vec<Vec<Option<Mat<T>>>>,
    /// `conv_in[i][j] = ∂Φ_i/∂φ^C_j` for `j ≥ 1`.
    pub conv_in: Vec<Vec<Option<Mat<T>>>>,
}

impl<T: Scalar> BackpropState<T> {
    pub fn grad_wrt_output(&self, i: usize, layer: usize) -> Option<&Mat<T>> {
        self.conv_out.get(i)?.get(layer)?.as_ref()
    }

    pub fn grad_wrt_input(&self, i: usize, layer: usize) -> Option<&Mat<T>> {
        self.conv_in.get(i)?.get(layer)?.as_ref()
    }
}

/// Seeds the conv backward pass: `∂Φ/∂C = chain₀ V₀ᵀ`, then for each output
/// `∂Φ_i/∂Φ^C_kc = reshape((∂Φ_i/∂C)_(1:nm), n, m)`.
pub fn conv_backprop_seed<T: Scalar>(
    net: &Network,
    trace: &ForwardTrace<T>,
    theta: &[T],
) -> Result<BackpropState<T>> {
    let weights = unpack_checked(net, trace, theta)?;
    seed(net, &weights, trace)
}

fn seed<T: Scalar>(net: &Network, weights: &Weights<T>, trace: &ForwardTrace<T>) -> Result<BackpropState<T>> {
    let chain = chain_products(weights, trace)?;
    let dphi_dconcat = chain[0].matmul(&weights.fc[0].transpose())?;
    let dims = net.dims();
    let kc = dims.conv.len();
    let out = dphi_dconcat.rows();
    let mut conv_out = vec![vec![None; kc]; out];
    if kc > 0 {
        let nm = dims.concat_len();
        for (i, slot) in conv_out.iter_mut().enumerate() {
            let row = &dphi_dconcat.row(i)[..nm];
            slot[kc - 1] = Some(reshape(row, dims.concat_rows, dims.concat_cols)?);
        }
    }
    Ok(BackpropState {
        dphi_dconcat,
        conv_in: vec![vec![None; kc]; out],
        conv_out,
    })
}

/// Pushes the gradient of output `i` from the output of conv layer `layer`
/// to its input `φ^C_layer`, then through the tanh to `Φ^C_{layer-1}`.
///
/// `layer` must be at least 1; the first layer's input is the fixed
/// `α₁ tanh(X)` and has nothing further upstream.
pub fn conv_layer_backprop<T: Scalar>(
    state: &mut BackpropState<T>,
    net: &Network,
    trace: &ForwardTrace<T>,
    theta: &[T],
    layer: usize,
) -> Result<()> {
    let weights = unpack_checked(net, trace, theta)?;
    for i in 0..state.conv_out.len() {
        backprop_layer(state, &weights, trace, i, layer)?;
    }
    Ok(())
}

fn backprop_layer<T: Scalar>(
    state: &mut BackpropState<T>,
    weights: &Weights<T>,
    trace: &ForwardTrace<T>,
    i: usize,
    layer: usize,
) -> Result<()> {
    if layer == 0 || layer >= weights.filters.len() {
        return Err(Error::Bounds {
            op: "conv_layer_backprop",
            detail: format!("layer {layer} has no upstream conv layer"),
        });
    }
    let upstream = state.conv_out[i][layer]
        .as_ref()
        .ok_or_else(|| Error::Config(format!("layer {layer} gradient not yet computed")))?;
    let activated = &trace.conv_inputs[layer];
    let filters = &weights.filters[layer];
    let p = filters[0].rows();
    let m = activated.cols();

    // ∂Φ_i/∂φ^C = Σ_{l_i, l_j} ∂Φ_i/∂Φ^C(l_i, l_j) · [W^(l_j) shifted down by l_i rows]
    let mut dinput = Mat::zeros(activated.rows(), m);
    for li in 0..upstream.rows() {
        for (lj, w) in filters.iter().enumerate() {
            let g = upstream[(li, lj)];
            for r in 0..p {
                for c in 0..m {
                    dinput[(li + r, c)] += g * w[(r, c)];
                }
            }
        }
    }
    let tanh_deriv = activated.map(|a| T::one() - a * a);
    state.conv_out[i][layer - 1] = Some(dinput.hadamard(&tanh_deriv)?);
    state.conv_in[i][layer] = Some(dinput);
    Ok(())
}

/// Filter and bias gradients of output `i` for conv layer `layer`:
/// `∂Φ_i/∂W^(k) = Σ_{l_i} ∂Φ_i/∂Φ^C(l_i, k) · row_(l_i : l_i+p-1)(φ^C)` and
/// `∂Φ_i/∂B_k = Σ_{l_i} ∂Φ_i/∂Φ^C(l_i, k)`.
pub fn conv_weight_jacobians<T: Scalar>(
    state: &BackpropState<T>,
    trace: &ForwardTrace<T>,
    i: usize,
    layer: usize,
    filter_rows: usize,
) -> Result<(Vec<Mat<T>>, Vec<T>)> {
    let upstream = state
        .grad_wrt_output(i, layer)
        .ok_or_else(|| Error::Config(format!("layer {layer} gradient not yet computed")))?;
    let activated = &trace.conv_inputs[layer];
    let mut filter_grads = Vec::with_capacity(upstream.cols());
    let mut bias_grads = Vec::with_capacity(upstream.cols());
    for k in 0..upstream.cols() {
        let mut grad = Mat::zeros(filter_rows, activated.cols());
        let mut bias = T::zero();
        for li in 1..=upstream.rows() {
            let g = upstream[(li - 1, k)];
            bias += g;
            if g != T::zero() {
                grad = grad.add(&activated.row_slice(li, li + filter_rows - 1)?.scale(g))?;
            }
        }
        filter_grads.push(grad);
        bias_grads.push(bias);
    }
    Ok((filter_grads, bias_grads))
}

/// Assembles `Φ' = [∂Φ/∂θ_F, ∂Φ/∂θ_C]`.
pub fn assemble_full_jacobian<T: Scalar>(
    net: &Network,
    trace: &ForwardTrace<T>,
    theta: &[T],
) -> Result<JacobianMatrix<T>> {
    let weights = unpack_checked(net, trace, theta)?;
    let layout = net.layout();
    let out = net.output_len();
    let mut matrix = Mat::zeros(out, layout.len());

    for (block, seg) in fc_blocks(&weights, trace)?.iter().zip(&layout.fc) {
        if block.shape() != (out, seg.len()) {
            return Err(Error::Layout {
                expected: seg.len(),
                actual: block.cols(),
            });
        }
        for i in 0..out {
            for (c, &v) in block.row(i).iter().enumerate() {
                matrix[(i, seg.offset + c)] = v;
            }
        }
    }

    let kc = net.dims().conv.len();
    if kc > 0 {
        let mut state = seed(net, &weights, trace)?;
        for i in 0..out {
            for layer in (0..kc).rev() {
                let p = net.spec().conv_layers[layer].filter_rows;
                let (filter_grads, bias_grads) = conv_weight_jacobians(&state, trace, i, layer, p)?;
                for (g, seg) in filter_grads.iter().zip(&layout.filters[layer]) {
                    for (c, &v) in g.as_slice().iter().enumerate() {
                        matrix[(i, seg.offset + c)] = v;
                    }
                }
                let seg = &layout.biases[layer];
                for (c, &v) in bias_grads.iter().enumerate() {
                    matrix[(i, seg.offset + c)] = v;
                }
                if layer > 0 {
                    backprop_layer(&mut state, &weights, trace, i, layer)?;
                }
            }
        }
    }
    Ok(JacobianMatrix { matrix })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{Activation, ConvLayerSpec, NetworkSpec};

    fn single_fc(input: usize, out: usize) -> Network {
        // one conv-free layer; alpha values chosen so the concat equals the
        // raw input when it is small
        Network::new(NetworkSpec {
            input_rows: 1,
            input_cols: input,
            conv_layers: vec![],
            fc_widths: vec![out],
            alpha1: 1.0,
            alpha2: 1.0,
            activation: Activation::Tanh,
        })
        .unwrap()
    }

    #[test]
    fn single_layer_gradient_is_the_concat() {
        // Φ = v₁·C₁ + v₂·1 with C₁ = 2 → ∂Φ/∂v = [2, 1]
        let net = single_fc(1, 1);
        let theta = [0.3, -0.7];
        let mut trace = net.forward(&theta, &Mat::row_vector(&[0.0])).unwrap();
        trace.concat = vec![2.0, 1.0];
        trace.fc_inputs[0] = vec![2.0, 1.0];
        let blocks = fc_jacobians(&net, &trace, &theta).unwrap();
        assert_eq!(blocks[0].as_slice(), &[2.0, 1.0]);
    }

    #[test]
    fn zero_downstream_weights_kill_first_layer_gradient() {
        let net = Network::new(NetworkSpec {
            input_rows: 1,
            input_cols: 3,
            conv_layers: vec![],
            fc_widths: vec![4, 2],
            alpha1: 1.0,
            alpha2: 1.0,
            activation: Activation::Tanh,
        })
        .unwrap();
        let mut theta: Vec<f64> = (0..net.weight_count()).map(|k| 0.01 * k as f64).collect();
        for k in net.layout().fc[1].range() {
            theta[k] = 0.0;
        }
        let trace = net.forward(&theta, &Mat::row_vector(&[0.1, -0.2, 0.3])).unwrap();
        let blocks = fc_jacobians(&net, &trace, &theta).unwrap();
        assert!(blocks[0].as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn stale_trace_is_rejected() {
        let net = single_fc(2, 1);
        let theta = [0.1, 0.2, 0.3];
        let trace = net.forward(&theta, &Mat::row_vector(&[0.1, 0.2])).unwrap();
        assert!(matches!(
            assemble_full_jacobian(&net, &trace, &[0.1, 0.2, 0.4]),
            Err(Error::StaleTrace)
        ));
    }

    fn one_conv_net() -> Network {
        // 3x2 input, one layer of a single 2x2 filter, then an fc layer
        Network::new(NetworkSpec {
            input_rows: 3,
            input_cols: 2,
            conv_layers: vec![ConvLayerSpec::new(2, 2, 1)],
            fc_widths: vec![1],
            alpha1: 1.0,
            alpha2: 1.0,
            activation: Activation::Tanh,
        })
        .unwrap()
    }

    fn two_conv_net() -> Network {
        Network::new(NetworkSpec {
            input_rows: 4,
            input_cols: 2,
            conv_layers: vec![ConvLayerSpec::new(2, 2, 1), ConvLayerSpec::new(2, 1, 1)],
            fc_widths: vec![1],
            alpha1: 1.0,
            alpha2: 1.0,
            activation: Activation::Tanh,
        })
        .unwrap()
    }

    #[test]
    fn shifted_filter_superposition_by_hand() {
        // second layer: 3x1 input, one 2x1 filter w = [a; b], upstream all ones
        // over the 2x1 output → ∂Φ/∂φ = [a; a + b; b]
        let net = two_conv_net();
        let mut w = net.unpack(&vec![0.0; net.weight_count()]).unwrap();
        w.filters[1][0] = Mat::column_vector(&[0.5, -2.0]);
        let theta = net.layout().pack(&w).unwrap();
        let trace = net.forward(&theta, &Mat::zeros(4, 2)).unwrap();
        let mut state = conv_backprop_seed(&net, &trace, &theta).unwrap();
        state.conv_out[0][1] = Some(Mat::from_fn(2, 1, |_, _| 1.0));
        conv_layer_backprop(&mut state, &net, &trace, &theta, 1).unwrap();
        assert_eq!(
            state.grad_wrt_input(0, 1).unwrap().as_slice(),
            &[0.5, -1.5, -2.0]
        );
        // zero input → tanh' = 1, so the pre-activation gradient is the same
        assert_eq!(
            state.grad_wrt_output(0, 0).unwrap().as_slice(),
            &[0.5, -1.5, -2.0]
        );
    }

    #[test]
    fn zero_upstream_gives_zero_downstream() {
        let net = two_conv_net();
        let theta: Vec<f64> = (0..net.weight_count()).map(|k| 0.1 * k as f64 - 0.3).collect();
        let trace = net.forward(&theta, &Mat::from_fn(4, 2, |i, j| 0.1 * (i + j) as f64)).unwrap();
        let mut state = conv_backprop_seed(&net, &trace, &theta).unwrap();
        state.conv_out[0][1] = Some(Mat::zeros(2, 1));
        conv_layer_backprop(&mut state, &net, &trace, &theta, 1).unwrap();
        assert_eq!(state.grad_wrt_output(0, 0).unwrap().max_abs(), 0.0);
    }

    #[test]
    fn saturated_units_block_the_gradient() {
        let net = two_conv_net();
        let mut w = net.unpack(&vec![0.0; net.weight_count()]).unwrap();
        w.filters[1][0] = Mat::column_vector(&[1.0, 1.0]);
        w.biases[0] = vec![25.0];
        let theta = net.layout().pack(&w).unwrap();
        let trace = net.forward(&theta, &Mat::zeros(4, 2)).unwrap();
        assert!(trace.conv_outputs[0].as_slice().iter().all(|v: &f64| v.abs() > 20.0));
        let mut state = conv_backprop_seed(&net, &trace, &theta).unwrap();
        state.conv_out[0][1] = Some(Mat::from_fn(2, 1, |_, _| 1.0));
        conv_layer_backprop(&mut state, &net, &trace, &theta, 1).unwrap();
        assert!(state.grad_wrt_output(0, 0).unwrap().max_abs() < 1e-15);
    }

    #[test]
    fn one_hot_upstream_selects_one_window() {
        let net = one_conv_net();
        let theta: Vec<f64> = (0..net.weight_count()).map(|k| 0.05 * k as f64).collect();
        let x = Mat::from_rows(&[&[0.1, 0.2], &[0.3, 0.4], &[0.5, 0.6]]).unwrap();
        let trace = net.forward(&theta, &x).unwrap();
        let mut state = conv_backprop_seed(&net, &trace, &theta).unwrap();
        state.conv_out[0][0] = Some(Mat::column_vector(&[1.0, 0.0]));
        let (fg, bg) = conv_weight_jacobians(&state, &trace, 0, 0, 2).unwrap();
        assert_eq!(fg[0], trace.conv_inputs[0].row_slice(1, 2).unwrap());
        assert_eq!(bg, vec![1.0]);
    }

    #[test]
    fn bias_gradient_counts_windows() {
        let net = one_conv_net();
        let theta = vec![0.0; net.weight_count()];
        let trace = net.forward(&theta, &Mat::from_fn(3, 2, |_, _| 0.2)).unwrap();
        let mut state = conv_backprop_seed(&net, &trace, &theta).unwrap();
        state.conv_out[0][0] = Some(Mat::from_fn(2, 1, |_, _| 1.0));
        let (_, bg) = conv_weight_jacobians(&state, &trace, 0, 0, 2).unwrap();
        assert_eq!(bg, vec![2.0]);
    }

    #[test]
    fn zero_weights_leave_only_last_layer_bias_pattern() {
        let net = Network::new(NetworkSpec {
            input_rows: 10,
            input_cols: 6,
            conv_layers: vec![ConvLayerSpec::new(5, 6, 2), ConvLayerSpec::new(3, 2, 2)],
            fc_widths: vec![8, 8, 2],
            alpha1: 100.0,
            alpha2: 0.01,
            activation: Activation::Tanh,
        })
        .unwrap();
        let theta = vec![0.0; 238];
        let trace = net.forward(&theta, &Mat::from_fn(10, 6, |i, j| 0.001 * (i + j) as f64)).unwrap();
        let jac = assemble_full_jacobian(&net, &trace, &theta).unwrap();
        let seg = net.layout().fc[2];
        let expected = Mat::identity(2).kronecker(&Mat::row_vector(&{
            let mut v = vec![0.0; 8];
            v.push(1.0);
            v
        }));
        for i in 0..2 {
            assert_eq!(&jac.matrix().row(i)[seg.range()], expected.row(i));
            let elsewhere: f64 = jac.matrix().row(i)[..seg.offset].iter().map(|v| v.abs()).sum::<f64>()
                + jac.matrix().row(i)[seg.offset + seg.len()..].iter().map(|v| v.abs()).sum::<f64>();
            assert_eq!(elsewhere, 0.0);
        }
    }

    #[test]
    fn dense_only_has_no_conv_columns() {
        let net = Network::new(NetworkSpec {
            input_rows: 1,
            input_cols: 6,
            conv_layers: vec![],
            fc_widths: vec![8, 8, 8, 4, 2],
            alpha1: 100.0,
            alpha2: 0.01,
            activation: Activation::Tanh,
        })
        .unwrap();
        let theta = vec![0.01; net.weight_count()];
        let trace = net.forward(&theta, &Mat::row_vector(&[0.01; 6])).unwrap();
        let jac = assemble_full_jacobian(&net, &trace, &theta).unwrap();
        assert_eq!(jac.cols(), net.layout().fc_len());
        assert_eq!(jac.cols(), 246);
    }
}
