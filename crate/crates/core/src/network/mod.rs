//! The convolutional network that approximates the unknown lumped term of
//! the desired control policy.
//!
//! Data flows as
//!
//! ```text
//! X ─ α₁tanh ─▶ conv₀ ─ tanh ─▶ conv₁ ─ … ─▶ conv_kc ─ concat [vec(Φᵀ); 1]
//!   ─▶ V₀ᵀ(·) ─ [tanh; 1] ─▶ V₁ᵀ(·) ─ … ─▶ V_kfᵀ(·) = Φ
//! ```
//!
//! Every conv filter spans the full width of its input (stride 1, no
//! padding), so a layer with `q` filters of height `p` maps `n × m` to
//! `(n - p + 1) × q`. Biases of the fully connected layers live in the last
//! row of each `V` and multiply the constant 1 appended to the layer input.
//!
//! With no conv layers the network degenerates to a plain fully connected
//! net on `α₁ tanh(X / α₂)`.

mod forward;
mod input;
mod layout;

pub use forward::{cnn_operator, ForwardTrace, Network};
pub use input::{stacked_sample, stride, HistoryBuffer};
pub use layout::{Segment, WeightLayout, Weights};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Shape of one convolutional layer: `filter_count` filters of
/// `filter_rows × filter_cols`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvLayerSpec {
    pub filter_rows: usize,
    pub filter_cols: usize,
    pub filter_count: usize,
}

impl ConvLayerSpec {
    pub const fn new(filter_rows: usize, filter_cols: usize, filter_count: usize) -> Self {
        Self {
            filter_rows,
            filter_cols,
            filter_count,
        }
    }
}

/// Hidden-layer nonlinearity. Only `tanh` is provided.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Tanh,
}

/// Architecture description.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    /// `n₀`: number of stacked samples in the input matrix.
    pub input_rows: usize,
    /// `m₀`: length of one sample.
    pub input_cols: usize,
    pub conv_layers: Vec<ConvLayerSpec>,
    /// Widths `l₁ ..= l_{kf+1}`; the last entry is the output dimension.
    pub fc_widths: Vec<usize>,
    /// Gain of the bounded first activation `α₁ tanh(·)`.
    pub alpha1: f64,
    /// Input scaling applied to every recorded sample.
    pub alpha2: f64,
    #[serde(default)]
    pub activation: Activation,
}

/// Input/output dimensions of one conv layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvDims {
    pub in_rows: usize,
    pub in_cols: usize,
    pub filter_rows: usize,
    pub filter_count: usize,
}

impl ConvDims {
    pub fn out_rows(&self) -> usize {
        self.in_rows - self.filter_rows + 1
    }

    pub fn out_cols(&self) -> usize {
        self.filter_count
    }
}

/// Resolved dimension chain.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Dims {
    pub conv: Vec<ConvDims>,
    /// Rows and columns of the matrix flattened by the concatenate layer.
    pub concat_rows: usize,
    pub concat_cols: usize,
    /// `(l_j, l_{j+1})` for every fully connected layer; the input width
    /// excludes the appended 1.
    pub fc: Vec<(usize, usize)>,
}

impl Dims {
    /// Length of the concatenate layer without the trailing 1 (`l₀`).
    pub fn concat_len(&self) -> usize {
        self.concat_rows * self.concat_cols
    }

    pub fn output_len(&self) -> usize {
        self.fc.last().map_or(0, |&(_, o)| o)
    }
}

impl NetworkSpec {
    pub fn output_len(&self) -> usize {
        self.fc_widths.last().copied().unwrap_or(0)
    }

    pub fn is_dense_only(&self) -> bool {
        self.conv_layers.is_empty()
    }

    /// Walks the dimension chain, reporting the first layer that does not fit.
    pub fn dims(&self) -> Result<Dims> {
        if self.input_rows == 0 || self.input_cols == 0 {
            return Err(Error::Network {
                stage: "input",
                layer: 0,
                detail: format!("input matrix {}x{} is empty", self.input_rows, self.input_cols),
            });
        }
        if !(self.alpha1 > 0.0 && self.alpha1.is_finite()) {
            return Err(Error::Config(format!("alpha1 must be positive, got {}", self.alpha1)));
        }
        if !(self.alpha2 > 0.0 && self.alpha2.is_finite()) {
            return Err(Error::Config(format!("alpha2 must be positive, got {}", self.alpha2)));
        }
        let (mut rows, mut cols) = (self.input_rows, self.input_cols);
        let mut conv = Vec::with_capacity(self.conv_layers.len());
        for (j, layer) in self.conv_layers.iter().enumerate() {
            let fail = |detail: String| Error::Network {
                stage: "conv",
                layer: j,
                detail,
            };
            if layer.filter_rows == 0 || layer.filter_count == 0 {
                return Err(fail(format!("degenerate filter set {layer:?}")));
            }
            if layer.filter_cols != cols {
                return Err(fail(format!(
                    "filter width {} must equal input width {cols}",
                    layer.filter_cols
                )));
            }
            if layer.filter_rows > rows {
                return Err(fail(format!(
                    "filter height {} exceeds input height {rows}",
                    layer.filter_rows
                )));
            }
            let d = ConvDims {
                in_rows: rows,
                in_cols: cols,
                filter_rows: layer.filter_rows,
                filter_count: layer.filter_count,
            };
            rows = d.out_rows();
            cols = d.out_cols();
            conv.push(d);
        }
        if self.fc_widths.is_empty() {
            return Err(Error::Network {
                stage: "fc",
                layer: 0,
                detail: "at least one fully connected layer is required".into(),
            });
        }
        let mut fc = Vec::with_capacity(self.fc_widths.len());
        let mut width = rows * cols;
        for (j, &next) in self.fc_widths.iter().enumerate() {
            if next == 0 {
                return Err(Error::Network {
                    stage: "fc",
                    layer: j,
                    detail: "zero-width layer".into(),
                });
            }
            fc.push((width, next));
            width = next;
        }
        Ok(Dims {
            conv,
            concat_rows: rows,
            concat_cols: cols,
            fc,
        })
    }

    /// Number of trainable weights,
    /// `Σ (l_j + 1) l_{j+1} + Σ (p_j m_j + 1) q_j`.
    pub fn weight_count(&self) -> Result<usize> {
        let dims = self.dims()?;
        let fc: usize = dims.fc.iter().map(|&(i, o)| (i + 1) * o).sum();
        let conv: usize = self
            .conv_layers
            .iter()
            .map(|l| (l.filter_rows * l.filter_cols + 1) * l.filter_count)
            .sum();
        Ok(fc + conv)
    }
}
