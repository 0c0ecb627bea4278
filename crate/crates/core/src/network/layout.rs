use crate::error::{Error, Result};
use crate::mat::Mat;
use crate::scalar::Scalar;

use super::{Dims, NetworkSpec};

/// A contiguous block of the weight vector holding one matrix.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Segment {
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
}

impl Segment {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Index table of the flat weight vector `θ = [θ_F; θ_C]`.
///
/// * `θ_F = [vec(V₀ᵀ); …; vec(V_kfᵀ)]`. Each `V_j` is `(l_j + 1) × l_{j+1}`
///   and is stored column by column, so the incoming weights of one neuron
///   (bias last) are contiguous. This is the ordering under which
///   `∂Φ/∂vec(V_j)` has the `I ⊗ φᵀ` block structure.
/// * `θ_C = [vec(W₀⁽¹⁾); …; vec(W₀^(q₀)); vec(W₁⁽¹⁾); …; B₀; …; B_kc]`, filters
///   flattened row by row, then every bias vector.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WeightLayout {
    /// Segment of `V_j` with `rows × cols` the shape of `V_j` itself.
    pub fc: Vec<Segment>,
    /// `filters[j][k]` is filter `k` of conv layer `j`.
    pub filters: Vec<Vec<Segment>>,
    /// Offsets of the bias vectors, one per conv layer.
    pub biases: Vec<Segment>,
    len: usize,
}

impl WeightLayout {
    pub fn new(spec: &NetworkSpec) -> Result<Self> {
        Ok(Self::from_dims(spec, &spec.dims()?))
    }

    pub(crate) fn from_dims(spec: &NetworkSpec, dims: &Dims) -> Self {
        let mut offset = 0;
        let mut take = |rows: usize, cols: usize| {
            let seg = Segment { offset, rows, cols };
            offset += rows * cols;
            seg
        };
        let fc = dims.fc.iter().map(|&(i, o)| take(i + 1, o)).collect();
        let filters = spec
            .conv_layers
            .iter()
            .map(|l| {
                (0..l.filter_count)
                    .map(|_| take(l.filter_rows, l.filter_cols))
                    .collect()
            })
            .collect();
        let biases = spec
            .conv_layers
            .iter()
            .map(|l| take(l.filter_count, 1))
            .collect();
        Self {
            fc,
            filters,
            biases,
            len: offset,
        }
    }

    /// `Ξ`, the total number of weights.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Length of `θ_F`; conv weights start here.
    pub fn fc_len(&self) -> usize {
        self.fc.iter().map(Segment::len).sum()
    }

    pub fn check<T>(&self, theta: &[T]) -> Result<()> {
        if theta.len() != self.len {
            return Err(Error::Layout {
                expected: self.len,
                actual: theta.len(),
            });
        }
        Ok(())
    }

    pub fn unpack<T: Scalar>(&self, theta: &[T]) -> Result<Weights<T>> {
        self.check(theta)?;
        let fc = self
            .fc
            .iter()
            .map(|s| {
                // stored as vec(Vᵀ): read Vᵀ row-major, then transpose
                Mat::new(s.cols, s.rows, theta[s.range()].to_vec()).map(|vt| vt.transpose())
            })
            .collect::<Result<_>>()?;
        let filters = self
            .filters
            .iter()
            .map(|layer| {
                layer
                    .iter()
                    .map(|s| Mat::new(s.rows, s.cols, theta[s.range()].to_vec()))
                    .collect::<Result<_>>()
            })
            .collect::<Result<_>>()?;
        let biases = self.biases.iter().map(|s| theta[s.range()].to_vec()).collect();
        Ok(Weights {
            fc,
            filters,
            biases,
        })
    }

    pub fn pack<T: Scalar>(&self, weights: &Weights<T>) -> Result<Vec<T>> {
        let mut theta = vec![T::zero(); self.len];
        let mismatch = || Error::Layout {
            expected: self.len,
            actual: weights.len(),
        };
        if weights.fc.len() != self.fc.len()
            || weights.filters.len() != self.filters.len()
            || weights.biases.len() != self.biases.len()
        {
            return Err(mismatch());
        }
        for (s, v) in self.fc.iter().zip(&weights.fc) {
            if v.shape() != (s.rows, s.cols) {
                return Err(mismatch());
            }
            theta[s.range()].copy_from_slice(&v.transpose().vec_rowmajor());
        }
        for (segs, layer) in self.filters.iter().zip(&weights.filters) {
            if segs.len() != layer.len() {
                return Err(mismatch());
            }
            for (s, w) in segs.iter().zip(layer) {
                if w.shape() != (s.rows, s.cols) {
                    return Err(mismatch());
                }
                theta[s.range()].copy_from_slice(w.as_slice());
            }
        }
        for (s, b) in self.biases.iter().zip(&weights.biases) {
            if b.len() != s.len() {
                return Err(mismatch());
            }
            theta[s.range()].copy_from_slice(b);
        }
        Ok(theta)
    }
}

/// Weights in matrix form.
#[derive(Clone, Debug, PartialEq)]
pub struct Weights<T> {
    /// `V₀ ..= V_kf`, each `(l_j + 1) × l_{j+1}`.
    pub fc: Vec<Mat<T>>,
    /// Filter sets `Ω₀ ..= Ω_kc`.
    pub filters: Vec<Vec<Mat<T>>>,
    /// Bias vectors `B₀ ..= B_kc`.
    pub biases: Vec<Vec<T>>,
}

impl<T: Scalar> Weights<T> {
    pub fn len(&self) -> usize {
        let fc: usize = self.fc.iter().map(|v| v.rows() * v.cols()).sum();
        let filters: usize = self
            .filters
            .iter()
            .flatten()
            .map(|w| w.rows() * w.cols())
            .sum();
        let biases: usize = self.biases.iter().map(Vec::len).sum();
        fc + filters + biases
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
