use std::collections::VecDeque;

use crate::error::{shape, Error, Result};
use crate::mat::Mat;
use crate::scalar::Scalar;

use super::NetworkSpec;

/// Ring buffer of stacked samples `ξ = α₂ [e; x; u]`, one per simulator
/// step.
///
/// Samples are assumed to arrive on a uniform grid with spacing
/// `sample_period`; lookups snap to the nearest grid point. Times before
/// the first recorded sample read as zeros.
#[derive(Clone, Debug)]
pub struct HistoryBuffer<T> {
    width: usize,
    sample_period: f64,
    capacity: usize,
    samples: VecDeque<(f64, Vec<T>)>,
    evicted: bool,
}

impl<T: Scalar> HistoryBuffer<T> {
    pub fn new(width: usize, sample_period: f64, capacity: usize) -> Result<Self> {
        if width == 0 || capacity == 0 {
            return Err(Error::Config("history buffer needs positive width and capacity".into()));
        }
        if !(sample_period > 0.0 && sample_period.is_finite()) {
            return Err(Error::Config(format!("invalid sample period {sample_period}")));
        }
        Ok(Self {
            width,
            sample_period,
            capacity,
            samples: VecDeque::with_capacity(capacity),
            evicted: false,
        })
    }

    /// Buffer sized to cover `n₀` rows spaced `stacking_time` apart.
    pub fn for_spec(spec: &NetworkSpec, sample_period: f64, stacking_time: f64) -> Result<Self> {
        let stride = stride(sample_period, stacking_time)?;
        Self::new(
            spec.input_cols,
            sample_period,
            (spec.input_rows - 1) * stride + 1,
        )
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn latest_time(&self) -> Option<f64> {
        self.samples.back().map(|s| s.0)
    }

    pub fn push(&mut self, t: f64, sample: Vec<T>) -> Result<()> {
        if sample.len() != self.width {
            return Err(shape(
                "HistoryBuffer::push",
                format!("sample of length {} into width {}", sample.len(), self.width),
            ));
        }
        if let Some(last) = self.latest_time() {
            if t <= last {
                return Err(Error::Config(format!(
                    "history samples must advance in time ({t} after {last})"
                )));
            }
        }
        if self.samples.len() == self.capacity {
            self.samples.pop_front();
            self.evicted = true;
        }
        self.samples.push_back((t, sample));
        Ok(())
    }

    /// Sample recorded nearest to `target`; `None` before the first sample.
    pub fn sample_near(&self, target: f64) -> Result<Option<&[T]>> {
        let Some(&(latest, _)) = self.samples.back() else {
            return Ok(None);
        };
        let back = ((latest - target) / self.sample_period).round();
        if back < 0.0 {
            return Err(Error::Config(format!(
                "history requested at t = {target} beyond latest sample {latest}"
            )));
        }
        let back = back as usize;
        if back < self.samples.len() {
            let (_, s) = &self.samples[self.samples.len() - 1 - back];
            Ok(Some(s.as_slice()))
        } else if self.evicted {
            Err(Error::Config(format!(
                "history at t = {target} was evicted (capacity {})",
                self.capacity
            )))
        } else {
            Ok(None)
        }
    }

    /// `X(t) = [ξ(t), ξ(t - T_s), …, ξ(t - (n₀-1)T_s)]ᵀ`.
    pub fn input_matrix(&self, t: f64, spec: &NetworkSpec, stacking_time: f64) -> Result<Mat<T>> {
        if spec.input_cols != self.width {
            return Err(Error::Config(format!(
                "architecture expects samples of length {}, buffer holds {}",
                spec.input_cols, self.width
            )));
        }
        let mut x = Mat::zeros(spec.input_rows, spec.input_cols);
        for k in 0..spec.input_rows {
            if let Some(s) = self.sample_near(t - k as f64 * stacking_time)? {
                for (j, &v) in s.iter().enumerate() {
                    x[(k, j)] = v;
                }
            }
        }
        Ok(x)
    }
}

/// Number of simulator steps between stacked rows; `stacking_time` must be
/// an integer multiple of `sample_period`.
pub fn stride(sample_period: f64, stacking_time: f64) -> Result<usize> {
    if !(sample_period > 0.0) || !(stacking_time > 0.0) {
        return Err(Error::Config(format!(
            "stacking time {stacking_time} and step {sample_period} must be positive"
        )));
    }
    let ratio = stacking_time / sample_period;
    let rounded = ratio.round();
    if rounded < 1.0 || (ratio - rounded).abs() > 1e-9 * ratio.max(1.0) {
        return Err(Error::Config(format!(
            "stacking time {stacking_time} is not an integer multiple of the step {sample_period}"
        )));
    }
    Ok(rounded as usize)
}

/// `ξ = α₂ [e; x; u]`.
pub fn stacked_sample<T: Scalar>(e: &[T], x: &[T], u: &[T], alpha2: f64) -> Vec<T> {
    let a = T::lit(alpha2);
    e.iter().chain(x).chain(u).map(|&v| a * v).collect()
}
