//! Direct (tape-free) versions of the primitive layers.

use super::array::{Array2, Array3};
use crate::error::{dim_err, Result};

/// Clamp applied to probabilities before taking logs in [`bce`].
pub const BCE_EPS: f64 = 1e-7;

/// Non-causal 1-D convolution with centered zero padding.
///
/// `output[l][o] = bias[o] + sum_{k,c} input[l + k - (K-1)/2][c] * kernel[k][c][o]`
pub fn conv1d(input: &Array2, kernel: &Array3, bias: &[f64]) -> Result<Array2> {
    if kernel.k.is_multiple_of(2) {
        return dim_err(format!("kernel width {} must be odd", kernel.k));
    }
    if input.cols() != kernel.cin {
        return dim_err(format!(
            "conv1d: input has {} channels, kernel expects {}",
            input.cols(),
            kernel.cin
        ));
    }
    if bias.len() != kernel.cout {
        return dim_err(format!(
            "conv1d: bias {} != {} outputs",
            bias.len(),
            kernel.cout
        ));
    }
    let unfolded = super::tape::unfold_value(input, kernel.k)?;
    let mut out = unfolded.matmul(&kernel.to_matrix())?;
    for r in 0..out.rows() {
        for (o, b) in out.row_mut(r).iter_mut().zip(bias) {
            *o += b;
        }
    }
    Ok(out)
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(logits: &Array2) -> Array2 {
    let mut out = logits.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            z += *v;
        }
        for v in row.iter_mut() {
            *v /= z;
        }
    }
    out
}

/// Binary cross entropy of a single prediction against a 0/1 target.
pub fn bce(prediction: f64, target: f64) -> f64 {
    let p = prediction.clamp(BCE_EPS, 1.0 - BCE_EPS);
    -(target * p.ln() + (1.0 - target) * (1.0 - p).ln())
}

/// Shannon entropy (nats) of a probability vector; `0 ln 0 = 0`.
pub fn entropy(p: &[f64]) -> f64 {
    p.iter().filter(|&&x| x > 0.0).map(|&x| -x * x.ln()).sum()
}
