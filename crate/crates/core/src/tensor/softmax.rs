use super::Matrix;

/// Numerically stable softmax over one row; `-∞` entries get weight 0.
///
/// The exponentials are summed left to right.
pub fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// Lower-triangular (inclusive) ones: row `t` may see columns `0..=t`.
pub fn causal_mask(n: usize) -> Matrix {
    Matrix::from_fn(n, n, |i, j| if j <= i { 1.0 } else { 0.0 })
}

/// Row softmax with masked positions (mask entry 0) set to `-∞` before
/// normalization.
pub fn masked_softmax(scores: &Matrix, mask: &Matrix) -> Matrix {
    assert_eq!((scores.rows, scores.cols), (mask.rows, mask.cols));
    let mut out = scores.clone();
    for (row, mrow) in out
        .data
        .chunks_exact_mut(scores.cols)
        .zip(mask.data.chunks_exact(mask.cols))
    {
        for (v, &m) in row.iter_mut().zip(mrow) {
            if m == 0.0 {
                *v = f64::NEG_INFINITY;
            }
        }
        softmax_in_place(row);
    }
    out
}
