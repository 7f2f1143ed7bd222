/// `out = a · b` with `a: m×k`, `b: k×n`, all row-major.
///
/// Every output element is accumulated from `0.0` over `k` in ascending
/// order. Row blocking changes only which elements share a pass over `b`,
/// never the per-element order, so results do not depend on `m`.
pub fn matmul_into(out: &mut [f64], a: &[f64], b: &[f64], m: usize, k: usize, n: usize) {
    assert!(a.len() >= m * k && b.len() >= k * n && out.len() >= m * n);
    let out = &mut out[..m * n];
    out.fill(0.0);
    if n == 0 {
        return;
    }
    let mut rows = out.chunks_exact_mut(n).enumerate();
    loop {
        let Some((i0, o0)) = rows.next() else { break };
        let Some((_, o1)) = rows.next() else {
            axpy_rows1(o0, &a[i0 * k..(i0 + 1) * k], b, n);
            break;
        };
        let Some((_, o2)) = rows.next() else {
            axpy_rows1(o0, &a[i0 * k..(i0 + 1) * k], b, n);
            axpy_rows1(o1, &a[(i0 + 1) * k..(i0 + 2) * k], b, n);
            break;
        };
        let Some((_, o3)) = rows.next() else {
            axpy_rows1(o0, &a[i0 * k..(i0 + 1) * k], b, n);
            axpy_rows1(o1, &a[(i0 + 1) * k..(i0 + 2) * k], b, n);
            axpy_rows1(o2, &a[(i0 + 2) * k..(i0 + 3) * k], b, n);
            break;
        };
        let a0 = &a[i0 * k..(i0 + 1) * k];
        let a1 = &a[(i0 + 1) * k..(i0 + 2) * k];
        let a2 = &a[(i0 + 2) * k..(i0 + 3) * k];
        let a3 = &a[(i0 + 3) * k..(i0 + 4) * k];
        for (kk, brow) in b.chunks_exact(n).take(k).enumerate() {
            let (w0, w1, w2, w3) = (a0[kk], a1[kk], a2[kk], a3[kk]);
            for ((((x0, x1), x2), x3), &bv) in o0
                .iter_mut()
                .zip(o1.iter_mut())
                .zip(o2.iter_mut())
                .zip(o3.iter_mut())
                .zip(brow)
            {
                *x0 += w0 * bv;
                *x1 += w1 * bv;
                *x2 += w2 * bv;
                *x3 += w3 * bv;
            }
        }
    }
}

#[inline]
fn axpy_rows1(o: &mut [f64], arow: &[f64], b: &[f64], n: usize) {
    for (&w, brow) in arow.iter().zip(b.chunks_exact(n)) {
        for (x, &bv) in o.iter_mut().zip(brow) {
            *x += w * bv;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                let mut acc = 0.0;
                for kk in 0..k {
                    acc += a[i * k + kk] * b[kk * n + j];
                }
                out[i * n + j] = acc;
            }
        }
        out
    }

    #[test]
    fn matches_naive_bit_exact_for_all_row_remainders() {
        for m in 1..=9 {
            let (k, n) = (7, 5);
            let a: Vec<f64> = (0..m * k).map(|i| ((i * 37 % 11) as f64 - 5.0) * 0.31).collect();
            let b: Vec<f64> = (0..k * n).map(|i| ((i * 17 % 13) as f64 - 6.0) * 0.17).collect();
            let mut out = vec![0.0; m * n];
            matmul_into(&mut out, &a, &b, m, k, n);
            assert_eq!(out, naive(&a, &b, m, k, n), "m={m}");
        }
    }
}
