//! Row-major dense kernels used by the toy network.

use crate::scalar::Scalar;

/// `out[r x c] = a[r x n] * b[c x n]^T`.
pub(crate) fn matmul_nt<T: Scalar>(a: &[T], b: &[T], r: usize, n: usize, c: usize, out: &mut [T]) {
    debug_assert_eq!(a.len(), r * n);
    debug_assert_eq!(b.len(), c * n);
    for i in 0..r {
        let ai = &a[i * n..(i + 1) * n];
        for j in 0..c {
            let bj = &b[j * n..(j + 1) * n];
            let mut acc = T::zero();
            for (&x, &y) in ai.iter().zip(bj) {
                acc += x * y;
            }
            out[i * c + j] = acc;
        }
    }
}

/// `out[r x c] = a[r x n] * b[n x c]`.
pub(crate) fn matmul_nn<T: Scalar>(a: &[T], b: &[T], r: usize, n: usize, c: usize, out: &mut [T]) {
    debug_assert_eq!(a.len(), r * n);
    debug_assert_eq!(b.len(), n * c);
    out[..r * c].iter_mut().for_each(|x| *x = T::zero());
    for i in 0..r {
        let oi = &mut out[i * c..(i + 1) * c];
        for k in 0..n {
            let aik = a[i * n + k];
            if aik == T::zero() {
                continue;
            }
            for (o, &bkj) in oi.iter_mut().zip(&b[k * c..(k + 1) * c]) {
                *o += aik * bkj;
            }
        }
    }
}

/// `out[r x c] += a[n x r]^T * b[n x c]`.
pub(crate) fn matmul_tn_acc<T: Scalar>(a: &[T], b: &[T], n: usize, r: usize, c: usize, out: &mut [T]) {
    debug_assert_eq!(a.len(), n * r);
    debug_assert_eq!(b.len(), n * c);
    for k in 0..n {
        let bk = &b[k * c..(k + 1) * c];
        for i in 0..r {
            let aki = a[k * r + i];
            if aki == T::zero() {
                continue;
            }
            for (o, &x) in out[i * c..(i + 1) * c].iter_mut().zip(bk) {
                *o += aki * x;
            }
        }
    }
}
