//! The minimal differentiable operator set: convolution, transposed
//! convolution, bicubic rescaling, softmax, elementwise ops, patch
//! extraction and a fused position-attention kernel.
//!
//! Every operator comes as a pure forward function plus an explicit backward
//! companion; the [`crate::graph`] tape wires them together.

mod attention_core;
mod conv;
mod patches;
mod pointwise;
mod resize;

pub use attention_core::{attention_core, attention_core_backward};
pub use conv::{
    conv2d, conv2d_backward, conv2d_out_extent, conv_transpose2d, conv_transpose2d_backward,
};
pub use patches::{patch_bank, patch_bank_backward};
pub use pointwise::{
    add, concat_batch, concat_channels, div_bcast, div_bcast_backward, l1_loss, l1_loss_backward,
    relu, relu_backward, scale, slice_batch, slice_channels, softmax, softmax_backward, sub,
    sum_all,
};
pub use resize::{bicubic_out_extent, bicubic_resize, bicubic_resize_backward};

use crate::tensor::Elem;

/// Row-major GEMM: C = alpha * A(m×k) * B(k×n) + beta * C.
///
/// `a_trans` / `b_trans` mean the buffer holds the transpose of the logical
/// operand, so no copies are ever made for transposed views.
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: Elem,
    a: &[Elem],
    a_trans: bool,
    b: &[Elem],
    b_trans: bool,
    beta: Elem,
    c: &mut [Elem],
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    let (rsa, csa) = if a_trans {
        (1isize, m as isize)
    } else {
        (k as isize, 1isize)
    };
    let (rsb, csb) = if b_trans {
        (1isize, k as isize)
    } else {
        (n as isize, 1isize)
    };
    gemm_strided(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c);
}

/// GEMM with caller-supplied strides; C is row-major (m×n). The caller must
/// guarantee every strided access stays inside the slices.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm_strided(
    m: usize,
    k: usize,
    n: usize,
    alpha: Elem,
    a: &[Elem],
    rsa: isize,
    csa: isize,
    b: &[Elem],
    rsb: isize,
    csb: isize,
    beta: Elem,
    c: &mut [Elem],
) {
    #[cfg(not(feature = "f64"))]
    use matrixmultiply::sgemm as mm;
    #[cfg(feature = "f64")]
    use matrixmultiply::dgemm as mm;
    unsafe {
        mm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gemm_matches_hand_product() {
        // A = [[1,2],[3,4]], B = [[5,6],[7,8]]
        let a = [1.0, 2.0, 3.0, 4.0];
        let b = [5.0, 6.0, 7.0, 8.0];
        let mut c = [0.0; 4];
        gemm(2, 2, 2, 1.0, &a, false, &b, false, 0.0, &mut c);
        assert_eq!(c, [19.0, 22.0, 43.0, 50.0]);
    }

    #[test]
    fn gemm_transposed_views() {
        // Same product expressed through transposed buffers.
        let a_t = [1.0, 3.0, 2.0, 4.0]; // (A^T) row-major
        let b_t = [5.0, 7.0, 6.0, 8.0];
        let mut c = [0.0; 4];
        gemm(2, 2, 2, 1.0, &a_t, true, &b_t, true, 0.0, &mut c);
        assert_eq!(c, [19.0, 22.0, 43.0, 50.0]);
    }

    #[test]
    fn gemm_accumulates_with_beta() {
        let a = [1.0, 0.0, 0.0, 1.0];
        let b = [1.0, 2.0, 3.0, 4.0];
        let mut c = [10.0, 10.0, 10.0, 10.0];
        gemm(2, 2, 2, 1.0, &a, false, &b, false, 1.0, &mut c);
        assert_eq!(c, [11.0, 12.0, 13.0, 14.0]);
    }
}
