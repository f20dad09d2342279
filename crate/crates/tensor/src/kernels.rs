//! Flat-slice compute kernels behind the tensor ops.
//!
//! Every reduction runs in ascending index order per output element, so
//! results are bit-identical whether a kernel runs serially or split across
//! threads (threads only partition output elements, never reductions).

use rayon::prelude::*;

use crate::element::Element;

/// Below this many multiply-adds the rayon dispatch overhead dominates.
const PAR_THRESHOLD: usize = 1 << 20;

/// One output row of A·B: out_row += a_row · B. The k loop is unrolled by
/// four, keeping per-element accumulation in ascending-k order.
fn matmul_row<E: Element>(a_row: &[E], b: &[E], n: usize, out_row: &mut [E]) {
    let k = a_row.len();
    let mut kk = 0;
    // mul_add lowers to hardware FMA where available; it is an exact IEEE
    // operation, so results stay deterministic for a given build.
    while kk + 8 <= k {
        let a0 = a_row[kk];
        let a1 = a_row[kk + 1];
        let a2 = a_row[kk + 2];
        let a3 = a_row[kk + 3];
        let a4 = a_row[kk + 4];
        let a5 = a_row[kk + 5];
        let a6 = a_row[kk + 6];
        let a7 = a_row[kk + 7];
        let base = kk * n;
        let rows = &b[base..base + 8 * n];
        for (j, o) in out_row.iter_mut().enumerate() {
            let mut acc = *o;
            acc = a0.mul_add(rows[j], acc);
            acc = a1.mul_add(rows[n + j], acc);
            acc = a2.mul_add(rows[2 * n + j], acc);
            acc = a3.mul_add(rows[3 * n + j], acc);
            acc = a4.mul_add(rows[4 * n + j], acc);
            acc = a5.mul_add(rows[5 * n + j], acc);
            acc = a6.mul_add(rows[6 * n + j], acc);
            acc = a7.mul_add(rows[7 * n + j], acc);
            *o = acc;
        }
        kk += 8;
    }
    while kk + 4 <= k {
        let (a0, a1, a2, a3) = (a_row[kk], a_row[kk + 1], a_row[kk + 2], a_row[kk + 3]);
        let b0 = &b[kk * n..kk * n + n];
        let b1 = &b[(kk + 1) * n..(kk + 1) * n + n];
        let b2 = &b[(kk + 2) * n..(kk + 2) * n + n];
        let b3 = &b[(kk + 3) * n..(kk + 3) * n + n];
        for ((((o, &v0), &v1), &v2), &v3) in
            out_row.iter_mut().zip(b0).zip(b1).zip(b2).zip(b3)
        {
            let mut acc = *o;
            acc = a0.mul_add(v0, acc);
            acc = a1.mul_add(v1, acc);
            acc = a2.mul_add(v2, acc);
            acc = a3.mul_add(v3, acc);
            *o = acc;
        }
        kk += 4;
    }
    while kk < k {
        let aik = a_row[kk];
        let b_row = &b[kk * n..kk * n + n];
        for (o, &bv) in out_row.iter_mut().zip(b_row) {
            *o = *o + aik * bv;
        }
        kk += 1;
    }
}

/// out[M,N] = A[M,K] · B[K,N], row-major.
pub(crate) fn matmul<E: Element>(a: &[E], b: &[E], m: usize, k: usize, n: usize) -> Vec<E> {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    let mut out = vec![E::zero(); m * n];
    let row = |(i, out_row): (usize, &mut [E])| {
        matmul_row(&a[i * k..(i + 1) * k], b, n, out_row);
    };
    if m * k * n >= PAR_THRESHOLD && m > 1 {
        out.par_chunks_mut(n).enumerate().for_each(row);
    } else {
        out.chunks_mut(n).enumerate().for_each(row);
    }
    out
}

/// Serial `matmul` writing into a caller-provided buffer (zeroed here).
/// Used inside loops that already parallelize at a coarser grain.
pub(crate) fn matmul_serial_into<E: Element>(
    a: &[E],
    b: &[E],
    m: usize,
    k: usize,
    n: usize,
    out: &mut [E],
) {
    debug_assert_eq!(out.len(), m * n);
    out.fill(E::zero());
    for (i, out_row) in out.chunks_mut(n).enumerate() {
        matmul_row(&a[i * k..(i + 1) * k], b, n, out_row);
    }
}

/// Run `body` once per image chunk of `buf`, in parallel when there are
/// several images. Chunks are disjoint, so ordering cannot affect results.
pub(crate) fn for_each_image<E: Element>(
    buf: &mut [E],
    chunk: usize,
    body: impl Fn((usize, &mut [E])) + Send + Sync,
) {
    if buf.len() > chunk {
        buf.par_chunks_mut(chunk).enumerate().for_each(body);
    } else {
        buf.chunks_mut(chunk).enumerate().for_each(body);
    }
}

/// Row-major transpose: A[rows, cols] -> [cols, rows].
pub(crate) fn transpose<E: Element>(a: &[E], rows: usize, cols: usize) -> Vec<E> {
    debug_assert_eq!(a.len(), rows * cols);
    let mut out = vec![E::zero(); rows * cols];
    const BLOCK: usize = 32;
    for r0 in (0..rows).step_by(BLOCK) {
        for c0 in (0..cols).step_by(BLOCK) {
            for r in r0..(r0 + BLOCK).min(rows) {
                for c in c0..(c0 + BLOCK).min(cols) {
                    out[c * rows + r] = a[r * cols + c];
                }
            }
        }
    }
    out
}

/// A[M,K] · B[N,K]ᵀ -> [M,N].
pub(crate) fn matmul_nt<E: Element>(a: &[E], b: &[E], m: usize, k: usize, n: usize) -> Vec<E> {
    matmul(a, &transpose(b, n, k), m, k, n)
}

/// Serial `matmul_nt` for use inside image-parallel loops.
pub(crate) fn matmul_nt_serial<E: Element>(
    a: &[E],
    b: &[E],
    m: usize,
    k: usize,
    n: usize,
) -> Vec<E> {
    let bt = transpose(b, n, k);
    let mut out = vec![E::zero(); m * n];
    matmul_serial_into(a, &bt, m, k, n, &mut out);
    out
}

/// Map `body` over image indices, in parallel when there are several.
/// Results come back in image order regardless of scheduling.
pub(crate) fn map_images<T: Send>(
    n: usize,
    body: impl Fn(usize) -> T + Send + Sync,
) -> Vec<T> {
    if n > 1 {
        (0..n).into_par_iter().map(body).collect()
    } else {
        (0..n).map(body).collect()
    }
}

/// A[K,M]ᵀ · B[K,N] -> [M,N].
pub(crate) fn matmul_tn<E: Element>(a: &[E], b: &[E], m: usize, k: usize, n: usize) -> Vec<E> {
    matmul(&transpose(a, k, m), b, m, k, n)
}

/// Number of sliding-window positions along one axis.
#[inline]
pub(crate) fn conv_out_extent(extent: usize, kernel: usize, stride: usize, padding: usize) -> usize {
    (extent + 2 * padding - kernel) / stride + 1
}

/// Unfold one image [C,H,W] into patch columns [C·kh·kw, gh·gw], where
/// (gh, gw) is the sliding-window grid. Out-of-range taps read as zero.
#[allow(clippy::too_many_arguments)]
pub(crate) fn im2col<E: Element>(
    img: &[E],
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    gh: usize,
    gw: usize,
    cols: &mut [E],
) {
    debug_assert_eq!(img.len(), c * h * w);
    debug_assert_eq!(cols.len(), c * kh * kw * gh * gw);
    let grid = gh * gw;
    for ch in 0..c {
        let plane = &img[ch * h * w..(ch + 1) * h * w];
        for di in 0..kh {
            for dj in 0..kw {
                let row = &mut cols[((ch * kh + di) * kw + dj) * grid..][..grid];
                for gi in 0..gh {
                    let ii = (gi * stride + di) as isize - pad as isize;
                    let dst = &mut row[gi * gw..gi * gw + gw];
                    if ii < 0 || ii >= h as isize {
                        dst.fill(E::zero());
                        continue;
                    }
                    let src = &plane[ii as usize * w..(ii as usize + 1) * w];
                    for (gj, d) in dst.iter_mut().enumerate() {
                        let jj = (gj * stride + dj) as isize - pad as isize;
                        *d = if jj < 0 || jj >= w as isize {
                            E::zero()
                        } else {
                            src[jj as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of `im2col`: scatter-add patch columns [C·kh·kw, gh·gw] back into
/// an image [C,H,W]. Used for convolution input gradients and for the
/// transposed-convolution forward pass.
#[allow(clippy::too_many_arguments)]
pub(crate) fn col2im_add<E: Element>(
    cols: &[E],
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    gh: usize,
    gw: usize,
    img: &mut [E],
) {
    debug_assert_eq!(img.len(), c * h * w);
    debug_assert_eq!(cols.len(), c * kh * kw * gh * gw);
    let grid = gh * gw;
    for ch in 0..c {
        let plane = &mut img[ch * h * w..(ch + 1) * h * w];
        for di in 0..kh {
            for dj in 0..kw {
                let row = &cols[((ch * kh + di) * kw + dj) * grid..][..grid];
                for gi in 0..gh {
                    let ii = (gi * stride + di) as isize - pad as isize;
                    if ii < 0 || ii >= h as isize {
                        continue;
                    }
                    let dst = &mut plane[ii as usize * w..(ii as usize + 1) * w];
                    let src = &row[gi * gw..gi * gw + gw];
                    for (gj, &v) in src.iter().enumerate() {
                        let jj = (gj * stride + dj) as isize - pad as isize;
                        if jj >= 0 && (jj as usize) < w {
                            dst[jj as usize] = dst[jj as usize] + v;
                        }
                    }
                }
            }
        }
    }
}
