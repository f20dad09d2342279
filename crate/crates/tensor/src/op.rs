//! Recorded operations and their vector-Jacobian products.
//!
//! Each tensor remembers the operation that produced it together with the
//! input tensors and whatever forward state the backward pass needs (dropout
//! masks, softmax probabilities, row norms). Gradients are propagated into a
//! per-backward-call map, so repeated backward calls accumulate only into
//! leaf tensors.

use std::collections::HashMap;

use crate::element::Element;
use crate::kernels;
use crate::tensor::Tensor;

/// Operation vocabulary of the engine. `Graph` reports these.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OpKind {
    Leaf,
    Conv2d,
    ConvTranspose2d,
    Prelu,
    Dropout,
    Tanh,
    Add,
    Reshape,
    ReflectPad2d,
    Crop2d,
    Linear,
    MatmulNt,
    RowL2Normalize,
    LmclLogits,
    SoftmaxCrossEntropy,
    MseLoss,
    SumAll,
    /// Round-trip through the 8-bit quantization grid. Not differentiable;
    /// contributes no gradient. Training graphs must not contain it.
    QuantizeRoundtrip,
}

pub(crate) enum Op<E: Element> {
    Leaf,
    Conv2d {
        input: Tensor<E>,
        weight: Tensor<E>,
        bias: Tensor<E>,
        stride: usize,
        padding: usize,
    },
    ConvTranspose2d {
        input: Tensor<E>,
        weight: Tensor<E>,
        bias: Tensor<E>,
        stride: usize,
        padding: usize,
    },
    Prelu {
        input: Tensor<E>,
        slope: Tensor<E>,
    },
    Dropout {
        input: Tensor<E>,
        mask: Vec<E>,
    },
    Tanh {
        input: Tensor<E>,
    },
    Add {
        lhs: Tensor<E>,
        rhs: Tensor<E>,
    },
    Reshape {
        input: Tensor<E>,
    },
    ReflectPad2d {
        input: Tensor<E>,
        pad_h: usize,
        pad_w: usize,
    },
    Crop2d {
        input: Tensor<E>,
    },
    Linear {
        input: Tensor<E>,
        weight: Tensor<E>,
        bias: Tensor<E>,
    },
    MatmulNt {
        lhs: Tensor<E>,
        rhs: Tensor<E>,
    },
    RowL2Normalize {
        input: Tensor<E>,
        inv_norms: Vec<E>,
    },
    LmclLogits {
        cosines: Tensor<E>,
        scale: E,
    },
    SoftmaxCrossEntropy {
        logits: Tensor<E>,
        labels: Vec<usize>,
        probs: Vec<E>,
    },
    MseLoss {
        pred: Tensor<E>,
        target: Tensor<E>,
    },
    SumAll {
        input: Tensor<E>,
    },
    QuantizeRoundtrip {
        input: Tensor<E>,
    },
}

/// Per-backward-call gradient accumulator keyed by tensor id.
pub(crate) struct GradMap<E: Element> {
    map: HashMap<usize, Vec<E>>,
}

impl<E: Element> GradMap<E> {
    pub(crate) fn new() -> Self {
        GradMap { map: HashMap::new() }
    }

    pub(crate) fn seed(&mut self, t: &Tensor<E>, g: Vec<E>) {
        self.map.insert(t.id(), g);
    }

    pub(crate) fn take(&mut self, t: &Tensor<E>) -> Option<Vec<E>> {
        self.map.remove(&t.id())
    }

    /// Accumulate a contribution toward `t`, lazily computed only when some
    /// path through `t` leads to a gradient-requiring leaf.
    pub(crate) fn add_with(&mut self, t: &Tensor<E>, contribution: impl FnOnce() -> Vec<E>) {
        if !t.requires_grad() {
            return;
        }
        match self.map.get_mut(&t.id()) {
            Some(acc) => {
                for (a, c) in acc.iter_mut().zip(contribution()) {
                    *a = *a + c;
                }
            }
            None => {
                self.map.insert(t.id(), contribution());
            }
        }
    }
}

impl<E: Element> Op<E> {
    pub(crate) fn kind(&self) -> OpKind {
        match self {
            Op::Leaf => OpKind::Leaf,
            Op::Conv2d { .. } => OpKind::Conv2d,
            Op::ConvTranspose2d { .. } => OpKind::ConvTranspose2d,
            Op::Prelu { .. } => OpKind::Prelu,
            Op::Dropout { .. } => OpKind::Dropout,
            Op::Tanh { .. } => OpKind::Tanh,
            Op::Add { .. } => OpKind::Add,
            Op::Reshape { .. } => OpKind::Reshape,
            Op::ReflectPad2d { .. } => OpKind::ReflectPad2d,
            Op::Crop2d { .. } => OpKind::Crop2d,
            Op::Linear { .. } => OpKind::Linear,
            Op::MatmulNt { .. } => OpKind::MatmulNt,
            Op::RowL2Normalize { .. } => OpKind::RowL2Normalize,
            Op::LmclLogits { .. } => OpKind::LmclLogits,
            Op::SoftmaxCrossEntropy { .. } => OpKind::SoftmaxCrossEntropy,
            Op::MseLoss { .. } => OpKind::MseLoss,
            Op::SumAll { .. } => OpKind::SumAll,
            Op::QuantizeRoundtrip { .. } => OpKind::QuantizeRoundtrip,
        }
    }

    pub(crate) fn parents(&self) -> Vec<&Tensor<E>> {
        match self {
            Op::Leaf => vec![],
            Op::Conv2d { input, weight, bias, .. }
            | Op::ConvTranspose2d { input, weight, bias, .. }
            | Op::Linear { input, weight, bias } => vec![input, weight, bias],
            Op::Prelu { input, slope } => vec![input, slope],
            Op::Dropout { input, .. }
            | Op::Tanh { input }
            | Op::Reshape { input }
            | Op::ReflectPad2d { input, .. }
            | Op::Crop2d { input }
            | Op::RowL2Normalize { input, .. }
            | Op::SumAll { input }
            | Op::QuantizeRoundtrip { input } => vec![input],
            Op::Add { lhs, rhs } => vec![lhs, rhs],
            Op::MatmulNt { lhs, rhs } => vec![lhs, rhs],
            Op::LmclLogits { cosines, .. } => vec![cosines],
            Op::SoftmaxCrossEntropy { logits, .. } => vec![logits],
            Op::MseLoss { pred, target } => vec![pred, target],
        }
    }

    /// Propagate `grad` (d loss / d node) to this operation's inputs.
    pub(crate) fn backward(&self, node: &Tensor<E>, grad: &[E], sink: &mut GradMap<E>) {
        match self {
            Op::Leaf => {}

            Op::Conv2d { input, weight, bias, stride, padding } => {
                conv2d_backward(node, input, weight, bias, *stride, *padding, grad, sink);
            }

            Op::ConvTranspose2d { input, weight, bias, stride, padding } => {
                conv_transpose2d_backward(node, input, weight, bias, *stride, *padding, grad, sink);
            }

            Op::Prelu { input, slope } => {
                let x = input.data();
                let a = slope.data();
                let channels = a.len();
                let inner = prelu_inner(input.shape(), channels);
                sink.add_with(input, || {
                    x.iter()
                        .zip(grad)
                        .enumerate()
                        .map(|(i, (&xv, &g))| {
                            if xv >= E::zero() {
                                g
                            } else {
                                g * a[(i / inner) % channels]
                            }
                        })
                        .collect()
                });
                sink.add_with(slope, || {
                    let mut da = vec![E::zero(); channels];
                    for (i, (&xv, &g)) in x.iter().zip(grad).enumerate() {
                        if xv < E::zero() {
                            let c = (i / inner) % channels;
                            da[c] = da[c] + g * xv;
                        }
                    }
                    da
                });
            }

            Op::Dropout { input, mask } => {
                sink.add_with(input, || {
                    grad.iter().zip(mask).map(|(&g, &m)| g * m).collect()
                });
            }

            Op::Tanh { input } => {
                let y = node.data();
                sink.add_with(input, || {
                    y.iter()
                        .zip(grad)
                        .map(|(&yv, &g)| g * (E::one() - yv * yv))
                        .collect()
                });
            }

            Op::Add { lhs, rhs } => {
                sink.add_with(lhs, || grad.to_vec());
                sink.add_with(rhs, || grad.to_vec());
            }

            Op::Reshape { input } => {
                sink.add_with(input, || grad.to_vec());
            }

            Op::ReflectPad2d { input, pad_h, pad_w } => {
                let (n, c, h, w) = dims4(input.shape());
                let (oh, ow) = (h + pad_h, w + pad_w);
                sink.add_with(input, || {
                    let mut dx = vec![E::zero(); n * c * h * w];
                    for img in 0..n * c {
                        let src = &grad[img * oh * ow..(img + 1) * oh * ow];
                        let dst = &mut dx[img * h * w..(img + 1) * h * w];
                        for oi in 0..oh {
                            let ii = mirror_index(oi, h);
                            for oj in 0..ow {
                                let jj = mirror_index(oj, w);
                                dst[ii * w + jj] = dst[ii * w + jj] + src[oi * ow + oj];
                            }
                        }
                    }
                    dx
                });
            }

            Op::Crop2d { input } => {
                let (n, c, h, w) = dims4(input.shape());
                let (_, _, ch, cw) = dims4(node.shape());
                sink.add_with(input, || {
                    let mut dx = vec![E::zero(); n * c * h * w];
                    for img in 0..n * c {
                        let src = &grad[img * ch * cw..(img + 1) * ch * cw];
                        let dst = &mut dx[img * h * w..(img + 1) * h * w];
                        for i in 0..ch {
                            dst[i * w..i * w + cw].copy_from_slice(&src[i * cw..(i + 1) * cw]);
                        }
                    }
                    dx
                });
            }

            Op::Linear { input, weight, bias } => {
                let (rows, in_f) = dims2(input.shape());
                let (out_f, _) = dims2(weight.shape());
                sink.add_with(input, || {
                    kernels::matmul(grad, &weight.data(), rows, out_f, in_f)
                });
                sink.add_with(weight, || {
                    kernels::matmul_tn(grad, &input.data(), out_f, rows, in_f)
                });
                sink.add_with(bias, || {
                    let mut db = vec![E::zero(); out_f];
                    for r in 0..rows {
                        for (d, &g) in db.iter_mut().zip(&grad[r * out_f..(r + 1) * out_f]) {
                            *d = *d + g;
                        }
                    }
                    db
                });
            }

            Op::MatmulNt { lhs, rhs } => {
                let (m, k) = dims2(lhs.shape());
                let (n, _) = dims2(rhs.shape());
                sink.add_with(lhs, || kernels::matmul(grad, &rhs.data(), m, n, k));
                sink.add_with(rhs, || kernels::matmul_tn(grad, &lhs.data(), n, m, k));
            }

            Op::RowL2Normalize { input, inv_norms } => {
                let (rows, cols) = dims2(input.shape());
                let y = node.data();
                sink.add_with(input, || {
                    let mut dx = vec![E::zero(); rows * cols];
                    for r in 0..rows {
                        let u = &y[r * cols..(r + 1) * cols];
                        let g = &grad[r * cols..(r + 1) * cols];
                        let mut dot = E::zero();
                        for (&gv, &uv) in g.iter().zip(u) {
                            dot = dot + gv * uv;
                        }
                        let inv = inv_norms[r];
                        for ((d, &gv), &uv) in dx[r * cols..(r + 1) * cols]
                            .iter_mut()
                            .zip(g)
                            .zip(u)
                        {
                            *d = inv * (gv - dot * uv);
                        }
                    }
                    dx
                });
            }

            Op::LmclLogits { cosines, scale, .. } => {
                // z = s·(cos − m·onehot): the margin shift is constant in cos.
                sink.add_with(cosines, || grad.iter().map(|&g| g * *scale).collect());
            }

            Op::SoftmaxCrossEntropy { logits, labels, probs } => {
                let (rows, classes) = dims2(logits.shape());
                let g = grad[0];
                sink.add_with(logits, || {
                    let inv_n = E::one() / E::from_f64(rows as f64);
                    let mut dz = Vec::with_capacity(rows * classes);
                    for r in 0..rows {
                        for j in 0..classes {
                            let indicator = if labels[r] == j { E::one() } else { E::zero() };
                            dz.push(g * (probs[r * classes + j] - indicator) * inv_n);
                        }
                    }
                    dz
                });
            }

            Op::MseLoss { pred, target } => {
                let g = grad[0];
                let len = pred.numel();
                let coeff = g * E::from_f64(2.0 / len as f64);
                let p = pred.data();
                let t = target.data();
                sink.add_with(pred, || {
                    p.iter().zip(t.iter()).map(|(&pv, &tv)| coeff * (pv - tv)).collect()
                });
                sink.add_with(target, || {
                    p.iter().zip(t.iter()).map(|(&pv, &tv)| -coeff * (pv - tv)).collect()
                });
            }

            Op::SumAll { input } => {
                let g = grad[0];
                sink.add_with(input, || vec![g; input.numel()]);
            }

            // Piecewise constant: zero gradient almost everywhere, so no
            // contribution is propagated.
            Op::QuantizeRoundtrip { .. } => {}
        }
    }
}

pub(crate) fn dims2(shape: &[usize]) -> (usize, usize) {
    debug_assert_eq!(shape.len(), 2);
    (shape[0], shape[1])
}

pub(crate) fn dims4(shape: &[usize]) -> (usize, usize, usize, usize) {
    debug_assert_eq!(shape.len(), 4);
    (shape[0], shape[1], shape[2], shape[3])
}

/// Elements covered by one channel entry for PReLU's per-channel slope.
pub(crate) fn prelu_inner(shape: &[usize], channels: usize) -> usize {
    if channels == 1 {
        // Shared slope: every element maps to channel 0.
        return usize::MAX;
    }
    // Channel axis is dim 1 for rank >= 2, dim 0 for vectors.
    if shape.len() >= 2 {
        shape[2..].iter().product()
    } else {
        1
    }
}

/// Reflect an out-of-range index back into [0, n) with an edge-inclusive
/// mirror (..., n-2, n-1, n-1, n-2, ...), periodic with period 2n so any
/// overhang folds back in.
pub(crate) fn mirror_index(i: usize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let m = i % (2 * n);
    if m < n {
        m
    } else {
        2 * n - 1 - m
    }
}

#[allow(clippy::too_many_arguments)]
fn conv2d_backward<E: Element>(
    node: &Tensor<E>,
    input: &Tensor<E>,
    weight: &Tensor<E>,
    bias: &Tensor<E>,
    stride: usize,
    padding: usize,
    grad: &[E],
    sink: &mut GradMap<E>,
) {
    let (n, cin, h, w) = dims4(input.shape());
    let (cout, _, kh, kw) = dims4(weight.shape());
    let (_, _, oh, ow) = dims4(node.shape());
    let (grid, ckk) = (oh * ow, cin * kh * kw);
    let x = input.data();

    sink.add_with(bias, || {
        let mut db = vec![E::zero(); cout];
        for img in 0..n {
            for c in 0..cout {
                let row = &grad[(img * cout + c) * grid..][..grid];
                for &g in row {
                    db[c] = db[c] + g;
                }
            }
        }
        db
    });

    sink.add_with(weight, || {
        let xs: &[E] = &x;
        let partials = kernels::map_images(n, |img| {
            let mut cols = vec![E::zero(); ckk * grid];
            kernels::im2col(
                &xs[img * cin * h * w..][..cin * h * w],
                cin, h, w, kh, kw, stride, padding, oh, ow, &mut cols,
            );
            let dy = &grad[img * cout * grid..][..cout * grid];
            kernels::matmul_nt_serial(dy, &cols, cout, grid, ckk)
        });
        let mut dw = vec![E::zero(); cout * ckk];
        for part in partials {
            for (d, p) in dw.iter_mut().zip(part) {
                *d = *d + p;
            }
        }
        dw
    });

    sink.add_with(input, || {
        let wt = kernels::transpose(&weight.data(), cout, ckk);
        let wts: &[E] = &wt;
        let mut dx = vec![E::zero(); n * cin * h * w];
        kernels::for_each_image(&mut dx, cin * h * w, |(img, dst)| {
            let dy = &grad[img * cout * grid..][..cout * grid];
            let mut dcols = vec![E::zero(); ckk * grid];
            kernels::matmul_serial_into(wts, dy, ckk, cout, grid, &mut dcols);
            kernels::col2im_add(
                &dcols,
                cin, h, w, kh, kw, stride, padding, oh, ow, dst,
            );
        });
        dx
    });
}

#[allow(clippy::too_many_arguments)]
fn conv_transpose2d_backward<E: Element>(
    node: &Tensor<E>,
    input: &Tensor<E>,
    weight: &Tensor<E>,
    bias: &Tensor<E>,
    stride: usize,
    padding: usize,
    grad: &[E],
    sink: &mut GradMap<E>,
) {
    let (n, cin, h, w) = dims4(input.shape());
    let (_, cout, kh, kw) = dims4(weight.shape());
    let (_, _, oh, ow) = dims4(node.shape());
    let (grid, out_plane) = (h * w, oh * ow);
    let ckk = cout * kh * kw;
    let x = input.data();

    sink.add_with(bias, || {
        let mut db = vec![E::zero(); cout];
        for img in 0..n {
            for c in 0..cout {
                let row = &grad[(img * cout + c) * out_plane..][..out_plane];
                for &g in row {
                    db[c] = db[c] + g;
                }
            }
        }
        db
    });

    // Both remaining gradients consume im2col(dY) over the input grid.
    let needs_dx = input.requires_grad();
    let needs_dw = weight.requires_grad();
    if !needs_dx && !needs_dw {
        return;
    }
    let w_flat = weight.data();
    let (xs, ws): (&[E], &[E]) = (&x, &w_flat);
    let parts = kernels::map_images(n, |img| {
        let mut cols = vec![E::zero(); ckk * grid];
        kernels::im2col(
            &grad[img * cout * out_plane..][..cout * out_plane],
            cout, oh, ow, kh, kw, stride, padding, h, w, &mut cols,
        );
        let dx_part = needs_dx.then(|| {
            let mut p = vec![E::zero(); cin * grid];
            kernels::matmul_serial_into(ws, &cols, cin, ckk, grid, &mut p);
            p
        });
        let dw_part = needs_dw.then(|| {
            kernels::matmul_nt_serial(&xs[img * cin * grid..][..cin * grid], &cols, cin, grid, ckk)
        });
        (dx_part, dw_part)
    });
    let mut dx = vec![E::zero(); n * cin * grid];
    let mut dw = vec![E::zero(); cin * ckk];
    for (img, (dx_part, dw_part)) in parts.into_iter().enumerate() {
        if let Some(p) = dx_part {
            dx[img * cin * grid..][..cin * grid].copy_from_slice(&p);
        }
        if let Some(p) = dw_part {
            for (d, v) in dw.iter_mut().zip(p) {
                *d = *d + v;
            }
        }
    }
    drop((x, w_flat));
    sink.add_with(input, || dx);
    sink.add_with(weight, || dw);
}
