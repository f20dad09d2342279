//! Forward passes. Every function validates shapes, computes the output
//! eagerly, and records the operation so `backward` can replay it.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::element::Element;
use crate::error::{Result, TensorError};
use crate::kernels;
use crate::op::{dims2, dims4, mirror_index, prelu_inner, Op};
use crate::tensor::Tensor;

fn any_grad<E: Element>(tensors: &[&Tensor<E>]) -> bool {
    tensors.iter().any(|t| t.requires_grad())
}

fn shape_err(op: &'static str, detail: String) -> TensorError {
    TensorError::ShapeMismatch { op, detail }
}

fn arg_err(op: &'static str, detail: String) -> TensorError {
    TensorError::InvalidArg { op, detail }
}

/// 2-D cross-correlation of `input` [N,Cin,H,W] with `weight`
/// [Cout,Cin,kH,kW] plus per-channel `bias`, producing [N,Cout,H',W'] with
/// H' = floor((H + 2·padding − kH)/stride) + 1.
pub fn conv2d<E: Element>(
    input: &Tensor<E>,
    weight: &Tensor<E>,
    bias: &Tensor<E>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<E>> {
    if input.shape().len() != 4 || weight.shape().len() != 4 {
        return Err(shape_err(
            "conv2d",
            format!("input rank {} / weight rank {}, both must be 4",
                input.shape().len(), weight.shape().len()),
        ));
    }
    let (n, cin, h, w) = dims4(input.shape());
    let (cout, wcin, kh, kw) = dims4(weight.shape());
    if cin != wcin {
        return Err(shape_err(
            "conv2d",
            format!("input channels {cin} (input {:?}) != weight channels {wcin} (weight {:?})",
                input.shape(), weight.shape()),
        ));
    }
    if bias.shape() != [cout] {
        return Err(shape_err(
            "conv2d",
            format!("bias {:?} must be [{cout}]", bias.shape()),
        ));
    }
    if stride == 0 {
        return Err(arg_err("conv2d", "stride must be positive".into()));
    }
    if h + 2 * padding < kh || w + 2 * padding < kw {
        return Err(arg_err(
            "conv2d",
            format!("padded input {}x{} smaller than kernel {kh}x{kw}",
                h + 2 * padding, w + 2 * padding),
        ));
    }

    let oh = kernels::conv_out_extent(h, kh, stride, padding);
    let ow = kernels::conv_out_extent(w, kw, stride, padding);
    let (grid, ckk, plane) = (oh * ow, cin * kh * kw, cin * h * w);

    let x = input.data();
    let wv = weight.data();
    let bv = bias.data();
    let (xs, ws, bs): (&[E], &[E], &[E]) = (&x, &wv, &bv);
    let mut out = vec![E::zero(); n * cout * grid];
    let image = |(img, dst): (usize, &mut [E])| {
        let mut cols = vec![E::zero(); ckk * grid];
        kernels::im2col(
            &xs[img * plane..][..plane],
            cin, h, w, kh, kw, stride, padding, oh, ow, &mut cols,
        );
        kernels::matmul_serial_into(ws, &cols, cout, ckk, grid, dst);
        for c in 0..cout {
            let b = bs[c];
            for o in &mut dst[c * grid..(c + 1) * grid] {
                *o = *o + b;
            }
        }
    };
    kernels::for_each_image(&mut out, cout * grid, image);
    drop((x, wv, bv));

    let rg = any_grad(&[input, weight, bias]);
    Ok(Tensor::new(
        vec![n, cout, oh, ow],
        out,
        Op::Conv2d {
            input: input.clone(),
            weight: weight.clone(),
            bias: bias.clone(),
            stride,
            padding,
        },
        rg,
    ))
}

/// Transposed convolution (adjoint of `conv2d` in its spatial action) of
/// `input` [N,Cin,H,W] with `weight` [Cin,Cout,kH,kW], producing
/// [N,Cout,H',W'] with H' = (H−1)·stride − 2·padding + kH + output_padding.
pub fn conv_transpose2d<E: Element>(
    input: &Tensor<E>,
    weight: &Tensor<E>,
    bias: &Tensor<E>,
    stride: usize,
    padding: usize,
    output_padding: usize,
) -> Result<Tensor<E>> {
    if input.shape().len() != 4 || weight.shape().len() != 4 {
        return Err(shape_err(
            "conv_transpose2d",
            format!("input rank {} / weight rank {}, both must be 4",
                input.shape().len(), weight.shape().len()),
        ));
    }
    let (n, cin, h, w) = dims4(input.shape());
    let (wcin, cout, kh, kw) = dims4(weight.shape());
    if cin != wcin {
        return Err(shape_err(
            "conv_transpose2d",
            format!("input channels {cin} (input {:?}) != weight channels {wcin} (weight {:?})",
                input.shape(), weight.shape()),
        ));
    }
    if bias.shape() != [cout] {
        return Err(shape_err(
            "conv_transpose2d",
            format!("bias {:?} must be [{cout}]", bias.shape()),
        ));
    }
    if stride == 0 {
        return Err(arg_err("conv_transpose2d", "stride must be positive".into()));
    }
    if output_padding >= stride {
        return Err(arg_err(
            "conv_transpose2d",
            format!("output_padding {output_padding} must be < stride {stride}"),
        ));
    }
    let oh_signed = (h as isize - 1) * stride as isize - 2 * padding as isize
        + kh as isize
        + output_padding as isize;
    let ow_signed = (w as isize - 1) * stride as isize - 2 * padding as isize
        + kw as isize
        + output_padding as isize;
    if oh_signed <= 0 || ow_signed <= 0 {
        return Err(arg_err(
            "conv_transpose2d",
            format!("output extent {oh_signed}x{ow_signed} is not positive"),
        ));
    }
    let (oh, ow) = (oh_signed as usize, ow_signed as usize);

    let (grid, ckk, out_plane) = (h * w, cout * kh * kw, cout * oh * ow);
    let x = input.data();
    let bv = bias.data();
    let wt = kernels::transpose(&weight.data(), cin, ckk);
    let (xs, bs, wts): (&[E], &[E], &[E]) = (&x, &bv, &wt);
    let mut out = vec![E::zero(); n * out_plane];
    let image = |(img, dst): (usize, &mut [E])| {
        let mut cols = vec![E::zero(); ckk * grid];
        kernels::matmul_serial_into(
            wts,
            &xs[img * cin * grid..][..cin * grid],
            ckk, cin, grid, &mut cols,
        );
        kernels::col2im_add(&cols, cout, oh, ow, kh, kw, stride, padding, h, w, dst);
        for c in 0..cout {
            let b = bs[c];
            for o in &mut dst[c * oh * ow..(c + 1) * oh * ow] {
                *o = *o + b;
            }
        }
    };
    kernels::for_each_image(&mut out, out_plane, image);
    drop((x, bv));

    let rg = any_grad(&[input, weight, bias]);
    Ok(Tensor::new(
        vec![n, cout, oh, ow],
        out,
        Op::ConvTranspose2d {
            input: input.clone(),
            weight: weight.clone(),
            bias: bias.clone(),
            stride,
            padding,
        },
        rg,
    ))
}

/// Parametric ReLU: x where x ≥ 0, slope·x otherwise. `slope` holds one
/// value per channel, or a single shared value.
pub fn prelu<E: Element>(input: &Tensor<E>, slope: &Tensor<E>) -> Result<Tensor<E>> {
    if slope.shape().len() != 1 {
        return Err(shape_err(
            "prelu",
            format!("slope must be rank 1, got {:?}", slope.shape()),
        ));
    }
    let channels = slope.numel();
    let expected = if input.shape().len() >= 2 {
        input.shape()[1]
    } else {
        input.shape()[0]
    };
    if channels != 1 && channels != expected {
        return Err(shape_err(
            "prelu",
            format!("slope length {channels} matches neither channel extent {expected} nor 1"),
        ));
    }
    let inner = prelu_inner(input.shape(), channels);
    let a = slope.data();
    let out = input
        .data()
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            if x >= E::zero() {
                x
            } else {
                a[(i / inner) % channels] * x
            }
        })
        .collect();
    drop(a);
    let rg = any_grad(&[input, slope]);
    Ok(Tensor::new(
        input.shape().to_vec(),
        out,
        Op::Prelu {
            input: input.clone(),
            slope: slope.clone(),
        },
        rg,
    ))
}

/// Inverted dropout. In training mode each element is zeroed with
/// probability `rate` and survivors are scaled by 1/(1−rate); the mask is a
/// pure function of `seed`. In inference mode this is the identity.
pub fn dropout<E: Element>(
    input: &Tensor<E>,
    rate: f64,
    training: bool,
    seed: u64,
) -> Result<Tensor<E>> {
    if !(0.0..1.0).contains(&rate) {
        return Err(arg_err("dropout", format!("rate {rate} outside [0,1)")));
    }
    if !training {
        return Ok(input.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Integer threshold keeps the mask identical for every element width.
    let threshold = (rate * 4294967296.0) as u64;
    let scale = E::from_f64(1.0 / (1.0 - rate));
    let mask: Vec<E> = (0..input.numel())
        .map(|_| {
            if (rng.next_u32() as u64) >= threshold {
                scale
            } else {
                E::zero()
            }
        })
        .collect();
    let out = input.data().iter().zip(&mask).map(|(&x, &m)| x * m).collect();
    let rg = input.requires_grad();
    Ok(Tensor::new(
        input.shape().to_vec(),
        out,
        Op::Dropout {
            input: input.clone(),
            mask,
        },
        rg,
    ))
}

pub fn tanh<E: Element>(input: &Tensor<E>) -> Tensor<E> {
    let out = input.data().iter().map(|&x| x.tanh()).collect();
    let rg = input.requires_grad();
    Tensor::new(
        input.shape().to_vec(),
        out,
        Op::Tanh {
            input: input.clone(),
        },
        rg,
    )
}

/// Elementwise sum of two same-shape tensors.
pub fn add<E: Element>(lhs: &Tensor<E>, rhs: &Tensor<E>) -> Result<Tensor<E>> {
    if lhs.shape() != rhs.shape() {
        return Err(shape_err(
            "add",
            format!("{:?} vs {:?}", lhs.shape(), rhs.shape()),
        ));
    }
    let out = lhs
        .data()
        .iter()
        .zip(rhs.data().iter())
        .map(|(&a, &b)| a + b)
        .collect();
    let rg = any_grad(&[lhs, rhs]);
    Ok(Tensor::new(
        lhs.shape().to_vec(),
        out,
        Op::Add {
            lhs: lhs.clone(),
            rhs: rhs.clone(),
        },
        rg,
    ))
}

pub fn reshape<E: Element>(input: &Tensor<E>, new_shape: &[usize]) -> Result<Tensor<E>> {
    if new_shape.iter().product::<usize>() != input.numel() {
        return Err(shape_err(
            "reshape",
            format!("{:?} ({} values) cannot view as {:?}",
                input.shape(), input.numel(), new_shape),
        ));
    }
    let rg = input.requires_grad();
    Ok(Tensor::new(
        new_shape.to_vec(),
        input.to_vec(),
        Op::Reshape {
            input: input.clone(),
        },
        rg,
    ))
}

/// Pad the bottom/right of [N,C,H,W] by (pad_h, pad_w) rows/columns using an
/// edge-inclusive mirror of the image content.
pub fn reflect_pad2d<E: Element>(
    input: &Tensor<E>,
    pad_h: usize,
    pad_w: usize,
) -> Result<Tensor<E>> {
    if input.shape().len() != 4 {
        return Err(shape_err(
            "reflect_pad2d",
            format!("expected rank 4, got {:?}", input.shape()),
        ));
    }
    let (n, c, h, w) = dims4(input.shape());
    let (oh, ow) = (h + pad_h, w + pad_w);
    let x = input.data();
    let mut out = vec![E::zero(); n * c * oh * ow];
    for img in 0..n * c {
        let src = &x[img * h * w..(img + 1) * h * w];
        let dst = &mut out[img * oh * ow..(img + 1) * oh * ow];
        for oi in 0..oh {
            let ii = mirror_index(oi, h);
            for oj in 0..ow {
                dst[oi * ow + oj] = src[ii * w + mirror_index(oj, w)];
            }
        }
    }
    drop(x);
    let rg = input.requires_grad();
    Ok(Tensor::new(
        vec![n, c, oh, ow],
        out,
        Op::ReflectPad2d {
            input: input.clone(),
            pad_h,
            pad_w,
        },
        rg,
    ))
}

/// Keep the top-left (height, width) window of every [N,C,H,W] plane.
pub fn crop2d<E: Element>(input: &Tensor<E>, height: usize, width: usize) -> Result<Tensor<E>> {
    if input.shape().len() != 4 {
        return Err(shape_err(
            "crop2d",
            format!("expected rank 4, got {:?}", input.shape()),
        ));
    }
    let (n, c, h, w) = dims4(input.shape());
    if height == 0 || width == 0 || height > h || width > w {
        return Err(arg_err(
            "crop2d",
            format!("crop {height}x{width} invalid for {h}x{w}"),
        ));
    }
    let x = input.data();
    let mut out = Vec::with_capacity(n * c * height * width);
    for img in 0..n * c {
        let src = &x[img * h * w..(img + 1) * h * w];
        for i in 0..height {
            out.extend_from_slice(&src[i * w..i * w + width]);
        }
    }
    drop(x);
    let rg = input.requires_grad();
    Ok(Tensor::new(
        vec![n, c, height, width],
        out,
        Op::Crop2d {
            input: input.clone(),
        },
        rg,
    ))
}

/// Fully connected layer: y = x·Wᵀ + b for x [N,F], W [D,F], b [D].
pub fn linear<E: Element>(
    input: &Tensor<E>,
    weight: &Tensor<E>,
    bias: &Tensor<E>,
) -> Result<Tensor<E>> {
    if input.shape().len() != 2 || weight.shape().len() != 2 {
        return Err(shape_err(
            "linear",
            format!("input {:?} / weight {:?} must be rank 2",
                input.shape(), weight.shape()),
        ));
    }
    let (rows, in_f) = dims2(input.shape());
    let (out_f, w_in) = dims2(weight.shape());
    if in_f != w_in {
        return Err(shape_err(
            "linear",
            format!("input features {in_f} != weight features {w_in}"),
        ));
    }
    if bias.shape() != [out_f] {
        return Err(shape_err(
            "linear",
            format!("bias {:?} must be [{out_f}]", bias.shape()),
        ));
    }
    let mut out = kernels::matmul_nt(&input.data(), &weight.data(), rows, in_f, out_f);
    let bv = bias.data();
    for r in 0..rows {
        for (o, &b) in out[r * out_f..(r + 1) * out_f].iter_mut().zip(bv.iter()) {
            *o = *o + b;
        }
    }
    drop(bv);
    let rg = any_grad(&[input, weight, bias]);
    Ok(Tensor::new(
        vec![rows, out_f],
        out,
        Op::Linear {
            input: input.clone(),
            weight: weight.clone(),
            bias: bias.clone(),
        },
        rg,
    ))
}

/// A[M,K] · B[N,K]ᵀ -> [M,N].
pub fn matmul_nt<E: Element>(lhs: &Tensor<E>, rhs: &Tensor<E>) -> Result<Tensor<E>> {
    if lhs.shape().len() != 2 || rhs.shape().len() != 2 {
        return Err(shape_err(
            "matmul_nt",
            format!("{:?} / {:?} must be rank 2", lhs.shape(), rhs.shape()),
        ));
    }
    let (m, k) = dims2(lhs.shape());
    let (n, k2) = dims2(rhs.shape());
    if k != k2 {
        return Err(shape_err(
            "matmul_nt",
            format!("inner extents differ: {:?} vs {:?}", lhs.shape(), rhs.shape()),
        ));
    }
    let out = kernels::matmul_nt(&lhs.data(), &rhs.data(), m, k, n);
    let rg = any_grad(&[lhs, rhs]);
    Ok(Tensor::new(
        vec![m, n],
        out,
        Op::MatmulNt {
            lhs: lhs.clone(),
            rhs: rhs.clone(),
        },
        rg,
    ))
}

/// Scale every row of [R,C] to unit L2 norm.
pub fn row_l2_normalize<E: Element>(input: &Tensor<E>) -> Result<Tensor<E>> {
    if input.shape().len() != 2 {
        return Err(shape_err(
            "row_l2_normalize",
            format!("expected rank 2, got {:?}", input.shape()),
        ));
    }
    let (rows, cols) = dims2(input.shape());
    let x = input.data();
    let floor = E::from_f64(1e-12);
    let mut out = Vec::with_capacity(rows * cols);
    let mut inv_norms = Vec::with_capacity(rows);
    for r in 0..rows {
        let row = &x[r * cols..(r + 1) * cols];
        let mut sq = E::zero();
        for &v in row {
            sq = sq + v * v;
        }
        let inv = E::one() / sq.sqrt().max(floor);
        inv_norms.push(inv);
        out.extend(row.iter().map(|&v| v * inv));
    }
    drop(x);
    let rg = input.requires_grad();
    Ok(Tensor::new(
        vec![rows, cols],
        out,
        Op::RowL2Normalize {
            input: input.clone(),
            inv_norms,
        },
        rg,
    ))
}

/// Margin-shifted scaled logits: z_ij = scale·(cos_ij − margin·[j == label_i]).
pub fn lmcl_logits<E: Element>(
    cosines: &Tensor<E>,
    labels: &[usize],
    scale: E,
    margin: E,
) -> Result<Tensor<E>> {
    if cosines.shape().len() != 2 {
        return Err(shape_err(
            "lmcl_logits",
            format!("expected rank 2 cosines, got {:?}", cosines.shape()),
        ));
    }
    let (rows, classes) = dims2(cosines.shape());
    if labels.len() != rows {
        return Err(shape_err(
            "lmcl_logits",
            format!("{} labels for {} rows", labels.len(), rows),
        ));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(arg_err(
            "lmcl_logits",
            format!("label {bad} out of range for {classes} classes"),
        ));
    }
    if scale <= E::zero() {
        return Err(arg_err("lmcl_logits", format!("scale {scale} must be positive")));
    }
    if margin < E::zero() {
        return Err(arg_err("lmcl_logits", format!("margin {margin} must be >= 0")));
    }
    let x = cosines.data();
    let mut out = Vec::with_capacity(rows * classes);
    for r in 0..rows {
        for j in 0..classes {
            let shift = if labels[r] == j { margin } else { E::zero() };
            out.push(scale * (x[r * classes + j] - shift));
        }
    }
    drop(x);
    let rg = cosines.requires_grad();
    Ok(Tensor::new(
        vec![rows, classes],
        out,
        Op::LmclLogits {
            cosines: cosines.clone(),
            scale,
        },
        rg,
    ))
}

/// Mean negative log-likelihood of the labels under a row softmax,
/// stabilized by per-row max subtraction.
pub fn softmax_cross_entropy<E: Element>(
    logits: &Tensor<E>,
    labels: &[usize],
) -> Result<Tensor<E>> {
    if logits.shape().len() != 2 {
        return Err(shape_err(
            "softmax_cross_entropy",
            format!("expected rank 2 logits, got {:?}", logits.shape()),
        ));
    }
    let (rows, classes) = dims2(logits.shape());
    if labels.len() != rows {
        return Err(shape_err(
            "softmax_cross_entropy",
            format!("{} labels for {} rows", labels.len(), rows),
        ));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(arg_err(
            "softmax_cross_entropy",
            format!("label {bad} out of range for {classes} classes"),
        ));
    }
    let z = logits.data();
    let mut probs = vec![E::zero(); rows * classes];
    let mut loss = E::zero();
    for r in 0..rows {
        let row = &z[r * classes..(r + 1) * classes];
        let mut max = row[0];
        for &v in &row[1..] {
            max = max.max(v);
        }
        let mut denom = E::zero();
        for (p, &v) in probs[r * classes..(r + 1) * classes].iter_mut().zip(row) {
            *p = (v - max).exp();
            denom = denom + *p;
        }
        for p in &mut probs[r * classes..(r + 1) * classes] {
            *p = *p / denom;
        }
        loss = loss - (row[labels[r]] - max - denom.ln());
    }
    loss = loss / E::from_f64(rows as f64);
    drop(z);
    let rg = logits.requires_grad();
    Ok(Tensor::new(
        vec![1],
        vec![loss],
        Op::SoftmaxCrossEntropy {
            logits: logits.clone(),
            labels: labels.to_vec(),
            probs,
        },
        rg,
    ))
}

/// Mean squared error over every element (batch, channels and pixels), so
/// the magnitude is resolution-independent.
pub fn mse_loss<E: Element>(pred: &Tensor<E>, target: &Tensor<E>) -> Result<Tensor<E>> {
    if pred.shape() != target.shape() {
        return Err(shape_err(
            "mse_loss",
            format!("{:?} vs {:?}", pred.shape(), target.shape()),
        ));
    }
    let mut acc = E::zero();
    for (&p, &t) in pred.data().iter().zip(target.data().iter()) {
        let d = p - t;
        acc = acc + d * d;
    }
    let loss = acc / E::from_f64(pred.numel() as f64);
    let rg = any_grad(&[pred, target]);
    Ok(Tensor::new(
        vec![1],
        vec![loss],
        Op::MseLoss {
            pred: pred.clone(),
            target: target.clone(),
        },
        rg,
    ))
}

/// Sum of every element, as a scalar tensor.
pub fn sum_all<E: Element>(input: &Tensor<E>) -> Tensor<E> {
    let mut acc = E::zero();
    for &v in input.data().iter() {
        acc = acc + v;
    }
    let rg = input.requires_grad();
    Tensor::new(
        vec![1],
        vec![acc],
        Op::SumAll {
            input: input.clone(),
        },
        rg,
    )
}

/// Elementwise round trip through the 8-bit grid: values in [−1,1] snap to
/// the nearest of the 256 levels. Piecewise constant, so it blocks all
/// gradient flow; training graphs must use the bypass instead.
pub fn quantize_roundtrip<E: Element>(input: &Tensor<E>) -> Tensor<E> {
    let half_levels = E::from_f64(127.5);
    let inv = E::from_f64(2.0 / 255.0);
    let out = input
        .data()
        .iter()
        .map(|&x| ((x + E::one()) * half_levels).round() * inv - E::one())
        .collect();
    let rg = input.requires_grad();
    Tensor::new(
        input.shape().to_vec(),
        out,
        Op::QuantizeRoundtrip {
            input: input.clone(),
        },
        rg,
    )
}
