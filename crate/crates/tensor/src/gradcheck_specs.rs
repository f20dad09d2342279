//! Gradient-check specs covering every differentiable operation in the
//! vocabulary, each ending in a scalar loss with randomized weighting so
//! element-placement bugs cannot cancel.

use crate::element::Element;
use crate::gradcheck::{check, AuxSource, CheckConfig, CheckReport, OpSpec};
use crate::ops;
use crate::tensor::Tensor;

pub struct Conv2dS1;
impl OpSpec for Conv2dS1 {
    fn name(&self) -> &'static str {
        "conv2d/stride1"
    }
    fn input_shapes(&self) -> Vec<Vec<usize>> {
        vec![vec![2, 3, 5, 4], vec![4, 3, 3, 3], vec![4]]
    }
    fn build<E: Element>(&self, inputs: &[Tensor<E>], aux: &mut AuxSource<E>) -> Tensor<E> {
        let y = ops::conv2d(&inputs[0], &inputs[1], &inputs[2], 1, 0).unwrap();
        ops::mse_loss(&y, &aux.tensor(y.shape())).unwrap()
    }
}

pub struct Conv2dS2;
impl OpSpec for Conv2dS2 {
    fn name(&self) -> &'static str {
        "conv2d/stride2"
    }
    fn input_shapes(&self) -> Vec<Vec<usize>> {
        vec![vec![2, 3, 6, 5], vec![4, 3, 3, 3], vec![4]]
    }
    fn build<E: Element>(&self, inputs: &[Tensor<E>], aux: &mut AuxSource<E>) -> Tensor<E> {
        let y = ops::conv2d(&inputs[0], &inputs[1], &inputs[2], 2, 1).unwrap();
        ops::mse_loss(&y, &aux.tensor(y.shape())).unwrap()
    }
}

pub struct ConvTranspose2dS2;
impl OpSpec for ConvTranspose2dS2 {
    fn name(&self) -> &'static str {
        "conv_transpose2d/stride2"
    }
    fn input_shapes(&self) -> Vec<Vec<usize>> {
        vec![vec![2, 3, 4, 3], vec![3, 2, 3, 3], vec![2]]
    }
    fn build<E: Element>(&self, inputs: &[Tensor<E>], aux: &mut AuxSource<E>) -> Tensor<E> {
        let y = ops::conv_transpose2d(&inputs[0], &inputs[1], &inputs[2], 2, 1, 1).unwrap();
        ops::mse_loss(&y, &aux.tensor(y.shape())).unwrap()
    }
}

pub struct PreluSpec;
impl OpSpec for PreluSpec {
    fn name(&self) -> &'static str {
        "prelu"
    }
    fn input_shapes(&self) -> Vec<Vec<usize>> {
        vec![vec![2, 4, 3, 3], vec![4]]
    }
    fn build<E: Element>(&self, inputs: &[Tensor<E>], aux: &mut AuxSource<E>) -> Tensor<E> {
        let y = ops::prelu(&inputs[0], &inputs[1]).unwrap();
        ops::mse_loss(&y, &aux.tensor(y.shape())).unwrap()
    }
}

pub struct DropoutSpec;
impl OpSpec for DropoutSpec {
    fn name(&self) -> &'static str {
        "dropout"
    }
    fn input_shapes(&self) -> Vec<Vec<usize>> {
        vec![vec![2, 3, 4, 4]]
    }
    fn build<E: Element>(&self, inputs: &[Tensor<E>], aux: &mut AuxSource<E>) -> Tensor<E> {
        // Fixed mask seed: the mask is part of the function under test.
        let y = ops::dropout(&inputs[0], 0.3, true, 41).unwrap();
        ops::mse_loss(&y, &aux.tensor(y.shape())).unwrap()
    }
}

pub struct TanhSpec;
impl OpSpec for TanhSpec {
    fn name(&self) -> &'static str {
        "tanh"
    }
    fn input_shapes(&self) -> Vec<Vec<usize>> {
        vec![vec![3, 7]]
    }
    fn build<E: Element>(&self, inputs: &[Tensor<E>], aux: &mut AuxSource<E>) -> Tensor<E> {
        let y = ops::tanh(&inputs[0]);
        ops::mse_loss(&y, &aux.tensor(y.shape())).unwrap()
    }
}

pub struct AddSpec;
impl OpSpec for AddSpec {
    fn name(&self) -> &'static str {
        "add"
    }
    fn input_shapes(&self) -> Vec<Vec<usize>> {
        vec![vec![2, 3, 4], vec![2, 3, 4]]
    }
    fn build<E: Element>(&self, inputs: &[Tensor<E>], aux: &mut AuxSource<E>) -> Tensor<E> {
        let y = ops::add(&inputs[0], &inputs[1]).unwrap();
        ops::mse_loss(&y, &aux.tensor(y.shape())).unwrap()
    }
}

pub struct ReshapeSpec;
impl OpSpec for ReshapeSpec {
    fn name(&self) -> &'static str {
        "reshape"
    }
    fn input_shapes(&self) -> Vec<Vec<usize>> {
        vec![vec![2, 3, 4]]
    }
    fn build<E: Element>(&self, inputs: &[Tensor<E>], aux: &mut AuxSource<E>) -> Tensor<E> {
        let y = ops::reshape(&inputs[0], &[6, 4]).unwrap();
        ops::mse_loss(&y, &aux.tensor(y.shape())).unwrap()
    }
}

pub struct ReflectPadSpec;
impl OpSpec for ReflectPadSpec {
    fn name(&self) -> &'static str {
        "reflect_pad2d"
    }
    fn input_shapes(&self) -> Vec<Vec<usize>> {
        vec![vec![1, 2, 5, 4]]
    }
    fn build<E: Element>(&self, inputs: &[Tensor<E>], aux: &mut AuxSource<E>) -> Tensor<E> {
        let y = ops::reflect_pad2d(&inputs[0], 3, 2).unwrap();
        ops::mse_loss(&y, &aux.tensor(y.shape())).unwrap()
    }
}

pub struct Crop2dSpec;
impl OpSpec for Crop2dSpec {
    fn name(&self) -> &'static str {
        "crop2d"
    }
    fn input_shapes(&self) -> Vec<Vec<usize>> {
        vec![vec![1, 2, 5, 6]]
    }
    fn build<E: Element>(&self, inputs: &[Tensor<E>], aux: &mut AuxSource<E>) -> Tensor<E> {
        let y = ops::crop2d(&inputs[0], 3, 4).unwrap();
        ops::mse_loss(&y, &aux.tensor(y.shape())).unwrap()
    }
}

pub struct LinearSpec;
impl OpSpec for LinearSpec {
    fn name(&self) -> &'static str {
        "linear"
    }
    fn input_shapes(&self) -> Vec<Vec<usize>> {
        vec![vec![3, 7], vec![4, 7], vec![4]]
    }
    fn build<E: Element>(&self, inputs: &[Tensor<E>], aux: &mut AuxSource<E>) -> Tensor<E> {
        let y = ops::linear(&inputs[0], &inputs[1], &inputs[2]).unwrap();
        ops::mse_loss(&y, &aux.tensor(y.shape())).unwrap()
    }
}

pub struct MatmulNtSpec;
impl OpSpec for MatmulNtSpec {
    fn name(&self) -> &'static str {
        "matmul_nt"
    }
    fn input_shapes(&self) -> Vec<Vec<usize>> {
        vec![vec![3, 5], vec![4, 5]]
    }
    fn build<E: Element>(&self, inputs: &[Tensor<E>], aux: &mut AuxSource<E>) -> Tensor<E> {
        let y = ops::matmul_nt(&inputs[0], &inputs[1]).unwrap();
        ops::mse_loss(&y, &aux.tensor(y.shape())).unwrap()
    }
}

pub struct RowL2NormalizeSpec;
impl OpSpec for RowL2NormalizeSpec {
    fn name(&self) -> &'static str {
        "row_l2_normalize"
    }
    fn input_shapes(&self) -> Vec<Vec<usize>> {
        vec![vec![4, 6]]
    }
    fn build<E: Element>(&self, inputs: &[Tensor<E>], aux: &mut AuxSource<E>) -> Tensor<E> {
        let y = ops::row_l2_normalize(&inputs[0]).unwrap();
        ops::mse_loss(&y, &aux.tensor(y.shape())).unwrap()
    }
}

pub struct LmclLogitsSpec;
impl OpSpec for LmclLogitsSpec {
    fn name(&self) -> &'static str {
        "lmcl_logits"
    }
    fn input_shapes(&self) -> Vec<Vec<usize>> {
        vec![vec![3, 5]]
    }
    fn build<E: Element>(&self, inputs: &[Tensor<E>], aux: &mut AuxSource<E>) -> Tensor<E> {
        let labels: Vec<usize> = (0..3).map(|_| aux.index(5)).collect();
        let z = ops::lmcl_logits(&inputs[0], &labels, E::from_f64(3.0), E::from_f64(0.2)).unwrap();
        ops::mse_loss(&z, &aux.tensor(z.shape())).unwrap()
    }
}

pub struct SoftmaxCrossEntropySpec;
impl OpSpec for SoftmaxCrossEntropySpec {
    fn name(&self) -> &'static str {
        "softmax_cross_entropy"
    }
    fn input_shapes(&self) -> Vec<Vec<usize>> {
        vec![vec![4, 6]]
    }
    fn build<E: Element>(&self, inputs: &[Tensor<E>], aux: &mut AuxSource<E>) -> Tensor<E> {
        let labels: Vec<usize> = (0..4).map(|_| aux.index(6)).collect();
        ops::softmax_cross_entropy(&inputs[0], &labels).unwrap()
    }
}

pub struct MseLossSpec;
impl OpSpec for MseLossSpec {
    fn name(&self) -> &'static str {
        "mse_loss"
    }
    fn input_shapes(&self) -> Vec<Vec<usize>> {
        vec![vec![2, 3, 4, 4]]
    }
    fn build<E: Element>(&self, inputs: &[Tensor<E>], aux: &mut AuxSource<E>) -> Tensor<E> {
        ops::mse_loss(&inputs[0], &aux.tensor(inputs[0].shape())).unwrap()
    }
}

pub struct SumAllSpec;
impl OpSpec for SumAllSpec {
    fn name(&self) -> &'static str {
        "sum_all"
    }
    fn input_shapes(&self) -> Vec<Vec<usize>> {
        vec![vec![3, 4]]
    }
    fn build<E: Element>(&self, inputs: &[Tensor<E>], _aux: &mut AuxSource<E>) -> Tensor<E> {
        ops::sum_all(&inputs[0])
    }
}

/// The full large-margin head: normalize embeddings and class vectors,
/// cosine logits, margin shift, cross-entropy.
pub struct LmclFullSpec;
impl OpSpec for LmclFullSpec {
    fn name(&self) -> &'static str {
        "lmcl_full"
    }
    fn input_shapes(&self) -> Vec<Vec<usize>> {
        vec![vec![4, 8], vec![5, 8]]
    }
    fn build<E: Element>(&self, inputs: &[Tensor<E>], aux: &mut AuxSource<E>) -> Tensor<E> {
        let labels: Vec<usize> = (0..4).map(|_| aux.index(5)).collect();
        let e = ops::row_l2_normalize(&inputs[0]).unwrap();
        let w = ops::row_l2_normalize(&inputs[1]).unwrap();
        let cos = ops::matmul_nt(&e, &w).unwrap();
        let z = ops::lmcl_logits(&cos, &labels, E::from_f64(8.0), E::from_f64(0.35)).unwrap();
        ops::softmax_cross_entropy(&z, &labels).unwrap()
    }
}

/// The codec loss shape: convolution into mean-squared error.
pub struct ConvMseSpec;
impl OpSpec for ConvMseSpec {
    fn name(&self) -> &'static str {
        "conv2d+mse"
    }
    fn input_shapes(&self) -> Vec<Vec<usize>> {
        vec![vec![1, 2, 6, 6], vec![3, 2, 3, 3], vec![3]]
    }
    fn build<E: Element>(&self, inputs: &[Tensor<E>], aux: &mut AuxSource<E>) -> Tensor<E> {
        let y = ops::conv2d(&inputs[0], &inputs[1], &inputs[2], 2, 1).unwrap();
        ops::mse_loss(&y, &aux.tensor(y.shape())).unwrap()
    }
}

/// Run every spec above for each seed, returning one report per (op, seed).
pub fn check_all_ops(seeds: &[u64], cfg: &CheckConfig) -> Vec<CheckReport> {
    let mut reports = Vec::new();
    for &seed in seeds {
        reports.push(check(&Conv2dS1, seed, cfg));
        reports.push(check(&Conv2dS2, seed, cfg));
        reports.push(check(&ConvTranspose2dS2, seed, cfg));
        reports.push(check(&PreluSpec, seed, cfg));
        reports.push(check(&DropoutSpec, seed, cfg));
        reports.push(check(&TanhSpec, seed, cfg));
        reports.push(check(&AddSpec, seed, cfg));
        reports.push(check(&ReshapeSpec, seed, cfg));
        reports.push(check(&ReflectPadSpec, seed, cfg));
        reports.push(check(&Crop2dSpec, seed, cfg));
        reports.push(check(&LinearSpec, seed, cfg));
        reports.push(check(&MatmulNtSpec, seed, cfg));
        reports.push(check(&RowL2NormalizeSpec, seed, cfg));
        reports.push(check(&LmclLogitsSpec, seed, cfg));
        reports.push(check(&SoftmaxCrossEntropySpec, seed, cfg));
        reports.push(check(&MseLossSpec, seed, cfg));
        reports.push(check(&SumAllSpec, seed, cfg));
        reports.push(check(&LmclFullSpec, seed, cfg));
        reports.push(check(&ConvMseSpec, seed, cfg));
    }
    reports
}
