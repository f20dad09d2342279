//! Central-difference gradient checking. Test support; not used by the
//! production forward/backward path.
//!
//! A check builds the same scalar loss three ways: 32-bit analytic, 64-bit
//! analytic ("check mode"), and a 64-bit central-difference reference. The
//! reference is accurate to ~1e-10, so the 32-bit comparison measures the
//! production gradient's own rounding error rather than the probe's.
//!
//! Relative error uses a floored denominator,
//! |a − b| / max(|a|, |b|, floor), so gradients far below the probe's
//! resolution cannot manufacture spurious failures.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::element::Element;
use crate::graph::backward;
use crate::tensor::Tensor;

/// A differentiable computation under test: a scalar loss built from the
/// supplied gradient-tracked inputs. Auxiliary constants (targets, frozen
/// operands) must come from `aux` so every rebuild sees identical values.
pub trait OpSpec {
    fn name(&self) -> &'static str;
    fn input_shapes(&self) -> Vec<Vec<usize>>;
    fn build<E: Element>(&self, inputs: &[Tensor<E>], aux: &mut AuxSource<E>) -> Tensor<E>;
}

/// Deterministic source of auxiliary tensors, re-seeded identically for
/// every rebuild of a check.
pub struct AuxSource<E: Element> {
    rng: ChaCha8Rng,
    _marker: std::marker::PhantomData<E>,
}

impl<E: Element> AuxSource<E> {
    fn new(seed: u64) -> Self {
        AuxSource {
            rng: ChaCha8Rng::seed_from_u64(seed),
            _marker: std::marker::PhantomData,
        }
    }

    /// Uniform values in [−1, 1], identical across element widths.
    pub fn tensor(&mut self, shape: &[usize]) -> Tensor<E> {
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| E::from_f64(self.unit() * 2.0 - 1.0)).collect();
        Tensor::from_vec(shape, data).expect("lengths agree by construction")
    }

    /// One uniform draw in [0, 1).
    pub fn unit(&mut self) -> f64 {
        (self.rng.next_u32() >> 8) as f64 * (1.0 / 16_777_216.0)
    }

    pub fn index(&mut self, bound: usize) -> usize {
        (self.rng.next_u32() as usize) % bound
    }
}

#[derive(Debug, Clone, Copy)]
pub struct CheckConfig {
    /// Central-difference step (applied in the f64 probe).
    pub eps: f64,
    /// Relative-error denominator floor.
    pub floor: f64,
    /// At most this many probed elements per input tensor.
    pub samples_per_input: usize,
}

impl Default for CheckConfig {
    fn default() -> Self {
        CheckConfig {
            eps: 1e-5,
            floor: 1e-3,
            samples_per_input: 12,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CheckReport {
    pub op: &'static str,
    pub seed: u64,
    /// Probed (input index, element index) pairs.
    pub probes: usize,
    /// Max floored relative error of the 32-bit analytic gradient.
    pub max_rel_f32: f64,
    /// Max floored relative error of the 64-bit analytic gradient.
    pub max_rel_f64: f64,
}

/// Run one gradient check: random inputs from `seed`, analytic gradients in
/// both element widths, central differences as reference.
pub fn check<S: OpSpec>(spec: &S, seed: u64, cfg: &CheckConfig) -> CheckReport {
    let shapes = spec.input_shapes();
    let aux_seed = seed ^ 0x5eed_au64;

    // Master input values, bounded away from zero so kinked activations
    // (PReLU) are probed on smooth ground.
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = |n: usize| -> Vec<f64> {
        (0..n)
            .map(|_| {
                let u = (rng.next_u32() >> 8) as f64 * (1.0 / 16_777_216.0);
                let v = u * 1.9 - 0.95; // [-0.95, 0.95]
                if v >= 0.0 {
                    v + 0.05
                } else {
                    v - 0.05
                }
            })
            .collect()
    };
    let master: Vec<Vec<f64>> = shapes.iter().map(|s| draw(s.iter().product())).collect();

    // Analytic gradients at both widths.
    let grads32 = analytic_grads::<f32, S>(spec, &shapes, &master, aux_seed);
    let grads64 = analytic_grads::<f64, S>(spec, &shapes, &master, aux_seed);

    // Probe a deterministic subset of elements per input.
    let mut probe_rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e3779b97f4a7c15);
    let mut max32 = 0.0f64;
    let mut max64 = 0.0f64;
    let mut probes = 0;
    for (ti, shape) in shapes.iter().enumerate() {
        let n: usize = shape.iter().product();
        let count = cfg.samples_per_input.min(n);
        let mut picked: Vec<usize> = Vec::with_capacity(count);
        while picked.len() < count {
            let idx = (probe_rng.next_u64() as usize) % n;
            if !picked.contains(&idx) {
                picked.push(idx);
            }
        }
        for idx in picked {
            let fd = central_difference(spec, &shapes, &master, aux_seed, ti, idx, cfg.eps);
            max32 = max32.max(rel_err(grads32[ti][idx], fd, cfg.floor));
            max64 = max64.max(rel_err(grads64[ti][idx], fd, cfg.floor));
            probes += 1;
        }
    }

    CheckReport {
        op: spec.name(),
        seed,
        probes,
        max_rel_f32: max32,
        max_rel_f64: max64,
    }
}

fn rel_err(analytic: f64, reference: f64, floor: f64) -> f64 {
    (analytic - reference).abs() / analytic.abs().max(reference.abs()).max(floor)
}

fn analytic_grads<E: Element, S: OpSpec>(
    spec: &S,
    shapes: &[Vec<usize>],
    master: &[Vec<f64>],
    aux_seed: u64,
) -> Vec<Vec<f64>> {
    let inputs: Vec<Tensor<E>> = shapes
        .iter()
        .zip(master)
        .map(|(s, vals)| {
            Tensor::parameter(s, vals.iter().map(|&v| E::from_f64(v)).collect())
                .expect("lengths agree by construction")
        })
        .collect();
    let loss = spec.build(&inputs, &mut AuxSource::new(aux_seed));
    assert_eq!(loss.numel(), 1, "{}: spec must produce a scalar", spec.name());
    backward(&loss).expect("loss is scalar");
    inputs
        .iter()
        .map(|t| {
            t.grad()
                .map(|g| g.iter().map(|v| v.as_f64()).collect())
                .unwrap_or_else(|| vec![0.0; t.numel()])
        })
        .collect()
}

#[allow(clippy::too_many_arguments)]
fn central_difference<S: OpSpec>(
    spec: &S,
    shapes: &[Vec<usize>],
    master: &[Vec<f64>],
    aux_seed: u64,
    tensor_idx: usize,
    elem_idx: usize,
    eps: f64,
) -> f64 {
    let eval = |shift: f64| -> f64 {
        let inputs: Vec<Tensor<f64>> = shapes
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let mut vals = master[i].clone();
                if i == tensor_idx {
                    vals[elem_idx] += shift;
                }
                Tensor::from_vec(s, vals).expect("lengths agree by construction")
            })
            .collect();
        spec.build(&inputs, &mut AuxSource::new(aux_seed)).item()
    };
    (eval(eps) - eval(-eps)) / (2.0 * eps)
}
