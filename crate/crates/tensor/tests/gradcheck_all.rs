//! Central-difference checks for every differentiable op, in both element
//! widths. The acceptance suite re-runs these over more seeds; this is the
//! fast development gate.

use tcodec_tensor::gradcheck::CheckConfig;
use tcodec_tensor::gradcheck_specs::check_all_ops;

#[test]
fn every_op_passes_central_differences() {
    let cfg = CheckConfig::default();
    let reports = check_all_ops(&[1, 2, 3], &cfg);
    for r in &reports {
        assert!(
            r.max_rel_f32 < 1e-3,
            "{} seed {}: f32 rel err {}",
            r.op,
            r.seed,
            r.max_rel_f32
        );
        assert!(
            r.max_rel_f64 < 1e-6,
            "{} seed {}: f64 rel err {}",
            r.op,
            r.seed,
            r.max_rel_f64
        );
    }
}

#[test]
fn graph_trace_lists_ops_in_topological_order() {
    use tcodec_tensor::{ops, OpKind, Tensor};

    let x = Tensor::parameter(&[1, 2, 4, 4], vec![0.3; 32]).unwrap();
    let w = Tensor::parameter(&[2, 2, 3, 3], vec![0.1; 36]).unwrap();
    let b = Tensor::parameter(&[2], vec![0.0; 2]).unwrap();
    let y = ops::conv2d(&x, &w, &b, 1, 1).unwrap();
    let z = ops::tanh(&y);
    let t = Tensor::from_vec(z.shape(), vec![0.0; z.numel()]).unwrap();
    let loss = ops::mse_loss(&z, &t).unwrap();

    let graph = loss.trace();
    let ids: Vec<usize> = graph.nodes().iter().map(|n| n.id).collect();
    let mut sorted = ids.clone();
    sorted.sort_unstable();
    assert_eq!(ids, sorted, "nodes must come out in stamp order");
    // Every input id precedes its consumer.
    for node in graph.nodes() {
        for input in &node.input_ids {
            assert!(*input < node.id);
        }
    }
    assert!(graph.contains_op(OpKind::Conv2d));
    assert!(graph.contains_op(OpKind::Tanh));
    assert!(graph.contains_op(OpKind::MseLoss));
    assert!(!graph.contains_op(OpKind::QuantizeRoundtrip));
}
