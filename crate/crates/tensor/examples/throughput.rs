// quick throughput probe via the public conv2d op
use std::time::Instant;
use tcodec_tensor::{ops, Tensor, backward};

fn main() {
    // codec-pretraining shaped workload: batch 20, 64ch conv at 16x16
    let x = Tensor::parameter(&[20, 64, 16, 16], vec![0.1; 20*64*256]).unwrap();
    let w = Tensor::parameter(&[64, 64, 3, 3], vec![0.01; 64*64*9]).unwrap();
    let b = Tensor::parameter(&[64], vec![0.0; 64]).unwrap();
    let t0 = Instant::now();
    let iters = 20;
    for _ in 0..iters {
        let y = ops::conv2d(&x, &w, &b, 1, 1).unwrap();
        let tar = Tensor::from_vec(y.shape(), vec![0.0; y.numel()]).unwrap();
        let loss = ops::mse_loss(&y, &tar).unwrap();
        backward(&loss).unwrap();
        x.clear_grad(); w.clear_grad(); b.clear_grad();
    }
    let dt = t0.elapsed().as_secs_f64();
    // fwd flops: 2*Cout*Cin*9*OH*OW*N ; bwd ~2x
    let fwd = 2.0 * 64.0 * 64.0 * 9.0 * 256.0 * 20.0;
    let total = fwd * 3.0 * iters as f64;
    println!("time {:.3}s  ~{:.2} GFLOP/s", dt, total / dt / 1e9);
}
