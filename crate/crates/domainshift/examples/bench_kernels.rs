//! Rough throughput check for the convolution kernels (not a shipped tool).

use std::time::Instant;

use domainshift::tensor::{
    conv2d_backward, conv2d_forward, convtranspose2d_backward, convtranspose2d_forward, ConvSpec,
    Tensor,
};

fn filled(shape: [usize; 4]) -> Tensor {
    let numel: usize = shape.iter().product();
    let data: Vec<f32> = (0..numel).map(|i| ((i % 97) as f32) * 0.01 - 0.5).collect();
    Tensor::from_vec(shape, data).unwrap()
}

fn bench_conv(name: &str, spec: ConvSpec, input_shape: [usize; 4], iters: usize) {
    let input = filled(input_shape);
    let ws = spec.weight_shape();
    let weight = filled(ws);
    let bias = vec![0.1f32; spec.out_channels];
    let (oh, ow) = spec.out_hw(input_shape[2], input_shape[3]).unwrap();
    let macs_fwd = if spec.transposed {
        input_shape[0] * spec.in_channels * input_shape[2] * input_shape[3]
            * spec.out_channels * spec.kernel * spec.kernel
    } else {
        input_shape[0] * spec.out_channels * oh * ow * spec.in_channels * spec.kernel * spec.kernel
    };

    let t0 = Instant::now();
    let mut out = None;
    for _ in 0..iters {
        out = Some(if spec.transposed {
            convtranspose2d_forward(&input, &weight, &bias, &spec).unwrap()
        } else {
            conv2d_forward(&input, &weight, &bias, &spec).unwrap()
        });
    }
    let fwd = t0.elapsed().as_secs_f64() / iters as f64;

    let upstream = filled(out.unwrap().shape());
    let t0 = Instant::now();
    for _ in 0..iters {
        if spec.transposed {
            convtranspose2d_backward(&input, &weight, &spec, &upstream).unwrap();
        } else {
            conv2d_backward(&input, &weight, &spec, &upstream).unwrap();
        }
    }
    let bwd = t0.elapsed().as_secs_f64() / iters as f64;

    println!(
        "{name}: fwd {:>7.3} ms ({:>6.2} GFLOP/s) | bwd {:>7.3} ms ({:>6.2} GFLOP/s)",
        fwd * 1e3,
        2.0 * macs_fwd as f64 / fwd / 1e9,
        bwd * 1e3,
        2.0 * 2.0 * macs_fwd as f64 / bwd / 1e9,
    );
}

fn main() {
    let iters = 20;
    println!("batch 32 @ 64x64 (shifter layers):");
    bench_conv("  L1 conv 3->64 k3 s2 p1  ", ConvSpec::conv(3, 64, 3, 2, 1), [32, 3, 64, 64], iters);
    bench_conv("  L2 conv 64->128 k3 s2 p1", ConvSpec::conv(64, 128, 3, 2, 1), [32, 64, 32, 32], iters);
    bench_conv("  L3 convT 128->64 k2 s2  ", ConvSpec::transposed(128, 64, 2, 2, 0), [32, 128, 16, 16], iters);
    bench_conv("  L4 convT 64->3 k2 s2    ", ConvSpec::transposed(64, 3, 2, 2, 0), [32, 64, 32, 32], iters);
    println!("batch 32 @ 64x64 (classifier blocks):");
    bench_conv("  C1 conv 3->16 k3 s2 p1  ", ConvSpec::conv(3, 16, 3, 2, 1), [32, 3, 64, 64], iters);
    bench_conv("  C2 conv 16->32 k3 s2 p1 ", ConvSpec::conv(16, 32, 3, 2, 1), [32, 16, 32, 32], iters);
    bench_conv("  C3 conv 32->64 k3 s2 p1 ", ConvSpec::conv(32, 64, 3, 2, 1), [32, 32, 16, 16], iters);
    bench_conv("  C4 conv 64->64 k3 s2 p1 ", ConvSpec::conv(64, 64, 3, 2, 1), [32, 64, 8, 8], iters);
}
