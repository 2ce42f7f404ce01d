use slimfl::nn::{forward, init_params, LayerSpec, Tensor, Width};
use slimfl::rng::{stream, StreamKind};
use std::time::Instant;

fn time_specs(name: &str, specs: &[LayerSpec], input: &Tensor<f32>, iters: usize) {
    let mut rng = stream(1, StreamKind::Other { tag: 77 });
    let params = init_params::<f32, _>(specs, &mut rng);
    let _ = forward(specs, &params, input, Width::Full);
    let t0 = Instant::now();
    for _ in 0..iters {
        let _ = forward(specs, &params, input, Width::Full);
    }
    println!("{name}: {:.2} ms", t0.elapsed().as_secs_f64() / iters as f64 * 1e3);
}

fn main() {
    unsafe {
        libc::mallopt(libc::M_MMAP_THRESHOLD, 256 << 20);
        libc::mallopt(libc::M_TRIM_THRESHOLD, 256 << 20);
    }
    let batch = 32;
    let img1 = Tensor::new(
        vec![batch, 28, 28, 1],
        (0..batch * 784).map(|i| (i as f32 * 0.117).sin()).collect(),
    );
    let img32 = Tensor::new(
        vec![batch, 28, 28, 32],
        (0..batch * 784 * 32).map(|i| (i as f32 * 0.017).sin()).collect(),
    );
    let iters = 50;
    time_specs("conv1 3x3 1->32", &[LayerSpec::conv(1, 32, 3)], &img1, iters);
    time_specs("depthwise 3x3 @32", &[LayerSpec::depthwise(32, 3)], &img32, iters);
    time_specs("pointwise 32->32", &[LayerSpec::conv(32, 32, 1)], &img32, iters);
    time_specs("pointwise 32->64", &[LayerSpec::conv(32, 64, 1)], &img32, iters);
    time_specs("relu6 @32", &[LayerSpec::relu6(32)], &img32, iters);
    time_specs("pool @32", &[LayerSpec::global_avg_pool(32)], &img32, iters);
}
