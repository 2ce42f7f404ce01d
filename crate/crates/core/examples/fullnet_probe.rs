use slimfl::nn::{forward, LayerSpec, Tensor, Width};
use slimfl::slim::{build_ul_mobilenet, ul_mobilenet_specs};
use std::time::Instant;

fn main() {
    unsafe {
        libc::mallopt(libc::M_MMAP_THRESHOLD, 256 << 20);
        libc::mallopt(libc::M_TRIM_THRESHOLD, 256 << 20);
    }
    let model = build_ul_mobilenet::<f32>(1);
    let batch = 32;
    let images = Tensor::new(
        vec![batch, 28, 28, 1],
        (0..batch * 784).map(|i| (i as f32 * 0.117).sin()).collect(),
    );
    // Time prefixes of the net: cost of layer k = t(prefix k) - t(prefix k-1).
    let specs = ul_mobilenet_specs();
    let mut prev = 0.0;
    for upto in 1..=specs.len() {
        let sub: Vec<LayerSpec> = specs[..upto].to_vec();
        // Parameter subset for the prefix.
        let n_tensors = sub.iter().map(|s| match s.kind {
            slimfl::nn::LayerKind::StandardConv | slimfl::nn::LayerKind::DepthwiseConv => 1,
            slimfl::nn::LayerKind::Linear => 2,
            _ => 0,
        }).sum::<usize>();
        let params = slimfl::nn::ParamSet {
            tensors: model.params.tensors[..n_tensors].to_vec(),
        };
        let _ = forward(&sub, &params, &images, Width::Full);
        let iters = 30;
        let t0 = Instant::now();
        for _ in 0..iters {
            let _ = forward(&sub, &params, &images, Width::Full);
        }
        let ms = t0.elapsed().as_secs_f64() / iters as f64 * 1e3;
        println!("prefix {upto:2} (+{:?}): {:.2} ms (delta {:.2})", specs[upto - 1].kind, ms, ms - prev);
        prev = ms;
    }
}
