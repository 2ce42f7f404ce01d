use slimfl::nn::{AdamState, Tensor, Width};
use slimfl::slim::{build_ul_mobilenet, superposition_train_step, UpdateRule};
use std::time::Instant;

fn main() {
    unsafe {
        libc::mallopt(libc::M_MMAP_THRESHOLD, 256 << 20);
        libc::mallopt(libc::M_TRIM_THRESHOLD, 256 << 20);
    }
    let mut model = build_ul_mobilenet::<f32>(1);
    let mut adam = AdamState::new(&model.params, Default::default());
    let batch = 32;
    let n = batch * 28 * 28;
    let images = Tensor::new(
        vec![batch, 28, 28, 1],
        (0..n).map(|i| ((i as f32) * 0.117).sin()).collect(),
    );
    let labels: Vec<u8> = (0..batch).map(|i| (i % 10) as u8).collect();
    for _ in 0..3 {
        superposition_train_step(&mut model, &images, &labels, 0.5, 0.5, UpdateRule::Adam(&mut adam)).unwrap();
    }
    let iters = 40;
    let t0 = Instant::now();
    for _ in 0..iters {
        superposition_train_step(&mut model, &images, &labels, 0.5, 0.5, UpdateRule::Adam(&mut adam)).unwrap();
    }
    let dt = t0.elapsed().as_secs_f64() / iters as f64;
    println!("superposition step (batch {batch}): {:.1} ms", dt * 1e3);

    let (logits, cache) = model.forward(&images, Width::Full);
    let t0 = Instant::now();
    for _ in 0..iters {
        let _ = model.forward(&images, Width::Full);
    }
    println!("fw full: {:.2} ms  (logit {})", t0.elapsed().as_secs_f64() / iters as f64 * 1e3, logits.data[0]);
    let (_, dl) = slimfl::nn::softmax_cross_entropy_batch(&logits, &labels);
    let t0 = Instant::now();
    for _ in 0..iters {
        let _ = slimfl::nn::backward(&model.specs, &model.params, &cache, &dl);
    }
    println!("bw full: {:.2} ms", t0.elapsed().as_secs_f64() / iters as f64 * 1e3);
}
