use slimfl::nn::{gemm, MatView};
use std::time::Instant;

fn main() {
    for (m, k, n) in [(25088usize, 32usize, 64usize), (25088, 32, 32), (25088, 9, 32)] {
        let a = vec![0.5f32; m * k];
        let b = vec![0.25f32; k * n];
        let mut c = vec![0f32; m * n];
        gemm(1.0, MatView::dense(&a, m, k), false, MatView::dense(&b, k, n), false, 0.0, &mut c, m, n, n);
        let iters = 200;
        let t0 = Instant::now();
        for _ in 0..iters {
            gemm(1.0, MatView::dense(&a, m, k), false, MatView::dense(&b, k, n), false, 1.0, &mut c, m, n, n);
        }
        let dt = t0.elapsed().as_secs_f64();
        println!("M={m} K={k} N={n}: {:.2} GMAC/s (sink {})", (m * k * n * iters) as f64 / dt / 1e9, c[0]);
    }
}
