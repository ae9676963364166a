use cgram_autodiff::kernels;
use std::time::Instant;

fn bench_mm(m: usize, k: usize, n: usize, reps: usize) {
    let a: Vec<f64> = (0..m * k).map(|i| (i as f64).sin()).collect();
    let b: Vec<f64> = (0..k * n).map(|i| (i as f64).cos()).collect();
    let mut c = vec![0.0; m * n];
    let t0 = Instant::now();
    for _ in 0..reps {
        kernels::mm(&a, &b, m, k, n, &mut c);
    }
    let dt = t0.elapsed().as_secs_f64();
    let gflops = (2.0 * (m * k * n * reps) as f64) / dt / 1e9;
    println!("mm    {m}x{k}x{n}: {gflops:.2} Gflop/s");
}

fn bench_mm_nt(m: usize, k: usize, n: usize, reps: usize) {
    let a: Vec<f64> = (0..m * k).map(|i| (i as f64).sin()).collect();
    let b: Vec<f64> = (0..n * k).map(|i| (i as f64).cos()).collect();
    let mut c = vec![0.0; m * n];
    let t0 = Instant::now();
    for _ in 0..reps {
        kernels::mm_nt(&a, &b, m, k, n, &mut c);
    }
    let dt = t0.elapsed().as_secs_f64();
    let gflops = (2.0 * (m * k * n * reps) as f64) / dt / 1e9;
    println!("mm_nt {m}x{k}x{n}: {gflops:.2} Gflop/s");
}

fn bench_mm_tn(k: usize, m: usize, n: usize, reps: usize) {
    let a: Vec<f64> = (0..k * m).map(|i| (i as f64).sin()).collect();
    let b: Vec<f64> = (0..k * n).map(|i| (i as f64).cos()).collect();
    let mut c = vec![0.0; m * n];
    let t0 = Instant::now();
    for _ in 0..reps {
        kernels::mm_tn(&a, &b, k, m, n, &mut c);
    }
    let dt = t0.elapsed().as_secs_f64();
    let gflops = (2.0 * (m * k * n * reps) as f64) / dt / 1e9;
    println!("mm_tn {k}x{m}x{n}: {gflops:.2} Gflop/s");
}

fn main() {
    // fc1 shapes (the training hot spot) and conv-as-matmul shapes
    bench_mm(128, 4608, 256, 20);
    bench_mm_nt(128, 4608, 256, 20);
    bench_mm_tn(128, 4608, 256, 20);
    bench_mm_nt(128 * 576, 18, 16, 10);   // conv1 im2col product
    bench_mm_nt(128 * 144, 144, 32, 10);  // conv2 im2col product
    bench_mm(128 * 144, 32, 144, 10);     // convT1 column product
    bench_mm(128, 256, 4608, 10);         // decoder fc
}
