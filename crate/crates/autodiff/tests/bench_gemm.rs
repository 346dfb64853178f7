#[test]
#[ignore = "manual throughput probe"]
fn bench_gemm() {
    for &(m, k, n) in &[(16usize, 144usize, 2048usize), (16, 144, 1024), (32, 288, 2048), (16, 16, 2048), (64, 576, 2048), (16, 144, 256)] {
        let a = vec![0.5f32; m * k];
        let b = vec![0.25f32; k * n];
        let mut c = vec![0.0f32; m * n];
        let iters = (2e9 / (2.0 * (m * k * n) as f64)) as usize;
        let t0 = std::time::Instant::now();
        for _ in 0..iters {
            unsafe {
                matrixmultiply::sgemm(m, k, n, 1.0, a.as_ptr(), k as isize, 1, b.as_ptr(), n as isize, 1, 0.0, c.as_mut_ptr(), n as isize, 1);
            }
        }
        let dt = t0.elapsed().as_secs_f64();
        let gf = iters as f64 * 2.0 * (m * k * n) as f64 / dt / 1e9;
        println!("m={m:3} k={k:3} n={n:5}: {gf:.1} GF/s single-thread");
    }
}
