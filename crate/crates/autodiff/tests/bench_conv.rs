use nasdet_autodiff::tensor::{Shape, Tensor};
use nasdet_autodiff::Tape;
use std::time::Instant;

fn run(b: usize, c: usize, hw: usize, iters: usize, backward: bool) -> f64 {
    let x = Tensor::<f32>::full(Shape::new(b, c, hw, hw), 0.5);
    let k = Tensor::<f32>::full(Shape::new(c, c, 3, 3), 0.01);
    let t0 = Instant::now();
    for _ in 0..iters {
        let mut tape = Tape::new();
        let xv = tape.param(x.clone());
        let kv = tape.param(k.clone());
        let c1 = tape.conv2d(xv, kv, 1, 1).unwrap();
        let c2 = tape.conv2d(c1, kv, 1, 1).unwrap();
        let l = tape.sum(c2).unwrap();
        if backward { tape.backward(l).unwrap(); }
    }
    let dt = t0.elapsed().as_secs_f64();
    let fwd = iters as f64 * 2.0 * (2.0 * 9.0 * (c*c*hw*hw*b) as f64);
    let total = if backward { fwd * 3.0 } else { fwd };
    total / dt / 1e9
}

#[test]
#[ignore = "manual throughput probe"]
fn bench_conv() {
    println!("fwd  b8  c16 16px: {:.1} GF/s", run(8, 16, 16, 400, false));
    println!("f+b  b8  c16 16px: {:.1} GF/s", run(8, 16, 16, 300, true));
    println!("fwd  b16 c16 16px: {:.1} GF/s", run(16, 16, 16, 300, false));
    println!("f+b  b16 c16 16px: {:.1} GF/s", run(16, 16, 16, 200, true));
    println!("fwd  b8  c32 16px: {:.1} GF/s", run(8, 32, 16, 200, false));
    println!("f+b  b8  c32 16px: {:.1} GF/s", run(8, 32, 16, 150, true));
}
