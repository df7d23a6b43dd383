use daof::core::Rng;
use daof::nn::{Mat, MlpNet, Scratch};
use std::time::Instant;

fn main() {
    let mut rng = Rng::new(0);
    for (dims, name) in [
        (vec![80, 256, 256, 256, 2], "3x256 in80"),
        (vec![80, 128, 128, 128, 2], "3x128 in80"),
        (vec![282, 256, 256, 256, 5], "3x256 in282"),
        (vec![15, 128, 128, 128, 2], "3x128 in15"),
    ] {
        let net = MlpNet::new(&dims, &mut rng);
        let x: Vec<f64> = (0..dims[0]).map(|_| rng.normal()).collect();
        let mut scratch = Scratch::default();
        let mut out = Vec::new();
        // single-sample inference
        let n = 2000;
        let t0 = Instant::now();
        let mut acc = 0.0;
        for _ in 0..n {
            net.forward_into(&x, &mut scratch, &mut out);
            acc += out[0];
        }
        let single_us = t0.elapsed().as_secs_f64() * 1e6 / n as f64;
        // batch 20 forward+backward
        let rows: Vec<Vec<f64>> = (0..20).map(|_| (0..dims[0]).map(|_| rng.normal()).collect()).collect();
        let row_refs: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
        let batch = Mat::from_rows(&row_refs);
        let t0 = Instant::now();
        let m = 300;
        for _ in 0..m {
            let (y, cache) = net.forward_batch(&batch).unwrap();
            let og = Mat { rows: y.rows, cols: y.cols, data: y.data.iter().map(|v| v * 0.1).collect() };
            let (g, _) = net.backward(&cache, &og);
            acc += g.layers[0].w[0];
        }
        let fb_ms = t0.elapsed().as_secs_f64() * 1e3 / m as f64;
        println!("{name}: single fwd {single_us:.1} us, batch20 fwd+bwd {fb_ms:.3} ms  (sink {acc:.3e})");
    }
}
