use std::time::Instant;
fn main() {
    let xs: Vec<f64> = (0..1_000_000).map(|i| (i as f64 % 8.0) - 4.0 + 0.001).collect();
    let t0 = Instant::now();
    let mut acc = 0.0;
    for &x in &xs { acc += libm::erf(x * std::f64::consts::FRAC_1_SQRT_2); }
    println!("libm::erf: {:.1} ns/call (sink {acc:.3})", t0.elapsed().as_secs_f64() * 1e9 / xs.len() as f64);
    let t0 = Instant::now();
    let mut acc = 0.0;
    for &x in &xs { acc += x.tanh(); }
    println!("f64::tanh: {:.1} ns/call (sink {acc:.3})", t0.elapsed().as_secs_f64() * 1e9 / xs.len() as f64);
    let t0 = Instant::now();
    let mut acc = 0.0;
    for &x in &xs { acc += (-0.5*x*x).exp(); }
    println!("f64::exp: {:.1} ns/call (sink {acc:.3})", t0.elapsed().as_secs_f64() * 1e9 / xs.len() as f64);
    let t0 = Instant::now();
    let mut acc = 0.0;
    for &x in &xs { acc += x.atan(); }
    println!("f64::atan: {:.1} ns/call (sink {acc:.3})", t0.elapsed().as_secs_f64() * 1e9 / xs.len() as f64);
    let t0 = Instant::now();
    let mut acc = 0.0;
    for &x in &xs { acc += x.sin(); }
    println!("f64::sin: {:.1} ns/call (sink {acc:.3})", t0.elapsed().as_secs_f64() * 1e9 / xs.len() as f64);
    let t0 = Instant::now();
    let mut acc = 0.0;
    for &x in &xs { acc += x.abs().ln(); }
    println!("f64::ln: {:.1} ns/call (sink {acc:.3})", t0.elapsed().as_secs_f64() * 1e9 / xs.len() as f64);
}
