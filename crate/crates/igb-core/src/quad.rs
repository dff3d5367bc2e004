//! Composite-Simpson quadrature used to check density normalizations and
//! to turn densities into distribution functions for KS comparisons.

/// Integrate `f` over `[a, b]` with `n` panels (rounded up to even).
pub fn simpson<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, n: usize) -> f64 {
    let n = if n % 2 == 0 { n.max(2) } else { n + 1 };
    let h = (b - a) / n as f64;
    let mut acc = f(a) + f(b);
    for i in 1..n {
        let x = a + h * i as f64;
        acc += f(x) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    acc * h / 3.0
}

/// Cumulative integral of `f` from `a`, sampled on `n + 1` evenly spaced
/// grid points up to `b`. Returns `(grid, cumulative)`; panel-wise Simpson
/// on pairs of half-steps keeps the cumulative values O(h^4)-accurate.
pub fn cumulative<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, n: usize) -> (Vec<f64>, Vec<f64>) {
    let n = n.max(2);
    let h = (b - a) / n as f64;
    let mut grid = Vec::with_capacity(n + 1);
    let mut cum = Vec::with_capacity(n + 1);
    grid.push(a);
    cum.push(0.0);
    let mut total = 0.0;
    for i in 0..n {
        let x0 = a + h * i as f64;
        let x1 = x0 + h;
        let xm = 0.5 * (x0 + x1);
        total += (f(x0) + 4.0 * f(xm) + f(x1)) * h / 6.0;
        grid.push(x1);
        cum.push(total);
    }
    (grid, cum)
}
