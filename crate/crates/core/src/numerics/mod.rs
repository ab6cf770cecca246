//! Numerical building blocks: quadrature, special functions, interpolation
//! and scalar root/extremum search.

pub mod interp;
pub mod quad;
pub mod roots;
pub mod special;

/// `n` uniformly spaced points from `a` to `b` inclusive.
pub fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![a],
        _ => {
            let h = (b - a) / (n - 1) as f64;
            (0..n)
                .map(|i| if i == n - 1 { b } else { a + h * i as f64 })
                .collect()
        }
    }
}
