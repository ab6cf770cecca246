//! Globally adaptive Gauss-Kronrod (7/15) quadrature for complex integrands.
//!
//! Intervals are kept in a max-heap keyed on their error estimate and the
//! worst one is bisected until the summed error meets the tolerance. Ties are
//! broken by insertion order, so results are bit-reproducible.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::C64;

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

#[derive(Debug, Clone, Copy)]
pub struct QuadOptions {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_intervals: usize,
}

impl Default for QuadOptions {
    fn default() -> Self {
        QuadOptions {
            abs_tol: 1e-12,
            rel_tol: 1e-10,
            max_intervals: 4000,
        }
    }
}

impl QuadOptions {
    pub fn tol(abs_tol: f64, rel_tol: f64) -> Self {
        QuadOptions {
            abs_tol,
            rel_tol,
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct QuadResult {
    pub value: C64,
    pub error: f64,
    pub evaluations: usize,
    pub converged: bool,
}

fn gk15<F: Fn(f64) -> C64>(f: &F, a: f64, b: f64) -> (C64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kronrod = fc * WGK[7];
    let mut gauss = fc * WG[3];
    for j in 0..7 {
        let dx = h * XGK[j];
        let s = f(c - dx) + f(c + dx);
        kronrod += s * WGK[j];
        if j % 2 == 1 {
            gauss += s * WG[j / 2];
        }
    }
    let k = kronrod * h;
    let g = gauss * h;
    (k, (k - g).norm())
}

struct Segment {
    a: f64,
    b: f64,
    value: C64,
    error: f64,
    order: usize,
}

impl PartialEq for Segment {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Segment {}
impl PartialOrd for Segment {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Segment {
    fn cmp(&self, other: &Self) -> Ordering {
        self.error
            .total_cmp(&other.error)
            .then_with(|| other.order.cmp(&self.order))
    }
}

/// Integrates `f` over `[a, b]`, with the interval pre-split at `breaks`
/// (points outside `(a, b)` are ignored).
pub fn integrate<F: Fn(f64) -> C64>(
    f: F,
    a: f64,
    b: f64,
    breaks: &[f64],
    opts: QuadOptions,
) -> QuadResult {
    if a == b {
        return QuadResult {
            value: C64::new(0.0, 0.0),
            error: 0.0,
            evaluations: 0,
            converged: true,
        };
    }
    let (lo, hi, sign) = if a < b { (a, b, 1.0) } else { (b, a, -1.0) };
    let mut pts: Vec<f64> = breaks
        .iter()
        .copied()
        .filter(|x| x.is_finite() && *x > lo && *x < hi)
        .collect();
    pts.push(lo);
    pts.push(hi);
    pts.sort_by(f64::total_cmp);
    pts.dedup();

    let mut heap = BinaryHeap::new();
    let mut order = 0usize;
    let mut total = C64::new(0.0, 0.0);
    let mut err = 0.0;
    for w in pts.windows(2) {
        let (v, e) = gk15(&f, w[0], w[1]);
        total += v;
        err += e;
        heap.push(Segment {
            a: w[0],
            b: w[1],
            value: v,
            error: e,
            order,
        });
        order += 1;
    }
    let mut evaluations = 15 * heap.len();
    while err > opts.abs_tol.max(opts.rel_tol * total.norm()) && heap.len() < opts.max_intervals {
        let worst = heap.pop().expect("non-empty heap");
        let mid = 0.5 * (worst.a + worst.b);
        if !(mid > worst.a && mid < worst.b) {
            // Interval no longer divisible in floating point.
            heap.push(worst);
            break;
        }
        let (v1, e1) = gk15(&f, worst.a, mid);
        let (v2, e2) = gk15(&f, mid, worst.b);
        evaluations += 30;
        total += v1 + v2 - worst.value;
        err += e1 + e2 - worst.error;
        heap.push(Segment {
            a: worst.a,
            b: mid,
            value: v1,
            error: e1,
            order,
        });
        heap.push(Segment {
            a: mid,
            b: worst.b,
            value: v2,
            error: e2,
            order: order + 1,
        });
        order += 2;
    }
    // Re-sum to shed accumulated cancellation error from the running updates.
    let mut segs: Vec<Segment> = heap.into_vec();
    segs.sort_by(|x, y| x.a.total_cmp(&y.a));
    let value: C64 = segs.iter().map(|s| s.value).sum();
    let error: f64 = segs.iter().map(|s| s.error).sum();
    QuadResult {
        value: value * sign,
        error,
        evaluations,
        converged: error <= opts.abs_tol.max(opts.rel_tol * value.norm()),
    }
}

/// Integrates `f` over `[a, ∞)` via `x = a + scale·(1 − s)/s`, `s ∈ (0, 1]`.
/// The integrand must decay at least as fast as `1/x²`.
pub fn integrate_to_infinity<F: Fn(f64) -> C64>(
    f: F,
    a: f64,
    scale: f64,
    opts: QuadOptions,
) -> QuadResult {
    let g = |s: f64| {
        let x = a + scale * (1.0 - s) / s;
        f(x) * (scale / (s * s))
    };
    integrate(g, 0.0, 1.0, &[], opts)
}

/// Real-valued convenience wrapper.
pub fn integrate_real<F: Fn(f64) -> f64>(
    f: F,
    a: f64,
    b: f64,
    breaks: &[f64],
    opts: QuadOptions,
) -> (f64, f64) {
    let r = integrate(|x| C64::new(f(x), 0.0), a, b, breaks, opts);
    (r.value.re, r.error)
}
