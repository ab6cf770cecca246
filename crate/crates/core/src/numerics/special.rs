//! Real exponential integrals.

pub const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

/// E₁(x) = ∫_x^∞ e^{-t}/t dt for x > 0.
pub fn e1(x: f64) -> f64 {
    assert!(x > 0.0, "e1 requires x > 0, got {x}");
    if x <= 1.0 {
        let mut sum = 0.0;
        let mut term = 1.0;
        let mut k = 1.0;
        loop {
            term *= -x / k;
            let add = term / k;
            sum += add;
            if add.abs() < 1e-17 * sum.abs().max(1e-300) {
                break;
            }
            k += 1.0;
        }
        -EULER_GAMMA - x.ln() - sum
    } else {
        // Modified Lentz evaluation of the continued fraction.
        let tiny = 1e-300;
        let mut b = x + 1.0;
        let mut c = 1.0 / tiny;
        let mut d = 1.0 / b;
        let mut h = d;
        for i in 1..10_000 {
            let an = -(i as f64) * (i as f64);
            b += 2.0;
            d = 1.0 / (an * d + b);
            c = b + an / c;
            let del = c * d;
            h *= del;
            if (del - 1.0).abs() < 1e-16 {
                break;
            }
        }
        h * (-x).exp()
    }
}

/// e^x·E₁(x), finite for large x where the factors separately under/overflow.
pub fn e1_scaled(x: f64) -> f64 {
    if x <= 1.0 {
        x.exp() * e1(x)
    } else if x > 700.0 {
        // Asymptotic series; x is large enough that four terms are exact to
        // machine precision.
        let r = 1.0 / x;
        r * (1.0 - r * (1.0 - 2.0 * r * (1.0 - 3.0 * r)))
    } else {
        e1(x) * x.exp()
    }
}

/// Ei(x) = -PV∫_{-x}^∞ e^{-t}/t dt for x > 0.
pub fn ei(x: f64) -> f64 {
    assert!(x > 0.0, "ei requires x > 0, got {x}");
    if x < 40.0 {
        let mut sum = 0.0;
        let mut fact = 1.0;
        let mut k = 1.0;
        loop {
            fact *= x / k;
            let add = fact / k;
            sum += add;
            if add < 1e-17 * sum {
                break;
            }
            k += 1.0;
        }
        EULER_GAMMA + x.ln() + sum
    } else {
        let mut sum = 1.0;
        let mut term = 1.0;
        let mut k = 1.0;
        loop {
            let prev = term;
            term *= k / x;
            if term < 1e-17 || term > prev {
                break;
            }
            sum += term;
            k += 1.0;
        }
        x.exp() * sum / x
    }
}
