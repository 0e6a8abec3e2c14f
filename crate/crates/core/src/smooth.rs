//! C∞ building blocks: the exponential cutoff, the smooth step built from it,
//! the standard compactly supported bump, and the clamp function φ.

use libm::exp;
use serde::{Deserialize, Serialize};

/// `e^{-1/y}` for `y > 0`, zero otherwise. Flat to all orders at the origin.
pub fn cutoff(y: f64) -> f64 {
    if y > 0.0 {
        exp(-1.0 / y)
    } else {
        0.0
    }
}

fn cutoff_deriv(y: f64) -> f64 {
    if y > 0.0 {
        cutoff(y) / (y * y)
    } else {
        0.0
    }
}

/// Smooth step: 0 on `(-∞, 0]`, 1 on `[1, ∞)`, C∞ and increasing in between.
/// Satisfies `S(y) + S(1 - y) = 1`.
pub fn smooth_step(y: f64) -> f64 {
    if y <= 0.0 {
        0.0
    } else if y >= 1.0 {
        1.0
    } else {
        let a = cutoff(y);
        let b = cutoff(1.0 - y);
        a / (a + b)
    }
}

pub fn smooth_step_deriv(y: f64) -> f64 {
    if y <= 0.0 || y >= 1.0 {
        0.0
    } else {
        let a = cutoff(y);
        let b = cutoff(1.0 - y);
        let s = a + b;
        (cutoff_deriv(y) * b + a * cutoff_deriv(1.0 - y)) / (s * s)
    }
}

// Five-point Gauss–Legendre rule on [-1, 1].
const GL5_NODES: [f64; 5] = [
    0.0,
    -0.538_469_310_105_683_1,
    0.538_469_310_105_683_1,
    -0.906_179_845_938_664,
    0.906_179_845_938_664,
];
const GL5_WEIGHTS: [f64; 5] = [
    0.568_888_888_888_888_9,
    0.478_628_670_499_366_47,
    0.478_628_670_499_366_47,
    0.236_926_885_056_189_08,
    0.236_926_885_056_189_08,
];

/// `∫_0^y S(s) ds`, exact past the transition (`1/2 + (y - 1)` for `y ≥ 1`).
pub fn smooth_step_integral(y: f64) -> f64 {
    if y <= 0.0 {
        return 0.0;
    }
    if y >= 1.0 {
        return 0.5 + (y - 1.0);
    }
    if y > 0.5 {
        // S(s) = 1 − S(1 − s) turns the upper half into a small, accurate integral.
        return y - 0.5 + smooth_step_integral(1.0 - y);
    }
    const PANELS: usize = 16;
    let h = y / PANELS as f64;
    let mut total = 0.0;
    for p in 0..PANELS {
        let mid = (p as f64 + 0.5) * h;
        for (node, weight) in GL5_NODES.iter().zip(GL5_WEIGHTS.iter()) {
            total += weight * smooth_step(mid + 0.5 * h * node);
        }
    }
    total * 0.5 * h
}

/// Bump `exp(1 - 1/(1 - y²))` on `|y| < 1`, normalized to 1 at the origin.
pub fn bump(y: f64) -> f64 {
    let q = 1.0 - y * y;
    if q <= 0.0 {
        0.0
    } else {
        exp(1.0 - 1.0 / q)
    }
}

pub fn bump_deriv(y: f64) -> f64 {
    let q = 1.0 - y * y;
    if q <= 0.0 {
        0.0
    } else {
        bump(y) * (-2.0 * y / (q * q))
    }
}

/// The clamp φ: identity on `[-1, 1]`, odd, increasing, C∞, saturating at
/// `±(1 + width/2)`. With `width ≤ 2` it satisfies `|φ| ≤ 2` and `|φ(x)/x| ≤ 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Phi {
    pub width: f64,
}

impl Default for Phi {
    fn default() -> Self {
        Phi { width: 1.0 }
    }
}

impl Phi {
    #[inline]
    pub fn value(&self, x: f64) -> f64 {
        let ax = x.abs();
        if ax <= 1.0 {
            return x;
        }
        let y = (ax - 1.0) / self.width;
        let v = 1.0 + self.width * (y - smooth_step_integral(y));
        if x < 0.0 {
            -v
        } else {
            v
        }
    }

    #[inline]
    pub fn deriv(&self, x: f64) -> f64 {
        let ax = x.abs();
        if ax <= 1.0 {
            1.0
        } else {
            1.0 - smooth_step((ax - 1.0) / self.width)
        }
    }

    pub fn bound(&self) -> f64 {
        1.0 + 0.5 * self.width
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn step_is_symmetric() {
        for i in 0..=100 {
            let y = i as f64 / 100.0;
            assert!((smooth_step(y) + smooth_step(1.0 - y) - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn step_integral_matches_fine_trapezoid() {
        for &y in &[0.1, 0.37, 0.5, 0.81, 1.0, 2.5] {
            let n = 200_000;
            let h = y / n as f64;
            let mut s = 0.5 * (smooth_step(0.0) + smooth_step(y));
            for i in 1..n {
                s += smooth_step(i as f64 * h);
            }
            assert!((s * h - smooth_step_integral(y)).abs() < 1e-9, "y={y}");
        }
        assert!((smooth_step_integral(1.0) - 0.5).abs() < 1e-13);
    }

    #[test]
    fn step_derivative_matches_central_difference() {
        for &y in &[0.05, 0.2, 0.5, 0.77, 0.95] {
            let h = 1e-6;
            let fd = (smooth_step(y + h) - smooth_step(y - h)) / (2.0 * h);
            assert!((fd - smooth_step_deriv(y)).abs() < 1e-7);
            let fd = (bump(y + h - 0.5) - bump(y - h - 0.5)) / (2.0 * h);
            assert!((fd - bump_deriv(y - 0.5)).abs() < 1e-7);
        }
    }

    #[test]
    fn phi_properties() {
        let phi = Phi::default();
        assert_eq!(phi.value(0.0), 0.0);
        let mut prev = phi.value(-6.0);
        for i in -600..=600 {
            let x = i as f64 / 100.0;
            let v = phi.value(x);
            assert!(v >= prev - 1e-15);
            prev = v;
            assert!(v.abs() <= 2.0);
            if x != 0.0 {
                assert!((v / x).abs() <= 1.0 + 1e-15);
            }
            if (0.0..=1.0).contains(&x) {
                assert_eq!(v, x);
            }
            let h = 1e-6;
            let fd = (phi.value(x + h) - phi.value(x - h)) / (2.0 * h);
            assert!((fd - phi.deriv(x)).abs() < 1e-6, "x={x}");
        }
        assert!((phi.value(10.0) - 1.5).abs() < 1e-13);
    }
}
