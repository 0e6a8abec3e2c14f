//! Discrete stochastic calculus on grid processes (values indexed `0..=N`).

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

fn check_len(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::GridMismatch { expected, got });
    }
    Ok(())
}

/// `I_0 = 0`, `I_k = I_{k−1} + H_k Δ_kX`. `h[k−1]` holds the predictable `H_k`.
pub fn stochastic_integral(h: &[f64], x: &[f64]) -> Result<Vec<f64>> {
    if x.is_empty() {
        return Err(Error::GridMismatch { expected: 1, got: 0 });
    }
    check_len(x.len() - 1, h.len())?;
    let mut out = Vec::with_capacity(x.len());
    let mut acc = 0.0;
    out.push(acc);
    for k in 1..x.len() {
        acc += h[k - 1] * (x[k] - x[k - 1]);
        out.push(acc);
    }
    Ok(out)
}

/// Exponential of `W` started at index `u`: 1 up to `u`, then `E_k = E_{k−1}(1 + Δ_kW)`.
pub fn doleans_exponential(w: &[f64], u: usize) -> Vec<f64> {
    let mut out = vec![1.0; w.len()];
    for k in (u + 1)..w.len() {
        out[k] = out[k - 1] * (1.0 + (w[k] - w[k - 1]));
    }
    out
}

/// Solution of `ΔX_k = (X_{k−1} + ΔV_k)ΔW_k + ΔV_k` from `X_u = a`, evaluated
/// through the explicit product formula `X_k = E_k (a + Σ_{j=u+1..k} ΔV_j / E_{j−1})`.
/// Entries before `u` are set to `a`.
pub fn affine_solve(u: usize, a: f64, w: &[f64], v: &[f64]) -> Result<Vec<f64>> {
    check_len(w.len(), v.len())?;
    if u >= w.len() {
        return Err(Error::GridMismatch {
            expected: u + 1,
            got: w.len(),
        });
    }
    for k in (u + 1)..w.len() {
        if w[k] - w[k - 1] <= -1.0 {
            return Err(Error::Domain {
                step: k,
                reason: "exponential increment at or below -1",
            });
        }
        if v[k] - v[k - 1] < 0.0 {
            return Err(Error::Domain {
                step: k,
                reason: "drift increment is negative",
            });
        }
    }
    let e = doleans_exponential(w, u);
    let mut out = vec![a; w.len()];
    let mut sum = a;
    for k in (u + 1)..w.len() {
        sum += (v[k] - v[k - 1]) / e[k - 1];
        out[k] = e[k] * sum;
    }
    Ok(out)
}

/// Builds a process from its increments, starting at `x0`.
pub fn cumulate(x0: f64, increments: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(increments.len() + 1);
    let mut acc = x0;
    out.push(acc);
    for d in increments {
        acc += d;
        out.push(acc);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn integral_examples() {
        let x = [0.0, 0.1, -0.1];
        let i = stochastic_integral(&[1.0, 2.0], &x).unwrap();
        assert!(i.iter().zip([0.0, 0.1, -0.3]).all(|(a, b)| (a - b).abs() < 1e-15));
        assert_eq!(stochastic_integral(&[0.0, 0.0], &x).unwrap(), vec![0.0; 3]);
        assert!(stochastic_integral(&[1.0], &x).is_err());
    }

    #[test]
    fn exponential_examples() {
        let e = doleans_exponential(&[0.0, 0.5, 0.3], 0);
        assert_eq!(e, vec![1.0, 1.5, 1.5 * 0.8]);
        let e = doleans_exponential(&[0.0, -1.0, 3.0, 0.0], 0);
        assert_eq!(&e[1..], &[0.0, 0.0, 0.0]);
        assert_eq!(doleans_exponential(&[0.2; 4], 1), vec![1.0; 4]);
    }

    #[test]
    fn affine_examples() {
        let x = affine_solve(0, 0.3, &[0.0; 3], &[0.0, 0.1, 0.3]).unwrap();
        assert!((x[1] - 0.4).abs() < 1e-15 && (x[2] - 0.6).abs() < 1e-15);
        let x = affine_solve(0, 0.3, &[0.0, 1.0], &[0.0, 0.5]).unwrap();
        assert!((x[1] - 1.6).abs() < 1e-15);
        let w = [0.0, 0.2, -0.1, 0.4];
        assert_eq!(affine_solve(1, 1.0, &w, &[0.0; 4]).unwrap(), doleans_exponential(&w, 1));
        assert!(matches!(
            affine_solve(0, 0.3, &[0.0, -1.0], &[0.0, 0.0]),
            Err(Error::Domain { step: 1, .. })
        ));
        assert!(affine_solve(0, 0.3, &[0.0, 0.0], &[0.0, -0.1]).is_err());
    }

    proptest! {
        #[test]
        fn affine_matches_recursion(
            a in 0.0f64..2.0,
            u in 0usize..5,
            dw in prop::collection::vec(-0.5f64..0.5, 40),
            dv in prop::collection::vec(0.0f64..0.1, 40),
        ) {
            let w = cumulate(0.0, &dw);
            let v = cumulate(0.0, &dv);
            let x = affine_solve(u, a, &w, &v).unwrap();
            let mut prev = a;
            for k in (u + 1)..w.len() {
                let next = prev + (prev + dv[k - 1]) * dw[k - 1] + dv[k - 1];
                prop_assert!((x[k] - next).abs() <= 1e-12 * (1.0 + next.abs()));
                prev = next;
            }
            prop_assert!(x.iter().all(|&v| v >= 0.0));
            let first_drift = (u + 1..w.len()).find(|&k| dv[k - 1] > 0.0);
            if let Some(k0) = first_drift {
                prop_assert!(x[k0..].iter().all(|&v| v > 0.0));
            }
        }

        #[test]
        fn exponential_solves_its_equation(dw in prop::collection::vec(-0.9f64..1.0, 1..60)) {
            let w = cumulate(0.0, &dw);
            let e = doleans_exponential(&w, 0);
            for k in 1..e.len() {
                prop_assert!((e[k] - e[k - 1] - e[k - 1] * dw[k - 1]).abs() <= 1e-12 * e[k - 1].abs().max(1.0));
            }
        }
    }
}
