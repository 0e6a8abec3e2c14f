//! Streaming moments with a deterministic merge, and the z-test built on them.

use serde::{Deserialize, Serialize};

/// Count, mean and centred second moment (Welford), mergeable in a fixed order.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Moments {
    pub n: u64,
    pub mean: f64,
    pub m2: f64,
}

impl Moments {
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let d = x - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (x - self.mean);
    }

    pub fn merge(&mut self, o: &Moments) {
        if o.n == 0 {
            return;
        }
        if self.n == 0 {
            *self = *o;
            return;
        }
        let n = self.n + o.n;
        let d = o.mean - self.mean;
        self.mean += d * o.n as f64 / n as f64;
        self.m2 += o.m2 + d * d * (self.n as f64 * o.n as f64) / n as f64;
        self.n = n;
    }

    pub fn variance(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            self.m2 / (self.n - 1) as f64
        }
    }

    /// Standard error of the mean.
    pub fn se(&self) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            (self.variance() / self.n as f64).sqrt()
        }
    }

    /// `|mean| / se`; zero when the sample is degenerate at 0, infinite when
    /// it is degenerate elsewhere.
    pub fn z(&self) -> f64 {
        let se = self.se();
        if se > 0.0 {
            self.mean.abs() / se
        } else if self.mean == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn known_sample() {
        let mut m = Moments::default();
        for x in [1.0, 2.0, 3.0, 4.0] {
            m.push(x);
        }
        assert_eq!(m.mean, 2.5);
        assert!((m.variance() - 5.0 / 3.0).abs() < 1e-15);
        assert!((m.se() - (5.0f64 / 12.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn degenerate_samples() {
        let mut m = Moments::default();
        m.push(0.0);
        m.push(0.0);
        assert_eq!(m.z(), 0.0);
        let mut c = Moments::default();
        c.push(1.0);
        c.push(1.0);
        assert!(c.z().is_infinite());
    }

    proptest! {
        #[test]
        fn merge_matches_single_pass(xs in prop::collection::vec(-10.0f64..10.0, 2..60), cut in 0usize..60) {
            let cut = cut.min(xs.len());
            let mut all = Moments::default();
            xs.iter().for_each(|&x| all.push(x));
            let (mut a, mut b) = (Moments::default(), Moments::default());
            xs[..cut].iter().for_each(|&x| a.push(x));
            xs[cut..].iter().for_each(|&x| b.push(x));
            a.merge(&b);
            prop_assert_eq!(a.n, all.n);
            prop_assert!((a.mean - all.mean).abs() < 1e-12);
            prop_assert!((a.m2 - all.m2).abs() < 1e-9 * (1.0 + all.m2));
        }
    }
}
