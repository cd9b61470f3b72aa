use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Mixture law for decision increments: pick the small / large / average bucket
/// by its fraction, then draw uniformly inside that bucket's range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HoldingTimeSpec {
    pub u_min: f64,
    pub u_max: f64,
    /// `(p_small, p_large, p_avg)`.
    pub fractions: [f64; 3],
    pub small_range: [f64; 2],
    pub large_range: [f64; 2],
    pub avg_range: [f64; 2],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Bucket {
    Small,
    Large,
    Avg,
}

impl HoldingTimeSpec {
    pub fn new(
        u_min: f64,
        u_max: f64,
        fractions: [f64; 3],
        small_range: [f64; 2],
        large_range: [f64; 2],
        avg_range: [f64; 2],
    ) -> Result<Self> {
        let spec = Self { u_min, u_max, fractions, small_range, large_range, avg_range };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.u_min.is_finite() && self.u_min > 0.0 && self.u_max >= self.u_min) {
            return Err(Error::Config(format!(
                "holding time bounds need 0 < u_min <= u_max, got [{}, {}]",
                self.u_min, self.u_max
            )));
        }
        if self.fractions.iter().any(|p| !(*p >= 0.0)) {
            return Err(Error::Config("holding time fractions must be nonnegative".into()));
        }
        let s: f64 = self.fractions.iter().sum();
        if (s - 1.0).abs() > 1e-12 {
            return Err(Error::Config(format!("holding time fractions sum to {s}, expected 1")));
        }
        for (name, r) in [("small", self.small_range), ("large", self.large_range), ("avg", self.avg_range)] {
            if !(r[0] <= r[1] && r[0] >= self.u_min && r[1] <= self.u_max) {
                return Err(Error::Config(format!(
                    "{name} range [{}, {}] must be ordered and inside [{}, {}]",
                    r[0], r[1], self.u_min, self.u_max
                )));
            }
        }
        Ok(())
    }

    /// Degenerate law at `u`.
    pub fn fixed(u: f64) -> Result<Self> {
        Self::new(u, u, [1.0, 0.0, 0.0], [u, u], [u, u], [u, u])
    }

    /// Mixture over `[u_min, u_max]`: the small bucket spans the lowest 15% of
    /// the interval, the average bucket 15%-50%, the large bucket the top half.
    pub fn mixture(u_min: f64, u_max: f64, fractions: [f64; 3]) -> Result<Self> {
        let span = u_max - u_min;
        let a = u_min + 0.15 * span;
        let b = u_min + 0.5 * span;
        Self::new(u_min, u_max, fractions, [u_min, a], [b, u_max], [a, b])
    }

    /// Cheetah-style irregular timing: increments in `[0.002, 0.030]`,
    /// 89.1% small, 9.9% large, 1.0% average.
    pub fn cheetah() -> Self {
        Self::mixture(0.002, 0.030, [0.891, 0.099, 0.010]).expect("static spec is valid")
    }

    pub fn is_degenerate(&self) -> bool {
        self.u_min == self.u_max
    }

    pub fn range(&self, b: Bucket) -> [f64; 2] {
        match b {
            Bucket::Small => self.small_range,
            Bucket::Large => self.large_range,
            Bucket::Avg => self.avg_range,
        }
    }

    /// Mean increment.
    pub fn mean(&self) -> f64 {
        let mid = |r: [f64; 2]| 0.5 * (r[0] + r[1]);
        self.fractions[0] * mid(self.small_range)
            + self.fractions[1] * mid(self.large_range)
            + self.fractions[2] * mid(self.avg_range)
    }

    pub fn sample_bucket<R: RngCore + ?Sized>(&self, rng: &mut R) -> Bucket {
        let p: f64 = rng.random();
        if p < self.fractions[0] {
            Bucket::Small
        } else if p < self.fractions[0] + self.fractions[1] {
            Bucket::Large
        } else {
            Bucket::Avg
        }
    }

    pub fn sample_in<R: RngCore + ?Sized>(&self, bucket: Bucket, rng: &mut R) -> f64 {
        let [lo, hi] = self.range(bucket);
        let s: f64 = rng.random();
        (lo + s * (hi - lo)).clamp(self.u_min, self.u_max)
    }
}

/// Draw one holding time.
pub fn sample_holding_time<R: RngCore + ?Sized>(spec: &HoldingTimeSpec, rng: &mut R) -> f64 {
    let b = spec.sample_bucket(rng);
    spec.sample_in(b, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    #[test]
    fn degenerate_spec_returns_its_atom() {
        let spec = HoldingTimeSpec::fixed(0.01).unwrap();
        let mut rng = stream(1, 0);
        for _ in 0..100 {
            assert_eq!(sample_holding_time(&spec, &mut rng), 0.01);
        }
    }

    #[test]
    fn rejects_fractions_not_summing_to_one() {
        let r = HoldingTimeSpec::new(0.1, 0.2, [0.5, 0.4, 0.0], [0.1, 0.1], [0.2, 0.2], [0.1, 0.2]);
        assert!(matches!(r, Err(Error::Config(_))));
    }

    #[test]
    fn rejects_ranges_outside_bounds() {
        let r = HoldingTimeSpec::new(0.1, 0.2, [1.0, 0.0, 0.0], [0.05, 0.1], [0.2, 0.2], [0.1, 0.2]);
        assert!(r.is_err());
    }

    #[test]
    fn cheetah_draws_stay_in_bounds_and_match_fractions() {
        let spec = HoldingTimeSpec::cheetah();
        let mut rng = stream(7, 3);
        let n = 100_000;
        let mut counts = [0usize; 3];
        for _ in 0..n {
            let b = spec.sample_bucket(&mut rng);
            let u = spec.sample_in(b, &mut rng);
            assert!((0.002..=0.030).contains(&u));
            counts[match b {
                Bucket::Small => 0,
                Bucket::Large => 1,
                Bucket::Avg => 2,
            }] += 1;
        }
        for (c, p) in counts.iter().zip([0.891, 0.099, 0.010]) {
            assert!((*c as f64 / n as f64 - p).abs() < 0.02);
        }
    }
}
