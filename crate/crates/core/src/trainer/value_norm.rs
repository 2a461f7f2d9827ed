/// Lower bound on the value-normalization standard deviation.
pub const SIGMA_FLOOR: f64 = 1e-6;

/// Running mean and variance of returns, merged batch by batch.
#[derive(Clone, Debug, PartialEq)]
pub struct ValueNormStats {
    mean: f64,
    var: f64,
    count: u64,
}

impl Default for ValueNormStats {
    fn default() -> Self {
        ValueNormStats {
            mean: 0.0,
            var: 1.0,
            count: 0,
        }
    }
}

impl ValueNormStats {
    /// Restores statistics from a mean, (unfloored) standard deviation and count.
    pub fn from_parts(mean: f64, std: f64, count: u64) -> Self {
        ValueNormStats {
            mean,
            var: std * std,
            count,
        }
    }

    /// Restores statistics exactly from a mean, (unfloored) variance and count.
    pub fn from_variance(mean: f64, var: f64, count: u64) -> Self {
        ValueNormStats { mean, var, count }
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn variance(&self) -> f64 {
        self.var
    }

    pub fn raw_std(&self) -> f64 {
        self.var.sqrt()
    }

    pub fn sigma(&self) -> f64 {
        self.raw_std().max(SIGMA_FLOOR)
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn normalize(&self, x: f64) -> f64 {
        (x - self.mean) / self.sigma()
    }

    pub fn denormalize(&self, x: f64) -> f64 {
        x * self.sigma() + self.mean
    }

    /// Merges a batch into the running statistics (parallel-variance update).
    pub fn update(&mut self, batch: &[f64]) {
        if batch.is_empty() {
            return;
        }
        let n = batch.len() as f64;
        let b_mean = batch.iter().sum::<f64>() / n;
        let b_var = batch.iter().map(|x| (x - b_mean) * (x - b_mean)).sum::<f64>() / n;
        if self.count == 0 {
            self.mean = b_mean;
            self.var = b_var;
        } else {
            let m = self.count as f64;
            let total = m + n;
            let delta = b_mean - self.mean;
            self.mean += delta * n / total;
            let m2 = self.var * m + b_var * n + delta * delta * m * n / total;
            self.var = (m2 / total).max(0.0);
        }
        self.count += batch.len() as u64;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn identity_stats() {
        let s = ValueNormStats::default();
        assert_eq!(s.normalize(3.5), 3.5);
        assert_eq!(s.denormalize(3.5), 3.5);
    }

    #[test]
    fn worked_example() {
        let s = ValueNormStats::from_parts(5.0, 2.0, 10);
        assert_eq!(s.normalize(9.0), 2.0);
    }

    #[test]
    fn merged_updates_match_pooled_statistics() {
        let data: Vec<f64> = (0..100).map(|i| ((i * 37) % 17) as f64 * 0.3 - 2.0).collect();
        let mut s = ValueNormStats::default();
        for chunk in data.chunks(13) {
            s.update(chunk);
        }
        let n = data.len() as f64;
        let mean = data.iter().sum::<f64>() / n;
        let var = data.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        assert!((s.mean() - mean).abs() < 1e-12);
        assert!((s.raw_std() - var.sqrt()).abs() < 1e-12);
        assert_eq!(s.count(), 100);
    }

    #[test]
    fn constant_stream_respects_floor() {
        let mut s = ValueNormStats::default();
        for _ in 0..50 {
            s.update(&[4.2; 64]);
            assert!(s.sigma() >= SIGMA_FLOOR);
        }
        assert_eq!(s.sigma(), SIGMA_FLOOR);
        assert!(s.normalize(4.2).abs() < 1e-6);
    }

    proptest! {
        #[test]
        fn round_trip(x in -1e4f64..1e4, mean in -100.0f64..100.0, std in 0.0f64..50.0) {
            let s = ValueNormStats::from_parts(mean, std, 1);
            let back = s.denormalize(s.normalize(x));
            prop_assert!((back - x).abs() <= 1e-12 * x.abs().max(1.0));
        }

        #[test]
        fn count_never_decreases(batches in proptest::collection::vec(proptest::collection::vec(-10.0f64..10.0, 0..20), 1..10)) {
            let mut s = ValueNormStats::default();
            let mut last = 0;
            for b in &batches {
                s.update(b);
                prop_assert!(s.count() >= last);
                prop_assert!(s.sigma() >= SIGMA_FLOOR);
                last = s.count();
            }
        }
    }
}
