use rand::Rng;
use rand_distr::StandardNormal;

const LOG_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Diagonal Gaussian over actions with a learned, state-independent log
/// standard deviation.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianHead {
    pub log_std: Vec<f64>,
}

impl GaussianHead {
    pub fn new(dim: usize, init_std: f64) -> Self {
        GaussianHead {
            log_std: vec![init_std.ln(); dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.log_std.len()
    }

    pub fn std(&self) -> Vec<f64> {
        self.log_std.iter().map(|l| l.exp()).collect()
    }

    pub fn sample<R: Rng>(&self, mean: &[f64], rng: &mut R) -> Vec<f64> {
        mean.iter()
            .zip(&self.log_std)
            .map(|(m, l)| m + l.exp() * rng.sample::<f64, _>(StandardNormal))
            .collect()
    }

    pub fn log_prob(&self, mean: &[f64], action: &[f64]) -> f64 {
        mean.iter()
            .zip(action)
            .zip(&self.log_std)
            .map(|((m, a), l)| {
                let z = (a - m) / l.exp();
                -0.5 * z * z - l - LOG_SQRT_2PI
            })
            .sum()
    }

    pub fn entropy(&self) -> f64 {
        self.log_std.iter().map(|l| 0.5 + LOG_SQRT_2PI + l).sum()
    }

    /// Gradients of `log_prob` with respect to the mean (written into
    /// `d_mean`, scaled by `scale`) and accumulated into `d_log_std`.
    pub fn log_prob_grad(&self, mean: &[f64], action: &[f64], scale: f64, d_mean: &mut [f64], d_log_std: &mut [f64]) {
        for i in 0..mean.len() {
            let var = (2.0 * self.log_std[i]).exp();
            let diff = action[i] - mean[i];
            d_mean[i] = scale * diff / var;
            d_log_std[i] += scale * (diff * diff / var - 1.0);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn log_prob_matches_normal_density() {
        let head = GaussianHead {
            log_std: vec![0.3f64.ln(), 1.2f64.ln()],
        };
        let mean = [0.1, -0.5];
        let a = [0.4, 0.9];
        let pdf = |x: f64, m: f64, s: f64| (-(x - m) * (x - m) / (2.0 * s * s)).exp() / (s * (2.0 * std::f64::consts::PI).sqrt());
        let want = pdf(0.4, 0.1, 0.3).ln() + pdf(0.9, -0.5, 1.2).ln();
        assert!((head.log_prob(&mean, &a) - want).abs() < 1e-10);
        let ent = 0.5 * (2.0 * std::f64::consts::PI * std::f64::consts::E * 0.09).ln()
            + 0.5 * (2.0 * std::f64::consts::PI * std::f64::consts::E * 1.44).ln();
        assert!((head.entropy() - ent).abs() < 1e-10);
    }

    #[test]
    fn seeded_sampling_is_reproducible() {
        let head = GaussianHead::new(3, 1.0);
        let a = head.sample(&[0.0; 3], &mut ChaCha8Rng::seed_from_u64(9));
        let b = head.sample(&[0.0; 3], &mut ChaCha8Rng::seed_from_u64(9));
        assert_eq!(a, b);
    }
}
