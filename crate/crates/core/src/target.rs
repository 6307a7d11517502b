//! Differentiable log densities consumed by the samplers.

/// Unnormalized log density over a flat real vector.
pub trait LogDensity: Sync {
    fn dim(&self) -> usize;

    fn log_density(&self, x: &[f64]) -> f64;

    /// Value with the gradient written (not accumulated) into `grad`.
    fn log_density_grad(&self, x: &[f64], grad: &mut [f64]) -> f64;
}

impl<T: LogDensity + ?Sized> LogDensity for &T {
    fn dim(&self) -> usize {
        (**self).dim()
    }

    fn log_density(&self, x: &[f64]) -> f64 {
        (**self).log_density(x)
    }

    fn log_density_grad(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        (**self).log_density_grad(x, grad)
    }
}

/// Diagonal Gaussian, mostly for testing samplers.
#[derive(Debug, Clone)]
pub struct DiagGaussian {
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
}

impl DiagGaussian {
    pub fn new(mean: Vec<f64>, sd: Vec<f64>) -> Self {
        assert_eq!(mean.len(), sd.len());
        Self { mean, sd }
    }

    pub fn standard(dim: usize) -> Self {
        Self::new(vec![0.0; dim], vec![1.0; dim])
    }
}

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

impl LogDensity for DiagGaussian {
    fn dim(&self) -> usize {
        self.mean.len()
    }

    fn log_density(&self, x: &[f64]) -> f64 {
        x.iter()
            .zip(self.mean.iter().zip(&self.sd))
            .map(|(xi, (m, s))| {
                let z = (xi - m) / s;
                -0.5 * z * z - s.ln() - LN_SQRT_2PI
            })
            .sum()
    }

    fn log_density_grad(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        for (g, (xi, (m, s))) in grad.iter_mut().zip(x.iter().zip(self.mean.iter().zip(&self.sd))) {
            *g = -(xi - m) / (s * s);
        }
        self.log_density(x)
    }
}

/// Central finite-difference gradient of `f` with step `h` per coordinate.
pub fn central_difference<F: Fn(&[f64]) -> f64>(f: F, x: &[f64], h: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + h;
            let up = f(&probe);
            probe[i] = x[i] - h;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}
