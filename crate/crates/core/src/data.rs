//! Synthetic class-conditional latents: one isotropic Gaussian per class,
//! centers spread evenly on a circle.

use std::f64::consts::TAU;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::nnet::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct ToyDataset {
    pub num_classes: usize,
    pub latent_dim: usize,
    pub radius: f64,
    pub stddev: f64,
    pub seed: u64,
}

impl Default for ToyDataset {
    fn default() -> Self {
        Self {
            num_classes: 8,
            latent_dim: 2,
            radius: 2.0,
            stddev: 0.15,
            seed: 0,
        }
    }
}

impl ToyDataset {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes == 0 || self.latent_dim == 0 {
            return Err(Error::InvalidArgument(
                "dataset needs at least one class and one dimension".into(),
            ));
        }
        if !(self.stddev >= 0.0 && self.stddev.is_finite() && self.radius.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "invalid dataset radius {} / stddev {}",
                self.radius, self.stddev
            )));
        }
        Ok(())
    }

    /// `R·(cos(2πc/C), sin(2πc/C))`, zero-padded beyond two dimensions.
    pub fn center(&self, class: usize) -> Vec<f64> {
        let angle = TAU * class as f64 / self.num_classes as f64;
        let mut c = vec![0.0; self.latent_dim];
        c[0] = self.radius * angle.cos();
        if self.latent_dim > 1 {
            c[1] = self.radius * angle.sin();
        }
        c
    }

    /// Latents for the given classes, in order.
    pub fn draw_for_classes<R: Rng + ?Sized>(&self, classes: &[usize], rng: &mut R) -> Result<Tensor> {
        if classes.is_empty() {
            return Err(Error::InvalidArgument("batch_size must be >= 1".into()));
        }
        let mut data = Vec::with_capacity(classes.len() * self.latent_dim);
        for &c in classes {
            if c >= self.num_classes {
                return Err(Error::InvalidArgument(format!(
                    "class {c} >= num_classes {}",
                    self.num_classes
                )));
            }
            for mu in self.center(c) {
                let g: f64 = StandardNormal.sample(rng);
                data.push(mu + self.stddev * g);
            }
        }
        Tensor::matrix(classes.len(), self.latent_dim, data)
    }

    /// Classes uniform over `0..C`, latents around each class center.
    pub fn draw_batch<R: Rng + ?Sized>(
        &self,
        batch_size: usize,
        rng: &mut R,
    ) -> Result<(Vec<usize>, Tensor)> {
        if batch_size == 0 {
            return Err(Error::InvalidArgument("batch_size must be >= 1".into()));
        }
        let classes: Vec<usize> = (0..batch_size)
            .map(|_| rng.random_range(0..self.num_classes))
            .collect();
        let z = self.draw_for_classes(&classes, rng)?;
        Ok((classes, z))
    }

    /// Evaluation reference: `n` i.i.d. draws mixed uniformly over classes.
    pub fn reference_population<R: Rng + ?Sized>(
        &self,
        n: usize,
        rng: &mut R,
    ) -> Result<(Vec<usize>, Tensor)> {
        self.draw_batch(n, rng)
    }

    /// Mixture covariance for the symmetric planar layout (`C ≥ 3`, 2-D):
    /// `(R²/2 + s²)·I`.
    pub fn planar_mixture_variance(&self) -> f64 {
        self.radius * self.radius / 2.0 + self.stddev * self.stddev
    }
}
