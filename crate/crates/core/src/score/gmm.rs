use serde::{Deserialize, Serialize};

use super::{NoiseLevel, ScoreFunction};
use crate::error::{invalid, Error, Result};
use crate::geometry::Image;
use crate::real::Real;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MixtureMean {
    Scalar(f64),
    Field(Vec<f64>),
}

impl MixtureMean {
    fn at(&self, i: usize) -> f64 {
        match self {
            MixtureMean::Scalar(m) => *m,
            MixtureMean::Field(v) => v[i],
        }
    }
}

/// Isotropic Gaussian component `N(mean, variance I)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureComponent {
    pub mean: MixtureMean,
    pub variance: f64,
    pub weight: f64,
}

/// Mixture of isotropic Gaussians over images; its scores are exact for
/// every noise level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianMixturePrior {
    pub components: Vec<MixtureComponent>,
}

impl GaussianMixturePrior {
    pub fn new(components: Vec<MixtureComponent>) -> Result<Self> {
        let p = Self { components };
        p.validate()?;
        Ok(p)
    }

    pub fn single(mean: MixtureMean, variance: f64) -> Result<Self> {
        Self::new(vec![MixtureComponent {
            mean,
            variance,
            weight: 1.0,
        }])
    }

    pub fn validate(&self) -> Result<()> {
        if self.components.is_empty() {
            return Err(invalid("mixture", "no components"));
        }
        let mut total = 0.0;
        for c in &self.components {
            if !(c.weight > 0.0 && c.weight.is_finite()) {
                return Err(invalid("mixture", "weights must be positive"));
            }
            if !(c.variance > 0.0 && c.variance.is_finite()) {
                return Err(invalid("mixture", "variances must be positive"));
            }
            total += c.weight;
        }
        if (total - 1.0).abs() > 1e-9 {
            return Err(invalid("mixture", format!("weights sum to {total}")));
        }
        Ok(())
    }

    fn check_len(&self, n: usize) -> Result<()> {
        for c in &self.components {
            if let MixtureMean::Field(v) = &c.mean {
                if v.len() != n {
                    return Err(Error::Shape(format!("mean field has {} values, image {n}", v.len())));
                }
            }
        }
        Ok(())
    }

    /// Per-component log densities of the `sigma`-perturbed mixture, weight
    /// included.
    fn log_terms(&self, x: &[f64], sigma: f64) -> Vec<f64> {
        let d = x.len() as f64;
        self.components
            .iter()
            .map(|c| {
                let v = c.variance + sigma * sigma;
                let sq: f64 = x.iter().enumerate().map(|(i, xi)| (xi - c.mean.at(i)).powi(2)).sum();
                c.weight.ln() - 0.5 * d * (std::f64::consts::TAU * v).ln() - 0.5 * sq / v
            })
            .collect()
    }

    /// `log p_sigma(x)`.
    pub fn log_density(&self, x: &[f64], sigma: f64) -> Result<f64> {
        self.check_len(x.len())?;
        let t = self.log_terms(x, sigma);
        let m = t.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        Ok(m + t.iter().map(|v| (v - m).exp()).sum::<f64>().ln())
    }

    /// `∇ log p_sigma(x)`; responsibilities are normalized in log space.
    pub fn score_values(&self, x: &[f64], sigma: f64) -> Result<Vec<f64>> {
        self.check_len(x.len())?;
        let t = self.log_terms(x, sigma);
        let m = t.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = t.iter().map(|v| (v - m).exp()).collect();
        let z: f64 = w.iter().sum();
        let mut out = vec![0.0; x.len()];
        for (c, wk) in self.components.iter().zip(&w) {
            let r = wk / z;
            let v = c.variance + sigma * sigma;
            for (i, o) in out.iter_mut().enumerate() {
                *o -= r * (x[i] - c.mean.at(i)) / v;
            }
        }
        Ok(out)
    }

    pub fn analytic_score<T: Real>(&self, x: &Image<T>, sigma: f64) -> Result<Image<T>> {
        let xv: Vec<f64> = x.values.iter().map(|v| v.as_f64()).collect();
        let s = self.score_values(&xv, sigma)?;
        Image::from_vec(x.grid, s.into_iter().map(T::of).collect())
    }
}

impl<T: Real> ScoreFunction<T> for GaussianMixturePrior {
    fn score(&self, x: &Image<T>, level: NoiseLevel) -> Result<Image<T>> {
        self.analytic_score(x, level.sigma)
    }
}
