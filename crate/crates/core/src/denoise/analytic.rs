use super::{Conditioning, DenoiseError, Denoiser};
use crate::latent::Latent;
use crate::sched::NoiseSchedule;

/// `E[ε | z_t]` for data `z0 ~ N(μ, σ0²·I)` under the forward process:
/// `√(1−ᾱ)·(z_t − √ᾱ·μ) / (ᾱ·σ0² + 1 − ᾱ)`.
pub fn analytic_predict(
    z_t: &Latent,
    alpha_bar: f64,
    mu: &Latent,
    sigma0: f64,
) -> Result<Latent, DenoiseError> {
    z_t.check_same_shape(mu)?;
    let scale = (1.0 - alpha_bar).sqrt() / (alpha_bar * sigma0 * sigma0 + 1.0 - alpha_bar);
    Ok(z_t.lincomb(scale, mu, -scale * alpha_bar.sqrt())?)
}

/// Exact posterior-mean noise predictor for isotropic Gaussian data.
#[derive(Debug, Clone)]
pub struct AnalyticGaussian {
    sched: NoiseSchedule,
    mu: Latent,
    sigma0: f64,
}

impl AnalyticGaussian {
    pub fn new(sched: NoiseSchedule, mu: Latent, sigma0: f64) -> Result<Self, DenoiseError> {
        if !(sigma0 > 0.0 && sigma0.is_finite()) {
            return Err(DenoiseError::Backend(format!(
                "sigma0 must be positive, got {sigma0}"
            )));
        }
        Ok(Self { sched, mu, sigma0 })
    }

    pub fn mu(&self) -> &Latent {
        &self.mu
    }

    pub fn sigma0(&self) -> f64 {
        self.sigma0
    }
}

impl Denoiser for AnalyticGaussian {
    fn predict(&self, z_t: &Latent, t: usize, _cond: &Conditioning) -> Result<Latent, DenoiseError> {
        let a = self
            .sched
            .alpha_bar_at(t)
            .map_err(|e| DenoiseError::Backend(e.to_string()))?;
        analytic_predict(z_t, a, &self.mu, self.sigma0)
    }
}
