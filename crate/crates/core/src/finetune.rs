//! Anchor-view fine-tuning with an output-preservation penalty.
//!
//! `L_final = ‖ε_φ(z_t) − ε‖² + λ·‖ε_φ(z_t) − ε_frozen(z_t)‖²` with
//! `z_t = √ᾱ_t·z0 + √(1−ᾱ_t)·ε`, summed over latent entries, time weight 1.

use std::io::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::denoise::{Conditioning, DenoiseError, ToyDenoiser};
use crate::latent::Latent;
use crate::sched::{forward_noise, NoiseSchedule, SchedError};

/// A denoiser with a flat parameter vector and a vector-Jacobian product.
pub trait Trainable: Clone {
    fn params(&self) -> &[f64];
    fn params_mut(&mut self) -> &mut [f64];
    fn forward(&self, z_t: &Latent, t: usize, cond: &Conditioning) -> Result<Latent, DenoiseError>;
    /// Output and `Jᵀ·upstream(output)`.
    fn forward_vjp(
        &self,
        z_t: &Latent,
        t: usize,
        cond: &Conditioning,
        upstream: &mut dyn FnMut(&Latent) -> Latent,
    ) -> Result<(Latent, Vec<f64>), DenoiseError>;
}

impl Trainable for ToyDenoiser {
    fn params(&self) -> &[f64] {
        ToyDenoiser::params(self)
    }

    fn params_mut(&mut self) -> &mut [f64] {
        ToyDenoiser::params_mut(self)
    }

    fn forward(&self, z_t: &Latent, t: usize, cond: &Conditioning) -> Result<Latent, DenoiseError> {
        ToyDenoiser::forward(self, z_t, t, cond)
    }

    fn forward_vjp(
        &self,
        z_t: &Latent,
        t: usize,
        cond: &Conditioning,
        upstream: &mut dyn FnMut(&Latent) -> Latent,
    ) -> Result<(Latent, Vec<f64>), DenoiseError> {
        let (out, cache) = self.forward_cached(z_t, t, cond)?;
        let g = upstream(&out);
        let mut grad = vec![0.0; self.params().len()];
        self.backward_from_cache(&cache, &g, &mut grad)?;
        Ok((out, grad))
    }
}

/// Ten-parameter affine predictor: per channel a latent scale, a bias and a
/// depth weight, plus one shared `t/T` weight. Small enough to check by hand.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineDenoiser {
    pub params: [f64; 10],
    pub total_steps: usize,
}

impl AffineDenoiser {
    pub const CHANNELS: usize = 3;
}

impl Trainable for AffineDenoiser {
    fn params(&self) -> &[f64] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn forward(&self, z_t: &Latent, t: usize, cond: &Conditioning) -> Result<Latent, DenoiseError> {
        let [c, h, w] = z_t.shape();
        if c != Self::CHANNELS {
            return Err(DenoiseError::Backend(format!("affine denoiser takes 3 channels, got {c}")));
        }
        let tt = t as f64 / self.total_steps as f64;
        let p = &self.params;
        let mut out = Latent::zeros(z_t.shape());
        for k in 0..c {
            for y in 0..h {
                for x in 0..w {
                    let d = cond.depth.values[y * w + x];
                    out.set(k, y, x, p[k] * z_t.get(k, y, x) + p[3 + k] + p[6 + k] * d + p[9] * tt);
                }
            }
        }
        Ok(out)
    }

    fn forward_vjp(
        &self,
        z_t: &Latent,
        t: usize,
        cond: &Conditioning,
        upstream: &mut dyn FnMut(&Latent) -> Latent,
    ) -> Result<(Latent, Vec<f64>), DenoiseError> {
        let out = self.forward(z_t, t, cond)?;
        let g = upstream(&out);
        let [c, h, w] = z_t.shape();
        let tt = t as f64 / self.total_steps as f64;
        let mut grad = vec![0.0; 10];
        for k in 0..c {
            for y in 0..h {
                for x in 0..w {
                    let u = g.get(k, y, x);
                    grad[k] += u * z_t.get(k, y, x);
                    grad[3 + k] += u;
                    grad[6 + k] += u * cond.depth.values[y * w + x];
                    grad[9] += u * tt;
                }
            }
        }
        Ok((out, grad))
    }
}

/// Clean latent of an anchor view with its conditioning.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Anchor {
    pub z0: Latent,
    pub cond: Conditioning,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    /// Heavy-ball SGD with coefficient `momentum`.
    Sgd,
    /// Adam with `β1 = momentum`, `β2 = 0.999`.
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FinetuneConfig {
    pub lambda: f64,
    pub steps: usize,
    pub lr: f64,
    pub optimizer: Optimizer,
    pub momentum: f64,
    /// Gradients with a larger L2 norm are rescaled to this norm; 0 disables.
    pub clip_norm: f64,
    pub seed: u64,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        Self {
            lambda: 2.5,
            steps: 500,
            lr: 1e-4,
            optimizer: Optimizer::Sgd,
            momentum: 0.9,
            clip_norm: 100.0,
            seed: 0,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum FinetuneError {
    #[error("invalid fine-tuning config: {0}")]
    Config(String),
    #[error("non-finite loss at step {step} (t={t}): fine={fine}, preserve={preserve}")]
    NonFinite { step: usize, t: usize, fine: f64, preserve: f64 },
    #[error(transparent)]
    Denoise(#[from] DenoiseError),
    #[error(transparent)]
    Sched(#[from] SchedError),
}

impl FinetuneConfig {
    pub fn validate(&self) -> Result<(), FinetuneError> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(FinetuneError::Config(format!("lambda {} must be ≥ 0", self.lambda)));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(FinetuneError::Config(format!("lr {} must be > 0", self.lr)));
        }
        if !(self.clip_norm >= 0.0) {
            return Err(FinetuneError::Config(format!("clip_norm {} must be ≥ 0", self.clip_norm)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(FinetuneError::Config(format!("momentum {} outside [0,1)", self.momentum)));
        }
        Ok(())
    }
}

fn noised(a: &Anchor, t: usize, eps: &Latent, sched: &NoiseSchedule) -> Result<Latent, FinetuneError> {
    Ok(forward_noise(&a.z0, t, eps, sched)?)
}

pub fn loss_fine<M: Trainable>(
    model: &M,
    a: &Anchor,
    t: usize,
    eps: &Latent,
    sched: &NoiseSchedule,
) -> Result<f64, FinetuneError> {
    let z_t = noised(a, t, eps, sched)?;
    let out = model.forward(&z_t, t, &a.cond)?;
    Ok(out.squared_distance(eps).map_err(DenoiseError::from)?)
}

pub fn loss_preserve<M: Trainable>(
    model: &M,
    frozen: &M,
    a: &Anchor,
    t: usize,
    eps: &Latent,
    sched: &NoiseSchedule,
) -> Result<f64, FinetuneError> {
    let z_t = noised(a, t, eps, sched)?;
    let out = model.forward(&z_t, t, &a.cond)?;
    let reference = frozen.forward(&z_t, t, &a.cond)?;
    Ok(out.squared_distance(&reference).map_err(DenoiseError::from)?)
}

/// Both terms from one shared `(z_t, t, cond)` draw.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub fine: f64,
    pub preserve: f64,
    pub total: f64,
}

pub fn loss_final<M: Trainable>(
    model: &M,
    frozen: &M,
    a: &Anchor,
    t: usize,
    eps: &Latent,
    sched: &NoiseSchedule,
    lambda: f64,
) -> Result<LossParts, FinetuneError> {
    Ok(loss_final_grad_inner(model, frozen, a, t, eps, sched, lambda, false)?.0)
}

/// Loss parts and the parameter gradient of `L_final`.
pub fn loss_final_grad<M: Trainable>(
    model: &M,
    frozen: &M,
    a: &Anchor,
    t: usize,
    eps: &Latent,
    sched: &NoiseSchedule,
    lambda: f64,
) -> Result<(LossParts, Vec<f64>), FinetuneError> {
    let (parts, grad) = loss_final_grad_inner(model, frozen, a, t, eps, sched, lambda, true)?;
    Ok((parts, grad.expect("gradient requested")))
}

#[allow(clippy::too_many_arguments)]
fn loss_final_grad_inner<M: Trainable>(
    model: &M,
    frozen: &M,
    a: &Anchor,
    t: usize,
    eps: &Latent,
    sched: &NoiseSchedule,
    lambda: f64,
    want_grad: bool,
) -> Result<(LossParts, Option<Vec<f64>>), FinetuneError> {
    let z_t = noised(a, t, eps, sched)?;
    // λ = 0 skips the frozen pass so the result is exactly L_fine.
    let reference = if lambda != 0.0 {
        Some(frozen.forward(&z_t, t, &a.cond)?)
    } else {
        None
    };
    let mut upstream = |out: &Latent| {
        let mut g = out.lincomb(2.0, eps, -2.0).expect("shapes checked");
        if let Some(r) = &reference {
            let d = out.lincomb(2.0 * lambda, r, -2.0 * lambda).expect("shapes checked");
            g = g.lincomb(1.0, &d, 1.0).expect("shapes checked");
        }
        g
    };
    let (out, grad) = if want_grad {
        let (o, g) = model.forward_vjp(&z_t, t, &a.cond, &mut upstream)?;
        (o, Some(g))
    } else {
        (model.forward(&z_t, t, &a.cond)?, None)
    };
    let fine = out.squared_distance(eps).map_err(DenoiseError::from)?;
    let preserve = match &reference {
        Some(r) => out.squared_distance(r).map_err(DenoiseError::from)?,
        None => 0.0,
    };
    let total = if lambda != 0.0 { fine + lambda * preserve } else { fine };
    Ok((LossParts { fine, preserve, total }, grad))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub step: usize,
    pub t: usize,
    pub fine: f64,
    pub preserve: f64,
    pub total: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub rows: Vec<LogRow>,
}

impl TrainingLog {
    pub fn write_csv(&self, path: impl AsRef<Path>) -> std::io::Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(f, "step,t,l_fine,l_pre,l_final")?;
        for r in &self.rows {
            writeln!(f, "{},{},{},{},{}", r.step, r.t, r.fine, r.preserve, r.total)?;
        }
        f.flush()
    }

    /// Mean `L_final` over `rows[lo..hi]`.
    pub fn window_mean(&self, lo: usize, hi: usize) -> f64 {
        let w = &self.rows[lo..hi];
        w.iter().map(|r| r.total).sum::<f64>() / w.len() as f64
    }

    pub fn summary(&self, window: usize) -> serde_json::Value {
        let n = self.rows.len();
        let w = window.min(n);
        serde_json::json!({
            "steps": n,
            "initial_window_l_final": if w > 0 { Some(self.window_mean(0, w)) } else { None },
            "final_window_l_final": if w > 0 { Some(self.window_mean(n - w, n)) } else { None },
            "last": self.rows.last(),
        })
    }
}

const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// First-order descent on `L_final`, one uniformly drawn anchor, timestep and
/// noise per step. The frozen reference is a snapshot taken on entry.
pub fn finetune_loop<M: Trainable>(
    model: &mut M,
    anchors: &[Anchor],
    sched: &NoiseSchedule,
    cfg: &FinetuneConfig,
) -> Result<TrainingLog, FinetuneError> {
    cfg.validate()?;
    let mut log = TrainingLog::default();
    if cfg.steps == 0 {
        return Ok(log);
    }
    if anchors.is_empty() {
        return Err(FinetuneError::Config("no anchor samples".into()));
    }
    let frozen = model.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut velocity = vec![0.0; model.params().len()];
    let mut second = match cfg.optimizer {
        Optimizer::Adam => vec![0.0; velocity.len()],
        Optimizer::Sgd => Vec::new(),
    };
    let total = sched.total_steps();
    for step in 0..cfg.steps {
        let a = &anchors[rng.gen_range(0..anchors.len())];
        let t = rng.gen_range(1..=total);
        let eps = Latent::gaussian(a.z0.shape(), &mut rng);
        let (parts, mut grad) = loss_final_grad(model, &frozen, a, t, &eps, sched, cfg.lambda)?;
        if !parts.total.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(FinetuneError::NonFinite {
                step,
                t,
                fine: parts.fine,
                preserve: parts.preserve,
            });
        }
        if cfg.clip_norm > 0.0 {
            let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
            if norm > cfg.clip_norm {
                grad.iter_mut().for_each(|g| *g *= cfg.clip_norm / norm);
            }
        }
        match cfg.optimizer {
            Optimizer::Sgd => {
                for ((p, v), g) in model.params_mut().iter_mut().zip(&mut velocity).zip(&grad) {
                    *v = cfg.momentum * *v + g;
                    *p -= cfg.lr * *v;
                }
            }
            Optimizer::Adam => {
                let k = step as i32 + 1;
                let (c1, c2) = (1.0 - cfg.momentum.powi(k), 1.0 - ADAM_BETA2.powi(k));
                let params = model.params_mut().iter_mut();
                for (((p, m), v), g) in params.zip(&mut velocity).zip(&mut second).zip(&grad) {
                    *m = cfg.momentum * *m + (1.0 - cfg.momentum) * g;
                    *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
                    *p -= cfg.lr * (*m / c1) / ((*v / c2).sqrt() + ADAM_EPS);
                }
            }
        }
        log.rows.push(LogRow {
            step,
            t,
            fine: parts.fine,
            preserve: parts.preserve,
            total: parts.total,
        });
    }
    Ok(log)
}

/// Mean `L_pre` of `model` against `frozen` over fixed random draws.
pub fn mean_preserve<M: Trainable>(
    model: &M,
    frozen: &M,
    samples: &[Anchor],
    sched: &NoiseSchedule,
    draws: usize,
    seed: u64,
) -> Result<f64, FinetuneError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut acc = 0.0;
    for _ in 0..draws {
        let a = &samples[rng.gen_range(0..samples.len())];
        let t = rng.gen_range(1..=sched.total_steps());
        let eps = Latent::gaussian(a.z0.shape(), &mut rng);
        acc += loss_preserve(model, frozen, a, t, &eps, sched)?;
    }
    Ok(acc / draws as f64)
}

/// Largest absolute per-parameter change.
pub fn max_drift(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Euclidean parameter distance.
pub fn param_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}
