//! Noise schedules, deterministic DDIM stepping and the resampling inpainter.
//!
//! Timesteps index `alpha_bar` directly: `alpha_bar[0] == 1` is clean data and
//! `alpha_bar[T]` is (almost) pure noise. Sampling walks a strictly increasing
//! sub-sequence `tau` of `1..=T` from its top down to `0`; "the previous
//! timestep" always means the adjacent element of `tau` (or `0` below
//! `tau[0]`).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::denoise::{Conditioning, DenoiseError, Denoiser};
use crate::latent::{Latent, LatentMask, ShapeError};

const LINEAR_BETA_START: f64 = 1e-4;
const LINEAR_BETA_END: f64 = 2e-2;
const COSINE_OFFSET: f64 = 0.008;
const COSINE_MAX_BETA: f64 = 0.999;

#[derive(Debug, thiserror::Error)]
pub enum SchedError {
    #[error("schedule needs at least one timestep")]
    NoTimesteps,
    #[error("cannot take {steps} sampling steps out of {total} timesteps")]
    InvalidSteps { steps: usize, total: usize },
    #[error("timestep {t} outside schedule of length {total}")]
    OutOfRange { t: usize, total: usize },
    #[error("DDIM step must go backwards: t={t}, t_prev={t_prev}")]
    Ordering { t: usize, t_prev: usize },
    #[error(transparent)]
    Shape(#[from] ShapeError),
    #[error("denoiser failed at t={t}: {source}")]
    Denoiser {
        t: usize,
        #[source]
        source: DenoiseError,
    },
    #[error("non-finite latent produced at t={t}")]
    NonFinite { t: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleKind {
    Linear,
    Cosine,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    kind: ScheduleKind,
    alpha_bar: Vec<f64>,
    tau: Vec<usize>,
}

impl NoiseSchedule {
    /// Builds a `total`-step schedule whose sampling sub-sequence is the full
    /// `1..=total`; use [`NoiseSchedule::with_sampling_steps`] to thin it.
    pub fn new(total: usize, kind: ScheduleKind) -> Result<Self, SchedError> {
        if total < 1 {
            return Err(SchedError::NoTimesteps);
        }
        let betas: Vec<f64> = match kind {
            ScheduleKind::Linear => {
                if total == 1 {
                    vec![LINEAR_BETA_START]
                } else {
                    let step = (LINEAR_BETA_END - LINEAR_BETA_START) / (total - 1) as f64;
                    (0..total)
                        .map(|i| LINEAR_BETA_START + step * i as f64)
                        .collect()
                }
            }
            ScheduleKind::Cosine => {
                let f = |t: usize| {
                    let x = (t as f64 / total as f64 + COSINE_OFFSET) / (1.0 + COSINE_OFFSET);
                    (x * std::f64::consts::FRAC_PI_2).cos().powi(2)
                };
                (1..=total)
                    .map(|t| (1.0 - f(t) / f(t - 1)).min(COSINE_MAX_BETA))
                    .collect()
            }
        };
        let mut alpha_bar = Vec::with_capacity(total + 1);
        alpha_bar.push(1.0);
        let mut acc = 1.0;
        for b in betas {
            acc *= 1.0 - b;
            alpha_bar.push(acc);
        }
        Ok(Self {
            kind,
            alpha_bar,
            tau: (1..=total).collect(),
        })
    }

    /// Replaces the sampling sub-sequence with `steps` evenly spaced timesteps
    /// `⌊s·T/steps⌋`, `s = 1..=steps`. The top element is always `T`.
    pub fn with_sampling_steps(mut self, steps: usize) -> Result<Self, SchedError> {
        let total = self.total_steps();
        if steps < 1 || steps > total {
            return Err(SchedError::InvalidSteps { steps, total });
        }
        self.tau = (1..=steps).map(|s| s * total / steps).collect();
        Ok(self)
    }

    pub fn kind(&self) -> ScheduleKind {
        self.kind
    }

    pub fn total_steps(&self) -> usize {
        self.alpha_bar.len() - 1
    }

    pub fn alpha_bar(&self) -> &[f64] {
        &self.alpha_bar
    }

    pub fn alpha_bar_at(&self, t: usize) -> Result<f64, SchedError> {
        self.alpha_bar
            .get(t)
            .copied()
            .ok_or(SchedError::OutOfRange {
                t,
                total: self.total_steps(),
            })
    }

    pub fn tau(&self) -> &[usize] {
        &self.tau
    }

    /// `(t, t_prev)` pairs in sampling order, ending with `(tau[0], 0)`.
    pub fn sampling_pairs(&self) -> Vec<(usize, usize)> {
        (0..self.tau.len())
            .rev()
            .map(|i| (self.tau[i], if i == 0 { 0 } else { self.tau[i - 1] }))
            .collect()
    }
}

/// `√ᾱ_t·z0 + √(1−ᾱ_t)·eps`.
pub fn forward_noise(
    z0: &Latent,
    t: usize,
    eps: &Latent,
    sched: &NoiseSchedule,
) -> Result<Latent, SchedError> {
    let a = sched.alpha_bar_at(t)?;
    Ok(z0.lincomb(a.sqrt(), eps, (1.0 - a).sqrt())?)
}

/// Clean-sample estimate `(z_t − √(1−ᾱ_t)·ε̂)/√ᾱ_t`.
pub fn predict_z0(
    z_t: &Latent,
    eps_hat: &Latent,
    t: usize,
    sched: &NoiseSchedule,
) -> Result<Latent, SchedError> {
    let a = sched.alpha_bar_at(t)?;
    let s = a.sqrt();
    Ok(z_t.lincomb(1.0 / s, eps_hat, -(1.0 - a).sqrt() / s)?)
}

/// One deterministic (η = 0) DDIM update from `t` to `t_prev`.
pub fn ddim_step(
    z_t: &Latent,
    eps_hat: &Latent,
    t: usize,
    t_prev: usize,
    sched: &NoiseSchedule,
) -> Result<Latent, SchedError> {
    if t_prev >= t {
        return Err(SchedError::Ordering { t, t_prev });
    }
    let a = sched.alpha_bar_at(t)?;
    let a_prev = sched.alpha_bar_at(t_prev)?;
    let z0_hat = predict_z0(z_t, eps_hat, t, sched)?;
    // Direction pointing back to z_t, rescaled to the previous noise level.
    let dir = z_t.lincomb(1.0, &z0_hat, -a.sqrt())?;
    Ok(z0_hat.lincomb(
        a_prev.sqrt(),
        &dir,
        (1.0 - a_prev).sqrt() / (1.0 - a).sqrt(),
    )?)
}

/// `known ⊙ (1−M) + unknown ⊙ M`, the mask broadcast over channels.
pub fn inpaint_merge(
    z_unknown: &Latent,
    z_known: &Latent,
    mask: &LatentMask,
) -> Result<Latent, SchedError> {
    z_unknown.check_same_shape(z_known)?;
    mask.check_against(z_known)?;
    let mut out = z_known.clone();
    let plane = mask.height() * mask.width();
    let src = z_unknown.data();
    for (i, v) in out.data_mut().iter_mut().enumerate() {
        if mask.cells()[i % plane] {
            *v = src[i];
        }
    }
    Ok(out)
}

/// Resampling repetitions `R` and DDIM step count `S`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ResampleConfig {
    pub repeats: usize,
    pub steps: usize,
}

impl Default for ResampleConfig {
    fn default() -> Self {
        Self {
            repeats: 3,
            steps: 30,
        }
    }
}

fn predict(
    denoiser: &dyn Denoiser,
    z_t: &Latent,
    t: usize,
    cond: &Conditioning,
) -> Result<Latent, SchedError> {
    let eps = denoiser
        .predict(z_t, t, cond)
        .map_err(|source| SchedError::Denoiser { t, source })?;
    z_t.check_same_shape(&eps)?;
    Ok(eps)
}

fn check_finite(z: &Latent, t: usize) -> Result<(), SchedError> {
    if z.is_finite() {
        Ok(())
    } else {
        Err(SchedError::NonFinite { t })
    }
}

/// Plain DDIM inpainting: one denoise-and-merge per timestep, no resampling.
///
/// Draws the same noise stream as [`resample_loop`] with zero repeats.
pub fn inpaint_loop(
    denoiser: &dyn Denoiser,
    z0_known: &Latent,
    mask: &LatentMask,
    cond: &Conditioning,
    sched: &NoiseSchedule,
    seed: u64,
) -> Result<Latent, SchedError> {
    mask.check_against(z0_known)?;
    if mask.is_all_known() {
        return Ok(z0_known.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut z = Latent::gaussian(z0_known.shape(), &mut rng);
    for (t, t_prev) in sched.sampling_pairs() {
        let eps = Latent::gaussian(z0_known.shape(), &mut rng);
        let known = forward_noise(z0_known, t_prev, &eps, sched)?;
        let eps_hat = predict(denoiser, &z, t, cond)?;
        let unknown = ddim_step(&z, &eps_hat, t, t_prev, sched)?;
        z = inpaint_merge(&unknown, &known, mask)?;
        check_finite(&z, t_prev)?;
    }
    Ok(z)
}

/// Non-Markovian resampling inpainter.
///
/// At every `(t, t_prev)` of the schedule the known branch is re-noised from
/// `z0_known`, the unknown branch takes one DDIM step, and the two are merged.
/// The merged latent is then pushed back to `t` with the one-shot forward
/// transition `N(√(ᾱ_t/ᾱ_prev)·z, (1−ᾱ_t/ᾱ_prev)·I)`, denoised again and
/// re-merged, `cfg.repeats` times. Every merge draws fresh noise for the
/// known branch, so cells with `mask == false` always hold an exact forward
/// sample of `z0_known` (and `z0_known` itself at the end).
pub fn resample_loop(
    denoiser: &dyn Denoiser,
    z0_known: &Latent,
    mask: &LatentMask,
    cond: &Conditioning,
    sched: &NoiseSchedule,
    cfg: &ResampleConfig,
    seed: u64,
) -> Result<Latent, SchedError> {
    resample_loop_traced(denoiser, z0_known, mask, cond, sched, cfg, seed, |_, _, _, _| {})
}

/// [`resample_loop`] with a hook observing every merge as
/// `(t_prev, repetition, merged, known_branch)`; repetition `0` is the initial
/// merge.
#[allow(clippy::too_many_arguments)]
pub fn resample_loop_traced<F>(
    denoiser: &dyn Denoiser,
    z0_known: &Latent,
    mask: &LatentMask,
    cond: &Conditioning,
    sched: &NoiseSchedule,
    cfg: &ResampleConfig,
    seed: u64,
    mut on_merge: F,
) -> Result<Latent, SchedError>
where
    F: FnMut(usize, usize, &Latent, &Latent),
{
    mask.check_against(z0_known)?;
    if mask.is_all_known() {
        return Ok(z0_known.clone());
    }
    let shape = z0_known.shape();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut z = Latent::gaussian(shape, &mut rng);
    for (t, t_prev) in sched.sampling_pairs() {
        let eps = Latent::gaussian(shape, &mut rng);
        let known = forward_noise(z0_known, t_prev, &eps, sched)?;
        let eps_hat = predict(denoiser, &z, t, cond)?;
        let unknown = ddim_step(&z, &eps_hat, t, t_prev, sched)?;
        let mut merged = inpaint_merge(&unknown, &known, mask)?;
        on_merge(t_prev, 0, &merged, &known);

        let ratio = sched.alpha_bar_at(t)? / sched.alpha_bar_at(t_prev)?;
        for r in 1..=cfg.repeats {
            let xi = Latent::gaussian(shape, &mut rng);
            let renoised = merged.lincomb(ratio.sqrt(), &xi, (1.0 - ratio).sqrt())?;
            let eps_hat = predict(denoiser, &renoised, t, cond)?;
            let unknown = ddim_step(&renoised, &eps_hat, t, t_prev, sched)?;
            let eps = Latent::gaussian(shape, &mut rng);
            let known = forward_noise(z0_known, t_prev, &eps, sched)?;
            merged = inpaint_merge(&unknown, &known, mask)?;
            on_merge(t_prev, r, &merged, &known);
        }
        check_finite(&merged, t_prev)?;
        z = merged;
    }
    Ok(z)
}

/// Unconditional deterministic DDIM from a given `z_T` down to `t = 0`.
pub fn ddim_sample(
    denoiser: &dyn Denoiser,
    z_top: &Latent,
    cond: &Conditioning,
    sched: &NoiseSchedule,
) -> Result<Latent, SchedError> {
    let mut z = z_top.clone();
    for (t, t_prev) in sched.sampling_pairs() {
        let eps_hat = predict(denoiser, &z, t, cond)?;
        z = ddim_step(&z, &eps_hat, t, t_prev, sched)?;
    }
    Ok(z)
}
