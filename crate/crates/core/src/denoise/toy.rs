//! A small trainable depth-aware noise predictor.
//!
//! Three dilated "same" convolutions with `tanh` between them. The input
//! stacks the latent channels, the depth map and a constant `t/T` plane; the
//! prompt token selects a learned bias added to the first hidden layer.
//!
//! Inputs and outputs are preconditioned per timestep, EDM-style: the latent
//! enters scaled to unit variance, the convolution output is scaled by
//! `k(t)`, and a per-channel gated skip adds `g·c(t)·z_t`, where `c(t)` is
//! the optimal linear noise predictor for zero-mean data of standard
//! deviation [`DATA_STD`]. All parameters live in one flat vector so
//! optimizers and gradient checks can treat the network as a function of `R^n`.

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine as _;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{Conditioning, DenoiseError, Denoiser};
use crate::latent::{Latent, ShapeError};
use crate::sched::{NoiseSchedule, ScheduleKind};

/// Assumed latent standard deviation behind the skip path.
pub const DATA_STD: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToyArch {
    pub latent_channels: usize,
    pub hidden: usize,
    /// Odd kernel side shared by all three layers.
    pub kernel: usize,
    pub dilations: [usize; 3],
    pub num_tokens: usize,
}

impl Default for ToyArch {
    fn default() -> Self {
        Self {
            latent_channels: 3,
            hidden: 64,
            kernel: 3,
            dilations: [1, 2, 4],
            num_tokens: 16,
        }
    }
}

/// Offsets of each parameter block inside the flat vector.
#[derive(Debug, Clone, Copy)]
struct Layout {
    w1: usize,
    b1: usize,
    tok: usize,
    w2: usize,
    b2: usize,
    w3: usize,
    b3: usize,
    skip: usize,
    len: usize,
}

impl ToyArch {
    pub fn input_channels(&self) -> usize {
        self.latent_channels + 2
    }

    fn layout(&self) -> Layout {
        let k2 = self.kernel * self.kernel;
        let (c, h, i) = (self.latent_channels, self.hidden, self.input_channels());
        let w1 = 0;
        let b1 = w1 + h * i * k2;
        let tok = b1 + h;
        let w2 = tok + self.num_tokens * h;
        let b2 = w2 + h * h * k2;
        let w3 = b2 + h;
        let b3 = w3 + c * h * k2;
        let skip = b3 + c;
        Layout {
            w1,
            b1,
            tok,
            w2,
            b2,
            w3,
            b3,
            skip,
            len: skip + c,
        }
    }

    pub fn param_count(&self) -> usize {
        self.layout().len
    }

    fn validate(&self) -> Result<(), DenoiseError> {
        if self.kernel % 2 == 0
            || self.hidden == 0
            || self.latent_channels == 0
            || self.num_tokens == 0
            || self.dilations.contains(&0)
        {
            return Err(DenoiseError::Backend(format!("invalid toy architecture {self:?}")));
        }
        Ok(())
    }
}

/// Activations kept from a forward pass for the reverse sweep.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    hw: [usize; 2],
    token: usize,
    input: Vec<f64>,
    h1: Vec<f64>,
    h2: Vec<f64>,
    z: Vec<f64>,
    scales: Scales,
}

/// Per-timestep preconditioning coefficients.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Scales {
    skip: f64,
    input: f64,
    output: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyDenoiser {
    arch: ToyArch,
    schedule: ScheduleKind,
    total_steps: usize,
    scales: Vec<Scales>,
    params: Vec<f64>,
}

fn scale_table(sched: &NoiseSchedule) -> Vec<Scales> {
    let v = DATA_STD * DATA_STD;
    sched
        .alpha_bar()
        .iter()
        .map(|&ab| {
            let var = ab * v + 1.0 - ab;
            Scales {
                skip: (1.0 - ab).sqrt() / var,
                input: 1.0 / var.sqrt(),
                output: DATA_STD * ab.sqrt() / var.sqrt(),
            }
        })
        .collect()
}

impl ToyDenoiser {
    /// All-zero parameters, including the skip gates.
    pub fn zeros(arch: ToyArch, sched: &NoiseSchedule) -> Result<Self, DenoiseError> {
        arch.validate()?;
        Ok(Self {
            arch,
            schedule: sched.kind(),
            total_steps: sched.total_steps(),
            scales: scale_table(sched),
            params: vec![0.0; arch.param_count()],
        })
    }

    /// Fan-in scaled Gaussian weights, zero biases, small token biases; the
    /// output layer starts at a tenth of its fan-in scale, skip gates at 1.
    pub fn init(arch: ToyArch, sched: &NoiseSchedule, seed: u64) -> Result<Self, DenoiseError> {
        let mut net = Self::zeros(arch, sched)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let l = arch.layout();
        let k2 = (arch.kernel * arch.kernel) as f64;
        let mut fill = |range: std::ops::Range<usize>, std: f64, p: &mut [f64]| {
            let d = Normal::new(0.0, std).expect("finite std");
            for v in &mut p[range] {
                *v = d.sample(&mut rng);
            }
        };
        let p = &mut net.params;
        fill(l.w1..l.b1, 1.0 / (arch.input_channels() as f64 * k2).sqrt(), p);
        fill(l.tok..l.w2, 0.1, p);
        fill(l.w2..l.b2, 1.0 / (arch.hidden as f64 * k2).sqrt(), p);
        fill(l.w3..l.b3, 0.1 / (arch.hidden as f64 * k2).sqrt(), p);
        p[l.skip..l.len].fill(1.0);
        Ok(net)
    }

    pub fn from_params(arch: ToyArch, sched: &NoiseSchedule, params: Vec<f64>) -> Result<Self, DenoiseError> {
        arch.validate()?;
        if params.len() != arch.param_count() {
            return Err(DenoiseError::Backend(format!(
                "expected {} parameters, got {}",
                arch.param_count(),
                params.len()
            )));
        }
        Ok(Self {
            arch,
            schedule: sched.kind(),
            total_steps: sched.total_steps(),
            scales: scale_table(sched),
            params,
        })
    }

    pub fn arch(&self) -> &ToyArch {
        &self.arch
    }

    pub fn total_steps(&self) -> usize {
        self.total_steps
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn schedule(&self) -> ScheduleKind {
        self.schedule
    }

    fn check_input(&self, z_t: &Latent, t: usize, cond: &Conditioning) -> Result<(), DenoiseError> {
        if t > self.total_steps {
            return Err(DenoiseError::Backend(format!(
                "timestep {t} beyond the {}-step schedule",
                self.total_steps
            )));
        }
        if z_t.channels() != self.arch.latent_channels {
            return Err(ShapeError::Mismatch {
                left: z_t.shape(),
                right: [self.arch.latent_channels, z_t.height(), z_t.width()],
            }
            .into());
        }
        cond.check_against(z_t)
    }

    fn assemble_input(&self, z_t: &Latent, t: usize, cond: &Conditioning) -> Vec<f64> {
        let plane = z_t.height() * z_t.width();
        let mut input = Vec::with_capacity(self.arch.input_channels() * plane);
        let k = self.scales[t].input;
        input.extend(z_t.data().iter().map(|v| v * k));
        input.extend_from_slice(&cond.depth.values);
        let tt = t as f64 / self.total_steps.max(1) as f64;
        input.extend(std::iter::repeat(tt).take(plane));
        input
    }

    /// Forward pass that also returns the activations needed by
    /// [`ToyDenoiser::backward_from_cache`].
    pub fn forward_cached(
        &self,
        z_t: &Latent,
        t: usize,
        cond: &Conditioning,
    ) -> Result<(Latent, ForwardCache), DenoiseError> {
        self.check_input(z_t, t, cond)?;
        let a = &self.arch;
        let l = a.layout();
        let p = &self.params;
        let (h, w) = (z_t.height(), z_t.width());
        let plane = h * w;
        let token = cond.prompt.token as usize % a.num_tokens;
        let input = self.assemble_input(z_t, t, cond);

        let mut h1 = vec![0.0; a.hidden * plane];
        for o in 0..a.hidden {
            let bias = p[l.b1 + o] + p[l.tok + token * a.hidden + o];
            h1[o * plane..(o + 1) * plane].fill(bias);
        }
        conv_forward(&input, a.input_channels(), h, w, &p[l.w1..l.b1], a.hidden, a.kernel, a.dilations[0], &mut h1);
        h1.iter_mut().for_each(|v| *v = v.tanh());

        let mut h2 = vec![0.0; a.hidden * plane];
        for o in 0..a.hidden {
            h2[o * plane..(o + 1) * plane].fill(p[l.b2 + o]);
        }
        conv_forward(&h1, a.hidden, h, w, &p[l.w2..l.b2], a.hidden, a.kernel, a.dilations[1], &mut h2);
        h2.iter_mut().for_each(|v| *v = v.tanh());

        let c = a.latent_channels;
        let mut out = vec![0.0; c * plane];
        for o in 0..c {
            out[o * plane..(o + 1) * plane].fill(p[l.b3 + o]);
        }
        conv_forward(&h2, a.hidden, h, w, &p[l.w3..l.b3], c, a.kernel, a.dilations[2], &mut out);
        let scales = self.scales[t];
        for o in 0..c {
            let g = p[l.skip + o] * scales.skip;
            for (d, zv) in out[o * plane..(o + 1) * plane].iter_mut().zip(&z_t.data()[o * plane..]) {
                *d = scales.output * *d + g * zv;
            }
        }

        let out = Latent::from_vec([c, h, w], out)?;
        Ok((
            out,
            ForwardCache {
                hw: [h, w],
                token,
                input,
                h1,
                h2,
                z: z_t.data().to_vec(),
                scales,
            },
        ))
    }

    pub fn forward(&self, z_t: &Latent, t: usize, cond: &Conditioning) -> Result<Latent, DenoiseError> {
        Ok(self.forward_cached(z_t, t, cond)?.0)
    }

    /// Reverse-mode gradient of `⟨upstream, forward(·)⟩` with respect to the
    /// parameters, accumulated into `grad`.
    pub fn backward_from_cache(
        &self,
        cache: &ForwardCache,
        upstream: &Latent,
        grad: &mut [f64],
    ) -> Result<(), DenoiseError> {
        let a = &self.arch;
        let l = a.layout();
        let p = &self.params;
        let [h, w] = cache.hw;
        let plane = h * w;
        let c = a.latent_channels;
        if upstream.shape() != [c, h, w] {
            return Err(ShapeError::Mismatch {
                left: upstream.shape(),
                right: [c, h, w],
            }
            .into());
        }
        assert_eq!(grad.len(), l.len, "gradient buffer length");
        let g_out: Vec<f64> = upstream.data().iter().map(|g| g * cache.scales.output).collect();

        for o in 0..c {
            grad[l.b3 + o] += g_out[o * plane..(o + 1) * plane].iter().sum::<f64>();
            let up = &upstream.data()[o * plane..(o + 1) * plane];
            let z = &cache.z[o * plane..(o + 1) * plane];
            grad[l.skip + o] += cache.scales.skip * up.iter().zip(z).map(|(a, b)| a * b).sum::<f64>();
        }
        let mut g_h2 = vec![0.0; a.hidden * plane];
        conv_backward(&cache.h2, a.hidden, h, w, &p[l.w3..l.b3], c, a.kernel, a.dilations[2], &g_out, &mut grad[l.w3..l.b3], &mut g_h2);
        for (g, v) in g_h2.iter_mut().zip(&cache.h2) {
            *g *= 1.0 - v * v;
        }

        for o in 0..a.hidden {
            grad[l.b2 + o] += g_h2[o * plane..(o + 1) * plane].iter().sum::<f64>();
        }
        let mut g_h1 = vec![0.0; a.hidden * plane];
        conv_backward(&cache.h1, a.hidden, h, w, &p[l.w2..l.b2], a.hidden, a.kernel, a.dilations[1], &g_h2, &mut grad[l.w2..l.b2], &mut g_h1);
        for (g, v) in g_h1.iter_mut().zip(&cache.h1) {
            *g *= 1.0 - v * v;
        }

        for o in 0..a.hidden {
            let s: f64 = g_h1[o * plane..(o + 1) * plane].iter().sum();
            grad[l.b1 + o] += s;
            grad[l.tok + cache.token * a.hidden + o] += s;
        }
        let mut g_in = vec![0.0; a.input_channels() * plane];
        conv_backward(&cache.input, a.input_channels(), h, w, &p[l.w1..l.b1], a.hidden, a.kernel, a.dilations[0], &g_h1, &mut grad[l.w1..l.b1], &mut g_in);
        Ok(())
    }

    /// Parameter gradient of `⟨upstream, forward(z_t, t, cond)⟩`.
    pub fn backward(
        &self,
        z_t: &Latent,
        t: usize,
        cond: &Conditioning,
        upstream: &Latent,
    ) -> Result<Vec<f64>, DenoiseError> {
        let (_, cache) = self.forward_cached(z_t, t, cond)?;
        let mut grad = vec![0.0; self.params.len()];
        self.backward_from_cache(&cache, upstream, &mut grad)?;
        Ok(grad)
    }
}

/// On-disk weights: parameters as base64 little-endian `f64` so that a
/// save/load cycle is bit-exact.
#[derive(Debug, Serialize, Deserialize)]
struct WeightsFile {
    schema: String,
    arch: ToyArch,
    schedule: ScheduleKind,
    total_steps: usize,
    params: String,
}

const WEIGHTS_SCHEMA: &str = "textailor-toy-weights/1";

impl ToyDenoiser {
    pub fn to_json(&self) -> String {
        let bytes: Vec<u8> = self.params.iter().flat_map(|v| v.to_le_bytes()).collect();
        let file = WeightsFile {
            schema: WEIGHTS_SCHEMA.into(),
            arch: self.arch,
            schedule: self.schedule,
            total_steps: self.total_steps,
            params: BASE64.encode(bytes),
        };
        serde_json::to_string_pretty(&file).expect("weights serialize")
    }

    pub fn from_json(text: &str) -> Result<Self, DenoiseError> {
        let file: WeightsFile =
            serde_json::from_str(text).map_err(|e| DenoiseError::Backend(format!("weights file: {e}")))?;
        if file.schema != WEIGHTS_SCHEMA {
            return Err(DenoiseError::Version {
                expected: WEIGHTS_SCHEMA.into(),
                got: file.schema,
            });
        }
        let bytes = BASE64
            .decode(file.params)
            .map_err(|e| DenoiseError::Backend(format!("weights file: {e}")))?;
        if bytes.len() % 8 != 0 {
            return Err(DenoiseError::Backend("weights payload is not a whole number of f64".into()));
        }
        let params = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let sched = NoiseSchedule::new(file.total_steps, file.schedule)
            .map_err(|e| DenoiseError::Backend(format!("weights file: {e}")))?;
        Self::from_params(file.arch, &sched, params)
    }
}

impl Denoiser for ToyDenoiser {
    fn predict(&self, z_t: &Latent, t: usize, cond: &Conditioning) -> Result<Latent, DenoiseError> {
        self.forward(z_t, t, cond)
    }
}

/// Valid index range `[lo, hi)` of `y` such that `0 <= y + off < n`.
fn valid_range(n: usize, off: isize) -> (usize, usize) {
    let lo = (-off).max(0) as usize;
    let hi = (n as isize - off).clamp(0, n as isize) as usize;
    (lo.min(hi), hi)
}

/// Accumulates a dilated "same" convolution of `input` into `out`.
#[allow(clippy::too_many_arguments)]
fn conv_forward(
    input: &[f64],
    cin: usize,
    h: usize,
    w: usize,
    weight: &[f64],
    cout: usize,
    k: usize,
    dil: usize,
    out: &mut [f64],
) {
    let plane = h * w;
    let r = (k / 2) as isize;
    for o in 0..cout {
        let dst = &mut out[o * plane..(o + 1) * plane];
        for i in 0..cin {
            let src = &input[i * plane..(i + 1) * plane];
            for ky in 0..k {
                let dy = (ky as isize - r) * dil as isize;
                let (y0, y1) = valid_range(h, dy);
                for kx in 0..k {
                    let dx = (kx as isize - r) * dil as isize;
                    let (x0, x1) = valid_range(w, dx);
                    let wv = weight[((o * cin + i) * k + ky) * k + kx];
                    if wv == 0.0 || x0 >= x1 {
                        continue;
                    }
                    for y in y0..y1 {
                        let sy = (y as isize + dy) as usize;
                        let srow = &src[sy * w + (x0 as isize + dx) as usize..][..x1 - x0];
                        let drow = &mut dst[y * w + x0..y * w + x1];
                        for (d, s) in drow.iter_mut().zip(srow) {
                            *d += wv * s;
                        }
                    }
                }
            }
        }
    }
}

/// Reverse sweep of [`conv_forward`]: accumulates weight gradients into
/// `g_weight` and input gradients into `g_input`.
#[allow(clippy::too_many_arguments)]
fn conv_backward(
    input: &[f64],
    cin: usize,
    h: usize,
    w: usize,
    weight: &[f64],
    cout: usize,
    k: usize,
    dil: usize,
    g_out: &[f64],
    g_weight: &mut [f64],
    g_input: &mut [f64],
) {
    let plane = h * w;
    let r = (k / 2) as isize;
    for o in 0..cout {
        let g = &g_out[o * plane..(o + 1) * plane];
        for i in 0..cin {
            let src = &input[i * plane..(i + 1) * plane];
            for ky in 0..k {
                let dy = (ky as isize - r) * dil as isize;
                let (y0, y1) = valid_range(h, dy);
                for kx in 0..k {
                    let dx = (kx as isize - r) * dil as isize;
                    let (x0, x1) = valid_range(w, dx);
                    if x0 >= x1 {
                        continue;
                    }
                    let widx = ((o * cin + i) * k + ky) * k + kx;
                    let wv = weight[widx];
                    let mut acc = 0.0;
                    for y in y0..y1 {
                        let sy = (y as isize + dy) as usize;
                        let start = sy * w + (x0 as isize + dx) as usize;
                        let grow = &g[y * w + x0..y * w + x1];
                        let srow = &src[start..start + (x1 - x0)];
                        for (gv, s) in grow.iter().zip(srow) {
                            acc += gv * s;
                        }
                        let dst = &mut g_input[i * plane + start..i * plane + start + (x1 - x0)];
                        for (d, gv) in dst.iter_mut().zip(grow) {
                            *d += wv * gv;
                        }
                    }
                    g_weight[widx] += acc;
                }
            }
        }
    }
}
