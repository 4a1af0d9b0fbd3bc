//! Synthetic "striped object" training data for the toy denoiser.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::codec::{depth_condition, encode};
use crate::denoise::{Conditioning, Prompt, ToyArch, ToyDenoiser};
use crate::finetune::{finetune_loop, Anchor, FinetuneConfig, FinetuneError, TrainingLog};
use crate::geometry::vec3::{self, Vec3};
use crate::geometry::{rasterize, viewpoint_to_camera, Mesh, RasterBuffers, Viewpoint, DEFAULT_FOV_DEG};
use crate::image::{to_u8, Image, Rgb8};
use crate::sched::NoiseSchedule;

pub type Palette = [[f64; 3]; 2];

/// Two-tone palettes whose colors lie about 1.0 apart in RGB.
pub const PALETTES: [Palette; 4] = [
    [[0.8, 0.15, 0.1], [0.95, 0.9, 0.75]],
    [[0.1, 0.2, 0.6], [0.75, 0.85, 0.95]],
    [[0.1, 0.45, 0.1], [0.95, 0.9, 0.4]],
    [[0.3, 0.05, 0.45], [0.98, 0.65, 0.15]],
];

/// Two-tone horizontal bands in world `y`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stripes {
    /// Cycles per object unit.
    pub frequency: f64,
    pub phase: f64,
    pub colors: Palette,
}

impl Stripes {
    pub fn color_at(&self, p: Vec3) -> [f64; 3] {
        let s = (std::f64::consts::TAU * self.frequency * p[1] + self.phase).sin();
        self.colors[usize::from(s < 0.0)]
    }

    pub fn random<R: Rng + ?Sized>(rng: &mut R, dist: &StripeDistribution) -> Self {
        let (lo, hi) = dist.frequency;
        Self {
            frequency: if lo < hi { rng.gen_range(lo..hi) } else { lo },
            phase: rng.gen_range(0.0..std::f64::consts::TAU),
            colors: dist.palettes[rng.gen_range(0..dist.palettes.len())],
        }
    }
}

/// Ranges the striped training views are drawn from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StripeDistribution {
    /// One palette is drawn per object.
    pub palettes: Vec<Palette>,
    /// Stripe frequency range; a single value when both ends agree.
    pub frequency: (f64, f64),
    /// Camera elevation range in degrees.
    pub elevation: (f64, f64),
    pub radius: f64,
}

impl Default for StripeDistribution {
    fn default() -> Self {
        Self {
            palettes: PALETTES.to_vec(),
            frequency: (4.0, 4.0),
            elevation: (-85.0, 85.0),
            radius: 1.0,
        }
    }
}

pub fn render_stripes(mesh: &Mesh, buf: &RasterBuffers, stripes: &Stripes, bg: Rgb8) -> Image {
    let mut img = Image::filled(buf.width, buf.height, bg);
    for i in 0..buf.width * buf.height {
        if buf.is_foreground(i) {
            let p = vec3::blend(mesh.face_vertices(buf.face_id[i] as usize), buf.bary[i]);
            img.pixels[i] = stripes.color_at(p).map(to_u8);
        }
    }
    img
}

/// Renders of `mesh` with random stripes from random viewpoints, encoded to
/// latents with their depth conditions.
pub fn striped_dataset(
    mesh: &Mesh,
    n: usize,
    resolution: usize,
    factor: usize,
    dist: &StripeDistribution,
    prompt: &Prompt,
    seed: u64,
) -> Vec<Anchor> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bg = [to_u8(0.5); 3];
    (0..n)
        .map(|_| {
            let el = rng.gen_range(dist.elevation.0..=dist.elevation.1);
            let v = Viewpoint::new(rng.gen_range(0.0..360.0), el, dist.radius).expect("valid sampled viewpoint");
            let cam = viewpoint_to_camera(&v, (resolution, resolution), DEFAULT_FOV_DEG);
            let buf = rasterize(mesh, &cam);
            let img = render_stripes(mesh, &buf, &Stripes::random(&mut rng, dist), bg);
            Anchor {
                z0: encode(&img, factor),
                cond: Conditioning {
                    prompt: prompt.clone(),
                    depth: depth_condition(&buf, factor),
                },
            }
        })
        .collect()
}

/// Denoising score matching on `data`: the fine-tuning loop without a
/// preservation term. `opt.lambda` is ignored; `opt.seed` also seeds the
/// initial weights.
pub fn pretrain(
    arch: ToyArch,
    sched: &NoiseSchedule,
    data: &[Anchor],
    opt: &FinetuneConfig,
) -> Result<(ToyDenoiser, TrainingLog), FinetuneError> {
    let mut net = ToyDenoiser::init(arch, sched, opt.seed)?;
    let cfg = FinetuneConfig {
        lambda: 0.0,
        seed: opt.seed ^ 0x5eed,
        ..*opt
    };
    let log = finetune_loop(&mut net, data, sched, &cfg)?;
    Ok((net, log))
}
