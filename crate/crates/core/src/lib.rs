pub mod atlas;
pub mod codec;
pub mod denoise;
pub mod eval;
pub mod finetune;
pub mod geometry;
pub mod image;
pub mod latent;
pub mod pipeline;
pub mod regions;
pub mod sched;
pub mod synthetic;
pub mod viewsched;
