//! Explanations: attention rollout to the bag instances, per-query relative
//! entropy of the SeqShort attention, and heatmap export.

mod entropy;
mod heatmap;
mod rollout;

pub use entropy::{entropy_profile, kl_to_uniform, query_entropies, EntropyProfile, MASS_TOLERANCE};
pub use heatmap::{heatmap_export, quantize, rasterize, read_heatmap_csv, HeatmapFormat, Raster};
pub use rollout::{residual_mix, rollout, rollout_base, RolloutResult};
