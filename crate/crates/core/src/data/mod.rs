//! Bag files, dataset manifests, the synthetic witness task and stratified
//! splitting.

mod bag;
mod manifest;
mod split;
mod synthetic;

pub use bag::{bag_header, bag_read, bag_write, BagRecord};
pub use manifest::{sidecar_path, DatasetManifest, ManifestEntry};
pub use split::{stratified_assign, stratified_folds, stratified_kfold, stratified_split};
pub use synthetic::{
    generate_bags, generate_synthetic, grid_coords, read_witnesses, SyntheticBag, SyntheticTaskSpec,
    MANIFEST_FILE, WITNESS_FILE,
};
