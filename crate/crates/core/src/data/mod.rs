//! Synthetic sea-surface-temperature fields, the gridded file format,
//! bicubic degradation and the field-level train/test split.

mod gridfile;
mod manifest;
mod pairs;
mod synth;

pub use gridfile::{read_grid, write_grid, GridFile, GRID_HEADER_LEN, GRID_MAGIC, GRID_VERSION};
pub use manifest::{generate_dataset, Dataset, Manifest, Role, MANIFEST_FILE, SYNTH_RANGE_K};
pub use pairs::{
    collate, degrade, make_pairs, pairs_from_fields, split_fields, tile_offsets, PairConfig, PatchPair, DEFAULT_PATCH,
    FULL_PATCH,
};
pub use synth::{synth_sst, SynthParams};
