use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::network::MIN_INPUT_SIDE;
use crate::numerics::{bicubic_resize, Grid, CATMULL_ROM_A};

/// Desk-scale default patch side.
pub const DEFAULT_PATCH: usize = 48;
/// Patch side used for full-scale training.
pub const FULL_PATCH: usize = 96;

/// One high-resolution patch and its degraded counterpart.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchPair {
    /// `(1, 1, p, p)`.
    pub hr: Grid,
    /// `(1, 1, p/r, p/r)`.
    pub lr: Grid,
    /// Index of the source field.
    pub source: usize,
    /// Top-left corner `(row, col)` in the source field.
    pub offset: (usize, usize),
}

#[derive(Clone, Debug, PartialEq)]
pub struct PairConfig {
    pub scale: usize,
    pub patch: usize,
    pub stride: usize,
    pub train_parts: usize,
    pub test_parts: usize,
    pub seed: u64,
}

impl PairConfig {
    /// Non-overlapping desk-scale patches with a 4:1 split.
    pub fn new(scale: usize, seed: u64) -> Self {
        PairConfig {
            scale,
            patch: DEFAULT_PATCH,
            stride: DEFAULT_PATCH,
            train_parts: 4,
            test_parts: 1,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (r, p) = (self.scale, self.patch);
        if r == 0 || self.stride == 0 {
            return Err(Error::invalid("make_pairs", "scale and stride must be positive"));
        }
        if p % r != 0 || (p / r) % 2 != 0 || p / r < MIN_INPUT_SIDE {
            return Err(Error::invalid(
                "make_pairs",
                format!("patch {p} must be a multiple of {r} with an even low-resolution side of at least {MIN_INPUT_SIDE}"),
            ));
        }
        if self.train_parts + self.test_parts == 0 {
            return Err(Error::invalid("make_pairs", "split ratio is empty"));
        }
        Ok(())
    }
}

/// Bicubic reduction by the integer factor `r`.
pub fn degrade(hr: &Grid, r: usize) -> Result<Grid> {
    bicubic_resize(hr, 1, r, CATMULL_ROM_A)
}

/// Shuffle field indices and split them `train_parts : test_parts`, keeping at
/// least one field on each side when there are two or more.
pub fn split_fields(n: usize, train_parts: usize, test_parts: usize, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let total = (train_parts + test_parts).max(1);
    let mut n_test = (n * test_parts + total / 2) / total;
    if n >= 2 {
        n_test = n_test.clamp(usize::from(test_parts > 0), n - usize::from(train_parts > 0));
    }
    let test = idx.split_off(n - n_test);
    (idx, test)
}

/// Top-left corners of every `patch × patch` tile at the given stride.
pub fn tile_offsets(height: usize, width: usize, patch: usize, stride: usize) -> Result<Vec<(usize, usize)>> {
    if patch > height || patch > width {
        return Err(Error::invalid("make_pairs", format!("patch {patch} exceeds field {height}x{width}")));
    }
    let ys = (0..=height - patch).step_by(stride);
    Ok(ys.flat_map(|y| (0..=width - patch).step_by(stride).map(move |x| (y, x))).collect())
}

fn crop(field: &Grid, (y0, x0): (usize, usize), p: usize) -> Grid {
    let w = field.width();
    let plane = field.plane(0, 0);
    Grid::from_fn([1, 1, p, p], |[_, _, y, x]| plane[(y0 + y) * w + x0 + x])
}

/// Tiles of the listed fields in field-then-raster order.
pub fn pairs_from_fields(fields: &[Grid], indices: &[usize], cfg: &PairConfig) -> Result<Vec<PatchPair>> {
    cfg.validate()?;
    let mut out = Vec::new();
    for &i in indices {
        let f = &fields[i];
        if f.batch() != 1 || f.channels() != 1 {
            return Err(Error::shape("make_pairs", format!("field {i} has shape {:?}", f.shape())));
        }
        for off in tile_offsets(f.height(), f.width(), cfg.patch, cfg.stride)? {
            let hr = crop(f, off, cfg.patch);
            let lr = degrade(&hr, cfg.scale)?;
            out.push(PatchPair {
                hr,
                lr,
                source: i,
                offset: off,
            });
        }
    }
    Ok(out)
}

/// Split at field granularity, tile, and shuffle the training pairs.
pub fn make_pairs(fields: &[Grid], cfg: &PairConfig) -> Result<(Vec<PatchPair>, Vec<PatchPair>)> {
    cfg.validate()?;
    let (train_idx, test_idx) = split_fields(fields.len(), cfg.train_parts, cfg.test_parts, cfg.seed);
    let mut train = pairs_from_fields(fields, &train_idx, cfg)?;
    shuffle_pairs(&mut train, cfg.seed);
    let test = pairs_from_fields(fields, &test_idx, cfg)?;
    Ok((train, test))
}

pub(crate) fn shuffle_pairs(pairs: &mut [PatchPair], seed: u64) {
    pairs.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15));
}

/// Stack pairs into `(lr, hr)` batches.
pub fn collate(pairs: &[&PatchPair]) -> Result<(Grid, Grid)> {
    let lr: Vec<Grid> = pairs.iter().map(|p| p.lr.clone()).collect();
    let hr: Vec<Grid> = pairs.iter().map(|p| p.hr.clone()).collect();
    Ok((Grid::stack(&lr)?, Grid::stack(&hr)?))
}
