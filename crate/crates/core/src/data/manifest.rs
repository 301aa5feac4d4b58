use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::gridfile::{read_grid, write_grid};
use super::pairs::{pairs_from_fields, shuffle_pairs, split_fields, PairConfig, PatchPair};
use super::synth::{synth_sst, SynthParams};
use crate::error::{Error, Result};
use crate::numerics::Grid;

pub const MANIFEST_FILE: &str = "manifest.txt";
const MANIFEST_HEADER: &str = "# wmsr dataset manifest v1";
/// Physical range written for synthetic fields (kelvin).
pub const SYNTH_RANGE_K: (f64, f64) = (271.15, 303.15);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Role {
    Train,
    Test,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Role::Train => "train",
            Role::Test => "test",
        })
    }
}

impl FromStr for Role {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Role::Train),
            "test" => Ok(Role::Test),
            _ => Err(Error::Malformed {
                kind: "manifest",
                detail: format!("unknown role {s:?}"),
            }),
        }
    }
}

/// Field files and their split roles; one `role path` line per field, paths
/// relative to the manifest's directory.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Manifest {
    pub entries: Vec<(Role, PathBuf)>,
}

impl Manifest {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (role, path) = line.split_once(char::is_whitespace).ok_or_else(|| Error::Malformed {
                kind: "manifest",
                detail: format!("line {}: expected `role path`", i + 1),
            })?;
            entries.push((role.parse()?, PathBuf::from(path.trim())));
        }
        Ok(Manifest { entries })
    }

    pub fn read(dir: impl AsRef<Path>) -> Result<Self> {
        let path = dir.as_ref().join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        Manifest::parse(&text)
    }

    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let path = dir.as_ref().join(MANIFEST_FILE);
        fs::write(&path, self.to_string()).map_err(|e| Error::io(&path, e))
    }

    pub fn paths(&self, role: Role) -> impl Iterator<Item = &Path> {
        self.entries.iter().filter(move |(r, _)| *r == role).map(|(_, p)| p.as_path())
    }
}

impl fmt::Display for Manifest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{MANIFEST_HEADER}")?;
        for (role, path) in &self.entries {
            writeln!(f, "{role} {}", path.display())?;
        }
        Ok(())
    }
}

/// Fields loaded from a dataset directory, normalized to `[0, 1]`.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub train: Vec<Grid>,
    pub test: Vec<Grid>,
}

impl Dataset {
    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let manifest = Manifest::read(dir)?;
        let load = |role| -> Result<Vec<Grid>> {
            manifest
                .paths(role)
                .map(|p| {
                    let g = read_grid(dir.join(p))?.into_grid();
                    if g.channels() != 1 {
                        return Err(Error::Malformed {
                            kind: "dataset",
                            detail: format!("{} has {} channels, expected 1", p.display(), g.channels()),
                        });
                    }
                    Ok(g)
                })
                .collect()
        };
        Ok(Dataset {
            train: load(Role::Train)?,
            test: load(Role::Test)?,
        })
    }

    /// Tile both splits as listed in the manifest; the split ratio in `cfg`
    /// is not consulted. Training pairs are shuffled as in `make_pairs`.
    pub fn pairs(&self, cfg: &PairConfig) -> Result<(Vec<PatchPair>, Vec<PatchPair>)> {
        let mut train = pairs_from_fields(&self.train, &(0..self.train.len()).collect::<Vec<_>>(), cfg)?;
        shuffle_pairs(&mut train, cfg.seed);
        let test = pairs_from_fields(&self.test, &(0..self.test.len()).collect::<Vec<_>>(), cfg)?;
        Ok((train, test))
    }
}

/// Write `n` synthetic fields and a manifest splitting them 4:1 by field.
pub fn generate_dataset(
    dir: impl AsRef<Path>,
    n: usize,
    height: usize,
    width: usize,
    seed: u64,
    params: &SynthParams,
) -> Result<Manifest> {
    let dir = dir.as_ref();
    if n == 0 {
        return Err(Error::invalid("gen_data", "field count must be positive"));
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut seeds = ChaCha8Rng::seed_from_u64(seed);
    let (_, test) = split_fields(n, 4, 1, seed);
    let mut manifest = Manifest::default();
    for i in 0..n {
        let field = synth_sst(height, width, seeds.next_u64(), params)?;
        let name = PathBuf::from(format!("field_{i:04}.sstg"));
        write_grid(dir.join(&name), &field, SYNTH_RANGE_K.0, SYNTH_RANGE_K.1)?;
        let role = if test.contains(&i) { Role::Test } else { Role::Train };
        manifest.entries.push((role, name));
    }
    manifest.write(dir)?;
    Ok(manifest)
}
