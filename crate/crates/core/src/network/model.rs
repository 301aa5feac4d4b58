use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::ModelConfig;
use super::layers::{Builder, Conv3, Ctx, Group, Init, Wam};
use crate::error::{Error, Result};
use crate::numerics::{Grid, ParamStore, Tape, Var};
use crate::pdconv::{fuse, PdcKind, PdcSpec};

/// How the difference-convolution gates are stored.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PdcMode {
    /// Five branches with per-tap weights (training form).
    Branches,
    /// One collapsed 3×3 kernel per gate (inference form).
    Fused,
}

/// Smallest accepted input side.
pub const MIN_INPUT_SIDE: usize = 8;

#[derive(Clone, Debug)]
struct Net {
    shallow: Conv3,
    groups: Vec<Group>,
    up: Conv3,
    tail: Conv3,
}

impl Net {
    fn build(cfg: &ModelConfig, fused: bool, bd: &mut Builder) -> Result<Self> {
        let c = cfg.channels;
        let (e, n) = (cfg.inner_channels(), cfg.ssm_state);
        let shallow = Conv3::build(bd, "shallow", 1, c)?;
        let mut groups = Vec::with_capacity(cfg.groups);
        for g in 0..cfg.groups {
            let mut blocks = Vec::with_capacity(cfg.blocks_per_group);
            for b in 0..cfg.blocks_per_group {
                blocks.push(Wam::build(bd, &format!("g{g}.b{b}"), c, e, n, fused)?);
            }
            let conv = Conv3::build(bd, &format!("g{g}.conv"), c, c)?;
            groups.push(Group { blocks, conv });
        }
        let up = Conv3::build(bd, "up", c, cfg.scale * cfg.scale * c)?;
        let tail = Conv3::build_with(bd, "tail", c, 1, Init::Zeros)?;
        Ok(Net {
            shallow,
            groups,
            up,
            tail,
        })
    }
}

/// The full super-resolution network and its parameters.
#[derive(Clone)]
pub struct WmsrModel {
    config: ModelConfig,
    mode: PdcMode,
    params: ParamStore,
    net: Net,
}

impl WmsrModel {
    /// Fresh model initialized from `config.seed`.
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut bd = Builder::random(ChaCha8Rng::seed_from_u64(config.seed));
        let net = Net::build(&config, false, &mut bd)?;
        Ok(WmsrModel {
            config,
            mode: PdcMode::Branches,
            params: bd.finish()?,
            net,
        })
    }

    /// Rebuild from named tensors; every expected name must be present with
    /// the right shape and nothing else.
    pub fn from_named(config: ModelConfig, mode: PdcMode, named: impl IntoIterator<Item = (String, Grid)>) -> Result<Self> {
        config.validate()?;
        let mut bd = Builder::bind(named);
        let net = Net::build(&config, mode == PdcMode::Fused, &mut bd)?;
        Ok(WmsrModel {
            config,
            mode,
            params: bd.finish()?,
            net,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn mode(&self) -> PdcMode {
        self.mode
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn parameter_count(&self) -> usize {
        self.params.num_elements()
    }

    /// `(B, 1, H, W) -> (B, 1, rH, rW)`.
    pub fn forward<'t>(&self, tape: &'t Tape, x: Var<'t>) -> Result<Var<'t>> {
        self.forward_with(tape, &self.params, x)
    }

    /// Forward pass reading weights from `store`, which must hold this
    /// model's parameters first and in the same order (extra trailing
    /// entries are allowed, e.g. an input registered for gradient checks).
    pub fn forward_with<'t>(&self, tape: &'t Tape, store: &ParamStore, x: Var<'t>) -> Result<Var<'t>> {
        let compatible = store.len() >= self.params.len()
            && self.params.ids().all(|id| store.name(id) == self.params.name(id));
        if !compatible {
            return Err(Error::invalid("wmsr_forward", "parameter store does not extend the model's"));
        }
        let [_, c, h, w] = x.shape();
        if c != 1 {
            return Err(Error::shape("wmsr_forward", format!("expected 1 input channel, got {c}")));
        }
        if h < MIN_INPUT_SIDE || w < MIN_INPUT_SIDE || h % 2 != 0 || w % 2 != 0 {
            return Err(Error::shape(
                "wmsr_forward",
                format!("input {h}x{w} must be even and at least {MIN_INPUT_SIDE} on each side"),
            ));
        }
        let cx = Ctx { tape, store };
        let shallow = self.net.shallow.forward(&cx, x)?;
        let mut deep = shallow;
        for g in &self.net.groups {
            deep = g.forward(&cx, deep)?;
        }
        let merged = shallow.add(deep)?;
        let up = self.net.up.forward(&cx, merged)?.pixel_shuffle(self.config.scale)?;
        self.net.tail.forward(&cx, up)
    }

    /// Inference on plain values, one batch item at a time.
    pub fn predict(&self, x: &Grid) -> Result<Grid> {
        x.ensure_finite("wmsr_forward")?;
        let items = (0..x.batch())
            .map(|b| {
                let tape = Tape::inference();
                let y = self.forward(&tape, tape.constant(x.batch_item(b)))?;
                Ok(y.to_grid())
            })
            .collect::<Result<Vec<_>>>()?;
        let out = Grid::stack(&items)?;
        out.ensure_finite("wmsr_forward")?;
        Ok(out)
    }

    /// Collapse every gate's five branches into one kernel.
    pub fn fused(&self) -> Result<WmsrModel> {
        if self.mode == PdcMode::Fused {
            return Ok(self.clone());
        }
        let mut named: BTreeMap<String, Grid> = self
            .params
            .iter()
            .map(|(_, n, g)| (n.to_string(), g.clone()))
            .collect();
        let suffix = format!(".{}", PdcKind::Vanilla.label());
        let prefixes: Vec<String> = named
            .keys()
            .filter_map(|n| n.strip_suffix(&suffix).map(str::to_string))
            .collect();
        for prefix in prefixes {
            let mut branches = Vec::with_capacity(5);
            for kind in PdcKind::ALL {
                let w = named
                    .remove(&format!("{prefix}.{}", kind.label()))
                    .ok_or_else(|| Error::Malformed {
                        kind: "parameter set",
                        detail: format!("{prefix} lacks its {kind} branch"),
                    })?;
                branches.push((PdcSpec::standard(kind), w));
            }
            named.insert(format!("{prefix}.fused"), fuse(&branches)?.kernel);
        }
        WmsrModel::from_named(self.config.clone(), PdcMode::Fused, named)
    }
}
