use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::kv::KvFile;
use crate::pdconv::{PdcKind, PdcSpec};

/// Architecture hyper-parameters.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModelConfig {
    /// Feature width `C`; must be even.
    pub channels: usize,
    /// Residual groups `N_g`.
    pub groups: usize,
    /// Wavelet blocks per group `N_m`.
    pub blocks_per_group: usize,
    /// Upscaling factor, one of 2, 3, 4.
    pub scale: usize,
    /// State size `N` of every scan.
    pub ssm_state: usize,
    /// Inner width of the state-space sub-block is `vssm_expand · C`.
    pub vssm_expand: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            channels: 64,
            groups: 6,
            blocks_per_group: 4,
            scale: 2,
            ssm_state: 16,
            vssm_expand: 2,
            seed: 0,
        }
    }
}

pub const CONFIG_KEYS: [&str; 7] = [
    "channels",
    "groups",
    "blocks_per_group",
    "scale",
    "ssm_state",
    "vssm_expand",
    "seed",
];

fn conv3(cin: usize, cout: usize) -> usize {
    9 * cin * cout + cout
}

fn dw3(c: usize) -> usize {
    10 * c
}

fn fc(cin: usize, cout: usize) -> usize {
    cin * cout + cout
}

fn ln(c: usize) -> usize {
    2 * c
}

impl ModelConfig {
    /// Four groups of four blocks at `C = 64`, `×4`.
    pub fn reference_table() -> Self {
        ModelConfig {
            groups: 4,
            scale: 4,
            ..Self::default()
        }
    }

    /// Small model used by smoke tests.
    pub fn micro() -> Self {
        ModelConfig {
            channels: 32,
            groups: 2,
            blocks_per_group: 2,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |d: String| Err(Error::invalid("ModelConfig", d));
        if self.channels < 2 || self.channels % 2 != 0 {
            return bad(format!("channels must be even and at least 2, got {}", self.channels));
        }
        if !(2..=4).contains(&self.scale) {
            return bad(format!("scale must be 2, 3 or 4, got {}", self.scale));
        }
        for (name, v) in [
            ("groups", self.groups),
            ("blocks_per_group", self.blocks_per_group),
            ("ssm_state", self.ssm_state),
            ("vssm_expand", self.vssm_expand),
        ] {
            if v == 0 {
                return bad(format!("{name} must be positive"));
            }
        }
        Ok(())
    }

    /// Read the model keys from `kv`, falling back to defaults.
    pub fn from_kv(kv: &mut KvFile) -> Result<Self> {
        let d = Self::default();
        let cfg = ModelConfig {
            channels: kv.take_or("channels", d.channels)?,
            groups: kv.take_or("groups", d.groups)?,
            blocks_per_group: kv.take_or("blocks_per_group", d.blocks_per_group)?,
            scale: kv.take_or("scale", d.scale)?,
            ssm_state: kv.take_or("ssm_state", d.ssm_state)?,
            vssm_expand: kv.take_or("vssm_expand", d.vssm_expand)?,
            seed: kv.take_or("seed", d.seed)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut kv = KvFile::parse(text)?;
        let cfg = Self::from_kv(&mut kv)?;
        kv.finish()?;
        Ok(cfg)
    }

    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        let values = [
            self.channels as u64,
            self.groups as u64,
            self.blocks_per_group as u64,
            self.scale as u64,
            self.ssm_state as u64,
            self.vssm_expand as u64,
            self.seed,
        ];
        for (k, v) in CONFIG_KEYS.iter().zip(values) {
            writeln!(s, "{k} = {v}").unwrap();
        }
        s
    }

    pub fn inner_channels(&self) -> usize {
        self.vssm_expand * self.channels
    }

    fn pdc_taps(&self) -> usize {
        PdcKind::ALL.iter().map(|&k| PdcSpec::standard(k).num_taps()).sum()
    }

    /// Closed-form parameter count, summed layer by layer.
    ///
    /// `fused` counts the collapsed gate kernel instead of the five branches.
    pub fn parameter_count(&self, fused: bool) -> usize {
        let c = self.channels;
        let e = self.inner_channels();
        let n = self.ssm_state;
        let scan = e * n + e + 2 * n * e + e * e + e;
        let vssm = fc(c, e) + dw3(e) + 4 * scan + ln(e) + fc(c, e) + fc(e, c);
        let ffn = ln(c) + dw3(c) + fc(c / 2, c);
        let lfssm = ln(c) + vssm + ffn;
        let taps = if fused { 9 } else { self.pdc_taps() };
        let pdc = 3 * c * taps + 3 * c;
        let hfem = fc(c, 3 * c) + dw3(3 * c) + fc(3 * c, 3 * c) + pdc;
        let block = lfssm + hfem + conv3(4 * c, 4 * c);
        let group = self.blocks_per_group * block + conv3(c, c);
        let r2 = self.scale * self.scale;
        conv3(1, c) + self.groups * group + conv3(c, r2 * c) + conv3(c, 1)
    }

    /// Approximate multiply-accumulate count of one forward pass on an
    /// `h × w` single-channel input (fused gate, norms and activations ignored).
    pub fn estimate_macs(&self, h: usize, w: usize) -> u64 {
        let (c, e, n) = (self.channels as u64, self.inner_channels() as u64, self.ssm_state as u64);
        let full = (h * w) as u64;
        let band = full / 4;
        let scan = band * (2 * n * e + e * e + 3 * e * n);
        let vssm = band * (2 * c * e + 9 * e + e * c) + 4 * scan;
        let ffn = band * (9 * c + c * c / 2);
        let hfem = band * (3 * c * c + 27 * c + 9 * c * c + 27 * c);
        let block = vssm + ffn + hfem + band * 9 * 16 * c * c;
        let group = self.blocks_per_group as u64 * block + full * 9 * c * c;
        let r2 = (self.scale * self.scale) as u64;
        full * 9 * c + self.groups as u64 * group + full * 9 * c * r2 * c + full * r2 * 9 * c
    }
}

/// Reference figures listed for the channel sweep: `(C, PSNR, SSIM, FLOPs, Params)`.
pub const CHANNEL_SWEEP_REFERENCE: [(usize, f64, f64, &str, &str); 5] = [
    (32, 44.79, 0.9753, "3.799G", "173.051k"),
    (48, 45.52, 0.9858, "10.720G", "376.299k"),
    (64, 46.04, 0.9903, "23.689G", "657.302K"),
    (96, 46.09, 0.9916, "78.582G", "1453K"),
    (128, 46.22, 0.9934, "194.638G", "2560K"),
];

/// Reference figures listed for block layouts: `(N_g, N_m, PSNR, SSIM, FLOPs, Params)`.
pub const DEPTH_SWEEP_REFERENCE: [(usize, usize, f64, f64, &str, &str); 6] = [
    (2, 2, 40.13, 0.9801, "6.191G", "177.371K"),
    (2, 4, 42.86, 0.9897, "12.024G", "337.321K"),
    (4, 2, 42.66, 0.9894, "12.180G", "329.724K"),
    (4, 4, 46.04, 0.9903, "23.689G", "657.371K"),
    (6, 2, 45.50, 0.9906, "17.856G", "497.343K"),
    (6, 4, 46.87, 0.9913, "35.354G", "977.261K"),
];
