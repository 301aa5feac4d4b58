#![allow(dead_code)]

use std::path::Path;
use std::process::{Command, Output};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wmsr::network::{ModelConfig, WmsrModel};

pub fn wmsr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wmsr"))
        .args(args)
        .env_remove("WMSR_THREADS")
        .output()
        .expect("run wmsr")
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

pub fn path_str(p: &Path) -> &str {
    p.to_str().expect("UTF-8 path")
}

/// Fresh model with every weight nudged, so zero-initialized layers carry
/// signal and all branches affect the output.
pub fn perturbed_model(cfg: ModelConfig, seed: u64, amplitude: f64) -> WmsrModel {
    let mut model = WmsrModel::new(cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let store = model.params_mut();
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        for v in store.get_mut(id).data_mut() {
            *v += amplitude * rng.gen_range(-1.0..1.0);
        }
    }
    model
}

pub fn tiny_config(scale: usize) -> ModelConfig {
    ModelConfig {
        channels: 8,
        groups: 1,
        blocks_per_group: 2,
        scale,
        ssm_state: 4,
        vssm_expand: 2,
        seed: 5,
    }
}
