use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::adam::{adam_step, AdamState};
use super::checkpoint::{Checkpoint, RngState};
use super::config::TrainConfig;
use crate::data::{collate, PatchPair};
use crate::error::{Error, Result};
use crate::network::WmsrModel;
use crate::numerics::{Grid, Tape};
use crate::objective::{psnr, ssim, MetricRow};

pub const METRICS_FILE: &str = "metrics.csv";
pub const LAST_CHECKPOINT: &str = "last.ckpt";
pub const BEST_CHECKPOINT: &str = "best.ckpt";

/// Mean PSNR and SSIM over pairs, predicting one pair at a time.
pub fn evaluate(model: &WmsrModel, pairs: &[PatchPair]) -> Result<(f64, f64)> {
    if pairs.is_empty() {
        return Err(Error::invalid("evaluate", "no pairs to evaluate"));
    }
    let (mut p, mut s) = (0.0, 0.0);
    for pair in pairs {
        let sr = model.predict(&pair.lr)?;
        p += psnr(&sr, &pair.hr, 1.0)?;
        s += ssim(&sr, &pair.hr)?;
    }
    let n = pairs.len() as f64;
    Ok((p / n, s / n))
}

/// Optimizer, batch-order generator and model, advanced one epoch at a time.
pub struct Trainer {
    model: WmsrModel,
    optim: AdamState,
    rng: ChaCha8Rng,
    cfg: TrainConfig,
    epoch: usize,
}

/// Outcome of [`Trainer::fit`].
#[derive(Clone, Debug)]
pub struct TrainReport {
    pub log: Vec<MetricRow>,
    /// `(epoch, psnr_db)` of the retained checkpoint.
    pub best: Option<(usize, f64)>,
    pub last_loss: f64,
}

impl Trainer {
    pub fn new(cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let model = WmsrModel::new(cfg.model.clone())?;
        Ok(Trainer {
            optim: AdamState::new(model.params()),
            rng: ChaCha8Rng::seed_from_u64(cfg.data_seed),
            model,
            cfg,
            epoch: 0,
        })
    }

    pub fn model(&self) -> &WmsrModel {
        &self.model
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn optimizer(&self) -> &AdamState {
        &self.optim
    }

    /// Model, optimizer and generator state.
    pub fn checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::from_model(&self.model);
        ck.optimizer = Some(self.optim.clone());
        ck.rng = Some(RngState::capture(&self.rng));
        ck
    }

    /// One optimizer update on a batch; returns the loss before the update.
    pub fn step(&mut self, lr_batch: &Grid, hr_batch: &Grid, rate: f64) -> Result<f64> {
        let (loss, grads) = {
            let tape = Tape::new();
            let sr = self.model.forward(&tape, tape.constant(lr_batch.clone()))?;
            let loss = sr.total_loss(tape.constant(hr_batch.clone()), &self.cfg.loss)?;
            let value = loss.item();
            if !value.is_finite() {
                return Err(Error::NonFinite {
                    op: "train",
                    detail: format!("loss is {value} at step {}", self.optim.step + 1),
                });
            }
            (value, tape.backward(loss)?.into_store_order(self.model.params()))
        };
        adam_step(self.model.params_mut(), &grads, &mut self.optim, rate)?;
        Ok(loss)
    }

    /// One epoch of updates; returns the mean batch loss.
    pub fn run_epoch(&mut self, train: &[PatchPair]) -> Result<f64> {
        if train.is_empty() {
            return Err(Error::invalid("train", "no training pairs"));
        }
        let bs = self.cfg.batch_size.min(train.len());
        let steps = self.cfg.steps_per_epoch.unwrap_or(train.len().div_ceil(bs));
        let mut order: Vec<usize> = Vec::new();
        let mut total = 0.0;
        for s in 0..steps {
            let mut batch = Vec::with_capacity(bs);
            while batch.len() < bs {
                if order.is_empty() {
                    order = (0..train.len()).collect();
                    order.shuffle(&mut self.rng);
                    order.reverse();
                }
                batch.push(&train[order.pop().unwrap()]);
            }
            let (lr, hr) = collate(&batch)?;
            let rate = self.cfg.schedule.at(self.epoch as f64 + s as f64 / steps as f64)?;
            total += self.step(&lr, &hr, rate)?;
        }
        self.epoch += 1;
        Ok(total / steps as f64)
    }

    /// Train for the configured epochs, scoring after each one. With `out`
    /// set, the metric log, the last and the best checkpoints are written
    /// there; a non-finite loss stops the run after saving the last good state.
    pub fn fit(&mut self, train: &[PatchPair], test: &[PatchPair], out: Option<&Path>) -> Result<TrainReport> {
        let mut log = Vec::new();
        let mut best: Option<(usize, f64)> = None;
        let mut last_loss = f64::NAN;
        if let Some(dir) = out {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            write_file(&dir.join(METRICS_FILE), format!("{}\n", MetricRow::HEADER).as_bytes())?;
        }
        while self.epoch < self.cfg.epochs {
            let good = self.checkpoint();
            match self.run_epoch(train) {
                Ok(loss) => last_loss = loss,
                Err(e) => {
                    if let Some(dir) = out {
                        good.save(dir.join(LAST_CHECKPOINT))?;
                    }
                    return Err(e);
                }
            }
            let mut rows = Vec::new();
            if self.cfg.eval_train {
                rows.push(self.score("train", train)?);
            }
            if !test.is_empty() {
                rows.push(self.score("test", test)?);
            }
            let score = rows.last().map(|r| r.psnr_db);
            if let Some(dir) = out {
                let mut f = fs::OpenOptions::new()
                    .append(true)
                    .open(dir.join(METRICS_FILE))
                    .map_err(|e| Error::io(dir.join(METRICS_FILE), e))?;
                for r in &rows {
                    writeln!(f, "{r}").map_err(|e| Error::io(dir.join(METRICS_FILE), e))?;
                }
                self.checkpoint().save(dir.join(LAST_CHECKPOINT))?;
            }
            if let Some(p) = score {
                if best.map_or(true, |(_, b)| p > b) {
                    best = Some((self.epoch, p));
                    if let Some(dir) = out {
                        Checkpoint::from_model(&self.model).save(dir.join(BEST_CHECKPOINT))?;
                    }
                }
            }
            log.extend(rows);
        }
        Ok(TrainReport { log, best, last_loss })
    }

    fn score(&self, split: &str, pairs: &[PatchPair]) -> Result<MetricRow> {
        let (psnr_db, ssim) = evaluate(&self.model, pairs)?;
        Ok(MetricRow {
            epoch: self.epoch,
            split: split.to_string(),
            psnr_db,
            ssim,
        })
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
