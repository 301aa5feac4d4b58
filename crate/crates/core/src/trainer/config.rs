use super::schedule::LrSchedule;
use crate::data::DEFAULT_PATCH;
use crate::error::{Error, Result};
use crate::kv::KvFile;
use crate::network::ModelConfig;
use crate::objective::LossWeights;

/// Everything a training run needs besides the data.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub epochs: usize,
    /// Optimizer steps per epoch; `None` means one pass over the training pairs.
    pub steps_per_epoch: Option<usize>,
    pub batch_size: usize,
    pub patch: usize,
    pub stride: usize,
    pub schedule: LrSchedule,
    pub loss: LossWeights,
    /// Seeds batch order and the split; the model seed lives in `model`.
    pub data_seed: u64,
    /// Also score the training pairs after every epoch.
    pub eval_train: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            model: ModelConfig::default(),
            epochs: 100,
            steps_per_epoch: None,
            batch_size: 4,
            patch: DEFAULT_PATCH,
            stride: DEFAULT_PATCH,
            schedule: LrSchedule::default(),
            loss: LossWeights::default(),
            data_seed: 0,
            eval_train: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.loss.validate()?;
        self.schedule.at(0.0)?;
        if self.epochs == 0 || self.batch_size == 0 || self.stride == 0 || self.steps_per_epoch == Some(0) {
            return Err(Error::invalid("train_config", "epochs, batch size, stride and steps per epoch must be positive"));
        }
        Ok(())
    }

    /// `key = value` text holding both model and training keys; absent keys
    /// take their defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut kv = KvFile::parse(text)?;
        let d = TrainConfig::default();
        let model = ModelConfig::from_kv(&mut kv)?;
        let steps: usize = kv.take_or("steps_per_epoch", 0)?;
        let patch = kv.take_or("patch", d.patch)?;
        let cfg = TrainConfig {
            model,
            epochs: kv.take_or("epochs", d.epochs)?,
            steps_per_epoch: (steps > 0).then_some(steps),
            batch_size: kv.take_or("batch_size", d.batch_size)?,
            patch,
            stride: kv.take_or("stride", patch)?,
            schedule: LrSchedule {
                initial: kv.take_or("lr", d.schedule.initial)?,
                period: kv.take_or("lr_period", d.schedule.period)?,
                decay: kv.take_or("lr_decay", d.schedule.decay)?,
            },
            loss: LossWeights {
                lambda_rec: kv.take_or("lambda_rec", d.loss.lambda_rec)?,
                lambda_freq: kv.take_or("lambda_freq", d.loss.lambda_freq)?,
            },
            data_seed: kv.take_or("data_seed", d.data_seed)?,
            eval_train: kv.take_or("eval_train", d.eval_train)?,
        };
        kv.finish()?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_kv(&self) -> String {
        let mut s = self.model.to_kv();
        let rows = [
            ("epochs", self.epochs.to_string()),
            ("steps_per_epoch", self.steps_per_epoch.unwrap_or(0).to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("patch", self.patch.to_string()),
            ("stride", self.stride.to_string()),
            ("lr", self.schedule.initial.to_string()),
            ("lr_period", self.schedule.period.to_string()),
            ("lr_decay", self.schedule.decay.to_string()),
            ("lambda_rec", self.loss.lambda_rec.to_string()),
            ("lambda_freq", self.loss.lambda_freq.to_string()),
            ("data_seed", self.data_seed.to_string()),
            ("eval_train", self.eval_train.to_string()),
        ];
        for (k, v) in rows {
            s.push_str(&format!("{k} = {v}\n"));
        }
        s
    }
}
