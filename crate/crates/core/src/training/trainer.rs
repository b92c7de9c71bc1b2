use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use lpca_tensor::layers::Mode;
use lpca_tensor::{Element, ModuleExt, Tape};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::augment::{augment, AugmentSpec};
use super::loss::bce_loss;
use super::optim::{cosine_lr, AdamW, AdamWConfig};
use crate::data_io::{checkpoint, make_batch, FloatSample};
use crate::metrics::{EvalPair, MetricReport};
use crate::model::LpcaNet;
use crate::{Error, Result};

/// Optimization schedule and bookkeeping cadence.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainPlan {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_base: f64,
    pub lr_min: f64,
    pub weight_decay: f64,
    /// In epochs; 0 disables periodic checkpoints (the final one is always
    /// written when an output directory is given).
    pub checkpoint_every: usize,
    /// In epochs; 0 disables evaluation.
    pub eval_every: usize,
    pub seed: u64,
    /// None trains on the raw samples.
    pub augment: Option<AugmentSpec>,
}

impl TrainPlan {
    pub fn paper() -> Self {
        TrainPlan {
            epochs: 100,
            batch_size: 8,
            lr_base: 1e-4,
            lr_min: 0.0,
            weight_decay: 0.05,
            checkpoint_every: 10,
            eval_every: 10,
            seed: 0,
            augment: Some(AugmentSpec::default()),
        }
    }

    pub fn tiny() -> Self {
        TrainPlan {
            epochs: 50,
            batch_size: 4,
            ..Self::paper()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be positive".into()));
        }
        if !(self.lr_base >= 0.0 && self.lr_min >= 0.0 && self.lr_min <= self.lr_base) {
            return Err(Error::Config(format!(
                "need 0 ≤ lr_min ≤ lr_base, got {} / {}",
                self.lr_min, self.lr_base
            )));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::Config("weight_decay must be finite and ≥ 0".into()));
        }
        if let Some(a) = &self.augment {
            a.validate()?;
        }
        Ok(())
    }

    /// Batches per epoch; a trailing batch of one sample is dropped because
    /// batch statistics need at least two.
    pub fn batches_per_epoch(&self, samples: usize) -> usize {
        let full = samples / self.batch_size;
        let rest = samples % self.batch_size;
        full + usize::from(rest >= 2)
    }

    pub fn total_steps(&self, samples: usize) -> u64 {
        (self.epochs * self.batches_per_epoch(samples)) as u64
    }
}

/// One CSV row: metrics are present only on evaluation epochs.
#[derive(Clone, Debug, PartialEq)]
pub struct LogRow {
    pub epoch: usize,
    pub step: u64,
    pub lr: f64,
    pub loss: f64,
    pub metrics: Option<MetricReport>,
}

pub const LOG_HEADER: &str = "epoch,step,lr,loss,mAP,IoU,MAE,maxF,maxE,S";

impl LogRow {
    pub fn csv(&self) -> String {
        let m = match &self.metrics {
            Some(r) => r.csv_row(),
            None => ",,,,,".into(),
        };
        format!("{},{},{:.9e},{:.9e},{m}", self.epoch, self.step, self.lr, self.loss)
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub log: Vec<LogRow>,
    /// Loss of every optimizer step, in order.
    pub step_losses: Vec<f64>,
    pub last_checkpoint: Option<PathBuf>,
}

/// Probability map of a single sample, row-major.
pub fn predict<T: Element>(net: &LpcaNet<T>, sample: &FloatSample) -> Result<Vec<f64>> {
    let batch = make_batch::<T>(&[sample])?;
    let tape = Tape::no_grad();
    let pred = net.forward(&tape.constant(batch.rgb), &tape.constant(batch.depth), Mode::Eval)?;
    let out = pred.value().data().iter().map(|&v| v.to_f64().clamp(0.0, 1.0)).collect();
    Ok(out)
}

pub fn evaluate<T: Element>(net: &LpcaNet<T>, samples: &[FloatSample]) -> Result<MetricReport> {
    let pairs = samples
        .iter()
        .map(|s| {
            let gt = s.mask.iter().map(|&m| m >= 0.5).collect();
            EvalPair::new(s.height, s.width, predict(net, s)?, gt)
        })
        .collect::<Result<Vec<_>>>()?;
    MetricReport::compute(&pairs)
}

/// Runs `plan` on `train`. With `out_dir` set, writes `train_log.csv` and
/// checkpoints there. A non-finite loss or gradient aborts the run; the
/// checkpoints already on disk are left untouched.
pub fn train<T: Element>(
    net: &mut LpcaNet<T>,
    train: &[FloatSample],
    eval: &[FloatSample],
    plan: &TrainPlan,
    out_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    plan.validate()?;
    if train.len() < 2 {
        return Err(Error::Data(format!("need at least 2 training samples, got {}", train.len())));
    }
    let mut log_file = match out_dir {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            let path = dir.join("train_log.csv");
            let mut f = BufWriter::new(File::create(&path).map_err(|e| Error::io(&path, e))?);
            writeln!(f, "{LOG_HEADER}").map_err(|e| Error::io(&path, e))?;
            Some((f, path))
        }
        None => None,
    };

    let mut opt = AdamW::new(AdamWConfig {
        weight_decay: plan.weight_decay,
        ..AdamWConfig::default()
    });
    let mut order_rng = ChaCha8Rng::seed_from_u64(plan.seed);
    let mut aug_rng = ChaCha8Rng::seed_from_u64(plan.augment.as_ref().map_or(0, |a| a.seed));
    aug_rng.set_stream(1);
    let total = plan.total_steps(train.len());
    let per_epoch = plan.batches_per_epoch(train.len());
    let mut outcome = TrainOutcome {
        log: Vec::new(),
        step_losses: Vec::new(),
        last_checkpoint: None,
    };
    let mut step = 0u64;

    for epoch in 1..=plan.epochs {
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut order_rng);
        let mut epoch_loss = 0.0;
        let mut lr = plan.lr_base;
        for chunk in order.chunks(plan.batch_size).take(per_epoch) {
            let batch_samples: Vec<FloatSample> = chunk
                .iter()
                .map(|&i| match &plan.augment {
                    Some(spec) => augment(&train[i], spec, &mut aug_rng),
                    None => train[i].clone(),
                })
                .collect();
            let refs: Vec<&FloatSample> = batch_samples.iter().collect();
            let batch = make_batch::<T>(&refs)?;

            let tape = Tape::new();
            let rgb = tape.constant(batch.rgb);
            let depth = tape.constant(batch.depth);
            let pred = net.forward(&rgb, &depth, Mode::Train)?;
            let loss = bce_loss(&pred, &batch.mask)?;
            let value = loss.value().item().to_f64();
            if !value.is_finite() {
                return Err(Error::Numeric(format!("non-finite loss at epoch {epoch} step {step}")));
            }
            tape.backward(&loss)?;
            let grads = tape.param_grads();
            drop((loss, pred, rgb, depth));
            drop(tape);

            net.zero_grad();
            net.accumulate_grads(&grads)?;
            lr = cosine_lr(step, total, plan.lr_base, plan.lr_min);
            opt.step(net, lr)?;
            step += 1;
            epoch_loss += value;
            outcome.step_losses.push(value);
        }

        let last = epoch == plan.epochs;
        let metrics = if !eval.is_empty() && plan.eval_every > 0 && (epoch % plan.eval_every == 0 || last) {
            Some(evaluate(net, eval)?)
        } else {
            None
        };
        let row = LogRow {
            epoch,
            step,
            lr,
            loss: epoch_loss / per_epoch as f64,
            metrics,
        };
        if let Some((f, path)) = &mut log_file {
            writeln!(f, "{}", row.csv())
                .and_then(|_| f.flush())
                .map_err(|e| Error::io(path.as_path(), e))?;
        }
        outcome.log.push(row);

        if let Some(dir) = out_dir {
            if last || (plan.checkpoint_every > 0 && epoch % plan.checkpoint_every == 0) {
                let path = dir.join(format!("epoch_{epoch:04}.ckpt"));
                checkpoint::save(net, &path)?;
                checkpoint::save(net, &dir.join("last.ckpt"))?;
                outcome.last_checkpoint = Some(path);
            }
        }
    }
    Ok(outcome)
}
