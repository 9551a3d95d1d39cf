//! Mini-batch training with early stopping on validation macro-F1.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{MarginMode, RunConfig};
use crate::data::Instance;
use crate::error::{Error, Result};
use crate::labels::{Level, NUM_LEVELS};
use crate::model::{AspectModel, Checkpoint};
use crate::numerics::{AdamW, Graph};
use crate::objective::{
    combined_loss, estimate_margins, LogitBatch, MarginEstimate, MarginSchedule,
};

use super::metrics::evaluate;

#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub ce: f64,
    pub mmo: f64,
    pub valid_macro_f1: f64,
    /// Margins in force at the end of the epoch.
    pub margins: [f64; NUM_LEVELS - 1],
}

pub fn train_log_header() -> String {
    let margins: Vec<String> = (1..NUM_LEVELS).map(|c| format!("margin_{c}")).collect();
    format!(
        "epoch,train_loss,ce,mmo,valid_macro_f1,{}",
        margins.join(",")
    )
}

impl EpochLog {
    pub fn csv_row(&self) -> String {
        let margins: Vec<String> = self.margins.iter().map(|m| format!("{m:.9}")).collect();
        format!(
            "{},{:.9},{:.9},{:.9},{:.9},{}",
            self.epoch,
            self.train_loss,
            self.ce,
            self.mmo,
            self.valid_macro_f1,
            margins.join(",")
        )
    }
}

pub fn write_train_log<W: Write>(mut w: W, log: &[EpochLog]) -> Result<()> {
    writeln!(w, "{}", train_log_header())?;
    for row in log {
        writeln!(w, "{}", row.csv_row())?;
    }
    Ok(())
}

/// Early-stopping bookkeeping. The first validation always counts as an
/// improvement; training stops once `patience` validations in a row fail
/// to beat the best.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub epoch: usize,
    pub best_metric: f64,
    pub best_epoch: Option<usize>,
    pub since_improvement: usize,
    pub validations: usize,
}

impl Default for TrainState {
    fn default() -> Self {
        TrainState {
            epoch: 0,
            best_metric: f64::NEG_INFINITY,
            best_epoch: None,
            since_improvement: 0,
            validations: 0,
        }
    }
}

impl TrainState {
    /// Records a validation result; true when it is a new best.
    pub fn observe(&mut self, metric: f64) -> bool {
        self.validations += 1;
        if metric > self.best_metric {
            self.best_metric = metric;
            self.best_epoch = Some(self.epoch);
            self.since_improvement = 0;
            true
        } else {
            self.since_improvement += 1;
            false
        }
    }

    pub fn should_stop(&self, patience: usize) -> bool {
        self.since_improvement >= patience
    }
}

/// Hooks called from the training loop.
pub trait TrainObserver {
    fn epoch_end(&mut self, _log: &EpochLog, _margins: Option<&MarginEstimate>) -> Result<()> {
        Ok(())
    }

    fn improved(&mut self, _ckpt: &Checkpoint) -> Result<()> {
        Ok(())
    }
}

impl TrainObserver for () {}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub best: Checkpoint,
    pub last: AspectModel<f32>,
    pub log: Vec<EpochLog>,
    pub margin_history: Vec<(usize, MarginEstimate)>,
    pub state: TrainState,
}

pub fn train(
    cfg: &RunConfig,
    train_set: &[Instance],
    valid_set: &[Instance],
) -> Result<TrainOutcome> {
    train_with(
        cfg,
        train_set,
        valid_set,
        &mut (),
        |model, schedule, valid| {
            Ok(evaluate(model, valid, cfg.aspect, &schedule.cefr_scale())?.macro_f1)
        },
    )
}

/// Training loop with a caller-supplied validation metric (higher is better).
pub fn train_with<O, V>(
    cfg: &RunConfig,
    train_set: &[Instance],
    valid_set: &[Instance],
    observer: &mut O,
    mut validate: V,
) -> Result<TrainOutcome>
where
    O: TrainObserver + ?Sized,
    V: FnMut(&AspectModel<f32>, &MarginSchedule, &[Instance]) -> Result<f64>,
{
    cfg.validate()?;
    if train_set.is_empty() || valid_set.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let labels: Vec<Level> = train_set
        .iter()
        .map(|i| i.label(cfg.aspect))
        .collect::<Result<_>>()?;
    for inst in valid_set {
        inst.label(cfg.aspect)?;
    }

    let mut model = AspectModel::<f32>::from_config(cfg);
    let mut schedule = MarginSchedule::from_config(cfg)?;
    let opt = AdamW::new(cfg.learning_rate, cfg.weight_decay);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    let mut state = TrainState::default();
    let mut log = Vec::new();
    let mut margin_history = Vec::new();
    let mut best: Option<Checkpoint> = None;

    while state.epoch < cfg.max_epochs {
        state.epoch += 1;
        let epoch = state.epoch;
        order.shuffle(&mut rng);
        let scale = schedule.cefr_scale();
        let (mut loss_sum, mut ce_sum, mut mmo_sum) = (0.0, 0.0, 0.0);
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&Instance> = chunk.iter().map(|&i| &train_set[i]).collect();
            let mut g = Graph::new();
            let z = model.forward_batch(&mut g, &batch)?;
            let logits = LogitBatch::from_rows(
                g.value(z).data(),
                chunk.iter().map(|&i| labels[i]).collect(),
            )?;
            let loss = combined_loss(&logits, &scale, cfg.lambda)?;
            if !loss.total.is_finite() || loss.grad.iter().flatten().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteLoss { epoch });
            }
            let w = chunk.len() as f64;
            loss_sum += loss.total * w;
            ce_sum += loss.ce * w;
            mmo_sum += loss.mmo * w;

            let seed: Vec<f32> = loss.grad.iter().flatten().map(|&v| v as f32).collect();
            model.params.zero_grad();
            g.backward(z, &seed)?;
            g.accumulate_param_grads(&mut model.params);
            opt.step(&mut model.params)?;
        }

        let estimate = if schedule.mode == MarginMode::DataDriven {
            let est = estimate_margins(&model, train_set, cfg.aspect, &mut schedule)?;
            margin_history.push((epoch, est.clone()));
            Some(est)
        } else {
            None
        };

        let metric = validate(&model, &schedule, valid_set)?;
        let n = train_set.len() as f64;
        let row = EpochLog {
            epoch,
            train_loss: loss_sum / n,
            ce: ce_sum / n,
            mmo: mmo_sum / n,
            valid_macro_f1: metric,
            margins: *schedule.margins(),
        };
        observer.epoch_end(&row, estimate.as_ref())?;
        log.push(row);

        if state.observe(metric) {
            let ckpt = Checkpoint {
                config: cfg.clone(),
                model: model.clone(),
                epoch,
                margins: *schedule.margins(),
            };
            observer.improved(&ckpt)?;
            best = Some(ckpt);
        }
        if state.should_stop(cfg.patience) {
            break;
        }
    }

    Ok(TrainOutcome {
        best: best.expect("at least one epoch ran"),
        last: model,
        log,
        margin_history,
        state,
    })
}
