//! Losses, Adam, the learning-rate schedule, dataset splits and the training loop.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hsi::{HsiCube, WavelengthTable};
use crate::network::{backward, forward, ModelParams};

/// Mean of `|X - X̂| / (X + 1)` over every element.
pub fn rmrae(target: &HsiCube, estimate: &HsiCube) -> Result<f64> {
    target.check_same_shape(estimate, "estimate")?;
    if let Some(i) = target.data().iter().position(|&x| x < 0.0) {
        return Err(Error::Domain(format!(
            "rMRAE target must be nonnegative, element {i} is {}",
            target.data()[i]
        )));
    }
    let sum: f64 = target
        .data()
        .iter()
        .zip(estimate.data())
        .map(|(&x, &e)| (x - e).abs() / (x + 1.0))
        .sum();
    Ok(sum / target.data().len() as f64)
}

/// Mean of `|X - X̂| / X`. Evaluation only.
pub fn mrae(target: &HsiCube, estimate: &HsiCube) -> Result<f64> {
    target.check_same_shape(estimate, "estimate")?;
    if let Some(i) = target.data().iter().position(|&x| x <= 0.0) {
        return Err(Error::Domain(format!(
            "MRAE needs a strictly positive target, element {i} is {}",
            target.data()[i]
        )));
    }
    let sum: f64 = target
        .data()
        .iter()
        .zip(estimate.data())
        .map(|(&x, &e)| (x - e).abs() / x)
        .sum();
    Ok(sum / target.data().len() as f64)
}

/// L1 norm of the visible bands `0..visible_boundary` of the gated cube.
///
/// With `normalize` the sum is divided by the visible slab's element count.
pub fn sparsity_loss(ys: &HsiCube, wl: &WavelengthTable, normalize: bool) -> Result<f64> {
    if wl.len() != ys.bands() {
        return Err(Error::dim(format!(
            "wavelength table has {} entries for {} bands",
            wl.len(),
            ys.bands()
        )));
    }
    Ok(visible_l1(ys, wl.visible_boundary(), normalize))
}

fn visible_l1(ys: &HsiCube, visible: usize, normalize: bool) -> f64 {
    let slab = &ys.data()[..visible * ys.pixels()];
    let sum: f64 = slab.iter().map(|v| v.abs()).sum();
    if normalize {
        sum / slab.len() as f64
    } else {
        sum
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub rmrae: f64,
    pub sparsity: f64,
    pub total: f64,
}

impl LossReport {
    pub fn new(rmrae: f64, sparsity: f64) -> Self {
        Self {
            rmrae,
            sparsity,
            total: rmrae + sparsity,
        }
    }
}

/// What the network is trained to minimize.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Objective {
    /// Number of leading bands penalized by the sparsity term.
    pub visible_bands: usize,
    pub sparsity: bool,
    pub normalize_sparsity: bool,
}

impl Objective {
    pub fn new(wl: &WavelengthTable, config: &TrainConfig) -> Self {
        Self {
            visible_bands: wl.visible_boundary(),
            sparsity: config.sparsity,
            normalize_sparsity: config.normalize_sparsity,
        }
    }

    /// rMRAE only.
    pub fn rmrae_only() -> Self {
        Self {
            visible_bands: 0,
            sparsity: false,
            normalize_sparsity: true,
        }
    }

    /// `selected` is the gate output; `None` disables the sparsity term.
    pub fn loss(&self, target: &HsiCube, estimate: &HsiCube, selected: Option<&HsiCube>) -> Result<LossReport> {
        let r = rmrae(target, estimate)?;
        let s = match selected {
            Some(ys) if self.sparsity => {
                if self.visible_bands > ys.bands() {
                    return Err(Error::dim(format!(
                        "{} visible bands requested on a {}-band cube",
                        self.visible_bands,
                        ys.bands()
                    )));
                }
                visible_l1(ys, self.visible_bands, self.normalize_sparsity)
            }
            _ => 0.0,
        };
        Ok(LossReport::new(r, s))
    }

    /// d rMRAE / d estimate; zero where the residual is exactly zero.
    pub fn rmrae_gradient(&self, target: &HsiCube, estimate: &HsiCube) -> Vec<f64> {
        let n = target.data().len() as f64;
        target
            .data()
            .iter()
            .zip(estimate.data())
            .map(|(&x, &e)| sign(e - x) / ((x + 1.0) * n))
            .collect()
    }

    /// d sparsity / d gate output.
    pub fn sparsity_gradient(&self, ys: &HsiCube) -> Vec<f64> {
        let slab = self.visible_bands * ys.pixels();
        let scale = if self.normalize_sparsity && slab > 0 {
            1.0 / slab as f64
        } else {
            1.0
        };
        let mut g: Vec<f64> = ys.data().iter().map(|&v| sign(v) * scale).collect();
        g[slab..].iter_mut().for_each(|v| *v = 0.0);
        g
    }
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPSILON: f64 = 1e-8;

/// Training hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub initial_lr: f64,
    pub decay_factor: f64,
    pub decay_every_epochs: usize,
    pub max_epochs: usize,
    /// Epochs without a validation improvement larger than `min_improvement`.
    pub patience: usize,
    pub min_improvement: f64,
    pub seed: u64,
    pub batch_size: usize,
    pub sparsity: bool,
    pub normalize_sparsity: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            initial_lr: 3e-4,
            decay_factor: 0.6,
            decay_every_epochs: 30,
            max_epochs: 300,
            patience: 20,
            min_improvement: 1e-5,
            seed: 0,
            batch_size: 4,
            sparsity: true,
            normalize_sparsity: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.initial_lr > 0.0
            && self.initial_lr.is_finite()
            && self.decay_factor > 0.0
            && self.decay_factor < 1.0
            && self.decay_every_epochs > 0
            && self.patience > 0
            && self.min_improvement >= 0.0
            && self.batch_size > 0;
        if ok {
            Ok(())
        } else {
            Err(Error::Parameter(format!("invalid training config {self:?}")))
        }
    }
}

/// `initial_lr * decay_factor ^ floor(epoch / decay_every_epochs)`.
pub fn lr_schedule(epoch: usize, config: &TrainConfig) -> f64 {
    let steps = (epoch / config.decay_every_epochs) as i32;
    config.initial_lr * config.decay_factor.powi(steps)
}

/// Adam state: step count, moment accumulators in [`ModelParams::tensors`] order, learning rate.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimState {
    pub step: u64,
    pub first: Vec<Vec<f64>>,
    pub second: Vec<Vec<f64>>,
    pub lr: f64,
}

impl OptimState {
    pub fn new(params: &ModelParams, lr: f64) -> Self {
        let zeros: Vec<Vec<f64>> = params
            .tensors()
            .into_iter()
            .map(|(_, t)| vec![0.0; t.len()])
            .collect();
        Self {
            step: 0,
            first: zeros.clone(),
            second: zeros,
            lr,
        }
    }
}

/// One bias-corrected Adam update.
pub fn adam_step(params: &mut ModelParams, grads: &ModelParams, state: &mut OptimState) -> Result<()> {
    let named = grads.tensors();
    if named.len() != state.first.len() {
        return Err(Error::dim("optimizer state does not match the parameter set"));
    }
    for (name, g) in &named {
        if g.data().iter().any(|v| !v.is_finite()) {
            return Err(Error::numeric(name.clone(), "non-finite gradient"));
        }
    }
    if state.lr.is_nan() || state.lr <= 0.0 {
        return Err(Error::Parameter(format!("learning rate must be positive, got {}", state.lr)));
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - ADAM_BETA1.powi(t);
    let c2 = 1.0 - ADAM_BETA2.powi(t);
    for (i, p) in params.tensors_mut().into_iter().enumerate() {
        let g = named[i].1.data();
        let m = &mut state.first[i];
        let v = &mut state.second[i];
        if g.len() != p.len() || m.len() != p.len() {
            return Err(Error::dim(format!("gradient '{}' does not match its parameter", named[i].0)));
        }
        for (j, w) in p.data_mut().iter_mut().enumerate() {
            m[j] = ADAM_BETA1 * m[j] + (1.0 - ADAM_BETA1) * g[j];
            v[j] = ADAM_BETA2 * v[j] + (1.0 - ADAM_BETA2) * g[j] * g[j];
            let mh = m[j] / c1;
            let vh = v[j] / c2;
            *w -= state.lr * mh / (vh.sqrt() + ADAM_EPSILON);
        }
    }
    Ok(())
}

/// Partition sizes for `n` items: floors of `n * f`, then val and test raised to at
/// least one each when `n >= 3`, remainder to train.
pub fn split_counts(n: usize, fractions: (f64, f64, f64)) -> Result<(usize, usize, usize)> {
    let (ft, fv, fs) = fractions;
    if [ft, fv, fs].iter().any(|f| !(0.0..=1.0).contains(f)) || (ft + fv + fs - 1.0).abs() > 1e-6 {
        return Err(Error::Parameter(format!(
            "split fractions must be in [0, 1] and sum to 1, got {fractions:?}"
        )));
    }
    if n == 0 {
        return Err(Error::Parameter("cannot split an empty dataset".into()));
    }
    let nonzero = [ft, fv, fs].iter().filter(|&&f| f > 0.0).count();
    if n < nonzero {
        return Err(Error::Parameter(format!(
            "{n} items cannot fill {nonzero} nonempty splits"
        )));
    }
    let floor = |f: f64| (n as f64 * f + 1e-9).floor() as usize;
    let mut val = floor(fv);
    let mut test = floor(fs);
    if fv > 0.0 {
        val = val.max(1);
    }
    if fs > 0.0 {
        test = test.max(1);
    }
    if ft > 0.0 && val + test >= n {
        return Err(Error::Parameter(format!("{n} items leave no training data")));
    }
    Ok((n - val - test, val, test))
}

/// Items partitioned into train/val/test.
#[derive(Debug, Clone, PartialEq)]
pub struct Splits<T> {
    pub train: Vec<T>,
    pub val: Vec<T>,
    pub test: Vec<T>,
}

impl<T> Splits<T> {
    pub fn sizes(&self) -> (usize, usize, usize) {
        (self.train.len(), self.val.len(), self.test.len())
    }
}

pub const DEFAULT_SPLIT: (f64, f64, f64) = (0.90, 0.05, 0.05);

/// Seeded shuffle, then partition by [`split_counts`].
pub fn split_dataset<T: Clone>(items: &[T], fractions: (f64, f64, f64), seed: u64) -> Result<Splits<T>> {
    let (n_train, n_val, _) = split_counts(items.len(), fractions)?;
    let mut order: Vec<usize> = (0..items.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let pick = |idx: &[usize]| idx.iter().map(|&i| items[i].clone()).collect::<Vec<T>>();
    Ok(Splits {
        train: pick(&order[..n_train]),
        val: pick(&order[n_train..n_train + n_val]),
        test: pick(&order[n_train + n_val..]),
    })
}

/// One hazy input with its clean target.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub hazy: HsiCube,
    pub clean: HsiCube,
}

/// In-memory training data.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub train: Vec<Sample>,
    pub val: Vec<Sample>,
    pub wavelengths: WavelengthTable,
}

/// One row of the training history.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_total: f64,
    pub train_rmrae: f64,
    pub train_sparsity: f64,
    pub val_rmrae: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters of the epoch with the lowest validation rMRAE.
    pub params: ModelParams,
    pub history: Vec<EpochRecord>,
    pub best_epoch: Option<usize>,
    pub stopped_early: bool,
}

/// Mean rMRAE of the network over `samples`.
pub fn evaluate_rmrae(params: &ModelParams, samples: &[Sample]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Parameter("no samples to evaluate".into()));
    }
    let mut sum = 0.0;
    for s in samples {
        sum += rmrae(&s.clean, &forward(&s.hazy, params)?)?;
    }
    Ok(sum / samples.len() as f64)
}

/// Adds `scale * src` into `acc`.
fn accumulate(acc: &mut ModelParams, src: &ModelParams, scale: f64) {
    let src = src.tensors();
    for (a, (_, s)) in acc.tensors_mut().into_iter().zip(src) {
        a.data_mut()
            .iter_mut()
            .zip(s.data())
            .for_each(|(x, y)| *x += scale * y);
    }
}

/// Trains `initial` on `data`, calling `on_epoch` after every completed epoch.
///
/// Train columns of the history are means of per-sample losses seen during the
/// epoch, i.e. measured before each batch's update.
pub fn train_loop(
    initial: ModelParams,
    data: &Dataset,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    config.validate()?;
    if config.max_epochs == 0 {
        return Ok(TrainOutcome {
            params: initial,
            history: Vec::new(),
            best_epoch: None,
            stopped_early: false,
        });
    }
    if data.train.is_empty() || data.val.is_empty() {
        return Err(Error::Parameter("training needs nonempty train and val splits".into()));
    }
    let objective = Objective::new(&data.wavelengths, config);
    let mut params = initial;
    let mut state = OptimState::new(&params, config.initial_lr);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..data.train.len()).collect();
    let mut history = Vec::new();
    let mut best: Option<(f64, usize, ModelParams)> = None;
    let mut last_improvement = 0usize;
    let mut reference = f64::INFINITY;
    let mut stopped_early = false;

    for epoch in 0..config.max_epochs {
        state.lr = lr_schedule(epoch, config);
        order.shuffle(&mut rng);
        let (mut tot, mut rm, mut sp) = (0.0, 0.0, 0.0);
        for (batch, chunk) in order.chunks(config.batch_size).enumerate() {
            let diverged = |source: Error| Error::Divergence {
                epoch,
                batch,
                source: Box::new(source),
            };
            let mut grads = params.zeros_like();
            let scale = 1.0 / chunk.len() as f64;
            for &i in chunk {
                let s = &data.train[i];
                let (report, g) = backward(&s.hazy, &s.clean, &params, &objective).map_err(|e| match e {
                    Error::Numeric { .. } => diverged(e),
                    other => other,
                })?;
                tot += report.total;
                rm += report.rmrae;
                sp += report.sparsity;
                accumulate(&mut grads, &g, scale);
            }
            adam_step(&mut params, &grads, &mut state).map_err(diverged)?;
        }
        let n = data.train.len() as f64;
        let val = evaluate_rmrae(&params, &data.val).map_err(|e| match e {
            Error::Numeric { .. } => Error::Divergence {
                epoch,
                batch: order.len().div_ceil(config.batch_size),
                source: Box::new(e),
            },
            other => other,
        })?;
        let record = EpochRecord {
            epoch,
            lr: state.lr,
            train_total: tot / n,
            train_rmrae: rm / n,
            train_sparsity: sp / n,
            val_rmrae: val,
        };
        on_epoch(&record);
        history.push(record);

        if best.as_ref().is_none_or(|(b, _, _)| val < *b) {
            best = Some((val, epoch, params.clone()));
        }
        if val < reference - config.min_improvement {
            reference = val;
            last_improvement = epoch;
        } else if epoch - last_improvement >= config.patience {
            stopped_early = true;
            break;
        }
    }
    let (_, best_epoch, best_params) = best.expect("at least one epoch ran");
    Ok(TrainOutcome {
        params: best_params,
        history,
        best_epoch: Some(best_epoch),
        stopped_early,
    })
}

/// Writes the history as CSV with a header row.
pub fn write_history<W: Write>(out: W, history: &[EpochRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in history {
        w.serialize(r).map_err(|e| Error::Format(e.to_string()))?;
    }
    if history.is_empty() {
        w.write_record(["epoch", "lr", "train_total", "train_rmrae", "train_sparsity", "val_rmrae"])
            .map_err(|e| Error::Format(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}
