//! Training harness: combined cross-entropy + soft-dice objective, Dice
//! similarity metric, polynomial learning-rate decay, Nesterov SGD, and a
//! seed-deterministic k-fold cross-validation loop over the synthetic
//! segmentation benchmark.

use std::path::Path;

use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint;
use crate::data::{batch, SegSample};
use crate::error::{Error, Result};
use crate::network::{argmax_labels, ArchitectureConfig, NetworkState};
use crate::scalar::Scalar;
use crate::tape::Tape;
use crate::tensor::LabelMap;

pub const DICE_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr0: f64,
    pub max_iters: usize,
    pub poly_power: f64,
    pub momentum: f64,
    pub nesterov: bool,
    pub batch_size: usize,
    pub folds: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr0: 0.01,
            max_iters: 1000,
            poly_power: 0.9,
            momentum: 0.99,
            nesterov: true,
            batch_size: 1,
            folds: 5,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, dataset_len: usize) -> Result<()> {
        if !(self.lr0 > 0.0) {
            return Err(Error::invalid(format!("lr0 must be positive, got {}", self.lr0)));
        }
        if self.max_iters == 0 {
            return Err(Error::invalid("max_iters must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be at least 1"));
        }
        if self.folds == 0 || self.folds > dataset_len {
            return Err(Error::invalid(format!(
                "folds must lie in 1..={dataset_len} (dataset size), got {}",
                self.folds
            )));
        }
        Ok(())
    }
}

/// lr0 * (1 - iter/max_iters)^power, clamped at zero past the horizon.
pub fn poly_lr(iter: usize, cfg: &TrainConfig) -> f64 {
    let frac = 1.0 - (iter as f64 / cfg.max_iters as f64);
    if frac <= 0.0 {
        0.0
    } else {
        cfg.lr0 * frac.powf(cfg.poly_power)
    }
}

/// Hard Dice similarity for one class: 2|A∩B| / (|A|+|B|). Both-empty
/// counts as perfect (1.0); exactly one empty counts as total miss (0.0).
pub fn dsc_metric(pred: &LabelMap, truth: &LabelMap, class: usize) -> Result<f64> {
    if pred.n != truth.n || pred.h != truth.h || pred.w != truth.w {
        return Err(Error::shape(format!(
            "label maps disagree: {}x{}x{} vs {}x{}x{}",
            pred.n, pred.h, pred.w, truth.n, truth.h, truth.w
        )));
    }
    let mut a = 0usize;
    let mut b = 0usize;
    let mut inter = 0usize;
    for (&p, &t) in pred.labels.iter().zip(truth.labels.iter()) {
        let pa = p == class;
        let tb = t == class;
        a += pa as usize;
        b += tb as usize;
        inter += (pa && tb) as usize;
    }
    Ok(match (a, b) {
        (0, 0) => 1.0,
        (0, _) | (_, 0) => 0.0,
        _ => 2.0 * inter as f64 / (a + b) as f64,
    })
}

/// SGD with momentum. Velocity recurrence `v <- mu*v - lr*g`; the plain
/// update applies `p += v`, the Nesterov update looks ahead with
/// `p += mu*v - lr*g` (equivalent to the torch formulation up to the
/// `v = -lr*b` change of variable).
pub struct Sgd<T: Scalar> {
    velocities: Vec<Vec<T>>,
    pub momentum: f64,
    pub nesterov: bool,
}

impl<T: Scalar> Sgd<T> {
    pub fn new(net: &NetworkState<T>, momentum: f64, nesterov: bool) -> Self {
        let mut velocities = Vec::new();
        net.visit_params(&mut |_, t| velocities.push(vec![T::ZERO; t.data.len()]));
        Sgd {
            velocities,
            momentum,
            nesterov,
        }
    }

    /// `grads` must follow the network's canonical parameter order (the
    /// order of `visit_params`), one buffer per parameter.
    pub fn step(&mut self, net: &mut NetworkState<T>, grads: &[Vec<T>], lr: f64) -> Result<()> {
        let mut idx = 0usize;
        let mut err: Option<Error> = None;
        let (mu, lrs) = (T::from_f64(self.momentum), T::from_f64(lr));
        let nesterov = self.nesterov;
        let velocities = &mut self.velocities;
        let n_params = velocities.len();
        if grads.len() != n_params {
            return Err(Error::invalid(format!(
                "expected {n_params} gradient buffers, got {}",
                grads.len()
            )));
        }
        net.visit_params_mut(&mut |name, t| {
            if err.is_some() {
                return;
            }
            let g = &grads[idx];
            let v = &mut velocities[idx];
            idx += 1;
            if g.len() != t.data.len() {
                err = Some(Error::shape(format!(
                    "gradient for {name} has {} elements, parameter has {}",
                    g.len(),
                    t.data.len()
                )));
                return;
            }
            for i in 0..g.len() {
                v[i] = mu * v[i] - lrs * g[i];
                t.data[i] = t.data[i]
                    + if nesterov {
                        mu * v[i] - lrs * g[i]
                    } else {
                        v[i]
                    };
            }
        });
        match err {
            Some(e) => Err(e),
            None => Ok(()),
        }
    }
}

/// Disjoint, covering, seed-deterministic split of `0..len` into `folds`
/// near-equal parts (shuffled round-robin assignment).
pub fn fold_partition(len: usize, folds: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if folds == 0 || folds > len {
        return Err(Error::invalid(format!(
            "folds must lie in 1..={len}, got {folds}"
        )));
    }
    let mut order: Vec<usize> = (0..len).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x666f_6c64);
    order.shuffle(&mut rng);
    let mut parts = vec![Vec::new(); folds];
    for (i, idx) in order.into_iter().enumerate() {
        parts[i % folds].push(idx);
    }
    for p in &mut parts {
        p.sort_unstable();
    }
    Ok(parts)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IterLog {
    pub iter: usize,
    pub lr: f64,
    pub loss_total: f64,
    pub loss_ce: f64,
    pub loss_dice: f64,
}

pub const ITER_LOG_HEADER: &str = "iter,lr,loss_total,loss_ce,loss_dice";

impl IterLog {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{}",
            self.iter, self.lr, self.loss_total, self.loss_ce, self.loss_dice
        )
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    /// Mean hard DSC per class (index = class id), averaged over samples.
    pub per_class: Vec<f64>,
    /// Mean over foreground classes (1..K).
    pub mean_foreground: f64,
}

impl EvalReport {
    pub fn csv(&self) -> String {
        let mut out = String::from("class,dsc\n");
        for (k, d) in self.per_class.iter().enumerate() {
            out.push_str(&format!("{k},{d}\n"));
        }
        out.push_str(&format!("mean,{}\n", self.mean_foreground));
        out
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    pub train_indices: Vec<usize>,
    pub val_indices: Vec<usize>,
    pub log: Vec<IterLog>,
    pub eval: EvalReport,
}

/// One optimization step on a batch; returns the loss components.
pub fn train_step<T: Scalar>(
    net: &mut NetworkState<T>,
    opt: &mut Sgd<T>,
    image: &crate::tensor::Tensor<T>,
    labels: &LabelMap,
    lr: f64,
) -> Result<(f64, f64, f64)> {
    let mut tape = Tape::new();
    let xid = tape.leaf(image);
    let (logits, binds) = net.forward_on_tape(&mut tape, xid)?;
    let ce = tape.cross_entropy(logits, labels)?;
    let dice = tape.soft_dice(logits, labels, DICE_EPS)?;
    let total = tape.add(ce, dice)?;
    let ce_v = tape.value(ce).data[0].to_f64();
    let dice_v = tape.value(dice).data[0].to_f64();
    let total_v = tape.value(total).data[0].to_f64();
    tape.backward(total)?;

    // Gradients come back keyed by binding name; reorder into the
    // network's canonical parameter order for the optimizer.
    let mut by_name: std::collections::HashMap<&str, Vec<T>> = std::collections::HashMap::new();
    for (name, id) in &binds {
        let g = tape
            .grad(*id)
            .map(|g| g.to_vec())
            .unwrap_or_else(|| vec![T::ZERO; tape.shape(*id).numel()]);
        by_name.insert(name.as_str(), g);
    }
    let mut grads = Vec::new();
    let mut missing = None;
    net.visit_params(&mut |name, t| {
        match by_name.get(name.as_str()) {
            Some(g) => grads.push(g.clone()),
            None => {
                if missing.is_none() {
                    missing = Some(name.clone());
                }
                grads.push(vec![T::ZERO; t.data.len()]);
            }
        }
    });
    if let Some(name) = missing {
        return Err(Error::training(format!(
            "parameter {name} was never bound during the forward pass"
        )));
    }
    opt.step(net, &grads, lr)?;
    Ok((total_v, ce_v, dice_v))
}

/// Train one network on the given samples. Batches cycle deterministically
/// through a seed-shuffled order. Aborts on non-finite loss with iteration
/// context.
pub fn train_single<T: Scalar>(
    net: &mut NetworkState<T>,
    cfg: &TrainConfig,
    samples: &[SegSample<T>],
    fold_tag: Option<usize>,
) -> Result<Vec<IterLog>> {
    if samples.is_empty() {
        return Err(Error::training("cannot train on an empty dataset"));
    }
    let mut opt = Sgd::new(net, cfg.momentum, cfg.nesterov);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x7472_6169);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.shuffle(&mut rng);
    let mut cursor = 0usize;
    let mut log = Vec::with_capacity(cfg.max_iters);
    for iter in 0..cfg.max_iters {
        let mut picked = Vec::with_capacity(cfg.batch_size);
        for _ in 0..cfg.batch_size {
            if cursor == order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            picked.push(&samples[order[cursor]]);
            cursor += 1;
        }
        let (image, labels) = batch(&picked)?;
        let lr = poly_lr(iter, cfg);
        let (total, ce, dice) = train_step(net, &mut opt, &image, &labels, lr)?;
        if !total.is_finite() {
            let ctx = match fold_tag {
                Some(f) => format!("fold {f}, iteration {iter}"),
                None => format!("iteration {iter}"),
            };
            return Err(Error::training(format!(
                "non-finite loss {total} at {ctx} (ce={ce}, dice={dice})"
            )));
        }
        net.step += 1;
        log.push(IterLog {
            iter,
            lr,
            loss_total: total,
            loss_ce: ce,
            loss_dice: dice,
        });
    }
    Ok(log)
}

/// Deterministic evaluation: argmax decoding, hard per-class DSC averaged
/// over samples, mean over foreground classes.
pub fn evaluate<T: Scalar>(
    net: &NetworkState<T>,
    samples: &[SegSample<T>],
) -> Result<EvalReport> {
    if samples.is_empty() {
        return Err(Error::training("cannot evaluate on an empty dataset"));
    }
    let k = net.config.num_classes;
    let mut sums = vec![0.0f64; k];
    for s in samples {
        let logits = net.infer(&s.image)?;
        let pred = argmax_labels(&logits);
        for class in 0..k {
            sums[class] += dsc_metric(&pred, &s.labels, class)?;
        }
    }
    let per_class: Vec<f64> = sums.iter().map(|s| s / samples.len() as f64).collect();
    let mean_foreground = if k > 1 {
        per_class[1..].iter().sum::<f64>() / (k - 1) as f64
    } else {
        per_class[0]
    };
    Ok(EvalReport {
        per_class,
        mean_foreground,
    })
}

/// k-fold cross-validation: for each fold, train a freshly initialized
/// network on the complement and evaluate on the held-out part. A
/// checkpoint is persisted per fold under `out_dir/fold{i}` when a
/// directory is given.
pub fn train_cv<T: Scalar>(
    arch: &ArchitectureConfig,
    cfg: &TrainConfig,
    samples: &[SegSample<T>],
    out_dir: Option<&Path>,
) -> Result<Vec<FoldResult>> {
    cfg.validate(samples.len())?;
    arch.validate()?;
    let parts = fold_partition(samples.len(), cfg.folds, cfg.seed)?;
    let mut results = Vec::with_capacity(cfg.folds);
    for (fold, val_indices) in parts.iter().enumerate() {
        let train_indices: Vec<usize> = (0..samples.len())
            .filter(|i| !val_indices.contains(i))
            .collect();
        // With a single fold there is no complement; train and validate on
        // the full set (overfit mode).
        let train_set: Vec<SegSample<T>> = if train_indices.is_empty() {
            samples.to_vec()
        } else {
            train_indices.iter().map(|&i| samples[i].clone()).collect()
        };
        let val_set: Vec<SegSample<T>> =
            val_indices.iter().map(|&i| samples[i].clone()).collect();
        let mut net = NetworkState::<T>::build(arch, cfg.seed.wrapping_add(fold as u64))?;
        let log = train_single(&mut net, cfg, &train_set, Some(fold))?;
        let eval = evaluate(&net, &val_set)?;
        if let Some(dir) = out_dir {
            let fold_dir = dir.join(format!("fold{fold}"));
            std::fs::create_dir_all(&fold_dir)?;
            checkpoint::save(&fold_dir, &net)?;
        }
        results.push(FoldResult {
            fold,
            train_indices,
            val_indices: val_indices.clone(),
            log,
            eval,
        });
    }
    Ok(results)
}
