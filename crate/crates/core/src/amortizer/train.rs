//! Attribution loss, optimizer schedule and the training loop.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::net::{AmortizerNet, NetShape};
use super::{TrainConfig, TrainReport};
use crate::dataset::Dataset;
use crate::models::Predictor;
use crate::oracle::sample_coalition;
use crate::valuefunctions::{build_background, value, BackgroundSet, Coalition, ValueFunctionSpec};
use crate::{rng, Error, Result};

/// One training element: an instance with its masks and regression targets.
#[derive(Debug, Clone)]
pub struct LossItem<'a> {
    pub x: &'a [f64],
    /// `v_x(∅)`.
    pub base: f64,
    pub fx: f64,
    pub masks: Vec<Coalition>,
    pub targets: Vec<f64>,
    pub weights: Vec<f64>,
}

fn item_loss_and_dout(phi: &[f64], it: &LossItem, eff_weight: f64) -> (f64, Vec<f64>) {
    let m = it.masks.len().max(1) as f64;
    let mut dout = vec![0.0; phi.len()];
    let mut loss = 0.0;
    for ((s, &t), &w) in it.masks.iter().zip(&it.targets).zip(&it.weights) {
        let g = it.base + s.indices().map(|i| phi[i]).sum::<f64>();
        let r = g - t;
        loss += w * r * r / m;
        for i in s.indices() {
            dout[i] += 2.0 * w * r / m;
        }
    }
    let e = phi.iter().sum::<f64>() - (it.fx - it.base);
    loss += eff_weight * e * e;
    for v in &mut dout {
        *v += 2.0 * eff_weight * e;
    }
    (loss, dout)
}

/// Mean over items of the weighted mask regression error plus the
/// efficiency penalty. Dropout is disabled.
pub fn amortizer_loss(net: &AmortizerNet, batch: &[LossItem], efficiency_weight: f64) -> f64 {
    batch
        .iter()
        .map(|it| item_loss_and_dout(&net.forward(it.x), it, efficiency_weight).0)
        .sum::<f64>()
        / batch.len().max(1) as f64
}

/// Loss and its gradient with respect to the flat parameter vector.
/// Dropout masks come from `dropout_rng` when given.
pub fn amortizer_loss_grad(
    net: &AmortizerNet,
    batch: &[LossItem],
    efficiency_weight: f64,
    mut dropout_rng: Option<&mut ChaCha8Rng>,
) -> (f64, Vec<f64>) {
    let mut grad = vec![0.0; net.params.len()];
    let n = batch.len().max(1) as f64;
    let mut total = 0.0;
    for it in batch {
        let (phi, cache) = net.forward_impl(it.x, dropout_rng.as_deref_mut());
        let (l, mut dout) = item_loss_and_dout(&phi, it, efficiency_weight);
        total += l / n;
        for v in &mut dout {
            *v /= n;
        }
        net.backward(&cache, &dout, &mut grad);
    }
    (total, grad)
}

struct Optimizer {
    m: Vec<f64>,
    v: Vec<f64>,
    mom: Vec<f64>,
    t: i32,
}

impl Optimizer {
    fn new(n: usize) -> Self {
        Optimizer {
            m: vec![0.0; n],
            v: vec![0.0; n],
            mom: vec![0.0; n],
            t: 0,
        }
    }

    fn adam(&mut self, p: &mut [f64], g: &[f64], lr: f64) {
        let (b1, b2, eps): (f64, f64, f64) = (0.9, 0.999, 1e-8);
        self.t += 1;
        let c1 = 1.0 - b1.powi(self.t);
        let c2 = 1.0 - b2.powi(self.t);
        for i in 0..p.len() {
            self.m[i] = b1 * self.m[i] + (1.0 - b1) * g[i];
            self.v[i] = b2 * self.v[i] + (1.0 - b2) * g[i] * g[i];
            p[i] -= lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + eps);
        }
    }

    fn sgd(&mut self, p: &mut [f64], g: &[f64], lr: f64, momentum: f64) {
        for i in 0..p.len() {
            self.mom[i] = momentum * self.mom[i] + g[i];
            p[i] -= lr * self.mom[i];
        }
    }
}

/// Phase and learning rate at a global step.
pub(crate) fn schedule(cfg: &TrainConfig, step: usize, steps_per_epoch: usize) -> (bool, f64) {
    let total = cfg.epochs * steps_per_epoch;
    let adam_steps = ((cfg.epochs as f64 * cfg.adam_fraction).ceil() as usize * steps_per_epoch).min(total);
    let warmup = ((cfg.epochs as f64 * cfg.warmup_fraction).ceil() as usize * steps_per_epoch).max(1);
    if step < adam_steps {
        let scale = ((step + 1) as f64 / warmup as f64).min(1.0);
        (true, cfg.learning_rate * scale)
    } else {
        let span = (total - adam_steps).max(1) as f64;
        let t = (step - adam_steps) as f64 / span;
        (false, cfg.sgd_learning_rate * 0.5 * (1.0 + (std::f64::consts::PI * t).cos()))
    }
}

pub(crate) struct Prepared {
    pub rows: Vec<Vec<f64>>,
    pub fx: Vec<f64>,
    pub base: Vec<f64>,
    pub backgrounds: Vec<BackgroundSet>,
    /// Fixed mask pool per instance with cached values, if configured.
    pub pool: Option<Vec<Vec<(Coalition, f64)>>>,
}

pub(crate) fn prepare(train: &Dataset, model: &dyn Predictor, spec: &ValueFunctionSpec, cfg: &TrainConfig) -> Result<Prepared> {
    let mut idx: Vec<usize> = (0..train.len()).collect();
    if let Some(k) = cfg.max_instances {
        if k < idx.len() {
            idx.shuffle(&mut rng::stream(cfg.seed, "amortizer-instances", &[]));
            idx.truncate(k);
            idx.sort_unstable();
        }
    }
    let rows: Vec<Vec<f64>> = idx.iter().map(|&i| train.rows[i].clone()).collect();
    let d = train.dim();
    let mut backgrounds = Vec::with_capacity(rows.len());
    let mut fx = Vec::with_capacity(rows.len());
    let mut base = Vec::with_capacity(rows.len());
    for x in &rows {
        let bg = build_background(train, spec, model, x)?;
        base.push(value(x, &Coalition::empty(d), model, &bg));
        fx.push(model.score(x));
        backgrounds.push(bg);
    }
    let pool = cfg.mask_pool.map(|p| {
        rows.iter()
            .enumerate()
            .map(|(i, x)| {
                let mut r = rng::stream(cfg.seed, "amortizer-pool", &[i as u64]);
                (0..p)
                    .map(|_| {
                        let s = sample_coalition(&mut r, d);
                        (s, value(x, &s, model, &backgrounds[i]))
                    })
                    .collect()
            })
            .collect()
    });
    Ok(Prepared {
        rows,
        fx,
        base,
        backgrounds,
        pool,
    })
}

pub(crate) fn train_loop(
    train: &Dataset,
    model: &dyn Predictor,
    prep: &Prepared,
    cfg: &TrainConfig,
    on_epoch: &mut dyn FnMut(usize, &AmortizerNet, f64),
) -> Result<(AmortizerNet, TrainReport)> {
    let d = train.dim();
    if d < 2 {
        return Err(Error::InvalidParameter("the amortizer needs at least 2 features".into()));
    }
    let shape = NetShape::new(&train.schema, cfg.hidden, cfg.blocks, cfg.dropout);
    let mut net = AmortizerNet::init(shape, &mut rng::stream(cfg.seed, "amortizer-init", &[]));
    let mut opt = Optimizer::new(net.params.len());
    let n = prep.rows.len();
    let bs = cfg.batch_size.min(n).max(1);
    let steps_per_epoch = n.div_ceil(bs);
    let mut order: Vec<usize> = (0..n).collect();
    let mut losses = Vec::with_capacity(cfg.epochs);
    let mut initial = None;
    let mut above = 0usize;
    let mut step = 0usize;
    for epoch in 0..cfg.epochs {
        let mut erng = rng::stream(cfg.seed, "amortizer-epoch", &[epoch as u64]);
        order.shuffle(&mut erng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(bs) {
            let batch: Vec<LossItem> = chunk
                .iter()
                .map(|&i| {
                    let x = &prep.rows[i];
                    let (masks, targets): (Vec<Coalition>, Vec<f64>) = match &prep.pool {
                        Some(pool) => (0..cfg.masks_per_input)
                            .map(|_| pool[i][erng.random_range(0..pool[i].len())])
                            .unzip(),
                        None => (0..cfg.masks_per_input)
                            .map(|_| {
                                let s = sample_coalition(&mut erng, d);
                                (s, value(x, &s, model, &prep.backgrounds[i]))
                            })
                            .unzip(),
                    };
                    LossItem {
                        x,
                        base: prep.base[i],
                        fx: prep.fx[i],
                        weights: vec![1.0; masks.len()],
                        masks,
                        targets,
                    }
                })
                .collect();
            let (loss, grad) = amortizer_loss_grad(&net, &batch, cfg.efficiency_weight, Some(&mut erng));
            if !loss.is_finite() {
                return Err(Error::Diverged(format!("non-finite loss at epoch {epoch}")));
            }
            let (adam, lr) = schedule(cfg, step, steps_per_epoch);
            if adam {
                opt.adam(&mut net.params, &grad, lr);
            } else {
                opt.sgd(&mut net.params, &grad, lr, cfg.momentum);
            }
            step += 1;
            epoch_loss += loss * chunk.len() as f64 / n as f64;
        }
        log::debug!("amortizer epoch {epoch}: loss {epoch_loss:.6e}");
        losses.push(epoch_loss);
        on_epoch(epoch, &net, epoch_loss);
        let init = *initial.get_or_insert(epoch_loss);
        if epoch_loss > 10.0 * init {
            above += 1;
            if above >= 10 {
                return Err(Error::Diverged(format!(
                    "loss {epoch_loss:.3e} above 10x the initial {init:.3e} for 10 epochs (epoch {epoch})"
                )));
            }
        } else {
            above = 0;
        }
    }
    let report = TrainReport {
        final_loss: losses.last().copied().unwrap_or(f64::NAN),
        epoch_losses: losses,
        n_instances: n,
        n_params: net.params.len(),
    };
    Ok((net, report))
}
