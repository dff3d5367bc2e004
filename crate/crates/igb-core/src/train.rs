//! Mini-batch SGD on softmax cross-entropy, with exact analytic gradients
//! through dense layers, ReLU, batch statistics (standard and
//! leave-one-out) and per-sample layer statistics.
//!
//! Plain SGD, no momentum or weight decay: the optimizer stays minimal so
//! initialization effects are not confounded. BatchNorm keeps running
//! mean/variance (momentum 0.9) for eval; the running statistics are
//! primed from a full-batch pass before the first step so that step-0
//! metrics match the static guess statistics.

use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{IgbError, Result};
use crate::metrics::GuessStats;
use crate::net::{
    bn_input_stats, forward, forward_outputs, predict, BnRunningStats, ForwardMode, ForwardTrace,
    Network, NormCache, NormKind, NormPlacement,
};

const BN_RUNNING_MOMENTUM: f64 = 0.9;

/// SGD hyperparameters. The loss is always softmax cross-entropy.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub steps: usize,
    /// Record metrics every this many steps (step 0 and the final step
    /// are always recorded).
    #[serde(default = "default_eval_cadence")]
    pub eval_cadence: usize,
    /// Permute class indices so class 0 is the step-0 dominant class.
    #[serde(default = "default_true")]
    pub relabel_dominant: bool,
    /// Seed for batch shuffling.
    pub seed: u64,
    /// Stop early once global train accuracy reaches this level (checked
    /// at eval points). Runner convenience for convergence-time studies.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stop_at_train_accuracy: Option<f64>,
}

fn default_eval_cadence() -> usize {
    25
}

fn default_true() -> bool {
    true
}

impl TrainConfig {
    pub fn validate(&self, net: &Network) -> Result<()> {
        let mut problems = Vec::new();
        if !(self.learning_rate >= 0.0) {
            problems.push(format!("learning_rate must be >= 0, got {}", self.learning_rate));
        }
        let min_batch = match (net.config.norm_kind, net.config.loo_estimators) {
            (NormKind::BatchNorm, true) => 3,
            (NormKind::BatchNorm, false) => 2,
            _ => 1,
        };
        if self.batch_size < min_batch {
            problems.push(format!(
                "batch_size must be >= {min_batch} for this normalization, got {}",
                self.batch_size
            ));
        }
        if self.eval_cadence == 0 {
            problems.push("eval_cadence must be >= 1".into());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(IgbError::Config(problems.join("; ")))
        }
    }
}

/// Gradients for every trainable parameter, shaped like the network.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
    pub norm_scale: Vec<Array1<f64>>,
    pub norm_shift: Vec<Array1<f64>>,
}

/// Mean softmax cross-entropy and its gradient w.r.t. the outputs,
/// (p − onehot)/B.
pub fn softmax_cross_entropy(outputs: &Array2<f64>, labels: &[usize]) -> Result<(f64, Array2<f64>)> {
    let b = outputs.nrows();
    if labels.len() != b {
        return Err(IgbError::Shape(format!(
            "{} labels for {} output rows",
            labels.len(),
            b
        )));
    }
    let mut probs = outputs.clone();
    let mut loss = 0.0;
    for (a, mut row) in probs.rows_mut().into_iter().enumerate() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let z = row.sum();
        row.mapv_inplace(|v| v / z);
        let y = labels[a];
        if y >= row.len() {
            return Err(IgbError::Shape(format!(
                "label {y} out of range for {} classes",
                row.len()
            )));
        }
        loss -= row[y].ln();
    }
    loss /= b as f64;
    let scale = 1.0 / b as f64;
    for (a, mut row) in probs.rows_mut().into_iter().enumerate() {
        row[labels[a]] -= 1.0;
        row.mapv_inplace(|v| v * scale);
    }
    Ok((loss, probs))
}

fn relu_mask_backward(upstream: &Array2<f64>, relu_input: &Array2<f64>) -> Array2<f64> {
    let mut out = upstream.clone();
    out.zip_mut_with(relu_input, |g, &x| {
        if x <= 0.0 {
            *g = 0.0;
        }
    });
    out
}

/// Backpropagate `d_xhat` through the normalization that produced `cache`.
fn norm_backward(cache: &NormCache, d_xhat: &Array2<f64>) -> Array2<f64> {
    match cache {
        NormCache::BatchStd { inv_std, xhat, .. } => {
            let rows = d_xhat.nrows() as f64;
            let m1 = d_xhat.sum_axis(Axis(0)) / rows;
            let m2 = (d_xhat * xhat).sum_axis(Axis(0)) / rows;
            let mut dx = d_xhat - &m1;
            dx -= &(xhat * &m2);
            dx *= inv_std;
            dx
        }
        NormCache::BatchRunning { inv_std, .. } => d_xhat * inv_std,
        NormCache::Layer { inv_std, xhat } => {
            let cols = d_xhat.ncols() as f64;
            let mut dx = d_xhat.clone();
            for (a, mut row) in dx.rows_mut().into_iter().enumerate() {
                let xr = xhat.row(a);
                let gr = d_xhat.row(a);
                let m1 = gr.sum() / cols;
                let m2 = gr.iter().zip(xr.iter()).map(|(g, x)| g * x).sum::<f64>() / cols;
                for (j, v) in row.iter_mut().enumerate() {
                    *v = inv_std[a] * (gr[j] - m1 - xr[j] * m2);
                }
            }
            dx
        }
        NormCache::Rms { inv_rms, xhat } => {
            let cols = d_xhat.ncols() as f64;
            let mut dx = d_xhat.clone();
            for (a, mut row) in dx.rows_mut().into_iter().enumerate() {
                let xr = xhat.row(a);
                let gr = d_xhat.row(a);
                let m2 = gr.iter().zip(xr.iter()).map(|(g, x)| g * x).sum::<f64>() / cols;
                for (j, v) in row.iter_mut().enumerate() {
                    *v = inv_rms[a] * (gr[j] - xr[j] * m2);
                }
            }
            dx
        }
        NormCache::BatchLoo {
            raw,
            means,
            inv_stds,
            xhat,
        } => {
            // Sample a is normalized by statistics of the others, so the
            // gradient of sample b collects terms from every a != b:
            //   db̃_a/dx_b = -(1/(B-1)) [ r_a + x̂_a r_a² (x_b - μ̃_a) ].
            let b = raw.nrows();
            let m = (b - 1) as f64;
            let mut dx = Array2::zeros(raw.raw_dim());
            for j in 0..raw.ncols() {
                let mut s1 = 0.0; // Σ_a g_a r_a
                let mut s2 = 0.0; // Σ_a t_a,  t_a = g_a x̂_a r_a²
                let mut s3 = 0.0; // Σ_a t_a μ̃_a
                for a in 0..b {
                    let g = d_xhat[[a, j]];
                    let r = inv_stds[[a, j]];
                    let t = g * xhat[[a, j]] * r * r;
                    s1 += g * r;
                    s2 += t;
                    s3 += t * means[[a, j]];
                }
                for row in 0..b {
                    let g = d_xhat[[row, j]];
                    let r = inv_stds[[row, j]];
                    let t = g * xhat[[row, j]] * r * r;
                    let own = g * r;
                    let cross =
                        (s1 - own) + raw[[row, j]] * (s2 - t) - (s3 - t * means[[row, j]]);
                    dx[[row, j]] = own - cross / m;
                }
            }
            dx
        }
    }
}

/// Exact analytic gradients of the mean cross-entropy for a train-mode
/// trace, including paths through batch/layer statistics.
pub fn backward(net: &Network, trace: &ForwardTrace, labels: &[usize]) -> Result<(f64, Gradients)> {
    let cfg = &net.config;
    let depth = cfg.depth();
    if trace.layers.len() != depth {
        return Err(IgbError::Shape(format!(
            "trace has {} layers, network has {depth}",
            trace.layers.len()
        )));
    }
    let (loss, delta) = softmax_cross_entropy(&trace.outputs, labels)?;

    let mut g_weights: Vec<Array2<f64>> = Vec::with_capacity(depth + 1);
    let mut g_biases: Vec<Array1<f64>> = Vec::with_capacity(depth + 1);
    let mut g_scale: Vec<Array1<f64>> = Vec::new();
    let mut g_shift: Vec<Array1<f64>> = Vec::new();
    if cfg.has_norm() {
        for &n in &cfg.hidden_widths {
            g_scale.push(Array1::zeros(n));
            g_shift.push(Array1::zeros(n));
        }
    }

    let block_input = |l: usize| -> &Array2<f64> {
        if l == 0 {
            &trace.inputs
        } else {
            trace.layers[l - 1].block_output(cfg.placement)
        }
    };

    // Output layer.
    let last_out = block_input(depth);
    g_weights.push(delta.t().dot(last_out));
    g_biases.push(delta.sum_axis(Axis(0)));
    let mut d_block = delta.dot(&net.weights[depth]);

    for l in (0..depth).rev() {
        let layer = &trace.layers[l];
        let d_pre = match cfg.placement {
            NormPlacement::Absent => relu_mask_backward(&d_block, &layer.pre_act),
            NormPlacement::PreActivation => {
                // pre -> norm -> relu
                let normed = layer.normed.as_ref().unwrap();
                let cache = layer.norm_cache.as_ref().unwrap();
                let d_normed = relu_mask_backward(&d_block, normed);
                let xhat = cache_xhat(cache);
                g_scale[l] += &(&d_normed * xhat).sum_axis(Axis(0));
                g_shift[l] += &d_normed.sum_axis(Axis(0));
                let d_xhat = &d_normed * &net.norm_scale[l];
                norm_backward(cache, &d_xhat)
            }
            NormPlacement::PostActivation => {
                // pre -> relu -> norm
                let cache = layer.norm_cache.as_ref().unwrap();
                let xhat = cache_xhat(cache);
                g_scale[l] += &(&d_block * xhat).sum_axis(Axis(0));
                g_shift[l] += &d_block.sum_axis(Axis(0));
                let d_xhat = &d_block * &net.norm_scale[l];
                let d_act = norm_backward(cache, &d_xhat);
                relu_mask_backward(&d_act, &layer.pre_act)
            }
        };
        g_weights.push(d_pre.t().dot(block_input(l)));
        g_biases.push(d_pre.sum_axis(Axis(0)));
        if l > 0 {
            d_block = d_pre.dot(&net.weights[l]);
        }
    }
    g_weights.reverse();
    g_biases.reverse();
    Ok((
        loss,
        Gradients {
            weights: g_weights,
            biases: g_biases,
            norm_scale: g_scale,
            norm_shift: g_shift,
        },
    ))
}

fn cache_xhat(cache: &NormCache) -> &Array2<f64> {
    match cache {
        NormCache::BatchStd { xhat, .. }
        | NormCache::BatchLoo { xhat, .. }
        | NormCache::BatchRunning { xhat, .. }
        | NormCache::Layer { xhat, .. }
        | NormCache::Rms { xhat, .. } => xhat,
    }
}

/// Metrics recorded at one evaluation step.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TrajectoryPoint {
    pub step: usize,
    /// Mean cross-entropy over the full training set.
    pub loss: f64,
    pub train_acc: f64,
    pub train_class_acc: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub test_acc: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub test_class_acc: Option<Vec<f64>>,
    /// Largest per-class guess fraction on the training set.
    pub max_guess_fraction: f64,
}

/// Class-resolved record of one training run.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TrainTrajectory {
    pub points: Vec<TrajectoryPoint>,
    /// Guess statistics at step 0 under eval-mode normalization, before
    /// any relabeling.
    pub initial_guess: GuessStats,
    pub num_classes: usize,
    /// new_class_index[old_class_index], when dominant-class relabeling
    /// was applied.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub relabel_permutation: Option<Vec<usize>>,
}

impl TrainTrajectory {
    /// Series of the largest per-class guess fraction over eval steps.
    pub fn bias_trajectory(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.max_guess_fraction).collect()
    }

    /// First recorded step at which global train accuracy reaches `a`.
    pub fn time_to_accuracy(&self, a: f64) -> Option<usize> {
        self.points.iter().find(|p| p.train_acc >= a).map(|p| p.step)
    }

    /// Write the per-step CSV:
    /// step, loss, acc_global_train, acc_class_{c}_train…, acc_global_test,
    /// acc_class_{c}_test…, max_guess_fraction. Test columns appear only
    /// when a test set was evaluated.
    pub fn to_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let has_test = self.points.first().is_some_and(|p| p.test_acc.is_some());
        let mut header = vec!["step".to_string(), "loss".into(), "acc_global_train".into()];
        for c in 0..self.num_classes {
            header.push(format!("acc_class_{c}_train"));
        }
        if has_test {
            header.push("acc_global_test".into());
            for c in 0..self.num_classes {
                header.push(format!("acc_class_{c}_test"));
            }
        }
        header.push("max_guess_fraction".into());
        w.write_record(&header).map_err(|e| IgbError::Parse(e.to_string()))?;
        for p in &self.points {
            let mut rec = vec![p.step.to_string(), format!("{}", p.loss), format!("{}", p.train_acc)];
            for v in &p.train_class_acc {
                rec.push(format!("{v}"));
            }
            if has_test {
                rec.push(format!("{}", p.test_acc.unwrap()));
                for v in p.test_class_acc.as_ref().unwrap() {
                    rec.push(format!("{v}"));
                }
            }
            rec.push(format!("{}", p.max_guess_fraction));
            w.write_record(&rec).map_err(|e| IgbError::Parse(e.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Relabeled view: class indices permuted so class 0 is the step-0
/// dominant class; every per-class series is permuted consistently and
/// global series are untouched.
pub fn relabel_dominant(traj: &TrainTrajectory) -> TrainTrajectory {
    let c = traj.num_classes;
    let dominant = traj.initial_guess.dominant_class;
    // new index of old class: dominant -> 0, others keep relative order.
    let mut new_of_old = vec![0usize; c];
    let mut next = 1;
    for old in 0..c {
        if old == dominant {
            new_of_old[old] = 0;
        } else {
            new_of_old[old] = next;
            next += 1;
        }
    }
    let permute = |xs: &[f64]| -> Vec<f64> {
        let mut out = vec![0.0; c];
        for (old, &v) in xs.iter().enumerate() {
            out[new_of_old[old]] = v;
        }
        out
    };
    let points = traj
        .points
        .iter()
        .map(|p| TrajectoryPoint {
            step: p.step,
            loss: p.loss,
            train_acc: p.train_acc,
            train_class_acc: permute(&p.train_class_acc),
            test_acc: p.test_acc,
            test_class_acc: p.test_class_acc.as_ref().map(|v| permute(v)),
            max_guess_fraction: p.max_guess_fraction,
        })
        .collect();
    let counts = {
        let mut out = vec![0u64; c];
        for (old, &v) in traj.initial_guess.counts.iter().enumerate() {
            out[new_of_old[old]] = v;
        }
        out
    };
    let fractions = permute(&traj.initial_guess.fractions);
    TrainTrajectory {
        points,
        initial_guess: GuessStats {
            counts,
            fractions,
            ranked: traj.initial_guess.ranked.clone(),
            dominant_class: 0,
        },
        num_classes: c,
        relabel_permutation: Some(new_of_old),
    }
}

/// Accuracy bookkeeping from integer counts, so the global accuracy is
/// exactly the class-prior-weighted mean of per-class accuracies.
fn accuracies(preds: &[usize], labels: &[usize], num_classes: usize) -> (f64, Vec<f64>) {
    let mut correct = vec![0u64; num_classes];
    let mut total = vec![0u64; num_classes];
    for (&p, &y) in preds.iter().zip(labels) {
        total[y] += 1;
        if p == y {
            correct[y] += 1;
        }
    }
    let global = correct.iter().sum::<u64>() as f64 / labels.len() as f64;
    let per_class = correct
        .iter()
        .zip(&total)
        .map(|(&c, &t)| if t == 0 { 0.0 } else { c as f64 / t as f64 })
        .collect();
    (global, per_class)
}

struct EvalOutcome {
    point: TrajectoryPoint,
    guess: GuessStats,
}

fn evaluate(
    net: &Network,
    running: &BnRunningStats,
    train: &Dataset,
    test: Option<&Dataset>,
    step: usize,
) -> Result<EvalOutcome> {
    let outputs = forward_outputs(net, train.inputs.view(), ForwardMode::EvalRunning(running))?;
    let (loss, _) = softmax_cross_entropy(&outputs, &train.labels)?;
    let preds = predict(&outputs)?;
    let (train_acc, train_class_acc) = accuracies(&preds, &train.labels, net.config.num_classes);
    let guess = GuessStats::from_predictions(&preds, net.config.num_classes)?;
    let (test_acc, test_class_acc) = match test {
        None => (None, None),
        Some(ts) => {
            let outputs = forward_outputs(net, ts.inputs.view(), ForwardMode::EvalRunning(running))?;
            let preds = predict(&outputs)?;
            let (acc, class_acc) = accuracies(&preds, &ts.labels, net.config.num_classes);
            (Some(acc), Some(class_acc))
        }
    };
    Ok(EvalOutcome {
        point: TrajectoryPoint {
            step,
            loss,
            train_acc,
            train_class_acc,
            test_acc,
            test_class_acc,
            max_guess_fraction: guess.max_fraction(),
        },
        guess,
    })
}

fn update_running_stats(running: &mut BnRunningStats, net: &Network, trace: &ForwardTrace) {
    for (l, layer) in trace.layers.iter().enumerate() {
        let (mean, var) = match layer.norm_cache.as_ref() {
            Some(NormCache::BatchStd { mean, inv_std, .. }) => {
                let eps = net.config.epsilon;
                (mean.clone(), inv_std.mapv(|r| 1.0 / (r * r) - eps))
            }
            Some(NormCache::BatchLoo { raw, .. }) => {
                let rows = raw.nrows() as f64;
                let mean = raw.sum_axis(Axis(0)) / rows;
                let var = (raw - &mean).mapv(|v| v * v).sum_axis(Axis(0)) / rows;
                (mean, var)
            }
            _ => continue,
        };
        running.mean[l].zip_mut_with(&mean, |r, &b| {
            *r = BN_RUNNING_MOMENTUM * *r + (1.0 - BN_RUNNING_MOMENTUM) * b;
        });
        running.var[l].zip_mut_with(&var, |r, &b| {
            *r = BN_RUNNING_MOMENTUM * *r + (1.0 - BN_RUNNING_MOMENTUM) * b;
        });
    }
}

fn sgd_step(net: &mut Network, grads: &Gradients, lr: f64) {
    for (w, g) in net.weights.iter_mut().zip(&grads.weights) {
        w.zip_mut_with(g, |w, &g| *w -= lr * g);
    }
    for (b, g) in net.biases.iter_mut().zip(&grads.biases) {
        b.zip_mut_with(g, |b, &g| *b -= lr * g);
    }
    for (a, g) in net.norm_scale.iter_mut().zip(&grads.norm_scale) {
        a.zip_mut_with(g, |a, &g| *a -= lr * g);
    }
    for (s, g) in net.norm_shift.iter_mut().zip(&grads.norm_shift) {
        s.zip_mut_with(g, |s, &g| *s -= lr * g);
    }
}

/// Train a copy of `net` on `data`, recording class-resolved dynamics.
///
/// Batches are contiguous blocks of a seeded shuffle, re-drawn each
/// epoch; a trailing partial block is dropped. Evaluation (and the guess
/// statistics) always run over the full datasets with eval-mode
/// normalization. Returns the trajectory and the trained network.
pub fn train(
    net: &Network,
    data: &Dataset,
    test: Option<&Dataset>,
    cfg: &TrainConfig,
) -> Result<(TrainTrajectory, Network)> {
    cfg.validate(net)?;
    if data.dim() != net.config.input_dim {
        return Err(IgbError::Shape(format!(
            "dataset dim {} vs network input {}",
            data.dim(),
            net.config.input_dim
        )));
    }
    if data.num_classes > net.config.num_classes
        || data.labels.iter().any(|&l| l >= net.config.num_classes)
    {
        return Err(IgbError::Config(
            "dataset labels exceed network classes".into(),
        ));
    }
    if data.len() < cfg.batch_size {
        return Err(IgbError::Config(format!(
            "dataset of {} rows cannot fill a batch of {}",
            data.len(),
            cfg.batch_size
        )));
    }
    let mut model = net.clone();
    let mut running = BnRunningStats::init(&model.config);
    // Prime eval statistics so step-0 metrics match the static setting.
    if model.config.norm_kind == NormKind::BatchNorm {
        for (l, (mean, var)) in bn_input_stats(&model, data.inputs.view())?.into_iter().enumerate()
        {
            running.mean[l] = mean;
            running.var[l] = var;
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let batches_per_epoch = data.len() / cfg.batch_size;

    let mut points = Vec::new();
    let first = evaluate(&model, &running, data, test, 0)?;
    let initial_guess = first.guess.clone();
    let mut reached_stop = cfg
        .stop_at_train_accuracy
        .is_some_and(|a| first.point.train_acc >= a);
    points.push(first.point);

    let mut step = 0usize;
    let mut batch_x = Array2::zeros((cfg.batch_size, data.dim()));
    let mut batch_y = vec![0usize; cfg.batch_size];
    'outer: while step < cfg.steps && !reached_stop {
        order.shuffle(&mut rng);
        for block in 0..batches_per_epoch {
            if step >= cfg.steps || reached_stop {
                break 'outer;
            }
            for (i, &idx) in order[block * cfg.batch_size..(block + 1) * cfg.batch_size]
                .iter()
                .enumerate()
            {
                batch_x.row_mut(i).assign(&data.inputs.row(idx));
                batch_y[i] = data.labels[idx];
            }
            let trace = forward(&model, batch_x.view(), ForwardMode::Train)?;
            let (loss, grads) = backward(&model, &trace, &batch_y)?;
            if !loss.is_finite() {
                return Err(IgbError::Diverged {
                    step,
                    detail: format!("loss = {loss}"),
                });
            }
            update_running_stats(&mut running, &model, &trace);
            sgd_step(&mut model, &grads, cfg.learning_rate);
            step += 1;
            if step % cfg.eval_cadence == 0 || step == cfg.steps {
                let eval = evaluate(&model, &running, data, test, step)?;
                if let Some(target) = cfg.stop_at_train_accuracy {
                    if eval.point.train_acc >= target {
                        reached_stop = true;
                    }
                }
                points.push(eval.point);
            }
        }
    }

    let mut trajectory = TrainTrajectory {
        points,
        initial_guess,
        num_classes: model.config.num_classes,
        relabel_permutation: None,
    };
    if cfg.relabel_dominant {
        trajectory = relabel_dominant(&trajectory);
    }
    Ok((trajectory, model))
}
