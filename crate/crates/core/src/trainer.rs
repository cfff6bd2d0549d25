//! Minibatch training with a validation holdout and best-epoch restore.
//!
//! Each epoch shuffles the training split (stream `Shuffle { epoch }`), runs
//! one Nesterov update per minibatch with gradients averaged over the batch
//! and evaluated at the lookahead point, and then scores the validation split
//! in evaluation mode. The parameters from the epoch with the lowest
//! validation loss are restored at the end.
//!
//! Noise masks for the `j`-th example of epoch `e` come from streams
//! `Mask { layer, branch, example: e * n_train + j }`, so a run is a pure
//! function of `(spec, config, data)` and can be resumed from a checkpoint.

use std::time::Instant;

use rand::seq::SliceRandom;

use crate::checkpoint::Checkpoint;
use crate::data::{normalize, split, Dataset, FeatureStats};
use crate::error::{Error, Result};
use crate::model::{grad_slices, Model, ModelSpec};
use crate::objective::{softmax_xent, top1_accuracy, Prediction};
use crate::optimizer::{lookahead, lr_at, nesterov_update, OptState, TrainConfig};
use crate::random::{Rng, Stream};

/// Train, validation and test splits, normalized with training statistics.
#[derive(Debug, Clone)]
pub struct Splits {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
    pub stats: FeatureStats,
}

impl Splits {
    /// Holds back `val_fraction` of `train` for validation, then normalizes
    /// all three splits with statistics of the remaining training examples.
    pub fn prepare(train: &Dataset, test: &Dataset, val_fraction: f64, seed: u64) -> Result<Self> {
        if train.num_features() != test.num_features() {
            return Err(Error::shape(
                "Splits::prepare",
                format!("train {} features", train.num_features()),
                format!("test {} features", test.num_features()),
            ));
        }
        let (mut tr, mut val) = split(train, val_fraction, seed)?;
        let mut test = test.clone();
        let stats = normalize(&mut tr, &mut [&mut val, &mut test])?;
        Ok(Self {
            train: tr,
            val,
            test,
            stats,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub loss: f64,
    /// Top-1 accuracy in percent.
    pub accuracy: f64,
}

/// Mean cross-entropy and top-1 accuracy of the evaluation-mode network.
pub fn evaluate(model: &Model, data: &Dataset) -> Result<Evaluation> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if data.num_features() != model.inputs() {
        return Err(Error::shape(
            "evaluate",
            format!("model input [{}]", model.inputs()),
            format!("{} features", data.num_features()),
        ));
    }
    let mut loss = 0.0;
    let mut preds = Vec::with_capacity(data.len());
    for i in 0..data.len() {
        let (x, label) = data.example(i);
        let logits = model.logits_eval(x)?;
        loss += softmax_xent(&logits, label)?.0;
        preds.push(Prediction { logits, label });
    }
    Ok(Evaluation {
        loss: loss / data.len() as f64,
        accuracy: top1_accuracy(&preds)?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    /// 1-based epoch number.
    pub epoch: u64,
    /// Mean training-mode loss over the epoch.
    pub train_loss: f64,
    /// Evaluation-mode validation loss after the epoch.
    pub val_loss: f64,
    /// Learning rate of the epoch's last update.
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub history: Vec<EpochRecord>,
    pub test: Evaluation,
    /// Epoch whose parameters were restored; `None` if no epoch ran.
    pub best_epoch: Option<u64>,
    pub wall_time_secs: f64,
}

impl RunResult {
    /// Equality of everything except wall time, bit for bit.
    pub fn same_outcome(&self, other: &RunResult) -> bool {
        let bits = |r: &RunResult| {
            let mut v: Vec<u64> = r
                .history
                .iter()
                .flat_map(|e| [e.epoch, e.train_loss.to_bits(), e.val_loss.to_bits(), e.lr.to_bits()])
                .collect();
            v.extend([r.test.loss.to_bits(), r.test.accuracy.to_bits()]);
            v.push(r.best_epoch.map_or(u64::MAX, |e| e));
            v
        };
        bits(self) == bits(other)
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// The model restored to the best epoch.
    pub model: Model,
    pub result: RunResult,
    pub best: Option<Checkpoint>,
}

/// Stateful training loop; one call to [`Trainer::run_epoch`] per epoch.
pub struct Trainer<'a> {
    cfg: TrainConfig,
    splits: &'a Splits,
    model: Model,
    opt: OptState,
    /// Completed epochs.
    epoch: u64,
    last_val_loss: f64,
    best: Option<Checkpoint>,
    history: Vec<EpochRecord>,
    lookahead_model: Model,
    started: Instant,
}

impl<'a> Trainer<'a> {
    pub fn new(spec: &ModelSpec, cfg: &TrainConfig, splits: &'a Splits) -> Result<Self> {
        let model = Model::init(spec, cfg.seed)?;
        let opt = OptState::new(model.param_lens());
        Self::with_state(model, opt, 0, f64::NAN, None, cfg, splits)
    }

    /// Continues from a checkpoint. The checkpoint is treated as the best
    /// epoch so far.
    pub fn resume(ckpt: Checkpoint, cfg: &TrainConfig, splits: &'a Splits) -> Result<Self> {
        if ckpt.seed != cfg.seed {
            return Err(Error::InvalidArgument(format!(
                "checkpoint seed {} does not match configured seed {}",
                ckpt.seed, cfg.seed
            )));
        }
        let opt = ckpt
            .opt
            .clone()
            .ok_or_else(|| Error::InvalidArgument("checkpoint has no optimizer state".into()))?;
        let best = ckpt.val_loss.is_finite().then(|| ckpt.clone());
        Self::with_state(ckpt.model, opt, ckpt.epoch, ckpt.val_loss, best, cfg, splits)
    }

    fn with_state(
        model: Model,
        opt: OptState,
        epoch: u64,
        last_val_loss: f64,
        best: Option<Checkpoint>,
        cfg: &TrainConfig,
        splits: &'a Splits,
    ) -> Result<Self> {
        cfg.validate()?;
        for (name, ds) in [("train", &splits.train), ("validation", &splits.val), ("test", &splits.test)] {
            if ds.num_features() != model.inputs() {
                return Err(Error::shape(
                    "train",
                    format!("model input [{}]", model.inputs()),
                    format!("{name} split has {} features", ds.num_features()),
                ));
            }
            ds.check_labels(model.outputs())?;
        }
        if splits.train.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if opt.velocity.len() != model.param_lens().len()
            || opt.velocity.iter().zip(model.param_lens()).any(|(v, n)| v.len() != n)
        {
            return Err(Error::InvalidArgument("optimizer state does not match the model".into()));
        }
        Ok(Self {
            cfg: cfg.clone(),
            splits,
            lookahead_model: model.clone(),
            model,
            opt,
            epoch,
            last_val_loss,
            best,
            history: Vec::new(),
            started: Instant::now(),
        })
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn opt_state(&self) -> &OptState {
        &self.opt
    }

    pub fn epochs_done(&self) -> u64 {
        self.epoch
    }

    pub fn history(&self) -> &[EpochRecord] {
        &self.history
    }

    /// Snapshot of the current (not best) state.
    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            model: self.model.clone(),
            opt: Some(self.opt.clone()),
            epoch: self.epoch,
            val_loss: self.last_val_loss,
            seed: self.cfg.seed,
        }
    }

    pub fn best(&self) -> Option<&Checkpoint> {
        self.best.as_ref()
    }

    pub fn run_epoch(&mut self) -> Result<EpochRecord> {
        let train = &self.splits.train;
        let n = train.len();
        let seed = self.cfg.seed;
        let mu = self.cfg.momentum;
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut Rng::for_stream(seed, Stream::Shuffle { epoch: self.epoch }));

        let mut grads = self.model.zero_grads();
        let mut loss_sum = 0.0;
        let mut lr = lr_at(&self.cfg, self.opt.iteration);
        for (batch, chunk) in order.chunks(self.cfg.batch_size).enumerate() {
            lr = lr_at(&self.cfg, self.opt.iteration);
            for ((look, theta), v) in self
                .lookahead_model
                .params_mut()
                .into_iter()
                .zip(self.model.params())
                .zip(&self.opt.velocity)
            {
                lookahead(theta, v, mu, look);
            }
            for g in &mut grads {
                g.scale(0.0);
            }
            for (j, &idx) in chunk.iter().enumerate() {
                let example = self.epoch * n as u64 + (batch * self.cfg.batch_size + j) as u64;
                let (x, label) = train.example(idx);
                let (logits, caches) = self.lookahead_model.forward_train(x, example, seed)?;
                let (loss, dlogits) = softmax_xent(&logits, label)?;
                if !loss.is_finite() || !logits.is_finite() {
                    return Err(Error::NonFinite {
                        epoch: self.epoch + 1,
                        batch,
                    });
                }
                loss_sum += loss;
                self.lookahead_model.backward_logits(&caches, &dlogits, &mut grads)?;
            }
            let inv = 1.0 / chunk.len() as f64;
            for g in &mut grads {
                g.scale(inv);
            }
            nesterov_update(self.model.params_mut(), grad_slices(&grads), &mut self.opt, lr, mu)?;
        }
        self.epoch += 1;

        let val_loss = evaluate(&self.model, &self.splits.val)?.loss;
        if !val_loss.is_finite() {
            return Err(Error::NonFinite {
                epoch: self.epoch,
                batch: order.len().div_ceil(self.cfg.batch_size),
            });
        }
        self.last_val_loss = val_loss;
        if self.best.as_ref().is_none_or(|b| val_loss < b.val_loss) {
            self.best = Some(self.checkpoint());
        }
        let record = EpochRecord {
            epoch: self.epoch,
            train_loss: loss_sum / n as f64,
            val_loss,
            lr,
        };
        self.history.push(record);
        Ok(record)
    }

    /// Restores the best epoch and scores the test split.
    pub fn finish(self) -> Result<TrainOutcome> {
        let model = match &self.best {
            Some(b) => b.model.clone(),
            None => self.model.clone(),
        };
        let test = evaluate(&model, &self.splits.test)?;
        Ok(TrainOutcome {
            model,
            result: RunResult {
                history: self.history,
                test,
                best_epoch: self.best.as_ref().map(|b| b.epoch),
                wall_time_secs: self.started.elapsed().as_secs_f64(),
            },
            best: self.best,
        })
    }
}

/// Runs `cfg.epochs` epochs from a fresh initialization.
pub fn train(spec: &ModelSpec, cfg: &TrainConfig, splits: &Splits) -> Result<TrainOutcome> {
    let mut trainer = Trainer::new(spec, cfg, splits)?;
    for _ in 0..cfg.epochs {
        trainer.run_epoch()?;
    }
    trainer.finish()
}

/// Mean and sample standard deviation of repeated measurements.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub n: usize,
    pub mean: f64,
    /// Sample standard deviation (`n - 1` denominator); 0 when `n == 1`.
    pub std: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Self { n, mean, std }
    }
}

/// Pooled standard deviation of two samples.
pub fn pooled_std(a: &Summary, b: &Summary) -> f64 {
    let dof = (a.n + b.n).saturating_sub(2);
    if dof == 0 {
        return 0.0;
    }
    (((a.n.saturating_sub(1)) as f64 * a.std.powi(2) + (b.n.saturating_sub(1)) as f64 * b.std.powi(2)) / dof as f64)
        .sqrt()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentRow {
    pub name: String,
    pub loss: Summary,
    pub accuracy: Summary,
    /// Per-seed results in seed order (empty for tables built from summaries).
    pub runs: Vec<Evaluation>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentTable {
    pub rows: Vec<ExperimentRow>,
}

impl ExperimentTable {
    pub fn row(&self, name: &str) -> Option<&ExperimentRow> {
        self.rows.iter().find(|r| r.name == name)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("config,n,loss_mean,loss_std,accuracy_mean,accuracy_std\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{:.6},{:.6},{:.4},{:.4}\n",
                r.name, r.loss.n, r.loss.mean, r.loss.std, r.accuracy.mean, r.accuracy.std
            ));
        }
        out
    }

    /// Aligned text table with `mean ± std` cells; rows with a single
    /// measurement are flagged `(n=1)`.
    pub fn to_text(&self) -> String {
        let cells: Vec<[String; 3]> = self
            .rows
            .iter()
            .map(|r| {
                let flag = if r.loss.n == 1 { " (n=1)" } else { "" };
                [
                    format!("{}{flag}", r.name),
                    format!("{:.3} ± {:.3}", r.loss.mean, r.loss.std),
                    format!("{:.1} ± {:.1}", r.accuracy.mean, r.accuracy.std),
                ]
            })
            .collect();
        let header = ["Config".to_string(), "Loss".to_string(), "Accuracy".to_string()];
        let widths: Vec<usize> = (0..3)
            .map(|c| {
                cells
                    .iter()
                    .chain(std::iter::once(&header))
                    .map(|row| row[c].chars().count())
                    .max()
                    .unwrap_or(0)
            })
            .collect();
        let line = |row: &[String; 3]| {
            let padded: Vec<String> = row
                .iter()
                .zip(&widths)
                .map(|(s, &w)| format!("{s}{}", " ".repeat(w - s.chars().count())))
                .collect();
            format!("{}\n", padded.join(" | ").trim_end())
        };
        let mut out = line(&header);
        out.push_str(&format!(
            "{}\n",
            widths.iter().map(|&w| "-".repeat(w)).collect::<Vec<_>>().join("-|-")
        ));
        for row in &cells {
            out.push_str(&line(row));
        }
        out
    }
}

/// One named configuration of an experiment. `train.seed` is replaced by
/// each experiment seed.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub name: String,
    pub spec: ModelSpec,
    pub train: TrainConfig,
}

/// Trains every named configuration once per seed and summarizes the test
/// metrics. Each seed selects the validation holdout, the initialization and
/// the noise; all configurations share the holdout for a given seed.
pub fn run_experiment(
    configs: &[ExperimentConfig],
    train_data: &Dataset,
    test_data: &Dataset,
    seeds: &[u64],
    mut progress: impl FnMut(&ExperimentConfig, u64, &TrainOutcome),
) -> Result<ExperimentTable> {
    if seeds.is_empty() {
        return Err(Error::InvalidArgument("at least one seed is required".into()));
    }
    let Some(first) = configs.first() else {
        return Err(Error::InvalidArgument("at least one configuration is required".into()));
    };
    let val_fraction = first.train.val_fraction;
    if configs.iter().any(|c| c.train.val_fraction != val_fraction) {
        return Err(Error::InvalidArgument("all configurations must share val_fraction".into()));
    }
    let mut runs: Vec<Vec<Evaluation>> = vec![Vec::new(); configs.len()];
    for &seed in seeds {
        let splits = Splits::prepare(train_data, test_data, val_fraction, seed)?;
        for (config, acc) in configs.iter().zip(&mut runs) {
            let cfg = TrainConfig { seed, ..config.train.clone() };
            let outcome = train(&config.spec, &cfg, &splits)?;
            acc.push(outcome.result.test);
            progress(config, seed, &outcome);
        }
    }
    Ok(ExperimentTable {
        rows: configs
            .iter()
            .zip(runs)
            .map(|(config, runs)| ExperimentRow {
                name: config.name.clone(),
                loss: Summary::of(&runs.iter().map(|e| e.loss).collect::<Vec<_>>()),
                accuracy: Summary::of(&runs.iter().map(|e| e.accuracy).collect::<Vec<_>>()),
                runs,
            })
            .collect(),
    })
}

/// Branch outputs of one STE layer, before noise and averaging.
#[derive(Debug, Clone)]
pub struct ActivationAnalysis {
    pub layer: usize,
    /// `branches[input][i]` is `W_i h + b_i` for the layer input `h`.
    pub branches: Vec<Vec<crate::tensor::Vector>>,
    /// `A x A` Pearson correlations across the `N` output coordinates,
    /// averaged over inputs.
    pub correlation: crate::tensor::Matrix,
}

impl ActivationAnalysis {
    /// Mean of the off-diagonal correlations (1.0 when `A == 1`).
    pub fn mean_off_diagonal(&self) -> f64 {
        let a = self.correlation.rows();
        if a < 2 {
            return 1.0;
        }
        let mut sum = 0.0;
        for i in 0..a {
            for j in 0..a {
                if i != j {
                    sum += self.correlation[(i, j)];
                }
            }
        }
        sum / (a * (a - 1)) as f64
    }

    /// Largest off-diagonal correlation.
    pub fn max_off_diagonal(&self) -> f64 {
        let a = self.correlation.rows();
        let mut best = f64::NEG_INFINITY;
        for i in 0..a {
            for j in 0..a {
                if i != j {
                    best = best.max(self.correlation[(i, j)]);
                }
            }
        }
        best
    }
}

/// Pearson correlation; a constant vector is treated as uncorrelated.
pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut cov, mut va, mut vb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    if va == 0.0 || vb == 0.0 {
        return 0.0;
    }
    (cov / (va.sqrt() * vb.sqrt())).clamp(-1.0, 1.0)
}

/// Feeds each input row through the preceding layers in evaluation mode
/// and records the noise-free, un-averaged branch outputs of STE layer
/// `layer_index`.
pub fn analyze_activations(model: &Model, inputs: &crate::tensor::Matrix, layer_index: usize) -> Result<ActivationAnalysis> {
    let ste = match model.layers.get(layer_index) {
        Some(crate::model::Layer::Ste(s)) => s,
        Some(_) => {
            return Err(Error::InvalidArgument(format!("layer {layer_index} is not an STE layer")));
        }
        None => {
            return Err(Error::InvalidArgument(format!(
                "layer {layer_index} does not exist (model has {} layers)",
                model.layers.len()
            )));
        }
    };
    if inputs.cols() != model.inputs() {
        return Err(Error::shape("analyze_activations", format!("[{}]", model.inputs()), inputs.shape()));
    }
    if inputs.rows() == 0 {
        return Err(Error::EmptyDataset);
    }
    let a = ste.averaging();
    let mut correlation = crate::tensor::Matrix::zeros(a, a);
    let mut branches = Vec::with_capacity(inputs.rows());
    for r in 0..inputs.rows() {
        let mut h = crate::tensor::Vector::from_vec(inputs.row(r).to_vec());
        for l in &model.layers[..layer_index] {
            h = l.forward_eval(&h)?;
        }
        let outs = ste.branch_outputs(&h)?;
        for i in 0..a {
            correlation[(i, i)] += 1.0;
            for j in i + 1..a {
                let c = pearson(&outs[i], &outs[j]);
                correlation[(i, j)] += c;
                correlation[(j, i)] += c;
            }
        }
        branches.push(outs);
    }
    correlation.scale(1.0 / inputs.rows() as f64);
    Ok(ActivationAnalysis {
        layer: layer_index,
        branches,
        correlation,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Regularization;
    use crate::tensor::Matrix;

    fn tiny_splits() -> Splits {
        let mut rng = Rng::new(5);
        let make = |n: usize, rng: &mut Rng| {
            let mut data = Vec::new();
            let mut labels = Vec::new();
            for _ in 0..n {
                let label = rng.below(2);
                let c = if label == 0 { -1.0 } else { 1.0 };
                data.push(c + rng.uniform(-0.5, 0.5));
                data.push(-c + rng.uniform(-0.5, 0.5));
                labels.push(label);
            }
            Dataset::new(Matrix::from_vec(n, 2, data).unwrap(), labels).unwrap()
        };
        let train = make(60, &mut rng);
        let test = make(20, &mut rng);
        Splits::prepare(&train, &test, 0.1, 1).unwrap()
    }

    #[test]
    fn zero_epochs_returns_initial_model() {
        let splits = tiny_splits();
        let spec = ModelSpec::mlp(2, &[4], 2, Regularization::SteDropout, 2, 0.5);
        let cfg = TrainConfig { epochs: 0, seed: 3, ..Default::default() };
        let out = train(&spec, &cfg, &splits).unwrap();
        assert_eq!(out.model, Model::init(&spec, 3).unwrap());
        assert!(out.result.history.is_empty());
        assert_eq!(out.result.best_epoch, None);
    }

    #[test]
    fn summary_statistics() {
        let s = Summary::of(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(s.mean, 2.5);
        assert!((s.std - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
        let one = Summary::of(&[0.7]);
        assert_eq!((one.n, one.std), (1, 0.0));
        let p = pooled_std(&Summary { n: 5, mean: 0.0, std: 3.0 }, &Summary { n: 5, mean: 0.0, std: 4.0 });
        assert!((p - 12.5f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn evaluate_rejects_empty_and_mismatched() {
        let splits = tiny_splits();
        let model = Model::init(&ModelSpec::mlp(2, &[3], 2, Regularization::None, 1, 0.5), 0).unwrap();
        let empty = splits.test.select(&[]);
        assert!(matches!(evaluate(&model, &empty), Err(Error::EmptyDataset)));
        let wide = Model::init(&ModelSpec::mlp(3, &[3], 2, Regularization::None, 1, 0.5), 0).unwrap();
        assert!(evaluate(&wide, &splits.test).is_err());
    }

    #[test]
    fn uniform_logits_model_scores_ln_k() {
        let spec = ModelSpec::mlp(4, &[3], 10, Regularization::None, 1, 0.5);
        let mut model = Model::init(&spec, 0).unwrap();
        for p in model.layers[1].params_mut() {
            p.fill(0.0);
        }
        let labels: Vec<usize> = (0..50).map(|i| i % 10).collect();
        let mut rng = Rng::new(2);
        let ds = Dataset::new(
            Matrix::from_vec(50, 4, (0..200).map(|_| rng.uniform(-1.0, 1.0)).collect()).unwrap(),
            labels,
        )
        .unwrap();
        let e = evaluate(&model, &ds).unwrap();
        assert!((e.loss - 10f64.ln()).abs() < 1e-12);
        // every logit ties, so class 0 is always predicted: 5 of 50 correct
        assert_eq!(e.accuracy, 10.0);
    }

    #[test]
    fn pearson_basics() {
        // cov 4.5, variances 2 and 61/6
        assert!((pearson(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.5]) - 4.5 / (2.0f64 * 61.0 / 6.0).sqrt()).abs() < 1e-12);
        assert!((pearson(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]) + 1.0).abs() < 1e-15);
        assert_eq!(pearson(&[1.0, 1.0], &[1.0, 2.0]), 0.0);
    }

    #[test]
    fn identical_branches_correlate_perfectly() {
        let spec = ModelSpec::mlp(5, &[6], 2, Regularization::SteDropout, 3, 0.5);
        let mut model = Model::init(&spec, 0).unwrap();
        if let crate::model::Layer::Ste(s) = &mut model.layers[0] {
            let w = s.weights[0].clone();
            s.weights = vec![w; 3];
        }
        let mut rng = Rng::new(1);
        let inputs = Matrix::from_vec(4, 5, (0..20).map(|_| rng.uniform(-1.0, 1.0)).collect()).unwrap();
        let an = analyze_activations(&model, &inputs, 0).unwrap();
        for v in an.correlation.as_slice() {
            assert!((v - 1.0).abs() < 1e-12);
        }
        assert_eq!(an.branches.len(), 4);
        assert_eq!(an.branches[0].len(), 3);
        assert!(analyze_activations(&model, &inputs, 1).is_err());
        assert!(analyze_activations(&model, &inputs, 7).is_err());
    }

    #[test]
    fn nan_input_aborts_with_location() {
        let mut splits = tiny_splits();
        splits.train.features[(7, 1)] = f64::NAN;
        let spec = ModelSpec::mlp(2, &[4], 2, Regularization::None, 1, 0.5);
        let cfg = TrainConfig { epochs: 2, batch_size: 16, seed: 0, ..Default::default() };
        match train(&spec, &cfg, &splits) {
            Err(Error::NonFinite { epoch: 1, .. }) => {}
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn experiment_table_formats() {
        let table = ExperimentTable {
            rows: vec![ExperimentRow {
                name: "solo".into(),
                loss: Summary::of(&[0.5]),
                accuracy: Summary::of(&[80.0]),
                runs: vec![],
            }],
        };
        assert!(table.to_text().contains("solo (n=1)"));
        assert!(table.to_text().contains("0.500 ± 0.000"));
        assert!(table.to_csv().contains("solo,1,0.500000,0.000000,80.0000,0.0000"));
    }
}
