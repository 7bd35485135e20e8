//! Training, evaluation, and experiment drivers.
//!
//! [`train`] runs the seeded optimization loop for one model and writes a
//! self-contained run directory (config, per-epoch JSON log, best/final
//! checkpoints, summary report). On top of it sit the three experiment
//! drivers: [`run_ablation`] (task arms × architectures), [`run_size_sweep`]
//! (single-task vs. multi-task across training-set sizes), and
//! [`linear_probe`] (closed-form ridge probes on pooled trunk activations).
//!
//! Everything here is deterministic given the config seed: epoch shuffles,
//! augmentation, and dropout all derive their streams from it, so rerunning a
//! config reproduces the logged losses exactly.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use ndarray::{concatenate, Array1, Array2, ArrayView1, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use aqa_nn::Adam;

use crate::backbone::LayerTag;
use crate::data::{CaptionTokens, DiveLabel, VideoSample, Vocabulary};
use crate::datapipe::{batch_targets, mix_seed, preprocess_batch, sample_rng, PreprocessConfig};
use crate::error::AqaError;
use crate::losses::{
    aqa_loss, aqa_loss_grad, captioning_loss, captioning_loss_grad, classification_loss,
    classification_loss_grad, total_loss, CaptionNorm, LossReport, LossWeights,
};
use crate::metrics::{caption_metrics, spearman, subtask_accuracy, EvalReport};
use crate::mtl::{ModelConfig, MtlGrads, MtlModel, MtlOutput, TaskConfig};
use crate::Result;

/// Learning-rate schedule over epochs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrSchedule {
    /// The configured rate for every epoch.
    #[default]
    Constant,
    /// Half-cosine decay from the configured rate toward zero.
    Cosine,
}

/// Everything a training run depends on. Serialized verbatim into the run
/// directory so a run can be reproduced from its artifacts alone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub tasks: TaskConfig,
    pub weights: LossWeights,
    pub caption_norm: CaptionNorm,
    pub lr: f64,
    pub lr_schedule: LrSchedule,
    pub epochs: usize,
    pub batch_size: usize,
    /// Train-mode preprocessing (random flips and temporal jitter). Off, the
    /// loop sees the same deterministic tensors every epoch, which is the
    /// right setting for memorization checks.
    pub augment: bool,
    pub seed: u64,
}

impl TrainConfig {
    /// Paper-protocol defaults around the given model: Adam at 1e-4, 100
    /// epochs, batches of 3, all tasks active.
    pub fn new(model: ModelConfig) -> Self {
        TrainConfig {
            model,
            tasks: TaskConfig::all(),
            weights: LossWeights::default(),
            caption_norm: CaptionNorm::default(),
            lr: 1e-4,
            lr_schedule: LrSchedule::default(),
            epochs: 100,
            batch_size: 3,
            augment: true,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if !self.lr.is_finite() || self.lr <= 0.0 {
            return Err(AqaError::Config(format!(
                "learning rate must be positive and finite, got {}",
                self.lr
            )));
        }
        if self.epochs == 0 {
            return Err(AqaError::Config("epoch count must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(AqaError::Config("batch size must be at least 1".into()));
        }
        for (name, w) in [
            ("aqa", self.weights.aqa),
            ("classification", self.weights.classification),
            ("caption", self.weights.caption),
        ] {
            if !w.is_finite() || w < 0.0 {
                return Err(AqaError::Config(format!(
                    "loss weight `{name}` must be finite and non-negative, got {w}"
                )));
            }
        }
        Ok(())
    }
}

/// The learning rate applied during `epoch` (1-based).
pub fn effective_lr(config: &TrainConfig, epoch: usize) -> f64 {
    match config.lr_schedule {
        LrSchedule::Constant => config.lr,
        LrSchedule::Cosine => {
            let t = (epoch - 1) as f64 / config.epochs as f64;
            config.lr * 0.5 * (1.0 + (std::f64::consts::PI * t).cos())
        }
    }
}

/// Well-known file names inside a run directory.
#[derive(Debug, Clone)]
pub struct RunPaths {
    pub dir: PathBuf,
    pub config: PathBuf,
    pub log: PathBuf,
    pub ckpt_best: PathBuf,
    pub ckpt_final: PathBuf,
    pub report: PathBuf,
}

impl RunPaths {
    pub fn new(dir: &Path) -> Self {
        RunPaths {
            dir: dir.to_path_buf(),
            config: dir.join("config.json"),
            log: dir.join("log.jsonl"),
            ckpt_best: dir.join("ckpt_best"),
            ckpt_final: dir.join("ckpt_final"),
            report: dir.join("report.json"),
        }
    }
}

/// One line of `log.jsonl`. `eval` is absent when the epoch's correlation was
/// undefined (early epochs can emit constant scores).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub loss: LossReport,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eval: Option<EvalReport>,
}

/// Summary of a finished run, also written as `report.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainOutcome {
    pub epochs_run: usize,
    /// Epoch whose evaluation Spearman was highest, if any epoch produced a
    /// defined correlation.
    pub best_epoch: Option<usize>,
    pub best: Option<EvalReport>,
    pub final_eval: EvalReport,
    pub ckpt_best: Option<PathBuf>,
    pub ckpt_final: PathBuf,
    pub history: Vec<EpochRecord>,
}

impl TrainOutcome {
    /// The Spearman figure experiment tables report: best epoch when one was
    /// recorded, otherwise the final evaluation.
    pub fn headline_spearman(&self) -> f64 {
        self.best
            .as_ref()
            .map_or(self.final_eval.spearman, |b| b.spearman)
    }
}

/// Computes the joint loss report and the weighted upstream gradients for one
/// forward pass. Gradient branches for inactive heads (or heads whose weight
/// is zero) are `None`, so backward skips them entirely.
pub fn loss_and_grads(
    out: &MtlOutput,
    score_targets: &Array1<f64>,
    labels: &[DiveLabel],
    captions: &[CaptionTokens],
    weights: &LossWeights,
    tasks: &TaskConfig,
    norm: CaptionNorm,
) -> Result<(LossReport, MtlGrads)> {
    let aqa = aqa_loss(out.scores.view(), score_targets.view())?;
    let mut grads = MtlGrads {
        scores: aqa_loss_grad(out.scores.view(), score_targets.view())? * weights.aqa,
        class_logits: None,
        caption_logits: None,
    };
    let mut classification = 0.0;
    if let Some(logits) = &out.class_logits {
        classification = classification_loss(logits, labels)?;
        if weights.classification != 0.0 {
            grads.class_logits = Some(
                classification_loss_grad(logits, labels)?
                    .into_iter()
                    .map(|g| g * weights.classification)
                    .collect(),
            );
        }
    }
    let mut caption = 0.0;
    if let Some(logits) = &out.caption_logits {
        let targets: Vec<&[usize]> = captions.iter().map(|c| c.targets()).collect();
        caption = captioning_loss(logits, &targets, norm)?;
        if weights.caption != 0.0 {
            grads.caption_logits = Some(
                captioning_loss_grad(logits, &targets, norm)?
                    .into_iter()
                    .map(|g| g * weights.caption)
                    .collect(),
            );
        }
    }
    Ok((total_loss(aqa, classification, caption, weights, tasks), grads))
}

fn add_scaled(sum: &mut LossReport, r: &LossReport, w: f64) {
    sum.total += r.total * w;
    sum.aqa += r.aqa * w;
    sum.classification += r.classification * w;
    sum.caption += r.caption * w;
}

fn divide(r: &LossReport, n: f64) -> LossReport {
    LossReport {
        total: r.total / n,
        aqa: r.aqa / n,
        classification: r.classification / n,
        caption: r.caption / n,
    }
}

/// Runs the full training loop and writes the run directory.
///
/// Per epoch: shuffle (seeded by `(seed, epoch)`), preprocess each batch in
/// train mode (seeded by `(seed, epoch, batch)`), forward/backward/Adam step,
/// then evaluate on `eval_set` and append one [`EpochRecord`] to `log.jsonl`.
/// The checkpoint with the best evaluation Spearman and the final checkpoint
/// are both kept. A non-finite batch loss aborts before the parameters are
/// touched: the final checkpoint then holds the last finite-loss state and
/// the error carries the epoch and the offending component values.
pub fn train(
    config: &TrainConfig,
    train_set: &[VideoSample],
    eval_set: &[VideoSample],
    vocab: &Vocabulary,
    run_dir: &Path,
) -> Result<TrainOutcome> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(AqaError::Data("training set is empty".into()));
    }
    if eval_set.len() < 2 {
        return Err(AqaError::Data(
            "evaluation set needs at least two samples for rank correlation".into(),
        ));
    }
    if config.model.vocab != vocab.len() {
        return Err(AqaError::Config(format!(
            "model vocabulary size {} does not match the dataset vocabulary size {}",
            config.model.vocab,
            vocab.len()
        )));
    }

    fs::create_dir_all(run_dir)?;
    let paths = RunPaths::new(run_dir);
    fs::write(&paths.config, serde_json::to_string_pretty(config)?)?;
    let mut log_file = fs::File::create(&paths.log)?;

    let preprocess = PreprocessConfig::for_model(&config.model);
    let mut model: MtlModel<f32> = MtlModel::new(config.model.clone(), config.seed)?;
    let mut opt: Adam<f32> = Adam::new(config.lr);

    let mut history = Vec::with_capacity(config.epochs);
    let mut best: Option<(usize, EvalReport)> = None;

    for epoch in 1..=config.epochs {
        opt.lr = effective_lr(config, epoch);

        let mut order: Vec<usize> = (0..train_set.len()).collect();
        order.shuffle(&mut sample_rng(config.seed, epoch as u64));

        let mut sum = LossReport::default();
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            let refs: Vec<&VideoSample> = chunk.iter().map(|&i| &train_set[i]).collect();
            let batch_seed = mix_seed(config.seed, ((epoch as u64) << 24) | b as u64);
            let video = preprocess_batch(&refs, &preprocess, config.augment, batch_seed)?;
            let (score_targets, labels, captions) = batch_targets(&refs);
            let gold = config.tasks.captioning.then_some(captions.as_slice());
            let mut dropout_rng = sample_rng(batch_seed, u64::MAX);
            let out = model.forward(&video, gold, config.tasks, true, &mut dropout_rng)?;
            let (report, grads) = loss_and_grads(
                &out,
                &score_targets,
                &labels,
                &captions,
                &config.weights,
                &config.tasks,
                config.caption_norm,
            )?;
            if !report.total.is_finite() {
                model.save_checkpoint(&paths.ckpt_final)?;
                return Err(AqaError::NonFiniteLoss {
                    epoch,
                    detail: format!(
                        "aqa {} classification {} caption {}; final checkpoint holds the last finite state",
                        report.aqa, report.classification, report.caption
                    ),
                });
            }
            add_scaled(&mut sum, &report, refs.len() as f64);
            model.backward(&video, &grads)?;
            opt.step(model.params_mut());
        }
        let loss = divide(&sum, train_set.len() as f64);

        let eval = match evaluate(
            &mut model,
            eval_set,
            &preprocess,
            config.tasks,
            vocab,
            config.batch_size,
        ) {
            Ok(report) => Some(report),
            Err(AqaError::UndefinedCorrelation(why)) => {
                log::warn!("epoch {epoch}: evaluation skipped: {why}");
                None
            }
            Err(e) => return Err(e),
        };
        if let Some(report) = &eval {
            let improved = best.as_ref().map_or(true, |(_, b)| report.spearman > b.spearman);
            if improved {
                model.save_checkpoint(&paths.ckpt_best)?;
                best = Some((epoch, report.clone()));
            }
        }

        let record = EpochRecord {
            epoch,
            lr: opt.lr,
            loss,
            eval,
        };
        writeln!(log_file, "{}", serde_json::to_string(&record)?)?;
        history.push(record);
    }

    model.save_checkpoint(&paths.ckpt_final)?;
    let final_eval = evaluate(
        &mut model,
        eval_set,
        &preprocess,
        config.tasks,
        vocab,
        config.batch_size,
    )?;
    let outcome = TrainOutcome {
        epochs_run: config.epochs,
        best_epoch: best.as_ref().map(|(epoch, _)| *epoch),
        ckpt_best: best.as_ref().map(|_| paths.ckpt_best.clone()),
        best: best.map(|(_, report)| report),
        final_eval,
        ckpt_final: paths.ckpt_final.clone(),
        history,
    };
    fs::write(&paths.report, serde_json::to_string_pretty(&outcome)?)?;
    Ok(outcome)
}

fn argmax_row(row: ArrayView1<f64>) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

fn caption_words(tokens: &CaptionTokens, vocab: &Vocabulary) -> Vec<String> {
    tokens
        .decode(vocab)
        .split_whitespace()
        .map(str::to_string)
        .collect()
}

/// Evaluates a model on a labelled set: Spearman over normalized scores,
/// plus per-sub-task accuracies and caption metrics for whichever tasks are
/// active. Captions are generated greedily; forwards run in eval mode.
pub fn evaluate(
    model: &mut MtlModel<f32>,
    samples: &[VideoSample],
    preprocess: &PreprocessConfig,
    tasks: TaskConfig,
    vocab: &Vocabulary,
    batch_size: usize,
) -> Result<EvalReport> {
    if samples.len() < 2 {
        return Err(AqaError::UndefinedCorrelation(
            "evaluation needs at least two samples".into(),
        ));
    }
    if batch_size == 0 {
        return Err(AqaError::Config("batch size must be at least 1".into()));
    }
    let schema = model.config().schema.clone();
    let mut preds = Vec::with_capacity(samples.len());
    let mut truth = Vec::with_capacity(samples.len());
    let mut pred_labels = Vec::new();
    let mut true_labels = Vec::new();
    let mut hyps = Vec::new();
    let mut refs_words = Vec::new();

    for chunk in samples.chunks(batch_size) {
        let refs: Vec<&VideoSample> = chunk.iter().collect();
        let video = preprocess_batch(&refs, preprocess, false, 0)?;
        let forward_tasks = TaskConfig {
            classification: tasks.classification,
            captioning: false,
        };
        let out = model.forward(&video, None, forward_tasks, false, &mut sample_rng(0, 0))?;
        preds.extend(out.scores.iter().copied());
        truth.extend(refs.iter().map(|s| s.score.normalized()));
        if tasks.classification {
            let logits = out.class_logits.as_ref().expect("classification requested");
            for (i, sample) in refs.iter().enumerate() {
                let mut indices = [0usize; 5];
                for (task, m) in logits.iter().enumerate() {
                    indices[task] = argmax_row(m.row(i));
                }
                pred_labels.push(DiveLabel::from_indices(indices, &schema)?);
                true_labels.push(sample.label);
            }
        }
        if tasks.captioning {
            for (generated, sample) in model.generate_captions(&video, None)?.iter().zip(&refs) {
                hyps.push(caption_words(generated, vocab));
                refs_words.push(caption_words(&sample.caption, vocab));
            }
        }
    }

    let mut report = EvalReport {
        spearman: spearman(&preds, &truth)?,
        ..EvalReport::default()
    };
    if tasks.classification {
        report.set_accuracies(subtask_accuracy(&pred_labels, &true_labels)?);
    }
    if tasks.captioning {
        let ([b1, b2, b3, b4], rouge_l, cider) = caption_metrics(&hyps, &refs_words)?;
        report.bleu1 = Some(b1);
        report.bleu2 = Some(b2);
        report.bleu3 = Some(b3);
        report.bleu4 = Some(b4);
        report.rouge_l = Some(rouge_l);
        report.cider = Some(cider);
    }
    Ok(report)
}

/// Task-arm grid produced by [`run_ablation`]: rows are task combinations
/// (single-task first), columns are architectures, cells are headline
/// Spearman values. The sample ids are recorded so arms are auditable as
/// having shared identical data.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationTable {
    pub architectures: Vec<String>,
    pub arms: Vec<String>,
    pub spearman: Vec<Vec<f64>>,
    pub train_ids: Vec<String>,
    pub test_ids: Vec<String>,
}

impl AblationTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("tasks");
        for arch in &self.architectures {
            out.push(',');
            out.push_str(arch);
        }
        out.push('\n');
        for (arm, row) in self.arms.iter().zip(&self.spearman) {
            out.push_str(arm);
            for v in row {
                out.push_str(&format!(",{v:.6}"));
            }
            out.push('\n');
        }
        out
    }
}

/// Trains every task arm for every architecture on identical data and
/// collects the headline Spearman grid. Run directories land under
/// `out_dir/<architecture>_<arm>`.
pub fn run_ablation(
    base: &TrainConfig,
    models: &[ModelConfig],
    train_set: &[VideoSample],
    eval_set: &[VideoSample],
    vocab: &Vocabulary,
    out_dir: &Path,
) -> Result<AblationTable> {
    if models.is_empty() {
        return Err(AqaError::Config(
            "ablation needs at least one architecture".into(),
        ));
    }
    let architectures: Vec<String> = models
        .iter()
        .map(|m| m.architecture.name().to_string())
        .collect();
    let mut arms = Vec::new();
    let mut grid = Vec::new();
    for (arm, tasks) in TaskConfig::ablation_arms() {
        let mut row = Vec::with_capacity(models.len());
        for model in models {
            let config = TrainConfig {
                model: model.clone(),
                tasks,
                ..base.clone()
            };
            let dir = out_dir.join(format!("{}_{arm}", model.architecture.name()));
            let outcome = train(&config, train_set, eval_set, vocab, &dir)?;
            row.push(outcome.headline_spearman());
        }
        arms.push(arm.to_string());
        grid.push(row);
    }
    Ok(AblationTable {
        architectures,
        arms,
        spearman: grid,
        train_ids: train_set.iter().map(|s| s.sample_id.clone()).collect(),
        test_ids: eval_set.iter().map(|s| s.sample_id.clone()).collect(),
    })
}

/// One row of a training-set-size sweep: the same subset trained score-only
/// and with all tasks.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepRow {
    pub size: usize,
    pub stl_spearman: f64,
    pub mtl_spearman: f64,
    pub train_ids: Vec<String>,
}

pub fn sweep_to_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("size,stl_spearman,mtl_spearman\n");
    for row in rows {
        out.push_str(&format!(
            "{},{:.6},{:.6}\n",
            row.size, row.stl_spearman, row.mtl_spearman
        ));
    }
    out
}

/// For each requested size, draws a seeded subset of the training set and
/// trains both arms (single-task, all tasks) on exactly that subset. Every
/// size must fit the training set and be at least one batch.
pub fn run_size_sweep(
    base: &TrainConfig,
    sizes: &[usize],
    train_set: &[VideoSample],
    eval_set: &[VideoSample],
    vocab: &Vocabulary,
    out_dir: &Path,
) -> Result<Vec<SweepRow>> {
    if sizes.is_empty() {
        return Err(AqaError::Config("sweep needs at least one size".into()));
    }
    for &size in sizes {
        if size > train_set.len() {
            return Err(AqaError::Config(format!(
                "sweep size {size} exceeds the {} available training samples",
                train_set.len()
            )));
        }
        if size < base.batch_size {
            return Err(AqaError::Config(format!(
                "sweep size {size} is smaller than the batch size {}",
                base.batch_size
            )));
        }
    }
    let mut rows = Vec::with_capacity(sizes.len());
    for &size in sizes {
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        order.shuffle(&mut sample_rng(base.seed, size as u64));
        let subset: Vec<VideoSample> = order[..size].iter().map(|&i| train_set[i].clone()).collect();

        let stl = TrainConfig {
            tasks: TaskConfig::aqa_only(),
            ..base.clone()
        };
        let stl_dir = out_dir.join(format!("size{size}_stl"));
        let stl_spearman =
            train(&stl, &subset, eval_set, vocab, &stl_dir)?.headline_spearman();

        let mtl = TrainConfig {
            tasks: TaskConfig::all(),
            ..base.clone()
        };
        let mtl_dir = out_dir.join(format!("size{size}_mtl"));
        let mtl_spearman =
            train(&mtl, &subset, eval_set, vocab, &mtl_dir)?.headline_spearman();

        rows.push(SweepRow {
            size,
            stl_spearman,
            mtl_spearman,
            train_ids: subset.iter().map(|s| s.sample_id.clone()).collect(),
        });
    }
    Ok(rows)
}

fn cholesky_solve(a: &Array2<f64>, b: &Array1<f64>) -> Result<Array1<f64>> {
    let d = a.nrows();
    let mut l = Array2::<f64>::zeros((d, d));
    for i in 0..d {
        for j in 0..=i {
            let mut sum = a[[i, j]];
            for k in 0..j {
                sum -= l[[i, k]] * l[[j, k]];
            }
            if i == j {
                if sum <= 0.0 {
                    return Err(AqaError::Data(
                        "ridge normal equations are not positive definite".into(),
                    ));
                }
                l[[i, j]] = sum.sqrt();
            } else {
                l[[i, j]] = sum / l[[j, j]];
            }
        }
    }
    let mut z = Array1::<f64>::zeros(d);
    for i in 0..d {
        let mut sum = b[i];
        for k in 0..i {
            sum -= l[[i, k]] * z[k];
        }
        z[i] = sum / l[[i, i]];
    }
    let mut w = Array1::<f64>::zeros(d);
    for i in (0..d).rev() {
        let mut sum = z[i];
        for k in i + 1..d {
            sum -= l[[k, i]] * w[k];
        }
        w[i] = sum / l[[i, i]];
    }
    Ok(w)
}

/// Closed-form ridge regression: centers features and targets, solves
/// `(XᵀX + λI) w = Xᵀy` by Cholesky, and predicts for `x_test`. As λ → ∞ the
/// weights vanish and the predictor collapses to the target mean, which a
/// downstream rank correlation then reports as undefined.
pub fn ridge_predictions(
    x_train: &Array2<f64>,
    y_train: &Array1<f64>,
    x_test: &Array2<f64>,
    lambda: f64,
) -> Result<Array1<f64>> {
    if lambda.is_nan() || lambda <= 0.0 {
        return Err(AqaError::Config(format!(
            "ridge penalty must be positive, got {lambda}"
        )));
    }
    let (n, d) = x_train.dim();
    if n < 2 {
        return Err(AqaError::Data(
            "ridge regression needs at least two training samples".into(),
        ));
    }
    if y_train.len() != n {
        return Err(AqaError::Data(format!(
            "ridge targets ({}) do not match the {n} training rows",
            y_train.len()
        )));
    }
    if x_test.ncols() != d {
        return Err(AqaError::Data(format!(
            "ridge test features have {} columns, expected {d}",
            x_test.ncols()
        )));
    }
    let x_mean = x_train.mean_axis(Axis(0)).expect("n >= 2");
    let y_mean = y_train.mean().expect("n >= 2");
    let xc = x_train - &x_mean;
    let yc = y_train.mapv(|v| v - y_mean);
    let mut a = xc.t().dot(&xc);
    for i in 0..d {
        a[[i, i]] += lambda;
    }
    let b = xc.t().dot(&yc);
    let w = cholesky_solve(&a, &b)?;
    Ok((x_test - &x_mean).dot(&w) + y_mean)
}

/// Which activation stages to probe and how strongly to regularize.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeConfig {
    pub layers: Vec<LayerTag>,
    pub lambda: f64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            layers: LayerTag::ALL.to_vec(),
            lambda: 1e-3,
        }
    }
}

/// Test-set Spearman of a ridge probe on one activation stage.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProbeRow {
    pub layer: String,
    pub spearman: f64,
}

pub fn probe_to_csv(rows: &[ProbeRow]) -> String {
    let mut out = String::from("layer,spearman\n");
    for row in rows {
        out.push_str(&format!("{},{:.6}\n", row.layer, row.spearman));
    }
    out
}

fn pooled_feature_matrix(
    model: &mut MtlModel<f32>,
    samples: &[VideoSample],
    preprocess: &PreprocessConfig,
) -> Result<(Vec<(LayerTag, Array2<f64>)>, Array1<f64>)> {
    let mut per_layer: Vec<(LayerTag, Vec<Array2<f64>>)> = Vec::new();
    for chunk in samples.chunks(2) {
        let refs: Vec<&VideoSample> = chunk.iter().collect();
        let video = preprocess_batch(&refs, preprocess, false, 0)?;
        for (i, (tag, features)) in model.pooled_captures(&video)?.into_iter().enumerate() {
            if per_layer.len() <= i {
                per_layer.push((tag, Vec::new()));
            }
            per_layer[i].1.push(features);
        }
    }
    let features = per_layer
        .into_iter()
        .map(|(tag, parts)| {
            let views: Vec<_> = parts.iter().map(|m| m.view()).collect();
            (tag, concatenate(Axis(0), &views).expect("equal widths"))
        })
        .collect();
    let targets = Array1::from_iter(samples.iter().map(|s| s.score.normalized()));
    Ok((features, targets))
}

/// Fits a ridge probe from globally pooled activations at each requested
/// stage to the normalized score, and reports the test-set Spearman per
/// stage. The model's parameters are read, never updated.
pub fn linear_probe(
    model: &mut MtlModel<f32>,
    probe: &ProbeConfig,
    train_set: &[VideoSample],
    test_set: &[VideoSample],
    preprocess: &PreprocessConfig,
) -> Result<Vec<ProbeRow>> {
    if probe.layers.is_empty() {
        return Err(AqaError::Config("probe needs at least one layer".into()));
    }
    if probe.lambda.is_nan() || probe.lambda <= 0.0 {
        return Err(AqaError::Config(format!(
            "ridge penalty must be positive, got {}",
            probe.lambda
        )));
    }
    if train_set.len() < 2 {
        return Err(AqaError::Data(
            "linear probe needs at least two training samples".into(),
        ));
    }
    if test_set.len() < 2 {
        return Err(AqaError::Data(
            "linear probe needs at least two test samples".into(),
        ));
    }
    let (train_features, train_targets) = pooled_feature_matrix(model, train_set, preprocess)?;
    let (test_features, test_targets) = pooled_feature_matrix(model, test_set, preprocess)?;
    let mut rows = Vec::with_capacity(probe.layers.len());
    for tag in &probe.layers {
        let i = train_features
            .iter()
            .position(|(t, _)| t == tag)
            .expect("every stage is captured");
        let preds = ridge_predictions(
            &train_features[i].1,
            &train_targets,
            &test_features[i].1,
            probe.lambda,
        )?;
        rows.push(ProbeRow {
            layer: tag.name().to_string(),
            spearman: spearman(
                preds.as_slice().expect("contiguous"),
                test_targets.as_slice().expect("contiguous"),
            )?,
        });
    }
    Ok(rows)
}
