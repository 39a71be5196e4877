//! Loss, Adam optimization, the mini-batch training loop and evaluation.
//!
//! Training: build the antecedents on the training split (kernel Gram,
//! clustering, rule base), initialize one consequent unit per rule, then run
//! seeded mini-batch epochs of the fused objective — batch-sum cross-entropy
//! plus the L2 penalty — under Adam with exponential learning-rate decay.
//! Parameters are snapshotted whenever validation accuracy strictly improves
//! and training stops once it has not improved for `patience` epochs.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::antecedent::{build_rulebase, RuleBase};
use crate::autodiff::{Parameter, Value};
use crate::cluster::{run_k2pgc, ClusterModel, ClusterOptions};
use crate::error::{GfsError, Result};
use crate::gcpu::{gfs_forward, GfsModel, GnnVariant, ModelDims};
use crate::graph::{batch_graphs, Graph, GraphDataset};
use crate::kernel::{KernelConfig, KernelContext};
use crate::scalar::Scalar;

/// Probability floor applied before taking logs in the cross-entropy term.
pub const PROB_CLAMP: f64 = 1e-12;

/// Training configuration.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    /// Number of fuzzy rules K.
    pub rules: usize,
    pub variant: GnnVariant,
    pub d_h: usize,
    /// MLP hidden width; `None` ties it to `d_h`.
    pub d_mlp: Option<usize>,
    /// L2 trade-off α.
    pub alpha: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub lr0: f64,
    /// Per-epoch exponential decay factor.
    pub decay: f64,
    /// Early-stopping patience in epochs.
    pub patience: usize,
    pub seed: u64,
    pub kernel: KernelConfig,
    pub cluster: ClusterOptions,
    /// Use the squared norm ‖Θ‖² instead of ‖Θ‖ as the penalty.
    pub reg_squared: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            rules: 2,
            variant: GnnVariant::Gcn,
            d_h: 64,
            d_mlp: None,
            alpha: 1e-4,
            batch_size: 32,
            max_epochs: 100,
            lr0: 0.1,
            decay: 0.98,
            patience: 20,
            seed: 0,
            kernel: KernelConfig::default(),
            cluster: ClusterOptions::default(),
            reg_squared: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rules == 0 || self.d_h == 0 || self.batch_size == 0 || self.max_epochs == 0 {
            return Err(GfsError::InvalidConfig(
                "rules, d_h, batch_size and max_epochs must be positive".into(),
            ));
        }
        if self.alpha <= 0.0 || self.lr0 <= 0.0 || self.decay <= 0.0 {
            return Err(GfsError::InvalidConfig(
                "alpha, lr0 and decay must be positive".into(),
            ));
        }
        if self.patience == 0 || self.patience > self.max_epochs {
            return Err(GfsError::InvalidConfig(
                "patience must be in 1..=max_epochs".into(),
            ));
        }
        self.kernel.validate()
    }

    pub fn dims_for<T: Scalar>(&self, dataset: &GraphDataset<T>) -> ModelDims {
        ModelDims {
            d_in: dataset.feature_dim,
            d_h: self.d_h,
            d_mlp: self.d_mlp.unwrap_or(self.d_h),
            num_classes: dataset.num_classes,
        }
    }
}

/// Per-epoch metrics.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_loss: f64,
    pub val_acc: f64,
}

/// Full training record.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainHistory {
    pub epochs: Vec<EpochStats>,
    /// 1-based epoch whose snapshot the returned model carries.
    pub best_epoch: usize,
    pub best_val_accuracy: f64,
    /// Count of true-label probabilities that hit the clamp floor.
    pub clamp_events: u64,
}

impl TrainHistory {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,lr,train_loss,train_acc,val_loss,val_acc\n");
        for e in &self.epochs {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                e.epoch, e.lr, e.train_loss, e.train_acc, e.val_loss, e.val_acc
            ));
        }
        out
    }
}

/// Adam moment accumulators, aligned with a fixed parameter list.
pub struct AdamState<T: Scalar> {
    m: Vec<Array2<T>>,
    v: Vec<Array2<T>>,
    step: u64,
    beta1: T,
    beta2: T,
    epsilon: T,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(params: &[&Parameter<T>]) -> Self {
        Self {
            m: params
                .iter()
                .map(|p| Array2::zeros(p.data().dim()))
                .collect(),
            v: params
                .iter()
                .map(|p| Array2::zeros(p.data().dim()))
                .collect(),
            step: 0,
            beta1: T::of(0.9),
            beta2: T::of(0.999),
            epsilon: T::of(1e-8),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One Adam update over `params` from their accumulated gradients, with bias
/// correction. Aborts without touching any parameter if a gradient is
/// non-finite, reporting the offending parameter's name.
pub fn adam_step<T: Scalar>(
    params: &[&Parameter<T>],
    state: &mut AdamState<T>,
    lr: T,
) -> Result<()> {
    assert_eq!(
        params.len(),
        state.m.len(),
        "optimizer bound to other params"
    );
    for p in params {
        if p.grad().iter().any(|g| !g.is_finite()) {
            return Err(GfsError::NonFiniteGradient {
                name: p.name().to_string(),
            });
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let bias1 = T::one() - state.beta1.powi(t);
    let bias2 = T::one() - state.beta2.powi(t);
    for (i, p) in params.iter().enumerate() {
        let grad = p.grad().clone();
        let m = &mut state.m[i];
        let v = &mut state.v[i];
        let mut data = p.data().clone();
        for (idx, g) in grad.indexed_iter() {
            let g = *g;
            m[idx] = state.beta1 * m[idx] + (T::one() - state.beta1) * g;
            v[idx] = state.beta2 * v[idx] + (T::one() - state.beta2) * g * g;
            let m_hat = m[idx] / bias1;
            let v_hat = v[idx] / bias2;
            data[idx] -= lr * m_hat / (v_hat.sqrt() + state.epsilon);
        }
        p.set_data(data);
    }
    Ok(())
}

/// `lr0 · decay^epoch` (epoch counted from zero).
pub fn lr_schedule(epoch: usize, config: &TrainConfig) -> f64 {
    config.lr0 * config.decay.powi(epoch as i32)
}

/// Fused objective on one batch: batch-sum cross-entropy over the clamped
/// probabilities plus `α` times the parameter norm (or squared norm).
/// Returns the loss node and the number of true-label probabilities that hit
/// the clamp floor.
pub fn gfs_loss<T: Scalar>(
    probabilities: &Value<T>,
    labels: &[usize],
    params: &[&Parameter<T>],
    alpha: T,
    reg_squared: bool,
) -> (Value<T>, u64) {
    let (b, c) = probabilities.dim();
    assert_eq!(b, labels.len(), "one label per batch row");
    let mut one_hot = Array2::zeros((b, c));
    let mut clamps = 0u64;
    {
        let probs = probabilities.data();
        for (i, &y) in labels.iter().enumerate() {
            assert!(y < c, "label out of range");
            one_hot[[i, y]] = T::one();
            if probs[[i, y]] < T::of(PROB_CLAMP) {
                clamps += 1;
            }
        }
    }
    let picked = probabilities
        .log_clamped(T::of(PROB_CLAMP))
        .elementwise_mul(&Value::constant(one_hot));
    let cross_entropy = picked.sum().scale(-T::one());
    (
        add_regularizer(cross_entropy, params, alpha, reg_squared),
        clamps,
    )
}

/// The same objective evaluated from the fused logits through a log-softmax,
/// which the optimization loop uses.
///
/// Value-wise this agrees with [`gfs_loss`] on the softmax probabilities
/// whenever no probability is clamped; unlike the clamped form its gradient
/// never dies when a true-class probability underflows the floor, so heavily
/// saturated logits (easily produced at the 0.1 initial learning rate) can
/// still recover. True-label probabilities below the floor are counted
/// exactly as in [`gfs_loss`].
pub fn gfs_loss_from_logits<T: Scalar>(
    logits: &Value<T>,
    labels: &[usize],
    params: &[&Parameter<T>],
    alpha: T,
    reg_squared: bool,
) -> (Value<T>, u64) {
    let (b, c) = logits.dim();
    assert_eq!(b, labels.len(), "one label per batch row");
    let log_probs = logits.row_log_softmax();
    let mut one_hot = Array2::zeros((b, c));
    let mut clamps = 0u64;
    {
        let logp = log_probs.data();
        let floor = T::of(PROB_CLAMP.ln());
        for (i, &y) in labels.iter().enumerate() {
            assert!(y < c, "label out of range");
            one_hot[[i, y]] = T::one();
            if logp[[i, y]] < floor {
                clamps += 1;
            }
        }
    }
    let picked = log_probs.elementwise_mul(&Value::constant(one_hot));
    let cross_entropy = picked.sum().scale(-T::one());
    (
        add_regularizer(cross_entropy, params, alpha, reg_squared),
        clamps,
    )
}

fn add_regularizer<T: Scalar>(
    cross_entropy: Value<T>,
    params: &[&Parameter<T>],
    alpha: T,
    reg_squared: bool,
) -> Value<T> {
    let mut norm_sq: Option<Value<T>> = None;
    for p in params {
        let term = p.value().frobenius_norm_sq();
        norm_sq = Some(match norm_sq {
            None => term,
            Some(acc) => acc.add(&term),
        });
    }
    match norm_sq {
        None => cross_entropy,
        Some(norm_sq) => {
            let penalty = if reg_squared { norm_sq } else { norm_sq.sqrt() };
            cross_entropy.add(&penalty.scale(alpha))
        }
    }
}

/// Antecedents prepared on a training split: kernel context, clustering and
/// the rule base with cached training firing strengths.
#[derive(Clone)]
pub struct PreparedAntecedents<T: Scalar> {
    pub rulebase: RuleBase<T>,
    pub cluster: ClusterModel,
    pub train_strengths: Array2<f64>,
}

/// Runs the antecedent half of the pipeline on the training split only:
/// fit the kernel, build the Gram matrix, cluster, extract prototypes.
pub fn prepare_antecedents<T: Scalar>(
    train: &GraphDataset<T>,
    config: &TrainConfig,
) -> Result<PreparedAntecedents<T>> {
    let ctx = KernelContext::fit(train, config.kernel.clone())?;
    let cache = ctx.kernel_matrix(train)?;
    let cluster = run_k2pgc(&cache, config.rules, config.seed, &config.cluster)?;
    let build = build_rulebase(train, &cluster, ctx, Some(&cache))?;
    Ok(PreparedAntecedents {
        rulebase: build.rulebase,
        cluster,
        train_strengths: build.train_strengths,
    })
}

fn to_scalar_matrix<T: Scalar>(m: &Array2<f64>) -> Array2<T> {
    m.mapv(T::of)
}

/// End-to-end training: antecedents from the training split, then the
/// consequent loop. Returns the best-validation model and the history.
pub fn train<T: Scalar>(
    train_set: &GraphDataset<T>,
    val_set: &GraphDataset<T>,
    config: &TrainConfig,
) -> Result<(GfsModel<T>, TrainHistory)> {
    let antecedents = prepare_antecedents(train_set, config)?;
    train_with_antecedents(train_set, val_set, antecedents, config)
}

/// The consequent training loop over prebuilt antecedents.
pub fn train_with_antecedents<T: Scalar>(
    train_set: &GraphDataset<T>,
    val_set: &GraphDataset<T>,
    antecedents: PreparedAntecedents<T>,
    config: &TrainConfig,
) -> Result<(GfsModel<T>, TrainHistory)> {
    config.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(GfsError::InvalidSplit(
            "empty train or validation split".into(),
        ));
    }
    let mut batch_size = config.batch_size;
    if batch_size > train_set.len() {
        eprintln!(
            "warning: batch size {batch_size} exceeds training size {}; clamping",
            train_set.len()
        );
        batch_size = train_set.len();
    }

    let dims = config.dims_for(train_set);
    let mut model = GfsModel::new(antecedents.rulebase, config.variant, dims, config.seed);
    model.feature_scaler = Some(crate::gcpu::FeatureScaler::fit(train_set));
    let model = model;
    let params = model.parameters();
    let mut adam = AdamState::new(&params);
    let alpha = T::of(config.alpha);

    let train_strengths: Array2<T> = to_scalar_matrix(&antecedents.train_strengths);
    let val_strengths: Array2<T> = to_scalar_matrix(&model.rulebase.strength_matrix(val_set));

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5348_5546_464C_4531);
    let mut history = TrainHistory::default();
    let mut best_val_acc = f64::NEG_INFINITY;
    let mut best_epoch = 0usize;
    let mut best_snapshot: Vec<Array2<T>> = params.iter().map(|p| p.data().clone()).collect();
    let mut stall = 0usize;

    let mut order: Vec<usize> = (0..train_set.len()).collect();
    for epoch in 1..=config.max_epochs {
        let lr = lr_schedule(epoch - 1, config);
        order.shuffle(&mut rng);

        let mut epoch_loss = 0.0f64;
        let mut batches = 0usize;
        let mut correct = 0usize;
        for chunk in order.chunks(batch_size) {
            let graphs: Vec<&Graph<T>> = chunk.iter().map(|&i| &train_set.graphs[i]).collect();
            let batch = batch_graphs(&graphs)?;
            let strengths = Array2::from_shape_fn((chunk.len(), model.num_rules()), |(r, k)| {
                train_strengths[[chunk[r], k]]
            });
            let (logits, probs) = gfs_forward(&batch, &model, &strengths);
            let (loss, clamps) =
                gfs_loss_from_logits(&logits, &batch.labels, &params, alpha, config.reg_squared);
            history.clamp_events += clamps;
            model.zero_grads();
            loss.backward();
            adam_step(&params, &mut adam, T::of(lr))?;

            epoch_loss += loss.scalar().to_f64_lossless();
            batches += 1;
            correct += count_correct(&probs.data(), &batch.labels);
        }
        let train_loss = epoch_loss / batches as f64;
        let train_acc = correct as f64 / train_set.len() as f64;

        let (val_loss, val_acc) = {
            let (loss_sum, batches, correct) =
                forward_metrics(&model, val_set, &val_strengths, batch_size, alpha, config)?;
            (
                loss_sum / batches as f64,
                correct as f64 / val_set.len() as f64,
            )
        };

        history.epochs.push(EpochStats {
            epoch,
            lr,
            train_loss,
            train_acc,
            val_loss,
            val_acc,
        });

        if val_acc > best_val_acc {
            best_val_acc = val_acc;
            best_epoch = epoch;
            best_snapshot = params.iter().map(|p| p.data().clone()).collect();
            stall = 0;
        } else {
            stall += 1;
            if stall >= config.patience {
                break;
            }
        }
    }

    for (p, data) in params.iter().zip(best_snapshot) {
        p.set_data(data);
    }
    history.best_epoch = best_epoch;
    history.best_val_accuracy = best_val_acc;
    Ok((model, history))
}

fn count_correct<T: Scalar>(probs: &Array2<T>, labels: &[usize]) -> usize {
    let mut correct = 0;
    for (i, &y) in labels.iter().enumerate() {
        let mut arg = 0usize;
        let mut best = probs[[i, 0]];
        for c in 1..probs.ncols() {
            if probs[[i, c]] > best {
                best = probs[[i, c]];
                arg = c;
            }
        }
        if arg == y {
            correct += 1;
        }
    }
    correct
}

fn forward_metrics<T: Scalar>(
    model: &GfsModel<T>,
    split: &GraphDataset<T>,
    strengths: &Array2<T>,
    batch_size: usize,
    alpha: T,
    config: &TrainConfig,
) -> Result<(f64, usize, usize)> {
    let params = model.parameters();
    let indices: Vec<usize> = (0..split.len()).collect();
    let mut loss_sum = 0.0f64;
    let mut batches = 0usize;
    let mut correct = 0usize;
    for chunk in indices.chunks(batch_size) {
        let graphs: Vec<&Graph<T>> = chunk.iter().map(|&i| &split.graphs[i]).collect();
        let batch = batch_graphs(&graphs)?;
        let w = Array2::from_shape_fn((chunk.len(), model.num_rules()), |(r, k)| {
            strengths[[chunk[r], k]]
        });
        let (logits, probs) = gfs_forward(&batch, model, &w);
        let (loss, _) =
            gfs_loss_from_logits(&logits, &batch.labels, &params, alpha, config.reg_squared);
        loss_sum += loss.scalar().to_f64_lossless();
        batches += 1;
        correct += count_correct(&probs.data(), &batch.labels);
    }
    Ok((loss_sum, batches, correct))
}

/// Accuracy and per-class confusion counts (rows = true class, columns =
/// predicted class) of a model on a split.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub accuracy: f64,
    pub confusion: Array2<u64>,
}

/// Deterministic evaluation: firing strengths from the rule base, fused
/// probabilities, argmax prediction.
pub fn evaluate<T: Scalar>(
    model: &GfsModel<T>,
    split: &GraphDataset<T>,
    batch_size: usize,
) -> Result<Evaluation> {
    if split.is_empty() {
        return Err(GfsError::InvalidSplit(
            "cannot evaluate an empty split".into(),
        ));
    }
    let c = model.dims.num_classes;
    let strengths: Array2<T> = to_scalar_matrix(&model.rulebase.strength_matrix(split));
    let mut confusion = Array2::zeros((c, c));
    let indices: Vec<usize> = (0..split.len()).collect();
    let batch_size = batch_size.max(1).min(split.len());
    for chunk in indices.chunks(batch_size) {
        let graphs: Vec<&Graph<T>> = chunk.iter().map(|&i| &split.graphs[i]).collect();
        let batch = batch_graphs(&graphs)?;
        let w = Array2::from_shape_fn((chunk.len(), model.num_rules()), |(r, k)| {
            strengths[[chunk[r], k]]
        });
        let (_, probs) = gfs_forward(&batch, model, &w);
        let probs = probs.data();
        for (row, &y) in batch.labels.iter().enumerate() {
            let mut arg = 0usize;
            let mut best = probs[[row, 0]];
            for cls in 1..c {
                if probs[[row, cls]] > best {
                    best = probs[[row, cls]];
                    arg = cls;
                }
            }
            confusion[[y, arg]] += 1;
        }
    }
    let trace: u64 = (0..c).map(|i| confusion[[i, i]]).sum();
    Ok(Evaluation {
        accuracy: trace as f64 / split.len() as f64,
        confusion,
    })
}
