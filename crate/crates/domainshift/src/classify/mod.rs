//! Desk-scale image classifier and its training regimes.
//!
//! A fixed stack of four stride-2 convolution blocks (3->16->32->64->64,
//! kernel 3, padding 1, ReLU) followed by global average pooling and a dense
//! layer to K logits. Training runs SGD under a cyclical exponential
//! learning-rate ramp, optionally freezing a prefix of layers, and returns
//! the parameters with the best validation accuracy.

mod experiment;

pub use experiment::{
    run_experiment, DataSource, ExperimentConfig, ExperimentReport, PairPolicy, RegimeResult,
    REGIME_OURS_UNSUPERVISED, REGIME_OURS_ZERO_SHOT, REGIME_SOURCE, REGIME_TARGET,
};

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::data::{batch_iter, LabeledImageSet, LoadedSet};
use crate::error::{Error, Result};
use crate::optim::{cyclical_exp_lr, sgd_step, ScheduleKind, ScheduleSpec};
use crate::rng::substream;
use crate::shiftnet::ConvLayer;
use crate::tensor::{
    conv2d_backward_masked, dense_backward, dense_forward, global_avg_pool,
    global_avg_pool_backward, relu, relu_backward, softmax_cross_entropy, ConvSpec, GradMask,
    Tensor,
};

fn block_specs() -> [ConvSpec; 4] {
    [
        ConvSpec::conv(3, 16, 3, 2, 1),
        ConvSpec::conv(16, 32, 3, 2, 1),
        ConvSpec::conv(32, 64, 3, 2, 1),
        ConvSpec::conv(64, 64, 3, 2, 1),
    ]
}

/// Number of freezable layers: four conv blocks plus the dense head.
pub const LAYER_COUNT: usize = 5;

/// Classifier parameters plus the label vocabulary they map onto.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierParams {
    pub blocks: [ConvLayer; 4],
    pub dense_weight: Tensor,
    pub dense_bias: Vec<f32>,
    /// Per-layer freeze flags over [block1..block4, dense].
    pub freeze: [bool; LAYER_COUNT],
    pub class_names: Vec<String>,
}

impl ClassifierParams {
    pub fn classes(&self) -> usize {
        self.dense_bias.len()
    }

    pub fn parameter_count(&self) -> usize {
        self.blocks.iter().map(ConvLayer::parameter_count).sum::<usize>()
            + self.dense_weight.numel()
            + self.dense_bias.len()
    }

    /// Flat snapshot of every parameter, used by freeze tests.
    pub fn flat_parameters(&self) -> Vec<f32> {
        let mut out = Vec::with_capacity(self.parameter_count());
        for b in &self.blocks {
            out.extend_from_slice(b.weight.data());
            out.extend_from_slice(&b.bias);
        }
        out.extend_from_slice(self.dense_weight.data());
        out.extend_from_slice(&self.dense_bias);
        out
    }
}

/// Fresh parameters for a K-way classifier; deterministic per seed.
pub fn classifier_init(classes: usize, seed: u64) -> Result<ClassifierParams> {
    if classes < 2 {
        return Err(Error::InvalidConfig {
            field: "classes",
            reason: format!("a classifier needs at least 2 classes, got {classes}"),
        });
    }
    let specs = block_specs();
    let blocks = [0, 1, 2, 3].map(|i| {
        let mut rng = substream(seed, &format!("classifier/init/block{}", i + 1));
        ConvLayer::init(specs[i], &mut rng)
    });
    let mut rng = substream(seed, "classifier/init/dense");
    let fan_in = 64;
    let bound = (6.0 / fan_in as f64).sqrt() as f32;
    let dense_weight = Tensor::from_vec(
        [classes, 64, 1, 1],
        (0..classes * 64).map(|_| rng.gen_range(-bound..=bound)).collect(),
    )
    .expect("dense shape");
    Ok(ClassifierParams {
        blocks,
        dense_weight,
        dense_bias: vec![0.0; classes],
        freeze: [false; LAYER_COUNT],
        class_names: (0..classes).map(|i| format!("class_{i}")).collect(),
    })
}

struct ForwardTrace {
    pre_act: Vec<Tensor>,
    post_act: Vec<Tensor>,
    pooled: Tensor,
    logits: Tensor,
}

fn forward_trace(params: &ClassifierParams, batch: &Tensor) -> Result<ForwardTrace> {
    let mut pre_act = Vec::with_capacity(4);
    let mut post_act = Vec::with_capacity(4);
    let mut x = batch.clone();
    for block in &params.blocks {
        let z = block.forward(&x)?;
        let a = relu(&z);
        pre_act.push(z);
        x = a.clone();
        post_act.push(a);
    }
    let pooled = global_avg_pool(&x);
    let logits = dense_forward(&pooled, &params.dense_weight, &params.dense_bias)?;
    Ok(ForwardTrace {
        pre_act,
        post_act,
        pooled,
        logits,
    })
}

/// Logits for a batch.
pub fn classifier_forward(params: &ClassifierParams, batch: &Tensor) -> Result<Tensor> {
    Ok(forward_trace(params, batch)?.logits)
}

/// Training configuration; defaults follow the reference recipe (100 epochs,
/// batch 32, cyclical ramp 1e-5 -> 1e-3 over 20 steps, first two blocks
/// frozen, best-validation-accuracy model selection).
#[derive(Debug, Clone)]
pub struct ClassifierTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub schedule: ScheduleSpec,
    pub freeze_prefix: usize,
    pub seed: u64,
}

impl Default for ClassifierTrainConfig {
    fn default() -> Self {
        ClassifierTrainConfig {
            epochs: 100,
            batch_size: 32,
            schedule: ScheduleSpec::classifier_default(),
            freeze_prefix: 2,
            seed: 0,
        }
    }
}

impl ClassifierTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::InvalidConfig {
                field: "classifier.epochs",
                reason: "must be >= 1".into(),
            });
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig {
                field: "classifier.batch_size",
                reason: "must be >= 1".into(),
            });
        }
        if self.freeze_prefix > LAYER_COUNT {
            return Err(Error::InvalidConfig {
                field: "classifier.freeze_prefix",
                reason: format!(
                    "cannot freeze {} of {} layers",
                    self.freeze_prefix, LAYER_COUNT
                ),
            });
        }
        if self.schedule.kind != ScheduleKind::CyclicalExp {
            return Err(Error::InvalidConfig {
                field: "classifier.schedule",
                reason: "classifier training uses the cyclical-exp schedule".into(),
            });
        }
        self.schedule.validate()
    }
}

/// Per-epoch training record (epoch is 1-based).
#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
}

/// Accuracy plus per-class confusion counts (rows = true class).
#[derive(Debug, Clone, PartialEq)]
pub struct EvalResult {
    pub accuracy: f64,
    pub confusion: Vec<Vec<usize>>,
    pub total: usize,
}

impl EvalResult {
    pub fn confusion_csv(&self, class_names: &[String]) -> String {
        let mut out = String::from("true\\pred");
        for name in class_names {
            out.push(',');
            out.push_str(name);
        }
        out.push('\n');
        for (i, row) in self.confusion.iter().enumerate() {
            out.push_str(&class_names[i]);
            for count in row {
                out.push(',');
                out.push_str(&count.to_string());
            }
            out.push('\n');
        }
        out
    }
}

const EVAL_BATCH: usize = 128;

fn eval_loaded(params: &ClassifierParams, set: &LoadedSet) -> Result<(EvalResult, f64)> {
    let k = params.classes();
    let mut confusion = vec![vec![0usize; k]; k];
    let mut correct = 0usize;
    let mut loss_total = 0.0f64;
    let order: Vec<usize> = (0..set.len()).collect();
    for chunk in order.chunks(EVAL_BATCH) {
        let (batch, labels) = set.gather(chunk);
        let logits = classifier_forward(params, &batch)?;
        let (loss, _) = softmax_cross_entropy(&logits, &labels)?;
        loss_total += loss * chunk.len() as f64;
        for (i, &label) in labels.iter().enumerate() {
            let row = &logits.data()[i * k..(i + 1) * k];
            let pred = row
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap().then(b.0.cmp(&a.0)))
                .map(|(j, _)| j)
                .unwrap();
            confusion[label][pred] += 1;
            if pred == label {
                correct += 1;
            }
        }
    }
    let total = set.len();
    Ok((
        EvalResult {
            accuracy: correct as f64 / total as f64,
            confusion,
            total,
        },
        loss_total / total as f64,
    ))
}

/// Accuracy and confusion matrix of `params` on a labeled test set.
pub fn evaluate(params: &ClassifierParams, test: &LabeledImageSet) -> Result<EvalResult> {
    if test.is_empty() {
        return Err(Error::DatasetTooSmall {
            reason: "cannot evaluate on an empty set".into(),
        });
    }
    if test.class_names != params.class_names {
        return Err(Error::VocabularyMismatch {
            detail: format!(
                "classifier was trained on {:?}, test set has {:?}",
                params.class_names, test.class_names
            ),
        });
    }
    let loaded = LoadedSet::load(test)?;
    Ok(eval_loaded(params, &loaded)?.0)
}

pub(crate) fn evaluate_loaded(params: &ClassifierParams, set: &LoadedSet) -> Result<EvalResult> {
    if set.class_names != params.class_names {
        return Err(Error::VocabularyMismatch {
            detail: format!(
                "classifier was trained on {:?}, test set has {:?}",
                params.class_names, set.class_names
            ),
        });
    }
    Ok(eval_loaded(params, set)?.0)
}

/// Trains a classifier on the concatenation of `train_sets` (the union of
/// clean and synthetic data realizes joint training), selecting the epoch
/// with the best validation accuracy (ties: lower validation loss, then the
/// earlier epoch). Deterministic per seed; frozen layers receive no updates.
pub fn classifier_train(
    train_sets: &[&LabeledImageSet],
    val: &LabeledImageSet,
    config: &ClassifierTrainConfig,
) -> Result<(ClassifierParams, Vec<EpochStats>)> {
    config.validate()?;
    if val.is_empty() {
        return Err(Error::DatasetTooSmall {
            reason: "validation set is empty".into(),
        });
    }
    let train = LoadedSet::load_concat(train_sets)?;
    if train.class_names != val.class_names {
        return Err(Error::VocabularyMismatch {
            detail: format!(
                "training vocabulary {:?} vs validation {:?}",
                train.class_names, val.class_names
            ),
        });
    }
    if train.is_empty() {
        return Err(Error::DatasetTooSmall {
            reason: "no training images".into(),
        });
    }
    let val_loaded = LoadedSet::load(val)?;
    let k = train.class_names.len();

    let mut params = classifier_init(k, config.seed)?;
    params.class_names = train.class_names.clone();
    for i in 0..config.freeze_prefix {
        params.freeze[i] = true;
    }

    let mut best: Option<(f64, f64, ClassifierParams)> = None;
    let mut history = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let lr = cyclical_exp_lr(&config.schedule, epoch);
        let mut epoch_loss = 0.0f64;
        let mut seen = 0usize;
        for (batch, labels) in batch_iter(&train, config.batch_size, config.seed, epoch) {
            let n = batch.n();
            let loss = train_step(&mut params, &batch, &labels, lr)?;
            if !loss.is_finite() {
                return Err(Error::Training {
                    reason: format!("non-finite training loss at epoch {}", epoch + 1),
                });
            }
            epoch_loss += loss * n as f64;
            seen += n;
        }
        let (val_result, val_loss) = eval_loaded(&params, &val_loaded)?;
        let stats = EpochStats {
            epoch: epoch + 1,
            lr,
            train_loss: epoch_loss / seen as f64,
            val_loss,
            val_accuracy: val_result.accuracy,
        };
        let better = match &best {
            None => true,
            Some((acc, loss, _)) => {
                stats.val_accuracy > *acc || (stats.val_accuracy == *acc && val_loss < *loss)
            }
        };
        if better {
            best = Some((stats.val_accuracy, val_loss, params.clone()));
        }
        history.push(stats);
    }
    let (_, _, best_params) = best.expect("at least one epoch ran");
    Ok((best_params, history))
}

fn train_step(
    params: &mut ClassifierParams,
    batch: &Tensor,
    labels: &[usize],
    lr: f64,
) -> Result<f64> {
    let trace = forward_trace(params, batch)?;
    let (loss, d_logits) = softmax_cross_entropy(&trace.logits, labels)?;

    let lowest_trainable = params.freeze.iter().position(|f| !f);
    let Some(lowest) = lowest_trainable else {
        return Ok(loss); // everything frozen: evaluate-only pass
    };

    let dense_grads = dense_backward(&trace.pooled, &params.dense_weight, &d_logits)?;
    if !params.freeze[4] {
        sgd_step(params.dense_weight.data_mut(), dense_grads.d_weight.data(), lr)?;
        sgd_step(&mut params.dense_bias, &dense_grads.d_bias, lr)?;
    }
    if lowest >= 4 {
        return Ok(loss);
    }

    let mut upstream = global_avg_pool_backward(&trace.post_act[3], &dense_grads.d_input);
    for i in (lowest..4).rev() {
        let gated = relu_backward(&trace.pre_act[i], &upstream);
        let input = if i == 0 { batch } else { &trace.post_act[i - 1] };
        let mask = GradMask {
            weight: !params.freeze[i],
            input: i > lowest,
        };
        let grads =
            conv2d_backward_masked(input, &params.blocks[i].weight, &params.blocks[i].spec, &gated, mask)?;
        if !params.freeze[i] {
            sgd_step(params.blocks[i].weight.data_mut(), grads.d_weight.data(), lr)?;
            sgd_step(&mut params.blocks[i].bias, &grads.d_bias, lr)?;
        }
        upstream = grads.d_input;
    }
    Ok(loss)
}

// ---------------------------------------------------------------------------
// Persistence: same container as the shifter weights, different magic.
// ---------------------------------------------------------------------------

const MAGIC: &str = "CLASSNET v1";

pub fn classifier_save(params: &ClassifierParams, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    let k = params.classes();
    let mut header = format!("{MAGIC} {k}\n");
    for name in &params.class_names {
        header.push_str(&format!("class {name}\n"));
    }
    let mut offset = 0usize;
    for (i, block) in params.blocks.iter().enumerate() {
        let ws = block.weight.shape();
        header.push_str(&format!(
            "block{}.weight {} {} {} {} {offset}\n",
            i + 1,
            ws[0],
            ws[1],
            ws[2],
            ws[3]
        ));
        offset += block.weight.numel() * 4;
        header.push_str(&format!("block{}.bias {} {offset}\n", i + 1, block.bias.len()));
        offset += block.bias.len() * 4;
    }
    header.push_str(&format!("dense.weight {k} 64 1 1 {offset}\n"));
    offset += params.dense_weight.numel() * 4;
    header.push_str(&format!("dense.bias {k} {offset}\n"));
    header.push_str("DATA\n");

    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(header.as_bytes())
        .map_err(|e| Error::io(path, e))?;
    let mut write_block = |values: &[f32]| -> Result<()> {
        let mut bytes = Vec::with_capacity(values.len() * 4);
        for v in values {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        file.write_all(&bytes).map_err(|e| Error::io(path, e))
    };
    for block in &params.blocks {
        write_block(block.weight.data())?;
        write_block(&block.bias)?;
    }
    write_block(params.dense_weight.data())?;
    write_block(&params.dense_bias)
}

pub fn classifier_load(path: impl AsRef<Path>) -> Result<ClassifierParams> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    let bad = |reason: String| Error::WeightFormat {
        path: path.to_path_buf(),
        reason,
    };
    let arch = |reason: String| Error::ArchitectureMismatch {
        path: path.to_path_buf(),
        reason,
    };

    let data_tag = b"DATA\n";
    let data_start = bytes
        .windows(data_tag.len())
        .position(|w| w == data_tag)
        .ok_or_else(|| bad("missing DATA marker".into()))?;
    let header =
        std::str::from_utf8(&bytes[..data_start]).map_err(|_| bad("header is not UTF-8".into()))?;
    let payload = &bytes[data_start + data_tag.len()..];

    let mut lines = header.lines();
    let first = lines.next().ok_or_else(|| bad("empty header".into()))?;
    let tokens: Vec<&str> = first.split_whitespace().collect();
    if tokens.len() != 3 || tokens[0] != "CLASSNET" || tokens[1] != "v1" {
        return Err(bad(format!("bad magic line {first:?}")));
    }
    let k: usize = tokens[2].parse().map_err(|_| bad("bad class count".into()))?;
    if k < 2 {
        return Err(arch(format!("class count {k} below 2")));
    }
    let mut class_names = Vec::with_capacity(k);
    for _ in 0..k {
        let line = lines.next().ok_or_else(|| bad("missing class line".into()))?;
        let name = line
            .strip_prefix("class ")
            .ok_or_else(|| bad(format!("expected class line, found {line:?}")))?;
        class_names.push(name.to_string());
    }

    let specs = block_specs();
    let read_block = |offset: usize, count: usize| -> Result<Vec<f32>> {
        let end = offset + count * 4;
        if end > payload.len() {
            return Err(bad(format!(
                "data section truncated: need {end} bytes, have {}",
                payload.len()
            )));
        }
        Ok(payload[offset..end]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect())
    };

    let mut expected_offset = 0usize;
    let mut parse_entry = |lines: &mut std::str::Lines<'_>,
                           name: String,
                           dims: Vec<usize>|
     -> Result<Vec<f32>> {
        let line = lines
            .next()
            .ok_or_else(|| bad(format!("missing manifest line for {name}")))?;
        let tokens: Vec<&str> = line.split_whitespace().collect();
        if tokens.is_empty() || tokens[0] != name {
            return Err(arch(format!("expected {name} entry, found {line:?}")));
        }
        if tokens.len() != dims.len() + 2 {
            return Err(bad(format!("malformed manifest line {line:?}")));
        }
        for (t, d) in tokens[1..1 + dims.len()].iter().zip(&dims) {
            let got: usize = t.parse().map_err(|_| bad(format!("bad dimension in {line:?}")))?;
            if got != *d {
                return Err(arch(format!(
                    "{name} has dimension {got}, this architecture requires {d}"
                )));
            }
        }
        let offset: usize = tokens[tokens.len() - 1]
            .parse()
            .map_err(|_| bad(format!("bad offset in {line:?}")))?;
        if offset != expected_offset {
            return Err(bad(format!(
                "{name} offset {offset} does not match declaration order ({expected_offset})"
            )));
        }
        let count: usize = dims.iter().product();
        expected_offset += count * 4;
        read_block(offset, count)
    };

    let mut blocks = Vec::with_capacity(4);
    for (i, spec) in specs.iter().enumerate() {
        let ws = spec.weight_shape();
        let weight_data = parse_entry(
            &mut lines,
            format!("block{}.weight", i + 1),
            ws.to_vec(),
        )?;
        let bias = parse_entry(&mut lines, format!("block{}.bias", i + 1), vec![spec.out_channels])?;
        blocks.push(ConvLayer {
            spec: *spec,
            weight: Tensor::from_vec(ws, weight_data).expect("validated shape"),
            bias,
        });
    }
    let dense_data = parse_entry(&mut lines, "dense.weight".into(), vec![k, 64, 1, 1])?;
    let dense_bias = parse_entry(&mut lines, "dense.bias".into(), vec![k])?;
    if let Some(extra) = lines.next() {
        return Err(arch(format!("unexpected extra manifest entry {extra:?}")));
    }
    if payload.len() != expected_offset {
        return Err(bad(format!(
            "data section has {} bytes, manifest declares {expected_offset}",
            payload.len()
        )));
    }

    Ok(ClassifierParams {
        blocks: blocks.try_into().map_err(|_| bad("wrong block count".into()))?,
        dense_weight: Tensor::from_vec([k, 64, 1, 1], dense_data).expect("validated shape"),
        dense_bias,
        freeze: [false; LAYER_COUNT],
        class_names,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn init_is_deterministic() {
        let a = classifier_init(5, 7).unwrap();
        let b = classifier_init(5, 7).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, classifier_init(5, 8).unwrap());
        assert!(classifier_init(1, 0).is_err());
    }

    #[test]
    fn logits_have_batch_by_classes_shape() {
        let params = classifier_init(4, 0).unwrap();
        let out = classifier_forward(&params, &Tensor::filled([3, 3, 32, 32], 0.4)).unwrap();
        assert_eq!(out.shape(), [3, 4, 1, 1]);
    }

    #[test]
    fn zero_init_gives_uniform_softmax() {
        let mut params = classifier_init(5, 0).unwrap();
        for b in &mut params.blocks {
            b.weight.data_mut().fill(0.0);
            b.bias.fill(0.0);
        }
        params.dense_weight.data_mut().fill(0.0);
        params.dense_bias.fill(0.0);
        let logits = classifier_forward(&params, &Tensor::filled([2, 3, 16, 16], 0.3)).unwrap();
        let (loss, _) = softmax_cross_entropy(&logits, &[0, 3]).unwrap();
        assert!((loss - (5.0f64).ln()).abs() < 1e-6);
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("classifier.weights");
        let mut params = classifier_init(3, 11).unwrap();
        params.class_names = vec!["ant".into(), "bee".into(), "cow".into()];
        // Scramble a few values so the file is not all-init.
        let mut rng = substream(0, "test");
        for v in params.dense_weight.data_mut() {
            *v = rng.gen_range(-1.0..1.0);
        }
        classifier_save(&params, &path).unwrap();
        let back = classifier_load(&path).unwrap();
        assert_eq!(back.class_names, params.class_names);
        assert_eq!(back.dense_weight, params.dense_weight);
        assert_eq!(back.blocks[2].weight, params.blocks[2].weight);
    }

    #[test]
    fn corrupted_class_file_is_graceful() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("classifier.weights");
        classifier_save(&classifier_init(3, 0).unwrap(), &path).unwrap();
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..200]).unwrap();
        assert!(classifier_load(&path).is_err());
    }
}
