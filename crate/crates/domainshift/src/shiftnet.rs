//! The domain-shifting network: a 4-layer convolutional regression model
//! mapping clean images to low-quality ones.
//!
//! Architecture (fixed): 3->64 conv k3 s2 p1, 64->128 conv k3 s2 p1,
//! 128->64 transposed conv k2 s2, 64->3 transposed conv k2 s2; ReLU after
//! the first three layers, sigmoid after the last, no normalization anywhere.
//! For inputs whose height and width divide by 4 the output matches the
//! input size (intermediate spatial sizes H/2, H/4, H/2, H).
//!
//! Training minimizes the mean squared reconstruction error against the
//! paired low-quality images with Adam under a step-decay schedule.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::data::{
    pair_batch_iter, write_image, LabeledImageSet, LoadedPairs, LoadedSet, PairedImageSet,
};
use crate::error::{Error, Result};
use crate::optim::{adam_step, step_decay_lr, AdamState, ScheduleKind, ScheduleSpec};
use crate::rng::substream;
use crate::tensor::{
    conv2d_backward_masked, conv2d_forward, convtranspose2d_backward_masked,
    convtranspose2d_forward, mse_loss, relu, relu_backward, sigmoid, sigmoid_backward, ConvSpec,
    GradMask, Tensor,
};

/// One convolution layer's geometry and parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    pub spec: ConvSpec,
    pub weight: Tensor,
    pub bias: Vec<f32>,
}

impl ConvLayer {
    /// Zero-mean scaled-uniform init with std sqrt(2 / fan_in) (uniform bound
    /// sqrt(6 / fan_in)); biases zero.
    pub fn init(spec: ConvSpec, rng: &mut ChaCha8Rng) -> ConvLayer {
        let bound = (6.0 / spec.fan_in() as f64).sqrt() as f32;
        let ws = spec.weight_shape();
        let data: Vec<f32> = (0..spec.weight_count())
            .map(|_| rng.gen_range(-bound..=bound))
            .collect();
        ConvLayer {
            spec,
            weight: Tensor::from_vec(ws, data).expect("weight shape"),
            bias: vec![0.0; spec.out_channels],
        }
    }

    pub fn forward(&self, input: &Tensor) -> Result<Tensor> {
        if self.spec.transposed {
            convtranspose2d_forward(input, &self.weight, &self.bias, &self.spec)
        } else {
            conv2d_forward(input, &self.weight, &self.bias, &self.spec)
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.weight.numel() + self.bias.len()
    }
}

/// Layer names in declaration order, used by the weight file manifest.
pub const LAYER_NAMES: [&str; 4] = ["down1", "down2", "up1", "up2"];

/// Parameters of the domain-shifting network.
#[derive(Debug, Clone, PartialEq)]
pub struct ShiftNetParams {
    pub layers: [ConvLayer; 4],
    /// Resolution the parameters were trained at (metadata only; the
    /// convolutions apply at any divisible-by-4 size).
    pub trained_hw: (usize, usize),
}

fn layer_specs() -> [ConvSpec; 4] {
    [
        ConvSpec::conv(3, 64, 3, 2, 1),
        ConvSpec::conv(64, 128, 3, 2, 1),
        ConvSpec::transposed(128, 64, 2, 2, 0),
        ConvSpec::transposed(64, 3, 2, 2, 0),
    ]
}

impl ShiftNetParams {
    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(ConvLayer::parameter_count).sum()
    }
}

/// Fresh parameters; deterministic for a fixed seed.
pub fn shifter_init(seed: u64) -> ShiftNetParams {
    let specs = layer_specs();
    let layers = [0, 1, 2, 3].map(|i| {
        let mut rng = substream(seed, &format!("shiftnet/init/{}", LAYER_NAMES[i]));
        ConvLayer::init(specs[i], &mut rng)
    });
    ShiftNetParams {
        layers,
        trained_hw: (64, 64),
    }
}

fn check_divisible(op: &'static str, batch: &Tensor) -> Result<()> {
    let [_, c, h, w] = batch.shape();
    if c != 3 {
        return Err(Error::ShapeMismatch {
            op,
            dim: "channels",
            expected: "3".into(),
            actual: c.to_string(),
        });
    }
    if h % 4 != 0 || w % 4 != 0 || h == 0 || w == 0 {
        return Err(Error::InvalidConfig {
            field: "input resolution",
            reason: format!(
                "height and width must be positive multiples of 4 (the two stride-2 \
                 downsampling layers), got {h}x{w}"
            ),
        });
    }
    Ok(())
}

/// Full forward pass; output shape equals input shape, values in (0, 1).
pub fn shifter_forward(params: &ShiftNetParams, batch: &Tensor) -> Result<Tensor> {
    check_divisible("shifter_forward", batch)?;
    let z1 = params.layers[0].forward(batch)?;
    let a1 = relu(&z1);
    let z2 = params.layers[1].forward(&a1)?;
    let a2 = relu(&z2);
    let z3 = params.layers[2].forward(&a2)?;
    let a3 = relu(&z3);
    let z4 = params.layers[3].forward(&a3)?;
    Ok(sigmoid(&z4))
}

/// Training configuration; the defaults are the reference recipe
/// (100 epochs, batch 32, Adam at 0.01 halved every 30 epochs).
#[derive(Debug, Clone)]
pub struct ShifterTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub schedule: ScheduleSpec,
    pub seed: u64,
    /// Fraction of pairs held out for per-epoch validation loss, in [0, 1).
    pub validation_fraction: f64,
}

impl Default for ShifterTrainConfig {
    fn default() -> Self {
        ShifterTrainConfig {
            epochs: 100,
            batch_size: 32,
            schedule: ScheduleSpec::shifter_default(),
            seed: 0,
            validation_fraction: 0.1,
        }
    }
}

impl ShifterTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::InvalidConfig {
                field: "shifter.epochs",
                reason: "must be >= 1".into(),
            });
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig {
                field: "shifter.batch_size",
                reason: "must be >= 1".into(),
            });
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(Error::InvalidConfig {
                field: "shifter.validation_fraction",
                reason: format!("must be in [0, 1), got {}", self.validation_fraction),
            });
        }
        if self.schedule.kind != ScheduleKind::StepDecay {
            return Err(Error::InvalidConfig {
                field: "shifter.schedule",
                reason: "shifter training uses the step-decay schedule".into(),
            });
        }
        self.schedule.validate()
    }
}

/// Per-epoch losses (epoch is 1-based).
#[derive(Debug, Clone, PartialEq)]
pub struct EpochLoss {
    pub epoch: usize,
    pub train_l2: f64,
    pub val_l2: Option<f64>,
}

struct AdamLayerState {
    weight: AdamState,
    bias: AdamState,
}

fn mean_l2(params: &ShiftNetParams, pairs: &LoadedPairs, batch_size: usize) -> Result<f64> {
    let mut total = 0.0f64;
    let order: Vec<usize> = (0..pairs.len()).collect();
    for chunk in order.chunks(batch_size) {
        let (clean, low) = pairs.gather(chunk);
        let pred = shifter_forward(params, &clean)?;
        let (loss, _) = mse_loss(&pred, &low)?;
        total += loss * chunk.len() as f64;
    }
    Ok(total / pairs.len() as f64)
}

/// Trains the shifter on aligned pairs; deterministic for a fixed seed.
/// Returns the final-epoch parameters and the per-epoch loss history.
pub fn shifter_train(
    pairs: &PairedImageSet,
    config: &ShifterTrainConfig,
) -> Result<(ShiftNetParams, Vec<EpochLoss>)> {
    config.validate()?;
    if pairs.len() < 2 * config.batch_size {
        return Err(Error::DatasetTooSmall {
            reason: format!(
                "shifter training needs at least 2 x batch_size = {} pairs, got {}",
                2 * config.batch_size,
                pairs.len()
            ),
        });
    }
    let loaded = LoadedPairs::load(pairs)?;
    if loaded.h % 4 != 0 || loaded.w % 4 != 0 {
        return Err(Error::InvalidConfig {
            field: "pair resolution",
            reason: format!(
                "pair images must have divisible-by-4 extents, got {}x{}",
                loaded.h, loaded.w
            ),
        });
    }

    // Held-out split for the validation loss curve.
    let mut indices: Vec<usize> = (0..loaded.len()).collect();
    let mut rng = substream(config.seed, "shifter/valsplit");
    indices.shuffle(&mut rng);
    let val_count = (config.validation_fraction * loaded.len() as f64).round() as usize;
    let (val_idx, train_idx) = indices.split_at(val_count);
    let train_pairs = loaded.subset(train_idx);
    let val_pairs = if val_count > 0 {
        Some(loaded.subset(val_idx))
    } else {
        None
    };

    let mut params = shifter_init(config.seed);
    params.trained_hw = (loaded.h, loaded.w);
    let mut opt: Vec<AdamLayerState> = params
        .layers
        .iter()
        .map(|l| AdamLayerState {
            weight: AdamState::new(l.weight.numel()),
            bias: AdamState::new(l.bias.len()),
        })
        .collect();

    let mut history = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let lr = step_decay_lr(&config.schedule, epoch);
        let mut epoch_loss = 0.0f64;
        let mut seen = 0usize;
        for (clean, low) in pair_batch_iter(&train_pairs, config.batch_size, config.seed, epoch) {
            let batch_n = clean.n();
            let loss = train_step(&mut params, &mut opt, &clean, &low, lr)?;
            if !loss.is_finite() {
                return Err(Error::Training {
                    reason: format!("non-finite training loss at epoch {}", epoch + 1),
                });
            }
            epoch_loss += loss * batch_n as f64;
            seen += batch_n;
        }
        let train_l2 = epoch_loss / seen as f64;
        let val_l2 = match &val_pairs {
            Some(v) => Some(mean_l2(&params, v, config.batch_size)?),
            None => None,
        };
        history.push(EpochLoss {
            epoch: epoch + 1,
            train_l2,
            val_l2,
        });
    }
    Ok((params, history))
}

/// One minibatch forward/backward/update; returns the batch loss.
fn train_step(
    params: &mut ShiftNetParams,
    opt: &mut [AdamLayerState],
    clean: &Tensor,
    low: &Tensor,
    lr: f64,
) -> Result<f64> {
    let z1 = params.layers[0].forward(clean)?;
    let a1 = relu(&z1);
    let z2 = params.layers[1].forward(&a1)?;
    let a2 = relu(&z2);
    let z3 = params.layers[2].forward(&a2)?;
    let a3 = relu(&z3);
    let z4 = params.layers[3].forward(&a3)?;
    let pred = sigmoid(&z4);
    let (loss, d_pred) = mse_loss(&pred, low)?;

    let g4 = sigmoid_backward(&z4, &d_pred);
    let grads4 = convtranspose2d_backward_masked(
        &a3,
        &params.layers[3].weight,
        &params.layers[3].spec,
        &g4,
        GradMask::ALL,
    )?;
    let g3 = relu_backward(&z3, &grads4.d_input);
    let grads3 = convtranspose2d_backward_masked(
        &a2,
        &params.layers[2].weight,
        &params.layers[2].spec,
        &g3,
        GradMask::ALL,
    )?;
    let g2 = relu_backward(&z2, &grads3.d_input);
    let grads2 = conv2d_backward_masked(
        &a1,
        &params.layers[1].weight,
        &params.layers[1].spec,
        &g2,
        GradMask::ALL,
    )?;
    let g1 = relu_backward(&z1, &grads2.d_input);
    // The first layer's input gradient is never consumed.
    let grads1 = conv2d_backward_masked(
        clean,
        &params.layers[0].weight,
        &params.layers[0].spec,
        &g1,
        GradMask::WEIGHT_ONLY,
    )?;

    for (i, grads) in [grads1, grads2, grads3, grads4].into_iter().enumerate() {
        adam_step(
            params.layers[i].weight.data_mut(),
            grads.d_weight.data(),
            &mut opt[i].weight,
            lr,
        )?;
        adam_step(
            &mut params.layers[i].bias,
            &grads.d_bias,
            &mut opt[i].bias,
            lr,
        )?;
    }
    Ok(loss)
}

/// Runs every image of a labeled set through the shifter, preserving labels
/// and folder structure under `out_path`.
///
/// While writing, the output directory carries an `.incomplete` marker; it is
/// removed after the last file lands.
pub fn shift_dataset(
    params: &ShiftNetParams,
    images: &LabeledImageSet,
    out_path: impl AsRef<Path>,
) -> Result<LabeledImageSet> {
    if images.is_empty() {
        return Err(Error::DatasetTooSmall {
            reason: "cannot shift an empty dataset".into(),
        });
    }
    let out = out_path.as_ref();
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let marker = out.join(".incomplete");
    fs::write(&marker, b"shift in progress\n").map_err(|e| Error::io(&marker, e))?;

    let loaded = LoadedSet::load(images)?;
    const CHUNK: usize = 32;
    let order: Vec<usize> = (0..loaded.len()).collect();
    for chunk in order.chunks(CHUNK) {
        let (batch, _) = loaded.gather(chunk);
        let shifted = shifter_forward(params, &batch)?;
        for (slot, &idx) in chunk.iter().enumerate() {
            let single = Tensor::from_vec(
                [1, 3, loaded.h, loaded.w],
                shifted.sample(slot).to_vec(),
            )
            .expect("sample shape");
            let rel = &images.entries[idx].0;
            let dst = out.join(rel).with_extension("png");
            write_image(&single, &dst)?;
        }
    }

    fs::remove_file(&marker).map_err(|e| Error::io(&marker, e))?;
    let mut result = images.clone();
    result.root = out.to_path_buf();
    result.entries = images
        .entries
        .iter()
        .map(|(rel, label)| (rel.with_extension("png"), *label))
        .collect();
    result.warnings = Vec::new();
    result.ignored_files = 0;
    Ok(result)
}

// ---------------------------------------------------------------------------
// Persistence
//
// Weight file layout:
//   SHIFTNET v1 <H> <W>\n
//   <name>.weight <d0> <d1> <d2> <d3> <offset>\n   (x4 layers)
//   <name>.bias <len> <offset>\n
//   DATA\n
//   raw little-endian IEEE-754 f32 blocks, in manifest order
// Offsets are byte positions within the data section. Round trips are
// bit-exact.
// ---------------------------------------------------------------------------

const MAGIC: &str = "SHIFTNET v1";

pub fn shifter_save(params: &ShiftNetParams, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    let mut header = format!(
        "{MAGIC} {} {}\n",
        params.trained_hw.0, params.trained_hw.1
    );
    let mut offset = 0usize;
    for (layer, name) in params.layers.iter().zip(LAYER_NAMES) {
        let ws = layer.weight.shape();
        header.push_str(&format!(
            "{name}.weight {} {} {} {} {offset}\n",
            ws[0], ws[1], ws[2], ws[3]
        ));
        offset += layer.weight.numel() * 4;
        header.push_str(&format!("{name}.bias {} {offset}\n", layer.bias.len()));
        offset += layer.bias.len() * 4;
    }
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
    for layer in &params.layers {
        write_block(layer.weight.data())?;
        write_block(&layer.bias)?;
    }
    Ok(())
}

pub fn shifter_load(path: impl AsRef<Path>) -> Result<ShiftNetParams> {
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
    let header = std::str::from_utf8(&bytes[..data_start])
        .map_err(|_| bad("header is not UTF-8".into()))?;
    let payload = &bytes[data_start + data_tag.len()..];

    let mut lines = header.lines();
    let first = lines.next().ok_or_else(|| bad("empty header".into()))?;
    let mut head_tokens = first.split_whitespace();
    let magic = (head_tokens.next(), head_tokens.next());
    if magic != (Some("SHIFTNET"), Some("v1")) {
        return Err(bad(format!("bad magic line {first:?}")));
    }
    let trained_h: usize = head_tokens
        .next()
        .and_then(|t| t.parse().ok())
        .ok_or_else(|| bad("missing trained height".into()))?;
    let trained_w: usize = head_tokens
        .next()
        .and_then(|t| t.parse().ok())
        .ok_or_else(|| bad("missing trained width".into()))?;

    let specs = layer_specs();
    let mut layers: Vec<ConvLayer> = Vec::with_capacity(4);
    let mut expected_offset = 0usize;
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

    for (i, name) in LAYER_NAMES.iter().enumerate() {
        let spec = specs[i];
        let ws = spec.weight_shape();

        let wline = lines
            .next()
            .ok_or_else(|| bad(format!("missing manifest line for {name}.weight")))?;
        let tokens: Vec<&str> = wline.split_whitespace().collect();
        if tokens.len() != 6 || tokens[0] != format!("{name}.weight") {
            return Err(arch(format!(
                "expected {name}.weight manifest entry, found {wline:?}"
            )));
        }
        let dims: Vec<usize> = tokens[1..5]
            .iter()
            .map(|t| t.parse().map_err(|_| bad(format!("bad dimension in {wline:?}"))))
            .collect::<Result<_>>()?;
        if dims != ws {
            return Err(arch(format!(
                "{name}.weight has shape {dims:?}, this architecture requires {ws:?}"
            )));
        }
        let w_offset: usize = tokens[5]
            .parse()
            .map_err(|_| bad(format!("bad offset in {wline:?}")))?;
        if w_offset != expected_offset {
            return Err(bad(format!(
                "{name}.weight offset {w_offset} does not match declaration order ({expected_offset})"
            )));
        }
        expected_offset += spec.weight_count() * 4;

        let bline = lines
            .next()
            .ok_or_else(|| bad(format!("missing manifest line for {name}.bias")))?;
        let tokens: Vec<&str> = bline.split_whitespace().collect();
        if tokens.len() != 3 || tokens[0] != format!("{name}.bias") {
            return Err(arch(format!(
                "expected {name}.bias manifest entry, found {bline:?}"
            )));
        }
        let blen: usize = tokens[1]
            .parse()
            .map_err(|_| bad(format!("bad length in {bline:?}")))?;
        if blen != spec.out_channels {
            return Err(arch(format!(
                "{name}.bias has length {blen}, this architecture requires {}",
                spec.out_channels
            )));
        }
        let b_offset: usize = tokens[2]
            .parse()
            .map_err(|_| bad(format!("bad offset in {bline:?}")))?;
        if b_offset != expected_offset {
            return Err(bad(format!(
                "{name}.bias offset {b_offset} does not match declaration order ({expected_offset})"
            )));
        }
        expected_offset += blen * 4;

        let weight = Tensor::from_vec(ws, read_block(w_offset, spec.weight_count())?)
            .expect("validated shape");
        let bias = read_block(b_offset, blen)?;
        layers.push(ConvLayer { spec, weight, bias });
    }
    if let Some(extra) = lines.next() {
        return Err(arch(format!("unexpected extra manifest entry {extra:?}")));
    }
    if payload.len() != expected_offset {
        return Err(bad(format!(
            "data section has {} bytes, manifest declares {expected_offset}",
            payload.len()
        )));
    }

    Ok(ShiftNetParams {
        layers: layers.try_into().map_err(|_| bad("wrong layer count".into()))?,
        trained_hw: (trained_h, trained_w),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parameter_count_is_exact() {
        // (3*64*9+64) + (64*128*9+128) + (128*64*4+64) + (64*3*4+3)
        let params = shifter_init(0);
        assert_eq!(params.parameter_count(), 109_251);
    }

    #[test]
    fn init_is_deterministic_and_seed_sensitive() {
        let a = shifter_init(42);
        let b = shifter_init(42);
        let c = shifter_init(43);
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn init_std_matches_fan_in_scale() {
        let params = shifter_init(1);
        for layer in &params.layers {
            let target = (2.0 / layer.spec.fan_in() as f64).sqrt();
            let vals = layer.weight.data();
            let mean: f64 = vals.iter().map(|&v| v as f64).sum::<f64>() / vals.len() as f64;
            let var: f64 = vals
                .iter()
                .map(|&v| (v as f64 - mean).powi(2))
                .sum::<f64>()
                / vals.len() as f64;
            let std = var.sqrt();
            assert!(
                (std - target).abs() / target < 0.2,
                "layer {:?}: std {std}, target {target}",
                layer.spec
            );
        }
    }

    #[test]
    fn forward_shapes_and_range() {
        let params = shifter_init(3);
        let input = Tensor::filled([2, 3, 64, 64], 0.5);
        let out = shifter_forward(&params, &input).unwrap();
        assert_eq!(out.shape(), [2, 3, 64, 64]);
        assert!(out.data().iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn forward_intermediate_sizes() {
        let specs = layer_specs();
        let mut hw = (64usize, 64usize);
        let mut sizes = Vec::new();
        for spec in &specs {
            hw = spec.out_hw(hw.0, hw.1).unwrap();
            sizes.push(hw.0);
        }
        assert_eq!(sizes, vec![32, 16, 32, 64]);
    }

    #[test]
    fn forward_rejects_indivisible_input() {
        let params = shifter_init(0);
        let err = shifter_forward(&params, &Tensor::zeros(1, 3, 30, 64)).unwrap_err();
        assert!(err.to_string().contains("multiples of 4"));
    }

    #[test]
    fn zero_params_give_constant_half() {
        let mut params = shifter_init(0);
        for layer in &mut params.layers {
            layer.weight.data_mut().fill(0.0);
            layer.bias.fill(0.0);
        }
        let out = shifter_forward(&params, &Tensor::filled([1, 3, 8, 8], 0.3)).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn save_load_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("shifter.weights");
        let params = shifter_init(99);
        shifter_save(&params, &path).unwrap();
        let back = shifter_load(&path).unwrap();
        assert_eq!(params, back);
    }

    #[test]
    fn truncated_weight_file_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("shifter.weights");
        shifter_save(&shifter_init(1), &path).unwrap();
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() - 100]).unwrap();
        assert!(matches!(
            shifter_load(&path),
            Err(Error::WeightFormat { .. })
        ));
    }

    #[test]
    fn wrong_architecture_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("shifter.weights");
        shifter_save(&shifter_init(1), &path).unwrap();
        let text = fs::read(&path).unwrap();
        // Corrupt the manifest's channel chain.
        let patched = String::from_utf8_lossy(&text).replace("down1.weight 64 3 3 3", "down1.weight 32 3 3 3");
        fs::write(&path, patched).unwrap();
        assert!(matches!(
            shifter_load(&path),
            Err(Error::ArchitectureMismatch { .. })
        ));
    }
}
