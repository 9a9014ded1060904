//! The end-to-end comparison: train a domain shifter on paired data, shift
//! the clean training set, train four classifiers and evaluate them on clean
//! and degraded test sets.
//!
//! Regimes:
//! - source-supervised: clean training data only
//! - ours-zero-shot: clean + shifted data; the shifter never saw the task
//!   categories (its pairs come from a disjoint image family)
//! - ours-unsupervised: clean + shifted data; the shifter's pairs also
//!   include unlabeled task-category images
//! - target-supervised: degraded training data (the oracle upper bound)
//!
//! Every stage writes its artifacts under the output directory and all
//! randomness derives from the one experiment seed, so a rerun reproduces
//! every file byte for byte.

use std::fs;
use std::path::{Path, PathBuf};

use crate::camsim::{degrade_set, make_paired_set, sample_entries, DegradationConfig};
use crate::classify::{
    classifier_save, classifier_train, evaluate_loaded, ClassifierParams, ClassifierTrainConfig,
    EpochStats, EvalResult,
};
use crate::data::{
    gen_shapes_dataset, gen_shapes_families, scan_folder, split, write_manifest, LabeledImageSet,
    LoadedSet, PairedImageSet, SplitSpec, FAMILY_NAMES,
};
use crate::error::{Error, Result};
use crate::rng::child_seed;
use crate::shiftnet::{shift_dataset, shifter_save, shifter_train, EpochLoss, ShifterTrainConfig};

pub const REGIME_SOURCE: &str = "source-supervised";
pub const REGIME_OURS_UNSUPERVISED: &str = "ours-unsupervised";
pub const REGIME_OURS_ZERO_SHOT: &str = "ours-zero-shot";
pub const REGIME_TARGET: &str = "target-supervised";

/// Which pair-pool policies to run the "ours" regime with.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PairPolicy {
    /// Pairs exclude the classification categories entirely.
    ZeroShot,
    /// Pairs additionally include unlabeled task-category images.
    Unsupervised,
}

/// Where the task dataset comes from.
#[derive(Debug, Clone)]
pub enum DataSource {
    /// Procedural families rendered under the output directory.
    Generated {
        classes: usize,
        per_class: usize,
        resolution: usize,
    },
    /// A user-supplied class-per-folder tree, plus a second tree whose images
    /// feed pair generation (task classes are excluded from it for the
    /// zero-shot policy).
    Folder {
        root: PathBuf,
        pair_root: PathBuf,
    },
}

/// Full experiment configuration.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub data: DataSource,
    pub split_fractions: (f64, f64, f64),
    pub stratified: bool,
    pub camera: DegradationConfig,
    pub shifter: ShifterTrainConfig,
    pub classifier: ClassifierTrainConfig,
    /// Number of disjoint-family images used to build pairs.
    pub pair_images: usize,
    /// Extra task-category images added to the unsupervised pair pool.
    pub unsup_extra: usize,
    pub policies: Vec<PairPolicy>,
    /// Flat key=value text embedded into the report for reproducibility;
    /// the CLI fills this with the resolved configuration.
    pub resolved_config: String,
}

impl ExperimentConfig {
    pub fn new(out_dir: impl Into<PathBuf>, seed: u64) -> Self {
        ExperimentConfig {
            seed,
            out_dir: out_dir.into(),
            data: DataSource::Generated {
                classes: 5,
                per_class: 400,
                resolution: 64,
            },
            split_fractions: (0.6, 0.2, 0.2),
            stratified: true,
            camera: DegradationConfig::default(),
            shifter: ShifterTrainConfig::default(),
            classifier: ClassifierTrainConfig::default(),
            pair_images: 500,
            unsup_extra: 100,
            policies: vec![PairPolicy::ZeroShot, PairPolicy::Unsupervised],
            resolved_config: String::new(),
        }
    }
}

/// One regime's accuracies on the two test domains.
#[derive(Debug, Clone, PartialEq)]
pub struct RegimeResult {
    pub regime: String,
    pub clean_acc: f64,
    pub degraded_acc: f64,
}

/// The four-row comparison for one run.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    pub rows: Vec<RegimeResult>,
    pub metadata: Vec<(String, String)>,
}

impl ExperimentReport {
    pub fn row(&self, regime: &str) -> Option<&RegimeResult> {
        self.rows.iter().find(|r| r.regime == regime)
    }

    /// Human-readable aligned table plus metadata.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "{:<22} {:>12} {:>14}\n",
            "approach", "clean test", "degraded test"
        ));
        out.push_str(&format!("{}\n", "-".repeat(50)));
        for row in &self.rows {
            out.push_str(&format!(
                "{:<22} {:>11.2}% {:>13.2}%\n",
                row.regime,
                row.clean_acc * 100.0,
                row.degraded_acc * 100.0
            ));
        }
        if !self.metadata.is_empty() {
            out.push('\n');
            for (key, value) in &self.metadata {
                out.push_str(&format!("{key}: {value}\n"));
            }
        }
        out
    }

    /// Machine-readable rows: `regime,clean_acc,degraded_acc`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("regime,clean_acc,degraded_acc\n");
        for row in &self.rows {
            out.push_str(&format!(
                "{},{:.6},{:.6}\n",
                row.regime, row.clean_acc, row.degraded_acc
            ));
        }
        out
    }

    /// Checks the headline ordering on the degraded test domain:
    /// ours-zero-shot beats source-supervised by at least 5 points and
    /// target-supervised is no more than 3 points above ours-zero-shot.
    /// Returns None when the required rows are missing.
    pub fn trend_verdict(&self) -> Option<(bool, String)> {
        let source = self.row(REGIME_SOURCE)?;
        let zs = self.row(REGIME_OURS_ZERO_SHOT)?;
        let target = self.row(REGIME_TARGET)?;
        let gain = (zs.degraded_acc - source.degraded_acc) * 100.0;
        let oracle_gap = (target.degraded_acc - zs.degraded_acc) * 100.0;
        let pass = gain >= 5.0 && oracle_gap <= 3.0;
        Some((
            pass,
            format!(
                "degraded-test gain over source-supervised: {gain:+.2} points \
                 (need >= +5.00); gap to target-supervised: {oracle_gap:+.2} points \
                 (need <= +3.00)"
            ),
        ))
    }
}

fn stage<T>(name: &'static str, r: Result<T>) -> Result<T> {
    r.map_err(|e| e.in_stage(name))
}

fn progress(msg: &str) {
    eprintln!("[experiment] {msg}");
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn shifter_log_csv(history: &[EpochLoss]) -> String {
    let mut out = String::from("epoch,train_l2,val_l2\n");
    for row in history {
        match row.val_l2 {
            Some(v) => out.push_str(&format!("{},{},{}\n", row.epoch, row.train_l2, v)),
            None => out.push_str(&format!("{},{},\n", row.epoch, row.train_l2)),
        }
    }
    out
}

fn classifier_log_csv(history: &[EpochStats]) -> String {
    let mut out = String::from("epoch,lr,train_loss,val_loss,val_acc\n");
    for row in history {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            row.epoch, row.lr, row.train_loss, row.val_loss, row.val_accuracy
        ));
    }
    out
}

/// Copies the files of several sets (sharing one vocabulary) into one folder,
/// prefixing file names per source so clean and shifted copies can coexist.
fn merge_to_folder(
    sources: &[(&LabeledImageSet, &str)],
    out: &Path,
) -> Result<LabeledImageSet> {
    let (first, _) = sources.first().expect("at least one source");
    for (set, _) in sources {
        if set.class_names != first.class_names {
            return Err(Error::VocabularyMismatch {
                detail: format!("{:?} vs {:?}", first.class_names, set.class_names),
            });
        }
    }
    for (set, prefix) in sources {
        for (rel, _) in &set.entries {
            let file_name = rel
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_default();
            let mut dst_rel = rel.clone();
            dst_rel.set_file_name(format!("{prefix}_{file_name}"));
            let dst = out.join(&dst_rel);
            if let Some(parent) = dst.parent() {
                fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
            }
            fs::copy(set.root.join(rel), &dst).map_err(|e| Error::io(&dst, e))?;
        }
    }
    scan_folder(out)
}

struct TrainedRegime {
    name: &'static str,
    params: ClassifierParams,
}

/// Runs the complete protocol and returns the accuracy table. See the module
/// docs for the regime definitions; `cfg.policies` selects which "ours" rows
/// run (source- and target-supervised always do).
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    let out = &cfg.out_dir;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;

    // Task dataset.
    progress("stage dataset: preparing task images");
    let clean_all = stage(
        "dataset",
        match &cfg.data {
            DataSource::Generated {
                classes,
                per_class,
                resolution,
            } => gen_shapes_dataset(
                out.join("data/clean"),
                *classes,
                *per_class,
                *resolution,
                child_seed(cfg.seed, "data/task"),
            ),
            DataSource::Folder { root, .. } => scan_folder(root),
        },
    )?;
    let classes = clean_all.class_names.len();
    if classes < 2 {
        return Err(Error::DatasetTooSmall {
            reason: format!("experiment needs >= 2 classes, found {classes}"),
        }
        .in_stage("dataset"));
    }

    // Splits.
    progress("stage split: train/val/test partition");
    let split_spec = SplitSpec {
        fractions: cfg.split_fractions,
        seed: child_seed(cfg.seed, "split"),
        stratified: cfg.stratified,
    };
    let (train, val, test) = stage("split", split(&clean_all, &split_spec))?;
    stage("split", write_manifest(&train, out.join("splits/train.txt")))?;
    stage("split", write_manifest(&val, out.join("splits/val.txt")))?;
    stage("split", write_manifest(&test, out.join("splits/test.txt")))?;
    if val.is_empty() || test.is_empty() {
        return Err(Error::DatasetTooSmall {
            reason: "experiment needs non-empty validation and test splits".into(),
        }
        .in_stage("split"));
    }

    // Degraded counterparts (the "real camera" side).
    progress("stage degrade: building degraded train/val/test sets");
    let degraded_test = stage(
        "degrade",
        degrade_set(
            &test,
            &cfg.camera,
            child_seed(cfg.seed, "camera/test"),
            out.join("data/degraded_test"),
        ),
    )?;
    let degraded_train = stage(
        "degrade",
        degrade_set(
            &train,
            &cfg.camera,
            child_seed(cfg.seed, "camera/train"),
            out.join("data/degraded_train"),
        ),
    )?;
    let degraded_val = stage(
        "degrade",
        degrade_set(
            &val,
            &cfg.camera,
            child_seed(cfg.seed, "camera/val"),
            out.join("data/degraded_val"),
        ),
    )?;

    // Pair pools.
    let want_zs = cfg.policies.contains(&PairPolicy::ZeroShot);
    let want_unsup = cfg.policies.contains(&PairPolicy::Unsupervised);
    let mut zs_pairs: Option<PairedImageSet> = None;
    let mut unsup_pairs: Option<PairedImageSet> = None;
    if want_zs || want_unsup {
        progress("stage pairs: building aligned clean/degraded pairs");
        let pair_source = stage("pairs", build_pair_source(cfg, &clean_all, out))?;
        let pairs = stage(
            "pairs",
            make_paired_set(
                &pair_source,
                &cfg.camera,
                child_seed(cfg.seed, "camera/pairs/base"),
                out.join("pairs/base"),
            ),
        )?;
        if want_unsup {
            let extra = stage(
                "pairs",
                sample_entries(&train, cfg.unsup_extra, child_seed(cfg.seed, "pairs/unsup-sample")),
            )?;
            let extra_pairs = stage(
                "pairs",
                make_paired_set(
                    &extra,
                    &cfg.camera,
                    child_seed(cfg.seed, "camera/pairs/unsup-extra"),
                    out.join("pairs/unsup_extra"),
                ),
            )?;
            unsup_pairs = Some(stage("pairs", pairs.concat(&extra_pairs))?);
        }
        if want_zs {
            zs_pairs = Some(pairs);
        }
    }

    // Shifters and shifted datasets, per policy.
    let mut shifted: Vec<(&'static str, PairPolicy, LabeledImageSet, LabeledImageSet)> =
        Vec::new();
    for (policy, pairs, tag, stage_name) in [
        (
            PairPolicy::ZeroShot,
            &zs_pairs,
            "zero_shot",
            "shifter-zero-shot",
        ),
        (
            PairPolicy::Unsupervised,
            &unsup_pairs,
            "unsupervised",
            "shifter-unsupervised",
        ),
    ] {
        let Some(pairs) = pairs else { continue };
        if !cfg.policies.contains(&policy) {
            continue;
        }
        progress(&format!(
            "stage {stage_name}: training shifter on {} pairs",
            pairs.len()
        ));
        let mut shifter_cfg = cfg.shifter.clone();
        shifter_cfg.seed = child_seed(cfg.seed, &format!("shifter/{tag}"));
        let (params, history) = stage(stage_name, shifter_train(pairs, &shifter_cfg))?;
        stage(
            stage_name,
            shifter_save(&params, out.join(format!("models/shifter_{tag}.weights"))),
        )?;
        stage(
            stage_name,
            write_text(
                &out.join(format!("logs/shifter_{tag}.csv")),
                &shifter_log_csv(&history),
            ),
        )?;

        progress(&format!("stage shift-{tag}: shifting train and val sets"));
        let shift_stage: &'static str = match policy {
            PairPolicy::ZeroShot => "shift-zero-shot",
            PairPolicy::Unsupervised => "shift-unsupervised",
        };
        let strain = stage(
            shift_stage,
            shift_dataset(&params, &train, out.join(format!("data/shifted_train_{tag}"))),
        )?;
        let sval = stage(
            shift_stage,
            shift_dataset(&params, &val, out.join(format!("data/shifted_val_{tag}"))),
        )?;
        shifted.push((
            match policy {
                PairPolicy::ZeroShot => REGIME_OURS_ZERO_SHOT,
                PairPolicy::Unsupervised => REGIME_OURS_UNSUPERVISED,
            },
            policy,
            strain,
            sval,
        ));
    }

    // Four classifiers.
    let mut trained: Vec<TrainedRegime> = Vec::new();
    {
        progress("stage classifier-source-supervised: training");
        let mut c = cfg.classifier.clone();
        c.seed = child_seed(cfg.seed, "classifier/source-supervised");
        let (params, history) = stage(
            "classifier-source-supervised",
            classifier_train(&[&train], &val, &c),
        )?;
        save_regime(out, REGIME_SOURCE, &params, &history)?;
        trained.push(TrainedRegime {
            name: REGIME_SOURCE,
            params,
        });
    }
    for (regime, policy, strain, sval) in &shifted {
        let stage_name: &'static str = match policy {
            PairPolicy::ZeroShot => "classifier-ours-zero-shot",
            PairPolicy::Unsupervised => "classifier-ours-unsupervised",
        };
        progress(&format!("stage {stage_name}: training on clean + shifted data"));
        let tag = match policy {
            PairPolicy::ZeroShot => "zero_shot",
            PairPolicy::Unsupervised => "unsupervised",
        };
        let mixed_val = stage(
            stage_name,
            merge_to_folder(
                &[(&val, "clean"), (sval, "shifted")],
                &out.join(format!("data/val_mix_{tag}")),
            ),
        )?;
        let mut c = cfg.classifier.clone();
        c.seed = child_seed(cfg.seed, &format!("classifier/{regime}"));
        let (params, history) = stage(
            stage_name,
            classifier_train(&[&train, strain], &mixed_val, &c),
        )?;
        save_regime(out, regime, &params, &history)?;
        trained.push(TrainedRegime {
            name: regime,
            params,
        });
    }
    {
        progress("stage classifier-target-supervised: training");
        let mut c = cfg.classifier.clone();
        c.seed = child_seed(cfg.seed, "classifier/target-supervised");
        let (params, history) = stage(
            "classifier-target-supervised",
            classifier_train(&[&degraded_train], &degraded_val, &c),
        )?;
        save_regime(out, REGIME_TARGET, &params, &history)?;
        trained.push(TrainedRegime {
            name: REGIME_TARGET,
            params,
        });
    }

    // Evaluation on both test domains.
    progress("stage evaluate: clean and degraded test accuracy");
    let clean_test_loaded = stage("evaluate", LoadedSet::load(&test))?;
    let degraded_test_loaded = stage("evaluate", LoadedSet::load(&degraded_test))?;
    let order = [
        REGIME_SOURCE,
        REGIME_OURS_UNSUPERVISED,
        REGIME_OURS_ZERO_SHOT,
        REGIME_TARGET,
    ];
    let mut rows = Vec::new();
    for name in order {
        let Some(regime) = trained.iter().find(|t| t.name == name) else {
            continue;
        };
        let clean_eval = stage("evaluate", evaluate_loaded(&regime.params, &clean_test_loaded))?;
        let degraded_eval = stage(
            "evaluate",
            evaluate_loaded(&regime.params, &degraded_test_loaded),
        )?;
        save_confusion(out, name, "clean", &clean_eval, &regime.params)?;
        save_confusion(out, name, "degraded", &degraded_eval, &regime.params)?;
        rows.push(RegimeResult {
            regime: name.to_string(),
            clean_acc: clean_eval.accuracy,
            degraded_acc: degraded_eval.accuracy,
        });
    }

    let resolution = {
        let loaded = &clean_test_loaded;
        format!("{}x{}", loaded.h, loaded.w)
    };
    let metadata = vec![
        ("seed".to_string(), cfg.seed.to_string()),
        ("classes".to_string(), clean_all.class_names.join(",")),
        ("resolution".to_string(), resolution),
        (
            "split_sizes".to_string(),
            format!("{}/{}/{}", train.len(), val.len(), test.len()),
        ),
        (
            "pairs_zero_shot".to_string(),
            zs_pairs.as_ref().map(|p| p.len()).unwrap_or(0).to_string(),
        ),
        (
            "pairs_unsupervised".to_string(),
            unsup_pairs.as_ref().map(|p| p.len()).unwrap_or(0).to_string(),
        ),
    ];
    let report = ExperimentReport { rows, metadata };

    // Emit the table and CSV next to the artifacts.
    let mut table = report.to_table();
    if !cfg.resolved_config.is_empty() {
        table.push_str("\n# configuration\n");
        table.push_str(&cfg.resolved_config);
    }
    stage("report", write_text(&out.join("report.txt"), &table))?;
    stage("report", write_text(&out.join("report.csv"), &report.to_csv()))?;
    progress("done");
    Ok(report)
}

fn save_regime(
    out: &Path,
    regime: &str,
    params: &ClassifierParams,
    history: &[EpochStats],
) -> Result<()> {
    let tag = regime.replace('-', "_");
    let stage_name = "classifier-save";
    stage(
        stage_name,
        classifier_save(params, out.join(format!("models/classifier_{tag}.weights"))),
    )?;
    stage(
        stage_name,
        write_text(
            &out.join(format!("logs/classifier_{tag}.csv")),
            &classifier_log_csv(history),
        ),
    )
}

fn save_confusion(
    out: &Path,
    regime: &str,
    domain: &str,
    eval: &EvalResult,
    params: &ClassifierParams,
) -> Result<()> {
    let tag = regime.replace('-', "_");
    write_text(
        &out.join(format!("reports/confusion_{tag}_{domain}.csv")),
        &eval.confusion_csv(&params.class_names),
    )
    .map_err(|e| e.in_stage("evaluate"))
}

/// Builds the unlabeled image pool pairs are made from. Generated data uses
/// the families not claimed by the task; folder data uses the user's pair
/// tree with task-named classes excluded.
fn build_pair_source(
    cfg: &ExperimentConfig,
    clean_all: &LabeledImageSet,
    out: &Path,
) -> Result<LabeledImageSet> {
    match &cfg.data {
        DataSource::Generated { classes, resolution, .. } => {
            let families: Vec<usize> = (*classes..FAMILY_NAMES.len()).collect();
            if families.is_empty() {
                return Err(Error::InvalidConfig {
                    field: "data.classes",
                    reason: format!(
                        "all {} families are used by the task; none remain for \
                         disjoint pair generation",
                        FAMILY_NAMES.len()
                    ),
                });
            }
            let per_family = cfg.pair_images.div_ceil(families.len());
            let mut pool = gen_shapes_families(
                out.join("data/pair_source"),
                &families,
                per_family,
                *resolution,
                child_seed(cfg.seed, "data/pairs"),
            )?;
            pool.entries.truncate(cfg.pair_images);
            Ok(pool)
        }
        DataSource::Folder { pair_root, .. } => {
            let pool = scan_folder(pair_root)?;
            let overlap: Vec<String> = pool
                .class_names
                .iter()
                .filter(|n| clean_all.class_names.contains(n))
                .cloned()
                .collect();
            let mut pool = if overlap.is_empty() {
                pool
            } else {
                crate::data::exclude_classes(&pool, &overlap)?
            };
            if pool.len() > cfg.pair_images {
                pool = sample_entries(&pool, cfg.pair_images, child_seed(cfg.seed, "pairs/pool-sample"))?;
            }
            Ok(pool)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report_with(rows: &[(&str, f64, f64)]) -> ExperimentReport {
        ExperimentReport {
            rows: rows
                .iter()
                .map(|(n, c, d)| RegimeResult {
                    regime: n.to_string(),
                    clean_acc: *c,
                    degraded_acc: *d,
                })
                .collect(),
            metadata: vec![],
        }
    }

    #[test]
    fn csv_has_header_and_rows() {
        let r = report_with(&[(REGIME_SOURCE, 0.9, 0.7), (REGIME_TARGET, 0.88, 0.86)]);
        let csv = r.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "regime,clean_acc,degraded_acc");
        assert_eq!(lines.len(), 3);
        assert!(lines[1].starts_with("source-supervised,0.9"));
    }

    #[test]
    fn trend_verdict_reads_the_gaps() {
        let pass = report_with(&[
            (REGIME_SOURCE, 0.95, 0.70),
            (REGIME_OURS_ZERO_SHOT, 0.95, 0.85),
            (REGIME_TARGET, 0.93, 0.87),
        ]);
        assert!(pass.trend_verdict().unwrap().0);

        let too_small_gain = report_with(&[
            (REGIME_SOURCE, 0.95, 0.80),
            (REGIME_OURS_ZERO_SHOT, 0.95, 0.82),
            (REGIME_TARGET, 0.93, 0.84),
        ]);
        assert!(!too_small_gain.trend_verdict().unwrap().0);

        let missing = report_with(&[(REGIME_SOURCE, 0.9, 0.8)]);
        assert!(missing.trend_verdict().is_none());
    }

    #[test]
    fn table_formats_percentages() {
        let r = report_with(&[(REGIME_SOURCE, 0.8697, 0.5)]);
        let table = r.to_table();
        assert!(table.contains("86.97%"), "{table}");
    }
}
