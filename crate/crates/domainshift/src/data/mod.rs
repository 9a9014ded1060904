//! Datasets on disk and in memory: folder scanning, deterministic splits,
//! class exclusion, the procedural generator, and seeded batch iteration.
//!
//! On-disk layouts:
//! - labeled data: `<root>/<class_name>/<file>` (PNG or PPM)
//! - paired data: `<root>/clean/<file>` + `<root>/low/<file>`, matching names
//! - split manifests: plain text, one relative path per line

mod batch;
mod imageio;
mod shapes;

pub use batch::{batch_iter, pair_batch_iter, BatchIter, LoadedPairs, LoadedSet, PairBatchIter};
pub use imageio::{is_image_file, load_image, write_image};
pub(crate) use imageio::{
    chw_u8_to_rgb8, decode_rgb8, encode_rgb8, quantize_channel, rgb8_to_tensor, tensor_to_rgb8,
    Rgb8,
};
pub use shapes::FAMILY_NAMES;

use std::collections::BTreeSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::rng::{child_seed, substream};

/// Labeled images under one root folder.
#[derive(Debug, Clone)]
pub struct LabeledImageSet {
    pub root: PathBuf,
    /// (path relative to root, class label index), lexicographic order.
    pub entries: Vec<(PathBuf, usize)>,
    /// Ordered label vocabulary.
    pub class_names: Vec<String>,
    /// Classes removed by `exclude_classes`, for provenance.
    pub excluded_classes: Vec<String>,
    /// Non-fatal findings from scanning (e.g. empty class folders).
    pub warnings: Vec<String>,
    /// Non-image files skipped while scanning.
    pub ignored_files: usize,
}

impl LabeledImageSet {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn class_name(&self, label: usize) -> &str {
        &self.class_names[label]
    }

    /// Absolute path of entry `i`.
    pub fn path(&self, i: usize) -> PathBuf {
        self.root.join(&self.entries[i].0)
    }

    /// Number of entries per class.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.class_names.len()];
        for &(_, label) in &self.entries {
            counts[label] += 1;
        }
        counts
    }
}

/// Aligned (clean, low-quality) image pairs with no labels. On disk such a
/// set lives as mirrored `clean/` and `low/` directories with identical file
/// names; in memory each entry carries both paths so pools can be merged.
#[derive(Debug, Clone)]
pub struct PairedImageSet {
    /// (clean path, low path), positional and total.
    pub entries: Vec<(PathBuf, PathBuf)>,
    /// Common (height, width) of every image in the set.
    pub resolution: (usize, usize),
}

impl PairedImageSet {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Concatenates two pair pools; both must share one resolution.
    pub fn concat(&self, other: &PairedImageSet) -> Result<PairedImageSet> {
        if self.resolution != other.resolution {
            return Err(Error::ShapeMismatch {
                op: "PairedImageSet::concat",
                dim: "resolution",
                expected: format!("{:?}", self.resolution),
                actual: format!("{:?}", other.resolution),
            });
        }
        let mut merged = self.clone();
        merged.entries.extend(other.entries.iter().cloned());
        Ok(merged)
    }
}

/// Reads a paired set from its on-disk layout: `<root>/clean/<file>` and
/// `<root>/low/<file>` with matching file names.
pub fn scan_pairs(root: impl AsRef<Path>) -> Result<PairedImageSet> {
    let root = root.as_ref();
    let clean_dir = root.join("clean");
    let low_dir = root.join("low");
    let mut names = Vec::new();
    for entry in fs::read_dir(&clean_dir).map_err(|e| Error::io(&clean_dir, e))? {
        let entry = entry.map_err(|e| Error::io(&clean_dir, e))?;
        let path = entry.path();
        if path.is_file() && is_image_file(&path) {
            names.push(entry.file_name());
        }
    }
    names.sort();
    if names.is_empty() {
        return Err(Error::DatasetTooSmall {
            reason: format!("no images under {}", clean_dir.display()),
        });
    }
    let mut entries = Vec::with_capacity(names.len());
    let mut resolution = None;
    for name in names {
        let clean = clean_dir.join(&name);
        let low = low_dir.join(&name);
        if !low.is_file() {
            return Err(Error::Io {
                path: low,
                source: std::io::Error::new(std::io::ErrorKind::NotFound, "missing low-side pair"),
            });
        }
        let img = decode_rgb8(&clean)?;
        let hw = (img.height, img.width);
        match resolution {
            None => resolution = Some(hw),
            Some(r) if r != hw => {
                return Err(Error::ShapeMismatch {
                    op: "scan_pairs",
                    dim: "resolution",
                    expected: format!("{:?}", r),
                    actual: format!("{:?} ({})", hw, clean.display()),
                })
            }
            _ => {}
        }
        entries.push((clean, low));
    }
    Ok(PairedImageSet {
        entries,
        resolution: resolution.expect("non-empty set"),
    })
}

/// Split fractions, seed and stratification flag.
#[derive(Debug, Clone, Copy)]
pub struct SplitSpec {
    pub fractions: (f64, f64, f64),
    pub seed: u64,
    pub stratified: bool,
}

impl SplitSpec {
    pub fn new(train: f64, val: f64, test: f64, seed: u64) -> Self {
        SplitSpec {
            fractions: (train, val, test),
            seed,
            stratified: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (a, b, c) = self.fractions;
        for (name, f) in [("train", a), ("val", b), ("test", c)] {
            if !(0.0..=1.0).contains(&f) {
                return Err(Error::InvalidConfig {
                    field: "split fraction",
                    reason: format!("{name} fraction {f} outside [0, 1]"),
                });
            }
        }
        if (a + b + c - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidConfig {
                field: "split fractions",
                reason: format!("must sum to 1, got {}", a + b + c),
            });
        }
        Ok(())
    }

    fn nonzero_parts(&self) -> usize {
        [self.fractions.0, self.fractions.1, self.fractions.2]
            .iter()
            .filter(|&&f| f > 0.0)
            .count()
    }
}

/// Scans `<root>/<class>/<file>`: class names are the sorted subdirectory
/// names, entries are sorted relative paths. Non-image files are counted and
/// skipped; empty class folders produce a warning but keep their label.
pub fn scan_folder(root: impl AsRef<Path>) -> Result<LabeledImageSet> {
    let root = root.as_ref();
    let mut class_names = Vec::new();
    let dir = fs::read_dir(root).map_err(|e| Error::io(root, e))?;
    for entry in dir {
        let entry = entry.map_err(|e| Error::io(root, e))?;
        let path = entry.path();
        if path.is_dir() {
            class_names.push(entry.file_name().to_string_lossy().into_owned());
        }
    }
    class_names.sort();
    if class_names.is_empty() {
        return Err(Error::NoClasses {
            root: root.to_path_buf(),
        });
    }

    let mut entries = Vec::new();
    let mut warnings = Vec::new();
    let mut ignored = 0usize;
    for (label, name) in class_names.iter().enumerate() {
        let class_dir = root.join(name);
        let mut files = Vec::new();
        collect_images(&class_dir, &mut files, &mut ignored)?;
        files.sort();
        if files.is_empty() {
            warnings.push(format!("class folder {name:?} holds no images"));
        }
        for f in files {
            let rel = f.strip_prefix(root).expect("file under root").to_path_buf();
            entries.push((rel, label));
        }
    }
    entries.sort();
    Ok(LabeledImageSet {
        root: root.to_path_buf(),
        entries,
        class_names,
        excluded_classes: Vec::new(),
        warnings,
        ignored_files: ignored,
    })
}

fn collect_images(dir: &Path, files: &mut Vec<PathBuf>, ignored: &mut usize) -> Result<()> {
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let path = entry.path();
        if path.is_dir() {
            collect_images(&path, files, ignored)?;
        } else if is_image_file(&path) {
            files.push(path);
        } else {
            *ignored += 1;
        }
    }
    Ok(())
}

/// Largest-remainder allocation of `n` items over three fractions.
fn allocate(n: usize, fractions: (f64, f64, f64)) -> [usize; 3] {
    let fr = [fractions.0, fractions.1, fractions.2];
    let ideal: Vec<f64> = fr.iter().map(|f| f * n as f64).collect();
    let mut counts: Vec<usize> = ideal.iter().map(|&x| x.floor() as usize).collect();
    let mut rest: usize = n - counts.iter().sum::<usize>();
    // Hand remainders to the largest fractional parts; ties go left to right.
    let mut order: Vec<usize> = (0..3).collect();
    order.sort_by(|&a, &b| {
        let fa = ideal[a] - ideal[a].floor();
        let fb = ideal[b] - ideal[b].floor();
        fb.partial_cmp(&fa).unwrap().then(a.cmp(&b))
    });
    for &i in &order {
        if rest == 0 {
            break;
        }
        if fr[i] > 0.0 {
            counts[i] += 1;
            rest -= 1;
        }
    }
    // All-zero-fraction slots cannot absorb remainders; dump any leftover in
    // the largest fraction (unreachable for validated specs).
    if rest > 0 {
        counts[0] += rest;
    }
    [counts[0], counts[1], counts[2]]
}

/// Deterministic (train, val, test) partition. Stratified mode shuffles and
/// slices each class separately so per-class proportions stay within one item
/// of the requested fractions.
pub fn split(
    set: &LabeledImageSet,
    spec: &SplitSpec,
) -> Result<(LabeledImageSet, LabeledImageSet, LabeledImageSet)> {
    spec.validate()?;
    if set.is_empty() {
        return Err(Error::DatasetTooSmall {
            reason: "cannot split an empty dataset".into(),
        });
    }

    let mut parts: [Vec<(PathBuf, usize)>; 3] = [Vec::new(), Vec::new(), Vec::new()];
    if spec.stratified {
        for (label, name) in set.class_names.iter().enumerate() {
            let mut class_entries: Vec<(PathBuf, usize)> = set
                .entries
                .iter()
                .filter(|(_, l)| *l == label)
                .cloned()
                .collect();
            if class_entries.is_empty() {
                continue;
            }
            if class_entries.len() < spec.nonzero_parts() {
                return Err(Error::ClassTooSmall {
                    name: name.clone(),
                    count: class_entries.len(),
                });
            }
            let mut rng = substream(spec.seed, &format!("split/class/{name}"));
            class_entries.shuffle(&mut rng);
            let counts = allocate(class_entries.len(), spec.fractions);
            let mut it = class_entries.into_iter();
            for (part, &count) in parts.iter_mut().zip(&counts) {
                part.extend(it.by_ref().take(count));
            }
        }
    } else {
        let mut entries = set.entries.clone();
        let mut rng = substream(spec.seed, "split/global");
        entries.shuffle(&mut rng);
        let counts = allocate(entries.len(), spec.fractions);
        let mut it = entries.into_iter();
        for (part, &count) in parts.iter_mut().zip(&counts) {
            part.extend(it.by_ref().take(count));
        }
    }

    let mk = |mut entries: Vec<(PathBuf, usize)>| {
        entries.sort();
        LabeledImageSet {
            root: set.root.clone(),
            entries,
            class_names: set.class_names.clone(),
            excluded_classes: set.excluded_classes.clone(),
            warnings: Vec::new(),
            ignored_files: 0,
        }
    };
    let [train, val, test] = parts;
    Ok((mk(train), mk(val), mk(test)))
}

/// Removes the named classes; remaining labels are re-indexed against the
/// shrunken vocabulary and the removals are recorded on the result.
pub fn exclude_classes(set: &LabeledImageSet, excluded: &[String]) -> Result<LabeledImageSet> {
    let excluded_set: BTreeSet<&String> = excluded.iter().collect();
    for name in &excluded_set {
        if !set.class_names.contains(name) {
            return Err(Error::UnknownClass {
                name: (*name).clone(),
            });
        }
    }
    let keep: Vec<usize> = (0..set.class_names.len())
        .filter(|&i| !excluded_set.contains(&set.class_names[i]))
        .collect();
    if keep.is_empty() {
        return Err(Error::DatasetTooSmall {
            reason: "excluding every class leaves an empty dataset".into(),
        });
    }
    let mut relabel = vec![usize::MAX; set.class_names.len()];
    for (new, &old) in keep.iter().enumerate() {
        relabel[old] = new;
    }
    let entries: Vec<(PathBuf, usize)> = set
        .entries
        .iter()
        .filter(|(_, l)| relabel[*l] != usize::MAX)
        .map(|(p, l)| (p.clone(), relabel[*l]))
        .collect();
    let mut excluded_classes = set.excluded_classes.clone();
    excluded_classes.extend(excluded_set.iter().map(|s| (*s).clone()));
    excluded_classes.sort();
    excluded_classes.dedup();
    Ok(LabeledImageSet {
        root: set.root.clone(),
        entries,
        class_names: keep.iter().map(|&i| set.class_names[i].clone()).collect(),
        excluded_classes,
        warnings: set.warnings.clone(),
        ignored_files: set.ignored_files,
    })
}

/// Writes a split manifest: one relative path per line.
pub fn write_manifest(set: &LabeledImageSet, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    for (rel, _) in &set.entries {
        writeln!(f, "{}", rel.display()).map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

/// Restricts a set to the paths listed in a manifest file.
pub fn apply_manifest(set: &LabeledImageSet, path: impl AsRef<Path>) -> Result<LabeledImageSet> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let wanted: BTreeSet<PathBuf> = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(PathBuf::from)
        .collect();
    let entries: Vec<(PathBuf, usize)> = set
        .entries
        .iter()
        .filter(|(p, _)| wanted.contains(p))
        .cloned()
        .collect();
    if entries.len() != wanted.len() {
        return Err(Error::DatasetTooSmall {
            reason: format!(
                "manifest {} lists {} paths but only {} matched the dataset",
                path.display(),
                wanted.len(),
                entries.len()
            ),
        });
    }
    Ok(LabeledImageSet {
        root: set.root.clone(),
        entries,
        class_names: set.class_names.clone(),
        excluded_classes: set.excluded_classes.clone(),
        warnings: Vec::new(),
        ignored_files: 0,
    })
}

/// Renders `classes` procedural families (the first K of [`FAMILY_NAMES`])
/// into `<out>/<family>/<family>_<index>.png`.
pub fn gen_shapes_dataset(
    out_path: impl AsRef<Path>,
    classes: usize,
    per_class: usize,
    resolution: usize,
    seed: u64,
) -> Result<LabeledImageSet> {
    if !(2..=10).contains(&classes) {
        return Err(Error::InvalidConfig {
            field: "classes",
            reason: format!("must be in [2, 10], got {classes}"),
        });
    }
    let families: Vec<usize> = (0..classes).collect();
    gen_shapes_families(out_path, &families, per_class, resolution, seed)
}

/// Renders an explicit list of family indices; used both by
/// [`gen_shapes_dataset`] and to build pair pools from families disjoint
/// from the classification task.
pub fn gen_shapes_families(
    out_path: impl AsRef<Path>,
    families: &[usize],
    per_class: usize,
    resolution: usize,
    seed: u64,
) -> Result<LabeledImageSet> {
    let out = out_path.as_ref();
    if families.is_empty() || families.iter().any(|&f| f >= FAMILY_NAMES.len()) {
        return Err(Error::InvalidConfig {
            field: "families",
            reason: format!(
                "family indices must be non-empty and below {}",
                FAMILY_NAMES.len()
            ),
        });
    }
    if per_class == 0 {
        return Err(Error::InvalidConfig {
            field: "per_class",
            reason: "must be >= 1".into(),
        });
    }
    if resolution < 4 || resolution % 4 != 0 {
        return Err(Error::InvalidConfig {
            field: "resolution",
            reason: format!("must be a positive multiple of 4, got {resolution}"),
        });
    }
    for &family in families {
        let name = FAMILY_NAMES[family];
        let dir = out.join(name);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        for index in 0..per_class {
            let mut rng = substream(seed, &format!("shapes/{family}/{index}"));
            let img = shapes::render_family(family, &mut rng, resolution);
            let file = dir.join(format!("{name}_{index:04}.png"));
            encode_rgb8(&img, &file)?;
        }
    }
    scan_folder(out)
}

/// Derives the per-image degradation seed for entry `index` of a set-level
/// operation with base `seed`.
pub(crate) fn image_seed(seed: u64, index: usize) -> u64 {
    child_seed(seed, &format!("image/{index}"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn make_tree(files: &[(&str, &str)]) -> tempfile::TempDir {
        let dir = tempfile::tempdir().unwrap();
        for (class, name) in files {
            let class_dir = dir.path().join(class);
            fs::create_dir_all(&class_dir).unwrap();
            let img = Rgb8 {
                width: 4,
                height: 4,
                pixels: vec![128; 48],
            };
            encode_rgb8(&img, &class_dir.join(name)).unwrap();
        }
        dir
    }

    #[test]
    fn scan_orders_classes_and_entries() {
        let dir = make_tree(&[
            ("dog", "b.png"),
            ("dog", "a.png"),
            ("cat", "x.png"),
            ("cat", "y.png"),
            ("cat", "z.png"),
        ]);
        let set = scan_folder(dir.path()).unwrap();
        assert_eq!(set.class_names, vec!["cat", "dog"]);
        assert_eq!(set.len(), 5);
        assert_eq!(set.entries[0].0, PathBuf::from("cat/x.png"));
        assert_eq!(set.entries[3].0, PathBuf::from("dog/a.png"));
        let rescan = scan_folder(dir.path()).unwrap();
        assert_eq!(set.entries, rescan.entries);
    }

    #[test]
    fn scan_counts_ignored_and_warns_on_empty() {
        let dir = make_tree(&[("cat", "x.png")]);
        fs::write(dir.path().join("cat/notes.txt"), "hi").unwrap();
        fs::create_dir_all(dir.path().join("dog")).unwrap();
        let set = scan_folder(dir.path()).unwrap();
        assert_eq!(set.ignored_files, 1);
        assert_eq!(set.warnings.len(), 1);
        assert!(set.warnings[0].contains("dog"));
    }

    #[test]
    fn scan_without_classes_errors() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            scan_folder(dir.path()),
            Err(Error::NoClasses { .. })
        ));
    }

    #[test]
    fn split_sizes_match_fractions() {
        let files: Vec<(String, String)> = (0..100)
            .map(|i| ("only".to_string(), format!("f{i:03}.png")))
            .collect();
        let refs: Vec<(&str, &str)> = files.iter().map(|(a, b)| (a.as_str(), b.as_str())).collect();
        let dir = make_tree(&refs);
        let set = scan_folder(dir.path()).unwrap();
        let (train, val, test) = split(&set, &SplitSpec::new(0.6, 0.2, 0.2, 7)).unwrap();
        assert_eq!((train.len(), val.len(), test.len()), (60, 20, 20));

        let (train, val, test) = split(&set, &SplitSpec::new(0.8, 0.0, 0.2, 7)).unwrap();
        assert_eq!((train.len(), val.len(), test.len()), (80, 0, 20));
    }

    #[test]
    fn split_is_a_partition() {
        let files: Vec<(String, String)> = (0..23)
            .flat_map(|i| {
                [
                    ("a".to_string(), format!("f{i:03}.png")),
                    ("b".to_string(), format!("g{i:03}.png")),
                ]
            })
            .collect();
        let refs: Vec<(&str, &str)> = files.iter().map(|(a, b)| (a.as_str(), b.as_str())).collect();
        let dir = make_tree(&refs);
        let set = scan_folder(dir.path()).unwrap();
        let (train, val, test) = split(&set, &SplitSpec::new(0.5, 0.25, 0.25, 3)).unwrap();
        let mut all: Vec<_> = train
            .entries
            .iter()
            .chain(&val.entries)
            .chain(&test.entries)
            .cloned()
            .collect();
        all.sort();
        let mut expect = set.entries.clone();
        expect.sort();
        assert_eq!(all, expect);
        // Per-class proportions within one item of the request.
        for part in [&train, &val, &test] {
            let counts = part.class_counts();
            assert!((counts[0] as i64 - counts[1] as i64).abs() <= 1);
        }
    }

    #[test]
    fn split_is_deterministic_per_seed() {
        let files: Vec<(String, String)> = (0..30)
            .map(|i| ("c".to_string(), format!("f{i:03}.png")))
            .collect();
        let refs: Vec<(&str, &str)> = files.iter().map(|(a, b)| (a.as_str(), b.as_str())).collect();
        let dir = make_tree(&refs);
        let set = scan_folder(dir.path()).unwrap();
        let a = split(&set, &SplitSpec::new(0.6, 0.2, 0.2, 11)).unwrap();
        let b = split(&set, &SplitSpec::new(0.6, 0.2, 0.2, 11)).unwrap();
        assert_eq!(a.0.entries, b.0.entries);
        assert_eq!(a.2.entries, b.2.entries);
        let c = split(&set, &SplitSpec::new(0.6, 0.2, 0.2, 12)).unwrap();
        assert_ne!(a.0.entries, c.0.entries);
    }

    #[test]
    fn stratified_split_rejects_tiny_class() {
        let dir = make_tree(&[("a", "1.png"), ("a", "2.png"), ("a", "3.png"), ("b", "1.png")]);
        let set = scan_folder(dir.path()).unwrap();
        let err = split(&set, &SplitSpec::new(0.6, 0.2, 0.2, 0)).unwrap_err();
        match err {
            Error::ClassTooSmall { name, count } => {
                assert_eq!(name, "b");
                assert_eq!(count, 1);
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn exclude_classes_relabels() {
        let dir = make_tree(&[
            ("a", "1.png"),
            ("b", "1.png"),
            ("c", "1.png"),
            ("d", "1.png"),
            ("e", "1.png"),
        ]);
        let set = scan_folder(dir.path()).unwrap();
        let excluded = vec!["b".to_string(), "d".to_string()];
        let rest = exclude_classes(&set, &excluded).unwrap();
        assert_eq!(rest.class_names, vec!["a", "c", "e"]);
        assert_eq!(rest.len(), 3);
        assert_eq!(rest.excluded_classes, vec!["b", "d"]);
        // Surviving file associations unchanged.
        for (rel, label) in &rest.entries {
            let class_of_path = rel.components().next().unwrap().as_os_str().to_string_lossy();
            assert_eq!(class_of_path, rest.class_names[*label]);
        }
        // Exclude nothing: identity.
        let same = exclude_classes(&set, &[]).unwrap();
        assert_eq!(same.entries, set.entries);
        // Exclude everything: error.
        let all: Vec<String> = set.class_names.clone();
        assert!(exclude_classes(&set, &all).is_err());
        // Unknown class: error.
        assert!(exclude_classes(&set, &["nope".to_string()]).is_err());
    }

    #[test]
    fn manifest_round_trip() {
        let dir = make_tree(&[("a", "1.png"), ("a", "2.png"), ("b", "1.png"), ("b", "2.png")]);
        let set = scan_folder(dir.path()).unwrap();
        let (train, _, test) = split(&set, &SplitSpec::new(0.5, 0.0, 0.5, 1)).unwrap();
        let mpath = dir.path().join("train.txt");
        write_manifest(&train, &mpath).unwrap();
        let restored = apply_manifest(&set, &mpath).unwrap();
        assert_eq!(restored.entries, train.entries);
        assert!(!test.entries.iter().any(|e| restored.entries.contains(e)));
    }

    #[test]
    fn gen_shapes_balanced_and_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let a = gen_shapes_dataset(dir.path().join("a"), 2, 3, 16, 42).unwrap();
        assert_eq!(a.len(), 6);
        assert_eq!(a.class_counts(), vec![3, 3]);
        let b = gen_shapes_dataset(dir.path().join("b"), 2, 3, 16, 42).unwrap();
        for ((pa, _), (pb, _)) in a.entries.iter().zip(&b.entries) {
            let bytes_a = fs::read(a.root.join(pa)).unwrap();
            let bytes_b = fs::read(b.root.join(pb)).unwrap();
            assert_eq!(bytes_a, bytes_b);
        }
        assert!(gen_shapes_dataset(dir.path().join("c"), 1, 3, 16, 0).is_err());
        assert!(gen_shapes_dataset(dir.path().join("d"), 11, 3, 16, 0).is_err());
    }

    #[test]
    fn allocate_covers_all_items() {
        assert_eq!(allocate(100, (0.6, 0.2, 0.2)), [60, 20, 20]);
        assert_eq!(allocate(10, (0.8, 0.0, 0.2)), [8, 0, 2]);
        let counts = allocate(7, (0.5, 0.25, 0.25));
        assert_eq!(counts.iter().sum::<usize>(), 7);
    }
}
