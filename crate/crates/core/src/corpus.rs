//! Labeled code samples: loading, validation, balancing and splitting.
//!
//! The on-disk format is a headerless UTF-8 TSV with columns
//! `code<TAB>label[<TAB>project_id]`. Code fields escape tab, newline and
//! backslash as `\t`, `\n` and `\\` so that multi-line snippets fit on one row.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Number of refactoring classes.
pub const NUM_CLASSES: usize = 3;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("line {line}: unknown refactoring label {label:?}")]
    UnknownLabel { line: usize, label: String },
    #[error("line {line}: malformed row ({reason})")]
    MalformedRow { line: usize, reason: String },
    #[error("line {line}: empty code field")]
    EmptyCode { line: usize },
    #[error("no samples labeled {0}")]
    EmptyClass(RefactoringLabel),
    #[error("split fractions must be positive and sum to 1 (got {0:?})")]
    FractionSum([f64; 3]),
    #[error("label {label} has {count} samples, need at least {needed}")]
    ClassTooSmall {
        label: RefactoringLabel,
        count: usize,
        needed: usize,
    },
    #[error("k must be at least 2 (got {0})")]
    InvalidK(usize),
    #[error("only {groups} project groups for {k} folds")]
    TooFewGroups { groups: usize, k: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// The refactoring a classifier recommends. Integer codes index every class
/// axis in the crate (logits, confusion matrices, checkpoints).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum RefactoringLabel {
    ExtractMethod = 0,
    MoveClass = 1,
    PullUpMethod = 2,
}

impl RefactoringLabel {
    pub const ALL: [RefactoringLabel; NUM_CLASSES] = [
        RefactoringLabel::ExtractMethod,
        RefactoringLabel::MoveClass,
        RefactoringLabel::PullUpMethod,
    ];

    pub fn code(self) -> usize {
        self as usize
    }

    pub fn from_code(code: usize) -> Option<Self> {
        Self::ALL.get(code).copied()
    }

    /// Canonical spelling used in files.
    pub fn as_str(self) -> &'static str {
        match self {
            RefactoringLabel::ExtractMethod => "ExtractMethod",
            RefactoringLabel::MoveClass => "MoveClass",
            RefactoringLabel::PullUpMethod => "PullUpMethod",
        }
    }
}

impl fmt::Display for RefactoringLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RefactoringLabel {
    type Err = ();

    /// Accepts the canonical names (case-sensitive) and the spaced aliases
    /// `Extract Method`, `Move Class`, `Pull Up Method`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ExtractMethod" | "Extract Method" => Ok(RefactoringLabel::ExtractMethod),
            "MoveClass" | "Move Class" => Ok(RefactoringLabel::MoveClass),
            "PullUpMethod" | "Pull Up Method" => Ok(RefactoringLabel::PullUpMethod),
            _ => Err(()),
        }
    }
}

/// Architectural smells with a canonical repair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SmellKind {
    GodClass,
    CyclicDependency,
    HubLikeDependency,
}

impl SmellKind {
    pub const ALL: [SmellKind; 3] = [
        SmellKind::GodClass,
        SmellKind::CyclicDependency,
        SmellKind::HubLikeDependency,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SmellKind::GodClass => "god_class",
            SmellKind::CyclicDependency => "cyclic_dependency",
            SmellKind::HubLikeDependency => "hub_like_dependency",
        }
    }
}

impl FromStr for SmellKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm: String = s
            .chars()
            .filter(|c| !matches!(c, '_' | '-' | ' '))
            .flat_map(char::to_lowercase)
            .collect();
        match norm.as_str() {
            "godclass" => Ok(SmellKind::GodClass),
            "cyclicdependency" | "cyclic" => Ok(SmellKind::CyclicDependency),
            "hublikedependency" | "hublike" => Ok(SmellKind::HubLikeDependency),
            _ => Err(format!("unknown smell {s:?}")),
        }
    }
}

/// The fixed smell → refactoring pairing.
pub fn smell_to_refactoring(smell: SmellKind) -> RefactoringLabel {
    match smell {
        SmellKind::GodClass => RefactoringLabel::ExtractMethod,
        SmellKind::CyclicDependency => RefactoringLabel::MoveClass,
        SmellKind::HubLikeDependency => RefactoringLabel::PullUpMethod,
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sample {
    pub code: String,
    pub label: RefactoringLabel,
    pub project_id: Option<String>,
}

impl Sample {
    pub fn new(code: impl Into<String>, label: RefactoringLabel) -> Self {
        Sample {
            code: code.into(),
            label,
            project_id: None,
        }
    }
}

/// An ordered, immutable collection of samples. Order is the on-disk order and
/// anchors every seeded operation.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Corpus {
    samples: Vec<Sample>,
    counts: [usize; NUM_CLASSES],
}

impl Corpus {
    pub fn new(samples: Vec<Sample>) -> Self {
        let mut counts = [0; NUM_CLASSES];
        for s in &samples {
            counts[s.label.code()] += 1;
        }
        Corpus { samples, counts }
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn counts(&self) -> [usize; NUM_CLASSES] {
        self.counts
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Sub-corpus made of the given indices, in the given order.
    pub fn select(&self, indices: &[usize]) -> Corpus {
        Corpus::new(indices.iter().map(|&i| self.samples[i].clone()).collect())
    }

    /// Indices of the samples of each label, in corpus order.
    fn indices_by_label(&self) -> [Vec<usize>; NUM_CLASSES] {
        let mut out: [Vec<usize>; NUM_CLASSES] = Default::default();
        for (i, s) in self.samples.iter().enumerate() {
            out[s.label.code()].push(i);
        }
        out
    }
}

pub fn escape_code(code: &str) -> String {
    let mut out = String::with_capacity(code.len());
    for c in code.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '\t' => out.push_str("\\t"),
            '\n' => out.push_str("\\n"),
            c => out.push(c),
        }
    }
    out
}

/// Inverse of [`escape_code`]. Unknown escapes are kept verbatim.
pub fn unescape_code(field: &str) -> String {
    let mut out = String::with_capacity(field.len());
    let mut chars = field.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match chars.next() {
            Some('t') => out.push('\t'),
            Some('n') => out.push('\n'),
            Some('\\') => out.push('\\'),
            Some(other) => {
                out.push('\\');
                out.push(other);
            }
            None => out.push('\\'),
        }
    }
    out
}

/// Parses TSV text. Blank lines are skipped; line numbers are 1-based.
pub fn parse_tsv(text: &str) -> Result<Corpus, CorpusError> {
    let mut samples = Vec::new();
    for (idx, raw) in text.split('\n').enumerate() {
        let line = idx + 1;
        let row = raw.strip_suffix('\r').unwrap_or(raw);
        if row.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = row.split('\t').collect();
        if fields.len() < 2 || fields.len() > 3 {
            return Err(CorpusError::MalformedRow {
                line,
                reason: format!("expected 2 or 3 tab-separated fields, found {}", fields.len()),
            });
        }
        let code = unescape_code(fields[0]);
        if code.trim().is_empty() {
            return Err(CorpusError::EmptyCode { line });
        }
        let label = fields[1]
            .parse::<RefactoringLabel>()
            .map_err(|_| CorpusError::UnknownLabel {
                line,
                label: fields[1].to_string(),
            })?;
        let project_id = fields
            .get(2)
            .filter(|p| !p.is_empty())
            .map(|p| p.to_string());
        samples.push(Sample {
            code,
            label,
            project_id,
        });
    }
    Ok(Corpus::new(samples))
}

pub fn load_tsv(path: impl AsRef<Path>) -> Result<Corpus, CorpusError> {
    let text = fs::read_to_string(path)?;
    parse_tsv(&text)
}

pub fn to_tsv(corpus: &Corpus) -> String {
    let mut out = String::new();
    for s in corpus.samples() {
        out.push_str(&escape_code(&s.code));
        out.push('\t');
        out.push_str(s.label.as_str());
        if let Some(p) = &s.project_id {
            out.push('\t');
            out.push_str(p);
        }
        out.push('\n');
    }
    out
}

pub fn save_tsv(corpus: &Corpus, path: impl AsRef<Path>) -> Result<(), CorpusError> {
    fs::write(path, to_tsv(corpus))?;
    Ok(())
}

fn check_nonempty_classes(corpus: &Corpus) -> Result<(), CorpusError> {
    for label in RefactoringLabel::ALL {
        if corpus.counts()[label.code()] == 0 {
            return Err(CorpusError::EmptyClass(label));
        }
    }
    Ok(())
}

/// Random undersampling: every label keeps `min` samples, drawn uniformly
/// without replacement. Kept samples stay in their original relative order.
pub fn balance_undersample(corpus: &Corpus, seed: u64) -> Result<Corpus, CorpusError> {
    check_nonempty_classes(corpus)?;
    let target = *corpus.counts().iter().min().expect("three classes");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keep = Vec::with_capacity(target * NUM_CLASSES);
    for idx in corpus.indices_by_label() {
        if idx.len() == target {
            keep.extend(idx);
        } else {
            keep.extend(idx.choose_multiple(&mut rng, target).copied());
        }
    }
    keep.sort_unstable();
    Ok(corpus.select(&keep))
}

/// Per-label partition sizes for a stratified split. The last part takes the
/// rounding remainder; when `n` allows it, empty parts borrow one sample from
/// the largest part.
fn part_sizes(n: usize, fractions: &[f64]) -> Vec<usize> {
    let mut sizes = Vec::with_capacity(fractions.len());
    let mut used = 0usize;
    for f in &fractions[..fractions.len() - 1] {
        let s = ((n as f64) * f).round() as usize;
        let s = s.min(n - used);
        sizes.push(s);
        used += s;
    }
    sizes.push(n - used);
    if n >= sizes.len() {
        while let Some(empty) = sizes.iter().position(|&s| s == 0) {
            let largest = (0..sizes.len()).max_by_key(|&i| (sizes[i], usize::MAX - i)).unwrap();
            sizes[largest] -= 1;
            sizes[empty] = 1;
        }
    }
    sizes
}

fn stratified_parts(
    corpus: &Corpus,
    fractions: &[f64],
    seed: u64,
) -> Result<Vec<Vec<usize>>, CorpusError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut parts = vec![Vec::new(); fractions.len()];
    for (code, mut idx) in corpus.indices_by_label().into_iter().enumerate() {
        let label = RefactoringLabel::from_code(code).expect("label code");
        if idx.is_empty() {
            continue;
        }
        let sizes = part_sizes(idx.len(), fractions);
        if sizes.contains(&0) {
            return Err(CorpusError::ClassTooSmall {
                label,
                count: idx.len(),
                needed: fractions.len(),
            });
        }
        idx.shuffle(&mut rng);
        let mut start = 0;
        for (part, size) in parts.iter_mut().zip(sizes) {
            part.extend_from_slice(&idx[start..start + size]);
            start += size;
        }
    }
    for part in &mut parts {
        part.sort_unstable();
    }
    Ok(parts)
}

/// Stratified train/validation/test split. Each part preserves corpus order.
pub fn split_train_val_test(
    corpus: &Corpus,
    fractions: [f64; 3],
    seed: u64,
) -> Result<(Corpus, Corpus, Corpus), CorpusError> {
    let sum: f64 = fractions.iter().sum();
    if fractions.iter().any(|f| !(*f > 0.0)) || (sum - 1.0).abs() > 1e-9 {
        return Err(CorpusError::FractionSum(fractions));
    }
    let parts = stratified_parts(corpus, &fractions, seed)?;
    Ok((
        corpus.select(&parts[0]),
        corpus.select(&parts[1]),
        corpus.select(&parts[2]),
    ))
}

/// Stratified two-way split; `holdout` is the fraction of the second part.
pub fn split_holdout(
    corpus: &Corpus,
    holdout: f64,
    seed: u64,
) -> Result<(Corpus, Corpus), CorpusError> {
    if !(holdout > 0.0 && holdout < 1.0) {
        return Err(CorpusError::FractionSum([1.0 - holdout, holdout, 0.0]));
    }
    let parts = stratified_parts(corpus, &[1.0 - holdout, holdout], seed)?;
    Ok((corpus.select(&parts[0]), corpus.select(&parts[1])))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldAssignment {
    k: usize,
    fold_of: Vec<usize>,
}

impl FoldAssignment {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn fold_of(&self) -> &[usize] {
        &self.fold_of
    }

    /// Sample indices held out in `fold`, ascending.
    pub fn test_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.fold_of.len())
            .filter(|&i| self.fold_of[i] == fold)
            .collect()
    }

    /// Sample indices used for training when `fold` is held out, ascending.
    pub fn train_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.fold_of.len())
            .filter(|&i| self.fold_of[i] != fold)
            .collect()
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &f in &self.fold_of {
            sizes[f] += 1;
        }
        sizes
    }
}

/// Label-stratified k-fold assignment.
///
/// Each label's samples are shuffled and dealt round-robin. The dealing for a
/// label starts where the previous label stopped, so fold sizes also differ
/// by at most one.
pub fn kfold_split(corpus: &Corpus, k: usize, seed: u64) -> Result<FoldAssignment, CorpusError> {
    if k < 2 {
        return Err(CorpusError::InvalidK(k));
    }
    for label in RefactoringLabel::ALL {
        let count = corpus.counts()[label.code()];
        if count < k {
            return Err(CorpusError::ClassTooSmall {
                label,
                count,
                needed: k,
            });
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fold_of = vec![0; corpus.len()];
    let mut next = 0usize;
    for mut idx in corpus.indices_by_label() {
        idx.shuffle(&mut rng);
        for i in idx {
            fold_of[i] = next;
            next = (next + 1) % k;
        }
    }
    Ok(FoldAssignment { k, fold_of })
}

/// Project-grouped k-fold assignment: all samples sharing a project id land in
/// the same fold. Samples without a project id form singleton groups. Groups
/// are visited in seeded order and each goes to the currently smallest fold.
pub fn kfold_split_grouped(
    corpus: &Corpus,
    k: usize,
    seed: u64,
) -> Result<FoldAssignment, CorpusError> {
    if k < 2 {
        return Err(CorpusError::InvalidK(k));
    }
    let mut groups: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    let mut singletons = Vec::new();
    for (i, s) in corpus.samples().iter().enumerate() {
        match &s.project_id {
            Some(p) => groups.entry(p.clone()).or_default().push(i),
            None => singletons.push(vec![i]),
        }
    }
    let mut all: Vec<Vec<usize>> = groups.into_values().chain(singletons).collect();
    if all.len() < k {
        return Err(CorpusError::TooFewGroups {
            groups: all.len(),
            k,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    all.shuffle(&mut rng);
    let mut sizes = vec![0usize; k];
    let mut fold_of = vec![0; corpus.len()];
    for group in all {
        let fold = (0..k).min_by_key(|&f| (sizes[f], f)).expect("k >= 2");
        sizes[fold] += group.len();
        for i in group {
            fold_of[i] = fold;
        }
    }
    Ok(FoldAssignment { k, fold_of })
}

/// Distinct project ids, for reporting.
pub fn project_ids(corpus: &Corpus) -> BTreeSet<&str> {
    corpus
        .samples()
        .iter()
        .filter_map(|s| s.project_id.as_deref())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn corpus_with_counts(counts: [usize; 3]) -> Corpus {
        let mut samples = Vec::new();
        for (code, &n) in counts.iter().enumerate() {
            for i in 0..n {
                let label = RefactoringLabel::from_code(code).unwrap();
                samples.push(Sample::new(format!("void m{code}_{i}() {{}}"), label));
            }
        }
        Corpus::new(samples)
    }

    #[test]
    fn smell_mapping() {
        assert_eq!(
            smell_to_refactoring(SmellKind::GodClass),
            RefactoringLabel::ExtractMethod
        );
        assert_eq!(
            smell_to_refactoring(SmellKind::CyclicDependency),
            RefactoringLabel::MoveClass
        );
        assert_eq!(
            smell_to_refactoring(SmellKind::HubLikeDependency),
            RefactoringLabel::PullUpMethod
        );
    }

    #[test]
    fn parse_basic_row() {
        let c = parse_tsv("int f(){}\tExtractMethod\n").unwrap();
        assert_eq!(c.samples()[0], Sample::new("int f(){}", RefactoringLabel::ExtractMethod));
    }

    #[test]
    fn parse_aliases_and_project() {
        let c = parse_tsv("a\tPull Up Method\tproj-1\nb\tMove Class\n").unwrap();
        assert_eq!(c.samples()[0].label, RefactoringLabel::PullUpMethod);
        assert_eq!(c.samples()[0].project_id.as_deref(), Some("proj-1"));
        assert_eq!(c.samples()[1].project_id, None);
    }

    #[test]
    fn unknown_label_reports_line() {
        let err = parse_tsv("a\tExtractMethod\nb\tRename Variable\n").unwrap_err();
        assert!(matches!(err, CorpusError::UnknownLabel { line: 2, .. }), "{err}");
        // labels are case-sensitive
        assert!(matches!(
            parse_tsv("a\textractmethod\n").unwrap_err(),
            CorpusError::UnknownLabel { line: 1, .. }
        ));
    }

    #[test]
    fn malformed_and_empty_code() {
        assert!(matches!(
            parse_tsv("just code\n").unwrap_err(),
            CorpusError::MalformedRow { line: 1, .. }
        ));
        assert!(matches!(
            parse_tsv("x\tMoveClass\n   \tMoveClass\n").unwrap_err(),
            CorpusError::EmptyCode { line: 2 }
        ));
        assert!(matches!(
            parse_tsv("a\tMoveClass\tp\textra\n").unwrap_err(),
            CorpusError::MalformedRow { line: 1, .. }
        ));
    }

    #[test]
    fn counts_from_file() {
        let text = "a\tExtractMethod\nb\tMoveClass\nc\tPullUpMethod\n\
                    d\tExtractMethod\ne\tMoveClass\nf\tPullUpMethod\n";
        assert_eq!(parse_tsv(text).unwrap().counts(), [2, 2, 2]);
    }

    #[test]
    fn save_load_roundtrip_on_disk() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.tsv");
        let empty = Corpus::default();
        save_tsv(&empty, &path).unwrap();
        assert_eq!(fs::read_to_string(&path).unwrap(), "");
        assert_eq!(load_tsv(&path).unwrap(), empty);

        let mut s = Sample::new("class A {\n\tint x; // a\\b\n}", RefactoringLabel::MoveClass);
        s.project_id = Some("p".into());
        let c = Corpus::new(vec![s, Sample::new("x", RefactoringLabel::PullUpMethod)]);
        save_tsv(&c, &path).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("class A {\\n\\tint x; // a\\\\b\\n}\tMoveClass\tp\n"));
        assert_eq!(load_tsv(&path).unwrap(), c);
    }

    #[test]
    fn undersample_to_minimum() {
        let c = corpus_with_counts([10, 7, 5]);
        let b = balance_undersample(&c, 1).unwrap();
        assert_eq!(b.counts(), [5, 5, 5]);
        let again = balance_undersample(&c, 1).unwrap();
        assert_eq!(b, again);
        // kept samples are originals, in original relative order
        let positions: Vec<usize> = b
            .samples()
            .iter()
            .map(|s| c.samples().iter().position(|o| o == s).unwrap())
            .collect();
        assert!(positions.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn undersample_balanced_is_identity() {
        let c = corpus_with_counts([4, 4, 4]);
        assert_eq!(balance_undersample(&c, 9).unwrap(), c);
    }

    #[test]
    fn undersample_empty_class() {
        let c = corpus_with_counts([4, 0, 4]);
        assert!(matches!(
            balance_undersample(&c, 0).unwrap_err(),
            CorpusError::EmptyClass(RefactoringLabel::MoveClass)
        ));
    }

    #[test]
    fn split_80_10_10() {
        let c = corpus_with_counts([100, 100, 100]);
        let (tr, va, te) = split_train_val_test(&c, [0.8, 0.1, 0.1], 42).unwrap();
        assert_eq!((tr.len(), va.len(), te.len()), (240, 30, 30));
        assert_eq!(tr.counts(), [80, 80, 80]);
        assert_eq!(va.counts(), [10, 10, 10]);
        assert_eq!(te.counts(), [10, 10, 10]);
        let again = split_train_val_test(&c, [0.8, 0.1, 0.1], 42).unwrap();
        assert_eq!((tr.clone(), va.clone(), te.clone()), again);
        let mut all: Vec<&Sample> = tr.samples().iter().chain(va.samples()).chain(te.samples()).collect();
        all.sort_by(|a, b| a.code.cmp(&b.code));
        all.dedup();
        assert_eq!(all.len(), 300);
    }

    #[test]
    fn small_classes_fill_every_part() {
        assert_eq!(part_sizes(5, &[0.8, 0.1, 0.1]), vec![3, 1, 1]);
        assert_eq!(part_sizes(3, &[0.8, 0.1, 0.1]), vec![1, 1, 1]);
        assert_eq!(part_sizes(100, &[0.8, 0.1, 0.1]), vec![80, 10, 10]);
        let (train, val, test) =
            split_train_val_test(&corpus_with_counts([5, 5, 5]), [0.8, 0.1, 0.1], 42).unwrap();
        assert_eq!(train.counts(), [3, 3, 3]);
        assert_eq!(val.counts(), [1, 1, 1]);
        assert_eq!(test.counts(), [1, 1, 1]);
    }

    #[test]
    fn split_rejects_bad_fractions() {
        let c = corpus_with_counts([10, 10, 10]);
        assert!(matches!(
            split_train_val_test(&c, [0.5, 0.5, 0.1], 0).unwrap_err(),
            CorpusError::FractionSum(_)
        ));
        assert!(matches!(
            split_train_val_test(&corpus_with_counts([2, 10, 10]), [0.8, 0.1, 0.1], 0).unwrap_err(),
            CorpusError::ClassTooSmall { .. }
        ));
    }

    #[test]
    fn kfold_thirty_samples() {
        let c = corpus_with_counts([10, 10, 10]);
        let folds = kfold_split(&c, 10, 42).unwrap();
        for f in 0..10 {
            let held = c.select(&folds.test_indices(f));
            assert_eq!(held.counts(), [1, 1, 1]);
        }
        assert_eq!(folds, kfold_split(&c, 10, 42).unwrap());
    }

    #[test]
    fn kfold_class_too_small() {
        let c = corpus_with_counts([10, 9, 10]);
        assert!(matches!(
            kfold_split(&c, 10, 0).unwrap_err(),
            CorpusError::ClassTooSmall {
                label: RefactoringLabel::MoveClass,
                count: 9,
                needed: 10
            }
        ));
    }

    #[test]
    fn grouped_folds_keep_projects_together() {
        let mut samples = Vec::new();
        for i in 0..24 {
            let mut s = Sample::new(format!("x{i}"), RefactoringLabel::from_code(i % 3).unwrap());
            s.project_id = Some(format!("p{}", i % 6));
            samples.push(s);
        }
        let c = Corpus::new(samples);
        let folds = kfold_split_grouped(&c, 3, 5).unwrap();
        for (i, s) in c.samples().iter().enumerate() {
            for (j, t) in c.samples().iter().enumerate() {
                if s.project_id == t.project_id {
                    assert_eq!(folds.fold_of()[i], folds.fold_of()[j]);
                }
            }
        }
        assert_eq!(folds.fold_sizes(), vec![8, 8, 8]);
        assert!(matches!(
            kfold_split_grouped(&c, 7, 5).unwrap_err(),
            CorpusError::TooFewGroups { groups: 6, k: 7 }
        ));
    }

    fn arb_code() -> impl Strategy<Value = String> {
        proptest::string::string_regex("[a-zA-Z0-9 \\t\\n\\\\{}();=]{1,40}")
            .unwrap()
            .prop_filter("non-blank", |s| !s.trim().is_empty())
    }

    proptest! {
        #[test]
        fn tsv_roundtrip(rows in proptest::collection::vec((arb_code(), 0usize..3, proptest::option::of("[a-z0-9]{1,6}")), 0..20)) {
            let c = Corpus::new(rows.into_iter().map(|(code, l, p)| Sample {
                code,
                label: RefactoringLabel::from_code(l).unwrap(),
                project_id: p,
            }).collect());
            let text = to_tsv(&c);
            let back = parse_tsv(&text).unwrap();
            prop_assert_eq!(&back, &c);
            prop_assert_eq!(to_tsv(&back), text);
        }

        #[test]
        fn kfold_partitions_and_stratifies(
            counts in proptest::array::uniform3(2usize..30),
            k in 2usize..8,
            seed in any::<u64>(),
        ) {
            prop_assume!(counts.iter().all(|&n| n >= k));
            let c = corpus_with_counts(counts);
            let folds = kfold_split(&c, k, seed).unwrap();
            let mut seen = vec![false; c.len()];
            for f in 0..k {
                for i in folds.test_indices(f) {
                    prop_assert!(!seen[i]);
                    seen[i] = true;
                }
            }
            prop_assert!(seen.iter().all(|&s| s));
            for label in RefactoringLabel::ALL {
                let per_fold: Vec<usize> = (0..k)
                    .map(|f| c.select(&folds.test_indices(f)).counts()[label.code()])
                    .collect();
                let (lo, hi) = (per_fold.iter().min().unwrap(), per_fold.iter().max().unwrap());
                prop_assert!(hi - lo <= 1);
            }
            prop_assert_eq!(folds, kfold_split(&c, k, seed).unwrap());
        }

        #[test]
        fn undersample_properties(counts in proptest::array::uniform3(1usize..25), seed in any::<u64>()) {
            let c = corpus_with_counts(counts);
            let b = balance_undersample(&c, seed).unwrap();
            let m = *counts.iter().min().unwrap();
            prop_assert_eq!(b.counts(), [m, m, m]);
            for s in b.samples() {
                prop_assert!(c.samples().contains(s));
            }
            prop_assert_eq!(b, balance_undersample(&c, seed).unwrap());
        }
    }
}
