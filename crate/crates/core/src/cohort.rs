//! Case records, diagnosis labels, label groupings and stratified splits.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

#[allow(unused_imports)]
use crate::prelude::*;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::rng;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum CohortError {
    #[error("unknown diagnosis label `{0}`")]
    UnknownLabel(String),
    #[error("duplicate case id `{0}`")]
    DuplicateCase(String),
    #[error("case `{0}` lists no cores")]
    NoCores(String),
    #[error("case `{case}` lists core `{core}` twice")]
    DuplicateCore { case: String, core: String },
    #[error("stain `{0}` is not in the stain registry")]
    UnknownStain(String),
    #[error("unknown IHC score `{0}` (expected pos, neg, ci or empty)")]
    UnknownScore(String),
    #[error("split fractions {0:?} must be finite, non-negative and sum to 1")]
    DegenerateFractions([f64; 3]),
    #[error("cohort has no cases to split")]
    EmptyCohort,
    #[error("unknown split `{0}`")]
    UnknownSplit(String),
}

/// The eight diagnostic categories, with their stable integer encoding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum DiagnosisLabel {
    Dlbcl = 0,
    Chl = 1,
    AggBcl = 2,
    Fl = 3,
    Mcl = 4,
    Mzl = 5,
    Nktcl = 6,
    Tcl = 7,
}

impl DiagnosisLabel {
    pub const ALL: [DiagnosisLabel; 8] = [
        Self::Dlbcl,
        Self::Chl,
        Self::AggBcl,
        Self::Fl,
        Self::Mcl,
        Self::Mzl,
        Self::Nktcl,
        Self::Tcl,
    ];

    pub fn code(self) -> usize {
        self as usize
    }

    pub fn from_code(code: usize) -> Option<Self> {
        Self::ALL.get(code).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Dlbcl => "DLBCL",
            Self::Chl => "CHL",
            Self::AggBcl => "AggBCL",
            Self::Fl => "FL",
            Self::Mcl => "MCL",
            Self::Mzl => "MZL",
            Self::Nktcl => "NKTCL",
            Self::Tcl => "TCL",
        }
    }
}

impl fmt::Display for DiagnosisLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DiagnosisLabel {
    type Err = CohortError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let t = s.trim();
        Self::ALL
            .iter()
            .copied()
            .find(|l| l.name() == t)
            .or_else(|| (t == "Agg BCL").then_some(Self::AggBcl))
            .ok_or_else(|| CohortError::UnknownLabel(t.to_string()))
    }
}

/// Pathologist call for one immunostain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum IhcScore {
    Positive,
    Negative,
    CannotInterpret,
    Missing,
}

impl IhcScore {
    /// Manifest token: `pos`, `neg`, `ci`, or empty for missing.
    pub fn parse(token: &str) -> Result<Self, CohortError> {
        match token.trim() {
            "pos" => Ok(Self::Positive),
            "neg" => Ok(Self::Negative),
            "ci" => Ok(Self::CannotInterpret),
            "" => Ok(Self::Missing),
            other => Err(CohortError::UnknownScore(other.to_string())),
        }
    }

    pub fn token(self) -> &'static str {
        match self {
            Self::Positive => "pos",
            Self::Negative => "neg",
            Self::CannotInterpret => "ci",
            Self::Missing => "",
        }
    }

    /// Ordinal used as a categorical model input.
    pub fn code(self) -> u8 {
        match self {
            Self::Negative => 0,
            Self::Positive => 1,
            Self::CannotInterpret => 2,
            Self::Missing => 3,
        }
    }
}

/// Markers a manifest may carry; 46 in the default panel.
pub const DEFAULT_STAINS: [&str; 46] = [
    "CD10", "CD20", "CD3", "EBV-ISH", "BCL1", "CD30", "CD15", "CD45", "CD5", "CD23", "CD43",
    "CD4", "CD8", "CD7", "CD2", "CD56", "CD57", "CD79a", "CD138", "CD21", "CD68", "CD34",
    "CD99", "BCL2", "BCL6", "MUM1", "MYC", "Ki67", "PAX5", "OCT2", "BOB1", "TdT", "ALK",
    "GranzymeB", "Perforin", "TIA1", "PD1", "CXCL13", "ICOS", "Kappa", "Lambda", "IgD",
    "LMO2", "SOX11", "CD1a", "S100",
];

/// The six-stain panel evaluated for H&E augmentation.
pub const SIX_STAIN_PANEL: [&str; 6] = ["CD10", "CD20", "CD3", "EBV-ISH", "BCL1", "CD30"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StainRegistry {
    names: Vec<String>,
}

impl Default for StainRegistry {
    fn default() -> Self {
        Self { names: DEFAULT_STAINS.iter().map(|s| s.to_string()).collect() }
    }
}

impl StainRegistry {
    pub fn new(names: impl IntoIterator<Item = impl Into<String>>) -> Self {
        Self { names: names.into_iter().map(Into::into).collect() }
    }

    pub fn contains(&self, name: &str) -> bool {
        self.names.iter().any(|n| n == name)
    }

    pub fn check(&self, name: &str) -> Result<(), CohortError> {
        if self.contains(name) {
            Ok(())
        } else {
            Err(CohortError::UnknownStain(name.to_string()))
        }
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseRecord {
    pub case_id: String,
    pub diagnosis: DiagnosisLabel,
    pub core_ids: Vec<String>,
    pub ihc_scores: BTreeMap<String, IhcScore>,
}

impl CaseRecord {
    pub fn new(
        case_id: impl Into<String>,
        diagnosis: DiagnosisLabel,
        core_ids: Vec<String>,
    ) -> Result<Self, CohortError> {
        let case_id = case_id.into();
        if core_ids.is_empty() {
            return Err(CohortError::NoCores(case_id));
        }
        for (i, core) in core_ids.iter().enumerate() {
            if core_ids[..i].contains(core) {
                return Err(CohortError::DuplicateCore { case: case_id, core: core.clone() });
            }
        }
        Ok(Self { case_id, diagnosis, core_ids, ihc_scores: BTreeMap::new() })
    }

    /// Score for `stain`, `Missing` when the record does not carry it.
    pub fn ihc(&self, stain: &str) -> IhcScore {
        self.ihc_scores.get(stain).copied().unwrap_or(IhcScore::Missing)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Cohort {
    cases: Vec<CaseRecord>,
}

impl Cohort {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_records(records: impl IntoIterator<Item = CaseRecord>) -> Result<Self, CohortError> {
        let mut cohort = Self::new();
        for r in records {
            cohort.push(r)?;
        }
        Ok(cohort)
    }

    pub fn push(&mut self, record: CaseRecord) -> Result<(), CohortError> {
        if self.get(&record.case_id).is_some() {
            return Err(CohortError::DuplicateCase(record.case_id));
        }
        self.cases.push(record);
        Ok(())
    }

    pub fn get(&self, case_id: &str) -> Option<&CaseRecord> {
        self.cases.iter().find(|c| c.case_id == case_id)
    }

    pub fn cases(&self) -> &[CaseRecord] {
        &self.cases
    }

    pub fn len(&self) -> usize {
        self.cases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cases.is_empty()
    }

    /// Number of cases per diagnosis, indexed by label code.
    pub fn class_counts(&self) -> [usize; 8] {
        let mut counts = [0usize; 8];
        for c in &self.cases {
            counts[c.diagnosis.code()] += 1;
        }
        counts
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl FromStr for Split {
    type Err = CohortError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(CohortError::UnknownSplit(other.to_string())),
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Case-level split, listed in cohort order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub seed: u64,
    pub fractions: [f64; 3],
    pub assignments: Vec<(String, Split)>,
}

impl SplitAssignment {
    pub fn get(&self, case_id: &str) -> Option<Split> {
        self.assignments.iter().find(|(id, _)| id == case_id).map(|&(_, s)| s)
    }

    pub fn cases_in(&self, split: Split) -> impl Iterator<Item = &str> {
        self.assignments.iter().filter(move |(_, s)| *s == split).map(|(id, _)| id.as_str())
    }
}

pub fn validate_fractions(fractions: [f64; 3]) -> Result<(), CohortError> {
    let ok = fractions.iter().all(|f| f.is_finite() && *f >= 0.0)
        && (fractions.iter().sum::<f64>() - 1.0).abs() <= 1e-9;
    if ok {
        Ok(())
    } else {
        Err(CohortError::DegenerateFractions(fractions))
    }
}

/// Per-split case counts for a class of `n` cases.
///
/// Each split gets `floor(n·f)`; the leftover cases (at most two) go one each
/// to Train, then Val, then Test, skipping splits whose quota had no
/// fractional part. Every count therefore lies strictly within one case of
/// its exact quota.
pub fn split_quotas(n: usize, fractions: [f64; 3]) -> [usize; 3] {
    let mut counts = [0usize; 3];
    let mut has_remainder = [false; 3];
    for (i, f) in fractions.iter().enumerate() {
        let exact = n as f64 * f;
        let floor = (exact + 1e-9).floor();
        counts[i] = floor as usize;
        has_remainder[i] = exact - floor > 1e-9;
    }
    let mut leftover = n - counts.iter().sum::<usize>().min(n);
    for i in 0..3 {
        if leftover == 0 {
            break;
        }
        if has_remainder[i] {
            counts[i] += 1;
            leftover -= 1;
        }
    }
    // Only reachable through rounding slop in the fractions.
    counts[0] += leftover;
    counts
}

/// Stratified case-level split. Cases of each diagnosis are shuffled with a
/// stream derived from `(seed, diagnosis)` and cut by [`split_quotas`].
pub fn stratified_split(
    cohort: &Cohort,
    fractions: [f64; 3],
    seed: u64,
) -> Result<SplitAssignment, CohortError> {
    validate_fractions(fractions)?;
    if cohort.is_empty() {
        return Err(CohortError::EmptyCohort);
    }
    let mut split_of = alloc::vec![Split::Train; cohort.len()];
    for label in DiagnosisLabel::ALL {
        let mut members: Vec<usize> = cohort
            .cases()
            .iter()
            .enumerate()
            .filter(|(_, c)| c.diagnosis == label)
            .map(|(i, _)| i)
            .collect();
        if members.is_empty() {
            continue;
        }
        let mut rng = rng::labeled_stream(seed, "split", label.code() as u64);
        members.shuffle(&mut rng);
        let [train, val, _] = split_quotas(members.len(), fractions);
        for (rank, &idx) in members.iter().enumerate() {
            split_of[idx] = if rank < train {
                Split::Train
            } else if rank < train + val {
                Split::Val
            } else {
                Split::Test
            };
        }
    }
    let assignments = cohort
        .cases()
        .iter()
        .zip(split_of)
        .map(|(c, s)| (c.case_id.clone(), s))
        .collect();
    Ok(SplitAssignment { seed, fractions, assignments })
}

/// Label granularity used for training and evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LabelScheme {
    EightWay,
    FiveWay,
    DlbclBinary,
}

impl LabelScheme {
    pub fn num_classes(self) -> usize {
        self.class_names().len()
    }

    pub fn class_names(self) -> &'static [&'static str] {
        match self {
            Self::EightWay => &["DLBCL", "CHL", "AggBCL", "FL", "MCL", "MZL", "NKTCL", "TCL"],
            Self::FiveWay => &["BCell", "CHL", "FLMZL", "MCL", "TCell"],
            Self::DlbclBinary => &["DLBCL", "NonDLBCL"],
        }
    }
}

impl FromStr for LabelScheme {
    type Err = CohortError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "eight-way" | "EightWay" => Ok(Self::EightWay),
            "five-way" | "FiveWay" => Ok(Self::FiveWay),
            "dlbcl-binary" | "DlbclBinary" => Ok(Self::DlbclBinary),
            other => Err(CohortError::UnknownLabel(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FiveWayGroup {
    BCell,
    Chl,
    FlMzl,
    Mcl,
    TCell,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BinaryGroup {
    Dlbcl,
    NonDlbcl,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum GroupedLabel {
    EightWay(DiagnosisLabel),
    FiveWay(FiveWayGroup),
    Binary(BinaryGroup),
}

impl GroupedLabel {
    /// Class index within the scheme.
    pub fn index(self) -> usize {
        match self {
            Self::EightWay(l) => l.code(),
            Self::FiveWay(g) => g as usize,
            Self::Binary(g) => g as usize,
        }
    }

    pub fn scheme(self) -> LabelScheme {
        match self {
            Self::EightWay(_) => LabelScheme::EightWay,
            Self::FiveWay(_) => LabelScheme::FiveWay,
            Self::Binary(_) => LabelScheme::DlbclBinary,
        }
    }

    pub fn name(self) -> &'static str {
        self.scheme().class_names()[self.index()]
    }
}

pub fn group_label(label: DiagnosisLabel, scheme: LabelScheme) -> GroupedLabel {
    use DiagnosisLabel::*;
    match scheme {
        LabelScheme::EightWay => GroupedLabel::EightWay(label),
        LabelScheme::FiveWay => GroupedLabel::FiveWay(match label {
            Dlbcl | AggBcl => FiveWayGroup::BCell,
            Chl => FiveWayGroup::Chl,
            Fl | Mzl => FiveWayGroup::FlMzl,
            Mcl => FiveWayGroup::Mcl,
            Nktcl | Tcl => FiveWayGroup::TCell,
        }),
        LabelScheme::DlbclBinary => GroupedLabel::Binary(match label {
            Dlbcl => BinaryGroup::Dlbcl,
            _ => BinaryGroup::NonDlbcl,
        }),
    }
}
