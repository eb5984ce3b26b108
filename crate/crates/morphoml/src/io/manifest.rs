//! Case manifest and split files.

use std::collections::BTreeMap;
use std::path::Path;

use morphoml_core::cohort::{CaseRecord, Cohort, DiagnosisLabel, IhcScore, Split, SplitAssignment, StainRegistry};

use crate::error::{Error, Result};

const FIXED: [&str; 3] = ["case_id", "diagnosis", "core_ids"];

/// Reads `case_id,diagnosis,core_ids,<stain>...`. Every error names the
/// 1-based line it came from; stain columns must be registered.
pub fn load_manifest(path: &Path, stains: &StainRegistry) -> Result<Cohort> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path).map_err(|e| file_err(path, e))?;
    let header = reader.headers().map_err(|e| file_err(path, e))?.clone();
    if header.len() < 3 || header.iter().take(3).ne(FIXED) {
        return Err(Error::data(format!("{}: header must start with case_id,diagnosis,core_ids", path.display())));
    }
    let stain_cols: Vec<String> = header.iter().skip(3).map(str::to_string).collect();
    for s in &stain_cols {
        stains.check(s).map_err(|e| Error::data(format!("{}: header: {e}", path.display())))?;
    }
    let mut cohort = Cohort::new();
    for record in reader.records() {
        let record = record.map_err(|e| file_err(path, e))?;
        let line = record.position().map_or(0, |p| p.line());
        let at = |e: morphoml_core::cohort::CohortError| Error::data(format!("{} line {line}: {e}", path.display()));
        let diagnosis: DiagnosisLabel = record[1].parse().map_err(at)?;
        let cores = record[2].split(';').map(str::trim).filter(|c| !c.is_empty()).map(str::to_string).collect();
        let mut case = CaseRecord::new(&record[0], diagnosis, cores).map_err(at)?;
        for (stain, token) in stain_cols.iter().zip(record.iter().skip(3)) {
            let score = IhcScore::parse(token).map_err(at)?;
            if score != IhcScore::Missing {
                case.ihc_scores.insert(stain.clone(), score);
            }
        }
        cohort.push(case).map_err(at)?;
    }
    Ok(cohort)
}

pub fn write_manifest(path: &Path, cohort: &Cohort, stain_cols: &[String]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| file_err(path, e))?;
    let header = FIXED.iter().map(|s| s.to_string()).chain(stain_cols.iter().cloned());
    w.write_record(header)?;
    for c in cohort.cases() {
        let mut row = vec![c.case_id.clone(), c.diagnosis.name().to_string(), c.core_ids.join(";")];
        row.extend(stain_cols.iter().map(|s| c.ihc(s).token().to_string()));
        w.write_record(row)?;
    }
    w.flush().map_err(Error::io(path))
}

/// Writes `case_id,split` with the seed and fractions as leading comments.
pub fn write_split(path: &Path, split: &SplitAssignment) -> Result<()> {
    let f = split.fractions;
    let mut out = format!("# seed: {}\n# fractions: {},{},{}\ncase_id,split\n", split.seed, f[0], f[1], f[2]);
    for (id, s) in &split.assignments {
        out.push_str(&format!("{id},{s}\n"));
    }
    std::fs::write(path, out).map_err(Error::io(path))
}

/// Reads a split file. Comment metadata is optional; missing values read
/// back as seed 0 and fractions of zero.
pub fn load_split(path: &Path) -> Result<SplitAssignment> {
    let text = std::fs::read_to_string(path).map_err(Error::io(path))?;
    let mut meta = BTreeMap::new();
    for line in text.lines().filter_map(|l| l.strip_prefix('#')) {
        if let Some((k, v)) = line.split_once(':') {
            meta.insert(k.trim().to_string(), v.trim().to_string());
        }
    }
    let seed = meta.get("seed").and_then(|s| s.parse().ok()).unwrap_or(0);
    let mut fractions = [0.0; 3];
    if let Some(f) = meta.get("fractions") {
        for (slot, v) in fractions.iter_mut().zip(f.split(',')) {
            *slot = v.trim().parse().unwrap_or(0.0);
        }
    }
    let mut reader = csv::ReaderBuilder::new().comment(Some(b'#')).trim(csv::Trim::All).from_reader(text.as_bytes());
    let header = reader.headers()?.clone();
    if header.iter().ne(["case_id", "split"]) {
        return Err(Error::data(format!("{}: header must be case_id,split", path.display())));
    }
    let mut assignments = Vec::new();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        let split: Split =
            record[1].parse().map_err(|e| Error::data(format!("{} line {line}: {e}", path.display())))?;
        assignments.push((record[0].to_string(), split));
    }
    Ok(SplitAssignment { seed, fractions, assignments })
}

/// Fails unless every cohort case has exactly one split entry.
pub fn check_split_covers(split: &SplitAssignment, cohort: &Cohort) -> Result<()> {
    for c in cohort.cases() {
        if split.get(&c.case_id).is_none() {
            return Err(Error::validation(format!("split file has no entry for case `{}`", c.case_id)));
        }
    }
    if split.assignments.len() != cohort.len() {
        return Err(Error::validation("split file lists cases that are not in the manifest"));
    }
    Ok(())
}

fn file_err(path: &Path, e: csv::Error) -> Error {
    match e.kind() {
        csv::ErrorKind::Io(_) => match e.into_kind() {
            csv::ErrorKind::Io(source) => Error::Io { path: path.to_path_buf(), source },
            _ => unreachable!(),
        },
        _ => Error::data(format!("{}: {e}", path.display())),
    }
}

pub(crate) fn csv_file_err(path: &Path) -> impl FnOnce(csv::Error) -> Error + '_ {
    move |e| file_err(path, e)
}
