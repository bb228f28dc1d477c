// Manifest, features and ground-truth CSV files.

use std::path::{Path, PathBuf};

use sonar_atr::synthgen::{BoundingBox, GroundTruth, TargetClass};
use sonar_atr::weights_io::read_image;
use sonar_atr::{FeatureSet, LabeledChip, LabeledChipSet};

use crate::{CliError, CliResult};

pub const MANIFEST_HEADER: [&str; 2] = ["path", "label"];
pub const TRUTH_HEADER: [&str; 5] = ["class", "x", "y", "width", "height"];

fn data_err(path: &Path, what: impl std::fmt::Display) -> CliError {
    CliError::Data(format!("{}: {what}", path.display()))
}

/// Attaches the path to format errors raised while loading `path`.
pub fn at<T>(path: &Path, r: sonar_atr::Result<T>) -> CliResult<T> {
    r.map_err(|e| match e {
        e @ sonar_atr::Error::File { .. } => CliError::from(e),
        e => data_err(path, e),
    })
}

fn reader(path: &Path) -> CliResult<csv::Reader<std::fs::File>> {
    csv::Reader::from_path(path).map_err(|e| data_err(path, e))
}

fn writer(path: &Path) -> CliResult<csv::Writer<std::fs::File>> {
    csv::Writer::from_path(path).map_err(|e| data_err(path, e))
}

fn check_header(path: &Path, rdr: &mut csv::Reader<std::fs::File>, expected: &[&str]) -> CliResult<()> {
    let header = rdr.headers().map_err(|e| data_err(path, e))?;
    if header.iter().ne(expected.iter().copied()) {
        return Err(data_err(path, format!("expected header {}", expected.join(","))));
    }
    Ok(())
}

/// Index of `name`, appending it on first sight.
fn intern(names: &mut Vec<String>, name: &str) -> usize {
    match names.iter().position(|n| n == name) {
        Some(i) => i,
        None => {
            names.push(name.to_string());
            names.len() - 1
        }
    }
}

/// Loads every chip listed in a `path,label` manifest. Relative paths are
/// resolved against the manifest's directory; classes are numbered in order
/// of first appearance.
pub fn read_manifest(path: &Path) -> CliResult<LabeledChipSet> {
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut rdr = reader(path)?;
    check_header(path, &mut rdr, &MANIFEST_HEADER)?;
    let mut names = Vec::new();
    let mut chips = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let row = row.map_err(|e| data_err(path, e))?;
        let (file, label) = (&row[0], &row[1]);
        if label.is_empty() {
            return Err(data_err(path, format!("row {}: empty label", i + 1)));
        }
        let file = base.join(file);
        let image = at(&file, read_image(&file))?;
        chips.push(LabeledChip {
            image,
            label: intern(&mut names, label),
        });
    }
    if chips.is_empty() {
        return Err(data_err(path, "manifest lists no chips"));
    }
    Ok(LabeledChipSet::new(names, chips)?)
}

pub fn write_manifest(path: &Path, rows: &[(PathBuf, String)]) -> CliResult<()> {
    let mut w = writer(path)?;
    let mut emit = |rec: &[&str]| w.write_record(rec).map_err(|e| data_err(path, e));
    emit(&MANIFEST_HEADER)?;
    for (file, label) in rows {
        let file = file.to_string_lossy().replace('\\', "/");
        emit(&[&file, label])?;
    }
    w.flush().map_err(|e| data_err(path, e))
}

/// Features CSV: `label,f0,...,f{d-1}` with one row per chip.
pub fn write_features(path: &Path, labels: &[&str], vectors: &[Vec<f64>]) -> CliResult<()> {
    let dim = vectors.first().map_or(0, Vec::len);
    let mut w = writer(path)?;
    let mut header = vec!["label".to_string()];
    header.extend((0..dim).map(|j| format!("f{j}")));
    w.write_record(&header).map_err(|e| data_err(path, e))?;
    for (label, v) in labels.iter().zip(vectors) {
        let mut rec = vec![label.to_string()];
        rec.extend(v.iter().map(|x| format!("{x:e}")));
        w.write_record(&rec).map_err(|e| data_err(path, e))?;
    }
    w.flush().map_err(|e| data_err(path, e))
}

/// Reads a features CSV. Rows labeled `negative_label` are returned separately
/// and excluded from the class list.
pub fn read_features(path: &Path, negative_label: Option<&str>) -> CliResult<(FeatureSet, Vec<Vec<f64>>)> {
    let mut rdr = reader(path)?;
    let header = rdr.headers().map_err(|e| data_err(path, e))?.clone();
    let dim = header.len().saturating_sub(1);
    if header.get(0) != Some("label") || dim == 0 {
        return Err(data_err(path, "expected header label,f0,f1,..."));
    }
    let mut names = Vec::new();
    let mut vectors = Vec::new();
    let mut labels = Vec::new();
    let mut negatives = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let row = row.map_err(|e| data_err(path, e))?;
        let v = row
            .iter()
            .skip(1)
            .map(|s| s.trim().parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| data_err(path, format!("row {}: {e}", i + 1)))?;
        if negative_label == Some(&row[0]) {
            negatives.push(v);
        } else {
            labels.push(intern(&mut names, &row[0]));
            vectors.push(v);
        }
    }
    if vectors.is_empty() {
        return Err(data_err(path, "no labeled rows"));
    }
    Ok((FeatureSet::new(names, vectors, labels)?, negatives))
}

pub fn write_truth(path: &Path, truth: &[GroundTruth]) -> CliResult<()> {
    let mut w = writer(path)?;
    w.write_record(TRUTH_HEADER).map_err(|e| data_err(path, e))?;
    for t in truth {
        let b = &t.bbox;
        w.write_record([
            t.class.name().to_string(),
            b.x.to_string(),
            b.y.to_string(),
            b.width.to_string(),
            b.height.to_string(),
        ])
        .map_err(|e| data_err(path, e))?;
    }
    w.flush().map_err(|e| data_err(path, e))
}

pub fn read_truth(path: &Path) -> CliResult<Vec<GroundTruth>> {
    let mut rdr = reader(path)?;
    check_header(path, &mut rdr, &TRUTH_HEADER)?;
    let mut out = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let row = row.map_err(|e| data_err(path, e))?;
        let bad = |e: &dyn std::fmt::Display| data_err(path, format!("row {}: {e}", i + 1));
        let class = TargetClass::parse(&row[0]).map_err(|e| bad(&e))?;
        let mut nums = [0usize; 4];
        for (k, n) in nums.iter_mut().enumerate() {
            *n = row[k + 1].trim().parse().map_err(|e| bad(&e))?;
        }
        out.push(GroundTruth {
            class,
            bbox: BoundingBox {
                x: nums[0],
                y: nums[1],
                width: nums[2],
                height: nums[3],
            },
        });
    }
    Ok(out)
}
