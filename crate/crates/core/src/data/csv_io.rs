//! CSV ingestion and serialization.
//!
//! Two schemas share one loader, distinguished by header:
//!
//! - raw:      `subject_id,label,sample_rate_hz,sc_window,ecg_window` with
//!   windows as semicolon-separated decimal samples (empty cell = absent);
//! - features: `subject_id,label,f00..f16,mask00..mask16`.
//!
//! Floats are written with Rust's shortest round-trip formatting, so
//! loading a saved dataset reproduces every value bit for bit.

use super::{ClassLabel, DataError, Dataset, GroundTruth, Sample};
use crate::features::{FeatureVector, NUM_FEATURES};
use crate::signal::SampledSignal;
use std::fmt::Write as _;
use std::io::{Read, Write};
use std::path::Path;

const RAW_HEADER: [&str; 5] = ["subject_id", "label", "sample_rate_hz", "sc_window", "ecg_window"];

fn feature_header() -> Vec<String> {
    let mut h = vec!["subject_id".to_string(), "label".to_string()];
    h.extend((0..NUM_FEATURES).map(|i| format!("f{i:02}")));
    h.extend((0..NUM_FEATURES).map(|i| format!("mask{i:02}")));
    h
}

fn parse_err(row: usize, msg: impl Into<String>) -> DataError {
    DataError::Parse {
        row,
        msg: msg.into(),
    }
}

/// Loads either schema, dispatching on the header row.
pub fn load_csv<R: Read>(reader: R) -> Result<Dataset, DataError> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(reader);
    let header: Vec<String> = rdr
        .headers()?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();

    if header == RAW_HEADER {
        load_raw(rdr)
    } else if header == feature_header() {
        load_features(rdr)
    } else {
        let raw_missing: Vec<&str> = RAW_HEADER
            .iter()
            .filter(|c| !header.iter().any(|h| h == *c))
            .copied()
            .collect();
        Err(DataError::Schema(format!(
            "header {header:?} matches neither the raw nor the feature schema \
             (raw schema columns missing: {raw_missing:?})"
        )))
    }
}

pub fn load_csv_path(path: &Path) -> Result<Dataset, DataError> {
    load_csv(std::fs::File::open(path)?)
}

fn parse_label(text: &str, row: usize) -> Result<ClassLabel, DataError> {
    text.parse::<ClassLabel>().map_err(|_| DataError::Label {
        row,
        label: text.to_string(),
    })
}

fn parse_window(cell: &str, rate: f64, row: usize, what: &str) -> Result<Option<SampledSignal>, DataError> {
    if cell.is_empty() {
        return Ok(None);
    }
    let mut samples = Vec::new();
    for (i, tok) in cell.split(';').enumerate() {
        let v: f64 = tok
            .parse()
            .map_err(|_| parse_err(row, format!("{what} sample {i}: invalid number {tok:?}")))?;
        samples.push(v);
    }
    SampledSignal::new(samples, rate)
        .map(Some)
        .map_err(|e| parse_err(row, format!("{what}: {e}")))
}

fn load_raw<R: Read>(mut rdr: csv::Reader<R>) -> Result<Dataset, DataError> {
    let mut samples = Vec::new();
    let mut expected_lens: Option<(Option<usize>, Option<usize>, f64)> = None;

    for (i, record) in rdr.records().enumerate() {
        let row = i + 1;
        let record = record?;
        if record.len() != RAW_HEADER.len() {
            return Err(parse_err(
                row,
                format!("expected {} columns, got {}", RAW_HEADER.len(), record.len()),
            ));
        }
        let label = parse_label(&record[1], row)?;
        let rate: f64 = record[2]
            .parse()
            .map_err(|_| parse_err(row, format!("invalid sample_rate_hz {:?}", &record[2])))?;
        let sc = parse_window(&record[3], rate, row, "sc_window")?;
        let ecg = parse_window(&record[4], rate, row, "ecg_window")?;

        let lens = (
            sc.as_ref().map(|s| s.len()),
            ecg.as_ref().map(|s| s.len()),
            rate,
        );
        match &expected_lens {
            None => expected_lens = Some(lens),
            Some(expected) if *expected != lens => {
                return Err(parse_err(
                    row,
                    format!("window shape {lens:?} differs from first row {expected:?}"),
                ));
            }
            _ => {}
        }

        let sample = Sample {
            subject_id: record[0].to_string(),
            label,
            sc_window: sc,
            ecg_window: ecg,
            features: None,
        };
        sample.validate().map_err(|e| parse_err(row, e.to_string()))?;
        samples.push(sample);
    }
    Dataset::new(samples)
}

fn load_features<R: Read>(mut rdr: csv::Reader<R>) -> Result<Dataset, DataError> {
    let mut samples = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let row = i + 1;
        let record = record?;
        let expected_cols = 2 + 2 * NUM_FEATURES;
        if record.len() != expected_cols {
            return Err(parse_err(
                row,
                format!("expected {expected_cols} columns, got {}", record.len()),
            ));
        }
        let label = parse_label(&record[1], row)?;
        let mut values = [0.0; NUM_FEATURES];
        let mut valid = [false; NUM_FEATURES];
        for f in 0..NUM_FEATURES {
            values[f] = record[2 + f]
                .parse()
                .map_err(|_| parse_err(row, format!("feature f{f:02}: invalid number")))?;
            valid[f] = match &record[2 + NUM_FEATURES + f] {
                "1" => true,
                "0" => false,
                other => {
                    return Err(parse_err(
                        row,
                        format!("mask{f:02}: expected 0 or 1, got {other:?}"),
                    ))
                }
            };
        }
        samples.push(Sample {
            subject_id: record[0].to_string(),
            label,
            sc_window: None,
            ecg_window: None,
            features: Some(FeatureVector::from_raw(values, valid)),
        });
    }
    Dataset::new(samples)
}

fn join_window(signal: &SampledSignal) -> String {
    let mut s = String::with_capacity(signal.len() * 8);
    for (i, v) in signal.samples().iter().enumerate() {
        if i > 0 {
            s.push(';');
        }
        let _ = write!(s, "{v}");
    }
    s
}

/// Writes the raw schema. Every sample must carry at least one window.
pub fn save_raw_csv<W: Write>(ds: &Dataset, writer: W) -> Result<(), DataError> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(RAW_HEADER)?;
    for (i, sample) in ds.samples().iter().enumerate() {
        let rate = sample
            .sc_window
            .as_ref()
            .or(sample.ecg_window.as_ref())
            .map(|w| w.sample_rate_hz())
            .ok_or_else(|| {
                DataError::Schema(format!(
                    "sample {i} has no raw windows; use the feature schema instead"
                ))
            })?;
        wtr.write_record([
            sample.subject_id.as_str(),
            sample.label.as_str(),
            &format!("{rate}"),
            &sample.sc_window.as_ref().map(join_window).unwrap_or_default(),
            &sample.ecg_window.as_ref().map(join_window).unwrap_or_default(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

/// Writes the feature schema. Every sample must carry features.
pub fn save_feature_csv<W: Write>(ds: &Dataset, writer: W) -> Result<(), DataError> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(feature_header())?;
    for (i, sample) in ds.samples().iter().enumerate() {
        let fv = sample.features.as_ref().ok_or_else(|| {
            DataError::Schema(format!("sample {i} has no features; run extraction first"))
        })?;
        let mut record: Vec<String> = Vec::with_capacity(2 + 2 * NUM_FEATURES);
        record.push(sample.subject_id.clone());
        record.push(sample.label.as_str().to_string());
        record.extend(fv.values().iter().map(|v| format!("{v}")));
        record.extend(fv.valid().iter().map(|&m| if m { "1" } else { "0" }.to_string()));
        wtr.write_record(record)?;
    }
    wtr.flush()?;
    Ok(())
}

/// Sidecar with each synthetic window's generating parameters; beat times
/// are semicolon-separated seconds.
pub fn save_ground_truth_csv<W: Write>(gt: &GroundTruth, writer: W) -> Result<(), DataError> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record([
        "sample_index",
        "subject_id",
        "label",
        "class_effect",
        "subject_gain",
        "hr_bpm",
        "beat_times",
    ])?;
    for r in &gt.records {
        let beats = r
            .beat_times_s
            .iter()
            .map(|t| format!("{t}"))
            .collect::<Vec<_>>()
            .join(";");
        wtr.write_record([
            r.sample_index.to_string(),
            r.subject_id.clone(),
            r.label.as_str().to_string(),
            format!("{}", r.class_effect),
            format!("{}", r.subject_gain),
            format!("{}", r.hr_bpm),
            beats,
        ])?;
    }
    wtr.flush()?;
    Ok(())
}
