//! CSV formats.
//!
//! Count files: `trial,bin_index,t_us,counts`, with `t_us` the start of the bin.
//! Curve files: `x,y,yerr`.

use std::path::Path;

use cavity_detect::counting::CountStream;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CountRecord {
    pub trial: usize,
    pub bin_index: usize,
    pub t_us: f64,
    pub counts: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub x: f64,
    pub y: f64,
    pub yerr: f64,
}

fn to_csv<T: Serialize>(rows: impl IntoIterator<Item = T>) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).expect("in-memory csv write");
    }
    w.into_inner().expect("in-memory csv flush")
}

pub fn counts_to_csv(stream: &CountStream, start_ms: f64) -> Vec<u8> {
    let bw = stream.bin_width();
    let bins = stream.bins();
    to_csv(stream.counts().iter().enumerate().map(|(i, &k)| CountRecord {
        trial: i / bins,
        bin_index: i % bins,
        t_us: start_ms * 1000.0 + (i % bins) as f64 * bw,
        counts: k,
    }))
}

pub fn curve_to_csv(points: &[CurvePoint]) -> Vec<u8> {
    to_csv(points.iter().copied())
}

fn parse_rows<T: for<'de> Deserialize<'de>>(bytes: &[u8], path: &Path) -> Result<Vec<T>, CliError> {
    let mut r = csv::Reader::from_reader(bytes);
    let rows = r
        .deserialize()
        .enumerate()
        .map(|(i, row)| row.map_err(|e| CliError::input(path, format!("record {}: {e}", i + 1))))
        .collect::<Result<Vec<T>, _>>()?;
    if rows.is_empty() {
        return Err(CliError::input(path, "no data records"));
    }
    Ok(rows)
}

#[cfg(test)]
pub fn parse_curve(bytes: &[u8], path: &Path) -> Result<Vec<CurvePoint>, CliError> {
    parse_rows(bytes, path)
}

/// Parses a counts file into a stream and the start time in ms. The bin width
/// is read from the time column, or taken from `fallback_bin_width` when every
/// trial has a single bin.
pub fn parse_counts(bytes: &[u8], path: &Path, fallback_bin_width: f64) -> Result<(CountStream, f64), CliError> {
    let rows: Vec<CountRecord> = parse_rows(bytes, path)?;
    let trials = rows.iter().map(|r| r.trial).max().unwrap_or(0) + 1;
    let bins = rows.iter().map(|r| r.bin_index).max().unwrap_or(0) + 1;
    if rows.len() != trials * bins {
        return Err(CliError::input(
            path,
            format!("{} records do not fill {trials} trials × {bins} bins", rows.len()),
        ));
    }
    let mut counts = vec![None; trials * bins];
    let mut times = vec![f64::NAN; bins];
    for r in &rows {
        let slot = &mut counts[r.trial * bins + r.bin_index];
        if slot.is_some() {
            return Err(CliError::input(
                path,
                format!("duplicate record for trial {} bin {}", r.trial, r.bin_index),
            ));
        }
        *slot = Some(r.counts);
        if r.trial == 0 {
            times[r.bin_index] = r.t_us;
        }
    }
    let counts: Vec<u64> = counts.into_iter().map(|c| c.expect("filled above")).collect();
    let bin_width = if bins > 1 {
        times[1] - times[0]
    } else {
        fallback_bin_width
    };
    let stream = CountStream::new(bin_width, trials, bins, counts).map_err(|e| CliError::input(path, e.to_string()))?;
    Ok((stream, times[0] / 1000.0))
}

pub fn read_file(path: &Path) -> Result<Vec<u8>, CliError> {
    std::fs::read(path).map_err(|e| CliError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::path::PathBuf;

    #[test]
    fn counts_round_trip() {
        let s = CountStream::new(2.0, 3, 4, (0..12).collect()).unwrap();
        let bytes = counts_to_csv(&s, 1.5);
        let text = String::from_utf8(bytes.clone()).unwrap();
        assert!(
            text.starts_with("trial,bin_index,t_us,counts\n0,0,1500.0,0\n"),
            "{text}"
        );
        let (back, start) = parse_counts(&bytes, &PathBuf::from("x"), 1.0).unwrap();
        assert_eq!(back, s);
        assert_eq!(start, 1.5);
    }

    #[test]
    fn curve_round_trip_keeps_full_precision() {
        let pts = vec![
            CurvePoint {
                x: 0.1,
                y: 1.0 / 3.0,
                yerr: 1e-17,
            },
            CurvePoint {
                x: 2.0,
                y: f64::MAX,
                yerr: 0.0,
            },
        ];
        let back = parse_curve(&curve_to_csv(&pts), &PathBuf::from("c")).unwrap();
        assert_eq!(back, pts);
    }

    #[test]
    fn malformed_counts_are_rejected() {
        let p = PathBuf::from("bad.csv");
        assert!(parse_counts(b"", &p, 1.0).is_err());
        assert!(parse_counts(b"trial,bin_index,t_us,counts\n", &p, 1.0).is_err());
        assert!(parse_counts(b"trial,bin_index,t_us,counts\n0,0,0,1\n0,2,4,1\n", &p, 1.0).is_err());
        assert!(parse_counts(b"trial,bin_index,t_us,counts\n0,0,0,x\n", &p, 1.0).is_err());
        assert!(parse_counts(b"trial,bin_index,t_us,counts\n0,0,0,1\n0,0,0,1\n", &p, 1.0).is_err());
    }

    #[test]
    fn single_bin_uses_fallback_width() {
        let (s, _) = parse_counts(
            b"trial,bin_index,t_us,counts\n0,0,0,3\n1,0,0,4\n",
            &PathBuf::from("s"),
            5.0,
        )
        .unwrap();
        assert_eq!(s.bin_width(), 5.0);
        assert_eq!(s.trials(), 2);
    }
}
