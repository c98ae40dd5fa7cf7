use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Vec2;

/// Where a batch of samples came from.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub tree: String,
    pub sampler: String,
    pub seed: u64,
}

/// An `n × 2` sample matrix with provenance.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleBatch {
    points: Vec<Vec2>,
    pub provenance: Provenance,
}

impl SampleBatch {
    pub fn new(points: Vec<Vec2>, tree: impl Into<String>, sampler: impl Into<String>, seed: u64) -> Self {
        Self { points, provenance: Provenance { tree: tree.into(), sampler: sampler.into(), seed } }
    }

    pub fn from_points(points: Vec<Vec2>) -> Self {
        Self { points, provenance: Provenance::default() }
    }

    pub fn points(&self) -> &[Vec2] {
        &self.points
    }

    pub fn into_points(self) -> Vec<Vec2> {
        self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn all_finite(&self) -> bool {
        self.points.iter().all(|p| p[0].is_finite() && p[1].is_finite())
    }

    /// CSV with an `x0,x1` header, LF line endings and round-trip precision.
    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(48 * self.points.len() + 6);
        out.push_str("x0,x1\n");
        for p in &self.points {
            writeln!(out, "{:.16e},{:.16e}", p[0], p[1]).expect("write to string");
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        match lines.next() {
            Some("x0,x1") => {}
            other => return Err(Error::Argument(format!("expected `x0,x1` header, found {other:?}"))),
        }
        let mut points = Vec::new();
        for (i, line) in lines.enumerate() {
            if line.is_empty() {
                continue;
            }
            let parse = |s: Option<&str>| -> Result<f64> {
                s.and_then(|v| v.trim().parse().ok())
                    .ok_or_else(|| Error::Argument(format!("bad sample row {}: `{line}`", i + 2)))
            };
            let mut f = line.split(',');
            let p = [parse(f.next())?, parse(f.next())?];
            if f.next().is_some() {
                return Err(Error::Argument(format!("bad sample row {}: `{line}`", i + 2)));
            }
            points.push(p);
        }
        Ok(Self::from_points(points))
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv())?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        Self::from_csv(&fs::read_to_string(path)?)
    }
}
