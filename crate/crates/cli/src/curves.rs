//! Rate-PSNR curve files: one JSON record per line,
//! `{dataset, task, model_id, lambda, bpp, psnr}`.

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use std::path::Path;

use jicd_core::rd::{RDCurve, RDPoint, Task};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRecord {
    pub dataset: String,
    pub task: String,
    pub model_id: u64,
    pub lambda: Option<f64>,
    pub bpp: f64,
    pub psnr: f64,
}

impl CurveRecord {
    pub fn from_point(dataset: &str, p: &RDPoint) -> Self {
        Self {
            dataset: dataset.to_string(),
            task: p.task.as_str().to_string(),
            model_id: p.model_id,
            lambda: p.lambda,
            bpp: p.bpp,
            psnr: p.psnr,
        }
    }

    pub fn to_point(&self) -> Result<RDPoint> {
        let task = match self.task.as_str() {
            "denoise" => Task::Denoise,
            "noisy_recon" => Task::NoisyRecon,
            other => bail!("unknown task {other:?} in curve record"),
        };
        Ok(RDPoint {
            bpp: self.bpp,
            psnr: self.psnr,
            task,
            model_id: self.model_id,
            lambda: self.lambda,
        })
    }
}

pub fn write_curve_file(path: &Path, records: &[CurveRecord]) -> Result<()> {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    std::fs::write(path, out).with_context(|| format!("cannot write {}", path.display()))?;
    Ok(())
}

pub fn read_curve_file(path: &Path) -> Result<Vec<CurveRecord>> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read curve file {}", path.display()))?;
    let mut records = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let r: CurveRecord = serde_json::from_str(line)
            .with_context(|| format!("{}:{}: bad curve record", path.display(), ln + 1))?;
        records.push(r);
    }
    Ok(records)
}

/// Builds the RD curve of one task from a record set.
pub fn curve_for_task(records: &[CurveRecord], task: Task) -> Result<RDCurve> {
    let points: Vec<RDPoint> = records
        .iter()
        .filter(|r| r.task == task.as_str())
        .map(|r| r.to_point())
        .collect::<Result<_>>()?;
    RDCurve::new(points).map_err(|e| anyhow::anyhow!("invalid curve: {e}"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn curve_records_round_trip_losslessly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("curves.jsonl");
        let records = vec![
            CurveRecord {
                dataset: "synthetic".into(),
                task: "denoise".into(),
                model_id: 77,
                lambda: Some(0.013),
                bpp: 0.1234567890123,
                psnr: 31.75,
            },
            CurveRecord {
                dataset: "synthetic".into(),
                task: "noisy_recon".into(),
                model_id: 77,
                lambda: Some(0.013),
                bpp: 0.9,
                psnr: 19.5,
            },
        ];
        write_curve_file(&path, &records).unwrap();
        let back = read_curve_file(&path).unwrap();
        assert_eq!(back, records);
        // Byte-identical on rewrite.
        let first = std::fs::read(&path).unwrap();
        write_curve_file(&path, &back).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), first);
    }

    #[test]
    fn task_filter_builds_curves() {
        let mk = |bpp: f64, psnr: f64, task: &str| CurveRecord {
            dataset: "d".into(),
            task: task.into(),
            model_id: 0,
            lambda: None,
            bpp,
            psnr,
        };
        let records = vec![
            mk(0.4, 32.0, "denoise"),
            mk(0.2, 30.0, "denoise"),
            mk(0.8, 34.0, "denoise"),
            mk(1.6, 36.0, "denoise"),
            mk(0.5, 20.0, "noisy_recon"),
        ];
        let curve = curve_for_task(&records, Task::Denoise).unwrap();
        assert_eq!(curve.points().len(), 4);
        assert!(curve.points()[0].bpp < curve.points()[3].bpp);
    }
}
