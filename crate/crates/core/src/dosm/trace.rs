use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;

/// State after one outer step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub step: usize,
    pub sigma: f64,
    /// `|y - A x̂₀|₂`
    pub residual: f64,
    pub psnr: Option<f64>,
    pub ssim: Option<f64>,
    pub corrector_skips: usize,
    pub channel_norms: Vec<f64>,
}

/// One record per outer step, in execution order (descending `step`).
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ReconTrace {
    pub records: Vec<TraceRecord>,
}

impl ReconTrace {
    pub fn record(&self, step: usize) -> Option<&TraceRecord> {
        self.records.iter().find(|r| r.step == step)
    }

    pub fn total_skips(&self) -> usize {
        self.records.iter().map(|r| r.corrector_skips).sum()
    }

    /// Columns `step,sigma,residual,psnr,ssim,skips,norm_0..`; missing
    /// metrics are empty fields.
    pub fn to_csv(&self) -> String {
        let n = self.records.first().map_or(0, |r| r.channel_norms.len());
        let mut out = String::from("step,sigma,residual,psnr,ssim,skips");
        for c in 0..n {
            let _ = write!(out, ",norm_{c}");
        }
        out.push('\n');
        let opt = |v: Option<f64>| v.map(|v| format!("{v:e}")).unwrap_or_default();
        for r in &self.records {
            let _ = write!(
                out,
                "{},{:e},{:e},{},{},{}",
                r.step,
                r.sigma,
                r.residual,
                opt(r.psnr),
                opt(r.ssim),
                r.corrector_skips
            );
            for v in &r.channel_norms {
                let _ = write!(out, ",{v:e}");
            }
            out.push('\n');
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv())?;
        Ok(())
    }
}
