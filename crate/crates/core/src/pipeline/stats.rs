//! Summary statistics and the performance-gap-recovered metric.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

/// `(w2s - weak) / (ceiling - weak)`, unclamped.
pub fn pgr(weak_acc: f64, w2s_acc: f64, ceiling_acc: f64) -> Result<f64> {
    let gap = ceiling_acc - weak_acc;
    if gap == 0.0 {
        return Err(Error::UndefinedPgr(weak_acc));
    }
    Ok((w2s_acc - weak_acc) / gap)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStderr {
    pub mean: f64,
    pub stderr: f64,
    pub n: usize,
}

pub fn mean_stderr(xs: &[f64]) -> MeanStderr {
    let n = xs.len();
    if n == 0 {
        return MeanStderr {
            mean: 0.0,
            stderr: 0.0,
            n,
        };
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    let stderr = if n > 1 {
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        (var / n as f64).sqrt()
    } else {
        0.0
    };
    MeanStderr { mean, stderr, n }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairedTest {
    pub mean_diff: f64,
    pub t: f64,
    /// One-sided p-value for `mean(a - b) > 0`.
    pub p_value: f64,
}

/// One-sided paired t-test of `a > b`.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<PairedTest> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::Invalid("paired test needs two equal samples of size >= 2".into()));
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let s = mean_stderr(&diffs);
    if s.stderr == 0.0 {
        let p = if s.mean > 0.0 { 0.0 } else { 1.0 };
        return Ok(PairedTest {
            mean_diff: s.mean,
            t: if s.mean > 0.0 { f64::INFINITY } else { 0.0 },
            p_value: p,
        });
    }
    let t = s.mean / s.stderr;
    let dist = StudentsT::new(0.0, 1.0, (diffs.len() - 1) as f64)
        .map_err(|e| Error::Invalid(e.to_string()))?;
    Ok(PairedTest {
        mean_diff: s.mean,
        t,
        p_value: 1.0 - dist.cdf(t),
    })
}
