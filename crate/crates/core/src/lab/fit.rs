use serde::Serialize;

use crate::error::{Error, Result};

/// Least-squares slope of log|gap| against log n.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateFit {
    pub slope: f64,
    pub stderr: f64,
    pub intercept: f64,
    pub rows_used: usize,
    pub notes: Vec<String>,
}

/// Ordinary least squares on (ln n, ln|gap|) over `(n, gap)` rows. Zero or
/// non-finite gaps are dropped with a note; fewer than three remaining rows
/// is refused.
pub fn fit_rate(rows: &[(f64, f64)]) -> Result<RateFit> {
    let mut notes = Vec::new();
    let mut pts = Vec::new();
    for &(n, gap) in rows {
        if gap == 0.0 || !gap.is_finite() || !(n > 0.0 && n.is_finite()) {
            notes.push(format!("n = {n} excluded (gap {gap})"));
        } else {
            pts.push((n.ln(), gap.abs().ln()));
        }
    }
    if pts.len() < 3 {
        return Err(Error::Refused(format!(
            "rate fit needs at least 3 rows with nonzero gaps, got {}",
            pts.len()
        )));
    }
    let k = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::Refused("rate fit needs at least two distinct scales".into()));
    }
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ssr: f64 = pts.iter().map(|p| (p.1 - intercept - slope * p.0).powi(2)).sum();
    let stderr = (ssr / (k - 2.0) / sxx).sqrt();
    Ok(RateFit {
        slope,
        stderr,
        intercept,
        rows_used: pts.len(),
        notes,
    })
}
