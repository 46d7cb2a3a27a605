// SPDX-License-Identifier: MIT OR Apache-2.0

//! Small numeric kernels: Welch t, Pearson r, least-squares lines.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Error-free `a + b = s + e`.
fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let z = s - a;
    let e = (a - (s - z)) + (b - z);
    (s, e)
}

/// Compensated sum returned as an unevaluated pair `hi + lo`.
fn sum_dd(xs: &[f64]) -> (f64, f64) {
    let mut hi = 0.0;
    let mut lo = 0.0;
    for &x in xs {
        let (s, e) = two_sum(hi, x);
        hi = s;
        lo += e;
    }
    two_sum(hi, lo)
}

/// Mean as `hi + lo`, accurate well beyond one `f64`.
fn mean_dd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let (s, c) = sum_dd(xs);
    let hi = s / n;
    // exact remainder of the division
    let r = (-hi).mul_add(n, s);
    (hi, (r + c) / n)
}

/// Sample variance (divisor n−1) about a double-length mean.
fn variance_about(xs: &[f64], (hi, lo): (f64, f64)) -> f64 {
    let ss = sum_dd(
        &xs.iter()
            .map(|&x| {
                let d = (x - hi) - lo;
                d * d
            })
            .collect::<Vec<_>>(),
    );
    (ss.0 + ss.1) / (xs.len() as f64 - 1.0)
}

/// Welch's t statistic, `(mean a − mean b) / sqrt(var a/|a| + var b/|b|)`.
///
/// Returns `Ok(None)` (undefined) when both variances are zero and the means
/// differ, or when any sample is not finite. Both groups identical in value
/// give exactly `0`. The result does not depend on sample order, and
/// swapping the groups negates it exactly.
pub fn welch_t(a: &[f64], b: &[f64]) -> Result<Option<f64>> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::TooFewSamples(format!(
            "Welch t needs at least 2 samples per group, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    if a.iter().chain(b).any(|x| !x.is_finite()) {
        return Ok(None);
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    Ok(welch_t_sorted(&a, &b))
}

/// [`welch_t`] on finite samples already sorted ascending.
pub(crate) fn welch_t_sorted(a: &[f64], b: &[f64]) -> Option<f64> {
    let ma = mean_dd(a);
    let mb = mean_dd(b);
    let va = variance_about(a, ma);
    let vb = variance_about(b, mb);
    let (d, e) = two_sum(ma.0, -mb.0);
    let num = d + (e + (ma.1 - mb.1));
    if va == 0.0 && vb == 0.0 {
        return if num == 0.0 { Some(0.0) } else { None };
    }
    let t = num / (va / a.len() as f64 + vb / b.len() as f64).sqrt();
    t.is_finite().then_some(t)
}

/// Mean with compensated summation.
pub fn mean(xs: &[f64]) -> f64 {
    let (hi, lo) = mean_dd(xs);
    hi + lo
}

/// Sample standard deviation (divisor n−1); 0 for fewer than two values.
pub fn sample_sd(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    variance_about(xs, mean_dd(xs)).sqrt()
}

/// Pearson correlation coefficient.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::InvalidArgument(format!(
            "length mismatch: {} vs {}",
            x.len(),
            y.len()
        )));
    }
    if x.len() < 3 {
        return Err(Error::TooFewSamples(format!(
            "correlation needs at least 3 points, got {}",
            x.len()
        )));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::Degenerate("non-finite value in correlation input".into()));
    }
    let mx = mean_dd(x);
    let my = mean_dd(y);
    let dx: Vec<f64> = x.iter().map(|&v| (v - mx.0) - mx.1).collect();
    let dy: Vec<f64> = y.iter().map(|&v| (v - my.0) - my.1).collect();
    let sxx = sum_dd(&dx.iter().map(|d| d * d).collect::<Vec<_>>());
    let syy = sum_dd(&dy.iter().map(|d| d * d).collect::<Vec<_>>());
    let sxy = sum_dd(&dx.iter().zip(&dy).map(|(a, b)| a * b).collect::<Vec<_>>());
    let (sxx, syy, sxy) = (sxx.0 + sxx.1, syy.0 + syy.1, sxy.0 + sxy.1);
    if sxx == 0.0 {
        return Err(Error::Degenerate("constant x in correlation".into()));
    }
    if syy == 0.0 {
        return Err(Error::Degenerate("constant y in correlation".into()));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub r: f64,
    pub n: usize,
}

/// Ordinary least squares `y = intercept + slope·x`.
pub fn fit_line(x: &[f64], y: &[f64]) -> Result<LineFit> {
    let r = pearson(x, y)?;
    let mx = mean(x);
    let my = mean(y);
    let sxx: f64 = x.iter().map(|v| (v - mx) * (v - mx)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    Ok(LineFit {
        slope,
        intercept: my - slope * mx,
        r,
        n: x.len(),
    })
}
