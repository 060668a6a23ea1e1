//! Spreading-exponent fits, α(p) curves and their affine collapse.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Closed time interval used by a fit.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitWindow {
    pub t_lo: f64,
    pub t_hi: f64,
}

impl FitWindow {
    pub fn new(t_lo: f64, t_hi: f64) -> Result<Self> {
        if !(t_lo.is_finite() && t_hi.is_finite() && t_lo < t_hi) {
            return Err(Error::Config(format!("fit window [{t_lo}, {t_hi}] must have t_lo < t_hi")));
        }
        Ok(FitWindow { t_lo, t_hi })
    }

    fn contains(&self, t: f64) -> bool {
        let slack = 1e-9 * self.t_hi.abs().max(1.0);
        t >= self.t_lo - slack && t <= self.t_hi + slack
    }
}

/// `<m2> = D t^alpha` fitted by ordinary least squares in `(ln t, ln m2)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub alpha: f64,
    #[serde(rename = "D")]
    pub d: f64,
    pub window: FitWindow,
    pub n_points: usize,
    /// RMS residual in `ln m2`.
    pub rms_residual: f64,
    /// OLS covariance of `(ln D, alpha)` from the residual variance.
    pub covariance: [[f64; 2]; 2],
    /// Covariance of `(ln D, alpha)` propagated from per-point standard
    /// errors, when those were supplied.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub propagated_covariance: Option<[[f64; 2]; 2]>,
}

impl FitResult {
    pub fn alpha_stderr(&self) -> f64 {
        self.propagated_covariance.unwrap_or(self.covariance)[1][1].sqrt()
    }
}

fn windowed(times: &[f64], m2: &[f64], window: FitWindow) -> Result<Vec<(f64, f64)>> {
    if times.len() != m2.len() {
        return Err(Error::GridMismatch(format!("{} times vs {} values", times.len(), m2.len())));
    }
    let mut pts = Vec::new();
    for (&t, &m) in times.iter().zip(m2) {
        if !window.contains(t) {
            continue;
        }
        if !(t > 0.0 && m > 0.0) {
            return Err(Error::FitDomain { t, m2: m });
        }
        pts.push((t, m));
    }
    if pts.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "{} samples in [{}, {}], need 3",
            pts.len(),
            window.t_lo,
            window.t_hi
        )));
    }
    Ok(pts)
}

/// Slope/intercept weights of OLS: `slope = sum w_i y_i`, `intercept = sum v_i y_i`.
struct LineFit {
    slope: f64,
    intercept: f64,
    slope_weights: Vec<f64>,
    intercept_weights: Vec<f64>,
    rss: f64,
    sxx: f64,
    x_mean: f64,
}

fn line_fit(x: &[f64], y: &[f64]) -> LineFit {
    let n = x.len() as f64;
    let x_mean = x.iter().sum::<f64>() / n;
    let y_mean = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|xi| (xi - x_mean).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(xi, yi)| (xi - x_mean) * (yi - y_mean)).sum();
    let slope = sxy / sxx;
    let intercept = y_mean - slope * x_mean;
    let slope_weights: Vec<f64> = x.iter().map(|xi| (xi - x_mean) / sxx).collect();
    let intercept_weights = slope_weights.iter().map(|w| 1.0 / n - x_mean * w).collect();
    let rss = x
        .iter()
        .zip(y)
        .map(|(xi, yi)| (yi - intercept - slope * xi).powi(2))
        .sum();
    LineFit {
        slope,
        intercept,
        slope_weights,
        intercept_weights,
        rss,
        sxx,
        x_mean,
    }
}

pub fn fit_alpha(times: &[f64], m2: &[f64], window: FitWindow) -> Result<FitResult> {
    fit_alpha_inner(times, m2, None, window)
}

/// As [`fit_alpha`], also propagating per-point standard errors of `m2`
/// into the parameter covariance.
pub fn fit_alpha_with_errors(times: &[f64], m2: &[f64], stderr: &[f64], window: FitWindow) -> Result<FitResult> {
    if stderr.len() != times.len() {
        return Err(Error::GridMismatch(format!("{} times vs {} errors", times.len(), stderr.len())));
    }
    fit_alpha_inner(times, m2, Some(stderr), window)
}

fn fit_alpha_inner(times: &[f64], m2: &[f64], stderr: Option<&[f64]>, window: FitWindow) -> Result<FitResult> {
    let pts = windowed(times, m2, window)?;
    let x: Vec<f64> = pts.iter().map(|p| p.0.ln()).collect();
    let y: Vec<f64> = pts.iter().map(|p| p.1.ln()).collect();
    let n = pts.len();
    if x.iter().all(|&xi| xi == x[0]) {
        return Err(Error::InsufficientData("all samples at one time".into()));
    }
    let fit = line_fit(&x, &y);
    let sigma2 = fit.rss / (n as f64 - 2.0);
    let var_slope = sigma2 / fit.sxx;
    let var_intercept = sigma2 * (1.0 / n as f64 + fit.x_mean * fit.x_mean / fit.sxx);
    let cov = -sigma2 * fit.x_mean / fit.sxx;

    let propagated = stderr.map(|se| {
        // var(ln m2) ~ (se / m2)^2 at the in-window samples
        let rel: Vec<f64> = times
            .iter()
            .zip(m2)
            .zip(se)
            .filter(|((&t, _), _)| window.contains(t))
            .map(|((_, &m), &s)| (s / m).powi(2))
            .collect();
        let mut c = [[0.0; 2]; 2];
        for ((v, w), r) in fit.intercept_weights.iter().zip(&fit.slope_weights).zip(&rel) {
            c[0][0] += v * v * r;
            c[0][1] += v * w * r;
            c[1][1] += w * w * r;
        }
        c[1][0] = c[0][1];
        c
    });

    Ok(FitResult {
        alpha: fit.slope,
        d: fit.intercept.exp(),
        window,
        n_points: n,
        rms_residual: (fit.rss / n as f64).sqrt(),
        covariance: [[var_intercept, cov], [cov, var_slope]],
        propagated_covariance: propagated,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowFit {
    pub window: FitWindow,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fit: Option<FitResult>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub fits: Vec<WindowFit>,
    /// `max alpha - min alpha` over the successful fits.
    pub alpha_spread: Option<f64>,
}

pub fn fit_stability(times: &[f64], m2: &[f64], windows: &[FitWindow]) -> StabilityReport {
    let fits: Vec<WindowFit> = windows
        .iter()
        .map(|&window| match fit_alpha(times, m2, window) {
            Ok(fit) => WindowFit {
                window,
                fit: Some(fit),
                error: None,
            },
            Err(e) => WindowFit {
                window,
                fit: None,
                error: Some(e.to_string()),
            },
        })
        .collect();
    let alphas: Vec<f64> = fits.iter().filter_map(|f| f.fit.as_ref().map(|r| r.alpha)).collect();
    let alpha_spread = (!alphas.is_empty()).then(|| {
        let max = alphas.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let min = alphas.iter().copied().fold(f64::INFINITY, f64::min);
        max - min
    });
    StabilityReport { fits, alpha_spread }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlphaPoint {
    pub p: f64,
    pub alpha: f64,
    pub alpha_stderr: f64,
}

/// Measured α(p) at fixed β, sorted by `p`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlphaCurve {
    pub beta: f64,
    pub points: Vec<AlphaPoint>,
}

impl AlphaCurve {
    pub fn new(beta: f64, mut points: Vec<AlphaPoint>) -> Result<Self> {
        points.sort_by(|a, b| a.p.total_cmp(&b.p));
        if points.windows(2).any(|w| w[0].p == w[1].p) {
            return Err(Error::Config(format!("alpha curve beta = {beta} repeats a p value")));
        }
        Ok(AlphaCurve { beta, points })
    }

    /// Linear interpolation in `p`; `None` outside the sampled range.
    pub fn alpha_at(&self, p: f64) -> Option<f64> {
        let pts = &self.points;
        let first = pts.first()?;
        let last = pts.last()?;
        if p < first.p || p > last.p {
            return None;
        }
        let i = pts.partition_point(|q| q.p < p);
        if pts[i].p == p {
            return Some(pts[i].alpha);
        }
        let (a, b) = (pts[i - 1], pts[i]);
        Some(a.alpha + (b.alpha - a.alpha) * (p - a.p) / (b.p - a.p))
    }
}

pub const ALPHA_CSV_HEADER: [&str; 4] = ["beta", "p", "alpha", "alpha_stderr"];

pub fn write_alpha_curves<W: Write>(curves: &[AlphaCurve], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(ALPHA_CSV_HEADER)?;
    for c in curves {
        for pt in &c.points {
            w.write_record([c.beta, pt.p, pt.alpha, pt.alpha_stderr].map(|v| v.to_string()))?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads `beta,p,alpha,alpha_stderr` rows, grouping them by β in order of
/// first appearance.
pub fn read_alpha_curves<R: Read>(input: R) -> Result<Vec<AlphaCurve>> {
    #[derive(Deserialize)]
    struct Row {
        beta: f64,
        p: f64,
        alpha: f64,
        #[serde(default)]
        alpha_stderr: f64,
    }
    let mut groups: Vec<(f64, Vec<AlphaPoint>)> = Vec::new();
    for row in csv::Reader::from_reader(input).deserialize() {
        let row: Row = row?;
        let point = AlphaPoint {
            p: row.p,
            alpha: row.alpha,
            alpha_stderr: row.alpha_stderr,
        };
        match groups.iter_mut().find(|(b, _)| *b == row.beta) {
            Some((_, pts)) => pts.push(point),
            None => groups.push((row.beta, vec![point])),
        }
    }
    groups.into_iter().map(|(b, pts)| AlphaCurve::new(b, pts)).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveCollapse {
    pub beta: f64,
    pub c1: f64,
    pub c2: f64,
    pub n_points: usize,
    pub residual_before: f64,
    pub residual_after: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CollapseResult {
    pub reference_beta: f64,
    pub curves: Vec<CurveCollapse>,
    /// Pooled RMS distance to the reference over all non-reference curves.
    pub residual_before: f64,
    pub residual_after: f64,
}

impl CollapseResult {
    pub fn coefficients(&self, beta: f64) -> Option<&CurveCollapse> {
        self.curves.iter().find(|c| c.beta == beta)
    }
}

/// Maps every curve onto the reference by `alpha_bar = c1 alpha + c2`, with
/// `(c1, c2)` minimizing the squared distance at the reference's `p` values
/// that fall inside the curve's range.
pub fn scaling_collapse(curves: &[AlphaCurve], reference_beta: f64) -> Result<CollapseResult> {
    if curves.len() < 2 {
        return Err(Error::InsufficientData("collapse needs at least two curves".into()));
    }
    let ref_idx = curves
        .iter()
        .position(|c| (c.beta - reference_beta).abs() <= 1e-12 * reference_beta.abs().max(1.0))
        .ok_or_else(|| Error::Config(format!("no curve with reference beta = {reference_beta}")))?;
    let reference = &curves[ref_idx];

    let mut out = Vec::with_capacity(curves.len());
    let (mut ss_before, mut ss_after, mut pooled) = (0.0, 0.0, 0usize);
    for (i, curve) in curves.iter().enumerate() {
        if i == ref_idx {
            out.push(CurveCollapse {
                beta: curve.beta,
                c1: 1.0,
                c2: 0.0,
                n_points: curve.points.len(),
                residual_before: 0.0,
                residual_after: 0.0,
            });
            continue;
        }
        let pairs: Vec<(f64, f64)> = reference
            .points
            .iter()
            .filter_map(|r| curve.alpha_at(r.p).map(|a| (a, r.alpha)))
            .collect();
        if pairs.len() < 3 {
            return Err(Error::InsufficientData(format!(
                "curve beta = {} shares {} p values with the reference, need 3",
                curve.beta,
                pairs.len()
            )));
        }
        let n = pairs.len() as f64;
        let a_mean = pairs.iter().map(|p| p.0).sum::<f64>() / n;
        let r_mean = pairs.iter().map(|p| p.1).sum::<f64>() / n;
        let saa: f64 = pairs.iter().map(|p| (p.0 - a_mean).powi(2)).sum();
        if saa <= f64::EPSILON * pairs.iter().map(|p| p.0 * p.0).sum::<f64>() {
            return Err(Error::DegenerateCollapse { beta: curve.beta });
        }
        let sar: f64 = pairs.iter().map(|p| (p.0 - a_mean) * (p.1 - r_mean)).sum();
        let c1 = sar / saa;
        let c2 = r_mean - c1 * a_mean;
        let before: f64 = pairs.iter().map(|p| (p.0 - p.1).powi(2)).sum();
        let after: f64 = pairs.iter().map(|p| (c1 * p.0 + c2 - p.1).powi(2)).sum();
        ss_before += before;
        ss_after += after;
        pooled += pairs.len();
        out.push(CurveCollapse {
            beta: curve.beta,
            c1,
            c2,
            n_points: pairs.len(),
            residual_before: (before / n).sqrt(),
            residual_after: (after / n).sqrt(),
        });
    }
    Ok(CollapseResult {
        reference_beta: reference.beta,
        curves: out,
        residual_before: (ss_before / pooled as f64).sqrt(),
        residual_after: (ss_after / pooled as f64).sqrt(),
    })
}

/// Whitespace-separated plot columns `p  alpha_bar(beta_1) ...` on the
/// union of all sampled `p`; `nan` where a curve has no data.
pub fn write_collapse_columns<W: Write>(curves: &[AlphaCurve], collapse: &CollapseResult, mut out: W) -> Result<()> {
    let mut ps: Vec<f64> = curves.iter().flat_map(|c| c.points.iter().map(|p| p.p)).collect();
    ps.sort_by(f64::total_cmp);
    ps.dedup();
    write!(out, "# p")?;
    for c in curves {
        write!(out, " alpha_bar_beta{}", c.beta)?;
    }
    writeln!(out)?;
    for p in ps {
        write!(out, "{p}")?;
        for c in curves {
            let coeff = collapse.coefficients(c.beta);
            match (c.points.iter().find(|q| q.p == p), coeff) {
                (Some(q), Some(k)) => write!(out, " {}", k.c1 * q.alpha + k.c2)?,
                _ => write!(out, " nan")?,
            }
        }
        writeln!(out)?;
    }
    Ok(())
}

/// Ratio of the nonlinear energy shift to the level spacing of a packet
/// spread over `delta_n` sites: `beta * delta_n^(-(p - 2) / 2)`.
pub fn heuristic_ratio(delta_n: f64, beta: f64, p: f64) -> f64 {
    beta * delta_n.powf(-(p - 2.0) / 2.0)
}

/// `1 / (p + 1)`, tabulated next to measured exponents for comparison.
pub fn inverse_p_exponent(p: f64) -> f64 {
    1.0 / (p + 1.0)
}

/// Local log-log slope over sliding windows `width_decades` wide in `log10 t`,
/// centred on each sample whose window fits inside the data.
pub fn running_alpha(times: &[f64], m2: &[f64], width_decades: f64) -> Result<Vec<(f64, f64)>> {
    if times.len() != m2.len() {
        return Err(Error::GridMismatch(format!("{} times vs {} values", times.len(), m2.len())));
    }
    if width_decades.is_nan() || width_decades <= 0.0 {
        return Err(Error::Config(format!("window width must be > 0, got {width_decades}")));
    }
    let pts: Vec<(f64, f64)> = times
        .iter()
        .zip(m2)
        .filter(|(&t, &m)| t > 0.0 && m > 0.0)
        .map(|(&t, &m)| (t.log10(), m.ln()))
        .collect();
    let span = match (pts.first(), pts.last()) {
        (Some(a), Some(b)) => b.0 - a.0,
        _ => 0.0,
    };
    if span + 1e-12 < width_decades {
        return Err(Error::InsufficientData(format!(
            "series spans {span:.3} decades, window needs {width_decades}"
        )));
    }
    let (lo_all, hi_all) = (pts[0].0, pts[pts.len() - 1].0);
    let half = width_decades / 2.0;
    let mut out = Vec::new();
    for &(center, _) in &pts {
        let (lo, hi) = (center - half, center + half);
        if lo < lo_all - 1e-12 || hi > hi_all + 1e-12 {
            continue;
        }
        let (x, y): (Vec<f64>, Vec<f64>) = pts
            .iter()
            .filter(|(lt, _)| *lt >= lo - 1e-12 && *lt <= hi + 1e-12)
            .map(|&(lt, lm)| (lt * std::f64::consts::LN_10, lm))
            .unzip();
        if x.len() >= 3 {
            out.push((10f64.powf(center), line_fit(&x, &y).slope));
        }
    }
    Ok(out)
}
