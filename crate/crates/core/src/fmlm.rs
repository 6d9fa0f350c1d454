//! Fractional multinomial logit crop-share model.
//!
//! Shares follow a softmax with a base category whose coefficients are fixed
//! at zero:
//!
//! ```text
//! p_j = exp(b_j . x) / (1 + sum_{k != base} exp(b_k . x))
//! ```
//!
//! Coefficients are estimated by maximising the multinomial quasi
//! log-likelihood `L = sum_i sum_j y_ij ln p_ij`, which is well defined for
//! fractional responses and concave in the coefficients.

use serde::{Deserialize, Serialize};
use std::io::{Read, Write};

use crate::error::{CoreError, Result};

pub const INTERCEPT: &str = "intercept";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FmlmCoefficients {
    /// Crop names; the first is the base category.
    pub crops: Vec<String>,
    pub predictors: Vec<String>,
    /// `(crops.len() - 1) x predictors.len()`, row per non-base crop.
    pub betas: Vec<Vec<f64>>,
}

impl FmlmCoefficients {
    pub fn zeros(crops: Vec<String>, predictors: Vec<String>) -> Self {
        let betas = vec![vec![0.0; predictors.len()]; crops.len().saturating_sub(1)];
        FmlmCoefficients {
            crops,
            predictors,
            betas,
        }
    }

    pub fn num_crops(&self) -> usize {
        self.crops.len()
    }

    pub fn num_predictors(&self) -> usize {
        self.predictors.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.crops.len() < 2 {
            return Err(CoreError::schema("fmlm.crops", "need at least two crops"));
        }
        if self.betas.len() != self.crops.len() - 1 {
            return Err(CoreError::Dimension(format!(
                "{} coefficient rows for {} crops",
                self.betas.len(),
                self.crops.len()
            )));
        }
        for (row, crop) in self.betas.iter().zip(&self.crops[1..]) {
            if row.len() != self.predictors.len() {
                return Err(CoreError::Dimension(format!(
                    "crop `{crop}` has {} coefficients, expected {}",
                    row.len(),
                    self.predictors.len()
                )));
            }
            if row.iter().any(|b| !b.is_finite()) {
                return Err(CoreError::schema(
                    format!("fmlm.betas[{crop}]"),
                    "non-finite coefficient",
                ));
            }
        }
        Ok(())
    }

    /// Reads the `crop,predictor,beta` layout. Base-category rows are absent;
    /// `crops` supplies the full ordered catalog with the base first.
    pub fn read_csv<R: Read>(reader: R, crops: &[String]) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(reader);
        let headers = rdr.headers()?.clone();
        if headers.iter().collect::<Vec<_>>() != ["crop", "predictor", "beta"] {
            return Err(CoreError::schema(
                "fmlm.coefficients",
                "header must be `crop,predictor,beta`",
            ));
        }
        let mut predictors: Vec<String> = Vec::new();
        let mut entries: Vec<(String, String, f64)> = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let crop = rec[0].to_string();
            let predictor = rec[1].to_string();
            let beta: f64 = rec[2].trim().parse().map_err(|_| {
                CoreError::schema(
                    format!("fmlm.coefficients[{crop},{predictor}]"),
                    "beta is not a number",
                )
            })?;
            if !predictors.contains(&predictor) {
                predictors.push(predictor.clone());
            }
            entries.push((crop, predictor, beta));
        }
        let mut coefs = FmlmCoefficients::zeros(crops.to_vec(), predictors);
        let mut seen = vec![vec![false; coefs.num_predictors()]; coefs.betas.len()];
        for (crop, predictor, beta) in entries {
            let j = crops.iter().position(|c| *c == crop).ok_or_else(|| {
                CoreError::schema("fmlm.coefficients", format!("unknown crop `{crop}`"))
            })?;
            if j == 0 {
                return Err(CoreError::schema(
                    "fmlm.coefficients",
                    format!("base crop `{crop}` must not carry coefficients"),
                ));
            }
            let k = coefs.predictors.iter().position(|p| *p == predictor).unwrap();
            coefs.betas[j - 1][k] = beta;
            seen[j - 1][k] = true;
        }
        for (j, row) in seen.iter().enumerate() {
            if let Some(k) = row.iter().position(|s| !s) {
                return Err(CoreError::schema(
                    "fmlm.coefficients",
                    format!(
                        "missing coefficient for crop `{}` predictor `{}`",
                        coefs.crops[j + 1],
                        coefs.predictors[k]
                    ),
                ));
            }
        }
        coefs.validate()?;
        Ok(coefs)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record(["crop", "predictor", "beta"])?;
        for (crop, row) in self.crops[1..].iter().zip(&self.betas) {
            for (predictor, beta) in self.predictors.iter().zip(row) {
                wtr.write_record([crop.as_str(), predictor.as_str(), &format!("{beta:?}")])?;
            }
        }
        wtr.flush().map_err(|e| CoreError::Csv(e.into()))?;
        Ok(())
    }
}

/// One observation of a share panel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanelRow {
    pub district: String,
    pub year: i32,
    pub predictors: Vec<f64>,
    pub shares: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SharePanel {
    pub crops: Vec<String>,
    pub predictors: Vec<String>,
    pub rows: Vec<PanelRow>,
}

impl SharePanel {
    pub fn validate(&self) -> Result<()> {
        for (i, row) in self.rows.iter().enumerate() {
            if row.shares.len() != self.crops.len() || row.predictors.len() != self.predictors.len()
            {
                return Err(CoreError::Dimension(format!("panel row {i} has wrong width")));
            }
            if row.shares.iter().any(|s| !s.is_finite() || *s < 0.0) {
                return Err(CoreError::schema(
                    format!("share_panel[{i}]"),
                    "shares must be finite and non-negative",
                ));
            }
            let total: f64 = row.shares.iter().sum();
            if (total - 1.0).abs() > 1e-9 {
                return Err(CoreError::schema(
                    format!("share_panel[{i}]"),
                    format!("shares sum to {total}, expected 1"),
                ));
            }
            if row.predictors.iter().any(|x| !x.is_finite()) {
                return Err(CoreError::schema(
                    format!("share_panel[{i}]"),
                    "non-finite predictor",
                ));
            }
        }
        Ok(())
    }
}

/// Predicted shares for predictor vector `x`.
pub fn fmlm_predict(coefs: &FmlmCoefficients, x: &[f64]) -> Result<Vec<f64>> {
    if x.len() != coefs.num_predictors() {
        return Err(CoreError::Dimension(format!(
            "predictor vector has length {}, expected {}",
            x.len(),
            coefs.num_predictors()
        )));
    }
    if coefs.betas.len() + 1 != coefs.num_crops() {
        return Err(CoreError::Dimension("coefficient rows do not match crops".into()));
    }
    let mut out = vec![0.0; coefs.num_crops()];
    softmax_into(&coefs.betas, x, &mut out);
    Ok(out)
}

/// Softmax with an implicit zero row for the base category, shifted by the
/// maximum utility so large coefficients do not overflow.
fn softmax_into(betas: &[Vec<f64>], x: &[f64], out: &mut [f64]) {
    out[0] = 0.0;
    for (o, row) in out[1..].iter_mut().zip(betas) {
        *o = row.iter().zip(x).map(|(b, v)| b * v).sum();
    }
    let max = out.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for o in out.iter_mut() {
        *o = (*o - max).exp();
        total += *o;
    }
    for o in out.iter_mut() {
        *o /= total;
    }
}

#[derive(Debug, Clone, Copy)]
pub struct FitOptions {
    pub max_iterations: usize,
    /// Stop when the infinity norm of the per-row mean gradient falls below this.
    pub gradient_tolerance: f64,
    /// Magnitude bound applied to coefficients of degenerate crops.
    pub clip: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            max_iterations: 5000,
            gradient_tolerance: 1e-8,
            clip: 30.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FitReport {
    pub coefficients: FmlmCoefficients,
    /// Quasi log-likelihood summed over rows at the returned coefficients.
    pub log_likelihood: f64,
    /// Infinity norm of the per-row mean gradient at termination.
    pub gradient_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Crops whose share is identically 0 or 1 across the panel.
    pub degenerate_crops: Vec<String>,
    pub clipped: bool,
    /// Log-likelihood after each accepted step, starting from the initial point.
    pub trace: Vec<f64>,
}

impl FitReport {
    /// True when the caller should treat the estimate with suspicion.
    pub fn warning(&self) -> bool {
        !self.converged || self.clipped || !self.degenerate_crops.is_empty()
    }
}

/// Column standardisation used internally to keep the ascent well conditioned.
/// Non-constant columns are mapped to zero mean and unit variance when a
/// constant column exists to absorb the shift; constant columns are left alone.
struct Scaling {
    shift: Vec<f64>,
    scale: Vec<f64>,
    /// Index and value of the constant column absorbing the centering.
    intercept: Option<(usize, f64)>,
}

impl Scaling {
    fn from_rows(rows: &[&[f64]], k: usize) -> Self {
        let n = rows.len() as f64;
        let mut mean = vec![0.0; k];
        for r in rows {
            for (m, v) in mean.iter_mut().zip(r.iter()) {
                *m += v / n;
            }
        }
        let mut var = vec![0.0; k];
        for r in rows {
            for ((s, v), m) in var.iter_mut().zip(r.iter()).zip(&mean) {
                *s += (v - m) * (v - m) / n;
            }
        }
        let mut intercept = None;
        let mut scale = vec![1.0; k];
        let mut shift = vec![0.0; k];
        for c in 0..k {
            let sd = var[c].sqrt();
            if sd <= 1e-12 * mean[c].abs().max(1.0) {
                if intercept.is_none() && mean[c] != 0.0 {
                    intercept = Some((c, mean[c]));
                }
            } else {
                scale[c] = sd;
                shift[c] = mean[c];
            }
        }
        if intercept.is_none() {
            shift.iter_mut().for_each(|s| *s = 0.0);
        }
        Scaling {
            shift,
            scale,
            intercept,
        }
    }

    fn apply(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(self.shift.iter().zip(&self.scale))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }

    /// Coefficients on the original columns giving identical utilities.
    fn to_original(&self, betas: &[Vec<f64>]) -> Vec<Vec<f64>> {
        betas
            .iter()
            .map(|row| {
                let mut out: Vec<f64> = row.iter().zip(&self.scale).map(|(b, s)| b / s).collect();
                if let Some((c, value)) = self.intercept {
                    let offset: f64 = out.iter().zip(&self.shift).map(|(b, m)| b * m).sum();
                    out[c] -= offset / value;
                }
                out
            })
            .collect()
    }
}

/// Quasi log-likelihood and its gradient over `(x, y)` rows.
/// The gradient for non-base crop `j` is `sum_i (y_ij - p_ij) x_i`, which uses
/// `sum_j y_ij = 1`.
fn objective(betas: &[Vec<f64>], xs: &[Vec<f64>], ys: &[&[f64]]) -> (f64, Vec<Vec<f64>>) {
    let j = betas.len() + 1;
    let k = betas.first().map_or(0, Vec::len);
    let mut p = vec![0.0; j];
    let mut ll = 0.0;
    let mut grad = vec![vec![0.0; k]; j - 1];
    for (x, y) in xs.iter().zip(ys) {
        softmax_into(betas, x, &mut p);
        for (yj, pj) in y.iter().zip(&p) {
            if *yj > 0.0 {
                ll += yj * pj.ln();
            }
        }
        for (g, (yj, pj)) in grad.iter_mut().zip(y[1..].iter().zip(&p[1..])) {
            let r = yj - pj;
            for (gc, xc) in g.iter_mut().zip(x) {
                *gc += r * xc;
            }
        }
    }
    (ll, grad)
}

/// Quasi log-likelihood of `coefs` on `panel`.
pub fn log_likelihood(panel: &SharePanel, coefs: &FmlmCoefficients) -> Result<f64> {
    check_panel_dims(panel, coefs)?;
    let xs: Vec<Vec<f64>> = panel.rows.iter().map(|r| r.predictors.clone()).collect();
    let ys: Vec<&[f64]> = panel.rows.iter().map(|r| r.shares.as_slice()).collect();
    Ok(objective(&coefs.betas, &xs, &ys).0)
}

/// Analytic gradient of [`log_likelihood`], shaped like `coefs.betas`.
pub fn log_likelihood_gradient(
    panel: &SharePanel,
    coefs: &FmlmCoefficients,
) -> Result<Vec<Vec<f64>>> {
    check_panel_dims(panel, coefs)?;
    let xs: Vec<Vec<f64>> = panel.rows.iter().map(|r| r.predictors.clone()).collect();
    let ys: Vec<&[f64]> = panel.rows.iter().map(|r| r.shares.as_slice()).collect();
    Ok(objective(&coefs.betas, &xs, &ys).1)
}

fn check_panel_dims(panel: &SharePanel, coefs: &FmlmCoefficients) -> Result<()> {
    if panel.crops.len() != coefs.num_crops() || panel.predictors.len() != coefs.num_predictors()
    {
        return Err(CoreError::Dimension(format!(
            "panel is {}x{}, coefficients expect {}x{}",
            panel.crops.len(),
            panel.predictors.len(),
            coefs.num_crops(),
            coefs.num_predictors()
        )));
    }
    Ok(())
}

fn inf_norm(m: &[Vec<f64>]) -> f64 {
    m.iter().flatten().fold(0.0_f64, |a, v| a.max(v.abs()))
}

/// Fits coefficients by full-batch gradient ascent with backtracking line
/// search, starting from zero. Columns are standardised internally; the
/// returned coefficients apply to the panel's original predictors.
pub fn fmlm_fit(panel: &SharePanel, options: &FitOptions) -> Result<FitReport> {
    let j = panel.crops.len();
    let k = panel.predictors.len();
    if j < 2 {
        return Err(CoreError::schema("share_panel.crops", "need at least two crops"));
    }
    panel.validate()?;
    let distinct = {
        let mut rows: Vec<&Vec<f64>> = panel.rows.iter().map(|r| &r.predictors).collect();
        rows.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
        rows.dedup();
        rows.len()
    };
    if distinct < 2 {
        return Err(CoreError::schema(
            "share_panel.rows",
            "need at least two distinct predictor rows",
        ));
    }

    let degenerate_crops: Vec<String> = (0..j)
        .filter(|&c| {
            let first = panel.rows[0].shares[c];
            (first == 0.0 || first == 1.0) && panel.rows.iter().all(|r| r.shares[c] == first)
        })
        .map(|c| panel.crops[c].clone())
        .collect();

    let raw: Vec<&[f64]> = panel.rows.iter().map(|r| r.predictors.as_slice()).collect();
    let scaling = Scaling::from_rows(&raw, k);
    let xs: Vec<Vec<f64>> = raw.iter().map(|r| scaling.apply(r)).collect();
    let ys: Vec<&[f64]> = panel.rows.iter().map(|r| r.shares.as_slice()).collect();
    let n = panel.rows.len() as f64;

    let mut gamma = vec![vec![0.0; k]; j - 1];
    let (mut ll, mut grad) = objective(&gamma, &xs, &ys);
    let mut trace = vec![ll];
    let mut step = 1.0 / n;
    let mut iterations = 0;
    let mut gnorm = inf_norm(&grad) / n;
    while gnorm >= options.gradient_tolerance && iterations < options.max_iterations {
        let g2: f64 = grad.iter().flatten().map(|g| g * g).sum();
        let mut t = step * 2.0;
        let mut accepted = None;
        for _ in 0..60 {
            let trial: Vec<Vec<f64>> = gamma
                .iter()
                .zip(&grad)
                .map(|(b, g)| b.iter().zip(g).map(|(bv, gv)| bv + t * gv).collect())
                .collect();
            let (tll, tgrad) = objective(&trial, &xs, &ys);
            if tll.is_finite() && tll >= ll + 1e-4 * t * g2 {
                accepted = Some((trial, tll, tgrad));
                break;
            }
            t *= 0.5;
        }
        let Some((trial, tll, tgrad)) = accepted else {
            break;
        };
        iterations += 1;
        step = t;
        gamma = trial;
        ll = tll;
        grad = tgrad;
        trace.push(ll);
        gnorm = inf_norm(&grad) / n;
    }
    let converged = gnorm < options.gradient_tolerance;

    let mut betas = scaling.to_original(&gamma);
    let mut clipped = false;
    for (row, crop) in betas.iter_mut().zip(&panel.crops[1..]) {
        let limit = if degenerate_crops.contains(crop) || !converged {
            options.clip
        } else {
            f64::INFINITY
        };
        for b in row.iter_mut() {
            if b.abs() > limit {
                *b = b.signum() * limit;
                clipped = true;
            }
        }
    }
    let coefficients = FmlmCoefficients {
        crops: panel.crops.clone(),
        predictors: panel.predictors.clone(),
        betas,
    };
    if clipped {
        let raw_xs: Vec<Vec<f64>> = raw.iter().map(|r| r.to_vec()).collect();
        ll = objective(&coefficients.betas, &raw_xs, &ys).0;
    }
    Ok(FitReport {
        coefficients,
        log_likelihood: ll,
        gradient_norm: gnorm,
        iterations,
        converged,
        degenerate_crops,
        clipped,
        trace,
    })
}

/// Per-crop areas (ha) for a district: masked shares renormalised over the
/// crops the district may grow, times its total cropland.
pub fn project_crop_areas(shares: &[f64], allowed: &[bool], cropland_ha: f64) -> Vec<f64> {
    debug_assert_eq!(shares.len(), allowed.len());
    let masked: Vec<f64> = shares
        .iter()
        .zip(allowed)
        .map(|(s, a)| if *a { *s } else { 0.0 })
        .collect();
    let total: f64 = masked.iter().sum();
    if total <= 0.0 || cropland_ha <= 0.0 {
        return vec![0.0; shares.len()];
    }
    masked.iter().map(|s| s / total * cropland_ha).collect()
}
