use log::warn;
use ndarray::{Array2, ArrayView1, Axis};

use super::standardize;
use crate::error::{CfsError, Result};
use crate::ranking::FactorMask;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LassoOptions {
    pub tolerance: f64,
    pub max_sweeps: usize,
}

impl Default for LassoOptions {
    fn default() -> Self {
        LassoOptions {
            tolerance: 1e-8,
            max_sweeps: 10_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LassoFit {
    pub coefficients: Vec<f64>,
    pub sweeps: usize,
    pub converged: bool,
}

fn soft_threshold(z: f64, t: f64) -> f64 {
    if z > t {
        z - t
    } else if z < -t {
        z + t
    } else {
        0.0
    }
}

/// Coordinate descent on `(1/2N)‖y − Xw‖² + α‖w‖₁` with the columns taken
/// as given (no intercept, no scaling).
pub fn lasso(x: &Array2<f64>, y: &[f64], alpha: f64, options: LassoOptions) -> Result<LassoFit> {
    let (n, p) = x.dim();
    if y.len() != n {
        return Err(CfsError::Shape(format!("{n} rows but {} targets", y.len())));
    }
    if n == 0 {
        return Err(CfsError::Shape("lasso needs at least one row".into()));
    }
    if !(alpha >= 0.0 && alpha.is_finite()) {
        return Err(CfsError::InvalidValue(format!("alpha = {alpha} must be finite and >= 0")));
    }
    let nf = n as f64;
    let col_sq: Vec<f64> = x.axis_iter(Axis(1)).map(|c| c.dot(&c) / nf).collect();
    let mut w = vec![0.0; p];
    let mut residual = y.to_vec();
    let mut sweeps = 0;
    let mut converged = false;
    while sweeps < options.max_sweeps {
        sweeps += 1;
        let mut max_change: f64 = 0.0;
        for k in 0..p {
            if col_sq[k] == 0.0 {
                continue;
            }
            let col = x.column(k);
            let rho = dot(col, &residual) / nf + col_sq[k] * w[k];
            let new = soft_threshold(rho, alpha) / col_sq[k];
            let delta = new - w[k];
            if delta != 0.0 {
                for (r, &xi) in residual.iter_mut().zip(col.iter()) {
                    *r -= delta * xi;
                }
                w[k] = new;
            }
            max_change = max_change.max(delta.abs());
        }
        if max_change < options.tolerance {
            converged = true;
            break;
        }
    }
    if !converged {
        warn!("lasso did not converge in {} sweeps (alpha = {alpha})", options.max_sweeps);
    }
    Ok(LassoFit {
        coefficients: w,
        sweeps,
        converged,
    })
}

fn dot(col: ArrayView1<'_, f64>, v: &[f64]) -> f64 {
    col.iter().zip(v).map(|(a, b)| a * b).sum()
}

/// Fits on standardized columns with the centered target and keeps every
/// factor whose coefficient is not exactly zero.
pub fn lasso_select(targets: &[f64], rows: &Array2<f64>, alpha: f64) -> Result<FactorMask> {
    let p = rows.ncols();
    if rows.nrows() < p {
        return Err(CfsError::Shape(format!("lasso needs at least p = {p} rows, got {}", rows.nrows())));
    }
    let x = standardize(rows);
    let mean = targets.iter().sum::<f64>() / targets.len().max(1) as f64;
    let y: Vec<f64> = targets.iter().map(|t| t - mean).collect();
    let fit = lasso(&x, &y, alpha, LassoOptions::default())?;
    Ok(FactorMask::new(fit.coefficients.iter().map(|c| *c != 0.0).collect()))
}
