use ndarray::Array2;

use crate::error::{CfsError, Result};
use crate::ranking::FactorMask;

// keeps F finite when a column reproduces the target exactly
const R2_CAP: f64 = 1.0 - 1e-12;

/// Univariate regression F statistic `r²/(1−r²)·(N−2)` per column.
pub fn f_scores(targets: &[f64], rows: &Array2<f64>) -> Result<Vec<f64>> {
    let (n, p) = rows.dim();
    if targets.len() != n {
        return Err(CfsError::Shape(format!("{n} rows but {} targets", targets.len())));
    }
    if n < 3 {
        return Err(CfsError::Shape(format!("F-test needs at least 3 rows, got {n}")));
    }
    let nf = n as f64;
    let ym = targets.iter().sum::<f64>() / nf;
    let syy: f64 = targets.iter().map(|y| (y - ym) * (y - ym)).sum();
    Ok((0..p)
        .map(|k| {
            let col = rows.column(k);
            let xm = col.sum() / nf;
            let (mut sxx, mut sxy) = (0.0, 0.0);
            for (x, y) in col.iter().zip(targets) {
                sxx += (x - xm) * (x - xm);
                sxy += (x - xm) * (y - ym);
            }
            if sxx <= 0.0 || syy <= 0.0 {
                return 0.0;
            }
            let r2 = (sxy * sxy / (sxx * syy)).min(R2_CAP);
            r2 / (1.0 - r2) * (nf - 2.0)
        })
        .collect())
}

pub fn ftest_select(targets: &[f64], rows: &Array2<f64>, k: usize) -> Result<FactorMask> {
    let p = rows.ncols();
    if k == 0 || k > p {
        return Err(CfsError::Config(format!("k = {k} must lie in [1, {p}]")));
    }
    let scores = f_scores(targets, rows)?;
    Ok(FactorMask::from_indices(p, &super::top_k(&scores, k)))
}
