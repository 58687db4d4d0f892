//! Static factor selection baselines.
//!
//! Norm elimination decides per request from that request's weights. The
//! regression-based methods fit one model over every (page view, item) row
//! and yield one mask for the whole dataset.

mod ftest;
mod lasso;
mod tree;

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

pub use ftest::{f_scores, ftest_select};
pub use lasso::{lasso, lasso_select, LassoFit, LassoOptions};
pub use tree::{extra_trees_importance, tree_select, ExtraTreesConfig, TreeMode};

use crate::error::{CfsError, Result};
use crate::ranking::{score_items, FactorMask, Ranker, RequestId};
use crate::scalar::Scalar;
use crate::synth::Dataset;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case", deny_unknown_fields)]
pub enum BaselineSpec {
    NormElimination { epsilon: f64 },
    Lasso { alpha: f64 },
    Tree { mode: TreeMode },
    #[serde(rename = "ftest")]
    FTest { k: usize },
}

impl BaselineSpec {
    pub fn validate(&self, p: usize) -> Result<()> {
        let fail = |m: String| Err(CfsError::Config(m));
        match *self {
            BaselineSpec::NormElimination { epsilon } if !(epsilon > 0.0 && epsilon.is_finite()) => {
                fail(format!("norm elimination epsilon = {epsilon} must be > 0"))
            }
            BaselineSpec::Lasso { alpha } if !(alpha > 0.0 && alpha.is_finite()) => {
                fail(format!("lasso alpha = {alpha} must be > 0"))
            }
            BaselineSpec::FTest { k } | BaselineSpec::Tree { mode: TreeMode::TopK(k) } if k == 0 || k > p => {
                fail(format!("k = {k} must lie in [1, {p}]"))
            }
            _ => Ok(()),
        }
    }
}

/// Short form used on the command line and in reports: `norm:0.1`,
/// `lasso:0.05`, `tree`, `tree:top=7`, `ftest:8`.
impl fmt::Display for BaselineSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BaselineSpec::NormElimination { epsilon } => write!(f, "norm:{epsilon}"),
            BaselineSpec::Lasso { alpha } => write!(f, "lasso:{alpha}"),
            BaselineSpec::Tree { mode: TreeMode::AboveMean } => write!(f, "tree"),
            BaselineSpec::Tree { mode: TreeMode::TopK(k) } => write!(f, "tree:top={k}"),
            BaselineSpec::FTest { k } => write!(f, "ftest:{k}"),
        }
    }
}

impl FromStr for BaselineSpec {
    type Err = CfsError;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || CfsError::Config(format!("unknown baseline `{s}` (expected norm:EPS, lasso:ALPHA, tree, tree:top=K or ftest:K)"));
        let (name, arg) = match s.split_once(':') {
            Some((n, a)) => (n, Some(a)),
            None => (s, None),
        };
        let real = |a: Option<&str>| a.and_then(|v| v.parse::<f64>().ok()).ok_or_else(bad);
        let int = |a: Option<&str>| a.and_then(|v| v.parse::<usize>().ok()).ok_or_else(bad);
        Ok(match name {
            "norm" => BaselineSpec::NormElimination { epsilon: real(arg)? },
            "lasso" => BaselineSpec::Lasso { alpha: real(arg)? },
            "tree" => match arg {
                None => BaselineSpec::Tree { mode: TreeMode::AboveMean },
                Some(a) => BaselineSpec::Tree { mode: TreeMode::TopK(int(a.strip_prefix("top="))?) },
            },
            "ftest" => BaselineSpec::FTest { k: int(arg)? },
            _ => return Err(bad()),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum MaskTable {
    Global(FactorMask),
    PerRequest(BTreeMap<RequestId, FactorMask>),
}

impl MaskTable {
    pub fn mask_for(&self, request_id: RequestId) -> Result<&FactorMask> {
        match self {
            MaskTable::Global(m) => Ok(m),
            MaskTable::PerRequest(t) => t.get(&request_id).ok_or(CfsError::MissingModel(request_id)),
        }
    }
}

/// Standardizes each column to zero mean and unit population variance;
/// constant columns become all zeros.
pub(crate) fn standardize(rows: &Array2<f64>) -> Array2<f64> {
    let mut x = rows.clone();
    let n = rows.nrows().max(1) as f64;
    for mut col in x.axis_iter_mut(Axis(1)) {
        let mean = col.sum() / n;
        let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let sd = var.sqrt();
        col.mapv_inplace(|v| if sd > 0.0 { (v - mean) / sd } else { 0.0 });
    }
    x
}

/// Indices of the `k` largest scores; ties go to the lower index.
pub(crate) fn top_k(scores: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

/// Keeps factor `k` of request `i` iff `|w_k^i| ≥ epsilon`.
pub fn norm_elimination<T: Scalar>(dataset: &Dataset<T>, epsilon: T) -> Result<MaskTable> {
    if dataset.is_empty() {
        return Err(CfsError::State("norm elimination needs at least one page view".into()));
    }
    let table = dataset
        .page_views()
        .iter()
        .map(|pv| {
            let bits = pv.weights.iter().map(|w| w.abs() >= epsilon).collect();
            (pv.request_id(), FactorMask::new(bits))
        })
        .collect();
    Ok(MaskTable::PerRequest(table))
}

/// One row per (page view, item): the factor values and the full-mask score.
pub fn build_regression_set<T, R>(dataset: &Dataset<T>, model: &R) -> Result<(Vec<f64>, Array2<f64>)>
where
    T: Scalar,
    R: Ranker<T> + ?Sized,
{
    let p = dataset.p();
    if model.p() != p {
        return Err(CfsError::Shape(format!("model has p = {}, dataset has p = {p}", model.p())));
    }
    let total: usize = dataset.page_views().iter().map(|pv| pv.n_items()).sum();
    let mut targets = Vec::with_capacity(total);
    let mut rows = Array2::<f64>::zeros((total, p));
    let all = FactorMask::all_ones(p);
    let mut r = 0;
    for pv in dataset.page_views() {
        let scores = score_items(model, pv.request_id(), &pv.factors, &all)?;
        for (j, s) in scores.into_iter().enumerate() {
            targets.push(s.as_f64());
            for (dst, src) in rows.row_mut(r).iter_mut().zip(pv.factors.item(j).iter()) {
                *dst = src.as_f64();
            }
            r += 1;
        }
    }
    Ok((targets, rows))
}

/// Runs one baseline on the training data.
pub fn run_baseline<T, R>(spec: &BaselineSpec, dataset: &Dataset<T>, model: &R, tree: &ExtraTreesConfig) -> Result<MaskTable>
where
    T: Scalar,
    R: Ranker<T> + ?Sized,
{
    spec.validate(dataset.p())?;
    if let BaselineSpec::NormElimination { epsilon } = *spec {
        return norm_elimination(dataset, T::lit(epsilon));
    }
    let (targets, rows) = build_regression_set(dataset, model)?;
    let mask = match *spec {
        BaselineSpec::Lasso { alpha } => lasso_select(&targets, &rows, alpha)?,
        BaselineSpec::Tree { mode } => tree_select(&targets, &rows, mode, tree)?,
        BaselineSpec::FTest { k } => ftest_select(&targets, &rows, k)?,
        BaselineSpec::NormElimination { .. } => unreachable!("handled above"),
    };
    Ok(MaskTable::Global(mask))
}

const MASK_HEADER: &str = "cfs-mask 1";

/// Text mask file:
///
/// ```text
/// cfs-mask 1
/// method lasso:0.05
/// p 8
/// kind global            (or per_request)
/// mask * 10110010        (global: one line)
/// mask 17 10110010       (per_request: one line per request id)
/// ```
#[derive(Debug, Clone, PartialEq)]
pub struct MaskFile {
    pub method: String,
    pub p: usize,
    pub table: MaskTable,
}

impl MaskFile {
    pub fn render(&self) -> String {
        let mut out = format!("{MASK_HEADER}\nmethod {}\np {}\n", self.method, self.p);
        match &self.table {
            MaskTable::Global(m) => out.push_str(&format!("kind global\nmask * {m}\n")),
            MaskTable::PerRequest(t) => {
                out.push_str("kind per_request\n");
                for (id, m) in t {
                    out.push_str(&format!("mask {id} {m}\n"));
                }
            }
        }
        out
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let err = |line: usize, m: &str| CfsError::format(path, format!("line {line}: {m}"));
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        let mut next = |what: &str| lines.next().ok_or_else(|| CfsError::format(path, format!("missing {what}")));
        let (n, header) = next("header")?;
        if header != MASK_HEADER {
            return Err(err(n, "not a mask file (expected `cfs-mask 1`)"));
        }
        let field = |(n, l): (usize, &str), key: &str| -> Result<String> {
            l.strip_prefix(key)
                .and_then(|r| r.strip_prefix(' '))
                .map(str::to_string)
                .ok_or_else(|| err(n, &format!("expected `{key} ...`")))
        };
        let method = field(next("method")?, "method")?;
        let p_line = next("p")?;
        let p: usize = field(p_line, "p")?.parse().map_err(|_| err(p_line.0, "p is not an integer"))?;
        let kind_line = next("kind")?;
        let kind = field(kind_line, "kind")?;
        let mut entries = Vec::new();
        for (n, l) in lines {
            if l.trim().is_empty() {
                continue;
            }
            let mut parts = l.split_whitespace();
            let (Some("mask"), Some(id), Some(bits), None) = (parts.next(), parts.next(), parts.next(), parts.next()) else {
                return Err(err(n, "expected `mask <id|*> <bits>`"));
            };
            let mask: FactorMask = bits.parse().map_err(|_| err(n, "bits must be 0/1 characters"))?;
            if mask.len() != p {
                return Err(err(n, &format!("mask has {} bits, header says p = {p}", mask.len())));
            }
            entries.push((n, id.to_string(), mask));
        }
        let table = match kind.as_str() {
            "global" => match entries.as_slice() {
                [(_, id, m)] if id == "*" => MaskTable::Global(m.clone()),
                _ => return Err(err(kind_line.0, "global mask file needs exactly one `mask * <bits>` line")),
            },
            "per_request" => {
                let mut t = BTreeMap::new();
                for (n, id, m) in entries {
                    let id: RequestId = id.parse().map_err(|_| err(n, "request id is not an integer"))?;
                    if t.insert(id, m).is_some() {
                        return Err(err(n, "duplicate request id"));
                    }
                }
                MaskTable::PerRequest(t)
            }
            _ => return Err(err(kind_line.0, "kind must be `global` or `per_request`")),
        };
        Ok(MaskFile { method, p, table })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.render()).map_err(|e| CfsError::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| CfsError::io(path, e))?;
        Self::parse(&text, path)
    }
}
