use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analytics::RankList;
use crate::data::Dataset;
use crate::error::{Result, SimexError};
use crate::loss::{batch_deltas, LossKind};
use crate::models::AutoencoderModel;
use crate::tensor::Scalar;

use super::fleet::Fleet;

/// Samples reconstructed per forward pass during evaluation.
const EVAL_CHUNK: usize = 256;

/// Δ of one unknown set under one member, with the per-sample values
/// in dataset order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaEvaluation {
    pub mean: f64,
    pub per_sample: Vec<f64>,
}

/// Per-sample δ of every sample of `x` through `member`, without checking
/// the member's training loss.
pub(crate) fn sample_deltas<T: Scalar>(member: &AutoencoderModel<T>, x: &Dataset, kind: &LossKind) -> Result<Vec<f64>> {
    if x.is_empty() {
        return Err(SimexError::Empty("unknown dataset"));
    }
    let mut out = Vec::with_capacity(x.len());
    let all: Vec<usize> = (0..x.len()).collect();
    for chunk in all.chunks(EVAL_CHUNK) {
        let batch = x.tensor_of::<T>(chunk);
        let recon = member.reconstruct(&batch)?;
        out.extend(batch_deltas(&batch, &recon, kind)?);
    }
    Ok(out)
}

pub(crate) fn mean_of(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Δ(X|Y): the mean reconstruction difference of `x` through the member
/// trained on Y.
pub fn evaluate_delta<T: Scalar>(member: &AutoencoderModel<T>, x: &Dataset, kind: &LossKind) -> Result<DeltaEvaluation> {
    if member.meta().loss.as_ref() != Some(kind) {
        return Err(SimexError::LossKindMismatch {
            trained: member.meta().loss.map_or("none".into(), |l| l.to_string()),
            requested: kind.to_string(),
        });
    }
    let per_sample = sample_deltas(member, x, kind)?;
    let mean = mean_of(&per_sample);
    if !mean.is_finite() {
        return Err(SimexError::NonFinite(format!("delta of `{}`", x.id())));
    }
    Ok(DeltaEvaluation { mean, per_sample })
}

/// Spread of the per-sample values behind one cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Percentiles {
    pub p10: f64,
    pub p50: f64,
    pub p90: f64,
    pub max: f64,
}

impl Percentiles {
    /// Linear interpolation between order statistics.
    pub fn of(values: &[f64]) -> Percentiles {
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let at = |q: f64| {
            let pos = q * (sorted.len() - 1) as f64;
            let lo = pos.floor() as usize;
            let hi = pos.ceil() as usize;
            sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
        };
        Percentiles {
            p10: at(0.1),
            p50: at(0.5),
            p90: at(0.9),
            max: sorted[sorted.len() - 1],
        }
    }
}

/// Δ of every unknown (rows) under every reference member (columns).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaMatrix {
    pub rows: Vec<String>,
    pub columns: Vec<String>,
    pub values: Vec<Vec<f64>>,
    pub loss: LossKind,
    pub normalized: bool,
    /// Mean L2 norm of each column's reference, present once normalized.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub norms: Option<BTreeMap<String, f64>>,
    pub spread: Vec<Vec<Percentiles>>,
}

pub fn delta_matrix<T: Scalar>(fleet: &Fleet<T>, unknowns: &[Dataset], parallel: bool) -> Result<DeltaMatrix> {
    if fleet.is_empty() {
        return Err(SimexError::Empty("fleet"));
    }
    if unknowns.is_empty() {
        return Err(SimexError::Empty("unknown list"));
    }
    let columns: Vec<String> = fleet.reference_ids().into_iter().map(String::from).collect();
    let cells: Vec<(usize, usize)> = (0..unknowns.len())
        .flat_map(|i| (0..columns.len()).map(move |k| (i, k)))
        .collect();
    let kind = fleet.loss();
    let eval = |&(i, k): &(usize, usize)| {
        let member = fleet.member(&columns[k]).expect("column ids come from the fleet");
        evaluate_delta(member, &unknowns[i], &kind)
    };
    let results: Vec<Result<DeltaEvaluation>> = if parallel {
        cells.par_iter().map(eval).collect()
    } else {
        cells.iter().map(eval).collect()
    };
    let mut values = vec![Vec::with_capacity(columns.len()); unknowns.len()];
    let mut spread = vec![Vec::with_capacity(columns.len()); unknowns.len()];
    for ((i, _), r) in cells.iter().zip(results) {
        let r = r?;
        values[*i].push(r.mean);
        spread[*i].push(Percentiles::of(&r.per_sample));
    }
    Ok(DeltaMatrix {
        rows: unknowns.iter().map(|d| d.id().to_string()).collect(),
        columns,
        values,
        loss: kind,
        normalized: false,
        norms: None,
        spread,
    })
}

/// Divide each column by the mean L2 norm of its reference dataset.
pub fn normalize_deltas(matrix: &DeltaMatrix, references: &[Dataset]) -> Result<DeltaMatrix> {
    if matrix.normalized {
        return Err(SimexError::invalid("delta matrix is already normalized"));
    }
    let mut norms = BTreeMap::new();
    for id in &matrix.columns {
        let reference = references
            .iter()
            .find(|r| r.id() == id)
            .ok_or_else(|| SimexError::invalid(format!("no reference dataset `{id}` to normalize by")))?;
        let norm = reference.mean_l2_norm();
        if norm <= 0.0 || !norm.is_finite() {
            return Err(SimexError::invalid(format!("reference `{id}` has zero mean L2 norm")));
        }
        norms.insert(id.clone(), norm);
    }
    let scale: Vec<f64> = matrix.columns.iter().map(|id| norms[id]).collect();
    let mut out = matrix.clone();
    for (row, spread) in out.values.iter_mut().zip(out.spread.iter_mut()) {
        for ((v, p), s) in row.iter_mut().zip(spread.iter_mut()).zip(&scale) {
            *v /= s;
            *p = Percentiles {
                p10: p.p10 / s,
                p50: p.p50 / s,
                p90: p.p90 / s,
                max: p.max / s,
            };
        }
    }
    out.normalized = true;
    out.norms = Some(norms);
    Ok(out)
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

impl DeltaMatrix {
    pub fn value(&self, row: &str, column: &str) -> Option<f64> {
        let i = self.rows.iter().position(|r| r == row)?;
        let k = self.columns.iter().position(|c| c == column)?;
        Some(self.values[i][k])
    }

    /// References ordered for unknown `row`.
    pub fn row_ordering(&self, row: usize) -> Result<SimilarityOrdering> {
        let entries: Vec<(&str, f64)> = self.columns.iter().map(String::as_str).zip(self.values[row].iter().copied()).collect();
        order_by_similarity(&entries)
    }

    /// Unknowns ordered under reference `column`.
    pub fn column_ordering(&self, column: usize) -> Result<SimilarityOrdering> {
        let entries: Vec<(&str, f64)> = self.rows.iter().map(String::as_str).zip(self.values.iter().map(|r| r[column])).collect();
        order_by_similarity(&entries)
    }

    /// Header row of column ids, then one row per unknown. Values use the
    /// shortest representation that parses back exactly.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("unknown");
        for c in &self.columns {
            out.push(',');
            out.push_str(&csv_field(c));
        }
        out.push('\n');
        for (id, row) in self.rows.iter().zip(&self.values) {
            out.push_str(&csv_field(id));
            for v in row {
                write!(out, ",{v}").expect("writing to a String");
            }
            out.push('\n');
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Ids sorted from most to least similar (ascending Δ).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityOrdering {
    pub order: Vec<String>,
    pub deltas: Vec<f64>,
    pub tie_break: String,
}

pub const TIE_BREAK_LEXICAL: &str = "lexical-id";

pub fn order_by_similarity<S: AsRef<str>>(entries: &[(S, f64)]) -> Result<SimilarityOrdering> {
    if entries.is_empty() {
        return Err(SimexError::Empty("delta entries"));
    }
    if let Some((id, v)) = entries.iter().find(|(_, v)| !v.is_finite()) {
        return Err(SimexError::NonFinite(format!("delta {v} for `{}`", id.as_ref())));
    }
    let mut sorted: Vec<(&str, f64)> = entries.iter().map(|(id, v)| (id.as_ref(), *v)).collect();
    sorted.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(b.0)));
    Ok(SimilarityOrdering {
        order: sorted.iter().map(|(id, _)| id.to_string()).collect(),
        deltas: sorted.iter().map(|(_, v)| *v).collect(),
        tie_break: TIE_BREAK_LEXICAL.to_string(),
    })
}

impl SimilarityOrdering {
    pub fn rank_list(&self) -> RankList {
        RankList::from_order(&self.order).expect("ordering ids are unique")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ordering_sorts_and_breaks_ties_lexically() {
        let o = order_by_similarity(&[("b", 0.2), ("c", 0.1), ("a", 0.2)]).unwrap();
        assert_eq!(o.order, ["c", "a", "b"]);
        assert_eq!(o.deltas, [0.1, 0.2, 0.2]);
        assert_eq!(order_by_similarity(&[("x", 1.0)]).unwrap().order, ["x"]);
        assert!(order_by_similarity(&[("x", f64::NAN)]).is_err());
        assert!(order_by_similarity::<&str>(&[]).is_err());
    }

    #[test]
    fn percentiles_interpolate() {
        let p = Percentiles::of(&[0.0, 10.0]);
        assert!((p.p10 - 1.0).abs() < 1e-12);
        assert_eq!(p.p50, 5.0);
        assert_eq!(p.max, 10.0);
        assert_eq!(Percentiles::of(&[3.0]).p90, 3.0);
    }

    #[test]
    fn csv_quotes_awkward_ids() {
        let m = DeltaMatrix {
            rows: vec!["a,b".into()],
            columns: vec!["c".into()],
            values: vec![vec![0.1]],
            loss: LossKind::Mse,
            normalized: false,
            norms: None,
            spread: vec![vec![Percentiles::of(&[0.1])]],
        };
        assert_eq!(m.to_csv(), "unknown,c\n\"a,b\",0.1\n");
    }
}
