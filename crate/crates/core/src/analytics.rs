//! Rank statistics and the greedy class-pairing procedure.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Result, SimexError};

/// Ids in rank order with their (1-based, tie-averaged) ranks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankList {
    ids: Vec<String>,
    ranks: Vec<f64>,
}

impl RankList {
    /// A tie-free ranking from an ordered id sequence.
    pub fn from_order<S: AsRef<str>>(order: &[S]) -> Result<Self> {
        let ids: Vec<String> = order.iter().map(|s| s.as_ref().to_string()).collect();
        check_unique(&ids)?;
        let ranks = (1..=ids.len()).map(|r| r as f64).collect();
        Ok(RankList { ids, ranks })
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn ranks(&self) -> &[f64] {
        &self.ranks
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn has_ties(&self) -> bool {
        self.ranks.iter().any(|r| r.fract() != 0.0) || {
            let mut seen = BTreeSet::new();
            self.ranks.iter().any(|r| !seen.insert(r.to_bits()))
        }
    }

    fn rank_map(&self) -> BTreeMap<&str, f64> {
        self.ids.iter().map(String::as_str).zip(self.ranks.iter().copied()).collect()
    }
}

fn check_unique(ids: &[String]) -> Result<()> {
    let mut seen = BTreeSet::new();
    for id in ids {
        if !seen.insert(id.as_str()) {
            return Err(SimexError::invalid(format!("duplicate id `{id}` in ranking")));
        }
    }
    Ok(())
}

/// Rank `values` ascending (or descending). Equal values share the mean of
/// the ranks they span; the id sequence breaks value ties by id.
pub fn rank_of<S: AsRef<str>>(values: &[(S, f64)], ascending: bool) -> Result<RankList> {
    if let Some((id, v)) = values.iter().find(|(_, v)| !v.is_finite()) {
        return Err(SimexError::NonFinite(format!("value {v} for `{}`", id.as_ref())));
    }
    let mut items: Vec<(&str, f64)> = values.iter().map(|(id, v)| (id.as_ref(), *v)).collect();
    let ids: Vec<String> = items.iter().map(|(id, _)| id.to_string()).collect();
    check_unique(&ids)?;
    items.sort_by(|a, b| {
        let by_value = if ascending { a.1.total_cmp(&b.1) } else { b.1.total_cmp(&a.1) };
        by_value.then_with(|| a.0.cmp(b.0))
    });
    let mut ranks = vec![0.0; items.len()];
    let mut start = 0;
    while start < items.len() {
        let mut end = start + 1;
        while end < items.len() && items[end].1 == items[start].1 {
            end += 1;
        }
        // Positions start..end hold ranks start+1 ..= end.
        let shared = (start + 1 + end) as f64 / 2.0;
        ranks[start..end].fill(shared);
        start = end;
    }
    Ok(RankList {
        ids: items.into_iter().map(|(id, _)| id.to_string()).collect(),
        ranks,
    })
}

/// Spearman's rank correlation between two rankings of the same ids.
pub fn spearman_rho(a: &RankList, b: &RankList) -> Result<f64> {
    let n = a.len();
    if n < 2 {
        return Err(SimexError::invalid(format!("spearman needs at least 2 items, got {n}")));
    }
    let (ma, mb) = (a.rank_map(), b.rank_map());
    if ma.keys().ne(mb.keys()) {
        return Err(SimexError::invalid("rankings cover different id sets"));
    }
    let pairs: Vec<(f64, f64)> = ma.iter().map(|(id, &ra)| (ra, mb[id])).collect();
    if !a.has_ties() && !b.has_ties() {
        let d2: f64 = pairs.iter().map(|(x, y)| (x - y) * (x - y)).sum();
        let nf = n as f64;
        return Ok(1.0 - 6.0 * d2 / (nf * (nf * nf - 1.0)));
    }
    let mean = (n as f64 + 1.0) / 2.0;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in &pairs {
        sxy += (x - mean) * (y - mean);
        sxx += (x - mean) * (x - mean);
        syy += (y - mean) * (y - mean);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(SimexError::invalid("spearman undefined when every item is tied"));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pair {
    pub row: usize,
    pub column: usize,
    pub cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairingResult {
    /// Pairs in selection order (non-decreasing cost).
    pub pairs: Vec<Pair>,
    pub unpaired_rows: Vec<usize>,
    pub unpaired_columns: Vec<usize>,
}

/// Repeatedly take the cheapest cell whose row and column are both unused,
/// ties going to the lower row and then the lower column, until one side
/// is exhausted. Indices are 0-based.
pub fn greedy_pairing(costs: &[Vec<f64>]) -> Result<PairingResult> {
    let rows = costs.len();
    let cols = costs.first().map_or(0, Vec::len);
    if rows == 0 || cols == 0 {
        return Err(SimexError::Empty("cost matrix"));
    }
    if costs.iter().any(|r| r.len() != cols) {
        return Err(SimexError::invalid("cost matrix rows have unequal lengths"));
    }
    if let Some(v) = costs.iter().flatten().find(|v| !v.is_finite()) {
        return Err(SimexError::NonFinite(format!("cost matrix entry {v}")));
    }
    let mut row_used = vec![false; rows];
    let mut col_used = vec![false; cols];
    let mut pairs = Vec::with_capacity(rows.min(cols));
    for _ in 0..rows.min(cols) {
        let mut best: Option<(usize, usize)> = None;
        for (i, row) in costs.iter().enumerate() {
            if row_used[i] {
                continue;
            }
            for (k, &v) in row.iter().enumerate() {
                if col_used[k] {
                    continue;
                }
                if best.map_or(true, |(bi, bk)| v < costs[bi][bk]) {
                    best = Some((i, k));
                }
            }
        }
        let (i, k) = best.expect("an unused row and column remain");
        row_used[i] = true;
        col_used[k] = true;
        pairs.push(Pair {
            row: i,
            column: k,
            cost: costs[i][k],
        });
    }
    Ok(PairingResult {
        pairs,
        unpaired_rows: (0..rows).filter(|&i| !row_used[i]).collect(),
        unpaired_columns: (0..cols).filter(|&k| !col_used[k]).collect(),
    })
}
