//! Inter-annotator agreement and the 2×2 Pearson chi-square test.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Critical value of chi-square with one degree of freedom at α = 0.05.
pub const CHI2_CRITICAL_05: f64 = 3.841;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementReport {
    /// Cohen's kappa; averaged over annotator pairs when there are more than two.
    pub kappa: f64,
    /// Scott's pi, averaged the same way.
    pub pi: f64,
    /// Krippendorff's alpha with nominal distance.
    pub alpha: f64,
    pub items: usize,
    pub annotators: usize,
}

/// Agreement over a table of `items × annotators`; `None` marks a missing label.
pub fn agreement_metrics<L: Ord + Clone>(table: &[Vec<Option<L>>]) -> Result<AgreementReport> {
    if table.len() < 2 {
        return Err(Error::Degenerate(format!("agreement needs at least 2 items, got {}", table.len())));
    }
    let annotators = table[0].len();
    if annotators < 2 {
        return Err(Error::Degenerate("agreement needs at least 2 annotators".into()));
    }
    if let Some(i) = table.iter().position(|r| r.len() != annotators) {
        return Err(Error::Invalid(format!(
            "item {i} has {} labels, expected {annotators}",
            table[i].len()
        )));
    }

    let mut kappa = 0.0;
    let mut pi = 0.0;
    let mut pairs = 0usize;
    for a in 0..annotators {
        for b in a + 1..annotators {
            let rows: Vec<(&L, &L)> = table
                .iter()
                .filter_map(|r| match (&r[a], &r[b]) {
                    (Some(x), Some(y)) => Some((x, y)),
                    _ => None,
                })
                .collect();
            let (k, p) = pair_agreement(&rows)?;
            kappa += k;
            pi += p;
            pairs += 1;
        }
    }
    Ok(AgreementReport {
        kappa: kappa / pairs as f64,
        pi: pi / pairs as f64,
        alpha: krippendorff_alpha(table)?,
        items: table.len(),
        annotators,
    })
}

/// Cohen's kappa and Scott's pi for two aligned label sequences.
pub fn cohen_scott<L: Ord>(a: &[L], b: &[L]) -> Result<(f64, f64)> {
    if a.len() != b.len() {
        return Err(Error::Invalid(format!("annotator lengths differ: {} vs {}", a.len(), b.len())));
    }
    let rows: Vec<(&L, &L)> = a.iter().zip(b).collect();
    pair_agreement(&rows)
}

fn pair_agreement<L: Ord>(rows: &[(&L, &L)]) -> Result<(f64, f64)> {
    let n = rows.len();
    if n < 2 {
        return Err(Error::Degenerate(format!("only {n} items labelled by both annotators")));
    }
    let mut ca: BTreeMap<&L, usize> = BTreeMap::new();
    let mut cb: BTreeMap<&L, usize> = BTreeMap::new();
    let mut observed = 0usize;
    for (x, y) in rows {
        *ca.entry(*x).or_default() += 1;
        *cb.entry(*y).or_default() += 1;
        if x == y {
            observed += 1;
        }
    }
    let nf = n as f64;
    let po = observed as f64 / nf;
    let mut pe_k = 0.0;
    let mut pe_pi = 0.0;
    let mut cats: Vec<&L> = ca.keys().chain(cb.keys()).copied().collect();
    cats.sort();
    cats.dedup();
    for c in cats {
        let pa = *ca.get(c).unwrap_or(&0) as f64 / nf;
        let pb = *cb.get(c).unwrap_or(&0) as f64 / nf;
        pe_k += pa * pb;
        let joint = (pa + pb) / 2.0;
        pe_pi += joint * joint;
    }
    if 1.0 - pe_k <= 0.0 || 1.0 - pe_pi <= 0.0 {
        return Err(Error::Degenerate("expected agreement is 1 (constant labels)".into()));
    }
    Ok(((po - pe_k) / (1.0 - pe_k), (po - pe_pi) / (1.0 - pe_pi)))
}

/// Krippendorff's alpha, nominal metric, tolerating missing labels.
pub fn krippendorff_alpha<L: Ord + Clone>(table: &[Vec<Option<L>>]) -> Result<f64> {
    // Coincidence matrix over pairable values.
    let mut coincidence: BTreeMap<(L, L), f64> = BTreeMap::new();
    let mut marginal: BTreeMap<L, f64> = BTreeMap::new();
    for row in table {
        let values: Vec<&L> = row.iter().flatten().collect();
        let m = values.len();
        if m < 2 {
            continue;
        }
        let w = 1.0 / (m - 1) as f64;
        for (i, c) in values.iter().enumerate() {
            for (j, k) in values.iter().enumerate() {
                if i != j {
                    *coincidence.entry(((*c).clone(), (*k).clone())).or_default() += w;
                }
            }
            *marginal.entry((*c).clone()).or_default() += 1.0;
        }
    }
    let n: f64 = marginal.values().sum();
    if n < 2.0 {
        return Err(Error::Degenerate("fewer than 2 pairable values".into()));
    }
    let disagree_obs: f64 = coincidence.iter().filter(|((c, k), _)| c != k).map(|(_, v)| v).sum();
    let sum_sq: f64 = marginal.values().map(|v| v * v).sum();
    if n * n - sum_sq <= 0.0 {
        return Err(Error::Degenerate("expected disagreement is 0 (constant labels)".into()));
    }
    let alpha = 1.0 - (n - 1.0) * disagree_obs / (n * n - sum_sq);
    if !alpha.is_finite() {
        return Err(Error::NonFinite(String::from("alpha")));
    }
    Ok(alpha)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChiSquare {
    pub statistic: f64,
    pub significant: bool,
}

/// Pearson chi-square for a 2×2 table, without continuity correction.
pub fn chi_square_2x2(counts: [[u64; 2]; 2]) -> Result<ChiSquare> {
    let [[a, b], [c, d]] = counts.map(|r| r.map(|x| x as f64));
    let margins = [a + b, c + d, a + c, b + d];
    if margins.contains(&0.0) {
        return Err(Error::Degenerate(format!("chi-square table {counts:?} has a zero margin")));
    }
    let n = a + b + c + d;
    let diff = a * d - b * c;
    let statistic = n * diff * diff / (margins[0] * margins[1] * margins[2] * margins[3]);
    Ok(ChiSquare {
        statistic,
        significant: statistic > CHI2_CRITICAL_05,
    })
}
