//! Aggregation of repeated runs, dissimilarity/accuracy correlation,
//! per-feature density export and the combined report table.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::dedims::{make_histogram, mid_ranks, DissimilarityReport, Histogram, Measure};
use crate::error::{Error, Result};
use crate::feature_store::FeatureMatrix;
use crate::sandbox::{OodType, SandboxConfig};

/// Significance level behind the report's `p > 0.05` marker.
pub const SIGNIFICANCE: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunAggregate {
    pub config: SandboxConfig,
    /// Best test accuracy of every run.
    pub accuracies: Vec<f64>,
    pub mean: f64,
    /// Population variance.
    pub variance: f64,
}

pub fn aggregate(accuracies: &[f64], config: &SandboxConfig) -> Result<RunAggregate> {
    if accuracies.is_empty() {
        return Err(Error::InvalidParameter("no run results to aggregate".into()));
    }
    if accuracies.len() != config.runs {
        return Err(Error::InvalidParameter(format!(
            "{} results for a config with {} runs",
            accuracies.len(),
            config.runs
        )));
    }
    let n = accuracies.len() as f64;
    let mean = accuracies.iter().sum::<f64>() / n;
    let variance = accuracies.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n;
    Ok(RunAggregate {
        config: config.clone(),
        accuracies: accuracies.to_vec(),
        mean,
        variance,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorrelationMethod {
    Pearson,
    Spearman,
}

fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::ConstantSeries);
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Correlation of `(dissimilarity, accuracy)` pairs. Spearman is Pearson on
/// mid-ranks.
pub fn correlate(pairs: &[(f64, f64)], method: CorrelationMethod) -> Result<f64> {
    if pairs.len() < 3 {
        return Err(Error::InvalidParameter(format!(
            "correlation needs at least 3 pairs, got {}",
            pairs.len()
        )));
    }
    let (x, y): (Vec<f64>, Vec<f64>) = pairs.iter().copied().unzip();
    match method {
        CorrelationMethod::Pearson => pearson(&x, &y),
        CorrelationMethod::Spearman => pearson(&mid_ranks(&x), &mid_ranks(&y)),
    }
}

/// Paired histograms of one feature over a shared range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureDensity {
    pub feature_index: usize,
    pub left_name: String,
    pub right_name: String,
    pub left: Histogram,
    pub right: Histogram,
}

impl FeatureDensity {
    /// Plot-ready CSV: bin bounds, center and both masses.
    pub fn to_csv(&self) -> String {
        let mut out = format!("bin_lo,bin_hi,center,{},{}\n", self.left_name, self.right_name);
        for (i, c) in self.left.centers().enumerate() {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                self.left.edges[i],
                self.left.edges[i + 1],
                c,
                self.left.mass[i],
                self.right.mass[i]
            );
        }
        out
    }
}

pub fn feature_density_export(
    a: &FeatureMatrix,
    b: &FeatureMatrix,
    feature_index: usize,
    bins: usize,
) -> Result<FeatureDensity> {
    if a.d() != b.d() {
        return Err(Error::DimensionMismatch { left: a.d(), right: b.d() });
    }
    if feature_index >= a.d() {
        return Err(Error::InvalidParameter(format!(
            "feature index {feature_index} out of range for {} features",
            a.d()
        )));
    }
    let xs: Vec<f64> = a.column(feature_index).collect();
    let ys: Vec<f64> = b.column(feature_index).collect();
    let (mut lo, mut hi) = xs
        .iter()
        .chain(&ys)
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if lo == hi {
        lo -= 0.5;
        hi += 0.5;
    }
    Ok(FeatureDensity {
        feature_index,
        left_name: a.name().to_string(),
        right_name: b.name().to_string(),
        left: make_histogram(&xs, bins, (lo, hi))?,
        right: make_histogram(&ys, bins, (lo, hi))?,
    })
}

/// Identity of a report row.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CellKey {
    pub s_iod: String,
    pub t_ood: OodType,
    pub s_uood: String,
    pub pct_uood: u32,
    pub n_l: usize,
}

impl CellKey {
    pub fn of(config: &SandboxConfig) -> Self {
        Self {
            s_iod: config.s_iod.clone(),
            t_ood: config.t_ood,
            s_uood: config.s_uood.clone(),
            pct_uood: config.pct_uood,
            n_l: config.n_l,
        }
    }

    fn label(&self) -> String {
        format!(
            "{}/{}/{}/{}%/n_l={}",
            self.s_iod, self.t_ood, self.s_uood, self.pct_uood, self.n_l
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceCell {
    pub measure: Measure,
    pub mean: f64,
    pub std: f64,
    pub p_value: f64,
    /// True when `p > 0.05`.
    pub not_significant: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub key: CellKey,
    pub accuracy_mean: f64,
    pub accuracy_variance: f64,
    pub distances: Vec<DistanceCell>,
    /// Rank by d_C among the sources sharing `(s_iod, pct_uood, n_l)`.
    pub cos_rank: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportTable {
    pub measures: Vec<Measure>,
    pub rows: Vec<ReportRow>,
}

/// Joins grid aggregates with their distance reports, one row per cell.
/// Every cell needs both, with the same set of measures in every cell.
pub fn report_matrix(
    results: &[RunAggregate],
    distances: &[(CellKey, Vec<DissimilarityReport>)],
) -> Result<ReportTable> {
    let acc: BTreeMap<CellKey, &RunAggregate> = results.iter().map(|r| (CellKey::of(&r.config), r)).collect();
    let dist: BTreeMap<&CellKey, &Vec<DissimilarityReport>> = distances.iter().map(|(k, v)| (k, v)).collect();
    let mut missing: Vec<String> = acc
        .keys()
        .filter(|k| !dist.contains_key(k))
        .map(|k| format!("{} (distances)", k.label()))
        .collect();
    missing.extend(
        dist.keys()
            .filter(|k| !acc.contains_key(**k))
            .map(|k| format!("{} (accuracy)", k.label())),
    );
    if !missing.is_empty() {
        return Err(Error::MissingCells(missing));
    }
    if acc.is_empty() {
        return Err(Error::InvalidParameter("empty grid".into()));
    }

    let measures: Vec<Measure> = {
        let first: BTreeSet<Measure> = dist.values().next().unwrap().iter().map(|r| r.measure).collect();
        for (k, reports) in &dist {
            let set: BTreeSet<Measure> = reports.iter().map(|r| r.measure).collect();
            if set != first {
                return Err(Error::MissingCells(vec![format!("{} (measure set differs)", k.label())]));
            }
        }
        first.into_iter().collect()
    };

    let mut rows: Vec<ReportRow> = acc
        .iter()
        .map(|(key, agg)| {
            let reports = dist[key];
            let distances = measures
                .iter()
                .map(|m| {
                    let r = reports.iter().find(|r| r.measure == *m).unwrap();
                    DistanceCell {
                        measure: *m,
                        mean: r.mean,
                        std: r.std,
                        p_value: r.p_value,
                        not_significant: r.p_value > SIGNIFICANCE,
                    }
                })
                .collect();
            ReportRow {
                key: key.clone(),
                accuracy_mean: agg.mean,
                accuracy_variance: agg.variance,
                distances,
                cos_rank: None,
            }
        })
        .collect();

    if measures.contains(&Measure::Cos) {
        let mut groups: BTreeMap<(String, u32, usize), Vec<usize>> = BTreeMap::new();
        for (i, row) in rows.iter().enumerate() {
            groups
                .entry((row.key.s_iod.clone(), row.key.pct_uood, row.key.n_l))
                .or_default()
                .push(i);
        }
        let cos_of = |row: &ReportRow| row.distances.iter().find(|d| d.measure == Measure::Cos).unwrap().mean;
        for members in groups.values() {
            let mut ordered = members.clone();
            ordered.sort_by(|&a, &b| {
                cos_of(&rows[a])
                    .total_cmp(&cos_of(&rows[b]))
                    .then_with(|| rows[a].key.cmp(&rows[b].key))
            });
            for (rank, &i) in ordered.iter().enumerate() {
                rows[i].cos_rank = Some(rank + 1);
            }
        }
    }
    Ok(ReportTable { measures, rows })
}

impl ReportTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("s_iod,t_ood,s_uood,pct_uood,n_l,accuracy_mean,accuracy_variance");
        for m in &self.measures {
            let _ = write!(out, ",{m}_mean,{m}_std,{m}_p,{m}_not_significant");
        }
        out.push_str(",cos_rank\n");
        for row in &self.rows {
            let k = &row.key;
            let _ = write!(
                out,
                "{},{},{},{},{},{},{}",
                k.s_iod, k.t_ood, k.s_uood, k.pct_uood, k.n_l, row.accuracy_mean, row.accuracy_variance
            );
            for d in &row.distances {
                let _ = write!(out, ",{},{},{},{}", d.mean, d.std, d.p_value, d.not_significant);
            }
            let _ = writeln!(out, ",{}", row.cos_rank.map(|r| r.to_string()).unwrap_or_default());
        }
        out
    }

    /// Human-readable table. `*` marks distances with p > 0.05; the d_C rank
    /// follows the OOD source in parentheses.
    pub fn to_text(&self) -> String {
        let mut out = format!(
            "{:<12} {:<4} {:<16} {:>5} {:>5} {:>18}",
            "S_IOD", "T", "S_uOOD", "%", "n_l", "acc mean±var"
        );
        for m in &self.measures {
            let _ = write!(out, " {:>20}", format!("d_{m}"));
        }
        out.push('\n');
        for row in &self.rows {
            let k = &row.key;
            let source = match row.cos_rank {
                Some(r) => format!("{} ({r})", k.s_uood),
                None => k.s_uood.clone(),
            };
            let _ = write!(
                out,
                "{:<12} {:<4} {:<16} {:>5} {:>5} {:>18}",
                k.s_iod,
                k.t_ood.to_string(),
                source,
                k.pct_uood,
                k.n_l,
                format!("{:.4}±{:.4}", row.accuracy_mean, row.accuracy_variance)
            );
            for d in &row.distances {
                let marker = if d.not_significant { "*" } else { "" };
                let _ = write!(out, " {:>20}", format!("{:.3}±{:.3}{marker}", d.mean, d.std));
            }
            out.push('\n');
        }
        out
    }
}

/// Dissimilarity/accuracy correlation per labelled source and budget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationRow {
    pub s_l: String,
    pub n_l: usize,
    pub method: CorrelationMethod,
    /// `None` when fewer than three cells or a constant series.
    pub r: BTreeMap<Measure, Option<f64>>,
}

impl ReportTable {
    /// `(distance mean, accuracy mean)` of every row matching `filter`.
    pub fn pairs(&self, measure: Measure, filter: impl Fn(&CellKey) -> bool) -> Vec<(f64, f64)> {
        self.rows
            .iter()
            .filter(|row| filter(&row.key))
            .filter_map(|row| {
                row.distances
                    .iter()
                    .find(|d| d.measure == measure)
                    .map(|d| (d.mean, row.accuracy_mean))
            })
            .collect()
    }

    /// One row per `(s_iod, n_l)` over its contaminated cells.
    pub fn correlations(&self, method: CorrelationMethod) -> Vec<CorrelationRow> {
        let groups: BTreeSet<(String, usize)> = self.rows.iter().map(|r| (r.key.s_iod.clone(), r.key.n_l)).collect();
        groups
            .into_iter()
            .map(|(s_l, n_l)| {
                let r = self
                    .measures
                    .iter()
                    .map(|&m| {
                        let pairs = self.pairs(m, |k| k.s_iod == s_l && k.n_l == n_l && k.pct_uood > 0);
                        (m, correlate(&pairs, method).ok())
                    })
                    .collect();
                CorrelationRow { s_l, n_l, method, r }
            })
            .collect()
    }
}
