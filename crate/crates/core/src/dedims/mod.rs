//! Dataset dissimilarity measures computed on random sub-samples.
//!
//! Each measure repeats `draws` times: take `2·tau` distinct rows of the
//! labelled-side set `S_a` (split into `A1` and `A2`) and `tau` rows of `S_b`.
//! The inter distance compares `A1` with the `S_b` draw, the intra reference
//! compares `A1` with `A2`, and the draw's value is `|inter - intra|`. A
//! Wilcoxon signed-rank test over the paired inter/intra lists gives the
//! report's p-value.
//!
//! Minkowski measures reduce a draw to the mean nearest-neighbour distance
//! from `A1` into the other sample. Density measures sum, over every feature
//! dimension, a divergence between per-dimension histograms whose range is
//! the union of the two samples being compared.
//!
//! Draw `c` uses `rng::stream(seed, c)`, so reports do not depend on how many
//! threads evaluate the draws.

mod histogram;
mod nearest;
mod wilcoxon;

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use histogram::{cosine_distance, js_divergence, make_histogram, Histogram};
pub use nearest::{nn_minkowski, Norm};
pub use wilcoxon::{mid_ranks, wilcoxon_signed_rank, SignedRanks, EXACT_LIMIT};

use crate::error::{Error, Result};
use crate::feature_store::{sample_indices, FeatureMatrix, SubsampleSpec};
use crate::rng;

pub const DEFAULT_BINS: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Measure {
    L1,
    L2,
    Js,
    Cos,
}

impl Measure {
    pub const ALL: [Measure; 4] = [Measure::L1, Measure::L2, Measure::Js, Measure::Cos];

    pub fn as_str(self) -> &'static str {
        match self {
            Measure::L1 => "l1",
            Measure::L2 => "l2",
            Measure::Js => "js",
            Measure::Cos => "cos",
        }
    }
}

impl fmt::Display for Measure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Measure {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "l1" | "manhattan" => Ok(Measure::L1),
            "l2" | "euclidean" => Ok(Measure::L2),
            "js" | "jensen-shannon" => Ok(Measure::Js),
            "cos" | "cosine" | "c" => Ok(Measure::Cos),
            other => Err(Error::InvalidParameter(format!("unknown measure {other:?}"))),
        }
    }
}

/// Per-dimension divergence for the density measures.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DensityKind {
    Js,
    Cos,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DissimilarityReport {
    pub measure: Measure,
    /// Mean reference-subtracted distance over all draws.
    pub mean: f64,
    /// Sample standard deviation of `per_sample` (0 for a single draw).
    pub std: f64,
    /// `|inter - intra|` per draw.
    pub per_sample: Vec<f64>,
    pub inter: Vec<f64>,
    pub intra: Vec<f64>,
    pub p_value: f64,
    pub tau: usize,
    pub draws: usize,
}

impl DissimilarityReport {
    fn from_draws(measure: Measure, spec: &SubsampleSpec, pairs: Vec<(f64, f64)>) -> Result<Self> {
        Self::from_pairs(measure, spec.tau, pairs)
    }

    /// Report over `(inter, intra)` pairs; `draws` is the pair count.
    pub fn from_pairs(measure: Measure, tau: usize, pairs: Vec<(f64, f64)>) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::InvalidParameter("no draws".into()));
        }
        let draws = pairs.len();
        let (inter, intra): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        let per_sample: Vec<f64> = inter.iter().zip(&intra).map(|(a, b)| (a - b).abs()).collect();
        let n = per_sample.len() as f64;
        let mean = per_sample.iter().sum::<f64>() / n;
        let std = if per_sample.len() > 1 {
            (per_sample.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        let p_value = wilcoxon_signed_rank(&inter, &intra)?;
        Ok(Self {
            measure,
            mean,
            std,
            per_sample,
            inter,
            intra,
            p_value,
            tau,
            draws,
        })
    }

    /// Joins the draws of several reports of one measure into one report.
    pub fn pooled(reports: &[DissimilarityReport]) -> Result<Self> {
        let first = reports
            .first()
            .ok_or_else(|| Error::InvalidParameter("nothing to pool".into()))?;
        if reports.iter().any(|r| r.measure != first.measure) {
            return Err(Error::InvalidParameter("cannot pool different measures".into()));
        }
        let pairs = reports
            .iter()
            .flat_map(|r| r.inter.iter().copied().zip(r.intra.iter().copied()))
            .collect();
        Self::from_pairs(first.measure, first.tau, pairs)
    }

    pub fn significant(&self, alpha: f64) -> bool {
        self.p_value < alpha
    }
}

fn check_inputs(a: &FeatureMatrix, b: &FeatureMatrix, spec: &SubsampleSpec) -> Result<()> {
    spec.check()?;
    if a.d() != b.d() {
        return Err(Error::DimensionMismatch {
            left: a.d(),
            right: b.d(),
        });
    }
    if 2 * spec.tau > a.n() {
        return Err(Error::SubsampleTooLarge {
            tau: 2 * spec.tau,
            available: a.n(),
        });
    }
    if spec.tau > b.n() {
        return Err(Error::SubsampleTooLarge {
            tau: spec.tau,
            available: b.n(),
        });
    }
    Ok(())
}

/// The three sub-samples of one draw: `A1`, the disjoint `A2`, and `B`.
struct Draw {
    first: FeatureMatrix,
    second: FeatureMatrix,
    other: FeatureMatrix,
}

fn draw_samples(a: &FeatureMatrix, b: &FeatureMatrix, spec: &SubsampleSpec, index: usize) -> Result<Draw> {
    let mut rng = rng::stream(spec.seed, index as u64);
    let a_idx = sample_indices(a.n(), 2 * spec.tau, &mut rng)?;
    let b_idx = sample_indices(b.n(), spec.tau, &mut rng)?;
    Ok(Draw {
        first: a.select_rows(&a_idx[..spec.tau])?,
        second: a.select_rows(&a_idx[spec.tau..])?,
        other: b.select_rows(&b_idx)?,
    })
}

fn run_draws<F>(a: &FeatureMatrix, b: &FeatureMatrix, spec: &SubsampleSpec, per_draw: F) -> Result<Vec<(f64, f64)>>
where
    F: Fn(&Draw) -> Result<(f64, f64)> + Sync,
{
    (0..spec.draws)
        .into_par_iter()
        .map(|c| draw_samples(a, b, spec, c).and_then(|d| per_draw(&d)))
        .collect()
}

fn mean_nn(queries: &FeatureMatrix, reference: &FeatureMatrix, norm: Norm) -> Result<f64> {
    let d = nn_minkowski(queries, reference, norm)?;
    Ok(d.iter().sum::<f64>() / d.len() as f64)
}

pub fn minkowski_dissimilarity(
    a: &FeatureMatrix,
    b: &FeatureMatrix,
    spec: &SubsampleSpec,
    norm: Norm,
) -> Result<DissimilarityReport> {
    check_inputs(a, b, spec)?;
    let pairs = run_draws(a, b, spec, |d| {
        Ok((mean_nn(&d.first, &d.other, norm)?, mean_nn(&d.first, &d.second, norm)?))
    })?;
    let measure = match norm {
        Norm::L1 => Measure::L1,
        Norm::L2 => Measure::L2,
    };
    DissimilarityReport::from_draws(measure, spec, pairs)
}

/// Sum over dimensions of the per-dimension histogram divergence. Dimensions
/// that are constant across both samples contribute zero.
pub fn summed_density_divergence(
    x: &FeatureMatrix,
    y: &FeatureMatrix,
    kind: DensityKind,
    bins: usize,
) -> Result<f64> {
    if x.d() != y.d() {
        return Err(Error::DimensionMismatch {
            left: x.d(),
            right: y.d(),
        });
    }
    let mut total = 0.0;
    for j in 0..x.d() {
        let xs: Vec<f64> = x.column(j).collect();
        let ys: Vec<f64> = y.column(j).collect();
        let (lo, hi) = xs
            .iter()
            .chain(&ys)
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        if !(lo < hi) {
            continue;
        }
        let hx = make_histogram(&xs, bins, (lo, hi))?;
        let hy = make_histogram(&ys, bins, (lo, hi))?;
        total += match kind {
            DensityKind::Js => js_divergence(&hx, &hy)?,
            DensityKind::Cos => cosine_distance(&hx, &hy)?,
        };
    }
    Ok(total)
}

pub fn density_dissimilarity(
    a: &FeatureMatrix,
    b: &FeatureMatrix,
    spec: &SubsampleSpec,
    kind: DensityKind,
    bins: usize,
) -> Result<DissimilarityReport> {
    check_inputs(a, b, spec)?;
    if bins == 0 {
        return Err(Error::InvalidParameter("histogram needs at least one bin".into()));
    }
    let pairs = run_draws(a, b, spec, |d| {
        Ok((
            summed_density_divergence(&d.first, &d.other, kind, bins)?,
            summed_density_divergence(&d.first, &d.second, kind, bins)?,
        ))
    })?;
    let measure = match kind {
        DensityKind::Js => Measure::Js,
        DensityKind::Cos => Measure::Cos,
    };
    DissimilarityReport::from_draws(measure, spec, pairs)
}

/// Dispatches to the Minkowski or density measure; `bins` is ignored for
/// the Minkowski ones.
pub fn dissimilarity(
    a: &FeatureMatrix,
    b: &FeatureMatrix,
    spec: &SubsampleSpec,
    measure: Measure,
    bins: usize,
) -> Result<DissimilarityReport> {
    match measure {
        Measure::L1 => minkowski_dissimilarity(a, b, spec, Norm::L1),
        Measure::L2 => minkowski_dissimilarity(a, b, spec, Norm::L2),
        Measure::Js => density_dissimilarity(a, b, spec, DensityKind::Js, bins),
        Measure::Cos => density_dissimilarity(a, b, spec, DensityKind::Cos, bins),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedCandidate {
    /// 1 is the most similar candidate.
    pub rank: usize,
    pub name: String,
    pub report: DissimilarityReport,
}

/// Orders unlabelled candidates by ascending mean dissimilarity to the
/// labelled set, ties broken by name.
pub fn rank_candidates(
    labelled: &FeatureMatrix,
    candidates: &[FeatureMatrix],
    spec: &SubsampleSpec,
    measure: Measure,
    bins: usize,
) -> Result<Vec<RankedCandidate>> {
    if candidates.is_empty() {
        return Err(Error::InvalidParameter("no candidates to rank".into()));
    }
    let mut scored = candidates
        .iter()
        .map(|c| Ok((c.name().to_string(), dissimilarity(labelled, c, spec, measure, bins)?)))
        .collect::<Result<Vec<_>>>()?;
    scored.sort_by(|(na, ra), (nb, rb)| ra.mean.total_cmp(&rb.mean).then_with(|| na.cmp(nb)));
    Ok(scored
        .into_iter()
        .enumerate()
        .map(|(i, (name, report))| RankedCandidate {
            rank: i + 1,
            name,
            report,
        })
        .collect())
}

/// Fixed-width text table, one row per report: mean ± std, with `*` marking
/// p > 0.05.
pub fn format_report_table(rows: &[(String, DissimilarityReport)]) -> String {
    let mut out = format!("{:<24} {:<6} {:>24} {:>10}\n", "dataset", "measure", "mean ± std", "p");
    for (name, r) in rows {
        let marker = if r.p_value > 0.05 { "*" } else { "" };
        let cell = format!("{:.4} ± {:.4}{marker}", r.mean, r.std);
        out.push_str(&format!(
            "{:<24} {:<6} {:>24} {:>10.3e}\n",
            name, r.measure, cell, r.p_value
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;
    use rand_distr::{Distribution, StandardNormal};

    fn gaussian(name: &str, n: usize, d: usize, shift: f64, seed: u64) -> FeatureMatrix {
        let mut rng = rng_from_seed(seed);
        let data = (0..n * d)
            .map(|_| shift + <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng))
            .collect();
        FeatureMatrix::new(name, n, d, data).unwrap()
    }

    #[test]
    fn report_invariants() {
        let a = gaussian("a", 200, 3, 0.0, 1);
        let b = gaussian("b", 200, 3, 0.5, 2);
        let spec = SubsampleSpec::new(30, 12, 4).unwrap();
        for m in Measure::ALL {
            let r = dissimilarity(&a, &b, &spec, m, 20).unwrap();
            assert_eq!(r.per_sample.len(), 12);
            let mean = r.per_sample.iter().sum::<f64>() / 12.0;
            assert!((mean - r.mean).abs() < 1e-9);
            assert!(r.per_sample.iter().all(|v| *v >= 0.0));
            assert!((0.0..=1.0).contains(&r.p_value));
        }
    }

    #[test]
    fn intra_draw_needs_two_tau_rows() {
        let a = gaussian("a", 50, 2, 0.0, 1);
        let b = gaussian("b", 500, 2, 0.0, 2);
        let spec = SubsampleSpec::new(26, 3, 0).unwrap();
        assert!(matches!(
            minkowski_dissimilarity(&a, &b, &spec, Norm::L2),
            Err(Error::SubsampleTooLarge { tau: 52, available: 50 })
        ));
        let c = gaussian("c", 500, 3, 0.0, 2);
        assert!(matches!(
            dissimilarity(&b, &c, &spec, Measure::Cos, 10),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn shifted_copy_closed_form() {
        // tightly packed rows: every nearest neighbour in the shifted copy sits
        // 10·√d away up to the packing scale
        let d = 4;
        let n = 40;
        let mut rng = rng_from_seed(5);
        let base: Vec<f64> = (0..n * d).map(|_| 1e-6 * crate::rng::unit_f64(&mut rng)).collect();
        let a = FeatureMatrix::new("a", n, d, base.clone()).unwrap();
        let b = FeatureMatrix::new("b", n, d, base.iter().map(|v| v + 10.0).collect()).unwrap();
        let spec = SubsampleSpec::new(n / 2, 1, 3).unwrap();
        let r = minkowski_dissimilarity(&a, &b, &spec, Norm::L2).unwrap();
        let expected = (10.0 * (d as f64).sqrt() - r.intra[0]).abs();
        assert!((r.per_sample[0] - expected).abs() < 1e-5, "{} vs {expected}", r.per_sample[0]);
        assert!(r.intra[0] < 1e-5);
    }

    #[test]
    fn reports_reproduce_bitwise_across_thread_counts() {
        let a = gaussian("a", 300, 6, 0.0, 10);
        let b = gaussian("b", 300, 6, 0.3, 11);
        let spec = SubsampleSpec::new(40, 16, 99).unwrap();
        let single = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let quad = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
        for m in Measure::ALL {
            let r1 = single.install(|| dissimilarity(&a, &b, &spec, m, 25).unwrap());
            let r4 = quad.install(|| dissimilarity(&a, &b, &spec, m, 25).unwrap());
            assert_eq!(serde_json::to_string(&r1).unwrap(), serde_json::to_string(&r4).unwrap());
        }
    }

    #[test]
    fn js_grows_with_mean_shift() {
        let spec_for = |seed| SubsampleSpec::new(100, 10, seed).unwrap();
        let mut avg = [0.0; 3];
        for seed in 0..20u64 {
            let a = gaussian("a", 400, 3, 0.0, 1000 + seed);
            for (k, shift) in [0.0, 1.0, 2.0].into_iter().enumerate() {
                let b = gaussian("b", 400, 3, shift, 2000 + seed * 7 + k as u64);
                avg[k] += density_dissimilarity(&a, &b, &spec_for(seed), DensityKind::Js, 50)
                    .unwrap()
                    .mean
                    / 20.0;
            }
        }
        assert!(avg[0] < avg[1] && avg[1] < avg[2], "{avg:?}");
    }

    #[test]
    fn ranking_follows_shift_order() {
        let labelled = gaussian("labelled", 400, 4, 0.0, 1);
        let candidates = vec![
            gaussian("far", 400, 4, 3.0, 2),
            gaussian("near", 400, 4, 0.5, 3),
            gaussian("mid", 400, 4, 1.5, 4),
        ];
        let spec = SubsampleSpec::new(100, 10, 7).unwrap();
        let ranked = rank_candidates(&labelled, &candidates, &spec, Measure::Cos, 30).unwrap();
        let names: Vec<&str> = ranked.iter().map(|r| r.name.as_str()).collect();
        assert_eq!(names, ["near", "mid", "far"]);
        assert_eq!(ranked.iter().map(|r| r.rank).collect::<Vec<_>>(), [1, 2, 3]);

        let one = rank_candidates(&labelled, &candidates[..1], &spec, Measure::L1, 30).unwrap();
        assert_eq!(one[0].rank, 1);
        assert!(rank_candidates(&labelled, &[], &spec, Measure::L1, 30).is_err());
    }

    #[test]
    fn measure_parsing() {
        assert_eq!("COS".parse::<Measure>().unwrap(), Measure::Cos);
        assert_eq!("l2".parse::<Measure>().unwrap(), Measure::L2);
        assert!("l3".parse::<Measure>().is_err());
    }
}
