use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Normalized histogram over `bins` equal-width bins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub mass: Vec<f64>,
    /// Number of values that were binned.
    pub count: usize,
}

impl Histogram {
    pub fn bins(&self) -> usize {
        self.mass.len()
    }

    /// True when no value was binned; `mass` is then all zeros.
    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    pub fn bin_width(&self) -> f64 {
        self.edges[1] - self.edges[0]
    }

    pub fn centers(&self) -> impl Iterator<Item = f64> + '_ {
        self.edges.windows(2).map(|w| 0.5 * (w[0] + w[1]))
    }

    fn check_compatible(&self, other: &Histogram) -> Result<()> {
        if self.edges != other.edges {
            return Err(Error::HistogramMismatch);
        }
        Ok(())
    }
}

/// Bins `values` into `bins` equal-width bins over `[lo, hi]`. Values outside
/// the range go to the nearest edge bin; non-finite values are skipped.
pub fn make_histogram(values: &[f64], bins: usize, range: (f64, f64)) -> Result<Histogram> {
    let (lo, hi) = range;
    if bins == 0 {
        return Err(Error::InvalidParameter("histogram needs at least one bin".into()));
    }
    if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
        return Err(Error::InvalidParameter(format!("empty histogram range ({lo}, {hi})")));
    }
    let width = hi - lo;
    let edges: Vec<f64> = (0..=bins)
        .map(|i| if i == bins { hi } else { lo + width * i as f64 / bins as f64 })
        .collect();
    let mut counts = vec![0usize; bins];
    let mut total = 0;
    for &v in values.iter().filter(|v| v.is_finite()) {
        let pos = ((v - lo) / width * bins as f64).floor();
        let idx = if pos < 0.0 { 0 } else { (pos as usize).min(bins - 1) };
        counts[idx] += 1;
        total += 1;
    }
    let mass = if total == 0 {
        vec![0.0; bins]
    } else {
        counts.iter().map(|&c| c as f64 / total as f64).collect()
    };
    Ok(Histogram {
        edges,
        mass,
        count: total,
    })
}

fn kl_to_mixture(p: &[f64], m: &[f64]) -> f64 {
    p.iter()
        .zip(m)
        .filter(|(pi, _)| **pi > 0.0)
        .map(|(pi, mi)| pi * (pi / mi).ln())
        .sum()
}

/// Jensen-Shannon divergence in nats, `0 <= JS <= ln 2`.
pub fn js_divergence(p: &Histogram, q: &Histogram) -> Result<f64> {
    p.check_compatible(q)?;
    let m: Vec<f64> = p.mass.iter().zip(&q.mass).map(|(a, b)| 0.5 * (a + b)).collect();
    let js = 0.5 * kl_to_mixture(&p.mass, &m) + 0.5 * kl_to_mixture(&q.mass, &m);
    Ok(js.clamp(0.0, std::f64::consts::LN_2))
}

/// One minus the cosine similarity of the mass vectors.
pub fn cosine_distance(p: &Histogram, q: &Histogram) -> Result<f64> {
    p.check_compatible(q)?;
    let norm = |h: &Histogram| h.mass.iter().map(|v| v * v).sum::<f64>().sqrt();
    let (np, nq) = (norm(p), norm(q));
    if np == 0.0 || nq == 0.0 {
        return Err(Error::EmptyHistogram);
    }
    let dot: f64 = p.mass.iter().zip(&q.mass).map(|(a, b)| a * b).sum();
    Ok((1.0 - dot / (np * nq)).clamp(0.0, 1.0))
}
