use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feature_store::FeatureMatrix;

/// Minkowski order used for nearest-neighbour search.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Norm {
    /// Manhattan, p = 1.
    L1,
    /// Euclidean, p = 2.
    L2,
}

impl Norm {
    pub fn distance(self, a: &[f64], b: &[f64]) -> f64 {
        match self {
            Norm::L1 => a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum(),
            Norm::L2 => squared_l2(a, b).sqrt(),
        }
    }
}

fn squared_l2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// For every row of `queries`, the exact distance to its closest row in `reference`.
pub fn nn_minkowski(queries: &FeatureMatrix, reference: &FeatureMatrix, norm: Norm) -> Result<Vec<f64>> {
    if queries.d() != reference.d() {
        return Err(Error::DimensionMismatch {
            left: queries.d(),
            right: reference.d(),
        });
    }
    let out = queries
        .rows()
        .map(|q| match norm {
            // compare squared distances, take one root at the end
            Norm::L2 => reference
                .rows()
                .map(|r| squared_l2(q, r))
                .fold(f64::INFINITY, f64::min)
                .sqrt(),
            Norm::L1 => reference
                .rows()
                .map(|r| Norm::L1.distance(q, r))
                .fold(f64::INFINITY, f64::min),
        })
        .collect();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: &[Vec<f64>]) -> FeatureMatrix {
        FeatureMatrix::from_rows("t", rows).unwrap()
    }

    #[test]
    fn self_distance_is_zero() {
        let a = m(&[vec![0.0, 0.0], vec![1.0, 1.0]]);
        assert_eq!(nn_minkowski(&a, &a, Norm::L2).unwrap(), vec![0.0, 0.0]);
        assert_eq!(nn_minkowski(&a, &a, Norm::L1).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn three_four_five() {
        let a = m(&[vec![0.0, 0.0]]);
        let b = m(&[vec![3.0, 4.0]]);
        assert_eq!(nn_minkowski(&a, &b, Norm::L2).unwrap(), vec![5.0]);
        assert_eq!(nn_minkowski(&a, &b, Norm::L1).unwrap(), vec![7.0]);
    }

    #[test]
    fn manhattan_picks_nearest_of_two() {
        // pairs: (0,0)-(1,0)=1, (0,0)-(5,0)=5, (2,0)-(1,0)=1, (2,0)-(5,0)=3
        let a = m(&[vec![0.0, 0.0], vec![2.0, 0.0]]);
        let b = m(&[vec![1.0, 0.0], vec![5.0, 0.0]]);
        assert_eq!(nn_minkowski(&a, &b, Norm::L1).unwrap(), vec![1.0, 1.0]);
    }

    #[test]
    fn dimension_mismatch() {
        let a = m(&[vec![0.0, 0.0]]);
        let b = m(&[vec![0.0]]);
        assert!(matches!(
            nn_minkowski(&a, &b, Norm::L1),
            Err(Error::DimensionMismatch { left: 2, right: 1 })
        ));
    }
}
