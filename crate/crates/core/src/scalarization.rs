//! Utopia/nadir anchors and the augmented weighted Tchebycheff utility.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Objective values `(F_Π, F_Θ, F_E2LOG)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveVector {
    pub pi: f64,
    pub theta: f64,
    pub e2log: f64,
}

impl ObjectiveVector {
    pub fn as_array(&self) -> [f64; 3] {
        [self.pi, self.theta, self.e2log]
    }

    pub fn from_array(a: [f64; 3]) -> Self {
        Self {
            pi: a[0],
            theta: a[1],
            e2log: a[2],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.as_array().iter().all(|v| v.is_finite())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParetoAnchors {
    pub utopia: Vec<f64>,
    pub nadir: Vec<f64>,
}

impl ParetoAnchors {
    /// Objectives whose range `|F_N − F_O|` is zero.
    pub fn degenerate(&self) -> Vec<usize> {
        self.utopia
            .iter()
            .zip(&self.nadir)
            .enumerate()
            .filter(|(_, (o, n))| (*n - *o).abs() == 0.0)
            .map(|(i, _)| i)
            .collect()
    }
}

/// Anchors without the degeneracy check; entry `(j, i)` is `F_i(a_j^O)`.
pub fn anchors_unchecked(matrix: &[Vec<f64>]) -> Result<ParetoAnchors> {
    let k = matrix.len();
    if k == 0 || matrix.iter().any(|row| row.len() != k) {
        return Err(Error::domain("anchor cost matrix must be square and non-empty"));
    }
    let utopia: Vec<f64> = (0..k).map(|i| matrix[i][i]).collect();
    let nadir: Vec<f64> = (0..k)
        .map(|i| matrix.iter().map(|row| row[i]).fold(f64::NEG_INFINITY, f64::max))
        .collect();
    Ok(ParetoAnchors { utopia, nadir })
}

/// Utopia from the diagonal, nadir as the column maxima. Fails if any objective
/// has a zero range.
pub fn compute_anchors(matrix: &[Vec<f64>]) -> Result<ParetoAnchors> {
    let a = anchors_unchecked(matrix)?;
    if let Some(&i) = a.degenerate().first() {
        return Err(Error::DegenerateRange {
            index: i,
            value: a.utopia[i],
        });
    }
    Ok(a)
}

pub const RHO_RANGE: (f64, f64) = (1e-4, 1e-2);

/// `U = max_i λ_i |F_i − F_O,i| + ρ Σ_j |F_j − F_O,j|`, `λ_i = w_i / |F_N,i − F_O,i|`.
///
/// `rho` is only checked for sign; [`RHO_RANGE`] is the recommended interval.
pub fn tchebycheff(f: &[f64], anchors: &ParetoAnchors, w: &[f64], rho: f64) -> Result<f64> {
    let k = f.len();
    if anchors.utopia.len() != k || anchors.nadir.len() != k || w.len() != k {
        return Err(Error::Dimension {
            expected: k,
            got: w.len().min(anchors.utopia.len()),
        });
    }
    if w.iter().any(|&wi| wi < 0.0) || (w.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::domain("weights must be non-negative and sum to one"));
    }
    if !(rho >= 0.0) {
        return Err(Error::domain("rho must be non-negative"));
    }
    if f.iter().any(|v| !v.is_finite()) {
        return Ok(f64::INFINITY);
    }
    let mut max_term = 0.0f64;
    let mut sum = 0.0;
    for i in 0..k {
        let dev = (f[i] - anchors.utopia[i]).abs();
        sum += dev;
        if w[i] > 0.0 {
            let range = (anchors.nadir[i] - anchors.utopia[i]).abs();
            if range == 0.0 {
                return Err(Error::DegenerateRange {
                    index: i,
                    value: anchors.utopia[i],
                });
            }
            max_term = max_term.max(w[i] / range * dev);
        }
    }
    Ok(max_term + rho * sum)
}

/// Reference linear scalarization `Σ w_i (F_i − F_O,i) / (F_N,i − F_O,i)` (tests only).
pub fn linear_scalarization(f: &[f64], anchors: &ParetoAnchors, w: &[f64]) -> f64 {
    (0..f.len())
        .filter(|&i| w[i] > 0.0)
        .map(|i| w[i] * (f[i] - anchors.utopia[i]) / (anchors.nadir[i] - anchors.utopia[i]))
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn anchors_examples() {
        let a = compute_anchors(&[vec![1.0, 9.0], vec![3.0, 2.0]]).unwrap();
        assert_eq!(a.utopia, vec![1.0, 2.0]);
        assert_eq!(a.nadir, vec![3.0, 9.0]);
        let single = anchors_unchecked(&[vec![4.0]]).unwrap();
        assert_eq!(single.utopia, single.nadir);
        assert!(matches!(
            compute_anchors(&[vec![1.0, 2.0], vec![1.0, 2.0]]),
            Err(Error::DegenerateRange { .. })
        ));
        assert!(compute_anchors(&[vec![1.0, 2.0]]).is_err());
    }

    #[test]
    fn worked_example() {
        let a = ParetoAnchors {
            utopia: vec![0.0, 0.0],
            nadir: vec![2.0, 4.0],
        };
        let u = tchebycheff(&[1.0, 2.0], &a, &[0.5, 0.5], 1e-4).unwrap();
        assert!((u - 0.2503).abs() < 1e-12);
        assert_eq!(tchebycheff(&[0.0, 0.0], &a, &[0.5, 0.5], 1e-4).unwrap(), 0.0);
        let single = tchebycheff(&[1.5, 3.0], &a, &[1.0, 0.0], 0.0).unwrap();
        assert_eq!(single, 1.5 / 2.0);
    }

    #[test]
    fn zero_weight_tolerates_degenerate_range() {
        let a = ParetoAnchors {
            utopia: vec![0.0, 1.0],
            nadir: vec![2.0, 1.0],
        };
        assert!(tchebycheff(&[1.0, 1.0], &a, &[1.0, 0.0], 1e-4).is_ok());
        assert!(tchebycheff(&[1.0, 1.0], &a, &[0.5, 0.5], 1e-4).is_err());
        assert_eq!(
            tchebycheff(&[f64::NAN, 1.0], &a, &[1.0, 0.0], 1e-4).unwrap(),
            f64::INFINITY
        );
        assert!(tchebycheff(&[1.0, 1.0], &a, &[0.7, 0.7], 1e-4).is_err());
    }

    fn anchors3(o: [f64; 3], span: [f64; 3]) -> ParetoAnchors {
        ParetoAnchors {
            utopia: o.to_vec(),
            nadir: (0..3).map(|i| o[i] + span[i]).collect(),
        }
    }

    proptest! {
        #[test]
        fn nonnegative_and_zero_only_at_utopia(f in prop::array::uniform3(-5.0..5.0f64),
                                              o in prop::array::uniform3(-5.0..5.0f64),
                                              span in prop::array::uniform3(0.1..5.0f64)) {
            let a = anchors3(o, span);
            let u = tchebycheff(&f, &a, &[0.2, 0.3, 0.5], 1e-4).unwrap();
            prop_assert!(u >= 0.0);
            prop_assert_eq!(u == 0.0, f == o);
        }

        #[test]
        fn strictly_monotone(f in prop::array::uniform3(-5.0..5.0f64),
                             o in prop::array::uniform3(-5.0..5.0f64),
                             span in prop::array::uniform3(0.1..5.0f64),
                             idx in 0usize..3, bump in 1e-3..2.0f64) {
            let a = anchors3(o, span);
            let w = [1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0];
            let u0 = tchebycheff(&f, &a, &w, 1e-4).unwrap();
            let mut g = f;
            // Move away from the utopia component.
            g[idx] = o[idx] + (f[idx] - o[idx]).signum() * ((f[idx] - o[idx]).abs() + bump);
            let u1 = tchebycheff(&g, &a, &w, 1e-4).unwrap();
            prop_assert!(u1 > u0);
        }

        #[test]
        fn permutation_symmetry(f in prop::array::uniform3(-5.0..5.0f64),
                                o in prop::array::uniform3(-5.0..5.0f64),
                                span in prop::array::uniform3(0.1..5.0f64)) {
            let w = [0.2, 0.5, 0.3];
            let a = anchors3(o, span);
            let u = tchebycheff(&f, &a, &w, 1e-3).unwrap();
            let perm = [2, 0, 1];
            let pf: Vec<f64> = perm.iter().map(|&i| f[i]).collect();
            let pw: Vec<f64> = perm.iter().map(|&i| w[i]).collect();
            let pa = ParetoAnchors {
                utopia: perm.iter().map(|&i| a.utopia[i]).collect(),
                nadir: perm.iter().map(|&i| a.nadir[i]).collect(),
            };
            let pu = tchebycheff(&pf, &pa, &pw, 1e-3).unwrap();
            prop_assert!((u - pu).abs() <= 1e-15 * u.max(1.0));
        }

        #[test]
        fn nadir_normalization(o in prop::array::uniform3(-5.0..5.0f64),
                               span in prop::array::uniform3(0.1..5.0f64),
                               w0 in 0.0..1.0f64, w1 in 0.0..1.0f64) {
            let a = anchors3(o, span);
            let total = w0 + w1 + 1.0;
            let w = [w0 / total, w1 / total, 1.0 / total];
            let u = tchebycheff(&a.nadir, &a, &w, 0.0).unwrap();
            let wmax = w.iter().cloned().fold(0.0, f64::max);
            prop_assert!((u - wmax).abs() <= 1e-12);
        }
    }
}
