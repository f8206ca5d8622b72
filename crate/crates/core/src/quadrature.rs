//! Symmetric quadrature rules on triangles and Gauss rules on segments.

use crate::error::{Error, Result};

/// Barycentric points and weights normalised so the weights sum to 1; multiply
/// by the element area to integrate.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule {
    pub points: Vec<[f64; 3]>,
    pub weights: Vec<f64>,
    pub degree: usize,
}

fn orbit3(a: f64, b: f64) -> [[f64; 3]; 3] {
    [[a, b, b], [b, a, b], [b, b, a]]
}

impl QuadratureRule {
    /// Smallest built-in rule exact for polynomials of `degree`.
    pub fn triangle(degree: usize) -> Result<Self> {
        let (points, weights, exact): (Vec<[f64; 3]>, Vec<f64>, usize) = match degree {
            0 | 1 => (vec![[1.0 / 3.0; 3]], vec![1.0], 1),
            2 => (orbit3(2.0 / 3.0, 1.0 / 6.0).to_vec(), vec![1.0 / 3.0; 3], 2),
            3 | 4 => {
                let mut p = orbit3(0.108_103_018_168_070, 0.445_948_490_915_965).to_vec();
                p.extend(orbit3(0.816_847_572_980_459, 0.091_576_213_509_771));
                let mut w = vec![0.223_381_589_678_011; 3];
                w.extend([0.109_951_743_655_322; 3]);
                (p, w, 4)
            }
            5 => {
                let mut p = vec![[1.0 / 3.0; 3]];
                p.extend(orbit3(0.059_715_871_789_770, 0.470_142_064_105_115));
                p.extend(orbit3(0.797_426_985_353_087, 0.101_286_507_323_456));
                let mut w = vec![0.225];
                w.extend([0.132_394_152_788_506; 3]);
                w.extend([0.125_939_180_544_827; 3]);
                (p, w, 5)
            }
            6 => {
                let mut p = orbit3(0.501_426_509_658_179, 0.249_286_745_170_910).to_vec();
                p.extend(orbit3(0.873_821_971_016_996, 0.063_089_014_491_502));
                let (a, b, c) = (0.053_145_049_844_817, 0.310_352_451_033_784, 0.636_502_499_121_399);
                p.extend([[a, b, c], [a, c, b], [b, a, c], [b, c, a], [c, a, b], [c, b, a]]);
                let mut w = vec![0.116_786_275_726_379; 3];
                w.extend([0.050_844_906_370_207; 3]);
                w.extend([0.082_851_075_618_374; 6]);
                (p, w, 6)
            }
            _ => {
                return Err(Error::InvalidArgument(format!(
                    "no triangle rule of degree {degree}"
                )))
            }
        };
        // the tabulated values carry 15 digits; renormalise the weights exactly
        let s: f64 = weights.iter().sum();
        let weights = weights.into_iter().map(|w| w / s).collect();
        Ok(QuadratureRule {
            points,
            weights,
            degree: exact,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Three-point Gauss-Legendre rule on [0, 1] (exact to degree 5): `(s, weight)`.
pub fn gauss_segment3() -> [(f64, f64); 3] {
    let r = (0.6f64).sqrt() / 2.0;
    [(0.5 - r, 5.0 / 18.0), (0.5, 8.0 / 18.0), (0.5 + r, 5.0 / 18.0)]
}
