//! Symmetric quadrature rules on triangles (barycentric coordinates, weights
//! normalized to sum to one) and Gauss-Legendre rules on `[0, 1]`.

#![allow(clippy::excessive_precision)]

use crate::mesh::Point;

#[derive(Clone, Debug)]
pub struct TriangleRule {
    pub points: Vec<[f64; 3]>,
    pub weights: Vec<f64>,
    pub degree: usize,
}

fn push_orbit3(points: &mut Vec<[f64; 3]>, weights: &mut Vec<f64>, a: f64, w: f64) {
    let b = 1.0 - 2.0 * a;
    for p in [[a, a, b], [a, b, a], [b, a, a]] {
        points.push(p);
        weights.push(w);
    }
}

fn push_orbit6(points: &mut Vec<[f64; 3]>, weights: &mut Vec<f64>, a: f64, b: f64, w: f64) {
    let c = 1.0 - a - b;
    for p in [[a, b, c], [a, c, b], [b, a, c], [b, c, a], [c, a, b], [c, b, a]] {
        points.push(p);
        weights.push(w);
    }
}

impl TriangleRule {
    /// Three-point rule, exact for degree 2.
    pub fn degree2() -> Self {
        let mut points = Vec::new();
        let mut weights = Vec::new();
        push_orbit3(&mut points, &mut weights, 1.0 / 6.0, 1.0 / 3.0);
        TriangleRule { points, weights, degree: 2 }
    }

    /// Six-point Dunavant rule, exact for degree 4.
    pub fn degree4() -> Self {
        let mut points = Vec::new();
        let mut weights = Vec::new();
        push_orbit3(&mut points, &mut weights, 0.445_948_490_915_964_886_32, 0.223_381_589_678_011_465_70);
        push_orbit3(&mut points, &mut weights, 0.091_576_213_509_770_743_46, 0.109_951_743_655_321_867_64);
        TriangleRule { points, weights, degree: 4 }
    }

    /// Twelve-point Dunavant rule, exact for degree 6.
    pub fn degree6() -> Self {
        let mut points = Vec::new();
        let mut weights = Vec::new();
        push_orbit3(&mut points, &mut weights, 0.249_286_745_170_910_421_29, 0.116_786_275_726_379_366_03);
        push_orbit3(&mut points, &mut weights, 0.063_089_014_491_502_228_34, 0.050_844_906_370_206_816_92);
        push_orbit6(
            &mut points,
            &mut weights,
            0.053_145_049_844_816_947_35,
            0.310_352_451_033_784_405_42,
            0.082_851_075_618_373_575_19,
        );
        TriangleRule { points, weights, degree: 6 }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Physical quadrature points of a triangle.
    pub fn map(&self, v: &[Point; 3]) -> Vec<Point> {
        self.points
            .iter()
            .map(|l| {
                [l[0] * v[0][0] + l[1] * v[1][0] + l[2] * v[2][0], l[0] * v[0][1] + l[1] * v[1][1] + l[2] * v[2][1]]
            })
            .collect()
    }
}

/// Gauss-Legendre rule on `[0, 1]`; weights sum to one.
#[derive(Clone, Debug)]
pub struct LineRule {
    pub points: Vec<f64>,
    pub weights: Vec<f64>,
}

impl LineRule {
    pub fn gauss2() -> Self {
        let d = 0.5 / 3f64.sqrt();
        LineRule { points: vec![0.5 - d, 0.5 + d], weights: vec![0.5, 0.5] }
    }

    /// Exact for degree 5.
    pub fn gauss3() -> Self {
        let d = 0.6f64.sqrt();
        LineRule { points: vec![0.5 - 0.5 * d, 0.5, 0.5 + 0.5 * d], weights: vec![5.0 / 18.0, 8.0 / 18.0, 5.0 / 18.0] }
    }

    /// Exact for degree 7.
    pub fn gauss4() -> Self {
        let a = (3.0 / 7.0 - 2.0 / 7.0 * (6.0f64 / 5.0).sqrt()).sqrt();
        let b = (3.0 / 7.0 + 2.0 / 7.0 * (6.0f64 / 5.0).sqrt()).sqrt();
        let wa = (18.0 + 30f64.sqrt()) / 36.0;
        let wb = (18.0 - 30f64.sqrt()) / 36.0;
        LineRule {
            points: vec![0.5 - 0.5 * b, 0.5 - 0.5 * a, 0.5 + 0.5 * a, 0.5 + 0.5 * b],
            weights: vec![0.5 * wb, 0.5 * wa, 0.5 * wa, 0.5 * wb],
        }
    }
}
