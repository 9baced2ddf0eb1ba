//! Angular quadrature: azimuthal families from cyclic track layout plus a
//! Gauss-Legendre polar set, combined into direction weights that sum to
//! 4*pi over the full sphere (both travel directions).

use crate::{Error, Result};
use std::f64::consts::PI;

/// Polar angles measured from +z. `n` per hemisphere, mirrored about
/// theta = pi/2; entries sorted by ascending theta so indices `0..n` point
/// up (cos > 0) and `n..2n` point down. `mirror(i) = 2n-1-i`.
#[derive(Debug, Clone)]
pub struct PolarQuadrature {
    per_hemisphere: usize,
    sin_theta: Vec<f64>,
    cos_theta: Vec<f64>,
    /// Fraction of the full sphere's polar measure per entry; sums to 1.
    fraction: Vec<f64>,
}

impl PolarQuadrature {
    /// Gauss-Legendre in mu = cos(theta) on each hemisphere.
    pub fn gauss_legendre(per_hemisphere: usize) -> Result<Self> {
        if per_hemisphere == 0 || per_hemisphere > 64 {
            return Err(Error::Parameter(format!(
                "polar angles per hemisphere must be in 1..=64, got {per_hemisphere}"
            )));
        }
        let (nodes, weights) = gauss_legendre_01(per_hemisphere);
        // nodes ascend in mu on (0,1); ascending theta needs descending mu.
        let mut sin_theta = Vec::with_capacity(2 * per_hemisphere);
        let mut cos_theta = Vec::with_capacity(2 * per_hemisphere);
        let mut fraction = Vec::with_capacity(2 * per_hemisphere);
        for i in (0..per_hemisphere).rev() {
            let mu = nodes[i];
            cos_theta.push(mu);
            sin_theta.push((1.0 - mu * mu).sqrt());
            fraction.push(weights[i] / 2.0);
        }
        for i in 0..per_hemisphere {
            let mu = nodes[i];
            cos_theta.push(-mu);
            sin_theta.push((1.0 - mu * mu).sqrt());
            fraction.push(weights[i] / 2.0);
        }
        Ok(PolarQuadrature { per_hemisphere, sin_theta, cos_theta, fraction })
    }

    pub fn per_hemisphere(&self) -> usize {
        self.per_hemisphere
    }

    /// Total number of polar angles (both hemispheres).
    pub fn len(&self) -> usize {
        2 * self.per_hemisphere
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn sin_theta(&self, n: usize) -> f64 {
        self.sin_theta[n]
    }

    pub fn cos_theta(&self, n: usize) -> f64 {
        self.cos_theta[n]
    }

    /// cot(theta), positive for upward-going angles.
    pub fn cot_theta(&self, n: usize) -> f64 {
        self.cos_theta[n] / self.sin_theta[n]
    }

    pub fn fraction(&self, n: usize) -> f64 {
        self.fraction[n]
    }

    /// Index of the z-mirrored angle (theta -> pi - theta).
    pub fn mirror(&self, n: usize) -> usize {
        2 * self.per_hemisphere - 1 - n
    }

    pub fn is_upward(&self, n: usize) -> bool {
        n < self.per_hemisphere
    }
}

/// Azimuthal track families. Angles live in (0, pi), pairwise
/// complementary (phi and pi - phi both present); the opposite directions
/// phi + pi are handled by sweeping tracks both ways. `weight[m]` is the
/// fraction of the full 2*pi azimuthal measure covered by family `m` in
/// *one* travel direction, so the weights sum to 1/2.
#[derive(Debug, Clone)]
pub struct AzimuthalQuadrature {
    pub num_azim: usize,
    pub phi: Vec<f64>,
    pub weight: Vec<f64>,
    pub spacing: Vec<f64>,
}

impl AzimuthalQuadrature {
    pub fn num_families(&self) -> usize {
        self.num_azim / 2
    }

    /// Family of the complementary angle pi - phi.
    pub fn complement(&self, m: usize) -> usize {
        self.num_families() - 1 - m
    }
}

/// Combined angular quadrature. `total_weight(m, n)` integrates to 4*pi
/// over all (family, polar, direction) triples.
#[derive(Debug, Clone)]
pub struct Quadrature3D {
    pub azimuthal: AzimuthalQuadrature,
    pub polar: PolarQuadrature,
}

impl Quadrature3D {
    /// Solid-angle weight of one (azimuthal family, polar index) pair in
    /// one travel direction.
    pub fn total_weight(&self, m: usize, n: usize) -> f64 {
        4.0 * PI * self.azimuthal.weight[m] * self.polar.fraction(n)
    }
}

/// Gauss-Legendre nodes/weights adapted to the interval (0, 1), ascending
/// nodes; weights sum to 1.
pub fn gauss_legendre_01(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n {
        // Standard Newton iteration on P_n over [-1, 1].
        let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (p, dp) = legendre(n, x);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        let (_, dp) = legendre(n, x);
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        // Map [-1, 1] -> [0, 1]; the cos seed enumerates roots in
        // descending order, store ascending.
        nodes[n - 1 - i] = 0.5 * (x + 1.0);
        weights[n - 1 - i] = 0.5 * w;
    }
    (nodes, weights)
}

/// Legendre polynomial P_n and derivative at x via the three-term
/// recurrence.
fn legendre(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, dp)
}
