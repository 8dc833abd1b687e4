//! Cartesian particle grids, grid-indexed sample fields and evaluation lattices.

use crate::{Error, Point, Result};

pub type Index = [i64; 2];

/// Cartesian initialization grid `x0_k = h k`.
///
/// Particles whose index lies in `[lo, hi]^2` are transported and remapped.
/// An optional frame of `pad` extra layers holds frozen particles: they keep
/// their initial weights and positions so that densities which do not vanish
/// at the edge of the box stay fully resolved inside it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub h: f64,
    pub lo: i64,
    pub hi: i64,
    pub pad: i64,
}

impl GridSpec {
    /// Grid over the unit box, `N = 1/h` cells per side.
    pub fn unit(h: f64, pad: i64) -> Result<Self> {
        if !(h > 0.0) || !h.is_finite() {
            return Err(Error::config(format!("mesh size must be positive, got {h}")));
        }
        let n = (1.0 / h).round();
        if (n * h - 1.0).abs() > 1e-12 || n < 1.0 {
            return Err(Error::config(format!("1/h must be an integer, got h = {h}")));
        }
        Ok(Self { h, lo: 0, hi: n as i64, pad })
    }

    pub fn with_box(h: f64, lo: i64, hi: i64, pad: i64) -> Self {
        assert!(h > 0.0 && lo <= hi && pad >= 0);
        Self { h, lo, hi, pad }
    }

    #[inline]
    pub fn node(&self, k: Index) -> Point {
        Point::new(self.h * k[0] as f64, self.h * k[1] as f64)
    }

    /// Index range (inclusive) covered by particles, frame included.
    pub fn particle_range(&self) -> (i64, i64) {
        (self.lo - self.pad, self.hi + self.pad)
    }

    pub fn is_frame(&self, k: Index) -> bool {
        k.iter().any(|&c| c < self.lo || c > self.hi)
    }

    /// All particle indices, in storage order (second index slowest).
    pub fn particle_indices(&self) -> Vec<Index> {
        let (a, b) = self.particle_range();
        let mut out = Vec::with_capacity(((b - a + 1) * (b - a + 1)) as usize);
        for k1 in a..=b {
            for k0 in a..=b {
                out.push([k0, k1]);
            }
        }
        out
    }
}

/// Real values on a rectangular index box; reads outside the box give 0.
#[derive(Debug, Clone, PartialEq)]
pub struct GridField {
    pub lo: Index,
    pub hi: Index,
    values: Vec<f64>,
}

impl GridField {
    pub fn zeros(lo: Index, hi: Index) -> Self {
        assert!(lo[0] <= hi[0] && lo[1] <= hi[1]);
        let len = ((hi[0] - lo[0] + 1) * (hi[1] - lo[1] + 1)) as usize;
        Self { lo, hi, values: vec![0.0; len] }
    }

    pub fn square(lo: i64, hi: i64) -> Self {
        Self::zeros([lo, lo], [hi, hi])
    }

    pub fn from_fn(lo: Index, hi: Index, mut f: impl FnMut(Index) -> f64) -> Self {
        let mut out = Self::zeros(lo, hi);
        for k1 in lo[1]..=hi[1] {
            for k0 in lo[0]..=hi[0] {
                let i = out.offset([k0, k1]).unwrap();
                out.values[i] = f([k0, k1]);
            }
        }
        out
    }

    /// Builds a field from values listed in `indices()` order.
    pub fn from_values(lo: Index, hi: Index, values: Vec<f64>) -> Self {
        let out = Self::zeros(lo, hi);
        assert_eq!(out.values.len(), values.len());
        Self { values, ..out }
    }

    #[inline]
    fn offset(&self, k: Index) -> Option<usize> {
        if k[0] < self.lo[0] || k[0] > self.hi[0] || k[1] < self.lo[1] || k[1] > self.hi[1] {
            return None;
        }
        let nx = self.hi[0] - self.lo[0] + 1;
        Some(((k[1] - self.lo[1]) * nx + (k[0] - self.lo[0])) as usize)
    }

    #[inline]
    pub fn contains(&self, k: Index) -> bool {
        self.offset(k).is_some()
    }

    #[inline]
    pub fn get(&self, k: Index) -> f64 {
        self.offset(k).map_or(0.0, |i| self.values[i])
    }

    pub fn set(&mut self, k: Index, v: f64) {
        let i = self.offset(k).expect("index outside field box");
        self.values[i] = v;
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn indices(&self) -> impl Iterator<Item = Index> + '_ {
        (self.lo[1]..=self.hi[1]).flat_map(move |k1| (self.lo[0]..=self.hi[0]).map(move |k0| [k0, k1]))
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Uniform `m x m` lattice over the closed unit box.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EvalGrid {
    pub m: usize,
}

impl Default for EvalGrid {
    fn default() -> Self {
        Self { m: 256 }
    }
}

impl EvalGrid {
    pub fn new(m: usize) -> Result<Self> {
        if m < 2 {
            return Err(Error::config("evaluation grid needs at least 2 nodes per side"));
        }
        Ok(Self { m })
    }

    /// Nodes in row-major order: `x` varies fastest.
    pub fn points(&self) -> Vec<Point> {
        let s = 1.0 / (self.m - 1) as f64;
        (0..self.m).flat_map(|j| (0..self.m).map(move |i| Point::new(i as f64 * s, j as f64 * s))).collect()
    }

    /// Trapezoidal quadrature of lattice samples over the unit box.
    pub fn integrate(&self, samples: &[f64]) -> f64 {
        assert_eq!(samples.len(), self.m * self.m);
        let s = 1.0 / (self.m - 1) as f64;
        let w = |i: usize| if i == 0 || i == self.m - 1 { 0.5 } else { 1.0 };
        let mut total = 0.0;
        for j in 0..self.m {
            let mut row = 0.0;
            for i in 0..self.m {
                row += w(i) * samples[j * self.m + i];
            }
            total += w(j) * row;
        }
        total * s * s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dyadic_nodes_are_exact() {
        let g = GridSpec::unit(1.0 / 128.0, 0).unwrap();
        assert_eq!(g.hi, 128);
        assert_eq!(g.node([128, 64]), Point::new(1.0, 0.5));
    }

    #[test]
    fn rejects_non_integer_cell_count() {
        assert!(GridSpec::unit(0.3, 0).is_err());
        assert!(GridSpec::unit(-0.5, 0).is_err());
    }

    #[test]
    fn field_reads_zero_outside() {
        let f = GridField::from_fn([0, 0], [2, 3], |k| (k[0] + 10 * k[1]) as f64);
        assert_eq!(f.get([2, 3]), 32.0);
        assert_eq!(f.get([3, 0]), 0.0);
        assert_eq!(f.get([-1, 1]), 0.0);
        assert_eq!(f.indices().count(), 12);
    }

    #[test]
    fn lattice_quadrature_of_linear_is_exact() {
        let g = EvalGrid::new(9).unwrap();
        let s: Vec<f64> = g.points().iter().map(|p| p.x + 2.0 * p.y).collect();
        assert!((g.integrate(&s) - 1.5).abs() < 1e-14);
    }

    #[test]
    fn frame_membership() {
        let g = GridSpec::unit(0.25, 2).unwrap();
        assert_eq!(g.particle_range(), (-2, 6));
        assert!(g.is_frame([-1, 2]));
        assert!(!g.is_frame([4, 0]));
        assert_eq!(g.particle_indices().len(), 81);
    }
}
