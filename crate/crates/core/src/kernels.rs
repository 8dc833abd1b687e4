//! Reference particle shapes and the grid approximation operator `A_h`.
//!
//! Supported shapes are Monaghan's interpolating `M'_4` kernel and tensorized
//! cardinal B-splines. B-spline pieces are generated once, symbolically, from
//! the convolution recursion `B_p = B_{p-1} * B_0`.

use crate::grid::{GridField, Index};
use crate::{Error, Point, Result, DIM};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum KernelKind {
    M4Prime,
    BSpline(u32),
}

impl KernelKind {
    pub fn from_id(id: &str) -> Result<Self> {
        match id {
            "m4p" => Ok(Self::M4Prime),
            "b1" => Ok(Self::BSpline(1)),
            "b3" => Ok(Self::BSpline(3)),
            "b5" => Ok(Self::BSpline(5)),
            _ => Err(Error::config(format!("unknown kernel `{id}` (expected m4p, b1, b3 or b5)"))),
        }
    }

    pub fn id(&self) -> String {
        match self {
            Self::M4Prime => "m4p".into(),
            Self::BSpline(p) => format!("b{p}"),
        }
    }
}

/// Quasi-interpolation coefficients `(a_0, ..., a_m)` for odd-degree B-splines.
fn bspline_stencil(p: u32) -> Option<Vec<f64>> {
    match p {
        1 => Some(vec![1.0]),
        3 => Some(vec![8.0 / 6.0, -1.0 / 6.0]),
        5 => Some(vec![503.0 / 288.0, -1469.0 / 3600.0, 7.0 / 225.0, 13.0 / 3600.0, 1.0 / 14400.0]),
        _ => None,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShapeKernel {
    pub kind: KernelKind,
    /// Half-width of the support in reference coordinates, in the max norm.
    pub rho0: f64,
    stencil: Option<Vec<f64>>,
    /// B-spline pieces on `[i - start, i + 1 - start]`, `x >= 0` half only,
    /// in the local variable `u = x - left end`.
    pieces: Vec<Vec<f64>>,
    first_break: f64,
}

impl ShapeKernel {
    pub fn new(kind: KernelKind) -> Result<Self> {
        match kind {
            KernelKind::M4Prime => {
                Ok(Self { kind, rho0: 2.0, stencil: Some(vec![1.0]), pieces: Vec::new(), first_break: 0.0 })
            }
            KernelKind::BSpline(p) => {
                if p > 9 {
                    return Err(Error::config(format!("B-spline degree {p} is not supported")));
                }
                let (start, pieces) = bspline_pieces(p);
                // keep only the pieces covering x >= 0
                let first = pieces.len() / 2;
                let first_break = start + first as f64;
                Ok(Self {
                    kind,
                    rho0: (p + 1) as f64 / 2.0,
                    stencil: bspline_stencil(p),
                    pieces: pieces[first..].to_vec(),
                    first_break,
                })
            }
        }
    }

    pub fn from_id(id: &str) -> Result<Self> {
        Self::new(KernelKind::from_id(id)?)
    }

    /// Symmetric stencil `(a_0, ..., a_{m_p})`, when one is published.
    pub fn quasi_stencil(&self) -> Option<&[f64]> {
        self.stencil.as_deref()
    }

    /// Stencil half-width `m_p` (0 when the kernel has no stencil).
    pub fn stencil_radius(&self) -> usize {
        self.stencil.as_ref().map_or(0, |s| s.len() - 1)
    }

    /// Highest coordinate degree reproduced by `A_h`.
    pub fn reproduction_degree(&self) -> u32 {
        match self.kind {
            KernelKind::M4Prime => 2,
            KernelKind::BSpline(p) => p,
        }
    }

    /// Number of grid layers needed around a box so that `A_h` samples and
    /// density evaluations near its edge see every contributing particle.
    pub fn frame_width(&self) -> i64 {
        self.stencil_radius() as i64 + self.rho0.ceil() as i64
    }

    pub fn eval_1d(&self, x: f64) -> f64 {
        let a = x.abs();
        match self.kind {
            KernelKind::M4Prime => {
                if a <= 1.0 {
                    1.0 - 2.5 * a * a + 1.5 * a * a * a
                } else if a < 2.0 {
                    0.5 * (2.0 - a) * (2.0 - a) * (1.0 - a)
                } else {
                    0.0
                }
            }
            KernelKind::BSpline(_) => {
                if a >= self.rho0 {
                    return 0.0;
                }
                let s = a - self.first_break;
                let (i, u) = if s < 0.0 {
                    // even degree: the central piece straddles the origin
                    (0, s)
                } else {
                    let i = (s.floor() as usize).min(self.pieces.len() - 1);
                    (i, s - i as f64)
                };
                horner(&self.pieces[i], u)
            }
        }
    }

    /// Tensor-product shape `phi(x) = prod_i phi_1(x_i)`.
    pub fn eval(&self, x: &Point) -> f64 {
        let mut v = 1.0;
        for i in 0..DIM {
            v *= self.eval_1d(x[i]);
            if v == 0.0 {
                return 0.0;
            }
        }
        v
    }

    /// `phi_h(y) = h^-d phi(y / h)`.
    pub fn eval_scaled(&self, h: f64, y: &Point) -> f64 {
        self.eval(&(y / h)) / h.powi(DIM as i32)
    }

    /// Particle weights `w_k = h^d sum_{|l|_inf <= m_p} a_l g(x0_{k+l})` for
    /// every `k` in `[lo, hi]`. Samples outside the field's box count as 0.
    pub fn quasi_weights(&self, h: f64, samples: &GridField, lo: Index, hi: Index) -> Result<GridField> {
        let stencil = self
            .stencil
            .as_ref()
            .ok_or_else(|| Error::config(format!("kernel {} has no quasi-interpolation stencil", self.kind.id())))?;
        let m = stencil.len() as i64 - 1;
        let coef = |l: i64| stencil[l.unsigned_abs() as usize];
        let hd = h.powi(DIM as i32);
        Ok(GridField::from_fn(lo, hi, |k| {
            let mut acc = 0.0;
            for l1 in -m..=m {
                let mut row = 0.0;
                for l0 in -m..=m {
                    row += coef(l0) * samples.get([k[0] + l0, k[1] + l1]);
                }
                acc += coef(l1) * row;
            }
            hd * acc
        }))
    }
}

fn horner(c: &[f64], x: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, &a| acc * x + a)
}

fn antiderivative(c: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; c.len() + 1];
    for (i, &a) in c.iter().enumerate() {
        out[i + 1] = a / (i + 1) as f64;
    }
    out
}

/// Coefficients of `x -> p(x + a)`.
fn shift(c: &[f64], a: f64) -> Vec<f64> {
    let n = c.len();
    let mut out = vec![0.0; n];
    for (i, &ci) in c.iter().enumerate() {
        // (x + a)^i = sum_j C(i, j) a^(i-j) x^j
        let mut binom = 1.0;
        for (j, o) in out.iter_mut().enumerate().take(i + 1) {
            *o += ci * binom * a.powi((i - j) as i32);
            binom = binom * (i - j) as f64 / (j + 1) as f64;
        }
    }
    out
}

fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    let n = a.len().max(b.len());
    (0..n).map(|i| a.get(i).copied().unwrap_or(0.0) - b.get(i).copied().unwrap_or(0.0)).collect()
}

/// Pieces of `B_p` on consecutive unit intervals starting at `-(p+1)/2`,
/// expressed in the local variable measured from each interval's left end.
fn bspline_pieces(p: u32) -> (f64, Vec<Vec<f64>>) {
    // global-coordinate pieces of B_0
    let mut start = -0.5;
    let mut pieces: Vec<Vec<f64>> = vec![vec![1.0]];
    for _ in 0..p {
        let anti: Vec<Vec<f64>> = pieces.iter().map(|c| antiderivative(c)).collect();
        let next_start = start - 0.5;
        let mut next = Vec::with_capacity(pieces.len() + 1);
        for j in 0..=pieces.len() {
            // window [x - 1/2, x + 1/2] straddles the break c = start + j
            let c = start + j as f64;
            let mut poly = vec![0.0];
            if j >= 1 {
                let prev = &anti[j - 1];
                let lower = shift(prev, -0.5);
                poly = sub(&poly, &lower);
                poly[0] += horner(prev, c);
            }
            if j < pieces.len() {
                let cur = &anti[j];
                let upper = shift(cur, 0.5);
                poly = sub(&upper, &poly.iter().map(|v| -v).collect::<Vec<_>>());
                poly[0] -= horner(cur, c);
            }
            next.push(poly);
        }
        start = next_start;
        pieces = next;
    }
    let local = pieces.iter().enumerate().map(|(i, c)| shift(c, start + i as f64)).collect();
    (start, local)
}
