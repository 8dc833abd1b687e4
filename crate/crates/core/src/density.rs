//! Evaluation of the particle density `f_h(x) = sum_k w_k phi_k(x)` at
//! arbitrary points, by gathering over spatially binned particles.

use rayon::prelude::*;

use crate::particles::{Method, ParticleSet};
use crate::{mat_norm_inf, quad_form, Mat, Point, DIM};

/// Axis-aligned box `center +- half` containing a particle's support.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox {
    pub center: Point,
    pub half: Point,
}

impl BBox {
    #[inline]
    pub fn contains(&self, x: &Point) -> bool {
        (0..DIM).all(|i| (x[i] - self.center[i]).abs() <= self.half[i])
    }

    /// Largest half-width over the coordinates.
    pub fn half_width(&self) -> f64 {
        self.half.amax()
    }
}

/// Bounding box of particle `k`'s support.
///
/// Fixed shapes use the cube of half-width `eps rho0`. Transformed particles
/// use the image of the reference cube of half-width `h rho` (`rho = rho0`
/// for LTP, the particle's support radius for QTP) under the linearized
/// forward map `D^-1`; its per-axis half-widths are `h rho sum_j |D^-1_ij|`,
/// whose maximum is `h rho ||D^-1||_inf`.
pub fn particle_bbox(set: &ParticleSet, k: usize) -> BBox {
    let center = set.center[k];
    let rho0 = set.kernel.rho0;
    if !set.method.is_transformed() {
        let r = set.shape_scale() * rho0;
        return BBox { center, half: Point::repeat(r) };
    }
    let r = set.h() * set.support_radius(k);
    let inv = set.deformation(k).try_inverse().unwrap_or_else(|| Mat::repeat(f64::INFINITY));
    let half = Point::from_fn(|i, _| r * (0..DIM).map(|j| inv[(i, j)].abs()).sum::<f64>());
    BBox { center, half }
}

/// Uniform bins listing every active particle whose bounding box meets them.
///
/// Lists are sorted by particle index, so gathers are deterministic and
/// independent of the binning.
#[derive(Debug, Clone)]
pub struct SpatialBins {
    origin: Point,
    size: f64,
    shape: [usize; DIM],
    start: Vec<u32>,
    items: Vec<u32>,
    boxes: Vec<BBox>,
}

/// Upper bound on the bin count; bins are enlarged beyond it.
const MAX_BINS: usize = 1 << 20;

impl SpatialBins {
    pub fn build(set: &ParticleSet) -> Self {
        let boxes: Vec<BBox> = (0..set.len()).map(|k| particle_bbox(set, k)).collect();
        let members: Vec<usize> =
            (0..set.len()).filter(|&k| set.active[k] && boxes[k].half.iter().all(|v| v.is_finite())).collect();
        if members.is_empty() {
            return Self { origin: Point::zeros(), size: 1.0, shape: [0; DIM], start: vec![0], items: vec![], boxes };
        }
        let mut lo = Point::repeat(f64::INFINITY);
        let mut hi = Point::repeat(f64::NEG_INFINITY);
        let mut widths = Vec::with_capacity(members.len());
        for &k in &members {
            let b = &boxes[k];
            lo = lo.inf(&(b.center - b.half));
            hi = hi.sup(&(b.center + b.half));
            widths.push(b.half_width());
        }
        let mid = widths.len() / 2;
        let (_, median, _) = widths.select_nth_unstable_by(mid, f64::total_cmp);
        let mut size = (2.0 * *median).max(f64::MIN_POSITIVE);
        let extent = hi - lo;
        let count = |s: f64| -> [usize; DIM] { std::array::from_fn(|i| (extent[i] / s).floor() as usize + 1) };
        while count(size).iter().product::<usize>() > MAX_BINS {
            size *= 2.0;
        }
        let shape = count(size);
        let mut bins = Self { origin: lo, size, shape, start: Vec::new(), items: Vec::new(), boxes };
        let n_bins: usize = shape.iter().product();
        let mut counts = vec![0u32; n_bins + 1];
        for &k in &members {
            bins.for_each_bin(k, |b| counts[b + 1] += 1);
        }
        for b in 0..n_bins {
            counts[b + 1] += counts[b];
        }
        let mut fill = counts.clone();
        let mut items = vec![0u32; counts[n_bins] as usize];
        for &k in &members {
            bins.for_each_bin(k, |b| {
                items[fill[b] as usize] = k as u32;
                fill[b] += 1;
            });
        }
        bins.start = counts;
        bins.items = items;
        bins
    }

    fn cell(&self, x: f64, i: usize) -> usize {
        (((x - self.origin[i]) / self.size).floor().max(0.0) as usize).min(self.shape[i] - 1)
    }

    fn for_each_bin(&self, k: usize, mut f: impl FnMut(usize)) {
        let b = &self.boxes[k];
        let (a0, b0) = (self.cell(b.center[0] - b.half[0], 0), self.cell(b.center[0] + b.half[0], 0));
        let (a1, b1) = (self.cell(b.center[1] - b.half[1], 1), self.cell(b.center[1] + b.half[1], 1));
        for j in a1..=b1 {
            for i in a0..=b0 {
                f(j * self.shape[0] + i);
            }
        }
    }

    /// Particles binned where `x` lies, in ascending index order.
    pub fn candidates(&self, x: &Point) -> &[u32] {
        if self.items.is_empty() {
            return &[];
        }
        for i in 0..DIM {
            let s = (x[i] - self.origin[i]) / self.size;
            if !(s >= 0.0 && s <= self.shape[i] as f64) {
                return &[];
            }
        }
        let b = self.cell(x[1], 1) * self.shape[0] + self.cell(x[0], 0);
        &self.items[self.start[b] as usize..self.start[b + 1] as usize]
    }

    pub fn bbox(&self, k: usize) -> &BBox {
        &self.boxes[k]
    }

    pub fn bin_size(&self) -> f64 {
        self.size
    }
}

/// Jacobian `D + (Q_i (x - x_k))_i^t` of the quadratic backward map.
fn quadratic_jacobian(d: &Mat, q: &[Mat; DIM], y: &Point) -> Mat {
    let mut j = *d;
    for i in 0..DIM {
        let row = q[i] * y;
        for c in 0..DIM {
            j[(i, c)] += row[c];
        }
    }
    j
}

/// Whether `x` lies in QTP particle `k`'s restricted support: inside the
/// linear image of its cube (`||D (x - x_k)||_inf <= h rho_k`) and where
/// its quadratic backward map has a positive Jacobian determinant.
pub fn qtp_support_indicator(set: &ParticleSet, k: usize, x: &Point) -> bool {
    let y = x - set.center[k];
    let d = set.deformation(k);
    let lin = d * y;
    if lin.amax() > set.h() * set.support_radius(k) {
        return false;
    }
    quadratic_jacobian(&d, &set.hessians(k), &y).determinant() > 0.0
}

/// Reference-shape argument of particle `k` at `x`, or `None` outside its
/// restricted support.
#[inline]
fn shape_argument(set: &ParticleSet, k: usize, x: &Point) -> Option<Point> {
    let y = x - set.center[k];
    match set.method {
        Method::Tsp { .. } | Method::Fsl => Some(y / set.shape_scale()),
        Method::Ltp => Some(set.deformation(k) * y / set.h()),
        Method::Qtp => {
            let d = set.deformation(k);
            let q = set.hessians(k);
            let lin = d * y;
            if lin.amax() > set.h() * set.support_radius(k) {
                return None;
            }
            if quadratic_jacobian(&d, &q, &y).determinant() <= 0.0 {
                return None;
            }
            Some((lin + 0.5 * quad_form(&q, &y)) / set.h())
        }
    }
}

/// Gathers particle contributions through spatial bins.
pub struct DensityEvaluator<'a> {
    set: &'a ParticleSet,
    bins: SpatialBins,
    scale: f64,
}

impl<'a> DensityEvaluator<'a> {
    pub fn new(set: &'a ParticleSet) -> Self {
        let scale = set.shape_scale().powi(DIM as i32).recip();
        Self { set, bins: SpatialBins::build(set), scale }
    }

    pub fn bins(&self) -> &SpatialBins {
        &self.bins
    }

    /// `f_h(x)`, summed in ascending particle order.
    pub fn eval(&self, x: &Point) -> f64 {
        let set = self.set;
        let mut acc = 0.0;
        for &k in self.bins.candidates(x) {
            let k = k as usize;
            if !self.bins.bbox(k).contains(x) {
                continue;
            }
            if let Some(arg) = shape_argument(set, k, x) {
                let phi = set.kernel.eval(&arg);
                if phi != 0.0 {
                    acc += set.weight[k] * phi;
                }
            }
        }
        acc * self.scale
    }

    pub fn eval_points(&self, points: &[Point]) -> Vec<f64> {
        points.par_iter().map(|x| self.eval(x)).collect()
    }

    /// Number of active particles whose (restricted, deformed) support
    /// contains `x`.
    pub fn overlap_count(&self, x: &Point) -> usize {
        let rho0 = self.set.kernel.rho0;
        self.bins
            .candidates(x)
            .iter()
            .filter(|&&k| {
                let k = k as usize;
                self.bins.bbox(k).contains(x) && shape_argument(self.set, k, x).is_some_and(|a| a.amax() < rho0)
            })
            .count()
    }
}

/// One-off density evaluation at `x` (builds bins; prefer
/// [`DensityEvaluator`] for many points).
pub fn eval_density(set: &ParticleSet, x: &Point) -> f64 {
    DensityEvaluator::new(set).eval(x)
}

/// Density at every node of `points`.
pub fn eval_density_grid(set: &ParticleSet, points: &[Point]) -> Vec<f64> {
    DensityEvaluator::new(set).eval_points(points)
}

/// Sum of all active particle weights.
pub fn particle_mass(set: &ParticleSet) -> f64 {
    set.weight.iter().zip(&set.active).filter(|(_, &a)| a).map(|(w, _)| w).sum()
}

/// Norm `||D^-1||_inf` used for diagnostics of particle stretching.
pub fn stretch(set: &ParticleSet, k: usize) -> f64 {
    set.deformation(k).try_inverse().map_or(f64::INFINITY, |m| mat_norm_inf(&m))
}
