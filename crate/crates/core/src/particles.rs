//! Particle state and its evolution: pushing centers and markers with the
//! numerical flow, and maintaining the local backward-flow derivatives `D`
//! (Jacobian) and `Q` (per-component Hessians).

use rayon::prelude::*;

use crate::flows::ForwardFlow;
use crate::grid::{GridField, GridSpec, Index};
use crate::kernels::ShapeKernel;
use crate::{quad_form, vec_norm_inf, Error, Hessians, Mat, Point, Result, DIM};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Method {
    /// Smoothed particles of radius `h^q`, translated only.
    Tsp {
        q: f64,
    },
    Fsl,
    Ltp,
    Qtp,
}

impl Method {
    pub fn from_id(id: &str, q: f64) -> Result<Self> {
        match id {
            "tsp" => Ok(Self::Tsp { q }),
            "fsl" => Ok(Self::Fsl),
            "ltp" => Ok(Self::Ltp),
            "qtp" => Ok(Self::Qtp),
            _ => Err(Error::config(format!("unknown method `{id}` (expected tsp, fsl, ltp or qtp)"))),
        }
    }

    pub fn id(&self) -> &'static str {
        match self {
            Self::Tsp { .. } => "tsp",
            Self::Fsl => "fsl",
            Self::Ltp => "ltp",
            Self::Qtp => "qtp",
        }
    }

    /// Polynomial degree of the particle backward maps.
    pub fn order(&self) -> u32 {
        match self {
            Self::Tsp { .. } | Self::Fsl => 0,
            Self::Ltp => 1,
            Self::Qtp => 2,
        }
    }

    pub fn is_transformed(&self) -> bool {
        self.order() > 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DerivativeScheme {
    /// Derivatives recomputed from pushed marker stencils.
    Direct,
    /// Derivatives composed each step from one-step finite differences.
    Incremental,
}

impl DerivativeScheme {
    pub fn from_id(id: &str) -> Result<Self> {
        match id {
            "direct" => Ok(Self::Direct),
            "incremental" => Ok(Self::Incremental),
            _ => Err(Error::config(format!("unknown scheme `{id}` (expected direct or incremental)"))),
        }
    }

    pub fn id(&self) -> &'static str {
        match self {
            Self::Direct => "direct",
            Self::Incremental => "incremental",
        }
    }
}

/// Marker offsets (in units of `h'`) carried by direct-scheme particles,
/// besides the center itself: enough points for one-sided second-order
/// first differences and for all forward second differences.
pub const MARKER_OFFSETS: [[i32; 2]; 5] = [[1, 0], [0, 1], [1, 1], [2, 0], [0, 2]];
const E1: usize = 0;
const E2: usize = 1;
const E12: usize = 2;
const E11: usize = 3;
const E22: usize = 4;

pub type Markers = [Point; MARKER_OFFSETS.len()];

/// Determinant threshold below which a local Jacobian is treated as singular.
pub const SINGULAR_DET: f64 = 1e-12;

pub fn invert(m: &Mat) -> Option<Mat> {
    if m.determinant().abs() < SINGULAR_DET || !m.iter().all(|v| v.is_finite()) {
        return None;
    }
    m.try_inverse()
}

fn marker_origin(origin: &Point, hp: f64, l: [i32; 2]) -> Point {
    origin + hp * Point::new(l[0] as f64, l[1] as f64)
}

/// Jacobian of the forward flow at the particle origin from its markers,
/// with the one-sided difference `(-3 x_0 + 4 x_{e_j} - x_{2 e_j}) / 2h'`.
pub fn marker_jacobian(center: &Point, m: &Markers, hp: f64) -> Mat {
    let c1 = (-3.0 * center + 4.0 * m[E1] - m[E11]) / (2.0 * hp);
    let c2 = (-3.0 * center + 4.0 * m[E2] - m[E22]) / (2.0 * hp);
    Mat::from_columns(&[c1, c2])
}

/// Forward second differences of the markers: Hessians of each component of
/// the forward flow at the particle origin.
pub fn marker_hessians(center: &Point, m: &Markers, hp: f64) -> Hessians {
    let s = 1.0 / (hp * hp);
    let d11 = (center - 2.0 * m[E1] + m[E11]) * s;
    let d22 = (center - 2.0 * m[E2] + m[E22]) * s;
    let d12 = (center - m[E1] - m[E2] + m[E12]) * s;
    std::array::from_fn(|i| Mat::new(d11[i], d12[i], d12[i], d22[i]))
}

/// Backward Hessians from forward ones, `Q_i = -D^t (sum_j D_ij H_j) D`,
/// where `D` is the backward Jacobian.
pub fn backward_hessians(d: &Mat, forward: &Hessians) -> Hessians {
    std::array::from_fn(|i| {
        let mut acc = Mat::zeros();
        for (j, hj) in forward.iter().enumerate() {
            acc += d[(i, j)] * hj;
        }
        -(d.transpose() * acc * d)
    })
}

/// Central-difference Jacobian of one flow step at `x`.
pub fn step_jacobian<F: ForwardFlow + ?Sized>(flow: &F, t: f64, dt: f64, x: &Point, hp: f64) -> Mat {
    let cols: [Point; DIM] = std::array::from_fn(|j| {
        let e = Point::from_fn(|i, _| if i == j { hp } else { 0.0 });
        (flow.advance(t, dt, &(x + e)) - flow.advance(t, dt, &(x - e))) / (2.0 * hp)
    });
    Mat::from_columns(&cols)
}

/// Centered 9-point second differences of one flow step at `x`.
pub fn step_hessians<F: ForwardFlow + ?Sized>(flow: &F, t: f64, dt: f64, x: &Point, hp: f64) -> Hessians {
    let at = |a: f64, b: f64| flow.advance(t, dt, &(x + Point::new(a * hp, b * hp)));
    let s = 1.0 / (hp * hp);
    let c = at(0.0, 0.0);
    let d11 = (at(1.0, 0.0) - 2.0 * c + at(-1.0, 0.0)) * s;
    let d22 = (at(0.0, 1.0) - 2.0 * c + at(0.0, -1.0)) * s;
    let d12 = (at(1.0, 1.0) - at(1.0, -1.0) - at(-1.0, 1.0) + at(-1.0, -1.0)) * (0.25 * s);
    std::array::from_fn(|i| Mat::new(d11[i], d12[i], d12[i], d22[i]))
}

/// `Q^{n+1}_i = Jb^t (Q_i - sum_{j,j'} D_ij Jb_{jj'} H_{j'}) Jb`, with
/// `Jb` the inverse one-step Jacobian and `H` the one-step forward Hessians.
pub fn compose_hessians(q: &Hessians, d: &Mat, jb: &Mat, h: &Hessians) -> Hessians {
    let dj = d * jb;
    std::array::from_fn(|i| {
        let mut inner = q[i];
        for (jp, hjp) in h.iter().enumerate() {
            inner -= dj[(i, jp)] * hjp;
        }
        jb.transpose() * inner * jb
    })
}

/// Numerical parameters of a particle set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParticleParams {
    pub method: Method,
    pub scheme: DerivativeScheme,
    /// Finite-difference resolution `h'`; `None` selects `h/2` (direct) or
    /// `h` (incremental).
    pub h_prime: Option<f64>,
    /// Relative weight threshold below which particles are inactive.
    pub w_tol: f64,
    /// Support growth `c_s` used by incremental QTP, `rho = rho0 (1 + c_s)`.
    pub support_growth: f64,
}

impl ParticleParams {
    pub fn new(method: Method, scheme: DerivativeScheme) -> Self {
        Self { method, scheme, h_prime: None, w_tol: 1e-9, support_growth: 0.5 }
    }
}

#[derive(Debug, Clone)]
pub struct ParticleSet {
    pub method: Method,
    pub scheme: DerivativeScheme,
    pub grid: GridSpec,
    pub kernel: ShapeKernel,
    pub h_prime: f64,
    pub w_tol: f64,
    pub support_growth: f64,
    /// Reference density scale `max |f0|` used for activity thresholds.
    pub f_scale: f64,
    pub index: Vec<Index>,
    pub origin: Vec<Point>,
    pub weight: Vec<f64>,
    pub center: Vec<Point>,
    /// Backward Jacobians `D_k` (LTP and QTP only).
    pub deform: Vec<Mat>,
    /// Backward Hessians `Q_k` (QTP only).
    pub hess: Vec<Hessians>,
    /// Marker stencils (direct LTP and QTP only).
    pub markers: Vec<Markers>,
    /// Support radius in units of `h` (QTP only).
    pub support: Vec<f64>,
    pub active: Vec<bool>,
    /// Frame particles are never moved nor remapped.
    pub frozen: Vec<bool>,
    initial_weight: Vec<f64>,
    /// Number of particles whose last derivative update hit a singular Jacobian.
    pub degenerate: usize,
    pub step: usize,
}

impl ParticleSet {
    /// Cartesian particles with weights from `A_h f0` (standard point-value
    /// weights `h^d f0(x_k)` for smoothed particles).
    pub fn initialize(
        f0: &(dyn Fn(&Point) -> f64 + Sync),
        kernel: &ShapeKernel,
        grid: GridSpec,
        params: ParticleParams,
    ) -> Result<Self> {
        let h = grid.h;
        if let Some(hp) = params.h_prime {
            if !(hp > 0.0) {
                return Err(Error::config(format!("h' must be positive, got {hp}")));
            }
        }
        if let Method::Tsp { q } = params.method {
            if !(q > 0.0 && q <= 1.0) {
                return Err(Error::config(format!("TSP exponent q must lie in (0, 1], got {q}")));
            }
        }
        if !(params.w_tol >= 0.0) {
            return Err(Error::config("w_tol must be non-negative"));
        }
        let h_prime = params.h_prime.unwrap_or(match params.scheme {
            DerivativeScheme::Direct => 0.5 * h,
            DerivativeScheme::Incremental => h,
        });
        let (a, b) = grid.particle_range();
        let m = kernel.stencil_radius() as i64;
        let samples = GridField::from_fn([a - m, a - m], [b + m, b + m], |k| f0(&grid.node(k)));
        let weights = match params.method {
            Method::Tsp { .. } => {
                let hd = h.powi(DIM as i32);
                GridField::from_fn([a, a], [b, b], |k| hd * samples.get(k))
            }
            _ => kernel.quasi_weights(h, &samples, [a, a], [b, b])?,
        };
        let index = grid.particle_indices();
        let origin: Vec<Point> = index.iter().map(|&k| grid.node(k)).collect();
        let weight: Vec<f64> = index.iter().map(|&k| weights.get(k)).collect();
        let frozen = index.iter().map(|&k| grid.is_frame(k)).collect();
        let mut set = Self {
            method: params.method,
            scheme: params.scheme,
            grid,
            kernel: kernel.clone(),
            h_prime,
            w_tol: params.w_tol,
            support_growth: params.support_growth,
            f_scale: samples.max_abs(),
            center: origin.clone(),
            initial_weight: weight.clone(),
            active: vec![false; index.len()],
            index,
            origin,
            weight,
            deform: Vec::new(),
            hess: Vec::new(),
            markers: Vec::new(),
            support: Vec::new(),
            frozen,
            degenerate: 0,
            step: 0,
        };
        set.reset_shapes();
        Ok(set)
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    pub fn active_count(&self) -> usize {
        self.active.iter().filter(|&&a| a).count()
    }

    pub fn h(&self) -> f64 {
        self.grid.h
    }

    /// Shape radius scale: `h^q` for smoothed particles, `h` otherwise.
    pub fn shape_scale(&self) -> f64 {
        match self.method {
            Method::Tsp { q } => self.grid.h.powf(q),
            _ => self.grid.h,
        }
    }

    pub fn has_markers(&self) -> bool {
        !self.markers.is_empty()
    }

    /// Backward Jacobian of particle `k` (identity for fixed shapes).
    #[inline]
    pub fn deformation(&self, k: usize) -> Mat {
        self.deform.get(k).copied().unwrap_or_else(Mat::identity)
    }

    #[inline]
    pub fn hessians(&self, k: usize) -> Hessians {
        self.hess.get(k).copied().unwrap_or([Mat::zeros(); DIM])
    }

    /// Support radius in units of `h`.
    #[inline]
    pub fn support_radius(&self, k: usize) -> f64 {
        self.support.get(k).copied().unwrap_or(self.kernel.rho0)
    }

    /// Puts every particle back on its grid node with an undeformed shape
    /// and re-evaluates the activity flags.
    fn reset_shapes(&mut self) {
        let n = self.len();
        self.center.clone_from(&self.origin);
        let transformed = self.method.is_transformed();
        self.deform = if transformed { vec![Mat::identity(); n] } else { Vec::new() };
        self.hess = if self.method == Method::Qtp { vec![[Mat::zeros(); DIM]; n] } else { Vec::new() };
        self.support = if self.method == Method::Qtp { vec![self.kernel.rho0; n] } else { Vec::new() };
        self.markers = if transformed && self.scheme == DerivativeScheme::Direct {
            let hp = self.h_prime;
            self.origin.iter().map(|o| std::array::from_fn(|l| marker_origin(o, hp, MARKER_OFFSETS[l]))).collect()
        } else {
            Vec::new()
        };
        let threshold = self.w_tol * self.grid.h.powi(DIM as i32) * self.f_scale;
        self.active = self.weight.iter().map(|w| w.abs() > threshold && *w != 0.0).collect();
        self.degenerate = 0;
    }

    /// Replaces the weights of the non-frame particles and resets the set to
    /// its initialization state (frame particles get their initial weights).
    pub fn reset_to_grid(&mut self, weights: &GridField) {
        for k in 0..self.len() {
            self.weight[k] = if self.frozen[k] { self.initial_weight[k] } else { weights.get(self.index[k]) };
        }
        self.reset_shapes();
    }

    #[inline]
    fn moves(&self, k: usize) -> bool {
        self.active[k] && !self.frozen[k]
    }

    /// Advances every active center (and every marker, direct scheme) by one
    /// step of the numerical flow.
    pub fn push<F: ForwardFlow + ?Sized>(&mut self, flow: &F, t: f64, dt: f64) {
        let movable: Vec<bool> = (0..self.len()).map(|k| self.moves(k)).collect();
        self.center.par_iter_mut().zip(movable.par_iter()).for_each(|(c, &mv)| {
            if mv {
                *c = flow.advance(t, dt, c);
            }
        });
        self.markers.par_iter_mut().zip(movable.par_iter()).for_each(|(m, &mv)| {
            if mv {
                for p in m.iter_mut() {
                    *p = flow.advance(t, dt, p);
                }
            }
        });
        self.step += 1;
    }

    /// Direct scheme: recomputes `D` (and `Q`, and QTP support radii) from
    /// the markers. Returns the number of particles with a singular Jacobian;
    /// their previous derivatives are kept.
    pub fn update_direct(&mut self) -> Result<usize> {
        if !self.has_markers() {
            return Err(Error::config("direct derivative update needs a marker-carrying particle set"));
        }
        let hp = self.h_prime;
        let h = self.grid.h;
        let rho0 = self.kernel.rho0;
        let qtp = self.method == Method::Qtp;
        let results: Vec<Option<(Mat, Option<Hessians>)>> = (0..self.len())
            .into_par_iter()
            .map(|k| {
                if !self.moves(k) {
                    return Some((self.deform[k], if qtp { Some(self.hess[k]) } else { None }));
                }
                let jf = marker_jacobian(&self.center[k], &self.markers[k], hp);
                let d = invert(&jf)?;
                let q = qtp.then(|| backward_hessians(&d, &marker_hessians(&self.center[k], &self.markers[k], hp)));
                Some((d, q))
            })
            .collect();
        let mut degenerate = 0;
        for (k, r) in results.into_iter().enumerate() {
            match r {
                Some((d, q)) => {
                    self.deform[k] = d;
                    if let Some(q) = q {
                        self.hess[k] = q;
                    }
                }
                None => degenerate += 1,
            }
        }
        if qtp {
            let radii: Vec<f64> = (0..self.len())
                .into_par_iter()
                .map(|k| if self.moves(k) { rho0 + self.particle_indicator(k, 1) / h } else { rho0 })
                .collect();
            self.support = radii;
        }
        self.degenerate = degenerate;
        Ok(degenerate)
    }

    /// Incremental scheme: composes `D` (and `Q`) with one-step finite
    /// differences of `flow` around the current, pre-push centers. Must be
    /// called once per step before [`push`](Self::push).
    pub fn update_incremental<F: ForwardFlow + ?Sized>(&mut self, flow: &F, t: f64, dt: f64) -> Result<usize> {
        if self.scheme != DerivativeScheme::Incremental || !self.method.is_transformed() {
            return Err(Error::config("incremental update needs an incremental LTP or QTP particle set"));
        }
        let hp = self.h_prime;
        let qtp = self.method == Method::Qtp;
        let results: Vec<Option<(Mat, Option<Hessians>)>> = (0..self.len())
            .into_par_iter()
            .map(|k| {
                if !self.moves(k) {
                    return Some((self.deform[k], if qtp { Some(self.hess[k]) } else { None }));
                }
                let x = &self.center[k];
                let jb = invert(&step_jacobian(flow, t, dt, x, hp))?;
                let d = self.deform[k];
                let q = qtp.then(|| compose_hessians(&self.hess[k], &d, &jb, &step_hessians(flow, t, dt, x, hp)));
                Some((d * jb, q))
            })
            .collect();
        let mut degenerate = 0;
        for (k, r) in results.into_iter().enumerate() {
            match r {
                Some((d, q)) => {
                    self.deform[k] = d;
                    if let Some(q) = q {
                        self.hess[k] = q;
                    }
                }
                None => degenerate += 1,
            }
        }
        if qtp {
            let rho = self.kernel.rho0 * (1.0 + self.support_growth);
            for k in 0..self.len() {
                if self.moves(k) {
                    self.support[k] = rho;
                }
            }
        }
        self.degenerate = degenerate;
        Ok(degenerate)
    }

    /// Polynomial backward map of particle `k` of order `r` (1 or 2).
    pub fn backward_map(&self, k: usize, r: u32, x: &Point) -> Point {
        let y = x - self.center[k];
        let mut b = self.origin[k] + self.deformation(k) * y;
        if r >= 2 {
            b += 0.5 * quad_form(&self.hessians(k), &y);
        }
        b
    }

    /// Worst mismatch of the order-`r` backward map at particle `k`'s markers.
    pub fn particle_indicator(&self, k: usize, r: u32) -> f64 {
        let hp = self.h_prime;
        let o = &self.origin[k];
        let mut worst = vec_norm_inf(&(self.backward_map(k, r, &self.center[k]) - o));
        for (l, m) in self.markers[k].iter().enumerate() {
            let target = marker_origin(o, hp, MARKER_OFFSETS[l]);
            worst = worst.max(vec_norm_inf(&(self.backward_map(k, r, m) - target)));
        }
        worst
    }

    /// Backward-flow error indicator: sup over active particles of the
    /// marker mismatch of their order-`r` backward maps.
    pub fn backward_flow_indicator(&self, r: u32) -> Result<f64> {
        if !self.has_markers() {
            return Err(Error::config("backward-flow indicators need direct-scheme markers"));
        }
        if r == 0 || r > 2 {
            return Err(Error::config(format!("indicator order must be 1 or 2, got {r}")));
        }
        Ok((0..self.len())
            .into_par_iter()
            .filter(|&k| self.moves(k))
            .map(|k| self.particle_indicator(k, r))
            .reduce(|| 0.0, f64::max))
    }

    /// Overwrites marker positions through an explicit map (for tests and
    /// diagnostics with exactly known flows).
    pub fn map_markers(&mut self, map: impl Fn(&Point) -> Point + Sync) {
        let movable: Vec<bool> = (0..self.len()).map(|k| self.moves(k)).collect();
        for (k, mv) in movable.into_iter().enumerate() {
            if mv {
                self.center[k] = map(&self.center[k]);
                if let Some(m) = self.markers.get_mut(k) {
                    for p in m.iter_mut() {
                        *p = map(p);
                    }
                }
            }
        }
    }

    pub fn max_weight(&self) -> f64 {
        self.weight.iter().fold(0.0, |m, w| m.max(w.abs()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flows::{Rk4, StepMap};
    use crate::kernels::ShapeKernel;
    use approx::assert_abs_diff_eq;

    fn set(method: Method, scheme: DerivativeScheme, f0: &(dyn Fn(&Point) -> f64 + Sync)) -> ParticleSet {
        let kernel = ShapeKernel::from_id("b3").unwrap();
        let grid = GridSpec::unit(1.0 / 16.0, kernel.frame_width()).unwrap();
        ParticleSet::initialize(f0, &kernel, grid, ParticleParams::new(method, scheme)).unwrap()
    }

    fn bump(x: &Point) -> f64 {
        (1.0 - 8.0 * (x - Point::new(0.5, 0.5)).norm_squared()).max(0.0)
    }

    #[test]
    fn zero_data_is_inactive() {
        let s = set(Method::Ltp, DerivativeScheme::Direct, &|_| 0.0);
        assert_eq!(s.active_count(), 0);
    }

    #[test]
    fn unit_data_gives_unit_weights() {
        let s = set(Method::Qtp, DerivativeScheme::Direct, &|_| 1.0);
        let h2 = s.h() * s.h();
        for k in 0..s.len() {
            if !s.frozen[k] {
                assert_abs_diff_eq!(s.weight[k], h2, epsilon = 1e-16);
            }
        }
        assert!(s.deform.iter().all(|d| *d == Mat::identity()));
        assert!(s.hess.iter().all(|q| q.iter().all(|m| *m == Mat::zeros())));
        assert_eq!(s.markers[5][0], s.origin[5] + Point::new(0.5 * s.h(), 0.0));
    }

    #[test]
    fn state_layout_per_method() {
        let tsp = set(Method::Tsp { q: 0.5 }, DerivativeScheme::Direct, &bump);
        assert!(tsp.markers.is_empty() && tsp.deform.is_empty() && tsp.hess.is_empty());
        let fsl = set(Method::Fsl, DerivativeScheme::Direct, &bump);
        assert!(fsl.deform.is_empty() && fsl.markers.is_empty());
        let ltp = set(Method::Ltp, DerivativeScheme::Incremental, &bump);
        assert!(ltp.hess.is_empty() && ltp.markers.is_empty() && !ltp.deform.is_empty());
        assert_eq!(ltp.h_prime, ltp.h());
    }

    #[test]
    fn weights_bounded_by_data() {
        let s = set(Method::Ltp, DerivativeScheme::Direct, &bump);
        // c_w = (sum |a_l|)^d for the cubic stencil
        let cw = (8.0f64 / 6.0 + 2.0 / 6.0).powi(2);
        assert!(s.max_weight() <= cw * s.h() * s.h() * 1.0 + 1e-15);
    }

    #[test]
    fn push_with_zero_field_is_identity() {
        let mut s = set(Method::Qtp, DerivativeScheme::Direct, &bump);
        let before = (s.center.clone(), s.markers.clone());
        s.push(&Rk4(|_: f64, _: &Point| Point::zeros()), 0.0, 0.1);
        assert_eq!(before.0, s.center);
        assert_eq!(before.1, s.markers);
        assert_eq!(s.update_direct().unwrap(), 0);
        assert!(s.deform.iter().all(|d| (d - Mat::identity()).amax() < 1e-12));
    }

    #[test]
    fn translation_keeps_patch_shape() {
        let mut s = set(Method::Ltp, DerivativeScheme::Direct, &bump);
        s.push(&Rk4(|_: f64, _: &Point| Point::new(0.3, -0.1)), 0.0, 0.5);
        let hp = s.h_prime;
        for k in (0..s.len()).filter(|&k| s.active[k]) {
            for (l, m) in s.markers[k].iter().enumerate() {
                let off = Point::new(MARKER_OFFSETS[l][0] as f64, MARKER_OFFSETS[l][1] as f64) * hp;
                assert!((m - s.center[k] - off).amax() < 1e-15);
            }
        }
    }

    #[test]
    fn rotation_step_moves_center() {
        let mut s = set(Method::Ltp, DerivativeScheme::Direct, &|_| 1.0);
        let k = s.index.iter().position(|&i| i == [11, 8]).unwrap();
        assert_eq!(s.origin[k], Point::new(0.6875, 0.5));
        let field = crate::FlowField::nonlinear_rotation();
        s.push(&Rk4(field), 0.0, 0.5);
        let exact = field.exact_forward(0.5, &s.origin[k]).unwrap();
        assert!((s.center[k] - exact).amax() < 1e-6);
    }

    #[test]
    fn affine_flow_gives_inverse_jacobian() {
        let a = Mat::new(2.0, 0.0, 0.0, 0.5);
        let b = Point::new(0.1, -0.2);
        let mut s = set(Method::Qtp, DerivativeScheme::Direct, &bump);
        s.map_markers(|x| a * x + b);
        s.update_direct().unwrap();
        let expect = Mat::new(0.5, 0.0, 0.0, 2.0);
        for k in (0..s.len()).filter(|&k| s.active[k] && !s.frozen[k]) {
            assert!((s.deform[k] - expect).amax() < 1e-12);
            assert!(s.hess[k].iter().all(|q| q.amax() < 1e-9));
        }
        let r1 = s.backward_flow_indicator(1).unwrap();
        assert!(r1 < 1e-14, "{r1}");
    }

    #[test]
    fn quadratic_flow_hessian_matches_inverse() {
        let mut s = set(Method::Qtp, DerivativeScheme::Direct, &bump);
        s.map_markers(|x| Point::new(x[0] + x[0] * x[0], x[1]));
        s.update_direct().unwrap();
        for k in (0..s.len()).filter(|&k| s.active[k] && !s.frozen[k]) {
            let a = s.origin[k][0];
            let g = 1.0 + 2.0 * a;
            // x1 = (-1 + sqrt(1 + 4 y1)) / 2, differentiated at y1 = a + a^2
            assert!((s.deform[k] - Mat::new(1.0 / g, 0.0, 0.0, 1.0)).amax() < 1e-10);
            let q = s.hess[k];
            assert!((q[0][(0, 0)] + 2.0 / g.powi(3)).abs() < 1e-7);
            assert!(q[0][(0, 1)].abs() < 1e-9 && q[0][(1, 1)].abs() < 1e-9);
            assert!(q[1].amax() < 1e-9);
        }
    }

    #[test]
    fn singular_markers_are_reported() {
        let mut s = set(Method::Ltp, DerivativeScheme::Direct, &bump);
        s.map_markers(|x| Point::new(x[0] + x[1], x[0] + x[1]));
        let n = s.update_direct().unwrap();
        assert_eq!(n, s.active.iter().zip(&s.frozen).filter(|(a, f)| **a && !**f).count());
    }

    #[test]
    fn incremental_affine_step() {
        let a = Mat::new(2.0, 0.0, 0.0, 0.5);
        let flow = StepMap(move |_: f64, _: f64, x: &Point| a * x + Point::new(0.1, 0.0));
        let mut s = set(Method::Qtp, DerivativeScheme::Incremental, &bump);
        s.update_incremental(&flow, 0.0, 1.0).unwrap();
        s.push(&flow, 0.0, 1.0);
        for k in (0..s.len()).filter(|&k| s.active[k] && !s.frozen[k]) {
            assert!((s.deform[k] - Mat::new(0.5, 0.0, 0.0, 2.0)).amax() < 1e-12);
            assert!(s.hess[k].iter().all(|q| q.amax() < 1e-8));
            assert_eq!(s.support[k], 3.0);
        }
    }

    #[test]
    fn incremental_zero_field() {
        let zero = Rk4(|_: f64, _: &Point| Point::zeros());
        let mut s = set(Method::Qtp, DerivativeScheme::Incremental, &bump);
        s.update_incremental(&zero, 0.0, 0.5).unwrap();
        assert!(s.deform.iter().all(|d| *d == Mat::identity()));
        assert!(s.hess.iter().all(|q| q.iter().all(|m| *m == Mat::zeros())));
        assert!(s.backward_flow_indicator(1).is_err());
    }

    #[test]
    fn indicator_vanishes_at_start() {
        let s = set(Method::Qtp, DerivativeScheme::Direct, &bump);
        assert_eq!(s.backward_flow_indicator(1).unwrap(), 0.0);
        assert_eq!(s.backward_flow_indicator(2).unwrap(), 0.0);
    }

    #[test]
    fn composed_quadratic_step_matches_direct() {
        // two steps of a quadratic map, composed incrementally vs from markers
        let c = 0.7;
        let step = StepMap(move |_: f64, _: f64, x: &Point| Point::new(x[0] + c * x[1] * x[1], x[1]));
        let mut inc = set(Method::Qtp, DerivativeScheme::Incremental, &bump);
        let mut dir = set(Method::Qtp, DerivativeScheme::Direct, &bump);
        for n in 0..2 {
            inc.update_incremental(&step, n as f64, 1.0).unwrap();
            inc.push(&step, n as f64, 1.0);
            dir.push(&step, n as f64, 1.0);
        }
        dir.update_direct().unwrap();
        for k in (0..inc.len()).filter(|&k| inc.active[k] && !inc.frozen[k]) {
            assert!((inc.deform[k] - dir.deform[k]).amax() < 1e-9);
            for i in 0..DIM {
                assert!((inc.hess[k][i] - dir.hess[k][i]).amax() < 1e-8);
            }
        }
    }
}
