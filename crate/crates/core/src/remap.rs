//! Remapping of a particle set onto its cartesian grid, and the error
//! indicators driving the dynamic remapping criterion.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;

use crate::density::DensityEvaluator;
use crate::grid::{GridField, Index};
use crate::particles::{DerivativeScheme, Method, ParticleSet};
use crate::{Error, Point, Result, DIM};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RemapPolicy {
    Never,
    /// Remap every `N_r` steps.
    Static(usize),
    /// Remap when `C_remap * E_transport >= E_remap`.
    Dynamic(f64),
}

impl RemapPolicy {
    /// Default dynamic threshold for a method: 1 for LTP, 5 for QTP.
    pub fn default_dynamic(method: Method) -> Self {
        match method {
            Method::Qtp => Self::Dynamic(5.0),
            _ => Self::Dynamic(1.0),
        }
    }

    /// Periodic criterion or dynamic inequality for step `n`.
    ///
    /// `indicators` holds `(transport, remap)` estimates and is only read by
    /// the dynamic policy; a zero transport indicator never triggers a remap.
    pub fn should_remap(&self, n: usize, indicators: Option<Indicators>) -> bool {
        match *self {
            Self::Never => false,
            Self::Static(nr) => n > 0 && n.is_multiple_of(nr),
            Self::Dynamic(c) => indicators.is_some_and(|ind| ind.transport > 0.0 && c * ind.transport >= ind.remap),
        }
    }
}

impl FromStr for RemapPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::config(format!("invalid remap policy `{s}` (expected never, static:N or dynamic:C)"));
        match s.split_once(':') {
            None if s == "never" => Ok(Self::Never),
            Some(("static", n)) => match n.trim().parse::<usize>() {
                Ok(n) if n > 0 => Ok(Self::Static(n)),
                _ => Err(bad()),
            },
            Some(("dynamic", c)) => match c.trim().parse::<f64>() {
                Ok(c) if c > 0.0 && c.is_finite() => Ok(Self::Dynamic(c)),
                _ => Err(bad()),
            },
            _ => Err(bad()),
        }
    }
}

impl fmt::Display for RemapPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Never => write!(f, "never"),
            Self::Static(n) => write!(f, "static:{n}"),
            Self::Dynamic(c) => write!(f, "dynamic:{c}"),
        }
    }
}

/// Remap event recorded in time series.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RemapEvent {
    #[default]
    None,
    /// Triggered by the policy (periodic, dynamic or the mid-run remap).
    Scheduled,
    /// Forced by a singular local Jacobian.
    Forced,
}

impl RemapEvent {
    pub fn code(&self) -> u8 {
        match self {
            Self::None => 0,
            Self::Scheduled => 1,
            Self::Forced => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Indicators {
    pub transport: f64,
    pub remap: f64,
}

/// Density data kept from the last remapping (or initialization).
#[derive(Debug, Clone)]
pub struct RemapCache {
    /// `f_h` sampled on the remapped nodes and their stencil margin.
    pub samples: GridField,
    /// `max |f_h|` over the remapped nodes.
    pub max_abs: f64,
    /// Finite-difference gradients at the remapped nodes.
    pub gradient: [GridField; DIM],
}

impl RemapCache {
    /// Samples the current density of `set` on its grid.
    pub fn sample(set: &ParticleSet) -> Self {
        let grid = &set.grid;
        let m = set.kernel.stencil_radius() as i64;
        let (lo, hi) = ([grid.lo - m; DIM], [grid.hi + m; DIM]);
        let ev = DensityEvaluator::new(set);
        let nodes: Vec<Index> = GridField::zeros(lo, hi).indices().collect();
        let values: Vec<f64> = nodes.par_iter().map(|&k| ev.eval(&grid.node(k))).collect();
        let samples = GridField::from_values(lo, hi, values);
        Self::from_samples(samples, grid.h, [grid.lo; DIM], [grid.hi; DIM])
    }

    /// Builds the cache from grid samples, with gradients on `[lo, hi]` by
    /// central differences (one-sided where a neighbor is not sampled).
    pub fn from_samples(samples: GridField, h: f64, lo: Index, hi: Index) -> Self {
        let mut max_abs = 0.0f64;
        let mut gradient: [GridField; DIM] = std::array::from_fn(|_| GridField::zeros(lo, hi));
        for k in GridField::zeros(lo, hi).indices() {
            max_abs = max_abs.max(samples.get(k).abs());
            for (j, g) in gradient.iter_mut().enumerate() {
                let mut kp = k;
                kp[j] += 1;
                let mut km = k;
                km[j] -= 1;
                let v = match (samples.contains(kp), samples.contains(km)) {
                    (true, true) => (samples.get(kp) - samples.get(km)) / (2.0 * h),
                    (true, false) => (samples.get(kp) - samples.get(k)) / h,
                    (false, true) => (samples.get(k) - samples.get(km)) / h,
                    (false, false) => 0.0,
                };
                g.set(k, v);
            }
        }
        Self { samples, max_abs, gradient }
    }

    pub fn grad(&self, k: Index) -> Point {
        Point::from_fn(|j, _| self.gradient[j].get(k))
    }
}

/// Re-expresses the density of `set` as a fresh cartesian particle set:
/// samples `f_h` on the grid, recomputes weights with `A_h`, and resets
/// positions, markers and derivatives. Returns the refreshed cache.
pub fn remap(set: &mut ParticleSet) -> Result<RemapCache> {
    if let Method::Tsp { .. } = set.method {
        return Err(Error::config("smoothed particles are never remapped"));
    }
    let cache = RemapCache::sample(set);
    let g = &set.grid;
    let weights = set.kernel.quasi_weights(g.h, &cache.samples, [g.lo; DIM], [g.hi; DIM])?;
    set.reset_to_grid(&weights);
    Ok(cache)
}

/// `(1 + e1/h)^d (er/h) max|f|`.
pub fn transport_indicator_value(e1: f64, er: f64, h: f64, max_abs: f64) -> f64 {
    (1.0 + e1 / h).powi(DIM as i32) * (er / h) * max_abs
}

/// Transport-error indicator of a direct-scheme LTP or QTP set, combining the
/// order-1 and order-`r` backward-flow indicators (`r` = 1 for LTP, 2 for QTP).
pub fn transport_error_indicator(set: &ParticleSet, cache: &RemapCache) -> Result<f64> {
    if set.scheme != DerivativeScheme::Direct || !set.method.is_transformed() {
        return Err(Error::config("the transport-error indicator needs a direct-scheme LTP or QTP set"));
    }
    let e1 = set.backward_flow_indicator(1)?;
    let er = if set.method == Method::Qtp { set.backward_flow_indicator(2)? } else { e1 };
    Ok(transport_indicator_value(e1, er, set.h(), cache.max_abs))
}

/// Remapping-error indicator `h sum_j sup_k |sum_l d_l f(x0_k) D_lj|`, the
/// supremum running over active transported particles.
pub fn remap_error_indicator(set: &ParticleSet, cache: &RemapCache) -> f64 {
    let sups = (0..set.len())
        .into_par_iter()
        .filter(|&k| set.active[k] && !set.frozen[k])
        .map(|k| {
            let row = cache.grad(set.index[k]).transpose() * set.deformation(k);
            Point::from_fn(|j, _| row[j].abs())
        })
        .reduce(Point::zeros, |a, b| a.sup(&b));
    set.h() * sups.sum()
}

pub fn indicators(set: &ParticleSet, cache: &RemapCache) -> Result<Indicators> {
    Ok(Indicators { transport: transport_error_indicator(set, cache)?, remap: remap_error_indicator(set, cache) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flows::Rk4;
    use crate::grid::GridSpec;
    use crate::kernels::ShapeKernel;
    use crate::particles::ParticleParams;
    use crate::Mat;
    use approx::assert_abs_diff_eq;

    fn make(method: Method, f0: &(dyn Fn(&Point) -> f64 + Sync)) -> ParticleSet {
        let kernel = ShapeKernel::from_id("b3").unwrap();
        let grid = GridSpec::unit(1.0 / 16.0, kernel.frame_width()).unwrap();
        ParticleSet::initialize(f0, &kernel, grid, ParticleParams::new(method, DerivativeScheme::Direct)).unwrap()
    }

    fn bump(x: &Point) -> f64 {
        let r2 = (x - Point::new(0.5, 0.5)).norm_squared();
        if r2 < 0.09 {
            (1.0 - r2 / 0.09).powi(4)
        } else {
            0.0
        }
    }

    #[test]
    fn policy_parsing_and_static_rule() {
        assert_eq!("never".parse::<RemapPolicy>().unwrap(), RemapPolicy::Never);
        assert_eq!("static:10".parse::<RemapPolicy>().unwrap(), RemapPolicy::Static(10));
        assert_eq!("dynamic:2.5".parse::<RemapPolicy>().unwrap(), RemapPolicy::Dynamic(2.5));
        for bad in ["static:0", "static:x", "dynamic:-1", "sometimes"] {
            assert!(bad.parse::<RemapPolicy>().is_err(), "{bad}");
        }
        let p = RemapPolicy::Static(10);
        assert!(p.should_remap(30, None));
        assert!(!p.should_remap(31, None));
        assert!(!RemapPolicy::Never.should_remap(10, None));
        assert_eq!(RemapPolicy::default_dynamic(Method::Ltp), RemapPolicy::Dynamic(1.0));
        assert_eq!(RemapPolicy::default_dynamic(Method::Qtp), RemapPolicy::Dynamic(5.0));
    }

    #[test]
    fn dynamic_rule() {
        let p = RemapPolicy::Dynamic(2.0);
        assert!(!p.should_remap(1, Some(Indicators { transport: 0.0, remap: 0.3 })));
        assert!(p.should_remap(1, Some(Indicators { transport: 0.2, remap: 0.3 })));
        assert!(!p.should_remap(1, Some(Indicators { transport: 0.1, remap: 0.3 })));
        assert!(!p.should_remap(1, None));
    }

    #[test]
    fn transport_indicator_formula() {
        let h = 0.01;
        assert_abs_diff_eq!(transport_indicator_value(h, h, h, 1.0), 4.0, epsilon = 1e-14);
        let s = make(Method::Qtp, &bump);
        let cache = RemapCache::sample(&s);
        assert_eq!(transport_error_indicator(&s, &cache).unwrap(), 0.0);
    }

    #[test]
    fn remap_indicator_examples() {
        let mut s = make(Method::Ltp, &|_| 1.0);
        let cache = RemapCache::sample(&s);
        assert!(remap_error_indicator(&s, &cache) < 1e-9);

        let (lo, hi) = ([s.grid.lo; 2], [s.grid.hi; 2]);
        let ramp = GridField::from_fn([lo[0] - 3, lo[1] - 3], [hi[0] + 3, hi[1] + 3], |k| k[0] as f64 * s.h());
        let cache = RemapCache::from_samples(ramp, s.h(), lo, hi);
        assert_abs_diff_eq!(cache.grad([4, 4])[0], 1.0, epsilon = 1e-12);
        for d in s.deform.iter_mut() {
            *d = Mat::new(0.0, 1.0, -1.0, 0.0);
        }
        assert_abs_diff_eq!(remap_error_indicator(&s, &cache), s.h(), epsilon = 1e-12);
        for d in s.deform.iter_mut() {
            *d = Mat::identity();
        }
        assert_abs_diff_eq!(remap_error_indicator(&s, &cache), s.h(), epsilon = 1e-12);
    }

    #[test]
    fn one_sided_gradients_at_edges() {
        let f = GridField::from_fn([0, 0], [4, 4], |k| (k[0] * k[0]) as f64);
        let c = RemapCache::from_samples(f, 1.0, [0, 0], [4, 4]);
        assert_eq!(c.grad([0, 2])[0], 1.0);
        assert_eq!(c.grad([4, 2])[0], 7.0);
        assert_eq!(c.grad([2, 2])[0], 4.0);
        assert_eq!(c.max_abs, 16.0);
    }

    #[test]
    fn remap_of_zero_field_deactivates_everything() {
        let mut s = make(Method::Fsl, &|_| 0.0);
        remap(&mut s).unwrap();
        assert_eq!(s.active_count(), 0);
    }

    #[test]
    fn remap_reproduces_cubic_weights() {
        let f = |x: &Point| x[0] * x[0] * x[0] - 2.0 * x[0] * x[1] * x[1] + 0.5;
        let mut s = make(Method::Qtp, &f);
        let before = s.weight.clone();
        remap(&mut s).unwrap();
        for k in (0..s.len()).filter(|&k| !s.frozen[k]) {
            assert!((s.weight[k] - before[k]).abs() <= 1e-10 * before[k].abs().max(s.h() * s.h()));
        }
    }

    #[test]
    fn remap_resets_particles() {
        let mut s = make(Method::Qtp, &bump);
        let field = crate::FlowField::nonlinear_rotation();
        for n in 0..4 {
            s.push(&Rk4(field), n as f64 * 0.5, 0.5);
        }
        s.update_direct().unwrap();
        assert!(s.backward_flow_indicator(1).unwrap() > 0.0);
        remap(&mut s).unwrap();
        assert_eq!(s.center, s.origin);
        assert_eq!(s.backward_flow_indicator(2).unwrap(), 0.0);
        assert!(s.deform.iter().all(|d| *d == Mat::identity()));
        let mut t = make(Method::Tsp { q: 1.0 }, &bump);
        assert!(remap(&mut t).is_err());
    }

    #[test]
    fn translation_never_triggers_dynamic_remap() {
        let mut s = make(Method::Ltp, &bump);
        let cache = RemapCache::sample(&s);
        let p = RemapPolicy::Dynamic(1.0);
        let u = Rk4(|_: f64, _: &Point| Point::new(0.25, 0.0));
        for n in 1..=5 {
            s.push(&u, 0.0, 0.1);
            s.update_direct().unwrap();
            let ind = indicators(&s, &cache).unwrap();
            assert!(!p.should_remap(n, Some(ind)), "{ind:?}");
        }
    }
}
