//! Experiment harness: time loop, error measurement against reference
//! solutions, convergence and remapping-period sweeps, CSV output.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;
use std::time::Instant;

pub use crate::config::RunConfig;
use crate::density::{eval_density_grid, particle_mass};
use crate::flows::{Rk4, TestCase};
use crate::grid::EvalGrid;
use crate::particles::{DerivativeScheme, Method, ParticleSet};
use crate::remap::{indicators, remap, Indicators, RemapCache, RemapEvent, RemapPolicy};
use crate::{Error, FlowField, Point, Result};

/// One row of a run's time series.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct StepRow {
    pub step: usize,
    pub t: f64,
    /// Relative max-norm error on the evaluation lattice, when sampled and a
    /// reference exists.
    pub error: Option<f64>,
    /// Lattice quadrature of the density, when sampled.
    pub mass: Option<f64>,
    /// Sum of active particle weights.
    pub weight_sum: f64,
    pub transport_indicator: Option<f64>,
    pub remap_indicator: Option<f64>,
    pub remapped: RemapEvent,
    /// Active transported particles (frame excluded).
    pub active: usize,
    /// Extremes of `det D` over active transported particles.
    pub det_min: Option<f64>,
    pub det_max: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub config: RunConfig,
    pub rows: Vec<StepRow>,
    pub final_error: f64,
    pub avg_active: f64,
    /// Remaps after initialization, forced ones included.
    pub remap_count: usize,
    pub forced_count: usize,
    pub wall_time: f64,
}

impl RunReport {
    /// Remapping period averaged over the run, `t_end / (R + 1)`.
    pub fn avg_period(&self) -> f64 {
        self.config.end_time() / (self.remap_count + 1) as f64
    }

    pub fn det_range(&self) -> Option<(f64, f64)> {
        let lo = self.rows.iter().filter_map(|r| r.det_min).reduce(f64::min)?;
        let hi = self.rows.iter().filter_map(|r| r.det_max).reduce(f64::max)?;
        Some((lo, hi))
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(
            "step,t,error,mass,weight_sum,transport_indicator,remap_indicator,remapped,active,det_min,det_max\n",
        );
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{},{},{}",
                r.step,
                real(r.t),
                opt(r.error),
                opt(r.mass),
                real(r.weight_sum),
                opt(r.transport_indicator),
                opt(r.remap_indicator),
                r.remapped.code(),
                r.active,
                opt(r.det_min),
                opt(r.det_max)
            );
        }
        s
    }
}

/// Reals with 17 significant digits.
pub fn real(v: f64) -> String {
    format!("{v:.16e}")
}

fn opt(v: Option<f64>) -> String {
    v.map(real).unwrap_or_default()
}

/// Writes `contents` to `path` through a temporary file and a rename.
pub fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let tmp = path.with_extension("tmp~");
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(contents.as_bytes())?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// A running simulation. Each time step is split into the transport part
/// ([`step_transport`](Self::step_transport)) and the remap decision
/// ([`step_finish`](Self::step_finish)), so that the state just before a
/// remap can be inspected.
pub struct Simulation {
    pub config: RunConfig,
    pub case: TestCase,
    pub flow: Rk4<FlowField>,
    pub set: ParticleSet,
    pub cache: Option<RemapCache>,
    pub step: usize,
    pub n_steps: usize,
    eval_points: Vec<Point>,
    eval_grid: EvalGrid,
    reference: Option<Vec<f64>>,
    reference_step: usize,
    rows: Vec<StepRow>,
    remap_count: usize,
    forced_count: usize,
    started: Instant,
}

impl Simulation {
    pub fn new(config: RunConfig) -> Result<Self> {
        config.validate()?;
        let case = config.test_case();
        let kernel = config.shape_kernel()?;
        let data = case.data;
        let set =
            ParticleSet::initialize(&|x: &Point| data.eval(x), &kernel, config.grid()?, config.particle_params())?;
        let cache = matches!(config.policy, RemapPolicy::Dynamic(_)).then(|| RemapCache::sample(&set));
        let eval_grid = EvalGrid::new(config.eval_grid)?;
        let mut sim = Self {
            n_steps: config.n_steps(),
            flow: Rk4(case.field),
            eval_points: eval_grid.points(),
            eval_grid,
            reference: None,
            reference_step: usize::MAX,
            config,
            case,
            set,
            cache,
            step: 0,
            rows: Vec::new(),
            remap_count: 0,
            forced_count: 0,
            started: Instant::now(),
        };
        let row = sim.make_row(RemapEvent::None, None)?;
        sim.rows.push(row);
        Ok(sim)
    }

    pub fn time(&self) -> f64 {
        self.step as f64 * self.case.dt
    }

    pub fn is_done(&self) -> bool {
        self.step >= self.n_steps
    }

    fn mid_step(&self) -> usize {
        (0.5 * self.case.final_time / self.case.dt).round() as usize
    }

    /// Derivative updates and push for one step.
    pub fn step_transport(&mut self) -> Result<()> {
        if self.is_done() {
            return Err(Error::config("simulation already reached its end time"));
        }
        let (t, dt) = (self.time(), self.case.dt);
        let transformed = self.set.method.is_transformed();
        if transformed && self.set.scheme == DerivativeScheme::Incremental {
            self.set.update_incremental(&self.flow, t, dt)?;
        }
        self.set.push(&self.flow, t, dt);
        if transformed && self.set.scheme == DerivativeScheme::Direct {
            self.set.update_direct()?;
        }
        self.step += 1;
        Ok(())
    }

    /// Remap decision and execution, then the time-series row of the step.
    pub fn step_finish(&mut self) -> Result<RemapEvent> {
        let n = self.step;
        let last = n >= self.n_steps;
        let remaps = !matches!(self.set.method, Method::Tsp { .. });
        let ind = match (&self.config.policy, &self.cache) {
            (RemapPolicy::Dynamic(_), Some(cache)) => Some(indicators(&self.set, cache)?),
            _ => None,
        };
        let event = if remaps && self.set.degenerate > 0 {
            RemapEvent::Forced
        } else if remaps
            && !last
            && (self.config.policy.should_remap(n, ind) || (self.config.remaps_mid_run() && n == self.mid_step()))
        {
            RemapEvent::Scheduled
        } else {
            RemapEvent::None
        };
        if event != RemapEvent::None {
            let cache = remap(&mut self.set)?;
            if self.cache.is_some() {
                self.cache = Some(cache);
            }
            self.remap_count += 1;
            if event == RemapEvent::Forced {
                self.forced_count += 1;
            }
        }
        let row = self.make_row(event, ind)?;
        self.rows.push(row);
        Ok(event)
    }

    pub fn advance(&mut self) -> Result<RemapEvent> {
        self.step_transport()?;
        self.step_finish()
    }

    fn samples_density(&self) -> bool {
        let n = self.step;
        if n == 0 || n >= self.n_steps {
            return true;
        }
        match self.config.log_every {
            Some(0) => false,
            Some(k) => n.is_multiple_of(k),
            None => !self.case.field.is_reversible(),
        }
    }

    /// Samples the current density on the evaluation lattice.
    pub fn density_samples(&self) -> Result<Vec<f64>> {
        let f = eval_density_grid(&self.set, &self.eval_points);
        if let Some(i) = f.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!(
                "non-finite density {} at ({}, {}) at step {}",
                f[i], self.eval_points[i][0], self.eval_points[i][1], self.step
            )));
        }
        Ok(f)
    }

    /// Relative max-norm error of `f` against the exact solution at the
    /// current time, if one exists.
    pub fn relative_error(&mut self, f: &[f64]) -> Result<Option<f64>> {
        let t = self.time();
        if !self.case.has_reference(t) {
            return Ok(None);
        }
        if self.reference_step != self.step {
            let case = self.case;
            let r: Result<Vec<f64>> = self.eval_points.iter().map(|x| case.reference(t, x)).collect();
            self.reference = Some(r?);
            self.reference_step = self.step;
        }
        let r = self.reference.as_ref().expect("reference computed above");
        let scale = r.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let diff = f.iter().zip(r).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        Ok(Some(if scale > 0.0 { diff / scale } else { diff }))
    }

    fn det_range(&self) -> (Option<f64>, Option<f64>) {
        if self.set.deform.is_empty() {
            return (None, None);
        }
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for k in (0..self.set.len()).filter(|&k| self.set.active[k] && !self.set.frozen[k]) {
            let d = self.set.deform[k].determinant();
            lo = lo.min(d);
            hi = hi.max(d);
        }
        if lo > hi {
            (None, None)
        } else {
            (Some(lo), Some(hi))
        }
    }

    fn make_row(&mut self, event: RemapEvent, ind: Option<Indicators>) -> Result<StepRow> {
        let (error, mass) = if self.samples_density() {
            let f = self.density_samples()?;
            (self.relative_error(&f)?, Some(self.eval_grid.integrate(&f)))
        } else {
            (None, None)
        };
        let (det_min, det_max) = self.det_range();
        Ok(StepRow {
            step: self.step,
            t: self.time(),
            error,
            mass,
            weight_sum: particle_mass(&self.set),
            transport_indicator: ind.map(|i| i.transport),
            remap_indicator: ind.map(|i| i.remap),
            remapped: event,
            active: (0..self.set.len()).filter(|&k| self.set.active[k] && !self.set.frozen[k]).count(),
            det_min,
            det_max,
        })
    }

    pub fn rows(&self) -> &[StepRow] {
        &self.rows
    }

    pub fn finish(self) -> Result<RunReport> {
        let last = self.rows.last().expect("initial row always present");
        let final_error = last.error.ok_or_else(|| {
            Error::config(format!("no reference solution for {} at t = {}", self.case.id.id(), last.t))
        })?;
        let avg_active = self.rows.iter().map(|r| r.active as f64).sum::<f64>() / self.rows.len() as f64;
        Ok(RunReport {
            final_error,
            avg_active,
            remap_count: self.remap_count,
            forced_count: self.forced_count,
            wall_time: self.started.elapsed().as_secs_f64(),
            rows: self.rows,
            config: self.config,
        })
    }
}

/// Runs a configuration to its end time.
pub fn run(config: &RunConfig) -> Result<RunReport> {
    let mut sim = Simulation::new(config.clone())?;
    while !sim.is_done() {
        sim.advance()?;
    }
    sim.finish()
}

/// Convergence-study row.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceRow {
    pub method: String,
    pub kernel: String,
    pub h: f64,
    pub avg_active: f64,
    /// Remapping period in time units (`None` without periodic remapping).
    pub remap_period: Option<f64>,
    pub final_error: f64,
    /// `log2` error ratio against the previous (coarser) row.
    pub order: Option<f64>,
}

/// Final errors for each mesh size in `hs` (sorted coarse to fine).
pub fn converge(template: &RunConfig, hs: &[f64]) -> Result<Vec<ConvergenceRow>> {
    if hs.len() < 2 {
        return Err(Error::config("a convergence study needs at least two mesh sizes"));
    }
    let mut hs = hs.to_vec();
    hs.sort_by(|a, b| b.total_cmp(a));
    let mut rows: Vec<ConvergenceRow> = Vec::new();
    for h in hs {
        let cfg = RunConfig { h, log_every: Some(0), ..template.clone() };
        let rep = run(&cfg)?;
        let order = rows.last().map(|p| (p.final_error / rep.final_error).log2() / (p.h / h).log2());
        rows.push(ConvergenceRow {
            method: cfg.method.id().into(),
            kernel: cfg.kernel.id(),
            h,
            avg_active: rep.avg_active,
            remap_period: match cfg.policy {
                RemapPolicy::Static(n) => Some(n as f64 * cfg.test_case().dt),
                _ => None,
            },
            final_error: rep.final_error,
            order,
        });
    }
    Ok(rows)
}

/// Least-squares slope of `log(error)` against `log(h)`.
pub fn fitted_order(rows: &[ConvergenceRow]) -> f64 {
    log_log_slope(&rows.iter().map(|r| (r.h, r.final_error)).collect::<Vec<_>>())
}

/// Least-squares slope of `log y` against `log x`.
pub fn log_log_slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let (xs, ys): (Vec<f64>, Vec<f64>) = points.iter().map(|(x, y)| (x.ln(), y.ln())).unzip();
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

pub fn convergence_csv(rows: &[ConvergenceRow]) -> String {
    let mut s = String::from("method,kernel,h,avg_active,remap_period,final_error,order\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{}",
            r.method,
            r.kernel,
            real(r.h),
            real(r.avg_active),
            opt(r.remap_period),
            real(r.final_error),
            opt(r.order)
        );
    }
    s
}

/// Row of a remapping-period or dynamic-criterion sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    /// `static` or `dynamic`.
    pub mode: &'static str,
    /// Period in steps (static) or threshold `C_remap` (dynamic).
    pub parameter: f64,
    /// Average remapping period in time units.
    pub avg_period: f64,
    pub remap_count: usize,
    pub final_error: f64,
    pub avg_active: f64,
}

fn sweep_row(mode: &'static str, parameter: f64, rep: &RunReport) -> SweepRow {
    SweepRow {
        mode,
        parameter,
        avg_period: rep.avg_period(),
        remap_count: rep.remap_count,
        final_error: rep.final_error,
        avg_active: rep.avg_active,
    }
}

/// Final errors for static remapping every `n` steps, `n` in `periods`.
pub fn sweep_remap(template: &RunConfig, periods: &[usize]) -> Result<Vec<SweepRow>> {
    if let Method::Tsp { .. } = template.method {
        return Err(Error::config("remapping sweeps need fsl, ltp or qtp"));
    }
    periods
        .iter()
        .map(|&n| {
            let cfg = RunConfig { policy: RemapPolicy::Static(n), log_every: Some(0), ..template.clone() };
            cfg.validate()?;
            Ok(sweep_row("static", n as f64, &run(&cfg)?))
        })
        .collect()
}

/// Static rows for `periods` followed by dynamic rows for `thresholds`.
pub fn dynamic_vs_static(template: &RunConfig, thresholds: &[f64], periods: &[usize]) -> Result<Vec<SweepRow>> {
    if template.scheme != DerivativeScheme::Direct {
        return Err(Error::config("dynamic remapping requires the direct scheme"));
    }
    let mut rows = sweep_remap(template, periods)?;
    for &c in thresholds {
        let cfg = RunConfig { policy: RemapPolicy::Dynamic(c), log_every: Some(0), ..template.clone() };
        rows.push(sweep_row("dynamic", c, &run(&cfg)?));
    }
    Ok(rows)
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut s = String::from("mode,parameter,avg_period,remap_count,final_error,avg_active\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            r.mode,
            real(r.parameter),
            real(r.avg_period),
            r.remap_count,
            real(r.final_error),
            real(r.avg_active)
        );
    }
    s
}

/// `x,y,f` rows for samples on an evaluation lattice.
pub fn field_csv(points: &[Point], values: &[f64]) -> String {
    let mut s = String::from("x,y,f\n");
    for (x, v) in points.iter().zip(values) {
        let _ = writeln!(s, "{},{},{}", real(x[0]), real(x[1]), real(*v));
    }
    s
}

/// Velocity and exact-solution samples of a test case at time `t`
/// (`f` is left blank where no reference exists).
pub fn flow_fields_csv(case: &TestCase, t: f64, grid: &EvalGrid) -> String {
    use crate::flows::Velocity;
    let mut s = String::from("x,y,u1,u2,f\n");
    for x in grid.points() {
        let u = case.field.velocity(t, &x);
        let f = case.reference(t, &x).ok();
        let _ = writeln!(s, "{},{},{},{},{}", real(x[0]), real(x[1]), real(u[0]), real(u[1]), opt(f));
    }
    s
}

/// Particle state dump: `k1,k2,w,x1,x2,D11,D12,D21,D22,active`.
pub fn particles_csv(set: &ParticleSet) -> String {
    let mut s = String::from("k1,k2,w,x1,x2,D11,D12,D21,D22,active\n");
    for k in 0..set.len() {
        let d = set.deformation(k);
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{}",
            set.index[k][0],
            set.index[k][1],
            real(set.weight[k]),
            real(set.center[k][0]),
            real(set.center[k][1]),
            real(d[(0, 0)]),
            real(d[(0, 1)]),
            real(d[(1, 0)]),
            real(d[(1, 1)]),
            u8::from(set.active[k])
        );
    }
    s
}
