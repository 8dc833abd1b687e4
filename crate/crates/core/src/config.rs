//! Run configuration: flat `key = value` files with `#` comments, where
//! every key can also be overridden individually (e.g. from command-line
//! flags).

use std::path::Path;

use crate::flows::{CaseId, TestCase};
use crate::grid::{EvalGrid, GridSpec};
use crate::kernels::{KernelKind, ShapeKernel};
use crate::particles::{DerivativeScheme, Method, ParticleParams};
use crate::remap::RemapPolicy;
use crate::{Error, Result};

/// Parses `key = value` lines. Blank lines and `#` comments are ignored;
/// keys are normalized so that `eval-grid` and `eval_grid` coincide.
pub fn parse_pairs(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (no, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::config(format!("line {}: expected `key = value`, got `{line}`", no + 1)))?;
        out.push((normalize_key(k), v.trim().to_string()));
    }
    Ok(out)
}

fn normalize_key(k: &str) -> String {
    k.trim().to_ascii_lowercase().replace('-', "_")
}

/// Complete description of one simulation run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub case: CaseId,
    pub method: Method,
    pub kernel: KernelKind,
    pub scheme: DerivativeScheme,
    pub h: f64,
    /// Time step; `None` uses the benchmark default.
    pub dt: Option<f64>,
    /// Stop time; `None` runs to the benchmark's final time.
    pub t_end: Option<f64>,
    pub policy: RemapPolicy,
    /// Shape radius exponent of smoothed particles, `eps = h^q`.
    pub q: f64,
    pub h_prime: Option<f64>,
    pub w_tol: f64,
    pub support_growth: f64,
    pub eval_grid: usize,
    /// Remap at `T/2` for reversible fields.
    pub mid_remap: bool,
    /// Density sampling period in steps for error/mass rows (`0`: only the
    /// initial and final states; `None`: every step when a reference exists
    /// at all times, otherwise initial and final only).
    pub log_every: Option<usize>,
    /// Reserved; every algorithm is deterministic.
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            case: CaseId::Nlr,
            method: Method::Ltp,
            kernel: KernelKind::BSpline(3),
            scheme: DerivativeScheme::Direct,
            h: 1.0 / 64.0,
            dt: None,
            t_end: None,
            policy: RemapPolicy::Never,
            q: 0.5,
            h_prime: None,
            w_tol: 1e-9,
            support_growth: 0.5,
            eval_grid: EvalGrid::default().m,
            mid_remap: true,
            log_every: None,
            seed: 0,
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| Error::config(format!("invalid value `{v}` for `{key}`")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "1" | "true" | "yes" | "on" => Ok(true),
        "0" | "false" | "no" | "off" => Ok(false),
        _ => Err(Error::config(format!("invalid boolean `{v}` for `{key}`"))),
    }
}

/// Parses a mesh size given either as a number or as `2^-L`.
pub fn parse_h(v: &str) -> Result<f64> {
    if let Some(e) = v.strip_prefix("2^") {
        let e: i32 = parse_num("h", e)?;
        return Ok(2f64.powi(e));
    }
    if let Some((a, b)) = v.split_once('/') {
        let a: f64 = parse_num("h", a.trim())?;
        let b: f64 = parse_num("h", b.trim())?;
        return Ok(a / b);
    }
    parse_num("h", v)
}

impl RunConfig {
    /// Keys understood by [`set`](Self::set).
    pub const KEYS: &'static [&'static str] = &[
        "case",
        "method",
        "kernel",
        "scheme",
        "h",
        "dt",
        "t_end",
        "remap",
        "q",
        "hprime",
        "w_tol",
        "support_growth",
        "eval_grid",
        "mid_remap",
        "log_every",
        "seed",
    ];

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = normalize_key(key);
        let v = value.trim();
        match key.as_str() {
            "case" => self.case = CaseId::from_id(v)?,
            "method" => self.method = Method::from_id(v, self.q)?,
            "kernel" => self.kernel = KernelKind::from_id(v)?,
            "scheme" => self.scheme = DerivativeScheme::from_id(v)?,
            "h" => self.h = parse_h(v)?,
            "dt" => self.dt = Some(parse_num(&key, v)?),
            "t_end" => self.t_end = Some(parse_num(&key, v)?),
            "remap" => self.policy = v.parse()?,
            "q" => {
                self.q = parse_num(&key, v)?;
                if let Method::Tsp { .. } = self.method {
                    self.method = Method::Tsp { q: self.q };
                }
            }
            "hprime" => self.h_prime = Some(parse_h(v)?),
            "w_tol" => self.w_tol = parse_num(&key, v)?,
            "support_growth" => self.support_growth = parse_num(&key, v)?,
            "eval_grid" => self.eval_grid = parse_num(&key, v)?,
            "mid_remap" => self.mid_remap = parse_bool(&key, v)?,
            "log_every" => self.log_every = Some(parse_num(&key, v)?),
            "seed" => self.seed = parse_num(&key, v)?,
            _ => return Err(Error::config(format!("unknown configuration key `{key}`"))),
        }
        Ok(())
    }

    pub fn apply(&mut self, pairs: &[(String, String)]) -> Result<()> {
        // the TSP exponent must be known before the method is built
        for (k, v) in pairs.iter().filter(|(k, _)| k == "q") {
            self.set(k, v)?;
        }
        for (k, v) in pairs.iter().filter(|(k, _)| k != "q") {
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply(&parse_pairs(&std::fs::read_to_string(path)?)?)?;
        Ok(cfg)
    }

    pub fn test_case(&self) -> TestCase {
        let mut case = TestCase::new(self.case);
        if let Some(dt) = self.dt {
            case.dt = dt;
        }
        case
    }

    pub fn end_time(&self) -> f64 {
        self.t_end.unwrap_or_else(|| self.test_case().final_time)
    }

    pub fn n_steps(&self) -> usize {
        (self.end_time() / self.test_case().dt).round() as usize
    }

    pub fn shape_kernel(&self) -> Result<ShapeKernel> {
        ShapeKernel::new(self.kernel)
    }

    pub fn grid(&self) -> Result<GridSpec> {
        GridSpec::unit(self.h, self.shape_kernel()?.frame_width())
    }

    pub fn particle_params(&self) -> ParticleParams {
        ParticleParams {
            method: self.method,
            scheme: self.scheme,
            h_prime: self.h_prime,
            w_tol: self.w_tol,
            support_growth: self.support_growth,
        }
    }

    /// Whether this run remaps at `T/2`.
    pub fn remaps_mid_run(&self) -> bool {
        self.mid_remap && !matches!(self.method, Method::Tsp { .. }) && self.test_case().field.is_reversible()
    }

    /// Rejects inconsistent combinations.
    pub fn validate(&self) -> Result<()> {
        let kernel = self.shape_kernel()?;
        self.grid()?;
        let case = self.test_case();
        if !(case.dt > 0.0 && case.dt.is_finite()) {
            return Err(Error::config(format!("time step must be positive, got {}", case.dt)));
        }
        let t_end = self.end_time();
        if !(t_end > 0.0) {
            return Err(Error::config(format!("end time must be positive, got {t_end}")));
        }
        let steps = t_end / case.dt;
        if (steps - steps.round()).abs() > 1e-9 * steps.max(1.0) {
            return Err(Error::config(format!("end time {t_end} is not a multiple of dt = {}", case.dt)));
        }
        if let Method::Tsp { q } = self.method {
            if !(q > 0.0 && q <= 1.0) {
                return Err(Error::config(format!("q must lie in (0, 1], got {q}")));
            }
            if self.policy != RemapPolicy::Never {
                return Err(Error::config("smoothed particles (tsp) require remap = never"));
            }
        } else if kernel.quasi_stencil().is_none() {
            return Err(Error::config(format!("kernel {} cannot be used for remapped particles", kernel.kind.id())));
        }
        if let RemapPolicy::Dynamic(_) = self.policy {
            if !self.method.is_transformed() || self.scheme != DerivativeScheme::Direct {
                return Err(Error::config("dynamic remapping requires ltp or qtp with the direct scheme"));
            }
        }
        if let Some(hp) = self.h_prime {
            if !(hp > 0.0) {
                return Err(Error::config(format!("hprime must be positive, got {hp}")));
            }
        }
        if !(self.w_tol >= 0.0) {
            return Err(Error::config("w_tol must be non-negative"));
        }
        if !(self.support_growth >= 0.0) {
            return Err(Error::config("support_growth must be non-negative"));
        }
        EvalGrid::new(self.eval_grid)?;
        Ok(())
    }

    /// `key = value` lines reproducing this configuration.
    pub fn to_pairs(&self) -> Vec<(String, String)> {
        let mut v = vec![
            ("case".into(), self.case.id().into()),
            ("method".into(), self.method.id().into()),
            ("kernel".into(), self.kernel.id()),
            ("scheme".into(), self.scheme.id().into()),
            ("h".into(), format!("{:e}", self.h)),
            ("dt".into(), format!("{:e}", self.test_case().dt)),
            ("t_end".into(), format!("{:e}", self.end_time())),
            ("remap".into(), self.policy.to_string()),
            ("q".into(), format!("{}", self.q)),
            ("w_tol".into(), format!("{:e}", self.w_tol)),
            ("support_growth".into(), format!("{}", self.support_growth)),
            ("eval_grid".into(), self.eval_grid.to_string()),
            ("mid_remap".into(), self.mid_remap.to_string()),
            ("seed".into(), self.seed.to_string()),
        ];
        if let Some(hp) = self.h_prime {
            v.push(("hprime".into(), format!("{hp:e}")));
        }
        if let Some(l) = self.log_every {
            v.push(("log_every".into(), l.to_string()));
        }
        v
    }
}
