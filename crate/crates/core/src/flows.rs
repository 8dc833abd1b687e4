//! Velocity fields, analytic reference flows, initial data and the RK4
//! numerical forward flow.

use std::f64::consts::PI;

use crate::{Error, Point, Result};

/// A (possibly time dependent) velocity field `u(t, x)`.
pub trait Velocity: Sync {
    fn velocity(&self, t: f64, x: &Point) -> Point;
}

impl<F> Velocity for F
where
    F: Fn(f64, &Point) -> Point + Sync,
{
    fn velocity(&self, t: f64, x: &Point) -> Point {
        self(t, x)
    }
}

/// One-step numerical forward flow `F^n : x(t) -> x(t + dt)`.
pub trait ForwardFlow: Sync {
    fn advance(&self, t: f64, dt: f64, x: &Point) -> Point;
}

/// Classical fourth-order Runge-Kutta step for `X' = u(t, X)`.
#[derive(Debug, Clone, Copy)]
pub struct Rk4<V>(pub V);

impl<V: Velocity> ForwardFlow for Rk4<V> {
    fn advance(&self, t: f64, dt: f64, x: &Point) -> Point {
        rk4_step(&self.0, t, dt, x)
    }
}

/// Wraps an explicit step map, e.g. an exactly integrated flow.
#[derive(Debug, Clone, Copy)]
pub struct StepMap<F>(pub F);

impl<F> ForwardFlow for StepMap<F>
where
    F: Fn(f64, f64, &Point) -> Point + Sync,
{
    fn advance(&self, t: f64, dt: f64, x: &Point) -> Point {
        (self.0)(t, dt, x)
    }
}

pub fn rk4_step<V: Velocity + ?Sized>(field: &V, t: f64, dt: f64, x: &Point) -> Point {
    let half = 0.5 * dt;
    let k1 = field.velocity(t, x);
    let k2 = field.velocity(t + half, &(x + half * k1));
    let k3 = field.velocity(t + half, &(x + half * k2));
    let k4 = field.velocity(t + dt, &(x + dt * k3));
    x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
}

const CENTER: f64 = 0.5;
const NLR_RADIUS: f64 = 0.4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FieldKind {
    /// LeVeque's reversible swirl.
    Swirl,
    /// Reversible Rayleigh-Benard-like convection cell.
    RayleighBenard,
    /// Stationary non-linear rotation about the box center.
    NonLinearRotation,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowField {
    pub kind: FieldKind,
    /// Modulation period of the reversible fields.
    pub period: f64,
}

impl FlowField {
    pub fn swirl(period: f64) -> Self {
        Self { kind: FieldKind::Swirl, period }
    }

    pub fn rayleigh_benard(period: f64) -> Self {
        Self { kind: FieldKind::RayleighBenard, period }
    }

    pub fn nonlinear_rotation() -> Self {
        Self { kind: FieldKind::NonLinearRotation, period: f64::INFINITY }
    }

    pub fn is_reversible(&self) -> bool {
        !matches!(self.kind, FieldKind::NonLinearRotation)
    }

    /// Stream function, for the reversible fields (time modulation excluded).
    pub fn stream_function(&self, x: &Point) -> Option<f64> {
        let (x1, x2) = (x[0], x[1]);
        match self.kind {
            FieldKind::Swirl => Some(-(PI * x1).sin().powi(2) * (PI * x2).sin().powi(2)),
            FieldKind::RayleighBenard => Some((x1 - 0.5) * (x1 - x1 * x1) * (x2 - x2 * x2)),
            FieldKind::NonLinearRotation => None,
        }
    }

    /// Exact backward flow from time `t` to time 0 (rotation field only).
    pub fn exact_backward(&self, t: f64, x: &Point) -> Result<Point> {
        match self.kind {
            FieldKind::NonLinearRotation => Ok(rotate_about_center(x, -nlr_alpha(x) * t)),
            _ => Err(Error::config("no analytic backward flow for the reversible fields")),
        }
    }

    /// Exact forward flow from time 0 to time `t` (rotation field only).
    pub fn exact_forward(&self, t: f64, x: &Point) -> Result<Point> {
        match self.kind {
            FieldKind::NonLinearRotation => Ok(rotate_about_center(x, nlr_alpha(x) * t)),
            _ => Err(Error::config("no analytic forward flow for the reversible fields")),
        }
    }
}

/// Angular velocity `(1 - |x - c|_2 / 0.4)^3_+` of the rotation field.
pub fn nlr_alpha(x: &Point) -> f64 {
    let r = ((x[0] - CENTER).powi(2) + (x[1] - CENTER).powi(2)).sqrt();
    let s = 1.0 - r / NLR_RADIUS;
    if s > 0.0 {
        s * s * s
    } else {
        0.0
    }
}

/// Counter-clockwise rotation of `x` by `theta` about `(1/2, 1/2)`.
fn rotate_about_center(x: &Point, theta: f64) -> Point {
    if theta == 0.0 {
        return *x;
    }
    let (s, c) = theta.sin_cos();
    let (dx, dy) = (x[0] - CENTER, x[1] - CENTER);
    Point::new(CENTER + c * dx - s * dy, CENTER + s * dx + c * dy)
}

impl Velocity for FlowField {
    fn velocity(&self, t: f64, x: &Point) -> Point {
        let (x1, x2) = (x[0], x[1]);
        match self.kind {
            FieldKind::Swirl => {
                // (1/pi) cos(pi t/T) curl psi, psi = -sin^2(pi x1) sin^2(pi x2)
                let m = (PI * t / self.period).cos();
                Point::new(
                    -m * (PI * x1).sin().powi(2) * (2.0 * PI * x2).sin(),
                    m * (2.0 * PI * x1).sin() * (PI * x2).sin().powi(2),
                )
            }
            FieldKind::RayleighBenard => {
                let m = (PI * t / self.period).cos();
                let d2 = (x1 - 0.5) * (x1 - x1 * x1) * (1.0 - 2.0 * x2);
                let d1 = (-3.0 * x1 * x1 + 3.0 * x1 - 0.5) * (x2 - x2 * x2);
                Point::new(m * d2, -m * d1)
            }
            FieldKind::NonLinearRotation => {
                let a = nlr_alpha(x);
                Point::new(a * (CENTER - x2), a * (x1 - CENTER))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InitialData {
    Hump {
        center: Point,
    },
    Cone {
        center: Point,
    },
    /// `x_2 - 1/2`
    Linear,
    Constant(f64),
}

impl InitialData {
    pub fn eval(&self, x: &Point) -> f64 {
        match self {
            Self::Hump { center } => {
                let r = (x - center).norm();
                0.5 * (1.0 + libm::erf((11.0 - 100.0 * r) / 3.0))
            }
            Self::Cone { center } => (1.0 - 20.0 / 3.0 * (x - center).norm()).max(0.0),
            Self::Linear => x[1] - 0.5,
            Self::Constant(c) => *c,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CaseId {
    SwCone,
    SwHump,
    RbHump,
    Nlr,
}

impl CaseId {
    pub fn from_id(id: &str) -> Result<Self> {
        match id {
            "sw-cone" => Ok(Self::SwCone),
            "sw-hump" => Ok(Self::SwHump),
            "rb-hump" => Ok(Self::RbHump),
            "nlr" => Ok(Self::Nlr),
            _ => Err(Error::config(format!("unknown test case `{id}` (expected sw-cone, sw-hump, rb-hump or nlr)"))),
        }
    }

    pub fn id(&self) -> &'static str {
        match self {
            Self::SwCone => "sw-cone",
            Self::SwHump => "sw-hump",
            Self::RbHump => "rb-hump",
            Self::Nlr => "nlr",
        }
    }
}

/// Benchmark definition: field, initial data, final time and time step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TestCase {
    pub id: CaseId,
    pub field: FlowField,
    pub data: InitialData,
    pub final_time: f64,
    pub dt: f64,
}

impl TestCase {
    pub fn new(id: CaseId) -> Self {
        match id {
            CaseId::SwCone => Self {
                id,
                field: FlowField::swirl(5.0),
                data: InitialData::Cone { center: Point::new(0.5, 0.25) },
                final_time: 5.0,
                dt: 0.05,
            },
            CaseId::SwHump => Self {
                id,
                field: FlowField::swirl(5.0),
                data: InitialData::Hump { center: Point::new(0.5, 0.7) },
                final_time: 5.0,
                dt: 0.05,
            },
            CaseId::RbHump => Self {
                id,
                field: FlowField::rayleigh_benard(3.0),
                data: InitialData::Hump { center: Point::new(0.5, 0.4) },
                final_time: 3.0,
                dt: 0.03,
            },
            CaseId::Nlr => Self {
                id,
                field: FlowField::nonlinear_rotation(),
                data: InitialData::Linear,
                final_time: 50.0,
                dt: 0.5,
            },
        }
    }

    pub fn from_id(id: &str) -> Result<Self> {
        Ok(Self::new(CaseId::from_id(id)?))
    }

    pub fn n_steps(&self) -> usize {
        (self.final_time / self.dt).round() as usize
    }

    /// Exact solution at time `t`, where one is known: any `t` for the
    /// rotation field, `t` in `{0, T}` for the reversible fields.
    pub fn reference(&self, t: f64, x: &Point) -> Result<f64> {
        let tol = 1e-9 * self.final_time.max(1.0);
        if self.field.is_reversible() {
            if t.abs() <= tol || (t - self.final_time).abs() <= tol {
                Ok(self.data.eval(x))
            } else {
                Err(Error::config(format!(
                    "no reference solution for {} at t = {t} (only t = 0 and t = T)",
                    self.id.id()
                )))
            }
        } else {
            Ok(self.data.eval(&self.field.exact_backward(t, x)?))
        }
    }

    pub fn has_reference(&self, t: f64) -> bool {
        self.reference(t, &Point::new(0.5, 0.5)).is_ok()
    }
}
