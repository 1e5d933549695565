//! Time integration of the target, free, controlled and observer systems.
//!
//! All runs use first-order IMEX Euler on a fixed mesh and step:
//!
//! ```text
//! (M + dt nu K) w^{n+1} = M w^n + dt [F(t^{n+1}) - N(w^n) + M c]
//! ```
//!
//! with Dirichlet data `g(t^{n+1})` imposed by lifting. `N` is the
//! skew-symmetrized convection load and `c` the control forcing. The
//! feedback is either frozen at `t^n` (explicit) or evaluated at the new
//! state (implicit). The implicit variant only adds a rank-`M_sigma`
//! correction to the diffusion solve and is stable for any gain.

use std::f64::consts::PI;
use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector, LU};
use thiserror::Error;

use crate::actuators::{default_bumps, rectangle_layout, triangle_layout, ActuatorError, ActuatorFamily, TrianglePlacement};
use crate::control::{ControlError, FeedbackOperator};
use crate::fem::{dot, interpolate, DirichletSolver, FemError, LoadAssembler, P1Space, Quadrature};
use crate::geometry::Point;
use crate::mesh::{build_mesh, DomainSpec, MeshError, MeshOptions};
use crate::vorticity::StreamSolver;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Actuator(#[from] ActuatorError),
    #[error(transparent)]
    Control(#[from] ControlError),
    #[error(transparent)]
    Fem(#[from] FemError),
    #[error("state diverged at t = {t}: |{field}|_H = {norm:e}")]
    Diverged { t: f64, field: &'static str, norm: f64 },
    #[error("decay fit impossible: {0}")]
    Decay(String),
}

/// Which system `w` follows.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// No control; `z` measures the convergence of two free trajectories.
    Free,
    /// Feedback computed from `z = w - w_t`.
    Controlled,
    /// Feedback computed from the measurements `(w_t, phi_j)_H` only.
    Observer,
}

impl std::str::FromStr for Mode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "free" => Ok(Mode::Free),
            "controlled" => Ok(Mode::Controlled),
            "observer" => Ok(Mode::Observer),
            _ => Err(format!("unknown mode `{s}` (expected free, controlled or observer)")),
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Mode::Free => "free",
            Mode::Controlled => "controlled",
            Mode::Observer => "observer",
        })
    }
}

/// Time level at which the feedback is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeedbackScheme {
    Implicit,
    Explicit,
}

impl std::str::FromStr for FeedbackScheme {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "implicit" => Ok(FeedbackScheme::Implicit),
            "explicit" => Ok(FeedbackScheme::Explicit),
            _ => Err(format!("unknown feedback scheme `{s}` (expected implicit or explicit)")),
        }
    }
}

impl std::fmt::Display for FeedbackScheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            FeedbackScheme::Implicit => "implicit",
            FeedbackScheme::Explicit => "explicit",
        })
    }
}

/// Coefficient of the convection term in the manufactured forcing of
/// Example 2.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Example2Forcing {
    /// `f = dw/dt - Lap w + nu^{-1} N(w)`.
    Scaled,
    /// `f = dw/dt - nu Lap w + N(w)`, which makes `w_exa` an exact solution.
    Consistent,
}

impl std::str::FromStr for Example2Forcing {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "scaled" => Ok(Example2Forcing::Scaled),
            "consistent" => Ok(Example2Forcing::Consistent),
            _ => Err(format!("unknown forcing variant `{s}` (expected scaled or consistent)")),
        }
    }
}

/// Constant data for quick custom experiments.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CustomData {
    pub f: f64,
    pub g: f64,
    pub w0: f64,
    pub wt0: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Preset {
    Example1,
    Example2(Example2Forcing),
    Custom(CustomData),
}

impl Preset {
    pub fn name(&self) -> &'static str {
        match self {
            Preset::Example1 => "example1",
            Preset::Example2(_) => "example2",
            Preset::Custom(_) => "custom",
        }
    }
}

fn sign0(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Example 1 body forcing with `sign(0) = 0`.
pub fn forcing_example1(t: f64, x: Point) -> f64 {
    2.0 * (2.0 * t).cos() * sign0(x[0] - 0.3 + (4.0 * t).cos() / 10.0) * sign0(x[1] - 0.3 + (4.0 * t).sin() / 10.0)
}

/// Example 1 initial vorticity `w0 = -2 sin(3 x1) + 1`; the target starts at 0.
pub fn example1_initial(x: Point) -> f64 {
    -2.0 * (3.0 * x[0]).sin() + 1.0
}

/// `w_exa(t, x) = sin(2t) (x1 - 2/5)`.
pub fn example2_exact(t: f64, x: Point) -> f64 {
    (2.0 * t).sin() * (x[0] - 0.4)
}

/// `d w_exa / dt`.
pub fn example2_exact_rate(t: f64, x: Point) -> f64 {
    2.0 * (2.0 * t).cos() * (x[0] - 0.4)
}

/// Example 2 initial vorticity `w0 = -10 sin(3 x1) sin(4 x2) + 5`; the target starts at 0.
pub fn example2_initial(x: Point) -> f64 {
    -10.0 * (3.0 * x[0]).sin() * (4.0 * x[1]).sin() + 5.0
}

/// The triangle used by both example presets.
pub fn example_triangle() -> DomainSpec {
    DomainSpec::Triangle { vertices: [[0.0, 0.0], [1.0, 0.0], [1.0 / 3.0, 2.0 / 3.0]] }
}

/// Actuator family selection. `m = 0` means no actuators.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActuatorSpec {
    pub m: usize,
    /// Total side `r` of the rectangle layout.
    pub r: f64,
    pub placement: TrianglePlacement,
}

impl Default for ActuatorSpec {
    fn default() -> Self {
        ActuatorSpec { m: 0, r: 0.3, placement: TrianglePlacement::default() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub domain: DomainSpec,
    /// Target edge length of the coarse mesh.
    pub mesh_h: f64,
    /// Number of uniform refinements of the coarse mesh.
    pub level: u32,
    pub actuators: ActuatorSpec,
    pub nu: f64,
    pub dt: f64,
    pub t_end: f64,
    pub mode: Mode,
    pub lambda: f64,
    pub scheme: FeedbackScheme,
    pub preset: Preset,
    /// Disable to integrate the linear heat flow only.
    pub convection: bool,
    pub snapshot_times: Vec<f64>,
}

impl SimConfig {
    /// Example 1 on the level-`level` mesh with the matching step `4e-4 / 2^level`.
    pub fn example1(level: u32) -> Self {
        SimConfig {
            domain: example_triangle(),
            mesh_h: 0.05,
            level,
            actuators: ActuatorSpec::default(),
            nu: 0.01,
            dt: 4e-4 / f64::from(1u32 << level),
            t_end: 24.0,
            mode: Mode::Free,
            lambda: 1.0,
            scheme: FeedbackScheme::Implicit,
            preset: Preset::Example1,
            convection: true,
            snapshot_times: Vec::new(),
        }
    }

    pub fn example2(level: u32, forcing: Example2Forcing) -> Self {
        SimConfig { preset: Preset::Example2(forcing), ..SimConfig::example1(level) }
    }

    pub fn with_control(mut self, mode: Mode, m: usize, lambda: f64) -> Self {
        self.mode = mode;
        self.actuators.m = m;
        self.lambda = lambda;
        self
    }

    pub fn steps(&self) -> usize {
        (self.t_end / self.dt - 1e-9).ceil().max(0.0) as usize
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::Config(m.to_string()));
        if !(self.nu > 0.0 && self.nu.is_finite()) {
            return bad("nu must be positive");
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad("dt must be positive");
        }
        if !(self.t_end >= 0.0 && self.t_end.is_finite()) {
            return bad("t_end must be nonnegative");
        }
        if !(self.mesh_h > 0.0) {
            return bad("mesh h must be positive");
        }
        if self.level > 6 {
            return bad("mesh level above 6 is not supported");
        }
        if self.mode != Mode::Free {
            if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
                return bad("lambda must be nonnegative");
            }
            if self.actuators.m == 0 {
                return bad("controlled and observer modes need M >= 1");
            }
        }
        self.domain.validate()?;
        Ok(())
    }
}

/// A mesh with its P1 matrices and (optionally) an actuator family aligned with it.
#[derive(Debug, Clone)]
pub struct Setup {
    pub space: P1Space,
    pub family: Option<ActuatorFamily>,
}

impl Setup {
    pub fn build(domain: &DomainSpec, mesh_h: f64, level: u32, actuators: &ActuatorSpec) -> Result<Self, SimError> {
        let layout = if actuators.m == 0 {
            None
        } else {
            Some(match *domain {
                DomainSpec::Rectangle { l1, l2 } => rectangle_layout(l1, l2, actuators.r, actuators.m)?,
                DomainSpec::Triangle { vertices } => triangle_layout(vertices, actuators.m, actuators.placement)?,
            })
        };
        let supports = layout.as_ref().map(|l| l.supports()).unwrap_or_default();
        let mesh = build_mesh(domain, &supports, MeshOptions { h: mesh_h })?.refined(level);
        let space = P1Space::new(mesh);
        let family = match layout {
            Some(l) => Some(ActuatorFamily::build(l, space.mesh(), default_bumps())?),
            None => None,
        };
        Ok(Setup { space, family })
    }

    pub fn for_config(cfg: &SimConfig) -> Result<Self, SimError> {
        Self::build(&cfg.domain, cfg.mesh_h, cfg.level, &cfg.actuators)
    }
}

enum Source {
    Example1 { assembler: LoadAssembler },
    Manufactured { convection_coefficient: f64 },
    Constant { load: Vec<f64> },
}

/// Implicit IMEX stepper for one mesh and step size.
pub struct Stepper<'a> {
    space: &'a P1Space,
    dt: f64,
    solver: DirichletSolver,
    stream: StreamSolver,
    source: Source,
    preset: Preset,
    convection: bool,
}

impl<'a> Stepper<'a> {
    pub fn new(space: &'a P1Space, nu: f64, dt: f64, preset: Preset, convection: bool) -> Result<Self, SimError> {
        let system = space.mass().add_scaled(dt * nu, space.stiffness());
        let solver = DirichletSolver::new(space.mesh(), &system)?;
        let stream = StreamSolver::new(space)?;
        let source = match preset {
            Preset::Example1 => Source::Example1 { assembler: LoadAssembler::new(space.mesh(), Quadrature::Degree5) },
            Preset::Example2(v) => Source::Manufactured {
                convection_coefficient: match v {
                    Example2Forcing::Scaled => 1.0 / nu,
                    Example2Forcing::Consistent => 1.0,
                },
            },
            Preset::Custom(c) => Source::Constant { load: space.mass().mul_vec(&vec![c.f; space.dim()]) },
        };
        Ok(Stepper { space, dt, solver, stream, source, preset, convection })
    }

    pub fn space(&self) -> &P1Space {
        self.space
    }

    pub fn stream(&self) -> &StreamSolver {
        &self.stream
    }

    /// Weak body forcing at time `t`.
    pub fn forcing_load(&self, t: f64) -> Vec<f64> {
        let mesh = self.space.mesh();
        match &self.source {
            Source::Example1 { assembler } => {
                // same as forcing_example1 with the time factors hoisted
                let amp = 2.0 * (2.0 * t).cos();
                let (b1, b2) = (-0.3 + (4.0 * t).cos() / 10.0, -0.3 + (4.0 * t).sin() / 10.0);
                assembler.assemble(mesh, |x| amp * sign0(x[0] + b1) * sign0(x[1] + b2))
            }
            Source::Manufactured { convection_coefficient } => {
                let rate = interpolate(mesh, |x| example2_exact_rate(t, x));
                let mut load = self.space.mass().mul_vec(&rate);
                let exact = interpolate(mesh, |x| example2_exact(t, x));
                for (l, c) in load.iter_mut().zip(self.stream.convection(self.space, &exact)) {
                    *l += convection_coefficient * c;
                }
                load
            }
            Source::Constant { load } => load.clone(),
        }
    }

    /// Dirichlet data at time `t` as a full-length vector, or `None` when zero.
    pub fn boundary_values(&self, t: f64) -> Option<Vec<f64>> {
        match self.preset {
            Preset::Example1 => None,
            Preset::Example2(_) => Some(interpolate(self.space.mesh(), |x| example2_exact(t, x))),
            Preset::Custom(c) if c.g == 0.0 => None,
            Preset::Custom(c) => Some(vec![c.g; self.space.dim()]),
        }
    }

    /// `M w + dt (F - N(w) + M c)`.
    pub fn rhs(&self, w: &[f64], load: &[f64], control: Option<&[f64]>) -> Vec<f64> {
        let mut rhs = self.space.mass().mul_vec(w);
        if let Some(c) = control {
            for (r, v) in rhs.iter_mut().zip(self.space.mass().mul_vec(c)) {
                *r += self.dt * v;
            }
        }
        if self.convection {
            for (r, v) in rhs.iter_mut().zip(self.stream.convection(self.space, w)) {
                *r -= self.dt * v;
            }
        }
        for (r, f) in rhs.iter_mut().zip(load) {
            *r += self.dt * f;
        }
        rhs
    }

    pub fn solve(&self, rhs: &[f64], boundary: Option<&[f64]>) -> Vec<f64> {
        self.solver.solve(rhs, boundary)
    }

    /// One step from `t` to `t + dt` with an optional frozen control forcing field.
    pub fn step(&self, w: &[f64], t: f64, control: Option<&[f64]>) -> Vec<f64> {
        let t1 = t + self.dt;
        let load = self.forcing_load(t1);
        let g = self.boundary_values(t1);
        self.solve(&self.rhs(w, &load, control), g.as_deref())
    }
}

/// Measurements `s_j = (w_t, phi_j)_H` available to the observer.
pub fn observer_step_inputs(space: &P1Space, w_t: &[f64], family: &ActuatorFamily) -> DVector<f64> {
    let mw = space.mass().mul_vec(w_t);
    DVector::from_iterator(family.count(), family.actuators().iter().map(|phi| dot(phi, &mw)))
}

/// Rank-`M_sigma` correction for evaluating the feedback at the new time level.
struct ImplicitFeedback {
    /// `dt (M + dt nu K)_II^{-1} M phi_j`, extended by zero.
    response: Vec<Vec<f64>>,
    lu: LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
}

impl ImplicitFeedback {
    fn new(stepper: &Stepper, feedback: &FeedbackOperator) -> Self {
        let n = feedback.count();
        let mass = stepper.space.mass();
        let response: Vec<Vec<f64>> = feedback
            .actuators()
            .iter()
            .map(|phi| {
                let mut r = stepper.solve(&mass.mul_vec(phi), None);
                r.iter_mut().for_each(|v| *v *= stepper.dt);
                r
            })
            .collect();
        // measurement of each response column
        let t = DMatrix::from_fn(n, n, |i, j| dot(&mass.mul_vec(&feedback.actuators()[i]), &response[j]));
        let system = DMatrix::identity(n, n) + feedback.lambda() * feedback.gain() * t;
        ImplicitFeedback { response, lu: system.lu() }
    }

    /// Given the uncontrolled prediction's measured offset `sigma`, returns
    /// `u` solving `u = -lambda G (sigma + T u)`.
    fn coordinates(&self, feedback: &FeedbackOperator, sigma: &DVector<f64>) -> DVector<f64> {
        self.lu.solve(&feedback.coordinates_from_measurements(sigma)).expect("implicit feedback system is nonsingular")
    }

    fn correct(&self, w: &mut [f64], u: &DVector<f64>) {
        for (col, &uj) in self.response.iter().zip(u.iter()) {
            for (wi, ci) in w.iter_mut().zip(col) {
                *wi += uj * ci;
            }
        }
    }
}

/// One recorded time level.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample {
    pub t: f64,
    pub norm_z: f64,
    pub norm_wt: f64,
    pub norm_w: f64,
    pub norm_u: f64,
    pub norm_wt_v: f64,
}

/// Fields saved at a requested time.
#[derive(Debug, Clone)]
pub struct Snapshot {
    pub t: f64,
    pub w: Vec<f64>,
    pub wt: Vec<f64>,
    pub z: Vec<f64>,
    pub psi_z: Vec<f64>,
    pub psi_ctrl: Vec<f64>,
}

/// Distance of the computed fields to `w_exa` at one time level.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExactError {
    pub t: f64,
    pub target: f64,
    pub state: f64,
}

/// Least-squares exponential decay fit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecayFit {
    /// `mu` in `|z(t)| ~ C exp(-mu t)`.
    pub rate: f64,
    pub t_start: f64,
    pub t_end: f64,
    pub samples: usize,
    /// The series dropped to `100 eps |z(0)|` somewhere.
    pub floor_reached: bool,
    /// `ln(min_t |z(t)| / |z(0)|)`.
    pub log_min_ratio: f64,
}

/// Fits `ln |z|` against `t` from the first sample until the series first
/// drops to `100 eps |z(0)|`.
pub fn estimate_decay(series: &[(f64, f64)]) -> Result<DecayFit, SimError> {
    let z0 = series.first().map(|s| s.1).ok_or_else(|| SimError::Decay("empty series".into()))?;
    if !(z0 > 0.0) {
        return Err(SimError::Decay("all samples at the floor".into()));
    }
    let threshold = 100.0 * f64::EPSILON * z0;
    let cut = series.iter().position(|s| !(s.1 > threshold));
    let window = &series[..cut.unwrap_or(series.len())];
    if window.len() < 10 {
        return Err(SimError::Decay(format!("only {} samples above the floor", window.len())));
    }
    let n = window.len() as f64;
    let (mut st, mut sy, mut stt, mut sty) = (0.0, 0.0, 0.0, 0.0);
    for &(t, v) in window {
        let y = v.ln();
        st += t;
        sy += y;
        stt += t * t;
        sty += t * y;
    }
    let slope = (n * sty - st * sy) / (n * stt - st * st);
    let min = series.iter().map(|s| s.1).fold(f64::INFINITY, f64::min);
    Ok(DecayFit {
        rate: -slope,
        t_start: window[0].0,
        t_end: window[window.len() - 1].0,
        samples: window.len(),
        floor_reached: cut.is_some(),
        log_min_ratio: if min > 0.0 { (min / z0).ln() } else { f64::NEG_INFINITY },
    })
}

/// Result of [`run_pair`].
#[derive(Debug, Clone)]
pub struct SimRun {
    pub samples: Vec<Sample>,
    /// Control coordinates applied on each step (empty rows in free mode).
    pub controls: Vec<(f64, Vec<f64>)>,
    pub snapshots: Vec<Snapshot>,
    /// Only for Example 2.
    pub exact_errors: Vec<ExactError>,
    pub final_w: Vec<f64>,
    pub final_wt: Vec<f64>,
}

impl SimRun {
    pub fn z_series(&self) -> Vec<(f64, f64)> {
        self.samples.iter().map(|s| (s.t, s.norm_z)).collect()
    }

    pub fn decay(&self) -> Result<DecayFit, SimError> {
        estimate_decay(&self.z_series())
    }

    pub fn max_target_error(&self) -> Option<f64> {
        self.exact_errors.iter().map(|e| e.target).reduce(f64::max)
    }

    /// `t,norm_z_H,norm_wt_H,norm_w_H,norm_u,norm_wt_V`, every `stride`-th sample plus the last.
    pub fn run_csv(&self, stride: usize) -> String {
        let mut s = String::from("t,norm_z_H,norm_wt_H,norm_w_H,norm_u,norm_wt_V\n");
        for (k, r) in self.samples.iter().enumerate() {
            if keep(k, self.samples.len(), stride) {
                writeln!(s, "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}", r.t, r.norm_z, r.norm_wt, r.norm_w, r.norm_u, r.norm_wt_v).unwrap();
            }
        }
        s
    }

    /// `t,u_1,...,u_Msigma`.
    pub fn controls_csv(&self, stride: usize) -> String {
        let m = self.controls.first().map_or(0, |c| c.1.len());
        let mut s = String::from("t");
        for j in 1..=m {
            write!(s, ",u_{j}").unwrap();
        }
        s.push('\n');
        for (k, (t, u)) in self.controls.iter().enumerate() {
            if keep(k, self.controls.len(), stride) {
                write!(s, "{t:.16e}").unwrap();
                for v in u {
                    write!(s, ",{v:.16e}").unwrap();
                }
                s.push('\n');
            }
        }
        s
    }

    /// `t,error_target_H,error_w_H`.
    pub fn exact_error_csv(&self, stride: usize) -> String {
        let mut s = String::from("t,error_target_H,error_w_H\n");
        for (k, e) in self.exact_errors.iter().enumerate() {
            if keep(k, self.exact_errors.len(), stride) {
                writeln!(s, "{:.16e},{:.16e},{:.16e}", e.t, e.target, e.state).unwrap();
            }
        }
        s
    }
}

fn keep(k: usize, len: usize, stride: usize) -> bool {
    k % stride.max(1) == 0 || k + 1 == len
}

/// Per-node `x1,x2,value` dump of a field.
pub fn field_csv(space: &P1Space, field: &[f64]) -> String {
    let mut s = String::from("x1,x2,value\n");
    for (p, v) in space.mesh().nodes().iter().zip(field) {
        writeln!(s, "{:.16e},{:.16e},{:.16e}", p[0], p[1], v).unwrap();
    }
    s
}

fn initial_fields(space: &P1Space, preset: Preset) -> (Vec<f64>, Vec<f64>) {
    let mesh = space.mesh();
    match preset {
        Preset::Example1 => (interpolate(mesh, example1_initial), vec![0.0; mesh.num_nodes()]),
        Preset::Example2(_) => (interpolate(mesh, example2_initial), vec![0.0; mesh.num_nodes()]),
        Preset::Custom(c) => (vec![c.w0; mesh.num_nodes()], vec![c.wt0; mesh.num_nodes()]),
    }
}

const OVERFLOW: f64 = 1e150;

fn guard(t: f64, field: &'static str, norm: f64) -> Result<f64, SimError> {
    if norm.is_finite() && norm < OVERFLOW {
        Ok(norm)
    } else {
        Err(SimError::Diverged { t, field, norm })
    }
}

/// Builds the mesh and family for `cfg` and runs it.
pub fn run_pair(cfg: &SimConfig) -> Result<SimRun, SimError> {
    cfg.validate()?;
    let setup = Setup::for_config(cfg)?;
    run_pair_on(cfg, &setup)
}

/// Advances the uncontrolled target `w_t` and the state `w` (free,
/// controlled or observer, per `cfg.mode`) side by side.
pub fn run_pair_on(cfg: &SimConfig, setup: &Setup) -> Result<SimRun, SimError> {
    cfg.validate()?;
    let (w0, wt0) = initial_fields(&setup.space, cfg.preset);
    run_pair_from(cfg, setup, w0, wt0)
}

/// Step-by-step integrator for the target `w_t` and the state `w`.
pub struct PairIntegrator<'a> {
    cfg: &'a SimConfig,
    space: &'a P1Space,
    stepper: Stepper<'a>,
    feedback: Option<(&'a ActuatorFamily, FeedbackOperator)>,
    implicit: Option<ImplicitFeedback>,
    steps_taken: usize,
    w: Vec<f64>,
    wt: Vec<f64>,
    u: DVector<f64>,
}

impl<'a> PairIntegrator<'a> {
    pub fn new(cfg: &'a SimConfig, setup: &'a Setup, w0: Vec<f64>, wt0: Vec<f64>) -> Result<Self, SimError> {
        cfg.validate()?;
        let space = &setup.space;
        if w0.len() != space.dim() || wt0.len() != space.dim() {
            return Err(SimError::Config("initial fields do not match the mesh".into()));
        }
        let stepper = Stepper::new(space, cfg.nu, cfg.dt, cfg.preset, cfg.convection)?;
        let feedback = match cfg.mode {
            Mode::Free => None,
            Mode::Controlled | Mode::Observer => {
                let family = setup.family.as_ref().ok_or_else(|| SimError::Config("actuator family missing".into()))?;
                Some((family, FeedbackOperator::new(cfg.lambda, family, space)?))
            }
        };
        let implicit = match (&feedback, cfg.scheme) {
            (Some((_, k)), FeedbackScheme::Implicit) => Some(ImplicitFeedback::new(&stepper, k)),
            _ => None,
        };
        let mut it = PairIntegrator { cfg, space, stepper, feedback, implicit, steps_taken: 0, w: w0, wt: wt0, u: DVector::zeros(0) };
        it.u = it.explicit_coordinates();
        Ok(it)
    }

    pub fn t(&self) -> f64 {
        self.steps_taken as f64 * self.cfg.dt
    }

    pub fn w(&self) -> &[f64] {
        &self.w
    }

    pub fn wt(&self) -> &[f64] {
        &self.wt
    }

    /// Control coordinates used on the last step (at `t = 0`, the explicit
    /// feedback of the initial state).
    pub fn u(&self) -> &DVector<f64> {
        &self.u
    }

    pub fn stepper(&self) -> &Stepper<'a> {
        &self.stepper
    }

    pub fn feedback(&self) -> Option<&FeedbackOperator> {
        self.feedback.as_ref().map(|(_, k)| k)
    }

    pub fn into_fields(self) -> (Vec<f64>, Vec<f64>) {
        (self.w, self.wt)
    }

    /// Control coordinates from the current fields.
    fn explicit_coordinates(&self) -> DVector<f64> {
        match (&self.feedback, self.cfg.mode) {
            (Some((_, k)), Mode::Controlled) => {
                let z: Vec<f64> = self.w.iter().zip(&self.wt).map(|(a, b)| a - b).collect();
                k.control_coordinates(&z)
            }
            (Some((family, k)), Mode::Observer) => {
                let s_t = observer_step_inputs(self.space, &self.wt, family);
                k.coordinates_from_measurements(&(k.measurements(&self.w) - s_t))
            }
            _ => DVector::zeros(0),
        }
    }

    /// Advances both fields by one step.
    pub fn advance(&mut self) {
        let t1 = (self.steps_taken + 1) as f64 * self.cfg.dt;
        let st = &self.stepper;
        let load = st.forcing_load(t1);
        let g = st.boundary_values(t1);
        let wt_next = st.solve(&st.rhs(&self.wt, &load, None), g.as_deref());
        let w_next = match (&self.feedback, &self.implicit) {
            (None, _) => st.solve(&st.rhs(&self.w, &load, None), g.as_deref()),
            (Some((family, k)), Some(imp)) => {
                let mut pred = st.solve(&st.rhs(&self.w, &load, None), g.as_deref());
                let sigma = match self.cfg.mode {
                    Mode::Controlled => {
                        let z: Vec<f64> = pred.iter().zip(&wt_next).map(|(a, b)| a - b).collect();
                        k.measurements(&z)
                    }
                    _ => k.measurements(&pred) - observer_step_inputs(self.space, &wt_next, family),
                };
                self.u = imp.coordinates(k, &sigma);
                imp.correct(&mut pred, &self.u);
                pred
            }
            (Some((_, k)), None) => {
                self.u = self.explicit_coordinates();
                let ctrl = k.forcing_from_coordinates(&self.u);
                st.solve(&st.rhs(&self.w, &load, Some(&ctrl)), g.as_deref())
            }
        };
        self.w = w_next;
        self.wt = wt_next;
        self.steps_taken += 1;
    }
}

/// As [`run_pair_on`] with explicit initial fields.
pub fn run_pair_from(cfg: &SimConfig, setup: &Setup, w0: Vec<f64>, wt0: Vec<f64>) -> Result<SimRun, SimError> {
    let space = &setup.space;
    let mut it = PairIntegrator::new(cfg, setup, w0, wt0)?;
    let track_exact = matches!(cfg.preset, Preset::Example2(_));
    let steps = cfg.steps();
    let mut run = SimRun {
        samples: Vec::with_capacity(steps + 1),
        controls: Vec::with_capacity(steps + 1),
        snapshots: Vec::new(),
        exact_errors: Vec::new(),
        final_w: Vec::new(),
        final_wt: Vec::new(),
    };
    let mut snapshot_times: Vec<f64> = cfg.snapshot_times.iter().copied().filter(|t| *t >= 0.0).collect();
    snapshot_times.sort_by(f64::total_cmp);
    let mut next_snapshot = 0;

    let record = |run: &mut SimRun, it: &PairIntegrator, next_snapshot: &mut usize| -> Result<(), SimError> {
        let (t, w, wt, u) = (it.t(), it.w(), it.wt(), it.u());
        let z: Vec<f64> = w.iter().zip(wt).map(|(a, b)| a - b).collect();
        let norm_w = guard(t, "w", space.norm_h(w))?;
        let norm_wt = guard(t, "w_t", space.norm_h(wt))?;
        run.samples.push(Sample { t, norm_z: space.norm_h(&z), norm_wt, norm_w, norm_u: u.norm(), norm_wt_v: space.seminorm_v(wt) });
        run.controls.push((t, u.iter().copied().collect()));
        if track_exact {
            let exact = interpolate(space.mesh(), |x| example2_exact(t, x));
            let dist = |a: &[f64]| space.norm_h(&a.iter().zip(&exact).map(|(p, q)| p - q).collect::<Vec<_>>());
            run.exact_errors.push(ExactError { t, target: dist(wt), state: dist(w) });
        }
        while *next_snapshot < snapshot_times.len() && snapshot_times[*next_snapshot] <= t + 0.5 * cfg.dt {
            let ctrl = match it.feedback() {
                Some(k) if u.len() == k.count() => k.forcing_from_coordinates(u),
                _ => vec![0.0; space.dim()],
            };
            let stream = it.stepper().stream();
            run.snapshots.push(Snapshot {
                t,
                w: w.to_vec(),
                wt: wt.to_vec(),
                psi_z: stream.stream_function(space, &z),
                psi_ctrl: stream.stream_function(space, &ctrl),
                z: z.clone(),
            });
            *next_snapshot += 1;
        }
        Ok(())
    };
    record(&mut run, &it, &mut next_snapshot)?;
    for _ in 0..steps {
        it.advance();
        record(&mut run, &it, &mut next_snapshot)?;
    }
    let (w, wt) = it.into_fields();
    run.final_w = w;
    run.final_wt = wt;
    Ok(run)
}

/// First Dirichlet eigenfunction-like initial data for heat-flow checks:
/// `sin(pi x1 / l1) sin(pi x2 / l2)` on a rectangle.
pub fn rectangle_ground_mode(l1: f64, l2: f64) -> impl Fn(Point) -> f64 {
    move |x| (PI * x[0] / l1).sin() * (PI * x[1] / l2).sin()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn example1_forcing_values() {
        assert_eq!(forcing_example1(0.0, [1.0, 1.0]), 2.0);
        // x2 - 0.3 + sin(0)/10 = 0 on the line x2 = 0.3
        assert_eq!(forcing_example1(0.0, [0.5, 0.3]), 0.0);
        assert_eq!(example1_initial([0.0, 0.7]), 1.0);
    }

    #[test]
    fn example2_profiles() {
        assert_eq!(example2_exact(0.0, [0.9, 0.1]), 0.0);
        let (t, x) = (0.7, [0.2, 0.3]);
        let fd = (example2_exact(t + 1e-6, x) - example2_exact(t - 1e-6, x)) / 2e-6;
        assert!((fd - example2_exact_rate(t, x)).abs() < 1e-8);
        assert!((example2_exact_rate(t, x) - 2.0 * (1.4f64).cos() * (0.2 - 0.4)).abs() < 1e-15);
    }

    #[test]
    fn decay_of_exact_exponential() {
        let series: Vec<(f64, f64)> = (0..200).map(|k| (k as f64 * 0.05, (-2.0 * k as f64 * 0.05).exp())).collect();
        let fit = estimate_decay(&series).unwrap();
        assert!((fit.rate - 2.0).abs() < 1e-6);
        assert!(!fit.floor_reached);
    }

    #[test]
    fn decay_window_stops_at_floor() {
        let mut series: Vec<(f64, f64)> = (0..100).map(|k| (k as f64 * 0.4, (-k as f64 * 0.4).exp())).collect();
        // below 1e-16 the series oscillates
        for s in series.iter_mut().filter(|s| s.1 < 1e-16) {
            s.1 = 1e-16 * (1.0 + 0.9 * (7.0 * s.0).sin());
        }
        let fit = estimate_decay(&series).unwrap();
        assert!(fit.floor_reached);
        assert!((fit.rate - 1.0).abs() < 1e-9);
        assert!(fit.t_end < 32.0);
    }

    #[test]
    fn decay_rejects_short_or_empty_series() {
        assert!(estimate_decay(&[]).is_err());
        assert!(estimate_decay(&[(0.0, 0.0), (1.0, 0.0)]).is_err());
        let short: Vec<(f64, f64)> = (0..5).map(|k| (k as f64, 1.0)).collect();
        assert!(estimate_decay(&short).is_err());
    }

    #[test]
    fn config_validation() {
        let mut c = SimConfig::example1(0);
        assert!(c.validate().is_ok());
        c.nu = 0.0;
        assert!(c.validate().is_err());
        let c = SimConfig::example1(0).with_control(Mode::Controlled, 0, 1.0);
        assert!(c.validate().is_err());
        let c = SimConfig::example1(0).with_control(Mode::Controlled, 1, -1.0);
        assert!(c.validate().is_err());
    }

    #[test]
    fn zero_data_stays_zero() {
        let cfg = SimConfig {
            preset: Preset::Custom(CustomData { f: 0.0, g: 0.0, w0: 0.0, wt0: 0.0 }),
            mesh_h: 0.1,
            t_end: 0.02,
            ..SimConfig::example1(0)
        };
        let run = run_pair(&cfg).unwrap();
        assert!(run.final_w.iter().chain(&run.final_wt).all(|&v| v == 0.0));
        assert_eq!(run.samples.len(), cfg.steps() + 1);
    }

    #[test]
    fn identical_free_trajectories() {
        let cfg = SimConfig { mesh_h: 0.1, t_end: 0.2, ..SimConfig::example1(0) };
        let setup = Setup::for_config(&cfg).unwrap();
        let w0 = interpolate(setup.space.mesh(), example1_initial);
        let run = run_pair_from(&cfg, &setup, w0.clone(), w0).unwrap();
        assert!(run.samples.iter().all(|s| s.norm_z <= 1e-12));
    }

    #[test]
    fn heat_step_matches_eigenvalue_decay() {
        let cfg = SimConfig {
            domain: DomainSpec::unit_square(),
            mesh_h: 0.1,
            level: 1,
            preset: Preset::Custom(CustomData { f: 0.0, g: 0.0, w0: 0.0, wt0: 0.0 }),
            convection: false,
            dt: 1e-3,
            nu: 0.1,
            ..SimConfig::example1(0)
        };
        let setup = Setup::for_config(&cfg).unwrap();
        // discrete ground mode from the generalized eigenproblem
        let lambda1 = crate::control::xi_estimate(None, &setup.space).unwrap();
        let stepper = Stepper::new(&setup.space, cfg.nu, cfg.dt, cfg.preset, false).unwrap();
        let w = interpolate(setup.space.mesh(), rectangle_ground_mode(1.0, 1.0));
        let w1 = stepper.step(&w, 0.0, None);
        let ratio = setup.space.norm_h(&w1) / setup.space.norm_h(&w);
        let expect = (-cfg.nu * lambda1 * cfg.dt).exp();
        // the interpolated mode is close to, not exactly, the discrete eigenvector
        assert!((ratio - expect).abs() < 1e-5, "{ratio} vs {expect}");
    }

    #[test]
    fn free_heat_flow_is_monotone() {
        let cfg = SimConfig {
            mesh_h: 0.1,
            t_end: 0.4,
            preset: Preset::Custom(CustomData { f: 0.0, g: 0.0, w0: 1.0, wt0: 0.0 }),
            ..SimConfig::example1(0)
        };
        let run = run_pair(&cfg).unwrap();
        for pair in run.samples.windows(2).skip(1) {
            assert!(pair[1].norm_w <= pair[0].norm_w * (1.0 + 1e-12));
        }
    }
}
