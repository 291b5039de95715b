//! Time integration of `dg/dt = Q_c(g, g)` with classical RK4.
//!
//! The loop checks the negative-part stability ratio after every step and
//! halts, rather than clips, when it exceeds the configured bound.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::collision::{CollisionError, CollisionWorkspace, CutoffFunction};
use crate::conserve::{ConservationOperator, ConserveError};
use crate::diagnostics::{
    maxwellian_field, moments, stability_ratio, weighted_moment, DiagnosticsConfig,
    DiagnosticsRecord, MaxwellianSpec,
};
use crate::lattice::{GridSpec, LatticeError, VelocityField};
use crate::num::Real;
use crate::weights::{KernelParams, WeightError, WeightTable};

#[derive(Debug, Error)]
pub enum DynamicsError {
    #[error("invalid solver configuration: {0}")]
    Config(String),
    #[error("non-finite value in RK4 stage {stage} at t = {t}; reduce dt")]
    NonFinite { stage: usize, t: f64 },
    #[error("initial data violate the stability condition: ratio {ratio:e} > {epsilon}")]
    InitialStability { ratio: f64, epsilon: f64 },
    #[error("stability ratio {ratio:e} exceeded {epsilon} at t = {t}")]
    StabilityBreach { t: f64, ratio: f64, epsilon: f64 },
    #[error("conservation lost in step increment: residual {residual:e}")]
    ConservationLost { residual: f64 },
    #[error("diagnostics sink failed: {0}")]
    Sink(String),
    #[error(transparent)]
    Collision(#[from] CollisionError),
    #[error(transparent)]
    Conserve(#[from] ConserveError),
    #[error(transparent)]
    Lattice(#[from] LatticeError),
    #[error(transparent)]
    Kernel(#[from] WeightError),
}

impl DynamicsError {
    /// Time at which a run was halted by the stability monitor.
    pub fn halt_time(&self) -> Option<f64> {
        match self {
            Self::StabilityBreach { t, .. } => Some(*t),
            _ => None,
        }
    }
}

/// Everything a run needs besides the initial data.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub lambda: f64,
    pub n_modes: usize,
    pub half_length: f64,
    /// Kernel truncation radius; `None` means `L`.
    pub trunc_radius: Option<f64>,
    pub quad_points: usize,
    /// Time step; `None` selects [`automatic_dt`] from the initial data.
    pub dt: Option<f64>,
    pub t_final: f64,
    pub cutoff: CutoffFunction,
    pub padding: bool,
    pub epsilon_stability: f64,
    pub output_stride: usize,
    pub rng_seed: u64,
    pub diagnostics: DiagnosticsConfig,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            n_modes: 16,
            half_length: 5.0,
            trunc_radius: None,
            quad_points: 128,
            dt: None,
            t_final: 1.0,
            cutoff: CutoffFunction::identity(),
            padding: true,
            epsilon_stability: 0.25,
            output_stride: 10,
            rng_seed: 0,
            diagnostics: DiagnosticsConfig::default(),
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<(), DynamicsError> {
        let bad = |m: String| Err(DynamicsError::Config(m));
        if !(self.epsilon_stability > 0.0 && self.epsilon_stability <= 0.25) {
            return bad(format!(
                "epsilon_stability must lie in (0, 1/4], got {}",
                self.epsilon_stability
            ));
        }
        if let Some(dt) = self.dt {
            if !(dt > 0.0 && dt.is_finite()) {
                return bad(format!("dt must be positive, got {dt}"));
            }
        }
        if !(self.t_final >= 0.0 && self.t_final.is_finite()) {
            return bad(format!("t_final must be nonnegative, got {}", self.t_final));
        }
        if self.output_stride == 0 {
            return bad("output_stride must be at least 1".into());
        }
        GridSpec::new(self.n_modes, self.half_length)?;
        self.kernel()?;
        Ok(())
    }

    pub fn grid(&self) -> Result<GridSpec<f64>, DynamicsError> {
        Ok(GridSpec::new(self.n_modes, self.half_length)?)
    }

    pub fn kernel(&self) -> Result<KernelParams, DynamicsError> {
        let r = self.trunc_radius.unwrap_or(self.half_length);
        Ok(KernelParams::new(self.lambda, r, self.quad_points)?)
    }
}

/// `0.5 dv^2 / (max(1, L)^lambda m_0(g0))`.
pub fn default_dt(grid: &GridSpec<f64>, lambda: f64, g0: &VelocityField<f64>) -> f64 {
    let dv = grid.dv();
    let m0 = weighted_moment(g0, 0.0).max(f64::MIN_POSITIVE);
    0.5 * dv * dv / (grid.half_length().max(1.0).powf(lambda) * m0)
}

/// Upper bound on the spectral radius of the linearized operator around
/// `g`: `max |a_bar| |xi|^2_max + max |c_bar|`, where `|a_bar|` is the
/// Gershgorin bound of the diffusion matrix.
pub fn stiffness_scale<T: Real>(
    ws: &mut CollisionWorkspace<T>,
    g: &VelocityField<T>,
) -> Result<f64, DynamicsError> {
    let (a, c) = ws.coefficient_fields(g)?;
    let grid = *ws.grid();
    // Largest |xi|^2 on the symmetric mode set.
    let k = (grid.n_modes() / 2 - 1) as f64;
    let xi2 = 3.0 * (k * grid.dual_spacing().to_f64_lossy()).powi(2);
    let mut a_max = 0.0f64;
    let mut c_max = 0.0f64;
    for i in 0..grid.len() {
        let m = |p: usize| a[p][i].to_f64_lossy();
        let rows = [
            m(0).abs() + m(1).abs() + m(2).abs(),
            m(1).abs() + m(3).abs() + m(4).abs(),
            m(2).abs() + m(4).abs() + m(5).abs(),
        ];
        a_max = a_max.max(rows[0].max(rows[1]).max(rows[2]));
        c_max = c_max.max(c[i].to_f64_lossy().abs());
    }
    Ok(a_max * xi2 + c_max)
}

/// Largest stable RK4 step on the negative real axis, `2.78 / stiffness`,
/// times a safety factor.
pub fn stiffness_dt(stiffness: f64, safety: f64) -> f64 {
    safety * 2.78 / stiffness
}

/// Safety factor applied to [`stiffness_dt`] when no step is configured.
pub const DT_SAFETY: f64 = 0.9;

/// The smaller of [`default_dt`] and the stiffness-limited step around `g0`.
/// On fine grids the stiffness limit is usually much the smaller one.
pub fn automatic_dt(
    ws: &mut CollisionWorkspace<f64>,
    lambda: f64,
    g0: &VelocityField<f64>,
) -> Result<f64, DynamicsError> {
    let grid = *ws.grid();
    let stiff = stiffness_dt(stiffness_scale(ws, g0)?, DT_SAFETY);
    Ok(default_dt(&grid, lambda, g0).min(stiff))
}

/// Right-hand side of the semi-discrete system.
pub trait Rhs<T: Real> {
    fn eval(&mut self, g: &VelocityField<T>) -> Result<VelocityField<T>, DynamicsError>;

    /// `||Q_u - Q_c||` from the most recent evaluation.
    fn last_correction_norm(&self) -> T {
        T::zero()
    }

    /// Spectral tail proxy from the most recent evaluation.
    fn last_tail_norm(&self) -> T {
        T::zero()
    }

    /// Projection used to audit step increments, if any.
    fn conservation(&self) -> Option<&ConservationOperator<T>> {
        None
    }
}

/// `g -> Lambda(A) Q_u(g, g)`.
pub struct LandauRhs<T: Real> {
    workspace: CollisionWorkspace<T>,
    conservation: ConservationOperator<T>,
    cutoff: CutoffFunction,
    last_correction: T,
}

impl<T: Real> LandauRhs<T> {
    pub fn new(table: &WeightTable, padding: bool, cutoff: CutoffFunction) -> Result<Self, DynamicsError> {
        let workspace = CollisionWorkspace::new(table, padding);
        let conservation = ConservationOperator::new(*workspace.grid())?;
        Ok(Self {
            workspace,
            conservation,
            cutoff,
            last_correction: T::zero(),
        })
    }

    pub fn workspace(&mut self) -> &mut CollisionWorkspace<T> {
        &mut self.workspace
    }

    pub fn grid(&self) -> &GridSpec<T> {
        self.workspace.grid()
    }

    /// The unconserved operator `Q_u(g, g)`.
    pub fn unconserved(&mut self, g: &VelocityField<T>) -> Result<VelocityField<T>, DynamicsError> {
        Ok(self.workspace.q_unconserved(g, &self.cutoff)?)
    }
}

impl<T: Real> Rhs<T> for LandauRhs<T> {
    fn eval(&mut self, g: &VelocityField<T>) -> Result<VelocityField<T>, DynamicsError> {
        let q_u = self.workspace.q_unconserved(g, &self.cutoff)?;
        let q_c = self.conservation.project(&q_u)?;
        self.last_correction = q_u.axpy(-T::one(), &q_c).l2_norm();
        if cfg!(debug_assertions) {
            let r = self.conservation.apply_a(&q_c)?;
            let raw: T = q_u.values().iter().map(|&x| x * x).sum::<T>().sqrt();
            let bound = T::lit(1e-12) * self.conservation.a_norm() * raw.max(T::min_positive_value());
            let worst = r.iter().fold(T::zero(), |m, x| m.max(x.abs()));
            debug_assert!(worst <= bound, "moment residual {worst:e} > {bound:e}");
        }
        Ok(q_c)
    }

    fn last_correction_norm(&self) -> T {
        self.last_correction
    }

    fn last_tail_norm(&self) -> T {
        self.workspace.last_tail_norm()
    }

    fn conservation(&self) -> Option<&ConservationOperator<T>> {
        Some(&self.conservation)
    }
}

/// Integration state with the most recent diagnostics record.
#[derive(Debug, Clone)]
pub struct SolverState<T> {
    pub t: T,
    pub g: VelocityField<T>,
    pub step_index: u64,
    pub diagnostics: Option<DiagnosticsRecord<T>>,
}

impl<T: Real> SolverState<T> {
    pub fn new(g: VelocityField<T>) -> Self {
        Self {
            t: T::zero(),
            g,
            step_index: 0,
            diagnostics: None,
        }
    }
}

fn check_stage<T: Real>(k: &VelocityField<T>, stage: usize, t: T) -> Result<(), DynamicsError> {
    if k.is_finite() {
        Ok(())
    } else {
        Err(DynamicsError::NonFinite {
            stage,
            t: t.to_f64_lossy(),
        })
    }
}

/// One classical RK4 step. The increment is checked against the
/// conservation constraints when the right-hand side provides them.
pub fn step_rk4<T: Real, R: Rhs<T> + ?Sized>(
    rhs: &mut R,
    state: &SolverState<T>,
    dt: T,
) -> Result<SolverState<T>, DynamicsError> {
    let g = &state.g;
    let half = dt * T::lit(0.5);
    let k1 = rhs.eval(g)?;
    check_stage(&k1, 1, state.t)?;
    let k2 = rhs.eval(&g.axpy(half, &k1))?;
    check_stage(&k2, 2, state.t)?;
    let k3 = rhs.eval(&g.axpy(half, &k2))?;
    check_stage(&k3, 3, state.t)?;
    let k4 = rhs.eval(&g.axpy(dt, &k3))?;
    check_stage(&k4, 4, state.t)?;

    let sixth = dt / T::lit(6.0);
    let two = T::lit(2.0);
    let mut incr = k1;
    for (((x, &b), &c), &d) in incr
        .values_mut()
        .iter_mut()
        .zip(k2.values())
        .zip(k3.values())
        .zip(k4.values())
    {
        *x = (*x + two * (b + c) + d) * sixth;
    }
    if let Some(op) = rhs.conservation() {
        let r = op.apply_a(&incr)?;
        let raw: T = incr.values().iter().map(|&x| x * x).sum::<T>().sqrt();
        let worst = r.iter().fold(T::zero(), |m, x| m.max(x.abs()));
        let bound = T::lit(1e-11) * op.a_norm() * raw;
        if worst > bound {
            return Err(DynamicsError::ConservationLost {
                residual: worst.to_f64_lossy(),
            });
        }
    }
    let next = g.axpy(T::one(), &incr);
    check_stage(&next, 4, state.t)?;
    Ok(SolverState {
        t: state.t + dt,
        g: next,
        step_index: state.step_index + 1,
        diagnostics: state.diagnostics,
    })
}

/// Receiver of diagnostics records. Implementations should buffer or write
/// without blocking the time loop for long.
pub trait DiagnosticsSink<T> {
    fn emit(&mut self, record: &DiagnosticsRecord<T>) -> Result<(), String>;
}

impl<T: Clone> DiagnosticsSink<T> for Vec<DiagnosticsRecord<T>> {
    fn emit(&mut self, record: &DiagnosticsRecord<T>) -> Result<(), String> {
        self.push(record.clone());
        Ok(())
    }
}

/// Discards every record.
pub struct NullSink;

impl<T> DiagnosticsSink<T> for NullSink {
    fn emit(&mut self, _: &DiagnosticsRecord<T>) -> Result<(), String> {
        Ok(())
    }
}

/// Step plan for a run: `steps` equal steps of size `dt` ending at `t_final`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepPlan {
    pub dt: f64,
    pub steps: u64,
}

impl StepPlan {
    /// Rounds `t_final / dt_max` up so the last step lands on `t_final`.
    pub fn new(t_final: f64, dt_max: f64) -> Self {
        if t_final == 0.0 {
            return Self { dt: dt_max, steps: 0 };
        }
        let steps = (t_final / dt_max - 1e-9).ceil().max(1.0) as u64;
        Self {
            dt: t_final / steps as f64,
            steps,
        }
    }
}

/// The Maxwellian sharing mass, bulk velocity and temperature with `g`.
pub fn equilibrium_of(g: &VelocityField<f64>) -> Result<(MaxwellianSpec, VelocityField<f64>), DynamicsError> {
    let m = moments(g);
    let spec = MaxwellianSpec::new(m.rho, m.velocity, m.temperature)?;
    let field = maxwellian_field(&spec, g.grid());
    Ok((spec, field))
}

/// Integrates from `g0` with a caller-supplied right-hand side.
///
/// Emits a record at `t = 0`, every `stride` steps, and at the end. On a
/// stability breach the offending record is emitted before the error.
pub fn run_with<R: Rhs<f64> + ?Sized>(
    rhs: &mut R,
    plan: StepPlan,
    epsilon: f64,
    stride: usize,
    diag: &DiagnosticsConfig,
    g0: VelocityField<f64>,
    sink: &mut dyn DiagnosticsSink<f64>,
) -> Result<SolverState<f64>, DynamicsError> {
    let ratio0 = stability_ratio(&g0);
    if ratio0 > epsilon {
        return Err(DynamicsError::InitialStability {
            ratio: ratio0,
            epsilon,
        });
    }
    let (_, eq) = equilibrium_of(&g0)?;
    let mut state = SolverState::new(g0);
    let record = |s: &SolverState<f64>, rhs: &R| {
        DiagnosticsRecord::compute(
            &s.g,
            s.t,
            s.step_index,
            &eq,
            diag,
            rhs.last_correction_norm(),
            rhs.last_tail_norm(),
        )
    };
    let mut emit = |s: &mut SolverState<f64>, rhs: &R| -> Result<(), DynamicsError> {
        let r = record(s, rhs)?;
        s.diagnostics = Some(r);
        sink.emit(&r).map_err(DynamicsError::Sink)
    };
    emit(&mut state, rhs)?;
    for n in 1..=plan.steps {
        state = step_rk4(rhs, &state, plan.dt)?;
        if n == plan.steps {
            // Land exactly on t_final despite accumulated rounding.
            state.t = plan.dt * plan.steps as f64;
        }
        let ratio = stability_ratio(&state.g);
        if ratio > epsilon {
            emit(&mut state, rhs)?;
            return Err(DynamicsError::StabilityBreach {
                t: state.t,
                ratio,
                epsilon,
            });
        }
        if n % stride as u64 == 0 || n == plan.steps {
            emit(&mut state, rhs)?;
        }
    }
    Ok(state)
}

/// Integrates `g0` under the Landau operator for `cfg`, using `table`.
pub fn run(
    cfg: &SolverConfig,
    table: &WeightTable,
    g0: VelocityField<f64>,
    sink: &mut dyn DiagnosticsSink<f64>,
) -> Result<SolverState<f64>, DynamicsError> {
    cfg.validate()?;
    let grid = cfg.grid()?;
    if !g0.grid().same_as(&grid) || table.grid().n_modes() != grid.n_modes() {
        return Err(DynamicsError::Config(
            "initial field, table, and configuration disagree on the grid".into(),
        ));
    }
    let mut rhs = LandauRhs::new(table, cfg.padding, cfg.cutoff)?;
    let dt = match cfg.dt {
        Some(dt) => dt,
        None => automatic_dt(rhs.workspace(), cfg.lambda, &g0)?,
    };
    run_with(
        &mut rhs,
        StepPlan::new(cfg.t_final, dt),
        cfg.epsilon_stability,
        cfg.output_stride,
        &cfg.diagnostics,
        g0,
        sink,
    )
}

/// Equal-weight sum of two Maxwellians at `+-shift e_1` with common
/// temperature `t_each`. Net mass `rho`, zero bulk velocity, and overall
/// temperature `t_each + shift^2 / 3`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BiMaxwellian {
    pub rho: f64,
    pub shift: f64,
    pub t_each: f64,
}

impl BiMaxwellian {
    pub fn field(&self, grid: &GridSpec<f64>) -> VelocityField<f64> {
        let a = MaxwellianSpec {
            rho0: 0.5 * self.rho,
            v0: [self.shift, 0.0, 0.0],
            t0: self.t_each,
        };
        let b = MaxwellianSpec {
            v0: [-self.shift, 0.0, 0.0],
            ..a
        };
        VelocityField::from_fn(*grid, |v| a.eval(v) + b.eval(v))
    }

    pub fn equilibrium(&self) -> MaxwellianSpec {
        MaxwellianSpec {
            rho0: self.rho,
            v0: [0.0; 3],
            t0: self.t_each + self.shift * self.shift / 3.0,
        }
    }
}

/// A positive mixture of three Maxwellians with random centers and
/// temperatures, scaled to unit mass. Deterministic in `seed`.
pub fn random_initial_field(grid: &GridSpec<f64>, seed: u64) -> VelocityField<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spread = 0.15 * grid.half_length();
    let parts: Vec<MaxwellianSpec> = (0..3)
        .map(|_| MaxwellianSpec {
            rho0: rng.gen_range(0.2..1.0),
            v0: std::array::from_fn(|_| rng.gen_range(-spread..spread)),
            t0: rng.gen_range(0.5..1.5) * (0.1 * grid.half_length()).powi(2).max(0.25),
        })
        .collect();
    let total: f64 = parts.iter().map(|p| p.rho0).sum();
    VelocityField::from_fn(*grid, |v| parts.iter().map(|p| p.eval(v)).sum::<f64>() / total)
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Zero;
    impl Rhs<f64> for Zero {
        fn eval(&mut self, g: &VelocityField<f64>) -> Result<VelocityField<f64>, DynamicsError> {
            Ok(VelocityField::zeros(*g.grid()))
        }
    }

    struct Blowup;
    impl Rhs<f64> for Blowup {
        fn eval(&mut self, g: &VelocityField<f64>) -> Result<VelocityField<f64>, DynamicsError> {
            Ok(g.map(|x| x / 0.0))
        }
    }

    fn grid() -> GridSpec<f64> {
        GridSpec::new(8, 4.0).unwrap()
    }

    #[test]
    fn zero_rhs_only_advances_time() {
        let g0 = random_initial_field(&grid(), 1);
        let s = SolverState::new(g0.clone());
        let next = step_rk4(&mut Zero, &s, 0.125).unwrap();
        assert_eq!(next.g, g0);
        assert_eq!(next.t, 0.125);
        assert_eq!(next.step_index, 1);
    }

    #[test]
    fn non_finite_stage_is_reported() {
        let s = SolverState::new(random_initial_field(&grid(), 2));
        match step_rk4(&mut Blowup, &s, 0.1) {
            Err(DynamicsError::NonFinite { stage: 1, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn zero_final_time_gives_one_record() {
        let g0 = random_initial_field(&grid(), 3);
        let mut sink: Vec<DiagnosticsRecord<f64>> = Vec::new();
        let plan = StepPlan::new(0.0, 0.1);
        let s = run_with(&mut Zero, plan, 0.25, 1, &DiagnosticsConfig::default(), g0.clone(), &mut sink)
            .unwrap();
        assert_eq!(sink.len(), 1);
        assert_eq!(s.g, g0);
        assert_eq!(s.t, 0.0);
    }

    #[test]
    fn initial_stability_is_checked() {
        let g0 = grid();
        let f = VelocityField::from_fn(g0, |v| if v[0] > 0.0 { 1.0 } else { -1.0 });
        let err = run_with(
            &mut Zero,
            StepPlan::new(1.0, 0.1),
            0.25,
            1,
            &DiagnosticsConfig::default(),
            f,
            &mut NullSink,
        )
        .unwrap_err();
        assert!(matches!(err, DynamicsError::InitialStability { .. }));
    }

    #[test]
    fn step_plan_lands_on_final_time() {
        let p = StepPlan::new(1.0, 0.3);
        assert_eq!(p.steps, 4);
        assert!((p.dt * 4.0 - 1.0).abs() < 1e-15);
        assert_eq!(StepPlan::new(1.0, 0.25).steps, 4);
    }

    #[test]
    fn config_validation() {
        let mut c = SolverConfig::default();
        c.validate().unwrap();
        c.epsilon_stability = 0.3;
        assert!(c.validate().is_err());
        c.epsilon_stability = 0.25;
        c.lambda = -3.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn bi_maxwellian_moments() {
        let g = GridSpec::new(24, 7.0).unwrap();
        let bm = BiMaxwellian {
            rho: 1.0,
            shift: 1.0,
            t_each: 0.6,
        };
        let m = moments(&bm.field(&g));
        assert!((m.rho - 1.0).abs() < 1e-6);
        assert!(m.velocity.iter().all(|v| v.abs() < 1e-12));
        assert!((m.temperature - bm.equilibrium().t0).abs() < 1e-5);
    }

    #[test]
    fn random_field_is_deterministic_and_positive() {
        let a = random_initial_field(&grid(), 9);
        let b = random_initial_field(&grid(), 9);
        assert_eq!(a, b);
        assert!(a.values().iter().all(|&x| x > 0.0));
    }
}
