//! Named self-check suites behind `fpl verify`.

use fpl_core::collision::oracle::q_hat_brute_force;
use fpl_core::collision::{CollisionWorkspace, CutoffFunction};
use fpl_core::conserve::{invariant, N_INVARIANTS};
use fpl_core::diagnostics::{maxwellian_field, DiagnosticsConfig, MaxwellianSpec};
use fpl_core::dynamics::{automatic_dt, random_initial_field, run_with, BiMaxwellian, LandauRhs, Rhs, StepPlan};
use fpl_core::lattice::{forward_transform, GridSpec, VelocityField};
use fpl_core::weights::{build_table, KernelParams};
use fpl_core::Record;

use crate::analyze::{drift, entropy_violations, Row};
use crate::CliError;

pub const SUITES: [&str; 3] = ["oracle", "maxwellian", "relaxation"];

/// One line of the pass/fail table.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub limit: f64,
    pub pass: bool,
}

impl Check {
    fn at_most(name: impl Into<String>, value: f64, limit: f64) -> Self {
        Self {
            name: name.into(),
            value,
            limit,
            pass: value <= limit,
        }
    }
}

fn numerical(e: impl std::fmt::Display) -> CliError {
    CliError::Numerical(e.to_string())
}

/// FFT route against the mode double sum, and exactness of the conserved
/// moments of the corrected operator, on a random positive field at N = 8.
pub fn oracle(seed: u64) -> Result<Vec<Check>, CliError> {
    let grid = GridSpec::<f64>::new(8, 4.0).map_err(numerical)?;
    let g = random_initial_field(&grid, seed);
    let mut checks = Vec::new();
    for lambda in [0.0, 0.5, 1.0] {
        let table = build_table(&grid, &KernelParams::for_grid(lambda, &grid)?)?;
        let mut spec = forward_transform(&g).map_err(numerical)?;
        spec.drop_nyquist();
        let mut ws = CollisionWorkspace::<f64>::new(&table, true);
        let fast = ws.q_hat(&spec).map_err(numerical)?;
        let slow = q_hat_brute_force(&spec, &table).map_err(numerical)?;
        let diff: f64 = fast
            .coeffs()
            .iter()
            .zip(slow.coeffs())
            .map(|(a, b)| (a - b).norm_sqr())
            .sum::<f64>()
            .sqrt()
            * grid.cell_volume().sqrt();
        checks.push(Check::at_most(
            format!("fft vs double sum, lambda {lambda}"),
            diff / slow.l2_norm(),
            1e-10,
        ));

        let mut rhs = LandauRhs::<f64>::new(&table, true, CutoffFunction::identity())?;
        let q = rhs.eval(&g)?;
        checks.push(Check::at_most(
            format!("conserved moments of Q_c, lambda {lambda}"),
            worst_moment(&q),
            1e-12,
        ));
    }
    Ok(checks)
}

/// Largest `|int phi_k q| / int |phi_k q|` over the collision invariants.
fn worst_moment(q: &VelocityField<f64>) -> f64 {
    let grid = q.grid();
    (0..N_INVARIANTS)
        .map(|k| {
            let (mut s, mut a) = (0.0, 0.0);
            for (i, &x) in q.values().iter().enumerate() {
                let t = invariant(k, grid.velocity(i)) * x;
                s += t;
                a += t.abs();
            }
            if a == 0.0 {
                0.0
            } else {
                s.abs() / a
            }
        })
        .fold(0.0, f64::max)
}

/// `||Q_u(M, M)||_2` for the standard Maxwellian at increasing N.
pub fn maxwellian() -> Result<Vec<Check>, CliError> {
    let spec = MaxwellianSpec::standard();
    let mut checks = Vec::new();
    let mut previous = f64::INFINITY;
    for n in [8, 16, 32] {
        let grid = GridSpec::<f64>::new(n, 6.5).map_err(numerical)?;
        let table = build_table(&grid, &KernelParams::for_grid(1.0, &grid)?)?;
        let mut ws = CollisionWorkspace::<f64>::new(&table, true);
        let m = maxwellian_field(&spec, &grid);
        let eps = ws
            .q_unconserved(&m, &CutoffFunction::identity())
            .map_err(numerical)?
            .l2_norm();
        let limit = previous;
        checks.push(Check {
            name: format!("eps(N = {n}) below previous"),
            value: eps,
            limit,
            pass: eps < limit,
        });
        previous = eps;
    }
    Ok(checks)
}

/// Short bi-Maxwellian relaxation at N = 16: conservation, decay of the
/// distance to equilibrium, entropy monotonicity and the negative part.
pub fn relaxation() -> Result<Vec<Check>, CliError> {
    let grid = GridSpec::<f64>::new(16, 6.5).map_err(numerical)?;
    let table = build_table(&grid, &KernelParams::for_grid(1.0, &grid)?)?;
    let g0 = BiMaxwellian {
        rho: 1.0,
        shift: 1.2,
        t_each: 0.5,
    }
    .field(&grid);
    let mut rhs = LandauRhs::<f64>::new(&table, true, CutoffFunction::identity())?;
    let dt = automatic_dt(rhs.workspace(), 1.0, &g0)?;
    let epsilon = 0.25;
    let mut records: Vec<Record> = Vec::new();
    run_with(
        &mut rhs,
        StepPlan::new(0.02, dt),
        epsilon,
        5,
        &DiagnosticsConfig::default(),
        g0,
        &mut records,
    )?;
    let rows: Vec<Row> = records
        .iter()
        .map(|r| Row {
            t: r.t,
            rho: r.rho,
            velocity: r.velocity,
            temperature_raw: r.temperature_raw,
            entropy: r.entropy,
            dist_to_eq: r.dist_to_eq,
        })
        .collect();
    let first = records.first().map_or(f64::NAN, |r| r.dist_to_eq);
    let last = records.last().map_or(f64::NAN, |r| r.dist_to_eq);
    let worst_neg = records.iter().map(|r| r.neg_ratio).fold(0.0, f64::max);
    Ok(vec![
        Check::at_most("max moment drift", drift(&rows).max(), 1e-10),
        Check::at_most("final / initial distance to equilibrium", last / first, 1.0 - 1e-6),
        Check::at_most("entropy increases", entropy_violations(&rows) as f64, 0.0),
        Check::at_most("max negative-part ratio", worst_neg, epsilon),
    ])
}

/// Runs one suite, or all of them when `name` is `None`.
pub fn run_suites(name: Option<&str>, seed: u64) -> Result<Vec<(String, Vec<Check>)>, CliError> {
    let selected: Vec<&str> = match name {
        None => SUITES.to_vec(),
        Some(s) if SUITES.contains(&s) => vec![s],
        Some(s) => {
            return Err(CliError::Usage(format!(
                "unknown suite {s:?}; available suites: {}",
                SUITES.join(", ")
            )))
        }
    };
    selected
        .into_iter()
        .map(|s| {
            let checks = match s {
                "oracle" => oracle(seed)?,
                "maxwellian" => maxwellian()?,
                _ => relaxation()?,
            };
            Ok((s.to_string(), checks))
        })
        .collect()
}

/// Prints the pass/fail table and fails if any check failed.
pub fn verify(name: Option<&str>, seed: u64) -> Result<(), CliError> {
    let results = run_suites(name, seed)?;
    let mut failed = 0;
    for (suite, checks) in &results {
        for c in checks {
            println!(
                "{:<4} {suite:<10} {:<44} {:>11.3e} (limit {:.3e})",
                if c.pass { "PASS" } else { "FAIL" },
                c.name,
                c.value,
                c.limit
            );
            failed += usize::from(!c.pass);
        }
    }
    if failed > 0 {
        return Err(CliError::Numerical(format!("{failed} check(s) failed")));
    }
    Ok(())
}
