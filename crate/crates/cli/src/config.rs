//! Run configuration read from a sectioned TOML file.
//!
//! Every key has a default, so an empty file is a valid (if slow) run. The
//! parsed value, with defaults filled in, is what gets echoed into manifests.

use std::path::Path;

use fpl_core::collision::CutoffFunction;
use fpl_core::diagnostics::{DiagnosticsConfig, MaxwellianSpec};
use fpl_core::dynamics::{random_initial_field, BiMaxwellian, SolverConfig};
use fpl_core::lattice::{choose_domain, GridSpec, VelocityField};
use fpl_core::weights::KernelParams;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSection {
    pub n_modes: usize,
    /// Half-width of the velocity box. When absent it is chosen from the
    /// initial data so the bounding Gaussian tail is below `domain_tolerance`.
    pub half_length: Option<f64>,
    pub domain_tolerance: f64,
}

impl Default for GridSection {
    fn default() -> Self {
        Self {
            n_modes: 16,
            half_length: None,
            domain_tolerance: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KernelSection {
    pub lambda: f64,
    /// Truncation radius of the kernel; defaults to the box half-width.
    pub trunc_radius: Option<f64>,
    pub quad_points: usize,
}

impl Default for KernelSection {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            trunc_radius: None,
            quad_points: 128,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TimeSection {
    /// Fixed step. When absent the solver picks a stable one.
    pub dt: Option<f64>,
    pub t_final: f64,
    pub output_stride: usize,
}

impl Default for TimeSection {
    fn default() -> Self {
        Self {
            dt: None,
            t_final: 1.0,
            output_stride: 10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CutoffKind {
    Identity,
    Smoothstep,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSection {
    pub padding: bool,
    pub epsilon_stability: f64,
    pub cutoff: CutoffKind,
    pub delta_chi: f64,
}

impl Default for SolverSection {
    fn default() -> Self {
        Self {
            padding: true,
            epsilon_stability: 0.25,
            cutoff: CutoffKind::Identity,
            delta_chi: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitialKind {
    Maxwellian,
    Bimaxwellian,
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitialSection {
    pub kind: InitialKind,
    pub rho: f64,
    pub velocity: [f64; 3],
    pub temperature: f64,
    /// Lobe centers sit at `+-shift e_1` for the bi-Maxwellian.
    pub shift: f64,
    pub seed: u64,
}

impl Default for InitialSection {
    fn default() -> Self {
        Self {
            kind: InitialKind::Bimaxwellian,
            rho: 1.0,
            velocity: [0.0; 3],
            temperature: 0.5,
            shift: 1.2,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiagnosticsSection {
    pub k_max: f64,
    pub l2_weight: f64,
}

impl Default for DiagnosticsSection {
    fn default() -> Self {
        let d = DiagnosticsConfig::default();
        Self {
            k_max: d.k_max,
            l2_weight: d.l2_weight,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub grid: GridSection,
    pub kernel: KernelSection,
    pub time: TimeSection,
    pub solver: SolverSection,
    pub initial: InitialSection,
    pub diagnostics: DiagnosticsSection,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Usage(format!("bad config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Replaces the seed of the random initial condition.
    pub fn with_seed(mut self, seed: Option<u64>) -> Self {
        if let Some(s) = seed {
            self.initial.seed = s;
        }
        self
    }

    /// Box half-width, either configured or chosen from the initial data.
    pub fn half_length(&self) -> Result<f64, CliError> {
        if let Some(l) = self.grid.half_length {
            return Ok(l);
        }
        let ic = &self.initial;
        let t = match ic.kind {
            InitialKind::Bimaxwellian => ic.temperature + ic.shift * ic.shift / 3.0,
            _ => ic.temperature,
        };
        let speed: f64 = ic.velocity.iter().map(|v| v * v).sum::<f64>().sqrt();
        let l = choose_domain(ic.rho, t, 1.0, 1.0, self.grid.domain_tolerance)
            .map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(l + speed)
    }

    pub fn grid(&self) -> Result<GridSpec<f64>, CliError> {
        GridSpec::new(self.grid.n_modes, self.half_length()?).map_err(|e| CliError::Usage(e.to_string()))
    }

    pub fn kernel(&self) -> Result<KernelParams, CliError> {
        let r = match self.kernel.trunc_radius {
            Some(r) => r,
            None => self.half_length()?,
        };
        KernelParams::new(self.kernel.lambda, r, self.kernel.quad_points)
            .map_err(|e| CliError::Usage(e.to_string()))
    }

    pub fn cutoff(&self) -> Result<CutoffFunction, CliError> {
        match self.solver.cutoff {
            CutoffKind::Identity => Ok(CutoffFunction::identity()),
            CutoffKind::Smoothstep => {
                let d = self.solver.delta_chi;
                if !(d > 0.0 && d < 0.5) {
                    return Err(CliError::Usage(format!("delta_chi must lie in (0, 1/2), got {d}")));
                }
                Ok(CutoffFunction::smoothstep(d))
            }
        }
    }

    pub fn solver(&self) -> Result<SolverConfig, CliError> {
        let cfg = SolverConfig {
            lambda: self.kernel.lambda,
            n_modes: self.grid.n_modes,
            half_length: self.half_length()?,
            trunc_radius: Some(self.kernel()?.trunc_radius),
            quad_points: self.kernel.quad_points,
            dt: self.time.dt,
            t_final: self.time.t_final,
            cutoff: self.cutoff()?,
            padding: self.solver.padding,
            epsilon_stability: self.solver.epsilon_stability,
            output_stride: self.time.output_stride,
            rng_seed: self.initial.seed,
            diagnostics: DiagnosticsConfig {
                k_max: self.diagnostics.k_max,
                l2_weight: self.diagnostics.l2_weight,
            },
        };
        cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(cfg)
    }

    pub fn initial_field(&self, grid: &GridSpec<f64>) -> Result<VelocityField<f64>, CliError> {
        let ic = &self.initial;
        let bad = |e: String| CliError::Usage(format!("bad initial data: {e}"));
        match ic.kind {
            InitialKind::Maxwellian => {
                let spec = MaxwellianSpec::new(ic.rho, ic.velocity, ic.temperature).map_err(|e| bad(e.to_string()))?;
                Ok(fpl_core::diagnostics::maxwellian_field(&spec, grid))
            }
            InitialKind::Bimaxwellian => {
                if !(ic.rho > 0.0 && ic.temperature > 0.0) {
                    return Err(bad("rho and temperature must be positive".into()));
                }
                Ok(BiMaxwellian {
                    rho: ic.rho,
                    shift: ic.shift,
                    t_each: ic.temperature,
                }
                .field(grid))
            }
            InitialKind::Random => Ok(random_initial_field(grid, ic.seed)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        assert_eq!(RunConfig::parse("").unwrap(), RunConfig::default());
    }

    #[test]
    fn sections_override_defaults() {
        let cfg = RunConfig::parse(
            "[grid]\nn_modes = 8\nhalf_length = 4.0\n[kernel]\nlambda = 0.5\n[initial]\nkind = \"maxwellian\"\n",
        )
        .unwrap();
        assert_eq!(cfg.grid.n_modes, 8);
        assert_eq!(cfg.kernel.lambda, 0.5);
        assert_eq!(cfg.initial.kind, InitialKind::Maxwellian);
        assert_eq!(cfg.kernel().unwrap().trunc_radius, 4.0);
    }

    #[test]
    fn unknown_keys_are_usage_errors() {
        assert!(matches!(RunConfig::parse("[grid]\nsize = 3\n"), Err(CliError::Usage(_))));
    }

    #[test]
    fn soft_potential_is_rejected() {
        let cfg = RunConfig::parse("[kernel]\nlambda = -3.0\n[grid]\nhalf_length = 5.0\n").unwrap();
        let err = cfg.kernel().unwrap_err().to_string();
        assert!(err.contains("soft potentials out of scope"), "{err}");
    }

    #[test]
    fn domain_is_chosen_when_absent() {
        let cfg = RunConfig::parse("[initial]\nkind = \"maxwellian\"\ntemperature = 1.0\n").unwrap();
        assert_eq!(cfg.half_length().unwrap(), 6.5);
    }
}
