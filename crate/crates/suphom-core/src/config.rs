//! JSON run configuration: density description, grid, solver options and
//! the RNG seed for sampled checks.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::constraint_hom::EffectiveSetOptions;
use crate::density::{Coefficient, PeriodicDensity};
use crate::error::{Error, Result};
use crate::grid::{CellGrid, PoissonOptions};
use crate::lp_hom::LpOptions;
use crate::sup_hom::{FeasOptions, SupOptions};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CoeffConfig {
    pub m: usize,
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DensityConfig {
    pub n: usize,
    pub d: usize,
    pub form: String,
    pub coeff: CoeffConfig,
    pub alpha: f64,
    pub beta: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GridConfig {
    #[serde(default = "default_j")]
    pub j: usize,
    #[serde(rename = "N")]
    pub res: usize,
}

fn default_j() -> usize {
    1
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub tol_rel: f64,
    pub smoothing: f64,
    pub lp_max_iter: usize,
    pub tol_feas: f64,
    pub stall_window: usize,
    pub stall_rate: f64,
    pub feas_max_iter: usize,
    pub tol_level_scale: f64,
    pub tol_t: f64,
    pub poisson_rtol: f64,
    pub ps: Vec<f64>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        let lp = LpOptions::default();
        let feas = FeasOptions::default();
        let sup = SupOptions::default();
        let eff = EffectiveSetOptions::default();
        Self {
            tol_rel: lp.tol_rel,
            smoothing: lp.smoothing,
            lp_max_iter: lp.max_iter,
            tol_feas: feas.tol_feas,
            stall_window: feas.stall_window,
            stall_rate: feas.stall_rate,
            feas_max_iter: feas.max_iter,
            tol_level_scale: sup.tol_level_scale,
            tol_t: eff.tol_t,
            poisson_rtol: feas.poisson.rtol,
            ps: vec![2.0, 4.0, 8.0, 16.0, 32.0],
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunConfig {
    pub density: DensityConfig,
    pub grid: GridConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<String>,
}

impl RunConfig {
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let s = &self.solver;
        for (name, v) in [
            ("tol_rel", s.tol_rel),
            ("smoothing", s.smoothing),
            ("tol_feas", s.tol_feas),
            ("stall_rate", s.stall_rate),
            ("tol_level_scale", s.tol_level_scale),
            ("tol_t", s.tol_t),
            ("poisson_rtol", s.poisson_rtol),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidConfig(format!(
                    "solver.{name} must be positive"
                )));
            }
        }
        if self.grid.res < 2 {
            return Err(Error::InvalidConfig("grid.N must be at least 2".into()));
        }
        if self.grid.j == 0 {
            return Err(Error::InvalidConfig("grid.j must be positive".into()));
        }
        if !self.grid.res.is_multiple_of(self.density.coeff.m) {
            return Err(Error::InvalidConfig(format!(
                "coefficient resolution m={} must divide grid resolution N={}",
                self.density.coeff.m, self.grid.res
            )));
        }
        if s.ps.is_empty() || s.ps[0] <= 1.0 || s.ps.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidConfig(
                "solver.ps must be strictly increasing and exceed 1".into(),
            ));
        }
        match self.density.form.as_str() {
            "coeff_norm" | "coeff_psi" => Ok(()),
            other => Err(Error::InvalidConfig(format!(
                "unknown density form '{other}'"
            ))),
        }
    }

    pub fn build_density(&self) -> Result<PeriodicDensity> {
        let c = &self.density;
        let coeff = Coefficient::new(c.n, c.coeff.m, c.coeff.values.clone())?;
        match c.form.as_str() {
            "coeff_norm" => PeriodicDensity::coeff_norm(c.n, c.d, coeff, c.alpha, c.beta),
            "coeff_psi" => PeriodicDensity::coeff_psi(c.n, c.d, coeff, c.alpha, c.beta),
            other => Err(Error::InvalidConfig(format!(
                "unknown density form '{other}'"
            ))),
        }
    }

    /// Grid from the config, with optional CLI overrides.
    pub fn build_grid(&self, j: Option<usize>, res: Option<usize>) -> Result<CellGrid> {
        let grid = CellGrid::new(
            self.density.n,
            j.unwrap_or(self.grid.j),
            res.unwrap_or(self.grid.res),
        )?;
        grid.compatible_with_coefficient(self.density.coeff.m)?;
        Ok(grid)
    }

    pub fn lp_options(&self) -> LpOptions {
        LpOptions {
            tol_rel: self.solver.tol_rel,
            smoothing: self.solver.smoothing,
            max_iter: self.solver.lp_max_iter,
            ..LpOptions::default()
        }
    }

    pub fn feas_options(&self) -> FeasOptions {
        FeasOptions {
            tol_feas: self.solver.tol_feas,
            stall_window: self.solver.stall_window,
            stall_rate: self.solver.stall_rate,
            max_iter: self.solver.feas_max_iter,
            poisson: PoissonOptions {
                rtol: self.solver.poisson_rtol,
                ..PoissonOptions::default()
            },
        }
    }

    pub fn sup_options(&self) -> SupOptions {
        SupOptions {
            tol_level_scale: self.solver.tol_level_scale,
            tol_level_abs: None,
            feas: self.feas_options(),
        }
    }

    pub fn effective_set_options(&self) -> EffectiveSetOptions {
        EffectiveSetOptions {
            tol_t: self.solver.tol_t,
            feas: self.feas_options(),
        }
    }
}
