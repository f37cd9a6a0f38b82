//! The `verify` battery: runs the cross-module invariants on a configured
//! instance and reports one pass/fail row per check.

use std::sync::Arc;

use crate::config::RunConfig;
use crate::constraint_hom::cross_check_sublevel;
use crate::density::PeriodicDensity;
use crate::error::Result;
use crate::lp_hom::p_sweep;
use crate::matrix::Matrix;
use crate::oracle::{sup_hom_laminate_2d, Oracle1D, OracleForm};
use crate::rng::SplitMix64;
use crate::sup_hom::{multi_cell_compare, solve_sup_cell};

#[derive(Clone, Debug)]
pub struct CheckRow {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

#[derive(Clone, Debug)]
pub struct VerifyReport {
    pub rows: Vec<CheckRow>,
}

impl VerifyReport {
    pub fn all_passed(&self) -> bool {
        self.rows.iter().all(|r| r.passed)
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        let width = self.rows.iter().map(|r| r.name.len()).max().unwrap_or(0);
        for row in &self.rows {
            out.push_str(&format!(
                "{:width$}  {}  {}\n",
                row.name,
                if row.passed { "PASS" } else { "FAIL" },
                row.detail,
                width = width
            ));
        }
        out
    }
}

fn random_z(density: &PeriodicDensity, rng: &mut SplitMix64, range: f64) -> Matrix {
    let dn = density.target_dim() * density.space_dim();
    Matrix::from_vec(
        density.target_dim(),
        density.space_dim(),
        (0..dn).map(|_| rng.uniform(-range, range)).collect(),
    )
    .unwrap()
}

/// Detect an exact oracle for the configured instance: any 1D profile, or a
/// 2D laminate (d = 1, coefficient varying along one axis only).
fn matching_oracle(cfg: &RunConfig) -> Option<(Oracle1D, Option<usize>)> {
    let form = match cfg.density.form.as_str() {
        "coeff_norm" => OracleForm::CoeffNorm,
        "coeff_psi" => OracleForm::CoeffPsi,
        _ => return None,
    };
    let m = cfg.density.coeff.m;
    let values = &cfg.density.coeff.values;
    let profile_from = |vals: Vec<f64>| {
        let breaks: Vec<f64> = (1..m).map(|k| k as f64 / m as f64).collect();
        Oracle1D::new(breaks, vals, form).ok()
    };
    if cfg.density.n == 1 {
        return profile_from(values.clone()).map(|o| (o, None));
    }
    if cfg.density.n == 2 && cfg.density.d == 1 {
        // axis 0 variation: values[i0 * m + i1] independent of i1
        let along_0 = (0..m).all(|i0| (1..m).all(|i1| values[i0 * m + i1] == values[i0 * m]));
        if along_0 {
            let profile: Vec<f64> = (0..m).map(|i0| values[i0 * m]).collect();
            return profile_from(profile).map(|o| (o, Some(0)));
        }
        let along_1 = (0..m).all(|i1| (1..m).all(|i0| values[i0 * m + i1] == values[i1]));
        if along_1 {
            let profile: Vec<f64> = (0..m).map(|i1| values[i1]).collect();
            return profile_from(profile).map(|o| (o, Some(1)));
        }
    }
    None
}

/// Run the full invariant battery. `Err` means a hard solver failure; a
/// failed check is a `FAIL` row, not an error.
pub fn run_battery(cfg: &RunConfig, seed_override: Option<u64>) -> Result<VerifyReport> {
    let seed = seed_override.unwrap_or(cfg.seed);
    let density = cfg.build_density()?;
    let grid = cfg.build_grid(None, None)?;
    let lp_opts = cfg.lp_options();
    let sup_opts = cfg.sup_options();
    let mut rows = Vec::new();

    // 1. Growth sandwich: sampled density bounds plus the homogenized value.
    {
        let mut rng = SplitMix64::new(seed ^ 0x67);
        let sampled = density.check_growth_sampled(200, 8.0, seed ^ 0x68);
        let mut hom_ok = true;
        let mut detail = format!(
            "density slacks: lower {:+.2e}, upper {:+.2e}",
            sampled.worst_lower, sampled.worst_upper
        );
        for _ in 0..3 {
            let z = random_z(&density, &mut rng, 2.0);
            let est = solve_sup_cell(&density, &grid, &z, &sup_opts)?;
            let norm = z.row_sum_norm();
            let tol = sup_opts.level_tolerance(&z);
            if est.value < density.alpha() * norm - tol
                || est.value > density.beta() * (norm + 1.0) + tol
            {
                hom_ok = false;
                detail = format!(
                    "homogenized value {} escapes the sandwich at |Z|={norm}",
                    est.value
                );
                break;
            }
        }
        rows.push(CheckRow {
            name: "growth sandwich",
            passed: sampled.passed() && hom_ok,
            detail,
        });
    }

    // 2. p-monotonicity of the Lp roots.
    {
        let mut rng = SplitMix64::new(seed ^ 0x11);
        let mut passed = true;
        let mut detail = String::from("nondecreasing within 2 tol_rel");
        let samples = if density.space_dim() == 1 { 3 } else { 2 };
        'outer: for _ in 0..samples {
            let z = random_z(&density, &mut rng, 2.0);
            let sweep = p_sweep(&density, &grid, &z, &cfg.solver.ps, &lp_opts)?;
            for w in sweep.windows(2) {
                let slack = 2.0 * lp_opts.tol_rel * (1.0 + w[1].value_root) + 1e-12;
                if w[0].value_root > w[1].value_root + slack {
                    passed = false;
                    detail = format!(
                        "root({}) = {} > root({}) = {}",
                        w[0].p, w[0].value_root, w[1].p, w[1].value_root
                    );
                    break 'outer;
                }
            }
        }
        rows.push(CheckRow {
            name: "p-monotonicity",
            passed,
            detail,
        });
    }

    // 3. Lp roots never exceed the direct value; the direct corrector seeds
    // the sweep, making the bound structural for every builtin form.
    {
        let mut rng = SplitMix64::new(seed ^ 0x22);
        let z = random_z(&density, &mut rng, 2.0);
        let direct = solve_sup_cell(&density, &grid, &z, &sup_opts)?;
        let sweep = crate::lp_hom::p_sweep_from(
            &density,
            &grid,
            &z,
            &cfg.solver.ps,
            &lp_opts,
            Some(&direct.corrector),
        )?;
        let slack = 2e-3 * (1.0 + z.row_sum_norm());
        let worst = sweep
            .iter()
            .map(|e| e.value_root - direct.value)
            .fold(f64::NEG_INFINITY, f64::max);
        rows.push(CheckRow {
            name: "lp-vs-sup inequality",
            passed: worst <= slack,
            detail: format!("max(root - value) = {worst:+.3e} (slack {slack:.1e})"),
        });
    }

    // 4. Single-cell vs multi-cell agreement.
    {
        let mut rng = SplitMix64::new(seed ^ 0x33);
        let z = random_z(&density, &mut rng, 1.5);
        let res = grid.resolution().min(32);
        let estimates = multi_cell_compare(&density, &z, &[1, 2], res, &sup_opts)?;
        let tol = 3.0 * sup_opts.level_tolerance(&z);
        let diff = (estimates[0].value - estimates[1].value).abs();
        let nesting = estimates[1].value <= estimates[0].value + tol;
        rows.push(CheckRow {
            name: "single-vs-multi-cell",
            passed: diff <= tol && nesting,
            detail: format!("|v(1) - v(2)| = {diff:.3e} (tol {tol:.1e})"),
        });
    }

    // 5. Oracle comparison, when an exact reference exists.
    {
        let row = match matching_oracle(cfg) {
            None => CheckRow {
                name: "oracle comparison",
                passed: true,
                detail: "skipped: no exact oracle for this instance".into(),
            },
            Some((oracle, laminate_axis)) => {
                let (z, reference) = match laminate_axis {
                    None => {
                        let z = Matrix::scalar(1.0);
                        (z, oracle.sup_hom_1d(1.0)?)
                    }
                    Some(axis) => {
                        let mut zdata = vec![0.0, 0.0];
                        zdata[axis] = 1.0;
                        let z = Matrix::from_vec(1, 2, zdata).unwrap();
                        let form = oracle.form();
                        // The oracle's layer axis is its own first component.
                        (z, sup_hom_laminate_2d(&oracle, [1.0, 0.0], form)?)
                    }
                };
                let est = solve_sup_cell(&density, &grid, &z, &sup_opts)?;
                let tol = if density.space_dim() == 1 { 2e-3 } else { 2e-2 };
                let diff = (est.value - reference).abs();
                CheckRow {
                    name: "oracle comparison",
                    passed: diff <= tol,
                    detail: format!("|value - oracle| = {diff:.3e} (oracle {reference:.6})"),
                }
            }
        };
        rows.push(row);
    }

    // 6. Effective-set cross-check at a moderate level.
    {
        let density = Arc::new(density);
        let dn = density.target_dim() * density.space_dim();
        let e0 = {
            let mut data = vec![0.0; dn];
            data[0] = 1.0;
            Matrix::from_vec(density.target_dim(), density.space_dim(), data).unwrap()
        };
        let level = solve_sup_cell(&density, &grid, &e0, &sup_opts)?
            .value
            .max(0.5);
        let dirs = crate::constraint_hom::directions_with_count(
            density.target_dim(),
            density.space_dim(),
            if dn == 1 { 2 } else { 8 },
        );
        let eff_opts = cfg.effective_set_options();
        let report = cross_check_sublevel(&density, &grid, level, &dirs, &eff_opts, &sup_opts)?;
        let tol = if dn == 1 { 2e-3 } else { 3e-2 };
        rows.push(CheckRow {
            name: "effective-set cross-check",
            passed: report.max_abs_diff <= tol + 2.0 * eff_opts.tol_t,
            detail: format!(
                "max route diff {:.3e} at level {level:.4}",
                report.max_abs_diff
            ),
        });
    }

    Ok(VerifyReport { rows })
}
