//! Acceptance suite: cross-checks every solver route against the exact
//! oracles and the structural invariants, one test per criterion, with the
//! stated tolerances pinned in code. Each test prints a single pass/fail
//! line.

use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use suphom_core::config::RunConfig;
use suphom_core::constraint_hom::{
    convexity_midpoint_check, cross_check_sublevel, directions_with_count, effective_set,
    ConstraintMap, EffectiveSetOptions,
};
use suphom_core::density::Coefficient;
use suphom_core::grid::{field_inner, CellGrid, CellTensorField, NodeField, PoissonOptions};
use suphom_core::lp_hom::{
    energy_and_gradient, macro_sup_limit, p_sweep, solve_lp_cell, LpOptions,
};
use suphom_core::matrix::Matrix;
use suphom_core::oracle::{sup_hom_laminate_2d, Oracle1D, OracleForm};
use suphom_core::rng::SplitMix64;
use suphom_core::sup_hom::{multi_cell_compare, solve_sup_cell, FeasOptions, SupOptions};
use suphom_core::PeriodicDensity;

// The stated runtime budgets are per criterion, so the timed bodies run
// exclusively even when the test harness is multi-threaded.
static GATE: std::sync::Mutex<()> = std::sync::Mutex::new(());

fn gate() -> std::sync::MutexGuard<'static, ()> {
    GATE.lock().unwrap_or_else(|poisoned| poisoned.into_inner())
}

fn conclude(num: usize, name: &str, ok: bool, detail: String) {
    println!(
        "acceptance criterion {num} ({name}): {}",
        if ok { "PASS" } else { "FAIL" }
    );
    assert!(ok, "criterion {num} ({name}): {detail}");
}

fn config_path(name: &str) -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../configs")
        .join(name)
}

fn harmonic_density() -> PeriodicDensity {
    RunConfig::from_path(&config_path("harmonic1d.json"))
        .unwrap()
        .build_density()
        .unwrap()
}

fn laminate_density() -> PeriodicDensity {
    RunConfig::from_path(&config_path("laminate2d.json"))
        .unwrap()
        .build_density()
        .unwrap()
}

#[test]
fn criterion_1_harmonic_mean_reproduction() {
    let _exclusive = gate();
    let start = Instant::now();
    let density = harmonic_density();
    let grid = CellGrid::new(1, 1, 64).unwrap();
    let est = solve_sup_cell(
        &density,
        &grid,
        &Matrix::scalar(1.0),
        &SupOptions::default(),
    )
    .unwrap();
    let oracle = Oracle1D::harmonic_halves(OracleForm::CoeffNorm)
        .sup_hom_1d(1.0)
        .unwrap();

    let solver_ok = (est.value - 4.0 / 3.0).abs() <= 2e-3;
    let oracle_ok = (oracle - 4.0 / 3.0).abs() <= 1e-10;
    let time_ok = start.elapsed().as_secs_f64() < 5.0;
    conclude(
        1,
        "harmonic-mean reproduction",
        solver_ok && oracle_ok && time_ok,
        format!(
            "solver {} (target 4/3 +- 2e-3), oracle {} (+- 1e-10), elapsed {:.2}s (< 5s)",
            est.value,
            oracle,
            start.elapsed().as_secs_f64()
        ),
    );
}

#[test]
fn criterion_2_lp_monotonicity_and_closed_form() {
    let _exclusive = gate();
    let start = Instant::now();
    let density = harmonic_density();
    let grid = CellGrid::new(1, 1, 64).unwrap();
    let oracle = Oracle1D::harmonic_halves(OracleForm::CoeffNorm);
    let ps = [2.0, 4.0, 8.0, 16.0, 32.0];
    let opts = LpOptions::default();
    let mut rng = SplitMix64::new(2002);
    let mut detail = String::new();
    let mut ok = true;

    let mut zs: Vec<f64> = (0..10).map(|_| rng.uniform(-2.0, 2.0)).collect();
    zs.push(1.0); // the pinned reference point
    for z in zs {
        let sweep = p_sweep(&density, &grid, &Matrix::scalar(z), &ps, &opts).unwrap();
        for w in sweep.windows(2) {
            let slack = 2.0 * opts.tol_rel * (1.0 + w[1].value_root) + 1e-12;
            if w[0].value_root > w[1].value_root + slack {
                ok = false;
                detail = format!(
                    "z={z}: root({}) = {} above root({}) = {}",
                    w[0].p, w[0].value_root, w[1].p, w[1].value_root
                );
            }
        }
        for (idx, p) in [(0usize, 2.0), (1, 4.0)] {
            let reference = oracle.lp_hom_1d_closed_form(z, p).unwrap();
            if (sweep[idx].value_root - reference).abs() > 1e-4 {
                ok = false;
                detail = format!(
                    "z={z}, p={p}: solver {} vs closed form {reference}",
                    sweep[idx].value_root
                );
            }
        }
        if z == 1.0
            && ((sweep[0].value_root - 1.26491).abs() > 1e-4
                || (sweep[1].value_root - 1.30885).abs() > 1e-4)
        {
            ok = false;
            detail = format!(
                "pinned values at z=1: p2 {} (1.26491), p4 {} (1.30885)",
                sweep[0].value_root, sweep[1].value_root
            );
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    if elapsed >= 30.0 {
        ok = false;
        detail = format!("elapsed {elapsed:.1}s (< 30s)");
    }
    conclude(2, "Lp monotonicity + closed form", ok, detail);
}

#[test]
fn criterion_3_p_to_infinity_convergence() {
    let _exclusive = gate();
    let start = Instant::now();
    let density = harmonic_density();
    let grid = CellGrid::new(1, 1, 256).unwrap();
    let ps = [2.0, 4.0, 8.0, 16.0, 32.0];
    let sweep = p_sweep(
        &density,
        &grid,
        &Matrix::scalar(1.0),
        &ps,
        &LpOptions::default(),
    )
    .unwrap();
    let direct = solve_sup_cell(
        &density,
        &grid,
        &Matrix::scalar(1.0),
        &SupOptions::default(),
    )
    .unwrap();

    let gaps: Vec<f64> = sweep.iter().map(|e| direct.value - e.value_root).collect();
    let positive = gaps.iter().all(|g| *g > 0.0);
    let decreasing = gaps.windows(2).all(|w| w[1] < w[0]);
    let terminal = *gaps.last().unwrap();
    let time_ok = start.elapsed().as_secs_f64() < 60.0;
    conclude(
        3,
        "p->infinity convergence",
        positive && decreasing && terminal < 1e-2 && time_ok,
        format!(
            "gaps {gaps:?}; positive={positive}, decreasing={decreasing}, terminal={terminal:.3e} (< 1e-2), elapsed {:.1}s",
            start.elapsed().as_secs_f64()
        ),
    );
}

#[test]
fn criterion_4_single_vs_multi_cell() {
    let _exclusive = gate();
    let start = Instant::now();
    let density = harmonic_density();
    let opts = SupOptions::default();
    let mut ok = true;
    let mut detail = String::new();

    let z1 = Matrix::scalar(1.0);
    let estimates = multi_cell_compare(&density, &z1, &[1, 2, 3], 64, &opts).unwrap();
    let tol = 3.0 * opts.level_tolerance(&z1);
    for est in &estimates {
        if (est.value - estimates[0].value).abs() > tol {
            ok = false;
            detail = format!(
                "j={} value {} vs j=1 value {}",
                est.j, est.value, estimates[0].value
            );
        }
    }

    let mut rng = SplitMix64::new(4004);
    for _ in 0..5 {
        let z = Matrix::scalar(rng.uniform(-2.0, 2.0));
        let pair = multi_cell_compare(&density, &z, &[1, 2], 64, &opts).unwrap();
        let tol = 3.0 * opts.level_tolerance(&z);
        if pair[1].value > pair[0].value + tol {
            ok = false;
            detail = format!(
                "nesting broken at z={:?}: v(2)={} > v(1)={}",
                z.data(),
                pair[1].value,
                pair[0].value
            );
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    if elapsed >= 60.0 {
        ok = false;
        detail = format!("elapsed {elapsed:.1}s (< 60s)");
    }
    conclude(4, "single vs multi-cell", ok, detail);
}

#[test]
fn criterion_5_laminate_anisotropy() {
    let _exclusive = gate();
    let start = Instant::now();
    let density = laminate_density();
    let grid = CellGrid::new(2, 1, 32).unwrap();
    let opts = SupOptions::default();
    let profile = Oracle1D::harmonic_halves(OracleForm::CoeffNorm);

    let along = Matrix::from_vec(1, 2, vec![1.0, 0.0]).unwrap();
    let est_along = solve_sup_cell(&density, &grid, &along, &opts).unwrap();
    let oracle_along = sup_hom_laminate_2d(&profile, [1.0, 0.0], OracleForm::CoeffNorm).unwrap();

    let across = Matrix::from_vec(1, 2, vec![0.0, 1.0]).unwrap();
    let est_across = solve_sup_cell(&density, &grid, &across, &opts).unwrap();
    let oracle_across = sup_hom_laminate_2d(&profile, [0.0, 1.0], OracleForm::CoeffNorm).unwrap();

    let ok_along =
        (est_along.value - 4.0 / 3.0).abs() <= 2e-2 && (oracle_along - 4.0 / 3.0).abs() < 1e-10;
    let ok_across = (est_across.value - 2.0).abs() <= 2e-2 && (oracle_across - 2.0).abs() < 1e-10;
    let time_ok = start.elapsed().as_secs_f64() < 300.0;
    conclude(
        5,
        "laminate anisotropy",
        ok_along && ok_across && time_ok,
        format!(
            "value(1,0) = {} (4/3 +- 2e-2), value(0,1) = {} (2 +- 2e-2), elapsed {:.1}s (< 300s)",
            est_along.value,
            est_across.value,
            start.elapsed().as_secs_f64()
        ),
    );
}

#[test]
fn criterion_6_effective_set_identity() {
    let _exclusive = gate();
    let start = Instant::now();
    let mut ok = true;
    let mut detail = String::new();

    // 1D: both routes give the reciprocal-mean radius 0.75.
    {
        let density = Arc::new(harmonic_density());
        let grid = CellGrid::new(1, 1, 64).unwrap();
        let dirs = directions_with_count(1, 1, 2);
        let report = cross_check_sublevel(
            &density,
            &grid,
            1.0,
            &dirs,
            &EffectiveSetOptions {
                tol_t: 5e-4,
                ..Default::default()
            },
            &SupOptions::default(),
        )
        .unwrap();
        if report.max_abs_diff > 2e-3 {
            ok = false;
            detail = format!("1D route difference {}", report.max_abs_diff);
        }
        for row in &report.rows {
            if (row.radius_indicator - 0.75).abs() > 2e-3 {
                ok = false;
                detail = format!("1D radius {} (expected 0.75)", row.radius_indicator);
            }
        }
    }

    // 2D laminate: 64 directions, coarser tolerances, same identity.
    {
        let density = Arc::new(laminate_density());
        let grid = CellGrid::new(2, 1, 32).unwrap();
        let dirs = directions_with_count(1, 2, 64);
        let eff_opts = EffectiveSetOptions {
            tol_t: 5e-3,
            ..Default::default()
        };
        let sup_opts = SupOptions {
            tol_level_abs: Some(3e-3),
            ..Default::default()
        };
        let report =
            cross_check_sublevel(&density, &grid, 1.0, &dirs, &eff_opts, &sup_opts).unwrap();
        if report.max_abs_diff > 3e-2 {
            ok = false;
            detail = format!("2D route difference {}", report.max_abs_diff);
        }
    }

    let elapsed = start.elapsed().as_secs_f64();
    if elapsed >= 600.0 {
        ok = false;
        detail = format!("elapsed {elapsed:.1}s (< 600s)");
    }
    conclude(6, "effective-set identity", ok, detail);
}

#[test]
fn criterion_7_convexity_and_growth_of_homogenized_objects() {
    let _exclusive = gate();
    let mut ok = true;
    let mut detail = String::new();

    // Midpoint convexity of the effective body on 100 seeded direction pairs.
    {
        let radius = Coefficient::new(2, 2, vec![1.0, 1.0, 0.5, 0.5]).unwrap();
        let cmap = ConstraintMap::BallField { d: 1, radius };
        let grid = CellGrid::new(2, 1, 16).unwrap();
        let dirs = directions_with_count(1, 2, 16);
        let set = effective_set(&cmap, &grid, &dirs, &EffectiveSetOptions::default()).unwrap();
        let mut rng = SplitMix64::new(7007);
        let pairs: Vec<(usize, usize)> = (0..100)
            .map(|_| {
                let i = (rng.next_u64() % 16) as usize;
                let j = (rng.next_u64() % 16) as usize;
                (i, j)
            })
            .collect();
        let report =
            convexity_midpoint_check(&cmap, &grid, &set, &pairs, 2e-2, &FeasOptions::default())
                .unwrap();
        if !report.failures.is_empty() {
            ok = false;
            detail = format!(
                "{} of {} midpoints infeasible",
                report.failures.len(),
                report.checked
            );
        }
    }

    // Growth sandwich of the homogenized density at 50 seeded Z.
    {
        let density = harmonic_density();
        let grid = CellGrid::new(1, 1, 64).unwrap();
        let opts = SupOptions::default();
        let mut rng = SplitMix64::new(7008);
        for _ in 0..50 {
            let z = Matrix::scalar(rng.uniform(-2.0, 2.0));
            let est = solve_sup_cell(&density, &grid, &z, &opts).unwrap();
            let norm = z.row_sum_norm();
            let tol = opts.level_tolerance(&z);
            if est.value < density.alpha() * norm - tol
                || est.value > density.beta() * (norm + 1.0) + tol
            {
                ok = false;
                detail = format!("sandwich broken at |Z|={norm}: value {}", est.value);
            }
        }
    }
    conclude(7, "convexity and growth of homogenized objects", ok, detail);
}

#[test]
fn criterion_8_macroscopic_ess_sup_limit() {
    let _exclusive = gate();
    let density = harmonic_density();
    let grid = CellGrid::new(1, 1, 256).unwrap();
    let ps = [2.0, 4.0, 8.0, 16.0, 32.0];
    let pieces = vec![(Matrix::scalar(0.5), 0.5), (Matrix::scalar(1.0), 0.5)];
    let report = macro_sup_limit(
        &density,
        &grid,
        &pieces,
        &ps,
        &LpOptions::default(),
        &SupOptions::default(),
    )
    .unwrap();

    // The curve climbs toward the max of the piece values and ignores the
    // volume fractions: by p = 32 it has left the weighted average
    // 0.5 f(0.5) + 0.5 f(1) = 1.0 far behind.
    let target_ok = (report.target - 4.0 / 3.0).abs() < 5e-3;
    let increasing = report.combined_roots.windows(2).all(|w| w[1] > w[0]);
    let above_average = *report.combined_roots.last().unwrap() > 1.2;
    let below_target = *report.combined_roots.last().unwrap() <= report.target + 1e-9;
    println!(
        "  criterion 8 sub-checks: target={} increasing={increasing} above_weighted_average={above_average} below_target={below_target}",
        report.target
    );

    let gap_ok = report.terminal_gap < 2e-2;
    conclude(
        8,
        "macroscopic ess-sup limit",
        target_ok && increasing && above_average && below_target && gap_ok,
        format!(
            "terminal gap {:.4} at p = 32 against the 2e-2 threshold. The exact curve \
             (0.5 f_p(0.5) + 0.5 f_p(1))^(1/p) equals root_p(1) * (0.5 (1 + 0.5^p))^(1/p); \
             the weight factor 0.5^(1/32) = 0.97857 alone leaves a gap of ~0.0285 and the \
             closed-form terminal gap is 4/3 - 1.30237 = 0.0310, independent of any solver. \
             The gap first drops below 2e-2 near p = 48 (at p = 64 it is 0.0156), so the \
             threshold is unreachable at p = 32; the convergence-trend sub-checks above all hold.",
            report.terminal_gap
        ),
    );
}

#[test]
fn criterion_9_numerical_hygiene() {
    let _exclusive = gate();
    let mut ok = true;
    let mut detail = String::new();

    // (a) analytic vs central-difference gradient at 5 seeded states.
    {
        let density = harmonic_density();
        let grid = CellGrid::new(1, 1, 32).unwrap();
        let mut rng = SplitMix64::new(9009);
        for _ in 0..5 {
            let mut u = NodeField::zeros(&grid, 1);
            for v in u.data.iter_mut() {
                *v = rng.uniform(-0.3, 0.3);
            }
            let z = Matrix::scalar(rng.uniform(0.5, 1.5));
            let p = 4.0;
            let delta = 1e-4;
            let (_, grad) = energy_and_gradient(&density, &grid, &z, p, delta, &u).unwrap();
            let step = 1e-6;
            for idx in [1usize, 7, 19] {
                let mut up = u.clone();
                up.data[idx] += step;
                let (ep, _) = energy_and_gradient(&density, &grid, &z, p, delta, &up).unwrap();
                let mut um = u.clone();
                um.data[idx] -= step;
                let (em, _) = energy_and_gradient(&density, &grid, &z, p, delta, &um).unwrap();
                let fd = (ep - em) / (2.0 * step);
                let rel = (grad.data[idx] - fd).abs() / (1.0 + fd.abs());
                if rel > 1e-5 {
                    ok = false;
                    detail = format!("gradient mismatch {rel:.2e} at index {idx}");
                }
            }
        }
    }

    // (b) projection idempotence and orthogonality residuals below 1e-9.
    {
        let grid = CellGrid::new(2, 1, 16).unwrap();
        let mut rng = SplitMix64::new(9010);
        let w = CellTensorField {
            d: 1,
            n: 2,
            data: (0..grid.cell_count() * 2)
                .map(|_| rng.uniform(-1.0, 1.0))
                .collect(),
        };
        let opts = PoissonOptions::default();
        let (_, g1) = grid.project_to_gradients(&w, &opts).unwrap();
        let (_, g2) = grid.project_to_gradients(&g1, &opts).unwrap();
        let idem: f64 = g1
            .data
            .iter()
            .zip(&g2.data)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        if idem > 1e-9 {
            ok = false;
            detail = format!("projection not idempotent: {idem:.2e}");
        }
        let mut resid = w.clone();
        for (r, gv) in resid.data.iter_mut().zip(&g1.data) {
            *r -= gv;
        }
        for _ in 0..10 {
            let mut v = NodeField::zeros(&grid, 1);
            for val in v.data.iter_mut() {
                *val = rng.uniform(-1.0, 1.0);
            }
            let dv = grid.gradient(&v);
            let ip = field_inner(&resid, &dv) / (grid.cell_count() as f64);
            if ip.abs() > 1e-9 {
                ok = false;
                detail = format!("orthogonality residual {ip:.2e}");
            }
        }
    }

    // (c) interval characterization vs the constructive brute force at
    // N = 512 and three levels around the critical 4/3.
    {
        let oracle = Oracle1D::harmonic_halves(OracleForm::CoeffNorm);
        for level in [1.2, 4.0 / 3.0 + 1e-9, 1.5] {
            let exact = oracle.feasible_at_level(1.0, level);
            let brute = oracle.brute_force_feasible_1d(1.0, level, 512);
            if exact != brute {
                ok = false;
                detail = format!("feasibility classification differs at level {level}");
            }
        }
    }
    conclude(9, "numerical hygiene", ok, detail);
}

#[test]
fn lp_route_stays_below_direct_route() {
    let _exclusive = gate();
    // Companion inequality used throughout: every Lp root sits below the
    // direct value (up to solver tolerances).
    let density = harmonic_density();
    let grid = CellGrid::new(1, 1, 64).unwrap();
    let direct = solve_sup_cell(
        &density,
        &grid,
        &Matrix::scalar(1.0),
        &SupOptions::default(),
    )
    .unwrap();
    let sweep = p_sweep(
        &density,
        &grid,
        &Matrix::scalar(1.0),
        &[2.0, 8.0, 32.0],
        &LpOptions::default(),
    )
    .unwrap();
    for e in &sweep {
        assert!(
            e.value_root <= direct.value + 2e-3,
            "root({}) = {} above direct value {}",
            e.p,
            e.value_root,
            direct.value
        );
    }
    let lp2 = solve_lp_cell(
        &density,
        &grid,
        &Matrix::scalar(1.0),
        2.0,
        &LpOptions::default(),
    )
    .unwrap();
    assert!(lp2.estimate.value_root < direct.value);
}
