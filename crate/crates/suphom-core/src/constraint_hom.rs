//! Homogenization of pointwise gradient constraints: the effective convex
//! body C_inf of macroscopic gradients Z that admit a periodic corrector
//! keeping Z + Dv(x) inside C(x) almost everywhere.
//!
//! C_inf is represented by directional radii t*(e) found by bisection on the
//! same feasibility engine as the supremal solver (feasibility is exactly a
//! membership oracle for C_inf, so directional bisection is the
//! membership-native construction). A convex-hull post-processing of the
//! sampled boundary is available for export.

use std::sync::Arc;

use crate::density::{Coefficient, PeriodicDensity, SublevelSet};
use crate::error::{Error, Result};
use crate::grid::{CellGrid, NodeField};
use crate::matrix::Matrix;
use crate::par;
use crate::rng::SplitMix64;
use crate::sup_hom::{
    feasibility_with_sets, solve_sup_cell, FeasOptions, FeasibilityResult, SupOptions,
};

/// An x-dependent convex gradient constraint C(x), periodic in x.
#[derive(Clone, Debug)]
pub enum ConstraintMap {
    /// C(x) = {W : f(x, W) <= level}.
    Sublevel {
        density: Arc<PeriodicDensity>,
        level: f64,
    },
    /// Row-sum-norm ball of piecewise-constant radius r(x).
    BallField { d: usize, radius: Coefficient },
    /// x-independent box (per-component intervals).
    FixedBox {
        n: usize,
        d: usize,
        lo: Vec<f64>,
        hi: Vec<f64>,
    },
}

impl ConstraintMap {
    pub fn dims(&self) -> (usize, usize) {
        match self {
            ConstraintMap::Sublevel { density, .. } => (density.target_dim(), density.space_dim()),
            ConstraintMap::BallField { d, radius } => (*d, radius.dim()),
            ConstraintMap::FixedBox { n, d, .. } => (*d, *n),
        }
    }

    pub fn set_at(&self, x: &[f64]) -> Result<SublevelSet> {
        match self {
            ConstraintMap::Sublevel { density, level } => density.sublevel(x, *level),
            ConstraintMap::BallField { radius, .. } => Ok(SublevelSet::Ball {
                radius: radius.at(x),
            }),
            ConstraintMap::FixedBox { lo, hi, .. } => Ok(SublevelSet::Box {
                lo: lo.clone(),
                hi: hi.clone(),
            }),
        }
    }

    /// Upper bound on the Frobenius extent of every C(x); sampled at the
    /// piecewise-constant subcell centers, which is exact for the builtin
    /// constructions.
    pub fn bounding_radius(&self) -> Result<f64> {
        let (_, n) = self.dims();
        let m = match self {
            ConstraintMap::Sublevel { density, .. } => density.coefficient().resolution(),
            ConstraintMap::BallField { radius, .. } => radius.resolution(),
            ConstraintMap::FixedBox { .. } => 1,
        };
        let mut worst = 0.0f64;
        let mut coords = vec![0usize; n];
        loop {
            let x: Vec<f64> = coords
                .iter()
                .map(|&c| (c as f64 + 0.5) / m as f64)
                .collect();
            worst = worst.max(self.set_at(&x)?.extent());
            // odometer over the m^n subcells
            let mut axis = 0;
            loop {
                if axis == n {
                    return Ok(worst);
                }
                coords[axis] += 1;
                if coords[axis] < m {
                    break;
                }
                coords[axis] = 0;
                axis += 1;
            }
        }
    }

    fn cell_sets(&self, grid: &CellGrid) -> Result<Vec<SublevelSet>> {
        let sets: Vec<Result<SublevelSet>> =
            par::map_collect_cells(grid.cell_count(), |c| self.set_at(&grid.cell_center(c)));
        sets.into_iter().collect()
    }
}

/// Does Z admit a periodic corrector staying inside C(x) at every cell?
/// This is the homogenized indicator being zero at Z.
pub fn indicator_feasible(
    cmap: &ConstraintMap,
    grid: &CellGrid,
    z: &Matrix,
    opts: &FeasOptions,
    warm: Option<&NodeField>,
) -> Result<FeasibilityResult> {
    let (d, n) = cmap.dims();
    if z.rows() != d || z.cols() != n {
        return Err(Error::InvalidArgument(
            "Z shape does not match the constraint map".into(),
        ));
    }
    let sets = cmap.cell_sets(grid)?;
    feasibility_with_sets(grid, z, &sets, opts, warm, None)
}

#[derive(Clone, Copy, Debug)]
pub struct EffectiveSetOptions {
    /// Per-direction bisection tolerance on t.
    pub tol_t: f64,
    pub feas: FeasOptions,
}

impl Default for EffectiveSetOptions {
    fn default() -> Self {
        Self {
            tol_t: 1e-3,
            feas: FeasOptions::default(),
        }
    }
}

/// Star-shaped (here: convex) body sampled by directional radii.
#[derive(Clone, Debug)]
pub struct EffectiveSet {
    pub directions: Vec<Matrix>,
    pub radii: Vec<f64>,
    /// Interior tolerance of the boundary classification.
    pub tol_t: f64,
    /// Directions where an undecided probe was resolved inward.
    pub conservative: Vec<bool>,
}

impl EffectiveSet {
    /// Convex hull of the sampled boundary for d*n = 2 (monotone chain),
    /// for export.
    pub fn hull_2d(&self) -> Option<Vec<(f64, f64)>> {
        if self.directions.iter().any(|e| e.rows() * e.cols() != 2) {
            return None;
        }
        let mut pts: Vec<(f64, f64)> = self
            .directions
            .iter()
            .zip(&self.radii)
            .map(|(e, t)| (t * e.data()[0], t * e.data()[1]))
            .collect();
        pts.sort_by(|a, b| a.partial_cmp(b).unwrap());
        pts.dedup();
        if pts.len() < 3 {
            return Some(pts);
        }
        let cross = |o: (f64, f64), a: (f64, f64), b: (f64, f64)| {
            (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
        };
        let mut hull: Vec<(f64, f64)> = Vec::new();
        for &p in pts.iter().chain(pts.iter().rev().skip(1)) {
            while hull.len() >= 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
                hull.pop();
            }
            hull.push(p);
        }
        hull.pop();
        Some(hull)
    }
}

/// Default direction sets: {-1, +1} for a scalar gradient, 64 equispaced
/// angles in the plane, Fibonacci-sphere (256) in three dimensions, seeded
/// uniform directions above that.
pub fn default_directions(d: usize, n: usize) -> Vec<Matrix> {
    let dn = d * n;
    match dn {
        1 => vec![Matrix::scalar(1.0), Matrix::scalar(-1.0)],
        2 => directions_with_count(d, n, 64),
        _ => directions_with_count(d, n, 256),
    }
}

pub fn directions_with_count(d: usize, n: usize, count: usize) -> Vec<Matrix> {
    let dn = d * n;
    match dn {
        1 => vec![Matrix::scalar(1.0), Matrix::scalar(-1.0)],
        2 => (0..count)
            .map(|k| {
                let angle = std::f64::consts::TAU * k as f64 / count as f64;
                Matrix::from_vec(d, n, vec![angle.cos(), angle.sin()]).unwrap()
            })
            .collect(),
        3 => {
            // Fibonacci sphere.
            let golden = (1.0 + 5.0f64.sqrt()) / 2.0;
            (0..count)
                .map(|k| {
                    let zc = 1.0 - 2.0 * (k as f64 + 0.5) / count as f64;
                    let r = (1.0 - zc * zc).sqrt();
                    let angle = std::f64::consts::TAU * k as f64 / golden;
                    Matrix::from_vec(d, n, vec![r * angle.cos(), r * angle.sin(), zc]).unwrap()
                })
                .collect()
        }
        _ => {
            let mut rng = SplitMix64::new(0x5EED_D1E5);
            (0..count)
                .map(|_| Matrix::from_vec(d, n, rng.unit_vector(dn)).unwrap())
                .collect()
        }
    }
}

/// Directional bisection for the largest feasible t along each unit
/// direction; undecided probes are resolved conservatively inward, so the
/// reported radius is always certified feasible.
pub fn effective_set(
    cmap: &ConstraintMap,
    grid: &CellGrid,
    directions: &[Matrix],
    opts: &EffectiveSetOptions,
) -> Result<EffectiveSet> {
    let bound = cmap.bounding_radius()? + 1.0;
    let results: Vec<Result<(f64, bool)>> = par::map_collect(directions.len(), |k| {
        let e = directions[k].normalized()?;
        let zero = e.scaled(0.0);
        let origin = indicator_feasible(cmap, grid, &zero, &opts.feas, None)?;
        if !origin.is_feasible() {
            return Ok((0.0, true));
        }
        let mut warm = origin.corrector().cloned();
        let mut t_lo = 0.0f64;
        let mut t_hi = bound;
        let mut conservative = false;
        while t_hi - t_lo > opts.tol_t {
            let mid = 0.5 * (t_hi + t_lo);
            let probe = indicator_feasible(cmap, grid, &e.scaled(mid), &opts.feas, warm.as_ref())?;
            match probe.outcome {
                crate::sup_hom::FeasOutcome::Feasible(u) => {
                    warm = Some(u);
                    t_lo = mid;
                }
                crate::sup_hom::FeasOutcome::Infeasible { .. } => t_hi = mid,
                crate::sup_hom::FeasOutcome::Undecided => {
                    conservative = true;
                    t_hi = mid;
                }
            }
        }
        Ok((t_lo, conservative))
    });
    let mut radii = Vec::with_capacity(directions.len());
    let mut flags = Vec::with_capacity(directions.len());
    for r in results {
        let (t, c) = r?;
        radii.push(t);
        flags.push(c);
    }
    Ok(EffectiveSet {
        directions: directions
            .iter()
            .map(|e| e.normalized())
            .collect::<Result<_>>()?,
        radii,
        tol_t: opts.tol_t,
        conservative: flags,
    })
}

#[derive(Clone, Debug)]
pub struct CrossCheckRow {
    pub direction: Matrix,
    pub radius_indicator: f64,
    pub radius_level_set: f64,
}

#[derive(Clone, Debug)]
pub struct CrossCheckReport {
    pub level: f64,
    pub rows: Vec<CrossCheckRow>,
    pub max_abs_diff: f64,
}

/// Cross-module identity check: the boundary of C_inf found by the
/// indicator route (directional feasibility at fixed level M*) must match
/// the bisection root of the direct supremal value along the same ray,
/// i.e. the largest t with value(t e) <= M*.
pub fn cross_check_sublevel(
    density: &Arc<PeriodicDensity>,
    grid: &CellGrid,
    level: f64,
    directions: &[Matrix],
    eff_opts: &EffectiveSetOptions,
    sup_opts: &SupOptions,
) -> Result<CrossCheckReport> {
    density.ensure_solvable()?;
    let cmap = ConstraintMap::Sublevel {
        density: Arc::clone(density),
        level,
    };
    let indicator = effective_set(&cmap, grid, directions, eff_opts)?;

    let roots: Vec<Result<f64>> = par::map_collect(directions.len(), |k| {
        let e = directions[k].normalized()?;
        let value_at = |t: f64| -> Result<f64> {
            Ok(solve_sup_cell(density, grid, &e.scaled(t), sup_opts)?.value)
        };
        let g_zero = value_at(0.0)? - level;
        if g_zero > 0.0 {
            return Ok(0.0);
        }
        // Growth pins the upper end: value(t e) >= alpha t.
        let mut t_hi = level / density.alpha() * 1.05 + 0.1;
        let mut t_lo = 0.0;
        let mut g_lo = g_zero;
        let mut g_hi = loop {
            let g = value_at(t_hi)? - level;
            if g > 0.0 {
                break g;
            }
            t_lo = t_hi;
            g_lo = g;
            t_hi *= 2.0;
            if t_hi > 1e6 {
                return Err(Error::InvalidArgument(
                    "level-set root bracket ran away; check growth constants".into(),
                ));
            }
        };
        // Illinois false-position with a midpoint fallback: the value curve
        // is close to linear along rays for norm-type densities, and may sit
        // on a flat plateau (empty-sublevel floor) where the secant step
        // degenerates — the clamp then hands over to plain bisection. The
        // inner solver certifies its value from above within its level
        // tolerance, so classification gets that much slack (plateaus would
        // otherwise always land on the infeasible side).
        let noise = sup_opts.level_tolerance(&e.scaled(t_hi));
        let mut last_side = 0i8;
        while t_hi - t_lo > eff_opts.tol_t {
            let span = t_hi - t_lo;
            let secant = t_hi - g_hi * span / (g_hi - g_lo);
            let t_new = if secant > t_lo + 0.05 * span && secant < t_hi - 0.05 * span {
                secant
            } else {
                t_lo + 0.5 * span
            };
            let g_new = value_at(t_new)? - level;
            if g_new <= noise {
                t_lo = t_new;
                g_lo = g_new;
                if last_side == -1 {
                    g_hi *= 0.5;
                }
                last_side = -1;
            } else {
                t_hi = t_new;
                g_hi = g_new;
                if last_side == 1 {
                    g_lo *= 0.5;
                }
                last_side = 1;
            }
        }
        Ok(t_lo)
    });

    let mut rows = Vec::with_capacity(directions.len());
    let mut max_abs_diff = 0.0f64;
    for (k, root) in roots.into_iter().enumerate() {
        let root = root?;
        let diff = (indicator.radii[k] - root).abs();
        max_abs_diff = max_abs_diff.max(diff);
        rows.push(CrossCheckRow {
            direction: indicator.directions[k].clone(),
            radius_indicator: indicator.radii[k],
            radius_level_set: root,
        });
    }
    Ok(CrossCheckReport {
        level,
        rows,
        max_abs_diff,
    })
}

#[derive(Clone, Debug)]
pub struct MidpointConvexityReport {
    pub checked: usize,
    /// (pair index, midpoint) for failed feasibility probes.
    pub failures: Vec<(usize, Matrix)>,
}

/// Sampled convexity of C_inf: midpoints of boundary points (shrunk inward
/// by `shrink` to cover the boundary classification tolerance) must be
/// feasible.
pub fn convexity_midpoint_check(
    cmap: &ConstraintMap,
    grid: &CellGrid,
    set: &EffectiveSet,
    pairs: &[(usize, usize)],
    shrink: f64,
    opts: &FeasOptions,
) -> Result<MidpointConvexityReport> {
    let outcomes: Vec<Result<Option<(usize, Matrix)>>> = par::map_collect(pairs.len(), |k| {
        let (i, j) = pairs[k];
        let a = set.directions[i].scaled(set.radii[i]);
        let b = set.directions[j].scaled(set.radii[j]);
        let mid = a.add(&b).scaled(0.5 * (1.0 - shrink));
        let res = indicator_feasible(cmap, grid, &mid, opts, None)?;
        Ok(if res.is_feasible() {
            None
        } else {
            Some((k, mid))
        })
    });
    let mut failures = Vec::new();
    for o in outcomes {
        if let Some(f) = o? {
            failures.push(f);
        }
    }
    Ok(MidpointConvexityReport {
        checked: pairs.len(),
        failures,
    })
}

#[derive(Clone, Debug)]
pub struct H3H4Report {
    /// Vertex membership failures: (vertex index, witness x).
    pub vertex_failures: Vec<(usize, Vec<f64>)>,
    /// B_delta(0) inside the cube spanned by the vertices.
    pub ball_in_cube: bool,
    /// Cube inside B_{2 delta}(0).
    pub cube_in_double_ball: bool,
    /// Sphere sample directions (radius 2 delta (1 - margin)) that failed
    /// the feasibility probe.
    pub sphere_failures: Vec<Matrix>,
    pub sphere_checked: usize,
    /// Largest delta the failing directions support (min t*/2), when the
    /// sphere check failed.
    pub suggested_delta: Option<f64>,
}

impl H3H4Report {
    pub fn passed(&self) -> bool {
        self.vertex_failures.is_empty()
            && self.ball_in_cube
            && self.cube_in_double_ball
            && self.sphere_failures.is_empty()
    }
}

/// Validate the cube-vertex and interior-ball hypotheses for a constraint
/// map: (a) every vertex A_i lies in C(x) at all sampled x, (b) the cube
/// spanned by the vertices is pinched between B_delta(0) and B_{2delta}(0),
/// (c) sampled points on the sphere of radius 2 delta (1 - margin) are
/// feasible for the homogenized set.
pub fn validate_h3_h4(
    cmap: &ConstraintMap,
    grid: &CellGrid,
    delta: f64,
    vertices: &[Matrix],
    margin: f64,
    opts: &EffectiveSetOptions,
) -> Result<H3H4Report> {
    if delta <= 0.0 {
        return Err(Error::InvalidArgument("delta must be positive".into()));
    }
    let (d, n) = cmap.dims();
    let dn = d * n;
    if vertices.is_empty() {
        return Err(Error::InvalidArgument(
            "need at least one cube vertex".into(),
        ));
    }

    // (a) membership at the subcell centers (exact for piecewise-constant
    // maps) plus seeded interior samples.
    let m = match cmap {
        ConstraintMap::Sublevel { density, .. } => density.coefficient().resolution(),
        ConstraintMap::BallField { radius, .. } => radius.resolution(),
        ConstraintMap::FixedBox { .. } => 1,
    };
    let mut sample_xs: Vec<Vec<f64>> = Vec::new();
    let mut coords = vec![0usize; n];
    'outer: loop {
        sample_xs.push(
            coords
                .iter()
                .map(|&c| (c as f64 + 0.5) / m as f64)
                .collect(),
        );
        let mut axis = 0;
        loop {
            if axis == n {
                break 'outer;
            }
            coords[axis] += 1;
            if coords[axis] < m {
                break;
            }
            coords[axis] = 0;
            axis += 1;
        }
    }
    let mut rng = SplitMix64::new(0xA4B3);
    for _ in 0..16 {
        sample_xs.push((0..n).map(|_| rng.next_f64()).collect());
    }

    let mut vertex_failures = Vec::new();
    for (i, a) in vertices.iter().enumerate() {
        for x in &sample_xs {
            let set = cmap.set_at(x)?;
            if set.is_empty() || !set.contains(a.data(), d, n, 1e-12) {
                vertex_failures.push((i, x.clone()));
                break;
            }
        }
    }

    // (b) axis-aligned hull of the vertices against the two balls.
    let mut lo = vec![f64::INFINITY; dn];
    let mut hi = vec![f64::NEG_INFINITY; dn];
    for a in vertices {
        for (k, v) in a.data().iter().enumerate() {
            lo[k] = lo[k].min(*v);
            hi[k] = hi[k].max(*v);
        }
    }
    let ball_in_cube = (0..dn).all(|k| lo[k] <= -delta + 1e-12 && hi[k] >= delta - 1e-12);
    let corner_norm: f64 = (0..dn)
        .map(|k| lo[k].abs().max(hi[k].abs()).powi(2))
        .sum::<f64>()
        .sqrt();
    let cube_in_double_ball = corner_norm <= 2.0 * delta + 1e-12;

    // (c) sphere samples at radius 2 delta (1 - margin).
    let dirs = default_directions(d, n);
    let dirs = if dirs.len() > 32 {
        dirs.into_iter().step_by(8).collect()
    } else {
        dirs
    };
    let r = 2.0 * delta * (1.0 - margin);
    let mut sphere_failures = Vec::new();
    for e in &dirs {
        let res = indicator_feasible(cmap, grid, &e.scaled(r), &opts.feas, None)?;
        if !res.is_feasible() {
            sphere_failures.push(e.clone());
        }
    }

    let suggested_delta = if sphere_failures.is_empty() {
        None
    } else {
        let eff = effective_set(cmap, grid, &sphere_failures, opts)?;
        Some(eff.radii.iter().cloned().fold(f64::INFINITY, f64::min) / 2.0)
    };

    Ok(H3H4Report {
        vertex_failures,
        ball_in_cube,
        cube_in_double_ball,
        sphere_failures,
        sphere_checked: dirs.len(),
        suggested_delta,
    })
}
