//! Periodic supremal integrands f(x, Z) and the geometry of their sublevel
//! sets C_M(x) = {W : f(x, W) <= M}.
//!
//! Builtin forms:
//!
//! * `coeff_norm`: f = a(x)|Z| with |Z| the row-sum norm;
//! * `coeff_psi`: f = a(x)Psi(|Z|) where Psi(t) = 1 for t <= 1 and
//!   1 + sqrt(t-1) + (t-1) for t > 1.
//!
//! Both are level convex with row-sum-norm balls as sublevel sets, so the
//! feasibility solver gets closed-form projections. Custom densities supply
//! callbacks and must self-declare level convexity; a sampled midpoint
//! verification runs at construction and solvers are refused (evaluation is
//! not) when the declaration does not hold.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::matrix::{frobenius_dist, row_sum_norm, Matrix};
use crate::rng::SplitMix64;

/// Piecewise-constant 1-periodic scalar field on a uniform partition of the
/// unit cell into m^n subcells, values row-major (axis 0 slowest).
#[derive(Clone, Debug)]
pub struct Coefficient {
    n: usize,
    m: usize,
    values: Vec<f64>,
}

impl Coefficient {
    pub fn new(n: usize, m: usize, values: Vec<f64>) -> Result<Self> {
        if n == 0 || m == 0 {
            return Err(Error::InvalidConfig(
                "coefficient dimensions must be positive".into(),
            ));
        }
        let expected = m
            .checked_pow(n as u32)
            .ok_or_else(|| Error::InvalidConfig("coefficient resolution overflow".into()))?;
        if values.len() != expected {
            return Err(Error::InvalidConfig(format!(
                "coefficient needs {} values for m={} in {}D, got {}",
                expected,
                m,
                n,
                values.len()
            )));
        }
        if !values.iter().all(|v| v.is_finite() && *v > 0.0) {
            return Err(Error::InvalidConfig(
                "coefficient values must be positive".into(),
            ));
        }
        Ok(Self { n, m, values })
    }

    /// Constant field.
    pub fn uniform(n: usize, value: f64) -> Result<Self> {
        Self::new(n, 1, vec![value])
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn resolution(&self) -> usize {
        self.m
    }

    pub fn min_value(&self) -> f64 {
        self.values.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn max_value(&self) -> f64 {
        self.values
            .iter()
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Value at x, wrapped 1-periodically in every axis.
    pub fn at(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.n);
        let mut idx = 0usize;
        for &xi in x {
            let frac = xi - xi.floor();
            let cell = ((frac * self.m as f64) as usize).min(self.m - 1);
            idx = idx * self.m + cell;
        }
        self.values[idx]
    }
}

/// Convex, closed sublevel set of f(x, .) at one (x, M).
///
/// `Ball` is a ball of the row-sum norm (Euclidean for d = 1); `Box` is a
/// per-component interval product; `Empty` means M is below the pointwise
/// minimum of f(x, .).
#[derive(Clone, Debug, PartialEq)]
pub enum SublevelSet {
    Ball { radius: f64 },
    Box { lo: Vec<f64>, hi: Vec<f64> },
    Empty,
}

impl SublevelSet {
    pub fn is_empty(&self) -> bool {
        matches!(self, SublevelSet::Empty)
    }

    /// Frobenius distance from w (row-major d x n) to the set.
    pub fn distance(&self, w: &[f64], d: usize, n: usize) -> f64 {
        let mut tmp = w.to_vec();
        self.project(&mut tmp, d, n)
    }

    pub fn contains(&self, w: &[f64], d: usize, n: usize, tol: f64) -> bool {
        self.distance(w, d, n) <= tol
    }

    /// Euclidean (Frobenius) projection in place; returns the distance moved.
    ///
    /// For the row-sum ball with d > 1 this is the group soft-threshold:
    /// the vector of row norms is projected onto the l1 ball of the given
    /// radius and rows are rescaled, which is the exact Frobenius projection.
    /// For d = 1 it reduces to the radial shrink.
    pub fn project(&self, w: &mut [f64], d: usize, n: usize) -> f64 {
        debug_assert_eq!(w.len(), d * n);
        match self {
            SublevelSet::Empty => {
                debug_assert!(false, "projection onto an empty set");
                f64::INFINITY
            }
            SublevelSet::Box { lo, hi } => {
                let mut dist2 = 0.0;
                for (k, v) in w.iter_mut().enumerate() {
                    let c = v.clamp(lo[k], hi[k]);
                    dist2 += (*v - c) * (*v - c);
                    *v = c;
                }
                dist2.sqrt()
            }
            SublevelSet::Ball { radius } => {
                let rho = *radius;
                let mut stack_norms = [0.0f64; 8];
                let mut heap_norms;
                let norms: &mut [f64] = if d <= 8 {
                    &mut stack_norms[..d]
                } else {
                    heap_norms = vec![0.0; d];
                    &mut heap_norms
                };
                let mut total = 0.0;
                for i in 0..d {
                    let row = &w[i * n..(i + 1) * n];
                    let r = row.iter().map(|v| v * v).sum::<f64>().sqrt();
                    norms[i] = r;
                    total += r;
                }
                if total <= rho {
                    return 0.0;
                }
                // Find the soft threshold theta with sum(max(r_i - theta, 0)) = rho.
                let mut sorted: Vec<f64> = norms.to_vec();
                sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
                let mut cumulative = 0.0;
                let mut theta = 0.0;
                for (k, &r) in sorted.iter().enumerate() {
                    cumulative += r;
                    let candidate = (cumulative - rho) / (k + 1) as f64;
                    if k + 1 == sorted.len() || candidate >= sorted[k + 1] {
                        theta = candidate;
                        break;
                    }
                }
                let mut dist2 = 0.0;
                for i in 0..d {
                    let r = norms[i];
                    let target = (r - theta).max(0.0);
                    let scale = if r > 0.0 { target / r } else { 0.0 };
                    let row = &mut w[i * n..(i + 1) * n];
                    for v in row.iter_mut() {
                        let nv = *v * scale;
                        dist2 += (*v - nv) * (*v - nv);
                        *v = nv;
                    }
                }
                dist2.sqrt()
            }
        }
    }

    pub fn contains_origin(&self) -> bool {
        match self {
            SublevelSet::Empty => false,
            SublevelSet::Ball { .. } => true,
            SublevelSet::Box { lo, hi } => lo.iter().zip(hi).all(|(l, h)| *l <= 0.0 && *h >= 0.0),
        }
    }

    /// Minkowski gauge centered at the origin: membership iff <= 1.
    /// Meaningful only when the set contains the origin.
    pub fn gauge(&self, w: &[f64], d: usize, n: usize) -> f64 {
        match self {
            SublevelSet::Empty => f64::INFINITY,
            SublevelSet::Ball { radius } => {
                let norm = row_sum_norm(w, d, n);
                if *radius > 0.0 {
                    norm / radius
                } else if norm == 0.0 {
                    0.0
                } else {
                    f64::INFINITY
                }
            }
            SublevelSet::Box { lo, hi } => {
                let mut worst = 0.0f64;
                for (k, v) in w.iter().enumerate() {
                    let g = if *v > 0.0 {
                        if hi[k] > 0.0 {
                            v / hi[k]
                        } else {
                            f64::INFINITY
                        }
                    } else if *v < 0.0 {
                        if lo[k] < 0.0 {
                            v / lo[k]
                        } else {
                            f64::INFINITY
                        }
                    } else {
                        0.0
                    };
                    worst = worst.max(g);
                }
                worst
            }
        }
    }

    /// Support function sup_{b in set} <g, b> (closed form per variant).
    /// The dual of the row-sum norm is the max row norm.
    pub fn support(&self, g: &[f64], d: usize, n: usize) -> f64 {
        match self {
            SublevelSet::Empty => f64::NEG_INFINITY,
            SublevelSet::Ball { radius } => {
                let mut worst = 0.0f64;
                for i in 0..d {
                    let row = &g[i * n..(i + 1) * n];
                    worst = worst.max(row.iter().map(|v| v * v).sum::<f64>().sqrt());
                }
                radius * worst
            }
            SublevelSet::Box { lo, hi } => g
                .iter()
                .enumerate()
                .map(|(k, v)| (lo[k] * v).max(hi[k] * v))
                .sum(),
        }
    }

    /// Largest Frobenius norm attained on the set (bounding radius).
    pub fn extent(&self) -> f64 {
        match self {
            SublevelSet::Empty => 0.0,
            SublevelSet::Ball { radius } => *radius,
            SublevelSet::Box { lo, hi } => lo
                .iter()
                .zip(hi)
                .map(|(l, h)| l.abs().max(h.abs()).powi(2))
                .sum::<f64>()
                .sqrt(),
        }
    }
}

/// Callbacks for user-supplied densities. `sublevel` may return `None`
/// (evaluation-only density); such densities cannot drive the solvers.
pub trait CustomDensity: Send + Sync {
    fn eval(&self, x: &[f64], z: &[f64]) -> f64;
    fn sublevel(&self, _x: &[f64], _level: f64) -> Option<SublevelSet> {
        None
    }
    /// Self-declared level convexity of f(x, .).
    fn level_convex(&self) -> bool;
}

/// Differentiable structure tag for the builtin forms (used by the Lp
/// solver's smoothed kernels).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum BuiltinForm {
    Norm,
    Psi,
}

#[derive(Clone)]
enum DensityKind {
    CoeffNorm,
    CoeffPsi,
    Custom(Arc<dyn CustomDensity>),
}

impl std::fmt::Debug for DensityKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            DensityKind::CoeffNorm => write!(f, "CoeffNorm"),
            DensityKind::CoeffPsi => write!(f, "CoeffPsi"),
            DensityKind::Custom(_) => write!(f, "Custom"),
        }
    }
}

/// A 1-periodic supremal integrand with growth constants alpha, beta.
#[derive(Clone, Debug)]
pub struct PeriodicDensity {
    n: usize,
    d: usize,
    kind: DensityKind,
    coeff: Coefficient,
    alpha: f64,
    beta: f64,
    solvers_allowed: bool,
    refusal: Option<String>,
}

/// Psi from the model density: 1 on [0,1], then 1 + sqrt(t-1) + (t-1).
pub fn psi(t: f64) -> f64 {
    if t <= 1.0 {
        1.0
    } else {
        let s = t - 1.0;
        1.0 + s.sqrt() + s
    }
}

/// Inverse of Psi on levels >= 1: the radius of {Psi(|Z|) <= level}.
pub fn psi_inverse(level: f64) -> Option<f64> {
    if level < 1.0 {
        None
    } else if level == 1.0 {
        Some(1.0)
    } else {
        // Solve s + sqrt(s) = level - 1 with s = t - 1, via y^2 + y = level - 1.
        let y = (-1.0 + (1.0 + 4.0 * (level - 1.0)).sqrt()) / 2.0;
        Some(1.0 + y * y)
    }
}

impl PeriodicDensity {
    fn validate_growth(alpha: f64, beta: f64) -> Result<()> {
        if !(alpha > 0.0 && beta > 0.0 && alpha.is_finite() && beta.is_finite()) {
            return Err(Error::InvalidConfig(
                "growth constants must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn coeff_norm(
        n: usize,
        d: usize,
        coeff: Coefficient,
        alpha: f64,
        beta: f64,
    ) -> Result<Self> {
        Self::validate_growth(alpha, beta)?;
        if coeff.dim() != n {
            return Err(Error::InvalidConfig(
                "coefficient dimension mismatch".into(),
            ));
        }
        if d == 0 {
            return Err(Error::InvalidConfig(
                "target dimension must be positive".into(),
            ));
        }
        Ok(Self {
            n,
            d,
            kind: DensityKind::CoeffNorm,
            coeff,
            alpha,
            beta,
            solvers_allowed: true,
            refusal: None,
        })
    }

    pub fn coeff_psi(
        n: usize,
        d: usize,
        coeff: Coefficient,
        alpha: f64,
        beta: f64,
    ) -> Result<Self> {
        Self::validate_growth(alpha, beta)?;
        if coeff.dim() != n {
            return Err(Error::InvalidConfig(
                "coefficient dimension mismatch".into(),
            ));
        }
        if d == 0 {
            return Err(Error::InvalidConfig(
                "target dimension must be positive".into(),
            ));
        }
        Ok(Self {
            n,
            d,
            kind: DensityKind::CoeffPsi,
            coeff,
            alpha,
            beta,
            solvers_allowed: true,
            refusal: None,
        })
    }

    /// Register a custom density. A seeded midpoint test verifies the
    /// declared level convexity; on failure (or when the declaration or the
    /// sublevel callback is missing) the density still evaluates but the
    /// solvers refuse it.
    pub fn custom(
        n: usize,
        d: usize,
        density: Arc<dyn CustomDensity>,
        alpha: f64,
        beta: f64,
    ) -> Result<Self> {
        Self::validate_growth(alpha, beta)?;
        if n == 0 || d == 0 {
            return Err(Error::InvalidConfig("dimensions must be positive".into()));
        }
        let mut refusal = None;
        if !density.level_convex() {
            refusal = Some("custom density does not declare level convexity".to_string());
        } else if density.sublevel(&vec![0.5; n], 1.0).is_none() {
            refusal = Some("custom density has no sublevel callback".to_string());
        }
        let out = Self {
            n,
            d,
            kind: DensityKind::Custom(density),
            coeff: Coefficient::uniform(n, 1.0)?,
            alpha,
            beta,
            solvers_allowed: refusal.is_none(),
            refusal,
        };
        if out.solvers_allowed {
            // Sampled verification of the declaration.
            let report = out.check_level_convexity_sampled(500, 0x00C0_FFEE);
            if !report.violations.is_empty() {
                let mut refused = out;
                refused.solvers_allowed = false;
                refused.refusal =
                    Some("sampled level-convexity verification failed at registration".to_string());
                return Ok(refused);
            }
        }
        Ok(out)
    }

    pub fn space_dim(&self) -> usize {
        self.n
    }

    pub fn target_dim(&self) -> usize {
        self.d
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn coefficient(&self) -> &Coefficient {
        &self.coeff
    }

    pub fn solvers_allowed(&self) -> bool {
        self.solvers_allowed
    }

    pub(crate) fn builtin_form(&self) -> Option<BuiltinForm> {
        match self.kind {
            DensityKind::CoeffNorm => Some(BuiltinForm::Norm),
            DensityKind::CoeffPsi => Some(BuiltinForm::Psi),
            DensityKind::Custom(_) => None,
        }
    }

    pub fn ensure_solvable(&self) -> Result<()> {
        if self.solvers_allowed {
            Ok(())
        } else {
            Err(Error::SolverRefused(
                self.refusal
                    .clone()
                    .unwrap_or_else(|| "density rejected".into()),
            ))
        }
    }

    /// Pointwise evaluation f(x mod 1, Z); pure and total.
    pub fn eval(&self, x: &[f64], z: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.n);
        debug_assert_eq!(z.len(), self.d * self.n);
        match &self.kind {
            DensityKind::CoeffNorm => self.coeff.at(x) * row_sum_norm(z, self.d, self.n),
            DensityKind::CoeffPsi => self.coeff.at(x) * psi(row_sum_norm(z, self.d, self.n)),
            DensityKind::Custom(c) => c.eval(x, z),
        }
    }

    pub fn eval_matrix(&self, x: &[f64], z: &Matrix) -> f64 {
        self.eval(x, z.data())
    }

    /// Exact sublevel set {W : f(x, W) <= M} for the builtin forms.
    pub fn sublevel(&self, x: &[f64], level: f64) -> Result<SublevelSet> {
        if level < 0.0 {
            return Ok(SublevelSet::Empty);
        }
        match &self.kind {
            DensityKind::CoeffNorm => Ok(SublevelSet::Ball {
                radius: level / self.coeff.at(x),
            }),
            DensityKind::CoeffPsi => {
                let scaled = level / self.coeff.at(x);
                Ok(match psi_inverse(scaled) {
                    None => SublevelSet::Empty,
                    Some(radius) => SublevelSet::Ball { radius },
                })
            }
            DensityKind::Custom(c) => c.sublevel(x, level).ok_or_else(|| {
                Error::Unsupported("custom density has no sublevel callback".into())
            }),
        }
    }

    /// Euclidean projection of W onto the sublevel set at (x, M).
    pub fn project_to_sublevel(&self, x: &[f64], level: f64, w: &Matrix) -> Result<Matrix> {
        let set = self.sublevel(x, level)?;
        if set.is_empty() {
            return Err(Error::InfeasibleLevel {
                x: x.to_vec(),
                level,
            });
        }
        let mut data = w.data().to_vec();
        set.project(&mut data, self.d, self.n);
        Matrix::from_vec(self.d, self.n, data)
    }

    /// Midpoint level-convexity test on explicit sample triples.
    pub fn check_level_convexity(
        &self,
        x: &[f64],
        samples: &[(Matrix, Matrix, f64)],
    ) -> LevelConvexityReport {
        let mut violations = Vec::new();
        for (idx, (z1, z2, t)) in samples.iter().enumerate() {
            debug_assert!(*t > 0.0 && *t < 1.0);
            let mid = z1.scaled(*t).add(&z2.scaled(1.0 - *t));
            let fm = self.eval(x, mid.data());
            let bound = self.eval(x, z1.data()).max(self.eval(x, z2.data()));
            if fm > bound + 1e-12 {
                violations.push(LevelConvexityViolation {
                    sample: idx,
                    excess: fm - bound,
                });
            }
        }
        LevelConvexityReport {
            checked: samples.len(),
            violations,
        }
    }

    /// Seeded random midpoint test (pairs drawn in [-3, 3]^{d x n}, random x).
    pub fn check_level_convexity_sampled(&self, pairs: usize, seed: u64) -> LevelConvexityReport {
        let mut rng = SplitMix64::new(seed);
        let dn = self.d * self.n;
        let mut samples = Vec::with_capacity(pairs);
        let mut xs = Vec::with_capacity(pairs);
        for _ in 0..pairs {
            let z1 = Matrix::from_vec(
                self.d,
                self.n,
                (0..dn).map(|_| rng.uniform(-3.0, 3.0)).collect(),
            )
            .unwrap();
            let z2 = Matrix::from_vec(
                self.d,
                self.n,
                (0..dn).map(|_| rng.uniform(-3.0, 3.0)).collect(),
            )
            .unwrap();
            let t = rng.uniform(0.05, 0.95);
            samples.push((z1, z2, t));
            xs.push((0..self.n).map(|_| rng.next_f64()).collect::<Vec<_>>());
        }
        let mut merged = LevelConvexityReport {
            checked: pairs,
            violations: Vec::new(),
        };
        for (i, triple) in samples.iter().enumerate() {
            let r = self.check_level_convexity(&xs[i], std::slice::from_ref(triple));
            for mut v in r.violations {
                v.sample = i;
                merged.violations.push(v);
            }
        }
        merged
    }

    /// Sampled growth sandwich alpha|Z| <= f(x,Z) <= beta(|Z|+1).
    pub fn check_growth(&self, samples: &[(Vec<f64>, Matrix)]) -> GrowthReport {
        let mut worst_lower = f64::INFINITY;
        let mut worst_upper = f64::INFINITY;
        let mut failures = Vec::new();
        for (idx, (x, z)) in samples.iter().enumerate() {
            let f = self.eval(x, z.data());
            let norm = z.row_sum_norm();
            let lower_slack = f - self.alpha * norm;
            let upper_slack = self.beta * (norm + 1.0) - f;
            worst_lower = worst_lower.min(lower_slack);
            worst_upper = worst_upper.min(upper_slack);
            if lower_slack < -1e-12 || upper_slack < -1e-12 {
                failures.push(GrowthFailure {
                    sample: idx,
                    value: f,
                    lower_slack,
                    upper_slack,
                });
            }
        }
        GrowthReport {
            checked: samples.len(),
            worst_lower,
            worst_upper,
            failures,
        }
    }

    /// Seeded growth check over |Z| <= z_range.
    pub fn check_growth_sampled(&self, count: usize, z_range: f64, seed: u64) -> GrowthReport {
        let mut rng = SplitMix64::new(seed);
        let dn = self.d * self.n;
        let samples: Vec<(Vec<f64>, Matrix)> = (0..count)
            .map(|_| {
                let x: Vec<f64> = (0..self.n).map(|_| rng.next_f64()).collect();
                let z = Matrix::from_vec(
                    self.d,
                    self.n,
                    (0..dn).map(|_| rng.uniform(-z_range, z_range)).collect(),
                )
                .unwrap();
                (x, z)
            })
            .collect();
        self.check_growth(&samples)
    }
}

#[derive(Clone, Debug)]
pub struct LevelConvexityViolation {
    pub sample: usize,
    pub excess: f64,
}

#[derive(Clone, Debug)]
pub struct LevelConvexityReport {
    pub checked: usize,
    pub violations: Vec<LevelConvexityViolation>,
}

#[derive(Clone, Debug)]
pub struct GrowthFailure {
    pub sample: usize,
    pub value: f64,
    pub lower_slack: f64,
    pub upper_slack: f64,
}

#[derive(Clone, Debug)]
pub struct GrowthReport {
    pub checked: usize,
    /// Smallest value of f - alpha|Z| over the samples (negative = violation).
    pub worst_lower: f64,
    /// Smallest value of beta(|Z|+1) - f over the samples.
    pub worst_upper: f64,
    pub failures: Vec<GrowthFailure>,
}

impl GrowthReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Distance-based consistency helper used by tests: membership via the set
/// geometry must agree with direct evaluation.
pub fn sublevel_consistent(
    density: &PeriodicDensity,
    x: &[f64],
    level: f64,
    z: &Matrix,
) -> Result<bool> {
    let set = density.sublevel(x, level)?;
    let by_eval = density.eval(x, z.data()) <= level + 1e-12;
    let by_set =
        !set.is_empty() && set.contains(z.data(), density.target_dim(), density.space_dim(), 1e-12);
    Ok(by_eval == by_set)
}

/// Idempotence distance of a repeated projection (should be 0).
pub fn projection_idempotence_gap(
    density: &PeriodicDensity,
    x: &[f64],
    level: f64,
    w: &Matrix,
) -> Result<f64> {
    let once = density.project_to_sublevel(x, level, w)?;
    let twice = density.project_to_sublevel(x, level, &once)?;
    Ok(frobenius_dist(once.data(), twice.data()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn half_cell_coeff() -> Coefficient {
        // a = 1 on [0, 1/2), 2 on [1/2, 1)
        Coefficient::new(1, 2, vec![1.0, 2.0]).unwrap()
    }

    fn harmonic_density() -> PeriodicDensity {
        PeriodicDensity::coeff_norm(1, 1, half_cell_coeff(), 1.0, 2.0).unwrap()
    }

    #[test]
    fn eval_identity_coefficient() {
        let d = PeriodicDensity::coeff_norm(2, 1, Coefficient::uniform(2, 1.0).unwrap(), 1.0, 1.0)
            .unwrap();
        let z = Matrix::from_vec(1, 2, vec![1.5, 2.0]).unwrap(); // |Z| = 2.5
        assert!((d.eval(&[0.3, 0.7], z.data()) - 2.5).abs() < 1e-15);
    }

    #[test]
    fn eval_psi_at_norm_two() {
        // Psi(2) = 1 + sqrt(1) + 1 = 3
        let d = PeriodicDensity::coeff_psi(1, 1, Coefficient::uniform(1, 1.0).unwrap(), 0.5, 3.0)
            .unwrap();
        assert!((d.eval(&[0.1], &[2.0]) - 3.0).abs() < 1e-15);
    }

    #[test]
    fn eval_piecewise_coefficient() {
        let d = harmonic_density();
        assert!((d.eval(&[0.75], &[3.0]) - 6.0).abs() < 1e-15);
        assert!((d.eval(&[0.25], &[3.0]) - 3.0).abs() < 1e-15);
    }

    #[test]
    fn eval_is_periodic_exactly() {
        let d = harmonic_density();
        for x in [0.1, 0.6, 0.99] {
            assert_eq!(d.eval(&[x], &[1.7]), d.eval(&[x + 3.0], &[1.7]));
            assert_eq!(d.eval(&[x], &[1.7]), d.eval(&[x - 2.0], &[1.7]));
        }
    }

    #[test]
    fn sublevel_norm_is_scaled_ball() {
        let d = harmonic_density();
        match d.sublevel(&[0.75], 1.0).unwrap() {
            SublevelSet::Ball { radius } => assert!((radius - 0.5).abs() < 1e-15),
            other => panic!("expected ball, got {:?}", other),
        }
    }

    #[test]
    fn sublevel_psi_inverts_psi() {
        let d = PeriodicDensity::coeff_psi(1, 1, Coefficient::uniform(1, 1.0).unwrap(), 0.5, 3.0)
            .unwrap();
        match d.sublevel(&[0.2], 3.0).unwrap() {
            SublevelSet::Ball { radius } => {
                assert!((radius - 2.0).abs() < 1e-12);
                assert!((psi(radius) - 3.0).abs() < 1e-12);
            }
            other => panic!("expected ball, got {:?}", other),
        }
        assert!(d.sublevel(&[0.2], 0.5).unwrap().is_empty());
    }

    #[test]
    fn sublevel_nested_in_level() {
        let d = PeriodicDensity::coeff_psi(1, 1, half_cell_coeff(), 0.5, 6.0).unwrap();
        let mut rng = SplitMix64::new(3);
        for _ in 0..200 {
            let m1 = rng.uniform(0.0, 5.0);
            let m2 = m1 + rng.uniform(0.0, 3.0);
            let x = [rng.next_f64()];
            let r1 = match d.sublevel(&x, m1).unwrap() {
                SublevelSet::Ball { radius } => radius,
                SublevelSet::Empty => -1.0,
                _ => unreachable!(),
            };
            let r2 = match d.sublevel(&x, m2).unwrap() {
                SublevelSet::Ball { radius } => radius,
                SublevelSet::Empty => -1.0,
                _ => unreachable!(),
            };
            assert!(r1 <= r2 + 1e-15, "nestedness broken: {} > {}", r1, r2);
        }
    }

    #[test]
    fn sublevel_membership_matches_eval() {
        let norm = harmonic_density();
        let psi_d = PeriodicDensity::coeff_psi(1, 1, half_cell_coeff(), 0.5, 6.0).unwrap();
        let mut rng = SplitMix64::new(11);
        for _ in 0..500 {
            let x = [rng.next_f64()];
            let level = rng.uniform(0.0, 6.0);
            let z = Matrix::scalar(rng.uniform(-4.0, 4.0));
            assert!(sublevel_consistent(&norm, &x, level, &z).unwrap());
            assert!(sublevel_consistent(&psi_d, &x, level, &z).unwrap());
        }
    }

    #[test]
    fn projection_shrinks_radially_in_1d() {
        let d = PeriodicDensity::coeff_norm(1, 1, Coefficient::uniform(1, 1.0).unwrap(), 1.0, 1.0)
            .unwrap();
        let p = d
            .project_to_sublevel(&[0.0], 1.0, &Matrix::scalar(3.0))
            .unwrap();
        assert!((p.data()[0] - 1.0).abs() < 1e-15);
        // inside stays put
        let q = d
            .project_to_sublevel(&[0.0], 1.0, &Matrix::scalar(0.4))
            .unwrap();
        assert_eq!(q.data()[0], 0.4);
    }

    #[test]
    fn projection_idempotent_and_variational() {
        let d = PeriodicDensity::coeff_norm(2, 2, Coefficient::uniform(2, 1.5).unwrap(), 1.0, 2.0)
            .unwrap();
        let mut rng = SplitMix64::new(99);
        for _ in 0..100 {
            let w =
                Matrix::from_vec(2, 2, (0..4).map(|_| rng.uniform(-3.0, 3.0)).collect()).unwrap();
            let x = [rng.next_f64(), rng.next_f64()];
            let level = rng.uniform(0.5, 4.0);
            assert!(projection_idempotence_gap(&d, &x, level, &w).unwrap() < 1e-12);

            // Variational characterization against sampled members of the set.
            let p = d.project_to_sublevel(&x, level, &w).unwrap();
            let dist_p = frobenius_dist(w.data(), p.data());
            let set = d.sublevel(&x, level).unwrap();
            for _ in 0..20 {
                let cand = Matrix::from_vec(2, 2, (0..4).map(|_| rng.uniform(-3.0, 3.0)).collect())
                    .unwrap();
                if set.contains(cand.data(), 2, 2, 1e-12) {
                    assert!(dist_p <= frobenius_dist(w.data(), cand.data()) + 1e-10);
                }
            }
        }
    }

    #[test]
    fn projection_onto_empty_set_errors() {
        let d = PeriodicDensity::coeff_psi(1, 1, Coefficient::uniform(1, 1.0).unwrap(), 0.5, 3.0)
            .unwrap();
        match d.project_to_sublevel(&[0.0], 0.5, &Matrix::scalar(0.0)) {
            Err(Error::InfeasibleLevel { .. }) => {}
            other => panic!("expected infeasible level, got {:?}", other),
        }
    }

    #[test]
    fn group_projection_exact_for_two_rows() {
        // Rows (3,0) and (0,1): norms (3,1), total 4; project onto radius 2.
        // Soft threshold theta = 1: target norms (2, 0).
        let set = SublevelSet::Ball { radius: 2.0 };
        let mut w = vec![3.0, 0.0, 0.0, 1.0];
        let dist = set.project(&mut w, 2, 2);
        assert!((w[0] - 2.0).abs() < 1e-12);
        assert!(w[3].abs() < 1e-12);
        assert!((dist - (1.0f64 + 1.0).sqrt()).abs() < 1e-12);
        // Result lies on the boundary.
        assert!((row_sum_norm(&w, 2, 2) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn builtin_forms_are_level_convex() {
        let norm = harmonic_density();
        let psi_d = PeriodicDensity::coeff_psi(1, 1, half_cell_coeff(), 0.5, 6.0).unwrap();
        assert!(norm
            .check_level_convexity_sampled(1000, 5)
            .violations
            .is_empty());
        assert!(psi_d
            .check_level_convexity_sampled(1000, 6)
            .violations
            .is_empty());
    }

    struct DoubleWell;
    impl CustomDensity for DoubleWell {
        fn eval(&self, _x: &[f64], z: &[f64]) -> f64 {
            (z[0] - 1.0).abs().min((z[0] + 1.0).abs())
        }
        fn level_convex(&self) -> bool {
            false
        }
    }

    #[test]
    fn double_well_flagged_non_level_convex() {
        let d = PeriodicDensity::custom(1, 1, Arc::new(DoubleWell), 0.1, 5.0).unwrap();
        let samples = vec![(Matrix::scalar(1.0), Matrix::scalar(-1.0), 0.5)];
        let report = d.check_level_convexity(&[0.0], &samples);
        assert_eq!(report.violations.len(), 1);
        assert!(d.ensure_solvable().is_err());
        // Evaluation still works.
        assert_eq!(d.eval(&[0.0], &[1.0]), 0.0);
    }

    struct LyingDoubleWell;
    impl CustomDensity for LyingDoubleWell {
        fn eval(&self, _x: &[f64], z: &[f64]) -> f64 {
            (z[0] - 1.0).abs().min((z[0] + 1.0).abs())
        }
        fn sublevel(&self, _x: &[f64], level: f64) -> Option<SublevelSet> {
            Some(SublevelSet::Ball { radius: level })
        }
        fn level_convex(&self) -> bool {
            true
        }
    }

    #[test]
    fn false_declaration_caught_at_registration() {
        let d = PeriodicDensity::custom(1, 1, Arc::new(LyingDoubleWell), 0.1, 5.0).unwrap();
        assert!(d.ensure_solvable().is_err());
    }

    #[test]
    fn growth_check_passes_and_fails_as_expected() {
        let d = harmonic_density();
        let good = d.check_growth_sampled(500, 10.0, 17);
        assert!(
            good.passed(),
            "worst slacks {} {}",
            good.worst_lower,
            good.worst_upper
        );

        let psi_d =
            PeriodicDensity::coeff_psi(1, 1, Coefficient::uniform(1, 1.0).unwrap(), 0.5, 3.0)
                .unwrap();
        assert!(psi_d.check_growth_sampled(500, 10.0, 18).passed());

        let bad =
            PeriodicDensity::coeff_norm(1, 1, Coefficient::uniform(1, 1.0).unwrap(), 5.0, 2.0)
                .unwrap();
        let report = bad.check_growth(&[(vec![0.3], Matrix::scalar(1.0))]);
        assert!(!report.passed());
        assert_eq!(report.failures[0].sample, 0);
    }
}
