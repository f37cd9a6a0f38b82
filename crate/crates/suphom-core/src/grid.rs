//! Periodic uniform discretization of the cell jY = (0, j)^n.
//!
//! Nodes and cells share the lattice of side jN per axis (periodic
//! wraparound). Node fields u carry d components per node; cell tensor
//! fields carry a d x n block per cell, collocated at cell centers. The
//! discrete gradient uses forward differences averaged over the 2^(n-1)
//! node pairs spanning each cell per axis; divergence is its negative
//! adjoint, implemented as an independent gather stencil so the adjointness
//! test is meaningful.

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::par;

#[derive(Clone, Copy, Debug)]
pub struct PoissonOptions {
    /// Relative residual tolerance of the CG solve.
    pub rtol: f64,
    /// Iteration cap as a multiple of the node count.
    pub max_iter_factor: usize,
    /// Use the exact trigonometric diagonalization for n >= 2 (the normal
    /// operator is constant-coefficient periodic, so a separable DFT solves
    /// it in one shot); CG remains the reference path.
    pub use_fourier: bool,
}

impl Default for PoissonOptions {
    fn default() -> Self {
        Self {
            rtol: 1e-10,
            max_iter_factor: 10,
            use_fourier: true,
        }
    }
}

/// Separable DFT plan and the eigenvalues of the normal operator D^T D.
#[derive(Clone)]
struct FourierPlan {
    /// e^(-2 pi i j m / S), row-major S x S, as (re, im).
    forward: Vec<(f64, f64)>,
    /// e^(+2 pi i j m / S) / S.
    inverse: Vec<(f64, f64)>,
    /// lambda per multi-index; zero on the kernel modes.
    eigens: Vec<f64>,
    eigen_floor: f64,
}

impl std::fmt::Debug for FourierPlan {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "FourierPlan({} modes)", self.eigens.len())
    }
}

#[derive(Clone, Debug)]
pub struct CellGrid {
    n: usize,
    j: usize,
    res: usize,
    side: usize,
    h: f64,
    cells: usize,
    plan: std::sync::OnceLock<std::sync::Arc<FourierPlan>>,
}

/// Values on lattice nodes, d components per node, node-major layout.
#[derive(Clone, Debug, PartialEq, serde::Serialize)]
pub struct NodeField {
    pub d: usize,
    pub data: Vec<f64>,
}

impl NodeField {
    pub fn zeros(grid: &CellGrid, d: usize) -> Self {
        Self {
            d,
            data: vec![0.0; grid.cell_count() * d],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// One d x n block per cell, cell-major layout.
#[derive(Clone, Debug, PartialEq)]
pub struct CellTensorField {
    pub d: usize,
    pub n: usize,
    pub data: Vec<f64>,
}

impl CellTensorField {
    pub fn zeros(grid: &CellGrid, d: usize) -> Self {
        Self {
            d,
            n: grid.dim(),
            data: vec![0.0; grid.cell_count() * d * grid.dim()],
        }
    }

    pub fn constant(grid: &CellGrid, z: &Matrix) -> Self {
        let block = z.data();
        let mut data = Vec::with_capacity(grid.cell_count() * block.len());
        for _ in 0..grid.cell_count() {
            data.extend_from_slice(block);
        }
        Self {
            d: z.rows(),
            n: z.cols(),
            data,
        }
    }

    pub fn block(&self, c: usize) -> &[f64] {
        let w = self.d * self.n;
        &self.data[c * w..(c + 1) * w]
    }
}

impl CellGrid {
    /// Grid over jY with N nodes per unit length (spacing h = 1/N).
    pub fn new(n: usize, j: usize, res: usize) -> Result<Self> {
        if n == 0 || n > 8 {
            return Err(Error::InvalidConfig(format!(
                "spatial dimension {} unsupported",
                n
            )));
        }
        if j == 0 {
            return Err(Error::InvalidConfig(
                "cell multiplicity j must be positive".into(),
            ));
        }
        if res < 2 {
            return Err(Error::InvalidConfig(
                "grid resolution N must be at least 2".into(),
            ));
        }
        let side = j * res;
        let cells = side
            .checked_pow(n as u32)
            .ok_or_else(|| Error::InvalidConfig("grid size overflow".into()))?;
        Ok(Self {
            n,
            j,
            res,
            side,
            h: 1.0 / res as f64,
            cells,
            plan: std::sync::OnceLock::new(),
        })
    }

    fn fourier_plan(&self) -> std::sync::Arc<FourierPlan> {
        self.plan
            .get_or_init(|| {
                let s = self.side;
                let mut forward = Vec::with_capacity(s * s);
                let mut inverse = Vec::with_capacity(s * s);
                for j in 0..s {
                    for m in 0..s {
                        let angle = std::f64::consts::TAU * (j * m % s) as f64 / s as f64;
                        forward.push((angle.cos(), -angle.sin()));
                        inverse.push((angle.cos() / s as f64, angle.sin() / s as f64));
                    }
                }
                // |d_k(theta)|^2 = (4/h^2) sin^2(pi m_k/S) prod_{l != k} cos^2(pi m_l/S)
                let sin2: Vec<f64> = (0..s)
                    .map(|m| (std::f64::consts::PI * m as f64 / s as f64).sin().powi(2))
                    .collect();
                let cos2: Vec<f64> = (0..s)
                    .map(|m| (std::f64::consts::PI * m as f64 / s as f64).cos().powi(2))
                    .collect();
                let scale = 4.0 / (self.h * self.h);
                let mut eigens = vec![0.0f64; self.cells];
                let mut coords = vec![0usize; self.n];
                for lam in eigens.iter_mut() {
                    let mut total = 0.0;
                    for k in 0..self.n {
                        let mut term = sin2[coords[k]];
                        for (l, &c) in coords.iter().enumerate() {
                            if l != k {
                                term *= cos2[c];
                            }
                        }
                        total += term;
                    }
                    *lam = scale * total;
                    // odometer, fastest axis last to match index_of
                    for axis in (0..self.n).rev() {
                        coords[axis] += 1;
                        if coords[axis] < s {
                            break;
                        }
                        coords[axis] = 0;
                    }
                }
                let max_eig = eigens.iter().cloned().fold(0.0f64, f64::max);
                std::sync::Arc::new(FourierPlan {
                    forward,
                    inverse,
                    eigens,
                    eigen_floor: 1e-12 * max_eig,
                })
            })
            .clone()
    }

    /// In-place separable DFT along every axis (forward or inverse matrix).
    fn dft_all_axes(&self, re: &mut [f64], im: &mut [f64], matrix: &[(f64, f64)]) {
        let s = self.side;
        let mut xr = vec![0.0; s];
        let mut xi = vec![0.0; s];
        for axis in 0..self.n {
            let stride = s.pow((self.n - 1 - axis) as u32);
            let block = stride * s;
            for b1 in (0..self.cells).step_by(block) {
                for b2 in 0..stride {
                    let base = b1 + b2;
                    for m in 0..s {
                        xr[m] = re[base + m * stride];
                        xi[m] = im[base + m * stride];
                    }
                    for j in 0..s {
                        let row = &matrix[j * s..(j + 1) * s];
                        let mut yr = 0.0;
                        let mut yi = 0.0;
                        for m in 0..s {
                            let (mr, mi) = row[m];
                            yr += mr * xr[m] - mi * xi[m];
                            yi += mr * xi[m] + mi * xr[m];
                        }
                        re[base + j * stride] = yr;
                        im[base + j * stride] = yi;
                    }
                }
            }
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn multiplicity(&self) -> usize {
        self.j
    }

    pub fn resolution(&self) -> usize {
        self.res
    }

    /// Nodes (= cells) per axis, jN.
    pub fn side(&self) -> usize {
        self.side
    }

    pub fn spacing(&self) -> f64 {
        self.h
    }

    pub fn cell_count(&self) -> usize {
        self.cells
    }

    /// Check that the coefficient resolution m divides N so cell centers
    /// never straddle a coefficient jump.
    pub fn compatible_with_coefficient(&self, m: usize) -> Result<()> {
        if !self.res.is_multiple_of(m) {
            return Err(Error::InvalidConfig(format!(
                "coefficient resolution m={} must divide grid resolution N={}",
                m, self.res
            )));
        }
        Ok(())
    }

    fn coords_of(&self, mut idx: usize, out: &mut [usize]) {
        for k in (0..self.n).rev() {
            out[k] = idx % self.side;
            idx /= self.side;
        }
    }

    fn index_of(&self, coords: &[usize]) -> usize {
        coords[..self.n]
            .iter()
            .fold(0usize, |idx, c| idx * self.side + c)
    }

    /// Center of cell c in physical coordinates (components in [0, j)).
    pub fn cell_center(&self, c: usize) -> Vec<f64> {
        let mut coords = [0usize; 8];
        self.coords_of(c, &mut coords[..self.n]);
        (0..self.n)
            .map(|k| (coords[k] as f64 + 0.5) * self.h)
            .collect()
    }

    /// Forward-difference gradient with periodic wraparound, averaged over
    /// the 2^(n-1) node pairs spanning each cell per axis. Linear in u;
    /// exactly zero on constants; cell means vanish by telescoping.
    pub fn gradient(&self, u: &NodeField) -> CellTensorField {
        assert_eq!(u.data.len(), self.cells * u.d);
        let d = u.d;
        let n = self.n;
        let width = d * n;
        let pair_count = 1usize << (n - 1);
        let scale = 1.0 / (self.h * pair_count as f64);
        let side = self.side;
        let udata = &u.data;

        let mut out = CellTensorField {
            d,
            n,
            data: vec![0.0; self.cells * width],
        };
        par::for_each_chunk_mut(&mut out.data, width, |c, block| {
            let mut coords = [0usize; 8];
            self.coords_of(c, &mut coords[..n]);
            let mut corner = [0usize; 8];
            for mask in 0..(1usize << n) {
                for k in 0..n {
                    let off = (mask >> k) & 1;
                    corner[k] = (coords[k] + off) % side;
                }
                let base = self.index_of(&corner[..n]) * d;
                for k in 0..n {
                    if (mask >> k) & 1 == 1 {
                        for i in 0..d {
                            block[i * n + k] += udata[base + i] * scale;
                        }
                    } else {
                        for i in 0..d {
                            block[i * n + k] -= udata[base + i] * scale;
                        }
                    }
                }
            }
        });
        out
    }

    /// Negative adjoint of the gradient: <Du, W> = -<u, div W> exactly.
    pub fn divergence(&self, w: &CellTensorField) -> NodeField {
        let mut out = self.gradient_transpose(w);
        out.data.iter_mut().for_each(|v| *v = -*v);
        out
    }

    /// D^T as an independent gather stencil over the cells adjacent to each
    /// node.
    pub(crate) fn gradient_transpose(&self, w: &CellTensorField) -> NodeField {
        assert_eq!(w.n, self.n);
        assert_eq!(w.data.len(), self.cells * w.d * w.n);
        let d = w.d;
        let n = self.n;
        let width = d * n;
        let pair_count = 1usize << (n - 1);
        let scale = 1.0 / (self.h * pair_count as f64);
        let side = self.side;
        let wdata = &w.data;

        let mut out = NodeField {
            d,
            data: vec![0.0; self.cells * d],
        };
        par::for_each_chunk_mut(&mut out.data, d, |v, node_vals| {
            let mut coords = [0usize; 8];
            self.coords_of(v, &mut coords[..n]);
            let mut cell = [0usize; 8];
            // Node v appears in gradient entries of cells c = v - bm (minus
            // side) and c = v - e_k - bm (plus side), masks bm over axes != k.
            for mask in 0..(1usize << n) {
                for k in 0..n {
                    if (mask >> k) & 1 == 1 {
                        continue;
                    }
                    // minus side: c = v - mask
                    for a in 0..n {
                        let off = (mask >> a) & 1;
                        cell[a] = (coords[a] + side - off) % side;
                    }
                    let c_minus = self.index_of(&cell[..n]) * width;
                    // plus side: c = v - e_k - mask
                    cell[k] = (cell[k] + side - 1) % side;
                    let c_plus = self.index_of(&cell[..n]) * width;
                    for i in 0..d {
                        node_vals[i] +=
                            (wdata[c_plus + i * n + k] - wdata[c_minus + i * n + k]) * scale;
                    }
                }
            }
        });
        out
    }

    /// Arithmetic average of the per-cell blocks.
    pub fn mean(&self, w: &CellTensorField) -> Matrix {
        let width = w.d * w.n;
        let mut acc = vec![0.0; width];
        for c in 0..self.cells {
            let block = w.block(c);
            for (a, b) in acc.iter_mut().zip(block) {
                *a += b;
            }
        }
        let inv = 1.0 / self.cells as f64;
        Matrix::from_vec(w.d, w.n, acc.into_iter().map(|v| v * inv).collect()).unwrap()
    }

    /// Orthogonal projection of W onto the space of discrete gradients of
    /// periodic fields: returns (u, G = Du) minimizing ||W - Du||_F, with u
    /// gauge-fixed to zero mean per component.
    pub fn project_to_gradients(
        &self,
        w: &CellTensorField,
        opts: &PoissonOptions,
    ) -> Result<(NodeField, CellTensorField)> {
        self.project_to_gradients_warm(w, None, opts)
    }

    /// Same, with an initial guess for the CG solve (warm starts dominate
    /// the cost inside alternating projections).
    pub fn project_to_gradients_warm(
        &self,
        w: &CellTensorField,
        warm: Option<&NodeField>,
        opts: &PoissonOptions,
    ) -> Result<(NodeField, CellTensorField)> {
        assert_eq!(w.n, self.n);
        let d = w.d;

        if self.n == 1 {
            // Exact closed form: the discrete gradients in 1D are exactly the
            // mean-zero cell fields; u comes from prefix sums.
            let side = self.side;
            let mut g = w.clone();
            let mut u = NodeField {
                d,
                data: vec![0.0; side * d],
            };
            for i in 0..d {
                let mut mean = 0.0;
                for c in 0..side {
                    mean += w.data[c * d + i];
                }
                mean /= side as f64;
                let mut acc = 0.0;
                for c in 0..side {
                    u.data[c * d + i] = acc;
                    let centered = w.data[c * d + i] - mean;
                    g.data[c * d + i] = centered;
                    acc += self.h * centered;
                }
                let umean: f64 = (0..side).map(|c| u.data[c * d + i]).sum::<f64>() / side as f64;
                for c in 0..side {
                    u.data[c * d + i] -= umean;
                }
            }
            return Ok((u, g));
        }

        if opts.use_fourier {
            // Exact diagonalization: the normal operator is constant-
            // coefficient periodic, so each Fourier mode solves by a scalar
            // division; kernel modes (zero eigenvalue) are gauged to zero.
            let plan = self.fourier_plan();
            let rhs = self.gradient_transpose(w);
            let mut u = NodeField {
                d,
                data: vec![0.0; self.cells * d],
            };
            let mut re = vec![0.0; self.cells];
            let mut im = vec![0.0; self.cells];
            for i in 0..d {
                for (c, slot) in re.iter_mut().enumerate() {
                    *slot = rhs.data[c * d + i];
                }
                im.fill(0.0);
                self.dft_all_axes(&mut re, &mut im, &plan.forward);
                for c in 0..self.cells {
                    let lam = plan.eigens[c];
                    if lam > plan.eigen_floor {
                        re[c] /= lam;
                        im[c] /= lam;
                    } else {
                        re[c] = 0.0;
                        im[c] = 0.0;
                    }
                }
                self.dft_all_axes(&mut re, &mut im, &plan.inverse);
                for (c, val) in re.iter().enumerate() {
                    u.data[c * d + i] = *val;
                }
            }
            self.remove_component_means(&mut u);
            let g = self.gradient(&u);
            return Ok((u, g));
        }

        // Normal equations D^T D u = D^T W, solved by CG; the right-hand side
        // is orthogonal to constants so CG stays on the mean-zero subspace.
        let rhs = self.gradient_transpose(w);
        let mut u = match warm {
            Some(f) if f.data.len() == self.cells * d => f.clone(),
            _ => NodeField {
                d,
                data: vec![0.0; self.cells * d],
            },
        };
        self.remove_component_means(&mut u);

        let apply = |x: &NodeField| -> NodeField { self.gradient_transpose(&self.gradient(x)) };

        let bnorm = norm(&rhs.data);
        let max_iter = opts.max_iter_factor * self.cells;
        if bnorm > 0.0 {
            let mut r = rhs.clone();
            let lx = apply(&u);
            for (rv, lv) in r.data.iter_mut().zip(&lx.data) {
                *rv -= lv;
            }
            let mut p = r.clone();
            let mut rr = dot(&r.data, &r.data);
            let mut iterations = 0usize;
            while rr.sqrt() > opts.rtol * bnorm {
                if iterations >= max_iter {
                    return Err(Error::LinearSolve {
                        residual: rr.sqrt() / bnorm,
                        iterations,
                    });
                }
                let lp = apply(&p);
                let plp = dot(&p.data, &lp.data);
                if plp <= 0.0 {
                    // Numerical breakdown; only reachable at rounding level.
                    break;
                }
                let alpha = rr / plp;
                for (uv, pv) in u.data.iter_mut().zip(&p.data) {
                    *uv += alpha * pv;
                }
                for (rv, lv) in r.data.iter_mut().zip(&lp.data) {
                    *rv -= alpha * lv;
                }
                let rr_new = dot(&r.data, &r.data);
                let beta = rr_new / rr;
                rr = rr_new;
                for (pv, rv) in p.data.iter_mut().zip(&r.data) {
                    *pv = rv + beta * *pv;
                }
                iterations += 1;
            }
        } else {
            u.data.fill(0.0);
        }

        self.remove_component_means(&mut u);
        let g = self.gradient(&u);
        Ok((u, g))
    }

    fn remove_component_means(&self, u: &mut NodeField) {
        let d = u.d;
        for i in 0..d {
            let mut mean = 0.0;
            for c in 0..self.cells {
                mean += u.data[c * d + i];
            }
            mean /= self.cells as f64;
            for c in 0..self.cells {
                u.data[c * d + i] -= mean;
            }
        }
    }

    /// Shift a cell field by one cell along `axis` (periodic).
    pub fn shift_cells(&self, w: &CellTensorField, axis: usize) -> CellTensorField {
        let width = w.d * w.n;
        let mut out = CellTensorField {
            d: w.d,
            n: w.n,
            data: vec![0.0; w.data.len()],
        };
        let mut coords = [0usize; 8];
        for c in 0..self.cells {
            self.coords_of(c, &mut coords[..self.n]);
            coords[axis] = (coords[axis] + 1) % self.side;
            let dst = self.index_of(&coords[..self.n]);
            out.data[dst * width..(dst + 1) * width].copy_from_slice(w.block(c));
        }
        out
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Inner product of two cell tensor fields (plain sum over entries).
pub fn field_inner(a: &CellTensorField, b: &CellTensorField) -> f64 {
    dot(&a.data, &b.data)
}

/// Inner product of two node fields.
pub fn node_inner(a: &NodeField, b: &NodeField) -> f64 {
    dot(&a.data, &b.data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;

    fn random_node_field(grid: &CellGrid, d: usize, rng: &mut SplitMix64) -> NodeField {
        NodeField {
            d,
            data: (0..grid.cell_count() * d)
                .map(|_| rng.uniform(-1.0, 1.0))
                .collect(),
        }
    }

    fn random_cell_field(grid: &CellGrid, d: usize, rng: &mut SplitMix64) -> CellTensorField {
        CellTensorField {
            d,
            n: grid.dim(),
            data: (0..grid.cell_count() * d * grid.dim())
                .map(|_| rng.uniform(-1.0, 1.0))
                .collect(),
        }
    }

    #[test]
    fn rejects_degenerate_resolution() {
        assert!(CellGrid::new(1, 1, 1).is_err());
        assert!(CellGrid::new(1, 0, 8).is_err());
        assert!(CellGrid::new(0, 1, 8).is_err());
    }

    #[test]
    fn gradient_of_constant_is_zero() {
        let grid = CellGrid::new(2, 1, 8).unwrap();
        let u = NodeField {
            d: 2,
            data: vec![3.7; grid.cell_count() * 2],
        };
        let g = grid.gradient(&u);
        assert!(g.data.iter().all(|v| v.abs() == 0.0));
    }

    #[test]
    fn gradient_mean_vanishes_by_telescoping() {
        let mut rng = SplitMix64::new(1);
        for n in 1..=3 {
            let grid = CellGrid::new(n, 1, 8).unwrap();
            let u = random_node_field(&grid, 2, &mut rng);
            let g = grid.gradient(&u);
            let mean = grid.mean(&g);
            for v in mean.data() {
                assert!(v.abs() < 1e-13, "nonzero gradient mean {v}");
            }
        }
    }

    #[test]
    fn gradient_matches_sine_derivative_second_order() {
        // Truncation constant for u = sin(2 pi x) at cell centers is
        // (2 pi)^3 / 24 ~ 10.3; we freeze the measured bound 11/N^2 and the
        // O(N^-2) ratio between N = 64 and N = 128.
        let mut errs = Vec::new();
        for res in [64usize, 128] {
            let grid = CellGrid::new(1, 1, res).unwrap();
            let u = NodeField {
                d: 1,
                data: (0..res)
                    .map(|i| (std::f64::consts::TAU * i as f64 / res as f64).sin())
                    .collect(),
            };
            let g = grid.gradient(&u);
            let mut worst = 0.0f64;
            for c in 0..res {
                let xc = (c as f64 + 0.5) / res as f64;
                let exact = std::f64::consts::TAU * (std::f64::consts::TAU * xc).cos();
                worst = worst.max((g.data[c] - exact).abs());
            }
            assert!(
                worst <= 11.0 / (res * res) as f64,
                "N={res}: error {worst} above frozen bound"
            );
            errs.push(worst);
        }
        let ratio = errs[0] / errs[1];
        assert!((3.0..5.0).contains(&ratio), "not O(N^-2): ratio {ratio}");
    }

    #[test]
    fn mean_of_constant_field_is_the_constant() {
        let grid = CellGrid::new(2, 1, 4).unwrap();
        let z = Matrix::from_vec(1, 2, vec![1.5, -0.5]).unwrap();
        let w = CellTensorField::constant(&grid, &z);
        assert_eq!(grid.mean(&w), z);
    }

    #[test]
    fn mean_is_linear() {
        let grid = CellGrid::new(1, 1, 16).unwrap();
        let mut rng = SplitMix64::new(2);
        let a = random_cell_field(&grid, 1, &mut rng);
        let b = random_cell_field(&grid, 1, &mut rng);
        let mut s = a.clone();
        for (x, y) in s.data.iter_mut().zip(&b.data) {
            *x += y;
        }
        let lhs = grid.mean(&s);
        let rhs = grid.mean(&a).add(&grid.mean(&b));
        for (x, y) in lhs.data().iter().zip(rhs.data()) {
            assert!((x - y).abs() < 1e-14);
        }
    }

    #[test]
    fn adjointness_of_gradient_and_divergence() {
        let mut rng = SplitMix64::new(3);
        for n in 1..=3 {
            let grid = CellGrid::new(n, 1, 6).unwrap();
            for _ in 0..5 {
                let u = random_node_field(&grid, 2, &mut rng);
                let w = random_cell_field(&grid, 2, &mut rng);
                let lhs = field_inner(&grid.gradient(&u), &w);
                let rhs = -node_inner(&u, &grid.divergence(&w));
                assert!(
                    (lhs - rhs).abs() <= 1e-12 * (1.0 + lhs.abs()),
                    "adjointness broken in {n}D: {lhs} vs {rhs}"
                );
            }
        }
    }

    #[test]
    fn projection_recovers_exact_gradients() {
        let mut rng = SplitMix64::new(4);
        for n in 1..=2 {
            let grid = CellGrid::new(n, 1, 8).unwrap();
            let u0 = random_node_field(&grid, 1, &mut rng);
            let w = grid.gradient(&u0);
            let (_, g) = grid
                .project_to_gradients(&w, &PoissonOptions::default())
                .unwrap();
            for (a, b) in g.data.iter().zip(&w.data) {
                assert!((a - b).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn projection_kills_constants() {
        let grid = CellGrid::new(2, 1, 8).unwrap();
        let z = Matrix::from_vec(1, 2, vec![2.0, -1.0]).unwrap();
        let w = CellTensorField::constant(&grid, &z);
        let (u, g) = grid
            .project_to_gradients(&w, &PoissonOptions::default())
            .unwrap();
        assert!(g.data.iter().all(|v| v.abs() < 1e-10));
        assert!(u.data.iter().all(|v| v.abs() < 1e-10));
    }

    #[test]
    fn projection_residual_orthogonal_to_gradients() {
        let mut rng = SplitMix64::new(5);
        let grid = CellGrid::new(2, 1, 8).unwrap();
        let w = random_cell_field(&grid, 1, &mut rng);
        let (_, g) = grid
            .project_to_gradients(&w, &PoissonOptions::default())
            .unwrap();
        let mut resid = w.clone();
        for (r, gv) in resid.data.iter_mut().zip(&g.data) {
            *r -= gv;
        }
        for _ in 0..10 {
            let v = random_node_field(&grid, 1, &mut rng);
            let dv = grid.gradient(&v);
            let ip = field_inner(&resid, &dv);
            assert!(ip.abs() < 1e-9, "residual not orthogonal: {ip}");
        }
    }

    #[test]
    fn projection_idempotent() {
        let mut rng = SplitMix64::new(6);
        let grid = CellGrid::new(2, 1, 8).unwrap();
        let w = random_cell_field(&grid, 1, &mut rng);
        let (_, g1) = grid
            .project_to_gradients(&w, &PoissonOptions::default())
            .unwrap();
        let (_, g2) = grid
            .project_to_gradients(&g1, &PoissonOptions::default())
            .unwrap();
        for (a, b) in g1.data.iter().zip(&g2.data) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn projection_translation_equivariant() {
        let mut rng = SplitMix64::new(7);
        let grid = CellGrid::new(2, 1, 6).unwrap();
        let w = random_cell_field(&grid, 1, &mut rng);
        let (_, g) = grid
            .project_to_gradients(&w, &PoissonOptions::default())
            .unwrap();
        let shifted = grid.shift_cells(&w, 0);
        let (_, g_shifted) = grid
            .project_to_gradients(&shifted, &PoissonOptions::default())
            .unwrap();
        let g_expected = grid.shift_cells(&g, 0);
        for (a, b) in g_shifted.data.iter().zip(&g_expected.data) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn cg_iteration_cap_reports_residual() {
        let grid = CellGrid::new(2, 1, 8).unwrap();
        let mut rng = SplitMix64::new(77);
        let w = random_cell_field(&grid, 1, &mut rng);
        let opts = PoissonOptions {
            use_fourier: false,
            max_iter_factor: 0,
            ..PoissonOptions::default()
        };
        match grid.project_to_gradients(&w, &opts) {
            Err(crate::error::Error::LinearSolve {
                residual,
                iterations,
            }) => {
                assert!(residual > 0.0);
                assert_eq!(iterations, 0);
            }
            other => panic!("expected a linear-solver error, got {other:?}"),
        }
    }

    #[test]
    fn fourier_path_matches_cg() {
        let mut rng = SplitMix64::new(12);
        let cg_opts = PoissonOptions {
            use_fourier: false,
            ..PoissonOptions::default()
        };
        let f_opts = PoissonOptions::default();
        for n in 2..=3 {
            let grid = CellGrid::new(n, 1, 6).unwrap();
            let w = random_cell_field(&grid, 2, &mut rng);
            let (u_cg, g_cg) = grid.project_to_gradients(&w, &cg_opts).unwrap();
            let (u_f, g_f) = grid.project_to_gradients(&w, &f_opts).unwrap();
            for (a, b) in g_cg.data.iter().zip(&g_f.data) {
                assert!(
                    (a - b).abs() < 1e-8,
                    "gradient projections differ: {a} vs {b}"
                );
            }
            for (a, b) in u_cg.data.iter().zip(&u_f.data) {
                assert!((a - b).abs() < 1e-7, "correctors differ: {a} vs {b}");
            }
        }
    }

    #[test]
    fn one_d_fast_path_is_exact_mean_removal() {
        // In 1D the discrete gradients are exactly the mean-zero cell
        // fields, so the projection must be plain mean removal.
        let grid = CellGrid::new(1, 2, 16).unwrap();
        let mut rng = SplitMix64::new(8);
        let w = random_cell_field(&grid, 1, &mut rng);
        let (u, g) = grid
            .project_to_gradients(&w, &PoissonOptions::default())
            .unwrap();
        let mean = grid.mean(&w).data()[0];
        for (c, gv) in g.data.iter().enumerate() {
            assert!((gv - (w.data[c] - mean)).abs() < 1e-12);
        }
        // u reproduces g through the discrete gradient.
        let du = grid.gradient(&u);
        for (a, b) in du.data.iter().zip(&g.data) {
            assert!((a - b).abs() < 1e-10);
        }
        let umean: f64 = u.data.iter().sum();
        assert!(umean.abs() < 1e-10);
    }
}
