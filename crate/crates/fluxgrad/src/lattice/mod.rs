//! Periodic lattice fields and the discrete vector calculus shared by the
//! walker simulation, the diffusion rate functions, and the
//! reaction-diffusion model.
//!
//! Scalar fields live on sites (cell-averaged densities), vector fields on
//! face midpoints: entry `(site, axis)` sits on the face between `site` and
//! its positive neighbour along `axis`. The discrete divergence and gradient
//! are exact negative adjoints under the volume-weighted inner products, so
//! summation by parts holds to round-off on the torus.

use thiserror::Error;

mod diffusion;
mod rd;
mod walkers;

pub use diffusion::{
    continuity_density, diffusion_h, diffusion_l, heat_evolve, heat_step, hminus1_norm,
    state_diffusion_l,
};
pub use rd::{rd_h, rd_l, rd_state_psi, rd_step, RdSplit, RdState};
pub use walkers::{simulate_walkers, WalkerRun};

#[derive(Debug, Error)]
pub enum LatticeError {
    #[error("grid parameters invalid: dim {dim}, n {n}, eps {eps}")]
    BadGrid { dim: usize, n: usize, eps: f64 },
    #[error("fields live on different grids")]
    GridMismatch,
    #[error("density must be nonnegative (site {site}: {value})")]
    InfeasibleState { site: usize, value: f64 },
    #[error("density must be strictly positive (site {site})")]
    NonPositiveDensity { site: usize },
    #[error("source must have zero mean on the torus (mean {mean:.3e})")]
    NotSolvable { mean: f64 },
    #[error("explicit step dt = {dt} exceeds the stability bound {bound}")]
    StabilityViolation { dt: f64, bound: f64 },
    #[error("inner minimization did not converge within {sweeps} sweeps")]
    NotConverged { sweeps: usize },
    #[error("event count exceeded cap {cap}")]
    ExplosionGuard { cap: u64 },
}

/// A periodic `d`-dimensional grid with `n` sites per axis and spacing `eps`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    dim: usize,
    n: usize,
    eps: f64,
}

impl Grid {
    /// `n = 1` is allowed: gradients and divergences then vanish and the
    /// lattice degenerates to a single well-mixed cell.
    pub fn new(dim: usize, n: usize, eps: f64) -> Result<Self, LatticeError> {
        if dim == 0 || dim > 3 || n == 0 || !(eps > 0.0) {
            return Err(LatticeError::BadGrid { dim, n, eps });
        }
        Ok(Grid { dim, n, eps })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn sites(&self) -> usize {
        self.n.pow(self.dim as u32)
    }

    pub fn faces(&self) -> usize {
        self.sites() * self.dim
    }

    pub fn cell_volume(&self) -> f64 {
        self.eps.powi(self.dim as i32)
    }

    fn stride(&self, axis: usize) -> usize {
        self.n.pow((self.dim - 1 - axis) as u32)
    }

    /// Site shifted one step along `axis` (periodic).
    pub fn neighbor_up(&self, site: usize, axis: usize) -> usize {
        let stride = self.stride(axis);
        let coord = (site / stride) % self.n;
        if coord + 1 == self.n {
            site - (self.n - 1) * stride
        } else {
            site + stride
        }
    }

    pub fn neighbor_down(&self, site: usize, axis: usize) -> usize {
        let stride = self.stride(axis);
        let coord = (site / stride) % self.n;
        if coord == 0 {
            site + (self.n - 1) * stride
        } else {
            site - stride
        }
    }
}

/// One value per site (row-major site order).
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    grid: Grid,
    data: Vec<f64>,
}

impl ScalarField {
    pub fn zeros(grid: Grid) -> Self {
        ScalarField {
            grid,
            data: vec![0.0; grid.sites()],
        }
    }

    pub fn from_values(grid: Grid, data: Vec<f64>) -> Result<Self, LatticeError> {
        if data.len() != grid.sites() {
            return Err(LatticeError::GridMismatch);
        }
        Ok(ScalarField { grid, data })
    }

    pub fn constant(grid: Grid, value: f64) -> Self {
        ScalarField {
            grid,
            data: vec![value; grid.sites()],
        }
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.data
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Volume-weighted total `eps^d sum_x f(x)`.
    pub fn total(&self) -> f64 {
        self.grid.cell_volume() * self.data.iter().sum::<f64>()
    }
}

/// One value per (site, axis) pair, on the face midpoint in the positive
/// direction.
#[derive(Debug, Clone, PartialEq)]
pub struct FaceField {
    grid: Grid,
    data: Vec<f64>,
}

impl FaceField {
    pub fn zeros(grid: Grid) -> Self {
        FaceField {
            grid,
            data: vec![0.0; grid.faces()],
        }
    }

    pub fn from_values(grid: Grid, data: Vec<f64>) -> Result<Self, LatticeError> {
        if data.len() != grid.faces() {
            return Err(LatticeError::GridMismatch);
        }
        Ok(FaceField { grid, data })
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.data
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn at(&self, site: usize, axis: usize) -> f64 {
        self.data[site * self.grid.dim + axis]
    }
}

/// Discrete divergence:
/// `div w (x) = (1/eps) sum_l [ w_l(x + eps/2) - w_l(x - eps/2) ]`.
pub fn discrete_div(w: &FaceField) -> ScalarField {
    let grid = w.grid;
    let mut out = ScalarField::zeros(grid);
    let inv_eps = 1.0 / grid.eps;
    for site in 0..grid.sites() {
        let mut acc = 0.0;
        for axis in 0..grid.dim {
            let below = grid.neighbor_down(site, axis);
            acc += w.at(site, axis) - w.at(below, axis);
        }
        out.data[site] = acc * inv_eps;
    }
    out
}

/// Discrete gradient, the negative adjoint of [`discrete_div`]:
/// `grad f (x, l) = (f(x + eps 1_l) - f(x)) / eps`, so that
/// `<grad f, w>_faces = -<f, div w>_sites` exactly.
pub fn discrete_grad(f: &ScalarField) -> FaceField {
    let grid = f.grid;
    let mut out = FaceField::zeros(grid);
    let inv_eps = 1.0 / grid.eps;
    for site in 0..grid.sites() {
        for axis in 0..grid.dim {
            let up = grid.neighbor_up(site, axis);
            out.data[site * grid.dim + axis] = (f.data[up] - f.data[site]) * inv_eps;
        }
    }
    out
}

/// Discrete Laplacian `div grad`.
pub fn laplacian(f: &ScalarField) -> ScalarField {
    discrete_div(&discrete_grad(f))
}

/// Volume-weighted inner product on sites.
pub fn inner_sites(a: &ScalarField, b: &ScalarField) -> f64 {
    debug_assert_eq!(a.grid, b.grid);
    a.grid.cell_volume() * a.data.iter().zip(&b.data).map(|(x, y)| x * y).sum::<f64>()
}

/// Volume-weighted inner product on faces.
pub fn inner_faces(a: &FaceField, b: &FaceField) -> f64 {
    debug_assert_eq!(a.grid, b.grid);
    a.grid.cell_volume() * a.data.iter().zip(&b.data).map(|(x, y)| x * y).sum::<f64>()
}

/// Arithmetic mean of the two cells adjacent to each face.
pub fn face_average(rho: &ScalarField) -> FaceField {
    let grid = rho.grid;
    let mut out = FaceField::zeros(grid);
    for site in 0..grid.sites() {
        for axis in 0..grid.dim {
            let up = grid.neighbor_up(site, axis);
            out.data[site * grid.dim + axis] = 0.5 * (rho.data[site] + rho.data[up]);
        }
    }
    out
}
