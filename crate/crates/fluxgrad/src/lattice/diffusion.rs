//! Quadratic rate functions for independent walkers, the weighted dual
//! Sobolev norm, and the explicit heat stepper.

use super::{
    discrete_div, discrete_grad, face_average, inner_sites, laplacian, FaceField, LatticeError,
    ScalarField,
};
use crate::numerics::conjugate_gradient;

/// The continuity map for transport fluxes: `rho = rho0 - div w`.
pub fn continuity_density(rho0: &ScalarField, w: &FaceField) -> Result<ScalarField, LatticeError> {
    if rho0.grid() != w.grid() {
        return Err(LatticeError::GridMismatch);
    }
    let div = discrete_div(w);
    let mut rho = rho0.clone();
    for (r, d) in rho.values_mut().iter_mut().zip(div.values()) {
        *r -= d;
    }
    Ok(rho)
}

fn check_nonnegative(rho: &ScalarField) -> Result<(), LatticeError> {
    for (site, &value) in rho.values().iter().enumerate() {
        if value < -1e-12 {
            return Err(LatticeError::InfeasibleState { site, value });
        }
    }
    Ok(())
}

/// Hamiltonian of the walker flux fluctuations at unit diffusivity:
/// `H(w, zeta) = ||zeta||^2_{L^2(rho)} - <zeta, grad rho>`, with the face
/// density taken as the arithmetic mean of the adjacent cells.
pub fn diffusion_h(
    rho0: &ScalarField,
    w: &FaceField,
    zeta: &FaceField,
) -> Result<f64, LatticeError> {
    let rho = continuity_density(rho0, w)?;
    check_nonnegative(&rho)?;
    if zeta.grid() != rho0.grid() {
        return Err(LatticeError::GridMismatch);
    }
    let rho_face = face_average(&rho);
    let grad_rho = discrete_grad(&rho);
    let vol = rho0.grid().cell_volume();
    let mut acc = 0.0;
    for i in 0..zeta.values().len() {
        let z = zeta.values()[i];
        acc += z * z * rho_face.values()[i] - z * grad_rho.values()[i];
    }
    Ok(acc * vol)
}

/// Rate function of the walker fluxes at unit diffusivity:
/// `L(w, j) = 1/4 || j + grad rho ||^2_{L^2(1/rho)}`.
/// `None` is the infinite sentinel (flux through a dry face).
pub fn diffusion_l(
    rho0: &ScalarField,
    w: &FaceField,
    j: &FaceField,
) -> Result<Option<f64>, LatticeError> {
    let rho = continuity_density(rho0, w)?;
    check_nonnegative(&rho)?;
    if j.grid() != rho0.grid() {
        return Err(LatticeError::GridMismatch);
    }
    let rho_face = face_average(&rho);
    let grad_rho = discrete_grad(&rho);
    let vol = rho0.grid().cell_volume();
    let mut acc = 0.0;
    for i in 0..j.values().len() {
        let num = j.values()[i] + grad_rho.values()[i];
        let den = rho_face.values()[i];
        if den <= 0.0 {
            if num.abs() > 1e-12 {
                return Ok(None);
            }
            continue;
        }
        acc += num * num / den;
    }
    Ok(Some(0.25 * acc * vol))
}

/// Weighted dual Sobolev norm of a mean-zero source:
/// solves `-div(rho grad xi) = s` by conjugate gradients on the mean-zero
/// subspace and returns `<s, xi> = ||s||^2` in the dual norm. The returned
/// potential is the maximizer of `2 <s, xi> - ||grad xi||^2_{L^2(rho)}`.
pub fn hminus1_norm(
    rho: &ScalarField,
    s: &ScalarField,
) -> Result<(f64, ScalarField), LatticeError> {
    if rho.grid() != s.grid() {
        return Err(LatticeError::GridMismatch);
    }
    for (site, &value) in rho.values().iter().enumerate() {
        if value <= 0.0 {
            return Err(LatticeError::NonPositiveDensity { site });
        }
    }
    let sites = rho.grid().sites() as f64;
    let mean = s.values().iter().sum::<f64>() / sites;
    let scale = s
        .values()
        .iter()
        .fold(0.0f64, |m, x| m.max(x.abs()))
        .max(1.0);
    if mean.abs() > 1e-12 * scale {
        return Err(LatticeError::NotSolvable { mean });
    }
    let grid = rho.grid();
    let rho_face = face_average(rho);
    let apply = |xi: &[f64]| -> Vec<f64> {
        let field = ScalarField {
            grid,
            data: xi.to_vec(),
        };
        let mut flux = discrete_grad(&field);
        for (f, r) in flux.values_mut().iter_mut().zip(rho_face.values()) {
            *f *= r;
        }
        discrete_div(&flux).data.iter().map(|&x| -x).collect()
    };
    let project = |v: &mut Vec<f64>| {
        let m = v.iter().sum::<f64>() / sites;
        for x in v.iter_mut() {
            *x -= m;
        }
    };
    let (xi, _res) = conjugate_gradient(apply, project, s.values(), 1e-13, 20 * grid.sites());
    let xi = ScalarField { grid, data: xi };
    Ok((inner_sites(s, &xi), xi))
}

/// State-space rate function of the empirical walker density:
/// `1/4 || s - lap rho ||^2` in the dual norm weighted by `rho`.
pub fn state_diffusion_l(rho: &ScalarField, s: &ScalarField) -> Result<f64, LatticeError> {
    let lap = laplacian(rho);
    let mut defect = s.clone();
    for (d, l) in defect.values_mut().iter_mut().zip(lap.values()) {
        *d -= l;
    }
    let (norm2, _) = hminus1_norm(rho, &defect)?;
    Ok(0.25 * norm2)
}

/// One explicit Euler step of the heat equation `rho_dot = D lap rho`.
/// Rejects steps beyond the diffusive stability bound `eps^2 / (2 d D)`.
pub fn heat_step(
    rho: &ScalarField,
    diffusivity: f64,
    dt: f64,
) -> Result<ScalarField, LatticeError> {
    let grid = rho.grid();
    let bound = grid.eps() * grid.eps() / (2.0 * grid.dim() as f64 * diffusivity);
    if dt > bound {
        return Err(LatticeError::StabilityViolation { dt, bound });
    }
    let lap = laplacian(rho);
    let mut next = rho.clone();
    for (n, l) in next.values_mut().iter_mut().zip(lap.values()) {
        *n += dt * diffusivity * l;
    }
    Ok(next)
}

/// Integrates the heat equation to `t_end` with steps within the stability
/// bound.
pub fn heat_evolve(
    rho0: &ScalarField,
    diffusivity: f64,
    t_end: f64,
) -> Result<ScalarField, LatticeError> {
    let grid = rho0.grid();
    let bound = grid.eps() * grid.eps() / (2.0 * grid.dim() as f64 * diffusivity);
    let steps = (t_end / (0.5 * bound)).ceil().max(1.0) as usize;
    let dt = t_end / steps as f64;
    let mut rho = rho0.clone();
    for _ in 0..steps {
        rho = heat_step(&rho, diffusivity, dt)?;
    }
    Ok(rho)
}
