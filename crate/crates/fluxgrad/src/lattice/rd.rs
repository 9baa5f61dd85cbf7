//! Two-species unimolecular reaction-diffusion on the torus: split
//! Hamiltonians and rate functions (transport + reaction), the explicit
//! limit stepper, and the state-space dissipation potential as an
//! inf-convolution over flux splittings.

use super::diffusion::hminus1_norm;
use super::{
    discrete_div, discrete_grad, face_average, FaceField, Grid, LatticeError, ScalarField,
};
use crate::ldp::{channel_rate, cosh_star};
use crate::numerics::conjugate_gradient;

/// State of the reaction-diffusion model: initial densities plus integrated
/// transport and reaction fluxes. Current densities are always derived
/// through the continuity map
/// `rho_A = rho0_A - div w_tr_A - w_re`, `rho_B = rho0_B - div w_tr_B + w_re`.
#[derive(Debug, Clone)]
pub struct RdState {
    pub rho0_a: ScalarField,
    pub rho0_b: ScalarField,
    pub w_tr_a: FaceField,
    pub w_tr_b: FaceField,
    pub w_re: ScalarField,
    pub d_a: f64,
    pub d_b: f64,
    pub kappa_fw: f64,
    pub kappa_bw: f64,
}

impl RdState {
    pub fn new(
        rho0_a: ScalarField,
        rho0_b: ScalarField,
        d_a: f64,
        d_b: f64,
        kappa_fw: f64,
        kappa_bw: f64,
    ) -> Result<Self, LatticeError> {
        if rho0_a.grid() != rho0_b.grid() {
            return Err(LatticeError::GridMismatch);
        }
        let grid = rho0_a.grid();
        Ok(RdState {
            rho0_a,
            rho0_b,
            w_tr_a: FaceField::zeros(grid),
            w_tr_b: FaceField::zeros(grid),
            w_re: ScalarField::zeros(grid),
            d_a,
            d_b,
            kappa_fw,
            kappa_bw,
        })
    }

    pub fn grid(&self) -> Grid {
        self.rho0_a.grid()
    }

    /// Current densities through the continuity map.
    pub fn densities(&self) -> Result<(ScalarField, ScalarField), LatticeError> {
        let grid = self.grid();
        let div_a = discrete_div(&self.w_tr_a);
        let div_b = discrete_div(&self.w_tr_b);
        let mut rho_a = ScalarField::zeros(grid);
        let mut rho_b = ScalarField::zeros(grid);
        for site in 0..grid.sites() {
            let a = self.rho0_a.values()[site] - div_a.values()[site] - self.w_re.values()[site];
            let b = self.rho0_b.values()[site] - div_b.values()[site] + self.w_re.values()[site];
            if a < -1e-12 {
                return Err(LatticeError::InfeasibleState { site, value: a });
            }
            if b < -1e-12 {
                return Err(LatticeError::InfeasibleState { site, value: b });
            }
            rho_a.values_mut()[site] = a.max(0.0);
            rho_b.values_mut()[site] = b.max(0.0);
        }
        Ok((rho_a, rho_b))
    }

    /// Site-wise `sigma = 2 sqrt(kappa_fw kappa_bw rho_A rho_B)`.
    fn sigma(&self, rho_a: &ScalarField, rho_b: &ScalarField) -> Vec<f64> {
        rho_a
            .values()
            .iter()
            .zip(rho_b.values())
            .map(|(&a, &b)| 2.0 * (self.kappa_fw * self.kappa_bw * a * b).sqrt())
            .collect()
    }
}

/// Split Hamiltonian `H = H_tr + H_re`: a diffusivity-weighted quadratic
/// form in the transport cotangents plus a site-wise exponential form in the
/// reaction cotangent with rates `kappa_fw rho_A` and `kappa_bw rho_B`.
pub fn rd_h(
    state: &RdState,
    zeta_tr_a: &FaceField,
    zeta_tr_b: &FaceField,
    zeta_re: &ScalarField,
) -> Result<f64, LatticeError> {
    let (rho_a, rho_b) = state.densities()?;
    let grid = state.grid();
    let vol = grid.cell_volume();
    let mut acc = 0.0;
    for (rho, zeta, d) in [
        (&rho_a, zeta_tr_a, state.d_a),
        (&rho_b, zeta_tr_b, state.d_b),
    ] {
        if zeta.grid() != grid {
            return Err(LatticeError::GridMismatch);
        }
        let rho_face = face_average(rho);
        let grad_rho = discrete_grad(rho);
        let mut part = 0.0;
        for i in 0..grid.faces() {
            let z = zeta.values()[i];
            part += z * z * rho_face.values()[i] - z * grad_rho.values()[i];
        }
        acc += d * part * vol;
    }
    for site in 0..grid.sites() {
        let z = zeta_re.values()[site];
        acc += vol
            * (state.kappa_fw * rho_a.values()[site] * z.exp_m1()
                + state.kappa_bw * rho_b.values()[site] * (-z).exp_m1());
    }
    Ok(acc)
}

/// Split rate function `L = L_tr + L_re`. `None` is the infinite sentinel.
pub fn rd_l(
    state: &RdState,
    j_tr_a: &FaceField,
    j_tr_b: &FaceField,
    j_re: &ScalarField,
) -> Result<Option<f64>, LatticeError> {
    let (rho_a, rho_b) = state.densities()?;
    let grid = state.grid();
    let vol = grid.cell_volume();
    let mut acc = 0.0;
    for (rho, j, d) in [(&rho_a, j_tr_a, state.d_a), (&rho_b, j_tr_b, state.d_b)] {
        if j.grid() != grid {
            return Err(LatticeError::GridMismatch);
        }
        let rho_face = face_average(rho);
        let grad_rho = discrete_grad(rho);
        let mut part = 0.0;
        for i in 0..grid.faces() {
            let num = j.values()[i] + d * grad_rho.values()[i];
            let den = rho_face.values()[i];
            if den <= 0.0 {
                if num.abs() > 1e-12 {
                    return Ok(None);
                }
                continue;
            }
            part += num * num / den;
        }
        acc += part * vol / (4.0 * d);
    }
    for site in 0..grid.sites() {
        let kf = state.kappa_fw * rho_a.values()[site];
        let kb = state.kappa_bw * rho_b.values()[site];
        match channel_rate(j_re.values()[site], kf, kb) {
            Some((v, _, _)) => acc += vol * v,
            None => return Ok(None),
        }
    }
    Ok(Some(acc))
}

/// One explicit Euler step of the reaction-diffusion limit system, advancing
/// the integrated fluxes so mass bookkeeping stays exact.
pub fn rd_step(state: &RdState, dt: f64) -> Result<RdState, LatticeError> {
    let grid = state.grid();
    let d_max = state.d_a.max(state.d_b);
    let bound = if d_max > 0.0 {
        grid.eps() * grid.eps() / (2.0 * grid.dim() as f64 * d_max)
    } else {
        f64::INFINITY
    };
    if dt > bound {
        return Err(LatticeError::StabilityViolation { dt, bound });
    }
    let (rho_a, rho_b) = state.densities()?;
    let mut next = state.clone();
    let grad_a = discrete_grad(&rho_a);
    let grad_b = discrete_grad(&rho_b);
    for i in 0..grid.faces() {
        next.w_tr_a.values_mut()[i] -= dt * state.d_a * grad_a.values()[i];
        next.w_tr_b.values_mut()[i] -= dt * state.d_b * grad_b.values()[i];
    }
    for site in 0..grid.sites() {
        next.w_re.values_mut()[site] +=
            dt * (state.kappa_fw * rho_a.values()[site] - state.kappa_bw * rho_b.values()[site]);
    }
    Ok(next)
}

/// Optimal splitting of a state velocity between transport and reaction.
#[derive(Debug, Clone)]
pub struct RdSplit {
    pub value: f64,
    pub j_tr_a: FaceField,
    pub j_tr_b: FaceField,
    pub j_re: ScalarField,
    pub converged: bool,
    pub residual: f64,
    pub sweeps: usize,
}

/// State-space dissipation potential of the reaction-diffusion model:
///
/// `Psi_hat(rho, s) = inf { Psi_tr(j_tr) + Psi_re(j_re) :
///                          s_y = -div j_tr_y + (Gamma j_re)_y }`
///
/// with `Psi_tr = sum_y ||j_y||^2_{L^2(1/rho_y)} / (4 D_y)` and
/// `Psi_re = sum_x sigma(x) (cosh*(j_re(x)/sigma(x)) + 1) eps^d`.
///
/// Transport fluxes are eliminated exactly (given `j_re` the optimal
/// transport cost is a weighted dual-norm of the residual source), and the
/// remaining strictly convex problem in `j_re` is solved by projected
/// Newton iterations with conjugate-gradient inner solves on the mean-pinned
/// subspace.
pub fn rd_state_psi(
    state: &RdState,
    s_a: &ScalarField,
    s_b: &ScalarField,
) -> Result<RdSplit, LatticeError> {
    let grid = state.grid();
    if s_a.grid() != grid || s_b.grid() != grid {
        return Err(LatticeError::GridMismatch);
    }
    let (rho_a, rho_b) = state.densities()?;
    for (site, (&a, &b)) in rho_a.values().iter().zip(rho_b.values()).enumerate() {
        if a <= 0.0 || b <= 0.0 {
            return Err(LatticeError::NonPositiveDensity { site });
        }
    }
    let sites = grid.sites() as f64;
    let total = s_a.values().iter().sum::<f64>() + s_b.values().iter().sum::<f64>();
    let scale = s_a
        .values()
        .iter()
        .chain(s_b.values())
        .fold(0.0f64, |m, x| m.max(x.abs()))
        .max(1.0);
    if (total / sites).abs() > 1e-12 * scale {
        return Err(LatticeError::NotSolvable {
            mean: total / sites,
        });
    }

    let vol = grid.cell_volume();
    let sigma = state.sigma(&rho_a, &rho_b);
    // Mean of j_re is pinned by torus solvability of the transport parts.
    let pinned_mean = -s_a.values().iter().sum::<f64>() / sites;

    let residual_a = |j: &[f64]| -> ScalarField {
        let mut r = s_a.clone();
        for (ri, ji) in r.values_mut().iter_mut().zip(j) {
            *ri += ji;
        }
        let m = r.values().iter().sum::<f64>() / sites;
        for ri in r.values_mut() {
            *ri -= m;
        }
        r
    };
    let residual_b = |j: &[f64]| -> ScalarField {
        let mut r = s_b.clone();
        for (ri, ji) in r.values_mut().iter_mut().zip(j) {
            *ri -= ji;
        }
        let m = r.values().iter().sum::<f64>() / sites;
        for ri in r.values_mut() {
            *ri -= m;
        }
        r
    };
    let psi_re = |j: &[f64]| -> f64 {
        vol * j
            .iter()
            .zip(&sigma)
            .map(|(&ji, &s)| s * (cosh_star(ji / s) + 1.0))
            .sum::<f64>()
    };
    let objective = |j: &[f64]| -> Result<(f64, ScalarField, ScalarField), LatticeError> {
        let ra = residual_a(j);
        let rb = residual_b(j);
        let (qa, xa) = hminus1_norm(&rho_a, &ra)?;
        let (qb, xb) = hminus1_norm(&rho_b, &rb)?;
        Ok((
            qa / (4.0 * state.d_a) + qb / (4.0 * state.d_b) + psi_re(j),
            xa,
            xb,
        ))
    };

    let mut j = vec![pinned_mean; grid.sites()];
    let (mut g_value, mut xi_a, mut xi_b) = objective(&j)?;
    let max_sweeps = 10_000usize;
    let mut converged = false;
    let mut residual = f64::INFINITY;
    let mut sweeps = 0usize;
    while sweeps < max_sweeps {
        sweeps += 1;
        // Gradient (projected onto mean-zero variations).
        let mut grad: Vec<f64> = (0..grid.sites())
            .map(|x| {
                vol * (xi_a.values()[x] / (2.0 * state.d_a) - xi_b.values()[x] / (2.0 * state.d_b)
                    + (j[x] / sigma[x]).asinh())
            })
            .collect();
        let gm = grad.iter().sum::<f64>() / sites;
        for g in grad.iter_mut() {
            *g -= gm;
        }
        residual = grad.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        if residual <= 1e-12 * (1.0 + g_value.abs()).max(scale) {
            converged = true;
            break;
        }

        // Newton direction via CG on the mean-zero subspace; the Hessian is
        // two inverse elliptic operators plus a positive diagonal.
        let rho_a_ref = &rho_a;
        let rho_b_ref = &rho_b;
        let sigma_ref = &sigma;
        let j_ref = &j;
        let apply = |v: &[f64]| -> Vec<f64> {
            let vf = ScalarField::from_values(grid, v.to_vec()).expect("grid");
            let (_, inv_a) = hminus1_norm(rho_a_ref, &vf).expect("mean-zero Krylov vector");
            let (_, inv_b) = hminus1_norm(rho_b_ref, &vf).expect("mean-zero Krylov vector");
            (0..v.len())
                .map(|x| {
                    vol * (inv_a.values()[x] / (2.0 * state.d_a)
                        + inv_b.values()[x] / (2.0 * state.d_b)
                        + v[x] / (sigma_ref[x].powi(2) + j_ref[x].powi(2)).sqrt())
                })
                .collect()
        };
        let project = |v: &mut Vec<f64>| {
            let m = v.iter().sum::<f64>() / sites;
            for x in v.iter_mut() {
                *x -= m;
            }
        };
        let (direction, _) = conjugate_gradient(apply, project, &grad, 1e-10, 400);

        // Backtracking on the objective.
        let slope: f64 = grad.iter().zip(&direction).map(|(a, b)| a * b).sum();
        let mut lambda = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let trial: Vec<f64> = j
                .iter()
                .zip(&direction)
                .map(|(&ji, &di)| ji - lambda * di)
                .collect();
            let (value, xa, xb) = objective(&trial)?;
            if value <= g_value - 1e-4 * lambda * slope {
                let rel_change = (g_value - value).abs() / (1.0 + g_value.abs());
                j = trial;
                g_value = value;
                xi_a = xa;
                xi_b = xb;
                accepted = true;
                if rel_change <= 1e-10 {
                    converged = true;
                }
                break;
            }
            lambda *= 0.5;
        }
        if !accepted || converged {
            converged = converged || residual <= 1e-9 * (1.0 + g_value.abs()).max(scale);
            break;
        }
    }
    if !converged && sweeps >= max_sweeps {
        return Err(LatticeError::NotConverged { sweeps });
    }

    // Reconstruct the optimal transport fluxes: j_tr = rho_face grad xi.
    let build_flux = |rho: &ScalarField, xi: &ScalarField| -> FaceField {
        let rho_face = face_average(rho);
        let mut flux = discrete_grad(xi);
        for (f, r) in flux.values_mut().iter_mut().zip(rho_face.values()) {
            *f *= r;
        }
        flux
    };
    Ok(RdSplit {
        value: g_value,
        j_tr_a: build_flux(&rho_a, &xi_a),
        j_tr_b: build_flux(&rho_b, &xi_b),
        j_re: ScalarField::from_values(grid, j).expect("grid"),
        converged,
        residual,
        sweeps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::inner_sites;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn uniform_state(grid: Grid, a: f64, b: f64) -> RdState {
        RdState::new(
            ScalarField::constant(grid, a),
            ScalarField::constant(grid, b),
            1.0,
            0.5,
            1.0,
            1.0,
        )
        .unwrap()
    }

    fn wavy_state(grid: Grid) -> RdState {
        let n = grid.sites();
        let wave = |phase: f64, amp: f64| -> ScalarField {
            ScalarField::from_values(
                grid,
                (0..n)
                    .map(|i| {
                        1.0 + amp * (2.0 * std::f64::consts::PI * i as f64 / n as f64 + phase).sin()
                    })
                    .collect(),
            )
            .unwrap()
        };
        RdState::new(wave(0.0, 0.35), wave(1.0, 0.25), 1.0, 0.5, 1.3, 0.7).unwrap()
    }

    #[test]
    fn rate_function_is_additive_across_mechanisms() {
        let g = Grid::new(1, 8, 0.5).unwrap();
        let state = wavy_state(g);
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let j_tr_a = FaceField::from_values(
            g,
            (0..g.faces()).map(|_| rng.gen_range(-0.5..0.5)).collect(),
        )
        .unwrap();
        let j_tr_b = FaceField::from_values(
            g,
            (0..g.faces()).map(|_| rng.gen_range(-0.5..0.5)).collect(),
        )
        .unwrap();
        let j_re_1 = ScalarField::from_values(
            g,
            (0..g.sites()).map(|_| rng.gen_range(-0.5..0.5)).collect(),
        )
        .unwrap();
        let j_re_2 = ScalarField::from_values(
            g,
            (0..g.sites()).map(|_| rng.gen_range(-0.5..0.5)).collect(),
        )
        .unwrap();
        let zero_tr = FaceField::zeros(g);
        let zero_re = ScalarField::zeros(g);
        let total_1 = rd_l(&state, &j_tr_a, &j_tr_b, &j_re_1).unwrap().unwrap();
        let total_2 = rd_l(&state, &j_tr_a, &j_tr_b, &j_re_2).unwrap().unwrap();
        let tr_only = rd_l(&state, &j_tr_a, &j_tr_b, &zero_re).unwrap().unwrap();
        let re_1 = rd_l(&state, &zero_tr, &zero_tr, &j_re_1).unwrap().unwrap();
        let re_2 = rd_l(&state, &zero_tr, &zero_tr, &j_re_2).unwrap().unwrap();
        let base = rd_l(&state, &zero_tr, &zero_tr, &zero_re).unwrap().unwrap();
        // L(j_tr, j_re) = L_tr(j_tr) + L_re(j_re): changing j_re shifts the
        // total by exactly the reaction part.
        assert!(((total_1 - total_2) - (re_1 - re_2)).abs() < 1e-12);
        assert!(((total_1 - re_1) - (tr_only - base)).abs() < 1e-12);
    }

    #[test]
    fn rate_vanishes_on_the_reaction_diffusion_flow() {
        let g = Grid::new(1, 8, 0.5).unwrap();
        let state = wavy_state(g);
        let (rho_a, rho_b) = state.densities().unwrap();
        let mut j_tr_a = discrete_grad(&rho_a);
        for v in j_tr_a.values_mut() {
            *v *= -state.d_a;
        }
        let mut j_tr_b = discrete_grad(&rho_b);
        for v in j_tr_b.values_mut() {
            *v *= -state.d_b;
        }
        let j_re = ScalarField::from_values(
            g,
            rho_a
                .values()
                .iter()
                .zip(rho_b.values())
                .map(|(&a, &b)| state.kappa_fw * a - state.kappa_bw * b)
                .collect(),
        )
        .unwrap();
        let l = rd_l(&state, &j_tr_a, &j_tr_b, &j_re).unwrap().unwrap();
        assert!(l.abs() < 1e-12, "L = {l}");
    }

    #[test]
    fn balanced_uniform_state_has_zero_reaction_cost() {
        let g = Grid::new(1, 4, 1.0).unwrap();
        let state = uniform_state(g, 1.0, 1.0);
        let zero_tr = FaceField::zeros(g);
        let zero_re = ScalarField::zeros(g);
        let l = rd_l(&state, &zero_tr, &zero_tr, &zero_re).unwrap().unwrap();
        assert_eq!(l, 0.0);
    }

    #[test]
    fn rd_step_fixed_point_and_mass_conservation() {
        let g = Grid::new(1, 8, 0.5).unwrap();
        // kappa_fw rho_A = kappa_bw rho_B: equilibrium of the uniform state.
        let state = RdState::new(
            ScalarField::constant(g, 1.0),
            ScalarField::constant(g, 2.0),
            1.0,
            0.5,
            2.0,
            1.0,
        )
        .unwrap();
        let next = rd_step(&state, 0.01).unwrap();
        let (rho_a, rho_b) = next.densities().unwrap();
        assert!(rho_a.values().iter().all(|&x| (x - 1.0).abs() < 1e-14));
        assert!(rho_b.values().iter().all(|&x| (x - 2.0).abs() < 1e-14));

        // Total mass (A + B) constant under combined stepping.
        let mut state = wavy_state(g);
        let (a0, b0) = state.densities().unwrap();
        let mass0 = a0.total() + b0.total();
        for _ in 0..50 {
            state = rd_step(&state, 0.02).unwrap();
        }
        let (a1, b1) = state.densities().unwrap();
        assert!((a1.total() + b1.total() - mass0).abs() < 1e-12 * mass0);
    }

    #[test]
    fn single_site_matches_reaction_network_ode() {
        // n = 1: transport is dead and the stepper is the two-species
        // mass-action system; compare against the network integrator.
        use crate::dynamics::integrate_rre;
        use crate::network::{Concentration, Reaction, ReactionNetwork, Timescale};
        let g = Grid::new(1, 1, 1.0).unwrap();
        let mut state = RdState::new(
            ScalarField::constant(g, 3.0),
            ScalarField::constant(g, 0.0),
            1.0,
            1.0,
            2.0,
            1.0,
        )
        .unwrap();
        let dt = 1e-5;
        let steps = (1.0 / dt) as usize;
        for _ in 0..steps {
            state = rd_step(&state, dt).unwrap();
        }
        let (rho_a, _) = state.densities().unwrap();

        let net = ReactionNetwork::new(
            vec!["A".into(), "B".into()],
            vec![Reaction {
                alpha: vec![1, 0],
                beta: vec![0, 1],
                kappa_fw: 2.0,
                kappa_bw: 1.0,
                timescale: Timescale::Slow,
            }],
        )
        .unwrap();
        let rho0 = Concentration::new(vec![3.0, 0.0]).unwrap();
        let ode = integrate_rre(&net, &rho0, 1.0, &[1.0]).unwrap().states[0][0];
        assert!(
            (rho_a.values()[0] - ode).abs() < 1e-4,
            "{} vs {ode}",
            rho_a.values()[0]
        );
    }

    #[test]
    fn combined_free_energy_decreases() {
        // F = 1/2 sum [rho_A (log(kf rho_A) - 1) + rho_B (log(kb rho_B) - 1)].
        let g = Grid::new(1, 16, 0.25).unwrap();
        let mut state = wavy_state(g);
        let free_energy = |state: &RdState| -> f64 {
            let (a, b) = state.densities().unwrap();
            0.5 * g.cell_volume()
                * a.values()
                    .iter()
                    .zip(b.values())
                    .map(|(&pa, &pb)| {
                        pa * ((state.kappa_fw * pa).ln() - 1.0)
                            + pb * ((state.kappa_bw * pb).ln() - 1.0)
                    })
                    .sum::<f64>()
        };
        let mut prev = free_energy(&state);
        for _ in 0..100 {
            state = rd_step(&state, 0.01).unwrap();
            let f = free_energy(&state);
            assert!(f <= prev + 1e-12);
            prev = f;
        }
    }

    #[test]
    fn zero_velocity_splits_to_zero() {
        let g = Grid::new(1, 4, 1.0).unwrap();
        let state = uniform_state(g, 1.0, 1.0);
        let zero = ScalarField::zeros(g);
        let split = rd_state_psi(&state, &zero, &zero).unwrap();
        assert!(split.value.abs() < 1e-12);
        assert!(split.j_re.values().iter().all(|&x| x.abs() < 1e-9));
    }

    #[test]
    fn single_site_split_has_closed_form() {
        // n = 1: the constraint pins j_re = s_B and the value is
        // sigma (cosh*(s_B / sigma) + 1).
        let g = Grid::new(1, 1, 1.0).unwrap();
        let state = RdState::new(
            ScalarField::constant(g, 2.0),
            ScalarField::constant(g, 1.0),
            1.0,
            1.0,
            1.5,
            0.5,
        )
        .unwrap();
        let s_b = 0.8;
        let sa = ScalarField::from_values(g, vec![-s_b]).unwrap();
        let sb = ScalarField::from_values(g, vec![s_b]).unwrap();
        let split = rd_state_psi(&state, &sa, &sb).unwrap();
        let sigma = 2.0 * (1.5f64 * 0.5 * 2.0 * 1.0).sqrt();
        let expected = sigma * (cosh_star(s_b / sigma) + 1.0);
        assert!(
            (split.value - expected).abs() < 1e-9,
            "{} vs {expected}",
            split.value
        );
        assert!((split.j_re.values()[0] - s_b).abs() < 1e-9);
    }

    #[test]
    fn split_satisfies_continuity_and_is_locally_optimal() {
        let g = Grid::new(1, 4, 0.5).unwrap();
        let state = wavy_state(g);
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        // Mean-free velocity pair.
        let mut sa: Vec<f64> = (0..4).map(|_| rng.gen_range(-0.5..0.5)).collect();
        let mut sb: Vec<f64> = (0..4).map(|_| rng.gen_range(-0.5..0.5)).collect();
        let shift = (sa.iter().sum::<f64>() + sb.iter().sum::<f64>()) / 8.0;
        for v in sa.iter_mut().chain(sb.iter_mut()) {
            *v -= shift;
        }
        let sa = ScalarField::from_values(g, sa).unwrap();
        let sb = ScalarField::from_values(g, sb).unwrap();
        let split = rd_state_psi(&state, &sa, &sb).unwrap();
        assert!(split.converged);

        // Continuity of the reported split.
        let div_a = discrete_div(&split.j_tr_a);
        let div_b = discrete_div(&split.j_tr_b);
        for x in 0..4 {
            let ca = -div_a.values()[x] - split.j_re.values()[x];
            let cb = -div_b.values()[x] + split.j_re.values()[x];
            assert!((ca - sa.values()[x]).abs() < 1e-8, "A continuity at {x}");
            assert!((cb - sb.values()[x]).abs() < 1e-8, "B continuity at {x}");
        }

        // The reported value is the objective of the split and random
        // feasible perturbations do not improve it.
        let (rho_a, rho_b) = state.densities().unwrap();
        let vol = g.cell_volume();
        let sigma = state.sigma(&rho_a, &rho_b);
        let joint = |j_tr_a: &FaceField, j_tr_b: &FaceField, j_re: &[f64]| -> f64 {
            let rfa = face_average(&rho_a);
            let rfb = face_average(&rho_b);
            let mut acc = 0.0;
            for i in 0..g.faces() {
                acc += j_tr_a.values()[i].powi(2) / rfa.values()[i] / (4.0 * state.d_a);
                acc += j_tr_b.values()[i].powi(2) / rfb.values()[i] / (4.0 * state.d_b);
            }
            acc *= vol;
            acc + vol
                * j_re
                    .iter()
                    .zip(&sigma)
                    .map(|(&ji, &s)| s * (cosh_star(ji / s) + 1.0))
                    .sum::<f64>()
        };
        let base = joint(&split.j_tr_a, &split.j_tr_b, split.j_re.values());
        assert!((base - split.value).abs() < 1e-8);
        for _ in 0..40 {
            // Perturb j_re by a mean-zero delta and re-solve transport
            // exactly; the joint value must not drop.
            let mut delta: Vec<f64> = (0..4).map(|_| rng.gen_range(-0.05..0.05)).collect();
            let dm = delta.iter().sum::<f64>() / 4.0;
            for d in delta.iter_mut() {
                *d -= dm;
            }
            let j_re: Vec<f64> = split
                .j_re
                .values()
                .iter()
                .zip(&delta)
                .map(|(a, b)| a + b)
                .collect();
            let mut ra = sa.clone();
            let mut rb = sb.clone();
            for x in 0..4 {
                ra.values_mut()[x] += j_re[x];
                rb.values_mut()[x] -= j_re[x];
            }
            let (qa, xa) = hminus1_norm(&rho_a, &ra).unwrap();
            let (qb, xb) = hminus1_norm(&rho_b, &rb).unwrap();
            let _ = (xa, xb);
            let value = qa / (4.0 * state.d_a)
                + qb / (4.0 * state.d_b)
                + vol
                    * j_re
                        .iter()
                        .zip(&sigma)
                        .map(|(&ji, &s)| s * (cosh_star(ji / s) + 1.0))
                        .sum::<f64>();
            assert!(
                value >= split.value - 1e-9,
                "perturbation improved the split"
            );
        }
    }

    #[test]
    fn inf_convolution_upper_bounds() {
        // The optimal split is no worse than forcing everything through one
        // mechanism when both are feasible.
        let g = Grid::new(1, 4, 1.0).unwrap();
        let state = uniform_state(g, 1.5, 1.0);
        // Pure-reaction-feasible velocity: s_A = -a, s_B = +a sitewise; a is
        // also chosen mean-zero so the pure-transport split is feasible too.
        let a = vec![0.3, -0.1, 0.2, -0.4];
        let sa = ScalarField::from_values(g, a.iter().map(|&x| -x).collect()).unwrap();
        let sb = ScalarField::from_values(g, a.clone()).unwrap();
        let split = rd_state_psi(&state, &sa, &sb).unwrap();
        let (rho_a, rho_b) = state.densities().unwrap();
        let sigma = state.sigma(&rho_a, &rho_b);
        let reaction_only: f64 = g.cell_volume()
            * a.iter()
                .zip(&sigma)
                .map(|(&ji, &s)| s * (cosh_star(ji / s) + 1.0))
                .sum::<f64>();
        assert!(split.value <= reaction_only + 1e-10);
        let transport_only = {
            let (qa, _) = hminus1_norm(&rho_a, &sa).unwrap();
            let (qb, _) = hminus1_norm(&rho_b, &sb).unwrap();
            qa / (4.0 * state.d_a) + qb / (4.0 * state.d_b)
        };
        assert!(split.value <= transport_only + 1e-10);
        let _ = inner_sites(&sa, &sb);
    }
}
