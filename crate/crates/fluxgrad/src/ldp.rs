//! Hamiltonians and rate functions on state space and flux space, numerical
//! Legendre transforms, and the contraction identity connecting the two
//! levels.
//!
//! On flux space the rate function has a closed entropic form: for each slow
//! reaction the optimal one-way split solves a scalar quadratic, and fast
//! fluxes are pinned to their limit kinetics by an indicator. The state-space
//! rate function is computed as a convex dual (`sup_xi xi.s - H(rho, xi)`),
//! and `contraction` minimizes the flux rate function over all fluxes
//! compatible with a state velocity, an independent route that must agree
//! with the dual computation.

use thiserror::Error;

use crate::dynamics::FluxVector;
use crate::network::{Concentration, ReactionNetwork};
use crate::numerics::{
    dot, golden_section, norm_inf, orthonormal_basis, rational_rref, solve_dense,
};

/// Exponent clip: beyond this the exponential is extended linearly so that
/// dual iterations never produce non-finite intermediates.
const EXP_CLIP: f64 = 700.0;

/// Absolute band within which a fast flux is accepted as equal to its limit
/// kinetics.
pub const FAST_FLUX_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum LdpError {
    #[error("continuity state has negative component {index}: {value}")]
    InfeasibleState { index: usize, value: f64 },
    #[error("velocity is not reachable through the stoichiometry (residual {residual:.3e})")]
    InfeasibleConstraint { residual: f64 },
    #[error("evaluator is not convex near the query point (second derivative {value:.3e})")]
    NonConvexityDetected { value: f64 },
}

/// Cotangent vector on flux space.
#[derive(Debug, Clone, PartialEq)]
pub struct FluxCotangent {
    pub slow: Vec<f64>,
    pub fast: Vec<f64>,
}

impl FluxCotangent {
    pub fn zeros(net: &ReactionNetwork) -> Self {
        FluxCotangent {
            slow: vec![0.0; net.n_slow()],
            fast: vec![0.0; net.n_fast()],
        }
    }
}

/// Outcome of a rate-function evaluation.
///
/// `finite == false` encodes the `+infinity` sentinel; `value` is then not
/// meaningful and must not enter arithmetic.
#[derive(Debug, Clone, PartialEq)]
pub struct RateEvaluation {
    pub value: f64,
    pub finite: bool,
    /// Optimal dual variable (suprema) or flux decomposition (infima).
    pub optimizer: Vec<f64>,
    pub converged: bool,
    /// Optimality gap: gradient norm at the reported optimizer.
    pub residual: f64,
}

impl RateEvaluation {
    fn infinite() -> Self {
        RateEvaluation {
            value: f64::INFINITY,
            finite: false,
            optimizer: Vec::new(),
            converged: true,
            residual: 0.0,
        }
    }

    fn closed_form(value: f64, optimizer: Vec<f64>) -> Self {
        RateEvaluation {
            value: clamp_value(value),
            finite: true,
            optimizer,
            converged: true,
            residual: 0.0,
        }
    }
}

fn clamp_value(v: f64) -> f64 {
    if v < 0.0 && v >= -1e-12 {
        0.0
    } else {
        v
    }
}

/// The continuity map `rho = rho0 + Gamma w`.
pub fn continuity_state(net: &ReactionNetwork, rho0: &Concentration, w: &FluxVector) -> Vec<f64> {
    let mut rho = rho0.as_slice().to_vec();
    let shift = net.apply_gamma(&w.slow, &w.fast);
    for (r, s) in rho.iter_mut().zip(&shift) {
        *r += s;
    }
    rho
}

fn feasible_state(
    net: &ReactionNetwork,
    rho0: &Concentration,
    w: &FluxVector,
) -> Result<Concentration, LdpError> {
    let rho = continuity_state(net, rho0, w);
    for (index, &value) in rho.iter().enumerate() {
        if value < -1e-12 {
            return Err(LdpError::InfeasibleState { index, value });
        }
    }
    Concentration::new(rho.iter().map(|&x| x.max(0.0)).collect()).map_err(|_| {
        LdpError::InfeasibleState {
            index: 0,
            value: f64::NAN,
        }
    })
}

fn exp_clipped(a: f64) -> f64 {
    if a <= EXP_CLIP {
        a.exp()
    } else {
        // Linear extension keeps the value finite and monotone.
        EXP_CLIP.exp() * (1.0 + (a - EXP_CLIP))
    }
}

fn exp_m1_clipped(a: f64) -> f64 {
    if a <= EXP_CLIP {
        a.exp_m1()
    } else {
        exp_clipped(a) - 1.0
    }
}

/// `k * (e^a - 1)` with an explicit zero short-circuit: one-way channels
/// have a vanishing coefficient exactly where the exponent may blow up.
fn weighted_exp_m1(k: f64, a: f64) -> f64 {
    if k == 0.0 {
        0.0
    } else {
        k * exp_m1_clipped(a)
    }
}

fn weighted_exp(k: f64, a: f64) -> f64 {
    if k == 0.0 {
        0.0
    } else {
        k * exp_clipped(a)
    }
}

/// State-space Hamiltonian
/// `H(rho, xi) = sum_slow k_fw (e^{xi.g} - 1) + k_bw (e^{-xi.g} - 1)
///             + sum_fast k_fast xi.g`.
pub fn state_h(net: &ReactionNetwork, rho: &Concentration, xi: &[f64]) -> f64 {
    let rates = net.mass_action_rates(rho);
    let (slow_pull, fast_pull) = net.pullback(xi);
    let mut acc = 0.0;
    for (i, &r) in net.slow_indices().iter().enumerate() {
        let a = slow_pull[i];
        acc += weighted_exp_m1(rates.fw[r], a) + weighted_exp_m1(rates.bw[r], -a);
    }
    for (i, &r) in net.fast_indices().iter().enumerate() {
        acc += rates.fw[r] * fast_pull[i];
    }
    acc
}

/// Gradient of `state_h` in `xi`.
fn state_h_grad(net: &ReactionNetwork, rho: &Concentration, xi: &[f64]) -> Vec<f64> {
    let rates = net.mass_action_rates(rho);
    let (slow_pull, _) = net.pullback(xi);
    let mut g = vec![0.0; net.n_species()];
    for (i, &r) in net.slow_indices().iter().enumerate() {
        let a = slow_pull[i];
        let weight = weighted_exp(rates.fw[r], a) - weighted_exp(rates.bw[r], -a);
        for (gy, &gamma) in g.iter_mut().zip(&net.slow_gammas()[i]) {
            *gy += weight * gamma as f64;
        }
    }
    for (i, &r) in net.fast_indices().iter().enumerate() {
        for (gy, &gamma) in g.iter_mut().zip(&net.fast_gammas()[i]) {
            *gy += rates.fw[r] * gamma as f64;
        }
    }
    g
}

/// Flux-space Hamiltonian
/// `H(w, zeta) = sum_slow k_fw(phi[w]) (e^{zeta_r} - 1) + k_bw(phi[w]) (e^{-zeta_r} - 1)
///             + sum_fast k_fast(phi[w]) zeta_r`.
///
/// Depends on `w` only through the continuity state `phi[w]`.
pub fn flux_h(
    net: &ReactionNetwork,
    rho0: &Concentration,
    w: &FluxVector,
    zeta: &FluxCotangent,
) -> Result<f64, LdpError> {
    let rho = feasible_state(net, rho0, w)?;
    let rates = net.mass_action_rates(&rho);
    let mut acc = 0.0;
    for (i, &r) in net.slow_indices().iter().enumerate() {
        let z = zeta.slow[i];
        acc += weighted_exp_m1(rates.fw[r], z) + weighted_exp_m1(rates.bw[r], -z);
    }
    for (i, &r) in net.fast_indices().iter().enumerate() {
        acc += rates.fw[r] * zeta.fast[i];
    }
    Ok(acc)
}

/// Relative entropy `h(x | k) = x log(x/k) - x + k` with `0 log 0 = 0`.
/// Infinite when `x > 0` but `k = 0`.
fn scalar_entropy(x: f64, k: f64) -> Option<f64> {
    if x == 0.0 {
        return Some(k);
    }
    if k == 0.0 {
        return None;
    }
    Some(x * (x / k).ln() - x + k)
}

/// Closed-form per-reaction rate: the cost of a net flux `j` through a
/// channel with one-way rates `(k_fw, k_bw)`, minimizing
/// `h(j_fw | k_fw) + h(j_bw | k_bw)` over `j_fw - j_bw = j`.
/// Returns the value and the optimal one-way pair; `None` is the infinite
/// sentinel.
pub fn channel_rate(j: f64, k_fw: f64, k_bw: f64) -> Option<(f64, f64, f64)> {
    if k_fw > 0.0 && k_bw > 0.0 {
        let radicand = j * j + 4.0 * k_fw * k_bw;
        let root = radicand.sqrt();
        // Stable split of the quadratic-formula pair.
        let (jf, jb) = if j >= 0.0 {
            let jf = 0.5 * (j + root);
            (jf, 2.0 * k_fw * k_bw / (root + j))
        } else {
            let jb = 0.5 * (root - j);
            (2.0 * k_fw * k_bw / (root - j), jb)
        };
        let value = scalar_entropy(jf, k_fw)? + scalar_entropy(jb, k_bw)?;
        Some((value, jf, jb))
    } else if k_fw > 0.0 {
        if j < 0.0 {
            return None;
        }
        Some((scalar_entropy(j, k_fw)?, j, 0.0))
    } else if k_bw > 0.0 {
        if j > 0.0 {
            return None;
        }
        Some((scalar_entropy(-j, k_bw)?, 0.0, -j))
    } else if j == 0.0 {
        Some((0.0, 0.0, 0.0))
    } else {
        None
    }
}

/// Derivative of the per-reaction rate in the net flux: `log(j_fw / k_fw)`
/// at the optimal split.
fn channel_rate_derivative(j: f64, k_fw: f64, k_bw: f64) -> f64 {
    if k_fw > 0.0 && k_bw > 0.0 {
        let root = (j * j + 4.0 * k_fw * k_bw).sqrt();
        let jf = if j >= 0.0 {
            0.5 * (j + root)
        } else {
            2.0 * k_fw * k_bw / (root - j)
        };
        (jf / k_fw).ln()
    } else if k_fw > 0.0 {
        (j / k_fw).ln()
    } else {
        -((-j) / k_bw).ln()
    }
}

/// Second derivative `1 / sqrt(j^2 + 4 k_fw k_bw)` (or `1/|j|` one-way).
fn channel_rate_curvature(j: f64, k_fw: f64, k_bw: f64) -> f64 {
    if k_fw > 0.0 && k_bw > 0.0 {
        1.0 / (j * j + 4.0 * k_fw * k_bw).sqrt()
    } else {
        1.0 / j.abs().max(1e-300)
    }
}

/// Flux-space rate function in closed entropic form. The optimizer holds the
/// one-way decomposition `[j_fw_0, j_bw_0, j_fw_1, ...]` over slow reactions.
pub fn flux_l(
    net: &ReactionNetwork,
    rho0: &Concentration,
    w: &FluxVector,
    j: &FluxVector,
) -> Result<RateEvaluation, LdpError> {
    let rho = feasible_state(net, rho0, w)?;
    let rates = net.mass_action_rates(&rho);
    let mut value = 0.0;
    let mut decomposition = Vec::with_capacity(2 * net.n_slow());
    for (i, &r) in net.slow_indices().iter().enumerate() {
        match channel_rate(j.slow[i], rates.fw[r], rates.bw[r]) {
            Some((v, jf, jb)) => {
                value += v;
                decomposition.push(jf);
                decomposition.push(jb);
            }
            None => return Ok(RateEvaluation::infinite()),
        }
    }
    for (i, &r) in net.fast_indices().iter().enumerate() {
        if (j.fast[i] - rates.fw[r]).abs() > FAST_FLUX_TOL {
            return Ok(RateEvaluation::infinite());
        }
    }
    Ok(RateEvaluation::closed_form(value, decomposition))
}

/// State-space rate function `sup_xi xi.s - H(rho, xi)`, computed by damped
/// Newton on the concave dual with a coarse multistart fallback. Velocities
/// outside the reachable span give the infinite sentinel.
pub fn state_l(net: &ReactionNetwork, rho: &Concentration, s: &[f64]) -> RateEvaluation {
    let ny = net.n_species();
    assert_eq!(s.len(), ny);
    let rates = net.mass_action_rates(rho);

    // The fast part of H is linear: it shifts the velocity.
    let mut s_eff = s.to_vec();
    for (i, &r) in net.fast_indices().iter().enumerate() {
        for (se, &g) in s_eff.iter_mut().zip(&net.fast_gammas()[i]) {
            *se -= rates.fw[r] * g as f64;
        }
    }

    // Active slow directions: channels with any rate at this state.
    let active: Vec<Vec<f64>> = net
        .slow_indices()
        .iter()
        .enumerate()
        .filter(|&(_, &r)| rates.fw[r] + rates.bw[r] > 0.0)
        .map(|(i, _)| net.slow_gammas()[i].iter().map(|&g| g as f64).collect())
        .collect();
    let basis = orthonormal_basis(&active, 1e-12);
    let scale = 1.0 + norm_inf(&s_eff);

    // Range test: the dual grows linearly along any component of s outside
    // the span of the active stoichiometry.
    let mut residual_vec = s_eff.clone();
    for b in &basis {
        let c = dot(&residual_vec, b);
        for (ri, bi) in residual_vec.iter_mut().zip(b) {
            *ri -= c * bi;
        }
    }
    if norm_inf(&residual_vec) > 1e-9 * scale {
        return RateEvaluation::infinite();
    }
    let k = basis.len();
    if k == 0 {
        return RateEvaluation::closed_form(0.0, vec![0.0; ny]);
    }

    let xi_of = |y: &[f64]| -> Vec<f64> {
        let mut xi = vec![0.0; ny];
        for (c, b) in y.iter().zip(&basis) {
            for (x, bi) in xi.iter_mut().zip(b) {
                *x += c * bi;
            }
        }
        xi
    };
    let objective = |y: &[f64]| -> f64 {
        let xi = xi_of(y);
        dot(&xi, &s_eff) - state_h(net, rho, &xi)
    };
    let gradient = |y: &[f64]| -> Vec<f64> {
        let xi = xi_of(y);
        let hg = state_h_grad(net, rho, &xi);
        basis.iter().map(|b| dot(b, &s_eff) - dot(b, &hg)).collect()
    };

    // Pullback of a basis-coordinate vector onto the reaction exponents; the
    // map is linear, which lets the step be capped onto the clip domain in
    // closed form.
    let exponents_of = |y: &[f64]| -> Vec<f64> {
        let xi = xi_of(y);
        net.pullback(&xi).0
    };
    let newton = |start: &[f64]| -> (Vec<f64>, f64, bool) {
        let mut y = start.to_vec();
        for _ in 0..100 {
            let g = gradient(&y);
            if norm_inf(&g) <= 1e-11 * scale {
                return (y, norm_inf(&g), true);
            }
            // Hessian of H restricted to the basis.
            let slow_pull = exponents_of(&y);
            let mut hess = vec![vec![0.0; k]; k];
            for (i, &r) in net.slow_indices().iter().enumerate() {
                let weight = weighted_exp(rates.fw[r], slow_pull[i])
                    + weighted_exp(rates.bw[r], -slow_pull[i]);
                if weight == 0.0 {
                    continue;
                }
                let gamma: Vec<f64> = net.slow_gammas()[i].iter().map(|&g| g as f64).collect();
                let proj: Vec<f64> = basis.iter().map(|b| dot(b, &gamma)).collect();
                for a in 0..k {
                    for b in 0..k {
                        hess[a][b] += weight * proj[a] * proj[b];
                    }
                }
            }
            let Some(mut step) = solve_dense(hess, g.clone()) else {
                break;
            };
            // Cap the step so every reaction exponent stays within the clip
            // domain: exponents are affine along the step, so the largest
            // admissible fraction is explicit.
            let step_pull = exponents_of(&step);
            let mut fraction = 1.0f64;
            for (t0, td) in slow_pull.iter().zip(&step_pull) {
                if *td > 0.0 {
                    fraction = fraction.min((EXP_CLIP + 100.0 - t0) / td);
                } else if *td < 0.0 {
                    fraction = fraction.min((-(EXP_CLIP + 100.0) - t0) / td);
                }
            }
            if fraction < 1.0 {
                let fraction = fraction.max(0.0);
                for s in step.iter_mut() {
                    *s *= fraction;
                }
                if fraction == 0.0 {
                    break;
                }
            }
            let f0 = objective(&y);
            let slope = dot(&g, &step);
            let mut lambda = 1.0;
            let mut moved = false;
            for _ in 0..60 {
                let trial: Vec<f64> = y
                    .iter()
                    .zip(&step)
                    .map(|(&yi, &si)| yi + lambda * si)
                    .collect();
                if objective(&trial) >= f0 + 1e-4 * lambda * slope {
                    y = trial;
                    moved = true;
                    break;
                }
                lambda *= 0.5;
            }
            if !moved {
                break;
            }
        }
        let g = gradient(&y);
        (y, norm_inf(&g), false)
    };

    let (mut y, mut res, mut ok) = newton(&vec![0.0; k]);
    if !ok && res > 1e-8 * scale {
        // Multistart on a coarse grid (small dual dimension in practice).
        let mut best = (y.clone(), objective(&y));
        let mut stack = vec![vec![]];
        let grid = [-4.0, -2.0, 0.0, 2.0, 4.0];
        while let Some(prefix) = stack.pop() {
            if prefix.len() == k.min(3) {
                let mut start = prefix.clone();
                start.resize(k, 0.0);
                let v = objective(&start);
                if v > best.1 {
                    best = (start, v);
                }
                continue;
            }
            for &g in &grid {
                let mut next = prefix.clone();
                next.push(g);
                stack.push(next);
            }
        }
        let (y2, res2, ok2) = newton(&best.0);
        if objective(&y2) >= objective(&y) {
            y = y2;
            res = res2;
            ok = ok2;
        }
    }
    let xi = xi_of(&y);
    // Escape toward the exponent clip with a non-vanishing gradient means the
    // supremum is infinite along a one-way direction.
    let (slow_pull, _) = net.pullback(&xi);
    if !ok && res > 1e-6 * scale && norm_inf(&slow_pull) > EXP_CLIP - 20.0 {
        return RateEvaluation::infinite();
    }
    RateEvaluation {
        value: clamp_value(dot(&xi, &s_eff) - state_h(net, rho, &xi)),
        finite: true,
        optimizer: xi,
        converged: ok || res <= 1e-8 * scale,
        residual: res,
    }
}

/// Contraction of the flux rate function onto state space:
/// `inf { L(w, j) : Gamma j = s }`, solved as a projected Newton iteration
/// on the per-reaction closed forms over the kernel of the slow
/// stoichiometry. Fast fluxes are pinned to their kinetics.
pub fn contraction(
    net: &ReactionNetwork,
    rho0: &Concentration,
    w: &FluxVector,
    s: &[f64],
) -> Result<RateEvaluation, LdpError> {
    let rho = feasible_state(net, rho0, w)?;
    let rates = net.mass_action_rates(&rho);
    let ny = net.n_species();
    assert_eq!(s.len(), ny);

    // Pin fast fluxes and reduce to the slow constraint Gamma_slow j = s_eff.
    let mut s_eff = s.to_vec();
    let fast_j: Vec<f64> = net.fast_indices().iter().map(|&r| rates.fw[r]).collect();
    for (i, &jf) in fast_j.iter().enumerate() {
        for (se, &g) in s_eff.iter_mut().zip(&net.fast_gammas()[i]) {
            *se -= jf * g as f64;
        }
    }

    let n_slow = net.n_slow();
    let slow_gammas = net.slow_gammas();
    let columns: Vec<Vec<f64>> = slow_gammas
        .iter()
        .map(|g| g.iter().map(|&x| x as f64).collect())
        .collect();
    // Exact pivot structure of the column space.
    let rows: Vec<Vec<i64>> = (0..ny)
        .map(|y| slow_gammas.iter().map(|g| g[y]).collect())
        .collect();
    let rref = rational_rref(&rows, n_slow);
    let (j0, resid) = crate::numerics::least_squares_on_columns(&columns, &rref.pivot_cols, &s_eff);
    let scale = 1.0 + norm_inf(&s_eff);
    if resid > 1e-9 * scale {
        return Err(LdpError::InfeasibleConstraint { residual: resid });
    }
    let kernel: Vec<Vec<f64>> = rref
        .kernel
        .iter()
        .map(|v| v.iter().map(|&x| x as f64).collect())
        .collect();
    let m = kernel.len();

    let j_of = |u: &[f64]| -> Vec<f64> {
        let mut j = j0.clone();
        for (c, v) in u.iter().zip(&kernel) {
            for (ji, vi) in j.iter_mut().zip(v) {
                *ji += c * vi;
            }
        }
        j
    };
    let k_of = |i: usize| -> (f64, f64) {
        let r = net.slow_indices()[i];
        (rates.fw[r], rates.bw[r])
    };
    let admissible = |j: &[f64]| -> bool {
        (0..n_slow).all(|i| {
            let (kf, kb) = k_of(i);
            if kf > 0.0 && kb > 0.0 {
                true
            } else if kf > 0.0 {
                j[i] >= 0.0
            } else if kb > 0.0 {
                j[i] <= 0.0
            } else {
                j[i] == 0.0
            }
        })
    };
    let total = |j: &[f64]| -> Option<f64> {
        let mut acc = 0.0;
        for (i, &ji) in j.iter().enumerate() {
            let (kf, kb) = k_of(i);
            acc += channel_rate(ji, kf, kb)?.0;
        }
        Some(acc)
    };

    // Sign constraints per channel in kernel coordinates: the flux through
    // channel i is affine in u, so feasibility is an intersection of
    // half-spaces (equalities for dead channels). Cyclic projection finds a
    // point of that intersection whenever one exists; a violated constraint
    // whose channel does not meet the kernel is unfixable and the infimum is
    // genuinely infinite.
    let repair = |margin: f64| -> Option<Vec<f64>> {
        let mut u = vec![0.0; m];
        let column = |i: usize| -> Vec<f64> { kernel.iter().map(|v| v[i]).collect() };
        for _ in 0..2000 {
            let j = j_of(&u);
            let mut violated = false;
            for i in 0..n_slow {
                let (kf, kb) = k_of(i);
                let a = column(i);
                let norm2 = dot(&a, &a);
                // Required correction of j_i, positive to raise, negative to
                // lower; zero when the constraint holds with margin.
                let defect = if kf > 0.0 && kb > 0.0 {
                    0.0
                } else if kf > 0.0 {
                    (margin - j[i]).max(0.0)
                } else if kb > 0.0 {
                    (-margin - j[i]).min(0.0)
                } else {
                    -j[i]
                };
                if defect != 0.0 {
                    if norm2 == 0.0 {
                        return None;
                    }
                    violated = true;
                    for (ua, aa) in u.iter_mut().zip(&a) {
                        *ua += defect / norm2 * aa;
                    }
                }
            }
            if !violated {
                return Some(u);
            }
        }
        None
    };
    let mut u = vec![0.0; m];
    if !admissible(&j_of(&u)) {
        if m == 0 {
            return Ok(RateEvaluation::infinite());
        }
        let interior_margin = 1e-6 * (1.0 + norm_inf(&j0));
        match repair(interior_margin).or_else(|| repair(0.0)) {
            Some(fixed) => u = fixed,
            None => return Ok(RateEvaluation::infinite()),
        }
    }
    if m > 0 {
        let mut converged = false;
        for _ in 0..200 {
            let j = j_of(&u);
            let grad_full: Vec<f64> = (0..n_slow)
                .map(|i| {
                    let (kf, kb) = k_of(i);
                    channel_rate_derivative(j[i], kf, kb)
                })
                .collect();
            if grad_full.iter().any(|g| !g.is_finite()) {
                // Iterate pinned to a one-way boundary: leave it to the
                // derivative-free fallback.
                break;
            }
            let grad: Vec<f64> = kernel.iter().map(|v| dot(v, &grad_full)).collect();
            if norm_inf(&grad) <= 1e-11 * (1.0 + norm_inf(&grad_full)) {
                converged = true;
                break;
            }
            let mut hess = vec![vec![0.0; m]; m];
            for i in 0..n_slow {
                let (kf, kb) = k_of(i);
                let c = channel_rate_curvature(j[i], kf, kb);
                for a in 0..m {
                    for b in 0..m {
                        hess[a][b] += c * kernel[a][i] * kernel[b][i];
                    }
                }
            }
            let Some(step) = solve_dense(hess, grad.clone()) else {
                break;
            };
            let f0 = total(&j).unwrap_or(f64::MAX);
            let mut lambda = 1.0;
            let mut moved = false;
            for _ in 0..60 {
                let trial: Vec<f64> = u
                    .iter()
                    .zip(&step)
                    .map(|(&ui, &si)| ui - lambda * si)
                    .collect();
                let jt = j_of(&trial);
                if admissible(&jt) {
                    if let Some(ft) = total(&jt) {
                        if ft < f0 {
                            u = trial;
                            moved = true;
                            break;
                        }
                    }
                }
                lambda *= 0.5;
            }
            if !moved {
                break;
            }
        }
        if !converged && m <= 2 {
            // Coordinate golden-section sweeps as a derivative-free fallback.
            for _ in 0..6 {
                for a in 0..m {
                    let u_fixed = u.clone();
                    let (best, _) = golden_section(
                        |t| {
                            let mut trial = u_fixed.clone();
                            trial[a] = t;
                            let jt = j_of(&trial);
                            if admissible(&jt) {
                                total(&jt).unwrap_or(f64::MAX)
                            } else {
                                f64::MAX
                            }
                        },
                        u[a] - 10.0,
                        u[a] + 10.0,
                        1e-12,
                    );
                    u[a] = best;
                }
            }
        }
    }

    let j = j_of(&u);
    let Some(value) = total(&j) else {
        return Ok(RateEvaluation::infinite());
    };
    let grad_full: Vec<f64> = (0..n_slow)
        .map(|i| {
            let (kf, kb) = k_of(i);
            channel_rate_derivative(j[i], kf, kb)
        })
        .collect();
    // A non-finite derivative means the optimum sits on a one-way boundary,
    // where no smooth first-order certificate exists.
    let boundary = grad_full.iter().any(|g| !g.is_finite());
    let residual = if m == 0 {
        0.0
    } else if boundary {
        f64::MAX
    } else {
        norm_inf(
            &kernel
                .iter()
                .map(|v| dot(v, &grad_full))
                .collect::<Vec<_>>(),
        )
    };
    let converged = m == 0 || (!boundary && residual <= 1e-8 * (1.0 + norm_inf(&grad_full)));
    let mut optimizer = j;
    optimizer.extend_from_slice(&fast_j);
    Ok(RateEvaluation {
        value: clamp_value(value),
        finite: true,
        optimizer,
        converged,
        residual,
    })
}

/// Convex conjugate of `cosh`: `cosh*(x) = x asinh(x) - sqrt(1 + x^2)`.
/// The dissipation potentials use `cosh*(x) + 1`, which vanishes at zero.
pub fn cosh_star(x: f64) -> f64 {
    x * x.asinh() - x.hypot(1.0)
}

/// One-dimensional convex conjugate `sup_x (x j - f(x))` by golden section
/// over `[lo, hi]` followed by a Newton polish on finite differences.
/// Returns `(value, argmax)`.
pub fn legendre_1d<F: Fn(f64) -> f64>(
    f: F,
    j: f64,
    lo: f64,
    hi: f64,
) -> Result<(f64, f64), LdpError> {
    let neg = |x: f64| f(x) - x * j;
    let (mut x, _) = golden_section(&neg, lo, hi, 1e-10 * (hi - lo).abs().max(1.0));
    let h = 1e-5 * (1.0 + x.abs());
    for _ in 0..20 {
        let d1 = (neg(x + h) - neg(x - h)) / (2.0 * h);
        let d2 = (neg(x + h) - 2.0 * neg(x) + neg(x - h)) / (h * h);
        if d2 <= 0.0 {
            break;
        }
        let step = d1 / d2;
        if !step.is_finite() || step.abs() < 1e-14 * (1.0 + x.abs()) {
            break;
        }
        let trial = (x - step).clamp(lo, hi);
        if neg(trial) <= neg(x) {
            x = trial;
        } else {
            break;
        }
    }
    let d2f = (f(x + h) - 2.0 * f(x) + f(x - h)) / (h * h);
    if d2f < -1e-6 * (1.0 + f(x).abs()) {
        return Err(LdpError::NonConvexityDetected { value: d2f });
    }
    Ok((x * j - f(x), x))
}

/// Multidimensional convex conjugate `sup_x (x . j - f(x))` by damped Newton
/// on finite-difference derivatives.
pub fn legendre_nd<F: Fn(&[f64]) -> f64>(f: F, j: &[f64]) -> Result<(f64, Vec<f64>), LdpError> {
    let n = j.len();
    let objective = |x: &[f64]| dot(x, j) - f(x);
    let mut x = vec![0.0; n];
    let h = 1e-5;
    for _ in 0..60 {
        let g = crate::numerics::fd_gradient(&objective, &x, h);
        if norm_inf(&g) <= 1e-9 * (1.0 + norm_inf(j)) {
            break;
        }
        // Finite-difference Hessian of f (symmetrized).
        let mut hess = vec![vec![0.0; n]; n];
        let mut xp = x.clone();
        let mut diag_min = f64::INFINITY;
        for a in 0..n {
            for b in a..n {
                let mut stencil = 0.0;
                for (sa, sb, wgt) in [
                    (1.0, 1.0, 1.0),
                    (1.0, -1.0, -1.0),
                    (-1.0, 1.0, -1.0),
                    (-1.0, -1.0, 1.0),
                ] {
                    xp.copy_from_slice(&x);
                    xp[a] += sa * h;
                    xp[b] += sb * h;
                    stencil += wgt * f(&xp);
                }
                let v = stencil / (4.0 * h * h);
                hess[a][b] = v;
                hess[b][a] = v;
                if a == b {
                    diag_min = diag_min.min(v);
                }
            }
        }
        if diag_min < -1e-6 {
            return Err(LdpError::NonConvexityDetected { value: diag_min });
        }
        for (a, row) in hess.iter_mut().enumerate() {
            row[a] += 1e-12;
        }
        let Some(step) = solve_dense(hess, g.clone()) else {
            break;
        };
        let f0 = objective(&x);
        let mut lambda = 1.0;
        let mut moved = false;
        for _ in 0..60 {
            let trial: Vec<f64> = x
                .iter()
                .zip(&step)
                .map(|(&xi, &si)| xi + lambda * si)
                .collect();
            if objective(&trial) > f0 {
                x = trial;
                moved = true;
                break;
            }
            lambda *= 0.5;
        }
        if !moved {
            break;
        }
    }
    Ok((objective(&x), x))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{Reaction, Timescale};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn a_b(kf: f64, kb: f64) -> ReactionNetwork {
        ReactionNetwork::new(
            vec!["A".into(), "B".into()],
            vec![Reaction {
                alpha: vec![1, 0],
                beta: vec![0, 1],
                kappa_fw: kf,
                kappa_bw: kb,
                timescale: Timescale::Slow,
            }],
        )
        .unwrap()
    }

    fn two_channel(kf: f64, kb: f64) -> ReactionNetwork {
        ReactionNetwork::new(
            vec!["A".into(), "B".into()],
            vec![
                Reaction {
                    alpha: vec![1, 0],
                    beta: vec![0, 1],
                    kappa_fw: kf,
                    kappa_bw: kb,
                    timescale: Timescale::Slow,
                },
                Reaction {
                    alpha: vec![1, 0],
                    beta: vec![0, 1],
                    kappa_fw: kf,
                    kappa_bw: kb,
                    timescale: Timescale::Slow,
                },
            ],
        )
        .unwrap()
    }

    #[test]
    fn state_h_vanishes_at_zero() {
        let net = a_b(2.0, 1.0);
        let rho = Concentration::new(vec![1.5, 0.5]).unwrap();
        assert_eq!(state_h(&net, &rho, &[0.0, 0.0]), 0.0);
    }

    #[test]
    fn state_h_symmetric_channel_is_cosh() {
        // A <-> B at rho = (1,1), kappa = (1,1), xi = (0, t): H = 2 (cosh t - 1).
        let net = a_b(1.0, 1.0);
        let rho = Concentration::new(vec![1.0, 1.0]).unwrap();
        for t in [-2.0, -0.5, 0.0, 0.7, 3.0] {
            let h = state_h(&net, &rho, &[0.0, t]);
            assert!((h - 2.0 * (t.cosh() - 1.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn state_h_gradient_at_zero_is_rre_rhs() {
        let net = a_b(2.0, 1.0);
        let rho = Concentration::new(vec![2.0, 0.5]).unwrap();
        let rhs = net.rre_rhs(&rho);
        let fd = crate::numerics::fd_gradient(|xi| state_h(&net, &rho, xi), &[0.0, 0.0], 1e-5);
        for (a, b) in fd.iter().zip(&rhs) {
            assert!((a - b).abs() < 1e-6);
        }
        let analytic = state_h_grad(&net, &rho, &[0.0, 0.0]);
        for (a, b) in analytic.iter().zip(&rhs) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn flux_h_pullback_identity() {
        // H(phi[w], xi) = H(w, Gamma^T xi), for random w and xi.
        let net = two_channel(1.5, 0.7);
        let rho0 = Concentration::new(vec![2.0, 1.0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let w = FluxVector::new(
                vec![rng.gen_range(-0.3..0.3), rng.gen_range(-0.3..0.3)],
                vec![],
            );
            let xi = vec![rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
            let rho = Concentration::new(
                continuity_state(&net, &rho0, &w)
                    .iter()
                    .map(|&x| x.max(0.0))
                    .collect(),
            )
            .unwrap();
            let (slow_pull, fast_pull) = net.pullback(&xi);
            let zeta = FluxCotangent {
                slow: slow_pull,
                fast: fast_pull,
            };
            let lhs = state_h(&net, &rho, &xi);
            let rhs = flux_h(&net, &rho0, &w, &zeta).unwrap();
            assert!((lhs - rhs).abs() <= 1e-13 * (1.0 + lhs.abs()));
        }
    }

    #[test]
    fn flux_h_depends_on_w_through_state_only() {
        // Two channels with the same gamma: swapping flux between them leaves
        // phi[w], and hence H, unchanged.
        let net = two_channel(1.0, 2.0);
        let rho0 = Concentration::new(vec![2.0, 1.0]).unwrap();
        let zeta = FluxCotangent {
            slow: vec![0.4, -0.9],
            fast: vec![],
        };
        let w1 = FluxVector::new(vec![0.25, 0.0], vec![]);
        let w2 = FluxVector::new(vec![0.0, 0.25], vec![]);
        let h1 = flux_h(&net, &rho0, &w1, &zeta).unwrap();
        let h2 = flux_h(&net, &rho0, &w2, &zeta).unwrap();
        assert_eq!(h1, h2);
    }

    #[test]
    fn flux_l_zero_at_kinetic_vector() {
        let net = a_b(2.0, 1.0);
        let rho0 = Concentration::new(vec![2.0, 1.0]).unwrap();
        let w = FluxVector::new(vec![0.1], vec![]);
        let rho = Concentration::new(continuity_state(&net, &rho0, &w)).unwrap();
        let rates = net.mass_action_rates(&rho);
        let j = FluxVector::new(vec![rates.fw[0] - rates.bw[0]], vec![]);
        let l = flux_l(&net, &rho0, &w, &j).unwrap();
        assert!(l.finite && l.value.abs() <= 1e-10);
    }

    #[test]
    fn flux_l_closed_form_example() {
        // j = 0 with k_fw = 4, k_bw = 1: optimal pair (2, 2), value exactly 1.
        let (value, jf, jb) = channel_rate(0.0, 4.0, 1.0).unwrap();
        assert!((jf - 2.0).abs() < 1e-14);
        assert!((jb - 2.0).abs() < 1e-14);
        assert!((value - 1.0).abs() < 1e-14);
    }

    #[test]
    fn flux_l_detailed_balance_cosh_form() {
        // With k_fw = k_bw = k the channel rate is sigma (cosh*(j/sigma) + 1),
        // sigma = 2 sqrt(k_fw k_bw).
        let (kf, kb) = (2.25, 1.0);
        let sigma = 2.0 * (kf * kb as f64).sqrt();
        for j in [-1.5, -0.2, 0.0, 0.4, 2.0] {
            let (value, _, _) = channel_rate(j, kf, kb).unwrap();
            // General identity: L(j) = sigma cosh*(j/sigma) + kf + kb
            //                        + (j/2) log(kb/kf).
            let expected = sigma * cosh_star(j / sigma) + kf + kb + 0.5 * j * (kb / kf).ln();
            assert!((value - expected).abs() < 1e-12, "j = {j}");
        }
    }

    #[test]
    fn fast_flux_indicator() {
        let net = ReactionNetwork::new(
            vec!["A".into()],
            vec![Reaction {
                alpha: vec![1],
                beta: vec![1],
                kappa_fw: 2.0,
                kappa_bw: 0.0,
                timescale: Timescale::Fast,
            }],
        )
        .unwrap();
        let rho0 = Concentration::new(vec![1.5]).unwrap();
        let w = FluxVector::new(vec![], vec![0.2]);
        let on = FluxVector::new(vec![], vec![3.0]);
        assert!(flux_l(&net, &rho0, &w, &on).unwrap().value.abs() < 1e-12);
        let off = FluxVector::new(vec![], vec![3.1]);
        assert!(!flux_l(&net, &rho0, &w, &off).unwrap().finite);
    }

    #[test]
    fn state_l_zero_on_the_flow() {
        let net = a_b(2.0, 1.0);
        let rho = Concentration::new(vec![2.0, 1.0]).unwrap();
        let s = net.rre_rhs(&rho);
        let l = state_l(&net, &rho, &s);
        assert!(l.finite && l.converged);
        assert!(l.value.abs() <= 1e-10);
        assert!(norm_inf(&l.optimizer) <= 1e-6);
    }

    #[test]
    fn state_l_outside_range_is_infinite() {
        let net = a_b(2.0, 1.0);
        let rho = Concentration::new(vec![2.0, 1.0]).unwrap();
        // (1, 1) is not in the span of gamma = (-1, 1).
        let l = state_l(&net, &rho, &[1.0, 1.0]);
        assert!(!l.finite);
    }

    #[test]
    fn state_l_against_one_way_channel_is_infinite() {
        // A -> B only: a velocity pushing mass back to A lies in the span
        // but outside the reachable cone; the dual grows linearly.
        let net = a_b(1.0, 0.0);
        let rho = Concentration::new(vec![1.0, 1.0]).unwrap();
        let backward = state_l(&net, &rho, &[0.5, -0.5]);
        assert!(!backward.finite);
        // The forward direction stays finite: L = h(j | k_fw).
        let forward = state_l(&net, &rho, &[-0.5, 0.5]);
        assert!(forward.finite && forward.converged);
        let expected = 0.5 * (0.5f64 / 1.0).ln() - 0.5 + 1.0;
        assert!((forward.value - expected).abs() < 1e-8, "{}", forward.value);
        // The contraction route agrees on both verdicts.
        let rho0 = Concentration::new(vec![1.0, 1.0]).unwrap();
        let w = FluxVector::zeros(&net);
        let c_back = contraction(&net, &rho0, &w, &[0.5, -0.5]).unwrap();
        assert!(!c_back.finite);
        let c_fwd = contraction(&net, &rho0, &w, &[-0.5, 0.5]).unwrap();
        assert!(c_fwd.finite && (c_fwd.value - expected).abs() < 1e-10);
    }

    #[test]
    fn contraction_with_mixed_one_way_and_reversible_channels() {
        // Channel 0 is one-way (j >= 0), channel 1 reversible. A backward
        // net velocity forces the unconstrained least-squares start outside
        // the admissible cone, so the solver must recover feasibility first.
        let net = ReactionNetwork::new(
            vec!["A".into(), "B".into()],
            vec![
                Reaction {
                    alpha: vec![1, 0],
                    beta: vec![0, 1],
                    kappa_fw: 1.0,
                    kappa_bw: 0.0,
                    timescale: Timescale::Slow,
                },
                Reaction {
                    alpha: vec![1, 0],
                    beta: vec![0, 1],
                    kappa_fw: 1.0,
                    kappa_bw: 1.0,
                    timescale: Timescale::Slow,
                },
            ],
        )
        .unwrap();
        let rho0 = Concentration::new(vec![1.0, 1.0]).unwrap();
        let w = FluxVector::zeros(&net);
        let s = [0.6, -0.6];
        let c = contraction(&net, &rho0, &w, &s).unwrap();
        assert!(
            c.finite,
            "feasible split exists through the reversible channel"
        );
        // Dense 1-d oracle over the one-way flux j0 >= 0 with j1 = -0.6 - j0.
        let mut oracle = f64::MAX;
        let mut j0 = 0.0;
        while j0 <= 3.0 {
            let total = channel_rate(j0, 1.0, 0.0).unwrap().0
                + channel_rate(-0.6 - j0, 1.0, 1.0).unwrap().0;
            oracle = oracle.min(total);
            j0 += 1e-5;
        }
        assert!((c.value - oracle).abs() <= 1e-6, "{} vs {oracle}", c.value);
        // And the dual route agrees.
        let rho = Concentration::new(vec![1.0, 1.0]).unwrap();
        let dual = state_l(&net, &rho, &s);
        assert!(dual.finite);
        assert!((c.value - dual.value).abs() <= 1e-6);
    }

    #[test]
    fn contraction_rejects_unreachable_velocity() {
        let net = a_b(2.0, 1.0);
        let rho0 = Concentration::new(vec![2.0, 1.0]).unwrap();
        let w = FluxVector::zeros(&net);
        let err = contraction(&net, &rho0, &w, &[1.0, 1.0]);
        assert!(matches!(err, Err(LdpError::InfeasibleConstraint { .. })));
    }

    #[test]
    fn infeasible_continuity_state_is_rejected() {
        let net = a_b(2.0, 1.0);
        let rho0 = Concentration::new(vec![0.5, 0.5]).unwrap();
        // w = 1 drives rho_A to -0.5.
        let w = FluxVector::new(vec![1.0], vec![]);
        let j = FluxVector::new(vec![0.0], vec![]);
        assert!(matches!(
            flux_l(&net, &rho0, &w, &j),
            Err(LdpError::InfeasibleState { .. })
        ));
        let zeta = FluxCotangent::zeros(&net);
        assert!(matches!(
            flux_h(&net, &rho0, &w, &zeta),
            Err(LdpError::InfeasibleState { .. })
        ));
    }

    #[test]
    fn contraction_single_channel_reduces_to_flux_l() {
        let net = a_b(2.0, 1.0);
        let rho0 = Concentration::new(vec![2.0, 1.0]).unwrap();
        let w = FluxVector::new(vec![0.2], vec![]);
        let a = 0.37;
        let s = vec![-a, a];
        let c = contraction(&net, &rho0, &w, &s).unwrap();
        let direct = flux_l(&net, &rho0, &w, &FluxVector::new(vec![a], vec![])).unwrap();
        assert!((c.value - direct.value).abs() < 1e-12);
    }

    #[test]
    fn contraction_two_channels_splits_symmetrically() {
        let net = two_channel(1.0, 1.0);
        let rho0 = Concentration::new(vec![1.0, 1.0]).unwrap();
        let w = FluxVector::zeros(&net);
        let s = vec![-0.8, 0.8];
        let c = contraction(&net, &rho0, &w, &s).unwrap();
        assert!(c.converged);
        assert!((c.optimizer[0] - c.optimizer[1]).abs() < 1e-9);
        assert!((c.optimizer[0] - 0.4).abs() < 1e-9);
        // Grid-search oracle over the kernel direction.
        let oracle = {
            let mut best = f64::MAX;
            let mut t = -2.0;
            while t <= 2.0 {
                let j1 = 0.4 + t;
                let j2 = 0.4 - t;
                let v =
                    channel_rate(j1, 1.0, 1.0).unwrap().0 + channel_rate(j2, 1.0, 1.0).unwrap().0;
                best = best.min(v);
                t += 1e-4;
            }
            best
        };
        assert!((c.value - oracle).abs() < 1e-7);
    }

    #[test]
    fn contraction_agrees_with_state_l() {
        let net = two_channel(1.3, 0.6);
        let rho0 = Concentration::new(vec![2.0, 1.5]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..25 {
            let w = FluxVector::new(
                vec![rng.gen_range(-0.2..0.2), rng.gen_range(-0.2..0.2)],
                vec![],
            );
            let rho_vec = continuity_state(&net, &rho0, &w);
            if rho_vec.iter().any(|&x| x < 0.05) {
                continue;
            }
            let a = rng.gen_range(-1.0..1.0);
            let s = vec![-a, a];
            let via_flux = contraction(&net, &rho0, &w, &s).unwrap();
            let rho = Concentration::new(rho_vec).unwrap();
            let via_state = state_l(&net, &rho, &s);
            assert!(via_flux.finite && via_state.finite);
            assert!(
                (via_flux.value - via_state.value).abs() <= 1e-6,
                "contraction {} vs dual {}",
                via_flux.value,
                via_state.value
            );
        }
    }

    #[test]
    fn duality_between_flux_h_and_flux_l() {
        // H(w, zeta) = sup_j zeta.j - L(w, j); the supremum splits per
        // reaction and is computed by an independent 1-d conjugate.
        let net = two_channel(1.2, 0.8);
        let rho0 = Concentration::new(vec![1.5, 1.0]).unwrap();
        let w = FluxVector::new(vec![0.1, -0.05], vec![]);
        let rho = Concentration::new(continuity_state(&net, &rho0, &w)).unwrap();
        let rates = net.mass_action_rates(&rho);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let zeta = FluxCotangent {
                slow: vec![rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)],
                fast: vec![],
            };
            let h = flux_h(&net, &rho0, &w, &zeta).unwrap();
            let mut sup = 0.0;
            for (i, &r) in net.slow_indices().iter().enumerate() {
                let (kf, kb) = (rates.fw[r], rates.bw[r]);
                let (value, _) = legendre_1d(
                    |j| {
                        channel_rate(j, kf, kb)
                            .map(|(v, _, _)| v)
                            .unwrap_or(f64::MAX)
                    },
                    zeta.slow[i],
                    -60.0,
                    60.0,
                )
                .unwrap();
                sup += value;
            }
            assert!((h - sup).abs() <= 1e-6, "H = {h}, sup = {sup}");
        }
    }

    #[test]
    fn channel_rate_is_conjugate_of_channel_hamiltonian() {
        // L_r(j) = sup_z (z j - H_r(z)) with H_r(z) = kf (e^z - 1) + kb (e^-z - 1).
        let (kf, kb) = (1.7, 0.4);
        for j in [-2.0, -0.3, 0.0, 0.8, 3.0] {
            let (sup, _) =
                legendre_1d(|z| kf * z.exp_m1() + kb * (-z).exp_m1(), j, -60.0, 60.0).unwrap();
            let (closed, _, _) = channel_rate(j, kf, kb).unwrap();
            assert!((sup - closed).abs() <= 1e-8, "j = {j}");
        }
    }

    #[test]
    fn cosh_star_values() {
        assert!((cosh_star(0.0) - (-1.0)).abs() < 1e-15);
        // cosh*(1) = asinh(1) - sqrt(2).
        let expected = 1.0f64.asinh() - 2.0f64.sqrt();
        assert!((cosh_star(1.0) - expected).abs() < 1e-15);
        assert!((expected - (-0.532_839_975_353_552_1)).abs() < 1e-12);
    }

    #[test]
    fn legendre_of_cosh_potential() {
        // sup_z (z j - sigma (cosh z - 1)) = sigma (cosh*(j/sigma) + 1).
        let sigma = 2.0;
        for j in [0.0, 0.5, 1.0, -2.0] {
            let (value, _) = legendre_1d(|z| sigma * (z.cosh() - 1.0), j, -30.0, 30.0).unwrap();
            let expected = sigma * (cosh_star(j / sigma) + 1.0);
            assert!((value - expected).abs() < 1e-8, "j = {j}");
        }
        // Frozen: 2 (cosh*(1/2) + 1) from the closed form.
        let frozen = 2.0 * (0.5f64 * 0.5f64.asinh() - 1.25f64.sqrt() + 1.0);
        assert!((frozen - 0.245_143_847_559_813_55).abs() < 1e-12);
        let (value, _) = legendre_1d(|z| 2.0 * (z.cosh() - 1.0), 1.0, -30.0, 30.0).unwrap();
        assert!((value - frozen).abs() < 1e-8);
    }

    #[test]
    fn double_conjugate_recovers_convex_function() {
        // f(x) = cosh x - 1; f** = f at sampled points.
        let f = |x: f64| x.cosh() - 1.0;
        for x0 in [-1.2, 0.0, 0.3, 1.7] {
            let (ff, _) = legendre_1d(
                |j| legendre_1d(f, j, -30.0, 30.0).unwrap().0,
                x0,
                -30.0,
                30.0,
            )
            .unwrap();
            assert!((ff - f(x0)).abs() < 1e-8, "x0 = {x0}");
        }
    }

    #[test]
    fn legendre_nd_quadratic() {
        // f(x) = 0.5 |x|^2: conjugate is 0.5 |j|^2 with argmax j.
        let (value, argmax) = legendre_nd(|x| 0.5 * dot(x, x), &[0.7, -0.3]).unwrap();
        assert!((value - 0.5 * (0.49 + 0.09)).abs() < 1e-8);
        assert!((argmax[0] - 0.7).abs() < 1e-5 && (argmax[1] + 0.3).abs() < 1e-5);
    }

    #[test]
    fn nonconvex_detection() {
        let err = legendre_1d(|x| -x * x, 0.0, -1.0, 1.0);
        assert!(matches!(err, Err(LdpError::NonConvexityDetected { .. })));
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            // The per-channel rate is a nonnegative convex function of the
            // net flux with its unique zero at the kinetic value.
            #[test]
            fn channel_rate_is_an_l_function(
                kf in 0.01f64..10.0,
                kb in 0.01f64..10.0,
                j1 in -20.0f64..20.0,
                j2 in -20.0f64..20.0,
            ) {
                let (v1, jf, jb) = channel_rate(j1, kf, kb).unwrap();
                prop_assert!(v1 >= 0.0);
                prop_assert!((jf - jb - j1).abs() <= 1e-9 * (1.0 + j1.abs()));
                let (v2, _, _) = channel_rate(j2, kf, kb).unwrap();
                let (vm, _, _) = channel_rate(0.5 * (j1 + j2), kf, kb).unwrap();
                prop_assert!(vm <= 0.5 * (v1 + v2) + 1e-10 * (1.0 + v1 + v2));
                // Zero exactly at the net kinetic flux, positive elsewhere.
                let (zero, _, _) = channel_rate(kf - kb, kf, kb).unwrap();
                prop_assert!(zero.abs() <= 1e-12 * (1.0 + kf + kb));
                if (j1 - (kf - kb)).abs() > 1e-6 {
                    prop_assert!(v1 > 0.0);
                }
            }
        }
    }

    #[test]
    fn rate_nonnegativity_and_convexity_on_random_inputs() {
        let net = two_channel(1.1, 0.9);
        let rho0 = Concentration::new(vec![1.2, 0.8]).unwrap();
        let w = FluxVector::zeros(&net);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let j1 = FluxVector::new(
                vec![rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0)],
                vec![],
            );
            let j2 = FluxVector::new(
                vec![rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0)],
                vec![],
            );
            let l1 = flux_l(&net, &rho0, &w, &j1).unwrap();
            let l2 = flux_l(&net, &rho0, &w, &j2).unwrap();
            assert!(l1.value >= -1e-12);
            // Midpoint convexity.
            let mid = FluxVector::new(
                vec![
                    0.5 * (j1.slow[0] + j2.slow[0]),
                    0.5 * (j1.slow[1] + j2.slow[1]),
                ],
                vec![],
            );
            let lm = flux_l(&net, &rho0, &w, &mid).unwrap();
            assert!(lm.value <= 0.5 * (l1.value + l2.value) + 1e-10);
        }
    }
}
