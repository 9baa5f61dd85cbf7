//! Finite-volume Markov jump processes on state and flux space, their exact
//! invariant distribution, and the deterministic large-volume limit.
//!
//! The simulation tracks integer event counts so that the continuity
//! identity between states and integrated fluxes holds exactly: with volume
//! `V`, species counts are kept on the `V^2` scale, where a slow reaction
//! moves the count vector by `V * gamma_r` and a fast reaction by `gamma_r`.
//! Concentrations and fluxes are produced only at sample times.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::network::{Concentration, NetworkError, ReactionNetwork};
use crate::numerics::{derive_stream_seed, rk45, OdeError};

#[derive(Debug, Error)]
pub enum DynamicsError {
    #[error("event count exceeded cap {cap} before t_end (runaway kinetics?)")]
    ExplosionGuard { cap: u64 },
    #[error("initial counts V * rho0 must be integer (species {index}: {value})")]
    NonIntegerCounts { index: usize, value: f64 },
    #[error("record grid must be sorted and contained in [0, t_end]")]
    BadRecordGrid,
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Ode(#[from] OdeError),
}

/// Configuration of a finite-volume jump-process simulation.
#[derive(Debug, Clone)]
pub struct JumpProcessConfig {
    /// Scaling parameter: particle counts are `V * rho`.
    pub volume: u64,
    pub t_end: f64,
    pub seed: u64,
    /// Sorted sample times within `[0, t_end]`.
    pub record_grid: Vec<f64>,
    /// Hard cap on simulated events.
    pub event_cap: u64,
}

impl JumpProcessConfig {
    pub fn new(volume: u64, t_end: f64, seed: u64, record_grid: Vec<f64>) -> Self {
        JumpProcessConfig {
            volume,
            t_end,
            seed,
            record_grid,
            event_cap: 100_000_000,
        }
    }

    fn validate(&self) -> Result<(), DynamicsError> {
        if self.volume == 0 || self.t_end <= 0.0 {
            return Err(DynamicsError::BadRecordGrid);
        }
        let sorted = self.record_grid.windows(2).all(|w| w[0] <= w[1]);
        let in_range = self
            .record_grid
            .iter()
            .all(|&t| (0.0..=self.t_end).contains(&t));
        if sorted && in_range {
            Ok(())
        } else {
            Err(DynamicsError::BadRecordGrid)
        }
    }
}

/// Integrated reaction fluxes: net per slow reaction, one-way (nonnegative)
/// per fast reaction.
#[derive(Debug, Clone, PartialEq)]
pub struct FluxVector {
    pub slow: Vec<f64>,
    pub fast: Vec<f64>,
}

impl FluxVector {
    pub fn zeros(net: &ReactionNetwork) -> Self {
        FluxVector {
            slow: vec![0.0; net.n_slow()],
            fast: vec![0.0; net.n_fast()],
        }
    }

    pub fn new(slow: Vec<f64>, fast: Vec<f64>) -> Self {
        debug_assert!(
            fast.iter().all(|&w| w >= 0.0),
            "fast fluxes are one-way counts"
        );
        FluxVector { slow, fast }
    }
}

/// Exact integer event counts behind one trajectory sample.
#[derive(Debug, Clone, PartialEq)]
pub struct CountSample {
    /// Species counts on the `V^2` scale: `state[y] = V^2 rho[y]`.
    pub state: Vec<i64>,
    /// Net firing counts per slow reaction.
    pub slow: Vec<i64>,
    /// Firing counts per fast reaction.
    pub fast: Vec<u64>,
}

/// A sampled trajectory of states and integrated fluxes.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Concentration>,
    pub fluxes: Vec<FluxVector>,
    /// Present for stochastic trajectories; `None` for deterministic limits.
    pub counts: Option<Vec<CountSample>>,
}

/// Per-reaction jump rates at concentration `rho` and volume `V`.
///
/// Slow reactions use the combinatoric propensity
/// `kappa V^{1 - alpha_tot} (rho V)! / (rho V - alpha)!` (falling factorial
/// per species); fast reactions carry one extra factor of `V`, so that
/// `lambda / V^2` converges to the limit kinetics. A reaction with
/// insufficient particles has zero propensity.
#[derive(Debug, Clone, PartialEq)]
pub struct Propensities {
    /// Forward/backward per slow reaction (declaration order).
    pub slow_fw: Vec<f64>,
    pub slow_bw: Vec<f64>,
    /// One rate per fast reaction.
    pub fast: Vec<f64>,
}

impl Propensities {
    pub fn total(&self) -> f64 {
        self.slow_fw.iter().sum::<f64>()
            + self.slow_bw.iter().sum::<f64>()
            + self.fast.iter().sum::<f64>()
    }
}

/// Falling factorial `x (x-1) ... (x-k+1)`, zero when fewer than `k`
/// particles are available.
fn falling_factorial(x: f64, k: u32) -> f64 {
    if k == 0 {
        return 1.0;
    }
    if x < k as f64 {
        return 0.0;
    }
    let mut acc = 1.0;
    for i in 0..k {
        acc *= x - i as f64;
    }
    acc
}

pub fn propensities(net: &ReactionNetwork, rho: &Concentration, volume: u64) -> Propensities {
    let v = volume as f64;
    let rate = |kappa: f64, exponents: &[u32], extra_v: i32| -> f64 {
        if kappa == 0.0 {
            return 0.0;
        }
        let alpha_tot: u32 = exponents.iter().sum();
        let mut acc = kappa * v.powi(1 - alpha_tot as i32 + extra_v);
        for (y, &e) in exponents.iter().enumerate() {
            if e > 0 {
                acc *= falling_factorial(rho[y] * v, e);
            }
        }
        acc
    };
    let slow_fw = net
        .slow_indices()
        .iter()
        .map(|&r| rate(net.reactions()[r].kappa_fw, &net.reactions()[r].alpha, 0))
        .collect();
    let slow_bw = net
        .slow_indices()
        .iter()
        .map(|&r| rate(net.reactions()[r].kappa_bw, &net.reactions()[r].beta, 0))
        .collect();
    let fast = net
        .fast_indices()
        .iter()
        .map(|&r| rate(net.reactions()[r].kappa_fw, &net.reactions()[r].alpha, 1))
        .collect();
    Propensities {
        slow_fw,
        slow_bw,
        fast,
    }
}

/// Exact stochastic simulation (direct method): exponential waiting times
/// from the total propensity, linear selection among channels. Reproducible:
/// the same `(seed, config)` yields a bit-identical trajectory.
pub fn simulate_ssa(
    net: &ReactionNetwork,
    rho0: &Concentration,
    config: &JumpProcessConfig,
) -> Result<Trajectory, DynamicsError> {
    config.validate()?;
    let v = config.volume as f64;
    let ny = net.n_species();
    // Counts on the V^2 scale; rho0 * V must be integer.
    let mut state: Vec<i64> = Vec::with_capacity(ny);
    for (index, &p) in rho0.as_slice().iter().enumerate() {
        let scaled = p * v;
        let rounded = scaled.round();
        if (scaled - rounded).abs() > 1e-9 * scaled.abs().max(1.0) {
            return Err(DynamicsError::NonIntegerCounts {
                index,
                value: scaled,
            });
        }
        state.push((rounded as i64) * config.volume as i64);
    }
    let slow = net.slow_indices();
    let fast = net.fast_indices();
    let slow_gammas = net.slow_gammas();
    let fast_gammas = net.fast_gammas();
    let mut slow_counts = vec![0i64; slow.len()];
    let mut fast_counts = vec![0u64; fast.len()];

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut t = 0.0f64;
    let mut events: u64 = 0;
    let v2 = v * v;

    let mut times = Vec::with_capacity(config.record_grid.len());
    let mut states = Vec::with_capacity(config.record_grid.len());
    let mut fluxes = Vec::with_capacity(config.record_grid.len());
    let mut count_samples = Vec::with_capacity(config.record_grid.len());
    let mut next_record = 0usize;

    let concentration_of = |state: &[i64]| -> Concentration {
        Concentration::new(state.iter().map(|&n| n as f64 / v2).collect())
            .expect("counts are nonnegative")
    };
    let flux_of = |slow_counts: &[i64], fast_counts: &[u64]| -> FluxVector {
        FluxVector {
            slow: slow_counts.iter().map(|&c| c as f64 / v).collect(),
            fast: fast_counts.iter().map(|&c| c as f64 / v2).collect(),
        }
    };

    loop {
        let rho = concentration_of(&state);
        let props = propensities(net, &rho, config.volume);
        let total = props.total();
        let t_next = if total > 0.0 {
            let u: f64 = rng.gen();
            t - (1.0 - u).ln() / total
        } else {
            f64::INFINITY
        };

        // Emit samples strictly before the next event fires.
        while next_record < config.record_grid.len() && config.record_grid[next_record] < t_next {
            times.push(config.record_grid[next_record]);
            states.push(rho.clone());
            fluxes.push(flux_of(&slow_counts, &fast_counts));
            count_samples.push(CountSample {
                state: state.clone(),
                slow: slow_counts.clone(),
                fast: fast_counts.clone(),
            });
            next_record += 1;
        }
        if next_record >= config.record_grid.len() || t_next > config.t_end {
            break;
        }

        // Select the channel by cumulative propensity.
        let mut pick = rng.gen::<f64>() * total;
        let mut fired = false;
        for (i, (&lf, &lb)) in props.slow_fw.iter().zip(&props.slow_bw).enumerate() {
            if pick < lf {
                for (s, &g) in state.iter_mut().zip(&slow_gammas[i]) {
                    *s += g * config.volume as i64;
                }
                slow_counts[i] += 1;
                fired = true;
                break;
            }
            pick -= lf;
            if pick < lb {
                for (s, &g) in state.iter_mut().zip(&slow_gammas[i]) {
                    *s -= g * config.volume as i64;
                }
                slow_counts[i] -= 1;
                fired = true;
                break;
            }
            pick -= lb;
        }
        if !fired {
            for (i, &lam) in props.fast.iter().enumerate() {
                if pick < lam {
                    for (s, &g) in state.iter_mut().zip(&fast_gammas[i]) {
                        *s += g;
                    }
                    fast_counts[i] += 1;
                    fired = true;
                    break;
                }
                pick -= lam;
            }
        }
        if !fired {
            // Round-off pushed the selector past the last channel.
            if let Some(last) = fast_counts.last_mut() {
                *last += 1;
                for (s, &g) in state.iter_mut().zip(fast_gammas.last().unwrap()) {
                    *s += g;
                }
            }
        }
        t = t_next;
        events += 1;
        if events > config.event_cap {
            return Err(DynamicsError::ExplosionGuard {
                cap: config.event_cap,
            });
        }
    }

    Ok(Trajectory {
        times,
        states,
        fluxes,
        counts: Some(count_samples),
    })
}

/// Simulates `replicates` independent trajectories in parallel. Stream seeds
/// are derived from `(config.seed, replicate)`, so the result is independent
/// of scheduling order.
pub fn simulate_ensemble(
    net: &ReactionNetwork,
    rho0: &Concentration,
    config: &JumpProcessConfig,
    replicates: u64,
) -> Result<Vec<Trajectory>, DynamicsError> {
    (0..replicates)
        .into_par_iter()
        .map(|rep| {
            let mut cfg = config.clone();
            cfg.seed = derive_stream_seed(config.seed, rep);
            simulate_ssa(net, rho0, &cfg)
        })
        .collect()
}

/// Log-probability of the invariant (product-Poisson) distribution of a
/// detailed-balanced network:
/// `sum_y [ V rho_y log(V rho*_y) - log((V rho_y)!) - V rho*_y ]`,
/// evaluated with log-gamma. Returns `-inf` for states outside the support.
pub fn invariant_distribution_logprob(
    rho_star: &Concentration,
    rho: &Concentration,
    volume: u64,
) -> f64 {
    use statrs::function::gamma::ln_gamma;
    let v = volume as f64;
    let mut acc = 0.0;
    for (p, p_star) in rho.as_slice().iter().zip(rho_star.as_slice()) {
        let n = (p * v).round();
        let mean = p_star * v;
        if mean == 0.0 {
            if n > 0.0 {
                return f64::NEG_INFINITY;
            }
            continue;
        }
        acc += n * mean.ln() - ln_gamma(n + 1.0) - mean;
    }
    acc
}

/// Integrates the coupled flux equations
/// `d w_slow_r / dt = k_fw,r - k_bw,r` and `d w_fast_r / dt = k_fast,r`,
/// all evaluated at the state recovered through the continuity map
/// `rho = rho0 + Gamma w`. The state trajectory stays in the nonnegative
/// orthant (steps leaving it are rejected).
pub fn integrate_rre(
    net: &ReactionNetwork,
    rho0: &Concentration,
    t_end: f64,
    record_grid: &[f64],
) -> Result<Trajectory, DynamicsError> {
    let n_slow = net.n_slow();
    let n_fast = net.n_fast();
    let y0 = vec![0.0; n_slow + n_fast];
    let mut times = Vec::new();
    let mut states = Vec::new();
    let mut fluxes = Vec::new();
    let state_of = |w: &[f64]| -> Vec<f64> {
        let mut rho = rho0.as_slice().to_vec();
        let shift = net.apply_gamma(&w[..n_slow], &w[n_slow..]);
        for (r, s) in rho.iter_mut().zip(&shift) {
            *r += s;
        }
        rho
    };
    let rhs = |_t: f64, w: &[f64], dw: &mut [f64]| {
        let rho = state_of(w);
        let clamped: Vec<f64> = rho.iter().map(|&x| x.max(0.0)).collect();
        let rates = net.mass_action_rates(&Concentration::new(clamped).expect("clamped"));
        for (i, &r) in net.slow_indices().iter().enumerate() {
            dw[i] = rates.fw[r] - rates.bw[r];
        }
        for (i, &r) in net.fast_indices().iter().enumerate() {
            dw[n_slow + i] = rates.fw[r];
        }
    };
    rk45(
        rhs,
        &y0,
        t_end,
        record_grid,
        1e-10,
        1e-8,
        |w| state_of(w).iter().all(|&x| x >= -1e-12),
        |t, w| {
            times.push(t);
            let rho: Vec<f64> = state_of(w).iter().map(|&x| x.max(0.0)).collect();
            states.push(Concentration::new(rho).expect("admissible state"));
            fluxes.push(FluxVector::new(w[..n_slow].to_vec(), w[n_slow..].to_vec()));
        },
    )?;
    Ok(Trajectory {
        times,
        states,
        fluxes,
        counts: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{Reaction, Timescale};

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

    #[test]
    fn unimolecular_propensity_is_count_times_rate() {
        let net = a_b(2.0, 0.0);
        let rho = Concentration::new(vec![3.0, 0.0]).unwrap();
        let p = propensities(&net, &rho, 100);
        assert_eq!(p.slow_fw[0], 2.0 * 300.0);
    }

    #[test]
    fn propensity_converges_to_mass_action() {
        // V^-1 lambda -> kappa rho^alpha, relative 1e-4 at V = 10^6.
        let net = ReactionNetwork::new(
            vec!["X".into(), "Y".into()],
            vec![Reaction {
                alpha: vec![2, 1],
                beta: vec![0, 0],
                kappa_fw: 0.7,
                kappa_bw: 0.0,
                timescale: Timescale::Slow,
            }],
        )
        .unwrap();
        let rho = Concentration::new(vec![2.0, 3.0]).unwrap();
        let v = 1_000_000u64;
        let p = propensities(&net, &rho, v);
        let limit = 0.7 * 2.0f64.powi(2) * 3.0;
        let scaled = p.slow_fw[0] / v as f64;
        assert!(((scaled - limit) / limit).abs() < 1e-4);
    }

    #[test]
    fn fast_propensity_converges_at_quadratic_scale() {
        // lambda / V^2 -> kappa rho^alpha for fast reactions.
        let net = ReactionNetwork::new(
            vec!["X".into()],
            vec![Reaction {
                alpha: vec![1],
                beta: vec![1],
                kappa_fw: 0.4,
                kappa_bw: 0.0,
                timescale: Timescale::Fast,
            }],
        )
        .unwrap();
        let rho = Concentration::new(vec![2.5]).unwrap();
        let v = 1_000_000u64;
        let p = propensities(&net, &rho, v);
        let limit = 0.4 * 2.5;
        let scaled = p.fast[0] / (v as f64 * v as f64);
        assert!(((scaled - limit) / limit).abs() < 1e-4);
    }

    #[test]
    fn empty_state_has_zero_propensity() {
        let net = a_b(2.0, 1.0);
        let rho = Concentration::new(vec![0.0, 0.0]).unwrap();
        let p = propensities(&net, &rho, 10);
        assert_eq!(p.total(), 0.0);
    }

    #[test]
    fn no_reactants_means_constant_trajectory() {
        let net = a_b(2.0, 0.0);
        let rho0 = Concentration::new(vec![0.0, 1.0]).unwrap();
        let config = JumpProcessConfig::new(10, 1.0, 42, vec![0.0, 0.5, 1.0]);
        let traj = simulate_ssa(&net, &rho0, &config).unwrap();
        for state in &traj.states {
            assert_eq!(state.as_slice(), rho0.as_slice());
        }
        for flux in &traj.fluxes {
            assert!(flux.slow.iter().all(|&w| w == 0.0));
        }
    }

    #[test]
    fn continuity_holds_exactly_in_counts() {
        let net = ReactionNetwork::new(
            vec!["A".into(), "B".into(), "C".into()],
            vec![
                Reaction {
                    alpha: vec![1, 0, 0],
                    beta: vec![0, 1, 0],
                    kappa_fw: 2.0,
                    kappa_bw: 1.0,
                    timescale: Timescale::Slow,
                },
                Reaction {
                    alpha: vec![0, 0, 1],
                    beta: vec![0, 0, 1],
                    kappa_fw: 1.5,
                    kappa_bw: 0.0,
                    timescale: Timescale::Fast,
                },
            ],
        )
        .unwrap();
        let rho0 = Concentration::new(vec![2.0, 0.0, 1.0]).unwrap();
        let config = JumpProcessConfig::new(50, 0.4, 7, vec![0.1, 0.2, 0.3, 0.4]);
        let traj = simulate_ssa(&net, &rho0, &config).unwrap();
        let v = 50i64;
        let counts = traj.counts.as_ref().unwrap();
        let state0: Vec<i64> = rho0
            .as_slice()
            .iter()
            .map(|&p| (p * 2500.0).round() as i64)
            .collect();
        for sample in counts {
            // state - state0 = sum_slow gamma * (V * count) + sum_fast gamma * count.
            let mut expect = state0.clone();
            for (g, &c) in net.slow_gammas().iter().zip(&sample.slow) {
                for (e, &gy) in expect.iter_mut().zip(g) {
                    *e += gy * c * v;
                }
            }
            for (g, &c) in net.fast_gammas().iter().zip(&sample.fast) {
                for (e, &gy) in expect.iter_mut().zip(g) {
                    *e += gy * c as i64;
                }
            }
            assert_eq!(expect, sample.state);
        }
    }

    #[test]
    fn event_cap_triggers_explosion_guard() {
        let net = a_b(5.0, 5.0);
        let rho0 = Concentration::new(vec![2.0, 2.0]).unwrap();
        let mut config = JumpProcessConfig::new(1000, 10.0, 1, vec![10.0]);
        config.event_cap = 50;
        assert!(matches!(
            simulate_ssa(&net, &rho0, &config),
            Err(DynamicsError::ExplosionGuard { cap: 50 })
        ));
    }

    #[test]
    fn identical_seed_is_bit_identical() {
        let net = a_b(2.0, 1.0);
        let rho0 = Concentration::new(vec![3.0, 0.0]).unwrap();
        let config = JumpProcessConfig::new(100, 1.0, 12345, vec![0.25, 0.5, 0.75, 1.0]);
        let t1 = simulate_ssa(&net, &rho0, &config).unwrap();
        let t2 = simulate_ssa(&net, &rho0, &config).unwrap();
        assert_eq!(t1, t2);
    }

    #[test]
    fn ensemble_is_order_independent() {
        let net = a_b(2.0, 1.0);
        let rho0 = Concentration::new(vec![1.0, 0.0]).unwrap();
        let config = JumpProcessConfig::new(50, 0.5, 9, vec![0.5]);
        let e1 = simulate_ensemble(&net, &rho0, &config, 8).unwrap();
        let e2 = simulate_ensemble(&net, &rho0, &config, 8).unwrap();
        assert_eq!(e1, e2);
    }

    #[test]
    fn invariant_logprob_matches_direct_formula() {
        // V = 1, rho* = (1), rho = (2): 2 log 1 - log 2! - 1 = -(log 2 + 1).
        let rho_star = Concentration::new(vec![1.0]).unwrap();
        let rho = Concentration::new(vec![2.0]).unwrap();
        let lp = invariant_distribution_logprob(&rho_star, &rho, 1);
        assert!((lp - (-(2.0f64.ln() + 1.0))).abs() < 1e-12);
    }

    #[test]
    fn invariant_distribution_normalizes_over_state_space() {
        // Product-Poisson sums to 1 over the full lattice of counts; truncate
        // far into the tail so the remainder is below 1e-12.
        let net = a_b(2.0, 1.0);
        let rho0 = Concentration::new(vec![3.0, 0.0]).unwrap();
        let rho_star = net.find_detailed_balance(&rho0).unwrap();
        for &v in &[10u64, 30u64] {
            let vmax = (v as f64 * 6.0) as i64 + 60;
            let mut total = 0.0;
            for na in 0..=vmax {
                for nb in 0..=vmax {
                    let rho = Concentration::new(vec![na as f64 / v as f64, nb as f64 / v as f64])
                        .unwrap();
                    total += invariant_distribution_logprob(&rho_star, &rho, v).exp();
                }
            }
            assert!((total - 1.0).abs() < 1e-10, "V = {v}: sum = {total}");
        }
    }

    #[test]
    fn invariant_class_mass_matches_poisson_total() {
        // Restricted to one compatibility class the weights sum to the
        // Poisson probability of the class total.
        use statrs::function::gamma::ln_gamma;
        let net = a_b(2.0, 1.0);
        let rho0 = Concentration::new(vec![3.0, 0.0]).unwrap();
        let rho_star = net.find_detailed_balance(&rho0).unwrap();
        let v = 20u64;
        let n_total = 3 * v as i64;
        let mut class_sum = 0.0;
        for na in 0..=n_total {
            let rho =
                Concentration::new(vec![na as f64 / v as f64, (n_total - na) as f64 / v as f64])
                    .unwrap();
            class_sum += invariant_distribution_logprob(&rho_star, &rho, v).exp();
        }
        let lambda = v as f64 * (rho_star[0] + rho_star[1]);
        let expected =
            (n_total as f64 * lambda.ln() - lambda - ln_gamma(n_total as f64 + 1.0)).exp();
        assert!((class_sum - expected).abs() < 1e-12);
    }

    #[test]
    fn rre_matches_closed_form_linear_solution() {
        // A <-> B, kappa = (2, 1), rho0 = (3, 0): rho_A(t) = 1 + 2 exp(-3 t).
        let net = a_b(2.0, 1.0);
        let rho0 = Concentration::new(vec![3.0, 0.0]).unwrap();
        let traj = integrate_rre(&net, &rho0, 1.0, &[1.0]).unwrap();
        let expected = 1.0 + 2.0 * (-3.0f64).exp();
        assert!((traj.states[0][0] - expected).abs() < 1e-7);
    }

    #[test]
    fn rre_conserves_class_totals() {
        let net = a_b(2.0, 1.0);
        let rho0 = Concentration::new(vec![3.0, 0.0]).unwrap();
        let grid: Vec<f64> = (1..=20).map(|k| k as f64 * 0.5).collect();
        let traj = integrate_rre(&net, &rho0, 10.0, &grid).unwrap();
        for state in &traj.states {
            let total = state[0] + state[1];
            assert!((total - 3.0).abs() <= 1e-9);
        }
    }

    #[test]
    fn rre_at_equilibrium_is_constant_with_linear_fast_flux() {
        let net = ReactionNetwork::new(
            vec!["A".into(), "B".into()],
            vec![
                Reaction {
                    alpha: vec![1, 0],
                    beta: vec![0, 1],
                    kappa_fw: 2.0,
                    kappa_bw: 1.0,
                    timescale: Timescale::Slow,
                },
                // Fast self-loop: does not move the state.
                Reaction {
                    alpha: vec![1, 0],
                    beta: vec![1, 0],
                    kappa_fw: 0.5,
                    kappa_bw: 0.0,
                    timescale: Timescale::Fast,
                },
            ],
        )
        .unwrap();
        let rho0 = Concentration::new(vec![3.0, 0.0]).unwrap();
        let rho_star = net.find_detailed_balance(&rho0).unwrap();
        let traj = integrate_rre(&net, &rho_star, 2.0, &[1.0, 2.0]).unwrap();
        for (i, state) in traj.states.iter().enumerate() {
            assert!((state[0] - rho_star[0]).abs() < 1e-8);
            // Slow flux stays zero, fast flux grows linearly at rate k_fast.
            assert!(traj.fluxes[i].slow[0].abs() < 1e-8);
            let expected = 0.5 * rho_star[0] * traj.times[i];
            assert!((traj.fluxes[i].fast[0] - expected).abs() < 1e-6);
        }
    }

    #[test]
    fn ssa_mean_tracks_ode() {
        let net = a_b(2.0, 1.0);
        let rho0 = Concentration::new(vec![3.0, 0.0]).unwrap();
        let v = 10_000u64;
        let n = 100u64;
        let config = JumpProcessConfig::new(v, 1.0, 2024, vec![1.0]);
        let ensemble = simulate_ensemble(&net, &rho0, &config, n).unwrap();
        let mean_a: f64 = ensemble.iter().map(|t| t.states[0][0]).sum::<f64>() / n as f64;
        let ode = integrate_rre(&net, &rho0, 1.0, &[1.0]).unwrap().states[0][0];
        let tol = 3.0 / (v as f64).sqrt();
        assert!((mean_a - ode).abs() < tol, "mean {mean_a} vs ode {ode}");
    }
}
