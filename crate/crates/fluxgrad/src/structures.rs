//! Free energies, dissipation potentials, and numerical verification of the
//! structural identities a rate function may satisfy: generalized gradient
//! systems (GGS), pre-GENERIC systems (pGGEN, a GGS plus a drift orthogonal
//! to the driving force), and the GENERIC non-interaction conditions.
//!
//! All derivative conditions are checked by central finite differences with
//! one Richardson step; verification points are sampled uniformly from a box
//! in flux space intersected with states bounded away from the boundary.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::FluxVector;
use crate::ldp::{self, continuity_state, cosh_star, flux_h, flux_l, FluxCotangent};
use crate::network::{Concentration, NetworkError, ReactionNetwork};
use crate::numerics::{norm_inf, rk45, OdeError};

#[derive(Debug, Error)]
pub enum StructuresError {
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Ldp(#[from] ldp::LdpError),
    #[error(transparent)]
    Ode(#[from] OdeError),
}

/// Relative entropy `sum_y rho_y log(rho_y / ref_y) - rho_y + ref_y` with the
/// convention `0 log 0 = 0`. Infinite when `rho` charges a species the
/// reference does not.
pub fn relative_entropy(rho: &[f64], rho_ref: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (&p, &q) in rho.iter().zip(rho_ref) {
        if p == 0.0 {
            acc += q;
        } else if q == 0.0 {
            return f64::INFINITY;
        } else {
            acc += p * (p / q).ln() - p + q;
        }
    }
    acc
}

/// The free energy `F = 1/2 h(. | rho*)` on states, and its pullback to flux
/// space through the continuity map.
#[derive(Debug, Clone)]
pub struct FreeEnergy {
    net: ReactionNetwork,
    rho0: Concentration,
    rho_star: Concentration,
}

impl FreeEnergy {
    pub fn new(net: ReactionNetwork, rho0: Concentration, rho_star: Concentration) -> Self {
        FreeEnergy {
            net,
            rho0,
            rho_star,
        }
    }

    pub fn rho_star(&self) -> &Concentration {
        &self.rho_star
    }

    pub fn state_value(&self, rho: &[f64]) -> f64 {
        0.5 * relative_entropy(rho, self.rho_star.as_slice())
    }

    pub fn flux_value(&self, w: &FluxVector) -> f64 {
        self.state_value(&continuity_state(&self.net, &self.rho0, w))
    }

    /// Gradient in flux coordinates: `dF_r = 1/2 gamma_r . log(rho / rho*)`,
    /// slow reactions first, then fast.
    pub fn flux_gradient(&self, w: &FluxVector) -> FluxCotangent {
        let rho = continuity_state(&self.net, &self.rho0, w);
        let log_ratio: Vec<f64> = rho
            .iter()
            .zip(self.rho_star.as_slice())
            .map(|(&p, &q)| (p / q).ln())
            .collect();
        let dotg = |g: &Vec<i64>| {
            0.5 * g
                .iter()
                .zip(&log_ratio)
                .map(|(&gy, &l)| gy as f64 * l)
                .sum::<f64>()
        };
        FluxCotangent {
            slow: self.net.slow_gammas().iter().map(dotg).collect(),
            fast: self.net.fast_gammas().iter().map(dotg).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DissipationForm {
    Cosh,
    Quadratic,
    Mixed,
}

/// A pair of mutually conjugate dissipation potentials on flux space.
/// `psi` returns `None` as the `+infinity` sentinel.
pub trait DissipationPair: Sync {
    fn form(&self) -> DissipationForm;
    fn psi_star(&self, w: &FluxVector, zeta: &FluxCotangent) -> f64;
    fn psi(&self, w: &FluxVector, j: &FluxVector) -> Option<f64>;
}

/// The cosh-type pair induced by a detailed-balanced slow subnetwork:
/// `Psi*(w, zeta) = sum_r sigma_r(w) (cosh zeta_r - 1)` with
/// `sigma_r(w) = 2 sqrt(k_fw,r k_bw,r)` at the continuity state, and its
/// conjugate `Psi(w, j) = sum_r sigma_r (cosh*(j_r / sigma_r) + 1)`.
/// Fast coordinates extend by `Psi*(w, zeta) := Psi*(w, zeta_slow)` and an
/// indicator pinning fast flux deviations to zero.
#[derive(Debug, Clone)]
pub struct CoshDissipation {
    net: ReactionNetwork,
    rho0: Concentration,
}

impl CoshDissipation {
    pub fn new(net: ReactionNetwork, rho0: Concentration) -> Self {
        CoshDissipation { net, rho0 }
    }

    /// `sigma_r(w)` per slow reaction.
    pub fn sigma(&self, w: &FluxVector) -> Vec<f64> {
        let rho = continuity_state(&self.net, &self.rho0, w);
        let rho = Concentration::new(rho.iter().map(|&x| x.max(0.0)).collect()).expect("clamped");
        let rates = self.net.mass_action_rates(&rho);
        self.net
            .slow_indices()
            .iter()
            .map(|&r| 2.0 * (rates.fw[r] * rates.bw[r]).sqrt())
            .collect()
    }
}

impl DissipationPair for CoshDissipation {
    fn form(&self) -> DissipationForm {
        DissipationForm::Cosh
    }

    fn psi_star(&self, w: &FluxVector, zeta: &FluxCotangent) -> f64 {
        self.sigma(w)
            .iter()
            .zip(&zeta.slow)
            .map(|(&s, &z)| s * (z.cosh() - 1.0))
            .sum()
    }

    fn psi(&self, w: &FluxVector, j: &FluxVector) -> Option<f64> {
        let mut acc = 0.0;
        for (&s, &ji) in self.sigma(w).iter().zip(&j.slow) {
            if s == 0.0 {
                if ji.abs() > ldp::FAST_FLUX_TOL {
                    return None;
                }
            } else {
                acc += s * (cosh_star(ji / s) + 1.0);
            }
        }
        if j.fast.iter().any(|&jf| jf.abs() > ldp::FAST_FLUX_TOL) {
            return None;
        }
        Some(acc)
    }
}

/// Builds the free energy and cosh dissipation pair induced by a
/// detailed-balanced slow subnetwork.
pub fn build_cosh_ggs(
    net: &ReactionNetwork,
    rho0: &Concentration,
) -> Result<(FreeEnergy, CoshDissipation), NetworkError> {
    let rho_star = net.find_detailed_balance(rho0)?;
    Ok((
        FreeEnergy::new(net.clone(), rho0.clone(), rho_star),
        CoshDissipation::new(net.clone(), rho0.clone()),
    ))
}

/// One verified condition with its worst residual over the sample set.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConditionCheck {
    pub name: String,
    pub residual: f64,
    pub tolerance: f64,
    pub pass: bool,
    /// Flux point (slow then fast coordinates) where the residual peaked.
    pub witness: Option<Vec<f64>>,
}

/// Machine-readable verdict of a structure verification.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StructureReport {
    pub conditions: Vec<ConditionCheck>,
    pub overall: bool,
}

impl StructureReport {
    fn from_conditions(mut conditions: Vec<ConditionCheck>) -> Self {
        conditions.sort_by(|a, b| a.name.cmp(&b.name));
        let overall = conditions.iter().all(|c| c.pass);
        StructureReport {
            conditions,
            overall,
        }
    }

    pub fn condition(&self, name: &str) -> Option<&ConditionCheck> {
        self.conditions.iter().find(|c| c.name == name)
    }
}

#[derive(Debug, Clone)]
pub struct VerifyOptions {
    pub samples: usize,
    pub seed: u64,
    /// Identity and derivative conditions.
    pub tol_identity: f64,
    /// Exact algebraic conditions (orthogonality, divergence-free drift).
    pub tol_exact: f64,
    /// Keep sampled states componentwise above this margin.
    pub margin: f64,
    /// Half-width of the sampling box in flux space.
    pub box_radius: f64,
    /// Finite-difference step.
    pub fd_step: f64,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions {
            samples: 20,
            seed: 0x5EED,
            tol_identity: 1e-5,
            tol_exact: 1e-10,
            margin: 1e-3,
            box_radius: 0.25,
            fd_step: 1e-5,
        }
    }
}

/// Uniform flux points in a box, rejected until the continuity state stays
/// above the margin. Fast coordinates are nonnegative.
fn sample_flux_points(
    net: &ReactionNetwork,
    rho0: &Concentration,
    opts: &VerifyOptions,
) -> Vec<FluxVector> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut points = Vec::with_capacity(opts.samples);
    let mut attempts = 0usize;
    while points.len() < opts.samples && attempts < 20_000 * opts.samples.max(1) {
        attempts += 1;
        let w = FluxVector {
            slow: (0..net.n_slow())
                .map(|_| rng.gen_range(-opts.box_radius..opts.box_radius))
                .collect(),
            fast: (0..net.n_fast())
                .map(|_| rng.gen_range(0.0..opts.box_radius))
                .collect(),
        };
        if continuity_state(net, rho0, &w)
            .iter()
            .all(|&x| x >= opts.margin)
        {
            points.push(w);
        }
    }
    if points.is_empty() {
        points.push(FluxVector::zeros(net));
    }
    points
}

fn random_tangent(rng: &mut ChaCha8Rng, net: &ReactionNetwork, kinetic_fast: &[f64]) -> FluxVector {
    FluxVector {
        slow: (0..net.n_slow())
            .map(|_| rng.gen_range(-2.0..2.0))
            .collect(),
        fast: kinetic_fast.to_vec(),
    }
}

fn fast_kinetics(net: &ReactionNetwork, rho0: &Concentration, w: &FluxVector) -> Vec<f64> {
    let rho = continuity_state(net, rho0, w);
    let rho = Concentration::new(rho.iter().map(|&x| x.max(0.0)).collect()).expect("clamped");
    let rates = net.mass_action_rates(&rho);
    net.fast_indices().iter().map(|&r| rates.fw[r]).collect()
}

const RESIDUAL_CLAMP: f64 = 1e300;

fn finite_or_clamp(x: f64) -> f64 {
    if x.is_finite() {
        x
    } else {
        RESIDUAL_CLAMP
    }
}

fn check(name: &str, tolerance: f64, per_sample: Vec<(f64, &FluxVector)>) -> ConditionCheck {
    let mut residual = 0.0f64;
    let mut witness = None;
    for (value, w) in per_sample {
        let value = finite_or_clamp(value);
        if value >= residual {
            residual = value;
            let mut coords = w.slow.clone();
            coords.extend_from_slice(&w.fast);
            witness = Some(coords);
        }
    }
    ConditionCheck {
        name: name.to_string(),
        residual,
        tolerance,
        pass: residual <= tolerance,
        witness,
    }
}

/// Central finite difference of `flux_h` in the cotangent, with one
/// Richardson step.
fn h_zeta_derivative(
    net: &ReactionNetwork,
    rho0: &Concentration,
    w: &FluxVector,
    at: &FluxCotangent,
    h: f64,
) -> (Vec<f64>, Vec<f64>) {
    let eval = |zeta: &FluxCotangent| flux_h(net, rho0, w, zeta).unwrap_or(f64::NAN);
    let mut z = at.clone();
    let mut slow = vec![0.0; z.slow.len()];
    for i in 0..z.slow.len() {
        let base = z.slow[i];
        let mut central = |step: f64| {
            z.slow[i] = base + step;
            let fp = eval(&z);
            z.slow[i] = base - step;
            let fm = eval(&z);
            z.slow[i] = base;
            (fp - fm) / (2.0 * step)
        };
        let d1 = central(h);
        let d2 = central(h / 2.0);
        slow[i] = (4.0 * d2 - d1) / 3.0;
    }
    let mut fast = vec![0.0; z.fast.len()];
    for i in 0..z.fast.len() {
        let base = z.fast[i];
        let mut central = |step: f64| {
            z.fast[i] = base + step;
            let fp = eval(&z);
            z.fast[i] = base - step;
            let fm = eval(&z);
            z.fast[i] = base;
            (fp - fm) / (2.0 * step)
        };
        let d1 = central(h);
        let d2 = central(h / 2.0);
        fast[i] = (4.0 * d2 - d1) / 3.0;
    }
    (slow, fast)
}

/// Verifies that the flux rate function of `net` induces a generalized
/// gradient system with the supplied free energy and dissipation pair.
///
/// Checked per sampled flux point:
/// 1. the decomposition `L(w,j) = Psi(w,j) + Psi*(w,-dF(w)) + <dF(w), j>`;
/// 2. stationarity `d_zeta H(w, dF(w)) = 0`;
/// 3. the force identity `d_j L(w, 0) = dF(w)`;
/// 4. the reconstruction `Psi*(w,zeta) = H(w, zeta + dF) - H(w, dF)`.
pub fn verify_ggs(
    net: &ReactionNetwork,
    rho0: &Concentration,
    free_energy: &FreeEnergy,
    pair: &dyn DissipationPair,
    opts: &VerifyOptions,
) -> StructureReport {
    let points = sample_flux_points(net, rho0, opts);
    let evaluated: Vec<_> = points
        .par_iter()
        .enumerate()
        .map(|(idx, w)| {
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ (idx as u64) << 16);
            let df = free_energy.flux_gradient(w);
            let kinetic_fast = fast_kinetics(net, rho0, w);
            let psi_star_df = pair.psi_star(
                w,
                &FluxCotangent {
                    slow: df.slow.iter().map(|&x| -x).collect(),
                    fast: df.fast.iter().map(|&x| -x).collect(),
                },
            );

            // (1) decomposition on random tangents (fast part pinned to the
            // kinetics so that L stays finite when fast reactions exist).
            let mut decomposition = 0.0f64;
            for _ in 0..3 {
                let j = random_tangent(&mut rng, net, &kinetic_fast);
                let l =
                    flux_l(net, rho0, w, &j)
                        .map(|e| if e.finite { e.value } else { f64::INFINITY });
                let l = l.unwrap_or(f64::INFINITY);
                let psi = pair.psi(w, &j).unwrap_or(f64::INFINITY);
                let pairing: f64 = df.slow.iter().zip(&j.slow).map(|(a, b)| a * b).sum::<f64>()
                    + df.fast.iter().zip(&j.fast).map(|(a, b)| a * b).sum::<f64>();
                let rhs = psi + psi_star_df + pairing;
                let delta = if l.is_finite() && rhs.is_finite() {
                    (l - rhs).abs()
                } else if l == rhs {
                    0.0
                } else {
                    f64::INFINITY
                };
                decomposition = decomposition.max(delta);
            }

            // (2) d_zeta H at dF vanishes.
            let (ds, dfst) = h_zeta_derivative(net, rho0, w, &df, opts.fd_step);
            let stationarity = norm_inf(&ds).max(norm_inf(&dfst));

            // (3) d_j L(w, 0) = dF(w), finite differences over slow
            // coordinates (the rate function is not finite off the fast
            // kinetics, so a GGS requires none).
            let mut force = 0.0f64;
            let j_base = FluxVector {
                slow: vec![0.0; net.n_slow()],
                fast: vec![0.0; net.n_fast()],
            };
            let l_base = flux_l(net, rho0, w, &j_base)
                .map(|e| e.finite)
                .unwrap_or(false);
            if !l_base {
                force = f64::INFINITY;
            } else {
                for i in 0..net.n_slow() {
                    let central = |step: f64| -> f64 {
                        let mut jp = j_base.clone();
                        jp.slow[i] = step;
                        let fp = flux_l(net, rho0, w, &jp)
                            .map(|e| if e.finite { e.value } else { f64::NAN })
                            .unwrap_or(f64::NAN);
                        jp.slow[i] = -step;
                        let fm = flux_l(net, rho0, w, &jp)
                            .map(|e| if e.finite { e.value } else { f64::NAN })
                            .unwrap_or(f64::NAN);
                        (fp - fm) / (2.0 * step)
                    };
                    let d1 = central(opts.fd_step);
                    let d2 = central(opts.fd_step / 2.0);
                    let d = (4.0 * d2 - d1) / 3.0;
                    force = force.max((d - df.slow[i]).abs());
                }
            }

            // (4) Psi* reconstruction from H.
            let h_at_df = flux_h(net, rho0, w, &df).unwrap_or(f64::NAN);
            let mut reconstruction = 0.0f64;
            for _ in 0..3 {
                let zeta = FluxCotangent {
                    slow: (0..net.n_slow())
                        .map(|_| rng.gen_range(-1.5..1.5))
                        .collect(),
                    fast: (0..net.n_fast())
                        .map(|_| rng.gen_range(-1.5..1.5))
                        .collect(),
                };
                let shifted = FluxCotangent {
                    slow: zeta.slow.iter().zip(&df.slow).map(|(a, b)| a + b).collect(),
                    fast: zeta.fast.iter().zip(&df.fast).map(|(a, b)| a + b).collect(),
                };
                let h_shift = flux_h(net, rho0, w, &shifted).unwrap_or(f64::NAN);
                let lhs = pair.psi_star(w, &zeta);
                let rhs = h_shift - h_at_df;
                reconstruction = reconstruction.max((lhs - rhs).abs());
            }
            (w, decomposition, stationarity, force, reconstruction)
        })
        .collect();

    let conditions = vec![
        check(
            "decomposition",
            opts.tol_identity,
            evaluated.iter().map(|(w, d, _, _, _)| (*d, *w)).collect(),
        ),
        check(
            "stationarity_of_h",
            opts.tol_identity,
            evaluated.iter().map(|(w, _, s, _, _)| (*s, *w)).collect(),
        ),
        check(
            "force_matches_gradient",
            opts.tol_identity,
            evaluated.iter().map(|(w, _, _, f, _)| (*f, *w)).collect(),
        ),
        check(
            "psi_star_reconstruction",
            opts.tol_identity,
            evaluated.iter().map(|(w, _, _, _, r)| (*r, *w)).collect(),
        ),
    ];
    StructureReport::from_conditions(conditions)
}

/// Verifies the pre-GENERIC conditions for the drift
/// `b(w) = (0, k_fast(phi[w]))`:
/// divergence-free drift, orthogonality `<dF, b> = 0`, the shifted
/// decomposition `L(w,j) = Psi(w, j - b) + Psi*(w,-dF) + <dF, j>`, and
/// `d_zeta H(w, dF) = b`.
pub fn verify_pggen(
    net: &ReactionNetwork,
    rho0: &Concentration,
    free_energy: &FreeEnergy,
    pair: &dyn DissipationPair,
    opts: &VerifyOptions,
) -> StructureReport {
    let points = sample_flux_points(net, rho0, opts);
    let evaluated: Vec<_> = points
        .par_iter()
        .enumerate()
        .map(|(idx, w)| {
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ (idx as u64) << 16);
            let df = free_energy.flux_gradient(w);
            let kinetic_fast = fast_kinetics(net, rho0, w);

            // Divergence-free drift: Gamma k_fast = 0 at the sampled state.
            let shift = net.apply_gamma(&vec![0.0; net.n_slow()], &kinetic_fast);
            let divergence = norm_inf(&shift);

            // Orthogonality of drift and driving force.
            let orthogonality: f64 = df
                .fast
                .iter()
                .zip(&kinetic_fast)
                .map(|(a, b)| a * b)
                .sum::<f64>()
                .abs();

            let psi_star_df = pair.psi_star(
                w,
                &FluxCotangent {
                    slow: df.slow.iter().map(|&x| -x).collect(),
                    fast: df.fast.iter().map(|&x| -x).collect(),
                },
            );
            let mut decomposition = 0.0f64;
            for _ in 0..3 {
                let j = random_tangent(&mut rng, net, &kinetic_fast);
                let l = flux_l(net, rho0, w, &j)
                    .map(|e| if e.finite { e.value } else { f64::INFINITY })
                    .unwrap_or(f64::INFINITY);
                let j_shifted = FluxVector {
                    slow: j.slow.clone(),
                    fast: j
                        .fast
                        .iter()
                        .zip(&kinetic_fast)
                        .map(|(a, b)| a - b)
                        .collect(),
                };
                let psi = pair.psi(w, &j_shifted).unwrap_or(f64::INFINITY);
                let pairing: f64 = df.slow.iter().zip(&j.slow).map(|(a, b)| a * b).sum::<f64>()
                    + df.fast.iter().zip(&j.fast).map(|(a, b)| a * b).sum::<f64>();
                let rhs = psi + psi_star_df + pairing;
                let delta = if l.is_finite() && rhs.is_finite() {
                    (l - rhs).abs()
                } else if l == rhs {
                    0.0
                } else {
                    f64::INFINITY
                };
                decomposition = decomposition.max(delta);
            }

            // d_zeta H(w, dF) = b.
            let (ds, dfst) = h_zeta_derivative(net, rho0, w, &df, opts.fd_step);
            let mut drift_match = norm_inf(&ds);
            for (d, k) in dfst.iter().zip(&kinetic_fast) {
                drift_match = drift_match.max((d - k).abs());
            }
            (w, divergence, orthogonality, decomposition, drift_match)
        })
        .collect();

    let conditions = vec![
        check(
            "divergence_free_drift",
            opts.tol_exact,
            evaluated.iter().map(|(w, d, _, _, _)| (*d, *w)).collect(),
        ),
        check(
            "orthogonality",
            opts.tol_exact,
            evaluated.iter().map(|(w, _, o, _, _)| (*o, *w)).collect(),
        ),
        check(
            "shifted_decomposition",
            opts.tol_identity,
            evaluated.iter().map(|(w, _, _, d, _)| (*d, *w)).collect(),
        ),
        check(
            "drift_matches_h_derivative",
            opts.tol_identity,
            evaluated.iter().map(|(w, _, _, _, m)| (*m, *w)).collect(),
        ),
    ];
    StructureReport::from_conditions(conditions)
}

/// Candidate Hamiltonian energy for the GENERIC non-interaction checks,
/// expressed in flux coordinates (slow reactions first, then fast).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Energy {
    Constant {
        value: f64,
    },
    Linear {
        gradient: Vec<f64>,
    },
    Quadratic {
        matrix: Vec<Vec<f64>>,
        linear: Vec<f64>,
    },
}

impl Energy {
    pub fn gradient(&self, w: &[f64]) -> Vec<f64> {
        match self {
            Energy::Constant { .. } => vec![0.0; w.len()],
            Energy::Linear { gradient } => gradient.clone(),
            Energy::Quadratic { matrix, linear } => {
                let mut g = linear.clone();
                for (i, row) in matrix.iter().enumerate() {
                    for (j, &m) in row.iter().enumerate() {
                        g[i] += 0.5 * (m + matrix[j][i]) * w[j];
                    }
                }
                g
            }
        }
    }
}

/// Verifies the two GENERIC non-interaction conditions for a user-supplied
/// constant Poisson matrix and energy: skew-symmetry of `Lmat`,
/// `Lmat dF = 0`, and shift invariance
/// `Psi*(w, zeta + lambda dE(w)) = Psi*(w, zeta)` for several `lambda`.
pub fn verify_ggen_nic(
    net: &ReactionNetwork,
    rho0: &Concentration,
    free_energy: &FreeEnergy,
    pair: &dyn DissipationPair,
    energy: &Energy,
    lmat: &[Vec<f64>],
    opts: &VerifyOptions,
) -> StructureReport {
    let dim = net.n_slow() + net.n_fast();
    assert!(lmat.len() == dim && lmat.iter().all(|r| r.len() == dim));
    let points = sample_flux_points(net, rho0, opts);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);

    // Skew-symmetry is a property of the matrix alone.
    let mut skew = 0.0f64;
    for a in 0..dim {
        for b in 0..dim {
            skew = skew.max((lmat[a][b] + lmat[b][a]).abs());
        }
    }
    for _ in 0..10 {
        let zeta: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let lz: Vec<f64> = lmat
            .iter()
            .map(|row| row.iter().zip(&zeta).map(|(a, b)| a * b).sum())
            .collect();
        let quad: f64 = zeta.iter().zip(&lz).map(|(a, b)| a * b).sum();
        skew = skew.max(quad.abs());
    }

    let mut annihilation: Vec<(f64, &FluxVector)> = Vec::new();
    let mut shift_invariance: Vec<(f64, &FluxVector)> = Vec::new();
    for w in &points {
        let df = free_energy.flux_gradient(w);
        let mut df_coords = df.slow.clone();
        df_coords.extend_from_slice(&df.fast);
        let ldf: Vec<f64> = lmat
            .iter()
            .map(|row| row.iter().zip(&df_coords).map(|(a, b)| a * b).sum())
            .collect();
        annihilation.push((norm_inf(&ldf), w));

        let mut w_coords = w.slow.clone();
        w_coords.extend_from_slice(&w.fast);
        let de = energy.gradient(&w_coords);
        let mut worst = 0.0f64;
        for _ in 0..3 {
            let zeta: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let base = pair.psi_star(
                w,
                &FluxCotangent {
                    slow: zeta[..net.n_slow()].to_vec(),
                    fast: zeta[net.n_slow()..].to_vec(),
                },
            );
            for lambda in [-1.0, 0.5, 2.0] {
                let shifted: Vec<f64> = zeta.iter().zip(&de).map(|(z, d)| z + lambda * d).collect();
                let value = pair.psi_star(
                    w,
                    &FluxCotangent {
                        slow: shifted[..net.n_slow()].to_vec(),
                        fast: shifted[net.n_slow()..].to_vec(),
                    },
                );
                worst = worst.max((value - base).abs());
            }
        }
        shift_invariance.push((worst, w));
    }

    let w0 = &points[0];
    let conditions = vec![
        check("skew_symmetry", opts.tol_exact, vec![(skew, w0)]),
        check(
            "poisson_annihilates_free_energy",
            opts.tol_exact,
            annihilation,
        ),
        check(
            "psi_star_shift_invariance",
            opts.tol_identity,
            shift_invariance,
        ),
    ];
    StructureReport::from_conditions(conditions)
}

/// Integrates the macroscopic flux equations together with the dissipation
/// integrand and returns the energy-balance defect
/// `|F(w_T) - F(w_0) + int_0^T (Psi(w, w_dot - b) + Psi*(w, -dF)) dt|`.
/// Zero (up to integration error) exactly when the flow is the generalized
/// gradient flow of `(Psi, F)` shifted by the drift.
pub fn energy_balance_residual(
    net: &ReactionNetwork,
    rho0: &Concentration,
    t_end: f64,
) -> Result<f64, StructuresError> {
    let (free_energy, pair) = build_cosh_ggs(net, rho0)?;
    let n_slow = net.n_slow();
    let n_fast = net.n_fast();
    let dim = n_slow + n_fast;
    let y0 = vec![0.0; dim + 1];
    let rhs = |_t: f64, y: &[f64], dy: &mut [f64]| {
        let w = FluxVector {
            slow: y[..n_slow].to_vec(),
            fast: y[n_slow..dim].to_vec(),
        };
        let rho = continuity_state(net, rho0, &w);
        let rho = Concentration::new(rho.iter().map(|&x| x.max(0.0)).collect()).expect("clamped");
        let rates = net.mass_action_rates(&rho);
        for (i, &r) in net.slow_indices().iter().enumerate() {
            dy[i] = rates.fw[r] - rates.bw[r];
        }
        for (i, &r) in net.fast_indices().iter().enumerate() {
            dy[n_slow + i] = rates.fw[r];
        }
        let slow_velocity = FluxVector {
            slow: dy[..n_slow].to_vec(),
            fast: vec![0.0; n_fast],
        };
        let df = free_energy.flux_gradient(&w);
        let psi = pair.psi(&w, &slow_velocity).unwrap_or(f64::INFINITY);
        let psi_star = pair.psi_star(
            &w,
            &FluxCotangent {
                slow: df.slow.iter().map(|&x| -x).collect(),
                fast: df.fast.iter().map(|&x| -x).collect(),
            },
        );
        dy[dim] = psi + psi_star;
    };
    let w0 = FluxVector::zeros(net);
    let f0 = free_energy.flux_value(&w0);
    let y = rk45(rhs, &y0, t_end, &[], 1e-12, 1e-10, |_| true, |_, _| {})?;
    let w_end = FluxVector {
        slow: y[..n_slow].to_vec(),
        fast: y[n_slow..dim].to_vec(),
    };
    let f_end = free_energy.flux_value(&w_end);
    Ok((f_end - f0 + y[dim]).abs())
}
