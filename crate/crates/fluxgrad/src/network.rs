//! Reaction-network models: species, stoichiometry, mass-action kinetics,
//! and detailed-balance equilibria.
//!
//! A network holds an ordered species list and a list of reactions. Each
//! reaction carries forward/backward stoichiometry vectors `alpha`, `beta`
//! (nonnegative integer counts per species) and rate constants. The state
//! change vector of reaction `r` is always derived as `gamma_r = beta - alpha`
//! and never stored separately. Reactions are tagged `slow` or `fast`; fast
//! reactions are one-way and model a mechanism whose jumps are more frequent
//! but individually smaller (see [`crate::dynamics`]).

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::{least_squares_on_columns, norm_inf, rational_rref, solve_dense};

/// Residual threshold (log-space) below which the rate-constant system is
/// considered consistent with detailed balance.
pub const DETAILED_BALANCE_TOL: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum NetworkError {
    #[error("species identifiers must be unique (duplicate: {0})")]
    DuplicateSpecies(String),
    #[error("reaction {index}: {message}")]
    InvalidReaction { index: usize, message: String },
    #[error("concentration must be finite and nonnegative (entry {index} = {value})")]
    InvalidConcentration { index: usize, value: f64 },
    #[error("dimension mismatch: expected {expected} species entries, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("network is not detailed balanced: {reason}")]
    NotDetailedBalanced { reason: String },
    #[error("model validation failed:\n{}", .0.join("\n"))]
    Validation(Vec<String>),
}

/// Time-scale tag of a reaction.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Timescale {
    #[default]
    Slow,
    Fast,
}

/// A single reaction with mass-action kinetics.
#[derive(Debug, Clone, PartialEq)]
pub struct Reaction {
    /// Forward-reactant stoichiometry (counts per species).
    pub alpha: Vec<u32>,
    /// Forward-product stoichiometry (counts per species).
    pub beta: Vec<u32>,
    /// Forward rate constant.
    pub kappa_fw: f64,
    /// Backward rate constant (zero for one-way reactions).
    pub kappa_bw: f64,
    pub timescale: Timescale,
}

impl Reaction {
    /// State change vector `beta - alpha` (exact integer arithmetic).
    pub fn gamma(&self) -> Vec<i64> {
        self.alpha
            .iter()
            .zip(&self.beta)
            .map(|(&a, &b)| i64::from(b) - i64::from(a))
            .collect()
    }

    pub fn is_fast(&self) -> bool {
        self.timescale == Timescale::Fast
    }
}

/// Nonnegative per-species concentration vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Concentration(Vec<f64>);

impl Concentration {
    pub fn new(values: Vec<f64>) -> Result<Self, NetworkError> {
        for (index, &value) in values.iter().enumerate() {
            if !value.is_finite() || value < 0.0 {
                return Err(NetworkError::InvalidConcentration { index, value });
            }
        }
        Ok(Concentration(values))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

impl std::ops::Index<usize> for Concentration {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

/// Per-reaction mass-action rates evaluated at a concentration.
/// For fast reactions the forward entry holds the limit kinetics and the
/// backward entry is zero.
#[derive(Debug, Clone, PartialEq)]
pub struct Rates {
    pub fw: Vec<f64>,
    pub bw: Vec<f64>,
}

impl Rates {
    /// Net rate `fw - bw` per reaction.
    pub fn net(&self) -> Vec<f64> {
        self.fw.iter().zip(&self.bw).map(|(f, b)| f - b).collect()
    }
}

/// An immutable reaction network. Safe to share across threads.
#[derive(Debug, Clone, PartialEq)]
pub struct ReactionNetwork {
    species: Vec<String>,
    reactions: Vec<Reaction>,
}

impl ReactionNetwork {
    pub fn new(species: Vec<String>, reactions: Vec<Reaction>) -> Result<Self, NetworkError> {
        let mut seen = std::collections::BTreeSet::new();
        for s in &species {
            if !seen.insert(s.clone()) {
                return Err(NetworkError::DuplicateSpecies(s.clone()));
            }
        }
        for (index, r) in reactions.iter().enumerate() {
            if r.alpha.len() != species.len() || r.beta.len() != species.len() {
                return Err(NetworkError::InvalidReaction {
                    index,
                    message: format!(
                        "stoichiometry length must equal species count {}",
                        species.len()
                    ),
                });
            }
            if !(r.kappa_fw >= 0.0 && r.kappa_fw.is_finite()) {
                return Err(NetworkError::InvalidReaction {
                    index,
                    message: format!("kappa_fw must be finite and >= 0, got {}", r.kappa_fw),
                });
            }
            if !(r.kappa_bw >= 0.0 && r.kappa_bw.is_finite()) {
                return Err(NetworkError::InvalidReaction {
                    index,
                    message: format!("kappa_bw must be finite and >= 0, got {}", r.kappa_bw),
                });
            }
            if r.is_fast() && r.kappa_bw != 0.0 {
                return Err(NetworkError::InvalidReaction {
                    index,
                    message: "fast reactions are one-way: kappa_bw must be 0".into(),
                });
            }
        }
        Ok(ReactionNetwork { species, reactions })
    }

    pub fn species(&self) -> &[String] {
        &self.species
    }

    pub fn n_species(&self) -> usize {
        self.species.len()
    }

    pub fn reactions(&self) -> &[Reaction] {
        &self.reactions
    }

    /// Indices of slow reactions, in declaration order.
    pub fn slow_indices(&self) -> Vec<usize> {
        (0..self.reactions.len())
            .filter(|&r| !self.reactions[r].is_fast())
            .collect()
    }

    /// Indices of fast reactions, in declaration order.
    pub fn fast_indices(&self) -> Vec<usize> {
        (0..self.reactions.len())
            .filter(|&r| self.reactions[r].is_fast())
            .collect()
    }

    pub fn n_slow(&self) -> usize {
        self.slow_indices().len()
    }

    pub fn n_fast(&self) -> usize {
        self.fast_indices().len()
    }

    /// State change vectors of the slow reactions (declaration order).
    pub fn slow_gammas(&self) -> Vec<Vec<i64>> {
        self.slow_indices()
            .iter()
            .map(|&r| self.reactions[r].gamma())
            .collect()
    }

    /// State change vectors of the fast reactions (declaration order).
    pub fn fast_gammas(&self) -> Vec<Vec<i64>> {
        self.fast_indices()
            .iter()
            .map(|&r| self.reactions[r].gamma())
            .collect()
    }

    /// Applies the state-change map to a pair of per-reaction weights:
    /// `sum_r w_r gamma_r` over slow then fast reactions.
    pub fn apply_gamma(&self, slow_weights: &[f64], fast_weights: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n_species()];
        for (g, &w) in self.slow_gammas().iter().zip(slow_weights) {
            for (o, &gy) in out.iter_mut().zip(g) {
                *o += w * gy as f64;
            }
        }
        for (g, &w) in self.fast_gammas().iter().zip(fast_weights) {
            for (o, &gy) in out.iter_mut().zip(g) {
                *o += w * gy as f64;
            }
        }
        out
    }

    /// Pullback of a state cotangent: `(xi . gamma_r)` over slow then fast
    /// reactions.
    pub fn pullback(&self, xi: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let dotg = |g: &Vec<i64>| g.iter().zip(xi).map(|(&gy, &x)| gy as f64 * x).sum::<f64>();
        (
            self.slow_gammas().iter().map(dotg).collect(),
            self.fast_gammas().iter().map(dotg).collect(),
        )
    }

    /// Mass-action rates at `rho` with the convention `0^0 = 1`.
    ///
    /// Slow reactions: `k_fw = kappa_fw rho^alpha`, `k_bw = kappa_bw rho^beta`.
    /// Fast reactions: forward entry holds the limit kinetics
    /// `kappa_fw rho^alpha`, backward entry is zero.
    pub fn mass_action_rates(&self, rho: &Concentration) -> Rates {
        assert_eq!(rho.len(), self.n_species(), "concentration dimension");
        let fw = self
            .reactions
            .iter()
            .map(|r| r.kappa_fw * monomial(rho.as_slice(), &r.alpha))
            .collect();
        let bw = self
            .reactions
            .iter()
            .map(|r| r.kappa_bw * monomial(rho.as_slice(), &r.beta))
            .collect();
        Rates { fw, bw }
    }

    /// Right-hand side of the deterministic rate equation
    /// `rho_dot = sum_slow gamma_r (k_fw - k_bw) + sum_fast gamma_r k_fast`.
    pub fn rre_rhs(&self, rho: &Concentration) -> Vec<f64> {
        let rates = self.mass_action_rates(rho);
        let mut out = vec![0.0; self.n_species()];
        for (r, reaction) in self.reactions.iter().enumerate() {
            let k = rates.fw[r] - rates.bw[r];
            if k == 0.0 {
                continue;
            }
            for (o, g) in out.iter_mut().zip(reaction.gamma()) {
                *o += k * g as f64;
            }
        }
        out
    }

    /// Integer basis of the conservation laws of the slow subnetwork:
    /// vectors `m` with `m . gamma_r = 0` for every slow reaction.
    pub fn slow_conservation_basis(&self) -> Vec<Vec<i64>> {
        rational_rref(&self.slow_gammas(), self.n_species()).kernel
    }

    /// Integer basis of the conservation laws of the full network.
    pub fn conservation_basis(&self) -> Vec<Vec<i64>> {
        let gammas: Vec<Vec<i64>> = self.reactions.iter().map(|r| r.gamma()).collect();
        rational_rref(&gammas, self.n_species()).kernel
    }

    /// Finds the strictly positive detailed-balance equilibrium of the slow
    /// subnetwork within the stoichiometric compatibility class of `rho0`.
    ///
    /// Solved in log coordinates: the conditions
    /// `kappa_fw rho^alpha = kappa_bw rho^beta` are linear in `log rho`,
    /// and the compatibility-class constraints are then restored by a damped
    /// Newton iteration on the conserved totals.
    pub fn find_detailed_balance(
        &self,
        rho0: &Concentration,
    ) -> Result<Concentration, NetworkError> {
        let ny = self.n_species();
        assert_eq!(rho0.len(), ny, "concentration dimension");
        let slow = self.slow_indices();
        for &r in &slow {
            let reaction = &self.reactions[r];
            if reaction.kappa_fw <= 0.0 || reaction.kappa_bw <= 0.0 {
                return Err(NetworkError::NotDetailedBalanced {
                    reason: format!("slow reaction {r} is not reversible (kappa = 0)"),
                });
            }
        }

        // Linear system gamma_r . x = log(kappa_fw / kappa_bw) in x = log rho.
        let gammas = self.slow_gammas();
        let rref = rational_rref(&gammas, ny);
        let columns: Vec<Vec<f64>> = (0..ny)
            .map(|y| gammas.iter().map(|g| g[y] as f64).collect())
            .collect();
        let rhs: Vec<f64> = slow
            .iter()
            .map(|&r| (self.reactions[r].kappa_fw / self.reactions[r].kappa_bw).ln())
            .collect();
        let (x0, residual) = least_squares_on_columns(&columns, &rref.pivot_cols, &rhs);
        if residual > DETAILED_BALANCE_TOL {
            return Err(NetworkError::NotDetailedBalanced {
                reason: format!(
                    "rate-constant system inconsistent in log space (residual {residual:.3e})"
                ),
            });
        }

        // Restore the conserved totals of rho0 by moving along the kernel of
        // the slow stoichiometry: x(t) = x0 + sum_i t_i m_i. The map
        // t -> conserved totals of exp(x(t)) has a symmetric positive
        // definite Jacobian, so damped Newton converges to the unique
        // interior solution when one exists.
        let basis = &rref.kernel;
        let targets: Vec<f64> = basis
            .iter()
            .map(|m| {
                m.iter()
                    .zip(rho0.as_slice())
                    .map(|(&mi, &p)| mi as f64 * p)
                    .sum()
            })
            .collect();
        let k = basis.len();
        let mut t = vec![0.0; k];
        let eval_rho = |t: &[f64]| -> Vec<f64> {
            (0..ny)
                .map(|y| {
                    let mut x = x0[y];
                    for (ti, m) in t.iter().zip(basis) {
                        x += ti * m[y] as f64;
                    }
                    x.exp()
                })
                .collect()
        };
        if k > 0 {
            let mut converged = false;
            for _ in 0..200 {
                let rho = eval_rho(&t);
                let g: Vec<f64> = basis
                    .iter()
                    .zip(&targets)
                    .map(|(m, &tgt)| {
                        m.iter()
                            .zip(&rho)
                            .map(|(&mi, &p)| mi as f64 * p)
                            .sum::<f64>()
                            - tgt
                    })
                    .collect();
                let scale = targets.iter().fold(1.0f64, |a, &b| a.max(b.abs()));
                if norm_inf(&g) <= 1e-13 * scale {
                    converged = true;
                    break;
                }
                let mut jac = vec![vec![0.0; k]; k];
                for i in 0..k {
                    for j in 0..k {
                        jac[i][j] = (0..ny)
                            .map(|y| basis[i][y] as f64 * basis[j][y] as f64 * rho[y])
                            .sum();
                    }
                }
                let Some(step) = solve_dense(jac, g.clone()) else {
                    return Err(NetworkError::NotDetailedBalanced {
                        reason: "conserved-total system is singular".into(),
                    });
                };
                // Backtracking on the residual norm.
                let g0 = norm_inf(&g);
                let mut lambda = 1.0;
                let mut accepted = false;
                for _ in 0..60 {
                    let trial: Vec<f64> = t
                        .iter()
                        .zip(&step)
                        .map(|(&ti, &si)| ti - lambda * si)
                        .collect();
                    let rho_t = eval_rho(&trial);
                    let g_t: Vec<f64> = basis
                        .iter()
                        .zip(&targets)
                        .map(|(m, &tgt)| {
                            m.iter()
                                .zip(&rho_t)
                                .map(|(&mi, &p)| mi as f64 * p)
                                .sum::<f64>()
                                - tgt
                        })
                        .collect();
                    if norm_inf(&g_t) < g0 {
                        t = trial;
                        accepted = true;
                        break;
                    }
                    lambda *= 0.5;
                }
                if !accepted {
                    break;
                }
            }
            if !converged {
                let rho = eval_rho(&t);
                let g_final: Vec<f64> = basis
                    .iter()
                    .zip(&targets)
                    .map(|(m, &tgt)| {
                        m.iter()
                            .zip(&rho)
                            .map(|(&mi, &p)| mi as f64 * p)
                            .sum::<f64>()
                            - tgt
                    })
                    .collect();
                let scale = targets.iter().fold(1.0f64, |a, &b| a.max(b.abs()));
                if norm_inf(&g_final) > 1e-10 * scale {
                    return Err(NetworkError::NotDetailedBalanced {
                        reason: "compatibility-class projection did not converge; \
                                 the equilibrium may lie on the class boundary"
                            .into(),
                    });
                }
            }
        }
        let rho_star = eval_rho(&t);
        // Final consistency check, reaction by reaction.
        let max_log_residual = slow
            .iter()
            .map(|&r| {
                let reaction = &self.reactions[r];
                let lhs = reaction.kappa_fw.ln()
                    + reaction
                        .alpha
                        .iter()
                        .zip(&rho_star)
                        .map(|(&a, p)| a as f64 * p.ln())
                        .sum::<f64>();
                let rhs = reaction.kappa_bw.ln()
                    + reaction
                        .beta
                        .iter()
                        .zip(&rho_star)
                        .map(|(&b, p)| b as f64 * p.ln())
                        .sum::<f64>();
                (lhs - rhs).abs()
            })
            .fold(0.0f64, f64::max);
        if max_log_residual > 1e-8 {
            return Err(NetworkError::NotDetailedBalanced {
                reason: format!("residual {max_log_residual:.3e} after projection"),
            });
        }
        Concentration::new(rho_star)
    }
}

/// `rho^alpha` with the convention `0^0 = 1`, so zeroth-order (source)
/// reactions have unit monomial.
fn monomial(rho: &[f64], exponents: &[u32]) -> f64 {
    rho.iter()
        .zip(exponents)
        .map(|(&p, &e)| match e {
            0 => 1.0,
            1 => p,
            _ => p.powi(e as i32),
        })
        .product()
}

// ---------------------------------------------------------------------------
// Model file schema
// ---------------------------------------------------------------------------

/// On-disk reaction model. Stoichiometries are sparse maps from species name
/// to count; unknown keys anywhere in the document are rejected.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub species: Vec<String>,
    pub reactions: Vec<ReactionEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReactionEntry {
    #[serde(default)]
    pub alpha: BTreeMap<String, u32>,
    #[serde(default)]
    pub beta: BTreeMap<String, u32>,
    pub kappa_fw: f64,
    #[serde(default)]
    pub kappa_bw: f64,
    #[serde(default)]
    pub timescale: Timescale,
}

impl ModelFile {
    /// Parses and fully validates a model document, reporting every
    /// violation at once.
    pub fn parse(text: &str) -> Result<Self, ModelError> {
        let model: ModelFile =
            serde_json::from_str(text).map_err(|e| ModelError::Parse(e.to_string()))?;
        model.validate()?;
        Ok(model)
    }

    fn validate(&self) -> Result<(), ModelError> {
        let mut problems = Vec::new();
        let mut seen = std::collections::BTreeSet::new();
        for s in &self.species {
            if !seen.insert(s) {
                problems.push(format!("duplicate species identifier '{s}'"));
            }
        }
        if self.species.is_empty() {
            problems.push("species list is empty".into());
        }
        for (i, r) in self.reactions.iter().enumerate() {
            for key in r.alpha.keys().chain(r.beta.keys()) {
                if !self.species.contains(key) {
                    problems.push(format!("reaction {i}: unknown species '{key}'"));
                }
            }
            if !(r.kappa_fw >= 0.0 && r.kappa_fw.is_finite()) {
                problems.push(format!(
                    "reaction {i}: kappa_fw = {} must be >= 0",
                    r.kappa_fw
                ));
            }
            if !(r.kappa_bw >= 0.0 && r.kappa_bw.is_finite()) {
                problems.push(format!(
                    "reaction {i}: kappa_bw = {} must be >= 0",
                    r.kappa_bw
                ));
            }
            if r.timescale == Timescale::Fast && r.kappa_bw != 0.0 {
                problems.push(format!(
                    "reaction {i}: fast reactions are one-way (kappa_bw = 0)"
                ));
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(ModelError::Validation(problems))
        }
    }

    /// Builds the in-memory network (dense stoichiometry vectors in species
    /// order).
    pub fn to_network(&self) -> Result<ReactionNetwork, ModelError> {
        self.validate()?;
        let index: BTreeMap<&str, usize> = self
            .species
            .iter()
            .enumerate()
            .map(|(i, s)| (s.as_str(), i))
            .collect();
        let reactions = self
            .reactions
            .iter()
            .map(|r| {
                let mut alpha = vec![0u32; self.species.len()];
                let mut beta = vec![0u32; self.species.len()];
                for (s, &c) in &r.alpha {
                    alpha[index[s.as_str()]] = c;
                }
                for (s, &c) in &r.beta {
                    beta[index[s.as_str()]] = c;
                }
                Reaction {
                    alpha,
                    beta,
                    kappa_fw: r.kappa_fw,
                    kappa_bw: r.kappa_bw,
                    timescale: r.timescale,
                }
            })
            .collect();
        ReactionNetwork::new(self.species.clone(), reactions)
            .map_err(|e| ModelError::Validation(vec![e.to_string()]))
    }

    /// Canonical serialization: stable field order, stoichiometry maps sorted
    /// by species name. Parsing the output reproduces the same value.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serialization cannot fail")
    }
}

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("model parse error: {0}")]
    Parse(String),
    #[error("model validation failed:\n{}", .0.iter().map(|p| format!("  - {p}")).collect::<Vec<_>>().join("\n"))]
    Validation(Vec<String>),
}

impl fmt::Display for ReactionNetwork {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "network[{} species, {} reactions]",
            self.n_species(),
            self.reactions.len()
        )
    }
}
