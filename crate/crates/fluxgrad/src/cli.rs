//! Command-line front end: model loading, dispatch to the numerical
//! modules, and deterministic CSV / JSON result files.
//!
//! Every structured result is wrapped in a [`ResultEnvelope`] carrying the
//! schema version, the command, the seed, and a SHA-256 hash of the
//! canonicalized model, so identical runs produce byte-identical payloads.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::dynamics::{
    integrate_rre, simulate_ensemble, DynamicsError, FluxVector, JumpProcessConfig, Trajectory,
};
use crate::lattice::{
    heat_evolve, rd_step, simulate_walkers, FaceField, Grid, LatticeError, RdState, ScalarField,
};
use crate::ldp::{self, LdpError, RateEvaluation};
use crate::network::{Concentration, ModelError, ModelFile, NetworkError, ReactionNetwork};
use crate::structures::{
    build_cosh_ggs, verify_ggen_nic, verify_ggs, verify_pggen, Energy, StructureReport,
    VerifyOptions,
};

#[derive(Debug, Error)]
pub enum CliError {
    /// Malformed or inconsistent input: exit code 2.
    #[error("{0}")]
    Validation(String),
    /// Numerical failure at runtime: exit code 3.
    #[error("{0}")]
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Numeric(_) => 3,
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<NetworkError> for CliError {
    fn from(e: NetworkError) -> Self {
        match e {
            NetworkError::NotDetailedBalanced { .. } => CliError::Numeric(e.to_string()),
            other => CliError::Validation(other.to_string()),
        }
    }
}

impl From<DynamicsError> for CliError {
    fn from(e: DynamicsError) -> Self {
        match e {
            DynamicsError::ExplosionGuard { .. } | DynamicsError::Ode(_) => {
                CliError::Numeric(e.to_string())
            }
            other => CliError::Validation(other.to_string()),
        }
    }
}

impl From<LdpError> for CliError {
    fn from(e: LdpError) -> Self {
        match e {
            LdpError::NonConvexityDetected { .. } => CliError::Numeric(e.to_string()),
            other => CliError::Validation(other.to_string()),
        }
    }
}

impl From<LatticeError> for CliError {
    fn from(e: LatticeError) -> Self {
        match e {
            LatticeError::NotConverged { .. }
            | LatticeError::ExplosionGuard { .. }
            | LatticeError::StabilityViolation { .. } => CliError::Numeric(e.to_string()),
            other => CliError::Validation(other.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "fluxgrad",
    about = "Reacting particle systems, their large-volume rate functions, \
             and the gradient structures they induce",
    version
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Stochastic simulation of the finite-volume jump process; writes one
    /// CSV row per (replicate, sample time) with species concentrations and
    /// integrated reaction fluxes.
    Simulate(SimulateArgs),
    /// Deterministic large-volume limit: integrates the coupled flux
    /// equations and writes the sampled trajectory as CSV.
    Limit(LimitArgs),
    /// Evaluates Hamiltonians and rate functions on state or flux space at a
    /// point given in a JSON file.
    Ldp(LdpArgs),
    /// Checks the generalized-gradient / pre-GENERIC / GENERIC conditions on
    /// sampled flux points and writes a machine-readable report.
    Verify(VerifyArgs),
    /// Independent random walkers on a periodic grid with face-flux
    /// counters, or the deterministic heat flow they converge to.
    Lattice(LatticeArgs),
    /// Two-species reaction-diffusion on a periodic grid: explicit limit
    /// integration of transport and reaction fluxes.
    Rd(RdArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Reaction model JSON file.
    #[arg(long)]
    pub model: PathBuf,
    /// Initial concentrations, comma separated, in model species order.
    #[arg(long)]
    pub rho0: String,
    /// Volume scaling parameter V (counts are V * rho).
    #[arg(long)]
    pub volume: u64,
    #[arg(long = "t-end")]
    pub t_end: f64,
    #[arg(long, default_value_t = 1)]
    pub replicates: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Number of equal sample intervals in [0, t_end].
    #[arg(long, default_value_t = 20)]
    pub records: usize,
    #[arg(long = "event-cap", default_value_t = 100_000_000)]
    pub event_cap: u64,
    /// Output CSV path.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct LimitArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub rho0: String,
    #[arg(long = "t-end")]
    pub t_end: f64,
    #[arg(long, default_value_t = 20)]
    pub records: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LdpEval {
    /// State-space Hamiltonian H(rho, xi).
    StateH,
    /// State-space rate function sup_xi xi.s - H(rho, xi).
    StateL,
    /// Flux-space rate function in closed entropic form.
    FluxL,
    /// Minimum of the flux rate function over fluxes compatible with a
    /// state velocity.
    Contraction,
}

#[derive(Debug, Args)]
pub struct LdpArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, value_enum)]
    pub eval: LdpEval,
    /// JSON file holding the evaluation point (fields rho, rho0, xi, s, w, j
    /// as required by the chosen evaluation).
    #[arg(long)]
    pub at: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StructureKind {
    Ggs,
    Pggen,
    Ggen,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub rho0: String,
    #[arg(long, value_enum)]
    pub structure: StructureKind,
    #[arg(long, default_value_t = 20)]
    pub samples: usize,
    /// Tolerance for identity and derivative conditions.
    #[arg(long, default_value_t = 1e-5)]
    pub tol: f64,
    #[arg(long, default_value_t = 0x5EED)]
    pub seed: u64,
    /// Optional JSON file with a Poisson matrix and energy for the GENERIC
    /// checks: {"lmat": [[...]], "energy": {"kind": "constant", "value": 0}}.
    #[arg(long)]
    pub aux: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LatticeOp {
    /// Stochastic walker ensemble.
    Walkers,
    /// Deterministic heat flow.
    Heat,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LatticeInit {
    /// All particles spread uniformly over the torus.
    Uniform,
    /// Particles loaded on the first half of the sites.
    Half,
}

#[derive(Debug, Args)]
pub struct LatticeArgs {
    #[arg(long, default_value_t = 1)]
    pub dim: usize,
    #[arg(long)]
    pub n: usize,
    #[arg(long)]
    pub eps: f64,
    /// Number of particles.
    #[arg(long)]
    pub volume: u64,
    #[arg(long, default_value_t = 1.0)]
    pub diffusivity: f64,
    #[arg(long = "t-end")]
    pub t_end: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 10)]
    pub records: usize,
    #[arg(long, value_enum, default_value_t = LatticeInit::Uniform)]
    pub init: LatticeInit,
    #[arg(long, value_enum, default_value_t = LatticeOp::Walkers)]
    pub op: LatticeOp,
    #[arg(long = "event-cap", default_value_t = 100_000_000)]
    pub event_cap: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RdArgs {
    #[arg(long, default_value_t = 1)]
    pub dim: usize,
    #[arg(long)]
    pub n: usize,
    #[arg(long)]
    pub eps: f64,
    #[arg(long = "d-a", default_value_t = 1.0)]
    pub d_a: f64,
    #[arg(long = "d-b", default_value_t = 1.0)]
    pub d_b: f64,
    #[arg(long = "kappa-fw", default_value_t = 1.0)]
    pub kappa_fw: f64,
    #[arg(long = "kappa-bw", default_value_t = 1.0)]
    pub kappa_bw: f64,
    /// Initial density of species A: "uniform:<value>" or
    /// "wave:<base>:<amplitude>".
    #[arg(long = "init-a", default_value = "uniform:1")]
    pub init_a: String,
    #[arg(long = "init-b", default_value = "uniform:1")]
    pub init_b: String,
    #[arg(long = "t-end")]
    pub t_end: f64,
    /// Explicit Euler step; must respect the diffusive stability bound.
    #[arg(long)]
    pub dt: f64,
    #[arg(long, default_value_t = 10)]
    pub records: usize,
    #[arg(long)]
    pub out: PathBuf,
}

// ---------------------------------------------------------------------------
// Result envelope
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize)]
pub struct ResultEnvelope<P: Serialize> {
    pub schema_version: String,
    pub command: String,
    pub provenance: Provenance,
    pub payload: P,
}

#[derive(Debug, Serialize)]
pub struct Provenance {
    pub seed: Option<u64>,
    pub model_hash: Option<String>,
}

fn envelope<P: Serialize>(
    command: &str,
    seed: Option<u64>,
    hash: Option<String>,
    payload: P,
) -> String {
    let env = ResultEnvelope {
        schema_version: "1".to_string(),
        command: command.to_string(),
        provenance: Provenance {
            seed,
            model_hash: hash,
        },
        payload,
    };
    serde_json::to_string_pretty(&env).expect("serializable payload")
}

#[derive(Debug, Serialize)]
struct RateEvaluationJson {
    value: Option<f64>,
    finite: bool,
    optimizer: Vec<f64>,
    converged: bool,
    residual: f64,
}

impl From<RateEvaluation> for RateEvaluationJson {
    fn from(e: RateEvaluation) -> Self {
        RateEvaluationJson {
            value: e.finite.then_some(e.value),
            finite: e.finite,
            optimizer: e.optimizer,
            converged: e.converged,
            residual: e.residual,
        }
    }
}

// ---------------------------------------------------------------------------
// Shared helpers
// ---------------------------------------------------------------------------

fn read_file(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path)
        .map_err(|e| CliError::Validation(format!("cannot read {}: {e}", path.display())))
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    std::fs::write(path, contents)
        .map_err(|e| CliError::Validation(format!("cannot write {}: {e}", path.display())))
}

/// Parses and validates a reaction model file; returns the network and the
/// SHA-256 hash of its canonical serialization.
pub fn parse_model(path: &Path) -> Result<(ReactionNetwork, String), CliError> {
    let text = read_file(path)?;
    let model = ModelFile::parse(&text)?;
    let net = model.to_network()?;
    let hash = hex_digest(model.canonical_json().as_bytes());
    Ok((net, hash))
}

fn hex_digest(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    hasher
        .finalize()
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

fn parse_rho0(text: &str, n_species: usize) -> Result<Concentration, CliError> {
    let values: Result<Vec<f64>, _> = text.split(',').map(|t| t.trim().parse::<f64>()).collect();
    let values = values.map_err(|e| CliError::Validation(format!("cannot parse --rho0: {e}")))?;
    if values.len() != n_species {
        return Err(CliError::Validation(format!(
            "--rho0 has {} entries but the model has {} species",
            values.len(),
            n_species
        )));
    }
    Concentration::new(values).map_err(|e| CliError::Validation(e.to_string()))
}

fn record_grid(t_end: f64, records: usize) -> Vec<f64> {
    (0..=records.max(1))
        .map(|k| t_end * k as f64 / records.max(1) as f64)
        .collect()
}

fn trajectory_csv(
    net: &ReactionNetwork,
    trajectories: &[Trajectory],
    with_replicate: bool,
) -> String {
    let mut csv = String::new();
    if with_replicate {
        csv.push_str("replicate,");
    }
    csv.push_str("time");
    for s in net.species() {
        csv.push(',');
        csv.push_str(s);
    }
    for i in 0..net.n_slow() {
        csv.push_str(&format!(",flux_slow_{i}"));
    }
    for i in 0..net.n_fast() {
        csv.push_str(&format!(",flux_fast_{i}"));
    }
    csv.push('\n');
    for (rep, traj) in trajectories.iter().enumerate() {
        for k in 0..traj.times.len() {
            if with_replicate {
                csv.push_str(&format!("{rep},"));
            }
            csv.push_str(&format!("{}", traj.times[k]));
            for &x in traj.states[k].as_slice() {
                csv.push_str(&format!(",{x}"));
            }
            for &x in &traj.fluxes[k].slow {
                csv.push_str(&format!(",{x}"));
            }
            for &x in &traj.fluxes[k].fast {
                csv.push_str(&format!(",{x}"));
            }
            csv.push('\n');
        }
    }
    csv
}

/// Caps the global worker pool from the FLUXGRAD_THREADS environment
/// variable (first initialization wins).
pub fn init_threads() {
    if let Ok(text) = std::env::var("FLUXGRAD_THREADS") {
        if let Ok(n) = text.parse::<usize>() {
            let _ = rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build_global();
        }
    }
}

// ---------------------------------------------------------------------------
// Command implementations
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize)]
struct CsvSummary {
    out: String,
    rows: usize,
}

fn run_simulate(args: &SimulateArgs) -> Result<String, CliError> {
    let (net, hash) = parse_model(&args.model)?;
    let rho0 = parse_rho0(&args.rho0, net.n_species())?;
    if args.t_end <= 0.0 || args.volume == 0 || args.replicates == 0 {
        return Err(CliError::Validation(
            "--t-end, --volume and --replicates must be positive".into(),
        ));
    }
    let mut config = JumpProcessConfig::new(
        args.volume,
        args.t_end,
        args.seed,
        record_grid(args.t_end, args.records),
    );
    config.event_cap = args.event_cap;
    let ensemble = simulate_ensemble(&net, &rho0, &config, args.replicates)?;
    let csv = trajectory_csv(&net, &ensemble, true);
    write_file(&args.out, &csv)?;
    let rows = ensemble.iter().map(|t| t.times.len()).sum();
    Ok(envelope(
        "simulate",
        Some(args.seed),
        Some(hash),
        CsvSummary {
            out: args.out.display().to_string(),
            rows,
        },
    ))
}

fn run_limit(args: &LimitArgs) -> Result<String, CliError> {
    let (net, hash) = parse_model(&args.model)?;
    let rho0 = parse_rho0(&args.rho0, net.n_species())?;
    if args.t_end <= 0.0 {
        return Err(CliError::Validation("--t-end must be positive".into()));
    }
    let traj = integrate_rre(
        &net,
        &rho0,
        args.t_end,
        &record_grid(args.t_end, args.records),
    )?;
    let rows = traj.times.len();
    let csv = trajectory_csv(&net, std::slice::from_ref(&traj), false);
    write_file(&args.out, &csv)?;
    Ok(envelope(
        "limit",
        None,
        Some(hash),
        CsvSummary {
            out: args.out.display().to_string(),
            rows,
        },
    ))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct PointFile {
    rho: Option<Vec<f64>>,
    rho0: Option<Vec<f64>>,
    xi: Option<Vec<f64>>,
    s: Option<Vec<f64>>,
    w: Option<FluxParts>,
    j: Option<FluxParts>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct FluxParts {
    #[serde(default)]
    slow: Vec<f64>,
    #[serde(default)]
    fast: Vec<f64>,
}

impl FluxParts {
    fn to_flux(&self, net: &ReactionNetwork, name: &str) -> Result<FluxVector, CliError> {
        if self.slow.len() != net.n_slow() || self.fast.len() != net.n_fast() {
            return Err(CliError::Validation(format!(
                "{name} must have {} slow and {} fast entries",
                net.n_slow(),
                net.n_fast()
            )));
        }
        Ok(FluxVector {
            slow: self.slow.clone(),
            fast: self.fast.clone(),
        })
    }
}

fn require<T>(value: Option<T>, field: &str, eval: &str) -> Result<T, CliError> {
    value.ok_or_else(|| {
        CliError::Validation(format!(
            "point file is missing field '{field}' required by {eval}"
        ))
    })
}

fn require_len(values: &[f64], n: usize, field: &str) -> Result<(), CliError> {
    if values.len() == n {
        Ok(())
    } else {
        Err(CliError::Validation(format!(
            "field '{field}' must have {n} entries"
        )))
    }
}

fn run_ldp(args: &LdpArgs) -> Result<String, CliError> {
    let (net, hash) = parse_model(&args.model)?;
    let point: PointFile = serde_json::from_str(&read_file(&args.at)?)
        .map_err(|e| CliError::Validation(format!("point file: {e}")))?;
    let ny = net.n_species();
    let result: RateEvaluationJson = match args.eval {
        LdpEval::StateH => {
            let rho = require(point.rho, "rho", "state-h")?;
            let xi = require(point.xi, "xi", "state-h")?;
            require_len(&rho, ny, "rho")?;
            require_len(&xi, ny, "xi")?;
            let rho = Concentration::new(rho).map_err(CliError::from)?;
            let value = ldp::state_h(&net, &rho, &xi);
            RateEvaluationJson {
                value: Some(value),
                finite: true,
                optimizer: vec![],
                converged: true,
                residual: 0.0,
            }
        }
        LdpEval::StateL => {
            let rho = require(point.rho, "rho", "state-l")?;
            let s = require(point.s, "s", "state-l")?;
            require_len(&rho, ny, "rho")?;
            require_len(&s, ny, "s")?;
            let rho = Concentration::new(rho).map_err(CliError::from)?;
            ldp::state_l(&net, &rho, &s).into()
        }
        LdpEval::FluxL => {
            let rho0 = require(point.rho0, "rho0", "flux-l")?;
            require_len(&rho0, ny, "rho0")?;
            let rho0 = Concentration::new(rho0).map_err(CliError::from)?;
            let w = require(point.w.as_ref(), "w", "flux-l")?.to_flux(&net, "w")?;
            let j = require(point.j.as_ref(), "j", "flux-l")?.to_flux(&net, "j")?;
            ldp::flux_l(&net, &rho0, &w, &j)?.into()
        }
        LdpEval::Contraction => {
            let rho0 = require(point.rho0, "rho0", "contraction")?;
            require_len(&rho0, ny, "rho0")?;
            let rho0 = Concentration::new(rho0).map_err(CliError::from)?;
            let w = require(point.w.as_ref(), "w", "contraction")?.to_flux(&net, "w")?;
            let s = require(point.s, "s", "contraction")?;
            require_len(&s, ny, "s")?;
            ldp::contraction(&net, &rho0, &w, &s)?.into()
        }
    };
    let out = envelope("ldp", None, Some(hash), result);
    write_file(&args.out, &out)?;
    Ok(out)
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct AuxFile {
    lmat: Option<Vec<Vec<f64>>>,
    energy: Option<Energy>,
}

fn run_verify(args: &VerifyArgs) -> Result<String, CliError> {
    let (net, hash) = parse_model(&args.model)?;
    let rho0 = parse_rho0(&args.rho0, net.n_species())?;
    let opts = VerifyOptions {
        samples: args.samples,
        seed: args.seed,
        tol_identity: args.tol,
        ..VerifyOptions::default()
    };
    let (free_energy, pair) = build_cosh_ggs(&net, &rho0)?;
    let report: StructureReport = match args.structure {
        StructureKind::Ggs => verify_ggs(&net, &rho0, &free_energy, &pair, &opts),
        StructureKind::Pggen => verify_pggen(&net, &rho0, &free_energy, &pair, &opts),
        StructureKind::Ggen => {
            let dim = net.n_slow() + net.n_fast();
            let (lmat, energy) = match &args.aux {
                Some(path) => {
                    let aux: AuxFile = serde_json::from_str(&read_file(path)?)
                        .map_err(|e| CliError::Validation(format!("aux file: {e}")))?;
                    let lmat = aux.lmat.unwrap_or_else(|| vec![vec![0.0; dim]; dim]);
                    if lmat.len() != dim || lmat.iter().any(|r| r.len() != dim) {
                        return Err(CliError::Validation(format!(
                            "lmat must be a {dim} x {dim} matrix"
                        )));
                    }
                    (lmat, aux.energy.unwrap_or(Energy::Constant { value: 0.0 }))
                }
                None => (vec![vec![0.0; dim]; dim], Energy::Constant { value: 0.0 }),
            };
            verify_ggen_nic(&net, &rho0, &free_energy, &pair, &energy, &lmat, &opts)
        }
    };
    let out = envelope("verify", Some(args.seed), Some(hash), report);
    write_file(&args.out, &out)?;
    Ok(out)
}

#[derive(Debug, Serialize)]
struct GridMeta {
    dim: usize,
    n: usize,
    eps: f64,
    sites: usize,
    out: String,
}

fn field_csv_header(grid: Grid, scalars: &[&str], faces: &[&str]) -> String {
    let mut header = String::from("time");
    for name in scalars {
        for site in 0..grid.sites() {
            header.push_str(&format!(",{name}_{site}"));
        }
    }
    for name in faces {
        for site in 0..grid.sites() {
            for axis in 0..grid.dim() {
                header.push_str(&format!(",{name}_{site}_{axis}"));
            }
        }
    }
    header.push('\n');
    header
}

fn push_scalar(csv: &mut String, field: &ScalarField) {
    for &x in field.values() {
        csv.push_str(&format!(",{x}"));
    }
}

fn push_face(csv: &mut String, field: &FaceField) {
    for &x in field.values() {
        csv.push_str(&format!(",{x}"));
    }
}

fn lattice_initial_counts(grid: Grid, init: LatticeInit, volume: u64) -> Vec<u64> {
    let sites = grid.sites();
    match init {
        LatticeInit::Uniform => {
            let base = volume / sites as u64;
            let mut counts = vec![base; sites];
            for (i, c) in counts.iter_mut().enumerate() {
                if (i as u64) < volume % sites as u64 {
                    *c += 1;
                }
            }
            counts
        }
        LatticeInit::Half => {
            let loaded = (sites / 2).max(1);
            let base = volume / loaded as u64;
            let mut counts = vec![0u64; sites];
            for (i, c) in counts.iter_mut().take(loaded).enumerate() {
                *c = base + u64::from((i as u64) < volume % loaded as u64);
            }
            counts
        }
    }
}

fn run_lattice(args: &LatticeArgs) -> Result<String, CliError> {
    let grid = Grid::new(args.dim, args.n, args.eps)?;
    if args.t_end <= 0.0 || args.volume == 0 {
        return Err(CliError::Validation(
            "--t-end and --volume must be positive".into(),
        ));
    }
    let counts = lattice_initial_counts(grid, args.init, args.volume);
    let times = record_grid(args.t_end, args.records);
    let volume = counts.iter().sum::<u64>() as f64;
    let mut csv = field_csv_header(grid, &["rho"], &["flux"]);
    match args.op {
        LatticeOp::Walkers => {
            let run = simulate_walkers(
                grid,
                &counts,
                args.diffusivity,
                &times,
                args.seed,
                args.event_cap,
            )?;
            for k in 0..run.times.len() {
                csv.push_str(&format!("{}", run.times[k]));
                push_scalar(&mut csv, &run.densities[k]);
                push_face(&mut csv, &run.fluxes[k]);
                csv.push('\n');
            }
        }
        LatticeOp::Heat => {
            let rho0 = ScalarField::from_values(
                grid,
                counts
                    .iter()
                    .map(|&c| c as f64 / (volume * grid.cell_volume()))
                    .collect(),
            )?;
            for &t in &times {
                let rho = heat_evolve(&rho0, args.diffusivity, t)?;
                csv.push_str(&format!("{t}"));
                push_scalar(&mut csv, &rho);
                for _ in 0..grid.faces() {
                    csv.push_str(",0");
                }
                csv.push('\n');
            }
        }
    }
    write_file(&args.out, &csv)?;
    Ok(envelope(
        "lattice",
        Some(args.seed),
        None,
        GridMeta {
            dim: grid.dim(),
            n: grid.n(),
            eps: grid.eps(),
            sites: grid.sites(),
            out: args.out.display().to_string(),
        },
    ))
}

fn parse_profile(grid: Grid, spec: &str, name: &str) -> Result<ScalarField, CliError> {
    let parts: Vec<&str> = spec.split(':').collect();
    let bad = || CliError::Validation(format!("cannot parse --{name} '{spec}'"));
    match parts.as_slice() {
        ["uniform", v] => {
            let value: f64 = v.parse().map_err(|_| bad())?;
            if value < 0.0 {
                return Err(bad());
            }
            Ok(ScalarField::constant(grid, value))
        }
        ["wave", base, amp] => {
            let base: f64 = base.parse().map_err(|_| bad())?;
            let amp: f64 = amp.parse().map_err(|_| bad())?;
            if base - amp.abs() < 0.0 {
                return Err(CliError::Validation(format!(
                    "--{name}: wave amplitude {amp} makes the density negative"
                )));
            }
            let n = grid.sites();
            ScalarField::from_values(
                grid,
                (0..n)
                    .map(|i| base + amp * (2.0 * std::f64::consts::PI * i as f64 / n as f64).sin())
                    .collect(),
            )
            .map_err(CliError::from)
        }
        _ => Err(bad()),
    }
}

fn run_rd(args: &RdArgs) -> Result<String, CliError> {
    let grid = Grid::new(args.dim, args.n, args.eps)?;
    if args.t_end <= 0.0 || args.dt <= 0.0 {
        return Err(CliError::Validation(
            "--t-end and --dt must be positive".into(),
        ));
    }
    let rho0_a = parse_profile(grid, &args.init_a, "init-a")?;
    let rho0_b = parse_profile(grid, &args.init_b, "init-b")?;
    let mut state = RdState::new(
        rho0_a,
        rho0_b,
        args.d_a,
        args.d_b,
        args.kappa_fw,
        args.kappa_bw,
    )?;
    let times = record_grid(args.t_end, args.records);
    let mut csv = field_csv_header(grid, &["rho_a", "rho_b", "w_re"], &["w_tr_a", "w_tr_b"]);
    let mut t = 0.0f64;
    for &target in &times {
        while t < target - 1e-12 {
            let dt = args.dt.min(target - t);
            state = rd_step(&state, dt)?;
            t += dt;
        }
        let (rho_a, rho_b) = state.densities()?;
        csv.push_str(&format!("{target}"));
        push_scalar(&mut csv, &rho_a);
        push_scalar(&mut csv, &rho_b);
        push_scalar(&mut csv, &state.w_re);
        push_face(&mut csv, &state.w_tr_a);
        push_face(&mut csv, &state.w_tr_b);
        csv.push('\n');
    }
    write_file(&args.out, &csv)?;
    Ok(envelope(
        "rd",
        None,
        None,
        GridMeta {
            dim: grid.dim(),
            n: grid.n(),
            eps: grid.eps(),
            sites: grid.sites(),
            out: args.out.display().to_string(),
        },
    ))
}

/// Runs a parsed command, returning the envelope text printed to stdout.
pub fn run(cli: &Cli) -> Result<String, CliError> {
    init_threads();
    match &cli.command {
        Command::Simulate(args) => run_simulate(args),
        Command::Limit(args) => run_limit(args),
        Command::Ldp(args) => run_ldp(args),
        Command::Verify(args) => run_verify(args),
        Command::Lattice(args) => run_lattice(args),
        Command::Rd(args) => run_rd(args),
    }
}

/// Entry point for the binary: parse, run, map errors to exit codes.
pub fn main_entry() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // clap exits 0 for --help/--version and 2 for usage errors.
            e.exit();
        }
    };
    match run(&cli) {
        Ok(stdout) => {
            println!("{stdout}");
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
