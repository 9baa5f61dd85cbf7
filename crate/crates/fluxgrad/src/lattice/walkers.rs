//! Continuous-time independent random walkers with signed face-flux
//! counters.
//!
//! Each of the `V` particles jumps to a neighbouring site at rate
//! `D / eps^2` per direction. A jump from `x` to `x + eps 1_l` increments the
//! counter of the face midpoint between them; the reverse jump decrements
//! it. Densities are counts per `V eps^d`, flux densities counts per
//! `V eps^(d-1)`, so the discrete continuity identity
//! `rho_t = rho_0 - div w_t` holds exactly at every sample time.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{FaceField, Grid, LatticeError, ScalarField};
use crate::numerics::derive_stream_seed;

/// Sampled walker ensemble: one density and one integrated-flux field per
/// record time.
#[derive(Debug, Clone)]
pub struct WalkerRun {
    pub times: Vec<f64>,
    pub densities: Vec<ScalarField>,
    pub fluxes: Vec<FaceField>,
    /// Total number of particles.
    pub volume: u64,
}

struct Accumulator {
    occupancy: Vec<i64>,
    crossings: Vec<i64>,
    events: u64,
}

impl Accumulator {
    fn new(records: usize, sites: usize, faces: usize) -> Self {
        Accumulator {
            occupancy: vec![0; records * sites],
            crossings: vec![0; records * faces],
            events: 0,
        }
    }

    fn merge(mut self, other: Accumulator) -> Accumulator {
        for (a, b) in self.occupancy.iter_mut().zip(&other.occupancy) {
            *a += b;
        }
        for (a, b) in self.crossings.iter_mut().zip(&other.crossings) {
            *a += b;
        }
        self.events += other.events;
        self
    }
}

/// Simulates independent walkers started from `initial_counts` particles per
/// site. Per-particle RNG streams are derived from `(seed, particle index)`,
/// and all counters are integers, so results are independent of thread
/// scheduling.
pub fn simulate_walkers(
    grid: Grid,
    initial_counts: &[u64],
    diffusivity: f64,
    record_grid: &[f64],
    seed: u64,
    event_cap: u64,
) -> Result<WalkerRun, LatticeError> {
    if initial_counts.len() != grid.sites() {
        return Err(LatticeError::GridMismatch);
    }
    if record_grid.is_empty() || record_grid.windows(2).any(|w| w[0] > w[1]) {
        return Err(LatticeError::GridMismatch);
    }
    let volume: u64 = initial_counts.iter().sum();
    let t_end = *record_grid.last().unwrap();
    let jump_rate = 2.0 * grid.dim() as f64 * diffusivity / (grid.eps() * grid.eps());
    let expected_events = jump_rate * t_end * volume as f64;
    if expected_events > event_cap as f64 {
        return Err(LatticeError::ExplosionGuard { cap: event_cap });
    }
    // Generous per-particle bound; a healthy run never reaches it.
    let per_particle_cap = (20.0 * jump_rate * t_end + 1000.0) as u64;

    // Particle start sites in deterministic order.
    let starts: Vec<usize> = initial_counts
        .iter()
        .enumerate()
        .flat_map(|(site, &c)| std::iter::repeat(site).take(c as usize))
        .collect();

    let records = record_grid.len();
    let sites = grid.sites();
    let faces = grid.faces();
    let dim = grid.dim();

    let acc = starts
        .par_iter()
        .enumerate()
        .fold(
            || Ok(Accumulator::new(records, sites, faces)),
            |acc: Result<Accumulator, LatticeError>, (index, &start)| {
                let mut acc = acc?;
                let mut rng = ChaCha8Rng::seed_from_u64(derive_stream_seed(seed, index as u64));
                let mut site = start;
                let mut t = 0.0f64;
                let mut next_record = 0usize;
                let mut events = 0u64;
                loop {
                    let u: f64 = rng.gen();
                    let t_next = t - (1.0 - u).ln() / jump_rate;
                    while next_record < records && record_grid[next_record] < t_next {
                        acc.occupancy[next_record * sites + site] += 1;
                        next_record += 1;
                    }
                    if next_record >= records {
                        break;
                    }
                    // Jump: uniform among 2 dim directions.
                    let direction = rng.gen_range(0..2 * dim);
                    let axis = direction / 2;
                    if direction % 2 == 0 {
                        // Positive crossing through this site's up-face.
                        acc.crossings[next_record * faces + site * dim + axis] += 1;
                        site = grid.neighbor_up(site, axis);
                    } else {
                        let down = grid.neighbor_down(site, axis);
                        acc.crossings[next_record * faces + down * dim + axis] -= 1;
                        site = down;
                    }
                    t = t_next;
                    events += 1;
                    if events > per_particle_cap {
                        return Err(LatticeError::ExplosionGuard { cap: event_cap });
                    }
                }
                acc.events += events;
                Ok(acc)
            },
        )
        .reduce(
            || Ok(Accumulator::new(records, sites, faces)),
            |a, b| Ok(a?.merge(b?)),
        )?;
    if acc.events > event_cap {
        return Err(LatticeError::ExplosionGuard { cap: event_cap });
    }

    // Crossings were binned between consecutive records; integrate to
    // cumulative fluxes and scale to densities.
    let density_scale = 1.0 / (volume as f64 * grid.cell_volume());
    let flux_scale = grid.eps() / (volume as f64 * grid.cell_volume());
    let mut densities = Vec::with_capacity(records);
    let mut fluxes = Vec::with_capacity(records);
    let mut cumulative = vec![0i64; faces];
    for k in 0..records {
        for (c, delta) in cumulative
            .iter_mut()
            .zip(&acc.crossings[k * faces..(k + 1) * faces])
        {
            *c += delta;
        }
        densities.push(
            ScalarField::from_values(
                grid,
                acc.occupancy[k * sites..(k + 1) * sites]
                    .iter()
                    .map(|&c| c as f64 * density_scale)
                    .collect(),
            )
            .expect("matching grid"),
        );
        fluxes.push(
            FaceField::from_values(
                grid,
                cumulative.iter().map(|&c| c as f64 * flux_scale).collect(),
            )
            .expect("matching grid"),
        );
    }
    Ok(WalkerRun {
        times: record_grid.to_vec(),
        densities,
        fluxes,
        volume,
    })
}
