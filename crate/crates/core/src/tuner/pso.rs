//! Particle swarm optimisation over a box.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Attempts at redrawing a particle whose objective is not finite.
const RESAMPLE_ATTEMPTS: usize = 10;

/// The `pso.json` format. `upper` defaults to the policy's θ box.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PsoConfig {
    pub n_particles: usize,
    pub n_iterations: usize,
    pub inertia: f64,
    pub cognitive: f64,
    pub social: f64,
    pub upper: Option<Vec<f64>>,
    /// Start one particle at the lower corner and one at the box centre.
    pub seed_special_particles: bool,
    pub seed: u64,
}

impl Default for PsoConfig {
    fn default() -> Self {
        Self {
            n_particles: 20,
            n_iterations: 40,
            inertia: 0.7,
            cognitive: 1.5,
            social: 1.5,
            upper: None,
            seed_special_particles: true,
            seed: 0,
        }
    }
}

impl PsoConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_particles < 2 {
            return Err(Error::Config(format!("n_particles must be at least 2, got {}", self.n_particles)));
        }
        for (name, v) in [("inertia", self.inertia), ("cognitive", self.cognitive), ("social", self.social)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("{name} must be finite and nonnegative, got {v}")));
            }
        }
        if let Some(u) = &self.upper {
            if u.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                return Err(Error::Config("upper bounds must be finite and nonnegative".into()));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationLog {
    pub iteration: usize,
    pub best_cost: f64,
    pub best_position: Vec<f64>,
    pub evaluations: usize,
    pub invalid: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PsoResult {
    pub best_position: Vec<f64>,
    pub best_cost: f64,
    /// Entry 0 covers the initial swarm.
    pub log: Vec<IterationLog>,
    pub evaluations: usize,
}

struct Particle {
    x: Vec<f64>,
    v: Vec<f64>,
    best_x: Vec<f64>,
    best_cost: f64,
    rng: ChaCha8Rng,
}

fn uniform_point(rng: &mut ChaCha8Rng, lower: &[f64], upper: &[f64]) -> Vec<f64> {
    lower.iter().zip(upper).map(|(&l, &u)| if u > l { rng.random_range(l..=u) } else { l }).collect()
}

/// Minimises `objective` over `[lower, upper]`. Particle `k` draws all its
/// randomness from seed `config.seed + k`.
pub fn pso_optimize<O>(objective: O, lower: &[f64], upper: &[f64], config: &PsoConfig) -> Result<PsoResult>
where
    O: Fn(&[f64]) -> f64 + Sync,
{
    config.validate()?;
    if lower.len() != upper.len() || lower.is_empty() {
        return Err(Error::Config("bounds must be nonempty and of equal length".into()));
    }
    if lower.iter().zip(upper).any(|(l, u)| !(l.is_finite() && u.is_finite() && l <= u)) {
        return Err(Error::Config("each lower bound must not exceed its upper bound".into()));
    }
    let mut swarm: Vec<Particle> = (0..config.n_particles)
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(k as u64));
            let x = match k {
                0 if config.seed_special_particles => lower.to_vec(),
                1 if config.seed_special_particles => lower.iter().zip(upper).map(|(l, u)| 0.5 * (l + u)).collect(),
                _ => uniform_point(&mut rng, lower, upper),
            };
            let v = lower.iter().zip(upper).map(|(&l, &u)| 0.1 * (u - l) * rng.random_range(-1.0..=1.0)).collect();
            Particle { best_x: x.clone(), x, v, best_cost: f64::INFINITY, rng }
        })
        .collect();
    let mut evaluations = 0;
    let mut gbest: (Vec<f64>, f64) = (lower.to_vec(), f64::INFINITY);
    let mut log = Vec::with_capacity(config.n_iterations + 1);
    for iteration in 0..=config.n_iterations {
        if iteration > 0 {
            for p in &mut swarm {
                for d in 0..lower.len() {
                    let (r1, r2): (f64, f64) = (p.rng.random(), p.rng.random());
                    p.v[d] = config.inertia * p.v[d]
                        + config.cognitive * r1 * (p.best_x[d] - p.x[d])
                        + config.social * r2 * (gbest.0[d] - p.x[d]);
                    p.x[d] = (p.x[d] + p.v[d]).clamp(lower[d], upper[d]);
                }
            }
        }
        let results: Vec<(f64, usize, usize)> = swarm
            .par_iter_mut()
            .map(|p| {
                let mut cost = objective(&p.x);
                let (mut evals, mut invalid) = (1, 0);
                while !cost.is_finite() && invalid < RESAMPLE_ATTEMPTS {
                    invalid += 1;
                    p.x = uniform_point(&mut p.rng, lower, upper);
                    cost = objective(&p.x);
                    evals += 1;
                }
                (if cost.is_finite() { cost } else { f64::INFINITY }, evals, invalid)
            })
            .collect();
        let mut n_invalid = 0;
        for (p, (cost, evals, invalid)) in swarm.iter_mut().zip(results) {
            evaluations += evals;
            n_invalid += invalid;
            if cost < p.best_cost {
                p.best_cost = cost;
                p.best_x = p.x.clone();
            }
            if cost < gbest.1 {
                gbest = (p.x.clone(), cost);
            }
        }
        log::info!("pso iteration {iteration}: best cost {:.2} at {:?}", gbest.1, gbest.0);
        log.push(IterationLog {
            iteration,
            best_cost: gbest.1,
            best_position: gbest.0.clone(),
            evaluations,
            invalid: n_invalid,
        });
    }
    Ok(PsoResult { best_position: gbest.0, best_cost: gbest.1, log, evaluations })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sphere(x: &[f64]) -> f64 {
        x.iter().map(|v| v * v).sum()
    }

    #[test]
    fn sphere_without_special_particles() {
        let cfg = PsoConfig { n_iterations: 100, seed_special_particles: false, seed: 3, ..Default::default() };
        let r = pso_optimize(sphere, &[0.0; 4], &[1.0; 4], &cfg).unwrap();
        assert!(r.best_position.iter().all(|v| v.abs() < 1e-3), "{:?}", r.best_position);
        assert_eq!(r.log.len(), 101);
    }

    #[test]
    fn constant_objective() {
        let cfg = PsoConfig { n_iterations: 3, ..Default::default() };
        let r = pso_optimize(|_: &[f64]| 42.0, &[0.0; 2], &[1.0; 2], &cfg).unwrap();
        assert!(r.log.iter().all(|l| l.best_cost == 42.0));
    }

    #[test]
    fn non_finite_values_are_resampled() {
        let cfg = PsoConfig { n_iterations: 5, seed_special_particles: false, ..Default::default() };
        let obj = |x: &[f64]| if x[0] > 0.5 { f64::NAN } else { x[0] };
        let r = pso_optimize(obj, &[0.0], &[1.0], &cfg).unwrap();
        assert!(r.best_cost.is_finite() && r.best_position[0] <= 0.5);
        assert!(r.log[0].invalid > 0);
    }

    #[test]
    fn rejects_bad_config() {
        let cfg = PsoConfig { n_particles: 1, ..Default::default() };
        assert!(pso_optimize(sphere, &[0.0], &[1.0], &cfg).is_err());
        assert!(pso_optimize(sphere, &[1.0], &[0.0], &PsoConfig::default()).is_err());
    }
}
