//! Particle swarm optimization over box-bounded real positions.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PsoConfig {
    pub n_particles: usize,
    pub n_generations: usize,
    /// Inertia.
    pub w: f64,
    /// Cognitive coefficient.
    pub c_p: f64,
    /// Social coefficient.
    pub c_g: f64,
    /// `(lo, hi)` per dimension; also the re-draw interval.
    pub bounds: Vec<(f64, f64)>,
    pub seed: u64,
    /// Multiply `c_p` and `c_g` by fresh uniform(0,1) draws per coordinate.
    #[serde(default)]
    pub stochastic: bool,
}

impl PsoConfig {
    pub fn new(bounds: Vec<(f64, f64)>) -> Self {
        PsoConfig {
            n_particles: 3,
            n_generations: 50,
            w: 0.729,
            c_p: 1.49445,
            c_g: 1.49445,
            bounds,
            seed: 0,
            stochastic: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_particles == 0 {
            return Err(Error::invalid("n_particles", "must be >= 1"));
        }
        if self.bounds.is_empty() {
            return Err(Error::invalid("bounds", "need at least one dimension"));
        }
        for (i, &(lo, hi)) in self.bounds.iter().enumerate() {
            if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
                return Err(Error::invalid("bounds", format!("dimension {i}: need finite lo < hi, got ({lo}, {hi})")));
            }
        }
        for (name, v) in [("w", self.w), ("c_p", self.c_p), ("c_g", self.c_g)] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::invalid(name, "must be finite and >= 0"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Particle {
    pub position: Vec<f64>,
    pub velocity: Vec<f64>,
    pub best_position: Vec<f64>,
    pub best_fitness: f64,
    /// Fitness at the current position.
    pub fitness: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Swarm {
    pub particles: Vec<Particle>,
    pub best_position: Vec<f64>,
    pub best_fitness: f64,
    rng: ChaCha8Rng,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub particle: usize,
    pub fitness: f64,
    pub position: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationLog {
    pub generation: usize,
    pub evaluations: Vec<Evaluation>,
    /// Swarm best after this generation.
    pub best_fitness: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PsoResult {
    pub best_position: Vec<f64>,
    pub best_fitness: f64,
    /// Evaluation of the random starting swarm.
    pub initial: GenerationLog,
    /// One entry per generation.
    pub history: Vec<GenerationLog>,
}

fn evaluate<F>(objective: &mut F, x: &[f64], particle: usize) -> Result<f64>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    let f = objective(x)?;
    if f.is_nan() {
        log::warn!("objective returned NaN for particle {particle} at {x:?}; treating as +inf");
        Ok(f64::INFINITY)
    } else {
        Ok(f)
    }
}

impl Swarm {
    /// Positions uniform in the bounds, velocities uniform in
    /// `±(hi − lo)/10`, then one objective evaluation per particle.
    pub fn init<F>(config: &PsoConfig, objective: &mut F) -> Result<(Swarm, GenerationLog)>
    where
        F: FnMut(&[f64]) -> Result<f64>,
    {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut particles = Vec::with_capacity(config.n_particles);
        for _ in 0..config.n_particles {
            let position: Vec<f64> = config.bounds.iter().map(|&(lo, hi)| rng.random_range(lo..=hi)).collect();
            let velocity: Vec<f64> = config
                .bounds
                .iter()
                .map(|&(lo, hi)| {
                    let half = 0.1 * (hi - lo);
                    rng.random_range(-half..=half)
                })
                .collect();
            particles.push(Particle {
                best_position: position.clone(),
                position,
                velocity,
                best_fitness: f64::INFINITY,
                fitness: f64::INFINITY,
            });
        }
        let mut swarm = Swarm {
            best_position: particles[0].position.clone(),
            best_fitness: f64::INFINITY,
            particles,
            rng,
        };
        let log = swarm.evaluate_all(objective, 0)?;
        Ok((swarm, log))
    }

    fn evaluate_all<F>(&mut self, objective: &mut F, generation: usize) -> Result<GenerationLog>
    where
        F: FnMut(&[f64]) -> Result<f64>,
    {
        let mut evaluations = Vec::with_capacity(self.particles.len());
        for (i, p) in self.particles.iter_mut().enumerate() {
            let f = evaluate(objective, &p.position, i)?;
            p.fitness = f;
            if f < p.best_fitness {
                p.best_fitness = f;
                p.best_position.clone_from(&p.position);
            }
            // strict improvement keeps the earliest particle on ties
            if f < self.best_fitness {
                self.best_fitness = f;
                self.best_position.clone_from(&p.position);
            }
            evaluations.push(Evaluation {
                particle: i,
                fitness: f,
                position: p.position.clone(),
            });
        }
        Ok(GenerationLog {
            generation,
            evaluations,
            best_fitness: self.best_fitness,
        })
    }
}

/// Moves every particle once and evaluates the new positions.
///
/// `v ← w v + c_p (x_p − x) + c_g (x_g − x)`, then `x ← x + v`. A coordinate
/// landing outside its bounds is replaced by a uniform draw from them.
pub fn pso_step<F>(swarm: &mut Swarm, objective: &mut F, config: &PsoConfig, generation: usize) -> Result<GenerationLog>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    let xg = swarm.best_position.clone();
    for p in &mut swarm.particles {
        for d in 0..p.position.len() {
            let (rp, rg) = if config.stochastic {
                (swarm.rng.random::<f64>(), swarm.rng.random::<f64>())
            } else {
                (1.0, 1.0)
            };
            let x = p.position[d];
            let v = config.w * p.velocity[d]
                + config.c_p * rp * (p.best_position[d] - x)
                + config.c_g * rg * (xg[d] - x);
            p.velocity[d] = v;
            let moved = x + v;
            let (lo, hi) = config.bounds[d];
            p.position[d] = if (lo..=hi).contains(&moved) {
                moved
            } else {
                swarm.rng.random_range(lo..=hi)
            };
        }
    }
    swarm.evaluate_all(objective, generation)
}

pub fn pso_optimize<F>(mut objective: F, config: &PsoConfig) -> Result<PsoResult>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    let (mut swarm, initial) = Swarm::init(config, &mut objective)?;
    let mut history = Vec::with_capacity(config.n_generations);
    for g in 1..=config.n_generations {
        let log = pso_step(&mut swarm, &mut objective, config, g)?;
        log::debug!("generation {g}: best {:.4e}", log.best_fitness);
        history.push(log);
    }
    Ok(PsoResult {
        best_position: swarm.best_position,
        best_fitness: swarm.best_fitness,
        initial,
        history,
    })
}

/// Rounds each coordinate to the nearest integer, at least 1.
pub fn round_position(x: &[f64]) -> Vec<usize> {
    x.iter().map(|v| v.round().max(1.0) as usize).collect()
}

/// `generation,particle,fitness,best_fitness,x_1,...,x_D`
pub fn write_history_csv(path: &Path, result: &PsoResult) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    let dims = result.best_position.len();
    write!(w, "generation,particle,fitness,best_fitness")?;
    for i in 1..=dims {
        write!(w, ",x_{i}")?;
    }
    writeln!(w)?;
    for g in std::iter::once(&result.initial).chain(&result.history) {
        for e in &g.evaluations {
            write!(w, "{},{},{:?},{:?}", g.generation, e.particle, e.fitness, g.best_fitness)?;
            for x in &e.position {
                write!(w, ",{x:?}")?;
            }
            writeln!(w)?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sphere(x: &[f64]) -> Result<f64> {
        Ok(x.iter().map(|v| v * v).sum())
    }

    #[test]
    fn particle_at_best_stays_put() {
        let cfg = PsoConfig {
            n_particles: 1,
            ..PsoConfig::new(vec![(-1.0, 1.0); 2])
        };
        let (mut swarm, _) = Swarm::init(&cfg, &mut sphere).unwrap();
        swarm.particles[0].velocity = vec![0.0; 2];
        let before = swarm.particles[0].position.clone();
        pso_step(&mut swarm, &mut sphere, &cfg, 1).unwrap();
        assert_eq!(swarm.particles[0].position, before);
    }

    #[test]
    fn social_only_points_at_global_best() {
        let cfg = PsoConfig {
            n_particles: 2,
            w: 0.0,
            c_p: 0.0,
            c_g: 0.5,
            ..PsoConfig::new(vec![(-10.0, 10.0); 2])
        };
        let (mut swarm, _) = Swarm::init(&cfg, &mut sphere).unwrap();
        let g = swarm.best_position.clone();
        let x: Vec<Vec<f64>> = swarm.particles.iter().map(|p| p.position.clone()).collect();
        pso_step(&mut swarm, &mut sphere, &cfg, 1).unwrap();
        for (p, x0) in swarm.particles.iter().zip(&x) {
            for d in 0..2 {
                assert_eq!(p.velocity[d], 0.5 * (g[d] - x0[d]));
            }
        }
    }

    #[test]
    fn update_matches_hand_evaluation() {
        let cfg = PsoConfig::new(vec![(-100.0, 100.0); 2]);
        let (mut swarm, _) = Swarm::init(&cfg, &mut sphere).unwrap();
        let before = swarm.clone();
        pso_step(&mut swarm, &mut sphere, &cfg, 1).unwrap();
        for (new, old) in swarm.particles.iter().zip(&before.particles) {
            for d in 0..2 {
                let v = 0.729 * old.velocity[d]
                    + 1.49445 * (old.best_position[d] - old.position[d])
                    + 1.49445 * (before.best_position[d] - old.position[d]);
                assert!((new.velocity[d] - v).abs() < 1e-12);
                assert!((new.position[d] - (old.position[d] + v)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn out_of_bounds_coordinates_are_redrawn() {
        let cfg = PsoConfig {
            w: 50.0,
            ..PsoConfig::new(vec![(1.0, 2.0); 3])
        };
        let r = pso_optimize(sphere, &cfg).unwrap();
        for g in &r.history {
            for e in &g.evaluations {
                assert!(e.position.iter().all(|&x| (1.0..=2.0).contains(&x)));
            }
        }
    }

    #[test]
    fn nan_counts_as_infinite() {
        let cfg = PsoConfig::new(vec![(0.0, 1.0)]);
        let r = pso_optimize(|x: &[f64]| Ok(if x[0] < 0.5 { f64::NAN } else { x[0] }), &cfg).unwrap();
        assert!(r.best_fitness >= 0.5);
    }

    #[test]
    fn objective_errors_propagate() {
        let cfg = PsoConfig::new(vec![(0.0, 1.0)]);
        assert!(pso_optimize(|_: &[f64]| Err(Error::Solve("boom".into())), &cfg).is_err());
    }

    #[test]
    fn constant_objective() {
        let cfg = PsoConfig::new(vec![(0.0, 1.0); 2]);
        let r = pso_optimize(|_: &[f64]| Ok(2.5), &cfg).unwrap();
        assert_eq!(r.best_fitness, 2.5);
        assert_eq!(r.history.len(), 50);
    }

    #[test]
    fn invalid_config() {
        assert!(PsoConfig::new(vec![(1.0, 1.0)]).validate().is_err());
        assert!(PsoConfig { n_particles: 0, ..PsoConfig::new(vec![(0.0, 1.0)]) }.validate().is_err());
        assert!(PsoConfig { c_g: -1.0, ..PsoConfig::new(vec![(0.0, 1.0)]) }.validate().is_err());
    }

    #[test]
    fn history_csv_layout() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pso.csv");
        let cfg = PsoConfig {
            n_generations: 2,
            ..PsoConfig::new(vec![(0.0, 1.0); 2])
        };
        let r = pso_optimize(sphere, &cfg).unwrap();
        write_history_csv(&path, &r).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "generation,particle,fitness,best_fitness,x_1,x_2");
        assert_eq!(lines.len(), 1 + 3 * 3);
    }

    #[test]
    fn rounding() {
        assert_eq!(round_position(&[0.2, 3.5, 7.49]), vec![1, 4, 7]);
    }
}
