//! Moment estimator of the per-edge transmission probability.
//!
//! The moment is `Psi(q) = sum_i (X_i - P_q(X_i = 1))`, with the infection
//! probabilities simulated under common random numbers so that the curve is
//! non-increasing in `q` for every replication set.

use crate::error::{invalid, Error, Result};
use crate::models::diffusion::run_key;
use crate::models::{sir_with_seeds, GraphTopology};
use crate::rng::{derive_seed, stream};
use crate::stats::Moments;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Star graph with the center seeded and one period: `m / k`.
pub fn q_hat_star(m: usize, k: usize) -> Result<f64> {
    if k == 0 {
        return Err(invalid("the star needs at least one leaf"));
    }
    if m > k {
        return Err(invalid("infected leaves cannot exceed the leaf count"));
    }
    Ok(m as f64 / k as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub q: f64,
    pub psi: f64,
    pub se: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Boundary {
    /// `Psi < 0` on the whole grid; the root lies below it.
    Lower,
    /// `Psi > 0` on the whole grid.
    Upper,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QHat {
    pub q_hat: f64,
    /// Set when the grid holds no sign change and `q_hat` is a grid end.
    pub boundary: Option<Boundary>,
    pub curve: Vec<CurvePoint>,
    pub replications: usize,
}

fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.len() < 9 {
        return Err(invalid("the q grid needs at least 9 points"));
    }
    if grid.iter().any(|&q| !(q > 0.0 && q < 1.0)) || grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(invalid("the q grid must be strictly increasing inside (0, 1)"));
    }
    Ok(())
}

/// Root of the simulated moment curve by linear interpolation at the first
/// sign change; a zero plateau resolves to its midpoint.
pub fn q_hat_mc(
    graph: &GraphTopology,
    seeds: &[usize],
    periods: usize,
    outcomes: &[bool],
    grid: &[f64],
    reps: usize,
    seed: u64,
) -> Result<QHat> {
    check_grid(grid)?;
    if outcomes.len() != graph.n() {
        return Err(Error::ShapeMismatch("outcomes must have one entry per node".into()));
    }
    if seeds.iter().any(|&s| s >= graph.n()) {
        return Err(invalid("seed node out of range"));
    }
    if reps < 2 {
        return Err(Error::InsufficientReplications { needed: 2, got: reps });
    }
    let observed = outcomes.iter().filter(|&&x| x).count() as f64;
    // counts[r][g]: infected count in replication r at grid point g.
    let counts: Vec<Vec<u32>> = (0..reps)
        .into_par_iter()
        .map(|r| {
            let key = run_key(derive_seed(seed, stream::ESTIMATION, r as u64));
            grid.iter()
                .map(|&q| sir_with_seeds(graph, seeds, q, periods, key).count() as u32)
                .collect()
        })
        .collect();
    let curve: Vec<CurvePoint> = grid
        .iter()
        .enumerate()
        .map(|(g, &q)| {
            let mut m = Moments::default();
            counts.iter().for_each(|c| m.push(f64::from(c[g])));
            CurvePoint {
                q,
                psi: observed - m.mean,
                se: m.se(),
            }
        })
        .collect();
    let (q_hat, boundary) = root(&curve);
    Ok(QHat {
        q_hat,
        boundary,
        curve,
        replications: reps,
    })
}

fn root(curve: &[CurvePoint]) -> (f64, Option<Boundary>) {
    let zeros: Vec<f64> = curve.iter().filter(|c| c.psi == 0.0).map(|c| c.q).collect();
    if let (Some(&lo), Some(&hi)) = (zeros.first(), zeros.last()) {
        return (0.5 * (lo + hi), None);
    }
    for w in curve.windows(2) {
        let (a, b) = (w[0], w[1]);
        if a.psi > 0.0 && b.psi < 0.0 {
            return (a.q + a.psi * (b.q - a.q) / (a.psi - b.psi), None);
        }
    }
    if curve.iter().all(|c| c.psi < 0.0) {
        (curve[0].q, Some(Boundary::Lower))
    } else {
        (curve[curve.len() - 1].q, Some(Boundary::Upper))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn star_closed_form() {
        assert_eq!(q_hat_star(0, 5).unwrap(), 0.0);
        assert_eq!(q_hat_star(5, 5).unwrap(), 1.0);
        assert!((q_hat_star(3, 10).unwrap() - 0.3).abs() < 1e-15);
        assert!(q_hat_star(1, 0).is_err());
    }

    #[test]
    fn zero_outcomes_hit_lower_boundary() {
        let g = GraphTopology::star(10);
        let grid: Vec<f64> = (1..10).map(|k| k as f64 / 10.0).collect();
        let res = q_hat_mc(&g, &[0], 1, &[false; 11], &grid, 50, 1).unwrap();
        assert_eq!(res.boundary, Some(Boundary::Lower));
        assert_eq!(res.q_hat, 0.1);
        assert!(res.curve.iter().all(|c| c.psi < 0.0));
    }

    #[test]
    fn curve_is_non_increasing_under_common_numbers() {
        let g = GraphTopology::erdos_renyi(60, 0.06, 2).unwrap();
        let grid: Vec<f64> = (1..20).map(|k| k as f64 / 20.0).collect();
        let res = q_hat_mc(&g, &[0, 7], 4, &[false; 60], &grid, 40, 3).unwrap();
        assert!(res.curve.windows(2).all(|w| w[1].psi <= w[0].psi));
    }

    #[test]
    fn grid_is_validated() {
        let g = GraphTopology::star(3);
        assert!(q_hat_mc(&g, &[0], 1, &[false; 4], &[0.1, 0.2], 10, 1).is_err());
    }
}
