use crate::error::{invalid, Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    #[default]
    Euclidean,
    /// Max-coordinate distance.
    Chebyshev,
}

/// Points in `dim`-dimensional space, stored row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Locations {
    dim: usize,
    coords: Vec<f64>,
}

impl Locations {
    pub fn new(dim: usize, coords: Vec<f64>) -> Result<Self> {
        if dim == 0 || !coords.len().is_multiple_of(dim) {
            return Err(Error::ShapeMismatch(format!(
                "{} coordinates do not split into points of dimension {dim}",
                coords.len()
            )));
        }
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(invalid("non-finite coordinate"));
        }
        Ok(Locations { dim, coords })
    }

    /// `0, spacing, 2 spacing, ...` on a line.
    pub fn line(n: usize, spacing: f64) -> Self {
        Locations {
            dim: 1,
            coords: (0..n).map(|i| i as f64 * spacing).collect(),
        }
    }

    /// `nx * ny` grid points, x varying fastest.
    pub fn grid(nx: usize, ny: usize, spacing: f64) -> Self {
        let mut coords = Vec::with_capacity(2 * nx * ny);
        for y in 0..ny {
            for x in 0..nx {
                coords.push(x as f64 * spacing);
                coords.push(y as f64 * spacing);
            }
        }
        Locations { dim: 2, coords }
    }

    /// The first `n` points of the smallest square (or line) lattice holding
    /// `n` points.
    pub fn lattice(n: usize, dim: usize, spacing: f64) -> Result<Self> {
        match dim {
            1 => Ok(Self::line(n, spacing)),
            2 => {
                let side = (n as f64).sqrt().ceil() as usize;
                let mut g = Self::grid(side, side, spacing);
                g.coords.truncate(2 * n);
                Ok(g)
            }
            _ => Err(invalid(format!("lattice dimension {dim} not in {{1, 2}}"))),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.coords.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn distance(&self, i: usize, j: usize, metric: Metric) -> f64 {
        let (a, b) = (self.point(i), self.point(j));
        match metric {
            Metric::Euclidean => a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt(),
            Metric::Chebyshev => a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max),
        }
    }

    /// Indices sorted by first coordinate, for sweep queries.
    pub(crate) fn sweep_order(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.sort_by(|&a, &b| self.point(a)[0].total_cmp(&self.point(b)[0]).then(a.cmp(&b)));
        idx
    }

    /// Sorted indices within distance `radius` of `i` (including `i`), given
    /// the sweep order and each index's position in it.
    pub(crate) fn ball(&self, i: usize, radius: f64, metric: Metric, order: &[usize], pos: &[usize]) -> Vec<usize> {
        let x0 = self.point(i)[0];
        let mut out = vec![i];
        let k = pos[i];
        for &j in order[k + 1..].iter() {
            if self.point(j)[0] - x0 > radius {
                break;
            }
            if self.distance(i, j, metric) <= radius {
                out.push(j);
            }
        }
        for &j in order[..k].iter().rev() {
            if x0 - self.point(j)[0] > radius {
                break;
            }
            if self.distance(i, j, metric) <= radius {
                out.push(j);
            }
        }
        out.sort_unstable();
        out
    }

    /// Smallest distance between two distinct points, with the pair.
    pub fn min_separation(&self, metric: Metric) -> Option<(usize, usize, f64)> {
        let order = self.sweep_order();
        let mut best: Option<(usize, usize, f64)> = None;
        for (k, &i) in order.iter().enumerate() {
            for &j in &order[k + 1..] {
                let dx = self.point(j)[0] - self.point(i)[0];
                if best.is_some_and(|b| dx >= b.2) {
                    break;
                }
                let d = self.distance(i, j, metric);
                if best.is_none_or(|b| d < b.2) {
                    best = Some((i.min(j), i.max(j), d));
                }
            }
        }
        best
    }

    /// Reads `x[,y...]` rows from CSV text without a header.
    pub fn read_csv<R: std::io::Read>(r: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .from_reader(r);
        let mut dim = 0;
        let mut coords = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            if dim == 0 {
                dim = rec.len();
            } else if rec.len() != dim {
                return Err(Error::Parse("ragged location rows".into()));
            }
            for f in rec.iter() {
                coords.push(
                    f.parse::<f64>()
                        .map_err(|_| Error::Parse(format!("bad coordinate `{f}`")))?,
                );
            }
        }
        Self::new(dim.max(1), coords)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_min_separation() {
        let g = Locations::grid(5, 4, 0.5);
        assert_eq!(g.len(), 20);
        assert_eq!(g.min_separation(Metric::Euclidean).unwrap().2, 0.5);
    }

    #[test]
    fn ball_matches_brute_force() {
        let g = Locations::grid(9, 7, 1.0);
        let order = g.sweep_order();
        let mut pos = vec![0; g.len()];
        for (k, &i) in order.iter().enumerate() {
            pos[i] = k;
        }
        for metric in [Metric::Euclidean, Metric::Chebyshev] {
            for i in [0, 10, 31, 62] {
                let want: Vec<usize> = (0..g.len()).filter(|&j| g.distance(i, j, metric) <= 2.0).collect();
                assert_eq!(g.ball(i, 2.0, metric, &order, &pos), want);
            }
        }
    }

    #[test]
    fn lattice_truncates() {
        let l = Locations::lattice(10, 2, 1.0).unwrap();
        assert_eq!(l.len(), 10);
        assert_eq!(l.point(9), &[1.0, 2.0]);
    }
}
