use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Uniform grid `t_k = kT/N`, `k = 0..=N`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    horizon: f64,
    steps: usize,
}

impl TimeGrid {
    pub fn new(horizon: f64, steps: usize) -> Result<Self> {
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::config("grid.horizon", "must be finite and positive"));
        }
        if steps == 0 {
            return Err(Error::config("grid.steps", "must be at least 1"));
        }
        Ok(TimeGrid { horizon, steps })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    /// Grid point `t_k`; the last point is exactly the horizon.
    pub fn point(&self, k: usize) -> f64 {
        if k >= self.steps {
            self.horizon
        } else {
            self.horizon * k as f64 / self.steps as f64
        }
    }

    pub fn points(&self) -> Vec<f64> {
        (0..=self.steps).map(|k| self.point(k)).collect()
    }

    /// Index of the grid point within `tol` of `t`, if any.
    pub fn index_of(&self, t: f64, tol: f64) -> Option<usize> {
        let k = libm::round(t / self.dt());
        if k < 0.0 || k > self.steps as f64 {
            return None;
        }
        let k = k as usize;
        ((self.point(k) - t).abs() <= tol).then_some(k)
    }
}

/// Named process values over `paths × (N+1)` grid points, row-major by path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathBundle {
    pub grid: TimeGrid,
    pub paths: usize,
    processes: BTreeMap<String, Vec<f64>>,
}

impl PathBundle {
    pub fn new(grid: TimeGrid, paths: usize) -> Self {
        PathBundle {
            grid,
            paths,
            processes: BTreeMap::new(),
        }
    }

    fn width(&self) -> usize {
        self.grid.steps() + 1
    }

    pub fn insert(&mut self, name: &str, values: Vec<f64>) -> Result<()> {
        let expected = self.paths * self.width();
        if values.len() != expected {
            return Err(Error::GridMismatch {
                expected,
                got: values.len(),
            });
        }
        self.processes.insert(name.into(), values);
        Ok(())
    }

    /// Adds or replaces a single path of a process, allocating the matrix on first use.
    pub fn set_path(&mut self, name: &str, path: usize, values: &[f64]) -> Result<()> {
        let width = self.width();
        if values.len() != width {
            return Err(Error::GridMismatch {
                expected: width,
                got: values.len(),
            });
        }
        let total = self.paths * width;
        let matrix = self
            .processes
            .entry(name.into())
            .or_insert_with(|| vec![0.0; total]);
        matrix[path * width..(path + 1) * width].copy_from_slice(values);
        Ok(())
    }

    pub fn path(&self, name: &str, path: usize) -> Option<&[f64]> {
        let width = self.width();
        self.processes
            .get(name)
            .map(|m| &m[path * width..(path + 1) * width])
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.processes.keys().map(String::as_str)
    }

    pub fn increments(&self, name: &str, path: usize) -> Option<Vec<f64>> {
        self.path(name, path)
            .map(|v| v.windows(2).map(|w| w[1] - w[0]).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_endpoints() {
        let g = TimeGrid::new(1.0, 3).unwrap();
        assert_eq!(g.point(0), 0.0);
        assert_eq!(g.point(3), 1.0);
        let p = g.points();
        assert!(p.windows(2).all(|w| w[1] > w[0]));
        assert_eq!(g.index_of(1.0 / 3.0, 1e-12), Some(1));
        assert_eq!(g.index_of(0.5, 1e-9), None);
        assert!(TimeGrid::new(0.0, 3).is_err());
        assert!(TimeGrid::new(1.0, 0).is_err());
    }

    #[test]
    fn bundle_increments_telescope() {
        let g = TimeGrid::new(1.0, 4).unwrap();
        let mut b = PathBundle::new(g, 2);
        b.set_path("x", 1, &[1.0, 1.5, 0.5, 0.75, 2.0]).unwrap();
        let inc = b.increments("x", 1).unwrap();
        let sum: f64 = inc.iter().sum();
        assert_eq!(sum, 1.0);
        assert_eq!(b.path("x", 0).unwrap(), &[0.0; 5]);
        assert!(b.insert("y", vec![0.0; 3]).is_err());
    }
}
