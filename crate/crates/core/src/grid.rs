//! Discretized torus: grid geometry, fields, differences.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// A square torus discretized into `points_per_side` x `points_per_side` nodes.
///
/// Nodes sit at (i*spacing, j*spacing); periodicity identifies index n with 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TorusGrid {
    pub points_per_side: usize,
    pub physical_side: f64,
    pub spacing: f64,
}

impl TorusGrid {
    pub fn new(points_per_side: usize, physical_side: f64) -> Result<Self> {
        if points_per_side < 8 || !points_per_side.is_power_of_two() {
            return Err(Error::Config(format!(
                "points_per_side must be a power of two >= 8, got {points_per_side}"
            )));
        }
        Ok(Self {
            points_per_side,
            physical_side,
            spacing: physical_side / points_per_side as f64,
        })
    }

    #[inline]
    pub fn n_points(&self) -> usize {
        self.points_per_side * self.points_per_side
    }

    #[inline]
    pub fn index(&self, ix: usize, iy: usize) -> usize {
        iy * self.points_per_side + ix
    }

    #[inline]
    pub fn wrap(&self, i: isize) -> usize {
        i.rem_euclid(self.points_per_side as isize) as usize
    }

    /// Minimal-image displacement of lattice offset `d` in index units.
    #[inline]
    pub fn min_image(&self, d: isize) -> isize {
        let n = self.points_per_side as isize;
        let mut d = d.rem_euclid(n);
        if d > n / 2 {
            d -= n;
        }
        d
    }

    /// Torus metric between nodes, in physical units.
    pub fn distance(&self, a: (usize, usize), b: (usize, usize)) -> f64 {
        let dx = self.min_image(a.0 as isize - b.0 as isize) as f64 * self.spacing;
        let dy = self.min_image(a.1 as isize - b.1 as isize) as f64 * self.spacing;
        (dx * dx + dy * dy).sqrt()
    }
}

/// Minimal-image distance between two points on a torus of the given side.
pub fn torus_distance(side: f64, a: (f64, f64), b: (f64, f64)) -> f64 {
    let wrap = |mut d: f64| {
        d = d.rem_euclid(side);
        if d > 0.5 * side {
            d -= side;
        }
        d
    };
    let dx = wrap(a.0 - b.0);
    let dy = wrap(a.1 - b.1);
    (dx * dx + dy * dy).sqrt()
}

/// A real field on a torus grid, with its seed provenance.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Field {
    pub grid: TorusGrid,
    pub values: Vec<f64>,
    pub seed: u64,
    pub scale_tag: String,
}

impl Field {
    pub fn zero(grid: TorusGrid) -> Self {
        Self {
            grid,
            values: vec![0.0; grid.n_points()],
            seed: 0,
            scale_tag: "zero".into(),
        }
    }

    pub fn constant(grid: TorusGrid, c: f64) -> Self {
        Self {
            grid,
            values: vec![c; grid.n_points()],
            seed: 0,
            scale_tag: "const".into(),
        }
    }

    #[inline]
    pub fn at(&self, ix: usize, iy: usize) -> f64 {
        self.values[self.grid.index(ix, iy)]
    }

    #[inline]
    pub fn at_wrapped(&self, ix: isize, iy: isize) -> f64 {
        let g = &self.grid;
        self.values[g.index(g.wrap(ix), g.wrap(iy))]
    }

    /// Second-order central gradient at a node.
    pub fn grad_central(&self, ix: usize, iy: usize) -> (f64, f64) {
        let h2 = 2.0 * self.grid.spacing;
        let x = ix as isize;
        let y = iy as isize;
        (
            (self.at_wrapped(x + 1, y) - self.at_wrapped(x - 1, y)) / h2,
            (self.at_wrapped(x, y + 1) - self.at_wrapped(x, y - 1)) / h2,
        )
    }

    /// Fourth-order central gradient at a node.
    pub fn grad_fourth(&self, ix: usize, iy: usize) -> (f64, f64) {
        let h = self.grid.spacing;
        let x = ix as isize;
        let y = iy as isize;
        let d = |f2: f64, f1: f64, m1: f64, m2: f64| (-f2 + 8.0 * f1 - 8.0 * m1 + m2) / (12.0 * h);
        (
            d(
                self.at_wrapped(x + 2, y),
                self.at_wrapped(x + 1, y),
                self.at_wrapped(x - 1, y),
                self.at_wrapped(x - 2, y),
            ),
            d(
                self.at_wrapped(x, y + 2),
                self.at_wrapped(x, y + 1),
                self.at_wrapped(x, y - 1),
                self.at_wrapped(x, y - 2),
            ),
        )
    }

    pub fn add_assign(&mut self, other: &Field) {
        assert_eq!(self.values.len(), other.values.len());
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += *b;
        }
    }

    /// Field shifted by a constant (the zero-mode direction used by
    /// the charge decomposition).
    pub fn shifted(&self, c: f64) -> Field {
        let mut out = self.clone();
        for v in &mut out.values {
            *v += c;
        }
        out
    }
}
