//! Count-based diagnostics on the two spatial axes of an environment.

use mepol_core::env::SpatialView;

/// Written for cells that were never visited, in place of `ln 0`.
pub const EMPTY_LOG_PROB: f64 = -1000.0;

/// Shannon entropy, in nats, of the normalized counts.
pub fn discrete_entropy(counts: &[u64]) -> f64 {
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return 0.0;
    }
    let total = total as f64;
    -counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / total;
            p * p.ln()
        })
        .sum::<f64>()
}

/// Visit counts over a fixed box split into `nx × ny` cells.
#[derive(Debug, Clone, PartialEq)]
pub struct HeatmapGrid {
    pub low: [f64; 2],
    pub high: [f64; 2],
    pub nx: usize,
    pub ny: usize,
    /// Row-major over `(iy, ix)`.
    pub counts: Vec<u64>,
    pub total: u64,
}

impl HeatmapGrid {
    pub fn new(view: &SpatialView, nx: usize, ny: usize) -> Self {
        assert!(nx >= 1 && ny >= 1);
        HeatmapGrid {
            low: view.low,
            high: view.high,
            nx,
            ny,
            counts: vec![0; nx * ny],
            total: 0,
        }
    }

    /// Grid whose cells are `cell` wide; the last cell along an axis may
    /// extend past the box.
    pub fn with_cell(view: &SpatialView, cell: [f64; 2]) -> Self {
        // tolerate rounding in range / cell when the cell divides the box
        let n = |a: usize| ((((view.high[a] - view.low[a]) / cell[a]) - 1e-9).ceil() as usize).max(1);
        let mut grid = Self::new(view, n(0), n(1));
        grid.high = [grid.low[0] + cell[0] * grid.nx as f64, grid.low[1] + cell[1] * grid.ny as f64];
        grid
    }

    pub fn cell_size(&self) -> [f64; 2] {
        [
            (self.high[0] - self.low[0]) / self.nx as f64,
            (self.high[1] - self.low[1]) / self.ny as f64,
        ]
    }

    fn bin(&self, v: f64, axis: usize, n: usize) -> usize {
        let t = (v - self.low[axis]) / (self.high[axis] - self.low[axis]);
        ((t * n as f64).floor().max(0.0) as usize).min(n - 1)
    }

    /// Adds one visit; points outside the box land in the nearest edge cell.
    pub fn add(&mut self, x: f64, y: f64) {
        let ix = self.bin(x, 0, self.nx);
        let iy = self.bin(y, 1, self.ny);
        self.counts[iy * self.nx + ix] += 1;
        self.total += 1;
    }

    pub fn count(&self, ix: usize, iy: usize) -> u64 {
        self.counts[iy * self.nx + ix]
    }

    pub fn center(&self, ix: usize, iy: usize) -> [f64; 2] {
        let c = self.cell_size();
        [self.low[0] + (ix as f64 + 0.5) * c[0], self.low[1] + (iy as f64 + 0.5) * c[1]]
    }

    /// `ln(count / total)`, or [`EMPTY_LOG_PROB`] for empty cells.
    pub fn log_prob(&self, ix: usize, iy: usize) -> f64 {
        let c = self.count(ix, iy);
        if c == 0 || self.total == 0 {
            EMPTY_LOG_PROB
        } else {
            (c as f64 / self.total as f64).ln()
        }
    }

    pub fn entropy(&self) -> f64 {
        discrete_entropy(&self.counts)
    }

    /// Centers of visited cells.
    pub fn visited_centers(&self) -> impl Iterator<Item = [f64; 2]> + '_ {
        (0..self.ny).flat_map(move |iy| {
            (0..self.nx)
                .filter(move |&ix| self.count(ix, iy) > 0)
                .map(move |ix| self.center(ix, iy))
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn unit_view() -> SpatialView {
        SpatialView {
            dims: [0, 1],
            low: [0.0, 0.0],
            high: [1.0, 1.0],
        }
    }

    #[test]
    fn one_cell_has_zero_entropy() {
        assert_eq!(discrete_entropy(&[0, 17, 0, 0]), 0.0);
    }

    #[test]
    fn uniform_counts_give_ln_m() {
        for m in [2usize, 7, 400] {
            assert_relative_eq!(discrete_entropy(&vec![5; m]), (m as f64).ln(), max_relative = 1e-14);
        }
    }

    #[test]
    fn counts_sum_to_points_added() {
        let mut g = HeatmapGrid::new(&unit_view(), 4, 3);
        let pts = [(0.0, 0.0), (1.0, 1.0), (0.5, 0.2), (-3.0, 9.0), (0.99, 0.01)];
        for (x, y) in pts {
            g.add(x, y);
        }
        assert_eq!(g.total, 5);
        assert_eq!(g.counts.iter().sum::<u64>(), 5);
        assert_eq!(g.count(3, 2), 1);
        assert_eq!(g.count(0, 2), 1); // the clamped outlier
        assert_eq!(g.log_prob(1, 1), EMPTY_LOG_PROB);
    }

    #[test]
    fn uniform_lattice_gives_a_flat_grid() {
        let mut g = HeatmapGrid::new(&unit_view(), 10, 10);
        for i in 0..100 {
            for j in 0..100 {
                g.add((i as f64 + 0.5) / 100.0, (j as f64 + 0.5) / 100.0);
            }
        }
        for iy in 0..10 {
            for ix in 0..10 {
                assert_relative_eq!(g.log_prob(ix, iy), (0.01f64).ln(), max_relative = 1e-12);
            }
        }
    }

    #[test]
    fn cell_size_sets_the_grid() {
        let g = HeatmapGrid::with_cell(&unit_view(), [0.25, 0.3]);
        assert_eq!((g.nx, g.ny), (4, 4));
        assert_relative_eq!(g.cell_size()[1], 0.3, max_relative = 1e-12);
        let car = SpatialView {
            dims: [0, 1],
            low: [-1.2, -0.07],
            high: [0.6, 0.07],
        };
        let g = HeatmapGrid::with_cell(&car, [0.09, 0.007]);
        assert_eq!((g.nx, g.ny), (20, 20));
    }
}
