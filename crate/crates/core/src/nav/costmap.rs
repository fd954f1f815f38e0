//! Obstacle distance field and inflation over a ternary grid.

use std::f64::consts::FRAC_1_SQRT_2;

use crate::geom::{GridGeometry, Point2, Transform2D};
use crate::mapping::{Cell, TernaryGrid};

const FAR: f64 = 1e20;

/// One-dimensional squared distance transform of a sampled function
/// (lower envelope of parabolas).
fn edt_1d(f: &[f64], out: &mut [f64], v: &mut [usize], z: &mut [f64]) {
    let n = f.len();
    if n == 0 {
        return;
    }
    let mut k = 0usize;
    v[0] = 0;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for q in 1..n {
        let mut s;
        loop {
            let p = v[k];
            s = ((f[q] + (q * q) as f64) - (f[p] + (p * p) as f64)) / (2.0 * q as f64 - 2.0 * p as f64);
            // z[0] is -inf, so this never underflows k
            if s <= z[k] {
                k -= 1;
            } else {
                break;
            }
        }
        k += 1;
        v[k] = q;
        z[k] = s;
        z[k + 1] = f64::INFINITY;
    }
    k = 0;
    for (q, o) in out.iter_mut().enumerate() {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let d = q as f64 - v[k] as f64;
        *o = d * d + f[v[k]];
    }
}

/// Exact Euclidean distance (in cells, center to center) from every cell to
/// the nearest cell where `seed` is true. Cells are `FAR`-distant when there is no seed.
pub fn distance_transform(width: usize, height: usize, seed: &[bool]) -> Vec<f64> {
    assert_eq!(seed.len(), width * height);
    let mut grid: Vec<f64> = seed.iter().map(|&s| if s { 0.0 } else { FAR }).collect();
    let n = width.max(height);
    let mut f = vec![0.0; n];
    let mut out = vec![0.0; n];
    let mut v = vec![0usize; n];
    let mut z = vec![0.0; n + 1];
    for c in 0..width {
        for r in 0..height {
            f[r] = grid[r * width + c];
        }
        edt_1d(&f[..height], &mut out[..height], &mut v, &mut z);
        for r in 0..height {
            grid[r * width + c] = out[r];
        }
    }
    for r in 0..height {
        let row = &mut grid[r * width..(r + 1) * width];
        f[..width].copy_from_slice(row);
        edt_1d(&f[..width], &mut out[..width], &mut v, &mut z);
        row.copy_from_slice(&out[..width]);
    }
    grid.into_iter()
        .map(|d2| if d2 >= FAR / 2.0 { f64::INFINITY } else { d2.sqrt() })
        .collect()
}

/// Planning view of a ternary grid: per-cell clearance to the nearest
/// occupied cell surface, in meters. Clearance is a lower bound (center
/// distance minus half a cell diagonal).
#[derive(Debug, Clone)]
pub struct CostMap {
    pub geometry: GridGeometry,
    pub cells: Vec<Cell>,
    clearance: Vec<f64>,
}

impl CostMap {
    pub fn new(grid: &TernaryGrid) -> Self {
        let g = grid.geometry;
        let seed: Vec<bool> = grid.cells.iter().map(|&c| c == Cell::Occupied).collect();
        let res = g.resolution;
        let clearance = distance_transform(g.width, g.height, &seed)
            .into_iter()
            .map(|d| if d.is_finite() { ((d - FRAC_1_SQRT_2) * res).max(0.0) } else { f64::INFINITY })
            .collect();
        Self {
            geometry: g,
            cells: grid.cells.clone(),
            clearance,
        }
    }

    /// A copy grown with unknown cells so every point lies at least `margin`
    /// inside it, or `None` if they already do.
    pub fn covering(&self, points: &[Point2], margin: f64) -> Option<CostMap> {
        let g = self.geometry;
        let pad = (margin / g.resolution).ceil() as i64;
        let (mut c0, mut r0, mut c1, mut r1) = (0i64, 0i64, g.width as i64, g.height as i64);
        for &p in points {
            let (c, r) = g.cell_of(p);
            c0 = c0.min(c - pad);
            r0 = r0.min(r - pad);
            c1 = c1.max(c + pad + 1);
            r1 = r1.max(r + pad + 1);
        }
        if (c0, r0, c1, r1) == (0, 0, g.width as i64, g.height as i64) {
            return None;
        }
        let (w, h) = ((c1 - c0) as usize, (r1 - r0) as usize);
        let origin = g
            .origin
            .compose(&Transform2D::translation(c0 as f64 * g.resolution, r0 as f64 * g.resolution));
        let mut grid = TernaryGrid::filled(GridGeometry::new(w, h, g.resolution, origin), Cell::Unknown);
        for r in 0..g.height {
            let dst = (r as i64 - r0) as usize * w + (-c0) as usize;
            grid.cells[dst..dst + g.width].copy_from_slice(&self.cells[r * g.width..(r + 1) * g.width]);
        }
        Some(CostMap::new(&grid))
    }

    /// A copy with the cells under `points` marked occupied. Points outside
    /// the map are ignored.
    pub fn with_obstacles(&self, points: &[Point2]) -> CostMap {
        let g = self.geometry;
        let mut grid = TernaryGrid {
            geometry: g,
            cells: self.cells.clone(),
        };
        for &p in points {
            let (c, r) = g.cell_of(p);
            if g.contains(c, r) {
                grid.cells[r as usize * g.width + c as usize] = Cell::Occupied;
            }
        }
        CostMap::new(&grid)
    }

    pub fn width(&self) -> usize {
        self.geometry.width
    }

    pub fn height(&self) -> usize {
        self.geometry.height
    }

    pub fn cell(&self, col: usize, row: usize) -> Cell {
        self.cells[row * self.geometry.width + col]
    }

    pub fn clearance_at_cell(&self, col: i64, row: i64) -> f64 {
        if self.geometry.contains(col, row) {
            self.clearance[row as usize * self.geometry.width + col as usize]
        } else {
            0.0
        }
    }

    /// Clearance at a point; zero outside the map.
    pub fn clearance(&self, p: Point2) -> f64 {
        let (c, r) = self.geometry.cell_of(p);
        self.clearance_at_cell(c, r)
    }

    /// Unit vector (in the parent frame) pointing away from the nearest obstacle.
    pub fn repulsion_direction(&self, p: Point2) -> Option<Point2> {
        let (c, r) = self.geometry.cell_of(p);
        let d = |dc: i64, dr: i64| {
            let v = self.clearance_at_cell(c + dc, r + dr);
            if v.is_finite() { v } else { 1e3 }
        };
        let gx = d(1, 0) - d(-1, 0);
        let gy = d(0, 1) - d(0, -1);
        let n = gx.hypot(gy);
        if n < 1e-12 {
            return None;
        }
        let rot = self.geometry.origin.rotation;
        let (s, cth) = rot.sin_cos();
        let (lx, ly) = (gx / n, gy / n);
        Some(Point2::new(cth * lx - s * ly, s * lx + cth * ly))
    }
}
