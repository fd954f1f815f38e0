//! Fusion of per-robot occupancy grids into one operational map.
//!
//! Each robot maps in its own odometry frame. Grids are first placed in the
//! reference robot's frame through the declared spawn poses (coarse
//! alignment), the residual translation is then measured by phase
//! correlation of the binarized occupancy rasters, and finally the aligned
//! grids are composed by summing log-odds evidence.

use std::collections::BTreeMap;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::MergeError;
use crate::fft::fft2d_in_place;
use crate::geom::{GridGeometry, Point2, Transform2D};
use crate::mapping::{Cell, OccupancyGrid, TernaryGrid};

/// Fewest occupied cells a raster needs before it can be registered.
pub const MIN_OCCUPIED: usize = 16;

/// Binary raster, row-major, occupied = 1.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl Raster {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0.0; width * height],
        }
    }

    pub fn from_ternary(grid: &TernaryGrid) -> Self {
        Self {
            width: grid.width(),
            height: grid.height(),
            data: grid
                .cells
                .iter()
                .map(|&c| if c == Cell::Occupied { 1.0 } else { 0.0 })
                .collect(),
        }
    }

    pub fn get(&self, col: usize, row: usize) -> f64 {
        self.data[row * self.width + col]
    }

    pub fn set(&mut self, col: usize, row: usize, v: f64) {
        self.data[row * self.width + col] = v;
    }

    pub fn occupied(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0.0).count()
    }

    /// Zero-padded copy of size `width × height` (content at the low corner).
    pub fn padded(&self, width: usize, height: usize) -> Raster {
        let mut out = Raster::zeros(width, height);
        for r in 0..self.height.min(height) {
            for c in 0..self.width.min(width) {
                out.set(c, r, self.get(c, r));
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Registration {
    /// Translation of the moving raster relative to the reference, in cells.
    pub d_col: i64,
    pub d_row: i64,
    /// Peak prominence in `[0, 1]`.
    pub confidence: f64,
    pub peak: f64,
}

/// Normalized cross-power spectrum correlation surface, already inverse
/// transformed. Both rasters must share power-of-two dimensions.
pub fn correlation_surface(reference: &Raster, moving: &Raster) -> Vec<f64> {
    let (w, h) = (reference.width, reference.height);
    let to_complex = |r: &Raster| r.data.iter().map(|&v| Complex64::new(v, 0.0)).collect::<Vec<_>>();
    let mut f = to_complex(reference);
    let mut g = to_complex(moving);
    fft2d_in_place(&mut f, w, h, false);
    fft2d_in_place(&mut g, w, h, false);
    let mut cross: Vec<Complex64> = f
        .iter()
        .zip(&g)
        .map(|(a, b)| {
            let p = a * b.conj();
            let m = p.norm();
            if m > 1e-12 {
                p / m
            } else {
                Complex64::new(0.0, 0.0)
            }
        })
        .collect();
    fft2d_in_place(&mut cross, w, h, true);
    cross.into_iter().map(|c| c.re).collect()
}

fn signed_wrap(i: usize, n: usize) -> i64 {
    if i > n / 2 {
        i as i64 - n as i64
    } else {
        i as i64
    }
}

/// Estimate the integer translation of `moving` relative to `reference`.
///
/// Both rasters are zero-padded to the smallest common power-of-two size.
pub fn phase_correlate(reference: &Raster, moving: &Raster) -> Result<Registration, MergeError> {
    for r in [reference, moving] {
        let occupied = r.occupied();
        if occupied < MIN_OCCUPIED {
            return Err(MergeError::DegenerateInput {
                occupied,
                required: MIN_OCCUPIED,
            });
        }
    }
    let w = reference.width.max(moving.width).next_power_of_two();
    let h = reference.height.max(moving.height).next_power_of_two();
    let a = reference.padded(w, h);
    let b = moving.padded(w, h);
    let surface = correlation_surface(&a, &b);

    // first maximum in row-major order
    let mut best = 0usize;
    for (i, &v) in surface.iter().enumerate() {
        if v > surface[best] {
            best = i;
        }
    }
    let peak = surface[best];
    let (pc, pr) = (best % w, best / w);
    let mut second = f64::NEG_INFINITY;
    for (i, &v) in surface.iter().enumerate() {
        let (c, r) = (i % w, i / w);
        let dc = signed_wrap((c + w - pc) % w, w).abs();
        let dr = signed_wrap((r + h - pr) % h, h).abs();
        if dc <= 1 && dr <= 1 {
            continue;
        }
        second = second.max(v);
    }
    let confidence = if peak > 0.0 && second.is_finite() {
        (1.0 - second.max(0.0) / peak).clamp(0.0, 1.0)
    } else if peak > 0.0 {
        1.0
    } else {
        0.0
    };
    // The surface peaks at minus the displacement of `moving`.
    let d_col = -signed_wrap(pc, w);
    let d_row = -signed_wrap(pr, h);
    Ok(Registration {
        d_col,
        d_row,
        confidence,
        peak,
    })
}

/// Per-robot transform into the first robot's map frame, from spawn poses
/// declared in a shared frame.
pub fn coarse_align(
    robots: &[&str],
    spawns: &BTreeMap<String, Transform2D>,
) -> Result<Vec<Transform2D>, MergeError> {
    let lookup = |id: &str| {
        spawns
            .get(id)
            .copied()
            .ok_or_else(|| MergeError::MissingTransform(id.to_string()))
    };
    let Some(first) = robots.first() else {
        return Ok(Vec::new());
    };
    let reference = lookup(first)?.inverse();
    robots
        .iter()
        .map(|id| Ok(reference.compose(&lookup(id)?)))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MergeEstimate {
    pub robot_id: String,
    pub coarse: Transform2D,
    /// Cell offset applied to the moving map in the reference lattice.
    pub refinement: (i64, i64),
    pub confidence: f64,
    pub final_transform: Transform2D,
}

impl MergeEstimate {
    pub fn identity(robot_id: impl Into<String>) -> Self {
        Self {
            robot_id: robot_id.into(),
            coarse: Transform2D::identity(),
            refinement: (0, 0),
            confidence: 1.0,
            final_transform: Transform2D::identity(),
        }
    }

    /// Builds the estimate whose final transform applies `coarse`, then the
    /// refinement expressed in the reference lattice's axes.
    pub fn new(
        robot_id: impl Into<String>,
        coarse: Transform2D,
        refinement: (i64, i64),
        confidence: f64,
        lattice: &GridGeometry,
    ) -> Self {
        let res = lattice.resolution;
        let (s, c) = lattice.origin.rotation.sin_cos();
        let (dx, dy) = (refinement.0 as f64 * res, refinement.1 as f64 * res);
        let shift = Transform2D::translation(c * dx - s * dy, s * dx + c * dy);
        Self {
            robot_id: robot_id.into(),
            coarse,
            refinement,
            confidence,
            final_transform: shift.compose(&coarse),
        }
    }
}

/// Cell-coordinate bounds `[min, max)` of known content in `lattice` coordinates.
fn known_region(grid: &OccupancyGrid, to_lattice: &Transform2D, lattice: &GridGeometry) -> Option<(i64, i64, i64, i64)> {
    let (c0, r0, c1, r1) = grid.known_bounds()?;
    let res = grid.resolution();
    let corners = [
        Point2::new(c0 as f64 * res, r0 as f64 * res),
        Point2::new((c1 + 1) as f64 * res, r0 as f64 * res),
        Point2::new((c1 + 1) as f64 * res, (r1 + 1) as f64 * res),
        Point2::new(c0 as f64 * res, (r1 + 1) as f64 * res),
    ];
    let mut b = (i64::MAX, i64::MAX, i64::MIN, i64::MIN);
    for p in corners {
        let world = to_lattice.apply_point(grid.geometry.origin.apply_point(p));
        let q = lattice.to_cell_coords(world);
        b.0 = b.0.min(q.x.floor() as i64);
        b.1 = b.1.min(q.y.floor() as i64);
        b.2 = b.2.max(q.x.ceil() as i64);
        b.3 = b.3.max(q.y.ceil() as i64);
    }
    Some(b)
}

/// Rasterizes `grid` (placed by `placement`) on the lattice window starting at
/// `(c0, r0)`, sampling nearest cells.
fn rasterize(
    grid: &OccupancyGrid,
    placement: &Transform2D,
    lattice: &GridGeometry,
    c0: i64,
    r0: i64,
    width: usize,
    height: usize,
) -> Raster {
    let mut out = Raster::zeros(width, height);
    let inv = placement.inverse();
    let res = lattice.resolution;
    for r in 0..height {
        for c in 0..width {
            let local = Point2::new(
                (c0 + c as i64) as f64 * res + 0.5 * res,
                (r0 + r as i64) as f64 * res + 0.5 * res,
            );
            let p = inv.apply_point(lattice.origin.apply_point(local));
            let (gc, gr) = grid.geometry.cell_of(p);
            if let Some(l) = grid.get_signed(gc, gr) {
                if Cell::from_log_odds(l) == Cell::Occupied {
                    out.set(c, r, 1.0);
                }
            }
        }
    }
    out
}

/// Registers `moving` (already placed by `coarse`) against `reference`.
///
/// Returns the refinement cell offset and the registration confidence.
pub fn estimate_refinement(
    reference: &OccupancyGrid,
    moving: &OccupancyGrid,
    coarse: &Transform2D,
) -> Result<((i64, i64), f64), MergeError> {
    let lattice = reference.geometry;
    let id = Transform2D::identity();
    let empty = || MergeError::DegenerateInput {
        occupied: 0,
        required: MIN_OCCUPIED,
    };
    let a = known_region(reference, &id, &lattice).ok_or_else(empty)?;
    let b = known_region(moving, coarse, &lattice).ok_or_else(empty)?;
    let (c0, r0) = (a.0.min(b.0), a.1.min(b.1));
    let (c1, r1) = (a.2.max(b.2), a.3.max(b.3));
    let w = ((c1 - c0).max(1) as usize).next_power_of_two();
    let h = ((r1 - r0).max(1) as usize).next_power_of_two();
    let ref_raster = rasterize(reference, &id, &lattice, c0, r0, w, h);
    let mov_raster = rasterize(moving, coarse, &lattice, c0, r0, w, h);
    let reg = phase_correlate(&ref_raster, &mov_raster)?;
    Ok(((-reg.d_col, -reg.d_row), reg.confidence))
}

/// Evidence-sum composition of aligned grids on the first grid's lattice.
pub fn merge(grids: &[&OccupancyGrid], estimates: &[MergeEstimate]) -> OccupancyGrid {
    assert_eq!(grids.len(), estimates.len(), "one estimate per grid");
    let Some(first) = grids.first() else {
        return OccupancyGrid::new(0, 0, 1.0, Transform2D::identity());
    };
    // Merged lattice: the first grid's cell lattice placed by its final transform.
    let base = GridGeometry {
        origin: estimates[0].final_transform.compose(&first.geometry.origin),
        ..first.geometry
    };
    let mut b = (i64::MAX, i64::MAX, i64::MIN, i64::MIN);
    for (g, e) in grids.iter().zip(estimates) {
        for corner in g.geometry.corners() {
            let q = base.to_cell_coords(e.final_transform.apply_point(corner));
            // snap values within float noise of a lattice line
            let snap = |v: f64| if (v - v.round()).abs() < 1e-9 { v.round() } else { v };
            b.0 = b.0.min(snap(q.x).floor() as i64);
            b.1 = b.1.min(snap(q.y).floor() as i64);
            b.2 = b.2.max(snap(q.x).ceil() as i64);
            b.3 = b.3.max(snap(q.y).ceil() as i64);
        }
    }
    let (w, h) = ((b.2 - b.0) as usize, (b.3 - b.1) as usize);
    let res = base.resolution;
    let geometry = GridGeometry::new(
        w,
        h,
        res,
        base.origin
            .compose(&Transform2D::translation(b.0 as f64 * res, b.1 as f64 * res)),
    );
    let l_max = first.model.l_max;
    let mut data = vec![0.0; w * h];
    for (g, e) in grids.iter().zip(estimates) {
        // merged cell coords -> grid cell coords is affine; precompute it
        let to_grid = g
            .geometry
            .origin
            .inverse()
            .compose(&e.final_transform.inverse())
            .compose(&geometry.origin);
        let (s, c) = to_grid.rotation.sin_cos();
        let gres = g.resolution();
        for r in 0..h {
            let y = (r as f64 + 0.5) * res;
            for col in 0..w {
                let x = (col as f64 + 0.5) * res;
                let gx = (to_grid.tx + c * x - s * y) / gres;
                let gy = (to_grid.ty + s * x + c * y) / gres;
                if let Some(l) = g.get_signed(gx.floor() as i64, gy.floor() as i64) {
                    if l != 0.0 {
                        let v = &mut data[r * w + col];
                        *v = (*v + l).clamp(-l_max, l_max);
                    }
                }
            }
        }
    }
    OccupancyGrid::from_log_odds(geometry, data, first.model)
}

/// Periodic merge job state: spawn transforms, last accepted refinements and
/// the latest estimates.
#[derive(Debug, Clone)]
pub struct MapMerger {
    robots: Vec<String>,
    spawns: BTreeMap<String, Transform2D>,
    refinements: BTreeMap<String, (i64, i64)>,
    estimates: Vec<MergeEstimate>,
    /// Registrations below this confidence keep the previous refinement.
    pub min_confidence: f64,
}

impl MapMerger {
    pub fn new(robots: Vec<String>, spawns: BTreeMap<String, Transform2D>) -> Result<Self, MergeError> {
        let ids: Vec<&str> = robots.iter().map(String::as_str).collect();
        let coarse = coarse_align(&ids, &spawns)?;
        let estimates = robots
            .iter()
            .zip(coarse)
            .map(|(id, c)| MergeEstimate {
                robot_id: id.clone(),
                coarse: c,
                refinement: (0, 0),
                confidence: if id == &robots[0] { 1.0 } else { 0.0 },
                final_transform: c,
            })
            .collect();
        Ok(Self {
            robots,
            spawns,
            refinements: BTreeMap::new(),
            estimates,
            min_confidence: 0.2,
        })
    }

    pub fn estimates(&self) -> &[MergeEstimate] {
        &self.estimates
    }

    pub fn estimate(&self, robot: &str) -> Option<&MergeEstimate> {
        self.estimates.iter().find(|e| e.robot_id == robot)
    }

    pub fn spawns(&self) -> &BTreeMap<String, Transform2D> {
        &self.spawns
    }

    /// Re-run registration of every robot against the reference map.
    /// `grids` must be in the same order as the robots given at construction.
    pub fn refine(&mut self, grids: &[&OccupancyGrid]) {
        assert_eq!(grids.len(), self.robots.len());
        let Some(reference) = grids.first() else {
            return;
        };
        for (i, grid) in grids.iter().enumerate().skip(1) {
            let id = self.robots[i].clone();
            let coarse = self.estimates[i].coarse;
            let previous = self.refinements.get(&id).copied().unwrap_or((0, 0));
            let (refinement, confidence) = match estimate_refinement(reference, grid, &coarse) {
                Ok((r, c)) if c >= self.min_confidence => (r, c),
                Ok((_, c)) => (previous, c),
                Err(_) => (previous, 0.0),
            };
            self.refinements.insert(id.clone(), refinement);
            self.estimates[i] = MergeEstimate::new(id, coarse, refinement, confidence, &reference.geometry);
        }
    }

    pub fn compose(&self, grids: &[&OccupancyGrid]) -> OccupancyGrid {
        merge(grids, &self.estimates)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::Pose2D;
    use crate::mapping::logistic;

    fn l_shape(w: usize, h: usize, c0: usize, r0: usize) -> Raster {
        let mut r = Raster::zeros(w, h);
        for c in c0..c0 + 20 {
            r.set(c, r0, 1.0);
        }
        for rr in r0..r0 + 12 {
            r.set(c0, rr, 1.0);
        }
        r
    }

    /// Circular cross-correlation over every shift; the argmax is the displacement.
    fn brute_force_shift(a: &Raster, b: &Raster) -> (i64, i64) {
        let (w, h) = (a.width, a.height);
        let mut best = (f64::NEG_INFINITY, 0, 0);
        for sr in 0..h {
            for sc in 0..w {
                let mut sum = 0.0;
                for r in 0..h {
                    for c in 0..w {
                        sum += a.get(c, r) * b.get((c + sc) % w, (r + sr) % h);
                    }
                }
                if sum > best.0 {
                    best = (sum, sc, sr);
                }
            }
        }
        (signed_wrap(best.1, w), signed_wrap(best.2, h))
    }

    #[test]
    fn identity_registration() {
        let a = l_shape(64, 64, 10, 10);
        let reg = phase_correlate(&a, &a).unwrap();
        assert_eq!((reg.d_col, reg.d_row), (0, 0));
        assert!(reg.confidence > 0.99, "{}", reg.confidence);
    }

    #[test]
    fn l_shape_shift_matches_brute_force() {
        let a = l_shape(64, 64, 10, 10);
        let b = l_shape(64, 64, 15, 13);
        let reg = phase_correlate(&a, &b).unwrap();
        assert_eq!((reg.d_col, reg.d_row), (5, 3));
        assert_eq!(brute_force_shift(&a, &b), (5, 3));
    }

    #[test]
    fn negative_shift() {
        let a = l_shape(64, 64, 30, 30);
        let b = l_shape(64, 64, 22, 35);
        let reg = phase_correlate(&a, &b).unwrap();
        assert_eq!((reg.d_col, reg.d_row), (-8, 5));
    }

    #[test]
    fn degenerate_inputs() {
        let z = Raster::zeros(32, 32);
        assert!(matches!(phase_correlate(&z, &z), Err(MergeError::DegenerateInput { .. })));
        let mut few = Raster::zeros(32, 32);
        for c in 0..15 {
            few.set(c, 3, 1.0);
        }
        let ok = l_shape(32, 32, 2, 2);
        assert!(phase_correlate(&ok, &few).is_err());
    }

    #[test]
    fn pads_unequal_rasters() {
        let a = l_shape(50, 40, 10, 10);
        let b = l_shape(64, 30, 12, 11);
        let reg = phase_correlate(&a, &b).unwrap();
        assert_eq!((reg.d_col, reg.d_row), (2, 1));
    }

    fn spawns(list: &[(&str, Transform2D)]) -> BTreeMap<String, Transform2D> {
        list.iter().map(|(k, v)| (k.to_string(), *v)).collect()
    }

    #[test]
    fn coarse_alignment_examples() {
        let s = spawns(&[("a", Transform2D::new(1.0, 1.0, 0.3)), ("b", Transform2D::new(1.0, 1.0, 0.3))]);
        let t = coarse_align(&["a", "b"], &s).unwrap();
        assert!(t.iter().all(|t| t.approx_eq(&Transform2D::identity(), 1e-12)));

        let s = spawns(&[("a", Transform2D::new(0.0, 0.0, 0.0)), ("b", Transform2D::new(2.0, 0.0, 0.0))]);
        let t = coarse_align(&["a", "b"], &s).unwrap();
        assert!(t[1].approx_eq(&Transform2D::translation(2.0, 0.0), 1e-12));

        assert_eq!(
            coarse_align(&["a", "c"], &s),
            Err(MergeError::MissingTransform("c".into()))
        );
    }

    fn grid_with(cells: &[(usize, usize, f64)], origin: Transform2D) -> OccupancyGrid {
        let mut g = OccupancyGrid::new(40, 30, 0.1, origin);
        let w = g.width();
        let mut data = g.log_odds().to_vec();
        for &(c, r, l) in cells {
            data[r * w + c] = l;
        }
        g = OccupancyGrid::from_log_odds(g.geometry, data, g.model);
        g
    }

    #[test]
    fn singleton_merge_is_identity() {
        let g = grid_with(&[(3, 4, 2.0), (10, 20, -1.0)], Transform2D::new(0.5, -1.0, 0.0));
        let m = merge(&[&g], &[MergeEstimate::identity("a")]);
        assert_eq!(m.geometry.width, g.width());
        assert_eq!(m.geometry.height, g.height());
        assert!(m.geometry.origin.approx_eq(&g.geometry.origin, 1e-12));
        assert_eq!(m.log_odds(), g.log_odds());
    }

    #[test]
    fn disjoint_merge_is_union() {
        let a = grid_with(&[(0, 0, 2.0)], Transform2D::identity());
        let b = grid_with(&[(39, 29, -2.0)], Transform2D::identity());
        let mut eb = MergeEstimate::identity("b");
        eb.final_transform = Transform2D::translation(10.0, 0.0);
        let m = merge(&[&a, &b], &[MergeEstimate::identity("a"), eb]);
        assert_eq!(m.width(), 140);
        assert_eq!(m.height(), 30);
        assert_eq!(m.get(0, 0), 2.0);
        assert_eq!(m.get(139, 29), -2.0);
        assert_eq!(m.log_odds().iter().filter(|&&l| l != 0.0).count(), 2);
    }

    #[test]
    fn aligned_wall_evidence_adds() {
        let wall: Vec<(usize, usize, f64)> = (5..35).map(|c| (c, 10, 0.85)).collect();
        let a = grid_with(&wall, Transform2D::identity());
        // b observed the same wall but its frame is shifted by +1 m in x
        let wall_b: Vec<(usize, usize, f64)> = (5..35).map(|c| (c, 10, 1.2)).collect();
        let b = grid_with(&wall_b, Transform2D::translation(-1.0, 0.0));
        let mut eb = MergeEstimate::identity("b");
        eb.final_transform = Transform2D::translation(1.0, 0.0);
        let m = merge(&[&a, &b], &[MergeEstimate::identity("a"), eb]);
        for c in 5..35 {
            let p = m.probability_at(Point2::new(c as f64 * 0.1 + 0.05, 1.05)).unwrap();
            assert!(p >= logistic(0.85) && p >= logistic(1.2));
        }
    }

    #[test]
    fn estimate_transform_composes_refinement() {
        let lattice = GridGeometry::new(10, 10, 0.05, Transform2D::identity());
        let e = MergeEstimate::new("b", Transform2D::new(1.0, 0.0, std::f64::consts::FRAC_PI_2), (4, -2), 0.9, &lattice);
        let p = e.final_transform.apply(&Pose2D::new(0.0, 0.0, 0.0));
        assert!((p.x - 1.2).abs() < 1e-12 && (p.y + 0.1).abs() < 1e-12);
    }
}
