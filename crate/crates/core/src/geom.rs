//! Planar poses, rigid transforms and grid indexing.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::GeomError;

/// Wrap an angle into `(-π, π]`.
pub fn normalize_angle(a: f64) -> f64 {
    if a > -PI && a <= PI {
        return a;
    }
    let mut r = a.rem_euclid(2.0 * PI);
    if r > PI {
        r -= 2.0 * PI;
    }
    // rem_euclid can land on exactly -π after the subtraction above.
    if r <= -PI {
        r += 2.0 * PI;
    }
    r
}

/// Signed shortest difference `a - b`, normalized.
pub fn angle_diff(a: f64, b: f64) -> f64 {
    normalize_angle(a - b)
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(&self, other: &Point2) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn norm(&self) -> f64 {
        self.x.hypot(self.y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Pose2D {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl Pose2D {
    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Self {
            x,
            y,
            theta: normalize_angle(theta),
        }
    }

    pub fn position(&self) -> Point2 {
        Point2::new(self.x, self.y)
    }

    pub fn distance(&self, other: &Pose2D) -> f64 {
        self.position().distance(&other.position())
    }

    /// The transform that maps this pose's local frame into its parent frame.
    pub fn as_transform(&self) -> Transform2D {
        Transform2D::new(self.x, self.y, self.theta)
    }

    pub fn to_array(&self) -> [f64; 3] {
        [self.x, self.y, self.theta]
    }
}

impl From<[f64; 3]> for Pose2D {
    fn from(v: [f64; 3]) -> Self {
        Pose2D::new(v[0], v[1], v[2])
    }
}

/// Rigid planar transform: rotate by `rotation`, then translate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Transform2D {
    pub tx: f64,
    pub ty: f64,
    pub rotation: f64,
}

impl Default for Transform2D {
    fn default() -> Self {
        Self::identity()
    }
}

impl Transform2D {
    pub fn new(tx: f64, ty: f64, rotation: f64) -> Self {
        Self {
            tx,
            ty,
            rotation: normalize_angle(rotation),
        }
    }

    pub const fn identity() -> Self {
        Self {
            tx: 0.0,
            ty: 0.0,
            rotation: 0.0,
        }
    }

    pub fn translation(tx: f64, ty: f64) -> Self {
        Self::new(tx, ty, 0.0)
    }

    pub fn rotation(theta: f64) -> Self {
        Self::new(0.0, 0.0, theta)
    }

    /// `self ∘ other`: the result applies `other` first, then `self`.
    pub fn compose(&self, other: &Transform2D) -> Transform2D {
        let (s, c) = self.rotation.sin_cos();
        Transform2D::new(
            self.tx + c * other.tx - s * other.ty,
            self.ty + s * other.tx + c * other.ty,
            self.rotation + other.rotation,
        )
    }

    pub fn inverse(&self) -> Transform2D {
        let (s, c) = self.rotation.sin_cos();
        Transform2D::new(
            -(c * self.tx + s * self.ty),
            s * self.tx - c * self.ty,
            -self.rotation,
        )
    }

    pub fn apply_point(&self, p: Point2) -> Point2 {
        let (s, c) = self.rotation.sin_cos();
        Point2::new(self.tx + c * p.x - s * p.y, self.ty + s * p.x + c * p.y)
    }

    pub fn apply(&self, p: &Pose2D) -> Pose2D {
        let q = self.apply_point(p.position());
        Pose2D::new(q.x, q.y, p.theta + self.rotation)
    }

    pub fn as_pose(&self) -> Pose2D {
        Pose2D::new(self.tx, self.ty, self.rotation)
    }

    pub fn approx_eq(&self, other: &Transform2D, tol: f64) -> bool {
        (self.tx - other.tx).abs() <= tol
            && (self.ty - other.ty).abs() <= tol
            && angle_diff(self.rotation, other.rotation).abs() <= tol
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Twist2D {
    pub linear: f64,
    pub angular: f64,
}

impl Twist2D {
    pub const ZERO: Twist2D = Twist2D {
        linear: 0.0,
        angular: 0.0,
    };

    pub const fn new(linear: f64, angular: f64) -> Self {
        Self { linear, angular }
    }

    pub fn clamped(&self, max_linear: f64, max_angular: f64) -> Twist2D {
        Twist2D {
            linear: self.linear.clamp(-max_linear, max_linear),
            angular: self.angular.clamp(-max_angular, max_angular),
        }
    }

    pub fn is_zero(&self) -> bool {
        self.linear == 0.0 && self.angular == 0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct GridIndex {
    pub col: usize,
    pub row: usize,
}

impl GridIndex {
    pub const fn new(col: usize, row: usize) -> Self {
        Self { col, row }
    }
}

/// Placement and extent of a regular cell lattice.
///
/// `origin` maps the grid frame (cell (0,0) spans `[0,res)²`) into the parent frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridGeometry {
    pub width: usize,
    pub height: usize,
    pub resolution: f64,
    pub origin: Transform2D,
}

impl GridGeometry {
    pub fn new(width: usize, height: usize, resolution: f64, origin: Transform2D) -> Self {
        assert!(resolution > 0.0, "grid resolution must be positive");
        Self {
            width,
            height,
            resolution,
            origin,
        }
    }

    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn contains(&self, col: i64, row: i64) -> bool {
        col >= 0 && row >= 0 && (col as usize) < self.width && (row as usize) < self.height
    }

    pub fn flat(&self, idx: GridIndex) -> usize {
        idx.row * self.width + idx.col
    }

    /// Continuous cell coordinates of a parent-frame point (cell (c,r) spans `[c,c+1)×[r,r+1)`).
    pub fn to_cell_coords(&self, p: Point2) -> Point2 {
        let local = self.origin.inverse().apply_point(p);
        Point2::new(local.x / self.resolution, local.y / self.resolution)
    }

    /// Unbounded floor-quantized cell of a parent-frame point.
    pub fn cell_of(&self, p: Point2) -> (i64, i64) {
        let c = self.to_cell_coords(p);
        (c.x.floor() as i64, c.y.floor() as i64)
    }

    pub fn world_to_grid(&self, p: Point2) -> Result<GridIndex, GeomError> {
        world_to_grid(&self.origin, self.resolution, p, self.width, self.height)
    }

    pub fn grid_to_world(&self, idx: GridIndex) -> Point2 {
        grid_to_world(&self.origin, self.resolution, idx)
    }

    /// Parent-frame corners of the full extent.
    pub fn corners(&self) -> [Point2; 4] {
        let w = self.width as f64 * self.resolution;
        let h = self.height as f64 * self.resolution;
        [
            Point2::new(0.0, 0.0),
            Point2::new(w, 0.0),
            Point2::new(w, h),
            Point2::new(0.0, h),
        ]
        .map(|p| self.origin.apply_point(p))
    }
}

/// Floor-quantize a parent-frame point into a grid cell.
pub fn world_to_grid(
    origin: &Transform2D,
    resolution: f64,
    p: Point2,
    width: usize,
    height: usize,
) -> Result<GridIndex, GeomError> {
    assert!(resolution > 0.0, "grid resolution must be positive");
    let local = origin.inverse().apply_point(p);
    let col = (local.x / resolution).floor();
    let row = (local.y / resolution).floor();
    if col < 0.0 || row < 0.0 || col >= width as f64 || row >= height as f64 {
        return Err(GeomError::OutOfBounds {
            x: p.x,
            y: p.y,
            width,
            height,
        });
    }
    Ok(GridIndex::new(col as usize, row as usize))
}

/// Parent-frame center of a cell.
pub fn grid_to_world(origin: &Transform2D, resolution: f64, idx: GridIndex) -> Point2 {
    origin.apply_point(Point2::new(
        (idx.col as f64 + 0.5) * resolution,
        (idx.row as f64 + 0.5) * resolution,
    ))
}

/// Walks every cell a segment passes through, in order, in continuous cell
/// coordinates (Amanatides–Woo traversal). The callback receives the cell and
/// the segment parameter `t ∈ [0,1]` at which the segment enters it; returning
/// `false` stops the walk.
pub fn traverse_cells<F>(start: Point2, end: Point2, mut visit: F)
where
    F: FnMut(i64, i64, f64) -> bool,
{
    let dx = end.x - start.x;
    let dy = end.y - start.y;
    let mut col = start.x.floor() as i64;
    let mut row = start.y.floor() as i64;
    let end_col = end.x.floor() as i64;
    let end_row = end.y.floor() as i64;

    let step_c: i64 = if dx > 0.0 { 1 } else { -1 };
    let step_r: i64 = if dy > 0.0 { 1 } else { -1 };
    let t_delta_c = if dx != 0.0 { (1.0 / dx).abs() } else { f64::INFINITY };
    let t_delta_r = if dy != 0.0 { (1.0 / dy).abs() } else { f64::INFINITY };
    let mut t_max_c = if dx > 0.0 {
        ((col + 1) as f64 - start.x) / dx
    } else if dx < 0.0 {
        (col as f64 - start.x) / dx
    } else {
        f64::INFINITY
    };
    let mut t_max_r = if dy > 0.0 {
        ((row + 1) as f64 - start.y) / dy
    } else if dy < 0.0 {
        (row as f64 - start.y) / dy
    } else {
        f64::INFINITY
    };

    if !visit(col, row, 0.0) {
        return;
    }
    let max_steps = (end_col - col).unsigned_abs() + (end_row - row).unsigned_abs();
    for _ in 0..max_steps {
        let t = if t_max_c < t_max_r {
            col += step_c;
            let t = t_max_c;
            t_max_c += t_delta_c;
            t
        } else {
            row += step_r;
            let t = t_max_r;
            t_max_r += t_delta_r;
            t
        };
        if t > 1.0 {
            break;
        }
        if !visit(col, row, t) {
            return;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-9
    }

    #[test]
    fn normalize_is_half_open() {
        assert_eq!(normalize_angle(PI), PI);
        assert!(close(normalize_angle(-PI), PI));
        assert!(close(normalize_angle(3.0 * PI), PI));
        assert!(close(normalize_angle(2.0 * PI + 0.1), 0.1));
        assert!(close(normalize_angle(-2.0 * PI - 0.1), -0.1));
    }

    #[test]
    fn compose_examples() {
        let id = Transform2D::identity();
        assert_eq!(id.compose(&id), id);

        let t = Transform2D::new(1.3, -0.4, 2.2);
        assert!(t.compose(&t.inverse()).approx_eq(&id, 1e-9));

        let tr = Transform2D::translation(1.0, 0.0).compose(&Transform2D::rotation(FRAC_PI_2));
        let p = tr.apply_point(Point2::new(1.0, 0.0));
        assert!(close(p.x, 1.0) && close(p.y, 1.0));
    }

    #[test]
    fn apply_examples() {
        let p = Transform2D::identity().apply(&Pose2D::new(3.0, 4.0, 0.5));
        assert_eq!(p, Pose2D::new(3.0, 4.0, 0.5));

        let p = Transform2D::rotation(PI).apply(&Pose2D::new(1.0, 0.0, 0.0));
        assert!(close(p.x, -1.0) && close(p.y, 0.0) && close(p.theta, PI));

        let t = Transform2D::translation(2.0, 0.0).compose(&Transform2D::rotation(FRAC_PI_2));
        let p = t.apply(&Pose2D::new(0.0, 1.0, 0.0));
        assert!(close(p.x, 1.0) && close(p.y, 0.0) && close(p.theta, FRAC_PI_2));
    }

    #[test]
    fn world_to_grid_examples() {
        let id = Transform2D::identity();
        assert_eq!(
            world_to_grid(&id, 0.05, Point2::new(0.0, 0.0), 10, 10).unwrap(),
            GridIndex::new(0, 0)
        );
        assert_eq!(
            world_to_grid(&id, 0.05, Point2::new(0.26, 0.11), 10, 10).unwrap(),
            GridIndex::new(5, 2)
        );
        assert!(matches!(
            world_to_grid(&id, 0.05, Point2::new(0.6, 0.1), 10, 10),
            Err(GeomError::OutOfBounds { .. })
        ));
        assert!(world_to_grid(&id, 0.05, Point2::new(-0.01, 0.1), 10, 10).is_err());
    }

    #[test]
    fn traversal_visits_supercover() {
        let mut cells = Vec::new();
        traverse_cells(Point2::new(0.5, 0.5), Point2::new(3.5, 1.5), |c, r, _| {
            cells.push((c, r));
            true
        });
        assert_eq!(cells.first(), Some(&(0, 0)));
        assert_eq!(cells.last(), Some(&(3, 1)));
        // each step moves to a 4-neighbour
        for w in cells.windows(2) {
            let d = (w[1].0 - w[0].0).abs() + (w[1].1 - w[0].1).abs();
            assert_eq!(d, 1);
        }
    }

    #[test]
    fn traversal_negative_direction() {
        let mut cells = Vec::new();
        traverse_cells(Point2::new(2.5, 0.5), Point2::new(-0.5, 0.5), |c, r, t| {
            cells.push((c, r, t));
            true
        });
        let cols: Vec<i64> = cells.iter().map(|c| c.0).collect();
        assert_eq!(cols, vec![2, 1, 0, -1]);
        assert!(close(cells[1].2, 0.5 / 3.0));
    }
}
