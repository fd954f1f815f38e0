//! Log-odds occupancy mapping from posed laser scans, plus the ternary
//! snapshot format handed to merging, planning and the operator console.

use serde::{Deserialize, Serialize};

use crate::codec::{get_array, get_varint, put_varint};
use crate::error::MappingError;
use crate::geom::{traverse_cells, GridGeometry, GridIndex, Point2, Pose2D, Transform2D};
use crate::sim::{LaserScan, TruthGrid};

pub fn logistic(l: f64) -> f64 {
    1.0 / (1.0 + (-l).exp())
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Inverse sensor model increments and clamp.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensorModel {
    pub l_occ: f64,
    pub l_free: f64,
    pub l_max: f64,
}

impl Default for SensorModel {
    fn default() -> Self {
        Self {
            l_occ: logit(0.7),
            l_free: -logit(0.6),
            l_max: 10.0,
        }
    }
}

/// Endpoint nudge so a range measured to a cell boundary lands inside the hit cell.
const ENDPOINT_EPS: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyGrid {
    pub geometry: GridGeometry,
    log_odds: Vec<f64>,
    pub model: SensorModel,
    pub auto_grow: bool,
}

impl OccupancyGrid {
    pub fn new(width: usize, height: usize, resolution: f64, origin: Transform2D) -> Self {
        Self {
            geometry: GridGeometry::new(width, height, resolution, origin),
            log_odds: vec![0.0; width * height],
            model: SensorModel::default(),
            auto_grow: true,
        }
    }

    /// Square grid of side `extent` meters centered on the frame origin.
    pub fn centered(extent: f64, resolution: f64) -> Self {
        let n = (extent / resolution).ceil() as usize;
        let half = n as f64 * resolution / 2.0;
        Self::new(n, n, resolution, Transform2D::translation(-half, -half))
    }

    pub fn from_log_odds(geometry: GridGeometry, log_odds: Vec<f64>, model: SensorModel) -> Self {
        assert_eq!(geometry.len(), log_odds.len());
        Self {
            geometry,
            log_odds,
            model,
            auto_grow: false,
        }
    }

    pub fn width(&self) -> usize {
        self.geometry.width
    }

    pub fn height(&self) -> usize {
        self.geometry.height
    }

    pub fn resolution(&self) -> f64 {
        self.geometry.resolution
    }

    pub fn log_odds(&self) -> &[f64] {
        &self.log_odds
    }

    pub fn get(&self, col: usize, row: usize) -> f64 {
        self.log_odds[row * self.geometry.width + col]
    }

    /// Log-odds at a signed cell, `None` outside the grid.
    pub fn get_signed(&self, col: i64, row: i64) -> Option<f64> {
        self.geometry
            .contains(col, row)
            .then(|| self.log_odds[row as usize * self.geometry.width + col as usize])
    }

    pub fn probability(&self, col: usize, row: usize) -> f64 {
        logistic(self.get(col, row))
    }

    pub fn probability_at(&self, p: Point2) -> Option<f64> {
        let (c, r) = self.geometry.cell_of(p);
        self.get_signed(c, r).map(logistic)
    }

    fn add(&mut self, col: i64, row: i64, delta: f64) {
        if !self.geometry.contains(col, row) {
            return;
        }
        let i = row as usize * self.geometry.width + col as usize;
        let l_max = self.model.l_max;
        self.log_odds[i] = (self.log_odds[i] + delta).clamp(-l_max, l_max);
    }

    pub fn integrate_scan(&mut self, pose: &Pose2D, scan: &LaserScan) -> Result<(), MappingError> {
        let m = self.model;
        self.apply_scan(pose, scan, m.l_occ, m.l_free)
    }

    /// Applies the exact negation of [`integrate_scan`](Self::integrate_scan)'s updates.
    pub fn retract_scan(&mut self, pose: &Pose2D, scan: &LaserScan) -> Result<(), MappingError> {
        let m = self.model;
        self.apply_scan(pose, scan, -m.l_occ, -m.l_free)
    }

    fn beam_segments(pose: &Pose2D, scan: &LaserScan) -> Vec<(Point2, bool)> {
        scan.ranges
            .iter()
            .enumerate()
            .filter_map(|(i, &r)| {
                let a = pose.theta + scan.beam_angle(i);
                let (len, hit) = if r.is_finite() {
                    (r + ENDPOINT_EPS, true)
                } else {
                    (scan.range_max, false)
                };
                (len > 0.0 && (hit || scan.range_max > 0.0))
                    .then(|| (Point2::new(pose.x + len * a.cos(), pose.y + len * a.sin()), hit))
            })
            .collect()
    }

    fn apply_scan(&mut self, pose: &Pose2D, scan: &LaserScan, l_occ: f64, l_free: f64) -> Result<(), MappingError> {
        let segments = Self::beam_segments(pose, scan);
        if segments.is_empty() {
            return Ok(());
        }
        let origin = pose.position();
        if self.auto_grow {
            let mut pts: Vec<Point2> = segments.iter().map(|s| s.0).collect();
            pts.push(origin);
            self.grow_to_include(&pts);
        } else {
            let (c, r) = self.geometry.cell_of(origin);
            if !self.geometry.contains(c, r) {
                return Err(MappingError::PoseOutsideGrid { x: origin.x, y: origin.y });
            }
        }
        let start = self.geometry.to_cell_coords(origin);
        let mut cells: Vec<(i64, i64)> = Vec::new();
        for (end_world, hit) in segments {
            let end = self.geometry.to_cell_coords(end_world);
            cells.clear();
            traverse_cells(start, end, |c, r, _| {
                cells.push((c, r));
                true
            });
            let n = cells.len();
            for (k, &(c, r)) in cells.iter().enumerate() {
                let delta = if hit && k + 1 == n { l_occ } else { l_free };
                self.add(c, r, delta);
            }
        }
        Ok(())
    }

    /// Doubles the grid toward each side that the points overflow.
    pub fn grow_to_include(&mut self, pts: &[Point2]) {
        let (mut min_c, mut min_r, mut max_c, mut max_r) = (i64::MAX, i64::MAX, i64::MIN, i64::MIN);
        for p in pts {
            let (c, r) = self.geometry.cell_of(*p);
            min_c = min_c.min(c);
            min_r = min_r.min(r);
            max_c = max_c.max(c);
            max_r = max_r.max(r);
        }
        let (mut left, mut right, mut bottom, mut top) = (0usize, 0usize, 0usize, 0usize);
        let mut w = self.geometry.width.max(1);
        let mut h = self.geometry.height.max(1);
        while min_c + (left as i64) < 0 {
            left += w;
            w *= 2;
        }
        while max_c + left as i64 >= w as i64 {
            right += w;
            w *= 2;
        }
        while min_r + (bottom as i64) < 0 {
            bottom += h;
            h *= 2;
        }
        while max_r + bottom as i64 >= h as i64 {
            top += h;
            h *= 2;
        }
        if left + right + bottom + top == 0 {
            return;
        }
        let old = self.geometry;
        let mut data = vec![0.0; w * h];
        for r in 0..old.height {
            let src = &self.log_odds[r * old.width..(r + 1) * old.width];
            let dst = (r + bottom) * w + left;
            data[dst..dst + old.width].copy_from_slice(src);
        }
        let res = old.resolution;
        self.geometry = GridGeometry::new(
            w,
            h,
            res,
            old.origin
                .compose(&Transform2D::translation(-(left as f64) * res, -(bottom as f64) * res)),
        );
        self.log_odds = data;
    }

    /// Bounding box `(min_col, min_row, max_col, max_row)` of cells with any evidence.
    pub fn known_bounds(&self) -> Option<(usize, usize, usize, usize)> {
        let w = self.geometry.width;
        let mut b: Option<(usize, usize, usize, usize)> = None;
        for (i, &l) in self.log_odds.iter().enumerate() {
            if l != 0.0 {
                let (c, r) = (i % w, i / w);
                b = Some(match b {
                    None => (c, r, c, r),
                    Some((a, bb, cc, d)) => (a.min(c), bb.min(r), cc.max(c), d.max(r)),
                });
            }
        }
        b
    }

    pub fn probability_grid(&self) -> TernaryGrid {
        TernaryGrid {
            geometry: self.geometry,
            cells: self.log_odds.iter().map(|&l| Cell::from_log_odds(l)).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[repr(u8)]
pub enum Cell {
    Free = 0,
    Occupied = 1,
    Unknown = 2,
}

impl Cell {
    pub const OCCUPIED_P: f64 = 0.65;
    pub const FREE_P: f64 = 0.35;

    pub fn from_probability(p: f64) -> Cell {
        if p >= Self::OCCUPIED_P {
            Cell::Occupied
        } else if p <= Self::FREE_P {
            Cell::Free
        } else {
            Cell::Unknown
        }
    }

    pub fn from_log_odds(l: f64) -> Cell {
        if l == 0.0 {
            Cell::Unknown
        } else {
            Cell::from_probability(logistic(l))
        }
    }

    pub fn from_byte(b: u8) -> Option<Cell> {
        match b {
            0 => Some(Cell::Free),
            1 => Some(Cell::Occupied),
            2 => Some(Cell::Unknown),
            _ => None,
        }
    }
}

/// Classified snapshot of an occupancy grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TernaryGrid {
    pub geometry: GridGeometry,
    pub cells: Vec<Cell>,
}

impl TernaryGrid {
    pub fn filled(geometry: GridGeometry, cell: Cell) -> Self {
        Self {
            cells: vec![cell; geometry.len()],
            geometry,
        }
    }

    /// Fully known grid from ground truth.
    pub fn from_truth(truth: &TruthGrid) -> Self {
        Self {
            geometry: truth.geometry,
            cells: truth
                .cells()
                .iter()
                .map(|&o| if o { Cell::Occupied } else { Cell::Free })
                .collect(),
        }
    }

    pub fn width(&self) -> usize {
        self.geometry.width
    }

    pub fn height(&self) -> usize {
        self.geometry.height
    }

    pub fn get(&self, col: usize, row: usize) -> Cell {
        self.cells[row * self.geometry.width + col]
    }

    pub fn get_signed(&self, col: i64, row: i64) -> Option<Cell> {
        self.geometry
            .contains(col, row)
            .then(|| self.cells[row as usize * self.geometry.width + col as usize])
    }

    pub fn set(&mut self, col: usize, row: usize, cell: Cell) {
        let w = self.geometry.width;
        self.cells[row * w + col] = cell;
    }

    pub fn cell_at(&self, p: Point2) -> Option<Cell> {
        let (c, r) = self.geometry.cell_of(p);
        self.get_signed(c, r)
    }

    pub fn index_of(&self, p: Point2) -> Option<GridIndex> {
        self.geometry.world_to_grid(p).ok()
    }

    pub fn count(&self, cell: Cell) -> usize {
        self.cells.iter().filter(|&&c| c == cell).count()
    }

    /// Header (width, height as u32 BE; resolution, origin x, y, rotation as f64 BE)
    /// followed by row-major runs of `(cell byte, varint length)`.
    pub fn encode(&self) -> Vec<u8> {
        let g = &self.geometry;
        let mut out = Vec::with_capacity(40 + self.cells.len() / 8);
        out.extend_from_slice(&(g.width as u32).to_be_bytes());
        out.extend_from_slice(&(g.height as u32).to_be_bytes());
        out.extend_from_slice(&g.resolution.to_be_bytes());
        out.extend_from_slice(&g.origin.tx.to_be_bytes());
        out.extend_from_slice(&g.origin.ty.to_be_bytes());
        out.extend_from_slice(&g.origin.rotation.to_be_bytes());
        let mut iter = self.cells.iter();
        if let Some(&first) = iter.next() {
            let mut cur = first;
            let mut run: u64 = 1;
            for &c in iter {
                if c == cur {
                    run += 1;
                } else {
                    out.push(cur as u8);
                    put_varint(&mut out, run);
                    cur = c;
                    run = 1;
                }
            }
            out.push(cur as u8);
            put_varint(&mut out, run);
        }
        out
    }

    pub fn decode(buf: &[u8]) -> Result<TernaryGrid, MappingError> {
        let bad = |m: &str| MappingError::Decode(m.to_string());
        let mut pos = 0;
        let width = u32::from_be_bytes(get_array(buf, &mut pos).ok_or_else(|| bad("short header"))?) as usize;
        let height = u32::from_be_bytes(get_array(buf, &mut pos).ok_or_else(|| bad("short header"))?) as usize;
        let mut f = || {
            get_array::<8>(buf, &mut pos)
                .map(f64::from_be_bytes)
                .ok_or_else(|| bad("short header"))
        };
        let resolution = f()?;
        let tx = f()?;
        let ty = f()?;
        let rotation = f()?;
        if !resolution.is_finite() || resolution <= 0.0 {
            return Err(bad("resolution must be positive"));
        }
        let total = width
            .checked_mul(height)
            .ok_or_else(|| bad("grid too large"))?;
        let mut cells = Vec::with_capacity(total.min(1 << 24));
        while pos < buf.len() {
            let cell = Cell::from_byte(buf[pos]).ok_or_else(|| bad("invalid cell value"))?;
            pos += 1;
            let run = get_varint(buf, &mut pos).ok_or_else(|| bad("truncated run length"))? as usize;
            if run == 0 || cells.len() + run > total {
                return Err(bad("run lengths do not match grid size"));
            }
            cells.extend(std::iter::repeat_n(cell, run));
        }
        if cells.len() != total {
            return Err(bad("run lengths do not match grid size"));
        }
        Ok(TernaryGrid {
            geometry: GridGeometry {
                width,
                height,
                resolution,
                origin: Transform2D { tx, ty, rotation },
            },
            cells,
        })
    }

    /// Parse the [`to_ascii`](Self::to_ascii) rendering, placed at the origin.
    pub fn from_ascii(text: &str, resolution: f64) -> Result<TernaryGrid, MappingError> {
        let rows: Vec<&str> = text.lines().filter(|l| !l.is_empty()).collect();
        let width = rows.first().map(|r| r.len()).unwrap_or(0);
        if width == 0 {
            return Err(MappingError::Decode("empty ASCII map".into()));
        }
        let height = rows.len();
        let mut cells = vec![Cell::Unknown; width * height];
        for (i, row) in rows.iter().enumerate() {
            if row.len() != width {
                return Err(MappingError::Decode(format!("row {} has {} columns, expected {width}", i + 1, row.len())));
            }
            let r = height - 1 - i;
            for (c, ch) in row.bytes().enumerate() {
                cells[r * width + c] = match ch {
                    b'#' => Cell::Occupied,
                    b'.' => Cell::Free,
                    b'?' => Cell::Unknown,
                    other => {
                        return Err(MappingError::Decode(format!(
                            "row {} column {}: unexpected `{}`",
                            i + 1,
                            c + 1,
                            other as char
                        )))
                    }
                };
            }
        }
        Ok(TernaryGrid {
            geometry: GridGeometry::new(width, height, resolution, Transform2D::identity()),
            cells,
        })
    }

    /// ASCII rendering, top row first: `#` occupied, `.` free, `?` unknown.
    pub fn to_ascii(&self) -> String {
        let mut s = String::with_capacity((self.width() + 1) * self.height());
        for r in (0..self.height()).rev() {
            for c in 0..self.width() {
                s.push(match self.get(c, r) {
                    Cell::Occupied => '#',
                    Cell::Free => '.',
                    Cell::Unknown => '?',
                });
            }
            s.push('\n');
        }
        s
    }
}
