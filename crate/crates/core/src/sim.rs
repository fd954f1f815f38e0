//! Deterministic fixed-timestep world: differential-drive robots, raycast
//! LiDAR, a column-raycast camera, fiducial tags and battery drain.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::SimError;
use crate::geom::{angle_diff, normalize_angle, traverse_cells, GridGeometry, Point2, Pose2D, Transform2D, Twist2D};

/// Ground-truth binary occupancy.
#[derive(Debug, Clone, PartialEq)]
pub struct TruthGrid {
    pub geometry: GridGeometry,
    occupied: Vec<bool>,
}

impl TruthGrid {
    pub fn new(geometry: GridGeometry, occupied: Vec<bool>) -> Self {
        assert_eq!(geometry.len(), occupied.len());
        Self { geometry, occupied }
    }

    pub fn empty(width: usize, height: usize, resolution: f64) -> Self {
        Self::new(
            GridGeometry::new(width, height, resolution, Transform2D::identity()),
            vec![false; width * height],
        )
    }

    /// Room of the given size with one-cell walls along the border.
    pub fn walled_room(width: usize, height: usize, resolution: f64) -> Self {
        let mut g = Self::empty(width, height, resolution);
        for c in 0..width {
            g.set(c, 0, true);
            g.set(c, height - 1, true);
        }
        for r in 0..height {
            g.set(0, r, true);
            g.set(width - 1, r, true);
        }
        g
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

    pub fn set(&mut self, col: usize, row: usize, occ: bool) {
        let w = self.geometry.width;
        self.occupied[row * w + col] = occ;
    }

    /// Cells outside the grid count as free.
    pub fn is_occupied(&self, col: i64, row: i64) -> bool {
        self.geometry.contains(col, row) && self.occupied[row as usize * self.geometry.width + col as usize]
    }

    pub fn cells(&self) -> &[bool] {
        &self.occupied
    }

    pub fn is_occupied_at(&self, p: Point2) -> bool {
        let (c, r) = self.geometry.cell_of(p);
        self.is_occupied(c, r)
    }

    /// Distance along the ray to the first occupied cell boundary, or `None`
    /// if nothing is hit within `max_range`.
    pub fn cast_ray(&self, from: Point2, angle: f64, max_range: f64) -> Option<f64> {
        if max_range <= 0.0 {
            return None;
        }
        let res = self.geometry.resolution;
        let local_angle = angle - self.geometry.origin.rotation;
        let start = self.geometry.to_cell_coords(from);
        let end = Point2::new(
            start.x + local_angle.cos() * max_range / res,
            start.y + local_angle.sin() * max_range / res,
        );
        let mut hit = None;
        traverse_cells(start, end, |c, r, t| {
            if self.is_occupied(c, r) {
                hit = Some(t * max_range);
                false
            } else {
                true
            }
        });
        hit
    }

    /// Distance from `p` to the nearest occupied cell square, searching up to `limit`.
    pub fn clearance(&self, p: Point2, limit: f64) -> f64 {
        let res = self.geometry.resolution;
        let q = self.geometry.to_cell_coords(p);
        let reach = (limit / res).ceil() as i64 + 1;
        let (qc, qr) = (q.x.floor() as i64, q.y.floor() as i64);
        let mut best = limit;
        for r in (qr - reach)..=(qr + reach) {
            for c in (qc - reach)..=(qc + reach) {
                if !self.is_occupied(c, r) {
                    continue;
                }
                let dx = (c as f64 - q.x).max(0.0).max(q.x - (c + 1) as f64);
                let dy = (r as f64 - q.y).max(0.0).max(q.y - (r + 1) as f64);
                let d = dx.hypot(dy) * res;
                if d < best {
                    best = d;
                }
            }
        }
        best
    }

    /// True when a disc of `radius` at `p` overlaps no occupied cell and stays inside the grid.
    pub fn disc_is_free(&self, p: Point2, radius: f64) -> bool {
        let q = self.geometry.to_cell_coords(p);
        let rr = radius / self.geometry.resolution;
        if q.x - rr < 0.0
            || q.y - rr < 0.0
            || q.x + rr > self.geometry.width as f64
            || q.y + rr > self.geometry.height as f64
        {
            return false;
        }
        self.clearance(p, radius * 2.0) >= radius
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LidarConfig {
    pub beams: usize,
    /// Total angular coverage; 2π means a full ring with no duplicated beam.
    pub fov: f64,
    pub range_max: f64,
}

impl Default for LidarConfig {
    fn default() -> Self {
        Self {
            beams: 360,
            fov: 2.0 * PI,
            range_max: 8.0,
        }
    }
}

impl LidarConfig {
    pub fn angle_increment(&self) -> f64 {
        if (self.fov - 2.0 * PI).abs() < 1e-12 {
            self.fov / self.beams as f64
        } else {
            self.fov / (self.beams.max(2) - 1) as f64
        }
    }

    pub fn angle_min(&self) -> f64 {
        -self.fov / 2.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraConfig {
    pub width: usize,
    pub height: usize,
    pub hfov: f64,
    pub range: f64,
    pub wall_height: f64,
    /// Minimum tag side in pixels for a detection.
    pub detect_min_px: u32,
}

impl Default for CameraConfig {
    fn default() -> Self {
        Self {
            width: 160,
            height: 120,
            hfov: 60f64.to_radians(),
            range: 8.0,
            wall_height: 1.0,
            detect_min_px: 20,
        }
    }
}

impl CameraConfig {
    pub fn focal_px(&self) -> f64 {
        (self.width as f64 / 2.0) / (self.hfov / 2.0).tan()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OdomNoise {
    pub enabled: bool,
    /// Relative std-dev on each distance increment.
    pub sigma_distance: f64,
    /// Relative std-dev on each rotation increment.
    pub sigma_rotation: f64,
    /// Heading std-dev per meter travelled, radians.
    pub sigma_heading_per_m: f64,
}

impl Default for OdomNoise {
    fn default() -> Self {
        Self {
            enabled: true,
            sigma_distance: 0.01,
            sigma_rotation: 0.01,
            sigma_heading_per_m: 0.5f64.to_radians(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BatteryModel {
    /// Fraction per second while idle.
    pub idle_rate: f64,
    /// Additional fraction per second per m/s of commanded speed.
    pub speed_rate: f64,
}

impl Default for BatteryModel {
    fn default() -> Self {
        Self {
            idle_rate: 0.0001,
            speed_rate: 0.0004,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub dt: f64,
    pub robot_radius: f64,
    pub max_linear: f64,
    pub max_angular: f64,
    pub lidar: LidarConfig,
    pub camera: CameraConfig,
    pub odom_noise: OdomNoise,
    pub battery: BatteryModel,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            dt: 0.05,
            robot_radius: 0.18,
            max_linear: 1.0,
            max_angular: 2.0,
            lidar: LidarConfig::default(),
            camera: CameraConfig::default(),
            odom_noise: OdomNoise::default(),
            battery: BatteryModel::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TagMarker {
    pub id: u32,
    pub pose: Pose2D,
    pub size: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobotBody {
    pub id: String,
    pub spawn: Pose2D,
    pub pose_true: Pose2D,
    /// Dead-reckoned pose in the robot's own odometry frame (spawn = origin).
    pub pose_odom: Pose2D,
    pub radius: f64,
    pub commanded: Twist2D,
    pub battery: f64,
    pub distance_travelled: f64,
    /// Number of steps in which motion was truncated by contact.
    pub contacts: u64,
}

impl RobotBody {
    pub fn new(id: impl Into<String>, spawn: Pose2D, radius: f64) -> Self {
        Self {
            id: id.into(),
            spawn,
            pose_true: spawn,
            pose_odom: Pose2D::default(),
            radius,
            commanded: Twist2D::ZERO,
            battery: 1.0,
            distance_travelled: 0.0,
            contacts: 0,
        }
    }

    /// Odometry pose re-expressed in the world frame through the spawn pose.
    pub fn odom_in_world(&self) -> Pose2D {
        self.spawn.as_transform().apply(&self.pose_odom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LaserScan {
    pub angle_min: f64,
    pub angle_increment: f64,
    pub range_max: f64,
    /// `f64::INFINITY` marks a beam with no return.
    pub ranges: Vec<f64>,
    pub stamp_tick: u64,
}

impl LaserScan {
    pub fn beam_angle(&self, i: usize) -> f64 {
        self.angle_min + i as f64 * self.angle_increment
    }

    /// Beam endpoints in the sensor frame (finite returns only).
    pub fn points(&self) -> impl Iterator<Item = (usize, Point2)> + '_ {
        self.ranges.iter().enumerate().filter(|(_, r)| r.is_finite()).map(|(i, &r)| {
            let a = self.beam_angle(i);
            (i, Point2::new(r * a.cos(), r * a.sin()))
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TagView {
    pub id: u32,
    pub x0: u32,
    pub y0: u32,
    pub x1: u32,
    pub y1: u32,
}

impl TagView {
    pub fn width(&self) -> u32 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> u32 {
        self.y1 - self.y0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraFrame {
    pub width: usize,
    pub height: usize,
    pub rgb: Vec<u8>,
    pub stamp_tick: u64,
    pub visible_tags: Vec<TagView>,
}

/// Tags in the frame whose pixel box is at least `min_px` on both sides.
pub fn detect_tags(frame: &CameraFrame, min_px: u32) -> Vec<u32> {
    frame
        .visible_tags
        .iter()
        .filter(|t| t.width() >= min_px && t.height() >= min_px)
        .map(|t| t.id)
        .collect()
}

/// Exact unicycle arc over time `t`.
pub fn integrate_unicycle(pose: &Pose2D, v: f64, w: f64, t: f64) -> Pose2D {
    let th = pose.theta;
    if w.abs() < 1e-9 {
        Pose2D::new(pose.x + v * t * th.cos(), pose.y + v * t * th.sin(), th + w * t)
    } else {
        let r = v / w;
        let th1 = th + w * t;
        Pose2D::new(
            pose.x + r * (th1.sin() - th.sin()),
            pose.y + r * (th.cos() - th1.cos()),
            th1,
        )
    }
}

/// Advance a pose by a travelled distance and a rotation, along the arc they imply.
fn integrate_increment(pose: &Pose2D, distance: f64, rotation: f64) -> Pose2D {
    integrate_unicycle(pose, distance, rotation, 1.0)
}

#[derive(Debug, Clone)]
pub struct WorldModel {
    pub config: SimConfig,
    pub truth: TruthGrid,
    pub tags: Vec<TagMarker>,
    pub robots: Vec<RobotBody>,
    pub tick: u64,
    pub seed: u64,
    rng: ChaCha8Rng,
}

impl WorldModel {
    pub fn new(config: SimConfig, truth: TruthGrid, tags: Vec<TagMarker>, seed: u64) -> Self {
        assert!(config.dt > 0.0, "dt must be positive");
        Self {
            config,
            truth,
            tags,
            robots: Vec::new(),
            tick: 0,
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn add_robot(&mut self, id: impl Into<String>, spawn: Pose2D) {
        let r = RobotBody::new(id, spawn, self.config.robot_radius);
        self.robots.push(r);
    }

    pub fn time(&self) -> f64 {
        self.tick as f64 * self.config.dt
    }

    pub fn robot(&self, id: &str) -> Result<&RobotBody, SimError> {
        self.robots
            .iter()
            .find(|r| r.id == id)
            .ok_or_else(|| SimError::UnknownRobot(id.to_string()))
    }

    pub fn robot_mut(&mut self, id: &str) -> Result<&mut RobotBody, SimError> {
        self.robots
            .iter_mut()
            .find(|r| r.id == id)
            .ok_or_else(|| SimError::UnknownRobot(id.to_string()))
    }

    /// Set a robot's commanded twist (clamped); it is held until the next command.
    pub fn command(&mut self, id: &str, twist: Twist2D) -> Result<(), SimError> {
        let (ml, ma) = (self.config.max_linear, self.config.max_angular);
        self.robot_mut(id)?.commanded = twist.clamped(ml, ma);
        Ok(())
    }

    pub fn step(&mut self) {
        let dt = self.config.dt;
        let noise = self.config.odom_noise;
        let battery = self.config.battery;
        for i in 0..self.robots.len() {
            let (v, w) = {
                let r = &self.robots[i];
                (r.commanded.linear, r.commanded.angular)
            };
            let start = self.robots[i].pose_true;
            let radius = self.robots[i].radius;
            let full = integrate_unicycle(&start, v, w, dt);
            let (next, frac) = self.resolve_motion(&start, v, w, dt, radius, full);
            let truncated = frac < 1.0;

            // Travelled distance and rotation of the true motion drive odometry.
            // A truncated step is the arc up to contact, then a turn in place.
            let distance = v * dt * frac;
            let rotation = angle_diff(next.theta, start.theta);
            let arc = if truncated { w * dt * frac } else { rotation };
            let spin = rotation - arc;
            let (od, orot, ospin) = if noise.enabled {
                let n1: f64 = self.rng.sample(StandardNormal);
                let n2: f64 = self.rng.sample(StandardNormal);
                let n3: f64 = self.rng.sample(StandardNormal);
                (
                    distance * (1.0 + noise.sigma_distance * n1),
                    arc * (1.0 + noise.sigma_rotation * n2) + noise.sigma_heading_per_m * distance.abs() * n3,
                    spin * (1.0 + noise.sigma_rotation * n2),
                )
            } else {
                (distance, arc, spin)
            };

            let r = &mut self.robots[i];
            r.pose_odom = integrate_increment(&r.pose_odom, od, orot);
            if ospin != 0.0 {
                r.pose_odom = Pose2D::new(r.pose_odom.x, r.pose_odom.y, r.pose_odom.theta + ospin);
            }
            r.pose_true = next;
            r.distance_travelled += distance.abs();
            if truncated {
                r.contacts += 1;
            }
            let drain = (battery.idle_rate + battery.speed_rate * v.abs()) * dt;
            r.battery = (r.battery - drain).max(0.0);
        }
        self.tick += 1;
    }

    /// Truncates the arc at first contact. Rotation is never blocked (the body is a disc).
    fn resolve_motion(
        &self,
        start: &Pose2D,
        v: f64,
        w: f64,
        dt: f64,
        radius: f64,
        full: Pose2D,
    ) -> (Pose2D, f64) {
        let length = (v * dt).abs();
        if length == 0.0 {
            return (full, 1.0);
        }
        let res = self.truth.resolution();
        let n = ((length / (res * 0.25)).ceil() as usize).max(1);
        let free = |s: f64, truth: &TruthGrid| {
            let p = integrate_unicycle(start, v, w, dt * s);
            truth.disc_is_free(p.position(), radius)
        };
        let mut last_free = 0.0;
        for k in 1..=n {
            let s = k as f64 / n as f64;
            if free(s, &self.truth) {
                last_free = s;
            } else {
                let mut lo = last_free;
                let mut hi = s;
                for _ in 0..12 {
                    let mid = 0.5 * (lo + hi);
                    if free(mid, &self.truth) {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                let p = integrate_unicycle(start, v, w, dt * lo);
                return (Pose2D::new(p.x, p.y, full.theta), lo);
            }
        }
        (full, 1.0)
    }

    pub fn scan(&self, robot_id: &str) -> Result<LaserScan, SimError> {
        let robot = self.robot(robot_id)?;
        let lidar = &self.config.lidar;
        let inc = lidar.angle_increment();
        let pose = robot.pose_true;
        let ranges = (0..lidar.beams)
            .map(|i| {
                let a = pose.theta + lidar.angle_min() + i as f64 * inc;
                self.truth
                    .cast_ray(pose.position(), a, lidar.range_max)
                    .filter(|&d| d > 0.0)
                    .unwrap_or(f64::INFINITY)
            })
            .collect();
        Ok(LaserScan {
            angle_min: lidar.angle_min(),
            angle_increment: inc,
            range_max: lidar.range_max,
            ranges,
            stamp_tick: self.tick,
        })
    }

    pub fn render_camera(&self, robot_id: &str) -> Result<CameraFrame, SimError> {
        let robot = self.robot(robot_id)?;
        let cam = &self.config.camera;
        let (w, h) = (cam.width, cam.height);
        let f = cam.focal_px();
        let pose = robot.pose_true;
        let mut rgb = vec![0u8; 3 * w * h];
        let horizon = h as f64 / 2.0;

        for x in 0..w {
            let rel = ((w as f64 / 2.0 - (x as f64 + 0.5)) / f).atan();
            let hit = self.truth.cast_ray(pose.position(), pose.theta + rel, cam.range);
            let (top, bottom, shade) = match hit {
                Some(d) => {
                    let perp = (d * rel.cos()).max(1e-3);
                    let half = (f * cam.wall_height / perp) / 2.0;
                    let shade = (1.0 - d / cam.range).clamp(0.15, 1.0);
                    ((horizon - half).max(0.0), (horizon + half).min(h as f64), shade)
                }
                None => (horizon, horizon, 0.0),
            };
            for y in 0..h {
                let yc = y as f64 + 0.5;
                let px = if yc < top {
                    [70, 70, 80]
                } else if yc < bottom {
                    let s = (200.0 * shade) as u8;
                    [s, s, (s as f64 * 0.9) as u8]
                } else {
                    [110, 95, 80]
                };
                let o = 3 * (y * w + x);
                rgb[o..o + 3].copy_from_slice(&px);
            }
        }

        let mut visible = Vec::new();
        for tag in &self.tags {
            let Some(view) = self.project_tag(&pose, tag) else {
                continue;
            };
            let color = tag_color(tag.id);
            for y in view.y0..view.y1 {
                for x in view.x0..view.x1 {
                    let o = 3 * (y as usize * w + x as usize);
                    rgb[o..o + 3].copy_from_slice(&color);
                }
            }
            visible.push(view);
        }

        Ok(CameraFrame {
            width: w,
            height: h,
            rgb,
            stamp_tick: self.tick,
            visible_tags: visible,
        })
    }

    fn project_tag(&self, pose: &Pose2D, tag: &TagMarker) -> Option<TagView> {
        let cam = &self.config.camera;
        let dx = tag.pose.x - pose.x;
        let dy = tag.pose.y - pose.y;
        let dist = dx.hypot(dy);
        if dist > cam.range || dist < 1e-6 {
            return None;
        }
        let bearing = dy.atan2(dx);
        let rel = angle_diff(bearing, pose.theta);
        if rel.abs() > cam.hfov / 2.0 {
            return None;
        }
        if let Some(hit) = self.truth.cast_ray(pose.position(), bearing, dist) {
            if hit < dist - 1e-6 {
                return None;
            }
        }
        let f = cam.focal_px();
        let depth = dist * rel.cos();
        let cx = cam.width as f64 / 2.0 - f * rel.tan();
        let cy = cam.height as f64 / 2.0;
        let side = f * tag.size / depth;
        let clip = |v: f64, hi: usize| v.round().clamp(0.0, hi as f64) as u32;
        let x0 = clip(cx - side / 2.0, cam.width);
        let x1 = clip(cx + side / 2.0, cam.width);
        let y0 = clip(cy - side / 2.0, cam.height);
        let y1 = clip(cy + side / 2.0, cam.height);
        if x1 <= x0 || y1 <= y0 {
            return None;
        }
        Some(TagView { id: tag.id, x0, y0, x1, y1 })
    }

    /// Ids of the tags a robot's camera currently detects.
    pub fn detect(&self, robot_id: &str) -> Result<Vec<u32>, SimError> {
        let robot = self.robot(robot_id)?;
        let min = self.config.camera.detect_min_px;
        Ok(self
            .tags
            .iter()
            .filter_map(|t| self.project_tag(&robot.pose_true, t))
            .filter(|v| v.width() >= min && v.height() >= min)
            .map(|v| v.id)
            .collect())
    }
}

fn tag_color(id: u32) -> [u8; 3] {
    const PALETTE: [[u8; 3]; 6] = [
        [230, 40, 40],
        [40, 200, 60],
        [40, 90, 230],
        [230, 200, 30],
        [200, 40, 200],
        [30, 200, 200],
    ];
    PALETTE[id as usize % PALETTE.len()]
}

/// Bearing of a scan beam in the world frame.
pub fn beam_world_angle(pose: &Pose2D, scan: &LaserScan, i: usize) -> f64 {
    normalize_angle(pose.theta + scan.beam_angle(i))
}
