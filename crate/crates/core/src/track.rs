//! Closed race tracks: an ordered centerline with per-point widths,
//! nearest-point queries, arc-length lookup and curvature, plus the
//! built-in track shapes shipped with the repo.

use std::f64::consts::PI;
use std::path::Path;

use crate::error::{Error, Result};
use crate::state::{angle_diff, wrap_angle};

pub const TRACK_HEADER: &str = "s,x,y,w_left,w_right";

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrackPoint {
    pub s: f64,
    pub x: f64,
    pub y: f64,
    pub w_left: f64,
    pub w_right: f64,
}

#[derive(Clone, Debug)]
pub struct Track {
    points: Vec<TrackPoint>,
    length: f64,
    /// Signed curvature at each point, smoothed over a small window.
    curvature: Vec<f64>,
}

#[derive(Clone, Copy, Debug)]
pub struct TrackQuery {
    pub s: f64,
    /// Signed lateral offset from the centerline, positive to the left of
    /// the direction of travel.
    pub lateral_offset: f64,
    pub inside: bool,
    /// Index of the nearest centerline segment; feed back as a hint.
    pub segment: usize,
}

impl Track {
    /// Build a closed track from centerline points `(x, y, w_left,
    /// w_right)`. The loop closes from the last point back to the first;
    /// that closing gap must be under one meter.
    pub fn from_centerline(pts: &[(f64, f64, f64, f64)]) -> Result<Self> {
        if pts.len() < 8 {
            return Err(Error::InvalidInput(format!(
                "track needs at least 8 centerline points, got {}",
                pts.len()
            )));
        }
        let first = pts[0];
        let last = pts[pts.len() - 1];
        let gap = ((last.0 - first.0).powi(2) + (last.1 - first.1).powi(2)).sqrt();
        if gap >= 1.0 {
            return Err(Error::InvalidInput(format!(
                "track closure gap {gap:.2} m exceeds 1 m"
            )));
        }
        let mut points = Vec::with_capacity(pts.len());
        let mut s = 0.0;
        for (i, &(x, y, wl, wr)) in pts.iter().enumerate() {
            if !(wl > 0.0) || !(wr > 0.0) {
                return Err(Error::InvalidInput(format!(
                    "track widths must be positive at point {i}"
                )));
            }
            if i > 0 {
                let p = &pts[i - 1];
                s += ((x - p.0).powi(2) + (y - p.1).powi(2)).sqrt();
            }
            points.push(TrackPoint {
                s,
                x,
                y,
                w_left: wl,
                w_right: wr,
            });
        }
        let length = s + gap.max(1e-9);
        let curvature = compute_curvature(&points, length);
        Ok(Self {
            points,
            length,
            curvature,
        })
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    pub fn points(&self) -> &[TrackPoint] {
        &self.points
    }

    fn segment_endpoints(&self, i: usize) -> (&TrackPoint, &TrackPoint) {
        let j = (i + 1) % self.points.len();
        (&self.points[i], &self.points[j])
    }

    fn project_to_segment(&self, i: usize, x: f64, y: f64) -> (f64, f64, f64) {
        let (a, b) = self.segment_endpoints(i);
        let dx = b.x - a.x;
        let dy = b.y - a.y;
        let len_sq = dx * dx + dy * dy;
        let t = if len_sq > 0.0 {
            (((x - a.x) * dx + (y - a.y) * dy) / len_sq).clamp(0.0, 1.0)
        } else {
            0.0
        };
        let px = a.x + t * dx;
        let py = a.y + t * dy;
        let dist_sq = (x - px) * (x - px) + (y - py) * (y - py);
        (t, px, dist_sq)
    }

    fn query_range(&self, x: f64, y: f64, indices: impl Iterator<Item = usize>) -> TrackQuery {
        let mut best = (f64::MAX, 0usize, 0.0f64, 0.0f64);
        for i in indices {
            let (t, px, dist_sq) = self.project_to_segment(i, x, y);
            if dist_sq < best.0 {
                best = (dist_sq, i, t, px);
            }
        }
        let (_, i, t, _) = best;
        let (a, b) = self.segment_endpoints(i);
        let dx = b.x - a.x;
        let dy = b.y - a.y;
        let seg_len = (dx * dx + dy * dy).sqrt();
        let px = a.x + t * dx;
        let py = a.y + t * dy;
        // positive offset = left of travel direction
        let cross = dx * (y - py) - dy * (x - px);
        let offset = cross.signum() * ((x - px).powi(2) + (y - py).powi(2)).sqrt();
        let s = (a.s + t * seg_len) % self.length;
        let inside = offset <= a.w_left && offset >= -a.w_right;
        TrackQuery {
            s,
            lateral_offset: offset,
            inside,
            segment: i,
        }
    }

    /// Nearest-centerline projection over the whole track.
    pub fn query(&self, x: f64, y: f64) -> TrackQuery {
        self.query_range(x, y, 0..self.points.len())
    }

    /// Projection restricted to `window` segments on each side of a hint
    /// segment. Used in rollouts where consecutive queries stay local.
    pub fn query_hint(&self, x: f64, y: f64, hint: usize, window: usize) -> TrackQuery {
        let n = self.points.len();
        let span = (2 * window + 1).min(n);
        let start = hint + n - window.min(n - 1);
        self.query_range(x, y, (0..span).map(move |k| (start + k) % n))
    }

    /// Centerline position at arc length s (wrapped).
    pub fn point_at(&self, s: f64) -> (f64, f64) {
        let (i, t) = self.locate(s);
        let (a, b) = self.segment_endpoints(i);
        (a.x + t * (b.x - a.x), a.y + t * (b.y - a.y))
    }

    /// Tangent heading at arc length s (wrapped).
    pub fn heading_at(&self, s: f64) -> f64 {
        let (i, _) = self.locate(s);
        let (a, b) = self.segment_endpoints(i);
        (b.y - a.y).atan2(b.x - a.x)
    }

    /// Smoothed signed curvature at arc length s.
    pub fn curvature_at(&self, s: f64) -> f64 {
        let (i, _) = self.locate(s);
        self.curvature[i]
    }

    fn locate(&self, s: f64) -> (usize, f64) {
        let s = s.rem_euclid(self.length);
        // binary search for the last point with point.s <= s
        let i = match self
            .points
            .binary_search_by(|p| p.s.partial_cmp(&s).unwrap())
        {
            Ok(i) => i,
            Err(0) => 0,
            Err(i) => i - 1,
        };
        let (a, b) = self.segment_endpoints(i);
        let seg_len = if i + 1 == self.points.len() {
            self.length - a.s
        } else {
            b.s - a.s
        };
        let t = if seg_len > 0.0 {
            ((s - a.s) / seg_len).clamp(0.0, 1.0)
        } else {
            0.0
        };
        (i, t)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        use std::fmt::Write as _;
        let mut out = String::new();
        out.push_str(TRACK_HEADER);
        out.push('\n');
        for p in &self.points {
            writeln!(
                out,
                "{:.9e},{:.9e},{:.9e},{:.9e},{:.9e}",
                p.s, p.x, p.y, p.w_left, p.w_right
            )
            .unwrap();
        }
        std::fs::write(path, out)?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| Error::Parse("empty track file".into()))?;
        if header.trim() != TRACK_HEADER {
            return Err(Error::Parse(format!("unexpected track header: {header}")));
        }
        let mut pts = Vec::new();
        for (no, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let vals: std::result::Result<Vec<f64>, _> =
                line.split(',').map(|v| v.trim().parse::<f64>()).collect();
            let vals = vals.map_err(|e| Error::Parse(format!("track line {}: {e}", no + 2)))?;
            if vals.len() != 5 {
                return Err(Error::Parse(format!(
                    "track line {}: expected 5 columns",
                    no + 2
                )));
            }
            pts.push((vals[1], vals[2], vals[3], vals[4]));
        }
        Self::from_centerline(&pts)
    }

    /// Circle of the given radius, constant width.
    pub fn ring(radius: f64, half_width: f64, spacing: f64) -> Self {
        let n = ((2.0 * PI * radius / spacing).ceil() as usize).max(8);
        let pts: Vec<(f64, f64, f64, f64)> = (0..n)
            .map(|i| {
                let th = 2.0 * PI * i as f64 / n as f64;
                (
                    radius * th.cos(),
                    radius * th.sin(),
                    half_width,
                    half_width,
                )
            })
            .collect();
        Self::from_centerline(&pts).expect("ring construction is valid")
    }

    /// Stadium shape: two straights joined by semicircles. Long straights
    /// let the scripted driver reach high speeds.
    pub fn oval(straight: f64, radius: f64, half_width: f64, spacing: f64) -> Self {
        let mut dense: Vec<(f64, f64)> = Vec::new();
        let arc_steps = ((PI * radius / 0.25).ceil() as usize).max(16);
        // bottom straight, left to right, at y = -radius
        let straight_steps = ((straight / 0.25).ceil() as usize).max(2);
        for i in 0..straight_steps {
            let t = i as f64 / straight_steps as f64;
            dense.push((t * straight, -radius));
        }
        // right semicircle around (straight, 0)
        for i in 0..arc_steps {
            let th = -PI / 2.0 + PI * i as f64 / arc_steps as f64;
            dense.push((straight + radius * th.cos(), radius * th.sin()));
        }
        // top straight, right to left, at y = +radius
        for i in 0..straight_steps {
            let t = i as f64 / straight_steps as f64;
            dense.push((straight * (1.0 - t), radius));
        }
        // left semicircle around (0, 0)
        for i in 0..arc_steps {
            let th = PI / 2.0 + PI * i as f64 / arc_steps as f64;
            dense.push((radius * th.cos(), radius * th.sin()));
        }
        Self::from_dense_loop(&dense, half_width, spacing)
    }

    /// Mixed-curvature closed loop built from a smooth polar curve, so
    /// corner radii vary along the lap.
    pub fn mixed(half_width: f64, spacing: f64) -> Self {
        let n = 4000;
        let dense: Vec<(f64, f64)> = (0..n)
            .map(|i| {
                let th = 2.0 * PI * i as f64 / n as f64;
                let r = 80.0 + 18.0 * (2.0 * th).cos() - 10.0 * (3.0 * th).sin();
                (r * th.cos(), r * th.sin())
            })
            .collect();
        Self::from_dense_loop(&dense, half_width, spacing)
    }

    /// Resample a dense closed polyline at roughly uniform arc-length
    /// spacing.
    fn from_dense_loop(dense: &[(f64, f64)], half_width: f64, spacing: f64) -> Self {
        let mut pts = Vec::new();
        let mut acc = spacing; // emit the first point immediately
        for i in 0..dense.len() {
            let (x, y) = dense[i];
            if acc >= spacing {
                pts.push((x, y, half_width, half_width));
                acc = 0.0;
            }
            let (nx, ny) = dense[(i + 1) % dense.len()];
            acc += ((nx - x).powi(2) + (ny - y).powi(2)).sqrt();
        }
        Self::from_centerline(&pts).expect("resampled loop is valid")
    }
}

fn compute_curvature(points: &[TrackPoint], length: f64) -> Vec<f64> {
    let n = points.len();
    let heading = |i: usize| -> f64 {
        let a = &points[i];
        let b = &points[(i + 1) % n];
        (b.y - a.y).atan2(b.x - a.x)
    };
    let seg_len = |i: usize| -> f64 {
        let a = &points[i];
        if i + 1 == n {
            length - a.s
        } else {
            points[i + 1].s - a.s
        }
    };
    let raw: Vec<f64> = (0..n)
        .map(|i| {
            let prev = (i + n - 1) % n;
            let dth = angle_diff(heading(i), heading(prev));
            let ds = 0.5 * (seg_len(prev) + seg_len(i));
            if ds > 0.0 {
                dth / ds
            } else {
                0.0
            }
        })
        .collect();
    // light smoothing over +-2 points
    (0..n)
        .map(|i| {
            let mut acc = 0.0;
            for k in 0..5 {
                acc += raw[(i + n + k - 2) % n];
            }
            acc / 5.0
        })
        .collect()
}

/// Heading of the track start, useful for spawning a vehicle aligned with
/// the course.
pub fn start_pose(track: &Track) -> (f64, f64, f64) {
    let (x, y) = track.point_at(0.0);
    (x, y, wrap_angle(track.heading_at(0.0)))
}
