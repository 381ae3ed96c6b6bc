//! Logged driving data: finite-difference target generation, smoothing,
//! state-space-partitioned splits and CSV serialization.
//!
//! CSV formats (floats written with 10 significant digits):
//!   raw log:      `t,x,y,psi,vx,vy,yaw_rate,accel,steer`
//!   with targets: `t,x,y,psi,vx,vy,yaw_rate,accel,steer,dx,dy,dpsi,dvx,dvy,dyaw_rate`

use nalgebra::DMatrix;
use sha2::{Digest, Sha256};
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::state::{angle_diff, ControlInput, StateDerivative, VehicleState};

pub const RAW_LOG_HEADER: &str = "t,x,y,psi,vx,vy,yaw_rate,accel,steer";
pub const DATASET_HEADER: &str =
    "t,x,y,psi,vx,vy,yaw_rate,accel,steer,dx,dy,dpsi,dvx,dvy,dyaw_rate";

/// One logged timestep before targets exist.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogRow {
    pub state: VehicleState,
    pub control: ControlInput,
    pub t: f64,
}

/// A time-ordered log of (state, control) pairs.
#[derive(Clone, Debug, Default)]
pub struct RawLog {
    pub rows: Vec<LogRow>,
}

/// One training sample: inputs (state, control) and the state-derivative
/// target observed over the following timestep.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Sample {
    pub state: VehicleState,
    pub control: ControlInput,
    pub target: StateDerivative,
    pub timestamp: f64,
}

/// A collection of samples. Time-ordered when produced by
/// [`compute_targets`]; split operations may reorder (each sample keeps its
/// original timestamp as provenance).
#[derive(Clone, Debug, Default)]
pub struct Dataset {
    samples: Vec<Sample>,
}

fn fmt_float(buf: &mut String, v: f64) {
    // 10 significant digits
    write!(buf, "{v:.9e}").unwrap();
}

impl RawLog {
    pub fn new(rows: Vec<LogRow>) -> Self {
        Self { rows }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn to_csv_string(&self) -> String {
        let mut out = String::with_capacity(self.rows.len() * 128 + 64);
        out.push_str(RAW_LOG_HEADER);
        out.push('\n');
        for r in &self.rows {
            let cols = [
                r.t,
                r.state.x,
                r.state.y,
                r.state.psi,
                r.state.vx,
                r.state.vy,
                r.state.yaw_rate,
                r.control.accel,
                r.control.steer,
            ];
            for (i, c) in cols.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                fmt_float(&mut out, *c);
            }
            out.push('\n');
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv_string())?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| Error::Parse("empty file".into()))?;
        if header.trim() != RAW_LOG_HEADER {
            return Err(Error::Parse(format!("unexpected raw log header: {header}")));
        }
        let mut rows = Vec::new();
        for (no, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let v = parse_floats(line, 9, no + 2)?;
            rows.push(LogRow {
                t: v[0],
                state: VehicleState {
                    x: v[1],
                    y: v[2],
                    psi: v[3],
                    vx: v[4],
                    vy: v[5],
                    yaw_rate: v[6],
                },
                control: ControlInput {
                    accel: v[7],
                    steer: v[8],
                },
            });
        }
        Ok(Self { rows })
    }
}

fn parse_floats(line: &str, expect: usize, lineno: usize) -> Result<Vec<f64>> {
    let vals: std::result::Result<Vec<f64>, _> =
        line.split(',').map(|s| s.trim().parse::<f64>()).collect();
    let vals = vals.map_err(|e| Error::Parse(format!("line {lineno}: {e}")))?;
    if vals.len() != expect {
        return Err(Error::Parse(format!(
            "line {lineno}: expected {expect} columns, got {}",
            vals.len()
        )));
    }
    Ok(vals)
}

impl Dataset {
    pub fn from_samples(samples: Vec<Sample>) -> Self {
        Self { samples }
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn to_csv_string(&self) -> String {
        let mut out = String::with_capacity(self.samples.len() * 220 + 64);
        out.push_str(DATASET_HEADER);
        out.push('\n');
        for s in &self.samples {
            let cols = [
                s.timestamp,
                s.state.x,
                s.state.y,
                s.state.psi,
                s.state.vx,
                s.state.vy,
                s.state.yaw_rate,
                s.control.accel,
                s.control.steer,
                s.target.x_dot,
                s.target.y_dot,
                s.target.psi_dot,
                s.target.vx_dot,
                s.target.vy_dot,
                s.target.yaw_accel,
            ];
            for (i, c) in cols.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                fmt_float(&mut out, *c);
            }
            out.push('\n');
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv_string())?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| Error::Parse("empty file".into()))?;
        if header.trim() != DATASET_HEADER {
            return Err(Error::Parse(format!("unexpected dataset header: {header}")));
        }
        let mut samples = Vec::new();
        for (no, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let v = parse_floats(line, 15, no + 2)?;
            samples.push(Sample {
                timestamp: v[0],
                state: VehicleState {
                    x: v[1],
                    y: v[2],
                    psi: v[3],
                    vx: v[4],
                    vy: v[5],
                    yaw_rate: v[6],
                },
                control: ControlInput {
                    accel: v[7],
                    steer: v[8],
                },
                target: StateDerivative {
                    x_dot: v[9],
                    y_dot: v[10],
                    psi_dot: v[11],
                    vx_dot: v[12],
                    vy_dot: v[13],
                    yaw_accel: v[14],
                },
            });
        }
        Ok(Self { samples })
    }

    /// SHA-256 of the canonical CSV serialization, hex-encoded.
    pub fn content_hash(&self) -> String {
        let digest = Sha256::digest(self.to_csv_string().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Finite-difference targets over consecutive log rows: sample i gets
/// target (state_{i+1} - state_i) / (t_{i+1} - t_i), with the yaw
/// difference taken on the wrapped circle. Output has length n-1.
pub fn compute_targets(rows: &[LogRow]) -> Result<Dataset> {
    if rows.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "need at least 2 rows to difference, got {}",
            rows.len()
        )));
    }
    let mut samples = Vec::with_capacity(rows.len() - 1);
    for pair in rows.windows(2) {
        let (a, b) = (&pair[0], &pair[1]);
        let dt = b.t - a.t;
        if !(dt > 0.0) {
            return Err(Error::InvalidInput(format!(
                "timestamps must be strictly increasing ({} then {})",
                a.t, b.t
            )));
        }
        if !a.state.is_finite() || !b.state.is_finite() || !a.control.is_finite() {
            return Err(Error::NonFinite("compute_targets input"));
        }
        let target = StateDerivative {
            x_dot: (b.state.x - a.state.x) / dt,
            y_dot: (b.state.y - a.state.y) / dt,
            psi_dot: angle_diff(b.state.psi, a.state.psi) / dt,
            vx_dot: (b.state.vx - a.state.vx) / dt,
            vy_dot: (b.state.vy - a.state.vy) / dt,
            yaw_accel: (b.state.yaw_rate - a.state.yaw_rate) / dt,
        };
        samples.push(Sample {
            state: a.state,
            control: a.control,
            target,
            timestamp: a.t,
        });
    }
    Ok(Dataset { samples })
}

/// Savitzky-Golay weights for evaluating the local polynomial fit at
/// window position `eval` (0-based within the window).
fn savgol_weights(window: usize, poly_order: usize, eval: usize) -> Vec<f64> {
    let cols = poly_order + 1;
    let mut design = DMatrix::<f64>::zeros(window, cols);
    for j in 0..window {
        let x = j as f64 - eval as f64;
        let mut p = 1.0;
        for k in 0..cols {
            design[(j, k)] = p;
            p *= x;
        }
    }
    let at = design.transpose();
    let normal = &at * &design;
    let solved = normal
        .cholesky()
        .expect("savgol normal equations are SPD for window > poly_order")
        .solve(&at);
    // Fitted value at x=0 is the constant coefficient row.
    solved.row(0).iter().copied().collect()
}

/// Smooth one channel by local polynomial least squares. Edge points are
/// fitted on the first/last full window and evaluated in place, so
/// polynomials up to `poly_order` are reproduced exactly everywhere.
pub fn savgol_smooth(values: &[f64], window: usize, poly_order: usize) -> Result<Vec<f64>> {
    let n = values.len();
    if window % 2 == 0 {
        return Err(Error::InvalidInput("smoothing window must be odd".into()));
    }
    if poly_order >= window {
        return Err(Error::InvalidInput(
            "poly_order must be smaller than window".into(),
        ));
    }
    if window > n {
        return Err(Error::InvalidInput(format!(
            "smoothing window {window} exceeds signal length {n}"
        )));
    }
    let half = window / 2;
    let center = savgol_weights(window, poly_order, half);
    let mut out = vec![0.0; n];
    for i in 0..n {
        let (start, eval) = if i < half {
            (0, i)
        } else if i + half >= n {
            (n - window, i - (n - window))
        } else {
            (i - half, half)
        };
        let w = if eval == half {
            &center
        } else {
            &savgol_weights(window, poly_order, eval)
        };
        out[i] = w
            .iter()
            .zip(&values[start..start + window])
            .map(|(wi, vi)| wi * vi)
            .sum();
    }
    Ok(out)
}

fn smooth_velocity_channels(
    states: &mut [VehicleState],
    window: usize,
    poly_order: usize,
) -> Result<()> {
    let vx: Vec<f64> = states.iter().map(|s| s.vx).collect();
    let vy: Vec<f64> = states.iter().map(|s| s.vy).collect();
    let wz: Vec<f64> = states.iter().map(|s| s.yaw_rate).collect();
    let vx = savgol_smooth(&vx, window, poly_order)?;
    let vy = savgol_smooth(&vy, window, poly_order)?;
    let wz = savgol_smooth(&wz, window, poly_order)?;
    for (i, s) in states.iter_mut().enumerate() {
        s.vx = vx[i];
        s.vy = vy[i];
        s.yaw_rate = wz[i];
    }
    Ok(())
}

/// Smooth the velocity channels (vx, vy, yaw rate) of a raw log before
/// target generation. Positions, yaw and controls are untouched.
pub fn smooth_log(log: &RawLog, window: usize, poly_order: usize) -> Result<RawLog> {
    let mut states: Vec<VehicleState> = log.rows.iter().map(|r| r.state).collect();
    smooth_velocity_channels(&mut states, window, poly_order)?;
    let rows = log
        .rows
        .iter()
        .zip(states)
        .map(|(r, state)| LogRow { state, ..*r })
        .collect();
    Ok(RawLog { rows })
}

/// Same smoothing applied to the state velocity channels of an existing
/// dataset. Length, positions, controls, targets and timestamps are
/// preserved.
pub fn smooth_dataset(ds: &Dataset, window: usize, poly_order: usize) -> Result<Dataset> {
    let mut states: Vec<VehicleState> = ds.samples.iter().map(|s| s.state).collect();
    smooth_velocity_channels(&mut states, window, poly_order)?;
    let samples = ds
        .samples
        .iter()
        .zip(states)
        .map(|(s, state)| Sample { state, ..*s })
        .collect();
    Ok(Dataset { samples })
}

/// Sort samples by longitudinal velocity (stable, ties keep original
/// order) and cut into train/validation/test portions. Sizes are
/// floor(f1*n), floor(f2*n) and the remainder, so each output occupies a
/// disjoint vx interval.
pub fn velocity_sorted_split(
    ds: &Dataset,
    fractions: (f64, f64, f64),
) -> Result<(Dataset, Dataset, Dataset)> {
    let (f1, f2, f3) = fractions;
    if ds.is_empty() {
        return Err(Error::InvalidInput("cannot split an empty dataset".into()));
    }
    if f1 <= 0.0 || f2 <= 0.0 || f3 <= 0.0 {
        return Err(Error::InvalidInput("split fractions must be positive".into()));
    }
    if (f1 + f2 + f3 - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidInput(format!(
            "split fractions must sum to 1, got {}",
            f1 + f2 + f3
        )));
    }
    let n = ds.len();
    let mut sorted = ds.samples.clone();
    sorted.sort_by(|a, b| a.state.vx.partial_cmp(&b.state.vx).unwrap());
    let n_train = ((f1 * n as f64).floor() as usize).min(n);
    let n_val = ((f2 * n as f64).floor() as usize).min(n - n_train);
    let val_end = n_train + n_val;
    let train = sorted[..n_train].to_vec();
    let val = sorted[n_train..val_end].to_vec();
    let test = sorted[val_end..].to_vec();
    Ok((
        Dataset::from_samples(train),
        Dataset::from_samples(val),
        Dataset::from_samples(test),
    ))
}
