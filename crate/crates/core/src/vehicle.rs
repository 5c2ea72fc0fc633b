//! Longitudinal vehicle models along a fixed reference path.
//!
//! The planner only chooses a speed profile, so the ego state is reduced to
//! arc length `s` and speed `v` on a [`ReferencePath`]. Footprints are sets of
//! rectangles; a tractor-trailer is two rectangles whose centers follow the
//! path at fixed longitudinal offsets.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};

/// A planar pose: position in meters and heading in radians.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
}

impl Pose {
    pub fn new(x: f64, y: f64, heading: f64) -> Self {
        Self { x, y, heading }
    }

    pub fn position(&self) -> [f64; 2] {
        [self.x, self.y]
    }

    /// Maps a body-frame offset (forward, left) into the world frame.
    pub fn transform(&self, offset: [f64; 2]) -> [f64; 2] {
        let (sin, cos) = self.heading.sin_cos();
        [
            self.x + cos * offset[0] - sin * offset[1],
            self.y + sin * offset[0] + cos * offset[1],
        ]
    }
}

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_angle(angle: f64) -> f64 {
    let mut a = (angle + PI).rem_euclid(2.0 * PI) - PI;
    if a <= -PI {
        a += 2.0 * PI;
    }
    a
}

/// Maximum waypoint spacing of a [`ReferencePath`], meters.
pub const RESAMPLE_SPACING: f64 = 1.0;

/// Polyline reference path parameterized by arc length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferencePath {
    waypoints: Vec<Pose>,
    cumulative_arclength: Vec<f64>,
}

impl ReferencePath {
    /// Builds a path from `(x, y)` points; each heading is the direction of
    /// the outgoing segment (the last point reuses the incoming one).
    /// Consecutive duplicate points are dropped and segments longer than
    /// [`RESAMPLE_SPACING`] are subdivided, so headings only blend over the
    /// last sub-segment before a corner.
    pub fn from_points(points: &[[f64; 2]]) -> Result<Self> {
        let mut pts: Vec<[f64; 2]> = Vec::with_capacity(points.len());
        for p in points {
            if !p[0].is_finite() || !p[1].is_finite() {
                return Err(Error::InvalidPath("non-finite waypoint".into()));
            }
            if let Some(last) = pts.last() {
                if (p[0] - last[0]).hypot(p[1] - last[1]) < 1e-9 {
                    continue;
                }
            }
            pts.push(*p);
        }
        if pts.len() < 2 {
            return Err(Error::InvalidPath(
                "a reference path needs at least two distinct waypoints".into(),
            ));
        }
        let mut dense = Vec::with_capacity(pts.len());
        for w in pts.windows(2) {
            let len = (w[1][0] - w[0][0]).hypot(w[1][1] - w[0][1]);
            let pieces = (len / RESAMPLE_SPACING).ceil().max(1.0) as usize;
            for k in 0..pieces {
                let t = k as f64 / pieces as f64;
                dense.push([w[0][0] + t * (w[1][0] - w[0][0]), w[0][1] + t * (w[1][1] - w[0][1])]);
            }
        }
        dense.push(*pts.last().expect("two points"));
        let pts = dense;
        let mut waypoints = Vec::with_capacity(pts.len());
        let mut cumulative = Vec::with_capacity(pts.len());
        let mut total = 0.0;
        for i in 0..pts.len() {
            let (a, b) = if i + 1 < pts.len() {
                (pts[i], pts[i + 1])
            } else {
                (pts[i - 1], pts[i])
            };
            let heading = (b[1] - a[1]).atan2(b[0] - a[0]);
            if i > 0 {
                total += (pts[i][0] - pts[i - 1][0]).hypot(pts[i][1] - pts[i - 1][1]);
            }
            waypoints.push(Pose::new(pts[i][0], pts[i][1], heading));
            cumulative.push(total);
        }
        Ok(Self {
            waypoints,
            cumulative_arclength: cumulative,
        })
    }

    /// A straight path from `start` to `end`.
    pub fn straight(start: [f64; 2], end: [f64; 2]) -> Result<Self> {
        Self::from_points(&[start, end])
    }

    pub fn waypoints(&self) -> &[Pose] {
        &self.waypoints
    }

    pub fn cumulative_arclength(&self) -> &[f64] {
        &self.cumulative_arclength
    }

    pub fn length(&self) -> f64 {
        *self.cumulative_arclength.last().expect("path has waypoints")
    }

    /// Pose at arc length `s`, interpolating position linearly and heading
    /// along the shorter arc between the bracketing waypoints.
    pub fn pose_at(&self, s: f64) -> Result<Pose> {
        let len = self.length();
        if !(s.is_finite() && (-1e-9..=len + 1e-9).contains(&s)) {
            return Err(Error::ArcLengthOutOfRange { s, length: len });
        }
        Ok(self.interpolate(s.clamp(0.0, len)))
    }

    /// Like [`pose_at`](Self::pose_at) but clamps `s` onto the path.
    pub fn pose_at_clamped(&self, s: f64) -> Pose {
        self.interpolate(s.clamp(0.0, self.length()))
    }

    fn interpolate(&self, s: f64) -> Pose {
        let cum = &self.cumulative_arclength;
        // index of the segment [i, i+1] containing s
        let i = match cum.binary_search_by(|c| c.total_cmp(&s)) {
            Ok(i) => i.min(cum.len() - 2),
            Err(i) => i.saturating_sub(1).min(cum.len() - 2),
        };
        let a = &self.waypoints[i];
        let b = &self.waypoints[i + 1];
        let seg = cum[i + 1] - cum[i];
        let t = ((s - cum[i]) / seg).clamp(0.0, 1.0);
        if t == 0.0 {
            return *a;
        }
        if t == 1.0 {
            return *b;
        }
        let dh = wrap_angle(b.heading - a.heading);
        Pose::new(
            a.x + t * (b.x - a.x),
            a.y + t * (b.y - a.y),
            wrap_angle(a.heading + t * dh),
        )
    }
}

/// Ego state along the reference path.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EgoKinematicState {
    /// Arc length along the reference path, meters.
    pub s: f64,
    /// Speed, m/s.
    pub v: f64,
}

impl EgoKinematicState {
    pub fn new(s: f64, v: f64) -> Self {
        Self { s, v }
    }
}

/// Advances the longitudinal double integrator by one step of constant
/// acceleration. Speed saturates at zero inside the step (the distance is
/// integrated only up to the stopping instant) and `s` saturates at the end
/// of the path.
pub fn advance_on_path(
    state: EgoKinematicState,
    accel: f64,
    dt: f64,
    path: &ReferencePath,
) -> EgoKinematicState {
    let v_end = state.v + accel * dt;
    let (v_next, distance) = if v_end >= 0.0 {
        (v_end, 0.5 * (state.v + v_end) * dt)
    } else {
        // decelerating through zero: stop at t* = v / |a|
        let t_stop = if accel < 0.0 { state.v / -accel } else { 0.0 };
        (0.0, 0.5 * state.v * t_stop)
    };
    EgoKinematicState {
        s: (state.s + distance).clamp(0.0, path.length()),
        v: v_next,
    }
}

/// A rectangular footprint part, centered `offset` meters ahead of the pose
/// origin along the heading.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FootprintSpec {
    pub length: f64,
    pub width: f64,
    #[serde(default)]
    pub offset: f64,
}

impl FootprintSpec {
    pub fn new(length: f64, width: f64, offset: f64) -> Result<Self> {
        if !(length > 0.0 && width > 0.0) || !offset.is_finite() {
            return Err(Error::InvalidFootprint { length, width });
        }
        Ok(Self {
            length,
            width,
            offset,
        })
    }

    /// World-frame rectangle for a part whose center sits at `center_pose`.
    pub fn rect_at(&self, center_pose: Pose) -> OrientedRect {
        OrientedRect {
            center: center_pose.position(),
            heading: center_pose.heading,
            half_length: 0.5 * self.length,
            half_width: 0.5 * self.width,
        }
    }
}

/// Where each footprint part of the ego sits when the ego reference point is
/// at arc length `s`: parts follow the path tangent at their own offset.
pub fn ego_part_poses<'a>(
    path: &'a ReferencePath,
    parts: &'a [FootprintSpec],
    s: f64,
) -> impl Iterator<Item = Pose> + 'a {
    parts.iter().map(move |p| path.pose_at_clamped(s + p.offset))
}

/// Where each part of a rigid agent sits given its reference pose.
pub fn rigid_part_poses<'a>(
    pose: Pose,
    parts: &'a [FootprintSpec],
) -> impl Iterator<Item = Pose> + 'a {
    parts.iter().map(move |p| {
        let c = pose.transform([p.offset, 0.0]);
        Pose::new(c[0], c[1], pose.heading)
    })
}

/// Rectangle with arbitrary orientation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrientedRect {
    pub center: [f64; 2],
    pub heading: f64,
    pub half_length: f64,
    pub half_width: f64,
}

impl OrientedRect {
    fn axes(&self) -> [[f64; 2]; 2] {
        let (s, c) = self.heading.sin_cos();
        [[c, s], [-s, c]]
    }

    fn projected_radius(&self, axis: [f64; 2]) -> f64 {
        let [u, w] = self.axes();
        self.half_length * (u[0] * axis[0] + u[1] * axis[1]).abs()
            + self.half_width * (w[0] * axis[0] + w[1] * axis[1]).abs()
    }

    /// Separating-axis overlap test (touching counts as overlap).
    pub fn overlaps(&self, other: &OrientedRect) -> bool {
        let d = [
            other.center[0] - self.center[0],
            other.center[1] - self.center[1],
        ];
        let [a0, a1] = self.axes();
        let [b0, b1] = other.axes();
        for axis in [a0, a1, b0, b1] {
            let dist = (d[0] * axis[0] + d[1] * axis[1]).abs();
            if dist > self.projected_radius(axis) + other.projected_radius(axis) {
                return false;
            }
        }
        true
    }
}

/// Emergency-stop parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StopParams {
    /// Deceleration magnitude, m/s^2.
    pub u_stop: f64,
    /// Timestep, seconds.
    pub dt: f64,
    /// Speed limit the stop duration is sized for, m/s.
    pub v_max: f64,
}

fn steps_to_stop(v: f64, u_stop: f64, dt: f64) -> usize {
    if v <= 0.0 {
        return 0;
    }
    let ratio = v / (u_stop * dt);
    // absorb round-off so that exact multiples are not bumped up a step
    (ratio - 1e-9).ceil().max(1.0) as usize
}

impl StopParams {
    pub fn new(u_stop: f64, dt: f64, v_max: f64) -> Result<Self> {
        if !(u_stop > 0.0 && dt > 0.0 && v_max >= 0.0) {
            return Err(Error::InvalidStopParams { u_stop, dt, v_max });
        }
        Ok(Self { u_stop, dt, v_max })
    }

    /// Maximum number of steps an emergency stop can take.
    pub fn t_stop(&self) -> usize {
        steps_to_stop(self.v_max, self.u_stop, self.dt)
    }

    /// The deceleration control, `-u_stop`.
    pub fn control(&self) -> f64 {
        -self.u_stop
    }
}

/// Full-deceleration sequence that brings speed `v0` to rest.
pub fn emergency_stop_controls(v0: f64, params: &StopParams) -> Vec<f64> {
    vec![-params.u_stop; steps_to_stop(v0, params.u_stop, params.dt)]
}
