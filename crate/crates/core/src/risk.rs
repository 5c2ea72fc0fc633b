//! Collision-probability bounds.
//!
//! Footprints are covered by disks and every ego-disk/agent-disk pair is
//! bounded in closed form with a one-dimensional Gaussian tail along the line
//! joining the two mean centers. Pair bounds are summed (Boole) across disk
//! pairs and agents and weighted across motion patterns.

use nalgebra::Matrix2;
use statrs::function::erf::erfc;
use std::sync::Arc;

use crate::belief::{max_eigenvalue, open_loop_update, BeliefDynamics, WorldBelief};
use crate::error::Result;
use crate::vehicle::{FootprintSpec, Pose, ReferencePath, StopParams};

/// Part pairs whose bounding circles are separated by more than this many
/// standard deviations contribute nothing (each pair term is below 1e-32).
pub const PRUNE_SIGMAS: f64 = 12.0;

/// Mean centers closer than this are treated as coincident.
pub const COINCIDENT_TOLERANCE: f64 = 1e-9;

/// Default number of disks per footprint rectangle.
pub const DEFAULT_DISKS: usize = 3;

/// A disk in the body frame of its footprint part (origin at the part center).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Disk {
    pub center: [f64; 2],
    pub radius: f64,
}

/// Disks covering one rectangular footprint part.
#[derive(Debug, Clone, PartialEq)]
pub struct DiskCover {
    pub disks: Vec<Disk>,
    pub footprint: FootprintSpec,
}

impl DiskCover {
    /// Radius of the circle around the part center enclosing all disks.
    pub fn bounding_radius(&self) -> f64 {
        self.disks
            .iter()
            .map(|d| d.center[0].hypot(d.center[1]) + d.radius)
            .fold(0.0, f64::max)
    }

    /// True when `p` (part frame) lies in at least one disk.
    pub fn covers(&self, p: [f64; 2]) -> bool {
        self.disks.iter().any(|d| {
            let dx = p[0] - d.center[0];
            let dy = p[1] - d.center[1];
            dx * dx + dy * dy <= d.radius * d.radius * (1.0 + 1e-12)
        })
    }
}

/// Covers a rectangle with `n_disks` equal disks spaced along its length.
pub fn cover_footprint(fp: &FootprintSpec, n_disks: usize) -> DiskCover {
    let n = n_disks.max(1);
    let seg = fp.length / n as f64;
    let radius = (0.5 * seg).hypot(0.5 * fp.width);
    let disks = (0..n)
        .map(|i| Disk {
            center: [-0.5 * fp.length + seg * (i as f64 + 0.5), 0.0],
            radius,
        })
        .collect();
    DiskCover {
        disks,
        footprint: *fp,
    }
}

/// Upper bound on the probability that two Gaussian-centered disks overlap.
///
/// With `e` the unit vector between the mean centers, overlap implies the
/// projection of the center difference on `e` is at most `r1 + r2`, whose
/// probability is `0.5 erfc(d / sqrt(2 e^T (S1 + S2) e))`.
pub fn disk_collision_bound(
    mu1: [f64; 2],
    sigma1: &Matrix2<f64>,
    r1: f64,
    mu2: [f64; 2],
    sigma2: &Matrix2<f64>,
    r2: f64,
) -> f64 {
    let dx = mu1[0] - mu2[0];
    let dy = mu1[1] - mu2[1];
    let dist = dx.hypot(dy);
    if dist < COINCIDENT_TOLERANCE {
        return 1.0;
    }
    let (ex, ey) = (dx / dist, dy / dist);
    let s = sigma1 + sigma2;
    let var = ex * (s[(0, 0)] * ex + s[(0, 1)] * ey) + ey * (s[(1, 0)] * ex + s[(1, 1)] * ey);
    pair_tail(dist - r1 - r2, var)
}

fn pair_tail(d: f64, var: f64) -> f64 {
    if var <= 0.0 {
        return if d > 0.0 {
            0.0
        } else if d < 0.0 {
            1.0
        } else {
            0.5
        };
    }
    (0.5 * erfc(d / (2.0 * var).sqrt())).clamp(0.0, 1.0)
}

/// Collision semantics: disk covers for the ego and each agent, plus passive
/// safety (a stopped ego is never in collision).
#[derive(Debug, Clone, PartialEq)]
pub struct CollisionModel {
    pub path: Arc<ReferencePath>,
    pub ego: Vec<DiskCover>,
    pub agents: Vec<Vec<DiskCover>>,
    pub passive_safety: bool,
}

impl CollisionModel {
    pub fn new(
        path: Arc<ReferencePath>,
        ego_parts: &[FootprintSpec],
        agent_parts: &[Vec<FootprintSpec>],
        n_disks: usize,
    ) -> Self {
        Self {
            path,
            ego: ego_parts.iter().map(|p| cover_footprint(p, n_disks)).collect(),
            agents: agent_parts
                .iter()
                .map(|parts| parts.iter().map(|p| cover_footprint(p, n_disks)).collect())
                .collect(),
            passive_safety: true,
        }
    }
}

struct PlacedPart {
    center: [f64; 2],
    bounding: f64,
    disks: Vec<([f64; 2], f64)>,
    cov: Matrix2<f64>,
    max_var: f64,
}

fn place_ego(model: &CollisionModel, s: f64, var_s: f64) -> Vec<PlacedPart> {
    model
        .ego
        .iter()
        .map(|cover| {
            let pose = model.path.pose_at_clamped(s + cover.footprint.offset);
            let (sin, cos) = pose.heading.sin_cos();
            let cov = Matrix2::new(cos * cos, cos * sin, cos * sin, sin * sin) * var_s;
            PlacedPart {
                center: pose.position(),
                bounding: cover.bounding_radius(),
                disks: cover
                    .disks
                    .iter()
                    .map(|d| (pose.transform(d.center), d.radius))
                    .collect(),
                cov,
                max_var: var_s.max(0.0),
            }
        })
        .collect()
}

fn place_agent(covers: &[DiskCover], mean: [f64; 2], heading: f64, cov: Matrix2<f64>) -> Vec<PlacedPart> {
    let pose = Pose::new(mean[0], mean[1], heading);
    let max_var = max_eigenvalue(&cov).max(0.0);
    covers
        .iter()
        .map(|cover| {
            let off = cover.footprint.offset;
            PlacedPart {
                center: pose.transform([off, 0.0]),
                bounding: cover.bounding_radius(),
                disks: cover
                    .disks
                    .iter()
                    .map(|d| (pose.transform([off + d.center[0], d.center[1]]), d.radius))
                    .collect(),
                cov,
                max_var,
            }
        })
        .collect()
}

fn parts_bound(ego: &[PlacedPart], agent: &[PlacedPart]) -> f64 {
    let mut sum = 0.0;
    for e in ego {
        for a in agent {
            let gap = (e.center[0] - a.center[0]).hypot(e.center[1] - a.center[1])
                - e.bounding
                - a.bounding;
            let sigma = (e.max_var + a.max_var).sqrt();
            if gap > 0.0 && gap > PRUNE_SIGMAS * sigma {
                continue;
            }
            for &(c1, r1) in &e.disks {
                for &(c2, r2) in &a.disks {
                    sum += disk_collision_bound(c1, &e.cov, r1, c2, &a.cov, r2);
                }
            }
        }
    }
    sum
}

/// Unweighted collision bound of every (agent, pattern) pair, flattened in
/// agent-major order, for an ego at arc length `s` with variance `var_s`.
pub(crate) fn pattern_terms(
    model: &CollisionModel,
    b_agents: &[crate::belief::AgentMixture],
    s: f64,
    var_s: f64,
    step: usize,
) -> Result<Vec<f64>> {
    let ego = place_ego(model, s, var_s);
    let mut out = Vec::new();
    for (a, agent) in b_agents.iter().enumerate() {
        let covers = &model.agents[a];
        for p in &agent.patterns {
            let pose = p.at(a, step)?;
            let placed = place_agent(covers, pose.mean, pose.heading, pose.covariance);
            out.push(parts_bound(&ego, &placed));
        }
    }
    Ok(out)
}

/// Weights the per-pattern terms and clamps to a probability.
pub(crate) fn combine_terms(b_agents: &[crate::belief::AgentMixture], terms: &[f64]) -> f64 {
    let mut sum = 0.0;
    let mut i = 0;
    for agent in b_agents {
        for p in &agent.patterns {
            if p.weight > 0.0 {
                sum += p.weight * terms[i];
            }
            i += 1;
        }
    }
    sum.clamp(0.0, 1.0)
}

/// Collision probability bound of a belief.
pub fn g_b(b: &WorldBelief, model: &CollisionModel) -> Result<f64> {
    if model.passive_safety && b.ego.is_stopped() {
        return Ok(0.0);
    }
    let terms = pattern_terms(model, &b.agents, b.ego.mean.s, b.ego.position_variance(), b.step)?;
    Ok(combine_terms(&b.agents, &terms))
}

/// Belief after `tau` emergency-stop steps with no observations.
pub fn f_stop_b(b: &WorldBelief, tau: usize, dynamics: &BeliefDynamics, stop: &StopParams) -> WorldBelief {
    let mut cur = b.clone();
    for _ in 0..tau {
        cur = open_loop_update(&cur, stop.control(), dynamics);
    }
    cur
}

/// Bound on the collision probability during a full emergency stop from `b`:
/// the sum of [`g_b`] over the `t_stop` stop beliefs.
pub fn g_stop_b(
    b: &WorldBelief,
    model: &CollisionModel,
    dynamics: &BeliefDynamics,
    stop: &StopParams,
) -> Result<f64> {
    let mut cur = b.clone();
    let mut sum = 0.0;
    for _ in 0..stop.t_stop() {
        cur = open_loop_update(&cur, stop.control(), dynamics);
        sum += g_b(&cur, model)?;
    }
    Ok(sum.clamp(0.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::belief::{AgentMixture, AgentPattern, EgoBelief, PredictedPose};
    use crate::error::Error;
    use crate::vehicle::EgoKinematicState;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn iso(v: f64) -> Matrix2<f64> {
        Matrix2::new(v, 0.0, 0.0, v)
    }

    #[test]
    fn touching_means_give_half() {
        let p = disk_collision_bound([0.0, 0.0], &iso(0.3), 1.0, [2.0, 0.0], &iso(0.2), 1.0);
        assert_eq!(p, 0.5);
    }

    #[test]
    fn far_tail_vanishes() {
        // sigma_line = 1, d = 100
        let p = disk_collision_bound([0.0, 0.0], &iso(0.5), 1.0, [102.0, 0.0], &iso(0.5), 1.0);
        assert!(p < 1e-100);
    }

    #[test]
    fn coincident_means_are_certain() {
        assert_eq!(disk_collision_bound([1.0, 1.0], &iso(0.1), 0.5, [1.0, 1.0], &iso(0.1), 0.5), 1.0);
    }

    #[test]
    fn zero_variance_is_deterministic() {
        let z = Matrix2::zeros();
        assert_eq!(disk_collision_bound([0.0, 0.0], &z, 1.0, [3.0, 0.0], &z, 1.0), 0.0);
        assert_eq!(disk_collision_bound([0.0, 0.0], &z, 1.0, [1.0, 0.0], &z, 1.0), 1.0);
    }

    #[test]
    fn bound_exceeds_monte_carlo() {
        // mu1=(0,0), S=0.25 I, r=1 each, mu2=(5,0): sigma_line^2 = 0.5, d = 3
        let analytic = disk_collision_bound([0.0, 0.0], &iso(0.25), 1.0, [5.0, 0.0], &iso(0.25), 1.0);
        assert_abs_diff_eq!(analytic, 0.5 * erfc(3.0), epsilon = 1e-15);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 1_000_000;
        let mut hits = 0u64;
        for _ in 0..n {
            let z: [f64; 4] = std::array::from_fn(|_| rng.sample(StandardNormal));
            let dx = 0.5 * z[0] - (5.0 + 0.5 * z[2]);
            let dy = 0.5 * z[1] - 0.5 * z[3];
            if dx * dx + dy * dy <= 4.0 {
                hits += 1;
            }
        }
        let p = hits as f64 / n as f64;
        let se = (p * (1.0 - p) / n as f64).sqrt();
        assert!(analytic >= p - 3.0 * se, "analytic {analytic} mc {p}");
    }

    #[test]
    fn cover_examples() {
        let sq = FootprintSpec::new(2.0, 2.0, 0.0).unwrap();
        let c = cover_footprint(&sq, 1);
        assert_eq!(c.disks.len(), 1);
        assert_eq!(c.disks[0].center, [0.0, 0.0]);
        assert_abs_diff_eq!(c.disks[0].radius, 2.0 / 2f64.sqrt(), epsilon = 1e-15);

        let bus = FootprintSpec::new(12.6, 2.4, 0.0).unwrap();
        let c = cover_footprint(&bus, 3);
        assert_eq!(c.disks.len(), 3);
        assert_abs_diff_eq!(c.disks[0].radius, (2.1f64 * 2.1 + 1.2 * 1.2).sqrt(), epsilon = 1e-12);
        assert_abs_diff_eq!(c.disks[0].radius, 2.419, epsilon = 5e-4);
        assert_abs_diff_eq!(c.disks[1].center[0], 0.0, epsilon = 1e-12);
    }

    fn grid_covered(fp: &FootprintSpec, cover: &DiskCover) -> bool {
        let step = 0.05;
        let nx = (fp.length / step).ceil() as usize;
        let ny = (fp.width / step).ceil() as usize;
        (0..=nx).all(|i| {
            (0..=ny).all(|j| {
                let x = (-0.5 * fp.length + i as f64 * step).min(0.5 * fp.length);
                let y = (-0.5 * fp.width + j as f64 * step).min(0.5 * fp.width);
                cover.covers([x, y])
            })
        })
    }

    #[test]
    fn covers_bus_and_truck_footprints() {
        for (l, w) in [(12.6, 2.4), (5.0, 2.5), (12.5, 2.4), (1.0, 3.0)] {
            let fp = FootprintSpec::new(l, w, 0.0).unwrap();
            for n in 1..=6 {
                assert!(grid_covered(&fp, &cover_footprint(&fp, n)), "{l}x{w} n={n}");
            }
        }
    }

    fn model(passive: bool) -> CollisionModel {
        let path = Arc::new(ReferencePath::straight([0.0, 0.0], [100.0, 0.0]).unwrap());
        let fp = FootprintSpec::new(4.0, 2.0, 0.0).unwrap();
        let mut m = CollisionModel::new(path, &[fp], &[vec![fp]], 2);
        m.passive_safety = passive;
        m
    }

    fn agent_at(weight: f64, x: f64, sigma: f64) -> AgentPattern {
        AgentPattern::new(
            weight,
            (0..10)
                .map(|_| PredictedPose::with_track_std([x, 0.0], 0.0, sigma, sigma))
                .collect(),
        )
    }

    fn ego_belief(s: f64, v: f64, agents: Vec<AgentMixture>) -> WorldBelief {
        WorldBelief {
            ego: EgoBelief::exact(EgoKinematicState::new(s, v)),
            agents,
            step: 0,
        }
    }

    #[test]
    fn g_b_examples() {
        let m = model(true);
        let empty = CollisionModel { agents: vec![], ..m.clone() };
        assert_eq!(g_b(&ego_belief(10.0, 3.0, vec![]), &empty).unwrap(), 0.0);

        let overlapping = vec![AgentMixture { patterns: vec![agent_at(1.0, 10.0, 0.5)] }];
        assert_eq!(g_b(&ego_belief(10.0, 0.0, overlapping.clone()), &m).unwrap(), 0.0);
        assert!(g_b(&ego_belief(10.0, 1.0, overlapping), &m).unwrap() > 0.5);

        let single = vec![AgentMixture { patterns: vec![agent_at(1.0, 14.5, 0.5)] }];
        let p = g_b(&ego_belief(10.0, 1.0, single), &m).unwrap();
        let mixed = vec![AgentMixture {
            patterns: vec![agent_at(0.5, 90.0, 0.5), agent_at(0.5, 14.5, 0.5)],
        }];
        let q = g_b(&ego_belief(10.0, 1.0, mixed), &m).unwrap();
        assert!(p > 0.0);
        assert_abs_diff_eq!(q, 0.5 * p, epsilon = 1e-15);
    }

    #[test]
    fn g_b_reports_horizon_exhaustion() {
        let m = model(true);
        let mut b = ego_belief(10.0, 1.0, vec![AgentMixture { patterns: vec![agent_at(1.0, 50.0, 0.5)] }]);
        b.step = 10;
        assert_eq!(
            g_b(&b, &m),
            Err(Error::HorizonExhausted { agent: 0, requested: 10, available: 10 })
        );
    }

    fn dynamics() -> BeliefDynamics {
        BeliefDynamics::new(Arc::new(ReferencePath::straight([0.0, 0.0], [100.0, 0.0]).unwrap()), 1.0)
    }

    #[test]
    fn stop_rollouts() {
        let d = dynamics();
        let sp = StopParams::new(2.0, 1.0, 6.0).unwrap();
        let stopped = ego_belief(5.0, 0.0, vec![]);
        let r = f_stop_b(&stopped, 3, &d, &sp);
        assert_eq!((r.ego.mean.s, r.ego.mean.v, r.step), (5.0, 0.0, 3));

        let moving = ego_belief(0.0, 2.0, vec![]);
        let r = f_stop_b(&moving, 1, &d, &sp);
        assert_eq!((r.ego.mean.s, r.ego.mean.v), (1.0, 0.0));

        let fast = ego_belief(0.0, 6.0, vec![]);
        assert_eq!(f_stop_b(&fast, sp.t_stop(), &d, &sp).ego.mean.v, 0.0);
    }

    #[test]
    fn g_stop_examples() {
        let d = dynamics();
        let sp = StopParams::new(2.0, 1.0, 6.0).unwrap();
        let m = model(true);
        let far = vec![AgentMixture { patterns: vec![agent_at(1.0, 90.0, 0.5)] }];
        assert_eq!(g_stop_b(&ego_belief(5.0, 0.0, far), &m, &d, &sp).unwrap(), 0.0);
        let empty = CollisionModel { agents: vec![], ..m.clone() };
        assert_eq!(g_stop_b(&ego_belief(5.0, 4.0, vec![]), &empty, &d, &sp).unwrap(), 0.0);

        // definition identity: sum of g_b over the stop rollout
        let near = vec![AgentMixture { patterns: vec![agent_at(1.0, 13.0, 1.0)] }];
        let b = ego_belief(5.0, 6.0, near);
        let by_def: f64 = (1..=sp.t_stop())
            .map(|tau| g_b(&f_stop_b(&b, tau, &d, &sp), &m).unwrap())
            .sum();
        let g = g_stop_b(&b, &m, &d, &sp).unwrap();
        assert!(g > 0.0);
        assert_eq!(g, by_def.clamp(0.0, 1.0));
    }

    proptest! {
        #[test]
        fn bound_is_probability_and_monotone(
            d1 in 0.01f64..20.0, extra in 0.0f64..5.0,
            a in 0.01f64..2.0, b in 0.01f64..2.0, c in -0.5f64..0.5,
            r1 in 0.1f64..3.0, r2 in 0.1f64..3.0, angle in -3.2f64..3.2,
        ) {
            let c = c * (a * b).sqrt();
            let s1 = Matrix2::new(a, c, c, b);
            let s2 = iso(0.5 * a);
            let dir = [angle.cos(), angle.sin()];
            let p1 = disk_collision_bound([0.0, 0.0], &s1, r1, [d1 * dir[0], d1 * dir[1]], &s2, r2);
            let d2 = d1 + extra;
            let p2 = disk_collision_bound([0.0, 0.0], &s1, r1, [d2 * dir[0], d2 * dir[1]], &s2, r2);
            prop_assert!((0.0..=1.0).contains(&p1));
            prop_assert!(p2 <= p1);
        }
    }
}
