//! Self-checks bundled with the library: exact racetrack figures, the
//! randomized discrete corpus and Monte Carlo checks of the disk bound.

use nalgebra::Matrix2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::controller::{Algorithm, ControllerKind, Irb};
use crate::discrete::racetrack::{self, CURVE2, MPH100, MPH70, MPH90};
use crate::discrete::{
    exact_policy_risk, racetrack_model, random_corpus, umdp_transform_check, ControllerPolicy, DiscretePolicy,
    HandDerivedRacetrackPolicy,
};
use crate::error::Result;
use crate::risk::disk_collision_bound;

/// Absolute tolerance of the exact (enumerated) comparisons.
pub const EXACT_TOLERANCE: f64 = 1e-12;

/// Signature of a two-disk collision bound, so alternative (or deliberately
/// broken) implementations can be run through the same check.
pub type DiskBoundFn = fn([f64; 2], &Matrix2<f64>, f64, [f64; 2], &Matrix2<f64>, f64) -> f64;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: &str, passed: bool, detail: String) -> Self {
        Self {
            name: name.to_string(),
            passed,
            detail,
        }
    }

    fn from_result(name: &str, r: Result<(bool, String)>) -> Self {
        match r {
            Ok((passed, detail)) => Self::new(name, passed, detail),
            Err(e) => Self::new(name, false, format!("error: {e}")),
        }
    }
}

/// One row of the racetrack table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RacetrackRow {
    pub policy: String,
    pub exact_risk: f64,
    pub interval_bound: f64,
}

fn racetrack_irb() -> Irb {
    Irb::new(0.1, 0.0, 2).expect("valid bound")
}

fn controller_policy(algorithm: Algorithm, irb: &Irb, n: usize, t: usize) -> ControllerPolicy {
    ControllerPolicy::new(ControllerKind::from_irb(algorithm, irb, n), irb, n, t)
}

/// Exact risk of every racetrack policy of interest against the 0.1 bound.
pub fn racetrack_table() -> Result<Vec<RacetrackRow>> {
    let m = racetrack_model();
    let irb = racetrack_irb();
    let mut rows = Vec::new();
    let mut push = |policy: &str, exact: f64| {
        rows.push(RacetrackRow {
            policy: policy.to_string(),
            exact_risk: exact,
            interval_bound: irb.total(),
        })
    };
    for (label, seq) in [
        ("70 then 70", [MPH70, MPH70]),
        ("70 then 90", [MPH70, MPH90]),
        ("100 then 70", [MPH100, MPH70]),
        ("100 then 90", [MPH100, MPH90]),
    ] {
        push(label, umdp_transform_check(&m, &seq)?.1);
    }
    push("hand-derived jcc-rhc", exact_policy_risk(&m, HandDerivedRacetrackPolicy)?.exact);
    for alg in Algorithm::ALL {
        push(alg.name(), exact_policy_risk(&m, controller_policy(alg, &irb, 2, 2))?.exact);
    }
    Ok(rows)
}

fn racetrack_jcc_rhc() -> Result<(bool, String)> {
    let m = racetrack_model();
    let irb = racetrack_irb();
    let jcc = exact_policy_risk(&m, controller_policy(Algorithm::JccRhc, &irb, 2, 2))?.exact;
    let hand = exact_policy_risk(&m, HandDerivedRacetrackPolicy)?.exact;
    let passed = (jcc - hand).abs() <= EXACT_TOLERANCE && jcc > irb.total() + EXACT_TOLERANCE;
    Ok((
        passed,
        format!("jcc-rhc exact risk {jcc} vs interval bound {} (hand-derived {hand})", irb.total()),
    ))
}

fn racetrack_rb_rhc() -> Result<(bool, String)> {
    let m = racetrack_model();
    let irb = racetrack_irb();
    let rb = exact_policy_risk(&m, controller_policy(Algorithm::RbRhc, &irb, 2, 2))?.exact;
    let mut policy = controller_policy(Algorithm::RbRhc, &irb, 2, 2);
    let first = policy.act(&m, 0, &m.initial)?;
    let mut curve2 = vec![0.0; m.n_states()];
    curve2[CURVE2] = 1.0;
    let second = policy.act(&m, 1, &curve2)?;
    let name = |u: usize| m.control_names[u].clone();
    let passed = rb <= irb.total() + EXACT_TOLERANCE && second == racetrack::MPH70;
    Ok((
        passed,
        format!(
            "rb-rhc exact risk {rb} <= {}; controls {} then {} (budget left {})",
            irb.total(),
            name(first),
            name(second),
            policy.controller.ledger.rho
        ),
    ))
}

/// Corpus size of the randomized discrete checks.
pub const CORPUS_SIZE: usize = 50;
pub const CORPUS_SEED: u64 = 1000;

fn corpus_interval_bound() -> Result<(bool, String)> {
    let mut worst: f64 = f64::NEG_INFINITY;
    let mut violations = 0;
    let corpus = random_corpus(CORPUS_SIZE, CORPUS_SEED);
    for inst in &corpus {
        let p = controller_policy(Algorithm::RbRhc, &inst.irb, inst.n, inst.model.horizon);
        let r = exact_policy_risk(&inst.model, p)?.exact;
        let slack = r - inst.irb.total();
        worst = worst.max(slack);
        if slack > EXACT_TOLERANCE {
            violations += 1;
        }
    }
    Ok((
        violations == 0,
        format!(
            "{} models, {violations} violations, max(risk - bound) = {worst:.3e}",
            corpus.len()
        ),
    ))
}

fn corpus_boole() -> Result<(bool, String)> {
    let mut violations = 0;
    let mut checked = 0;
    for inst in random_corpus(CORPUS_SIZE, CORPUS_SEED) {
        for alg in [Algorithm::RbRhc, Algorithm::JccRhc, Algorithm::PclRhc, Algorithm::JccFh] {
            let p = controller_policy(alg, &inst.irb, inst.n, inst.model.horizon);
            let r = exact_policy_risk(&inst.model, p)?;
            checked += 1;
            if r.boole < r.exact - EXACT_TOLERANCE {
                violations += 1;
            }
        }
    }
    Ok((violations == 0, format!("{checked} policies, {violations} violations")))
}

/// A random two-disk instance.
#[derive(Debug, Clone, PartialEq)]
pub struct DiskInstance {
    pub mu1: [f64; 2],
    pub sigma1: Matrix2<f64>,
    pub r1: f64,
    pub mu2: [f64; 2],
    pub sigma2: Matrix2<f64>,
    pub r2: f64,
}

fn random_spd(rng: &mut ChaCha8Rng) -> Matrix2<f64> {
    let a = rng.random_range(0.1..1.5f64);
    let b = rng.random_range(0.1..1.5f64);
    let th = rng.random_range(0.0..std::f64::consts::PI);
    let (c, s) = (th.cos(), th.sin());
    let r = Matrix2::new(c, -s, s, c);
    r * Matrix2::new(a * a, 0.0, 0.0, b * b) * r.transpose()
}

/// Instances ranging from deep overlap to clear separation.
pub fn random_disk_instances(count: usize, seed: u64) -> Vec<DiskInstance> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let dist = rng.random_range(0.2..8.0f64);
            let dir = rng.random_range(0.0..std::f64::consts::TAU);
            let mu1 = [rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)];
            DiskInstance {
                mu1,
                sigma1: random_spd(&mut rng),
                r1: rng.random_range(0.3..2.0),
                mu2: [mu1[0] + dist * dir.cos(), mu1[1] + dist * dir.sin()],
                sigma2: random_spd(&mut rng),
                r2: rng.random_range(0.3..2.0),
            }
        })
        .collect()
}

/// Sampled overlap probability of an instance and its binomial standard
/// error.
pub fn monte_carlo_overlap(inst: &DiskInstance, samples: usize, rng: &mut ChaCha8Rng) -> (f64, f64) {
    let l1 = inst.sigma1.cholesky().expect("positive definite").l();
    let l2 = inst.sigma2.cholesky().expect("positive definite").l();
    let reach = (inst.r1 + inst.r2).powi(2);
    let mut hits = 0usize;
    for _ in 0..samples {
        let z: [f64; 4] = std::array::from_fn(|_| rng.sample(StandardNormal));
        let dx = inst.mu1[0] + l1[(0, 0)] * z[0] - inst.mu2[0] - l2[(0, 0)] * z[2];
        let dy = inst.mu1[1] + l1[(1, 0)] * z[0] + l1[(1, 1)] * z[1] - inst.mu2[1] - l2[(1, 0)] * z[2] - l2[(1, 1)] * z[3];
        if dx * dx + dy * dy <= reach {
            hits += 1;
        }
    }
    let p = hits as f64 / samples as f64;
    (p, (p * (1.0 - p) / samples as f64).sqrt())
}

/// Bound must dominate the sampled overlap probability less three standard
/// errors on every instance.
pub fn disk_bound_check(bound: DiskBoundFn, instances: usize, samples: usize, seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let mut failures = Vec::new();
    let mut min_margin = f64::INFINITY;
    for (i, inst) in random_disk_instances(instances, seed).iter().enumerate() {
        let analytic = bound(inst.mu1, &inst.sigma1, inst.r1, inst.mu2, &inst.sigma2, inst.r2);
        let (p, se) = monte_carlo_overlap(inst, samples, &mut rng);
        let margin = analytic - (p - 3.0 * se);
        min_margin = min_margin.min(margin);
        if margin < 0.0 {
            failures.push(format!("#{i}: bound {analytic:.4} < mc {p:.4} - 3 se"));
        }
    }
    let detail = if failures.is_empty() {
        format!("{instances} instances x {samples} samples, min margin {min_margin:.3e}")
    } else {
        format!("{} of {instances} instances fail: {}", failures.len(), failures.join("; "))
    };
    Check::new("disk-bound-monte-carlo", failures.is_empty(), detail)
}

/// Instances and samples used by [`run_all`].
pub const DISK_INSTANCES: usize = 20;
pub const DISK_SAMPLES: usize = 200_000;

/// Runs every bundled check with the library's own disk bound.
pub fn run_all() -> Vec<Check> {
    run_all_with(disk_collision_bound)
}

/// Runs every bundled check, using `bound` for the disk-bound check.
pub fn run_all_with(bound: DiskBoundFn) -> Vec<Check> {
    vec![
        Check::from_result("racetrack-jcc-rhc-counterexample", racetrack_jcc_rhc()),
        Check::from_result("racetrack-rb-rhc-within-bound", racetrack_rb_rhc()),
        Check::from_result("corpus-interval-bound", corpus_interval_bound()),
        Check::from_result("corpus-boole-dominance", corpus_boole()),
        disk_bound_check(bound, DISK_INSTANCES, DISK_SAMPLES, 11),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use statrs::function::erf::erfc;

    fn flipped_sign(mu1: [f64; 2], s1: &Matrix2<f64>, r1: f64, mu2: [f64; 2], s2: &Matrix2<f64>, r2: f64) -> f64 {
        let d = (mu1[0] - mu2[0]).hypot(mu1[1] - mu2[1]) - r1 - r2;
        let e = [(mu2[0] - mu1[0]), (mu2[1] - mu1[1])];
        let n = e[0].hypot(e[1]);
        let e = [e[0] / n, e[1] / n];
        let s = s1 + s2;
        let var = e[0] * (s[(0, 0)] * e[0] + s[(0, 1)] * e[1]) + e[1] * (s[(1, 0)] * e[0] + s[(1, 1)] * e[1]);
        0.5 * erfc(-d / (2.0 * var).sqrt())
    }

    #[test]
    fn all_checks_pass() {
        for c in run_all() {
            assert!(c.passed, "{}: {}", c.name, c.detail);
        }
    }

    #[test]
    fn corrupted_bound_is_caught() {
        let c = disk_bound_check(flipped_sign, DISK_INSTANCES, 20_000, 11);
        assert!(!c.passed, "{}", c.detail);
    }

    #[test]
    fn instances_cover_overlap_and_separation() {
        let inst = random_disk_instances(DISK_INSTANCES, 11);
        let gaps: Vec<f64> = inst
            .iter()
            .map(|i| (i.mu1[0] - i.mu2[0]).hypot(i.mu1[1] - i.mu2[1]) - i.r1 - i.r2)
            .collect();
        assert!(gaps.iter().any(|g| *g < 0.0) && gaps.iter().any(|g| *g > 1.0));
    }

    #[test]
    fn racetrack_table_rows() {
        let rows = racetrack_table().unwrap();
        let jcc = rows.iter().find(|r| r.policy == "jcc-rhc").unwrap();
        assert!((jcc.exact_risk - 0.19).abs() < 1e-12);
        let rb = rows.iter().find(|r| r.policy == "rb-rhc").unwrap();
        assert!((rb.exact_risk - 0.1).abs() < 1e-12);
    }
}
