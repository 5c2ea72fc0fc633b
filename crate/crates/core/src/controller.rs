//! Receding-horizon controllers: RB-RHC with its risk-budget ledger and the
//! JCC-FH, JCC-RHC and PCL-RHC baselines.
//!
//! The controllers are generic over [`RiskPlanner`], so the same step logic
//! drives the continuous lattice planner and the exact discrete planner.

use std::fmt::Debug;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::planner::Propagation;

/// Tolerance of the ledger identity check.
pub const LEDGER_TOLERANCE: f64 = 1e-12;

/// Interval risk bound `rho0 + delta * k` over `horizon` steps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Irb {
    pub rho0: f64,
    pub delta: f64,
    pub horizon: usize,
}

impl Irb {
    pub fn new(rho0: f64, delta: f64, horizon: usize) -> Result<Self> {
        if !(rho0 >= 0.0 && delta >= 0.0 && rho0.is_finite() && delta.is_finite()) {
            return Err(Error::InvalidScenario(format!(
                "interval risk bound needs rho0 >= 0 and delta >= 0 (got {rho0}, {delta})"
            )));
        }
        Ok(Self { rho0, delta, horizon })
    }

    /// The bound after `k` steps.
    pub fn bound(&self, k: usize) -> f64 {
        self.rho0 + self.delta * k as f64
    }

    /// The bound over the whole interval, `rho0 + delta * T`.
    pub fn total(&self) -> f64 {
        self.bound(self.horizon)
    }
}

/// What a controller did at one step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ActionKind {
    /// First control of a feasible plan.
    Planned,
    /// Maximum deceleration after an infeasible solve.
    EmergencyStop,
    /// Stay stopped after an infeasible solve.
    NoOp,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LedgerRecord {
    pub step: usize,
    pub action: ActionKind,
    pub subtracted: f64,
    pub delta_added: f64,
    /// Budget after the step.
    pub rho: f64,
}

/// Running risk budget.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RiskLedger {
    pub rho0: f64,
    pub delta: f64,
    /// Current budget.
    pub rho: f64,
    pub history: Vec<LedgerRecord>,
}

impl RiskLedger {
    pub fn new(irb: &Irb) -> Self {
        Self {
            rho0: irb.rho0,
            delta: irb.delta,
            rho: irb.rho0,
            history: Vec::new(),
        }
    }

    /// Books one step: subtracts the incurred risk, then adds `delta`.
    pub fn record(&mut self, step: usize, action: ActionKind, subtracted: f64) {
        self.rho -= subtracted;
        self.rho += self.delta;
        self.history.push(LedgerRecord {
            step,
            action,
            subtracted,
            delta_added: self.delta,
            rho: self.rho,
        });
    }

    pub fn total_subtracted(&self) -> f64 {
        self.history.iter().map(|r| r.subtracted).sum()
    }

    /// `|rho_k - (rho0 + delta k - sum subtracted)|` after the booked steps.
    pub fn identity_error(&self) -> f64 {
        let k = self.history.len() as f64;
        (self.rho - (self.rho0 + self.delta * k - self.total_subtracted())).abs()
    }

    /// True when the ledger identity holds and the cumulative subtracted risk
    /// never exceeded `rho0 + delta k` at any booked step.
    pub fn within_bound(&self) -> bool {
        let mut cum = 0.0;
        for (k, r) in self.history.iter().enumerate() {
            cum += r.subtracted;
            if cum > self.rho0 + self.delta * k as f64 + LEDGER_TOLERANCE {
                return false;
            }
        }
        true
    }
}

/// Controller selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    RbRhc,
    JccFh,
    JccRhc,
    PclRhc,
}

impl Algorithm {
    pub const ALL: [Algorithm; 4] = [Algorithm::RbRhc, Algorithm::JccFh, Algorithm::JccRhc, Algorithm::PclRhc];

    pub fn name(&self) -> &'static str {
        match self {
            Algorithm::RbRhc => "rb-rhc",
            Algorithm::JccFh => "jcc-fh",
            Algorithm::JccRhc => "jcc-rhc",
            Algorithm::PclRhc => "pcl-rhc",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|a| a.name() == s.trim())
    }
}

impl std::fmt::Display for Algorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// A controller with its parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum ControllerKind {
    RbRhc { irb: Irb },
    /// Full-horizon open-loop plan with total risk `alpha`.
    JccFh { alpha: f64 },
    /// Receding horizon with per-iteration bound `alpha * N / T`.
    JccRhc { per_iter_alpha: f64 },
    PclRhc { per_iter_alpha: f64 },
}

impl ControllerKind {
    /// Parameterizes `algorithm` so every controller targets the same total
    /// risk `rho0 + delta T`.
    pub fn from_irb(algorithm: Algorithm, irb: &Irb, n: usize) -> Self {
        let alpha = irb.total();
        let per_iter_alpha = if irb.horizon == 0 {
            alpha
        } else {
            alpha * n.min(irb.horizon) as f64 / irb.horizon as f64
        };
        match algorithm {
            Algorithm::RbRhc => ControllerKind::RbRhc { irb: *irb },
            Algorithm::JccFh => ControllerKind::JccFh { alpha },
            Algorithm::JccRhc => ControllerKind::JccRhc { per_iter_alpha },
            Algorithm::PclRhc => ControllerKind::PclRhc { per_iter_alpha },
        }
    }

    pub fn algorithm(&self) -> Algorithm {
        match self {
            ControllerKind::RbRhc { .. } => Algorithm::RbRhc,
            ControllerKind::JccFh { .. } => Algorithm::JccFh,
            ControllerKind::JccRhc { .. } => Algorithm::JccRhc,
            ControllerKind::PclRhc { .. } => Algorithm::PclRhc,
        }
    }
}

/// Result of one planner query.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlanOutcome<C> {
    pub controls: Vec<C>,
    /// Risk term of the first predicted belief.
    pub first_step_risk: f64,
    pub total_risk: f64,
    pub cost: f64,
}

/// A chance-constrained open-loop planner over some belief space.
pub trait RiskPlanner {
    type Belief: Clone;
    type Control: Copy + PartialEq + Debug;

    /// Lowest-cost plan over `horizon` steps whose summed risk terms (`g_b`,
    /// plus `g_stop_b` when `stop_risk`) stay within `budget`; `None` if no
    /// such plan is found.
    fn plan(
        &self,
        b: &Self::Belief,
        budget: f64,
        horizon: usize,
        propagation: Propagation,
        stop_risk: bool,
    ) -> Result<Option<PlanOutcome<Self::Control>>>;

    /// `g_b` of a belief.
    fn belief_risk(&self, b: &Self::Belief) -> Result<f64>;

    /// `g_b + g_stop_b` of the open-loop successor of `b` under `u`: the
    /// amount RB-RHC books when it executes `u`.
    fn booked_risk(&self, b: &Self::Belief, u: Self::Control) -> Result<f64>;

    fn is_stopped(&self, b: &Self::Belief) -> bool;
    fn stop_control(&self) -> Self::Control;
    fn noop_control(&self) -> Self::Control;
}

/// One controller decision.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepDecision<C> {
    pub control: C,
    pub action: ActionKind,
    /// Total risk of the plan solved at this step (`None` when nothing was solved).
    pub planned_risk: Option<f64>,
}

fn contingency<P: RiskPlanner>(planner: &P, b: &P::Belief) -> (P::Control, ActionKind) {
    if planner.is_stopped(b) {
        (planner.noop_control(), ActionKind::NoOp)
    } else {
        (planner.stop_control(), ActionKind::EmergencyStop)
    }
}

/// One step of RB-RHC: plan against the current budget, book the risk of
/// the executed step, fall back to the emergency stop (or NO-OP once
/// stopped) when infeasible, and finally add `delta`.
pub fn rbrhc_step<P: RiskPlanner>(
    planner: &P,
    b: &P::Belief,
    ledger: &mut RiskLedger,
    step: usize,
    horizon: usize,
) -> Result<StepDecision<P::Control>> {
    let budget = ledger.rho.max(0.0);
    let outcome = planner.plan(b, budget, horizon, Propagation::OPEN_LOOP_THEN_PCL, true)?;
    match outcome {
        Some(plan) => {
            let u = plan.controls[0];
            let booked = planner.booked_risk(b, u)?;
            assert!(
                booked <= budget,
                "booked risk {booked} exceeds budget {budget} of a feasible plan"
            );
            ledger.record(step, ActionKind::Planned, booked);
            Ok(StepDecision {
                control: u,
                action: ActionKind::Planned,
                planned_risk: Some(plan.total_risk),
            })
        }
        None => {
            let (u, action) = contingency(planner, b);
            ledger.record(step, action, 0.0);
            Ok(StepDecision {
                control: u,
                action,
                planned_risk: None,
            })
        }
    }
}

fn baseline_step<P: RiskPlanner>(
    planner: &P,
    b: &P::Belief,
    per_iter_alpha: f64,
    horizon: usize,
    propagation: Propagation,
) -> Result<StepDecision<P::Control>> {
    match planner.plan(b, per_iter_alpha, horizon, propagation, false)? {
        Some(plan) => Ok(StepDecision {
            control: plan.controls[0],
            action: ActionKind::Planned,
            planned_risk: Some(plan.total_risk),
        }),
        None => {
            let (u, action) = contingency(planner, b);
            Ok(StepDecision {
                control: u,
                action,
                planned_risk: None,
            })
        }
    }
}

/// One step of JCC-RHC: open-loop predictions, per-iteration bound, no
/// stop-risk term and no ledger.
pub fn jcc_rhc_step<P: RiskPlanner>(
    planner: &P,
    b: &P::Belief,
    per_iter_alpha: f64,
    horizon: usize,
) -> Result<StepDecision<P::Control>> {
    baseline_step(planner, b, per_iter_alpha, horizon, Propagation::OPEN_LOOP)
}

/// One step of PCL-RHC: like JCC-RHC but every predicted belief uses the
/// partially closed-loop update.
pub fn pcl_rhc_step<P: RiskPlanner>(
    planner: &P,
    b: &P::Belief,
    per_iter_alpha: f64,
    horizon: usize,
) -> Result<StepDecision<P::Control>> {
    baseline_step(planner, b, per_iter_alpha, horizon, Propagation::PCL)
}

/// JCC-FH: one open-loop plan over the full horizon with
/// `sum_{i=0}^{T} g_b(b_i) <= alpha`. `None` when infeasible.
pub fn jcc_fh_plan<P: RiskPlanner>(
    planner: &P,
    b0: &P::Belief,
    alpha: f64,
    horizon: usize,
) -> Result<Option<PlanOutcome<P::Control>>> {
    let budget = alpha - planner.belief_risk(b0)?;
    if budget < 0.0 {
        return Ok(None);
    }
    planner.plan(b0, budget, horizon, Propagation::OPEN_LOOP, false)
}

/// Per-episode controller state: dispatches on the controller kind and
/// keeps the ledger (a shadow ledger for the baselines, booking the same
/// quantity RB-RHC would).
#[derive(Debug, Clone)]
pub struct Controller<C> {
    pub kind: ControllerKind,
    /// Nominal planning horizon N.
    pub n: usize,
    /// Episode length T.
    pub t: usize,
    pub ledger: RiskLedger,
    open_loop: Option<Vec<C>>,
}

impl<C: Copy + PartialEq + Debug> Controller<C> {
    pub fn new(kind: ControllerKind, irb: &Irb, n: usize, t: usize) -> Self {
        Self {
            kind,
            n,
            t,
            ledger: RiskLedger::new(irb),
            open_loop: None,
        }
    }

    /// Receding horizon actually planned over at step `k`, `min(N, T - k)`.
    pub fn horizon_at(&self, k: usize) -> usize {
        self.n.min(self.t.saturating_sub(k)).max(1)
    }

    /// Chooses the control at step `k`.
    pub fn step<P: RiskPlanner<Control = C>>(&mut self, planner: &P, b: &P::Belief, k: usize) -> Result<StepDecision<C>> {
        let horizon = self.horizon_at(k);
        let decision = match self.kind {
            ControllerKind::RbRhc { .. } => return rbrhc_step(planner, b, &mut self.ledger, k, horizon),
            ControllerKind::JccRhc { per_iter_alpha } => jcc_rhc_step(planner, b, per_iter_alpha, horizon)?,
            ControllerKind::PclRhc { per_iter_alpha } => pcl_rhc_step(planner, b, per_iter_alpha, horizon)?,
            ControllerKind::JccFh { alpha } => {
                if k == 0 {
                    let full = self.t.max(1);
                    match jcc_fh_plan(planner, b, alpha, full)? {
                        Some(plan) => {
                            let planned = plan.total_risk;
                            self.open_loop = Some(plan.controls);
                            StepDecision {
                                control: self.open_loop.as_ref().unwrap()[0],
                                action: ActionKind::Planned,
                                planned_risk: Some(planned),
                            }
                        }
                        None => {
                            log::warn!("full-horizon problem infeasible; executing all-stop");
                            self.open_loop = Some(Vec::new());
                            let (u, action) = contingency(planner, b);
                            StepDecision {
                                control: u,
                                action,
                                planned_risk: None,
                            }
                        }
                    }
                } else {
                    let seq = self.open_loop.get_or_insert_with(Vec::new);
                    match seq.get(k) {
                        Some(&u) => StepDecision {
                            control: u,
                            action: ActionKind::Planned,
                            planned_risk: None,
                        },
                        None => {
                            // past the plan (goal reached in the plan) or all-stop
                            let (u, action) = contingency(planner, b);
                            StepDecision {
                                control: u,
                                action,
                                planned_risk: None,
                            }
                        }
                    }
                }
            }
        };
        let booked = match decision.action {
            ActionKind::Planned => planner.booked_risk(b, decision.control)?,
            _ => 0.0,
        };
        self.ledger.record(k, decision.action, booked);
        Ok(decision)
    }
}
