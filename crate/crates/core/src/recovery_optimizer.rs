//! Optimization of conditional-measurement parameters and sequences of
//! optimized CMs.
//!
//! A single CM is optimized by an exhaustive scan over a fixed 5-D grid
//! (`theta_i, phi_i, theta_f, phi_f, g_tau`) followed by Nelder-Mead
//! refinement from the best grid cells, any injected candidates, and seeded
//! random restarts. The grid scan is split into one chunk per `g_tau` value;
//! chunks may run in parallel but are reduced in index order, so results do
//! not depend on the thread count.

use std::cmp::Ordering;
use std::f64::consts::{FRAC_PI_2, TAU};

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dissipation::{apply_damping, DampingSpec};
use crate::error::{Error, Result};
use crate::fock_core::{pure_density, wrap_phase, AtomKet, FieldDensityMatrix, FieldKet, C64};
use crate::jaynes_cummings::JcInteraction;
use crate::measurement::{check_field_guard, cm_step, CmOperator, CmOutcome, PROBABILITY_FLOOR};
use crate::metrics::{cost, distance, frobenius_distance, linspace, CostSpec};

/// Costs closer than this are considered tied.
pub const COST_TIE_TOL: f64 = 1e-12;
/// Top-level population that aborts a sequence.
pub const SEQUENCE_LEAK_TOL: f64 = 1e-8;
/// Guard levels added above `N + K` when sizing the engine truncation.
pub const GUARD_LEVELS: usize = 2;

/// The five CM control parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CmParams {
    pub theta_i: f64,
    pub phi_i: f64,
    pub theta_f: f64,
    pub phi_f: f64,
    pub g_tau: f64,
}

impl CmParams {
    pub fn initial_atom(&self) -> Result<AtomKet> {
        AtomKet::new(self.theta_i, self.phi_i)
    }

    pub fn final_atom(&self) -> Result<AtomKet> {
        AtomKet::new(self.theta_f, self.phi_f)
    }

    pub fn interaction(&self) -> Result<JcInteraction> {
        JcInteraction::new(self.g_tau)
    }

    /// Checks the search box and wraps both phases into `[0, 2 pi)`.
    pub fn validated(&self, g_tau_max: f64) -> Result<Self> {
        let a = self.initial_atom()?;
        let b = self.final_atom()?;
        self.interaction()?;
        if self.g_tau > g_tau_max {
            return Err(Error::validation(format!(
                "g_tau {} exceeds the search bound {g_tau_max}",
                self.g_tau
            )));
        }
        Ok(Self {
            theta_i: a.theta(),
            phi_i: a.phi(),
            theta_f: b.theta(),
            phi_f: b.phi(),
            g_tau: self.g_tau,
        })
    }

    fn to_array(self) -> [f64; 5] {
        [self.theta_i, self.phi_i, self.theta_f, self.phi_f, self.g_tau]
    }

    /// Maps an unconstrained point into the box: mixing angles are reflected
    /// into `[0, pi/2]`, phases wrap, and `g_tau` is reflected into
    /// `[0, g_tau_max]`.
    fn from_unconstrained(x: &[f64; 5], g_tau_max: f64) -> Self {
        Self {
            theta_i: reflect(x[0], FRAC_PI_2),
            phi_i: wrap_phase(x[1]),
            theta_f: reflect(x[2], FRAC_PI_2),
            phi_f: wrap_phase(x[3]),
            g_tau: reflect(x[4], g_tau_max),
        }
    }
}

fn reflect(x: f64, hi: f64) -> f64 {
    let period = 2.0 * hi;
    let y = x.rem_euclid(period);
    let y = if y > hi { period - y } else { y };
    y.clamp(0.0, hi)
}

/// Points per dimension of the coarse scan.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridCounts {
    pub theta_i: usize,
    pub phi_i: usize,
    pub theta_f: usize,
    pub phi_f: usize,
    pub g_tau: usize,
}

impl Default for GridCounts {
    fn default() -> Self {
        Self {
            theta_i: 9,
            phi_i: 8,
            theta_f: 9,
            phi_f: 8,
            g_tau: 257,
        }
    }
}

impl GridCounts {
    pub fn total(&self) -> usize {
        self.theta_i * self.phi_i * self.theta_f * self.phi_f * self.g_tau
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerConfig {
    pub cost: CostSpec,
    pub g_tau_max: f64,
    pub grid: GridCounts,
    /// Nelder-Mead iteration budget per start; 0 disables refinement.
    pub refine_iters: usize,
    /// Number of best grid cells used as refinement starts.
    pub refine_starts: usize,
    pub random_restarts: usize,
    pub seed: u64,
    /// Known feasible points always evaluated (and refined from).
    pub inject: Vec<CmParams>,
}

impl OptimizerConfig {
    pub fn new(r: f64) -> Result<Self> {
        Ok(Self {
            cost: CostSpec::new(r)?,
            ..Self::default()
        })
    }

    pub fn validate(&self) -> Result<()> {
        let g = &self.grid;
        if [g.theta_i, g.phi_i, g.theta_f, g.phi_f, g.g_tau]
            .iter()
            .any(|&c| c < 2)
        {
            return Err(Error::validation("every grid count must be >= 2"));
        }
        if !self.g_tau_max.is_finite() || self.g_tau_max <= 0.0 {
            return Err(Error::validation("g_tau_max must be > 0"));
        }
        for p in &self.inject {
            p.validated(self.g_tau_max)?;
        }
        Ok(())
    }

    pub fn theta_axis(&self, count: usize) -> Vec<f64> {
        linspace(0.0, FRAC_PI_2, count)
    }

    pub fn phi_axis(&self, count: usize) -> Vec<f64> {
        (0..count).map(|k| TAU * k as f64 / count as f64).collect()
    }

    pub fn g_axis(&self) -> Vec<f64> {
        linspace(0.0, self.g_tau_max, self.grid.g_tau)
    }

    fn initial_steps(&self) -> [f64; 5] {
        let g = &self.grid;
        [
            FRAC_PI_2 / (g.theta_i - 1) as f64 / 2.0,
            TAU / g.phi_i as f64 / 2.0,
            FRAC_PI_2 / (g.theta_f - 1) as f64 / 2.0,
            TAU / g.phi_f as f64 / 2.0,
            self.g_tau_max / (g.g_tau - 1) as f64 / 2.0,
        ]
    }
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            cost: CostSpec::new(2.0).expect("valid exponent"),
            g_tau_max: 16.0 * std::f64::consts::PI,
            grid: GridCounts::default(),
            refine_iters: 200,
            refine_starts: 8,
            random_restarts: 4,
            seed: 0,
            inject: Vec::new(),
        }
    }
}

/// One evaluated parameter point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Candidate {
    pub params: CmParams,
    pub distance: f64,
    pub probability: f64,
    pub cost: f64,
}

impl Candidate {
    fn rejected(params: CmParams, probability: f64) -> Self {
        Self {
            params,
            distance: f64::INFINITY,
            probability,
            cost: f64::INFINITY,
        }
    }
}

/// Total preference order: lower cost, then (for costs tied within
/// [`COST_TIE_TOL`]) higher probability, smaller `g_tau`, and finally
/// lexicographic `(theta_i, phi_i, theta_f, phi_f)`. `Less` means `a` is
/// preferred.
pub fn prefer(a: &Candidate, b: &Candidate) -> Ordering {
    let ca = if a.cost.is_nan() { f64::INFINITY } else { a.cost };
    let cb = if b.cost.is_nan() { f64::INFINITY } else { b.cost };
    let tied = (ca.is_finite() && cb.is_finite() && (ca - cb).abs() <= COST_TIE_TOL)
        || (ca.is_infinite() && cb.is_infinite());
    if !tied {
        return ca.total_cmp(&cb);
    }
    b.probability
        .total_cmp(&a.probability)
        .then(a.params.g_tau.total_cmp(&b.params.g_tau))
        .then(a.params.theta_i.total_cmp(&b.params.theta_i))
        .then(a.params.phi_i.total_cmp(&b.params.phi_i))
        .then(a.params.theta_f.total_cmp(&b.params.theta_f))
        .then(a.params.phi_f.total_cmp(&b.params.phi_f))
}

fn pick(a: Candidate, b: Candidate) -> Candidate {
    if prefer(&b, &a) == Ordering::Less {
        b
    } else {
        a
    }
}

/// Cost evaluation through the tridiagonal CM operator.
pub struct CmEvaluator<'a> {
    field: &'a DMatrix<C64>,
    target: &'a DMatrix<C64>,
    n_max: usize,
    spec: CostSpec,
}

impl<'a> CmEvaluator<'a> {
    pub fn new(
        field: &'a FieldDensityMatrix,
        target: &'a FieldDensityMatrix,
        spec: CostSpec,
    ) -> Result<Self> {
        if field.dim() != target.dim() {
            return Err(Error::validation(format!(
                "field dimension {} differs from target dimension {}",
                field.dim(),
                target.dim()
            )));
        }
        if field.n_max() < 1 {
            return Err(Error::validation("optimizer needs n_max >= 1"));
        }
        check_field_guard(field)?;
        Ok(Self {
            field: field.entries(),
            target: target.entries(),
            n_max: field.n_max(),
            spec,
        })
    }

    pub fn evaluate(&self, params: &CmParams) -> Candidate {
        match CmOperator::from_params(params, self.n_max) {
            Ok(op) => self.evaluate_operator(params, &op),
            Err(_) => Candidate::rejected(*params, 0.0),
        }
    }

    fn evaluate_operator(&self, params: &CmParams, op: &CmOperator) -> Candidate {
        let raw = op.apply(self.field);
        let probability = raw.trace().re;
        if !(probability >= PROBABILITY_FLOOR) {
            return Candidate::rejected(*params, probability.max(0.0));
        }
        let normalized = raw / C64::new(probability, 0.0);
        let d = frobenius_distance(&normalized, self.target);
        Candidate {
            params: *params,
            distance: d,
            probability,
            cost: cost(d, probability, self.spec),
        }
    }
}

/// Keeps the `k` best candidates, best first.
#[derive(Debug, Clone)]
struct TopK {
    k: usize,
    items: Vec<Candidate>,
}

impl TopK {
    fn new(k: usize) -> Self {
        Self {
            k: k.max(1),
            items: Vec::new(),
        }
    }

    fn push(&mut self, c: Candidate) {
        if self.items.len() == self.k
            && prefer(&c, self.items.last().expect("nonempty")) != Ordering::Less
        {
            return;
        }
        let pos = self
            .items
            .iter()
            .position(|x| prefer(&c, x) == Ordering::Less)
            .unwrap_or(self.items.len());
        self.items.insert(pos, c);
        self.items.truncate(self.k);
    }

    fn merge(mut self, other: TopK) -> Self {
        for c in other.items {
            self.push(c);
        }
        self
    }
}

/// Result of the coarse scan.
#[derive(Debug, Clone)]
pub struct GridScan {
    /// Best grid points, best first.
    pub best: Vec<Candidate>,
    pub evaluations: usize,
}

/// Exhaustive scan of the coarse grid, keeping the `keep` best points.
pub fn grid_scan(evaluator: &CmEvaluator<'_>, config: &OptimizerConfig, keep: usize) -> GridScan {
    let g = config.grid;
    let thetas_i = config.theta_axis(g.theta_i);
    let phis_i = config.phi_axis(g.phi_i);
    let thetas_f = config.theta_axis(g.theta_f);
    let phis_f = config.phi_axis(g.phi_f);
    let atoms_i: Vec<(f64, f64, AtomKet)> = thetas_i
        .iter()
        .flat_map(|&t| phis_i.iter().map(move |&p| (t, p)))
        .map(|(t, p)| (t, p, AtomKet::new(t, p).expect("grid atom")))
        .collect();
    let atoms_f: Vec<(f64, f64, AtomKet)> = thetas_f
        .iter()
        .flat_map(|&t| phis_f.iter().map(move |&p| (t, p)))
        .map(|(t, p)| (t, p, AtomKet::new(t, p).expect("grid atom")))
        .collect();

    let chunks: Vec<TopK> = config
        .g_axis()
        .par_iter()
        .map(|&g_tau| {
            let interaction = JcInteraction::new(g_tau).expect("grid g_tau");
            let mut top = TopK::new(keep);
            for (ti, pi, ai) in &atoms_i {
                for (tf, pf, af) in &atoms_f {
                    let params = CmParams {
                        theta_i: *ti,
                        phi_i: *pi,
                        theta_f: *tf,
                        phi_f: *pf,
                        g_tau,
                    };
                    let op = CmOperator::new(ai, interaction, af, evaluator.n_max);
                    top.push(evaluator.evaluate_operator(&params, &op));
                }
            }
            top
        })
        .collect();

    let merged = chunks
        .into_iter()
        .fold(TopK::new(keep), |acc, chunk| acc.merge(chunk));
    GridScan {
        best: merged.items,
        evaluations: g.total(),
    }
}

/// Nelder-Mead on the unconstrained parameterization, starting from `start`.
/// The returned candidate is never worse than the start.
pub fn refine(
    evaluator: &CmEvaluator<'_>,
    start: &Candidate,
    steps: [f64; 5],
    iters: usize,
    g_tau_max: f64,
) -> (Candidate, usize) {
    let eval = |x: &[f64; 5]| evaluator.evaluate(&CmParams::from_unconstrained(x, g_tau_max));
    let mut evaluations = 0usize;

    let x0 = start.params.to_array();
    let mut simplex: Vec<([f64; 5], Candidate)> = vec![(x0, *start)];
    for (i, step) in steps.iter().enumerate() {
        let mut x = x0;
        x[i] += step;
        simplex.push((x, eval(&x)));
        evaluations += 1;
    }

    for _ in 0..iters {
        simplex.sort_by(|a, b| prefer(&a.1, &b.1));
        let best = simplex[0].1;
        let worst = simplex[5].1;
        if best.cost.is_infinite() {
            break;
        }
        if worst.cost.is_finite() && (worst.cost - best.cost).abs() < 1e-14 {
            break;
        }

        let mut centroid = [0.0; 5];
        for (x, _) in &simplex[..5] {
            for j in 0..5 {
                centroid[j] += x[j] / 5.0;
            }
        }
        let along = |t: f64| -> [f64; 5] {
            let xw = simplex[5].0;
            let mut out = [0.0; 5];
            for j in 0..5 {
                out[j] = centroid[j] + t * (xw[j] - centroid[j]);
            }
            out
        };
        let better = |a: &Candidate, b: &Candidate| prefer(a, b) == Ordering::Less;

        let xr = along(-1.0);
        let cr = eval(&xr);
        evaluations += 1;
        if better(&cr, &simplex[0].1) {
            let xe = along(-2.0);
            let ce = eval(&xe);
            evaluations += 1;
            simplex[5] = if better(&ce, &cr) { (xe, ce) } else { (xr, cr) };
            continue;
        }
        if better(&cr, &simplex[4].1) {
            simplex[5] = (xr, cr);
            continue;
        }
        let outside = better(&cr, &simplex[5].1);
        let xc = if outside { along(-0.5) } else { along(0.5) };
        let cc = eval(&xc);
        evaluations += 1;
        let accept = if outside {
            !better(&cr, &cc)
        } else {
            better(&cc, &simplex[5].1)
        };
        if accept {
            simplex[5] = (xc, cc);
            continue;
        }
        // shrink towards the best vertex
        let xb = simplex[0].0;
        for v in simplex.iter_mut().skip(1) {
            for j in 0..5 {
                v.0[j] = xb[j] + 0.5 * (v.0[j] - xb[j]);
            }
            v.1 = eval(&v.0);
            evaluations += 1;
        }
    }

    let best = simplex
        .into_iter()
        .map(|(_, c)| c)
        .fold(*start, pick);
    (best, evaluations)
}

/// Optimal single CM for `field` relative to `target`.
#[derive(Debug, Clone)]
pub struct SingleCmOptimum {
    pub params: CmParams,
    /// Outcome recomputed through the composite-space reference path.
    pub outcome: CmOutcome,
    pub cost: f64,
    /// Best coarse-grid point.
    pub grid_best: Candidate,
    pub evaluations: usize,
}

pub fn optimize_single_cm(
    field: &FieldDensityMatrix,
    target: &FieldDensityMatrix,
    config: &OptimizerConfig,
) -> Result<SingleCmOptimum> {
    config.validate()?;
    let evaluator = CmEvaluator::new(field, target, config.cost)?;
    let scan = grid_scan(&evaluator, config, config.refine_starts.max(1));
    let mut evaluations = scan.evaluations;
    let grid_best = scan.best[0];

    let mut starts: Vec<Candidate> = scan.best.clone();
    for p in &config.inject {
        starts.push(evaluator.evaluate(&p.validated(config.g_tau_max)?));
        evaluations += 1;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    for _ in 0..config.random_restarts {
        let p = CmParams {
            theta_i: rng.gen_range(0.0..=FRAC_PI_2),
            phi_i: rng.gen_range(0.0..TAU),
            theta_f: rng.gen_range(0.0..=FRAC_PI_2),
            phi_f: rng.gen_range(0.0..TAU),
            g_tau: rng.gen_range(0.0..=config.g_tau_max),
        };
        starts.push(evaluator.evaluate(&p));
        evaluations += 1;
    }

    let refined: Vec<(Candidate, usize)> = if config.refine_iters > 0 {
        let steps = config.initial_steps();
        starts
            .par_iter()
            .map(|s| refine(&evaluator, s, steps, config.refine_iters, config.g_tau_max))
            .collect()
    } else {
        starts.iter().map(|s| (*s, 0)).collect()
    };
    let mut best = grid_best;
    for (c, n) in refined {
        evaluations += n;
        best = pick(best, c);
    }
    if best.cost.is_infinite() {
        return Err(Error::OptimizationFailed(format!(
            "every candidate fell below the probability floor {PROBABILITY_FLOOR:e}"
        )));
    }

    let outcome = cm_step(field, &best.params)?;
    let d = distance(&outcome.field_state, target)?;
    let final_cost = cost(d, outcome.probability, config.cost);
    Ok(SingleCmOptimum {
        params: best.params,
        outcome,
        cost: final_cost,
        grid_best,
        evaluations,
    })
}

/// One row of a recovery sequence. Step 0 is the dissipated state before any
/// CM.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryRecord {
    pub step_index: usize,
    pub params: Option<CmParams>,
    pub distance_after: f64,
    pub step_probability: f64,
    pub sequence_probability: f64,
    pub cost: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    /// `max_steps` CMs were accepted.
    MaxSteps,
    /// The best next CM would not reduce the distance.
    NoImprovement,
    /// The target is already reached exactly.
    AtTarget,
}

#[derive(Debug, Clone)]
pub struct SequenceOptions {
    pub max_steps: usize,
    /// Damping applied before every CM after the first.
    pub inter_cm_damping: DampingSpec,
}

#[derive(Debug, Clone)]
pub struct SequenceRun {
    pub target: FieldDensityMatrix,
    pub damped: FieldDensityMatrix,
    pub final_state: FieldDensityMatrix,
    pub records: Vec<RecoveryRecord>,
    pub stop_reason: StopReason,
}

/// Engine truncation for a target with support up to `n_photons` and up to
/// `planned_cms` CMs.
pub fn engine_n_max(n_photons: usize, planned_cms: usize) -> usize {
    n_photons + planned_cms + GUARD_LEVELS
}

pub fn run_sequence(
    initial_target: &FieldKet,
    damping: DampingSpec,
    config: &OptimizerConfig,
    max_steps: usize,
) -> Result<Vec<RecoveryRecord>> {
    let options = SequenceOptions {
        max_steps,
        inter_cm_damping: DampingSpec::none(),
    };
    Ok(run_sequence_with(initial_target, damping, config, &options)?.records)
}

pub fn run_sequence_with(
    initial_target: &FieldKet,
    damping: DampingSpec,
    config: &OptimizerConfig,
    options: &SequenceOptions,
) -> Result<SequenceRun> {
    config.validate()?;
    let n_max = engine_n_max(initial_target.max_photon_number(), options.max_steps);
    let target = pure_density(&initial_target.embed(n_max)?)?;
    let target = FieldDensityMatrix::sanitized(target.into_entries())?;
    let damped = apply_damping(&target, damping);
    let damped = FieldDensityMatrix::sanitized(damped.into_entries())?;

    let d0 = distance(&damped, &target)?;
    let mut records = vec![RecoveryRecord {
        step_index: 0,
        params: None,
        distance_after: d0,
        step_probability: 1.0,
        sequence_probability: 1.0,
        cost: cost(d0, 1.0, config.cost),
    }];

    let mut current = damped.clone();
    let mut current_distance = d0;
    let mut seq_prob = 1.0;
    let mut stop_reason = StopReason::MaxSteps;

    for step in 1..=options.max_steps {
        if current_distance == 0.0 {
            stop_reason = StopReason::AtTarget;
            break;
        }
        if step > 1 && options.inter_cm_damping.gamma_t() > 0.0 {
            current = FieldDensityMatrix::sanitized(
                apply_damping(&current, options.inter_cm_damping).into_entries(),
            )?;
            current_distance = distance(&current, &target)?;
        }
        let opt = optimize_single_cm(&current, &target, config).map_err(|e| Error::Step {
            step,
            source: Box::new(e),
        })?;
        let d = distance(&opt.outcome.field_state, &target)?;
        if d >= current_distance {
            stop_reason = StopReason::NoImprovement;
            break;
        }
        let top = opt.outcome.field_state.population(n_max);
        if top > SEQUENCE_LEAK_TOL {
            return Err(Error::Step {
                step,
                source: Box::new(Error::TruncationLeak {
                    level: n_max,
                    population: top,
                    context: "top guard level populated during a CM sequence",
                }),
            });
        }
        seq_prob *= opt.outcome.probability;
        records.push(RecoveryRecord {
            step_index: step,
            params: Some(opt.params),
            distance_after: d,
            step_probability: opt.outcome.probability,
            sequence_probability: seq_prob,
            cost: opt.cost,
        });
        current = opt.outcome.field_state;
        current_distance = d;
    }

    Ok(SequenceRun {
        target,
        damped,
        final_state: current,
        records,
        stop_reason,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaturationSummary {
    /// `d_0 / d_1`, if a CM was applied.
    pub first_step_reduction: Option<f64>,
    pub saturation_step: usize,
    pub threshold: f64,
    pub final_distance: f64,
    pub final_sequence_probability: f64,
}

pub const DEFAULT_SATURATION_THRESHOLD: f64 = 0.05;

/// Saturation sets in at the first step whose relative distance improvement
/// `(d_{K-1} - d_K) / d_{K-1}` falls below `threshold`. If no step
/// saturates the list length is reported; a lone step-0 record reports 0.
pub fn saturation_report(records: &[RecoveryRecord], threshold: f64) -> Result<SaturationSummary> {
    let last = records
        .last()
        .ok_or_else(|| Error::validation("saturation_report needs at least one record"))?;
    let first_step_reduction = records
        .get(1)
        .map(|r| records[0].distance_after / r.distance_after);
    let saturation_step = if records.len() == 1 {
        0
    } else {
        records
            .windows(2)
            .find(|w| {
                let prev = w[0].distance_after;
                prev <= 0.0 || (prev - w[1].distance_after) / prev < threshold
            })
            .map(|w| w[1].step_index)
            .unwrap_or(records.len())
    };
    Ok(SaturationSummary {
        first_step_reduction,
        saturation_step,
        threshold,
        final_distance: last.distance_after,
        final_sequence_probability: last.sequence_probability,
    })
}
