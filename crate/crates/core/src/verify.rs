//! Property suite run by `pooled-whittle verify`: stationary-law oracle,
//! passive-mass monotonicity, structure of solved value functions, iterative
//! versus direct indices and indexability sweeps, on the bundled presets.

use std::fmt;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::birth_death::{
    cumulative_passive_mass, stationary_distribution_truncated, StationaryDistribution,
    ThresholdChain,
};
use crate::error::{Error, Result};
use crate::index::{
    affine_fixed_point, check_threshold_structure, equation_residuals, indexability_check,
    solve_relative_value, structural_limit, threshold_cost_lines, whittle_index_direct,
    whittle_index_iterative, IterationSettings, DEFAULT_ETA,
};
use crate::model::{pair_parameters, CostFunction, PairParameters, DEFAULT_EPSILON};
use crate::scenario::Scenario;

/// Closed-form stationary law over `0..=n` under test.
pub type ClosedForm = fn(&ThresholdChain, usize) -> StationaryDistribution;

/// Presets whose (file, server) pairs the suite checks.
pub const SUITE_PRESETS: [&str; 3] = ["fig3", "fig5", "fig10"];

#[derive(Debug, Clone, Copy)]
pub struct VerifyOptions {
    pub closed_form: ClosedForm,
    pub seed: u64,
    /// Random parameter sets for the stationary-law oracle.
    pub random_cases: usize,
    pub max_threshold: usize,
    /// Truncation of the brute-force balance solve.
    pub oracle_states: usize,
    pub oracle_tol: f64,
    /// Largest threshold in the passive-mass monotonicity check.
    pub mass_thresholds: usize,
    pub n_max: usize,
    pub residual_tol: f64,
    pub eta: f64,
    /// Queue lengths 1..=this in the iterative-versus-direct check.
    pub iterative_states: usize,
    pub max_iterations: usize,
    pub grid_points: usize,
    /// Buffer of the indexability sweep. Thresholds ℓ and ℓ' > ℓ differ in
    /// average cost by about (Λ/μ̂)^ℓ when Λ < μ̂; once that falls below the
    /// 1e-12 tie tolerance the sweep cannot tell them apart (at Λ/μ̂ = 1/3
    /// this happens near ℓ = 23), so a long buffer can never report n_max.
    pub sweep_n_max: usize,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            closed_form: stationary_distribution_truncated,
            seed: 7,
            random_cases: 200,
            max_threshold: 10,
            oracle_states: 150,
            oracle_tol: 1e-10,
            mass_thresholds: 30,
            n_max: 200,
            residual_tol: 1e-9,
            eta: DEFAULT_ETA,
            iterative_states: 30,
            max_iterations: 10_000,
            grid_points: 50,
            sweep_n_max: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub cases: usize,
    pub failures: Vec<String>,
    /// One-line summary of the worst observed margin.
    pub detail: String,
    pub seconds: f64,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.failures.is_empty() && self.cases > 0
    }
}

impl fmt::Display for CheckResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = if self.passed() { "PASS" } else { "FAIL" };
        write!(
            f,
            "{tag} {} ({} cases, {:.2}s): {}",
            self.name, self.cases, self.seconds, self.detail
        )?;
        for msg in self.failures.iter().take(5) {
            write!(f, "\n    {msg}")?;
        }
        if self.failures.len() > 5 {
            write!(f, "\n    ... {} more", self.failures.len() - 5)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyReport {
    pub checks: Vec<CheckResult>,
}

impl VerifyReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(CheckResult::passed)
    }
}

impl fmt::Display for VerifyReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            writeln!(f, "{c}")?;
        }
        let failed = self.checks.iter().filter(|c| !c.passed()).count();
        write!(f, "{} checks, {failed} failed", self.checks.len())
    }
}

/// One decoupled subproblem taken from a preset.
#[derive(Debug, Clone, PartialEq)]
pub struct PresetPair {
    pub preset: &'static str,
    pub file: usize,
    pub server: usize,
    pub params: PairParameters,
    pub cost: CostFunction,
}

impl PresetPair {
    fn label(&self) -> String {
        format!("{} ({}, {})", self.preset, self.file, self.server)
    }

    /// The file has another server, so the index is finite.
    pub fn has_finite_index(&self) -> bool {
        self.params.mu_hat > 0.0
    }
}

pub fn preset_pairs(preset: &'static str) -> Result<Vec<PresetPair>> {
    let topology = Scenario::preset(preset)?.validate()?;
    topology
        .edges()
        .map(|(file, server)| {
            Ok(PresetPair {
                preset,
                file,
                server,
                params: pair_parameters(&topology, file, server, DEFAULT_EPSILON)?,
                cost: topology.file(file).cost.clone(),
            })
        })
        .collect()
}

fn suite_pairs() -> Result<Vec<PresetPair>> {
    let mut out = Vec::new();
    for p in SUITE_PRESETS {
        out.extend(preset_pairs(p)?);
    }
    Ok(out)
}

fn timed(
    name: &'static str,
    body: impl FnOnce() -> Result<(usize, Vec<String>, String)>,
) -> Result<CheckResult> {
    let start = Instant::now();
    let (cases, failures, detail) = body()?;
    Ok(CheckResult {
        name,
        cases,
        failures,
        detail,
        seconds: start.elapsed().as_secs_f64(),
    })
}

/// Stationary law of the threshold chain truncated at `n` (arrivals at `n`
/// become self-loops), by dense LU on the balance equations with one of them
/// replaced by the normalization.
pub fn truncated_balance_oracle(
    params: &PairParameters,
    threshold: usize,
    n: usize,
) -> Result<Vec<f64>> {
    let dim = n + 1;
    let mut a = DMatrix::<f64>::zeros(dim, dim);
    for x in 0..dim {
        let up = if x < n { params.lambda_arr } else { 0.0 };
        let down = match x {
            0 => 0.0,
            x if x <= threshold => params.mu_hat,
            _ => params.total_service(),
        };
        // Column x of (P − I)ᵀ holds the flows out of x.
        a[(x, x)] -= up + down;
        if x < n {
            a[(x + 1, x)] += up;
        }
        if x > 0 {
            a[(x - 1, x)] += down;
        }
    }
    for c in 0..dim {
        a[(n, c)] = 1.0;
    }
    let mut b = DVector::<f64>::zeros(dim);
    b[n] = 1.0;
    a.lu()
        .solve(&b)
        .map(|v| v.iter().copied().collect())
        .ok_or_else(|| Error::SingularSystem("balance equations".into()))
}

/// Random stable pairs with active-region load Λ/(μ̂ + μ_k) ≤ 0.8.
fn random_pair(rng: &mut ChaCha8Rng) -> Result<PairParameters> {
    let lambda = rng.random_range(0.05..1.0);
    let mu_hat = rng.random_range(0.01..1.5);
    let load = rng.random_range(0.1..0.8);
    let mut mu_k = lambda / load - mu_hat;
    if mu_k <= 0.0 {
        mu_k = rng.random_range(0.05..1.0);
    }
    PairParameters::from_rates(lambda, mu_k, mu_hat, DEFAULT_EPSILON)
}

pub fn stationary_oracle_check(opts: &VerifyOptions) -> Result<CheckResult> {
    timed("stationary distribution vs balance solve", || {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        let mut failures = Vec::new();
        let mut worst: f64 = 0.0;
        let mut cases = 0;
        for case in 0..opts.random_cases {
            let params = random_pair(&mut rng)?;
            for l in 0..=opts.max_threshold {
                let chain = ThresholdChain::new(params, l)?;
                let closed = (opts.closed_form)(&chain, opts.oracle_states);
                let brute = truncated_balance_oracle(&params, l, opts.oracle_states)?;
                let err = closed
                    .probabilities
                    .iter()
                    .zip(&brute)
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max);
                let mass_err = (closed.total_mass() - 1.0).abs();
                worst = worst.max(err);
                cases += 1;
                if !(err <= opts.oracle_tol && mass_err <= 1e-12) {
                    failures.push(format!(
                        "case {case} ℓ={l} {params:?}: max |Δπ| = {err:.3e}, |mass − 1| = {mass_err:.3e}"
                    ));
                }
            }
        }
        Ok((
            cases,
            failures,
            format!("max |Δπ| = {worst:.3e} (tol {:.0e})", opts.oracle_tol),
        ))
    })
}

pub fn passive_mass_check(pairs: &[PresetPair], opts: &VerifyOptions) -> Result<CheckResult> {
    timed("passive mass strictly increasing in threshold", || {
        let mut failures = Vec::new();
        let mut cases = 0;
        let mut min_step = f64::INFINITY;
        for pair in pairs.iter().filter(|p| p.has_finite_index()) {
            let mut prev = None;
            for l in 0..=opts.mass_thresholds {
                let chain = ThresholdChain::new(pair.params, l)?;
                let mass = cumulative_passive_mass(&chain);
                let dist = (opts.closed_form)(&chain, l + 1);
                let summed: f64 = dist.probabilities[..=l].iter().sum();
                cases += 1;
                if (mass - summed).abs() > 1e-12 {
                    failures.push(format!(
                        "{} ℓ={l}: closed-form mass {mass} but distribution sums to {summed}",
                        pair.label()
                    ));
                }
                if let Some(p) = prev {
                    min_step = min_step.min(mass - p);
                    if mass <= p {
                        failures.push(format!("{} ℓ={l}: mass {mass} <= {p}", pair.label()));
                    }
                }
                prev = Some(mass);
            }
        }
        Ok((
            cases,
            failures,
            format!("smallest increment {min_step:.3e}"),
        ))
    })
}

/// Structure of the value function at the optimal threshold for each λ, for
/// the pair's own cost and for f(x) = x². Residuals are measured relative to
/// max(1, max |V|): with f = x² on 200 states |V| reaches 1e7, where one ulp
/// is already about 2e-9.
pub fn structure_check(pairs: &[PresetPair], opts: &VerifyOptions) -> Result<CheckResult> {
    timed(
        "value function monotone, g non-increasing, residuals",
        || {
            let mut failures = Vec::new();
            let mut cases = 0;
            let mut worst_residual: f64 = 0.0;
            let mut worst_absolute: f64 = 0.0;
            let n_max = opts.n_max;
            let limit = structural_limit(n_max);
            let quadratic = CostFunction::Quadratic(1.0, 0.0);
            for pair in pairs {
                for (cost, strict) in [
                    (&pair.cost, pair.cost.is_strictly_convex()),
                    (&quadratic, true),
                ] {
                    for lambda in [-2.0, -1.0, 0.0] {
                        let threshold =
                            indexability_check(&pair.params, cost, &[lambda], n_max)?.thresholds[0];
                        let sol =
                            solve_relative_value(&pair.params, cost, threshold, lambda, n_max)?;
                        let absolute = equation_residuals(&sol, &pair.params, cost)
                            .iter()
                            .fold(0.0_f64, |m, r| m.max(r.abs()));
                        let scale = sol.values.iter().fold(1.0_f64, |m, v| m.max(v.abs()));
                        let residual = absolute / scale;
                        worst_residual = worst_residual.max(residual);
                        worst_absolute = worst_absolute.max(absolute);
                        let structure = check_threshold_structure(&sol, &pair.params);
                        let v = &sol.values[..=limit];
                        let increasing = if strict {
                            v.windows(2).all(|w| w[1] > w[0])
                        } else {
                            v.windows(2).all(|w| w[1] >= w[0])
                        };
                        let g_ok = if strict {
                            structure.strictly_decreasing
                        } else {
                            structure.non_increasing
                        };
                        cases += 1;
                        let what = format!(
                            "{} f={cost:?} λ={lambda} threshold {threshold}",
                            pair.label()
                        );
                        if residual > opts.residual_tol {
                            failures.push(format!("{what}: residual {residual:.3e}"));
                        }
                        if !increasing {
                            failures.push(format!(
                                "{what}: V not {}increasing",
                                if strict { "strictly " } else { "" }
                            ));
                        }
                        if !g_ok {
                            failures.push(format!(
                                "{what}: g not {}",
                                if strict {
                                    "strictly decreasing"
                                } else {
                                    "non-increasing"
                                }
                            ));
                        }
                    }
                }
            }
            Ok((
            cases,
            failures,
            format!(
                "max residual {worst_residual:.3e} relative to max(1, |V|) (tol {:.0e}), {worst_absolute:.3e} absolute",
                opts.residual_tol
            ),
        ))
        },
    )
}

/// The η-iteration started from the previous state's index lands within
/// max(10 η |λ*|, 1e-4) of the exact fixed point λ*.
pub fn iterative_check(pairs: &[PresetPair], opts: &VerifyOptions) -> Result<CheckResult> {
    timed("iterative index within O(eta) of direct", || {
        let mut failures = Vec::new();
        let mut cases = 0;
        let mut worst_ratio: f64 = 0.0;
        let mut most_iterations = 0;
        for pair in pairs.iter().filter(|p| p.has_finite_index()) {
            let mut warm = 0.0;
            for x in 1..=opts.iterative_states {
                let direct = whittle_index_direct(&pair.params, &pair.cost, x, opts.n_max)?.value;
                let settings = IterationSettings {
                    eta: opts.eta,
                    max_iter: opts.max_iterations,
                    initial: warm,
                    ..Default::default()
                };
                cases += 1;
                match whittle_index_iterative(&pair.params, &pair.cost, x, settings, opts.n_max) {
                    Ok(it) => {
                        warm = it.value;
                        let bound = (10.0 * opts.eta * direct.abs()).max(1e-4);
                        let err = (it.value - direct).abs();
                        worst_ratio = worst_ratio.max(err / bound);
                        most_iterations = most_iterations.max(it.iterations);
                        if err > bound || it.iterations >= opts.max_iterations {
                            failures.push(format!(
                                "{} x={x}: iterative {} vs direct {direct} (bound {bound:.3e}, {} iterations)",
                                pair.label(),
                                it.value,
                                it.iterations
                            ));
                        }
                    }
                    Err(e) => {
                        failures.push(format!("{} x={x}: {e}", pair.label()));
                        warm = direct;
                    }
                }
            }
        }
        Ok((
            cases,
            failures,
            format!("worst error/bound {worst_ratio:.3}, most iterations {most_iterations}"),
        ))
    })
}

/// Ascending grid of `points` values spanning the index range of a pair.
///
/// The ends lie 10% beyond the range in which the optimal threshold changes:
/// below the last crossing of the all-passive line (threshold n_max) with any
/// other threshold line, and above the last crossing of the all-active line
/// (threshold 0). Near the reflecting buffer the fixed points λ(x) bend back,
/// so they do not bound this range themselves. Interior points sit halfway
/// between consecutive fixed points at evenly spaced ranks.
pub fn index_range_grid(pair: &PresetPair, n_max: usize, points: usize) -> Result<Vec<f64>> {
    if points < 2 || n_max < 2 {
        return Err(Error::InvalidArgument(
            "grid needs at least two points and n_max >= 2".into(),
        ));
    }
    let lines = threshold_cost_lines(&pair.params, &pair.cost, n_max)?;
    let crossing = |a: (f64, f64), b: (f64, f64)| (b.0 - a.0) / (a.1 - b.1);
    let (all_active, all_passive) = (lines[0], lines[n_max]);
    let lo = lines[..n_max]
        .iter()
        .filter(|l| l.1 < all_passive.1)
        .map(|&l| crossing(all_passive, l))
        .fold(f64::INFINITY, f64::min);
    let hi = lines[1..]
        .iter()
        .filter(|l| l.1 > all_active.1)
        .map(|&l| crossing(all_active, l))
        .fold(f64::NEG_INFINITY, f64::max);
    if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
        return Err(Error::SingularSystem(format!(
            "threshold lines give no index range ({lo}, {hi})"
        )));
    }
    let mut idx = (1..=n_max)
        .map(|x| affine_fixed_point(&pair.params, &pair.cost, x, n_max).map(|d| d.value))
        .collect::<Result<Vec<f64>>>()?;
    idx.sort_by(f64::total_cmp);
    let pad = 0.1 * (hi - lo).max(1.0);
    let inner = points - 2;
    let mut grid = Vec::with_capacity(points);
    grid.push(lo - pad);
    for k in 1..=inner {
        let r = (k * (n_max - 1) / (inner + 1)).min(n_max - 2);
        grid.push((0.5 * (idx[r] + idx[r + 1])).clamp(lo, hi));
    }
    grid.push(hi + pad);
    grid.sort_by(f64::total_cmp);
    Ok(grid)
}

pub fn indexability_sweep_check(pairs: &[PresetPair], opts: &VerifyOptions) -> Result<CheckResult> {
    timed("optimal threshold non-increasing in λ", || {
        let mut failures = Vec::new();
        let mut cases = 0;
        for pair in pairs.iter().filter(|p| p.has_finite_index()) {
            let grid = index_range_grid(pair, opts.sweep_n_max, opts.grid_points)?;
            let report = indexability_check(&pair.params, &pair.cost, &grid, opts.sweep_n_max)?;
            cases += 1;
            let first = report.thresholds.first().copied();
            let last = report.thresholds.last().copied();
            if !report.monotone {
                failures.push(format!(
                    "{}: thresholds {:?}",
                    pair.label(),
                    report.thresholds
                ));
            }
            if first != Some(opts.sweep_n_max) || last != Some(0) {
                failures.push(format!(
                    "{}: sweep runs from {first:?} to {last:?}, expected {} to 0",
                    pair.label(),
                    opts.sweep_n_max
                ));
            }
        }
        Ok((
            cases,
            failures,
            format!(
                "{} grid points per pair, buffer {}",
                opts.grid_points, opts.sweep_n_max
            ),
        ))
    })
}

/// Runs every check on the suite presets; the iterative check uses the fig5
/// pairs only.
pub fn run_suite(opts: &VerifyOptions) -> Result<VerifyReport> {
    let pairs = suite_pairs()?;
    let fig5 = preset_pairs("fig5")?;
    Ok(VerifyReport {
        checks: vec![
            stationary_oracle_check(opts)?,
            passive_mass_check(&pairs, opts)?,
            structure_check(&pairs, opts)?,
            iterative_check(&fig5, opts)?,
            indexability_sweep_check(&pairs, opts)?,
        ],
    })
}
