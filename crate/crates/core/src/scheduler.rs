//! Small-timescale task scheduling.
//!
//! For a fixed deployment, each service's routing problem is an independent
//! convex quadratic program over a product of probability simplices (one per
//! server that received tasks). It is solved by projected gradient descent
//! started from the all-cloud point with an Armijo backtracking line search,
//! so the objective never increases and the gain over all-cloud is never
//! negative. A grid search over the same feasible set serves as an oracle.

use serde::{Deserialize, Serialize};

use crate::delay::{cloud_delay, SchedulingPolicy};
use crate::error::{Error, Result};
use crate::model::{ResourceAllocation, SystemConfig};
use crate::workload::ArrivalMatrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSettings {
    pub max_iterations: usize,
    /// Stop once the relative objective decrease of an accepted step falls below this.
    pub tolerance: f64,
    /// First trial step, as a multiple of `1 / L` for the Lipschitz estimate `L`.
    pub initial_step: f64,
    pub shrink: f64,
    /// Armijo sufficient-decrease constant.
    pub sufficient_decrease: f64,
}

impl Default for SolverSettings {
    fn default() -> Self {
        SolverSettings {
            max_iterations: 500,
            tolerance: 1e-7,
            initial_step: 1.0,
            shrink: 0.5,
            sufficient_decrease: 1e-4,
        }
    }
}

impl SolverSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.tolerance > 0.0) || self.max_iterations == 0 {
            return Err(Error::Config("solver needs tolerance > 0 and max_iterations >= 1".into()));
        }
        if !(self.initial_step > 0.0) || !(self.shrink > 0.0 && self.shrink < 1.0) {
            return Err(Error::Config("solver needs initial_step > 0 and shrink in (0, 1)".into()));
        }
        if !(self.sufficient_decrease > 0.0 && self.sufficient_decrease < 1.0) {
            return Err(Error::Config("sufficient_decrease must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

/// Euclidean projection onto `{x >= 0, sum x = 1}`.
pub fn project_to_simplex(v: &[f64]) -> Result<Vec<f64>> {
    if v.is_empty() {
        return Err(Error::InvalidArgument("cannot project an empty vector".into()));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numerical("non-finite entry in simplex projection".into()));
    }
    let mut out = v.to_vec();
    project_in_place(&mut out, &mut Vec::with_capacity(v.len()));
    Ok(out)
}

fn project_in_place(x: &mut [f64], scratch: &mut Vec<f64>) {
    scratch.clear();
    scratch.extend_from_slice(x);
    scratch.sort_unstable_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (i, &u) in scratch.iter().enumerate() {
        cumsum += u;
        let t = (cumsum - 1.0) / (i + 1) as f64;
        if u - t > 0.0 {
            theta = t;
        }
    }
    for xi in x.iter_mut() {
        *xi = (*xi - theta).max(0.0);
    }
}

/// One service's routing problem restricted to its free variables: rows are
/// servers with arrivals, columns the hosting servers followed by the cloud.
#[derive(Debug, Clone)]
pub struct ServiceProblem {
    pub service: usize,
    cells: usize,
    sources: Vec<usize>,
    counts: Vec<f64>,
    total: f64,
    hosts: Vec<usize>,
    /// `transmission[r * hosts + h]`: seconds to ship one task from source r to host h.
    transmission: Vec<f64>,
    cloud: Vec<f64>,
    /// `lambda / f` per host.
    curvature: Vec<f64>,
}

impl ServiceProblem {
    pub fn new(service: usize, alloc: &ResourceAllocation, arrivals: &ArrivalMatrix, cfg: &SystemConfig) -> Self {
        let cells = cfg.num_cells();
        let spec = &cfg.services[service];
        let mut sources = Vec::new();
        let mut counts = Vec::new();
        for (m, row) in arrivals.counts.iter().enumerate() {
            if row[service] > 0 {
                sources.push(m);
                counts.push(row[service] as f64);
            }
        }
        let total = counts.iter().sum();
        let hosts = alloc.plan.hosts(service);
        let mut transmission = Vec::with_capacity(sources.len() * hosts.len());
        for &from in &sources {
            for &to in &hosts {
                let rate = alloc.rate(from, to, service).expect("host deploys the service");
                transmission.push(if from == to { 0.0 } else { spec.task_size / rate });
            }
        }
        let cloud = sources.iter().map(|&from| cloud_delay(from, service, cfg)).collect();
        let curvature = hosts
            .iter()
            .map(|&to| spec.cycles / alloc.compute_share(to, service))
            .collect();
        ServiceProblem {
            service,
            cells,
            sources,
            counts,
            total,
            hosts,
            transmission,
            cloud,
            curvature,
        }
    }

    pub fn num_sources(&self) -> usize {
        self.sources.len()
    }

    pub fn num_hosts(&self) -> usize {
        self.hosts.len()
    }

    /// Number of entries in the free block (rows times columns incl. cloud).
    pub fn free_variables(&self) -> usize {
        self.sources.len() * (self.hosts.len() + 1)
    }

    fn width(&self) -> usize {
        self.hosts.len() + 1
    }

    pub fn cloud_point(&self) -> Vec<f64> {
        let w = self.width();
        let mut x = vec![0.0; self.sources.len() * w];
        for r in 0..self.sources.len() {
            x[r * w + w - 1] = 1.0;
        }
        x
    }

    fn loads(&self, x: &[f64], loads: &mut [f64]) {
        let w = self.width();
        loads.iter_mut().for_each(|l| *l = 0.0);
        for (r, &n) in self.counts.iter().enumerate() {
            for (h, load) in loads.iter_mut().enumerate() {
                *load += n * x[r * w + h];
            }
        }
    }

    fn objective_with(&self, x: &[f64], loads: &mut [f64]) -> f64 {
        if self.total == 0.0 {
            return 0.0;
        }
        let w = self.width();
        let hosts = self.hosts.len();
        self.loads(x, loads);
        let mut sum = 0.0;
        for (h, &load) in loads.iter().enumerate() {
            for (r, &n) in self.counts.iter().enumerate() {
                sum += n * x[r * w + h] * self.transmission[r * hosts + h];
            }
            sum += self.curvature[h] * load * load;
        }
        for (r, &n) in self.counts.iter().enumerate() {
            sum += n * x[r * w + hosts] * self.cloud[r];
        }
        sum / self.total
    }

    pub fn objective(&self, x: &[f64]) -> f64 {
        self.objective_with(x, &mut vec![0.0; self.hosts.len()])
    }

    fn gradient_with(&self, x: &[f64], loads: &mut [f64], grad: &mut [f64]) {
        let w = self.width();
        let hosts = self.hosts.len();
        self.loads(x, loads);
        for (r, &n) in self.counts.iter().enumerate() {
            let scale = n / self.total;
            for h in 0..hosts {
                grad[r * w + h] = scale * (self.transmission[r * hosts + h] + 2.0 * self.curvature[h] * loads[h]);
            }
            grad[r * w + hosts] = scale * self.cloud[r];
        }
    }

    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let mut grad = vec![0.0; x.len()];
        self.gradient_with(x, &mut vec![0.0; self.hosts.len()], &mut grad);
        grad
    }

    /// Upper bound on the largest Hessian eigenvalue: `2 (lambda/f) |N|^2 / N` per host block.
    fn lipschitz(&self) -> f64 {
        let norm2: f64 = self.counts.iter().map(|n| n * n).sum();
        self.curvature
            .iter()
            .map(|c| 2.0 * c * norm2 / self.total)
            .fold(0.0, f64::max)
    }

    /// Expands a free-block point into a full `M x (M + 1)` policy.
    pub fn to_policy(&self, x: &[f64], slot: usize) -> SchedulingPolicy {
        let mut policy = SchedulingPolicy::cloud_only(self.service, slot, self.cells);
        let w = self.width();
        for (r, &from) in self.sources.iter().enumerate() {
            let row = policy.row_mut(from);
            row[self.cells] = x[r * w + w - 1];
            for (h, &to) in self.hosts.iter().enumerate() {
                row[to] = x[r * w + h];
            }
        }
        policy
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ServiceSolution {
    pub policy: SchedulingPolicy,
    pub objective: f64,
    /// Objective of the all-cloud starting point.
    pub cloud_objective: f64,
    pub iterations: usize,
    /// Objective after every accepted step, starting with the all-cloud value.
    pub history: Vec<f64>,
}

/// Projected gradient descent on one service's routing problem.
pub fn solve_problem(problem: &ServiceProblem, settings: &SolverSettings, slot: usize) -> Result<ServiceSolution> {
    let mut x = problem.cloud_point();
    let mut loads = vec![0.0; problem.num_hosts()];
    let mut f = problem.objective_with(&x, &mut loads);
    if !f.is_finite() {
        return Err(Error::Numerical(format!(
            "service {} has non-finite all-cloud objective {f}",
            problem.service
        )));
    }
    let cloud_objective = f;
    let mut history = vec![f];
    let lipschitz = problem.lipschitz();
    if problem.num_hosts() == 0 || problem.num_sources() == 0 || lipschitz <= 0.0 {
        return Ok(ServiceSolution {
            policy: problem.to_policy(&x, slot),
            objective: f,
            cloud_objective,
            iterations: 0,
            history,
        });
    }

    let w = problem.hosts.len() + 1;
    let base_step = settings.initial_step / lipschitz;
    let (min_step, max_step) = (base_step * 1e-6, base_step * 1e6);
    let mut step = base_step;
    let mut grad = vec![0.0; x.len()];
    let mut next_grad = vec![0.0; x.len()];
    let mut candidate = vec![0.0; x.len()];
    let mut scratch = Vec::with_capacity(w);
    problem.gradient_with(&x, &mut loads, &mut grad);

    let mut iterations = 0;
    while iterations < settings.max_iterations {
        iterations += 1;
        let mut trial = step;
        let mut accepted = None;
        for _ in 0..64 {
            for ((c, xi), gi) in candidate.iter_mut().zip(&x).zip(&grad) {
                *c = xi - trial * gi;
            }
            for row in candidate.chunks_mut(w) {
                project_in_place(row, &mut scratch);
            }
            let decrease: f64 = candidate
                .iter()
                .zip(&x)
                .zip(&grad)
                .map(|((c, xi), gi)| gi * (c - xi))
                .sum();
            if decrease >= 0.0 {
                // Projected step does not move downhill: stationary.
                break;
            }
            let f_new = problem.objective_with(&candidate, &mut loads);
            if f_new <= f + settings.sufficient_decrease * decrease {
                accepted = Some(f_new);
                break;
            }
            trial *= settings.shrink;
        }
        let Some(f_new) = accepted else {
            break;
        };
        if !f_new.is_finite() {
            return Err(Error::Numerical(format!(
                "service {} objective became {f_new}",
                problem.service
            )));
        }
        problem.gradient_with(&candidate, &mut loads, &mut next_grad);
        // Barzilai-Borwein step for the next trial.
        let (mut ss, mut sy) = (0.0, 0.0);
        for i in 0..x.len() {
            let s = candidate[i] - x[i];
            ss += s * s;
            sy += s * (next_grad[i] - grad[i]);
        }
        step = if sy > 0.0 { (ss / sy).clamp(min_step, max_step) } else { base_step };
        std::mem::swap(&mut x, &mut candidate);
        std::mem::swap(&mut grad, &mut next_grad);
        let improvement = f - f_new;
        f = f_new;
        history.push(f);
        if improvement <= settings.tolerance * f.abs().max(f64::MIN_POSITIVE) {
            break;
        }
    }
    Ok(ServiceSolution {
        policy: problem.to_policy(&x, slot),
        objective: f,
        cloud_objective,
        iterations,
        history,
    })
}

pub fn solve_service_scheduling(
    service: usize,
    alloc: &ResourceAllocation,
    arrivals: &ArrivalMatrix,
    cfg: &SystemConfig,
    settings: &SolverSettings,
) -> Result<ServiceSolution> {
    check_inputs(alloc, arrivals, cfg)?;
    let problem = ServiceProblem::new(service, alloc, arrivals, cfg);
    solve_problem(&problem, settings, arrivals.slot)
}

fn check_inputs(alloc: &ResourceAllocation, arrivals: &ArrivalMatrix, cfg: &SystemConfig) -> Result<()> {
    let (m, j) = (cfg.num_cells(), cfg.num_services());
    if alloc.plan.rows.len() != m || arrivals.cells() != m || arrivals.services() != j {
        return Err(Error::Dimension(format!("inputs do not match a {m}x{j} system")));
    }
    Ok(())
}

/// Largest free block accepted by [`brute_force_oracle`].
pub const ORACLE_MAX_VARIABLES: usize = 6;

/// Exhaustive search of a grid over the feasible set. Returns the best
/// objective and the point achieving it.
pub fn brute_force_problem(problem: &ServiceProblem, grid_step: f64) -> Result<(f64, Vec<f64>)> {
    if problem.free_variables() > ORACLE_MAX_VARIABLES {
        return Err(Error::TooLarge(format!(
            "{} free variables (limit {ORACLE_MAX_VARIABLES})",
            problem.free_variables()
        )));
    }
    if !(grid_step > 0.0 && grid_step <= 1.0) {
        return Err(Error::InvalidArgument(format!("grid step {grid_step} outside (0, 1]")));
    }
    let divisions = (1.0 / grid_step).round() as usize;
    let width = problem.num_hosts() + 1;
    let rows = problem.num_sources();
    if rows == 0 {
        return Ok((0.0, Vec::new()));
    }
    let simplex = simplex_grid(width, divisions);
    let mut index = vec![0usize; rows];
    let mut point = vec![0.0; rows * width];
    let mut loads = vec![0.0; problem.num_hosts()];
    let mut best = (f64::INFINITY, point.clone());
    loop {
        for (r, &i) in index.iter().enumerate() {
            point[r * width..(r + 1) * width].copy_from_slice(&simplex[i]);
        }
        let value = problem.objective_with(&point, &mut loads);
        if value < best.0 {
            best = (value, point.clone());
        }
        // Odometer over rows.
        let mut r = 0;
        loop {
            if r == rows {
                return Ok(best);
            }
            index[r] += 1;
            if index[r] < simplex.len() {
                break;
            }
            index[r] = 0;
            r += 1;
        }
    }
}

/// All points of `{x >= 0, sum x = 1}` whose coordinates are multiples of `1/divisions`.
fn simplex_grid(width: usize, divisions: usize) -> Vec<Vec<f64>> {
    fn rec(width: usize, left: usize, divisions: usize, prefix: &mut Vec<usize>, out: &mut Vec<Vec<f64>>) {
        if prefix.len() + 1 == width {
            prefix.push(left);
            out.push(prefix.iter().map(|&k| k as f64 / divisions as f64).collect());
            prefix.pop();
            return;
        }
        for k in 0..=left {
            prefix.push(k);
            rec(width, left - k, divisions, prefix, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    rec(width, divisions, divisions, &mut Vec::with_capacity(width), &mut out);
    out
}

pub fn brute_force_oracle(
    service: usize,
    alloc: &ResourceAllocation,
    arrivals: &ArrivalMatrix,
    cfg: &SystemConfig,
    grid_step: f64,
) -> Result<f64> {
    check_inputs(alloc, arrivals, cfg)?;
    let problem = ServiceProblem::new(service, alloc, arrivals, cfg);
    Ok(brute_force_problem(&problem, grid_step)?.0)
}

/// Scheduling decisions and delays for one slot.
#[derive(Debug, Clone, PartialEq)]
pub struct SlotSolution {
    pub slot: usize,
    pub policies: Vec<SchedulingPolicy>,
    /// Per-service delay under the solved policies (0 where nothing arrived).
    pub service_delays: Vec<f64>,
    /// Slot delay, `None` when the slot had no arrivals.
    pub delay: Option<f64>,
    /// Slot delay when everything goes to the cloud.
    pub cloud_delay: Option<f64>,
    /// `cloud_delay - delay`; zero for empty slots.
    pub gain: f64,
    pub iterations: Vec<usize>,
}

/// Combines per-service solutions into a slot result.
pub fn assemble_slot(
    arrivals: &ArrivalMatrix,
    solutions: Vec<ServiceSolution>,
) -> SlotSolution {
    let service_delays: Vec<f64> = solutions.iter().map(|s| s.objective).collect();
    let cloud: Vec<f64> = solutions.iter().map(|s| s.cloud_objective).collect();
    let delay = crate::delay::aggregate_slot(&service_delays, arrivals);
    let cloud_delay = crate::delay::aggregate_slot(&cloud, arrivals);
    let gain = match (delay, cloud_delay) {
        (Some(d), Some(c)) => c - d,
        _ => 0.0,
    };
    SlotSolution {
        slot: arrivals.slot,
        iterations: solutions.iter().map(|s| s.iterations).collect(),
        policies: solutions.into_iter().map(|s| s.policy).collect(),
        service_delays,
        delay,
        cloud_delay,
        gain,
    }
}

/// Solves every service of the slot; services are independent, so the
/// result does not depend on the order in which they are solved.
pub fn solve_slot(
    alloc: &ResourceAllocation,
    arrivals: &ArrivalMatrix,
    cfg: &SystemConfig,
    settings: &SolverSettings,
) -> Result<SlotSolution> {
    check_inputs(alloc, arrivals, cfg)?;
    let solutions = (0..cfg.num_services())
        .map(|j| solve_problem(&ServiceProblem::new(j, alloc, arrivals, cfg), settings, arrivals.slot))
        .collect::<Result<Vec<_>>>()?;
    Ok(assemble_slot(arrivals, solutions))
}
