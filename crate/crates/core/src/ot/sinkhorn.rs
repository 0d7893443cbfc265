//! Log-domain Sinkhorn iterations for entropically regularized transport.
//!
//! Solves `min_π ⟨π, C⟩ + ε·KL(π ‖ a⊗b)` over couplings of `a` and `b`. The
//! optimal plan coincides with the one for the `Σ π(log π − 1)` entropy since
//! the two regularizers differ by a constant on the coupling polytope.
//! The dual potentials `(f, g)` are kept in log-scale so that small `ε` never
//! overflows.

use crate::error::{Error, Result};
use crate::parallel::map_rows;
use crate::tensor::Tensor;

use super::cost::CostMatrix;

#[derive(Clone, Debug, PartialEq)]
pub struct SinkhornOptions {
    pub max_iters: usize,
    /// Stop once the largest absolute row-marginal violation falls below this.
    pub tol: f64,
    /// Enables ε-annealing: the blur length `√ε` starts at the cost diameter and shrinks
    /// by this factor per stage until it reaches the target.
    pub scaling: Option<f64>,
}

impl Default for SinkhornOptions {
    fn default() -> Self {
        SinkhornOptions {
            max_iters: 500,
            tol: 1e-6,
            scaling: None,
        }
    }
}

/// Entropic transport plan with its dual potentials.
#[derive(Clone, Debug)]
pub struct Coupling {
    plan: Tensor,
    row_marginal: Vec<f64>,
    col_marginal: Vec<f64>,
    epsilon: f64,
    f: Vec<f64>,
    g: Vec<f64>,
    converged: bool,
    iterations: usize,
    marginal_error: f64,
}

impl Coupling {
    pub fn plan(&self) -> &Tensor {
        &self.plan
    }

    pub fn row_marginal(&self) -> &[f64] {
        &self.row_marginal
    }

    pub fn col_marginal(&self) -> &[f64] {
        &self.col_marginal
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn converged(&self) -> bool {
        self.converged
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }

    /// Largest absolute row or column marginal violation of the returned plan.
    pub fn marginal_error(&self) -> f64 {
        self.marginal_error
    }

    pub fn potentials(&self) -> (&[f64], &[f64]) {
        (&self.f, &self.g)
    }

    /// `⟨π, C⟩`.
    pub fn transport_cost(&self, cost: &CostMatrix) -> f64 {
        self.plan
            .data()
            .iter()
            .zip(cost.entries().data())
            .map(|(p, c)| p * c)
            .sum()
    }

    /// Entropic transport value `⟨a, f⟩ + ⟨b, g⟩`.
    pub fn dual_value(&self) -> f64 {
        let fa: f64 = self.f.iter().zip(&self.row_marginal).map(|(f, a)| f * a).sum();
        let gb: f64 = self.g.iter().zip(&self.col_marginal).map(|(g, b)| g * b).sum();
        fa + gb
    }

    pub fn total_mass(&self) -> f64 {
        self.plan.data().iter().sum()
    }

    /// A plan given directly, e.g. the exact diagonal plan in tests.
    pub fn from_plan(plan: Tensor) -> Result<Self> {
        if plan.data().iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::invalid("coupling", "entries must be finite and nonnegative"));
        }
        let row_marginal: Vec<f64> = plan.iter_rows().map(|r| r.iter().sum()).collect();
        let mut col_marginal = vec![0.0; plan.cols()];
        for r in plan.iter_rows() {
            col_marginal.iter_mut().zip(r).for_each(|(c, v)| *c += v);
        }
        Ok(Coupling {
            f: vec![0.0; plan.rows()],
            g: vec![0.0; plan.cols()],
            plan,
            row_marginal,
            col_marginal,
            epsilon: 0.0,
            converged: true,
            iterations: 0,
            marginal_error: 0.0,
        })
    }
}

pub fn uniform(n: usize) -> Vec<f64> {
    vec![1.0 / n as f64; n]
}

fn check_marginal(name: &str, m: &[f64], len: usize) -> Result<()> {
    if m.len() != len {
        return Err(Error::invalid(
            "sinkhorn",
            format!("{name} marginal has {} entries, cost has {len}", m.len()),
        ));
    }
    if m.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::invalid("sinkhorn", format!("{name} marginal has negative or non-finite entries")));
    }
    let total: f64 = m.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::invalid("sinkhorn", format!("{name} marginal sums to {total}")));
    }
    Ok(())
}

/// `−ε · log Σ_j exp(log w_j + (pot_j − C_ij)/ε)` for each row i of `cost`.
fn soft_min(cost: &Tensor, log_w: &[f64], pot: &[f64], eps: f64) -> Vec<f64> {
    map_rows(cost.rows(), |i| {
        let row = cost.row(i);
        let mut max = f64::NEG_INFINITY;
        for j in 0..row.len() {
            let v = log_w[j] + (pot[j] - row[j]) / eps;
            if v > max {
                max = v;
            }
        }
        if max == f64::NEG_INFINITY {
            return f64::INFINITY;
        }
        let mut s = 0.0;
        for j in 0..row.len() {
            s += (log_w[j] + (pot[j] - row[j]) / eps - max).exp();
        }
        -eps * (max + s.ln())
    })
}

/// Projects a near-feasible plan onto the transport polytope: rows, then columns, are scaled
/// down where they exceed their marginal, and the remaining deficit is filled by a rank-one
/// correction. Entries move by at most the marginal violation.
fn round_to_marginals(mut plan: Tensor, a: &[f64], b: &[f64]) -> Tensor {
    let (n, m) = plan.shape();
    for (i, &ai) in a.iter().enumerate() {
        let s: f64 = plan.row(i).iter().sum();
        if s > ai {
            let x = ai / s;
            for j in 0..m {
                plan.set(i, j, plan.get(i, j) * x);
            }
        }
    }
    for (j, &bj) in b.iter().enumerate() {
        let s: f64 = (0..n).map(|i| plan.get(i, j)).sum();
        if s > bj {
            let y = bj / s;
            for i in 0..n {
                plan.set(i, j, plan.get(i, j) * y);
            }
        }
    }
    let err_r: Vec<f64> = (0..n).map(|i| (a[i] - plan.row(i).iter().sum::<f64>()).max(0.0)).collect();
    let err_c: Vec<f64> = (0..m)
        .map(|j| (b[j] - (0..n).map(|i| plan.get(i, j)).sum::<f64>()).max(0.0))
        .collect();
    let deficit: f64 = err_r.iter().sum();
    if deficit > 0.0 {
        for i in 0..n {
            for j in 0..m {
                plan.set(i, j, plan.get(i, j) + err_r[i] * err_c[j] / deficit);
            }
        }
    }
    plan
}

fn annealing_schedule(cost_max: f64, target: f64, scaling: f64) -> Vec<f64> {
    let mut out = Vec::new();
    if !(scaling > 0.0 && scaling < 1.0) || cost_max <= target {
        return out;
    }
    let factor = scaling * scaling;
    let mut eps = cost_max;
    while eps > target {
        out.push(eps);
        eps *= factor;
    }
    out
}

pub fn sinkhorn(
    cost: &CostMatrix,
    row_marginal: &[f64],
    col_marginal: &[f64],
    epsilon: f64,
    opts: &SinkhornOptions,
) -> Result<Coupling> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::invalid("sinkhorn", format!("epsilon must be positive, got {epsilon}")));
    }
    let c = cost.entries();
    let (n, m) = c.shape();
    if n == 0 || m == 0 {
        return Err(Error::invalid("sinkhorn", "empty cost matrix"));
    }
    if !c.is_finite() {
        return Err(Error::NonFinite("sinkhorn cost".into()));
    }
    check_marginal("row", row_marginal, n)?;
    check_marginal("column", col_marginal, m)?;

    let ct = c.transpose();
    let log_a: Vec<f64> = row_marginal.iter().map(|v| v.ln()).collect();
    let log_b: Vec<f64> = col_marginal.iter().map(|v| v.ln()).collect();

    let mut g = vec![0.0; m];
    let mut f;
    let mut iterations = 0;

    if let Some(s) = opts.scaling {
        for eps in annealing_schedule(cost.max(), epsilon, s) {
            f = soft_min(c, &log_b, &g, eps);
            g = soft_min(&ct, &log_a, &f, eps);
            iterations += 1;
        }
    }

    f = soft_min(c, &log_b, &g, epsilon);
    g = soft_min(&ct, &log_a, &f, epsilon);
    let mut converged = false;
    loop {
        let f_next = soft_min(c, &log_b, &g, epsilon);
        iterations += 1;
        // current row sums are a_i·exp((f_i − f_next_i)/ε)
        let row_error = f
            .iter()
            .zip(&f_next)
            .zip(row_marginal)
            .map(|((f, fnx), a)| if *a == 0.0 { 0.0 } else { (a * (((f - fnx) / epsilon).exp() - 1.0)).abs() })
            .fold(0.0, f64::max);
        if row_error < opts.tol {
            converged = true;
            break;
        }
        if iterations >= opts.max_iters {
            break;
        }
        f = f_next;
        g = soft_min(&ct, &log_a, &f, epsilon);
    }

    let rows = map_rows(n, |i| {
        (0..m)
            .map(|j| (log_a[i] + log_b[j] + (f[i] + g[j] - c.get(i, j)) / epsilon).exp())
            .collect::<Vec<_>>()
    });
    let plan = round_to_marginals(Tensor::new(n, m, rows.concat())?, row_marginal, col_marginal);

    let mut marginal_error = 0.0f64;
    for (r, a) in plan.iter_rows().zip(row_marginal) {
        marginal_error = marginal_error.max((r.iter().sum::<f64>() - a).abs());
    }
    for (j, b) in col_marginal.iter().enumerate() {
        let s: f64 = (0..n).map(|i| plan.get(i, j)).sum();
        marginal_error = marginal_error.max((s - b).abs());
    }

    Ok(Coupling {
        plan,
        row_marginal: row_marginal.to_vec(),
        col_marginal: col_marginal.to_vec(),
        epsilon,
        f,
        g,
        converged,
        iterations,
        marginal_error,
    })
}

/// Sinkhorn with uniform marginals on both sides.
pub fn sinkhorn_uniform(cost: &CostMatrix, epsilon: f64, opts: &SinkhornOptions) -> Result<Coupling> {
    let (n, m) = cost.shape();
    sinkhorn(cost, &uniform(n), &uniform(m), epsilon, opts)
}
