use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

use super::field::VelocityField;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Euler,
    Rk4,
}

/// States of one fixed-step rollout, recorded at each query time.
#[derive(Debug)]
pub struct Rollout<'t> {
    pub times: Vec<f64>,
    pub states: Vec<Var<'t>>,
    pub method: Method,
    pub step: f64,
}

fn step_once<'t, F: VelocityField + ?Sized>(
    field: &F,
    tape: &'t Tape,
    method: Method,
    t: f64,
    h: f64,
    z: Var<'t>,
) -> Result<Var<'t>> {
    let v = |t: f64, z: Var<'t>| field.velocity(tape, &[t], z);
    match method {
        Method::Euler => z.add(v(t, z)?.scale(h)),
        Method::Rk4 => {
            let k1 = v(t, z)?;
            let k2 = v(t + 0.5 * h, z.add(k1.scale(0.5 * h))?)?;
            let k3 = v(t + 0.5 * h, z.add(k2.scale(0.5 * h))?)?;
            let k4 = v(t + h, z.add(k3.scale(h))?)?;
            let incr = k1.add(k2.scale(2.0))?.add(k3.scale(2.0))?.add(k4)?;
            z.add(incr.scale(h / 6.0))
        }
    }
}

/// Integration direction implied by the query times: +1 forward, −1 backward.
fn direction(t0: f64, query: &[f64]) -> Result<f64> {
    let forward = query.iter().all(|&q| q >= t0);
    let backward = query.iter().all(|&q| q <= t0);
    let dir = if forward {
        1.0
    } else if backward {
        -1.0
    } else {
        return Err(Error::invalid(
            "integrate",
            "query times must all lie on one side of the start time",
        ));
    };
    if query.windows(2).any(|w| (w[1] - w[0]) * dir < 0.0) {
        return Err(Error::invalid("integrate", "query times are not sorted in integration order"));
    }
    if query.iter().any(|q| !q.is_finite()) {
        return Err(Error::invalid("integrate", "non-finite query time"));
    }
    Ok(dir)
}

/// Fixed-step rollout driven by `advance(t, h, z)`; the last step of each segment is
/// clipped so every query time is reached exactly.
fn drive<S, A>(t0: f64, query: &[f64], step: f64, mut z: S, mut advance: A, check: impl Fn(&S) -> bool) -> Result<Vec<S>>
where
    S: Clone,
    A: FnMut(f64, f64, S) -> Result<S>,
{
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::invalid("integrate", format!("step must be positive, got {step}")));
    }
    let dir = direction(t0, query)?;
    let mut t = t0;
    let mut out = Vec::with_capacity(query.len());
    for &q in query {
        let start = t;
        let mut k = 1u64;
        while t != q {
            let grid = start + dir * k as f64 * step;
            let next = if (q - grid) * dir <= 1e-9 * step { q } else { grid };
            z = advance(t, next - t, z)?;
            if !check(&z) {
                return Err(Error::NonFinite(format!("rollout state at t = {next}")));
            }
            t = next;
            k += 1;
        }
        out.push(z.clone());
    }
    Ok(out)
}

/// Differentiable rollout on `tape`. States at each query time reference the integrator
/// graph, so gradients flow through every step.
pub fn integrate<'t, F: VelocityField + ?Sized>(
    field: &F,
    tape: &'t Tape,
    z0: Var<'t>,
    t0: f64,
    query: &[f64],
    method: Method,
    step: f64,
) -> Result<Rollout<'t>> {
    let states = drive(
        t0,
        query,
        step,
        z0,
        |t, h, z| step_once(field, tape, method, t, h, z),
        |z| z.value().is_finite(),
    )?;
    Ok(Rollout {
        times: query.to_vec(),
        states,
        method,
        step,
    })
}

/// Rollout on plain values. Each step runs on its own short-lived tape, so memory stays
/// flat for long horizons and large batches.
pub fn integrate_detached<F: VelocityField + ?Sized>(
    field: &F,
    z0: &Tensor,
    t0: f64,
    query: &[f64],
    method: Method,
    step: f64,
) -> Result<Vec<Tensor>> {
    drive(
        t0,
        query,
        step,
        z0.clone(),
        |t, h, z| {
            let tape = Tape::new();
            let zv = tape.constant(z);
            Ok(step_once(field, &tape, method, t, h, zv)?.value())
        },
        Tensor::is_finite,
    )
}
