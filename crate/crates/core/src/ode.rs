//! Adaptive Dormand-Prince 5(4) integrator with exact output nodes.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ErrorNorm {
    /// Each component is measured against its own magnitude.
    Componentwise,
    /// All components share the largest magnitude of the state, for oscillating
    /// solutions whose components pass through zero.
    Shared,
}

#[derive(Debug, Clone, Copy)]
pub struct Options {
    pub rtol: f64,
    pub atol: f64,
    pub norm: ErrorNorm,
    pub max_step: f64,
    pub max_steps: usize,
}

impl Default for Options {
    fn default() -> Self {
        Self { rtol: 1e-11, atol: 0.0, norm: ErrorNorm::Componentwise, max_step: f64::INFINITY, max_steps: 10_000_000 }
    }
}

impl Options {
    pub fn rtol(mut self, rtol: f64) -> Self {
        self.rtol = rtol;
        self
    }
    pub fn atol(mut self, atol: f64) -> Self {
        self.atol = atol;
        self
    }
    pub fn norm(mut self, norm: ErrorNorm) -> Self {
        self.norm = norm;
        self
    }
    pub fn max_step(mut self, h: f64) -> Self {
        self.max_step = h;
        self
    }
}

const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
// fifth-order weights are the last row of A; these are (b5 - b4)
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

/// Integrates `y' = rhs(t, y)` from `(t0, y0)` and returns the state at every
/// entry of `outputs`, which must be monotone and on one side of `t0`.
pub fn integrate<F>(mut rhs: F, t0: f64, y0: &[f64], outputs: &[f64], opts: &Options) -> Result<Vec<Vec<f64>>>
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    let dim = y0.len();
    let mut out = Vec::with_capacity(outputs.len());
    if outputs.is_empty() {
        return Ok(out);
    }
    let dir = if outputs.iter().any(|&t| t > t0) { 1.0 } else { -1.0 };
    if outputs.windows(2).any(|w| (w[1] - w[0]) * dir < 0.0) || outputs.iter().any(|&t| (t - t0) * dir < 0.0) {
        return Err(Error::Integration("output times not monotone from the initial time".into()));
    }

    let mut t = t0;
    let mut y = y0.to_vec();
    let mut k: Vec<Vec<f64>> = vec![vec![0.0; dim]; 7];
    let mut ytmp = vec![0.0; dim];
    let mut ynew = vec![0.0; dim];
    rhs(t, &y, &mut k[0]);

    let span = (outputs[outputs.len() - 1] - t0).abs();
    let mut h_nat = (span * 1e-3).min(opts.max_step).max(1e-12 * span.max(1.0));
    let mut steps = 0usize;

    for &target in outputs {
        while (target - t) * dir > 0.0 {
            steps += 1;
            if steps > opts.max_steps {
                return Err(Error::Integration(format!("step budget exhausted at t = {t}")));
            }
            let remaining = (target - t).abs();
            let clamped = h_nat >= remaining;
            let h = dir * if clamped { remaining } else { h_nat };

            for s in 1..7 {
                for i in 0..dim {
                    let mut acc = 0.0;
                    for (j, kj) in k.iter().enumerate().take(s) {
                        acc += A[s][j] * kj[i];
                    }
                    ytmp[i] = y[i] + h * acc;
                }
                rhs(t + C[s] * h, &ytmp, &mut k[s]);
            }
            // ytmp now holds the fifth-order solution (stage 7 is evaluated there, FSAL)
            ynew.copy_from_slice(&ytmp);

            let err = error_norm(&y, &ynew, &k, h, opts);
            if !err.is_finite() || ynew.iter().any(|v| !v.is_finite()) {
                h_nat *= 0.25;
                if h_nat < 1e-14 * t.abs().max(1.0) {
                    return Err(Error::Integration(format!("non-finite state near t = {t}")));
                }
                continue;
            }
            if err <= 1.0 {
                t = if clamped { target } else { t + h };
                y.copy_from_slice(&ynew);
                let last = k[6].clone();
                k[0].copy_from_slice(&last);
                let grow = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
                if !clamped || grow < 1.0 {
                    h_nat = (h.abs() * grow).min(opts.max_step);
                }
            } else {
                h_nat = h.abs() * (0.9 * err.powf(-0.2)).clamp(0.1, 0.9);
                if h_nat < 1e-14 * t.abs().max(1.0) {
                    return Err(Error::Integration(format!("step size underflow at t = {t}")));
                }
            }
        }
        out.push(y.clone());
    }
    Ok(out)
}

fn error_norm(y: &[f64], ynew: &[f64], k: &[Vec<f64>], h: f64, opts: &Options) -> f64 {
    let dim = y.len();
    let shared = match opts.norm {
        ErrorNorm::Shared => y.iter().chain(ynew.iter()).fold(0.0f64, |a, v| a.max(v.abs())),
        ErrorNorm::Componentwise => 0.0,
    };
    let mut err = 0.0f64;
    for i in 0..dim {
        let mut e = 0.0;
        for (j, kj) in k.iter().enumerate() {
            e += E[j] * kj[i];
        }
        let mag = match opts.norm {
            ErrorNorm::Shared => shared,
            ErrorNorm::Componentwise => y[i].abs().max(ynew[i].abs()),
        };
        let sc = opts.atol + opts.rtol * mag;
        let ratio = if sc > 0.0 {
            (h * e).abs() / sc
        } else if e == 0.0 {
            0.0
        } else {
            f64::INFINITY
        };
        err = err.max(ratio);
    }
    err
}
