//! Adaptive Dormand-Prince 5(4) integration for small fixed-size systems.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub(crate) struct OdeOptions {
    pub rtol: f64,
    pub atol: f64,
    /// Any state component beyond this magnitude aborts with `BlowUp`.
    pub bound: f64,
    pub max_steps: usize,
}

impl Default for OdeOptions {
    fn default() -> Self {
        Self {
            rtol: 1e-9,
            atol: 1e-12,
            bound: 1e6,
            max_steps: 200_000,
        }
    }
}

const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

/// Integrate `y' = rhs(t, y)` from `t0` to `t1`, calling `observe` at the start
/// and after every accepted step. Returns the state at `t1`.
pub(crate) fn integrate<const N: usize>(
    mut rhs: impl FnMut(f64, &[f64; N]) -> Result<[f64; N]>,
    y0: [f64; N],
    t0: f64,
    t1: f64,
    opts: &OdeOptions,
    mut observe: impl FnMut(f64, &[f64; N]),
) -> Result<[f64; N]> {
    let span = t1 - t0;
    let mut t = t0;
    let mut y = y0;
    observe(t, &y);
    let mut k = [[0.0; N]; 7];
    k[0] = rhs(t, &y)?;
    let mut h = initial_step(&y, &k[0], span, opts);
    let mut steps = 0;
    while t < t1 {
        if steps >= opts.max_steps {
            return Err(Error::BlowUp { t });
        }
        steps += 1;
        let last = t + h >= t1;
        if last {
            h = t1 - t;
        }
        for s in 1..7 {
            let mut stage = y;
            for (j, kj) in k.iter().enumerate().take(s) {
                let a = A[s][j];
                if a != 0.0 {
                    for i in 0..N {
                        stage[i] += h * a * kj[i];
                    }
                }
            }
            k[s] = rhs(t + C[s] * h, &stage)?;
        }
        // seventh stage is evaluated at the fifth-order solution (FSAL)
        let mut y_new = y;
        for i in 0..N {
            y_new[i] += h
                * (A[6][0] * k[0][i]
                    + A[6][2] * k[2][i]
                    + A[6][3] * k[3][i]
                    + A[6][4] * k[4][i]
                    + A[6][5] * k[5][i]);
        }
        k[6] = rhs(t + h, &y_new)?;
        let mut err = 0.0;
        for i in 0..N {
            let e: f64 = (0..7).map(|s| E[s] * k[s][i]).sum::<f64>() * h;
            let scale = opts.atol + opts.rtol * y[i].abs().max(y_new[i].abs());
            err += (e / scale).powi(2);
        }
        let err = (err / N as f64).sqrt();
        if !err.is_finite() {
            h *= 0.2;
            if h.abs() < 1e-14 * span.abs().max(1.0) {
                return Err(Error::BlowUp { t });
            }
            continue;
        }
        if err <= 1.0 {
            t = if last { t1 } else { t + h };
            y = y_new;
            k[0] = k[6];
            if y.iter().any(|v| !(v.abs() <= opts.bound)) {
                return Err(Error::BlowUp { t });
            }
            observe(t, &y);
        }
        let factor = if err == 0.0 {
            5.0
        } else {
            (0.9 * err.powf(-0.2)).clamp(0.2, 5.0)
        };
        h *= factor;
        if h < 1e-14 * span.abs().max(1.0) {
            return Err(Error::BlowUp { t });
        }
    }
    Ok(y)
}

fn initial_step<const N: usize>(y: &[f64; N], dy: &[f64; N], span: f64, opts: &OdeOptions) -> f64 {
    let mut d0: f64 = 0.0;
    let mut d1: f64 = 0.0;
    for i in 0..N {
        let scale = opts.atol + opts.rtol * y[i].abs();
        d0 += (y[i] / scale).powi(2);
        d1 += (dy[i] / scale).powi(2);
    }
    let (d0, d1) = ((d0 / N as f64).sqrt(), (d1 / N as f64).sqrt());
    let h = if d0 < 1e-5 || d1 < 1e-5 {
        1e-6
    } else {
        0.01 * d0 / d1
    };
    h.min(span.abs() / 10.0).max(1e-10)
}
