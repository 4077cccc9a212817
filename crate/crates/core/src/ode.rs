//! Dormand–Prince 5(4) stepping for autonomous planar fields, with the
//! standard 4th-order continuous extension.

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OdeError<E> {
    #[error("step size underflow at t = {t:e} ({h:e})")]
    StepUnderflow { t: f64, h: f64 },
    #[error(transparent)]
    Field(E),
}

const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;
const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

type V2 = [f64; 2];

#[inline]
fn comb(y: V2, h: f64, terms: &[(f64, V2)]) -> V2 {
    let mut out = y;
    for (c, k) in terms {
        out[0] += h * c * k[0];
        out[1] += h * c * k[1];
    }
    out
}

/// One accepted step with its interpolant.
#[derive(Debug, Clone, Copy)]
pub struct DenseStep {
    pub t0: f64,
    pub h: f64,
    pub y0: V2,
    pub y1: V2,
    r: [V2; 5],
}

impl DenseStep {
    pub fn t1(&self) -> f64 {
        self.t0 + self.h
    }

    /// Interpolated state at time `t` in `[t0, t0 + h]`.
    pub fn eval(&self, t: f64) -> V2 {
        let th = ((t - self.t0) / self.h).clamp(0.0, 1.0);
        let th1 = 1.0 - th;
        let r = &self.r;
        let f = |i: usize| r[0][i] + th * (r[1][i] + th1 * (r[2][i] + th * (r[3][i] + th1 * r[4][i])));
        [f(0), f(1)]
    }
}

/// Single Dormand–Prince step; returns the 5th-order solution, the error
/// estimate and the dense-output coefficients.
pub fn dp_step<F, E>(f: &mut F, y: V2, k1: V2, h: f64) -> Result<(V2, V2, V2, [V2; 5]), E>
where
    F: FnMut(V2) -> Result<V2, E>,
{
    let k2 = f(comb(y, h, &[(A21, k1)]))?;
    let k3 = f(comb(y, h, &[(A31, k1), (A32, k2)]))?;
    let k4 = f(comb(y, h, &[(A41, k1), (A42, k2), (A43, k3)]))?;
    let k5 = f(comb(y, h, &[(A51, k1), (A52, k2), (A53, k3), (A54, k4)]))?;
    let k6 = f(comb(y, h, &[(A61, k1), (A62, k2), (A63, k3), (A64, k4), (A65, k5)]))?;
    let y1 = comb(y, h, &[(A71, k1), (A73, k3), (A74, k4), (A75, k5), (A76, k6)]);
    let k7 = f(y1)?;
    let err = comb([0.0, 0.0], h, &[(E1, k1), (E3, k3), (E4, k4), (E5, k5), (E6, k6), (E7, k7)]);
    let mut r = [[0.0; 2]; 5];
    for i in 0..2 {
        let dy = y1[i] - y[i];
        let b = h * k1[i] - dy;
        r[0][i] = y[i];
        r[1][i] = dy;
        r[2][i] = b;
        r[3][i] = dy - h * k7[i] - b;
        r[4][i] = h * (D1 * k1[i] + D3 * k3[i] + D4 * k4[i] + D5 * k5[i] + D6 * k6[i] + D7 * k7[i]);
    }
    Ok((y1, k7, err, r))
}

/// Adaptive stepper state.
#[derive(Debug, Clone)]
pub struct Stepper {
    pub rtol: f64,
    pub atol: f64,
    pub h_max: f64,
    pub t: f64,
    pub y: V2,
    h: f64,
    k1: Option<V2>,
}

impl Stepper {
    pub fn new(t: f64, y: V2, tol: f64, h_max: f64) -> Self {
        Stepper { rtol: tol, atol: tol, h_max, t, y, h: (h_max * 0.1).min(1e-3), k1: None }
    }

    /// Take one accepted step, never beyond `t_limit`.
    pub fn step<F, E>(&mut self, f: &mut F, t_limit: f64) -> Result<DenseStep, OdeError<E>>
    where
        F: FnMut(V2) -> Result<V2, E>,
    {
        let k1 = match self.k1 {
            Some(k) => k,
            None => f(self.y).map_err(OdeError::Field)?,
        };
        let mut h = self.h.min(self.h_max).min(t_limit - self.t);
        loop {
            let h_min = 1e-14 * (1.0 + self.t.abs());
            if h < h_min {
                if t_limit - self.t < h_min {
                    h = t_limit - self.t;
                } else {
                    return Err(OdeError::StepUnderflow { t: self.t, h });
                }
            }
            let (y1, k7, err, r) = dp_step(f, self.y, k1, h).map_err(OdeError::Field)?;
            let mut e2 = 0.0;
            for i in 0..2 {
                let sc = self.atol + self.rtol * self.y[i].abs().max(y1[i].abs());
                e2 += (err[i] / sc).powi(2);
            }
            let e = (0.5 * e2).sqrt();
            if !y1[0].is_finite() || !y1[1].is_finite() {
                h *= 0.25;
                continue;
            }
            if e <= 1.0 {
                let fac = if e == 0.0 { 5.0 } else { (0.9 * e.powf(-0.2)).clamp(0.2, 5.0) };
                let step = DenseStep { t0: self.t, h, y0: self.y, y1, r };
                self.t += h;
                self.y = y1;
                self.k1 = Some(k7);
                self.h = (h * fac).min(self.h_max);
                return Ok(step);
            }
            h *= (0.9 * e.powf(-0.2)).clamp(0.2, 1.0);
        }
    }

    /// Replace the state (e.g. after projection or wrapping) and drop the
    /// cached first stage.
    pub fn reset_state(&mut self, y: V2) {
        self.y = y;
        self.k1 = None;
    }
}

/// Integrate to `t_end` with fixed step count, for convergence checks.
pub fn fixed_steps<F, E>(f: &mut F, y0: V2, t_end: f64, n: usize) -> Result<V2, E>
where
    F: FnMut(V2) -> Result<V2, E>,
{
    let h = t_end / n as f64;
    let mut y = y0;
    for _ in 0..n {
        let k1 = f(y)?;
        y = dp_step(f, y, k1, h)?.0;
    }
    Ok(y)
}
