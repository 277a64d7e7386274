//! Adaptive Dormand–Prince 5(4) integration for small autonomous systems.

use crate::error::{Error, Result};

pub const DIM: usize = 3;
pub type State = [f64; DIM];

const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const B5: [f64; 7] = [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0];
const B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

/// One Dormand–Prince step; returns the fifth-order update and an error
/// estimate.
pub fn dp_step(f: &impl Fn(&State) -> State, y: &State, h: f64) -> (State, f64) {
    let mut k = [[0.0; DIM]; 7];
    k[0] = f(y);
    for i in 1..7 {
        let mut yi = *y;
        for (j, kj) in k.iter().enumerate().take(i) {
            for d in 0..DIM {
                yi[d] += h * A[i][j] * kj[d];
            }
        }
        k[i] = f(&yi);
    }
    let mut y5 = *y;
    let mut err: f64 = 0.0;
    for d in 0..DIM {
        let mut s5 = 0.0;
        let mut s4 = 0.0;
        for i in 0..7 {
            s5 += B5[i] * k[i][d];
            s4 += B4[i] * k[i][d];
        }
        y5[d] += h * s5;
        let scale = 1.0 + y[d].abs().max(y5[d].abs());
        err = err.max((h * (s5 - s4)).abs() / scale);
    }
    (y5, err)
}

/// Integrate from `t0` to `t1` with local error tolerance `tol`. `h` holds
/// the suggested step and is updated for reuse.
pub fn integrate(f: &impl Fn(&State) -> State, y0: &State, t0: f64, t1: f64, tol: f64, h: &mut f64) -> Result<State> {
    let mut y = *y0;
    let mut t = t0;
    let dir = (t1 - t0).signum();
    while (t1 - t) * dir > 0.0 {
        let mut step = h.abs().min((t1 - t).abs()) * dir;
        loop {
            if step.abs() < 1e-14 * (1.0 + t.abs()) {
                return Err(Error::StiffOde { s: t });
            }
            let (yn, err) = dp_step(f, &y, step);
            let finite = yn.iter().all(|v| v.is_finite());
            if finite && err <= tol {
                y = yn;
                t += step;
                let grow = if err > 0.0 { (0.9 * (tol / err).powf(0.2)).min(5.0) } else { 5.0 };
                if (t1 - t).abs() > 1e-300 {
                    *h = step.abs() * grow;
                }
                break;
            }
            let shrink = if finite && err > 0.0 { (0.9 * (tol / err).powf(0.2)).max(0.1) } else { 0.1 };
            step *= shrink;
        }
        if (t1 - t).abs() < 1e-15 * (1.0 + t.abs()) {
            t = t1;
        }
    }
    Ok(y)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn harmonic_oscillator_over_one_period() {
        let f = |y: &State| [y[1], -y[0], 1.0];
        let mut h = 0.1;
        let tp = 2.0 * std::f64::consts::PI;
        let y = integrate(&f, &[1.0, 0.0, 0.0], 0.0, tp, 1e-13, &mut h).unwrap();
        assert!((y[0] - 1.0).abs() < 1e-10 && y[1].abs() < 1e-10);
        assert!((y[2] - tp).abs() < 1e-12);
    }

    #[test]
    fn fifth_order_local_error() {
        let f = |y: &State| [y[0], 0.0, 0.0];
        let e1 = (dp_step(&f, &[1.0, 0.0, 0.0], 0.1).0[0] - 0.1f64.exp()).abs();
        let e2 = (dp_step(&f, &[1.0, 0.0, 0.0], 0.05).0[0] - 0.05f64.exp()).abs();
        assert!(e1 / e2 > 40.0, "{}", e1 / e2);
    }
}
