//! Dormand-Prince 5(4) embedded Runge-Kutta pair with step-size control.

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepControl {
    pub rtol: f64,
    pub atol: f64,
    pub h_init: f64,
    pub h_max: f64,
    pub h_min: f64,
    pub max_steps: usize,
}

impl Default for StepControl {
    fn default() -> Self {
        StepControl {
            rtol: 1e-10,
            atol: 1e-10,
            h_init: 1e-3,
            h_max: 0.02,
            h_min: 1e-14,
            max_steps: 2_000_000,
        }
    }
}

/// How an integration ended.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Outcome {
    Completed,
    /// The observer asked to stop after the step ending at `at`.
    Stopped { at: f64 },
    /// The controller needed a step below `h_min` at `at`.
    StepUnderflow { at: f64 },
}

const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A2: [f64; 1] = [1.0 / 5.0];
const A3: [f64; 2] = [3.0 / 40.0, 9.0 / 40.0];
const A4: [f64; 3] = [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0];
const A5: [f64; 4] = [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0];
const A6: [f64; 5] = [
    9017.0 / 3168.0,
    -355.0 / 33.0,
    46732.0 / 5247.0,
    49.0 / 176.0,
    -5103.0 / 18656.0,
];
const B: [f64; 6] = [
    35.0 / 384.0,
    0.0,
    500.0 / 1113.0,
    125.0 / 192.0,
    -2187.0 / 6784.0,
    11.0 / 84.0,
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

fn combine<const N: usize>(y: &[f64; N], h: f64, coeffs: &[f64], ks: &[[f64; N]]) -> [f64; N] {
    let mut out = *y;
    for (c, k) in coeffs.iter().zip(ks) {
        if *c != 0.0 {
            for i in 0..N {
                out[i] += h * c * k[i];
            }
        }
    }
    out
}

/// Integrates `y' = rhs(t, y)` from `t0` to `t1`.
///
/// `observe(t, y, dy)` sees the initial point and every accepted step; it
/// returns `false` to stop early. Trial steps that produce non-finite values
/// are treated as rejected.
pub fn integrate<const N: usize>(
    mut rhs: impl FnMut(f64, &[f64; N]) -> [f64; N],
    t0: f64,
    t1: f64,
    y0: [f64; N],
    ctl: &StepControl,
    mut observe: impl FnMut(f64, &[f64; N], &[f64; N]) -> bool,
) -> Outcome {
    let mut t = t0;
    let mut y = y0;
    let mut k1 = rhs(t, &y);
    if !observe(t, &y, &k1) {
        return Outcome::Stopped { at: t };
    }
    let mut h = ctl.h_init.min(ctl.h_max).min(t1 - t0);
    let mut steps = 0;
    while t < t1 {
        if steps >= ctl.max_steps {
            return Outcome::StepUnderflow { at: t };
        }
        steps += 1;
        let last = t + h >= t1;
        if last {
            h = t1 - t;
        }
        let k2 = rhs(t + C[1] * h, &combine(&y, h, &A2, &[k1]));
        let k3 = rhs(t + C[2] * h, &combine(&y, h, &A3, &[k1, k2]));
        let k4 = rhs(t + C[3] * h, &combine(&y, h, &A4, &[k1, k2, k3]));
        let k5 = rhs(t + C[4] * h, &combine(&y, h, &A5, &[k1, k2, k3, k4]));
        let k6 = rhs(t + C[5] * h, &combine(&y, h, &A6, &[k1, k2, k3, k4, k5]));
        let y_new = combine(&y, h, &B, &[k1, k2, k3, k4, k5, k6]);
        let k7 = rhs(t + h, &y_new);
        let ks = [k1, k2, k3, k4, k5, k6, k7];
        let mut err = 0.0;
        let mut finite = true;
        for i in 0..N {
            let mut e = 0.0;
            for (c, k) in E.iter().zip(&ks) {
                e += c * k[i];
            }
            e *= h;
            let scale = ctl.atol + ctl.rtol * y[i].abs().max(y_new[i].abs());
            err += (e / scale).powi(2);
            finite &= y_new[i].is_finite() && k7[i].is_finite();
        }
        let err = (err / N as f64).sqrt();
        if !finite || !err.is_finite() {
            h *= 0.2;
            if h < ctl.h_min {
                return Outcome::StepUnderflow { at: t };
            }
            continue;
        }
        if err <= 1.0 {
            t = if last { t1 } else { t + h };
            y = y_new;
            k1 = k7;
            if !observe(t, &y, &k1) {
                return Outcome::Stopped { at: t };
            }
            let factor = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
            h = (h * factor).min(ctl.h_max);
        } else {
            h *= (0.9 * err.powf(-0.2)).clamp(0.2, 1.0);
            if h < ctl.h_min {
                return Outcome::StepUnderflow { at: t };
            }
        }
    }
    Outcome::Completed
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn harmonic_oscillator_period() {
        let ctl = StepControl {
            rtol: 1e-12,
            atol: 1e-12,
            h_max: 0.1,
            ..Default::default()
        };
        let mut last = [0.0; 2];
        let out = integrate(
            |_, y| [y[1], -y[0]],
            0.0,
            2.0 * std::f64::consts::PI,
            [1.0, 0.0],
            &ctl,
            |_, y, _| {
                last = *y;
                true
            },
        );
        assert_eq!(out, Outcome::Completed);
        assert!((last[0] - 1.0).abs() < 1e-10);
        assert!(last[1].abs() < 1e-10);
    }

    #[test]
    fn fifth_order_convergence() {
        // error shrinks ~32x when the tolerance-driven step halves; check it
        // at least improves by an order of magnitude per two decades of tol
        let run = |tol: f64| {
            let ctl = StepControl {
                rtol: tol,
                atol: tol,
                h_max: 1.0,
                ..Default::default()
            };
            let mut end = 0.0;
            integrate(|t, y: &[f64; 1]| [y[0] * t.cos()], 0.0, 3.0, [1.0], &ctl, |_, y, _| {
                end = y[0];
                true
            });
            (end - 3f64.sin().exp()).abs()
        };
        assert!(run(1e-10) < 1e-8);
        assert!(run(1e-10) < run(1e-6));
    }

    #[test]
    fn blow_up_reports_underflow_or_stop() {
        let out = integrate(
            |_, y: &[f64; 1]| [y[0] * y[0]],
            0.0,
            2.0,
            [1.0],
            &StepControl::default(),
            |_, y, _| y[0] < 1e8,
        );
        match out {
            Outcome::Stopped { at } | Outcome::StepUnderflow { at } => assert!((at - 1.0).abs() < 1e-3),
            Outcome::Completed => panic!("should not complete"),
        }
    }
}
