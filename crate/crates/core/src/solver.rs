//! Initial value problem solvers over the unit interval `s in [0, 1]`.
//!
//! All solvers count field evaluations; that count is the cost metric
//! reported for sampling. Rejected adaptive steps count too.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, ArrayView1, Zip};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Controller settings for the adaptive embedded Euler/Heun pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeunConfig {
    pub atol: f64,
    pub rtol: f64,
    pub initial_step: f64,
    pub min_step: f64,
    pub max_step: f64,
    pub safety: f64,
    pub shrink_min: f64,
    pub grow_max: f64,
}

impl Default for HeunConfig {
    fn default() -> Self {
        HeunConfig {
            atol: 1e-2,
            rtol: 1e-2,
            initial_step: 0.1,
            min_step: 1e-4,
            max_step: 1.0,
            safety: 0.9,
            shrink_min: 0.2,
            grow_max: 5.0,
        }
    }
}

impl HeunConfig {
    pub fn with_tolerance(tol: f64) -> Self {
        HeunConfig {
            atol: tol,
            rtol: tol,
            ..HeunConfig::default()
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.atol > 0.0 && self.rtol > 0.0) {
            return Err(Error::config("solver tolerances must be positive"));
        }
        if !(self.min_step > 0.0
            && self.min_step <= self.initial_step
            && self.initial_step <= self.max_step)
        {
            return Err(Error::config(
                "solver steps must satisfy 0 < min_step <= initial_step <= max_step",
            ));
        }
        if !(self.safety > 0.0
            && self.shrink_min > 0.0
            && self.shrink_min <= 1.0
            && self.grow_max >= 1.0)
        {
            return Err(Error::config("invalid step controller constants"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Method {
    EulerFixed { step_size: f64 },
    HeunFixed { step_size: f64 },
    HeunAdaptive(HeunConfig),
}

impl Method {
    pub fn euler(step_size: f64) -> Self {
        Method::EulerFixed { step_size }
    }

    pub fn heun_adaptive(tol: f64) -> Self {
        Method::HeunAdaptive(HeunConfig::with_tolerance(tol))
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Method::EulerFixed { step_size } => write!(f, "euler({step_size})"),
            Method::HeunFixed { step_size } => write!(f, "heun({step_size})"),
            Method::HeunAdaptive(c) => write!(f, "heun_adaptive(atol={},rtol={})", c.atol, c.rtol),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    /// `s` from 0 to 1.
    Forward,
    /// `s` from 1 to 0.
    Backward,
}

impl Direction {
    fn endpoints(self) -> (f64, f64) {
        match self {
            Direction::Forward => (0.0, 1.0),
            Direction::Backward => (1.0, 0.0),
        }
    }

    fn sign(self) -> f64 {
        match self {
            Direction::Forward => 1.0,
            Direction::Backward => -1.0,
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Direction::Forward => "forward",
            Direction::Backward => "backward",
        })
    }
}

impl FromStr for Direction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "forward" => Ok(Direction::Forward),
            "backward" => Ok(Direction::Backward),
            other => Err(Error::config(format!("unknown direction `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveSpec {
    pub method: Method,
    pub direction: Direction,
}

impl SolveSpec {
    pub fn new(method: Method, direction: Direction) -> Self {
        SolveSpec { method, direction }
    }

    pub fn forward(method: Method) -> Self {
        SolveSpec::new(method, Direction::Forward)
    }

    pub fn reversed(self) -> Self {
        let direction = match self.direction {
            Direction::Forward => Direction::Backward,
            Direction::Backward => Direction::Forward,
        };
        SolveSpec { direction, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        match self.method {
            Method::EulerFixed { step_size } | Method::HeunFixed { step_size } => {
                if !(step_size > 0.0 && step_size <= 1.0) {
                    return Err(Error::config(format!(
                        "fixed step size must lie in (0, 1], got {step_size}"
                    )));
                }
                Ok(())
            }
            Method::HeunAdaptive(c) => c.validate(),
        }
    }
}

/// Result of one solve.
#[derive(Debug, Clone, PartialEq)]
pub struct Solution<T> {
    pub x: Array1<T>,
    /// Field evaluations performed.
    pub evals: usize,
    pub accepted: usize,
    pub rejected: usize,
}

/// Outcome of one attempted adaptive step.
#[derive(Debug, Clone, PartialEq)]
pub struct HeunStep<T> {
    pub accepted: bool,
    /// Heun solution when accepted, the unchanged state otherwise.
    pub x_next: Array1<T>,
    pub s_next: f64,
    pub h_next: f64,
    pub err_norm: f64,
}

/// Number of fixed steps covering the unit interval with step `h`.
pub fn fixed_step_count(h: f64) -> usize {
    ((1.0 / h) - 1e-9).ceil().max(1.0) as usize
}

fn axpy<T: Scalar>(x: ArrayView1<'_, T>, h: T, k: &Array1<T>) -> Array1<T> {
    let mut out = x.to_owned();
    Zip::from(&mut out).and(k).for_each(|o, &d| *o += h * d);
    out
}

fn check_len<T>(expected: usize, v: &Array1<T>) -> Result<()> {
    if v.len() != expected {
        return Err(Error::config(format!(
            "field returned {} values for a state of {expected}",
            v.len()
        )));
    }
    Ok(())
}

/// One attempt of the embedded Euler/Heun pair with signed step `h`.
///
/// The error estimate is `max_i |x_heun - x_euler|_i / (atol + rtol |x_i|)`;
/// the step is accepted iff it is at most one. The next step is
/// `h * clamp(safety * err^(-1/2), shrink_min, grow_max)`. Costs two field
/// evaluations whether or not the step is accepted.
pub fn heun_adaptive_step<T, F>(
    field: &mut F,
    x: ArrayView1<'_, T>,
    s: f64,
    h: f64,
    cfg: &HeunConfig,
) -> Result<HeunStep<T>>
where
    T: Scalar,
    F: FnMut(ArrayView1<'_, T>, T) -> Result<Array1<T>>,
{
    let k1 = field(x, T::of(s))?;
    check_len(x.len(), &k1)?;
    let x_euler = axpy(x, T::of(h), &k1);
    let k2 = field(x_euler.view(), T::of(s + h))?;
    check_len(x.len(), &k2)?;
    let half = T::of(0.5 * h);
    let mut x_heun = x.to_owned();
    Zip::from(&mut x_heun)
        .and(&k1)
        .and(&k2)
        .for_each(|o, &a, &b| *o += half * (a + b));

    let mut err_norm = 0.0f64;
    for ((&xh, &xe), &x0) in x_heun.iter().zip(&x_euler).zip(x) {
        let e = (xh - xe).to_f64_lossy().abs();
        let scale = cfg.atol + cfg.rtol * x0.to_f64_lossy().abs();
        let r = e / scale;
        // a NaN error must win so the step is rejected
        if r.is_nan() || r > err_norm {
            err_norm = r;
        }
    }
    let factor = if err_norm == 0.0 {
        cfg.grow_max
    } else if err_norm.is_finite() {
        (cfg.safety * err_norm.powf(-0.5)).clamp(cfg.shrink_min, cfg.grow_max)
    } else {
        cfg.shrink_min
    };
    let accepted = err_norm <= 1.0;
    Ok(HeunStep {
        accepted,
        x_next: if accepted { x_heun } else { x.to_owned() },
        s_next: if accepted { s + h } else { s },
        h_next: h * factor,
        err_norm,
    })
}

/// Integrates `dx/ds = field(x, s)` across the unit interval in the
/// direction given by `spec`, starting from `x_init`.
pub fn solve<T, F>(mut field: F, x_init: ArrayView1<'_, T>, spec: &SolveSpec) -> Result<Solution<T>>
where
    T: Scalar,
    F: FnMut(ArrayView1<'_, T>, T) -> Result<Array1<T>>,
{
    spec.validate()?;
    if x_init.iter().any(|v| !v.is_finite()) {
        return Err(Error::config("initial state is not finite"));
    }
    let (start, end) = spec.direction.endpoints();
    let sign = spec.direction.sign();
    match spec.method {
        Method::EulerFixed { step_size } | Method::HeunFixed { step_size } => {
            let heun = matches!(spec.method, Method::HeunFixed { .. });
            let n = fixed_step_count(step_size);
            let mut x = x_init.to_owned();
            let mut evals = 0;
            for k in 0..n {
                let s0 = start + sign * (k as f64) * step_size;
                let s1 = if k + 1 == n {
                    end
                } else {
                    start + sign * ((k + 1) as f64) * step_size
                };
                let h = T::of(s1 - s0);
                let k1 = field(x.view(), T::of(s0))?;
                evals += 1;
                check_len(x.len(), &k1)?;
                if heun {
                    let xe = axpy(x.view(), h, &k1);
                    let k2 = field(xe.view(), T::of(s1))?;
                    evals += 1;
                    check_len(x.len(), &k2)?;
                    let half = h * T::of(0.5);
                    Zip::from(&mut x)
                        .and(&k1)
                        .and(&k2)
                        .for_each(|o, &a, &b| *o += half * (a + b));
                } else {
                    Zip::from(&mut x).and(&k1).for_each(|o, &d| *o += h * d);
                }
            }
            Ok(Solution {
                x,
                evals,
                accepted: n,
                rejected: 0,
            })
        }
        Method::HeunAdaptive(cfg) => {
            let mut x = x_init.to_owned();
            let mut s = start;
            let mut h_mag = cfg.initial_step.min(cfg.max_step);
            let mut sol = Solution {
                x: Array1::zeros(0),
                evals: 0,
                accepted: 0,
                rejected: 0,
            };
            loop {
                let remaining = (end - s).abs();
                if remaining == 0.0 {
                    break;
                }
                let last = h_mag >= remaining;
                let h = sign * if last { remaining } else { h_mag };
                let step = heun_adaptive_step(&mut field, x.view(), s, h, &cfg)?;
                sol.evals += 2;
                let next_mag = step.h_next.abs().min(cfg.max_step);
                if step.accepted {
                    sol.accepted += 1;
                    x = step.x_next;
                    s = if last { end } else { step.s_next };
                } else {
                    sol.rejected += 1;
                    if next_mag < cfg.min_step {
                        return Err(Error::Divergence {
                            coord: s,
                            message: format!(
                                "step size {next_mag:e} fell below minimum {:e} (error norm {})",
                                cfg.min_step, step.err_norm
                            ),
                        });
                    }
                }
                h_mag = next_mag;
            }
            sol.x = x;
            Ok(sol)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn decay(x: ArrayView1<'_, f64>, _s: f64) -> Result<Array1<f64>> {
        Ok(x.mapv(|v| -v))
    }

    #[test]
    fn zero_field_keeps_state() {
        let x0 = array![0.5, -3.0];
        for method in [
            Method::euler(0.05),
            Method::heun_adaptive(1e-2),
            Method::HeunFixed { step_size: 0.3 },
        ] {
            let sol = solve(
                |x: ArrayView1<'_, f64>, _| Ok(Array1::zeros(x.len())),
                x0.view(),
                &SolveSpec::forward(method),
            )
            .unwrap();
            assert_eq!(sol.x, x0);
        }
    }

    #[test]
    fn constant_field_exact_with_euler() {
        let c = array![0.25, -1.5];
        for h in [1.0, 0.5, 0.25, 0.125] {
            let sol = solve(
                |_: ArrayView1<'_, f64>, _| Ok(c.clone()),
                array![1.0, 1.0].view(),
                &SolveSpec::forward(Method::euler(h)),
            )
            .unwrap();
            assert_eq!(sol.x, array![1.25, -0.5]);
        }
    }

    #[test]
    fn euler_005_takes_twenty_steps() {
        assert_eq!(fixed_step_count(0.05), 20);
        let mut calls = 0;
        let sol = solve(
            |x: ArrayView1<'_, f64>, _| {
                calls += 1;
                Ok(x.to_owned())
            },
            array![1.0].view(),
            &SolveSpec::forward(Method::euler(0.05)),
        )
        .unwrap();
        assert_eq!((sol.evals, calls), (20, 20));
    }

    #[test]
    fn fixed_step_counts_match_ceiling() {
        for h in [0.3, 0.1, 0.07, 1.0 / 3.0] {
            let expected = (1.0f64 / h).ceil() as usize;
            let expected = if (1.0 / h - (1.0 / h).round()).abs() < 1e-9 {
                (1.0 / h).round() as usize
            } else {
                expected
            };
            for (method, per) in [
                (Method::euler(h), 1),
                (Method::HeunFixed { step_size: h }, 2),
            ] {
                let mut calls = 0;
                let sol = solve(
                    |x: ArrayView1<'_, f64>, _| {
                        calls += 1;
                        Ok(-&x)
                    },
                    array![1.0].view(),
                    &SolveSpec::forward(method),
                )
                .unwrap();
                assert_eq!(sol.evals, expected * per, "h = {h}");
                assert_eq!(calls, sol.evals);
            }
        }
    }

    #[test]
    fn adaptive_heun_decay_within_tolerance() {
        let sol = solve(
            decay,
            array![1.0].view(),
            &SolveSpec::forward(Method::heun_adaptive(1e-2)),
        )
        .unwrap();
        assert!((sol.x[0] - (-1.0f64).exp()).abs() <= 1e-2, "{}", sol.x[0]);
    }

    #[test]
    fn hand_evaluated_embedded_pair() {
        // x = 1, h = 0.5: euler 0.5, heun 1 + 0.25 (-1 - 0.5) = 0.625,
        // error 0.125 / (0.01 + 0.01) = 6.25 -> rejected, h * 0.9 / 2.5
        let mut f = decay;
        let step = heun_adaptive_step(&mut f, array![1.0].view(), 0.0, 0.5, &HeunConfig::default())
            .unwrap();
        assert!(!step.accepted);
        assert!((step.err_norm - 6.25).abs() < 1e-12);
        assert!((step.h_next - 0.18).abs() < 1e-12);
        assert_eq!(step.s_next, 0.0);
        assert_eq!(step.x_next, array![1.0]);

        // h = 0.1: euler 0.9, heun 1 + 0.05 (-1 - 0.9) = 0.905, error 0.005 / 0.02 = 0.25
        let step = heun_adaptive_step(&mut f, array![1.0].view(), 0.0, 0.1, &HeunConfig::default())
            .unwrap();
        assert!(step.accepted);
        assert!((step.err_norm - 0.25).abs() < 1e-12);
        assert!((step.x_next[0] - 0.905).abs() < 1e-15);
        assert!((step.h_next - 0.1 * 1.8).abs() < 1e-12);
    }

    #[test]
    fn zero_field_grows_by_max_factor() {
        let mut f = |x: ArrayView1<'_, f64>, _| Ok(Array1::zeros(x.len()));
        let step = heun_adaptive_step(&mut f, array![2.0].view(), 0.0, 0.1, &HeunConfig::default())
            .unwrap();
        assert!(step.accepted);
        assert_eq!(step.err_norm, 0.0);
        assert!((step.h_next - 0.5).abs() < 1e-15);
    }

    #[test]
    fn tighter_tolerance_needs_more_steps() {
        let loose = solve(
            decay,
            array![1.0].view(),
            &SolveSpec::forward(Method::heun_adaptive(1e-2)),
        )
        .unwrap();
        let tight = solve(
            decay,
            array![1.0].view(),
            &SolveSpec::forward(Method::heun_adaptive(1e-4)),
        )
        .unwrap();
        assert!(
            tight.accepted > loose.accepted,
            "{} vs {}",
            tight.accepted,
            loose.accepted
        );
    }

    #[test]
    fn forward_then_backward_returns() {
        let spec = SolveSpec::forward(Method::heun_adaptive(1e-2));
        let fwd = solve(decay, array![1.0, -0.4].view(), &spec).unwrap();
        let back = solve(decay, fwd.x.view(), &spec.reversed()).unwrap();
        assert!((back.x[0] - 1.0).abs() <= 10.0 * 1e-2);
        assert!((back.x[1] + 0.4).abs() <= 10.0 * 1e-2);
    }

    #[test]
    fn backward_constant_field_subtracts() {
        let sol = solve(
            |_: ArrayView1<'_, f64>, _| Ok(array![2.0]),
            array![1.0].view(),
            &SolveSpec::new(Method::euler(0.05), Direction::Backward),
        )
        .unwrap();
        assert!((sol.x[0] + 1.0).abs() < 1e-12);
    }

    fn euler_like_error(method: fn(f64) -> Method, h: f64) -> f64 {
        let sol = solve(decay, array![1.0].view(), &SolveSpec::forward(method(h))).unwrap();
        (sol.x[0] - (-1.0f64).exp()).abs()
    }

    #[test]
    fn convergence_orders() {
        let euler = |h| Method::euler(h);
        let heun = |h| Method::HeunFixed { step_size: h };
        let r_euler = euler_like_error(euler, 0.02) / euler_like_error(euler, 0.01);
        let r_heun = euler_like_error(heun, 0.02) / euler_like_error(heun, 0.01);
        assert!((r_euler - 2.0).abs() <= 0.4, "euler ratio {r_euler}");
        assert!((r_heun - 4.0).abs() <= 0.8, "heun ratio {r_heun}");
    }

    #[test]
    fn underflow_is_divergence() {
        let cfg = HeunConfig {
            min_step: 1e-3,
            ..HeunConfig::default()
        };
        let err = solve(
            |x: ArrayView1<'_, f64>, _| Ok(x.mapv(|v| 1e6 * v * v)),
            array![1.0].view(),
            &SolveSpec::forward(Method::HeunAdaptive(cfg)),
        )
        .unwrap_err();
        assert!(matches!(err, Error::Divergence { .. }));
    }

    #[test]
    fn invalid_specs_rejected() {
        let f = |x: ArrayView1<'_, f64>, _| Ok(x.to_owned());
        assert!(solve(
            f,
            array![1.0].view(),
            &SolveSpec::forward(Method::euler(0.0))
        )
        .is_err());
        assert!(solve(
            f,
            array![1.0].view(),
            &SolveSpec::forward(Method::euler(1.5))
        )
        .is_err());
        let bad = HeunConfig {
            atol: 0.0,
            ..HeunConfig::default()
        };
        assert!(solve(
            f,
            array![1.0].view(),
            &SolveSpec::forward(Method::HeunAdaptive(bad))
        )
        .is_err());
        assert!(solve(
            f,
            array![f64::NAN].view(),
            &SolveSpec::forward(Method::euler(0.1))
        )
        .is_err());
    }
}
