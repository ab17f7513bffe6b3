//! Adam optimizer over flat parameter vectors.

use crate::error::{Error, Result};
use crate::net::ParamVector;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates plus the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub step: u64,
    pub m: Vec<T>,
    pub v: Vec<T>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(len: usize) -> Self {
        AdamState {
            step: 0,
            m: vec![T::zero(); len],
            v: vec![T::zero(); len],
        }
    }
}

/// Applies one bias-corrected Adam update in place.
///
/// `batch` only labels the error when a gradient is not finite; in that case
/// neither the parameters nor the state are touched.
pub fn adam_step<T: Scalar>(
    params: &mut ParamVector<T>,
    grads: &ParamVector<T>,
    state: &mut AdamState<T>,
    cfg: &AdamConfig,
    batch: u64,
) -> Result<()> {
    if params.len() != grads.len() || state.m.len() != params.len() || state.v.len() != params.len()
    {
        return Err(Error::config(format!(
            "optimizer shapes disagree: params {}, grads {}, state {}",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    if let Some(i) = grads.values().iter().position(|g| !g.is_finite()) {
        return Err(Error::Training {
            batch,
            message: format!("non-finite gradient at parameter {i}"),
        });
    }
    state.step += 1;
    let b1 = T::of(cfg.beta1);
    let b2 = T::of(cfg.beta2);
    let one = T::one();
    let step = state.step as i32;
    let c1 = one - b1.powi(step);
    let c2 = one - b2.powi(step);
    let lr = T::of(cfg.learning_rate);
    let eps = T::of(cfg.eps);
    for (((p, &g), m), v) in params
        .values_mut()
        .iter_mut()
        .zip(grads.values())
        .zip(state.m.iter_mut())
        .zip(state.v.iter_mut())
    {
        *m = b1 * *m + (one - b1) * g;
        *v = b2 * *v + (one - b2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p -= lr * m_hat / (v_hat.sqrt() + eps);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::{BlockKind, ParamBlock};

    fn vector(values: Vec<f64>) -> ParamVector<f64> {
        let n = values.len();
        ParamVector::new(
            values,
            vec![ParamBlock {
                layer: 0,
                kind: BlockKind::Bias,
                rows: n,
                cols: 1,
            }],
        )
        .unwrap()
    }

    #[test]
    fn zero_gradient_leaves_params_and_decays_moments() {
        let mut p = vector(vec![1.0, -2.0]);
        let g = vector(vec![0.0, 0.0]);
        let mut st = AdamState {
            step: 3,
            m: vec![0.5, 0.5],
            v: vec![0.25, 0.25],
        };
        adam_step(&mut p, &g, &mut st, &AdamConfig::default(), 0).unwrap();
        assert_eq!(st.m, vec![0.45, 0.45]);
        assert_eq!(st.v, vec![0.25 * 0.999, 0.25 * 0.999]);
        // moments are non-zero so params move; with fresh moments they must not
        let mut p = vector(vec![1.0, -2.0]);
        let mut fresh = AdamState::new(2);
        adam_step(&mut p, &g, &mut fresh, &AdamConfig::default(), 0).unwrap();
        assert_eq!(p.values(), &[1.0, -2.0]);
    }

    #[test]
    fn first_step_matches_hand_recurrence() {
        let cfg = AdamConfig {
            learning_rate: 0.1,
            ..AdamConfig::default()
        };
        let mut p = vector(vec![0.0]);
        let mut st = AdamState::new(1);
        adam_step(&mut p, &vector(vec![1.0]), &mut st, &cfg, 0).unwrap();
        // m = 0.1, v = 0.001, m_hat = 1, v_hat = 1
        let expected = -0.1 * 1.0 / (1.0 + 1e-8);
        assert!((p.values()[0] - expected).abs() < 1e-12);
        assert!((p.values()[0].abs() - 0.1).abs() < 1e-8);
    }

    #[test]
    fn identical_params_stay_identical() {
        let mut p = vector(vec![0.3, 0.3]);
        let mut st = AdamState::new(2);
        for k in 0..10 {
            let g = vector(vec![0.1 * k as f64 - 0.4; 2]);
            adam_step(&mut p, &g, &mut st, &AdamConfig::default(), k).unwrap();
            assert_eq!(p.values()[0], p.values()[1]);
        }
    }

    #[test]
    fn non_finite_gradient_reports_batch() {
        let mut p = vector(vec![0.0]);
        let mut st = AdamState::new(1);
        let bad = ParamVector::new(vec![0.0], p.layout().to_vec()).map(|mut g| {
            g.values_mut()[0] = f64::INFINITY;
            g
        });
        let err =
            adam_step(&mut p, &bad.unwrap(), &mut st, &AdamConfig::default(), 17).unwrap_err();
        assert!(matches!(err, Error::Training { batch: 17, .. }));
        assert_eq!(st.step, 0);
    }
}
