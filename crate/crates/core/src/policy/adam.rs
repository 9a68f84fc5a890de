use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::network::ParameterSet;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// First and second moment estimates of Adam.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self { m: vec![0.0; len], v: vec![0.0; len], t: 0 }
    }
}

/// One Adam step *descending* `gradient`.
pub fn optimize_step(
    params: &mut ParameterSet,
    gradient: &ParameterSet,
    state: &mut AdamState,
    learning_rate: f64,
) -> Result<()> {
    let n = params.len();
    if gradient.len() != n || state.m.len() != n || state.v.len() != n {
        return Err(Error::Shape(format!(
            "optimizer step over {n} parameters with gradient {} and state {}",
            gradient.len(),
            state.m.len()
        )));
    }
    state.t += 1;
    let bc1 = 1.0 - BETA1.powi(state.t as i32);
    let bc2 = 1.0 - BETA2.powi(state.t as i32);
    let theta = params.as_mut_slice();
    for i in 0..n {
        let g = gradient.as_slice()[i];
        state.m[i] = BETA1 * state.m[i] + (1.0 - BETA1) * g;
        state.v[i] = BETA2 * state.v[i] + (1.0 - BETA2) * g * g;
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        theta[i] -= learning_rate * m_hat / (v_hat.sqrt() + EPSILON);
    }
    Ok(())
}
