//! Bias-corrected Adam.

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct AdamMoments {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl AdamMoments {
    pub fn zeros(n: usize) -> Self {
        AdamMoments {
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }
}

/// One update at step `t >= 1`.
pub fn adam_step(params: &mut [f64], grads: &[f64], moments: &mut AdamMoments, lr: f64, t: u32) {
    assert!(t >= 1, "contract violation: adam step counter starts at 1");
    assert!(
        params.len() == grads.len() && grads.len() == moments.m.len(),
        "contract violation: adam sizes differ"
    );
    let c1 = 1.0 - BETA1.powi(t as i32);
    let c2 = 1.0 - BETA2.powi(t as i32);
    for i in 0..params.len() {
        let g = grads[i];
        moments.m[i] = BETA1 * moments.m[i] + (1.0 - BETA1) * g;
        moments.v[i] = BETA2 * moments.v[i] + (1.0 - BETA2) * g * g;
        let m_hat = moments.m[i] / c1;
        let v_hat = moments.v[i] / c2;
        params[i] -= lr * m_hat / (v_hat.sqrt() + EPSILON);
    }
}
