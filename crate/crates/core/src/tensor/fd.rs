//! Central finite-difference checks against the tape's analytic gradients.
//!
//! Perturbed evaluations replay the recorded graph, so detached decisions
//! (which triangle covers a pixel, which element wins a max-pool) stay as
//! recorded and the comparison is against the same piecewise-smooth
//! function the tape differentiates.

use crate::error::Result;

use super::{Tape, Var};

/// Step used by every finite-difference check in the crate.
pub const FD_STEP: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FdReport {
    pub max_rel_err: f64,
    pub checked: usize,
}

impl FdReport {
    pub fn merge(self, other: FdReport) -> FdReport {
        FdReport {
            max_rel_err: self.max_rel_err.max(other.max_rel_err),
            checked: self.checked + other.checked,
        }
    }
}

/// Relative error with an absolute floor of `1e-5 * max(1, |f|)`; below
/// that scale central differences are dominated by cancellation noise.
pub fn relative_error(analytic: f64, numeric: f64, f_scale: f64) -> f64 {
    let floor = 1e-5 * f_scale.abs().max(1.0);
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Checks d(root)/d(param) for each listed parameter leaf. At most
/// `max_per_param` evenly spaced elements of each parameter are probed.
pub fn check(tape: &Tape, root: Var<'_>, params: &[Var<'_>], max_per_param: usize) -> Result<FdReport> {
    tape.zero_grad();
    tape.backward(root);
    let f0 = root.item();
    let mut report = FdReport {
        max_rel_err: 0.0,
        checked: 0,
    };
    for &p in params {
        let analytic = tape.grad_or_zeros(p);
        let base = p.data();
        let n = base.len();
        let stride = n.div_ceil(max_per_param.max(1)).max(1);
        let mut buf = base.as_ref().clone();
        for i in (0..n).step_by(stride) {
            buf[i] = base[i] + FD_STEP;
            let fp = tape.replay(root, &[(p, &buf)])?.data()[0];
            buf[i] = base[i] - FD_STEP;
            let fm = tape.replay(root, &[(p, &buf)])?.data()[0];
            buf[i] = base[i];
            let numeric = (fp - fm) / (2.0 * FD_STEP);
            let err = relative_error(analytic.data()[i], numeric, f0);
            if err > report.max_rel_err {
                log::debug!(
                    "fd element {i}: analytic {} numeric {numeric} rel {err:e}",
                    analytic.data()[i]
                );
            }
            report.max_rel_err = report.max_rel_err.max(err);
            report.checked += 1;
        }
    }
    tape.zero_grad();
    Ok(report)
}
