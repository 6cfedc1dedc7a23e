//! Central finite-difference gradient verification.

use crate::engine::net::{DenseNet, NetGrads};
use crate::error::{Result, SanError};

/// Relative error with denominator `max(|a|, |b|, 1e-12)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-12)
}

/// Central differences at `eps = 1e-5` on f64 losses carry roundoff of about
/// `|loss| * 1e-16 / (2 eps) ~ 5e-12`. Differences below this floor are
/// indistinguishable from that noise (the worst case is a structurally zero
/// analytic gradient, e.g. a shared bias that cancels out of a distance),
/// so they count as zero error rather than being divided by a tiny
/// denominator.
pub const FD_NOISE_FLOOR: f64 = 1e-9;

/// Compare the analytic parameter gradients of `loss_and_grads` against
/// central finite differences at `net`, returning the max relative error.
///
/// `loss_and_grads` must be a deterministic function of the net parameters;
/// the finite-difference side only uses its scalar value.
pub fn finite_diff_check<F>(net: &DenseNet, eps: f64, loss_and_grads: F) -> Result<f64>
where
    F: Fn(&DenseNet) -> Result<(f64, NetGrads)>,
{
    if !(1e-7..=1e-3).contains(&eps) {
        return Err(SanError::InvalidConfig(format!(
            "finite-difference eps {eps} outside [1e-7, 1e-3]"
        )));
    }
    let (_, analytic) = loss_and_grads(net)?;
    let analytic = analytic.to_vec();
    if analytic.len() != net.param_len() {
        return Err(SanError::shape(
            "finite_diff_check",
            format!("{} gradient entries", net.param_len()),
            format!("{}", analytic.len()),
        ));
    }

    let base = net.params_to_vec();
    let mut probe = net.clone();
    let mut params = base.clone();
    let mut max_rel = 0.0_f64;
    for i in 0..params.len() {
        let orig = params[i];
        params[i] = orig + eps;
        probe.load_params_from_slice(&params)?;
        let plus = loss_and_grads(&probe)?.0;
        params[i] = orig - eps;
        probe.load_params_from_slice(&params)?;
        let minus = loss_and_grads(&probe)?.0;
        params[i] = orig;
        let fd = (plus - minus) / (2.0 * eps);
        if (fd - analytic[i]).abs() > FD_NOISE_FLOOR {
            max_rel = max_rel.max(relative_error(fd, analytic[i]));
        }
    }
    Ok(max_rel)
}
