//! Loss functions for the three stages: reconstruction, adversarial (both
//! sides), regressor, multi-kernel MMD, contrastive, and the weighted stage
//! composites.
//!
//! Every loss returns its scalar value together with the analytic gradient
//! with respect to the inputs that training differentiates through. Values
//! are per-batch means so magnitudes do not depend on batch size.

use crate::engine::Matrix;
use crate::error::{Result, SanError};

/// Probabilities are clamped to this range before logs.
pub const PROB_CLAMP: f64 = 1e-7;

/// Weighted bank of RBF kernels: `k(u, v) = sum_n eta_n * exp(-|u - v|^2 / (2 sigma_n))`.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelBank {
    sigmas: Vec<f64>,
    etas: Vec<f64>,
}

impl KernelBank {
    pub fn new(sigmas: Vec<f64>, etas: Vec<f64>) -> Result<Self> {
        if sigmas.is_empty() || sigmas.len() != etas.len() {
            return Err(SanError::InvalidConfig(format!(
                "kernel bank needs equal, nonzero counts of sigmas and etas (got {} and {})",
                sigmas.len(),
                etas.len()
            )));
        }
        if sigmas.iter().chain(&etas).any(|&v| v <= 0.0 || !v.is_finite()) {
            return Err(SanError::InvalidConfig(
                "kernel bandwidths and weights must be positive and finite".into(),
            ));
        }
        Ok(KernelBank { sigmas, etas })
    }

    pub fn sigmas(&self) -> &[f64] {
        &self.sigmas
    }

    pub fn etas(&self) -> &[f64] {
        &self.etas
    }

    pub fn eta_sum(&self) -> f64 {
        self.etas.iter().sum()
    }

    /// Kernel value for a squared distance.
    pub fn eval(&self, sq_dist: f64) -> f64 {
        self.sigmas
            .iter()
            .zip(&self.etas)
            .map(|(&s, &e)| e * (-sq_dist / (2.0 * s)).exp())
            .sum()
    }

    /// Kernel value and its derivative with respect to the squared distance.
    fn eval_with_derivative(&self, sq_dist: f64) -> (f64, f64) {
        let mut k = 0.0;
        let mut dk = 0.0;
        for (&s, &e) in self.sigmas.iter().zip(&self.etas) {
            let v = e * (-sq_dist / (2.0 * s)).exp();
            k += v;
            dk += -v / (2.0 * s);
        }
        (k, dk)
    }
}

impl Default for KernelBank {
    fn default() -> Self {
        KernelBank::new(vec![2.0, 5.0, 10.0, 20.0, 40.0, 80.0], vec![1.0; 6]).expect("default bank")
    }
}

/// Composite-loss weights: `L = L_rec + alpha L_adv + beta L_reg (+ gamma L_mmd)`,
/// plus the stage-3 margin.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub margin: f64,
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if self.alpha < 0.0 || self.beta < 0.0 || self.gamma < 0.0 {
            return Err(SanError::InvalidConfig(format!(
                "loss weights must be non-negative: alpha={}, beta={}, gamma={}",
                self.alpha, self.beta, self.gamma
            )));
        }
        if self.margin <= 0.0 || !self.margin.is_finite() {
            return Err(SanError::InvalidConfig(format!(
                "margin must be positive, got {}",
                self.margin
            )));
        }
        Ok(())
    }
}

/// Per-pair same-class labels. `y_t = 1` for a same-class pair, and
/// `y_f = 1 - y_t` by construction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairLabels {
    same_class: Vec<bool>,
}

impl PairLabels {
    pub fn new(same_class: Vec<bool>) -> Self {
        PairLabels { same_class }
    }

    pub fn len(&self) -> usize {
        self.same_class.len()
    }

    pub fn is_empty(&self) -> bool {
        self.same_class.is_empty()
    }

    pub fn y_t(&self, i: usize) -> f64 {
        if self.same_class[i] {
            1.0
        } else {
            0.0
        }
    }

    pub fn y_f(&self, i: usize) -> f64 {
        1.0 - self.y_t(i)
    }

    pub fn positives(&self) -> usize {
        self.same_class.iter().filter(|&&s| s).count()
    }
}

fn ensure_same_shape(context: &str, a: &Matrix, b: &Matrix) -> Result<()> {
    if a.rows() != b.rows() || a.cols() != b.cols() {
        return Err(SanError::shape(
            context,
            format!("{}x{}", a.rows(), a.cols()),
            format!("{}x{}", b.rows(), b.cols()),
        ));
    }
    Ok(())
}

fn ensure_finite_scalar(context: &str, v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(SanError::Numeric(format!("non-finite {context} loss {v}")))
    }
}

/// Mean squared error between a target batch and a generated batch.
/// Returns the loss and its gradient with respect to `xhat`.
pub fn loss_rec(x: &Matrix, xhat: &Matrix) -> Result<(f64, Matrix)> {
    ensure_same_shape("loss_rec", x, xhat)?;
    let n = (x.rows() * x.cols()) as f64;
    let diff = xhat.sub(x);
    let loss = diff.data().iter().map(|v| v * v).sum::<f64>() / n;
    let grad = diff.scale(2.0 / n);
    Ok((ensure_finite_scalar("reconstruction", loss)?, grad))
}

/// Regressor loss: MSE between the conditioning features and their
/// reconstruction. Same form as `loss_rec`.
pub fn loss_reg(c: &Matrix, chat: &Matrix) -> Result<(f64, Matrix)> {
    let (loss, grad) = loss_rec(c, chat)?;
    Ok((ensure_finite_scalar("regressor", loss)?, grad))
}

fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
}

fn is_clamped(p: f64) -> bool {
    p <= PROB_CLAMP || p >= 1.0 - PROB_CLAMP
}

/// Discriminator-side adversarial loss: `-mean[log d_real] - mean[log(1 - d_fake)]`.
/// Gradients are with respect to the probabilities; entries in the clamped
/// region get zero gradient.
pub fn loss_adv_discriminator(d_real: &Matrix, d_fake: &Matrix) -> Result<(f64, Matrix, Matrix)> {
    if d_real.rows() == 0 || d_fake.rows() == 0 {
        return Err(SanError::Data("adversarial loss on empty batch".into()));
    }
    let n = (d_real.rows() * d_real.cols()) as f64;
    let m = (d_fake.rows() * d_fake.cols()) as f64;
    let mut loss = 0.0;
    for &p in d_real.data() {
        loss -= clamp_prob(p).ln() / n;
    }
    for &p in d_fake.data() {
        loss -= (1.0 - clamp_prob(p)).ln() / m;
    }
    let grad_real = Matrix::from_fn(d_real.rows(), d_real.cols(), |r, c| {
        let p = d_real.get(r, c);
        if is_clamped(p) {
            0.0
        } else {
            -1.0 / (n * p)
        }
    });
    let grad_fake = Matrix::from_fn(d_fake.rows(), d_fake.cols(), |r, c| {
        let p = d_fake.get(r, c);
        if is_clamped(p) {
            0.0
        } else {
            1.0 / (m * (1.0 - p))
        }
    });
    Ok((ensure_finite_scalar("adversarial", loss)?, grad_real, grad_fake))
}

/// Non-saturating generator-side adversarial loss: `-mean[log d_fake]`.
pub fn loss_adv_generator(d_fake: &Matrix) -> Result<(f64, Matrix)> {
    if d_fake.rows() == 0 {
        return Err(SanError::Data("generator adversarial loss on empty batch".into()));
    }
    let m = (d_fake.rows() * d_fake.cols()) as f64;
    let loss = -d_fake.data().iter().map(|&p| clamp_prob(p).ln()).sum::<f64>() / m;
    let grad = Matrix::from_fn(d_fake.rows(), d_fake.cols(), |r, c| {
        let p = d_fake.get(r, c);
        if is_clamped(p) {
            0.0
        } else {
            -1.0 / (m * p)
        }
    });
    Ok((ensure_finite_scalar("generator adversarial", loss)?, grad))
}

/// Full kernel matrix `K[i, j] = k(a_i, b_j)` for the bank.
pub fn rbf_kernel(a: &Matrix, b: &Matrix, bank: &KernelBank) -> Result<Matrix> {
    if a.cols() != b.cols() {
        return Err(SanError::shape(
            "rbf_kernel",
            format!("{} columns", a.cols()),
            format!("{} columns", b.cols()),
        ));
    }
    Ok(Matrix::from_fn(a.rows(), b.rows(), |i, j| {
        bank.eval(a.row_sq_dist(i, b, j))
    }))
}

/// How the three double sums of the MMD estimator are scaled.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MmdNormalization {
    /// Each double sum divided by its pair count (batch-size independent).
    Mean,
    /// Raw sums, exactly as the estimator is usually written.
    RawSum,
}

/// Biased MMD estimator between `x` and `xhat` under the kernel bank,
/// with the gradient taken with respect to `xhat`.
pub fn loss_mmd(x: &Matrix, xhat: &Matrix, bank: &KernelBank) -> Result<(f64, Matrix)> {
    loss_mmd_with(x, xhat, bank, MmdNormalization::Mean)
}

pub fn loss_mmd_with(
    x: &Matrix,
    xhat: &Matrix,
    bank: &KernelBank,
    norm: MmdNormalization,
) -> Result<(f64, Matrix)> {
    if x.rows() == 0 || xhat.rows() == 0 {
        return Err(SanError::Data("MMD needs nonempty sample sets".into()));
    }
    if x.cols() != xhat.cols() {
        return Err(SanError::shape(
            "loss_mmd",
            format!("{} columns", x.cols()),
            format!("{} columns", xhat.cols()),
        ));
    }
    let n = x.rows();
    let m = xhat.rows();
    let (c_xx, c_xh, c_hh) = match norm {
        MmdNormalization::Mean => (1.0 / (n * n) as f64, 1.0 / (n * m) as f64, 1.0 / (m * m) as f64),
        MmdNormalization::RawSum => (1.0, 1.0, 1.0),
    };

    let mut s_xx = 0.0;
    for i in 0..n {
        for j in 0..n {
            s_xx += bank.eval(x.row_sq_dist(i, x, j));
        }
    }
    let mut s_xh = 0.0;
    for i in 0..n {
        for j in 0..m {
            s_xh += bank.eval(x.row_sq_dist(i, xhat, j));
        }
    }
    let mut s_hh = 0.0;
    for i in 0..m {
        for j in 0..m {
            s_hh += bank.eval(xhat.row_sq_dist(i, xhat, j));
        }
    }
    let loss = s_xx * c_xx - 2.0 * (s_xh * c_xh) + s_hh * c_hh;

    // grad wrt xhat_k:
    //   from the xhat-xhat sum: 4 c_hh * sum_j k'(|xh_k - xh_j|^2) (xh_k - xh_j)
    //   from the cross sum:    -4 c_xh * sum_j k'(|x_j - xh_k|^2) (xh_k - x_j)
    let mut grad = Matrix::zeros(m, xhat.cols());
    for k in 0..m {
        for j in 0..m {
            let (_, dk) = bank.eval_with_derivative(xhat.row_sq_dist(k, xhat, j));
            let coeff = 4.0 * c_hh * dk;
            let (xk, xj) = (xhat.row(k), xhat.row(j));
            let row = grad.row_mut(k);
            for d in 0..row.len() {
                row[d] += coeff * (xk[d] - xj[d]);
            }
        }
        for j in 0..n {
            let (_, dk) = bank.eval_with_derivative(x.row_sq_dist(j, xhat, k));
            let coeff = -4.0 * c_xh * dk;
            let (xk, xj) = (xhat.row(k), x.row(j));
            let row = grad.row_mut(k);
            for d in 0..row.len() {
                row[d] += coeff * (xk[d] - xj[d]);
            }
        }
    }
    Ok((ensure_finite_scalar("mmd", loss)?, grad))
}

/// Contrastive loss over row-aligned pairs:
/// `mean_i [ y_t d_i + y_f max(m - d_i, 0)^2 ]` with `d_i` the Euclidean
/// distance between `o_g` row i and `o_r` row i. The positive term is linear
/// in `d` exactly as written. Returns gradients for both sides.
pub fn loss_contrastive(
    o_g: &Matrix,
    o_r: &Matrix,
    labels: &PairLabels,
    margin: f64,
) -> Result<(f64, Matrix, Matrix)> {
    ensure_same_shape("loss_contrastive", o_g, o_r)?;
    if labels.len() != o_g.rows() {
        return Err(SanError::shape(
            "loss_contrastive labels",
            format!("{} pairs", o_g.rows()),
            format!("{}", labels.len()),
        ));
    }
    if margin <= 0.0 || !margin.is_finite() {
        return Err(SanError::InvalidConfig(format!("margin must be positive, got {margin}")));
    }
    let n = o_g.rows() as f64;
    let mut loss = 0.0;
    let mut grad_g = Matrix::zeros(o_g.rows(), o_g.cols());
    let mut grad_r = Matrix::zeros(o_r.rows(), o_r.cols());
    for i in 0..o_g.rows() {
        let d = o_g.row_sq_dist(i, o_r, i).sqrt();
        let hinge = (margin - d).max(0.0);
        loss += (labels.y_t(i) * d + labels.y_f(i) * hinge * hinge) / n;
        if d > 0.0 {
            // d(d)/d(o_g) = (o_g - o_r) / d; the hinge term contributes -2 h of it.
            let coeff = (labels.y_t(i) - 2.0 * labels.y_f(i) * hinge) / (n * d);
            for c in 0..o_g.cols() {
                let diff = o_g.get(i, c) - o_r.get(i, c);
                grad_g.set(i, c, coeff * diff);
                grad_r.set(i, c, -coeff * diff);
            }
        }
    }
    Ok((ensure_finite_scalar("contrastive", loss)?, grad_g, grad_r))
}

/// Scalar loss components of one stage composite.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StageLossParts {
    pub rec: f64,
    pub adv_g: f64,
    pub reg: f64,
    pub mmd: Option<f64>,
}

/// `L = rec + alpha adv_g + beta reg (+ gamma mmd)`; gamma applies only when
/// an MMD part is present (stage-2).
pub fn combine_stage_loss(parts: &StageLossParts, weights: &LossWeights) -> Result<f64> {
    weights.validate()?;
    let mut total = parts.rec + weights.alpha * parts.adv_g + weights.beta * parts.reg;
    if let Some(mmd) = parts.mmd {
        total += weights.gamma * mmd;
    }
    ensure_finite_scalar("stage composite", total)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: usize, cols: usize, data: &[f64]) -> Matrix {
        Matrix::from_vec(rows, cols, data.to_vec()).unwrap()
    }

    /// Central finite differences of a scalar function over one matrix input.
    fn fd_grad(f: impl Fn(&Matrix) -> f64, at: &Matrix, eps: f64) -> Matrix {
        Matrix::from_fn(at.rows(), at.cols(), |r, c| {
            let mut plus = at.clone();
            plus.set(r, c, at.get(r, c) + eps);
            let mut minus = at.clone();
            minus.set(r, c, at.get(r, c) - eps);
            (f(&plus) - f(&minus)) / (2.0 * eps)
        })
    }

    fn max_rel(a: &Matrix, b: &Matrix) -> f64 {
        a.data()
            .iter()
            .zip(b.data())
            .map(|(&x, &y)| crate::engine::relative_error(x, y))
            .fold(0.0, f64::max)
    }

    #[test]
    fn rec_zero_on_identical_inputs() {
        let x = m(2, 3, &[1.0, -2.0, 0.5, 3.0, 0.0, -1.0]);
        let (loss, grad) = loss_rec(&x, &x).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grad.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rec_direct_value() {
        let x = m(1, 2, &[0.0, 0.0]);
        let xhat = m(1, 2, &[3.0, 4.0]);
        let (loss, _) = loss_rec(&x, &xhat).unwrap();
        assert_eq!(loss, 12.5);
    }

    #[test]
    fn rec_gradient_matches_finite_differences() {
        let x = m(2, 3, &[0.3, -1.2, 0.7, 2.0, 0.1, -0.4]);
        let xhat = m(2, 3, &[-0.5, 0.8, 1.1, 0.9, -2.0, 0.6]);
        let (_, grad) = loss_rec(&x, &xhat).unwrap();
        let fd = fd_grad(|p| loss_rec(&x, p).unwrap().0, &xhat, 1e-5);
        assert!(max_rel(&grad, &fd) < 1e-9);
    }

    #[test]
    fn reg_direct_value() {
        let c = m(1, 1, &[1.0]);
        let chat = m(1, 1, &[0.0]);
        assert_eq!(loss_reg(&c, &chat).unwrap().0, 1.0);
    }

    #[test]
    fn uninformed_discriminator_loss_is_two_ln_two() {
        let half = m(3, 1, &[0.5; 3]);
        let (loss, _, _) = loss_adv_discriminator(&half, &half).unwrap();
        assert!((loss - 2.0 * std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn perfect_discriminator_loss_is_near_zero() {
        let real = m(2, 1, &[1.0, 1.0]);
        let fake = m(2, 1, &[0.0, 0.0]);
        let (loss, grad_real, grad_fake) = loss_adv_discriminator(&real, &fake).unwrap();
        assert!(loss.abs() < 1e-6);
        // Clamped probabilities pass no gradient.
        assert!(grad_real.data().iter().all(|&v| v == 0.0));
        assert!(grad_fake.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn discriminator_gradient_matches_finite_differences() {
        let real = m(3, 1, &[0.7, 0.4, 0.9]);
        let fake = m(3, 1, &[0.2, 0.5, 0.35]);
        let (_, grad_real, grad_fake) = loss_adv_discriminator(&real, &fake).unwrap();
        let fd_real = fd_grad(|p| loss_adv_discriminator(p, &fake).unwrap().0, &real, 1e-6);
        let fd_fake = fd_grad(|p| loss_adv_discriminator(&real, p).unwrap().0, &fake, 1e-6);
        assert!(max_rel(&grad_real, &fd_real) < 1e-7);
        assert!(max_rel(&grad_fake, &fd_fake) < 1e-7);
    }

    #[test]
    fn generator_loss_values_and_monotonicity() {
        let (l_fooled, _) = loss_adv_generator(&m(1, 1, &[1.0])).unwrap();
        assert!(l_fooled.abs() < 1e-6);
        let (l_half, _) = loss_adv_generator(&m(1, 1, &[0.5])).unwrap();
        assert!((l_half - std::f64::consts::LN_2).abs() < 1e-12);
        let mut prev = f64::INFINITY;
        for p in [0.1, 0.3, 0.5, 0.7, 0.9] {
            let (l, _) = loss_adv_generator(&m(1, 1, &[p])).unwrap();
            assert!(l < prev, "-log is decreasing in d_fake");
            prev = l;
        }
    }

    #[test]
    fn kernel_at_zero_distance_is_eta_sum() {
        let bank = KernelBank::default();
        let a = m(1, 4, &[0.5, -1.0, 2.0, 0.0]);
        let k = rbf_kernel(&a, &a, &bank).unwrap();
        assert_eq!(k.get(0, 0), bank.eta_sum());
    }

    #[test]
    fn single_kernel_direct_value() {
        let bank = KernelBank::new(vec![1.0], vec![1.0]).unwrap();
        let a = m(1, 2, &[1.0, 1.0]);
        let b = m(1, 2, &[0.0, 0.0]);
        // squared distance 2, sigma 1 -> exp(-1)
        let k = rbf_kernel(&a, &b, &bank).unwrap();
        assert!((k.get(0, 0) - (-1.0_f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn kernel_matrix_symmetric_on_same_set() {
        let bank = KernelBank::default();
        let a = m(3, 2, &[0.1, 0.9, -0.4, 0.2, 1.5, -0.7]);
        let k = rbf_kernel(&a, &a, &bank).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(k.get(i, j), k.get(j, i));
            }
        }
    }

    #[test]
    fn mmd_identical_sets_is_zero() {
        let bank = KernelBank::default();
        let x = m(4, 3, &[0.3, 1.2, -0.5, 0.0, 0.7, 0.9, -1.1, 0.4, 0.6, 2.0, -0.3, 0.1]);
        let (loss, _) = loss_mmd(&x, &x, &bank).unwrap();
        assert!(loss.abs() <= 1e-12);
    }

    #[test]
    fn mmd_single_pair_hand_value() {
        let bank = KernelBank::new(vec![1.0], vec![1.0]).unwrap();
        let x = m(1, 1, &[0.0]);
        let xhat = m(1, 1, &[2.0_f64.sqrt()]);
        let (loss, _) = loss_mmd(&x, &xhat, &bank).unwrap();
        let expected = 2.0 - 2.0 * (-1.0_f64).exp();
        assert!((loss - expected).abs() <= 1e-12, "loss {loss} expected {expected}");
    }

    #[test]
    fn mmd_gradient_matches_finite_differences() {
        let bank = KernelBank::new(vec![0.5, 2.0], vec![1.0, 0.5]).unwrap();
        let x = m(3, 2, &[0.4, -0.2, 1.0, 0.8, -0.6, 0.3]);
        let xhat = m(2, 2, &[0.9, 0.1, -0.3, 0.5]);
        let (_, grad) = loss_mmd(&x, &xhat, &bank).unwrap();
        let fd = fd_grad(|p| loss_mmd(&x, p, &bank).unwrap().0, &xhat, 1e-5);
        assert!(max_rel(&grad, &fd) < 1e-7, "rel {}", max_rel(&grad, &fd));
    }

    #[test]
    fn mmd_raw_sum_scales_with_counts() {
        let bank = KernelBank::new(vec![1.0], vec![1.0]).unwrap();
        let x = m(1, 1, &[0.0]);
        let xhat = m(1, 1, &[2.0_f64.sqrt()]);
        let (mean_loss, _) = loss_mmd_with(&x, &xhat, &bank, MmdNormalization::Mean).unwrap();
        let (raw_loss, _) = loss_mmd_with(&x, &xhat, &bank, MmdNormalization::RawSum).unwrap();
        // Single-element sets: the two variants coincide.
        assert_eq!(mean_loss, raw_loss);
    }

    #[test]
    fn contrastive_three_reference_cases() {
        // Same-class pair at distance 3, margin 5 -> 3.
        let o_g = m(1, 2, &[3.0, 0.0]);
        let o_r = m(1, 2, &[0.0, 0.0]);
        let pos = PairLabels::new(vec![true]);
        let (l, _, _) = loss_contrastive(&o_g, &o_r, &pos, 5.0).unwrap();
        assert!((l - 3.0).abs() <= 1e-12);
        // Different-class pair at distance 3 -> (5 - 3)^2 = 4.
        let neg = PairLabels::new(vec![false]);
        let (l, _, _) = loss_contrastive(&o_g, &o_r, &neg, 5.0).unwrap();
        assert!((l - 4.0).abs() <= 1e-12);
        // Different-class pair at distance 7 -> hinge inactive.
        let far = m(1, 2, &[7.0, 0.0]);
        let (l, _, _) = loss_contrastive(&far, &o_r, &neg, 5.0).unwrap();
        assert!(l.abs() <= 1e-12);
    }

    #[test]
    fn contrastive_gradient_matches_finite_differences() {
        let o_g = m(4, 2, &[0.5, 1.0, -0.8, 0.2, 2.0, -1.5, 0.3, 0.9]);
        let o_r = m(4, 2, &[-0.2, 0.4, 0.6, -0.1, 1.2, 0.8, -0.9, 0.0]);
        let labels = PairLabels::new(vec![true, false, true, false]);
        let (_, grad_g, grad_r) = loss_contrastive(&o_g, &o_r, &labels, 0.9).unwrap();
        let fd_g = fd_grad(|p| loss_contrastive(p, &o_r, &labels, 0.9).unwrap().0, &o_g, 1e-6);
        let fd_r = fd_grad(|p| loss_contrastive(&o_g, p, &labels, 0.9).unwrap().0, &o_r, 1e-6);
        assert!(max_rel(&grad_g, &fd_g) < 1e-6);
        assert!(max_rel(&grad_r, &fd_r) < 1e-6);
    }

    #[test]
    fn combine_collapses_and_weights() {
        let parts = StageLossParts {
            rec: 1.5,
            adv_g: 0.7,
            reg: 2.0,
            mmd: None,
        };
        let zero = LossWeights {
            alpha: 0.0,
            beta: 0.0,
            gamma: 0.0,
            margin: 5.0,
        };
        assert_eq!(combine_stage_loss(&parts, &zero).unwrap(), 1.5);
        let reference = LossWeights {
            alpha: 0.01,
            beta: 0.0001,
            gamma: 0.01,
            margin: 5.0,
        };
        let expected = 1.5 + 0.01 * 0.7 + 0.0001 * 2.0;
        assert!((combine_stage_loss(&parts, &reference).unwrap() - expected).abs() < 1e-15);
        let with_mmd = StageLossParts {
            mmd: Some(3.0),
            ..parts
        };
        let expected = expected + 0.01 * 3.0;
        assert!((combine_stage_loss(&with_mmd, &reference).unwrap() - expected).abs() < 1e-15);
    }

    #[test]
    fn combine_rejects_negative_weights() {
        let parts = StageLossParts {
            rec: 1.0,
            adv_g: 1.0,
            reg: 1.0,
            mmd: None,
        };
        let bad = LossWeights {
            alpha: -0.1,
            beta: 0.0,
            gamma: 0.0,
            margin: 5.0,
        };
        assert!(matches!(
            combine_stage_loss(&parts, &bad),
            Err(SanError::InvalidConfig(_))
        ));
    }

    #[test]
    fn kernel_bank_validation() {
        assert!(KernelBank::new(vec![], vec![]).is_err());
        assert!(KernelBank::new(vec![1.0], vec![1.0, 2.0]).is_err());
        assert!(KernelBank::new(vec![-1.0], vec![1.0]).is_err());
        assert!(KernelBank::new(vec![1.0], vec![0.0]).is_err());
    }
}
