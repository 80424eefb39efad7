use thiserror::Error;

use eeg2fmri_tensor::{Tensor, TensorError};

#[derive(Debug, Error)]
pub enum LossError {
    #[error("theta {theta} outside [0, 1]")]
    ThetaOutOfRange { theta: f64 },

    #[error("contrastive margin {margin} must be positive")]
    NonPositiveMargin { margin: f64 },

    #[error("contrastive distance {distance} is negative")]
    NegativeDistance { distance: f64 },

    #[error("entropy-mode discriminator output {value} outside (0, 1)")]
    DomainError { value: f64 },

    #[error("adversarial loss needs at least one real and one fake output")]
    EmptyBatch,

    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub type Result<T> = std::result::Result<T, LossError>;

/// Which adversarial objective the discriminator/generator pair minimizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AdversarialMode {
    /// Cross-entropy minmax on sigmoid outputs in (0, 1).
    Entropy,
    /// Earth-mover surrogate on a linear critic head with weight clipping.
    EarthMover,
}

/// Scalar knobs shared by the pairwise objectives.
#[derive(Debug, Clone, Copy)]
pub struct LossConfig {
    pub theta: f64,
    pub margin: f64,
    pub adversarial_mode: AdversarialMode,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            theta: 0.5,
            margin: 1.0,
            adversarial_mode: AdversarialMode::Entropy,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.theta) || !self.theta.is_finite() {
            return Err(LossError::ThetaOutOfRange { theta: self.theta });
        }
        if !(self.margin > 0.0) {
            return Err(LossError::NonPositiveMargin {
                margin: self.margin,
            });
        }
        Ok(())
    }
}

/// Reconstruction loss: mean over volumes of ‖pred − target‖₂ / N_voxels,
/// where axis 0 indexes volumes and the rest flatten to voxels.
pub fn epv_loss(target: &Tensor, pred: &Tensor) -> Result<Tensor> {
    if target.shape() != pred.shape() || target.rank() == 0 {
        return Err(LossError::Tensor(TensorError::shape(
            "epv_loss",
            format!("target {:?} vs pred {:?}", target.shape(), pred.shape()),
        )));
    }
    let volumes = target.shape()[0];
    let voxels = target.numel() / volumes;
    let diff = pred.sub(target)?;
    let per_volume = diff
        .square()?
        .reshape(vec![volumes, voxels])?
        .row_sums()?
        .sqrt()?
        .scale(1.0 / voxels as f64)?;
    Ok(per_volume.mean()?)
}

/// Contrastive distance D_W: mean absolute difference of two encodings.
pub fn encoding_distance(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    Ok(a.sub(b)?.abs()?.mean()?)
}

/// y·d² + (1−y)·max(0, m−d)²: pulls matched encodings together and pushes
/// mismatched ones past the margin.
pub fn contrastive_loss(d_w: &Tensor, y: f64, margin: f64) -> Result<Tensor> {
    if !(margin > 0.0) {
        return Err(LossError::NonPositiveMargin { margin });
    }
    debug_assert!(y == 0.0 || y == 1.0, "contrastive label must be 0 or 1");
    let d = d_w.value();
    if d < 0.0 {
        return Err(LossError::NegativeDistance { distance: d });
    }
    let pull = d_w.square()?.scale(y)?;
    let push = d_w.neg()?.add_scalar(margin)?.relu()?.square()?.scale(1.0 - y)?;
    Ok(pull.add(&push)?)
}

/// L_e = θ·L_c + (1−θ)·L_r.
pub fn encoder_combined_loss(l_c: &Tensor, l_r: &Tensor, theta: f64) -> Result<Tensor> {
    if !(0.0..=1.0).contains(&theta) || !theta.is_finite() {
        return Err(LossError::ThetaOutOfRange { theta });
    }
    Ok(l_c.scale(theta)?.add(&l_r.scale(1.0 - theta)?)?)
}

/// Builds (discriminator_loss, generator_loss) from batched discriminator
/// outputs. Both losses are minimized by their respective optimizers; the
/// discriminator's underlying value function is the negation of its loss.
pub fn adversarial_losses(
    d_real: &Tensor,
    d_fake: &Tensor,
    mode: AdversarialMode,
) -> Result<(Tensor, Tensor)> {
    if d_real.numel() == 0 || d_fake.numel() == 0 {
        return Err(LossError::EmptyBatch);
    }
    match mode {
        AdversarialMode::Entropy => {
            for &v in d_real.data().iter().chain(d_fake.data()) {
                if !(v > 0.0 && v < 1.0) {
                    return Err(LossError::DomainError { value: v });
                }
            }
            // value = E[ln D(real)] + E[ln(1 − D(fake))], maximized by the
            // discriminator; the generator minimizes the fake half.
            let real_term = d_real.ln()?.mean()?;
            let fake_term = d_fake.one_minus()?.ln()?.mean()?;
            let disc_loss = real_term.add(&fake_term)?.neg()?;
            let gen_loss = d_fake.one_minus()?.ln()?.mean()?;
            Ok((disc_loss, gen_loss))
        }
        AdversarialMode::EarthMover => {
            // value = E[D(real)] + E[1 − D(fake)], maximized by the critic.
            let value = d_real.mean()?.add(&d_fake.one_minus()?.mean()?)?;
            let disc_loss = value.neg()?;
            let gen_loss = d_fake.mean()?.neg()?;
            Ok((disc_loss, gen_loss))
        }
    }
}

/// λ·Σ|w| summed over every parameter tensor, kept on-graph so the penalty
/// contributes gradients.
pub fn l1_penalty(params: &[Tensor], lambda: f64) -> Result<Tensor> {
    debug_assert!(lambda >= 0.0, "L1 weight must be non-negative");
    if params.is_empty() || lambda == 0.0 {
        return Ok(Tensor::scalar(0.0));
    }
    let sums: Vec<Tensor> = params
        .iter()
        .map(|p| p.abs()?.sum())
        .collect::<std::result::Result<_, _>>()?;
    Ok(Tensor::add_n(&sums)?.scale(lambda)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn t(data: Vec<f64>, shape: Vec<usize>) -> Tensor {
        Tensor::from_vec(data, shape).unwrap()
    }

    #[test]
    fn epv_matches_hand_examples() {
        let target = t(vec![1.0, 2.0, 3.0, 4.0], vec![1, 4]);
        assert_eq!(epv_loss(&target, &target).unwrap().value(), 0.0);

        // One volume, four voxels, constant residual 2: sqrt(4·4)/4 = 1.
        let pred = t(vec![3.0, 4.0, 5.0, 6.0], vec![1, 4]);
        assert_relative_eq!(epv_loss(&target, &pred).unwrap().value(), 1.0);

        // Two single-voxel volumes with residuals 1 and 3: mean 2.
        let target = t(vec![0.0, 0.0], vec![2, 1]);
        let pred = t(vec![1.0, 3.0], vec![2, 1]);
        assert_relative_eq!(epv_loss(&target, &pred).unwrap().value(), 2.0);
    }

    #[test]
    fn epv_flattens_trailing_axes_as_voxels() {
        let target = Tensor::zeros(vec![2, 2, 1, 2]);
        let pred = t(vec![2.0; 8], vec![2, 2, 1, 2]);
        // Per volume: sqrt(4·4)/4 = 1.
        assert_relative_eq!(epv_loss(&target, &pred).unwrap().value(), 1.0);
        assert!(epv_loss(&target, &t(vec![0.0], vec![1])).is_err());
    }

    #[test]
    fn encoding_distance_is_mean_absolute_difference() {
        let a = t(vec![1.0, -2.0, 3.0], vec![3]);
        let b = t(vec![0.0, 2.0, 3.0], vec![3]);
        assert_relative_eq!(encoding_distance(&a, &b).unwrap().value(), 5.0 / 3.0);
    }

    #[test]
    fn contrastive_covers_both_branches() {
        assert_eq!(
            contrastive_loss(&Tensor::scalar(0.0), 1.0, 1.0).unwrap().value(),
            0.0
        );
        assert_eq!(
            contrastive_loss(&Tensor::scalar(1.5), 0.0, 1.0).unwrap().value(),
            0.0
        );
        assert_relative_eq!(
            contrastive_loss(&Tensor::scalar(0.0), 0.0, 1.0).unwrap().value(),
            1.0
        );
        assert_relative_eq!(
            contrastive_loss(&Tensor::scalar(0.5), 1.0, 1.0).unwrap().value(),
            0.25
        );
        assert!(matches!(
            contrastive_loss(&Tensor::scalar(-0.1), 1.0, 1.0),
            Err(LossError::NegativeDistance { .. })
        ));
        assert!(matches!(
            contrastive_loss(&Tensor::scalar(0.5), 1.0, 0.0),
            Err(LossError::NonPositiveMargin { .. })
        ));
    }

    #[test]
    fn contrastive_is_continuous_at_the_margin() {
        let eps = 1e-7;
        let below = contrastive_loss(&Tensor::scalar(1.0 - eps), 0.0, 1.0)
            .unwrap()
            .value();
        let above = contrastive_loss(&Tensor::scalar(1.0 + eps), 0.0, 1.0)
            .unwrap()
            .value();
        assert!(below < 1e-12 && above == 0.0);
    }

    #[test]
    fn combined_loss_is_exact_convex_mix() {
        let l_c = Tensor::scalar(4.0);
        let l_r = Tensor::scalar(8.0);
        assert_relative_eq!(
            encoder_combined_loss(&l_c, &l_r, 1.0).unwrap().value(),
            4.0
        );
        assert_relative_eq!(
            encoder_combined_loss(&l_c, &l_r, 0.0).unwrap().value(),
            8.0
        );
        assert_relative_eq!(
            encoder_combined_loss(&l_c, &l_r, 0.25).unwrap().value(),
            7.0
        );
        assert!(matches!(
            encoder_combined_loss(&l_c, &l_r, 1.5),
            Err(LossError::ThetaOutOfRange { .. })
        ));
        assert!(matches!(
            encoder_combined_loss(&l_c, &l_r, -0.1),
            Err(LossError::ThetaOutOfRange { .. })
        ));
    }

    #[test]
    fn entropy_losses_match_direct_evaluation() {
        let half = t(vec![0.5, 0.5], vec![2]);
        let (disc, gen) =
            adversarial_losses(&half, &half, AdversarialMode::Entropy).unwrap();
        // value = 2·ln 0.5 = −2 ln 2, so the minimized loss is its negation.
        assert_relative_eq!(disc.value(), 2.0 * (2.0f64).ln(), max_relative = 1e-12);
        assert_relative_eq!(gen.value(), -(2.0f64).ln(), max_relative = 1e-12);

        let bad = t(vec![1.0], vec![1]);
        assert!(matches!(
            adversarial_losses(&half, &bad, AdversarialMode::Entropy),
            Err(LossError::DomainError { value }) if value == 1.0
        ));
        let bad = t(vec![0.0], vec![1]);
        assert!(matches!(
            adversarial_losses(&bad, &half, AdversarialMode::Entropy),
            Err(LossError::DomainError { value }) if value == 0.0
        ));
    }

    #[test]
    fn earth_mover_losses_match_direct_evaluation() {
        let real = t(vec![1.0], vec![1]);
        let fake = t(vec![0.0], vec![1]);
        let (disc, gen) =
            adversarial_losses(&real, &fake, AdversarialMode::EarthMover).unwrap();
        assert_relative_eq!(disc.value(), -2.0); // critic value 1 + 1
        assert_relative_eq!(gen.value(), 0.0);

        // Symmetric outputs cancel: value = c + 1 − c = 1.
        for c in [-3.0, 0.0, 0.7] {
            let both = t(vec![c], vec![1]);
            let (disc, _) =
                adversarial_losses(&both, &both, AdversarialMode::EarthMover).unwrap();
            assert_relative_eq!(disc.value(), -1.0, max_relative = 1e-12);
        }
    }

    #[test]
    fn l1_penalty_is_exactly_lambda_times_abs_sum() {
        let w = t(vec![1.0, -2.0, 3.0], vec![3]);
        let b = t(vec![-0.5], vec![1]);
        assert_relative_eq!(
            l1_penalty(&[w.clone(), b], 0.1).unwrap().value(),
            0.65,
            max_relative = 1e-12
        );
        assert_eq!(l1_penalty(&[w], 0.0).unwrap().value(), 0.0);
        assert_eq!(l1_penalty(&[], 0.3).unwrap().value(), 0.0);
    }

    #[test]
    fn loss_config_validation() {
        assert!(LossConfig::default().validate().is_ok());
        assert!(LossConfig {
            theta: 1.2,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(LossConfig {
            margin: 0.0,
            ..Default::default()
        }
        .validate()
        .is_err());
    }
}
