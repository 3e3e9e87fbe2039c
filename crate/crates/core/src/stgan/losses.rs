//! Adversarial, feature-matching and perceptual losses.

use serde::{Deserialize, Serialize};

use super::LossWeights;
use crate::neuralcore::{NeuralError, Tape, Var};

/// Form of the adversarial objective. Least squares is the default; the
/// cross-entropy switch recovers the original saturating form.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GanObjective {
    LeastSquares,
    CrossEntropy,
}

impl GanObjective {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "least_squares" | "lsgan" => Some(Self::LeastSquares),
            "cross_entropy" | "bce" => Some(Self::CrossEntropy),
            _ => None,
        }
    }
}

/// Discriminator side: mean((real − 1)² + fake²)/2, or the cross-entropy
/// equivalent.
pub fn loss_gan_discriminator(
    tape: &mut Tape,
    logits_real: Var,
    logits_fake: Var,
    objective: GanObjective,
) -> Var {
    match objective {
        GanObjective::LeastSquares => {
            let real = tape.mean_sq_diff_const(logits_real, 1.0);
            let fake = tape.mean_sq_diff_const(logits_fake, 0.0);
            tape.scaled_sum(vec![(real, 0.5), (fake, 0.5)])
        }
        GanObjective::CrossEntropy => {
            let real = tape.mean_bce_logits(logits_real, 1.0);
            let fake = tape.mean_bce_logits(logits_fake, 0.0);
            tape.scaled_sum(vec![(real, 0.5), (fake, 0.5)])
        }
    }
}

/// Generator side: mean((fake − 1)²), or the cross-entropy equivalent.
pub fn loss_gan_generator(tape: &mut Tape, logits_fake: Var, objective: GanObjective) -> Var {
    match objective {
        GanObjective::LeastSquares => tape.mean_sq_diff_const(logits_fake, 1.0),
        GanObjective::CrossEntropy => tape.mean_bce_logits(logits_fake, 1.0),
    }
}

/// Layer-weighted L1 between discriminator activations on the label and the
/// generated image: Σᵢ (1/wᵢ)·mean|label_i − fake_i| with wᵢ = 2^(l−i).
/// The norm is the mean absolute difference per layer, which keeps the λ
/// weights resolution-independent.
pub fn loss_feature_matching(
    tape: &mut Tape,
    feats_label: &[Var],
    feats_fake: &[Var],
    l_d: usize,
) -> Result<Var, NeuralError> {
    if feats_label.len() != feats_fake.len() || feats_label.len() != l_d {
        return Err(NeuralError::ShapeMismatch {
            op: "loss_feature_matching",
            detail: format!("{} label vs {} fake taps, expected {l_d}", feats_label.len(), feats_fake.len()),
        });
    }
    let coeffs = LossWeights::layer_coeffs(l_d);
    let mut terms = Vec::with_capacity(l_d);
    for i in 0..l_d {
        let d = tape.mean_abs_diff(feats_label[i], feats_fake[i])?;
        terms.push((d, coeffs[i] as f32));
    }
    Ok(tape.scaled_sum(terms))
}

/// Same weighting scheme over frozen-encoder taps of label and fake.
pub fn loss_perceptual_from_taps(
    tape: &mut Tape,
    taps_label: &[Var],
    taps_fake: &[Var],
    l_p: usize,
) -> Result<Var, NeuralError> {
    loss_feature_matching(tape, taps_label, taps_fake, l_p)
}

/// Generator objective: Σₖ gan + λ_FM·Σₖ fm + λ_VGG·perceptual.
pub fn loss_total(
    tape: &mut Tape,
    gan_g_per_scale: &[Var],
    fm_per_scale: &[Var],
    perceptual: Var,
    weights: &LossWeights,
) -> Var {
    let mut terms: Vec<(Var, f32)> = gan_g_per_scale.iter().map(|&v| (v, 1.0)).collect();
    terms.extend(fm_per_scale.iter().map(|&v| (v, weights.lambda_fm as f32)));
    terms.push((perceptual, weights.lambda_vgg as f32));
    tape.scaled_sum(terms)
}

/// Discriminator objective: Σₖ gan. Feature-matching and perceptual terms
/// never contribute here.
pub fn loss_d_total(tape: &mut Tape, gan_d_per_scale: &[Var]) -> Var {
    let terms: Vec<(Var, f32)> = gan_d_per_scale.iter().map(|&v| (v, 1.0)).collect();
    tape.scaled_sum(terms)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neuralcore::{Shape, Tensor};

    fn leaf(tape: &mut Tape, shape: Shape, data: Vec<f32>) -> Var {
        tape.leaf(Tensor::from_vec(shape, data))
    }

    #[test]
    fn perfect_discriminator_scores_zero() {
        let mut tape = Tape::new();
        let real = leaf(&mut tape, Shape::nchw(1, 1, 2, 2), vec![1.0; 4]);
        let fake = leaf(&mut tape, Shape::nchw(1, 1, 2, 2), vec![0.0; 4]);
        let d = loss_gan_discriminator(&mut tape, real, fake, GanObjective::LeastSquares);
        assert_eq!(tape.value(d).item(), 0.0);
    }

    #[test]
    fn fooled_generator_scores_zero() {
        let mut tape = Tape::new();
        let fake = leaf(&mut tape, Shape::nchw(1, 1, 2, 2), vec![1.0; 4]);
        let g = loss_gan_generator(&mut tape, fake, GanObjective::LeastSquares);
        assert_eq!(tape.value(g).item(), 0.0);
    }

    #[test]
    fn gan_losses_match_hand_computation() {
        // frozen by hand: r = [0.3, −0.2, 1.1, 0.7], f = [−0.4, 0.9, 0.2, −1.0]
        let mut tape = Tape::new();
        let real = leaf(&mut tape, Shape::nchw(1, 1, 2, 2), vec![0.3, -0.2, 1.1, 0.7]);
        let fake = leaf(&mut tape, Shape::nchw(1, 1, 2, 2), vec![-0.4, 0.9, 0.2, -1.0]);
        let d = loss_gan_discriminator(&mut tape, real, fake, GanObjective::LeastSquares);
        let g = loss_gan_generator(&mut tape, fake, GanObjective::LeastSquares);
        assert!((tape.value(d).item() - 0.505).abs() < 1e-6);
        assert!((tape.value(g).item() - 1.6525).abs() < 1e-6);
    }

    #[test]
    fn feature_matching_zero_on_identical_lists() {
        let mut tape = Tape::new();
        let a1 = leaf(&mut tape, Shape::nchw(1, 2, 3, 3), (0..18).map(|i| i as f32 * 0.1).collect());
        let a2 = leaf(&mut tape, Shape::nchw(1, 4, 2, 2), (0..16).map(|i| i as f32 * -0.2).collect());
        let fm = loss_feature_matching(&mut tape, &[a1, a2], &[a1, a2], 2).unwrap();
        assert_eq!(tape.value(fm).item(), 0.0);
    }

    #[test]
    fn feature_matching_matches_hand_computed_weighted_sum() {
        // two layers: mean abs diffs 0.75 and 1.0, coeffs (1/2, 1) → 1.375
        let mut tape = Tape::new();
        let l1 = leaf(&mut tape, Shape::nchw(1, 1, 2, 2), vec![1.0; 4]);
        let f1 = leaf(&mut tape, Shape::nchw(1, 1, 2, 2), vec![0.25; 4]);
        let l2 = leaf(&mut tape, Shape::nchw(1, 2, 1, 1), vec![-0.5, -0.5]);
        let f2 = leaf(&mut tape, Shape::nchw(1, 2, 1, 1), vec![0.5, 0.5]);
        let fm = loss_feature_matching(&mut tape, &[l1, l2], &[f1, f2], 2).unwrap();
        assert!((tape.value(fm).item() - 1.375).abs() < 1e-6);
    }

    #[test]
    fn perceptual_loss_is_symmetric_and_zero_on_equal() {
        let mut tape = Tape::new();
        let a = leaf(&mut tape, Shape::nchw(1, 3, 4, 4), (0..48).map(|i| (i as f32).sin()).collect());
        let b = leaf(&mut tape, Shape::nchw(1, 3, 4, 4), (0..48).map(|i| (i as f32).cos()).collect());
        let z = loss_perceptual_from_taps(&mut tape, &[a], &[a], 1).unwrap();
        assert_eq!(tape.value(z).item(), 0.0);
        let ab = loss_perceptual_from_taps(&mut tape, &[a], &[b], 1).unwrap();
        let ba = loss_perceptual_from_taps(&mut tape, &[b], &[a], 1).unwrap();
        assert_eq!(tape.value(ab).item(), tape.value(ba).item());
    }

    #[test]
    fn total_loss_arithmetic() {
        // per-scale components all 1, perceptual 1, defaults λ_FM=5 λ_VGG=2:
        // 3·1 + 5·3 + 2·1 = 20
        let mut tape = Tape::new();
        let ones: Vec<Var> = (0..3).map(|_| tape.leaf(Tensor::scalar(1.0))).collect();
        let vgg = tape.leaf(Tensor::scalar(1.0));
        let w = LossWeights::default();
        let g = loss_total(&mut tape, &ones, &ones, vgg, &w);
        assert!((tape.value(g).item() - 20.0).abs() < 1e-6);
        let d = loss_d_total(&mut tape, &ones);
        assert!((tape.value(d).item() - 3.0).abs() < 1e-6);
    }

    #[test]
    fn cross_entropy_objective_is_positive_and_ordered() {
        let mut tape = Tape::new();
        let good = leaf(&mut tape, Shape::nchw(1, 1, 2, 2), vec![3.0; 4]);
        let bad = leaf(&mut tape, Shape::nchw(1, 1, 2, 2), vec![-3.0; 4]);
        let g_good = loss_gan_generator(&mut tape, good, GanObjective::CrossEntropy);
        let g_bad = loss_gan_generator(&mut tape, bad, GanObjective::CrossEntropy);
        assert!(tape.value(g_good).item() < tape.value(g_bad).item());
        assert!(tape.value(g_good).item() > 0.0);
    }
}
