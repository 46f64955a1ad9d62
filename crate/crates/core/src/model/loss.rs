//! Truncated phase-sensitive approximation objective.
//!
//! The regression target for each time-frequency bin is the source
//! magnitude projected onto the mixture's phase, clamped into [0, |X|]:
//! T = min(max(|S| cos(∠S − ∠X), 0), |X|). The loss is the mean squared
//! difference between mask ⊙ |X| and T over all bins.

use super::ModelError;
use crate::stft::Spectrogram;
use ndarray::{Array, Array2, Dimension, NdFloat};

/// Truncated phase-sensitive target, elementwise over the spectrogram.
///
/// |S| cos(∠S − ∠X) equals Re(S · conj(X)) / |X|, which avoids computing
/// either phase explicitly. Bins where |X| = 0 get target 0.
pub fn tpsa_target(mix: &Spectrogram, source: &Spectrogram) -> Result<Array2<f64>, ModelError> {
    if mix.bins.dim() != source.bins.dim() {
        return Err(ModelError::ShapeMismatch {
            expected: format!("{:?}", mix.bins.dim()),
            got: format!("{:?}", source.bins.dim()),
        });
    }
    let mut target = Array2::zeros(mix.bins.dim());
    for ((t, x), s) in target.iter_mut().zip(mix.bins.iter()).zip(source.bins.iter()) {
        let x_mag = x.norm();
        if x_mag > 0.0 {
            let projected = (s * x.conj()).re / x_mag;
            *t = projected.clamp(0.0, x_mag);
        }
    }
    Ok(target)
}

/// Mean over all bins of (mask ⊙ |X| − T)². Accumulated in f64 so the
/// f32 training path keeps a well-conditioned scalar loss.
pub fn tpsa_loss<F, D>(
    mask: &Array<F, D>,
    mix_magnitude: &Array<F, D>,
    target: &Array<F, D>,
) -> Result<f64, ModelError>
where
    F: NdFloat,
    D: Dimension,
{
    check_shapes(mask, mix_magnitude, target)?;
    let n = mask.len() as f64;
    let mut acc = 0.0;
    for ((m, x), t) in mask.iter().zip(mix_magnitude.iter()).zip(target.iter()) {
        let r = (*m * *x - *t).to_f64().expect("float convert");
        acc += r * r;
    }
    Ok(acc / n)
}

/// Gradient of [`tpsa_loss`] with respect to the mask:
/// dL/dm = 2 (m ⊙ |X| − T) ⊙ |X| / N.
pub fn tpsa_loss_grad<F, D>(
    mask: &Array<F, D>,
    mix_magnitude: &Array<F, D>,
    target: &Array<F, D>,
) -> Result<Array<F, D>, ModelError>
where
    F: NdFloat,
    D: Dimension,
{
    check_shapes(mask, mix_magnitude, target)?;
    let scale = F::from(2.0 / mask.len() as f64).expect("float convert");
    let mut grad = mask.clone();
    for ((g, x), t) in grad.iter_mut().zip(mix_magnitude.iter()).zip(target.iter()) {
        *g = scale * (*g * *x - *t) * *x;
    }
    Ok(grad)
}

fn check_shapes<F, D>(
    mask: &Array<F, D>,
    mix_magnitude: &Array<F, D>,
    target: &Array<F, D>,
) -> Result<(), ModelError>
where
    F: NdFloat,
    D: Dimension,
{
    if mask.shape() != mix_magnitude.shape() || mask.shape() != target.shape() {
        return Err(ModelError::ShapeMismatch {
            expected: format!("{:?}", mask.shape()),
            got: format!("{:?} vs {:?}", mix_magnitude.shape(), target.shape()),
        });
    }
    if mask.is_empty() {
        return Err(ModelError::InvalidArgument("empty loss input".into()));
    }
    Ok(())
}
