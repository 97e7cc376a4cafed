//! Pixel-wise cross-entropy.

use crate::data::LabelMask;
use crate::error::{Error, Result};
use crate::tensor::{Element, Tape, Var};

pub use crate::data::IGNORE_INDEX;

/// Mean of `-log softmax(logits)[label]` over pixels not equal to `ignore`.
/// `logits` is `[K, H, W]`.
pub fn cross_entropy_loss<T: Element>(
    tape: &mut Tape<T>,
    logits: Var,
    labels: &LabelMask,
    ignore: Option<u8>,
) -> Result<Var> {
    let s = tape.shape(logits);
    if s.len() != 3 || s[1] != labels.height() || s[2] != labels.width() {
        return Err(Error::dim(format!(
            "logits {s:?} do not match a {}x{} label mask",
            labels.height(),
            labels.width()
        )));
    }
    tape.cross_entropy(logits, labels.data(), ignore)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn loss_of(logits: Vec<f64>, k: usize, h: usize, w: usize, labels: &[u8]) -> Result<f64> {
        let mut tape = Tape::<f64>::new();
        let x = tape.var(Tensor::new([k, h, w], logits).unwrap()).unwrap();
        let m = LabelMask::new(h, w, labels.to_vec()).unwrap();
        let l = cross_entropy_loss(&mut tape, x, &m, Some(IGNORE_INDEX))?;
        Ok(tape.value(l).item())
    }

    #[test]
    fn confident_and_correct_is_near_zero() {
        let labels = [0u8, 2, 1, 1];
        let mut logits = vec![0.0; 12];
        for (i, &l) in labels.iter().enumerate() {
            logits[l as usize * 4 + i] = 1e3;
        }
        assert!(loss_of(logits, 3, 2, 2, &labels).unwrap() < 1e-9);
    }

    #[test]
    fn uniform_is_log_k() {
        let l = loss_of(vec![0.3; 5 * 6], 5, 2, 3, &[0, 1, 2, 3, 4, 0]).unwrap();
        assert!((l - 5f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn out_of_range_label() {
        assert!(matches!(loss_of(vec![0.0; 4], 2, 1, 2, &[0, 2]), Err(Error::Data(_))));
    }

    #[test]
    fn ignored_pixels_do_not_count() {
        let a = loss_of(vec![1.0, 0.0, 0.0, 5.0], 2, 1, 2, &[0, 255]).unwrap();
        let b = loss_of(vec![1.0, 0.0], 2, 1, 1, &[0]).unwrap();
        assert_eq!(a, b);
    }
}
