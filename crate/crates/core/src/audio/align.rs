use super::AudioError;

/// Fixes a signal to `target` samples: longer signals keep their head, shorter ones
/// are tiled end to end and cut.
pub fn align_duration(samples: &[f32], target: usize) -> Result<Vec<f32>, AudioError> {
    if samples.is_empty() {
        return Err(AudioError::Empty);
    }
    Ok(samples.iter().copied().cycle().take(target).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn exact_length_unchanged() {
        let x: Vec<f32> = (0..96_000).map(|i| i as f32).collect();
        assert_eq!(align_duration(&x, 96_000).unwrap(), x);
    }

    #[test]
    fn long_signal_truncated() {
        let x: Vec<f32> = (0..100_000).map(|i| i as f32).collect();
        assert_eq!(align_duration(&x, 96_000).unwrap(), x[..96_000]);
    }

    #[test]
    fn short_signal_tiled() {
        let x: Vec<f32> = (0..40_000).map(|i| i as f32).collect();
        let y = align_duration(&x, 96_000).unwrap();
        let mut expected = x.clone();
        expected.extend_from_slice(&x);
        expected.extend_from_slice(&x[..16_000]);
        assert_eq!(y, expected);
    }

    #[test]
    fn empty_rejected() {
        assert!(matches!(align_duration(&[], 10), Err(AudioError::Empty)));
    }

    proptest! {
        #[test]
        fn idempotent(x in prop::collection::vec(-1.0f32..1.0, 1..300), target in 1usize..500) {
            let once = align_duration(&x, target).unwrap();
            prop_assert_eq!(align_duration(&once, target).unwrap(), once.clone());
            prop_assert_eq!(once.len(), target);
        }

        #[test]
        fn every_tile_is_the_original(x in prop::collection::vec(-1.0f32..1.0, 1..100), target in 1usize..500) {
            prop_assume!(x.len() < target);
            let y = align_duration(&x, target).unwrap();
            for chunk in y.chunks(x.len()) {
                prop_assert_eq!(chunk, &x[..chunk.len()]);
            }
        }
    }
}
