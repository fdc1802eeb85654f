//! Shared fixture builders for the criterion benchmarks.

use memaudit_core::{random_image, PixelImage};

/// Deterministic square noise images; seed `base + i` for image `i`.
pub fn images(count: usize, size: usize, base_seed: u64) -> Vec<PixelImage> {
    (0..count)
        .map(|i| random_image(size, size, base_seed + i as u64))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn images_are_reproducible() {
        let a = images(3, 16, 5);
        let b = images(3, 16, 5);
        assert_eq!(a.len(), 3);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.pixels(), y.pixels());
        }
    }
}
