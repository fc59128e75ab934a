//! Training-time augmentation: random scale, quarter-turn rotation,
//! flips and a random square crop.

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::tensor::Rng;

use super::{bicubic_resize, ImagePlane};

/// Resolved draw of one augmentation; applying it is deterministic.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentParams {
    /// Resize factor in `[0.75, 1.2]`.
    pub scale: f64,
    /// Clockwise quarter turns, 0..=3.
    pub quarter_turns: u8,
    pub flip_h: bool,
    pub flip_v: bool,
    /// Crop origin, valid for the post-rotation dimensions.
    pub crop_x: usize,
    pub crop_y: usize,
}

/// Draw scale in `[0.75, 1.2]`, one of four rotations, each flip with
/// probability 0.5 and a uniform crop origin, then apply them to produce a
/// `patch` x `patch` plane. Fails with a data error when the scaled image
/// cannot fit the crop (the caller should skip that image).
pub fn augment(plane: &ImagePlane, rng: &mut Rng, patch: usize) -> Result<ImagePlane> {
    let scale = rng.random_range(0.75..=1.2);
    let quarter_turns = rng.random_range(0..4u8);
    let flip_h = rng.random_bool(0.5);
    let flip_v = rng.random_bool(0.5);

    let (sw, sh) = scaled_dims(plane, scale);
    if sw < patch || sh < patch {
        return Err(Error::Data(format!(
            "scaled image {sw}x{sh} cannot fit a {patch}x{patch} crop"
        )));
    }
    let (cw, ch) = if quarter_turns % 2 == 1 { (sh, sw) } else { (sw, sh) };
    let crop_x = rng.random_range(0..=cw - patch);
    let crop_y = rng.random_range(0..=ch - patch);

    augment_with(
        plane,
        &AugmentParams { scale, quarter_turns, flip_h, flip_v, crop_x, crop_y },
        patch,
    )
}

/// Apply a fully specified augmentation draw.
pub fn augment_with(
    plane: &ImagePlane,
    params: &AugmentParams,
    patch: usize,
) -> Result<ImagePlane> {
    let (sw, sh) = scaled_dims(plane, params.scale);
    if sw < patch || sh < patch {
        return Err(Error::Data(format!(
            "scaled image {sw}x{sh} cannot fit a {patch}x{patch} crop"
        )));
    }
    let mut out = bicubic_resize(plane, sw, sh)?;
    for _ in 0..params.quarter_turns % 4 {
        out = rotate90(&out);
    }
    if params.flip_h {
        out = flip_horizontal(&out);
    }
    if params.flip_v {
        out = flip_vertical(&out);
    }
    out.crop(params.crop_x, params.crop_y, patch, patch)
}

fn scaled_dims(plane: &ImagePlane, scale: f64) -> (usize, usize) {
    let w = ((plane.width() as f64 * scale).round() as usize).max(1);
    let h = ((plane.height() as f64 * scale).round() as usize).max(1);
    (w, h)
}

/// Rotate one quarter turn clockwise; an exact sample permutation.
pub fn rotate90(plane: &ImagePlane) -> ImagePlane {
    let (w, h) = (plane.width(), plane.height());
    let mut samples = vec![0.0; w * h];
    for y in 0..w {
        for x in 0..h {
            samples[y * h + x] = plane.get(y, h - 1 - x);
        }
    }
    ImagePlane::new(h, w, samples).expect("swapped dims")
}

/// Mirror left-right; an exact sample permutation.
pub fn flip_horizontal(plane: &ImagePlane) -> ImagePlane {
    let (w, h) = (plane.width(), plane.height());
    let mut samples = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            samples[y * w + x] = plane.get(w - 1 - x, y);
        }
    }
    ImagePlane::new(w, h, samples).expect("same dims")
}

/// Mirror top-bottom; an exact sample permutation.
pub fn flip_vertical(plane: &ImagePlane) -> ImagePlane {
    let (w, h) = (plane.width(), plane.height());
    let mut samples = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            samples[y * w + x] = plane.get(x, h - 1 - y);
        }
    }
    ImagePlane::new(w, h, samples).expect("same dims")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::seeded_rng;

    fn ramp(w: usize, h: usize) -> ImagePlane {
        let samples: Vec<f64> = (0..w * h).map(|i| i as f64 / (w * h) as f64).collect();
        ImagePlane::new(w, h, samples).unwrap()
    }

    #[test]
    fn identity_params_reduce_to_a_plain_crop() {
        let plane = ramp(12, 10);
        let params = AugmentParams {
            scale: 1.0,
            quarter_turns: 0,
            flip_h: false,
            flip_v: false,
            crop_x: 3,
            crop_y: 2,
        };
        let got = augment_with(&plane, &params, 4).unwrap();
        let want = plane.crop(3, 2, 4, 4).unwrap();
        assert_eq!(got, want);
    }

    #[test]
    fn rotation_by_180_twice_is_identity() {
        let plane = ramp(7, 5);
        let twice = rotate90(&rotate90(&rotate90(&rotate90(&plane))));
        assert_eq!(twice, plane);
        let r180 = rotate90(&rotate90(&plane));
        let back = rotate90(&rotate90(&r180));
        assert_eq!(back, plane);
    }

    #[test]
    fn rotations_and_flips_permute_samples() {
        let plane = ramp(6, 4);
        let mut original = plane.samples().to_vec();
        original.sort_by(f64::total_cmp);
        for variant in [rotate90(&plane), flip_horizontal(&plane), flip_vertical(&plane)] {
            let mut got = variant.samples().to_vec();
            got.sort_by(f64::total_cmp);
            assert_eq!(got, original);
        }
    }

    #[test]
    fn output_dims_always_match_patch() {
        // Large enough that even the smallest scale (0.75) fits the crop.
        let plane = ramp(256, 192);
        let mut rng = seeded_rng(17);
        for _ in 0..50 {
            let out = augment(&plane, &mut rng, 128).unwrap();
            assert_eq!((out.width(), out.height()), (128, 128));
        }
    }

    #[test]
    fn too_small_plane_is_a_data_error() {
        let plane = ramp(100, 100);
        let mut rng = seeded_rng(1);
        // Scale can never reach 128 from 100x100 (max 1.2 -> 120).
        assert!(matches!(augment(&plane, &mut rng, 128), Err(Error::Data(_))));
    }

    #[test]
    fn same_seed_same_augmentation() {
        let plane = ramp(200, 160);
        let a = augment(&plane, &mut seeded_rng(5), 64).unwrap();
        let b = augment(&plane, &mut seeded_rng(5), 64).unwrap();
        assert_eq!(a, b);
    }
}
