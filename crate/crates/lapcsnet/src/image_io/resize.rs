//! Separable Catmull-Rom bicubic resampling with antialiasing.

use crate::error::{Error, Result};

use super::ImagePlane;

/// Catmull-Rom cubic kernel (a = -0.5), support (-2, 2).
fn catmull_rom(t: f64) -> f64 {
    let x = t.abs();
    if x <= 1.0 {
        ((1.5 * x - 2.5) * x) * x + 1.0
    } else if x < 2.0 {
        ((-0.5 * x + 2.5) * x - 4.0) * x + 2.0
    } else {
        0.0
    }
}

/// One resampling tap: source index (already clamped) and weight.
struct Tap {
    index: usize,
    weight: f64,
}

/// Taps for one output coordinate of a 1-d resize from `in_len` to
/// `out_len`. When downscaling the kernel is widened by the scale factor
/// (antialiasing); source coordinates are clamped at the edges.
fn taps_for(out_index: usize, in_len: usize, out_len: usize, taps: &mut Vec<Tap>) -> usize {
    taps.clear();
    let scale = in_len as f64 / out_len as f64;
    let center = (out_index as f64 + 0.5) * scale - 0.5;
    let fscale = scale.max(1.0);
    let support = 2.0 * fscale;
    let lo = (center - support).ceil() as isize;
    let hi = (center + support).floor() as isize;
    for t in lo..=hi {
        let weight = catmull_rom((t as f64 - center) / fscale);
        let index = t.clamp(0, in_len as isize - 1) as usize;
        taps.push(Tap { index, weight });
    }
    // Reference sample for the centered evaluation below.
    (center.round() as isize).clamp(0, in_len as isize - 1) as usize
}

/// Weighted sum evaluated as deviations from a reference tap:
/// `ref + sum(w_i * (v_i - ref)) / sum(w_i)`. Algebraically identical to
/// the plain normalized sum, but a constant signal reproduces the constant
/// bitwise because every deviation term is exactly zero.
fn apply_taps(samples: impl Fn(usize) -> f64, taps: &[Tap], reference: usize) -> f64 {
    let ref_value = samples(reference);
    let mut acc = 0.0;
    let mut total = 0.0;
    for tap in taps {
        acc += tap.weight * (samples(tap.index) - ref_value);
        total += tap.weight;
    }
    ref_value + acc / total
}

/// Resize to `out_w` x `out_h` with the Catmull-Rom bicubic kernel,
/// clamping the result into `[0, 1]`.
pub fn bicubic_resize(plane: &ImagePlane, out_w: usize, out_h: usize) -> Result<ImagePlane> {
    if out_w == 0 || out_h == 0 {
        return Err(Error::Argument("resize target must be at least 1x1".into()));
    }
    let (in_w, in_h) = (plane.width(), plane.height());

    // Horizontal pass: in_w x in_h -> out_w x in_h.
    let mut horizontal = vec![0.0f64; out_w * in_h];
    let mut taps = Vec::new();
    for ox in 0..out_w {
        let reference = taps_for(ox, in_w, out_w, &mut taps);
        for y in 0..in_h {
            let row = &plane.samples()[y * in_w..(y + 1) * in_w];
            horizontal[y * out_w + ox] = apply_taps(|i| row[i], &taps, reference);
        }
    }

    // Vertical pass: out_w x in_h -> out_w x out_h.
    let mut out = vec![0.0f64; out_w * out_h];
    for oy in 0..out_h {
        let reference = taps_for(oy, in_h, out_h, &mut taps);
        for x in 0..out_w {
            let column = |i: usize| horizontal[i * out_w + x];
            out[oy * out_w + x] = apply_taps(column, &taps, reference).clamp(0.0, 1.0);
        }
    }
    ImagePlane::new(out_w, out_h, out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernel_closed_forms() {
        assert_eq!(catmull_rom(0.0), 1.0);
        assert!((catmull_rom(1.0)).abs() < 1e-15);
        assert!((catmull_rom(2.0)).abs() < 1e-15);
        assert!((catmull_rom(1.5) + 0.0625).abs() < 1e-15);
        assert!((catmull_rom(0.5) - 0.5625).abs() < 1e-15);
    }

    #[test]
    fn constant_plane_stays_constant_at_any_size() {
        let plane = ImagePlane::constant(7, 5, 0.37).unwrap();
        for &(w, h) in &[(3usize, 2usize), (7, 5), (14, 11), (1, 1), (20, 3)] {
            let resized = bicubic_resize(&plane, w, h).unwrap();
            assert!(
                resized.samples().iter().all(|&v| v == 0.37),
                "constant not preserved at {w}x{h}"
            );
        }
    }

    #[test]
    fn identity_resize_is_bitwise_exact() {
        let samples: Vec<f64> = (0..48).map(|i| (i as f64 * 0.473).fract()).collect();
        let plane = ImagePlane::new(8, 6, samples).unwrap();
        let resized = bicubic_resize(&plane, 8, 6).unwrap();
        assert!(resized
            .samples()
            .iter()
            .zip(plane.samples())
            .all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn downscale_matches_direct_kernel_oracle() {
        // Direct (non-separable) evaluation of the widened 2-d kernel.
        let samples: Vec<f64> = (0..16).map(|i| i as f64 / 15.0).collect();
        let plane = ImagePlane::new(4, 4, samples).unwrap();
        let got = bicubic_resize(&plane, 2, 2).unwrap();

        let scale = 2.0;
        for oy in 0..2usize {
            for ox in 0..2usize {
                let cx = (ox as f64 + 0.5) * scale - 0.5;
                let cy = (oy as f64 + 0.5) * scale - 0.5;
                let (mut acc, mut total) = (0.0, 0.0);
                for ty in (cy - 4.0).ceil() as isize..=(cy + 4.0).floor() as isize {
                    for tx in (cx - 4.0).ceil() as isize..=(cx + 4.0).floor() as isize {
                        let w = catmull_rom((ty as f64 - cy) / scale)
                            * catmull_rom((tx as f64 - cx) / scale);
                        let sy = ty.clamp(0, 3) as usize;
                        let sx = tx.clamp(0, 3) as usize;
                        acc += w * plane.get(sx, sy);
                        total += w;
                    }
                }
                let want = (acc / total).clamp(0.0, 1.0);
                let diff = (got.get(ox, oy) - want).abs();
                assert!(diff < 1e-6, "pixel ({ox},{oy}): {} vs {want}", got.get(ox, oy));
            }
        }
    }

    #[test]
    fn output_clamped_to_unit_interval() {
        // Sharp step: cubic overshoot must be clamped away.
        let mut samples = vec![0.0; 16];
        samples[12..].fill(1.0);
        let plane = ImagePlane::new(4, 4, samples).unwrap();
        let resized = bicubic_resize(&plane, 9, 9).unwrap();
        assert!(resized.samples().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn rejects_empty_target() {
        let plane = ImagePlane::constant(4, 4, 0.5).unwrap();
        assert!(matches!(bicubic_resize(&plane, 0, 2), Err(Error::Argument(_))));
    }
}
