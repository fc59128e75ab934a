//! Block-based compressed sampling and the linear initial reconstruction.
//!
//! An image is measured by a strided convolution whose `B x B` filters play
//! the role of the rows of a per-block measurement matrix. Reconstruction
//! starts from a 1x1 convolution that lifts each measurement vector to a
//! downscaled block, assembled spatially by [`reshape_concat`].

use std::fs;
use std::io::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{kernels, Scalar, Tensor};

/// Derived sampling geometry for one ratio/block-size choice.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplingConfig {
    /// Block edge in pixels.
    pub block_size: usize,
    /// Measurements per pixel, in (0, 0.25).
    pub ratio: f64,
    /// Measurements per block: `floor(ratio * B^2)`.
    pub measurements_per_block: usize,
    /// Power-of-two downscale of the initial reconstruction.
    pub scale_factor: usize,
    /// Pyramid depth: `log2(scale_factor)`.
    pub levels: usize,
}

/// Default block edge.
pub const DEFAULT_BLOCK_SIZE: usize = 32;

/// Measurements per block for a sampling ratio: `floor(ratio * B^2)`,
/// which must be at least 1.
pub fn measurement_count(ratio: f64, block_size: usize) -> Result<usize> {
    if !(0.0..1.0).contains(&ratio) || ratio == 0.0 {
        return Err(Error::Argument(format!("sampling ratio {ratio} must lie in (0, 1)")));
    }
    if block_size == 0 {
        return Err(Error::Argument("block size must be at least 1".into()));
    }
    let n = (ratio * (block_size * block_size) as f64).floor() as usize;
    if n == 0 {
        return Err(Error::Config(format!(
            "ratio {ratio} yields zero measurements for block size {block_size}"
        )));
    }
    Ok(n)
}

/// Largest power-of-two scale factor `s` with `1/s^2 > ratio`, i.e. the
/// deepest downscale whose block still has more pixels than measurements.
/// Ratios of 0.25 and above admit no factor and are unsupported.
pub fn select_scale_factor(ratio: f64) -> Result<usize> {
    if !(0.0..=1.0).contains(&ratio) || ratio == 0.0 {
        return Err(Error::Argument(format!("sampling ratio {ratio} must lie in (0, 1]")));
    }
    let mut best = None;
    let mut s = 2usize;
    while 1.0 / ((s * s) as f64) > ratio {
        best = Some(s);
        s *= 2;
    }
    best.ok_or(Error::UnsupportedRatio(ratio))
}

impl SamplingConfig {
    /// Derive the full configuration from a ratio, with scale factor and
    /// measurement count computed as above.
    pub fn for_ratio(ratio: f64, block_size: usize) -> Result<Self> {
        let scale_factor = select_scale_factor(ratio)?;
        let measurements_per_block = measurement_count(ratio, block_size)?;
        Self::explicit(block_size, ratio, measurements_per_block, scale_factor)
    }

    /// Configuration with every field pinned by the caller (small test
    /// geometries override the derived scale factor).
    pub fn explicit(
        block_size: usize,
        ratio: f64,
        measurements_per_block: usize,
        scale_factor: usize,
    ) -> Result<Self> {
        if measurements_per_block == 0 {
            return Err(Error::Config("measurements per block must be at least 1".into()));
        }
        if scale_factor < 2 || !scale_factor.is_power_of_two() {
            return Err(Error::Config(format!(
                "scale factor {scale_factor} must be a power of two and at least 2"
            )));
        }
        if block_size == 0 || block_size % scale_factor != 0 {
            return Err(Error::Config(format!(
                "block size {block_size} must be divisible by scale factor {scale_factor}"
            )));
        }
        Ok(SamplingConfig {
            block_size,
            ratio,
            measurements_per_block,
            scale_factor,
            levels: scale_factor.trailing_zeros() as usize,
        })
    }

    /// Edge of the initially reconstructed block, `B / S`.
    pub fn reduced_block(&self) -> usize {
        self.block_size / self.scale_factor
    }
}

/// Project every `B x B` block of `image` (`[N, 1, H, W]`, `H` and `W`
/// multiples of `B`) to a measurement vector with the given filters
/// (`[n_B, 1, B, B]`): a strided convolution with no bias and no
/// activation. Returns `[N, n_B, H/B, W/B]`.
pub fn sample<T: Scalar>(image: &Tensor<T>, sampling_weight: &Tensor<T>) -> Result<Tensor<T>> {
    let &[_, channels, h, w] = image.dims() else {
        return Err(Error::Shape(format!("sample expects [N,1,H,W], got {:?}", image.dims())));
    };
    let block = sampling_weight
        .dims()
        .get(2)
        .copied()
        .ok_or_else(|| Error::Shape("sampling weight must be 4-d".into()))?;
    if channels != 1 {
        return Err(Error::Shape(format!("sample expects a single channel, got {channels}")));
    }
    if h % block != 0 || w % block != 0 {
        return Err(Error::Shape(format!(
            "image {h}x{w} is not divisible into {block}x{block} blocks"
        )));
    }
    let shape = kernels::ConvShape::resolve(image.dims(), sampling_weight.dims(), block, 0)?;
    let out = kernels::conv2d_forward(image.values(), sampling_weight.values(), None, &shape);
    Tensor::from_vec(&shape.output_dims(), out)
}

/// Linear per-block estimate: a 1x1 convolution lifts each `n_B`
/// measurement vector to `(B/S)^2` values, then [`reshape_concat`]
/// assembles the blocks into `[N, 1, gh*B/S, gw*B/S]`.
pub fn initial_reconstruct<T: Scalar>(
    measurements: &Tensor<T>,
    recon_weight: &Tensor<T>,
    recon_bias: &Tensor<T>,
) -> Result<Tensor<T>> {
    let shape = kernels::ConvShape::resolve(measurements.dims(), recon_weight.dims(), 1, 0)?;
    if recon_bias.dims() != [shape.out_channels] {
        return Err(Error::Shape(format!(
            "reconstruction bias must be [{}], got {:?}",
            shape.out_channels,
            recon_bias.dims()
        )));
    }
    let lifted = kernels::conv2d_forward(
        measurements.values(),
        recon_weight.values(),
        Some(recon_bias.values()),
        &shape,
    );
    reshape_concat(&Tensor::from_vec(&shape.output_dims(), lifted)?)
}

/// Rearrange `[N, k^2, gh, gw]` into `[N, 1, gh*k, gw*k]`; channel `c` of
/// grid cell `(u, v)` maps to pixel `(u*k + c/k, v*k + c%k)`. An exact
/// permutation of the values.
pub fn reshape_concat<T: Scalar>(channels: &Tensor<T>) -> Result<Tensor<T>> {
    let &[batch, c, gh, gw] = channels.dims() else {
        return Err(Error::Shape(format!(
            "reshape_concat expects [N,C,gh,gw], got {:?}",
            channels.dims()
        )));
    };
    let k = (c as f64).sqrt().round() as usize;
    if k * k != c {
        return Err(Error::Shape(format!("channel count {c} is not a perfect square")));
    }
    let out = kernels::block_merge(channels.values(), batch, k, gh, gw);
    Tensor::from_vec(&[batch, 1, gh * k, gw * k], out)
}

/// Inverse of [`reshape_concat`] for block edge `k`.
pub fn reshape_split<T: Scalar>(image: &Tensor<T>, k: usize) -> Result<Tensor<T>> {
    let &[batch, c, h, w] = image.dims() else {
        return Err(Error::Shape(format!("reshape_split expects [N,1,H,W], got {:?}", image.dims())));
    };
    if c != 1 || k == 0 || h % k != 0 || w % k != 0 {
        return Err(Error::Shape(format!(
            "reshape_split expects [N,1,H,W] with H,W divisible by {k}, got {:?}",
            image.dims()
        )));
    }
    let out = kernels::block_split(image.values(), batch, k, h / k, w / k);
    Tensor::from_vec(&[batch, k * k, h / k, w / k], out)
}

/// Per-block measurement vectors of one image, in the on-disk layout:
/// block-row-major with the measurement channel fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementGrid {
    pub block_size: usize,
    pub measurements_per_block: usize,
    pub grid_h: usize,
    pub grid_w: usize,
    /// Dimensions of the source image before cropping to block multiples.
    pub orig_h: usize,
    pub orig_w: usize,
    data: Vec<f32>,
}

const LPM_MAGIC: &[u8; 4] = b"LPM1";
const LPM_VERSION: u32 = 1;

impl MeasurementGrid {
    /// Grid from a `[1, n_B, gh, gw]` measurement tensor.
    pub fn from_tensor(
        measurements: &Tensor<f32>,
        block_size: usize,
        orig_h: usize,
        orig_w: usize,
    ) -> Result<Self> {
        let &[1, n_b, gh, gw] = measurements.dims() else {
            return Err(Error::Shape(format!(
                "expected a [1,n_B,gh,gw] measurement tensor, got {:?}",
                measurements.dims()
            )));
        };
        let mut data = vec![0.0f32; gh * gw * n_b];
        let values = measurements.values();
        for u in 0..gh {
            for v in 0..gw {
                for c in 0..n_b {
                    data[(u * gw + v) * n_b + c] = values[(c * gh + u) * gw + v];
                }
            }
        }
        Ok(MeasurementGrid {
            block_size,
            measurements_per_block: n_b,
            grid_h: gh,
            grid_w: gw,
            orig_h,
            orig_w,
            data,
        })
    }

    /// `[1, n_B, gh, gw]` tensor of the stored measurements.
    pub fn to_tensor(&self) -> Tensor<f32> {
        let (gh, gw, n_b) = (self.grid_h, self.grid_w, self.measurements_per_block);
        let mut values = vec![0.0f32; n_b * gh * gw];
        for u in 0..gh {
            for v in 0..gw {
                for c in 0..n_b {
                    values[(c * gh + u) * gw + v] = self.data[(u * gw + v) * n_b + c];
                }
            }
        }
        Tensor::from_vec(&[1, n_b, gh, gw], values).expect("sizes agree")
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    /// Serialize as an `.lpm` blob: magic `LPM1`, seven little-endian u32
    /// header fields, then the measurements as little-endian f32.
    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = Vec::with_capacity(32 + 4 * self.data.len());
        out.extend_from_slice(LPM_MAGIC);
        for field in [
            LPM_VERSION,
            self.block_size as u32,
            self.measurements_per_block as u32,
            self.grid_h as u32,
            self.grid_w as u32,
            self.orig_h as u32,
            self.orig_w as u32,
        ] {
            out.extend_from_slice(&field.to_le_bytes());
        }
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        file.write_all(&out).map_err(|e| Error::io(path, e))
    }

    /// Parse an `.lpm` blob, validating magic, version and payload length.
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        if bytes.len() < 32 {
            return Err(Error::format(path, "file shorter than the 32-byte header"));
        }
        if &bytes[0..4] != LPM_MAGIC {
            return Err(Error::format(path, "bad magic (expected LPM1)"));
        }
        let field = |i: usize| {
            u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().expect("4 bytes")) as usize
        };
        if field(0) != LPM_VERSION as usize {
            return Err(Error::format(path, format!("unsupported version {}", field(0))));
        }
        let (block_size, n_b, gh, gw) = (field(1), field(2), field(3), field(4));
        let (orig_h, orig_w) = (field(5), field(6));
        let count = gh * gw * n_b;
        if bytes.len() != 32 + 4 * count {
            return Err(Error::format(
                path,
                format!("payload holds {} bytes, header implies {}", bytes.len() - 32, 4 * count),
            ));
        }
        let data = bytes[32..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        Ok(MeasurementGrid {
            block_size,
            measurements_per_block: n_b,
            grid_h: gh,
            grid_w: gw,
            orig_h,
            orig_w,
            data,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{gaussian_init, seeded_rng};

    #[test]
    fn measurement_counts_for_paper_ratios() {
        assert_eq!(measurement_count(0.1, 32).unwrap(), 102);
        assert_eq!(measurement_count(0.01, 32).unwrap(), 10);
        assert_eq!(measurement_count(0.02, 32).unwrap(), 20);
        assert!(matches!(measurement_count(0.0005, 32), Err(Error::Config(_))));
        assert!(matches!(measurement_count(1.5, 32), Err(Error::Argument(_))));
    }

    #[test]
    fn scale_factor_for_supported_ratios() {
        assert_eq!(select_scale_factor(0.01).unwrap(), 8);
        assert_eq!(select_scale_factor(0.02).unwrap(), 4);
        assert_eq!(select_scale_factor(0.1).unwrap(), 2);
        assert!(matches!(select_scale_factor(0.3), Err(Error::UnsupportedRatio(_))));
        assert!(matches!(select_scale_factor(0.25), Err(Error::UnsupportedRatio(_))));
    }

    #[test]
    fn scale_factor_is_maximal() {
        for ratio in [0.005, 0.01, 0.02, 0.05, 0.1, 0.2, 0.24] {
            let s = select_scale_factor(ratio).unwrap() as f64;
            assert!(1.0 / (s * s) > ratio);
            assert!(1.0 / (4.0 * s * s) <= ratio);
        }
    }

    #[test]
    fn reduced_block_exceeds_measurement_count() {
        // More pixels in the downscaled block than measurements, for every
        // supported ratio at the default block size.
        let mut ratio = 0.001;
        while ratio < 0.25 {
            if let Ok(cfg) = SamplingConfig::for_ratio(ratio, DEFAULT_BLOCK_SIZE) {
                let pixels = cfg.reduced_block() * cfg.reduced_block();
                assert!(
                    pixels > cfg.measurements_per_block,
                    "ratio {ratio}: {pixels} <= {}",
                    cfg.measurements_per_block
                );
            }
            ratio += 0.001;
        }
    }

    #[test]
    fn sample_matches_per_block_matrix_product() {
        let mut rng = seeded_rng(23);
        let b = 32;
        let n_b = 10;
        let weight: Tensor<f64> = gaussian_init(&[n_b, 1, b, b], 1.0 / b as f64, &mut rng);
        let image: Tensor<f64> = gaussian_init(&[1, 1, b, b], 0.3, &mut rng);
        let meas = sample(&image, &weight).unwrap();
        assert_eq!(meas.dims(), &[1, n_b, 1, 1]);

        // Rows of the measurement matrix are the flattened filters.
        for row in 0..n_b {
            let phi_row = &weight.values()[row * b * b..(row + 1) * b * b];
            let dot: f64 = phi_row.iter().zip(image.values()).map(|(p, x)| p * x).sum();
            assert!((meas.values()[row] - dot).abs() < 1e-12, "row {row}");
        }
    }

    #[test]
    fn identical_blocks_give_identical_measurements() {
        let mut rng = seeded_rng(29);
        let b = 8;
        let weight: Tensor<f64> = gaussian_init(&[3, 1, b, b], 0.125, &mut rng);
        let block: Vec<f64> = (0..b * b).map(|i| (i as f64 * 0.11).sin()).collect();
        let mut image = vec![0.0; b * 2 * b];
        for y in 0..b {
            image[y * 2 * b..y * 2 * b + b].copy_from_slice(&block[y * b..(y + 1) * b]);
            image[y * 2 * b + b..y * 2 * b + 2 * b].copy_from_slice(&block[y * b..(y + 1) * b]);
        }
        let image = Tensor::from_vec(&[1, 1, b, 2 * b], image).unwrap();
        let meas = sample(&image, &weight).unwrap();
        assert_eq!(meas.dims(), &[1, 3, 1, 2]);
        for c in 0..3 {
            let left = meas.values()[c * 2];
            let right = meas.values()[c * 2 + 1];
            assert_eq!(left.to_bits(), right.to_bits());
        }
    }

    #[test]
    fn sample_rejects_indivisible_dims() {
        let weight: Tensor<f32> = Tensor::zeros(&[4, 1, 8, 8]);
        let image: Tensor<f32> = Tensor::zeros(&[1, 1, 12, 16]);
        assert!(matches!(sample(&image, &weight), Err(Error::Shape(_))));
    }

    #[test]
    fn initial_reconstruct_matches_per_block_matrix_product() {
        let mut rng = seeded_rng(31);
        let (n_b, k) = (10, 4);
        let weight: Tensor<f64> = gaussian_init(&[k * k, n_b, 1, 1], 0.2, &mut rng);
        let bias: Tensor<f64> = gaussian_init(&[k * k], 0.1, &mut rng);
        let meas: Tensor<f64> = gaussian_init(&[1, n_b, 1, 1], 1.0, &mut rng);
        let out = initial_reconstruct(&meas, &weight, &bias).unwrap();
        assert_eq!(out.dims(), &[1, 1, k, k]);

        for c in 0..k * k {
            let row = &weight.values()[c * n_b..(c + 1) * n_b];
            let want: f64 = row.iter().zip(meas.values()).map(|(w, y)| w * y).sum::<f64>()
                + bias.values()[c];
            let got = out.values()[(c / k) * k + c % k];
            assert!((got - want).abs() < 1e-12, "pixel {c}");
        }
    }

    #[test]
    fn reshape_concat_k1_is_identity() {
        let t = Tensor::from_vec(&[2, 1, 3, 3], (0..18).map(|i| i as f32).collect()).unwrap();
        let merged = reshape_concat(&t).unwrap();
        assert_eq!(merged.dims(), &[2, 1, 3, 3]);
        assert_eq!(merged.values(), t.values());
    }

    #[test]
    fn reshape_concat_2x2_single_cell() {
        let t = Tensor::from_vec(&[1, 4, 1, 1], vec![1.0f32, 2.0, 3.0, 4.0]).unwrap();
        let merged = reshape_concat(&t).unwrap();
        assert_eq!(merged.dims(), &[1, 1, 2, 2]);
        assert_eq!(merged.values(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn reshape_concat_rejects_non_square_channels() {
        let t: Tensor<f32> = Tensor::zeros(&[1, 3, 2, 2]);
        assert!(matches!(reshape_concat(&t), Err(Error::Shape(_))));
    }

    #[test]
    fn measurement_grid_roundtrips_through_lpm() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.lpm");
        let values: Vec<f32> = (0..5 * 2 * 3).map(|i| i as f32 * 0.25 - 1.0).collect();
        let t = Tensor::from_vec(&[1, 5, 2, 3], values).unwrap();
        let grid = MeasurementGrid::from_tensor(&t, 32, 70, 100).unwrap();
        grid.write(&path).unwrap();

        let expected = 32 + 4 * 2 * 3 * 5;
        assert_eq!(std::fs::metadata(&path).unwrap().len(), expected as u64);

        let back = MeasurementGrid::read(&path).unwrap();
        assert_eq!(back, grid);
        let t2 = back.to_tensor();
        assert_eq!(t2.dims(), t.dims());
        assert!(t2.values().iter().zip(t.values()).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn lpm_rejects_bad_magic_and_truncation() {
        let dir = tempfile::tempdir().unwrap();
        let bad = dir.path().join("bad.lpm");
        std::fs::write(&bad, b"NOPE").unwrap();
        assert!(matches!(MeasurementGrid::read(&bad), Err(Error::Format { .. })));

        let t = Tensor::from_vec(&[1, 2, 1, 1], vec![1.0f32, 2.0]).unwrap();
        let grid = MeasurementGrid::from_tensor(&t, 32, 32, 32).unwrap();
        let trunc = dir.path().join("trunc.lpm");
        grid.write(&trunc).unwrap();
        let bytes = std::fs::read(&trunc).unwrap();
        std::fs::write(&trunc, &bytes[..bytes.len() - 2]).unwrap();
        assert!(matches!(MeasurementGrid::read(&trunc), Err(Error::Format { .. })));
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]

            #[test]
            fn reshape_concat_preserves_value_multiset(
                k in 1usize..4,
                gh in 1usize..4,
                gw in 1usize..4,
                seed in 0u64..1000,
            ) {
                let mut rng = seeded_rng(seed);
                let t: Tensor<f32> = gaussian_init(&[1, k * k, gh, gw], 1.0, &mut rng);
                let merged = reshape_concat(&t).unwrap();
                let mut a: Vec<u32> = t.values().iter().map(|v| v.to_bits()).collect();
                let mut b: Vec<u32> = merged.values().iter().map(|v| v.to_bits()).collect();
                a.sort_unstable();
                b.sort_unstable();
                prop_assert_eq!(a, b);
            }

            #[test]
            fn reshape_split_inverts_concat(
                k in 1usize..4,
                gh in 1usize..4,
                gw in 1usize..4,
                seed in 0u64..1000,
            ) {
                let mut rng = seeded_rng(seed);
                let t: Tensor<f32> = gaussian_init(&[2, k * k, gh, gw], 1.0, &mut rng);
                let back = reshape_split(&reshape_concat(&t).unwrap(), k).unwrap();
                prop_assert_eq!(back.dims(), t.dims());
                prop_assert!(back
                    .values()
                    .iter()
                    .zip(t.values())
                    .all(|(a, b)| a.to_bits() == b.to_bits()));
            }
        }
    }
}
