//! Inverse scan, inverse quantization and the 8×8 inverse DCT.

use std::sync::OnceLock;

use crate::vlc::RunLevel;

/// An 8×8 block of coefficients or samples in raster order (`row * 8 + col`).
pub type Block = [i32; 64];

/// An 8×8 block of reconstructed pixels in raster order.
pub type PixelBlock = [u8; 64];

pub const COEFF_MIN: i32 = -2048;
pub const COEFF_MAX: i32 = 2047;
pub const RESIDUAL_MIN: i32 = -256;
pub const RESIDUAL_MAX: i32 = 255;

fn parse_grid(text: &str) -> Result<Vec<i64>, String> {
    let values: Result<Vec<i64>, _> = text
        .lines()
        .map(|l| l.split('#').next().unwrap_or(""))
        .flat_map(str::split_whitespace)
        .map(str::parse::<i64>)
        .collect();
    values.map_err(|e| e.to_string())
}

/// Permutation from serial (scan) order to raster position.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScanMatrix {
    order: [u8; 64],
}

impl ScanMatrix {
    /// Parses a grid listing the serial index of each raster cell.
    pub fn from_text(text: &str) -> Result<Self, String> {
        let cells = parse_grid(text)?;
        if cells.len() != 64 {
            return Err(format!("scan matrix needs 64 entries, got {}", cells.len()));
        }
        let mut order = [u8::MAX; 64];
        for (raster, &serial) in cells.iter().enumerate() {
            let serial = usize::try_from(serial)
                .ok()
                .filter(|&s| s < 64)
                .ok_or(format!("serial index {serial} out of range"))?;
            if order[serial] != u8::MAX {
                return Err(format!("serial index {serial} appears twice"));
            }
            order[serial] = raster as u8;
        }
        if order[0] != 0 {
            return Err("serial index 0 must map to (0,0)".into());
        }
        Ok(ScanMatrix { order })
    }

    pub fn zigzag() -> &'static ScanMatrix {
        static M: OnceLock<ScanMatrix> = OnceLock::new();
        M.get_or_init(|| {
            ScanMatrix::from_text(include_str!("../tables/scan_zigzag.txt")).expect("zigzag scan")
        })
    }

    pub fn alternate() -> &'static ScanMatrix {
        static M: OnceLock<ScanMatrix> = OnceLock::new();
        M.get_or_init(|| {
            ScanMatrix::from_text(include_str!("../tables/scan_alternate.txt"))
                .expect("alternate scan")
        })
    }

    pub fn for_picture(alternate_scan: bool) -> &'static ScanMatrix {
        if alternate_scan {
            Self::alternate()
        } else {
            Self::zigzag()
        }
    }

    /// Raster index of serial position `serial`.
    pub fn raster_index(&self, serial: usize) -> usize {
        usize::from(self.order[serial])
    }

    /// `(row, col)` of serial position `serial`.
    pub fn position(&self, serial: usize) -> (usize, usize) {
        let r = self.raster_index(serial);
        (r / 8, r % 8)
    }
}

/// 8×8 quantiser weighting matrix in raster order, weights 1..=255.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QuantMatrix(pub [u8; 64]);

impl QuantMatrix {
    pub fn default_intra() -> QuantMatrix {
        static M: OnceLock<QuantMatrix> = OnceLock::new();
        *M.get_or_init(|| {
            let cells = parse_grid(include_str!("../tables/default_intra_matrix.txt"))
                .expect("default intra matrix");
            let mut m = [0u8; 64];
            for (dst, v) in m.iter_mut().zip(cells) {
                *dst = v as u8;
            }
            QuantMatrix(m)
        })
    }

    pub fn default_non_intra() -> QuantMatrix {
        QuantMatrix([16; 64])
    }

    /// Builds a matrix from weights transmitted in zigzag order.
    pub fn from_zigzag(weights: &[u8; 64]) -> QuantMatrix {
        let scan = ScanMatrix::zigzag();
        let mut m = [0u8; 64];
        for (serial, &w) in weights.iter().enumerate() {
            m[scan.raster_index(serial)] = w;
        }
        QuantMatrix(m)
    }

    /// The weights in zigzag transmission order.
    pub fn to_zigzag(&self) -> [u8; 64] {
        let scan = ScanMatrix::zigzag();
        std::array::from_fn(|serial| self.0[scan.raster_index(serial)])
    }
}

/// Places run-level pairs at their scan positions; untouched cells are zero.
pub fn inverse_scan(run_levels: &[RunLevel], scan: &ScanMatrix) -> Block {
    let mut block = [0; 64];
    let mut pos = 0usize;
    for rl in run_levels {
        pos += usize::from(rl.run);
        if pos >= 64 {
            debug_assert!(false, "run-level list overflows the block");
            break;
        }
        block[scan.raster_index(pos)] = rl.level;
        pos += 1;
    }
    block
}

/// Step applied to the intra DC coefficient for precisions 8..=11.
pub fn intra_dc_multiplier(intra_dc_precision: u8) -> i32 {
    match intra_dc_precision {
        8 => 8,
        9 => 4,
        10 => 2,
        11 => 1,
        p => panic!("intra_dc_precision {p} outside 8..=11"),
    }
}

/// Parameters for dequantizing one block.
#[derive(Debug, Clone, Copy)]
pub struct QuantParams<'a> {
    pub intra: bool,
    pub weights: &'a QuantMatrix,
    pub quantiser_scale: i32,
    pub intra_dc_precision: u8,
}

/// Dequantized block plus the largest correction made by saturation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dequantized {
    pub block: Block,
    pub saturation_error: u32,
}

fn div_toward_zero(num: i64, den: i64) -> i64 {
    let q = num.abs() / den;
    if num < 0 {
        -q
    } else {
        q
    }
}

/// Reconstructs coefficients, then saturates and applies mismatch control.
pub fn inverse_quantize(quantized: &Block, params: &QuantParams<'_>) -> Dequantized {
    let mut out = [0i32; 64];
    let mut saturation_error = 0u32;
    let qs = i64::from(params.quantiser_scale);
    for (i, (&qf, dst)) in quantized.iter().zip(out.iter_mut()).enumerate() {
        let value = if params.intra && i == 0 {
            i64::from(qf) * i64::from(intra_dc_multiplier(params.intra_dc_precision))
        } else {
            let qf = i64::from(qf);
            let k = if params.intra { 0 } else { qf.signum() };
            div_toward_zero((2 * qf + k) * i64::from(params.weights.0[i]) * qs, 32)
        };
        let clamped = value.clamp(i64::from(COEFF_MIN), i64::from(COEFF_MAX));
        saturation_error = saturation_error.max((value - clamped).unsigned_abs() as u32);
        *dst = clamped as i32;
    }
    mismatch_control(&mut out);
    Dequantized {
        block: out,
        saturation_error,
    }
}

/// Makes the coefficient sum odd by toggling the LSB of the last coefficient.
pub fn mismatch_control(block: &mut Block) {
    let sum: i64 = block.iter().map(|&v| i64::from(v)).sum();
    if sum & 1 == 0 {
        block[63] ^= 1;
    }
}

/// `c(u)/2 · cos((2x+1)uπ/16)`, indexed `[u][x]`.
fn idct_basis() -> &'static [[f64; 8]; 8] {
    static BASIS: OnceLock<[[f64; 8]; 8]> = OnceLock::new();
    BASIS.get_or_init(|| {
        let mut m = [[0.0; 8]; 8];
        for (u, row) in m.iter_mut().enumerate() {
            let c = if u == 0 {
                std::f64::consts::FRAC_1_SQRT_2
            } else {
                1.0
            };
            for (x, v) in row.iter_mut().enumerate() {
                *v = c / 2.0
                    * ((2 * x + 1) as f64 * u as f64 * std::f64::consts::PI / 16.0).cos();
            }
        }
        m
    })
}

/// Spatial residual plus the largest correction made by clipping.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Spatial {
    pub block: Block,
    pub clip_error: u32,
}

/// Separable inverse DCT: a row pass then a column pass, rounded to the
/// nearest integer and saturated to [-256, 255].
pub fn idct_8x8(block: &Block) -> Spatial {
    let basis = idct_basis();
    let mut rows = [[0.0f64; 8]; 8];
    for r in 0..8 {
        let coeffs = &block[r * 8..r * 8 + 8];
        if coeffs.iter().all(|&c| c == 0) {
            continue;
        }
        for (x, out) in rows[r].iter_mut().enumerate() {
            *out = coeffs
                .iter()
                .enumerate()
                .map(|(u, &c)| basis[u][x] * f64::from(c))
                .sum();
        }
    }
    let mut out = [0i32; 64];
    let mut clip_error = 0u32;
    for x in 0..8 {
        for y in 0..8 {
            let v: f64 = (0..8).map(|v| basis[v][y] * rows[v][x]).sum();
            let rounded = v.round() as i32;
            let clipped = rounded.clamp(RESIDUAL_MIN, RESIDUAL_MAX);
            clip_error = clip_error.max((rounded - clipped).unsigned_abs());
            out[y * 8 + x] = clipped;
        }
    }
    Spatial {
        block: out,
        clip_error,
    }
}

/// Adds the residual to the prediction (or uses it alone for intra blocks)
/// and clamps to 0..=255.
pub fn reconstruct_block(spatial: &Block, prediction: Option<&PixelBlock>) -> PixelBlock {
    std::array::from_fn(|i| {
        let base = prediction.map_or(0, |p| i32::from(p[i]));
        (base + spatial[i]).clamp(0, 255) as u8
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Direct (non-separable) double-precision evaluation of the 2-D IDCT.
    fn direct_idct(block: &Block) -> [f64; 64] {
        let c = |u: usize| if u == 0 { 0.5f64.sqrt() } else { 1.0 };
        let pi = std::f64::consts::PI;
        std::array::from_fn(|idx| {
            let (i, j) = (idx / 8, idx % 8);
            let mut s = 0.0;
            for x in 0..8 {
                for y in 0..8 {
                    s += c(x) * c(y) / 4.0
                        * (((2 * i + 1) * x) as f64 * pi / 16.0).cos()
                        * (((2 * j + 1) * y) as f64 * pi / 16.0).cos()
                        * f64::from(block[x * 8 + y]);
                }
            }
            s
        })
    }

    fn oracle_pixels(block: &Block) -> Block {
        direct_idct(block).map(|v| (v.round() as i32).clamp(RESIDUAL_MIN, RESIDUAL_MAX))
    }

    fn intra_params(w: &QuantMatrix, qs: i32) -> QuantParams<'_> {
        QuantParams {
            intra: true,
            weights: w,
            quantiser_scale: qs,
            intra_dc_precision: 8,
        }
    }

    #[test]
    fn scans_are_bijections_with_known_second_entries() {
        for scan in [ScanMatrix::zigzag(), ScanMatrix::alternate()] {
            let mut hits = [0u8; 64];
            for serial in 0..64 {
                let b = inverse_scan(&[RunLevel::new(serial as u8, 1)], scan);
                assert_eq!(b.iter().filter(|&&v| v != 0).count(), 1);
                hits[b.iter().position(|&v| v != 0).unwrap()] += 1;
            }
            assert!(hits.iter().all(|&h| h == 1));
            assert_eq!(scan.position(0), (0, 0));
        }
        assert_eq!(ScanMatrix::zigzag().position(1), (0, 1));
        assert_eq!(ScanMatrix::alternate().position(1), (1, 0));
        assert_eq!(ScanMatrix::zigzag().position(63), (7, 7));
    }

    #[test]
    fn scan_text_rejects_duplicates() {
        let mut text: String = (0..64).map(|i| format!("{i} ")).collect();
        assert!(ScanMatrix::from_text(&text).is_ok());
        text = text.replacen("5 ", "4 ", 1);
        assert!(ScanMatrix::from_text(&text).is_err());
    }

    #[test]
    fn inverse_scan_basics() {
        let z = ScanMatrix::zigzag();
        assert_eq!(inverse_scan(&[], z), [0; 64]);
        let b = inverse_scan(&[RunLevel::new(0, -7)], ScanMatrix::alternate());
        assert_eq!(b[0], -7);
        assert_eq!(b.iter().filter(|&&v| v != 0).count(), 1);
        // run 2, level 5: serial position 2 = (1,0) in zigzag.
        let b = inverse_scan(&[RunLevel::new(2, 5)], z);
        assert_eq!(b[8], 5);
    }

    #[test]
    fn default_matrix_matches_transcription() {
        let m = QuantMatrix::default_intra();
        assert_eq!(m.0[0], 8);
        assert_eq!(m.0[1], 16);
        assert_eq!(m.0[63], 83);
        assert_eq!(m.0[7 * 8], 27);
        let zz = m.to_zigzag();
        assert_eq!(QuantMatrix::from_zigzag(&zz), m);
    }

    #[test]
    fn intra_dc_uses_precision_step() {
        let w = QuantMatrix::default_intra();
        let mut qf = [0; 64];
        qf[0] = 25;
        let out = inverse_quantize(&qf, &intra_params(&w, 2));
        assert_eq!(out.block[0], 200);
        for (prec, step) in [(9u8, 4), (10, 2), (11, 1)] {
            let p = QuantParams {
                intra_dc_precision: prec,
                ..intra_params(&w, 2)
            };
            assert_eq!(inverse_quantize(&qf, &p).block[0], 25 * step);
        }
    }

    #[test]
    fn non_intra_formula_and_zero() {
        let w = QuantMatrix::default_non_intra();
        let p = QuantParams {
            intra: false,
            weights: &w,
            quantiser_scale: 2,
            intra_dc_precision: 8,
        };
        let mut qf = [0; 64];
        qf[5] = 1;
        let out = inverse_quantize(&qf, &p);
        assert_eq!(out.block[5], 3);
        qf[5] = -1;
        assert_eq!(inverse_quantize(&qf, &p).block[5], -3);
        let zero = inverse_quantize(&[0; 64], &p);
        assert!(zero.block[..63].iter().all(|&v| v == 0));
    }

    #[test]
    fn saturation_and_reported_error() {
        let w = QuantMatrix([255; 64]);
        let p = QuantParams {
            intra: false,
            weights: &w,
            quantiser_scale: 112,
            intra_dc_precision: 8,
        };
        let mut qf = [0; 64];
        qf[3] = 2;
        // (2*2+1)*255*112/32 = 4462
        let out = inverse_quantize(&qf, &p);
        assert_eq!(out.block[3], 2047);
        assert_eq!(out.saturation_error, 4462 - 2047);
        qf[3] = -2;
        assert_eq!(inverse_quantize(&qf, &p).block[3], -2048);
    }

    #[test]
    fn mismatch_control_cases() {
        let mut b = [0; 64];
        mismatch_control(&mut b);
        assert_eq!(b[63], 1);

        let mut b = [0; 64];
        b[0] = 3;
        let before = b;
        mismatch_control(&mut b);
        assert_eq!(b, before);

        let mut b = [0; 64];
        b[63] = 5;
        b[1] = 1;
        mismatch_control(&mut b);
        assert_eq!(b[63], 4);

        let mut b = [0; 64];
        b[63] = -3;
        b[0] = 1;
        mismatch_control(&mut b);
        assert_eq!(b[63], -4);
    }

    #[test]
    fn idct_known_blocks() {
        assert_eq!(idct_8x8(&[0; 64]).block, [0; 64]);
        let mut b = [0; 64];
        b[0] = 8;
        assert_eq!(idct_8x8(&b).block, [1; 64]);
        b[0] = 2047;
        let out = idct_8x8(&b);
        assert!(out.block.iter().all(|&v| v == 255));
        assert_eq!(out.clip_error, 256 - 255);
    }

    #[test]
    fn idct_basis_blocks_within_one_of_oracle() {
        for pos in 0..64 {
            for level in [1, -1, 100, -100, 2047, -2048] {
                let mut b = [0; 64];
                b[pos] = level;
                // Exact half-way values may round either way in the
                // separable evaluation.
                let got = idct_8x8(&b).block;
                let want = oracle_pixels(&b);
                for i in 0..64 {
                    assert!((got[i] - want[i]).abs() <= 1, "pos {pos} level {level} at {i}");
                }
            }
        }
    }

    #[test]
    fn idct_random_within_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..500 {
            let b: Block = std::array::from_fn(|_| rng.random_range(-300..=300));
            let got = idct_8x8(&b).block;
            let want = oracle_pixels(&b);
            for i in 0..64 {
                assert!((got[i] - want[i]).abs() <= 1);
            }
        }
    }

    #[test]
    fn reconstruct_clamps() {
        assert_eq!(reconstruct_block(&[0; 64], Some(&[128; 64])), [128; 64]);
        assert_eq!(reconstruct_block(&[20; 64], Some(&[250; 64])), [255; 64]);
        assert_eq!(reconstruct_block(&[-5; 64], None), [0; 64]);
    }

    proptest! {
        #[test]
        fn mismatch_post_sum_is_odd(vals in proptest::collection::vec(-2048i32..=2047, 64)) {
            let mut b: Block = vals.try_into().unwrap();
            let odd_before = b.iter().map(|&v| i64::from(v)).sum::<i64>() & 1 == 1;
            let before = b;
            mismatch_control(&mut b);
            prop_assert_eq!(b.iter().map(|&v| i64::from(v)).sum::<i64>() & 1, 1);
            let changed = before.iter().zip(&b).filter(|(a, c)| a != c).count();
            prop_assert_eq!(changed, if odd_before { 0 } else { 1 });
        }

        #[test]
        fn idct_linear_within_rounding(a in proptest::collection::vec(-500i32..=500, 64),
                                       b in proptest::collection::vec(-500i32..=500, 64)) {
            let a: Block = a.try_into().unwrap();
            let b: Block = b.try_into().unwrap();
            let sum: Block = std::array::from_fn(|i| a[i] + b[i]);
            let da = direct_idct(&a);
            let db = direct_idct(&b);
            let ds = direct_idct(&sum);
            let is = idct_8x8(&sum).block;
            for i in 0..64 {
                prop_assert!((ds[i] - da[i] - db[i]).abs() < 1e-6);
                let unclipped = (ds[i].round() as i32).clamp(RESIDUAL_MIN, RESIDUAL_MAX);
                prop_assert!((is[i] - unclipped).abs() <= 1);
            }
        }
    }
}
