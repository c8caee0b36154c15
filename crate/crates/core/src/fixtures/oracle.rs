//! Reference arithmetic for expected pictures, written directly from the
//! defining formulas and kept apart from the decoder's own code paths.

/// Zigzag scan: raster index of each serial position, built by walking the
/// anti-diagonals.
pub fn zigzag_order() -> [usize; 64] {
    let mut order = [0; 64];
    let mut n = 0;
    for d in 0..15usize {
        let cells: Vec<(usize, usize)> = (0..=d)
            .filter(|&r| r < 8 && d - r < 8)
            .map(|r| (r, d - r))
            .collect();
        // Even diagonals run bottom-left to top-right.
        let ordered: Vec<_> = if d % 2 == 0 {
            cells.into_iter().rev().collect()
        } else {
            cells
        };
        for (r, c) in ordered {
            order[n] = r * 8 + c;
            n += 1;
        }
    }
    order
}

/// Alternate scan: serial position of each raster cell.
const ALTERNATE_SERIAL: [usize; 64] = [
    0, 4, 6, 20, 22, 36, 38, 52, //
    1, 5, 7, 21, 23, 37, 39, 53, //
    2, 8, 19, 24, 34, 40, 50, 54, //
    3, 9, 18, 25, 35, 41, 51, 55, //
    10, 17, 26, 30, 42, 46, 56, 60, //
    11, 16, 27, 31, 43, 47, 57, 61, //
    12, 15, 28, 32, 44, 48, 58, 62, //
    13, 14, 29, 33, 45, 49, 59, 63,
];

/// Raster index of each serial position for the chosen scan.
pub fn scan_order(alternate: bool) -> [usize; 64] {
    if !alternate {
        return zigzag_order();
    }
    let mut order = [0; 64];
    for (raster, &serial) in ALTERNATE_SERIAL.iter().enumerate() {
        order[serial] = raster;
    }
    order
}

pub const DEFAULT_INTRA_WEIGHTS: [u8; 64] = [
    8, 16, 19, 22, 26, 27, 29, 34, //
    16, 16, 22, 24, 27, 29, 34, 37, //
    19, 22, 26, 27, 29, 34, 34, 38, //
    22, 22, 26, 27, 29, 34, 37, 40, //
    22, 26, 27, 29, 32, 35, 40, 48, //
    26, 27, 29, 32, 35, 40, 48, 58, //
    26, 27, 29, 34, 38, 46, 56, 69, //
    27, 29, 35, 38, 46, 56, 69, 83,
];

pub const DEFAULT_NON_INTRA_WEIGHTS: [u8; 64] = [16; 64];

const NONLINEAR_SCALE: [i32; 32] = [
    0, 1, 2, 3, 4, 5, 6, 7, 8, 10, 12, 14, 16, 18, 20, 22, 24, 28, 32, 36, 40, 44, 48, 52, 56, 64,
    72, 80, 88, 96, 104, 112,
];

pub fn quantiser_scale(code: u8, nonlinear: bool) -> i32 {
    if nonlinear {
        NONLINEAR_SCALE[usize::from(code)]
    } else {
        2 * i32::from(code)
    }
}

/// Inverse quantization of raster-order levels, saturation and mismatch
/// control.
pub fn dequantize(levels: &[i32; 64], intra: bool, weights: &[u8; 64], qscale: i32, dc_precision: u8) -> [i32; 64] {
    let mut f = [0i64; 64];
    for i in 0..64 {
        let q = i64::from(levels[i]);
        f[i] = if intra && i == 0 {
            q * (8 >> (dc_precision - 8))
        } else {
            let k = if intra { 0 } else { q.signum() };
            // Integer division truncating toward zero.
            (2 * q + k) * i64::from(weights[i]) * i64::from(qscale) / 32
        };
        f[i] = f[i].clamp(-2048, 2047);
    }
    if f.iter().sum::<i64>() % 2 == 0 {
        f[63] += if f[63] % 2 == 0 { 1 } else { -1 };
    }
    f.map(|v| v as i32)
}

/// Two-dimensional inverse DCT evaluated directly in double precision,
/// rounded to nearest and clipped to the residual range.
pub fn idct(f: &[i32; 64]) -> [i32; 64] {
    let c = |u: usize| if u == 0 { std::f64::consts::FRAC_1_SQRT_2 } else { 1.0 };
    let pi = std::f64::consts::PI;
    std::array::from_fn(|idx| {
        let (y, x) = (idx / 8, idx % 8);
        let mut s = 0.0;
        for v in 0..8 {
            for u in 0..8 {
                s += c(u)
                    * c(v)
                    * f64::from(f[v * 8 + u])
                    * ((2 * x + 1) as f64 * u as f64 * pi / 16.0).cos()
                    * ((2 * y + 1) as f64 * v as f64 * pi / 16.0).cos();
            }
        }
        ((s / 4.0).round() as i32).clamp(-256, 255)
    })
}

/// A plane, or one field of it, addressed in its own coordinates.
#[derive(Clone, Copy)]
pub struct Samples<'a> {
    pub data: &'a [u8],
    pub width: usize,
    pub height: usize,
    /// Row of the underlying plane holding row 0.
    pub first_row: usize,
    /// Distance between rows in units of plane rows.
    pub row_step: usize,
}

impl Samples<'_> {
    fn at(&self, x: usize, y: usize) -> u32 {
        u32::from(self.data[(self.first_row + y * self.row_step) * self.width + x])
    }

    fn rows(&self) -> usize {
        (self.height - self.first_row).div_ceil(self.row_step)
    }

    /// `w`×`h` samples at (`x0`, `y0`) displaced by a half-sample vector,
    /// or `None` when any sample needed lies outside.
    pub fn predict(&self, x0: usize, y0: usize, w: usize, h: usize, mv: [i32; 2]) -> Option<Vec<u8>> {
        let fx = 2 * x0 as i64 + i64::from(mv[0]);
        let fy = 2 * y0 as i64 + i64::from(mv[1]);
        let (ix, hx) = (fx.div_euclid(2), fx.rem_euclid(2) as usize);
        let (iy, hy) = (fy.div_euclid(2), fy.rem_euclid(2) as usize);
        if ix < 0 || iy < 0 {
            return None;
        }
        let (ix, iy) = (ix as usize, iy as usize);
        if ix + w + hx > self.width || iy + h + hy > self.rows() {
            return None;
        }
        let mut out = Vec::with_capacity(w * h);
        for r in 0..h {
            for c in 0..w {
                let (x, y) = (ix + c, iy + r);
                let v = match (hx, hy) {
                    (0, 0) => self.at(x, y),
                    (1, 0) => (self.at(x, y) + self.at(x + 1, y)).div_ceil(2),
                    (0, 1) => (self.at(x, y) + self.at(x, y + 1)).div_ceil(2),
                    _ => (self.at(x, y) + self.at(x + 1, y) + self.at(x, y + 1) + self.at(x + 1, y + 1) + 2) / 4,
                };
                out.push(v as u8);
            }
        }
        Some(out)
    }
}

/// Chroma vector for a luma vector: each component halved, truncating
/// toward zero.
pub fn chroma_vector(mv: [i32; 2]) -> [i32; 2] {
    [mv[0] / 2, mv[1] / 2]
}
