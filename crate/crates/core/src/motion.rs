//! Motion-vector decoding, motion-compensated prediction, and
//! boundary-matching vector selection for concealment.

use std::sync::Arc;

use serde::Serialize;

use crate::bitio::BitCursor;
use crate::error::{Error, Result};
use crate::framestore::{FramePicture, PlaneView, ReferencePair};
use crate::headers::{PictureInfo, PictureType};
use crate::vlc::{decode_symbol, tables, Symbol};

/// A motion vector in half-sample units. In field prediction the vertical
/// component counts field lines.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize)]
pub struct MotionVector {
    pub x: i32,
    pub y: i32,
}

impl MotionVector {
    pub const ZERO: MotionVector = MotionVector { x: 0, y: 0 };

    pub fn new(x: i32, y: i32) -> Self {
        MotionVector { x, y }
    }

    /// The 4:2:0 chroma vector: each component halved, truncating toward zero.
    pub fn chroma(self) -> MotionVector {
        MotionVector::new(self.x / 2, self.y / 2)
    }
}

/// Inclusive range of a vector component for `f_code`.
pub fn vector_range(f_code: u8) -> (i32, i32) {
    let f = 1i32 << (f_code - 1);
    (-16 * f, 16 * f - 1)
}

/// Brings `v` back into the `f_code` range by adding or subtracting the
/// range span.
pub fn wrap_component(v: i32, f_code: u8) -> i32 {
    let (low, high) = vector_range(f_code);
    let span = high - low + 1;
    if v < low {
        v + span
    } else if v > high {
        v - span
    } else {
        v
    }
}

/// Differential value of a `motion_code` and its residual bits.
pub fn motion_delta(code: i32, residual: u32, f_code: u8) -> i32 {
    let f = 1i32 << (f_code - 1);
    if f == 1 || code == 0 {
        return code;
    }
    let magnitude = (code.abs() - 1) * f + residual as i32 + 1;
    if code < 0 {
        -magnitude
    } else {
        magnitude
    }
}

/// Inverse of [`motion_delta`]: `(motion_code, residual)` for a delta in
/// `[-16·f, 16·f]`.
pub fn encode_motion_delta(delta: i32, f_code: u8) -> (i32, u32) {
    let f = 1i32 << (f_code - 1);
    if f == 1 || delta == 0 {
        return (delta, 0);
    }
    let m = delta.abs() - 1;
    let code = m / f + 1;
    (if delta < 0 { -code } else { code }, (m % f) as u32)
}

/// Decodes one vector component against its predictor.
pub fn decode_motion_component(cursor: &mut BitCursor<'_>, f_code: u8, predictor: i32) -> Result<i32> {
    if !(1..=9).contains(&f_code) {
        return Err(Error::MalformedStream(format!(
            "motion vector with f_code {f_code}"
        )));
    }
    let code = match decode_symbol(cursor, &tables().motion_code)? {
        Symbol::Motion(m) => i32::from(m),
        other => unreachable!("motion table yielded {other}"),
    };
    let r_size = u32::from(f_code - 1);
    let residual = if r_size > 0 && code != 0 {
        cursor.read_bits(r_size)?
    } else {
        0
    };
    Ok(wrap_component(
        predictor + motion_delta(code, residual, f_code),
        f_code,
    ))
}

/// Decodes a horizontal and a vertical component (`f_codes` is
/// `[horizontal, vertical]`).
pub fn decode_motion_vector(
    cursor: &mut BitCursor<'_>,
    f_codes: [u8; 2],
    predictor: MotionVector,
) -> Result<MotionVector> {
    let x = decode_motion_component(cursor, f_codes[0], predictor.x)?;
    let y = decode_motion_component(cursor, f_codes[1], predictor.y)?;
    Ok(MotionVector { x, y })
}

/// How a macroblock's prediction is formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum PredictionMode {
    /// Frame picture, one 16×16 prediction per direction.
    FrameFrame,
    /// Frame picture, separate 16×8 predictions for the top- and
    /// bottom-field lines.
    FieldInFrame,
    /// Field picture, one 16×16 prediction from a selected reference field.
    FieldInField,
}

/// A vector and the reference field (0 top, 1 bottom) it points into.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize)]
pub struct FieldVector {
    pub vector: MotionVector,
    pub field_select: usize,
}

impl FieldVector {
    pub fn frame(vector: MotionVector) -> Self {
        FieldVector {
            vector,
            field_select: 0,
        }
    }
}

/// One prediction direction: the reference and its vectors. `FieldInFrame`
/// uses `vectors[0]` for the top-field lines and `vectors[1]` for the
/// bottom-field lines; the other modes use only `vectors[0]`.
#[derive(Debug, Clone, Copy)]
pub struct DirectionalPrediction<'a> {
    pub reference: &'a FramePicture,
    pub vectors: [FieldVector; 2],
}

/// A macroblock prediction to form. For `FieldInField`, `mb_y` counts
/// macroblock rows within the field.
#[derive(Debug, Clone, Copy)]
pub struct PredictionRequest<'a> {
    pub mode: PredictionMode,
    pub mb_x: usize,
    pub mb_y: usize,
    pub forward: Option<DirectionalPrediction<'a>>,
    pub backward: Option<DirectionalPrediction<'a>>,
}

/// Predicted samples of one macroblock, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MacroblockPrediction {
    pub luma: [u8; 256],
    pub cb: [u8; 64],
    pub cr: [u8; 64],
}

impl MacroblockPrediction {
    pub fn filled(v: u8) -> Self {
        MacroblockPrediction {
            luma: [v; 256],
            cb: [v; 64],
            cr: [v; 64],
        }
    }

    pub fn component(&self, c: usize) -> &[u8] {
        match c {
            0 => &self.luma,
            1 => &self.cb,
            _ => &self.cr,
        }
    }

    fn component_mut(&mut self, c: usize) -> &mut [u8] {
        match c {
            0 => &mut self.luma,
            1 => &mut self.cb,
            _ => &mut self.cr,
        }
    }
}

/// Where a fetched block goes inside the macroblock buffer.
#[derive(Debug, Clone, Copy)]
struct Placement {
    out_width: usize,
    first_row: usize,
    row_step: usize,
}

/// Fetches a `w`×`h` block whose full-sample origin is (`x0`, `y0`),
/// displaced by `mv` in half samples, with rounded bilinear interpolation.
fn fetch(
    view: PlaneView<'_>,
    x0: usize,
    y0: usize,
    (w, h): (usize, usize),
    mv: MotionVector,
    out: &mut [u8],
    at: Placement,
) -> Result<()> {
    let x = 2 * x0 as i64 + i64::from(mv.x);
    let y = 2 * y0 as i64 + i64::from(mv.y);
    let (xi, hx) = (x >> 1, (x & 1) as usize);
    let (yi, hy) = (y >> 1, (y & 1) as usize);
    if xi < 0
        || yi < 0
        || xi as usize + w + hx > view.width
        || yi as usize + h + hy > view.height
    {
        return Err(Error::MalformedStream(format!(
            "motion vector ({}, {}) reaches outside the reference picture",
            mv.x, mv.y
        )));
    }
    let (xi, yi) = (xi as usize, yi as usize);
    for r in 0..h {
        let dst = (at.first_row + r * at.row_step) * at.out_width;
        for c in 0..w {
            let a = u32::from(view.get(xi + c, yi + r));
            let v = match (hx, hy) {
                (0, 0) => a,
                (1, 0) => (a + u32::from(view.get(xi + c + 1, yi + r)) + 1) >> 1,
                (0, _) => (a + u32::from(view.get(xi + c, yi + r + 1)) + 1) >> 1,
                _ => {
                    (a + u32::from(view.get(xi + c + 1, yi + r))
                        + u32::from(view.get(xi + c, yi + r + 1))
                        + u32::from(view.get(xi + c + 1, yi + r + 1))
                        + 2)
                        >> 2
                }
            };
            out[dst + c] = v as u8;
        }
    }
    Ok(())
}

fn predict_direction(
    mode: PredictionMode,
    mb_x: usize,
    mb_y: usize,
    dir: &DirectionalPrediction<'_>,
) -> Result<MacroblockPrediction> {
    let mut out = MacroblockPrediction::filled(0);
    for c in 0..3 {
        let plane = dir.reference.plane(c);
        let size = if c == 0 { 16 } else { 8 };
        let chroma = |v: MotionVector| if c == 0 { v } else { v.chroma() };
        let buf = out.component_mut(c);
        match mode {
            PredictionMode::FrameFrame => {
                let fv = dir.vectors[0];
                fetch(
                    plane.view(),
                    mb_x * size,
                    mb_y * size,
                    (size, size),
                    chroma(fv.vector),
                    buf,
                    Placement {
                        out_width: size,
                        first_row: 0,
                        row_step: 1,
                    },
                )?;
            }
            PredictionMode::FieldInFrame => {
                for (parity, fv) in dir.vectors.iter().enumerate() {
                    fetch(
                        plane.field(fv.field_select),
                        mb_x * size,
                        mb_y * size / 2,
                        (size, size / 2),
                        chroma(fv.vector),
                        buf,
                        Placement {
                            out_width: size,
                            first_row: parity,
                            row_step: 2,
                        },
                    )?;
                }
            }
            PredictionMode::FieldInField => {
                let fv = dir.vectors[0];
                fetch(
                    plane.field(fv.field_select),
                    mb_x * size,
                    mb_y * size,
                    (size, size),
                    chroma(fv.vector),
                    buf,
                    Placement {
                        out_width: size,
                        first_row: 0,
                        row_step: 1,
                    },
                )?;
            }
        }
    }
    Ok(out)
}

/// Forms the luma and chroma prediction of one macroblock. With both
/// directions present the two predictions are averaged, rounding up.
pub fn predict(request: &PredictionRequest<'_>) -> Result<MacroblockPrediction> {
    let one = |d: &DirectionalPrediction<'_>| {
        predict_direction(request.mode, request.mb_x, request.mb_y, d)
    };
    match (&request.forward, &request.backward) {
        (Some(f), None) => one(f),
        (None, Some(b)) => one(b),
        (Some(f), Some(b)) => {
            let mut p = one(f)?;
            let q = one(b)?;
            for c in 0..3 {
                let dst = p.component_mut(c);
                for (a, &b) in dst.iter_mut().zip(q.component(c)) {
                    *a = ((u16::from(*a) + u16::from(b) + 1) >> 1) as u8;
                }
            }
            Ok(p)
        }
        (None, None) => Err(Error::MissingReference("forward")),
    }
}

/// Prediction direction of one set of vectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RefDirection {
    Forward,
    Backward,
}

/// Picks the frame a vector predicts from. In the second field of a P frame
/// a vector selecting the opposite parity refers to the first field of the
/// frame being decoded (`first_field`).
pub fn select_reference<'a>(
    pic: &PictureInfo,
    direction: RefDirection,
    refs: &'a ReferencePair,
    first_field: Option<&'a Arc<FramePicture>>,
    field_select: usize,
) -> Result<&'a FramePicture> {
    match direction {
        RefDirection::Backward => refs
            .backward
            .as_deref()
            .ok_or(Error::MissingReference("backward")),
        RefDirection::Forward => {
            if let (Some(parity), Some(first), PictureType::P) =
                (pic.structure.parity(), first_field, pic.coding_type)
            {
                if field_select != parity {
                    return Ok(first);
                }
            }
            refs.forward
                .as_deref()
                .ok_or(Error::MissingReference("forward"))
        }
    }
}

/// Already reconstructed samples bordering an `n`×`n` block: the row above
/// it, the column to its left and the row below it. Missing neighbours
/// contribute nothing.
#[derive(Debug, Clone, Copy, Default)]
pub struct BlockBoundary<'a> {
    pub above: Option<&'a [u8]>,
    pub left: Option<&'a [u8]>,
    pub below: Option<&'a [u8]>,
}

/// Sum of squared differences between the edges of `block` (row-major,
/// `n`×`n`) and the neighbouring samples across each available edge.
pub fn boundary_variation(block: &[u8], n: usize, boundary: &BlockBoundary<'_>) -> u64 {
    let sq = |a: u8, b: u8| {
        let d = i64::from(a) - i64::from(b);
        (d * d) as u64
    };
    let mut v = 0;
    if let Some(above) = boundary.above {
        v += (0..n).map(|x| sq(block[x], above[x])).sum::<u64>();
    }
    if let Some(left) = boundary.left {
        v += (0..n).map(|y| sq(block[y * n], left[y])).sum::<u64>();
    }
    if let Some(below) = boundary.below {
        v += (0..n).map(|x| sq(block[(n - 1) * n + x], below[x])).sum::<u64>();
    }
    v
}

/// Chooses the candidate whose predicted block best continues the
/// surrounding picture, by minimum [`boundary_variation`]. Ties go to the
/// earliest candidate. `predict_block` returns `None` for candidates that
/// cannot be formed, which are skipped.
pub fn conceal_select_mv<F>(
    candidates: &[MotionVector],
    n: usize,
    boundary: &BlockBoundary<'_>,
    mut predict_block: F,
) -> Result<MotionVector>
where
    F: FnMut(MotionVector) -> Option<Vec<u8>>,
{
    let mut best: Option<(u64, MotionVector)> = None;
    for &mv in candidates {
        let Some(block) = predict_block(mv) else {
            continue;
        };
        let v = boundary_variation(&block, n, boundary);
        if best.is_none_or(|(bv, _)| v < bv) {
            best = Some((v, mv));
        }
    }
    best.map(|(_, mv)| mv).ok_or(Error::NoCandidates)
}
