//! Macroblock-layer parsing: address increments and skipped macroblocks,
//! macroblock modes, motion vectors, coded block patterns and the
//! coefficients of each block.

use crate::bitio::BitCursor;
use crate::error::{Error, Result};
use crate::headers::{quantiser_scale, PictureInfo, PictureStructure, PictureType, SliceInfo};
use crate::motion::{decode_motion_component, FieldVector, MotionVector, PredictionMode};
use crate::transform::{Block, ScanMatrix};
use crate::vlc::{
    decode_dc_differential, decode_run_level, decode_symbol, tables, Coefficient, Component,
    DctTable, MacroblockType, RunLevel, Symbol,
};

/// Coded block pattern with all six 4:2:0 blocks present.
pub const ALL_BLOCKS: u8 = 0b11_1111;

/// Increment added by each `macroblock_escape`.
pub const ADDRESS_ESCAPE_INCREMENT: usize = 33;

/// Prediction state carried from one macroblock to the next within a slice.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PredictorState {
    /// DC predictors for Y, Cb, Cr.
    pub dc: [i32; 3],
    /// Motion-vector predictors, indexed `[r][s]`: `r` the first or second
    /// vector of a macroblock, `s` 0 forward / 1 backward.
    pub pmv: [[MotionVector; 2]; 2],
    /// Address of the previous macroblock; `None` at slice start.
    pub last_address: Option<usize>,
    /// Address one before the slice's first macroblock column.
    slice_base: usize,
    pub quantiser_scale_code: u8,
    /// Motion of the previous macroblock, replayed by B-picture skips.
    pub prev_motion: Option<MacroblockMotion>,
    intra_dc_precision: u8,
}

impl PredictorState {
    /// State at the start of a slice.
    pub fn new(pic: &PictureInfo, slice: &SliceInfo, mb_width: usize) -> Self {
        PredictorState {
            dc: [dc_reset_value(pic.intra_dc_precision); 3],
            pmv: [[MotionVector::ZERO; 2]; 2],
            last_address: None,
            slice_base: slice.mb_row() * mb_width,
            quantiser_scale_code: slice.quantiser_scale_code,
            prev_motion: None,
            intra_dc_precision: pic.intra_dc_precision,
        }
    }

    pub fn reset_dc(&mut self) {
        self.dc = [dc_reset_value(self.intra_dc_precision); 3];
    }

    pub fn reset_pmv(&mut self) {
        self.pmv = [[MotionVector::ZERO; 2]; 2];
    }
}

/// DC predictor value at slice start and after non-intra macroblocks.
pub fn dc_reset_value(intra_dc_precision: u8) -> i32 {
    1 << (intra_dc_precision - 1)
}

/// Prediction used by a non-intra macroblock. `forward` and `backward`
/// hold the vectors of each direction in use (see
/// [`DirectionalPrediction`](crate::motion::DirectionalPrediction)).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MacroblockMotion {
    pub mode: PredictionMode,
    pub forward: Option<[FieldVector; 2]>,
    pub backward: Option<[FieldVector; 2]>,
}

impl MacroblockMotion {
    /// Zero-vector forward prediction from the same-parity field (field
    /// pictures) or the co-located frame area.
    pub fn zero_forward(pic: &PictureInfo) -> Self {
        let (mode, select) = match pic.structure.parity() {
            Some(parity) => (PredictionMode::FieldInField, parity),
            None => (PredictionMode::FrameFrame, 0),
        };
        let fv = FieldVector {
            vector: MotionVector::ZERO,
            field_select: select,
        };
        MacroblockMotion {
            mode,
            forward: Some([fv; 2]),
            backward: None,
        }
    }

    /// The first forward vector, or else the first backward one.
    pub fn primary_vector(&self) -> Option<MotionVector> {
        self.forward
            .or(self.backward)
            .map(|v| v[0].vector)
    }
}

/// Coefficients of one block as decoded, before inverse scan.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct CoeffBlock {
    /// Reconstructed DC level of an intra block (predictor plus differential).
    pub dc: Option<i32>,
    /// Run-level pairs in scan order, after the DC term for intra blocks.
    pub run_levels: Vec<RunLevel>,
}

impl CoeffBlock {
    /// Quantized coefficients in raster order.
    pub fn quantized(&self, scan: &ScanMatrix) -> Block {
        let mut block = [0; 64];
        let mut serial = 0;
        if let Some(dc) = self.dc {
            block[0] = dc;
            serial = 1;
        }
        for rl in &self.run_levels {
            serial += usize::from(rl.run);
            block[scan.raster_index(serial)] = rl.level;
            serial += 1;
        }
        block
    }
}

/// One decoded or skipped macroblock.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MacroblockRec {
    /// Raster index of the macroblock within the picture.
    pub address: usize,
    pub quant_scale_override: Option<u8>,
    pub mb_type: MacroblockType,
    /// `None` for intra macroblocks.
    pub motion: Option<MacroblockMotion>,
    /// Blocks hold interleaved field lines (field DCT).
    pub field_dct: bool,
    pub coded_block_pattern: u8,
    pub blocks: [Option<CoeffBlock>; 6],
    /// Quantiser step in effect for this macroblock.
    pub quantiser_scale: i32,
    pub skipped: bool,
}

impl MacroblockRec {
    pub fn is_intra(&self) -> bool {
        self.mb_type.intra
    }
}

/// How the vectors of one direction are coded.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct VectorFormat {
    count: usize,
    field: bool,
}

fn read_motion_type(
    cursor: &mut BitCursor<'_>,
    pic: &PictureInfo,
    mb_type: MacroblockType,
) -> Result<(PredictionMode, VectorFormat)> {
    let frame = (PredictionMode::FrameFrame, VectorFormat { count: 1, field: false });
    let field_in_frame = (PredictionMode::FieldInFrame, VectorFormat { count: 2, field: true });
    let field_in_field = (PredictionMode::FieldInField, VectorFormat { count: 1, field: true });
    let moving = mb_type.forward || mb_type.backward;
    if pic.structure == PictureStructure::FramePicture {
        if !moving || pic.frame_pred_frame_dct {
            return Ok(frame);
        }
        match cursor.read_bits(2)? {
            1 => Ok(field_in_frame),
            2 => Ok(frame),
            3 => Err(Error::unsupported("dual-prime prediction")),
            _ => Err(Error::MalformedStream("reserved frame_motion_type 0".into())),
        }
    } else {
        if !moving {
            return Ok(field_in_field);
        }
        match cursor.read_bits(2)? {
            1 => Ok(field_in_field),
            2 => Err(Error::unsupported("16x8 prediction in field pictures")),
            3 => Err(Error::unsupported("dual-prime prediction")),
            _ => Err(Error::MalformedStream("reserved field_motion_type 0".into())),
        }
    }
}

/// Reads `motion_vectors(s)` and updates the predictors.
fn read_vectors(
    cursor: &mut BitCursor<'_>,
    pic: &PictureInfo,
    s: usize,
    format: VectorFormat,
    pmv: &mut [[MotionVector; 2]; 2],
) -> Result<[FieldVector; 2]> {
    let f = pic.f_codes[s];
    let frame_picture = pic.structure == PictureStructure::FramePicture;
    let mut out = [FieldVector::default(); 2];
    for (r, slot) in out.iter_mut().enumerate().take(format.count) {
        let field_select = if format.field {
            usize::from(cursor.read_bit()?)
        } else {
            0
        };
        let x = decode_motion_component(cursor, f[0], pmv[r][s].x)?;
        // Field vectors in frame pictures are predicted in field units.
        let halve = frame_picture && format.field;
        let pred_y = if halve { pmv[r][s].y >> 1 } else { pmv[r][s].y };
        let y = decode_motion_component(cursor, f[1], pred_y)?;
        pmv[r][s] = MotionVector::new(x, if halve { y * 2 } else { y });
        *slot = FieldVector {
            vector: MotionVector::new(x, y),
            field_select,
        };
    }
    if format.count == 1 {
        pmv[1][s] = pmv[0][s];
        out[1] = out[0];
    }
    Ok(out)
}

fn read_address_increment(cursor: &mut BitCursor<'_>) -> Result<usize> {
    let mut inc = 0;
    loop {
        match decode_symbol(cursor, &tables().mb_address_inc)? {
            Symbol::AddressEscape => inc += ADDRESS_ESCAPE_INCREMENT,
            Symbol::Increment(n) => return Ok(inc + usize::from(n)),
            other => unreachable!("address table yielded {other}"),
        }
    }
}

/// Decodes one coded macroblock together with the skipped macroblocks its
/// address increment implies, which come first in the returned list.
/// Addresses at or beyond `address_limit` are rejected.
pub fn decode_macroblock(
    cursor: &mut BitCursor<'_>,
    pic: &PictureInfo,
    address_limit: usize,
    state: &mut PredictorState,
) -> Result<Vec<MacroblockRec>> {
    let increment = read_address_increment(cursor)?;
    let address = match state.last_address {
        None => state.slice_base + increment - 1,
        Some(last) => last + increment,
    };
    if address >= address_limit {
        return Err(Error::MalformedStream(format!(
            "macroblock address {address} beyond limit {address_limit}"
        )));
    }

    let mut out = Vec::with_capacity(1);
    if let Some(last) = state.last_address {
        for skipped in last + 1..address {
            out.push(skipped_macroblock(pic, skipped, state)?);
        }
    }

    let mb_type = match decode_symbol(cursor, mb_type_table(pic.coding_type))? {
        Symbol::MbType(t) => t,
        other => unreachable!("macroblock type table yielded {other}"),
    };
    let (mode, format) = read_motion_type(cursor, pic, mb_type)?;
    let frame_picture = pic.structure == PictureStructure::FramePicture;
    let field_dct = if frame_picture && !pic.frame_pred_frame_dct && (mb_type.intra || mb_type.pattern) {
        cursor.read_bit()?
    } else {
        false
    };
    let mut quant_scale_override = None;
    if mb_type.quant {
        let code = cursor.read_bits(5)? as u8;
        if code == 0 {
            return Err(Error::MalformedStream("quantiser_scale_code 0".into()));
        }
        state.quantiser_scale_code = code;
        quant_scale_override = Some(code);
    }

    let mut motion = None;
    if mb_type.intra {
        if pic.concealment_motion_vectors {
            let format = VectorFormat {
                count: 1,
                field: !frame_picture,
            };
            read_vectors(cursor, pic, 0, format, &mut state.pmv)?;
            cursor.read_marker("concealment motion vectors").map_err(|_| {
                Error::MalformedStream("missing marker after concealment vectors".into())
            })?;
        } else {
            state.reset_pmv();
        }
        state.prev_motion = None;
    } else {
        state.reset_dc();
        let m = if mb_type.forward || mb_type.backward {
            let forward = if mb_type.forward {
                Some(read_vectors(cursor, pic, 0, format, &mut state.pmv)?)
            } else {
                None
            };
            let backward = if mb_type.backward {
                Some(read_vectors(cursor, pic, 1, format, &mut state.pmv)?)
            } else {
                None
            };
            MacroblockMotion {
                mode,
                forward,
                backward,
            }
        } else if pic.coding_type == PictureType::P {
            state.reset_pmv();
            MacroblockMotion::zero_forward(pic)
        } else {
            return Err(Error::MalformedStream(
                "B-picture macroblock without prediction direction".into(),
            ));
        };
        state.prev_motion = Some(m);
        motion = Some(m);
    }

    let coded_block_pattern = if mb_type.intra {
        ALL_BLOCKS
    } else if mb_type.pattern {
        match decode_symbol(cursor, &tables().cbp)? {
            Symbol::Cbp(0) => {
                return Err(Error::MalformedStream("coded_block_pattern 0 in 4:2:0".into()))
            }
            Symbol::Cbp(c) => c,
            other => unreachable!("cbp table yielded {other}"),
        }
    } else {
        0
    };

    let mut blocks: [Option<CoeffBlock>; 6] = Default::default();
    for (i, slot) in blocks.iter_mut().enumerate() {
        if coded_block_pattern & (1 << (5 - i)) != 0 {
            *slot = Some(decode_block(cursor, i, mb_type.intra, pic, &mut state.dc)?);
        }
    }

    state.last_address = Some(address);
    out.push(MacroblockRec {
        address,
        quant_scale_override,
        mb_type,
        motion,
        field_dct,
        coded_block_pattern,
        blocks,
        quantiser_scale: quantiser_scale(state.quantiser_scale_code, pic.q_scale_type),
        skipped: false,
    });
    Ok(out)
}

fn skipped_macroblock(pic: &PictureInfo, address: usize, state: &mut PredictorState) -> Result<MacroblockRec> {
    state.reset_dc();
    let motion = match pic.coding_type {
        PictureType::P => {
            state.reset_pmv();
            MacroblockMotion::zero_forward(pic)
        }
        PictureType::B => state.prev_motion.ok_or_else(|| {
            Error::MalformedStream("skipped B macroblock after an intra macroblock".into())
        })?,
        PictureType::I => {
            return Err(Error::MalformedStream("skipped macroblock in an I picture".into()))
        }
    };
    Ok(MacroblockRec {
        address,
        quant_scale_override: None,
        mb_type: MacroblockType {
            forward: motion.forward.is_some(),
            backward: motion.backward.is_some(),
            ..MacroblockType::default()
        },
        motion: Some(motion),
        field_dct: false,
        coded_block_pattern: 0,
        blocks: Default::default(),
        quantiser_scale: quantiser_scale(state.quantiser_scale_code, pic.q_scale_type),
        skipped: true,
    })
}

fn mb_type_table(t: PictureType) -> &'static crate::vlc::VlcTable {
    match t {
        PictureType::I => &tables().mb_type_i,
        PictureType::P => &tables().mb_type_p,
        PictureType::B => &tables().mb_type_b,
    }
}

/// Decodes the coefficients of block `block_index` (0–3 luma, 4 Cb, 5 Cr).
/// Intra blocks update the matching entry of `dc_predictors`.
pub fn decode_block(
    cursor: &mut BitCursor<'_>,
    block_index: usize,
    intra: bool,
    pic: &PictureInfo,
    dc_predictors: &mut [i32; 3],
) -> Result<CoeffBlock> {
    let mut block = CoeffBlock::default();
    let mut serial = 0;
    let table = if intra {
        let (component, c) = match block_index {
            0..=3 => (Component::Luma, 0),
            4 => (Component::Chroma, 1),
            _ => (Component::Chroma, 2),
        };
        let dc = dc_predictors[c] + decode_dc_differential(cursor, component)?;
        let max = (1 << pic.intra_dc_precision) - 1;
        if !(0..=max).contains(&dc) {
            return Err(Error::MalformedStream(format!("intra DC {dc} out of range")));
        }
        dc_predictors[c] = dc;
        block.dc = Some(dc);
        serial = 1;
        if pic.intra_vlc_format {
            DctTable::B15
        } else {
            DctTable::B14
        }
    } else {
        DctTable::B14
    };

    loop {
        match decode_run_level(cursor, table, !intra && serial == 0)? {
            Coefficient::EndOfBlock => break,
            Coefficient::Value(rl) => {
                serial += usize::from(rl.run);
                if serial > 63 {
                    return Err(Error::CoefficientOverflow { position: serial });
                }
                block.run_levels.push(rl);
                serial += 1;
            }
        }
    }
    Ok(block)
}

/// Decodes all macroblocks of a slice whose header has been parsed, up to
/// the next start code.
pub fn decode_slice_macroblocks(
    cursor: &mut BitCursor<'_>,
    pic: &PictureInfo,
    slice: &SliceInfo,
    mb_width: usize,
    mb_count: usize,
) -> Result<Vec<MacroblockRec>> {
    let mut state = PredictorState::new(pic, slice, mb_width);
    // A slice never extends past the end of its macroblock row.
    let limit = mb_count.min((slice.mb_row() + 1) * mb_width);
    let mut out = Vec::new();
    loop {
        out.extend(decode_macroblock(cursor, pic, limit, &mut state)?);
        if cursor.at_start_code_or_end() {
            return Ok(out);
        }
    }
}
