//! Sequence, GOP, picture and slice header decoding.
//!
//! Every parser takes a cursor positioned right after the start-code byte of
//! its unit and leaves it after the last syntax element, so the caller can
//! resume with [`BitCursor::next_start_code`].

use std::fmt;
use std::sync::OnceLock;

use serde::Serialize;

use crate::bitio::{BitCursor, EXTENSION_START_CODE};
use crate::error::{Error, Result};
use crate::transform::QuantMatrix;

/// Frame rate as an exact fraction of frames per second.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct FrameRate {
    pub num: u32,
    pub den: u32,
}

impl FrameRate {
    pub fn from_code(code: u8) -> Option<FrameRate> {
        let (num, den) = match code {
            1 => (24000, 1001),
            2 => (24, 1),
            3 => (25, 1),
            4 => (30000, 1001),
            5 => (30, 1),
            6 => (50, 1),
            7 => (60000, 1001),
            8 => (60, 1),
            _ => return None,
        };
        Some(FrameRate { num, den })
    }

    pub fn fps(&self) -> f64 {
        f64::from(self.num) / f64::from(self.den)
    }

    /// Duration of one frame in seconds.
    pub fn period_seconds(&self) -> f64 {
        f64::from(self.den) / f64::from(self.num)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ChromaFormat {
    Yuv420,
    Yuv422,
    Yuv444,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SequenceInfo {
    pub horizontal_size: u32,
    pub vertical_size: u32,
    pub aspect_ratio_code: u8,
    pub frame_rate_code: u8,
    /// Bit rate in units of 400 bit/s, including the extension bits.
    pub bit_rate_value: u32,
    /// VBV buffer size in units of 16 × 1024 bits, including the extension bits.
    pub vbv_buffer_size_value: u32,
    pub constrained_parameters: bool,
    pub intra_quant_matrix: QuantMatrix,
    pub non_intra_quant_matrix: QuantMatrix,
    pub profile_and_level: u8,
    pub progressive_sequence: bool,
    pub chroma_format: ChromaFormat,
    pub low_delay: bool,
    pub frame_rate_extension_n: u8,
    pub frame_rate_extension_d: u8,
    pub has_sequence_extension: bool,
}

impl SequenceInfo {
    /// Bit rate in bits per second.
    pub fn bit_rate(&self) -> u64 {
        u64::from(self.bit_rate_value) * 400
    }

    pub fn vbv_buffer_size_bits(&self) -> u64 {
        u64::from(self.vbv_buffer_size_value) * 16 * 1024
    }

    pub fn frame_rate(&self) -> FrameRate {
        let base = FrameRate::from_code(self.frame_rate_code)
            .expect("frame_rate_code validated at parse time");
        FrameRate {
            num: base.num * (u32::from(self.frame_rate_extension_n) + 1),
            den: base.den * (u32::from(self.frame_rate_extension_d) + 1),
        }
    }

    pub fn mb_width(&self) -> usize {
        self.horizontal_size.div_ceil(16) as usize
    }

    /// Macroblock rows of a coded frame.
    pub fn mb_height(&self) -> usize {
        if self.progressive_sequence {
            self.vertical_size.div_ceil(16) as usize
        } else {
            2 * self.vertical_size.div_ceil(32) as usize
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct GopInfo {
    pub drop_frame: bool,
    pub hours: u8,
    pub minutes: u8,
    pub seconds: u8,
    pub pictures: u8,
    pub closed_gop: bool,
    pub broken_link: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum PictureType {
    I,
    P,
    B,
}

impl PictureType {
    pub fn letter(self) -> char {
        match self {
            PictureType::I => 'I',
            PictureType::P => 'P',
            PictureType::B => 'B',
        }
    }

    pub fn code(self) -> u32 {
        match self {
            PictureType::I => 1,
            PictureType::P => 2,
            PictureType::B => 3,
        }
    }

    pub fn is_reference(self) -> bool {
        self != PictureType::B
    }
}

impl fmt::Display for PictureType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.letter())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum PictureStructure {
    TopField,
    BottomField,
    FramePicture,
}

impl PictureStructure {
    pub fn code(self) -> u32 {
        match self {
            PictureStructure::TopField => 1,
            PictureStructure::BottomField => 2,
            PictureStructure::FramePicture => 3,
        }
    }

    pub fn is_field(self) -> bool {
        self != PictureStructure::FramePicture
    }

    /// Field parity: 0 for top, 1 for bottom. Frame pictures have none.
    pub fn parity(self) -> Option<usize> {
        match self {
            PictureStructure::TopField => Some(0),
            PictureStructure::BottomField => Some(1),
            PictureStructure::FramePicture => None,
        }
    }
}

/// The `f_code` value marking an unused motion direction.
pub const F_CODE_NONE: u8 = 15;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PictureInfo {
    pub temporal_reference: u16,
    pub coding_type: PictureType,
    pub vbv_delay: u16,
    /// Indexed `[direction][axis]`: direction 0 forward, 1 backward; axis
    /// 0 horizontal, 1 vertical.
    pub f_codes: [[u8; 2]; 2],
    pub intra_dc_precision: u8,
    pub structure: PictureStructure,
    pub top_field_first: bool,
    pub frame_pred_frame_dct: bool,
    pub concealment_motion_vectors: bool,
    pub q_scale_type: bool,
    pub intra_vlc_format: bool,
    pub alternate_scan: bool,
    pub repeat_first_field: bool,
    pub progressive_frame: bool,
    pub has_coding_extension: bool,
}

/// `vbv_delay` value signalling variable bit rate.
pub const VBV_DELAY_VARIABLE: u16 = 0xFFFF;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SliceInfo {
    /// The slice start-code byte (1-based macroblock row).
    pub vertical_position: u16,
    pub quantiser_scale_code: u8,
    pub quantiser_scale: i32,
    pub intra_slice: bool,
}

impl SliceInfo {
    /// Zero-based macroblock row of the slice.
    pub fn mb_row(&self) -> usize {
        usize::from(self.vertical_position) - 1
    }
}

fn nonlinear_qscale() -> &'static [i32; 32] {
    static T: OnceLock<[i32; 32]> = OnceLock::new();
    T.get_or_init(|| {
        let vals: Vec<i32> = include_str!("../tables/nonlinear_qscale.txt")
            .lines()
            .map(|l| l.split('#').next().unwrap_or(""))
            .flat_map(str::split_whitespace)
            .map(|s| s.parse().expect("nonlinear qscale entry"))
            .collect();
        assert_eq!(vals.len(), 31, "nonlinear qscale table needs 31 entries");
        let mut t = [0; 32];
        t[1..].copy_from_slice(&vals);
        t
    })
}

/// Maps a 5-bit `quantiser_scale_code` to the quantiser step.
pub fn quantiser_scale(code: u8, q_scale_type: bool) -> i32 {
    assert!((1..=31).contains(&code), "quantiser_scale_code {code}");
    if q_scale_type {
        nonlinear_qscale()[usize::from(code)]
    } else {
        2 * i32::from(code)
    }
}

fn read_matrix(cursor: &mut BitCursor<'_>, what: &str) -> Result<QuantMatrix> {
    let mut zz = [0u8; 64];
    for w in zz.iter_mut() {
        *w = cursor.read_bits(8)? as u8;
        if *w == 0 {
            return Err(Error::header(format!("{what} weight of 0")));
        }
    }
    Ok(QuantMatrix::from_zigzag(&zz))
}

/// Parses `sequence_header()`; the sequence extension fields keep MPEG-1
/// defaults until [`parse_extension`] fills them.
pub fn parse_sequence_header(cursor: &mut BitCursor<'_>) -> Result<SequenceInfo> {
    let horizontal_size = cursor.read_bits(12)?;
    let vertical_size = cursor.read_bits(12)?;
    let aspect_ratio_code = cursor.read_bits(4)? as u8;
    let frame_rate_code = cursor.read_bits(4)? as u8;
    let bit_rate_value = cursor.read_bits(18)?;
    cursor.read_marker("bit_rate_value")?;
    let vbv_buffer_size_value = cursor.read_bits(10)?;
    let constrained_parameters = cursor.read_bit()?;
    let intra_quant_matrix = if cursor.read_bit()? {
        read_matrix(cursor, "intra quantiser matrix")?
    } else {
        QuantMatrix::default_intra()
    };
    let non_intra_quant_matrix = if cursor.read_bit()? {
        read_matrix(cursor, "non-intra quantiser matrix")?
    } else {
        QuantMatrix::default_non_intra()
    };

    if horizontal_size == 0 || vertical_size == 0 {
        return Err(Error::header(format!(
            "picture size {horizontal_size}x{vertical_size}"
        )));
    }
    if aspect_ratio_code == 0 {
        return Err(Error::header("forbidden aspect_ratio_information 0"));
    }
    if FrameRate::from_code(frame_rate_code).is_none() {
        return Err(Error::header(format!(
            "forbidden frame_rate_code {frame_rate_code}"
        )));
    }

    Ok(SequenceInfo {
        horizontal_size,
        vertical_size,
        aspect_ratio_code,
        frame_rate_code,
        bit_rate_value,
        vbv_buffer_size_value,
        constrained_parameters,
        intra_quant_matrix,
        non_intra_quant_matrix,
        profile_and_level: 0,
        progressive_sequence: true,
        chroma_format: ChromaFormat::Yuv420,
        low_delay: false,
        frame_rate_extension_n: 0,
        frame_rate_extension_d: 0,
        has_sequence_extension: false,
    })
}

/// Parses a sequence header plus the sequence extension that must follow
/// it. A missing extension means an MPEG-1 stream, which is unsupported.
pub fn parse_sequence(cursor: &mut BitCursor<'_>) -> Result<SequenceInfo> {
    let mut seq = parse_sequence_header(cursor)?;
    match cursor.next_start_code() {
        Some(EXTENSION_START_CODE) if cursor.peek_bits(4)? == ExtensionId::SEQUENCE => {
            parse_extension(cursor, ExtensionScope::Sequence { seq: &mut seq })?;
            Ok(seq)
        }
        _ => Err(Error::unsupported(
            "sequence header without sequence extension (MPEG-1 stream)",
        )),
    }
}

/// Where an extension start code appeared.
pub enum ExtensionScope<'a> {
    Sequence {
        seq: &'a mut SequenceInfo,
    },
    Gop,
    Picture {
        seq: &'a mut SequenceInfo,
        pic: &'a mut PictureInfo,
    },
}

/// The 4-bit `extension_start_code_identifier`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExtensionId(pub u32);

impl ExtensionId {
    pub const SEQUENCE: u32 = 1;
    pub const SEQUENCE_DISPLAY: u32 = 2;
    pub const QUANT_MATRIX: u32 = 3;
    pub const COPYRIGHT: u32 = 4;
    pub const SEQUENCE_SCALABLE: u32 = 5;
    pub const PICTURE_DISPLAY: u32 = 7;
    pub const PICTURE_CODING: u32 = 8;
    pub const PICTURE_SPATIAL_SCALABLE: u32 = 9;
    pub const PICTURE_TEMPORAL_SCALABLE: u32 = 10;
}

/// Parses one extension. Extensions that carry nothing the decoder needs
/// are left unread; the caller skips to the next start code.
pub fn parse_extension(cursor: &mut BitCursor<'_>, scope: ExtensionScope<'_>) -> Result<ExtensionId> {
    let id = cursor.read_bits(4)?;
    match (id, scope) {
        (ExtensionId::SEQUENCE, ExtensionScope::Sequence { seq }) => {
            parse_sequence_extension(cursor, seq)?
        }
        (ExtensionId::SEQUENCE_SCALABLE, _)
        | (ExtensionId::PICTURE_SPATIAL_SCALABLE, _)
        | (ExtensionId::PICTURE_TEMPORAL_SCALABLE, _) => {
            return Err(Error::unsupported(format!("scalable extension {id}")))
        }
        (ExtensionId::PICTURE_CODING, ExtensionScope::Picture { pic, .. }) => {
            parse_picture_coding_extension(cursor, pic)?
        }
        (ExtensionId::QUANT_MATRIX, ExtensionScope::Picture { seq, .. }) => {
            parse_quant_matrix_extension(cursor, seq)?
        }
        (ExtensionId::SEQUENCE, _) | (ExtensionId::PICTURE_CODING, _) => {
            return Err(Error::header(format!("extension {id} in the wrong place")))
        }
        _ => {}
    }
    Ok(ExtensionId(id))
}

fn parse_sequence_extension(cursor: &mut BitCursor<'_>, seq: &mut SequenceInfo) -> Result<()> {
    seq.profile_and_level = cursor.read_bits(8)? as u8;
    seq.progressive_sequence = cursor.read_bit()?;
    seq.chroma_format = match cursor.read_bits(2)? {
        1 => ChromaFormat::Yuv420,
        2 => ChromaFormat::Yuv422,
        3 => ChromaFormat::Yuv444,
        _ => return Err(Error::header("reserved chroma_format 0")),
    };
    let h_ext = cursor.read_bits(2)?;
    let v_ext = cursor.read_bits(2)?;
    let bit_rate_ext = cursor.read_bits(12)?;
    cursor.read_marker("bit_rate_extension")?;
    let vbv_ext = cursor.read_bits(8)?;
    seq.low_delay = cursor.read_bit()?;
    seq.frame_rate_extension_n = cursor.read_bits(2)? as u8;
    seq.frame_rate_extension_d = cursor.read_bits(5)? as u8;

    seq.horizontal_size |= h_ext << 12;
    seq.vertical_size |= v_ext << 12;
    seq.bit_rate_value |= bit_rate_ext << 18;
    seq.vbv_buffer_size_value |= vbv_ext << 10;
    seq.has_sequence_extension = true;
    if seq.chroma_format != ChromaFormat::Yuv420 {
        return Err(Error::unsupported(format!(
            "chroma format {:?}",
            seq.chroma_format
        )));
    }
    Ok(())
}

fn parse_quant_matrix_extension(cursor: &mut BitCursor<'_>, seq: &mut SequenceInfo) -> Result<()> {
    if cursor.read_bit()? {
        seq.intra_quant_matrix = read_matrix(cursor, "intra quantiser matrix")?;
    }
    if cursor.read_bit()? {
        seq.non_intra_quant_matrix = read_matrix(cursor, "non-intra quantiser matrix")?;
    }
    // Chroma matrices only apply to 4:2:2 and 4:4:4; read past them.
    for what in ["chroma intra matrix", "chroma non-intra matrix"] {
        if cursor.read_bit()? {
            read_matrix(cursor, what)?;
        }
    }
    Ok(())
}

fn parse_picture_coding_extension(cursor: &mut BitCursor<'_>, pic: &mut PictureInfo) -> Result<()> {
    for dir in 0..2 {
        for axis in 0..2 {
            let f = cursor.read_bits(4)? as u8;
            if !((1..=9).contains(&f) || f == F_CODE_NONE) {
                return Err(Error::header(format!("f_code[{dir}][{axis}] = {f}")));
            }
            pic.f_codes[dir][axis] = f;
        }
    }
    pic.intra_dc_precision = 8 + cursor.read_bits(2)? as u8;
    pic.structure = match cursor.read_bits(2)? {
        1 => PictureStructure::TopField,
        2 => PictureStructure::BottomField,
        3 => PictureStructure::FramePicture,
        _ => return Err(Error::header("reserved picture_structure 0")),
    };
    pic.top_field_first = cursor.read_bit()?;
    pic.frame_pred_frame_dct = cursor.read_bit()?;
    pic.concealment_motion_vectors = cursor.read_bit()?;
    pic.q_scale_type = cursor.read_bit()?;
    pic.intra_vlc_format = cursor.read_bit()?;
    pic.alternate_scan = cursor.read_bit()?;
    pic.repeat_first_field = cursor.read_bit()?;
    let _chroma_420_type = cursor.read_bit()?;
    pic.progressive_frame = cursor.read_bit()?;
    if cursor.read_bit()? {
        // v_axis, field_sequence, sub_carrier, burst_amplitude, sub_carrier_phase
        cursor.skip_bits(1 + 3 + 1 + 7 + 8)?;
    }
    pic.has_coding_extension = true;
    Ok(())
}

pub fn parse_gop_header(cursor: &mut BitCursor<'_>) -> Result<GopInfo> {
    let drop_frame = cursor.read_bit()?;
    let hours = cursor.read_bits(5)? as u8;
    let minutes = cursor.read_bits(6)? as u8;
    cursor.read_marker("time_code minutes")?;
    let seconds = cursor.read_bits(6)? as u8;
    let pictures = cursor.read_bits(6)? as u8;
    let closed_gop = cursor.read_bit()?;
    let broken_link = cursor.read_bit()?;
    if hours > 23 || minutes > 59 || seconds > 59 || pictures > 59 {
        return Err(Error::header(format!(
            "time code {hours:02}:{minutes:02}:{seconds:02}.{pictures:02} out of range"
        )));
    }
    Ok(GopInfo {
        drop_frame,
        hours,
        minutes,
        seconds,
        pictures,
        closed_gop,
        broken_link,
    })
}

/// Parses `picture_header()`. Coding-extension fields get frame-picture
/// defaults until [`parse_extension`] fills them.
pub fn parse_picture_header(cursor: &mut BitCursor<'_>) -> Result<PictureInfo> {
    let temporal_reference = cursor.read_bits(10)? as u16;
    let coding_type = match cursor.read_bits(3)? {
        1 => PictureType::I,
        2 => PictureType::P,
        3 => PictureType::B,
        4 => return Err(Error::header("D pictures are not supported")),
        other => return Err(Error::header(format!("picture_coding_type {other}"))),
    };
    let vbv_delay = cursor.read_bits(16)? as u16;
    // Legacy full_pel / f_code fields; MPEG-2 carries the real f_codes in the
    // picture coding extension.
    if matches!(coding_type, PictureType::P | PictureType::B) {
        cursor.skip_bits(4)?;
    }
    if coding_type == PictureType::B {
        cursor.skip_bits(4)?;
    }
    while cursor.read_bit()? {
        cursor.skip_bits(8)?;
    }
    Ok(PictureInfo {
        temporal_reference,
        coding_type,
        vbv_delay,
        f_codes: [[F_CODE_NONE; 2]; 2],
        intra_dc_precision: 8,
        structure: PictureStructure::FramePicture,
        top_field_first: false,
        frame_pred_frame_dct: true,
        concealment_motion_vectors: false,
        q_scale_type: false,
        intra_vlc_format: false,
        alternate_scan: false,
        repeat_first_field: false,
        progressive_frame: true,
        has_coding_extension: false,
    })
}

/// Parses `slice()` header fields after the slice start code byte.
pub fn parse_slice_header(
    cursor: &mut BitCursor<'_>,
    start_code_byte: u8,
    seq: &SequenceInfo,
    pic: &PictureInfo,
) -> Result<SliceInfo> {
    if !crate::bitio::is_slice_start_code(start_code_byte) {
        return Err(Error::header(format!(
            "0x{start_code_byte:02X} is not a slice start code"
        )));
    }
    let mut vertical_position = u16::from(start_code_byte);
    if seq.vertical_size > 2800 {
        let ext = cursor.read_bits(3)? as u16;
        vertical_position += ext << 7;
    }
    let quantiser_scale_code = cursor.read_bits(5)? as u8;
    if quantiser_scale_code == 0 {
        return Err(Error::header("quantiser_scale_code 0"));
    }
    let mut intra_slice = false;
    if cursor.peek_bits(1)? == 1 {
        cursor.skip_bits(1)?;
        intra_slice = cursor.read_bit()?;
        cursor.skip_bits(7)?;
        while cursor.read_bit()? {
            cursor.skip_bits(8)?;
        }
    } else {
        cursor.skip_bits(1)?;
    }
    Ok(SliceInfo {
        vertical_position,
        quantiser_scale_code,
        quantiser_scale: quantiser_scale(quantiser_scale_code, pic.q_scale_type),
        intra_slice,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bitio::{GROUP_START_CODE, PICTURE_START_CODE, SEQUENCE_HEADER_CODE};
    use crate::fixtures::syntax;
    use crate::fixtures::BitWriter;
    use proptest::prelude::*;

    pub(crate) fn sample_sequence() -> SequenceInfo {
        SequenceInfo {
            horizontal_size: 64,
            vertical_size: 48,
            aspect_ratio_code: 1,
            frame_rate_code: 3,
            bit_rate_value: 2500,
            vbv_buffer_size_value: 20,
            constrained_parameters: false,
            intra_quant_matrix: QuantMatrix::default_intra(),
            non_intra_quant_matrix: QuantMatrix::default_non_intra(),
            profile_and_level: 0x48,
            progressive_sequence: true,
            chroma_format: ChromaFormat::Yuv420,
            low_delay: false,
            frame_rate_extension_n: 0,
            frame_rate_extension_d: 0,
            has_sequence_extension: true,
        }
    }

    fn sample_picture(t: PictureType) -> PictureInfo {
        PictureInfo {
            temporal_reference: 3,
            coding_type: t,
            vbv_delay: 0x1234,
            f_codes: match t {
                PictureType::I => [[15, 15], [15, 15]],
                PictureType::P => [[2, 3], [15, 15]],
                PictureType::B => [[1, 2], [3, 4]],
            },
            intra_dc_precision: 9,
            structure: PictureStructure::FramePicture,
            top_field_first: true,
            frame_pred_frame_dct: false,
            concealment_motion_vectors: false,
            q_scale_type: true,
            intra_vlc_format: true,
            alternate_scan: true,
            repeat_first_field: false,
            progressive_frame: false,
            has_coding_extension: true,
        }
    }

    #[test]
    fn sequence_round_trip_and_frame_period() {
        let seq = sample_sequence();
        let mut w = BitWriter::new();
        syntax::write_sequence(&mut w, &seq);
        let bytes = w.into_bytes();
        let mut c = BitCursor::new(&bytes);
        assert_eq!(c.next_start_code(), Some(SEQUENCE_HEADER_CODE));
        let parsed = parse_sequence(&mut c).unwrap();
        assert_eq!(parsed, seq);
        assert_eq!(parsed.frame_rate().period_seconds(), 0.04);
        assert_eq!(parsed.bit_rate(), 1_000_000);
        // Nothing overran into the next unit.
        assert!(c.bits_consumed() <= c.total_bits());
    }

    #[test]
    fn default_matrices_when_load_flags_clear() {
        let mut w = BitWriter::new();
        syntax::write_sequence(&mut w, &sample_sequence());
        let bytes = w.into_bytes();
        let mut c = BitCursor::new(&bytes);
        c.next_start_code();
        let seq = parse_sequence_header(&mut c).unwrap();
        assert_eq!(seq.intra_quant_matrix, QuantMatrix::default_intra());
        assert_eq!(seq.non_intra_quant_matrix, QuantMatrix([16; 64]));
    }

    #[test]
    fn custom_matrices_round_trip() {
        let mut seq = sample_sequence();
        seq.intra_quant_matrix = QuantMatrix(std::array::from_fn(|i| (i as u8) + 1));
        seq.non_intra_quant_matrix = QuantMatrix(std::array::from_fn(|i| 200 - i as u8));
        let mut w = BitWriter::new();
        syntax::write_sequence(&mut w, &seq);
        let bytes = w.into_bytes();
        let mut c = BitCursor::new(&bytes);
        c.next_start_code();
        assert_eq!(parse_sequence(&mut c).unwrap(), seq);
    }

    #[test]
    fn forbidden_frame_rate_code() {
        let mut seq = sample_sequence();
        seq.frame_rate_code = 0;
        let mut w = BitWriter::new();
        syntax::write_sequence(&mut w, &seq);
        let bytes = w.into_bytes();
        let mut c = BitCursor::new(&bytes);
        c.next_start_code();
        assert!(matches!(
            parse_sequence_header(&mut c),
            Err(Error::MalformedHeader(_))
        ));
    }

    #[test]
    fn missing_sequence_extension_is_unsupported() {
        let seq = sample_sequence();
        let mut w = BitWriter::new();
        syntax::write_sequence_header(&mut w, &seq);
        syntax::write_gop(&mut w, &GopInfo::default());
        let bytes = w.into_bytes();
        let mut c = BitCursor::new(&bytes);
        c.next_start_code();
        assert!(matches!(
            parse_sequence(&mut c),
            Err(Error::UnsupportedStream(_))
        ));
    }

    #[test]
    fn chroma_422_is_unsupported() {
        let seq = sample_sequence();
        let mut w = BitWriter::new();
        syntax::write_sequence_header(&mut w, &seq);
        w.start_code(EXTENSION_START_CODE);
        w.put_bits(1, 4);
        w.put_bits(0x48, 8);
        w.put_bits(1, 1);
        w.put_bits(2, 2); // 4:2:2
        w.put_bits(0, 4);
        w.put_bits(0, 12);
        w.put_bits(1, 1);
        w.put_bits(0, 8);
        w.put_bits(0, 8);
        let bytes = w.into_bytes();
        let mut c = BitCursor::new(&bytes);
        c.next_start_code();
        assert!(matches!(
            parse_sequence(&mut c),
            Err(Error::UnsupportedStream(_))
        ));
    }

    #[test]
    fn gop_header_cases() {
        let gop = GopInfo {
            closed_gop: true,
            ..GopInfo::default()
        };
        let mut w = BitWriter::new();
        syntax::write_gop(&mut w, &gop);
        let bytes = w.into_bytes();
        let mut c = BitCursor::new(&bytes);
        assert_eq!(c.next_start_code(), Some(GROUP_START_CODE));
        assert_eq!(parse_gop_header(&mut c).unwrap(), gop);

        let bad = GopInfo {
            seconds: 61,
            ..GopInfo::default()
        };
        let mut w = BitWriter::new();
        syntax::write_gop(&mut w, &bad);
        let bytes = w.into_bytes();
        let mut c = BitCursor::new(&bytes);
        c.next_start_code();
        assert!(matches!(
            parse_gop_header(&mut c),
            Err(Error::MalformedHeader(_))
        ));
    }

    #[test]
    fn picture_header_consumes_legacy_fields_by_type() {
        for (t, legacy_bits) in [(PictureType::I, 0), (PictureType::P, 4), (PictureType::B, 8)] {
            let pic = sample_picture(t);
            let mut w = BitWriter::new();
            syntax::write_picture_header(&mut w, &pic);
            let bytes = w.into_bytes();
            let mut c = BitCursor::new(&bytes);
            assert_eq!(c.next_start_code(), Some(PICTURE_START_CODE));
            let parsed = parse_picture_header(&mut c).unwrap();
            assert_eq!(parsed.coding_type, t);
            assert_eq!(parsed.temporal_reference, 3);
            assert_eq!(parsed.vbv_delay, 0x1234);
            // 10 + 3 + 16 fixed bits, legacy f_code fields, extra_bit_picture.
            assert_eq!(c.bits_consumed(), 32 + 29 + legacy_bits + 1);
        }
    }

    #[test]
    fn d_pictures_rejected() {
        let mut w = BitWriter::new();
        w.start_code(PICTURE_START_CODE);
        w.put_bits(0, 10);
        w.put_bits(4, 3);
        w.put_bits(0xFFFF, 16);
        w.put_bits(0, 1);
        let bytes = w.into_bytes();
        let mut c = BitCursor::new(&bytes);
        c.next_start_code();
        assert!(matches!(
            parse_picture_header(&mut c),
            Err(Error::MalformedHeader(_))
        ));
    }

    #[test]
    fn picture_with_coding_extension_round_trip() {
        let mut seq = sample_sequence();
        for t in [PictureType::I, PictureType::P, PictureType::B] {
            let pic = sample_picture(t);
            let mut w = BitWriter::new();
            syntax::write_picture_header(&mut w, &pic);
            syntax::write_picture_coding_extension(&mut w, &pic);
            let bytes = w.into_bytes();
            let mut c = BitCursor::new(&bytes);
            c.next_start_code();
            let mut parsed = parse_picture_header(&mut c).unwrap();
            assert_eq!(c.next_start_code(), Some(EXTENSION_START_CODE));
            let id = parse_extension(
                &mut c,
                ExtensionScope::Picture {
                    seq: &mut seq,
                    pic: &mut parsed,
                },
            )
            .unwrap();
            assert_eq!(id.0, ExtensionId::PICTURE_CODING);
            assert_eq!(parsed, pic);
        }
    }

    #[test]
    fn intra_dc_precision_code_zero_is_eight_bits() {
        let mut pic = sample_picture(PictureType::I);
        pic.intra_dc_precision = 8;
        let mut w = BitWriter::new();
        syntax::write_picture_coding_extension(&mut w, &pic);
        let bytes = w.into_bytes();
        let mut c = BitCursor::new(&bytes);
        c.next_start_code();
        let mut seq = sample_sequence();
        let mut parsed = sample_picture(PictureType::I);
        parse_extension(
            &mut c,
            ExtensionScope::Picture {
                seq: &mut seq,
                pic: &mut parsed,
            },
        )
        .unwrap();
        assert_eq!(parsed.intra_dc_precision, 8);
    }

    #[test]
    fn quant_matrix_extension() {
        let mut seq = sample_sequence();
        let mut pic = sample_picture(PictureType::I);
        // load flags all 0: nothing changes.
        let mut w = BitWriter::new();
        syntax::write_quant_matrix_extension(&mut w, None, None);
        let bytes = w.into_bytes();
        let mut c = BitCursor::new(&bytes);
        c.next_start_code();
        let before = seq.clone();
        parse_extension(
            &mut c,
            ExtensionScope::Picture {
                seq: &mut seq,
                pic: &mut pic,
            },
        )
        .unwrap();
        assert_eq!(seq, before);

        let m = QuantMatrix([9; 64]);
        let mut w = BitWriter::new();
        syntax::write_quant_matrix_extension(&mut w, None, Some(&m));
        let bytes = w.into_bytes();
        let mut c = BitCursor::new(&bytes);
        c.next_start_code();
        parse_extension(
            &mut c,
            ExtensionScope::Picture {
                seq: &mut seq,
                pic: &mut pic,
            },
        )
        .unwrap();
        assert_eq!(seq.non_intra_quant_matrix, m);
        assert_eq!(seq.intra_quant_matrix, before.intra_quant_matrix);
    }

    #[test]
    fn slice_header_cases() {
        let seq = sample_sequence();
        let mut pic = sample_picture(PictureType::I);
        pic.q_scale_type = false;
        let mut w = BitWriter::new();
        syntax::write_slice_header(&mut w, 1, 8);
        let bytes = w.into_bytes();
        let mut c = BitCursor::new(&bytes);
        let code = c.next_start_code().unwrap();
        let s = parse_slice_header(&mut c, code, &seq, &pic).unwrap();
        assert_eq!(s.quantiser_scale, 16);
        assert_eq!(s.mb_row(), 0);

        let mut w = BitWriter::new();
        syntax::write_slice_header(&mut w, 3, 8);
        let bytes = w.into_bytes();
        let mut c = BitCursor::new(&bytes);
        let code = c.next_start_code().unwrap();
        let s = parse_slice_header(&mut c, code, &seq, &pic).unwrap();
        assert_eq!(s.vertical_position, 3);
        assert_eq!(s.mb_row(), 2);

        let mut w = BitWriter::new();
        w.start_code(1);
        w.put_bits(0, 5);
        w.put_bits(0, 1);
        let bytes = w.into_bytes();
        let mut c = BitCursor::new(&bytes);
        let code = c.next_start_code().unwrap();
        assert!(matches!(
            parse_slice_header(&mut c, code, &seq, &pic),
            Err(Error::MalformedHeader(_))
        ));
    }

    #[test]
    fn slice_header_with_extra_information() {
        let seq = sample_sequence();
        let pic = sample_picture(PictureType::I);
        let mut w = BitWriter::new();
        w.start_code(5);
        w.put_bits(4, 5);
        w.put_bits(1, 1); // intra_slice_flag
        w.put_bits(1, 1); // intra_slice
        w.put_bits(0, 7);
        w.put_bits(1, 1);
        w.put_bits(0xAA, 8);
        w.put_bits(0, 1);
        let bytes = w.into_bytes();
        let mut c = BitCursor::new(&bytes);
        let code = c.next_start_code().unwrap();
        let s = parse_slice_header(&mut c, code, &seq, &pic).unwrap();
        assert!(s.intra_slice);
        assert_eq!(s.quantiser_scale, 4); // nonlinear table, code 4
        assert_eq!(c.bits_consumed(), 32 + 5 + 1 + 1 + 7 + 9 + 1);
    }

    #[test]
    fn nonlinear_table_endpoints() {
        assert_eq!(quantiser_scale(1, true), 1);
        assert_eq!(quantiser_scale(9, true), 10);
        assert_eq!(quantiser_scale(31, true), 112);
        assert_eq!(quantiser_scale(31, false), 62);
    }

    proptest! {
        #[test]
        fn gop_round_trip(h in 0u8..24, m in 0u8..60, s in 0u8..60, p in 0u8..60,
                          closed in any::<bool>(), broken in any::<bool>()) {
            let gop = GopInfo { drop_frame: false, hours: h, minutes: m, seconds: s,
                                pictures: p, closed_gop: closed, broken_link: broken };
            let mut w = BitWriter::new();
            syntax::write_gop(&mut w, &gop);
            let bytes = w.into_bytes();
            let mut c = BitCursor::new(&bytes);
            c.next_start_code();
            prop_assert_eq!(parse_gop_header(&mut c).unwrap(), gop);
            let mut again = BitCursor::new(&bytes);
            again.next_start_code();
            prop_assert_eq!(parse_gop_header(&mut again).unwrap(), gop);
        }
    }
}
