//! Header writers, the inverse of the parsers in [`crate::headers`].

use super::BitWriter;
use crate::bitio::{
    EXTENSION_START_CODE, GROUP_START_CODE, PICTURE_START_CODE, SEQUENCE_END_CODE,
    SEQUENCE_HEADER_CODE,
};
use crate::headers::{ChromaFormat, ExtensionId, GopInfo, PictureInfo, PictureType, SequenceInfo};
use crate::transform::QuantMatrix;

fn put_matrix(w: &mut BitWriter, m: &QuantMatrix) {
    for v in m.to_zigzag() {
        w.put_bits(u32::from(v), 8);
    }
}

pub fn write_sequence_header(w: &mut BitWriter, seq: &SequenceInfo) {
    w.start_code(SEQUENCE_HEADER_CODE);
    w.put_bits(seq.horizontal_size & 0xFFF, 12);
    w.put_bits(seq.vertical_size & 0xFFF, 12);
    w.put_bits(u32::from(seq.aspect_ratio_code), 4);
    w.put_bits(u32::from(seq.frame_rate_code), 4);
    w.put_bits(seq.bit_rate_value & 0x3FFFF, 18);
    w.put_bit(true);
    w.put_bits(seq.vbv_buffer_size_value & 0x3FF, 10);
    w.put_bit(seq.constrained_parameters);
    for (m, default) in [
        (&seq.intra_quant_matrix, QuantMatrix::default_intra()),
        (&seq.non_intra_quant_matrix, QuantMatrix::default_non_intra()),
    ] {
        let load = *m != default;
        w.put_bit(load);
        if load {
            put_matrix(w, m);
        }
    }
}

pub fn write_sequence_extension(w: &mut BitWriter, seq: &SequenceInfo) {
    w.start_code(EXTENSION_START_CODE);
    w.put_bits(ExtensionId::SEQUENCE, 4);
    w.put_bits(u32::from(seq.profile_and_level), 8);
    w.put_bit(seq.progressive_sequence);
    w.put_bits(
        match seq.chroma_format {
            ChromaFormat::Yuv420 => 1,
            ChromaFormat::Yuv422 => 2,
            ChromaFormat::Yuv444 => 3,
        },
        2,
    );
    w.put_bits(seq.horizontal_size >> 12, 2);
    w.put_bits(seq.vertical_size >> 12, 2);
    w.put_bits(seq.bit_rate_value >> 18, 12);
    w.put_bit(true);
    w.put_bits(seq.vbv_buffer_size_value >> 10, 8);
    w.put_bit(seq.low_delay);
    w.put_bits(u32::from(seq.frame_rate_extension_n), 2);
    w.put_bits(u32::from(seq.frame_rate_extension_d), 5);
}

/// Sequence header followed by its sequence extension.
pub fn write_sequence(w: &mut BitWriter, seq: &SequenceInfo) {
    write_sequence_header(w, seq);
    write_sequence_extension(w, seq);
}

pub fn write_gop(w: &mut BitWriter, gop: &GopInfo) {
    w.start_code(GROUP_START_CODE);
    w.put_bit(gop.drop_frame);
    w.put_bits(u32::from(gop.hours), 5);
    w.put_bits(u32::from(gop.minutes), 6);
    w.put_bit(true);
    w.put_bits(u32::from(gop.seconds), 6);
    w.put_bits(u32::from(gop.pictures), 6);
    w.put_bit(gop.closed_gop);
    w.put_bit(gop.broken_link);
}

pub fn write_picture_header(w: &mut BitWriter, pic: &PictureInfo) {
    w.start_code(PICTURE_START_CODE);
    w.put_bits(u32::from(pic.temporal_reference), 10);
    w.put_bits(pic.coding_type.code(), 3);
    w.put_bits(u32::from(pic.vbv_delay), 16);
    if pic.coding_type != PictureType::I {
        // full_pel_forward_vector 0, forward_f_code 7
        w.put_bits(0b0111, 4);
    }
    if pic.coding_type == PictureType::B {
        w.put_bits(0b0111, 4);
    }
    w.put_bit(false);
}

pub fn write_picture_coding_extension(w: &mut BitWriter, pic: &PictureInfo) {
    w.start_code(EXTENSION_START_CODE);
    w.put_bits(ExtensionId::PICTURE_CODING, 4);
    for dir in pic.f_codes {
        for f in dir {
            w.put_bits(u32::from(f), 4);
        }
    }
    w.put_bits(u32::from(pic.intra_dc_precision - 8), 2);
    w.put_bits(pic.structure.code(), 2);
    w.put_bit(pic.top_field_first);
    w.put_bit(pic.frame_pred_frame_dct);
    w.put_bit(pic.concealment_motion_vectors);
    w.put_bit(pic.q_scale_type);
    w.put_bit(pic.intra_vlc_format);
    w.put_bit(pic.alternate_scan);
    w.put_bit(pic.repeat_first_field);
    // chroma_420_type mirrors progressive_frame
    w.put_bit(pic.progressive_frame);
    w.put_bit(pic.progressive_frame);
    w.put_bit(false);
}

pub fn write_quant_matrix_extension(
    w: &mut BitWriter,
    intra: Option<&QuantMatrix>,
    non_intra: Option<&QuantMatrix>,
) {
    w.start_code(EXTENSION_START_CODE);
    w.put_bits(ExtensionId::QUANT_MATRIX, 4);
    for m in [intra, non_intra] {
        w.put_bit(m.is_some());
        if let Some(m) = m {
            put_matrix(w, m);
        }
    }
    w.put_bits(0, 2);
}

/// Slice start code, quantiser_scale_code and a clear `extra_bit_slice`.
pub fn write_slice_header(w: &mut BitWriter, vertical_position: u8, quantiser_scale_code: u8) {
    w.start_code(vertical_position);
    w.put_bits(u32::from(quantiser_scale_code), 5);
    w.put_bit(false);
}

pub fn write_sequence_end(w: &mut BitWriter) {
    w.start_code(SEQUENCE_END_CODE);
}
