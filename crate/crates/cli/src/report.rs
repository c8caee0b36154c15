//! CSV and JSON renderings of a [`BandwidthReport`].

use std::io::{self, Write};

use m2vscope::bandwidth::{BandwidthReport, FrameStats};
use num_rational::Ratio;
use num_traits::ToPrimitive;
use serde::Serialize;

/// CSV header, in column order.
pub const CSV_COLUMNS: [&str; 9] = [
    "frame_index",
    "frame_name",
    "coding_type",
    "bits",
    "decode_time_s",
    "cumulative_bits",
    "vbv_fullness_bits",
    "quant_error_max",
    "prev_decoded_size_bits",
];

/// Run facts that are not part of the bandwidth report itself.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Extra {
    pub concealed_macroblocks: usize,
    pub dropped_pictures: usize,
}

fn seconds(r: Ratio<u64>) -> f64 {
    r.to_f64().unwrap_or(f64::NAN)
}

pub fn write_csv(report: &BandwidthReport, w: &mut dyn Write) -> io::Result<()> {
    let mut out = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(w);
    out.write_record(CSV_COLUMNS)?;
    for (f, cumulative) in report.per_frame.iter().zip(&report.cumulative_bits) {
        out.write_record([
            f.frame_index.to_string(),
            f.frame_name.clone(),
            f.coding_type.letter().to_string(),
            f.bits.to_string(),
            seconds(f.decode_time).to_string(),
            cumulative.to_string(),
            f.vbv_fullness_bits.to_string(),
            f.quant_error_max.to_string(),
            f.prev_decoded_size_bits.to_string(),
        ])?;
    }
    out.flush()
}

#[derive(Serialize)]
struct JsonFrame<'a> {
    frame_index: u64,
    frame_name: &'a str,
    coding_type: String,
    bits: u64,
    decode_time_s: f64,
    decode_time_rational: RationalJson,
    cumulative_bits: u64,
    vbv_fullness_bits: u64,
    vbv_underflow: bool,
    vbv_overflow: bool,
    quant_error_max: u32,
    idct_clip_max: u32,
    prev_decoded_size_bits: u64,
}

#[derive(Serialize)]
struct RationalJson {
    numerator: u64,
    denominator: u64,
}

impl From<Ratio<u64>> for RationalJson {
    fn from(r: Ratio<u64>) -> Self {
        RationalJson {
            numerator: *r.numer(),
            denominator: *r.denom(),
        }
    }
}

#[derive(Serialize)]
struct Flags {
    vbv_underflow_frames: u64,
    vbv_overflow_frames: u64,
    concealed_macroblocks: usize,
    dropped_pictures: usize,
}

#[derive(Serialize)]
struct Summary {
    frames: usize,
    total_bits: u64,
    min_bits: u64,
    max_bits: u64,
    avg_bits_rational: RationalJson,
    avg_bits_rounded: u64,
    bit_rate: u64,
    frame_period_s: f64,
    vbv_buffer_size_bits: u64,
    idct_clip_max: u32,
    flags: Flags,
}

#[derive(Serialize)]
struct JsonReport<'a> {
    stream_label: &'a str,
    frames: Vec<JsonFrame<'a>>,
    summary: Summary,
}

fn frame_json<'a>(f: &'a FrameStats, cumulative_bits: u64) -> JsonFrame<'a> {
    JsonFrame {
        frame_index: f.frame_index,
        frame_name: &f.frame_name,
        coding_type: f.coding_type.letter().to_string(),
        bits: f.bits,
        decode_time_s: seconds(f.decode_time),
        decode_time_rational: f.decode_time.into(),
        cumulative_bits,
        vbv_fullness_bits: f.vbv_fullness_bits,
        vbv_underflow: f.vbv_underflow,
        vbv_overflow: f.vbv_overflow,
        quant_error_max: f.quant_error_max,
        idct_clip_max: f.idct_clip_max,
        prev_decoded_size_bits: f.prev_decoded_size_bits,
    }
}

pub fn write_json(report: &BandwidthReport, extra: &Extra, w: &mut dyn Write) -> io::Result<()> {
    let doc = JsonReport {
        stream_label: &report.stream_label,
        frames: report
            .per_frame
            .iter()
            .zip(&report.cumulative_bits)
            .map(|(f, &c)| frame_json(f, c))
            .collect(),
        summary: Summary {
            frames: report.per_frame.len(),
            total_bits: report.total_bits,
            min_bits: report.min_bits,
            max_bits: report.max_bits,
            avg_bits_rational: report.avg_bits.into(),
            avg_bits_rounded: report.avg_bits_rounded,
            bit_rate: report.bit_rate,
            frame_period_s: seconds(report.frame_period),
            vbv_buffer_size_bits: report.vbv_buffer_size_bits,
            idct_clip_max: report.idct_clip_max,
            flags: Flags {
                vbv_underflow_frames: report.flags.underflow_frames,
                vbv_overflow_frames: report.flags.overflow_frames,
                concealed_macroblocks: extra.concealed_macroblocks,
                dropped_pictures: extra.dropped_pictures,
            },
        },
    };
    serde_json::to_writer_pretty(&mut *w, &doc)?;
    w.write_all(b"\n")
}
