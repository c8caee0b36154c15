//! Per-frame bandwidth characterization: coded size, decode-clock time,
//! buffer (VBV) fullness and quantisation error of every picture, plus
//! stream-level summaries.

use num_rational::Ratio;
use num_traits::ToPrimitive;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::headers::{PictureInfo, PictureType, SequenceInfo, VBV_DELAY_VARIABLE};

/// Ticks per second of the clock `vbv_delay` is measured in.
pub const VBV_DELAY_CLOCK: i128 = 90_000;

/// Clipping observed while reconstructing one picture.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct QuantErrors {
    /// Largest correction applied when saturating coefficients to
    /// [−2048, 2047], in coefficient units.
    pub coefficient_saturation_max: u32,
    /// Largest correction applied when clipping IDCT output to [−256, 255],
    /// in sample units.
    pub idct_clip_max: u32,
}

impl QuantErrors {
    pub fn merge(self, other: QuantErrors) -> QuantErrors {
        QuantErrors {
            coefficient_saturation_max: self
                .coefficient_saturation_max
                .max(other.coefficient_saturation_max),
            idct_clip_max: self.idct_clip_max.max(other.idct_clip_max),
        }
    }
}

/// Statistics of one coded frame (a frame picture or a field pair).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FrameStats {
    /// Position in decode order.
    pub frame_index: u64,
    /// Coding type and temporal reference, such as `B2`.
    pub frame_name: String,
    pub coding_type: PictureType,
    pub bits: u64,
    /// Decode-clock time in seconds, `frame_index` frame periods.
    pub decode_time: Ratio<u64>,
    /// Buffer fullness after this picture is removed, rounded down.
    pub vbv_fullness_bits: u64,
    pub vbv_underflow: bool,
    pub vbv_overflow: bool,
    pub quant_error_max: u32,
    pub idct_clip_max: u32,
    /// Size of the previous frame in decode order (0 for the first).
    pub prev_decoded_size_bits: u64,
}

impl FrameStats {
    pub fn decode_time_seconds(&self) -> f64 {
        ratio_to_f64(self.decode_time)
    }
}

fn ratio_to_f64(r: Ratio<u64>) -> f64 {
    r.to_f64().unwrap_or(f64::NAN)
}

/// Video buffering verifier: a buffer filled at the stream bit rate and
/// drained by one picture per frame period, tracked exactly.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VbvModel {
    fullness: Ratio<i128>,
    inflow_per_frame: Ratio<i128>,
    size: Ratio<i128>,
}

/// Outcome of one [`VbvModel::update`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VbvUpdate {
    pub fullness_bits: u64,
    pub underflow: bool,
    pub overflow: bool,
}

impl VbvModel {
    /// Starts from `bit_rate · vbv_delay / 90000` bits, or half the buffer
    /// when `vbv_delay` signals variable bit rate.
    pub fn new(seq: &SequenceInfo, first_vbv_delay: u16) -> VbvModel {
        let rate = seq.frame_rate();
        let bit_rate = i128::from(seq.bit_rate());
        let size = Ratio::from_integer(i128::from(seq.vbv_buffer_size_bits()));
        let fullness = if first_vbv_delay == VBV_DELAY_VARIABLE {
            size / 2
        } else {
            Ratio::new(bit_rate * i128::from(first_vbv_delay), VBV_DELAY_CLOCK)
        };
        VbvModel {
            fullness,
            inflow_per_frame: Ratio::new(bit_rate * i128::from(rate.den), i128::from(rate.num)),
            size,
        }
    }

    /// Exact fullness in bits.
    pub fn fullness(&self) -> Ratio<i128> {
        self.fullness
    }

    /// Adds one frame period of inflow, removes the picture, and clamps to
    /// the buffer, flagging (not failing on) underflow and overflow.
    pub fn update(&mut self, picture_bits: u64) -> VbvUpdate {
        let next = self.fullness + self.inflow_per_frame - Ratio::from_integer(i128::from(picture_bits));
        let zero = Ratio::from_integer(0);
        let underflow = next < zero;
        let overflow = next > self.size;
        self.fullness = next.clamp(zero, self.size);
        VbvUpdate {
            fullness_bits: self.fullness.floor().to_integer() as u64,
            underflow,
            overflow,
        }
    }
}

/// Accumulates [`FrameStats`] in decode order.
#[derive(Debug, Clone)]
pub struct BandwidthState {
    vbv: Option<VbvModel>,
    frames: Vec<FrameStats>,
}

impl Default for BandwidthState {
    fn default() -> Self {
        Self::new()
    }
}

impl BandwidthState {
    pub fn new() -> Self {
        BandwidthState {
            vbv: None,
            frames: Vec::new(),
        }
    }

    pub fn frames(&self) -> &[FrameStats] {
        &self.frames
    }

    pub fn into_frames(self) -> Vec<FrameStats> {
        self.frames
    }

    /// Records a frame whose coded data spans bits `bit_start..bit_end` of
    /// the stream.
    pub fn account_picture(
        &mut self,
        bit_start: u64,
        bit_end: u64,
        pic: &PictureInfo,
        seq: &SequenceInfo,
        errors: QuantErrors,
    ) -> &FrameStats {
        assert!(bit_start < bit_end, "empty picture span {bit_start}..{bit_end}");
        let bits = bit_end - bit_start;
        let index = self.frames.len() as u64;
        let rate = seq.frame_rate();
        let vbv = self
            .vbv
            .get_or_insert_with(|| VbvModel::new(seq, pic.vbv_delay))
            .update(bits);
        let stats = FrameStats {
            frame_index: index,
            frame_name: format!("{}{}", pic.coding_type.letter(), pic.temporal_reference),
            coding_type: pic.coding_type,
            bits,
            decode_time: Ratio::new(index * u64::from(rate.den), u64::from(rate.num)),
            vbv_fullness_bits: vbv.fullness_bits,
            vbv_underflow: vbv.underflow,
            vbv_overflow: vbv.overflow,
            quant_error_max: errors.coefficient_saturation_max,
            idct_clip_max: errors.idct_clip_max,
            prev_decoded_size_bits: self.frames.last().map_or(0, |f| f.bits),
        };
        self.frames.push(stats);
        self.frames.last().unwrap()
    }
}

/// Counts of frames with buffer flags raised.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct VbvFlags {
    pub underflow_frames: u64,
    pub overflow_frames: u64,
}

/// Per-frame statistics plus stream-level summaries.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BandwidthReport {
    pub stream_label: String,
    pub per_frame: Vec<FrameStats>,
    /// Running sum of `bits`, one entry per frame.
    pub cumulative_bits: Vec<u64>,
    pub total_bits: u64,
    pub min_bits: u64,
    pub max_bits: u64,
    pub avg_bits: Ratio<u64>,
    /// `avg_bits` rounded to the nearest bit, halves up.
    pub avg_bits_rounded: u64,
    pub frame_period: Ratio<u64>,
    pub bit_rate: u64,
    pub vbv_buffer_size_bits: u64,
    pub flags: VbvFlags,
    pub idct_clip_max: u32,
}

impl BandwidthReport {
    pub fn frame_period_seconds(&self) -> f64 {
        ratio_to_f64(self.frame_period)
    }

    pub fn avg_bits_f64(&self) -> f64 {
        ratio_to_f64(self.avg_bits)
    }
}

/// Builds the report for a non-empty list of frames.
pub fn summarize(per_frame: Vec<FrameStats>, seq: &SequenceInfo, label: &str) -> Result<BandwidthReport> {
    if per_frame.is_empty() {
        return Err(Error::EmptyStream);
    }
    let cumulative_bits: Vec<u64> = per_frame
        .iter()
        .scan(0u64, |acc, f| {
            *acc += f.bits;
            Some(*acc)
        })
        .collect();
    let total_bits = *cumulative_bits.last().unwrap();
    let n = per_frame.len() as u64;
    let avg_bits = Ratio::new(total_bits, n);
    let rate = seq.frame_rate();
    let flags = VbvFlags {
        underflow_frames: per_frame.iter().filter(|f| f.vbv_underflow).count() as u64,
        overflow_frames: per_frame.iter().filter(|f| f.vbv_overflow).count() as u64,
    };
    Ok(BandwidthReport {
        stream_label: label.to_owned(),
        min_bits: per_frame.iter().map(|f| f.bits).min().unwrap(),
        max_bits: per_frame.iter().map(|f| f.bits).max().unwrap(),
        avg_bits,
        avg_bits_rounded: (2 * total_bits + n) / (2 * n),
        frame_period: Ratio::new(u64::from(rate.den), u64::from(rate.num)),
        bit_rate: seq.bit_rate(),
        vbv_buffer_size_bits: seq.vbv_buffer_size_bits(),
        flags,
        idct_clip_max: per_frame.iter().map(|f| f.idct_clip_max).max().unwrap(),
        cumulative_bits,
        total_bits,
        per_frame,
    })
}
