//! Stream decoding: start-code dispatch, slice-parallel reconstruction,
//! slice-loss concealment, field assembly, display reordering and
//! per-frame bandwidth accounting.

use std::sync::Arc;

use log::{debug, warn};
use serde::Serialize;

use crate::bandwidth::{summarize, BandwidthReport, BandwidthState, FrameStats, QuantErrors};
use crate::bitio::{
    find_start_code, is_slice_start_code, BitCursor, EXTENSION_START_CODE, GROUP_START_CODE,
    PICTURE_START_CODE, SEQUENCE_END_CODE, SEQUENCE_HEADER_CODE, USER_DATA_START_CODE,
};
use crate::framestore::{write_field_or_frame, FieldTarget, FramePicture, FrameStore, Plane, ReferencePair};
use crate::headers::{
    parse_extension, parse_gop_header, parse_picture_header, parse_sequence, parse_slice_header,
    ExtensionScope, GopInfo, PictureInfo, PictureStructure, PictureType, SequenceInfo,
};
use crate::macroblock::{decode_slice_macroblocks, MacroblockMotion, MacroblockRec};
use crate::motion::{
    boundary_variation, conceal_select_mv, predict, select_reference, BlockBoundary,
    DirectionalPrediction, FieldVector, MacroblockPrediction, MotionVector, PredictionMode,
    PredictionRequest, RefDirection,
};
use crate::par::{self, ExecMode};
use crate::transform::{idct_8x8, inverse_quantize, reconstruct_block, PixelBlock, QuantParams, ScanMatrix};
use crate::{Error, Result};

/// What to do when slice data cannot be decoded.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum Strictness {
    /// The first error aborts decoding.
    Strict,
    /// Damaged slices are dropped and their macroblocks concealed.
    #[default]
    Tolerant,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct DecodeOptions {
    pub strictness: Strictness,
    /// Stop once this many frames have been decoded and accounted.
    pub max_frames: Option<usize>,
    pub exec: ExecMode,
}

/// One macroblock filled in by concealment.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ConcealedMacroblock {
    pub address: usize,
    /// Vector chosen by boundary matching; `None` when no reference
    /// existed and the area was filled with mid-gray.
    pub vector: Option<MotionVector>,
    /// Boundary variation of the chosen prediction.
    pub variation: Option<u64>,
}

/// Concealed macroblocks of one macroblock row.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ConcealmentEvent {
    pub frame_index: u64,
    /// Field parity for field pictures.
    pub field: Option<usize>,
    pub mb_row: usize,
    pub reason: String,
    pub macroblocks: Vec<ConcealedMacroblock>,
}

/// Location of one slice in the stream.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SliceSpan {
    pub start_code: u8,
    /// Bit offset of the slice start code prefix.
    pub bit_start: u64,
    /// Bit offset of the next start code prefix (or end of data).
    pub bit_end: u64,
    /// Set when the slice failed to decode and was discarded.
    pub error: Option<String>,
}

/// One coded picture (a frame or a single field).
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PictureRecord {
    pub frame_index: u64,
    pub temporal_reference: u16,
    pub coding_type: PictureType,
    pub structure: PictureStructure,
    /// Bit offset of the picture start code prefix.
    pub bit_start: u64,
    pub slices: Vec<SliceSpan>,
    /// Not reconstructed for lack of references.
    pub dropped: bool,
}

#[derive(Debug, Clone)]
pub struct DecodeOutput {
    pub sequence: SequenceInfo,
    /// Reconstructed frames in display order, cropped to the display size.
    pub frames: Vec<Arc<FramePicture>>,
    /// One row per frame in decode order.
    pub stats: Vec<FrameStats>,
    pub pictures: Vec<PictureRecord>,
    pub concealment: Vec<ConcealmentEvent>,
    /// Decode-order indices of frames that were accounted but not
    /// reconstructed.
    pub dropped: Vec<u64>,
    /// Bit offset where the first frame's data begins.
    pub first_picture_bit: u64,
    /// Bit offset where the last accounted frame's data ends.
    pub end_bit: u64,
}

impl DecodeOutput {
    pub fn report(&self, label: &str) -> Result<BandwidthReport> {
        summarize(self.stats.clone(), &self.sequence, label)
    }

    pub fn concealed_macroblocks(&self) -> usize {
        self.concealment.iter().map(|e| e.macroblocks.len()).sum()
    }
}

/// Decodes a complete elementary stream.
pub fn decode_stream(data: &[u8], options: &DecodeOptions) -> Result<DecodeOutput> {
    Decoder::new(data, *options).run()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Scope {
    None,
    Sequence,
    Gop,
    Picture,
}

struct OpenPicture {
    info: PictureInfo,
    start_bit: u64,
    record: usize,
    started: bool,
    decoded: bool,
}

struct OpenFrame {
    info: PictureInfo,
    span_start: u64,
    canvas: FramePicture,
    errors: QuantErrors,
    dropped: bool,
    /// Parity of the field decoded so far, while waiting for its partner.
    awaiting_second: Option<usize>,
    /// The frame as it stood after its first field.
    first_field: Option<Arc<FramePicture>>,
}

struct Decoder<'a> {
    data: &'a [u8],
    options: DecodeOptions,
    seq: Option<SequenceInfo>,
    gop: Option<GopInfo>,
    references_in_gop: usize,
    scope: Scope,
    store: FrameStore,
    bandwidth: BandwidthState,
    display: Vec<Arc<FramePicture>>,
    pictures: Vec<PictureRecord>,
    concealment: Vec<ConcealmentEvent>,
    dropped: Vec<u64>,
    picture: Option<OpenPicture>,
    frame: Option<OpenFrame>,
    first_picture_bit: Option<u64>,
    last_frame_end: Option<u64>,
}

impl<'a> Decoder<'a> {
    fn new(data: &'a [u8], options: DecodeOptions) -> Self {
        Decoder {
            data,
            options,
            seq: None,
            gop: None,
            references_in_gop: 0,
            scope: Scope::None,
            store: FrameStore::new(),
            bandwidth: BandwidthState::new(),
            display: Vec::new(),
            pictures: Vec::new(),
            concealment: Vec::new(),
            dropped: Vec::new(),
            picture: None,
            frame: None,
            first_picture_bit: None,
            last_frame_end: None,
        }
    }

    fn strict(&self) -> bool {
        self.options.strictness == Strictness::Strict
    }

    fn frames_done(&self) -> usize {
        self.bandwidth.frames().len()
    }

    fn limit_reached(&self) -> bool {
        self.options.max_frames.is_some_and(|n| self.frames_done() >= n)
    }

    fn cursor_at(&self, byte: usize) -> BitCursor<'a> {
        let mut c = BitCursor::new(self.data);
        c.seek_to_bit((byte as u64 + 4) * 8);
        c
    }

    fn run(mut self) -> Result<DecodeOutput> {
        let mut pos = 0;
        while let Some(at) = find_start_code(self.data, pos) {
            let code = self.data[at + 3];
            let bit = at as u64 * 8;
            pos = at + 4;
            match code {
                PICTURE_START_CODE => {
                    self.close_picture(bit)?;
                    if self.limit_reached() {
                        break;
                    }
                    pos = self.open_picture(at)?;
                }
                c if is_slice_start_code(c) => {
                    pos = self.slices(at)?;
                }
                SEQUENCE_HEADER_CODE => {
                    self.close_picture(bit)?;
                    self.close_pending_frame(bit)?;
                    if self.limit_reached() {
                        break;
                    }
                    pos = self.sequence_header(at)?;
                }
                GROUP_START_CODE => {
                    self.close_picture(bit)?;
                    self.close_pending_frame(bit)?;
                    if self.limit_reached() {
                        break;
                    }
                    let mut c = self.cursor_at(at);
                    let gop = parse_gop_header(&mut c)?;
                    debug!("GOP closed={} broken_link={}", gop.closed_gop, gop.broken_link);
                    self.gop = Some(gop);
                    self.references_in_gop = 0;
                    self.scope = Scope::Gop;
                    pos = c.bits_consumed().div_ceil(8) as usize;
                }
                EXTENSION_START_CODE => self.extension(at)?,
                USER_DATA_START_CODE => {}
                SEQUENCE_END_CODE => {
                    self.close_picture(bit)?;
                    self.close_pending_frame(bit)?;
                    self.scope = Scope::None;
                    if self.limit_reached() {
                        break;
                    }
                }
                other => {
                    if self.strict() {
                        return Err(Error::MalformedStream(format!(
                            "unexpected start code 0x{other:02X} at byte {at}"
                        )));
                    }
                    warn!("ignoring start code 0x{other:02X} at byte {at}");
                }
            }
        }
        if !self.limit_reached() {
            let end = self.data.len() as u64 * 8;
            self.close_picture(end)?;
            self.close_pending_frame(end)?;
        }
        self.finish()
    }

    fn finish(mut self) -> Result<DecodeOutput> {
        let sequence = self
            .seq
            .ok_or_else(|| Error::MalformedHeader("no sequence header found".into()))?;
        if self.bandwidth.frames().is_empty() {
            return Err(Error::EmptyStream);
        }
        self.display.extend(self.store.flush());
        let (w, h) = (sequence.horizontal_size as usize, sequence.vertical_size as usize);
        let frames = self
            .display
            .into_iter()
            .map(|f| {
                if f.width() == w && f.height() == h {
                    f
                } else {
                    Arc::new(f.cropped(w, h))
                }
            })
            .collect();
        Ok(DecodeOutput {
            sequence,
            frames,
            stats: self.bandwidth.into_frames(),
            pictures: self.pictures,
            concealment: self.concealment,
            dropped: self.dropped,
            first_picture_bit: self.first_picture_bit.unwrap_or(0),
            end_bit: self.last_frame_end.unwrap_or(0),
        })
    }

    fn sequence_header(&mut self, at: usize) -> Result<usize> {
        let mut c = self.cursor_at(at);
        let seq = parse_sequence(&mut c)?;
        if let Some(prev) = &self.seq {
            if (prev.horizontal_size, prev.vertical_size) != (seq.horizontal_size, seq.vertical_size) {
                return Err(Error::UnsupportedStream(format!(
                    "picture size changes from {}x{} to {}x{}",
                    prev.horizontal_size, prev.vertical_size, seq.horizontal_size, seq.vertical_size
                )));
            }
        }
        debug!(
            "sequence {}x{} bit_rate={} vbv={} bits",
            seq.horizontal_size,
            seq.vertical_size,
            seq.bit_rate(),
            seq.vbv_buffer_size_bits()
        );
        self.seq = Some(seq);
        self.scope = Scope::Sequence;
        Ok(c.bits_consumed().div_ceil(8) as usize)
    }

    fn extension(&mut self, at: usize) -> Result<()> {
        let mut c = self.cursor_at(at);
        let Some(seq) = self.seq.as_mut() else {
            return Ok(());
        };
        let scope = match (self.scope, self.picture.as_mut()) {
            (Scope::Picture, Some(p)) if !p.started => ExtensionScope::Picture {
                seq,
                pic: &mut p.info,
            },
            (Scope::Sequence, _) => ExtensionScope::Sequence { seq },
            _ => ExtensionScope::Gop,
        };
        parse_extension(&mut c, scope)?;
        Ok(())
    }

    fn open_picture(&mut self, at: usize) -> Result<usize> {
        if self.seq.is_none() {
            return Err(Error::MalformedHeader(
                "picture before any sequence header".into(),
            ));
        }
        let mut c = self.cursor_at(at);
        let info = parse_picture_header(&mut c)?;
        let start_bit = at as u64 * 8;
        self.first_picture_bit.get_or_insert(start_bit);
        self.pictures.push(PictureRecord {
            frame_index: self.frames_done() as u64,
            temporal_reference: info.temporal_reference,
            coding_type: info.coding_type,
            structure: info.structure,
            bit_start: start_bit,
            slices: Vec::new(),
            dropped: false,
        });
        self.picture = Some(OpenPicture {
            info,
            start_bit,
            record: self.pictures.len() - 1,
            started: false,
            decoded: false,
        });
        self.scope = Scope::Picture;
        Ok(c.bits_consumed().div_ceil(8) as usize)
    }

    /// Called once the picture's headers are complete: attaches it to a new
    /// or half-finished frame and decides whether it can be reconstructed.
    fn start_picture(&mut self) -> Result<()> {
        let (info, start_bit) = {
            let p = self.picture.as_mut().expect("start_picture without an open picture");
            p.started = true;
            (p.info.clone(), p.start_bit)
        };
        if !info.has_coding_extension {
            return Err(Error::UnsupportedStream(
                "picture without picture coding extension (MPEG-1 stream)".into(),
            ));
        }
        if let Some(frame) = &self.frame {
            let pairs = match (frame.awaiting_second, info.structure.parity()) {
                (Some(first), Some(second)) => first != second,
                _ => false,
            };
            if pairs {
                if frame.dropped {
                    self.mark_dropped();
                }
                return Ok(());
            }
            if self.strict() {
                return Err(Error::MalformedStream("field picture without its partner".into()));
            }
            warn!("field picture without its partner; finishing the frame with one field");
            self.finish_frame(start_bit)?;
        }

        let seq = self.seq.as_ref().expect("sequence header checked at picture start");
        let mut canvas = FramePicture::blank(seq.mb_width() * 16, seq.mb_height() * 16);
        canvas.temporal_reference = info.temporal_reference;
        canvas.coding_type = info.coding_type;
        canvas.progressive = info.progressive_frame;
        canvas.decode_index = self.frames_done() as u64;

        let mut dropped = false;
        if info.coding_type.is_reference() {
            self.references_in_gop += 1;
        } else {
            let closed = self.gop.as_ref().is_some_and(|g| g.closed_gop);
            let broken = self.gop.as_ref().is_some_and(|g| g.broken_link) && self.references_in_gop < 2;
            if broken || self.store.references(PictureType::B, closed).is_err() {
                warn!(
                    "dropping B picture {} without usable references",
                    info.temporal_reference
                );
                dropped = true;
            }
        }
        self.frame = Some(OpenFrame {
            info: info.clone(),
            span_start: self.last_frame_end.unwrap_or(start_bit),
            canvas,
            errors: QuantErrors::default(),
            dropped,
            awaiting_second: None,
            first_field: None,
        });
        if dropped {
            self.mark_dropped();
        }
        Ok(())
    }

    fn mark_dropped(&mut self) {
        if let Some(p) = &self.picture {
            self.pictures[p.record].dropped = true;
        }
    }

    /// Handles a run of consecutive slices starting at byte `at` and
    /// returns the byte where the run ends.
    fn slices(&mut self, at: usize) -> Result<usize> {
        let mut locs = Vec::new();
        let mut start = at;
        let end = loop {
            match find_start_code(self.data, start + 4) {
                Some(next) => {
                    locs.push((start, next));
                    if is_slice_start_code(self.data[next + 3]) {
                        start = next;
                    } else {
                        break next;
                    }
                }
                None => {
                    locs.push((start, self.data.len()));
                    break self.data.len();
                }
            }
        };
        let ready = self.picture.as_ref().is_some_and(|p| !p.decoded);
        if !ready {
            if self.strict() {
                return Err(Error::MalformedStream(format!(
                    "slice outside a picture at byte {at}"
                )));
            }
            warn!("ignoring {} slices outside a picture at byte {at}", locs.len());
            return Ok(end);
        }
        if !self.picture.as_ref().unwrap().started {
            self.start_picture()?;
        }
        self.decode_current(&locs)?;
        Ok(end)
    }

    fn decode_current(&mut self, locs: &[(usize, usize)]) -> Result<()> {
        let picture = self.picture.as_mut().expect("decode without an open picture");
        picture.decoded = true;
        let info = picture.info.clone();
        let record = picture.record;
        let frame = self.frame.as_ref().expect("decode without an open frame");
        if frame.dropped {
            return Ok(());
        }
        let seq = self.seq.as_ref().expect("sequence known");
        let refs = match info.coding_type {
            PictureType::I => ReferencePair::default(),
            PictureType::P => self.store.references(PictureType::P, false).unwrap_or_default(),
            PictureType::B => {
                let closed = self.gop.as_ref().is_some_and(|g| g.closed_gop);
                self.store.references(PictureType::B, closed)?
            }
        };
        let newest = self.store.references(PictureType::P, false).ok().and_then(|r| r.forward);
        let conceal_ref = refs
            .forward
            .as_ref()
            .or(refs.backward.as_ref())
            .or(newest.as_ref())
            .map(|r| r.as_ref());
        let first_field = frame.first_field.as_ref();
        let mb_rows = if info.structure.is_field() {
            seq.mb_height() / 2
        } else {
            seq.mb_height()
        };
        let ctx = PictureContext {
            data: self.data,
            seq,
            pic: &info,
            refs: &refs,
            first_field,
            conceal_ref,
            mb_width: seq.mb_width(),
            mb_rows,
        };
        let frame_index = self.frames_done() as u64;
        let decoded = decode_picture(&ctx, locs, self.options)?;

        let spans = locs
            .iter()
            .zip(&decoded.slice_errors)
            .map(|(&(s, e), err)| SliceSpan {
                start_code: self.data[s + 3],
                bit_start: s as u64 * 8,
                bit_end: e as u64 * 8,
                error: err.clone(),
            })
            .collect();
        self.pictures[record].slices = spans;
        for mut event in decoded.events {
            event.frame_index = frame_index;
            warn!(
                "frame {frame_index}: concealed {} macroblocks in row {} ({})",
                event.macroblocks.len(),
                event.mb_row,
                event.reason
            );
            self.concealment.push(event);
        }

        let frame = self.frame.as_mut().unwrap();
        frame.errors = frame.errors.merge(decoded.errors);
        match info.structure.parity() {
            None => {
                for c in 0..3 {
                    *frame.canvas.plane_mut(c) = decoded.planes[c].clone();
                }
            }
            Some(parity) => {
                let target = if parity == 0 { FieldTarget::Top } else { FieldTarget::Bottom };
                for c in 0..3 {
                    write_field_or_frame(frame.canvas.plane_mut(c), target, decoded.planes[c].data())?;
                }
            }
        }
        Ok(())
    }

    fn close_picture(&mut self, end_bit: u64) -> Result<()> {
        let Some(p) = self.picture.as_ref() else {
            return Ok(());
        };
        if !p.started {
            self.start_picture()?;
        }
        let p = self.picture.as_ref().unwrap();
        if !p.decoded {
            if self.strict() && !self.frame.as_ref().is_some_and(|f| f.dropped) {
                return Err(Error::MalformedStream(format!(
                    "picture at bit {} has no slices",
                    p.start_bit
                )));
            }
            self.decode_current(&[])?;
        }
        let p = self.picture.take().unwrap();
        let frame = self.frame.as_mut().expect("closed picture belongs to a frame");
        match (p.info.structure.parity(), frame.awaiting_second) {
            (Some(parity), None) => {
                frame.awaiting_second = Some(parity);
                frame.first_field = Some(Arc::new(frame.canvas.clone()));
                Ok(())
            }
            _ => self.finish_frame(end_bit),
        }
    }

    fn close_pending_frame(&mut self, end_bit: u64) -> Result<()> {
        if self.frame.is_none() {
            return Ok(());
        }
        if self.strict() {
            return Err(Error::MalformedStream("field picture without its partner".into()));
        }
        warn!("field picture without its partner at end of frame data");
        self.finish_frame(end_bit)
    }

    fn finish_frame(&mut self, end_bit: u64) -> Result<()> {
        let frame = self.frame.take().expect("finish_frame without an open frame");
        let seq = self.seq.as_ref().expect("sequence known");
        let stats = self
            .bandwidth
            .account_picture(frame.span_start, end_bit, &frame.info, seq, frame.errors);
        debug!("frame {} {}: {} bits", stats.frame_index, stats.frame_name, stats.bits);
        let index = stats.frame_index;
        self.last_frame_end = Some(end_bit);
        if frame.dropped {
            self.dropped.push(index);
        } else {
            let shown = self.store.commit_picture(Arc::new(frame.canvas))?;
            self.display.extend(shown);
        }
        Ok(())
    }
}

/// Everything slice decoding of one picture needs to read.
struct PictureContext<'a> {
    data: &'a [u8],
    seq: &'a SequenceInfo,
    pic: &'a PictureInfo,
    refs: &'a ReferencePair,
    first_field: Option<&'a Arc<FramePicture>>,
    conceal_ref: Option<&'a FramePicture>,
    mb_width: usize,
    mb_rows: usize,
}

struct DecodedPicture {
    /// Luma, Cb and Cr of the coded frame or field.
    planes: [Plane; 3],
    errors: QuantErrors,
    slice_errors: Vec<Option<String>>,
    events: Vec<ConcealmentEvent>,
}

struct DecodedSlice {
    mb_row: usize,
    macroblocks: Vec<(MacroblockRec, MacroblockPrediction)>,
    errors: QuantErrors,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Coverage {
    Missing,
    Decoded,
    Concealed,
}

fn decode_picture(
    ctx: &PictureContext<'_>,
    locs: &[(usize, usize)],
    options: DecodeOptions,
) -> Result<DecodedPicture> {
    let (w, h) = (ctx.mb_width * 16, ctx.mb_rows * 16);
    let mut planes = [
        Plane::new(w, h, 128),
        Plane::new(w / 2, h / 2, 128),
        Plane::new(w / 2, h / 2, 128),
    ];
    let mb_count = ctx.mb_width * ctx.mb_rows;
    let mut coverage = vec![Coverage::Missing; mb_count];
    let mut vectors: Vec<Option<MotionVector>> = vec![None; mb_count];
    let mut errors = QuantErrors::default();
    let mut slice_errors = Vec::with_capacity(locs.len());
    let mut row_reasons: Vec<Option<String>> = vec![None; ctx.mb_rows];

    let results = par::map(options.exec, locs, |&(start, end)| decode_slice(ctx, start, end));
    for (&(start, _), result) in locs.iter().zip(results) {
        match result {
            Ok(slice) => {
                errors = errors.merge(slice.errors);
                debug!("slice row {}: {} macroblocks", slice.mb_row, slice.macroblocks.len());
                for (mb, pixels) in &slice.macroblocks {
                    write_macroblock(&mut planes, mb.address % ctx.mb_width, mb.address / ctx.mb_width, pixels);
                    coverage[mb.address] = Coverage::Decoded;
                    vectors[mb.address] = mb.motion.as_ref().and_then(MacroblockMotion::primary_vector);
                }
                slice_errors.push(None);
            }
            Err(e) => {
                if options.strictness == Strictness::Strict || matches!(e, Error::UnsupportedStream(_)) {
                    return Err(e);
                }
                let row = usize::from(ctx.data[start + 3]) - 1;
                warn!("discarding slice at byte {start}: {e}");
                if let Some(r) = row_reasons.get_mut(row) {
                    r.get_or_insert_with(|| e.to_string());
                }
                slice_errors.push(Some(e.to_string()));
            }
        }
    }

    let missing = coverage.iter().filter(|&&c| c == Coverage::Missing).count();
    if missing > 0 && options.strictness == Strictness::Strict {
        return Err(Error::MalformedStream(format!(
            "{missing} macroblocks not covered by any slice"
        )));
    }
    let mut events: Vec<ConcealmentEvent> = Vec::new();
    for address in 0..mb_count {
        if coverage[address] != Coverage::Missing {
            continue;
        }
        let concealed = conceal_macroblock(ctx, &mut planes, &coverage, &vectors, address);
        coverage[address] = Coverage::Concealed;
        let mb_row = address / ctx.mb_width;
        match events.last_mut() {
            Some(e) if e.mb_row == mb_row => e.macroblocks.push(concealed),
            _ => events.push(ConcealmentEvent {
                frame_index: 0,
                field: ctx.pic.structure.parity(),
                mb_row,
                reason: row_reasons[mb_row]
                    .clone()
                    .unwrap_or_else(|| "no slice data".into()),
                macroblocks: vec![concealed],
            }),
        }
    }
    Ok(DecodedPicture {
        planes,
        errors,
        slice_errors,
        events,
    })
}

fn decode_slice(ctx: &PictureContext<'_>, start: usize, end: usize) -> Result<DecodedSlice> {
    let mut cursor = BitCursor::new(&ctx.data[..end]);
    cursor.seek_to_bit((start as u64 + 4) * 8);
    let slice = parse_slice_header(&mut cursor, ctx.data[start + 3], ctx.seq, ctx.pic)?;
    if slice.mb_row() >= ctx.mb_rows {
        return Err(Error::MalformedStream(format!(
            "slice row {} beyond the picture's {} rows",
            slice.mb_row(),
            ctx.mb_rows
        )));
    }
    let records = decode_slice_macroblocks(
        &mut cursor,
        ctx.pic,
        &slice,
        ctx.mb_width,
        ctx.mb_width * ctx.mb_rows,
    )?;
    let mut errors = QuantErrors::default();
    let mut macroblocks = Vec::with_capacity(records.len());
    for mb in records {
        let (pixels, e) = reconstruct_macroblock(ctx, &mb)?;
        errors = errors.merge(e);
        macroblocks.push((mb, pixels));
    }
    Ok(DecodedSlice {
        mb_row: slice.mb_row(),
        macroblocks,
        errors,
    })
}

fn motion_prediction(ctx: &PictureContext<'_>, motion: &MacroblockMotion, mb_x: usize, mb_y: usize) -> Result<MacroblockPrediction> {
    let direction = |vectors: Option<[FieldVector; 2]>, dir: RefDirection| -> Result<Option<DirectionalPrediction<'_>>> {
        vectors
            .map(|v| {
                let reference = select_reference(ctx.pic, dir, ctx.refs, ctx.first_field, v[0].field_select)?;
                Ok(DirectionalPrediction {
                    reference,
                    vectors: v,
                })
            })
            .transpose()
    };
    let request = PredictionRequest {
        mode: motion.mode,
        mb_x,
        mb_y,
        forward: direction(motion.forward, RefDirection::Forward)?,
        backward: direction(motion.backward, RefDirection::Backward)?,
    };
    predict(&request)
}

/// Block `k` of a macroblock: its component, origin inside the component's
/// macroblock buffer, and the buffer row distance between block rows.
fn block_geometry(k: usize, field_dct: bool) -> (usize, usize, usize, usize) {
    match k {
        0..=3 if field_dct => (0, 8 * (k & 1), k >> 1, 2),
        0..=3 => (0, 8 * (k & 1), 8 * (k >> 1), 1),
        4 => (1, 0, 0, 1),
        _ => (2, 0, 0, 1),
    }
}

fn reconstruct_macroblock(ctx: &PictureContext<'_>, mb: &MacroblockRec) -> Result<(MacroblockPrediction, QuantErrors)> {
    let (mb_x, mb_y) = (mb.address % ctx.mb_width, mb.address / ctx.mb_width);
    let intra = mb.is_intra();
    let mut out = match &mb.motion {
        Some(m) if !intra => motion_prediction(ctx, m, mb_x, mb_y)?,
        _ => MacroblockPrediction::filled(0),
    };
    let scan = ScanMatrix::for_picture(ctx.pic.alternate_scan);
    let weights = if intra {
        &ctx.seq.intra_quant_matrix
    } else {
        &ctx.seq.non_intra_quant_matrix
    };
    let params = QuantParams {
        intra,
        weights,
        quantiser_scale: mb.quantiser_scale,
        intra_dc_precision: ctx.pic.intra_dc_precision,
    };
    let mut errors = QuantErrors::default();
    for (k, block) in mb.blocks.iter().enumerate() {
        let Some(block) = block else {
            continue;
        };
        let dequantized = inverse_quantize(&block.quantized(scan), &params);
        let spatial = idct_8x8(&dequantized.block);
        errors = errors.merge(QuantErrors {
            coefficient_saturation_max: dequantized.saturation_error,
            idct_clip_max: spatial.clip_error,
        });
        let (c, x0, y0, step) = block_geometry(k, mb.field_dct);
        let stride = if c == 0 { 16 } else { 8 };
        let buf = match c {
            0 => &mut out.luma[..],
            1 => &mut out.cb[..],
            _ => &mut out.cr[..],
        };
        let at = |i: usize| (y0 + (i / 8) * step) * stride + x0 + i % 8;
        let prediction: PixelBlock = std::array::from_fn(|i| buf[at(i)]);
        let pixels = reconstruct_block(&spatial.block, (!intra).then_some(&prediction));
        for (i, &v) in pixels.iter().enumerate() {
            buf[at(i)] = v;
        }
    }
    Ok((out, errors))
}

fn write_macroblock(planes: &mut [Plane; 3], mb_x: usize, mb_y: usize, pixels: &MacroblockPrediction) {
    planes[0].put_block(16 * mb_x, 16 * mb_y, 16, 16, 1, &pixels.luma);
    planes[1].put_block(8 * mb_x, 8 * mb_y, 8, 8, 1, &pixels.cb);
    planes[2].put_block(8 * mb_x, 8 * mb_y, 8, 8, 1, &pixels.cr);
}

/// Fills one lost macroblock from the concealment reference, choosing
/// among the zero vector, the most recent decoded vector and the vector of
/// the macroblock above by boundary matching against already available
/// neighbours.
fn conceal_macroblock(
    ctx: &PictureContext<'_>,
    planes: &mut [Plane; 3],
    coverage: &[Coverage],
    vectors: &[Option<MotionVector>],
    address: usize,
) -> ConcealedMacroblock {
    let (mb_x, mb_y) = (address % ctx.mb_width, address / ctx.mb_width);
    let Some(reference) = ctx.conceal_ref else {
        write_macroblock(planes, mb_x, mb_y, &MacroblockPrediction::filled(128));
        return ConcealedMacroblock {
            address,
            vector: None,
            variation: None,
        };
    };

    let mut candidates = vec![MotionVector::ZERO];
    if let Some(last) = (0..address)
        .rev()
        .find(|&a| coverage[a] == Coverage::Decoded)
        .and_then(|a| vectors[a])
    {
        candidates.push(last);
    }
    if mb_y > 0 && coverage[address - ctx.mb_width] == Coverage::Decoded {
        if let Some(above) = vectors[address - ctx.mb_width] {
            candidates.push(above);
        }
    }

    let luma = &planes[0];
    let available = |a: usize| coverage[a] != Coverage::Missing;
    let (x0, y0) = (16 * mb_x, 16 * mb_y);
    let above = (mb_y > 0 && available(address - ctx.mb_width)).then(|| luma.row(y0 - 1)[x0..x0 + 16].to_vec());
    let left = (mb_x > 0 && available(address - 1)).then(|| (0..16).map(|r| luma.get(x0 - 1, y0 + r)).collect::<Vec<_>>());
    let below = (mb_y + 1 < ctx.mb_rows && available(address + ctx.mb_width))
        .then(|| luma.row(y0 + 16)[x0..x0 + 16].to_vec());
    let boundary = BlockBoundary {
        above: above.as_deref(),
        left: left.as_deref(),
        below: below.as_deref(),
    };

    let (mode, field_select) = match ctx.pic.structure.parity() {
        Some(parity) => (PredictionMode::FieldInField, parity),
        None => (PredictionMode::FrameFrame, 0),
    };
    let mut formed: Vec<(MotionVector, MacroblockPrediction)> = Vec::new();
    let chosen = conceal_select_mv(&candidates, 16, &boundary, |mv| {
        let fv = FieldVector {
            vector: mv,
            field_select,
        };
        let request = PredictionRequest {
            mode,
            mb_x,
            mb_y,
            forward: Some(DirectionalPrediction {
                reference,
                vectors: [fv; 2],
            }),
            backward: None,
        };
        let prediction = predict(&request).ok()?;
        let luma = prediction.luma.to_vec();
        formed.push((mv, prediction));
        Some(luma)
    });
    match chosen {
        Ok(mv) => {
            let (_, prediction) = formed.iter().find(|(v, _)| *v == mv).expect("chosen candidate was formed");
            let variation = boundary_variation(&prediction.luma, 16, &boundary);
            write_macroblock(planes, mb_x, mb_y, prediction);
            ConcealedMacroblock {
                address,
                vector: Some(mv),
                variation: Some(variation),
            }
        }
        Err(_) => {
            write_macroblock(planes, mb_x, mb_y, &MacroblockPrediction::filled(128));
            ConcealedMacroblock {
                address,
                vector: None,
                variation: None,
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn field_dct_blocks_interleave_rows() {
        assert_eq!(block_geometry(0, false), (0, 0, 0, 1));
        assert_eq!(block_geometry(3, false), (0, 8, 8, 1));
        assert_eq!(block_geometry(2, true), (0, 0, 1, 2));
        assert_eq!(block_geometry(5, true), (2, 0, 0, 1));
    }

    #[test]
    fn empty_input_has_no_sequence() {
        let err = decode_stream(&[], &DecodeOptions::default()).unwrap_err();
        assert!(matches!(err, Error::MalformedHeader(_)));
    }
}
