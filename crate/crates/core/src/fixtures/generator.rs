//! Turns a [`FixtureSpec`] into a stream plus everything a test needs to
//! check the decoder against it.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::oracle::{self, Samples};
use super::spec::{FixtureSpec, PictureOptions, PlannedPicture, Recipe, Structure};
use super::syntax;
use super::BitWriter;
use crate::error::{Error, Result};
use crate::framestore::FramePicture;
use crate::headers::{
    ChromaFormat, GopInfo, PictureInfo, PictureStructure, PictureType, SequenceInfo, F_CODE_NONE,
};
use crate::transform::QuantMatrix;
use crate::vlc::{tables, MacroblockType, Symbol, VlcTable};

/// One slice as written.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GeneratedSlice {
    pub mb_row: usize,
    pub bit_start: u64,
    pub bit_end: u64,
    pub corrupted: bool,
}

/// One coded picture (frame or field) as written.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GeneratedPicture {
    /// Frame index in decode order.
    pub frame_index: usize,
    pub name: String,
    pub structure: PictureStructure,
    pub bit_start: u64,
    pub slices: Vec<GeneratedSlice>,
    /// Macroblock addresses (in this picture's numbering) lost to a
    /// corrupted slice.
    pub corrupted_macroblocks: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct GeneratedStream {
    pub bytes: Vec<u8>,
    pub sequence: SequenceInfo,
    /// Expected frames in display order.
    pub frames: Vec<FramePicture>,
    /// Exact bits of each frame in decode order.
    pub frame_bits: Vec<u64>,
    /// Frame names (`I0`, `P3`, …) in decode order.
    pub decode_names: Vec<String>,
    pub display_names: Vec<String>,
    pub pictures: Vec<GeneratedPicture>,
    /// Bit offset of the first picture start code.
    pub first_picture_bit: u64,
    /// Bit offset of the sequence end code.
    pub end_bit: u64,
}

impl GeneratedStream {
    /// Display position of the frame decoded at `frame_index`.
    pub fn display_position(&self, frame_index: usize) -> usize {
        let name = &self.decode_names[frame_index];
        self.display_names
            .iter()
            .position(|n| n == name)
            .expect("every decoded frame is displayed")
    }
}

/// Generates the stream described by `spec`.
pub fn generate(spec: &FixtureSpec) -> Result<GeneratedStream> {
    let plan = spec.plan()?;
    Generator::new(spec, &plan).run()
}

/// Reads a TOML spec and generates it.
pub fn generate_from_toml(text: &str) -> Result<GeneratedStream> {
    generate(&FixtureSpec::from_toml(text)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Mode {
    Frame,
    FieldInFrame,
    FieldInField,
}

/// A vector and the reference field it reads (0 for frame prediction).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Fv {
    select: usize,
    mv: [i32; 2],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Motion {
    mode: Mode,
    forward: Option<[Fv; 2]>,
    backward: Option<[Fv; 2]>,
}

type Levels = [i32; 64];

#[derive(Debug, Clone)]
enum MbPlan {
    Intra {
        blocks: [Levels; 6],
        field_dct: bool,
    },
    Inter {
        motion: Motion,
        residual: [Option<Levels>; 6],
        field_dct: bool,
        allow_skip: bool,
    },
}

/// Reference frames of the expected output.
#[derive(Default)]
struct Refs {
    older: Option<FramePicture>,
    newer: Option<FramePicture>,
}

struct PictureEnv<'a> {
    info: &'a PictureInfo,
    opts: &'a PictureOptions,
    mb_width: usize,
    mb_rows: usize,
    /// Reference frames for each direction.
    forward: Option<&'a FramePicture>,
    backward: Option<&'a FramePicture>,
    /// The frame under construction, for a second field that predicts
    /// from the first.
    current: &'a FramePicture,
    second_field: bool,
    intra_weights: &'a [u8; 64],
    non_intra_weights: &'a [u8; 64],
}

impl PictureEnv<'_> {
    fn parity(&self) -> Option<usize> {
        self.info.structure.parity()
    }

    fn reference(&self, backward: bool, select: usize) -> Option<&FramePicture> {
        if backward {
            return self.backward;
        }
        match self.parity() {
            Some(p) if self.info.coding_type == PictureType::P && select != p && self.second_field => {
                Some(self.current)
            }
            _ => self.forward,
        }
    }
}

struct Generator<'a> {
    spec: &'a FixtureSpec,
    plan: &'a [PlannedPicture],
    seq: SequenceInfo,
    intra_weights: [u8; 64],
    non_intra_weights: [u8; 64],
    w: BitWriter,
}

impl<'a> Generator<'a> {
    fn new(spec: &'a FixtureSpec, plan: &'a [PlannedPicture]) -> Self {
        let intra_weights = spec
            .intra_matrix
            .as_ref()
            .map_or(oracle::DEFAULT_INTRA_WEIGHTS, |m| m.clone().try_into().unwrap());
        let non_intra_weights = spec
            .non_intra_matrix
            .as_ref()
            .map_or(oracle::DEFAULT_NON_INTRA_WEIGHTS, |m| m.clone().try_into().unwrap());
        let seq = SequenceInfo {
            horizontal_size: spec.width,
            vertical_size: spec.height,
            aspect_ratio_code: 1,
            frame_rate_code: spec.frame_rate_code,
            bit_rate_value: (spec.bit_rate / 400) as u32,
            vbv_buffer_size_value: (spec.vbv_buffer_size / 16384) as u32,
            constrained_parameters: false,
            intra_quant_matrix: QuantMatrix(intra_weights),
            non_intra_quant_matrix: QuantMatrix(non_intra_weights),
            profile_and_level: 0x48,
            progressive_sequence: spec.progressive_sequence,
            chroma_format: ChromaFormat::Yuv420,
            low_delay: false,
            frame_rate_extension_n: 0,
            frame_rate_extension_d: 0,
            has_sequence_extension: true,
        };
        Generator {
            spec,
            plan,
            seq,
            intra_weights,
            non_intra_weights,
            w: BitWriter::new(),
        }
    }

    /// Display index of every frame (decode order in, display order out)
    /// and the temporal reference each one carries.
    fn ordering(&self) -> (Vec<usize>, Vec<u16>) {
        let n = self.plan.len();
        let mut display = vec![0; n];
        let mut next = 0;
        let mut pending: Option<usize> = None;
        for (i, p) in self.plan.iter().enumerate() {
            if p.letter == 'B' {
                display[i] = next;
                next += 1;
            } else {
                if let Some(r) = pending.replace(i) {
                    display[r] = next;
                    next += 1;
                }
            }
        }
        if let Some(r) = pending {
            display[r] = next;
        }
        // Temporal references count from the earliest displayed frame of
        // each GOP; a GOP starts at every I picture.
        let mut gop = vec![0; n];
        let mut g = 0;
        for (i, p) in self.plan.iter().enumerate() {
            if p.letter == 'I' && i > 0 {
                g += 1;
            }
            gop[i] = g;
        }
        let temporal = (0..n)
            .map(|i| {
                let base = (0..n).filter(|&j| gop[j] == gop[i]).map(|j| display[j]).min().unwrap();
                ((display[i] - base) % 1024) as u16
            })
            .collect();
        (display, temporal)
    }

    fn run(mut self) -> Result<GeneratedStream> {
        let (display, temporal) = self.ordering();
        let (width, height) = (self.spec.width as usize, self.spec.height as usize);
        syntax::write_sequence(&mut self.w, &self.seq);

        let mut refs = Refs::default();
        let mut decoded: Vec<(usize, FramePicture)> = Vec::new();
        let mut frame_bits = Vec::new();
        let mut decode_names = Vec::new();
        let mut pictures = Vec::new();
        let mut first_picture_bit = None;
        let mut prev_end: Option<u64> = None;

        for (index, planned) in self.plan.iter().enumerate() {
            let coding_type = match planned.letter {
                'I' => PictureType::I,
                'P' => PictureType::P,
                _ => PictureType::B,
            };
            if planned.letter == 'I' {
                let closed = if index == 0 {
                    self.spec.closed_gop
                } else {
                    self.plan.get(index + 1).is_none_or(|p| p.letter != 'B')
                };
                let gop = GopInfo {
                    closed_gop: closed,
                    ..GopInfo::default()
                };
                syntax::write_gop(&mut self.w, &gop);
            }
            self.w.align();
            let frame_start = prev_end.unwrap_or(self.w.bit_len());
            first_picture_bit.get_or_insert(frame_start);

            let opts = &planned.options;
            let mut canvas = FramePicture::blank(width, height);
            canvas.temporal_reference = temporal[index];
            canvas.coding_type = coding_type;
            canvas.progressive = opts.progressive_frame;
            canvas.decode_index = index as u64;
            let name = canvas.name();

            let structures = match opts.structure {
                Structure::Frame => vec![PictureStructure::FramePicture],
                Structure::Field if opts.top_field_first => {
                    vec![PictureStructure::TopField, PictureStructure::BottomField]
                }
                Structure::Field => vec![PictureStructure::BottomField, PictureStructure::TopField],
            };
            for (field_number, structure) in structures.into_iter().enumerate() {
                let mut info = PictureInfo {
                    temporal_reference: temporal[index],
                    coding_type,
                    vbv_delay: self.spec.vbv_delay,
                    f_codes: [[F_CODE_NONE; 2]; 2],
                    intra_dc_precision: opts.intra_dc_precision,
                    structure,
                    top_field_first: opts.structure == Structure::Frame && opts.top_field_first && !opts.progressive_frame,
                    frame_pred_frame_dct: opts.frame_pred_frame_dct,
                    concealment_motion_vectors: false,
                    q_scale_type: opts.q_scale_type,
                    intra_vlc_format: opts.intra_vlc_format,
                    alternate_scan: opts.alternate_scan,
                    repeat_first_field: false,
                    progressive_frame: opts.progressive_frame,
                    has_coding_extension: true,
                };
                let mb_width = width / 16;
                let mb_rows = if structure.is_field() { height / 32 } else { height / 16 };
                let (forward, backward) = match coding_type {
                    PictureType::I => (None, None),
                    PictureType::P => (refs.newer.as_ref(), None),
                    PictureType::B => (refs.older.as_ref(), refs.newer.as_ref()),
                };
                let snapshot = canvas.clone();
                let planning = info.clone();
                let env = PictureEnv {
                    info: &planning,
                    opts,
                    mb_width,
                    mb_rows,
                    forward,
                    backward,
                    current: &snapshot,
                    second_field: field_number == 1,
                    intra_weights: &self.intra_weights,
                    non_intra_weights: &self.non_intra_weights,
                };
                let plans = plan_macroblocks(&env, &planned.recipe, index as u64)?;
                info.f_codes = f_codes(coding_type, &plans);
                let env = PictureEnv { info: &info, ..env };
                reconstruct_picture(&env, &plans, &mut canvas);

                let bit_start = self.w.bit_len();
                syntax::write_picture_header(&mut self.w, &info);
                syntax::write_picture_coding_extension(&mut self.w, &info);
                let (slices, corrupted_macroblocks) = write_slices(&mut self.w, &env, &plans);
                pictures.push(GeneratedPicture {
                    frame_index: index,
                    name: name.clone(),
                    structure,
                    bit_start,
                    slices,
                    corrupted_macroblocks,
                });
            }
            self.w.align();
            if let Some(pad) = opts.pad_to_bytes {
                let used = self.w.bit_len() - frame_start;
                let target = pad as u64 * 8;
                if used > target {
                    return Err(Error::SpecError(format!(
                        "picture {index} needs {} bytes, more than pad_to_bytes = {pad}",
                        used.div_ceil(8)
                    )));
                }
                self.w.put_zero_bytes(((target - used) / 8) as usize);
            }
            let end = self.w.bit_len();
            frame_bits.push(end - frame_start);
            prev_end = Some(end);
            decode_names.push(name);

            if coding_type == PictureType::B {
                decoded.push((display[index], canvas));
            } else {
                refs.older = refs.newer.replace(canvas.clone());
                decoded.push((display[index], canvas));
            }
        }
        let end_bit = self.w.bit_len();
        syntax::write_sequence_end(&mut self.w);

        decoded.sort_by_key(|(d, _)| *d);
        let frames: Vec<FramePicture> = decoded.into_iter().map(|(_, f)| f).collect();
        let display_names = frames.iter().map(FramePicture::name).collect();
        Ok(GeneratedStream {
            bytes: self.w.into_bytes(),
            sequence: self.seq,
            frames,
            frame_bits,
            decode_names,
            display_names,
            pictures,
            first_picture_bit: first_picture_bit.unwrap_or(0),
            end_bit,
        })
    }
}

fn luma_block_origin(k: usize, field_dct: bool) -> (usize, usize, usize) {
    if field_dct {
        (8 * (k & 1), k >> 1, 2)
    } else {
        (8 * (k & 1), 8 * (k >> 1), 1)
    }
}

fn wrap_level(start: u8, step: u8, n: usize) -> u8 {
    (16 + (i64::from(start) - 16 + i64::from(step) * n as i64).rem_euclid(220)) as u8
}

fn intra_blocks(recipe: &Recipe, mb_x: usize, mb_y: usize, precision: u8, rng: &mut ChaCha8Rng) -> [Levels; 6] {
    let shift = precision - 8;
    let mut blocks = [[0; 64]; 6];
    for (k, b) in blocks.iter_mut().enumerate() {
        let (bx, by) = (2 * mb_x + (k & 1), 2 * mb_y + ((k >> 1) & 1));
        let luma = k < 4;
        let value: u8 = match *recipe {
            Recipe::Flat { y, cb, cr } => [y, y, y, y, cb, cr][k],
            Recipe::Checkerboard { low, high } if luma => {
                if (bx + by) % 2 == 0 {
                    low
                } else {
                    high
                }
            }
            Recipe::AcBasis { dc, u, v, level } if luma => {
                b[usize::from(v) * 8 + usize::from(u)] = level;
                dc
            }
            Recipe::Ramp { start, step } if luma => wrap_level(start, step, bx + by),
            Recipe::Noise {
                coefficients,
                amplitude,
                ..
            } => {
                let dc = rng.random_range(32..=224);
                let mut placed = 0;
                while placed < coefficients {
                    let at = rng.random_range(1..64);
                    if b[at] == 0 {
                        let magnitude = rng.random_range(1..=amplitude);
                        b[at] = if rng.random_bool(0.5) { magnitude } else { -magnitude };
                        placed += 1;
                    }
                }
                dc
            }
            _ => 128,
        };
        b[0] = i32::from(value) << shift;
    }
    blocks
}

fn plan_macroblocks(env: &PictureEnv<'_>, recipe: &Recipe, picture_seed: u64) -> Result<Vec<MbPlan>> {
    let seed = match recipe {
        Recipe::Noise { seed, .. } => *seed,
        _ => 0,
    };
    let parity_seed = env.parity().map_or(0, |p| p as u64 + 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (picture_seed << 8) ^ (parity_seed << 40));
    let field_dct = env.opts.field_dct;
    let mut out = Vec::with_capacity(env.mb_width * env.mb_rows);
    for address in 0..env.mb_width * env.mb_rows {
        let (mb_x, mb_y) = (address % env.mb_width, address / env.mb_width);
        let plan = match recipe {
            Recipe::Motion {
                forward,
                backward,
                field_select,
                residual,
                allow_skip,
            } => {
                let (mode, select) = match env.parity() {
                    Some(p) => (Mode::FieldInField, field_select.map_or(p, usize::from)),
                    None => (Mode::Frame, 0),
                };
                let fv = |v: [i32; 2]| {
                    [Fv { select, mv: v }; 2]
                };
                let motion = Motion {
                    mode,
                    forward: forward.map(fv),
                    backward: backward.map(fv),
                };
                MbPlan::Inter {
                    motion: in_bounds_or_zero(env, motion, mb_x, mb_y),
                    residual: residual_blocks(*residual),
                    field_dct: field_dct && *residual != 0,
                    allow_skip: *allow_skip,
                }
            }
            Recipe::FieldMotion { forward, residual } => {
                let vectors = forward.map(|[s, x, y]| Fv {
                    select: s as usize,
                    mv: [x, y],
                });
                let motion = Motion {
                    mode: Mode::FieldInFrame,
                    forward: Some(vectors),
                    backward: None,
                };
                MbPlan::Inter {
                    motion: in_bounds_or_zero(env, motion, mb_x, mb_y),
                    residual: residual_blocks(*residual),
                    field_dct: field_dct && *residual != 0,
                    allow_skip: false,
                }
            }
            intra => MbPlan::Intra {
                blocks: intra_blocks(intra, mb_x, mb_y, env.info.intra_dc_precision, &mut rng),
                field_dct,
            },
        };
        out.push(plan);
    }
    if out.iter().any(|p| matches!(p, MbPlan::Inter { .. })) && env.info.coding_type == PictureType::I {
        return Err(Error::SpecError("motion in an I picture".into()));
    }
    Ok(out)
}

fn residual_blocks(level: i32) -> [Option<Levels>; 6] {
    std::array::from_fn(|k| {
        (k < 4 && level != 0).then(|| {
            let mut b = [0; 64];
            b[0] = level;
            b
        })
    })
}

/// Keeps the macroblock's vectors when every prediction they need lies
/// inside its reference, else replaces them with zero vectors.
fn in_bounds_or_zero(env: &PictureEnv<'_>, motion: Motion, mb_x: usize, mb_y: usize) -> Motion {
    if predict_macroblock(env, &motion, mb_x, mb_y).is_some() {
        return motion;
    }
    let zero = |v: Option<[Fv; 2]>| v.map(|fv| fv.map(|f| Fv { mv: [0, 0], ..f }));
    Motion {
        forward: zero(motion.forward),
        backward: zero(motion.backward),
        ..motion
    }
}

fn samples(frame: &FramePicture, c: usize, field: Option<usize>) -> Samples<'_> {
    let p = frame.plane(c);
    let (first_row, row_step) = match field {
        Some(f) => (f, 2),
        None => (0, 1),
    };
    Samples {
        data: p.data(),
        width: p.width(),
        height: p.height(),
        first_row,
        row_step,
    }
}

/// Prediction of one macroblock as three sample buffers (16×16, 8×8, 8×8).
fn predict_macroblock(env: &PictureEnv<'_>, motion: &Motion, mb_x: usize, mb_y: usize) -> Option<[Vec<u8>; 3]> {
    let mut dirs = Vec::new();
    for (backward, vectors) in [(false, motion.forward), (true, motion.backward)] {
        let Some(vectors) = vectors else { continue };
        let mut out = [vec![0u8; 256], vec![0u8; 64], vec![0u8; 64]];
        for (c, buf) in out.iter_mut().enumerate() {
            let n = if c == 0 { 16 } else { 8 };
            let scale = |v: [i32; 2]| if c == 0 { v } else { oracle::chroma_vector(v) };
            match motion.mode {
                Mode::Frame | Mode::FieldInField => {
                    let fv = vectors[0];
                    let field = (motion.mode == Mode::FieldInField).then_some(fv.select);
                    let reference = env.reference(backward, fv.select)?;
                    *buf = samples(reference, c, field).predict(n * mb_x, n * mb_y, n, n, scale(fv.mv))?;
                }
                Mode::FieldInFrame => {
                    let reference = env.reference(backward, 0)?;
                    for (parity, fv) in vectors.iter().enumerate() {
                        let half = samples(reference, c, Some(fv.select)).predict(
                            n * mb_x,
                            n * mb_y / 2,
                            n,
                            n / 2,
                            scale(fv.mv),
                        )?;
                        for r in 0..n / 2 {
                            buf[(parity + 2 * r) * n..(parity + 2 * r + 1) * n].copy_from_slice(&half[r * n..(r + 1) * n]);
                        }
                    }
                }
            }
        }
        dirs.push(out);
    }
    match dirs.len() {
        1 => dirs.pop(),
        2 => {
            let b = dirs.pop().unwrap();
            let f = dirs.pop().unwrap();
            Some(std::array::from_fn(|c| {
                f[c].iter().zip(&b[c]).map(|(&x, &y)| (u16::from(x) + u16::from(y)).div_ceil(2) as u8).collect()
            }))
        }
        _ => None,
    }
}

fn reconstruct_picture(env: &PictureEnv<'_>, plans: &[MbPlan], canvas: &mut FramePicture) {
    let qscale = oracle::quantiser_scale(env.opts.quantiser_scale_code, env.opts.q_scale_type);
    for (address, plan) in plans.iter().enumerate() {
        let (mb_x, mb_y) = (address % env.mb_width, address / env.mb_width);
        let (mut pixels, blocks, intra, field_dct) = match plan {
            MbPlan::Intra { blocks, field_dct } => (
                [vec![0u8; 256], vec![0u8; 64], vec![0u8; 64]],
                (*blocks).map(Some),
                true,
                *field_dct,
            ),
            MbPlan::Inter {
                motion,
                residual,
                field_dct,
                ..
            } => (
                predict_macroblock(env, motion, mb_x, mb_y).expect("vectors were checked"),
                *residual,
                false,
                *field_dct,
            ),
        };
        for (k, levels) in blocks.iter().enumerate() {
            let Some(levels) = levels else { continue };
            let weights = if intra { env.intra_weights } else { env.non_intra_weights };
            let f = oracle::dequantize(levels, intra, weights, qscale, env.info.intra_dc_precision);
            let residual = oracle::idct(&f);
            let (c, x0, y0, step, stride) = match k {
                0..=3 => {
                    let (x0, y0, step) = luma_block_origin(k, field_dct);
                    (0, x0, y0, step, 16)
                }
                4 => (1, 0, 0, 1, 8),
                _ => (2, 0, 0, 1, 8),
            };
            for (i, &r) in residual.iter().enumerate() {
                let at = (y0 + (i / 8) * step) * stride + x0 + i % 8;
                let base = if intra { 0 } else { i32::from(pixels[c][at]) };
                pixels[c][at] = (base + r).clamp(0, 255) as u8;
            }
        }
        for (c, buf) in pixels.iter().enumerate() {
            let n = if c == 0 { 16 } else { 8 };
            let plane = canvas.plane_mut(c);
            for r in 0..n {
                let y = n * mb_y + r;
                let row = match env.parity() {
                    Some(p) => 2 * y + p,
                    None => y,
                };
                for x in 0..n {
                    plane.set(n * mb_x + x, row, buf[r * n + x]);
                }
            }
        }
    }
}

fn f_code_for(max_abs: i32) -> u8 {
    (1..=9u8)
        .find(|&f| {
            let range = 16 << (f - 1);
            max_abs < range
        })
        .unwrap_or(9)
}

fn f_codes(coding_type: PictureType, plans: &[MbPlan]) -> [[u8; 2]; 2] {
    let mut max = [[0i32; 2]; 2];
    for plan in plans {
        if let MbPlan::Inter { motion, .. } = plan {
            for (s, v) in [motion.forward, motion.backward].iter().enumerate() {
                for fv in v.iter().flatten() {
                    for (top, &c) in max[s].iter_mut().zip(&fv.mv) {
                        // Ranges are asymmetric: -16f..16f-1.
                        let m = if c < 0 { -c - 1 } else { c };
                        *top = (*top).max(m);
                    }
                }
            }
        }
    }
    let used = match coding_type {
        PictureType::I => [false, false],
        PictureType::P => [true, false],
        PictureType::B => [true, true],
    };
    std::array::from_fn(|s| {
        if used[s] {
            [f_code_for(max[s][0]), f_code_for(max[s][1])]
        } else {
            [F_CODE_NONE; 2]
        }
    })
}

fn put_symbol(w: &mut BitWriter, table: &VlcTable, symbol: Symbol) {
    let entry = table
        .encode(symbol)
        .unwrap_or_else(|| panic!("table {} has no code for {symbol}", table.name()));
    w.put_vlc(entry);
}

fn put_address_increment(w: &mut BitWriter, mut increment: usize) {
    let t = &tables().mb_address_inc;
    while increment > 33 {
        put_symbol(w, t, Symbol::AddressEscape);
        increment -= 33;
    }
    put_symbol(w, t, Symbol::Increment(increment as u8));
}

fn put_dc_differential(w: &mut BitWriter, luma: bool, diff: i32) {
    let size = 32 - diff.unsigned_abs().leading_zeros();
    let t = if luma {
        &tables().dc_size_luma
    } else {
        &tables().dc_size_chroma
    };
    put_symbol(w, t, Symbol::DcSize(size as u8));
    if size > 0 {
        let bits = if diff > 0 { diff } else { diff + (1 << size) - 1 };
        w.put_bits(bits as u32, size);
    }
}

fn put_coefficient(w: &mut BitWriter, table: &VlcTable, run: u8, level: i32) {
    let magnitude = level.unsigned_abs();
    let entry = (magnitude <= 255)
        .then(|| {
            table.encode(Symbol::Coeff {
                run,
                level: magnitude as u8,
            })
        })
        .flatten();
    match entry {
        Some(e) => {
            w.put_vlc(e);
            w.put_bit(level < 0);
        }
        None => {
            put_symbol(w, table, Symbol::Escape);
            w.put_bits(u32::from(run), 6);
            w.put_signed(level, 12);
        }
    }
}

/// Writes the coefficients of one block from serial position `from`,
/// followed by end of block.
fn put_coefficients(w: &mut BitWriter, levels: &Levels, scan: &[usize; 64], from: usize, table: &VlcTable, non_intra: bool) {
    let mut run = 0u8;
    let mut first = true;
    for &raster in &scan[from..] {
        let level = levels[raster];
        if level == 0 {
            run += 1;
            continue;
        }
        if non_intra && first && run == 0 && level.abs() == 1 {
            w.put_bit(true);
            w.put_bit(level < 0);
        } else {
            put_coefficient(w, table, run, level);
        }
        first = false;
        run = 0;
    }
    put_symbol(w, table, Symbol::Eob);
}

fn put_motion_component(w: &mut BitWriter, value: i32, predictor: i32, f_code: u8) {
    let f = 1i32 << (f_code - 1);
    let (low, high) = (-16 * f, 16 * f - 1);
    let mut delta = value - predictor;
    if delta < low {
        delta += 32 * f;
    } else if delta > high {
        delta -= 32 * f;
    }
    let (code, residual) = if f == 1 || delta == 0 {
        (delta, 0)
    } else {
        let m = delta.abs() - 1;
        let c = m / f + 1;
        (if delta < 0 { -c } else { c }, m % f)
    };
    put_symbol(w, &tables().motion_code, Symbol::Motion(code as i8));
    if f > 1 && code != 0 {
        w.put_bits(residual as u32, u32::from(f_code - 1));
    }
}

/// Encoder-side copy of the slice predictors.
struct SliceState {
    pmv: [[[i32; 2]; 2]; 2],
    dc: [i32; 3],
    previous: Option<Motion>,
}

impl SliceState {
    fn new(precision: u8) -> Self {
        SliceState {
            pmv: [[[0; 2]; 2]; 2],
            dc: [1 << (precision - 1); 3],
            previous: None,
        }
    }

    fn reset_dc(&mut self, precision: u8) {
        self.dc = [1 << (precision - 1); 3];
    }
}

fn is_p_skippable(env: &PictureEnv<'_>, motion: &Motion) -> bool {
    let own = env.parity().unwrap_or(0);
    motion.backward.is_none()
        && motion.mode != Mode::FieldInFrame
        && motion
            .forward
            .is_some_and(|v| v[0].mv == [0, 0] && v[0].select == own)
}

fn write_slices(w: &mut BitWriter, env: &PictureEnv<'_>, plans: &[MbPlan]) -> (Vec<GeneratedSlice>, Vec<usize>) {
    let info = env.info;
    let precision = info.intra_dc_precision;
    let scan = oracle::scan_order(info.alternate_scan);
    let b14 = &tables().dct_b14;
    let intra_table = if info.intra_vlc_format { &tables().dct_b15 } else { b14 };
    let frame_picture = !info.structure.is_field();
    let slices_per_row = env.opts.slices_per_row;
    let mut out = Vec::new();
    let mut corrupted = Vec::new();

    for row in 0..env.mb_rows {
        for part in 0..slices_per_row {
            let first_col = part * env.mb_width / slices_per_row;
            let end_col = (part + 1) * env.mb_width / slices_per_row;
            let bit_start = w.bit_len();
            w.start_code((row + 1) as u8);
            w.put_bits(u32::from(env.opts.quantiser_scale_code), 5);
            w.put_bit(false);
            let corrupt = env.opts.corrupt_slice == Some([row, part]);
            if corrupt {
                // Eight zero bits then a one match no address increment code.
                w.put_bits(0, 8);
                w.put_bit(true);
                while !w.is_byte_aligned() {
                    w.put_bit(true);
                }
                corrupted.extend((first_col..end_col).map(|c| row * env.mb_width + c));
            } else {
                let mut state = SliceState::new(precision);
                let mut last: Option<usize> = None;
                for col in first_col..end_col {
                    let address = row * env.mb_width + col;
                    let plan = &plans[address];
                    let inner = col != first_col && col + 1 != end_col;
                    if let MbPlan::Inter {
                        motion,
                        residual,
                        allow_skip: true,
                        ..
                    } = plan
                    {
                        let uncoded = residual.iter().all(Option::is_none);
                        let skippable = inner
                            && uncoded
                            && match info.coding_type {
                                PictureType::P => is_p_skippable(env, motion),
                                PictureType::B => state.previous == Some(*motion),
                                PictureType::I => false,
                            };
                        if skippable {
                            state.reset_dc(precision);
                            if info.coding_type == PictureType::P {
                                state.pmv = [[[0; 2]; 2]; 2];
                            }
                            continue;
                        }
                    }
                    let increment = match last {
                        None => col + 1,
                        Some(l) => address - l,
                    };
                    put_address_increment(w, increment);
                    write_macroblock(w, env, plan, &mut state, &scan, intra_table, frame_picture);
                    last = Some(address);
                }
            }
            w.align();
            out.push(GeneratedSlice {
                mb_row: row,
                bit_start,
                bit_end: 0,
                corrupted: corrupt,
            });
        }
    }
    // Each slice ends where the next start code begins.
    let ends: Vec<u64> = out.iter().skip(1).map(|s| s.bit_start).chain([w.bit_len()]).collect();
    for (s, e) in out.iter_mut().zip(ends) {
        s.bit_end = e;
    }
    (out, corrupted)
}

fn write_macroblock(
    w: &mut BitWriter,
    env: &PictureEnv<'_>,
    plan: &MbPlan,
    state: &mut SliceState,
    scan: &[usize; 64],
    intra_table: &VlcTable,
    frame_picture: bool,
) {
    let info = env.info;
    let precision = info.intra_dc_precision;
    let type_table = match info.coding_type {
        PictureType::I => &tables().mb_type_i,
        PictureType::P => &tables().mb_type_p,
        PictureType::B => &tables().mb_type_b,
    };
    let choose_dct = frame_picture && !info.frame_pred_frame_dct;
    match plan {
        MbPlan::Intra { blocks, field_dct } => {
            put_symbol(
                w,
                type_table,
                Symbol::MbType(MacroblockType {
                    intra: true,
                    ..MacroblockType::default()
                }),
            );
            if choose_dct {
                w.put_bit(*field_dct);
            }
            state.pmv = [[[0; 2]; 2]; 2];
            state.previous = None;
            for (k, levels) in blocks.iter().enumerate() {
                let c = k.saturating_sub(3);
                put_dc_differential(w, k < 4, levels[0] - state.dc[c]);
                state.dc[c] = levels[0];
                put_coefficients(w, levels, scan, 1, intra_table, false);
            }
        }
        MbPlan::Inter {
            motion,
            residual,
            field_dct,
            ..
        } => {
            state.reset_dc(precision);
            let cbp = residual
                .iter()
                .enumerate()
                .filter(|(_, b)| b.is_some())
                .fold(0u8, |acc, (k, _)| acc | 1 << (5 - k));
            put_symbol(
                w,
                type_table,
                Symbol::MbType(MacroblockType {
                    forward: motion.forward.is_some(),
                    backward: motion.backward.is_some(),
                    pattern: cbp != 0,
                    ..MacroblockType::default()
                }),
            );
            if frame_picture && !info.frame_pred_frame_dct {
                w.put_bits(if motion.mode == Mode::FieldInFrame { 0b01 } else { 0b10 }, 2);
            } else if !frame_picture {
                w.put_bits(0b01, 2);
            }
            if choose_dct && cbp != 0 {
                w.put_bit(*field_dct);
            }
            for (s, vectors) in [motion.forward, motion.backward].into_iter().enumerate() {
                let Some(vectors) = vectors else { continue };
                let f = info.f_codes[s];
                match motion.mode {
                    Mode::Frame | Mode::FieldInField => {
                        let fv = vectors[0];
                        if motion.mode == Mode::FieldInField {
                            w.put_bit(fv.select == 1);
                        }
                        put_motion_component(w, fv.mv[0], state.pmv[0][s][0], f[0]);
                        put_motion_component(w, fv.mv[1], state.pmv[0][s][1], f[1]);
                        state.pmv[0][s] = fv.mv;
                        state.pmv[1][s] = fv.mv;
                    }
                    Mode::FieldInFrame => {
                        for (r, fv) in vectors.iter().enumerate() {
                            w.put_bit(fv.select == 1);
                            put_motion_component(w, fv.mv[0], state.pmv[r][s][0], f[0]);
                            put_motion_component(w, fv.mv[1], state.pmv[r][s][1] >> 1, f[1]);
                            state.pmv[r][s] = [fv.mv[0], fv.mv[1] * 2];
                        }
                    }
                }
            }
            if cbp != 0 {
                put_symbol(w, &tables().cbp, Symbol::Cbp(cbp));
            }
            for levels in residual.iter().flatten() {
                put_coefficients(w, levels, scan, 0, &tables().dct_b14, true);
            }
            state.previous = Some(*motion);
        }
    }
}
