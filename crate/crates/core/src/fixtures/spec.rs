//! Declarative fixture descriptions, read from TOML.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A small stream to generate: geometry, picture types in decode order and
/// how each picture's macroblocks are coded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FixtureSpec {
    #[serde(default)]
    pub name: String,
    pub width: u32,
    pub height: u32,
    /// Picture types in decode order, e.g. `"IPBB"`. Whitespace is ignored.
    pub gop_pattern: String,
    #[serde(default = "default_frame_rate_code")]
    pub frame_rate_code: u8,
    /// Bits per second; a multiple of 400.
    #[serde(default = "default_bit_rate")]
    pub bit_rate: u64,
    /// VBV buffer size in bits; a multiple of 16384.
    #[serde(default = "default_vbv_buffer_size")]
    pub vbv_buffer_size: u64,
    #[serde(default = "default_vbv_delay")]
    pub vbv_delay: u16,
    #[serde(default = "yes")]
    pub progressive_sequence: bool,
    #[serde(default = "yes")]
    pub closed_gop: bool,
    /// Custom intra weights in raster order (64 values).
    #[serde(default)]
    pub intra_matrix: Option<Vec<u8>>,
    #[serde(default)]
    pub non_intra_matrix: Option<Vec<u8>>,
    /// Recipe per picture type letter (`I`, `P`, `B`).
    pub recipe: BTreeMap<String, Recipe>,
    #[serde(default)]
    pub options: OptionsPatch,
    /// Per-picture changes, by decode-order index.
    #[serde(default, rename = "override")]
    pub overrides: Vec<Override>,
}

fn default_frame_rate_code() -> u8 {
    3
}

fn default_bit_rate() -> u64 {
    4_000_000
}

fn default_vbv_buffer_size() -> u64 {
    112 * 16384
}

fn default_vbv_delay() -> u16 {
    crate::headers::VBV_DELAY_VARIABLE
}

fn yes() -> bool {
    true
}

/// How the macroblocks of a picture are coded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Recipe {
    /// Intra, every block DC only.
    Flat {
        y: u8,
        #[serde(default = "mid")]
        cb: u8,
        #[serde(default = "mid")]
        cr: u8,
    },
    /// Intra, luma blocks alternate between two levels.
    Checkerboard { low: u8, high: u8 },
    /// Intra, luma blocks carry a DC level and one AC coefficient at
    /// row `v`, column `u`.
    AcBasis { dc: u8, u: u8, v: u8, level: i32 },
    /// Intra, luma block level grows by `step` per block to the right and
    /// down, wrapping within 16..=235.
    Ramp { start: u8, step: u8 },
    /// Intra, seeded random DC levels plus `coefficients` random AC terms
    /// of magnitude up to `amplitude` in every block.
    Noise {
        seed: u64,
        #[serde(default)]
        coefficients: u8,
        #[serde(default = "one")]
        amplitude: i32,
    },
    /// Frame (or single-field) prediction with the same vectors in every
    /// macroblock. Vectors are `[x, y]` in half samples. `field_select`
    /// applies to field pictures and defaults to the picture's own parity.
    Motion {
        #[serde(default)]
        forward: Option<[i32; 2]>,
        #[serde(default)]
        backward: Option<[i32; 2]>,
        #[serde(default)]
        field_select: Option<u8>,
        /// Quantized DC level added to each luma block.
        #[serde(default)]
        residual: i32,
        #[serde(default)]
        allow_skip: bool,
    },
    /// Field prediction in a frame picture: `[field_select, x, y]` for the
    /// top-field lines and then the bottom-field lines, vertical components
    /// in field lines.
    FieldMotion {
        forward: [[i32; 3]; 2],
        #[serde(default)]
        residual: i32,
    },
}

fn mid() -> u8 {
    128
}

fn one() -> i32 {
    1
}

impl Recipe {
    pub fn is_intra(&self) -> bool {
        !matches!(self, Recipe::Motion { .. } | Recipe::FieldMotion { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Structure {
    Frame,
    Field,
}

/// Coding options of one picture, fully resolved.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PictureOptions {
    pub quantiser_scale_code: u8,
    pub q_scale_type: bool,
    pub intra_vlc_format: bool,
    pub alternate_scan: bool,
    pub intra_dc_precision: u8,
    pub frame_pred_frame_dct: bool,
    /// Field DCT for coded macroblocks (needs `frame_pred_frame_dct` off).
    pub field_dct: bool,
    pub progressive_frame: bool,
    pub structure: Structure,
    pub top_field_first: bool,
    /// Stuff the frame's data with zero bytes up to this size.
    pub pad_to_bytes: Option<usize>,
    pub slices_per_row: usize,
    /// `[row, index]` of a slice whose data is replaced by an invalid code.
    pub corrupt_slice: Option<[usize; 2]>,
}

impl Default for PictureOptions {
    fn default() -> Self {
        PictureOptions {
            quantiser_scale_code: 8,
            q_scale_type: false,
            intra_vlc_format: false,
            alternate_scan: false,
            intra_dc_precision: 8,
            frame_pred_frame_dct: true,
            field_dct: false,
            progressive_frame: true,
            structure: Structure::Frame,
            top_field_first: true,
            pad_to_bytes: None,
            slices_per_row: 1,
            corrupt_slice: None,
        }
    }
}

/// Partial [`PictureOptions`]; unset fields keep the earlier value.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptionsPatch {
    pub quantiser_scale_code: Option<u8>,
    pub q_scale_type: Option<bool>,
    pub intra_vlc_format: Option<bool>,
    pub alternate_scan: Option<bool>,
    pub intra_dc_precision: Option<u8>,
    pub frame_pred_frame_dct: Option<bool>,
    pub field_dct: Option<bool>,
    pub progressive_frame: Option<bool>,
    pub structure: Option<Structure>,
    pub top_field_first: Option<bool>,
    pub pad_to_bytes: Option<usize>,
    pub slices_per_row: Option<usize>,
    pub corrupt_slice: Option<[usize; 2]>,
}

impl OptionsPatch {
    pub fn apply(&self, o: &mut PictureOptions) {
        macro_rules! take {
            ($($f:ident),*) => {
                $(if let Some(v) = self.$f { o.$f = v; })*
            };
        }
        take!(
            quantiser_scale_code,
            q_scale_type,
            intra_vlc_format,
            alternate_scan,
            intra_dc_precision,
            frame_pred_frame_dct,
            field_dct,
            progressive_frame,
            structure,
            top_field_first,
            slices_per_row
        );
        if self.pad_to_bytes.is_some() {
            o.pad_to_bytes = self.pad_to_bytes;
        }
        if self.corrupt_slice.is_some() {
            o.corrupt_slice = self.corrupt_slice;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Override {
    pub index: usize,
    #[serde(default)]
    pub recipe: Option<Recipe>,
    #[serde(default)]
    pub options: OptionsPatch,
}

/// One picture of the pattern with everything resolved.
#[derive(Debug, Clone, PartialEq)]
pub struct PlannedPicture {
    pub letter: char,
    pub recipe: Recipe,
    pub options: PictureOptions,
}

impl FixtureSpec {
    pub fn from_toml(text: &str) -> Result<FixtureSpec> {
        toml::from_str(text).map_err(|e| Error::SpecError(e.to_string()))
    }

    /// Pattern letters in decode order.
    pub fn letters(&self) -> Vec<char> {
        self.gop_pattern.chars().filter(|c| !c.is_whitespace()).collect()
    }

    /// Checks the spec and resolves every picture's recipe and options.
    pub fn plan(&self) -> Result<Vec<PlannedPicture>> {
        let err = |m: String| Err(Error::SpecError(m));
        if self.width == 0 || self.height == 0 || !self.width.is_multiple_of(16) || !self.height.is_multiple_of(16) {
            return err(format!("size {}x{} is not a multiple of 16", self.width, self.height));
        }
        if self.width > 4095 || self.height > 4095 {
            return err("size beyond 12-bit header fields".into());
        }
        if !self.progressive_sequence && !self.height.is_multiple_of(32) {
            return err("interlaced height must be a multiple of 32".into());
        }
        if !(1..=8).contains(&self.frame_rate_code) {
            return err(format!("frame_rate_code {}", self.frame_rate_code));
        }
        if self.bit_rate == 0 || !self.bit_rate.is_multiple_of(400) || self.bit_rate / 400 >= 1 << 30 {
            return err(format!("bit_rate {} is not a positive multiple of 400", self.bit_rate));
        }
        if self.vbv_buffer_size == 0 || !self.vbv_buffer_size.is_multiple_of(16384) || self.vbv_buffer_size / 16384 >= 1 << 18 {
            return err(format!("vbv_buffer_size {}", self.vbv_buffer_size));
        }
        for m in [&self.intra_matrix, &self.non_intra_matrix].into_iter().flatten() {
            if m.len() != 64 || m.contains(&0) {
                return err("quantiser matrices need 64 weights in 1..=255".into());
            }
        }
        if let Some(m) = &self.intra_matrix {
            if m[0] != 8 {
                return err("intra matrix must start with 8".into());
            }
        }

        let letters = self.letters();
        if letters.first() != Some(&'I') {
            return err("the first picture must be I".into());
        }
        let mut base = PictureOptions::default();
        self.options.apply(&mut base);
        let mut references = 0;
        let mut out = Vec::with_capacity(letters.len());
        for (i, &letter) in letters.iter().enumerate() {
            match letter {
                'I' | 'P' => references += 1,
                'B' if references < 2 => {
                    return err(format!("B picture {i} without two earlier references"))
                }
                'B' => {}
                other => return err(format!("picture type {other:?}")),
            }
            let mut options = base.clone();
            let mut recipe = self.recipe.get(&letter.to_string()).cloned();
            for o in self.overrides.iter().filter(|o| o.index == i) {
                o.options.apply(&mut options);
                if o.recipe.is_some() {
                    recipe.clone_from(&o.recipe);
                }
            }
            let Some(recipe) = recipe else {
                return err(format!("no recipe for picture {i} ({letter})"));
            };
            self.check_picture(i, letter, &recipe, &options)?;
            out.push(PlannedPicture {
                letter,
                recipe,
                options,
            });
        }
        if let Some(o) = self.overrides.iter().find(|o| o.index >= letters.len()) {
            return err(format!("override for picture {} beyond the pattern", o.index));
        }
        Ok(out)
    }

    fn check_picture(&self, i: usize, letter: char, recipe: &Recipe, o: &PictureOptions) -> Result<()> {
        let err = |m: String| Err(Error::SpecError(format!("picture {i}: {m}")));
        if !(1..=31).contains(&o.quantiser_scale_code) {
            return err(format!("quantiser_scale_code {}", o.quantiser_scale_code));
        }
        if !(8..=11).contains(&o.intra_dc_precision) {
            return err(format!("intra_dc_precision {}", o.intra_dc_precision));
        }
        if o.slices_per_row == 0 || o.slices_per_row > (self.width / 16) as usize {
            return err(format!("slices_per_row {}", o.slices_per_row));
        }
        let interlaced = o.structure == Structure::Field || !o.progressive_frame || !o.frame_pred_frame_dct;
        if interlaced && self.progressive_sequence {
            return err("field coding needs progressive_sequence = false".into());
        }
        if o.structure == Structure::Field && (o.frame_pred_frame_dct || o.progressive_frame) {
            return err("field pictures need frame_pred_frame_dct and progressive_frame off".into());
        }
        if o.field_dct && (o.frame_pred_frame_dct || o.structure == Structure::Field) {
            return err("field_dct needs frame pictures with frame_pred_frame_dct off".into());
        }
        match recipe {
            Recipe::Motion { .. } | Recipe::FieldMotion { .. } if letter == 'I' => {
                return err("motion recipe in an I picture".into())
            }
            Recipe::Motion {
                forward,
                backward,
                field_select,
                ..
            } => {
                if letter == 'P' && (forward.is_none() || backward.is_some()) {
                    return err("P motion needs exactly a forward vector".into());
                }
                if forward.is_none() && backward.is_none() {
                    return err("motion recipe without vectors".into());
                }
                if field_select.is_some_and(|s| s > 1) {
                    return err("field_select must be 0 or 1".into());
                }
                if field_select.is_some() && o.structure != Structure::Field {
                    return err("field_select needs field pictures".into());
                }
            }
            Recipe::FieldMotion { forward, .. } => {
                if letter != 'P' {
                    return err("field_motion is only generated for P pictures".into());
                }
                if o.structure != Structure::Frame || o.frame_pred_frame_dct {
                    return err("field_motion needs frame pictures with frame_pred_frame_dct off".into());
                }
                if forward.iter().any(|v| !(0..=1).contains(&v[0])) {
                    return err("field_select must be 0 or 1".into());
                }
            }
            Recipe::AcBasis { u, v, level, .. } => {
                if *u > 7 || *v > 7 || (*u, *v) == (0, 0) || *level == 0 || level.abs() > 2047 {
                    return err("ac_basis needs 0 < (u, v) <= 7 and a nonzero level".into());
                }
            }
            Recipe::Noise { amplitude, coefficients, .. } => {
                if *amplitude < 1 || *amplitude > 2047 || *coefficients > 63 {
                    return err("noise needs amplitude 1..=2047 and at most 63 coefficients".into());
                }
            }
            Recipe::Flat { .. } | Recipe::Checkerboard { .. } | Recipe::Ramp { .. } => {}
        }
        Ok(())
    }
}
