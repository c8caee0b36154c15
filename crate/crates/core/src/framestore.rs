//! Decoded pictures, reference-frame bookkeeping and decode-to-display
//! reordering.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::headers::{PictureStructure, PictureType};

/// One 8-bit sample plane, stored row-major without padding.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Plane {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl Plane {
    pub fn new(width: usize, height: usize, fill: u8) -> Plane {
        Plane {
            width,
            height,
            data: vec![fill; width * height],
        }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<u8>) -> Result<Plane> {
        if data.len() != width * height {
            return Err(Error::GeometryMismatch(format!(
                "{} samples for a {width}x{height} plane",
                data.len()
            )));
        }
        Ok(Plane {
            width,
            height,
            data,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: u8) {
        self.data[y * self.width + x] = v;
    }

    pub fn row(&self, y: usize) -> &[u8] {
        &self.data[y * self.width..(y + 1) * self.width]
    }

    /// The whole plane as a view.
    pub fn view(&self) -> PlaneView<'_> {
        PlaneView {
            data: &self.data,
            offset: 0,
            stride: self.width,
            width: self.width,
            height: self.height,
        }
    }

    /// One field (0 = top, even rows; 1 = bottom, odd rows) as a view.
    pub fn field(&self, parity: usize) -> PlaneView<'_> {
        debug_assert!(parity < 2);
        PlaneView {
            data: &self.data,
            offset: parity * self.width,
            stride: 2 * self.width,
            width: self.width,
            height: (self.height + 1 - parity) / 2,
        }
    }

    /// Copies a `w`×`h` block into the plane at (`x`, `y`), writing block
    /// row `r` to plane row `y + r * row_step`.
    pub fn put_block(&mut self, x: usize, y: usize, w: usize, h: usize, row_step: usize, src: &[u8]) {
        for r in 0..h {
            let at = (y + r * row_step) * self.width + x;
            self.data[at..at + w].copy_from_slice(&src[r * w..(r + 1) * w]);
        }
    }
}

/// Read-only strided window onto a [`Plane`]: a whole frame or one field.
#[derive(Debug, Clone, Copy)]
pub struct PlaneView<'a> {
    data: &'a [u8],
    offset: usize,
    stride: usize,
    pub width: usize,
    pub height: usize,
}

impl PlaneView<'_> {
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.data[self.offset + y * self.stride + x]
    }
}

/// Which rows of a frame a write covers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FieldTarget {
    Top,
    Bottom,
    Whole,
}

impl From<PictureStructure> for FieldTarget {
    fn from(s: PictureStructure) -> Self {
        match s {
            PictureStructure::TopField => FieldTarget::Top,
            PictureStructure::BottomField => FieldTarget::Bottom,
            PictureStructure::FramePicture => FieldTarget::Whole,
        }
    }
}

/// Writes rows (concatenated, `plane.width()` samples each) into a frame
/// plane: contiguously for `Whole`, interleaved into even or odd rows for a
/// field.
pub fn write_field_or_frame(plane: &mut Plane, field: FieldTarget, rows: &[u8]) -> Result<()> {
    let (first, step, count) = match field {
        FieldTarget::Whole => (0, 1, plane.height),
        FieldTarget::Top => (0, 2, plane.height.div_ceil(2)),
        FieldTarget::Bottom => (1, 2, plane.height / 2),
    };
    if rows.len() != count * plane.width {
        return Err(Error::GeometryMismatch(format!(
            "{} samples for {count} rows of {}",
            rows.len(),
            plane.width
        )));
    }
    let w = plane.width;
    plane.put_block(0, first, w, count, step, rows);
    Ok(())
}

/// A decoded frame (or assembled field pair) in 4:2:0.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FramePicture {
    pub y: Plane,
    pub cb: Plane,
    pub cr: Plane,
    pub temporal_reference: u16,
    pub coding_type: PictureType,
    pub progressive: bool,
    /// Position in decode order; both fields of a frame share it.
    pub decode_index: u64,
}

impl FramePicture {
    /// A mid-gray frame of the given luma size.
    pub fn blank(width: usize, height: usize) -> FramePicture {
        FramePicture {
            y: Plane::new(width, height, 128),
            cb: Plane::new(width / 2, height / 2, 128),
            cr: Plane::new(width / 2, height / 2, 128),
            temporal_reference: 0,
            coding_type: PictureType::I,
            progressive: true,
            decode_index: 0,
        }
    }

    pub fn width(&self) -> usize {
        self.y.width()
    }

    pub fn height(&self) -> usize {
        self.y.height()
    }

    /// Plane by component index: 0 luma, 1 Cb, 2 Cr.
    pub fn plane(&self, component: usize) -> &Plane {
        match component {
            0 => &self.y,
            1 => &self.cb,
            _ => &self.cr,
        }
    }

    pub fn plane_mut(&mut self, component: usize) -> &mut Plane {
        match component {
            0 => &mut self.y,
            1 => &mut self.cb,
            _ => &mut self.cr,
        }
    }

    /// The top-left `width`×`height` luma area with matching chroma.
    pub fn cropped(&self, width: usize, height: usize) -> FramePicture {
        let crop = |p: &Plane, w: usize, h: usize| {
            let data = (0..h).flat_map(|y| p.row(y)[..w].iter().copied()).collect();
            Plane {
                width: w,
                height: h,
                data,
            }
        };
        let (cw, ch) = (width.div_ceil(2), height.div_ceil(2));
        FramePicture {
            y: crop(&self.y, width, height),
            cb: crop(&self.cb, cw, ch),
            cr: crop(&self.cr, cw, ch),
            ..self.clone()
        }
    }

    /// Display label such as `P3`.
    pub fn name(&self) -> String {
        format!("{}{}", self.coding_type.letter(), self.temporal_reference)
    }
}

/// References used to predict one picture.
#[derive(Debug, Clone, Default)]
pub struct ReferencePair {
    pub forward: Option<Arc<FramePicture>>,
    pub backward: Option<Arc<FramePicture>>,
}

/// Holds the two most recent reference frames and reorders output.
///
/// The newest reference is always the one not yet displayed: it is released
/// when the next I or P picture arrives, or by [`flush`](Self::flush).
#[derive(Debug, Default)]
pub struct FrameStore {
    older: Option<Arc<FramePicture>>,
    newer: Option<Arc<FramePicture>>,
}

impl FrameStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// References for a picture of the given type. P pictures predict from
    /// the newest reference; B pictures from the older (forward) and newer
    /// (backward) ones. A B picture in a closed GOP may lack the forward one.
    pub fn references(&self, coding_type: PictureType, closed_gop: bool) -> Result<ReferencePair> {
        match coding_type {
            PictureType::I => Ok(ReferencePair::default()),
            PictureType::P => match &self.newer {
                Some(r) => Ok(ReferencePair {
                    forward: Some(r.clone()),
                    backward: None,
                }),
                None => Err(Error::MissingReference("forward")),
            },
            PictureType::B => match (&self.older, &self.newer) {
                (older, Some(b)) if older.is_some() || closed_gop => Ok(ReferencePair {
                    forward: older.clone(),
                    backward: Some(b.clone()),
                }),
                _ => Err(Error::BrokenGop),
            },
        }
    }

    /// Stores a fully reconstructed picture and returns the pictures that
    /// become displayable, in display order.
    pub fn commit_picture(&mut self, picture: Arc<FramePicture>) -> Result<Vec<Arc<FramePicture>>> {
        match picture.coding_type {
            PictureType::B => {
                if self.newer.is_none() {
                    return Err(Error::BrokenGop);
                }
                Ok(vec![picture])
            }
            PictureType::I | PictureType::P => {
                let out = self.newer.iter().cloned().collect();
                self.older = self.newer.replace(picture);
                Ok(out)
            }
        }
    }

    /// Releases the held reference at end of stream and empties the store.
    pub fn flush(&mut self) -> Vec<Arc<FramePicture>> {
        self.older = None;
        self.newer.take().into_iter().collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pic(t: PictureType, tr: u16, idx: u64) -> Arc<FramePicture> {
        let mut f = FramePicture::blank(16, 16);
        f.coding_type = t;
        f.temporal_reference = tr;
        f.decode_index = idx;
        Arc::new(f)
    }

    fn names(v: &[Arc<FramePicture>]) -> Vec<String> {
        v.iter().map(|p| p.name()).collect()
    }

    #[test]
    fn i_p_b_reorders_to_i_b_p() {
        let mut s = FrameStore::new();
        assert!(s.commit_picture(pic(PictureType::I, 0, 0)).unwrap().is_empty());
        assert_eq!(names(&s.commit_picture(pic(PictureType::P, 2, 1)).unwrap()), ["I0"]);
        assert_eq!(names(&s.commit_picture(pic(PictureType::B, 1, 2)).unwrap()), ["B1"]);
        assert_eq!(names(&s.flush()), ["P2"]);
        assert!(s.flush().is_empty());
    }

    #[test]
    fn single_picture_released_by_flush() {
        let mut s = FrameStore::new();
        assert!(s.commit_picture(pic(PictureType::I, 0, 0)).unwrap().is_empty());
        assert_eq!(names(&s.flush()), ["I0"]);
        assert!(s.flush().is_empty());
    }

    #[test]
    fn b_without_references_is_broken_gop() {
        let mut s = FrameStore::new();
        assert_eq!(
            s.commit_picture(pic(PictureType::B, 0, 0)).unwrap_err(),
            Error::BrokenGop
        );
        s.commit_picture(pic(PictureType::I, 2, 0)).unwrap();
        assert_eq!(s.references(PictureType::B, false).unwrap_err(), Error::BrokenGop);
        let closed = s.references(PictureType::B, true).unwrap();
        assert!(closed.forward.is_none());
        assert_eq!(closed.backward.unwrap().name(), "I2");
        assert!(s.references(PictureType::P, false).is_ok());
    }

    #[test]
    fn references_follow_picture_type() {
        let mut s = FrameStore::new();
        assert_eq!(
            s.references(PictureType::P, false).unwrap_err(),
            Error::MissingReference("forward")
        );
        s.commit_picture(pic(PictureType::I, 0, 0)).unwrap();
        s.commit_picture(pic(PictureType::P, 3, 1)).unwrap();
        let p = s.references(PictureType::P, false).unwrap();
        assert_eq!(p.forward.unwrap().name(), "P3");
        let b = s.references(PictureType::B, false).unwrap();
        assert_eq!(b.forward.unwrap().name(), "I0");
        assert_eq!(b.backward.unwrap().name(), "P3");
    }

    #[test]
    fn field_writes_interleave() {
        let mut p = Plane::new(2, 4, 0);
        write_field_or_frame(&mut p, FieldTarget::Top, &[1, 1, 2, 2]).unwrap();
        write_field_or_frame(&mut p, FieldTarget::Bottom, &[3, 3, 4, 4]).unwrap();
        assert_eq!(p.data(), &[1, 1, 3, 3, 2, 2, 4, 4]);
        write_field_or_frame(&mut p, FieldTarget::Whole, &[5, 5, 6, 6, 7, 7, 8, 8]).unwrap();
        assert_eq!(p.data(), &[5, 5, 6, 6, 7, 7, 8, 8]);
        assert!(matches!(
            write_field_or_frame(&mut p, FieldTarget::Top, &[1, 1]),
            Err(Error::GeometryMismatch(_))
        ));
    }

    #[test]
    fn field_views_address_alternate_rows() {
        let p = Plane::from_vec(1, 4, vec![10, 11, 12, 13]).unwrap();
        let top = p.field(0);
        let bottom = p.field(1);
        assert_eq!((top.height, bottom.height), (2, 2));
        assert_eq!((top.get(0, 0), top.get(0, 1)), (10, 12));
        assert_eq!((bottom.get(0, 0), bottom.get(0, 1)), (11, 13));
    }

    fn pattern_strategy() -> impl Strategy<Value = Vec<PictureType>> {
        // Decode-order patterns: an I, then groups of reference + B's.
        proptest::collection::vec((any::<bool>(), 0usize..3), 0..8).prop_map(|groups| {
            let mut v = vec![PictureType::I];
            for (intra, bs) in groups {
                v.push(if intra { PictureType::I } else { PictureType::P });
                v.extend(std::iter::repeat_n(PictureType::B, bs));
            }
            v
        })
    }

    proptest! {
        #[test]
        fn every_picture_emitted_once_in_display_order(pattern in pattern_strategy()) {
            // Assign temporal references the way an encoder would.
            let mut trs = vec![0u16; pattern.len()];
            let mut next_display = 0u16;
            let mut pending_ref: Option<usize> = None;
            for (i, t) in pattern.iter().enumerate() {
                if t.is_reference() {
                    if let Some(r) = pending_ref.take() {
                        trs[r] = next_display;
                        next_display += 1;
                    }
                    pending_ref = Some(i);
                } else {
                    trs[i] = next_display;
                    next_display += 1;
                }
            }
            if let Some(r) = pending_ref {
                trs[r] = next_display;
            }

            let mut s = FrameStore::new();
            let mut out = Vec::new();
            for (i, t) in pattern.iter().enumerate() {
                out.extend(s.commit_picture(pic(*t, trs[i], i as u64)).unwrap());
                if let (Some(f), Some(b)) = (&s.older, &s.newer) {
                    prop_assert!(!Arc::ptr_eq(f, b));
                }
            }
            out.extend(s.flush());
            let displayed: Vec<u16> = out.iter().map(|p| p.temporal_reference).collect();
            prop_assert_eq!(displayed, (0..pattern.len() as u16).collect::<Vec<_>>());
            let mut idx: Vec<u64> = out.iter().map(|p| p.decode_index).collect();
            idx.sort();
            prop_assert_eq!(idx, (0..pattern.len() as u64).collect::<Vec<_>>());
        }
    }
}
