//! Bit-granular reading over an in-memory elementary stream.
//!
//! A single [`BitCursor`] stands in for the input/temporary/flush buffer
//! triple of a classic C decoder: the whole stream is held in memory and the
//! cursor tracks an absolute bit offset into it.

use crate::error::{Error, Result};

/// Start-code prefix `00 00 01`.
pub const START_CODE_PREFIX: u32 = 0x00_0001;

pub const PICTURE_START_CODE: u8 = 0x00;
pub const SLICE_START_CODE_MIN: u8 = 0x01;
pub const SLICE_START_CODE_MAX: u8 = 0xAF;
pub const USER_DATA_START_CODE: u8 = 0xB2;
pub const SEQUENCE_HEADER_CODE: u8 = 0xB3;
pub const SEQUENCE_ERROR_CODE: u8 = 0xB4;
pub const EXTENSION_START_CODE: u8 = 0xB5;
pub const SEQUENCE_END_CODE: u8 = 0xB7;
pub const GROUP_START_CODE: u8 = 0xB8;

/// Returns true for start-code bytes that open a slice.
pub fn is_slice_start_code(code: u8) -> bool {
    (SLICE_START_CODE_MIN..=SLICE_START_CODE_MAX).contains(&code)
}

/// Position-tracked, read-only view over a byte stream.
#[derive(Debug, Clone)]
pub struct BitCursor<'a> {
    data: &'a [u8],
    bit_pos: u64,
}

impl<'a> BitCursor<'a> {
    pub fn new(data: &'a [u8]) -> Self {
        BitCursor { data, bit_pos: 0 }
    }

    pub fn data(&self) -> &'a [u8] {
        self.data
    }

    pub fn total_bits(&self) -> u64 {
        self.data.len() as u64 * 8
    }

    pub fn bits_remaining(&self) -> u64 {
        self.total_bits() - self.bit_pos
    }

    /// Current absolute bit offset from the start of the stream.
    pub fn bits_consumed(&self) -> u64 {
        self.bit_pos
    }

    pub fn is_byte_aligned(&self) -> bool {
        self.bit_pos.is_multiple_of(8)
    }

    /// Moves to an absolute bit offset. Offsets past the end are clamped.
    pub fn seek_to_bit(&mut self, bit_pos: u64) {
        self.bit_pos = bit_pos.min(self.total_bits());
    }

    fn check(&self, n: u32) -> Result<()> {
        assert!(n <= 32, "bit reads are limited to 32 bits, got {n}");
        if u64::from(n) > self.bits_remaining() {
            return Err(Error::EndOfStream {
                bit_pos: self.bit_pos,
                wanted: n,
            });
        }
        Ok(())
    }

    /// Reads `n` bits (up to 32) at the cursor, MSB first, zero-filling
    /// anything past the end of data. Callers check bounds first.
    fn fetch(&self, n: u32) -> u32 {
        if n == 0 {
            return 0;
        }
        let byte = (self.bit_pos / 8) as usize;
        let shift = (self.bit_pos % 8) as u32;
        let mut window: u64 = 0;
        for i in 0..5 {
            let b = self.data.get(byte + i).copied().unwrap_or(0);
            window = (window << 8) | u64::from(b);
        }
        // 40-bit window; drop the already consumed `shift` bits.
        ((window << (24 + shift)) >> (64 - n)) as u32
    }

    /// Returns the next `n` bits without advancing.
    pub fn peek_bits(&self, n: u32) -> Result<u32> {
        self.check(n)?;
        Ok(self.fetch(n))
    }

    /// Like [`peek_bits`](Self::peek_bits), but bits past the end of the
    /// stream read as zero. Used by table lookups that peek a fixed window.
    pub fn peek_bits_padded(&self, n: u32) -> u32 {
        assert!(n <= 32);
        self.fetch(n)
    }

    pub fn read_bits(&mut self, n: u32) -> Result<u32> {
        self.check(n)?;
        let v = self.fetch(n);
        self.bit_pos += u64::from(n);
        Ok(v)
    }

    pub fn read_bit(&mut self) -> Result<bool> {
        Ok(self.read_bits(1)? == 1)
    }

    pub fn skip_bits(&mut self, n: u64) -> Result<()> {
        if n > self.bits_remaining() {
            return Err(Error::EndOfStream {
                bit_pos: self.bit_pos,
                wanted: n.min(u64::from(u32::MAX)) as u32,
            });
        }
        self.bit_pos += n;
        Ok(())
    }

    /// Reads a marker bit, which must be 1.
    pub fn read_marker(&mut self, what: &str) -> Result<()> {
        if self.read_bit()? {
            Ok(())
        } else {
            Err(Error::header(format!("marker bit after {what} is zero")))
        }
    }

    pub fn align_to_byte(&mut self) {
        self.bit_pos = self.bit_pos.div_ceil(8) * 8;
        self.bit_pos = self.bit_pos.min(self.total_bits());
    }

    /// True when the next 24 bits are a byte-aligned start-code prefix, or
    /// when the remaining bits in a byte are zero padding before one.
    pub fn at_start_code_or_end(&self) -> bool {
        // A slice ends where the next 23 bits are all zero.
        let remaining = self.bits_remaining();
        if remaining < 23 {
            return self.peek_bits_padded(remaining as u32) == 0;
        }
        self.fetch(23) == 0
    }

    /// Byte-aligns, scans to the next `00 00 01` prefix, consumes it and the
    /// following code byte, and returns that byte. Returns `None` when no
    /// further start code exists; the cursor is then left at end of stream.
    pub fn next_start_code(&mut self) -> Option<u8> {
        self.align_to_byte();
        let start = (self.bit_pos / 8) as usize;
        match find_start_code(self.data, start) {
            Some(prefix_at) => {
                self.bit_pos = (prefix_at as u64 + 4) * 8;
                Some(self.data[prefix_at + 3])
            }
            None => {
                self.bit_pos = self.total_bits();
                None
            }
        }
    }

    /// Bit offset where the most recently consumed start code's prefix
    /// began. Only meaningful right after [`next_start_code`](Self::next_start_code).
    pub fn last_start_code_offset(&self) -> u64 {
        self.bit_pos.saturating_sub(32)
    }
}

/// Byte offset of the first `00 00 01 xx` at or after `from`.
pub fn find_start_code(data: &[u8], from: usize) -> Option<usize> {
    let mut i = from;
    while i + 3 < data.len() {
        if data[i + 2] > 1 {
            i += 3;
        } else if data[i] == 0 && data[i + 1] == 0 && data[i + 2] == 1 {
            return Some(i);
        } else {
            i += 1;
        }
    }
    None
}
