use crate::bitio::START_CODE_PREFIX;
use crate::vlc::VlcEntry;

/// MSB-first bit writer, the encoding counterpart of [`crate::bitio::BitCursor`].
#[derive(Debug, Default, Clone)]
pub struct BitWriter {
    bytes: Vec<u8>,
    /// Bits used in the last byte (0 means the writer is byte aligned).
    fill: u32,
}

impl BitWriter {
    pub fn new() -> Self {
        Self::default()
    }

    /// Number of bits written so far.
    pub fn bit_len(&self) -> u64 {
        if self.fill == 0 {
            self.bytes.len() as u64 * 8
        } else {
            (self.bytes.len() as u64 - 1) * 8 + u64::from(self.fill)
        }
    }

    pub fn is_byte_aligned(&self) -> bool {
        self.fill == 0
    }

    /// Appends the low `n` bits of `value`, most significant first.
    pub fn put_bits(&mut self, value: u32, n: u32) {
        assert!(n <= 32);
        debug_assert!(n == 32 || value >> n == 0, "{value} does not fit in {n} bits");
        for i in (0..n).rev() {
            self.put_bit((value >> i) & 1 == 1);
        }
    }

    pub fn put_bit(&mut self, bit: bool) {
        if self.fill == 0 {
            self.bytes.push(0);
        }
        if bit {
            *self.bytes.last_mut().unwrap() |= 0x80 >> self.fill;
        }
        self.fill = (self.fill + 1) % 8;
    }

    /// Writes a signed value in `n`-bit two's complement.
    pub fn put_signed(&mut self, value: i32, n: u32) {
        self.put_bits((value as u32) & ((1u64 << n) - 1) as u32, n);
    }

    pub fn put_vlc(&mut self, entry: VlcEntry) {
        self.put_bits(entry.code, u32::from(entry.len));
    }

    /// Pads with zero bits up to the next byte boundary.
    pub fn align(&mut self) {
        self.fill = 0;
    }

    pub fn put_zero_bytes(&mut self, n: usize) {
        self.align();
        self.bytes.resize(self.bytes.len() + n, 0);
    }

    /// Aligns, then writes `00 00 01 code`.
    pub fn start_code(&mut self, code: u8) {
        self.align();
        self.put_bits(START_CODE_PREFIX, 24);
        self.put_bits(u32::from(code), 8);
    }

    pub fn bytes(&self) -> &[u8] {
        &self.bytes
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.bytes
    }
}
