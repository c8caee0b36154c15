//! Table-driven variable-length decoding.
//!
//! Code tables are loaded from the text files under `tables/`, audited for
//! prefix-freeness, and compiled into a two-level peek-then-index lookup.

use std::fmt;
use std::sync::OnceLock;

use crate::bitio::BitCursor;
use crate::error::{Error, Result};

/// Longest code, in bits, of any table entry (sign bits excluded).
pub const MAX_TABLE_CODE_LENGTH: u8 = 16;

/// Longest coefficient code including its trailing sign bit.
pub const MAX_CODE_LENGTH_WITH_SIGN: u8 = 17;

const PRIMARY_BITS: u8 = 8;

/// Flags carried by a `macroblock_type` code.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash)]
pub struct MacroblockType {
    pub quant: bool,
    pub forward: bool,
    pub backward: bool,
    pub pattern: bool,
    pub intra: bool,
}

/// Symbols produced by the code tables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Symbol {
    Increment(u8),
    AddressEscape,
    MbType(MacroblockType),
    Cbp(u8),
    Motion(i8),
    DcSize(u8),
    Coeff { run: u8, level: u8 },
    Eob,
    Escape,
}

impl fmt::Display for Symbol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Symbol::Increment(n) => write!(f, "increment {n}"),
            Symbol::AddressEscape | Symbol::Escape => f.write_str("escape"),
            Symbol::MbType(t) => {
                f.write_str("type")?;
                for (on, name) in [
                    (t.quant, "quant"),
                    (t.forward, "forward"),
                    (t.backward, "backward"),
                    (t.pattern, "pattern"),
                    (t.intra, "intra"),
                ] {
                    if on {
                        write!(f, " {name}")?;
                    }
                }
                Ok(())
            }
            Symbol::Cbp(n) => write!(f, "cbp {n}"),
            Symbol::Motion(n) => write!(f, "motion {n}"),
            Symbol::DcSize(n) => write!(f, "size {n}"),
            Symbol::Coeff { run, level } => write!(f, "coeff {run} {level}"),
            Symbol::Eob => f.write_str("eob"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VlcEntry {
    /// Code bits, right-aligned.
    pub code: u32,
    pub len: u8,
    pub symbol: Symbol,
}

impl VlcEntry {
    pub fn bit_string(&self) -> String {
        (0..self.len)
            .rev()
            .map(|i| if self.code >> i & 1 == 1 { '1' } else { '0' })
            .collect()
    }
}

#[derive(Debug, Clone, Copy)]
enum Slot {
    Empty,
    Leaf { entry: u16, len: u8 },
    Sub { start: u32, bits: u8 },
}

/// A prefix-free code table compiled for lookup.
#[derive(Debug, Clone)]
pub struct VlcTable {
    name: String,
    entries: Vec<VlcEntry>,
    max_code_length: u8,
    primary_bits: u8,
    primary: Vec<Slot>,
    secondary: Vec<Slot>,
}

fn parse_symbol(name: &str, args: &[&str]) -> std::result::Result<Symbol, String> {
    let int = |i: usize| -> std::result::Result<i64, String> {
        args.get(i)
            .ok_or_else(|| format!("`{name}` needs argument {}", i + 1))?
            .parse::<i64>()
            .map_err(|e| format!("bad argument for `{name}`: {e}"))
    };
    let arity = |n: usize| {
        if args.len() == n {
            Ok(())
        } else {
            Err(format!("`{name}` takes {n} arguments, got {}", args.len()))
        }
    };
    Ok(match name {
        "increment" => {
            arity(1)?;
            Symbol::Increment(int(0)? as u8)
        }
        "escape" => {
            arity(0)?;
            Symbol::Escape
        }
        "eob" => {
            arity(0)?;
            Symbol::Eob
        }
        "cbp" => {
            arity(1)?;
            Symbol::Cbp(int(0)? as u8)
        }
        "motion" => {
            arity(1)?;
            Symbol::Motion(int(0)? as i8)
        }
        "size" => {
            arity(1)?;
            Symbol::DcSize(int(0)? as u8)
        }
        "coeff" => {
            arity(2)?;
            Symbol::Coeff {
                run: int(0)? as u8,
                level: int(1)? as u8,
            }
        }
        "type" => {
            let mut t = MacroblockType::default();
            for flag in args {
                match *flag {
                    "quant" => t.quant = true,
                    "forward" => t.forward = true,
                    "backward" => t.backward = true,
                    "pattern" => t.pattern = true,
                    "intra" => t.intra = true,
                    other => return Err(format!("unknown macroblock_type flag `{other}`")),
                }
            }
            Symbol::MbType(t)
        }
        other => return Err(format!("unknown symbol `{other}`")),
    })
}

impl VlcTable {
    /// Parses the `<bitstring> <symbol-name> <args...>` text format.
    pub fn from_text(name: &str, text: &str) -> std::result::Result<Self, String> {
        let mut entries = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let mut words = line.split_whitespace();
            let bits = words.next().unwrap_or_default();
            if bits.is_empty() || bits.len() > usize::from(MAX_TABLE_CODE_LENGTH) {
                return Err(format!("{name}:{}: bad code length", lineno + 1));
            }
            let mut code = 0u32;
            for ch in bits.chars() {
                code = (code << 1)
                    | match ch {
                        '0' => 0,
                        '1' => 1,
                        _ => return Err(format!("{name}:{}: bad bit `{ch}`", lineno + 1)),
                    };
            }
            let sym_name = words.next().ok_or(format!("{name}:{}: missing symbol", lineno + 1))?;
            let args: Vec<&str> = words.collect();
            let symbol =
                parse_symbol(sym_name, &args).map_err(|e| format!("{name}:{}: {e}", lineno + 1))?;
            let symbol = match (symbol, name) {
                (Symbol::Escape, "mb_address_inc") => Symbol::AddressEscape,
                (s, _) => s,
            };
            entries.push(VlcEntry {
                code,
                len: bits.len() as u8,
                symbol,
            });
        }
        Self::from_entries(name, entries)
    }

    pub fn from_entries(name: &str, entries: Vec<VlcEntry>) -> std::result::Result<Self, String> {
        if entries.is_empty() {
            return Err(format!("{name}: empty table"));
        }
        if let Some((a, b)) = prefix_violation(&entries) {
            return Err(format!(
                "{name}: `{}` ({}) is a prefix of `{}` ({})",
                a.bit_string(),
                a.symbol,
                b.bit_string(),
                b.symbol
            ));
        }
        let max_code_length = entries.iter().map(|e| e.len).max().unwrap_or(0);
        let primary_bits = max_code_length.min(PRIMARY_BITS);
        let mut primary = vec![Slot::Empty; 1 << primary_bits];
        let mut secondary = Vec::new();

        // Short codes expand directly into the primary table.
        for (idx, e) in entries.iter().enumerate() {
            if e.len <= primary_bits {
                let pad = primary_bits - e.len;
                let base = (e.code << pad) as usize;
                for slot in &mut primary[base..base + (1 << pad)] {
                    *slot = Slot::Leaf {
                        entry: idx as u16,
                        len: e.len,
                    };
                }
            }
        }
        // Long codes get a subtable per primary prefix.
        for prefix in 0..(1u32 << primary_bits) {
            let group: Vec<usize> = entries
                .iter()
                .enumerate()
                .filter(|(_, e)| e.len > primary_bits && e.code >> (e.len - primary_bits) == prefix)
                .map(|(i, _)| i)
                .collect();
            if group.is_empty() {
                continue;
            }
            let bits = group.iter().map(|&i| entries[i].len).max().unwrap() - primary_bits;
            let start = secondary.len() as u32;
            secondary.resize(secondary.len() + (1 << bits), Slot::Empty);
            for &i in &group {
                let e = &entries[i];
                let rest_len = e.len - primary_bits;
                let rest = e.code & ((1 << rest_len) - 1);
                let pad = bits - rest_len;
                let base = start as usize + ((rest << pad) as usize);
                for slot in &mut secondary[base..base + (1 << pad)] {
                    *slot = Slot::Leaf {
                        entry: i as u16,
                        len: e.len,
                    };
                }
            }
            primary[prefix as usize] = Slot::Sub { start, bits };
        }

        Ok(VlcTable {
            name: name.to_string(),
            entries,
            max_code_length,
            primary_bits,
            primary,
            secondary,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn entries(&self) -> &[VlcEntry] {
        &self.entries
    }

    pub fn max_code_length(&self) -> u8 {
        self.max_code_length
    }

    /// Code for `symbol`, if the table has one.
    pub fn encode(&self, symbol: Symbol) -> Option<VlcEntry> {
        self.entries.iter().copied().find(|e| e.symbol == symbol)
    }

    /// Kraft sum of the table, scaled by 2^max_code_length.
    pub fn kraft_numerator(&self) -> u64 {
        self.entries
            .iter()
            .map(|e| 1u64 << (self.max_code_length - e.len))
            .sum()
    }

    fn lookup(&self, cursor: &BitCursor<'_>) -> Option<(usize, u8)> {
        let head = cursor.peek_bits_padded(u32::from(self.primary_bits)) as usize;
        match self.primary[head] {
            Slot::Empty => None,
            Slot::Leaf { entry, len } => Some((entry as usize, len)),
            Slot::Sub { start, bits } => {
                let total = u32::from(self.primary_bits + bits);
                let window = cursor.peek_bits_padded(total) as usize;
                let idx = start as usize + (window & ((1 << bits) - 1));
                match self.secondary[idx] {
                    Slot::Leaf { entry, len } => Some((entry as usize, len)),
                    _ => None,
                }
            }
        }
    }
}

/// Finds a pair of entries where the first code is a prefix of the second.
fn prefix_violation(entries: &[VlcEntry]) -> Option<(VlcEntry, VlcEntry)> {
    let mut sorted = entries.to_vec();
    // Left-aligned lexicographic order puts every prefix right before the
    // codes it prefixes.
    sorted.sort_by_key(|e| ((u64::from(e.code)) << (32 - e.len), e.len));
    for pair in sorted.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        if a.len <= b.len && b.code >> (b.len - a.len) == a.code {
            return Some((a, b));
        }
    }
    None
}

/// Decodes one symbol, consuming exactly the matched code.
pub fn decode_symbol(cursor: &mut BitCursor<'_>, table: &VlcTable) -> Result<Symbol> {
    let pos = cursor.bits_consumed();
    let (idx, len) = table.lookup(cursor).ok_or(Error::InvalidCode { bit_pos: pos })?;
    cursor.skip_bits(u64::from(len))?;
    Ok(table.entries[idx].symbol)
}

/// All code tables used by the decoder.
#[derive(Debug)]
pub struct Tables {
    pub mb_address_inc: VlcTable,
    pub mb_type_i: VlcTable,
    pub mb_type_p: VlcTable,
    pub mb_type_b: VlcTable,
    pub cbp: VlcTable,
    pub motion_code: VlcTable,
    pub dc_size_luma: VlcTable,
    pub dc_size_chroma: VlcTable,
    pub dct_b14: VlcTable,
    pub dct_b15: VlcTable,
}

impl Tables {
    pub fn all(&self) -> [&VlcTable; 10] {
        [
            &self.mb_address_inc,
            &self.mb_type_i,
            &self.mb_type_p,
            &self.mb_type_b,
            &self.cbp,
            &self.motion_code,
            &self.dc_size_luma,
            &self.dc_size_chroma,
            &self.dct_b14,
            &self.dct_b15,
        ]
    }
}

macro_rules! load_table {
    ($name:literal) => {
        VlcTable::from_text($name, include_str!(concat!("../tables/", $name, ".vlc")))
            .unwrap_or_else(|e| panic!("built-in table failed audit: {e}"))
    };
}

/// The shared, immutable code tables.
pub fn tables() -> &'static Tables {
    static TABLES: OnceLock<Tables> = OnceLock::new();
    TABLES.get_or_init(|| Tables {
        mb_address_inc: load_table!("mb_address_inc"),
        mb_type_i: load_table!("mb_type_i"),
        mb_type_p: load_table!("mb_type_p"),
        mb_type_b: load_table!("mb_type_b"),
        cbp: load_table!("cbp"),
        motion_code: load_table!("motion_code"),
        dc_size_luma: load_table!("dc_size_luma"),
        dc_size_chroma: load_table!("dc_size_chroma"),
        dct_b14: load_table!("dct_b14"),
        dct_b15: load_table!("dct_b15"),
    })
}

/// Which DCT coefficient table to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DctTable {
    B14,
    B15,
}

impl DctTable {
    pub fn table(self) -> &'static VlcTable {
        match self {
            DctTable::B14 => &tables().dct_b14,
            DctTable::B15 => &tables().dct_b15,
        }
    }
}

/// Colour component selecting the DC size table.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Component {
    Luma,
    Chroma,
}

/// One decoded (run, level) pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunLevel {
    pub run: u8,
    pub level: i32,
    pub is_escape: bool,
}

impl RunLevel {
    pub fn new(run: u8, level: i32) -> Self {
        RunLevel {
            run,
            level,
            is_escape: false,
        }
    }
}

/// Result of decoding one coefficient code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Coefficient {
    EndOfBlock,
    Value(RunLevel),
}

/// Reads `dct_dc_size` and the differential bits that follow.
pub fn decode_dc_differential(cursor: &mut BitCursor<'_>, component: Component) -> Result<i32> {
    let table = match component {
        Component::Luma => &tables().dc_size_luma,
        Component::Chroma => &tables().dc_size_chroma,
    };
    let size = match decode_symbol(cursor, table)? {
        Symbol::DcSize(s) => u32::from(s),
        other => unreachable!("dc size table yielded {other}"),
    };
    if size == 0 {
        return Ok(0);
    }
    let bits = cursor.read_bits(size)? as i32;
    Ok(dc_differential_from_bits(bits, size))
}

/// Sign rule for DC differentials: a leading 0 bit means negative.
pub fn dc_differential_from_bits(bits: i32, size: u32) -> i32 {
    if bits < 1 << (size - 1) {
        bits - ((1 << size) - 1)
    } else {
        bits
    }
}

/// Decodes one DCT coefficient code (B.14 or B.15), including escapes.
pub fn decode_run_level(
    cursor: &mut BitCursor<'_>,
    table: DctTable,
    first_coefficient: bool,
) -> Result<Coefficient> {
    if table == DctTable::B14 && first_coefficient && cursor.peek_bits(1)? == 1 {
        cursor.skip_bits(1)?;
        let negative = cursor.read_bit()?;
        return Ok(Coefficient::Value(RunLevel::new(0, if negative { -1 } else { 1 })));
    }
    match decode_symbol(cursor, table.table())? {
        Symbol::Eob => Ok(Coefficient::EndOfBlock),
        Symbol::Escape => {
            let run = cursor.read_bits(6)? as u8;
            let raw = cursor.read_bits(12)? as i32;
            let level = if raw >= 2048 { raw - 4096 } else { raw };
            if level == 0 || level == -2048 {
                return Err(Error::EscapeLevelZero { level });
            }
            Ok(Coefficient::Value(RunLevel {
                run,
                level,
                is_escape: true,
            }))
        }
        Symbol::Coeff { run, level } => {
            let negative = cursor.read_bit()?;
            let level = i32::from(level);
            Ok(Coefficient::Value(RunLevel::new(
                run,
                if negative { -level } else { level },
            )))
        }
        other => unreachable!("coefficient table yielded {other}"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::BitWriter;
    use proptest::prelude::*;

    fn cursor_over(bits: &str) -> Vec<u8> {
        let mut w = BitWriter::new();
        for ch in bits.chars() {
            w.put_bits(u32::from(ch == '1'), 1);
        }
        w.into_bytes()
    }

    #[test]
    fn address_increment_codes() {
        let t = &tables().mb_address_inc;
        let data = cursor_over("1");
        let mut c = BitCursor::new(&data);
        assert_eq!(decode_symbol(&mut c, t).unwrap(), Symbol::Increment(1));
        assert_eq!(c.bits_consumed(), 1);

        let data = cursor_over("011");
        let mut c = BitCursor::new(&data);
        assert_eq!(decode_symbol(&mut c, t).unwrap(), Symbol::Increment(2));
        assert_eq!(c.bits_consumed(), 3);
    }

    #[test]
    fn zero_run_is_invalid() {
        let data = cursor_over("000000000001");
        let mut c = BitCursor::new(&data);
        assert_eq!(
            decode_symbol(&mut c, &tables().mb_address_inc),
            Err(Error::InvalidCode { bit_pos: 0 })
        );
        assert_eq!(c.bits_consumed(), 0);
    }

    #[test]
    fn every_table_is_prefix_free_and_bounded() {
        for t in tables().all() {
            assert!(prefix_violation(t.entries()).is_none(), "{}", t.name());
            assert!(t.max_code_length() <= MAX_TABLE_CODE_LENGTH, "{}", t.name());
        }
    }

    #[test]
    fn audit_rejects_prefix_collisions() {
        let err = VlcTable::from_text("bad", "1 cbp 1\n10 cbp 2\n").unwrap_err();
        assert!(err.contains("prefix"), "{err}");
    }

    #[test]
    fn coefficient_tables_cover_all_but_start_code_region() {
        // A sign bit splits each run/level code in two without changing its
        // share of the code space, so the plain Kraft sum applies.
        let (b14, b15) = (&tables().dct_b14, &tables().dct_b15);
        assert_eq!(b14.max_code_length(), 16);
        assert_eq!(b15.max_code_length(), 16);
        // Only 0000 0000 0000 xxxx is left unassigned in table zero.
        assert_eq!(b14.kraft_numerator(), (1 << 16) - (1 << 4));
        // Table one also leaves unused the long table-zero codes of the ten
        // coefficients it moved to shorter codes.
        let mut holes = 0u64;
        for e in b14.entries() {
            if e.len < 12 || b15.entries().iter().any(|f| f.len == e.len && f.code == e.code) {
                continue;
            }
            let moved = b15.encode(e.symbol).expect("symbol present in both tables");
            assert!(moved.len < e.len, "{}", e.symbol);
            holes += 1 << (16 - e.len);
        }
        assert_eq!(b15.kraft_numerator() + holes, (1 << 16) - (1 << 4));
        assert_eq!(tables().dct_b14.entries().len(), 113);
        assert_eq!(tables().dct_b15.entries().len(), 113);
    }

    #[test]
    fn small_tables_are_complete_where_expected() {
        let t = tables();
        for table in [&t.dc_size_luma, &t.dc_size_chroma] {
            assert_eq!(table.kraft_numerator(), 1 << table.max_code_length(), "{}", table.name());
        }
        // `00` never starts an I-picture macroblock type.
        assert_eq!(t.mb_type_i.kraft_numerator(), 3);
        // CBP leaves only the all-zero 9-bit code unused.
        assert_eq!(t.cbp.kraft_numerator(), (1 << 9) - 1);
        let mut cbps: Vec<u8> = t
            .cbp
            .entries()
            .iter()
            .map(|e| match e.symbol {
                Symbol::Cbp(v) => v,
                _ => panic!(),
            })
            .collect();
        cbps.sort();
        assert_eq!(cbps, (0..64).collect::<Vec<u8>>());
        let motions: Vec<i8> = t
            .motion_code
            .entries()
            .iter()
            .map(|e| match e.symbol {
                Symbol::Motion(v) => v,
                _ => panic!(),
            })
            .collect();
        assert_eq!(motions, (-16..=16).collect::<Vec<i8>>());
    }

    #[test]
    fn dc_differential_sign_rule() {
        assert_eq!(dc_differential_from_bits(0b0111, 4), -8);
        assert_eq!(dc_differential_from_bits(0b1000, 4), 8);
        // size 0: the luma size code is "100", no magnitude bits.
        let data = cursor_over("100");
        let mut c = BitCursor::new(&data);
        assert_eq!(decode_dc_differential(&mut c, Component::Luma).unwrap(), 0);
        assert_eq!(c.bits_consumed(), 3);
        // size 4 luma = "110", then 0111.
        let data = cursor_over("1100111");
        let mut c = BitCursor::new(&data);
        assert_eq!(decode_dc_differential(&mut c, Component::Luma).unwrap(), -8);
        assert_eq!(c.bits_consumed(), 7);
    }

    #[test]
    fn b14_first_coefficient_and_eob() {
        let data = cursor_over("10");
        let mut c = BitCursor::new(&data);
        assert_eq!(
            decode_run_level(&mut c, DctTable::B14, true).unwrap(),
            Coefficient::Value(RunLevel::new(0, 1))
        );
        assert_eq!(c.bits_consumed(), 2);

        let mut c = BitCursor::new(&data);
        assert_eq!(
            decode_run_level(&mut c, DctTable::B14, false).unwrap(),
            Coefficient::EndOfBlock
        );
        assert_eq!(c.bits_consumed(), 2);

        let data = cursor_over("111");
        let mut c = BitCursor::new(&data);
        assert_eq!(
            decode_run_level(&mut c, DctTable::B14, false).unwrap(),
            Coefficient::Value(RunLevel::new(0, -1))
        );
    }

    #[test]
    fn escape_decoding() {
        // escape, run 5, level +300
        let data = cursor_over(&format!("000001{:06b}{:012b}", 5, 300));
        let mut c = BitCursor::new(&data);
        let got = decode_run_level(&mut c, DctTable::B14, false).unwrap();
        assert_eq!(
            got,
            Coefficient::Value(RunLevel {
                run: 5,
                level: 300,
                is_escape: true
            })
        );
        assert_eq!(c.bits_consumed(), 24);

        let data = cursor_over(&format!("000001{:06b}{:012b}", 5, 4096 - 300));
        let mut c = BitCursor::new(&data);
        match decode_run_level(&mut c, DctTable::B15, false).unwrap() {
            Coefficient::Value(rl) => assert_eq!(rl.level, -300),
            other => panic!("{other:?}"),
        }

        for raw in [0u32, 2048] {
            let data = cursor_over(&format!("000001{:06b}{:012b}", 0, raw));
            let mut c = BitCursor::new(&data);
            assert!(matches!(
                decode_run_level(&mut c, DctTable::B14, false),
                Err(Error::EscapeLevelZero { .. })
            ));
        }
    }

    #[test]
    fn every_entry_round_trips() {
        for t in tables().all() {
            for e in t.entries() {
                let found = t.encode(e.symbol).unwrap();
                assert_eq!(found, *e);
                let mut w = BitWriter::new();
                w.put_bits(e.code, u32::from(e.len));
                // Trailing ones so a lookup can never see a short stream.
                w.put_bits(0xFFFF, 16);
                let bytes = w.into_bytes();
                let mut c = BitCursor::new(&bytes);
                assert_eq!(decode_symbol(&mut c, t).unwrap(), e.symbol, "{}", t.name());
                assert_eq!(c.bits_consumed(), u64::from(e.len), "{}", t.name());
            }
        }
    }

    proptest! {
        #[test]
        fn dc_differential_round_trip(size in 1u32..=11, pick in any::<u32>(), negative in any::<bool>()) {
            let lo = 1i32 << (size - 1);
            let hi = (1i32 << size) - 1;
            let mag = lo + (pick % (hi - lo + 1) as u32) as i32;
            let delta = if negative { -mag } else { mag };
            let bits = if delta < 0 { delta + hi } else { delta };
            prop_assert_eq!(dc_differential_from_bits(bits, size), delta);
        }
    }
}
