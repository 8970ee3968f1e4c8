//! Canonical Huffman coding of quantizer symbols with a raw fallback.
//!
//! Section layout (all integers little-endian):
//!
//! ```text
//! count u32 | mode u8 | table_len u16 | table | payload_bits u32 | payload
//! ```
//!
//! The table lists `(symbol, code length)` pairs in increasing symbol order;
//! symbols take one byte when `q <= 8`, two bytes otherwise. Codes are
//! assigned canonically from the lengths. A single distinct symbol gets
//! length 0 and costs no payload bits. Raw mode stores `q` bits per symbol
//! and has an empty table. The encoder picks Huffman only when its table
//! plus padded payload is strictly smaller than the padded raw payload.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap};

use crate::error::{Error, Result};

use super::bits::{BitReader, BitWriter};
use super::check_qbits;

const MAX_CODE_LEN: u8 = 63;
/// Bytes before the table: count, mode, table_len.
const TABLE_START: usize = 4 + 1 + 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum SectionMode {
    Huffman = 0,
    Raw = 1,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CodedSection {
    pub count: u32,
    pub mode: SectionMode,
    pub table: Vec<u8>,
    pub payload_bits: u32,
    pub payload: Vec<u8>,
}

impl CodedSection {
    /// Serialized size in bytes.
    pub fn byte_len(&self) -> usize {
        TABLE_START + self.table.len() + 4 + self.payload.len()
    }

    pub fn write_to(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.count.to_le_bytes());
        out.push(self.mode as u8);
        out.extend_from_slice(&(self.table.len() as u16).to_le_bytes());
        out.extend_from_slice(&self.table);
        out.extend_from_slice(&self.payload_bits.to_le_bytes());
        out.extend_from_slice(&self.payload);
    }

    /// Reads a section starting at `pos`; errors carry absolute offsets.
    pub fn read_from(bytes: &[u8], pos: usize) -> Result<(Self, usize)> {
        let mut cur = Cursor { bytes, pos };
        let count = u32::from_le_bytes(cur.take::<4>()?);
        let mode_at = cur.pos;
        let mode = match cur.take::<1>()?[0] {
            0 => SectionMode::Huffman,
            1 => SectionMode::Raw,
            other => return Err(Error::decode(mode_at, format!("unknown section mode {other}"))),
        };
        let table_len = u16::from_le_bytes(cur.take::<2>()?) as usize;
        if mode == SectionMode::Raw && table_len != 0 {
            return Err(Error::decode(mode_at, "raw section with a code table"));
        }
        let table = cur.slice(table_len)?.to_vec();
        let payload_bits = u32::from_le_bytes(cur.take::<4>()?);
        let payload = cur.slice(payload_bits.div_ceil(8) as usize)?.to_vec();
        Ok((
            Self {
                count,
                mode,
                table,
                payload_bits,
                payload,
            },
            cur.pos,
        ))
    }
}

pub(crate) struct Cursor<'a> {
    pub(crate) bytes: &'a [u8],
    pub(crate) pos: usize,
}

impl<'a> Cursor<'a> {
    pub(crate) fn slice(&mut self, len: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(len)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::decode(self.bytes.len(), format!("truncated: need {len} bytes at {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    pub(crate) fn take<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.slice(N)?.try_into().expect("slice has length N"))
    }
}

fn symbol_width(qbits: u8) -> usize {
    if qbits <= 8 {
        1
    } else {
        2
    }
}

/// Huffman code lengths for the observed symbols, keyed by symbol.
fn code_lengths(symbols: &[u16]) -> BTreeMap<u16, u8> {
    let mut freq: BTreeMap<u16, u64> = BTreeMap::new();
    for &s in symbols {
        *freq.entry(s).or_default() += 1;
    }
    if freq.len() == 1 {
        return freq.into_keys().map(|s| (s, 0)).collect();
    }
    // parent links over leaves (in symbol order) followed by internal nodes
    let mut parent: Vec<usize> = vec![usize::MAX; freq.len()];
    let mut heap: BinaryHeap<Reverse<(u64, usize)>> = freq
        .values()
        .enumerate()
        .map(|(id, &w)| Reverse((w, id)))
        .collect();
    while heap.len() > 1 {
        let Reverse((wa, a)) = heap.pop().expect("len > 1");
        let Reverse((wb, b)) = heap.pop().expect("len > 1");
        let id = parent.len();
        parent.push(usize::MAX);
        parent[a] = id;
        parent[b] = id;
        heap.push(Reverse((wa + wb, id)));
    }
    freq.into_keys()
        .enumerate()
        .map(|(leaf, s)| {
            let mut depth = 0u8;
            let mut node = leaf;
            while parent[node] != usize::MAX {
                node = parent[node];
                depth += 1;
            }
            (s, depth)
        })
        .collect()
}

/// Canonical codes in `(length, symbol)` order.
fn canonical_codes(lengths: &BTreeMap<u16, u8>) -> Vec<(u16, u8, u64)> {
    let mut order: Vec<(u8, u16)> = lengths.iter().map(|(&s, &l)| (l, s)).collect();
    order.sort_unstable();
    let mut out = Vec::with_capacity(order.len());
    let mut code = 0u64;
    let mut prev_len = 0u8;
    for (i, &(len, sym)) in order.iter().enumerate() {
        if i > 0 {
            code = (code + 1) << (len - prev_len);
        } else {
            code <<= len;
        }
        prev_len = len;
        out.push((sym, len, code));
    }
    out
}

fn raw_section(symbols: &[u16], qbits: u8) -> Result<CodedSection> {
    let payload_bits = raw_bits(symbols.len(), qbits)?;
    let mut w = BitWriter::default();
    for &s in symbols {
        w.push_bits(u64::from(s), u32::from(qbits));
    }
    Ok(CodedSection {
        count: symbols.len() as u32,
        mode: SectionMode::Raw,
        table: Vec::new(),
        payload_bits,
        payload: w.into_bytes(),
    })
}

fn raw_bits(count: usize, qbits: u8) -> Result<u32> {
    u32::try_from(count)
        .ok()
        .and_then(|c| c.checked_mul(u32::from(qbits)))
        .ok_or_else(|| Error::invalid(format!("{count} symbols overflow the section bit count")))
}

/// Entropy codes `symbols` (each `< 2^qbits`).
pub fn entropy_encode(symbols: &[u16], qbits: u8) -> Result<CodedSection> {
    check_qbits(qbits)?;
    if let Some(&bad) = symbols.iter().find(|&&s| u32::from(s) >= 1u32 << qbits) {
        return Err(Error::invalid(format!("symbol {bad} does not fit in {qbits} bits")));
    }
    let raw = raw_section(symbols, qbits)?;
    if symbols.is_empty() {
        return Ok(raw);
    }

    let lengths = code_lengths(symbols);
    let width = symbol_width(qbits);
    let table_len = lengths.len() * (width + 1);
    if table_len > usize::from(u16::MAX) || lengths.values().any(|&l| l > MAX_CODE_LEN) {
        return Ok(raw);
    }
    let mut table = Vec::with_capacity(table_len);
    for (&s, &l) in &lengths {
        table.extend_from_slice(&s.to_le_bytes()[..width]);
        table.push(l);
    }
    let codes: BTreeMap<u16, (u8, u64)> = canonical_codes(&lengths)
        .into_iter()
        .map(|(s, l, c)| (s, (l, c)))
        .collect();
    let mut w = BitWriter::default();
    for s in symbols {
        let (len, code) = codes[s];
        w.push_bits(code, u32::from(len));
    }
    let Ok(payload_bits) = u32::try_from(w.bit_len()) else {
        return Ok(raw);
    };
    let payload = w.into_bytes();
    if table.len() + payload.len() >= raw.payload.len() {
        return Ok(raw);
    }
    Ok(CodedSection {
        count: symbols.len() as u32,
        mode: SectionMode::Huffman,
        table,
        payload_bits,
        payload,
    })
}

/// Decodes a section. Error offsets are relative to the start of the
/// serialized section (its `count` field).
pub fn entropy_decode(section: &CodedSection, qbits: u8) -> Result<Vec<u16>> {
    decode_at(section, qbits, 0)
}

pub(crate) fn decode_at(section: &CodedSection, qbits: u8, base: usize) -> Result<Vec<u16>> {
    check_qbits(qbits)?;
    let table_at = base + TABLE_START;
    let payload_at = table_at + section.table.len() + 4;
    if section.payload.len() as u64 != u64::from(section.payload_bits).div_ceil(8) {
        return Err(Error::decode(payload_at, "payload length disagrees with payload_bits"));
    }
    let count = section.count as usize;
    let mut reader = BitReader::new(&section.payload, u64::from(section.payload_bits));
    let truncated = |r: &BitReader| {
        Error::decode(payload_at + (r.position() / 8) as usize, "payload ended early")
    };

    let out = match section.mode {
        SectionMode::Raw => {
            if !section.table.is_empty() {
                return Err(Error::decode(table_at, "raw section with a code table"));
            }
            if u64::from(section.payload_bits) != section.count as u64 * u64::from(qbits) {
                return Err(Error::decode(payload_at, "raw payload size disagrees with count"));
            }
            let mut out = Vec::with_capacity(count);
            for _ in 0..count {
                let v = reader.read_bits(u32::from(qbits)).ok_or_else(|| truncated(&reader))?;
                out.push(v as u16);
            }
            out
        }
        SectionMode::Huffman => {
            let lengths = parse_table(&section.table, qbits, table_at)?;
            if lengths.len() == 1 {
                let (&sym, _) = lengths.iter().next().expect("one entry");
                if section.payload_bits != 0 {
                    return Err(Error::decode(payload_at, "single-symbol section with payload"));
                }
                vec![sym; count]
            } else {
                decode_canonical(&lengths, count, &mut reader, payload_at)?
            }
        }
    };
    if reader.position() != u64::from(section.payload_bits) {
        return Err(Error::decode(payload_at, "trailing payload bits"));
    }
    Ok(out)
}

fn parse_table(table: &[u8], qbits: u8, at: usize) -> Result<BTreeMap<u16, u8>> {
    let width = symbol_width(qbits);
    if table.is_empty() || !table.len().is_multiple_of(width + 1) {
        return Err(Error::decode(at, format!("code table length {} is invalid", table.len())));
    }
    let mut lengths = BTreeMap::new();
    let mut prev: Option<u16> = None;
    for (i, entry) in table.chunks_exact(width + 1).enumerate() {
        let at = at + i * (width + 1);
        let sym = if width == 1 {
            u16::from(entry[0])
        } else {
            u16::from_le_bytes([entry[0], entry[1]])
        };
        let len = entry[width];
        if u32::from(sym) >= 1u32 << qbits {
            return Err(Error::decode(at, format!("table symbol {sym} exceeds {qbits} bits")));
        }
        if prev.is_some_and(|p| p >= sym) {
            return Err(Error::decode(at, "table symbols not strictly increasing"));
        }
        if len > MAX_CODE_LEN {
            return Err(Error::decode(at, format!("code length {len} too long")));
        }
        prev = Some(sym);
        lengths.insert(sym, len);
    }
    if lengths.len() == 1 {
        if lengths.values().next() != Some(&0) {
            return Err(Error::decode(at, "single-symbol table must use length 0"));
        }
        return Ok(lengths);
    }
    // complete prefix code: Kraft sum exactly one
    let kraft: u128 = lengths
        .values()
        .map(|&l| if l == 0 { u128::MAX } else { 1u128 << (MAX_CODE_LEN - l) })
        .fold(0u128, |a, b| a.saturating_add(b));
    if kraft != 1u128 << MAX_CODE_LEN {
        return Err(Error::decode(at, "code lengths do not form a complete prefix code"));
    }
    Ok(lengths)
}

fn decode_canonical(
    lengths: &BTreeMap<u16, u8>,
    count: usize,
    reader: &mut BitReader,
    payload_at: usize,
) -> Result<Vec<u16>> {
    let codes = canonical_codes(lengths);
    let max_len = codes.last().map_or(0, |c| c.1) as usize;
    // first code and first index per length
    let mut first_code = vec![0u64; max_len + 2];
    let mut first_index = vec![0usize; max_len + 2];
    let mut per_len = vec![0usize; max_len + 2];
    for (i, &(_, len, code)) in codes.iter().enumerate() {
        let l = len as usize;
        if per_len[l] == 0 {
            first_code[l] = code;
            first_index[l] = i;
        }
        per_len[l] += 1;
    }
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let mut code = 0u64;
        let mut len = 0usize;
        loop {
            let bit = reader.read().ok_or_else(|| {
                Error::decode(payload_at + (reader.position() / 8) as usize, "payload ended early")
            })?;
            code = (code << 1) | u64::from(bit);
            len += 1;
            if len > max_len {
                return Err(Error::decode(payload_at, "invalid code in payload"));
            }
            if per_len[len] > 0 && code >= first_code[len] && code - first_code[len] < per_len[len] as u64 {
                out.push(codes[first_index[len] + (code - first_code[len]) as usize].0);
                break;
            }
        }
    }
    Ok(out)
}
