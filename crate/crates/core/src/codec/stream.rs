//! `RDB1` bitstream.
//!
//! ```text
//! magic "RDB1" | version u8 = 1 | m u32 | n u32 | r u16 | q u8 | flags u8
//! sign bitmap: ceil(m*n / 8) bytes, row-major, MSB first, 1 = +1
//! section U, section Σ, section V:
//!     offset f64 | step f64 | <entropy section, see `entropy`>
//! ```
//!
//! Integers and floats are little-endian. Flag bits 0, 1, 2 mark raw
//! sections for U, Σ and V respectively.

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::scalar::Scalar;
use crate::svid::{LowRankFactors, SignMatrix, SvidFactors};

use super::bits::BitWriter;
use super::entropy::{decode_at, entropy_encode, CodedSection, Cursor, SectionMode};
use super::quantize::{dequantize, quantize, QuantizedBlock};
use super::check_qbits;

pub const MAGIC: [u8; 4] = *b"RDB1";
pub const VERSION: u8 = 1;
pub const HEADER_BYTES: usize = 17;
/// Fixed bytes per section besides table and payload: offset, step,
/// count, mode, table_len, payload_bits.
pub const SECTION_FIXED_BYTES: usize = 8 + 8 + 4 + 1 + 2 + 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StreamHeader {
    pub rows: u32,
    pub cols: u32,
    pub rank: u16,
    pub qbits: u8,
    pub flags: u8,
}

impl StreamHeader {
    pub fn sign_bytes(&self) -> usize {
        (u64::from(self.rows) * u64::from(self.cols)).div_ceil(8) as usize
    }
}

/// Encoded payload; its length in bits is the transmission rate.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BitStream {
    bytes: Vec<u8>,
}

impl BitStream {
    pub fn from_bytes(bytes: Vec<u8>) -> Self {
        Self { bytes }
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.bytes
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.bytes
    }

    /// `|B|`: the serialized length in bits.
    pub fn total_bits(&self) -> u64 {
        self.bytes.len() as u64 * 8
    }

    pub fn header(&self) -> Result<StreamHeader> {
        parse_header(&mut Cursor {
            bytes: &self.bytes,
            pos: 0,
        })
    }
}

/// Decoded stream before dequantization.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamContents<T> {
    pub header: StreamHeader,
    pub sign: SignMatrix,
    /// U (m×r row-major), Σ (r), V (n×r row-major).
    pub blocks: [QuantizedBlock<T>; 3],
}

/// Quantizes and entropy codes the factors.
pub fn pack_stream<T: Scalar>(f: &SvidFactors<T>, qbits: u8) -> Result<BitStream> {
    check_qbits(qbits)?;
    let (m, n) = f.low_rank.shape();
    let r = f.rank();
    if (f.sign.rows(), f.sign.cols()) != (m, n) {
        return Err(Error::invalid("sign matrix shape disagrees with factors"));
    }
    let rows = u32::try_from(m).map_err(|_| Error::invalid(format!("{m} rows exceed u32")))?;
    let cols = u32::try_from(n).map_err(|_| Error::invalid(format!("{n} cols exceed u32")))?;
    let rank = u16::try_from(r).map_err(|_| Error::invalid(format!("rank {r} exceeds u16")))?;

    let blocks = [
        quantize(f.low_rank.u.as_slice(), qbits)?,
        quantize(&f.low_rank.singular_values, qbits)?,
        quantize(f.low_rank.v.as_slice(), qbits)?,
    ];
    let sections = blocks
        .iter()
        .map(|b| entropy_encode(&b.symbols, qbits))
        .collect::<Result<Vec<_>>>()?;
    let flags = sections
        .iter()
        .enumerate()
        .filter(|(_, s)| s.mode == SectionMode::Raw)
        .fold(0u8, |acc, (i, _)| acc | (1 << i));

    let mut out = Vec::new();
    out.extend_from_slice(&MAGIC);
    out.push(VERSION);
    out.extend_from_slice(&rows.to_le_bytes());
    out.extend_from_slice(&cols.to_le_bytes());
    out.extend_from_slice(&rank.to_le_bytes());
    out.push(qbits);
    out.push(flags);

    let mut signs = BitWriter::default();
    for &p in f.sign.bits() {
        signs.push(p);
    }
    out.extend_from_slice(&signs.into_bytes());

    for (block, section) in blocks.iter().zip(&sections) {
        out.extend_from_slice(&block.offset.to_f64_lossy().to_le_bytes());
        out.extend_from_slice(&block.step.to_f64_lossy().to_le_bytes());
        section.write_to(&mut out);
    }
    Ok(BitStream { bytes: out })
}

fn parse_header(cur: &mut Cursor) -> Result<StreamHeader> {
    let magic = cur
        .take::<4>()
        .map_err(|_| Error::Format("stream shorter than its magic".into()))?;
    if magic != MAGIC {
        return Err(Error::Format(format!("bad magic {magic:02x?}")));
    }
    let version = cur.take::<1>()?[0];
    if version != VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let rows = u32::from_le_bytes(cur.take::<4>()?);
    let cols = u32::from_le_bytes(cur.take::<4>()?);
    let rank = u16::from_le_bytes(cur.take::<2>()?);
    let qbits = cur.take::<1>()?[0];
    let flags = cur.take::<1>()?[0];
    if rows == 0 || cols == 0 {
        return Err(Error::Format(format!("empty shape {rows}x{cols}")));
    }
    if rank == 0 || u32::from(rank) > rows.min(cols) {
        return Err(Error::Format(format!("rank {rank} invalid for {rows}x{cols}")));
    }
    check_qbits(qbits).map_err(|_| Error::Format(format!("qbits {qbits} out of range")))?;
    if flags & !0b111 != 0 {
        return Err(Error::Format(format!("reserved flag bits set: {flags:#04x}")));
    }
    Ok(StreamHeader {
        rows,
        cols,
        rank,
        qbits,
        flags,
    })
}

/// Parses and entropy decodes a stream without dequantizing.
pub fn inspect_stream<T: Scalar>(s: &BitStream) -> Result<StreamContents<T>> {
    let mut cur = Cursor {
        bytes: &s.bytes,
        pos: 0,
    };
    let header = parse_header(&mut cur)?;
    let (m, n, r) = (header.rows as usize, header.cols as usize, header.rank as usize);

    let bitmap = cur.slice(header.sign_bytes())?;
    let positive = (0..m * n)
        .map(|k| bitmap[k / 8] & (0x80 >> (k % 8)) != 0)
        .collect();
    let sign = SignMatrix::from_bits(m, n, positive)?;

    let expected = [m * r, r, n * r];
    let mut blocks = Vec::with_capacity(3);
    for (i, &want) in expected.iter().enumerate() {
        let offset = f64::from_le_bytes(cur.take::<8>()?);
        let step = f64::from_le_bytes(cur.take::<8>()?);
        if !offset.is_finite() || !step.is_finite() || step < 0.0 {
            return Err(Error::decode(cur.pos - 16, "invalid quantizer offset/step"));
        }
        let start = cur.pos;
        let (section, end) = CodedSection::read_from(cur.bytes, start)?;
        cur.pos = end;
        let raw_flag = header.flags & (1 << i) != 0;
        if raw_flag != (section.mode == SectionMode::Raw) {
            return Err(Error::decode(start + 4, "section mode disagrees with header flags"));
        }
        if section.count as usize != want {
            return Err(Error::decode(start, format!("section holds {} symbols, expected {want}", section.count)));
        }
        let symbols = decode_at(&section, header.qbits, start)?;
        blocks.push(QuantizedBlock {
            symbols,
            offset: T::from_f64_lossy(offset),
            step: T::from_f64_lossy(step),
            qbits: header.qbits,
        });
    }
    if cur.pos != s.bytes.len() {
        return Err(Error::decode(cur.pos, "trailing bytes after last section"));
    }
    let blocks: [QuantizedBlock<T>; 3] = blocks.try_into().expect("three sections");
    Ok(StreamContents {
        header,
        sign,
        blocks,
    })
}

/// Receiver side: sign matrix plus dequantized factors.
pub fn unpack_stream<T: Scalar>(s: &BitStream) -> Result<SvidFactors<T>> {
    let c = inspect_stream::<T>(s)?;
    let (m, n, r) = (c.header.rows as usize, c.header.cols as usize, c.header.rank as usize);
    let [bu, bs, bv] = &c.blocks;
    let u = Matrix::new(m, r, dequantize(bu))?;
    let singular_values = dequantize(bs);
    let v = Matrix::new(n, r, dequantize(bv))?;
    Ok(SvidFactors {
        sign: c.sign,
        low_rank: LowRankFactors {
            u,
            singular_values,
            v,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::svid::{approximation_error, reconstruct, svid_decompose};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, seed: u64) -> Matrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..rows * cols).map(|_| rng.random_range(-2.0..2.0)).collect();
        Matrix::new(rows, cols, data).unwrap()
    }

    #[test]
    fn two_by_two_layout() {
        let z = Matrix::from_rows(&[[1.0, -1.0], [-1.0, 1.0]]).unwrap();
        let f = svid_decompose(&z, 1).unwrap();
        let s = pack_stream(&f, 8).unwrap();
        let b = s.as_bytes();
        assert_eq!(&b[..4], b"RDB1");
        assert_eq!(b[4], 1);
        assert_eq!(&b[5..9], &2u32.to_le_bytes());
        assert_eq!(&b[13..15], &1u16.to_le_bytes());
        assert_eq!(b[15], 8);
        // signs + - - + → 1001 padded
        assert_eq!(b[HEADER_BYTES], 0b1001_0000);
        let h = s.header().unwrap();
        assert_eq!((h.rows, h.cols, h.rank, h.qbits), (2, 2, 1, 8));
        let back: SvidFactors<f64> = unpack_stream(&s).unwrap();
        assert_eq!(back.sign, f.sign);
        let zr = reconstruct(&back).unwrap();
        for (a, b) in z.as_slice().iter().zip(zr.as_slice()) {
            assert!((a - b).abs() < 1e-2);
        }
    }

    #[test]
    fn total_bits_within_raw_ceiling() {
        let z = random(64, 64, 1);
        let f = svid_decompose(&z, 4).unwrap();
        let s = pack_stream(&f, 4).unwrap();
        let ceiling = 8 * (HEADER_BYTES + 4096 / 8 + 3 * SECTION_FIXED_BYTES)
            + 8 * ((4 * 64 * 4usize).div_ceil(8) + (4 * 4usize).div_ceil(8) + (4 * 64 * 4usize).div_ceil(8));
        assert!(s.total_bits() <= ceiling as u64, "{} > {ceiling}", s.total_bits());
        assert_eq!(s.total_bits(), 8 * s.as_bytes().len() as u64);
    }

    #[test]
    fn deterministic_bytes() {
        let z = random(10, 7, 3);
        let f = svid_decompose(&z, 3).unwrap();
        assert_eq!(pack_stream(&f, 6).unwrap(), pack_stream(&f, 6).unwrap());
    }

    #[test]
    fn sixteen_bit_reconstruction_is_tight() {
        let z = random(24, 18, 5);
        let f = svid_decompose(&z, 18).unwrap();
        let back: SvidFactors<f64> = unpack_stream(&pack_stream(&f, 16).unwrap()).unwrap();
        let e = approximation_error(&reconstruct(&f).unwrap(), &reconstruct(&back).unwrap()).unwrap();
        assert!(e.nmse <= 1e-6, "nmse {}", e.nmse);
    }

    #[test]
    fn format_and_decode_errors() {
        let z = random(6, 5, 9);
        let s = pack_stream(&svid_decompose(&z, 2).unwrap(), 5).unwrap();

        let mut bad = s.as_bytes().to_vec();
        bad[0] ^= 0xff;
        assert!(matches!(unpack_stream::<f64>(&BitStream::from_bytes(bad)), Err(Error::Format(_))));

        let mut bad = s.as_bytes().to_vec();
        bad[4] = 2;
        assert!(matches!(unpack_stream::<f64>(&BitStream::from_bytes(bad)), Err(Error::Format(_))));

        for cut in [3, 10, 20, s.as_bytes().len() - 1] {
            let bad = s.as_bytes()[..cut].to_vec();
            assert!(unpack_stream::<f64>(&BitStream::from_bytes(bad)).is_err(), "cut {cut}");
        }

        let mut bad = s.as_bytes().to_vec();
        bad.push(0);
        assert!(matches!(unpack_stream::<f64>(&BitStream::from_bytes(bad)), Err(Error::Decode { .. })));

        let mut bad = s.as_bytes().to_vec();
        bad[16] ^= 0b100;
        assert!(unpack_stream::<f64>(&BitStream::from_bytes(bad)).is_err());
    }

    #[test]
    fn single_precision_round_trip() {
        let z = random(9, 9, 4).map(|v| v).as_slice().iter().map(|&v| v as f32).collect();
        let z = Matrix::new(9, 9, z).unwrap();
        let f = svid_decompose(&z, 3).unwrap();
        let s = pack_stream(&f, 12).unwrap();
        let back: SvidFactors<f32> = unpack_stream(&s).unwrap();
        assert_eq!(back.sign, f.sign);
        assert_eq!(back.rank(), 3);
    }
}
