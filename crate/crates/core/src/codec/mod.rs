//! Digital representation of sign/low-rank factors: uniform quantization,
//! canonical Huffman coding and the `RDB1` bitstream whose byte length is
//! the transmission rate.

mod bits;
pub mod entropy;
pub mod quantize;
pub mod stream;

pub use entropy::{entropy_decode, entropy_encode, CodedSection, SectionMode};
pub use quantize::{dequantize, quantize, QuantizedBlock};
pub use stream::{inspect_stream, pack_stream, unpack_stream, BitStream, StreamContents, StreamHeader};

use crate::error::{Error, Result};

pub const MIN_QBITS: u8 = 1;
pub const MAX_QBITS: u8 = 16;

/// Codec control parameter: truncation rank and quantizer bit depth.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ControlParameter {
    rank: usize,
    qbits: u8,
}

impl ControlParameter {
    pub fn new(rank: usize, qbits: u8) -> Result<Self> {
        if rank == 0 {
            return Err(Error::InvalidRank { rank, max: usize::MAX });
        }
        check_qbits(qbits)?;
        Ok(Self { rank, qbits })
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn qbits(&self) -> u8 {
        self.qbits
    }
}

impl std::fmt::Display for ControlParameter {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "(r={}, q={})", self.rank, self.qbits)
    }
}

pub(crate) fn check_qbits(qbits: u8) -> Result<()> {
    if !(MIN_QBITS..=MAX_QBITS).contains(&qbits) {
        return Err(Error::invalid(format!(
            "qbits {qbits} outside {MIN_QBITS}..={MAX_QBITS}"
        )));
    }
    Ok(())
}
