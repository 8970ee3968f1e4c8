use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::check_qbits;

/// Uniform min–max quantized values.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedBlock<T> {
    pub symbols: Vec<u16>,
    /// Minimum of the source values.
    pub offset: T,
    /// `(max - min) / (2^q - 1)`, zero for constant sources.
    pub step: T,
    pub qbits: u8,
}

impl<T: Scalar> QuantizedBlock<T> {
    pub fn levels(&self) -> u32 {
        1u32 << self.qbits
    }
}

/// Uniform scalar quantization of `values` over `[min, max]` with `2^q`
/// levels.
pub fn quantize<T: Scalar>(values: &[T], qbits: u8) -> Result<QuantizedBlock<T>> {
    check_qbits(qbits)?;
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("cannot quantize non-finite values"));
    }
    let Some(&first) = values.first() else {
        return Ok(QuantizedBlock {
            symbols: Vec::new(),
            offset: T::zero(),
            step: T::zero(),
            qbits,
        });
    };
    let (lo, hi) = values
        .iter()
        .fold((first, first), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let top = (1u32 << qbits) - 1;
    let top_t = T::from_u32(top).expect("level count fits any float");
    let step = (hi - lo) / top_t;
    if !step.is_finite() {
        return Err(Error::invalid("value range overflows the quantizer"));
    }
    if step == T::zero() {
        return Ok(QuantizedBlock {
            symbols: vec![0; values.len()],
            offset: lo,
            step: T::zero(),
            qbits,
        });
    }
    let symbols = values
        .iter()
        .map(|&v| {
            let s = ((v - lo) / step).round().max(T::zero()).min(top_t);
            s.to_u16().expect("symbol clamped into range")
        })
        .collect();
    Ok(QuantizedBlock {
        symbols,
        offset: lo,
        step,
        qbits,
    })
}

/// `offset + symbol * step`.
pub fn dequantize<T: Scalar>(block: &QuantizedBlock<T>) -> Vec<T> {
    block
        .symbols
        .iter()
        .map(|&s| block.offset + T::from_u16(s).expect("u16 fits any float") * block.step)
        .collect()
}
