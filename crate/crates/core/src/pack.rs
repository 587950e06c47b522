//! Bit-level packing of centroid indices.
//!
//! Indices are laid out as one little-endian bit stream: index `i` occupies
//! bits `i * w .. (i + 1) * w`, low bits first. For widths that divide 8 no
//! index straddles a byte; other widths (3, 5, 6, 7) straddle byte borders.

use crate::error::{Error, Result};

fn check_width(bit_width: u32) -> Result<()> {
    if (1..=8).contains(&bit_width) {
        Ok(())
    } else {
        Err(Error::BitWidth(bit_width))
    }
}

pub fn packed_len(count: usize, bit_width: u32) -> usize {
    (count * bit_width as usize).div_ceil(8)
}

pub fn pack_indices(indices: &[u32], bit_width: u32) -> Result<Vec<u8>> {
    check_width(bit_width)?;
    let bound = 1u32 << bit_width;
    let mut out = vec![0u8; packed_len(indices.len(), bit_width)];
    for (i, &index) in indices.iter().enumerate() {
        if index >= bound {
            return Err(Error::IndexOutOfRange { index: index as usize, bound: bound as usize });
        }
        let bit = i * bit_width as usize;
        let (byte, shift) = (bit / 8, bit % 8);
        let wide = (index as u16) << shift;
        out[byte] |= wide as u8;
        if shift + bit_width as usize > 8 {
            out[byte + 1] |= (wide >> 8) as u8;
        }
    }
    Ok(out)
}

pub fn unpack_indices(bytes: &[u8], bit_width: u32, count: usize) -> Result<Vec<u32>> {
    check_width(bit_width)?;
    let need = packed_len(count, bit_width);
    if bytes.len() < need {
        return Err(Error::LengthMismatch { expected: need, got: bytes.len() });
    }
    let mask = (1u16 << bit_width) - 1;
    Ok((0..count)
        .map(|i| {
            let bit = i * bit_width as usize;
            let (byte, shift) = (bit / 8, bit % 8);
            let lo = bytes[byte] as u16;
            let hi = if shift + bit_width as usize > 8 { bytes[byte + 1] as u16 } else { 0 };
            (((hi << 8 | lo) >> shift) & mask) as u32
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn four_bit_layout() {
        assert_eq!(pack_indices(&[0, 1, 2, 3], 4).unwrap(), vec![0x10, 0x32]);
    }

    #[test]
    fn empty() {
        assert!(pack_indices(&[], 4).unwrap().is_empty());
        assert!(unpack_indices(&[], 4, 0).unwrap().is_empty());
    }

    #[test]
    fn rejects_out_of_range_and_bad_width() {
        assert!(matches!(pack_indices(&[16], 4), Err(Error::IndexOutOfRange { index: 16, bound: 16 })));
        assert!(matches!(pack_indices(&[0], 0), Err(Error::BitWidth(0))));
        assert!(matches!(pack_indices(&[0], 9), Err(Error::BitWidth(9))));
        assert!(unpack_indices(&[0], 4, 3).is_err());
    }

    #[test]
    fn three_bit_straddles_bytes() {
        let idx = [7, 0, 5, 1, 6, 2, 3, 4];
        let packed = pack_indices(&idx, 3).unwrap();
        assert_eq!(packed.len(), 3);
        assert_eq!(unpack_indices(&packed, 3, idx.len()).unwrap(), idx);
    }

    proptest! {
        #[test]
        fn roundtrip(width in 1u32..=8, raw in proptest::collection::vec(any::<u32>(), 0..1000)) {
            let idx: Vec<u32> = raw.iter().map(|x| x & ((1 << width) - 1)).collect();
            let packed = pack_indices(&idx, width).unwrap();
            prop_assert_eq!(packed.len(), packed_len(idx.len(), width));
            prop_assert_eq!(unpack_indices(&packed, width, idx.len()).unwrap(), idx);
        }
    }
}
