//! LSB-first bit packing with every row padded to a whole byte.

use crate::error::{Error, Result};

/// Bytes needed for `n` values of `width` bits in rows of `row_len` values.
pub fn packed_len(n: usize, width: u32, row_len: usize) -> usize {
    if n == 0 || row_len == 0 {
        return 0;
    }
    (n / row_len) * (row_len * width as usize).div_ceil(8)
}

fn check_rows(n: usize, row_len: usize) -> Result<()> {
    if row_len == 0 || !n.is_multiple_of(row_len) {
        return Err(Error::Format(format!("{n} values do not split into rows of {row_len}")));
    }
    Ok(())
}

fn pack_raw(values: impl Iterator<Item = u64>, n: usize, width: u32, row_len: usize) -> Result<Vec<u8>> {
    check_rows(n, row_len)?;
    let mut out = Vec::with_capacity(packed_len(n, width, row_len));
    let mask = if width == 64 { u64::MAX } else { (1u64 << width) - 1 };
    let (mut acc, mut filled) = (0u64, 0u32);
    for (i, v) in values.enumerate() {
        let mut v = v & mask;
        let mut left = width;
        while left > 0 {
            let take = left.min(8 - filled);
            acc |= (v & ((1 << take) - 1)) << filled;
            filled += take;
            v >>= take;
            left -= take;
            if filled == 8 {
                out.push(acc as u8);
                acc = 0;
                filled = 0;
            }
        }
        if (i + 1) % row_len == 0 && filled > 0 {
            out.push(acc as u8);
            acc = 0;
            filled = 0;
        }
    }
    Ok(out)
}

fn unpack_raw(bytes: &[u8], n: usize, width: u32, row_len: usize) -> Result<Vec<u64>> {
    check_rows(n, row_len)?;
    let expected = packed_len(n, width, row_len);
    if bytes.len() != expected {
        return Err(Error::Format(format!(
            "packed section is {} bytes, expected {expected}",
            bytes.len()
        )));
    }
    let row_bytes = (row_len * width as usize).div_ceil(8);
    let mut out = Vec::with_capacity(n);
    for row in 0..n / row_len {
        let base = row * row_bytes * 8;
        for j in 0..row_len {
            let mut v = 0u64;
            for b in 0..width as usize {
                let bit = base + j * width as usize + b;
                v |= (((bytes[bit / 8] >> (bit % 8)) & 1) as u64) << b;
            }
            out.push(v);
        }
        let used = row_len * width as usize;
        for bit in used..row_bytes * 8 {
            let bit = base + bit;
            if (bytes[bit / 8] >> (bit % 8)) & 1 != 0 {
                return Err(Error::Format("non-zero padding bits".into()));
            }
        }
    }
    Ok(out)
}

pub fn pack_bools(bits: &[bool], row_len: usize) -> Result<Vec<u8>> {
    pack_raw(bits.iter().map(|&b| b as u64), bits.len(), 1, row_len)
}

pub fn unpack_bools(bytes: &[u8], n: usize, row_len: usize) -> Result<Vec<bool>> {
    Ok(unpack_raw(bytes, n, 1, row_len)?.into_iter().map(|v| v == 1).collect())
}

/// Two's-complement codes truncated to `width` bits.
pub fn pack_signed(codes: &[i32], width: u32, row_len: usize) -> Result<Vec<u8>> {
    check_width(width, 1)?;
    pack_raw(codes.iter().map(|&c| c as i64 as u64), codes.len(), width, row_len)
}

pub fn unpack_signed(bytes: &[u8], n: usize, width: u32, row_len: usize) -> Result<Vec<i32>> {
    check_width(width, 1)?;
    let shift = 64 - width;
    Ok(unpack_raw(bytes, n, width, row_len)?
        .into_iter()
        .map(|v| (((v << shift) as i64) >> shift) as i32)
        .collect())
}

pub fn pack_unsigned(values: &[u32], width: u32, row_len: usize) -> Result<Vec<u8>> {
    check_width(width, 0)?;
    if let Some(v) = values.iter().find(|&&v| width < 32 && v >> width != 0) {
        return Err(Error::Format(format!("value {v} does not fit in {width} bits")));
    }
    pack_raw(values.iter().map(|&v| v as u64), values.len(), width, row_len)
}

pub fn unpack_unsigned(bytes: &[u8], n: usize, width: u32, row_len: usize) -> Result<Vec<u32>> {
    check_width(width, 0)?;
    Ok(unpack_raw(bytes, n, width, row_len)?.into_iter().map(|v| v as u32).collect())
}

fn check_width(width: u32, min: u32) -> Result<()> {
    if !(min..=32).contains(&width) {
        return Err(Error::Format(format!("unsupported packing width {width}")));
    }
    Ok(())
}
