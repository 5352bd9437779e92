//! Fixed-length compressed bitmaps over image ids.
//!
//! Bucket files are sparse in image space, so set-bit positions are stored
//! sorted and serialized as delta-gap LEB128 varints. AND is a sorted-list
//! intersection; nothing is ever expanded to a full bit array.
//!
//! Serialized record layout (all integers little-endian):
//! magic `BIMG`, version byte `0x01`, bit length u32, set-bit count u32,
//! then one varint per set bit: the first is the first position, each
//! subsequent one is `gap - 1` from the previous position.

use crate::{Error, Result};

pub const MAGIC: [u8; 4] = *b"BIMG";
pub const FORMAT_VERSION: u8 = 0x01;
const HEADER_LEN: usize = 13;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CompressedBitmap {
    bit_len: u32,
    /// Sorted, deduplicated set-bit positions.
    positions: Vec<u32>,
}

impl CompressedBitmap {
    pub fn empty(bit_len: u32) -> Self {
        CompressedBitmap {
            bit_len,
            positions: Vec::new(),
        }
    }

    /// Bitmap with every bit in `0..bit_len` set.
    pub fn all_set(bit_len: u32) -> Self {
        CompressedBitmap {
            bit_len,
            positions: (0..bit_len).collect(),
        }
    }

    pub fn from_positions(bit_len: u32, positions: impl IntoIterator<Item = u32>) -> Result<Self> {
        let mut positions: Vec<u32> = positions.into_iter().collect();
        positions.sort_unstable();
        positions.dedup();
        if let Some(&max) = positions.last() {
            if max >= bit_len {
                return Err(Error::OutOfBounds {
                    index: max as usize,
                    len: bit_len as usize,
                });
            }
        }
        Ok(CompressedBitmap { bit_len, positions })
    }

    pub fn bit_len(&self) -> u32 {
        self.bit_len
    }

    /// Sets bit `j`; setting an already-set bit is a no-op.
    pub fn set(&mut self, j: u32) -> Result<()> {
        if j >= self.bit_len {
            return Err(Error::OutOfBounds {
                index: j as usize,
                len: self.bit_len as usize,
            });
        }
        if let Err(at) = self.positions.binary_search(&j) {
            self.positions.insert(at, j);
        }
        Ok(())
    }

    pub fn contains(&self, j: u32) -> bool {
        self.positions.binary_search(&j).is_ok()
    }

    /// Number of set bits.
    pub fn popcount(&self) -> u32 {
        self.positions.len() as u32
    }

    pub fn positions(&self) -> &[u32] {
        &self.positions
    }

    /// Bitwise AND via sorted-list intersection.
    pub fn and(&self, other: &Self) -> Result<Self> {
        if self.bit_len != other.bit_len {
            return Err(Error::BitmapLengthMismatch {
                left: self.bit_len,
                right: other.bit_len,
            });
        }
        let mut out = Vec::new();
        let (mut i, mut j) = (0, 0);
        while i < self.positions.len() && j < other.positions.len() {
            match self.positions[i].cmp(&other.positions[j]) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    out.push(self.positions[i]);
                    i += 1;
                    j += 1;
                }
            }
        }
        Ok(CompressedBitmap {
            bit_len: self.bit_len,
            positions: out,
        })
    }

    /// Popcount of `self AND other` without materializing the result.
    pub fn and_popcount(&self, other: &Self) -> Result<u32> {
        if self.bit_len != other.bit_len {
            return Err(Error::BitmapLengthMismatch {
                left: self.bit_len,
                right: other.bit_len,
            });
        }
        let mut count = 0;
        let (mut i, mut j) = (0, 0);
        while i < self.positions.len() && j < other.positions.len() {
            match self.positions[i].cmp(&other.positions[j]) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    count += 1;
                    i += 1;
                    j += 1;
                }
            }
        }
        Ok(count)
    }

    pub fn serialize(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(HEADER_LEN + self.positions.len() * 5);
        buf.extend_from_slice(&MAGIC);
        buf.push(FORMAT_VERSION);
        buf.extend_from_slice(&self.bit_len.to_le_bytes());
        buf.extend_from_slice(&(self.positions.len() as u32).to_le_bytes());
        let mut prev: Option<u32> = None;
        for &p in &self.positions {
            let delta = match prev {
                None => p,
                Some(q) => p - q - 1,
            };
            write_varint(&mut buf, delta);
            prev = Some(p);
        }
        buf
    }

    pub fn deserialize(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN {
            return Err(Error::Format("bitmap record truncated header".into()));
        }
        if bytes[0..4] != MAGIC {
            return Err(Error::Format("bad bitmap magic".into()));
        }
        if bytes[4] != FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported bitmap version {}", bytes[4])));
        }
        let bit_len = u32::from_le_bytes(bytes[5..9].try_into().unwrap());
        let count = u32::from_le_bytes(bytes[9..13].try_into().unwrap());
        let mut positions = Vec::with_capacity(count as usize);
        let mut cursor = HEADER_LEN;
        let mut prev: Option<u64> = None;
        for _ in 0..count {
            let delta = read_varint(bytes, &mut cursor)?;
            let pos = match prev {
                None => delta as u64,
                Some(q) => q + 1 + delta as u64,
            };
            if pos >= bit_len as u64 {
                return Err(Error::Format(format!(
                    "bit position {pos} out of range for length {bit_len}"
                )));
            }
            positions.push(pos as u32);
            prev = Some(pos);
        }
        if cursor != bytes.len() {
            return Err(Error::Format(format!(
                "{} trailing bytes after bitmap payload",
                bytes.len() - cursor
            )));
        }
        Ok(CompressedBitmap { bit_len, positions })
    }
}

fn write_varint(buf: &mut Vec<u8>, mut v: u32) {
    loop {
        let byte = (v & 0x7f) as u8;
        v >>= 7;
        if v == 0 {
            buf.push(byte);
            return;
        }
        buf.push(byte | 0x80);
    }
}

fn read_varint(bytes: &[u8], cursor: &mut usize) -> Result<u32> {
    let mut value: u32 = 0;
    let mut shift = 0u32;
    loop {
        let &byte = bytes
            .get(*cursor)
            .ok_or_else(|| Error::Format("bitmap payload truncated".into()))?;
        *cursor += 1;
        if shift == 28 && byte > 0x0f {
            return Err(Error::Format("varint overflows u32".into()));
        }
        value |= ((byte & 0x7f) as u32) << shift;
        if byte & 0x80 == 0 {
            return Ok(value);
        }
        shift += 7;
        if shift > 28 {
            return Err(Error::Format("varint too long".into()));
        }
    }
}
