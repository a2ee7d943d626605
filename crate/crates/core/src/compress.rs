//! Bit-packed compression blocks.
//!
//! Values are stored per block as a signed base plus unsigned offsets packed
//! at the minimal bit width that covers the block's spread. A block of
//! identical values packs to width 0 (just the base). Offsets are computed in
//! 128-bit space so a block may legally span the entire `i64` range, in which
//! case the width saturates at 64 bits.

/// Number of values per block. The last block of a column may be shorter.
pub const BLOCK_LEN: usize = 1024;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CompressionBlock {
    base: i64,
    /// Bits per offset, in `0..=64`.
    width: u8,
    len: u32,
    words: Vec<u64>,
}

impl CompressionBlock {
    /// Packs `values` (1..=BLOCK_LEN of them) into a block.
    pub fn pack(values: &[i64]) -> Self {
        assert!(
            !values.is_empty() && values.len() <= BLOCK_LEN,
            "block must hold 1..={BLOCK_LEN} values, got {}",
            values.len()
        );
        let base = *values.iter().min().unwrap();
        let max = *values.iter().max().unwrap();
        let spread = (max as i128 - base as i128) as u128;
        let width = if spread == 0 {
            0u8
        } else {
            (128 - spread.leading_zeros()) as u8
        };
        debug_assert!(width <= 64);

        let mut block = CompressionBlock {
            base,
            width,
            len: values.len() as u32,
            words: vec![0u64; Self::word_count(values.len(), width)],
        };
        for (i, &v) in values.iter().enumerate() {
            let offset = (v as i128 - base as i128) as u64;
            block.put(i, offset);
        }
        block
    }

    fn word_count(len: usize, width: u8) -> usize {
        (len * width as usize).div_ceil(64)
    }

    fn put(&mut self, i: usize, offset: u64) {
        let width = self.width as usize;
        if width == 0 {
            return;
        }
        let bit = i * width;
        let (word, shift) = (bit / 64, bit % 64);
        self.words[word] |= offset << shift;
        if shift + width > 64 {
            self.words[word + 1] |= offset >> (64 - shift);
        }
    }

    /// Decodes the value at position `i` within the block.
    pub fn get(&self, i: usize) -> i64 {
        assert!(i < self.len as usize, "index {i} out of block of {}", self.len);
        let width = self.width as usize;
        if width == 0 {
            return self.base;
        }
        let bit = i * width;
        let (word, shift) = (bit / 64, bit % 64);
        let mut offset = self.words[word] >> shift;
        if shift + width > 64 {
            offset |= self.words[word + 1] << (64 - shift);
        }
        if width < 64 {
            offset &= (1u64 << width) - 1;
        }
        (self.base as i128 + offset as i128) as i64
    }

    /// Decodes the whole block.
    pub fn decode(&self) -> Vec<i64> {
        (0..self.len as usize).map(|i| self.get(i)).collect()
    }

    pub fn len(&self) -> usize {
        self.len as usize
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn base(&self) -> i64 {
        self.base
    }

    pub fn width(&self) -> u8 {
        self.width
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }

    /// Reassembles a block from its serialized parts.
    pub fn from_parts(base: i64, width: u8, len: u32, words: Vec<u64>) -> crate::Result<Self> {
        if width > 64 || len == 0 || len as usize > BLOCK_LEN {
            return Err(crate::Error::BadTableFile(format!(
                "bad block header: width {width}, len {len}"
            )));
        }
        if words.len() != Self::word_count(len as usize, width) {
            return Err(crate::Error::BadTableFile(format!(
                "block payload holds {} words, expected {}",
                words.len(),
                Self::word_count(len as usize, width)
            )));
        }
        Ok(CompressionBlock { base, width, len, words })
    }

    /// In-memory footprint of the packed payload plus the fixed header.
    pub fn size_bytes(&self) -> u64 {
        // base + width + len headers, then the packed words.
        (8 + 1 + 4) as u64 + self.words.len() as u64 * 8
    }
}

/// Packs a full column into blocks of [`BLOCK_LEN`].
pub fn pack_column(values: &[i64]) -> Vec<CompressionBlock> {
    values.chunks(BLOCK_LEN).map(CompressionBlock::pack).collect()
}

/// Concatenated decode of a packed column.
pub fn unpack_column(blocks: &[CompressionBlock]) -> Vec<i64> {
    let mut out = Vec::with_capacity(blocks.iter().map(|b| b.len()).sum());
    for b in blocks {
        for i in 0..b.len() {
            out.push(b.get(i));
        }
    }
    out
}
