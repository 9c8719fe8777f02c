//! Blockwise absmax quantization against a 16-value code.
//!
//! A tensor is cut into blocks of `B` consecutive elements along one axis.
//! Each block stores its largest magnitude `M` and, per element, the index
//! of the code value nearest to `w / M`, packed two indices per byte.

mod format;

use rayon::prelude::*;

pub use format::{qtensor_read, qtensor_write, tensor_read, tensor_write};

use crate::codebook::{Code16, CODE_LEN};
use crate::error::{Error, Result};

/// A dense row-major `f32` tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    dims: Vec<usize>,
    data: Vec<f32>,
}

fn element_count(dims: &[usize]) -> Option<usize> {
    dims.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d))
}

impl Tensor {
    pub fn new(dims: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let n = element_count(&dims)
            .ok_or_else(|| Error::domain(format!("tensor extents {dims:?} overflow")))?;
        if n != data.len() {
            return Err(Error::domain(format!(
                "extents {dims:?} need {n} elements, got {}",
                data.len()
            )));
        }
        Ok(Self { dims, data })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Multi-index of a flat row-major position.
    pub fn unravel(&self, mut flat: usize) -> Vec<usize> {
        let mut idx = vec![0; self.dims.len()];
        for (slot, &d) in idx.iter_mut().zip(&self.dims).rev() {
            *slot = flat % d;
            flat /= d;
        }
        idx
    }
}

/// How a tensor's elements are grouped into blocks.
///
/// Blocks are ordered row-major over (outer index, chunk along the axis,
/// inner index); chunk `c` covers axis positions `c·B .. min((c+1)·B, len)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockLayout {
    outer: usize,
    len: usize,
    inner: usize,
    block_size: usize,
    chunks: usize,
}

impl BlockLayout {
    pub fn new(dims: &[usize], axis: usize, block_size: usize) -> Result<Self> {
        if block_size == 0 {
            return Err(Error::domain("block size must be >= 1"));
        }
        if axis >= dims.len() {
            return Err(Error::domain(format!(
                "axis {axis} out of range for {} dimensions",
                dims.len()
            )));
        }
        let overflow = || Error::domain(format!("tensor extents {dims:?} overflow"));
        let outer = element_count(&dims[..axis]).ok_or_else(overflow)?;
        let inner = element_count(&dims[axis + 1..]).ok_or_else(overflow)?;
        element_count(dims).ok_or_else(overflow)?;
        let len = dims[axis];
        Ok(Self {
            outer,
            len,
            inner,
            block_size,
            chunks: len.div_ceil(block_size),
        })
    }

    pub fn num_blocks(&self) -> usize {
        self.outer * self.chunks * self.inner
    }

    fn chunk_of(&self, block: usize) -> usize {
        (block / self.inner) % self.chunks
    }

    /// Number of elements in `block`; only the last chunk may be short.
    pub fn block_len(&self, block: usize) -> usize {
        let start = self.chunk_of(block) * self.block_size;
        self.block_size.min(self.len - start)
    }

    pub fn block_bytes(&self, block: usize) -> usize {
        self.block_len(block).div_ceil(2)
    }

    /// Flat tensor positions of the elements of `block`, in block order.
    pub fn positions(&self, block: usize) -> impl Iterator<Item = usize> {
        let i = block % self.inner;
        let c = (block / self.inner) % self.chunks;
        let o = block / (self.inner * self.chunks);
        let start = c * self.block_size;
        let base = o * self.len * self.inner + i;
        let inner = self.inner;
        (start..start + self.block_len(block)).map(move |t| base + t * inner)
    }

    /// Packed bytes of all blocks together.
    pub fn total_bytes(&self) -> usize {
        let full = self.len / self.block_size;
        let tail = self.len % self.block_size;
        let per_fiber = full * self.block_size.div_ceil(2) + tail.div_ceil(2);
        self.outer * self.inner * per_fiber
    }
}

/// A quantized tensor in packed storage form.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedTensor {
    dims: Vec<usize>,
    block_axis: usize,
    block_size: usize,
    code: Code16,
    scales: Vec<f32>,
    packed: Vec<u8>,
    offsets: Vec<usize>,
}

impl QuantizedTensor {
    /// Assembles stored parts, checking sizes, scales and padding nibbles.
    pub fn from_parts(
        dims: Vec<usize>,
        block_axis: usize,
        block_size: usize,
        code: Code16,
        scales: Vec<f32>,
        packed: Vec<u8>,
    ) -> Result<Self> {
        let layout = BlockLayout::new(&dims, block_axis, block_size)?;
        let n = layout.num_blocks();
        if scales.len() != n {
            return Err(Error::Corruption(format!(
                "expected {n} block scales, found {}",
                scales.len()
            )));
        }
        if packed.len() != layout.total_bytes() {
            return Err(Error::Corruption(format!(
                "expected {} packed index bytes, found {}",
                layout.total_bytes(),
                packed.len()
            )));
        }
        if let Some(k) = scales.iter().position(|s| !(s.is_finite() && *s >= 0.0)) {
            return Err(Error::Corruption(format!(
                "block {k} has invalid scale {}",
                scales[k]
            )));
        }
        let offsets = block_offsets(&layout);
        for k in 0..n {
            if layout.block_len(k) % 2 == 1 {
                let last = packed[offsets[k] + layout.block_bytes(k) - 1];
                if last >> 4 != 0 {
                    return Err(Error::Corruption(format!(
                        "block {k} has a nonzero padding nibble"
                    )));
                }
            }
        }
        Ok(Self {
            dims,
            block_axis,
            block_size,
            code,
            scales,
            packed,
            offsets,
        })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn block_axis(&self) -> usize {
        self.block_axis
    }

    pub fn block_size(&self) -> usize {
        self.block_size
    }

    pub fn code(&self) -> &Code16 {
        &self.code
    }

    pub fn scales(&self) -> &[f32] {
        &self.scales
    }

    pub fn packed(&self) -> &[u8] {
        &self.packed
    }

    pub fn layout(&self) -> BlockLayout {
        BlockLayout::new(&self.dims, self.block_axis, self.block_size).expect("validated layout")
    }

    pub fn num_blocks(&self) -> usize {
        self.scales.len()
    }

    /// Packed bytes of one block.
    pub fn block_packed(&self, block: usize) -> &[u8] {
        let start = self.offsets[block];
        &self.packed[start..start + self.layout().block_bytes(block)]
    }

    /// Unpacked code indices of one block.
    pub fn block_indices(&self, block: usize) -> Vec<u8> {
        unpack(self.block_packed(block), self.layout().block_len(block))
    }
}

fn block_offsets(layout: &BlockLayout) -> Vec<usize> {
    let mut offsets = Vec::with_capacity(layout.num_blocks());
    let mut at = 0;
    for k in 0..layout.num_blocks() {
        offsets.push(at);
        at += layout.block_bytes(k);
    }
    offsets
}

/// Element 2k goes to the low nibble of byte k, element 2k+1 to the high.
fn pack(indices: &[u8]) -> Vec<u8> {
    indices
        .chunks(2)
        .map(|p| p[0] | p.get(1).map_or(0, |&hi| hi << 4))
        .collect()
}

fn unpack(bytes: &[u8], len: usize) -> Vec<u8> {
    (0..len)
        .map(|t| {
            let b = bytes[t / 2];
            if t % 2 == 0 {
                b & 0x0f
            } else {
                b >> 4
            }
        })
        .collect()
}

/// Scale and code indices for one block of values.
///
/// The division runs in `f32`, the nearest-value search in `f64`. An
/// all-zero block gets scale 0 and the index of the value nearest 0.
pub fn quantize_block(block: &[f32], code: &Code16) -> (f32, Vec<u8>) {
    let m = block.iter().fold(0.0f32, |acc, v| acc.max(v.abs()));
    if m == 0.0 {
        let zero = code.nearest_index(0.0) as u8;
        return (0.0, vec![zero; block.len()]);
    }
    let idx = block
        .iter()
        .map(|&w| code.nearest_index(f64::from(w / m)) as u8)
        .collect();
    (m, idx)
}

fn first_non_finite(t: &Tensor) -> Result<()> {
    match t.data.iter().position(|v| !v.is_finite()) {
        Some(k) => Err(Error::Data(format!(
            "non-finite value {} at position {:?} (flat index {k})",
            t.data[k],
            t.unravel(k)
        ))),
        None => Ok(()),
    }
}

/// Quantizes `tensor` in blocks of `block_size` along `axis`.
pub fn quantize(
    tensor: &Tensor,
    code: &Code16,
    block_size: usize,
    axis: usize,
) -> Result<QuantizedTensor> {
    let layout = BlockLayout::new(&tensor.dims, axis, block_size)?;
    first_non_finite(tensor)?;
    let blocks: Vec<(f32, Vec<u8>)> = (0..layout.num_blocks())
        .into_par_iter()
        .map(|k| {
            let values: Vec<f32> = layout.positions(k).map(|p| tensor.data[p]).collect();
            let (m, idx) = quantize_block(&values, code);
            (m, pack(&idx))
        })
        .collect();
    let mut scales = Vec::with_capacity(blocks.len());
    let mut packed = Vec::with_capacity(layout.total_bytes());
    for (m, bytes) in blocks {
        scales.push(m);
        packed.extend_from_slice(&bytes);
    }
    let offsets = block_offsets(&layout);
    Ok(QuantizedTensor {
        dims: tensor.dims.clone(),
        block_axis: axis,
        block_size,
        code: code.clone(),
        scales,
        packed,
        offsets,
    })
}

/// Rebuilds the tensor as q_c · M, with code values rounded to `f32`
/// (their stored precision) so files and in-memory tensors agree.
pub fn dequantize(qt: &QuantizedTensor) -> Result<Tensor> {
    let layout = qt.layout();
    let table: [f32; CODE_LEN] = qt.code.values().map(|v| v as f32);
    let n = element_count(&qt.dims).expect("validated extents");
    let blocks: Vec<Vec<f32>> = (0..layout.num_blocks())
        .into_par_iter()
        .map(|k| {
            let m = qt.scales[k];
            qt.block_indices(k)
                .into_iter()
                .map(|c| table[c as usize] * m)
                .collect()
        })
        .collect();
    let mut data = vec![0.0f32; n];
    for (k, values) in blocks.into_iter().enumerate() {
        for (p, v) in layout.positions(k).zip(values) {
            data[p] = v;
        }
    }
    Tensor::new(qt.dims.clone(), data)
}

/// Counts of each code index over all stored elements.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UsageHistogram {
    pub counts: [u64; CODE_LEN],
    pub total: u64,
}

impl Default for UsageHistogram {
    fn default() -> Self {
        Self {
            counts: [0; CODE_LEN],
            total: 0,
        }
    }
}

impl UsageHistogram {
    pub fn add(&mut self, index: u8) {
        self.counts[index as usize] += 1;
        self.total += 1;
    }

    pub fn merge(&mut self, other: &UsageHistogram) {
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        self.total += other.total;
    }

    pub fn proportions(&self) -> [f64; CODE_LEN] {
        if self.total == 0 {
            return [0.0; CODE_LEN];
        }
        self.counts.map(|c| c as f64 / self.total as f64)
    }
}

pub fn usage_histogram(qt: &QuantizedTensor) -> UsageHistogram {
    let layout = qt.layout();
    (0..layout.num_blocks())
        .into_par_iter()
        .map(|k| {
            let mut h = UsageHistogram::default();
            for c in qt.block_indices(k) {
                h.add(c);
            }
            h
        })
        .reduce(UsageHistogram::default, |mut a, b| {
            a.merge(&b);
            a
        })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ErrorMetric {
    MeanAbs,
    MeanSq,
    MaxAbs,
}

/// Reconstruction error between two tensors of equal extents, in `f64`.
pub fn reconstruction_error(
    original: &Tensor,
    reconstructed: &Tensor,
    metric: ErrorMetric,
) -> Result<f64> {
    if original.dims != reconstructed.dims {
        return Err(Error::domain(format!(
            "extents differ: {:?} vs {:?}",
            original.dims, reconstructed.dims
        )));
    }
    if original.is_empty() {
        return Err(Error::domain("reconstruction error of an empty tensor"));
    }
    let diffs = original
        .data
        .par_iter()
        .zip(&reconstructed.data)
        .map(|(&a, &b)| (f64::from(a) - f64::from(b)).abs());
    let n = original.len() as f64;
    Ok(match metric {
        // chunked sums keep the result independent of thread count
        ErrorMetric::MeanAbs => chunked_sum(original, reconstructed, |d| d) / n,
        ErrorMetric::MeanSq => chunked_sum(original, reconstructed, |d| d * d) / n,
        ErrorMetric::MaxAbs => diffs.reduce(|| 0.0, f64::max),
    })
}

fn chunked_sum(a: &Tensor, b: &Tensor, f: impl Fn(f64) -> f64 + Sync) -> f64 {
    const CHUNK: usize = 1 << 14;
    let partial: Vec<f64> = a
        .data
        .par_chunks(CHUNK)
        .zip(b.data.par_chunks(CHUNK))
        .map(|(x, y)| {
            x.iter()
                .zip(y)
                .map(|(&u, &v)| f((f64::from(u) - f64::from(v)).abs()))
                .sum()
        })
        .collect();
    partial.iter().sum()
}
