//! FQT1 (plain tensor) and FQZ1 (quantized tensor) binary files.
//!
//! All integers and floats are little-endian. FQT1: magic, dtype tag
//! (0 = f32), ndim, ndim × u32 extents, row-major payload. FQZ1: magic,
//! version (1), ndim, ndim × u32 extents, u32 block size, u8 block axis,
//! u8 code length (16), 16 × f32 code values, then per block an f32 scale
//! followed by its packed index bytes.

use std::fs;
use std::path::Path;

use super::{element_count, BlockLayout, QuantizedTensor, Tensor};
use crate::codebook::{Code16, CODE_LEN};
use crate::error::{Error, Result};

const FQT_MAGIC: &[u8; 4] = b"FQT1";
const FQZ_MAGIC: &[u8; 4] = b"FQZ1";
const DTYPE_F32: u8 = 0;
const FQZ_VERSION: u8 = 1;

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
    what: &'static str,
}

impl<'a> Reader<'a> {
    fn new(bytes: &'a [u8], what: &'static str) -> Self {
        Self { bytes, at: 0, what }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.at.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.at..end];
                self.at = end;
                Ok(s)
            }
            None => Err(self.truncated(n)),
        }
    }

    fn truncated(&self, n: usize) -> Error {
        Error::format(format!(
            "truncated {} file: expected at least {} bytes, found {}",
            self.what,
            self.at.saturating_add(n),
            self.bytes.len()
        ))
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn magic(&mut self, want: &[u8; 4]) -> Result<()> {
        let got = self.take(4)?;
        if got != want {
            return Err(Error::format(format!(
                "bad magic {:?}, expected {:?}",
                String::from_utf8_lossy(got),
                String::from_utf8_lossy(want)
            )));
        }
        Ok(())
    }

    fn dims(&mut self) -> Result<Vec<usize>> {
        let ndim = self.u8()? as usize;
        let dims = (0..ndim)
            .map(|_| self.u32().map(|d| d as usize))
            .collect::<Result<Vec<usize>>>()?;
        element_count(&dims)
            .ok_or_else(|| Error::format(format!("extents {dims:?} overflow the address space")))?;
        Ok(dims)
    }

    /// Requires exactly `n` more bytes.
    fn expect_remaining(&self, n: usize) -> Result<()> {
        let left = self.bytes.len() - self.at;
        if left != n {
            let expected = self
                .at
                .checked_add(n)
                .map_or_else(|| "more than usize::MAX".to_string(), |e| e.to_string());
            let kind = if left < n { "truncated" } else { "oversized" };
            return Err(Error::format(format!(
                "{kind} {} file: expected {expected} bytes, found {}",
                self.what,
                self.bytes.len()
            )));
        }
        Ok(())
    }
}

fn put_dims(out: &mut Vec<u8>, dims: &[usize]) -> Result<()> {
    let ndim = u8::try_from(dims.len())
        .map_err(|_| Error::format(format!("{} dimensions do not fit in a byte", dims.len())))?;
    out.push(ndim);
    for &d in dims {
        let d = u32::try_from(d)
            .map_err(|_| Error::format(format!("extent {d} does not fit in 32 bits")))?;
        out.extend_from_slice(&d.to_le_bytes());
    }
    Ok(())
}

pub(super) fn encode_tensor(t: &Tensor) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(6 + 4 * t.dims.len() + 4 * t.len());
    out.extend_from_slice(FQT_MAGIC);
    out.push(DTYPE_F32);
    put_dims(&mut out, &t.dims)?;
    for v in &t.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub(super) fn decode_tensor(bytes: &[u8]) -> Result<Tensor> {
    let mut r = Reader::new(bytes, "FQT1");
    r.magic(FQT_MAGIC)?;
    let dtype = r.u8()?;
    if dtype != DTYPE_F32 {
        return Err(Error::format(format!("unsupported dtype tag {dtype}")));
    }
    let dims = r.dims()?;
    let n = element_count(&dims).expect("checked in dims");
    let payload = n
        .checked_mul(4)
        .ok_or_else(|| Error::format(format!("extents {dims:?} overflow the address space")))?;
    r.expect_remaining(payload)?;
    let data = r
        .take(payload)?
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Tensor::new(dims, data).map_err(|e| Error::format(e.to_string()))
}

pub(super) fn encode_qtensor(qt: &QuantizedTensor) -> Result<Vec<u8>> {
    let layout = qt.layout();
    let mut out = Vec::with_capacity(40 + 64 + 4 * qt.num_blocks() + qt.packed.len());
    out.extend_from_slice(FQZ_MAGIC);
    out.push(FQZ_VERSION);
    put_dims(&mut out, &qt.dims)?;
    let b = u32::try_from(qt.block_size).map_err(|_| {
        Error::format(format!(
            "block size {} does not fit in 32 bits",
            qt.block_size
        ))
    })?;
    out.extend_from_slice(&b.to_le_bytes());
    let axis = u8::try_from(qt.block_axis).map_err(|_| {
        Error::format(format!(
            "block axis {} does not fit in a byte",
            qt.block_axis
        ))
    })?;
    out.push(axis);
    out.push(CODE_LEN as u8);
    let stored: Vec<f32> = qt.code.values().iter().map(|&v| v as f32).collect();
    if let Some(j) = stored.windows(2).position(|w| !(w[0] < w[1])) {
        return Err(Error::format(format!(
            "code values q{} and q{} coincide in f32",
            j + 1,
            j + 2
        )));
    }
    for v in stored {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for k in 0..layout.num_blocks() {
        out.extend_from_slice(&qt.scales[k].to_le_bytes());
        out.extend_from_slice(qt.block_packed(k));
    }
    Ok(out)
}

pub(super) fn decode_qtensor(bytes: &[u8]) -> Result<QuantizedTensor> {
    let mut r = Reader::new(bytes, "FQZ1");
    r.magic(FQZ_MAGIC)?;
    let version = r.u8()?;
    if version != FQZ_VERSION {
        return Err(Error::format(format!("unsupported FQZ1 version {version}")));
    }
    let dims = r.dims()?;
    let block_size = r.u32()? as usize;
    let axis = r.u8()? as usize;
    let code_len = r.u8()? as usize;
    if code_len != CODE_LEN {
        return Err(Error::format(format!(
            "expected {CODE_LEN} code values, found {code_len}"
        )));
    }
    let mut values = [0.0f64; CODE_LEN];
    for v in values.iter_mut() {
        *v = f64::from(r.f32()?);
    }
    let code = Code16::custom(values).map_err(|e| Error::format(e.to_string()))?;
    let layout =
        BlockLayout::new(&dims, axis, block_size).map_err(|e| Error::format(e.to_string()))?;
    let body = layout
        .num_blocks()
        .checked_mul(4)
        .and_then(|s| s.checked_add(layout.total_bytes()))
        .ok_or_else(|| Error::format(format!("extents {dims:?} overflow the address space")))?;
    r.expect_remaining(body)?;
    let mut scales = Vec::with_capacity(layout.num_blocks());
    let mut packed = Vec::with_capacity(layout.total_bytes());
    for k in 0..layout.num_blocks() {
        scales.push(r.f32()?);
        packed.extend_from_slice(r.take(layout.block_bytes(k))?);
    }
    QuantizedTensor::from_parts(dims, axis, block_size, code, scales, packed)
}

pub fn tensor_write(t: &Tensor, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_tensor(t)?)?;
    Ok(())
}

pub fn tensor_read(path: impl AsRef<Path>) -> Result<Tensor> {
    decode_tensor(&fs::read(path)?)
}

pub fn qtensor_write(qt: &QuantizedTensor, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_qtensor(qt)?)?;
    Ok(())
}

pub fn qtensor_read(path: impl AsRef<Path>) -> Result<QuantizedTensor> {
    decode_qtensor(&fs::read(path)?)
}
