//! 4-bit group-wise linear quantization with FP8 (E4M3) scales and zero points.

use crate::error::{Error, Result};

pub const DEFAULT_GROUP_SIZE: usize = 64;

/// Largest finite E4M3 magnitude.
pub const E4M3_MAX: f64 = 448.0;

/// Canonical NaN byte (`S.1111.111` with the sign clear).
pub const E4M3_NAN: u8 = 0x7F;

const SCALE_FLOOR: f64 = 1e-12;
const LEVELS: f64 = 15.0;

/// Encodes to E4M3 (bias 7, no infinities) with round-half-to-even;
/// magnitudes above 448 saturate.
pub fn e4m3_encode(x: f64) -> u8 {
    if x.is_nan() {
        return E4M3_NAN;
    }
    let sign = if x.is_sign_negative() { 0x80 } else { 0 };
    let a = x.abs();
    if a >= E4M3_MAX {
        return sign | 0x7E;
    }
    // Subnormal range: multiples of 2^-9 below 2^-6. A result of 8 is the
    // smallest normal, whose bit pattern is also 8.
    if a < 2f64.powi(-6) {
        let m = (a * 512.0).round_ties_even() as u8;
        return sign | m;
    }
    let mut e = a.log2().floor() as i32;
    if 2f64.powi(e) > a {
        e -= 1;
    } else if 2f64.powi(e + 1) <= a {
        e += 1;
    }
    let mut mant = ((a / 2f64.powi(e) - 1.0) * 8.0).round_ties_even() as i32;
    if mant == 8 {
        mant = 0;
        e += 1;
    }
    let field = e + 7;
    if field > 15 || (field == 15 && mant == 7) {
        return sign | 0x7E;
    }
    sign | ((field as u8) << 3) | mant as u8
}

pub fn e4m3_decode(b: u8) -> f64 {
    let sign = if b & 0x80 != 0 { -1.0 } else { 1.0 };
    let e = i32::from((b >> 3) & 0x0F);
    let m = f64::from(b & 0x07);
    if e == 15 && m == 7.0 {
        return f64::NAN;
    }
    let mag = if e == 0 {
        m * 2f64.powi(-9)
    } else {
        (1.0 + m / 8.0) * 2f64.powi(e - 7)
    };
    sign * mag
}

/// 4-bit codes for a vector, two per byte (low nibble first), with one E4M3
/// scale and zero point per group.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuantBlock {
    len: usize,
    group_size: usize,
    scales: Vec<u8>,
    zero_points: Vec<u8>,
    packed: Vec<u8>,
}

impl QuantBlock {
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn group_size(&self) -> usize {
        self.group_size
    }

    pub fn scales(&self) -> &[u8] {
        &self.scales
    }

    pub fn zero_points(&self) -> &[u8] {
        &self.zero_points
    }

    pub fn packed(&self) -> &[u8] {
        &self.packed
    }

    pub fn code(&self, i: usize) -> u8 {
        let byte = self.packed[i / 2];
        if i % 2 == 0 {
            byte & 0x0F
        } else {
            byte >> 4
        }
    }

    /// Bytes held at rest: codes plus per-group scale and zero point.
    pub fn stored_bytes(&self) -> usize {
        self.packed.len() + self.scales.len() + self.zero_points.len()
    }

    /// Header (`u64` length, `u32` group size, little-endian), then scales,
    /// zero points and packed codes.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(12 + self.stored_bytes());
        out.extend_from_slice(&(self.len as u64).to_le_bytes());
        out.extend_from_slice(&(self.group_size as u32).to_le_bytes());
        out.extend_from_slice(&self.scales);
        out.extend_from_slice(&self.zero_points);
        out.extend_from_slice(&self.packed);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 12 {
            return Err(Error::Validation("quantized block header truncated".into()));
        }
        let len = u64::from_le_bytes(bytes[..8].try_into().expect("8 bytes")) as usize;
        let group_size = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
        if group_size == 0 {
            return Err(Error::Validation("group size must be positive".into()));
        }
        let groups = len.div_ceil(group_size);
        let packed_len = len.div_ceil(2);
        let body = &bytes[12..];
        if body.len() != 2 * groups + packed_len {
            return Err(Error::Validation(format!(
                "body has {} bytes, expected {}",
                body.len(),
                2 * groups + packed_len
            )));
        }
        let block = Self {
            len,
            group_size,
            scales: body[..groups].to_vec(),
            zero_points: body[groups..2 * groups].to_vec(),
            packed: body[2 * groups..].to_vec(),
        };
        block.validate()?;
        Ok(block)
    }

    fn validate(&self) -> Result<()> {
        let groups = self.len.div_ceil(self.group_size.max(1));
        if self.group_size == 0
            || self.packed.len() != self.len.div_ceil(2)
            || self.scales.len() != groups
            || self.zero_points.len() != groups
        {
            return Err(Error::Validation("malformed quantized block".into()));
        }
        if self.len % 2 == 1 && self.packed.last().is_some_and(|b| b >> 4 != 0) {
            return Err(Error::Validation("padding nibble is not zero".into()));
        }
        Ok(())
    }
}

/// Asymmetric 4-bit quantization: per group, `zp = min` and
/// `scale = (max − min)/15`, both rounded to E4M3; codes are computed against
/// the rounded values and clamped to `[0, 15]`.
pub fn quantize4(v: &[f64], group_size: usize) -> Result<QuantBlock> {
    if group_size == 0 {
        return Err(Error::Validation("group size must be positive".into()));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::Validation(
            "cannot quantize non-finite values".into(),
        ));
    }
    let groups = v.len().div_ceil(group_size);
    let mut scales = Vec::with_capacity(groups);
    let mut zero_points = Vec::with_capacity(groups);
    let mut packed = vec![0u8; v.len().div_ceil(2)];
    for (g, chunk) in v.chunks(group_size).enumerate() {
        let lo = chunk.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = chunk.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let s = e4m3_encode(((hi - lo) / LEVELS).max(SCALE_FLOOR));
        let z = e4m3_encode(lo);
        scales.push(s);
        zero_points.push(z);
        let (sd, zd) = (e4m3_decode(s), e4m3_decode(z));
        for (j, &x) in chunk.iter().enumerate() {
            let code = if sd > 0.0 {
                ((x - zd) / sd).round().clamp(0.0, LEVELS) as u8
            } else {
                0
            };
            let i = g * group_size + j;
            packed[i / 2] |= if i % 2 == 0 { code } else { code << 4 };
        }
    }
    Ok(QuantBlock {
        len: v.len(),
        group_size,
        scales,
        zero_points,
        packed,
    })
}

pub fn dequantize4(q: &QuantBlock) -> Result<Vec<f64>> {
    q.validate()?;
    Ok((0..q.len)
        .map(|i| {
            let g = i / q.group_size;
            e4m3_decode(q.scales[g]) * f64::from(q.code(i)) + e4m3_decode(q.zero_points[g])
        })
        .collect())
}

/// Bytes for one length-`n` vector stored by [`quantize4`].
pub fn quantized_bytes(n: usize, group_size: usize) -> usize {
    n.div_ceil(2) + 2 * n.div_ceil(group_size)
}

/// A vector kept at rest in 4-bit form after rescaling to unit RMS, so the
/// per-group ranges sit comfortably inside E4M3's dynamic range whatever the
/// vector's magnitude. The `f64` factor is stored alongside.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedVector {
    factor: f64,
    block: QuantBlock,
}

impl QuantizedVector {
    pub fn new(v: &[f64], group_size: usize) -> Result<Self> {
        let n = crate::numerics::norm(v);
        if !n.is_finite() {
            return Err(Error::Validation(
                "cannot quantize non-finite values".into(),
            ));
        }
        let factor = if n > 0.0 {
            n / (v.len() as f64).sqrt()
        } else {
            1.0
        };
        let scaled: Vec<f64> = v.iter().map(|x| x / factor).collect();
        Ok(Self {
            factor,
            block: quantize4(&scaled, group_size)?,
        })
    }

    pub fn restore(&self) -> Vec<f64> {
        dequantize4(&self.block)
            .expect("block built by quantize4")
            .into_iter()
            .map(|x| x * self.factor)
            .collect()
    }

    pub fn len(&self) -> usize {
        self.block.len()
    }

    pub fn is_empty(&self) -> bool {
        self.block.is_empty()
    }

    /// Packed codes, scales, zero points and the 8-byte factor.
    pub fn stored_bytes(&self) -> usize {
        self.block.stored_bytes() + 8
    }
}
