use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Signed fixed-point format: one sign bit, `int_bits` integer bits and
/// `frac_bits = total_bits - int_bits - 1` fractional bits. The step is
/// `2^-frac_bits`; the offset is always zero.
///
/// `int_bits` may be negative when every value is below 0.5 in magnitude.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FixedPointParams {
    pub total_bits: u32,
    pub int_bits: i32,
    pub frac_bits: i32,
}

impl FixedPointParams {
    pub fn new(total_bits: u32, int_bits: i32) -> Result<Self> {
        let p = FixedPointParams {
            total_bits,
            int_bits,
            frac_bits: total_bits as i32 - int_bits - 1,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(2..=32).contains(&self.total_bits) {
            return Err(Error::Config(format!(
                "fixed-point width must be in 2..=32 bits, got {}",
                self.total_bits
            )));
        }
        if self.frac_bits != self.total_bits as i32 - self.int_bits - 1 {
            return Err(Error::Format(format!("inconsistent fixed-point params {self:?}")));
        }
        if !(-1000..=1000).contains(&self.frac_bits) {
            return Err(Error::Format(format!("fixed-point scale out of range: {self:?}")));
        }
        Ok(())
    }

    /// Step size `2^-frac_bits`.
    pub fn scale(&self) -> f64 {
        2f64.powi(-self.frac_bits)
    }

    pub fn min_code(&self) -> i64 {
        -(1i64 << (self.total_bits - 1))
    }

    pub fn max_code(&self) -> i64 {
        (1i64 << (self.total_bits - 1)) - 1
    }

    /// Nearest code, saturated to the representable range.
    pub fn code(&self, x: f32) -> i32 {
        let q = (x as f64 / self.scale()).round();
        q.clamp(self.min_code() as f64, self.max_code() as f64) as i32
    }

    pub fn value(&self, code: i32) -> f32 {
        (code as f64 * self.scale()) as f32
    }

    pub fn quantize(&self, x: f32) -> f32 {
        self.value(self.code(x))
    }

    pub fn quantize_in_place(&self, xs: &mut [f32]) {
        xs.iter_mut().for_each(|x| *x = self.quantize(*x));
    }

    /// Whether `x` lies in the representable range, i.e. rounding is not
    /// clipped.
    pub fn in_range(&self, x: f32) -> bool {
        let q = (x as f64 / self.scale()).round();
        q >= self.min_code() as f64 && q <= self.max_code() as f64
    }
}

/// Exact `ceil(log2(x))` for finite `x > 0`.
pub fn ceil_log2(x: f64) -> i32 {
    assert!(x > 0.0 && x.is_finite());
    let bits = x.to_bits();
    let exp = ((bits >> 52) & 0x7ff) as i32;
    let mantissa = bits & ((1u64 << 52) - 1);
    if exp == 0 {
        // subnormal: scale into the normal range first
        return ceil_log2(x * 2f64.powi(64)) - 64;
    }
    let e = exp - 1023;
    if mantissa == 0 {
        e
    } else {
        e + 1
    }
}

/// Per-layer parameters: `int_bits = ceil(log2(max |x|))`. An all-zero input
/// uses `int_bits = 0`.
pub fn compute_linear_params(values: &[f32], total_bits: u32) -> Result<FixedPointParams> {
    if total_bits < 2 {
        return Err(Error::Config(format!("total_bits must be at least 2, got {total_bits}")));
    }
    if values.is_empty() {
        return Err(Error::Config("cannot derive fixed-point params from no values".into()));
    }
    let max = values.iter().fold(0.0f32, |m, v| m.max(v.abs()));
    if !max.is_finite() {
        return Err(Error::NonFinite("non-finite value in quantizer input".into()));
    }
    let int_bits = if max == 0.0 { 0 } else { ceil_log2(max as f64) };
    FixedPointParams::new(total_bits, int_bits)
}

/// `(q, code)` for `x` under `params`.
pub fn quantize_linear(x: f32, params: &FixedPointParams) -> (f32, i32) {
    let code = params.code(x);
    (params.value(code), code)
}
