//! Signed fixed-point values with explicit integer and fraction widths.
//!
//! A [`QFormat`] with `i` integer bits and `f` fraction bits stores a value
//! as an integer count of `2^-f` units. Signed formats carry an extra sign
//! bit and cover `[-(2^i - 2^-f), 2^i - 2^-f]`. Unsigned formats reuse the
//! sign bit as one more magnitude bit and cover `[0, 2^(i+1) - 2^-f]`; the
//! pipeline uses them for quantities that are never negative (scores, the
//! exponent sum, weights), which lets `1.0` and `n` be represented exactly.
//!
//! All arithmetic is exact on the raw integers and rounds once, to nearest
//! with ties to even, when the result is narrowed to the output format.
//! Results that do not fit saturate.

use serde::Serialize;

use crate::error::{Error, Result};

/// Widest magnitude supported; raw products are formed in `i128`.
pub const MAX_TOTAL_BITS: u32 = 62;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub struct QFormat {
    int_bits: u32,
    frac_bits: u32,
    signed: bool,
}

impl QFormat {
    /// Signed format: sign bit plus `int_bits + frac_bits` magnitude bits.
    pub fn new(int_bits: u32, frac_bits: u32) -> Result<Self> {
        Self::checked(int_bits, frac_bits, true)
    }

    /// Non-negative format with `int_bits + frac_bits + 1` magnitude bits.
    pub fn unsigned(int_bits: u32, frac_bits: u32) -> Result<Self> {
        Self::checked(int_bits, frac_bits, false)
    }

    fn checked(int_bits: u32, frac_bits: u32, signed: bool) -> Result<Self> {
        let total = int_bits as u64 + frac_bits as u64;
        if total == 0 {
            return Err(Error::InvalidFormat(
                "int_bits + frac_bits must be at least 1".into(),
            ));
        }
        if total + u64::from(!signed) > MAX_TOTAL_BITS as u64 {
            return Err(Error::InvalidFormat(format!(
                "Q{int_bits}.{frac_bits} exceeds {MAX_TOTAL_BITS} magnitude bits"
            )));
        }
        Ok(QFormat {
            int_bits,
            frac_bits,
            signed,
        })
    }

    pub fn int_bits(&self) -> u32 {
        self.int_bits
    }

    pub fn frac_bits(&self) -> u32 {
        self.frac_bits
    }

    pub fn is_signed(&self) -> bool {
        self.signed
    }

    /// Bits available for the magnitude (excludes the sign bit of signed formats).
    pub fn magnitude_bits(&self) -> u32 {
        self.int_bits + self.frac_bits + u32::from(!self.signed)
    }

    pub fn max_raw(&self) -> i64 {
        (1i64 << self.magnitude_bits()) - 1
    }

    pub fn min_raw(&self) -> i64 {
        if self.signed {
            -self.max_raw()
        } else {
            0
        }
    }

    /// Value of one raw unit, `2^-frac_bits`.
    pub fn resolution(&self) -> f64 {
        pow2(-(self.frac_bits as i32))
    }

    pub fn max_value(&self) -> f64 {
        self.max_raw() as f64 * self.resolution()
    }

    pub fn min_value(&self) -> f64 {
        self.min_raw() as f64 * self.resolution()
    }

    pub fn contains_raw(&self, raw: i64) -> bool {
        (self.min_raw()..=self.max_raw()).contains(&raw)
    }

    fn saturate(&self, raw: i128) -> i64 {
        raw.clamp(self.min_raw() as i128, self.max_raw() as i128) as i64
    }
}

impl std::fmt::Display for QFormat {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let prefix = if self.signed { "Q" } else { "UQ" };
        write!(f, "{prefix}{}.{}", self.int_bits, self.frac_bits)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct QValue {
    raw: i64,
    format: QFormat,
}

impl QValue {
    pub fn from_raw(raw: i64, format: QFormat) -> Result<Self> {
        if !format.contains_raw(raw) {
            return Err(Error::InvalidArgument(format!(
                "raw value {raw} out of range for {format}"
            )));
        }
        Ok(QValue { raw, format })
    }

    pub(crate) fn saturating(raw: i128, format: QFormat) -> Self {
        QValue {
            raw: format.saturate(raw),
            format,
        }
    }

    pub fn zero(format: QFormat) -> Self {
        QValue { raw: 0, format }
    }

    pub fn raw(&self) -> i64 {
        self.raw
    }

    pub fn format(&self) -> QFormat {
        self.format
    }

    pub fn to_real(&self) -> f64 {
        to_real(*self)
    }

    /// Re-express in `out`, rounding and saturating as needed.
    pub fn convert(&self, out: QFormat) -> QValue {
        QValue::saturating(
            rescale(self.raw as i128, self.format.frac_bits, out.frac_bits),
            out,
        )
    }
}

/// Exact `2^e` for the exponents used here.
pub(crate) fn pow2(e: i32) -> f64 {
    2f64.powi(e)
}

/// `x / 2^shift`, rounded to nearest with ties to even.
pub(crate) fn shift_round(x: i128, shift: u32) -> i128 {
    if shift == 0 {
        return x;
    }
    let q = x >> shift;
    let r = x - (q << shift);
    let half = 1i128 << (shift - 1);
    if r > half || (r == half && q & 1 == 1) {
        q + 1
    } else {
        q
    }
}

/// `num / den` for `den > 0`, rounded to nearest with ties to even.
pub(crate) fn div_round(num: i128, den: i128) -> i128 {
    debug_assert!(den > 0);
    let q = num.div_euclid(den);
    let r = num.rem_euclid(den);
    match (2 * r).cmp(&den) {
        std::cmp::Ordering::Greater => q + 1,
        std::cmp::Ordering::Equal if q & 1 == 1 => q + 1,
        _ => q,
    }
}

/// Move a raw value between fraction widths.
pub(crate) fn rescale(raw: i128, from_frac: u32, to_frac: u32) -> i128 {
    if to_frac >= from_frac {
        raw << (to_frac - from_frac)
    } else {
        shift_round(raw, from_frac - to_frac)
    }
}

pub fn quantize(x: f64, format: QFormat) -> Result<QValue> {
    if !x.is_finite() {
        return Err(Error::NonFinite(x));
    }
    let scaled = (x * pow2(format.frac_bits as i32)).round_ties_even();
    let raw = scaled.clamp(format.min_raw() as f64, format.max_raw() as f64) as i64;
    Ok(QValue { raw, format })
}

pub fn to_real(v: QValue) -> f64 {
    v.raw as f64 * v.format.resolution()
}

fn aligned(a: QValue, b: QValue) -> (i128, i128, u32) {
    let frac = a.format.frac_bits.max(b.format.frac_bits);
    (
        (a.raw as i128) << (frac - a.format.frac_bits),
        (b.raw as i128) << (frac - b.format.frac_bits),
        frac,
    )
}

pub fn q_add(a: QValue, b: QValue, out: QFormat) -> QValue {
    let (x, y, frac) = aligned(a, b);
    QValue::saturating(rescale(x + y, frac, out.frac_bits), out)
}

pub fn q_sub(a: QValue, b: QValue, out: QFormat) -> QValue {
    let (x, y, frac) = aligned(a, b);
    QValue::saturating(rescale(x - y, frac, out.frac_bits), out)
}

pub fn q_mul(a: QValue, b: QValue, out: QFormat) -> QValue {
    let product = a.raw as i128 * b.raw as i128;
    let frac = a.format.frac_bits + b.format.frac_bits;
    QValue::saturating(rescale(product, frac, out.frac_bits), out)
}

/// Exact rational division rounded once into `out`. The divisor must be at
/// least 1 in real value.
pub fn q_div(a: QValue, b: QValue, out: QFormat) -> Result<QValue> {
    if (b.raw as i128) < (1i128 << b.format.frac_bits) {
        return Err(Error::Contract(format!(
            "divisor {} is below 1",
            b.to_real()
        )));
    }
    // a/b = (a.raw / b.raw) * 2^(fb - fa); scaled into out by 2^fo.
    let e = out.frac_bits as i64 + b.format.frac_bits as i64 - a.format.frac_bits as i64;
    let (num, den) = if e >= 0 {
        ((a.raw as i128) << e, b.raw as i128)
    } else {
        (a.raw as i128, (b.raw as i128) << (-e))
    };
    Ok(QValue::saturating(div_round(num, den), out))
}

/// `ceil(log2(x))` with `log2(1) = 0`.
pub fn ceil_log2(x: usize) -> u32 {
    if x <= 1 {
        0
    } else {
        usize::BITS - (x - 1).leading_zeros()
    }
}

/// Per-stage formats for a pipeline sized for `n` rows of dimension `d`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct PrecisionSchedule {
    pub n: usize,
    pub d: usize,
    pub input: QFormat,
    pub temp: QFormat,
    pub dot_product: QFormat,
    pub dot_product_shifted: QFormat,
    pub score: QFormat,
    pub expsum: QFormat,
    pub weight: QFormat,
    pub output: QFormat,
}

impl PrecisionSchedule {
    pub fn int_bits(&self) -> u32 {
        self.input.int_bits
    }

    pub fn frac_bits(&self) -> u32 {
        self.input.frac_bits
    }
}

/// Derive every stage width from the input format `(i, f)` and the sizes.
///
/// Sizes are rounded up to powers of two for width purposes only.
pub fn make_schedule(n: usize, d: usize, i: u32, f: u32) -> Result<PrecisionSchedule> {
    if n == 0 || d == 0 {
        return Err(Error::InvalidArgument(format!(
            "schedule needs n >= 1 and d >= 1 (got n={n}, d={d})"
        )));
    }
    if i == 0 || f == 0 {
        return Err(Error::InvalidArgument(format!(
            "schedule needs i >= 1 and f >= 1 (got i={i}, f={f})"
        )));
    }
    let log_n = ceil_log2(n);
    let log_d = ceil_log2(d);
    Ok(PrecisionSchedule {
        n,
        d,
        input: QFormat::new(i, f)?,
        temp: QFormat::new(2 * i, 2 * f)?,
        dot_product: QFormat::new(log_d + 2 * i, 2 * f)?,
        dot_product_shifted: QFormat::new(log_d + 2 * i + 1, 2 * f)?,
        score: QFormat::unsigned(0, 2 * f)?,
        expsum: QFormat::unsigned(log_n, 2 * f)?,
        weight: QFormat::unsigned(0, 2 * f)?,
        output: QFormat::new(i + log_n, 3 * f)?,
    })
}
