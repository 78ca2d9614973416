//! Bit-exact codecs and the wire format.
//!
//! Two quantizers are provided. The dithered scalar quantizer rounds each
//! coordinate at random to one of its two neighbouring grid points so that
//! the reconstruction is conditionally unbiased. The matrix quantizer rounds
//! each entry deterministically to a uniform grid fine enough that the
//! Frobenius (hence operator) error stays below a target; it is a constructive
//! stand-in for an ε-net of the operator-norm ball and pays a `log(rows·cols)`
//! factor over [`net_bits_theoretical`].

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::model::operator_norm;
use crate::Norm;

/// Number of bits needed for one symbol of an alphabet of `alphabet` letters.
pub fn bits_per_symbol(alphabet: u32) -> u32 {
    if alphabet <= 1 {
        0
    } else {
        32 - (alphabet - 1).leading_zeros()
    }
}

/// Uniform grid `{−N·step, …, 0, …, N·step}` with `2N + 1` points.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalarDitherConfig {
    l: f64,
    step: f64,
    levels: u32,
}

impl ScalarDitherConfig {
    /// `N = ceil(L / step)`; the clip radius is then raised to `N·step`.
    pub fn new(l: f64, step: f64) -> Result<Self> {
        if !(l > 0.0 && l.is_finite() && step > 0.0 && step.is_finite()) {
            return Err(invalid("dither radius and step must be positive and finite"));
        }
        let n = (l / step).ceil();
        if n > ((u32::MAX - 1) / 2) as f64 {
            return Err(Error::AlphabetOverflow((2.0 * n + 1.0) as u64));
        }
        let levels = (n as u32).max(1);
        Ok(Self { l: levels as f64 * step, step, levels })
    }

    /// `N` grid intervals on each side of zero, `step = L / N`.
    pub fn from_levels(l: f64, levels: u32) -> Result<Self> {
        if !(l > 0.0 && l.is_finite()) || levels == 0 {
            return Err(invalid("dither radius must be positive and N at least 1"));
        }
        if levels > (u32::MAX - 1) / 2 {
            return Err(Error::AlphabetOverflow(2 * levels as u64 + 1));
        }
        Ok(Self { l, step: l / levels as f64, levels })
    }

    pub fn radius(&self) -> f64 {
        self.l
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn levels(&self) -> u32 {
        self.levels
    }

    pub fn alphabet(&self) -> u32 {
        2 * self.levels + 1
    }

    pub fn bits_per_symbol(&self) -> u32 {
        bits_per_symbol(self.alphabet())
    }
}

/// Randomized rounding of `x` to one of its two neighbouring grid points with
/// `E[decode(code)] = x`.
pub fn dither_encode<R: Rng + ?Sized>(x: f64, cfg: &ScalarDitherConfig, rng: &mut R) -> Result<u32> {
    if !x.is_finite() {
        return Err(Error::NonFinite);
    }
    if x.abs() > cfg.l {
        return Err(Error::OutOfRange { value: x, radius: cfg.l });
    }
    let n = cfg.levels as f64;
    let t = (x / cfg.step).clamp(-n, n);
    let lower = t.floor();
    let frac = t - lower;
    // `random::<f64>()` lies in [0, 1), so frac = 0 never rounds up.
    let up = rng.random::<f64>() < frac;
    let j = lower + if up { 1.0 } else { 0.0 };
    Ok((j + n) as u32)
}

pub fn dither_decode(code: u32, cfg: &ScalarDitherConfig) -> Result<f64> {
    if code > 2 * cfg.levels {
        return Err(Error::Malformed(format!("dither code {code} exceeds {}", 2 * cfg.levels)));
    }
    Ok((code as f64 - cfg.levels as f64) * cfg.step)
}

/// Entrywise dithering of a whole matrix, column-major.
pub fn dither_encode_matrix<R: Rng + ?Sized>(
    m: &DMatrix<f64>,
    cfg: &ScalarDitherConfig,
    rng: &mut R,
) -> Result<QuantizedMatrix> {
    let codes = m.iter().map(|&x| dither_encode(x, cfg, rng)).collect::<Result<Vec<_>>>()?;
    QuantizedMatrix::new(m.nrows(), m.ncols(), cfg.alphabet(), codes)
}

pub fn dither_decode_matrix(q: &QuantizedMatrix, cfg: &ScalarDitherConfig) -> Result<DMatrix<f64>> {
    if q.alphabet != cfg.alphabet() {
        return Err(Error::Malformed("alphabet does not match the dither grid".into()));
    }
    let values = q.codes.iter().map(|&c| dither_decode(c, cfg)).collect::<Result<Vec<_>>>()?;
    Ok(DMatrix::from_vec(q.rows, q.cols, values))
}

/// Column-major symbols of a quantized matrix.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuantizedMatrix {
    rows: usize,
    cols: usize,
    alphabet: u32,
    codes: Vec<u32>,
}

impl QuantizedMatrix {
    pub fn new(rows: usize, cols: usize, alphabet: u32, codes: Vec<u32>) -> Result<Self> {
        if alphabet < 2 {
            return Err(Error::Malformed("alphabet must have at least 2 letters".into()));
        }
        if codes.len() != rows * cols {
            return Err(Error::Malformed(format!(
                "{} codes for a {rows}x{cols} matrix",
                codes.len()
            )));
        }
        if let Some(c) = codes.iter().find(|&&c| c >= alphabet) {
            return Err(Error::Malformed(format!("code {c} outside alphabet {alphabet}")));
        }
        Ok(Self { rows, cols, alphabet, codes })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn alphabet(&self) -> u32 {
        self.alphabet
    }

    pub fn codes(&self) -> &[u32] {
        &self.codes
    }

    /// Packed code bits: `len · ceil(log2(alphabet))`.
    pub fn bits_used(&self) -> u64 {
        self.codes.len() as u64 * bits_per_symbol(self.alphabet) as u64
    }
}

/// Uniform grid of spacing `step` covering `[−r, r]`, used by the matrix codec.
/// Both sides derive it from protocol-known quantities, so it never travels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatrixGrid {
    pub rows: usize,
    pub cols: usize,
    pub radius: f64,
    pub step: f64,
    pub alphabet: u32,
}

impl MatrixGrid {
    /// Grid with spacing `2·eps/√(rows·cols)`, which keeps the Frobenius error
    /// of nearest-point rounding at most `eps`.
    pub fn for_target(rows: usize, cols: usize, radius: f64, eps: f64) -> Result<Self> {
        check_radius(radius)?;
        if !(eps > 0.0 && eps.is_finite()) {
            return Err(invalid("target error must be positive and finite"));
        }
        let entries = rows * cols;
        if entries == 0 {
            return Ok(Self { rows, cols, radius, step: 2.0 * eps, alphabet: 2 });
        }
        let step = 2.0 * eps / (entries as f64).sqrt();
        let alphabet = (2.0 * radius / step).floor() + 2.0;
        if alphabet > u32::MAX as f64 {
            return Err(Error::AlphabetOverflow(alphabet.min(u64::MAX as f64) as u64));
        }
        Ok(Self { rows, cols, radius, step, alphabet: alphabet as u32 })
    }

    /// Finest grid whose packed size fits in `bits`.
    pub fn for_budget(rows: usize, cols: usize, radius: f64, bits: u64) -> Result<Self> {
        check_radius(radius)?;
        let entries = rows * cols;
        if entries == 0 {
            return Ok(Self { rows, cols, radius, step: 1.0, alphabet: 2 });
        }
        let per_symbol = (bits / entries as u64).min(32);
        if per_symbol < 1 {
            return Err(Error::InsufficientBudget { bits, entries });
        }
        if radius == 0.0 {
            return Ok(Self { rows, cols, radius, step: 1.0, alphabet: 2 });
        }
        let alphabet = (1u64 << per_symbol).min(u32::MAX as u64) as u32;
        // floor(2r/step) + 2 = alphabet exactly.
        let step = 2.0 * radius / (alphabet as f64 - 1.5);
        Ok(Self { rows, cols, radius, step, alphabet })
    }

    pub fn bits(&self) -> u64 {
        (self.rows * self.cols) as u64 * bits_per_symbol(self.alphabet) as u64
    }

    /// Worst-case Frobenius (and operator) error of rounding to this grid.
    pub fn error_bound(&self) -> f64 {
        if self.radius == 0.0 {
            return 0.0;
        }
        0.5 * self.step * ((self.rows * self.cols) as f64).sqrt()
    }

    /// Index of the lowest grid point `kmin·step` in use. Points are anchored
    /// at zero, and nearest rounding of `[−r, r]` touches at most `alphabet`
    /// of them.
    fn offset(&self) -> f64 {
        (-self.radius / self.step - 0.5).ceil()
    }

    fn code_of(&self, x: f64) -> u32 {
        let k = (x / self.step - 0.5).ceil() - self.offset();
        k.clamp(0.0, (self.alphabet - 1) as f64) as u32
    }

    fn value_of(&self, code: u32) -> f64 {
        (code as f64 + self.offset()) * self.step
    }
}

fn check_radius(radius: f64) -> Result<()> {
    if radius >= 0.0 && radius.is_finite() {
        Ok(())
    } else {
        Err(invalid("codec radius must be non-negative and finite"))
    }
}

/// Accounting for one matrix encoding.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CodecReport {
    pub bits_used: u64,
    /// Largest realized entry error.
    pub max_entry_error: f64,
    /// Guaranteed bound on both the Frobenius and operator error.
    pub op_error_bound: f64,
    pub step: f64,
    /// `rows·cols·log2(3r/eps)` at the guaranteed error, or `None` when the
    /// formula is not positive there.
    pub net_bits_theoretical: Option<f64>,
}

/// Nearest-point, ties toward −∞, on a grid of spacing `2·eps/√(rows·cols)`.
pub fn matrix_uniform_encode(m: &DMatrix<f64>, r: f64, eps: f64) -> Result<(QuantizedMatrix, CodecReport)> {
    let grid = MatrixGrid::for_target(m.nrows(), m.ncols(), r, eps)?;
    encode_on_grid(m, &grid)
}

/// Encodes `m` on an explicit grid; `m` must lie in the operator-norm ball of
/// radius `grid.radius`.
pub fn encode_on_grid(m: &DMatrix<f64>, grid: &MatrixGrid) -> Result<(QuantizedMatrix, CodecReport)> {
    if m.nrows() != grid.rows || m.ncols() != grid.cols {
        return Err(Error::Shape("matrix does not match its grid".into()));
    }
    let norm = operator_norm(m)?;
    if norm > grid.radius * (1.0 + 1e-12) {
        return Err(Error::OutOfRange { value: norm, radius: grid.radius });
    }
    let codes: Vec<u32> = m.iter().map(|&x| grid.code_of(x)).collect();
    let max_entry_error = m
        .iter()
        .zip(&codes)
        .map(|(&x, &c)| (grid.value_of(c) - x).abs())
        .fold(0.0, f64::max);
    let q = QuantizedMatrix::new(grid.rows, grid.cols, grid.alphabet, codes)?;
    let bound = grid.error_bound();
    let report = CodecReport {
        bits_used: q.bits_used(),
        max_entry_error,
        op_error_bound: bound,
        step: grid.step,
        net_bits_theoretical: net_bits_theoretical(grid.rows, grid.cols, grid.radius, bound).ok(),
    };
    Ok((q, report))
}

pub fn matrix_uniform_decode(q: &QuantizedMatrix, grid: &MatrixGrid) -> Result<DMatrix<f64>> {
    if q.rows != grid.rows || q.cols != grid.cols || q.alphabet != grid.alphabet {
        return Err(Error::Malformed("quantized matrix does not match its grid".into()));
    }
    let values: Vec<f64> = q.codes.iter().map(|&c| grid.value_of(c)).collect();
    Ok(DMatrix::from_vec(q.rows, q.cols, values))
}

/// Size of an ε-net index for the operator-norm ball: `rows·cols·log2(3r/eps)`.
pub fn net_bits_theoretical(rows: usize, cols: usize, r: f64, eps: f64) -> Result<f64> {
    if !(eps > 0.0 && r > 0.0) || eps >= 3.0 * r {
        return Err(invalid(format!("need 0 < eps < 3r, got eps = {eps}, r = {r}")));
    }
    Ok((rows * cols) as f64 * (3.0 * r / eps).log2())
}

/// Log-cardinality lower bound of an `eps`-packing of the radius-`r`
/// operator-norm ball, under the operator or Frobenius distance.
pub fn packing_log_lower(rows: usize, cols: usize, r: f64, eps: f64, norm: Norm) -> Result<f64> {
    if !(eps > 0.0 && r > 0.0) {
        return Err(invalid("packing radius and eps must be positive"));
    }
    let ratio = match norm {
        Norm::Op => r / eps,
        Norm::Fr => r * (rows.min(cols) as f64).sqrt() / (14.0 * eps),
    };
    if !(ratio > 0.0 && ratio.is_finite()) {
        return Err(invalid("packing ratio must be positive and finite"));
    }
    Ok((rows * cols) as f64 * ratio.log2())
}

pub const FRAME_MAGIC: u16 = 0xDC3E;
pub const FRAME_VERSION: u8 = 1;
const KIND_ERROR: u8 = 0;
const KIND_PAYLOAD: u8 = 1;
const HEADER_LEN: usize = 6;
const SECTION_HEADER_LEN: usize = 20;

/// One message on the wire.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub agent_id: u16,
    pub body: FrameBody,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FrameBody {
    Error,
    Payload(Vec<QuantizedMatrix>),
}

impl Frame {
    /// Code bits only, excluding headers and padding.
    pub fn code_bits(&self) -> u64 {
        match &self.body {
            FrameBody::Error => 0,
            FrameBody::Payload(sections) => sections.iter().map(QuantizedMatrix::bits_used).sum(),
        }
    }
}

pub fn serialize_payload(frame: &Frame) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(HEADER_LEN);
    out.extend_from_slice(&FRAME_MAGIC.to_le_bytes());
    out.push(FRAME_VERSION);
    out.extend_from_slice(&frame.agent_id.to_le_bytes());
    match &frame.body {
        FrameBody::Error => out.push(KIND_ERROR),
        FrameBody::Payload(sections) => {
            out.push(KIND_PAYLOAD);
            let count = u8::try_from(sections.len())
                .map_err(|_| invalid("a frame holds at most 255 sections"))?;
            out.push(count);
            for s in sections {
                let rows = u32::try_from(s.rows).map_err(|_| invalid("rows exceed u32"))?;
                let cols = u32::try_from(s.cols).map_err(|_| invalid("cols exceed u32"))?;
                out.extend_from_slice(&rows.to_le_bytes());
                out.extend_from_slice(&cols.to_le_bytes());
                out.extend_from_slice(&s.alphabet.to_le_bytes());
                out.extend_from_slice(&s.bits_used().to_le_bytes());
                pack_codes(&s.codes, bits_per_symbol(s.alphabet), &mut out);
            }
        }
    }
    Ok(out)
}

pub fn deserialize_payload(bytes: &[u8]) -> Result<Frame> {
    let mut r = Reader { bytes, pos: 0 };
    if r.u16()? != FRAME_MAGIC {
        return Err(Error::Malformed("bad magic".into()));
    }
    let version = r.u8()?;
    if version != FRAME_VERSION {
        return Err(Error::Malformed(format!("unsupported version {version}")));
    }
    let agent_id = r.u16()?;
    let body = match r.u8()? {
        KIND_ERROR => FrameBody::Error,
        KIND_PAYLOAD => {
            let count = r.u8()?;
            let mut sections = Vec::with_capacity(count as usize);
            for _ in 0..count {
                let rows = r.u32()? as usize;
                let cols = r.u32()? as usize;
                let alphabet = r.u32()?;
                let bit_len = r.u64()?;
                let width = bits_per_symbol(alphabet);
                let entries = (rows as u64)
                    .checked_mul(cols as u64)
                    .ok_or_else(|| Error::Malformed("section too large".into()))?;
                if entries.checked_mul(width as u64) != Some(bit_len) {
                    return Err(Error::Malformed("bit length disagrees with section shape".into()));
                }
                let byte_len = usize::try_from(bit_len.div_ceil(8))
                    .map_err(|_| Error::Malformed("section too large".into()))?;
                let packed = r.take(byte_len)?;
                let codes = unpack_codes(packed, width, entries as usize)?;
                sections.push(QuantizedMatrix::new(rows, cols, alphabet, codes)?);
            }
            FrameBody::Payload(sections)
        }
        kind => return Err(Error::Malformed(format!("unknown frame kind {kind}"))),
    };
    if r.pos != bytes.len() {
        return Err(Error::Malformed("trailing bytes after frame".into()));
    }
    Ok(Frame { agent_id, body })
}

/// Size in bytes of the non-code overhead of a frame.
pub fn framing_bytes(frame: &Frame) -> usize {
    match &frame.body {
        FrameBody::Error => HEADER_LEN,
        FrameBody::Payload(sections) => {
            HEADER_LEN + 1 + sections.len() * SECTION_HEADER_LEN
        }
    }
}

fn pack_codes(codes: &[u32], width: u32, out: &mut Vec<u8>) {
    let mut acc: u64 = 0;
    let mut filled = 0u32;
    for &c in codes {
        acc = (acc << width) | c as u64;
        filled += width;
        while filled >= 8 {
            filled -= 8;
            out.push((acc >> filled) as u8);
        }
        acc &= (1u64 << filled) - 1;
    }
    if filled > 0 {
        out.push((acc << (8 - filled)) as u8);
    }
}

fn unpack_codes(packed: &[u8], width: u32, count: usize) -> Result<Vec<u32>> {
    let mut codes = Vec::with_capacity(count);
    let mut acc: u64 = 0;
    let mut filled = 0u32;
    let mut bytes = packed.iter();
    while codes.len() < count {
        while filled < width {
            let b = *bytes.next().ok_or_else(|| Error::Malformed("truncated code bits".into()))?;
            acc = (acc << 8) | b as u64;
            filled += 8;
        }
        filled -= width;
        codes.push((acc >> filled) as u32 & mask(width));
        acc &= (1u64 << filled) - 1;
    }
    if acc != 0 || bytes.next().is_some() {
        return Err(Error::Malformed("nonzero padding bits".into()));
    }
    Ok(codes)
}

fn mask(width: u32) -> u32 {
    if width >= 32 {
        u32::MAX
    } else {
        (1u32 << width) - 1
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Malformed("truncated frame".into()))?;
        let slice = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(slice)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn symbol_widths() {
        assert_eq!(bits_per_symbol(2), 1);
        assert_eq!(bits_per_symbol(3), 2);
        assert_eq!(bits_per_symbol(4), 2);
        assert_eq!(bits_per_symbol(12), 4);
        assert_eq!(bits_per_symbol(65537), 17);
        assert_eq!(bits_per_symbol(u32::MAX), 32);
    }

    #[test]
    fn dither_config_rounds_levels_up() {
        let cfg = ScalarDitherConfig::new(1.0, 0.3).unwrap();
        assert_eq!(cfg.levels(), 4);
        assert_abs_diff_eq!(cfg.radius(), 1.2, epsilon = 1e-15);
        assert_eq!(cfg.alphabet(), 9);
        let cfg = ScalarDitherConfig::from_levels(4.0, 16).unwrap();
        assert_abs_diff_eq!(cfg.step(), 0.25);
    }

    #[test]
    fn dither_on_grid_points_is_deterministic() {
        let cfg = ScalarDitherConfig::from_levels(2.0, 8).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            assert_eq!(dither_encode(0.0, &cfg, &mut rng).unwrap(), 8);
            assert_eq!(dither_encode(2.0, &cfg, &mut rng).unwrap(), 16);
            assert_eq!(dither_encode(-2.0, &cfg, &mut rng).unwrap(), 0);
        }
        assert_eq!(dither_decode(8, &cfg).unwrap(), 0.0);
        assert_eq!(dither_decode(0, &cfg).unwrap(), -2.0);
        assert_eq!(dither_decode(16, &cfg).unwrap(), 2.0);
        assert!(dither_decode(17, &cfg).is_err());
        assert!(dither_encode(2.0001, &cfg, &mut rng).is_err());
    }

    #[test]
    fn dither_round_up_frequency() {
        let cfg = ScalarDitherConfig::from_levels(1.0, 4).unwrap();
        let x = 0.25 * cfg.step();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let draws = 100_000;
        let ups = (0..draws)
            .filter(|_| dither_encode(x, &cfg, &mut rng).unwrap() == cfg.levels() + 1)
            .count();
        let freq = ups as f64 / draws as f64;
        assert!((freq - 0.25).abs() <= 3.0 * (0.25f64 * 0.75 / draws as f64).sqrt());
    }

    #[test]
    fn matrix_codec_bit_formula() {
        let m = DMatrix::from_element(1, 1, 0.37);
        let (q, report) = matrix_uniform_encode(&m, 1.0, 0.1).unwrap();
        assert_abs_diff_eq!(report.step, 0.2, epsilon = 1e-15);
        assert_eq!(q.alphabet(), 12);
        assert_eq!(q.bits_used(), 4);
        let grid = MatrixGrid::for_target(1, 1, 1.0, 0.1).unwrap();
        let back = matrix_uniform_decode(&q, &grid).unwrap();
        assert!((back[(0, 0)] - 0.37).abs() <= 0.1);
    }

    #[test]
    fn matrix_codec_zero_and_random() {
        let z = DMatrix::zeros(3, 2);
        let (q, _) = matrix_uniform_encode(&z, 1.0, 0.05).unwrap();
        let grid = MatrixGrid::for_target(3, 2, 1.0, 0.05).unwrap();
        let back = matrix_uniform_decode(&q, &grid).unwrap();
        assert_eq!(back, z);

        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let m = crate::model::random_contraction(4, 4, &mut rng) * 2.0;
        let (q, report) = matrix_uniform_encode(&m, 2.0, 0.05).unwrap();
        let grid = MatrixGrid::for_target(4, 4, 2.0, 0.05).unwrap();
        let back = matrix_uniform_decode(&q, &grid).unwrap();
        let err = operator_norm(&(&back - &m)).unwrap();
        assert!(err <= 0.05);
        assert!(err <= report.op_error_bound);
    }

    #[test]
    fn matrix_codec_ties_go_down() {
        let grid = MatrixGrid { rows: 1, cols: 1, radius: 1.0, step: 0.5, alphabet: 6 };
        assert_eq!(grid.value_of(grid.code_of(0.25)), 0.0);
        assert_eq!(grid.value_of(grid.code_of(0.26)), 0.5);
        assert_eq!(grid.value_of(grid.code_of(-0.25)), -0.5);
        assert_eq!(grid.value_of(grid.code_of(-1.0)), -1.0);
        assert_eq!(grid.value_of(grid.code_of(1.0)), 1.0);
    }

    #[test]
    fn matrix_codec_rejects_out_of_ball() {
        let m = DMatrix::from_element(1, 1, 1.5);
        assert!(matches!(matrix_uniform_encode(&m, 1.0, 0.1), Err(Error::OutOfRange { .. })));
    }

    #[test]
    fn budget_grid_fits_and_uses_the_budget() {
        let g = MatrixGrid::for_budget(2, 3, 11.0, 60).unwrap();
        assert_eq!(g.alphabet, 1024);
        assert_eq!(g.bits(), 60);
        assert_eq!((2.0 * g.radius / g.step).floor() as u32 + 2, g.alphabet);
        assert!(matches!(
            MatrixGrid::for_budget(2, 3, 11.0, 5),
            Err(Error::InsufficientBudget { .. })
        ));
        let g = MatrixGrid::for_budget(1, 1, 1.0, 1_000).unwrap();
        assert_eq!(bits_per_symbol(g.alphabet), 32);
    }

    #[test]
    fn target_grid_overflow_is_reported() {
        assert!(matches!(
            MatrixGrid::for_target(8, 8, 1.0, 1e-12),
            Err(Error::AlphabetOverflow(_))
        ));
    }

    #[test]
    fn net_bits_examples() {
        assert_abs_diff_eq!(net_bits_theoretical(1, 1, 1.0, 1.0).unwrap(), 3f64.log2());
        assert_abs_diff_eq!(net_bits_theoretical(2, 3, 1.0, 0.3).unwrap(), 6.0 * 10f64.log2(), epsilon = 1e-12);
        assert!(net_bits_theoretical(1, 1, 1.0, 3.0 * (1.0 - 1e-15)).unwrap() < 1e-12);
        assert!(net_bits_theoretical(1, 1, 1.0, 3.0).is_err());
    }

    #[test]
    fn packing_examples() {
        assert_abs_diff_eq!(packing_log_lower(2, 2, 1.0, 0.25, Norm::Op).unwrap(), 8.0);
        assert_abs_diff_eq!(packing_log_lower(3, 3, 14.0, 3f64.sqrt(), Norm::Fr).unwrap(), 0.0, epsilon = 1e-12);
        assert_eq!(packing_log_lower(1, 1, 0.5, 0.5, Norm::Op).unwrap(), 0.0);
        assert!(packing_log_lower(1, 1, 1.0, 0.0, Norm::Op).is_err());
    }

    #[test]
    fn error_frame_is_six_bytes() {
        let f = Frame { agent_id: 3, body: FrameBody::Error };
        let bytes = serialize_payload(&f).unwrap();
        assert_eq!(bytes, vec![0x3E, 0xDC, 1, 3, 0, 0]);
        assert_eq!(deserialize_payload(&bytes).unwrap(), f);
        assert_eq!(f.code_bits(), 0);
    }

    #[test]
    fn empty_payload_is_header_only() {
        let f = Frame { agent_id: 1, body: FrameBody::Payload(vec![]) };
        let bytes = serialize_payload(&f).unwrap();
        assert_eq!(bytes, vec![0x3E, 0xDC, 1, 1, 0, 1, 0]);
        assert_eq!(deserialize_payload(&bytes).unwrap(), f);
    }

    #[test]
    fn packing_is_msb_first() {
        let q = QuantizedMatrix::new(1, 3, 8, vec![1, 2, 7]).unwrap();
        let f = Frame { agent_id: 0, body: FrameBody::Payload(vec![q]) };
        let bytes = serialize_payload(&f).unwrap();
        // 001 010 111 + 7 zero bits of padding.
        assert_eq!(&bytes[bytes.len() - 2..], &[0b0010_1011, 0b1000_0000]);
        assert_eq!(u64::from_le_bytes(bytes[19..27].try_into().unwrap()), 9);
        assert_eq!(framing_bytes(&f) + 2, bytes.len());
    }

    #[test]
    fn malformed_frames_are_rejected() {
        let q = QuantizedMatrix::new(2, 2, 5, vec![0, 1, 4, 3]).unwrap();
        let f = Frame { agent_id: 9, body: FrameBody::Payload(vec![q]) };
        let bytes = serialize_payload(&f).unwrap();
        for cut in 0..bytes.len() {
            assert!(deserialize_payload(&bytes[..cut]).is_err());
        }
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(deserialize_payload(&extra).is_err());
        let mut bad_magic = bytes.clone();
        bad_magic[0] ^= 1;
        assert!(deserialize_payload(&bad_magic).is_err());
        let mut bad_code = bytes.clone();
        let last = bad_code.len() - 1;
        bad_code[last - 1] = 0xFF;
        assert!(deserialize_payload(&bad_code).is_err());
    }
}
