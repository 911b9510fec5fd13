//! Seeded compressed-sensing instances and the CSI1 on-disk format.
//!
//! A generated instance has a Gaussian sensing matrix with orthonormalized
//! rows, a ±1 spike signal `z`, observations `b = Az + noise`, and the
//! regularizer `η = α·‖Aᵗb‖_∞` computed from the noisy `b`.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, ensure_finite, DenseMatrix};
use crate::rng::SplitMix64;
use crate::scalar::Scalar;

pub const DEFAULT_ETA_ALPHA: f64 = 0.1;
pub const DEFAULT_NOISE_SIGMA2: f64 = 1e-4;
pub const DEFAULT_K_MULTIPLIER: f64 = 2.0;

const MAX_ATTEMPTS: usize = 4;
const RANK_TOL: f64 = 1e-10;

/// How the number of observations is chosen.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum KRule {
    Explicit(usize),
    /// `k = ⌈C·s·ln(n/s)⌉`.
    Multiplier(f64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub n: usize,
    pub s: usize,
    pub k_rule: KRule,
    pub eta_alpha: f64,
    pub noise_sigma2: f64,
    pub seed: u64,
    /// Rescale `b` to unit norm before `η` is derived from it.
    pub normalize_b: bool,
}

impl GeneratorConfig {
    pub fn new(n: usize, s: usize, seed: u64) -> Self {
        Self {
            n,
            s,
            k_rule: KRule::Multiplier(DEFAULT_K_MULTIPLIER),
            eta_alpha: DEFAULT_ETA_ALPHA,
            noise_sigma2: DEFAULT_NOISE_SIGMA2,
            seed,
            normalize_b: false,
        }
    }

    pub fn k(&self) -> usize {
        match self.k_rule {
            KRule::Explicit(k) => k,
            KRule::Multiplier(c) => {
                let raw = c * self.s as f64 * (self.n as f64 / self.s as f64).ln();
                if raw.is_finite() && raw > 0.0 {
                    raw.ceil() as usize
                } else {
                    0
                }
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.k();
        if self.s == 0 {
            return Err(Error::invalid("spike count s must be positive"));
        }
        if k > self.n {
            return Err(Error::invalid(format!(
                "k = {k} exceeds n = {}; rows cannot be orthonormal",
                self.n
            )));
        }
        if self.s >= k {
            return Err(Error::invalid(format!(
                "need s < k, got s = {} and k = {k}",
                self.s
            )));
        }
        if let KRule::Multiplier(c) = self.k_rule {
            if !(c.is_finite() && c > 0.0) {
                return Err(Error::invalid("k multiplier must be positive"));
            }
        }
        if !(self.eta_alpha > 0.0 && self.eta_alpha < 1.0) {
            return Err(Error::invalid("eta_alpha must lie in (0, 1)"));
        }
        if !(self.noise_sigma2.is_finite() && self.noise_sigma2 >= 0.0) {
            return Err(Error::invalid("noise variance must be finite and nonnegative"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Instance<T> {
    pub a: DenseMatrix<T>,
    pub b: Vec<T>,
    pub eta: T,
    pub eta_alpha: T,
    pub z_true: Option<Vec<T>>,
    /// Spike count of `z_true`, or 0 when unknown.
    pub s: usize,
    pub seed: u64,
}

impl<T: Scalar> Instance<T> {
    /// Assembles a hand-built instance. `eta_alpha` is recorded as
    /// `η / ‖Aᵗb‖_∞` (0 when `Aᵗb = 0`).
    pub fn new(a: DenseMatrix<T>, b: Vec<T>, eta: T, z_true: Option<Vec<T>>) -> Result<Self> {
        if b.len() != a.rows() {
            return Err(Error::dim(format!(
                "observation of length {} against {} rows",
                b.len(),
                a.rows()
            )));
        }
        ensure_finite(&b, "observation")?;
        if !(eta.is_finite() && eta > T::zero()) {
            return Err(Error::invalid("eta must be positive and finite"));
        }
        let s = match &z_true {
            Some(z) => {
                if z.len() != a.cols() {
                    return Err(Error::dim("ground truth length differs from column count"));
                }
                ensure_finite(z, "ground truth")?;
                linalg::support(z).len()
            }
            None => 0,
        };
        let atb_inf = linalg::norm_inf(&linalg::matvec_transpose(&a, &b)?);
        let eta_alpha = if atb_inf > T::zero() {
            eta / atb_inf
        } else {
            T::zero()
        };
        Ok(Self {
            a,
            b,
            eta,
            eta_alpha,
            z_true,
            s,
            seed: 0,
        })
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.a.cols()
    }

    #[inline]
    pub fn k(&self) -> usize {
        self.a.rows()
    }

    /// `Aᵗb`.
    pub fn atb(&self) -> Vec<T> {
        linalg::matvec_transpose(&self.a, &self.b).expect("instance dimensions are consistent")
    }

    pub fn objective(&self, x: &[T]) -> Result<T> {
        linalg::objective(&self.a, &self.b, self.eta, x)
    }

    pub fn cast<U: Scalar>(&self) -> Instance<U> {
        let c = |v: &Vec<T>| v.iter().map(|&e| U::lit(e.to_f64_lossy())).collect::<Vec<U>>();
        Instance {
            a: self.a.cast(),
            b: c(&self.b),
            eta: U::lit(self.eta.to_f64_lossy()),
            eta_alpha: U::lit(self.eta_alpha.to_f64_lossy()),
            z_true: self.z_true.as_ref().map(c),
            s: self.s,
            seed: self.seed,
        }
    }
}

/// Orthonormalizes the rows of a row-major `k×n` buffer in place with two
/// passes of modified Gram–Schmidt. Returns the first row that collapsed.
fn orthonormalize_rows(data: &mut [f64], k: usize, n: usize) -> std::result::Result<(), usize> {
    for i in 0..k {
        let (done, rest) = data.split_at_mut(i * n);
        let row = &mut rest[..n];
        let original = linalg::norm2(row);
        for _pass in 0..2 {
            for j in 0..i {
                let q = &done[j * n..(j + 1) * n];
                let r = linalg::dot(row, q);
                linalg::axpy(-r, q, row);
            }
        }
        let norm = linalg::norm2(row);
        if !(norm > RANK_TOL * original) || norm == 0.0 {
            return Err(i);
        }
        for v in row.iter_mut() {
            *v /= norm;
        }
    }
    Ok(())
}

fn stream_key(seed: u64, attempt: usize) -> u64 {
    if attempt == 0 {
        seed
    } else {
        seed ^ (attempt as u64).wrapping_mul(0xD1B5_4A32_D192_ED03)
    }
}

/// Draws an instance. The result is a pure function of `cfg`.
///
/// Stream order: `k·n` normals for `A` in row-major order, then `s` picks of a
/// partial Fisher–Yates shuffle of `0..n`, then one sign bit (top bit) per pick
/// in pick order, then `k` noise normals.
pub fn generate(cfg: &GeneratorConfig) -> Result<Instance<f64>> {
    cfg.validate()?;
    let (n, s, k) = (cfg.n, cfg.s, cfg.k());
    for attempt in 0..MAX_ATTEMPTS {
        let mut rng = SplitMix64::new(stream_key(cfg.seed, attempt));
        let mut rows: Vec<f64> = (0..k * n).map(|_| rng.next_normal()).collect();
        if orthonormalize_rows(&mut rows, k, n).is_err() {
            continue;
        }
        let a = DenseMatrix::from_row_major(k, n, &rows)?;

        let mut perm: Vec<usize> = (0..n).collect();
        for i in 0..s {
            let j = i + rng.below((n - i) as u64) as usize;
            perm.swap(i, j);
        }
        let mut z = vec![0.0; n];
        for &idx in &perm[..s] {
            z[idx] = if rng.next_u64() >> 63 == 1 { -1.0 } else { 1.0 };
        }

        let sigma = cfg.noise_sigma2.sqrt();
        let mut b = linalg::matvec(&a, &z)?;
        for bi in b.iter_mut() {
            *bi += sigma * rng.next_normal();
        }
        if cfg.normalize_b {
            let nb = linalg::norm2(&b);
            if nb > 0.0 {
                for bi in b.iter_mut() {
                    *bi /= nb;
                }
            }
        }
        let atb_inf = linalg::norm_inf(&linalg::matvec_transpose(&a, &b)?);
        let eta = cfg.eta_alpha * atb_inf;
        if !(eta > 0.0) {
            return Err(Error::invalid("generated observation has Aᵗb = 0"));
        }
        return Ok(Instance {
            a,
            b,
            eta,
            eta_alpha: cfg.eta_alpha,
            z_true: Some(z),
            s,
            seed: cfg.seed,
        });
    }
    Err(Error::RankDeficient {
        attempts: MAX_ATTEMPTS,
    })
}

pub const CSI_MAGIC: &[u8; 4] = b"CSI1";
pub const CSI_VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 8 * 3 + 8 + 8 + 8 + 1;

/// Serializes to the CSI1 byte layout (little-endian throughout).
pub fn encode_instance(inst: &Instance<f64>) -> Vec<u8> {
    let (k, n) = (inst.k(), inst.n());
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * (k * n + k + n));
    out.extend_from_slice(CSI_MAGIC);
    out.extend_from_slice(&CSI_VERSION.to_le_bytes());
    out.extend_from_slice(&(k as u64).to_le_bytes());
    out.extend_from_slice(&(n as u64).to_le_bytes());
    out.extend_from_slice(&(inst.s as u64).to_le_bytes());
    out.extend_from_slice(&inst.eta.to_le_bytes());
    out.extend_from_slice(&inst.eta_alpha.to_le_bytes());
    out.extend_from_slice(&inst.seed.to_le_bytes());
    out.push(u8::from(inst.z_true.is_some()));
    for v in inst.a.to_row_major() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for v in &inst.b {
        out.extend_from_slice(&v.to_le_bytes());
    }
    if let Some(z) = &inst.z_true {
        for v in z {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, len: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < len {
            return Err(Error::Format {
                offset: self.buf.len() as u64,
                reason: format!("truncated {what}"),
            });
        }
        let s = &self.buf[self.pos..self.pos + len];
        self.pos += len;
        Ok(s)
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn f64_array(&mut self, len: usize, what: &str) -> Result<Vec<f64>> {
        let start = self.pos;
        let bytes = self.take(len * 8, what)?;
        let mut out = Vec::with_capacity(len);
        for (i, chunk) in bytes.chunks_exact(8).enumerate() {
            let v = f64::from_le_bytes(chunk.try_into().unwrap());
            if !v.is_finite() {
                return Err(Error::Format {
                    offset: (start + 8 * i) as u64,
                    reason: format!("non-finite value in {what}"),
                });
            }
            out.push(v);
        }
        Ok(out)
    }
}

/// Parses CSI1 bytes. Never returns a partially filled instance.
pub fn decode_instance(buf: &[u8]) -> Result<Instance<f64>> {
    if buf.len() < HEADER_LEN {
        return Err(Error::Format {
            offset: buf.len() as u64,
            reason: "truncated header".into(),
        });
    }
    let mut cur = Cursor { buf, pos: 0 };
    if cur.take(4, "header")? != CSI_MAGIC {
        return Err(Error::Format {
            offset: 0,
            reason: "bad magic, expected CSI1".into(),
        });
    }
    let version = u32::from_le_bytes(cur.take(4, "header")?.try_into().unwrap());
    if version != CSI_VERSION {
        return Err(Error::Format {
            offset: 4,
            reason: format!("unsupported version {version}"),
        });
    }
    let k = cur.u64("header")?;
    let n = cur.u64("header")?;
    let s = cur.u64("header")?;
    let eta = cur.f64("header")?;
    let eta_alpha = cur.f64("header")?;
    let seed = cur.u64("header")?;
    let has_z = match cur.take(1, "header")?[0] {
        0 => false,
        1 => true,
        other => {
            return Err(Error::Format {
                offset: (HEADER_LEN - 1) as u64,
                reason: format!("has_z flag must be 0 or 1, found {other}"),
            })
        }
    };
    if !(eta.is_finite() && eta > 0.0) {
        return Err(Error::Format {
            offset: 32,
            reason: "eta must be positive and finite".into(),
        });
    }
    let payload = (k as u128) * (n as u128) + k as u128 + if has_z { n as u128 } else { 0 };
    let available = (buf.len() - HEADER_LEN) as u128;
    if payload * 8 > available {
        return Err(Error::Format {
            offset: buf.len() as u64,
            reason: "truncated payload".into(),
        });
    }
    let (k, n) = (k as usize, n as usize);
    let a_rows = cur.f64_array(k * n, "matrix")?;
    let b = cur.f64_array(k, "observation")?;
    let z_true = if has_z {
        Some(cur.f64_array(n, "ground truth")?)
    } else {
        None
    };
    if cur.pos != buf.len() {
        return Err(Error::Format {
            offset: cur.pos as u64,
            reason: "trailing bytes after payload".into(),
        });
    }
    Ok(Instance {
        a: DenseMatrix::from_row_major(k, n, &a_rows)?,
        b,
        eta,
        eta_alpha,
        z_true,
        s: s as usize,
        seed,
    })
}

pub fn write_instance(path: impl AsRef<Path>, inst: &Instance<f64>) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(&encode_instance(inst))?;
    Ok(())
}

pub fn read_instance(path: impl AsRef<Path>) -> Result<Instance<f64>> {
    decode_instance(&fs::read(path)?)
}

/// Solution vector: u64 LE length, then that many f64 LE values.
pub fn encode_solution(x: &[f64]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + 8 * x.len());
    out.extend_from_slice(&(x.len() as u64).to_le_bytes());
    for v in x {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_solution(buf: &[u8]) -> Result<Vec<f64>> {
    let mut cur = Cursor { buf, pos: 0 };
    let len = cur.u64("solution length")?;
    if (len as u128) * 8 != (buf.len() - 8) as u128 {
        return Err(Error::Format {
            offset: 8,
            reason: format!(
                "solution declares {len} values but carries {} bytes",
                buf.len() - 8
            ),
        });
    }
    cur.f64_array(len as usize, "solution")
}

pub fn write_solution(path: impl AsRef<Path>, x: &[f64]) -> Result<()> {
    fs::write(path, encode_solution(x))?;
    Ok(())
}

pub fn read_solution(path: impl AsRef<Path>) -> Result<Vec<f64>> {
    decode_solution(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg(seed: u64) -> GeneratorConfig {
        GeneratorConfig::new(200, 5, seed)
    }

    #[test]
    fn k_rule_examples() {
        let cfg = GeneratorConfig::new(1000, 10, 42);
        assert_eq!(cfg.k(), 93);
        assert_eq!(GeneratorConfig::new(2000, 20, 1).k(), 185);
        let mut e = cfg.clone();
        e.k_rule = KRule::Explicit(50);
        assert_eq!(e.k(), 50);
    }

    #[test]
    fn seed_42_signal_shape() {
        let inst = generate(&GeneratorConfig::new(1000, 10, 42)).unwrap();
        assert_eq!(inst.k(), 93);
        let z = inst.z_true.as_ref().unwrap();
        let nz: Vec<f64> = z.iter().copied().filter(|v| *v != 0.0).collect();
        assert_eq!(nz.len(), 10);
        assert!(nz.iter().all(|v| *v == 1.0 || *v == -1.0));
    }

    #[test]
    fn rows_are_orthonormal() {
        let inst = generate(&small_cfg(3)).unwrap();
        let (k, n) = (inst.k(), inst.n());
        let rm = inst.a.to_row_major();
        let mut worst = 0.0f64;
        for i in 0..k {
            for j in 0..k {
                let g: f64 = (0..n).map(|c| rm[i * n + c] * rm[j * n + c]).sum();
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((g - target).abs());
            }
        }
        assert!(worst <= 1e-10, "gram deviation {worst}");
    }

    #[test]
    fn eta_is_alpha_times_atb_inf() {
        let inst = generate(&small_cfg(9)).unwrap();
        let atb_inf = linalg::norm_inf(&inst.atb());
        assert_eq!(inst.eta, 0.1 * atb_inf);
        assert!(inst.eta < atb_inf);
    }

    #[test]
    fn normalize_b_gives_unit_observation() {
        let mut cfg = small_cfg(4);
        cfg.normalize_b = true;
        let inst = generate(&cfg).unwrap();
        assert!((linalg::norm2(&inst.b) - 1.0).abs() < 1e-14);
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate(&small_cfg(17)).unwrap();
        let b = generate(&small_cfg(17)).unwrap();
        assert_eq!(encode_instance(&a), encode_instance(&b));
        let c = generate(&small_cfg(18)).unwrap();
        assert_ne!(encode_instance(&a), encode_instance(&c));
    }

    #[test]
    fn rejects_invalid_configs() {
        let mut cfg = small_cfg(1);
        cfg.k_rule = KRule::Explicit(300);
        assert!(generate(&cfg).is_err());
        let mut cfg = small_cfg(1);
        cfg.k_rule = KRule::Explicit(5);
        assert!(generate(&cfg).is_err());
        let mut cfg = small_cfg(1);
        cfg.eta_alpha = 1.0;
        assert!(generate(&cfg).is_err());
        let mut cfg = small_cfg(1);
        cfg.noise_sigma2 = -1.0;
        assert!(generate(&cfg).is_err());
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let inst = generate(&GeneratorConfig::new(1000, 10, 42)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("i.csi");
        write_instance(&path, &inst).unwrap();
        let back = read_instance(&path).unwrap();
        assert_eq!(back.a.as_slice().len(), inst.a.as_slice().len());
        for (x, y) in back.a.as_slice().iter().zip(inst.a.as_slice()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
        assert_eq!(back, inst);
        assert_eq!(encode_instance(&back), encode_instance(&inst));
    }

    #[test]
    fn solution_files() {
        let x = [0.0, -1.5, f64::MIN_POSITIVE, 3e300];
        let bytes = encode_solution(&x);
        assert_eq!(bytes.len(), 8 + 32);
        assert_eq!(&bytes[..8], &4u64.to_le_bytes());
        assert_eq!(decode_solution(&bytes).unwrap(), x);
        assert!(decode_solution(&bytes[..20]).is_err());
        assert!(decode_solution(&bytes[..5]).is_err());
        let mut nan = bytes.clone();
        nan[8..16].copy_from_slice(&f64::NAN.to_le_bytes());
        assert!(matches!(decode_solution(&nan), Err(Error::Format { offset: 8, .. })));
        assert_eq!(decode_solution(&encode_solution(&[])).unwrap(), Vec::<f64>::new());
    }

    #[test]
    fn header_layout() {
        let inst = generate(&small_cfg(2)).unwrap();
        let bytes = encode_instance(&inst);
        assert_eq!(&bytes[..4], b"CSI1");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        assert_eq!(u64::from_le_bytes(bytes[8..16].try_into().unwrap()), inst.k() as u64);
        assert_eq!(u64::from_le_bytes(bytes[16..24].try_into().unwrap()), 200);
        assert_eq!(u64::from_le_bytes(bytes[24..32].try_into().unwrap()), 5);
        assert_eq!(f64::from_le_bytes(bytes[32..40].try_into().unwrap()), inst.eta);
        assert_eq!(f64::from_le_bytes(bytes[40..48].try_into().unwrap()), 0.1);
        assert_eq!(u64::from_le_bytes(bytes[48..56].try_into().unwrap()), 2);
        assert_eq!(bytes[56], 1);
        // First matrix entry is A[0][0], then A[0][1] (row-major).
        assert_eq!(f64::from_le_bytes(bytes[57..65].try_into().unwrap()), inst.a.get(0, 0));
        assert_eq!(f64::from_le_bytes(bytes[65..73].try_into().unwrap()), inst.a.get(0, 1));
        assert_eq!(bytes.len(), 57 + 8 * (inst.k() * 200 + inst.k() + 200));
    }

    #[test]
    fn empty_file_is_truncated_header() {
        let err = decode_instance(&[]).unwrap_err();
        match err {
            Error::Format { offset, reason } => {
                assert_eq!(offset, 0);
                assert_eq!(reason, "truncated header");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn wrong_magic_is_rejected() {
        let inst = generate(&small_cfg(2)).unwrap();
        let mut bytes = encode_instance(&inst);
        bytes[0] = b'X';
        assert!(matches!(
            decode_instance(&bytes),
            Err(Error::Format { offset: 0, .. })
        ));
    }

    #[test]
    fn version_mismatch_and_truncation() {
        let inst = generate(&small_cfg(2)).unwrap();
        let mut bytes = encode_instance(&inst);
        bytes[4] = 2;
        assert!(matches!(
            decode_instance(&bytes),
            Err(Error::Format { offset: 4, .. })
        ));
        let bytes = encode_instance(&inst);
        let cut = &bytes[..bytes.len() - 3];
        match decode_instance(cut).unwrap_err() {
            Error::Format { reason, .. } => assert_eq!(reason, "truncated payload"),
            other => panic!("unexpected {other:?}"),
        }
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(decode_instance(&extra).is_err());
    }

    #[test]
    fn hand_built_instance_records_alpha() {
        let a = DenseMatrix::from_col_major(1, 1, vec![1.0]).unwrap();
        let inst = Instance::new(a, vec![2.0], 0.5, None).unwrap();
        assert_eq!(inst.eta_alpha, 0.25);
        assert_eq!(inst.s, 0);
        let back = decode_instance(&encode_instance(&inst)).unwrap();
        assert_eq!(back, inst);
    }
}
