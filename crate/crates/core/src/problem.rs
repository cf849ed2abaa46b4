//! Seeded test problems: sensing matrices, ground truths and observations.
//!
//! Randomness comes from ChaCha20 seeded with a 64-bit seed. Every draw uses
//! its own stream, selected by [`Substream`], so trial `t` of grid point `p`
//! sees the same numbers however the trials are scheduled.

use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Result, ThError};
use crate::linalg::matrix_io;

/// What a stream is used for; the low 8 bits of the stream id.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum Purpose {
    Matrix = 1,
    Truth = 2,
    Noise = 3,
    Aux = 4,
}

/// Coordinates of an independent random stream.
///
/// The ChaCha stream id is `point << 40 | trial << 8 | purpose`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Substream {
    pub seed: u64,
    pub point: u16,
    pub trial: u32,
}

impl Substream {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            point: 0,
            trial: 0,
        }
    }

    pub fn at(seed: u64, point: u16, trial: u32) -> Self {
        Self { seed, point, trial }
    }

    pub fn rng(&self, purpose: Purpose) -> ChaCha20Rng {
        let mut rng = ChaCha20Rng::seed_from_u64(self.seed);
        rng.set_stream((self.point as u64) << 40 | (self.trial as u64) << 8 | purpose as u64);
        rng
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum MatrixKind {
    /// Rows from `N(0, (1 - r) I + r 11')`.
    Gaussian { r: f64 },
    /// Randomly sampled, oversampled cosine dictionary with factor `f`.
    Dct { f: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TruthKind {
    /// `s` standard-normal spikes at uniform positions.
    Sparse,
    /// Fourteen logistic-decay values at uniform positions.
    Decaying,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenSpec {
    pub kind: MatrixKind,
    pub m: usize,
    pub n: usize,
    pub s: usize,
    pub truth: TruthKind,
    pub sigma: f64,
    pub seed: u64,
}

impl GenSpec {
    pub fn validate(&self) -> Result<()> {
        if self.m == 0 || self.m >= self.n {
            return Err(ThError::InvalidParameter(format!(
                "need 0 < m < n, got m={} n={}",
                self.m, self.n
            )));
        }
        match self.kind {
            MatrixKind::Gaussian { r } if !(0.0..1.0).contains(&r) => {
                return Err(ThError::InvalidParameter(format!(
                    "r must lie in [0, 1), got {r}"
                )))
            }
            MatrixKind::Dct { f } if !(f > 0.0 && f.is_finite()) => {
                return Err(ThError::InvalidParameter(format!(
                    "F must be positive, got {f}"
                )))
            }
            _ => {}
        }
        if self.truth == TruthKind::Sparse && (self.s == 0 || self.s >= self.n) {
            return Err(ThError::InvalidParameter(format!(
                "sparsity must satisfy 1 <= s < n, got s={}",
                self.s
            )));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(ThError::InvalidParameter(format!(
                "sigma must be non-negative, got {}",
                self.sigma
            )));
        }
        Ok(())
    }
}

pub fn gen_gaussian(m: usize, n: usize, r: f64, rng: &mut impl Rng) -> Result<Array2<f64>> {
    if !(0.0..1.0).contains(&r) {
        return Err(ThError::InvalidParameter(format!(
            "r must lie in [0, 1), got {r}"
        )));
    }
    let (wz, wg) = ((1.0 - r).sqrt(), r.sqrt());
    let mut a = Array2::zeros((m, n));
    for mut row in a.rows_mut() {
        let g: f64 = rng.sample(StandardNormal);
        for v in row.iter_mut() {
            let z: f64 = rng.sample(StandardNormal);
            *v = wz * z + wg * g;
        }
    }
    Ok(a)
}

/// Column `i` (one-based) is `cos(2 pi i gamma / f) / sqrt(m)` with
/// `gamma ~ U[0, 1]^m` drawn once.
pub fn gen_dct(m: usize, n: usize, f: f64, rng: &mut impl Rng) -> Result<Array2<f64>> {
    if !(f > 0.0 && f.is_finite()) {
        return Err(ThError::InvalidParameter(format!(
            "F must be positive, got {f}"
        )));
    }
    let gamma: Vec<f64> = (0..m).map(|_| rng.random::<f64>()).collect();
    let scale = 1.0 / (m as f64).sqrt();
    Ok(Array2::from_shape_fn((m, n), |(j, i)| {
        scale * (2.0 * std::f64::consts::PI * (i + 1) as f64 * gamma[j] / f).cos()
    }))
}

pub fn gen_sparse_truth(n: usize, s: usize, rng: &mut impl Rng) -> Result<Array1<f64>> {
    if s == 0 || s >= n {
        return Err(ThError::InvalidParameter(format!(
            "sparsity must satisfy 1 <= s < n, got s={s} n={n}"
        )));
    }
    let support = rand::seq::index::sample(rng, n, s);
    let mut x = Array1::zeros(n);
    for i in support.iter() {
        // A draw of exactly zero would break the cardinality contract.
        x[i] = loop {
            let v: f64 = rng.sample(StandardNormal);
            if v != 0.0 {
                break v;
            }
        };
    }
    Ok(x)
}

/// `sqrt(200) / (1 + exp((i - 100) / 20))` for `i = 1, 16, ..., 196`.
pub fn decaying_values() -> Vec<f64> {
    (1..=200)
        .step_by(15)
        .map(|i| 200f64.sqrt() / (1.0 + ((i as f64 - 100.0) / 20.0).exp()))
        .collect()
}

pub fn gen_decaying_truth(n: usize, rng: &mut impl Rng) -> Result<Array1<f64>> {
    if n < 200 {
        return Err(ThError::InvalidParameter(format!(
            "decaying truth needs n >= 200, got {n}"
        )));
    }
    let values = decaying_values();
    let support = rand::seq::index::sample(rng, n, values.len());
    let mut x = Array1::zeros(n);
    for (i, v) in support.iter().zip(values) {
        x[i] = v;
    }
    Ok(x)
}

/// Noise level giving `10 log10(||A x||^2 / ||noise||^2) = snr_db` in
/// expectation.
pub fn sigma_for_snr(clean: &Array1<f64>, snr_db: f64) -> f64 {
    clean.dot(clean).sqrt() / (clean.len() as f64).sqrt() * 10f64.powf(-snr_db / 20.0)
}

/// Signal-to-noise ratio of an observation, in both orientations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Snr {
    /// `10 log10(||Ax||^2 / ||b - Ax||^2)`; larger means cleaner.
    pub signal_over_noise_db: f64,
    /// `10 log10(||b - Ax||^2 / ||Ax||^2)`, the reciprocal orientation.
    pub noise_over_signal_db: f64,
}

impl Snr {
    pub fn of(clean: &Array1<f64>, b: &Array1<f64>) -> Self {
        let noise = b - clean;
        let db = 10.0 * (clean.dot(clean) / noise.dot(&noise)).log10();
        Self {
            signal_over_noise_db: db,
            noise_over_signal_db: -db,
        }
    }
}

/// `b = A x + n` with `n ~ N(0, sigma^2 I)`.
pub fn observe(
    a: &Array2<f64>,
    truth: &Array1<f64>,
    sigma: f64,
    rng: &mut impl Rng,
) -> Result<Array1<f64>> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(ThError::InvalidParameter(format!(
            "sigma must be non-negative, got {sigma}"
        )));
    }
    if a.ncols() != truth.len() {
        return Err(ThError::DimensionMismatch(format!(
            "A has {} columns, truth has {} entries",
            a.ncols(),
            truth.len()
        )));
    }
    let clean = a.dot(truth);
    for _ in 0..8 {
        let mut b = clean.clone();
        if sigma > 0.0 {
            for v in b.iter_mut() {
                let e: f64 = rng.sample(StandardNormal);
                *v += sigma * e;
            }
        }
        if b.iter().any(|v| *v != 0.0) {
            return Ok(b);
        }
        if sigma == 0.0 {
            break;
        }
    }
    Err(ThError::ZeroVector("observation b is zero".into()))
}

/// A recovery instance. `truth` is absent for user-supplied data.
#[derive(Debug, Clone, PartialEq)]
pub struct Problem {
    pub a: Array2<f64>,
    pub b: Array1<f64>,
    pub truth: Option<Array1<f64>>,
    pub sigma: f64,
    pub spec: Option<GenSpec>,
}

impl Problem {
    pub fn new(a: Array2<f64>, b: Array1<f64>) -> Result<Self> {
        if a.nrows() != b.len() {
            return Err(ThError::DimensionMismatch(format!(
                "A has {} rows, b has {} entries",
                a.nrows(),
                b.len()
            )));
        }
        if b.iter().all(|v| *v == 0.0) {
            return Err(ThError::ZeroVector("observation b is zero".into()));
        }
        Ok(Self {
            a,
            b,
            truth: None,
            sigma: 0.0,
            spec: None,
        })
    }

    pub fn m(&self) -> usize {
        self.a.nrows()
    }

    pub fn n(&self) -> usize {
        self.a.ncols()
    }

    pub fn snr(&self) -> Option<Snr> {
        let truth = self.truth.as_ref()?;
        (self.sigma > 0.0).then(|| Snr::of(&self.a.dot(truth), &self.b))
    }
}

/// Builds the instance described by `spec` on the given substream.
pub fn generate_on(spec: &GenSpec, stream: Substream) -> Result<Problem> {
    spec.validate()?;
    let mut rng = stream.rng(Purpose::Matrix);
    let a = match spec.kind {
        MatrixKind::Gaussian { r } => gen_gaussian(spec.m, spec.n, r, &mut rng)?,
        MatrixKind::Dct { f } => gen_dct(spec.m, spec.n, f, &mut rng)?,
    };
    let mut rng = stream.rng(Purpose::Truth);
    let truth = match spec.truth {
        TruthKind::Sparse => gen_sparse_truth(spec.n, spec.s, &mut rng)?,
        TruthKind::Decaying => gen_decaying_truth(spec.n, &mut rng)?,
    };
    let b = observe(&a, &truth, spec.sigma, &mut stream.rng(Purpose::Noise))?;
    Ok(Problem {
        a,
        b,
        truth: Some(truth),
        sigma: spec.sigma,
        spec: Some(*spec),
    })
}

/// Like [`generate_on`], but the noise level is set from the clean
/// measurements so that the expected SNR is `snr_db`; `spec.sigma` is
/// ignored.
pub fn generate_at_snr(spec: &GenSpec, snr_db: f64, stream: Substream) -> Result<Problem> {
    if !snr_db.is_finite() {
        return Err(ThError::InvalidParameter(format!(
            "SNR must be finite, got {snr_db}"
        )));
    }
    let clean = generate_on(
        &GenSpec {
            sigma: 0.0,
            ..*spec
        },
        stream,
    )?;
    let truth = clean.truth.expect("generated problems carry their truth");
    let sigma = sigma_for_snr(&clean.a.dot(&truth), snr_db);
    let b = observe(&clean.a, &truth, sigma, &mut stream.rng(Purpose::Noise))?;
    Ok(Problem {
        a: clean.a,
        b,
        truth: Some(truth),
        sigma,
        spec: Some(GenSpec { sigma, ..*spec }),
    })
}

pub fn generate(spec: &GenSpec) -> Result<Problem> {
    generate_on(spec, Substream::new(spec.seed))
}

#[derive(Debug, Serialize, Deserialize)]
struct Sidecar {
    format: String,
    m: usize,
    n: usize,
    sigma: f64,
    spec: Option<GenSpec>,
    snr: Option<Snr>,
    b: Vec<f64>,
    truth: Option<Vec<f64>>,
    truth_support: Option<Vec<usize>>,
}

const SIDECAR_FORMAT: &str = "th-problem-v1";

/// Path of the JSON sidecar belonging to a matrix file (`p.bin` -> `p.json`).
pub fn sidecar_path(matrix_path: &Path) -> PathBuf {
    matrix_path.with_extension("json")
}

/// Writes `A` to `path` and everything else to the JSON sidecar.
pub fn save_problem(p: &Problem, path: &Path) -> Result<()> {
    matrix_io::save_binary(&p.a, path)?;
    let sidecar = Sidecar {
        format: SIDECAR_FORMAT.into(),
        m: p.m(),
        n: p.n(),
        sigma: p.sigma,
        spec: p.spec,
        snr: p.snr(),
        b: p.b.to_vec(),
        truth: p.truth.as_ref().map(|t| t.to_vec()),
        truth_support: p
            .truth
            .as_ref()
            .map(|t| (0..t.len()).filter(|&i| t[i] != 0.0).collect()),
    };
    std::fs::write(sidecar_path(path), serde_json::to_string_pretty(&sidecar)?)?;
    Ok(())
}

pub fn load_problem(path: &Path) -> Result<Problem> {
    let a = matrix_io::load_binary(path)?;
    let sidecar: Sidecar = serde_json::from_str(&std::fs::read_to_string(sidecar_path(path))?)?;
    if sidecar.format != SIDECAR_FORMAT {
        return Err(ThError::Format(format!(
            "unknown problem format {:?}",
            sidecar.format
        )));
    }
    if sidecar.m != a.nrows() || sidecar.n != a.ncols() {
        return Err(ThError::Format(
            "sidecar dimensions disagree with matrix file".into(),
        ));
    }
    let mut p = Problem::new(a, Array1::from(sidecar.b))?;
    if let Some(t) = sidecar.truth {
        if t.len() != p.n() {
            return Err(ThError::Format("truth length disagrees with matrix".into()));
        }
        p.truth = Some(Array1::from(t));
    }
    p.sigma = sidecar.sigma;
    p.spec = sidecar.spec;
    Ok(p)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(kind: MatrixKind) -> GenSpec {
        GenSpec {
            kind,
            m: 16,
            n: 48,
            s: 3,
            truth: TruthKind::Sparse,
            sigma: 0.0,
            seed: 11,
        }
    }

    #[test]
    fn determinism() {
        let s = spec(MatrixKind::Gaussian { r: 0.8 });
        assert_eq!(generate(&s).unwrap(), generate(&s).unwrap());
        let other = GenSpec { seed: 12, ..s };
        assert_ne!(generate(&s).unwrap().a, generate(&other).unwrap().a);
    }

    #[test]
    fn streams_are_distinct() {
        let s = Substream::at(5, 1, 2);
        let x: u64 = s.rng(Purpose::Matrix).random();
        let y: u64 = s.rng(Purpose::Truth).random();
        let z: u64 = Substream::at(5, 1, 3).rng(Purpose::Matrix).random();
        assert!(x != y && x != z);
    }

    #[test]
    fn noiseless_observation_is_exact() {
        let p = generate(&spec(MatrixKind::Dct { f: 5.0 })).unwrap();
        let t = p.truth.as_ref().unwrap();
        assert_eq!(p.b, p.a.dot(t));
        assert_eq!(t.iter().filter(|v| **v != 0.0).count(), 3);
        assert!(p.snr().is_none());
    }

    #[test]
    fn dct_bound_and_formula() {
        let mut rng = Substream::new(3).rng(Purpose::Matrix);
        let a = gen_dct(16, 40, 4.0, &mut rng).unwrap();
        let bound = 1.0 / 4.0;
        assert!(a.iter().all(|v| v.abs() <= bound));
        // Column 8 (one-based) with F = 4 is cos(4 pi gamma) / 4.
        let mut rng = Substream::new(3).rng(Purpose::Matrix);
        let gamma: Vec<f64> = (0..16).map(|_| rng.random::<f64>()).collect();
        for j in [0, 7, 15] {
            let expect = (2.0 * std::f64::consts::PI * 8.0 * gamma[j] / 4.0).cos() / 4.0;
            assert_eq!(a[(j, 7)], expect);
        }
    }

    #[test]
    fn decaying_formula() {
        let v = decaying_values();
        assert_eq!(v.len(), 14);
        assert!((v[0] - 14.042665680263678).abs() < 1e-12);
        assert!((v[13] - 0.11543618828634121).abs() < 1e-12);
        assert!((v[0] - 14.0432).abs() < 1e-3 && (v[13] - 0.1157).abs() < 1e-3);
        let mut rng = Substream::new(1).rng(Purpose::Truth);
        assert!(gen_decaying_truth(199, &mut rng).is_err());
        let x = gen_decaying_truth(1024, &mut rng).unwrap();
        assert_eq!(x.iter().filter(|v| **v != 0.0).count(), 14);
    }

    #[test]
    fn parameter_guards() {
        let mut rng = Substream::new(1).rng(Purpose::Matrix);
        assert!(gen_gaussian(4, 8, 1.0, &mut rng).is_err());
        assert!(gen_gaussian(4, 8, -0.1, &mut rng).is_err());
        assert!(gen_dct(4, 8, 0.0, &mut rng).is_err());
        assert!(gen_sparse_truth(8, 0, &mut rng).is_err());
        assert!(gen_sparse_truth(8, 8, &mut rng).is_err());
        let bad = GenSpec {
            m: 48,
            ..spec(MatrixKind::Gaussian { r: 0.1 })
        };
        assert!(generate(&bad).is_err());
    }

    #[test]
    fn zero_observation_rejected() {
        let a = Array2::zeros((3, 5));
        let mut rng = Substream::new(1).rng(Purpose::Noise);
        assert!(matches!(
            observe(&a, &Array1::ones(5), 0.0, &mut rng),
            Err(ThError::ZeroVector(_))
        ));
        assert!(Problem::new(a, Array1::zeros(3)).is_err());
    }

    #[test]
    fn snr_orientations() {
        let clean = Array1::from(vec![10.0, 0.0]);
        let b = Array1::from(vec![10.0, 1.0]);
        let snr = Snr::of(&clean, &b);
        assert!((snr.signal_over_noise_db - 20.0).abs() < 1e-12);
        assert!((snr.noise_over_signal_db + 20.0).abs() < 1e-12);
        let sigma = sigma_for_snr(&Array1::from(vec![3.0, 4.0]), 20.0);
        assert!((sigma - 5.0 / 2f64.sqrt() / 10.0).abs() < 1e-15);
    }

    #[test]
    fn save_and_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.bin");
        let p = generate(&GenSpec {
            sigma: 0.01,
            ..spec(MatrixKind::Gaussian { r: 0.5 })
        })
        .unwrap();
        save_problem(&p, &path).unwrap();
        assert_eq!(load_problem(&path).unwrap(), p);
    }

    #[test]
    fn snr_generation_shares_matrix_and_truth() {
        let s = GenSpec {
            m: 64,
            n: 128,
            ..spec(MatrixKind::Gaussian { r: 0.5 })
        };
        let stream = Substream::at(3, 2, 5);
        let clean = generate_on(&s, stream).unwrap();
        let noisy = generate_at_snr(&s, 30.0, stream).unwrap();
        assert_eq!(clean.a, noisy.a);
        assert_eq!(clean.truth, noisy.truth);
        let got = noisy.snr().unwrap().signal_over_noise_db;
        // One draw of 64 noise samples; the chi-square spread is about 1.5 dB.
        assert!((got - 30.0).abs() < 5.0, "{got}");
        assert!(generate_at_snr(&s, f64::INFINITY, stream).is_err());
    }
}
