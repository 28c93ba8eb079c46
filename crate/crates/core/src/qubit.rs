//! Single-qubit state algebra for equatorial polarization qubits.

use std::f64::consts::FRAC_PI_4;
use std::fmt;
use std::ops::{Add, Neg, Sub};

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// Algebraic tolerance for density-matrix invariants.
pub const STATE_TOL: f64 = 1e-12;

type C = Complex64;

/// Equatorial angle `k·π/4`, `k ∈ {0,…,7}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct Angle(u8);

impl Angle {
    pub const ZERO: Angle = Angle(0);

    pub fn new(k: u8) -> Result<Self> {
        if k < 8 {
            Ok(Angle(k))
        } else {
            Err(Error::InvalidParameter(format!("angle index {k} outside 0..8")))
        }
    }

    /// Reduces any integer multiple of π/4 into the 8-element set.
    pub fn wrapping(k: i64) -> Self {
        Angle(k.rem_euclid(8) as u8)
    }

    pub fn index(self) -> u8 {
        self.0
    }

    pub fn radians(self) -> f64 {
        f64::from(self.0) * FRAC_PI_4
    }

    pub fn all() -> impl Iterator<Item = Angle> {
        (0..8).map(Angle)
    }

    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        Angle(rng.random_range(0..8))
    }
}

impl TryFrom<u8> for Angle {
    type Error = Error;
    fn try_from(k: u8) -> Result<Self> {
        Angle::new(k)
    }
}

impl From<Angle> for u8 {
    fn from(a: Angle) -> u8 {
        a.0
    }
}

impl fmt::Display for Angle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}π/4", self.0)
    }
}

impl Add for Angle {
    type Output = Angle;
    fn add(self, rhs: Angle) -> Angle {
        Angle((self.0 + rhs.0) % 8)
    }
}

impl Sub for Angle {
    type Output = Angle;
    fn sub(self, rhs: Angle) -> Angle {
        Angle((self.0 + 8 - rhs.0) % 8)
    }
}

impl Neg for Angle {
    type Output = Angle;
    fn neg(self) -> Angle {
        Angle((8 - self.0) % 8)
    }
}

/// A 2×2 Hermitian, unit-trace, positive semidefinite matrix.
///
/// Values of this type always satisfy the invariants; the checked
/// constructors reject anything else.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DensityMatrix {
    m: [[C; 2]; 2],
}

impl DensityMatrix {
    pub fn new(m: [[C; 2]; 2]) -> Result<Self> {
        let rho = DensityMatrix { m };
        rho.validate()?;
        Ok(rho)
    }

    /// Builds from a matrix that is known to be a state up to rounding:
    /// re-hermitizes and renormalizes the trace.
    pub(crate) fn from_raw(m: [[C; 2]; 2]) -> Self {
        let off = (m[0][1] + m[1][0].conj()) * 0.5;
        let d0 = m[0][0].re;
        let d1 = m[1][1].re;
        let tr = d0 + d1;
        DensityMatrix { m: [[C::new(d0 / tr, 0.0), off / tr], [off.conj() / tr, C::new(d1 / tr, 0.0)]] }
    }

    pub fn maximally_mixed() -> Self {
        DensityMatrix { m: [[C::new(0.5, 0.0), C::new(0.0, 0.0)], [C::new(0.0, 0.0), C::new(0.5, 0.0)]] }
    }

    /// State `½(I + xX + yY + zZ)`; requires `|r| ≤ 1`.
    pub fn from_bloch(r: [f64; 3]) -> Result<Self> {
        let [x, y, z] = r;
        Self::new([
            [C::new((1.0 + z) / 2.0, 0.0), C::new(x / 2.0, -y / 2.0)],
            [C::new(x / 2.0, y / 2.0), C::new((1.0 - z) / 2.0, 0.0)],
        ])
    }

    pub fn bloch(&self) -> [f64; 3] {
        let m = &self.m;
        [2.0 * m[1][0].re, 2.0 * m[1][0].im, (m[0][0] - m[1][1]).re]
    }

    pub fn entries(&self) -> [[C; 2]; 2] {
        self.m
    }

    pub fn trace(&self) -> C {
        self.m[0][0] + self.m[1][1]
    }

    /// `Tr ρ²`.
    pub fn purity(&self) -> f64 {
        let m = &self.m;
        (m[0][0] * m[0][0] + m[0][1] * m[1][0] * 2.0 + m[1][1] * m[1][1]).re
    }

    pub fn eigenvalues(&self) -> [f64; 2] {
        let m = &self.m;
        let half_tr = (m[0][0].re + m[1][1].re) / 2.0;
        let half_diff = (m[0][0].re - m[1][1].re) / 2.0;
        let r = (half_diff * half_diff + m[0][1].norm_sqr()).sqrt();
        [half_tr - r, half_tr + r]
    }

    pub fn validate(&self) -> Result<()> {
        let m = &self.m;
        if m.iter().flatten().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
            return Err(Error::InvalidState("non-finite entry".into()));
        }
        let herm = (m[0][1] - m[1][0].conj()).norm().max(m[0][0].im.abs()).max(m[1][1].im.abs());
        if herm > STATE_TOL {
            return Err(Error::InvalidState(format!("not Hermitian (defect {herm:e})")));
        }
        let tr = self.trace();
        if (tr.re - 1.0).abs() > STATE_TOL {
            return Err(Error::InvalidState(format!("trace {} != 1", tr.re)));
        }
        let [lo, _] = self.eigenvalues();
        if lo < -STATE_TOL {
            return Err(Error::InvalidState(format!("negative eigenvalue {lo:e}")));
        }
        Ok(())
    }

    /// Row-major, real/imaginary interleaved: the canonical 8-number form.
    pub fn to_reals(&self) -> [f64; 8] {
        let m = &self.m;
        [m[0][0].re, m[0][0].im, m[0][1].re, m[0][1].im, m[1][0].re, m[1][0].im, m[1][1].re, m[1][1].im]
    }

    pub fn from_reals(v: &[f64]) -> Result<Self> {
        if v.len() != 8 {
            return Err(Error::InvalidState(format!("expected 8 reals, got {}", v.len())));
        }
        Self::new([[C::new(v[0], v[1]), C::new(v[2], v[3])], [C::new(v[4], v[5]), C::new(v[6], v[7])]])
    }

    /// Largest entry-wise modulus of `self − other`.
    pub fn max_abs_diff(&self, other: &DensityMatrix) -> f64 {
        let mut d: f64 = 0.0;
        for i in 0..2 {
            for j in 0..2 {
                d = d.max((self.m[i][j] - other.m[i][j]).norm());
            }
        }
        d
    }

    /// Uniform convex mixture; `None` for an empty slice.
    pub fn average(states: &[DensityMatrix]) -> Option<DensityMatrix> {
        if states.is_empty() {
            return None;
        }
        let w = 1.0 / states.len() as f64;
        let mut m = [[C::new(0.0, 0.0); 2]; 2];
        for s in states {
            for (row, src) in m.iter_mut().zip(&s.m) {
                for (x, y) in row.iter_mut().zip(src) {
                    *x += y * w;
                }
            }
        }
        Some(DensityMatrix::from_raw(m))
    }
}

impl Serialize for DensityMatrix {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_reals().serialize(s)
    }
}

impl<'de> Deserialize<'de> for DensityMatrix {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let v = Vec::<f64>::deserialize(d)?;
        DensityMatrix::from_reals(&v).map_err(serde::de::Error::custom)
    }
}

/// `|+_θ⟩⟨+_θ|` with `|+_θ⟩ = (|0⟩ + e^{iθ}|1⟩)/√2`.
pub fn plus_theta_state(angle: Angle) -> DensityMatrix {
    let phase = C::from_polar(0.5, angle.radians());
    DensityMatrix { m: [[C::new(0.5, 0.0), phase.conj()], [phase, C::new(0.5, 0.0)]] }
}

/// `⟨+_θ|ρ|+_θ⟩`.
pub fn fidelity(rho: &DensityMatrix, angle: Angle) -> f64 {
    let m = &rho.m;
    let e = C::from_polar(1.0, angle.radians());
    let f = 0.5 * (m[0][0] + m[1][1] + e * m[0][1] + e.conj() * m[1][0]).re;
    f.clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseModel {
    /// `(1−p)ρ + p·I/2`
    Depolarizing,
    /// `(1−p)ρ + p·ZρZ`
    Dephasing,
}

pub fn apply_noise(rho: &DensityMatrix, model: NoiseModel, strength: f64) -> Result<DensityMatrix> {
    if !(0.0..=1.0).contains(&strength) {
        return Err(Error::InvalidParameter(format!("noise strength {strength} outside [0, 1]")));
    }
    let m = &rho.m;
    let p = strength;
    let out = match model {
        NoiseModel::Depolarizing => {
            [[m[0][0] * (1.0 - p) + 0.5 * p, m[0][1] * (1.0 - p)], [m[1][0] * (1.0 - p), m[1][1] * (1.0 - p) + 0.5 * p]]
        }
        // ZρZ flips the sign of the coherences only.
        NoiseModel::Dephasing => [[m[0][0], m[0][1] * (1.0 - 2.0 * p)], [m[1][0] * (1.0 - 2.0 * p), m[1][1]]],
    };
    Ok(DensityMatrix::from_raw(out))
}

/// Outcome counts for one Pauli basis. `plus` is the +1 eigenvalue outcome.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BasisCounts {
    pub plus: f64,
    pub minus: f64,
}

impl BasisCounts {
    pub fn total(&self) -> f64 {
        self.plus + self.minus
    }

    fn expectation(&self) -> f64 {
        (self.plus - self.minus) / self.total()
    }
}

/// Detection counts for the X, Y and Z measurement bases.
///
/// Counts are real-valued so that exact expectation values can be fed
/// through the same estimator as finite data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TomographyCounts {
    pub x: BasisCounts,
    pub y: BasisCounts,
    pub z: BasisCounts,
}

impl TomographyCounts {
    pub fn new(x: (f64, f64), y: (f64, f64), z: (f64, f64)) -> Result<Self> {
        let c = TomographyCounts {
            x: BasisCounts { plus: x.0, minus: x.1 },
            y: BasisCounts { plus: y.0, minus: y.1 },
            z: BasisCounts { plus: z.0, minus: z.1 },
        };
        c.validate()?;
        Ok(c)
    }

    fn bases(&self) -> [(char, &BasisCounts); 3] {
        [('X', &self.x), ('Y', &self.y), ('Z', &self.z)]
    }

    pub fn validate(&self) -> Result<()> {
        for (name, b) in self.bases() {
            if !(b.plus >= 0.0 && b.minus >= 0.0) || !b.total().is_finite() {
                return Err(Error::InvalidParameter(format!("basis {name} counts must be finite and non-negative")));
            }
            if b.total() == 0.0 {
                return Err(Error::EmptyBasis(name));
            }
        }
        Ok(())
    }

    /// Expected counts for `shots` measurements per basis.
    pub fn expected(rho: &DensityMatrix, shots: f64) -> Self {
        let r = rho.bloch();
        let basis = |v: f64| BasisCounts { plus: shots * (1.0 + v) / 2.0, minus: shots * (1.0 - v) / 2.0 };
        TomographyCounts { x: basis(r[0]), y: basis(r[1]), z: basis(r[2]) }
    }

    /// Independent Poisson draws around `expected(rho, shots)`.
    pub fn sample<R: Rng + ?Sized>(rho: &DensityMatrix, shots: f64, rng: &mut R) -> Self {
        Self::expected(rho, shots).resample(rng)
    }

    fn resample<R: Rng + ?Sized>(&self, rng: &mut R) -> Self {
        let draw = |mean: f64, rng: &mut R| -> f64 {
            if mean <= 0.0 {
                0.0
            } else {
                Poisson::new(mean).map(|d| d.sample(rng)).unwrap_or(0.0)
            }
        };
        let mut b = |c: &BasisCounts| BasisCounts { plus: draw(c.plus, rng), minus: draw(c.minus, rng) };
        TomographyCounts { x: b(&self.x), y: b(&self.y), z: b(&self.z) }
    }
}

/// Linear inversion from Pauli expectations, followed by the Frobenius-nearest
/// physical state. For a qubit that projection is radial shrinkage of the
/// Bloch vector onto the unit ball.
pub fn tomography_reconstruct(counts: &TomographyCounts) -> Result<DensityMatrix> {
    counts.validate()?;
    Ok(reconstruct_unchecked(counts))
}

fn reconstruct_unchecked(counts: &TomographyCounts) -> DensityMatrix {
    let expect = |b: &BasisCounts| if b.total() > 0.0 { b.expectation() } else { 0.0 };
    let mut r = [expect(&counts.x), expect(&counts.y), expect(&counts.z)];
    let norm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > 1.0 {
        r.iter_mut().for_each(|v| *v /= norm);
    }
    let [x, y, z] = r;
    DensityMatrix::from_raw([
        [C::new((1.0 + z) / 2.0, 0.0), C::new(x / 2.0, -y / 2.0)],
        [C::new(x / 2.0, y / 2.0), C::new((1.0 - z) / 2.0, 0.0)],
    ])
}

/// Monte Carlo error bar on the reconstructed fidelity: every count is
/// redrawn from a Poisson distribution with its observed value as mean.
/// Returns the sample mean and sample standard deviation.
pub fn fidelity_uncertainty(counts: &TomographyCounts, angle: Angle, trials: usize, seed: u64) -> Result<(f64, f64)> {
    counts.validate()?;
    if trials < 100 {
        return Err(Error::InvalidParameter(format!("need at least 100 trials, got {trials}")));
    }
    let mut rng = rng::substream(seed, "tomography.resample", 0);
    let samples: Vec<f64> = (0..trials)
        .map(|_| {
            // A resampled basis that comes back empty carries no information; it
            // contributes a zero expectation instead of failing the whole trial.
            let rho = reconstruct_unchecked(&counts.resample(&mut rng));
            fidelity(&rho, angle)
        })
        .collect();
    Ok(mean_std(&samples))
}

/// Sample mean and (n−1)-normalized standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> C {
        C::new(re, im)
    }

    fn assert_matrix(rho: &DensityMatrix, expect: [[C; 2]; 2], tol: f64) {
        let e = DensityMatrix { m: expect };
        assert!(rho.max_abs_diff(&e) < tol, "{rho:?} vs {expect:?}");
    }

    #[test]
    fn plus_states_match_outer_products() {
        assert_matrix(&plus_theta_state(Angle(0)), [[c(0.5, 0.), c(0.5, 0.)], [c(0.5, 0.), c(0.5, 0.)]], 1e-15);
        assert_matrix(&plus_theta_state(Angle(4)), [[c(0.5, 0.), c(-0.5, 0.)], [c(-0.5, 0.), c(0.5, 0.)]], 1e-15);
        // (|0⟩ + i|1⟩)/√2 ⊗ conj
        assert_matrix(&plus_theta_state(Angle(2)), [[c(0.5, 0.), c(0., -0.5)], [c(0., 0.5), c(0.5, 0.)]], 1e-15);
        for a in Angle::all() {
            let rho = plus_theta_state(a);
            rho.validate().unwrap();
            assert!((rho.purity() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn fidelity_examples() {
        let plus = plus_theta_state(Angle(0));
        assert!((fidelity(&plus, Angle(0)) - 1.0).abs() < 1e-15);
        assert!(fidelity(&plus, Angle(4)).abs() < 1e-15);
        for a in Angle::all() {
            assert!((fidelity(&DensityMatrix::maximally_mixed(), a) - 0.5).abs() < 1e-15);
        }
    }

    #[test]
    fn fidelity_between_equatorial_states_is_cos_squared() {
        for a in Angle::all() {
            for b in Angle::all() {
                let d = f64::from(a.index()) - f64::from(b.index());
                let expect = (d * std::f64::consts::PI / 8.0).cos().powi(2);
                assert!((fidelity(&plus_theta_state(a), b) - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn uniform_equatorial_mixture_is_maximally_mixed() {
        let states: Vec<_> = Angle::all().map(plus_theta_state).collect();
        let avg = DensityMatrix::average(&states).unwrap();
        assert!(avg.max_abs_diff(&DensityMatrix::maximally_mixed()) < 1e-12);
    }

    #[test]
    fn angle_arithmetic_wraps() {
        assert_eq!(Angle(5) + Angle(6), Angle(3));
        assert_eq!(Angle(1) - Angle(2), Angle(7));
        assert_eq!(-Angle(3), Angle(5));
        assert_eq!(-Angle(0), Angle(0));
        assert_eq!(Angle::wrapping(-1), Angle(7));
        assert!(Angle::new(8).is_err());
    }

    #[test]
    fn invalid_matrices_are_rejected() {
        let not_herm = [[c(0.5, 0.), c(0.5, 0.)], [c(0.1, 0.), c(0.5, 0.)]];
        assert!(DensityMatrix::new(not_herm).is_err());
        let bad_trace = [[c(0.6, 0.), c(0., 0.)], [c(0., 0.), c(0.5, 0.)]];
        assert!(DensityMatrix::new(bad_trace).is_err());
        let negative = [[c(0.5, 0.), c(0.8, 0.)], [c(0.8, 0.), c(0.5, 0.)]];
        assert!(DensityMatrix::new(negative).is_err());
        assert!(DensityMatrix::from_reals(&[0.5, 0., 0., 0., 0., 0., 0.5]).is_err());
    }

    #[test]
    fn noise_channels() {
        let plus = plus_theta_state(Angle(0));
        assert_eq!(apply_noise(&plus, NoiseModel::Depolarizing, 0.0).unwrap(), plus);
        assert_eq!(apply_noise(&plus, NoiseModel::Dephasing, 0.0).unwrap(), plus);
        let mixed = apply_noise(&plus, NoiseModel::Depolarizing, 1.0).unwrap();
        assert!(mixed.max_abs_diff(&DensityMatrix::maximally_mixed()) < 1e-15);
        // Direct evaluation: ZρZ = |−⟩⟨−|, so (1−p)|+⟩⟨+| + p|−⟩⟨−| has ⟨+|·|+⟩ = 1−p.
        let deph = apply_noise(&plus, NoiseModel::Dephasing, 0.1).unwrap();
        assert!((fidelity(&deph, Angle(0)) - 0.9).abs() < 1e-12);
        assert!(apply_noise(&plus, NoiseModel::Depolarizing, 1.5).is_err());
        assert!(apply_noise(&plus, NoiseModel::Dephasing, -0.1).is_err());
    }

    #[test]
    fn reconstruct_ideal_counts() {
        let zero = TomographyCounts::new((50., 50.), (50., 50.), (100., 0.)).unwrap();
        assert_matrix(&tomography_reconstruct(&zero).unwrap(), [[c(1., 0.), c(0., 0.)], [c(0., 0.), c(0., 0.)]], 1e-15);
        let plus = TomographyCounts::new((100., 0.), (50., 50.), (50., 50.)).unwrap();
        assert_matrix(
            &tomography_reconstruct(&plus).unwrap(),
            [[c(0.5, 0.), c(0.5, 0.)], [c(0.5, 0.), c(0.5, 0.)]],
            1e-15,
        );
    }

    #[test]
    fn empty_basis_is_rejected() {
        let err = TomographyCounts::new((10., 0.), (0., 0.), (5., 5.)).unwrap_err();
        assert_eq!(err, Error::EmptyBasis('Y'));
        let c = TomographyCounts {
            x: BasisCounts { plus: 1., minus: 1. },
            y: BasisCounts { plus: 1., minus: 1. },
            z: BasisCounts { plus: 0., minus: 0. },
        };
        assert!(tomography_reconstruct(&c).is_err());
        assert!(fidelity_uncertainty(&c, Angle(0), 200, 1).is_err());
    }

    #[test]
    fn sampled_plus_state_reconstructs_with_high_fidelity() {
        let plus = plus_theta_state(Angle(0));
        let good = (0..200u64)
            .filter(|&s| {
                let mut r = rng::substream(s, "test.tomo", 0);
                let counts = TomographyCounts::sample(&plus, 1e4, &mut r);
                fidelity(&tomography_reconstruct(&counts).unwrap(), Angle(0)) >= 0.99
            })
            .count();
        assert!(good as f64 >= 0.95 * 200.0, "only {good}/200 seeds reached 0.99");
    }

    #[test]
    fn fidelity_uncertainty_scales_like_poisson() {
        let rho = DensityMatrix::from_bloch([0.7, 0.2, 0.1]).unwrap();
        let small = TomographyCounts::expected(&rho, 1e3);
        let large = TomographyCounts::expected(&rho, 1e5);
        let (m1, s1) = fidelity_uncertainty(&small, Angle(0), 4000, 11).unwrap();
        let (m2, s2) = fidelity_uncertainty(&large, Angle(0), 4000, 11).unwrap();
        let ratio = s1 / s2;
        assert!((8.5..11.5).contains(&ratio), "std ratio {ratio}");
        assert!((m1 - 0.85).abs() < 0.01 && (m2 - 0.85).abs() < 0.001);
        assert_eq!(
            fidelity_uncertainty(&small, Angle(0), 500, 5).unwrap(),
            fidelity_uncertainty(&small, Angle(0), 500, 5).unwrap()
        );
        assert!(fidelity_uncertainty(&small, Angle(0), 99, 5).is_err());
    }

    #[test]
    fn uncertainty_vanishes_for_huge_counts() {
        let rho = DensityMatrix::from_bloch([0.5, 0.1, 0.2]).unwrap();
        let (_, s) = fidelity_uncertainty(&TomographyCounts::expected(&rho, 1e12), Angle(1), 200, 3).unwrap();
        assert!(s < 1e-5);
    }

    #[test]
    fn serde_uses_eight_reals() {
        let rho = plus_theta_state(Angle(1));
        let s = serde_json::to_string(&rho).unwrap();
        let back: DensityMatrix = serde_json::from_str(&s).unwrap();
        assert_eq!(back, rho);
        assert_eq!(serde_json::to_value(rho).unwrap().as_array().unwrap().len(), 8);
        assert!(serde_json::from_str::<Angle>("9").is_err());
    }
}
