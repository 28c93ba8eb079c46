//! Closed-form Hong–Ou–Mandel visibility between a heralded SPDC photon and a
//! weak coherent pulse: spectral distinguishability under Gaussian filters
//! and the multi-photon background.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Filter bandwidths for pump, idler and signal/WCP, in any common unit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterSpec {
    pub sigma_p: f64,
    pub sigma_1: f64,
    pub sigma_2: f64,
}

impl FilterSpec {
    pub fn new(sigma_p: f64, sigma_1: f64, sigma_2: f64) -> Result<Self> {
        let f = FilterSpec { sigma_p, sigma_1, sigma_2 };
        f.validate()?;
        Ok(f)
    }

    pub fn validate(&self) -> Result<()> {
        for (n, v) in [("sigma_p", self.sigma_p), ("sigma_1", self.sigma_1), ("sigma_2", self.sigma_2)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter(format!("{n} = {v} must be positive")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhotonNumbers {
    /// Mean pairs per pulse of the SPDC source.
    pub n1: f64,
    /// Mean photons per weak coherent pulse.
    pub n2: f64,
    /// HOM detection efficiency.
    pub eta: f64,
    /// Idler detection efficiency.
    pub eta_i: f64,
}

impl PhotonNumbers {
    pub fn validate(&self) -> Result<()> {
        if !(self.n1 >= 0.0 && self.n2 >= 0.0 && self.n1.is_finite() && self.n2.is_finite()) {
            return Err(Error::InvalidParameter("mean photon numbers must be non-negative".into()));
        }
        for (n, v) in [("eta", self.eta), ("eta_i", self.eta_i)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidParameter(format!("{n} = {v} is not a probability")));
            }
        }
        Ok(())
    }
}

/// A visibility value; `degenerate` marks the limits reached with no WCP
/// photons, where the rational expression is 0/0 or 0/positive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Visibility {
    pub value: f64,
    pub degenerate: bool,
}

pub fn spectral_visibility(f: &FilterSpec) -> Result<f64> {
    f.validate()?;
    let (p2, a2, b2) = (f.sigma_p.powi(2), f.sigma_1.powi(2), f.sigma_2.powi(2));
    let bracket = a2 / b2 * (p2 + a2) + a2 / p2 * (2.0 * b2 + a2) + p2 * b2 / a2 + 3.0 * b2;
    Ok(1.0 / (0.5 + bracket / (4.0 * (p2 + 2.0 * a2))).sqrt())
}

/// Multi-photon visibility from triple-coincidence counting. `reduced`
/// selects the form in which multi-pair emissions are suppressed by the
/// detector splitter tree.
pub fn multiphoton_visibility(p: &PhotonNumbers, reduced: bool) -> Result<Visibility> {
    p.validate()?;
    let (n1, n2) = (p.n1, p.n2);
    if n2 == 0.0 {
        let value = if n1 == 0.0 { 1.0 } else { 0.0 };
        return Ok(Visibility { value, degenerate: true });
    }
    let b = 2.0 - p.eta;
    let cross = n1 * (1.0 - p.eta_i / 2.0) * n2 * b;
    let (num, den) = if reduced {
        (2.0 * n2 + n2 * n2 / 2.0 * b + 2.0 * cross, 2.0 * n2 + 0.75 * n2 * n2 * b + 3.0 * cross + 4.0 * n1)
    } else {
        (4.0 * n2 + 2.0 * n2 * n2 * b + 8.0 * cross, 4.0 * n2 + 3.0 * n2 * n2 * b + 12.0 * cross + 8.0 * n1)
    };
    Ok(Visibility { value: num / den, degenerate: false })
}

/// Spectral and multi-photon effects combined by multiplication.
pub fn combined_visibility(f: &FilterSpec, p: &PhotonNumbers, reduced: bool) -> Result<Visibility> {
    let m = multiphoton_visibility(p, reduced)?;
    Ok(Visibility { value: spectral_visibility(f)? * m.value, degenerate: m.degenerate })
}

/// All visibility variants for one operating point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HomBreakdown {
    pub spectral: f64,
    pub multiphoton_full: f64,
    pub multiphoton_reduced: f64,
    pub combined_full: f64,
    pub combined_reduced: f64,
    pub degenerate: bool,
    /// How the spectral and multi-photon factors are composed.
    pub combination: &'static str,
}

pub fn breakdown(f: &FilterSpec, p: &PhotonNumbers) -> Result<HomBreakdown> {
    let spectral = spectral_visibility(f)?;
    let full = multiphoton_visibility(p, false)?;
    let red = multiphoton_visibility(p, true)?;
    Ok(HomBreakdown {
        spectral,
        multiphoton_full: full.value,
        multiphoton_reduced: red.value,
        combined_full: spectral * full.value,
        combined_reduced: spectral * red.value,
        degenerate: full.degenerate,
        combination: "product",
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn operating_point() -> PhotonNumbers {
        PhotonNumbers { n1: 0.0020, n2: 0.0645, eta: 0.105, eta_i: 0.08 }
    }

    #[test]
    fn spectral_examples() {
        let v = spectral_visibility(&FilterSpec::new(54.0, 27.0, 27.0).unwrap()).unwrap();
        assert!((v - 0.984).abs() < 1e-3, "{v}");
        let v = spectral_visibility(&FilterSpec::new(1.0, 1.0, 1.0).unwrap()).unwrap();
        assert!((v - 1.0 / 1.25f64.sqrt()).abs() < 1e-14);
        assert!(FilterSpec::new(0.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn spectral_is_scale_invariant() {
        let a = spectral_visibility(&FilterSpec::new(54.0, 27.0, 20.0).unwrap()).unwrap();
        let b = spectral_visibility(&FilterSpec::new(5.4, 2.7, 2.0).unwrap()).unwrap();
        assert!((a - b).abs() < 1e-14);
    }

    #[test]
    fn multiphoton_examples() {
        let r = multiphoton_visibility(&operating_point(), true).unwrap();
        assert!((r.value - 0.929).abs() < 1e-3, "{}", r.value);
        let f = multiphoton_visibility(&operating_point(), false).unwrap();
        assert!((f.value - 0.917).abs() < 1e-3, "{}", f.value);
        assert!(!r.degenerate);
    }

    #[test]
    fn single_photon_limit() {
        let p = PhotonNumbers { n1: 0.0, n2: 1e-9, ..operating_point() };
        assert!((multiphoton_visibility(&p, true).unwrap().value - 1.0).abs() < 1e-8);
        let p = PhotonNumbers { n1: 0.0, n2: 0.0, ..operating_point() };
        let v = multiphoton_visibility(&p, true).unwrap();
        assert_eq!((v.value, v.degenerate), (1.0, true));
        let p = PhotonNumbers { n1: 0.01, n2: 0.0, ..operating_point() };
        let v = multiphoton_visibility(&p, false).unwrap();
        assert_eq!((v.value, v.degenerate), (0.0, true));
    }

    #[test]
    fn combined_examples() {
        let f = FilterSpec::new(54.0, 27.0, 27.0).unwrap();
        let red = combined_visibility(&f, &operating_point(), true).unwrap().value;
        let full = combined_visibility(&f, &operating_point(), false).unwrap().value;
        assert!((red - 0.914).abs() < 1e-3, "{red}");
        assert!((full - 0.903).abs() < 1e-3, "{full}");
        assert!((red - 0.925).abs() < 0.015);
        let b = breakdown(&f, &operating_point()).unwrap();
        assert_eq!(b.combined_reduced, red);
        assert_eq!(b.combination, "product");
    }

    #[test]
    fn ideal_inputs_give_unit_visibility() {
        // Idler and signal filters much narrower than the pump, no multi-photon background.
        let f = FilterSpec::new(1.0, 1e-3, 1e-3).unwrap();
        let p = PhotonNumbers { n1: 0.0, n2: 1e-12, eta: 0.5, eta_i: 0.5 };
        let v = combined_visibility(&f, &p, true).unwrap().value;
        assert!(v > 0.999 && v <= 1.0 + 1e-12, "{v}");
    }
}
