//! Run configuration: JSON schema, validation and the bundled examples.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::curve::CurveModel;
use crate::error::{Error, Result};
use crate::isomon::{ScanLine, ScanParameter};
use crate::rh::NormalizationPoint;
use crate::theta::ThetaCharacteristic;
use crate::{C64, CVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Build `Psi`, its monodromy, residues and tau.
    Solve,
    /// `solve` plus the deformation, Thomae, Fay and Rauch suites.
    Verify,
    /// Malgrange scan along a characteristic line.
    Scan,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CurveType {
    Hyperelliptic,
    Cyclic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CurveSpec {
    #[serde(rename = "type")]
    pub kind: CurveType,
    pub points: Vec<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub degree: Option<usize>,
}

/// A real number or an `[re, im]` pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Number {
    Real(f64),
    Complex([f64; 2]),
}

impl Number {
    pub fn value(self) -> C64 {
        match self {
            Number::Real(x) => C64::new(x, 0.0),
            Number::Complex([re, im]) => C64::new(re, im),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CharacteristicSpec {
    pub p: Vec<Number>,
    pub q: Vec<Number>,
}

/// `"inf"` or a finite point `[re, im]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Lambda0Spec {
    Named(String),
    Point([f64; 2]),
}

impl Default for Lambda0Spec {
    fn default() -> Self {
        Lambda0Spec::Named("inf".into())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    /// Target for the period quadrature, also the bound on its error estimate.
    pub quadrature: f64,
    /// Bound on the theta truncation error at the origin.
    pub theta: f64,
    /// `|Theta[p;q](0)|` at or below this is treated as on the divisor.
    pub divisor: f64,
    /// Bound for checks that rely on finite differences or quadrature of `Psi`.
    pub residual: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            quadrature: 1e-12,
            theta: 1e-12,
            divisor: 1e-10,
            residual: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub mode: Mode,
    pub curve: CurveSpec,
    pub characteristic: CharacteristicSpec,
    #[serde(default)]
    pub lambda0: Lambda0Spec,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scan: Option<ScanLine>,
    #[serde(default)]
    pub seed: u64,
}

/// A validated configuration turned into solver inputs.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub curve: CurveModel,
    pub characteristic: ThetaCharacteristic,
    pub lambda0: NormalizationPoint,
}

fn pair(p: [f64; 2]) -> C64 {
    C64::new(p[0], p[1])
}

impl RunConfig {
    /// Parses JSON; errors name the offending key path.
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let inner = e.into_inner();
            if path == "." {
                Error::Config(inner.to_string())
            } else {
                Error::Config(format!("{path}: {inner}"))
            }
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Checks every invariant and builds the curve, characteristic and `lambda_0`.
    pub fn prepare(&self) -> Result<Prepared> {
        let t = &self.tolerances;
        for (key, v) in [
            ("quadrature", t.quadrature),
            ("theta", t.theta),
            ("divisor", t.divisor),
            ("residual", t.residual),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("tolerances.{key}: must be positive, got {v}")));
            }
        }
        if self.curve.points.iter().flatten().any(|x| !x.is_finite()) {
            return Err(Error::Config("curve.points: coordinates must be finite".into()));
        }
        if let Lambda0Spec::Point(p) = self.lambda0 {
            if p.iter().any(|x| !x.is_finite()) {
                return Err(Error::Config("lambda0: coordinates must be finite".into()));
            }
        }
        let pts: Vec<C64> = self.curve.points.iter().copied().map(pair).collect();
        let curve = match (self.curve.kind, self.curve.degree) {
            (CurveType::Hyperelliptic, None | Some(2)) => CurveModel::hyperelliptic(&pts)?,
            (CurveType::Hyperelliptic, Some(d)) => {
                return Err(Error::Config(format!("curve.degree: hyperelliptic curves have degree 2, got {d}")));
            }
            (CurveType::Cyclic, Some(d)) if d >= 2 => CurveModel::cyclic(&pts, d)?,
            (CurveType::Cyclic, Some(d)) => {
                return Err(Error::Config(format!("curve.degree: must be at least 2, got {d}")));
            }
            (CurveType::Cyclic, None) => return Err(Error::Config("curve.degree: required for cyclic curves".into())),
        };
        let g = curve.genus();
        let ch = &self.characteristic;
        for (key, v) in [("p", &ch.p), ("q", &ch.q)] {
            if v.len() != g {
                return Err(Error::DimensionMismatch(format!(
                    "characteristic.{key} has length {} but the curve has genus {g}",
                    v.len()
                )));
            }
        }
        let vec = |v: &[Number]| CVector::from_iterator(g, v.iter().map(|x| x.value()));
        let characteristic = ThetaCharacteristic::new(vec(&ch.p), vec(&ch.q));
        let lambda0 = match &self.lambda0 {
            Lambda0Spec::Named(s) if s == "inf" => NormalizationPoint::Infinity,
            Lambda0Spec::Named(s) => {
                return Err(Error::Config(format!("lambda0: expected \"inf\" or [re, im], got \"{s}\"")));
            }
            Lambda0Spec::Point(p) => NormalizationPoint::Finite(pair(*p)),
        };
        match (&self.scan, self.mode) {
            (None, Mode::Scan) => return Err(Error::Config("scan: required in scan mode".into())),
            (Some(s), _) => {
                if !(s.from < s.to) {
                    return Err(Error::Config(format!("scan.from: must be below scan.to ({} >= {})", s.from, s.to)));
                }
                if s.samples < 3 {
                    return Err(Error::Config(format!("scan.samples: at least 3 required, got {}", s.samples)));
                }
                if s.index >= g {
                    return Err(Error::DimensionMismatch(format!("scan.index {} for genus {g}", s.index)));
                }
            }
            _ => {}
        }
        Ok(Prepared {
            curve,
            characteristic,
            lambda0,
        })
    }
}

fn real(v: &[f64]) -> Vec<Number> {
    v.iter().map(|&x| Number::Real(x)).collect()
}

fn on_axis(v: &[f64]) -> Vec<[f64; 2]> {
    v.iter().map(|&x| [x, 0.0]).collect()
}

/// The bundled example configurations with their file names.
pub fn examples() -> Vec<(&'static str, RunConfig)> {
    let legendre = RunConfig {
        mode: Mode::Verify,
        curve: CurveSpec {
            kind: CurveType::Hyperelliptic,
            points: on_axis(&[-2.0, -1.0, 1.0, 2.0]),
            degree: None,
        },
        characteristic: CharacteristicSpec {
            p: real(&[0.1]),
            q: real(&[0.1]),
        },
        lambda0: Lambda0Spec::default(),
        tolerances: Tolerances::default(),
        scan: None,
        seed: 1,
    };
    let genus2 = RunConfig {
        curve: CurveSpec {
            kind: CurveType::Hyperelliptic,
            points: on_axis(&[-3.0, -2.0, -0.5, 0.5, 2.0, 3.0]),
            degree: None,
        },
        characteristic: CharacteristicSpec {
            p: real(&[0.1, 0.2]),
            q: real(&[0.2, 0.1]),
        },
        seed: 2,
        ..legendre.clone()
    };
    let hexagon = (0..6)
        .map(|k| {
            let z = C64::from_polar(1.0, k as f64 * PI / 3.0 + 0.2);
            [z.re, z.im]
        })
        .collect();
    let cyclic = RunConfig {
        mode: Mode::Solve,
        curve: CurveSpec {
            kind: CurveType::Cyclic,
            points: hexagon,
            degree: Some(3),
        },
        characteristic: CharacteristicSpec {
            p: real(&[0.1, 0.2, 0.0, 0.1]),
            q: real(&[0.2, 0.1, 0.1, 0.0]),
        },
        seed: 3,
        ..legendre.clone()
    };
    vec![
        ("genus1-legendre.json", legendre),
        ("genus2-real.json", genus2),
        ("cyclic3-hexagon.json", cyclic),
    ]
}

/// A `q`-line through the odd point `p = q = 1/2` of a genus-one curve.
pub fn scan_example() -> RunConfig {
    let (_, mut c) = examples().swap_remove(0);
    c.mode = Mode::Scan;
    c.characteristic = CharacteristicSpec {
        p: real(&[0.5]),
        q: real(&[0.0]),
    };
    c.scan = Some(ScanLine {
        vary: ScanParameter::Q,
        index: 0,
        from: 0.0,
        to: 1.0,
        samples: 101,
    });
    c
}

#[cfg(test)]
mod tests {
    use super::*;

    fn legendre() -> RunConfig {
        examples().swap_remove(0).1
    }

    #[test]
    fn examples_round_trip() {
        for (_, c) in examples().into_iter().chain([("", scan_example())]) {
            assert_eq!(RunConfig::from_json(&c.to_json()).unwrap(), c);
            c.prepare().unwrap();
        }
    }

    #[test]
    fn wrong_length_is_dimension_mismatch() {
        let mut c = legendre();
        c.characteristic.p = real(&[0.1, 0.2]);
        assert!(matches!(c.prepare(), Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn parse_errors_name_the_key() {
        let text = legendre().to_json().replace("\"hyperelliptic\"", "\"elliptic\"");
        match RunConfig::from_json(&text) {
            Err(Error::Config(m)) => assert!(m.starts_with("curve.type"), "{m}"),
            other => panic!("{other:?}"),
        }
        let text = legendre().to_json().replace("\"residual\"", "\"residuals\"");
        match RunConfig::from_json(&text) {
            Err(Error::Config(m)) => assert!(m.contains("tolerances") && m.contains("residuals"), "{m}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn invalid_values_name_the_key() {
        let mut c = legendre();
        c.tolerances.theta = -1.0;
        assert!(matches!(c.prepare(), Err(Error::Config(m)) if m.starts_with("tolerances.theta")));
        let mut c = scan_example();
        c.scan.as_mut().unwrap().to = -1.0;
        assert!(matches!(c.prepare(), Err(Error::Config(m)) if m.starts_with("scan.from")));
        let mut c = legendre();
        c.lambda0 = Lambda0Spec::Named("infinity".into());
        assert!(matches!(c.prepare(), Err(Error::Config(m)) if m.starts_with("lambda0")));
        let mut c = legendre();
        c.mode = Mode::Scan;
        assert!(matches!(c.prepare(), Err(Error::Config(m)) if m.starts_with("scan")));
    }

    #[test]
    fn complex_entries_and_defaults() {
        let text = r#"{"mode":"solve","curve":{"type":"hyperelliptic","points":[[-2,0],[-1,0],[1,0],[2,0]]},
            "characteristic":{"p":[[0.1,0.05]],"q":[0.2]},"lambda0":[0.5,3.0]}"#;
        let c = RunConfig::from_json(text).unwrap();
        assert_eq!(c.tolerances, Tolerances::default());
        let p = c.prepare().unwrap();
        assert_eq!(p.characteristic.p[0], C64::new(0.1, 0.05));
        assert_eq!(p.lambda0, NormalizationPoint::Finite(C64::new(0.5, 3.0)));
    }
}
