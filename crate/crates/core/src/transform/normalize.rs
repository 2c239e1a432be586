use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormScheme {
    L1,
    L2,
    /// Element-wise square root of the ℓ1-normalized vector.
    Root,
}

impl fmt::Display for NormScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NormScheme::L1 => "l1",
            NormScheme::L2 => "l2",
            NormScheme::Root => "root",
        })
    }
}

impl FromStr for NormScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "l1" => Ok(NormScheme::L1),
            "l2" => Ok(NormScheme::L2),
            "root" => Ok(NormScheme::Root),
            _ => Err(Error::invalid(format!("unknown normalization '{s}'"))),
        }
    }
}

/// Normalizes `v` under `scheme`. The all-zero vector is returned unchanged.
pub fn normalize(v: &[f64], scheme: NormScheme) -> Result<Vec<f64>> {
    if scheme == NormScheme::Root {
        if let Some((i, x)) = v.iter().enumerate().find(|(_, x)| !(**x >= 0.0)) {
            return Err(Error::invalid(format!(
                "root normalization needs non-negative entries; entry {i} is {x}"
            )));
        }
    }
    let norm = match scheme {
        NormScheme::L1 | NormScheme::Root => v.iter().map(|x| x.abs()).sum::<f64>(),
        NormScheme::L2 => l2_norm(v),
    };
    if norm == 0.0 {
        return Ok(v.to_vec());
    }
    Ok(match scheme {
        NormScheme::L1 | NormScheme::L2 => v.iter().map(|x| x / norm).collect(),
        NormScheme::Root => v.iter().map(|x| (x / norm).sqrt()).collect(),
    })
}

/// ℓ2 norm with scaling so very large or small entries do not over/underflow.
pub(crate) fn l2_norm(v: &[f64]) -> f64 {
    let scale = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if scale == 0.0 || !scale.is_finite() {
        return scale;
    }
    let ss: f64 = v.iter().map(|x| (x / scale) * (x / scale)).sum();
    scale * ss.sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn l2_of_three_four() {
        let v = normalize(&[3.0, 4.0], NormScheme::L2).unwrap();
        assert!((v[0] - 0.6).abs() < 1e-15 && (v[1] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn root_of_ones() {
        let v = normalize(&[1.0, 1.0], NormScheme::Root).unwrap();
        for x in v {
            assert!((x - 0.5f64.sqrt()).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_vector_passes_through() {
        for s in [NormScheme::L1, NormScheme::L2, NormScheme::Root] {
            assert_eq!(normalize(&[0.0, 0.0], s).unwrap(), vec![0.0, 0.0]);
        }
    }

    #[test]
    fn root_rejects_negative() {
        assert!(matches!(
            normalize(&[1.0, -0.1], NormScheme::Root),
            Err(Error::InvalidArgument(_))
        ));
        // ℓ1/ℓ2 accept signed input
        let v = normalize(&[1.0, -1.0], NormScheme::L1).unwrap();
        assert_eq!(v, vec![0.5, -0.5]);
    }

    proptest! {
        #[test]
        fn unit_norm_outputs(v in proptest::collection::vec(0.0f64..100.0, 1..50)) {
            prop_assume!(v.iter().any(|x| *x > 0.0));
            for s in [NormScheme::L2, NormScheme::Root] {
                let n = l2_norm(&normalize(&v, s).unwrap());
                prop_assert!((n - 1.0).abs() < 1e-12);
            }
            let l1: f64 = normalize(&v, NormScheme::L1).unwrap().iter().sum();
            prop_assert!((l1 - 1.0).abs() < 1e-12);
        }

        #[test]
        fn scale_invariant(v in proptest::collection::vec(0.0f64..100.0, 1..50), c in 0.001f64..1000.0) {
            let scaled: Vec<f64> = v.iter().map(|x| c * x).collect();
            for s in [NormScheme::L1, NormScheme::L2, NormScheme::Root] {
                let a = normalize(&v, s).unwrap();
                let b = normalize(&scaled, s).unwrap();
                for (x, y) in a.iter().zip(&b) {
                    prop_assert!((x - y).abs() <= 1e-12);
                }
            }
        }
    }
}
