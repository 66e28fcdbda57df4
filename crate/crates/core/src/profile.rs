//! Threshold strategy profiles.

use alloc::format;
use alloc::vec::Vec;

use crate::{Error, Result};

/// A patience threshold. `Never` is an infinite threshold; `Unresolved`
/// marks a type-II entry beyond the analytic range that only a simulation
/// search could settle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Threshold {
    At(f64),
    Never,
    Unresolved,
}

impl Threshold {
    pub fn from_value(x: f64) -> Self {
        if x.is_nan() {
            Threshold::Unresolved
        } else if x.is_infinite() {
            Threshold::Never
        } else {
            Threshold::At(x)
        }
    }

    /// Infinite for `Never`, NaN for `Unresolved`.
    pub fn value(self) -> f64 {
        match self {
            Threshold::At(x) => x,
            Threshold::Never => f64::INFINITY,
            Threshold::Unresolved => f64::NAN,
        }
    }

    pub fn finite(self) -> Option<f64> {
        match self {
            Threshold::At(x) => Some(x),
            _ => None,
        }
    }
}

/// `n_max` together with type-I thresholds `T_1..T_{n_max-2}` and type-II
/// thresholds `S_1..S_{n_max-1}`. Index `n` counts customers ahead,
/// including the one in service.
#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdProfile {
    pub n_max: usize,
    pub t: Vec<Threshold>,
    pub s: Vec<Threshold>,
}

impl ThresholdProfile {
    pub fn new(n_max: usize, t: Vec<Threshold>, s: Vec<Threshold>) -> Result<Self> {
        if n_max == 0 {
            return Err(Error::InvalidParameter("n_max must be at least 1".into()));
        }
        if t.len() != n_max.saturating_sub(2) || s.len() != n_max - 1 {
            return Err(Error::InvalidParameter(format!(
                "n_max = {n_max} needs {} T entries and {} S entries, got {} and {}",
                n_max.saturating_sub(2),
                n_max - 1,
                t.len(),
                s.len()
            )));
        }
        for th in t.iter().chain(&s) {
            if let Threshold::At(x) = th {
                if !(*x >= 0.0) {
                    return Err(Error::InvalidParameter(format!("thresholds must be nonnegative, got {x}")));
                }
            }
        }
        Ok(Self { n_max, t, s })
    }

    pub fn from_values(n_max: usize, t: &[f64], s: &[f64]) -> Result<Self> {
        Self::new(
            n_max,
            t.iter().map(|&x| Threshold::from_value(x)).collect(),
            s.iter().map(|&x| Threshold::from_value(x)).collect(),
        )
    }

    /// Patience of a customer left with `n` ahead after a completion.
    pub fn t_n(&self, n: usize) -> f64 {
        if n == 0 {
            return f64::INFINITY;
        }
        self.t.get(n - 1).map_or(f64::INFINITY, |x| x.value())
    }

    /// Patience of a customer who found `n` in the system on arrival.
    pub fn s_n(&self, n: usize) -> f64 {
        if n == 0 {
            return f64::INFINITY;
        }
        self.s.get(n - 1).map_or(f64::INFINITY, |x| x.value())
    }

    pub fn is_resolved(&self) -> bool {
        !self.t.iter().chain(&self.s).any(|x| matches!(x, Threshold::Unresolved))
    }

    /// Both sequences are strictly decreasing over their finite entries.
    pub fn is_monotone(&self) -> bool {
        strictly_decreasing(&self.t) && strictly_decreasing(&self.s)
    }
}

fn strictly_decreasing(xs: &[Threshold]) -> bool {
    let finite: Vec<f64> = xs.iter().filter_map(|x| x.finite()).collect();
    finite.windows(2).all(|w| w[0] > w[1])
}

#[cfg(feature = "serde")]
mod serde_impl {
    use super::Threshold;
    use core::fmt;
    use serde::de::{self, Visitor};
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    impl Serialize for Threshold {
        fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
            match self {
                Threshold::At(x) => s.serialize_f64(*x),
                Threshold::Never => s.serialize_str("inf"),
                Threshold::Unresolved => s.serialize_none(),
            }
        }
    }

    struct ThresholdVisitor;

    impl<'de> Visitor<'de> for ThresholdVisitor {
        type Value = Threshold;

        fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
            f.write_str("a nonnegative number, \"inf\" or null")
        }

        fn visit_f64<E: de::Error>(self, v: f64) -> Result<Threshold, E> {
            Ok(Threshold::from_value(v))
        }

        fn visit_i64<E: de::Error>(self, v: i64) -> Result<Threshold, E> {
            Ok(Threshold::At(v as f64))
        }

        fn visit_u64<E: de::Error>(self, v: u64) -> Result<Threshold, E> {
            Ok(Threshold::At(v as f64))
        }

        fn visit_str<E: de::Error>(self, v: &str) -> Result<Threshold, E> {
            match v {
                "inf" | "Infinity" | "never" => Ok(Threshold::Never),
                _ => Err(E::invalid_value(de::Unexpected::Str(v), &self)),
            }
        }

        fn visit_none<E: de::Error>(self) -> Result<Threshold, E> {
            Ok(Threshold::Unresolved)
        }

        fn visit_unit<E: de::Error>(self) -> Result<Threshold, E> {
            Ok(Threshold::Unresolved)
        }
    }

    impl<'de> Deserialize<'de> for Threshold {
        fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Threshold, D::Error> {
            d.deserialize_any(ThresholdVisitor)
        }
    }
}

#[cfg(feature = "serde")]
impl serde::Serialize for ThresholdProfile {
    fn serialize<S: serde::Serializer>(&self, s: S) -> core::result::Result<S::Ok, S::Error> {
        use serde::ser::SerializeStruct;
        let mut st = s.serialize_struct("ThresholdProfile", 3)?;
        st.serialize_field("n_max", &self.n_max)?;
        st.serialize_field("T", &self.t)?;
        st.serialize_field("S", &self.s)?;
        st.end()
    }
}

#[cfg(feature = "serde")]
impl<'de> serde::Deserialize<'de> for ThresholdProfile {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> core::result::Result<Self, D::Error> {
        #[derive(serde::Deserialize)]
        struct Raw {
            n_max: usize,
            #[serde(rename = "T")]
            t: Vec<Threshold>,
            #[serde(rename = "S")]
            s: Vec<Threshold>,
        }
        let raw = Raw::deserialize(d)?;
        ThresholdProfile::new(raw.n_max, raw.t, raw.s).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn lengths_are_enforced() {
        assert!(ThresholdProfile::from_values(3, &[7.7], &[7.2, 3.1]).is_ok());
        assert!(ThresholdProfile::from_values(3, &[], &[7.2, 3.1]).is_err());
        assert!(ThresholdProfile::from_values(1, &[], &[]).is_ok());
        assert!(ThresholdProfile::from_values(0, &[], &[]).is_err());
    }

    #[test]
    fn lookups() {
        let p = ThresholdProfile::from_values(3, &[7.7], &[f64::INFINITY, 3.1]).unwrap();
        assert_eq!(p.t_n(1), 7.7);
        assert_eq!(p.s_n(1), f64::INFINITY);
        assert_eq!(p.s_n(2), 3.1);
        assert_eq!(p.t_n(2), f64::INFINITY);
        assert!(p.is_resolved());
    }

    #[test]
    fn monotonicity_ignores_infinite_entries() {
        let p = ThresholdProfile::new(
            4,
            vec![Threshold::At(5.0), Threshold::At(2.0)],
            vec![Threshold::Never, Threshold::At(3.0), Threshold::At(1.0)],
        )
        .unwrap();
        assert!(p.is_monotone());
        let q = ThresholdProfile::from_values(3, &[1.0], &[2.0, 2.0]).unwrap();
        assert!(!q.is_monotone());
    }
}
