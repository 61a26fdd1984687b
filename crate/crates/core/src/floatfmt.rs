//! Fixed 17-significant-digit float formatting for JSON and CSV output.
//!
//! Every finite `f64` printed with 17 significant digits parses back to the
//! same bit pattern, so documents written here round-trip losslessly.

use serde::ser::SerializeSeq;
use serde::{Serialize, Serializer};
use serde_json::value::RawValue;

/// Formats a finite float with 17 significant digits.
pub fn format_f64(x: f64) -> String {
    if x == 0.0 {
        // keep the sign of negative zero
        return if x.is_sign_negative() {
            "-0.0000000000000000e0".to_string()
        } else {
            "0.0000000000000000e0".to_string()
        };
    }
    format!("{:.16e}", x)
}

fn raw<E: serde::ser::Error>(x: f64) -> Result<Box<RawValue>, E> {
    if !x.is_finite() {
        return Err(E::custom(format!(
            "non-finite float {x} cannot be serialized"
        )));
    }
    RawValue::from_string(format_f64(x)).map_err(E::custom)
}

pub fn serialize<S: Serializer>(x: &f64, s: S) -> Result<S::Ok, S::Error> {
    raw::<S::Error>(*x)?.serialize(s)
}

pub mod vec {
    use super::*;

    pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
        let mut seq = s.serialize_seq(Some(v.len()))?;
        for x in v {
            seq.serialize_element(&raw::<S::Error>(*x)?)?;
        }
        seq.end()
    }
}

pub mod option {
    use super::*;

    pub fn serialize<S: Serializer>(v: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
        match v {
            Some(x) => s.serialize_some(&raw::<S::Error>(*x)?),
            None => s.serialize_none(),
        }
    }
}

pub mod option_vec {
    use super::*;

    pub fn serialize<S: Serializer>(v: &Option<Vec<f64>>, s: S) -> Result<S::Ok, S::Error> {
        match v {
            Some(xs) => {
                let mut seq = s.serialize_seq(Some(xs.len()))?;
                for x in xs {
                    seq.serialize_element(&raw::<S::Error>(*x)?)?;
                }
                seq.end()
            }
            None => s.serialize_none(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn formats_with_seventeen_digits() {
        assert_eq!(format_f64(1.0), "1.0000000000000000e0");
        assert_eq!(format_f64(-0.1), "-1.0000000000000001e-1");
    }

    proptest! {
        #[test]
        fn round_trips_bit_exact(bits in any::<u64>()) {
            let x = f64::from_bits(bits);
            prop_assume!(x.is_finite());
            let back: f64 = format_f64(x).parse().unwrap();
            prop_assert_eq!(back.to_bits(), x.to_bits());
        }
    }
}
