//! Serde helper that writes `f64` values as decimal text with 17 significant
//! digits.
//!
//! Seventeen significant digits are enough to recover every finite binary64
//! value exactly, so state written this way reloads bit-for-bit. Reading
//! accepts either a string or a plain number.

use serde::{de, Deserializer, Serializer};
use std::fmt;

pub fn format(value: f64) -> String {
    format!("{value:.16e}")
}

pub fn serialize<S: Serializer>(value: &f64, serializer: S) -> Result<S::Ok, S::Error> {
    serializer.serialize_str(&format(*value))
}

pub fn deserialize<'de, D: Deserializer<'de>>(deserializer: D) -> Result<f64, D::Error> {
    struct Visitor;

    impl de::Visitor<'_> for Visitor {
        type Value = f64;

        fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
            f.write_str("a float or a decimal string")
        }

        fn visit_str<E: de::Error>(self, v: &str) -> Result<f64, E> {
            v.trim().parse::<f64>().map_err(E::custom)
        }

        fn visit_f64<E: de::Error>(self, v: f64) -> Result<f64, E> {
            Ok(v)
        }

        fn visit_i64<E: de::Error>(self, v: i64) -> Result<f64, E> {
            Ok(v as f64)
        }

        fn visit_u64<E: de::Error>(self, v: u64) -> Result<f64, E> {
            Ok(v as f64)
        }
    }

    deserializer.deserialize_any(Visitor)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seventeen_digits_recover_exact_bits() {
        for v in [
            0.1,
            1.0 / 3.0,
            49.999_999_999_9,
            f64::MIN_POSITIVE,
            1e300,
            0.0,
        ] {
            let text = format(v);
            assert_eq!(
                text.parse::<f64>().unwrap().to_bits(),
                v.to_bits(),
                "{text}"
            );
        }
        assert_eq!(format(0.5), "5.0000000000000000e-1");
    }
}
