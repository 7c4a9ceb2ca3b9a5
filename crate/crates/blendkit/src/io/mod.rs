//! File formats and command implementations for the CLI: matrix CSVs,
//! JSON manifests, JSON fit files, and the four subcommands.

pub mod commands;
pub mod fit_file;
pub mod manifest;
pub mod matrix_csv;

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// Write `bytes` to `path` atomically: the content lands in a temporary
/// file in the same directory first and is renamed into place, so a
/// failure mid-write never leaves a partial output.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let io_err = |source| Error::Io {
        path: path.display().to_string(),
        source,
    };
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(format!(".tmp{}", std::process::id()));
    let tmp = std::path::PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(io_err)?;
    fs::rename(&tmp, path).map_err(io_err)
}

/// Read a file to a string with the path recorded in any error.
pub(crate) fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Serialization helpers that keep non-finite floats representable in
/// JSON: finite values serialize as numbers, while NaN and the infinities
/// become the strings "nan", "inf", and "-inf" (which stock JSON cannot
/// hold as numbers). Reading accepts both forms.
pub(crate) mod json_float {
    use serde::de::Error as DeError;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Str(String),
    }

    fn encode(x: f64) -> Repr {
        if x.is_finite() {
            Repr::Num(x)
        } else if x.is_nan() {
            Repr::Str("nan".to_string())
        } else if x > 0.0 {
            Repr::Str("inf".to_string())
        } else {
            Repr::Str("-inf".to_string())
        }
    }

    fn decode<E: DeError>(r: Repr) -> Result<f64, E> {
        match r {
            Repr::Num(x) => Ok(x),
            Repr::Str(s) => s
                .parse::<f64>()
                .map_err(|_| E::custom(format!("\"{s}\" is not a number"))),
        }
    }

    pub mod scalar {
        use super::*;

        pub fn serialize<S: Serializer>(x: &f64, s: S) -> Result<S::Ok, S::Error> {
            encode(*x).serialize(s)
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
            decode(Repr::deserialize(d)?)
        }
    }

    pub mod list {
        use super::*;

        pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
            s.collect_seq(v.iter().map(|x| encode(*x)))
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
            Vec::<Repr>::deserialize(d)?
                .into_iter()
                .map(decode)
                .collect()
        }
    }

    pub mod opt_list {
        use super::*;

        pub fn serialize<S: Serializer>(v: &Option<Vec<f64>>, s: S) -> Result<S::Ok, S::Error> {
            match v {
                Some(v) => super::list::serialize(v, s),
                None => s.serialize_none(),
            }
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(
            d: D,
        ) -> Result<Option<Vec<f64>>, D::Error> {
            Option::<Vec<Repr>>::deserialize(d)?
                .map(|v| v.into_iter().map(decode).collect())
                .transpose()
        }
    }
}
