//! Small helpers shared across modules: extended-real serialization,
//! fingerprints and log-domain sums.

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::operator::CMatrix;

/// Serializes `f64` with non-finite values as the strings `"inf"`, `"-inf"`, `"nan"`.
pub mod ext_real {
    use super::*;

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn to_repr(v: f64) -> serde_json::Value {
        if v.is_finite() {
            serde_json::json!(v)
        } else if v.is_nan() {
            serde_json::json!("nan")
        } else if v > 0.0 {
            serde_json::json!("inf")
        } else {
            serde_json::json!("-inf")
        }
    }

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        to_repr(*v).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Text(t) => match t.as_str() {
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                "nan" => Ok(f64::NAN),
                other => Err(serde::de::Error::custom(format!("bad number {other}"))),
            },
        }
    }
}

/// Same as [`ext_real`] for optional values.
pub mod ext_real_opt {
    use super::*;

    pub fn serialize<S: Serializer>(v: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
        match v {
            Some(x) => ext_real::to_repr(*x).serialize(s),
            None => s.serialize_none(),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<f64>, D::Error> {
        let v: Option<serde_json::Value> = Option::deserialize(d)?;
        match v {
            None | Some(serde_json::Value::Null) => Ok(None),
            Some(val) => ext_real::deserialize(val)
                .map(Some)
                .map_err(serde::de::Error::custom),
        }
    }
}

/// Same as [`ext_real`] for vectors.
pub mod ext_real_vec {
    use super::*;

    pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
        let items: Vec<serde_json::Value> = v.iter().map(|x| ext_real::to_repr(*x)).collect();
        items.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        let items: Vec<serde_json::Value> = Vec::deserialize(d)?;
        items
            .into_iter()
            .map(|v| ext_real::deserialize(v).map_err(serde::de::Error::custom))
            .collect()
    }
}

/// CSV cell for an extended real: shortest round-trip decimal, `inf`, `-inf`, `nan`.
pub fn fmt_real(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else if v.is_infinite() {
        if v > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{v}")
    }
}

/// `log₂(2^a + 2^b)`.
pub fn log2_add(a: f64, b: f64) -> f64 {
    let m = a.max(b);
    if m == f64::NEG_INFINITY || m == f64::INFINITY {
        return m;
    }
    m + ((a - m).exp2() + (b - m).exp2()).log2()
}

/// FNV-1a over the entries rounded to 12 significant decimals, so fingerprints
/// survive last-bit noise.
pub fn fingerprint(m: &CMatrix) -> String {
    let mut h: u64 = 0xcbf29ce484222325;
    let mut eat = |x: f64| {
        let text = format!("{:.12e}", if x == 0.0 { 0.0 } else { x });
        for b in text.bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
    };
    eat(m.nrows() as f64);
    for z in m.iter() {
        eat(z.re);
        eat(z.im);
    }
    format!("{h:016x}")
}

/// `log₂ Σ 2^{x_i}` without overflow.
pub fn log2_sum_exp2(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY || m == f64::INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp2()).sum::<f64>().log2()
}

pub fn binary_entropy(e: f64) -> f64 {
    let t = |x: f64| if x <= 0.0 { 0.0 } else { -x * x.log2() };
    t(e) + t(1.0 - e)
}

pub fn shannon_entropy(p: &[f64]) -> f64 {
    p.iter().map(|&x| if x <= 0.0 { 0.0 } else { -x * x.log2() }).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_sum_exp() {
        assert!((log2_sum_exp2(&[1.0, 1.0]) - 2.0).abs() < 1e-15);
        assert!((log2_sum_exp2(&[-2000.0, -2000.0]) + 1999.0).abs() < 1e-12);
        assert_eq!(log2_sum_exp2(&[]), f64::NEG_INFINITY);
    }

    #[test]
    fn entropy_limits() {
        assert_eq!(binary_entropy(0.5), 1.0);
        assert!(binary_entropy(1e-12) < 40.0 * 1e-10);
        assert_eq!(binary_entropy(0.0), 0.0);
    }

    #[test]
    fn ext_real_round_trip() {
        #[derive(Serialize, Deserialize)]
        struct W {
            #[serde(with = "ext_real")]
            v: f64,
        }
        let text = serde_json::to_string(&W { v: f64::INFINITY }).unwrap();
        assert_eq!(text, r#"{"v":"inf"}"#);
        let back: W = serde_json::from_str(&text).unwrap();
        assert_eq!(back.v, f64::INFINITY);
        let back: W = serde_json::from_str(r#"{"v":1.5}"#).unwrap();
        assert_eq!(back.v, 1.5);
    }
}
