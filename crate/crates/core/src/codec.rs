//! Lossless text encoding for float vectors: each value is written as the
//! 16 hex digits of its IEEE-754 bit pattern.

use crate::error::{Error, Result};

pub fn encode(values: &[f64]) -> String {
    let mut out = String::with_capacity(values.len() * 17);
    for (i, v) in values.iter().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        out.push_str(&format!("{:016x}", v.to_bits()));
    }
    out
}

pub fn decode(text: &str, line: usize) -> Result<Vec<f64>> {
    text.split_whitespace()
        .map(|tok| {
            u64::from_str_radix(tok, 16)
                .map(f64::from_bits)
                .map_err(|e| Error::Parse {
                    line,
                    message: format!("bad hex float {tok:?}: {e}"),
                })
        })
        .collect()
}

/// One `kind<TAB>id<TAB>values` snapshot record.
pub fn record(kind: &str, id: &str, values: &[f64]) -> String {
    format!("{kind}\t{id}\t{}\n", encode(values))
}

pub fn parse_record(text: &str, line: usize) -> Result<(String, String, Vec<f64>)> {
    let mut parts = text.splitn(3, '\t');
    let (Some(kind), Some(id), Some(values)) = (parts.next(), parts.next(), parts.next()) else {
        return Err(Error::Parse {
            line,
            message: "expected kind, id and values".into(),
        });
    };
    Ok((kind.to_string(), id.to_string(), decode(values, line)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn encode_decode_is_bit_exact(values in proptest::collection::vec(any::<f64>(), 0..20)) {
            let back = decode(&encode(&values), 1).unwrap();
            prop_assert_eq!(values.len(), back.len());
            for (a, b) in values.iter().zip(&back) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }

    #[test]
    fn record_round_trips() {
        let line = record("head", "poi-1", &[0.1, -2.5]);
        let (kind, id, v) = parse_record(line.trim_end(), 1).unwrap();
        assert_eq!((kind.as_str(), id.as_str()), ("head", "poi-1"));
        assert_eq!(v, vec![0.1, -2.5]);
        assert!(parse_record("head", 3).is_err());
    }
}
