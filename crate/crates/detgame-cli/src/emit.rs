//! Deterministic output rendering. Keys keep insertion order and floats are
//! printed with 17 significant digits, so identical runs produce identical
//! bytes and every value survives a parse round trip.

/// A finite float as a 17-significant-digit decimal token.
pub fn fmt_f64(x: f64) -> String {
    debug_assert!(x.is_finite());
    format!("{x:.16e}")
}

/// A JSON tree with ordered object keys.
#[derive(Debug, Clone)]
pub enum Json {
    Null,
    Bool(bool),
    /// A preformatted numeric token, emitted bare.
    Num(String),
    Str(String),
    Arr(Vec<Json>),
    Obj(Vec<(String, Json)>),
}

impl Json {
    /// A float value; non-finite values become the strings `"inf"`,
    /// `"-inf"`, and `"nan"` since bare JSON has no spelling for them.
    pub fn num_f(x: f64) -> Json {
        if x.is_finite() {
            Json::Num(fmt_f64(x))
        } else if x.is_nan() {
            Json::Str("nan".into())
        } else if x > 0.0 {
            Json::Str("inf".into())
        } else {
            Json::Str("-inf".into())
        }
    }

    pub fn num_int<T: std::fmt::Display>(x: T) -> Json {
        Json::Num(x.to_string())
    }

    pub fn str(s: impl Into<String>) -> Json {
        Json::Str(s.into())
    }

    pub fn obj(pairs: Vec<(&str, Json)>) -> Json {
        Json::Obj(pairs.into_iter().map(|(k, v)| (k.to_string(), v)).collect())
    }

    pub fn floats(xs: &[f64]) -> Json {
        Json::Arr(xs.iter().map(|&x| Json::num_f(x)).collect())
    }

    /// Row-major `k * k` table as an array of row arrays.
    pub fn matrix(flat: &[f64], k: usize) -> Json {
        Json::Arr(
            (0..k)
                .map(|i| Json::floats(&flat[i * k..(i + 1) * k]))
                .collect(),
        )
    }

    fn is_scalar(&self) -> bool {
        !matches!(self, Json::Arr(_) | Json::Obj(_))
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        self.write(&mut out, 0);
        out
    }

    fn write(&self, out: &mut String, indent: usize) {
        match self {
            Json::Null => out.push_str("null"),
            Json::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
            Json::Num(s) => out.push_str(s),
            Json::Str(s) => write_escaped(out, s),
            Json::Arr(items) if items.is_empty() => out.push_str("[]"),
            Json::Arr(items) if items.iter().all(Json::is_scalar) => {
                out.push('[');
                for (i, item) in items.iter().enumerate() {
                    if i > 0 {
                        out.push_str(", ");
                    }
                    item.write(out, indent);
                }
                out.push(']');
            }
            Json::Arr(items) => {
                out.push('[');
                for (i, item) in items.iter().enumerate() {
                    if i > 0 {
                        out.push(',');
                    }
                    out.push('\n');
                    pad(out, indent + 1);
                    item.write(out, indent + 1);
                }
                out.push('\n');
                pad(out, indent);
                out.push(']');
            }
            Json::Obj(pairs) if pairs.is_empty() => out.push_str("{}"),
            Json::Obj(pairs) => {
                out.push('{');
                for (i, (key, val)) in pairs.iter().enumerate() {
                    if i > 0 {
                        out.push(',');
                    }
                    out.push('\n');
                    pad(out, indent + 1);
                    write_escaped(out, key);
                    out.push_str(": ");
                    val.write(out, indent + 1);
                }
                out.push('\n');
                pad(out, indent);
                out.push('}');
            }
        }
    }
}

fn pad(out: &mut String, indent: usize) {
    for _ in 0..indent {
        out.push_str("  ");
    }
}

fn write_escaped(out: &mut String, s: &str) {
    out.push('"');
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            '\t' => out.push_str("\\t"),
            c if (c as u32) < 0x20 => {
                out.push_str(&format!("\\u{:04x}", c as u32));
            }
            c => out.push(c),
        }
    }
    out.push('"');
}

/// One CSV line; fields are joined bare since every token we emit is free of
/// commas and quotes.
pub fn csv_row(fields: &[String]) -> String {
    fields.join(",")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seventeen_digits_round_trip() {
        for &x in &[0.1, 1.0 / 3.0, 0.9003870239350182, 1e-300, -0.0, 2.0f64.powi(60)] {
            let s = fmt_f64(x);
            let back: f64 = s.parse().unwrap();
            assert_eq!(back.to_bits(), x.to_bits(), "{s}");
        }
    }

    #[test]
    fn scalar_arrays_stay_on_one_line() {
        let j = Json::obj(vec![
            ("xs", Json::floats(&[0.5, 0.5])),
            ("flag", Json::Bool(true)),
        ]);
        let text = j.render();
        assert!(text.contains("[5.0000000000000000e-1, 5.0000000000000000e-1]"));
        assert!(serde_json::from_str::<serde_json::Value>(&text).is_ok());
    }

    #[test]
    fn infinities_become_strings() {
        assert_eq!(Json::num_f(f64::INFINITY).render(), "\"inf\"");
        assert_eq!(Json::num_f(f64::NEG_INFINITY).render(), "\"-inf\"");
    }

    #[test]
    fn control_characters_are_escaped() {
        let j = Json::str("a\"b\\c\nd\u{1}");
        let parsed: serde_json::Value = serde_json::from_str(&j.render()).unwrap();
        assert_eq!(parsed.as_str().unwrap(), "a\"b\\c\nd\u{1}");
    }
}
