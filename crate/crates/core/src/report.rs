//! Deterministic JSON and CSV emission.
//!
//! All floating-point output uses exactly 17 significant digits in
//! scientific notation (`-1.2345678901234567e0`), which round-trips every
//! f64 bit pattern and never silently truncates.  JSON objects keep their
//! insertion order, so a report's bytes are a pure function of its content —
//! the byte-identical-rerun guarantee of the CLI rests on this module plus
//! the counter-based RNG.

use std::fmt::Write as _;

/// 17-significant-digit scientific formatting; the unique f64 with this
/// printed form is the input (17 digits are sufficient for round-tripping).
pub fn fmt_f64(v: f64) -> String {
    if v.is_nan() {
        // Artifacts should never contain NaN; ops are expected to error out
        // first.  Emit a parseable sentinel rather than invalid JSON.
        return "\"nan\"".to_string();
    }
    if v.is_infinite() {
        return if v > 0.0 { "\"inf\"".to_string() } else { "\"-inf\"".to_string() };
    }
    format!("{:.16e}", v)
}

/// JSON value tree with ordered object fields.
#[derive(Clone, Debug)]
pub enum Json {
    Null,
    Bool(bool),
    Int(i64),
    Num(f64),
    Str(String),
    Array(Vec<Json>),
    Object(Vec<(String, Json)>),
}

impl Json {
    pub fn obj() -> Json {
        Json::Object(Vec::new())
    }

    /// Insert or replace a field, preserving insertion order.
    pub fn set(&mut self, key: &str, value: Json) -> &mut Self {
        let Json::Object(fields) = self else {
            panic!("Json::set on non-object");
        };
        if let Some(slot) = fields.iter_mut().find(|(k, _)| k == key) {
            slot.1 = value;
        } else {
            fields.push((key.to_string(), value));
        }
        self
    }

    pub fn get(&self, key: &str) -> Option<&Json> {
        match self {
            Json::Object(fields) => fields.iter().find(|(k, _)| k == key).map(|(_, v)| v),
            _ => None,
        }
    }

    pub fn nums(values: &[f64]) -> Json {
        Json::Array(values.iter().map(|v| Json::Num(*v)).collect())
    }

    pub fn strs<S: AsRef<str>>(values: &[S]) -> Json {
        Json::Array(values.iter().map(|v| Json::Str(v.as_ref().to_string())).collect())
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        self.write_into(&mut out, 0);
        out.push('\n');
        out
    }

    fn write_into(&self, out: &mut String, indent: usize) {
        match self {
            Json::Null => out.push_str("null"),
            Json::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
            Json::Int(i) => {
                let _ = write!(out, "{i}");
            }
            Json::Num(v) => out.push_str(&fmt_f64(*v)),
            Json::Str(s) => write_escaped(out, s),
            Json::Array(items) => {
                if items.is_empty() {
                    out.push_str("[]");
                    return;
                }
                out.push('[');
                for (i, item) in items.iter().enumerate() {
                    if i > 0 {
                        out.push(',');
                    }
                    out.push('\n');
                    push_indent(out, indent + 1);
                    item.write_into(out, indent + 1);
                }
                out.push('\n');
                push_indent(out, indent);
                out.push(']');
            }
            Json::Object(fields) => {
                if fields.is_empty() {
                    out.push_str("{}");
                    return;
                }
                out.push('{');
                for (i, (k, v)) in fields.iter().enumerate() {
                    if i > 0 {
                        out.push(',');
                    }
                    out.push('\n');
                    push_indent(out, indent + 1);
                    write_escaped(out, k);
                    out.push_str(": ");
                    v.write_into(out, indent + 1);
                }
                out.push('\n');
                push_indent(out, indent);
                out.push('}');
            }
        }
    }
}

fn push_indent(out: &mut String, level: usize) {
    for _ in 0..level {
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
                let _ = write!(out, "\\u{:04x}", c as u32);
            }
            c => out.push(c),
        }
    }
    out.push('"');
}

/// Minimal CSV writer: fixed header, rows of 17-digit floats.
pub struct CsvTable {
    header: Vec<String>,
    rows: Vec<Vec<f64>>,
}

impl CsvTable {
    pub fn new<S: AsRef<str>>(header: &[S]) -> CsvTable {
        CsvTable {
            header: header.iter().map(|s| s.as_ref().to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push_row(&mut self, row: &[f64]) {
        assert_eq!(row.len(), self.header.len(), "CSV row width mismatch");
        self.rows.push(row.to_vec());
    }

    pub fn render(&self) -> String {
        let mut out = self.header.join(",");
        out.push('\n');
        for row in &self.rows {
            let mut first = true;
            for v in row {
                if !first {
                    out.push(',');
                }
                first = false;
                out.push_str(&format!("{:.16e}", v));
            }
            out.push('\n');
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_formatting_round_trips() {
        for v in [0.0, 1.0, -1.0 / 3.0, 6.02e23, 1e-300, f64::MIN_POSITIVE, std::f64::consts::PI] {
            let s = fmt_f64(v);
            let back: f64 = s.parse().unwrap();
            assert_eq!(back.to_bits(), v.to_bits(), "{s}");
        }
    }

    #[test]
    fn object_order_is_insertion_order() {
        let mut j = Json::obj();
        j.set("zeta", Json::Int(1));
        j.set("alpha", Json::Int(2));
        let s = j.render();
        assert!(s.find("zeta").unwrap() < s.find("alpha").unwrap());
    }

    #[test]
    fn set_replaces_in_place() {
        let mut j = Json::obj();
        j.set("a", Json::Int(1));
        j.set("b", Json::Int(2));
        j.set("a", Json::Int(3));
        let s = j.render();
        assert!(s.contains("\"a\": 3"));
        assert!(s.find("\"a\"").unwrap() < s.find("\"b\"").unwrap());
    }

    #[test]
    fn csv_shape() {
        let mut t = CsvTable::new(&["t", "y_1", "weight"]);
        t.push_row(&[0.0, 1.5, 0.25]);
        let s = t.render();
        let mut lines = s.lines();
        assert_eq!(lines.next().unwrap(), "t,y_1,weight");
        assert!(lines.next().unwrap().starts_with("0.0000000000000000e0,1.5000000000000000e0"));
    }
}
