//! CSV and JSON tables with a fixed 9-significant-digit number format.
//!
//! Every table carries the resolved run configuration: CSV files open
//! with a `# config: {json}` comment line followed by the header row.

use serde::Serialize;
use serde_json::{json, Value};

/// Significant digits of every formatted float.
pub const SIG_DIGITS: usize = 9;

/// `%g`-style formatting with [`SIG_DIGITS`] significant digits:
/// positional notation for decimal exponents in `[-5, 9)`, scientific
/// otherwise, trailing zeros removed.
pub fn fmt_sig(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return "0".into();
    }
    let sci = format!("{:.*e}", SIG_DIGITS - 1, x);
    let (mantissa, exp) = sci.split_once('e').expect("scientific format");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-5..SIG_DIGITS as i32).contains(&exp) {
        let decimals = (SIG_DIGITS as i32 - 1 - exp).max(0) as usize;
        trim_zeros(format!("{:.*}", decimals, x))
    } else {
        format!("{}e{}", trim_zeros(mantissa.to_string()), exp)
    }
}

fn trim_zeros(s: String) -> String {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Num(f64),
    Int(i64),
    Text(String),
}

impl Cell {
    fn csv(&self) -> String {
        match self {
            Cell::Num(x) => fmt_sig(*x),
            Cell::Int(i) => i.to_string(),
            Cell::Text(t) => {
                if t.contains([',', '"', '\n']) {
                    format!("\"{}\"", t.replace('"', "\"\""))
                } else {
                    t.clone()
                }
            }
        }
    }

    fn json(&self) -> Value {
        match self {
            // The JSON value is the formatted number, so CSV and JSON agree.
            Cell::Num(x) if x.is_finite() => {
                let v: f64 = fmt_sig(*x).parse().expect("formatted float parses");
                json!(v)
            }
            Cell::Num(x) => json!(fmt_sig(*x)),
            Cell::Int(i) => json!(i),
            Cell::Text(t) => json!(t),
        }
    }
}

impl From<f64> for Cell {
    fn from(x: f64) -> Self {
        Cell::Num(x)
    }
}

impl From<i64> for Cell {
    fn from(i: i64) -> Self {
        Cell::Int(i)
    }
}

impl From<u64> for Cell {
    fn from(i: u64) -> Self {
        Cell::Int(i as i64)
    }
}

impl From<usize> for Cell {
    fn from(i: usize) -> Self {
        Cell::Int(i as i64)
    }
}

impl From<u8> for Cell {
    fn from(i: u8) -> Self {
        Cell::Int(i as i64)
    }
}

impl From<&str> for Cell {
    fn from(t: &str) -> Self {
        Cell::Text(t.to_string())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new<S: AsRef<str>>(columns: &[S]) -> Self {
        Table {
            columns: columns.iter().map(|c| c.as_ref().to_string()).collect(),
            rows: Vec::new(),
        }
    }

    /// Appends a row; panics if its width differs from the header.
    pub fn push(&mut self, row: Vec<Cell>) {
        assert_eq!(row.len(), self.columns.len(), "row width must match header");
        self.rows.push(row);
    }

    pub fn to_csv<C: Serialize>(&self, config: &C) -> String {
        let mut out = format!(
            "# config: {}\n",
            serde_json::to_string(config).expect("config serializes")
        );
        out.push_str(&self.columns.join(","));
        out.push('\n');
        for row in &self.rows {
            let cells: Vec<String> = row.iter().map(Cell::csv).collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }

    pub fn to_json<C: Serialize>(&self, config: &C) -> String {
        let rows: Vec<Value> = self
            .rows
            .iter()
            .map(|r| Value::Array(r.iter().map(Cell::json).collect()))
            .collect();
        let doc = json!({
            "config": config,
            "columns": self.columns,
            "rows": rows,
        });
        let mut s = serde_json::to_string_pretty(&doc).expect("table serializes");
        s.push('\n');
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nine_significant_digits() {
        assert_eq!(fmt_sig(0.12896393844978543), "0.128963938");
        assert_eq!(fmt_sig(0.6703200460356393), "0.670320046");
        assert_eq!(fmt_sig(1.0), "1");
        assert_eq!(fmt_sig(-2.5), "-2.5");
        assert_eq!(fmt_sig(1234567891.0), "1.23456789e9");
        assert_eq!(fmt_sig(123456789.4), "123456789");
        assert_eq!(fmt_sig(3.4485613457390984e-10), "3.44856135e-10");
        assert_eq!(fmt_sig(1.5e-5), "0.000015");
        assert_eq!(fmt_sig(0.0), "0");
        assert_eq!(fmt_sig(f64::INFINITY), "inf");
    }

    #[test]
    fn round_trip_within_precision() {
        for &x in &[
            std::f64::consts::PI,
            1e-300,
            6.02214076e23,
            -0.000123456789123,
        ] {
            let y: f64 = fmt_sig(x).parse().unwrap();
            assert!(((x - y) / x).abs() < 5e-9, "{x} -> {y}");
        }
    }

    #[test]
    fn csv_and_json_layout() {
        let mut t = Table::new(&["a", "b", "label"]);
        t.push(vec![0.2.into(), 7u64.into(), "x,y".into()]);
        let cfg = json!({"alpha_sq": [0.2]});
        let csv = t.to_csv(&cfg);
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), "# config: {\"alpha_sq\":[0.2]}");
        assert_eq!(lines.next().unwrap(), "a,b,label");
        assert_eq!(lines.next().unwrap(), "0.2,7,\"x,y\"");
        let v: Value = serde_json::from_str(&t.to_json(&cfg)).unwrap();
        assert_eq!(v["rows"][0][0], json!(0.2));
        assert_eq!(v["columns"][2], json!("label"));
    }
}
