//! CSV tables, threshold checks and the verdict file.

use std::fmt::Write as _;

use guidelab::table::format_f64;

/// Where a threshold comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Source {
    /// A published value or visual claim, widened by Monte Carlo noise.
    Reported,
    /// An independently computed oracle (quadrature, closed form, analytic weights).
    Derived,
    /// An algebraic identity or hard bound.
    Identity,
}

impl Source {
    pub fn as_str(self) -> &'static str {
        match self {
            Source::Reported => "reported",
            Source::Derived => "derived",
            Source::Identity => "identity",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub measured: f64,
    pub target: String,
    pub source: Source,
    pub pass: bool,
}

impl Check {
    /// `|measured - center| <= tol`.
    pub fn within(name: impl Into<String>, measured: f64, center: f64, tol: f64, source: Source) -> Self {
        Self {
            name: name.into(),
            measured,
            target: format!("{center}+-{tol}"),
            source,
            pass: (measured - center).abs() <= tol,
        }
    }

    pub fn in_range(name: impl Into<String>, measured: f64, lo: f64, hi: f64, source: Source) -> Self {
        Self {
            name: name.into(),
            measured,
            target: format!("[{lo},{hi}]"),
            source,
            pass: measured >= lo && measured <= hi,
        }
    }

    pub fn at_most(name: impl Into<String>, measured: f64, max: f64, source: Source) -> Self {
        Self {
            name: name.into(),
            measured,
            target: format!("<={max}"),
            source,
            pass: measured <= max,
        }
    }

    pub fn at_least(name: impl Into<String>, measured: f64, min: f64, source: Source) -> Self {
        Self {
            name: name.into(),
            measured,
            target: format!(">={min}"),
            source,
            pass: measured >= min,
        }
    }

    pub fn greater_than(name: impl Into<String>, measured: f64, min: f64, source: Source) -> Self {
        Self {
            name: name.into(),
            measured,
            target: format!(">{min}"),
            source,
            pass: measured > min,
        }
    }

    pub fn status(&self) -> &'static str {
        if self.pass {
            "PASS"
        } else {
            "FAIL"
        }
    }
}

/// A tidy table whose rows all carry the config hash as first column.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CsvTable {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl CsvTable {
    pub fn new(header: &[&str]) -> Self {
        Self {
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        assert_eq!(row.len(), self.header.len(), "row width mismatch");
        self.rows.push(row.into_iter().map(|c| c.render()).collect());
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn render(&self, config_hash: &str) -> String {
        let mut out = String::from("config_hash");
        for h in &self.header {
            out.push(',');
            out.push_str(h);
        }
        out.push('\n');
        for row in &self.rows {
            out.push_str(config_hash);
            for c in row {
                out.push(',');
                out.push_str(c);
            }
            out.push('\n');
        }
        out
    }
}

/// A CSV cell; floats are written with 17 significant digits.
#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    F(f64),
    I(i64),
    U(u64),
    S(String),
}

impl Cell {
    fn render(self) -> String {
        match self {
            Cell::F(v) => format_f64(v),
            Cell::I(v) => v.to_string(),
            Cell::U(v) => v.to_string(),
            Cell::S(s) => quote(&s),
        }
    }
}

/// Quotes a field that contains a delimiter, quote or line break.
fn quote(field: &str) -> String {
    if field.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", field.replace('"', "\"\""))
    } else {
        field.to_string()
    }
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::F(v)
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::U(v as u64)
    }
}

impl From<u32> for Cell {
    fn from(v: u32) -> Self {
        Cell::U(u64::from(v))
    }
}

impl From<i64> for Cell {
    fn from(v: i64) -> Self {
        Cell::I(v)
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::S(v.to_string())
    }
}

impl From<String> for Cell {
    fn from(v: String) -> Self {
        Cell::S(v)
    }
}

#[macro_export]
macro_rules! row {
    ($($v:expr),* $(,)?) => { vec![$($crate::report::Cell::from($v)),*] };
}

/// Everything an experiment produces.
#[derive(Debug, Clone, Default)]
pub struct Report {
    /// `(file name, table)`, rendered with the config hash.
    pub tables: Vec<(String, CsvTable)>,
    /// `(file name, contents)` written verbatim.
    pub files: Vec<(String, String)>,
    pub checks: Vec<Check>,
}

impl Report {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn verdict(&self, config_hash: &str) -> String {
        let mut out = String::from("config_hash,check,measured,target,source,status\n");
        for c in &self.checks {
            let _ = writeln!(
                out,
                "{config_hash},{},{},{},{},{}",
                quote(&c.name),
                format_f64(c.measured),
                quote(&c.target),
                c.source.as_str(),
                c.status()
            );
        }
        let overall = if self.passed() { "PASS" } else { "FAIL" };
        let _ = writeln!(out, "{config_hash},overall,,,,{overall}");
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_rows_carry_hash() {
        let mut t = CsvTable::new(&["n", "value"]);
        t.push(row![10u32, 0.5]);
        t.push(row![30u32, "x"]);
        let text = t.render("abc");
        assert_eq!(text, "config_hash,n,value\nabc,10,5.0000000000000000e-1\nabc,30,x\n");
    }

    #[test]
    fn check_constructors() {
        assert!(Check::within("a", -1.9, -2.0, 0.15, Source::Derived).pass);
        assert!(!Check::within("a", -1.8, -2.0, 0.15, Source::Derived).pass);
        assert!(Check::in_range("b", 0.39, 0.3, 0.5, Source::Reported).pass);
        assert!(!Check::greater_than("c", 1.0, 1.0, Source::Reported).pass);
        let r = Report {
            checks: vec![Check::at_most("d", 2.0, 1.0, Source::Identity)],
            ..Report::default()
        };
        assert!(!r.passed());
        assert!(r.verdict("h").ends_with("h,overall,,,,FAIL\n"));
    }

    #[test]
    fn fields_with_delimiters_are_quoted() {
        let r = Report {
            checks: vec![Check::in_range("p", 0.4, 0.3, 0.5, Source::Reported)],
            ..Report::default()
        };
        assert!(r.verdict("h").contains("h,p,4.0000000000000002e-1,\"[0.3,0.5]\",reported,PASS\n"));
        let mut t = CsvTable::new(&["s"]);
        t.push(row!["a\"b"]);
        assert_eq!(t.render("h"), "config_hash,s\nh,\"a\"\"b\"\n");
    }
}
