use std::fmt::Write as _;
use std::io::Write;

use crate::error::{LabError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Provenance {
    Paper,
    Derived,
    None,
}

impl Provenance {
    pub fn tag(self) -> &'static str {
        match self {
            Provenance::Paper => "paper",
            Provenance::Derived => "derived",
            Provenance::None => "none",
        }
    }
}

/// How a row is judged.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Tolerance {
    /// `|measured − reference| ≤ tol`
    Abs(f64),
    /// `|measured − reference| ≤ tol·|reference|`
    Rel(f64),
    /// `measured ≤ bound`
    AtMost(f64),
    /// `measured > bound`
    Above(f64),
    /// reported, never judged
    Info,
}

impl Tolerance {
    pub fn label(self) -> String {
        match self {
            Tolerance::Abs(t) => format!("abs:{t:e}"),
            Tolerance::Rel(t) => format!("rel:{t:e}"),
            Tolerance::AtMost(t) => format!("le:{t:e}"),
            Tolerance::Above(t) => format!("gt:{t:e}"),
            Tolerance::Info => "info".into(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Verdict {
    Pass,
    Fail,
    Info,
}

impl Verdict {
    pub fn label(self) -> &'static str {
        match self {
            Verdict::Pass => "pass",
            Verdict::Fail => "fail",
            Verdict::Info => "info",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReportRow {
    pub experiment: String,
    pub k: Option<u32>,
    pub quantity: String,
    pub measured: f64,
    pub reference: Option<f64>,
    pub provenance: Provenance,
    pub tolerance: Tolerance,
    pub verdict: Verdict,
    /// Closed form or construction the reference comes from.
    pub source: String,
}

impl ReportRow {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        experiment: &str,
        k: Option<u32>,
        quantity: impl Into<String>,
        measured: f64,
        reference: Option<f64>,
        provenance: Provenance,
        tolerance: Tolerance,
        source: impl Into<String>,
    ) -> ReportRow {
        let verdict = judge(measured, reference, tolerance);
        ReportRow {
            experiment: experiment.to_string(),
            k,
            quantity: quantity.into(),
            measured,
            reference,
            provenance,
            tolerance,
            verdict,
            source: source.into(),
        }
    }

    pub fn passed(&self) -> bool {
        self.verdict != Verdict::Fail
    }
}

fn judge(measured: f64, reference: Option<f64>, tolerance: Tolerance) -> Verdict {
    if tolerance == Tolerance::Info {
        return Verdict::Info;
    }
    if !measured.is_finite() {
        return Verdict::Fail;
    }
    let ok = match (tolerance, reference) {
        (Tolerance::Abs(t), Some(r)) => (measured - r).abs() <= t,
        (Tolerance::Rel(t), Some(r)) => (measured - r).abs() <= t * r.abs(),
        (Tolerance::AtMost(b), _) => measured <= b,
        (Tolerance::Above(b), _) => measured > b,
        _ => false,
    };
    if ok {
        Verdict::Pass
    } else {
        Verdict::Fail
    }
}

pub const CSV_HEADER: [&str; 9] = [
    "experiment",
    "k",
    "quantity",
    "measured",
    "reference",
    "provenance",
    "tolerance",
    "pass",
    "source",
];

/// `{:.16e}`: 17 significant digits, enough to round-trip an `f64`.
pub fn format_number(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        format!("{v}")
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Report {
    pub rows: Vec<ReportRow>,
}

impl Report {
    pub fn new(mut rows: Vec<ReportRow>) -> Report {
        rows.sort_by(|a, b| {
            (&a.experiment, a.k, &a.quantity).cmp(&(&b.experiment, b.k, &b.quantity))
        });
        Report { rows }
    }

    pub fn failures(&self) -> impl Iterator<Item = &ReportRow> {
        self.rows.iter().filter(|r| !r.passed())
    }

    pub fn all_passed(&self) -> bool {
        self.failures().next().is_none()
    }

    /// First row matching experiment, order and quantity.
    pub fn find(&self, experiment: &str, k: Option<u32>, quantity: &str) -> Option<&ReportRow> {
        self.rows
            .iter()
            .find(|r| r.experiment == experiment && r.k == k && r.quantity == quantity)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let io = |e: csv::Error| LabError::Usage(format!("cannot write CSV: {e}"));
        w.write_record(CSV_HEADER).map_err(io)?;
        for r in &self.rows {
            w.write_record([
                r.experiment.clone(),
                r.k.map(|k| k.to_string()).unwrap_or_default(),
                r.quantity.clone(),
                format_number(r.measured),
                r.reference.map(format_number).unwrap_or_default(),
                r.provenance.tag().to_string(),
                r.tolerance.label(),
                r.verdict.label().to_string(),
                r.source.clone(),
            ])
            .map_err(io)?;
        }
        w.flush()
            .map_err(|e| LabError::Usage(format!("cannot write CSV: {e}")))?;
        Ok(())
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        Ok(String::from_utf8(buf).expect("CSV output is UTF-8"))
    }

    /// Array of objects with the CSV keys; numbers keep 17 significant digits
    /// and non-finite values become `null`.
    pub fn to_json(&self) -> String {
        let num = |v: Option<f64>| match v {
            Some(x) if x.is_finite() => format_number(x),
            _ => "null".to_string(),
        };
        let s = |v: &str| serde_json::to_string(v).expect("strings serialize");
        let mut out = String::from("[\n");
        for (i, r) in self.rows.iter().enumerate() {
            let k = r.k.map(|k| k.to_string()).unwrap_or_else(|| "null".into());
            let _ = write!(
                out,
                "  {{\"experiment\": {}, \"k\": {k}, \"quantity\": {}, \"measured\": {}, \"reference\": {}, \"provenance\": {}, \"tolerance\": {}, \"pass\": {}, \"source\": {}}}",
                s(&r.experiment),
                s(&r.quantity),
                num(Some(r.measured)),
                num(r.reference),
                s(r.provenance.tag()),
                s(&r.tolerance.label()),
                s(r.verdict.label()),
                s(&r.source),
            );
            out.push_str(if i + 1 < self.rows.len() { ",\n" } else { "\n" });
        }
        out.push_str("]\n");
        out
    }
}
