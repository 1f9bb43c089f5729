//! Result documents and their two serializations.
//!
//! Every document embeds the fully resolved spec and the tool version; the only
//! volatile content is the single `generated_at` field (one line in either
//! format), so re-runs are byte-identical apart from it. JSON is the
//! full-fidelity format; CSV carries the same numbers for plotting, with the
//! provenance header folded into `#` comment lines.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use pdcsim::adversary::DetectionVerdict;
use pdcsim::engine::CountsTable;
use pdcsim::estimator::{DeconvolvedStats, KlyshkoEstimate, Measurement};
use serde::{Deserialize, Serialize};

use crate::spec::ExperimentSpec;

#[derive(Debug)]
pub struct CliError {
    pub kind: &'static str,
    pub message: String,
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.kind, self.message)
    }
}

impl std::error::Error for CliError {}

impl From<pdcsim::Error> for CliError {
    fn from(e: pdcsim::Error) -> Self {
        CliError {
            kind: "model",
            message: e.to_string(),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError {
            kind: "io",
            message: e.to_string(),
        }
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError {
            kind: "format",
            message: e.to_string(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OutputFormat {
    Json,
    Csv,
}

impl OutputFormat {
    pub fn extension(self) -> &'static str {
        match self {
            OutputFormat::Json => "json",
            OutputFormat::Csv => "csv",
        }
    }
}

/// Shared provenance block of every document.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DocumentHeader {
    pub schema_version: u32,
    pub tool: String,
    pub tool_version: String,
    /// RFC 3339 creation time; the single field that differs between re-runs.
    pub generated_at: String,
    pub mode: String,
    pub spec: ExperimentSpec,
}

impl DocumentHeader {
    pub fn new(mode: &str, spec: ExperimentSpec) -> Self {
        DocumentHeader {
            schema_version: crate::spec::SCHEMA_VERSION,
            tool: "pdcsim".into(),
            tool_version: env!("CARGO_PKG_VERSION").into(),
            generated_at: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
            mode: mode.into(),
            spec,
        }
    }

    fn csv_preamble(&self) -> String {
        let spec_line =
            serde_json::to_string(&self.spec).expect("spec serialization cannot fail");
        format!(
            "# {} {} {}\n# generated_at: {}\n# spec: {}\n",
            self.tool, self.tool_version, self.mode, self.generated_at, spec_line
        )
    }
}

fn opt(m: &Option<Measurement>) -> (String, String) {
    match m {
        Some(m) => (m.value.to_string(), m.std_error.to_string()),
        None => (String::new(), String::new()),
    }
}

/// Raw counts of one run; what `simulate` emits and `analyze` consumes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CountsDocument {
    #[serde(flatten)]
    pub header: DocumentHeader,
    pub counts: CountsTable,
}

impl CountsDocument {
    pub fn to_csv(&self) -> String {
        let mut out = self.header.csv_preamble();
        out.push_str("k,herald_totals,joint_click,joint_noclick\n");
        for k in 0..self.counts.herald_totals.len() {
            out.push_str(&format!(
                "{k},{},{},{}\n",
                self.counts.herald_totals[k],
                self.counts.joint_click[k],
                self.counts.joint_noclick[k]
            ));
        }
        out
    }
}

/// Estimates derived from one counts table; what `analyze` emits.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnalysisDocument {
    #[serde(flatten)]
    pub header: DocumentHeader,
    pub accidentals: f64,
    pub klyshko: KlyshkoEstimate,
    pub raw: Vec<Option<Measurement>>,
    pub deconvolved: DeconvolvedStats,
}

impl AnalysisDocument {
    pub fn to_csv(&self) -> String {
        let mut out = self.header.csv_preamble();
        out.push_str(&format!(
            "# klyshko: eta_t={} eta_b={} accidentals={} bob_darks={} herald_darks={}\n",
            self.klyshko.eta_t,
            self.klyshko.eta_b,
            self.accidentals,
            self.klyshko.bob_darks,
            self.klyshko.herald_darks
        ));
        out.push_str("n,p_raw,p_raw_err,p_deconv,p_deconv_err,r,r_err\n");
        for n in 0..self.raw.len() {
            let (pr, pre) = opt(&self.raw[n]);
            let (pd, pde) = opt(self.deconvolved.p_click.get(n).unwrap_or(&None));
            let (r, re) = opt(self.deconvolved.ratio.get(n).unwrap_or(&None));
            out.push_str(&format!("{n},{pr},{pre},{pd},{pde},{r},{re}\n"));
        }
        out
    }
}

/// Closed-form curves; what `theory` emits.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TheoryRow {
    pub eta_c: f64,
    pub n: usize,
    /// Conditional click probability from the closed form, darks folded in.
    pub p_closed_form: f64,
    /// Same quantity routed through bin occupancy and its inverse.
    pub p_binned: f64,
    pub r_binned: f64,
}

/// One point of the efficiency-versus-power sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Table1Row {
    pub power_w: f64,
    pub mean_pairs: f64,
    pub eta_t_hat: f64,
    pub eta_t_err: f64,
    pub eta_b_hat: f64,
    pub eta_b_err: f64,
}

/// One point of the conditional-probability-versus-transmission sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Fig3Row {
    pub eta_c: f64,
    pub n: usize,
    pub p_raw: Option<Measurement>,
    pub p_deconv: Option<Measurement>,
    pub p_theory: f64,
    pub r: Option<Measurement>,
}

/// One point of the ratio-versus-brightness sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Fig4Row {
    pub power_w: f64,
    pub mean_pairs: f64,
    pub n: usize,
    pub r_avg: Option<Measurement>,
    /// Theory ratios averaged with the same weights as the measurement.
    pub r_theory: Option<f64>,
}

pub trait CsvRow {
    fn csv_header() -> &'static str;
    fn csv_line(&self) -> String;
}

impl CsvRow for TheoryRow {
    fn csv_header() -> &'static str {
        "eta_c,n,p_closed_form,p_binned,r_binned"
    }
    fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{}",
            self.eta_c, self.n, self.p_closed_form, self.p_binned, self.r_binned
        )
    }
}

impl CsvRow for Table1Row {
    fn csv_header() -> &'static str {
        "power_nw,mean_pairs,eta_t_hat,eta_t_err,eta_b_hat,eta_b_err"
    }
    fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.power_w * 1e9,
            self.mean_pairs,
            self.eta_t_hat,
            self.eta_t_err,
            self.eta_b_hat,
            self.eta_b_err
        )
    }
}

impl CsvRow for Fig3Row {
    fn csv_header() -> &'static str {
        "eta_c,n,p_raw,p_raw_err,p_deconv,p_deconv_err,p_theory,r,r_err"
    }
    fn csv_line(&self) -> String {
        let (pr, pre) = opt(&self.p_raw);
        let (pd, pde) = opt(&self.p_deconv);
        let (r, re) = opt(&self.r);
        format!(
            "{},{},{pr},{pre},{pd},{pde},{},{r},{re}",
            self.eta_c, self.n, self.p_theory
        )
    }
}

impl CsvRow for Fig4Row {
    fn csv_header() -> &'static str {
        "power_nw,mean_pairs,n,r_avg,r_err,r_theory"
    }
    fn csv_line(&self) -> String {
        let (r, re) = opt(&self.r_avg);
        let rt = self.r_theory.map_or(String::new(), |v| v.to_string());
        format!(
            "{},{},{},{r},{re},{rt}",
            self.power_w * 1e9,
            self.mean_pairs,
            self.n
        )
    }
}

/// Generic sweep output: provenance plus one typed row per point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepDocument<R> {
    #[serde(flatten)]
    pub header: DocumentHeader,
    pub rows: Vec<R>,
}

impl<R: CsvRow> SweepDocument<R> {
    pub fn to_csv(&self) -> String {
        let mut out = self.header.csv_preamble();
        out.push_str(R::csv_header());
        out.push('\n');
        for row in &self.rows {
            out.push_str(&row.csv_line());
            out.push('\n');
        }
        out
    }
}

/// Counts regrouped into the click-statistics table layout (rows: no-click,
/// click, total; columns: herald click numbers 0..=4).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClickStatisticsDocument {
    #[serde(flatten)]
    pub header: DocumentHeader,
    pub counts: CountsTable,
    pub columns: usize,
}

impl ClickStatisticsDocument {
    pub fn to_csv(&self) -> String {
        let mut out = self.header.csv_preamble();
        out.push_str("quantity");
        for n in 0..=self.columns {
            out.push_str(&format!(",{n}-photon"));
        }
        out.push('\n');
        let rows: [(&str, &[f64]); 3] = [
            ("noclick", &self.counts.joint_noclick),
            ("click", &self.counts.joint_click),
            ("total", &self.counts.herald_totals),
        ];
        for (label, data) in rows {
            out.push_str(label);
            for n in 0..=self.columns {
                out.push_str(&format!(",{}", data[n]));
            }
            out.push('\n');
        }
        out
    }
}

/// Attack run outcome: calibration, observed statistics, and the verdict.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackDocument {
    #[serde(flatten)]
    pub header: DocumentHeader,
    pub honest_rate_expected: f64,
    pub attacked_rate_expected: f64,
    pub attacked_rate_observed: f64,
    /// z-score of the observed rate against the honest expectation.
    pub rate_z: f64,
    pub counts: CountsTable,
    pub observed: DeconvolvedStats,
    pub reference_ratios: Vec<Option<Measurement>>,
    pub verdict: DetectionVerdict,
}

impl AttackDocument {
    pub fn to_csv(&self) -> String {
        let mut out = self.header.csv_preamble();
        out.push_str(&format!(
            "# verdict: detected={} statistic={} threshold={} p_value={} alpha={}\n",
            self.verdict.detected,
            self.verdict.statistic,
            self.verdict.threshold,
            self.verdict.p_value,
            self.verdict.alpha
        ));
        out.push_str(&format!(
            "# rates: honest_expected={} attacked_expected={} attacked_observed={} rate_z={}\n",
            self.honest_rate_expected,
            self.attacked_rate_expected,
            self.attacked_rate_observed,
            self.rate_z
        ));
        out.push_str("n,r_observed,r_observed_err,r_expected,shift_z\n");
        for shift in &self.verdict.per_photon {
            let (r, re) = opt(self.observed.ratio.get(shift.n).unwrap_or(&None));
            let (rt, _) = opt(self.reference_ratios.get(shift.n).unwrap_or(&None));
            out.push_str(&format!("{},{r},{re},{rt},{}\n", shift.n, shift.z));
        }
        out
    }
}

pub fn render_json<T: Serialize>(doc: &T) -> Result<String, CliError> {
    let mut s = serde_json::to_string_pretty(doc)?;
    s.push('\n');
    Ok(s)
}

/// Writes one document in the chosen format next to `base` and returns the path.
pub fn write_document(
    base: &Path,
    format: OutputFormat,
    json: impl FnOnce() -> Result<String, CliError>,
    csv: impl FnOnce() -> String,
) -> Result<PathBuf, CliError> {
    let path = base.with_extension(format.extension());
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    let body = match format {
        OutputFormat::Json => json()?,
        OutputFormat::Csv => csv(),
    };
    fs::write(&path, body).map_err(|e| CliError {
        kind: "io",
        message: format!("writing {}: {e}", path.display()),
    })?;
    Ok(path)
}

/// Reads a counts document in either format, reconstructing the table exactly
/// (all numbers round-trip at full precision).
pub fn load_counts_document(path: &Path) -> Result<(ExperimentSpec, CountsTable), CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError {
        kind: "io",
        message: format!("reading {}: {e}", path.display()),
    })?;
    let is_csv = path
        .extension()
        .map_or(false, |e| e.eq_ignore_ascii_case("csv"));
    if is_csv {
        load_counts_csv(&text)
    } else {
        let doc: CountsDocument = serde_json::from_str(&text).map_err(|e| CliError {
            kind: "format",
            message: format!("parsing {}: {e}", path.display()),
        })?;
        doc.counts.validate()?;
        Ok((doc.header.spec, doc.counts))
    }
}

fn load_counts_csv(text: &str) -> Result<(ExperimentSpec, CountsTable), CliError> {
    let mut spec: Option<ExperimentSpec> = None;
    let mut totals = Vec::new();
    let mut clicks = Vec::new();
    let mut noclicks = Vec::new();
    for line in text.lines() {
        if let Some(spec_json) = line.strip_prefix("# spec: ") {
            spec = Some(ExperimentSpec::from_json(spec_json)?);
            continue;
        }
        if line.starts_with('#') || line.starts_with("k,") || line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 4 {
            return Err(CliError {
                kind: "format",
                message: format!("counts row needs 4 fields: {line}"),
            });
        }
        let parse = |s: &str| -> Result<f64, CliError> {
            s.parse().map_err(|_| CliError {
                kind: "format",
                message: format!("bad number {s:?} in counts row"),
            })
        };
        totals.push(parse(fields[1])?);
        clicks.push(parse(fields[2])?);
        noclicks.push(parse(fields[3])?);
    }
    let spec = spec.ok_or(CliError {
        kind: "format",
        message: "counts CSV is missing its '# spec:' header line".into(),
    })?;
    let counts = CountsTable {
        n_triggers: totals.iter().sum(),
        n_bob: clicks.iter().sum(),
        n_coincidence: clicks.iter().skip(1).sum(),
        herald_totals: totals,
        joint_click: clicks,
        joint_noclick: noclicks,
    };
    counts.validate()?;
    Ok((spec, counts))
}

#[cfg(test)]
mod tests {
    use super::*;
    use pdcsim::engine::{run, SystemConfig};

    fn doc() -> CountsDocument {
        let spec = ExperimentSpec {
            system: SystemConfig {
                n_triggers: 50_000,
                ..SystemConfig::default()
            },
            ..ExperimentSpec::default()
        };
        let counts = run(&spec.system).unwrap();
        CountsDocument {
            header: DocumentHeader::new("simulate", spec),
            counts,
        }
    }

    #[test]
    fn json_counts_round_trip_exactly() {
        let d = doc();
        let text = render_json(&d).unwrap();
        let back: CountsDocument = serde_json::from_str(&text).unwrap();
        assert_eq!(back, d);
    }

    #[test]
    fn csv_counts_round_trip_exactly() {
        let d = doc();
        let (spec, counts) = load_counts_csv(&d.to_csv()).unwrap();
        assert_eq!(spec, d.header.spec);
        assert_eq!(counts, d.counts);
    }

    #[test]
    fn csv_loader_rejects_malformed_input() {
        assert!(load_counts_csv("k,herald_totals,joint_click,joint_noclick\n0,1,1,0\n").is_err());
        let d = doc();
        let broken = d.to_csv().replace("# spec:", "# nope:");
        assert!(load_counts_csv(&broken).is_err());
        let short_row = format!("{}\n5,1\n", d.to_csv().trim_end());
        assert!(load_counts_csv(&short_row).is_err());
    }

    #[test]
    fn volatile_field_is_exactly_one_line_in_both_formats() {
        let d = doc();
        let json = render_json(&d).unwrap();
        assert_eq!(
            json.lines().filter(|l| l.contains("generated_at")).count(),
            1
        );
        let csv = d.to_csv();
        assert_eq!(
            csv.lines().filter(|l| l.contains("generated_at")).count(),
            1
        );
    }
}
