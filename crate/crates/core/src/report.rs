//! Command orchestration behind the CLI and the JSON reports it emits.
//!
//! Every command builds a serializable report; the text rendering is derived
//! from the same struct so the two never disagree.

use std::fmt::Write as _;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::evidence::{
    combine_studies, grouping_digest, pergroup_evidence, pooled_evidence, posterior_odds,
    within_group_ss, EvidenceReport, Extended, PosteriorOdds,
};
use crate::simulation::{
    error_correlation, fabricate, mse_estimate, null_calibration, CalibrationConfig,
    CalibrationReport, CorrelationEstimate, RawDataset,
};
use crate::study::{per_cell_count, Rounding, StudySummary};
use crate::variance::{recover_sigma2, worst_case_table, SigmaRecovery, VarianceEstimate};

pub const SCHEMA_VERSION: &str = "1";
pub const SIGMA2_RESOLUTION_ORDER: &str = "flag > study override > F-statistic recovery";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelChoice {
    Pooled,
    PerGroup,
    Both,
}

impl ModelChoice {
    fn pooled(self) -> bool {
        matches!(self, ModelChoice::Pooled | ModelChoice::Both)
    }

    fn per_group(self) -> bool {
        matches!(self, ModelChoice::PerGroup | ModelChoice::Both)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Sigma2Source {
    Flag,
    StudyOverride,
    FRecovery,
    /// Sensitivity runs only: nothing to re-resolve, original value reused.
    Original,
}

#[derive(Debug, Clone, Serialize)]
pub struct ResolvedSigma2 {
    pub value: f64,
    pub source: Sigma2Source,
    pub resolution_order: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub recovery: Option<VarianceEstimate>,
}

fn check_positive(name: &str, v: Option<f64>) -> Result<()> {
    match v {
        Some(x) if !(x.is_finite() && x > 0.0) => Err(Error::Validation(format!(
            "{name} must be positive, got {x}"
        ))),
        _ => Ok(()),
    }
}

/// Resolves sigma^2: explicit flag, then the study's override, then recovery
/// from the published F-statistics.
pub fn resolve_sigma2(study: &StudySummary, flag: Option<f64>) -> Result<ResolvedSigma2> {
    check_positive("sigma2", flag)?;
    let (value, source, recovery) = if let Some(v) = flag {
        (v, Sigma2Source::Flag, None)
    } else if let Some(v) = study.sigma2_override {
        (v, Sigma2Source::StudyOverride, None)
    } else if study.f_stats.is_empty() {
        return Err(Error::Unresolvable(
            "no sigma2 flag, no sigma2_override and no f_statistics to recover it from".into(),
        ));
    } else {
        let rec = recover_sigma2(&study.table, &study.f_stats);
        let pooled = rec.pooled.ok_or_else(|| {
            Error::Unresolvable(format!(
                "no F-statistic yielded a usable variance: {}",
                rec.records
                    .iter()
                    .filter_map(|r| r.error.as_ref().map(|e| format!("{}: {e}", r.label)))
                    .collect::<Vec<_>>()
                    .join("; ")
            ))
        })?;
        (pooled.value, Sigma2Source::FRecovery, Some(pooled))
    };
    Ok(ResolvedSigma2 {
        value,
        source,
        resolution_order: SIGMA2_RESOLUTION_ORDER,
        recovery,
    })
}

#[derive(Debug, Clone, Default)]
pub struct AnalyzeOptions {
    pub model: Option<ModelChoice>,
    pub sigma2: Option<f64>,
    pub n: Option<f64>,
    pub prior_odds: Option<f64>,
}

impl AnalyzeOptions {
    fn model(&self) -> ModelChoice {
        self.model.unwrap_or(ModelChoice::Both)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct InputsSection {
    pub cells: usize,
    pub groups: Vec<usize>,
    pub grouping_digest: String,
    pub total_observations: f64,
    pub n: f64,
    pub n_source: &'static str,
    pub rounding_decimals: Option<u32>,
    pub model: ModelChoice,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct EvidenceSection {
    pub pooled: Option<EvidenceReport>,
    pub per_group: Option<EvidenceReport>,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct OddsSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pooled: Option<PosteriorOdds>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub per_group: Option<PosteriorOdds>,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct Flags {
    pub degenerate: bool,
    pub rho_clamped: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub posterior_exceeds_one: Option<bool>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct CellChange {
    pub id: String,
    pub original: f64,
    pub worst_case: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SensitivitySection {
    pub worst_case_table: Vec<CellChange>,
    pub within_group_ss: (f64, f64),
    pub sigma2: ResolvedSigma2,
    pub evidence: EvidenceSection,
}

#[derive(Debug, Clone, Serialize)]
pub struct AnalysisReport {
    pub version: &'static str,
    pub command: &'static str,
    pub inputs: InputsSection,
    pub sigma2: ResolvedSigma2,
    pub evidence: EvidenceSection,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sensitivity: Option<SensitivitySection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub odds: Option<OddsSection>,
    pub flags: Flags,
}

fn compute_evidence(
    study: &StudySummary,
    n: f64,
    sigma2: f64,
    model: ModelChoice,
) -> Result<EvidenceSection> {
    let means = study.table.means();
    let groups = study.group_indices();
    let digest = grouping_digest(&study.grouping);
    Ok(EvidenceSection {
        pooled: if model.pooled() {
            Some(pooled_evidence(&means, &groups, n, sigma2, digest.clone())?)
        } else {
            None
        },
        per_group: if model.per_group() {
            Some(pergroup_evidence(&means, &groups, n, sigma2, digest)?)
        } else {
            None
        },
    })
}

fn note_evidence_flags(flags: &mut Flags, ev: &EvidenceSection) {
    for r in ev.pooled.iter().chain(ev.per_group.iter()) {
        flags.degenerate |= r.degenerate.iter().any(|&d| d);
        flags.rho_clamped |= r.rho_clamped.iter().any(|&d| d);
    }
}

fn inputs_section(study: &StudySummary, opts: &AnalyzeOptions) -> Result<InputsSection> {
    check_positive("n", opts.n)?;
    let (n, n_source) = match opts.n {
        Some(n) => (n, "flag"),
        None => (per_cell_count(&study.table), "total_observations / cells"),
    };
    Ok(InputsSection {
        cells: study.table.cells().len(),
        groups: study.grouping.groups.iter().map(Vec::len).collect(),
        grouping_digest: grouping_digest(&study.grouping),
        total_observations: study.table.total_observations(),
        n,
        n_source,
        rounding_decimals: match study.table.rounding() {
            Rounding::Decimals(d) => Some(d),
            Rounding::Exact => None,
        },
        model: opts.model(),
    })
}

/// Evidence for the study as published.
pub fn analyze(study: &StudySummary, opts: &AnalyzeOptions) -> Result<AnalysisReport> {
    check_positive("prior odds", opts.prior_odds)?;
    let inputs = inputs_section(study, opts)?;
    let sigma2 = resolve_sigma2(study, opts.sigma2)?;
    let evidence = compute_evidence(study, inputs.n, sigma2.value, opts.model())?;
    let mut flags = Flags::default();
    note_evidence_flags(&mut flags, &evidence);
    if let Some(rec) = &sigma2.recovery {
        if rec.sources.len() < study.f_stats.len() {
            flags.warnings.push(format!(
                "{} of {} F-statistics left out of the pooled sigma2 (errors or outliers; see `sigma`)",
                study.f_stats.len() - rec.sources.len(),
                study.f_stats.len()
            ));
        }
    }
    let odds = match opts.prior_odds {
        None => None,
        Some(prior) => {
            let section = OddsSection {
                pooled: evidence
                    .pooled
                    .as_ref()
                    .map(|r| posterior_odds(prior, r.v.value()))
                    .transpose()?,
                per_group: evidence
                    .per_group
                    .as_ref()
                    .map(|r| posterior_odds(prior, r.v.value()))
                    .transpose()?,
            };
            flags.posterior_exceeds_one = Some(
                section
                    .pooled
                    .iter()
                    .chain(section.per_group.iter())
                    .any(|o| o.exceeds_one),
            );
            Some(section)
        }
    };
    Ok(AnalysisReport {
        version: SCHEMA_VERSION,
        command: "analyze",
        inputs,
        sigma2,
        evidence,
        sensitivity: None,
        odds,
        flags,
    })
}

/// Evidence for the study and for its worst-case table.
///
/// sigma^2 for the worst-case table: `worst_sigma2` if given, else recovered
/// from the F-statistics on the worst-case means, else the original value.
pub fn sensitivity(
    study: &StudySummary,
    opts: &AnalyzeOptions,
    worst_sigma2: Option<f64>,
) -> Result<AnalysisReport> {
    check_positive("worst-case sigma2", worst_sigma2)?;
    let mut report = analyze(study, opts)?;
    report.command = "sensitivity";
    let worst = worst_case_table(&study.table, &study.grouping)?;
    let worst_study = study.with_table(worst)?;
    let sigma2 = match worst_sigma2 {
        Some(v) => ResolvedSigma2 {
            value: v,
            source: Sigma2Source::Flag,
            resolution_order: SIGMA2_RESOLUTION_ORDER,
            recovery: None,
        },
        None => {
            let rec = if study.f_stats.is_empty() {
                None
            } else {
                recover_sigma2(&worst_study.table, &worst_study.f_stats).pooled
            };
            match rec {
                Some(p) => ResolvedSigma2 {
                    value: p.value,
                    source: Sigma2Source::FRecovery,
                    resolution_order: SIGMA2_RESOLUTION_ORDER,
                    recovery: Some(p),
                },
                None => ResolvedSigma2 {
                    value: report.sigma2.value,
                    source: Sigma2Source::Original,
                    resolution_order: SIGMA2_RESOLUTION_ORDER,
                    recovery: None,
                },
            }
        }
    };
    let evidence = compute_evidence(&worst_study, report.inputs.n, sigma2.value, opts.model())?;
    note_evidence_flags(&mut report.flags, &evidence);
    let changes = study
        .table
        .cells()
        .iter()
        .zip(worst_study.table.cells())
        .map(|(a, b)| CellChange {
            id: a.id.clone(),
            original: a.mean,
            worst_case: b.mean,
        })
        .collect();
    report.sensitivity = Some(SensitivitySection {
        worst_case_table: changes,
        within_group_ss: (
            within_group_ss(&study.table, &study.grouping)?,
            within_group_ss(&worst_study.table, &worst_study.grouping)?,
        ),
        sigma2,
        evidence,
    });
    Ok(report)
}

#[derive(Debug, Clone, Serialize)]
pub struct SigmaReport {
    pub version: &'static str,
    pub command: &'static str,
    #[serde(flatten)]
    pub recovery: SigmaRecovery,
}

/// Variance recovered from every F-statistic of the study, and the pool.
pub fn sigma(study: &StudySummary) -> Result<SigmaReport> {
    if study.f_stats.is_empty() {
        return Err(Error::Unresolvable("study has no f_statistics".into()));
    }
    Ok(SigmaReport {
        version: SCHEMA_VERSION,
        command: "sigma",
        recovery: recover_sigma2(&study.table, &study.f_stats),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct CombineInput {
    pub source: String,
    pub v: Extended,
}

#[derive(Debug, Clone, Serialize)]
pub struct CombineReport {
    pub version: &'static str,
    pub command: &'static str,
    pub inputs: Vec<CombineInput>,
    pub combined: Extended,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub odds: Option<PosteriorOdds>,
}

/// Parses `"infinity"`/`"inf"` or a decimal number.
pub fn parse_extended(s: &str) -> Option<f64> {
    match s.trim().to_ascii_lowercase().as_str() {
        "infinity" | "inf" | "+inf" => Some(f64::INFINITY),
        t => t.parse::<f64>().ok().filter(|v| !v.is_nan()),
    }
}

/// Evidential value stored in a JSON report under `evidence.<model>.v`.
pub fn v_from_report(json: &str, per_group: bool) -> Result<f64> {
    let doc: serde_json::Value = serde_json::from_str(json)?;
    let key = if per_group { "per_group" } else { "pooled" };
    let v = doc
        .get("evidence")
        .and_then(|e| e.get(key))
        .and_then(|m| m.get("v"))
        .ok_or_else(|| Error::Parse(format!("report has no evidence.{key}.v")))?;
    match v {
        serde_json::Value::Number(x) => x
            .as_f64()
            .ok_or_else(|| Error::Parse("evidence value is not a float".into())),
        serde_json::Value::String(s) => parse_extended(s)
            .ok_or_else(|| Error::Parse(format!("evidence value `{s}` is not a number"))),
        _ => Err(Error::Parse(format!("evidence.{key}.v has the wrong type"))),
    }
}

/// Multiplies evidential values of independent studies.
pub fn combine(inputs: Vec<(String, f64)>, prior_odds: Option<f64>) -> Result<CombineReport> {
    check_positive("prior odds", prior_odds)?;
    let values: Vec<f64> = inputs.iter().map(|(_, v)| *v).collect();
    let combined = combine_studies(&values)?;
    Ok(CombineReport {
        version: SCHEMA_VERSION,
        command: "combine",
        inputs: inputs
            .into_iter()
            .map(|(source, v)| CombineInput {
                source,
                v: Extended(v),
            })
            .collect(),
        combined: Extended(combined),
        odds: prior_odds
            .map(|p| posterior_odds(p, combined))
            .transpose()?,
    })
}

#[derive(Debug, Clone)]
pub struct SimulateOptions {
    pub cells: usize,
    pub n: usize,
    pub rho: f64,
    pub sigma2: f64,
    pub mu: Option<Vec<f64>>,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SimulationReport {
    pub version: &'static str,
    pub command: &'static str,
    pub seed: u64,
    pub generator: &'static str,
    pub cells: usize,
    pub n: usize,
    pub rho: f64,
    pub sigma2: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error_correlation: Option<CorrelationEstimate>,
    pub error_variance: f64,
    pub mse: f64,
    pub cell_means: Vec<f64>,
}

/// Fabricates one raw dataset and summarizes it.
pub fn simulate(opts: &SimulateOptions) -> Result<(SimulationReport, RawDataset)> {
    let mu = opts.mu.clone().unwrap_or_else(|| vec![0.0; opts.cells]);
    let data = fabricate(opts.cells, opts.n, &mu, opts.sigma2, opts.rho, opts.seed)?;
    let errors: Vec<f64> = data.errors().into_iter().flatten().collect();
    let error_variance = errors.iter().map(|e| e * e).sum::<f64>() / errors.len() as f64;
    let corr = if opts.cells >= 2 && opts.n >= 4 {
        Some(error_correlation(&data, 50)?)
    } else {
        None
    };
    let report = SimulationReport {
        version: SCHEMA_VERSION,
        command: "simulate",
        seed: opts.seed,
        generator: data.provenance.generator,
        cells: opts.cells,
        n: opts.n,
        rho: opts.rho,
        sigma2: opts.sigma2,
        error_correlation: corr,
        error_variance,
        mse: mse_estimate(&data)?,
        cell_means: data.cell_means(),
    };
    Ok((report, data))
}

#[derive(Debug, Clone, Serialize)]
pub struct CalibrateReport {
    pub version: &'static str,
    pub command: &'static str,
    pub sigma2_source: Sigma2Source,
    #[serde(flatten)]
    pub calibration: CalibrationReport,
}

pub struct CalibrateOptions {
    pub sigma2: Option<f64>,
    pub reps: usize,
    pub seed: u64,
    pub rho: f64,
    pub thresholds: Vec<f64>,
}

/// Simulated distribution of the evidential value for the study's design.
pub fn calibrate(study: &StudySummary, opts: &CalibrateOptions) -> Result<CalibrateReport> {
    let sigma2 = resolve_sigma2(study, opts.sigma2)?;
    let config = CalibrationConfig {
        sigma2: sigma2.value,
        reps: opts.reps,
        seed: opts.seed,
        rho: opts.rho,
        thresholds: opts.thresholds.clone(),
    };
    Ok(CalibrateReport {
        version: SCHEMA_VERSION,
        command: "calibrate",
        sigma2_source: sigma2.source,
        calibration: null_calibration(study, &config)?,
    })
}

// --- text rendering --------------------------------------------------------

fn fmt4(x: f64) -> String {
    if x.is_infinite() {
        "infinity".into()
    } else {
        format!("{x:.4}")
    }
}

fn render_evidence(out: &mut String, title: &str, r: &EvidenceReport) {
    let _ = writeln!(out, "{title}: V = {}", r.v);
    for k in 0..r.s_values.len() {
        let _ = writeln!(
            out,
            "  {:<8} S = {:<8} threshold = {:<8} rho_hat = {:<8} chi = {}{}{}",
            if r.s_values.len() == 1 {
                "all".to_string()
            } else {
                format!("group {k}")
            },
            fmt4(r.s_values[k]),
            fmt4(r.thresholds[k]),
            fmt4(r.rho_hats[k]),
            r.chi_values[k],
            if r.degenerate[k] {
                "  [degenerate]"
            } else {
                ""
            },
            if r.rho_clamped[k] {
                "  [rho clamped]"
            } else {
                ""
            },
        );
    }
}

fn render_evidence_section(out: &mut String, ev: &EvidenceSection) {
    if let Some(r) = &ev.pooled {
        render_evidence(out, "pooled model", r);
    }
    if let Some(r) = &ev.per_group {
        render_evidence(out, "per-group model", r);
    }
}

impl AnalysisReport {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let i = &self.inputs;
        let _ = writeln!(
            out,
            "{} (schema {}): {} cells in groups {:?}, n = {} ({})",
            self.command,
            self.version,
            i.cells,
            i.groups,
            fmt4(i.n),
            i.n_source
        );
        let _ = writeln!(
            out,
            "sigma2 = {} from {:?} [order: {}]",
            fmt4(self.sigma2.value),
            self.sigma2.source,
            self.sigma2.resolution_order
        );
        render_evidence_section(&mut out, &self.evidence);
        if let Some(s) = &self.sensitivity {
            let _ = writeln!(
                out,
                "worst-case table (within-group SS {} -> {}):",
                fmt4(s.within_group_ss.0),
                fmt4(s.within_group_ss.1)
            );
            for c in &s.worst_case_table {
                let _ = writeln!(
                    out,
                    "  {:<40} {:>8} -> {:>8}",
                    c.id,
                    fmt4(c.original),
                    fmt4(c.worst_case)
                );
            }
            let _ = writeln!(
                out,
                "worst-case sigma2 = {} from {:?}",
                fmt4(s.sigma2.value),
                s.sigma2.source
            );
            render_evidence_section(&mut out, &s.evidence);
        }
        if let Some(o) = &self.odds {
            for (name, p) in [("pooled", &o.pooled), ("per-group", &o.per_group)] {
                if let Some(p) = p {
                    let _ = writeln!(
                        out,
                        "{name}: prior odds {} x V {} = posterior odds {}{}",
                        fmt4(p.prior_odds),
                        p.evidential_value,
                        p.posterior_odds,
                        if p.exceeds_one { "  (exceeds 1)" } else { "" }
                    );
                }
            }
        }
        for w in &self.flags.warnings {
            let _ = writeln!(out, "warning: {w}");
        }
        out
    }
}

impl SigmaReport {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for r in &self.recovery.records {
            match (&r.sigma2, &r.error) {
                (Some(s), _) => {
                    let _ = write!(out, "{}: MSE = {}", r.label, fmt4(*s));
                    if let Some(ms) = &r.mean_square {
                        let _ = write!(out, " (effect MS {} on {} df)", fmt4(ms.value), ms.df);
                    }
                    if let Some((lo, hi)) = r.interval {
                        let _ = write!(out, " rounding interval [{}, {}]", fmt4(lo), fmt4(hi));
                    }
                    if r.outlier {
                        out.push_str("  [outlier, not pooled]");
                    }
                    if r.implausibly_small {
                        out.push_str("  [implausibly small]");
                    }
                    out.push('\n');
                }
                (None, Some(e)) => {
                    let _ = writeln!(out, "{}: error: {e}", r.label);
                }
                (None, None) => {}
            }
        }
        match &self.recovery.pooled {
            Some(p) => {
                let _ = write!(out, "pooled sigma2 = {} ({})", fmt4(p.value), p.method);
                if let Some((lo, hi)) = p.interval {
                    let _ = write!(out, ", interval [{}, {}]", fmt4(lo), fmt4(hi));
                }
                out.push('\n');
            }
            None => out.push_str("pooled sigma2: unresolved\n"),
        }
        out
    }
}

impl CombineReport {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for i in &self.inputs {
            let _ = writeln!(out, "{}: V = {}", i.source, i.v);
        }
        let _ = writeln!(out, "combined V = {}", self.combined);
        if let Some(p) = &self.odds {
            let _ = writeln!(
                out,
                "prior odds {} -> posterior odds {}{}",
                fmt4(p.prior_odds),
                p.posterior_odds,
                if p.exceeds_one { "  (exceeds 1)" } else { "" }
            );
        }
        out
    }
}

impl SimulationReport {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "simulated {} cells x {} subjects, rho = {}, sigma2 = {} (seed {}, {})",
            self.cells, self.n, self.rho, self.sigma2, self.seed, self.generator
        );
        if let Some(c) = &self.error_correlation {
            let _ = writeln!(
                out,
                "empirical error correlation = {} ± {}",
                fmt4(c.mean),
                fmt4(c.std_error)
            );
        }
        let _ = writeln!(
            out,
            "empirical error variance = {}",
            fmt4(self.error_variance)
        );
        let _ = writeln!(out, "mean square error = {}", fmt4(self.mse));
        out
    }
}

impl CalibrateReport {
    pub fn to_text(&self) -> String {
        let c = &self.calibration;
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{} replicates, rho = {}, sigma2 = {} ({:?}), n = {} per cell, seed {}",
            c.reps,
            c.rho,
            fmt4(c.sigma2),
            self.sigma2_source,
            c.n_per_cell,
            c.seed
        );
        for (name, d) in [
            ("pooled", Some(&c.pooled)),
            ("per-group", c.per_group.as_ref()),
        ] {
            let Some(d) = d else { continue };
            let _ = writeln!(
                out,
                "{name}: P(V >= 1) = {}, P(V > 1) = {}",
                fmt4(d.p_at_least_one),
                fmt4(d.p_above_one)
            );
            for (p, q) in &d.quantiles {
                let _ = writeln!(out, "  quantile {p}: {q}");
            }
            for e in &d.exceedances {
                let _ = writeln!(
                    out,
                    "  P(V > {}) = {} ± {}",
                    e.threshold,
                    fmt4(e.probability),
                    fmt4(e.std_error)
                );
            }
        }
        for w in &c.warnings {
            let _ = writeln!(out, "warning: {w}");
        }
        out
    }
}
