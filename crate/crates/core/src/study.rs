//! Published ANOVA summaries: factorial design, cell means, grouping and
//! F-statistics, plus the JSON study-file format.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One categorical factor of a full-factorial layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Factor {
    pub name: String,
    pub levels: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FactorDesign {
    factors: Vec<Factor>,
}

impl FactorDesign {
    pub fn new(factors: Vec<Factor>) -> Result<Self> {
        if factors.is_empty() {
            return Err(Error::Validation("design needs at least one factor".into()));
        }
        let mut names = BTreeSet::new();
        for f in &factors {
            if f.levels.len() < 2 {
                return Err(Error::Validation(format!(
                    "factor `{}` has {} level(s), at least 2 required",
                    f.name,
                    f.levels.len()
                )));
            }
            if !names.insert(f.name.as_str()) {
                return Err(Error::Validation(format!("duplicate factor `{}`", f.name)));
            }
            let distinct: BTreeSet<_> = f.levels.iter().collect();
            if distinct.len() != f.levels.len() {
                return Err(Error::Validation(format!(
                    "factor `{}` has duplicate levels",
                    f.name
                )));
            }
        }
        Ok(Self { factors })
    }

    pub fn factors(&self) -> &[Factor] {
        &self.factors
    }

    /// Number of cells of the complete layout.
    pub fn cell_count(&self) -> usize {
        self.factors.iter().map(|f| f.levels.len()).product()
    }

    pub fn factor_index(&self, name: &str) -> Option<usize> {
        self.factors.iter().position(|f| f.name == name)
    }

    pub fn level_index(&self, factor: usize, level: &str) -> Option<usize> {
        self.factors[factor].levels.iter().position(|l| l == level)
    }

    /// Canonical id `factor=level,factor=level,...` for a coordinate tuple.
    pub fn canonical_id(&self, coords: &[usize]) -> String {
        self.factors
            .iter()
            .zip(coords)
            .map(|(f, &l)| format!("{}={}", f.name, f.levels[l]))
            .collect::<Vec<_>>()
            .join(",")
    }
}

/// Precision to which the published cell means were rounded.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Rounding {
    Decimals(u32),
    /// Means are treated as exact; the rounding box has zero width.
    Exact,
}

impl Rounding {
    /// Half-width of the rounding interval.
    pub fn half_width(&self) -> f64 {
        match *self {
            Rounding::Decimals(d) => 0.5 * 10f64.powi(-(d as i32)),
            Rounding::Exact => 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub id: String,
    /// Level index per factor, in design order.
    pub coords: Vec<usize>,
    pub mean: f64,
}

/// Balanced complete table of published cell means.
#[derive(Debug, Clone, PartialEq)]
pub struct CellTable {
    design: FactorDesign,
    cells: Vec<Cell>,
    total_observations: f64,
    rounding: Rounding,
}

impl CellTable {
    pub fn new(
        design: FactorDesign,
        cells: Vec<Cell>,
        total_observations: f64,
        rounding: Rounding,
    ) -> Result<Self> {
        let expected = design.cell_count();
        if cells.len() != expected {
            return Err(Error::Validation(format!(
                "design has {} cells but {} were given",
                expected,
                cells.len()
            )));
        }
        let mut seen_coords = BTreeSet::new();
        let mut seen_ids = BTreeSet::new();
        for c in &cells {
            if c.coords.len() != design.factors.len()
                || c.coords
                    .iter()
                    .zip(&design.factors)
                    .any(|(&l, f)| l >= f.levels.len())
            {
                return Err(Error::Validation(format!(
                    "cell `{}` has invalid coordinates",
                    c.id
                )));
            }
            if !c.mean.is_finite() {
                return Err(Error::Validation(format!(
                    "cell `{}` has a non-finite mean",
                    c.id
                )));
            }
            if !seen_coords.insert(c.coords.clone()) {
                return Err(Error::Validation(format!(
                    "cell `{}` duplicates coordinates {}",
                    c.id,
                    design.canonical_id(&c.coords)
                )));
            }
            if !seen_ids.insert(c.id.clone()) {
                return Err(Error::Validation(format!("duplicate cell id `{}`", c.id)));
            }
        }
        if !(total_observations.is_finite() && total_observations > 0.0) {
            return Err(Error::Validation(
                "total_observations must be positive".into(),
            ));
        }
        let n = total_observations / cells.len() as f64;
        if n <= 1.0 {
            return Err(Error::Validation(format!(
                "per-cell count {n} must exceed 1 (total_observations {total_observations}, {} cells)",
                cells.len()
            )));
        }
        Ok(Self {
            design,
            cells,
            total_observations,
            rounding,
        })
    }

    pub fn design(&self) -> &FactorDesign {
        &self.design
    }

    pub fn cells(&self) -> &[Cell] {
        &self.cells
    }

    pub fn total_observations(&self) -> f64 {
        self.total_observations
    }

    pub fn rounding(&self) -> Rounding {
        self.rounding
    }

    pub fn means(&self) -> Vec<f64> {
        self.cells.iter().map(|c| c.mean).collect()
    }

    pub fn cell_index(&self, id: &str) -> Option<usize> {
        self.cells.iter().position(|c| c.id == id)
    }

    /// Same layout with replaced means and rounding.
    pub fn with_means(&self, means: &[f64], rounding: Rounding) -> Result<Self> {
        if means.len() != self.cells.len() {
            return Err(Error::Validation("mean vector length mismatch".into()));
        }
        let cells = self
            .cells
            .iter()
            .zip(means)
            .map(|(c, &m)| Cell {
                mean: m,
                ..c.clone()
            })
            .collect();
        Self::new(
            self.design.clone(),
            cells,
            self.total_observations,
            rounding,
        )
    }

    /// Cell indices of each group, in grouping order.
    pub fn group_indices(&self, grouping: &Grouping) -> Result<Vec<Vec<usize>>> {
        grouping
            .groups
            .iter()
            .map(|g| {
                g.iter()
                    .map(|id| {
                        self.cell_index(id).ok_or_else(|| {
                            Error::Validation(format!("group references unknown cell `{id}`"))
                        })
                    })
                    .collect()
            })
            .collect()
    }
}

/// Average observation count per cell, full precision.
pub fn per_cell_count(table: &CellTable) -> f64 {
    table.total_observations / table.cells.len() as f64
}

/// Closed interval `[v - h, v + h]` per cell, `h = 0.5 * 10^-d`.
///
/// Endpoints are computed on the decimal grid so that e.g. 2.3 at one
/// decimal gives exactly the doubles nearest to 2.25 and 2.35.
pub fn rounding_box(table: &CellTable) -> Vec<(f64, f64)> {
    table
        .cells
        .iter()
        .map(|c| rounding_interval(c.mean, table.rounding))
        .collect()
}

pub(crate) fn rounding_interval(v: f64, rounding: Rounding) -> (f64, f64) {
    match rounding {
        Rounding::Exact => (v, v),
        Rounding::Decimals(d) => {
            let scale = 10f64.powi(d as i32);
            let k = (v * scale).round();
            if ((v * scale) - k).abs() > 1e-6 {
                // Off-grid value: fall back to plain arithmetic.
                let h = rounding.half_width();
                return (v - h, v + h);
            }
            let denom = 2.0 * scale;
            ((2.0 * k - 1.0) / denom, (2.0 * k + 1.0) / denom)
        }
    }
}

/// Ordered partition of the cells into groups sharing one population mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Grouping {
    pub groups: Vec<Vec<String>>,
}

impl Grouping {
    pub fn new(groups: Vec<Vec<String>>) -> Self {
        Self { groups }
    }

    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    /// Checks that the groups partition exactly the cells of `table`.
    pub fn validate(&self, table: &CellTable) -> Result<()> {
        if self.groups.is_empty() {
            return Err(Error::Validation("grouping has no groups".into()));
        }
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for (k, g) in self.groups.iter().enumerate() {
            if g.is_empty() {
                return Err(Error::Validation(format!("group {k} is empty")));
            }
            for id in g {
                *counts.entry(id.as_str()).or_default() += 1;
            }
        }
        let unknown: Vec<&str> = counts
            .keys()
            .copied()
            .filter(|id| table.cell_index(id).is_none())
            .collect();
        let duplicated: Vec<&str> = counts
            .iter()
            .filter(|(_, &c)| c > 1)
            .map(|(&id, _)| id)
            .collect();
        let missing: Vec<&str> = table
            .cells
            .iter()
            .map(|c| c.id.as_str())
            .filter(|id| !counts.contains_key(id))
            .collect();
        let mut problems = Vec::new();
        if !unknown.is_empty() {
            problems.push(format!("unknown cell ids {}", sorted_list(unknown)));
        }
        if !duplicated.is_empty() {
            problems.push(format!(
                "cells in more than one group {}",
                sorted_list(duplicated)
            ));
        }
        if !missing.is_empty() {
            problems.push(format!(
                "cells missing from grouping {}",
                sorted_list(missing)
            ));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(format!(
                "grouping is not a partition: {}",
                problems.join("; ")
            )))
        }
    }
}

fn sorted_list(mut ids: Vec<&str>) -> String {
    ids.sort_unstable();
    format!("[{}]", ids.join(", "))
}

/// One published F-statistic together with the cells its ANOVA covered.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FStatRecord {
    /// Factors of the tested effect; one name for a main effect.
    pub effect: Vec<String>,
    pub df1: u32,
    pub df2: u32,
    pub value: f64,
    /// Factor-level restrictions; factors not named keep all levels.
    #[serde(default)]
    pub subset: BTreeMap<String, Vec<String>>,
    pub subset_observations: f64,
}

impl FStatRecord {
    pub fn label(&self) -> String {
        let subset = if self.subset.is_empty() {
            "all cells".to_string()
        } else {
            self.subset
                .iter()
                .map(|(f, ls)| format!("{f}∈{{{}}}", ls.join(",")))
                .collect::<Vec<_>>()
                .join(" ")
        };
        format!(
            "F({},{})={} [{}] on {}",
            self.df1,
            self.df2,
            self.value,
            self.effect.join("×"),
            subset
        )
    }

    fn validate(&self, design: &FactorDesign) -> Result<()> {
        let ctx = || self.label();
        if self.effect.is_empty() {
            return Err(Error::Validation(format!("{}: empty effect", ctx())));
        }
        for name in &self.effect {
            if design.factor_index(name).is_none() {
                return Err(Error::Validation(format!(
                    "{}: unknown factor `{name}`",
                    ctx()
                )));
            }
        }
        for (name, levels) in &self.subset {
            let f = design.factor_index(name).ok_or_else(|| {
                Error::Validation(format!("{}: unknown subset factor `{name}`", ctx()))
            })?;
            if levels.is_empty() {
                return Err(Error::Validation(format!(
                    "{}: empty level list for `{name}`",
                    ctx()
                )));
            }
            for l in levels {
                if design.level_index(f, l).is_none() {
                    return Err(Error::Validation(format!(
                        "{}: unknown level `{l}` of factor `{name}`",
                        ctx()
                    )));
                }
            }
        }
        if self.df1 == 0 || self.df2 == 0 {
            return Err(Error::Validation(format!(
                "{}: degrees of freedom must be positive",
                ctx()
            )));
        }
        if !(self.value.is_finite() && self.value > 0.0) {
            return Err(Error::Validation(format!(
                "{}: F value must be positive",
                ctx()
            )));
        }
        if !(self.subset_observations.is_finite() && self.subset_observations > 0.0) {
            return Err(Error::Validation(format!(
                "{}: subset_observations must be positive",
                ctx()
            )));
        }
        Ok(())
    }
}

/// Everything published about one study.
#[derive(Debug, Clone, PartialEq)]
pub struct StudySummary {
    pub table: CellTable,
    pub grouping: Grouping,
    pub f_stats: Vec<FStatRecord>,
    pub sigma2_override: Option<f64>,
}

impl StudySummary {
    pub fn new(
        table: CellTable,
        grouping: Grouping,
        f_stats: Vec<FStatRecord>,
        sigma2_override: Option<f64>,
    ) -> Result<Self> {
        grouping.validate(&table)?;
        for f in &f_stats {
            f.validate(table.design())?;
        }
        if let Some(s) = sigma2_override {
            if !(s.is_finite() && s > 0.0) {
                return Err(Error::Validation("sigma2_override must be positive".into()));
            }
        }
        Ok(Self {
            table,
            grouping,
            f_stats,
            sigma2_override,
        })
    }

    pub fn group_indices(&self) -> Vec<Vec<usize>> {
        self.table
            .group_indices(&self.grouping)
            .expect("grouping validated at construction")
    }

    /// Same study with a different table (same layout).
    pub fn with_table(&self, table: CellTable) -> Result<Self> {
        Self::new(
            table,
            self.grouping.clone(),
            self.f_stats.clone(),
            self.sigma2_override,
        )
    }
}

// --- study-file schema -----------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CellDoc {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    id: Option<String>,
    coords: BTreeMap<String, String>,
    mean: f64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(untagged)]
enum RoundingDoc {
    Decimals(u32),
    Named(String),
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct StudyDoc {
    design: Vec<Factor>,
    cells: Vec<CellDoc>,
    total_observations: f64,
    rounding_decimals: RoundingDoc,
    groups: Vec<Vec<String>>,
    #[serde(default)]
    f_statistics: Vec<FStatRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    sigma2_override: Option<f64>,
}

/// Parses and validates a study file.
pub fn parse_study(document: &str) -> Result<StudySummary> {
    let doc: StudyDoc = serde_json::from_str(document)?;
    let design = FactorDesign::new(doc.design)?;
    let rounding = match doc.rounding_decimals {
        RoundingDoc::Decimals(d) => Rounding::Decimals(d),
        RoundingDoc::Named(s) if s == "exact" => Rounding::Exact,
        RoundingDoc::Named(s) => {
            return Err(Error::Parse(format!(
                "rounding_decimals: expected a nonnegative integer or \"exact\", got \"{s}\""
            )))
        }
    };
    let mut cells = Vec::with_capacity(doc.cells.len());
    for (pos, c) in doc.cells.into_iter().enumerate() {
        let mut coords = Vec::with_capacity(design.factors.len());
        for (fi, f) in design.factors.iter().enumerate() {
            let level = c.coords.get(&f.name).ok_or_else(|| {
                Error::Parse(format!("cells[{pos}].coords: missing factor `{}`", f.name))
            })?;
            coords.push(design.level_index(fi, level).ok_or_else(|| {
                Error::Parse(format!(
                    "cells[{pos}].coords: unknown level `{level}` for factor `{}`",
                    f.name
                ))
            })?);
        }
        if let Some(extra) = c.coords.keys().find(|k| design.factor_index(k).is_none()) {
            return Err(Error::Parse(format!(
                "cells[{pos}].coords: unknown factor `{extra}`"
            )));
        }
        let id = c.id.unwrap_or_else(|| design.canonical_id(&coords));
        cells.push(Cell {
            id,
            coords,
            mean: c.mean,
        });
    }
    let table = CellTable::new(design, cells, doc.total_observations, rounding)?;
    StudySummary::new(
        table,
        Grouping::new(doc.groups),
        doc.f_statistics,
        doc.sigma2_override,
    )
}

/// Serializes a study back to the study-file format.
pub fn serialize_study(study: &StudySummary) -> String {
    let design = study.table.design();
    let doc = StudyDoc {
        design: design.factors.clone(),
        cells: study
            .table
            .cells
            .iter()
            .map(|c| CellDoc {
                id: Some(c.id.clone()),
                coords: design
                    .factors
                    .iter()
                    .zip(&c.coords)
                    .map(|(f, &l)| (f.name.clone(), f.levels[l].clone()))
                    .collect(),
                mean: c.mean,
            })
            .collect(),
        total_observations: study.table.total_observations,
        rounding_decimals: match study.table.rounding {
            Rounding::Decimals(d) => RoundingDoc::Decimals(d),
            Rounding::Exact => RoundingDoc::Named("exact".into()),
        },
        groups: study.grouping.groups.clone(),
        f_statistics: study.f_stats.clone(),
        sigma2_override: study.sigma2_override,
    };
    serde_json::to_string_pretty(&doc).expect("study document serializes")
}
