//! Variance-component reliability analysis for balanced measurement
//! designs.
//!
//! A measurement design names its facets (persons, items, raters, ...)
//! and how they relate: `x` crosses two facets, `:` nests the left facet
//! within the right. From a fully crossed or nested balanced table of
//! scores this crate estimates a variance component for every effect the
//! design admits, splits measurement error into relative and absolute
//! parts for a chosen object of measurement, projects how reliability
//! shifts as facet sizes change, and attaches normal-theory confidence
//! intervals to per-object mean scores.
//!
//! ```
//! use gtheory::{parse_design, enumerate_components};
//!
//! let design = parse_design("person x (rater:item)").unwrap();
//! let labels: Vec<String> = enumerate_components(&design)
//!     .iter()
//!     .map(|c| c.label(&design))
//!     .collect();
//! assert_eq!(
//!     labels,
//!     ["person", "item", "rater:item", "person x item", "person x (rater:item)"]
//! );
//! ```
//!
//! The full pipeline lives behind [`run_analysis`], which reads a CSV of
//! long-format observations and returns a [`Report`] renderable as text,
//! JSON, or CSV.

pub mod anova;
pub mod confidence;
pub mod dataset;
pub mod design;
pub mod dstudy;
mod numeric;
pub mod oracle;
pub mod reliability;
pub mod report;

pub use anova::{run_anova, AnovaError, AnovaRow, AnovaTable};
pub use confidence::{
    confidence_intervals, normal_quantile, ConfidenceError, ConfidenceInterval, ConfidenceSet,
};
pub use dataset::{validate_and_index, DataError, Dataset, FacetLevels, RawTable};
pub use design::{
    enumerate_components, parse_design, DesignError, DesignSpec, Facet, VarianceComponent,
};
pub use dstudy::{run_d_study, DStudyError, DStudyGrid, DStudyResult, DStudyScenario};
pub use reliability::{
    default_analyses, g_coeffs_for, g_coeffs_table, FacetRole, GCoeffResult, ReliabilityError, Role,
};
pub use report::{format_sig, run_analysis, OutputFormat, PipelineError, Report, RunConfig};
