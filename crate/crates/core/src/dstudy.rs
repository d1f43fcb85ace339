//! Decision studies: reliability projected onto alternative level counts.
//!
//! A grid of candidate counts per facet expands into the full cross
//! product of scenarios. Each scenario reuses the estimated variance
//! components and only changes the divisors, so projecting onto the
//! observed counts reproduces the original coefficients exactly.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::anova::AnovaTable;
use crate::dataset::FacetLevels;
use crate::design::DesignSpec;
use crate::reliability::{
    g_coeffs_for, resolve_roles, FacetRole, GCoeffResult, ReliabilityError, Role,
};

/// Ways a scenario grid can fail to expand.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DStudyError {
    /// A facet's candidate list is empty.
    #[error("facet `{0}` has an empty candidate list")]
    EmptyCandidateList(String),
    /// A candidate count of zero.
    #[error("facet `{facet}` has candidate level count {count}; counts must be at least 1")]
    InvalidLevelCount { facet: String, count: usize },
    /// The grid names a facet the design does not have.
    #[error("facet `{0}` is not part of the design")]
    UnknownFacet(String),
    /// The grid value for a facet is not a list of positive integers.
    #[error("facet `{0}`: candidate counts must be an array of positive integers")]
    MalformedCandidates(String),
    /// Role resolution failed.
    #[error(transparent)]
    Roles(#[from] ReliabilityError),
}

/// Candidate level counts per facet.
#[derive(Debug, Clone, Default)]
pub struct DStudyGrid {
    entries: Vec<(String, Vec<usize>)>,
}

impl DStudyGrid {
    /// Builds a grid from facet names and their candidate counts.
    pub fn new(entries: Vec<(String, Vec<usize>)>) -> Self {
        DStudyGrid { entries }
    }

    /// Parses a JSON object of the form `{"facet": [counts...]}`.
    pub fn from_json(value: &serde_json::Value) -> Result<Self, DStudyError> {
        let obj = value
            .as_object()
            .ok_or_else(|| DStudyError::MalformedCandidates("<grid>".to_string()))?;
        let mut entries = Vec::new();
        for (facet, counts) in obj {
            let arr = counts
                .as_array()
                .ok_or_else(|| DStudyError::MalformedCandidates(facet.clone()))?;
            let parsed: Option<Vec<usize>> =
                arr.iter().map(|v| v.as_u64().map(|n| n as usize)).collect();
            let parsed = parsed.ok_or_else(|| DStudyError::MalformedCandidates(facet.clone()))?;
            entries.push((facet.clone(), parsed));
        }
        Ok(DStudyGrid { entries })
    }

    /// Facet names and candidate counts in insertion order.
    pub fn entries(&self) -> &[(String, Vec<usize>)] {
        &self.entries
    }

    /// Candidate counts for one facet, matched case-insensitively.
    pub fn get(&self, facet: &str) -> Option<&[usize]> {
        self.entries
            .iter()
            .find(|(name, _)| name.eq_ignore_ascii_case(facet))
            .map(|(_, counts)| counts.as_slice())
    }
}

/// Expands a grid into scenarios: one level count per design facet, in the
/// row-major order of the candidate lists.
///
/// Facets absent from the grid keep their observed counts.
pub fn expand_grid(
    design: &DesignSpec,
    levels: &FacetLevels,
    grid: &DStudyGrid,
) -> Result<Vec<Vec<usize>>, DStudyError> {
    for (name, _) in grid.entries() {
        if design.facet_index(name).is_none() {
            return Err(DStudyError::UnknownFacet(name.clone()));
        }
    }
    let k = design.facets().len();
    let mut candidates: Vec<Vec<usize>> = Vec::with_capacity(k);
    for f in 0..k {
        let name = &design.facets()[f].name;
        match grid.get(name) {
            Some(list) => {
                if list.is_empty() {
                    return Err(DStudyError::EmptyCandidateList(name.clone()));
                }
                if let Some(&bad) = list.iter().find(|&&c| c == 0) {
                    return Err(DStudyError::InvalidLevelCount {
                        facet: name.clone(),
                        count: bad,
                    });
                }
                candidates.push(list.to_vec());
            }
            None => candidates.push(vec![levels.count(f)]),
        }
    }
    let mut scenarios = vec![Vec::with_capacity(k)];
    for list in &candidates {
        let mut next = Vec::with_capacity(scenarios.len() * list.len());
        for base in &scenarios {
            for &count in list {
                let mut s = base.clone();
                s.push(count);
                next.push(s);
            }
        }
        scenarios = next;
    }
    Ok(scenarios)
}

/// One projected scenario.
#[derive(Debug, Clone)]
pub struct DStudyScenario {
    /// Level count per design facet.
    pub counts: Vec<usize>,
    /// Coefficients at those counts.
    pub result: GCoeffResult,
}

/// A D-study over one object choice.
#[derive(Debug, Clone)]
pub struct DStudyResult {
    /// Name of the object facet.
    pub object: String,
    /// Scenarios in grid expansion order.
    pub scenarios: Vec<DStudyScenario>,
}

/// Projects reliability onto every scenario of the grid.
///
/// `roles` fixes the object and the random/fixed split; each scenario
/// overrides the level counts. Counts assigned to the object facet do not
/// enter any divisor, so they are accepted but have no effect.
pub fn run_d_study(
    anova: &AnovaTable,
    grid: &DStudyGrid,
    roles: &[FacetRole],
) -> Result<DStudyResult, DStudyError> {
    let design = anova.design();
    let resolved = resolve_roles(design, anova.levels(), roles)?;
    let scenarios = expand_grid(design, anova.levels(), grid)?;

    let base: BTreeMap<String, (Role, Option<usize>)> = roles
        .iter()
        .map(|r| (r.facet.clone(), (r.role, r.level_count)))
        .collect();
    let mut out = Vec::with_capacity(scenarios.len());
    for counts in scenarios {
        let scenario_roles: Vec<FacetRole> = design
            .facets()
            .iter()
            .enumerate()
            .map(|(f, facet)| {
                let role = base
                    .iter()
                    .find(|(name, _)| name.eq_ignore_ascii_case(&facet.name))
                    .map(|(_, (role, _))| *role)
                    .unwrap_or(Role::Random);
                FacetRole::with_count(&facet.name, role, counts[f])
            })
            .collect();
        let result = g_coeffs_for(anova, &scenario_roles)?;
        out.push(DStudyScenario { counts, result });
    }
    Ok(DStudyResult {
        object: design.facets()[resolved.object()].name.clone(),
        scenarios: out,
    })
}
