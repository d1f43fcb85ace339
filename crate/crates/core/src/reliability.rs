//! Reliability coefficients from estimated variance components.
//!
//! Given a role for every facet, each variance component lands in one of
//! three buckets: object variance, relative error (components that move an
//! object's standing relative to others), or additional absolute error
//! (components that shift all scores alike). Error contributions are
//! divided by the number of conditions averaged over, so scenario level
//! counts directly drive the coefficients.
//!
//! When roles are mixed, a component crossing the object with both fixed
//! and random facets counts as relative error: a single random index is
//! enough. Only components whose non-object indices are all fixed join
//! the object's side of the ratio.

use thiserror::Error;

use crate::anova::AnovaTable;
use crate::dataset::FacetLevels;
use crate::design::{DesignSpec, VarianceComponent};

/// How a facet enters the measurement.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    /// The facet whose levels are the objects being measured.
    Object,
    /// Conditions sampled from a larger universe; they contribute error.
    Random,
    /// Conditions exhausting their universe; averaged into the object.
    Fixed,
}

impl Role {
    /// Parses `object`, `random`, or `fixed`, ignoring case.
    pub fn parse(s: &str) -> Option<Role> {
        match s.to_ascii_lowercase().as_str() {
            "object" => Some(Role::Object),
            "random" => Some(Role::Random),
            "fixed" => Some(Role::Fixed),
            _ => None,
        }
    }
}

/// Role assignment for one facet, with an optional scenario level count.
#[derive(Debug, Clone)]
pub struct FacetRole {
    /// Facet name, matched against the design case-insensitively.
    pub facet: String,
    /// Role in the measurement.
    pub role: Role,
    /// Level count to average over; `None` keeps the observed count.
    pub level_count: Option<usize>,
}

impl FacetRole {
    /// Assigns a role, keeping the observed level count.
    pub fn new(facet: &str, role: Role) -> Self {
        FacetRole {
            facet: facet.to_string(),
            role,
            level_count: None,
        }
    }

    /// Assigns a role with a scenario level count.
    pub fn with_count(facet: &str, role: Role, count: usize) -> Self {
        FacetRole {
            facet: facet.to_string(),
            role,
            level_count: Some(count),
        }
    }
}

/// Ways a role assignment can fail to resolve.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ReliabilityError {
    /// No facet was declared the object of measurement.
    #[error("no object facet declared")]
    NoObject,
    /// Two or more facets were declared objects.
    #[error("facets `{0}` and `{1}` are both declared objects")]
    MultipleObjects(String, String),
    /// A role names a facet the design does not have, or a design facet
    /// never received a role.
    #[error("facet `{0}` has no role in this analysis")]
    UnknownRole(String),
    /// A scenario level count of zero makes averaging meaningless.
    #[error("facet `{0}` has a scenario level count of zero")]
    InvalidLevelCount(String),
}

/// Roles and scenario counts resolved to design positions.
#[derive(Debug, Clone)]
pub struct ResolvedRoles {
    object: usize,
    roles: Vec<Role>,
    counts: Vec<f64>,
}

impl ResolvedRoles {
    /// Position of the object facet.
    pub fn object(&self) -> usize {
        self.object
    }

    /// Role per facet in design order.
    pub fn roles(&self) -> &[Role] {
        &self.roles
    }

    /// Scenario level count per facet in design order.
    pub fn counts(&self) -> &[f64] {
        &self.counts
    }
}

/// Resolves facet names to positions and fills in observed level counts.
pub fn resolve_roles(
    design: &DesignSpec,
    levels: &FacetLevels,
    roles: &[FacetRole],
) -> Result<ResolvedRoles, ReliabilityError> {
    let k = design.facets().len();
    let mut assigned: Vec<Option<(Role, Option<usize>)>> = vec![None; k];
    for fr in roles {
        let f = design
            .facet_index(&fr.facet)
            .ok_or_else(|| ReliabilityError::UnknownRole(fr.facet.clone()))?;
        assigned[f] = Some((fr.role, fr.level_count));
    }
    let mut object = None;
    let mut out_roles = Vec::with_capacity(k);
    let mut counts = Vec::with_capacity(k);
    for (f, slot) in assigned.iter().enumerate() {
        let name = &design.facets()[f].name;
        let (role, count) = slot.ok_or_else(|| ReliabilityError::UnknownRole(name.clone()))?;
        if role == Role::Object {
            match object {
                None => object = Some(f),
                Some(prev) => {
                    return Err(ReliabilityError::MultipleObjects(
                        design.facets()[prev].name.clone(),
                        name.clone(),
                    ))
                }
            }
        }
        let n = count.unwrap_or_else(|| levels.count(f));
        if n == 0 {
            return Err(ReliabilityError::InvalidLevelCount(name.clone()));
        }
        out_roles.push(role);
        counts.push(n as f64);
    }
    let object = object.ok_or(ReliabilityError::NoObject)?;
    Ok(ResolvedRoles {
        object,
        roles: out_roles,
        counts,
    })
}

/// One component's contribution to a bucket: its index in enumeration
/// order and the number of averaged conditions it is divided by.
#[derive(Debug, Clone, PartialEq)]
pub struct Contribution {
    /// Component position in enumeration order.
    pub component: usize,
    /// Divisor: product of scenario counts of the averaged facets.
    pub divisor: f64,
}

/// Partition of all variance components for one object choice.
#[derive(Debug, Clone)]
pub struct Partition {
    /// Components measuring the objects, including fixed-facet averages.
    pub object: Vec<Contribution>,
    /// Components perturbing relative standing.
    pub relative_error: Vec<Contribution>,
    /// Every non-object component; the absolute-error pool.
    pub absolute_error: Vec<Contribution>,
}

/// Assigns every component to the object, relative-error, or
/// absolute-error bucket.
///
/// A component belongs to the object when it spans exactly the object and
/// its nesting parents, or adds only fixed facets to that set. Components
/// that involve the object plus at least one random facet carry relative
/// error. Everything else only shifts the scale; it joins the other error
/// components in the absolute pool.
pub fn partition_components(
    design: &DesignSpec,
    components: &[VarianceComponent],
    resolved: &ResolvedRoles,
) -> Partition {
    let object = resolved.object();
    let mut closure: Vec<usize> = design.nesting_closure(object).to_vec();
    closure.push(object);
    closure.sort_unstable();

    let mut object_side = Vec::new();
    let mut relative = Vec::new();
    let mut absolute = Vec::new();
    for (ci, comp) in components.iter().enumerate() {
        let total = comp.total();
        let extra: Vec<usize> = total
            .iter()
            .copied()
            .filter(|f| !closure.contains(f))
            .collect();
        let divisor: f64 = extra.iter().map(|&f| resolved.counts()[f]).product();
        let involves_object = total.contains(&object);
        let is_object_term =
            involves_object && extra.iter().all(|&f| resolved.roles()[f] == Role::Fixed);
        if is_object_term {
            object_side.push(Contribution {
                component: ci,
                divisor,
            });
        } else {
            if involves_object {
                relative.push(Contribution {
                    component: ci,
                    divisor,
                });
            }
            absolute.push(Contribution {
                component: ci,
                divisor,
            });
        }
    }
    Partition {
        object: object_side,
        relative_error: relative,
        absolute_error: absolute,
    }
}

/// Reliability summary for one object choice.
#[derive(Debug, Clone)]
pub struct GCoeffResult {
    /// Name of the object facet.
    pub object: String,
    /// Object-side variance.
    pub tau: f64,
    /// Relative error variance.
    pub delta: f64,
    /// Absolute error variance.
    pub delta_abs: f64,
    /// Generalizability coefficient for relative decisions; `None` when
    /// every variance involved is zero.
    pub e_rho2: Option<f64>,
    /// Dependability coefficient for absolute decisions.
    pub phi: Option<f64>,
    /// Labels of components whose negative estimates were clamped to zero.
    pub clamped: Vec<String>,
}

/// Ratio of object variance to object-plus-error; `None` when both are 0.
pub fn coefficient(object_var: f64, error_var: f64) -> Option<f64> {
    let denom = object_var + error_var;
    if denom == 0.0 {
        None
    } else {
        Some(object_var / denom)
    }
}

fn pooled(contribs: &[Contribution], sigma2: &[f64]) -> f64 {
    contribs
        .iter()
        .map(|c| sigma2[c.component] / c.divisor)
        .sum()
}

/// Computes reliability for one role assignment.
///
/// Negative variance estimates are clamped to zero before pooling; the
/// affected component labels are reported on the result.
pub fn g_coeffs_for(
    anova: &AnovaTable,
    roles: &[FacetRole],
) -> Result<GCoeffResult, ReliabilityError> {
    let design = anova.design();
    let resolved = resolve_roles(design, anova.levels(), roles)?;
    let components: Vec<VarianceComponent> =
        anova.rows().iter().map(|r| r.component.clone()).collect();
    let partition = partition_components(design, &components, &resolved);
    let sigma2 = anova.sigma2_clamped();
    let tau = pooled(&partition.object, &sigma2);
    let delta = pooled(&partition.relative_error, &sigma2);
    let delta_abs = pooled(&partition.absolute_error, &sigma2);
    Ok(GCoeffResult {
        object: design.facets()[resolved.object()].name.clone(),
        tau,
        delta,
        delta_abs,
        e_rho2: coefficient(tau, delta),
        phi: coefficient(tau, delta_abs),
        clamped: anova.clamped_labels(),
    })
}

/// Computes reliability for several role assignments against one table.
pub fn g_coeffs_table(
    anova: &AnovaTable,
    analyses: &[Vec<FacetRole>],
) -> Result<Vec<GCoeffResult>, ReliabilityError> {
    analyses.iter().map(|a| g_coeffs_for(anova, a)).collect()
}

/// Default analyses: each facet in turn as object, all others random.
pub fn default_analyses(design: &DesignSpec) -> Vec<Vec<FacetRole>> {
    let names: Vec<&str> = design.facets().iter().map(|f| f.name.as_str()).collect();
    names
        .iter()
        .map(|obj| {
            names
                .iter()
                .map(|f| FacetRole::new(f, if f == obj { Role::Object } else { Role::Random }))
                .collect()
        })
        .collect()
}
