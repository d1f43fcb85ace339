//! Balanced ANOVA: decomposes observed scores into per-component sums of
//! squares, mean squares, and estimated variance components.
//!
//! Marginal totals are accumulated with compensated summation. Sums of
//! squares come from signed combinations of marginal-total terms, with the
//! sign pattern derived from the design's admissible-subset lattice, so
//! nested designs get the same treatment as crossed ones. Variance
//! components solve the expected-mean-square system by back-substitution.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::dataset::{Dataset, FacetLevels};
use crate::design::{closed_subsets, enumerate_components, DesignSpec, VarianceComponent};
use crate::numeric::KahanSum;

/// Ways the decomposition can fail.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AnovaError {
    /// A facet with one level leaves nothing to estimate.
    #[error("facet `{0}` has a single level, leaving no degrees of freedom")]
    ZeroDf(String),
    /// The component does not belong to this design.
    #[error("component `{0}` does not belong to the design")]
    UnknownComponent(String),
    /// A marginal total needed by the signed combination is absent.
    #[error("no marginal total available for `{0}`")]
    MissingTValue(String),
    /// The expected-mean-square system cannot be solved.
    #[error("the expected-mean-square system is singular")]
    SingularSystem,
}

/// One line of the decomposition.
#[derive(Debug, Clone)]
pub struct AnovaRow {
    /// The variance component this row describes.
    pub component: VarianceComponent,
    /// Degrees of freedom.
    pub df: u64,
    /// Marginal total term: size-weighted sum of squared level means.
    pub t: f64,
    /// Sum of squares.
    pub ss: f64,
    /// Mean square, `ss / df`.
    pub ms: f64,
    /// Estimated variance component; may come out negative.
    pub sigma2: f64,
}

/// Full decomposition of one dataset.
#[derive(Debug, Clone)]
pub struct AnovaTable {
    design: DesignSpec,
    levels: FacetLevels,
    rows: Vec<AnovaRow>,
    grand_mean: f64,
    t_grand: f64,
}

impl AnovaTable {
    /// Rows in component enumeration order.
    pub fn rows(&self) -> &[AnovaRow] {
        &self.rows
    }

    /// The design the table was computed for.
    pub fn design(&self) -> &DesignSpec {
        &self.design
    }

    /// Level counts the table was computed at.
    pub fn levels(&self) -> &FacetLevels {
        &self.levels
    }

    /// Mean of all observations.
    pub fn grand_mean(&self) -> f64 {
        self.grand_mean
    }

    /// Marginal total term of the grand mean.
    pub fn t_grand(&self) -> f64 {
        self.t_grand
    }

    /// Estimated variance components in row order.
    pub fn sigma2(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.sigma2).collect()
    }

    /// Variance components with negative estimates clamped to zero.
    pub fn sigma2_clamped(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.sigma2.max(0.0)).collect()
    }

    /// Labels of components whose estimate came out negative.
    pub fn clamped_labels(&self) -> Vec<String> {
        self.rows
            .iter()
            .filter(|r| r.sigma2 < 0.0)
            .map(|r| r.component.label(&self.design))
            .collect()
    }

    /// Row whose component label matches, ignoring case, spaces, and parens.
    pub fn row_by_label(&self, label: &str) -> Option<&AnovaRow> {
        let wanted = normalize_label(label);
        self.rows
            .iter()
            .find(|r| normalize_label(&r.component.label(&self.design)) == wanted)
    }

    /// Total sum of squares across all components.
    pub fn total_ss(&self) -> f64 {
        self.rows.iter().map(|r| r.ss).collect::<KahanSum>().value()
    }
}

/// Collapses a component label for lookup: lowercase, no spaces or parens.
pub fn normalize_label(label: &str) -> String {
    label
        .chars()
        .filter(|c| !c.is_whitespace() && *c != '(' && *c != ')')
        .flat_map(char::to_lowercase)
        .collect()
}

// Size-weighted sum of squared marginal means over the kept facets. The
// empty set gives the grand-mean term.
fn t_for_set(data: &Dataset, keep: &[usize]) -> f64 {
    let counts = data.levels().counts();
    let strides = data.strides();
    let keep_size: usize = keep.iter().map(|&d| counts[d]).product();
    let weight = (data.n_cells() / keep_size) as f64;

    let mut kstrides = vec![1usize; keep.len()];
    for i in (0..keep.len().saturating_sub(1)).rev() {
        kstrides[i] = kstrides[i + 1] * counts[keep[i + 1]];
    }
    let mut sums = vec![KahanSum::new(); keep_size];
    for (flat, &v) in data.cells().iter().enumerate() {
        let mut kf = 0;
        for (i, &d) in keep.iter().enumerate() {
            kf += flat / strides[d] % counts[d] * kstrides[i];
        }
        sums[kf].add(v);
    }
    let mut total = KahanSum::new();
    for s in &sums {
        let sum = s.value();
        total.add(sum * sum);
    }
    total.value() / weight
}

fn check_component(data: &Dataset, component: &VarianceComponent) -> Result<(), AnovaError> {
    let k = data.design().facets().len();
    if component.total().iter().any(|&f| f >= k) {
        return Err(AnovaError::UnknownComponent(format!("{component:?}")));
    }
    if !enumerate_components(data.design()).contains(component) {
        return Err(AnovaError::UnknownComponent(component.label(data.design())));
    }
    Ok(())
}

/// Marginal total term of one component.
///
/// For the component spanning every facet this is the sum of squared
/// observations.
pub fn t_value(data: &Dataset, component: &VarianceComponent) -> Result<f64, AnovaError> {
    check_component(data, component)?;
    Ok(t_for_set(data, &component.total()))
}

/// Signed coefficients over the admissible subsets of a component's facet
/// set, chosen so that subset totals cancel exactly.
///
/// For a fully crossed component this reduces to inclusion-exclusion signs
/// `(-1)^(dropped facets)`; nesting removes the subsets that would split a
/// nested facet from its parents and reweights the rest.
fn subset_coefficients(design: &DesignSpec, total: &[usize]) -> Vec<(Vec<usize>, f64)> {
    let mut subs = closed_subsets(design, total);
    subs.sort_by_key(|s| std::cmp::Reverse(s.len()));
    let mut coeff: Vec<(Vec<usize>, f64)> = Vec::with_capacity(subs.len());
    for sub in subs {
        let mu = if sub.len() == total.len() {
            1.0
        } else {
            -coeff
                .iter()
                .filter(|(sup, _)| sub.iter().all(|f| sup.contains(f)) && sup.len() > sub.len())
                .map(|(_, m)| m)
                .sum::<f64>()
        };
        coeff.push((sub, mu));
    }
    coeff
}

/// Sum of squares of one component from precomputed marginal totals.
///
/// `t_values` must hold a total for every admissible subset of the
/// component's facet set, keyed by sorted facet positions; the empty key
/// holds the grand-mean term.
pub fn sum_of_squares(
    design: &DesignSpec,
    component: &VarianceComponent,
    t_values: &BTreeMap<Vec<usize>, f64>,
) -> Result<f64, AnovaError> {
    let mut ss = KahanSum::new();
    for (sub, mu) in subset_coefficients(design, &component.total()) {
        let t = t_values.get(&sub).ok_or_else(|| {
            AnovaError::MissingTValue(if sub.is_empty() {
                "grand mean".to_string()
            } else {
                design.render_set(&sub)
            })
        })?;
        ss.add(mu * t);
    }
    Ok(ss.value())
}

/// Degrees of freedom: product of `(levels - 1)` over primary facets times
/// `levels` over nesting facets.
pub fn degrees_of_freedom(component: &VarianceComponent, levels: &FacetLevels) -> u64 {
    let primary: u64 = component
        .primary()
        .iter()
        .map(|&f| levels.count(f) as u64 - 1)
        .product();
    let nesting: u64 = component
        .nesting()
        .iter()
        .map(|&f| levels.count(f) as u64)
        .product();
    primary * nesting
}

/// Expected-mean-square coefficient matrix, aligned with
/// [`enumerate_components`] order on both axes.
///
/// Entry `(i, j)` is the multiplier of component `j`'s variance in the
/// expectation of mean square `i`: the number of observations per level
/// combination of `j`, when `j` spans every facet of `i`, else zero.
pub fn ems_matrix(design: &DesignSpec, levels: &FacetLevels) -> Vec<Vec<f64>> {
    let comps = enumerate_components(design);
    let k = design.facets().len();
    comps
        .iter()
        .map(|row| {
            comps
                .iter()
                .map(|col| {
                    if col.contains(row) {
                        (0..k)
                            .filter(|f| !col.involves(*f))
                            .map(|f| levels.count(f) as f64)
                            .product()
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect()
}

/// Solves the expected-mean-square system for the variance components.
///
/// The matrix is upper triangular in enumeration order, so the last
/// component reads off directly and the rest follow by back-substitution.
pub fn solve_variance_components(
    mean_squares: &[f64],
    ems: &[Vec<f64>],
) -> Result<Vec<f64>, AnovaError> {
    let n = mean_squares.len();
    let mut sigma2 = vec![0.0f64; n];
    for i in (0..n).rev() {
        let mut rhs = mean_squares[i];
        for j in i + 1..n {
            rhs -= ems[i][j] * sigma2[j];
        }
        let diag = ems[i][i];
        if diag == 0.0 {
            return Err(AnovaError::SingularSystem);
        }
        sigma2[i] = rhs / diag;
    }
    Ok(sigma2)
}

/// Runs the full decomposition for one dataset.
pub fn run_anova(data: &Dataset) -> Result<AnovaTable, AnovaError> {
    let design = data.design();
    let levels = data.levels().clone();
    for (f, facet) in design.facets().iter().enumerate() {
        if levels.count(f) < 2 {
            return Err(AnovaError::ZeroDf(facet.name.clone()));
        }
    }
    let comps = enumerate_components(design);

    let mut t_values: BTreeMap<Vec<usize>, f64> = BTreeMap::new();
    t_values.insert(Vec::new(), t_for_set(data, &[]));
    for comp in &comps {
        let total = comp.total();
        let t = t_for_set(data, &total);
        t_values.insert(total, t);
    }

    let grand_mean =
        data.cells().iter().copied().collect::<KahanSum>().value() / data.n_cells() as f64;

    let mut rows = Vec::with_capacity(comps.len());
    for comp in &comps {
        let t = t_values[&comp.total()];
        let ss = sum_of_squares(design, comp, &t_values)?;
        let df = degrees_of_freedom(comp, &levels);
        debug_assert!(df > 0);
        let ms = ss / df as f64;
        rows.push(AnovaRow {
            component: comp.clone(),
            df,
            t,
            ss,
            ms,
            sigma2: 0.0,
        });
    }
    let ems = ems_matrix(design, &levels);
    let ms: Vec<f64> = rows.iter().map(|r| r.ms).collect();
    let sigma2 = solve_variance_components(&ms, &ems)?;
    for (row, s2) in rows.iter_mut().zip(sigma2) {
        row.sigma2 = s2;
    }
    Ok(AnovaTable {
        design: design.clone(),
        levels,
        rows,
        grand_mean,
        t_grand: t_values[&Vec::new()],
    })
}


#[cfg(test)]
mod proptests {
    use super::*;
    use crate::dataset::Dataset;
    use crate::design::parse_design;
    use proptest::prelude::*;

    fn total_centered_ss(cells: &[f64]) -> f64 {
        let mean = cells.iter().sum::<f64>() / cells.len() as f64;
        cells.iter().map(|v| (v - mean) * (v - mean)).sum()
    }

    proptest! {
        #[test]
        fn sums_of_squares_decompose_total(
            cells in proptest::collection::vec(-50.0f64..50.0, 24),
            which in 0usize..3,
        ) {
            let (src, counts) = match which {
                0 => ("p x i", vec![4usize, 6]),
                1 => ("p x (r:i)", vec![4, 2, 3]),
                _ => ("r:(i:p)", vec![2, 3, 4]),
            };
            let design = parse_design(src).unwrap();
            let data = Dataset::from_dense(design, counts, cells.clone()).unwrap();
            let table = run_anova(&data).unwrap();
            let direct = total_centered_ss(&cells);
            let scale = direct.abs().max(1.0);
            prop_assert!((table.total_ss() - direct).abs() <= 1e-9 * scale);
            for row in table.rows() {
                prop_assert!(row.ss >= -1e-9 * scale.max(table.t_grand().abs()));
            }
        }

        #[test]
        fn location_shift_preserves_spread_terms(
            cells in proptest::collection::vec(-10.0f64..10.0, 12),
            shift in -100.0f64..100.0,
        ) {
            let design = parse_design("p x i").unwrap();
            let base = run_anova(
                &Dataset::from_dense(design.clone(), vec![3, 4], cells.clone()).unwrap(),
            )
            .unwrap();
            let shifted_cells: Vec<f64> = cells.iter().map(|v| v + shift).collect();
            let shifted = run_anova(
                &Dataset::from_dense(design, vec![3, 4], shifted_cells).unwrap(),
            )
            .unwrap();
            for (a, b) in base.rows().iter().zip(shifted.rows()) {
                prop_assert!((a.ss - b.ss).abs() <= 1e-8 * a.ss.abs().max(1.0));
                prop_assert!((a.sigma2 - b.sigma2).abs() <= 1e-8 * a.sigma2.abs().max(1.0));
            }
        }

        #[test]
        fn scaling_scales_variances_quadratically(
            cells in proptest::collection::vec(-10.0f64..10.0, 12),
            scale in 0.1f64..10.0,
        ) {
            let design = parse_design("p x i").unwrap();
            let base = run_anova(
                &Dataset::from_dense(design.clone(), vec![3, 4], cells.clone()).unwrap(),
            )
            .unwrap();
            let scaled_cells: Vec<f64> = cells.iter().map(|v| v * scale).collect();
            let scaled = run_anova(
                &Dataset::from_dense(design, vec![3, 4], scaled_cells).unwrap(),
            )
            .unwrap();
            for (a, b) in base.rows().iter().zip(scaled.rows()) {
                let want = a.sigma2 * scale * scale;
                prop_assert!((want - b.sigma2).abs() <= 1e-8 * want.abs().max(1.0));
            }
        }
    }
}
