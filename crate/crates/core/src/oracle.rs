//! Independent reference implementations and a synthetic-data generator.
//!
//! Everything here exists to check the fast paths from a second direction:
//! marginal totals and sums of squares by direct mean-and-effect loops,
//! variance components by a symbolic expected-mean-square inversion for
//! crossed designs, the normal quantile by series and continued-fraction
//! evaluation of the complementary error function, and simulated datasets
//! with known true components for end-to-end estimator checks.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::dataset::{DataError, Dataset};
use crate::design::{closed_subsets, enumerate_components, DesignSpec, VarianceComponent};

/// Ways a reference computation can be inapplicable.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum OracleError {
    /// The symbolic inversion covers fully crossed designs only.
    #[error("the symbolic mean-square inversion needs a fully crossed design")]
    NotCrossed,
}

/// Reference totals for one component.
#[derive(Debug, Clone)]
pub struct NaiveRow {
    /// The component.
    pub component: VarianceComponent,
    /// Marginal total term.
    pub t: f64,
    /// Sum of squares.
    pub ss: f64,
}

fn combos(sizes: &[usize]) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new()];
    for &n in sizes {
        let mut next = Vec::with_capacity(out.len() * n);
        for base in &out {
            for slot in 0..n {
                let mut c = base.clone();
                c.push(slot);
                next.push(c);
            }
        }
        out = next;
    }
    out
}

fn combo_flat(sizes: &[usize], combo: &[usize]) -> usize {
    let mut flat = 0;
    for (n, &s) in sizes.iter().zip(combo) {
        flat = flat * n + s;
    }
    flat
}

// Mean over every facet outside `dims`, holding `dims` at `fixed`.
fn marginal_mean(data: &Dataset, dims: &[usize], fixed: &[usize]) -> f64 {
    let k = data.design().facets().len();
    let rest: Vec<usize> = (0..k).filter(|d| !dims.contains(d)).collect();
    let rest_sizes: Vec<usize> = rest.iter().map(|&d| data.levels().count(d)).collect();
    let mut sum = 0.0;
    let mut n = 0usize;
    for rc in combos(&rest_sizes) {
        let mut idx = vec![0usize; k];
        for (d, &slot) in dims.iter().zip(fixed) {
            idx[*d] = slot;
        }
        for (d, &slot) in rest.iter().zip(&rc) {
            idx[*d] = slot;
        }
        sum += data.cell(&idx);
        n += 1;
    }
    sum / n as f64
}

/// Recomputes every component's marginal total and sum of squares by
/// direct loops over level means and recursively defined effects.
///
/// Rows follow [`enumerate_components`] order. Intended as a slow,
/// transparent cross-check for the production decomposition.
pub fn naive_t_ss(data: &Dataset) -> Vec<NaiveRow> {
    let design = data.design();
    let comps = enumerate_components(design);
    let n_total = data.n_cells() as f64;
    let grand = {
        let mut sum = 0.0;
        for combo in combos(data.levels().counts()) {
            sum += data.cell(&combo);
        }
        sum / n_total
    };

    // Effect tables build up in enumeration order, so every admissible
    // proper subset is ready before its supersets need it.
    let mut effects: BTreeMap<Vec<usize>, Vec<f64>> = BTreeMap::new();
    let mut rows = Vec::with_capacity(comps.len());
    for comp in &comps {
        let dims = comp.total();
        let sizes: Vec<usize> = dims.iter().map(|&d| data.levels().count(d)).collect();
        let weight = n_total / sizes.iter().product::<usize>() as f64;

        let mut t = 0.0;
        let mut ss = 0.0;
        let mut table = Vec::new();
        for combo in combos(&sizes) {
            let mean = marginal_mean(data, &dims, &combo);
            t += mean * mean;
            let mut effect = mean - grand;
            for sub in closed_subsets(design, &dims) {
                if sub.is_empty() || sub.len() == dims.len() {
                    continue;
                }
                let sub_sizes: Vec<usize> = sub.iter().map(|&d| data.levels().count(d)).collect();
                let sub_combo: Vec<usize> = sub
                    .iter()
                    .map(|d| combo[dims.iter().position(|x| x == d).unwrap()])
                    .collect();
                effect -= effects[&sub][combo_flat(&sub_sizes, &sub_combo)];
            }
            ss += effect * effect;
            table.push(effect);
        }
        effects.insert(dims.clone(), table);
        rows.push(NaiveRow {
            component: comp.clone(),
            t: t * weight,
            ss: ss * weight,
        });
    }
    rows
}

/// Reference grand-mean total term: observations times squared grand mean.
pub fn naive_t_grand(data: &Dataset) -> f64 {
    let mut sum = 0.0;
    for combo in combos(data.levels().counts()) {
        sum += data.cell(&combo);
    }
    let n = data.n_cells() as f64;
    (sum / n) * (sum / n) * n
}

/// Symbolic inversion of the expected-mean-square system for a fully
/// crossed design.
///
/// Returns a matrix `M` with components in enumeration order on both
/// axes, such that `sigma2 = M * ms`. Entry `(i, j)` is
/// `(-1)^(facets of j beyond i)` over the observations per level
/// combination of `i`, when `j` contains `i`, else zero.
pub fn ems_symbolic(
    design: &DesignSpec,
    levels: &crate::dataset::FacetLevels,
) -> Result<Vec<Vec<f64>>, OracleError> {
    if (0..design.facets().len()).any(|f| !design.is_top_level(f)) {
        return Err(OracleError::NotCrossed);
    }
    let comps = enumerate_components(design);
    let k = design.facets().len();
    let mut matrix = vec![vec![0.0; comps.len()]; comps.len()];
    for (i, row) in comps.iter().enumerate() {
        let mine = row.total();
        let per_level: f64 = (0..k)
            .filter(|f| !mine.contains(f))
            .map(|f| levels.count(f) as f64)
            .product();
        for (j, col) in comps.iter().enumerate() {
            if col.contains(row) {
                let extra = col.order() - row.order();
                let sign = if extra % 2 == 0 { 1.0 } else { -1.0 };
                matrix[i][j] = sign / per_level;
            }
        }
    }
    Ok(matrix)
}

/// True distribution for a simulated dataset: a grand mean plus one
/// variance per component in enumeration order.
#[derive(Debug, Clone)]
pub struct TrueComponents {
    /// Population grand mean.
    pub mean: f64,
    /// True variance per component, enumeration order.
    pub variances: Vec<f64>,
}

impl TrueComponents {
    /// Builds from explicit per-component variances.
    pub fn new(mean: f64, variances: Vec<f64>) -> Self {
        TrueComponents { mean, variances }
    }

    /// Builds from `(label, variance)` pairs; unnamed components get zero.
    ///
    /// # Panics
    /// Panics when a label matches no component of the design.
    pub fn from_labels(design: &DesignSpec, mean: f64, named: &[(&str, f64)]) -> Self {
        let comps = enumerate_components(design);
        let labels: Vec<String> = comps
            .iter()
            .map(|c| crate::anova::normalize_label(&c.label(design)))
            .collect();
        let mut variances = vec![0.0; comps.len()];
        for (label, var) in named {
            let wanted = crate::anova::normalize_label(label);
            let at = labels
                .iter()
                .position(|l| *l == wanted)
                .unwrap_or_else(|| panic!("no component labelled `{label}`"));
            variances[at] = *var;
        }
        TrueComponents { mean, variances }
    }
}

fn sub_seed(seed: u64, stream: u64) -> u64 {
    // splitmix64 step: one independent seed per component stream.
    let mut z = seed.wrapping_add(stream.wrapping_add(1).wrapping_mul(0x9e37_79b9_7f4a_7c15));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Simulates a balanced dataset and returns the sampled effect tables.
///
/// Each component draws one normal effect per combination of its facet
/// levels, variance as given; cells sum the grand mean and every
/// component's effect. Effect tables are row-major over the component's
/// facets in design order. Deterministic in `seed`, and each component
/// uses its own stream, so one component's table does not depend on the
/// sizes of the others.
///
/// # Panics
/// Panics when `counts` does not match the design or a variance is
/// negative or non-finite.
pub fn simulate_with_effects(
    design: &DesignSpec,
    counts: &[usize],
    truth: &TrueComponents,
    seed: u64,
) -> (Dataset, Vec<Vec<f64>>) {
    let k = design.facets().len();
    assert_eq!(counts.len(), k, "one level count per facet");
    let comps = enumerate_components(design);
    assert_eq!(
        truth.variances.len(),
        comps.len(),
        "one variance per component"
    );
    assert!(
        truth.variances.iter().all(|v| v.is_finite() && *v >= 0.0),
        "variances must be finite and nonnegative"
    );

    let mut effects: Vec<Vec<f64>> = Vec::with_capacity(comps.len());
    for (ci, comp) in comps.iter().enumerate() {
        let dims = comp.total();
        let size: usize = dims.iter().map(|&d| counts[d]).product();
        let var = truth.variances[ci];
        let table = if var == 0.0 {
            vec![0.0; size]
        } else {
            let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(seed, ci as u64));
            let normal = Normal::new(0.0, var.sqrt()).expect("valid standard deviation");
            (0..size).map(|_| normal.sample(&mut rng)).collect()
        };
        effects.push(table);
    }

    let total: usize = counts.iter().product();
    let mut strides = vec![1usize; k];
    for f in (0..k.saturating_sub(1)).rev() {
        strides[f] = strides[f + 1] * counts[f + 1];
    }
    let mut cells = Vec::with_capacity(total);
    for flat in 0..total {
        let mut value = truth.mean;
        for (ci, comp) in comps.iter().enumerate() {
            let dims = comp.total();
            let mut ef = 0usize;
            for &d in &dims {
                ef = ef * counts[d] + flat / strides[d] % counts[d];
            }
            value += effects[ci][ef];
        }
        cells.push(value);
    }
    let data = Dataset::from_dense(design.clone(), counts.to_vec(), cells)
        .expect("simulated cells match the declared counts");
    (data, effects)
}

/// Simulates a balanced dataset with known true components.
pub fn simulate(
    design: &DesignSpec,
    counts: &[usize],
    truth: &TrueComponents,
    seed: u64,
) -> Dataset {
    simulate_with_effects(design, counts, truth, seed).0
}

/// Writes a dataset as a long-format CSV table.
///
/// Nested facet levels get globally unique numbers (a facet with 4 levels
/// under each of 3 parents is numbered 1 through 12), so the file reads
/// back into the same dense arrangement.
pub fn write_long_csv<W: std::io::Write>(
    data: &Dataset,
    response: &str,
    out: W,
) -> Result<(), DataError> {
    let design = data.design();
    let k = design.facets().len();
    let mut writer = csv::Writer::from_writer(out);
    let mut header: Vec<String> = design.facets().iter().map(|f| f.name.clone()).collect();
    header.push(response.to_string());
    writer.write_record(&header)?;
    for idx in combos(data.levels().counts()) {
        let mut record: Vec<String> = Vec::with_capacity(k + 1);
        for f in 0..k {
            if design.is_top_level(f) {
                record.push(data.level_label(f, 0, idx[f]).to_string());
            } else {
                let pf = data.parent_flat(f, &idx);
                record.push((pf * data.levels().count(f) + idx[f] + 1).to_string());
            }
        }
        let mut value = format!("{}", data.cell(&idx));
        if !value.contains('.') && !value.contains('e') && !value.contains("inf") {
            value.push_str(".0");
        }
        record.push(value);
        writer.write_record(&record)?;
    }
    writer.flush().map_err(csv::Error::from)?;
    Ok(())
}

// Complementary error function: series below 2, continued fraction above.
fn erfc_reference(x: f64) -> f64 {
    if x < 0.0 {
        return 2.0 - erfc_reference(-x);
    }
    let inv_sqrt_pi = 1.0 / std::f64::consts::PI.sqrt();
    if x < 2.0 {
        // erf(x) = 2/sqrt(pi) * sum (-1)^n x^(2n+1) / (n! (2n+1))
        let mut term = x;
        let mut sum = x;
        let mut n = 1.0f64;
        while term.abs() > 1e-18 * sum.abs().max(1e-300) {
            term *= -x * x / n;
            sum += term / (2.0 * n + 1.0);
            n += 1.0;
        }
        1.0 - 2.0 * inv_sqrt_pi * sum
    } else {
        // erfc(x) = exp(-x^2)/sqrt(pi) / (x + K(a_n / x)), a_n = n/2,
        // evaluated by the modified Lentz algorithm.
        let tiny = 1e-300;
        let mut f = x;
        let mut c = x;
        let mut d = 0.0;
        for n in 1..500 {
            let a = n as f64 / 2.0;
            d = x + a * d;
            if d.abs() < tiny {
                d = tiny;
            }
            c = x + a / c;
            if c.abs() < tiny {
                c = tiny;
            }
            d = 1.0 / d;
            let delta = c * d;
            f *= delta;
            if (delta - 1.0).abs() < 1e-17 {
                break;
            }
        }
        (-x * x).exp() * inv_sqrt_pi / f
    }
}

/// Standard normal CDF by the complementary error function.
pub fn normal_cdf_reference(z: f64) -> f64 {
    0.5 * erfc_reference(-z / std::f64::consts::SQRT_2)
}

/// Standard normal quantile by bisection on the reference CDF with a
/// Newton polish.
///
/// Shares no code or constants with the production quantile; used to
/// verify it.
///
/// # Panics
/// Panics when `p` is outside (0, 1).
pub fn normal_quantile_reference(p: f64) -> f64 {
    assert!(p > 0.0 && p < 1.0, "probability must sit inside (0, 1)");
    if p > 0.5 {
        // Work in the lower tail, where the CDF keeps relative precision.
        // For p in (0.5, 1) the subtraction is exact.
        return -normal_quantile_reference(1.0 - p);
    }
    let (mut lo, mut hi) = (-10.0f64, 10.0f64);
    loop {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if normal_cdf_reference(mid) < p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mut z = 0.5 * (lo + hi);
    // Two Newton steps against the reference density.
    for _ in 0..2 {
        let pdf = (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt();
        if pdf > 0.0 {
            z -= (normal_cdf_reference(z) - p) / pdf;
        }
    }
    z
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::anova::run_anova;
    use crate::dataset::{validate_and_index, FacetLevels, RawTable};
    use crate::design::parse_design;
    use approx::assert_abs_diff_eq;

    #[test]
    fn naive_rows_match_worked_fixture() {
        let design = parse_design("person x item").unwrap();
        let data = Dataset::from_dense(design, vec![2, 2], vec![1.0, 2.0, 3.0, 5.0]).unwrap();
        let rows = naive_t_ss(&data);
        assert_abs_diff_eq!(rows[0].t, 36.5, epsilon = 1e-10);
        assert_abs_diff_eq!(rows[1].t, 32.5, epsilon = 1e-10);
        assert_abs_diff_eq!(rows[2].t, 39.0, epsilon = 1e-10);
        assert_abs_diff_eq!(rows[0].ss, 6.25, epsilon = 1e-10);
        assert_abs_diff_eq!(rows[1].ss, 2.25, epsilon = 1e-10);
        assert_abs_diff_eq!(rows[2].ss, 0.25, epsilon = 1e-10);
        assert_abs_diff_eq!(naive_t_grand(&data), 30.25, epsilon = 1e-10);
    }

    #[test]
    fn symbolic_inversion_matches_solver_on_crossed_design() {
        let design = parse_design("p x r x i").unwrap();
        let counts = vec![4usize, 3, 5];
        let truth = TrueComponents::from_labels(
            &design,
            1.0,
            &[
                ("p", 2.0),
                ("r", 0.5),
                ("i", 1.0),
                ("p x i", 0.7),
                ("p x r x i", 1.5),
            ],
        );
        let data = simulate(&design, &counts, &truth, 7);
        let table = run_anova(&data).unwrap();
        let matrix = ems_symbolic(&design, table.levels()).unwrap();
        let ms: Vec<f64> = table.rows().iter().map(|r| r.ms).collect();
        for (i, row) in matrix.iter().enumerate() {
            let via_matrix: f64 = row.iter().zip(&ms).map(|(m, s)| m * s).sum();
            let got = table.rows()[i].sigma2;
            assert_abs_diff_eq!(via_matrix, got, epsilon = 1e-10 * got.abs().max(1.0));
        }
    }

    #[test]
    fn symbolic_inversion_rejects_nested_designs() {
        let design = parse_design("p x (r:i)").unwrap();
        let levels = FacetLevels::new(vec![2, 2, 2]);
        assert_eq!(
            ems_symbolic(&design, &levels).unwrap_err(),
            OracleError::NotCrossed
        );
    }

    #[test]
    fn simulation_is_deterministic_and_seed_sensitive() {
        let design = parse_design("p x i").unwrap();
        let truth = TrueComponents::new(0.0, vec![1.0, 0.5, 0.25]);
        let a = simulate(&design, &[4, 3], &truth, 11);
        let b = simulate(&design, &[4, 3], &truth, 11);
        let c = simulate(&design, &[4, 3], &truth, 12);
        assert_eq!(a.cells(), b.cells());
        assert_ne!(a.cells(), c.cells());
    }

    #[test]
    fn component_streams_are_independent_of_other_sizes() {
        // Person effects must not change when the item count changes.
        let design = parse_design("p x i").unwrap();
        let truth = TrueComponents::new(0.0, vec![1.0, 0.5, 0.25]);
        let (_, small) = simulate_with_effects(&design, &[4, 3], &truth, 3);
        let (_, large) = simulate_with_effects(&design, &[4, 9], &truth, 3);
        assert_eq!(small[0], large[0]);
    }

    #[test]
    fn zero_variance_component_contributes_nothing() {
        let design = parse_design("p x i").unwrap();
        let truth = TrueComponents::new(5.0, vec![0.0, 0.0, 0.0]);
        let data = simulate(&design, &[3, 3], &truth, 1);
        assert!(data.cells().iter().all(|&v| v == 5.0));
    }

    #[test]
    fn long_csv_round_trips_through_validation() {
        let design = parse_design("p x (r:i)").unwrap();
        let truth = TrueComponents::from_labels(&design, 2.0, &[("p", 1.0), ("r:i", 0.5)]);
        let data = simulate(&design, &[3, 2, 4], &truth, 5);
        let mut buf = Vec::new();
        write_long_csv(&data, "score", &mut buf).unwrap();
        let raw = RawTable::from_reader(buf.as_slice(), "score").unwrap();
        let back = validate_and_index(&raw, data.design()).unwrap();
        assert_eq!(back.levels(), data.levels());
        for (a, b) in back.cells().iter().zip(data.cells()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn reference_cdf_hits_known_points() {
        assert_abs_diff_eq!(normal_cdf_reference(0.0), 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(
            normal_cdf_reference(1.0),
            0.841_344_746_068_542_9,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            normal_cdf_reference(-1.959_963_984_540_054),
            0.025,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            normal_cdf_reference(3.0),
            0.998_650_101_968_369_9,
            epsilon = 1e-12
        );
    }

    #[test]
    fn reference_quantile_inverts_reference_cdf() {
        for &p in &[1e-10, 1e-4, 0.025, 0.31, 0.5, 0.77, 0.975, 1.0 - 1e-6] {
            let z = normal_quantile_reference(p);
            assert_abs_diff_eq!(normal_cdf_reference(z), p, epsilon = 1e-12 * p.max(1e-3));
        }
    }
}
