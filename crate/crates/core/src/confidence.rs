//! Normal-theory confidence intervals for object-level mean scores.
//!
//! The interval half-width is shared by every object level: the variance
//! of an observed level mean pools every non-object variance component,
//! each divided by the number of conditions averaged over, and the normal
//! quantile scales its square root.

use thiserror::Error;

use crate::anova::AnovaTable;
use crate::dataset::{compare_label_keys, Dataset};
use crate::design::{DesignSpec, VarianceComponent};
use crate::numeric::KahanSum;

/// Ways an interval request can fail.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfidenceError {
    /// Probability outside the open interval (0, 1).
    #[error("probability {0} is outside (0, 1)")]
    OutOfDomain(f64),
    /// The object facet is not part of the design.
    #[error("facet `{0}` is not part of the design")]
    UnknownFacet(String),
}

// Rational-approximation coefficients for the standard normal quantile,
// one set per branch: central, moderate tail, far tail.
#[allow(clippy::excessive_precision)]
const CENTRAL_NUM: [f64; 8] = [
    3.387_132_872_796_366_608,
    1.331_416_678_917_843_774_5e2,
    1.971_590_950_306_551_442_7e3,
    1.373_169_376_550_946_112_5e4,
    4.592_195_393_154_987_145_7e4,
    6.726_577_092_700_870_085_3e4,
    3.343_057_558_358_812_810_5e4,
    2.509_080_928_730_122_672_7e3,
];
#[allow(clippy::excessive_precision)]
const CENTRAL_DEN: [f64; 8] = [
    1.0,
    4.231_333_070_160_091_125_2e1,
    6.871_870_074_920_579_083e2,
    5.394_196_021_424_751_107_7e3,
    2.121_379_430_158_659_586_7e4,
    3.930_789_580_009_271_061e4,
    2.872_908_573_572_194_267_4e4,
    5.226_495_278_852_854_561e3,
];
#[allow(clippy::excessive_precision)]
const TAIL_NUM: [f64; 8] = [
    1.423_437_110_749_683_577_34,
    4.630_337_846_156_545_295_9,
    5.769_497_221_460_691_405_5,
    3.647_848_324_763_204_605_04,
    1.270_458_252_452_368_382_58,
    2.417_807_251_774_506_117_7e-1,
    2.272_384_498_926_918_458_33e-2,
    7.745_450_142_783_414_076_4e-4,
];
#[allow(clippy::excessive_precision)]
const TAIL_DEN: [f64; 8] = [
    1.0,
    2.053_191_626_637_758_821_87,
    1.676_384_830_183_803_849_4,
    6.897_673_349_851_000_045_5e-1,
    1.481_039_764_274_800_745_9e-1,
    1.519_866_656_361_645_719_66e-2,
    5.475_938_084_995_344_946e-4,
    1.050_750_071_644_416_843_24e-9,
];
#[allow(clippy::excessive_precision)]
const FAR_NUM: [f64; 8] = [
    6.657_904_643_501_103_777_2,
    5.463_784_911_164_114_369_9,
    1.784_826_539_917_291_335_8,
    2.965_605_718_285_048_912_3e-1,
    2.653_218_952_657_612_309_3e-2,
    1.242_660_947_388_078_438_6e-3,
    2.711_555_568_743_487_578_15e-5,
    2.010_334_399_292_288_132_65e-7,
];
#[allow(clippy::excessive_precision)]
const FAR_DEN: [f64; 8] = [
    1.0,
    5.998_322_065_558_879_376_9e-1,
    1.369_298_809_227_358_053_1e-1,
    1.487_536_129_085_061_485_25e-2,
    7.868_691_311_456_132_591e-4,
    1.846_318_317_510_054_681_8e-5,
    1.421_511_758_316_445_888_7e-7,
    2.044_263_103_389_939_785_64e-15,
];

fn rational(r: f64, num: &[f64; 8], den: &[f64; 8]) -> f64 {
    let mut n = num[7];
    let mut d = den[7];
    for i in (0..7).rev() {
        n = n * r + num[i];
        d = d * r + den[i];
    }
    n / d
}

/// Standard normal quantile (inverse CDF).
///
/// Accurate to full double precision over the open interval (0, 1).
pub fn normal_quantile(p: f64) -> Result<f64, ConfidenceError> {
    if !(p > 0.0 && p < 1.0) {
        return Err(ConfidenceError::OutOfDomain(p));
    }
    let q = p - 0.5;
    if q.abs() <= 0.425 {
        let r = 0.180625 - q * q;
        return Ok(q * rational(r, &CENTRAL_NUM, &CENTRAL_DEN));
    }
    let tail_p = if q < 0.0 { p } else { 1.0 - p };
    let r = (-tail_p.ln()).sqrt();
    let z = if r <= 5.0 {
        rational(r - 1.6, &TAIL_NUM, &TAIL_DEN)
    } else {
        rational(r - 5.0, &FAR_NUM, &FAR_DEN)
    };
    Ok(if q < 0.0 { -z } else { z })
}

/// Variance of an observed object-level mean.
///
/// Pools every component except the object's own term, dividing each by
/// the number of averaged conditions: the level count product over the
/// component's facets outside the object's nesting closure.
pub fn mean_score_variance(
    design: &DesignSpec,
    components: &[VarianceComponent],
    sigma2: &[f64],
    counts: &[usize],
    object: usize,
) -> f64 {
    let mut closure: Vec<usize> = design.nesting_closure(object).to_vec();
    closure.push(object);
    closure.sort_unstable();
    components
        .iter()
        .zip(sigma2)
        .filter(|(c, _)| c.total() != closure)
        .map(|(c, &s2)| {
            let averaged: f64 = c
                .total()
                .iter()
                .filter(|f| !closure.contains(f))
                .map(|&f| counts[f] as f64)
                .product();
            s2 / averaged
        })
        .sum()
}

/// One object level's interval.
#[derive(Debug, Clone)]
pub struct ConfidenceInterval {
    /// Level label, qualified by parent levels when needed.
    pub level: String,
    /// Observed mean over all other facets.
    pub mean: f64,
    /// Lower bound, `mean - half_width`.
    pub lower: f64,
    /// Upper bound, `mean + half_width`.
    pub upper: f64,
}

/// Intervals for every level of one object facet.
#[derive(Debug, Clone)]
pub struct ConfidenceSet {
    /// Name of the object facet.
    pub object: String,
    /// Two-sided miss probability the intervals were built for.
    pub alpha: f64,
    /// Shared half-width.
    pub half_width: f64,
    /// Variance of an observed level mean.
    pub mean_variance: f64,
    /// Rows ordered by level label, numerically where labels are numbers.
    pub intervals: Vec<ConfidenceInterval>,
}

/// Builds confidence intervals for the level means of one object facet.
pub fn confidence_intervals(
    data: &Dataset,
    anova: &AnovaTable,
    object: &str,
    alpha: f64,
) -> Result<ConfidenceSet, ConfidenceError> {
    let design = data.design();
    let obj = design
        .facet_index(object)
        .ok_or_else(|| ConfidenceError::UnknownFacet(object.to_string()))?;
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(ConfidenceError::OutOfDomain(alpha));
    }
    let components: Vec<VarianceComponent> =
        anova.rows().iter().map(|r| r.component.clone()).collect();
    let sigma2 = anova.sigma2_clamped();
    let counts = data.levels().counts();
    let variance = mean_score_variance(design, &components, &sigma2, counts, obj);
    let z = normal_quantile(1.0 - alpha / 2.0)?;
    let half_width = z * variance.sqrt();

    // Marginal means over the object's own dimensions, in dense order.
    let mut dims: Vec<usize> = design.nesting_closure(obj).to_vec();
    dims.push(obj);
    dims.sort_unstable();
    let keep_size: usize = dims.iter().map(|&d| counts[d]).product();
    let averaged = (data.n_cells() / keep_size) as f64;
    let mut kstrides = vec![1usize; dims.len()];
    for i in (0..dims.len().saturating_sub(1)).rev() {
        kstrides[i] = kstrides[i + 1] * counts[dims[i + 1]];
    }
    let mut sums = vec![KahanSum::new(); keep_size];
    let strides = data.strides();
    for (flat, &v) in data.cells().iter().enumerate() {
        let mut kf = 0;
        for (i, &d) in dims.iter().enumerate() {
            kf += flat / strides[d] % counts[d] * kstrides[i];
        }
        sums[kf].add(v);
    }

    let levels = data.object_levels(obj);
    debug_assert_eq!(levels.len(), keep_size);
    let mut rows: Vec<(&crate::dataset::ObjectLevel, f64)> = levels
        .iter()
        .map(|level| {
            let mut kf = 0;
            for &(d, slot) in &level.index {
                let i = dims.iter().position(|&x| x == d).expect("object dimension");
                kf += slot * kstrides[i];
            }
            (level, sums[kf].value() / averaged)
        })
        .collect();
    rows.sort_by(|(a, _), (b, _)| compare_label_keys(&a.key, &b.key));
    let intervals = rows
        .into_iter()
        .map(|(level, mean)| ConfidenceInterval {
            level: level.display.clone(),
            mean,
            lower: mean - half_width,
            upper: mean + half_width,
        })
        .collect();
    Ok(ConfidenceSet {
        object: design.facets()[obj].name.clone(),
        alpha,
        half_width,
        mean_variance: variance,
        intervals,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::anova::run_anova;
    use crate::dataset::Dataset;
    use crate::design::parse_design;
    use crate::oracle::normal_quantile_reference;
    use approx::assert_abs_diff_eq;

    #[test]
    fn quantile_matches_frozen_values() {
        assert_abs_diff_eq!(
            normal_quantile(0.975).unwrap(),
            1.959_963_984_540_054,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            normal_quantile(0.995).unwrap(),
            2.575_829_303_548_900_4,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(normal_quantile(0.5).unwrap(), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(
            normal_quantile(0.025).unwrap(),
            -1.959_963_984_540_054,
            epsilon = 1e-12
        );
        // One value per branch of the approximation.
        assert_abs_diff_eq!(
            normal_quantile(0.7).unwrap(),
            0.524_400_512_708_040_8,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            normal_quantile(1e-3).unwrap(),
            -3.090_232_306_167_813_5,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            normal_quantile(1e-12).unwrap(),
            -7.034_483_825_301_132,
            epsilon = 1e-12
        );
    }

    #[test]
    fn quantile_agrees_with_independent_reference() {
        let mut grid: Vec<f64> = Vec::new();
        for i in 1..200 {
            grid.push(i as f64 / 200.0);
        }
        for e in 2..=12 {
            let tail = 10f64.powi(-e);
            grid.push(tail);
            grid.push(1.0 - tail);
        }
        for &p in &grid {
            let got = normal_quantile(p).unwrap();
            let want = normal_quantile_reference(p);
            let tol = 1e-9 * want.abs().max(1.0);
            assert!((got - want).abs() <= tol, "p={p}: {got} vs {want}");
        }
    }

    #[test]
    fn quantile_domain_errors() {
        for bad in [0.0, 1.0, -0.5, 1.5, f64::NAN] {
            assert!(matches!(
                normal_quantile(bad).unwrap_err(),
                ConfidenceError::OutOfDomain(_)
            ));
        }
    }

    fn worked() -> (Dataset, AnovaTable) {
        let design = parse_design("person x item").unwrap();
        let data = Dataset::from_dense(design, vec![2, 2], vec![1.0, 2.0, 3.0, 5.0]).unwrap();
        let table = run_anova(&data).unwrap();
        (data, table)
    }

    #[test]
    fn worked_fixture_mean_variance() {
        let (data, table) = worked();
        let comps: Vec<VarianceComponent> =
            table.rows().iter().map(|r| r.component.clone()).collect();
        let v = mean_score_variance(
            data.design(),
            &comps,
            &table.sigma2_clamped(),
            data.levels().counts(),
            0,
        );
        assert_abs_diff_eq!(v, 0.625, epsilon = 1e-12);
    }

    #[test]
    fn worked_fixture_intervals() {
        let (data, table) = worked();
        let set = confidence_intervals(&data, &table, "person", 0.05).unwrap();
        assert_abs_diff_eq!(set.half_width, 1.549_480, epsilon = 1e-5);
        let exact = normal_quantile_reference(0.975) * 0.625f64.sqrt();
        assert_abs_diff_eq!(set.half_width, exact, epsilon = 1e-9);
        assert_eq!(set.intervals.len(), 2);
        assert_eq!(set.intervals[0].level, "1");
        assert_abs_diff_eq!(set.intervals[0].mean, 1.5, epsilon = 1e-12);
        assert_abs_diff_eq!(set.intervals[0].lower, 1.5 - exact, epsilon = 1e-9);
        assert_abs_diff_eq!(set.intervals[1].mean, 4.0, epsilon = 1e-12);
        assert_abs_diff_eq!(set.intervals[1].upper, 4.0 + exact, epsilon = 1e-9);
    }

    #[test]
    fn tighter_alpha_widens_intervals() {
        let (data, table) = worked();
        let wide = confidence_intervals(&data, &table, "person", 0.01).unwrap();
        let narrow = confidence_intervals(&data, &table, "person", 0.20).unwrap();
        assert!(wide.half_width > narrow.half_width);
    }

    #[test]
    fn unknown_object_and_bad_alpha() {
        let (data, table) = worked();
        assert!(matches!(
            confidence_intervals(&data, &table, "rater", 0.05).unwrap_err(),
            ConfidenceError::UnknownFacet(_)
        ));
        assert!(matches!(
            confidence_intervals(&data, &table, "person", 0.0).unwrap_err(),
            ConfidenceError::OutOfDomain(_)
        ));
        assert!(matches!(
            confidence_intervals(&data, &table, "person", 1.0).unwrap_err(),
            ConfidenceError::OutOfDomain(_)
        ));
    }

    #[test]
    fn nested_object_levels_report_per_parent_means() {
        // rater within item, crossed with person; rater means average
        // over persons only.
        let design = parse_design("person x (rater:item)").unwrap();
        let cells = vec![
            // person 1: (rater slot, item) in row-major rater, item order
            1.0, 2.0, 3.0, 4.0, // r1: i1, i2; r2: i1, i2
            5.0, 6.0, 7.0, 8.0, // person 2
        ];
        let data = Dataset::from_dense(design, vec![2, 2, 2], cells).unwrap();
        let table = run_anova(&data).unwrap();
        let set = confidence_intervals(&data, &table, "rater", 0.05).unwrap();
        assert_eq!(set.intervals.len(), 4);
        // Generated labels repeat per item, so displays carry the parent.
        assert_eq!(set.intervals[0].level, "1 (item 1)");
        assert_abs_diff_eq!(set.intervals[0].mean, 3.0, epsilon = 1e-12);
        assert_eq!(set.intervals[1].level, "2 (item 1)");
        assert_abs_diff_eq!(set.intervals[1].mean, 5.0, epsilon = 1e-12);
        assert_eq!(set.intervals[2].level, "1 (item 2)");
        assert_abs_diff_eq!(set.intervals[2].mean, 4.0, epsilon = 1e-12);
    }
}

#[cfg(test)]
mod proptests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn quantile_is_monotonic(a in 0.0001f64..0.9999, b in 0.0001f64..0.9999) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(normal_quantile(lo).unwrap() <= normal_quantile(hi).unwrap() + 1e-12);
        }

        #[test]
        fn quantile_is_antisymmetric(p in 0.0001f64..0.9999) {
            let z = normal_quantile(p).unwrap();
            let w = normal_quantile(1.0 - p).unwrap();
            prop_assert!((z + w).abs() <= 1e-10 * z.abs().max(1.0));
        }
    }
}
