//! Compensated summation.

/// Running sum with Neumaier compensation.
///
/// Keeps a correction term so that adding many values of mixed magnitude
/// loses far less precision than a bare `f64` accumulator.
#[derive(Debug, Clone, Copy, Default)]
pub struct KahanSum {
    sum: f64,
    correction: f64,
}

impl KahanSum {
    /// Starts a sum at zero.
    pub fn new() -> Self {
        KahanSum::default()
    }

    /// Adds one value.
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.correction += (self.sum - t) + x;
        } else {
            self.correction += (x - t) + self.sum;
        }
        self.sum = t;
    }

    /// Current value of the sum.
    pub fn value(&self) -> f64 {
        self.sum + self.correction
    }
}

impl std::iter::FromIterator<f64> for KahanSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut acc = KahanSum::new();
        for x in iter {
            acc.add(x);
        }
        acc
    }
}
