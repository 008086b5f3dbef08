//! Compensated (Neumaier) summation, used wherever probability masses or
//! sample arrays are reduced so that summation-order effects stay far below
//! the identity-check tolerances.

/// Running Neumaier-compensated sum.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompensatedSum {
    sum: f64,
    compensation: f64,
}

impl CompensatedSum {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.compensation += (self.sum - t) + x;
        } else {
            self.compensation += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.compensation
    }
}

/// Compensated sum of an iterator of `f64`.
pub fn compensated_sum<I: IntoIterator<Item = f64>>(xs: I) -> f64 {
    let mut acc = CompensatedSum::new();
    for x in xs {
        acc.add(x);
    }
    acc.value()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recovers_cancelled_tail() {
        // 1 + 1e-15 repeated: naive summation loses the tail, compensation keeps it.
        let xs: Vec<f64> = std::iter::repeat(1e-15).take(1_000_000).collect();
        let mut acc = CompensatedSum::new();
        acc.add(1.0);
        for &x in &xs {
            acc.add(x);
        }
        assert!((acc.value() - (1.0 + 1e-9)).abs() < 1e-15);
    }

    #[test]
    fn empty_sum_is_zero() {
        assert_eq!(compensated_sum(std::iter::empty()), 0.0);
    }
}
