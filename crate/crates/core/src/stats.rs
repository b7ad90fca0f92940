//! Scalar statistics helpers shared by several modules.

use libm::erfc;

/// Standard normal CDF, accurate in both tails.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// Kahan-Babuska (Neumaier) compensated accumulator.
#[derive(Debug, Clone, Copy, Default)]
pub struct KahanSum {
    sum: f64,
    comp: f64,
}

impl KahanSum {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn total(&self) -> f64 {
        self.sum + self.comp
    }
}

impl FromIterator<f64> for KahanSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut acc = KahanSum::new();
        for x in iter {
            acc.add(x);
        }
        acc
    }
}

pub fn kahan_sum<I: IntoIterator<Item = f64>>(iter: I) -> f64 {
    iter.into_iter().collect::<KahanSum>().total()
}

/// Ordinary least squares for `y = intercept + slope * x`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_stderr: f64,
    pub residuals: Vec<f64>,
}

pub fn linear_fit(x: &[f64], y: &[f64]) -> LinearFit {
    assert_eq!(x.len(), y.len());
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|xi| (xi - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(xi, yi)| (xi - mx) * (yi - my)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let intercept = my - slope * mx;
    let residuals: Vec<f64> = x
        .iter()
        .zip(y)
        .map(|(xi, yi)| yi - (intercept + slope * xi))
        .collect();
    let slope_stderr = if x.len() > 2 && sxx > 0.0 {
        let ssr: f64 = residuals.iter().map(|r| r * r).sum();
        (ssr / (n - 2.0) / sxx).sqrt()
    } else {
        0.0
    };
    LinearFit {
        slope,
        intercept,
        slope_stderr,
        residuals,
    }
}

/// Exponent `e` in `value ~ c * |t|^e`, fitted on the positive entries.
/// Returns `None` when fewer than two usable points remain.
pub fn power_law_exponent(t: &[f64], value: &[f64], floor: f64) -> Option<(f64, f64)> {
    let (lx, ly): (Vec<f64>, Vec<f64>) = t
        .iter()
        .zip(value)
        .filter(|(ti, vi)| ti.abs() > 0.0 && **vi > floor)
        .map(|(ti, vi)| (ti.abs().ln(), vi.ln()))
        .unzip();
    if lx.len() < 2 {
        return None;
    }
    let fit = linear_fit(&lx, &ly);
    Some((fit.slope, fit.intercept.exp()))
}
