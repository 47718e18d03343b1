//! The fixed randomness battery (monobit frequency and byte-histogram χ²) and
//! a two-sample χ² homogeneity test.

use statrs::distribution::{ChiSquared, ContinuousCDF};
use statrs::function::erf::erfc;

/// Streaming accumulator for the battery. Feed any number of byte runs, then
/// read off the p-values.
#[derive(Debug, Clone)]
pub struct RandomnessBattery {
    ones: u64,
    bytes: u64,
    histogram: [u64; 256],
}

impl Default for RandomnessBattery {
    fn default() -> Self {
        RandomnessBattery { ones: 0, bytes: 0, histogram: [0; 256] }
    }
}

impl RandomnessBattery {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn feed(&mut self, data: &[u8]) {
        let mut words = data.chunks_exact(8);
        for w in &mut words {
            self.ones += u64::from_ne_bytes(w.try_into().unwrap()).count_ones() as u64;
        }
        for b in words.remainder() {
            self.ones += b.count_ones() as u64;
        }
        for &b in data {
            self.histogram[b as usize] += 1;
        }
        self.bytes += data.len() as u64;
    }

    pub fn bytes(&self) -> u64 {
        self.bytes
    }

    /// Monobit frequency test: `erfc(|#1 - #0| / sqrt(2n))` over all bits.
    pub fn monobit_p(&self) -> f64 {
        let n = (self.bytes * 8) as f64;
        if n == 0.0 {
            return 1.0;
        }
        let s = (2.0 * self.ones as f64 - n).abs() / n.sqrt();
        erfc(s / std::f64::consts::SQRT_2)
    }

    /// Pearson χ² of the byte histogram against uniform, 255 degrees of freedom.
    pub fn byte_chi2(&self) -> f64 {
        let expected = self.bytes as f64 / 256.0;
        if expected == 0.0 {
            return 0.0;
        }
        self.histogram.iter().map(|&o| (o as f64 - expected).powi(2) / expected).sum()
    }

    pub fn byte_chi2_p(&self) -> f64 {
        if self.bytes == 0 {
            return 1.0;
        }
        chi2_sf(self.byte_chi2(), 255.0)
    }
}

/// Upper tail of the χ² distribution.
pub fn chi2_sf(statistic: f64, df: f64) -> f64 {
    if df <= 0.0 {
        return 1.0;
    }
    ChiSquared::new(df).expect("positive degrees of freedom").sf(statistic)
}

/// Pearson χ² test that two histograms over the same bins come from one
/// distribution. Bins empty in both samples are dropped. Returns
/// `(statistic, degrees of freedom, p)`.
pub fn two_sample_chi2(a: &[u64], b: &[u64]) -> (f64, usize, f64) {
    assert_eq!(a.len(), b.len(), "histograms need the same bins");
    let ta: u64 = a.iter().sum();
    let tb: u64 = b.iter().sum();
    if ta == 0 || tb == 0 {
        return (0.0, 0, 1.0);
    }
    let (ka, kb) = ((tb as f64 / ta as f64).sqrt(), (ta as f64 / tb as f64).sqrt());
    let mut stat = 0.0;
    let mut bins = 0usize;
    for (&x, &y) in a.iter().zip(b) {
        if x + y == 0 {
            continue;
        }
        bins += 1;
        stat += (ka * x as f64 - kb * y as f64).powi(2) / (x + y) as f64;
    }
    let df = bins.saturating_sub(1);
    (stat, df, chi2_sf(stat, df as f64))
}
