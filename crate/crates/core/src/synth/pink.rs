use rand::Rng;
use rand_distr::StandardNormal;

/// Voss-McCartney pink noise: row `k` is redrawn every `2^k` samples and a
/// fresh white term is added on every sample. Output has unit variance.
#[derive(Clone, Debug)]
pub struct PinkNoise {
    rows: Vec<f64>,
    sum: f64,
    counter: u64,
    norm: f64,
}

impl PinkNoise {
    pub const DEFAULT_ROWS: usize = 12;

    pub fn new<R: Rng>(rows: usize, rng: &mut R) -> Self {
        let rows: Vec<f64> = (0..rows).map(|_| rng.sample(StandardNormal)).collect();
        let sum = rows.iter().sum();
        let norm = 1.0 / ((rows.len() + 1) as f64).sqrt();
        Self { rows, sum, counter: 0, norm }
    }

    pub fn next<R: Rng>(&mut self, rng: &mut R) -> f64 {
        self.counter = self.counter.wrapping_add(1);
        let row = self.counter.trailing_zeros() as usize;
        if row < self.rows.len() {
            let fresh: f64 = rng.sample(StandardNormal);
            self.sum += fresh - self.rows[row];
            self.rows[row] = fresh;
        }
        let white: f64 = rng.sample(StandardNormal);
        (self.sum + white) * self.norm
    }

    /// Lowest frequency with 1/f behaviour for a given sample rate.
    pub fn corner_hz(&self, sample_rate: f64) -> f64 {
        sample_rate / 2f64.powi(self.rows.len() as i32 + 1)
    }
}
