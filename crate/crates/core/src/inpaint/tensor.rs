use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Dense `channels × height × width` latent, channel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentTensor {
    channels: usize,
    height: usize,
    width: usize,
    values: Vec<f64>,
}

impl LatentTensor {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self::filled(channels, height, width, 0.0)
    }

    pub fn filled(channels: usize, height: usize, width: usize, value: f64) -> Self {
        Self {
            channels,
            height,
            width,
            values: vec![value; channels * height * width],
        }
    }

    /// Panics when `values.len()` does not match the shape.
    pub fn from_vec(channels: usize, height: usize, width: usize, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), channels * height * width, "latent buffer length");
        Self { channels, height, width, values }
    }

    /// Standard-normal tensor, a pure function of `seed` and shape.
    pub fn gaussian(channels: usize, height: usize, width: usize, seed: u64) -> Self {
        let mut t = Self::zeros(channels, height, width);
        t.fill_gaussian(seed);
        t
    }

    /// Overwrites every value with the draws `gaussian` would produce.
    pub fn fill_gaussian(&mut self, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for v in &mut self.values {
            *v = StandardNormal.sample(&mut rng);
        }
    }

    /// Gives `self` the given shape, keeping the allocation when possible.
    /// Values are unspecified afterwards.
    pub fn reshape_for(&mut self, (channels, height, width): (usize, usize, usize)) {
        self.values.resize(channels * height * width, 0.0);
        self.channels = channels;
        self.height = height;
        self.width = width;
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    #[inline]
    pub fn index(&self, c: usize, y: usize, x: usize) -> usize {
        (c * self.height + y) * self.width + x
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}
