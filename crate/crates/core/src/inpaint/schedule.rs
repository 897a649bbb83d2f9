use super::InpaintError;

/// Noise level per step, `level(0) = 0`, strictly increasing.
///
/// The local loop uses the variance-exploding parameterisation
/// `x_t = x_0 + level(t) * noise`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    levels: Vec<f64>,
}

impl NoiseSchedule {
    /// `level(t) = max_level * t / max_steps`.
    pub fn linear(max_steps: u32, max_level: f64) -> Result<Self, InpaintError> {
        let n = max_steps as f64;
        Self::from_levels((0..=max_steps).map(|t| max_level * t as f64 / n).collect())
    }

    pub fn from_levels(levels: Vec<f64>) -> Result<Self, InpaintError> {
        if levels.len() < 2 || levels[0] != 0.0 {
            return Err(InpaintError::InvalidSchedule("need level(0) = 0 and at least one step".into()));
        }
        if levels.iter().any(|l| !l.is_finite()) || levels.windows(2).any(|w| w[1] <= w[0]) {
            return Err(InpaintError::InvalidSchedule("levels must be finite and strictly increasing".into()));
        }
        Ok(Self { levels })
    }

    pub fn max_steps(&self) -> u32 {
        (self.levels.len() - 1) as u32
    }

    pub fn level(&self, step: u32) -> f64 {
        self.levels[step as usize]
    }
}

impl Default for NoiseSchedule {
    /// 50 steps up to unit noise, matching latents scaled to [0, 1].
    fn default() -> Self {
        Self::linear(50, 1.0).expect("valid default schedule")
    }
}
