//! Plateau learning-rate schedule: divide by 10 when the evaluation metric
//! stops improving, at most three times.

#[derive(Clone, Debug, PartialEq)]
pub struct PlateauSchedule {
    pub patience: usize,
    pub factor: f64,
    pub max_drops: usize,
    best: Option<f64>,
    since_improve: usize,
    drops: usize,
}

impl PlateauSchedule {
    pub fn new(patience: usize, factor: f64, max_drops: usize) -> Self {
        assert!(factor > 0.0 && factor < 1.0, "plateau factor must lie in (0, 1)");
        PlateauSchedule { patience, factor, max_drops, best: None, since_improve: 0, drops: 0 }
    }

    /// Feeds one evaluation metric (higher is better) and returns the
    /// learning-rate multiplier to use from now on.
    pub fn observe(&mut self, metric: f64) -> f64 {
        match self.best {
            Some(best) if metric <= best => {
                self.since_improve += 1;
                if self.since_improve >= self.patience && self.drops < self.max_drops {
                    self.drops += 1;
                    self.since_improve = 0;
                }
            }
            _ => {
                self.best = Some(metric);
                self.since_improve = 0;
            }
        }
        self.multiplier()
    }

    pub fn multiplier(&self) -> f64 {
        self.factor.powi(self.drops as i32)
    }

    pub fn state(&self) -> (Option<f64>, u32, u32) {
        (self.best, self.since_improve as u32, self.drops as u32)
    }

    pub fn restore(&mut self, best: Option<f64>, since_improve: u32, drops: u32) {
        self.best = best;
        self.since_improve = since_improve as usize;
        self.drops = drops as usize;
    }
}
