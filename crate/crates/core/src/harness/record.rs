use serde::{Deserialize, Serialize};

/// Loss curve of one online-training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub setting: String,
    pub optimizer: String,
    pub seed: u64,
    pub losses: Vec<f64>,
    /// Steps where `‖o‖ = 0` forced the unnormalized loss.
    pub unnormalized_steps: usize,
}

impl RunRecord {
    /// Mean of the last `window` losses (all of them if fewer).
    pub fn final_window_mean(&self, window: usize) -> f64 {
        let n = self.losses.len();
        if n == 0 {
            return f64::NAN;
        }
        let tail = &self.losses[n.saturating_sub(window.max(1))..];
        tail.iter().sum::<f64>() / tail.len() as f64
    }

    /// `step,loss` rows; floats use the shortest round-trip form.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,loss\n");
        for (j, l) in self.losses.iter().enumerate() {
            out.push_str(&format!("{j},{l}\n"));
        }
        out
    }
}
