use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScheduleKind {
    /// min(1, exp(-t/T)): starts at 1 and decays.
    ExpDecay,
    /// min(1, exp((t - 5T)/T)): rises from e⁻⁵ and saturates at 1 from t = 5T.
    RampExp,
    /// min(1, t/T).
    RampLinear,
    /// The constant `value`.
    Constant,
}

/// Weight on the categorical KL term as a function of the optimizer step.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KlSchedule {
    pub kind: ScheduleKind,
    #[serde(default = "default_scale")]
    pub scale: f64,
    #[serde(default = "default_value")]
    pub value: f64,
}

fn default_scale() -> f64 {
    2000.0
}

fn default_value() -> f64 {
    1.0
}

impl Default for KlSchedule {
    fn default() -> Self {
        KlSchedule {
            kind: ScheduleKind::RampExp,
            scale: default_scale(),
            value: default_value(),
        }
    }
}

impl KlSchedule {
    pub fn new(kind: ScheduleKind, scale: f64) -> Self {
        KlSchedule {
            kind,
            scale,
            value: 1.0,
        }
    }

    pub fn constant(value: f64) -> Self {
        KlSchedule {
            kind: ScheduleKind::Constant,
            scale: default_scale(),
            value,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.scale > 0.0) || !self.scale.is_finite() {
            return Err(format!("schedule.scale must be positive, got {}", self.scale));
        }
        if !(0.0..=1.0).contains(&self.value) {
            return Err(format!("schedule.value must lie in [0, 1], got {}", self.value));
        }
        Ok(())
    }
}

pub fn kl_weight(schedule: &KlSchedule, step: u64) -> f64 {
    let t = step as f64;
    let s = schedule.scale;
    match schedule.kind {
        ScheduleKind::ExpDecay => (-t / s).exp().min(1.0),
        ScheduleKind::RampExp => ((t - 5.0 * s) / s).exp().min(1.0),
        ScheduleKind::RampLinear => (t / s).min(1.0),
        ScheduleKind::Constant => schedule.value,
    }
}
