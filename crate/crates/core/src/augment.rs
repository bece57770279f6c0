//! Level-aware mixing of two training signals.

use crate::error::{Error, Result};
use crate::toyworld::{ConditionSpec, Sample};

#[derive(Debug, Clone, PartialEq)]
pub struct MixResult {
    pub mixed: Sample,
    /// Weight on the first signal.
    pub p: f64,
    pub merged_condition: ConditionSpec,
}

/// Pressure level in dB: `20 log10(rms(x))`.
pub fn pressure_level(x: &Sample) -> Result<f64> {
    if x.dim() == 0 {
        return Err(Error::UndefinedLevel);
    }
    let ms = x.0.iter().map(|v| v * v).sum::<f64>() / x.dim() as f64;
    if ms == 0.0 {
        return Err(Error::UndefinedLevel);
    }
    Ok(10.0 * ms.log10())
}

/// Relative weight `p = 1 / (1 + 10^((g1 - g2) / 20))`.
pub fn relative_weight(g1: f64, g2: f64) -> f64 {
    1.0 / (1.0 + 10f64.powf((g1 - g2) / 20.0))
}

/// Mix two signals as `(p x1 + (1 - p) x2) / sqrt(p^2 + (1 - p)^2)` and
/// concatenate their event lists, truncated to `max_events`.
pub fn mix(
    x1: &Sample,
    x2: &Sample,
    c1: &ConditionSpec,
    c2: &ConditionSpec,
    max_events: usize,
) -> Result<MixResult> {
    if x1.dim() != x2.dim() {
        return Err(Error::Shape {
            what: "mix input",
            expected: x1.dim(),
            got: x2.dim(),
        });
    }
    let p = relative_weight(pressure_level(x1)?, pressure_level(x2)?);
    let norm = (p * p + (1.0 - p) * (1.0 - p)).sqrt();
    let mixed = x1
        .0
        .iter()
        .zip(&x2.0)
        .map(|(a, b)| (p * a + (1.0 - p) * b) / norm)
        .collect();
    let mut events: Vec<usize> = c1.events.iter().chain(&c2.events).copied().collect();
    if events.len() > max_events {
        log::debug!(
            "merged condition {}+{} has {} events; truncating to {max_events}",
            c1.id,
            c2.id,
            events.len()
        );
        events.truncate(max_events);
    }
    Ok(MixResult {
        mixed: Sample(mixed),
        p,
        merged_condition: ConditionSpec::new(format!("{}+{}", c1.id, c2.id), events),
    })
}
