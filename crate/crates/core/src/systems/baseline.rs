use serde::{Deserialize, Serialize};

use super::{wrap_degrees, PhysicalVariables, Result, SystemError, Variable};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    Copy,
    LinearExtrapolation,
}

/// Predicts the next variables from a history ordered oldest first.
///
/// `Copy` repeats the last entry. `LinearExtrapolation` returns
/// `2·last − previous` for every field present in both entries; angles
/// continue along the unwrapped line and are wrapped again afterwards.
pub fn baseline_predict(
    kind: BaselineKind,
    history: &[PhysicalVariables],
) -> Result<PhysicalVariables> {
    let need = match kind {
        BaselineKind::Copy => 1,
        BaselineKind::LinearExtrapolation => 2,
    };
    if history.len() < need {
        return Err(SystemError::History(format!(
            "{kind:?} needs {need} past entries, got {}",
            history.len()
        )));
    }
    let last = &history[history.len() - 1];
    if kind == BaselineKind::Copy {
        return Ok(last.clone());
    }
    let prev = &history[history.len() - 2];
    let mut out = PhysicalVariables::default();
    for v in Variable::ALL {
        if let (Some(a), Some(b)) = (prev.get(v), last.get(v)) {
            *out.slot(v) = Some(if v.is_angle() {
                wrap_degrees(b + wrap_degrees(b - a))
            } else {
                2.0 * b - a
            });
        }
    }
    Ok(out)
}
