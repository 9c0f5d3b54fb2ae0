use nalgebra::Vector2;

use super::PipelineError;
use crate::tracks::TrackSet;

/// Frames with fewer observations than this are never keyframes.
pub const MIN_KEYFRAME_OBSERVATIONS: usize = 20;

#[derive(Debug, Clone, PartialEq)]
pub struct Keyframe {
    pub frame_index: usize,
    /// `(track id, pixel)`, sorted by track id.
    pub observations: Vec<(u64, Vector2<f64>)>,
}

impl Keyframe {
    pub fn get(&self, track: u64) -> Option<Vector2<f64>> {
        self.observations
            .binary_search_by_key(&track, |o| o.0)
            .ok()
            .map(|i| self.observations[i].1)
    }
}

/// Mean displacement of the tracks seen in both frames; `None` if they share
/// none.
fn mean_flow(a: &[(u64, Vector2<f64>)], b: &[(u64, Vector2<f64>)]) -> Option<f64> {
    let (mut i, mut j, mut sum, mut n) = (0, 0, 0.0, 0usize);
    while i < a.len() && j < b.len() {
        match a[i].0.cmp(&b[j].0) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                sum += (a[i].1 - b[j].1).norm();
                n += 1;
                i += 1;
                j += 1;
            }
        }
    }
    (n > 0).then(|| sum / n as f64)
}

/// Picks keyframes by optical flow: the first frame, then every frame whose
/// mean displacement from the previous keyframe, over co-visible tracks,
/// reaches `ratio * max(width, height)` pixels. Frames sharing no track with
/// the previous keyframe also start a new keyframe. Frames with fewer than
/// [`MIN_KEYFRAME_OBSERVATIONS`] observations are skipped with a warning.
pub fn select_keyframes(tracks: &TrackSet, ratio: f64) -> Result<Vec<Keyframe>, PipelineError> {
    if tracks.is_empty() {
        return Err(PipelineError::EmptyTracks);
    }
    if !(ratio.is_finite() && ratio >= 0.0) {
        return Err(PipelineError::InvalidConfig(format!(
            "keyframe ratio must be finite and non-negative, got {ratio}"
        )));
    }
    let threshold = ratio * tracks.frame().scale();
    let mut out: Vec<Keyframe> = Vec::new();
    for (frame_index, mut observations) in tracks.by_frame() {
        observations.sort_by_key(|o| o.0);
        let due = match out.last() {
            None => true,
            Some(last) => {
                mean_flow(&last.observations, &observations).is_none_or(|d| d >= threshold)
            }
        };
        if !due {
            continue;
        }
        if observations.len() < MIN_KEYFRAME_OBSERVATIONS {
            log::warn!(
                "frame {frame_index} skipped as keyframe: {} observations",
                observations.len()
            );
            continue;
        }
        out.push(Keyframe {
            frame_index,
            observations,
        });
    }
    Ok(out)
}
