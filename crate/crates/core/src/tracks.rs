//! Feature tracks: the interchange between a video front end and the
//! reconstruction pipeline.

use std::collections::BTreeMap;

use nalgebra::Vector2;
use thiserror::Error;

use crate::geom::ImageFrame;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TrackError {
    #[error("track set has no tracks")]
    Empty,
    #[error("track {track}: observation ({x}, {y}) at frame {frame} lies outside the {width}x{height} image")]
    OutOfBounds {
        track: u64,
        frame: usize,
        x: f64,
        y: f64,
        width: u32,
        height: u32,
    },
    #[error("track {track}: frame indices not strictly increasing ({previous} then {next})")]
    NonMonotone {
        track: u64,
        previous: usize,
        next: usize,
    },
    #[error("track {0} spans fewer than two frames")]
    TooShort(u64),
    #[error("duplicate track id {0}")]
    DuplicateId(u64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    pub frame: usize,
    /// Pixel position.
    pub position: Vector2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Track {
    pub id: u64,
    pub observations: Vec<Observation>,
}

impl Track {
    pub fn at(&self, frame: usize) -> Option<&Observation> {
        self.observations
            .binary_search_by_key(&frame, |o| o.frame)
            .ok()
            .map(|i| &self.observations[i])
    }
}

/// Validated collection of feature tracks over one video.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackSet {
    frame: ImageFrame,
    tracks: Vec<Track>,
}

impl TrackSet {
    pub fn new(frame: ImageFrame, tracks: Vec<Track>) -> Result<Self, TrackError> {
        let mut seen = std::collections::BTreeSet::new();
        for t in &tracks {
            if !seen.insert(t.id) {
                return Err(TrackError::DuplicateId(t.id));
            }
            validate_track(t, &frame)?;
        }
        Ok(Self { frame, tracks })
    }

    pub fn frame(&self) -> ImageFrame {
        self.frame
    }

    pub fn tracks(&self) -> &[Track] {
        &self.tracks
    }

    pub fn is_empty(&self) -> bool {
        self.tracks.is_empty()
    }

    /// Highest frame index observed, if any.
    pub fn last_frame(&self) -> Option<usize> {
        self.tracks
            .iter()
            .filter_map(|t| t.observations.last())
            .map(|o| o.frame)
            .max()
    }

    pub fn first_frame(&self) -> Option<usize> {
        self.tracks
            .iter()
            .filter_map(|t| t.observations.first())
            .map(|o| o.frame)
            .min()
    }

    /// Observations grouped by frame: `frame -> [(track id, pixel)]`.
    pub fn by_frame(&self) -> BTreeMap<usize, Vec<(u64, Vector2<f64>)>> {
        let mut out: BTreeMap<usize, Vec<(u64, Vector2<f64>)>> = BTreeMap::new();
        for t in &self.tracks {
            for o in &t.observations {
                out.entry(o.frame).or_default().push((t.id, o.position));
            }
        }
        out
    }
}

pub fn validate_track(t: &Track, frame: &ImageFrame) -> Result<(), TrackError> {
    if t.observations.len() < 2 {
        return Err(TrackError::TooShort(t.id));
    }
    for w in t.observations.windows(2) {
        if w[1].frame <= w[0].frame {
            return Err(TrackError::NonMonotone {
                track: t.id,
                previous: w[0].frame,
                next: w[1].frame,
            });
        }
    }
    for o in &t.observations {
        if !(o.position.x.is_finite() && o.position.y.is_finite() && frame.contains(&o.position)) {
            return Err(TrackError::OutOfBounds {
                track: t.id,
                frame: o.frame,
                x: o.position.x,
                y: o.position.y,
                width: frame.width,
                height: frame.height,
            });
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn obs(frame: usize, x: f64, y: f64) -> Observation {
        Observation {
            frame,
            position: Vector2::new(x, y),
        }
    }

    #[test]
    fn validation() {
        let frame = ImageFrame::new(640, 480);
        let good = Track {
            id: 1,
            observations: vec![obs(0, 1.0, 2.0), obs(1, 3.0, 4.0)],
        };
        let set = TrackSet::new(frame, vec![good.clone()]).unwrap();
        assert_eq!(set.last_frame(), Some(1));
        assert_eq!(
            set.tracks()[0].at(1).unwrap().position,
            Vector2::new(3.0, 4.0)
        );

        let oob = Track {
            id: 2,
            observations: vec![obs(0, 640.0, 2.0), obs(1, 3.0, 4.0)],
        };
        assert!(matches!(
            TrackSet::new(frame, vec![oob]),
            Err(TrackError::OutOfBounds { track: 2, .. })
        ));
        let back = Track {
            id: 3,
            observations: vec![obs(2, 1.0, 2.0), obs(2, 3.0, 4.0)],
        };
        assert!(matches!(
            TrackSet::new(frame, vec![back]),
            Err(TrackError::NonMonotone { .. })
        ));
        let short = Track {
            id: 4,
            observations: vec![obs(0, 1.0, 2.0)],
        };
        assert_eq!(
            TrackSet::new(frame, vec![short]),
            Err(TrackError::TooShort(4))
        );
        assert_eq!(
            TrackSet::new(frame, vec![good.clone(), good]),
            Err(TrackError::DuplicateId(1))
        );
    }
}
