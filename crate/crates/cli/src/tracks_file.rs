//! TracksFile v1: the text interchange format between a feature tracker and
//! the reconstruction pipeline. See `docs/formats.md` for the grammar.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::Vector2;
use spherical_sfm::geom::ImageFrame;
use spherical_sfm::tracks::{validate_track, Observation, Track, TrackSet};
use thiserror::Error;

pub const MAGIC: &str = "sphsfm-tracks";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum TracksFileError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: {message}")]
    Validation { line: usize, message: String },
    #[error("line {line}: unsupported format version {found} (expected {FORMAT_VERSION})")]
    Version { line: usize, found: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Header and tracks of a TracksFile.
#[derive(Debug, Clone, PartialEq)]
pub struct TracksDocument {
    pub frame: ImageFrame,
    pub frame_count: usize,
    /// Free-form `key value` metadata, kept in order of appearance.
    pub metadata: Vec<(String, String)>,
    pub tracks: TrackSet,
}

impl TracksDocument {
    pub fn new(tracks: TrackSet, frame_count: usize) -> Self {
        Self {
            frame: tracks.frame(),
            frame_count,
            metadata: Vec::new(),
            tracks,
        }
    }
}

fn parse_err(line: usize, message: impl Into<String>) -> TracksFileError {
    TracksFileError::Parse {
        line,
        message: message.into(),
    }
}

fn invalid(line: usize, message: impl Into<String>) -> TracksFileError {
    TracksFileError::Validation {
        line,
        message: message.into(),
    }
}

fn field<T: std::str::FromStr>(line: usize, name: &str, value: &str) -> Result<T, TracksFileError> {
    value
        .parse()
        .map_err(|_| parse_err(line, format!("invalid {name} {value:?}")))
}

/// Lines with their 1-based numbers, skipping blanks and `#` comments.
fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

pub fn parse_tracks(text: &str) -> Result<TracksDocument, TracksFileError> {
    let mut lines = content_lines(text);
    let (line, first) = lines.next().ok_or_else(|| parse_err(1, "empty file"))?;
    let mut words = first.split_whitespace();
    if words.next() != Some(MAGIC) {
        return Err(parse_err(line, format!("expected '{MAGIC} <version>'")));
    }
    let version = words
        .next()
        .ok_or_else(|| parse_err(line, "missing format version"))?;
    if version != FORMAT_VERSION.to_string() {
        return Err(TracksFileError::Version {
            line,
            found: version.to_string(),
        });
    }

    let (mut width, mut height, mut frame_count) = (None, None, None);
    let mut metadata = Vec::new();
    let mut header_end = None;
    for (line, text) in lines.by_ref() {
        let (key, value) = text
            .split_once(char::is_whitespace)
            .map_or((text, ""), |(k, v)| (k, v.trim()));
        match key {
            "image_width" => width = Some(field::<u32>(line, "image width", value)?),
            "image_height" => height = Some(field::<u32>(line, "image height", value)?),
            "frame_count" => frame_count = Some(field::<usize>(line, "frame count", value)?),
            "meta" => {
                let (k, v) = value
                    .split_once(char::is_whitespace)
                    .map_or((value, ""), |(k, v)| (k, v.trim()));
                if k.is_empty() {
                    return Err(parse_err(line, "meta needs a key"));
                }
                metadata.push((k.to_string(), v.to_string()));
            }
            "tracks" => {
                header_end = Some(line);
                break;
            }
            other => return Err(parse_err(line, format!("unknown header field {other:?}"))),
        }
    }
    let header_end = header_end
        .ok_or_else(|| parse_err(text.lines().count().max(1), "missing 'tracks' line"))?;
    let missing = |name: &str| parse_err(header_end, format!("header lacks {name}"));
    let (width, height, frame_count) = (
        width.ok_or_else(|| missing("image_width"))?,
        height.ok_or_else(|| missing("image_height"))?,
        frame_count.ok_or_else(|| missing("frame_count"))?,
    );
    if width == 0 || height == 0 {
        return Err(invalid(header_end, "image dimensions must be positive"));
    }
    let frame = ImageFrame::new(width, height);

    let mut tracks = Vec::new();
    let mut seen: BTreeMap<u64, usize> = BTreeMap::new();
    for (line, text) in lines {
        let words: Vec<&str> = text.split_whitespace().collect();
        let id: u64 = field(line, "track id", words[0])?;
        let rest = &words[1..];
        if rest.is_empty() || rest.len() % 3 != 0 {
            return Err(parse_err(
                line,
                format!("track {id}: expected triples of 'frame x y'"),
            ));
        }
        let mut observations = Vec::with_capacity(rest.len() / 3);
        for t in rest.chunks(3) {
            let frame_index: usize = field(line, "frame index", t[0])?;
            let x: f64 = field(line, "x coordinate", t[1])?;
            let y: f64 = field(line, "y coordinate", t[2])?;
            if frame_index >= frame_count {
                return Err(invalid(
                    line,
                    format!(
                        "track {id}: frame {frame_index} is not below frame_count {frame_count}"
                    ),
                ));
            }
            observations.push(Observation {
                frame: frame_index,
                position: Vector2::new(x, y),
            });
        }
        let track = Track { id, observations };
        validate_track(&track, &frame).map_err(|e| invalid(line, e.to_string()))?;
        if let Some(previous) = seen.insert(id, line) {
            return Err(invalid(
                line,
                format!("track id {id} already used on line {previous}"),
            ));
        }
        tracks.push(track);
    }
    if tracks.is_empty() {
        return Err(invalid(header_end, "the file contains no tracks"));
    }
    let tracks = TrackSet::new(frame, tracks).map_err(|e| invalid(header_end, e.to_string()))?;
    Ok(TracksDocument {
        frame,
        frame_count,
        metadata,
        tracks,
    })
}

pub fn format_tracks(doc: &TracksDocument) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{MAGIC} {FORMAT_VERSION}");
    let _ = writeln!(out, "image_width {}", doc.frame.width);
    let _ = writeln!(out, "image_height {}", doc.frame.height);
    let _ = writeln!(out, "frame_count {}", doc.frame_count);
    for (k, v) in &doc.metadata {
        let _ = writeln!(out, "meta {k} {v}");
    }
    out.push_str("tracks\n");
    for t in doc.tracks.tracks() {
        let _ = write!(out, "{}", t.id);
        for o in &t.observations {
            // Default float formatting is the shortest exact round trip.
            let _ = write!(out, " {} {} {}", o.frame, o.position.x, o.position.y);
        }
        out.push('\n');
    }
    out
}

pub fn read_tracks(path: &Path) -> Result<TracksDocument, TracksFileError> {
    parse_tracks(&std::fs::read_to_string(path)?)
}

pub fn write_tracks(doc: &TracksDocument, path: &Path) -> Result<(), TracksFileError> {
    std::fs::write(path, format_tracks(doc))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "sphsfm-tracks 1
# two tracks over three frames
image_width 640
image_height 480
frame_count 3
meta source unit-test
tracks
7 0 10.5 20 1 11.5 20.25
9 0 100 200 1 101 201 2 102.125 202
";

    #[test]
    fn minimal_fixture_round_trips() {
        let doc = parse_tracks(MINIMAL).unwrap();
        assert_eq!(doc.frame, ImageFrame::new(640, 480));
        assert_eq!(doc.frame_count, 3);
        assert_eq!(
            doc.metadata,
            vec![("source".to_string(), "unit-test".to_string())]
        );
        assert_eq!(doc.tracks.tracks().len(), 2);
        assert_eq!(
            doc.tracks.tracks()[1].observations[2].position,
            Vector2::new(102.125, 202.0)
        );
        let again = parse_tracks(&format_tracks(&doc)).unwrap();
        assert_eq!(again, doc);
    }

    #[test]
    fn out_of_bounds_names_the_record() {
        let text = MINIMAL.replace("101 201", "641 201");
        let err = parse_tracks(&text).unwrap_err();
        assert!(
            matches!(err, TracksFileError::Validation { line: 9, .. }),
            "{err}"
        );
        assert!(err.to_string().contains("track 9"), "{err}");
    }

    #[test]
    fn non_monotone_frames_are_rejected() {
        let text = MINIMAL.replace("7 0 10.5 20 1 11.5 20.25", "7 1 10.5 20 0 11.5 20.25");
        assert!(matches!(
            parse_tracks(&text),
            Err(TracksFileError::Validation { line: 8, .. })
        ));
    }

    #[test]
    fn empty_track_list_is_a_validation_error() {
        let text: String = MINIMAL.lines().take(7).map(|l| format!("{l}\n")).collect();
        assert!(matches!(
            parse_tracks(&text),
            Err(TracksFileError::Validation { line: 7, .. })
        ));
    }

    #[test]
    fn unknown_version_is_rejected() {
        let text = MINIMAL.replacen("sphsfm-tracks 1", "sphsfm-tracks 2", 1);
        assert!(matches!(
            parse_tracks(&text),
            Err(TracksFileError::Version { line: 1, .. })
        ));
    }

    #[test]
    fn malformed_records_report_their_line() {
        for (bad, line) in [
            ("9 0 100 200 1 101", 9),
            ("x 0 1 1 1 2 2", 9),
            ("9 0 1 nan? 1 2 2", 9),
        ] {
            let text = MINIMAL.replace("9 0 100 200 1 101 201 2 102.125 202", bad);
            match parse_tracks(&text) {
                Err(TracksFileError::Parse { line: l, .. }) => assert_eq!(l, line, "{bad}"),
                other => panic!("{bad}: {other:?}"),
            }
        }
    }

    #[test]
    fn duplicate_ids_and_frames_past_the_count_are_rejected() {
        let dup = MINIMAL.replace("9 0 100", "7 0 100");
        assert!(matches!(
            parse_tracks(&dup),
            Err(TracksFileError::Validation { line: 9, .. })
        ));
        let late = MINIMAL.replace("2 102.125 202", "3 102.125 202");
        assert!(matches!(
            parse_tracks(&late),
            Err(TracksFileError::Validation { line: 9, .. })
        ));
    }

    #[test]
    fn missing_header_fields_are_parse_errors() {
        let text = MINIMAL.replace("frame_count 3\n", "");
        assert!(matches!(
            parse_tracks(&text),
            Err(TracksFileError::Parse { .. })
        ));
        assert!(matches!(
            parse_tracks(""),
            Err(TracksFileError::Parse { line: 1, .. })
        ));
    }
}
