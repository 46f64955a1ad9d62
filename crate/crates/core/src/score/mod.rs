//! MIDI transcriptions as second-domain note events, plus the
//! target/accompaniment split.

pub mod smf;

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

/// Notes shorter than this (including zero-duration ones) are stretched
/// to it so the synthesizer always gets a positive duration.
pub const MIN_NOTE_SECONDS: f64 = 0.010;

#[derive(Debug, Error)]
pub enum ScoreError {
    #[error("midi parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },
    #[error("unsupported format: {0}")]
    UnsupportedFormat(String),
    #[error("track selector {selector:?} {problem}; available tracks: {available:?}")]
    Selector { selector: String, problem: String, available: Vec<String> },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

/// One note in seconds, tagged with the track it came from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoteEvent {
    pub onset: f64,
    pub duration: f64,
    pub pitch: u8,
    pub velocity: u8,
    pub track_index: usize,
}

impl NoteEvent {
    pub fn new(
        onset: f64,
        duration: f64,
        pitch: u8,
        velocity: u8,
        track_index: usize,
    ) -> Result<Self, ScoreError> {
        if !(onset.is_finite() && onset >= 0.0) {
            return Err(ScoreError::InvalidArgument(format!("onset {onset} must be ≥ 0")));
        }
        if !(duration.is_finite() && duration > 0.0) {
            return Err(ScoreError::InvalidArgument(format!("duration {duration} must be > 0")));
        }
        if pitch > 127 {
            return Err(ScoreError::InvalidArgument(format!("pitch {pitch} outside 0–127")));
        }
        if velocity == 0 || velocity > 127 {
            return Err(ScoreError::InvalidArgument(format!("velocity {velocity} outside 1–127")));
        }
        Ok(Self { onset, duration, pitch, velocity, track_index })
    }

    pub fn end(&self) -> f64 {
        self.onset + self.duration
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Track {
    pub name: String,
    pub events: Vec<NoteEvent>,
}

/// A tempo-map entry: microseconds per quarter note from `tick` onward.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TempoChange {
    pub tick: u64,
    pub micros_per_quarter: u32,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParseWarnings {
    /// Note-ons with no matching note-off, closed at the end of the track.
    pub unmatched_note_ons: u32,
    /// Note-offs with no matching note-on, dropped.
    pub orphan_note_offs: u32,
    /// Channel messages the parser recognizes but does not interpret.
    pub ignored_events: BTreeMap<String, u32>,
}

/// A parsed MIDI file: per-track note events in seconds.
#[derive(Debug, Clone)]
pub struct Score {
    pub tracks: Vec<Track>,
    pub ticks_per_quarter: u16,
    pub tempo_map: Vec<TempoChange>,
    pub warnings: ParseWarnings,
}

impl Score {
    pub fn all_events(&self) -> Vec<NoteEvent> {
        let mut out: Vec<NoteEvent> =
            self.tracks.iter().flat_map(|t| t.events.iter().copied()).collect();
        out.sort_by(|a, b| a.onset.total_cmp(&b.onset));
        out
    }

    pub fn duration_seconds(&self) -> f64 {
        self.tracks
            .iter()
            .flat_map(|t| t.events.iter())
            .map(|e| e.end())
            .fold(0.0, f64::max)
    }
}

/// Piecewise-constant tempo map with precomputed cumulative seconds.
struct TickTimeline {
    // (tick, seconds_at_tick, seconds_per_tick)
    segments: Vec<(u64, f64, f64)>,
}

impl TickTimeline {
    fn new(mut changes: Vec<(u64, u32)>, ticks_per_quarter: u16) -> Self {
        changes.sort_by_key(|&(tick, _)| tick);
        // collapse same-tick duplicates, last one wins
        let mut collapsed: Vec<(u64, u32)> = Vec::new();
        for (tick, uspq) in changes {
            match collapsed.last_mut() {
                Some((t, u)) if *t == tick => *u = uspq,
                _ => collapsed.push((tick, uspq)),
            }
        }
        if collapsed.first().map(|&(t, _)| t != 0).unwrap_or(true) {
            collapsed.insert(0, (0, 500_000)); // MIDI default tempo
        }
        let tpq = ticks_per_quarter as f64;
        let mut segments = Vec::with_capacity(collapsed.len());
        let mut seconds = 0.0;
        let mut prev: Option<(u64, f64)> = None;
        for (tick, uspq) in collapsed {
            if let Some((ptick, rate)) = prev {
                seconds += (tick - ptick) as f64 * rate;
            }
            let rate = uspq as f64 / (tpq * 1e6);
            segments.push((tick, seconds, rate));
            prev = Some((tick, rate));
        }
        Self { segments }
    }

    fn seconds_at(&self, tick: u64) -> f64 {
        let idx = match self.segments.binary_search_by_key(&tick, |&(t, _, _)| t) {
            Ok(i) => i,
            Err(i) => i.saturating_sub(1),
        };
        let (seg_tick, seg_seconds, rate) = self.segments[idx];
        seg_seconds + (tick - seg_tick) as f64 * rate
    }
}

/// Parse a Standard MIDI File (format 0 or 1) into second-domain events.
pub fn parse_midi(bytes: &[u8]) -> Result<Score, ScoreError> {
    let raw = smf::parse(bytes)?;
    let tempo_changes: Vec<(u64, u32)> =
        raw.tracks.iter().flat_map(|t| t.tempos.iter().copied()).collect();
    let timeline = TickTimeline::new(tempo_changes.clone(), raw.ticks_per_quarter);

    let mut tracks = Vec::with_capacity(raw.tracks.len());
    for (index, rt) in raw.tracks.iter().enumerate() {
        let mut events: Vec<NoteEvent> = rt
            .notes
            .iter()
            .map(|n| {
                let onset = timeline.seconds_at(n.on_tick);
                let duration =
                    (timeline.seconds_at(n.off_tick) - onset).max(MIN_NOTE_SECONDS);
                NoteEvent {
                    onset,
                    duration,
                    pitch: n.pitch,
                    velocity: n.velocity,
                    track_index: index,
                }
            })
            .collect();
        events.sort_by(|a, b| a.onset.total_cmp(&b.onset));
        tracks.push(Track {
            name: rt.name.clone().unwrap_or_else(|| format!("track-{index}")),
            events,
        });
    }

    let tempo_map = {
        let timeline = TickTimeline::new(tempo_changes, raw.ticks_per_quarter);
        timeline
            .segments
            .iter()
            .map(|&(tick, _, rate)| TempoChange {
                tick,
                micros_per_quarter: (rate * raw.ticks_per_quarter as f64 * 1e6).round() as u32,
            })
            .collect()
    };

    Ok(Score {
        tracks,
        ticks_per_quarter: raw.ticks_per_quarter,
        tempo_map,
        warnings: raw.warnings,
    })
}

/// How to pick the target track: by position or by (unique) name.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TrackSelector {
    Index(usize),
    Name(String),
}

impl std::fmt::Display for TrackSelector {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            TrackSelector::Index(i) => write!(f, "#{i}"),
            TrackSelector::Name(n) => write!(f, "{n:?}"),
        }
    }
}

fn track_listing(score: &Score) -> Vec<String> {
    score
        .tracks
        .iter()
        .enumerate()
        .map(|(i, t)| format!("{i}: {} ({} notes)", t.name, t.events.len()))
        .collect()
}

/// Split a score into the selected track's events and everything else.
/// Accompaniment events keep their source `track_index`.
pub fn select_target(
    score: &Score,
    selector: &TrackSelector,
) -> Result<(Vec<NoteEvent>, Vec<NoteEvent>), ScoreError> {
    let index = match selector {
        TrackSelector::Index(i) => {
            if *i >= score.tracks.len() {
                return Err(ScoreError::Selector {
                    selector: selector.to_string(),
                    problem: format!("is out of range (score has {} tracks)", score.tracks.len()),
                    available: track_listing(score),
                });
            }
            *i
        }
        TrackSelector::Name(name) => {
            let matches: Vec<usize> = score
                .tracks
                .iter()
                .enumerate()
                .filter(|(_, t)| &t.name == name)
                .map(|(i, _)| i)
                .collect();
            match matches.as_slice() {
                [one] => *one,
                [] => {
                    return Err(ScoreError::Selector {
                        selector: selector.to_string(),
                        problem: "matches no track".into(),
                        available: track_listing(score),
                    })
                }
                many => {
                    return Err(ScoreError::Selector {
                        selector: selector.to_string(),
                        problem: format!("is ambiguous ({} tracks match)", many.len()),
                        available: track_listing(score),
                    })
                }
            }
        }
    };

    let target = score.tracks[index].events.clone();
    let mut accompaniment: Vec<NoteEvent> = score
        .tracks
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != index)
        .flat_map(|(_, t)| t.events.iter().copied())
        .collect();
    accompaniment.sort_by(|a, b| a.onset.total_cmp(&b.onset));
    Ok((target, accompaniment))
}

/// Multiply onsets and durations by `factor` (allowed range [0.5, 2.0]).
pub fn time_scale(events: &[NoteEvent], factor: f64) -> Result<Vec<NoteEvent>, ScoreError> {
    if !(0.5..=2.0).contains(&factor) {
        return Err(ScoreError::InvalidArgument(format!(
            "time-scale factor {factor} outside [0.5, 2.0]"
        )));
    }
    Ok(events
        .iter()
        .map(|e| NoteEvent {
            onset: e.onset * factor,
            duration: e.duration * factor,
            ..*e
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_note_file(tpq: u16, on: u64, off: u64, tempos: &[(u64, u32)]) -> Vec<u8> {
        smf::encode(
            tpq,
            tempos,
            &[smf::SmfTrackSpec {
                name: Some("lead".into()),
                channel: 0,
                notes: vec![(on, off, 60, 100)],
            }],
        )
    }

    #[test]
    fn one_note_at_default_tempo() {
        // seconds = ticks × tempo / (tpq × 10^6): 480 × 500000 / (480 × 10^6) = 0.5
        let score = parse_midi(&one_note_file(480, 0, 480, &[(0, 500_000)])).unwrap();
        assert_eq!(score.tracks.len(), 1);
        let e = score.tracks[0].events[0];
        assert_eq!(e.pitch, 60);
        assert!((e.onset - 0.0).abs() < 1e-12);
        assert!((e.duration - 0.5).abs() < 1e-12);
    }

    #[test]
    fn tempo_change_mid_note_integrates_piecewise() {
        // ticks 0–480 at 500000 µs/qn (0.5 s) then 480–960 at 250000 (0.25 s)
        let score =
            parse_midi(&one_note_file(480, 0, 960, &[(0, 500_000), (480, 250_000)])).unwrap();
        let e = score.tracks[0].events[0];
        assert!((e.duration - 0.75).abs() < 1e-12, "duration {}", e.duration);
    }

    #[test]
    fn missing_initial_tempo_defaults() {
        let score = parse_midi(&one_note_file(480, 0, 480, &[])).unwrap();
        assert!((score.tracks[0].events[0].duration - 0.5).abs() < 1e-12);
        assert_eq!(score.tempo_map[0].micros_per_quarter, 500_000);
    }

    #[test]
    fn empty_track_list_is_not_an_error() {
        let bytes = smf::encode(480, &[], &[]);
        let score = parse_midi(&bytes).unwrap();
        assert_eq!(score.tracks.len(), 1);
        assert!(score.tracks[0].events.is_empty());
    }

    #[test]
    fn format_2_is_unsupported() {
        let mut bytes = smf::encode(480, &[], &[]);
        bytes[9] = 2; // format field
        assert!(matches!(parse_midi(&bytes), Err(ScoreError::UnsupportedFormat(_))));
    }

    #[test]
    fn smpte_division_is_unsupported() {
        let mut bytes = smf::encode(480, &[], &[]);
        bytes[12] = 0xE8; // negative division => SMPTE
        assert!(matches!(parse_midi(&bytes), Err(ScoreError::UnsupportedFormat(_))));
    }

    #[test]
    fn truncated_chunk_reports_offset() {
        let mut bytes = one_note_file(480, 0, 480, &[]);
        bytes.truncate(bytes.len() - 3);
        match parse_midi(&bytes) {
            Err(ScoreError::Parse { offset, .. }) => assert!(offset > 0),
            other => panic!("expected Parse error, got {other:?}"),
        }
    }

    #[test]
    fn velocity_zero_note_on_acts_as_note_off() {
        // raw track: note-on v100 at 0, note-on v0 at 240 (same pitch/channel)
        let mut body = Vec::new();
        body.extend_from_slice(&[0x00, 0x90, 60, 100]);
        body.extend_from_slice(&[0x81, 0x70, 60, 0]); // delta 240, running status
        body.extend_from_slice(&[0x00, 0xFF, 0x2F, 0x00]);
        let mut bytes = Vec::new();
        bytes.extend_from_slice(b"MThd");
        bytes.extend_from_slice(&6u32.to_be_bytes());
        bytes.extend_from_slice(&0u16.to_be_bytes());
        bytes.extend_from_slice(&1u16.to_be_bytes());
        bytes.extend_from_slice(&480u16.to_be_bytes());
        bytes.extend_from_slice(b"MTrk");
        bytes.extend_from_slice(&(body.len() as u32).to_be_bytes());
        bytes.extend_from_slice(&body);

        let score = parse_midi(&bytes).unwrap();
        let e = score.tracks[0].events[0];
        assert!((e.duration - 0.25).abs() < 1e-12);
        assert_eq!(score.warnings.unmatched_note_ons, 0);
    }

    #[test]
    fn unmatched_note_on_closes_at_track_end_with_warning() {
        let bytes = smf::encode(
            480,
            &[],
            &[smf::SmfTrackSpec {
                name: None,
                channel: 0,
                notes: vec![(0, 960, 64, 90)],
            }],
        );
        // drop the note-off by patching it into a CC (same length message)
        let mut patched = bytes.clone();
        let pos = patched.windows(3).position(|w| w == [0x80, 64, 0]).unwrap();
        patched[pos] = 0xB0;
        patched[pos + 1] = 7;
        let score = parse_midi(&patched).unwrap();
        assert_eq!(score.warnings.unmatched_note_ons, 1);
        assert_eq!(score.tracks[0].events.len(), 1);
        assert!(score.tracks[0].events[0].duration > 0.0);
    }

    #[test]
    fn overlapping_same_pitch_notes_match_fifo() {
        let bytes = smf::encode(
            480,
            &[],
            &[smf::SmfTrackSpec {
                name: None,
                channel: 0,
                notes: vec![(0, 480, 60, 100), (240, 960, 60, 80)],
            }],
        );
        let score = parse_midi(&bytes).unwrap();
        let evs = &score.tracks[0].events;
        assert_eq!(evs.len(), 2);
        // FIFO: first on matches first off (at tick 480)
        assert!((evs[0].onset - 0.0).abs() < 1e-12);
        assert!((evs[0].duration - 0.5).abs() < 1e-12);
        assert_eq!(evs[0].velocity, 100);
        assert!((evs[1].onset - 0.25).abs() < 1e-12);
        assert!((evs[1].duration - 0.75).abs() < 1e-12);
        assert_eq!(evs[1].velocity, 80);
    }

    #[test]
    fn zero_duration_note_gets_floor() {
        let score = parse_midi(&one_note_file(480, 100, 100, &[])).unwrap();
        assert_eq!(score.tracks[0].events[0].duration, MIN_NOTE_SECONDS);
    }

    fn three_track_score() -> Score {
        let tracks = vec![
            smf::SmfTrackSpec { name: Some("Bass".into()), channel: 0, notes: vec![(0, 480, 36, 100)] },
            smf::SmfTrackSpec {
                name: Some("Guitar 2".into()),
                channel: 1,
                notes: vec![(0, 480, 64, 100), (480, 960, 67, 100)],
            },
            smf::SmfTrackSpec { name: Some("Pad".into()), channel: 2, notes: vec![(0, 1920, 52, 60)] },
        ];
        parse_midi(&smf::encode(480, &[], &tracks)).unwrap()
    }

    #[test]
    fn select_by_index_partitions() {
        let score = three_track_score();
        let (target, accomp) = select_target(&score, &TrackSelector::Index(1)).unwrap();
        assert_eq!(target.len(), 2);
        assert_eq!(accomp.len(), 2);
        assert!(target.iter().all(|e| e.track_index == 1));
        assert!(accomp.iter().all(|e| e.track_index != 1));
        // partition: union is everything, intersection empty
        assert_eq!(target.len() + accomp.len(), score.all_events().len());
    }

    #[test]
    fn select_by_unique_name() {
        let score = three_track_score();
        let (target, _) = select_target(&score, &TrackSelector::Name("Guitar 2".into())).unwrap();
        assert_eq!(target.len(), 2);
    }

    #[test]
    fn ambiguous_name_lists_available_tracks() {
        let tracks = vec![
            smf::SmfTrackSpec { name: Some("Guitar".into()), channel: 0, notes: vec![(0, 480, 60, 100)] },
            smf::SmfTrackSpec { name: Some("Guitar".into()), channel: 1, notes: vec![(0, 480, 62, 100)] },
        ];
        let score = parse_midi(&smf::encode(480, &[], &tracks)).unwrap();
        match select_target(&score, &TrackSelector::Name("Guitar".into())) {
            Err(ScoreError::Selector { available, .. }) => assert_eq!(available.len(), 2),
            other => panic!("expected Selector error, got {other:?}"),
        }
    }

    #[test]
    fn time_scale_behaviour() {
        let events = vec![NoteEvent::new(1.0, 0.5, 60, 100, 0).unwrap()];
        let same = time_scale(&events, 1.0).unwrap();
        assert_eq!(same, events);
        let doubled = time_scale(&events, 2.0).unwrap();
        assert!((doubled[0].onset - 2.0).abs() < 1e-12);
        assert!((doubled[0].duration - 1.0).abs() < 1e-12);
        assert_eq!(doubled[0].pitch, 60);
        assert!(time_scale(&events, 0.1).is_err());
    }
}
