//! Standard MIDI File binary parsing and a small writer.
//!
//! The parser handles formats 0 and 1, running status, velocity-0
//! note-offs, and overlapping same-pitch notes (matched FIFO per
//! channel/pitch). Non-note channel messages are skipped with counted
//! warnings. Errors carry the byte offset where parsing failed.

use super::{ParseWarnings, ScoreError};
use std::collections::{BTreeMap, VecDeque};

#[derive(Debug, Clone)]
pub(crate) struct RawNote {
    pub on_tick: u64,
    pub off_tick: u64,
    pub pitch: u8,
    pub velocity: u8,
}

#[derive(Debug, Clone, Default)]
pub(crate) struct RawTrack {
    pub name: Option<String>,
    pub notes: Vec<RawNote>,
    pub tempos: Vec<(u64, u32)>,
    pub end_tick: u64,
}

#[derive(Debug, Clone)]
pub(crate) struct SmfFile {
    pub ticks_per_quarter: u16,
    pub tracks: Vec<RawTrack>,
    pub warnings: ParseWarnings,
}

struct Cursor<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn err(&self, message: impl Into<String>) -> ScoreError {
        ScoreError::Parse { offset: self.pos, message: message.into() }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], ScoreError> {
        if self.pos + n > self.data.len() {
            return Err(self.err(format!("truncated while reading {what}")));
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn byte(&mut self, what: &str) -> Result<u8, ScoreError> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16, ScoreError> {
        let b = self.take(2, what)?;
        Ok(u16::from_be_bytes([b[0], b[1]]))
    }

    fn u32(&mut self, what: &str) -> Result<u32, ScoreError> {
        let b = self.take(4, what)?;
        Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
    }

    /// MIDI variable-length quantity, at most 4 bytes.
    fn varlen(&mut self) -> Result<u32, ScoreError> {
        let mut value: u32 = 0;
        for i in 0..4 {
            let b = self.byte("variable-length quantity")?;
            value = (value << 7) | (b & 0x7F) as u32;
            if b & 0x80 == 0 {
                return Ok(value);
            }
            if i == 3 {
                break;
            }
        }
        Err(self.err("variable-length quantity longer than 4 bytes"))
    }
}

pub(crate) fn parse(bytes: &[u8]) -> Result<SmfFile, ScoreError> {
    let mut cur = Cursor { data: bytes, pos: 0 };
    if cur.take(4, "header tag")? != b"MThd" {
        return Err(ScoreError::Parse { offset: 0, message: "missing MThd header".into() });
    }
    let hlen = cur.u32("header length")? as usize;
    if hlen < 6 {
        return Err(cur.err(format!("header length {hlen} < 6")));
    }
    let format = cur.u16("format")?;
    let ntrks = cur.u16("track count")?;
    let division = cur.u16("division")?;
    cur.take(hlen - 6, "header padding")?;

    if format > 1 {
        return Err(ScoreError::UnsupportedFormat(format!(
            "SMF format {format}; only formats 0 and 1 are supported"
        )));
    }
    if division & 0x8000 != 0 {
        return Err(ScoreError::UnsupportedFormat(
            "SMPTE time division is not supported".into(),
        ));
    }
    if division == 0 {
        return Err(cur.err("division of zero ticks per quarter"));
    }

    let mut warnings = ParseWarnings::default();
    let mut tracks = Vec::new();
    for _ in 0..ntrks {
        // skip alien chunks between tracks, per the SMF spec
        loop {
            let tag = cur.take(4, "chunk tag")?;
            let len = cur.u32("chunk length")? as usize;
            if tag == b"MTrk" {
                let body_start = cur.pos;
                cur.take(len, "track body")?;
                tracks.push(parse_track(bytes, body_start, len, &mut warnings)?);
                break;
            }
            cur.take(len, "alien chunk body")?;
        }
    }

    Ok(SmfFile { ticks_per_quarter: division, tracks, warnings })
}

fn parse_track(
    file: &[u8],
    start: usize,
    len: usize,
    warnings: &mut ParseWarnings,
) -> Result<RawTrack, ScoreError> {
    let mut cur = Cursor { data: &file[..start + len], pos: start };
    let mut track = RawTrack::default();
    let mut tick: u64 = 0;
    let mut running_status: Option<u8> = None;
    // FIFO of pending note-ons per (channel, pitch)
    let mut pending: BTreeMap<(u8, u8), VecDeque<(u64, u8)>> = BTreeMap::new();
    let ignored = |warnings: &mut ParseWarnings, kind: &str| {
        *warnings.ignored_events.entry(kind.to_string()).or_insert(0) += 1;
    };

    while cur.pos < start + len {
        tick += cur.varlen()? as u64;
        let first = cur.byte("event status")?;
        let status = if first >= 0x80 {
            first
        } else {
            cur.pos -= 1; // data byte: running status applies
            running_status.ok_or_else(|| cur.err("data byte with no running status"))?
        };

        match status {
            0xFF => {
                running_status = None;
                let meta_type = cur.byte("meta type")?;
                let mlen = cur.varlen()? as usize;
                let body = cur.take(mlen, "meta body")?;
                match meta_type {
                    0x51 => {
                        if mlen != 3 {
                            return Err(cur.err(format!("tempo meta of length {mlen}")));
                        }
                        let uspq =
                            ((body[0] as u32) << 16) | ((body[1] as u32) << 8) | body[2] as u32;
                        track.tempos.push((tick, uspq));
                    }
                    0x03 => {
                        if track.name.is_none() {
                            track.name = Some(String::from_utf8_lossy(body).into_owned());
                        }
                    }
                    0x2F => {
                        track.end_tick = track.end_tick.max(tick);
                        break;
                    }
                    _ => {}
                }
            }
            0xF0 | 0xF7 => {
                running_status = None;
                let slen = cur.varlen()? as usize;
                cur.take(slen, "sysex body")?;
            }
            0xF1..=0xF6 | 0xF8..=0xFE => {
                return Err(cur.err(format!("unexpected realtime/system status {status:#04x}")));
            }
            _ => {
                running_status = Some(status);
                let channel = status & 0x0F;
                match status & 0xF0 {
                    0x90 => {
                        let pitch = cur.byte("note-on pitch")? & 0x7F;
                        let velocity = cur.byte("note-on velocity")? & 0x7F;
                        if velocity == 0 {
                            close_note(&mut pending, &mut track, channel, pitch, tick, warnings);
                        } else {
                            pending
                                .entry((channel, pitch))
                                .or_default()
                                .push_back((tick, velocity));
                        }
                    }
                    0x80 => {
                        let pitch = cur.byte("note-off pitch")? & 0x7F;
                        let _vel = cur.byte("note-off velocity")?;
                        close_note(&mut pending, &mut track, channel, pitch, tick, warnings);
                    }
                    0xB0 => {
                        let controller = cur.byte("controller number")?;
                        let _value = cur.byte("controller value")?;
                        if controller == 64 {
                            ignored(warnings, "sustain_pedal");
                        } else {
                            ignored(warnings, "control_change");
                        }
                    }
                    0xE0 => {
                        cur.take(2, "pitch bend data")?;
                        ignored(warnings, "pitch_bend");
                    }
                    0xA0 => {
                        cur.take(2, "aftertouch data")?;
                        ignored(warnings, "poly_aftertouch");
                    }
                    0xD0 => {
                        cur.take(1, "channel pressure data")?;
                        ignored(warnings, "channel_pressure");
                    }
                    0xC0 => {
                        cur.take(1, "program number")?;
                        ignored(warnings, "program_change");
                    }
                    _ => unreachable!("status byte {status:#04x}"),
                }
            }
        }
        track.end_tick = track.end_tick.max(tick);
    }

    // close anything still sounding at the end of the track
    for ((_, pitch), queue) in pending {
        for (on_tick, velocity) in queue {
            warnings.unmatched_note_ons += 1;
            let off_tick = track.end_tick.max(on_tick + 1);
            track.notes.push(RawNote { on_tick, off_tick, pitch, velocity });
        }
    }
    Ok(track)
}

fn close_note(
    pending: &mut BTreeMap<(u8, u8), VecDeque<(u64, u8)>>,
    track: &mut RawTrack,
    channel: u8,
    pitch: u8,
    tick: u64,
    warnings: &mut ParseWarnings,
) {
    match pending.get_mut(&(channel, pitch)).and_then(VecDeque::pop_front) {
        Some((on_tick, velocity)) => {
            track.notes.push(RawNote { on_tick, off_tick: tick, pitch, velocity });
        }
        None => warnings.orphan_note_offs += 1,
    }
}

// ---------------------------------------------------------------------------
// Writer

/// A track to encode: (on_tick, off_tick, pitch, velocity) tuples.
#[derive(Debug, Clone, Default)]
pub struct SmfTrackSpec {
    pub name: Option<String>,
    pub channel: u8,
    pub notes: Vec<(u64, u64, u8, u8)>,
}

fn push_varlen(out: &mut Vec<u8>, mut value: u32) {
    let mut stack = [0u8; 4];
    let mut n = 0;
    loop {
        stack[n] = (value & 0x7F) as u8;
        value >>= 7;
        n += 1;
        if value == 0 {
            break;
        }
    }
    for i in (0..n).rev() {
        let cont = if i > 0 { 0x80 } else { 0 };
        out.push(stack[i] | cont);
    }
}

/// Encode a format-1 SMF. Tempo changes go into the first track.
pub fn encode(
    ticks_per_quarter: u16,
    tempo_changes: &[(u64, u32)],
    tracks: &[SmfTrackSpec],
) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(b"MThd");
    out.extend_from_slice(&6u32.to_be_bytes());
    out.extend_from_slice(&1u16.to_be_bytes());
    out.extend_from_slice(&(tracks.len().max(1) as u16).to_be_bytes());
    out.extend_from_slice(&ticks_per_quarter.to_be_bytes());

    let empty = [SmfTrackSpec::default()];
    let tracks = if tracks.is_empty() { &empty[..] } else { tracks };
    for (ti, spec) in tracks.iter().enumerate() {
        // (tick, order, raw message) — order keeps offs before ons at equal ticks
        let mut events: Vec<(u64, u8, Vec<u8>)> = Vec::new();
        if let Some(name) = &spec.name {
            let mut msg = vec![0xFF, 0x03];
            push_varlen(&mut msg, name.len() as u32);
            msg.extend_from_slice(name.as_bytes());
            events.push((0, 0, msg));
        }
        if ti == 0 {
            for &(tick, uspq) in tempo_changes {
                events.push((
                    tick,
                    0,
                    vec![0xFF, 0x51, 0x03, (uspq >> 16) as u8, (uspq >> 8) as u8, uspq as u8],
                ));
            }
        }
        let ch = spec.channel & 0x0F;
        for &(on, off, pitch, vel) in &spec.notes {
            events.push((on, 2, vec![0x90 | ch, pitch & 0x7F, vel.clamp(1, 127)]));
            events.push((off, 1, vec![0x80 | ch, pitch & 0x7F, 0]));
        }
        events.sort_by_key(|(tick, order, _)| (*tick, *order));

        let mut body = Vec::new();
        let mut last_tick = 0u64;
        for (tick, _, msg) in events {
            push_varlen(&mut body, (tick - last_tick) as u32);
            body.extend_from_slice(&msg);
            last_tick = tick;
        }
        push_varlen(&mut body, 0);
        body.extend_from_slice(&[0xFF, 0x2F, 0x00]);

        out.extend_from_slice(b"MTrk");
        out.extend_from_slice(&(body.len() as u32).to_be_bytes());
        out.extend_from_slice(&body);
    }
    out
}
