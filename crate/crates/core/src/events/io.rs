use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Event, EventStream};
use crate::{Error, Result};

pub const EVT1_MAGIC: &[u8; 4] = b"EVT1";
/// magic + u32 width + u32 height + u64 count
pub const EVT1_HEADER_LEN: usize = 4 + 4 + 4 + 8;
/// u64 t + u16 x + u16 y + u8 p
pub const EVT1_RECORD_LEN: usize = 8 + 2 + 2 + 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EventFormat {
    Csv,
    Evt1,
}

impl EventFormat {
    /// Guess from the file extension; anything other than `.csv` is EVT1.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => EventFormat::Csv,
            _ => EventFormat::Evt1,
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct LoadOptions {
    /// Sensor geometry. Required for CSV; checked against the header for EVT1.
    pub geometry: Option<(u32, u32)>,
    /// How far (µs) a timestamp may run behind the latest one seen before the
    /// stream is rejected. 0 means strictly non-decreasing input.
    pub reorder_window: u64,
}

impl LoadOptions {
    pub fn with_geometry(width: u32, height: u32) -> Self {
        Self {
            geometry: Some((width, height)),
            reorder_window: 0,
        }
    }
}

struct Checker {
    width: u32,
    height: u32,
    window: u64,
    latest: u64,
    reordered: bool,
}

impl Checker {
    fn new(width: u32, height: u32, window: u64) -> Self {
        Self {
            width,
            height,
            window,
            latest: 0,
            reordered: false,
        }
    }

    fn check(&mut self, t: u64, x: u64, y: u64, p: u64, location: impl Fn() -> String) -> Result<Event> {
        let parse = |reason: &str| Error::Parse {
            location: location(),
            reason: reason.to_string(),
        };
        if x >= u64::from(self.width) {
            return Err(parse("x out of range"));
        }
        if y >= u64::from(self.height) {
            return Err(parse("y out of range"));
        }
        if p > 1 {
            return Err(parse("polarity must be 0 or 1"));
        }
        if t < self.latest {
            if self.latest - t > self.window {
                return Err(parse("timestamp goes backwards beyond the reorder window"));
            }
            self.reordered = true;
        }
        self.latest = self.latest.max(t);
        Ok(Event::new(t, x as u16, y as u16, p as u8))
    }
}

fn check_geometry(width: u32, height: u32) -> Result<()> {
    if width == 0 || height == 0 || width > 65536 || height > 65536 {
        return Err(Error::invalid(format!(
            "sensor geometry {width}x{height} outside 1..=65536"
        )));
    }
    Ok(())
}

pub fn parse_csv(text: &str, opts: &LoadOptions) -> Result<EventStream> {
    let (width, height) = opts
        .geometry
        .ok_or_else(|| Error::invalid("CSV input needs an explicit sensor geometry"))?;
    check_geometry(width, height)?;
    let mut checker = Checker::new(width, height, opts.reorder_window);
    let mut events = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let location = || format!("line {}", lineno + 1);
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 4 {
            return Err(Error::Parse {
                location: location(),
                reason: format!("expected 4 fields t,x,y,p, found {}", fields.len()),
            });
        }
        let mut nums = [0u64; 4];
        for (slot, (name, field)) in nums.iter_mut().zip(["t", "x", "y", "p"].iter().zip(&fields)) {
            *slot = field.parse().map_err(|_| Error::Parse {
                location: location(),
                reason: format!("{name} is not an unsigned integer: {field:?}"),
            })?;
        }
        events.push(checker.check(nums[0], nums[1], nums[2], nums[3], location)?);
    }
    if checker.reordered {
        events.sort_by_key(|e| e.t);
    }
    Ok(EventStream::new(width, height, events))
}

pub fn write_csv(stream: &EventStream) -> String {
    let mut out = String::with_capacity(stream.len() * 16);
    for e in &stream.events {
        // writing to a String cannot fail
        let _ = writeln!(out, "{},{},{},{}", e.t, e.x, e.y, e.p);
    }
    out
}

pub fn encode_evt1(stream: &EventStream) -> Vec<u8> {
    let mut out = Vec::with_capacity(EVT1_HEADER_LEN + stream.len() * EVT1_RECORD_LEN);
    out.extend_from_slice(EVT1_MAGIC);
    out.extend_from_slice(&stream.width.to_le_bytes());
    out.extend_from_slice(&stream.height.to_le_bytes());
    out.extend_from_slice(&(stream.len() as u64).to_le_bytes());
    for e in &stream.events {
        out.extend_from_slice(&e.t.to_le_bytes());
        out.extend_from_slice(&e.x.to_le_bytes());
        out.extend_from_slice(&e.y.to_le_bytes());
        out.push(e.p);
    }
    out
}

pub fn decode_evt1(bytes: &[u8], opts: &LoadOptions) -> Result<EventStream> {
    let err = |offset: usize, reason: &str| Error::Parse {
        location: format!("byte offset {offset}"),
        reason: reason.to_string(),
    };
    if bytes.len() < EVT1_HEADER_LEN {
        return Err(err(0, "file shorter than the EVT1 header"));
    }
    if &bytes[0..4] != EVT1_MAGIC {
        return Err(err(0, "bad magic, expected \"EVT1\""));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    let width = u32_at(4);
    let height = u32_at(8);
    let count = u64::from_le_bytes(bytes[12..20].try_into().unwrap());
    check_geometry(width, height)?;
    if let Some((w, h)) = opts.geometry {
        if (w, h) != (width, height) {
            return Err(Error::invalid(format!(
                "EVT1 header geometry {width}x{height} differs from expected {w}x{h}"
            )));
        }
    }
    let body = &bytes[EVT1_HEADER_LEN..];
    let expected = count
        .checked_mul(EVT1_RECORD_LEN as u64)
        .ok_or_else(|| err(12, "event count overflows"))?;
    if body.len() as u64 != expected {
        return Err(err(
            EVT1_HEADER_LEN,
            &format!("header declares {count} events but body holds {} bytes", body.len()),
        ));
    }

    let mut checker = Checker::new(width, height, opts.reorder_window);
    let mut events = Vec::with_capacity(count as usize);
    for (i, rec) in body.chunks_exact(EVT1_RECORD_LEN).enumerate() {
        let t = u64::from_le_bytes(rec[0..8].try_into().unwrap());
        let x = u16::from_le_bytes(rec[8..10].try_into().unwrap());
        let y = u16::from_le_bytes(rec[10..12].try_into().unwrap());
        let p = rec[12];
        let offset = EVT1_HEADER_LEN + i * EVT1_RECORD_LEN;
        events.push(checker.check(t, x.into(), y.into(), p.into(), || {
            format!("byte offset {offset}")
        })?);
    }
    if checker.reordered {
        events.sort_by_key(|e| e.t);
    }
    Ok(EventStream::new(width, height, events))
}

pub fn load_events(path: &Path, format: EventFormat, opts: &LoadOptions) -> Result<EventStream> {
    match format {
        EventFormat::Csv => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            parse_csv(&text, opts)
        }
        EventFormat::Evt1 => {
            let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
            decode_evt1(&bytes, opts)
        }
    }
}

pub fn save_events(stream: &EventStream, path: &Path, format: EventFormat) -> Result<()> {
    let bytes = match format {
        EventFormat::Csv => write_csv(stream).into_bytes(),
        EventFormat::Evt1 => encode_evt1(stream),
    };
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_two_events() {
        let s = parse_csv("1000,3,4,1\n2000,3,5,0", &LoadOptions::with_geometry(8, 8)).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s.duration(), 1000);
        assert_eq!(s.events[1], Event::new(2000, 3, 5, 0));
    }

    #[test]
    fn csv_empty_is_empty_stream() {
        let s = parse_csv("", &LoadOptions::with_geometry(8, 8)).unwrap();
        assert!(s.is_empty());
        assert_eq!(s.duration(), 0);
    }

    #[test]
    fn csv_x_out_of_range() {
        let err = parse_csv("1000,9,0,1", &LoadOptions::with_geometry(8, 8)).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("x out of range"), "{msg}");
        assert!(msg.contains("line 1"), "{msg}");
    }

    #[test]
    fn csv_reports_line_of_bad_record() {
        let err = parse_csv("1,0,0,0\n2,0,zero,0\n", &LoadOptions::with_geometry(8, 8)).unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
    }

    #[test]
    fn strict_order_by_default() {
        let err = parse_csv("2000,0,0,0\n1999,0,0,0", &LoadOptions::with_geometry(8, 8)).unwrap_err();
        assert!(err.to_string().contains("backwards"));
    }

    #[test]
    fn reorder_window_sorts() {
        let opts = LoadOptions {
            geometry: Some((8, 8)),
            reorder_window: 10,
        };
        let s = parse_csv("2000,0,0,0\n1995,1,0,0\n2001,2,0,0", &opts).unwrap();
        let ts: Vec<u64> = s.events.iter().map(|e| e.t).collect();
        assert_eq!(ts, vec![1995, 2000, 2001]);
        assert!(parse_csv("2000,0,0,0\n1989,1,0,0", &opts).is_err());
    }

    #[test]
    fn evt1_header_layout() {
        let bytes = encode_evt1(&EventStream::empty(304, 240));
        assert_eq!(&bytes[0..4], b"EVT1");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 304);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 240);
        assert_eq!(u64::from_le_bytes(bytes[12..20].try_into().unwrap()), 0);
        assert_eq!(bytes.len(), EVT1_HEADER_LEN);
    }

    #[test]
    fn evt1_truncated_body_is_rejected() {
        let s = EventStream::new(8, 8, vec![Event::new(1, 2, 3, 1)]);
        let mut bytes = encode_evt1(&s);
        bytes.pop();
        assert!(decode_evt1(&bytes, &LoadOptions::default()).is_err());
    }

    #[test]
    fn evt1_bad_coordinate_reports_offset() {
        let s = EventStream::new(8, 8, vec![Event::new(1, 2, 3, 1)]);
        let mut bytes = encode_evt1(&s);
        bytes[EVT1_HEADER_LEN + 10] = 8; // y = 8 on an 8-row sensor
        let err = decode_evt1(&bytes, &LoadOptions::default()).unwrap_err();
        assert!(err.to_string().contains("byte offset 20"), "{err}");
    }

    #[test]
    fn csv_one_event_line() {
        let s = EventStream::new(8, 8, vec![Event::new(7, 1, 2, 1)]);
        assert_eq!(write_csv(&s), "7,1,2,1\n");
    }

    #[test]
    fn csv_and_evt1_agree() {
        let s = EventStream::new(
            16,
            4,
            vec![Event::new(5, 15, 3, 1), Event::new(5, 0, 0, 0), Event::new(90, 7, 2, 1)],
        );
        let a = parse_csv(&write_csv(&s), &LoadOptions::with_geometry(16, 4)).unwrap();
        let b = decode_evt1(&encode_evt1(&s), &LoadOptions::default()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a, s);
    }
}
