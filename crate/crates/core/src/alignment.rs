//! Forced-alignment parsing and phone-to-frame mapping.
//!
//! Two input formats are accepted: a three-column TSV (`label<TAB>start<TAB>end`,
//! seconds, `.` decimal point) and the long TextGrid format restricted to one
//! interval tier named `phones`. Gaps between segments become explicit
//! [`SILENCE_LABEL`] phones once mapped to frames.

use std::fmt::Write as _;
use std::path::Path;

use crate::binio;
use crate::error::{Error, Result};

pub const SILENCE_LABEL: &str = "sil";

const TIME_EPS: f64 = 1e-9;

/// A phone interval in seconds, as read from an alignment file.
#[derive(Debug, Clone, PartialEq)]
pub struct RawSegment {
    pub label: String,
    pub start: f64,
    pub end: f64,
}

impl RawSegment {
    pub fn new(label: impl Into<String>, start: f64, end: f64) -> Self {
        RawSegment {
            label: label.into(),
            start,
            end,
        }
    }
}

/// A phone interval in frames, `[start_frame, end_frame)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segment {
    pub label: String,
    pub start_frame: usize,
    pub end_frame: usize,
}

impl Segment {
    pub fn len(&self) -> usize {
        self.end_frame - self.start_frame
    }

    pub fn is_empty(&self) -> bool {
        self.end_frame == self.start_frame
    }

    pub fn last_frame(&self) -> usize {
        self.end_frame - 1
    }
}

/// Contiguous, sorted phone segments covering `[0, T)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PhoneAlignment {
    segments: Vec<Segment>,
}

impl PhoneAlignment {
    pub fn new(segments: Vec<Segment>) -> Result<Self> {
        if segments.is_empty() {
            return Err(Error::EmptyInput("alignment with no segments".into()));
        }
        let mut cursor = 0;
        for s in &segments {
            if s.start_frame != cursor || s.end_frame <= s.start_frame {
                return Err(Error::Validation(format!(
                    "segment {:?} [{}, {}) breaks contiguous coverage at frame {cursor}",
                    s.label, s.start_frame, s.end_frame
                )));
            }
            cursor = s.end_frame;
        }
        Ok(PhoneAlignment { segments })
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn num_frames(&self) -> usize {
        self.segments.last().map_or(0, |s| s.end_frame)
    }

    pub fn frame_map(&self) -> FramePhoneMap {
        let mut phone_of_frame = Vec::with_capacity(self.num_frames());
        for (i, s) in self.segments.iter().enumerate() {
            phone_of_frame.extend(std::iter::repeat_n(i, s.len()));
        }
        FramePhoneMap { phone_of_frame }
    }

    /// Back to seconds using frame boundaries `f * hop`.
    pub fn to_raw(&self, hop_seconds: f64) -> Vec<RawSegment> {
        self.segments
            .iter()
            .map(|s| RawSegment::new(s.label.clone(), s.start_frame as f64 * hop_seconds, s.end_frame as f64 * hop_seconds))
            .collect()
    }
}

/// Segment ordinal of every frame.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FramePhoneMap {
    phone_of_frame: Vec<usize>,
}

impl FramePhoneMap {
    /// Ordinals must start at 0 and step by 0 or 1.
    pub fn new(phone_of_frame: Vec<usize>) -> Result<Self> {
        if phone_of_frame.is_empty() {
            return Err(Error::EmptyInput("frame map with zero frames".into()));
        }
        if phone_of_frame[0] != 0 {
            return Err(Error::Validation("first frame must belong to segment 0".into()));
        }
        for (f, w) in phone_of_frame.windows(2).enumerate() {
            if w[1] != w[0] && w[1] != w[0] + 1 {
                return Err(Error::Validation(format!(
                    "ordinal jumps from {} to {} at frame {}",
                    w[0],
                    w[1],
                    f + 1
                )));
            }
        }
        Ok(FramePhoneMap { phone_of_frame })
    }

    /// Map from consecutive run lengths.
    pub fn from_lengths(lengths: &[usize]) -> Result<Self> {
        let mut v = Vec::new();
        for (i, &n) in lengths.iter().enumerate() {
            if n == 0 {
                return Err(Error::Validation(format!("segment {i} has zero frames")));
            }
            v.extend(std::iter::repeat_n(i, n));
        }
        Self::new(v)
    }

    pub fn phone_of_frame(&self) -> &[usize] {
        &self.phone_of_frame
    }

    pub fn len(&self) -> usize {
        self.phone_of_frame.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phone_of_frame.is_empty()
    }

    pub fn num_segments(&self) -> usize {
        self.phone_of_frame.last().map_or(0, |&o| o + 1)
    }

    /// `[start, end)` frame range of every segment, from run-length collapse.
    pub fn runs(&self) -> Vec<(usize, usize)> {
        let mut runs = Vec::with_capacity(self.num_segments());
        let mut start = 0;
        for f in 1..=self.phone_of_frame.len() {
            if f == self.phone_of_frame.len() || self.phone_of_frame[f] != self.phone_of_frame[start] {
                runs.push((start, f));
                start = f;
            }
        }
        runs
    }

    /// Final frame of every segment.
    pub fn last_frames(&self) -> Vec<usize> {
        self.runs().into_iter().map(|(_, e)| e - 1).collect()
    }
}

pub fn parse_alignment(path: impl AsRef<Path>) -> Result<Vec<RawSegment>> {
    let raw = binio::read_file(path.as_ref())?;
    let text = String::from_utf8(raw).map_err(|e| Error::Parse {
        line: 0,
        message: format!("not UTF-8: {e}"),
    })?;
    parse_alignment_str(&text)
}

/// Parse TSV or TextGrid text, detected from the header.
pub fn parse_alignment_str(text: &str) -> Result<Vec<RawSegment>> {
    let segments = if text.trim_start().starts_with("File type") {
        parse_textgrid(text)?
    } else {
        parse_tsv(text)?
    };
    validate(&segments)?;
    Ok(segments)
}

fn parse_seconds(field: &str, line: usize) -> Result<f64> {
    let v: f64 = field.trim().parse().map_err(|_| Error::Parse {
        line,
        message: format!("invalid time {field:?}"),
    })?;
    if !v.is_finite() || v < 0.0 {
        return Err(Error::Parse {
            line,
            message: format!("time {v} must be finite and non-negative"),
        });
    }
    Ok(v)
}

fn parse_tsv(text: &str) -> Result<Vec<RawSegment>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(Error::Parse {
                line: line_no,
                message: format!("expected 3 tab-separated fields, found {}", fields.len()),
            });
        }
        let label = fields[0].trim();
        if label.is_empty() {
            return Err(Error::Parse {
                line: line_no,
                message: "empty phone label".into(),
            });
        }
        let start = parse_seconds(fields[1], line_no)?;
        let end = parse_seconds(fields[2], line_no)?;
        if end <= start {
            return Err(Error::Parse {
                line: line_no,
                message: format!("end {end} is not after start {start}"),
            });
        }
        out.push(RawSegment::new(label, start, end));
    }
    Ok(out)
}

fn textgrid_value<'a>(line: &'a str, key: &str) -> Option<&'a str> {
    let rest = line.trim().strip_prefix(key)?.trim_start();
    Some(rest.strip_prefix('=')?.trim())
}

fn unquote(v: &str, line: usize) -> Result<String> {
    v.strip_prefix('"')
        .and_then(|s| s.strip_suffix('"'))
        .map(|s| s.replace("\"\"", "\""))
        .ok_or_else(|| Error::Parse {
            line,
            message: format!("expected quoted string, got {v}"),
        })
}

/// Long-format TextGrid, interval tier `phones` only. Empty labels are gaps.
fn parse_textgrid(text: &str) -> Result<Vec<RawSegment>> {
    let mut out = Vec::new();
    let mut in_item = false;
    let mut is_interval_tier = false;
    let mut in_phones = false;
    let mut found = false;
    let mut pending: (Option<f64>, Option<f64>) = (None, None);
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let trimmed = line.trim();
        if trimmed.starts_with("item [") {
            in_item = true;
            is_interval_tier = false;
            in_phones = false;
            continue;
        }
        if !in_item {
            continue;
        }
        if let Some(v) = textgrid_value(trimmed, "class") {
            is_interval_tier = unquote(v, line_no)? == "IntervalTier";
        } else if let Some(v) = textgrid_value(trimmed, "name") {
            in_phones = is_interval_tier && unquote(v, line_no)? == "phones";
            found |= in_phones;
        } else if !in_phones {
            continue;
        } else if trimmed.starts_with("intervals [") {
            pending = (None, None);
        } else if let Some(v) = textgrid_value(trimmed, "xmin") {
            pending.0 = Some(parse_seconds(v, line_no)?);
        } else if let Some(v) = textgrid_value(trimmed, "xmax") {
            pending.1 = Some(parse_seconds(v, line_no)?);
        } else if let Some(v) = textgrid_value(trimmed, "text") {
            let label = unquote(v, line_no)?;
            let (Some(start), Some(end)) = pending else {
                return Err(Error::Parse {
                    line: line_no,
                    message: "interval text before xmin/xmax".into(),
                });
            };
            pending = (None, None);
            if end <= start {
                return Err(Error::Parse {
                    line: line_no,
                    message: format!("interval end {end} is not after start {start}"),
                });
            }
            if !label.trim().is_empty() {
                out.push(RawSegment::new(label.trim(), start, end));
            }
        }
    }
    if !found {
        return Err(Error::Parse {
            line: 0,
            message: "no interval tier named \"phones\"".into(),
        });
    }
    Ok(out)
}

fn validate(segments: &[RawSegment]) -> Result<()> {
    if segments.is_empty() {
        return Err(Error::EmptyInput("alignment has no segments".into()));
    }
    for (i, w) in segments.windows(2).enumerate() {
        if w[1].start < w[0].end - TIME_EPS {
            return Err(Error::Validation(format!(
                "segment {} ({:?} from {}) overlaps segment {} ({:?} until {})",
                i + 1,
                w[1].label,
                w[1].start,
                i,
                w[0].label,
                w[0].end
            )));
        }
    }
    Ok(())
}

/// Serialize as TSV; parses back to equal segments.
pub fn to_tsv(segments: &[RawSegment]) -> String {
    let mut s = String::new();
    for seg in segments {
        let _ = writeln!(s, "{}\t{}\t{}", seg.label, seg.start, seg.end);
    }
    s
}

/// Map second-based segments onto `num_frames` frames of `hop_seconds`.
///
/// Frame `f` belongs to the segment containing `(f + 0.5) * hop`. Gaps
/// (including leading time before the first segment) become silence
/// segments; frames past the last segment join it.
pub fn to_frames(raw: &[RawSegment], num_frames: usize, hop_seconds: f64) -> Result<(PhoneAlignment, FramePhoneMap)> {
    if num_frames == 0 {
        return Err(Error::EmptyInput("zero frames".into()));
    }
    if !(hop_seconds > 0.0) {
        return Err(Error::Contract(format!("hop must be positive, got {hop_seconds}")));
    }
    validate(raw)?;
    let duration = num_frames as f64 * hop_seconds;
    if raw.iter().all(|s| s.start >= duration) {
        return Err(Error::Validation(format!(
            "every segment starts after the audio ends at {duration}s"
        )));
    }

    let mut extended: Vec<RawSegment> = Vec::with_capacity(raw.len() * 2);
    let mut cursor = 0.0;
    for seg in raw {
        if seg.start > cursor + TIME_EPS {
            extended.push(RawSegment::new(SILENCE_LABEL, cursor, seg.start));
        }
        extended.push(seg.clone());
        cursor = seg.end;
    }

    let mut owner = Vec::with_capacity(num_frames);
    let mut k = 0;
    for f in 0..num_frames {
        let center = (f as f64 + 0.5) * hop_seconds;
        while k + 1 < extended.len() && center >= extended[k].end {
            k += 1;
        }
        owner.push(k);
    }

    let mut segments: Vec<Segment> = Vec::new();
    let mut phone_of_frame = Vec::with_capacity(num_frames);
    for (f, &k) in owner.iter().enumerate() {
        if f == 0 || owner[f - 1] != k {
            segments.push(Segment {
                label: extended[k].label.clone(),
                start_frame: f,
                end_frame: f + 1,
            });
        } else {
            segments.last_mut().unwrap().end_frame = f + 1;
        }
        phone_of_frame.push(segments.len() - 1);
    }
    Ok((PhoneAlignment::new(segments)?, FramePhoneMap::new(phone_of_frame)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const HUA2: &str = "HH\t0.00\t0.05\nUW2\t0.05\t0.08\nAA2\t0.08\t0.14";

    #[test]
    fn parses_three_phone_tsv() {
        let segs = parse_alignment_str(HUA2).unwrap();
        assert_eq!(
            segs,
            vec![
                RawSegment::new("HH", 0.0, 0.05),
                RawSegment::new("UW2", 0.05, 0.08),
                RawSegment::new("AA2", 0.08, 0.14)
            ]
        );
    }

    #[test]
    fn hua2_frames() {
        let segs = parse_alignment_str(HUA2).unwrap();
        let (al, map) = to_frames(&segs, 6, 0.025).unwrap();
        assert_eq!(map.phone_of_frame(), &[0, 0, 1, 2, 2, 2]);
        let labels: Vec<_> = al.segments().iter().map(|s| s.label.as_str()).collect();
        assert_eq!(labels, ["HH", "UW2", "AA2"]);
        assert_eq!(map.last_frames(), vec![1, 2, 5]);
    }

    #[test]
    fn single_segment() {
        let segs = parse_alignment_str("a\t0\t1.0\n").unwrap();
        assert_eq!(segs.len(), 1);
        let (_, map) = to_frames(&segs, 10, 0.01).unwrap();
        assert!(map.phone_of_frame().iter().all(|&o| o == 0));
    }

    #[test]
    fn gap_becomes_silence() {
        let segs = parse_alignment_str("a\t0.00\t0.05\nb\t0.06\t0.10\n").unwrap();
        let (al, _) = to_frames(&segs, 10, 0.01).unwrap();
        let labels: Vec<_> = al.segments().iter().map(|s| s.label.as_str()).collect();
        assert_eq!(labels, ["a", SILENCE_LABEL, "b"]);
        // serialize the frame-level alignment and parse it again
        let tsv = to_tsv(&al.to_raw(0.01));
        let again = parse_alignment_str(&tsv).unwrap();
        let (al2, _) = to_frames(&again, 10, 0.01).unwrap();
        assert_eq!(al2, al);
    }

    #[test]
    fn trailing_frames_join_last_segment() {
        let segs = parse_alignment_str("a\t0\t0.02\nb\t0.02\t0.04\n").unwrap();
        let (al, _) = to_frames(&segs, 8, 0.01).unwrap();
        assert_eq!(al.segments().last().unwrap().end_frame, 8);
        assert_eq!(al.segments().last().unwrap().label, "b");
    }

    #[test]
    fn errors() {
        assert!(matches!(parse_alignment_str(""), Err(Error::EmptyInput(_))));
        assert!(matches!(parse_alignment_str("a\t0\n"), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(parse_alignment_str("a\t0\t1\nb\tx\t2\n"), Err(Error::Parse { line: 2, .. })));
        assert!(matches!(parse_alignment_str("a\t0\t1\nb\t0.5\t2\n"), Err(Error::Validation(_))));
        let segs = parse_alignment_str("a\t5\t6\n").unwrap();
        assert!(matches!(to_frames(&segs, 10, 0.01), Err(Error::Validation(_))));
    }

    #[test]
    fn textgrid_phones_tier() {
        let tg = r#"File type = "ooTextFile"
Object class = "TextGrid"

xmin = 0
xmax = 0.14
tiers? <exists>
size = 2
item []:
    item [1]:
        class = "IntervalTier"
        name = "words"
        xmin = 0
        xmax = 0.14
        intervals: size = 1
        intervals [1]:
            xmin = 0
            xmax = 0.14
            text = "hua2"
    item [2]:
        class = "IntervalTier"
        name = "phones"
        xmin = 0
        xmax = 0.14
        intervals: size = 4
        intervals [1]:
            xmin = 0
            xmax = 0.05
            text = "HH"
        intervals [2]:
            xmin = 0.05
            xmax = 0.08
            text = "UW2"
        intervals [3]:
            xmin = 0.08
            xmax = 0.1
            text = ""
        intervals [4]:
            xmin = 0.1
            xmax = 0.14
            text = "AA2"
"#;
        let segs = parse_alignment_str(tg).unwrap();
        let labels: Vec<_> = segs.iter().map(|s| s.label.as_str()).collect();
        assert_eq!(labels, ["HH", "UW2", "AA2"]);
        assert_eq!(segs[2].start, 0.1);
    }

    #[test]
    fn textgrid_without_phones_tier() {
        let tg = "File type = \"ooTextFile\"\nitem [1]:\n class = \"IntervalTier\"\n name = \"words\"\n";
        assert!(matches!(parse_alignment_str(tg), Err(Error::Parse { .. })));
    }

    proptest! {
        #[test]
        fn expand_collapse_recovers_boundaries(lengths in prop::collection::vec(1usize..12, 1..15)) {
            let hop = 0.01;
            let mut raw = Vec::new();
            let mut t = 0usize;
            for (i, &n) in lengths.iter().enumerate() {
                raw.push(RawSegment::new(format!("p{i}"), t as f64 * hop, (t + n) as f64 * hop));
                t += n;
            }
            let (al, map) = to_frames(&raw, t, hop).unwrap();
            prop_assert_eq!(map.num_segments(), lengths.len());
            prop_assert_eq!(al.segments().len(), lengths.len());
            let mut start = 0usize;
            for ((s, e), &n) in map.runs().into_iter().zip(&lengths) {
                prop_assert!(s.abs_diff(start) <= 1);
                prop_assert!(e.abs_diff(start + n) <= 1);
                start += n;
            }
            prop_assert_eq!(al.frame_map(), map);
        }

        #[test]
        fn map_is_total_monotone_surjection(
            lengths in prop::collection::vec(1usize..30, 1..10),
            extra in 0usize..20,
        ) {
            let hop = 0.0125;
            let mut raw = Vec::new();
            let mut t = 0.0;
            for (i, &n) in lengths.iter().enumerate() {
                let gap = if i % 3 == 2 { 0.013 } else { 0.0 };
                raw.push(RawSegment::new("x", t + gap, t + gap + n as f64 * 0.0071));
                t += gap + n as f64 * 0.0071;
            }
            let frames = (t / hop).ceil() as usize + extra;
            let (_, map) = to_frames(&raw, frames.max(1), hop).unwrap();
            prop_assert_eq!(map.len(), frames.max(1));
            prop_assert_eq!(map.phone_of_frame()[0], 0);
            for w in map.phone_of_frame().windows(2) {
                prop_assert!(w[1] == w[0] || w[1] == w[0] + 1);
            }
        }
    }
}
