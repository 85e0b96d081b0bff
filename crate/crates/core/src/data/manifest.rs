//! Segment manifests.
//!
//! A manifest is a CSV file with header `video_id,start_frame,length,label,domain`.
//! Labels are class names; the ordered class list and the split name live in
//! a sibling `<stem>.classes` file:
//!
//! ```text
//! split=train
//! horizontal
//! vertical
//! ```

use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::data::window::SEGMENT_LENGTH;
use crate::error::{Error, Result};

pub const MANIFEST_HEADER: &str = "video_id,start_frame,length,label,domain";

/// 1 for source, 0 for target.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum DomainTag {
    Target = 0,
    Source = 1,
}

impl DomainTag {
    pub fn value(self) -> usize {
        self as usize
    }
}

impl fmt::Display for DomainTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DomainTag::Source => "source",
            DomainTag::Target => "target",
        })
    }
}

impl FromStr for DomainTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "source" => Ok(DomainTag::Source),
            "target" => Ok(DomainTag::Target),
            other => Err(Error::InvalidArgument(format!("unknown domain `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::InvalidArgument(format!("unknown split `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct SegmentRecord {
    pub video_id: String,
    pub start_frame: usize,
    pub length: usize,
    pub label: usize,
    pub domain: DomainTag,
}

impl SegmentRecord {
    pub fn new(video_id: impl Into<String>, start_frame: usize, label: usize, domain: DomainTag) -> Self {
        SegmentRecord {
            video_id: video_id.into(),
            start_frame,
            length: SEGMENT_LENGTH,
            label,
            domain,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Manifest {
    pub records: Vec<SegmentRecord>,
    pub split: Split,
    pub class_names: Vec<String>,
}

/// The class-list file that accompanies `manifest_path`.
pub fn classes_path(manifest_path: &Path) -> PathBuf {
    manifest_path.with_extension("classes")
}

impl Manifest {
    pub fn new(records: Vec<SegmentRecord>, split: Split, class_names: Vec<String>) -> Result<Self> {
        let m = Manifest { records, split, class_names };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        for name in &self.class_names {
            if name.is_empty() || name.contains([',', '\n', '\r']) || name.trim() != name {
                return Err(Error::InvalidArgument(format!("invalid class name `{name}`")));
            }
        }
        let mut seen = HashSet::new();
        for (i, r) in self.records.iter().enumerate() {
            let line = i + 2;
            if r.label >= self.class_names.len() {
                return Err(Error::Parse {
                    line,
                    msg: format!("label {} has no class name", r.label),
                });
            }
            if r.length != SEGMENT_LENGTH {
                return Err(Error::Parse {
                    line,
                    msg: format!("segment length {} (expected {SEGMENT_LENGTH})", r.length),
                });
            }
            if r.video_id.is_empty() || r.video_id.contains([',', '\n', '\r', '/', '\\']) {
                return Err(Error::Parse { line, msg: format!("invalid video id `{}`", r.video_id) });
            }
            if !seen.insert((r.video_id.as_str(), r.start_frame)) {
                return Err(Error::DuplicateRecord {
                    line,
                    video_id: r.video_id.clone(),
                    start_frame: r.start_frame,
                });
            }
        }
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(MANIFEST_HEADER);
        out.push('\n');
        for r in &self.records {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                r.video_id, r.start_frame, r.length, self.class_names[r.label], r.domain
            ));
        }
        out
    }

    pub fn classes_text(&self) -> String {
        let mut out = format!("split={}\n", self.split);
        for c in &self.class_names {
            out.push_str(c);
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.validate()?;
        let path = path.as_ref();
        std::fs::write(path, self.to_csv())?;
        std::fs::write(classes_path(path), self.classes_text())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let classes = std::fs::read_to_string(classes_path(path))?;
        let (split, class_names) = parse_classes(&classes)?;
        let csv = std::fs::read_to_string(path)?;
        let records = parse_records(&csv, &class_names)?;
        let m = Manifest { records, split, class_names };
        m.validate()?;
        Ok(m)
    }

    /// Record counts per (class index) for this manifest.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.class_names.len()];
        for r in &self.records {
            counts[r.label] += 1;
        }
        counts
    }
}

fn parse_classes(text: &str) -> Result<(Split, Vec<String>)> {
    let mut lines = text.lines().enumerate();
    let (_, first) = lines.next().ok_or(Error::Parse { line: 1, msg: "empty class file".into() })?;
    let split = first
        .strip_prefix("split=")
        .ok_or(Error::Parse { line: 1, msg: "expected `split=<name>`".into() })?
        .parse::<Split>()
        .map_err(|e| Error::Parse { line: 1, msg: e.to_string() })?;
    let mut names = Vec::new();
    for (i, line) in lines {
        if line.is_empty() {
            continue;
        }
        if names.iter().any(|n| n == line) {
            return Err(Error::Parse { line: i + 1, msg: format!("class `{line}` listed twice") });
        }
        names.push(line.to_string());
    }
    Ok((split, names))
}

fn parse_records(text: &str, class_names: &[String]) -> Result<Vec<SegmentRecord>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim_end() == MANIFEST_HEADER => {}
        _ => {
            return Err(Error::Parse {
                line: 1,
                msg: format!("expected header `{MANIFEST_HEADER}`"),
            })
        }
    }
    let mut seen = HashSet::new();
    let mut records = Vec::new();
    for (i, raw) in lines {
        let line = i + 1;
        let raw = raw.trim_end_matches('\r');
        if raw.is_empty() {
            continue;
        }
        let fields: Vec<&str> = raw.split(',').collect();
        if fields.len() != 5 {
            return Err(Error::Parse { line, msg: format!("expected 5 fields, found {}", fields.len()) });
        }
        let num = |s: &str, what: &str| {
            s.parse::<usize>()
                .map_err(|_| Error::Parse { line, msg: format!("bad {what} `{s}`") })
        };
        let start_frame = num(fields[1], "start_frame")?;
        let length = num(fields[2], "length")?;
        let label = class_names
            .iter()
            .position(|c| c == fields[3])
            .ok_or_else(|| Error::UnknownClass { line, name: fields[3].to_string() })?;
        let domain = fields[4]
            .parse::<DomainTag>()
            .map_err(|e| Error::Parse { line, msg: e.to_string() })?;
        if !seen.insert((fields[0].to_string(), start_frame)) {
            return Err(Error::DuplicateRecord { line, video_id: fields[0].to_string(), start_frame });
        }
        records.push(SegmentRecord {
            video_id: fields[0].to_string(),
            start_frame,
            length,
            label,
            domain,
        });
    }
    Ok(records)
}
