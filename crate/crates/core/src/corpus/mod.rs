//! Corpus ingestion and the synthetic formant-speech generator.
//!
//! A corpus is described by a JSON-lines manifest, one object per speaker:
//!
//! ```text
//! {"speaker_id": "S001", "audio": ["a.wav", ...], "alignments": ["a.tsv", ...], "phq8": 12}
//! ```
//!
//! Every audio file is one utterance. Alignment files hold one
//! `start_ms<TAB>end_ms<TAB>phone` interval per line. Relative paths are
//! resolved against the manifest's directory.

mod synth;

pub use synth::{generate_synthetic_corpus, SpeakerTraits, SynthConfig, VowelFormants};

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::audio::{self, Waveform};
use crate::error::{Error, Result};

/// PHQ-8 score at or above which a speaker counts as depressed.
pub const PHQ8_THRESHOLD: u32 = 10;

/// The six segment classes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum VowelLabel {
    #[serde(rename = "a")]
    A,
    #[serde(rename = "e")]
    E,
    #[serde(rename = "i")]
    I,
    #[serde(rename = "o")]
    O,
    #[serde(rename = "u")]
    U,
    #[serde(rename = "not-a-vowel")]
    Other,
}

impl VowelLabel {
    pub const ALL: [VowelLabel; 6] = [Self::A, Self::E, Self::I, Self::O, Self::U, Self::Other];
    pub const VOWELS: [VowelLabel; 5] = [Self::A, Self::E, Self::I, Self::O, Self::U];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn is_vowel(self) -> bool {
        self != Self::Other
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::A => "a",
            Self::E => "e",
            Self::I => "i",
            Self::O => "o",
            Self::U => "u",
            Self::Other => "not-a-vowel",
        }
    }

    /// Map a phone symbol onto a class. Accepts the bare vowel letters and
    /// ARPAbet vowels (stress digits ignored); everything else is `Other`.
    pub fn from_phone(phone: &str) -> Self {
        let p = phone.trim().trim_end_matches(|c: char| c.is_ascii_digit()).to_ascii_lowercase();
        match p.as_str() {
            "a" | "aa" | "ae" | "ah" | "ax" => Self::A,
            "e" | "eh" | "ey" | "er" => Self::E,
            "i" | "iy" | "ih" => Self::I,
            "o" | "ow" | "ao" | "oy" => Self::O,
            "u" | "uw" | "uh" => Self::U,
            _ => Self::Other,
        }
    }
}

impl fmt::Display for VowelLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub start_ms: f64,
    pub end_ms: f64,
    pub phone: String,
}

impl Interval {
    pub fn label(&self) -> VowelLabel {
        VowelLabel::from_phone(&self.phone)
    }
}

/// Sorted, non-overlapping phone intervals of one utterance.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct PhonemeAlignment {
    pub intervals: Vec<Interval>,
}

impl PhonemeAlignment {
    /// Build from intervals, checking order, sign and overlap.
    pub fn new(intervals: Vec<Interval>) -> std::result::Result<Self, (usize, String)> {
        for (i, iv) in intervals.iter().enumerate() {
            if !(iv.start_ms.is_finite() && iv.end_ms.is_finite()) || iv.start_ms < 0.0 || iv.end_ms <= iv.start_ms {
                return Err((i, format!("invalid interval {}..{}", iv.start_ms, iv.end_ms)));
            }
            if i > 0 {
                let prev = &intervals[i - 1];
                if iv.start_ms < prev.start_ms {
                    return Err((i, "intervals not sorted by start".into()));
                }
                if iv.start_ms < prev.end_ms {
                    return Err((
                        i,
                        format!("interval {}..{} overlaps {}..{}", iv.start_ms, iv.end_ms, prev.start_ms, prev.end_ms),
                    ));
                }
            }
        }
        Ok(Self { intervals })
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut intervals = Vec::new();
        let mut lines = Vec::new();
        for (ln, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |message: String| Error::Validation {
                path: path.to_path_buf(),
                line: ln + 1,
                message,
            };
            let mut fields = line.split('\t');
            let (Some(s), Some(e), Some(phone), None) = (fields.next(), fields.next(), fields.next(), fields.next())
            else {
                return Err(err("expected `start_ms<TAB>end_ms<TAB>phone`".into()));
            };
            let start_ms: f64 = s.trim().parse().map_err(|_| err(format!("bad start `{s}`")))?;
            let end_ms: f64 = e.trim().parse().map_err(|_| err(format!("bad end `{e}`")))?;
            intervals.push(Interval {
                start_ms,
                end_ms,
                phone: phone.trim().to_string(),
            });
            lines.push(ln + 1);
        }
        Self::new(intervals).map_err(|(i, message)| Error::Validation {
            path: path.to_path_buf(),
            line: lines[i],
            message,
        })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn to_text(&self) -> String {
        self.intervals
            .iter()
            .map(|iv| format!("{}\t{}\t{}\n", iv.start_ms, iv.end_ms, iv.phone))
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Utterance {
    pub speaker_id: String,
    pub audio: PathBuf,
    pub alignment: PhonemeAlignment,
    pub duration_ms: f64,
}

impl Utterance {
    pub fn load_waveform(&self, sample_rate: u32) -> Result<Waveform> {
        audio::read_wav(&self.audio, sample_rate)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SpeakerRecord {
    pub speaker_id: String,
    pub utterances: Vec<Utterance>,
    pub phq8: u32,
    /// 1 iff `phq8 >= 10`.
    pub label: u8,
}

pub fn label_for_score(phq8: u32) -> u8 {
    u8::from(phq8 >= PHQ8_THRESHOLD)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub speaker_id: String,
    pub audio: Vec<PathBuf>,
    pub alignments: Vec<PathBuf>,
    pub phq8: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<u8>,
}

/// Validated speakers sorted by id.
#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    pub speakers: Vec<SpeakerRecord>,
}

impl Corpus {
    pub fn speaker(&self, id: &str) -> Option<&SpeakerRecord> {
        self.speakers.iter().find(|s| s.speaker_id == id)
    }

    pub fn utterance_count(&self) -> usize {
        self.speakers.iter().map(|s| s.utterances.len()).sum()
    }
}

/// Load and validate a corpus manifest.
pub fn load_corpus(manifest: &Path) -> Result<Corpus> {
    let text = fs::read_to_string(manifest).map_err(|e| Error::io(manifest, e))?;
    let root = manifest.parent().unwrap_or(Path::new("."));
    let mut speakers = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let err = |message: String| Error::Validation {
            path: manifest.to_path_buf(),
            line: ln + 1,
            message,
        };
        let rec: ManifestRecord = serde_json::from_str(line).map_err(|e| err(e.to_string()))?;
        if let Some(label) = rec.label {
            if label != label_for_score(rec.phq8) {
                return Err(err(format!(
                    "label {label} inconsistent with PHQ-8 score {} (threshold {PHQ8_THRESHOLD})",
                    rec.phq8
                )));
            }
        }
        if rec.audio.len() != rec.alignments.len() {
            return Err(err(format!(
                "{} audio files but {} alignment files",
                rec.audio.len(),
                rec.alignments.len()
            )));
        }
        if rec.audio.is_empty() {
            return Err(err("speaker has no utterances".into()));
        }
        let mut utterances = Vec::with_capacity(rec.audio.len());
        for (a, l) in rec.audio.iter().zip(&rec.alignments) {
            let audio_path = root.join(a);
            let align_path = root.join(l);
            for p in [&audio_path, &align_path] {
                if !p.is_file() {
                    return Err(err(format!("missing file {}", p.display())));
                }
            }
            let duration_ms = audio::wav_duration_ms(&audio_path)?;
            let alignment = PhonemeAlignment::read(&align_path)?;
            if let Some((i, iv)) = alignment
                .intervals
                .iter()
                .enumerate()
                .find(|(_, iv)| iv.end_ms > duration_ms + 1e-6)
            {
                return Err(Error::Validation {
                    path: align_path.clone(),
                    line: i + 1,
                    message: format!("interval ends at {} ms beyond audio duration {duration_ms} ms", iv.end_ms),
                });
            }
            utterances.push(Utterance {
                speaker_id: rec.speaker_id.clone(),
                audio: audio_path,
                alignment,
                duration_ms,
            });
        }
        speakers.push(SpeakerRecord {
            speaker_id: rec.speaker_id,
            utterances,
            phq8: rec.phq8,
            label: label_for_score(rec.phq8),
        });
    }
    speakers.sort_by(|a, b| a.speaker_id.cmp(&b.speaker_id));
    if let Some(w) = speakers.windows(2).find(|w| w[0].speaker_id == w[1].speaker_id) {
        return Err(Error::Validation {
            path: manifest.to_path_buf(),
            line: 0,
            message: format!("duplicate speaker id `{}`", w[0].speaker_id),
        });
    }
    Ok(Corpus { speakers })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn phone_mapping() {
        assert_eq!(VowelLabel::from_phone("AA1"), VowelLabel::A);
        assert_eq!(VowelLabel::from_phone("iy"), VowelLabel::I);
        assert_eq!(VowelLabel::from_phone("UW0"), VowelLabel::U);
        assert_eq!(VowelLabel::from_phone("sh"), VowelLabel::Other);
        assert_eq!(VowelLabel::from_phone("sil"), VowelLabel::Other);
    }

    #[test]
    fn label_threshold() {
        assert_eq!(label_for_score(10), 1);
        assert_eq!(label_for_score(9), 0);
        assert_eq!(label_for_score(24), 1);
    }

    #[test]
    fn alignment_rejects_overlap_with_line_number() {
        let text = "0\t100\ts\n100\t180\ta\n150\t200\tt\n";
        match PhonemeAlignment::parse(text, Path::new("x.tsv")) {
            Err(Error::Validation { line, message, .. }) => {
                assert_eq!(line, 3);
                assert!(message.contains("overlaps"));
            }
            other => panic!("expected validation error, got {other:?}"),
        }
        let ok = PhonemeAlignment::parse(text.replace("150", "180").as_str(), Path::new("x.tsv")).unwrap();
        assert_eq!(ok.intervals.len(), 3);
        assert_eq!(PhonemeAlignment::parse(&ok.to_text(), Path::new("y")).unwrap(), ok);
    }
}
