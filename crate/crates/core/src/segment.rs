//! Vowel-labelled 250 ms segments with a label-dependent hop.
//!
//! The next segment starts `segment_ms · ratio(label)` after the current
//! one, so rare vowels with small ratios are sampled densely. Positions are
//! kept in integer microseconds so every hop is exact.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::audio::{LogMelExtractor, LogMelPatch};
use crate::corpus::{PhonemeAlignment, SpeakerRecord, Utterance, VowelLabel};
use crate::error::{Error, Result};
use crate::seed;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OverlapPolicy {
    pub a: f64,
    pub e: f64,
    pub i: f64,
    pub o: f64,
    pub u: f64,
    pub other: f64,
    pub segment_ms: f64,
}

impl Default for OverlapPolicy {
    fn default() -> Self {
        Self {
            a: 0.3,
            e: 0.08,
            i: 0.1,
            o: 0.03,
            u: 0.02,
            other: 0.5,
            segment_ms: 250.0,
        }
    }
}

impl OverlapPolicy {
    /// Same shift fraction for every label.
    pub fn uniform(ratio: f64) -> Self {
        Self {
            a: ratio,
            e: ratio,
            i: ratio,
            o: ratio,
            u: ratio,
            other: ratio,
            segment_ms: 250.0,
        }
    }

    pub fn ratio(&self, label: VowelLabel) -> f64 {
        match label {
            VowelLabel::A => self.a,
            VowelLabel::E => self.e,
            VowelLabel::I => self.i,
            VowelLabel::O => self.o,
            VowelLabel::U => self.u,
            VowelLabel::Other => self.other,
        }
    }

    /// Hop after a segment with `label`, in microseconds.
    pub fn shift_us(&self, label: VowelLabel) -> i64 {
        (self.segment_ms * 1000.0 * self.ratio(label)).round() as i64
    }

    pub fn segment_us(&self) -> i64 {
        (self.segment_ms * 1000.0).round() as i64
    }

    pub fn validate(&self) -> Vec<String> {
        let mut out = Vec::new();
        for l in VowelLabel::ALL {
            let r = self.ratio(l);
            if !(r > 0.0 && r <= 1.0) {
                out.push(format!("overlap ratio for {l} must lie in (0, 1], got {r}"));
            } else if self.shift_us(l) == 0 {
                out.push(format!("overlap ratio for {l} rounds to a zero hop"));
            }
        }
        if !(self.segment_ms > 0.0) {
            out.push(format!("segment_ms must be positive, got {}", self.segment_ms));
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentSpan {
    pub start_ms: f64,
    pub end_ms: f64,
    pub label: VowelLabel,
}

/// Vowel with the largest total overlap with `[start_ms, end_ms)`; ties go
/// to the vowel whose first overlapping interval starts earliest. Without
/// any overlapping vowel the span is `Other`.
pub fn assign_label(start_ms: f64, end_ms: f64, alignment: &PhonemeAlignment) -> VowelLabel {
    let mut totals: [(f64, f64); 5] = [(0.0, f64::INFINITY); 5];
    for iv in &alignment.intervals {
        let label = iv.label();
        if !label.is_vowel() {
            continue;
        }
        let overlap = end_ms.min(iv.end_ms) - start_ms.max(iv.start_ms);
        if overlap > 0.0 {
            let slot = &mut totals[label.index()];
            slot.0 += overlap;
            slot.1 = slot.1.min(iv.start_ms);
        }
    }
    let mut best: Option<(usize, f64, f64)> = None;
    for (i, &(total, onset)) in totals.iter().enumerate() {
        if total <= 0.0 {
            continue;
        }
        let better = match best {
            None => true,
            Some((_, bt, bo)) => total > bt || (total == bt && onset < bo),
        };
        if better {
            best = Some((i, total, onset));
        }
    }
    best.and_then(|(i, _, _)| VowelLabel::from_index(i))
        .unwrap_or(VowelLabel::Other)
}

/// Labelled spans of an utterance of `duration_ms`. Empty when the
/// utterance is shorter than one segment.
pub fn segment_spans(duration_ms: f64, alignment: &PhonemeAlignment, policy: &OverlapPolicy) -> Vec<SegmentSpan> {
    let dur_us = (duration_ms * 1000.0 + 1e-6).floor() as i64;
    let seg = policy.segment_us();
    let mut spans = Vec::new();
    let mut start = 0i64;
    while start + seg <= dur_us {
        let (s, e) = (start as f64 / 1000.0, (start + seg) as f64 / 1000.0);
        let label = assign_label(s, e, alignment);
        spans.push(SegmentSpan {
            start_ms: s,
            end_ms: e,
            label,
        });
        start += policy.shift_us(label).max(1);
    }
    spans
}

#[derive(Clone, Debug, PartialEq)]
pub struct VowelSegment {
    pub speaker_id: String,
    pub utterance: usize,
    pub span: SegmentSpan,
    pub patch: LogMelPatch,
}

/// Segment and featurize one utterance.
pub fn segment_utterance(
    u: &Utterance,
    index: usize,
    policy: &OverlapPolicy,
    extractor: &LogMelExtractor,
) -> Result<Vec<VowelSegment>> {
    let spans = segment_spans(u.duration_ms, &u.alignment, policy);
    featurize(u, index, &spans, extractor)
}

/// Log-Mel patches for the given spans of one utterance.
pub fn featurize(u: &Utterance, index: usize, spans: &[SegmentSpan], extractor: &LogMelExtractor) -> Result<Vec<VowelSegment>> {
    if spans.is_empty() {
        return Ok(Vec::new());
    }
    let sr = extractor.config().sample_rate;
    let w = u.load_waveform(sr)?;
    spans
        .iter()
        .map(|span| {
            let len = ((span.end_ms - span.start_ms) * sr as f64 / 1000.0).round() as usize;
            let samples = w.slice_ms(span.start_ms, len).ok_or_else(|| {
                Error::dim(
                    "segment_utterance",
                    "samples",
                    format!("span {}..{} ms exceeds {}", span.start_ms, span.end_ms, u.audio.display()),
                )
            })?;
            Ok(VowelSegment {
                speaker_id: u.speaker_id.clone(),
                utterance: index,
                span: *span,
                patch: extractor.extract_samples(samples)?,
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentRecord {
    pub speaker: String,
    pub utterance: usize,
    pub start_ms: f64,
    pub label: VowelLabel,
}

#[derive(Clone, Debug, PartialEq)]
pub struct VowelTrainingSet {
    /// Ordered by speaker, utterance and start time.
    pub segments: Vec<VowelSegment>,
    /// Counts over all candidate spans, before any subsampling.
    pub candidate_counts: [usize; 6],
    /// Utterances shorter than one segment, as (speaker, utterance index).
    pub skipped: Vec<(String, usize)>,
}

impl VowelTrainingSet {
    pub fn counts(&self) -> [usize; 6] {
        class_counts(self.segments.iter().map(|s| s.span.label))
    }

    pub fn records(&self) -> Vec<SegmentRecord> {
        self.segments
            .iter()
            .map(|s| SegmentRecord {
                speaker: s.speaker_id.clone(),
                utterance: s.utterance,
                start_ms: s.span.start_ms,
                label: s.span.label,
            })
            .collect()
    }

    /// JSON-lines audit dump.
    pub fn write_records(&self, path: &Path) -> Result<()> {
        let mut text = String::new();
        for r in self.records() {
            text.push_str(&serde_json::to_string(&r).expect("record serializes"));
            text.push('\n');
        }
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

pub fn class_counts(labels: impl IntoIterator<Item = VowelLabel>) -> [usize; 6] {
    let mut c = [0; 6];
    for l in labels {
        c[l.index()] += 1;
    }
    c
}

/// Pool segments over `speakers`. With `max_segments`, a uniform random
/// subset of that size (drawn from `seed`) is featurized; the order stays
/// (speaker, utterance, start).
pub fn build_vowel_training_set(
    speakers: &[&SpeakerRecord],
    policy: &OverlapPolicy,
    extractor: &LogMelExtractor,
    max_segments: Option<usize>,
    seed: u64,
) -> Result<VowelTrainingSet> {
    let mut jobs: Vec<(&Utterance, usize, Vec<SegmentSpan>)> = Vec::new();
    let mut skipped = Vec::new();
    for s in speakers {
        for (i, u) in s.utterances.iter().enumerate() {
            let spans = segment_spans(u.duration_ms, &u.alignment, policy);
            if spans.is_empty() {
                skipped.push((s.speaker_id.clone(), i));
            }
            jobs.push((u, i, spans));
        }
    }
    let candidate_counts = class_counts(jobs.iter().flat_map(|j| j.2.iter().map(|s| s.label)));
    let total: usize = jobs.iter().map(|j| j.2.len()).sum();
    if let Some(cap) = max_segments.filter(|&c| c < total) {
        let mut keep: Vec<usize> = sample(&mut seed::rng(seed, &["segment", "subsample"]), total, cap).into_vec();
        keep.sort_unstable();
        let mut by_job: BTreeMap<usize, Vec<SegmentSpan>> = BTreeMap::new();
        let mut k = 0;
        let mut offset = 0;
        for (j, job) in jobs.iter().enumerate() {
            while k < keep.len() && keep[k] < offset + job.2.len() {
                by_job.entry(j).or_default().push(job.2[keep[k] - offset]);
                k += 1;
            }
            offset += job.2.len();
        }
        for (j, job) in jobs.iter_mut().enumerate() {
            job.2 = by_job.remove(&j).unwrap_or_default();
        }
    }
    let per_job = crate::par::try_map_slice(&jobs, |(u, i, spans)| featurize(u, *i, spans, extractor))?;
    Ok(VowelTrainingSet {
        segments: per_job.into_iter().flatten().collect(),
        candidate_counts,
        skipped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Interval;

    fn align(items: &[(f64, f64, &str)]) -> PhonemeAlignment {
        PhonemeAlignment::new(
            items
                .iter()
                .map(|&(s, e, p)| Interval {
                    start_ms: s,
                    end_ms: e,
                    phone: p.into(),
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn label_rules() {
        assert_eq!(assign_label(0.0, 250.0, &align(&[(100.0, 180.0, "a")])), VowelLabel::A);
        assert_eq!(assign_label(0.0, 250.0, &align(&[(0.0, 250.0, "s")])), VowelLabel::Other);
        assert_eq!(
            assign_label(0.0, 250.0, &align(&[(0.0, 50.0, "a"), (50.0, 250.0, "e")])),
            VowelLabel::E
        );
        // equal overlap: earliest onset wins
        assert_eq!(
            assign_label(0.0, 250.0, &align(&[(0.0, 100.0, "o"), (150.0, 250.0, "i")])),
            VowelLabel::O
        );
    }

    #[test]
    fn hop_follows_label() {
        let p = OverlapPolicy::default();
        for (phone, next) in [("a", 75.0), ("sil", 125.0), ("u", 5.0), ("o", 7.5), ("e", 20.0), ("i", 25.0)] {
            let spans = segment_spans(400.0, &align(&[(0.0, 400.0, phone)]), &p);
            assert_eq!(spans[1].start_ms, next, "{phone}");
            assert_eq!(spans[1].end_ms, next + 250.0);
        }
    }

    #[test]
    fn stop_rule_keeps_exact_fit() {
        let spans = segment_spans(500.0, &PhonemeAlignment::default(), &OverlapPolicy::default());
        let starts: Vec<f64> = spans.iter().map(|s| s.start_ms).collect();
        assert_eq!(starts, [0.0, 125.0, 250.0]);
        assert!(segment_spans(249.0, &PhonemeAlignment::default(), &OverlapPolicy::default()).is_empty());
    }

    #[test]
    fn policy_validation() {
        let mut p = OverlapPolicy::default();
        assert!(p.validate().is_empty());
        p.o = 0.0;
        p.u = 1.5;
        assert_eq!(p.validate().len(), 2);
    }
}
