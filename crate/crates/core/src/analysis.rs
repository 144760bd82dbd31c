//! Which phones the frame attention looks at: frame-to-phone labeling from
//! time alignments, per-phone attention accumulation, and ranking.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::Path;
use std::sync::OnceLock;

use crate::error::{Error, Result};

/// Label given to frames past the last aligned phone.
pub const SILENCE: &str = "h#";

const PHONE_CLASSES: &str = include_str!("../data/phone_classes.tsv");

/// Broad class of a TIMIT-style phone label (`vowel`, `stop`, `fricative`,
/// `nasal`, `semivowel`, `affricate`, `closure`, `silence`).
pub fn phone_class(label: &str) -> Option<&'static str> {
    static TABLE: OnceLock<HashMap<&'static str, &'static str>> = OnceLock::new();
    TABLE
        .get_or_init(|| {
            PHONE_CLASSES
                .lines()
                .filter(|l| !l.starts_with('#') && !l.trim().is_empty())
                .filter_map(|l| l.split_once('\t'))
                .collect()
        })
        .get(label)
        .copied()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PhoneSegment {
    pub start: u64,
    pub end: u64,
    pub label: String,
}

/// Time-ordered, non-overlapping phone intervals `[start, end)` in samples.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PhoneAlignment {
    pub entries: Vec<PhoneSegment>,
    pub sample_rate: u32,
}

impl PhoneAlignment {
    pub fn new(entries: Vec<PhoneSegment>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::invalid("alignment sample rate must be positive"));
        }
        for (i, e) in entries.iter().enumerate() {
            if e.start >= e.end {
                return Err(Error::invalid(format!("phone {i} '{}' has start >= end", e.label)));
            }
            if e.label.is_empty() || e.label.contains(char::is_whitespace) {
                return Err(Error::invalid(format!("phone {i} has an invalid label")));
            }
            if i > 0 && entries[i - 1].end > e.start {
                return Err(Error::invalid(format!("phone {i} '{}' overlaps its predecessor", e.label)));
            }
        }
        Ok(PhoneAlignment { entries, sample_rate })
    }

    /// Parses `start end label` lines.
    pub fn parse(text: &str, sample_rate: u32) -> Result<Self> {
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.is_empty() {
                continue;
            }
            let bad = || Error::format("alignment", format!("line {}: expected 'start end label'", i + 1));
            let [s, e, label] = fields[..] else {
                return Err(bad());
            };
            entries.push(PhoneSegment {
                start: s.parse().map_err(|_| bad())?,
                end: e.parse().map_err(|_| bad())?,
                label: label.to_string(),
            });
        }
        PhoneAlignment::new(entries, sample_rate)
    }

    pub fn read(path: &Path, sample_rate: u32) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        PhoneAlignment::parse(&text, sample_rate)
    }

    pub fn to_text(&self) -> String {
        self.entries
            .iter()
            .map(|e| format!("{} {} {}\n", e.start, e.end, e.label))
            .collect()
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}

/// Labels each frame with the phone whose interval contains the frame center
/// `t * hop + window / 2`. Frames outside every interval are [`SILENCE`].
pub fn frames_to_phones(align: &PhoneAlignment, n_frames: usize, window_ms: f64, hop_ms: f64) -> Result<Vec<String>> {
    if align.entries.is_empty() {
        return Err(Error::invalid("empty phone alignment"));
    }
    let sr = align.sample_rate as f64;
    let hop = hop_ms * sr / 1000.0;
    let half_window = window_ms * sr / 2000.0;
    let mut labels = Vec::with_capacity(n_frames);
    let mut k = 0;
    for t in 0..n_frames {
        let center = t as f64 * hop + half_window;
        while k < align.entries.len() && (align.entries[k].end as f64) <= center {
            k += 1;
        }
        let label = match align.entries.get(k) {
            Some(e) if e.start as f64 <= center => e.label.as_str(),
            _ => SILENCE,
        };
        labels.push(label.to_string());
    }
    Ok(labels)
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PhoneStats {
    pub total_weight: f64,
    pub frame_count: u64,
}

impl PhoneStats {
    pub fn mean_weight(&self) -> f64 {
        if self.frame_count == 0 {
            0.0
        } else {
            self.total_weight / self.frame_count as f64
        }
    }
}

/// Attention mass and frame counts per phone, over any number of utterances.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PhoneAttentionTable {
    pub phones: BTreeMap<String, PhoneStats>,
    pub n_utterances: u64,
}

impl PhoneAttentionTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn is_empty(&self) -> bool {
        self.phones.is_empty()
    }

    pub fn total_weight(&self) -> f64 {
        self.phones.values().map(|s| s.total_weight).sum()
    }

    pub fn merge(&mut self, other: &PhoneAttentionTable) {
        for (phone, s) in &other.phones {
            let e = self.phones.entry(phone.clone()).or_default();
            e.total_weight += s.total_weight;
            e.frame_count += s.frame_count;
        }
        self.n_utterances += other.n_utterances;
    }

    /// `phone, total, count, mean, class` with a header line.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("phone\ttotal\tcount\tmean\tclass\n");
        for (phone, s) in &self.phones {
            let _ = writeln!(
                out,
                "{phone}\t{:.9}\t{}\t{:.9}\t{}",
                s.total_weight,
                s.frame_count,
                s.mean_weight(),
                phone_class(phone).unwrap_or("unknown")
            );
        }
        out
    }
}

/// Adds one utterance's frame weights to the table. Frames with
/// `frame_mask[t] == false` are padding and skipped.
pub fn accumulate_attention(
    alpha: &[f64],
    labels: &[String],
    frame_mask: Option<&[bool]>,
    table: &mut PhoneAttentionTable,
) -> Result<()> {
    if alpha.len() != labels.len() {
        return Err(Error::invalid(format!(
            "{} weights but {} frame labels",
            alpha.len(),
            labels.len()
        )));
    }
    if frame_mask.is_some_and(|m| m.len() != alpha.len()) {
        return Err(Error::invalid("frame mask length differs from weights"));
    }
    for (t, (&a, label)) in alpha.iter().zip(labels).enumerate() {
        if frame_mask.is_some_and(|m| !m[t]) {
            continue;
        }
        let e = table.phones.entry(label.clone()).or_default();
        e.total_weight += a;
        e.frame_count += 1;
    }
    table.n_utterances += 1;
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankedPhone {
    pub phone: String,
    pub mean_weight: f64,
    pub total_weight: f64,
    pub frame_count: u64,
}

/// Phones by mean weight: the `top_k` highest (descending) and the `top_k`
/// lowest (ascending). Ties go to the lexicographically smaller label.
pub fn rank_phones(table: &PhoneAttentionTable, top_k: usize) -> Result<(Vec<RankedPhone>, Vec<RankedPhone>)> {
    if table.is_empty() {
        return Err(Error::invalid("cannot rank an empty phone table"));
    }
    let ranked: Vec<RankedPhone> = table
        .phones
        .iter()
        .map(|(p, s)| RankedPhone {
            phone: p.clone(),
            mean_weight: s.mean_weight(),
            total_weight: s.total_weight,
            frame_count: s.frame_count,
        })
        .collect();
    let mut desc = ranked.clone();
    desc.sort_by(|a, b| b.mean_weight.total_cmp(&a.mean_weight).then_with(|| a.phone.cmp(&b.phone)));
    let mut asc = ranked;
    asc.sort_by(|a, b| a.mean_weight.total_cmp(&b.mean_weight).then_with(|| a.phone.cmp(&b.phone)));
    desc.truncate(top_k);
    asc.truncate(top_k);
    Ok((desc, asc))
}

/// Plain-text report of the most and least attended phones.
pub fn ranking_report(table: &PhoneAttentionTable, top_k: usize) -> Result<String> {
    let (top, bottom) = rank_phones(table, top_k)?;
    let mut out = String::new();
    let _ = writeln!(out, "utterances: {}", table.n_utterances);
    let _ = writeln!(out, "total attention: {:.6}", table.total_weight());
    for (title, list) in [("highest", &top), ("lowest", &bottom)] {
        let _ = writeln!(out, "\n{} {title} mean attention", list.len());
        let _ = writeln!(out, "{:<6} {:<6} {:<10} {:>12} {:>12} {:>8}", "rank", "phone", "class", "mean", "total", "frames");
        for (i, r) in list.iter().enumerate() {
            let _ = writeln!(
                out,
                "{:<6} {:<6} {:<10} {:>12.6} {:>12.4} {:>8}",
                i + 1,
                r.phone,
                phone_class(&r.phone).unwrap_or("unknown"),
                r.mean_weight,
                r.total_weight,
                r.frame_count
            );
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seg(start: u64, end: u64, label: &str) -> PhoneSegment {
        PhoneSegment {
            start,
            end,
            label: label.into(),
        }
    }

    #[test]
    fn single_phone_labels_every_frame() {
        let a = PhoneAlignment::new(vec![seg(0, 16000, "aa")], 16000).unwrap();
        let labels = frames_to_phones(&a, 98, 25.0, 10.0).unwrap();
        assert!(labels.iter().all(|l| l == "aa"));
    }

    #[test]
    fn two_phones_split_at_center() {
        let a = PhoneAlignment::new(vec![seg(0, 8000, "aa"), seg(8000, 16000, "s")], 16000).unwrap();
        let labels = frames_to_phones(&a, 98, 25.0, 10.0).unwrap();
        // Centers are 160 t + 200; the first center at or past 8000 is t = 49.
        let n_a = labels.iter().filter(|l| *l == "aa").count();
        assert_eq!(n_a, 49);
        assert!(labels[..49].iter().all(|l| l == "aa"));
        assert!(labels[49..].iter().all(|l| l == "s"));
    }

    #[test]
    fn boundary_center_goes_to_later_phone() {
        // Frame 1 is centered on sample 360.
        let a = PhoneAlignment::new(vec![seg(0, 360, "b"), seg(360, 800, "iy")], 16000).unwrap();
        let labels = frames_to_phones(&a, 3, 25.0, 10.0).unwrap();
        assert_eq!(labels, ["b", "iy", "iy"]);
    }

    #[test]
    fn frames_past_the_end_are_silence() {
        let a = PhoneAlignment::new(vec![seg(0, 400, "aa")], 16000).unwrap();
        let labels = frames_to_phones(&a, 4, 25.0, 10.0).unwrap();
        assert_eq!(labels, ["aa", "aa", SILENCE, SILENCE]);
        let empty = PhoneAlignment::new(vec![], 16000).unwrap();
        assert!(frames_to_phones(&empty, 4, 25.0, 10.0).is_err());
    }

    #[test]
    fn alignment_validation_and_parse() {
        assert!(PhoneAlignment::new(vec![seg(5, 5, "a")], 16000).is_err());
        assert!(PhoneAlignment::new(vec![seg(0, 10, "a"), seg(5, 20, "b")], 16000).is_err());
        let a = PhoneAlignment::parse("0 3050 h#\n3050 4559 sh\n\n4559 5723 ix\n", 16000).unwrap();
        assert_eq!(a.entries.len(), 3);
        assert_eq!(PhoneAlignment::parse(&a.to_text(), 16000).unwrap(), a);
        let err = PhoneAlignment::parse("0 10\n", 16000).unwrap_err().to_string();
        assert!(err.contains("line 1"));
    }

    #[test]
    fn accumulate_examples() {
        let mut table = PhoneAttentionTable::new();
        let labels = vec!["aa".to_string(); 4];
        accumulate_attention(&[0.25; 4], &labels, None, &mut table).unwrap();
        assert_eq!(table.phones["aa"].mean_weight(), 0.25);

        let mut table = PhoneAttentionTable::new();
        let labels: Vec<String> = ["s", "aa", "aa", "s"].iter().map(|s| s.to_string()).collect();
        accumulate_attention(&[0.0, 0.6, 0.4, 0.0], &labels, None, &mut table).unwrap();
        assert_eq!(table.phones["aa"].total_weight, 1.0);
        assert_eq!(table.phones["s"].total_weight, 0.0);
        assert!(accumulate_attention(&[1.0], &labels, None, &mut table).is_err());
    }

    #[test]
    fn padding_is_excluded() {
        let mut table = PhoneAttentionTable::new();
        let labels: Vec<String> = ["aa", "aa", "h#"].iter().map(|s| s.to_string()).collect();
        accumulate_attention(&[0.5, 0.5, 0.0], &labels, Some(&[true, true, false]), &mut table).unwrap();
        assert!(!table.phones.contains_key("h#"));
        assert_eq!(table.phones["aa"].frame_count, 2);
    }

    #[test]
    fn additivity_over_concatenation() {
        let l1: Vec<String> = ["aa", "s"].iter().map(|s| s.to_string()).collect();
        let l2: Vec<String> = ["s", "iy", "iy"].iter().map(|s| s.to_string()).collect();
        let (a1, a2) = ([0.7, 0.3], [0.2, 0.5, 0.3]);
        let mut sep = PhoneAttentionTable::new();
        accumulate_attention(&a1, &l1, None, &mut sep).unwrap();
        accumulate_attention(&a2, &l2, None, &mut sep).unwrap();
        let mut cat = PhoneAttentionTable::new();
        let labels: Vec<String> = l1.iter().chain(&l2).cloned().collect();
        let alpha: Vec<f64> = a1.iter().chain(&a2).copied().collect();
        accumulate_attention(&alpha, &labels, None, &mut cat).unwrap();
        assert_eq!(sep.phones, cat.phones);
        assert!((sep.total_weight() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn ranking_ties_and_single_phone() {
        let mut table = PhoneAttentionTable::new();
        accumulate_attention(&[1.0], &["aa".to_string()], None, &mut table).unwrap();
        let (top, bottom) = rank_phones(&table, 10).unwrap();
        assert_eq!(top[0].phone, "aa");
        assert_eq!(bottom[0].phone, "aa");

        let mut table = PhoneAttentionTable::new();
        let labels: Vec<String> = ["z", "b", "m"].iter().map(|s| s.to_string()).collect();
        accumulate_attention(&[0.4, 0.4, 0.2], &labels, None, &mut table).unwrap();
        let (top, bottom) = rank_phones(&table, 2).unwrap();
        let names: Vec<&str> = top.iter().map(|r| r.phone.as_str()).collect();
        assert_eq!(names, ["b", "z"]);
        assert_eq!(bottom[0].phone, "m");
        assert!(rank_phones(&PhoneAttentionTable::new(), 3).is_err());
    }

    #[test]
    fn phone_class_lookup() {
        assert_eq!(phone_class("aa"), Some("vowel"));
        assert_eq!(phone_class("s"), Some("fricative"));
        assert_eq!(phone_class("h#"), Some("silence"));
        assert_eq!(phone_class("xyz"), None);
    }
}
