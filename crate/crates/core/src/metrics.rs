//! Frame-level evaluation: snippet-to-frame expansion, ROC-AUC and average
//! precision over frames pooled across videos, plus the annotation and score
//! file formats.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::FRAMES_PER_SNIPPET;
use crate::error::{Error, Result};

/// Ground-truth anomaly intervals of one video; bounds are inclusive, 0-based frames.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameAnnotation {
    pub video_id: String,
    pub total_frames: usize,
    pub intervals: Vec<[usize; 2]>,
}

impl FrameAnnotation {
    pub fn validate(&self) -> Result<()> {
        let mut sorted = self.intervals.clone();
        sorted.sort();
        for iv in &sorted {
            if iv[0] > iv[1] || iv[1] >= self.total_frames {
                return Err(Error::Data(format!(
                    "{}: interval {iv:?} outside [0, {})",
                    self.video_id, self.total_frames
                )));
            }
        }
        if sorted.windows(2).any(|w| w[1][0] <= w[0][1]) {
            return Err(Error::Data(format!(
                "{}: overlapping intervals",
                self.video_id
            )));
        }
        Ok(())
    }

    /// Per-frame binary labels.
    pub fn frame_labels(&self) -> Vec<bool> {
        let mut labels = vec![false; self.total_frames];
        for iv in &self.intervals {
            for l in &mut labels[iv[0]..=iv[1].min(self.total_frames.saturating_sub(1))] {
                *l = true;
            }
        }
        labels
    }
}

pub fn read_annotations(path: impl AsRef<Path>) -> Result<Vec<FrameAnnotation>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let anns: Vec<FrameAnnotation> =
        serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
    for a in &anns {
        a.validate()?;
    }
    Ok(anns)
}

pub fn write_annotations(anns: &[FrameAnnotation], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = serde_json::to_string_pretty(anns).map_err(|e| Error::json(path, e))?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

/// Frame `f` takes the score of snippet `⌊f/16⌋`; a ragged tail past the
/// last full snippet keeps the last snippet's score.
pub fn expand_scores(snippet_scores: &[f64], total_frames: usize) -> Result<Vec<f64>> {
    let last = snippet_scores
        .len()
        .checked_sub(1)
        .ok_or_else(|| Error::Data("cannot expand an empty score vector".into()))?;
    Ok((0..total_frames)
        .map(|f| snippet_scores[(f / FRAMES_PER_SNIPPET).min(last)])
        .collect())
}

/// Checks that `total_frames` is consistent with `t_len` 16-frame snippets
/// plus at most one partial trailing window.
pub fn check_frame_span(video_id: &str, t_len: usize, total_frames: usize) -> Result<()> {
    let lo = (t_len.saturating_sub(1)) * FRAMES_PER_SNIPPET + 1;
    let hi = t_len * FRAMES_PER_SNIPPET + FRAMES_PER_SNIPPET - 1;
    if total_frames < lo || total_frames > hi {
        return Err(Error::Data(format!(
            "{video_id}: {total_frames} frames cannot come from {t_len} snippets (expected {lo}..={hi})"
        )));
    }
    Ok(())
}

fn class_counts(labels: &[bool]) -> (usize, usize) {
    let pos = labels.iter().filter(|&&l| l).count();
    (pos, labels.len() - pos)
}

/// Order-preserving sort of `(score, label)` by descending score.
fn sorted_desc(scores: &[f64], labels: &[bool]) -> Vec<(f64, bool)> {
    let mut pairs: Vec<(f64, bool)> = scores.iter().copied().zip(labels.iter().copied()).collect();
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0));
    pairs
}

fn check_inputs(scores: &[f64], labels: &[bool]) -> Result<()> {
    if scores.len() != labels.len() {
        return Err(Error::Data(format!(
            "{} scores vs {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite("metric scores".into()));
    }
    Ok(())
}

/// Probability that a random positive outranks a random negative, ties
/// counted as ½ (Mann–Whitney U with average ranks).
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    check_inputs(scores, labels)?;
    let (pos, neg) = class_counts(labels);
    if pos == 0 || neg == 0 {
        return Err(Error::UndefinedMetric(format!(
            "ROC-AUC needs both classes ({pos} positive, {neg} negative)"
        )));
    }
    let mut pairs = sorted_desc(scores, labels);
    pairs.reverse();
    // U statistic counted group by group: each positive beats every negative
    // strictly below it and ties with half of those sharing its score.
    let mut negatives_below = 0usize;
    let mut u2 = 0u128; // twice the U statistic, kept integral
    let mut i = 0;
    while i < pairs.len() {
        let mut j = i;
        let (mut gp, mut gn) = (0usize, 0usize);
        while j < pairs.len() && pairs[j].0 == pairs[i].0 {
            if pairs[j].1 {
                gp += 1;
            } else {
                gn += 1;
            }
            j += 1;
        }
        u2 += (gp as u128) * (2 * negatives_below as u128 + gn as u128);
        negatives_below += gn;
        i = j;
    }
    Ok(u2 as f64 / (2.0 * pos as f64 * neg as f64))
}

/// `Σ (R_n − R_{n−1})·P_n` over descending thresholds, equal scores forming
/// one threshold.
pub fn average_precision(scores: &[f64], labels: &[bool]) -> Result<f64> {
    check_inputs(scores, labels)?;
    let (pos, _) = class_counts(labels);
    if pos == 0 {
        return Err(Error::UndefinedMetric(
            "average precision needs at least one positive".into(),
        ));
    }
    let pairs = sorted_desc(scores, labels);
    let (mut tp, mut seen) = (0usize, 0usize);
    let mut ap = 0.0;
    let mut i = 0;
    while i < pairs.len() {
        let mut group_tp = 0;
        let mut j = i;
        while j < pairs.len() && pairs[j].0 == pairs[i].0 {
            group_tp += usize::from(pairs[j].1);
            j += 1;
        }
        tp += group_tp;
        seen += j - i;
        if group_tp > 0 {
            ap += (group_tp as f64 / pos as f64) * (tp as f64 / seen as f64);
        }
        i = j;
    }
    Ok(ap)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub auc: f64,
    pub ap: f64,
    pub frames: usize,
    pub positives: usize,
}

/// Frame-level scores for every video, keyed by video id.
pub type FrameScores = BTreeMap<String, Vec<f64>>;

/// Pools frames of all annotated videos (annotation order) and computes
/// ROC-AUC and AP over the pool.
pub fn evaluate(scores: &FrameScores, annotations: &[FrameAnnotation]) -> Result<EvalResult> {
    let (pooled_scores, pooled_labels) = pool(scores, annotations)?;
    let positives = pooled_labels.iter().filter(|&&l| l).count();
    Ok(EvalResult {
        auc: roc_auc(&pooled_scores, &pooled_labels)?,
        ap: average_precision(&pooled_scores, &pooled_labels)?,
        frames: pooled_scores.len(),
        positives,
    })
}

pub fn pool(
    scores: &FrameScores,
    annotations: &[FrameAnnotation],
) -> Result<(Vec<f64>, Vec<bool>)> {
    if let Some(extra) = scores
        .keys()
        .find(|id| !annotations.iter().any(|a| &a.video_id == *id))
    {
        return Err(Error::Data(format!(
            "no annotation for scored video {extra:?}"
        )));
    }
    let mut pooled_scores = Vec::new();
    let mut pooled_labels = Vec::new();
    for ann in annotations {
        let s = scores.get(&ann.video_id).ok_or_else(|| {
            Error::Data(format!("no scores for annotated video {:?}", ann.video_id))
        })?;
        if s.len() != ann.total_frames {
            return Err(Error::Data(format!(
                "{}: {} scored frames but annotation has {}",
                ann.video_id,
                s.len(),
                ann.total_frames
            )));
        }
        pooled_scores.extend_from_slice(s);
        pooled_labels.extend(ann.frame_labels());
    }
    Ok((pooled_scores, pooled_labels))
}

/// Writes `video_id,frame,score` rows in the given video order.
pub fn write_score_csv(rows: &[(String, Vec<f64>)], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::from("video_id,frame,score\n");
    for (id, frames) in rows {
        if id.contains(',') || id.contains('\n') {
            return Err(Error::Data(format!(
                "video id {id:?} cannot be written to CSV"
            )));
        }
        for (f, s) in frames.iter().enumerate() {
            out.push_str(&format!("{id},{f},{s}\n"));
        }
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_score_csv(path: impl AsRef<Path>) -> Result<FrameScores> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    if lines.next() != Some("video_id,frame,score") {
        return Err(Error::Data(format!(
            "{}: missing video_id,frame,score header",
            path.display()
        )));
    }
    let mut scores = FrameScores::new();
    for (n, line) in lines.enumerate() {
        let bad = || {
            Error::Data(format!(
                "{}: malformed row {}: {line:?}",
                path.display(),
                n + 2
            ))
        };
        let mut fields = line.split(',');
        let (Some(id), Some(frame), Some(score), None) =
            (fields.next(), fields.next(), fields.next(), fields.next())
        else {
            return Err(bad());
        };
        let frame: usize = frame.parse().map_err(|_| bad())?;
        let score: f64 = score.parse().map_err(|_| bad())?;
        let track = scores.entry(id.to_string()).or_default();
        if frame != track.len() {
            return Err(bad());
        }
        track.push(score);
    }
    Ok(scores)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ann(id: &str, total: usize, intervals: &[[usize; 2]]) -> FrameAnnotation {
        FrameAnnotation {
            video_id: id.into(),
            total_frames: total,
            intervals: intervals.to_vec(),
        }
    }

    #[test]
    fn expansion_cases() {
        let two = expand_scores(&[0.1, 0.9], 32).unwrap();
        assert_eq!(&two[..16], &[0.1; 16]);
        assert_eq!(&two[16..], &[0.9; 16]);
        assert_eq!(expand_scores(&[0.4], 40).unwrap(), vec![0.4; 40]);
        let ragged = expand_scores(&[0.1, 0.9], 35).unwrap();
        assert_eq!(&ragged[32..], &[0.9, 0.9, 0.9]);
        assert!(expand_scores(&[], 4).is_err());
    }

    #[test]
    fn auc_cases() {
        let l = [true, false, true, false];
        assert_eq!(roc_auc(&[0.9, 0.4, 0.6, 0.2], &l).unwrap(), 1.0);
        assert_eq!(roc_auc(&[0.9, 0.6, 0.4, 0.2], &l).unwrap(), 0.75);
        assert_eq!(roc_auc(&[0.3; 4], &l).unwrap(), 0.5);
        assert!(matches!(
            roc_auc(&[0.1, 0.2], &[true, true]),
            Err(Error::UndefinedMetric(_))
        ));
    }

    #[test]
    fn ap_cases() {
        assert_eq!(
            average_precision(&[0.9, 0.2, 0.1], &[true, false, false]).unwrap(),
            1.0
        );
        assert_eq!(
            average_precision(&[0.9, 0.8, 0.1], &[true, true, false]).unwrap(),
            1.0
        );
        let ap = average_precision(&[0.9, 0.8, 0.7], &[true, false, true]).unwrap();
        assert!((ap - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-15);
        assert!(matches!(
            average_precision(&[0.1], &[false]),
            Err(Error::UndefinedMetric(_))
        ));
    }

    #[test]
    fn annotation_validation() {
        assert!(ann("a", 10, &[[2, 4], [6, 9]]).validate().is_ok());
        assert!(ann("a", 10, &[[2, 10]]).validate().is_err());
        assert!(ann("a", 10, &[[5, 4]]).validate().is_err());
        assert!(ann("a", 10, &[[2, 5], [5, 7]]).validate().is_err());
        assert_eq!(
            ann("a", 6, &[[1, 2], [5, 5]]).frame_labels(),
            vec![false, true, true, false, false, true]
        );
    }

    #[test]
    fn evaluate_perfect_and_errors() {
        let anns = vec![ann("a", 20, &[[4, 9]]), ann("b", 7, &[])];
        let mut scores = FrameScores::new();
        scores.insert(
            "a".into(),
            (0..20)
                .map(|f| if (4..=9).contains(&f) { 1.0 } else { 0.0 })
                .collect(),
        );
        scores.insert("b".into(), vec![0.0; 7]);
        let r = evaluate(&scores, &anns).unwrap();
        assert_eq!((r.auc, r.ap, r.frames, r.positives), (1.0, 1.0, 27, 6));

        let mut short = scores.clone();
        short.get_mut("b").unwrap().pop();
        assert!(evaluate(&short, &anns).is_err());
        let mut missing = scores.clone();
        missing.remove("b");
        assert!(evaluate(&missing, &anns).is_err());
        let mut extra = scores;
        extra.insert("c".into(), vec![0.5]);
        assert!(evaluate(&extra, &anns).is_err());
    }

    #[test]
    fn frame_span_rule() {
        assert!(check_frame_span("v", 2, 32).is_ok());
        assert!(check_frame_span("v", 2, 35).is_ok());
        assert!(check_frame_span("v", 2, 48).is_err());
        assert!(check_frame_span("v", 2, 16).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.csv");
        let rows = vec![
            ("x".to_string(), vec![0.1, 0.30000000000000004]),
            ("y".to_string(), vec![0.5]),
        ];
        write_score_csv(&rows, &path).unwrap();
        let back = read_score_csv(&path).unwrap();
        assert_eq!(back["x"], rows[0].1);
        assert_eq!(back["y"], rows[1].1);
    }
}
