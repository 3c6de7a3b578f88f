use std::collections::{HashMap, HashSet};
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use super::{DetPoint, MetricsError};
use crate::audio::parse_protocol_lenient;
use crate::Label;

#[derive(Clone, Debug, PartialEq)]
pub struct ScoreEntry {
    pub id: String,
    pub score: f64,
    pub label: Label,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ScoreSet {
    pub entries: Vec<ScoreEntry>,
}

impl ScoreSet {
    pub fn has_both_classes(&self) -> bool {
        self.entries.iter().any(|e| e.label == Label::Bonafide)
            && self.entries.iter().any(|e| e.label == Label::Spoof)
    }
}

/// `logit(bona fide) − logit(spoof)` for a `[spoof, bona fide]` logit pair: the
/// log ratio of the two softmax posteriors.
pub fn score_from_logits(logits: &[f32]) -> Result<f64, MetricsError> {
    let [spoof, bona] = *logits else {
        return Err(MetricsError::Labels(format!(
            "expected two logits, got {}",
            logits.len()
        )));
    };
    if !spoof.is_finite() || !bona.is_finite() {
        return Err(MetricsError::NonFinite);
    }
    Ok(bona as f64 - spoof as f64)
}

/// Writes `<id> <score>` lines with 17 significant digits.
pub fn write_scores(set: &ScoreSet, path: impl AsRef<Path>) -> Result<(), MetricsError> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for e in &set.entries {
        writeln!(w, "{} {:.16e}", e.id, e.score)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `<threshold> <FAR> <FRR>` rows.
pub fn write_det(points: &[DetPoint], mut w: impl Write) -> std::io::Result<()> {
    for p in points {
        writeln!(w, "{} {} {}", p.threshold, p.far, p.frr)?;
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScoreRead {
    pub set: ScoreSet,
    /// Score ids absent from the label file; their label is `Unknown`.
    pub unmatched: Vec<String>,
}

/// Reads a score file, optionally joining labels from a protocol file by
/// utterance id.
pub fn read_scores(path: impl AsRef<Path>, labels: Option<&Path>) -> Result<ScoreRead, MetricsError> {
    let text = fs::read_to_string(path)?;
    let label_map: Option<HashMap<String, Label>> = labels
        .map(|p| {
            let entries = parse_protocol_lenient(p).map_err(|e| MetricsError::Labels(e.to_string()))?;
            Ok::<_, MetricsError>(
                entries
                    .into_iter()
                    .map(|e| (e.utterance_id, e.key))
                    .collect(),
            )
        })
        .transpose()?;
    let mut seen = HashSet::new();
    let mut set = ScoreSet::default();
    let mut unmatched = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        let [id, score] = fields[..] else {
            return Err(MetricsError::Parse {
                line: n + 1,
                msg: format!("expected `<id> <score>`, got {} fields", fields.len()),
            });
        };
        let score: f64 = score.parse().map_err(|_| MetricsError::Parse {
            line: n + 1,
            msg: format!("`{score}` is not a number"),
        })?;
        if !score.is_finite() {
            return Err(MetricsError::Parse {
                line: n + 1,
                msg: "score is not finite".into(),
            });
        }
        if !seen.insert(id.to_string()) {
            return Err(MetricsError::DuplicateId(id.to_string()));
        }
        let label = match &label_map {
            Some(m) => match m.get(id) {
                Some(&l) => l,
                None => {
                    unmatched.push(id.to_string());
                    Label::Unknown
                }
            },
            None => Label::Unknown,
        };
        set.entries.push(ScoreEntry {
            id: id.to_string(),
            score,
            label,
        });
    }
    Ok(ScoreRead { set, unmatched })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn logit_scores() {
        assert_eq!(score_from_logits(&[5.0, 5.0]).unwrap(), 0.0);
        assert_eq!(score_from_logits(&[1.0, 3.0]).unwrap(), 2.0);
        assert!(score_from_logits(&[f32::NAN, 0.0]).is_err());
    }

    #[test]
    fn duplicate_ids_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.txt");
        fs::write(&p, "a 1.0\na 2.0\n").unwrap();
        assert!(matches!(read_scores(&p, None), Err(MetricsError::DuplicateId(_))));
    }

    #[test]
    fn bad_number_names_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.txt");
        fs::write(&p, "a 1.0\nb x\n").unwrap();
        match read_scores(&p, None) {
            Err(MetricsError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unmatched_ids_reported() {
        let dir = tempfile::tempdir().unwrap();
        let s = dir.path().join("s.txt");
        let p = dir.path().join("p.txt");
        fs::write(&s, "u1 1.0\nu2 0.5\nu3 0.0\n").unwrap();
        fs::write(&p, "S u1 - - bonafide\nS u3 - A01 spoof\n").unwrap();
        let r = read_scores(&s, Some(&p)).unwrap();
        assert_eq!(r.unmatched, vec!["u2".to_string()]);
        assert_eq!(r.set.entries[0].label, Label::Bonafide);
        assert_eq!(r.set.entries[1].label, Label::Unknown);
        assert_eq!(r.set.entries[2].label, Label::Spoof);
    }
}
