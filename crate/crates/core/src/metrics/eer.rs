use super::{MetricsError, ScoreSet};
use crate::Label;

/// Equal-error operating point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EerResult {
    /// `(FAR + FRR) / 2` at the chosen threshold.
    pub eer: f64,
    /// Accept when `score >= threshold`. May be ±∞.
    pub threshold: f64,
    pub far: f64,
    pub frr: f64,
}

/// One row of a detection-error trade-off curve.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DetPoint {
    pub threshold: f64,
    pub far: f64,
    pub frr: f64,
}

/// Bona fide and spoof scores of a set; unknown labels are ignored.
pub fn split_by_label(set: &ScoreSet) -> (Vec<f64>, Vec<f64>) {
    let mut bona = Vec::new();
    let mut spoof = Vec::new();
    for e in &set.entries {
        match e.label {
            Label::Bonafide => bona.push(e.score),
            Label::Spoof => spoof.push(e.score),
            Label::Unknown => {}
        }
    }
    (bona, spoof)
}

/// Sweeps every distinct threshold from −∞ to +∞. Thresholds sit at midpoints
/// between adjacent distinct scores.
pub fn det_curve(bonafide: &[f64], spoof: &[f64]) -> Result<Vec<DetPoint>, MetricsError> {
    if bonafide.is_empty() || spoof.is_empty() {
        return Err(MetricsError::SingleClass);
    }
    if bonafide.iter().chain(spoof).any(|s| !s.is_finite()) {
        return Err(MetricsError::NonFinite);
    }
    let mut all: Vec<(f64, bool)> = bonafide
        .iter()
        .map(|&s| (s, true))
        .chain(spoof.iter().map(|&s| (s, false)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    let (nb, ns) = (bonafide.len() as f64, spoof.len() as f64);
    let rates = |bona_below: usize, spoof_below: usize| {
        let far = (spoof.len() - spoof_below) as f64 / ns;
        let frr = bona_below as f64 / nb;
        (far, frr)
    };

    let mut points = Vec::with_capacity(all.len() + 1);
    let (far, frr) = rates(0, 0);
    points.push(DetPoint {
        threshold: f64::NEG_INFINITY,
        far,
        frr,
    });
    let (mut bona_below, mut spoof_below) = (0, 0);
    let mut i = 0;
    while i < all.len() {
        let value = all[i].0;
        while i < all.len() && all[i].0 == value {
            if all[i].1 {
                bona_below += 1;
            } else {
                spoof_below += 1;
            }
            i += 1;
        }
        let threshold = match all.get(i) {
            Some(&(next, _)) => {
                let mid = value + (next - value) / 2.0;
                if mid > value {
                    mid
                } else {
                    next
                }
            }
            None => f64::INFINITY,
        };
        let (far, frr) = rates(bona_below, spoof_below);
        points.push(DetPoint { threshold, far, frr });
    }
    Ok(points)
}

/// Discrete EER: the threshold minimising `|FAR − FRR|` (lowest threshold on ties).
pub fn eer_from_scores(bonafide: &[f64], spoof: &[f64]) -> Result<EerResult, MetricsError> {
    let points = det_curve(bonafide, spoof)?;
    let mut best = points[0];
    for p in &points[1..] {
        if (p.far - p.frr).abs() < (best.far - best.frr).abs() {
            best = *p;
        }
    }
    Ok(EerResult {
        eer: (best.far + best.frr) / 2.0,
        threshold: best.threshold,
        far: best.far,
        frr: best.frr,
    })
}

pub fn compute_eer(set: &ScoreSet) -> Result<EerResult, MetricsError> {
    let (bona, spoof) = split_by_label(set);
    eer_from_scores(&bona, &spoof)
}

pub fn det_points(set: &ScoreSet) -> Result<Vec<DetPoint>, MetricsError> {
    let (bona, spoof) = split_by_label(set);
    det_curve(&bona, &spoof)
}
