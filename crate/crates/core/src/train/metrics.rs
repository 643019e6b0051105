use crate::error::{Error, Result};

fn check_len(op: &str, preds: usize, labels: usize) -> Result<()> {
    if preds != labels {
        return Err(Error::Argument(format!(
            "{op}: {preds} predictions for {labels} labels"
        )));
    }
    Ok(())
}

/// Row-wise argmax; ties go to the lowest class.
pub fn argmax_rows(logits: &[f64], classes: usize) -> Vec<usize> {
    logits
        .chunks(classes)
        .map(|row| {
            let mut best = 0;
            for (j, v) in row.iter().enumerate() {
                if *v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

/// Fraction of correct predictions.
pub fn overall_accuracy(preds: &[usize], labels: &[usize]) -> Result<f64> {
    check_len("overall accuracy", preds.len(), labels.len())?;
    if preds.is_empty() {
        return Err(Error::Argument("overall accuracy of nothing".into()));
    }
    let hits = preds.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(hits as f64 / preds.len() as f64)
}

fn part_iou(preds: &[usize], labels: &[usize], part: usize) -> f64 {
    let (mut inter, mut union) = (0usize, 0usize);
    for (p, l) in preds.iter().zip(labels) {
        let (a, b) = (*p == part, *l == part);
        inter += usize::from(a && b);
        union += usize::from(a || b);
    }
    // a part absent from both counts as perfectly segmented
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

/// Mean over shapes of the mean part IoU of each shape, where shape `i`
/// is scored over the part labels `part_sets[i]` of its category.
pub fn instance_miou(preds: &[Vec<usize>], labels: &[Vec<usize>], part_sets: &[&[usize]]) -> Result<f64> {
    check_len("instance mIoU", preds.len(), labels.len())?;
    check_len("instance mIoU part sets", part_sets.len(), labels.len())?;
    if preds.is_empty() {
        return Err(Error::Argument("instance mIoU of no shapes".into()));
    }
    let mut total = 0.0;
    for ((p, l), parts) in preds.iter().zip(labels).zip(part_sets) {
        check_len("instance mIoU shape", p.len(), l.len())?;
        if parts.is_empty() {
            return Err(Error::Argument("empty part set".into()));
        }
        total += parts.iter().map(|&k| part_iou(p, l, k)).sum::<f64>() / parts.len() as f64;
    }
    Ok(total / preds.len() as f64)
}

/// Per-class IoU over all points pooled, averaged over classes that occur
/// in either predictions or labels.
pub fn point_miou(preds: &[usize], labels: &[usize], classes: usize) -> Result<f64> {
    check_len("point mIoU", preds.len(), labels.len())?;
    let mut inter = vec![0usize; classes];
    let mut union = vec![0usize; classes];
    for (&p, &l) in preds.iter().zip(labels) {
        if p >= classes || l >= classes {
            return Err(Error::Argument(format!("class {} out of range {classes}", p.max(l))));
        }
        if p == l {
            inter[p] += 1;
            union[p] += 1;
        } else {
            union[p] += 1;
            union[l] += 1;
        }
    }
    let present: Vec<f64> = (0..classes)
        .filter(|&c| union[c] > 0)
        .map(|c| inter[c] as f64 / union[c] as f64)
        .collect();
    if present.is_empty() {
        return Err(Error::Argument("point mIoU of no points".into()));
    }
    Ok(present.iter().sum::<f64>() / present.len() as f64)
}
