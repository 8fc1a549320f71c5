//! Plain-text renderings: ASCII frames and report tables.

use pnet::harness::{AggregateMetrics, FoldSummary};
use pnet::nn::{FRAME_HEIGHT, FRAME_WIDTH};

const RAMP: &[u8] = b" .:-=+*#%@";

/// One character per cell; `scale` maps to the densest glyph and zero is blank.
pub fn ascii_grid(frame: &[f32], scale: f32) -> Vec<String> {
    (0..FRAME_HEIGHT)
        .map(|r| {
            frame[r * FRAME_WIDTH..(r + 1) * FRAME_WIDTH]
                .iter()
                .map(|&v| {
                    if v <= 0.0 || scale <= 0.0 {
                        ' '
                    } else {
                        let t = (v / scale).clamp(0.0, 1.0);
                        let i = 1 + (t * (RAMP.len() - 2) as f32).round() as usize;
                        RAMP[i.min(RAMP.len() - 1)] as char
                    }
                })
                .collect()
        })
        .collect()
}

pub fn side_by_side(left: &[String], right: &[String], titles: (&str, &str)) -> String {
    let mut out = format!("{:<w$} | {}\n", titles.0, titles.1, w = FRAME_WIDTH);
    for (a, b) in left.iter().zip(right) {
        out.push_str(&format!("{a} | {b}\n"));
    }
    out
}

fn pct(v: Option<f64>) -> String {
    v.map_or("   n/a".into(), |x| format!("{x:6.1}"))
}

pub const CATEGORY_HEADER: &str = "           supine  right   left";

pub fn aggregate_tables(mean: &AggregateMetrics) -> String {
    let mut out = String::new();
    out.push_str(&format!("posture accuracy (trained classes): {:.2}%\n", mean.posture_acc));
    out.push_str(&format!("3-category accuracy:                {:.2}%\n", mean.coarse_acc));
    if let Some(s) = mean.subject_acc {
        out.push_str(&format!("subject accuracy:                   {s:.2}%\n"));
    }
    if let Some(by) = &mean.subject_by_category {
        out.push_str("\nsubject identification by posture category (%)\n");
        out.push_str(CATEGORY_HEADER);
        out.push('\n');
        out.push_str(&format!(
            "accuracy  {}\n",
            by.iter().map(|&v| pct(v)).collect::<Vec<_>>().join(" ")
        ));
    }
    out.push_str("\n3-category posture classification (%)\n");
    out.push_str(CATEGORY_HEADER);
    out.push('\n');
    for (name, row) in [
        ("precision", &mean.coarse_precision),
        ("recall   ", &mean.coarse_recall),
        ("specific.", &mean.coarse_specificity),
    ] {
        out.push_str(&format!(
            "{name} {}\n",
            row.iter().map(|&v| pct(v)).collect::<Vec<_>>().join(" ")
        ));
    }
    out
}

pub fn fold_table(folds: &[FoldSummary]) -> String {
    let mut out = String::from("fold  held-out      train   test  posture  coarse  subject\n");
    for f in folds {
        out.push_str(&format!(
            "{:>4}  {:<12} {:>6} {:>6}  {:>7.2} {:>7.2}  {}\n",
            f.fold,
            f.held_out,
            f.train_size,
            f.test_size,
            f.posture_acc,
            f.coarse_acc,
            f.subject_acc.map_or("    n/a".into(), |s| format!("{s:>7.2}"))
        ));
    }
    out
}
