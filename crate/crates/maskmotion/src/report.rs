//! Text outputs: the per-step training log and the mIoU report.

use std::fmt::Write as _;

use maskmotion_core::maskeval::MiouReport;
use maskmotion_core::trainer::LossReport;

pub const METRICS_HEADER: &str = "step\tL_d\tL_c\tL";
pub const EVAL_HEADER: &str = "video_id\tframe_id\tiou";

/// One log line. Floats are printed in shortest round-trip form, so the
/// file reproduces `L = L_d + α·L_c` exactly when re-parsed.
pub fn metrics_line(step: u64, r: &LossReport) -> String {
    format!("{step}\t{:?}\t{:?}\t{:?}", r.loss_d, r.loss_c, r.loss)
}

/// Parses a metrics log back into `(step, report)` rows.
pub fn parse_metrics(text: &str) -> Option<Vec<(u64, LossReport)>> {
    let mut lines = text.lines();
    if lines.next()? != METRICS_HEADER {
        return None;
    }
    lines
        .map(|l| {
            let f: Vec<&str> = l.split('\t').collect();
            if f.len() != 4 {
                return None;
            }
            Some((
                f[0].parse().ok()?,
                LossReport {
                    loss_d: f[1].parse().ok()?,
                    loss_c: f[2].parse().ok()?,
                    loss: f[3].parse().ok()?,
                },
            ))
        })
        .collect()
}

pub fn eval_report(r: &MiouReport) -> String {
    let mut out = String::new();
    writeln!(out, "{EVAL_HEADER}").unwrap();
    for rec in &r.records {
        writeln!(out, "{}\t{}\t{:?}", rec.video, rec.frame, rec.iou).unwrap();
    }
    writeln!(out, "S_m={:.6}", r.s_m).unwrap();
    out
}

/// Body rows and footer value of an eval report.
pub fn parse_eval_report(text: &str) -> Option<(Vec<(usize, usize, f64)>, f64)> {
    let mut lines: Vec<&str> = text.lines().collect();
    let footer = lines.pop()?.strip_prefix("S_m=")?.parse().ok()?;
    if lines.first() != Some(&EVAL_HEADER) {
        return None;
    }
    let rows = lines[1..]
        .iter()
        .map(|l| {
            let f: Vec<&str> = l.split('\t').collect();
            match f[..] {
                [v, fr, iou] => Some((v.parse().ok()?, fr.parse().ok()?, iou.parse().ok()?)),
                _ => None,
            }
        })
        .collect::<Option<Vec<_>>>()?;
    Some((rows, footer))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn metrics_round_trip() {
        let r = LossReport::new(0.1, 0.3, 0.7);
        let text = format!("{METRICS_HEADER}\n{}\n", metrics_line(3, &r));
        let rows = parse_metrics(&text).unwrap();
        assert_eq!(rows, vec![(3, r)]);
    }

    #[test]
    fn malformed_metrics_rejected() {
        assert!(parse_metrics("nope\n").is_none());
        assert!(parse_metrics(&format!("{METRICS_HEADER}\n1\t2\n")).is_none());
    }
}
