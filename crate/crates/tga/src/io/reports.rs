//! CSV emission for loss traces, metric reports, and attack traces.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::evalkit::MetricsReport;
use crate::objectives::BatchTrace;

/// `epoch,batch,ce,larm,gacm,total` rows.
pub fn write_loss_trace(traces: &[BatchTrace], path: &Path) -> Result<()> {
    let mut out = String::from("epoch,batch,ce,larm,gacm,total\n");
    for t in traces {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            t.epoch, t.batch, t.ce, t.larm, t.gacm, t.total
        );
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// One row per (model, attack, metric), preceded by `#` comment lines echoing
/// the resolved configuration.
pub fn write_metrics_csv(
    rows: &[(String, String, MetricsReport)],
    config_echo: &str,
    path: &Path,
) -> Result<()> {
    let mut out = String::new();
    let _ = writeln!(out, "# {config_echo}");
    let _ = writeln!(out, "model,attack,metric,value");
    for (model, attack, report) in rows {
        let metrics: [(&str, f64); 6] = [
            ("a_robust", report.a_robust),
            ("a_clean", report.a_clean),
            ("a_overall", report.a_overall),
            ("mean_soft_iou_clean", report.mean_soft_iou_clean),
            ("mean_soft_iou_adv", report.mean_soft_iou_adv),
            ("mean_attention_shift", report.mean_attention_shift),
        ];
        for (name, value) in metrics {
            let _ = writeln!(out, "{model},{attack},{name},{value}");
        }
        let _ = writeln!(
            out,
            "{model},{attack},seed,{}",
            report.seed
        );
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// `example,iteration,objective` rows of per-iteration attack objectives.
pub fn write_attack_trace(rows: &[(usize, usize, f32)], path: &Path) -> Result<()> {
    let mut out = String::from("example,iteration,objective\n");
    for (example, iteration, value) in rows {
        let _ = writeln!(out, "{example},{iteration},{value}");
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attacks::AttackConfig;

    #[test]
    fn loss_trace_has_header_and_rows() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("loss.csv");
        let traces = vec![BatchTrace {
            epoch: 0,
            batch: 1,
            ce: 1.5,
            larm: 0.25,
            gacm: 0.125,
            total: 1.55,
        }];
        write_loss_trace(&traces, &path).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("epoch,batch,ce,larm,gacm,total\n"));
        assert!(text.contains("0,1,1.5,0.25,0.125,1.55"));
    }

    #[test]
    fn metrics_csv_echoes_config_and_preserves_overall_invariant() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("metrics.csv");
        let report = MetricsReport::new(0.5, 0.9, 0.4, 0.3, 0.2, AttackConfig::eval_default(), 3);
        write_metrics_csv(
            &[("target".into(), "pgd100".into(), report)],
            "seed=42 method=tga",
            &path,
        )
        .unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("# seed=42 method=tga\n"));
        assert!(text.contains("target,pgd100,a_robust,0.5"));
        assert!(text.contains("target,pgd100,a_overall,0.7"));
    }
}
