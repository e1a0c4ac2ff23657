//! CSV reports. Every report starts with the resolved run configuration as
//! `#` comment lines.

use std::fmt::Write as _;
use std::path::Path;

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::eval_stats::EvalReport;
use crate::model::TrainReport;

pub const EVAL_HEADER: &str = "image_id,baseline_psnr_db,candidate_psnr_db,gain_db";
pub const TRAIN_HEADER: &str = "epoch,train_mse,val_mse,seconds";
pub const STRIDE_HEADER: &str = "stride,patches_per_image,time_per_image_s,mean_psnr_db,mean_gain_db,t_stat,p_value";
pub const PEAK_HEADER: &str = "peak,baseline_psnr_db,mean_psnr_db,mean_gain_db,t_stat,p_value,win_rate";

const DEGENERATE: &str = "degenerate";

/// Fixed four-decimal formatting; infinities print as `inf` / `-inf`.
pub fn fmt4(v: f64) -> String {
    if v.is_infinite() {
        if v > 0.0 { "inf" } else { "-inf" }.to_string()
    } else {
        format!("{v:.4}")
    }
}

fn t_fields(r: &EvalReport) -> (String, String) {
    match &r.t_test {
        Some(t) => (fmt4(t.t), fmt4(t.p_two_tailed)),
        None => (DEGENERATE.into(), DEGENERATE.into()),
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Per-image PSNR table followed by the summary rows `mean_gain`, `t_stat`,
/// `p_value` and `win_rate` (value in the last column).
pub fn eval_csv(report: &EvalReport, config: &RunConfig) -> String {
    let mut s = config.to_comment_lines();
    writeln!(s, "# stride={} peak={}", report.stride, report.peak).unwrap();
    writeln!(s, "{EVAL_HEADER}").unwrap();
    for r in &report.records {
        writeln!(
            s,
            "{},{},{},{}",
            csv_field(&r.image_id),
            fmt4(r.baseline_psnr),
            fmt4(r.candidate_psnr),
            fmt4(r.gain)
        )
        .unwrap();
    }
    let (t, p) = t_fields(report);
    writeln!(s, "mean_gain,,,{}", fmt4(report.mean_gain)).unwrap();
    writeln!(s, "t_stat,,,{t}").unwrap();
    writeln!(s, "p_value,,,{p}").unwrap();
    writeln!(s, "win_rate,,,{}", fmt4(report.win_rate)).unwrap();
    s
}

pub fn train_csv(report: &TrainReport, config: &RunConfig) -> String {
    let mut s = config.to_comment_lines();
    writeln!(s, "{TRAIN_HEADER}").unwrap();
    for e in 0..report.epochs_completed() {
        writeln!(
            s,
            "{},{:.6},{:.6},{:.2}",
            e + 1,
            report.train_mse[e],
            report.val_mse[e],
            report.epoch_seconds[e]
        )
        .unwrap();
    }
    s
}

#[derive(Clone, Debug)]
pub struct StrideRow {
    pub stride: usize,
    pub patches_per_image: usize,
    pub time_per_image_s: f64,
    pub report: EvalReport,
}

pub fn stride_csv(rows: &[StrideRow], config: &RunConfig) -> String {
    let mut s = config.to_comment_lines();
    writeln!(s, "{STRIDE_HEADER}").unwrap();
    for r in rows {
        let (t, p) = t_fields(&r.report);
        writeln!(
            s,
            "{},{},{},{},{},{t},{p}",
            r.stride,
            r.patches_per_image,
            fmt4(r.time_per_image_s),
            fmt4(r.report.mean_candidate_psnr),
            fmt4(r.report.mean_gain)
        )
        .unwrap();
    }
    s
}

pub fn peak_csv(rows: &[EvalReport], config: &RunConfig) -> String {
    let mut s = config.to_comment_lines();
    writeln!(s, "{PEAK_HEADER}").unwrap();
    for r in rows {
        let (t, p) = t_fields(r);
        writeln!(
            s,
            "{},{},{},{},{t},{p},{}",
            r.peak,
            fmt4(r.mean_baseline_psnr),
            fmt4(r.mean_candidate_psnr),
            fmt4(r.mean_gain),
            fmt4(r.win_rate)
        )
        .unwrap();
    }
    s
}

pub fn write_report(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}
