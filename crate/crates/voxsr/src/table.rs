//! Metrics rows as CSV and as a text table with one column pair per task.

use std::io::{Read, Write};

use voxsr_core::degradation::Task;
use voxsr_core::train::{MetricsRow, RowStatus};

pub const CSV_HEADER: &str = "experiment,task,ssim,psnr_db,n_volumes,status";

pub fn write_csv(rows: &[MetricsRow], w: impl Write) -> csv::Result<()> {
    let mut wr = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(w);
    for r in rows {
        wr.serialize(r)?;
    }
    if rows.is_empty() {
        wr.write_record(CSV_HEADER.split(','))?;
    }
    wr.flush()?;
    Ok(())
}

pub fn csv_string(rows: &[MetricsRow]) -> String {
    let mut out = Vec::new();
    write_csv(rows, &mut out).expect("writing to memory");
    String::from_utf8(out).expect("csv is UTF-8")
}

pub fn read_csv(r: impl Read) -> csv::Result<Vec<MetricsRow>> {
    csv::Reader::from_reader(r).deserialize().collect()
}

/// Rows grouped by experiment (first-seen order) with SSIM/PSNR per task.
pub fn format_table(rows: &[MetricsRow]) -> String {
    let tasks: Vec<Task> = [Task::Isotropic, Task::Anisotropic].into_iter().filter(|t| rows.iter().any(|r| r.task == *t)).collect();
    let mut names: Vec<&str> = Vec::new();
    for r in rows {
        if !names.contains(&r.experiment.as_str()) {
            names.push(&r.experiment);
        }
    }
    let width = names.iter().map(|n| n.len()).max().unwrap_or(0).max("Experiment".len());
    let mut out = format!("{:width$}", "Experiment");
    for t in &tasks {
        out.push_str(&format!(" | {:^17}", t.as_str()));
    }
    out.push('\n');
    out.push_str(&format!("{:width$}", ""));
    for _ in &tasks {
        out.push_str(&format!(" | {:>7} {:>9}", "SSIM", "PSNR(dB)"));
    }
    out.push('\n');
    out.push_str(&"-".repeat(width + tasks.len() * 20));
    out.push('\n');
    for name in names {
        out.push_str(&format!("{name:width$}"));
        for t in &tasks {
            match rows.iter().find(|r| r.experiment == name && r.task == *t) {
                Some(r) if r.status == RowStatus::Ok => out.push_str(&format!(" | {:>7.4} {:>9.2}", r.ssim, r.psnr_db)),
                Some(_) => out.push_str(&format!(" | {:>17}", "error")),
                None => out.push_str(&format!(" | {:>17}", "-")),
            }
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_csv_still_has_a_header() {
        assert_eq!(csv_string(&[]), format!("{CSV_HEADER}\n"));
    }
}
