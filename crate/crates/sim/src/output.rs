//! CSV sinks for round metrics, sweeps and partition reports.
//!
//! Floats are written in shortest round-trip form and missing values as
//! empty cells, so identical runs give byte-identical files.

use std::path::Path;

use fairfed_core::metrics::{ParetoFront, RoundMetrics};
use serde::Serialize;

use crate::harness::PartitionRow;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoundRow {
    pub round: usize,
    pub avg_acc: f64,
    pub std_acc: f64,
    pub rsd_err: f64,
    pub worst30_acc: f64,
    #[serde(rename = "C_raw")]
    pub c_raw: Option<f64>,
    #[serde(rename = "C_used")]
    pub c_used: Option<f64>,
    #[serde(rename = "R_t")]
    pub r_t: Option<f64>,
    #[serde(rename = "mean_I")]
    pub mean_i: Option<f64>,
    #[serde(rename = "max_I")]
    pub max_i: Option<f64>,
    pub skipped: bool,
    /// Participating client ids joined by `;`.
    pub participants: String,
    /// Local epochs per participant, same order.
    pub epochs: String,
}

fn join<T: ToString>(xs: &[T]) -> String {
    xs.iter().map(T::to_string).collect::<Vec<_>>().join(";")
}

impl From<&RoundMetrics> for RoundRow {
    fn from(m: &RoundMetrics) -> Self {
        Self {
            round: m.round,
            avg_acc: m.avg_acc,
            std_acc: m.std_acc,
            rsd_err: m.rsd_err,
            worst30_acc: m.worst30_acc,
            c_raw: m.c_raw,
            c_used: m.c_used,
            r_t: m.r_t,
            mean_i: m.mean_inverse_rate(),
            max_i: m.max_inverse_rate(),
            skipped: m.skipped,
            participants: join(&m.participants),
            epochs: join(&m.epochs),
        }
    }
}

pub fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_rounds_csv(path: &Path, rows: &[RoundRow]) -> anyhow::Result<()> {
    if rows.is_empty() {
        // keep the header so empty runs still parse
        std::fs::write(
            path,
            "round,avg_acc,std_acc,rsd_err,worst30_acc,C_raw,C_used,R_t,mean_I,max_I,skipped,participants,epochs\n",
        )?;
        return Ok(());
    }
    write_rows(path, rows)
}

#[derive(Serialize)]
struct SweepRow<'a> {
    kind: &'a str,
    name: String,
    alpha: Option<f64>,
    avg_error: f64,
    rsd: f64,
    dominated: bool,
}

pub fn write_sweep_csv(path: &Path, front: &ParetoFront) -> anyhow::Result<()> {
    let mut rows: Vec<SweepRow> = front
        .points
        .iter()
        .map(|p| SweepRow {
            kind: "sweep",
            name: format!("adafedadam-alpha-{}", p.alpha),
            alpha: Some(p.alpha),
            avg_error: p.avg_error,
            rsd: p.rsd,
            dominated: p.dominated,
        })
        .collect();
    rows.extend(front.baselines.iter().map(|(b, dominated)| SweepRow {
        kind: "baseline",
        name: b.name.clone(),
        alpha: None,
        avg_error: b.avg_error,
        rsd: b.rsd,
        dominated: *dominated,
    }));
    write_rows(path, &rows)
}

pub fn write_partition_csv(path: &Path, rows: &[PartitionRow], num_classes: usize) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["client".to_string(), "n_train".into(), "n_test".into()];
    header.extend((0..num_classes).map(|c| format!("label_{c}")));
    header.extend(["tv_to_pool".to_string(), "top2_mass".into()]);
    w.write_record(&header)?;
    for r in rows {
        let mut rec = vec![r.client.to_string(), r.n_train.to_string(), r.n_test.to_string()];
        rec.extend(r.label_counts.iter().map(usize::to_string));
        rec.push(r.tv_to_pool.to_string());
        rec.push(r.top2_mass.to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}
