//! Per-depth aggregation of metric rows into means and 95% confidence
//! intervals, with the CSV schema
//! `variant,depth_index,n,wci_mean,wci_ci95,pci_mean,pci_ci95,ssim_mean,ssim_ci95,iou_mean,iou_ci95`.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::stats::{ci95_half_width, mean};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub depth_index: usize,
    /// e.g. "raw" or "DC-3x".
    pub variant: String,
    pub wci: f64,
    pub pci: f64,
    pub ssim_vs_ref: Option<f64>,
    pub iou_vs_gt: Option<f64>,
}

/// One aggregated `(variant, depth_index)` group. CI columns hold the
/// half-width; undefined cells serialize as empty.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub variant: String,
    pub depth_index: usize,
    pub n: usize,
    pub wci_mean: Option<f64>,
    pub wci_ci95: Option<f64>,
    pub pci_mean: Option<f64>,
    pub pci_ci95: Option<f64>,
    pub ssim_mean: Option<f64>,
    pub ssim_ci95: Option<f64>,
    pub iou_mean: Option<f64>,
    pub iou_ci95: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricsReport {
    pub rows: Vec<ReportRow>,
}

fn summarize(values: &[f64]) -> (Option<f64>, Option<f64>) {
    if values.is_empty() {
        (None, None)
    } else {
        (Some(mean(values)), ci95_half_width(values))
    }
}

/// Groups rows by `(variant, depth_index)`; variants keep their order of
/// first appearance and depths ascend within a variant.
///
/// Groups with a single sample get an empty CI cell.
pub fn aggregate_report(rows: &[MetricsRow]) -> Result<MetricsReport> {
    if rows.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut variants: Vec<&str> = Vec::new();
    for r in rows {
        if !variants.contains(&r.variant.as_str()) {
            variants.push(&r.variant);
        }
    }
    let mut out = Vec::new();
    for variant in variants {
        let mut depths: Vec<usize> = rows.iter().filter(|r| r.variant == variant).map(|r| r.depth_index).collect();
        depths.sort_unstable();
        depths.dedup();
        for depth in depths {
            let group: Vec<&MetricsRow> = rows
                .iter()
                .filter(|r| r.variant == variant && r.depth_index == depth)
                .collect();
            let wci: Vec<f64> = group.iter().map(|r| r.wci).filter(|v| v.is_finite()).collect();
            let pci: Vec<f64> = group.iter().map(|r| r.pci).filter(|v| v.is_finite()).collect();
            let ssim: Vec<f64> = group.iter().filter_map(|r| r.ssim_vs_ref).collect();
            let iou: Vec<f64> = group.iter().filter_map(|r| r.iou_vs_gt).collect();
            let (wci_mean, wci_ci95) = summarize(&wci);
            let (pci_mean, pci_ci95) = summarize(&pci);
            let (ssim_mean, ssim_ci95) = summarize(&ssim);
            let (iou_mean, iou_ci95) = summarize(&iou);
            out.push(ReportRow {
                variant: variant.to_string(),
                depth_index: depth,
                n: group.len(),
                wci_mean,
                wci_ci95,
                pci_mean,
                pci_ci95,
                ssim_mean,
                ssim_ci95,
                iou_mean,
                iou_ci95,
            });
        }
    }
    Ok(MetricsReport { rows: out })
}

impl MetricsReport {
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        for row in &self.rows {
            w.serialize(row).map_err(csv_error)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        Ok(String::from_utf8(buf).expect("csv output is utf-8"))
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(reader);
        let rows = r
            .deserialize()
            .collect::<std::result::Result<Vec<ReportRow>, _>>()
            .map_err(csv_error)?;
        Ok(Self { rows })
    }

    pub fn variants(&self) -> Vec<&str> {
        let mut v: Vec<&str> = Vec::new();
        for r in &self.rows {
            if !v.contains(&r.variant.as_str()) {
                v.push(&r.variant);
            }
        }
        v
    }

    pub fn rows_for<'a>(&'a self, variant: &'a str) -> impl Iterator<Item = &'a ReportRow> + 'a {
        self.rows.iter().filter(move |r| r.variant == variant)
    }
}

fn csv_error(e: csv::Error) -> Error {
    Error::InvalidParameter(format!("csv: {e}"))
}
