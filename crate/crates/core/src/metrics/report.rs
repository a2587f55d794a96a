use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Metrics of one utterance; `None` where the condition is undefined
/// (e.g. no echo in a near-end-only file).
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct UtteranceMetrics {
    pub id: String,
    /// Full mixture, white-box decomposition.
    pub erle_wb_db: Option<f64>,
    pub delta_snr_wb_db: Option<f64>,
    /// Microphone = echo only, far end unchanged.
    pub erle_component_db: Option<f64>,
    /// Microphone = noise only, far end silent.
    pub dsnr_component_db: Option<f64>,
    /// Microphone = near-end speech only, far end silent: distortion proxies.
    pub ne_lsd_db: Option<f64>,
    pub ne_snr_db: Option<f64>,
}

/// Means over the utterances where each metric is defined.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct AggregateMetrics {
    pub erle_wb_db: Option<f64>,
    pub delta_snr_wb_db: Option<f64>,
    pub erle_component_db: Option<f64>,
    pub dsnr_component_db: Option<f64>,
    pub ne_lsd_db: Option<f64>,
    pub ne_snr_db: Option<f64>,
}

fn mean(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = values.flatten().collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

impl AggregateMetrics {
    pub fn from_utterances(u: &[UtteranceMetrics]) -> Self {
        AggregateMetrics {
            erle_wb_db: mean(u.iter().map(|m| m.erle_wb_db)),
            delta_snr_wb_db: mean(u.iter().map(|m| m.delta_snr_wb_db)),
            erle_component_db: mean(u.iter().map(|m| m.erle_component_db)),
            dsnr_component_db: mean(u.iter().map(|m| m.dsnr_component_db)),
            ne_lsd_db: mean(u.iter().map(|m| m.ne_lsd_db)),
            ne_snr_db: mean(u.iter().map(|m| m.ne_snr_db)),
        }
    }

    fn values(&self) -> [Option<f64>; 6] {
        [
            self.erle_wb_db,
            self.delta_snr_wb_db,
            self.erle_component_db,
            self.dsnr_component_db,
            self.ne_lsd_db,
            self.ne_snr_db,
        ]
    }
}

impl UtteranceMetrics {
    fn values(&self) -> [Option<f64>; 6] {
        [
            self.erle_wb_db,
            self.delta_snr_wb_db,
            self.erle_component_db,
            self.dsnr_component_db,
            self.ne_lsd_db,
            self.ne_snr_db,
        ]
    }

    fn from_values(id: String, v: [Option<f64>; 6]) -> Self {
        UtteranceMetrics {
            id,
            erle_wb_db: v[0],
            delta_snr_wb_db: v[1],
            erle_component_db: v[2],
            dsnr_component_db: v[3],
            ne_lsd_db: v[4],
            ne_snr_db: v[5],
        }
    }
}

pub const CSV_HEADER: &str =
    "id,erle_wb_db,delta_snr_wb_db,pesq_wb,erle_component_db,dsnr_component_db,ne_lsd_db,ne_snr_db,pesq_ne,rtf";

/// Row label of the aggregate line in the CSV export.
const MEAN_ROW: &str = "mean";

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricsReport {
    pub model: String,
    pub notes: Vec<String>,
    pub utterances: Vec<UtteranceMetrics>,
    pub aggregate: AggregateMetrics,
    pub rtf: Option<f64>,
    /// PESQ is not computed; its columns are always reported as unavailable.
    pub pesq_available: bool,
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| format!("{x}")).unwrap_or_default()
}

fn parse_cell(s: &str) -> Result<Option<f64>> {
    if s.is_empty() {
        return Ok(None);
    }
    s.parse::<f64>().map(Some).map_err(|e| Error::Data(format!("bad metric value `{s}`: {e}")))
}

impl MetricsReport {
    pub fn new(model: impl Into<String>, utterances: Vec<UtteranceMetrics>) -> Self {
        MetricsReport {
            model: model.into(),
            notes: vec![
                "WB: white-box decomposition s~ = S G, d~ = (D - D^) G, n~ = N G; not comparable to black-box separation".into(),
                "ERLE: instantaneous powers smoothed by a one-pole IIR (0.99), capped at 80 dB, averaged per utterance then over utterances".into(),
                "PESQ unavailable; near-end distortion reported as log-spectral distance and SNR against the pass-through reference".into(),
            ],
            aggregate: AggregateMetrics::from_utterances(&utterances),
            utterances,
            rtf: None,
            pesq_available: false,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// One row per utterance plus a `mean` row carrying the RTF.
    pub fn to_csv(&self) -> String {
        let row = |id: &str, v: [Option<f64>; 6], rtf: Option<f64>| {
            format!(
                "{id},{},{},n/a,{},{},{},{},n/a,{}\n",
                cell(v[0]),
                cell(v[1]),
                cell(v[2]),
                cell(v[3]),
                cell(v[4]),
                cell(v[5]),
                cell(rtf)
            )
        };
        let mut out = format!("{CSV_HEADER}\n");
        for u in &self.utterances {
            out.push_str(&row(&u.id, u.values(), None));
        }
        out.push_str(&row(MEAN_ROW, self.aggregate.values(), self.rtf));
        out
    }

    /// Parse [`to_csv`](Self::to_csv) output. Model name and notes are not
    /// part of the CSV and come back empty.
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next() != Some(CSV_HEADER) {
            return Err(Error::Data("metrics CSV header mismatch".into()));
        }
        let mut report = MetricsReport::default();
        for line in lines {
            let cols: Vec<&str> = line.split(',').collect();
            if cols.len() != 10 {
                return Err(Error::Data(format!("metrics CSV row has {} columns", cols.len())));
            }
            let v = [
                parse_cell(cols[1])?,
                parse_cell(cols[2])?,
                parse_cell(cols[4])?,
                parse_cell(cols[5])?,
                parse_cell(cols[6])?,
                parse_cell(cols[7])?,
            ];
            if cols[0] == MEAN_ROW {
                let u = UtteranceMetrics::from_values(String::new(), v);
                report.aggregate = AggregateMetrics {
                    erle_wb_db: u.erle_wb_db,
                    delta_snr_wb_db: u.delta_snr_wb_db,
                    erle_component_db: u.erle_component_db,
                    dsnr_component_db: u.dsnr_component_db,
                    ne_lsd_db: u.ne_lsd_db,
                    ne_snr_db: u.ne_snr_db,
                };
                report.rtf = parse_cell(cols[9])?;
            } else {
                report.utterances.push(UtteranceMetrics::from_values(cols[0].to_string(), v));
            }
        }
        Ok(report)
    }

    /// Aligned text table, column groups in the order full mixture,
    /// echo only, noise only, near-end only, RTF.
    pub fn to_table(&self) -> String {
        let f = |v: Option<f64>| v.map(|x| format!("{x:.2}")).unwrap_or_else(|| "-".into());
        let mut out = String::new();
        for n in &self.notes {
            out.push_str(&format!("# {n}\n"));
        }
        out.push_str(&format!(
            "{:<24} | {:>9} {:>9} {:>6} | {:>9} | {:>9} | {:>6} {:>8} {:>8} | {:>5}\n",
            "", "y(n)", "", "", "d(n)", "n(n)", "s(n)", "", "", ""
        ));
        out.push_str(&format!(
            "{:<24} | {:>9} {:>9} {:>6} | {:>9} | {:>9} | {:>6} {:>8} {:>8} | {:>5}\n",
            "model", "ERLE_WB", "dSNR_WB", "PESQ", "ERLE", "dSNR", "PESQ", "LSD", "SNR", "RTF"
        ));
        let a = &self.aggregate;
        out.push_str(&format!(
            "{:<24} | {:>9} {:>9} {:>6} | {:>9} | {:>9} | {:>6} {:>8} {:>8} | {:>5}\n",
            self.model,
            f(a.erle_wb_db),
            f(a.delta_snr_wb_db),
            "n/a",
            f(a.erle_component_db),
            f(a.dsnr_component_db),
            "n/a",
            f(a.ne_lsd_db),
            f(a.ne_snr_db),
            f(self.rtf)
        ));
        out
    }
}
