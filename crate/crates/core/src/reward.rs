//! SINR to spectral efficiency, scheduler throughput, coverage cost and the
//! two step-reward variants.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::mdt::Pixel;
use crate::{Error, Result};

/// PRB bandwidth in Hz.
pub const PRB_BANDWIDTH_HZ: f64 = 180_000.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CqiRow {
    pub cqi: u8,
    /// Lowest SINR (dB) at which this CQI is usable.
    pub sinr_threshold: f64,
    pub modulation: String,
    pub code_rate: f64,
    /// bits/s/Hz.
    pub spectral_efficiency: f64,
}

/// CQI 1..15 lookup; anything below the first threshold is CQI 0 (outage).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CqiTable {
    rows: Vec<CqiRow>,
}

const DEFAULT_CQI: [(f64, &str, f64, f64); 15] = [
    (-6.4, "QPSK", 0.076, 0.1524),
    (-4.8, "QPSK", 0.19, 0.377),
    (-3.4, "QPSK", 0.44, 0.877),
    (-2.2, "16-QAM", 0.37, 1.4764),
    (-1.2, "16-QAM", 0.48, 1.914),
    (-0.1, "16-QAM", 0.60, 2.4064),
    (0.9, "64-QAM", 0.46, 2.7306),
    (2.1, "64-QAM", 0.55, 3.3222),
    (3.3, "64-QAM", 0.65, 3.9024),
    (4.8, "64-QAM", 0.75, 4.5234),
    (6.5, "64-QAM", 0.85, 5.115),
    (8.5, "256-QAM", 0.69, 5.5544),
    (10.9, "256-QAM", 0.78, 6.2264),
    (13.8, "256-QAM", 0.86, 6.9072),
    (17.1, "256-QAM", 0.93, 7.4064),
];

impl Default for CqiTable {
    fn default() -> Self {
        let rows = DEFAULT_CQI
            .iter()
            .enumerate()
            .map(
                |(i, &(sinr_threshold, modulation, code_rate, spectral_efficiency))| CqiRow {
                    cqi: i as u8 + 1,
                    sinr_threshold,
                    modulation: modulation.to_string(),
                    code_rate,
                    spectral_efficiency,
                },
            )
            .collect();
        Self { rows }
    }
}

impl CqiTable {
    pub fn new(rows: Vec<CqiRow>) -> Result<Self> {
        if rows.len() != 15 {
            return Err(Error::Config(format!(
                "CQI table needs 15 rows, got {}",
                rows.len()
            )));
        }
        for (i, r) in rows.iter().enumerate() {
            if r.cqi as usize != i + 1 {
                return Err(Error::Config(format!("row {i} has cqi {}", r.cqi)));
            }
            if i > 0 {
                let prev = &rows[i - 1];
                if !(r.sinr_threshold > prev.sinr_threshold)
                    || !(r.spectral_efficiency > prev.spectral_efficiency)
                {
                    return Err(Error::Config(format!(
                        "CQI {} does not increase over CQI {}",
                        r.cqi, prev.cqi
                    )));
                }
            }
        }
        Ok(Self { rows })
    }

    pub fn rows(&self) -> &[CqiRow] {
        &self.rows
    }

    /// Reads a CSV laid out like the printed table: header
    /// `CQI,SINR,Modulation,Code rate,Spectral Efficiency`, an optional CQI 0
    /// row of dashes, SINR either bare or suffixed with `dB`.
    pub fn from_csv(path: &Path) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_path(path)
            .map_err(|e| Error::Config(e.to_string()))?;
        let mut rows = Vec::new();
        for rec in reader.records() {
            let rec = rec.map_err(|e| Error::Config(e.to_string()))?;
            if rec.len() != 5 {
                return Err(Error::Config(format!("CQI row has {} columns", rec.len())));
            }
            let cqi: u8 = parse_field(&rec[0])?;
            if cqi == 0 {
                continue;
            }
            rows.push(CqiRow {
                cqi,
                sinr_threshold: parse_field(rec[1].trim_end_matches("dB").trim())?,
                modulation: rec[2].to_string(),
                code_rate: parse_field(&rec[3])?,
                spectral_efficiency: parse_field(&rec[4])?,
            });
        }
        Self::new(rows)
    }

    /// Highest CQI whose threshold is at or below `sinr`, with its
    /// efficiency; `(0, 0.0)` in outage.
    pub fn lookup(&self, sinr: f64) -> (u8, f64) {
        let n = self.rows.partition_point(|r| r.sinr_threshold <= sinr);
        match n {
            0 => (0, 0.0),
            n => (self.rows[n - 1].cqi, self.rows[n - 1].spectral_efficiency),
        }
    }

    pub fn outage_threshold(&self) -> f64 {
        self.rows[0].sinr_threshold
    }
}

fn parse_field<T: std::str::FromStr>(s: &str) -> Result<T> {
    s.trim()
        .parse()
        .map_err(|_| Error::Config(format!("cannot parse CQI table field {s:?}")))
}

pub fn cqi_from_sinr(sinr: f64, table: &CqiTable) -> (u8, f64) {
    table.lookup(sinr)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchedulerKind {
    #[default]
    RoundRobin,
    Fair,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SchedulerConfig {
    pub kind: SchedulerKind,
    pub n_prb_tot: f64,
    /// PRBs withheld as safety margin.
    pub thr: f64,
    /// PRB multiplier per channel class, best class first.
    pub fair_betas: Vec<f64>,
}

impl Default for SchedulerConfig {
    fn default() -> Self {
        Self {
            kind: SchedulerKind::RoundRobin,
            n_prb_tot: 100.0,
            thr: 10.0,
            fair_betas: vec![1.0, 2.0, 3.0],
        }
    }
}

impl SchedulerConfig {
    pub fn usable_prbs(&self) -> f64 {
        self.n_prb_tot - self.thr
    }

    pub fn n_classes(&self) -> usize {
        match self.kind {
            SchedulerKind::RoundRobin => 1,
            SchedulerKind::Fair => self.fair_betas.len(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.thr >= 0.0 && self.thr < self.n_prb_tot) {
            return Err(Error::Config(format!(
                "thr {} must be in [0, {})",
                self.thr, self.n_prb_tot
            )));
        }
        if self.kind == SchedulerKind::Fair {
            if self.fair_betas.is_empty() || self.fair_betas[0] <= 0.0 {
                return Err(Error::Config("fair scheduler needs positive betas".into()));
            }
            if self.fair_betas.windows(2).any(|w| !(w[1] > w[0])) {
                return Err(Error::Config(
                    "fair betas must be strictly increasing".into(),
                ));
            }
        }
        Ok(())
    }

    /// Channel class of a CQI: CQI 1..15 split into equal bands, best band
    /// first; outage joins the worst class.
    pub fn class_of(&self, cqi: u8) -> usize {
        let m = self.n_classes();
        if cqi == 0 {
            return m - 1;
        }
        let band_from_worst = (cqi as usize - 1) * m / 15;
        m - 1 - band_from_worst
    }
}

/// PRBs granted to one UE of each class. Round robin returns one value.
/// With no UEs the whole usable band goes to a single virtual UE.
pub fn prbs_per_ue(cfg: &SchedulerConfig, class_counts: &[f64]) -> Vec<f64> {
    let usable = cfg.usable_prbs();
    let total: f64 = class_counts.iter().sum();
    match cfg.kind {
        SchedulerKind::RoundRobin => {
            vec![if total > 0.0 { usable / total } else { usable }]
        }
        SchedulerKind::Fair => {
            let weighted: f64 = cfg
                .fair_betas
                .iter()
                .zip(class_counts)
                .map(|(b, n)| b * n)
                .sum();
            if weighted > 0.0 {
                cfg.fair_betas
                    .iter()
                    .map(|b| b * usable / weighted)
                    .collect()
            } else {
                vec![usable; cfg.fair_betas.len()]
            }
        }
    }
}

/// Average cell user throughput in bits/s.
pub fn cell_user_throughput(eta: f64, n_prb: f64) -> f64 {
    eta * n_prb * PRB_BANDWIDTH_HZ
}

/// Weighted mean spectral efficiency over `(weight, efficiency)` pairs;
/// `None` when the total weight is zero.
pub fn cell_spectral_efficiency<I>(pixels: I) -> Option<f64>
where
    I: IntoIterator<Item = (f64, f64)>,
{
    let (w, we) = pixels
        .into_iter()
        .fold((0.0, 0.0), |(w, we), (wi, ei)| (w + wi, we + wi * ei));
    (w > 0.0).then(|| we / w)
}

/// UE-weighted mean of per-cell throughputs.
pub fn cluster_throughput(per_cell: &[(f64, f64)]) -> Result<f64> {
    let n: f64 = per_cell.iter().map(|(n, _)| n).sum();
    if !(n > 0.0) {
        return Err(Error::NoTraffic("no active UEs in the cluster".into()));
    }
    Ok(per_cell.iter().map(|(ni, u)| ni * u).sum::<f64>() / n)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CoverageCostParams {
    pub full_band_low: f64,
    pub penalty_band_low: f64,
    pub base: f64,
    pub offset: f64,
    pub scale: f64,
    pub out_penalty: f64,
    /// Noise-limited below this RSRP (dBm).
    pub nl_threshold: f64,
    /// Interference-limited below this SINR (dB).
    pub il_threshold: f64,
}

impl Default for CoverageCostParams {
    fn default() -> Self {
        Self {
            full_band_low: 99.5,
            penalty_band_low: 98.0,
            base: 4.6,
            offset: 101.1,
            scale: 11.2,
            out_penalty: 10.0,
            nl_threshold: -125.0,
            il_threshold: -6.4,
        }
    }
}

impl CoverageCostParams {
    pub fn in_coverage(&self, rsrp: f64, sinr: f64) -> bool {
        !(rsrp < self.nl_threshold || sinr < self.il_threshold)
    }
}

/// Weighted percentage of pixels that are neither noise- nor
/// interference-limited.
pub fn coverage_fraction(pixels: &[Pixel], params: &CoverageCostParams) -> Result<f64> {
    let (mut covered, mut total) = (0.0, 0.0);
    for p in pixels {
        total += p.weight;
        if params.in_coverage(p.rsrp, p.sinr) {
            covered += p.weight;
        }
    }
    if !(total > 0.0) {
        return Err(Error::NoTraffic("total pixel weight is zero".into()));
    }
    Ok(covered / total * 100.0)
}

/// Coverage cost. The middle branch is evaluated exactly as printed, so the
/// function jumps from about 0.937 down to 0 at the top of the penalty band.
pub fn coverage_cost(a_cov: f64, params: &CoverageCostParams) -> f64 {
    if a_cov >= params.full_band_low && a_cov <= 100.0 {
        0.0
    } else if a_cov >= params.penalty_band_low && a_cov < params.full_band_low {
        let g = params.base.powf(a_cov - params.offset);
        (1.0 - g) / (params.scale * g)
    } else {
        params.out_penalty
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardMode {
    /// Coverage-constrained throughput in Mbps.
    #[default]
    Case1,
    /// Weighted mean of RSRP + SINR.
    Case2,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub reward: f64,
    pub throughput_mbps: f64,
    pub coverage_pct: f64,
    pub coverage_cost: f64,
    /// Cells that carry UEs but no pixel weight (left out of the average).
    pub excluded_cells: Vec<usize>,
}

/// Everything [`reward_case1`] needs besides the pixels.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RewardModel {
    pub scheduler: SchedulerConfig,
    pub cqi: CqiTable,
    pub coverage: CoverageCostParams,
}

/// Throughput minus coverage cost. `total_act_ues` is spread over pixels by
/// their `act_ue_share`; each pixel counts toward its `serving_cell`.
pub fn reward_case1(
    pixels: &[Pixel],
    n_cells: usize,
    total_act_ues: f64,
    model: &RewardModel,
) -> Result<RewardBreakdown> {
    let sched = &model.scheduler;
    let m = sched.n_classes();
    // Per cell and class: (weight, weight * efficiency, UEs).
    let mut acc = vec![[0.0f64; 3]; n_cells * m];
    for p in pixels {
        if p.serving_cell >= n_cells {
            return Err(Error::Shape {
                expected: format!("serving cell < {n_cells}"),
                got: p.serving_cell.to_string(),
            });
        }
        let (cqi, eff) = model.cqi.lookup(p.sinr);
        let slot = &mut acc[p.serving_cell * m + sched.class_of(cqi)];
        slot[0] += p.weight;
        slot[1] += p.weight * eff;
        slot[2] += p.act_ue_share * total_act_ues;
    }

    let mut per_cell = Vec::with_capacity(n_cells);
    let mut excluded_cells = Vec::new();
    for cell in 0..n_cells {
        let classes = &acc[cell * m..(cell + 1) * m];
        let n_ue: f64 = classes.iter().map(|c| c[2]).sum();
        let weight: f64 = classes.iter().map(|c| c[0]).sum();
        if !(weight > 0.0) {
            if n_ue > 0.0 {
                excluded_cells.push(cell);
            }
            continue;
        }
        let counts: Vec<f64> = classes.iter().map(|c| c[2]).collect();
        let prbs = prbs_per_ue(sched, &counts);
        let u = match sched.kind {
            SchedulerKind::RoundRobin => {
                let eta = classes.iter().map(|c| c[1]).sum::<f64>() / weight;
                cell_user_throughput(eta, prbs[0])
            }
            SchedulerKind::Fair => {
                if n_ue > 0.0 {
                    classes
                        .iter()
                        .zip(&prbs)
                        .filter(|(c, _)| c[0] > 0.0)
                        .map(|(c, &prb)| c[2] * cell_user_throughput(c[1] / c[0], prb))
                        .sum::<f64>()
                        / n_ue
                } else {
                    0.0
                }
            }
        };
        per_cell.push((n_ue, u));
    }
    if !excluded_cells.is_empty() {
        tracing::warn!(
            ?excluded_cells,
            "cells with UEs but zero pixel weight left out of throughput"
        );
    }
    let throughput_mbps = cluster_throughput(&per_cell)? / 1e6;
    let coverage_pct = coverage_fraction(pixels, &model.coverage)?;
    let coverage_cost = coverage_cost(coverage_pct, &model.coverage);
    Ok(RewardBreakdown {
        reward: throughput_mbps - coverage_cost,
        throughput_mbps,
        coverage_pct,
        coverage_cost,
        excluded_cells,
    })
}

/// Weighted mean of `rsrp + sinr` (dBm + dB).
pub fn reward_case2(pixels: &[Pixel]) -> Result<f64> {
    let (mut w, mut s) = (0.0, 0.0);
    for p in pixels {
        w += p.weight;
        s += p.weight * (p.rsrp + p.sinr);
    }
    if !(w > 0.0) {
        return Err(Error::NoTraffic("total pixel weight is zero".into()));
    }
    Ok(s / w)
}
