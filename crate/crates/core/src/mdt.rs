//! MDT report synthesis, pixelization and the simulation/measurement deltas.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::distr::weighted::WeightedIndex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Geometric, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::scenario::{best_server, RsrpGridSet};
use crate::{Error, Result};

/// Thermal noise per 15 kHz resource element with a 7 dB noise figure.
pub const NOISE_FLOOR_DBM: f64 = -125.0;
/// Subcarriers per PRB.
const SUBCARRIERS_PER_PRB: f64 = 12.0;
/// Reports carry at most this many neighbour measurements.
pub const MAX_NEIGHBOURS: usize = 8;

#[inline]
pub fn dbm_to_mw(dbm: f64) -> f64 {
    10f64.powf(dbm / 10.0)
}

#[inline]
pub fn mw_to_dbm(mw: f64) -> f64 {
    10.0 * mw.log10()
}

/// Linear (mW) mean of dBm values, back in dBm.
pub fn linear_mean_dbm(values: &[f64]) -> f64 {
    let sum: f64 = values.iter().map(|&v| dbm_to_mw(v)).sum();
    mw_to_dbm(sum / values.len() as f64)
}

/// RSRP-based SINR in dB: serving power over summed interferer power plus
/// the noise floor.
pub fn sinr_rsrp_based(pcell_rsrp: f64, interferers: &[f64]) -> f64 {
    let interference: f64 = interferers.iter().map(|&i| dbm_to_mw(i)).sum();
    sinr_from_interference_mw(pcell_rsrp, interference)
}

/// Same as [`sinr_rsrp_based`] with the interference already summed in mW.
#[inline]
pub fn sinr_from_interference_mw(pcell_rsrp: f64, interference_mw: f64) -> f64 {
    pcell_rsrp - mw_to_dbm(interference_mw + dbm_to_mw(NOISE_FLOOR_DBM))
}

/// RSRQ-based SINR (linear) from linear RSRQ and serving-cell load.
pub fn sinr_rsrq_based(rsrq_linear: f64, rho: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&rho) || !(rsrq_linear > 0.0) {
        return Err(Error::Physics(format!(
            "rsrq {rsrq_linear} / load {rho} out of domain"
        )));
    }
    let denominator = 1.0 - rho * rsrq_linear * SUBCARRIERS_PER_PRB;
    if denominator <= 0.0 {
        return Err(Error::Physics(format!(
            "rsrq {rsrq_linear} with load {rho} leaves a non-positive denominator"
        )));
    }
    Ok(SUBCARRIERS_PER_PRB * rsrq_linear / denominator)
}

/// Inverse of [`sinr_rsrq_based`]: the RSRQ a UE would report at this SINR.
pub fn rsrq_from_sinr(sinr_linear: f64, rho: f64) -> f64 {
    sinr_linear / (SUBCARRIERS_PER_PRB * (1.0 + rho * sinr_linear))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MdtReport {
    /// `(y, z)` pixel the UE was located in.
    pub pixel: (usize, usize),
    pub call_id: u64,
    pub pcell_rsrp: f64,
    /// `(local cell, rsrp)` of up to eight neighbours, strongest first.
    pub ncell_rsrp: Vec<(usize, f64)>,
    /// dB.
    pub pcell_rsrq: f64,
    pub serving_cell: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SinrMethod {
    #[default]
    RsrpBased,
    RsrqBased,
}

/// Traffic-intensity multiplier over a disk of pixels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hotspot {
    pub center: (usize, usize),
    /// In pixels; 0 affects only the center pixel.
    #[serde(default)]
    pub radius: f64,
    pub gain: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrafficConfig {
    pub n_calls: usize,
    pub mean_reports_per_call: f64,
    pub hotspots: Vec<Hotspot>,
    pub sigma_meas_db: f64,
    /// Neighbours weaker than this are not reported.
    pub detection_threshold_dbm: f64,
    /// Cluster-wide average active UEs per TTI.
    pub total_act_ues: f64,
    pub load_idle: f64,
    pub load_per_ue: f64,
    pub min_samples: usize,
    pub min_interferers: usize,
    pub sinr_method: SinrMethod,
    pub traffic_seed: u64,
}

impl Default for TrafficConfig {
    fn default() -> Self {
        Self {
            n_calls: 4000,
            mean_reports_per_call: 3.0,
            hotspots: Vec::new(),
            sigma_meas_db: 2.0,
            detection_threshold_dbm: -130.0,
            total_act_ues: 36.0,
            load_idle: 0.2,
            load_per_ue: 0.08,
            min_samples: 5,
            min_interferers: 3,
            sinr_method: SinrMethod::RsrpBased,
            traffic_seed: 11,
        }
    }
}

impl TrafficConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.mean_reports_per_call >= 1.0) {
            return Err(Error::Config("mean_reports_per_call must be >= 1".into()));
        }
        if !(self.sigma_meas_db >= 0.0) || !(self.total_act_ues >= 0.0) {
            return Err(Error::Config(
                "sigma_meas_db and total_act_ues must be >= 0".into(),
            ));
        }
        if !(self.load_idle >= 0.0 && self.load_per_ue >= 0.0) {
            return Err(Error::Config("load parameters must be >= 0".into()));
        }
        if self
            .hotspots
            .iter()
            .any(|h| !(h.gain >= 0.0) || !(h.radius >= 0.0))
        {
            return Err(Error::Config("hotspot gain and radius must be >= 0".into()));
        }
        Ok(())
    }

    /// Relative call intensity per pixel: 1 everywhere, multiplied by each
    /// covering hotspot's gain.
    pub fn intensity(&self, ny: usize, nz: usize) -> Vec<f64> {
        let mut out = vec![1.0; ny * nz];
        for h in &self.hotspots {
            for (p, v) in out.iter_mut().enumerate() {
                let dy = (p / nz) as f64 - h.center.0 as f64;
                let dz = (p % nz) as f64 - h.center.1 as f64;
                if dy.hypot(dz) <= h.radius {
                    *v *= h.gain;
                }
            }
        }
        out
    }
}

/// Cell-level traffic KPIs, indexed by local cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellKpis {
    pub act_ues: Vec<f64>,
    pub load_rho: Vec<f64>,
}

impl CellKpis {
    pub fn total_act_ues(&self) -> f64 {
        self.act_ues.iter().sum()
    }
}

/// Expected KPIs at the baseline tilts: act_UEs split by the share of call
/// intensity each cell serves, load affine in act_UEs and capped at 1.
pub fn synthesize_kpis(grids: &RsrpGridSet, baseline: &[usize], cfg: &TrafficConfig) -> CellKpis {
    let (ny, nz) = grids.shape();
    let intensity = cfg.intensity(ny, nz);
    let mut served = vec![0.0; grids.n_cells()];
    for (p, w) in intensity.iter().enumerate() {
        served[best_server(grids, baseline, p).0] += w;
    }
    let total: f64 = served.iter().sum();
    let act_ues: Vec<f64> = served
        .iter()
        .map(|s| cfg.total_act_ues * s / total)
        .collect();
    let load_rho = act_ues
        .iter()
        .map(|u| (cfg.load_idle + cfg.load_per_ue * u).clamp(0.0, 1.0))
        .collect();
    CellKpis { act_ues, load_rho }
}

/// Draws `n_calls` calls and their periodic reports at the baseline tilts.
pub fn synthesize_reports(
    grids: &RsrpGridSet,
    baseline: &[usize],
    kpis: &CellKpis,
    cfg: &TrafficConfig,
    traffic_seed: u64,
    n_calls: usize,
) -> Result<Vec<MdtReport>> {
    cfg.validate()?;
    if baseline.len() != grids.n_cells() {
        return Err(Error::Shape {
            expected: format!("{} baseline tilts", grids.n_cells()),
            got: baseline.len().to_string(),
        });
    }
    if n_calls == 0 {
        return Ok(Vec::new());
    }
    let (ny, nz) = grids.shape();
    let mut rng = ChaCha8Rng::seed_from_u64(traffic_seed);
    let position = WeightedIndex::new(cfg.intensity(ny, nz))
        .map_err(|e| Error::Config(format!("traffic intensity: {e}")))?;
    let extra_reports = Geometric::new(1.0 / cfg.mean_reports_per_call).expect("validated");
    let noise =
        (cfg.sigma_meas_db > 0.0).then(|| Normal::new(0.0, cfg.sigma_meas_db).expect("validated"));

    let n_cells = grids.n_cells();
    let mut reports = Vec::new();
    let mut measured = vec![0.0; n_cells];
    for call_id in 0..n_calls as u64 {
        let pixel = position.sample(&mut rng);
        let serving = best_server(grids, baseline, pixel).0;
        let n_reports = 1 + extra_reports.sample(&mut rng);
        for _ in 0..n_reports {
            for (cell, m) in measured.iter_mut().enumerate() {
                let jitter = noise.map_or(0.0, |n| n.sample(&mut rng));
                *m = grids.rsrp(cell, baseline[cell], pixel) + jitter;
            }
            let pcell_rsrp = measured[serving];
            let interference: f64 = (0..n_cells)
                .filter(|&c| c != serving)
                .map(|c| dbm_to_mw(measured[c]))
                .sum();
            let sinr = dbm_to_mw(sinr_from_interference_mw(pcell_rsrp, interference));
            let pcell_rsrq = mw_to_dbm(rsrq_from_sinr(sinr, kpis.load_rho[serving]));

            let mut ncell_rsrp: Vec<(usize, f64)> = (0..n_cells)
                .filter(|&c| c != serving && measured[c] >= cfg.detection_threshold_dbm)
                .map(|c| (c, measured[c]))
                .collect();
            ncell_rsrp.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
            ncell_rsrp.truncate(MAX_NEIGHBOURS);

            reports.push(MdtReport {
                pixel: (pixel / nz, pixel % nz),
                call_id,
                pcell_rsrp,
                ncell_rsrp,
                pcell_rsrq,
                serving_cell: serving,
            });
        }
    }
    Ok(reports)
}

/// One statistically relevant pixel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pixel {
    pub y: usize,
    pub z: usize,
    /// dBm, linear mean of the reports' serving RSRP.
    pub rsrp: f64,
    /// dB.
    pub sinr: f64,
    /// dB, linear mean of the reports' RSRQ.
    pub rsrq: f64,
    pub weight: f64,
    /// Distinct call ids seen in the pixel; the Poisson mean for `weight`.
    pub lambda: f64,
    /// Local cell index.
    pub serving_cell: usize,
    pub delta_r: f64,
    pub delta_s: f64,
    /// Fraction of the cluster's act_UEs carried by this pixel.
    pub act_ue_share: f64,
    pub n_reports: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetentionRules {
    pub min_samples: usize,
    pub min_interferers: usize,
    pub sinr_method: SinrMethod,
}

impl Default for RetentionRules {
    fn default() -> Self {
        Self {
            min_samples: 5,
            min_interferers: 3,
            sinr_method: SinrMethod::RsrpBased,
        }
    }
}

impl From<&TrafficConfig> for RetentionRules {
    fn from(cfg: &TrafficConfig) -> Self {
        Self {
            min_samples: cfg.min_samples,
            min_interferers: cfg.min_interferers,
            sinr_method: cfg.sinr_method,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MdtDataset {
    /// `(Y, Z)` of the underlying grid.
    pub shape: (usize, usize),
    /// Retained pixels in row-major order.
    pub pixels: Vec<Pixel>,
    pub kpis: CellKpis,
    pub baseline_tilts: Vec<usize>,
    /// Discarded pixels over pixels that received any report.
    pub discarded_fraction: f64,
}

impl MdtDataset {
    pub fn flat_index(&self, pixel: &Pixel) -> usize {
        pixel.y * self.shape.1 + pixel.z
    }

    /// Writes one pixel per line to `path` and the rest of the dataset to
    /// the `<path>.kpis.json` sidecar.
    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let mut out = BufWriter::new(File::create(path)?);
        for p in &self.pixels {
            serde_json::to_writer(&mut out, p)?;
            out.write_all(b"\n")?;
        }
        out.flush()?;
        let sidecar = Sidecar {
            shape: self.shape,
            kpis: self.kpis.clone(),
            baseline_tilts: self.baseline_tilts.clone(),
            discarded_fraction: self.discarded_fraction,
        };
        std::fs::write(sidecar_path(path), serde_json::to_vec_pretty(&sidecar)?)?;
        Ok(())
    }

    pub fn read_jsonl(path: &Path) -> Result<Self> {
        let sidecar: Sidecar = serde_json::from_slice(&std::fs::read(sidecar_path(path))?)?;
        let mut pixels = Vec::new();
        for line in BufReader::new(File::open(path)?).lines() {
            let line = line?;
            if !line.trim().is_empty() {
                pixels.push(serde_json::from_str(&line)?);
            }
        }
        Ok(Self {
            shape: sidecar.shape,
            pixels,
            kpis: sidecar.kpis,
            baseline_tilts: sidecar.baseline_tilts,
            discarded_fraction: sidecar.discarded_fraction,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct Sidecar {
    shape: (usize, usize),
    kpis: CellKpis,
    baseline_tilts: Vec<usize>,
    discarded_fraction: f64,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".kpis.json");
    PathBuf::from(s)
}

#[derive(Default)]
struct PixelAccumulator {
    reports: usize,
    rsrp_mw: f64,
    rsrq_lin: f64,
    calls: BTreeSet<u64>,
    rich_report: bool,
    /// serving cell -> (report count, summed mW)
    servers: BTreeMap<usize, (usize, f64)>,
    /// neighbour cell -> (report count, summed mW)
    neighbours: BTreeMap<usize, (usize, f64)>,
}

/// Aggregates reports into pixels and keeps the statistically relevant ones.
pub fn pixelize(
    reports: &[MdtReport],
    shape: (usize, usize),
    kpis: &CellKpis,
    baseline_tilts: &[usize],
    rules: &RetentionRules,
) -> Result<MdtDataset> {
    if reports.is_empty() {
        return Err(Error::Dataset("no MDT reports".into()));
    }
    let mut acc: BTreeMap<(usize, usize), PixelAccumulator> = BTreeMap::new();
    for r in reports {
        if r.pixel.0 >= shape.0 || r.pixel.1 >= shape.1 {
            return Err(Error::Dataset(format!(
                "report pixel {:?} outside grid {shape:?}",
                r.pixel
            )));
        }
        let a = acc.entry(r.pixel).or_default();
        let mw = dbm_to_mw(r.pcell_rsrp);
        a.reports += 1;
        a.rsrp_mw += mw;
        a.rsrq_lin += dbm_to_mw(r.pcell_rsrq);
        a.calls.insert(r.call_id);
        a.rich_report |= r.ncell_rsrp.len() >= rules.min_interferers;
        let s = a.servers.entry(r.serving_cell).or_default();
        s.0 += 1;
        s.1 += mw;
        for &(cell, rsrp) in &r.ncell_rsrp {
            let n = a.neighbours.entry(cell).or_default();
            n.0 += 1;
            n.1 += dbm_to_mw(rsrp);
        }
    }

    let seen = acc.len();
    let mut pixels = Vec::new();
    for ((y, z), a) in acc {
        if a.reports < rules.min_samples || !a.rich_report {
            continue;
        }
        // Modal server; ties go to the stronger average RSRP, then lower id.
        let (&serving_cell, _) = a
            .servers
            .iter()
            .max_by(|(ca, (na, sa)), (cb, (nb, sb))| {
                na.cmp(nb)
                    .then((sa / *na as f64).total_cmp(&(sb / *nb as f64)))
                    .then(cb.cmp(ca))
            })
            .expect("pixel has reports");
        let rsrp = mw_to_dbm(a.rsrp_mw / a.reports as f64);
        let rsrq_lin = a.rsrq_lin / a.reports as f64;
        let sinr = match rules.sinr_method {
            SinrMethod::RsrpBased => {
                let interference: f64 = a
                    .neighbours
                    .iter()
                    .filter(|(c, _)| **c != serving_cell)
                    .map(|(_, (n, s))| s / *n as f64)
                    .sum();
                sinr_from_interference_mw(rsrp, interference)
            }
            SinrMethod::RsrqBased => {
                let rho = kpis.load_rho.get(serving_cell).copied().unwrap_or(0.0);
                mw_to_dbm(sinr_rsrq_based(rsrq_lin, rho)?)
            }
        };
        let lambda = a.calls.len() as f64;
        pixels.push(Pixel {
            y,
            z,
            rsrp,
            sinr,
            rsrq: mw_to_dbm(rsrq_lin),
            weight: lambda,
            lambda,
            serving_cell,
            delta_r: 0.0,
            delta_s: 0.0,
            act_ue_share: 0.0,
            n_reports: a.reports,
        });
    }
    if pixels.is_empty() {
        return Err(Error::Dataset(format!(
            "all {seen} pixels discarded (min_samples {}, min_interferers {})",
            rules.min_samples, rules.min_interferers
        )));
    }
    assign_act_ue_shares(&mut pixels);
    Ok(MdtDataset {
        shape,
        discarded_fraction: (seen - pixels.len()) as f64 / seen as f64,
        pixels,
        kpis: kpis.clone(),
        baseline_tilts: baseline_tilts.to_vec(),
    })
}

/// Simulated `(serving cell, rsrp, sinr)` of flat pixel `p` under `tilts`.
pub fn simulated_pixel(grids: &RsrpGridSet, tilts: &[usize], p: usize) -> (usize, f64, f64) {
    let (cell, rsrp) = best_server(grids, tilts, p);
    let interference: f64 = tilts
        .iter()
        .enumerate()
        .filter(|&(c, _)| c != cell)
        .map(|(c, &t)| dbm_to_mw(grids.rsrp(c, t, p)))
        .sum();
    (cell, rsrp, sinr_from_interference_mw(rsrp, interference))
}

/// Sets `delta_r`/`delta_s` to MDT minus simulation at the baseline tilts.
pub fn compute_deltas(mut dataset: MdtDataset, grids: &RsrpGridSet) -> Result<MdtDataset> {
    if dataset.baseline_tilts.len() != grids.n_cells() || dataset.shape != grids.shape() {
        return Err(Error::Shape {
            expected: format!("{} cells on {:?}", grids.n_cells(), grids.shape()),
            got: format!(
                "{} cells on {:?}",
                dataset.baseline_tilts.len(),
                dataset.shape
            ),
        });
    }
    let nz = dataset.shape.1;
    for px in &mut dataset.pixels {
        let (_, sim_rsrp, sim_sinr) =
            simulated_pixel(grids, &dataset.baseline_tilts, px.y * nz + px.z);
        px.delta_r = px.rsrp - sim_rsrp;
        px.delta_s = px.sinr - sim_sinr;
    }
    Ok(dataset)
}

/// Poisson weight per pixel around its call count; an all-zero draw is
/// redrawn. Updates the act_UE shares to match.
pub fn sample_weights(mut dataset: MdtDataset, rng_seed: u64) -> MdtDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    draw_poisson_weights(&mut dataset.pixels, &mut rng);
    assign_act_ue_shares(&mut dataset.pixels);
    dataset
}

pub(crate) fn draw_poisson_weights<R: Rng + ?Sized>(pixels: &mut [Pixel], rng: &mut R) {
    if pixels.iter().all(|p| p.lambda <= 0.0) {
        pixels.iter_mut().for_each(|p| p.weight = 0.0);
        return;
    }
    loop {
        for p in pixels.iter_mut() {
            p.weight = if p.lambda > 0.0 {
                Poisson::new(p.lambda).expect("positive lambda").sample(rng)
            } else {
                0.0
            };
        }
        if pixels.iter().any(|p| p.weight > 0.0) {
            return;
        }
    }
}

/// Act_UE share proportional to weight across the whole cluster.
pub fn assign_act_ue_shares(pixels: &mut [Pixel]) {
    let total: f64 = pixels.iter().map(|p| p.weight).sum();
    for p in pixels.iter_mut() {
        p.act_ue_share = if total > 0.0 { p.weight / total } else { 0.0 };
    }
}

/// Full pipeline: KPIs, reports, pixelization and deltas.
pub fn build_dataset(
    grids: &RsrpGridSet,
    baseline: &[usize],
    cfg: &TrafficConfig,
) -> Result<MdtDataset> {
    let kpis = synthesize_kpis(grids, baseline, cfg);
    let reports = synthesize_reports(grids, baseline, &kpis, cfg, cfg.traffic_seed, cfg.n_calls)?;
    let dataset = pixelize(&reports, grids.shape(), &kpis, baseline, &cfg.into())?;
    compute_deltas(dataset, grids)
}
