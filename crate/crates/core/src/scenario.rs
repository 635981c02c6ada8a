//! Synthetic deployment and the per-(cell, tilt) simulated RSRP grids.
//!
//! The grids stand in for an electromagnetic planning tool: a log-distance
//! path loss, a parabolic sector antenna pattern and frozen log-normal
//! shadowing produce one RSRP map (dBm per resource element) for every
//! modeled cell at every selectable downtilt.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Deployment cell id: `site * sectors_per_site + sector`.
pub type CellId = usize;

/// Log-distance path loss `PL(d) = pl0 + 10 n log10(d / d0)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PropagationParams {
    pub pl0_db: f64,
    pub d0_m: f64,
    pub exponent: f64,
    /// Distances below this are clamped (and counted).
    pub min_distance_m: f64,
}

impl Default for PropagationParams {
    fn default() -> Self {
        Self {
            pl0_db: 128.1,
            d0_m: 1000.0,
            exponent: 3.76,
            min_distance_m: 35.0,
        }
    }
}

impl PropagationParams {
    pub fn path_loss_db(&self, distance_m: f64) -> f64 {
        self.pl0_db + 10.0 * self.exponent * (distance_m / self.d0_m).log10()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AntennaParams {
    /// Front-to-back cap of the combined pattern (0 disables the pattern).
    pub a_max_db: f64,
    pub vertical_beamwidth_deg: f64,
    pub horizontal_beamwidth_deg: f64,
    pub gain_dbi: f64,
    pub height_m: f64,
    pub ue_height_m: f64,
    /// Downtilt applied before any tilt-set offset.
    pub base_downtilt_deg: f64,
}

impl Default for AntennaParams {
    fn default() -> Self {
        Self {
            a_max_db: 20.0,
            vertical_beamwidth_deg: 10.0,
            horizontal_beamwidth_deg: 65.0,
            gain_dbi: 15.0,
            height_m: 30.0,
            ue_height_m: 1.5,
            base_downtilt_deg: 2.0,
        }
    }
}

impl AntennaParams {
    /// Combined attenuation (dB, <= 0) at elevation `theta` below the horizon
    /// and horizontal offset `phi` from boresight, for the given downtilt.
    pub fn attenuation_db(&self, theta_deg: f64, phi_deg: f64, downtilt_deg: f64) -> f64 {
        let cap = self.a_max_db;
        let vertical =
            -(12.0 * ((theta_deg - downtilt_deg) / self.vertical_beamwidth_deg).powi(2)).min(cap);
        let horizontal = -(12.0 * (phi_deg / self.horizontal_beamwidth_deg).powi(2)).min(cap);
        -(-(vertical + horizontal)).min(cap)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    /// Site positions `(x, y)` in meters.
    pub sites: Vec<[f64; 2]>,
    #[serde(default = "default_sectors")]
    pub sectors_per_site: usize,
    /// Compass azimuth (0 = +y, clockwise) of each sector, shared by all sites.
    pub azimuths: Vec<f64>,
    pub target_cells: Vec<CellId>,
    #[serde(default)]
    pub boundary_cells: Vec<CellId>,
    /// Tilt offsets in degrees; negative values add downtilt.
    #[serde(default = "default_tilt_set")]
    pub tilt_set: Vec<f64>,
    /// `[Y, Z]` pixel counts (rows, columns).
    pub grid: [usize; 2],
    #[serde(default = "default_pixel_size")]
    pub pixel_size: f64,
    /// Transmit power per resource element, dBm.
    #[serde(default = "default_tx_power")]
    pub tx_power: f64,
    /// Carrier frequency in MHz (descriptive; the path loss constants are
    /// assumed to already match it).
    #[serde(default = "default_carrier")]
    pub carrier: f64,
    #[serde(default = "default_shadowing")]
    pub shadowing_sigma: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub propagation: PropagationParams,
    #[serde(default)]
    pub antenna: AntennaParams,
}

fn default_sectors() -> usize {
    3
}
fn default_tilt_set() -> Vec<f64> {
    vec![0.0, -2.0, -4.0, -6.0, -8.0]
}
fn default_pixel_size() -> f64 {
    50.0
}
fn default_tx_power() -> f64 {
    // 46 dBm spread over 1200 subcarriers.
    46.0 - 10.0 * 1200f64.log10()
}
fn default_carrier() -> f64 {
    1800.0
}
fn default_shadowing() -> f64 {
    6.0
}

impl ScenarioConfig {
    /// Two tri-sector sites, four target cells, two boundary cells, three
    /// tilts on a 24 x 24 grid of 50 m pixels.
    pub fn desk() -> Self {
        Self {
            sites: vec![[350.0, 600.0], [850.0, 600.0]],
            sectors_per_site: 3,
            azimuths: vec![60.0, 180.0, 300.0],
            target_cells: vec![0, 1, 3, 5],
            boundary_cells: vec![2, 4],
            tilt_set: vec![0.0, -4.0, -8.0],
            grid: [24, 24],
            pixel_size: 50.0,
            tx_power: default_tx_power(),
            carrier: default_carrier(),
            shadowing_sigma: default_shadowing(),
            seed: 7,
            propagation: PropagationParams::default(),
            antenna: AntennaParams::default(),
        }
    }

    pub fn n_targets(&self) -> usize {
        self.target_cells.len()
    }

    pub fn n_tilts(&self) -> usize {
        self.tilt_set.len()
    }

    /// Modeled cells: targets first (in order), then boundary cells.
    pub fn modeled_cells(&self) -> Vec<CellId> {
        self.target_cells
            .iter()
            .chain(&self.boundary_cells)
            .copied()
            .collect()
    }

    pub fn site_of(&self, cell: CellId) -> usize {
        cell / self.sectors_per_site
    }

    pub fn azimuth_of(&self, cell: CellId) -> f64 {
        self.azimuths[cell % self.sectors_per_site]
    }

    pub fn downtilt_deg(&self, tilt_index: usize) -> f64 {
        self.antenna.base_downtilt_deg - self.tilt_set[tilt_index]
    }

    /// Center of pixel `(y, z)` as `(x, y)` meters.
    pub fn pixel_center(&self, y: usize, z: usize) -> (f64, f64) {
        (
            (z as f64 + 0.5) * self.pixel_size,
            (y as f64 + 0.5) * self.pixel_size,
        )
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.target_cells.is_empty() {
            return bad("at least one target cell is required".into());
        }
        if self.tilt_set.len() < 2 {
            return bad(format!(
                "tilt_set needs >= 2 values, got {}",
                self.tilt_set.len()
            ));
        }
        for (i, a) in self.tilt_set.iter().enumerate() {
            if !a.is_finite() {
                return bad(format!("tilt {a} is not finite"));
            }
            if self.tilt_set[..i].contains(a) {
                return bad(format!("duplicate tilt value {a}"));
            }
        }
        if self.sectors_per_site == 0 || self.azimuths.len() != self.sectors_per_site {
            return bad(format!(
                "{} azimuths given for {} sectors per site",
                self.azimuths.len(),
                self.sectors_per_site
            ));
        }
        if self.sites.is_empty() {
            return bad("no sites".into());
        }
        let n_cells = self.sites.len() * self.sectors_per_site;
        let cells = self.modeled_cells();
        for (i, c) in cells.iter().enumerate() {
            if *c >= n_cells {
                return bad(format!(
                    "cell {c} does not exist ({n_cells} cells deployed)"
                ));
            }
            if cells[..i].contains(c) {
                return bad(format!(
                    "cell {c} listed twice (targets and boundary must be disjoint)"
                ));
            }
        }
        if self.grid[0] == 0 || self.grid[1] == 0 {
            return bad("grid must have at least one pixel".into());
        }
        if !(self.pixel_size > 0.0) {
            return bad("pixel_size must be positive".into());
        }
        if !(self.shadowing_sigma >= 0.0) {
            return bad("shadowing_sigma must be >= 0".into());
        }
        if !(self.propagation.min_distance_m > 0.0) || !(self.propagation.d0_m > 0.0) {
            return bad("propagation distances must be positive".into());
        }
        let ant = &self.antenna;
        if !(ant.vertical_beamwidth_deg > 0.0
            && ant.horizontal_beamwidth_deg > 0.0
            && ant.a_max_db >= 0.0)
        {
            return bad("antenna beamwidths must be positive and a_max_db >= 0".into());
        }
        Ok(())
    }

    /// Loads a TOML (`.toml`) or JSON (anything else) scenario file.
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cfg: Self = if path.extension().is_some_and(|e| e == "toml") {
            toml::from_str(&text).map_err(|e| Error::Config(e.to_string()))?
        } else {
            serde_json::from_str(&text)?
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Simulated RSRP for every (modeled cell, tilt) pair.
///
/// Cells are addressed by their local index into [`RsrpGridSet::cells`]
/// (targets first). Each grid is `Y x Z`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct RsrpGridSet {
    cells: Vec<CellId>,
    n_targets: usize,
    n_tilts: usize,
    ny: usize,
    nz: usize,
    data: Vec<f64>,
    clamped_pixels: usize,
}

impl RsrpGridSet {
    pub fn cells(&self) -> &[CellId] {
        &self.cells
    }
    pub fn n_cells(&self) -> usize {
        self.cells.len()
    }
    pub fn n_targets(&self) -> usize {
        self.n_targets
    }
    pub fn n_tilts(&self) -> usize {
        self.n_tilts
    }
    pub fn shape(&self) -> (usize, usize) {
        (self.ny, self.nz)
    }
    pub fn n_pixels(&self) -> usize {
        self.ny * self.nz
    }
    /// Pixel-cell pairs whose distance had to be clamped.
    pub fn clamped_pixels(&self) -> usize {
        self.clamped_pixels
    }

    /// Grid of local cell `cell` at tilt index `tilt`.
    pub fn grid(&self, cell: usize, tilt: usize) -> &[f64] {
        let n = self.n_pixels();
        let start = (cell * self.n_tilts + tilt) * n;
        &self.data[start..start + n]
    }

    #[inline]
    pub fn rsrp(&self, cell: usize, tilt: usize, pixel: usize) -> f64 {
        self.data[(cell * self.n_tilts + tilt) * self.n_pixels() + pixel]
    }

    pub fn values(&self) -> &[f64] {
        &self.data
    }

    /// Writes the flat binary cache: magic, version, C, P, Y, Z as
    /// little-endian u32, then all grids as little-endian f64 in
    /// `[cell][tilt][y][z]` order. `C` counts every modeled cell.
    pub fn write_to(&self, path: &Path) -> Result<()> {
        let mut out = BufWriter::new(File::create(path)?);
        out.write_all(GRID_MAGIC)?;
        for v in [
            GRID_VERSION,
            self.n_cells() as u32,
            self.n_tilts as u32,
            self.ny as u32,
            self.nz as u32,
        ] {
            out.write_all(&v.to_le_bytes())?;
        }
        for v in &self.data {
            out.write_all(&v.to_le_bytes())?;
        }
        out.flush()?;
        Ok(())
    }

    /// Reloads a cache written by [`RsrpGridSet::write_to`]; the scenario
    /// supplies the cell identities and must match the stored dimensions.
    pub fn read_from(path: &Path, cfg: &ScenarioConfig) -> Result<Self> {
        let mut input = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 8];
        input.read_exact(&mut magic)?;
        if &magic != GRID_MAGIC {
            return Err(Error::Format("not an RSRP grid file".into()));
        }
        let mut word = [0u8; 4];
        let mut header = [0u32; 5];
        for h in header.iter_mut() {
            input.read_exact(&mut word)?;
            *h = u32::from_le_bytes(word);
        }
        let [version, c, p, y, z] = header;
        if version != GRID_VERSION {
            return Err(Error::Format(format!(
                "unsupported grid file version {version}"
            )));
        }
        let cells = cfg.modeled_cells();
        let expected = [cells.len(), cfg.n_tilts(), cfg.grid[0], cfg.grid[1]];
        let got = [c as usize, p as usize, y as usize, z as usize];
        if expected != got {
            return Err(Error::Shape {
                expected: format!("{expected:?}"),
                got: format!("{got:?}"),
            });
        }
        let n = got.iter().product::<usize>();
        let mut data = Vec::with_capacity(n);
        let mut buf = [0u8; 8];
        for _ in 0..n {
            input.read_exact(&mut buf)?;
            data.push(f64::from_le_bytes(buf));
        }
        if input.read(&mut buf)? != 0 {
            return Err(Error::Format("trailing bytes after grid data".into()));
        }
        Ok(Self {
            n_targets: cfg.n_targets(),
            cells,
            n_tilts: got[1],
            ny: got[2],
            nz: got[3],
            data,
            clamped_pixels: 0,
        })
    }
}

const GRID_MAGIC: &[u8; 8] = b"TLRSRP\0\0";
const GRID_VERSION: u32 = 1;

/// Computes every (cell, tilt) RSRP grid for the scenario.
pub fn generate_grids(cfg: &ScenarioConfig) -> Result<RsrpGridSet> {
    cfg.validate()?;
    let [ny, nz] = cfg.grid;
    let n_pixels = ny * nz;
    let cells = cfg.modeled_cells();
    let n_tilts = cfg.n_tilts();

    // Shadowing is frozen per (site, pixel) so every tilt of a cell, and every
    // sector of a site, sees the same realization.
    let shadowing = shadowing_field(cfg.seed, cfg.sites.len(), n_pixels, cfg.shadowing_sigma);

    let ant = &cfg.antenna;
    let prop = &cfg.propagation;
    let dh = ant.height_m - ant.ue_height_m;

    let mut data = vec![0.0; cells.len() * n_tilts * n_pixels];
    let clamped: usize = data
        .par_chunks_mut(n_pixels)
        .enumerate()
        .map(|(slot, grid)| {
            let (local, tilt) = (slot / n_tilts, slot % n_tilts);
            let cell = cells[local];
            let site = cfg.site_of(cell);
            let [sx, sy] = cfg.sites[site];
            let azimuth = cfg.azimuth_of(cell);
            let downtilt = cfg.downtilt_deg(tilt);
            let mut clamped = 0;
            for (p, out) in grid.iter_mut().enumerate() {
                let (px, py) = cfg.pixel_center(p / nz, p % nz);
                let (dx, dy) = (px - sx, py - sy);
                let mut d = dx.hypot(dy);
                if d < prop.min_distance_m {
                    d = prop.min_distance_m;
                    clamped += 1;
                }
                let theta = dh.atan2(d).to_degrees();
                let bearing = dx.atan2(dy).to_degrees();
                let phi = wrap_degrees(bearing - azimuth);
                let rsrp = cfg.tx_power + ant.gain_dbi - prop.path_loss_db(d)
                    + ant.attenuation_db(theta, phi, downtilt)
                    + shadowing[site * n_pixels + p];
                *out = rsrp.min(cfg.tx_power);
            }
            clamped
        })
        .sum();

    Ok(RsrpGridSet {
        cells,
        n_targets: cfg.n_targets(),
        n_tilts,
        ny,
        nz,
        data,
        // One count per (cell, pixel), not per tilt.
        clamped_pixels: clamped / n_tilts,
    })
}

fn shadowing_field(seed: u64, n_sites: usize, n_pixels: usize, sigma: f64) -> Vec<f64> {
    if sigma == 0.0 {
        return vec![0.0; n_sites * n_pixels];
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, sigma).expect("sigma validated");
    (0..n_sites * n_pixels)
        .map(|_| normal.sample(&mut rng))
        .collect()
}

fn wrap_degrees(a: f64) -> f64 {
    let w = (a + 180.0).rem_euclid(360.0) - 180.0;
    if w == -180.0 {
        180.0
    } else {
        w
    }
}

/// Per-pixel serving cell (local index) under `tilts`, by maximum RSRP with
/// ties going to the lowest index.
pub fn serving_cell_map(grids: &RsrpGridSet, tilts: &[usize]) -> Result<Vec<usize>> {
    if tilts.len() != grids.n_cells() {
        return Err(Error::Shape {
            expected: format!("{} tilt indices", grids.n_cells()),
            got: format!("{}", tilts.len()),
        });
    }
    if let Some(t) = tilts.iter().find(|&&t| t >= grids.n_tilts()) {
        return Err(Error::Config(format!("tilt index {t} out of range")));
    }
    Ok((0..grids.n_pixels())
        .map(|p| best_server(grids, tilts, p).0)
        .collect())
}

/// `(cell, rsrp)` of the strongest cell at `pixel`; lowest index wins ties.
#[inline]
pub fn best_server(grids: &RsrpGridSet, tilts: &[usize], pixel: usize) -> (usize, f64) {
    let mut best = (0, grids.rsrp(0, tilts[0], pixel));
    for (cell, &t) in tilts.iter().enumerate().skip(1) {
        let v = grids.rsrp(cell, t, pixel);
        if v > best.1 {
            best = (cell, v);
        }
    }
    best
}
