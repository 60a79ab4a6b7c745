//! Configuration-driven sweeps: feedback/downlink tradeoff curves, the balanced
//! allocation curve and SNR sweeps, written as resumable CSV.

use crate::allocator::{allocate_finite_for, allocate_limited, antennas_for_budget, FeedbackAllocation};
use crate::bounds::{prop1_slope, th1_multiplexing};
use crate::error::{Error, Result};
use crate::lattice::{run_downlink, LatticeConfig, Scheme, SimResult};
use crate::precoder::{block_dp_gains, interference_terms, sinr_rate, uplink_rate, RateEstimate};
use crate::quantizer::QuantizerKind;
use crate::topology::{
    corner_mobile, cyclic_gain_rows_strided, density_bound, descending_order, gain_map,
    normalize_to_strongest, residual_interference_coeff, GainMatrix, NetworkTopology,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

pub const CSV_VERSION: u32 = 1;
pub const CSV_COLUMNS: [&str; 8] = [
    "scheme",
    "L_fed",
    "feedback_se_bps_hz",
    "downlink_se_bps_hz",
    "stderr",
    "trials",
    "seed",
    "snr_db",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TopologyParams {
    pub rings: usize,
    pub trim_corners: bool,
    pub antennas_per_site: usize,
    pub alpha: f64,
    /// Horizon of the lattice sum for the unsimulated interference.
    pub horizon_rings: usize,
    /// Overrides the lattice sum when set.
    pub residual: Option<f64>,
}

impl Default for TopologyParams {
    fn default() -> Self {
        Self {
            rings: 4,
            trim_corners: true,
            antennas_per_site: 1,
            alpha: 4.0,
            horizon_rings: 400,
            residual: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimParams {
    pub snr_db: f64,
    pub block_len: f64,
    pub quantizer: QuantizerKind,
    pub symbols_per_block: usize,
    pub bins: usize,
    pub batches: usize,
}

impl Default for SimParams {
    fn default() -> Self {
        Self {
            snr_db: 30.0,
            block_len: 180.0,
            quantizer: QuantizerKind::DitheredScalar,
            symbols_per_block: 32,
            bins: 32,
            batches: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TradeoffParams {
    /// Maximum number of fed antennas per curve.
    pub cooperation: Vec<usize>,
    /// Quantization depth `−10·log₁₀ ξ²` of each sweep point.
    pub depth_db: Vec<f64>,
}

impl Default for TradeoffParams {
    fn default() -> Self {
        Self {
            cooperation: vec![3, 6, 12, 21],
            depth_db: (0..=18).map(|k| 4.0 + 2.0 * k as f64).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BalanceParams {
    /// Nominal feedback rates, bits per channel use.
    pub feedback_grid: Vec<f64>,
    pub tangents: Vec<usize>,
    pub zf_reference: bool,
}

impl Default for BalanceParams {
    fn default() -> Self {
        Self {
            feedback_grid: (1..=20).map(|k| 0.05 * k as f64).collect(),
            tangents: vec![6, 12, 21],
            zf_reference: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SnrParams {
    pub snr_db: Vec<f64>,
    pub fixed_rates: Vec<f64>,
    pub connectivity: usize,
    pub uplink_fraction: f64,
    pub kappa_ul: f64,
    /// Lowest SNR used for the asymptotic slope fit.
    pub slope_from_db: f64,
}

impl Default for SnrParams {
    fn default() -> Self {
        Self {
            snr_db: (2..=14).map(|k| 5.0 * k as f64).collect(),
            fixed_rates: vec![0.05, 0.1, 0.2, 0.3],
            connectivity: 6,
            uplink_fraction: 0.03,
            kappa_ul: 0.1,
            slope_from_db: 50.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Monte Carlo blocks per sweep point.
    pub trials: usize,
    pub seed: u64,
    pub topology: TopologyParams,
    pub sim: SimParams,
    pub tradeoff: TradeoffParams,
    pub balance: BalanceParams,
    pub snr: SnrParams,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            trials: 1000,
            seed: 1,
            topology: TopologyParams::default(),
            sim: SimParams::default(),
            tradeoff: TradeoffParams::default(),
            balance: BalanceParams::default(),
            snr: SnrParams::default(),
        }
    }
}

fn strictly_increasing(name: &str, grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::Config(format!("{name} is empty")));
    }
    if grid.iter().any(|x| !x.is_finite()) || grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Config(format!("{name} must be strictly increasing")));
    }
    Ok(())
}

impl ExperimentConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials < 100 {
            return Err(Error::domain("trials", "at least 100", self.trials as f64));
        }
        if !(self.topology.alpha > 2.0) {
            return Err(Error::InvalidAlpha(self.topology.alpha));
        }
        if self.topology.antennas_per_site == 0 {
            return Err(Error::Config("antennas_per_site must be positive".into()));
        }
        if let Some(r) = self.topology.residual {
            if !(r >= 0.0) {
                return Err(Error::domain("residual", "non-negative", r));
            }
        }
        if !(self.sim.block_len >= 1.0) {
            return Err(Error::domain("T", "at least 1", self.sim.block_len));
        }
        if !self.sim.snr_db.is_finite() {
            return Err(Error::domain("snr_db", "finite", self.sim.snr_db));
        }
        let coop: Vec<f64> = self.tradeoff.cooperation.iter().map(|&l| l as f64).collect();
        strictly_increasing("tradeoff.cooperation", &coop)?;
        if self.tradeoff.cooperation[0] == 0 {
            return Err(Error::Config("cooperation sizes must be positive".into()));
        }
        strictly_increasing("tradeoff.depth_db", &self.tradeoff.depth_db)?;
        if self.tradeoff.depth_db[0] <= 0.0 {
            return Err(Error::Config("tradeoff.depth_db must be positive".into()));
        }
        strictly_increasing("balance.feedback_grid", &self.balance.feedback_grid)?;
        if self.balance.feedback_grid[0] <= 0.0 {
            return Err(Error::Config("balance.feedback_grid must be positive".into()));
        }
        strictly_increasing("snr.snr_db", &self.snr.snr_db)?;
        strictly_increasing("snr.fixed_rates", &self.snr.fixed_rates)?;
        if self.snr.fixed_rates[0] < 0.0 {
            return Err(Error::Config("snr.fixed_rates must be non-negative".into()));
        }
        if self.snr.connectivity == 0 {
            return Err(Error::Config("snr.connectivity must be positive".into()));
        }
        if !(self.snr.uplink_fraction > 0.0 && self.snr.uplink_fraction <= 1.0) {
            return Err(Error::domain("r", "in (0, 1]", self.snr.uplink_fraction));
        }
        if !(self.snr.kappa_ul > 0.0) {
            return Err(Error::domain("kappa_ul", "positive", self.snr.kappa_ul));
        }
        Ok(())
    }

    pub fn rho(&self) -> f64 {
        db_to_linear(self.sim.snr_db)
    }

    pub fn overhead(&self) -> f64 {
        self.sim.quantizer.overhead()
    }

    fn lattice(&self, residual: f64, scheme: Scheme) -> LatticeConfig {
        LatticeConfig {
            scheme,
            quantizer: self.sim.quantizer,
            rho: self.rho(),
            blocks: self.trials,
            symbols_per_block: self.sim.symbols_per_block,
            bins: self.sim.bins,
            block_len: self.sim.block_len,
            residual,
            seed: self.seed,
            batches: self.sim.batches,
        }
    }

    /// Stable 64-bit FNV-1a digest of the serialized configuration.
    pub fn fingerprint(&self) -> Result<u64> {
        let text = self.to_toml_string()?;
        Ok(text.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
            (h ^ b as u64).wrapping_mul(0x0100_0000_01b3)
        }))
    }
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

/// Simulated network: the cyclic gain matrix built from one reference mobile.
#[derive(Debug, Clone)]
pub struct Network {
    pub topology: NetworkTopology,
    /// Normalized gains of the reference mobile.
    pub reference_row: Vec<f64>,
    pub gains: GainMatrix,
    /// Unsimulated interference per unit ρ.
    pub residual: f64,
    /// Density constant in units of the nearest-site distance.
    pub density: f64,
}

pub fn build_network(params: &TopologyParams) -> Result<Network> {
    let mut topology = NetworkTopology::hex(params.rings, params.antennas_per_site).with_alpha(params.alpha);
    if params.trim_corners {
        topology = topology.trim_corners();
    }
    topology.mobiles = vec![corner_mobile(&topology)?];
    topology.validate()?;
    let reference_row = normalize_to_strongest(gain_map(&topology)?.row(0));
    let sites = topology.sites.len();
    let gains = cyclic_gain_rows_strided(&reference_row, sites, params.antennas_per_site);
    let residual = match params.residual {
        Some(r) => r,
        None => residual_interference_coeff(&topology, 0, params.horizon_rings)?,
    };
    let nearest = topology
        .sites
        .iter()
        .map(|s| s.distance(topology.mobiles[0]))
        .fold(f64::INFINITY, f64::min);
    let density = density_bound(&topology, 0)?.in_units_of(nearest).b;
    Ok(Network {
        topology,
        reference_row,
        gains,
        residual,
        density,
    })
}

/// One CSV row.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub scheme: String,
    pub fed: usize,
    pub feedback_se: f64,
    pub downlink_se: f64,
    pub stderr: f64,
    pub trials: usize,
    pub seed: u64,
    pub snr_db: f64,
}

impl SweepRow {
    fn to_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.scheme,
            self.fed,
            self.feedback_se,
            self.downlink_se,
            self.stderr,
            self.trials,
            self.seed,
            self.snr_db
        )
    }

    fn parse(line: &str) -> Result<Self> {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != CSV_COLUMNS.len() {
            return Err(Error::Parse(format!("expected {} fields: {line}", CSV_COLUMNS.len())));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|e| Error::Parse(format!("{s}: {e}")));
        let int = |s: &str| s.parse::<u64>().map_err(|e| Error::Parse(format!("{s}: {e}")));
        Ok(Self {
            scheme: f[0].to_string(),
            fed: int(f[1])? as usize,
            feedback_se: num(f[2])?,
            downlink_se: num(f[3])?,
            stderr: num(f[4])?,
            trials: int(f[5])? as usize,
            seed: int(f[6])?,
            snr_db: num(f[7])?,
        })
    }
}

fn header_line(kind: &str, fingerprint: u64) -> String {
    format!("# ratebal-sweep version={CSV_VERSION} kind={kind} config={fingerprint:016x}")
}

/// Reads every row of a sweep CSV, checking the version header.
pub fn read_rows(path: impl AsRef<Path>) -> Result<Vec<SweepRow>> {
    let mut lines = BufReader::new(File::open(path)?).lines();
    let head = lines.next().ok_or(Error::Empty("csv"))??;
    if !head.starts_with(&format!("# ratebal-sweep version={CSV_VERSION} ")) {
        return Err(Error::Parse(format!("unsupported header: {head}")));
    }
    let columns = lines.next().ok_or(Error::Empty("csv columns"))??;
    if columns != CSV_COLUMNS.join(",") {
        return Err(Error::Parse(format!("unexpected columns: {columns}")));
    }
    lines.map(|l| SweepRow::parse(&l?)).collect()
}

/// Ordered row log. Rows already present in a matching file are replayed instead
/// of recomputed; new rows are appended and flushed one at a time.
pub struct RowSink {
    replay: Vec<SweepRow>,
    next: usize,
    file: Option<File>,
    rows: Vec<SweepRow>,
}

impl RowSink {
    pub fn memory() -> Self {
        Self {
            replay: Vec::new(),
            next: 0,
            file: None,
            rows: Vec::new(),
        }
    }

    /// Opens `path`, resuming when its header matches `kind` and `fingerprint`.
    pub fn open(path: impl AsRef<Path>, kind: &str, fingerprint: u64) -> Result<Self> {
        let path = path.as_ref();
        let header = header_line(kind, fingerprint);
        let columns = CSV_COLUMNS.join(",");
        let mut replay = Vec::new();
        if let Ok(text) = std::fs::read_to_string(path) {
            let mut lines = text.split_inclusive('\n');
            if lines.next().map(str::trim_end) == Some(header.as_str())
                && lines.next().map(str::trim_end) == Some(columns.as_str())
            {
                // A torn final line from an interrupted run is dropped.
                for line in lines.filter(|l| l.ends_with('\n')) {
                    match SweepRow::parse(line.trim_end()) {
                        Ok(row) => replay.push(row),
                        Err(_) => break,
                    }
                }
            }
        }
        let mut file = OpenOptions::new().create(true).write(true).truncate(true).open(path)?;
        writeln!(file, "{header}")?;
        writeln!(file, "{columns}")?;
        for row in &replay {
            writeln!(file, "{}", row.to_line())?;
        }
        file.flush()?;
        Ok(Self {
            replay,
            next: 0,
            file: Some(file),
            rows: Vec::new(),
        })
    }

    /// Rows replayed from a previous run.
    pub fn resumed(&self) -> usize {
        self.replay.len()
    }

    pub fn rows(&self) -> &[SweepRow] {
        &self.rows
    }

    fn point(&mut self, compute: impl FnOnce() -> Result<SweepRow>) -> Result<SweepRow> {
        let row = if self.next < self.replay.len() {
            self.replay[self.next].clone()
        } else {
            let row = compute()?;
            if let Some(f) = self.file.as_mut() {
                writeln!(f, "{}", row.to_line())?;
                f.flush()?;
            }
            row
        };
        self.next += 1;
        self.rows.push(row.clone());
        Ok(row)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvePoint {
    pub feedback_se: f64,
    pub downlink_se: f64,
    pub stderr: f64,
    /// Fed antennas of the reference mobile.
    pub fed: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TradeoffCurve {
    pub scheme: String,
    /// Cooperation size; 0 without feedback.
    pub fed: usize,
    pub points: Vec<CurvePoint>,
}

impl TradeoffCurve {
    /// Linear interpolation in feedback SE; `None` outside the covered range.
    pub fn value_at(&self, x: f64) -> Option<f64> {
        interpolate(&self.points, x)
    }

    pub fn max_feedback(&self) -> f64 {
        self.points.iter().map(|p| p.feedback_se).fold(0.0, f64::max)
    }
}

fn interpolate(points: &[CurvePoint], x: f64) -> Option<f64> {
    let mut pts: Vec<(f64, f64)> = points.iter().map(|p| (p.feedback_se, p.downlink_se)).collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    let first = pts.first()?;
    if x < first.0 {
        return None;
    }
    for w in pts.windows(2) {
        let ((x0, y0), (x1, y1)) = (w[0], w[1]);
        if x >= x0 && x <= x1 {
            if x1 == x0 {
                return Some(y0.max(y1));
            }
            return Some(y0 + (y1 - y0) * (x - x0) / (x1 - x0));
        }
    }
    let last = pts.last()?;
    (x == last.0).then_some(last.1)
}

/// Abscissa where `upper` overtakes `lower` for the last time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Crossing {
    pub lower: usize,
    pub upper: usize,
    pub feedback_se: Option<f64>,
}

/// Sign change of `upper − lower` from negative to positive, by linear interpolation
/// on the union of both abscissa sets.
pub fn crossing_point(lower: &TradeoffCurve, upper: &TradeoffCurve) -> Option<f64> {
    let lo = lower.points.iter().chain(&upper.points).map(|p| p.feedback_se);
    let start = lower
        .points
        .iter()
        .map(|p| p.feedback_se)
        .fold(f64::INFINITY, f64::min)
        .max(upper.points.iter().map(|p| p.feedback_se).fold(f64::INFINITY, f64::min));
    let end = lower.max_feedback().min(upper.max_feedback());
    let mut xs: Vec<f64> = lo.filter(|&x| x >= start && x <= end).collect();
    xs.sort_by(f64::total_cmp);
    xs.dedup();
    let diff: Vec<(f64, f64)> = xs
        .iter()
        .filter_map(|&x| Some((x, upper.value_at(x)? - lower.value_at(x)?)))
        .collect();
    let k = diff.iter().rposition(|&(_, d)| d < 0.0)?;
    let (x0, d0) = diff[k];
    let &(x1, d1) = diff.get(k + 1)?;
    Some(x0 + (x1 - x0) * (-d0) / (d1 - d0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TradeoffSet {
    pub no_cooperation: SimResult,
    pub curves: Vec<TradeoffCurve>,
    pub crossings: Vec<Crossing>,
}

impl TradeoffSet {
    pub fn curve(&self, fed: usize) -> Option<&TradeoffCurve> {
        self.curves.iter().find(|c| c.fed == fed)
    }
}

type AllocationKey = Vec<(Vec<usize>, u64)>;

fn allocation_key(allocs: &[FeedbackAllocation]) -> AllocationKey {
    allocs.iter().map(|a| (a.active.clone(), a.xi2.to_bits())).collect()
}

/// Runs the lattice simulation, reusing results for repeated allocations.
struct SimCache<'a> {
    gains: &'a GainMatrix,
    cfg: LatticeConfig,
    memo: HashMap<(AllocationKey, u8), SimResult>,
}

impl<'a> SimCache<'a> {
    fn new(gains: &'a GainMatrix, cfg: LatticeConfig) -> Self {
        Self {
            gains,
            cfg,
            memo: HashMap::new(),
        }
    }

    fn run(&mut self, allocs: &[FeedbackAllocation], scheme: Scheme) -> Result<SimResult> {
        let key = (allocation_key(allocs), scheme as u8);
        if let Some(r) = self.memo.get(&key) {
            return Ok(r.clone());
        }
        let cfg = LatticeConfig { scheme, ..self.cfg };
        let r = run_downlink(self.gains, allocs, &cfg)?;
        self.memo.insert(key, r.clone());
        Ok(r)
    }
}

fn sim_row(scheme: Scheme, fed: usize, r: &SimResult, cfg: &ExperimentConfig) -> SweepRow {
    SweepRow {
        scheme: scheme.label().to_string(),
        fed,
        feedback_se: r.feedback_se,
        downlink_se: r.downlink_se,
        stderr: r.std_error,
        trials: r.blocks,
        seed: cfg.seed,
        snr_db: cfg.sim.snr_db,
    }
}

fn point_of(row: &SweepRow) -> CurvePoint {
    CurvePoint {
        feedback_se: row.feedback_se,
        downlink_se: row.downlink_se,
        stderr: row.stderr,
        fed: row.fed,
    }
}

/// Baseline without cooperation; cached so that every sweep reports the same value.
fn no_cooperation(cache: &mut SimCache, net: &Network, cfg: &ExperimentConfig) -> Result<SimResult> {
    let empty: Vec<FeedbackAllocation> = (0..net.gains.rows())
        .map(|i| FeedbackAllocation::empty(i, cfg.sim.block_len, cfg.overhead()))
        .collect();
    cache.run(&empty, Scheme::NoCooperation)
}

/// Downlink SE against realized feedback SE for each cooperation size, threshold rule
/// capped at the `L` strongest antennas.
pub fn run_tradeoff_sweep(cfg: &ExperimentConfig, net: &Network, sink: &mut RowSink) -> Result<TradeoffSet> {
    cfg.validate()?;
    let mut cache = SimCache::new(&net.gains, cfg.lattice(net.residual, Scheme::DpModulo));
    let base = no_cooperation(&mut cache, net, cfg)?;
    let base_row = sink.point(|| Ok(sim_row(Scheme::NoCooperation, 0, &base, cfg)))?;
    let t = cfg.sim.block_len;
    let q = cfg.overhead();
    let mut curves = Vec::new();
    for &l in &cfg.tradeoff.cooperation {
        // No CSI means no coordination: the zero-feedback point is the baseline.
        let mut points = vec![CurvePoint {
            fed: 0,
            ..point_of(&base_row)
        }];
        for &depth in &cfg.tradeoff.depth_db {
            let xi2 = db_to_linear(-depth);
            let allocs = (0..net.gains.rows())
                .map(|i| allocate_limited(i, net.gains.row(i), xi2, l, t, q))
                .collect::<Result<Vec<_>>>()?;
            let row = sink.point(|| {
                let r = cache.run(&allocs, Scheme::DpModulo)?;
                Ok(sim_row(Scheme::DpModulo, l, &r, cfg))
            })?;
            points.push(CurvePoint {
                fed: allocs[0].len(),
                ..point_of(&row)
            });
        }
        curves.push(TradeoffCurve {
            scheme: Scheme::DpModulo.label().to_string(),
            fed: l,
            points,
        });
    }
    let crossings = curves
        .windows(2)
        .map(|w| Crossing {
            lower: w[0].fed,
            upper: w[1].fed,
            feedback_se: crossing_point(&w[0], &w[1]),
        })
        .collect();
    Ok(TradeoffSet {
        no_cooperation: base,
        curves,
        crossings,
    })
}

/// Line through a balance-curve point with the asymptotic slope for `L` fed antennas.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tangent {
    pub fed: usize,
    pub feedback_se: f64,
    pub downlink_se: f64,
    pub slope: f64,
    /// Finite-difference slope of the simulated curve at the same point.
    pub local_slope: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BalanceCurve {
    pub no_cooperation: SimResult,
    pub curve: TradeoffCurve,
    pub zf: Option<TradeoffCurve>,
    pub tangents: Vec<Tangent>,
    /// Time-sharing hull of the curve and the zero-feedback point.
    pub envelope: Vec<CurvePoint>,
}

fn strongest(row: &[f64], l: usize) -> Vec<f64> {
    let mut out = vec![0.0; row.len()];
    for j in descending_order(row).into_iter().take(l) {
        out[j] = row[j];
    }
    out
}

/// Feeds, for each budget, the antenna count an optimal quantizer would use,
/// with water filling over those antennas.
pub fn balance_allocations(net: &Network, rate: f64, block_len: f64, overhead: f64) -> Result<(usize, Vec<FeedbackAllocation>)> {
    let alpha = net.topology.alpha;
    let l = antennas_for_budget(&net.reference_row, rate, block_len, overhead, alpha, net.density)?;
    let allocs = (0..net.gains.rows())
        .map(|i| allocate_finite_for(i, &strongest(net.gains.row(i), l), rate, block_len, overhead))
        .collect::<Result<Vec<_>>>()?;
    Ok((l, allocs))
}

pub fn run_balance_curve(cfg: &ExperimentConfig, net: &Network, sink: &mut RowSink) -> Result<BalanceCurve> {
    cfg.validate()?;
    let mut cache = SimCache::new(&net.gains, cfg.lattice(net.residual, Scheme::DpModulo));
    let base = no_cooperation(&mut cache, net, cfg)?;
    let base_row = sink.point(|| Ok(sim_row(Scheme::NoCooperation, 0, &base, cfg)))?;
    let (t, q) = (cfg.sim.block_len, cfg.overhead());
    let mut schemes = vec![Scheme::DpModulo];
    if cfg.balance.zf_reference {
        schemes.push(Scheme::ZfModulo);
    }
    let mut curves = Vec::new();
    for &scheme in &schemes {
        let mut points = vec![CurvePoint {
            fed: 0,
            ..point_of(&base_row)
        }];
        for &rate in &cfg.balance.feedback_grid {
            let (l, allocs) = balance_allocations(net, rate, t, q)?;
            let row = sink.point(|| {
                let r = cache.run(&allocs, scheme)?;
                Ok(sim_row(scheme, l, &r, cfg))
            })?;
            points.push(point_of(&row));
        }
        curves.push(TradeoffCurve {
            scheme: format!("{}-balance", scheme.label()),
            fed: 0,
            points,
        });
    }
    let curve = curves.remove(0);
    let zf = curves.pop();

    let alpha = net.topology.alpha;
    let mut tangents = Vec::new();
    for &l in &cfg.balance.tangents {
        let Some(k) = curve.points.iter().position(|p| p.fed >= l) else {
            continue;
        };
        let p = curve.points[k];
        let local_slope = match (curve.points.get(k.wrapping_sub(1)), curve.points.get(k + 1)) {
            (Some(a), Some(b)) if b.feedback_se > a.feedback_se => {
                Some((b.downlink_se - a.downlink_se) / (b.feedback_se - a.feedback_se))
            }
            _ => None,
        };
        tangents.push(Tangent {
            fed: l,
            feedback_se: p.feedback_se,
            downlink_se: p.downlink_se,
            slope: prop1_slope(alpha, q, t, l),
            local_slope,
        });
    }
    for tg in &tangents {
        for dx in [-0.1, 0.1] {
            sink.point(|| {
                Ok(SweepRow {
                    scheme: "tangent".into(),
                    fed: tg.fed,
                    feedback_se: tg.feedback_se + dx,
                    downlink_se: tg.downlink_se + tg.slope * dx,
                    stderr: 0.0,
                    trials: cfg.trials,
                    seed: cfg.seed,
                    snr_db: cfg.sim.snr_db,
                })
            })?;
        }
    }
    let envelope = upper_envelope(&[&curve.points]);
    Ok(BalanceCurve {
        no_cooperation: base,
        curve,
        zf,
        tangents,
        envelope,
    })
}

/// Upper concave hull of all points; achievable by time sharing between them.
pub fn upper_envelope(curves: &[&[CurvePoint]]) -> Vec<CurvePoint> {
    let mut pts: Vec<CurvePoint> = curves.iter().flat_map(|c| c.iter().copied()).collect();
    pts.sort_by(|a, b| {
        a.feedback_se
            .total_cmp(&b.feedback_se)
            .then(b.downlink_se.total_cmp(&a.downlink_se))
    });
    let reach = pts.iter().map(|p| p.feedback_se).fold(f64::NEG_INFINITY, f64::max);
    let mut hull: Vec<CurvePoint> = Vec::new();
    for p in pts {
        if hull.last().is_some_and(|h| h.feedback_se == p.feedback_se) {
            continue;
        }
        while hull.len() >= 2 {
            let (a, b) = (hull[hull.len() - 2], hull[hull.len() - 1]);
            let cross = (b.feedback_se - a.feedback_se) * (p.downlink_se - a.downlink_se)
                - (b.downlink_se - a.downlink_se) * (p.feedback_se - a.feedback_se);
            if cross >= 0.0 {
                hull.pop();
            } else {
                break;
            }
        }
        if hull.last().is_none_or(|h| p.downlink_se > h.downlink_se) {
            hull.push(p);
        }
    }
    // Surplus feedback can always go unused.
    if let Some(&last) = hull.last() {
        if last.feedback_se < reach {
            hull.push(CurvePoint {
                feedback_se: reach,
                ..last
            });
        }
    }
    hull
}

#[derive(Debug, Clone, PartialEq)]
pub struct SnrCurve {
    pub label: String,
    /// `(snr_db, feedback rate, downlink SE, standard error)`.
    pub points: Vec<(f64, f64, f64, f64)>,
}

impl SnrCurve {
    pub fn value_at(&self, snr_db: f64) -> Option<f64> {
        let pts: Vec<CurvePoint> = self
            .points
            .iter()
            .map(|&(s, _, y, _)| CurvePoint {
                feedback_se: s,
                downlink_se: y,
                stderr: 0.0,
                fed: 0,
            })
            .collect();
        interpolate(&pts, snr_db)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SnrSweep {
    pub fixed: Vec<SnrCurve>,
    pub proportional: SnrCurve,
    /// Least-squares slope of the proportional curve against `log₂ρ`.
    pub fitted_slope: f64,
    pub reference_slope: f64,
}

impl SnrSweep {
    /// Largest relative change of consecutive fixed-rate gaps between two SNRs.
    pub fn gap_variation(&self, lo_db: f64, hi_db: f64) -> Option<f64> {
        let mut worst: f64 = 0.0;
        for w in self.fixed.windows(2) {
            let g_lo = w[1].value_at(lo_db)? - w[0].value_at(lo_db)?;
            let g_hi = w[1].value_at(hi_db)? - w[0].value_at(hi_db)?;
            worst = worst.max((g_hi - g_lo).abs() / g_lo.abs());
        }
        Some(worst)
    }
}

fn slope_fit(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}

/// Per-block DP rates averaged over users, for every `ρ` in `rhos`, sharing one LQ per block.
fn dp_rates(
    gains: &GainMatrix,
    allocs: &[FeedbackAllocation],
    rhos: &[f64],
    trials: usize,
    seed: u64,
) -> Result<Vec<RateEstimate>> {
    let s = interference_terms(gains, allocs, 0.0);
    let per_block: Vec<Vec<f64>> = (0..trials as u64)
        .into_par_iter()
        .map(|b| {
            let d2 = block_dp_gains(gains, allocs, seed, b)?;
            Ok(rhos
                .iter()
                .map(|&rho| d2.iter().zip(&s).map(|(&g, &si)| sinr_rate(g, rho, si)).sum::<f64>() / d2.len() as f64)
                .collect())
        })
        .collect::<Result<_>>()?;
    (0..rhos.len())
        .map(|k| RateEstimate::from_samples(&per_block.iter().map(|r| r[k]).collect::<Vec<_>>()))
        .collect()
}

/// Downlink SE over SNR for a network restricted to each mobile's strongest antennas.
pub fn run_snr_sweep(cfg: &ExperimentConfig, net: &Network, sink: &mut RowSink) -> Result<SnrSweep> {
    cfg.validate()?;
    let sp = &cfg.snr;
    let gains = net.gains.limited_connectivity(sp.connectivity);
    let n = gains.rows();
    let (t, q) = (cfg.sim.block_len, cfg.overhead());
    let rhos: Vec<f64> = sp.snr_db.iter().map(|&d| db_to_linear(d)).collect();
    let row_for = |scheme: &str, rate: f64, snr_db: f64, est: &RateEstimate| SweepRow {
        scheme: scheme.to_string(),
        fed: sp.connectivity,
        feedback_se: rate,
        downlink_se: est.mean,
        stderr: est.std_error.unwrap_or(f64::NAN),
        trials: est.trials,
        seed: cfg.seed,
        snr_db,
    };

    let mut fixed = Vec::new();
    for &rate in &sp.fixed_rates {
        let allocs = (0..n)
            .map(|i| allocate_finite_for(i, gains.row(i), rate, t, q))
            .collect::<Result<Vec<_>>>()?;
        let mut lazy: Option<Vec<RateEstimate>> = None;
        let mut points = Vec::new();
        for (k, &db) in sp.snr_db.iter().enumerate() {
            let row = sink.point(|| {
                if lazy.is_none() {
                    lazy = Some(dp_rates(&gains, &allocs, &rhos, cfg.trials, cfg.seed)?);
                }
                Ok(row_for("dp-fixed", rate, db, &lazy.as_ref().expect("filled")[k]))
            })?;
            points.push((db, rate, row.downlink_se, row.stderr));
        }
        fixed.push(SnrCurve {
            label: format!("F={rate}"),
            points,
        });
    }

    let gains_ul = gains.transpose();
    let mut prop = Vec::new();
    for (k, &db) in sp.snr_db.iter().enumerate() {
        let row = sink.point(|| {
            let r_ul = uplink_rate(&gains_ul, sp.kappa_ul * rhos[k], n, cfg.trials, cfg.seed)?.mean;
            let rate = sp.uplink_fraction * r_ul;
            let allocs = (0..n)
                .map(|i| allocate_finite_for(i, gains.row(i), rate, t, q))
                .collect::<Result<Vec<_>>>()?;
            let est = dp_rates(&gains, &allocs, &rhos[k..=k], cfg.trials, cfg.seed)?;
            Ok(row_for("dp-proportional", rate, db, &est[0]))
        })?;
        prop.push((db, row.feedback_se, row.downlink_se, row.stderr));
    }
    let tail: Vec<&(f64, f64, f64, f64)> = prop.iter().filter(|p| p.0 >= sp.slope_from_db).collect();
    if tail.len() < 2 {
        return Err(Error::Config("fewer than two SNR points above slope_from_db".into()));
    }
    let xs: Vec<f64> = tail.iter().map(|p| db_to_linear(p.0).log2()).collect();
    let ys: Vec<f64> = tail.iter().map(|p| p.2).collect();
    let fitted_slope = slope_fit(&xs, &ys);
    let reference_slope = th1_multiplexing(sp.uplink_fraction, t, sp.connectivity);

    let &(db_end, _, y_end, _) = prop.last().expect("non-empty grid");
    for &db in &sp.snr_db {
        sink.point(|| {
            Ok(SweepRow {
                scheme: "slope-reference".into(),
                fed: sp.connectivity,
                feedback_se: f64::NAN,
                downlink_se: y_end + reference_slope * (db - db_end) / 10.0 * 10f64.log2(),
                stderr: 0.0,
                trials: cfg.trials,
                seed: cfg.seed,
                snr_db: db,
            })
        })?;
    }
    Ok(SnrSweep {
        fixed,
        proportional: SnrCurve {
            label: format!("r={}", sp.uplink_fraction),
            points: prop,
        },
        fitted_slope,
        reference_slope,
    })
}
