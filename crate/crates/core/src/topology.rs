//! Hexagonal network geometry and long-term channel gains.
//!
//! Sites live on the unit triangular lattice `a·(1, 0) + b·(½, √3/2)` with
//! inter-site distance 1. Every antenna of a site shares the site's position,
//! and antenna `j` belongs to site `j / antennas_per_site`.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use std::path::Path;

const SQRT3: f64 = 1.732_050_807_568_877_2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(self, other: Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    /// Rotates by `angle` radians about `center`.
    pub fn rotated(self, center: Point, angle: f64) -> Point {
        let (s, c) = angle.sin_cos();
        let (dx, dy) = (self.x - center.x, self.y - center.y);
        Point::new(center.x + c * dx - s * dy, center.y + s * dx + c * dy)
    }
}

/// Axial lattice coordinate of a hexagonal-grid site.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Axial {
    pub a: i64,
    pub b: i64,
}

impl Axial {
    pub fn ring(self) -> i64 {
        self.a.abs().max(self.b.abs()).max((self.a + self.b).abs())
    }

    pub fn position(self) -> Point {
        Point::new(self.a as f64 + 0.5 * self.b as f64, self.b as f64 * SQRT3 / 2.0)
    }

    /// Nearest lattice point, if `p` lies on the lattice within `tol`.
    pub fn from_position(p: Point, tol: f64) -> Option<Axial> {
        let b = (p.y * 2.0 / SQRT3).round() as i64;
        let a = (p.x - 0.5 * b as f64).round() as i64;
        let ax = Axial { a, b };
        (ax.position().distance(p) <= tol).then_some(ax)
    }

    fn is_corner(self) -> bool {
        let r = self.ring();
        r > 0 && [self.a, self.b, self.a + self.b].contains(&0)
            && [self.a, self.b, self.a + self.b].iter().all(|&c| c.abs() == r || c == 0)
    }
}

/// All lattice sites with ring index `<= rings`, in a fixed enumeration order.
fn hex_patch(rings: usize) -> Vec<Axial> {
    let r = rings as i64;
    let mut out = Vec::new();
    for a in -r..=r {
        for b in -r..=r {
            let ax = Axial { a, b };
            if ax.ring() <= r {
                out.push(ax);
            }
        }
    }
    out
}

/// Network geometry: site positions, mobiles, and the path-loss law.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkTopology {
    pub sites: Vec<Point>,
    pub antennas_per_site: usize,
    #[serde(default)]
    pub mobiles: Vec<Point>,
    pub alpha: f64,
    /// Power of unsimulated interferers per unit ρ, in units of the nearest-site gain.
    #[serde(default)]
    pub residual_noise_coeff: f64,
}

impl NetworkTopology {
    /// Centered hexagonal patch of `1 + 3·rings·(rings + 1)` sites, α = 4, no mobiles.
    pub fn hex(rings: usize, antennas_per_site: usize) -> Self {
        Self {
            sites: hex_patch(rings).into_iter().map(Axial::position).collect(),
            antennas_per_site,
            mobiles: Vec::new(),
            alpha: 4.0,
            residual_noise_coeff: 0.0,
        }
    }

    /// Drops the six corner sites of the outermost ring (61 → 55 for four rings).
    pub fn trim_corners(mut self) -> Self {
        let outer = self
            .sites
            .iter()
            .filter_map(|&p| Axial::from_position(p, 1e-9))
            .map(Axial::ring)
            .max()
            .unwrap_or(0);
        self.sites.retain(|&p| match Axial::from_position(p, 1e-9) {
            Some(ax) => !(ax.ring() == outer && ax.is_corner()),
            None => true,
        });
        self
    }

    /// The 55-site single-antenna layout with one mobile at a three-cell border point.
    pub fn standard_55() -> Result<Self> {
        let mut topo = Self::hex(4, 1).trim_corners();
        let m = corner_mobile(&topo)?;
        topo.mobiles = vec![m];
        Ok(topo)
    }

    pub fn with_alpha(mut self, alpha: f64) -> Self {
        self.alpha = alpha;
        self
    }

    pub fn with_antennas_per_site(mut self, n: usize) -> Self {
        self.antennas_per_site = n;
        self
    }

    pub fn num_antennas(&self) -> usize {
        self.sites.len() * self.antennas_per_site
    }

    pub fn antenna_position(&self, antenna: usize) -> Point {
        self.sites[antenna / self.antennas_per_site]
    }

    pub fn centroid(&self) -> Point {
        let n = self.sites.len().max(1) as f64;
        let (sx, sy) = self
            .sites
            .iter()
            .fold((0.0, 0.0), |(x, y), p| (x + p.x, y + p.y));
        Point::new(sx / n, sy / n)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 2.0) {
            return Err(Error::InvalidAlpha(self.alpha));
        }
        if self.antennas_per_site == 0 {
            return Err(Error::Config("antennas_per_site must be positive".into()));
        }
        if self.sites.is_empty() {
            return Err(Error::Empty("sites"));
        }
        Ok(())
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let topo: Self = toml::from_str(s).map_err(|e| Error::Parse(e.to_string()))?;
        topo.validate()?;
        Ok(topo)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_toml_string()?)?;
        Ok(())
    }
}

/// Circumcenter of three points, or `None` if they are (nearly) collinear.
fn circumcenter(p: Point, q: Point, r: Point) -> Option<Point> {
    let d = 2.0 * (p.x * (q.y - r.y) + q.x * (r.y - p.y) + r.x * (p.y - q.y));
    let scale = p.distance(q).max(q.distance(r)).max(r.distance(p));
    if d.abs() <= 1e-12 * scale * scale {
        return None;
    }
    let (p2, q2, r2) = (
        p.x * p.x + p.y * p.y,
        q.x * q.x + q.y * q.y,
        r.x * r.x + r.y * r.y,
    );
    Some(Point::new(
        (p2 * (q.y - r.y) + q2 * (r.y - p.y) + r2 * (p.y - q.y)) / d,
        (p2 * (r.x - q.x) + q2 * (p.x - r.x) + r2 * (q.x - p.x)) / d,
    ))
}

/// Voronoi vertex next to the site closest to the grid centroid.
///
/// Candidates are circumcenters of triangles formed by that site and two of its
/// nearest neighbours that are empty of other sites; the candidate nearest the
/// centroid wins, ties going to the lowest site indices.
pub fn corner_mobile(topology: &NetworkTopology) -> Result<Point> {
    let sites = &topology.sites;
    if sites.len() < 3 {
        return Err(Error::NoVoronoiVertex("fewer than 3 sites"));
    }
    let center = topology.centroid();
    let by_distance = |from: Point| {
        let mut idx: Vec<usize> = (0..sites.len()).collect();
        idx.sort_by(|&i, &j| {
            sites[i]
                .distance(from)
                .total_cmp(&sites[j].distance(from))
                .then(i.cmp(&j))
        });
        idx
    };
    let anchor = by_distance(center)[0];
    let neighbours: Vec<usize> = by_distance(sites[anchor])
        .into_iter()
        .filter(|&i| i != anchor)
        .take(8)
        .collect();

    let mut best: Option<(f64, Point)> = None;
    for (n, &i) in neighbours.iter().enumerate() {
        for &j in &neighbours[n + 1..] {
            let Some(c) = circumcenter(sites[anchor], sites[i], sites[j]) else {
                continue;
            };
            let radius = c.distance(sites[anchor]);
            let empty = sites
                .iter()
                .enumerate()
                .all(|(k, s)| k == anchor || k == i || k == j || s.distance(c) >= radius * (1.0 - 1e-9));
            if !empty {
                continue;
            }
            let score = c.distance(center);
            if best.is_none_or(|(b, _)| score < b - 1e-12) {
                best = Some((score, c));
            }
        }
    }
    best.map(|(_, p)| p)
        .ok_or(Error::NoVoronoiVertex("sites are collinear"))
}

/// Per-link long-term gains, one row per mobile and one column per antenna.
#[derive(Debug, Clone, PartialEq)]
pub struct GainMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl GainMatrix {
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|r| r.len() == cols), "ragged gain rows");
        Self {
            rows: rows.len(),
            cols,
            data: rows.into_iter().flatten().collect(),
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn transpose(&self) -> GainMatrix {
        GainMatrix::from_rows(
            (0..self.cols)
                .map(|j| (0..self.rows).map(|i| self.get(i, j)).collect())
                .collect(),
        )
    }

    /// Keeps, in every row, only the `keep` strongest entries and zeros the rest.
    pub fn limited_connectivity(&self, keep: usize) -> GainMatrix {
        GainMatrix::from_rows(
            (0..self.rows)
                .map(|i| {
                    let row = self.row(i);
                    let order = descending_order(row);
                    let mut out = vec![0.0; row.len()];
                    for &j in order.iter().take(keep) {
                        out[j] = row[j];
                    }
                    out
                })
                .collect(),
        )
    }

    /// Writes the matrix as CSV with full round-trip precision.
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::WriterBuilder::new().has_headers(false).from_writer(w);
        for i in 0..self.rows {
            wtr.write_record(self.row(i).iter().map(|g| format!("{g:e}")))?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn read_csv<R: std::io::Read>(r: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(false).from_reader(r);
        let mut rows = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            rows.push(
                rec.iter()
                    .map(|f| f.trim().parse::<f64>().map_err(|e| Error::Parse(e.to_string())))
                    .collect::<Result<Vec<_>>>()?,
            );
        }
        Ok(GainMatrix::from_rows(rows))
    }
}

/// Indices sorted by descending value, ties broken by ascending index.
pub fn descending_order(values: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&i, &j| values[j].total_cmp(&values[i]).then(i.cmp(&j)));
    idx
}

/// `σ² = d^(−α)` for every mobile-antenna pair.
pub fn gain_map(topology: &NetworkTopology) -> Result<GainMatrix> {
    if !(topology.alpha > 2.0) {
        return Err(Error::InvalidAlpha(topology.alpha));
    }
    let m = topology.num_antennas();
    let mut rows = Vec::with_capacity(topology.mobiles.len());
    for (i, &mobile) in topology.mobiles.iter().enumerate() {
        let mut row = Vec::with_capacity(m);
        for j in 0..m {
            let d = mobile.distance(topology.antenna_position(j));
            if d <= 0.0 {
                return Err(Error::ZeroDistance {
                    mobile: i,
                    antenna: j,
                });
            }
            row.push(d.powf(-topology.alpha));
        }
        rows.push(row);
    }
    Ok(GainMatrix::from_rows(rows))
}

/// Scales a gain row so that its strongest entry is 1.
pub fn normalize_to_strongest(row: &[f64]) -> Vec<f64> {
    let peak = row.iter().copied().fold(0.0, f64::max);
    if peak > 0.0 {
        row.iter().map(|g| g / peak).collect()
    } else {
        row.to_vec()
    }
}

/// Circulant gain matrix: row `i` is `reference` rotated right by `i` positions.
pub fn cyclic_gain_rows(reference: &[f64], n: usize) -> GainMatrix {
    cyclic_gain_rows_strided(reference, n, 1)
}

/// As [`cyclic_gain_rows`], rotating by `stride · i` positions (one site per mobile).
pub fn cyclic_gain_rows_strided(reference: &[f64], n: usize, stride: usize) -> GainMatrix {
    let m = reference.len();
    assert!(m >= 1, "empty reference row");
    GainMatrix::from_rows(
        (0..n)
            .map(|i| {
                let shift = (i * stride) % m;
                (0..m).map(|j| reference[(j + m - shift) % m]).collect()
            })
            .collect(),
    )
}

/// Density constant `b_i` with `j ≤ b_i · d_(j)²` for every sorted antenna index `j`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DensityBound {
    pub b: f64,
    /// 1-based sorted antenna index at which the bound is tight.
    pub argmax: usize,
}

impl DensityBound {
    /// The same bound with distances measured in units of `length`.
    pub fn in_units_of(self, length: f64) -> DensityBound {
        DensityBound {
            b: self.b * length * length,
            argmax: self.argmax,
        }
    }
}

pub fn density_bound(topology: &NetworkTopology, mobile: usize) -> Result<DensityBound> {
    let m = topology.num_antennas();
    if m == 0 {
        return Err(Error::Empty("antennas"));
    }
    let pos = topology.mobiles[mobile];
    let mut d2: Vec<f64> = (0..m)
        .map(|j| {
            let d = pos.distance(topology.antenna_position(j));
            d * d
        })
        .collect();
    d2.sort_by(f64::total_cmp);
    let mut best = DensityBound { b: 0.0, argmax: 1 };
    for (k, &d) in d2.iter().enumerate() {
        if d <= 0.0 {
            return Err(Error::ZeroDistance {
                mobile,
                antenna: k,
            });
        }
        let b = (k + 1) as f64 / d;
        if b > best.b {
            best = DensityBound { b, argmax: k + 1 };
        }
    }
    Ok(best)
}

/// Partial lattice sum behind [`residual_interference_coeff`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResidualSum {
    /// Σ d^(−α) over unsimulated antennas, divided by the strongest simulated gain.
    pub value: f64,
    /// Contribution of the outermost ring relative to the running sum.
    pub last_ring_fraction: f64,
}

/// Sums unsimulated-site gains ring by ring out to `horizon_rings`, without a convergence check.
pub fn residual_lattice_sum(
    topology: &NetworkTopology,
    mobile: usize,
    horizon_rings: usize,
) -> Result<ResidualSum> {
    let pos = *topology
        .mobiles
        .get(mobile)
        .ok_or(Error::Empty("mobiles"))?;
    let simulated: HashSet<Axial> = topology
        .sites
        .iter()
        .filter_map(|&p| Axial::from_position(p, 1e-6))
        .collect();
    let alpha = topology.alpha;
    let nearest = topology
        .sites
        .iter()
        .map(|s| s.distance(pos))
        .fold(f64::INFINITY, f64::min);
    if !(nearest > 0.0) {
        return Err(Error::ZeroDistance {
            mobile,
            antenna: 0,
        });
    }
    let reference_gain = nearest.powf(-alpha);

    let mut total = 0.0;
    let mut last = 0.0;
    for r in 0..=horizon_rings as i64 {
        let mut ring_sum = 0.0;
        for_each_in_ring(r, |ax| {
            if !simulated.contains(&ax) {
                ring_sum += ax.position().distance(pos).powf(-alpha);
            }
        });
        total += ring_sum;
        last = ring_sum;
    }
    let per_site = topology.antennas_per_site as f64;
    Ok(ResidualSum {
        value: per_site * total / reference_gain,
        last_ring_fraction: if total > 0.0 { last / total } else { 0.0 },
    })
}

fn for_each_in_ring(r: i64, mut f: impl FnMut(Axial)) {
    if r == 0 {
        f(Axial { a: 0, b: 0 });
        return;
    }
    // Walk the six edges of the hexagonal ring, starting at (r, -r).
    const WALK: [(i64, i64); 6] = [(0, 1), (-1, 1), (-1, 0), (0, -1), (1, -1), (1, 0)];
    let mut cur = Axial { a: r, b: -r };
    for &(da, db) in &WALK {
        for _ in 0..r {
            f(cur);
            cur = Axial {
                a: cur.a + da,
                b: cur.b + db,
            };
        }
    }
}

/// Relative power of interferers outside the simulated patch, summed to `horizon_rings`.
///
/// The result is expressed per unit ρ in units of the mobile's strongest simulated gain,
/// matching the normalisation used by the downlink simulation.
pub fn residual_interference_coeff(
    topology: &NetworkTopology,
    mobile: usize,
    horizon_rings: usize,
) -> Result<f64> {
    let sum = residual_lattice_sum(topology, mobile, horizon_rings)?;
    // Ring sums fall as r^(1−α), so the omitted tail is about last·R/(α − 2).
    let tail = sum.last_ring_fraction * horizon_rings as f64 / (topology.alpha - 2.0);
    if tail > 1e-3 {
        return Err(Error::InsufficientHorizon {
            horizon: horizon_rings,
            fraction: tail,
        });
    }
    Ok(sum.value)
}
