//! LQ precoding, the DP-ZF and linear ZF rate estimates, and the uplink rate.

use crate::allocator::{error_sum, FeedbackAllocation};
use crate::error::{Error, Result};
use crate::fading::{sample_downlink, sample_uplink};
use crate::linalg::{inner, log2_det_hpd, norm_sqr, CMatrix};
use crate::quantizer::model_quantize;
use crate::rng::{substream, Purpose};
use crate::topology::GainMatrix;
use num_complex::Complex64;
use rayon::prelude::*;
use std::io::Write;

/// Rows whose residual norm falls below this fraction of their own norm are treated as dependent.
const RANK_TOL: f64 = 1e-12;

/// `Ĥ = L·Q` with `L` lower triangular (non-negative real diagonal) and `Q` unitary.
#[derive(Debug, Clone, PartialEq)]
pub struct PrecoderState {
    /// N × M; entries right of the diagonal are zero.
    pub l: CMatrix,
    /// M × M.
    pub q: CMatrix,
    pub diag: Vec<f64>,
    /// Users whose row is linearly dependent on earlier rows.
    pub degenerate: Vec<usize>,
}

impl PrecoderState {
    pub fn users(&self) -> usize {
        self.l.rows()
    }

    /// `Q_Nᴴ·s`, the transmit vector for precoded symbols `s`.
    pub fn transmit(&self, s: &[Complex64], x: &mut [Complex64]) {
        let n = self.users();
        debug_assert_eq!(s.len(), n);
        x.iter_mut().for_each(|v| *v = Complex64::new(0.0, 0.0));
        for (k, &sk) in s.iter().enumerate().take(n) {
            for (xm, qkm) in x.iter_mut().zip(self.q.row(k)) {
                *xm += qkm.conj() * sk;
            }
        }
    }
}

/// Projects `v` off every row of `basis`, twice.
fn orthogonalize(v: &mut [Complex64], basis: &[Vec<Complex64>], coeffs: Option<&mut [Complex64]>) {
    let mut acc = vec![Complex64::new(0.0, 0.0); basis.len()];
    for _ in 0..2 {
        for (k, q) in basis.iter().enumerate() {
            let c = inner(v, q);
            acc[k] += c;
            for (a, b) in v.iter_mut().zip(q) {
                *a -= c * b;
            }
        }
    }
    if let Some(out) = coeffs {
        out[..basis.len()].copy_from_slice(&acc);
    }
}

/// The unit vector from the standard basis that is least aligned with `basis`, orthonormalized.
fn completion_vector(basis: &[Vec<Complex64>], m: usize) -> Vec<Complex64> {
    let mut best: Option<(f64, Vec<Complex64>)> = None;
    for e in 0..m {
        let mut v = vec![Complex64::new(0.0, 0.0); m];
        v[e] = Complex64::new(1.0, 0.0);
        orthogonalize(&mut v, basis, None);
        let n = norm_sqr(&v);
        if best.as_ref().is_none_or(|(bn, _)| n > *bn + 1e-12) {
            best = Some((n, v));
        }
    }
    let (n, mut v) = best.expect("m > basis size");
    let s = 1.0 / n.sqrt();
    v.iter_mut().for_each(|z| *z *= s);
    v
}

/// Row-by-row Gram-Schmidt LQ factorization of an `N × M` matrix, `N ≤ M`.
pub fn lq_decompose(h: &CMatrix) -> Result<PrecoderState> {
    let (n, m) = (h.rows(), h.cols());
    if n > m {
        return Err(Error::Dimension(format!("{n} users exceed {m} antennas")));
    }
    let mut l = CMatrix::zeros(n, m);
    let mut basis: Vec<Vec<Complex64>> = Vec::with_capacity(m);
    let mut diag = Vec::with_capacity(n);
    let mut degenerate = Vec::new();
    let mut coeffs = vec![Complex64::new(0.0, 0.0); m];
    for i in 0..n {
        let mut v = h.row(i).to_vec();
        let row_norm = norm_sqr(&v).sqrt();
        orthogonalize(&mut v, &basis, Some(&mut coeffs));
        l.row_mut(i)[..i].copy_from_slice(&coeffs[..i]);
        let r = norm_sqr(&v).sqrt();
        if r > RANK_TOL * row_norm && r > 0.0 {
            v.iter_mut().for_each(|z| *z /= r);
            basis.push(v);
            l[(i, i)] = Complex64::new(r, 0.0);
            diag.push(r);
        } else {
            degenerate.push(i);
            diag.push(0.0);
            let c = completion_vector(&basis, m);
            basis.push(c);
        }
    }
    while basis.len() < m {
        let c = completion_vector(&basis, m);
        basis.push(c);
    }
    Ok(PrecoderState {
        l,
        q: CMatrix::from_rows(&basis),
        diag,
        degenerate,
    })
}

/// Channel-inversion beams with unit-norm columns.
#[derive(Debug, Clone, PartialEq)]
pub struct ZfPrecoder {
    /// M × N; columns of dependent users are zero.
    pub w: CMatrix,
    /// `|ĥ_i·w_i|² = 1/[(ĤĤᴴ)⁻¹]_ii`; 0 for dependent users.
    pub gains: Vec<f64>,
}

/// Pseudo-inverse ZF on the rows of `ĥ` that are linearly independent of earlier rows.
pub fn zf_precoder(h_hat: &CMatrix) -> Result<ZfPrecoder> {
    let (n, m) = (h_hat.rows(), h_hat.cols());
    let st = lq_decompose(h_hat)?;
    let mut w = CMatrix::zeros(m, n);
    let mut gains = vec![0.0; n];
    if !st.degenerate.is_empty() {
        let keep: Vec<usize> = (0..n).filter(|i| !st.degenerate.contains(i)).collect();
        if keep.is_empty() {
            return Ok(ZfPrecoder { w, gains });
        }
        let sub = CMatrix::from_fn(keep.len(), m, |a, b| h_hat[(keep[a], b)]);
        let inner = zf_precoder(&sub)?;
        for (c, &i) in keep.iter().enumerate() {
            gains[i] = inner.gains[c];
            for r in 0..m {
                w[(r, i)] = inner.w[(r, c)];
            }
        }
        return Ok(ZfPrecoder { w, gains });
    }
    // Columns of L⁻¹ by forward substitution; beam j is Q_Nᴴ·(L⁻¹)_{:,j}, normalized.
    let mut x = vec![Complex64::new(0.0, 0.0); n];
    for j in 0..n {
        x.iter_mut().for_each(|z| *z = Complex64::new(0.0, 0.0));
        for i in j..n {
            let mut s = if i == j {
                Complex64::new(1.0, 0.0)
            } else {
                Complex64::new(0.0, 0.0)
            };
            for k in j..i {
                s -= st.l[(i, k)] * x[k];
            }
            x[i] = s / st.l[(i, i)];
        }
        let norm2 = norm_sqr(&x);
        gains[j] = 1.0 / norm2;
        let scale = 1.0 / norm2.sqrt();
        for k in j..n {
            let c = x[k] * scale;
            for r in 0..m {
                w[(r, j)] += st.q[(k, r)].conj() * c;
            }
        }
    }
    Ok(ZfPrecoder { w, gains })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateEstimate {
    pub mean: f64,
    /// `None` with fewer than two trials.
    pub std_error: Option<f64>,
    pub trials: usize,
}

impl RateEstimate {
    pub fn from_samples(samples: &[f64]) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Empty("rate samples"));
        }
        let n = samples.len() as f64;
        let mean = samples.iter().sum::<f64>() / n;
        let std_error = (samples.len() >= 2).then(|| {
            let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
            (var / n).sqrt()
        });
        Ok(Self {
            mean,
            std_error,
            trials: samples.len(),
        })
    }

    pub fn write_csv_header<W: Write>(w: &mut csv::Writer<W>) -> Result<()> {
        w.write_record(["mean", "stderr", "trials"])?;
        Ok(())
    }

    pub fn write_csv_row<W: Write>(&self, w: &mut csv::Writer<W>) -> Result<()> {
        w.write_record([
            format!("{:e}", self.mean),
            self.std_error.map_or(String::new(), |s| format!("{s:e}")),
            self.trials.to_string(),
        ])?;
        Ok(())
    }
}

/// `log₂(1 + ρg/(1 + ρ·S))`.
pub fn sinr_rate(gain: f64, rho: f64, interference: f64) -> f64 {
    (1.0 + rho * gain / (1.0 + rho * interference)).log2()
}

/// Interference term `S_i = Σ_j ξ²_{i,j} + residual` for every user.
pub fn interference_terms(
    gains: &GainMatrix,
    allocations: &[FeedbackAllocation],
    residual: f64,
) -> Vec<f64> {
    allocations
        .iter()
        .enumerate()
        .map(|(i, a)| error_sum(a, gains.row(i)) + residual)
        .collect()
}

/// Per-user instantaneous DP-ZF and ZF rates for one block.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockRates {
    pub dp: Vec<f64>,
    pub zf: Vec<f64>,
}

/// Squared LQ diagonal `|ℓ_ii|²` of one model-quantized block, independent of `ρ`.
pub fn block_dp_gains(
    gains: &GainMatrix,
    allocations: &[FeedbackAllocation],
    seed: u64,
    block: u64,
) -> Result<Vec<f64>> {
    let h = sample_downlink(gains, seed, block).h;
    let mut rng = substream(seed, Purpose::Model, block);
    let q = model_quantize(&h, gains, allocations, &mut rng)?;
    Ok(lq_decompose(&q.h_hat)?.diag.iter().map(|d| d * d).collect())
}

/// Draws one block, quantizes it with the statistical model, and evaluates both precoders.
pub fn block_rates(
    gains: &GainMatrix,
    allocations: &[FeedbackAllocation],
    rho: f64,
    residual: f64,
    seed: u64,
    block: u64,
) -> Result<BlockRates> {
    let h = sample_downlink(gains, seed, block).h;
    let mut rng = substream(seed, Purpose::Model, block);
    let q = model_quantize(&h, gains, allocations, &mut rng)?;
    let state = lq_decompose(&q.h_hat)?;
    let s = interference_terms(gains, allocations, residual);
    let zf = zf_precoder(&q.h_hat)?.gains;
    Ok(BlockRates {
        dp: state
            .diag
            .iter()
            .zip(&s)
            .map(|(d, si)| sinr_rate(d * d, rho, *si))
            .collect(),
        zf: zf.iter().zip(&s).map(|(g, si)| sinr_rate(*g, rho, *si)).collect(),
    })
}

fn per_user(samples: &[BlockRates], pick: impl Fn(&BlockRates) -> &Vec<f64>) -> Result<Vec<RateEstimate>> {
    let n = samples.first().map_or(0, |b| pick(b).len());
    (0..n)
        .map(|i| RateEstimate::from_samples(&samples.iter().map(|b| pick(b)[i]).collect::<Vec<_>>()))
        .collect()
}

fn run_blocks(
    gains: &GainMatrix,
    allocations: &[FeedbackAllocation],
    rho: f64,
    residual: f64,
    trials: usize,
    seed: u64,
) -> Result<Vec<BlockRates>> {
    if !(rho > 0.0) {
        return Err(Error::domain("rho", "positive", rho));
    }
    (0..trials as u64)
        .into_par_iter()
        .map(|b| block_rates(gains, allocations, rho, residual, seed, b))
        .collect()
}

/// Monte Carlo DP-ZF rate per user with model-quantized CSI.
pub fn dpzf_rate(
    gains: &GainMatrix,
    allocations: &[FeedbackAllocation],
    rho: f64,
    residual: f64,
    trials: usize,
    seed: u64,
) -> Result<Vec<RateEstimate>> {
    per_user(&run_blocks(gains, allocations, rho, residual, trials, seed)?, |b| &b.dp)
}

/// Linear ZF baseline on the same draws as [`dpzf_rate`] for equal seeds.
pub fn zf_rate(
    gains: &GainMatrix,
    allocations: &[FeedbackAllocation],
    rho: f64,
    residual: f64,
    trials: usize,
    seed: u64,
) -> Result<Vec<RateEstimate>> {
    per_user(&run_blocks(gains, allocations, rho, residual, trials, seed)?, |b| &b.zf)
}

/// `(1/N)·log₂det(I + ρ·H_ULᴴH_UL)` for one `M × N` uplink draw.
pub fn uplink_rate_of(h_ul: &CMatrix, rho_ul: f64, users: usize) -> f64 {
    if rho_ul == 0.0 {
        return 0.0;
    }
    let mut g = h_ul.conj_transpose().mul(h_ul);
    for i in 0..g.rows() {
        for j in 0..g.cols() {
            g[(i, j)] *= rho_ul;
        }
        g[(i, i)] += 1.0;
    }
    log2_det_hpd(&g).expect("identity plus PSD is positive definite") / users as f64
}

pub fn uplink_rate_from_draws(draws: &[CMatrix], rho_ul: f64, users: usize) -> Result<RateEstimate> {
    RateEstimate::from_samples(&draws.iter().map(|h| uplink_rate_of(h, rho_ul, users)).collect::<Vec<_>>())
}

/// Monte Carlo uplink rate per user; `gains_ul` is antenna × mobile.
pub fn uplink_rate(
    gains_ul: &GainMatrix,
    rho_ul: f64,
    users: usize,
    trials: usize,
    seed: u64,
) -> Result<RateEstimate> {
    if !(rho_ul >= 0.0) {
        return Err(Error::domain("rho_ul", "non-negative", rho_ul));
    }
    let samples: Vec<f64> = (0..trials as u64)
        .into_par_iter()
        .map(|b| uplink_rate_of(&sample_uplink(gains_ul, seed, b), rho_ul, users))
        .collect();
    RateEstimate::from_samples(&samples)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OffsetEstimate {
    pub value: f64,
    /// Draws dropped because `H_ULᴴH_UL` was singular.
    pub skipped: usize,
}

/// `g(ρ) = r·R_UL(κρ) − r·log₂ρ` averaged over the given draws.
pub fn uplink_offset_g(draws: &[CMatrix], rho: f64, kappa: f64, r: f64, users: usize) -> Result<f64> {
    if draws.is_empty() {
        return Err(Error::Empty("uplink draws"));
    }
    let rate = uplink_rate_from_draws(draws, kappa * rho, users)?.mean;
    Ok(r * rate - r * rho.log2())
}

/// `lim g(ρ) = (r/N)·E[log₂det(κ·H_ULᴴH_UL)]`, skipping singular draws.
pub fn uplink_offset_limit(draws: &[CMatrix], kappa: f64, r: f64, users: usize) -> Result<OffsetEstimate> {
    let mut sum = 0.0;
    let mut used = 0usize;
    for h in draws {
        let mut g = h.conj_transpose().mul(h);
        for i in 0..g.rows() {
            for j in 0..g.cols() {
                g[(i, j)] *= kappa;
            }
        }
        if let Some(v) = log2_det_hpd(&g) {
            sum += v;
            used += 1;
        }
    }
    if used == 0 {
        return Err(Error::Empty("non-singular uplink draws"));
    }
    Ok(OffsetEstimate {
        value: r / users as f64 * sum / used as f64,
        skipped: draws.len() - used,
    })
}

/// Monte Carlo convenience for [`uplink_offset_g`].
pub fn uplink_offset_g_mc(
    gains_ul: &GainMatrix,
    rho: f64,
    kappa: f64,
    r: f64,
    users: usize,
    trials: usize,
    seed: u64,
) -> Result<f64> {
    let draws: Vec<CMatrix> = (0..trials as u64).map(|b| sample_uplink(gains_ul, seed, b)).collect();
    uplink_offset_g(&draws, rho, kappa, r, users)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64) -> Complex64 {
        Complex64::new(re, 0.0)
    }

    fn reconstruct(st: &PrecoderState) -> CMatrix {
        st.l.mul(&st.q)
    }

    #[test]
    fn single_row() {
        let h = CMatrix::from_rows(&[vec![c(3.0), c(4.0)]]);
        let st = lq_decompose(&h).unwrap();
        assert!((st.diag[0] - 5.0).abs() < 1e-14);
        assert!((st.q[(0, 0)] - c(0.6)).norm() < 1e-14);
        assert!((st.q[(0, 1)] - c(0.8)).norm() < 1e-14);
        assert!(reconstruct(&st).sub(&h).frobenius_norm() < 1e-13);
    }

    #[test]
    fn identity_is_fixed() {
        let st = lq_decompose(&CMatrix::identity(3)).unwrap();
        assert!(st.l.sub(&CMatrix::identity(3)).frobenius_norm() < 1e-15);
        assert!(st.q.sub(&CMatrix::identity(3)).frobenius_norm() < 1e-15);
    }

    #[test]
    fn dependent_row_flagged() {
        let h = CMatrix::from_rows(&[vec![c(1.0), c(1.0), c(0.0)], vec![c(2.0), c(2.0), c(0.0)], vec![
            c(0.0),
            c(1.0),
            c(1.0),
        ]]);
        let st = lq_decompose(&h).unwrap();
        assert_eq!(st.degenerate, vec![1]);
        assert_eq!(st.diag[1], 0.0);
        assert!(reconstruct(&st).sub(&h).frobenius_norm() < 1e-12);
        let qq = st.q.mul(&st.q.conj_transpose());
        assert!(qq.sub(&CMatrix::identity(3)).frobenius_norm() < 1e-12);
        let zf = zf_precoder(&h).unwrap().gains;
        assert_eq!(zf[1], 0.0);
        assert!(zf[0] > 0.0 && zf[2] > 0.0);
    }

    #[test]
    fn zf_equals_dp_for_orthogonal_rows_and_last_user() {
        let h = CMatrix::from_rows(&[vec![c(2.0), c(0.0)], vec![c(0.0), c(3.0)]]);
        let zf = zf_precoder(&h).unwrap().gains;
        assert!((zf[0] - 4.0).abs() < 1e-12 && (zf[1] - 9.0).abs() < 1e-12);
        let h = CMatrix::from_rows(&[vec![c(1.0), c(0.5)], vec![c(0.9), c(1.0)]]);
        let st = lq_decompose(&h).unwrap();
        let zf = zf_precoder(&h).unwrap();
        let beams = h.mul(&zf.w);
        assert!((beams[(0, 1)]).norm() < 1e-12 && (beams[(1, 0)]).norm() < 1e-12);
        let zf = zf.gains;
        assert!((zf[1] - st.diag[1].powi(2)).abs() < 1e-12);
        assert!(zf[0] < st.diag[0].powi(2));
    }

    #[test]
    fn rate_formula() {
        assert_eq!(sinr_rate(1.0, 1.0, 0.0), 1.0);
        assert!(sinr_rate(1.0, 10.0, 1e12) < 1e-10);
    }

    #[test]
    fn estimate_stats() {
        let e = RateEstimate::from_samples(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(e.mean, 2.5);
        assert!((e.std_error.unwrap() - (5.0f64 / 3.0 / 4.0).sqrt()).abs() < 1e-15);
        assert_eq!(RateEstimate::from_samples(&[1.0]).unwrap().std_error, None);
    }

    #[test]
    fn uplink_deterministic() {
        let h = CMatrix::from_rows(&[vec![c(1.0)]]);
        assert!((uplink_rate_of(&h, 1.0, 1) - 1.0).abs() < 1e-15);
        assert_eq!(uplink_rate_of(&h, 0.0, 1), 0.0);
        let draws = vec![h];
        let g = |rho: f64, kappa: f64| uplink_offset_g(&draws, rho, kappa, 0.03, 1).unwrap();
        assert!((g(1e3, 1.0) - 0.03 * (1.0 + 1e-3f64).log2()).abs() < 1e-14);
        assert!(g(1e12, 1.0).abs() < 1e-12);
        assert!((g(1e12, 0.1) - 0.03 * 0.1f64.log2()).abs() < 1e-9);
        let lim = uplink_offset_limit(&draws, 0.1, 0.03, 1).unwrap();
        assert!((lim.value - 0.03 * 0.1f64.log2()).abs() < 1e-15);
    }

    #[test]
    fn csv_row() {
        let mut w = csv::Writer::from_writer(Vec::new());
        RateEstimate::write_csv_header(&mut w).unwrap();
        RateEstimate::from_samples(&[1.0]).unwrap().write_csv_row(&mut w).unwrap();
        let s = String::from_utf8(w.into_inner().unwrap()).unwrap();
        assert_eq!(s, "mean,stderr,trials\n1e0,,1\n");
    }
}
