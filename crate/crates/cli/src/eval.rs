use anyhow::{ensure, Result};
use clap::Subcommand;
use ratebal_core::allocator::FeedbackAllocation;
use ratebal_core::bounds::{
    breve_rate, prop1_slope, th1_exchange_ratio, th1_multiplexing, th2_exponent, time_sharing_envelope,
    xi_upper_bound,
};
use ratebal_core::coherence_block;
use ratebal_core::experiment::{build_network, TopologyParams};
use ratebal_core::fading::DEFAULT_SENSITIVITY_FACTOR;
use ratebal_core::precoder::block_dp_gains;
use ratebal_core::topology::{residual_interference_coeff, NetworkTopology};

#[derive(Subcommand)]
pub enum Eval {
    /// Exchange ratio T/L and multiplexing gain min(1, rT/L).
    Th1 {
        #[arg(long = "T", default_value_t = 180.0)]
        block_len: f64,
        #[arg(long = "L")]
        antennas: usize,
        #[arg(long, default_value_t = 0.03)]
        r: f64,
    },
    /// Exponent of the log-log growth in an infinite network.
    Th2 {
        #[arg(long, default_value_t = 4.0)]
        alpha: f64,
    },
    /// Downlink-per-feedback slope with L fed antennas.
    Prop1Slope {
        #[arg(long, default_value_t = 4.0)]
        alpha: f64,
        #[arg(long, default_value_t = 2.0)]
        q: f64,
        #[arg(long = "T", default_value_t = 180.0)]
        block_len: f64,
        #[arg(long = "L")]
        antennas: usize,
    },
    /// Channel uses per coherence block.
    Coherence {
        /// Maximum Doppler shift, Hz.
        #[arg(long)]
        doppler: f64,
        /// RMS delay spread, seconds.
        #[arg(long)]
        delay: f64,
        #[arg(long, default_value_t = DEFAULT_SENSITIVITY_FACTOR)]
        factor: f64,
    },
    /// High-SNR rate with the L strongest antennas fed at total rate F.
    Breve {
        #[arg(long)]
        rate: f64,
        #[arg(long = "L")]
        antennas: usize,
        #[arg(long, default_value_t = 2.0)]
        q: f64,
        #[arg(long = "T", default_value_t = 180.0)]
        block_len: f64,
        #[arg(long, default_value_t = 200)]
        trials: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Time-sharing envelope of the high-SNR rate at total rate F.
    Envelope {
        #[arg(long)]
        rate: f64,
        #[arg(long = "L")]
        antennas: usize,
        #[arg(long, default_value_t = 2.0)]
        q: f64,
        #[arg(long = "T", default_value_t = 180.0)]
        block_len: f64,
        #[arg(long, default_value_t = 200)]
        trials: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Error level reachable with proportional feedback.
    XiBound {
        #[arg(long)]
        rho: f64,
        #[arg(long, default_value_t = 0.03)]
        r: f64,
        #[arg(long = "T", default_value_t = 180.0)]
        block_len: f64,
        #[arg(long, default_value_t = 4.0)]
        alpha: f64,
        #[arg(long, default_value_t = 2.0)]
        q: f64,
        #[arg(long, default_value_t = 3.0)]
        b: f64,
        /// Uplink rate offset.
        #[arg(long, default_value_t = 0.0)]
        g: f64,
    },
    /// Interference of sites outside the 55-site patch, per unit SNR.
    ResidualCoeff {
        #[arg(long, default_value_t = 4.0)]
        alpha: f64,
        #[arg(long, default_value_t = 400)]
        horizon: usize,
    },
}

/// Squared LQ diagonals of perfectly known channels on the standard network.
fn diag_samples(trials: usize, seed: u64) -> Result<(Vec<f64>, Vec<f64>)> {
    ensure!(trials > 0, "trials must be positive");
    let net = build_network(&TopologyParams {
        residual: Some(0.0),
        ..Default::default()
    })?;
    let perfect: Vec<FeedbackAllocation> = (0..net.gains.rows())
        .map(|i| FeedbackAllocation::perfect(i, net.gains.row(i), 180.0))
        .collect();
    let mut diag = Vec::new();
    for b in 0..trials as u64 {
        diag.extend(block_dp_gains(&net.gains, &perfect, seed, b)?);
    }
    Ok((net.reference_row, diag))
}

pub fn run(what: Eval) -> Result<()> {
    match what {
        Eval::Th1 { block_len, antennas, r } => {
            println!("exchange_ratio {}", th1_exchange_ratio(block_len, antennas));
            println!("multiplexing {}", th1_multiplexing(r, block_len, antennas));
        }
        Eval::Th2 { alpha } => println!("{}", th2_exponent(alpha)?),
        Eval::Prop1Slope { alpha, q, block_len, antennas } => {
            ensure!(antennas > 0, "L must be positive");
            println!("{}", prop1_slope(alpha, q, block_len, antennas));
        }
        Eval::Coherence { doppler, delay, factor } => {
            println!("{}", coherence_block(doppler, delay, factor)?.symbols);
        }
        Eval::Breve { rate, antennas, q, block_len, trials, seed } => {
            let (row, diag) = diag_samples(trials, seed)?;
            println!("{}", breve_rate(rate, &row, antennas, q, block_len, &diag)?);
        }
        Eval::Envelope { rate, antennas, q, block_len, trials, seed } => {
            let (row, diag) = diag_samples(trials, seed)?;
            breve_rate(0.0, &row, antennas, q, block_len, &diag)?;
            let f = |x: f64| breve_rate(x, &row, antennas, q, block_len, &diag).expect("validated above");
            println!("{}", time_sharing_envelope(f, rate));
        }
        Eval::XiBound { rho, r, block_len, alpha, q, b, g } => {
            println!("{}", xi_upper_bound(rho, r, block_len, alpha, q, b, g)?);
        }
        Eval::ResidualCoeff { alpha, horizon } => {
            let topo = NetworkTopology::standard_55()?.with_alpha(alpha);
            println!("{}", residual_interference_coeff(&topo, 0, horizon)?);
        }
    }
    Ok(())
}
