mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// Divergence-minimization fitting of finite mixtures.
#[derive(Parser)]
#[command(name = "dmmix", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Fit settings shared by several commands.
#[derive(Args, Debug, Default)]
pub struct FitArgs {
    /// poisson, poisson_gamma, poisson_lognormal or normal
    #[arg(long)]
    pub family: Option<String>,
    /// kl (em), kl_calibrated, hd, ned, vned, bwhd, cr, pd
    #[arg(long)]
    pub div: Option<String>,
    /// Tuning constant for bwhd (tau) or cr/pd (alpha)
    #[arg(long)]
    pub div_param: Option<f64>,
    /// generic_phi, anchored_phi, hmix_squared, hmix_dmmix, vned_weighted,
    /// closed_form_em or nelmix
    #[arg(long)]
    pub pi_update: Option<String>,
    #[arg(long)]
    pub max_iters: Option<usize>,
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// k-means restarts (a trimmed k-means start is always added)
    #[arg(long)]
    pub restarts: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a K-component mixture to a column of observations
    Fit {
        /// CSV with one column of observations
        data: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        fit: FitArgs,
        #[arg(long = "K", visible_alias = "k")]
        k: Option<usize>,
        /// empirical, triangular, poisson, binomial or negbinomial
        #[arg(long)]
        kernel: Option<String>,
        /// Half-width of the triangular kernel
        #[arg(long)]
        kernel_a: Option<u32>,
        /// Kernel bandwidth c (default c = n^(-2/5))
        #[arg(long)]
        bandwidth: Option<f64>,
        /// kmeans or user
        #[arg(long)]
        init: Option<String>,
        /// JSON mixture used as the starting value with --init user
        #[arg(long)]
        theta0: Option<PathBuf>,
        /// Result file (stdout if absent)
        #[arg(long, short)]
        output: Option<PathBuf>,
    },
    /// Simulate replicated datasets and tabulate estimates
    Simulate {
        #[arg(long)]
        config: Option<PathBuf>,
        /// JSON mixture to sample from
        #[arg(long)]
        truth: Option<PathBuf>,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        reps: Option<usize>,
        /// Comma-separated divergences, e.g. em,hd,vned
        #[arg(long, value_delimiter = ',')]
        methods: Option<Vec<String>>,
        /// Comma-separated contamination levels
        #[arg(long, value_delimiter = ',')]
        eps: Option<Vec<f64>>,
        /// Contaminating value
        #[arg(long)]
        value: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        restarts: Option<usize>,
        /// Directory receiving the output files
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Choose the number of components by split-sample GDIC voting
    Select {
        data: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        fit: FitArgs,
        #[arg(long)]
        k_max: Option<usize>,
        #[arg(long)]
        splits: Option<usize>,
        #[arg(long)]
        split_ratio: Option<f64>,
        #[arg(long, short)]
        output: Option<PathBuf>,
        /// Per-split GDIC table (CSV)
        #[arg(long)]
        table: Option<PathBuf>,
    },
    /// Bias of the estimates under point-mass contamination
    Robust {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        truth: Option<PathBuf>,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        reps: Option<usize>,
        #[arg(long, value_delimiter = ',')]
        methods: Option<Vec<String>>,
        #[arg(long, value_delimiter = ',')]
        eps: Option<Vec<f64>>,
        #[arg(long)]
        value: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        restarts: Option<usize>,
        #[arg(long, short)]
        output: Option<PathBuf>,
    },
    /// Fisher and sandwich covariances, deviance statistic, CLT harness
    Infer {
        data: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        fit: FitArgs,
        #[arg(long = "K", visible_alias = "k")]
        k: Option<usize>,
        /// Use this estimate instead of fitting the data
        #[arg(long)]
        theta: Option<PathBuf>,
        /// Report 2n(D(theta_ref) - D(theta_hat))
        #[arg(long)]
        wilks: bool,
        #[arg(long)]
        theta_ref: Option<PathBuf>,
        /// Gradient norm above which the estimate is not treated as stationary
        #[arg(long)]
        grad_tol: Option<f64>,
        /// Run the Monte Carlo CLT harness at this truth instead
        #[arg(long)]
        truth: Option<PathBuf>,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        reps: Option<usize>,
        #[arg(long, short)]
        output: Option<PathBuf>,
    },
    /// Segment a grayscale image with a Poisson mixture
    Segment {
        /// PGM (P2 or P5) or a CSV pixel list
        image: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        fit: FitArgs,
        #[arg(long = "K", visible_alias = "k")]
        k: Option<usize>,
        /// Replace pixels with this probability by clipped Poisson draws
        #[arg(long)]
        contamination: Option<f64>,
        #[arg(long)]
        contamination_mean: Option<f64>,
        /// Comma-separated gray value per class
        #[arg(long, value_delimiter = ',')]
        display: Option<Vec<u8>>,
        /// Fitted mixture and fit report (JSON)
        #[arg(long, short)]
        output: Option<PathBuf>,
        /// Label image as CSV
        #[arg(long)]
        labels: Option<PathBuf>,
        /// Re-colored PGM
        #[arg(long)]
        recolored: Option<PathBuf>,
    },
    /// Discrete-kernel diagnostics and ISE of a smoothed estimate
    Kernels {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        kernel: Option<String>,
        #[arg(long)]
        kernel_a: Option<u32>,
        #[arg(long, value_delimiter = ',')]
        c: Option<Vec<f64>>,
        #[arg(long)]
        center_max: Option<i64>,
        /// Observations for the ISE report
        #[arg(long)]
        data: Option<PathBuf>,
        /// JSON mixture to compare the estimate with
        #[arg(long)]
        truth: Option<PathBuf>,
        #[arg(long, short)]
        output: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match cli.command {
        Command::Fit { data, config, fit, k, kernel, kernel_a, bandwidth, init, theta0, output } => {
            commands::fit(commands::FitOpts { data, config, fit, k, kernel, kernel_a, bandwidth, init, theta0, output })
        }
        Command::Simulate { config, truth, n, reps, methods, eps, value, seed, restarts, out_dir } => {
            commands::simulate(commands::SimOpts { config, truth, n, reps, methods, eps, value, seed, restarts, out_dir })
        }
        Command::Select { data, config, fit, k_max, splits, split_ratio, output, table } => {
            commands::select(commands::SelectOpts { data, config, fit, k_max, splits, split_ratio, output, table })
        }
        Command::Robust { config, truth, n, reps, methods, eps, value, seed, restarts, output } => {
            commands::robust(commands::RobustOpts { config, truth, n, reps, methods, eps, value, seed, restarts, output })
        }
        Command::Infer { data, config, fit, k, theta, wilks, theta_ref, grad_tol, truth, n, reps, output } => {
            commands::infer(commands::InferOpts {
                data,
                config,
                fit,
                k,
                theta,
                wilks,
                theta_ref,
                grad_tol,
                truth,
                n,
                reps,
                output,
            })
        }
        Command::Segment { image, config, fit, k, contamination, contamination_mean, display, output, labels, recolored } => {
            commands::segment(commands::SegmentOpts {
                image,
                config,
                fit,
                k,
                contamination,
                contamination_mean,
                display,
                output,
                labels,
                recolored,
            })
        }
        Command::Kernels { config, kernel, kernel_a, c, center_max, data, truth, output } => {
            commands::kernels(commands::KernelOpts { config, kernel, kernel_a, c, center_max, data, truth, output })
        }
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(commands::exit_code(&e))
        }
    }
}
