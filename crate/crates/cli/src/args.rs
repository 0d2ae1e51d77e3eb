use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use dmd_core::equilibrium::{Order, DEFAULT_TOL};
use dmd_core::Protocol;

#[derive(Debug, Parser)]
#[command(
    name = "dmd",
    version,
    about = "Distributed rate-allocation mechanisms and their equilibria"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve the centralized problem and certify it by KKT residual.
    Solve(SolveArgs),
    /// Construct an equilibrium profile from the oracle solution and certify it.
    Ne(NeArgs),
    /// Run sequential best-response dynamics and record a trace.
    Dynamics(DynamicsArgs),
    /// Count message components per agent and check them against the formula.
    Dims(DimsArgs),
    /// Check an instance against the standing assumptions.
    Validate(InstanceArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ProtocolArg {
    Utp,
    Mmtp,
}

impl From<ProtocolArg> for Protocol {
    fn from(p: ProtocolArg) -> Self {
        match p {
            ProtocolArg::Utp => Protocol::Utp,
            ProtocolArg::Mmtp => Protocol::Mmtp,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OrderArg {
    Roundrobin,
    Random,
}

impl From<OrderArg> for Order {
    fn from(o: OrderArg) -> Self {
        match o {
            OrderArg::Roundrobin => Order::RoundRobin,
            OrderArg::Random => Order::Random,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum InitArg {
    Ne,
    Zero,
    Random,
}

#[derive(Debug, Clone, Args)]
pub struct InstanceArgs {
    #[arg(long)]
    pub instance: PathBuf,
    /// Override the protocol named in the instance file.
    #[arg(long, value_enum)]
    pub protocol: Option<ProtocolArg>,
    /// Add relay agents on link covers when link users are not connected.
    #[arg(long)]
    pub extended: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Write the JSON report here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct SolveArgs {
    #[command(flatten)]
    pub common: InstanceArgs,
    /// Required KKT residual.
    #[arg(long, default_value_t = 1e-8)]
    pub tol: f64,
}

#[derive(Debug, Clone, Args)]
pub struct NeArgs {
    #[command(flatten)]
    pub common: InstanceArgs,
    #[arg(long, default_value_t = DEFAULT_TOL)]
    pub tol: f64,
    /// Demand scale k: the profile demands k times the efficient rates.
    #[arg(long, default_value_t = 1.0)]
    pub scale: f64,
    /// Number of random unilateral deviations to try.
    #[arg(long, default_value_t = 0)]
    pub fuzz: usize,
    /// Largest change of a single component in a deviation.
    #[arg(long, default_value_t = 0.5)]
    pub radius: f64,
    /// Also write the id-keyed profile JSON here.
    #[arg(long)]
    pub profile_out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct DynamicsArgs {
    #[command(flatten)]
    pub common: InstanceArgs,
    #[arg(long, default_value_t = 50)]
    pub rounds: usize,
    #[arg(long, value_enum, default_value_t = OrderArg::Roundrobin)]
    pub order: OrderArg,
    #[arg(long, value_enum, default_value_t = InitArg::Random)]
    pub init: InitArg,
    /// Write one CSV row per best-response step.
    #[arg(long)]
    pub trace_csv: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct DimsArgs {
    #[arg(long, required_unless_present = "family")]
    pub instance: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub protocol: Option<ProtocolArg>,
    #[arg(long)]
    pub extended: bool,
    /// Instead of a file, count generated path instances of these sizes
    /// and fit a line to the totals.
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    pub family: Vec<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}
