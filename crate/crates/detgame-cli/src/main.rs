//! `detgame`: equilibria, optimal strategies, and error exponents of
//! adversarial binary hypothesis-testing games, from the command line.
//!
//! Every subcommand reads one config file, computes, and prints a single
//! output document to standard output. Exit code 0 means success, 2 a
//! configuration or validation problem, 3 a blown resource budget.

mod config;
mod emit;
mod run;

use clap::{Parser, Subcommand};
use run::RunArgs;

#[derive(Parser)]
#[command(name = "detgame", version, about = "Adversarial hypothesis-testing games on finite alphabets")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Kullback-Leibler divergence between the two sources.
    Kl(RunArgs),
    /// Minimal expected distortion transporting p0 onto p1.
    Emd(RunArgs),
    /// Constrained divergence of p1 from p0 at budget delta0.
    Gendiv(RunArgs),
    /// False-negative exponent of the constrained game at floor lambda.
    NpExponent(RunArgs),
    /// The same exponent through the reduced single-ball program.
    NpExponentMetric(RunArgs),
    /// Payoff and error exponents of the cost-weighted game at tilt a.
    BayesExponent(RunArgs),
    /// Both limiting exponents of the game.
    Limits(RunArgs),
    /// Membership of p1 in the indistinguishability region around p0.
    Region(RunArgs),
    /// Indistinguishability membership over the whole simplex lattice.
    RegionSweep(RunArgs),
    /// One defense's acceptance probability and statistic at a given type.
    DefenseEval(RunArgs),
    /// Exact error probabilities of a defense at blocklength n.
    ExactError(RunArgs),
    /// Monte Carlo error estimates over a grid of blocklengths.
    Simulate(RunArgs),
    /// Draw dominant-attack outputs for a fixed input sequence.
    AttackSample(RunArgs),
}

impl Command {
    fn split(&self) -> (&'static str, &RunArgs) {
        match self {
            Command::Kl(a) => ("kl", a),
            Command::Emd(a) => ("emd", a),
            Command::Gendiv(a) => ("gendiv", a),
            Command::NpExponent(a) => ("np-exponent", a),
            Command::NpExponentMetric(a) => ("np-exponent-metric", a),
            Command::BayesExponent(a) => ("bayes-exponent", a),
            Command::Limits(a) => ("limits", a),
            Command::Region(a) => ("region", a),
            Command::RegionSweep(a) => ("region-sweep", a),
            Command::DefenseEval(a) => ("defense-eval", a),
            Command::ExactError(a) => ("exact-error", a),
            Command::Simulate(a) => ("simulate", a),
            Command::AttackSample(a) => ("attack-sample", a),
        }
    }
}

fn main() {
    let cli = Cli::parse();
    let (name, args) = cli.command.split();
    match run::run(name, args) {
        Ok(document) => println!("{document}"),
        Err(failure) => {
            eprintln!("error: {}", failure.message);
            std::process::exit(failure.code);
        }
    }
}
