use anyhow::Result;
use clap::Subcommand;

mod fid;
mod gen;
mod prep;
mod serve;
mod stats;
mod train;
mod tsne;

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Screen a directory of radiographs (or synthesize one) and run the
    /// crop, resize and denoise chain.
    Prep(prep::PrepArgs),
    /// Train a generator/critic pair from a preset, a config file or flags.
    Train(train::TrainArgs),
    /// Sample images from a checkpoint.
    Gen(gen::GenArgs),
    /// Fréchet distances of candidate image sets against a reference set.
    Fid(fid::FidArgs),
    /// Two-dimensional t-SNE embedding of feature sets.
    Tsne(tsne::TsneArgs),
    /// Score tables, Kruskal-Wallis and Dunn tests from an expert score CSV.
    Stats(stats::StatsArgs),
    /// Run the blinded rating service.
    Serve(serve::ServeArgs),
}

impl Command {
    pub fn execute(&self, argv: &[String]) -> Result<()> {
        match self {
            Command::Prep(a) => prep::run(a, argv),
            Command::Train(a) => train::run(a, argv),
            Command::Gen(a) => gen::run(a, argv),
            Command::Fid(a) => fid::run(a, argv),
            Command::Tsne(a) => tsne::run(a, argv),
            Command::Stats(a) => stats::run(a, argv),
            Command::Serve(a) => serve::run(a, argv),
        }
    }
}
