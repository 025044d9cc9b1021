//! Regenerates the shipped fixture corpus.

use std::path::PathBuf;
use std::process::ExitCode;

use auxline::corpus::{write_fixture_corpus, FixtureNoise};
use clap::Parser;

#[derive(Parser)]
#[command(name = "make-fixtures", about = "Write a synthetic fixture corpus")]
struct Args {
    #[arg(long, default_value = "fixtures/corpus")]
    out: PathBuf,
    #[arg(long, default_value_t = 150)]
    easy: usize,
    #[arg(long, default_value_t = 152)]
    hard: usize,
    #[arg(long, default_value_t = 2024)]
    seed: u64,
}

fn main() -> ExitCode {
    let a = Args::parse();
    if a.out.exists() && a.out.read_dir().map(|mut d| d.next().is_some()).unwrap_or(true) {
        eprintln!("{}: directory is not empty", a.out.display());
        return ExitCode::from(3);
    }
    match write_fixture_corpus(&a.out, a.easy, a.hard, FixtureNoise::default(), a.seed) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(3)
        }
    }
}
