//! Runs the phantom benchmark once and prints the report.
//!
//! `cargo run --release --example bench -- [semi|labeled-only|supervised] [seed]`

use std::time::Instant;

use evseg::bench::{run_benchmark, BenchmarkConfig};

fn main() {
    let mut args = std::env::args().skip(1);
    let mut config = match args.next().as_deref() {
        Some("labeled-only") => BenchmarkConfig::labeled_only(),
        Some("supervised") => BenchmarkConfig::supervised(),
        _ => BenchmarkConfig::default(),
    };
    if let Some(seed) = args.next().and_then(|s| s.parse().ok()) {
        config.train.seed = seed;
    }
    let start = Instant::now();
    let (outcome, report) = run_benchmark(&config).expect("benchmark run");
    for e in &outcome.log.epochs {
        println!("{e:?}");
    }
    println!("{report:#?}");
    println!("kappa band/interior {:.3}", report.kappa_ratio());
    println!("elapsed {:.1}s", start.elapsed().as_secs_f64());
}
