//! `pll entropy`: entropy of a generation transition matrix, either loaded
//! from JSON or the uniform-equivalent matrix for a given label count.

use std::path::PathBuf;

use pll_core::generate::{uniform_marginal_inclusion, uniform_marginal_tmatrix};
use pll_core::io::load_tmatrix;
use pll_core::{Error, Result, TransitionMatrixModel};

#[derive(clap::Args)]
pub struct Args {
    /// Transition matrix JSON ({"k": ..., "T": [[...], ...]})
    #[arg(long, value_name = "FILE", conflicts_with = "uniform")]
    tmatrix: Option<PathBuf>,

    /// Use the uniform generation model's marginal inclusion probability
    /// as every off-diagonal entry, for this label count
    #[arg(long, value_name = "K")]
    uniform: Option<usize>,
}

pub fn run(args: Args) -> Result<i32> {
    let model: TransitionMatrixModel = match (&args.tmatrix, args.uniform) {
        (Some(path), None) => load_tmatrix(path)?,
        (None, Some(k)) => {
            let m = uniform_marginal_tmatrix(k)?;
            println!(
                "uniform-equivalent off-diagonal inclusion probability at k={k}: {:.10}",
                uniform_marginal_inclusion(k)?
            );
            m
        }
        _ => {
            return Err(Error::Config(
                "provide exactly one of --tmatrix <file> or --uniform <k>".into(),
            ))
        }
    };

    let normalized = model.normalized_entropy()?;
    println!("entropy: {:.6}", normalized.entropy());
    if args.uniform == Some(10) {
        println!(
            "note: the commonly reported value for this setting is 2.257; the exact \
             closed form gives {:.6} (difference {:.3})",
            normalized.entropy(),
            (normalized.entropy() - 2.257).abs()
        );
    }

    println!("row-normalized transition matrix:");
    for row in normalized.p().rows() {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:.6}")).collect();
        println!("  {}", cells.join(" "));
    }
    Ok(0)
}
