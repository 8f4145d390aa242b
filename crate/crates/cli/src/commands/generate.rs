//! `pll generate`: corrupt supervised data into candidate label sets.

use std::path::PathBuf;

use pll_core::generate::{GenerationModel, UniformGenerationModel};
use pll_core::io::{load_idx_images, load_supervised_csv, load_tmatrix, save_partial_csv};
use pll_core::{generate_partial_dataset, Error, Result};

#[derive(clap::Args)]
pub struct Args {
    /// Supervised CSV input (feature columns, then an integer label column)
    #[arg(long = "in", value_name = "CSV", conflicts_with_all = ["idx_images", "idx_labels"])]
    input: Option<PathBuf>,

    /// Big-endian IDX image file (requires --idx-labels)
    #[arg(long, value_name = "FILE", requires = "idx_labels")]
    idx_images: Option<PathBuf>,

    /// Big-endian IDX label file (requires --idx-images)
    #[arg(long, value_name = "FILE", requires = "idx_images")]
    idx_labels: Option<PathBuf>,

    /// Override the label count (CSV input only; default max label + 1)
    #[arg(long)]
    k: Option<usize>,

    /// Output partial-label CSV (true labels preserved in a "true" column)
    #[arg(long, value_name = "CSV")]
    out: PathBuf,

    /// Generation model: "uniform" or "tmatrix=<file.json>"
    #[arg(long, default_value = "uniform")]
    model: String,

    #[arg(long, default_value_t = 0)]
    seed: u64,
}

pub fn run(args: Args) -> Result<i32> {
    let ds = match (&args.input, &args.idx_images, &args.idx_labels) {
        (Some(csv), None, None) => load_supervised_csv(csv, args.k)?,
        (None, Some(images), Some(labels)) => load_idx_images(images, labels)?,
        _ => {
            return Err(Error::Config(
                "provide either --in <csv> or --idx-images with --idx-labels".into(),
            ))
        }
    };
    log::info!("loaded {} examples, d={}, k={}", ds.n(), ds.d(), ds.k());

    let model = parse_model(&args.model, ds.k())?;
    let pds = generate_partial_dataset(&ds, &model, args.seed)?;
    save_partial_csv(&pds, &args.out)?;

    println!(
        "wrote {} examples (k={}, d={}) to {}",
        pds.n(),
        pds.k(),
        pds.d(),
        args.out.display()
    );
    println!("average candidate-set size: {:.4}", pds.avg_candidates());
    if let GenerationModel::Matrix(tm) = &model {
        println!(
            "transition entropy: {:.6}",
            tm.normalized_entropy()?.entropy()
        );
    }
    Ok(0)
}

fn parse_model(spec: &str, k: usize) -> Result<GenerationModel> {
    if spec == "uniform" {
        return Ok(GenerationModel::Uniform(UniformGenerationModel::new(k)?));
    }
    if let Some(path) = spec.strip_prefix("tmatrix=") {
        let tm = load_tmatrix(path)?;
        if tm.k() != k {
            return Err(Error::Parse {
                path: path.to_string(),
                line: 0,
                msg: format!("matrix is for k={}, but the data has k={k}", tm.k()),
            });
        }
        return Ok(GenerationModel::Matrix(tm));
    }
    Err(Error::Config(format!(
        "unknown generation model {spec:?}; use \"uniform\" or \"tmatrix=<file.json>\""
    )))
}
