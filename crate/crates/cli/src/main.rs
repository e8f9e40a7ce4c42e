use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use facewarp::energy::EnergyWeights;
use facewarp::pipeline::{run, RunConfig};
use facewarp::{Error, Mode};

/// Correct wide-angle face distortion in a video with spatio-temporal mesh warping.
#[derive(Debug, Parser)]
#[command(name = "facewarp", version)]
struct Args {
    /// Input frame pattern, printf style (e.g. `in/%04d.png`).
    #[arg(long)]
    frames: String,

    /// Annotations JSON (camera, faces, lines).
    #[arg(long)]
    annotations: PathBuf,

    /// Output directory.
    #[arg(long)]
    out: PathBuf,

    /// `full` solves all frames jointly; `sequential` solves frame by frame.
    #[arg(long, default_value = "full")]
    mode: Mode,

    /// Mesh resolution as COLSxROWS.
    #[arg(long, default_value = "33x25", value_parser = parse_grid)]
    grid: (usize, usize),

    /// Override an energy weight, e.g. `lambda_l=32`. Repeatable.
    #[arg(long = "weight", value_name = "NAME=VALUE")]
    weights: Vec<String>,

    /// Skip rendering warped frames.
    #[arg(long)]
    no_render: bool,

    /// Write meshes.csv and latents.csv to the output directory.
    #[arg(long)]
    export_mesh: bool,

    /// Metrics JSON path [default: <out>/metrics.json].
    #[arg(long, value_name = "PATH")]
    export_metrics: Option<PathBuf>,

    /// Dump the assembled sparse system as triplets.
    #[arg(long, value_name = "PATH")]
    dump_system: Option<PathBuf>,

    /// Worker threads (0 = all cores).
    #[arg(long, default_value_t = 0)]
    threads: usize,

    /// File number of the first frame.
    #[arg(long, default_value_t = 0)]
    first_frame: usize,

    /// Relative gradient tolerance of the solver.
    #[arg(long, default_value_t = 1e-8)]
    tol: f64,
}

fn parse_grid(s: &str) -> Result<(usize, usize), String> {
    let (c, r) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected COLSxROWS, got '{s}'"))?;
    let c = c.trim().parse().map_err(|_| format!("bad column count in '{s}'"))?;
    let r = r.trim().parse().map_err(|_| format!("bad row count in '{s}'"))?;
    Ok((c, r))
}

fn config(args: Args) -> Result<RunConfig, Error> {
    let mut weights = EnergyWeights::default();
    for w in &args.weights {
        let (name, value) = w
            .split_once('=')
            .ok_or_else(|| Error::InvalidArgument(format!("weight '{w}' is not NAME=VALUE")))?;
        let value: f64 = value
            .trim()
            .parse()
            .map_err(|_| Error::InvalidArgument(format!("weight '{w}' has a non-numeric value")))?;
        weights.set(name.trim(), value)?;
    }
    if !(args.tol > 0.0) {
        return Err(Error::InvalidArgument(format!("tolerance must be positive, got {}", args.tol)));
    }
    let mut c = RunConfig::new(args.frames, args.annotations, args.out);
    c.mode = args.mode;
    c.grid = args.grid;
    c.weights = weights;
    c.lsq.tol = args.tol;
    c.render = !args.no_render;
    c.export_mesh = args.export_mesh;
    c.export_metrics = args.export_metrics;
    c.dump_system = args.dump_system;
    c.first_frame = args.first_frame;
    Ok(c)
}

fn fail(kind: &str, message: &str) -> ExitCode {
    let err = serde_json::json!({ "error": { "kind": kind, "message": message } });
    eprintln!("{err}");
    ExitCode::FAILURE
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let args = Args::parse();
    if args.threads > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(args.threads).build_global() {
            return fail("invalid_argument", &e.to_string());
        }
    }
    let result = config(args).and_then(|c| run(&c));
    match result {
        Ok(summary) => {
            let m = &summary.metrics;
            log::info!(
                "{} frames, {} iterations, energy {:.6e}, {:.0} ms",
                m.frames,
                m.solver.iterations,
                m.energies.total,
                m.timings_ms.total
            );
            ExitCode::SUCCESS
        }
        Err(e) => fail(e.kind(), &e.to_string()),
    }
}
