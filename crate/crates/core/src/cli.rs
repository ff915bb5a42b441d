//! Command-line front end. Exit codes: 0 success, 1 pipeline error, 2 usage
//! error.

use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::correspondence::{estimate_detailed, FlowField};
use crate::error::{Error, Result};
use crate::fit::{fit, FitPair};
use crate::fusion::CloudContext;
use crate::geometry::{usfe_from_umbrella, PointCloud};
use crate::gradsuite::run_suite;
use crate::io::{self, Config};
use crate::metrics::{count_params_flops, EvalReport};
use crate::params::{init_weights, Weights};

#[derive(Parser, Debug)]
#[command(name = "pvflow", version, about = "Point-voxel fusion scene-flow estimation")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Global {
    /// `key = value` configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one configuration key, e.g. `--set epsilon=0.05`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// Worker threads (0 = all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Format {
    Kv,
    Json,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Estimate scene flow from a source to a target cloud.
    Estimate {
        #[arg(long)]
        source: PathBuf,
        #[arg(long)]
        target: PathBuf,
        /// PVWT weights; seeded random weights when omitted.
        #[arg(long)]
        weights: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Write the soft corresponding points as an SFPC cloud.
        #[arg(long)]
        dump_correspondences: Option<PathBuf>,
        /// Write a per-point CSV (position, flow, and error when `--gt` is given).
        #[arg(long)]
        plot: Option<PathBuf>,
        /// Ground-truth flow used by `--plot`.
        #[arg(long)]
        gt: Option<PathBuf>,
    },
    /// Compare a predicted flow with ground truth.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long, value_enum, default_value = "kv")]
        format: Format,
        /// Also report analytic parameter and FLOP counts for the config.
        #[arg(long)]
        model_size: bool,
    },
    /// Write the surface features of a cloud as an SFPC file.
    Features {
        #[arg(long)]
        cloud: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        weights: Option<PathBuf>,
    },
    /// Run the finite-difference gradient suite; exits 0 iff every check passes.
    Gradcheck,
    /// Self-supervised fitting on `{scene}_s.sfpc` / `{scene}_t.sfpc` pairs.
    Fit {
        #[arg(long)]
        pairs: PathBuf,
        /// Output weights.
        #[arg(long)]
        weights: PathBuf,
        /// Starting weights; seeded random weights when omitted.
        #[arg(long)]
        init: Option<PathBuf>,
        /// Optimizer steps (defaults to the `fit_steps` key).
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Write seeded random weights.
    InitWeights {
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Parses `argv` (including the program name), runs the command and returns
/// the process exit code. Normal output goes to `out`, diagnostics to `err`.
pub fn run<I, S>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let text = e.render().to_string();
            let _ = if code == 0 {
                write!(out, "{text}")
            } else {
                write!(err, "{text}")
            };
            return code;
        }
    };
    let config = match load_config(&cli.global) {
        Ok(c) => c,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            return 2;
        }
    };
    let threads = cli.global.threads.unwrap_or(config.threads);
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(threads).build() {
        Ok(p) => p,
        Err(e) => {
            let _ = writeln!(err, "error: cannot start worker threads: {e}");
            return 1;
        }
    };
    // the pool's workers need `Send` sinks, so output is buffered and
    // forwarded once the command finishes
    let (mut out_buf, mut err_buf) = (Vec::new(), Vec::new());
    let result = pool.install(|| dispatch(cli.command, &config, &mut out_buf, &mut err_buf));
    let _ = out.write_all(&out_buf);
    let _ = err.write_all(&err_buf);
    match result {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            1
        }
    }
}

fn load_config(g: &Global) -> Result<Config> {
    let mut c = Config::default();
    if let Some(p) = &g.config {
        c.apply_text(&Config::read_text(p)?)?;
    }
    for kv in &g.overrides {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got {kv:?}")))?;
        c.set(k, v)?;
    }
    c.validate()?;
    Ok(c)
}

fn weights_or_init(path: Option<&Path>, config: &Config) -> Result<Weights> {
    match path {
        Some(p) => io::load_weights(p, config),
        None => Ok(init_weights(config, config.seed)),
    }
}

fn io_err(e: std::io::Error) -> Error {
    Error::io("<output>", e)
}

fn dispatch(cmd: Command, config: &Config, out: &mut Vec<u8>, err: &mut Vec<u8>) -> Result<i32> {
    match cmd {
        Command::Estimate {
            source,
            target,
            weights,
            out: out_path,
            dump_correspondences,
            plot,
            gt,
        } => {
            let s = io::read_cloud(&source)?;
            let t = io::read_cloud(&target)?;
            let w = weights_or_init(weights.as_deref(), config)?;
            let est = estimate_detailed(&s, &t, &w, config)?;
            if !est.plan.converged {
                let _ = writeln!(
                    err,
                    "warning: NonConvergence: transport marginals off by {:.3e} after {} iterations",
                    est.plan.marginal_error(),
                    est.plan.iterations
                );
            }
            if !est.correspondences.zero_rows.is_empty() {
                let _ = writeln!(
                    err,
                    "warning: ZeroRow: {} source points had no transport mass",
                    est.correspondences.zero_rows.len()
                );
            }
            io::write_flow(&out_path, &est.flow)?;
            if let Some(p) = dump_correspondences {
                io::write_sfpc(&p, &PointCloud::new(est.correspondences.points.clone())?)?;
            }
            if let Some(p) = plot {
                let gt = gt.as_deref().map(io::read_flow).transpose()?;
                write_plot(&p, &s, &est.flow, gt.as_ref())?;
            }
            writeln!(
                out,
                "wrote {} flow vectors to {}",
                est.flow.len(),
                out_path.display()
            )
            .map_err(io_err)?;
            Ok(0)
        }
        Command::Eval {
            pred,
            gt,
            format,
            model_size,
        } => {
            let p = io::read_flow(&pred)?;
            let g = io::read_flow(&gt)?;
            let mut report = EvalReport::new(&p, &g)?;
            if model_size {
                report = report.with_model_size(count_params_flops(config, p.len()));
            }
            match format {
                Format::Kv => write!(out, "{}", report.to_text()),
                Format::Json => writeln!(out, "{}", report.to_json()),
            }
            .map_err(io_err)?;
            Ok(0)
        }
        Command::Features {
            cloud,
            out: out_path,
            weights,
        } => {
            let c = io::read_cloud(&cloud)?;
            let w = weights_or_init(weights.as_deref(), config)?;
            let ctx = CloudContext::new(&c, config)?;
            let feats = usfe_from_umbrella(&ctx.umbrella, &w.usfe)?;
            let with = PointCloud::with_features(c.positions().to_vec(), Some(feats.0))?;
            io::write_sfpc(&out_path, &with)?;
            writeln!(
                out,
                "wrote {}×{} surface features to {}",
                c.len(),
                config.d_s,
                out_path.display()
            )
            .map_err(io_err)?;
            Ok(0)
        }
        Command::Gradcheck => {
            let reports = run_suite()?;
            let mut failed = 0;
            for r in &reports {
                if !r.passed() {
                    failed += 1;
                }
                writeln!(out, "{r}").map_err(io_err)?;
            }
            writeln!(out, "{} checks, {failed} failed", reports.len()).map_err(io_err)?;
            Ok(if failed == 0 { 0 } else { 1 })
        }
        Command::Fit {
            pairs,
            weights,
            init,
            steps,
        } => {
            let list = find_pairs(&pairs)?;
            if list.is_empty() {
                return Err(Error::Config(format!(
                    "no *_s.sfpc / *_t.sfpc pairs in {}",
                    pairs.display()
                )));
            }
            let mut fit_pairs = Vec::with_capacity(list.len());
            for (s, t) in &list {
                fit_pairs.push(FitPair::new(&io::read_cloud(s)?, &io::read_cloud(t)?, config)?);
            }
            let start = weights_or_init(init.as_deref(), config)?;
            let steps = steps.unwrap_or(config.fit_steps);
            let every = (steps / 10).max(1);
            let report = fit(&fit_pairs, &start, config, steps, |i, l| {
                if i % every == 0 || i == steps {
                    let _ = writeln!(out, "step {i} loss {l:.6e}");
                }
            })?;
            io::save_weights(&weights, &report.weights)?;
            let _ = writeln!(
                out,
                "loss {:.6e} -> {:.6e}; wrote {}",
                report.initial_loss(),
                report.final_loss(),
                weights.display()
            );
            Ok(0)
        }
        Command::InitWeights { seed, out: out_path } => {
            let w = init_weights(config, seed.unwrap_or(config.seed));
            io::save_weights(&out_path, &w)?;
            writeln!(
                out,
                "wrote {} parameters to {}",
                w.param_count(),
                out_path.display()
            )
            .map_err(io_err)?;
            Ok(0)
        }
    }
}

/// `(source, target)` paths for every `{scene}_s.sfpc` with a matching
/// `{scene}_t.sfpc`, sorted by scene name.
pub fn find_pairs(dir: &Path) -> Result<Vec<(PathBuf, PathBuf)>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut out = Vec::new();
    for e in entries {
        let path = e.map_err(|e| Error::io(dir, e))?.path();
        let Some(name) = path.file_name().and_then(|n| n.to_str()) else {
            continue;
        };
        if let Some(scene) = name.strip_suffix("_s.sfpc") {
            let t = dir.join(format!("{scene}_t.sfpc"));
            if t.exists() {
                out.push((path.clone(), t));
            }
        }
    }
    out.sort();
    Ok(out)
}

fn write_plot(path: &Path, source: &PointCloud, flow: &FlowField, gt: Option<&FlowField>) -> Result<()> {
    let mut s = String::new();
    if let Some(g) = gt {
        if g.len() != flow.len() {
            return Err(Error::shape(format!(
                "ground truth has {} vectors, prediction {}",
                g.len(),
                flow.len()
            )));
        }
        s.push_str("x,y,z,fx,fy,fz,gx,gy,gz,error\n");
    } else {
        s.push_str("x,y,z,fx,fy,fz\n");
    }
    for (i, (p, f)) in source.positions().iter().zip(&flow.vectors).enumerate() {
        let _ = write!(s, "{},{},{},{},{},{}", p[0], p[1], p[2], f[0], f[1], f[2]);
        if let Some(g) = gt {
            let gv = g.vectors[i];
            let e = ((f[0] - gv[0]).powi(2) + (f[1] - gv[1]).powi(2) + (f[2] - gv[2]).powi(2)).sqrt();
            let _ = write!(s, ",{},{},{},{}", gv[0], gv[1], gv[2], e);
        }
        s.push('\n');
    }
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}
