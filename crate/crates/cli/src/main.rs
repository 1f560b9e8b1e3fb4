//! `wulff`: command-line front end of `wulff-core`.
//!
//! Exit status is 0 on success, 2 for invalid input and 3 for numerical
//! failures. Without `--out` the JSON report goes to stdout.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Map, Value};
use wulff_core::io::{
    execute, exit_status, parse_list, run_command, Command, ExperimentConfig, Format, EXIT_VALIDATION,
};
use wulff_core::{Error, NormSpec, Result};

#[derive(Parser)]
#[command(name = "wulff", version, about = "Experiments for the Finsler N-Liouville equation")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Args)]
struct Global {
    /// Experiment config; for family commands a bare family file also works.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Norm as a JSON file or inline JSON, e.g. '{"family":"q_norm","q":3,"dim":2}'.
    #[arg(long, global = true)]
    norm: Option<String>,
    #[arg(long = "N", global = true)]
    n: Option<usize>,
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// json or csv; inferred from a `.csv` output path.
    #[arg(long, global = true)]
    format: Option<String>,
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Closed-form against numeric dual norm.
    Dual {
        /// Points as `x,y;x,y`.
        #[arg(long)]
        points: Option<String>,
        #[arg(long)]
        random: Option<usize>,
        #[arg(long)]
        tol: Option<f64>,
    },
    /// Volume of the unit Wulff ball.
    Kappa {
        /// closed_form, quadrature or monte_carlo.
        #[arg(long)]
        method: Option<String>,
        #[arg(long)]
        tol: Option<f64>,
        #[arg(long)]
        samples: Option<u64>,
    },
    /// Mass of centered bubbles.
    BubbleMass {
        #[arg(long)]
        lambda: Option<String>,
        #[arg(long = "V0")]
        v0: Option<f64>,
        #[arg(long)]
        radius: Option<f64>,
        #[arg(long)]
        quad_tol: Option<f64>,
    },
    /// Radial Dirichlet problem on a Wulff ball.
    RadialSolve {
        /// const:<c>, bubble:lambda=<λ>[,V0=<v>] or csv:<path>.
        #[arg(long)]
        rhs: Option<String>,
        #[arg(long = "R")]
        big_r: Option<f64>,
        #[arg(long)]
        points: Option<usize>,
    },
    /// Newton solve on a cube grid.
    Solve {
        #[arg(long)]
        grid: Option<usize>,
        /// `[lo,hi]^N`.
        #[arg(long)]
        domain: Option<String>,
        /// const:<c>.
        #[arg(long = "V")]
        v: Option<String>,
        /// const:<c> or bubble:lambda=<λ>[,p=<x;y>].
        #[arg(long)]
        boundary: Option<String>,
        #[arg(long)]
        tol: Option<f64>,
        #[arg(long)]
        max_iter: Option<usize>,
    },
    /// Mass quantization over a family.
    Quantize {
        #[arg(long)]
        family: Option<PathBuf>,
        #[arg(long)]
        radii: Option<String>,
        #[arg(long)]
        quad_tol: Option<f64>,
    },
    /// Growth of `max u + C1 inf u` along a family.
    Supinf {
        #[arg(long)]
        family: Option<PathBuf>,
        /// `[lo,hi]^N`.
        #[arg(long)]
        sigma: Option<String>,
        #[arg(long = "C1")]
        c1: Option<f64>,
    },
    /// Sup/inf on Wulff spheres of an offset bubble.
    Harnack {
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long)]
        p: Option<String>,
        #[arg(long = "V0")]
        v0: Option<f64>,
        #[arg(long)]
        center: Option<String>,
        #[arg(long)]
        radii: Option<String>,
    },
    /// Singleness bound along a family.
    Singleness {
        #[arg(long)]
        family: Option<PathBuf>,
        #[arg(long)]
        a1: Option<String>,
        #[arg(long = "R")]
        big_r: Option<f64>,
        #[arg(long)]
        growth_tol: Option<f64>,
    },
}

impl Cmd {
    fn command(&self) -> Command {
        match self {
            Cmd::Dual { .. } => Command::Dual,
            Cmd::Kappa { .. } => Command::Kappa,
            Cmd::BubbleMass { .. } => Command::BubbleMass,
            Cmd::RadialSolve { .. } => Command::RadialSolve,
            Cmd::Solve { .. } => Command::Solve,
            Cmd::Quantize { .. } => Command::Quantize,
            Cmd::Supinf { .. } => Command::Supinf,
            Cmd::Harnack { .. } => Command::Harnack,
            Cmd::Singleness { .. } => Command::Singleness,
        }
    }

    /// Flags as `params` entries.
    fn params(&self) -> Result<Map<String, Value>> {
        let mut m = Map::new();
        let mut set = |k: &str, v: Option<Value>| {
            if let Some(v) = v {
                m.insert(k.to_string(), v);
            }
        };
        match self {
            Cmd::Dual { points, random, tol } => {
                set("points", points.as_deref().map(parse_points).transpose()?);
                set("random", random.map(Value::from));
                set("tol", tol.map(Value::from));
            }
            Cmd::Kappa { method, tol, samples } => {
                if let Some(kind) = method {
                    let mut v = json!({ "method": kind });
                    match kind.as_str() {
                        "quadrature" => v["tol"] = json!(tol.unwrap_or(1e-10)),
                        "monte_carlo" => {
                            v["samples"] = json!(samples.unwrap_or(10_000_000));
                        }
                        _ => {}
                    }
                    set("method", Some(v));
                }
            }
            Cmd::BubbleMass {
                lambda,
                v0,
                radius,
                quad_tol,
            } => {
                set("lambda", lambda.as_deref().map(list).transpose()?);
                set("V0", v0.map(Value::from));
                set("radius", radius.map(Value::from));
                set("quad_tol", quad_tol.map(Value::from));
            }
            Cmd::RadialSolve { rhs, big_r, points } => {
                set("rhs", rhs.clone().map(Value::from));
                set("R", big_r.map(Value::from));
                set("points", points.map(Value::from));
            }
            Cmd::Solve {
                grid,
                domain,
                v,
                boundary,
                tol,
                max_iter,
            } => {
                set("grid", grid.map(Value::from));
                set("domain", domain.clone().map(Value::from));
                set("V", v.clone().map(Value::from));
                set("boundary", boundary.clone().map(Value::from));
                let mut newton = Map::new();
                if let Some(t) = tol {
                    newton.insert("tol".into(), json!(t));
                }
                if let Some(k) = max_iter {
                    newton.insert("max_iter".into(), json!(k));
                }
                set("newton", (!newton.is_empty()).then_some(Value::Object(newton)));
            }
            Cmd::Quantize { family, radii, quad_tol } => {
                set("family", family.as_deref().map(read_json).transpose()?);
                set("radii", radii.as_deref().map(list).transpose()?);
                set("quad_tol", quad_tol.map(Value::from));
            }
            Cmd::Supinf { family, sigma, c1 } => {
                set("family", family.as_deref().map(read_json).transpose()?);
                set("sigma", sigma.as_deref().map(parse_box).transpose()?);
                set("C1", c1.map(Value::from));
            }
            Cmd::Harnack {
                lambda,
                p,
                v0,
                center,
                radii,
            } => {
                set("lambda", lambda.map(Value::from));
                set("p", p.as_deref().map(list).transpose()?);
                set("V0", v0.map(Value::from));
                set("center", center.as_deref().map(list).transpose()?);
                set("radii", radii.as_deref().map(list).transpose()?);
            }
            Cmd::Singleness {
                family,
                a1,
                big_r,
                growth_tol,
            } => {
                set("family", family.as_deref().map(read_json).transpose()?);
                set("a1", a1.as_deref().map(list).transpose()?);
                set("R", big_r.map(Value::from));
                set("growth_tol", growth_tol.map(Value::from));
            }
        }
        Ok(m)
    }
}

fn list(s: &str) -> Result<Value> {
    Ok(json!(parse_list(s)?))
}

fn parse_points(s: &str) -> Result<Value> {
    let points = s.split(';').map(parse_list).collect::<Result<Vec<_>>>()?;
    Ok(json!(points))
}

fn parse_box(s: &str) -> Result<Value> {
    let (lo, hi, n) = wulff_core::io::parse_cube(s)?;
    Ok(json!({ "lo": vec![lo; n], "hi": vec![hi; n] }))
}

fn read_json(path: &Path) -> Result<Value> {
    Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
}

fn parse_norm(s: &str) -> Result<NormSpec> {
    let text = if s.trim_start().starts_with('{') {
        s.to_string()
    } else {
        std::fs::read_to_string(s)?
    };
    Ok(serde_json::from_str(&text)?)
}

/// Config file, then flags.
fn build(cli: &Cli) -> Result<ExperimentConfig> {
    let command = cli.command.command();
    let mut config = match &cli.global.config {
        None => ExperimentConfig::new(command),
        Some(path) => {
            let value = read_json(path)?;
            if value.get("command").is_some() {
                let c: ExperimentConfig = serde_json::from_value(value)?;
                if c.command != command {
                    return Err(Error::InvalidArgument(format!(
                        "config is for {:?}, not {:?}",
                        c.command, command
                    )));
                }
                c
            } else if command.takes_family() {
                let mut c = ExperimentConfig::new(command);
                c.params = json!({ "family": value });
                c
            } else {
                return Err(Error::InvalidArgument("config has no `command` key".into()));
            }
        }
    };
    let g = &cli.global;
    if let Some(s) = &g.norm {
        config.norm = Some(parse_norm(s)?);
    }
    if g.n.is_some() {
        config.n = g.n;
    }
    if g.out.is_some() {
        config.out = g.out.clone();
    }
    if let Some(seed) = g.seed {
        config.seed = seed;
    }
    match g.format.as_deref() {
        Some("json") => config.format = Format::Json,
        Some("csv") => config.format = Format::Csv,
        Some(other) => return Err(Error::Parse(format!("unknown format `{other}`"))),
        None => {
            if config.out.as_ref().is_some_and(|p| p.extension().is_some_and(|e| e == "csv")) {
                config.format = Format::Csv;
            }
        }
    }
    let Value::Object(params) = &mut config.params else {
        return Err(Error::InvalidArgument("params must be an object".into()));
    };
    params.extend(cli.command.params()?);
    if let Some(m) = params.get_mut("method").filter(|m| m["method"] == "monte_carlo") {
        m["seed"] = json!(config.seed);
    }
    Ok(config)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let config = match build(&cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("wulff: {e}");
            return ExitCode::from(EXIT_VALIDATION as u8);
        }
    };
    if config.out.is_some() {
        let exit = run_command(&config);
        if let Some(d) = &exit.diagnostic {
            eprintln!("wulff: {d}");
        }
        return ExitCode::from(exit.status as u8);
    }
    match execute(&config).and_then(|r| r.to_json()) {
        Ok(text) => {
            print!("{text}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("wulff: {e}");
            ExitCode::from(exit_status(&e) as u8)
        }
    }
}
