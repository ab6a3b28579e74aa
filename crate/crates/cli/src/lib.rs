//! Command-line front end: argument parsing, output files, run manifests and
//! replay.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use oppaths_core::counting::{count_final, count_forward, count_region, default_survival_m, surviving_layer, write_layers_csv, CountMode, RegionSpec};
use oppaths_core::dynamics::{run_cluster, Window, DEFAULT_HORIZON};
use oppaths_core::estimators::{
    build_direction_grid, calibrate_p, directional_subsequence_estimate, estimate_alpha0, estimate_mu, estimate_mu_hull,
    estimate_profile, estimate_shape, estimate_tau_tail, json_record, track_martingale, SamplingPlan, SeedRange, SCHEMA_VERSION,
};
use oppaths_core::hitting::{essential_hitting, ConditionedSampler, HittingCaps, DEFAULT_ITER_CAP};
use oppaths_core::oracle::enumerate_paths_count;
use oppaths_core::{Environment, Error, LatticeParams, Point, Site};

pub const MANIFEST_FILE: &str = "manifest.json";

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_RESOURCE: i32 = 3;
pub const EXIT_SAMPLING: i32 = 4;

#[derive(Parser, Debug)]
#[command(name = "oppaths", version, about = "Open-path counting and growth estimation in oriented percolation")]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Cluster trace of the origin: per-layer CSV and packed bitsets.
    Simulate(SimulateArgs),
    /// Open-path counts N_n, N_{x,n}, N_{A,n}.
    Count(CountArgs),
    /// Essential hitting records sigma(x) on conditioned replicas.
    Sigma(SigmaArgs),
    /// Growth rate at direction 0.
    Alpha(AlphaArgs),
    /// Directional growth profile over a rational grid.
    Profile(ProfileArgs),
    /// Growth along the reached subsequence of (k y, k h).
    Subseq(SubseqArgs),
    /// Shape norm mu(x).
    Mu(MuArgs),
    /// Normalized path counts W_n.
    Martingale(MartingaleArgs),
    /// Extinction-time tail and survival fraction.
    TauTail(TauTailArgs),
    /// Compare DP counts with brute-force enumeration.
    OracleCheck(OracleArgs),
    /// Re-run a manifest and compare output digests.
    Replay(ReplayArgs),
}

#[derive(Args, Debug, Clone)]
struct Common {
    #[arg(long, default_value_t = 1)]
    d: usize,
    /// Edge probability; calibrated per dimension when omitted.
    #[arg(long)]
    p: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Survival horizon standing in for infinity.
    #[arg(long, default_value_t = DEFAULT_HORIZON)]
    horizon: u32,
    /// Output directory.
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    n: u32,
    /// Half-width of the tracking window (default: the light cone).
    #[arg(long)]
    window: Option<i64>,
}

#[derive(Args, Debug)]
struct CountArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    n: u32,
    #[arg(long, value_enum, default_value = "log")]
    mode: ModeArg,
    /// `all`, `point:Z`, `box:LO:HI` or `scaled:LO:HI` with comma-separated coordinates.
    #[arg(long, default_value = "all", allow_hyphen_values = true)]
    region: String,
    /// Keep only endpoints surviving this many further layers.
    #[arg(long)]
    survival_m: Option<u32>,
    /// Also write every layer as CSV.
    #[arg(long)]
    layers: bool,
}

#[derive(clap::ValueEnum, Clone, Copy, Debug)]
enum ModeArg {
    Exact,
    Log,
}

#[derive(Args, Debug)]
struct SigmaArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true, required = true)]
    x: Vec<i32>,
    #[arg(long, default_value_t = 10)]
    replicas: usize,
    #[arg(long, default_value_t = DEFAULT_ITER_CAP)]
    iter_cap: u32,
}

#[derive(Args, Debug)]
struct AlphaArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    n: u32,
    #[arg(long, default_value_t = 100)]
    replicas: usize,
    /// Survival filter horizon (default ceil(n/4)).
    #[arg(long, conflicts_with = "plain")]
    survival_m: Option<u32>,
    /// Unfiltered counts N_n.
    #[arg(long)]
    plain: bool,
}

#[derive(Args, Debug)]
struct ProfileArgs {
    #[command(flatten)]
    common: Common,
    /// Denominator l of the rational directions z/l.
    #[arg(long, default_value_t = 5)]
    resolution: u32,
    #[arg(long, default_value_t = 1)]
    scale: u32,
    #[arg(long, default_value_t = 100)]
    links: usize,
    #[arg(long, default_value_t = 50)]
    replicas: usize,
    #[arg(long, value_delimiter = ',', default_value = "8,16,32")]
    mu_levels: Vec<u32>,
    #[arg(long, default_value_t = 200)]
    mu_replicas: usize,
}

#[derive(Args, Debug)]
struct SubseqArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true, required = true)]
    y: Vec<i32>,
    #[arg(long)]
    h: u32,
    /// Largest k scanned.
    #[arg(long)]
    n: u32,
    #[arg(long, default_value_t = 100)]
    replicas: usize,
}

#[derive(Args, Debug)]
struct MuArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true, required = true)]
    x: Vec<i32>,
    #[arg(long, value_delimiter = ',', default_value = "4,8,16,32")]
    levels: Vec<u32>,
    #[arg(long, default_value_t = 100)]
    replicas: usize,
    /// Also run the hull-based estimate along this axis.
    #[arg(long)]
    hull_axis: Option<usize>,
}

#[derive(Args, Debug)]
struct MartingaleArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    n: u32,
    #[arg(long, default_value_t = 1000)]
    replicas: usize,
}

#[derive(Args, Debug)]
struct TauTailArgs {
    #[command(flatten)]
    common: Common,
    /// Truncation level t_max.
    #[arg(long)]
    n: u32,
    #[arg(long, default_value_t = 10_000)]
    replicas: usize,
}

#[derive(Args, Debug)]
struct OracleArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    n: u32,
    #[arg(long, default_value_t = 50)]
    seeds: u64,
}

#[derive(Args, Debug)]
struct ReplayArgs {
    manifest: PathBuf,
    /// Where to write the replayed outputs (default: `replay/` next to the manifest).
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Recorded description of a run, written beside its outputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub tool: String,
    pub version: String,
    pub command: String,
    /// Arguments after the program name, without `--out`.
    pub argv: Vec<String>,
    pub params: LatticeParams,
    pub seed_range: Option<SeedRange>,
    pub horizons: Value,
    pub outputs: Vec<OutputDigest>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutputDigest {
    pub path: String,
    pub sha256: String,
}

struct Outcome {
    params: LatticeParams,
    seed_range: Option<SeedRange>,
    horizons: Value,
    files: Vec<(String, Vec<u8>)>,
    summary: Value,
    exit: i32,
}

impl Outcome {
    fn new(params: LatticeParams, summary: Value) -> Self {
        Outcome { params, seed_range: None, horizons: Value::Null, files: Vec::new(), summary, exit: EXIT_OK }
    }

    fn json(mut self, name: &str, value: &Value) -> Self {
        let mut bytes = serde_json::to_vec_pretty(value).expect("serializable");
        bytes.push(b'\n');
        self.files.push((name.to_string(), bytes));
        self
    }

    fn raw(mut self, name: &str, bytes: Vec<u8>) -> Self {
        self.files.push((name.to_string(), bytes));
        self
    }
}

enum CliError {
    Core(Error),
    Usage(String),
    Io(String),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl CliError {
    fn kind(&self) -> &'static str {
        match self {
            CliError::Core(e) => e.kind(),
            CliError::Usage(_) => "usage",
            CliError::Io(_) => "io",
        }
    }

    fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Io(_) => EXIT_FAILURE,
            CliError::Core(e) => match e {
                Error::Params(_) | Error::Precondition(_) | Error::Domain(_) | Error::Address(_) | Error::Window(_) => EXIT_USAGE,
                Error::Resource(_) | Error::Boundary(_) => EXIT_RESOURCE,
                Error::Sampling(_) | Error::InsufficientHits(_) | Error::InsufficientChain { .. } | Error::Inconclusive(_) => {
                    EXIT_SAMPLING
                }
                Error::UndefinedRatio(_) | Error::Fit(_) => EXIT_FAILURE,
            },
        }
    }

    fn message(&self) -> String {
        match self {
            CliError::Core(e) => e.to_string(),
            CliError::Usage(m) | CliError::Io(m) => m.clone(),
        }
    }
}

fn error_json(kind: &str, message: &str, exit: i32) -> Value {
    json!({
        "schema_version": SCHEMA_VERSION,
        "error": { "kind": kind, "message": message, "exit_code": exit },
    })
}

/// Runs the tool on `args` (program name first) and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<String>,
{
    run_with(args, &mut std::io::stdout())
}

/// [`run`] with the result summary written to `stdout` instead.
pub fn run_with<I, T>(args: I, stdout: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<String>,
{
    let args: Vec<String> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = write!(stdout, "{e}");
                return EXIT_OK;
            }
            eprintln!("{}", error_json("usage", e.to_string().trim(), EXIT_USAGE));
            return EXIT_USAGE;
        }
    };
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(cli.threads.unwrap_or(0)).build() {
        Ok(pool) => pool,
        Err(e) => {
            eprintln!("{}", error_json("resource", &e.to_string(), EXIT_RESOURCE));
            return EXIT_RESOURCE;
        }
    };
    let argv = strip_out(&args[1..]);
    let mut buf = Vec::new();
    let result = pool.install(|| dispatch(cli.command, argv, &mut buf));
    let _ = stdout.write_all(&buf);
    match result {
        Ok(code) => code,
        Err(e) => {
            let code = e.exit_code();
            eprintln!("{}", error_json(e.kind(), &e.message(), code));
            code
        }
    }
}

/// Drops `--out DIR` / `--out=DIR` and `--threads` so manifests replay anywhere.
fn strip_out(args: &[String]) -> Vec<String> {
    let mut out = Vec::with_capacity(args.len());
    let mut skip = false;
    for a in args {
        if skip {
            skip = false;
            continue;
        }
        if a == "--out" || a == "--threads" {
            skip = true;
            continue;
        }
        if a.starts_with("--out=") || a.starts_with("--threads=") {
            continue;
        }
        out.push(a.clone());
    }
    out
}

fn dispatch(command: Command, argv: Vec<String>, stdout: &mut dyn Write) -> Result<i32, CliError> {
    let (name, common, outcome) = match command {
        Command::Replay(args) => return replay(&args, stdout),
        Command::Simulate(a) => ("simulate", a.common.clone(), simulate(&a)?),
        Command::Count(a) => ("count", a.common.clone(), count(&a)?),
        Command::Sigma(a) => ("sigma", a.common.clone(), sigma(&a)?),
        Command::Alpha(a) => ("alpha", a.common.clone(), alpha(&a)?),
        Command::Profile(a) => ("profile", a.common.clone(), profile(&a)?),
        Command::Subseq(a) => ("subseq", a.common.clone(), subseq(&a)?),
        Command::Mu(a) => ("mu", a.common.clone(), mu(&a)?),
        Command::Martingale(a) => ("martingale", a.common.clone(), martingale(&a)?),
        Command::TauTail(a) => ("tau-tail", a.common.clone(), tau_tail(&a)?),
        Command::OracleCheck(a) => ("oracle-check", a.common.clone(), oracle_check(&a)?),
    };
    let manifest = write_outputs(&common.out, name, argv, &outcome)?;
    writeln!(stdout, "{}", json!({ "command": name, "result": outcome.summary, "outputs": manifest.outputs }))?;
    Ok(outcome.exit)
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn write_outputs(dir: &Path, command: &str, argv: Vec<String>, outcome: &Outcome) -> Result<RunManifest, CliError> {
    fs::create_dir_all(dir)?;
    let mut outputs = Vec::with_capacity(outcome.files.len());
    for (name, bytes) in &outcome.files {
        fs::write(dir.join(name), bytes)?;
        outputs.push(OutputDigest { path: name.clone(), sha256: sha256_hex(bytes) });
    }
    let manifest = RunManifest {
        schema_version: SCHEMA_VERSION,
        tool: env!("CARGO_PKG_NAME").to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        command: command.to_string(),
        argv,
        params: outcome.params,
        seed_range: outcome.seed_range,
        horizons: outcome.horizons.clone(),
        outputs,
    };
    let mut bytes = serde_json::to_vec_pretty(&manifest).expect("serializable");
    bytes.push(b'\n');
    fs::write(dir.join(MANIFEST_FILE), bytes)?;
    Ok(manifest)
}

fn replay(args: &ReplayArgs, stdout: &mut dyn Write) -> Result<i32, CliError> {
    let text = fs::read_to_string(&args.manifest)?;
    let manifest: RunManifest = serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("manifest: {e}")))?;
    if manifest.command == "replay" {
        return Err(CliError::Usage("cannot replay a replay".into()));
    }
    let out = match &args.out {
        Some(o) => o.clone(),
        None => args.manifest.parent().unwrap_or(Path::new(".")).join("replay"),
    };
    let mut argv = vec![env!("CARGO_PKG_NAME").to_string()];
    argv.extend(manifest.argv.iter().cloned());
    argv.push("--out".into());
    argv.push(out.display().to_string());
    let cli = Cli::try_parse_from(&argv).map_err(|e| CliError::Usage(e.to_string()))?;
    let code = dispatch(cli.command, manifest.argv.clone(), &mut std::io::sink())?;
    let mut mismatched = Vec::new();
    for o in &manifest.outputs {
        let digest = fs::read(out.join(&o.path)).map(|b| sha256_hex(&b)).unwrap_or_default();
        if digest != o.sha256 {
            mismatched.push(o.path.clone());
        }
    }
    let identical = mismatched.is_empty();
    writeln!(
        stdout,
        "{}",
        json!({
            "command": "replay",
            "status": if identical { "identical" } else { "differs" },
            "mismatched": mismatched,
            "replayed_exit": code,
        })
    )?;
    Ok(if identical { EXIT_OK } else { EXIT_FAILURE })
}

/// Default edge probability per dimension: the smallest `p` at which three
/// quarters of a fixed replica set survive the default horizon.
pub fn default_p(d: usize) -> oppaths_core::Result<f64> {
    let p = calibrate_p(d, 0.75, DEFAULT_HORIZON, 400, 0x5eed)?;
    Ok((p * 1e4).round() / 1e4)
}

fn lattice(c: &Common) -> Result<LatticeParams, CliError> {
    let p = match c.p {
        Some(p) => p,
        None => default_p(c.d)?,
    };
    Ok(LatticeParams::new(c.d, p, c.seed)?)
}

fn point(coords: &[i32], d: usize, flag: &str) -> Result<Point, CliError> {
    if coords.len() != d {
        return Err(CliError::Usage(format!("--{flag} needs {d} coordinates, got {}", coords.len())));
    }
    Ok(Point::from_slice(coords))
}

fn plan(c: &Common) -> SamplingPlan {
    SamplingPlan::with_horizon(c.horizon)
}

fn csv_text(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Vec<u8> {
    let mut s = header.join(",");
    s.push('\n');
    for row in rows {
        s.push_str(&row.join(","));
        s.push('\n');
    }
    s.into_bytes()
}

fn simulate(a: &SimulateArgs) -> Result<Outcome, CliError> {
    let params = lattice(&a.common)?;
    let env = Environment::new(params)?;
    let window = a.window.map(|r| Window::cube(params.d, Point::ORIGIN, r)).transpose()?;
    let trace = run_cluster(&env, &[Site::origin()], a.n, window)?;
    let mut csv = Vec::new();
    trace.write_csv(&mut csv)?;
    let mut bits = Vec::new();
    trace.write_bitsets(&mut bits)?;
    let summary = json!({ "n": a.n, "extinction": trace.tau, "final_size": trace.last().len(), "hull_size": trace.hull.len() });
    let record = json_record("cluster", &params, &summary);
    Ok(Outcome::new(params, summary).json("cluster.json", &record).raw("cluster.csv", csv).raw("cluster.opbs", bits))
}

fn parse_list<T: std::str::FromStr>(s: &str) -> Result<Vec<T>, CliError> {
    s.split(',')
        .map(|v| v.trim().parse::<T>().map_err(|_| CliError::Usage(format!("bad coordinate list '{s}'"))))
        .collect()
}

fn parse_region(s: &str) -> Result<RegionSpec, CliError> {
    let parts: Vec<&str> = s.split(':').collect();
    match parts.as_slice() {
        ["all"] => Ok(RegionSpec::All),
        ["point", z] => Ok(RegionSpec::Point { z: parse_list(z)? }),
        ["box", lo, hi] => Ok(RegionSpec::Box { lo: parse_list(lo)?, hi: parse_list(hi)? }),
        ["scaled", lo, hi] => Ok(RegionSpec::Scaled { lo: parse_list(lo)?, hi: parse_list(hi)? }),
        _ => Err(CliError::Usage(format!("unknown region '{s}'"))),
    }
}

fn count(a: &CountArgs) -> Result<Outcome, CliError> {
    let params = lattice(&a.common)?;
    let env = Environment::new(params)?;
    let mode = match a.mode {
        ModeArg::Exact => CountMode::Exact,
        ModeArg::Log => CountMode::Log,
    };
    let region = parse_region(&a.region)?;
    region.validate(params.d)?;
    let (mut last, layers) = if a.layers {
        let layers = count_forward(&env, a.n, mode)?;
        (layers.last().unwrap().clone(), Some(layers))
    } else {
        (count_final(&env, a.n, mode)?, None)
    };
    if let Some(m) = a.survival_m {
        last = surviving_layer(&env, &last, m)?;
    }
    let mut report = count_region(&last, &region)?;
    report.survival_horizon = a.survival_m;
    let mut record = report.to_json(&params);
    record["schema_version"] = json!(SCHEMA_VERSION);
    record["kind"] = json!("count");
    let mut outcome = Outcome::new(params, record.clone()).json("count.json", &record);
    outcome.horizons = json!({ "survival_m": a.survival_m });
    if let Some(layers) = layers {
        let mut csv = Vec::new();
        write_layers_csv(&layers, &mut csv)?;
        outcome = outcome.raw("count_layers.csv", csv);
    }
    Ok(outcome)
}

fn sigma(a: &SigmaArgs) -> Result<Outcome, CliError> {
    let params = lattice(&a.common)?;
    let x = point(&a.x, params.d, "x")?;
    let caps = HittingCaps { horizon: a.common.horizon, iter_cap: a.iter_cap, ..Default::default() };
    let budget = 100 * a.replicas as u64 + 10_000;
    let mut sampler = ConditionedSampler::new(params, a.common.horizon, budget)?;
    let samples = sampler.take(a.replicas)?;
    let mut records = Vec::with_capacity(samples.len());
    for s in &samples {
        let rec = essential_hitting(&s.environment(&params), x, &caps)?;
        records.push(json!({ "replica": s.index, "seed": s.seed, "record": rec }));
    }
    let successes = records.iter().filter(|r| r["record"]["status"] == "success").count();
    let seeds = SeedRange {
        first: 0,
        end: sampler.tried(),
        tried: sampler.tried(),
        accepted: sampler.accepted(),
        horizon: a.common.horizon,
    };
    let summary = json!({ "x": a.x, "replicas": samples.len(), "successes": successes, "acceptance_rate": sampler.acceptance_rate() });
    let body = json!({ "x": a.x, "seeds": seeds, "records": records });
    let mut outcome = Outcome::new(params, summary).json("sigma.json", &json_record("hitting_records", &params, &body));
    outcome.seed_range = Some(seeds);
    outcome.horizons = json!({ "horizon": caps.horizon, "iter_cap": caps.iter_cap, "layer_cap": caps.layer_cap });
    Ok(outcome)
}

fn alpha(a: &AlphaArgs) -> Result<Outcome, CliError> {
    let params = lattice(&a.common)?;
    let m = if a.plain { None } else { Some(a.survival_m.unwrap_or_else(|| default_survival_m(a.n))) };
    let est = estimate_alpha0(&params, a.n, a.replicas, m, &plan(&a.common))?;
    let record = est.to_json(&params);
    let mut outcome = Outcome::new(params, json!({ "value": est.value, "stderr": est.stderr })).json("alpha.json", &record);
    outcome.seed_range = Some(est.seeds);
    outcome.horizons = json!({ "horizon": a.common.horizon, "conditioning": est.seeds.horizon, "survival_m": m });
    Ok(outcome)
}

fn profile(a: &ProfileArgs) -> Result<Outcome, CliError> {
    let params = lattice(&a.common)?;
    let plan = plan(&a.common);
    let d = params.d;
    let mut axes = Vec::with_capacity(2 * d);
    for axis in 0..d {
        axes.push(Point::unit(axis, 1));
        axes.push(Point::unit(axis, -1));
    }
    if d > 1 {
        // Diagonals so that grid directions off the axes have a reference.
        let window = Window::cube(d, Point::ORIGIN, a.resolution as i64)?;
        for z in window.points() {
            if z.coords(d).iter().filter(|&&c| c != 0).count() > 1 {
                axes.push(z);
            }
        }
    }
    let shape = estimate_shape(&params, &axes, &a.mu_levels, a.mu_replicas, &plan)?;
    let grid = build_direction_grid(d, a.resolution, a.scale, &shape)?;
    let prof = estimate_profile(&params, &grid, a.links, a.replicas, &plan)?;
    let mut csv = Vec::new();
    prof.write_csv(&mut csv)?;
    let summary = json!({
        "points": prof.points.len(),
        "estimated": prof.points.iter().filter(|p| p.estimate.is_some()).count(),
        "diagnostics_ok": prof.diagnostics_ok(),
    });
    let body = json!({ "shape": shape, "profile": prof });
    let mut outcome = Outcome::new(params, summary)
        .json("profile.json", &json_record("growth_profile", &params, &body))
        .raw("profile.csv", csv);
    outcome.horizons = json!({ "horizon": a.common.horizon });
    Ok(outcome)
}

fn subseq(a: &SubseqArgs) -> Result<Outcome, CliError> {
    let params = lattice(&a.common)?;
    let y = point(&a.y, params.d, "y")?;
    let est = directional_subsequence_estimate(&params, y, a.h, a.n, a.replicas, None, &plan(&a.common))?;
    let mut outcome = Outcome::new(params, json!({ "value": est.value, "stderr": est.stderr, "kept_fraction": est.kept_fraction }))
        .json("subseq.json", &est.to_json(&params));
    outcome.seed_range = Some(est.seeds);
    outcome.horizons = json!({ "horizon": a.common.horizon, "conditioning": est.seeds.horizon });
    Ok(outcome)
}

fn mu(a: &MuArgs) -> Result<Outcome, CliError> {
    let params = lattice(&a.common)?;
    let x = point(&a.x, params.d, "x")?;
    let plan = plan(&a.common);
    let est = estimate_mu(&params, x, &a.levels, a.replicas, &plan)?;
    let hull = match a.hull_axis {
        Some(axis) => Some(estimate_mu_hull(&params, axis, *a.levels.iter().max().unwrap_or(&1), a.replicas, &plan)?),
        None => None,
    };
    let body = json!({ "sigma_based": est, "hull_based": hull });
    let mut outcome = Outcome::new(params, json!({ "value": est.value, "stderr": est.stderr }))
        .json("mu.json", &json_record("shape_estimate", &params, &body));
    outcome.horizons = json!({ "horizon": a.common.horizon });
    Ok(outcome)
}

fn martingale(a: &MartingaleArgs) -> Result<Outcome, CliError> {
    let params = lattice(&a.common)?;
    let trace = track_martingale(&params, a.n, a.replicas, 0)?;
    let rows = (0..=a.n as usize).map(|n| {
        vec![n.to_string(), trace.mean[n].to_string(), trace.stderr[n].to_string(), trace.median[n].to_string()]
    });
    let csv = csv_text(&["n", "mean", "stderr", "median"], rows);
    let last = a.n as usize;
    let mut outcome = Outcome::new(params, json!({ "mean_w": trace.mean[last], "median_w": trace.median[last] }))
        .json("martingale.json", &trace.to_json(&params))
        .raw("martingale.csv", csv);
    outcome.seed_range = Some(trace.seeds);
    Ok(outcome)
}

fn tau_tail(a: &TauTailArgs) -> Result<Outcome, CliError> {
    let params = lattice(&a.common)?;
    let tail = estimate_tau_tail(&params, a.replicas, a.n, 0)?;
    let rows = tail.table.iter().map(|r| vec![r.n.to_string(), r.count.to_string(), r.prob.to_string(), r.stderr.to_string()]);
    let csv = csv_text(&["n", "count", "prob", "stderr"], rows);
    let summary = json!({ "survival_fraction": tail.survival_fraction, "fit": tail.fit, "fit_note": tail.fit_note });
    let mut outcome = Outcome::new(params, summary)
        .json("tau_tail.json", &json_record("tau_tail", &params, &tail))
        .raw("tau_tail.csv", csv);
    outcome.seed_range = Some(tail.seeds);
    outcome.horizons = json!({ "t_max": a.n });
    Ok(outcome)
}

fn oracle_check(a: &OracleArgs) -> Result<Outcome, CliError> {
    let params = lattice(&a.common)?;
    let mut mismatches = Vec::new();
    let mut compared = 0u64;
    for i in 0..a.seeds {
        let env = Environment::new(params.replica(i))?;
        let layers = count_forward(&env, a.n, CountMode::Exact)?;
        for level in 1..=a.n {
            let brute = enumerate_paths_count(&env, level)?;
            let layer = &layers[level as usize];
            let dp_support = layer.support();
            let brute_support: Vec<Point> = brute.counts.iter().filter(|(_, &c)| c > 0).map(|(z, _)| *z).collect();
            let mut equal = dp_support.len() == brute_support.len();
            for (z, &c) in &brute.counts {
                let dp = layer.get(*z);
                equal &= dp.as_exact().map(|v| v.to_string()) == Some(c.to_string());
            }
            compared += 1;
            if !equal {
                mismatches.push(json!({ "replica": i, "n": level }));
            }
        }
    }
    let status = if mismatches.is_empty() { "all equal" } else { "mismatch" };
    let body = json!({ "status": status, "n": a.n, "seeds": a.seeds, "compared": compared, "mismatches": mismatches });
    let mut outcome = Outcome::new(params, json!({ "status": status, "compared": compared }))
        .json("oracle_check.json", &json_record("oracle_check", &params, &body));
    outcome.seed_range = Some(SeedRange { first: 0, end: a.seeds, tried: a.seeds, accepted: a.seeds, horizon: 0 });
    if !mismatches.is_empty() {
        outcome.exit = EXIT_FAILURE;
    }
    Ok(outcome)
}
