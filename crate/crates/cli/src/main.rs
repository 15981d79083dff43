use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use molalign::alignment::{beamforming, check_conditions, Tolerances};
use molalign::asymptotic::{
    build_beamforming, dof, verify_alignment, AsymptoticConfig, DiagonalChannelStack, MAX_TYPES,
};
use molalign::detection::{analytic_pe_reaction, build_reaction, IsiRule};
use molalign::io::{fmt9, format_scenario, format_times, load_scenario, load_times};
use molalign::montecarlo::{simulate, DetectorKind, ReactionModel, SimConfig};
use molalign::search::{
    optimize, project_to_feasible, Method, Problem, ReferenceSchedule, SearchSpec,
};
use molalign::{channel_set, lemma2_region, Error, Scenario, TimingSchedule};

#[derive(Debug)]
enum CliError {
    /// Bad or infeasible input.
    Input(String),
    Internal(String),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        if e.is_infeasible() || matches!(e, Error::Parse { .. } | Error::Io(_)) {
            CliError::Input(e.to_string())
        } else {
            CliError::Internal(e.to_string())
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Parser)]
#[command(
    name = "molalign",
    version,
    about = "Interference alignment for 3-user molecular channels"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Scenario file; the reference parameters are used when omitted.
    #[arg(long)]
    scenario: Option<PathBuf>,
    /// Output path, `-` for standard output.
    #[arg(long, default_value = "-")]
    out: String,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Reaction coefficient applied at every receiver.
    #[arg(long)]
    c: Option<f64>,
    /// Slot duration in seconds.
    #[arg(long)]
    slot: Option<f64>,
    /// Mean environment noise of type 1.
    #[arg(long = "mu-n1")]
    mu_n1: Option<f64>,
    /// Mean environment noise of type 2.
    #[arg(long = "mu-n2")]
    mu_n2: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Feasible release-time differences for the special timing with reaction.
    FeasibleRegion {
        #[command(flatten)]
        common: Common,
        /// Points sampled along the admissible segment.
        #[arg(long, default_value_t = 201)]
        points: usize,
    },
    /// Searches optimum releasing and sampling times.
    OptimizeTimes {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        problem: Problem,
        /// analytic, mc or gauss; defaults per problem.
        #[arg(long)]
        method: Option<String>,
        /// Trials per objective call for the mc method.
        #[arg(long, default_value_t = 20_000)]
        trials: u64,
        #[arg(long)]
        grid: Option<usize>,
        #[arg(long)]
        starts: Option<usize>,
        #[arg(long)]
        budget: Option<usize>,
        /// Scan trace CSV path.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Error probability versus the bit-1 amplitude.
    ErrorCurve {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        sim: SimArgs,
        /// `start:stop:count`, linearly spaced.
        #[arg(long, default_value = "1e6:4e6:7")]
        zeta0: String,
        /// Ratio of the bit-1 amplitudes of type 2 and type 1.
        #[arg(long)]
        ratio: Option<f64>,
        /// Skip the analytic rows.
        #[arg(long)]
        no_analytic: bool,
    },
    /// Monte-Carlo error rates at one operating point.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        sim: SimArgs,
    },
    /// Degrees of freedom of the K-user asymptotic construction.
    AsymptoticDof {
        #[command(flatten)]
        common: Common,
        #[arg(long = "K")]
        k: usize,
        #[arg(long)]
        n: u32,
        #[arg(long = "max-order")]
        max_order: Option<u32>,
    },
    /// Runs all condition checks on a schedule.
    Verify {
        #[command(flatten)]
        common: Common,
        /// Times file or reference row name.
        #[arg(long)]
        times: String,
        /// Check the schedule as given, without projecting it first.
        #[arg(long)]
        no_snap: bool,
        /// Largest shift the projection may apply, in seconds.
        #[arg(long, default_value_t = 0.01)]
        max_shift: f64,
        /// auto, on or off.
        #[arg(long, default_value = "auto")]
        reaction: String,
    },
}

#[derive(Args, Clone)]
struct SimArgs {
    /// Times file or reference row name; defaults per detector.
    #[arg(long)]
    times: Option<String>,
    #[arg(long, default_value_t = 100_000)]
    trials: u64,
    /// One-slot channel memory (0 or 1).
    #[arg(long, default_value_t = 0, value_parser = clap::value_parser!(u8).range(0..=1))]
    isi: u8,
    #[arg(long = "isi-rule", default_value = "adaptive")]
    isi_rule: IsiRule,
    /// Environment noise, on or off.
    #[arg(long, default_value = "on", value_parser = ["on", "off"])]
    noise: String,
    #[arg(long, default_value = "reaction")]
    detector: DetectorKind,
    #[arg(long = "reaction-model", default_value = "mean")]
    reaction_model: ReactionModel,
}

fn resolve_scenario(c: &Common) -> CliResult<Scenario> {
    let mut s = match &c.scenario {
        Some(p) => load_scenario(p)?,
        None => Scenario::reference(),
    };
    if let Some(v) = c.c {
        s.reaction_coeffs = [v; 3];
    }
    if let Some(v) = c.slot {
        s.slot_duration = v;
    }
    if let Some(v) = c.mu_n1 {
        s.env_noise[0] = v;
    }
    if let Some(v) = c.mu_n2 {
        s.env_noise[1] = v;
    }
    s.validate()?;
    Ok(s)
}

fn log_context(s: &Scenario, seed: u64) {
    let mut err = std::io::stderr().lock();
    let _ = writeln!(err, "# scenario");
    for line in format_scenario(s).lines() {
        let _ = writeln!(err, "#   {line}");
    }
    let _ = writeln!(err, "# seed = {seed}");
}

fn emit(out: &str, text: &str) -> CliResult<()> {
    if out == "-" {
        let mut so = std::io::stdout().lock();
        so.write_all(text.as_bytes())
            .and_then(|_| so.flush())
            .map_err(|e| CliError::Internal(format!("cannot write to stdout: {e}")))
    } else {
        std::fs::write(out, text)
            .map_err(|e| CliError::Internal(format!("cannot write {out}: {e}")))
    }
}

/// A reference row name (snapped onto its constraints) or a times file.
fn resolve_times(
    spec: &str,
    scn: &Scenario,
) -> CliResult<(TimingSchedule, Option<ReferenceSchedule>)> {
    if let Ok(row) = spec.parse::<ReferenceSchedule>() {
        if !Path::new(spec).exists() {
            return Ok((row.snapped(scn)?, Some(row)));
        }
    }
    Ok((load_times(Path::new(spec))?, None))
}

fn parse_range(s: &str) -> CliResult<Vec<f64>> {
    let bad = || CliError::Input(format!("--zeta0 '{s}': expected start:stop:count"));
    let parts: Vec<&str> = s.split(':').collect();
    match parts.as_slice() {
        [a] => Ok(vec![a.trim().parse().map_err(|_| bad())?]),
        [a, b, n] => {
            let a: f64 = a.trim().parse().map_err(|_| bad())?;
            let b: f64 = b.trim().parse().map_err(|_| bad())?;
            let n: usize = n.trim().parse().map_err(|_| bad())?;
            if n == 0 || !a.is_finite() || !b.is_finite() {
                return Err(bad());
            }
            if n == 1 {
                return Ok(vec![a]);
            }
            Ok((0..n)
                .map(|k| a + (b - a) * k as f64 / (n - 1) as f64)
                .collect())
        }
        _ => Err(bad()),
    }
}

fn default_row(det: DetectorKind) -> ReferenceSchedule {
    match det {
        DetectorKind::ZfMap => ReferenceSchedule::NoReactionGeneral,
        DetectorKind::Reaction | DetectorKind::SharedType => ReferenceSchedule::ReactionSpecial,
    }
}

fn sim_config(sim: &SimArgs, seed: u64) -> SimConfig {
    SimConfig {
        trials: sim.trials,
        seed,
        isi_memory: sim.isi,
        noise_on: sim.noise == "on",
        detector: sim.detector,
        isi_rule: sim.isi_rule,
        reaction_model: sim.reaction_model,
    }
}

const CURVE_HEADER: &str = "zeta0,pe_rx1,pe_rx2,pe_rx3,pe_total,method\n";

fn curve_row(zeta0: f64, per_rx: [f64; 3], total: f64, method: &str) -> String {
    format!(
        "{},{},{},{},{},{method}\n",
        fmt9(zeta0),
        fmt9(per_rx[0]),
        fmt9(per_rx[1]),
        fmt9(per_rx[2]),
        fmt9(total)
    )
}

fn mc_row(scn: &Scenario, ts: &TimingSchedule, cfg: &SimConfig) -> CliResult<String> {
    let ch = channel_set(scn, ts)?;
    let bf = beamforming(&ch)?;
    let rep = simulate(scn, ts, &bf, cfg)?;
    eprintln!(
        "# zeta0 = {}: mc total {} (95% [{}, {}])",
        fmt9(scn.amplitudes[0]),
        fmt9(rep.total.rate),
        fmt9(rep.total.lo),
        fmt9(rep.total.hi)
    );
    Ok(curve_row(
        scn.amplitudes[0],
        rep.per_rx.map(|r| r.rate),
        rep.total.rate,
        "mc",
    ))
}

fn analytic_row(scn: &Scenario, ts: &TimingSchedule, noise_on: bool) -> CliResult<String> {
    let mut s = scn.clone();
    if !noise_on {
        s.env_noise = [0.0; 2];
    }
    let ch = channel_set(&s, ts)?;
    let bf = beamforming(&ch)?;
    let pe = analytic_pe_reaction(&build_reaction(&ch, &bf, &s)?);
    Ok(curve_row(s.amplitudes[0], pe.per_rx, pe.total, "analytic"))
}

fn feasible_region(common: &Common, points: usize) -> CliResult<String> {
    let scn = resolve_scenario(common)?;
    log_context(&scn, common.seed);
    let region = lemma2_region(&scn, scn.reaction_coeffs[0])?;
    for n in &region.notes {
        eprintln!("# note: {n}");
    }
    let mut rows: Vec<(f64, f64, u8, f64)> = region
        .sample(points)
        .into_iter()
        .map(|(x, y)| (x, y, 0, region.min_delta(x)))
        .collect();
    rows.extend(
        region
            .excluded
            .iter()
            .map(|e| (e.dt12, e.dt13, 1, region.min_delta(e.dt12))),
    );
    rows.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.2.cmp(&b.2)));
    let mut out = String::from("dt12,dt13,excluded,min_delta\n");
    for (x, y, e, m) in rows {
        out.push_str(&format!("{},{},{e},{}\n", fmt9(x), fmt9(y), fmt9(m)));
    }
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
fn optimize_times(
    common: &Common,
    problem: Problem,
    method: Option<&str>,
    trials: u64,
    grid: Option<usize>,
    starts: Option<usize>,
    budget: Option<usize>,
    trace: Option<&Path>,
) -> CliResult<String> {
    let scn = resolve_scenario(common)?;
    log_context(&scn, common.seed);
    let mut spec = SearchSpec::new(problem);
    spec.seed = common.seed;
    if let Some(m) = method {
        spec.method = match m {
            "analytic" => Method::Analytic,
            "mc" => Method::MonteCarlo {
                trials,
                seed: common.seed,
            },
            "gauss" => Method::GaussianApprox,
            _ => return Err(CliError::Input(format!("unknown method '{m}'"))),
        };
    } else if let Method::MonteCarlo { .. } = spec.method {
        spec.method = Method::MonteCarlo {
            trials,
            seed: common.seed,
        };
    }
    if let Some(g) = grid {
        spec.grid = g;
    }
    if let Some(s) = starts {
        spec.starts = s;
    }
    if let Some(b) = budget {
        spec.budget = b;
    }
    let res = optimize(&spec, &scn)?;
    eprintln!(
        "# {}: objective {} after {} evaluations ({} skipped)",
        problem.name(),
        fmt9(res.objective),
        res.evaluations,
        res.skipped
    );
    if let Some(d) = res.dt12 {
        eprintln!("# dt12 = {}", fmt9(d));
    }
    if let Some(p) = trace {
        std::fs::write(p, res.trace_csv())
            .map_err(|e| CliError::Internal(format!("cannot write {}: {e}", p.display())))?;
    }
    Ok(format_times(&res.schedule))
}

fn error_curve(
    common: &Common,
    sim: &SimArgs,
    zeta0: &str,
    ratio: Option<f64>,
    no_analytic: bool,
) -> CliResult<String> {
    let scn = resolve_scenario(common)?;
    log_context(&scn, common.seed);
    let zetas = parse_range(zeta0)?;
    let ratio = ratio.unwrap_or(scn.amplitudes[1] / scn.amplitudes[0]);
    let ts = match &sim.times {
        Some(t) => resolve_times(t, &scn)?.0,
        None => default_row(sim.detector).snapped(&scn)?,
    };
    let cfg = sim_config(sim, common.seed);
    let analytic = !no_analytic && sim.detector == DetectorKind::Reaction && sim.isi == 0;
    let mut out = String::from(CURVE_HEADER);
    for z in zetas {
        let mut s = scn.clone();
        s.amplitudes = [z, z * ratio];
        s.validate()?;
        if analytic {
            out.push_str(&analytic_row(&s, &ts, cfg.noise_on)?);
        }
        if cfg.trials > 0 {
            out.push_str(&mc_row(&s, &ts, &cfg)?);
        }
    }
    Ok(out)
}

fn simulate_cmd(common: &Common, sim: &SimArgs) -> CliResult<String> {
    let scn = resolve_scenario(common)?;
    log_context(&scn, common.seed);
    let ts = match &sim.times {
        Some(t) => resolve_times(t, &scn)?.0,
        None => default_row(sim.detector).snapped(&scn)?,
    };
    let cfg = sim_config(sim, common.seed);
    if cfg.trials == 0 {
        return Err(CliError::Input("--trials must be positive".into()));
    }
    let mut out = String::from(CURVE_HEADER);
    out.push_str(&mc_row(&scn, &ts, &cfg)?);
    Ok(out)
}

fn asymptotic(common: &Common, k: usize, n: u32, max_order: Option<u32>) -> CliResult<String> {
    let cfg = match max_order {
        Some(m) => AsymptoticConfig::with_max_order(k, n, m)?,
        None => AsymptoticConfig::new(k, n)?,
    };
    eprintln!("# seed = {}", common.seed);
    let d = dof(&cfg);
    let mut out = format!(
        "dof = {}/{}\ndof_value = {}\nstreams_first = {}\nstreams_other = {}\ntypes = {}\n",
        d.numer(),
        d.denom(),
        fmt9(*d.numer() as f64 / *d.denom() as f64),
        cfg.streams_first(),
        cfg.streams_other(),
        cfg.types()
    );
    if cfg.types() > MAX_TYPES as u128 {
        out.push_str(&format!("verify = skipped (more than {MAX_TYPES} types)\n"));
        return Ok(out);
    }
    if n > 4 {
        eprintln!("# note: numerical ranks are unreliable for high channel powers");
    }
    let h = DiagonalChannelStack::random(k, cfg.types() as usize, common.seed);
    let v = build_beamforming(&cfg, &h)?;
    let rep = verify_alignment(&cfg, &h, &v);
    for (i, r) in rep.receivers.iter().enumerate() {
        out.push_str(&format!(
            "rx{} interference_rank = {} budget = {} desired = {} independent = {}\n",
            i + 1,
            r.interference_rank,
            r.interference_budget,
            r.desired_streams,
            r.desired_independent
        ));
    }
    out.push_str(&format!(
        "aligned = {}\nresolvable = {}\n",
        rep.aligned(),
        rep.resolvable()
    ));
    Ok(out)
}

fn snap_problem(ts: &TimingSchedule, reaction: bool) -> Problem {
    match (reaction, ts.is_special()) {
        (true, true) => Problem::RSpecial,
        (true, false) => Problem::RGeneral,
        (false, true) => Problem::NrSpecial,
        (false, false) => Problem::NrGeneral,
    }
}

/// Returns the report text and whether every required check passed.
fn verify(
    common: &Common,
    times: &str,
    no_snap: bool,
    max_shift: f64,
    reaction: &str,
) -> CliResult<(String, bool)> {
    let scn = resolve_scenario(common)?;
    log_context(&scn, common.seed);
    let (raw, row) = if let Ok(row) = times.parse::<ReferenceSchedule>() {
        if Path::new(times).exists() {
            (load_times(Path::new(times))?, None)
        } else {
            (row.schedule(), Some(row))
        }
    } else {
        (load_times(Path::new(times))?, None)
    };
    let mut lines = Vec::new();
    let snap = |r: bool| project_to_feasible(&scn, &raw, snap_problem(&raw, r), max_shift);
    let with_reaction = match reaction {
        "on" => true,
        "off" => false,
        "auto" => match row {
            Some(r) => r.problem().with_reaction(),
            None => {
                raw.common_sampling()
                    && if no_snap {
                        check_conditions(&scn, &raw, Tolerances::default())
                            .map(|c| c.aligned_with_reaction())
                            .unwrap_or(false)
                    } else {
                        snap(true).is_ok()
                    }
            }
        },
        _ => {
            return Err(CliError::Input(format!(
                "--reaction '{reaction}': expected auto, on or off"
            )))
        }
    };
    let ts = if no_snap {
        raw
    } else {
        let s = snap(with_reaction)?;
        let shift = raw
            .to_array()
            .iter()
            .zip(s.to_array())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        lines.push(format!("snap_shift = {}", fmt9(shift)));
        s
    };
    let mut pass = true;
    let check = |name: &str, ok: bool, value: String, lines: &mut Vec<String>| {
        let verdict = if ok { "ok" } else { "FAIL" };
        lines.push(if value.is_empty() {
            format!("{name} = {verdict}")
        } else {
            format!("{name} = {value} {verdict}")
        });
        ok
    };
    let order = ts.check_order();
    pass &= check(
        "order",
        order.is_ok(),
        order.err().map(|e| e.to_string()).unwrap_or_default(),
        &mut lines,
    );
    let slot = ts.check_slot(scn.slot_duration);
    pass &= check(
        "slot",
        slot.is_ok(),
        slot.err().map(|e| e.to_string()).unwrap_or_default(),
        &mut lines,
    );
    if pass {
        let rep = check_conditions(&scn, &ts, Tolerances::default())?;
        pass &= check(
            "ia_residual",
            rep.ia_satisfied,
            fmt9(rep.ia_residual),
            &mut lines,
        );
        for i in 0..3 {
            pass &= check(
                &format!("independency_rx{}", i + 1),
                rep.independency_satisfied[i],
                fmt9(rep.independency_residuals[i]),
                &mut lines,
            );
        }
        match (rep.reaction_residuals, rep.reaction_satisfied) {
            (Some(r), Some(ok)) => {
                for i in 0..3 {
                    let name = format!("reaction_rx{}", i + 1);
                    if with_reaction {
                        pass &= check(&name, ok[i], fmt9(r[i]), &mut lines);
                    } else {
                        lines.push(format!("{name} = {} not required", fmt9(r[i])));
                    }
                }
            }
            _ if with_reaction => {
                pass &= check(
                    "reaction",
                    false,
                    "sampling differs across types".into(),
                    &mut lines,
                )
            }
            _ => lines.push("reaction = not applicable".into()),
        }
    }
    let mut out = format_times(&ts);
    for l in lines {
        out.push_str(&l);
        out.push('\n');
    }
    out.push_str(&format!(
        "result = {}\n",
        if pass { "pass" } else { "fail" }
    ));
    Ok((out, pass))
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::FeasibleRegion { common, points } => {
            let text = feasible_region(&common, points)?;
            emit(&common.out, &text)
        }
        Command::OptimizeTimes {
            common,
            problem,
            method,
            trials,
            grid,
            starts,
            budget,
            trace,
        } => {
            let text = optimize_times(
                &common,
                problem,
                method.as_deref(),
                trials,
                grid,
                starts,
                budget,
                trace.as_deref(),
            )?;
            emit(&common.out, &text)
        }
        Command::ErrorCurve {
            common,
            sim,
            zeta0,
            ratio,
            no_analytic,
        } => {
            let text = error_curve(&common, &sim, &zeta0, ratio, no_analytic)?;
            emit(&common.out, &text)
        }
        Command::Simulate { common, sim } => {
            let text = simulate_cmd(&common, &sim)?;
            emit(&common.out, &text)
        }
        Command::AsymptoticDof {
            common,
            k,
            n,
            max_order,
        } => {
            let text = asymptotic(&common, k, n, max_order)?;
            emit(&common.out, &text)
        }
        Command::Verify {
            common,
            times,
            no_snap,
            max_shift,
            reaction,
        } => {
            let (text, pass) = verify(&common, &times, no_snap, max_shift, &reaction)?;
            emit(&common.out, &text)?;
            if pass {
                Ok(())
            } else {
                Err(CliError::Input(
                    "schedule fails the condition checks".into(),
                ))
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Input(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(CliError::Internal(m)) => {
            eprintln!("internal error: {m}");
            ExitCode::from(1)
        }
    }
}
