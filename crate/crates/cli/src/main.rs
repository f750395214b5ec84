mod config;

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use superpose::analysis::{
    analyze, invert_two_photon, report, write_coincidence_csv, write_fringe_csv, Report,
};
use superpose::emitter::{evolve, rabi_sweep, write_rabi_csv, write_trajectory_csv};
use superpose::fock::g2_zero;
use superpose::interference::{fringe_curve, visibilities, write_curve_csv};
use superpose::mzi::{
    read_stream, synthesize, write_stream, BIN_COINCIDENCES_FILE, EXPERIMENT_FILE, HISTOGRAM_FILE,
    SINGLES_FILE,
};
use superpose::{Error, Result};

use config::{load, AnalyzeConfig, FringeConfig, InvertConfig, RabiConfig, SynthConfig};

const MANIFEST_FILE: &str = "manifest.json";
const DEFAULT_OUT: &str = "out";

#[derive(Parser)]
#[command(name = "superpose", version, about = "Photon-number superposition toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Random seed; runs are deterministic given the seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Emitter parameter preset.
    #[arg(long, global = true, value_enum)]
    preset: Option<Preset>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Qd1,
    Qd2,
}

impl Preset {
    fn name(self) -> &'static str {
        match self {
            Preset::Qd1 => "qd1",
            Preset::Qd2 => "qd2",
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Emission versus pulse area.
    Rabi,
    /// Closed-form singles and coincidence fringes over the phase.
    Fringe,
    /// Synthetic detector record of the interferometer.
    Synth,
    /// Visibilities, g2 and the recovered state from a synthetic record.
    Analyze {
        /// Directory written by `synth`.
        input: PathBuf,
    },
    /// Recovered state from measured visibilities and g2.
    #[command(allow_negative_numbers = true)]
    Invert { v1: f64, v2: f64, g2: f64 },
    /// Reruns the subcommand recorded in a manifest.
    Replay {
        manifest: PathBuf,
    },
}

/// Everything needed to regenerate a run's outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    tool: String,
    version: String,
    subcommand: String,
    config_path: Option<String>,
    seed: u64,
    out: String,
    /// Record directory for `analyze`.
    input: Option<String>,
    /// `(v1, v2, g2)` for `invert`.
    measurements: Option<[f64; 3]>,
    /// Fully resolved configuration, defaults included.
    config: Value,
    outputs: Vec<String>,
}

struct Run {
    subcommand: &'static str,
    config_path: Option<String>,
    seed: u64,
    out: PathBuf,
    input: Option<PathBuf>,
    measurements: Option<[f64; 3]>,
}

impl Run {
    fn finish<C: Serialize>(&self, config: &C, outputs: &[&str]) -> Result<()> {
        let manifest = Manifest {
            tool: "superpose".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            subcommand: self.subcommand.into(),
            config_path: self.config_path.clone(),
            seed: self.seed,
            out: self.out.display().to_string(),
            input: self.input.as_ref().map(|p| p.display().to_string()),
            measurements: self.measurements,
            config: serde_json::to_value(config)?,
            outputs: outputs.iter().map(|s| s.to_string()).collect(),
        };
        write_json(&self.out.join(MANIFEST_FILE), &manifest)
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn rabi(run: &Run, cfg: &RabiConfig) -> Result<()> {
    let template = cfg.emitter().pulse(0.0)?;
    let points = rabi_sweep(&template, &cfg.areas()?)?;
    let mut outputs = vec!["rabi.csv"];
    let mut w = create(&run.out.join("rabi.csv"))?;
    write_rabi_csv(&mut w, &points)?;
    w.flush()?;
    if let Some(area) = cfg.trajectory_area_pi {
        let traj = evolve(&template.with_area(area))?;
        let mut w = create(&run.out.join("trajectory.csv"))?;
        write_trajectory_csv(&mut w, &traj, cfg.trajectory_stride)?;
        w.flush()?;
        outputs.push("trajectory.csv");
    }
    run.finish(cfg, &outputs)
}

#[derive(Serialize)]
struct FringeSummary {
    populations: Vec<f64>,
    lambda: f64,
    overlap: f64,
    v1: f64,
    v2: f64,
    g2: f64,
    cbar_min_phi: f64,
    cbar_max_phi: f64,
}

fn fringe(run: &Run, cfg: &FringeConfig) -> Result<()> {
    let state = cfg.state()?;
    let curve = fringe_curve(&state, cfg.overlap, cfg.points)?;
    let (v1, v2) = visibilities(&state, cfg.overlap)?;
    // first extremum on the grid, so flat curves report phi = 0
    let pick = |better: fn(f64, f64) -> bool| {
        curve
            .iter()
            .fold(&curve[0], |best, p| if better(p.cbar, best.cbar) { p } else { best })
            .phi
    };
    let summary = FringeSummary {
        populations: state.populations().to_vec(),
        lambda: state.lambda(),
        overlap: cfg.overlap,
        v1,
        v2,
        g2: g2_zero(&state)?,
        cbar_min_phi: pick(|a, b| a < b - 1e-12),
        cbar_max_phi: pick(|a, b| a > b + 1e-12),
    };
    let mut w = create(&run.out.join("fringe.csv"))?;
    write_curve_csv(&mut w, &curve)?;
    w.flush()?;
    write_json(&run.out.join("fringe.json"), &summary)?;
    run.finish(cfg, &["fringe.csv", "fringe.json"])
}

fn synth(run: &Run, cfg: &SynthConfig) -> Result<()> {
    let experiment = cfg.experiment(run.seed)?;
    let stream = synthesize(&experiment)?;
    write_stream(&run.out, &stream, &experiment)?;
    run.finish(
        cfg,
        &[SINGLES_FILE, HISTOGRAM_FILE, BIN_COINCIDENCES_FILE, EXPERIMENT_FILE],
    )
}

fn print_report(report: &Report) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(report)?);
    Ok(())
}

fn analyze_cmd(run: &Run, cfg: &AnalyzeConfig) -> Result<()> {
    let input = run.input.as_deref().expect("analyze needs an input directory");
    let stream = read_stream(input)?;
    let options = cfg.options(run.seed)?;
    let result = analyze(&stream, &options)?;
    let rep = report(
        &result.inversion,
        cfg.cat_alpha_sq,
        Some(&result.measured.measurement),
        result.uncertainties.as_ref(),
    )?;
    write_json(&run.out.join("report.json"), &rep)?;
    let mut w = create(&run.out.join("phase_fringe.csv"))?;
    write_fringe_csv(&mut w, &stream, &result.measured.mapped)?;
    w.flush()?;
    let mut w = create(&run.out.join("coincidence_curve.csv"))?;
    write_coincidence_csv(&mut w, &stream, &result.measured)?;
    w.flush()?;
    run.finish(cfg, &["report.json", "phase_fringe.csv", "coincidence_curve.csv"])?;
    print_report(&rep)
}

fn invert(run: &Run, cfg: &InvertConfig) -> Result<()> {
    let [v1, v2, g2] = run.measurements.expect("invert needs measurements");
    if !(cfg.overlap > 0.0 && cfg.overlap <= 1.0) {
        return Err(Error::Validation(format!("overlap {} outside (0, 1]", cfg.overlap)));
    }
    let result = invert_two_photon(v1 / cfg.overlap.sqrt(), v2, g2)?;
    let rep = report(&result, cfg.cat_alpha_sq, None, None)?;
    write_json(&run.out.join("report.json"), &rep)?;
    run.finish(cfg, &["report.json"])?;
    print_report(&rep)
}

fn resolved<T: serde::de::DeserializeOwned>(value: Value) -> Result<T> {
    serde_json::from_value(value).map_err(|e| Error::Config(format!("manifest config: {e}")))
}

fn execute(run: &Run, config: Value) -> Result<()> {
    match run.subcommand {
        "rabi" => rabi(run, &resolved(config)?),
        "fringe" => fringe(run, &resolved(config)?),
        "synth" => synth(run, &resolved(config)?),
        "analyze" => analyze_cmd(run, &resolved(config)?),
        "invert" => invert(run, &resolved(config)?),
        other => Err(Error::Config(format!("unknown subcommand '{other}' in manifest"))),
    }
}

fn replay(path: &Path, out: Option<PathBuf>) -> Result<()> {
    let text = fs::read_to_string(path)?;
    let m: Manifest =
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let subcommand = ["rabi", "fringe", "synth", "analyze", "invert"]
        .into_iter()
        .find(|s| *s == m.subcommand)
        .ok_or_else(|| Error::Config(format!("unknown subcommand '{}'", m.subcommand)))?;
    let run = Run {
        subcommand,
        config_path: m.config_path,
        seed: m.seed,
        out: out.unwrap_or_else(|| PathBuf::from(m.out)),
        input: m.input.map(PathBuf::from),
        measurements: m.measurements,
    };
    fs::create_dir_all(&run.out)?;
    execute(&run, m.config)
}

fn main_inner(cli: Cli) -> Result<()> {
    let preset = cli.preset.map(|p| p.name().to_string());
    let mut run = Run {
        subcommand: "",
        config_path: cli.config.as_ref().map(|p| p.display().to_string()),
        seed: cli.seed.unwrap_or(0),
        out: cli.out.clone().unwrap_or_else(|| PathBuf::from(DEFAULT_OUT)),
        input: None,
        measurements: None,
    };
    let path = cli.config.as_deref();
    let config = match cli.command {
        Command::Replay { manifest } => return replay(&manifest, cli.out),
        Command::Rabi => {
            run.subcommand = "rabi";
            let mut c: RabiConfig = load(path)?;
            c.preset = preset.or(c.preset);
            serde_json::to_value(c)?
        }
        Command::Fringe => {
            run.subcommand = "fringe";
            let mut c: FringeConfig = load(path)?;
            c.preset = preset.or(c.preset);
            serde_json::to_value(c)?
        }
        Command::Synth => {
            run.subcommand = "synth";
            let mut c: SynthConfig = load(path)?;
            c.preset = preset.or(c.preset);
            serde_json::to_value(c)?
        }
        Command::Analyze { input } => {
            run.subcommand = "analyze";
            run.input = Some(input);
            serde_json::to_value(load::<AnalyzeConfig>(path)?)?
        }
        Command::Invert { v1, v2, g2 } => {
            run.subcommand = "invert";
            run.measurements = Some([v1, v2, g2]);
            serde_json::to_value(load::<InvertConfig>(path)?)?
        }
    };
    fs::create_dir_all(&run.out)?;
    execute(&run, config)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match main_inner(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if let Error::Ambiguous { candidates } = &e {
                for c in candidates {
                    eprintln!("  p = ({:.4}, {:.4}, {:.4}), lambda = {:.4}", c[0], c[1], c[2], c[3]);
                }
            }
            ExitCode::from(if e.is_validation() {
                2
            } else if e.is_infeasible() {
                3
            } else {
                1
            })
        }
    }
}
