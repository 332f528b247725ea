use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use beamtag::bench;
use beamtag::codebook::{generate_lexicode, resolve_family, write_family, TagFamily, DEFAULT_BUILTIN_SEED};
use beamtag::pipeline::DetectionRecord;
use beamtag::pointcloud::{read_csv, write_csv, CsvOptions};
use beamtag::synth::{
    facing_pose, render, LidarModel, NoiseModel, Rendered, ReturnLabel, Scene, SceneDescription, TagTarget, TagTruth,
};
use beamtag::{Detector, DetectorConfig, StageTimings};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

#[derive(Parser)]
#[command(name = "beamtag", version, about = "Fiducial tag detection in multi-beam LiDAR scans")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// JSON file with `detector`, `noise` and `seed` sections.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the seed of scene noise, random scenes and generated families.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Threads for per-cluster work; 0 uses all cores.
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    format: Format,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Text,
}

#[derive(Subcommand)]
enum Command {
    /// Render a scene description to a scan CSV and a `.truth.json` sidecar.
    Synth { scene: PathBuf, out: PathBuf },
    /// Detect and decode tags in a scan CSV.
    Detect {
        scan: PathBuf,
        /// Raw intensities are divided by this value.
        #[arg(long, default_value_t = 1.0)]
        intensity_scale: f64,
        /// Beam count of the sensor; inferred from the data when absent.
        #[arg(long)]
        num_beams: Option<usize>,
        /// Leave stage timings out of the output.
        #[arg(long)]
        no_timings: bool,
    },
    /// Generate, verify or describe tag families.
    Codebook {
        #[command(subcommand)]
        action: CodebookCommand,
    },
    /// Per-stage timing and decoding accuracy over a set of scenes.
    Bench {
        /// Scene description files. Without any, random scenes are rendered.
        scenes: Vec<PathBuf>,
        #[arg(long, default_value_t = 10)]
        repetitions: usize,
        /// Number of random scenes when no scene file is given.
        #[arg(long, default_value_t = 20)]
        random: usize,
    },
}

#[derive(Subcommand)]
enum CodebookCommand {
    Generate {
        #[arg(long, default_value_t = 4)]
        d: usize,
        #[arg(long, default_value_t = 5)]
        h: usize,
        #[arg(long)]
        name: Option<String>,
        /// Output file; stdout when absent.
        #[arg(long, short)]
        output: Option<PathBuf>,
    },
    /// Exhaustive rotation-inclusive distance check. Exits 1 on a violation.
    Verify { family: String },
    Info { family: String },
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct Config {
    detector: DetectorConfig,
    noise: Option<NoiseModel>,
    seed: Option<u64>,
}

struct Failure {
    code: u8,
    message: String,
}

fn input_error(message: impl ToString) -> Failure {
    Failure {
        code: 2,
        message: message.to_string(),
    }
}

type CliResult = Result<(), Failure>;

impl Global {
    fn load(&self) -> Result<Config, Failure> {
        let mut config = match &self.config {
            Some(path) => {
                let file = open(path)?;
                serde_json::from_reader(BufReader::new(file))
                    .map_err(|e| input_error(format!("{}: {e}", path.display())))?
            }
            None => Config::default(),
        };
        if let Some(w) = self.workers {
            config.detector.workers = w;
        }
        if self.seed.is_some() {
            config.seed = self.seed;
        }
        config.detector.validate().map_err(input_error)?;
        Ok(config)
    }
}

fn open(path: &Path) -> Result<File, Failure> {
    File::open(path).map_err(|e| input_error(format!("{}: {e}", path.display())))
}

fn create(path: &Path) -> Result<BufWriter<File>, Failure> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| input_error(format!("{}: {e}", path.display())))
}

fn family(spec: &str) -> Result<TagFamily, Failure> {
    resolve_family(spec).map_err(|e| input_error(format!("family {spec:?}: {e}")))
}

fn detector(config: &Config) -> Result<Detector<f64>, Failure> {
    let fam = family(&config.detector.family)?;
    Detector::new(config.detector.clone(), &fam).map_err(input_error)
}

fn print_json(value: &impl Serialize) -> CliResult {
    let text = serde_json::to_string_pretty(value).map_err(input_error)?;
    println!("{text}");
    Ok(())
}

#[derive(Serialize)]
struct Sidecar<'a> {
    truths: &'a [TagTruth],
    labels: &'a [ReturnLabel],
}

fn load_scene(path: &Path, config: &Config) -> Result<(Rendered, NoiseModel), Failure> {
    let desc: SceneDescription = serde_json::from_reader(BufReader::new(open(path)?))
        .map_err(|e| input_error(format!("{}: {e}", path.display())))?;
    let fam = family(&desc.family)?;
    let scene = desc.build(&fam).map_err(input_error)?;
    let mut noise = config.noise.unwrap_or_else(|| desc.noise());
    if let Some(seed) = config.seed {
        noise.seed = seed;
    }
    noise.validate().map_err(input_error)?;
    let rendered = render(&scene).map_err(input_error)?;
    Ok((rendered, noise))
}

fn synth(global: &Global, scene: &Path, out: &Path) -> CliResult {
    let config = global.load()?;
    let (clean, noise) = load_scene(scene, &config)?;
    let rendered = clean.with_noise(&noise).map_err(input_error)?;
    let io = |e: std::io::Error| input_error(format!("{}: {e}", out.display()));
    let mut w = create(out)?;
    write_csv(&rendered.scan, &mut w).map_err(io)?;
    w.flush().map_err(io)?;

    let sidecar = out.with_extension("truth.json");
    let mut w = create(&sidecar)?;
    serde_json::to_writer(
        &mut w,
        &Sidecar {
            truths: &rendered.truths,
            labels: &rendered.labels,
        },
    )
    .map_err(input_error)?;
    writeln!(w).and_then(|_| w.flush()).map_err(io)?;
    if global.format == Format::Text {
        println!(
            "{} returns, {} tag(s) -> {}, {}",
            rendered.scan.len(),
            rendered.truths.len(),
            out.display(),
            sidecar.display()
        );
    }
    Ok(())
}

#[derive(Serialize)]
struct DetectOutput {
    detections: Vec<DetectionRecord>,
    num_points: usize,
    num_edges: usize,
    num_clusters: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    timings_ms: Option<StageTimings>,
}

fn detect(global: &Global, scan: &Path, options: CsvOptions, timings: bool) -> CliResult {
    let config = global.load()?;
    let det = detector(&config)?;
    let scan = read_csv(BufReader::new(open(scan)?), options)
        .map_err(|e| input_error(format!("{}: {e}", scan.display())))?;
    let report = det.detect(&scan);
    let out = DetectOutput {
        detections: report.detections.iter().map(|d| d.record(timings)).collect(),
        num_points: report.num_points,
        num_edges: report.num_edges,
        num_clusters: report.num_clusters(),
        timings_ms: timings.then_some(report.timings),
    };
    match global.format {
        Format::Json => print_json(&out),
        Format::Text => {
            for d in &out.detections {
                println!(
                    "tag {} k={} mu=({:.4}, {:.4}, {:.4}) hamming={} bad_bits={}",
                    d.tag_id, d.rotation_k, d.mu[0], d.mu[1], d.mu[2], d.hamming_distance, d.bad_bits
                );
            }
            println!(
                "{} detection(s); {} points, {} edges, {} clusters",
                out.detections.len(),
                out.num_points,
                out.num_edges,
                out.num_clusters
            );
            if let Some(t) = out.timings_ms {
                println!("total {:.4} ms", t.total());
            }
            Ok(())
        }
    }
}

#[derive(Serialize)]
struct FamilyInfo<'a> {
    name: &'a str,
    d: usize,
    h: usize,
    codewords: usize,
    min_distance: Option<u32>,
    violations: usize,
}

fn codebook(global: &Global, action: &CodebookCommand) -> CliResult {
    match action {
        CodebookCommand::Generate { d, h, name, output } => {
            let seed = global.seed.unwrap_or(DEFAULT_BUILTIN_SEED);
            let mut fam = generate_lexicode(*d, *h, seed).map_err(input_error)?;
            if let Some(n) = name {
                fam.name = n.clone();
            }
            match output {
                Some(path) => {
                    let mut w = create(path)?;
                    write_family(&fam, &mut w)
                        .and_then(|_| w.flush())
                        .map_err(|e| input_error(format!("{}: {e}", path.display())))
                }
                None => write_family(&fam, std::io::stdout().lock()).map_err(input_error),
            }
        }
        CodebookCommand::Verify { family: spec } | CodebookCommand::Info { family: spec } => {
            let fam = family(spec)?;
            let report = fam.verify();
            let info = FamilyInfo {
                name: &fam.name,
                d: fam.d,
                h: fam.h,
                codewords: fam.len(),
                min_distance: report.min_distance,
                violations: report.violations.len(),
            };
            match global.format {
                Format::Json => print_json(&info)?,
                Format::Text => println!(
                    "{}: d={} h={} codewords={} min_distance={} violations={}",
                    info.name,
                    info.d,
                    info.h,
                    info.codewords,
                    info.min_distance.map_or("-".into(), |m| m.to_string()),
                    info.violations
                ),
            }
            let verify = matches!(action, CodebookCommand::Verify { .. });
            if verify && !report.is_sound() {
                for (id, other, k, dist) in report.violations.iter().take(10) {
                    eprintln!("codeword {id} vs codeword {other} rotated {k}: distance {dist} < {}", fam.h);
                }
                return Err(Failure {
                    code: 1,
                    message: format!("{} violation(s)", report.violations.len()),
                });
            }
            Ok(())
        }
    }
}

/// Random single-tag scenes for the dense sensor: 1.5 to 4 m away, up to 30 degrees of
/// tilt and any quarter turn.
fn random_scenes(fam: &TagFamily, tag_size: f64, count: usize, noise: NoiseModel) -> Result<Vec<Rendered>, Failure> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(noise.seed);
    let model = LidarModel::dense();
    (0..count)
        .map(|i| {
            let id = rng.random_range(0..fam.len() as u32);
            let distance: f64 = rng.random_range(1.5..4.0);
            let az: f64 = rng.random_range(-5f64..5.0).to_radians();
            let el: f64 = rng.random_range(-4f64..4.0).to_radians();
            let axis = nalgebra::Vector3::new(0.0, rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            let tilt = nalgebra::UnitQuaternion::from_axis_angle(
                &nalgebra::Unit::new_normalize(axis),
                rng.random_range(0.0..30f64.to_radians()),
            );
            let k = rng.random_range(0..4u8);
            let center = nalgebra::Vector3::new(el.cos() * az.cos(), el.cos() * az.sin(), el.sin()) * distance;
            let pose = facing_pose(center, tilt, f64::from(k) * std::f64::consts::FRAC_PI_2);
            let target = TagTarget::new(fam, id, tag_size, pose).map_err(input_error)?;
            let clean = render(&Scene::new(model.clone(), target, 12.0)).map_err(input_error)?;
            clean
                .with_noise(&NoiseModel {
                    seed: noise.seed.wrapping_add(i as u64 + 1),
                    ..noise
                })
                .map_err(input_error)
        })
        .collect()
}

fn run_bench(global: &Global, scenes: &[PathBuf], repetitions: usize, random: usize) -> CliResult {
    let config = global.load()?;
    let det = detector(&config)?;
    let (rendered, label) = if scenes.is_empty() {
        if random == 0 {
            return Err(input_error("bench needs at least one scene"));
        }
        let mut noise = config.noise.unwrap_or_default();
        if let Some(seed) = config.seed {
            noise.seed = seed;
        }
        noise.validate().map_err(input_error)?;
        let r = random_scenes(det.family(), config.detector.tag_size, random, noise)?;
        (r, format!("random x{random}"))
    } else {
        let r = scenes
            .iter()
            .map(|p| load_scene(p, &config).and_then(|(c, n)| c.with_noise(&n).map_err(input_error)))
            .collect::<Result<Vec<_>, _>>()?;
        (r, "scene files".to_string())
    };
    let report = bench::run(&det, &rendered, repetitions, &label);
    match global.format {
        Format::Json => print_json(&report),
        Format::Text => {
            print!("{}", bench::format_table(&report));
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let g = &cli.global;
    let result = match &cli.command {
        Command::Synth { scene, out } => synth(g, scene, out),
        Command::Detect {
            scan,
            intensity_scale,
            num_beams,
            no_timings,
        } => detect(
            g,
            scan,
            CsvOptions {
                num_beams: *num_beams,
                intensity_scale: *intensity_scale,
            },
            !no_timings,
        ),
        Command::Codebook { action } => codebook(g, action),
        Command::Bench {
            scenes,
            repetitions,
            random,
        } => run_bench(g, scenes, *repetitions, *random),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
