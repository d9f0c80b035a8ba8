//! `tdbench`: command-line front end for the teleoperated-driving benchmark.
//!
//! Exit codes: 0 on success, 2 for configuration or usage errors, 3 when a
//! processing stage fails.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use tdbench_core::codec::{self, Bitstream, CodecConfig};
use tdbench_core::detect::{to_json_lines, Detection, DetectionRecord, Detector};
use tdbench_core::eval::{average_precision, benchmark_codec, match_frame, mean_frame_ap, PrCurve};
use tdbench_core::netsim::{self, check_compliance, simulate, StageTimes};
use tdbench_core::pc::{self, ClassLabel, LabeledFrame};
use tdbench_core::pipeline::tables::{opt, Table, COMPRESSION_CSV};
use tdbench_core::pipeline::{self, ExperimentSpec, PipelineError};
use tdbench_core::scenegen;

#[derive(Parser)]
#[command(
    name = "tdbench",
    version,
    about = "Point-cloud compression, detection and V2X delay benchmark"
)]
struct Cli {
    /// Experiment spec in TOML or JSON; built-in defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a labeled synthetic corpus.
    Generate {
        #[arg(long)]
        frames: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Encode a frame file, or every frame of a corpus directory.
    Encode {
        #[arg(long)]
        input: PathBuf,
        /// `p0`..`p3`, `pqs=<scale>` or a quantizer label such as `905`.
        #[arg(long, default_value = "p2")]
        codec: String,
    },
    /// Decode a `.tdbc` bitstream, or every bitstream in a directory.
    Decode {
        #[arg(long)]
        input: PathBuf,
    },
    /// Run the detector and write `detections.jsonl`.
    Detect {
        #[arg(long)]
        input: PathBuf,
    },
    /// Score detections against a corpus and write `eval.json`.
    Eval {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        detections: PathBuf,
    },
    /// Benchmark codecs over a corpus and write `compression.csv`.
    Bench {
        /// Corpus directory; the experiment's corpus is generated when omitted.
        #[arg(long)]
        corpus: Option<PathBuf>,
        /// Comma-separated codec labels; the experiment's full grid when omitted.
        #[arg(long, value_delimiter = ',')]
        codec: Vec<String>,
    },
    /// Simulate the shared uplink and write `simulation.json`.
    Simulate {
        /// A `compression.csv` whose sizes drive the simulation.
        #[arg(long, conflicts_with = "size_bytes")]
        trace: Option<PathBuf>,
        /// Codec rows to take from the trace; required when it holds several.
        #[arg(long)]
        codec: Option<String>,
        /// Constant frame size instead of a trace.
        #[arg(long)]
        size_bytes: Option<u64>,
        /// Also apply the measured encode and decode times of the trace.
        #[arg(long, requires = "trace")]
        with_timings: bool,
        /// Also write the event log to `events.csv`.
        #[arg(long)]
        events: bool,
    },
    /// Run the full experiment and write the report bundle.
    Pipeline,
    /// Render the charts of a bundle.
    Charts {
        #[arg(long)]
        bundle: PathBuf,
    },
}

/// Marks an error as a configuration or usage problem (exit code 2).
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
struct ConfigError(String);

fn config_err(msg: impl Into<String>) -> anyhow::Error {
    ConfigError(msg.into()).into()
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if let Some(p) = err.downcast_ref::<PipelineError>() {
        return p.exit_code() as u8;
    }
    if err.downcast_ref::<ConfigError>().is_some() {
        2
    } else {
        3
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn load_spec(path: Option<&Path>, out: &Path) -> Result<ExperimentSpec> {
    let mut spec = match path {
        Some(p) => ExperimentSpec::load(p)?,
        None => ExperimentSpec::default(),
    };
    spec.out_dir = out.to_path_buf();
    Ok(spec)
}

fn parse_codec(label: &str) -> Result<CodecConfig> {
    label
        .parse()
        .map_err(|e| config_err(format!("codec {label:?}: {e}")))
}

/// Files under `input` with `ext`, sorted, or `input` itself when it is a file.
fn input_files(input: &Path, ext: &str) -> Result<Vec<PathBuf>> {
    if input.is_file() {
        return Ok(vec![input.to_path_buf()]);
    }
    if !input.is_dir() {
        return Err(config_err(format!(
            "input {} does not exist",
            input.display()
        )));
    }
    let mut files: Vec<PathBuf> = std::fs::read_dir(input)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<Vec<_>>>()?
        .into_iter()
        .filter(|p| p.extension().is_some_and(|e| e == ext))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(config_err(format!(
            "no .{ext} files in {}",
            input.display()
        )));
    }
    Ok(files)
}

fn stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "frame".into())
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    tdbench_core::io::write_atomic(path, bytes)
        .with_context(|| format!("writing {}", path.display()))
}

fn run(cli: Cli) -> Result<()> {
    let spec = load_spec(cli.config.as_deref(), &cli.out)?;
    let out = cli.out.as_path();
    match cli.command {
        Command::Generate { frames, seed } => {
            let mut corpus = spec.corpus.clone();
            if let Some(n) = frames {
                corpus.n_frames = n;
            }
            if let Some(s) = seed {
                corpus.scene.seed = s;
            }
            corpus
                .scene
                .validate()
                .map_err(|e| config_err(e.to_string()))?;
            let manifest = scenegen::generate_corpus(&corpus.scene, corpus.n_frames, out)
                .context("generating corpus")?;
            println!("wrote {} frames to {}", manifest.len(), out.display());
        }
        Command::Encode { input, codec } => {
            let config = parse_codec(&codec)?;
            for path in input_files(&input, "tdbf")? {
                let frame =
                    pc::load_frame(&path).with_context(|| format!("reading {}", path.display()))?;
                let bs = config
                    .encode(&frame.cloud)
                    .with_context(|| format!("encoding {}", path.display()))?;
                let dst = out.join(format!("{}.tdbc", stem(&path)));
                write(&dst, bs.as_bytes())?;
                println!(
                    "{} -> {} ({} bytes, {codec})",
                    path.display(),
                    dst.display(),
                    bs.len()
                );
            }
        }
        Command::Decode { input } => {
            for path in input_files(&input, "tdbc")? {
                let bytes =
                    std::fs::read(&path).with_context(|| format!("reading {}", path.display()))?;
                let cloud = codec::decode(&Bitstream::from_bytes(bytes))
                    .with_context(|| format!("decoding {}", path.display()))?;
                let frame = LabeledFrame {
                    cloud,
                    gt_boxes: Vec::new(),
                    frame_id: pc::frame_id_from_path(&path),
                };
                let dst = out.join(format!("{}.tdbf", stem(&path)));
                pc::save_frame(&frame, &dst)
                    .with_context(|| format!("writing {}", dst.display()))?;
                println!(
                    "{} -> {} ({} points)",
                    path.display(),
                    dst.display(),
                    frame.cloud.len()
                );
            }
        }
        Command::Detect { input } => {
            spec.detector
                .validate()
                .map_err(|e| config_err(e.to_string()))?;
            let mut detector = Detector::new(spec.detector);
            let mut lines = String::new();
            let mut total = 0;
            for path in input_files(&input, "tdbf")? {
                let frame =
                    pc::load_frame(&path).with_context(|| format!("reading {}", path.display()))?;
                let dets = detector.run(&frame.cloud);
                total += dets.len();
                lines.push_str(&to_json_lines(frame.frame_id, &dets));
            }
            let dst = out.join("detections.jsonl");
            write(&dst, lines.as_bytes())?;
            println!("wrote {total} detections to {}", dst.display());
        }
        Command::Eval { corpus, detections } => eval(&spec, &corpus, &detections, out)?,
        Command::Bench { corpus, codec } => {
            let configs = if codec.is_empty() {
                spec.codecs.clone()
            } else {
                codec
                    .iter()
                    .map(|c| parse_codec(c))
                    .collect::<Result<_>>()?
            };
            let frames = match corpus {
                Some(dir) => scenegen::load_corpus(&dir)
                    .with_context(|| format!("loading corpus {}", dir.display()))?,
                None => pipeline::prepare_corpus(&spec.corpus, &pipeline::cache_root(&spec))?,
            };
            let mut table = Table::new(&[
                "codec",
                "family",
                "frame_id",
                "raw_bytes",
                "compressed_bytes",
                "ratio",
                "input_points",
                "output_points",
                "d1_rmse",
                "encode_ms@measured",
                "decode_ms@measured",
            ]);
            for config in &configs {
                let reports = benchmark_codec(&frames, config, &spec.bench)
                    .with_context(|| format!("codec {config}"))?;
                for r in reports {
                    table.push(vec![
                        r.codec,
                        config.family().into(),
                        r.frame_id.to_string(),
                        r.raw_bytes.to_string(),
                        r.compressed_bytes.to_string(),
                        r.ratio.to_string(),
                        r.input_points.to_string(),
                        r.output_points.to_string(),
                        opt(r.d1_rmse),
                        r.encode_ms.to_string(),
                        r.decode_ms.to_string(),
                    ]);
                }
            }
            let dst = out.join(COMPRESSION_CSV);
            table
                .write(&dst)
                .with_context(|| format!("writing {}", dst.display()))?;
            println!("wrote {} rows to {}", table.len(), dst.display());
        }
        Command::Simulate {
            trace,
            codec,
            size_bytes,
            with_timings,
            events,
        } => {
            let (sizes, times) = match (trace, size_bytes) {
                (Some(path), _) => read_trace(&path, codec.as_deref(), with_timings)?,
                (None, Some(s)) => (vec![s], StageTimes::default()),
                (None, None) => return Err(config_err("simulate needs --trace or --size-bytes")),
            };
            let traces: Vec<Vec<u64>> = (0..spec.network.n_vehicles)
                .map(|v| {
                    let mut t = sizes.clone();
                    t.rotate_left(v % sizes.len());
                    t
                })
                .collect();
            spec.network
                .validate()
                .map_err(|e| config_err(e.to_string()))?;
            let result = simulate(&spec.network, &traces, &times).context("simulation")?;
            let profile =
                netsim::profile(&spec.compliance_profile).expect("validated with the spec");
            let report = serde_json::json!({
                "scenario": spec.network,
                "summary": result.summary,
                "compliance": check_compliance(&result.summary, &profile),
            });
            let dst = out.join("simulation.json");
            write(
                &dst,
                (serde_json::to_string_pretty(&report)? + "\n").as_bytes(),
            )?;
            if events {
                let mut t = Table::new(&["time_ms", "vehicle", "frame", "kind"]);
                for e in &result.events {
                    let kind = serde_json::to_value(e.kind)?
                        .as_str()
                        .unwrap_or_default()
                        .to_string();
                    t.push(vec![
                        e.time_ms.to_string(),
                        e.vehicle.to_string(),
                        e.frame.to_string(),
                        kind,
                    ]);
                }
                let path = out.join("events.csv");
                t.write(&path)
                    .with_context(|| format!("writing {}", path.display()))?;
            }
            let s = &result.summary;
            println!(
                "delivered {}/{} frames, mean delay {:.3} ms, required rate {:.3} Mbps",
                s.delivered,
                s.generated,
                s.total_ms.mean,
                s.required_rate_bps / 1e6
            );
        }
        Command::Pipeline => {
            let bundle = pipeline::run_pipeline(&spec)?;
            println!(
                "wrote bundle {} (config {})",
                bundle.dir.display(),
                &bundle.config_hash[..16]
            );
        }
        Command::Charts { bundle } => {
            let paths = pipeline::render_charts(&bundle, out).map_err(|e| match e {
                pipeline::ChartError::MissingTable(_) => config_err(e.to_string()),
                other => other.into(),
            })?;
            for p in paths {
                println!("{}", p.display());
            }
        }
    }
    Ok(())
}

fn read_trace(
    path: &Path,
    codec: Option<&str>,
    with_timings: bool,
) -> Result<(Vec<u64>, StageTimes)> {
    let mut reader = csv::Reader::from_path(path)
        .map_err(|e| config_err(format!("trace {}: {e}", path.display())))?;
    let header = reader.headers()?.clone();
    let col = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| config_err(format!("trace has no {name:?} column")))
    };
    let (c_codec, c_size) = (col("codec")?, col("compressed_bytes")?);
    let timing_cols = if with_timings {
        Some((col("encode_ms@measured")?, col("decode_ms@measured")?))
    } else {
        None
    };
    let mut rows = Vec::new();
    for rec in reader.records() {
        rows.push(rec?);
    }
    let labels: std::collections::BTreeSet<&str> = rows.iter().map(|r| &r[c_codec]).collect();
    let wanted = match codec {
        Some(c) if labels.contains(c) => c.to_string(),
        Some(c) => bail!(ConfigError(format!("trace has no rows for codec {c:?}"))),
        None if labels.len() == 1 => labels.iter().next().unwrap().to_string(),
        None => bail!(ConfigError(format!(
            "trace holds {} codecs; choose one with --codec",
            labels.len()
        ))),
    };
    let mut sizes = Vec::new();
    let mut times = StageTimes::default();
    for r in rows.iter().filter(|r| r[c_codec] == *wanted) {
        sizes.push(
            r[c_size]
                .parse()
                .with_context(|| format!("bad size {:?}", &r[c_size]))?,
        );
        if let Some((e, d)) = timing_cols {
            times.encode_ms.push(r[e].parse()?);
            times.decode_ms.push(r[d].parse()?);
        }
    }
    Ok((sizes, times))
}

fn eval(spec: &ExperimentSpec, corpus: &Path, detections: &Path, out: &Path) -> Result<()> {
    let frames = scenegen::load_corpus(corpus)
        .with_context(|| format!("loading corpus {}", corpus.display()))?;
    let text = std::fs::read_to_string(detections)
        .with_context(|| format!("reading {}", detections.display()))?;
    let mut by_frame: std::collections::BTreeMap<u64, Vec<Detection>> = Default::default();
    for (i, line) in text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
    {
        let rec: DetectionRecord = serde_json::from_str(line)
            .with_context(|| format!("{}:{}", detections.display(), i + 1))?;
        let det = rec
            .detection()
            .with_context(|| format!("{}:{}: invalid box", detections.display(), i + 1))?;
        by_frame.entry(rec.frame_id).or_default().push(det);
    }
    let mut report = serde_json::Map::new();
    for class in ClassLabel::ALL {
        let matches: Vec<_> = frames
            .iter()
            .map(|f| {
                let dets = by_frame.get(&f.frame_id).map(Vec::as_slice).unwrap_or(&[]);
                match_frame(dets, &f.gt_boxes, class, &spec.ap)
            })
            .collect();
        let pooled = average_precision(&PrCurve::from_frames(&matches), &spec.ap);
        report.insert(
            class.as_str().to_string(),
            serde_json::json!({
                "ap": mean_frame_ap(&matches, &spec.ap),
                "pooled": pooled,
            }),
        );
        println!(
            "{}: AP {:.4} (pooled {:.4})",
            class.as_str(),
            mean_frame_ap(&matches, &spec.ap).unwrap_or(0.0),
            pooled.ap
        );
    }
    let dst = out.join("eval.json");
    write(
        &dst,
        (serde_json::to_string_pretty(&report)? + "\n").as_bytes(),
    )?;
    Ok(())
}
