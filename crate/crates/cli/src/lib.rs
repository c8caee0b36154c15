//! Command-line front end: decode an MPEG-2 elementary stream, write the
//! per-frame bandwidth report and optionally dump the decoded frames.

use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use clap::{Parser, ValueEnum};
use log::{info, LevelFilter};
use m2vscope::bandwidth::BandwidthReport;
use m2vscope::framestore::FramePicture;
use m2vscope::headers::FrameRate;
use m2vscope::{decode_stream, DecodeOptions, DecodeOutput, Error, Strictness};

pub mod report;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ReportFormat {
    Csv,
    Json,
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FrameDump {
    None,
    Y4m,
    /// One luma PGM per displayed frame.
    Pgm,
}

/// Decode an MPEG-2 video elementary stream and characterize the bandwidth
/// of every frame.
#[derive(Debug, Clone, Parser)]
#[command(name = "m2vscope", version)]
pub struct Cli {
    /// Elementary stream to decode (.m2v).
    #[arg(long)]
    pub input: PathBuf,

    #[arg(long, value_enum)]
    pub report: Option<ReportFormat>,

    /// Report file. With `--report both` the extension is replaced by
    /// `.csv` and `.json`.
    #[arg(long)]
    pub report_path: Option<PathBuf>,

    #[arg(long, value_enum, default_value = "none")]
    pub frame_dump: FrameDump,

    /// Y4M file, or the directory receiving PGM files.
    #[arg(long)]
    pub frame_dump_path: Option<PathBuf>,

    /// Stop after this many frames in decode order.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub max_frames: Option<u64>,

    /// Abort on the first stream error instead of concealing it.
    #[arg(long)]
    pub strict: bool,

    #[arg(long, env = "M2VSCOPE_LOG", default_value = "warn")]
    pub log_level: LevelFilter,
}

/// Validated run settings.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub input_path: PathBuf,
    pub report: Option<(ReportFormat, PathBuf)>,
    pub frame_dump: Option<(FrameDump, PathBuf)>,
    pub max_frames: Option<usize>,
    pub strictness: Strictness,
    pub log_level: LevelFilter,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error(transparent)]
    Decode(#[from] Error),

    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Decode(Error::UnsupportedStream(_) | Error::GeometryMismatch(_)) => 3,
            CliError::Decode(_) => 2,
            CliError::Io { .. } => 4,
        }
    }

    fn io(path: &Path) -> impl FnOnce(io::Error) -> CliError + '_ {
        move |source| CliError::Io {
            path: path.to_owned(),
            source,
        }
    }
}

fn non_empty(path: Option<PathBuf>, flag: &str) -> Result<PathBuf, CliError> {
    match path {
        Some(p) if !p.as_os_str().is_empty() => Ok(p),
        _ => Err(CliError::Usage(format!("{flag} is required for the selected output"))),
    }
}

impl TryFrom<Cli> for RunConfig {
    type Error = CliError;

    fn try_from(cli: Cli) -> Result<Self, CliError> {
        let report = match cli.report {
            Some(format) => Some((format, non_empty(cli.report_path, "--report-path")?)),
            None => None,
        };
        let frame_dump = match cli.frame_dump {
            FrameDump::None => None,
            mode => Some((mode, non_empty(cli.frame_dump_path, "--frame-dump-path")?)),
        };
        Ok(RunConfig {
            input_path: cli.input,
            report,
            frame_dump,
            max_frames: cli.max_frames.map(|n| n as usize),
            strictness: if cli.strict {
                Strictness::Strict
            } else {
                Strictness::Tolerant
            },
            log_level: cli.log_level,
        })
    }
}

/// What a run produced.
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub report: BandwidthReport,
    pub frames_displayed: usize,
    pub concealed_macroblocks: usize,
    pub dropped_pictures: usize,
    pub written: Vec<PathBuf>,
    pub decode_wall_time: Duration,
}

impl RunSummary {
    /// One-line human summary for stdout.
    pub fn line(&self) -> String {
        let r = &self.report;
        format!(
            "frames={} min_bits={} avg_bits={} max_bits={} vbv_underflow={} vbv_overflow={} concealed_mb={} decode_wall_s={:.3}",
            r.per_frame.len(),
            r.min_bits,
            r.avg_bits_rounded,
            r.max_bits,
            r.flags.underflow_frames,
            r.flags.overflow_frames,
            self.concealed_macroblocks,
            self.decode_wall_time.as_secs_f64(),
        )
    }
}

/// Decodes the input, then writes every requested artifact. Nothing is
/// written when decoding fails.
pub fn run(config: &RunConfig) -> Result<RunSummary, CliError> {
    let data = fs::read(&config.input_path).map_err(CliError::io(&config.input_path))?;
    info!("read {} bytes from {}", data.len(), config.input_path.display());
    let options = DecodeOptions {
        strictness: config.strictness,
        max_frames: config.max_frames,
        ..DecodeOptions::default()
    };
    let started = Instant::now();
    let out = decode_stream(&data, &options)?;
    let decode_wall_time = started.elapsed();
    for event in &out.concealment {
        log::warn!(
            "frame {} row {}: concealed {} macroblocks ({})",
            event.frame_index,
            event.mb_row,
            event.macroblocks.len(),
            event.reason
        );
    }
    let label = config
        .input_path
        .file_name()
        .map_or_else(|| config.input_path.display().to_string(), |n| n.to_string_lossy().into_owned());
    let report = out.report(&label)?;
    let extra = report::Extra {
        concealed_macroblocks: out.concealed_macroblocks(),
        dropped_pictures: out.dropped.len(),
    };

    let mut written = Vec::new();
    if let Some((format, path)) = &config.report {
        let targets = match format {
            ReportFormat::Csv => vec![(ReportFormat::Csv, path.clone())],
            ReportFormat::Json => vec![(ReportFormat::Json, path.clone())],
            ReportFormat::Both => vec![
                (ReportFormat::Csv, path.with_extension("csv")),
                (ReportFormat::Json, path.with_extension("json")),
            ],
        };
        for (format, path) in targets {
            write_atomic(&path, |w| match format {
                ReportFormat::Json => report::write_json(&report, &extra, w),
                _ => report::write_csv(&report, w),
            })?;
            written.push(path);
        }
    }
    if let Some((mode, path)) = &config.frame_dump {
        written.extend(dump_frames(&out, *mode, path)?);
    }
    Ok(RunSummary {
        frames_displayed: out.frames.len(),
        concealed_macroblocks: extra.concealed_macroblocks,
        dropped_pictures: extra.dropped_pictures,
        report,
        written,
        decode_wall_time,
    })
}

/// Writes through a temporary file in the target directory, renamed into
/// place only after `fill` succeeds.
pub fn write_atomic<F>(path: &Path, fill: F) -> Result<(), CliError>
where
    F: FnOnce(&mut dyn Write) -> io::Result<()>,
{
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(CliError::io(path))?;
    {
        let mut w = BufWriter::new(tmp.as_file_mut());
        fill(&mut w).and_then(|()| w.flush()).map_err(CliError::io(path))?;
    }
    tmp.persist(path).map_err(|e| CliError::io(path)(e.error))?;
    Ok(())
}

fn check_geometry(frames: &[std::sync::Arc<FramePicture>]) -> Result<(usize, usize), CliError> {
    let first = frames.first().ok_or(Error::EmptyStream)?;
    let size = (first.width(), first.height());
    if let Some(f) = frames.iter().find(|f| (f.width(), f.height()) != size) {
        return Err(Error::GeometryMismatch(format!(
            "frame {} is {}x{}, stream is {}x{}",
            f.name(),
            f.width(),
            f.height(),
            size.0,
            size.1
        ))
        .into());
    }
    Ok(size)
}

/// Writes the display-order frames as one Y4M file or a directory of PGMs.
pub fn dump_frames(out: &DecodeOutput, mode: FrameDump, path: &Path) -> Result<Vec<PathBuf>, CliError> {
    let (width, height) = check_geometry(&out.frames)?;
    match mode {
        FrameDump::None => Ok(Vec::new()),
        FrameDump::Y4m => {
            let rate = out.sequence.frame_rate();
            write_atomic(path, |w| {
                w.write_all(y4m_header(width, height, rate).as_bytes())?;
                for f in &out.frames {
                    w.write_all(b"FRAME\n")?;
                    for c in 0..3 {
                        w.write_all(f.plane(c).data())?;
                    }
                }
                Ok(())
            })?;
            Ok(vec![path.to_owned()])
        }
        FrameDump::Pgm => {
            fs::create_dir_all(path).map_err(CliError::io(path))?;
            let mut files = Vec::with_capacity(out.frames.len());
            for (i, f) in out.frames.iter().enumerate() {
                let file = path.join(format!("frame_{i:03}.pgm"));
                write_atomic(&file, |w| {
                    write!(w, "P5\n{width} {height}\n255\n")?;
                    w.write_all(f.y.data())
                })?;
                files.push(file);
            }
            Ok(files)
        }
    }
}

/// Stream header of a 4:2:0 Y4M file; aspect ratio is left unknown.
pub fn y4m_header(width: usize, height: usize, rate: FrameRate) -> String {
    format!(
        "YUV4MPEG2 W{width} H{height} F{}:{} Ip A0:0 C420mpeg2\n",
        rate.num, rate.den
    )
}

/// Parses arguments, runs, prints the summary and returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let _ = env_logger::Builder::new()
        .filter_level(cli.log_level)
        .format_timestamp(None)
        .try_init();
    let result = RunConfig::try_from(cli).and_then(|config| run(&config));
    match result {
        Ok(summary) => {
            println!("{}", summary.line());
            0
        }
        Err(e) => {
            eprintln!("m2vscope: {e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn y4m_header_carries_exact_rate() {
        let h = y4m_header(64, 48, FrameRate::from_code(3).unwrap());
        assert_eq!(h, "YUV4MPEG2 W64 H48 F25:1 Ip A0:0 C420mpeg2\n");
        let ntsc = y4m_header(720, 480, FrameRate::from_code(4).unwrap());
        assert!(ntsc.contains("F30000:1001"));
    }

    #[test]
    fn selected_outputs_need_paths() {
        let cli = Cli::try_parse_from(["m2vscope", "--input", "a.m2v", "--report", "csv"]).unwrap();
        let err = RunConfig::try_from(cli).unwrap_err();
        assert!(matches!(err, CliError::Usage(_)));
    }

    #[test]
    fn max_frames_must_be_positive() {
        assert!(Cli::try_parse_from(["m2vscope", "--input", "a", "--max-frames", "0"]).is_err());
    }

    #[test]
    fn exit_codes_follow_error_class() {
        assert_eq!(CliError::Decode(Error::UnsupportedStream("4:2:2".into())).exit_code(), 3);
        assert_eq!(CliError::Decode(Error::EmptyStream).exit_code(), 2);
        let io = CliError::Io {
            path: "x".into(),
            source: io::Error::other("boom"),
        };
        assert_eq!(io.exit_code(), 4);
    }
}
