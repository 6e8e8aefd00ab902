use std::ffi::OsString;
use std::fs;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "kernelcount", version, about = "Detect and count corn kernels in ear images")]
#[command(args_override_self = true)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Seed for every random choice the command makes.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// key=value file of defaults for this command's flags.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render synthetic ears with truth sidecars.
    GenSynthetic(GenSynthetic),
    /// Cut labeled 32x32 patches from synthetic ears.
    BuildPatches(BuildPatches),
    /// Train the kernel / non-kernel classifier.
    TrainClassifier(TrainNet),
    /// Train the kernel-center regressor.
    TrainRegressor(TrainNet),
    /// Train the HOG + linear SVM baseline.
    TrainBaseline(TrainBaseline),
    /// Scan and suppress without refinement or counting.
    Detect(Detect),
    /// Full pipeline on one image or a directory of images.
    Count(Count),
    /// Counting metrics from predicted and true counts.
    Evaluate(Evaluate),
    /// Draw detections from a report onto an image.
    Overlay(Overlay),
}

#[derive(Debug, Args)]
pub struct GenSynthetic {
    #[arg(long, default_value_t = 20)]
    pub ears: usize,
    #[arg(long, default_value_t = 1024)]
    pub width: usize,
    #[arg(long, default_value_t = 768)]
    pub height: usize,
    /// Largest rotation in degrees.
    #[arg(long, default_value_t = 15.0)]
    pub max_angle: f64,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct BuildPatches {
    /// Directory of images with truth sidecars.
    #[arg(long)]
    pub images: PathBuf,
    /// Negatives per image; defaults to the standard proportion.
    #[arg(long)]
    pub negatives: Option<usize>,
    /// Output directory for patches/ and manifest.json.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct TrainNet {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub test_fraction: Option<f64>,
    /// Skip the flip / color-jitter copies.
    #[arg(long)]
    pub no_augment: bool,
    /// Where to write the iteration,train_loss,test_loss,lr history.
    #[arg(long)]
    pub history: Option<PathBuf>,
    /// Weight file to write.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct TrainBaseline {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, default_value_t = 1e-4)]
    pub lambda: f64,
    #[arg(long, default_value_t = 20)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0.2)]
    pub test_fraction: f64,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct ScanArgs {
    #[arg(long)]
    pub classifier: PathBuf,
    #[arg(long)]
    pub stride_x: Option<usize>,
    #[arg(long)]
    pub stride_y: Option<usize>,
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long)]
    pub nms_iou: Option<f64>,
    #[arg(long)]
    pub multiplier: Option<f64>,
}

#[derive(Debug, Args)]
pub struct Detect {
    #[arg(long)]
    pub image: PathBuf,
    #[command(flatten)]
    pub scan: ScanArgs,
    /// Write the detections here instead of standard output.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct Count {
    /// One image; the report is printed as JSON.
    #[arg(long, conflicts_with = "images", required_unless_present = "images")]
    pub image: Option<PathBuf>,
    /// Directory of images; writes id,predicted,actual rows.
    #[arg(long)]
    pub images: Option<PathBuf>,
    #[command(flatten)]
    pub scan: ScanArgs,
    #[arg(long)]
    pub regressor: PathBuf,
    /// Report (single image) or counting CSV (directory) destination.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Drop the wall-time field so output is byte-stable.
    #[arg(long)]
    pub no_timing: bool,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct Evaluate {
    /// CSV with `id` and `predicted` columns.
    #[arg(long)]
    pub pred: PathBuf,
    /// CSV with `id` and `actual` columns.
    #[arg(long)]
    pub truth: PathBuf,
    /// Joined id,predicted,actual table.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct Overlay {
    #[arg(long)]
    pub image: PathBuf,
    /// CountReport JSON.
    #[arg(long)]
    pub report: PathBuf,
    /// Also outline each window.
    #[arg(long)]
    pub boxes: bool,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub common: Common,
}

/// Splices `--config` file entries into argv right after the subcommand so
/// flags given on the command line (which come later) win.
pub fn expand_config(argv: Vec<OsString>) -> Result<Vec<OsString>> {
    let mut path = None;
    for (i, a) in argv.iter().enumerate() {
        let Some(s) = a.to_str() else { continue };
        if s == "--config" {
            path = argv.get(i + 1).cloned();
        } else if let Some(p) = s.strip_prefix("--config=") {
            path = Some(p.into());
        }
    }
    let Some(path) = path else { return Ok(argv) };
    let text = fs::read_to_string(&path).with_context(|| format!("reading config {}", path.to_string_lossy()))?;
    let extra = config_args(&text)?;
    let Some(sub) = argv.iter().skip(1).position(|a| !a.to_string_lossy().starts_with('-')) else {
        return Ok(argv);
    };
    let at = sub + 2;
    let mut out: Vec<OsString> = argv[..at].to_vec();
    out.extend(extra);
    out.extend_from_slice(&argv[at..]);
    Ok(out)
}

/// `key = value` lines (blank lines and `#` comments ignored) as flags.
/// `true` / `false` values switch boolean flags.
fn config_args(text: &str) -> Result<Vec<OsString>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            bail!("config line {}: expected key=value", n + 1);
        };
        let key = key.trim().replace('_', "-");
        let value = value.trim();
        if key.is_empty() || key == "config" {
            bail!("config line {}: invalid key", n + 1);
        }
        match value {
            "true" => out.push(format!("--{key}").into()),
            "false" => {}
            v => {
                out.push(format!("--{key}").into());
                out.push(v.into());
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn os(v: &[&str]) -> Vec<OsString> {
        v.iter().map(OsString::from).collect()
    }

    #[test]
    fn config_lines_become_flags() {
        let a = config_args("# defaults\nears = 3\nmax_angle=10\n\nboxes = true\nno-augment = false\n").unwrap();
        assert_eq!(a, os(&["--ears", "3", "--max-angle", "10", "--boxes"]));
        assert!(config_args("ears 3").is_err());
    }

    #[test]
    fn command_line_overrides_config() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("c.txt");
        fs::write(&cfg, "ears = 3\nwidth = 200\n").unwrap();
        let argv = os(&["kc", "gen-synthetic", "--ears", "5", "--out", "x", "--config", cfg.to_str().unwrap()]);
        let cli = Cli::try_parse_from(expand_config(argv).unwrap()).unwrap();
        let Command::GenSynthetic(g) = cli.command else { panic!() };
        assert_eq!((g.ears, g.width), (5, 200));
    }
}
