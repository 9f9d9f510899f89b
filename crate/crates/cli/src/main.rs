//! `ltc` — train, run and analyse the learned-transform codec.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ltc::analysis::{self, ProbeSpec, RdTable};
use ltc::codec::{decode_image, encode_image};
use ltc::image_io::{list_images, read_image, write_pgm, GrayImage};
use ltc::model::Model;
use ltc::training::{ingest_dataset, train, TrainConfig};
use ltc::{Error, Result};

#[derive(Parser)]
#[command(name = "ltc", version, about = "Learned-transform image codec with a single transform for many rates")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model from a TOML config.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Training log CSV (default: <out>.log.csv).
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Compress an image (PGM or PNG) to a bitstream.
    Encode {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value_t = 1.0)]
        beta: f64,
        input: PathBuf,
        output: PathBuf,
    },
    /// Decompress a bitstream to a PGM.
    Decode {
        #[arg(long)]
        model: PathBuf,
        input: PathBuf,
        output: PathBuf,
    },
    /// Rate–distortion sweep over β for every image in a directory.
    Sweep {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        images: PathBuf,
        /// Comma-separated β values (default: 1,1.25,1.5,2,3,4,6,8,10).
        #[arg(long, value_delimiter = ',')]
        betas: Option<Vec<f64>>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Per-map Laplace fits; also writes `<out>.hist.csv` and `<out>.scales.csv`.
    Report {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        images: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Decode a centred latent with one coefficient set to α; also writes `<out>.baseline.pgm`.
    Probe {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        map: usize,
        /// Latent row,column of the probed coefficient.
        #[arg(long, value_delimiter = ',')]
        pos: Vec<usize>,
        #[arg(long, allow_hyphen_values = true)]
        alpha: f64,
        /// Latent rows,columns.
        #[arg(long, value_delimiter = ',', default_values_t = [8, 8])]
        extent: Vec<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// PSNR gaps between RD curves: learned-step sweep, unit-step sweep, then fixed-step models.
    Compare {
        #[arg(long)]
        out: PathBuf,
        learned: PathBuf,
        unit: PathBuf,
        fixed: Vec<PathBuf>,
    },
    /// Write procedural dead-leaves test images as PGM.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 8)]
        count: u64,
        #[arg(long, default_value_t = 512)]
        width: usize,
        #[arg(long, default_value_t = 384)]
        height: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn named_images(dir: &Path) -> Result<Vec<(String, GrayImage)>> {
    let paths = list_images(dir)?;
    if paths.is_empty() {
        return Err(Error::Dataset(format!("no PGM or PNG images in {}", dir.display())));
    }
    paths
        .iter()
        .map(|p| {
            let name = p.file_stem().map_or_else(|| p.display().to_string(), |s| s.to_string_lossy().into_owned());
            Ok((name, read_image(p)?))
        })
        .collect()
}

fn read_table(path: &Path) -> Result<RdTable> {
    RdTable::from_csv(&std::fs::read_to_string(path)?)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { config, out, log } => {
            let mut cfg = TrainConfig::load(&config)?;
            if cfg.dump_path.is_none() {
                cfg.dump_path = Some(with_suffix(&out, ".diverged"));
            }
            let data = ingest_dataset(&cfg.images, &cfg)?;
            log::info!(
                "{} train / {} validation / {} calibration patches",
                data.train.len(),
                data.validation.len(),
                data.calibration.len()
            );
            let result = train(&cfg, &data)?;
            result.model.save(&out)?;
            std::fs::write(log.unwrap_or_else(|| with_suffix(&out, ".log.csv")), result.log_csv())?;
            println!("model {} checksum {:08x}", out.display(), result.model.checksum());
        }
        Command::Encode { model, beta, input, output } => {
            let model = Model::load(&model)?;
            let img = read_image(&input)?;
            let enc = encode_image(&img, &model, beta)?;
            std::fs::write(&output, &enc.bytes)?;
            println!(
                "{} bytes, {:.4} bpp",
                enc.bytes.len(),
                enc.bytes.len() as f64 * 8.0 / img.pixel_count() as f64
            );
        }
        Command::Decode { model, input, output } => {
            let model = Model::load(&model)?;
            let dec = decode_image(&std::fs::read(&input)?, &model)?;
            write_pgm(&output, &dec.image)?;
        }
        Command::Sweep { model, images, betas, out } => {
            let model = Model::load(&model)?;
            let betas = betas.unwrap_or_else(|| analysis::DEFAULT_BETAS.to_vec());
            let table = analysis::rd_sweep(&model, &named_images(&images)?, &betas)?;
            std::fs::write(&out, table.to_csv())?;
            for m in analysis::monotonicity(&table).iter().filter(|m| !m.acceptable()) {
                log::warn!(
                    "{}: {} rate and {} MSE inversions across beta",
                    m.image,
                    m.rate_inversions,
                    m.mse_inversions
                );
            }
        }
        Command::Report { model, images, out } => {
            let model = Model::load(&model)?;
            let imgs: Vec<GrayImage> = named_images(&images)?.into_iter().map(|(_, i)| i).collect();
            let report = analysis::latent_report(&model, &imgs)?;
            std::fs::write(&out, report.to_csv())?;
            std::fs::write(with_suffix(&out, ".hist.csv"), report.histograms_csv())?;
            std::fs::write(with_suffix(&out, ".scales.csv"), report.scales_csv())?;
            let degenerate = report.maps.iter().filter(|m| m.degenerate).count();
            let outliers = report.maps.iter().filter(|m| m.outlier).count();
            println!("{} maps, {degenerate} degenerate, {outliers} outliers", report.maps.len());
        }
        Command::Probe { model, map, pos, alpha, extent, out } => {
            if pos.len() != 2 || extent.len() != 2 {
                return Err(Error::Usage("--pos and --extent take two comma-separated values".into()));
            }
            let model = Model::load(&model)?;
            let spec = ProbeSpec { map, row: pos[0], col: pos[1], alpha, extent: (extent[0], extent[1]) };
            let result = analysis::probe(&model, &spec)?;
            write_pgm(&out, &GrayImage::from_tensor(&result.probe)?)?;
            write_pgm(with_suffix(&out, ".baseline.pgm"), &GrayImage::from_tensor(&result.baseline)?)?;
            println!("locality {}", result.locality);
        }
        Command::Compare { out, learned, unit, fixed } => {
            let fixed = fixed.iter().map(|p| read_table(p)).collect::<Result<Vec<_>>>()?;
            let gaps = analysis::compare_cases(&read_table(&learned)?, &read_table(&unit)?, &fixed)?;
            std::fs::write(&out, analysis::gaps_csv(&gaps))?;
            for g in &gaps {
                println!("{} vs {}: mean {:.3} dB, max {:.3} dB", g.a, g.b, g.mean_gap_db, g.max_gap_db);
            }
        }
        Command::Synth { out, count, width, height, seed } => {
            std::fs::create_dir_all(&out)?;
            for i in 0..count {
                let img = ltc::synth::dead_leaves(width, height, seed + i);
                write_pgm(out.join(format!("leaves{:02}.pgm", seed + i)), &img)?;
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error kind={} message={msg:?}", e.kind());
            ExitCode::FAILURE
        }
    }
}
