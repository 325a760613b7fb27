//! `hald`: train, detect, evaluate and phantom generation.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Arg, ArgAction, ArgMatches, Command};
use hald_core::config::{PipelineConfig, KEYS};
use hald_core::error::Error;
use hald_core::phantom::{write_corpus, PhantomParams};
use hald_core::pipeline::{cmd_detect, cmd_evaluate, cmd_train};

fn with_overrides(cmd: Command) -> Command {
    let cmd = cmd.arg(
        Arg::new("config")
            .long("config")
            .value_name("FILE")
            .help("flat key = value config file"),
    );
    KEYS.iter().fold(cmd, |cmd, (key, help)| {
        cmd.arg(
            Arg::new(*key)
                .long(*key)
                .value_name("VALUE")
                .help(*help)
                .help_heading("Config overrides"),
        )
    })
}

fn path_arg(id: &'static str, help: &'static str) -> Arg {
    Arg::new(id).long(id).value_name("DIR").help(help)
}

fn allow_train() -> Arg {
    Arg::new("allow-train")
        .long("allow-train")
        .action(ArgAction::SetTrue)
        .help("also process cases from the recorded train split")
}

fn cli() -> Command {
    Command::new("hald")
        .about("Hybrid cephalometric landmark detection")
        .subcommand_required(true)
        .subcommand(with_overrides(
            Command::new("train")
                .about("learn regions, templates and line lengths from a corpus")
                .arg(path_arg("corpus", "corpus directory (overrides corpus_dir)"))
                .arg(path_arg("model", "model directory to write (overrides model_dir)")),
        ))
        .subcommand(with_overrides(
            Command::new("detect")
                .about("detect landmarks and lines on every image of a directory")
                .arg(path_arg("model", "trained model directory"))
                .arg(path_arg("input", "image directory or a single image").required(true))
                .arg(path_arg("out", "output directory (overrides output_dir)"))
                .arg(allow_train()),
        ))
        .subcommand(with_overrides(
            Command::new("evaluate")
                .about("score detections against the expert baseline")
                .arg(path_arg("det", "directory of detections").required(true))
                .arg(path_arg("truth", "directory of expert annotations").required(true))
                .arg(path_arg("model", "model directory holding split.txt"))
                .arg(path_arg("out", "report directory (overrides output_dir)"))
                .arg(allow_train()),
        ))
        .subcommand(
            Command::new("phantom")
                .about("write a synthetic corpus with planted landmarks")
                .arg(path_arg("out", "output directory").required(true))
                .arg(
                    Arg::new("n")
                        .long("n")
                        .value_name("COUNT")
                        .value_parser(clap::value_parser!(usize))
                        .default_value("12"),
                )
                .arg(
                    Arg::new("seed")
                        .long("seed")
                        .value_name("SEED")
                        .value_parser(clap::value_parser!(u64))
                        .default_value("1"),
                )
                .arg(
                    Arg::new("noise")
                        .long("noise")
                        .value_name("AMPLITUDE")
                        .value_parser(clap::value_parser!(u8))
                        .default_value("8"),
                ),
        )
}

fn resolve_config(m: &ArgMatches, aliases: &[(&str, &str)]) -> Result<PipelineConfig, Error> {
    let mut overrides = Vec::new();
    for (key, _) in KEYS {
        if let Some(v) = m.get_one::<String>(key) {
            overrides.push((key.to_string(), v.clone()));
        }
    }
    for (arg, key) in aliases {
        if let Some(v) = m.get_one::<String>(arg) {
            overrides.push((key.to_string(), v.clone()));
        }
    }
    let file = m.get_one::<String>("config").map(PathBuf::from);
    PipelineConfig::resolve(file.as_deref(), &overrides)
}

fn run(m: &ArgMatches) -> Result<(), Error> {
    match m.subcommand() {
        Some(("train", m)) => {
            let cfg = resolve_config(m, &[("corpus", "corpus_dir"), ("model", "model_dir")])?;
            print!("{}", cmd_train(&cfg)?.render());
        }
        Some(("detect", m)) => {
            let cfg = resolve_config(m, &[("model", "model_dir"), ("out", "output_dir")])?;
            let input = Path::new(m.get_one::<String>("input").expect("required"));
            let summary = cmd_detect(&cfg, &cfg.model_dir, input, &cfg.output_dir, m.get_flag("allow-train"))?;
            print!("{}", summary.render());
        }
        Some(("evaluate", m)) => {
            let cfg = resolve_config(m, &[("model", "model_dir"), ("out", "output_dir")])?;
            let det = Path::new(m.get_one::<String>("det").expect("required"));
            let truth = Path::new(m.get_one::<String>("truth").expect("required"));
            let report = cmd_evaluate(&cfg, det, truth, &cfg.model_dir, &cfg.output_dir, m.get_flag("allow-train"))?;
            print!("{}", report.render_table());
        }
        Some(("phantom", m)) => {
            let params = PhantomParams {
                count: *m.get_one::<usize>("n").expect("defaulted"),
                seed: *m.get_one::<u64>("seed").expect("defaulted"),
                noise: *m.get_one::<u8>("noise").expect("defaulted"),
                ..PhantomParams::default()
            };
            let out = Path::new(m.get_one::<String>("out").expect("required"));
            let cases = write_corpus(out, &params)?;
            println!("wrote {} phantom cases to {}", cases.len(), out.display());
        }
        _ => unreachable!("subcommand_required"),
    }
    Ok(())
}

fn main() -> ExitCode {
    let matches = match cli().try_get_matches() {
        Ok(m) => m,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&matches) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("hald: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
