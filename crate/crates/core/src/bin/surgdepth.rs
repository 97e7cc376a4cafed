use std::fs;
use std::io::{self, Write};
use std::path::Path;
use std::process::ExitCode;

use clap::parser::ValueSource;
use clap::{Arg, ArgAction, ArgMatches, Command};
use serde::Serialize;

use surgdepth::ablation::{self, DEFAULT_BLOCKS};
use surgdepth::config::{model_pairs, RunConfig};
use surgdepth::data::{self, Dataset, Split};
use surgdepth::fault::{self, Fault};
use surgdepth::metrics::JsonlSink;
use surgdepth::train::{evaluate_report, train};
use surgdepth::verify;
use surgdepth::{checkpoint, Error, Model, ModelConfig, Result};

const EXIT_VERIFY: u8 = 1;
const EXIT_NUMERIC: u8 = 2;
const EXIT_MISMATCH: u8 = 3;
const EXIT_USAGE: u8 = 64;

/// A flag that maps onto a run-configuration key.
struct Flag {
    long: &'static str,
    key: &'static str,
    help: &'static str,
}

const fn flag(long: &'static str, key: &'static str, help: &'static str) -> Flag {
    Flag { long, key, help }
}

const GEN_FLAGS: &[Flag] = &[
    flag("n", "n", "number of samples"),
    flag("size", "size", "image height and width"),
    flag("classes", "num_classes", "number of classes"),
    flag("depth-coupling", "depth_coupling", "probability a region's class is set by its depth"),
    flag("seed", "seed", "generator seed"),
    flag("out", "data_dir", "output directory"),
    flag("val-fraction", "val_fraction", "fraction of samples in the validation split"),
    flag("min-shapes", "min_shapes", "fewest regions per scene"),
    flag("max-shapes", "max_shapes", "most regions per scene"),
    flag("layer-noise", "layer_noise", "depth noise half-width inside a region"),
];

const MODEL_FLAGS: &[Flag] = &[
    flag("patch", "patch", "patch side"),
    flag("embed-dim", "embed_dim", "token width"),
    flag("depth-blocks", "depth_blocks", "transformer blocks"),
    flag("heads", "heads", "attention heads"),
    flag("fusion-k", "fusion_k", "pooled query grid side"),
    flag("fusion-dim", "fusion_dim", "fusion attention width ('auto' = 2 x embed-dim)"),
    flag("decoder-blocks", "decoder_blocks", "ConvNeXt decoder blocks"),
    flag("decoder-input", "decoder_input", "rgb_only or rgb_and_depth"),
    flag("use-depth", "use_depth", "false trains the RGB-only baseline"),
];

const TRAIN_FLAGS: &[Flag] = &[
    flag("data", "data_dir", "dataset directory"),
    flag("out", "out_dir", "output directory for metrics and checkpoints"),
    flag("epochs", "epochs", "training epochs"),
    flag("lr", "lr", "AdamW learning rate"),
    flag("weight-decay", "weight_decay", "AdamW weight decay"),
    flag("batch-size", "batch_size", "samples per optimizer step"),
    flag("seed", "seed", "seed for initialisation, shuffling and augmentation"),
    flag("augment", "augment", "flip, blur and color jitter during training"),
    flag("eval-every", "eval_every", "validate every this many epochs"),
];

const EVAL_FLAGS: &[Flag] = &[
    flag("data", "data_dir", "dataset directory"),
    flag("out", "out_dir", "directory for eval.json"),
    flag("checkpoint", "checkpoint", "checkpoint to evaluate [default: <out>/best.ckpt]"),
];

fn default_value(rc: &RunConfig, key: &str) -> Option<String> {
    let m = model_pairs(&rc.model).into_iter().find(|(k, _)| *k == key).map(|(_, v)| v);
    m.or_else(|| match key {
        "n" => Some(rc.n.to_string()),
        "size" => Some(rc.model.image_h.to_string()),
        "depth_coupling" => Some(rc.scene.depth_coupling.to_string()),
        "val_fraction" => Some(rc.val_fraction.to_string()),
        "min_shapes" => Some(rc.scene.min_shapes.to_string()),
        "max_shapes" => Some(rc.scene.max_shapes.to_string()),
        "layer_noise" => Some(rc.scene.layer_noise.to_string()),
        "data_dir" => Some(rc.data_dir.display().to_string()),
        "out_dir" => Some(rc.out_dir.display().to_string()),
        _ => None,
    })
}

fn with_flags(mut cmd: Command, flags: &[&[Flag]]) -> Command {
    let rc = RunConfig::default();
    for f in flags.iter().flat_map(|g| g.iter()) {
        let mut arg = Arg::new(f.long).long(f.long).help(f.help).value_name(f.key.to_uppercase());
        if let Some(d) = default_value(&rc, f.key) {
            arg = arg.default_value(d);
        }
        cmd = cmd.arg(arg);
    }
    cmd
}

fn cli() -> Command {
    Command::new("surgdepth")
        .about("Toy-scale RGB-D segmentation: data generation, training, evaluation and self-checks")
        .version(env!("CARGO_PKG_VERSION"))
        .subcommand_required(true)
        .arg_required_else_help(true)
        .arg(
            Arg::new("config-file")
                .long("config-file")
                .global(true)
                .value_name("PATH")
                .help("key=value file applied after defaults and before flags"),
        )
        .arg(
            Arg::new("verbose")
                .short('v')
                .long("verbose")
                .global(true)
                .action(ArgAction::Count)
                .help("more logging (-v info, -vv debug)"),
        )
        .subcommand(with_flags(
            Command::new("gen-data").about("Generate a synthetic RGB-D dataset with manifest"),
            &[GEN_FLAGS],
        ))
        .subcommand(with_flags(
            Command::new("train").about("Train on a dataset; writes metrics.jsonl and best.ckpt"),
            &[TRAIN_FLAGS, MODEL_FLAGS],
        ))
        .subcommand(
            with_flags(Command::new("eval").about("Evaluate a checkpoint; prints IoU and writes eval.json"), &[EVAL_FLAGS])
                .arg(
                    Arg::new("split")
                        .long("split")
                        .value_parser(["val", "train", "all"])
                        .default_value("val")
                        .help("samples to evaluate"),
                ),
        )
        .subcommand(
            with_flags(
                Command::new("ablate").about("Decoder-depth or decoder-input study; writes ablation.csv"),
                &[TRAIN_FLAGS, MODEL_FLAGS],
            )
            .arg(
                Arg::new("study")
                    .long("study")
                    .required(true)
                    .value_parser(["decoder-depth", "decoder-input"])
                    .help("which study to run"),
            )
            .arg(
                Arg::new("blocks")
                    .long("blocks")
                    .value_delimiter(',')
                    .value_parser(clap::value_parser!(usize))
                    .default_value("1,2,4,8")
                    .help("block counts for the decoder-depth study"),
            ),
        )
        .subcommand(
            Command::new("verify")
                .about("Run gradient, oracle, identity and parameter-count checks")
                .arg(
                    Arg::new("config")
                        .long("config")
                        .value_parser(["toy", "full-vitb"])
                        .default_value("toy")
                        .help("toy runs everything; full-vitb runs only count and shape checks"),
                )
                .arg(
                    Arg::new("sabotage")
                        .long("sabotage")
                        .value_name("KERNEL")
                        .help("inject a bug into a kernel: matmul, softmax, conv2d, pool or bilinear"),
                ),
        )
        .subcommand(
            with_flags(Command::new("param-count").about("Count learnable parameters"), &[MODEL_FLAGS])
                .after_help("Model flags show toy defaults; flags left unset take their value from --config.")
                .arg(
                    Arg::new("config")
                        .long("config")
                        .value_parser(["toy", "full-vitb"])
                        .default_value("full-vitb")
                        .help("base configuration"),
                )
                .arg(
                    Arg::new("breakdown")
                        .long("breakdown")
                        .action(ArgAction::SetTrue)
                        .help("print per-module counts"),
                ),
        )
}

/// Defaults, then the config file, then flags given on the command line.
fn run_config(global: &ArgMatches, sub: &ArgMatches, flags: &[&[Flag]], base: RunConfig) -> Result<RunConfig> {
    let mut rc = base;
    if let Some(path) = global.get_one::<String>("config-file").or_else(|| sub.get_one::<String>("config-file")) {
        rc.apply_file(Path::new(path))?;
    }
    for f in flags.iter().flat_map(|g| g.iter()) {
        if sub.value_source(f.long) == Some(ValueSource::CommandLine) {
            let v: &String = sub.get_one(f.long).expect("flag value");
            rc.set(f.key, v)?;
        }
    }
    Ok(rc)
}

fn load_data(rc: &mut RunConfig) -> Result<Dataset> {
    let ds = data::load_dataset(&rc.data_dir)?;
    let first = &ds.samples[0];
    rc.model.image_h = first.height();
    rc.model.image_w = first.width();
    rc.model.num_classes = ds.num_classes;
    Ok(ds)
}

fn cmd_gen_data(global: &ArgMatches, sub: &ArgMatches) -> Result<()> {
    let rc = run_config(global, sub, &[GEN_FLAGS], RunConfig::default())?;
    rc.scene.validate()?;
    let samples = data::generate_dataset(&rc.scene, rc.n, rc.model.image_h, rc.model.image_w)?;
    let ambiguous = data::rgb_ambiguous_fraction(&samples);
    let (_, val) = data::split_indices(rc.n, rc.val_fraction, rc.scene.seed);
    let ds = Dataset::from_split(samples, &val, rc.scene.num_classes);
    data::write_dataset(&rc.data_dir, &ds)?;
    println!("wrote {} samples ({} val) to {}", rc.n, val.len(), rc.data_dir.display());
    println!("rgb-ambiguous pixel fraction: {ambiguous:.4}");
    Ok(())
}

fn cmd_train(global: &ArgMatches, sub: &ArgMatches) -> Result<()> {
    let mut rc = run_config(global, sub, &[TRAIN_FLAGS, MODEL_FLAGS], RunConfig::default())?;
    let ds = load_data(&mut rc)?;
    rc.model.validate()?;
    fs::create_dir_all(&rc.out_dir)?;
    let mut model = Model::build(&rc.model)?;
    let mut sink = JsonlSink(io::BufWriter::new(fs::File::create(rc.out_dir.join("metrics.jsonl"))?));
    let out = train(&mut model, &ds.train(), &ds.val(), &mut sink)?;
    sink.0.flush()?;
    let ckpt = rc.checkpoint.clone().unwrap_or_else(|| rc.out_dir.join("best.ckpt"));
    checkpoint::save(&ckpt, &model.cfg, &out.best)?;
    println!("steps: {}", out.steps);
    match out.best_epoch {
        Some(e) => println!("best val mIoU {:.4} at epoch {e}", out.report.mean_iou),
        None => println!("no training epochs; initial val mIoU {:.4}", out.report.mean_iou),
    }
    println!("checkpoint: {}", ckpt.display());
    Ok(())
}

#[derive(Serialize)]
struct EvalJson {
    split: String,
    samples: usize,
    mean_iou: f64,
    pixel_accuracy: f64,
    per_class: Vec<Option<f64>>,
}

fn cmd_eval(global: &ArgMatches, sub: &ArgMatches) -> Result<()> {
    let mut rc = run_config(global, sub, &[EVAL_FLAGS], RunConfig::default())?;
    let ckpt = rc.checkpoint.clone().unwrap_or_else(|| rc.out_dir.join("best.ckpt"));
    let model = checkpoint::load(&ckpt)?;
    let ds = load_data(&mut rc)?;
    let expected = ModelConfig {
        image_h: rc.model.image_h,
        image_w: rc.model.image_w,
        num_classes: rc.model.num_classes,
        ..model.cfg.clone()
    };
    if expected != model.cfg {
        return Err(Error::Checkpoint(format!(
            "checkpoint expects {}x{} images with {} classes, dataset has {}x{} with {}",
            model.cfg.image_h, model.cfg.image_w, model.cfg.num_classes, expected.image_h, expected.image_w, expected.num_classes
        )));
    }
    let split = sub.get_one::<String>("split").expect("default").clone();
    let samples = match split.as_str() {
        "train" => ds.part(Split::Train),
        "all" => ds.samples.clone(),
        _ => ds.part(Split::Val),
    };
    if samples.is_empty() {
        return Err(Error::Data(format!("split '{split}' has no samples")));
    }
    let report = evaluate_report(&model, &samples)?;
    for (c, iou) in &report.per_class_iou {
        match iou {
            Some(v) => println!("class {c}: IoU {v:.4}"),
            None => println!("class {c}: IoU undefined (absent)"),
        }
    }
    println!("mean IoU: {:.4}", report.mean_iou);
    println!("pixel accuracy: {:.4}", report.pixel_accuracy);
    let json = EvalJson {
        split,
        samples: samples.len(),
        mean_iou: report.mean_iou,
        pixel_accuracy: report.pixel_accuracy,
        per_class: report.per_class_iou.iter().map(|(_, v)| *v).collect(),
    };
    fs::create_dir_all(&rc.out_dir)?;
    fs::write(rc.out_dir.join("eval.json"), serde_json::to_string_pretty(&json)? + "\n")?;
    Ok(())
}

fn cmd_ablate(global: &ArgMatches, sub: &ArgMatches) -> Result<()> {
    let mut rc = run_config(global, sub, &[TRAIN_FLAGS, MODEL_FLAGS], RunConfig::default())?;
    let ds = load_data(&mut rc)?;
    rc.model.validate()?;
    fs::create_dir_all(&rc.out_dir)?;
    let path = rc.out_dir.join("ablation.csv");
    let (train_set, val_set) = (ds.train(), ds.val());
    let mut table = Vec::new();
    match sub.get_one::<String>("study").map(String::as_str) {
        Some("decoder-depth") => {
            let blocks: Vec<usize> = sub.get_many::<usize>("blocks").map_or(DEFAULT_BLOCKS.to_vec(), |b| b.copied().collect());
            let rows = ablation::ablate_decoder_depth(&rc.model, &train_set, &val_set, &blocks)?;
            ablation::write_depth_csv(&mut table, &rows)?;
        }
        Some("decoder-input") => {
            let rows = ablation::ablate_decoder_input(&rc.model, &train_set, &val_set)?;
            ablation::write_input_csv(&mut table, &rows)?;
        }
        other => return Err(Error::Usage(format!("unknown study {other:?}"))),
    }
    fs::write(&path, &table)?;
    print!("{}", String::from_utf8_lossy(&table));
    println!("wrote {}", path.display());
    Ok(())
}

fn cmd_verify(sub: &ArgMatches) -> Result<bool> {
    if let Some(name) = sub.get_one::<String>("sabotage") {
        let f: Fault = name.parse()?;
        println!("sabotaged kernel: {name}");
        fault::arm(f);
    }
    let full = sub.get_one::<String>("config").map(String::as_str) == Some("full-vitb");
    let (checks, secs) = verify::run(full);
    fault::disarm();
    print!("{}", verify::format_table(&checks));
    let failed = checks.iter().filter(|c| !c.passed).count();
    println!("{} checks, {failed} failed, {secs:.1}s", checks.len());
    Ok(failed == 0)
}

fn cmd_param_count(global: &ArgMatches, sub: &ArgMatches) -> Result<()> {
    let base = match sub.get_one::<String>("config").map(String::as_str) {
        Some("toy") => ModelConfig::toy(),
        _ => ModelConfig::full_vitb(),
    };
    let rc = RunConfig { model: base, ..RunConfig::default() };
    let rc = run_config(global, sub, &[MODEL_FLAGS], rc)?;
    let model = Model::build_shapes(&rc.model)?;
    let count = model.param_count();
    if sub.get_flag("breakdown") {
        for (name, n) in &count.breakdown {
            println!("{name:<20} {n:>12}");
        }
    }
    println!("total {:>12} ({:.2}M)", count.total, count.total as f64 / 1e6);
    Ok(())
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::NumericAbort { .. } | Error::Numeric(_) => EXIT_NUMERIC,
        Error::Checkpoint(_) | Error::Config(_) => EXIT_MISMATCH,
        Error::Usage(_) => EXIT_USAGE,
        _ => EXIT_VERIFY,
    }
}

fn main() -> ExitCode {
    let matches = match cli().try_get_matches() {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_USAGE) } else { ExitCode::SUCCESS };
        }
    };
    let level = match matches.get_count("verbose") {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let (name, sub) = matches.subcommand().expect("subcommand required");
    let result = match name {
        "gen-data" => cmd_gen_data(&matches, sub),
        "train" => cmd_train(&matches, sub),
        "eval" => cmd_eval(&matches, sub),
        "ablate" => cmd_ablate(&matches, sub),
        "param-count" => cmd_param_count(&matches, sub),
        "verify" => match cmd_verify(sub) {
            Ok(true) => return ExitCode::SUCCESS,
            Ok(false) => return ExitCode::from(EXIT_VERIFY),
            Err(e) => Err(e),
        },
        other => Err(Error::Usage(format!("unknown command {other}"))),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
