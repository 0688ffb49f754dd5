use std::net::{IpAddr, SocketAddr};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use divsynth::config::RunConfig;
use divsynth::data::{
    count_compositions, generate, read_dataset_dir, read_layout, write_atomic, write_dataset_dir,
    write_image, Dataset, Split,
};
use divsynth::evaluation::{montage, reality_report, report_csv, report_table, sample_images, sweep_images};
use divsynth::models::{Checkpoint, Generator};
use divsynth::serve::{serve_blocking, ServeState, DEFAULT_PORT};
use divsynth::training::{load_generator, Trainer};

#[derive(Parser)]
#[command(name = "divsynth", version, about = "Layout-to-image synthesis with per-segment noise control")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic facade dataset.
    Synth {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Number of training samples.
        #[arg(long)]
        count: Option<usize>,
        /// Number of held-out test samples.
        #[arg(long)]
        test_count: Option<usize>,
        /// World seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Extra `key=value` overrides.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        sets: Vec<String>,
    },
    /// Train a generator; writes metrics.csv, checkpoints and config.cfg.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Continue from a checkpoint written by an earlier run.
        #[arg(long)]
        resume: Option<PathBuf>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        sets: Vec<String>,
    },
    /// Accuracy, IoU, diversity and linkage of one or two checkpoints.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Samples per layout for the diversity score.
        #[arg(long)]
        samples: Option<usize>,
        /// Second checkpoint reported alongside the first.
        #[arg(long)]
        compare: Option<PathBuf>,
        /// Directory for report.csv and report.txt.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render one row of images sweeping a single noise entry.
    Sweep {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        layout: PathBuf,
        #[arg(long)]
        class: usize,
        /// Comma-separated values for the swept entry.
        #[arg(long, allow_hyphen_values = true)]
        steps: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render a grid of samples under i.i.d. noise.
    Grid {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        layout: PathBuf,
        #[arg(long, default_value_t = 3)]
        rows: usize,
        #[arg(long, default_value_t = 3)]
        cols: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the number of noise compositions for per-class value counts.
    Compositions {
        #[arg(long = "k-per-class", value_name = "K1,K2,..")]
        k_per_class: String,
    },
    /// Serve the HTTP synthesis API.
    Serve {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        layouts_dir: PathBuf,
        #[arg(long, default_value_t = DEFAULT_PORT)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        bind: IpAddr,
    },
}

/// Any command failure; reported as one stderr line with exit code 1.
struct Failure(String);

type Outcome<T> = Result<T, Failure>;

fn fail(e: impl std::fmt::Display) -> Failure {
    Failure(e.to_string())
}

fn resolve_config(path: Option<&Path>, sets: &[String]) -> Outcome<RunConfig> {
    let mut c = match path {
        Some(p) => RunConfig::load(p).map_err(fail)?,
        None => RunConfig::default(),
    };
    c.apply_env().map_err(fail)?;
    apply_sets(&mut c, sets)?;
    Ok(c)
}

fn apply_sets(c: &mut RunConfig, sets: &[String]) -> Outcome<()> {
    for s in sets {
        let (k, v) = s
            .split_once('=')
            .ok_or_else(|| fail(format!("--set expects KEY=VALUE, got {s:?}")))?;
        c.set(k.trim(), v).map_err(fail)?;
    }
    Ok(())
}

fn load_checkpoint(path: &Path) -> Outcome<(RunConfig, Generator<f32>)> {
    let ck = Checkpoint::load(path).map_err(fail)?;
    load_generator(&ck).map_err(fail)
}

fn create_dir(dir: &Path) -> Outcome<()> {
    std::fs::create_dir_all(dir).map_err(|e| fail(format!("cannot create {}: {e}", dir.display())))
}

fn cmd_synth(
    config: Option<PathBuf>,
    out: PathBuf,
    count: Option<usize>,
    test_count: Option<usize>,
    seed: Option<u64>,
    sets: Vec<String>,
) -> Outcome<()> {
    let mut cfg = resolve_config(config.as_deref(), &sets)?;
    if let Ok(v) = std::env::var(divsynth::config::SEED_ENV) {
        cfg.set("world_seed", &v).map_err(fail)?;
    }
    if let Some(s) = seed {
        cfg.world.seed = s;
    }
    if let Some(n) = count {
        cfg.train_count = n;
    }
    if let Some(n) = test_count {
        cfg.test_count = n;
    }
    cfg.world.validate().map_err(fail)?;
    if cfg.train_count == 0 {
        return Err(fail("--count must be at least 1"));
    }
    let data = generate(&cfg.world, cfg.train_count + cfg.test_count)
        .map_err(fail)?
        .with_holdout(cfg.test_count);
    create_dir(&out)?;
    write_dataset_dir(&out, &data).map_err(fail)?;
    write_atomic(&out.join("config.cfg"), cfg.to_text().as_bytes()).map_err(fail)?;
    eprintln!(
        "wrote {} train and {} test samples to {}",
        cfg.train_count,
        cfg.test_count,
        out.display()
    );
    Ok(())
}

fn read_data(dir: &Path, classes: usize) -> Outcome<Dataset> {
    read_dataset_dir(dir, classes).map_err(fail)
}

fn cmd_train(config: Option<PathBuf>, data: PathBuf, out: PathBuf, resume: Option<PathBuf>, sets: Vec<String>) -> Outcome<()> {
    let mut trainer = match resume {
        Some(ck) => {
            let ck = Checkpoint::load(&ck).map_err(fail)?;
            let mut run = RunConfig::from_checkpoint(&ck).map_err(fail)?;
            apply_sets(&mut run, &sets)?;
            let mut t = Trainer::resume(&ck, Some(run.train.epochs)).map_err(fail)?;
            if run != t.run {
                let mut target = t.run.clone();
                target.train.epochs = run.train.epochs;
                if run != target {
                    return Err(fail("only epochs may change when resuming"));
                }
            }
            t.run.train.epochs = run.train.epochs;
            t
        }
        None => {
            let run = resolve_config(config.as_deref(), &sets)?;
            run.validate().map_err(fail)?;
            let classes = run.world.class_count();
            Trainer::new(run, classes).map_err(fail)?
        }
    };
    let dataset = read_data(&data, trainer.run.world.class_count())?;
    create_dir(&out)?;
    let text = trainer.run.to_text();
    eprint!("{text}");
    write_atomic(&out.join("config.cfg"), text.as_bytes()).map_err(fail)?;
    let every = trainer.run.train.checkpoint_every;
    while trainer.epoch < trainer.run.train.epochs {
        let r = trainer.run_epoch(&dataset, |_| {}).map_err(fail)?;
        eprintln!(
            "epoch {:>4}  base {:.6}  div {:.6}  total {:.6}{}",
            r.epoch,
            r.loss_base,
            r.loss_div,
            r.loss_total,
            r.loss_disc.map(|d| format!("  disc {d:.6}")).unwrap_or_default()
        );
        write_atomic(&out.join("metrics.csv"), trainer.metrics_csv().as_bytes()).map_err(fail)?;
        if every > 0 && trainer.epoch % every == 0 {
            let ck = trainer.checkpoint().map_err(fail)?;
            ck.save(&out.join(format!("checkpoint_epoch_{}.dsyn", trainer.epoch)))
                .map_err(fail)?;
        }
    }
    write_atomic(&out.join("metrics.csv"), trainer.metrics_csv().as_bytes()).map_err(fail)?;
    trainer.checkpoint().and_then(|c| c.save(&out.join("final.dsyn"))).map_err(fail)?;
    Ok(())
}

fn cmd_eval(checkpoint: PathBuf, data: PathBuf, samples: Option<usize>, compare: Option<PathBuf>, out: Option<PathBuf>) -> Outcome<()> {
    let mut models = vec![(checkpoint.clone(), load_checkpoint(&checkpoint)?)];
    if let Some(c) = compare {
        models.push((c.clone(), load_checkpoint(&c)?));
    }
    let (run, _) = &models[0].1;
    let dataset = read_data(&data, run.world.class_count())?;
    let mut split: Vec<_> = dataset.split(Split::Test).collect();
    if split.is_empty() {
        split = dataset.samples().iter().collect();
    }
    let mut reports = Vec::new();
    for (path, (run, g)) in &models {
        let mut cfg = run.eval.clone();
        if let Some(k) = samples {
            cfg.samples = k;
        }
        let r = reality_report(g, &split, &run.world.palette, &cfg).map_err(fail)?;
        let name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        reports.push((name, r));
    }
    let rows: Vec<_> = reports.iter().map(|(n, r)| (n.as_str(), r)).collect();
    let table = report_table(&rows);
    print!("{table}");
    if let Some(dir) = out {
        create_dir(&dir)?;
        write_atomic(&dir.join("report.csv"), report_csv(&rows, &run.world.class_names).as_bytes()).map_err(fail)?;
        write_atomic(&dir.join("report.txt"), table.as_bytes()).map_err(fail)?;
    }
    Ok(())
}

fn parse_steps(s: &str) -> Outcome<Vec<f64>> {
    s.split(',')
        .map(|x| x.trim().parse::<f64>().map_err(|_| fail(format!("bad step {x:?}"))))
        .collect()
}

fn cmd_sweep(checkpoint: PathBuf, layout: PathBuf, class: usize, steps: Option<String>, out: PathBuf) -> Outcome<()> {
    let (run, g) = load_checkpoint(&checkpoint)?;
    let l = read_layout(&layout, g.class_count()).map_err(fail)?;
    let steps = match steps {
        Some(s) => parse_steps(&s)?,
        None => run.eval.linkage_steps.clone(),
    };
    if class >= g.class_count() {
        return Err(fail(format!("--class {class} out of range; the model has {} classes", g.class_count())));
    }
    if steps.is_empty() {
        return Err(fail("--steps needs at least one value"));
    }
    let images = sweep_images(&g, &l, class, &steps).map_err(fail)?;
    let m = montage(&images, images.len()).map_err(fail)?;
    write_image(&out, &m).map_err(fail)
}

fn cmd_grid(checkpoint: PathBuf, layout: PathBuf, rows: usize, cols: usize, seed: u64, out: PathBuf) -> Outcome<()> {
    if rows == 0 || cols == 0 {
        return Err(fail("--rows and --cols must be positive"));
    }
    let (_, g) = load_checkpoint(&checkpoint)?;
    let l = read_layout(&layout, g.class_count()).map_err(fail)?;
    let images = sample_images(&g, &l, rows * cols, seed).map_err(fail)?;
    let m = montage(&images, cols).map_err(fail)?;
    write_image(&out, &m).map_err(fail)
}

fn cmd_compositions(list: &str) -> Outcome<()> {
    let ks: Vec<u64> = list
        .split(',')
        .map(|x| x.trim().parse().map_err(|_| fail(format!("bad count {x:?}"))))
        .collect::<Outcome<_>>()?;
    println!("{}", count_compositions(&ks).map_err(fail)?);
    Ok(())
}

fn cmd_serve(checkpoint: PathBuf, layouts_dir: PathBuf, port: u16, bind: IpAddr) -> Outcome<()> {
    let state = ServeState::load(&checkpoint, &layouts_dir).map_err(fail)?;
    serve_blocking(SocketAddr::new(bind, port), state).map_err(fail)
}

fn run(cli: Cli) -> Outcome<()> {
    match cli.cmd {
        Cmd::Synth {
            config,
            out,
            count,
            test_count,
            seed,
            sets,
        } => cmd_synth(config, out, count, test_count, seed, sets),
        Cmd::Train {
            config,
            data,
            out,
            resume,
            sets,
        } => cmd_train(config, data, out, resume, sets),
        Cmd::Eval {
            checkpoint,
            data,
            samples,
            compare,
            out,
        } => cmd_eval(checkpoint, data, samples, compare, out),
        Cmd::Sweep {
            checkpoint,
            layout,
            class,
            steps,
            out,
        } => cmd_sweep(checkpoint, layout, class, steps, out),
        Cmd::Grid {
            checkpoint,
            layout,
            rows,
            cols,
            seed,
            out,
        } => cmd_grid(checkpoint, layout, rows, cols, seed, out),
        Cmd::Compositions { k_per_class } => cmd_compositions(&k_per_class),
        Cmd::Serve {
            checkpoint,
            layouts_dir,
            port,
            bind,
        } => cmd_serve(checkpoint, layouts_dir, port, bind),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure(m)) => {
            eprintln!("error: {}", m.lines().next().unwrap_or(""));
            ExitCode::from(1)
        }
    }
}
