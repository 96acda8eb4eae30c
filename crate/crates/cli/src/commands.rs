use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use bilateral_il::dataset::{build_dataset, channel_names, Dataset};
use bilateral_il::eval::{
    height_step_test, median_score, render_trace, run_autonomous, score_model, score_run, HeightStep, RunOptions,
    ScoreCell,
};
use bilateral_il::models::{train, Model, ModelKind, Predictor};
use bilateral_il::signal::{design_lpf_cutoff, magnitude_spectrum};
use bilateral_il::{Config, Error, Result};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::{manifest, serve, Cli, Command, EvalArgs, RunArgs, TrainArgs};

pub fn load_config(cli: &Cli) -> Result<Config> {
    let mut cfg = match (&cli.config, &cli.profile) {
        (Some(path), None) => Config::load(path)?,
        (None, Some(name)) => Config::profile(name)?,
        (None, None) => Config::default(),
        (Some(_), Some(_)) => return Err(Error::Config("--config and --profile are exclusive".into())),
    };
    if let Some(d) = &cli.data_dir {
        cfg.paths.data_dir = d.clone();
    }
    if let Some(d) = &cli.model_dir {
        cfg.paths.model_dir = d.clone();
    }
    if let Some(d) = &cli.out_dir {
        cfg.paths.out_dir = d.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn model_path(cfg: &Config, kind: ModelKind, seed: u64) -> PathBuf {
    cfg.paths.model_dir.join(format!("{}_s{seed}.bin", kind.name()))
}

fn emit(cli: &Cli, summary: &Value, human: impl FnOnce()) {
    if cli.json {
        println!("{}", serde_json::to_string_pretty(summary).expect("summary serializes"));
    } else {
        human();
    }
}

pub fn dispatch(cli: &Cli) -> Result<()> {
    let cfg = load_config(cli)?;
    match &cli.command {
        Command::Collect { raw } => collect(cli, &cfg, *raw),
        Command::Train(a) => train_cmd(cli, &cfg, a),
        Command::Run(a) => run_cmd(cli, &cfg, a),
        Command::Eval(a) => eval_cmd(cli, &cfg, a),
        Command::Spectrum { channel } => spectrum(cli, &cfg, channel),
        Command::Serve(a) => serve::run(&cfg, a),
        Command::Report => report(cli, &cfg),
    }
}

fn collect(cli: &Cli, cfg: &Config, raw: bool) -> Result<()> {
    let dir = &cfg.paths.data_dir;
    let raw_dir = dir.join("raw");
    let start = Instant::now();
    let (data, records) = build_dataset(cfg, |demo| {
        if raw {
            demo.trial.save(&raw_dir.join(format!("{}.csv", demo.trial.meta.trial_id)))?;
        }
        Ok(())
    })?;
    data.save(dir)?;
    fs::write(dir.join("collect.json"), serde_json::to_string_pretty(&records)? + "\n")?;
    let outputs: Vec<PathBuf> = data.trials.iter().map(|t| dir.join(format!("{}.csv", t.meta.trial_id))).collect();
    manifest::write(dir, "collect", cfg, json!({ "dataset": cfg.dataset.seed, "trials": records.iter().map(|r| r.seed).collect::<Vec<_>>() }), &outputs)?;
    let worst_track = records.iter().map(|r| r.fidelity.tracking_rad).fold(0.0, f64::max);
    let worst_ar = records.iter().map(|r| r.fidelity.action_reaction).fold(0.0, f64::max);
    let summary = json!({
        "trials": data.len(),
        "samples_per_trial": data.trials.first().map(|t| t.len()),
        "max_tracking_rad": worst_track,
        "max_action_reaction": worst_ar,
        "data_dir": dir,
        "seconds": start.elapsed().as_secs_f64(),
    });
    emit(cli, &summary, || {
        println!(
            "wrote {} trials to {} (worst tracking {:.4} rad, worst action-reaction {:.3})",
            data.len(),
            dir.display(),
            worst_track,
            worst_ar
        )
    });
    Ok(())
}

fn train_cmd(cli: &Cli, cfg: &Config, a: &TrainArgs) -> Result<()> {
    let data = Dataset::load(&cfg.paths.data_dir)?;
    let kinds = a.model.map(|k| vec![k]).unwrap_or_else(|| ModelKind::ALL.to_vec());
    let seeds = a.seeds.clone().unwrap_or_else(|| vec![cfg.model.seed]);
    let mut outputs = Vec::new();
    let mut done = Vec::new();
    for &kind in &kinds {
        for &seed in &seeds {
            let mut c = cfg.clone();
            c.model.seed = seed;
            if let Some(e) = a.epochs {
                c.model.epochs = e;
            }
            c.validate()?;
            let start = Instant::now();
            let every = (c.model.epochs / 10).max(1);
            let model = train(kind, &data, &c, |role, epoch, loss| {
                if !cli.json && (epoch + 1) % every == 0 {
                    eprintln!("{kind} s{seed} {role:?} epoch {}/{} loss {loss:.6}", epoch + 1, c.model.epochs);
                }
            })?;
            let path = model_path(&c, kind, seed);
            model.save(&path)?;
            done.push(json!({
                "model": kind.name(),
                "seed": seed,
                "path": path,
                "parameters": model.num_params(),
                "seconds": start.elapsed().as_secs_f64(),
            }));
            outputs.push(path);
        }
    }
    manifest::write(&cfg.paths.model_dir, "train", cfg, json!({ "training": seeds }), &outputs)?;
    let summary = json!({ "models": done });
    emit(cli, &summary, || {
        for p in &outputs {
            println!("wrote {}", p.display());
        }
    });
    Ok(())
}

fn run_cmd(cli: &Cli, cfg: &Config, a: &RunArgs) -> Result<()> {
    let seed = a.seed.unwrap_or(cfg.model.seed);
    let model = Model::load(&model_path(cfg, a.model, seed))?;
    let duration = a.duration.unwrap_or(cfg.eval.duration_s);
    let mut predictor = Predictor::new(&model);
    let run = run_autonomous(cfg, &mut predictor, RunOptions::new(a.height, duration, seed))?;
    let score = score_run(&run, cfg)?;
    let dir = &cfg.paths.out_dir;
    let stem = format!("run_{}_s{seed}_h{}", a.model.name(), a.height);
    let pgm = dir.join(format!("{stem}.pgm"));
    render_trace(&run, cfg).save_pgm(&pgm)?;
    let csv = dir.join(format!("{stem}.csv"));
    write_prediction_csv(&csv, &run.slave_fast, &run.predicted, run.fast_period_ms)?;
    manifest::write(dir, "run", cfg, json!({ "model": seed, "simulation": seed }), &[pgm.clone(), csv.clone()])?;
    let summary = json!({
        "model": a.model.name(),
        "seed": seed,
        "height_mm": a.height,
        "duration_s": duration,
        "score": score,
        "network_ticks": run.network_ticks(),
        "contact_ticks": run.contact_ticks(),
        "envelope_excess": run.envelope_excess(&model),
        "trace": pgm,
        "predictions": csv,
    });
    emit(cli, &summary, || println!("{} at {} mm: score {score:.3}, trace {}", a.model, a.height, pgm.display()));
    Ok(())
}

fn write_prediction_csv(path: &Path, slave: &[[f64; 9]], predicted: &[[f64; 9]], period_ms: f64) -> Result<()> {
    if let Some(d) = path.parent() {
        fs::create_dir_all(d)?;
    }
    let names = channel_names();
    let mut out = String::from("t_ms");
    for n in names.iter().skip(9) {
        out.push(',');
        out.push_str(n);
    }
    for n in names.iter().take(9) {
        out.push_str(",pred_");
        out.push_str(n);
    }
    out.push('\n');
    for (k, (s, p)) in slave.iter().zip(predicted).enumerate() {
        out.push_str(&format!("{}", k as f64 * period_ms));
        for v in s.iter().chain(p) {
            out.push_str(&format!(",{v:.9e}"));
        }
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

/// Everything `eval` measured, as stored in `eval.json`.
#[derive(Debug, Serialize, Deserialize)]
pub struct EvalReport {
    pub profile: String,
    pub duration_s: f64,
    pub heights_mm: Vec<f64>,
    pub seeds: Vec<u64>,
    pub cells: Vec<ScoreCell>,
    pub medians: Vec<MedianRow>,
    pub height_step: Vec<HeightStep>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct MedianRow {
    pub model: ModelKind,
    pub height_mm: f64,
    pub median_score: f64,
}

fn eval_cmd(cli: &Cli, cfg: &Config, a: &EvalArgs) -> Result<()> {
    let mut c = cfg.clone();
    if let Some(d) = a.duration {
        c.eval.duration_s = d;
    }
    let kinds = a.model.map(|k| vec![k]).unwrap_or_else(|| ModelKind::ALL.to_vec());
    let seeds = a.seeds.clone().unwrap_or_else(|| c.eval.seeds.clone());
    let heights = c.eval.heights_mm.clone();
    let out = &c.paths.out_dir;
    let mut cells = Vec::new();
    let mut steps = Vec::new();
    let mut outputs = Vec::new();
    for &kind in &kinds {
        for &seed in &seeds {
            let model = Model::load(&model_path(&c, kind, seed))?;
            for (cell, run) in score_model(&model, &c, seed, &heights)? {
                let pgm = out.join("traces").join(format!("{}_s{seed}_h{}.pgm", kind.name(), cell.height_mm));
                render_trace(&run, &c).save_pgm(&pgm)?;
                outputs.push(pgm);
                if !cli.json {
                    eprintln!("{kind} s{seed} h{}: {:.3}", cell.height_mm, cell.score);
                }
                cells.push(cell);
            }
            if kind == ModelKind::Plt {
                let (before, after) = (c.eval.step_before_mm, c.eval.step_after_mm);
                steps.push(height_step_test(&model, &c, before, after, seed)?);
            }
        }
    }
    let medians: Vec<MedianRow> = kinds
        .iter()
        .flat_map(|&k| heights.iter().map(move |&h| (k, h)))
        .filter_map(|(k, h)| median_score(&cells, k, h).map(|m| MedianRow { model: k, height_mm: h, median_score: m }))
        .collect();
    let report = EvalReport {
        profile: c.profile.clone(),
        duration_s: c.eval.duration_s,
        heights_mm: heights.clone(),
        seeds: seeds.clone(),
        cells,
        medians,
        height_step: steps,
    };
    fs::create_dir_all(out)?;
    let json_path = out.join("eval.json");
    fs::write(&json_path, serde_json::to_string_pretty(&report)? + "\n")?;
    let csv_path = out.join("eval.csv");
    let mut csv = String::from("model,seed,height_mm,score,contact_ticks,envelope_excess\n");
    for cell in &report.cells {
        csv.push_str(&format!(
            "{},{},{},{:.6},{},{:.6}\n",
            cell.kind, cell.seed, cell.height_mm, cell.score, cell.contact_ticks, cell.envelope_excess
        ));
    }
    fs::write(&csv_path, csv)?;
    outputs.push(json_path);
    outputs.push(csv_path);
    manifest::write(out, "eval", &c, json!({ "models": seeds, "simulation": seeds }), &outputs)?;
    let summary = serde_json::to_value(&report)?;
    emit(cli, &summary, || print!("{}", median_table(&report)));
    Ok(())
}

fn median_table(r: &EvalReport) -> String {
    let mut kinds: Vec<ModelKind> = r.medians.iter().map(|m| m.model).collect();
    kinds.dedup();
    let mut s = String::from("| model |");
    for h in &r.heights_mm {
        s.push_str(&format!(" {h} mm |"));
    }
    s.push_str("\n|---|");
    s.push_str(&"---|".repeat(r.heights_mm.len()));
    s.push('\n');
    for k in kinds {
        s.push_str(&format!("| {k} |"));
        for &h in &r.heights_mm {
            match r.medians.iter().find(|m| m.model == k && m.height_mm == h) {
                Some(m) => s.push_str(&format!(" {:.3} |", m.median_score)),
                None => s.push_str(" - |"),
            }
        }
        s.push('\n');
    }
    s
}

fn spectrum(cli: &Cli, cfg: &Config, channel: &str) -> Result<()> {
    let ch = channel_names()
        .iter()
        .position(|n| n == channel)
        .ok_or_else(|| Error::InvalidArgument(format!("unknown channel {channel:?}")))?;
    let data = Dataset::load(&cfg.paths.data_dir)?;
    let g = design_lpf_cutoff(cfg.rates.slow_s())?;
    let fraction = data.energy_below(ch, g)?;
    let mut mean: Vec<(f64, f64)> = Vec::new();
    for t in &data.trials {
        let s = magnitude_spectrum(&t.channel(ch), t.meta.period_ms * 1e-3)?;
        if mean.is_empty() {
            mean = s.iter().map(|&(w, _)| (w, 0.0)).collect();
        }
        for (acc, (_, m)) in mean.iter_mut().zip(&s) {
            acc.1 += m / data.len() as f64;
        }
    }
    let out = &cfg.paths.out_dir;
    fs::create_dir_all(out)?;
    let path = out.join(format!("spectrum_{channel}.csv"));
    let mut f = fs::File::create(&path)?;
    writeln!(f, "omega_rad_s,magnitude")?;
    for (w, m) in &mean {
        writeln!(f, "{w:.6},{m:.9e}")?;
    }
    manifest::write(out, "spectrum", cfg, json!({}), std::slice::from_ref(&path))?;
    let summary = json!({
        "channel": channel,
        "cutoff_rad_s": g,
        "energy_below_cutoff": fraction,
        "spectrum": path,
    });
    emit(cli, &summary, || {
        println!("{channel}: {:.1}% of energy below {g:.3} rad/s ({})", fraction * 100.0, path.display())
    });
    Ok(())
}

fn report(cli: &Cli, cfg: &Config) -> Result<()> {
    let out = &cfg.paths.out_dir;
    let src = out.join("eval.json");
    let text = fs::read_to_string(&src).map_err(|e| Error::InvalidArgument(format!("{}: {e} (run eval first)", src.display())))?;
    let r: EvalReport = serde_json::from_str(&text)?;
    let mut md = format!(
        "# Evaluation report\n\nProfile `{}`, {} s runs, seeds {:?}. Median letter score over seeds:\n\n",
        r.profile, r.duration_s, r.seeds
    );
    md.push_str(&median_table(&r));
    if !r.height_step.is_empty() {
        md.push_str("\n## Height step\n\n| seed | before | after | th2 change | tau2 change |\n|---|---|---|---|---|\n");
        for (s, h) in r.seeds.iter().zip(&r.height_step) {
            md.push_str(&format!(
                "| {s} | {} | {} | {:.4} | {:.4} |\n",
                h.h_before, h.h_after, h.theta2_change, h.tau2_change
            ));
        }
    }
    md.push_str("\n## Traces\n\n");
    for c in &r.cells {
        md.push_str(&format!(
            "- traces/{}_s{}_h{}.pgm: {:.3}\n",
            c.kind.name(),
            c.seed,
            c.height_mm,
            c.score
        ));
    }
    let path = out.join("report.md");
    fs::write(&path, &md)?;
    let summary = json!({ "report": path, "medians": r.medians });
    emit(cli, &summary, || print!("{md}"));
    Ok(())
}
