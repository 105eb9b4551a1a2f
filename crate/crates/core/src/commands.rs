//! One function per command-line subcommand.
//!
//! Standalone commands stamp their outputs with the hash of a canonical
//! rendering of their arguments, so equal invocations give equal files.

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::evaluate::{ablation_grid, tune_omega, variance_report, MethodRow, Report, TunedOmega};
use crate::frame::CentroidFrame;
use crate::geometry::{combined_score, score_batch, Decomposed};
use crate::io::{self, ScoreRow, ScoreTable};
use crate::pipeline::{config_hash, run_pipeline, PipelineConfig, PipelineSummary};
use crate::trainer::{self, make_synthetic, NetworkSpec, OodKind, Role, TrainConfig, TrainOutcome};

fn args_hash(parts: &[(&str, String)]) -> String {
    let text: String = parts.iter().map(|(k, v)| format!("{k} = {v}\n")).collect();
    config_hash(text.as_bytes())
}

fn p(path: &Path) -> String {
    path.display().to_string()
}

pub fn cmd_gen_frame(num_classes: usize, dim: usize, seed: u64, out: &Path) -> Result<CentroidFrame> {
    let frame = CentroidFrame::generate(num_classes, dim, seed)?;
    let hash = args_hash(&[
        ("command", "gen-frame".into()),
        ("num_classes", num_classes.to_string()),
        ("dim", dim.to_string()),
        ("seed", seed.to_string()),
    ]);
    io::write_frame(out, &frame, Some(&hash))?;
    Ok(frame)
}

/// Writes `train.csv`, `id_test.csv` and `ood.csv` into `out_dir`.
pub fn cmd_make_data(
    num_classes: usize,
    input_dim: usize,
    per_class: usize,
    kind: OodKind,
    seed: u64,
    out_dir: &Path,
) -> Result<Vec<PathBuf>> {
    let data = make_synthetic(num_classes, input_dim, per_class, kind, seed)?;
    let hash = args_hash(&[
        ("command", "make-data".into()),
        ("num_classes", num_classes.to_string()),
        ("input_dim", input_dim.to_string()),
        ("per_class", per_class.to_string()),
        ("ood_kind", kind.to_string()),
        ("seed", seed.to_string()),
    ]);
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut written = Vec::new();
    for (name, set) in [("train.csv", &data.train), ("id_test.csv", &data.id_test), ("ood.csv", &data.ood)] {
        let path = out_dir.join(name);
        io::write_embeddings(&path, set, Some(&hash))?;
        written.push(path);
    }
    Ok(written)
}

pub fn cmd_train(
    frame_path: &Path,
    data_path: &Path,
    network: &NetworkSpec,
    cfg: &TrainConfig,
    out: &Path,
    history_out: Option<&Path>,
) -> Result<TrainOutcome> {
    let frame = io::read_frame(frame_path)?.value;
    let data = io::read_embeddings(data_path)?.value.with_role(Role::Train);
    let outcome = trainer::train(network, &frame, &data, cfg)?;
    let hidden: Vec<String> = network.hidden_dims.iter().map(usize::to_string).collect();
    let hash = args_hash(&[
        ("command", "train".into()),
        ("frame", p(frame_path)),
        ("data", p(data_path)),
        ("hidden", hidden.join(",")),
        ("activation", network.activation.to_string()),
        ("net_seed", network.seed.to_string()),
        ("epochs", cfg.epochs.to_string()),
        ("batch_size", cfg.batch_size.to_string()),
        ("learning_rate", cfg.learning_rate.to_string()),
        ("momentum", cfg.momentum.to_string()),
        ("train_seed", cfg.seed.to_string()),
        ("scale_s", cfg.loss.scale_s.to_string()),
        ("margin_m", cfg.loss.margin_m.to_string()),
        ("mse_weight_n", cfg.loss.mse_weight_n.to_string()),
    ]);
    io::write_model(out, &outcome.model, Some(&hash))?;
    if let Some(h) = history_out {
        io::write_text(h, &io::format_history(&outcome.history, Some(&hash)))?;
    }
    Ok(outcome)
}

pub fn cmd_embed(model_path: &Path, input: &Path, out: &Path) -> Result<usize> {
    let model = io::read_model(model_path)?.value;
    let data = io::read_embeddings(input)?.value;
    let emb = trainer::embed(&model, &data)?;
    let hash = args_hash(&[("command", "embed".into()), ("model", p(model_path)), ("input", p(input))]);
    io::write_embeddings(out, &emb, Some(&hash))?;
    Ok(emb.len())
}

/// One score row per embedding row, in input order.
pub fn cmd_score(frame_path: &Path, embeddings: &Path, omega: f64, out: &Path) -> Result<ScoreTable> {
    let frame = io::read_frame(frame_path)?.value;
    let set = io::read_embeddings(embeddings)?.value;
    if set.dim() != frame.dim() {
        return Err(Error::invalid(format!(
            "{}: embedding dimension {} does not match frame dimension {}",
            embeddings.display(),
            set.dim(),
            frame.dim()
        )));
    }
    let records = score_batch(set.vectors(), &frame, omega)?;
    let table = ScoreTable::from_records(&records, set.labels(), omega);
    let hash = args_hash(&[
        ("command", "score".into()),
        ("frame", p(frame_path)),
        ("embeddings", p(embeddings)),
        ("omega", io::fmt_f64(omega)),
    ]);
    io::write_scores(out, &table, Some(&hash))?;
    Ok(table)
}

pub fn cmd_tune_omega(id_scores: &Path, ood_scores: &Path, grid: &[f64], out: Option<&Path>) -> Result<TunedOmega> {
    let id = io::read_scores(id_scores)?.value.rows;
    let ood = io::read_scores(ood_scores)?.value.rows;
    let tuned = tune_omega(&id, &ood, grid)?;
    if let Some(out) = out {
        let grid_text: Vec<String> = grid.iter().map(|w| io::fmt_f64(*w)).collect();
        let hash = args_hash(&[
            ("command", "tune-omega".into()),
            ("id", p(id_scores)),
            ("ood", p(ood_scores)),
            ("grid", grid_text.join(",")),
        ]);
        let name = ood_scores
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        io::write_text(out, &io::format_tuning(&name, &tuned, Some(&hash)))?;
    }
    Ok(tuned)
}

fn column(rows: &[ScoreRow], f: impl Fn(&ScoreRow) -> f64) -> Vec<f64> {
    rows.iter().map(f).collect()
}

/// Report of the decomposed scores stored in two score files. `omega`
/// defaults to the value recorded in the in-distribution file.
pub fn cmd_eval(id_scores: &Path, ood_scores: &Path, omega: Option<f64>, out: &Path) -> Result<Report> {
    let id_table = io::read_scores(id_scores)?.value;
    let ood = io::read_scores(ood_scores)?.value.rows;
    let id = id_table.rows;
    let w = omega.unwrap_or(id_table.omega);
    let d = |r: &ScoreRow| combined_score(r.s_alpha(), r.s_beta(), w);
    let report = Report {
        rows: vec![
            MethodRow::evaluate("s_pedcc", &column(&id, |r| r.s_pedcc), &column(&ood, |r| r.s_pedcc), None)?,
            MethodRow::evaluate("s_alpha", &column(&id, |r| r.cos_alpha), &column(&ood, |r| r.cos_alpha), None)?,
            MethodRow::evaluate("s_beta", &column(&id, |r| r.s_beta), &column(&ood, |r| r.s_beta), None)?,
            MethodRow::evaluate("s_d_pedcc", &column(&id, d), &column(&ood, d), Some(w))?,
        ],
        variance: Some(variance_report(&id)?),
    };
    let hash = args_hash(&[
        ("command", "eval".into()),
        ("id", p(id_scores)),
        ("ood", p(ood_scores)),
        ("omega", io::fmt_f64(w)),
    ]);
    io::write_report(out, &report, Some(&hash))?;
    Ok(report)
}

pub fn cmd_ablate(id_scores: &Path, ood_scores: &Path, omega: Option<f64>, out: &Path) -> Result<Report> {
    let id_table = io::read_scores(id_scores)?.value;
    let ood = io::read_scores(ood_scores)?.value.rows;
    let w = omega.unwrap_or(id_table.omega);
    let report = Report {
        rows: ablation_grid(&id_table.rows, &ood, w)?,
        variance: Some(variance_report(&id_table.rows)?),
    };
    let hash = args_hash(&[
        ("command", "ablate".into()),
        ("id", p(id_scores)),
        ("ood", p(ood_scores)),
        ("omega", io::fmt_f64(w)),
    ]);
    io::write_report(out, &report, Some(&hash))?;
    Ok(report)
}

/// Loads the config and runs the pipeline. `allow_overlap` and `output_dir`
/// override the file's settings.
pub fn cmd_run_pipeline(
    config_path: Option<&Path>,
    allow_overlap: bool,
    output_dir: Option<&Path>,
) -> Result<PipelineSummary> {
    let mut cfg = match config_path {
        Some(path) => {
            // the overlap guard runs inside parsing; defer it when overridden
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            let base = path.parent().unwrap_or(Path::new("."));
            let text = if allow_overlap {
                format!("{}\nallow_overlap = true\n", strip_key(&text, "allow_overlap"))
            } else {
                text.clone()
            };
            let mut cfg = PipelineConfig::parse(&text, base, path)?;
            cfg.hash = config_hash(&std::fs::read(path).map_err(|e| Error::io(path, e))?);
            cfg
        }
        None => PipelineConfig::default(),
    };
    cfg.allow_overlap |= allow_overlap;
    if let Some(dir) = output_dir {
        cfg.output_dir = dir.to_path_buf();
    }
    run_pipeline(&cfg)
}

/// Comments out `key` lines, keeping line numbers for error messages.
fn strip_key(text: &str, key: &str) -> String {
    text.lines()
        .map(|l| {
            if l.split_once('=').map(|(k, _)| k.trim()) == Some(key) {
                "#"
            } else {
                l
            }
        })
        .collect::<Vec<_>>()
        .join("\n")
}
