//! End-to-end run: frame → data → train → embed → tune ω → score → evaluate.
//!
//! Each stage's failure is reported with the stage name. Files written by a
//! failed run are removed before the error is returned.

mod config;

pub use config::{config_hash, DataSource, OodSource, PipelineConfig};

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::evaluate::{
    ablation_grid, baseline_max_softmax, tune_omega, variance_report, MahalanobisModel, MethodRow, Report,
    TunedOmega,
};
use crate::frame::CentroidFrame;
use crate::geometry::{score_batch, ScoreRecord};
use crate::io::{self, ScoreTable};
use crate::trainer::{self, make_synthetic, EmbeddingSet, Model, Role};

/// Files written so far, removed again by [`Outputs::rollback`].
struct Outputs {
    dir: PathBuf,
    created_dir: bool,
    written: Vec<PathBuf>,
}

impl Outputs {
    fn open(dir: &Path) -> Result<Self> {
        let created_dir = !dir.exists();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            created_dir,
            written: Vec::new(),
        })
    }

    fn write(&mut self, name: &str, text: &str) -> Result<()> {
        let path = self.dir.join(name);
        // record first so a partially written file is also removed
        self.written.push(path.clone());
        io::write_text(&path, text)
    }

    fn rollback(self) {
        for p in &self.written {
            let _ = fs::remove_file(p);
        }
        if self.created_dir {
            let _ = fs::remove_dir(&self.dir);
        }
    }
}

/// Everything the pipeline computed, in addition to the files on disk.
#[derive(Debug, Clone)]
pub struct PipelineSummary {
    pub config_hash: String,
    pub frame: CentroidFrame,
    pub model: Model,
    pub history: Vec<f64>,
    pub train_accuracy: f64,
    pub tuned: TunedOmega,
    /// `(ood name, report)` for every evaluation set.
    pub reports: Vec<(String, Report)>,
    pub ablations: Vec<(String, Vec<MethodRow>)>,
    pub outputs: Vec<PathBuf>,
}

impl PipelineSummary {
    pub fn report(&self, ood: &str) -> Option<&Report> {
        self.reports.iter().find(|(n, _)| n == ood).map(|(_, r)| r)
    }

    pub fn ablation(&self, ood: &str) -> Option<&[MethodRow]> {
        self.ablations.iter().find(|(n, _)| n == ood).map(|(_, r)| r.as_slice())
    }
}

fn stage<T>(name: &'static str, f: impl FnOnce() -> Result<T>) -> Result<T> {
    f().map_err(|e| e.in_stage(name))
}

/// Runs the whole pipeline, writing artifacts under `cfg.output_dir`.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<PipelineSummary> {
    stage("config", || {
        cfg.validate()?;
        cfg.check_inputs()
    })?;
    let mut out = stage("output", || Outputs::open(&cfg.output_dir))?;
    match run_stages(cfg, &mut out) {
        Ok(mut summary) => {
            summary.outputs = out.written;
            Ok(summary)
        }
        Err(e) => {
            out.rollback();
            Err(e)
        }
    }
}

fn load_ood(cfg: &PipelineConfig, source: &OodSource) -> Result<EmbeddingSet> {
    let set = match (source, &cfg.data) {
        (OodSource::Synthetic(kind), DataSource::Synthetic { per_class, seed }) => {
            make_synthetic(cfg.num_classes, cfg.network.input_dim, *per_class, *kind, *seed)?.ood
        }
        (OodSource::Synthetic(_), _) => return Err(Error::invalid("synthetic OOD sets need synthetic data")),
        (OodSource::File(p), _) => io::read_embeddings(p)?.value.with_role(Role::Ood),
    };
    if set.dim() != cfg.network.input_dim {
        return Err(Error::DimensionMismatch {
            expected: cfg.network.input_dim,
            actual: set.dim(),
        });
    }
    if set.is_empty() {
        return Err(Error::invalid(format!("OOD set '{}' is empty", source.name())));
    }
    Ok(set)
}

fn labels_of(set: &EmbeddingSet) -> Vec<Option<usize>> {
    set.labels().to_vec()
}

fn run_stages(cfg: &PipelineConfig, out: &mut Outputs) -> Result<PipelineSummary> {
    let hash = Some(cfg.hash.as_str());

    let frame = stage("generate", || {
        let frame = CentroidFrame::generate(cfg.num_classes, cfg.feature_dim, cfg.frame_seed)?;
        out.write("frame.csv", &io::format_frame(&frame, hash))?;
        Ok(frame)
    })?;

    let (train_set, id_test, tune_set, eval_sets) = stage("data", || {
        let (train_set, id_test) = match &cfg.data {
            DataSource::Synthetic { per_class, seed } => {
                let d = make_synthetic(
                    cfg.num_classes,
                    cfg.network.input_dim,
                    *per_class,
                    crate::trainer::OodKind::UniformBox,
                    *seed,
                )?;
                out.write("data_train.csv", &io::format_embeddings(&d.train, hash))?;
                out.write("data_id_test.csv", &io::format_embeddings(&d.id_test, hash))?;
                (d.train, d.id_test)
            }
            DataSource::Files { train, id_test } => (
                io::read_embeddings(train)?.value.with_role(Role::Train),
                io::read_embeddings(id_test)?.value.with_role(Role::IdTest),
            ),
        };
        for s in [&train_set, &id_test] {
            if s.dim() != cfg.network.input_dim {
                return Err(Error::DimensionMismatch {
                    expected: cfg.network.input_dim,
                    actual: s.dim(),
                });
            }
            s.class_labels(cfg.num_classes)?;
        }
        if id_test.len() < 2 {
            return Err(Error::invalid("in-distribution test set needs at least 2 rows"));
        }
        let tune_set = load_ood(cfg, &cfg.tune_ood)?;
        let eval_sets = cfg
            .eval_ood
            .iter()
            .map(|s| load_ood(cfg, s).map(|set| (s.name(), set)))
            .collect::<Result<Vec<_>>>()?;
        if matches!(cfg.data, DataSource::Synthetic { .. }) {
            out.write(
                &format!("data_ood_{}.csv", cfg.tune_ood.name()),
                &io::format_embeddings(&tune_set, hash),
            )?;
            for (name, set) in &eval_sets {
                out.write(&format!("data_ood_{name}.csv"), &io::format_embeddings(set, hash))?;
            }
        }
        Ok((train_set, id_test, tune_set, eval_sets))
    })?;

    let (model, history, train_emb) = stage("train", || {
        let outcome = trainer::train(&cfg.network, &frame, &train_set, &cfg.train)?;
        out.write("model.txt", &io::format_model(&outcome.model, hash))?;
        out.write("loss_history.csv", &io::format_history(&outcome.history, hash))?;
        let train_emb = trainer::embed(&outcome.model, &train_set)?;
        Ok((outcome.model, outcome.history, train_emb))
    })?;
    let train_accuracy = stage("train", || trainer::accuracy(&frame, &train_emb))?;

    let (id_emb, tune_emb, eval_emb) = stage("embed", || {
        let id_emb = trainer::embed(&model, &id_test)?;
        out.write("emb_id_test.csv", &io::format_embeddings(&id_emb, hash))?;
        let tune_emb = trainer::embed(&model, &tune_set)?;
        out.write(
            &format!("emb_ood_{}.csv", cfg.tune_ood.name()),
            &io::format_embeddings(&tune_emb, hash),
        )?;
        let mut eval_emb = Vec::new();
        for (name, set) in &eval_sets {
            let e = trainer::embed(&model, set)?;
            out.write(&format!("emb_ood_{name}.csv"), &io::format_embeddings(&e, hash))?;
            eval_emb.push((name.clone(), e));
        }
        Ok((id_emb, tune_emb, eval_emb))
    })?;

    let tuned = stage("tune", || {
        let id_rec = score_batch(id_emb.vectors(), &frame, 0.0)?;
        let ood_rec = score_batch(tune_emb.vectors(), &frame, 0.0)?;
        let tuned = tune_omega(&id_rec, &ood_rec, &cfg.omega_grid)?;
        out.write("tuning.csv", &io::format_tuning(&cfg.tune_ood.name(), &tuned, hash))?;
        Ok(tuned)
    })?;
    let omega = tuned.omega;

    let (id_rec, eval_rec) = stage("score", || {
        let id_rec = score_batch(id_emb.vectors(), &frame, omega)?;
        let table = ScoreTable::from_records(&id_rec, &labels_of(&id_emb), omega);
        out.write("scores_id_test.csv", &io::format_scores(&table, hash))?;
        let mut eval_rec = Vec::new();
        for (name, e) in &eval_emb {
            let rec = score_batch(e.vectors(), &frame, omega)?;
            let table = ScoreTable::from_records(&rec, &labels_of(e), omega);
            out.write(&format!("scores_{name}.csv"), &io::format_scores(&table, hash))?;
            eval_rec.push((name.clone(), e, rec));
        }
        Ok((id_rec, eval_rec))
    })?;

    let (reports, ablations) = stage("evaluate", || {
        let variance = variance_report(&id_rec)?;
        let maha = MahalanobisModel::fit(&train_emb, cfg.num_classes)?;
        let scale = cfg.train.loss.scale_s;
        let logits = |recs: &[ScoreRecord]| -> Vec<Vec<f64>> {
            recs.iter()
                .map(|r| r.cos_theta.iter().map(|c| scale * c).collect())
                .collect()
        };
        let id_base = baseline_max_softmax(&logits(&id_rec), cfg.temperature)?;
        let id_maha = maha.score_batch(id_emb.vectors())?;
        let pick = |recs: &[ScoreRecord], f: fn(&ScoreRecord) -> f64| recs.iter().map(f).collect::<Vec<_>>();

        let mut reports = Vec::new();
        let mut ablations = Vec::new();
        for (name, emb, rec) in &eval_rec {
            let ood_base = baseline_max_softmax(&logits(rec), cfg.temperature)?;
            let ood_maha = maha.score_batch(emb.vectors())?;
            let rows = vec![
                MethodRow::evaluate("baseline", &id_base, &ood_base, None)?,
                MethodRow::evaluate("mahalanobis", &id_maha, &ood_maha, None)?,
                MethodRow::evaluate("s_pedcc", &pick(&id_rec, |r| r.s_pedcc), &pick(rec, |r| r.s_pedcc), None)?,
                MethodRow::evaluate("s_alpha", &pick(&id_rec, |r| r.s_alpha), &pick(rec, |r| r.s_alpha), None)?,
                MethodRow::evaluate("s_beta", &pick(&id_rec, |r| r.s_beta), &pick(rec, |r| r.s_beta), None)?,
                MethodRow::evaluate(
                    "s_d_pedcc",
                    &pick(&id_rec, |r| r.s_d_pedcc),
                    &pick(rec, |r| r.s_d_pedcc),
                    Some(omega),
                )?,
            ];
            let report = Report {
                rows,
                variance: Some(variance),
            };
            out.write(&format!("report_{name}.csv"), &io::format_report(&report, hash))?;
            let abl = ablation_grid(&id_rec, rec, omega)?;
            let abl_report = Report {
                rows: abl.clone(),
                variance: Some(variance),
            };
            out.write(&format!("ablation_{name}.csv"), &io::format_report(&abl_report, hash))?;
            reports.push((name.clone(), report));
            ablations.push((name.clone(), abl));
        }
        Ok((reports, ablations))
    })?;

    Ok(PipelineSummary {
        config_hash: cfg.hash.clone(),
        frame,
        model,
        history,
        train_accuracy,
        tuned,
        reports,
        ablations,
        outputs: Vec::new(),
    })
}
