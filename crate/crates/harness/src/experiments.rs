//! Experiment pipelines: training rosters, attack matrices, overlap sets,
//! λ sweeps, data-efficiency curves, FAE runs and image dumps.

use std::path::{Path, PathBuf};

use rrr_core::attacks::run_attack;
use rrr_core::data::Dataset;
use rrr_core::explain::{fae_sequential, fae_simultaneous, input_gradients, mean_abs_cosine, toy_rule_masses, MaskCutoff};
use rrr_core::io::{save_params, Manifest};
use rrr_core::nn::predict;
use rrr_core::objectives::GradientKind;
use rrr_core::train::{balance_lambda, distill_train_with_probe, initial_terms, train, train_with_probe, LambdaBalance, TrainLog};
use rrr_core::{Annotation, AttackSpec, Defense, Error, Params, PenaltyKind, TrainConfig};

use crate::config::{DataKind, DumpSection, EfficiencySection, ExperimentConfig, FaeMode, FaeSection, TrainSection};
use crate::datasets::{build_splits, Splits};
use crate::error::{config_err, io_err, Result};
use crate::image::{dump_image, signed_to_unit, ImageFormat};
use crate::parallel::map_ordered;
use crate::report::{
    write_attack_csv, write_efficiency_csv, write_json, write_jsonl, write_sweep_csv, AttackCell, AttackReport,
    AttackRow, DatasetSummary, EfficiencyPoint, FaeModelReport, FaeReport, FooledSet, ModelReport, Overlap,
    PairCosine, PairCount, Report, RuleMasses, SweepPoint,
};

/// Magnitude-ratio cutoff used for the rule masses in reports.
pub const RULE_CUTOFF: f64 = 0.67;

/// Fraction of `predictions` equal to `labels`.
pub fn accuracy_of(predictions: &[usize], labels: &[usize]) -> f64 {
    assert_eq!(predictions.len(), labels.len());
    if labels.is_empty() {
        return 0.0;
    }
    let hits = predictions.iter().zip(labels).filter(|(p, l)| p == l).count();
    hits as f64 / labels.len() as f64
}

pub fn rule_masses(params: &Params, ds: &Dataset) -> Result<Option<RuleMasses>> {
    if ds.kind != rrr_core::data::DatasetKind::ToyColor {
        return Ok(None);
    }
    let (corner, top_middle) = toy_rule_masses(params, ds, MaskCutoff::new(RULE_CUTOFF)?)?;
    Ok(Some(RuleMasses { corner, top_middle }))
}

#[derive(Clone, Debug)]
pub struct TrainedModel {
    pub name: String,
    pub config: TrainConfig,
    pub params: Params,
    pub log: TrainLog,
    pub balance: Option<LambdaBalance>,
    /// Distillation teacher.
    pub teacher: Option<Params>,
}

/// Trains one roster model. λ₁ is balanced first when the section asks for it.
pub fn train_model(name: &str, section: &TrainSection, splits: &Splits) -> Result<TrainedModel> {
    let mut config = section.to_train_config(&splits.train)?;
    let balance = match &section.balance_grid {
        Some(grid) => {
            let b = balance_lambda(&splits.train, &config, grid)?;
            config.penalty.lambda1 = b.chosen;
            Some(b)
        }
        None => None,
    };
    let (params, log, teacher) = if config.defense == Defense::Distill {
        let d = distill_train_with_probe(&splits.train, &config, Some(&splits.test))?;
        (d.student, d.student_log, Some(d.teacher))
    } else {
        let (p, l) = train_with_probe(&splits.train, &config, Some(&splits.test))?;
        (p, l, None)
    };
    Ok(TrainedModel {
        name: name.to_string(),
        config,
        params,
        log,
        balance,
        teacher,
    })
}

pub fn train_roster(cfg: &ExperimentConfig, splits: &Splits, jobs: usize) -> Result<Vec<TrainedModel>> {
    let roster = cfg.roster();
    map_ordered(jobs, &roster, |(name, section)| train_model(name, section, splits))
        .into_iter()
        .collect()
}

pub fn model_report(m: &TrainedModel, splits: &Splits) -> Result<ModelReport> {
    let predictions = predict(&m.params, &splits.test.x)?;
    let train_predictions = predict(&m.params, &splits.train.x)?;
    let teacher_test_accuracy = match &m.teacher {
        Some(t) => Some(accuracy_of(&predict(t, &splits.test.x)?, &splits.test.labels())),
        None => None,
    };
    Ok(ModelReport {
        name: m.name.clone(),
        defense: m.config.defense,
        penalty: m.config.penalty,
        seed: m.config.seed,
        init_seed: m.config.init_seed.unwrap_or(m.config.seed),
        steps: m.config.steps,
        batch_size: m.config.batch_size,
        balance: m.balance.clone(),
        params_digest: m.params.digest(),
        first_step: m.log.records.first().cloned(),
        last_step: m.log.last().cloned(),
        train_accuracy: accuracy_of(&train_predictions, &splits.train.labels()),
        test_accuracy: accuracy_of(&predictions, &splits.test.labels()),
        teacher_test_accuracy,
        rule_masses: rule_masses(&m.params, &splits.test)?,
        predictions,
    })
}

/// Index sets of examples each model misclassifies, and their intersections.
pub fn overlap_report(source: &str, names: &[&str], labels: &[usize], predictions: &[Vec<usize>]) -> Overlap {
    let fooled: Vec<Vec<usize>> = predictions
        .iter()
        .map(|p| (0..labels.len()).filter(|&i| p[i] != labels[i]).collect())
        .collect();
    let fooled_by_all = (0..labels.len())
        .filter(|&i| predictions.iter().all(|p| p[i] != labels[i]))
        .collect();
    let mut pairwise = Vec::new();
    for a in 0..names.len() {
        for b in a + 1..names.len() {
            let count = (0..labels.len())
                .filter(|&i| predictions[a][i] != labels[i] && predictions[b][i] != labels[i])
                .count();
            pairwise.push(PairCount {
                a: names[a].to_string(),
                b: names[b].to_string(),
                count,
            });
        }
    }
    Overlap {
        source: source.to_string(),
        fooled: names
            .iter()
            .zip(fooled)
            .map(|(n, indices)| FooledSet {
                model: n.to_string(),
                indices,
            })
            .collect(),
        fooled_by_all,
        pairwise,
    }
}

/// Crafts examples against every roster model and evaluates every model on
/// each set. The diagonal is white-box, the rest black-box transfer.
pub fn attack_matrix(roster: &[(&str, &Params)], test: &Dataset, spec: &AttackSpec, jobs: usize) -> Result<AttackReport> {
    if roster.is_empty() {
        return Err(config_err("models", "attack matrix needs at least one model"));
    }
    let labels = test.labels();
    let names: Vec<&str> = roster.iter().map(|(n, _)| *n).collect();
    let rows: Vec<Result<(AttackRow, Overlap)>> = map_ordered(jobs, roster, |(source, params)| {
        let adv = run_attack(params, &test.x, &test.y, spec)?;
        let preds: Vec<Vec<usize>> = roster
            .iter()
            .map(|(_, p)| predict(p, &adv))
            .collect::<std::result::Result<_, _>>()?;
        let overlap = overlap_report(source, &names, &labels, &preds);
        let cells = names
            .iter()
            .zip(preds)
            .map(|(target, predictions)| AttackCell {
                target: target.to_string(),
                accuracy: accuracy_of(&predictions, &labels),
                predictions,
            })
            .collect();
        Ok((
            AttackRow {
                source: source.to_string(),
                cells,
            },
            overlap,
        ))
    });
    let (rows, overlap) = rows.into_iter().collect::<Result<Vec<_>>>()?.into_iter().unzip();
    Ok(AttackReport {
        spec: spec.clone(),
        rows,
        overlap,
    })
}

fn diverged(e: &Error) -> bool {
    matches!(e, Error::Diverged { .. })
}

/// One gradient-regularized model per λ₁ with a shared seed. Divergent
/// points are recorded as failures.
pub fn sweep_lambda(splits: &Splits, cfg: &TrainConfig, grid: &[f64], jobs: usize) -> Result<Vec<SweepPoint>> {
    if grid.is_empty() {
        return Err(config_err("sweep.grid", "must not be empty"));
    }
    let mut cfg = cfg.clone();
    cfg.defense = Defense::GradReg;
    let (ce, pen) = initial_terms(&splits.train, &cfg)?;
    let labels = splits.test.labels();
    map_ordered(jobs, grid, |&lambda1| {
        let mut c = cfg.clone();
        c.penalty.lambda1 = lambda1;
        let mut point = SweepPoint {
            lambda1,
            cross_entropy: ce,
            penalty: pen,
            ratio: lambda1 * pen / ce,
            test_accuracy: None,
            failure: None,
            predictions: None,
        };
        match train(&splits.train, &c) {
            Ok((p, _)) => {
                let preds = predict(&p, &splits.test.x)?;
                point.test_accuracy = Some(accuracy_of(&preds, &labels));
                point.predictions = Some(preds);
            }
            Err(e) if diverged(&e) => point.failure = Some(e.to_string()),
            Err(e) => return Err(e.into()),
        }
        Ok(point)
    })
    .into_iter()
    .collect()
}

/// Test accuracy per (variant, N, seed), training on the first N rows with
/// λ₁ balanced at each N.
pub fn data_efficiency(
    splits: &Splits,
    base: &TrainSection,
    sec: &EfficiencySection,
    jobs: usize,
) -> Result<Vec<EfficiencyPoint>> {
    let mut grid = Vec::new();
    for &variant in &sec.variants {
        for &n in &sec.sizes {
            for &seed in &sec.seeds {
                grid.push((variant, n, seed));
            }
        }
    }
    let labels = splits.test.labels();
    map_ordered(jobs, &grid, |&(variant, n, seed)| {
        let train_set = splits.train.take(n);
        let mut section = base.clone();
        section.seed = Some(seed);
        section.balance_grid = None;
        section.annotation = None;
        let mut cfg = section.to_train_config(&train_set)?;
        let mut point = EfficiencyPoint {
            variant,
            n,
            seed,
            lambda1: None,
            test_accuracy: None,
            failure: None,
            predictions: None,
        };
        match variant.rule() {
            Some(rule) => {
                cfg.defense = Defense::GradReg;
                cfg.penalty.kind = PenaltyKind::Rrr;
                cfg.annotation = Annotation::Rule { rule, fraction: 1.0 };
                let b = balance_lambda(&train_set, &cfg, &sec.balance_grid)?;
                cfg.penalty.lambda1 = b.chosen;
                point.lambda1 = Some(b.chosen);
            }
            None => cfg.defense = Defense::None,
        }
        match train(&train_set, &cfg) {
            Ok((p, _)) => {
                let preds = predict(&p, &splits.test.x)?;
                point.test_accuracy = Some(accuracy_of(&preds, &labels));
                point.predictions = Some(preds);
            }
            Err(e) if diverged(&e) => point.failure = Some(e.to_string()),
            Err(e) => return Err(e.into()),
        }
        Ok(point)
    })
    .into_iter()
    .collect()
}

/// A FAE run plus its per-model training logs as `(name, JSON lines)`.
pub struct FaeOutcome {
    pub report: FaeReport,
    pub params: Vec<Params>,
    pub logs: Vec<(String, Vec<serde_json::Value>)>,
}

pub fn run_fae(splits: &Splits, base: &TrainSection, sec: &FaeSection) -> Result<FaeOutcome> {
    let cfg = base.to_train_config(&splits.train)?;
    let labels = splits.test.labels();
    let train_labels = splits.train.labels();
    let describe = |index: usize, lambda1: f64, coverage: f64, p: &Params| -> Result<FaeModelReport> {
        let predictions = predict(p, &splits.test.x)?;
        Ok(FaeModelReport {
            index,
            lambda1,
            coverage,
            train_accuracy: accuracy_of(&predict(p, &splits.train.x)?, &train_labels),
            test_accuracy: accuracy_of(&predictions, &labels),
            rule_masses: rule_masses(p, &splits.test)?,
            params_digest: p.digest(),
            predictions,
        })
    };
    match sec.mode {
        FaeMode::Sequential => {
            let (iters, stop) = fae_sequential(&splits.train, &cfg, &sec.to_fae_config()?)?;
            let mut iterations = Vec::new();
            let mut logs = Vec::new();
            for it in &iters {
                iterations.push(describe(it.index, it.lambda1, it.annotation.coverage(), &it.params)?);
                let lines = it.log.records.iter().map(serde_json::to_value).collect::<std::result::Result<_, _>>()?;
                logs.push((format!("fae-{}", it.index), lines));
            }
            Ok(FaeOutcome {
                report: FaeReport {
                    mode: sec.mode,
                    stop: Some(stop),
                    iterations,
                    pair_cosines: Vec::new(),
                },
                params: iters.into_iter().map(|it| it.params).collect(),
                logs,
            })
        }
        FaeMode::Simultaneous => {
            let (params, records) = fae_simultaneous(&splits.train, &cfg, sec.models, sec.weight)?;
            let iterations = params
                .iter()
                .enumerate()
                .map(|(a, p)| describe(a, sec.weight, 0.0, p))
                .collect::<Result<Vec<_>>>()?;
            let mut pair_cosines = Vec::new();
            for a in 0..params.len() {
                for b in a + 1..params.len() {
                    pair_cosines.push(PairCosine {
                        a,
                        b,
                        mean_abs_cosine: mean_abs_cosine(&params[a], &params[b], &splits.test.x)?,
                    });
                }
            }
            let lines = records.iter().map(serde_json::to_value).collect::<std::result::Result<_, _>>()?;
            Ok(FaeOutcome {
                report: FaeReport {
                    mode: sec.mode,
                    stop: None,
                    iterations,
                    pair_cosines,
                },
                params,
                logs: vec![("fae-simultaneous".to_string(), lines)],
            })
        }
    }
}

/// Writes test rows, per-model gradient images and per-model adversarial
/// examples under `dir`. Returns the written paths.
pub fn write_dumps(
    dir: &Path,
    test: &Dataset,
    models: &[TrainedModel],
    attacks: &[AttackSpec],
    sec: &DumpSection,
) -> Result<Vec<PathBuf>> {
    let g = test
        .geometry
        .ok_or_else(|| config_err("dump", "dataset rows are not images"))?;
    let fmt = ImageFormat::for_geometry(g)?;
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let ext = fmt.extension();
    let mut written = Vec::new();
    let mut emit = |name: String, values: &[f64]| -> Result<()> {
        let path = dir.join(format!("{name}.{ext}"));
        dump_image(values, g, &path, fmt)?;
        written.push(path);
        Ok(())
    };
    for &r in &sec.rows {
        if r >= test.len() {
            return Err(config_err("dump.rows", format!("row {r} is outside the {}-row test set", test.len())));
        }
        let x = test.x.select_rows(&[r]);
        let y = test.y.select_rows(&[r]);
        emit(format!("test-{r}"), x.data())?;
        for m in models {
            if sec.gradients {
                let e = input_gradients(&m.params, &x, GradientKind::SumLogProbs, None)?;
                emit(format!("{}-grad-{r}", m.name), &signed_to_unit(e.gradients.data()))?;
            }
            if sec.adversarial {
                for (i, spec) in attacks.iter().enumerate() {
                    let adv = run_attack(&m.params, &x, &y, spec)?;
                    emit(format!("{}-attack{i}-{r}", m.name), adv.data())?;
                }
            }
        }
    }
    Ok(written)
}

/// Which parts of a config to execute.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Stages {
    pub train: bool,
    pub attack: bool,
    pub fae: bool,
    pub sweep: bool,
    pub efficiency: bool,
    pub dump: bool,
}

impl Stages {
    pub fn all() -> Self {
        Self {
            train: true,
            attack: true,
            fae: true,
            sweep: true,
            efficiency: true,
            dump: true,
        }
    }

    pub fn none() -> Self {
        Self {
            train: false,
            attack: false,
            fae: false,
            sweep: false,
            efficiency: false,
            dump: false,
        }
    }
}

#[derive(Clone, Debug)]
pub struct RunOptions {
    pub out: Option<PathBuf>,
    pub jobs: usize,
    pub data_root: PathBuf,
    pub stages: Stages,
}

pub fn dataset_summary(cfg: &ExperimentConfig, splits: &Splits) -> DatasetSummary {
    DatasetSummary {
        kind: cfg.dataset.kind,
        seed: cfg.dataset.seed.unwrap_or_default(),
        decoy: cfg.dataset.decoy,
        train_size: splits.train.len(),
        test_size: splits.test.len(),
        features: splits.train.num_features(),
        classes: splits.train.num_classes(),
        test_labels: splits.test.labels(),
    }
}

fn mkdir(p: &Path) -> Result<()> {
    std::fs::create_dir_all(p).map_err(io_err(p))
}

fn save_model(dir: &Path, experiment: &str, kind: DataKind, m: &TrainedModel, test_accuracy: f64) -> Result<()> {
    let mut manifest = Manifest::new();
    manifest
        .set("experiment", experiment)
        .set("model", &m.name)
        .set("dataset", kind.name())
        .set("seed", m.config.seed)
        .set("test_accuracy", test_accuracy);
    save_params(&m.params, &dir.join(format!("{}.rrrp", m.name)), &manifest)?;
    Ok(())
}

/// Runs the selected stages of `cfg`. With an output directory the report
/// (`report.json`), training logs, model files, CSV tables and images are
/// written there; on failure the partial report is still written.
pub fn run_experiment(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<Report> {
    cfg.validate()?;
    let splits = build_splits(&cfg.dataset, &opts.data_root)?;
    let out = opts.out.clone().or_else(|| cfg.output.clone());
    if let Some(dir) = &out {
        mkdir(dir)?;
    }
    let mut report = Report {
        name: cfg.name.clone(),
        status: "complete".to_string(),
        dataset: dataset_summary(cfg, &splits),
        models: Vec::new(),
        attacks: Vec::new(),
        fae: None,
        sweep: None,
        efficiency: None,
    };
    let result = run_stages(cfg, opts, &splits, out.as_deref(), &mut report);
    if let Err(e) = &result {
        report.status = format!("failed: {e}");
    }
    if let Some(dir) = &out {
        write_json(&report, &dir.join("report.json"))?;
    }
    result.map(|()| report)
}

fn run_stages(
    cfg: &ExperimentConfig,
    opts: &RunOptions,
    splits: &Splits,
    out: Option<&Path>,
    report: &mut Report,
) -> Result<()> {
    let st = opts.stages;
    let wants_dump = st.dump && cfg.dump.is_some();
    let wants_attack = st.attack && !cfg.attacks.is_empty();
    let mut models = Vec::new();
    if st.train || wants_attack || wants_dump {
        models = train_roster(cfg, splits, opts.jobs)?;
        for m in &models {
            let r = model_report(m, splits)?;
            if let Some(dir) = out {
                mkdir(&dir.join("models"))?;
                mkdir(&dir.join("logs"))?;
                save_model(&dir.join("models"), &cfg.name, cfg.dataset.kind, m, r.test_accuracy)?;
                write_jsonl(&m.log.records, &dir.join("logs").join(format!("{}.jsonl", m.name)))?;
            }
            report.models.push(r);
        }
    }
    if wants_attack {
        let roster: Vec<(&str, &Params)> = models.iter().map(|m| (m.name.as_str(), &m.params)).collect();
        for spec in &cfg.attacks {
            report.attacks.push(attack_matrix(&roster, &splits.test, spec, opts.jobs)?);
        }
        if let Some(dir) = out {
            write_attack_csv(&report.attacks, &dir.join("attack_matrix.csv"))?;
        }
    }
    if let (true, Some(sec)) = (st.fae, &cfg.fae) {
        let outcome = run_fae(splits, &cfg.train, sec)?;
        if let Some(dir) = out {
            mkdir(&dir.join("logs"))?;
            for (name, lines) in &outcome.logs {
                write_jsonl(lines, &dir.join("logs").join(format!("{name}.jsonl")))?;
            }
        }
        report.fae = Some(outcome.report);
    }
    if let (true, Some(sec)) = (st.sweep, &cfg.sweep) {
        let tc = cfg.train.to_train_config(&splits.train)?;
        let points = sweep_lambda(splits, &tc, &sec.grid, opts.jobs)?;
        if let Some(dir) = out {
            write_sweep_csv(&points, &dir.join("sweep.csv"))?;
        }
        report.sweep = Some(points);
    }
    if let (true, Some(sec)) = (st.efficiency, &cfg.efficiency) {
        let points = data_efficiency(splits, &cfg.train, sec, opts.jobs)?;
        if let Some(dir) = out {
            write_efficiency_csv(&points, &dir.join("efficiency.csv"))?;
        }
        report.efficiency = Some(points);
    }
    if let (true, Some(sec), Some(dir)) = (wants_dump, &cfg.dump, out) {
        write_dumps(&dir.join("images"), &splits.test, &models, &cfg.attacks, sec)?;
    }
    Ok(())
}

/// Writes the train and test splits as binary containers with manifests.
pub fn generate_data(cfg: &ExperimentConfig, data_root: &Path, out: &Path) -> Result<Splits> {
    if cfg.dataset.seed.is_none() {
        return Err(config_err("dataset.seed", "is required"));
    }
    let splits = build_splits(&cfg.dataset, data_root)?;
    mkdir(out)?;
    for (name, ds) in [("train", &splits.train), ("test", &splits.test)] {
        let path = out.join(format!("{name}.rrrd"));
        std::fs::write(&path, ds.to_container().encode()).map_err(io_err(&path))?;
        let mp = rrr_core::io::manifest_path(&path);
        let mut m = ds.manifest();
        m.set("seed", cfg.dataset.seed.unwrap_or_default());
        std::fs::write(&mp, m.to_text()).map_err(io_err(&mp))?;
    }
    Ok(splits)
}

