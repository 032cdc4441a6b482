use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use nqs_core::allocator::{
    constrained_search, isoflop_slice, log_axis, ConstraintSet, GridSpec, LossModel, SliceBatch,
    TimeRule,
};
use nqs_core::chinchilla::{chin_fit, chin_optimal_nd, Boundary};
use nqs_core::data::{Record, ScalingDataset};
use nqs_core::fitting::{
    bootstrap_ci, fit_nqs, s_grid_around, select_s_with, FitConfig, ObjectiveKind,
};
use nqs_core::io::{load_dataset, load_runs, load_toml, save_dataset, write_dataset, ReportFile};
use nqs_core::model::LrSchedule;
use nqs_core::model::{LayerNormConfig, NqsParams, RunConfig};
use nqs_core::seeding::derive_seed;
use nqs_core::simulator::{
    concat, generate_synthetic_dataset_with, moment_recurrence, simulate_layernorm_run,
    simulate_run, BatchRule, DatasetDesign, Feedback, GeneratorOptions, SimConfig, StepRule,
};

use crate::args::*;
use crate::CliError;

type Res<T> = std::result::Result<T, CliError>;

fn existing(path: &Path) -> Res<&Path> {
    if path.is_file() {
        Ok(path)
    } else {
        Err(CliError::Usage(format!("no such file: {}", path.display())))
    }
}

fn emit(out: Option<&PathBuf>, text: &str) -> Res<()> {
    match out {
        Some(p) => std::fs::write(p, text)
            .map_err(|e| CliError::Core(nqs_core::Error::Io(format!("{}: {e}", p.display())))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn load_report(path: &Path) -> Res<ReportFile> {
    Ok(ReportFile::load(existing(path)?)?)
}

fn theta_from(theta: &Option<Vec<f64>>, report: &Option<PathBuf>) -> Res<NqsParams> {
    if let Some(v) = theta {
        let arr: [f64; 7] = v.as_slice().try_into().map_err(|_| {
            CliError::Usage(format!(
                "--theta needs 7 values p,P,q,Q,r,R,e; got {}",
                v.len()
            ))
        })?;
        return Ok(NqsParams::from_array(arr)?);
    }
    let report = load_report(report.as_ref().expect("clap requires --theta or --report"))?;
    report
        .nqs
        .map(|n| n.theta)
        .ok_or_else(|| CliError::Usage("report has no loss-model fit".into()))
}

fn fit_config(o: &FitOverrides) -> Res<FitConfig> {
    let mut c: FitConfig = match &o.config {
        Some(p) => load_toml(existing(p)?)?,
        None => FitConfig::default(),
    };
    if let Some(v) = o.seed {
        c.seed = v;
    }
    if let Some(v) = o.inits {
        c.n_inits = v;
    }
    if let Some(v) = o.iters {
        c.n_iters = v;
    }
    if let Some(v) = o.lr {
        c.lr = v;
    }
    if let Some(v) = o.clip {
        c.clip = v;
    }
    if let Some(v) = o.delta {
        c.huber_delta = v;
    }
    if let Some(v) = o.objective {
        c.objective = match v {
            Objective::Huber => ObjectiveKind::Huber,
            Objective::Squared => ObjectiveKind::Squared,
        };
    }
    if let Some(v) = o.polish_iters {
        c.polish_iters = v;
    }
    if o.no_filter {
        c.filter_margin = None;
    }
    if let Some(v) = o.filter_margin {
        c.filter_margin = Some(v);
    }
    c.validate()?;
    Ok(c)
}

fn fit_subset(data: &ScalingDataset, all: bool) -> ScalingDataset {
    if all {
        data.clone()
    } else {
        data.training()
    }
}

fn run_key(r: &RunConfig) -> (u64, u64, u64, u64) {
    (r.n_params, r.batch, r.steps, r.seq_len)
}

fn predict_with(report: &ReportFile, model: ModelKind, run: &RunConfig) -> Res<f64> {
    Ok(match model {
        ModelKind::Nqs => report.nqs_prediction(run)?,
        ModelKind::Chinchilla => report.chin_prediction(run)?,
    })
}

/// `n_params,batch,steps,seq_len,loss,predicted,split` sorted by run.
fn prediction_table(report: &ReportFile, model: ModelKind, records: &[Record]) -> Res<String> {
    let mut rows = Vec::with_capacity(records.len());
    for r in records {
        let split = if r.has_tag(nqs_core::data::TAG_HOLDOUT) {
            "holdout"
        } else {
            "train"
        };
        rows.push((
            run_key(&r.run),
            r.loss,
            predict_with(report, model, &r.run)?,
            split,
            r.id,
        ));
    }
    rows.sort_by(|a, b| a.0.cmp(&b.0).then(a.4.cmp(&b.4)));
    let mut s = String::from("n_params,batch,steps,seq_len,loss,predicted,split\n");
    for ((n, b, k, l), loss, pred, split, _) in rows {
        writeln!(s, "{n},{b},{k},{l},{loss},{pred},{split}").unwrap();
    }
    Ok(s)
}

pub fn fit(a: &FitArgs) -> Res<()> {
    let config = fit_config(&a.fit)?;
    let data = load_dataset(existing(&a.data)?)?;
    let small = match &a.small_batch_data {
        Some(p) => Some(load_dataset(existing(p)?)?),
        None => None,
    };
    let train = fit_subset(&data, a.fit.all_records);
    let mut fit = fit_nqs(&train, &config)?;
    for w in &fit.warnings {
        eprintln!("warning: {w}");
    }
    let mut layernorm = None;
    if let Some(small) = &small {
        let grid = match &a.s_grid {
            Some(g) => g.clone(),
            None => {
                let n_max = small
                    .records
                    .iter()
                    .map(|r| r.run.n_params)
                    .max()
                    .unwrap_or(1);
                s_grid_around(LayerNormConfig::anchor_s(n_max), a.s_half_width)
            }
        };
        let template = LayerNormConfig::new(1.0);
        let sel = select_s_with(&fit.best_theta, small, &grid, &template, &config.scoring())?;
        fit.selected_s = Some(sel.s);
        layernorm = Some(LayerNormConfig {
            s: sel.s,
            ..template
        });
        eprintln!("selected s = {} from {} candidates", sel.s, grid.len());
    }
    let mut report = ReportFile::new(config.seed).with_nqs(&fit, layernorm);
    report.fit_config = Some(config.clone());
    report.save(&a.out)?;

    let holdout = data.holdout();
    if !a.fit.all_records && !holdout.is_empty() {
        let scoring = config.scoring();
        let mut total = 0.0;
        for r in &holdout.records {
            total += scoring.score(report.nqs_prediction(&r.run)?.ln() - r.loss.ln());
        }
        eprintln!(
            "objective {} on {} records; holdout {} on {} records",
            fit.best_objective,
            fit.n_records,
            total / holdout.len() as f64,
            holdout.len()
        );
    } else {
        eprintln!(
            "objective {} on {} records",
            fit.best_objective, fit.n_records
        );
    }
    if let Some(p) = &a.predictions {
        emit(
            Some(p),
            &prediction_table(&report, ModelKind::Nqs, &data.records)?,
        )?;
    }
    Ok(())
}

pub fn predict(a: &PredictArgs) -> Res<()> {
    let report = load_report(&a.report)?;
    match &a.data {
        Some(p) => {
            let data = load_dataset(existing(p)?)?;
            emit(
                a.out.as_ref(),
                &prediction_table(&report, a.model, &data.records)?,
            )
        }
        None => {
            let run = RunConfig::new(
                a.n.unwrap(),
                a.batch.unwrap(),
                a.steps.unwrap(),
                a.seq_len.unwrap(),
            )?;
            emit(
                a.out.as_ref(),
                &format!("{}\n", predict_with(&report, a.model, &run)?),
            )
        }
    }
}

fn loss_model(report: &ReportFile, model: ModelKind) -> Res<LossModel> {
    match model {
        ModelKind::Nqs => {
            let n = report
                .nqs
                .as_ref()
                .ok_or_else(|| CliError::Usage("report has no loss-model fit".into()))?;
            let layernorm = match (n.layernorm, n.selected_s) {
                (Some(ln), Some(s)) => Some(LayerNormConfig { s, ..ln }),
                _ => None,
            };
            Ok(LossModel::Nqs {
                theta: n.theta,
                layernorm,
            })
        }
        ModelKind::Chinchilla => {
            let c = report
                .chinchilla
                .as_ref()
                .ok_or_else(|| CliError::Usage("report has no baseline fit".into()))?;
            Ok(LossModel::Chinchilla { params: c.params })
        }
    }
}

fn constraint_set(compute: f64, c: &Constraints) -> ConstraintSet {
    ConstraintSet {
        compute_max: compute,
        time_max: c.time_max,
        time_rule: match c.time_rule {
            TimeRuleArg::Nk => TimeRule::ParamsTimesSteps,
            TimeRuleArg::K => TimeRule::Steps,
        },
        memory_max: c.memory_max,
        data_max: c.data_max,
        seq_len: c.seq_len,
    }
}

pub fn allocate(a: &AllocateArgs) -> Res<()> {
    let report = load_report(&a.report)?;
    let model = loss_model(&report, a.model)?;
    let cons = constraint_set(a.compute_max, &a.constraints);
    let grid = GridSpec::log_spaced(a.n_range, a.batch_range, a.steps_range, a.per_decade)?;
    let best = constrained_search(&model, &cons, &grid)?;
    let r = best.run;
    let mut s = String::from("n_params,batch,steps,seq_len,tokens,compute,loss,feasible_points\n");
    writeln!(
        s,
        "{},{},{},{},{},{},{},{}",
        r.n_params,
        r.batch,
        r.steps,
        r.seq_len,
        r.tokens(),
        r.compute(),
        best.loss,
        best.feasible
    )
    .unwrap();
    emit(a.out.as_ref(), &s)
}

pub fn isoflop(a: &IsoflopArgs) -> Res<()> {
    let report = load_report(&a.report)?;
    let model = loss_model(&report, a.model)?;
    let cons = constraint_set(a.compute, &a.constraints);
    let n_grid = log_axis(a.n_range.0, a.n_range.1, a.per_decade)?;
    let batch = match (&a.batch, &a.batches) {
        (Some(b), _) => SliceBatch::Fixed(*b),
        (None, Some(bs)) => SliceBatch::Best(bs.clone()),
        (None, None) => return Err(CliError::Usage("isoflop needs --batch or --batches".into())),
    };
    let slice = isoflop_slice(&model, a.compute, &cons, &n_grid, &batch)?;
    for note in &slice.notes {
        eprintln!("note: {note}");
    }
    if let Some(m) = slice.minimum() {
        eprintln!(
            "minimum at n_params = {}, batch = {}, steps = {}, loss = {}",
            m.n_params, m.batch, m.steps, m.loss
        );
    }
    let mut s = String::from("n_params,batch,steps,tokens,compute,loss\n");
    for r in &slice.rows {
        let run = RunConfig {
            n_params: r.n_params,
            batch: r.batch,
            steps: r.steps,
            seq_len: a.constraints.seq_len,
        };
        writeln!(
            s,
            "{},{},{},{},{},{}",
            r.n_params,
            r.batch,
            r.steps,
            run.tokens(),
            run.compute(),
            r.loss
        )
        .unwrap();
    }
    emit(a.out.as_ref(), &s)
}

pub fn simulate(a: &SimulateArgs) -> Res<()> {
    let theta = theta_from(&a.theta, &a.report)?;
    let run = RunConfig::new(a.n, a.batch, a.steps, a.seq_len)?;
    let mut cfg = SimConfig::new(theta, run, a.trials, a.seed);
    cfg.s = a.s;
    cfg.latent_modes = a.latent_modes;
    cfg.feedback = match a.feedback {
        FeedbackArg::Expected => Feedback::Expected,
        FeedbackArg::Empirical => Feedback::Empirical,
    };
    let (sim, rule) = match a.s {
        Some(s) => (
            simulate_layernorm_run(&cfg)?,
            StepRule::WeightNorm { s, gamma_init: 1.0 },
        ),
        None => (
            simulate_run(&cfg)?,
            StepRule::Schedule(LrSchedule::constant(a.steps, 1.0)?),
        ),
    };
    let exact = match moment_recurrence(&theta, &run, &rule) {
        Ok(t) => (t.loss, t.weight_norm_sq),
        Err(nqs_core::Error::Unstable { .. }) => (f64::NAN, f64::NAN),
        Err(e) => return Err(e.into()),
    };
    let mut s = String::from(
        "mean_loss,stderr_loss,mean_weight_norm_sq,stderr_weight_norm_sq,trials,failures,exact_loss,exact_weight_norm_sq\n",
    );
    writeln!(
        s,
        "{},{},{},{},{},{},{},{}",
        sim.mean_loss,
        sim.stderr_loss,
        sim.mean_weight_norm_sq,
        sim.stderr_weight_norm_sq,
        sim.trials,
        sim.failures,
        exact.0,
        exact.1
    )
    .unwrap();
    emit(a.out.as_ref(), &s)
}

pub fn generate(a: &GenerateArgs) -> Res<()> {
    let theta = theta_from(&a.theta, &a.report)?;
    let isoflops = DatasetDesign::IsoFlops {
        base_compute: a.base_compute,
        levels: a.levels,
        models_per_level: a.models_per_level,
        n_start: a.n_start,
        n_factor: a.n_factor,
        batch_rule: BatchRule::Fixed(a.batch),
        seq_len: a.seq_len,
        holdout_from_level: a.holdout_from_level,
    };
    let isotokens = DatasetDesign::IsoTokens {
        n_params: a.bk_n_params.clone(),
        base_tokens: a.bk_base_tokens,
        levels: a.bk_levels,
        batches: a.bk_batches.clone(),
        seq_len: a.seq_len,
        holdout_from_level: a.bk_holdout_from_level,
    };
    let designs = match (&a.config, a.design) {
        (Some(p), _) => vec![load_toml::<DatasetDesign>(existing(p)?)?],
        (None, DesignKind::Isoflops) => vec![isoflops],
        (None, DesignKind::Isotokens) => vec![isotokens],
        (None, DesignKind::Both) => vec![isoflops, isotokens],
    };
    let options = GeneratorOptions {
        layernorm: a.s.map(LayerNormConfig::new),
    };
    let mut data: Option<ScalingDataset> = None;
    for (i, d) in designs.iter().enumerate() {
        let g = generate_synthetic_dataset_with(
            &theta,
            d,
            a.noise_sd,
            derive_seed(a.seed, i as u64),
            &options,
        )?;
        for note in &g.skipped {
            eprintln!("skipped: {note}");
        }
        data = Some(match data {
            None => g.dataset,
            Some(base) => concat(base, g.dataset),
        });
    }
    let mut data = data.expect("at least one design");
    data.records.sort_by(|x, y| {
        x.run
            .compute()
            .total_cmp(&y.run.compute())
            .then(run_key(&x.run).cmp(&run_key(&y.run)))
            .then(x.id.cmp(&y.id))
    });
    let data = data.renumbered();
    match &a.out {
        Some(p) => save_dataset(&data, p)?,
        None => write_dataset(&data, std::io::stdout().lock())?,
    }
    Ok(())
}

pub fn baseline(a: &BaselineArgs) -> Res<()> {
    let config = fit_config(&a.fit)?;
    let data = load_dataset(existing(&a.data)?)?;
    let fit = chin_fit(&fit_subset(&data, a.fit.all_records), &config)?;
    let report = match &a.report {
        Some(p) => load_report(p)?,
        None => {
            let mut r = ReportFile::new(config.seed);
            r.fit_config = Some(config.clone());
            r
        }
    };
    report.with_chinchilla(&fit).save(&a.out)?;
    eprintln!("baseline objective {}", fit.objective);
    if let Some(budgets) = &a.compute {
        let mut budgets = budgets.clone();
        budgets.sort_by(f64::total_cmp);
        let mut s = String::from("compute,n_params,tokens,loss,boundary\n");
        for c in budgets {
            let o = chin_optimal_nd(&fit.params, c, a.seq_len)?;
            let boundary = match o.boundary {
                None => "",
                Some(Boundary::AllData) => "all-data",
                Some(Boundary::AllModel) => "all-model",
            };
            writeln!(s, "{c},{},{},{},{boundary}", o.n_params, o.tokens, o.loss).unwrap();
        }
        emit(None, &s)?;
    }
    Ok(())
}

pub fn bootstrap(a: &BootstrapArgs) -> Res<()> {
    let mut config = fit_config(&a.fit)?;
    if let Some(p) = &a.warm_start {
        config.warm_start = Some(theta_from(&None, &Some(p.clone()))?);
    }
    let data = load_dataset(existing(&a.data)?)?;
    let queries: Vec<RunConfig> = match &a.queries {
        Some(p) => load_runs(existing(p)?)?,
        None => data.holdout().records.iter().map(|r| r.run).collect(),
    };
    if queries.is_empty() {
        return Err(CliError::Usage(
            "no queries: pass --queries or tag records as holdout".into(),
        ));
    }
    let result = bootstrap_ci(
        &fit_subset(&data, a.fit.all_records),
        &config,
        &queries,
        a.trials,
        a.frac,
        a.level,
    )?;
    for w in &result.warnings {
        eprintln!("warning: {w}");
    }
    let mut rows: Vec<(RunConfig, f64, f64, f64)> = queries
        .iter()
        .enumerate()
        .map(|(q, run)| {
            let mut preds: Vec<f64> = result.samples.iter().map(|t| t[q]).collect();
            preds.sort_by(f64::total_cmp);
            let mid = preds.len() / 2;
            let median = if preds.len() % 2 == 1 {
                preds[mid]
            } else {
                0.5 * (preds[mid - 1] + preds[mid])
            };
            (*run, result.intervals[q].0, result.intervals[q].1, median)
        })
        .collect();
    rows.sort_by_key(|r| run_key(&r.0));
    let mut s = String::from("n_params,batch,steps,seq_len,lo,hi,median\n");
    for (r, lo, hi, med) in rows {
        writeln!(
            s,
            "{},{},{},{},{lo},{hi},{med}",
            r.n_params, r.batch, r.steps, r.seq_len
        )
        .unwrap();
    }
    emit(a.out.as_ref(), &s)
}
