use std::fs::{self, File};
use std::io::Write;
use std::path::{Path, PathBuf};

use poroforest::chemomech::papadakis_porosity;
use poroforest::dataset::{read_csv, stratified_split, write_csv};
use poroforest::ensemble::{
    boosting_error_trace, fit_lsboost, fit_random_forest, forest_error_trace, oob_mse,
    permutation_importance, TracePoint,
};
use poroforest::interpret::{default_grid, partial_dependence_1d, partial_dependence_2d};
use poroforest::metrics::{evaluate, EvalReport};
use poroforest::tuning::{
    bayes_optimize, boost_params_from, forest_params_from, objective_gbt_folds, objective_rf,
    write_trace_jsonl, TuneResult,
};
use poroforest::{
    BoostParams, ChemoMixInput, Composition, CuringCondition, Dataset, ForestParams, GypsumBranch,
    HyperparamSpace, MixRecord, Model, Predictor, Samples,
};
use serde::Serialize;
use serde_json::json;

use crate::{
    ChemomechArgs, CliError, Command, EvaluateArgs, ImportanceArgs, Part, PdpArgs, Scm,
    SensitivityArgs, SplitArgs, TrainGbtArgs, TrainRfArgs, TuneArgs,
};

type Result<T> = std::result::Result<T, CliError>;

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::Split(a) => split(a),
        Command::TrainRf(a) => train_rf(a),
        Command::TrainGbt(a) => train_gbt(a),
        Command::TuneRf(a) => tune(a, false),
        Command::TuneGbt(a) => tune(a, true),
        Command::Evaluate(a) => evaluate_cmd(a),
        Command::Importance(a) => importance(a),
        Command::Pdp(a) => pdp(a),
        Command::Sensitivity(a) => sensitivity(a),
        Command::Chemomech(a) => chemomech(a),
    }
}

fn load(input: &Option<PathBuf>) -> Result<Dataset> {
    match input {
        Some(path) => Ok(poroforest::dataset::load_csv(path)?),
        None => Ok(Dataset::embedded()),
    }
}

fn io_error(path: &Path, e: std::io::Error) -> CliError {
    CliError::Data(format!("cannot write {}: {e}", path.display()))
}

/// Writes to `path`, or to stdout when there is none.
fn emit(path: Option<&Path>, bytes: &[u8]) -> Result<()> {
    match path {
        Some(p) => fs::write(p, bytes).map_err(|e| io_error(p, e)),
        None => std::io::stdout()
            .write_all(bytes)
            .map_err(|e| CliError::Data(format!("cannot write to stdout: {e}"))),
    }
}

fn print_json(value: &serde_json::Value) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Data(e.to_string()))?;
    println!("{text}");
    Ok(())
}

fn csv_bytes<S: Serialize>(rows: &[S]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| CliError::Data(e.to_string()))?;
    }
    w.into_inner().map_err(|e| CliError::Data(e.to_string()))
}

fn report_json(r: &EvalReport) -> serde_json::Value {
    json!({"rmse": r.rmse, "mape": r.mape, "r2": r.r2, "m": r.m})
}

fn report_line(label: &str, r: &EvalReport) -> String {
    format!("{label:<6} m={:<4} RMSE={:.4} MAPE={:.3}% R2={:.4}", r.m, r.rmse, r.mape, r.r2)
}

fn score<P: Predictor + ?Sized>(model: &P, s: &Samples) -> Result<Option<EvalReport>> {
    if s.is_empty() {
        return Ok(None);
    }
    let preds: Vec<f64> = s.rows().iter().map(|r| model.predict_row(r)).collect();
    Ok(Some(evaluate(s.targets(), &preds)?))
}

fn split(a: SplitArgs) -> Result<()> {
    let mut data = load(&a.data.input)?;
    let assignment = stratified_split(&data, a.fraction, a.data.seed)?;
    data.apply_split(&assignment);
    let mut buf = Vec::new();
    write_csv(&data, &mut buf)?;
    if a.data.json {
        print_json(&json!({
            "seed": assignment.seed,
            "train_indices": assignment.train_indices,
            "test_indices": assignment.test_indices,
        }))?;
        if let Some(p) = &a.output {
            emit(Some(p), &buf)?;
        }
        return Ok(());
    }
    match &a.output {
        Some(p) => {
            emit(Some(p), &buf)?;
            println!(
                "{} training and {} testing records written to {}",
                assignment.train_indices.len(),
                assignment.test_indices.len(),
                p.display()
            );
            Ok(())
        }
        None => emit(None, &buf),
    }
}

fn trace_csv(trace: &[TracePoint]) -> Result<Vec<u8>> {
    csv_bytes(trace)
}

struct Fitted {
    model: Model,
    train: Samples,
    test: Samples,
}

fn print_fit_summary(f: &Fitted, model_path: &Path, extra: serde_json::Value, json_out: bool) -> Result<()> {
    let train = score(&f.model, &f.train)?;
    let test = score(&f.model, &f.test)?;
    if json_out {
        let mut v = json!({
            "model": model_path.display().to_string(),
            "model_kind": f.model.kind(),
            "train": train.as_ref().map(report_json),
            "test": test.as_ref().map(report_json),
        });
        if let (Some(obj), serde_json::Value::Object(more)) = (v.as_object_mut(), extra) {
            obj.extend(more);
        }
        return print_json(&v);
    }
    if let serde_json::Value::Object(more) = extra {
        for (k, v) in more {
            println!("{k}: {v}");
        }
    }
    if let Some(r) = &train {
        println!("{}", report_line("train", r));
    }
    if let Some(r) = &test {
        println!("{}", report_line("test", r));
    }
    println!("model written to {}", model_path.display());
    Ok(())
}

fn parts(data: &Dataset) -> Result<(Samples, Samples)> {
    let train = data.training_part();
    if train.is_empty() {
        return Err(CliError::Data("no training records in the input".into()));
    }
    Ok((train.to_samples(), data.testing_part().to_samples()))
}

fn test_ref(test: &Samples) -> Option<&Samples> {
    (!test.is_empty()).then_some(test)
}

fn train_rf(a: TrainRfArgs) -> Result<()> {
    let data = load(&a.data.input)?;
    let (train, test) = parts(&data)?;
    let params = ForestParams {
        n_trees: a.trees,
        min_leaf: a.min_leaf,
        features_per_split: a.features_per_split,
        max_splits: None,
    };
    let forest = fit_random_forest(&train, &params, a.data.seed)?;
    let oob = oob_mse(&forest, &train)?;
    if let Some(p) = &a.output {
        emit(Some(p), &trace_csv(&forest_error_trace(&forest, &train, test_ref(&test))?)?)?;
    }
    let model = Model::Forest(forest);
    model.save(&a.model)?;
    let fitted = Fitted { model, train, test };
    print_fit_summary(&fitted, &a.model, json!({ "oob_mse": oob }), a.data.json)
}

fn train_gbt(a: TrainGbtArgs) -> Result<()> {
    let data = load(&a.data.input)?;
    let (train, test) = parts(&data)?;
    let params = BoostParams {
        n_trees: a.trees,
        learning_rate: a.learning_rate,
        max_splits: a.max_splits,
        min_leaf: a.min_leaf,
    };
    let boosted = fit_lsboost(&train, &params, a.data.seed)?;
    if let Some(p) = &a.output {
        let trace = boosting_error_trace(&train, &params, a.k, a.data.seed, test_ref(&test))?;
        emit(Some(p), &trace_csv(&trace)?)?;
    }
    let model = Model::Boosted(boosted);
    model.save(&a.model)?;
    let fitted = Fitted { model, train, test };
    print_fit_summary(&fitted, &a.model, json!({}), a.data.json)
}

fn default_trace_path(model: &Path) -> PathBuf {
    model.with_extension("trace.jsonl")
}

fn tune(a: TuneArgs, boosting: bool) -> Result<()> {
    let data = load(&a.data.input)?;
    let (train, test) = parts(&data)?;
    let seed = a.data.seed;
    let (result, model): (TuneResult, Model) = if boosting {
        let r = bayes_optimize(
            &HyperparamSpace::boosting(),
            |p| objective_gbt_folds(&train, p, a.k, seed),
            a.budget,
            seed,
        )?;
        let m = fit_lsboost(&train, &boost_params_from(&r.best)?, seed)?;
        (r, Model::Boosted(m))
    } else {
        let r = bayes_optimize(&HyperparamSpace::forest(), |p| objective_rf(&train, p, seed), a.budget, seed)?;
        let m = fit_random_forest(&train, &forest_params_from(&r.best)?, seed)?;
        (r, Model::Forest(m))
    };
    model.save(&a.model)?;
    let trace_path = a.output.clone().unwrap_or_else(|| default_trace_path(&a.model));
    let file = File::create(&trace_path).map_err(|e| io_error(&trace_path, e))?;
    write_trace_jsonl(&result.trace, file)?;
    let fitted = Fitted { model, train, test };
    let extra = json!({
        "best": result.best.to_json(),
        "best_objective": result.best_value,
        "evaluations": result.budget_used,
        "trace": trace_path.display().to_string(),
    });
    print_fit_summary(&fitted, &a.model, extra, a.data.json)
}

#[derive(Serialize)]
struct PredictionRow<'a> {
    mix_id: &'a str,
    actual: f64,
    predicted: f64,
}

fn evaluate_cmd(a: EvaluateArgs) -> Result<()> {
    let model = Model::load(&a.model)?;
    let data = load(&a.data.input)?;
    let data = match a.part {
        Part::All => data,
        Part::Train => data.training_part(),
        Part::Test => data.testing_part(),
    };
    if data.is_empty() {
        return Err(CliError::Data("no records to evaluate".into()));
    }
    let s = data.to_samples();
    let preds: Vec<f64> = s.rows().iter().map(|r| model.predict_row(r)).collect();
    let report = evaluate(s.targets(), &preds)?;
    if let Some(p) = &a.output {
        let rows: Vec<PredictionRow> = data
            .records
            .iter()
            .zip(&preds)
            .map(|(r, &predicted)| PredictionRow { mix_id: &r.mix_id, actual: r.porosity, predicted })
            .collect();
        emit(Some(p), &csv_bytes(&rows)?)?;
    }
    if a.data.json {
        print_json(&report_json(&report))
    } else {
        println!("{}", report_line("eval", &report));
        Ok(())
    }
}

fn importance(a: ImportanceArgs) -> Result<()> {
    let model = Model::load(&a.model)?;
    let forest = model
        .as_forest()
        .ok_or_else(|| CliError::Usage("permutation importance needs a forest model".into()))?;
    let data = load(&a.data.input)?;
    let train = data.training_part().to_samples();
    let report = permutation_importance(forest, &train, a.repeats, a.data.seed)?;
    let mut entries = report.entries.clone();
    entries.sort_by(|x, y| y.importance.total_cmp(&x.importance));
    if a.data.json {
        return print_json(&json!({ "trees_used": report.trees_used, "entries": entries }));
    }
    println!("{:<18} {:>12} {:>12} {:>10}", "feature", "mean_delta", "std_delta", "importance");
    for e in &entries {
        println!("{:<18} {:>12.6} {:>12.6} {:>10.4}", e.feature, e.mean_delta, e.std_delta, e.importance);
    }
    println!("trees used: {}", report.trees_used);
    Ok(())
}

fn grid_label(s: &Samples, feature: usize, v: f64) -> String {
    if s.names()[feature] == "curing_condition" {
        return if v == CuringCondition::Air.code() { "air" } else { "water" }.to_string();
    }
    v.to_string()
}

fn pdp(a: PdpArgs) -> Result<()> {
    let model = Model::load(&a.model)?;
    let data = load(&a.data.input)?;
    let s = data.training_part().to_samples();
    let fa = s.feature_index(&a.feature)?;
    let grid_a = default_grid(&s, fa, a.grid)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    let json_value = match &a.feature2 {
        None => {
            let curve = partial_dependence_1d(&model, &s, fa, &grid_a)?;
            w.write_record([a.feature.as_str(), "partial_dependence"]).map_err(|e| CliError::Data(e.to_string()))?;
            for (g, v) in curve.grid.iter().zip(&curve.values) {
                w.write_record([grid_label(&s, fa, *g), v.to_string()])
                    .map_err(|e| CliError::Data(e.to_string()))?;
            }
            json!({ "feature": curve.feature, "grid": curve.grid, "values": curve.values, "n_records": curve.n_records })
        }
        Some(name) => {
            let fb = s.feature_index(name)?;
            let grid_b = default_grid(&s, fb, a.grid)?;
            let surf = partial_dependence_2d(&model, &s, fa, fb, &grid_a, &grid_b)?;
            w.write_record([a.feature.as_str(), name.as_str(), "partial_dependence"])
                .map_err(|e| CliError::Data(e.to_string()))?;
            for (i, ga) in surf.grid_a.iter().enumerate() {
                for (j, gb) in surf.grid_b.iter().enumerate() {
                    w.write_record([grid_label(&s, fa, *ga), grid_label(&s, fb, *gb), surf.values[i][j].to_string()])
                        .map_err(|e| CliError::Data(e.to_string()))?;
                }
            }
            json!({
                "feature_a": surf.feature_a, "feature_b": surf.feature_b,
                "grid_a": surf.grid_a, "grid_b": surf.grid_b,
                "values": surf.values, "n_records": surf.n_records,
            })
        }
    };
    let bytes = w.into_inner().map_err(|e| CliError::Data(e.to_string()))?;
    if a.data.json {
        if let Some(p) = &a.output {
            emit(Some(p), &bytes)?;
        }
        return print_json(&json_value);
    }
    emit(a.output.as_deref(), &bytes)
}

/// Fixed mix parameters of the sensitivity grids.
const SENS_W_B: f64 = 0.4;
const SENS_BINDER: f64 = 400.0;
const SENS_CA_FA: f64 = 2.0;
const SCM_LEVELS: [f64; 5] = [0.0, 10.0, 20.0, 30.0, 40.0];
const FLY_ASH_DAYS: [u32; 5] = [7, 28, 90, 180, 270];
const GGBS_DAYS: [u32; 4] = [3, 7, 28, 56];

pub fn sensitivity_grid(scm: Scm) -> Vec<MixRecord> {
    let days: &[u32] = match scm {
        Scm::FlyAsh => &FLY_ASH_DAYS,
        Scm::Ggbs => &GGBS_DAYS,
    };
    let mut out = Vec::new();
    for &level in &SCM_LEVELS {
        for &d in days {
            let (fly_ash, ggbs) = match scm {
                Scm::FlyAsh => (level, 0.0),
                Scm::Ggbs => (0.0, level),
            };
            out.push(MixRecord {
                mix_id: format!("{}{}-{}d", if scm == Scm::FlyAsh { "FA" } else { "GGBS" }, level, d),
                w_b: SENS_W_B,
                binder: SENS_BINDER,
                fly_ash,
                ggbs,
                sp: 0.0,
                ca_fa: SENS_CA_FA,
                curing_condition: CuringCondition::Air,
                curing_days: d,
                porosity: 1.0,
                training: None,
            });
        }
    }
    out
}

#[derive(Serialize)]
struct SensitivityRow<'a> {
    mix_id: &'a str,
    w_b: f64,
    binder: f64,
    fly_ash: f64,
    ggbs: f64,
    sp: f64,
    ca_fa: f64,
    curing_condition: &'static str,
    curing_days: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    predicted_porosity: Option<f64>,
}

fn sensitivity(a: SensitivityArgs) -> Result<()> {
    let model = a.model.as_ref().map(Model::load).transpose()?;
    let grid = sensitivity_grid(a.scm);
    let rows: Vec<SensitivityRow> = grid
        .iter()
        .map(|r| SensitivityRow {
            mix_id: &r.mix_id,
            w_b: r.w_b,
            binder: r.binder,
            fly_ash: r.fly_ash,
            ggbs: r.ggbs,
            sp: r.sp,
            ca_fa: r.ca_fa,
            curing_condition: r.curing_condition.as_str(),
            curing_days: r.curing_days,
            predicted_porosity: model.as_ref().map(|m| m.predict_row(&r.features())),
        })
        .collect();
    let bytes = csv_bytes(&rows)?;
    if a.json {
        if let Some(p) = &a.output {
            emit(Some(p), &bytes)?;
        }
        let v = serde_json::to_value(&rows).map_err(|e| CliError::Data(e.to_string()))?;
        return print_json(&v);
    }
    emit(a.output.as_deref(), &bytes)
}

#[derive(Serialize)]
struct ChemoRow {
    id: String,
    cement: f64,
    fly_ash: f64,
    water: f64,
    eps_air: f64,
    branch: GypsumBranch,
    p_max: Option<f64>,
    p_effective: f64,
    /// Percent, like the measured values.
    porosity: f64,
    measured: Option<f64>,
}

fn chemo_inputs(a: &ChemomechArgs) -> Result<Vec<(String, ChemoMixInput, Option<f64>)>> {
    let text = match &a.input {
        Some(p) => fs::read_to_string(p).map_err(|e| CliError::Data(format!("cannot read {}: {e}", p.display())))?,
        None => {
            let mut buf = Vec::new();
            write_csv(&Dataset::embedded(), &mut buf)?;
            String::from_utf8(buf).expect("csv output is utf-8")
        }
    };
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let headers = rdr.headers().map_err(|e| CliError::Data(e.to_string()))?.clone();
    let col = |names: &[&str]| headers.iter().position(|h| names.contains(&h));
    let Some(c_col) = col(&["cement", "C"]) else {
        // A mix table.
        let data = read_csv(text.as_bytes())?;
        let mut out = Vec::new();
        for r in data.records.iter().filter(|r| r.ggbs == 0.0 && r.curing_days >= a.min_days) {
            out.push((r.mix_id.clone(), ChemoMixInput::from_record(r)?, Some(r.porosity)));
        }
        return Ok(out);
    };
    let p_col = col(&["fly_ash", "P"]).ok_or_else(|| CliError::Data("schema error: missing column `fly_ash`".into()))?;
    let w_col = col(&["water", "W"]).ok_or_else(|| CliError::Data("schema error: missing column `water`".into()))?;
    let air_col = col(&["eps_air"]);
    let mut out = Vec::new();
    for (k, row) in rdr.records().enumerate() {
        let row = row.map_err(|e| CliError::Data(e.to_string()))?;
        let line = k + 2;
        let num = |c: usize| -> Result<f64> {
            let raw = row.get(c).unwrap_or("");
            raw.parse()
                .map_err(|_| CliError::Data(format!("line {line}: cannot parse `{raw}` in column `{}`", &headers[c])))
        };
        let mix = ChemoMixInput {
            cement: num(c_col)?,
            fly_ash: num(p_col)?,
            water: num(w_col)?,
            eps_air: match air_col {
                Some(c) if !row.get(c).unwrap_or("").is_empty() => num(c)?,
                _ => 0.0,
            },
        };
        mix.validate().map_err(|e| CliError::Data(format!("line {line}: {e}")))?;
        out.push((format!("row{}", k + 1), mix, None));
    }
    Ok(out)
}

fn chemomech(a: ChemomechArgs) -> Result<()> {
    let comp = match &a.composition {
        Some(p) => Composition::load(p)?,
        None => Composition::reference(),
    };
    comp.validate()?;
    let gamma = comp.gamma();
    let mut rows = Vec::new();
    for (id, mix, measured) in chemo_inputs(&a)? {
        let r = papadakis_porosity(&mix, &comp.cement, &comp.fly_ash, &gamma).map_err(|e| {
            let e = CliError::from(e);
            match e {
                CliError::Numerical(m) => CliError::Numerical(format!("{id}: {m}")),
                other => other,
            }
        })?;
        rows.push(ChemoRow {
            id,
            cement: mix.cement,
            fly_ash: mix.fly_ash,
            water: mix.water,
            eps_air: mix.eps_air,
            branch: r.branch,
            p_max: r.p_max,
            p_effective: r.p_effective,
            porosity: r.porosity * 100.0,
            measured,
        });
    }
    if rows.is_empty() {
        return Err(CliError::Data("no fly-ash or plain cement mixes to evaluate".into()));
    }
    let paired: Vec<(f64, f64)> = rows.iter().filter_map(|r| r.measured.map(|m| (m, r.porosity))).collect();
    let report = if paired.is_empty() {
        None
    } else {
        let (actual, predicted): (Vec<f64>, Vec<f64>) = paired.into_iter().unzip();
        Some(evaluate(&actual, &predicted)?)
    };
    let bytes = csv_bytes(&rows)?;
    if a.json {
        if let Some(p) = &a.output {
            emit(Some(p), &bytes)?;
        }
        let v = serde_json::to_value(&rows).map_err(|e| CliError::Data(e.to_string()))?;
        return print_json(&json!({ "rows": v, "vs_measured": report.as_ref().map(report_json) }));
    }
    emit(a.output.as_deref(), &bytes)?;
    if let (Some(r), Some(_)) = (&report, &a.output) {
        println!("{}", report_line("model", r));
    }
    Ok(())
}
