//! The sweep engine: data generation, prediction and scoring over a grid of
//! training sizes, dimensions, model lengthscales and seeds.

use std::collections::{BTreeMap, HashMap};
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use crate::bounds::{self, RateConstants};
use crate::error::{Error, Result};
use crate::harness::config::{classify, Estimator, ExperimentConfig, RegimeClass};
use crate::kernels::KernelSpec;
use crate::metrics::{self, Averaging, RateFit, TrialRecord};
use crate::neighbours::{rank_by, Dataset, KdTree, NeighbourSet};
use crate::predictor::{expected_squared_error, gpnn_predict, knn_predict};
use crate::rng::{self, derive_seed};
use crate::simulate::{self, FieldSampleConfig};

/// Label used for the neighbour-average baseline in `kernel_model`.
pub const KNN_LABEL: &str = "knn";

/// A cell that could not be evaluated.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellFailure {
    pub n: usize,
    pub d: usize,
    pub l_hat: f64,
    pub kernel_gen: String,
    pub kernel_model: String,
    pub seed: u64,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitRow {
    pub d: usize,
    pub l_hat: f64,
    pub kernel_gen: String,
    pub kernel_model: String,
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub floor_used: f64,
    pub points: usize,
    pub reference_slope: f64,
    pub status: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundRow {
    pub d: usize,
    pub l_hat: f64,
    pub kernel_gen: String,
    pub kernel_model: String,
    pub n: usize,
    pub m: usize,
    pub c_gen: f64,
    pub p_gen: f64,
    pub c_model: f64,
    pub p_model: f64,
    pub floor: f64,
    pub mse_bound: f64,
    pub cal_lower: f64,
    pub cal_upper: f64,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct SweepResult {
    pub records: Vec<TrialRecord>,
    pub failures: Vec<CellFailure>,
    pub fits: Vec<FitRow>,
    pub bounds: Vec<BoundRow>,
    /// Non-fatal remarks, e.g. bounds that could not be evaluated.
    pub notes: Vec<String>,
    pub requested_cells: usize,
}

/// The cell-level seed used for data generation.
pub fn data_seed(seed: u64, d: usize) -> u64 {
    derive_seed(seed, &[d as u64])
}

/// Training rows (first `n_max`) and test rows for one `(seed, d)` pair.
pub struct Draw {
    pub pool: Dataset,
    pub test: Dataset,
}

pub fn generate(cfg: &ExperimentConfig, d: usize, seed: u64) -> Result<Draw> {
    let n_max = *cfg.n_grid.last().expect("validated non-empty grid");
    let s = data_seed(seed, d);
    match cfg.estimator {
        Estimator::Empirical => {
            let sim = simulate::simulate(&FieldSampleConfig {
                kernel: cfg.generative,
                n_train: n_max,
                n_test: cfg.n_test,
                d,
                sampling_mode: cfg.sampling_mode,
                noise_family: cfg.noise_family,
                seed: s,
            })?;
            Ok(Draw {
                pool: sim.train,
                test: sim.test,
            })
        }
        Estimator::Expected => {
            let x = simulate::sample_inputs(n_max + cfg.n_test, d, &mut rng::rng_from(s, &[0]));
            let split = n_max * d;
            Ok(Draw {
                pool: Dataset::new(x[..split].to_vec(), vec![0.0; n_max], d)?,
                test: Dataset::new(x[split..].to_vec(), vec![0.0; cfg.n_test], d)?,
            })
        }
    }
}

fn neighbour_sets(train: &Dataset, test: &Dataset, m: usize) -> Result<Vec<NeighbourSet>> {
    let tree = KdTree::build(train)?;
    (0..test.len())
        .into_par_iter()
        .map(|t| tree.query(test.row(t), m))
        .collect()
}

enum Scorer<'a> {
    Gpnn(&'a KernelSpec),
    Knn(&'a KernelSpec),
}

fn score(
    cfg: &ExperimentConfig,
    scorer: Scorer<'_>,
    train: &Dataset,
    test: &Dataset,
    sets: &[NeighbourSet],
    m: usize,
) -> Result<metrics::Metrics> {
    let per_point: Vec<Result<(f64, f64)>> = (0..test.len())
        .into_par_iter()
        .map(|t| {
            let x = test.row(t);
            let owned;
            let set = match scorer {
                Scorer::Gpnn(model) if !model.family().is_monotone() => {
                    let model = *model;
                    owned = rank_by(train, x, m, |a, b| {
                        model.rho2(a, b).unwrap_or(f64::INFINITY)
                    })?;
                    &owned
                }
                _ => &sets[t],
            };
            let rows: Vec<&[f64]> = set.indices.iter().map(|&i| train.row(i)).collect();
            let targets: Vec<f64> = set.indices.iter().map(|&i| train.targets()[i]).collect();
            match (scorer_kind(&scorer), cfg.estimator) {
                (Some(model), Estimator::Empirical) => {
                    let p = gpnn_predict(model, &rows, &targets, x)?;
                    Ok(((test.targets()[t] - p.mean).powi(2), p.variance))
                }
                (Some(model), Estimator::Expected) => {
                    let (p, err) = expected_squared_error(&cfg.generative, model, &rows, x)?;
                    Ok((err, p.variance))
                }
                (None, Estimator::Empirical) => {
                    let model = knn_model(&scorer);
                    let p = knn_predict(model, &targets)?;
                    Ok(((test.targets()[t] - p.mean).powi(2), p.variance))
                }
                (None, Estimator::Expected) => {
                    let model = knn_model(&scorer);
                    let p = knn_predict(model, &targets)?;
                    let w = 1.0 / m as f64;
                    let gen = cfg.generative;
                    let mut err = gen.params().total_variance();
                    for (a, ra) in rows.iter().enumerate() {
                        err -= 2.0 * w * gen.signal_covariance(crate::kernels::distance(ra, x)?);
                        for (b, rb) in rows.iter().enumerate() {
                            let k = if a == b {
                                gen.params().total_variance()
                            } else {
                                gen.signal_covariance(crate::kernels::distance(ra, rb)?)
                            };
                            err += w * w * k;
                        }
                    }
                    Ok((err.max(0.0), p.variance))
                }
            }
        })
        .collect();
    let mut sq = Vec::with_capacity(per_point.len());
    let mut var = Vec::with_capacity(per_point.len());
    for r in per_point {
        let (e, v) = r?;
        sq.push(e);
        var.push(v);
    }
    metrics::evaluate_squared_errors(&sq, &var, cfg.nll_form)
}

fn scorer_kind<'a>(s: &Scorer<'a>) -> Option<&'a KernelSpec> {
    match s {
        Scorer::Gpnn(k) => Some(k),
        Scorer::Knn(_) => None,
    }
}

fn knn_model<'a>(s: &Scorer<'a>) -> &'a KernelSpec {
    match s {
        Scorer::Gpnn(k) | Scorer::Knn(k) => k,
    }
}

/// Exponent used for m schedules and reference slopes.
fn exponent(kernel: &KernelSpec) -> Option<f64> {
    kernel.metric_bound().ok().map(|b| b.exponent)
}

struct Group {
    d: usize,
    seed: u64,
}

/// Runs every cell of the configured grid.
pub fn run_sweep(cfg: &ExperimentConfig) -> Result<SweepResult> {
    cfg.validate()?;
    let models = cfg.models()?;
    let gen = cfg.generative;
    let gen_label = gen.label();
    let p_gen = exponent(&gen);
    if matches!(cfg.m, crate::harness::config::MSpec::Rate { .. }) && p_gen.is_none() {
        return Err(Error::Config(
            "an m schedule needs a generative kernel with a metric bound".into(),
        ));
    }
    let m_for = |n: usize, d: usize| cfg.m.resolve(n, p_gen.unwrap_or(2.0), d);

    let groups: Vec<Group> = cfg
        .d_list
        .iter()
        .flat_map(|&d| cfg.seeds.iter().map(move |&seed| Group { d, seed }))
        .collect();
    let per_model = cfg.n_grid.len();
    let cells_per_group = per_model * (models.len() + usize::from(cfg.include_knn));

    let outcomes: Vec<(Vec<TrialRecord>, Vec<CellFailure>)> = groups
        .par_iter()
        .map(|g| {
            let mut records = Vec::new();
            let mut failures = Vec::new();
            let fail_all = |failures: &mut Vec<CellFailure>,
                            n: usize,
                            l_hat: f64,
                            model: String,
                            err: &Error| {
                failures.push(CellFailure {
                    n,
                    d: g.d,
                    l_hat,
                    kernel_gen: gen_label.clone(),
                    kernel_model: model,
                    seed: g.seed,
                    error: err.to_string(),
                });
            };
            let draw = match generate(cfg, g.d, g.seed) {
                Ok(draw) => draw,
                Err(e) => {
                    for &n in &cfg.n_grid {
                        for model in &models {
                            fail_all(
                                &mut failures,
                                n,
                                model.params().lengthscale,
                                model.label(),
                                &e,
                            );
                        }
                        if cfg.include_knn {
                            fail_all(&mut failures, n, 0.0, KNN_LABEL.into(), &e);
                        }
                    }
                    return (records, failures);
                }
            };
            for &n in &cfg.n_grid {
                let m = m_for(n, g.d);
                let train = draw.pool.prefix(n);
                let start = Instant::now();
                let sets = neighbour_sets(&train, &draw.test, m);
                let search_time = start.elapsed().as_secs_f64();
                let mut push = |scorer: Scorer<'_>, l_hat: f64, label: String| {
                    let start = Instant::now();
                    let result = sets
                        .as_ref()
                        .map_err(|e| Error::Solver(e.to_string()))
                        .and_then(|sets| score(cfg, scorer, &train, &draw.test, sets, m));
                    match result {
                        Ok(metrics) => records.push(TrialRecord {
                            n,
                            d: g.d,
                            m,
                            l_hat,
                            kernel_gen: gen_label.clone(),
                            kernel_model: label,
                            seed: g.seed,
                            mse: metrics.mse,
                            cal: metrics.cal,
                            nll: metrics.nll,
                            wall_time_s: if cfg.record_timing {
                                search_time + start.elapsed().as_secs_f64()
                            } else {
                                0.0
                            },
                        }),
                        Err(e) => fail_all(&mut failures, n, l_hat, label, &e),
                    }
                };
                for model in &models {
                    push(
                        Scorer::Gpnn(model),
                        model.params().lengthscale,
                        model.label(),
                    );
                }
                if cfg.include_knn {
                    push(Scorer::Knn(&models[0]), 0.0, KNN_LABEL.into());
                }
            }
            (records, failures)
        })
        .collect();

    let mut result = SweepResult {
        requested_cells: groups.len() * cells_per_group,
        ..Default::default()
    };
    for (r, f) in outcomes {
        result.records.extend(r);
        result.failures.extend(f);
    }
    sort_records(&mut result.records);
    result.failures.sort_by(|a, b| {
        (a.d, &a.kernel_model, a.seed, a.n)
            .cmp(&(b.d, &b.kernel_model, b.seed, b.n))
            .then(a.l_hat.total_cmp(&b.l_hat))
    });

    if cfg.bounds.enabled {
        compute_bounds(cfg, &models, &m_for, &mut result);
    }
    result.fits = compute_fits(cfg, &models, &result.records);
    Ok(result)
}

pub fn sort_records(records: &mut [TrialRecord]) {
    records.sort_by(|a, b| {
        a.d.cmp(&b.d)
            .then_with(|| a.kernel_model.cmp(&b.kernel_model))
            .then(a.l_hat.total_cmp(&b.l_hat))
            .then(a.seed.cmp(&b.seed))
            .then(a.n.cmp(&b.n))
    });
}

/// Grid used to estimate `C`: the sweep grid, widened to span a decade.
pub fn estimation_grid(n_grid: &[usize], m: usize) -> Vec<usize> {
    let lo = n_grid[0];
    let hi = *n_grid.last().expect("non-empty grid");
    let mut grid: Vec<usize> = n_grid.iter().copied().filter(|&n| n >= m).collect();
    if grid.is_empty() || (hi as f64) < 10.0 * lo as f64 {
        let below = hi / 10;
        if below >= m && below < lo {
            grid.insert(0, below);
        } else {
            grid.push(10 * lo.max(m));
        }
    }
    grid
}

type CKey = (String, u64, usize, usize);

fn kernel_key(k: &KernelSpec) -> String {
    serde_json::to_string(k).unwrap_or_default()
}

fn compute_bounds(
    cfg: &ExperimentConfig,
    models: &[KernelSpec],
    m_for: &dyn Fn(usize, usize) -> usize,
    result: &mut SweepResult,
) {
    let gen = cfg.generative;
    let mut cache: HashMap<CKey, std::result::Result<RateConstants, String>> = HashMap::new();
    let mut constant = |kernel: &KernelSpec, d: usize, m: usize, over: Option<f64>| {
        let key = (kernel_key(kernel), over.map_or(0, f64::to_bits), d, m);
        cache
            .entry(key)
            .or_insert_with(|| {
                let est = match over {
                    Some(c) => kernel
                        .metric_bound()
                        .and_then(|b| RateConstants::new(c, b.exponent, d, m)),
                    None => bounds::estimate_c(
                        kernel,
                        d,
                        m,
                        &estimation_grid(&cfg.n_grid, m),
                        cfg.bounds.trials,
                        derive_seed(cfg.bounds.seed, &[d as u64, m as u64]),
                    ),
                };
                est.map_err(|e| e.to_string())
            })
            .clone()
    };
    for &d in &cfg.d_list {
        for model in models {
            let misspecified = classify(&gen, model) != RegimeClass::WellSpecified;
            for &n in &cfg.n_grid {
                let m = m_for(n, d);
                let rc_gen = match constant(&gen, d, m, cfg.bounds.c_gen) {
                    Ok(rc) => rc,
                    Err(e) => {
                        note(
                            result,
                            format!("d={d} n={n}: generative constant unavailable: {e}"),
                        );
                        continue;
                    }
                };
                let rc_model = if misspecified {
                    match constant(model, d, m, cfg.bounds.c_model) {
                        Ok(rc) => rc,
                        Err(e) => {
                            note(
                                result,
                                format!(
                                    "d={d} n={n} model {}: constant unavailable: {e}",
                                    model.label()
                                ),
                            );
                            continue;
                        }
                    }
                } else {
                    rc_gen
                };
                if !rc_gen.dimension_exceeds_exponent() {
                    note(
                        result,
                        format!(
                            "d={d}: dimension does not exceed the rate exponent {}",
                            rc_gen.p
                        ),
                    );
                }
                let (g, mp) = (gen.params(), model.params());
                let nf = n as f64;
                let row = if misspecified {
                    bounds::mse_bound_misspec(&rc_gen, &rc_model, &g, &mp, nf)
                } else {
                    bounds::mse_bound_wellspec(&rc_gen, &g, nf)
                }
                .and_then(|mse| {
                    let (lo, hi) = bounds::cal_bounds(&rc_gen, &rc_model, &g, &mp, nf)?;
                    Ok(BoundRow {
                        d,
                        l_hat: mp.lengthscale,
                        kernel_gen: gen.label(),
                        kernel_model: model.label(),
                        n,
                        m,
                        c_gen: rc_gen.c,
                        p_gen: rc_gen.p,
                        c_model: rc_model.c,
                        p_model: rc_model.p,
                        floor: bounds::mse_floor(&g, m),
                        mse_bound: mse,
                        cal_lower: lo,
                        cal_upper: hi,
                    })
                });
                match row {
                    Ok(r) => result.bounds.push(r),
                    Err(e) => note(result, format!("d={d} n={n}: bound not evaluated: {e}")),
                }
            }
        }
    }
}

fn note(result: &mut SweepResult, text: String) {
    if !result.notes.contains(&text) {
        result.notes.push(text);
    }
}

/// Rate fit with a per-record floor (needed when m varies with n).
pub fn fit_with_floors(
    records: &[TrialRecord],
    floor: &dyn Fn(&TrialRecord) -> f64,
    averaging: Averaging,
) -> Result<RateFit> {
    let shifted: Vec<TrialRecord> = records
        .iter()
        .map(|r| TrialRecord {
            mse: r.mse - floor(r),
            ..r.clone()
        })
        .collect();
    let mut fit = metrics::fit_rate(&shifted, 0.0, averaging)?;
    let floors: Vec<f64> = records.iter().map(floor).collect();
    fit.floor_used = floors.iter().sum::<f64>() / floors.len() as f64;
    Ok(fit)
}

fn compute_fits(
    cfg: &ExperimentConfig,
    models: &[KernelSpec],
    records: &[TrialRecord],
) -> Vec<FitRow> {
    let gen = cfg.generative;
    let p_gen = exponent(&gen);
    let mut groups: BTreeMap<(usize, String, u64), Vec<TrialRecord>> = BTreeMap::new();
    for r in records {
        groups
            .entry((r.d, r.kernel_model.clone(), r.l_hat.to_bits()))
            .or_default()
            .push(r.clone());
    }
    let mut fits = Vec::new();
    for ((d, label, l_bits), rs) in groups {
        let l_hat = f64::from_bits(l_bits);
        let model = models
            .iter()
            .find(|k| k.label() == label && k.params().lengthscale == l_hat);
        let p_model = model.and_then(exponent);
        let reference = match (p_gen, p_model) {
            (Some(a), Some(b)) => -a.min(b) / d as f64,
            (Some(a), None) => -a / d as f64,
            _ => f64::NAN,
        };
        let noise = gen.params();
        // each record carries the m it was scored with
        let fit = if rs.iter().all(|r| r.m == rs[0].m) {
            metrics::fit_rate(&rs, bounds::mse_floor(&noise, rs[0].m), cfg.averaging)
        } else {
            fit_with_floors(&rs, &|r| bounds::mse_floor(&noise, r.m), cfg.averaging)
        };
        let (slope, intercept, r_squared, floor_used, points, status) = match fit {
            Ok(f) => (
                f.slope,
                f.intercept,
                f.r_squared,
                f.floor_used,
                f.points,
                "ok".to_string(),
            ),
            Err(e) => (f64::NAN, f64::NAN, f64::NAN, f64::NAN, 0, e.to_string()),
        };
        fits.push(FitRow {
            d,
            l_hat,
            kernel_gen: gen.label(),
            kernel_model: label,
            slope,
            intercept,
            r_squared,
            floor_used,
            points,
            reference_slope: reference,
            status,
        });
    }
    fits
}

/// Rate fits recomputed from stored records. The configuration supplies the
/// noise variance, averaging and model kernels; m is read from each record.
pub fn refit(cfg: &ExperimentConfig, records: &[TrialRecord]) -> Result<Vec<FitRow>> {
    cfg.validate()?;
    if records.is_empty() {
        return Err(Error::EmptyInput("records"));
    }
    Ok(compute_fits(cfg, &cfg.models()?, records))
}

/// Seed-averaged value of a metric at each `n` for one `(d, model, l̂)` cell.
pub fn seed_average(
    records: &[TrialRecord],
    d: usize,
    kernel_model: &str,
    l_hat: f64,
    metric: impl Fn(&TrialRecord) -> f64,
) -> Vec<(usize, f64)> {
    let mut by_n: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
    for r in records
        .iter()
        .filter(|r| r.d == d && r.kernel_model == kernel_model && r.l_hat == l_hat)
    {
        let e = by_n.entry(r.n).or_insert((0.0, 0));
        e.0 += metric(r);
        e.1 += 1;
    }
    by_n.into_iter()
        .map(|(n, (s, c))| (n, s / c as f64))
        .collect()
}
