//! Acceptance report: one PASS, FAIL or SKIP line per criterion.
//!
//! ML-100K is read from `$DIFFREC_ML100K`, else `data/ml-100k/u.data` at the
//! workspace root. Criteria that need it are skipped when it is absent. The
//! binary always exits 0 so that a failing criterion is reported rather
//! than aborting the test run.

mod common;

use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::Instant;

use common::oracle::check_all;
use common::{dataset, fix4_dense, random_dense, synthetic_tsv};
use diffrec::corpus::kfold_split;
use diffrec::harness::{
    analyze_corpus, load_dataset, run_experiment, sweep_knn, sweep_list_length, sweep_theta,
    MetricRow,
};
use diffrec::recommend::{md_trace, pimra_trace, RaConfig};
use diffrec::simkit::{cosine_matrix, pcc_matrix, similarity, top_k_neighbors};
use diffrec::{
    dataset_stats, Axis, BipartiteGraph, EvaluationReport, ExperimentConfig, Measure, Method,
    PenaltyVariant, SimilarityMatrix, Step3Weight,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

enum Outcome {
    Pass(String),
    Fail(String),
    Skip(String),
}

struct Checks {
    failed: Vec<String>,
    notes: Vec<String>,
}

impl Checks {
    fn new() -> Self {
        Checks { failed: Vec::new(), notes: Vec::new() }
    }

    fn require(&mut self, ok: bool, what: impl Into<String>) {
        let what = what.into();
        if ok {
            self.notes.push(what);
        } else {
            self.failed.push(what);
        }
    }

    fn outcome(self) -> Outcome {
        if self.failed.is_empty() {
            Outcome::Pass(self.notes.join("; "))
        } else {
            let mut detail = format!("failed: {}", self.failed.join("; "));
            if !self.notes.is_empty() {
                detail.push_str(&format!(" | held: {}", self.notes.join("; ")));
            }
            Outcome::Fail(detail)
        }
    }
}

fn ml100k_path() -> Option<PathBuf> {
    let path = std::env::var("DIFFREC_ML100K")
        .map(PathBuf::from)
        .unwrap_or_else(|_| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/ml-100k/u.data"));
    path.exists().then_some(path)
}

fn ml100k_config(path: &Path) -> ExperimentConfig {
    ExperimentConfig {
        input: Some(path.to_path_buf()),
        dataset: Some("ml-100k".into()),
        ..ExperimentConfig::default()
    }
}

fn means<'a>(report: &'a EvaluationReport, method: &str, metric: &str) -> Vec<&'a MetricRow> {
    report
        .rows
        .iter()
        .filter(|r| r.fold.is_none() && r.method == method && r.metric == metric)
        .collect()
}

fn mean_of(report: &EvaluationReport, method: &str, metric: &str) -> f64 {
    means(report, method, metric)
        .first()
        .and_then(|r| r.value)
        .unwrap_or(f64::NAN)
}

fn fmt_series(values: &[f64]) -> String {
    values.iter().map(|v| format!("{v:.4}")).collect::<Vec<_>>().join(" ")
}

fn non_decreasing(values: &[f64]) -> bool {
    values.windows(2).all(|w| w[1] >= w[0] - 1e-12)
}

fn criterion_1() -> Outcome {
    let g = BipartiteGraph::new(&dataset(&fix4_dense())).unwrap();
    let cs = cosine_matrix(&g, Axis::Users);
    let pcc = pcc_matrix(&g, Axis::Users);
    let mut c = Checks::new();
    let (u1, u2, u3, u4) = (0, 1, 2, 3);
    for (name, m, want) in [("CS", &cs, [0.956, 0.131, 0.374]), ("PCC", &pcc, [0.786, 1.0, -1.0])] {
        let got: Vec<f64> = [u1, u2, u4].iter().map(|&o| m.raw(u3, o)).collect();
        let ok = got.iter().zip(want).all(|(g, w)| (g - w).abs() <= 1e-3);
        c.require(ok, format!("{name}(u3,u1/u2/u4) = {}", fmt_series(&got)));
    }
    let rank = |m: &SimilarityMatrix| top_k_neighbors(m, u3, 3).into_iter().map(|p| p.0).collect::<Vec<_>>();
    c.require(rank(&cs) == vec![u1, u4, u2], "CS ranking u1,u4,u2");
    c.require(rank(&pcc) == vec![u2, u1, u4], "PCC ranking u2,u1,u4");
    c.outcome()
}

fn criterion_2(ml: Option<&Path>) -> Outcome {
    let Some(path) = ml else {
        return Outcome::Skip("ML-100K not found; Netflix/Eachmovie archives not supplied".into());
    };
    let ds = load_dataset(&ml100k_config(path)).unwrap();
    let stats = dataset_stats(&ds).to_string();
    if stats == "943,1682,100000,0.9370" {
        Outcome::Pass(format!(
            "ML-100K {stats}; Netflix/Eachmovie archives not supplied, synthetic filter property tests substitute"
        ))
    } else {
        Outcome::Fail(format!("ML-100K stats {stats}"))
    }
}

fn criterion_3(ml: Option<&Path>) -> Outcome {
    let Some(path) = ml else {
        return Outcome::Skip("ML-100K not found".into());
    };
    let report = sweep_knn(&ml100k_config(path)).unwrap();
    let best = |mode: &str, measure: &str| {
        report
            .rows
            .iter()
            .filter(|r| r.fold.is_none() && r.method.starts_with(&format!("{mode}-{measure}(")))
            .filter_map(|r| r.value.map(|v| (v, r.method.clone())))
            .fold((f64::INFINITY, String::new()), |a, b| if b.0 < a.0 { b } else { a })
    };
    let mut c = Checks::new();
    for (mode, needed) in [("UBCF", 0.01), ("IBCF", 0.05)] {
        let (pim, pim_at) = best(mode, "PIM");
        let (pcc, _) = best(mode, "PCC");
        let (cs, _) = best(mode, "CS");
        let gain = (pcc - pim) / pcc;
        c.require(
            pim <= pcc && pim <= cs,
            format!("{mode} best NRMSE PIM {pim:.4} ({pim_at}) vs PCC {pcc:.4}, CS {cs:.4}"),
        );
        c.require(
            gain >= needed,
            format!("{mode} gain over PCC {:.2}% (need {:.0}%)", gain * 100.0, needed * 100.0),
        );
    }
    c.outcome()
}

fn criterion_4(ml: Option<&Path>) -> Outcome {
    let Some(path) = ml else {
        return Outcome::Skip("ML-100K not found".into());
    };
    let report = run_experiment(&ml100k_config(path)).unwrap();
    let get = |m: Method, metric: &str| mean_of(&report, m.label(), metric);
    let mut c = Checks::new();
    let pim_ars = get(Method::PimRa, "ARS");
    for other in [Method::Md, Method::Ubcf, Method::Ibcf, Method::Svd] {
        let v = get(other, "ARS");
        c.require(pim_ars > v, format!("ARS PIM+RA {pim_ars:.4} > {other} {v:.4}"));
    }
    let pim_nov = get(Method::PimRa, "Novelty");
    let top_nov = Method::ALL
        .iter()
        .map(|&m| (get(m, "Novelty"), m))
        .fold((f64::NEG_INFINITY, Method::PimRa), |a, b| if b.0 > a.0 { b } else { a });
    c.require(top_nov.1 == Method::PimRa, format!("Novelty PIM+RA {pim_nov:.4}, highest {} {:.4}", top_nov.1, top_nov.0));
    let gini = |m| get(m, "Gini");
    let pim_gini = gini(Method::PimRa);
    let ordered = gini(Method::Ibcf) > pim_gini
        && [Method::Ubcf, Method::Svd, Method::Md].iter().all(|&m| pim_gini > gini(m));
    c.require(
        ordered,
        format!(
            "Gini IBCF {:.4} > PIM+RA {pim_gini:.4} > UBCF {:.4}, SVD {:.4}, MD {:.4}",
            gini(Method::Ibcf),
            gini(Method::Ubcf),
            gini(Method::Svd),
            gini(Method::Md)
        ),
    );
    let md_ars = get(Method::Md, "ARS");
    c.require((pim_ars - 0.9389).abs() <= 0.2 * 0.9389, format!("PIM+RA ARS {pim_ars:.4} within 20% of 0.9389"));
    c.require((md_ars - 0.8588).abs() <= 0.2 * 0.8588, format!("MD ARS {md_ars:.4} within 20% of 0.8588"));
    c.outcome()
}

fn criterion_5(ml: Option<&Path>) -> Outcome {
    let Some(path) = ml else {
        return Outcome::Skip("ML-100K not found".into());
    };
    let report = sweep_theta(&ml100k_config(path)).unwrap();
    let series = |metric: &str| {
        let mut rows: Vec<(f64, f64)> = means(&report, "PIM+RA", metric)
            .into_iter()
            .filter_map(|r| Some((r.theta?, r.value?)))
            .collect();
        rows.sort_by(|a, b| a.0.total_cmp(&b.0));
        rows.into_iter().map(|p| p.1).collect::<Vec<f64>>()
    };
    let mut c = Checks::new();
    let pop = series("AvgPop");
    c.require(
        pop.len() == 11 && pop.windows(2).all(|w| w[1] < w[0]),
        format!("AvgPop strictly decreasing: {}", fmt_series(&pop)),
    );
    for metric in ["Gini", "IUD", "Novelty"] {
        let s = series(metric);
        c.require(non_decreasing(&s), format!("{metric} non-decreasing: {}", fmt_series(&s)));
    }
    let ars = series("ARS");
    if ars.len() == 11 {
        c.require(ars[5] > ars[0], format!("ARS(0.5) {:.4} > ARS(0) {:.4}", ars[5], ars[0]));
        c.require(ars[10] < ars[5], format!("ARS(1) {:.4} < ARS(0.5) {:.4}", ars[10], ars[5]));
    } else {
        c.require(false, format!("expected 11 ARS values, got {}", ars.len()));
    }
    c.outcome()
}

fn criterion_6(ml: Option<&Path>) -> Outcome {
    let Some(path) = ml else {
        return Outcome::Skip("ML-100K not found".into());
    };
    let report = sweep_list_length(&ml100k_config(path)).unwrap();
    let series = |method: &str, metric: &str| {
        let mut rows: Vec<(usize, f64)> = means(&report, method, metric)
            .into_iter()
            .filter_map(|r| Some((r.list_len?, r.value?)))
            .collect();
        rows.sort_by_key(|p| p.0);
        rows.into_iter().map(|p| p.1).collect::<Vec<f64>>()
    };
    let mut c = Checks::new();
    for m in Method::ALL {
        let s = series(m.label(), "Gini");
        c.require(non_decreasing(&s), format!("{m} Gini non-decreasing: {}", fmt_series(&s)));
    }
    let id = series("PIM+RA", "ID");
    c.require(non_decreasing(&id), format!("PIM+RA ID non-decreasing: {}", fmt_series(&id)));
    c.outcome()
}

fn criterion_7() -> Outcome {
    let mut c = Checks::new();

    let mut graphs = Vec::new();
    for seed in 0..50 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = random_dense(&mut rng, 6, 6, 0.55);
        check_all(&d);
        graphs.push(BipartiteGraph::new(&dataset(&d)).unwrap());
    }
    c.require(true, "matrix vs scalar oracle on 50 random 6x6");

    let mut worst_mass: f64 = 0.0;
    for g in &graphs {
        for u in 0..g.n_users() as u32 {
            let t = md_trace(g, u).unwrap();
            let deg = g.user_degree(u) as f64;
            worst_mass = worst_mass.max((t.item_resource.iter().sum::<f64>() - deg).abs());
        }
    }
    c.require(worst_mass < 1e-9, format!("MD mass drift {worst_mass:.1e}"));

    let mut symmetric = true;
    let mut bounded = true;
    for g in &graphs {
        for measure in [Measure::Cosine, Measure::Pearson, Measure::Pim] {
            let Ok(m) = similarity(g, Axis::Users, measure, PenaltyVariant::PairMax) else { continue };
            for a in 0..m.len() as u32 {
                for b in 0..m.len() as u32 {
                    symmetric &= m.value(a, b) == m.value(b, a);
                    bounded &= (0.0..=1.0).contains(&m.value(a, b));
                }
            }
        }
    }
    c.require(symmetric && bounded, "similarity symmetric and in [0,1]");

    let ds = dataset(&random_dense(&mut ChaCha8Rng::seed_from_u64(99), 12, 10, 0.5));
    let folds = kfold_split(&ds, 5, 1).unwrap();
    let total: usize = folds.iter().map(|f| f.test.len()).sum();
    let disjoint = folds.iter().all(|f| f.train.len() + f.test.len() == ds.len());
    c.require(total == ds.len() && disjoint, "kfold partition covers each rating once");

    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("synth.data");
    fs::write(&input, synthetic_tsv(40, 30, 7)).unwrap();
    let mut cfg = ExperimentConfig {
        input: Some(input),
        folds: 3,
        list_len: 5,
        ..ExperimentConfig::default()
    };
    cfg.mf.epochs = 5;
    let a = run_experiment(&cfg).unwrap();
    let b = run_experiment(&cfg).unwrap();
    c.require(a.to_csv_string() == b.to_csv_string(), "two runs give identical CSV bytes");
    let in_unit = a
        .rows
        .iter()
        .filter(|r| ["Gini", "ID", "IUD", "Novelty"].contains(&r.metric.as_str()))
        .filter_map(|r| r.value)
        .all(|v| (0.0..=1.0).contains(&v));
    let ars_positive = a.rows.iter().filter(|r| r.metric == "ARS").filter_map(|r| r.value).all(|v| v > 0.0);
    c.require(in_unit && ars_positive, "metric bounds");

    let n = 4;
    let half: Vec<f64> = (0..n * n).map(|k| if k / n == k % n { 1.0 } else { 0.5 }).collect();
    let g = BipartiteGraph::new(&dataset(&fix4_dense()))
        .unwrap()
        .attach_similarity(SimilarityMatrix::from_normalized(Axis::Items, n, half).unwrap())
        .unwrap();
    let cfg = RaConfig::new(0.0, Step3Weight::Literal).unwrap();
    let got = pimra_trace(&g, 0, &cfg).unwrap().scores[1];
    c.require((got - 0.088_482_615).abs() < 1e-9, format!("PIM+RA FIX4 u1->i2 {got:.9}"));
    c.outcome()
}

fn criterion_8(ml: Option<&Path>) -> Outcome {
    let Some(path) = ml else {
        return Outcome::Skip("ML-100K not found".into());
    };
    let cfg = ml100k_config(path);
    let ds = load_dataset(&cfg).unwrap();
    let a = analyze_corpus(&ds, &cfg).unwrap();
    let mut c = Checks::new();
    c.require(a.cri_skewness > 0.0, format!("CRI-ratio skewness {:.4}", a.cri_skewness));
    let fit = a.popularity_fit;
    c.require(
        fit.slope > 0.0 && fit.p_value < 0.05,
        format!("popularity vs mean rating slope {:.4}, p {:.2e}", fit.slope, fit.p_value),
    );
    c.outcome()
}

type Criterion<'a> = Box<dyn Fn() -> Outcome + 'a>;

fn main() {
    let ml = ml100k_path();
    let criteria: [(&str, Criterion); 8] = [
        ("FIX4 similarity oracle", Box::new(criterion_1)),
        ("corpus statistics", Box::new(|| criterion_2(ml.as_deref()))),
        ("PIM rating-prediction gain", Box::new(|| criterion_3(ml.as_deref()))),
        ("method comparison", Box::new(|| criterion_4(ml.as_deref()))),
        ("theta trends", Box::new(|| criterion_5(ml.as_deref()))),
        ("list-length trends", Box::new(|| criterion_6(ml.as_deref()))),
        ("property suites", Box::new(criterion_7)),
        ("corpus analyses", Box::new(|| criterion_8(ml.as_deref()))),
    ];
    for (n, (name, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = panic::catch_unwind(AssertUnwindSafe(run))
            .unwrap_or_else(|e| {
                let msg = e
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_default();
                Outcome::Fail(format!("panicked: {msg}"))
            });
        let secs = start.elapsed().as_secs_f64();
        let (tag, detail) = match outcome {
            Outcome::Pass(d) => ("PASS", d),
            Outcome::Fail(d) => ("FAIL", d),
            Outcome::Skip(d) => ("SKIP", d),
        };
        println!("criterion {}: {tag} [{name}, {secs:.1}s] {detail}", n + 1);
    }
}
