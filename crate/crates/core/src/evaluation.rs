//! Correlation study over a generated dataset: ground-truth property
//! differences against the disentangled measures and against plain MSE.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use crate::alignment::Correspondences;
use crate::imaging::{read_image, read_mask};
use crate::pipeline::{explain_pair, DifferenceReport, PairInput, PipelineConfig};
use crate::synthscene::{DatasetManifest, GroundTruthDifference, ManifestEntry};
use crate::{Error, Result};

/// Fraction of failed pairs above which a run is marked invalid.
pub const MAX_FAILURE_RATE: f64 = 0.10;

/// Sample Pearson correlation.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::UndefinedCorrelation(format!(
            "need two equal-length series of at least 2 values, got {} and {}",
            x.len(),
            y.len()
        )));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if !(sxx > 0.0) || !(syy > 0.0) {
        return Err(Error::UndefinedCorrelation("constant series".into()));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Min-max scaling onto `[0, 1]`.
pub fn standardize_unit(series: &[f64]) -> Result<Vec<f64>> {
    let lo = series.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = series.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return Err(Error::DegenerateRange);
    }
    Ok(series.iter().map(|v| (v - lo) / (hi - lo)).collect())
}

/// Ground-truth dimensions, in table order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Dimension {
    D,
    Sx,
    Sy,
    Theta,
    Tx,
    Ty,
    A,
}

impl Dimension {
    pub const ALL: [Dimension; 7] = [
        Dimension::D,
        Dimension::Sx,
        Dimension::Sy,
        Dimension::Theta,
        Dimension::Tx,
        Dimension::Ty,
        Dimension::A,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Dimension::D => "d",
            Dimension::Sx => "sx",
            Dimension::Sy => "sy",
            Dimension::Theta => "theta",
            Dimension::Tx => "tx",
            Dimension::Ty => "ty",
            Dimension::A => "a",
        }
    }

    fn label(self) -> &'static str {
        match self {
            Dimension::Theta => "θ",
            other => other.name(),
        }
    }

    /// Rotation and translation differences carry a sign.
    pub fn is_signed(self) -> bool {
        matches!(self, Dimension::Theta | Dimension::Tx | Dimension::Ty)
    }

    /// `(gt, measure)` under the primary pairing: signed for rotation and
    /// translation, `|log|` of the ratio for scale, raw otherwise.
    pub fn primary(self, gt: &GroundTruthDifference, r: &DifferenceReport) -> (f64, f64) {
        let m = &r.measures;
        match self {
            Dimension::D => (gt.d, m.d_hat),
            Dimension::Sx => (gt.sx.ln().abs(), m.sx.abs().ln().abs()),
            Dimension::Sy => (gt.sy.ln().abs(), m.sy.abs().ln().abs()),
            Dimension::Theta => (gt.theta, m.theta_hat),
            Dimension::Tx => (gt.tx, m.tx),
            Dimension::Ty => (gt.ty, m.ty),
            Dimension::A => (gt.a, m.a_hat),
        }
    }

    /// Nonnegative ground-truth magnitude; this is what MSE is compared with.
    pub fn magnitude(self, gt: &GroundTruthDifference) -> f64 {
        match self {
            Dimension::D => gt.d,
            Dimension::Sx => gt.sx.ln().abs(),
            Dimension::Sy => gt.sy.ln().abs(),
            Dimension::Theta => gt.theta.abs(),
            Dimension::Tx => gt.tx.abs(),
            Dimension::Ty => gt.ty.abs(),
            Dimension::A => gt.a,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct EvaluationConfig {
    pub pipeline: PipelineConfig,
    /// Worker threads; `None` uses every available core.
    pub jobs: Option<usize>,
    /// Recorded in the run summary.
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairFailure {
    pub kind: &'static str,
    pub message: String,
}

#[derive(Debug, Clone)]
pub struct PairOutcome {
    pub index: usize,
    pub gt: GroundTruthDifference,
    pub result: std::result::Result<DifferenceReport, PairFailure>,
}

#[derive(Debug, Clone)]
pub struct EvaluationRun {
    pub manifest: String,
    pub seed: u64,
    pub tps_lambda: f64,
    pub outcomes: Vec<PairOutcome>,
}

impl EvaluationRun {
    pub fn failures(&self) -> usize {
        self.outcomes.iter().filter(|o| o.result.is_err()).count()
    }

    pub fn is_valid(&self) -> bool {
        !self.outcomes.is_empty()
            && (self.failures() as f64) <= MAX_FAILURE_RATE * self.outcomes.len() as f64
    }

    fn successes(&self) -> impl Iterator<Item = (&PairOutcome, &DifferenceReport)> {
        self.outcomes
            .iter()
            .filter_map(|o| o.result.as_ref().ok().map(|r| (o, r)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorrelationRow {
    pub dimension: Dimension,
    /// `r(|GT|, MSE)`.
    pub r_mse: Option<f64>,
    /// `r(GT, measure)` under [`Dimension::primary`].
    pub r_ours: Option<f64>,
    /// `r(|GT|, |measure|)`, for the signed dimensions only.
    pub r_ours_magnitude: Option<f64>,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorrelationTable {
    pub rows: Vec<CorrelationRow>,
}

impl CorrelationTable {
    pub fn row(&self, dim: Dimension) -> &CorrelationRow {
        self.rows
            .iter()
            .find(|r| r.dimension == dim)
            .expect("every dimension has a row")
    }

    /// `dimension,r_mse,r_ours,n`
    pub fn to_csv(&self) -> String {
        let mut s = String::from("dimension,r_mse,r_ours,n\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{}",
                r.dimension.name(),
                num(r.r_mse),
                num(r.r_ours),
                r.n
            );
        }
        s
    }

    /// Adds the magnitude pairing and states the pairing used per row.
    pub fn to_detail_csv(&self) -> String {
        let mut s = String::from("dimension,pairing,r_mse,r_ours,r_ours_magnitude,n\n");
        for r in &self.rows {
            let pairing = match r.dimension {
                Dimension::Sx | Dimension::Sy => "abs_log_ratio",
                d if d.is_signed() => "signed",
                _ => "raw",
            };
            let _ = writeln!(
                s,
                "{},{},{},{},{},{}",
                r.dimension.name(),
                pairing,
                num(r.r_mse),
                num(r.r_ours),
                num(r.r_ours_magnitude),
                r.n
            );
        }
        s
    }

    /// Two-decimal text table laid out as rows MSE / Ours over the seven
    /// dimensions.
    pub fn to_text(&self) -> String {
        let cell = |v: Option<f64>| v.map_or_else(|| "   -".to_string(), |x| format!("{x:5.2}"));
        let mut s = format!("{:<10}", "");
        for r in &self.rows {
            let _ = write!(s, "{:>7}", r.dimension.label());
        }
        s.push('\n');
        let lines: [(&str, RowValue); 3] = [
            ("MSE", |r| r.r_mse),
            ("Ours", |r| r.r_ours),
            ("Ours |.|", |r| r.r_ours_magnitude.or(r.r_ours)),
        ];
        for (name, f) in lines.iter() {
            let _ = write!(s, "{name:<10}");
            for r in &self.rows {
                let _ = write!(s, "{:>7}", cell(f(r)));
            }
            s.push('\n');
        }
        let _ = write!(s, "{:<10}", "n");
        for r in &self.rows {
            let _ = write!(s, "{:>7}", r.n);
        }
        s.push('\n');
        s
    }
}

type RowValue = fn(&CorrelationRow) -> Option<f64>;

fn num(v: Option<f64>) -> String {
    v.map_or_else(|| "NaN".to_string(), |x| x.to_string())
}

pub fn correlation_table(run: &EvaluationRun) -> CorrelationTable {
    let rows = Dimension::ALL
        .iter()
        .map(|&dim| {
            let mut gt = Vec::new();
            let mut ours = Vec::new();
            let mut gt_mag = Vec::new();
            let mut ours_mag = Vec::new();
            let mut mse = Vec::new();
            for (o, r) in run.successes() {
                let (g, m) = dim.primary(&o.gt, r);
                gt.push(g);
                ours.push(m);
                gt_mag.push(dim.magnitude(&o.gt));
                ours_mag.push(m.abs());
                mse.push(r.baseline_mse);
            }
            CorrelationRow {
                dimension: dim,
                r_mse: pearson(&gt_mag, &mse).ok(),
                r_ours: pearson(&gt, &ours).ok(),
                r_ours_magnitude: if dim.is_signed() {
                    pearson(&gt_mag, &ours_mag).ok()
                } else {
                    None
                },
                n: gt.len(),
            }
        })
        .collect();
    CorrelationTable { rows }
}

/// Per-dimension scatter data: raw and `[0, 1]`-standardized columns.
#[derive(Debug, Clone, PartialEq)]
pub struct Scatter {
    pub dimension: Dimension,
    pub index: Vec<usize>,
    pub gt: Vec<f64>,
    pub measure: Vec<f64>,
    pub mse: Vec<f64>,
}

impl Scatter {
    pub fn to_csv(&self) -> String {
        let unit = |v: &[f64]| standardize_unit(v).unwrap_or_else(|_| vec![f64::NAN; v.len()]);
        let (g, m, e) = (unit(&self.gt), unit(&self.measure), unit(&self.mse));
        let mut s = String::from("pair,gt,measure,mse,gt_unit,measure_unit,mse_unit\n");
        for k in 0..self.gt.len() {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{}",
                self.index[k], self.gt[k], self.measure[k], self.mse[k], g[k], m[k], e[k]
            );
        }
        s
    }

    /// `log10` of the raw columns, floored at 1e-12.
    pub fn to_loglog_csv(&self) -> String {
        let lg = |v: f64| v.max(1e-12).log10();
        let mut s = String::from("pair,log10_gt,log10_measure,log10_mse\n");
        for k in 0..self.gt.len() {
            let _ = writeln!(
                s,
                "{},{},{},{}",
                self.index[k],
                lg(self.gt[k]),
                lg(self.measure[k]),
                lg(self.mse[k])
            );
        }
        s
    }
}

pub fn scatter(run: &EvaluationRun, dim: Dimension) -> Scatter {
    let mut out = Scatter {
        dimension: dim,
        index: Vec::new(),
        gt: Vec::new(),
        measure: Vec::new(),
        mse: Vec::new(),
    };
    for (o, r) in run.successes() {
        let (g, m) = dim.primary(&o.gt, r);
        out.index.push(o.index);
        out.gt.push(g);
        out.measure.push(m);
        out.mse.push(r.baseline_mse);
    }
    out
}

fn load_pair(manifest: &DatasetManifest, e: &ManifestEntry) -> Result<PairInput> {
    Ok(PairInput {
        source: read_image(manifest.resolve(&e.source_image))?,
        source_mask: read_mask(manifest.resolve(&e.source_mask))?,
        target: read_image(manifest.resolve(&e.target_image))?,
        correspondences: Some(Correspondences::load(manifest.resolve(&e.keypoints))?),
        imported: None,
    })
}

fn run_pair(manifest: &DatasetManifest, e: &ManifestEntry, cfg: &PipelineConfig) -> PairOutcome {
    let result = load_pair(manifest, e)
        .and_then(|input| explain_pair(&input, cfg))
        .map(|x| x.report)
        .map_err(|err| PairFailure {
            kind: err.kind(),
            message: err.to_string(),
        });
    PairOutcome {
        index: e.index,
        gt: e.gt,
        result,
    }
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub run: EvaluationRun,
    pub table: CorrelationTable,
    pub scatters: Vec<Scatter>,
}

/// Runs the pipeline on every manifest pair with its oracle keypoints and
/// builds the correlation table. Pair failures are recorded, not fatal.
pub fn evaluate(manifest: &DatasetManifest, cfg: &EvaluationConfig) -> Result<Evaluation> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(j) = cfg.jobs {
        builder = builder.num_threads(j.max(1));
    }
    let pool = builder
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    let outcomes: Vec<PairOutcome> = pool.install(|| {
        manifest
            .entries
            .par_iter()
            .map(|e| run_pair(manifest, e, &cfg.pipeline))
            .collect()
    });
    let run = EvaluationRun {
        manifest: manifest.path().display().to_string(),
        seed: cfg.seed,
        tps_lambda: cfg.pipeline.tps_lambda,
        outcomes,
    };
    let table = correlation_table(&run);
    let scatters = Dimension::ALL.iter().map(|d| scatter(&run, *d)).collect();
    Ok(Evaluation {
        run,
        table,
        scatters,
    })
}

#[derive(Serialize)]
struct RunSummary<'a> {
    manifest: &'a str,
    seed: u64,
    tps_lambda: f64,
    pairs: usize,
    failures: usize,
    valid: bool,
    table: &'a CorrelationTable,
}

#[derive(Serialize)]
struct OutcomeLine<'a> {
    index: usize,
    gt: &'a GroundTruthDifference,
    #[serde(skip_serializing_if = "Option::is_none")]
    report: Option<serde_json::Value>,
    #[serde(skip_serializing_if = "Option::is_none")]
    failure: Option<&'a PairFailure>,
}

impl Evaluation {
    /// Writes `correlations.csv`, `correlations_detail.csv`, `table.txt`,
    /// `scatter_<dim>.csv`, `scatter_a_loglog.csv`, `reports.jsonl` and
    /// `run.json` into `out_dir`.
    pub fn write_outputs(&self, out_dir: impl AsRef<Path>) -> Result<()> {
        let out = out_dir.as_ref();
        fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
        let put = |name: &str, body: &str| {
            let p = out.join(name);
            fs::write(&p, body).map_err(|e| Error::io(&p, e))
        };
        put("correlations.csv", &self.table.to_csv())?;
        put("correlations_detail.csv", &self.table.to_detail_csv())?;
        put("table.txt", &self.table.to_text())?;
        for s in &self.scatters {
            put(&format!("scatter_{}.csv", s.dimension.name()), &s.to_csv())?;
            if s.dimension == Dimension::A {
                put("scatter_a_loglog.csv", &s.to_loglog_csv())?;
            }
        }
        let mut lines = String::new();
        for o in &self.run.outcomes {
            let line = OutcomeLine {
                index: o.index,
                gt: &o.gt,
                report: o
                    .result
                    .as_ref()
                    .ok()
                    .map(|r| serde_json::from_str(&r.to_json()).expect("report is valid json")),
                failure: o.result.as_ref().err(),
            };
            lines.push_str(&serde_json::to_string(&line).expect("outcome serializes"));
            lines.push('\n');
        }
        put("reports.jsonl", &lines)?;
        let summary = RunSummary {
            manifest: &self.run.manifest,
            seed: self.run.seed,
            tps_lambda: self.run.tps_lambda,
            pairs: self.run.outcomes.len(),
            failures: self.run.failures(),
            valid: self.run.is_valid(),
            table: &self.table,
        };
        put(
            "run.json",
            &serde_json::to_string_pretty(&summary).expect("summary serializes"),
        )
    }
}
